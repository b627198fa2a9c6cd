//! Embedding corpus: speakers and their utterance-level embeddings, with a
//! binary and a text interchange format.
//!
//! Binary layout (all little-endian): magic `HHEB`, version u16, dimension
//! u32, record count u64; per record a u32-length-prefixed UTF-8 speaker id,
//! a u32-length-prefixed UTF-8 utterance id, and `dimension` f32 values.
//! The text format holds one record per line:
//! `speaker_id<TAB>utterance_id<TAB>v0,v1,...` with full-precision f64s.
//!
//! Loaders promote stored values to f64 and re-normalize any record whose
//! norm drifted beyond 1e-6 (f32 quantization keeps unit vectors within
//! ~1e-7, so clean round trips stay bit-exact).

use std::collections::BTreeMap;
use std::path::Path;

use crate::bytes::{push_f32, push_str, push_u16, push_u32, push_u64, ByteReader};
use crate::embedding::{l2_normalize, EmbeddingVector};
use crate::error::{Error, Result};

const CORPUS_MAGIC: &[u8; 4] = b"HHEB";
const CORPUS_VERSION: u16 = 1;

/// Embeddings whose norm deviates from 1 by more than this are re-normalized
/// on load and rejected by [`Corpus::add_utterance`].
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Utterance-level embeddings grouped by speaker. Speakers iterate in
/// lexicographic id order; utterances keep insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    dimension: usize,
    speakers: BTreeMap<String, Vec<(String, EmbeddingVector)>>,
}

impl Corpus {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Config("corpus dimension must be positive".into()));
        }
        Ok(Self { dimension, speakers: BTreeMap::new() })
    }

    /// Adds one utterance. The embedding must match the corpus dimension and
    /// be unit-norm within [`NORM_TOLERANCE`]; utterance ids must be unique
    /// per speaker.
    pub fn add_utterance(
        &mut self,
        speaker_id: &str,
        utterance_id: &str,
        embedding: EmbeddingVector,
    ) -> Result<()> {
        if embedding.dim() != self.dimension {
            return Err(Error::Dimension { expected: self.dimension, actual: embedding.dim() });
        }
        let norm = embedding.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Data(format!(
                "embedding '{speaker_id}/{utterance_id}' has norm {norm}, expected 1"
            )));
        }
        let utterances = self.speakers.entry(speaker_id.to_string()).or_default();
        if utterances.iter().any(|(id, _)| id == utterance_id) {
            return Err(Error::Data(format!(
                "duplicate utterance id '{utterance_id}' for speaker '{speaker_id}'"
            )));
        }
        utterances.push((utterance_id.to_string(), embedding));
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn speaker_count(&self) -> usize {
        self.speakers.len()
    }

    pub fn utterance_count(&self) -> usize {
        self.speakers.values().map(Vec::len).sum()
    }

    /// Speaker ids in lexicographic order.
    pub fn speaker_ids(&self) -> Vec<&str> {
        self.speakers.keys().map(String::as_str).collect()
    }

    pub fn speakers(
        &self,
    ) -> impl Iterator<Item = (&str, &[(String, EmbeddingVector)])> {
        self.speakers.iter().map(|(id, utts)| (id.as_str(), utts.as_slice()))
    }

    pub fn utterances(&self, speaker_id: &str) -> Result<&[(String, EmbeddingVector)]> {
        self.speakers
            .get(speaker_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::NotFound(format!("speaker '{speaker_id}'")))
    }

    pub fn embedding(&self, speaker_id: &str, utterance_id: &str) -> Result<&EmbeddingVector> {
        self.utterances(speaker_id)?
            .iter()
            .find(|(id, _)| id == utterance_id)
            .map(|(_, e)| e)
            .ok_or_else(|| {
                Error::NotFound(format!("utterance '{utterance_id}' of speaker '{speaker_id}'"))
            })
    }

    fn promote(values: Vec<f64>, context: &str) -> Result<EmbeddingVector> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm <= 0.0 {
            return Err(Error::Data(format!("record '{context}' is not normalizable")));
        }
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            l2_normalize(&values)
        } else {
            EmbeddingVector::from_values(values)
        }
    }

    pub fn to_binary_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CORPUS_MAGIC);
        push_u16(&mut buf, CORPUS_VERSION);
        push_u32(&mut buf, self.dimension as u32);
        push_u64(&mut buf, self.utterance_count() as u64);
        for (speaker_id, utterances) in &self.speakers {
            for (utterance_id, embedding) in utterances {
                push_str(&mut buf, speaker_id);
                push_str(&mut buf, utterance_id);
                for &v in embedding.values() {
                    push_f32(&mut buf, v as f32);
                }
            }
        }
        buf
    }

    pub fn from_binary_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != CORPUS_MAGIC {
            return Err(Error::Format("bad corpus magic, expected HHEB".into()));
        }
        let version = r.read_u16()?;
        if version != CORPUS_VERSION {
            return Err(Error::Format(format!("unsupported corpus version {version}")));
        }
        let dimension = r.read_u32()? as usize;
        let count = r.read_u64()?;
        let mut corpus = Corpus::new(dimension)?;
        for _ in 0..count {
            let speaker_id = r.read_string()?;
            let utterance_id = r.read_string()?;
            let mut values = Vec::with_capacity(dimension);
            for _ in 0..dimension {
                values.push(r.read_f32()? as f64);
            }
            let context = format!("{speaker_id}/{utterance_id}");
            corpus.add_utterance(&speaker_id, &utterance_id, Self::promote(values, &context)?)?;
        }
        r.finish()?;
        Ok(corpus)
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_binary_bytes())?;
        Ok(())
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_binary_bytes(&std::fs::read(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (speaker_id, utterances) in &self.speakers {
            for (utterance_id, embedding) in utterances {
                out.push_str(speaker_id);
                out.push('\t');
                out.push_str(utterance_id);
                out.push('\t');
                let mut first = true;
                for &v in embedding.values() {
                    if !first {
                        out.push(',');
                    }
                    first = false;
                    out.push_str(&format!("{v}"));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut corpus: Option<Corpus> = None;
        for (line_no, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.splitn(3, '\t');
            let (speaker_id, utterance_id, values) =
                match (fields.next(), fields.next(), fields.next()) {
                    (Some(s), Some(u), Some(v)) => (s, u, v),
                    _ => {
                        return Err(Error::Format(format!(
                            "line {}: expected 3 tab-separated fields",
                            line_no + 1
                        )))
                    }
                };
            let values: Vec<f64> = values
                .split(',')
                .map(|v| {
                    v.parse::<f64>().map_err(|_| {
                        Error::Format(format!("line {}: bad float '{v}'", line_no + 1))
                    })
                })
                .collect::<Result<_>>()?;
            if corpus.is_none() {
                corpus = Some(Corpus::new(values.len())?);
            }
            let context = format!("{speaker_id}/{utterance_id}");
            let embedding = Self::promote(values, &context)?;
            corpus.as_mut().unwrap().add_utterance(speaker_id, utterance_id, embedding)?;
        }
        corpus.ok_or_else(|| Error::Format("text corpus has no records".into()))
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load_text(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn sample_corpus(speakers: usize, utterances: usize, dim: usize, seed: u64) -> Corpus {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut corpus = Corpus::new(dim).unwrap();
        for s in 0..speakers {
            for u in 0..utterances {
                let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                corpus
                    .add_utterance(
                        &format!("s{s:03}"),
                        &format!("u{u:03}"),
                        l2_normalize(&v).unwrap(),
                    )
                    .unwrap();
            }
        }
        corpus
    }

    #[test]
    fn add_validates_dimension_and_norm() {
        let mut c = Corpus::new(3).unwrap();
        let unit = l2_normalize(&[1.0, 2.0, 3.0]).unwrap();
        c.add_utterance("a", "u0", unit.clone()).unwrap();
        let wrong_dim = l2_normalize(&[1.0, 0.0]).unwrap();
        assert!(matches!(
            c.add_utterance("a", "u1", wrong_dim),
            Err(Error::Dimension { .. })
        ));
        let not_unit = EmbeddingVector::from_values(vec![1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(c.add_utterance("a", "u1", not_unit), Err(Error::Data(_))));
        assert!(matches!(c.add_utterance("a", "u0", unit), Err(Error::Data(_))));
    }

    #[test]
    fn lookup_by_speaker_and_utterance() {
        let c = sample_corpus(3, 2, 4, 1);
        assert_eq!(c.speaker_count(), 3);
        assert_eq!(c.utterance_count(), 6);
        assert_eq!(c.speaker_ids(), vec!["s000", "s001", "s002"]);
        assert!(c.embedding("s001", "u001").is_ok());
        assert!(matches!(c.embedding("s009", "u000"), Err(Error::NotFound(_))));
        assert!(matches!(c.embedding("s001", "u009"), Err(Error::NotFound(_))));
    }

    #[test]
    fn binary_round_trip_preserves_structure_at_f32_width() {
        let c = sample_corpus(4, 3, 8, 2);
        let bytes = c.to_binary_bytes();
        let back = Corpus::from_binary_bytes(&bytes).unwrap();
        assert_eq!(back.dimension(), c.dimension());
        assert_eq!(back.utterance_count(), c.utterance_count());
        for (speaker, utts) in c.speakers() {
            for (utt, embedding) in utts {
                let reloaded = back.embedding(speaker, utt).unwrap();
                for (a, b) in embedding.values().iter().zip(reloaded.values()) {
                    assert_eq!((*a as f32).to_bits(), (*b as f32).to_bits());
                }
            }
        }
    }

    #[test]
    fn binary_file_round_trip_is_byte_identical() {
        let c = sample_corpus(4, 3, 8, 3);
        let bytes = c.to_binary_bytes();
        let reloaded = Corpus::from_binary_bytes(&bytes).unwrap();
        assert_eq!(reloaded.to_binary_bytes(), bytes);
    }

    #[test]
    fn text_round_trip_is_lossless() {
        let c = sample_corpus(3, 4, 6, 4);
        let text = c.to_text();
        let back = Corpus::from_text(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn binary_loader_renormalizes_drifted_records() {
        let mut c = Corpus::new(3).unwrap();
        c.add_utterance("a", "u0", l2_normalize(&[3.0, 4.0, 12.0]).unwrap()).unwrap();
        let mut bytes = c.to_binary_bytes();
        let n = bytes.len();
        bytes[n - 12..n - 8].copy_from_slice(&2.0f32.to_le_bytes());
        let back = Corpus::from_binary_bytes(&bytes).unwrap();
        let e = back.embedding("a", "u0").unwrap();
        let norm: f64 = e.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn malformed_binary_inputs_are_rejected() {
        let c = sample_corpus(2, 2, 4, 5);
        let bytes = c.to_binary_bytes();
        assert!(Corpus::from_binary_bytes(&bytes[..bytes.len() - 2]).is_err());
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(Corpus::from_binary_bytes(&wrong_magic).is_err());
        let mut trailing = bytes;
        trailing.push(0);
        assert!(Corpus::from_binary_bytes(&trailing).is_err());
    }

    #[test]
    fn malformed_text_inputs_are_rejected() {
        assert!(matches!(Corpus::from_text(""), Err(Error::Format(_))));
        assert!(Corpus::from_text("a\tu0\n").is_err());
        assert!(Corpus::from_text("a\tu0\t1.0,oops\n").is_err());
        let mismatched = "a\tu0\t0.6,0.8\nb\tu0\t1.0,0.0,0.0\n";
        assert!(matches!(
            Corpus::from_text(mismatched),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn nan_embeddings_are_rejected_on_load() {
        let text = format!("a\tu0\t{},0.0\n", f64::NAN);
        assert!(Corpus::from_text(&text).is_err());
    }
}
