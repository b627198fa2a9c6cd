//! The household-adapted scoring network: synchronous input dropout, an
//! affine-ReLU projection to a lower dimension, a Euclidean local score, and
//! logistic fusion with the global cosine score.
//!
//! Scoring chain for a pair (e1, e2):
//!
//! 1. `s_global` = cosine similarity of the raw embeddings (never masked).
//! 2. Each embedding is passed through the shared dropout mask (training
//!    only) and the affine-ReLU projection.
//! 3. `s_local` = Euclidean distance between the two projected vectors.
//! 4. `s_fused` = sigmoid(w_g * s_global + w_l * s_local + bias).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::bytes::{self, ByteReader};
use crate::embedding::{cosine_similarity, euclidean_distance, EmbeddingVector};
use crate::error::{Error, Result};

const MODEL_MAGIC: &[u8; 4] = b"HHSM";
const MODEL_VERSION_SINGLE: u16 = 1;
const MODEL_VERSION_LAYERED: u16 = 2;

/// One affine projection stage, applied as `ReLU(W x + B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub(crate) weights: Vec<f64>,
    pub(crate) bias: Vec<f64>,
}

impl AffineLayer {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config("layer dimensions must be positive".into()));
        }
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Dimension {
                expected: in_dim * out_dim,
                actual: weights.len(),
            });
        }
        Ok(Self { in_dim, out_dim, weights, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// `W x + B` without the activation.
    pub(crate) fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (row, o) in out.iter_mut().enumerate() {
            let w = &self.weights[row * self.in_dim..(row + 1) * self.in_dim];
            let mut acc = 0.0;
            for (wi, xi) in w.iter().zip(x) {
                acc += wi * xi;
            }
            *o += acc;
        }
        out
    }
}

/// Per-household scoring model: projection layers plus fusion parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholdScoringModel {
    input_dim: usize,
    pub(crate) layers: Vec<AffineLayer>,
    pub(crate) fusion_global_weight: f64,
    pub(crate) fusion_local_weight: f64,
    pub(crate) fusion_bias: f64,
}

impl HouseholdScoringModel {
    /// Builds a model from explicit parameters, validating shapes and
    /// finiteness. The final projection dimension must be positive and
    /// strictly below the input dimension.
    pub fn from_parts(
        input_dim: usize,
        layers: Vec<AffineLayer>,
        fusion_global_weight: f64,
        fusion_local_weight: f64,
        fusion_bias: f64,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("model needs at least one projection layer".into()));
        }
        let mut expected_in = input_dim;
        for layer in &layers {
            if layer.in_dim != expected_in {
                return Err(Error::Dimension {
                    expected: expected_in,
                    actual: layer.in_dim,
                });
            }
            expected_in = layer.out_dim;
        }
        let adapted = layers.last().unwrap().out_dim;
        if adapted == 0 || adapted >= input_dim {
            return Err(Error::AdaptedDim { input: input_dim, adapted });
        }
        let finite = layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .chain([&fusion_global_weight, &fusion_local_weight, &fusion_bias])
            .all(|p| p.is_finite());
        if !finite {
            return Err(Error::Data("model contains a non-finite parameter".into()));
        }
        Ok(Self {
            input_dim,
            layers,
            fusion_global_weight,
            fusion_local_weight,
            fusion_bias,
        })
    }

    /// Random single-layer initialization: weights uniform in
    /// `[-1/sqrt(D), 1/sqrt(D)]`, zero bias, fusion (1, -1, 0).
    ///
    /// The fusion signs encode the prior that a larger cosine points to the
    /// same speaker while a larger adapted-space distance points to a
    /// different one.
    pub fn init(input_dim: usize, adapted_dim: usize, seed: u64) -> Result<Self> {
        Self::init_layered(input_dim, &[adapted_dim], seed)
    }

    /// Random initialization with a chain of projection dimensions
    /// (fan-in-scaled uniform weights per layer).
    pub fn init_layered(input_dim: usize, dims: &[usize], seed: u64) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Config("model needs at least one projection layer".into()));
        }
        let adapted = *dims.last().unwrap();
        if adapted == 0 || adapted >= input_dim {
            return Err(Error::AdaptedDim { input: input_dim, adapted });
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len());
        let mut in_dim = input_dim;
        for &out_dim in dims {
            if out_dim == 0 {
                return Err(Error::Config("layer dimensions must be positive".into()));
            }
            let bound = 1.0 / (in_dim as f64).sqrt();
            let weights = (0..in_dim * out_dim)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            layers.push(AffineLayer::new(in_dim, out_dim, weights, vec![0.0; out_dim])?);
            in_dim = out_dim;
        }
        Self::from_parts(input_dim, layers, 1.0, -1.0, 0.0)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Dimension of the adapted embedding (output of the last layer).
    pub fn adapted_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    pub fn fusion_global_weight(&self) -> f64 {
        self.fusion_global_weight
    }

    pub fn fusion_local_weight(&self) -> f64 {
        self.fusion_local_weight
    }

    pub fn fusion_bias(&self) -> f64 {
        self.fusion_bias
    }

    /// Projects a (possibly masked) embedding into the adapted space.
    pub fn adapt(&self, e_star: &[f64]) -> Result<Vec<f64>> {
        if e_star.len() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                actual: e_star.len(),
            });
        }
        let mut x = self.layers[0].affine(e_star);
        relu_in_place(&mut x);
        for layer in &self.layers[1..] {
            x = layer.affine(&x);
            relu_in_place(&mut x);
        }
        Ok(x)
    }

    /// Fuses the global and local scores through the logistic output.
    pub fn fuse(&self, s_global: f64, s_local: f64) -> f64 {
        sigmoid(
            self.fusion_global_weight * s_global
                + self.fusion_local_weight * s_local
                + self.fusion_bias,
        )
    }

    /// Scores a pair of unit-norm embeddings.
    ///
    /// The global score always comes from the unmasked inputs; the mask (one
    /// mask, applied to both members) affects only the adaptation path. At
    /// inference no mask is passed.
    pub fn score_pair(
        &self,
        e1: &EmbeddingVector,
        e2: &EmbeddingVector,
        mask: Option<&DropoutMask>,
    ) -> Result<ScoreBreakdown> {
        let s_global = cosine_similarity(e1, e2)?;
        let (a1, a2) = match mask {
            Some(m) => (
                self.adapt(&apply_mask(e1, m)?)?,
                self.adapt(&apply_mask(e2, m)?)?,
            ),
            None => (self.adapt(e1.values())?, self.adapt(e2.values())?),
        };
        let s_local = euclidean_distance(&a1, &a2)?;
        Ok(ScoreBreakdown {
            s_global,
            s_local,
            s_fused: self.fuse(s_global, s_local),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MODEL_MAGIC);
        if self.layers.len() == 1 {
            let layer = &self.layers[0];
            bytes::push_u16(&mut buf, MODEL_VERSION_SINGLE);
            bytes::push_u32(&mut buf, self.input_dim as u32);
            bytes::push_u32(&mut buf, layer.out_dim as u32);
            for &w in &layer.weights {
                bytes::push_f64(&mut buf, w);
            }
            for &b in &layer.bias {
                bytes::push_f64(&mut buf, b);
            }
        } else {
            bytes::push_u16(&mut buf, MODEL_VERSION_LAYERED);
            bytes::push_u32(&mut buf, self.input_dim as u32);
            bytes::push_u32(&mut buf, self.layers.len() as u32);
            for layer in &self.layers {
                bytes::push_u32(&mut buf, layer.out_dim as u32);
                for &w in &layer.weights {
                    bytes::push_f64(&mut buf, w);
                }
                for &b in &layer.bias {
                    bytes::push_f64(&mut buf, b);
                }
            }
        }
        bytes::push_f64(&mut buf, self.fusion_global_weight);
        bytes::push_f64(&mut buf, self.fusion_local_weight);
        bytes::push_f64(&mut buf, self.fusion_bias);
        buf
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::Format("not a scoring-model file (bad magic)".into()));
        }
        let version = r.read_u16()?;
        let input_dim = r.read_u32()? as usize;
        let mut layers = Vec::new();
        match version {
            MODEL_VERSION_SINGLE => {
                let out_dim = r.read_u32()? as usize;
                layers.push(read_layer(&mut r, input_dim, out_dim)?);
            }
            MODEL_VERSION_LAYERED => {
                let count = r.read_u32()? as usize;
                if count == 0 {
                    return Err(Error::Format("model file declares zero layers".into()));
                }
                let mut in_dim = input_dim;
                for _ in 0..count {
                    let out_dim = r.read_u32()? as usize;
                    let layer = read_layer(&mut r, in_dim, out_dim)?;
                    in_dim = layer.out_dim();
                    layers.push(layer);
                }
            }
            v => return Err(Error::Format(format!("unsupported model version {v}"))),
        }
        let w_global = r.read_f64()?;
        let w_local = r.read_f64()?;
        let bias = r.read_f64()?;
        r.finish()?;
        Self::from_parts(input_dim, layers, w_global, w_local, bias)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn read_layer(r: &mut ByteReader, in_dim: usize, out_dim: usize) -> Result<AffineLayer> {
    if in_dim == 0 || out_dim == 0 {
        return Err(Error::Format("model file declares a zero dimension".into()));
    }
    if in_dim.saturating_mul(out_dim) > (1 << 30) {
        return Err(Error::Format("model file declares an implausibly large layer".into()));
    }
    let mut weights = Vec::with_capacity(in_dim * out_dim);
    for _ in 0..in_dim * out_dim {
        weights.push(r.read_f64()?);
    }
    let mut bias = Vec::with_capacity(out_dim);
    for _ in 0..out_dim {
        bias.push(r.read_f64()?);
    }
    AffineLayer::new(in_dim, out_dim, weights, bias)
}

fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Numerically stable logistic function, clamped into the open interval
/// (0, 1) so downstream logs and comparisons never see exact 0 or 1.
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Component-keep mask shared by both members of a training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    kept: Vec<bool>,
    rate: f64,
}

impl DropoutMask {
    /// Mask that keeps every component (rate 0); scoring with it is
    /// bit-identical to scoring without a mask.
    pub fn all_kept(dim: usize) -> Self {
        Self { kept: vec![true; dim], rate: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.kept.len()
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn kept(&self) -> &[bool] {
        &self.kept
    }

    /// Inverted-dropout factor applied to kept components.
    pub fn scale(&self) -> f64 {
        1.0 / (1.0 - self.rate)
    }
}

/// Samples a mask keeping each component independently with probability
/// `1 - rate`.
pub fn sample_mask(dim: usize, rate: f64, rng: &mut impl Rng) -> Result<DropoutMask> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    let kept = (0..dim).map(|_| rng.random::<f64>() >= rate).collect();
    Ok(DropoutMask { kept, rate })
}

/// Zeroes dropped components and scales kept ones by `1/(1 - rate)`, so the
/// expected value of each component is unchanged.
pub fn apply_mask(e: &EmbeddingVector, mask: &DropoutMask) -> Result<Vec<f64>> {
    if e.dim() != mask.dim() {
        return Err(Error::Dimension {
            expected: mask.dim(),
            actual: e.dim(),
        });
    }
    let scale = mask.scale();
    Ok(e.values()
        .iter()
        .zip(mask.kept())
        .map(|(&v, &keep)| if keep { v * scale } else { 0.0 })
        .collect())
}

/// The three scores produced for one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBreakdown {
    /// Cosine similarity of the raw embeddings, in [-1, 1].
    pub s_global: f64,
    /// Euclidean distance in the adapted space, >= 0.
    pub s_local: f64,
    /// Logistic fusion of the two, strictly inside (0, 1).
    pub s_fused: f64,
}

/// Cosine similarity mapped affinely onto [0, 1]; the unadapted reference
/// scorer.
pub fn baseline_score(e1: &EmbeddingVector, e2: &EmbeddingVector) -> Result<f64> {
    Ok((cosine_similarity(e1, e2)? + 1.0) / 2.0)
}
