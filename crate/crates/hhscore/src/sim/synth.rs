//! Synthetic embedding corpus generator: spherical speaker clusters whose
//! identity lives in a low-dimensional subspace, plus a shared nuisance
//! component in the complementary subspace that mimics speakers recorded in
//! the same acoustic environment.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::embedding::l2_normalize;
use crate::error::{Error, Result};
use crate::sim::corpus::Corpus;

/// Parameters of the synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub speaker_count: usize,
    pub utterances_per_speaker: usize,
    pub dimension: usize,
    /// Dimension of the random subspace holding speaker identity directions.
    pub identity_subspace_dim: usize,
    /// Expected norm of the isotropic per-utterance noise vector.
    pub within_speaker_noise: f64,
    /// Norm of the constant nuisance component added to every utterance of a
    /// speaker, directed in the complement of the identity subspace.
    pub household_nuisance_scale: f64,
    /// Consecutive speakers in groups of this size share one nuisance
    /// direction; 1 gives every speaker its own direction.
    pub nuisance_group_size: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            speaker_count: 120,
            utterances_per_speaker: 30,
            dimension: 64,
            identity_subspace_dim: 8,
            within_speaker_noise: 0.4,
            household_nuisance_scale: 0.6,
            nuisance_group_size: 8,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.speaker_count == 0 || self.utterances_per_speaker == 0 {
            return Err(Error::Config("speaker and utterance counts must be positive".into()));
        }
        if self.dimension == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        if self.identity_subspace_dim == 0 || self.identity_subspace_dim > self.dimension {
            return Err(Error::Config(format!(
                "identity subspace dimension must be in [1, {}], got {}",
                self.dimension, self.identity_subspace_dim
            )));
        }
        for (name, v) in [
            ("within_speaker_noise", self.within_speaker_noise),
            ("household_nuisance_scale", self.household_nuisance_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.nuisance_group_size == 0 {
            return Err(Error::Config("nuisance group size must be at least 1".into()));
        }
        if self.identity_subspace_dim == self.dimension && self.household_nuisance_scale > 0.0 {
            return Err(Error::Config(
                "nuisance scale must be 0 when the identity subspace fills the whole space"
                    .into(),
            ));
        }
        Ok(())
    }
}

fn gaussian_vector(dim: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
        for (x, y) in v.iter_mut().zip(b) {
            *x -= dot * y;
        }
    }
}

/// Random orthonormal set of `count` vectors in `dim` dimensions.
fn orthonormal_basis(dim: usize, count: usize, rng: &mut ChaCha12Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian_vector(dim, rng);
        project_out(&mut v, &basis);
        project_out(&mut v, &basis);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for x in &mut v {
                *x /= norm;
            }
            basis.push(v);
        }
    }
    basis
}

/// Unit vector orthogonal to every basis vector.
fn complement_direction(dim: usize, basis: &[Vec<f64>], rng: &mut ChaCha12Rng) -> Vec<f64> {
    loop {
        let mut v = gaussian_vector(dim, rng);
        project_out(&mut v, basis);
        project_out(&mut v, basis);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for x in &mut v {
                *x /= norm;
            }
            return v;
        }
    }
}

/// Generates the corpus described by the config. Deterministic by seed.
pub fn generate_synthetic_corpus(cfg: &SyntheticConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let identity_basis = orthonormal_basis(cfg.dimension, cfg.identity_subspace_dim, &mut rng);
    let group_count = cfg.speaker_count.div_ceil(cfg.nuisance_group_size);
    let nuisance_directions: Vec<Vec<f64>> = (0..group_count)
        .map(|_| {
            if cfg.household_nuisance_scale == 0.0 {
                vec![0.0; cfg.dimension]
            } else {
                complement_direction(cfg.dimension, &identity_basis, &mut rng)
            }
        })
        .collect();

    let mut corpus = Corpus::new(cfg.dimension)?;
    let noise_sigma = cfg.within_speaker_noise / (cfg.dimension as f64).sqrt();
    for s in 0..cfg.speaker_count {
        let speaker_id = format!("s{s:05}");
        let mean = loop {
            let coeffs = gaussian_vector(cfg.identity_subspace_dim, &mut rng);
            let mut m = vec![0.0; cfg.dimension];
            for (c, b) in coeffs.iter().zip(&identity_basis) {
                for (mi, bi) in m.iter_mut().zip(b) {
                    *mi += c * bi;
                }
            }
            let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for x in &mut m {
                    *x /= norm;
                }
                break m;
            }
        };
        let nuisance = &nuisance_directions[s / cfg.nuisance_group_size];
        for u in 0..cfg.utterances_per_speaker {
            let noise = gaussian_vector(cfg.dimension, &mut rng);
            let raw: Vec<f64> = (0..cfg.dimension)
                .map(|i| {
                    mean[i]
                        + cfg.household_nuisance_scale * nuisance[i]
                        + noise_sigma * noise[i]
                })
                .collect();
            corpus.add_utterance(&speaker_id, &format!("u{u:04}"), l2_normalize(&raw)?)?;
        }
    }
    Ok(corpus)
}
