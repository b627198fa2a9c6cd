//! Mini-batch training of the scoring model under the weighted pair loss,
//! with analytic backpropagation and a finite-difference checker.
//!
//! The per-pair loss is `-w * ln(S)` for positives and `-ln(1 - S)` for
//! negatives, where `w` is the set-level imbalance weight; a batch averages
//! the per-pair terms over the batch length. During training the local
//! distance is computed as `sqrt(sum_sq + distance_epsilon)` so its gradient
//! stays defined when the adapted vectors coincide.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::dd::Dd;
use crate::embedding::{cosine_similarity, EmbeddingVector};
use crate::error::{Error, Result};
use crate::model::{apply_mask, sample_mask, DropoutMask, HouseholdScoringModel};
use crate::pairs::TrainingPairSet;

const SCORE_CLAMP: f64 = 1e-12;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

/// Parameter-update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

/// How often dropout masks are redrawn during training. Within one pair the
/// two members always share one mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskResample {
    #[default]
    PerPair,
    PerBatch,
    PerEpoch,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Added under the square root of the training-time distance.
    pub distance_epsilon: f64,
    pub mask_resample: MaskResample,
    /// Keeps the global fusion weight at its initial value; with an initial
    /// value of zero this trains a local-score-only model.
    pub freeze_global_weight: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.01,
            batch_size: 1024,
            dropout_rate: 0.5,
            optimizer: Optimizer::Sgd,
            seed: 0,
            distance_epsilon: 1e-12,
            mask_resample: MaskResample::PerPair,
            freeze_global_weight: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.distance_epsilon >= 0.0 && self.distance_epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "distance epsilon must be finite and non-negative, got {}",
                self.distance_epsilon
            )));
        }
        Ok(())
    }
}

/// Per-epoch mean losses of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub epoch_mean_losses: Vec<f64>,
}

impl LossReport {
    pub fn initial_loss(&self) -> f64 {
        *self.epoch_mean_losses.first().unwrap_or(&f64::NAN)
    }

    pub fn final_loss(&self) -> f64 {
        *self.epoch_mean_losses.last().unwrap_or(&f64::NAN)
    }
}

/// Gradient of the per-pair (or batch-averaged) loss, mirroring the model's
/// parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
    pub fusion_global_weight: f64,
    pub fusion_local_weight: f64,
    pub fusion_bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &HouseholdScoringModel) -> Self {
        Self {
            layers: model
                .layers()
                .iter()
                .map(|l| LayerGradients {
                    weights: vec![0.0; l.weights().len()],
                    bias: vec![0.0; l.bias().len()],
                })
                .collect(),
            fusion_global_weight: 0.0,
            fusion_local_weight: 0.0,
            fusion_bias: 0.0,
        }
    }

    fn reset(&mut self) {
        for layer in &mut self.layers {
            layer.weights.fill(0.0);
            layer.bias.fill(0.0);
        }
        self.fusion_global_weight = 0.0;
        self.fusion_local_weight = 0.0;
        self.fusion_bias = 0.0;
    }

    fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            for w in &mut layer.weights {
                *w *= factor;
            }
            for b in &mut layer.bias {
                *b *= factor;
            }
        }
        self.fusion_global_weight *= factor;
        self.fusion_local_weight *= factor;
        self.fusion_bias *= factor;
    }

    /// All coordinates in the fixed parameter order (layer weights and bias
    /// in layer order, then the three fusion parameters).
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out.push(self.fusion_global_weight);
        out.push(self.fusion_local_weight);
        out.push(self.fusion_bias);
        out
    }
}

/// Number of model parameters, in the same order as [`Gradients::flat`].
pub fn param_count(model: &HouseholdScoringModel) -> usize {
    model
        .layers()
        .iter()
        .map(|l| l.weights().len() + l.bias().len())
        .sum::<usize>()
        + 3
}

/// Model parameters in the same flat order as [`Gradients::flat`].
fn flatten_params(model: &HouseholdScoringModel) -> Vec<f64> {
    let mut out = Vec::with_capacity(param_count(model));
    for layer in model.layers() {
        out.extend_from_slice(layer.weights());
        out.extend_from_slice(layer.bias());
    }
    out.push(model.fusion_global_weight());
    out.push(model.fusion_local_weight());
    out.push(model.fusion_bias());
    out
}

/// Weighted binary cross-entropy over a score slice: positive terms carry
/// the weight `w`, and the sum is normalized by the slice length. Scores are
/// clamped to `[1e-12, 1 - 1e-12]` before the logs.
pub fn weighted_bce_loss(scores: &[f64], targets: &[bool], w: f64) -> Result<f64> {
    if scores.len() != targets.len() {
        return Err(Error::Dimension {
            expected: targets.len(),
            actual: scores.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput("loss over an empty slice is undefined"));
    }
    let mut acc = 0.0;
    for (&s, &positive) in scores.iter().zip(targets) {
        let s = s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
        acc += if positive { w * s.ln() } else { (1.0 - s).ln() };
    }
    Ok(-(acc / scores.len() as f64))
}

struct PairForward {
    /// Masked inputs for both members.
    x: [Vec<f64>; 2],
    /// Pre-activations per layer per member.
    pre: [Vec<Vec<f64>>; 2],
    /// Post-ReLU activations per layer per member.
    act: [Vec<Vec<f64>>; 2],
    s_global: f64,
    /// Training-time local distance `sqrt(sum_sq + eps)`.
    s_local: f64,
    s_fused: f64,
}

fn forward_pair(
    model: &HouseholdScoringModel,
    e1: &EmbeddingVector,
    e2: &EmbeddingVector,
    mask: Option<&DropoutMask>,
    distance_epsilon: f64,
) -> Result<PairForward> {
    let s_global = cosine_similarity(e1, e2)?;
    let mut x = [Vec::new(), Vec::new()];
    for (slot, e) in x.iter_mut().zip([e1, e2]) {
        if e.dim() != model.input_dim() {
            return Err(Error::Dimension { expected: model.input_dim(), actual: e.dim() });
        }
        *slot = match mask {
            Some(m) => apply_mask(e, m)?,
            None => e.values().to_vec(),
        };
    }
    let mut pre = [Vec::new(), Vec::new()];
    let mut act = [Vec::new(), Vec::new()];
    for member in 0..2 {
        let mut input = x[member].clone();
        for layer in model.layers() {
            let z = layer.affine(&input);
            let a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
            input = a.clone();
            pre[member].push(z);
            act[member].push(a);
        }
    }
    let last = model.layers().len() - 1;
    let sum_sq: f64 = act[0][last]
        .iter()
        .zip(&act[1][last])
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let s_local = (sum_sq + distance_epsilon).sqrt();
    let s_fused = model.fuse(s_global, s_local);
    if !(s_global.is_finite() && s_local.is_finite() && s_fused.is_finite()) {
        return Err(Error::Numerical(
            "non-finite score during training forward pass".into(),
        ));
    }
    Ok(PairForward { x, pre, act, s_global, s_local, s_fused })
}

fn per_pair_loss(s_fused: f64, positive: bool, weight: f64) -> f64 {
    let s = s_fused.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
    if positive {
        -(weight * s.ln())
    } else {
        -((1.0 - s).ln())
    }
}

/// Loss of a single pair under the training-time forward pass (masked
/// inputs, epsilon-guarded distance). This is the scalar that
/// [`backward`] differentiates; the finite-difference checker perturbs
/// parameters and re-evaluates it.
pub fn pair_loss(
    model: &HouseholdScoringModel,
    e1: &EmbeddingVector,
    e2: &EmbeddingVector,
    mask: Option<&DropoutMask>,
    positive: bool,
    weight: f64,
    distance_epsilon: f64,
) -> Result<f64> {
    let fwd = forward_pair(model, e1, e2, mask, distance_epsilon)?;
    Ok(per_pair_loss(fwd.s_fused, positive, weight))
}

/// Analytic gradient of the per-pair loss; returns the loss alongside.
///
/// Both members' contributions accumulate into the shared layer parameters.
/// The distance gradient is zero when the guarded distance is zero, and the
/// ReLU derivative at exactly zero is zero.
pub fn backward(
    model: &HouseholdScoringModel,
    e1: &EmbeddingVector,
    e2: &EmbeddingVector,
    mask: Option<&DropoutMask>,
    positive: bool,
    weight: f64,
    distance_epsilon: f64,
    freeze_global_weight: bool,
) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros_like(model);
    let loss = backward_into(
        model,
        e1,
        e2,
        mask,
        positive,
        weight,
        distance_epsilon,
        freeze_global_weight,
        &mut grads,
    )?;
    Ok((loss, grads))
}

#[allow(clippy::too_many_arguments)]
fn backward_into(
    model: &HouseholdScoringModel,
    e1: &EmbeddingVector,
    e2: &EmbeddingVector,
    mask: Option<&DropoutMask>,
    positive: bool,
    weight: f64,
    distance_epsilon: f64,
    freeze_global_weight: bool,
    grads: &mut Gradients,
) -> Result<f64> {
    let fwd = forward_pair(model, e1, e2, mask, distance_epsilon)?;
    let loss = per_pair_loss(fwd.s_fused, positive, weight);
    if !loss.is_finite() {
        return Err(Error::Numerical("non-finite pair loss".into()));
    }

    let s = fwd.s_fused;
    let s_for_loss = s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
    let dloss_ds = if positive {
        -(weight / s_for_loss)
    } else {
        1.0 / (1.0 - s_for_loss)
    };
    let dt = dloss_ds * s * (1.0 - s);

    if !freeze_global_weight {
        grads.fusion_global_weight += dt * fwd.s_global;
    }
    grads.fusion_local_weight += dt * fwd.s_local;
    grads.fusion_bias += dt;

    let dlocal = dt * model.fusion_local_weight();
    let last = model.layers().len() - 1;
    let d_u: Vec<f64> = if fwd.s_local == 0.0 {
        vec![0.0; model.adapted_dim()]
    } else {
        fwd.act[0][last]
            .iter()
            .zip(&fwd.act[1][last])
            .map(|(a, b)| dlocal * (a - b) / fwd.s_local)
            .collect()
    };

    for member in 0..2 {
        let sign = if member == 0 { 1.0 } else { -1.0 };
        let mut delta: Vec<f64> = d_u.iter().map(|&g| sign * g).collect();
        for l in (0..model.layers().len()).rev() {
            let layer = &model.layers()[l];
            let in_dim = layer.in_dim();
            let input: &[f64] = if l == 0 { &fwd.x[member] } else { &fwd.act[member][l - 1] };
            let mut dz = delta;
            for (d, &z) in dz.iter_mut().zip(&fwd.pre[member][l]) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
            let lg = &mut grads.layers[l];
            for (row, &dzr) in dz.iter().enumerate() {
                if dzr != 0.0 {
                    let wrow = &mut lg.weights[row * in_dim..(row + 1) * in_dim];
                    for (w, &xi) in wrow.iter_mut().zip(input) {
                        *w += dzr * xi;
                    }
                }
                lg.bias[row] += dzr;
            }
            if l > 0 {
                let mut next = vec![0.0; in_dim];
                for (row, &dzr) in dz.iter().enumerate() {
                    if dzr != 0.0 {
                        let wrow = &layer.weights()[row * in_dim..(row + 1) * in_dim];
                        for (n, &w) in next.iter_mut().zip(wrow) {
                            *n += dzr * w;
                        }
                    }
                }
                delta = next;
            } else {
                delta = Vec::new();
            }
        }
    }
    Ok(loss)
}

enum OptimizerState {
    Sgd,
    Adam { m: Gradients, v: Gradients, step: u64 },
}

fn apply_update(
    model: &mut HouseholdScoringModel,
    grads: &Gradients,
    learning_rate: f64,
    state: &mut OptimizerState,
) {
    match state {
        OptimizerState::Sgd => {
            for (l, lg) in grads.layers.iter().enumerate() {
                for (w, g) in model.layers[l].weights.iter_mut().zip(&lg.weights) {
                    *w -= learning_rate * g;
                }
                for (b, g) in model.layers[l].bias.iter_mut().zip(&lg.bias) {
                    *b -= learning_rate * g;
                }
            }
            model.fusion_global_weight -= learning_rate * grads.fusion_global_weight;
            model.fusion_local_weight -= learning_rate * grads.fusion_local_weight;
            model.fusion_bias -= learning_rate * grads.fusion_bias;
        }
        OptimizerState::Adam { m, v, step } => {
            *step += 1;
            let t = *step as i32;
            let corr1 = 1.0 - ADAM_BETA1.powi(t);
            let corr2 = 1.0 - ADAM_BETA2.powi(t);
            let adam = |param: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / corr1;
                let v_hat = *v / corr2;
                *param -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            };
            for l in 0..grads.layers.len() {
                for i in 0..grads.layers[l].weights.len() {
                    adam(
                        &mut model.layers[l].weights[i],
                        &mut m.layers[l].weights[i],
                        &mut v.layers[l].weights[i],
                        grads.layers[l].weights[i],
                    );
                }
                for i in 0..grads.layers[l].bias.len() {
                    adam(
                        &mut model.layers[l].bias[i],
                        &mut m.layers[l].bias[i],
                        &mut v.layers[l].bias[i],
                        grads.layers[l].bias[i],
                    );
                }
            }
            adam(
                &mut model.fusion_global_weight,
                &mut m.fusion_global_weight,
                &mut v.fusion_global_weight,
                grads.fusion_global_weight,
            );
            adam(
                &mut model.fusion_local_weight,
                &mut m.fusion_local_weight,
                &mut v.fusion_local_weight,
                grads.fusion_local_weight,
            );
            adam(
                &mut model.fusion_bias,
                &mut m.fusion_bias,
                &mut v.fusion_bias,
                grads.fusion_bias,
            );
        }
    }
}

/// Trains the model on the pair set: per epoch, shuffle, batch, forward with
/// fresh masks, backward, update. Deterministic given the config seed.
pub fn train(
    mut model: HouseholdScoringModel,
    pair_set: &TrainingPairSet,
    cfg: &TrainConfig,
) -> Result<(HouseholdScoringModel, LossReport)> {
    cfg.validate()?;
    if pair_set.is_empty() {
        return Err(Error::EmptyInput("cannot train on an empty pair set"));
    }
    let weight = pair_set.weight();
    let dim = model.input_dim();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut state = match cfg.optimizer {
        Optimizer::Sgd => OptimizerState::Sgd,
        Optimizer::Adam => OptimizerState::Adam {
            m: Gradients::zeros_like(&model),
            v: Gradients::zeros_like(&model),
            step: 0,
        },
    };
    let mut indices: Vec<u32> = (0..pair_set.len() as u32).collect();
    let mut grads = Gradients::zeros_like(&model);
    let mut epoch_mean_losses = Vec::with_capacity(cfg.epochs);
    let use_dropout = cfg.dropout_rate > 0.0;

    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_mask = if use_dropout && cfg.mask_resample == MaskResample::PerEpoch {
            Some(sample_mask(dim, cfg.dropout_rate, &mut rng)?)
        } else {
            None
        };
        let mut loss_sum = 0.0;
        for batch in indices.chunks(cfg.batch_size) {
            if use_dropout && cfg.mask_resample == MaskResample::PerBatch {
                epoch_mask = Some(sample_mask(dim, cfg.dropout_rate, &mut rng)?);
            }
            grads.reset();
            for &idx in batch {
                let pair = pair_set.pairs()[idx as usize];
                let fresh_mask = if use_dropout && cfg.mask_resample == MaskResample::PerPair {
                    Some(sample_mask(dim, cfg.dropout_rate, &mut rng)?)
                } else {
                    None
                };
                let mask = fresh_mask.as_ref().or(epoch_mask.as_ref());
                let loss = backward_into(
                    &model,
                    pair_set.embedding(pair.first),
                    pair_set.embedding(pair.second),
                    mask,
                    pair.positive,
                    weight,
                    cfg.distance_epsilon,
                    cfg.freeze_global_weight,
                    &mut grads,
                )
                .map_err(|e| match e {
                    Error::Numerical(msg) => Error::Numerical(format!("epoch {epoch}: {msg}")),
                    other => other,
                })?;
                loss_sum += loss;
            }
            grads.scale(1.0 / batch.len() as f64);
            apply_update(&mut model, &grads, cfg.learning_rate, &mut state);
        }
        let epoch_mean = loss_sum / pair_set.len() as f64;
        if !epoch_mean.is_finite() {
            return Err(Error::Numerical(format!(
                "mean loss became non-finite at epoch {epoch}"
            )));
        }
        epoch_mean_losses.push(epoch_mean);
    }
    Ok((model, LossReport { epoch_mean_losses }))
}

/// One input to the finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradientCheckDraw {
    pub e1: EmbeddingVector,
    pub e2: EmbeddingVector,
    pub mask: Option<DropoutMask>,
    pub positive: bool,
    pub weight: f64,
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckReport {
    pub max_relative_error: f64,
    pub checked_draws: usize,
    /// Draws skipped because a ReLU pre-activation or the adapted distance
    /// was too close to a non-differentiable point.
    pub skipped_draws: usize,
    pub checked_coordinates: usize,
}

/// Margin below which a draw counts as sitting on a ReLU kink.
const KINK_GUARD: f64 = 1e-4;
/// Margin below which the adapted distance makes the FD estimate unreliable.
const DISTANCE_GUARD: f64 = 0.05;
/// Coordinates with smaller analytic gradient are not compared.
const GRADIENT_FLOOR: f64 = 1e-8;

/// Loss of one pair evaluated in double-double precision from a flat
/// parameter vector, mirroring the production forward pass. `x` holds the
/// already-masked member inputs; the global score does not depend on the
/// parameters and is passed through as computed by the production code.
fn loss_dd(
    params: &[Dd],
    shapes: &[(usize, usize)],
    x: &[Vec<Dd>; 2],
    s_global: f64,
    positive: bool,
    weight: f64,
    distance_epsilon: f64,
) -> Dd {
    let mut final_act: [Vec<Dd>; 2] = [Vec::new(), Vec::new()];
    for member in 0..2 {
        let mut input = x[member].clone();
        let mut offset = 0;
        for &(in_dim, out_dim) in shapes {
            let weights = &params[offset..offset + in_dim * out_dim];
            let bias = &params[offset + in_dim * out_dim..offset + in_dim * out_dim + out_dim];
            offset += in_dim * out_dim + out_dim;
            let mut act = Vec::with_capacity(out_dim);
            for row in 0..out_dim {
                let mut z = bias[row];
                for (w, xi) in weights[row * in_dim..(row + 1) * in_dim].iter().zip(&input) {
                    z = z.add(w.mul(*xi));
                }
                act.push(if z.hi > 0.0 { z } else { Dd::ZERO });
            }
            input = act;
        }
        final_act[member] = input;
    }
    let mut sum_sq = Dd::ZERO;
    for (a, b) in final_act[0].iter().zip(&final_act[1]) {
        let d = a.sub(*b);
        sum_sq = sum_sq.add(d.mul(d));
    }
    let s_local = sum_sq.add_f64(distance_epsilon).sqrt();
    let w1 = params[params.len() - 3];
    let w2 = params[params.len() - 2];
    let b = params[params.len() - 1];
    let t = w1.mul_f64(s_global).add(w2.mul(s_local)).add(b);
    let s = if t.hi >= 0.0 {
        let e = t.neg().exp();
        Dd::ONE.div(Dd::ONE.add(e))
    } else {
        let e = t.exp();
        e.div(Dd::ONE.add(e))
    };
    let s = if s.hi < SCORE_CLAMP {
        Dd::from_f64(SCORE_CLAMP)
    } else if s.hi > 1.0 - SCORE_CLAMP {
        Dd::from_f64(1.0 - SCORE_CLAMP)
    } else {
        s
    };
    if positive {
        s.ln().mul_f64(weight).neg()
    } else {
        Dd::ONE.sub(s).ln().neg()
    }
}

/// Compares analytic gradients against central finite differences with step
/// `h` over every parameter, for every draw, and reports the maximum
/// relative error `|a - n| / max(|a|, |n|)` over coordinates where the
/// analytic gradient exceeds `1e-8`. The probe losses are evaluated in
/// double-double precision so the difference quotient is truncation-limited
/// rather than roundoff-limited.
pub fn gradient_check(
    model: &HouseholdScoringModel,
    draws: &[GradientCheckDraw],
    h: f64,
    distance_epsilon: f64,
) -> Result<GradientCheckReport> {
    if draws.is_empty() {
        return Err(Error::EmptyInput("gradient check needs at least one draw"));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("step size must be positive, got {h}")));
    }
    let shapes: Vec<(usize, usize)> =
        model.layers().iter().map(|l| (l.in_dim(), l.out_dim())).collect();
    let base_params: Vec<Dd> =
        flatten_params(model).into_iter().map(Dd::from_f64).collect();

    enum DrawOutcome {
        Skipped,
        Checked { max_relative_error: f64, coordinates: usize },
    }

    let outcomes: Vec<DrawOutcome> = draws
        .par_iter()
        .map(|draw| -> Result<DrawOutcome> {
            let fwd =
                forward_pair(model, &draw.e1, &draw.e2, draw.mask.as_ref(), distance_epsilon)?;
            let near_kink =
                fwd.pre.iter().flatten().flatten().any(|&z| z.abs() < KINK_GUARD);
            if near_kink || fwd.s_local < DISTANCE_GUARD {
                return Ok(DrawOutcome::Skipped);
            }
            let (_, analytic) = backward(
                model,
                &draw.e1,
                &draw.e2,
                draw.mask.as_ref(),
                draw.positive,
                draw.weight,
                distance_epsilon,
                false,
            )?;
            let analytic = analytic.flat();
            let x: [Vec<Dd>; 2] = [
                fwd.x[0].iter().copied().map(Dd::from_f64).collect(),
                fwd.x[1].iter().copied().map(Dd::from_f64).collect(),
            ];
            let mut params = base_params.clone();
            let mut max_relative_error = 0.0f64;
            let mut coordinates = 0;
            for i in 0..params.len() {
                let saved = params[i];
                params[i] = saved.add_f64(h);
                let plus = loss_dd(
                    &params,
                    &shapes,
                    &x,
                    fwd.s_global,
                    draw.positive,
                    draw.weight,
                    distance_epsilon,
                );
                params[i] = saved.add_f64(-h);
                let minus = loss_dd(
                    &params,
                    &shapes,
                    &x,
                    fwd.s_global,
                    draw.positive,
                    draw.weight,
                    distance_epsilon,
                );
                params[i] = saved;
                let numeric = plus.sub(minus).to_f64() / (2.0 * h);
                if analytic[i].abs() > GRADIENT_FLOOR {
                    let rel =
                        (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs());
                    max_relative_error = max_relative_error.max(rel);
                    coordinates += 1;
                }
            }
            Ok(DrawOutcome::Checked { max_relative_error, coordinates })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = GradientCheckReport {
        max_relative_error: 0.0,
        checked_draws: 0,
        skipped_draws: 0,
        checked_coordinates: 0,
    };
    for outcome in outcomes {
        match outcome {
            DrawOutcome::Skipped => report.skipped_draws += 1,
            DrawOutcome::Checked { max_relative_error, coordinates } => {
                report.max_relative_error = report.max_relative_error.max(max_relative_error);
                report.checked_draws += 1;
                report.checked_coordinates += coordinates;
            }
        }
    }
    Ok(report)
}
