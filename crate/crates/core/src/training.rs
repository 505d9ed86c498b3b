//! Measurement pairs, the three training losses, Jacobian-free gradients,
//! Adam, and the epoch loop.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::denoiser::checkpoint::ResumeState;
use crate::denoiser::{denoiser_backward, spectral_normalize, DenoiserParams, ParamGrads};
use crate::deq::{fixed_point_solve_with_gamma, DeqConfig, TOperator};
use crate::error::{Result, TomoError};
use crate::geometry::{Geometry, Image, Sinogram};
use crate::io::{fmt_f64, write_csv};
use crate::linalg::{self, derive_seed};
use crate::metrics::{psnr, ssim};
use crate::radon::{backproject_angles, project_angles, radon_adjoint, radon_forward};
use crate::sampling::{
    apply_weight, compute_weight_diagonal, sample_mask, split_complementary,
    weighted_residual_norm_sq, AngleMask, MaskDistribution, MaskKind, WeightDiagonal,
};

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementPair {
    pub y: Sinogram,
    pub mask: AngleMask,
    pub y_prime: Sinogram,
    pub mask_prime: AngleMask,
    pub ground_truth: Option<Image>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Noise std as a fraction of `max |A x|`.
    pub relative_level: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            relative_level: 0.01,
            seed: 0,
        }
    }
}

fn add_noise<R: Rng + ?Sized>(s: &mut Sinogram, sigma: f64, rng: &mut R) {
    if sigma > 0.0 {
        let nd = Normal::new(0.0, sigma).expect("finite sigma");
        s.data.iter_mut().for_each(|v| *v += nd.sample(rng));
    }
}

/// Noisy masked copy of a full sinogram.
pub fn measure<R: Rng + ?Sized>(full: &Sinogram, mask: &AngleMask, sigma: f64, rng: &mut R) -> Result<Sinogram> {
    let mut y = full.select_rows(mask.indices())?;
    add_noise(&mut y, sigma, rng);
    Ok(y)
}

/// Two independent noisy views of `x`. Masks are drawn independently for
/// `UniformSubset` / `EquispacedFixed`, and as the two halves of one split
/// for `ComplementarySplit`.
pub fn make_training_pair<R: Rng + ?Sized>(
    x: &Image,
    g: &Geometry,
    sampling: &MaskDistribution,
    noise: &NoiseConfig,
    keep_truth: bool,
    rng: &mut R,
) -> Result<MeasurementPair> {
    if !x.is_nonnegative() {
        return Err(TomoError::config("training images must be nonnegative"));
    }
    if noise.relative_level < 0.0 {
        return Err(TomoError::config("noise level must be >= 0"));
    }
    let full = radon_forward(x, g)?;
    let sigma = noise.relative_level * full.max_abs();
    let (mask, mask_prime) = match sampling.kind {
        MaskKind::ComplementarySplit(_) => split_complementary(sampling, rng)?,
        _ => (sample_mask(sampling, rng)?, sample_mask(sampling, rng)?),
    };
    let y = measure(&full, &mask, sigma, rng)?;
    let y_prime = measure(&full, &mask_prime, sigma, rng)?;
    Ok(MeasurementPair {
        y,
        mask,
        y_prime,
        mask_prime,
        ground_truth: keep_truth.then(|| x.clone()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `1/2 ||M' A x - y'||_W^2`
    SelfWeighted,
    /// `1/2 ||A (x - x_gt)||^2`
    SupOperator,
    /// `1/2 ||x - x_gt||^2`
    SupPlain,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::SelfWeighted => "self",
            LossKind::SupOperator => "sup_operator",
            LossKind::SupPlain => "sup_plain",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "self" => Ok(LossKind::SelfWeighted),
            "sup_operator" => Ok(LossKind::SupOperator),
            "sup_plain" => Ok(LossKind::SupPlain),
            _ => Err(TomoError::config(format!(
                "unknown loss '{s}' (expected self, sup_operator or sup_plain)"
            ))),
        }
    }

    pub fn needs_truth(self) -> bool {
        self != LossKind::SelfWeighted
    }
}

/// Value and `dL/dx` of the weighted self-supervised loss.
pub fn loss_self(x_bar: &Image, pair: &MeasurementPair, w: &WeightDiagonal, g: &Geometry) -> Result<(f64, Image)> {
    pair.mask_prime.check_sinogram(&pair.y_prime, g.n_detectors)?;
    let ax = project_angles(x_bar, g, pair.mask_prime.indices())?;
    let mut r = Sinogram::from_vec(ax.n_angles, ax.n_detectors, linalg::sub(&ax.data, &pair.y_prime.data))?;
    let value = 0.5 * weighted_residual_norm_sq(&r, &pair.mask_prime, w)?;
    apply_weight(&mut r, &pair.mask_prime, w);
    let cot = backproject_angles(&r, g, pair.mask_prime.indices())?;
    Ok((value, cot))
}

pub fn loss_sup_operator(x_bar: &Image, x_gt: &Image, g: &Geometry) -> Result<(f64, Image)> {
    x_bar.same_shape(x_gt)?;
    let d = Image::from_vec(x_bar.side, linalg::sub(&x_bar.data, &x_gt.data))?;
    let ad = radon_forward(&d, g)?;
    let value = 0.5 * linalg::norm_sq(&ad.data);
    Ok((value, radon_adjoint(&ad, g)?))
}

pub fn loss_sup_plain(x_bar: &Image, x_gt: &Image) -> Result<(f64, Image)> {
    x_bar.same_shape(x_gt)?;
    let d = linalg::sub(&x_bar.data, &x_gt.data);
    Ok((0.5 * linalg::norm_sq(&d), Image::from_vec(x_bar.side, d)?))
}

pub fn evaluate_loss(
    kind: LossKind,
    x_bar: &Image,
    pair: &MeasurementPair,
    w: &WeightDiagonal,
    g: &Geometry,
) -> Result<(f64, Image)> {
    let truth = || {
        pair.ground_truth
            .as_ref()
            .ok_or_else(|| TomoError::config(format!("loss '{}' needs ground truth", kind.name())))
    };
    match kind {
        LossKind::SelfWeighted => loss_self(x_bar, pair, w, g),
        LossKind::SupOperator => loss_sup_operator(x_bar, truth()?, g),
        LossKind::SupPlain => loss_sup_plain(x_bar, truth()?),
    }
}

/// Backpropagates `cotangent` (on the output of one application of `T` at
/// `x`) to the denoiser parameters. Returns the gradient and `T(x)`.
pub fn single_application_vjp(op: &TOperator<'_>, x: &Image, cotangent: &Image) -> Result<(ParamGrads, Image)> {
    let rec = op.apply_recorded(x)?;
    rec.out.same_shape(cotangent)?;
    // through max(0, .) then the alpha f(s) branch; s does not depend on theta
    let c_f: Vec<f64> = cotangent
        .data
        .iter()
        .zip(&rec.pre)
        .map(|(c, p)| if *p > 0.0 { op.alpha * c } else { 0.0 })
        .collect();
    let (grads, _) = denoiser_backward(op.params, &rec.tape, &Image::from_vec(x.side, c_f)?)?;
    Ok((grads, rec.out))
}

/// Everything a gradient evaluation needs that does not change per step.
#[derive(Debug, Clone)]
pub struct JfbContext {
    pub deq: DeqConfig,
    pub gamma: f64,
    pub weights: WeightDiagonal,
    pub loss: LossKind,
}

impl JfbContext {
    pub fn new(cfg: &TrainConfig, g: &Geometry) -> Result<Self> {
        Ok(JfbContext {
            deq: cfg.deq,
            gamma: cfg.deq.resolve_gamma(g)?,
            weights: compute_weight_diagonal(&cfg.sampling)?,
            loss: cfg.loss_kind,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ItemGradient {
    pub grads: ParamGrads,
    pub loss: f64,
    pub fp_iters: usize,
}

/// Solve without derivatives, evaluate the loss at the equilibrium, then
/// backpropagate through the final application only.
pub fn jfb_item(pair: &MeasurementPair, p: &DenoiserParams, ctx: &JfbContext, g: &Geometry) -> Result<ItemGradient> {
    let fp = fixed_point_solve_with_gamma(&pair.y, &pair.mask, p, &ctx.deq, ctx.gamma, g)?;
    let (loss, cot) = evaluate_loss(ctx.loss, &fp.x_bar, pair, &ctx.weights, g)?;
    let op = TOperator {
        y: &pair.y,
        mask: &pair.mask,
        params: p,
        alpha: ctx.deq.alpha,
        gamma: ctx.gamma,
        geometry: g,
    };
    let (grads, _) = single_application_vjp(&op, &fp.x_prev, &cot)?;
    Ok(ItemGradient {
        grads,
        loss,
        fp_iters: fp.n_iters,
    })
}

#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub grads: ParamGrads,
    pub mean_loss: f64,
    pub mean_fp_iters: f64,
}

/// Batch mean of [`jfb_item`]. Items run in parallel; the reduction is
/// sequential in batch order, so the result does not depend on the thread
/// count.
pub fn jfb_gradient_with(batch: &[MeasurementPair], p: &DenoiserParams, ctx: &JfbContext, g: &Geometry) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(TomoError::config("empty batch"));
    }
    let items: Vec<ItemGradient> = batch
        .par_iter()
        .map(|pair| jfb_item(pair, p, ctx, g))
        .collect::<Result<Vec<_>>>()?;
    let mut grads = ParamGrads::zeros_like(p);
    let (mut loss, mut iters) = (0.0, 0.0);
    for it in &items {
        grads.add_assign(&it.grads);
        loss += it.loss;
        iters += it.fp_iters as f64;
    }
    let k = batch.len() as f64;
    grads.scale(1.0 / k);
    if !grads.is_finite() {
        return Err(TomoError::NonFinite("JFB gradient".into()));
    }
    Ok(BatchGradient {
        grads,
        mean_loss: loss / k,
        mean_fp_iters: iters / k,
    })
}

pub fn jfb_gradient(batch: &[MeasurementPair], p: &DenoiserParams, cfg: &TrainConfig, g: &Geometry) -> Result<BatchGradient> {
    jfb_gradient_with(batch, p, &JfbContext::new(cfg, g)?, g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Evaluate with the running mean of all iterates.
    pub polyak: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            polyak: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub averaged: Option<Vec<f64>>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, n: usize) -> Self {
        AdamState {
            cfg,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            averaged: None,
        }
    }

    fn from_resume(cfg: AdamConfig, r: &ResumeState) -> Self {
        AdamState {
            cfg,
            step: r.step,
            m: r.m.clone(),
            v: r.v.clone(),
            averaged: r.averaged.clone(),
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TomoError::dim(format!(
            "adam: {} params, {} grads, {} state entries",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let c = state.cfg;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for i in 0..params.len() {
        let gi = grads[i];
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * gi;
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * gi * gi;
        let mh = state.m[i] / bc1;
        let vh = state.v[i] / bc2;
        params[i] -= lr * mh / (vh.sqrt() + c.eps);
    }
    Ok(())
}

/// Folds the current iterate into the running mean when averaging is on.
fn update_average(state: &mut AdamState, params: &[f64]) {
    if !state.cfg.polyak {
        return;
    }
    match &mut state.averaged {
        None => state.averaged = Some(params.to_vec()),
        Some(avg) => {
            let k = state.step as f64;
            for (a, p) in avg.iter_mut().zip(params) {
                *a += (p - *a) / k;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub lr: f64,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub optimizer: AdamConfig,
    pub deq: DeqConfig,
    /// Law of the training masks `M` and `M'`.
    pub sampling: MaskDistribution,
    pub noise: NoiseConfig,
    /// Number of equispaced validation angles.
    pub val_angles: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TomoError::config("lr must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(TomoError::config("batch_size must be >= 1"));
        }
        if self.val_angles == 0 || self.val_angles > self.sampling.n_angles_total {
            return Err(TomoError::config("val_angles must lie in [1, n_angles_total]"));
        }
        if self.noise.relative_level < 0.0 {
            return Err(TomoError::config("noise level must be >= 0"));
        }
        self.sampling.validate()?;
        self.deq.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_kind: LossKind,
    pub train_loss: f64,
    pub val_psnr: f64,
    pub val_ssim: f64,
    pub mean_fp_iters: f64,
}

pub const HISTORY_HEADER: [&str; 6] = ["epoch", "loss_kind", "train_loss", "val_psnr", "val_ssim", "mean_fp_iters"];

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let rows: Vec<Vec<String>> = history
        .iter()
        .map(|r| {
            vec![
                r.epoch.to_string(),
                r.loss_kind.name().to_string(),
                fmt_f64(r.train_loss),
                fmt_f64(r.val_psnr),
                fmt_f64(r.val_ssim),
                fmt_f64(r.mean_fp_iters),
            ]
        })
        .collect();
    write_csv(path, &HISTORY_HEADER, &rows)
}

/// Fixed validation measurements: equispaced mask, one noise draw per item.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub mask: AngleMask,
    pub items: Vec<(Image, Sinogram)>,
}

const STREAM_VAL: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_PAIR: u64 = 3;

impl ValidationSet {
    pub fn new(images: &[Image], g: &Geometry, s: usize, noise: &NoiseConfig) -> Result<Self> {
        let mask = AngleMask::equispaced(s, g.n_angles_total)?;
        let items = images
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let full = radon_forward(x, g)?;
                let sigma = noise.relative_level * full.max_abs();
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(noise.seed, &[STREAM_VAL, i as u64]));
                Ok((x.clone(), measure(&full, &mask, sigma, &mut rng)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ValidationSet { mask, items })
    }

    /// Mean `(psnr, ssim)` of DEQ reconstructions (data range = max of truth).
    pub fn score(&self, p: &DenoiserParams, deq: &DeqConfig, gamma: f64, g: &Geometry) -> Result<(f64, f64)> {
        let scores: Vec<(f64, f64)> = self
            .items
            .par_iter()
            .map(|(x, y)| {
                let r = fixed_point_solve_with_gamma(y, &self.mask, p, deq, gamma, g)?;
                Ok((psnr(&r.x_bar, x, x.max())?, ssim(&r.x_bar, x, x.max())?))
            })
            .collect::<Result<Vec<_>>>()?;
        let k = scores.len() as f64;
        let (a, b) = scores.iter().fold((0.0, 0.0), |acc, s| (acc.0 + s.0, acc.1 + s.1));
        Ok((a / k, b / k))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Raw optimizer iterate.
    pub params: DenoiserParams,
    /// Parameters used for validation (the running mean with averaging).
    pub eval_params: DenoiserParams,
    pub history: Vec<EpochRecord>,
    pub resume: ResumeState,
}

/// Power iterations applied once before the first step of a fresh run.
pub const SN_WARMUP_ITERS: usize = 50;

/// Runs `cfg.n_epochs` epochs (on top of `resume.epoch` when resuming).
///
/// Each batch regenerates masks and noise from streams derived from
/// `(seed, epoch, batch, item)`, so a resumed run reproduces the
/// uninterrupted one exactly.
pub fn train(
    train_set: &[Image],
    val: &ValidationSet,
    cfg: &TrainConfig,
    g: &Geometry,
    init: DenoiserParams,
    resume: Option<&ResumeState>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TomoError::config("training set is empty"));
    }
    let ctx = JfbContext::new(cfg, g)?;
    let n_sn = init.spec.sn_power_iters;
    let mut params = init;
    let mut adam = match resume {
        Some(r) => {
            if r.m.len() != params.n_params() {
                return Err(TomoError::config("resume state does not match the network"));
            }
            AdamState::from_resume(cfg.optimizer, r)
        }
        None => {
            if cfg.n_epochs > 0 {
                params = spectral_normalize(&params, SN_WARMUP_ITERS);
            }
            AdamState::new(cfg.optimizer, params.n_params())
        }
    };
    let start = resume.map_or(0, |r| r.epoch as usize);
    let mut history = Vec::with_capacity(cfg.n_epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in start..start + cfg.n_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_SHUFFLE, epoch as u64]));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut iter_sum, mut n_batches) = (0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = chunk
                .iter()
                .enumerate()
                .map(|(i, &idx)| {
                    let mut r = ChaCha8Rng::seed_from_u64(derive_seed(
                        cfg.seed,
                        &[STREAM_PAIR, epoch as u64, b as u64, i as u64],
                    ));
                    make_training_pair(&train_set[idx], g, &cfg.sampling, &cfg.noise, cfg.loss_kind.needs_truth(), &mut r)
                })
                .collect::<Result<Vec<_>>>()?;
            let bg = jfb_gradient_with(&batch, &params, &ctx, g)?;
            let mut flat = params.flatten();
            adam_step(&mut adam, &mut flat, &bg.grads.flatten(), cfg.lr)?;
            params.set_flat(&flat)?;
            params = spectral_normalize(&params, n_sn);
            update_average(&mut adam, &params.flatten());
            loss_sum += bg.mean_loss;
            iter_sum += bg.mean_fp_iters;
            n_batches += 1;
        }
        let eval = eval_params(&params, &adam)?;
        let (val_psnr, val_ssim) = val.score(&eval, &cfg.deq, ctx.gamma, g)?;
        let rec = EpochRecord {
            epoch: epoch + 1,
            loss_kind: cfg.loss_kind,
            train_loss: loss_sum / n_batches as f64,
            val_psnr,
            val_ssim,
            mean_fp_iters: iter_sum / n_batches as f64,
        };
        on_epoch(&rec);
        history.push(rec);
    }
    let eval_params = eval_params(&params, &adam)?;
    Ok(TrainOutcome {
        resume: ResumeState {
            epoch: (start + cfg.n_epochs) as u64,
            step: adam.step,
            m: adam.m,
            v: adam.v,
            averaged: adam.averaged,
        },
        params,
        eval_params,
        history,
    })
}

fn eval_params(params: &DenoiserParams, adam: &AdamState) -> Result<DenoiserParams> {
    match &adam.averaged {
        Some(avg) => {
            let mut p = params.clone();
            p.set_flat(avg)?;
            Ok(p)
        }
        None => Ok(params.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_is_lr() {
        let mut st = AdamState::new(AdamConfig::default(), 1);
        let mut p = vec![0.0];
        adam_step(&mut st, &mut p, &[1.0], 0.1).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-6, "{}", p[0]);
    }

    #[test]
    fn adam_zero_grad_keeps_params_and_decays_moments() {
        let mut st = AdamState::new(AdamConfig::default(), 2);
        st.m = vec![0.5, -0.5];
        st.v = vec![0.2, 0.2];
        st.step = 3;
        let mut p = vec![1.0, 2.0];
        let before = p.clone();
        // nonzero moments move params, so check the decay and a fresh state separately
        adam_step(&mut st, &mut p, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(st.m, vec![0.45, -0.45]);
        assert!((st.v[0] - 0.2 * 0.999).abs() < 1e-15);
        let mut fresh = AdamState::new(AdamConfig::default(), 2);
        let mut q = before.clone();
        adam_step(&mut fresh, &mut q, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(q, before);
    }

    // f(p) = 1/2 sum d_i (p_i - c_i)^2, minimizer c
    const D: [f64; 3] = [1.0, 3.0, 0.5];
    const C: [f64; 3] = [0.3, -1.0, 2.0];

    fn quad_grad(p: &[f64]) -> Vec<f64> {
        (0..3).map(|i| D[i] * (p[i] - C[i])).collect()
    }

    #[test]
    fn adam_hundred_steps_on_a_quadratic() {
        let mut st = AdamState::new(AdamConfig::default(), 3);
        let mut p = vec![0.0; 3];
        let g0 = linalg::norm(&quad_grad(&p));
        for _ in 0..100 {
            let g = quad_grad(&p);
            adam_step(&mut st, &mut p, &g, 0.1).unwrap();
        }
        assert!(linalg::norm(&quad_grad(&p)) < 1e-2 * g0);
    }

    #[test]
    fn adam_reaches_the_minimizer_with_decay() {
        let mut st = AdamState::new(AdamConfig::default(), 3);
        let mut p = vec![0.0; 3];
        for k in 0..2000 {
            let lr = 0.1 / (1.0 + k as f64 / 50.0);
            let g = quad_grad(&p);
            adam_step(&mut st, &mut p, &g, lr).unwrap();
        }
        assert!(linalg::norm(&quad_grad(&p)) < 1e-4, "{p:?}");
        for i in 0..3 {
            assert!((p[i] - C[i]).abs() < 1e-4);
        }
    }

    #[test]
    fn loss_kind_names_round_trip() {
        for k in [LossKind::SelfWeighted, LossKind::SupOperator, LossKind::SupPlain] {
            assert_eq!(LossKind::parse(k.name()).unwrap(), k);
        }
        assert!(LossKind::parse("bogus").is_err());
    }
}
