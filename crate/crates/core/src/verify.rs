//! Numerical certification of the self-supervised / supervised equivalence
//! on small instances, plus a registry of gradient and dense-matrix oracles.
//!
//! Dense materialization of `A` is confined to this module.

use std::fmt;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::denoiser::{
    denoiser_forward, denoiser_vjp, init_denoiser, Activation, DenoiserParams, DenoiserSpec, ParamGrads,
};
use crate::deq::{fixed_point_solve_with_gamma, DeqConfig, TOperator};
use crate::error::{Result, TomoError};
use crate::io::{fmt_f64, write_csv};
use crate::linalg::{self, derive_seed};
use crate::radon::{grad_data_fidelity, project_angles, radon_forward, spectral_norm, LinearOperator, MaskedRadon};
use crate::sampling::{
    compute_weight_diagonal, enumerate_masks, expected_mask_gram, sample_mask, GramMode, MaskKind,
};
use crate::training::{
    evaluate_loss, loss_self, loss_sup_operator, single_application_vjp, LossKind, MeasurementPair,
};
use crate::{AngleMask, Geometry, Image, MaskDistribution, Sinogram, WeightDiagonal};

/// Largest subset count exact mode will enumerate.
pub const EXACT_BUDGET: u128 = 100_000;
/// Largest image side for which `A` is materialized.
pub const MAX_DENSE_SIDE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClaimId {
    Prop1,
    Thm1,
    Prop2,
    Gradcheck,
}

impl ClaimId {
    pub fn name(self) -> &'static str {
        match self {
            ClaimId::Prop1 => "prop1",
            ClaimId::Thm1 => "thm1",
            ClaimId::Prop2 => "prop2",
            ClaimId::Gradcheck => "gradcheck",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyMode {
    Exact,
    MonteCarlo { n_draws: usize, seed: u64 },
}

impl fmt::Display for VerifyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerifyMode::Exact => write!(f, "exact"),
            VerifyMode::MonteCarlo { n_draws, .. } => write!(f, "monte-carlo({n_draws})"),
        }
    }
}

/// Numerical rank of a materialized `A`. Deficiency is a flag, not a failure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankInfo {
    pub rank: usize,
    pub cols: usize,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub deficient: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub claim_id: ClaimId,
    /// Check name within the claim (`gradcheck` entries name their oracle).
    pub label: String,
    pub mode: String,
    pub max_abs_error: f64,
    pub rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub details: String,
    pub rank: Option<RankInfo>,
}

impl VerificationReport {
    fn new(claim_id: ClaimId, label: impl Into<String>, mode: impl fmt::Display, max_abs: f64, rel: f64, tol: f64) -> Self {
        VerificationReport {
            claim_id,
            label: label.into(),
            mode: mode.to_string(),
            max_abs_error: max_abs,
            rel_error: rel,
            tolerance: tol,
            // NaN never passes
            passed: rel <= tol,
            details: String::new(),
            rank: None,
        }
    }

    fn with_details(mut self, d: impl Into<String>) -> Self {
        self.details = d.into();
        self
    }
}

/// Explicit matrix of a linear operator, one basis vector per column.
pub fn dense_matrix<O: LinearOperator + Sync + ?Sized>(op: &O) -> DMatrix<f64> {
    let (m, n) = (op.output_len(), op.input_len());
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            op.apply(&e)
        })
        .collect();
    DMatrix::from_fn(m, n, |i, j| cols[j][i])
}

pub fn rank_info(a: &DMatrix<f64>) -> RankInfo {
    let sv = a.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let thresh = 1e-8 * smax;
    RankInfo {
        rank: sv.iter().filter(|&&s| s > thresh).count(),
        cols: a.ncols(),
        sigma_max: smax,
        sigma_min: smin,
        deficient: a.nrows() < a.ncols() || smin < thresh,
    }
}

fn check_small(g: &Geometry) -> Result<()> {
    if g.n_pixels > MAX_DENSE_SIDE {
        return Err(TomoError::config(format!(
            "dense verification limited to {MAX_DENSE_SIDE}x{MAX_DENSE_SIDE} images, got {}",
            g.n_pixels
        )));
    }
    Ok(())
}

/// `A_k^T A_k` for each angle block `k`.
fn angle_grams(a: &DMatrix<f64>, n_angles: usize, nd: usize) -> Vec<DMatrix<f64>> {
    (0..n_angles)
        .map(|k| {
            let blk = a.rows(k * nd, nd);
            blk.transpose() * blk
        })
        .collect()
}

fn weighted_gram(grams: &[DMatrix<f64>], mask: &AngleMask, w: &WeightDiagonal, scale: f64, acc: &mut DMatrix<f64>) {
    for &k in mask.indices() {
        let wk = w.per_angle[k];
        *acc += &grams[k] * (scale * wk * wk);
    }
}

/// `E[(M'A)^T W M'A]` against `A^T A`, Frobenius relative error.
pub fn verify_prop1(g: &Geometry, dist: &MaskDistribution, mode: VerifyMode) -> Result<VerificationReport> {
    check_small(g)?;
    dist.validate()?;
    if dist.n_angles_total != g.n_angles_total {
        return Err(TomoError::dim("mask grid and geometry disagree on the angle count"));
    }
    let a = dense_matrix(&MaskedRadon::full(g));
    let grams = angle_grams(&a, g.n_angles_total, g.n_detectors);
    let n = a.ncols();
    // A^T A as the block sum, so full sampling reproduces it term by term
    let ata = grams.iter().fold(DMatrix::zeros(n, n), |acc, gk| acc + gk);
    let w = compute_weight_diagonal(dist)?;
    let mut lhs = DMatrix::zeros(n, n);
    let tol = match mode {
        VerifyMode::Exact => {
            for (mask, p) in enumerate_masks(dist, EXACT_BUDGET)? {
                weighted_gram(&grams, &mask, &w, p, &mut lhs);
            }
            1e-12
        }
        VerifyMode::MonteCarlo { n_draws, seed } => {
            if n_draws == 0 {
                return Err(TomoError::config("monte-carlo mode needs n_draws >= 1"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut counts = vec![0u64; g.n_angles_total];
            for _ in 0..n_draws {
                for &k in sample_mask(dist, &mut rng)?.indices() {
                    counts[k] += 1;
                }
            }
            for (k, &c) in counts.iter().enumerate() {
                let wk = w.per_angle[k];
                lhs += &grams[k] * (c as f64 / n_draws as f64 * wk * wk);
            }
            5.0 / (n_draws as f64).sqrt()
        }
    };
    let diff = &lhs - &ata;
    let max_abs = diff.amax();
    let rel = diff.norm() / ata.norm();
    let rank = rank_info(&a);
    let mut r = VerificationReport::new(ClaimId::Prop1, "expected weighted gram", mode, max_abs, rel, tol)
        .with_details(format!("frobenius |AtA| = {:.6e}; rank {}/{}", ata.norm(), rank.rank, rank.cols));
    r.rank = Some(rank);
    Ok(r)
}

/// Diagonal of `E[M^T M]` against the closed-form selection probabilities
/// (`s / n` for uniform subsets). Off-diagonal entries vanish identically for
/// row selections.
pub fn verify_prop2(dist: &MaskDistribution, mode: VerifyMode) -> Result<VerificationReport> {
    let expected = expected_mask_gram(dist, GramMode::Analytic)?;
    let (got, tol_of): (Vec<f64>, Box<dyn Fn(f64) -> f64>) = match mode {
        VerifyMode::Exact => (expected_mask_gram(dist, GramMode::Exact)?, Box::new(|_| 1e-14)),
        VerifyMode::MonteCarlo { n_draws, seed } => (
            expected_mask_gram(dist, GramMode::MonteCarlo { n_draws, seed })?,
            Box::new(move |p: f64| 3.0 * (p * (1.0 - p) / n_draws as f64).sqrt()),
        ),
    };
    // normalize each entry by its own bound so a single scalar decides
    let mut max_abs: f64 = 0.0;
    let mut worst: f64 = 0.0;
    let mut worst_k = 0;
    for (k, (a, e)) in got.iter().zip(&expected).enumerate() {
        let err = (a - e).abs();
        max_abs = max_abs.max(err);
        let bound = tol_of(*e).max(1e-300);
        if err / bound > worst {
            worst = err / bound;
            worst_k = k;
        }
    }
    let p = match dist.kind {
        MaskKind::UniformSubset(s) => s as f64 / dist.n_angles_total as f64,
        _ => expected[worst_k],
    };
    Ok(VerificationReport::new(ClaimId::Prop2, "mask gram diagonal", mode, max_abs, worst, 1.0).with_details(format!(
        "entries compared against per-entry bound; expected p = {p:.6}; worst angle {worst_k} at {worst:.3} x bound"
    )))
}

/// One item of the equivalence check: truth, fixed mask and its measurement.
#[derive(Debug, Clone)]
pub struct Thm1Item {
    pub truth: Image,
    pub mask: AngleMask,
    pub y: Sinogram,
}

/// Noiseless items with `M` drawn from `dist` on a per-item stream.
pub fn thm1_items(x_set: &[Image], dist: &MaskDistribution, g: &Geometry, seed: u64) -> Result<Vec<Thm1Item>> {
    x_set
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x7431, i as u64]));
            let mask = sample_mask(dist, &mut rng)?;
            let y = project_angles(x, g, mask.indices())?;
            Ok(Thm1Item {
                truth: x.clone(),
                mask,
                y,
            })
        })
        .collect()
}

/// Self-supervised JFB gradient (expectation over every `M'`, weights from
/// the distribution) and the operator-supervised JFB gradient, both averaged
/// over items. Noise-free.
pub fn jfb_gradients_over_masks(
    items: &[Thm1Item],
    dist: &MaskDistribution,
    p: &DenoiserParams,
    deq: &DeqConfig,
    g: &Geometry,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let masks = enumerate_masks(dist, EXACT_BUDGET)?;
    let w = compute_weight_diagonal(dist)?;
    let gamma = deq.resolve_gamma(g)?;
    let per_item: Vec<(Vec<f64>, Vec<f64>)> = items
        .par_iter()
        .map(|it| {
            let fp = fixed_point_solve_with_gamma(&it.y, &it.mask, p, deq, gamma, g)?;
            let op = TOperator {
                y: &it.y,
                mask: &it.mask,
                params: p,
                alpha: deq.alpha,
                gamma,
                geometry: g,
            };
            let mut self_grad = vec![0.0; p.n_params()];
            for (mp, prob) in &masks {
                let pair = MeasurementPair {
                    y: it.y.clone(),
                    mask: it.mask.clone(),
                    y_prime: project_angles(&it.truth, g, mp.indices())?,
                    mask_prime: mp.clone(),
                    ground_truth: None,
                };
                let (_, cot) = loss_self(&fp.x_bar, &pair, &w, g)?;
                let (gr, _) = single_application_vjp(&op, &fp.x_prev, &cot)?;
                linalg::axpy(*prob, &gr.flatten(), &mut self_grad);
            }
            let (_, cot) = loss_sup_operator(&fp.x_bar, &it.truth, g)?;
            let (gr, _) = single_application_vjp(&op, &fp.x_prev, &cot)?;
            Ok((self_grad, gr.flatten()))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = items.len() as f64;
    let mut a = vec![0.0; p.n_params()];
    let mut b = vec![0.0; p.n_params()];
    for (s, u) in &per_item {
        linalg::axpy(1.0 / k, s, &mut a);
        linalg::axpy(1.0 / k, u, &mut b);
    }
    Ok((a, b))
}

/// Components below this fraction of the largest magnitude are compared
/// against that floor instead of their own size.
pub const COMPONENT_FLOOR: f64 = 1e-6;

/// Max componentwise relative error with a floor, and cosine distance.
pub fn gradient_agreement(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let scale = b.iter().chain(a).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (COMPONENT_FLOOR * scale).max(f64::MIN_POSITIVE);
    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = (x - y).abs();
        max_abs = max_abs.max(d);
        max_rel = max_rel.max(d / y.abs().max(floor));
    }
    let na = linalg::norm(a);
    let nb = linalg::norm(b);
    let cos = if na == 0.0 || nb == 0.0 {
        if na == nb { 0.0 } else { 1.0 }
    } else {
        1.0 - linalg::dot(a, b) / (na * nb)
    };
    (max_abs, max_rel, cos)
}

/// The paper-scale instance of the equivalence check: a two-layer plain
/// CNN on `side x side` images.
pub fn thm1_denoiser_spec(side: usize) -> DenoiserSpec {
    DenoiserSpec {
        n_scales: 1,
        channels: 4,
        kernel_size: 3,
        depth: 2,
        activation: Activation::LeakyRelu(0.1),
        use_skip: true,
        sn_power_iters: 1,
        resolution: side,
    }
}

/// Self-vs-supervised JFB gradient equivalence.
///
/// Exact mode fixes `(x, M)` per item, drops noise and enumerates `M'`.
/// Monte-Carlo mode draws `(M', e')` with `relative_noise` and fits the
/// log-log slope of the gradient gap over `n in {N/100, N/10, N}` where
/// `N = n_draws`; it passes when the slope is within 0.1 of `-1/2`.
pub fn verify_thm1(
    g: &Geometry,
    dist: &MaskDistribution,
    p: &DenoiserParams,
    x_set: &[Image],
    deq: &DeqConfig,
    mode: VerifyMode,
    relative_noise: f64,
) -> Result<VerificationReport> {
    check_small(g)?;
    if x_set.is_empty() {
        return Err(TomoError::config("thm1 needs at least one image"));
    }
    if p.n_params() > 10_000 {
        return Err(TomoError::config("thm1 denoiser must have at most 1e4 parameters"));
    }
    match mode {
        VerifyMode::Exact => {
            let items = thm1_items(x_set, dist, g, 0)?;
            let (a, b) = jfb_gradients_over_masks(&items, dist, p, deq, g)?;
            let (max_abs, rel, cos) = gradient_agreement(&a, &b);
            Ok(VerificationReport::new(ClaimId::Thm1, "jfb gradient equivalence", mode, max_abs, rel, 1e-10)
                .with_details(format!(
                    "{} params; |g_sup| = {:.6e}; cosine distance {:.3e}",
                    b.len(),
                    linalg::norm(&b),
                    cos
                )))
        }
        VerifyMode::MonteCarlo { n_draws, seed } => {
            let ns = [n_draws / 100, n_draws / 10, n_draws];
            if ns[0] == 0 {
                return Err(TomoError::config("monte-carlo thm1 needs n_draws >= 100"));
            }
            let gaps = thm1_gap_curve(g, dist, p, x_set, deq, &ns, relative_noise, seed)?;
            let slope = loglog_slope(&ns.map(|n| n as f64), &gaps);
            let dev = (slope + 0.5).abs();
            let mut r = VerificationReport::new(ClaimId::Thm1, "gap decay slope", mode, dev, dev, 0.1);
            r.details = format!(
                "slope {slope:.4}; gaps {}",
                ns.iter().zip(&gaps).map(|(n, g)| format!("n={n}:{g:.4e}")).collect::<Vec<_>>().join(" ")
            );
            Ok(r)
        }
    }
}

/// Replicates per sample size in the gap curve; the gap is their RMS.
pub const GAP_REPLICATES: usize = 8;

/// RMS over replicates of `|mean_n JFB L_self - JFB L_sup|` for each `n`.
#[allow(clippy::too_many_arguments)]
pub fn thm1_gap_curve(
    g: &Geometry,
    dist: &MaskDistribution,
    p: &DenoiserParams,
    x_set: &[Image],
    deq: &DeqConfig,
    ns: &[usize],
    relative_noise: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let w = compute_weight_diagonal(dist)?;
    let gamma = deq.resolve_gamma(g)?;
    // fixed (x, M, e) per item; x_bar does not depend on the draws
    let items = thm1_items(x_set, dist, g, seed)?;
    struct Prepared {
        item: Thm1Item,
        full: Sinogram,
        sigma: f64,
        x_bar: Image,
        x_prev: Image,
        sup: Vec<f64>,
    }
    let prepared: Vec<Prepared> = items
        .into_iter()
        .enumerate()
        .map(|(i, mut it)| {
            let full = radon_forward(&it.truth, g)?;
            let sigma = relative_noise * full.max_abs();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xe, i as u64]));
            for v in &mut it.y.data {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += sigma * z;
            }
            let fp = fixed_point_solve_with_gamma(&it.y, &it.mask, p, deq, gamma, g)?;
            let op = TOperator {
                y: &it.y,
                mask: &it.mask,
                params: p,
                alpha: deq.alpha,
                gamma,
                geometry: g,
            };
            let (_, cot) = loss_sup_operator(&fp.x_bar, &it.truth, g)?;
            let sup = single_application_vjp(&op, &fp.x_prev, &cot)?.0.flatten();
            Ok(Prepared {
                item: it,
                full,
                sigma,
                x_bar: fp.x_bar,
                x_prev: fp.x_prev,
                sup,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let k = prepared.len() as f64;
    let one_gap = |n: usize, rep: usize| -> Result<f64> {
        let mut gap = vec![0.0; p.n_params()];
        for (i, pr) in prepared.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xd4, n as u64, rep as u64, i as u64]));
            let op = TOperator {
                y: &pr.item.y,
                mask: &pr.item.mask,
                params: p,
                alpha: deq.alpha,
                gamma,
                geometry: g,
            };
            let mut acc = vec![0.0; p.n_params()];
            for _ in 0..n {
                let mp = sample_mask(dist, &mut rng)?;
                let mut y_prime = pr.full.select_rows(mp.indices())?;
                for v in &mut y_prime.data {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += pr.sigma * z;
                }
                let pair = MeasurementPair {
                    y: pr.item.y.clone(),
                    mask: pr.item.mask.clone(),
                    y_prime,
                    mask_prime: mp,
                    ground_truth: None,
                };
                let (_, cot) = loss_self(&pr.x_bar, &pair, &w, g)?;
                let (gr, _) = single_application_vjp(&op, &pr.x_prev, &cot)?;
                linalg::axpy(1.0 / n as f64, &gr.flatten(), &mut acc);
            }
            linalg::axpy(1.0 / k, &linalg::sub(&acc, &pr.sup), &mut gap);
        }
        Ok(linalg::norm_sq(&gap))
    };
    ns.iter()
        .map(|&n| {
            let sq: Vec<f64> = (0..GAP_REPLICATES)
                .into_par_iter()
                .map(|rep| one_gap(n, rep))
                .collect::<Result<Vec<_>>>()?;
            Ok((sq.iter().sum::<f64>() / GAP_REPLICATES as f64).sqrt())
        })
        .collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn rel_fd(fd: f64, an: f64, floor: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(floor)
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
}

fn random_image(side: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::from_vec(side, (0..side * side).map(|_| rng.random::<f64>()).collect()).expect("square")
}

/// Hook applied to analytic parameter gradients before comparison.
pub type GradMutation<'a> = &'a dyn Fn(&mut ParamGrads);

/// Denoiser VJP against central differences on every parameter, reported
/// per layer so a corrupted gradient names its layer.
pub fn gradcheck_denoiser(p: &DenoiserParams, seed: u64, mutate: Option<GradMutation<'_>>) -> Result<VerificationReport> {
    let side = p.spec.resolution;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_image(side, &mut rng);
    let cot = Image::from_vec(side, random_vec(side * side, &mut rng))?;
    let (mut pg, xg) = denoiser_vjp(p, &x, &cot)?;
    if let Some(m) = mutate {
        m(&mut pg);
    }
    let flat_g = pg.flatten();
    let base = p.flatten();
    let h = 1e-6;
    let obj = |q: &DenoiserParams, z: &Image| -> Result<f64> { Ok(linalg::dot(&cot.data, &denoiser_forward(q, z)?.data)) };
    let mut worst: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut bad_layers = Vec::new();
    for (li, range) in p.layer_ranges().into_iter().enumerate() {
        let mut layer_worst: f64 = 0.0;
        for k in range {
            let mut q = p.clone();
            let mut f = base.clone();
            f[k] += h;
            q.set_flat(&f)?;
            let up = obj(&q, &x)?;
            f[k] -= 2.0 * h;
            q.set_flat(&f)?;
            let dn = obj(&q, &x)?;
            let fd = (up - dn) / (2.0 * h);
            max_abs = max_abs.max((fd - flat_g[k]).abs());
            layer_worst = layer_worst.max(rel_fd(fd, flat_g[k], 1e-6));
        }
        if layer_worst > 1e-5 {
            bad_layers.push(format!("layer {li} (rel {layer_worst:.3e})"));
        }
        worst = worst.max(layer_worst);
    }
    for k in (0..side * side).step_by(3) {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp.data[k] += h;
        xm.data[k] -= h;
        let fd = (obj(p, &xp)? - obj(p, &xm)?) / (2.0 * h);
        max_abs = max_abs.max((fd - xg.data[k]).abs());
        worst = worst.max(rel_fd(fd, xg.data[k], 1e-6));
    }
    let details = if bad_layers.is_empty() {
        format!("{} params checked", base.len())
    } else {
        format!("mismatch in {}", bad_layers.join(", "))
    };
    let label = format!("denoiser vjp ({} scales)", p.spec.n_scales);
    Ok(VerificationReport::new(ClaimId::Gradcheck, label, "finite-difference", max_abs, worst, 1e-5).with_details(details))
}

fn conv_dense_check(p: &DenoiserParams, seed: u64) -> Result<VerificationReport> {
    // plain CNN only: chain of dense conv matrices with activations
    let side = p.spec.resolution;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_image(side, &mut rng);
    let mut h = nalgebra::DVector::from_vec(x.data.clone());
    let n2 = side * side;
    let last = p.layers.len() - 1;
    for (li, l) in p.layers.iter().enumerate() {
        let (ci, co, k) = (l.shape.in_ch, l.shape.out_ch, l.shape.kernel);
        let r = (k / 2) as isize;
        let mut m = DMatrix::<f64>::zeros(co * n2, ci * n2);
        for o in 0..co {
            for i in 0..side {
                for j in 0..side {
                    for c in 0..ci {
                        for di in 0..k {
                            for dj in 0..k {
                                let si = i as isize + di as isize - r;
                                let sj = j as isize + dj as isize - r;
                                if si < 0 || sj < 0 || si >= side as isize || sj >= side as isize {
                                    continue;
                                }
                                m[(o * n2 + i * side + j, c * n2 + si as usize * side + sj as usize)] +=
                                    l.weight[((o * ci + c) * k + di) * k + dj];
                            }
                        }
                    }
                }
            }
        }
        h = m * h;
        for o in 0..co {
            for t in 0..n2 {
                h[o * n2 + t] += l.bias[o];
            }
        }
        if li < last {
            let a = p.spec.activation;
            h.apply(|z| {
                *z = match a {
                    Activation::Relu => z.max(0.0),
                    Activation::LeakyRelu(s) => {
                        if *z >= 0.0 {
                            *z
                        } else {
                            s * *z
                        }
                    }
                }
            });
        }
    }
    if p.spec.use_skip {
        h += nalgebra::DVector::from_vec(x.data.clone());
    }
    let ours = denoiser_forward(p, &x)?;
    let mut max_abs: f64 = 0.0;
    let mut worst: f64 = 0.0;
    for (a, b) in ours.data.iter().zip(h.iter()) {
        max_abs = max_abs.max((a - b).abs());
        worst = worst.max((a - b).abs() / (1.0 + b.abs()));
    }
    Ok(VerificationReport::new(ClaimId::Gradcheck, "conv forward vs dense", "dense", max_abs, worst, 1e-12))
}

fn adjoint_check(seed: u64) -> Result<VerificationReport> {
    let g = Geometry::new(16, 12)?;
    let a = dense_matrix(&MaskedRadon::full(&g));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for _ in 0..20 {
        let x = random_image(16, &mut rng);
        let y = random_vec(g.full_rows(), &mut rng);
        let ax = radon_forward(&x, &g)?;
        let aty = crate::radon::radon_adjoint(&Sinogram::from_vec(g.n_angles_total, g.n_detectors, y.clone())?, &g)?;
        let lhs = linalg::dot(&ax.data, &y);
        let rhs = linalg::dot(&x.data, &aty.data);
        max_abs = max_abs.max((lhs - rhs).abs());
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1e-300));
        // the dense matrix built from forward calls must reproduce the adjoint
        let dense_aty = a.transpose() * nalgebra::DVector::from_vec(y);
        for (u, v) in dense_aty.iter().zip(&aty.data) {
            worst = worst.max((u - v).abs() / (1.0 + v.abs()));
        }
    }
    Ok(VerificationReport::new(ClaimId::Gradcheck, "radon adjoint identity", "dense", max_abs, worst, 1e-10))
}

fn spectral_norm_check(seed: u64) -> Result<VerificationReport> {
    let g = Geometry::new(12, 30)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = sample_mask(&MaskDistribution::uniform(8, 30)?, &mut rng)?;
    let op = MaskedRadon::new(&g, &mask);
    let est = spectral_norm(&op, 1e-12, 20_000, seed).value;
    let svd = dense_matrix(&op).singular_values().max();
    let err = (est - svd).abs();
    Ok(VerificationReport::new(ClaimId::Gradcheck, "spectral norm vs svd", "dense", err, err / svd, 1e-4))
}

fn fidelity_gradient_check(seed: u64) -> Result<VerificationReport> {
    let g = Geometry::new(16, 24)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = sample_mask(&MaskDistribution::uniform(10, 24)?, &mut rng)?;
    let x = random_image(16, &mut rng);
    let y = project_angles(&random_image(16, &mut rng), &g, mask.indices())?;
    let f = |z: &Image| -> Result<f64> {
        let r = project_angles(z, &g, mask.indices())?;
        Ok(0.5 * linalg::norm_sq(&linalg::sub(&r.data, &y.data)))
    };
    let grad = grad_data_fidelity(&x, &y, &mask, &g)?;
    directional_fd("data fidelity gradient", &x, &grad, f, 5, &mut rng, 1e-6)
}

fn directional_fd(
    label: &str,
    x: &Image,
    grad: &Image,
    f: impl Fn(&Image) -> Result<f64>,
    dirs: usize,
    rng: &mut ChaCha8Rng,
    tol: f64,
) -> Result<VerificationReport> {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for _ in 0..dirs {
        let d = random_vec(x.len(), rng);
        let mut xp = x.clone();
        let mut xm = x.clone();
        linalg::axpy(h, &d, &mut xp.data);
        linalg::axpy(-h, &d, &mut xm.data);
        let fd = (f(&xp)? - f(&xm)?) / (2.0 * h);
        let an = linalg::dot(&grad.data, &d);
        max_abs = max_abs.max((fd - an).abs());
        worst = worst.max(rel_fd(fd, an, 1e-9));
    }
    Ok(VerificationReport::new(ClaimId::Gradcheck, label, "finite-difference", max_abs, worst, tol))
}

fn loss_pair(g: &Geometry, dist: &MaskDistribution, rng: &mut ChaCha8Rng) -> Result<(MeasurementPair, WeightDiagonal)> {
    let x = crate::phantom::phantom_set(1, g.n_pixels, 2, 4, rng.random())?.remove(0);
    let noise = crate::training::NoiseConfig::default();
    let pair = crate::training::make_training_pair(&x, g, dist, &noise, true, rng)?;
    Ok((pair, compute_weight_diagonal(dist)?))
}

fn loss_cotangent_checks(seed: u64) -> Result<Vec<VerificationReport>> {
    let g = Geometry::new(16, 20)?;
    let dist = MaskDistribution::uniform(6, 20)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pair, w) = loss_pair(&g, &dist, &mut rng)?;
    let x = random_image(16, &mut rng);
    [LossKind::SelfWeighted, LossKind::SupOperator, LossKind::SupPlain]
        .into_iter()
        .map(|kind| {
            let (_, cot) = evaluate_loss(kind, &x, &pair, &w, &g)?;
            directional_fd(
                &format!("loss cotangent {}", kind.name()),
                &x,
                &cot,
                |z| Ok(evaluate_loss(kind, z, &pair, &w, &g)?.0),
                10,
                &mut rng,
                1e-6,
            )
        })
        .collect()
}

fn jfb_depth_one_checks(seed: u64) -> Result<Vec<VerificationReport>> {
    let g = Geometry::new(12, 20)?;
    let dist = MaskDistribution::uniform(6, 20)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = DenoiserSpec {
        n_scales: 2,
        channels: 3,
        resolution: 12,
        ..Default::default()
    };
    let p = init_denoiser(&spec, seed)?;
    let (pair, w) = loss_pair(&g, &dist, &mut rng)?;
    let deq = DeqConfig {
        fp_max_iter: 1,
        ..Default::default()
    };
    let gamma = deq.resolve_gamma(&g)?;
    let x0 = Image::zeros(12);
    [LossKind::SelfWeighted, LossKind::SupOperator, LossKind::SupPlain]
        .into_iter()
        .map(|kind| {
            let fp = fixed_point_solve_with_gamma(&pair.y, &pair.mask, &p, &deq, gamma, &g)?;
            let op = TOperator {
                y: &pair.y,
                mask: &pair.mask,
                params: &p,
                alpha: deq.alpha,
                gamma,
                geometry: &g,
            };
            let (_, cot) = evaluate_loss(kind, &fp.x_bar, &pair, &w, &g)?;
            let grad = single_application_vjp(&op, &fp.x_prev, &cot)?.0.flatten();
            let obj = |q: &DenoiserParams| -> Result<f64> {
                let out = TOperator { params: q, ..op }.apply(&x0)?;
                Ok(evaluate_loss(kind, &out, &pair, &w, &g)?.0)
            };
            // random parameter-space directions keep the derivative at the
            // scale of |grad|, away from the difference quotient's noise floor;
            // a direction whose two probes land on different branches of the
            // leaky-relu or the projection has no derivative to compare against
            let base = p.flatten();
            let h = 1e-6;
            let at_base = branch_pattern(&op, &x0)?;
            let (mut worst, mut max_abs): (f64, f64) = (0.0, 0.0);
            let (mut used, mut skipped) = (0, 0);
            while used < 20 && skipped < 200 {
                let d = random_vec(base.len(), &mut rng);
                let mut q = p.clone();
                let mut f = base.clone();
                linalg::axpy(h, &d, &mut f);
                q.set_flat(&f)?;
                let same_up = branch_pattern(&TOperator { params: &q, ..op }, &x0)? == at_base;
                let up = obj(&q)?;
                linalg::axpy(-2.0 * h, &d, &mut f);
                q.set_flat(&f)?;
                let same_down = branch_pattern(&TOperator { params: &q, ..op }, &x0)? == at_base;
                if !(same_up && same_down) {
                    skipped += 1;
                    continue;
                }
                used += 1;
                let fd = (up - obj(&q)?) / (2.0 * h);
                let an = linalg::dot(&grad, &d);
                max_abs = max_abs.max((fd - an).abs());
                worst = worst.max(rel_fd(fd, an, 1e-9));
            }
            if used < 20 {
                worst = f64::NAN;
            }
            Ok(VerificationReport::new(
                ClaimId::Gradcheck,
                format!("depth-1 jfb {}", kind.name()),
                "finite-difference",
                max_abs,
                worst,
                1e-5,
            )
            .with_details(format!("{used} directions, {skipped} redrawn at a kink")))
        })
        .collect()
}

/// Activation signs inside the denoiser plus the sign of every value fed to
/// the nonnegativity projection.
fn branch_pattern(op: &TOperator<'_>, x: &Image) -> Result<Vec<bool>> {
    let rec = op.apply_recorded(x)?;
    let mut pat = rec.tape.activation_pattern();
    pat.extend(rec.pre.iter().map(|v| *v > 0.0));
    Ok(pat)
}

/// Small randomized network used by the denoiser checks.
pub fn gradcheck_network(n_scales: usize, seed: u64) -> Result<DenoiserParams> {
    let spec = DenoiserSpec {
        n_scales,
        channels: 3,
        resolution: 8,
        ..Default::default()
    };
    let mut p = init_denoiser(&spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for l in &mut p.layers {
        for b in &mut l.bias {
            *b = rng.random::<f64>() - 0.5;
        }
    }
    Ok(p)
}

/// Every registered finite-difference and dense-matrix oracle.
pub fn gradcheck_all(seed: u64) -> Result<Vec<VerificationReport>> {
    let s = |k: u64| derive_seed(seed, &[0x9c, k]);
    let mut out = vec![
        adjoint_check(s(0))?,
        spectral_norm_check(s(1))?,
        fidelity_gradient_check(s(2))?,
        conv_dense_check(&gradcheck_network(1, s(3))?, s(4))?,
        gradcheck_denoiser(&gradcheck_network(1, s(5))?, s(6), None)?,
        gradcheck_denoiser(&gradcheck_network(2, s(7))?, s(8), None)?,
    ];
    out.extend(loss_cotangent_checks(s(9))?);
    out.extend(jfb_depth_one_checks(s(10))?);
    Ok(out)
}

pub const REPORT_HEADER: [&str; 9] = [
    "claim_id",
    "label",
    "mode",
    "max_abs_error",
    "rel_error",
    "tolerance",
    "passed",
    "rank_flag",
    "details",
];

pub fn write_reports_csv(path: &Path, reports: &[VerificationReport]) -> Result<()> {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.claim_id.name().to_string(),
                r.label.clone(),
                r.mode.clone(),
                fmt_f64(r.max_abs_error),
                fmt_f64(r.rel_error),
                fmt_f64(r.tolerance),
                r.passed.to_string(),
                r.rank.map_or(String::new(), |k| if k.deficient { "rank-deficient".into() } else { "full-rank".into() }),
                r.details.clone(),
            ]
        })
        .collect();
    write_csv(path, &REPORT_HEADER, &rows)
}

pub fn render_text(reports: &[VerificationReport]) -> String {
    let mut s = String::new();
    for r in reports {
        s.push_str(&format!(
            "[{}] {:<9} {:<32} {:<18} rel {:.3e} (tol {:.1e})  max|err| {:.3e}\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.claim_id.name(),
            r.label,
            r.mode,
            r.rel_error,
            r.tolerance,
            r.max_abs_error
        ));
        if !r.details.is_empty() {
            s.push_str(&format!("       {}\n", r.details));
        }
        if let Some(k) = r.rank.filter(|k| k.deficient) {
            s.push_str(&format!(
                "       flag: A has numerical rank {}/{} (sigma_min {:.3e}, sigma_max {:.3e})\n",
                k.rank, k.cols, k.sigma_min, k.sigma_max
            ));
        }
    }
    s
}

pub fn write_reports_text(path: &Path, reports: &[VerificationReport]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| TomoError::io(path, e))?;
    f.write_all(render_text(reports).as_bytes()).map_err(|e| TomoError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_law() {
        let x = [1e2, 1e3, 1e4];
        let y = x.map(|v: f64| 3.0 * v.powf(-0.5));
        assert!((loglog_slope(&x, &y) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn agreement_of_identical_vectors() {
        let a = [1.0, -2.0, 0.0];
        let (m, r, c) = gradient_agreement(&a, &a);
        assert_eq!((m, r), (0.0, 0.0));
        assert!(c.abs() < 1e-15);
        assert_eq!(gradient_agreement(&[0.0], &[0.0]).2, 0.0);
    }

    #[test]
    fn nan_never_passes() {
        assert!(!VerificationReport::new(ClaimId::Prop1, "x", "exact", f64::NAN, f64::NAN, 1.0).passed);
    }
}
