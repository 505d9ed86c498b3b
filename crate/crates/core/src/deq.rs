//! The nonnegative equilibrium operator
//! `T(x) = max(0, alpha f(s) + (1 - alpha) s)`, `s = x - gamma (MA)^T (MAx - y)`,
//! and its fixed-point solver (plain or Anderson-accelerated).

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::classical::{fbp, FbpFilter};
use crate::denoiser::{denoiser_forward, denoiser_forward_with_tape, DenoiserParams, Tape};
use crate::error::{Result, TomoError};
use crate::geometry::{Geometry, Image, Sinogram};
use crate::io::{fmt_f64, write_csv};
use crate::linalg;
use crate::radon::{grad_data_fidelity, masked_operator_norm};
use crate::sampling::AngleMask;

/// Relative-residual denominator floor.
pub const RESIDUAL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    Value(f64),
    /// `1 / ||M_s A||` with `M_s` the `s_ref` equispaced angles.
    AutoFromSpectralNorm { s_ref: usize },
    /// `c / ||M_s A||^2`, the classical gradient-step scaling (`c <= 2`).
    AutoSquared { s_ref: usize, c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AndersonConfig {
    pub depth: usize,
    /// Tikhonov weight, relative to the mean diagonal of the residual Gram matrix.
    pub ridge: f64,
    pub damping: f64,
}

impl Default for AndersonConfig {
    fn default() -> Self {
        AndersonConfig {
            depth: 5,
            ridge: 1e-8,
            damping: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitPolicy {
    Zero,
    Fbp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeqConfig {
    pub alpha: f64,
    pub gamma: Gamma,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    pub anderson: Option<AndersonConfig>,
    pub init: InitPolicy,
}

impl Default for DeqConfig {
    fn default() -> Self {
        DeqConfig {
            alpha: 0.5,
            gamma: Gamma::AutoFromSpectralNorm { s_ref: 12 },
            fp_tol: 1e-3,
            fp_max_iter: 100,
            anderson: Some(AndersonConfig::default()),
            init: InitPolicy::Zero,
        }
    }
}

impl DeqConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(TomoError::config("alpha must lie in (0, 1]"));
        }
        if !(self.fp_tol > 0.0) {
            return Err(TomoError::config("fp_tol must be > 0"));
        }
        if self.fp_max_iter == 0 {
            return Err(TomoError::config("fp_max_iter must be >= 1"));
        }
        match self.gamma {
            Gamma::Value(v) if !(v > 0.0 && v.is_finite()) => {
                return Err(TomoError::config("gamma must be > 0"))
            }
            Gamma::AutoFromSpectralNorm { s_ref } | Gamma::AutoSquared { s_ref, .. } if s_ref == 0 => {
                return Err(TomoError::config("gamma s_ref must be >= 1"))
            }
            Gamma::AutoSquared { c, .. } if !(c > 0.0 && c <= 2.0) => {
                return Err(TomoError::config("gamma scale c must lie in (0, 2]"))
            }
            _ => {}
        }
        if let Some(a) = self.anderson {
            if a.depth == 0 {
                return Err(TomoError::config("anderson depth must be >= 1"));
            }
            if !(a.ridge >= 0.0) || !(a.damping > 0.0 && a.damping <= 1.0) {
                return Err(TomoError::config("anderson ridge >= 0 and damping in (0, 1] required"));
            }
        }
        Ok(())
    }

    /// Numeric step size for this geometry.
    pub fn resolve_gamma(&self, g: &Geometry) -> Result<f64> {
        let norm = |s_ref: usize| -> Result<f64> {
            let m = AngleMask::equispaced(s_ref, g.n_angles_total)?;
            Ok(masked_operator_norm(g, &m))
        };
        match self.gamma {
            Gamma::Value(v) => Ok(v),
            Gamma::AutoFromSpectralNorm { s_ref } => Ok(1.0 / norm(s_ref)?),
            Gamma::AutoSquared { s_ref, c } => Ok(c / norm(s_ref)?.powi(2)),
        }
    }
}

/// One measurement with everything `T` needs, `gamma` already numeric.
#[derive(Debug, Clone, Copy)]
pub struct TOperator<'a> {
    pub y: &'a Sinogram,
    pub mask: &'a AngleMask,
    pub params: &'a DenoiserParams,
    pub alpha: f64,
    pub gamma: f64,
    pub geometry: &'a Geometry,
}

/// Intermediates of one application, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct TApplication {
    /// Gradient-step point `s`.
    pub s: Image,
    /// Value before the nonnegativity projection.
    pub pre: Vec<f64>,
    pub tape: Tape,
    pub out: Image,
}

impl TOperator<'_> {
    fn gradient_step(&self, x: &Image) -> Result<Image> {
        let grad = grad_data_fidelity(x, self.y, self.mask, self.geometry)?;
        let mut s = x.clone();
        linalg::axpy(-self.gamma, &grad.data, &mut s.data);
        Ok(s)
    }

    fn combine(&self, fs: &Image, s: &Image) -> Vec<f64> {
        fs.data
            .iter()
            .zip(&s.data)
            .map(|(f, s)| self.alpha * f + (1.0 - self.alpha) * s)
            .collect()
    }

    pub fn apply(&self, x: &Image) -> Result<Image> {
        let s = self.gradient_step(x)?;
        let fs = denoiser_forward(self.params, &s)?;
        let pre = self.combine(&fs, &s);
        Image::from_vec(x.side, pre.into_iter().map(|v| v.max(0.0)).collect())
    }

    pub fn apply_recorded(&self, x: &Image) -> Result<TApplication> {
        let s = self.gradient_step(x)?;
        let (fs, tape) = denoiser_forward_with_tape(self.params, &s)?;
        let pre = self.combine(&fs, &s);
        let out = Image::from_vec(x.side, pre.iter().map(|v| v.max(0.0)).collect())?;
        Ok(TApplication { s, pre, tape, out })
    }
}

/// `T(x)` for a single input.
pub fn apply_t_theta(
    x: &Image,
    y: &Sinogram,
    mask: &AngleMask,
    p: &DenoiserParams,
    cfg: &DeqConfig,
    g: &Geometry,
) -> Result<Image> {
    cfg.validate()?;
    let gamma = cfg.resolve_gamma(g)?;
    TOperator {
        y,
        mask,
        params: p,
        alpha: cfg.alpha,
        gamma,
        geometry: g,
    }
    .apply(x)
}

#[derive(Debug, Clone)]
pub struct FixedPointResult {
    /// `T(x_prev)`, the returned equilibrium estimate.
    pub x_bar: Image,
    /// Input of the final application (where the backward pass linearizes).
    pub x_prev: Image,
    pub n_iters: usize,
    /// `||T(x_prev) - x_prev|| / max(||x_prev||, eps)`.
    pub final_residual: f64,
    pub converged: bool,
    pub residual_history: Vec<f64>,
    /// Anderson result was replaced by the plain iteration.
    pub used_fallback: bool,
    /// Some residual after iteration 3 exceeded its predecessor.
    pub nonmonotone: bool,
}

fn relative_change(new: &[f64], old: &[f64]) -> f64 {
    linalg::norm(&linalg::sub(new, old)) / linalg::norm(old).max(RESIDUAL_EPS)
}

/// Whether the history rises anywhere after the third iteration.
pub fn rises_after_third(history: &[f64]) -> bool {
    history.windows(2).enumerate().any(|(i, w)| i + 1 >= 3 && w[1] > w[0])
}

fn finish(
    x_prev: Image,
    x_bar: Image,
    history: Vec<f64>,
    tol: f64,
) -> FixedPointResult {
    let final_residual = *history.last().unwrap_or(&f64::INFINITY);
    FixedPointResult {
        x_bar,
        x_prev,
        n_iters: history.len(),
        final_residual,
        converged: final_residual < tol,
        nonmonotone: rises_after_third(&history),
        residual_history: history,
        used_fallback: false,
    }
}

fn solve_plain(op: &TOperator<'_>, x0: Image, tol: f64, max_iter: usize) -> Result<FixedPointResult> {
    let mut x = x0;
    let mut history = Vec::new();
    for _ in 0..max_iter {
        let fx = op.apply(&x)?;
        let res = relative_change(&fx.data, &x.data);
        history.push(res);
        if res < tol || history.len() == max_iter || !res.is_finite() {
            return Ok(finish(x, fx, history, tol));
        }
        x = fx;
    }
    unreachable!("max_iter >= 1")
}

fn anderson_weights(residuals: &[Vec<f64>], ridge: f64) -> Option<Vec<f64>> {
    let m = residuals.len();
    let mut h = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = linalg::dot(&residuals[i], &residuals[j]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    let reg = ridge * (h.trace() / m as f64).max(f64::MIN_POSITIVE);
    for i in 0..m {
        h[(i, i)] += reg;
    }
    let z = h.lu().solve(&DVector::from_element(m, 1.0))?;
    let sum: f64 = z.iter().sum();
    let w: Vec<f64> = z.iter().map(|v| v / sum).collect();
    w.iter().all(|v| v.is_finite()).then_some(w)
}

fn solve_anderson(
    op: &TOperator<'_>,
    x0: Image,
    tol: f64,
    max_iter: usize,
    a: &AndersonConfig,
) -> Result<FixedPointResult> {
    let n = x0.side;
    let mut x = x0;
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut fs: Vec<Vec<f64>> = Vec::new();
    let mut history = Vec::new();
    loop {
        let fx = op.apply(&x)?;
        let res = relative_change(&fx.data, &x.data);
        history.push(res);
        if res < tol || history.len() == max_iter || !res.is_finite() {
            return Ok(finish(x, fx, history, tol));
        }
        xs.push(x.data.clone());
        fs.push(fx.data.clone());
        if xs.len() > a.depth {
            xs.remove(0);
            fs.remove(0);
        }
        let residuals: Vec<Vec<f64>> = fs.iter().zip(&xs).map(|(f, x)| linalg::sub(f, x)).collect();
        let next = match anderson_weights(&residuals, a.ridge) {
            Some(w) => {
                let mut v = vec![0.0; n * n];
                for (k, wk) in w.iter().enumerate() {
                    linalg::axpy(a.damping * wk, &fs[k], &mut v);
                    if a.damping < 1.0 {
                        linalg::axpy((1.0 - a.damping) * wk, &xs[k], &mut v);
                    }
                }
                v
            }
            None => {
                // restart from the plain step
                xs.clear();
                fs.clear();
                fx.data.clone()
            }
        };
        x = Image::from_vec(n, next.into_iter().map(|v| v.max(0.0)).collect())?;
    }
}

fn initial_guess(y: &Sinogram, mask: &AngleMask, cfg: &DeqConfig, g: &Geometry) -> Result<Image> {
    Ok(match cfg.init {
        InitPolicy::Zero => Image::zeros(g.n_pixels),
        InitPolicy::Fbp => {
            let mut x = fbp(y, mask, g, FbpFilter::RamLak)?;
            x.data.iter_mut().for_each(|v| *v = v.max(0.0));
            x
        }
    })
}

/// Fixed-point solve with a numeric `gamma` (skips re-estimating the norm).
pub fn fixed_point_solve_with_gamma(
    y: &Sinogram,
    mask: &AngleMask,
    p: &DenoiserParams,
    cfg: &DeqConfig,
    gamma: f64,
    g: &Geometry,
) -> Result<FixedPointResult> {
    cfg.validate()?;
    mask.check_sinogram(y, g.n_detectors)?;
    let op = TOperator {
        y,
        mask,
        params: p,
        alpha: cfg.alpha,
        gamma,
        geometry: g,
    };
    let x0 = initial_guess(y, mask, cfg, g)?;
    match cfg.anderson {
        None => solve_plain(&op, x0, cfg.fp_tol, cfg.fp_max_iter),
        Some(a) => {
            let acc = solve_anderson(&op, x0.clone(), cfg.fp_tol, cfg.fp_max_iter, &a)?;
            let plain = solve_plain(&op, x0, cfg.fp_tol, cfg.fp_max_iter)?;
            // NaN never beats a finite residual
            if acc.final_residual <= plain.final_residual {
                Ok(acc)
            } else {
                Ok(FixedPointResult {
                    used_fallback: true,
                    ..plain
                })
            }
        }
    }
}

pub fn fixed_point_solve(
    y: &Sinogram,
    mask: &AngleMask,
    p: &DenoiserParams,
    cfg: &DeqConfig,
    g: &Geometry,
) -> Result<FixedPointResult> {
    cfg.validate()?;
    let gamma = cfg.resolve_gamma(g)?;
    fixed_point_solve_with_gamma(y, mask, p, cfg, gamma, g)
}

/// `iteration,residual` rows, iterations counted from 1.
pub fn write_residual_csv(path: &Path, history: &[f64]) -> Result<()> {
    let rows: Vec<Vec<String>> = history
        .iter()
        .enumerate()
        .map(|(i, r)| vec![(i + 1).to_string(), fmt_f64(*r)])
        .collect();
    write_csv(path, &["iteration", "residual"], &rows)
}
