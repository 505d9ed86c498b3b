//! Baselines: filtered back-projection and TV-regularized nonnegative least
//! squares.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Result, TomoError};
use crate::geometry::{Geometry, Image, Sinogram};
use crate::linalg;
use crate::metrics::psnr;
use crate::radon::{backproject_angles, masked_operator_norm, project_angles};
use crate::sampling::AngleMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FbpFilter {
    RamLak,
    SheppLogan,
    /// Unfiltered back-projection with the same scaling.
    None,
}

fn filter_response(filter: FbpFilter, len: usize, ds: f64) -> Vec<Complex<f64>> {
    // spatial Ram-Lak kernel sampled on the detector grid, wrapped circularly
    let mut h = vec![Complex::new(0.0, 0.0); len];
    let half = len / 2;
    for (i, hv) in h.iter_mut().enumerate() {
        let k = if i <= half { i as i64 } else { i as i64 - len as i64 };
        let v = if k == 0 {
            1.0 / (4.0 * ds * ds)
        } else if k % 2 != 0 {
            -1.0 / (std::f64::consts::PI.powi(2) * (k * k) as f64 * ds * ds)
        } else {
            0.0
        };
        hv.re = v;
    }
    FftPlanner::new().plan_fft_forward(len).process(&mut h);
    if filter == FbpFilter::SheppLogan {
        for (i, hv) in h.iter_mut().enumerate() {
            let k = if i <= half { i as f64 } else { i as f64 - len as f64 };
            let a = std::f64::consts::PI * k / len as f64;
            if a != 0.0 {
                *hv *= a.sin() / a;
            }
        }
    }
    h
}

/// Ramp-filters each row: `q = ds * (p * h)` via zero-padded FFT.
pub fn filter_sinogram(y: &Sinogram, ds: f64, filter: FbpFilter) -> Sinogram {
    if filter == FbpFilter::None {
        return y.clone();
    }
    let nd = y.n_detectors;
    let len = (2 * nd).next_power_of_two();
    let resp = filter_response(filter, len, ds);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let rows: Vec<Vec<f64>> = (0..y.n_angles)
        .into_par_iter()
        .map(|a| {
            let mut buf = vec![Complex::new(0.0, 0.0); len];
            for (b, &v) in buf.iter_mut().zip(y.row(a)) {
                b.re = v;
            }
            fwd.process(&mut buf);
            for (b, r) in buf.iter_mut().zip(&resp) {
                *b *= r;
            }
            inv.process(&mut buf);
            let s = ds / len as f64;
            buf[..nd].iter().map(|c| c.re * s).collect()
        })
        .collect();
    Sinogram::from_vec(y.n_angles, nd, rows.concat()).expect("row lengths")
}

/// Filtered back-projection over the angles of `mask`.
///
/// The back-projection is the exact adjoint of the projector, rescaled by
/// `(pi / |mask|) * ds / ps^2` so that it approximates the continuous
/// inversion integral over `[0, pi)`.
pub fn fbp(y: &Sinogram, mask: &AngleMask, g: &Geometry, filter: FbpFilter) -> Result<Image> {
    g.validate()?;
    mask.check_sinogram(y, g.n_detectors)?;
    let q = filter_sinogram(y, g.detector_spacing, filter);
    let mut img = backproject_angles(&q, g, mask.indices())?;
    let scale = std::f64::consts::PI / mask.len() as f64 * g.detector_spacing
        / (g.pixel_spacing * g.pixel_spacing);
    linalg::scale(&mut img.data, scale);
    Ok(img)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Fixed(f64),
    /// `1 / L` with `L` a slightly inflated estimate of `||M A||^2`.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub step_rule: StepRule,
    /// Dual iterations per proximal evaluation.
    pub inner_iters: usize,
}

impl Default for TvConfig {
    fn default() -> Self {
        TvConfig {
            lambda: 1e-3,
            max_iters: 300,
            tol: 1e-5,
            step_rule: StepRule::Adaptive,
            inner_iters: 30,
        }
    }
}

impl TvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(TomoError::config("tv lambda must be finite and >= 0"));
        }
        if self.max_iters == 0 || self.inner_iters == 0 {
            return Err(TomoError::config("tv iteration counts must be >= 1"));
        }
        if !(self.tol > 0.0) {
            return Err(TomoError::config("tv tol must be > 0"));
        }
        if let StepRule::Fixed(t) = self.step_rule {
            if !(t > 0.0 && t.is_finite()) {
                return Err(TomoError::config("tv step must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TvResult {
    pub image: Image,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each outer iteration.
    pub objective: Vec<f64>,
}

/// Forward-difference gradient with Neumann boundary: `(dx, dy)` stacked.
fn grad(x: &[f64], n: usize) -> Vec<f64> {
    let mut g = vec![0.0; 2 * n * n];
    let (gx, gy) = g.split_at_mut(n * n);
    for r in 0..n {
        for c in 0..n {
            let i = r * n + c;
            if c + 1 < n {
                gx[i] = x[i + 1] - x[i];
            }
            if r + 1 < n {
                gy[i] = x[i + n] - x[i];
            }
        }
    }
    g
}

/// Adjoint of [`grad`] (negative divergence).
fn grad_adjoint(p: &[f64], n: usize) -> Vec<f64> {
    let (px, py) = p.split_at(n * n);
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let i = r * n + c;
            if c + 1 < n {
                out[i] -= px[i];
                out[i + 1] += px[i];
            }
            if r + 1 < n {
                out[i] -= py[i];
                out[i + n] += py[i];
            }
        }
    }
    out
}

/// Isotropic total variation.
pub fn total_variation(x: &Image) -> f64 {
    let n = x.side;
    let g = grad(&x.data, n);
    let (gx, gy) = g.split_at(n * n);
    gx.iter().zip(gy).map(|(a, b)| (a * a + b * b).sqrt()).sum()
}

/// `min_x 1/2 ||x - z||^2 + w TV(x)` subject to `x >= 0`, by accelerated
/// primal-dual iterations (strong convexity 1, `||grad||^2 <= 8`). The dual
/// variable is warm-started and updated in place.
fn prox_tv_nonneg(z: &[f64], n: usize, w: f64, dual: &mut [f64], iters: usize) -> Vec<f64> {
    let primal = |p: &[f64]| -> Vec<f64> {
        let d = grad_adjoint(p, n);
        z.iter().zip(&d).map(|(zi, di)| (zi - di).max(0.0)).collect()
    };
    if w == 0.0 {
        dual.iter_mut().for_each(|v| *v = 0.0);
        return z.iter().map(|v| v.max(0.0)).collect();
    }
    let mut tau = 1.0 / 8f64.sqrt();
    let mut sigma = 1.0 / 8f64.sqrt();
    let mut x = primal(dual);
    let mut x_bar = x.clone();
    let nn = n * n;
    for _ in 0..iters {
        let gb = grad(&x_bar, n);
        for i in 0..nn {
            let a = dual[i] + sigma * gb[i];
            let b = dual[i + nn] + sigma * gb[i + nn];
            let m = (a * a + b * b).sqrt();
            let s = if m > w { w / m } else { 1.0 };
            dual[i] = a * s;
            dual[i + nn] = b * s;
        }
        let kt = grad_adjoint(dual, n);
        let x_new: Vec<f64> = x
            .iter()
            .zip(&kt)
            .zip(z)
            .map(|((xi, ki), zi)| ((xi - tau * ki + tau * zi) / (1.0 + tau)).max(0.0))
            .collect();
        let theta = 1.0 / (1.0 + 2.0 * tau).sqrt();
        tau *= theta;
        sigma /= theta;
        x_bar = x_new
            .iter()
            .zip(&x)
            .map(|(a, b)| a + theta * (a - b))
            .collect();
        x = x_new;
    }
    x
}

fn tv_objective(x: &Image, y: &Sinogram, angles: &[usize], g: &Geometry, lambda: f64) -> Result<f64> {
    let r = project_angles(x, g, angles)?;
    let fid: f64 = r.data.iter().zip(&y.data).map(|(a, b)| (a - b).powi(2)).sum();
    let reg = if lambda > 0.0 { lambda * total_variation(x) } else { 0.0 };
    Ok(0.5 * fid + reg)
}

/// Approximate minimizer of `1/2 ||y - M A x||^2 + lambda TV(x)` over `x >= 0`.
///
/// Outer loop: monotone FISTA, so the objective never increases between
/// outer iterations. Each proximal step is solved by warm-started
/// accelerated primal-dual iterations.
pub fn tv_reconstruct(y: &Sinogram, mask: &AngleMask, g: &Geometry, cfg: &TvConfig) -> Result<TvResult> {
    cfg.validate()?;
    g.validate()?;
    mask.check_sinogram(y, g.n_detectors)?;
    let n = g.n_pixels;
    let angles = mask.indices();
    let step = match cfg.step_rule {
        StepRule::Fixed(t) => t,
        StepRule::Adaptive => {
            let l = masked_operator_norm(g, mask);
            1.0 / (1.01 * l * l)
        }
    };
    let mut x = Image::zeros(n);
    let mut f_x = tv_objective(&x, y, angles, g, cfg.lambda)?;
    let mut yk = x.data.clone();
    let mut t = 1.0f64;
    let mut dual = vec![0.0; 2 * n * n];
    let mut objective = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        let yk_img = Image::from_vec(n, yk)?;
        let r = project_angles(&yk_img, g, angles)?;
        let res = Sinogram::from_vec(r.n_angles, r.n_detectors, linalg::sub(&r.data, &y.data))?;
        let gr = backproject_angles(&res, g, angles)?;
        let mut zin = yk_img.data.clone();
        linalg::axpy(-step, &gr.data, &mut zin);
        let z = prox_tv_nonneg(&zin, n, step * cfg.lambda, &mut dual, cfg.inner_iters);
        let z = Image::from_vec(n, z)?;
        let f_z = tv_objective(&z, y, angles, g, cfg.lambda)?;
        let gmap = linalg::norm(&linalg::sub(&z.data, &yk_img.data))
            / linalg::norm(&yk_img.data).max(1e-12);
        let x_prev = std::mem::replace(&mut x, z.clone());
        if f_z <= f_x {
            f_x = f_z;
        } else {
            x = x_prev.clone();
        }
        // y_{k+1} = x_k + (t_k / t_{k+1}) (z_k - x_k) + ((t_k - 1) / t_{k+1}) (x_k - x_{k-1})
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let (a, b) = (t / t_next, (t - 1.0) / t_next);
        yk = (0..n * n)
            .map(|i| x.data[i] + a * (z.data[i] - x.data[i]) + b * (x.data[i] - x_prev.data[i]))
            .collect();
        t = t_next;
        objective.push(f_x);
        if gmap < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(TvResult {
        image: x,
        iterations,
        converged,
        objective,
    })
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Picks the `lambda` from `grid` whose reconstruction of `y` has the best
/// PSNR against `truth` (data range = max of `truth`). Returns
/// `(lambda, psnr)`.
pub fn tune_tv_lambda(
    y: &Sinogram,
    mask: &AngleMask,
    g: &Geometry,
    truth: &Image,
    base: &TvConfig,
    grid: &[f64],
) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(TomoError::config("lambda grid is empty"));
    }
    let scores: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&lambda| {
            let cfg = TvConfig { lambda, ..*base };
            let rec = tv_reconstruct(y, mask, g, &cfg)?;
            Ok((lambda, psnr(&rec.image, truth, truth.max())?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(scores
        .into_iter()
        .fold((f64::NAN, f64::NEG_INFINITY), |best, s| if s.1 > best.1 { s } else { best }))
}
