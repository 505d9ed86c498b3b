//! Discrete parallel-beam Radon transform and its exact adjoint.
//!
//! Pixel-driven projector with linear detector interpolation: each pixel
//! center is projected onto the detector line of every angle and its value,
//! scaled by `pixel_spacing^2 / detector_spacing`, is split between the two
//! nearest bins. The back-projector gathers with the same weights, so the two
//! operators are exact transposes of one another. Per-angle detector sums
//! equal `sum(x) * pixel_spacing^2 / detector_spacing` for any image whose
//! footprint stays on the detector.

use rayon::prelude::*;

use crate::error::{Result, TomoError};
use crate::geometry::{Geometry, Image, Sinogram};
use crate::linalg;
use crate::sampling::AngleMask;

/// Bin position of a pixel center on the detector line.
#[inline(always)]
fn detector_coord(px: f64, py: f64, cos: f64, sin: f64, inv_ds: f64, center: f64) -> (isize, f64) {
    let u = (px * cos + py * sin) * inv_ds + center;
    let k0 = u.floor();
    (k0 as isize, u - k0)
}

struct Kernel {
    n: usize,
    nd: usize,
    ps: f64,
    inv_ds: f64,
    det_center: f64,
    pix_center: f64,
    weight: f64,
}

impl Kernel {
    fn new(g: &Geometry) -> Self {
        Kernel {
            n: g.n_pixels,
            nd: g.n_detectors,
            ps: g.pixel_spacing,
            inv_ds: 1.0 / g.detector_spacing,
            det_center: (g.n_detectors as f64 - 1.0) / 2.0,
            pix_center: (g.n_pixels as f64 - 1.0) / 2.0,
            weight: g.pixel_spacing * g.pixel_spacing / g.detector_spacing,
        }
    }

    #[inline(always)]
    fn px(&self, col: usize) -> f64 {
        (col as f64 - self.pix_center) * self.ps
    }

    #[inline(always)]
    fn py(&self, row: usize) -> f64 {
        (self.pix_center - row as f64) * self.ps
    }

    fn project_row(&self, x: &[f64], cos: f64, sin: f64, out: &mut [f64]) {
        let nd = self.nd as isize;
        for row in 0..self.n {
            let py = self.py(row);
            let xr = &x[row * self.n..(row + 1) * self.n];
            for (col, &v) in xr.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let (k0, f) =
                    detector_coord(self.px(col), py, cos, sin, self.inv_ds, self.det_center);
                let wv = self.weight * v;
                if k0 >= 0 && k0 < nd {
                    out[k0 as usize] += (1.0 - f) * wv;
                }
                if k0 + 1 >= 0 && k0 + 1 < nd {
                    out[(k0 + 1) as usize] += f * wv;
                }
            }
        }
    }

    fn gather_row(&self, y: &Sinogram, trig: &[(f64, f64)], row: usize, out: &mut [f64]) {
        let nd = self.nd as isize;
        let py = self.py(row);
        for (col, o) in out.iter_mut().enumerate() {
            let px = self.px(col);
            let mut acc = 0.0;
            for (r, &(cos, sin)) in trig.iter().enumerate() {
                let (k0, f) = detector_coord(px, py, cos, sin, self.inv_ds, self.det_center);
                let yr = y.row(r);
                if k0 >= 0 && k0 < nd {
                    acc += (1.0 - f) * yr[k0 as usize];
                }
                if k0 + 1 >= 0 && k0 + 1 < nd {
                    acc += f * yr[(k0 + 1) as usize];
                }
            }
            *o = self.weight * acc;
        }
    }
}

fn trig_table(g: &Geometry, angles: &[usize]) -> Result<Vec<(f64, f64)>> {
    angles
        .iter()
        .map(|&a| {
            if a >= g.n_angles_total {
                Err(TomoError::dim(format!(
                    "angle index {a} out of range for {} angles",
                    g.n_angles_total
                )))
            } else {
                let t = g.angle(a);
                Ok((t.cos(), t.sin()))
            }
        })
        .collect()
}

/// `M A x` for the listed angle indices (rows in the given order).
pub fn project_angles(x: &Image, g: &Geometry, angles: &[usize]) -> Result<Sinogram> {
    g.check_image(x)?;
    let trig = trig_table(g, angles)?;
    let k = Kernel::new(g);
    let mut out = Sinogram::zeros(angles.len(), g.n_detectors);
    out.data
        .par_chunks_mut(g.n_detectors)
        .zip(trig.par_iter())
        .for_each(|(row, &(c, s))| k.project_row(&x.data, c, s, row));
    Ok(out)
}

/// `(M A)^T y` for the listed angle indices.
pub fn backproject_angles(y: &Sinogram, g: &Geometry, angles: &[usize]) -> Result<Image> {
    if y.n_angles != angles.len() || y.n_detectors != g.n_detectors {
        return Err(TomoError::dim(format!(
            "sinogram {}x{} does not match {} angles x {} detectors",
            y.n_angles,
            y.n_detectors,
            angles.len(),
            g.n_detectors
        )));
    }
    let trig = trig_table(g, angles)?;
    let k = Kernel::new(g);
    let n = g.n_pixels;
    let mut out = Image::zeros(n);
    out.data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(row, buf)| k.gather_row(y, &trig, row, buf));
    Ok(out)
}

/// Full-grid forward projection `A x`.
pub fn radon_forward(x: &Image, g: &Geometry) -> Result<Sinogram> {
    let all: Vec<usize> = (0..g.n_angles_total).collect();
    project_angles(x, g, &all)
}

/// Full-grid adjoint `A^T y`.
pub fn radon_adjoint(y: &Sinogram, g: &Geometry) -> Result<Image> {
    if y.n_angles != g.n_angles_total {
        return Err(TomoError::dim(format!(
            "sinogram has {} angles, geometry has {}",
            y.n_angles, g.n_angles_total
        )));
    }
    let all: Vec<usize> = (0..g.n_angles_total).collect();
    backproject_angles(y, g, &all)
}

/// `grad g(x) = (M A)^T (M A x - y)` for `g(x) = 0.5 ||y - M A x||^2`.
pub fn grad_data_fidelity(x: &Image, y: &Sinogram, mask: &AngleMask, g: &Geometry) -> Result<Image> {
    mask.check_sinogram(y, g.n_detectors)?;
    let mut r = project_angles(x, g, mask.indices())?;
    for (ri, yi) in r.data.iter_mut().zip(&y.data) {
        *ri -= yi;
    }
    backproject_angles(&r, g, mask.indices())
}

/// Matrix-free linear map with an adjoint.
pub trait LinearOperator {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64>;
}

/// `M A` restricted to a mask.
#[derive(Debug, Clone)]
pub struct MaskedRadon<'a> {
    pub geometry: &'a Geometry,
    pub angles: Vec<usize>,
}

impl<'a> MaskedRadon<'a> {
    pub fn new(geometry: &'a Geometry, mask: &AngleMask) -> Self {
        MaskedRadon {
            geometry,
            angles: mask.indices().to_vec(),
        }
    }

    pub fn full(geometry: &'a Geometry) -> Self {
        MaskedRadon {
            geometry,
            angles: (0..geometry.n_angles_total).collect(),
        }
    }
}

impl LinearOperator for MaskedRadon<'_> {
    fn input_len(&self) -> usize {
        self.geometry.image_len()
    }

    fn output_len(&self) -> usize {
        self.angles.len() * self.geometry.n_detectors
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let img = Image::from_vec(self.geometry.n_pixels, x.to_vec()).expect("input length");
        project_angles(&img, self.geometry, &self.angles)
            .expect("validated geometry")
            .data
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let s = Sinogram::from_vec(self.angles.len(), self.geometry.n_detectors, y.to_vec())
            .expect("output length");
        backproject_angles(&s, self.geometry, &self.angles)
            .expect("validated geometry")
            .data
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralNormEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest singular value by power iteration on `A^T A`.
///
/// Stops once two successive estimates differ by less than `tol` relative.
/// A non-converged run still returns its last estimate.
pub fn spectral_norm<O: LinearOperator + ?Sized>(
    op: &O,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> SpectralNormEstimate {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..op.input_len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let nv = linalg::norm(&v);
    linalg::scale(&mut v, 1.0 / nv);

    let mut prev = 0.0;
    for it in 1..=max_iter {
        let w = op.apply(&v);
        let sigma = linalg::norm(&w);
        if sigma == 0.0 {
            return SpectralNormEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        let mut z = op.apply_adjoint(&w);
        let nz = linalg::norm(&z);
        linalg::scale(&mut z, 1.0 / nz);
        v = z;
        if it > 1 && (sigma - prev).abs() < tol * sigma {
            return SpectralNormEstimate {
                value: sigma,
                iterations: it,
                converged: true,
            };
        }
        prev = sigma;
    }
    SpectralNormEstimate {
        value: prev,
        iterations: max_iter,
        converged: false,
    }
}

/// `||M A||_2` for a mask, with tolerances suited to step-size selection.
pub fn masked_operator_norm(g: &Geometry, mask: &AngleMask) -> f64 {
    spectral_norm(&MaskedRadon::new(g, mask), 1e-9, 5000, 0x5eed).value
}
