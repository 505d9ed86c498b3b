//! Python bindings. Images and sinograms cross the boundary as nested lists
//! of floats (`list[list[float]]`, rows first).

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tomodeq::classical::{self, FbpFilter, TvConfig};
use tomodeq::denoiser::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use tomodeq::denoiser::{self, DenoiserParams, DenoiserSpec};
use tomodeq::deq::{self, DeqConfig, Gamma};
use tomodeq::phantom::{self, PhantomKind, PhantomSpec};
use tomodeq::sampling::{sample_mask, MaskKind};
use tomodeq::verify::{self, VerificationReport, VerifyMode};
use tomodeq::{metrics, radon, TomoError};

fn py_err(e: TomoError) -> PyErr {
    match e {
        TomoError::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

type Rows = Vec<Vec<f64>>;

fn to_image(rows: Rows) -> PyResult<tomodeq::Image> {
    let side = rows.len();
    if rows.iter().any(|r| r.len() != side) {
        return Err(PyValueError::new_err("image must be a square list of rows"));
    }
    tomodeq::Image::from_vec(side, rows.concat()).map_err(py_err)
}

fn from_image(x: &tomodeq::Image) -> Rows {
    x.data.chunks(x.side.max(1)).map(<[f64]>::to_vec).collect()
}

fn to_sinogram(rows: Rows) -> PyResult<tomodeq::Sinogram> {
    let n_det = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n_det) {
        return Err(PyValueError::new_err("sinogram rows must have equal length"));
    }
    tomodeq::Sinogram::from_vec(rows.len(), n_det, rows.concat()).map_err(py_err)
}

fn from_sinogram(y: &tomodeq::Sinogram) -> Rows {
    (0..y.n_angles).map(|a| y.row(a).to_vec()).collect()
}

/// Parallel-beam geometry on the unit field of view.
#[pyclass(frozen)]
struct Geometry {
    inner: tomodeq::Geometry,
}

#[pymethods]
impl Geometry {
    #[new]
    fn new(n_pixels: usize, n_angles_total: usize) -> PyResult<Self> {
        Ok(Geometry {
            inner: tomodeq::Geometry::new(n_pixels, n_angles_total).map_err(py_err)?,
        })
    }

    #[getter]
    fn n_pixels(&self) -> usize {
        self.inner.n_pixels
    }

    #[getter]
    fn n_angles_total(&self) -> usize {
        self.inner.n_angles_total
    }

    #[getter]
    fn n_detectors(&self) -> usize {
        self.inner.n_detectors
    }

    fn angle(&self, j: usize) -> f64 {
        self.inner.angle(j)
    }

    /// Full sinogram of an image.
    fn forward(&self, image: Rows) -> PyResult<Rows> {
        let x = to_image(image)?;
        Ok(from_sinogram(&radon::radon_forward(&x, &self.inner).map_err(py_err)?))
    }

    /// Projections at the mask's angles only.
    fn project(&self, image: Rows, mask: &AngleMask) -> PyResult<Rows> {
        let x = to_image(image)?;
        Ok(from_sinogram(&radon::project_angles(&x, &self.inner, mask.inner.indices()).map_err(py_err)?))
    }

    /// Exact adjoint of `forward`.
    fn adjoint(&self, sinogram: Rows) -> PyResult<Rows> {
        let y = to_sinogram(sinogram)?;
        Ok(from_image(&radon::radon_adjoint(&y, &self.inner).map_err(py_err)?))
    }

    fn masked_norm(&self, mask: &AngleMask) -> f64 {
        radon::masked_operator_norm(&self.inner, &mask.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Geometry(n_pixels={}, n_angles_total={}, n_detectors={})",
            self.inner.n_pixels, self.inner.n_angles_total, self.inner.n_detectors
        )
    }
}

/// Sorted set of measured angle indices.
#[pyclass(frozen)]
struct AngleMask {
    inner: tomodeq::AngleMask,
}

#[pymethods]
impl AngleMask {
    #[new]
    fn new(indices: Vec<usize>, n_angles_total: usize) -> PyResult<Self> {
        Ok(AngleMask {
            inner: tomodeq::AngleMask::new(indices, n_angles_total).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn equispaced(s: usize, n_angles_total: usize) -> PyResult<Self> {
        Ok(AngleMask {
            inner: tomodeq::AngleMask::equispaced(s, n_angles_total).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn full(n_angles_total: usize) -> Self {
        AngleMask {
            inner: tomodeq::AngleMask::full(n_angles_total),
        }
    }

    /// Draw `s` distinct angles uniformly at random.
    #[staticmethod]
    fn uniform(s: usize, n_angles_total: usize, seed: u64) -> PyResult<Self> {
        let dist = tomodeq::MaskDistribution::new(MaskKind::UniformSubset(s), n_angles_total).map_err(py_err)?;
        let inner = sample_mask(&dist, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(py_err)?;
        Ok(AngleMask { inner })
    }

    #[getter]
    fn indices(&self) -> Vec<usize> {
        self.inner.indices().to_vec()
    }

    #[getter]
    fn n_angles_total(&self) -> usize {
        self.inner.n_angles_total()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("AngleMask({:?}, n_angles_total={})", self.inner.indices(), self.inner.n_angles_total())
    }
}

/// Convolutional denoiser with spectrally normalized layers.
#[pyclass]
struct Denoiser {
    inner: DenoiserParams,
}

#[pymethods]
impl Denoiser {
    #[new]
    #[pyo3(signature = (channels = 16, n_scales = 2, resolution = 32, seed = 0))]
    fn new(channels: usize, n_scales: usize, resolution: usize, seed: u64) -> PyResult<Self> {
        let spec = DenoiserSpec {
            channels,
            n_scales,
            resolution,
            ..Default::default()
        };
        Ok(Denoiser {
            inner: denoiser::init_denoiser(&spec, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Denoiser {
            inner: load_checkpoint(&path).map_err(py_err)?.params,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let ck = Checkpoint {
            params: self.inner.clone(),
            resume: None,
        };
        save_checkpoint(&path, &ck).map_err(py_err)
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    fn parameters(&self) -> Vec<f64> {
        self.inner.flatten()
    }

    fn set_parameters(&mut self, flat: Vec<f64>) -> PyResult<()> {
        self.inner.set_flat(&flat).map_err(py_err)
    }

    fn __call__(&self, image: Rows) -> PyResult<Rows> {
        let x = to_image(image)?;
        Ok(from_image(&denoiser::denoiser_forward(&self.inner, &x).map_err(py_err)?))
    }
}

#[pyfunction]
fn shepp_logan(side: usize) -> PyResult<Rows> {
    let spec = PhantomSpec {
        kind: PhantomKind::SheppLogan,
        side,
        seed: 0,
    };
    Ok(from_image(&phantom::generate_phantom(&spec).map_err(py_err)?))
}

#[pyfunction]
#[pyo3(signature = (count, side, seed, n_min = 3, n_max = 6))]
fn random_phantoms(count: usize, side: usize, seed: u64, n_min: usize, n_max: usize) -> PyResult<Vec<Rows>> {
    let set = phantom::phantom_set(count, side, n_min, n_max, seed).map_err(py_err)?;
    Ok(set.iter().map(from_image).collect())
}

fn parse_filter(name: &str) -> PyResult<FbpFilter> {
    match name {
        "ram-lak" => Ok(FbpFilter::RamLak),
        "shepp-logan" => Ok(FbpFilter::SheppLogan),
        "none" => Ok(FbpFilter::None),
        other => Err(PyValueError::new_err(format!("unknown filter {other:?}"))),
    }
}

/// Filtered back-projection of a masked sinogram (one row per mask angle).
#[pyfunction]
#[pyo3(signature = (sinogram, mask, geometry, filter = "ram-lak"))]
fn fbp(sinogram: Rows, mask: &AngleMask, geometry: &Geometry, filter: &str) -> PyResult<Rows> {
    let y = to_sinogram(sinogram)?;
    let x = classical::fbp(&y, &mask.inner, &geometry.inner, parse_filter(filter)?).map_err(py_err)?;
    Ok(from_image(&x))
}

#[pyfunction]
#[pyo3(signature = (sinogram, mask, geometry, lam, max_iters = 300))]
fn tv_reconstruct(sinogram: Rows, mask: &AngleMask, geometry: &Geometry, lam: f64, max_iters: usize) -> PyResult<Rows> {
    let y = to_sinogram(sinogram)?;
    let cfg = TvConfig {
        lambda: lam,
        max_iters,
        ..Default::default()
    };
    let r = classical::tv_reconstruct(&y, &mask.inner, &geometry.inner, &cfg).map_err(py_err)?;
    Ok(from_image(&r.image))
}

/// Fixed point of the DEQ operator; returns `(image, iterations, residual)`.
#[pyfunction]
#[pyo3(signature = (sinogram, mask, geometry, denoiser, alpha = 0.5, gamma = None, fp_tol = 1e-3, fp_max_iter = 100, anderson = true))]
#[allow(clippy::too_many_arguments)]
fn deq_reconstruct(
    sinogram: Rows,
    mask: &AngleMask,
    geometry: &Geometry,
    denoiser: &Denoiser,
    alpha: f64,
    gamma: Option<f64>,
    fp_tol: f64,
    fp_max_iter: usize,
    anderson: bool,
) -> PyResult<(Rows, usize, f64)> {
    let y = to_sinogram(sinogram)?;
    let defaults = DeqConfig::default();
    let cfg = DeqConfig {
        alpha,
        gamma: gamma.map_or(Gamma::AutoFromSpectralNorm { s_ref: mask.inner.len() }, Gamma::Value),
        fp_tol,
        fp_max_iter,
        anderson: if anderson { defaults.anderson } else { None },
        ..defaults
    };
    let r = deq::fixed_point_solve(&y, &mask.inner, &denoiser.inner, &cfg, &geometry.inner).map_err(py_err)?;
    Ok((from_image(&r.x_bar), r.n_iters, r.final_residual))
}

#[pyfunction]
#[pyo3(signature = (x, reference, data_range = None))]
fn psnr(x: Rows, reference: Rows, data_range: Option<f64>) -> PyResult<f64> {
    let (x, r) = (to_image(x)?, to_image(reference)?);
    let range = data_range.unwrap_or_else(|| r.max());
    metrics::psnr(&x, &r, range).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (x, reference, data_range = None))]
fn ssim(x: Rows, reference: Rows, data_range: Option<f64>) -> PyResult<f64> {
    let (x, r) = (to_image(x)?, to_image(reference)?);
    let range = data_range.unwrap_or_else(|| r.max());
    metrics::ssim(&x, &r, range).map_err(py_err)
}

fn report_dict<'py>(py: Python<'py>, r: &VerificationReport) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let d = pyo3::types::PyDict::new(py);
    d.set_item("claim", r.claim_id.name())?;
    d.set_item("label", &r.label)?;
    d.set_item("mode", &r.mode)?;
    d.set_item("max_abs_error", r.max_abs_error)?;
    d.set_item("rel_error", r.rel_error)?;
    d.set_item("tolerance", r.tolerance)?;
    d.set_item("passed", r.passed)?;
    d.set_item("details", &r.details)?;
    Ok(d)
}

/// Exact check that the weighted masked normal operator averages to `AᵀA`.
#[pyfunction]
fn verify_unbiased_normal_operator<'py>(
    py: Python<'py>,
    n_pixels: usize,
    n_angles_total: usize,
    s: usize,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let g = tomodeq::Geometry::new(n_pixels, n_angles_total).map_err(py_err)?;
    let dist = tomodeq::MaskDistribution::uniform(s, n_angles_total).map_err(py_err)?;
    let r = verify::verify_prop1(&g, &dist, VerifyMode::Exact).map_err(py_err)?;
    report_dict(py, &r)
}

/// Exact check that the expected mask Gram matrix is `(s/n) I`.
#[pyfunction]
fn verify_mask_gram<'py>(py: Python<'py>, n_angles_total: usize, s: usize) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let dist = tomodeq::MaskDistribution::uniform(s, n_angles_total).map_err(py_err)?;
    let r = verify::verify_prop2(&dist, VerifyMode::Exact).map_err(py_err)?;
    report_dict(py, &r)
}

#[pymodule]
#[pyo3(name = "tomodeq")]
fn tomodeq_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Geometry>()?;
    m.add_class::<AngleMask>()?;
    m.add_class::<Denoiser>()?;
    m.add_function(wrap_pyfunction!(shepp_logan, m)?)?;
    m.add_function(wrap_pyfunction!(random_phantoms, m)?)?;
    m.add_function(wrap_pyfunction!(fbp, m)?)?;
    m.add_function(wrap_pyfunction!(tv_reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(deq_reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(verify_unbiased_normal_operator, m)?)?;
    m.add_function(wrap_pyfunction!(verify_mask_gram, m)?)?;
    Ok(())
}
