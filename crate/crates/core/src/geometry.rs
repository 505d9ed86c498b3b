//! Parallel-beam acquisition geometry and the image / sinogram containers.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Result, TomoError};

/// 2-D parallel-beam geometry over a square image.
///
/// Angles are `j * pi / n_angles_total` for `j in 0..n_angles_total`, so the
/// grid covers `[0, pi)` without repeating the view at `pi`. The detector row
/// is centered on the rotation axis, which coincides with the image center.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub n_pixels: usize,
    pub n_angles_total: usize,
    pub n_detectors: usize,
    pub pixel_spacing: f64,
    pub detector_spacing: f64,
}

impl Geometry {
    /// Unit field of view: `pixel_spacing = 1 / n_pixels`, detector spacing
    /// equal to the pixel spacing, and the default detector count.
    pub fn new(n_pixels: usize, n_angles_total: usize) -> Result<Self> {
        let ps = 1.0 / n_pixels.max(1) as f64;
        let g = Geometry {
            n_pixels,
            n_angles_total,
            n_detectors: Self::default_detectors(n_pixels),
            pixel_spacing: ps,
            detector_spacing: ps,
        };
        g.validate()?;
        Ok(g)
    }

    /// `ceil(sqrt(2) * n_pixels)`, bumped to the next odd number so that one
    /// bin sits on the rotation axis.
    pub fn default_detectors(n_pixels: usize) -> usize {
        let d = (SQRT_2 * n_pixels as f64).ceil() as usize;
        if d % 2 == 0 {
            d + 1
        } else {
            d
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pixels == 0 || self.n_angles_total == 0 || self.n_detectors == 0 {
            return Err(TomoError::config("geometry counts must be >= 1"));
        }
        if !(self.pixel_spacing > 0.0 && self.pixel_spacing.is_finite()) {
            return Err(TomoError::config("pixel_spacing must be positive"));
        }
        if !(self.detector_spacing > 0.0 && self.detector_spacing.is_finite()) {
            return Err(TomoError::config("detector_spacing must be positive"));
        }
        Ok(())
    }

    #[inline]
    pub fn angle(&self, j: usize) -> f64 {
        j as f64 * PI / self.n_angles_total as f64
    }

    /// Number of unknowns `n`.
    pub fn image_len(&self) -> usize {
        self.n_pixels * self.n_pixels
    }

    /// Number of rows `p` of the full operator.
    pub fn full_rows(&self) -> usize {
        self.n_angles_total * self.n_detectors
    }

    pub(crate) fn check_image(&self, x: &Image) -> Result<()> {
        if x.side != self.n_pixels {
            return Err(TomoError::dim(format!(
                "image side {} does not match geometry n_pixels {}",
                x.side, self.n_pixels
            )));
        }
        Ok(())
    }
}

/// Square image, row-major; row 0 is the top of the field of view.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub side: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(side: usize) -> Self {
        Image {
            side,
            data: vec![0.0; side * side],
        }
    }

    pub fn filled(side: usize, value: f64) -> Self {
        Image {
            side,
            data: vec![value; side * side],
        }
    }

    pub fn from_vec(side: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != side * side {
            return Err(TomoError::dim(format!(
                "image data length {} != {}^2",
                data.len(),
                side
            )));
        }
        Ok(Image { side, data })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.side + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.side + col] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|&v| v >= 0.0)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn same_shape(&self, other: &Image) -> Result<()> {
        if self.side != other.side {
            return Err(TomoError::dim(format!(
                "image sides differ: {} vs {}",
                self.side, other.side
            )));
        }
        Ok(())
    }
}

/// Rows are angles, columns are detector bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub n_angles: usize,
    pub n_detectors: usize,
    pub data: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(n_angles: usize, n_detectors: usize) -> Self {
        Sinogram {
            n_angles,
            n_detectors,
            data: vec![0.0; n_angles * n_detectors],
        }
    }

    pub fn from_vec(n_angles: usize, n_detectors: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_angles * n_detectors {
            return Err(TomoError::dim(format!(
                "sinogram data length {} != {} x {}",
                data.len(),
                n_angles,
                n_detectors
            )));
        }
        Ok(Sinogram {
            n_angles,
            n_detectors,
            data,
        })
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.n_detectors..(a + 1) * self.n_detectors]
    }

    pub fn row_mut(&mut self, a: usize) -> &mut [f64] {
        &mut self.data[a * self.n_detectors..(a + 1) * self.n_detectors]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Rows of a full sinogram selected by `angles` (the action of `M`).
    pub fn select_rows(&self, angles: &[usize]) -> Result<Sinogram> {
        let mut out = Sinogram::zeros(angles.len(), self.n_detectors);
        for (r, &a) in angles.iter().enumerate() {
            if a >= self.n_angles {
                return Err(TomoError::dim(format!(
                    "angle index {a} out of range for {} rows",
                    self.n_angles
                )));
            }
            out.row_mut(r).copy_from_slice(self.row(a));
        }
        Ok(out)
    }
}
