//! Image quality metrics.

use crate::error::{Result, TomoError};
use crate::geometry::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn mse(x: &Image, reference: &Image) -> Result<f64> {
    x.same_shape(reference)?;
    Ok(x.data
        .iter()
        .zip(&reference.data)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / x.len() as f64)
}

/// `10 log10(range^2 / MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(x: &Image, reference: &Image, data_range: f64) -> Result<f64> {
    if !(data_range > 0.0) {
        return Err(TomoError::config("psnr data_range must be positive"));
    }
    let m = mse(x, reference)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / m).log10())
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over all fully-contained 11x11 Gaussian windows.
pub fn ssim(x: &Image, reference: &Image, data_range: f64) -> Result<f64> {
    x.same_shape(reference)?;
    if x.side < SSIM_WINDOW {
        return Err(TomoError::dim(format!(
            "ssim needs side >= {SSIM_WINDOW}, got {}",
            x.side
        )));
    }
    if !(data_range > 0.0) {
        return Err(TomoError::config("ssim data_range must be positive"));
    }
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let g = gaussian_window();
    let n = x.side;
    let valid = n - SSIM_WINDOW + 1;
    let mut total = 0.0;
    for r0 in 0..valid {
        for c0 in 0..valid {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    let w = g[i] * g[j];
                    let a = x.get(r0 + i, c0 + j);
                    let b = reference.get(r0 + i, c0 + j);
                    mx += w * a;
                    my += w * b;
                    xx += w * a * a;
                    yy += w * b * b;
                    xy += w * a * b;
                }
            }
            let vx = xx - mx * mx;
            let vy = yy - my * my;
            let cov = xy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (valid * valid) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(side: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_vec(side, (0..side * side).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn psnr_cases() {
        let x = random(16, 1);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);
        let a = Image::filled(10, 0.0);
        let b = Image::filled(10, 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert!(psnr(&a, &Image::zeros(9), 1.0).is_err());
    }

    #[test]
    fn psnr_textbook() {
        let x = random(20, 2);
        let y = random(20, 3);
        let mut s = 0.0;
        for i in 0..400 {
            s += (x.data[i] - y.data[i]) * (x.data[i] - y.data[i]);
        }
        let expected = 20.0 * 0.8f64.log10() - 10.0 * (s / 400.0).log10();
        assert!((psnr(&x, &y, 0.8).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let x = random(24, 4);
        let y = random(24, 5);
        assert_eq!(ssim(&x, &x, 1.0).unwrap(), 1.0);
        let a = ssim(&x, &y, 1.0).unwrap();
        let b = ssim(&y, &x, 1.0).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&a));
        assert!(ssim(&Image::zeros(10), &Image::zeros(10), 1.0).is_err());
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let l = 1.0;
        let mu = 0.2;
        let x = Image::filled(16, mu);
        let y = Image::filled(16, mu + 0.5 * l);
        let c1 = (0.01 * l) * (0.01f64 * l);
        let my = mu + 0.5 * l;
        // variance terms vanish: ssim = (2 mx my + c1) / (mx^2 + my^2 + c1)
        let expected = (2.0 * mu * my + c1) / (mu * mu + my * my + c1);
        assert!((ssim(&x, &y, l).unwrap() - expected).abs() < 1e-9);
    }
}
