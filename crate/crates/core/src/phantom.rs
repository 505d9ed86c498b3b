//! Synthetic test objects: the modified Shepp-Logan head and random ellipses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TomoError};
use crate::geometry::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhantomKind {
    SheppLogan,
    RandomEllipses { n_min: usize, n_max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub side: usize,
    pub seed: u64,
}

/// Ellipse in normalized coordinates `[-1, 1]^2`, y pointing up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub intensity: f64,
    pub a: f64,
    pub b: f64,
    pub x0: f64,
    pub y0: f64,
    /// Rotation in radians, counter-clockwise.
    pub phi: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (c, s) = (self.phi.cos(), self.phi.sin());
        let dx = x - self.x0;
        let dy = y - self.y0;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Modified Shepp-Logan table (Toft's contrast-enhanced intensities).
pub fn shepp_logan_ellipses() -> Vec<Ellipse> {
    let deg = std::f64::consts::PI / 180.0;
    #[rustfmt::skip]
    let table: [(f64, f64, f64, f64, f64, f64); 10] = [
        ( 1.0,  0.69,   0.92,   0.0,   0.0,     0.0),
        (-0.8,  0.6624, 0.8740, 0.0,  -0.0184,  0.0),
        (-0.2,  0.1100, 0.3100, 0.22,  0.0,   -18.0),
        (-0.2,  0.1600, 0.4100,-0.22,  0.0,    18.0),
        ( 0.1,  0.2100, 0.2500, 0.0,   0.35,    0.0),
        ( 0.1,  0.0460, 0.0460, 0.0,   0.1,     0.0),
        ( 0.1,  0.0460, 0.0460, 0.0,  -0.1,     0.0),
        ( 0.1,  0.0460, 0.0230,-0.08, -0.605,   0.0),
        ( 0.1,  0.0230, 0.0230, 0.0,  -0.606,   0.0),
        ( 0.1,  0.0230, 0.0460, 0.06, -0.605,   0.0),
    ];
    table
        .iter()
        .map(|&(intensity, a, b, x0, y0, phi)| Ellipse {
            intensity,
            a,
            b,
            x0,
            y0,
            phi: phi * deg,
        })
        .collect()
}

/// Sum of ellipse indicators at pixel centers, clipped to `[0, 1]`.
pub fn rasterize(ellipses: &[Ellipse], side: usize) -> Image {
    let mut img = Image::zeros(side);
    let n = side as f64;
    for r in 0..side {
        let y = 1.0 - (r as f64 + 0.5) * 2.0 / n;
        for c in 0..side {
            let x = (c as f64 + 0.5) * 2.0 / n - 1.0;
            let v: f64 = ellipses
                .iter()
                .filter(|e| e.contains(x, y))
                .map(|e| e.intensity)
                .sum();
            img.set(r, c, v.clamp(0.0, 1.0));
        }
    }
    img
}

fn random_ellipses(rng: &mut ChaCha8Rng, n_min: usize, n_max: usize) -> Vec<Ellipse> {
    let count = rng.random_range(n_min..=n_max);
    (0..count)
        .map(|_| {
            // keep every ellipse inside the inscribed circle
            let a: f64 = rng.random_range(0.08..0.45);
            let b: f64 = rng.random_range(0.08..0.45);
            let reach: f64 = 0.85 - a.max(b);
            let rad = rng.random_range(0.0..reach.max(0.0));
            let ang = rng.random_range(0.0..std::f64::consts::TAU);
            Ellipse {
                intensity: rng.random_range(0.1..0.6),
                a,
                b,
                x0: rad * ang.cos(),
                y0: rad * ang.sin(),
                phi: rng.random_range(0.0..std::f64::consts::PI),
            }
        })
        .collect()
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Image> {
    if spec.side < 8 {
        return Err(TomoError::config(format!(
            "phantom side must be >= 8, got {}",
            spec.side
        )));
    }
    let ellipses = match spec.kind {
        PhantomKind::SheppLogan => shepp_logan_ellipses(),
        PhantomKind::RandomEllipses { n_min, n_max } => {
            if n_min == 0 || n_min > n_max {
                return Err(TomoError::config(format!(
                    "random ellipse count range [{n_min}, {n_max}] is invalid"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            random_ellipses(&mut rng, n_min, n_max)
        }
    };
    Ok(rasterize(&ellipses, spec.side))
}

/// `count` random-ellipse phantoms with per-item seeds derived from `seed`.
pub fn phantom_set(count: usize, side: usize, n_min: usize, n_max: usize, seed: u64) -> Result<Vec<Image>> {
    (0..count)
        .map(|i| {
            generate_phantom(&PhantomSpec {
                kind: PhantomKind::RandomEllipses { n_min, n_max },
                side,
                seed: crate::linalg::derive_seed(seed, &[i as u64]),
            })
        })
        .collect()
}
