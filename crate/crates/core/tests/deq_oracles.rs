//! Fixed-point operator against a dense projected-gradient implementation.

use nalgebra::{DMatrix, DVector};
use tomodeq::denoiser::{init_denoiser, DenoiserParams, DenoiserSpec};
use tomodeq::deq::{apply_t_theta, fixed_point_solve, AndersonConfig, DeqConfig, Gamma};
use tomodeq::phantom::{generate_phantom, PhantomKind, PhantomSpec};
use tomodeq::radon::project_angles;
use tomodeq::{AngleMask, Geometry, Image};

fn zero_correction(side: usize) -> DenoiserParams {
    init_denoiser(
        &DenoiserSpec {
            resolution: side,
            channels: 2,
            ..Default::default()
        },
        1,
    )
    .unwrap()
    .zeroed()
}

fn phantom(side: usize, seed: u64) -> Image {
    generate_phantom(&PhantomSpec {
        kind: PhantomKind::RandomEllipses { n_min: 2, n_max: 5 },
        side,
        seed,
    })
    .unwrap()
}

#[test]
fn iterates_match_dense_projected_gradient() {
    let g = Geometry::new(16, 30).unwrap();
    let m = AngleMask::equispaced(12, 30).unwrap();
    let x_true = phantom(16, 2);
    let y = project_angles(&x_true, &g, m.indices()).unwrap();
    // dense M A
    let mut a = DMatrix::zeros(12 * g.n_detectors, 256);
    for j in 0..256 {
        let mut e = Image::zeros(16);
        e.data[j] = 1.0;
        let col = project_angles(&e, &g, m.indices()).unwrap();
        for (i, v) in col.data.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let yv = DVector::from_vec(y.data.clone());
    let p = zero_correction(16);
    let cfg = DeqConfig {
        alpha: 0.7,
        gamma: Gamma::Value(0.9),
        ..Default::default()
    };
    let mut ours = Image::zeros(16);
    let mut dense = DVector::zeros(256);
    for step in 0..30 {
        ours = apply_t_theta(&ours, &y, &m, &p, &cfg, &g).unwrap();
        let grad = a.transpose() * (&a * &dense - &yv);
        dense = (dense - grad * 0.9).map(|v: f64| v.max(0.0));
        for (u, v) in ours.data.iter().zip(dense.iter()) {
            assert!((u - v).abs() < 1e-10 * (1.0 + v.abs()), "step {step}: {u} vs {v}");
        }
    }
}

#[test]
fn auto_gamma_plain_and_anderson_converge() {
    let g = Geometry::new(16, 48).unwrap();
    let m = AngleMask::equispaced(12, 48).unwrap();
    let p = zero_correction(16);
    for seed in 0..5 {
        let y = project_angles(&phantom(16, seed), &g, m.indices()).unwrap();
        let plain_cfg = DeqConfig {
            anderson: None,
            ..Default::default()
        };
        let plain = fixed_point_solve(&y, &m, &p, &plain_cfg, &g).unwrap();
        assert!(plain.residual_history.iter().all(|r| *r >= 0.0));
        let acc = fixed_point_solve(
            &y,
            &m,
            &p,
            &DeqConfig {
                anderson: Some(AndersonConfig::default()),
                ..Default::default()
            },
            &g,
        )
        .unwrap();
        assert!(acc.converged, "seed {seed}: {}", acc.final_residual);
        assert!(acc.final_residual < 1e-3 && acc.n_iters <= 100);
        assert!(acc.final_residual <= plain.final_residual);
        assert!(acc.x_bar.is_nonnegative() && acc.x_prev.is_nonnegative());
        // soft bounds, reported only
        eprintln!(
            "seed {seed}: plain {} iters, anderson {} iters (fallback {}), plain rises after 3: {}",
            plain.n_iters, acc.n_iters, acc.used_fallback, plain.nonmonotone
        );
    }
}
