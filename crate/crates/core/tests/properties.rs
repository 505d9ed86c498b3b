//! Property tests for the structural invariants of each module.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tomodeq::classical::{total_variation, tv_reconstruct, TvConfig};
use tomodeq::denoiser::{denoiser_forward, denoiser_vjp, init_denoiser, spectral_normalize, ConvOperator, DenoiserSpec};
use tomodeq::deq::{apply_t_theta, fixed_point_solve, DeqConfig, Gamma};
use tomodeq::linalg::dot;
use tomodeq::metrics::{psnr, ssim};
use tomodeq::phantom::{generate_phantom, PhantomKind, PhantomSpec};
use tomodeq::radon::{grad_data_fidelity, project_angles, radon_adjoint, radon_forward, spectral_norm};
use tomodeq::sampling::{compute_weight_diagonal, sample_mask, split_complementary, weighted_residual_norm_sq};
use tomodeq::{AngleMask, Geometry, Image, MaskDistribution, MaskKind, Sinogram};

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rand_image(rng: &mut ChaCha8Rng, side: usize) -> Image {
    Image::from_vec(side, rand_vec(rng, side * side)).unwrap()
}

fn small_spec(side: usize, n_scales: usize, use_skip: bool) -> DenoiserSpec {
    DenoiserSpec {
        n_scales,
        channels: 3,
        depth: 2,
        resolution: side,
        use_skip,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projector_is_linear_and_adjoint_pairs(side in 4usize..14, n_ang in 1usize..12, seed in any::<u64>()) {
        let g = Geometry::new(side, n_ang).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, z) = (rand_image(&mut rng, side), rand_image(&mut rng, side));
        let a: f64 = rng.random_range(-2.0..2.0);
        let combo = Image::from_vec(side, x.data.iter().zip(&z.data).map(|(u, v)| a * u + v).collect()).unwrap();
        let (px, pz, pc) = (radon_forward(&x, &g).unwrap(), radon_forward(&z, &g).unwrap(), radon_forward(&combo, &g).unwrap());
        prop_assert_eq!((pc.n_angles, pc.n_detectors), (n_ang, g.n_detectors));
        for i in 0..pc.data.len() {
            prop_assert!((pc.data[i] - (a * px.data[i] + pz.data[i])).abs() < 1e-12 * (1.0 + pc.data[i].abs()));
        }
        let y = Sinogram::from_vec(n_ang, g.n_detectors, rand_vec(&mut rng, n_ang * g.n_detectors)).unwrap();
        let lhs = dot(&px.data, &y.data);
        let rhs = dot(&x.data, &radon_adjoint(&y, &g).unwrap().data);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn fidelity_gradient_vanishes_on_consistent_data(side in 4usize..12, n_ang in 2usize..10, seed in any::<u64>()) {
        let g = Geometry::new(side, n_ang).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = MaskDistribution::uniform(1 + seed as usize % n_ang, n_ang).unwrap();
        let m = sample_mask(&d, &mut rng).unwrap();
        let x = rand_image(&mut rng, side);
        let y = project_angles(&x, &g, m.indices()).unwrap();
        let grad = grad_data_fidelity(&x, &y, &m, &g).unwrap();
        prop_assert!(grad.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn power_iteration_is_deterministic_and_bounded(side in 4usize..10, n_ang in 1usize..8, seed in any::<u64>()) {
        let g = Geometry::new(side, n_ang).unwrap();
        let op = tomodeq::radon::MaskedRadon::full(&g);
        let a = spectral_norm(&op, 1e-9, 300, seed);
        let b = spectral_norm(&op, 1e-9, 300, seed);
        prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
        // the estimate never exceeds the Frobenius norm of the operator
        let fro: f64 = (0..side * side)
            .map(|j| {
                let mut e = Image::zeros(side);
                e.data[j] = 1.0;
                radon_forward(&e, &g).unwrap().data.iter().map(|v| v * v).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt();
        prop_assert!(a.value > 0.0 && a.value <= fro * (1.0 + 1e-12));
    }

    #[test]
    fn uniform_weights_are_constant(n in 1usize..40, frac in 0.0f64..1.0) {
        let s = 1 + ((n - 1) as f64 * frac) as usize;
        let w = compute_weight_diagonal(&MaskDistribution::uniform(s, n).unwrap()).unwrap();
        let expect = (n as f64 / s as f64).sqrt();
        prop_assert!(w.per_angle.iter().all(|v| (v - expect).abs() < 1e-12 * expect));
    }

    #[test]
    fn weighted_norm_matches_scaled_rows(n in 2usize..20, nd in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1 + seed as usize % n;
        let d = MaskDistribution::uniform(s, n).unwrap();
        let m = sample_mask(&d, &mut rng).unwrap();
        let w = compute_weight_diagonal(&d).unwrap();
        let z = Sinogram::from_vec(s, nd, rand_vec(&mut rng, s * nd)).unwrap();
        let mut direct = 0.0;
        for (r, &a) in m.indices().iter().enumerate() {
            direct += z.row(r).iter().map(|v| (w.per_angle[a] * v).powi(2)).sum::<f64>();
        }
        let got = weighted_residual_norm_sq(&z, &m, &w).unwrap();
        prop_assert!((got - direct).abs() <= 1e-12 * (1.0 + direct));
    }

    #[test]
    fn complementary_halves_partition_the_draw(half in 1usize..10, extra in 0usize..20, seed in any::<u64>()) {
        let n = 2 * half + extra;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = MaskDistribution::new(MaskKind::ComplementarySplit(2 * half), n).unwrap();
        let (a, b) = split_complementary(&d, &mut rng).unwrap();
        prop_assert_eq!(a.len(), half);
        prop_assert_eq!(b.len(), half);
        prop_assert!(a.indices().iter().all(|i| !b.contains(*i)));
    }

    #[test]
    fn equispaced_indices_follow_the_floor_rule(n in 1usize..200, frac in 0.0f64..1.0) {
        let s = 1 + ((n - 1) as f64 * frac) as usize;
        let m = AngleMask::equispaced(s, n).unwrap();
        let expect: Vec<usize> = (0..s).map(|j| j * n / s).collect();
        prop_assert_eq!(m.indices(), &expect[..]);
    }

    #[test]
    fn phantoms_are_deterministic_and_in_unit_range(side in 8usize..24, seed in any::<u64>(), lo in 1usize..4, span in 0usize..4) {
        let spec = PhantomSpec { kind: PhantomKind::RandomEllipses { n_min: lo, n_max: lo + span }, side, seed };
        let a = generate_phantom(&spec).unwrap();
        prop_assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(a, generate_phantom(&spec).unwrap());
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(side in 11usize..20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, r) = (rand_image(&mut rng, side), rand_image(&mut rng, side));
        let (a, b) = (ssim(&x, &r, 2.0).unwrap(), ssim(&r, &x, 2.0).unwrap());
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&a));
        prop_assert!((ssim(&x, &x, 2.0).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(psnr(&x, &x, 2.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn skip_connection_adds_the_input(side in 4usize..10, n_scales in 1usize..3, seed in any::<u64>()) {
        let side = if n_scales == 2 { side * 2 } else { side };
        let with = init_denoiser(&small_spec(side, n_scales, true), seed).unwrap();
        let mut without = with.clone();
        without.spec.use_skip = false;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x = rand_image(&mut rng, side);
        let (fw, fo) = (denoiser_forward(&with, &x).unwrap(), denoiser_forward(&without, &x).unwrap());
        for i in 0..x.data.len() {
            prop_assert!((fw.data[i] - (x.data[i] + fo.data[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn vjp_is_linear_in_the_cotangent(side in 4usize..8, n_scales in 1usize..3, seed in any::<u64>()) {
        let side = side * 2;
        let p = init_denoiser(&small_spec(side, n_scales, true), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let x = rand_image(&mut rng, side);
        let (c1, c2) = (rand_image(&mut rng, side), rand_image(&mut rng, side));
        let a: f64 = rng.random_range(-2.0..2.0);
        let c = Image::from_vec(side, c1.data.iter().zip(&c2.data).map(|(u, v)| a * u + v).collect()).unwrap();
        let (g1, x1) = denoiser_vjp(&p, &x, &c1).unwrap();
        let (g2, x2) = denoiser_vjp(&p, &x, &c2).unwrap();
        let (g, xg) = denoiser_vjp(&p, &x, &c).unwrap();
        let (f1, f2, f) = (g1.flatten(), g2.flatten(), g.flatten());
        for i in 0..f.len() {
            prop_assert!((f[i] - (a * f1[i] + f2[i])).abs() < 1e-10 * (1.0 + f[i].abs()));
        }
        for i in 0..xg.data.len() {
            prop_assert!((xg.data[i] - (a * x1.data[i] + x2.data[i])).abs() < 1e-10 * (1.0 + xg.data[i].abs()));
        }
    }

    #[test]
    fn spectral_normalization_bounds_every_layer(side in 4usize..8, n_scales in 1usize..3, seed in any::<u64>()) {
        let side = side * 2;
        let p = init_denoiser(&small_spec(side, n_scales, true), seed).unwrap();
        let q = spectral_normalize(&p, 200);
        for l in &q.layers {
            let op = ConvOperator { shape: l.shape, side: l.side, weight: &l.weight };
            let n = spectral_norm(&op, 1e-10, 500, seed).value;
            prop_assert!(n <= 1.0 + 1e-2, "layer norm {}", n);
        }
        let r = spectral_normalize(&q, 1);
        let drift = r.flatten().iter().zip(q.flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(drift < 1e-3);
    }

    #[test]
    fn deq_step_is_nonnegative(side in 4usize..8, alpha in 0.05f64..1.0, seed in any::<u64>()) {
        let side = side * 2;
        let g = Geometry::new(side, 10).unwrap();
        let m = AngleMask::equispaced(4, 10).unwrap();
        let p = init_denoiser(&small_spec(side, 2, true), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let x = rand_image(&mut rng, side);
        let y = Sinogram::from_vec(4, g.n_detectors, rand_vec(&mut rng, 4 * g.n_detectors)).unwrap();
        let cfg = DeqConfig { alpha, gamma: Gamma::Value(0.5), ..Default::default() };
        prop_assert!(apply_t_theta(&x, &y, &m, &p, &cfg, &g).unwrap().is_nonnegative());
    }

    #[test]
    fn zero_correction_step_is_projected_gradient(side in 4usize..10, alpha in 0.05f64..1.0, gamma in 0.1f64..2.0, seed in any::<u64>()) {
        let side = side * 2;
        let g = Geometry::new(side, 9).unwrap();
        let m = AngleMask::equispaced(3, 9).unwrap();
        let p = init_denoiser(&small_spec(side, 2, true), seed).unwrap().zeroed();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 4);
        let x = rand_image(&mut rng, side);
        let y = Sinogram::from_vec(3, g.n_detectors, rand_vec(&mut rng, 3 * g.n_detectors)).unwrap();
        let cfg = DeqConfig { alpha, gamma: Gamma::Value(gamma), ..Default::default() };
        let t = apply_t_theta(&x, &y, &m, &p, &cfg, &g).unwrap();
        let grad = grad_data_fidelity(&x, &y, &m, &g).unwrap();
        for i in 0..t.data.len() {
            let pgd = (x.data[i] - gamma * grad.data[i]).max(0.0);
            prop_assert!((t.data[i] - pgd).abs() < 1e-12 * (1.0 + pgd));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fixed_point_report_is_consistent(seed in any::<u64>(), tol_exp in 2i32..6, cap in 1usize..60, anderson in any::<bool>()) {
        let g = Geometry::new(16, 20).unwrap();
        let m = AngleMask::equispaced(6, 20).unwrap();
        let p = init_denoiser(&small_spec(16, 2, true), seed).unwrap();
        let x = generate_phantom(&PhantomSpec { kind: PhantomKind::RandomEllipses { n_min: 1, n_max: 3 }, side: 16, seed }).unwrap();
        let y = project_angles(&x, &g, m.indices()).unwrap();
        let base = DeqConfig { fp_tol: 10f64.powi(-tol_exp), fp_max_iter: cap, ..Default::default() };
        let cfg = DeqConfig { anderson: if anderson { base.anderson } else { None }, ..base };
        let r = fixed_point_solve(&y, &m, &p, &cfg, &g).unwrap();
        prop_assert!(r.final_residual >= 0.0);
        prop_assert!(r.n_iters >= 1 && r.n_iters <= cap);
        prop_assert_eq!(r.converged, r.final_residual < cfg.fp_tol);
        prop_assert!(r.x_bar.is_nonnegative());
    }

    #[test]
    fn tv_objective_is_monotone_and_output_nonnegative(seed in any::<u64>(), lam_exp in 1i32..5) {
        let g = Geometry::new(12, 15).unwrap();
        let m = AngleMask::equispaced(5, 15).unwrap();
        let x = generate_phantom(&PhantomSpec { kind: PhantomKind::RandomEllipses { n_min: 1, n_max: 4 }, side: 12, seed }).unwrap();
        let mut y = project_angles(&x, &g, m.indices()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        y.data.iter_mut().for_each(|v| *v += 0.01 * rng.random_range(-1.0..1.0));
        let cfg = TvConfig { lambda: 10f64.powi(-lam_exp), max_iters: 40, ..Default::default() };
        let r = tv_reconstruct(&y, &m, &g, &cfg).unwrap();
        prop_assert!(r.image.is_nonnegative());
        prop_assert!(r.objective.windows(2).all(|w| w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs())));
        prop_assert!(total_variation(&r.image) >= 0.0);
    }
}
