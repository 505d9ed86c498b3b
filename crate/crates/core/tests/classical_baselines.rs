//! FBP and TV baselines on phantoms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tomodeq::classical::{
    fbp, log_grid, total_variation, tune_tv_lambda, tv_reconstruct, FbpFilter, TvConfig,
};
use tomodeq::metrics::psnr;
use tomodeq::phantom::{generate_phantom, rasterize, Ellipse, PhantomKind, PhantomSpec};
use tomodeq::radon::{project_angles, radon_forward};
use tomodeq::{AngleMask, Geometry, Image, Sinogram};

fn shepp_logan(side: usize) -> Image {
    generate_phantom(&PhantomSpec {
        kind: PhantomKind::SheppLogan,
        side,
        seed: 0,
    })
    .unwrap()
}

#[test]
fn fbp_full_angle_shepp_logan_psnr() {
    let x = shepp_logan(64);
    let g = Geometry::new(64, 180).unwrap();
    let y = radon_forward(&x, &g).unwrap();
    let mask = AngleMask::full(180);
    for f in [FbpFilter::RamLak, FbpFilter::SheppLogan] {
        let rec = fbp(&y, &mask, &g, f).unwrap();
        let p = psnr(&rec, &x, x.max()).unwrap();
        assert!(p >= 20.0, "{f:?}: {p} dB");
    }
}

#[test]
fn fbp_psnr_does_not_improve_with_fewer_angles() {
    let x = shepp_logan(64);
    let g = Geometry::new(64, 64).unwrap();
    let full = radon_forward(&x, &g).unwrap();
    let score = |s: usize| {
        let m = AngleMask::equispaced(s, 64).unwrap();
        let y = full.select_rows(m.indices()).unwrap();
        psnr(&fbp(&y, &m, &g, FbpFilter::RamLak).unwrap(), &x, x.max()).unwrap()
    };
    let (p16, p32, p64) = (score(16), score(32), score(64));
    assert!(p16 <= p32 && p32 <= p64, "{p16} {p32} {p64}");
}

fn two_ellipses(side: usize) -> Image {
    let e = |intensity, a, b, x0, y0, phi| Ellipse { intensity, a, b, x0, y0, phi };
    rasterize(
        &[e(0.5, 0.6, 0.45, 0.0, 0.0, 0.3), e(0.4, 0.2, 0.25, 0.2, -0.1, 0.0)],
        side,
    )
}

fn noisy(y: &Sinogram, level: f64, seed: u64) -> Sinogram {
    let sigma = level * y.max_abs();
    let nd = Normal::new(0.0, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = y.clone();
    out.data.iter_mut().for_each(|v| *v += nd.sample(&mut rng));
    out
}

#[test]
fn tv_beats_fbp_on_piecewise_constant_phantom() {
    let x = two_ellipses(32);
    let g = Geometry::new(32, 60).unwrap();
    let m = AngleMask::equispaced(12, 60).unwrap();
    let y = noisy(&project_angles(&x, &g, m.indices()).unwrap(), 0.01, 5);
    let p_fbp = psnr(&fbp(&y, &m, &g, FbpFilter::RamLak).unwrap(), &x, x.max()).unwrap();
    let base = TvConfig::default();
    let (lambda, p_tv) = tune_tv_lambda(&y, &m, &g, &x, &base, &log_grid(1e-5, 1e-1, 10)).unwrap();
    assert!(p_tv > p_fbp + 3.0, "tv {p_tv} (lambda {lambda}) vs fbp {p_fbp}");
}

#[test]
fn tv_objective_is_monotone_and_output_nonnegative() {
    let x = two_ellipses(32);
    let g = Geometry::new(32, 60).unwrap();
    let m = AngleMask::equispaced(12, 60).unwrap();
    let y = noisy(&project_angles(&x, &g, m.indices()).unwrap(), 0.01, 6);
    for lambda in [0.0, 1e-3, 1e-1] {
        let r = tv_reconstruct(&y, &m, &g, &TvConfig { lambda, ..Default::default() }).unwrap();
        assert!(r.image.is_nonnegative());
        for w in r.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "objective rose {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn huge_lambda_flattens_the_image() {
    let x = two_ellipses(16);
    let g = Geometry::new(16, 20).unwrap();
    let m = AngleMask::equispaced(10, 20).unwrap();
    let y = project_angles(&x, &g, m.indices()).unwrap();
    let ynorm = y.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cfg = TvConfig {
        lambda: 1e6 * ynorm,
        ..Default::default()
    };
    let r = tv_reconstruct(&y, &m, &g, &cfg).unwrap();
    let tv_fbp = total_variation(&fbp(&y, &m, &g, FbpFilter::RamLak).unwrap());
    let tv_out = total_variation(&r.image);
    assert!(tv_out < 1e-6 * tv_fbp, "{tv_out} vs {tv_fbp}");
}

#[test]
fn zero_lambda_fits_full_noiseless_data() {
    let x = two_ellipses(16);
    let g = Geometry::new(16, 24).unwrap();
    let m = AngleMask::full(24);
    let y = radon_forward(&x, &g).unwrap();
    let cfg = TvConfig {
        lambda: 0.0,
        max_iters: 2000,
        tol: 1e-10,
        ..Default::default()
    };
    let r = tv_reconstruct(&y, &m, &g, &cfg).unwrap();
    let ax = radon_forward(&r.image, &g).unwrap();
    let res: f64 = ax.data.iter().zip(&y.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let yn: f64 = y.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(res <= 1e-3 * yn, "relative residual {}", res / yn);
}
