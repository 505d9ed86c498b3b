//! Denoiser checks against an independent dense (im2col) implementation,
//! central finite differences, and empirical Lipschitz / equivariance probes.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tomodeq::denoiser::{
    denoiser_forward, denoiser_vjp, init_denoiser, spectral_normalize, Activation, ConvLayer,
    DenoiserParams, DenoiserSpec,
};
use tomodeq::Image;

fn spec(n_scales: usize, channels: usize) -> DenoiserSpec {
    DenoiserSpec {
        n_scales,
        channels,
        kernel_size: 3,
        depth: 3,
        activation: Activation::LeakyRelu(0.1),
        use_skip: true,
        sn_power_iters: 1,
        resolution: 16,
    }
}

/// Random parameters with nonzero biases so every code path is exercised.
fn random_params(s: &DenoiserSpec, seed: u64) -> DenoiserParams {
    let mut p = init_denoiser(s, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for l in &mut p.layers {
        for b in &mut l.bias {
            *b = rng.random::<f64>() - 0.5;
        }
    }
    p
}

fn random_image(side: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::from_vec(side, (0..side * side).map(|_| rng.random::<f64>()).collect()).unwrap()
}

/// Dense matrix of a zero-padded same-size convolution, built from patches.
fn im2col_matrix(l: &ConvLayer, side: usize) -> DMatrix<f64> {
    let (ci, co, k) = (l.shape.in_ch, l.shape.out_ch, l.shape.kernel);
    let r = (k / 2) as isize;
    let n2 = side * side;
    let mut m = DMatrix::zeros(co * n2, ci * n2);
    for o in 0..co {
        for i in 0..side {
            for j in 0..side {
                let row = o * n2 + i * side + j;
                for c in 0..ci {
                    for di in 0..k {
                        for dj in 0..k {
                            let si = i as isize + di as isize - r;
                            let sj = j as isize + dj as isize - r;
                            if si < 0 || sj < 0 || si >= side as isize || sj >= side as isize {
                                continue;
                            }
                            let col = c * n2 + si as usize * side + sj as usize;
                            m[(row, col)] += l.weight[((o * ci + c) * k + di) * k + dj];
                        }
                    }
                }
            }
        }
    }
    m
}

fn dense_layer(l: &ConvLayer, x: &DVector<f64>, side: usize) -> DVector<f64> {
    let mut y = im2col_matrix(l, side) * x;
    let n2 = side * side;
    for o in 0..l.shape.out_ch {
        for t in 0..n2 {
            y[o * n2 + t] += l.bias[o];
        }
    }
    y
}

fn act(a: Activation, v: DVector<f64>) -> DVector<f64> {
    v.map(|z| match a {
        Activation::Relu => z.max(0.0),
        Activation::LeakyRelu(s) => {
            if z >= 0.0 {
                z
            } else {
                s * z
            }
        }
    })
}

fn dense_pool(v: &DVector<f64>, ch: usize, side: usize) -> DVector<f64> {
    let h = side / 2;
    DVector::from_fn(ch * h * h, |idx, _| {
        let c = idx / (h * h);
        let (i, j) = ((idx % (h * h)) / h, idx % h);
        let mut s = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                s += v[c * side * side + (2 * i + a) * side + 2 * j + b];
            }
        }
        s / 4.0
    })
}

fn dense_up(v: &DVector<f64>, ch: usize, side: usize) -> DVector<f64> {
    let n = 2 * side;
    DVector::from_fn(ch * n * n, |idx, _| {
        let c = idx / (n * n);
        let (i, j) = ((idx % (n * n)) / n, idx % n);
        v[c * side * side + (i / 2) * side + j / 2]
    })
}

fn dense_forward(p: &DenoiserParams, x: &Image) -> Vec<f64> {
    let n = x.side;
    let a = p.spec.activation;
    let input = DVector::from_vec(x.data.clone());
    let l = &p.layers;
    let out = if p.spec.n_scales == 1 {
        let mut h = input.clone();
        for (i, layer) in l.iter().enumerate() {
            h = dense_layer(layer, &h, n);
            if i + 1 < l.len() {
                h = act(a, h);
            }
        }
        h
    } else {
        let c = p.spec.channels;
        let a0 = act(a, dense_layer(&l[0], &input, n));
        let a1 = act(a, dense_layer(&l[1], &dense_pool(&a0, c, n), n / 2));
        let a2 = act(a, dense_layer(&l[2], &a1, n / 2));
        let m = (dense_up(&a2, c, n / 2) + &a0) * 0.5;
        let a3 = act(a, dense_layer(&l[3], &m, n));
        dense_layer(&l[4], &a3, n)
    };
    let mut out: Vec<f64> = out.iter().cloned().collect();
    if p.spec.use_skip {
        for (o, v) in out.iter_mut().zip(&x.data) {
            *o += v;
        }
    }
    out
}

#[test]
fn forward_matches_dense_im2col() {
    for scales in [1, 2] {
        for seed in 0..3 {
            let p = random_params(&spec(scales, 3), seed);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let x = random_image(16, &mut rng);
            let ours = denoiser_forward(&p, &x).unwrap();
            let dense = dense_forward(&p, &x);
            for (a, b) in ours.data.iter().zip(&dense) {
                assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rel_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6)
}

fn finite_difference_checks(scales: usize, seed: u64) {
    let mut s = spec(scales, 3);
    s.resolution = 8;
    let p = random_params(&s, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let x = random_image(8, &mut rng);
    let cot = Image::from_vec(8, (0..64).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
    let (pg, xg) = denoiser_vjp(&p, &x, &cot).unwrap();
    let flat_g = pg.flatten();
    let base = p.flatten();
    let h = 1e-6;
    let objective = |q: &DenoiserParams, z: &Image| inner(&cot.data, &denoiser_forward(q, z).unwrap().data);
    for _ in 0..20 {
        let k = rng.random_range(0..base.len());
        let mut plus = p.clone();
        let mut minus = p.clone();
        let mut fp = base.clone();
        fp[k] += h;
        plus.set_flat(&fp).unwrap();
        fp[k] -= 2.0 * h;
        minus.set_flat(&fp).unwrap();
        let fd = (objective(&plus, &x) - objective(&minus, &x)) / (2.0 * h);
        assert!(rel_err(fd, flat_g[k]) < 1e-5, "param {k}: fd {fd} vs {}", flat_g[k]);
    }
    for _ in 0..20 {
        let k = rng.random_range(0..64);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp.data[k] += h;
        xm.data[k] -= h;
        let fd = (objective(&p, &xp) - objective(&p, &xm)) / (2.0 * h);
        assert!(rel_err(fd, xg.data[k]) < 1e-5, "pixel {k}: fd {fd} vs {}", xg.data[k]);
    }
}

#[test]
fn vjp_matches_finite_differences_plain_cnn() {
    for seed in 0..3 {
        finite_difference_checks(1, seed);
    }
}

#[test]
fn vjp_matches_finite_differences_two_scales() {
    for seed in 0..3 {
        finite_difference_checks(2, seed);
    }
}

#[test]
fn relu_variant_gradients() {
    let mut s = spec(2, 2);
    s.activation = Activation::Relu;
    s.use_skip = false;
    s.resolution = 8;
    let p = random_params(&s, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_image(8, &mut rng);
    let cot = random_image(8, &mut rng);
    let (pg, _) = denoiser_vjp(&p, &x, &cot).unwrap();
    let base = p.flatten();
    let g = pg.flatten();
    let h = 1e-6;
    for k in (0..base.len()).step_by(7) {
        let mut q = p.clone();
        let mut f = base.clone();
        f[k] += h;
        q.set_flat(&f).unwrap();
        let up = inner(&cot.data, &denoiser_forward(&q, &x).unwrap().data);
        f[k] -= 2.0 * h;
        q.set_flat(&f).unwrap();
        let dn = inner(&cot.data, &denoiser_forward(&q, &x).unwrap().data);
        assert!(rel_err((up - dn) / (2.0 * h), g[k]) < 1e-5);
    }
}

#[test]
fn lipschitz_bound_after_normalization() {
    for scales in [1, 2] {
        let s = spec(scales, 4);
        let p = spectral_normalize(&random_params(&s, 21), 300);
        let bound = 1.01f64.powi(p.layers.len() as i32) * 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let a = random_image(16, &mut rng);
            let mut b = a.clone();
            for v in &mut b.data {
                *v += 0.1 * (rng.random::<f64>() - 0.5);
            }
            let fa = denoiser_forward(&p, &a).unwrap();
            let fb = denoiser_forward(&p, &b).unwrap();
            let num: f64 = fa.data.iter().zip(&fb.data).map(|(u, v)| (u - v).powi(2)).sum();
            let den: f64 = a.data.iter().zip(&b.data).map(|(u, v)| (u - v).powi(2)).sum();
            worst = worst.max((num / den).sqrt());
        }
        assert!(worst <= bound, "ratio {worst} above {bound}");
    }
}

#[test]
fn plain_cnn_is_translation_equivariant_in_the_interior() {
    let s = DenoiserSpec {
        depth: 3,
        ..spec(1, 4)
    };
    let p = random_params(&s, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 16;
    let x = random_image(n, &mut rng);
    let (dr, dc) = (2usize, 1usize);
    let mut shifted = Image::zeros(n);
    for r in dr..n {
        for c in dc..n {
            shifted.set(r, c, x.get(r - dr, c - dc));
        }
    }
    let fx = denoiser_forward(&p, &x).unwrap();
    let fs = denoiser_forward(&p, &shifted).unwrap();
    // receptive radius 3 layers * 1 pixel
    let margin = 3;
    for r in dr + margin..n - margin {
        for c in dc + margin..n - margin {
            let d = (fs.get(r, c) - fx.get(r - dr, c - dc)).abs();
            assert!(d < 1e-12, "({r},{c}) differs by {d}");
        }
    }
}
