use super::conv::{self, ConvShape};
use super::DenoiserParams;
use crate::linalg;
use crate::radon::LinearOperator;

/// A bias-free convolution viewed as a linear map on `in_ch x side x side`.
#[derive(Debug, Clone)]
pub struct ConvOperator<'a> {
    pub shape: ConvShape,
    pub side: usize,
    pub weight: &'a [f64],
}

impl LinearOperator for ConvOperator<'_> {
    fn input_len(&self) -> usize {
        self.shape.in_ch * self.side * self.side
    }

    fn output_len(&self) -> usize {
        self.shape.out_ch * self.side * self.side
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        conv::conv_forward(x, self.side, self.shape, self.weight, None)
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        conv::conv_backward_input(y, self.side, self.shape, self.weight)
    }
}

/// Divides every kernel by a power-iteration estimate of its convolution
/// operator norm, warm-starting from (and updating) the stored vectors.
/// Biases are left alone; they do not affect the Lipschitz constant.
pub fn spectral_normalize(p: &DenoiserParams, n_iters: usize) -> DenoiserParams {
    let mut out = p.clone();
    for l in &mut out.layers {
        let op = ConvOperator {
            shape: l.shape,
            side: l.side,
            weight: &l.weight,
        };
        let mut u = l.sn.u.clone();
        let mut v = l.sn.v.clone();
        let mut sigma = l.sn.sigma;
        for _ in 0..n_iters.max(1) {
            let mut nv = op.apply_adjoint(&u);
            let nn = linalg::norm(&nv);
            if nn == 0.0 || !nn.is_finite() {
                break;
            }
            linalg::scale(&mut nv, 1.0 / nn);
            v = nv;
            let mut nu = op.apply(&v);
            let s = linalg::norm(&nu);
            if s == 0.0 || !s.is_finite() {
                sigma = s;
                break;
            }
            linalg::scale(&mut nu, 1.0 / s);
            u = nu;
            sigma = s;
        }
        if sigma > 1e-12 && sigma.is_finite() {
            linalg::scale(&mut l.weight, 1.0 / sigma);
        }
        l.sn = super::SnState { u, v, sigma };
    }
    out
}
