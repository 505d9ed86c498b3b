//! Same-size 2-D convolution (cross-correlation, zero padding), 2x2 average
//! pooling and nearest-neighbour upsampling, each with its exact adjoint.
//!
//! Tensors are channel-major: `data[c * side * side + row * side + col]`.
//! Kernels are `[out][in][ky][kx]`.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel
    }

    #[inline]
    fn w_index(&self, o: usize, c: usize, di: usize, dj: usize) -> usize {
        ((o * self.in_ch + c) * self.kernel + di) * self.kernel + dj
    }
}

/// Valid output range `[lo, hi)` along one axis for a tap offset.
#[inline]
fn span(n: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (n as isize - off).min(n as isize).max(0) as usize;
    (lo, hi.max(lo))
}

pub fn conv_forward(
    input: &[f64],
    side: usize,
    shape: ConvShape,
    weight: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let n2 = side * side;
    debug_assert_eq!(input.len(), shape.in_ch * n2);
    let r = (shape.kernel / 2) as isize;
    let mut out = vec![0.0; shape.out_ch * n2];
    for o in 0..shape.out_ch {
        let out_o = &mut out[o * n2..(o + 1) * n2];
        if let Some(b) = bias {
            out_o.iter_mut().for_each(|v| *v = b[o]);
        }
        for c in 0..shape.in_ch {
            let in_c = &input[c * n2..(c + 1) * n2];
            for di in 0..shape.kernel {
                let oi = di as isize - r;
                let (ilo, ihi) = span(side, oi);
                for dj in 0..shape.kernel {
                    let w = weight[shape.w_index(o, c, di, dj)];
                    if w == 0.0 {
                        continue;
                    }
                    let oj = dj as isize - r;
                    let (jlo, jhi) = span(side, oj);
                    for i in ilo..ihi {
                        let src_row = (i as isize + oi) as usize * side;
                        let dst = &mut out_o[i * side + jlo..i * side + jhi];
                        let src = &in_c[(src_row as isize + jlo as isize + oj) as usize
                            ..(src_row as isize + jhi as isize + oj) as usize];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of the bias-free convolution (gradient w.r.t. the input).
pub fn conv_backward_input(grad_out: &[f64], side: usize, shape: ConvShape, weight: &[f64]) -> Vec<f64> {
    let n2 = side * side;
    debug_assert_eq!(grad_out.len(), shape.out_ch * n2);
    let r = (shape.kernel / 2) as isize;
    let mut g_in = vec![0.0; shape.in_ch * n2];
    for c in 0..shape.in_ch {
        let gc = &mut g_in[c * n2..(c + 1) * n2];
        for o in 0..shape.out_ch {
            let go = &grad_out[o * n2..(o + 1) * n2];
            for di in 0..shape.kernel {
                let oi = di as isize - r;
                let (ilo, ihi) = span(side, oi);
                for dj in 0..shape.kernel {
                    let w = weight[shape.w_index(o, c, di, dj)];
                    if w == 0.0 {
                        continue;
                    }
                    let oj = dj as isize - r;
                    let (jlo, jhi) = span(side, oj);
                    for i in ilo..ihi {
                        let dst_row = (i as isize + oi) as usize * side;
                        let src = &go[i * side + jlo..i * side + jhi];
                        let dst = &mut gc[(dst_row as isize + jlo as isize + oj) as usize
                            ..(dst_row as isize + jhi as isize + oj) as usize];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                }
            }
        }
    }
    g_in
}

/// Gradients w.r.t. kernel and bias.
pub fn conv_backward_params(
    input: &[f64],
    grad_out: &[f64],
    side: usize,
    shape: ConvShape,
) -> (Vec<f64>, Vec<f64>) {
    let n2 = side * side;
    let r = (shape.kernel / 2) as isize;
    let mut gw = vec![0.0; shape.weight_len()];
    let mut gb = vec![0.0; shape.out_ch];
    for o in 0..shape.out_ch {
        let go = &grad_out[o * n2..(o + 1) * n2];
        gb[o] = go.iter().sum();
        for c in 0..shape.in_ch {
            let in_c = &input[c * n2..(c + 1) * n2];
            for di in 0..shape.kernel {
                let oi = di as isize - r;
                let (ilo, ihi) = span(side, oi);
                for dj in 0..shape.kernel {
                    let oj = dj as isize - r;
                    let (jlo, jhi) = span(side, oj);
                    let mut acc = 0.0;
                    for i in ilo..ihi {
                        let src_row = (i as isize + oi) as usize * side;
                        let g = &go[i * side + jlo..i * side + jhi];
                        let s = &in_c[(src_row as isize + jlo as isize + oj) as usize
                            ..(src_row as isize + jhi as isize + oj) as usize];
                        acc += g.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                    }
                    gw[shape.w_index(o, c, di, dj)] = acc;
                }
            }
        }
    }
    (gw, gb)
}

/// 2x2 mean pooling, stride 2. `side` is the input side (even).
pub fn avg_pool2(input: &[f64], ch: usize, side: usize) -> Vec<f64> {
    let h = side / 2;
    let mut out = vec![0.0; ch * h * h];
    for c in 0..ch {
        let src = &input[c * side * side..(c + 1) * side * side];
        let dst = &mut out[c * h * h..(c + 1) * h * h];
        for i in 0..h {
            for j in 0..h {
                let a = 2 * i * side + 2 * j;
                dst[i * h + j] = 0.25 * (src[a] + src[a + 1] + src[a + side] + src[a + side + 1]);
            }
        }
    }
    out
}

/// Adjoint of [`avg_pool2`]; `side` is the pooled (output) side.
pub fn avg_pool2_adjoint(grad: &[f64], ch: usize, side: usize) -> Vec<f64> {
    let n = 2 * side;
    let mut out = vec![0.0; ch * n * n];
    for c in 0..ch {
        let g = &grad[c * side * side..(c + 1) * side * side];
        let dst = &mut out[c * n * n..(c + 1) * n * n];
        for i in 0..side {
            for j in 0..side {
                let v = 0.25 * g[i * side + j];
                let a = 2 * i * n + 2 * j;
                dst[a] = v;
                dst[a + 1] = v;
                dst[a + n] = v;
                dst[a + n + 1] = v;
            }
        }
    }
    out
}

/// Nearest-neighbour 2x upsampling; `side` is the input side.
pub fn upsample2(input: &[f64], ch: usize, side: usize) -> Vec<f64> {
    let n = 2 * side;
    let mut out = vec![0.0; ch * n * n];
    for c in 0..ch {
        let src = &input[c * side * side..(c + 1) * side * side];
        let dst = &mut out[c * n * n..(c + 1) * n * n];
        for i in 0..n {
            for j in 0..n {
                dst[i * n + j] = src[(i / 2) * side + j / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]; `side` is the low-resolution side.
pub fn upsample2_adjoint(grad: &[f64], ch: usize, side: usize) -> Vec<f64> {
    let n = 2 * side;
    let mut out = vec![0.0; ch * side * side];
    for c in 0..ch {
        let g = &grad[c * n * n..(c + 1) * n * n];
        let dst = &mut out[c * side * side..(c + 1) * side * side];
        for i in 0..n {
            for j in 0..n {
                dst[(i / 2) * side + j / 2] += g[i * n + j];
            }
        }
    }
    out
}
