//! im2col + GEMM convolution kernels (cross-correlation, zero padding).

use super::{Result, Shape, Tensor, TensorError};

/// `floor((input + 2 * padding - kernel) / stride) + 1`, or `None` when the
/// padded input is smaller than the kernel.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(input: Shape, kernel: Shape, bias: Option<Shape>, stride: usize, pad: usize) -> Result<Self> {
        let [batch, in_c, in_h, in_w] = input.dims();
        let [out_c, k_in, k_h, k_w] = kernel.dims();
        if k_in != in_c {
            return Err(TensorError::Mismatch {
                op: "conv2d",
                dim: "input channels",
                left: in_c,
                right: k_in,
            });
        }
        if stride == 0 {
            return Err(TensorError::Invalid {
                op: "conv2d",
                reason: "stride must be >= 1".into(),
            });
        }
        if let Some(b) = bias {
            if b.numel() != out_c {
                return Err(TensorError::Mismatch {
                    op: "conv2d",
                    dim: "bias length",
                    left: out_c,
                    right: b.numel(),
                });
            }
        }
        let out_h = conv_output_dim(in_h, k_h, stride, pad).ok_or_else(|| TensorError::Invalid {
            op: "conv2d",
            reason: format!("height {in_h} with padding {pad} is smaller than kernel height {k_h}"),
        })?;
        let out_w = conv_output_dim(in_w, k_w, stride, pad).ok_or_else(|| TensorError::Invalid {
            op: "conv2d",
            reason: format!("width {in_w} with padding {pad} is smaller than kernel width {k_w}"),
        })?;
        Ok(ConvGeom {
            batch,
            in_c,
            in_h,
            in_w,
            out_c,
            k_h,
            k_w,
            stride,
            pad,
            out_h,
            out_w,
        })
    }

    pub fn output_shape(&self) -> Shape {
        Shape::raw([self.batch, self.out_c, self.out_h, self.out_w])
    }

    fn cols_rows(&self) -> usize {
        self.in_c * self.k_h * self.k_w
    }

    fn cols_len(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.k_h == 1 && self.k_w == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col(&self, input: &[f64], cols: &mut [f64]) {
        let p = self.cols_len();
        for c in 0..self.in_c {
            let plane = &input[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..self.k_h {
                for kx in 0..self.k_w {
                    let row = (c * self.k_h + ky) * self.k_w + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.in_h as isize {
                            line.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.in_w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], grad: &mut [f64]) {
        let p = self.cols_len();
        for c in 0..self.in_c {
            let plane = &mut grad[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..self.k_h {
                for kx in 0..self.k_w {
                    let row = (c * self.k_h + ky) * self.k_w + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.in_w {
                                dst[ix as usize] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c = a' * b' + beta * c` where `a'` is `m x k` and `b'` is `k x n`.
/// `a_t` / `b_t` say the stored buffer is the transpose of the operand.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths cover every (row, col) addressed through the strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn forward(geom: &ConvGeom, input: &[f64], kernel: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let k = geom.cols_rows();
    let p = geom.cols_len();
    let in_len = geom.in_c * geom.in_h * geom.in_w;
    let out_len = geom.out_c * p;
    let mut out = vec![0.0; geom.batch * out_len];
    let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
    for n in 0..geom.batch {
        let item = &input[n * in_len..(n + 1) * in_len];
        let dst = &mut out[n * out_len..(n + 1) * out_len];
        if let Some(b) = bias {
            for (o, row) in dst.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v = b[o]);
            }
        }
        let src: &[f64] = if geom.is_pointwise() {
            item
        } else {
            geom.im2col(item, &mut cols);
            &cols
        };
        gemm(geom.out_c, k, p, kernel, false, src, false, 1.0, dst);
    }
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub kernel: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub(crate) fn backward(
    geom: &ConvGeom,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    want: [bool; 3],
) -> ConvGrads {
    let [want_input, want_kernel, want_bias] = want;
    let k = geom.cols_rows();
    let p = geom.cols_len();
    let in_len = geom.in_c * geom.in_h * geom.in_w;
    let out_len = geom.out_c * p;
    let mut g_input = want_input.then(|| vec![0.0; geom.batch * in_len]);
    let mut g_kernel = want_kernel.then(|| vec![0.0; geom.out_c * k]);
    let mut g_bias = want_bias.then(|| vec![0.0; geom.out_c]);
    let pointwise = geom.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![0.0; k * p] };
    let mut dcols = if pointwise || !want_input { Vec::new() } else { vec![0.0; k * p] };
    for n in 0..geom.batch {
        let go = &grad_out[n * out_len..(n + 1) * out_len];
        if let Some(gb) = g_bias.as_mut() {
            for (o, row) in go.chunks(p).enumerate() {
                gb[o] += row.iter().sum::<f64>();
            }
        }
        if let Some(gk) = g_kernel.as_mut() {
            let item = &input[n * in_len..(n + 1) * in_len];
            let src: &[f64] = if pointwise {
                item
            } else {
                geom.im2col(item, &mut cols);
                &cols
            };
            gemm(geom.out_c, p, k, go, false, src, true, 1.0, gk);
        }
        if let Some(gi) = g_input.as_mut() {
            let dst = &mut gi[n * in_len..(n + 1) * in_len];
            if pointwise {
                gemm(k, geom.out_c, p, kernel, true, go, false, 1.0, dst);
            } else {
                gemm(k, geom.out_c, p, kernel, true, go, false, 0.0, &mut dcols);
                geom.col2im(&dcols, dst);
            }
        }
    }
    ConvGrads {
        input: g_input,
        kernel: g_kernel,
        bias: g_bias,
    }
}

/// Graph-free convolution, used where no gradient is needed.
pub fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let geom = ConvGeom::new(input.shape(), kernel.shape(), bias.map(Tensor::shape), stride, padding)?;
    let out = forward(&geom, input.values(), kernel.values(), bias.map(Tensor::values));
    Tensor::from_vec(geom.output_shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_dim_formula() {
        assert_eq!(conv_output_dim(5, 3, 1, 0), Some(3));
        assert_eq!(conv_output_dim(5, 3, 2, 1), Some(3));
        assert_eq!(conv_output_dim(64, 3, 2, 1), Some(32));
        assert_eq!(conv_output_dim(2, 3, 1, 0), None);
    }

    #[test]
    fn kernel_channel_mismatch_names_dimension() {
        let x = Tensor::zeros(Shape::new(1, 2, 4, 4).unwrap());
        let k = Tensor::zeros(Shape::new(1, 3, 3, 3).unwrap());
        let err = conv2d_forward(&x, &k, None, 1, 1).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
    }
}
