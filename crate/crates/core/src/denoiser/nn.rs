//! Dense kernels: 3x3 same-padded convolution via im2col + sgemm, affine
//! layers, and SiLU. Feature maps are `[C, H, W]` planes.

/// `C = alpha * op(A) * op(B) + beta * C`, all row-major. `op(A)` is `m x k`
/// and `op(B)` is `k x n`; `ta` / `tb` mean the stored matrix is the
/// transpose.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    ta: bool,
    b: &[f32],
    tb: bool,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted lengths bound every index the strides can reach.
    unsafe {
        matrixmultiply::sgemm(
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

#[inline]
pub(crate) fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn silu(x: f32) -> f32 {
    x * sigmoid(x)
}

#[inline]
pub(crate) fn silu_grad(x: f32) -> f32 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub(crate) fn silu_vec(v: &[f32]) -> Vec<f32> {
    v.iter().map(|&x| silu(x)).collect()
}

/// `cols[(ci*9 + ky*3 + kx), y*w + x] = input[ci, y+ky-1, x+kx-1]`, zero
/// outside the image.
pub(crate) fn im2col(input: &[f32], cin: usize, h: usize, w: usize, cols: &mut [f32]) {
    let n = h * w;
    debug_assert_eq!(input.len(), cin * n);
    debug_assert_eq!(cols.len(), cin * 9 * n);
    for ci in 0..cin {
        let plane = &input[ci * n..(ci + 1) * n];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * n..][..n];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back and accumulates into `out`.
pub(crate) fn col2im_add(cols: &[f32], cin: usize, h: usize, w: usize, out: &mut [f32]) {
    let n = h * w;
    for ci in 0..cin {
        let plane = &mut out[ci * n..(ci + 1) * n];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * n..][..n];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for (d, s) in dst[..w - 1].iter_mut().zip(&src[1..]) {
                                *d += s;
                            }
                        }
                        1 => {
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        _ => {
                            for (d, s) in dst[1..].iter_mut().zip(&src[..w - 1]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 convolution, stride 1, zero padding 1. Weights are `[cout, cin*9]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    pub cin: usize,
    pub cout: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv3x3 {
    pub fn zeros(cin: usize, cout: usize) -> Self {
        Self {
            cin,
            cout,
            weight: vec![0.0; cout * cin * 9],
            bias: vec![0.0; cout],
        }
    }

    pub fn forward(&self, input: &[f32], h: usize, w: usize) -> Vec<f32> {
        let n = h * w;
        let mut cols = vec![0.0; self.cin * 9 * n];
        im2col(input, self.cin, h, w, &mut cols);
        let mut out = vec![0.0; self.cout * n];
        gemm(self.cout, self.cin * 9, n, &self.weight, false, &cols, false, 0.0, &mut out);
        for (plane, b) in out.chunks_exact_mut(n).zip(&self.bias) {
            for v in plane {
                *v += b;
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to `input`.
    pub fn backward(
        &self,
        input: &[f32],
        h: usize,
        w: usize,
        dout: &[f32],
        grad: &mut Conv3x3,
        want_input_grad: bool,
    ) -> Option<Vec<f32>> {
        let n = h * w;
        let k = self.cin * 9;
        let mut cols = vec![0.0; k * n];
        im2col(input, self.cin, h, w, &mut cols);
        gemm(self.cout, n, k, dout, false, &cols, true, 1.0, &mut grad.weight);
        for (g, plane) in grad.bias.iter_mut().zip(dout.chunks_exact(n)) {
            *g += plane.iter().sum::<f32>();
        }
        if !want_input_grad {
            return None;
        }
        let mut dcols = vec![0.0; k * n];
        gemm(k, self.cout, n, &self.weight, true, dout, false, 0.0, &mut dcols);
        let mut din = vec![0.0; self.cin * n];
        col2im_add(&dcols, self.cin, h, w, &mut din);
        Some(din)
    }
}

/// `y = W x + b` with `W` stored `[dout, din]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub din: usize,
    pub dout: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn zeros(din: usize, dout: usize) -> Self {
        Self {
            din,
            dout,
            weight: vec![0.0; din * dout],
            bias: vec![0.0; dout],
        }
    }

    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        self.weight
            .chunks_exact(self.din)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>() + b)
            .collect()
    }

    pub fn backward(&self, x: &[f32], dy: &[f32], grad: &mut Linear) -> Vec<f32> {
        let mut dx = vec![0.0; self.din];
        for (o, &g) in dy.iter().enumerate() {
            grad.bias[o] += g;
            let grow = &mut grad.weight[o * self.din..(o + 1) * self.din];
            let wrow = &self.weight[o * self.din..(o + 1) * self.din];
            for i in 0..self.din {
                grow[i] += g * x[i];
                dx[i] += g * wrow[i];
            }
        }
        dx
    }
}
