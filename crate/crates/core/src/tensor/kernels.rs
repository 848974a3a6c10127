//! Raw compute kernels on row-major slices. Everything here runs in a fixed
//! loop order so results are bit-reproducible.

use super::{Real, Tensor};
use crate::error::TensorError;

/// Output extent of a convolution along one axis.
pub fn conv_output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// `out[m,n] = sum_k a[m,k] * b[k,n]`, overwriting `out`.
pub(crate) fn gemm<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    out.iter_mut().for_each(|v| *v = T::zero());
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// Dot product with eight fixed-order partial sums so it vectorizes.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            lanes[l] = lanes[l] + x[l] * y[l];
        }
    }
    let mut acc = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
    for (&x, &y) in ar.iter().zip(br) {
        acc = acc + x * y;
    }
    acc
}

/// `out[m,k] += sum_n g[m,n] * b[k,n]` (gradient w.r.t. the left factor).
pub(crate) fn gemm_nt_acc<T: Real>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = out[i * k + p] + dot(grow, brow);
        }
    }
}

/// `out[k,n] += sum_m a[m,k] * g[m,n]` (gradient w.r.t. the right factor).
pub(crate) fn gemm_tn_acc<T: Real>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o = *o + av * gv;
            }
        }
    }
}

/// Plain matrix product of a `[M,K]` and a `[K,N]` tensor.
pub fn matmul_forward<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (m, k) = match a.shape() {
        &[m, k] => (m, k),
        s => return Err(TensorError::shape("matmul", "[M,K]", s)),
    };
    let n = match b.shape() {
        &[k2, n] if k2 == k => n,
        s => return Err(TensorError::shape("matmul", format!("[{k},N]"), s)),
    };
    let mut out = vec![T::zero(); m * n];
    gemm(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(&[m, n], out)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self, TensorError> {
        let &[n, c, h, w] = input else {
            return Err(TensorError::shape("conv2d", "input [N,C,H,W]", input));
        };
        let &[f, kc, kh, kw] = kernel else {
            return Err(TensorError::shape("conv2d", "kernel [F,C,kH,kW]", kernel));
        };
        if kc != c {
            return Err(TensorError::shape(
                "conv2d",
                format!("kernel with {c} input channels"),
                kernel,
            ));
        }
        if stride == 0 {
            return Err(TensorError::invalid("conv2d", "stride must be >= 1"));
        }
        let oh = conv_output_extent(h, kh, stride, padding).ok_or_else(|| {
            TensorError::invalid(
                "conv2d",
                format!("kernel height {kh} exceeds padded input height {}", h + 2 * padding),
            )
        })?;
        let ow = conv_output_extent(w, kw, stride, padding).ok_or_else(|| {
            TensorError::invalid(
                "conv2d",
                format!("kernel width {kw} exceeds padded input width {}", w + 2 * padding),
            )
        })?;
        Ok(ConvGeom {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            oh,
            ow,
            stride,
            padding,
        })
    }

    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    /// Range of output positions along one axis whose tap `k` lands inside
    /// an input of extent `len`.
    fn valid(&self, k: usize, len: usize, out: usize) -> (usize, usize) {
        let lo = self.padding.saturating_sub(k).div_ceil(self.stride);
        let hi = if len + self.padding > k {
            ((len - 1 + self.padding - k) / self.stride + 1).min(out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Unfold one sample into `cols[(c,ki,kj), (oy,ox)]`.
    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let p = self.out_pixels();
        for ci in 0..self.c {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                let (y0, y1) = self.valid(ki, self.h, self.oh);
                for kj in 0..self.kw {
                    let (x0, x1) = self.valid(kj, self.w, self.ow);
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    dst.iter_mut().for_each(|v| *v = T::zero());
                    for oy in y0..y1 {
                        let iy = oy * self.stride + ki - self.padding;
                        let src = &plane[iy * self.w..(iy + 1) * self.w];
                        let out = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if self.stride == 1 {
                            let ix0 = x0 + kj - self.padding;
                            out[x0..x1].copy_from_slice(&src[ix0..ix0 + (x1 - x0)]);
                        } else {
                            for ox in x0..x1 {
                                out[ox] = src[ox * self.stride + kj - self.padding];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add `cols` back onto one input sample.
    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let p = self.out_pixels();
        for ci in 0..self.c {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                let (y0, y1) = self.valid(ki, self.h, self.oh);
                for kj in 0..self.kw {
                    let (x0, x1) = self.valid(kj, self.w, self.ow);
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in y0..y1 {
                        let iy = oy * self.stride + ki - self.padding;
                        let dst = &mut plane[iy * self.w..(iy + 1) * self.w];
                        let s = &src[oy * self.ow..(oy + 1) * self.ow];
                        for ox in x0..x1 {
                            let ix = ox * self.stride + kj - self.padding;
                            dst[ix] = dst[ix] + s[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Direct 2-D cross-correlation (no bias), `[N,C,H,W] * [F,C,kH,kW]`.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, TensorError> {
    let g = ConvGeom::new(input.shape(), kernel.shape(), stride, padding)?;
    Ok(conv2d_raw(&g, input.data(), kernel.data()))
}

pub(crate) fn conv2d_raw<T: Real>(g: &ConvGeom, x: &[T], k: &[T]) -> Tensor<T> {
    let (kl, p) = (g.patch_len(), g.out_pixels());
    let in_len = g.c * g.h * g.w;
    let out_len = g.f * p;
    let mut out = vec![T::zero(); g.n * out_len];
    let mut cols = vec![T::zero(); kl * p];
    for s in 0..g.n {
        g.im2col(&x[s * in_len..(s + 1) * in_len], &mut cols);
        gemm(k, &cols, &mut out[s * out_len..(s + 1) * out_len], g.f, kl, p);
    }
    Tensor {
        shape: vec![g.n, g.f, g.oh, g.ow],
        data: out,
    }
}

/// Gradients of a convolution w.r.t. input and kernel; either may be skipped.
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    k: &[T],
    dout: &[T],
    want_dx: bool,
    want_dk: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (kl, p) = (g.patch_len(), g.out_pixels());
    let in_len = g.c * g.h * g.w;
    let out_len = g.f * p;
    let mut dx = want_dx.then(|| vec![T::zero(); g.n * in_len]);
    let mut dk = want_dk.then(|| vec![T::zero(); g.f * kl]);
    let mut cols = vec![T::zero(); kl * p];
    let mut dcols = vec![T::zero(); kl * p];
    for s in 0..g.n {
        let go = &dout[s * out_len..(s + 1) * out_len];
        if let Some(dk) = dk.as_mut() {
            g.im2col(&x[s * in_len..(s + 1) * in_len], &mut cols);
            gemm_nt_acc(go, &cols, dk, g.f, kl, p);
        }
        if let Some(dx) = dx.as_mut() {
            dcols.iter_mut().for_each(|v| *v = T::zero());
            gemm_tn_acc(k, go, &mut dcols, g.f, kl, p);
            g.col2im(&dcols, &mut dx[s * in_len..(s + 1) * in_len]);
        }
    }
    (dx, dk)
}
