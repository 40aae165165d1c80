//! Layer kernels: same-padded convolution via im2col + GEMM, leaky rectifier,
//! 2x2 max pooling and nearest-neighbor 2x upsampling, each with its backward.
//!
//! Feature maps are planar `[channels][height][width]` slices for one sample.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating-point element type of the network (`f32` or `f64`).
pub trait Scalar: Float + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Row-major `c = op(a) * op(b) + beta * c`, `op(a)` is `m x k`, `op(b)` is `k x n`.
    /// With `a_t`, `a` is stored as `k x m`; with `b_t`, `b` is stored as `n x k`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_t: bool, b: &[Self], b_t: bool, beta: Self, c: &mut [Self]);
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    // Strides of the logical rows x cols operand.
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_t: bool, b: &[Self], b_t: bool, beta: Self, c: &mut [Self]) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    c[..m * n].iter_mut().for_each(|v| *v *= beta);
                    return;
                }
                let (rsa, csa) = strides(m, k, a_t);
                let (rsb, csb) = strides(k, n, b_t);
                // SAFETY: bounds asserted above; strides address only m*k, k*n, m*n elements.
                unsafe {
                    $gemm(
                        m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Weights `[out][in][k][k]` and one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn zeros(in_ch: usize, out_ch: usize, ksize: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            ksize,
            weight: vec![T::zero(); out_ch * in_ch * ksize * ksize],
            bias: vec![T::zero(); out_ch],
        }
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.ksize * self.ksize
    }
}

fn im2col<T: Scalar>(x: &[T], ch: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut col = vec![T::zero(); ch * k * k * hw];
    for ci in 0..ch {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    let src = sy as usize * w;
                    let dst = &mut row[y * w + x0..y * w + x1];
                    let s = &plane[(src as isize + x0 as isize + dx) as usize..][..x1 - x0];
                    dst.copy_from_slice(s);
                }
            }
        }
    }
    col
}

fn col2im<T: Scalar>(col: &[T], ch: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut x = vec![T::zero(); ch * hw];
    for ci in 0..ch {
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    for xx in x0..x1 {
                        let sx = (xx as isize + dx) as usize;
                        x[ci * hw + sy as usize * w + sx] += row[y * w + xx];
                    }
                }
            }
        }
    }
    x
}

/// Same-padded (zero) convolution, cross-correlation convention.
pub fn conv_forward<T: Scalar>(p: &ConvParams<T>, x: &[T], h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); p.out_ch * hw];
    if p.in_ch > 0 {
        if p.ksize == 1 {
            T::gemm(p.out_ch, p.in_ch, hw, &p.weight, false, x, false, T::zero(), &mut out);
        } else {
            let col = im2col(x, p.in_ch, h, w, p.ksize);
            T::gemm(p.out_ch, p.patch_len(), hw, &p.weight, false, &col, false, T::zero(), &mut out);
        }
    }
    for (co, &b) in p.bias.iter().enumerate() {
        out[co * hw..(co + 1) * hw].iter_mut().for_each(|v| *v += b);
    }
    out
}

/// Accumulates weight/bias gradients into `grad` and returns the input
/// gradient when `need_input_grad` is set.
pub fn conv_backward<T: Scalar>(
    p: &ConvParams<T>,
    x: &[T],
    h: usize,
    w: usize,
    dy: &[T],
    grad: &mut ConvParams<T>,
    need_input_grad: bool,
) -> Option<Vec<T>> {
    let hw = h * w;
    for co in 0..p.out_ch {
        let mut s = T::zero();
        for &v in &dy[co * hw..(co + 1) * hw] {
            s += v;
        }
        grad.bias[co] += s;
    }
    if p.in_ch == 0 {
        return need_input_grad.then(Vec::new);
    }
    let kk = p.patch_len();
    if p.ksize == 1 {
        T::gemm(p.out_ch, hw, kk, dy, false, x, true, T::one(), &mut grad.weight);
        if !need_input_grad {
            return None;
        }
        let mut dx = vec![T::zero(); kk * hw];
        T::gemm(kk, p.out_ch, hw, &p.weight, true, dy, false, T::zero(), &mut dx);
        return Some(dx);
    }
    let col = im2col(x, p.in_ch, h, w, p.ksize);
    T::gemm(p.out_ch, hw, kk, dy, false, &col, true, T::one(), &mut grad.weight);
    if !need_input_grad {
        return None;
    }
    let mut dcol = vec![T::zero(); kk * hw];
    T::gemm(kk, p.out_ch, hw, &p.weight, true, dy, false, T::zero(), &mut dcol);
    Some(col2im(&dcol, p.in_ch, h, w, p.ksize))
}

pub fn leaky_forward<T: Scalar>(pre: &[T], slope: T) -> Vec<T> {
    pre.iter().map(|&v| if v > T::zero() { v } else { v * slope }).collect()
}

/// In-place: `dy` becomes the gradient with respect to the pre-activation.
pub fn leaky_backward<T: Scalar>(pre: &[T], dy: &mut [T], slope: T) {
    for (g, &v) in dy.iter_mut().zip(pre) {
        if v <= T::zero() {
            *g *= slope;
        }
    }
}

/// 2x2 max pooling; returns pooled maps and the flat argmax index of each output.
pub fn maxpool_forward<T: Scalar>(x: &[T], ch: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(ch * oh * ow);
    let mut idx = Vec::with_capacity(ch * oh * ow);
    for c in 0..ch {
        let base = c * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let k = base + (2 * i + di) * w + 2 * j + dj;
                    if x[k] > x[best] {
                        best = k;
                    }
                }
                out.push(x[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

pub fn maxpool_backward<T: Scalar>(dy: &[T], idx: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&g, &k) in dy.iter().zip(idx) {
        dx[k as usize] += g;
    }
    dx
}

pub fn upsample_forward<T: Scalar>(x: &[T], ch: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); ch * oh * ow];
    for c in 0..ch {
        for i in 0..oh {
            for j in 0..ow {
                out[(c * oh + i) * ow + j] = x[(c * h + i / 2) * w + j / 2];
            }
        }
    }
    out
}

/// `h`, `w` are the dimensions of the low-resolution input.
pub fn upsample_backward<T: Scalar>(dy: &[T], ch: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); ch * h * w];
    for c in 0..ch {
        for i in 0..oh {
            for j in 0..ow {
                dx[(c * h + i / 2) * w + j / 2] += dy[(c * oh + i) * ow + j];
            }
        }
    }
    dx
}
