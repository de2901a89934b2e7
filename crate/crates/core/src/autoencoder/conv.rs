//! Stride-2, kernel-5 3D convolution and its transpose.
//!
//! Both operators share one index map between a "small" grid of size `n`
//! and a "big" grid of size `2n`: small voxel `s` and kernel tap `k` touch
//! big voxel `2s + k - 1` (one voxel of leading padding, as for "same"
//! padding with an even input). The convolution gathers big → small, the
//! transposed convolution scatters small → big, and each one's input
//! gradient is the other's forward pass. Both are computed as an
//! unfold (im2col) or fold (col2im) around a single-threaded GEMM, so
//! results do not depend on the thread pool.

use super::tensor::Tensor4;

pub const KERNEL: usize = 5;
pub const STRIDE: usize = 2;
const PAD: usize = 1;
const TAPS: usize = KERNEL * KERNEL * KERNEL;

/// Small-grid indices `s` for which `2s + k - 1` lies in `[0, 2n)`.
#[inline]
fn tap_range(k: usize, n: usize) -> (usize, usize) {
    let lo = if k < PAD { 1 } else { 0 };
    // 2s + k - 1 <= 2n - 1  <=>  s <= (2n - k) / 2
    let last = (2 * n as i64 + PAD as i64 - k as i64 - 1).div_euclid(2);
    let hi = (last + 1).clamp(0, n as i64) as usize;
    (lo, hi.max(lo))
}

#[derive(Clone, Copy)]
struct Geometry {
    small: [usize; 3],
    big: [usize; 3],
}

impl Geometry {
    fn new(small: [usize; 3]) -> Self {
        Self {
            small,
            big: small.map(|n| n * STRIDE),
        }
    }

    /// Calls `f(small_row_offset, big_row_offset, x_lo, x_hi)` for every
    /// valid row pairing of tap `(kx, ky, kz)`.
    #[inline]
    fn for_rows(
        &self,
        kx: usize,
        ky: usize,
        kz: usize,
        mut f: impl FnMut(usize, usize, usize, usize),
    ) {
        let [nx, ny, nz] = self.small;
        let [bx, by, _] = self.big;
        let (x0, x1) = tap_range(kx, nx);
        let (y0, y1) = tap_range(ky, ny);
        let (z0, z1) = tap_range(kz, nz);
        if x0 >= x1 {
            return;
        }
        for z in z0..z1 {
            let bz = 2 * z + kz - PAD;
            for y in y0..y1 {
                let by_ = 2 * y + ky - PAD;
                f((z * ny + y) * nx, (bz * by + by_) * bx, x0, x1);
            }
        }
    }
}

/// Unfolds the big-grid channels of `big` into a `(channels * 125) x P`
/// row-major matrix, `P` being the small-grid size.
fn im2col(big: &Tensor4, g: &Geometry) -> Vec<f64> {
    let p: usize = g.small.iter().product();
    let mut cols = vec![0.0; big.channels() * TAPS * p];
    for (row, dst) in cols.chunks_mut(p).enumerate() {
        let (c, tap) = (row / TAPS, row % TAPS);
        let src = big.channel(c);
        let (kx, ky, kz) = (
            tap % KERNEL,
            (tap / KERNEL) % KERNEL,
            tap / (KERNEL * KERNEL),
        );
        g.for_rows(kx, ky, kz, |so, bo, x0, x1| {
            let d = &mut dst[so + x0..so + x1];
            let s = &src[bo + 2 * x0 + kx - PAD..];
            for (d, s) in d.iter_mut().zip(s.iter().step_by(2)) {
                *d = *s;
            }
        });
    }
    cols
}

/// Adjoint of [`im2col`]: folds the matrix back, summing overlaps.
fn col2im(cols: &[f64], channels: usize, g: &Geometry) -> Tensor4 {
    let p: usize = g.small.iter().product();
    let mut out = Tensor4::zeros(channels, g.big);
    let plane = out.plane_len();
    for (row, src) in cols.chunks(p).enumerate() {
        let (c, tap) = (row / TAPS, row % TAPS);
        let dst = &mut out.data_mut()[c * plane..(c + 1) * plane];
        let (kx, ky, kz) = (
            tap % KERNEL,
            (tap / KERNEL) % KERNEL,
            tap / (KERNEL * KERNEL),
        );
        g.for_rows(kx, ky, kz, |so, bo, x0, x1| {
            let s = &src[so + x0..so + x1];
            let d = &mut dst[bo + 2 * x0 + kx - PAD..];
            for (d, s) in d.iter_mut().step_by(2).zip(s) {
                *d += *s;
            }
        });
    }
    out
}

#[derive(Clone, Copy)]
enum Op {
    N,
    T,
}

/// `c = a * b` (with optional transposes) for row-major `a`, `b`, `c`,
/// where `c` is `m x n` and the inner dimension is `k`.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: Op, b: &[f64], tb: Op, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = match ta {
        Op::N => (k as isize, 1),
        Op::T => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Op::N => (n as isize, 1),
        Op::T => (1, k as isize),
    };
    // SAFETY: the strides above address exactly the m*k, k*n and m*n
    // elements of the three slices, whose lengths are checked above.
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
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn channel_sums(t: &Tensor4) -> Vec<f64> {
    (0..t.channels())
        .map(|c| t.channel(c).iter().sum())
        .collect()
}

fn add_bias(t: &mut Tensor4, bias: &[f64]) {
    let plane = t.plane_len();
    for (dst, &b) in t.data_mut().chunks_mut(plane).zip(bias) {
        for v in dst {
            *v += b;
        }
    }
}

/// Gradients of one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Strided convolution, big → small. `weights` is laid out
/// `[out][in][kz][ky][kx]`.
pub fn conv_forward(input: &Tensor4, weights: &[f64], bias: &[f64], out_ch: usize) -> Tensor4 {
    let g = Geometry::new(input.dims().map(|d| d / STRIDE));
    let p: usize = g.small.iter().product();
    let k = input.channels() * TAPS;
    let cols = im2col(input, &g);
    let mut out = Tensor4::zeros(out_ch, g.small);
    gemm(out_ch, k, p, weights, Op::N, &cols, Op::N, out.data_mut());
    add_bias(&mut out, bias);
    out
}

/// Backward pass of [`conv_forward`]: parameter gradients and, if asked,
/// the gradient with respect to the input.
pub fn conv_backward(
    input: &Tensor4,
    weights: &[f64],
    grad_out: &Tensor4,
    need_input_grad: bool,
) -> (LayerGrad, Option<Tensor4>) {
    let g = Geometry::new(grad_out.dims());
    let p: usize = g.small.iter().product();
    let out_ch = grad_out.channels();
    let k = input.channels() * TAPS;
    let cols = im2col(input, &g);
    let mut gw = vec![0.0; out_ch * k];
    gemm(out_ch, p, k, grad_out.data(), Op::N, &cols, Op::T, &mut gw);
    let grad_in = need_input_grad.then(|| {
        let mut gcols = vec![0.0; k * p];
        gemm(
            k,
            out_ch,
            p,
            weights,
            Op::T,
            grad_out.data(),
            Op::N,
            &mut gcols,
        );
        col2im(&gcols, input.channels(), &g)
    });
    let bias = channel_sums(grad_out);
    (LayerGrad { weights: gw, bias }, grad_in)
}

/// Transposed strided convolution, small → big. `weights` is laid out
/// `[in][out][kz][ky][kx]`.
pub fn tconv_forward(input: &Tensor4, weights: &[f64], bias: &[f64], out_ch: usize) -> Tensor4 {
    let g = Geometry::new(input.dims());
    let p: usize = g.small.iter().product();
    let k = out_ch * TAPS;
    let mut cols = vec![0.0; k * p];
    gemm(
        k,
        input.channels(),
        p,
        weights,
        Op::T,
        input.data(),
        Op::N,
        &mut cols,
    );
    let mut out = col2im(&cols, out_ch, &g);
    add_bias(&mut out, bias);
    out
}

/// Backward pass of [`tconv_forward`].
pub fn tconv_backward(
    input: &Tensor4,
    weights: &[f64],
    grad_out: &Tensor4,
    need_input_grad: bool,
) -> (LayerGrad, Option<Tensor4>) {
    let g = Geometry::new(input.dims());
    let p: usize = g.small.iter().product();
    let in_ch = input.channels();
    let k = grad_out.channels() * TAPS;
    let gcols = im2col(grad_out, &g);
    let mut gw = vec![0.0; in_ch * k];
    gemm(in_ch, p, k, input.data(), Op::N, &gcols, Op::T, &mut gw);
    let grad_in = need_input_grad.then(|| {
        let mut gi = Tensor4::zeros(in_ch, input.dims());
        gemm(in_ch, k, p, weights, Op::N, &gcols, Op::N, gi.data_mut());
        gi
    });
    let bias = channel_sums(grad_out);
    (LayerGrad { weights: gw, bias }, grad_in)
}
