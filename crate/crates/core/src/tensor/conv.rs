//! Convolution geometry and the slice-level kernels behind the tape ops.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    /// Output extent `ceil(in / stride)`; an odd total goes on the trailing side.
    Same,
    Explicit {
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
    },
}

/// Resolved geometry of a strided, padded cross-correlation from the
/// `in_*` grid to the `out_*` grid. Transposed convolutions reuse the
/// geometry of the forward convolution they are the adjoint of.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn same_split(total: usize) -> (usize, usize) {
    (total / 2, total - total / 2)
}

impl ConvGeometry {
    pub fn forward(
        op: &'static str,
        in_h: usize,
        in_w: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config(format!("{op}: stride must be at least 1")));
        }
        if kernel == 0 {
            return Err(Error::Config(format!("{op}: kernel size must be positive")));
        }
        let ((pt, pb), (pl, pr)) = match padding {
            Padding::Valid => ((0, 0), (0, 0)),
            Padding::Same => {
                let total = |n: usize| {
                    let out = n.div_ceil(stride);
                    ((out - 1) * stride + kernel).saturating_sub(n)
                };
                (same_split(total(in_h)), same_split(total(in_w)))
            }
            Padding::Explicit {
                top,
                bottom,
                left,
                right,
            } => ((top, bottom), (left, right)),
        };
        let padded_h = in_h + pt + pb;
        let padded_w = in_w + pl + pr;
        if kernel > padded_h || kernel > padded_w {
            return Err(Error::dim(
                op,
                format!("kernel {kernel}x{kernel} exceeds padded input H={padded_h}, W={padded_w}"),
            ));
        }
        Ok(ConvGeometry {
            in_h,
            in_w,
            out_h: (padded_h - kernel) / stride + 1,
            out_w: (padded_w - kernel) / stride + 1,
            kernel,
            stride,
            pad_top: pt,
            pad_left: pl,
        })
    }

    /// Geometry for a transposed convolution taking an `h x w` map to
    /// `(h-1)*stride + kernel - pad_total` per axis. `in_*` in the result is
    /// the large (output) side.
    pub fn transposed(
        op: &'static str,
        h: usize,
        w: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config(format!("{op}: stride must be at least 1")));
        }
        let ((pt, pb), (pl, pr)) = match padding {
            Padding::Valid => ((0, 0), (0, 0)),
            Padding::Same => {
                if kernel < stride {
                    return Err(Error::Config(format!(
                        "{op}: same padding needs kernel >= stride, got {kernel} < {stride}"
                    )));
                }
                let s = same_split(kernel - stride);
                (s, s)
            }
            Padding::Explicit {
                top,
                bottom,
                left,
                right,
            } => ((top, bottom), (left, right)),
        };
        let full = |n: usize| (n - 1) * stride + kernel;
        let out = |n: usize, p0: usize, p1: usize| -> Result<usize> {
            let f = full(n);
            if p0 + p1 >= f {
                return Err(Error::Config(format!(
                    "{op}: padding {} leaves no output from extent {f}",
                    p0 + p1
                )));
            }
            Ok(f - p0 - p1)
        };
        let big_h = out(h, pt, pb)?;
        let big_w = out(w, pl, pr)?;
        Ok(ConvGeometry {
            in_h: big_h,
            in_w: big_w,
            out_h: h,
            out_w: w,
            kernel,
            stride,
            pad_top: pt,
            pad_left: pl,
        })
    }

    pub(crate) fn is_identity_1x1(&self) -> bool {
        self.kernel == 1
            && self.stride == 1
            && self.pad_top == 0
            && self.pad_left == 0
            && self.out_h == self.in_h
            && self.out_w == self.in_w
    }
}

/// `c[m,n] (+)= a[m,k] * b[k,n]`, where `a_t`/`b_t` say the operand is stored
/// transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index the strides can reach.
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

/// Lowers `x[n, in_h, in_w, c]` to rows of receptive fields,
/// `[n*out_h*out_w, k*k*c]`, column order (ki, kj, c).
pub(crate) fn im2col(x: &[f32], batch: usize, ch: usize, g: &ConvGeometry) -> Vec<f32> {
    let k = g.kernel;
    let row = k * k * ch;
    let mut cols = vec![0.0f32; batch * g.out_h * g.out_w * row];
    for b in 0..batch {
        let xb = &x[b * g.in_h * g.in_w * ch..];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let r = ((b * g.out_h + oy) * g.out_w + ox) * row;
                let (kj0, kj1) = valid_taps(ox, g.stride, g.pad_left, k, g.in_w);
                if kj0 >= kj1 {
                    continue;
                }
                let ix0 = ox * g.stride + kj0 - g.pad_left;
                let span = (kj1 - kj0) * ch;
                for ki in 0..k {
                    let iy = (oy * g.stride + ki) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let src = (iy as usize * g.in_w + ix0) * ch;
                    let dst = r + (ki * k + kj0) * ch;
                    cols[dst..dst + span].copy_from_slice(&xb[src..src + span]);
                }
            }
        }
    }
    cols
}

/// Kernel columns `kj0..kj1` whose input column lands inside `0..in_w`.
fn valid_taps(ox: usize, stride: usize, pad: usize, k: usize, in_w: usize) -> (usize, usize) {
    let start = ox * stride;
    let kj0 = pad.saturating_sub(start);
    let kj1 = (in_w + pad).saturating_sub(start).min(k);
    (kj0, kj1.max(kj0))
}

/// Adjoint of [`im2col`]: scatter-adds receptive-field rows back into
/// `x[n, in_h, in_w, c]`.
pub(crate) fn col2im(cols: &[f32], batch: usize, ch: usize, g: &ConvGeometry, x: &mut [f32]) {
    let k = g.kernel;
    let row = k * k * ch;
    for b in 0..batch {
        let xb = &mut x[b * g.in_h * g.in_w * ch..(b + 1) * g.in_h * g.in_w * ch];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let r = ((b * g.out_h + oy) * g.out_w + ox) * row;
                let (kj0, kj1) = valid_taps(ox, g.stride, g.pad_left, k, g.in_w);
                if kj0 >= kj1 {
                    continue;
                }
                let ix0 = ox * g.stride + kj0 - g.pad_left;
                let span = (kj1 - kj0) * ch;
                for ki in 0..k {
                    let iy = (oy * g.stride + ki) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = (iy as usize * g.in_w + ix0) * ch;
                    let src = r + (ki * k + kj0) * ch;
                    xb[dst..dst + span]
                        .iter_mut()
                        .zip(&cols[src..src + span])
                        .for_each(|(a, b)| *a += b);
                }
            }
        }
    }
}

/// Per-channel cross-correlation; `kernel` is `[k, k, c]`.
pub(crate) fn depthwise_forward(
    x: &[f32],
    kernel: &[f32],
    batch: usize,
    ch: usize,
    g: &ConvGeometry,
) -> Vec<f32> {
    let k = g.kernel;
    let mut y = vec![0.0f32; batch * g.out_h * g.out_w * ch];
    for b in 0..batch {
        let xb = &x[b * g.in_h * g.in_w * ch..];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let o = ((b * g.out_h + oy) * g.out_w + ox) * ch;
                let out = &mut y[o..o + ch];
                for ki in 0..k {
                    let iy = (oy * g.stride + ki) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for kj in 0..k {
                        let ix = (ox * g.stride + kj) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= g.in_w as isize {
                            continue;
                        }
                        let src = (iy as usize * g.in_w + ix as usize) * ch;
                        let kw = &kernel[(ki * k + kj) * ch..(ki * k + kj + 1) * ch];
                        for ((o, &xv), &w) in out.iter_mut().zip(&xb[src..src + ch]).zip(kw) {
                            *o += xv * w;
                        }
                    }
                }
            }
        }
    }
    y
}

/// Gradients of [`depthwise_forward`] w.r.t. input and kernel.
pub(crate) fn depthwise_backward(
    x: &[f32],
    kernel: &[f32],
    dy: &[f32],
    batch: usize,
    ch: usize,
    g: &ConvGeometry,
    want_dx: bool,
    want_dk: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
    let k = g.kernel;
    let mut dx = want_dx.then(|| vec![0.0f32; x.len()]);
    let mut dk = want_dk.then(|| vec![0.0f32; kernel.len()]);
    for b in 0..batch {
        let base = b * g.in_h * g.in_w * ch;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let o = ((b * g.out_h + oy) * g.out_w + ox) * ch;
                let gy = &dy[o..o + ch];
                for ki in 0..k {
                    let iy = (oy * g.stride + ki) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for kj in 0..k {
                        let ix = (ox * g.stride + kj) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= g.in_w as isize {
                            continue;
                        }
                        let src = base + (iy as usize * g.in_w + ix as usize) * ch;
                        let kofs = (ki * k + kj) * ch;
                        if let Some(dx) = dx.as_mut() {
                            let kw = &kernel[kofs..kofs + ch];
                            for ((d, &w), &gv) in dx[src..src + ch].iter_mut().zip(kw).zip(gy) {
                                *d += w * gv;
                            }
                        }
                        if let Some(dk) = dk.as_mut() {
                            let xs = &x[src..src + ch];
                            for ((d, &xv), &gv) in dk[kofs..kofs + ch].iter_mut().zip(xs).zip(gy) {
                                *d += xv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dk)
}

/// Visits the (small pixel, tap, large pixel) triples of a geometry one
/// run at a time: the small grid is `out_*`, the large one `in_*`. For each
/// tap and small row, `f(tap, s0, l0, len)` covers small pixels
/// `s0..s0+len` and large pixels `l0, l0+stride, ..`.
#[inline(always)]
fn for_each_tap_run(batch: usize, g: &ConvGeometry, mut f: impl FnMut(usize, usize, usize, usize)) {
    let (k, s) = (g.kernel, g.stride);
    // valid small-column range per kernel column
    let runs: Vec<(usize, usize)> = (0..k)
        .map(|kj| {
            let lo = g.pad_left.saturating_sub(kj).div_ceil(s);
            let hi = if g.in_w + g.pad_left > kj {
                ((g.in_w + g.pad_left - kj - 1) / s + 1).min(g.out_w)
            } else {
                0
            };
            (lo, hi.max(lo))
        })
        .collect();
    for b in 0..batch {
        for oy in 0..g.out_h {
            let srow = (b * g.out_h + oy) * g.out_w;
            for ki in 0..k {
                let iy = (oy * s + ki) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                let lrow = (b * g.in_h + iy as usize) * g.in_w;
                for (kj, &(lo, hi)) in runs.iter().enumerate() {
                    if lo < hi {
                        let l0 = lrow + lo * s + kj - g.pad_left;
                        f(ki * k + kj, srow + lo, l0, hi - lo);
                    }
                }
            }
        }
    }
}

/// Fixed-width view of `v[i*N..(i+1)*N]`.
#[inline(always)]
fn lane<const N: usize>(v: &[f32], i: usize) -> &[f32; N] {
    v[i * N..(i + 1) * N].try_into().unwrap()
}

#[inline(always)]
fn lane_mut<const N: usize>(v: &mut [f32], i: usize) -> &mut [f32; N] {
    (&mut v[i * N..(i + 1) * N]).try_into().unwrap()
}

fn direct_forward<const CIN: usize>(
    x: &[f32],
    kernel: &[f32],
    batch: usize,
    cout: usize,
    g: &ConvGeometry,
) -> Vec<f32> {
    let mut y = vec![0.0f32; batch * g.in_h * g.in_w * cout];
    let step = g.stride * cout;
    for_each_tap_run(batch, g, |tap, s0, l0, len| {
        let xs = x[s0 * CIN..(s0 + len) * CIN].chunks_exact(CIN);
        for co in 0..cout {
            let w = lane::<CIN>(kernel, tap * cout + co);
            let ys = y[l0 * cout + co..].iter_mut().step_by(step);
            for (yv, xi) in ys.zip(xs.clone()) {
                let mut prod = [0.0f32; CIN];
                for c in 0..CIN {
                    prod[c] = xi[c] * w[c];
                }
                *yv += prod.iter().sum::<f32>();
            }
        }
    });
    y
}

#[allow(clippy::too_many_arguments)]
fn direct_backward<const CIN: usize>(
    x: &[f32],
    kernel: &[f32],
    gy: &[f32],
    batch: usize,
    cout: usize,
    g: &ConvGeometry,
    dx: Option<&mut [f32]>,
    dk: Option<&mut [f32]>,
) {
    let step = g.stride * cout;
    if let Some(dx) = dx {
        for_each_tap_run(batch, g, |tap, s0, l0, len| {
            for co in 0..cout {
                let w = *lane::<CIN>(kernel, tap * cout + co);
                let gs = gy[l0 * cout + co..].iter().step_by(step);
                let ds = dx[s0 * CIN..(s0 + len) * CIN].chunks_exact_mut(CIN);
                for (d, &gv) in ds.zip(gs) {
                    for c in 0..CIN {
                        d[c] += gv * w[c];
                    }
                }
            }
        });
    }
    if let Some(dk) = dk {
        for_each_tap_run(batch, g, |tap, s0, l0, len| {
            let xs = x[s0 * CIN..(s0 + len) * CIN].chunks_exact(CIN);
            for co in 0..cout {
                let mut acc = [0.0f32; CIN];
                let gs = gy[l0 * cout + co..].iter().step_by(step);
                for (xi, &gv) in xs.clone().zip(gs) {
                    for c in 0..CIN {
                        acc[c] += gv * xi[c];
                    }
                }
                let d = lane_mut::<CIN>(dk, tap * cout + co);
                for c in 0..CIN {
                    d[c] += acc[c];
                }
            }
        });
    }
}

/// Input channel counts with a specialized direct transposed-conv kernel.
/// Other shapes go through gemm + col2im.
pub(crate) fn has_direct_kernel(cin: usize, cout: usize) -> bool {
    matches!(cin, 1 | 2 | 4 | 8 | 16) && cout <= 16
}

macro_rules! dispatch_cin {
    ($cin:expr, $f:ident, $($arg:expr),*) => {
        match $cin {
            1 => $f::<1>($($arg),*),
            2 => $f::<2>($($arg),*),
            4 => $f::<4>($($arg),*),
            8 => $f::<8>($($arg),*),
            16 => $f::<16>($($arg),*),
            c => unreachable!("no direct kernel for {c} input channels"),
        }
    };
}

/// Transposed convolution by direct scatter; `x` lives on the small grid,
/// `kernel` is `[k, k, cout, cin]`.
pub(crate) fn transposed_direct_forward(
    x: &[f32],
    kernel: &[f32],
    batch: usize,
    cin: usize,
    cout: usize,
    g: &ConvGeometry,
) -> Vec<f32> {
    dispatch_cin!(cin, direct_forward, x, kernel, batch, cout, g)
}

/// Input and kernel gradients of [`transposed_direct_forward`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn transposed_direct_backward(
    x: &[f32],
    kernel: &[f32],
    gy: &[f32],
    batch: usize,
    cin: usize,
    cout: usize,
    g: &ConvGeometry,
    need_dx: bool,
    need_dk: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
    let mut dx = need_dx.then(|| vec![0.0f32; x.len()]);
    let mut dk = need_dk.then(|| vec![0.0f32; kernel.len()]);
    dispatch_cin!(
        cin,
        direct_backward,
        x,
        kernel,
        gy,
        batch,
        cout,
        g,
        dx.as_deref_mut(),
        dk.as_deref_mut()
    );
    (dx, dk)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_halves_with_stride_two() {
        let g = ConvGeometry::forward("t", 128, 156, 5, 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w), (64, 78));
        // total pad 3 on H: one before, two after
        assert_eq!(g.pad_top, 1);
        let g = ConvGeometry::forward("t", 7, 7, 3, 1, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w, g.pad_top), (7, 7, 1));
    }

    #[test]
    fn valid_output_extent() {
        let g = ConvGeometry::forward("t", 6, 6, 3, 2, Padding::Valid).unwrap();
        assert_eq!((g.out_h, g.out_w), (2, 2));
        assert!(ConvGeometry::forward("t", 2, 2, 3, 1, Padding::Valid).is_err());
        assert!(ConvGeometry::forward("t", 4, 4, 3, 0, Padding::Valid).is_err());
    }

    #[test]
    fn transposed_extent() {
        let g = ConvGeometry::transposed("t", 4, 5, 3, 2, Padding::Same).unwrap();
        assert_eq!((g.in_h, g.in_w), (8, 10));
        let g = ConvGeometry::transposed("t", 2, 2, 2, 2, Padding::Valid).unwrap();
        assert_eq!((g.in_h, g.in_w), (4, 4));
        let err = ConvGeometry::transposed(
            "t",
            1,
            1,
            2,
            1,
            Padding::Explicit {
                top: 1,
                bottom: 1,
                left: 0,
                right: 0,
            },
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeometry::forward("t", 5, 4, 3, 2, Padding::Same).unwrap();
        let ch = 2;
        let x: Vec<f32> = (0..5 * 4 * ch).map(|i| (i as f32 * 0.37).sin()).collect();
        let cols = im2col(&x, 1, ch, &g);
        let y: Vec<f32> = (0..cols.len()).map(|i| (i as f32 * 0.11).cos()).collect();
        let mut back = vec![0.0; x.len()];
        col2im(&y, 1, ch, &g, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| (a * b) as f64).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }
}
