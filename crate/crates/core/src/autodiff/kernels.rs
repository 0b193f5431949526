//! Forward and backward loops for the engine's ops. All reductions run in a
//! fixed order so results are bit-reproducible.

use crate::error::{Error, Result};
use crate::tensor::{strides, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolMode {
    Avg,
    Max,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub ho: usize,
    pub wo: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn new(
        x: &[usize],
        k: &[usize],
        b: &[usize],
        padding: Padding,
        stride: usize,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidShape(msg));
        if x.len() != 4 || k.len() != 4 {
            return bad(format!("conv2d expects NHWC input and KhKwCinCout kernel, got {x:?} and {k:?}"));
        }
        if stride == 0 {
            return bad("conv2d stride must be positive".into());
        }
        let (n, h, w, cin) = (x[0], x[1], x[2], x[3]);
        let (kh, kw, kcin, cout) = (k[0], k[1], k[2], k[3]);
        if kcin != cin {
            return bad(format!("kernel expects {kcin} input channels, input has {cin}"));
        }
        if b != [cout] {
            return bad(format!("bias shape {b:?} does not match {cout} output channels"));
        }
        let (ho, wo, pad_top, pad_left) = match padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return bad(format!("same padding needs odd kernel extents, got {kh}x{kw}"));
                }
                (h.div_ceil(stride), w.div_ceil(stride), (kh - 1) / 2, (kw - 1) / 2)
            }
            Padding::Valid => {
                if kh > h || kw > w {
                    return bad(format!("valid {kh}x{kw} kernel larger than {h}x{w} input"));
                }
                ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
            }
        };
        Ok(Self {
            n,
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            ho,
            wo,
            stride,
            pad_top,
            pad_left,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.ho, self.wo, self.cout]
    }

    /// Visits every (output pixel, kernel tap) pair that lands inside the input.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for n in 0..self.n {
            for i in 0..self.ho {
                for j in 0..self.wo {
                    let out = ((n * self.ho + i) * self.wo + j) * self.cout;
                    for ki in 0..self.kh {
                        let ii = (i * self.stride + ki) as isize - self.pad_top as isize;
                        if ii < 0 || ii >= self.h as isize {
                            continue;
                        }
                        for kj in 0..self.kw {
                            let jj = (j * self.stride + kj) as isize - self.pad_left as isize;
                            if jj < 0 || jj >= self.w as isize {
                                continue;
                            }
                            let inp = ((n * self.h + ii as usize) * self.w + jj as usize) * self.cin;
                            let tap = (ki * self.kw + kj) * self.cin * self.cout;
                            f(out, inp, tap);
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(g: &ConvGeom, x: &[T], k: &[T], b: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.ho * g.wo * g.cout];
    for px in out.chunks_exact_mut(g.cout) {
        px.copy_from_slice(b);
    }
    let (cin, cout) = (g.cin, g.cout);
    g.for_each_tap(|o, xi, t| {
        let acc = &mut out[o..o + cout];
        for ci in 0..cin {
            let xv = x[xi + ci];
            let row = &k[t + ci * cout..t + (ci + 1) * cout];
            for (a, &wv) in acc.iter_mut().zip(row) {
                *a += xv * wv;
            }
        }
    });
    out
}

pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    k: &[T],
    grad: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut gx = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); k.len()];
    let mut gb = vec![T::zero(); g.cout];
    for px in grad.chunks_exact(g.cout) {
        for (a, &v) in gb.iter_mut().zip(px) {
            *a += v;
        }
    }
    let (cin, cout) = (g.cin, g.cout);
    g.for_each_tap(|o, xi, t| {
        let go = &grad[o..o + cout];
        for ci in 0..cin {
            let xv = x[xi + ci];
            let row = &k[t + ci * cout..t + (ci + 1) * cout];
            let grow = &mut gk[t + ci * cout..t + (ci + 1) * cout];
            let mut acc = T::zero();
            for ((gw, &wv), &gv) in grow.iter_mut().zip(row).zip(go) {
                acc += gv * wv;
                *gw += xv * gv;
            }
            gx[xi + ci] += acc;
        }
    });
    (gx, gk, gb)
}

/// Output shape when broadcasting `a` against `b` (equal rank, extent-1 axes stretch).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::InvalidShape(format!(
            "cannot broadcast {a:?} with {b:?}: rank differs"
        )));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::InvalidShape(format!(
                "cannot broadcast {a:?} with {b:?}"
            ))),
        })
        .collect()
}

fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    strides(shape)
        .into_iter()
        .zip(shape.iter().zip(out))
        .map(|(s, (&e, &o))| if e == o { s } else { 0 })
        .collect()
}

/// Calls `f(out_index, a_index, b_index)` for every output element in row-major order.
pub(crate) fn broadcast_walk(
    out: &[usize],
    a: &[usize],
    b: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out.len();
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let last = out[rank - 1];
    let (la, lb) = (sa[rank - 1], sb[rank - 1]);
    let outer: usize = out[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank - 1];
    let (mut oa, mut ob, mut o) = (0usize, 0usize, 0usize);
    for _ in 0..outer {
        for k in 0..last {
            f(o + k, oa + k * la, ob + k * lb);
        }
        o += last;
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// Per-channel reduction over all positions of each `[H, W, D]` map.
/// Returns the pooled values and, for max mode, the winning flat index per output.
pub(crate) fn pool_spatial<T: Scalar>(
    x: &[T],
    shape: &[usize],
    mode: PoolMode,
) -> (Vec<T>, Vec<usize>) {
    let (n, hw, d) = (shape[0], shape[1] * shape[2], shape[3]);
    let mut out = vec![T::zero(); n * d];
    let mut arg = Vec::new();
    match mode {
        PoolMode::Avg => {
            let scale = T::one() / T::from_usize(hw).unwrap();
            for b in 0..n {
                let acc = &mut out[b * d..(b + 1) * d];
                for p in 0..hw {
                    let px = &x[(b * hw + p) * d..(b * hw + p + 1) * d];
                    for (a, &v) in acc.iter_mut().zip(px) {
                        *a += v;
                    }
                }
                acc.iter_mut().for_each(|a| *a *= scale);
            }
        }
        PoolMode::Max => {
            arg = vec![0; n * d];
            for b in 0..n {
                for k in 0..d {
                    let mut best = b * hw * d + k;
                    for p in 1..hw {
                        let i = (b * hw + p) * d + k;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                    out[b * d + k] = x[best];
                    arg[b * d + k] = best;
                }
            }
        }
    }
    (out, arg)
}

/// Per-position reduction over the channel axis.
pub(crate) fn pool_channel<T: Scalar>(
    x: &[T],
    shape: &[usize],
    mode: PoolMode,
) -> (Vec<T>, Vec<usize>) {
    let d = shape[3];
    let scale = T::one() / T::from_usize(d).unwrap();
    let mut arg = Vec::new();
    let out = match mode {
        PoolMode::Avg => x
            .chunks_exact(d)
            .map(|px| px.iter().copied().sum::<T>() * scale)
            .collect(),
        PoolMode::Max => x
            .chunks_exact(d)
            .enumerate()
            .map(|(p, px)| {
                let mut best = 0;
                for (k, &v) in px.iter().enumerate().skip(1) {
                    if v > px[best] {
                        best = k;
                    }
                }
                arg.push(p * d + best);
                px[best]
            })
            .collect(),
    };
    (out, arg)
}

/// Splits `shape` around `axis` into (outer count, extent along axis, inner block size).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_walk_matches_naive() {
        let out = [2, 3, 4];
        let a = [2, 1, 4];
        let b = [1, 3, 1];
        let mut seen = Vec::new();
        broadcast_walk(&out, &a, &b, |o, ia, ib| seen.push((o, ia, ib)));
        let mut expected = Vec::new();
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    expected.push(((i * 3 + j) * 4 + k, i * 4 + k, j));
                }
            }
        }
        assert_eq!(seen, expected);
    }

    #[test]
    fn broadcast_shape_rules() {
        assert_eq!(broadcast_shape(&[2, 1, 3], &[2, 4, 1]).unwrap(), vec![2, 4, 3]);
        assert!(broadcast_shape(&[2, 3], &[3, 2]).is_err());
        assert!(broadcast_shape(&[2, 3], &[2, 3, 1]).is_err());
    }

    #[test]
    fn conv_geometry() {
        let g = ConvGeom::new(&[1, 7, 5, 2], &[3, 3, 2, 4], &[4], Padding::Same, 2).unwrap();
        assert_eq!(g.out_shape(), [1, 4, 3, 4]);
        let g = ConvGeom::new(&[1, 7, 5, 2], &[3, 3, 2, 4], &[4], Padding::Valid, 1).unwrap();
        assert_eq!(g.out_shape(), [1, 5, 3, 4]);
        assert!(ConvGeom::new(&[1, 7, 5, 2], &[2, 2, 2, 4], &[4], Padding::Same, 1).is_err());
        assert!(ConvGeom::new(&[1, 7, 5, 3], &[3, 3, 2, 4], &[4], Padding::Same, 1).is_err());
    }

    #[test]
    fn max_pool_ties_pick_first() {
        let x = [1.0f32, 5.0, 5.0, 2.0];
        let (v, arg) = pool_spatial(&x, &[1, 2, 2, 1], PoolMode::Max);
        assert_eq!((v[0], arg[0]), (5.0, 1));
        let (v, arg) = pool_channel(&x, &[1, 1, 1, 4], PoolMode::Max);
        assert_eq!((v[0], arg[0]), (5.0, 1));
    }
}
