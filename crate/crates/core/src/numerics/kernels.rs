//! Raw forward/backward kernels on flat row-major buffers.
//!
//! Convolutions lower to im2col + GEMM. Every reduction runs in a fixed
//! order so results are bit-reproducible on one platform.

use super::Scalar;
use crate::error::{FdpError, Result};

/// Geometry of a (grouped) 3-D cross-correlation. 2-D convolutions use depth 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub groups: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    pub fn new(
        batch: usize,
        in_channels: usize,
        out_channels: usize,
        groups: usize,
        input: [usize; 3],
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(FdpError::Shape(format!(
                "channels {in_channels}->{out_channels} not divisible into {groups} groups"
            )));
        }
        let mut output = [0; 3];
        for axis in 0..3 {
            if stride[axis] == 0 || kernel[axis] == 0 {
                return Err(FdpError::InvalidArgument("zero stride or kernel extent".into()));
            }
            let padded = input[axis] + 2 * padding[axis];
            if padded < kernel[axis] {
                return Err(FdpError::Shape(format!(
                    "kernel extent {} exceeds padded input {} on axis {axis}",
                    kernel[axis], padded
                )));
            }
            output[axis] = (padded - kernel[axis]) / stride[axis] + 1;
        }
        Ok(ConvGeom {
            batch,
            in_channels,
            out_channels,
            groups,
            input,
            kernel,
            stride,
            padding,
            output,
        })
    }

    pub fn in_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn input_volume(&self) -> usize {
        self.input.iter().product()
    }

    pub fn output_volume(&self) -> usize {
        self.output.iter().product()
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Rows of the im2col matrix for one group.
    pub fn col_rows(&self) -> usize {
        self.in_group() * self.kernel_volume()
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.col_rows()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.padding == [0, 0, 0]
    }
}

/// Unfolds `channels` input planes into a `(channels * kvol) x out_vol` matrix.
fn im2col<T: Scalar>(input: &[T], channels: usize, g: &ConvGeom, col: &mut [T]) {
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    let [od, oh, ow] = g.output;
    let out_vol = od * oh * ow;
    let mut row = 0;
    for c in 0..channels {
        let plane = &input[c * id * ih * iw..(c + 1) * id * ih * iw];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let dst = &mut col[row * out_vol..(row + 1) * out_vol];
                    let mut o = 0;
                    for zd in 0..od {
                        let z = (zd * sd + a) as isize - pd as isize;
                        for yd in 0..oh {
                            let y = (yd * sh + b) as isize - ph as isize;
                            let inside_zy = z >= 0 && (z as usize) < id && y >= 0 && (y as usize) < ih;
                            if !inside_zy {
                                dst[o..o + ow].fill(T::zero());
                                o += ow;
                                continue;
                            }
                            let base = (z as usize * ih + y as usize) * iw;
                            for xd in 0..ow {
                                let x = (xd * sw + e) as isize - pw as isize;
                                dst[o] = if x >= 0 && (x as usize) < iw {
                                    plane[base + x as usize]
                                } else {
                                    T::zero()
                                };
                                o += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds the column matrix back onto input planes.
fn col2im<T: Scalar>(col: &[T], channels: usize, g: &ConvGeom, input: &mut [T]) {
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    let [od, oh, ow] = g.output;
    let out_vol = od * oh * ow;
    let mut row = 0;
    for c in 0..channels {
        let plane = &mut input[c * id * ih * iw..(c + 1) * id * ih * iw];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let src = &col[row * out_vol..(row + 1) * out_vol];
                    let mut o = 0;
                    for zd in 0..od {
                        let z = (zd * sd + a) as isize - pd as isize;
                        for yd in 0..oh {
                            let y = (yd * sh + b) as isize - ph as isize;
                            if !(z >= 0 && (z as usize) < id && y >= 0 && (y as usize) < ih) {
                                o += ow;
                                continue;
                            }
                            let base = (z as usize * ih + y as usize) * iw;
                            for xd in 0..ow {
                                let x = (xd * sw + e) as isize - pw as isize;
                                if x >= 0 && (x as usize) < iw {
                                    plane[base + x as usize] += src[o];
                                }
                                o += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Cross-correlation forward. `weight` is `out x (in/groups) x kd x kh x kw`.
pub fn conv_forward<T: Scalar>(input: &[T], weight: &[T], g: &ConvGeom) -> Vec<T> {
    let in_vol = g.input_volume();
    let out_vol = g.output_volume();
    let (cig, cog, rows) = (g.in_group(), g.out_group(), g.col_rows());
    let mut out = vec![T::zero(); g.batch * g.out_channels * out_vol];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * out_vol]
    };
    for n in 0..g.batch {
        for grp in 0..g.groups {
            let in_off = (n * g.in_channels + grp * cig) * in_vol;
            let src = &input[in_off..in_off + cig * in_vol];
            let col_ref: &[T] = if g.is_pointwise() {
                src
            } else {
                im2col(src, cig, g, &mut col);
                &col
            };
            let w = &weight[grp * cog * rows..(grp + 1) * cog * rows];
            let out_off = (n * g.out_channels + grp * cog) * out_vol;
            let dst = &mut out[out_off..out_off + cog * out_vol];
            T::gemm(
                cog, rows, out_vol, T::one(), w, rows as isize, 1, col_ref, out_vol as isize, 1,
                T::zero(), dst, out_vol as isize, 1,
            );
        }
    }
    out
}

/// Gradient of the convolution input; `dout` has the conv output layout.
pub fn conv_backward_input<T: Scalar>(dout: &[T], weight: &[T], g: &ConvGeom) -> Vec<T> {
    let in_vol = g.input_volume();
    let out_vol = g.output_volume();
    let (cig, cog, rows) = (g.in_group(), g.out_group(), g.col_rows());
    let mut dx = vec![T::zero(); g.batch * g.in_channels * in_vol];
    let mut col = vec![T::zero(); rows * out_vol];
    for n in 0..g.batch {
        for grp in 0..g.groups {
            let w = &weight[grp * cog * rows..(grp + 1) * cog * rows];
            let out_off = (n * g.out_channels + grp * cog) * out_vol;
            let d = &dout[out_off..out_off + cog * out_vol];
            let in_off = (n * g.in_channels + grp * cig) * in_vol;
            if g.is_pointwise() {
                // dx_g += w^T · d directly in place.
                let dst = &mut dx[in_off..in_off + cig * in_vol];
                T::gemm(
                    rows, cog, out_vol, T::one(), w, 1, rows as isize, d, out_vol as isize, 1,
                    T::one(), dst, out_vol as isize, 1,
                );
            } else {
                T::gemm(
                    rows, cog, out_vol, T::one(), w, 1, rows as isize, d, out_vol as isize, 1,
                    T::zero(), &mut col, out_vol as isize, 1,
                );
                col2im(&col, cig, g, &mut dx[in_off..in_off + cig * in_vol]);
            }
        }
    }
    dx
}

/// Gradient of the convolution weight, summed over the batch in index order.
pub fn conv_backward_weight<T: Scalar>(input: &[T], dout: &[T], g: &ConvGeom) -> Vec<T> {
    let in_vol = g.input_volume();
    let out_vol = g.output_volume();
    let (cig, cog, rows) = (g.in_group(), g.out_group(), g.col_rows());
    let mut dw = vec![T::zero(); g.weight_len()];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * out_vol]
    };
    for n in 0..g.batch {
        for grp in 0..g.groups {
            let in_off = (n * g.in_channels + grp * cig) * in_vol;
            let src = &input[in_off..in_off + cig * in_vol];
            let col_ref: &[T] = if g.is_pointwise() {
                src
            } else {
                im2col(src, cig, g, &mut col);
                &col
            };
            let out_off = (n * g.out_channels + grp * cog) * out_vol;
            let d = &dout[out_off..out_off + cog * out_vol];
            let dst = &mut dw[grp * cog * rows..(grp + 1) * cog * rows];
            // dw_g += d · col^T
            T::gemm(
                cog, out_vol, rows, T::one(), d, out_vol as isize, 1, col_ref, 1, out_vol as isize,
                T::one(), dst, rows as isize, 1,
            );
        }
    }
    dw
}

/// Adds `bias[c]` to every element of channel `c` in an `N x C x inner` buffer.
pub fn add_channel_bias<T: Scalar>(data: &mut [T], bias: &[T], inner: usize) {
    let channels = bias.len();
    for (i, chunk) in data.chunks_mut(inner).enumerate() {
        let b = bias[i % channels];
        for v in chunk {
            *v += b;
        }
    }
}

/// Sums an `N x C x inner` buffer down to per-channel totals.
pub fn channel_sums<T: Scalar>(data: &[T], channels: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); channels];
    for (i, chunk) in data.chunks(inner).enumerate() {
        let s: T = chunk.iter().copied().sum();
        out[i % channels] += s;
    }
    out
}

/// Shape of a (possibly batched) matrix product `op(a) · op(b)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatMulGeom {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub trans_a: bool,
    pub trans_b: bool,
    /// `b` is a single matrix shared across the batch.
    pub broadcast_b: bool,
}

impl MatMulGeom {
    pub fn infer(a: &[usize], b: &[usize], trans_a: bool, trans_b: bool) -> Result<Self> {
        let err = || {
            FdpError::Shape(format!(
                "matmul {a:?}{} x {b:?}{}",
                if trans_a { "^T" } else { "" },
                if trans_b { "^T" } else { "" }
            ))
        };
        let (batch, ar, ac) = match *a {
            [r, c] => (1, r, c),
            [bt, r, c] => (bt, r, c),
            _ => return Err(err()),
        };
        let (bbatch, br, bc, broadcast_b) = match *b {
            [r, c] => (batch, r, c, true),
            [bt, r, c] => (bt, r, c, false),
            _ => return Err(err()),
        };
        if bbatch != batch || (a.len() == 2 && b.len() == 3) {
            return Err(err());
        }
        let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(err());
        }
        Ok(MatMulGeom {
            batch,
            m,
            k,
            n,
            trans_a,
            trans_b,
            broadcast_b,
        })
    }

    fn a_strides(&self) -> (isize, isize) {
        if self.trans_a {
            (1, self.m as isize)
        } else {
            (self.k as isize, 1)
        }
    }

    fn b_strides(&self) -> (isize, isize) {
        if self.trans_b {
            (1, self.k as isize)
        } else {
            (self.n as isize, 1)
        }
    }
}

pub fn matmul_forward<T: Scalar>(a: &[T], b: &[T], g: &MatMulGeom) -> Vec<T> {
    let (m, k, n) = (g.m, g.k, g.n);
    let mut out = vec![T::zero(); g.batch * m * n];
    let (rsa, csa) = g.a_strides();
    let (rsb, csb) = g.b_strides();
    for i in 0..g.batch {
        let bb = if g.broadcast_b { 0 } else { i };
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &a[i * m * k..(i + 1) * m * k],
            rsa,
            csa,
            &b[bb * k * n..(bb + 1) * k * n],
            rsb,
            csb,
            T::zero(),
            &mut out[i * m * n..(i + 1) * m * n],
            n as isize,
            1,
        );
    }
    out
}

/// Returns `(da, db)` for `c = op(a) · op(b)` given `dc`.
pub fn matmul_backward<T: Scalar>(
    a: &[T],
    b: &[T],
    dc: &[T],
    g: &MatMulGeom,
    need_a: bool,
    need_b: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (m, k, n) = (g.m, g.k, g.n);
    let (rsa, csa) = g.a_strides();
    let (rsb, csb) = g.b_strides();
    let da = need_a.then(|| {
        let mut da = vec![T::zero(); g.batch * m * k];
        for i in 0..g.batch {
            let bb = if g.broadcast_b { 0 } else { i };
            // d op(a) = dc · op(b)^T, written through op(a)'s strides.
            T::gemm(
                m,
                n,
                k,
                T::one(),
                &dc[i * m * n..(i + 1) * m * n],
                n as isize,
                1,
                &b[bb * k * n..(bb + 1) * k * n],
                csb,
                rsb,
                T::zero(),
                &mut da[i * m * k..(i + 1) * m * k],
                rsa,
                csa,
            );
        }
        da
    });
    let db = need_b.then(|| {
        let b_batches = if g.broadcast_b { 1 } else { g.batch };
        let mut db = vec![T::zero(); b_batches * k * n];
        for i in 0..g.batch {
            let bb = if g.broadcast_b { 0 } else { i };
            // d op(b) = op(a)^T · dc
            T::gemm(
                k,
                m,
                n,
                T::one(),
                &a[i * m * k..(i + 1) * m * k],
                csa,
                rsa,
                &dc[i * m * n..(i + 1) * m * n],
                n as isize,
                1,
                T::one(),
                &mut db[bb * k * n..(bb + 1) * k * n],
                rsb,
                csb,
            );
        }
        db
    });
    (da, db)
}

/// Max-pooling over `N x C x H x W` without padding; returns values and flat argmax indices.
pub fn max_pool2d_forward<T: Scalar>(
    input: &[T],
    planes: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
) -> (Vec<T>, Vec<usize>, usize, usize) {
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + y * stride * w + x * stride;
                for dy in 0..kernel {
                    for dx in 0..kernel {
                        let idx = base + (y * stride + dy) * w + x * stride + dx;
                        if input[idx] > input[best] {
                            best = idx;
                        }
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg, oh, ow)
}

/// Row-wise softmax over the trailing axis of length `width`.
pub fn softmax_rows<T: Scalar>(input: &[T], width: usize) -> Vec<T> {
    let mut out = vec![T::zero(); input.len()];
    for (src, dst) in input.chunks(width).zip(out.chunks_mut(width)) {
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom2d(c: usize, o: usize, h: usize, k: usize, s: usize, p: usize) -> ConvGeom {
        ConvGeom::new(1, c, o, 1, [1, h, h], [1, k, k], [1, s, s], [0, p, p]).unwrap()
    }

    #[test]
    fn all_ones_kernel_sums_window() {
        let g = geom2d(1, 1, 2, 2, 1, 0);
        let out = conv_forward(&[1.0f64; 4], &[1.0; 4], &g);
        assert_eq!(out, vec![4.0]);
    }

    #[test]
    fn output_extent_rounds_down() {
        let g = ConvGeom::new(1, 1, 1, 1, [1, 5, 5], [1, 2, 2], [1, 2, 2], [0, 0, 0]).unwrap();
        assert_eq!(g.output, [1, 2, 2]);
        assert!(ConvGeom::new(1, 1, 1, 1, [1, 1, 1], [1, 2, 2], [1, 1, 1], [0, 0, 0]).is_err());
    }

    #[test]
    fn pointwise_path_matches_general_path() {
        // A 1x1 kernel with padding takes the im2col route; compare the interior.
        let x: Vec<f64> = (0..2 * 9).map(|i| i as f64 * 0.1 - 0.4).collect();
        let w = [0.5, -1.0, 2.0, 0.25];
        let fast = conv_forward(&x, &w, &geom2d(2, 2, 3, 1, 1, 0));
        let slow = conv_forward(&x, &w, &geom2d(2, 2, 3, 1, 1, 1));
        for o in 0..2 {
            for y in 0..3 {
                for xx in 0..3 {
                    let a = fast[o * 9 + y * 3 + xx];
                    let b = slow[o * 25 + (y + 1) * 5 + xx + 1];
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn max_pool_first_index_wins_ties() {
        let (out, arg, oh, ow) = max_pool2d_forward(&[1.0f32, 1.0, 1.0, 1.0], 1, 2, 2, 2, 2);
        assert_eq!((oh, ow), (1, 1));
        assert_eq!(out, vec![1.0]);
        assert_eq!(arg, vec![0]);
    }
}
