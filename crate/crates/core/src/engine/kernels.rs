//! Forward and reverse kernels for the layer set, operating on raw tensors.
//!
//! Convolution uses grouped im2col followed by a GEMM. Work is split into
//! fixed-size sample groups and per-group weight gradients are reduced in
//! group order, so results do not depend on how many threads ran the map.

use crate::engine::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par;

/// Geometry of a stride-1 "same" convolution.
#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
}

impl ConvGeom {
    fn new(x: &[usize; 4], w: &[usize; 4]) -> Result<Self> {
        let [_, c_in, h, wd] = *x;
        let [c_out, wc, kh, kw] = *w;
        if wc != c_in {
            return Err(Error::shape(format!(
                "conv2d: input has {c_in} channels, weight expects {wc}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(format!(
                "conv2d: kernel extents must be odd, got {kh}x{kw}"
            )));
        }
        Ok(Self {
            c_in,
            c_out,
            h,
            w: wd,
            kh,
            kw,
        })
    }

    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }
}

/// Samples per im2col group. Fixed so that work partitioning (and therefore
/// floating-point summation order) never depends on the thread count.
const GROUP: usize = 4;

/// Writes the patch matrix of one sample into `cols`, whose rows have length
/// `ld`, starting at column `offset`.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T], ld: usize, offset: usize) {
    let (h, w) = (g.h as isize, g.w as isize);
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    let plane = g.plane();
    for c in 0..g.c_in {
        let src = &x[c * plane..(c + 1) * plane];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * ld + offset..row * ld + offset + plane];
                let dy = ky as isize - ph;
                let dx = kx as isize - pw;
                let x0 = (-dx).clamp(0, w) as usize;
                let x1 = (w - dx).clamp(0, w) as usize;
                for y in 0..g.h {
                    let sy = y as isize + dy;
                    let out = &mut dst[y * g.w..(y + 1) * g.w];
                    if sy < 0 || sy >= h || x0 >= x1 {
                        out.fill(T::zero());
                        continue;
                    }
                    out[..x0].fill(T::zero());
                    out[x1..].fill(T::zero());
                    let s = sy as usize * g.w;
                    let sx0 = (x0 as isize + dx) as usize;
                    out[x0..x1].copy_from_slice(&src[s + sx0..s + sx0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Patch matrix `[C·Kh·Kw, G·H·W]` for a group of consecutive samples.
fn group_cols<T: Scalar>(xg: &[T], g: &ConvGeom, samples: usize) -> Vec<T> {
    let plane = g.plane();
    let ld = samples * plane;
    if g.is_pointwise() && samples == 1 {
        return xg.to_vec();
    }
    let mut cols = vec![T::zero(); g.patch() * ld];
    let in_stride = g.c_in * plane;
    for s in 0..samples {
        let xi = &xg[s * in_stride..(s + 1) * in_stride];
        if g.is_pointwise() {
            for c in 0..g.c_in {
                cols[c * ld + s * plane..c * ld + (s + 1) * plane]
                    .copy_from_slice(&xi[c * plane..(c + 1) * plane]);
            }
        } else {
            im2col(xi, g, &mut cols, ld, s * plane);
        }
    }
    cols
}

fn conv_forward_raw<T: Scalar>(xs: &[T], n: usize, g: &ConvGeom, ws: &[T], bs: Option<&[T]>) -> Vec<T> {
    let plane = g.plane();
    let in_stride = g.c_in * plane;
    let out_stride = g.c_out * plane;
    let k = g.patch();
    let mut out = vec![T::zero(); n * out_stride];
    par::for_each_chunk_mut(&mut out, GROUP * out_stride, |gi, og| {
        let samples = og.len() / out_stride;
        let lo = gi * GROUP;
        let xg = &xs[lo * in_stride..(lo + samples) * in_stride];
        let cols = group_cols(xg, g, samples);
        let ld = samples * plane;
        if samples == 1 {
            if let Some(bs) = bs {
                for (oc, row) in og.chunks_mut(plane).enumerate() {
                    row.fill(bs[oc]);
                }
            }
            T::gemm(g.c_out, k, plane, T::one(), ws, (k as isize, 1), &cols, (ld as isize, 1), T::one(), og, (plane as isize, 1));
            return;
        }
        let mut tmp = vec![T::zero(); g.c_out * ld];
        T::gemm(g.c_out, k, ld, T::one(), ws, (k as isize, 1), &cols, (ld as isize, 1), T::zero(), &mut tmp, (ld as isize, 1));
        for s in 0..samples {
            for oc in 0..g.c_out {
                let dst = &mut og[s * out_stride + oc * plane..s * out_stride + (oc + 1) * plane];
                let src = &tmp[oc * ld + s * plane..oc * ld + (s + 1) * plane];
                match bs {
                    Some(bs) => {
                        let b = bs[oc];
                        for (d, &v) in dst.iter_mut().zip(src) {
                            *d = v + b;
                        }
                    }
                    None => dst.copy_from_slice(src),
                }
            }
        }
    });
    out
}

/// Stride-1 zero-padded "same" convolution. `x`: NCHW, `w`: OIHW, `b`: (O).
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let xd = x.dims4()?;
    let g = ConvGeom::new(&xd, &w.dims4()?)?;
    if b.len() != g.c_out {
        return Err(Error::shape(format!(
            "conv2d: bias has {} entries for {} output channels",
            b.len(),
            g.c_out
        )));
    }
    let out = conv_forward_raw(x.data(), xd[0], &g, w.data(), Some(b.data()));
    Tensor::from_vec(&[xd[0], g.c_out, g.h, g.w], out)
}

pub struct ConvGrads<T: Scalar> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Swaps in/out channels and rotates each kernel by 180°: the input gradient
/// of a "same" convolution is the forward convolution of the output gradient
/// with this kernel.
fn flipped_kernel<T: Scalar>(ws: &[T], g: &ConvGeom) -> Vec<T> {
    let kk = g.kh * g.kw;
    let mut out = vec![T::zero(); ws.len()];
    for o in 0..g.c_out {
        for c in 0..g.c_in {
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let src = ((o * g.c_in + c) * g.kh + ky) * g.kw + kx;
                    let dst = (c * g.c_out + o) * kk + (g.kh - 1 - ky) * g.kw + (g.kw - 1 - kx);
                    out[dst] = ws[src];
                }
            }
        }
    }
    out
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let xd = x.dims4()?;
    let g = ConvGeom::new(&xd, &w.dims4()?)?;
    let n = xd[0];
    if dout.shape() != [n, g.c_out, g.h, g.w] {
        return Err(Error::shape(format!(
            "conv2d backward: gradient {:?} does not match output",
            dout.shape()
        )));
    }
    let plane = g.plane();
    let k = g.patch();
    let in_stride = g.c_in * plane;
    let out_stride = g.c_out * plane;
    let (xs, ds) = (x.data(), dout.data());

    let groups = n.div_ceil(GROUP);
    let partials = par::map_range(groups, |gi| {
        let lo = gi * GROUP;
        let samples = GROUP.min(n - lo);
        let ld = samples * plane;
        let cols = group_cols(&xs[lo * in_stride..(lo + samples) * in_stride], &g, samples);
        // gather dOut into [O, G·H·W]
        let dg = &ds[lo * out_stride..(lo + samples) * out_stride];
        let mut dmat = vec![T::zero(); g.c_out * ld];
        for s in 0..samples {
            for oc in 0..g.c_out {
                dmat[oc * ld + s * plane..oc * ld + (s + 1) * plane]
                    .copy_from_slice(&dg[s * out_stride + oc * plane..s * out_stride + (oc + 1) * plane]);
            }
        }
        let mut dw = vec![T::zero(); g.c_out * k];
        T::gemm(g.c_out, ld, k, T::one(), &dmat, (ld as isize, 1), &cols, (1, ld as isize), T::zero(), &mut dw, (k as isize, 1));
        let db: Vec<T> = dmat
            .chunks(ld)
            .map(|row| row.iter().fold(T::zero(), |a, &v| a + v))
            .collect();
        (dw, db)
    });

    let mut dw = vec![T::zero(); g.c_out * k];
    let mut db = vec![T::zero(); g.c_out];
    for (dwi, dbi) in partials {
        for (a, b) in dw.iter_mut().zip(dwi) {
            *a = *a + b;
        }
        for (a, b) in db.iter_mut().zip(dbi) {
            *a = *a + b;
        }
    }

    let input = if need_input {
        let gt = ConvGeom {
            c_in: g.c_out,
            c_out: g.c_in,
            ..g
        };
        let wf = flipped_kernel(w.data(), &g);
        let dx = conv_forward_raw(ds, n, &gt, &wf, None);
        Some(Tensor::from_vec(x.shape(), dx)?)
    } else {
        None
    };
    Ok(ConvGrads {
        input,
        weight: Tensor::from_vec(w.shape(), dw)?,
        bias: Tensor::from_vec(&[g.c_out], db)?,
    })
}

/// 2x2 stride-2 max pooling. Returns the pooled tensor and, per output
/// element, the flat input index of the first maximum in row-major scan.
pub fn maxpool2x2_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let [n, c, h, w] = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "maxpool2d: spatial dims must be even, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xs = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(out.capacity());
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if xs[idx] > xs[best] {
                        best = idx;
                    }
                }
                out.push(xs[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, oh, ow], out)?, arg))
}

pub fn maxpool2x2_backward<T: Scalar>(input_shape: &[usize], argmax: &[u32], dout: &Tensor<T>) -> Result<Tensor<T>> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(dout.data()) {
        d[idx as usize] = d[idx as usize] + g;
    }
    Ok(dx)
}

pub fn upsample2x_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let xs = x.data();
    let mut out = vec![T::zero(); n * c * oh * ow];
    for plane in 0..n * c {
        let src = &xs[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for y in 0..oh {
            let srow = &src[(y / 2) * w..(y / 2 + 1) * w];
            for (x, v) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                *v = srow[x / 2];
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out)
}

pub fn upsample2x_backward<T: Scalar>(input_shape: &[usize], dout: &Tensor<T>) -> Result<Tensor<T>> {
    let mut dx = Tensor::zeros(input_shape);
    let [_, _, h, w] = dx.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let ds = dout.data();
    for (plane, dst) in dx.data_mut().chunks_mut(h * w).enumerate() {
        let src = &ds[plane * oh * ow..(plane + 1) * oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                let d = &mut dst[(y / 2) * w + x / 2];
                *d = *d + src[y * ow + x];
            }
        }
    }
    Ok(dx)
}

pub fn concat_channels_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [na, ca, ha, wa] = a.dims4()?;
    let [nb, cb, hb, wb] = b.dims4()?;
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(Error::shape(format!(
            "concat_channels: batch/spatial mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (sa, sb) = (ca * ha * wa, cb * hb * wb);
    let mut out = Vec::with_capacity(na * (sa + sb));
    for i in 0..na {
        out.extend_from_slice(&a.data()[i * sa..(i + 1) * sa]);
        out.extend_from_slice(&b.data()[i * sb..(i + 1) * sb]);
    }
    Tensor::from_vec(&[na, ca + cb, ha, wa], out)
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channels<T: Scalar>(d: &Tensor<T>, ca: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = d.dims4()?;
    if ca == 0 || ca >= c {
        return Err(Error::shape(format!("cannot split {c} channels at {ca}")));
    }
    let cb = c - ca;
    let (sa, sb) = (ca * h * w, cb * h * w);
    let mut a = Vec::with_capacity(n * sa);
    let mut b = Vec::with_capacity(n * sb);
    for chunk in d.data().chunks(sa + sb) {
        a.extend_from_slice(&chunk[..sa]);
        b.extend_from_slice(&chunk[sa..]);
    }
    Ok((
        Tensor::from_vec(&[n, ca, h, w], a)?,
        Tensor::from_vec(&[n, cb, h, w], b)?,
    ))
}

/// Dense layer: `x` (N, F), `w` (O, F), `b` (O) → (N, O).
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, f, o) = linear_dims(x, w, b)?;
    let mut out: Vec<T> = (0..n).flat_map(|_| b.data().iter().copied()).collect();
    T::gemm(n, f, o, T::one(), x.data(), (f as isize, 1), w.data(), (1, f as isize), T::one(), &mut out, (o as isize, 1));
    Tensor::from_vec(&[n, o], out)
}

pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, f) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    let mut dx = vec![T::zero(); n * f];
    T::gemm(n, o, f, T::one(), dout.data(), (o as isize, 1), w.data(), (f as isize, 1), T::zero(), &mut dx, (f as isize, 1));
    let mut dw = vec![T::zero(); o * f];
    T::gemm(o, n, f, T::one(), dout.data(), (1, o as isize), x.data(), (f as isize, 1), T::zero(), &mut dw, (f as isize, 1));
    let mut db = vec![T::zero(); o];
    for row in dout.data().chunks(o) {
        for (a, &v) in db.iter_mut().zip(row) {
            *a = *a + v;
        }
    }
    Ok((
        Tensor::from_vec(&[n, f], dx)?,
        Tensor::from_vec(&[o, f], dw)?,
        Tensor::from_vec(&[o], db)?,
    ))
}

fn linear_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match (x.shape(), w.shape()) {
        (&[n, f], &[o, wf]) if wf == f && b.len() == o => Ok((n, f, o)),
        (xs, ws) => Err(Error::shape(format!(
            "linear: input {xs:?}, weight {ws:?}, bias {:?}",
            b.shape()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct six-loop convolution used as the reference oracle.
    fn conv_reference(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let [n, c, h, wd] = x.dims4().unwrap();
        let [o, _, kh, kw] = w.dims4().unwrap();
        let mut out = Tensor::zeros(&[n, o, h, wd]);
        let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
        for ni in 0..n {
            for oc in 0..o {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut acc = b.data()[oc];
                        for ic in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let sy = y as isize + ky as isize - ph;
                                    let sx = xx as isize + kx as isize - pw;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((ni * c + ic) * h + sy as usize) * wd + sx as usize]
                                        * w.data()[((oc * c + ic) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out.data_mut()[((ni * o + oc) * h + y) * wd + xx] = acc;
                    }
                }
            }
        }
        out
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn rand_tensor(shape: &[usize], seed: &mut u64) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| lcg(seed)).collect()).unwrap()
    }

    #[test]
    fn one_by_one_scaling() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0f32]).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = conv2d_forward(&x, &w, &b).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn padded_box_filter_on_2x2() {
        // Every output pixel's 3x3 window covers all four inputs.
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::full(&[1, 1, 3, 3], 1.0f64);
        let b = Tensor::zeros(&[1]);
        let y = conv2d_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[10.0, 10.0, 10.0, 10.0]);
        assert_eq!(y.data(), conv_reference(&x, &w, &b).data());
    }

    #[test]
    fn matches_six_loop_reference() {
        let mut seed = 7u64;
        for &(n, c, o, h, w, k) in &[
            (2, 4, 3, 9, 9, 3),
            (1, 1, 2, 5, 7, 3),
            (2, 3, 5, 6, 4, 1),
            (1, 2, 2, 8, 8, 5),
        ] {
            let x = rand_tensor(&[n, c, h, w], &mut seed);
            let wt = rand_tensor(&[o, c, k, k], &mut seed);
            let b = rand_tensor(&[o], &mut seed);
            let fast = conv2d_forward(&x, &wt, &b).unwrap();
            let slow = conv_reference(&x, &wt, &b);
            for (a, r) in fast.data().iter().zip(slow.data()) {
                assert!((a - r).abs() <= 1e-12 * (1.0 + r.abs()), "{a} vs {r}");
            }
            let xf: Tensor<f32> = x.cast();
            let wf: Tensor<f32> = wt.cast();
            let bf: Tensor<f32> = b.cast();
            let single = conv2d_forward(&xf, &wf, &bf).unwrap();
            for (a, r) in single.data().iter().zip(slow.data()) {
                assert!(((*a as f64) - r).abs() <= 1e-5 * (1.0 + r.abs()));
            }
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        let b = Tensor::<f32>::zeros(&[1]);
        assert!(matches!(conv2d_forward(&x, &w, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn bias_gradient_counts_pixels() {
        let x = Tensor::<f64>::full(&[2, 1, 4, 5], 0.5);
        let w = Tensor::<f64>::full(&[3, 1, 3, 3], 0.1);
        let d = Tensor::<f64>::full(&[2, 3, 4, 5], 1.0);
        let g = conv2d_backward(&x, &w, &d, true).unwrap();
        // N·H·W per output channel for d(sum)/d(bias)
        assert!(g.bias.data().iter().all(|&v| v == 40.0));
    }

    #[test]
    fn maxpool_basic_and_ties() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
        let c = Tensor::<f32>::full(&[1, 1, 4, 4], 7.0);
        let (y, arg) = maxpool2x2_forward(&c).unwrap();
        assert!(y.data().iter().all(|&v| v == 7.0));
        assert_eq!(arg, vec![0, 2, 8, 10]);
        let dx = maxpool2x2_backward(c.shape(), &arg, &Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap();
        assert_eq!(dx.data().iter().filter(|&&v| v == 1.0).count(), 4);
        assert_eq!(dx.data()[0], 1.0);
        assert_eq!(dx.data()[1], 0.0);
    }

    #[test]
    fn maxpool_matches_window_scan() {
        let mut seed = 99u64;
        let x = rand_tensor(&[2, 3, 4, 4], &mut seed);
        let (y, _) = maxpool2x2_forward(&x).unwrap();
        for p in 0..6 {
            for oy in 0..2 {
                for ox in 0..2 {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(x.data()[p * 16 + (2 * oy + dy) * 4 + 2 * ox + dx]);
                        }
                    }
                    assert_eq!(y.data()[p * 4 + oy * 2 + ox], m);
                }
            }
        }
    }

    #[test]
    fn maxpool_rejects_odd() {
        let x = Tensor::<f32>::zeros(&[1, 1, 3, 4]);
        assert!(maxpool2x2_forward(&x).is_err());
    }

    #[test]
    fn upsample_replicates_and_sums() {
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![5.0f32]).unwrap();
        let y = upsample2x_forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[5.0; 4]);
        let x = Tensor::<f32>::zeros(&[1, 3, 4, 5]);
        assert_eq!(upsample2x_forward(&x).unwrap().shape(), &[1, 3, 8, 10]);
        let d = Tensor::<f32>::full(&[1, 3, 8, 10], 1.0);
        let dx = upsample2x_backward(x.shape(), &d).unwrap();
        assert!(dx.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn concat_then_split_recovers_inputs() {
        let mut seed = 3u64;
        let a = rand_tensor(&[2, 2, 4, 4], &mut seed);
        let b = rand_tensor(&[2, 3, 4, 4], &mut seed);
        let c = concat_channels_forward(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 5, 4, 4]);
        let (ra, rb) = split_channels(&c, 2).unwrap();
        assert_eq!(ra, a);
        assert_eq!(rb, b);
        let bad = rand_tensor(&[2, 3, 4, 5], &mut seed);
        assert!(concat_channels_forward(&a, &bad).is_err());
    }
}
