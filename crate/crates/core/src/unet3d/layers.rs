//! Forward and backward kernels for the network's layer types.
//!
//! Convolutions work on a zero-padded copy of the input. For one output
//! z-plane the padded rows form a contiguous span, so each kernel row
//! (three taps along x) becomes a fused multiply-add over that span; the
//! two wrap-around columns per row are computed and discarded.

use super::tensor::{Feat, Real};

pub const IN_EPS: f64 = 1e-5;

fn pad1<T: Real>(x: &Feat<T>) -> (Vec<T>, [usize; 3]) {
    let [d, h, w] = x.dims;
    let pd = [d + 2, h + 2, w + 2];
    let plane = pd[1] * pd[2];
    let vol = pd[0] * plane;
    let mut out = vec![T::ZERO; x.c * vol];
    for c in 0..x.c {
        let src = x.channel(c);
        let dst = &mut out[c * vol..(c + 1) * vol];
        for z in 0..d {
            for y in 0..h {
                let s = (z * h + y) * w;
                let t = (z + 1) * plane + (y + 1) * pd[2] + 1;
                dst[t..t + w].copy_from_slice(&src[s..s + w]);
            }
        }
    }
    (out, pd)
}

#[inline]
fn axpy3<T: Real>(acc: &mut [T], s: &[T], w0: T, w1: T, w2: T) {
    let n = acc.len();
    let (s0, s1, s2) = (&s[..n], &s[1..n + 1], &s[2..n + 2]);
    for (((a, &x0), &x1), &x2) in acc.iter_mut().zip(s0).zip(s1).zip(s2) {
        *a += w0 * x0 + w1 * x1 + w2 * x2;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    const L: usize = 16;
    let b = &b[..a.len()];
    let mut acc = [T::ZERO; L];
    for (x, y) in a.chunks_exact(L).zip(b.chunks_exact(L)) {
        for l in 0..L {
            acc[l] += x[l] * y[l];
        }
    }
    let full = a.len() / L * L;
    let mut r = T::ZERO;
    for v in acc {
        r += v;
    }
    for i in full..a.len() {
        r += a[i] * b[i];
    }
    r
}

#[inline]
fn dot3<T: Real>(g: &[T], s: &[T]) -> [T; 3] {
    [dot(g, s), dot(g, &s[1..]), dot(g, &s[2..])]
}

/// 3×3×3 convolution, stride 1, zero padding 1. `w` is laid out
/// `[cout][cin][kz][ky][kx]`.
pub fn conv3_forward<T: Real>(x: &Feat<T>, w: &[T], b: &[T], cout: usize) -> Feat<T> {
    let cin = x.c;
    debug_assert_eq!(w.len(), cout * cin * 27);
    let [d, h, wd] = x.dims;
    let (padded, pd) = pad1(x);
    let row = pd[2];
    let plane = pd[1] * row;
    let vol = pd[0] * plane;
    let span = (h - 1) * row + wd;
    let mut acc = vec![T::ZERO; span];
    let mut out = Feat::zeros(cout, x.dims);
    let n = x.voxels();
    for z in 0..d {
        for co in 0..cout {
            acc.iter_mut().for_each(|a| *a = b[co]);
            for ci in 0..cin {
                let src = &padded[ci * vol..(ci + 1) * vol];
                let wk = &w[(co * cin + ci) * 27..(co * cin + ci + 1) * 27];
                for kz in 0..3 {
                    for ky in 0..3 {
                        let base = (z + kz) * plane + ky * row;
                        let t = kz * 9 + ky * 3;
                        axpy3(&mut acc, &src[base..base + span + 2], wk[t], wk[t + 1], wk[t + 2]);
                    }
                }
            }
            let dst = &mut out.data[co * n..(co + 1) * n];
            for y in 0..h {
                let o = (z * h + y) * wd;
                dst[o..o + wd].copy_from_slice(&acc[y * row..y * row + wd]);
            }
        }
    }
    out
}

/// Gradients of [`conv3_forward`]. Accumulates into `gw`/`gb` and returns
/// the input gradient when `need_input` is set.
pub fn conv3_backward<T: Real>(
    x: &Feat<T>,
    w: &[T],
    gout: &Feat<T>,
    gw: &mut [T],
    gb: &mut [T],
    need_input: bool,
) -> Option<Feat<T>> {
    let cin = x.c;
    let cout = gout.c;
    let [d, h, wd] = x.dims;
    let (padded, pd) = pad1(x);
    let row = pd[2];
    let plane = pd[1] * row;
    let vol = pd[0] * plane;
    let span = (h - 1) * row + wd;
    let n = x.voxels();
    let mut g = vec![T::ZERO; span];
    for co in 0..cout {
        let go = gout.channel(co);
        let mut sum = T::ZERO;
        for &v in go {
            sum += v;
        }
        gb[co] += sum;
    }
    for z in 0..d {
        for co in 0..cout {
            let go = &gout.data[co * n..(co + 1) * n];
            g.iter_mut().for_each(|v| *v = T::ZERO);
            for y in 0..h {
                let o = (z * h + y) * wd;
                g[y * row..y * row + wd].copy_from_slice(&go[o..o + wd]);
            }
            for ci in 0..cin {
                let src = &padded[ci * vol..(ci + 1) * vol];
                let gk = &mut gw[(co * cin + ci) * 27..(co * cin + ci + 1) * 27];
                for kz in 0..3 {
                    for ky in 0..3 {
                        let base = (z + kz) * plane + ky * row;
                        let r = dot3(&g, &src[base..base + span + 2]);
                        let t = kz * 9 + ky * 3;
                        gk[t] += r[0];
                        gk[t + 1] += r[1];
                        gk[t + 2] += r[2];
                    }
                }
            }
        }
    }
    drop(padded);
    need_input.then(|| {
        // correlation of the output gradient with the flipped, transposed kernel
        let mut wt = vec![T::ZERO; w.len()];
        for co in 0..cout {
            for ci in 0..cin {
                for t in 0..27 {
                    wt[(ci * cout + co) * 27 + (26 - t)] = w[(co * cin + ci) * 27 + t];
                }
            }
        }
        conv3_forward(gout, &wt, &vec![T::ZERO; cin], cin)
    })
}

/// Cached statistics of an instance normalization + ReLU.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<f64>,
}

/// Per-channel instance normalization with affine parameters followed by
/// ReLU, in place. Returns the cache when `keep` is set.
pub fn instance_norm_relu<T: Real>(x: &mut Feat<T>, gamma: &[T], beta: &[T], keep: bool) -> Option<NormCache<T>> {
    let n = x.voxels();
    let mut xhat = if keep { Vec::with_capacity(x.data.len()) } else { Vec::new() };
    let mut inv_stds = Vec::with_capacity(x.c);
    for c in 0..x.c {
        let ch = x.channel_mut(c);
        let mean = ch.iter().map(|v| v.to_f64()).sum::<f64>() / n as f64;
        let var = ch.iter().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>() / n as f64;
        let inv_std = 1.0 / (var + IN_EPS).sqrt();
        inv_stds.push(inv_std);
        let (m, s) = (T::from_f64(mean), T::from_f64(inv_std));
        let (g, b) = (gamma[c], beta[c]);
        for v in ch.iter_mut() {
            let xh = (*v - m) * s;
            if keep {
                xhat.push(xh);
            }
            let y = g * xh + b;
            *v = if y > T::ZERO { y } else { T::ZERO };
        }
    }
    keep.then_some(NormCache { xhat, inv_std: inv_stds })
}

/// Backward of [`instance_norm_relu`] given its output `y` (for the ReLU
/// mask). Overwrites `g` with the gradient w.r.t. the normalization input.
pub fn instance_norm_relu_backward<T: Real>(
    y: &Feat<T>,
    cache: &NormCache<T>,
    gamma: &[T],
    g: &mut Feat<T>,
    ggamma: &mut [T],
    gbeta: &mut [T],
) {
    let n = y.voxels();
    for c in 0..y.c {
        let yc = &y.data[c * n..(c + 1) * n];
        let xh = &cache.xhat[c * n..(c + 1) * n];
        let gc = &mut g.data[c * n..(c + 1) * n];
        let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
        for i in 0..n {
            if yc[i] <= T::ZERO {
                gc[i] = T::ZERO;
            }
            sum_g += gc[i].to_f64();
            sum_gx += (gc[i] * xh[i]).to_f64();
        }
        gbeta[c] += T::from_f64(sum_g);
        ggamma[c] += T::from_f64(sum_gx);
        let gm = gamma[c].to_f64();
        let k = gm * cache.inv_std[c] / n as f64;
        let a = T::from_f64(k * n as f64);
        let b = T::from_f64(k * sum_g);
        let cx = T::from_f64(k * sum_gx);
        for i in 0..n {
            gc[i] = a * gc[i] - b - xh[i] * cx;
        }
    }
}

/// 2×2×2 max pooling, stride 2. Also returns the argmax corner per output.
pub fn maxpool2<T: Real>(x: &Feat<T>) -> (Feat<T>, Vec<u8>) {
    let [d, h, w] = x.dims;
    let od = [d / 2, h / 2, w / 2];
    let mut out = Feat::zeros(x.c, od);
    let mut arg = vec![0u8; out.data.len()];
    let on = od.iter().product::<usize>();
    for c in 0..x.c {
        let src = x.channel(c);
        for z in 0..od[0] {
            for y in 0..od[1] {
                for xo in 0..od[2] {
                    let mut best = T::ZERO;
                    let mut bi = 0u8;
                    for k in 0..8u8 {
                        let (a, b, e) = ((k >> 2) as usize, ((k >> 1) & 1) as usize, (k & 1) as usize);
                        let v = src[((2 * z + a) * h + 2 * y + b) * w + 2 * xo + e];
                        if k == 0 || v > best {
                            best = v;
                            bi = k;
                        }
                    }
                    let o = c * on + (z * od[1] + y) * od[2] + xo;
                    out.data[o] = best;
                    arg[o] = bi;
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward<T: Real>(in_dims: [usize; 3], arg: &[u8], gout: &Feat<T>) -> Feat<T> {
    let [_, h, w] = in_dims;
    let od = gout.dims;
    let on = gout.voxels();
    let mut gin = Feat::zeros(gout.c, in_dims);
    let n = gin.voxels();
    for c in 0..gout.c {
        for z in 0..od[0] {
            for y in 0..od[1] {
                for xo in 0..od[2] {
                    let o = c * on + (z * od[1] + y) * od[2] + xo;
                    let k = arg[o];
                    let (a, b, e) = ((k >> 2) as usize, ((k >> 1) & 1) as usize, (k & 1) as usize);
                    gin.data[c * n + ((2 * z + a) * h + 2 * y + b) * w + 2 * xo + e] += gout.data[o];
                }
            }
        }
    }
    gin
}

/// Transposed convolution, kernel 2 stride 2. `w` is laid out
/// `[cin][cout][kz][ky][kx]`.
pub fn tconv2_forward<T: Real>(x: &Feat<T>, w: &[T], b: &[T], cout: usize) -> Feat<T> {
    let cin = x.c;
    let [d, h, wd] = x.dims;
    let od = [2 * d, 2 * h, 2 * wd];
    let mut out = Feat::zeros(cout, od);
    let on = out.voxels();
    for co in 0..cout {
        let dst = &mut out.data[co * on..(co + 1) * on];
        dst.iter_mut().for_each(|v| *v = b[co]);
        for ci in 0..cin {
            let src = x.channel(ci);
            let wk = &w[(ci * cout + co) * 8..(ci * cout + co + 1) * 8];
            for z in 0..d {
                for y in 0..h {
                    let s = &src[(z * h + y) * wd..(z * h + y + 1) * wd];
                    for a in 0..2 {
                        for bb in 0..2 {
                            let (w0, w1) = (wk[a * 4 + bb * 2], wk[a * 4 + bb * 2 + 1]);
                            let o = ((2 * z + a) * od[1] + 2 * y + bb) * od[2];
                            let orow = &mut dst[o..o + 2 * wd];
                            for (pair, &v) in orow.chunks_exact_mut(2).zip(s) {
                                pair[0] += w0 * v;
                                pair[1] += w1 * v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn tconv2_backward<T: Real>(x: &Feat<T>, w: &[T], gout: &Feat<T>, gw: &mut [T], gb: &mut [T]) -> Feat<T> {
    let cin = x.c;
    let cout = gout.c;
    let [d, h, wd] = x.dims;
    let od = gout.dims;
    let on = gout.voxels();
    let mut gin = Feat::zeros(cin, x.dims);
    for co in 0..cout {
        let mut s = T::ZERO;
        for &v in gout.channel(co) {
            s += v;
        }
        gb[co] += s;
    }
    for ci in 0..cin {
        let src = x.channel(ci);
        let n = x.voxels();
        for co in 0..cout {
            let go = &gout.data[co * on..(co + 1) * on];
            let wk = &w[(ci * cout + co) * 8..(ci * cout + co + 1) * 8];
            let mut gk = [0.0f64; 8];
            for z in 0..d {
                for y in 0..h {
                    let si = (z * h + y) * wd;
                    for a in 0..2 {
                        for bb in 0..2 {
                            let (w0, w1) = (wk[a * 4 + bb * 2], wk[a * 4 + bb * 2 + 1]);
                            let o = ((2 * z + a) * od[1] + 2 * y + bb) * od[2];
                            let grow = &go[o..o + 2 * wd];
                            let gi = &mut gin.data[ci * n + si..ci * n + si + wd];
                            let (mut s0, mut s1) = (T::ZERO, T::ZERO);
                            for ((pair, &v), g) in grow.chunks_exact(2).zip(&src[si..si + wd]).zip(gi.iter_mut()) {
                                *g += w0 * pair[0] + w1 * pair[1];
                                s0 += v * pair[0];
                                s1 += v * pair[1];
                            }
                            gk[a * 4 + bb * 2] += s0.to_f64();
                            gk[a * 4 + bb * 2 + 1] += s1.to_f64();
                        }
                    }
                }
            }
            for (t, v) in gk.iter().enumerate() {
                gw[(ci * cout + co) * 8 + t] += T::from_f64(*v);
            }
        }
    }
    gin
}

/// 1×1×1 convolution, `w` laid out `[cout][cin]`.
pub fn conv1_forward<T: Real>(x: &Feat<T>, w: &[T], b: &[T], cout: usize) -> Feat<T> {
    let cin = x.c;
    let mut out = Feat::zeros(cout, x.dims);
    let n = x.voxels();
    for co in 0..cout {
        let dst = &mut out.data[co * n..(co + 1) * n];
        dst.iter_mut().for_each(|v| *v = b[co]);
        for ci in 0..cin {
            let wv = w[co * cin + ci];
            for (o, &v) in dst.iter_mut().zip(x.channel(ci)) {
                *o += wv * v;
            }
        }
    }
    out
}

pub fn conv1_backward<T: Real>(x: &Feat<T>, w: &[T], gout: &Feat<T>, gw: &mut [T], gb: &mut [T]) -> Feat<T> {
    let cin = x.c;
    let cout = gout.c;
    let mut gin = Feat::zeros(cin, x.dims);
    let n = x.voxels();
    for co in 0..cout {
        let go = gout.channel(co);
        gb[co] += go.iter().fold(T::ZERO, |a, &v| a + v);
        for ci in 0..cin {
            let xi = x.channel(ci);
            let mut s = T::ZERO;
            for (&g, &v) in go.iter().zip(xi) {
                s += g * v;
            }
            gw[co * cin + ci] += s;
            let wv = w[co * cin + ci];
            for (gi, &g) in gin.data[ci * n..(ci + 1) * n].iter_mut().zip(go) {
                *gi += wv * g;
            }
        }
    }
    gin
}

/// Channel softmax per voxel.
pub fn softmax<T: Real>(scores: &Feat<T>) -> Feat<T> {
    let n = scores.voxels();
    let c = scores.c;
    let mut out = Feat::zeros(c, scores.dims);
    for v in 0..n {
        let mut m = scores.data[v];
        for k in 1..c {
            let s = scores.data[k * n + v];
            if s > m {
                m = s;
            }
        }
        let mut sum = T::ZERO;
        for k in 0..c {
            let e = (scores.data[k * n + v] - m).exp();
            out.data[k * n + v] = e;
            sum += e;
        }
        for k in 0..c {
            out.data[k * n + v] = out.data[k * n + v] / sum;
        }
    }
    out
}

/// Concatenates along channels, `a` first.
pub fn concat<T: Real>(a: &Feat<T>, b: &Feat<T>) -> Feat<T> {
    assert_eq!(a.dims, b.dims);
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Feat { c: a.c + b.c, dims: a.dims, data }
}

pub fn split_channels<T: Real>(g: Feat<T>, first: usize) -> (Feat<T>, Feat<T>) {
    let n = g.voxels();
    let mut data = g.data;
    let tail = data.split_off(first * n);
    (Feat { c: first, dims: g.dims, data }, Feat { c: g.c - first, dims: g.dims, data: tail })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feat(c: usize, dims: [usize; 3], seed: u64) -> Feat<f64> {
        let mut s = seed;
        let mut f = Feat::zeros(c, dims);
        for v in &mut f.data {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5;
        }
        f
    }

    /// Direct definition of the padded 3×3×3 convolution.
    fn conv3_naive(x: &Feat<f64>, w: &[f64], b: &[f64], cout: usize) -> Feat<f64> {
        let [d, h, wd] = x.dims;
        let mut out = Feat::zeros(cout, x.dims);
        for co in 0..cout {
            for z in 0..d {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut acc = b[co];
                        for ci in 0..x.c {
                            for t in 0..27 {
                                let (kz, ky, kx) = (t / 9, (t / 3) % 3, t % 3);
                                let (sz, sy, sx) =
                                    (z as i64 + kz as i64 - 1, y as i64 + ky as i64 - 1, xx as i64 + kx as i64 - 1);
                                if sz < 0 || sy < 0 || sx < 0 || sz >= d as i64 || sy >= h as i64 || sx >= wd as i64 {
                                    continue;
                                }
                                acc += w[(co * x.c + ci) * 27 + t]
                                    * x.channel(ci)[((sz as usize) * h + sy as usize) * wd + sx as usize];
                            }
                        }
                        out.data[co * x.voxels() + (z * h + y) * wd + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv3_matches_naive() {
        let x = feat(3, [4, 5, 6], 1);
        let w = feat(1, [2 * 3, 27, 1], 2).data;
        let b = vec![0.1, -0.2];
        let fast = conv3_forward(&x, &w, &b, 2);
        let slow = conv3_naive(&x, &w, &b, 2);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv3_backward_matches_adjoint() {
        // <conv(x), g> = <x, conv^T(g)> and the weight gradient is bilinear
        let x = feat(2, [3, 4, 5], 3);
        let w = feat(1, [3 * 2, 27, 1], 4).data;
        let g = feat(3, [3, 4, 5], 5);
        let y = conv3_forward(&x, &w, &[0.0; 3], 3);
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; 3];
        let gx = conv3_backward(&x, &w, &g, &mut gw, &mut gb, true).unwrap();
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&gx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        let via_w: f64 = w.iter().zip(&gw).map(|(a, b)| a * b).sum();
        assert!((lhs - via_w).abs() < 1e-10);
        assert!((gb[1] - g.channel(1).iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn tconv_backward_matches_adjoint() {
        let x = feat(3, [2, 3, 2], 6);
        let w = feat(1, [3 * 2, 8, 1], 7).data;
        let g = feat(2, [4, 6, 4], 8);
        let y = tconv2_forward(&x, &w, &[0.0; 2], 2);
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; 2];
        let gx = tconv2_backward(&x, &w, &g, &mut gw, &mut gb);
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&gx.data).map(|(a, b)| a * b).sum();
        let via_w: f64 = w.iter().zip(&gw).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        assert!((lhs - via_w).abs() < 1e-10);
    }

    #[test]
    fn maxpool_picks_max_and_routes_gradient() {
        let x = feat(2, [4, 4, 2], 9);
        let (y, arg) = maxpool2(&x);
        assert_eq!(y.dims, [2, 2, 1]);
        let m = (0..2)
            .flat_map(|z| (0..2).flat_map(move |yy| (0..2).map(move |xx| (z, yy, xx))))
            .map(|(z, yy, xx)| x.data[(z * 4 + yy) * 2 + xx])
            .fold(f64::MIN, f64::max);
        assert_eq!(y.data[0], m);
        let g = Feat { c: 2, dims: [2, 2, 1], data: vec![1.0; 8] };
        let gx = maxpool2_backward(x.dims, &arg, &g);
        assert_eq!(gx.data.iter().sum::<f64>(), 8.0);
    }

    #[test]
    fn softmax_sums_to_one() {
        let s = feat(4, [2, 2, 2], 10);
        let p = softmax(&s);
        for v in 0..8 {
            let sum: f64 = (0..4).map(|k| p.data[k * 8 + v]).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
