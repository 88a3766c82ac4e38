//! Same-padded, stride-1 2-D cross-correlation kernels.

use crate::scalar::Scalar;

/// Shape bookkeeping for one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
}

/// Flattened positions processed per accumulator block.
const LANES: usize = 16;

/// Zero-padded copy of one sample. Rows are `width + kw - 1` long and the
/// buffer carries enough trailing slack that every tap of every `LANES`-wide
/// block over the flattened output reads in bounds.
struct Padded<T> {
    data: Vec<T>,
    rows: usize,
    stride: usize,
}

impl<T: Scalar> Padded<T> {
    fn new() -> Self {
        Padded { data: Vec::new(), rows: 0, stride: 0 }
    }

    fn fill(&mut self, src: &[T], channels: usize, g: &ConvGeom) {
        let (h, w) = (g.height, g.width);
        let (ph, pw) = ((g.kh - 1) / 2, (g.kw - 1) / 2);
        self.rows = h + g.kh - 1;
        self.stride = w + g.kw - 1;
        self.data.clear();
        self.data.resize(channels * self.rows * self.stride + g.kw + LANES, T::zero());
        for c in 0..channels {
            for y in 0..h {
                let dst = (c * self.rows + y + ph) * self.stride + pw;
                self.data[dst..dst + w].copy_from_slice(&src[(c * h + y) * w..(c * h + y + 1) * w]);
            }
        }
    }

    /// Offset of every (channel, i, j) tap relative to an output position.
    fn tap_offsets(&self, channels: usize, kh: usize, kw: usize) -> Vec<usize> {
        let mut offs = Vec::with_capacity(channels * kh * kw);
        for c in 0..channels {
            for i in 0..kh {
                for j in 0..kw {
                    offs.push((c * self.rows + i) * self.stride + j);
                }
            }
        }
        offs
    }
}

/// Accumulates `NCO` output channels at once over the flattened padded grid.
/// `wts` is `[taps][NCO]`; `out` receives `[NCO][span]` including junk
/// columns past the image width.
fn correlate_block<T: Scalar, const NCO: usize>(
    xp: &[T],
    offs: &[usize],
    wts: &[T],
    bias: [T; NCO],
    span: usize,
    out: &mut [T],
) {
    for p in (0..span).step_by(LANES) {
        let mut acc = [[T::zero(); LANES]; NCO];
        for (c, a) in acc.iter_mut().enumerate() {
            *a = [bias[c]; LANES];
        }
        for (t, &off) in offs.iter().enumerate() {
            let s: &[T; LANES] = xp[off + p..off + p + LANES].try_into().expect("padded slack");
            let w: &[T; NCO] = wts[t * NCO..(t + 1) * NCO].try_into().expect("weight block");
            for c in 0..NCO {
                for l in 0..LANES {
                    acc[c][l] = w[c].mul_add(s[l], acc[c][l]);
                }
            }
        }
        for (c, a) in acc.iter().enumerate() {
            out[c * span + p..c * span + p + LANES].copy_from_slice(a);
        }
    }
}

/// `dw[c][t] += sum_p dyp[c][p] * xp[offs[t] + p]` for `NCO` output channels.
fn weight_grad_block<T: Scalar, const NCO: usize>(xp: &[T], offs: &[usize], dyp: &[T], span: usize, dw: &mut [T]) {
    let taps = offs.len();
    for (t, &off) in offs.iter().enumerate() {
        let mut acc = [[T::zero(); LANES]; NCO];
        for p in (0..span).step_by(LANES) {
            let s: &[T; LANES] = xp[off + p..off + p + LANES].try_into().expect("padded slack");
            for (c, a) in acc.iter_mut().enumerate() {
                let d: &[T; LANES] = dyp[c * span + p..c * span + p + LANES].try_into().expect("dy block");
                for l in 0..LANES {
                    a[l] = d[l].mul_add(s[l], a[l]);
                }
            }
        }
        for (c, a) in acc.iter().enumerate() {
            dw[c * taps + t] += a.iter().copied().sum::<T>();
        }
    }
}

/// Splits `c_out` into register blocks of 4, 2 and 1 channels.
fn channel_blocks(c_out: usize) -> Vec<(usize, usize)> {
    let mut blocks = Vec::new();
    let mut co = 0;
    while co < c_out {
        let n = match c_out - co {
            r if r >= 4 => 4,
            r if r >= 2 => 2,
            _ => 1,
        };
        blocks.push((co, n));
        co += n;
    }
    blocks
}

/// Reorders `weight[co][t]` for channels `co0..co0+n` into `[t][n]`.
fn gather_weights<T: Scalar>(weight: &[T], taps: usize, co0: usize, n: usize) -> Vec<T> {
    let mut w = vec![T::zero(); taps * n];
    for c in 0..n {
        for t in 0..taps {
            w[t * n + c] = weight[(co0 + c) * taps + t];
        }
    }
    w
}

/// One sample: `out[co] = bias[co] + sum_ci corr(xp[ci], weight[co, ci])`.
#[allow(clippy::too_many_arguments)]
fn correlate<T: Scalar>(
    xp: &Padded<T>,
    c_in: usize,
    c_out: usize,
    g: &ConvGeom,
    blocks: &[(usize, usize, Vec<T>)],
    bias: Option<&[T]>,
    scratch: &mut Vec<T>,
    out: &mut [T],
) {
    let (h, w) = (g.height, g.width);
    let offs = xp.tap_offsets(c_in, g.kh, g.kw);
    let span = (h * xp.stride).next_multiple_of(LANES);
    scratch.resize(4 * span, T::zero());
    let bias_at = |c: usize| bias.map_or(T::zero(), |b| b[c]);
    for (co0, n, wts) in blocks {
        let (co0, n) = (*co0, *n);
        let buf = &mut scratch[..n * span];
        match n {
            4 => correlate_block::<T, 4>(
                &xp.data,
                &offs,
                wts,
                [bias_at(co0), bias_at(co0 + 1), bias_at(co0 + 2), bias_at(co0 + 3)],
                span,
                buf,
            ),
            2 => correlate_block::<T, 2>(&xp.data, &offs, wts, [bias_at(co0), bias_at(co0 + 1)], span, buf),
            _ => correlate_block::<T, 1>(&xp.data, &offs, wts, [bias_at(co0)], span, buf),
        }
        for c in 0..n {
            for y in 0..h {
                let src = &buf[c * span + y * xp.stride..c * span + y * xp.stride + w];
                let o = ((co0 + c) * h + y) * w;
                out[o..o + w].copy_from_slice(src);
            }
        }
    }
    debug_assert!(c_out == blocks.iter().map(|b| b.1).sum::<usize>());
}

fn weight_blocks<T: Scalar>(weight: &[T], taps: usize, c_out: usize) -> Vec<(usize, usize, Vec<T>)> {
    channel_blocks(c_out).into_iter().map(|(co0, n)| (co0, n, gather_weights(weight, taps, co0, n))).collect()
}

pub fn conv2d_forward<T: Scalar>(g: &ConvGeom, x: &[T], weight: &[T], bias: &[T], out: &mut [T]) {
    let plane = g.plane();
    let blocks = weight_blocks(weight, g.patch(), g.c_out);
    let mut xp = Padded::new();
    let mut scratch = Vec::new();
    for n in 0..g.batch {
        xp.fill(&x[n * g.c_in * plane..(n + 1) * g.c_in * plane], g.c_in, g);
        let ys = &mut out[n * g.c_out * plane..(n + 1) * g.c_out * plane];
        correlate(&xp, g.c_in, g.c_out, g, &blocks, Some(bias), &mut scratch, ys);
    }
}

/// Accumulates parameter gradients into `dw`/`db` and, when requested, writes
/// the input gradient into `dx`.
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let plane = g.plane();
    let (h, w, kh, kw) = (g.height, g.width, g.kh, g.kw);
    if let Some(db) = db {
        for n in 0..g.batch {
            let dys = &dy[n * g.c_out * plane..(n + 1) * g.c_out * plane];
            for (co, chunk) in dys.chunks(plane).enumerate() {
                db[co] += chunk.iter().copied().sum::<T>();
            }
        }
    }

    if let Some(dx) = dx {
        // The input gradient is a same-padded correlation of dy with the
        // spatially flipped, channel-transposed kernel.
        let taps = kh * kw;
        let mut flipped = vec![T::zero(); weight.len()];
        for co in 0..g.c_out {
            for ci in 0..g.c_in {
                for t in 0..taps {
                    flipped[(ci * g.c_out + co) * taps + (taps - 1 - t)] = weight[(co * g.c_in + ci) * taps + t];
                }
            }
        }
        let blocks = weight_blocks(&flipped, g.c_out * taps, g.c_in);
        let mut dyp = Padded::new();
        let mut scratch = Vec::new();
        for n in 0..g.batch {
            dyp.fill(&dy[n * g.c_out * plane..(n + 1) * g.c_out * plane], g.c_out, g);
            let dxs = &mut dx[n * g.c_in * plane..(n + 1) * g.c_in * plane];
            correlate(&dyp, g.c_out, g.c_in, g, &blocks, None, &mut scratch, dxs);
        }
    }

    if let Some(dw) = dw {
        let mut xp = Padded::new();
        let taps = g.patch();
        let blocks = channel_blocks(g.c_out);
        let mut dyp: Vec<T> = Vec::new();
        for n in 0..g.batch {
            xp.fill(&x[n * g.c_in * plane..(n + 1) * g.c_in * plane], g.c_in, g);
            let offs = xp.tap_offsets(g.c_in, kh, kw);
            let span = (h * xp.stride).next_multiple_of(LANES);
            // dy on the same flattened grid as the padded input, zero in the
            // junk columns so they contribute nothing.
            dyp.clear();
            dyp.resize(g.c_out * span, T::zero());
            let dys = &dy[n * g.c_out * plane..(n + 1) * g.c_out * plane];
            for co in 0..g.c_out {
                for y in 0..h {
                    let d = co * span + y * xp.stride;
                    dyp[d..d + w].copy_from_slice(&dys[(co * h + y) * w..(co * h + y + 1) * w]);
                }
            }
            for &(co0, nb) in &blocks {
                let d = &dyp[co0 * span..(co0 + nb) * span];
                let out = &mut dw[co0 * taps..(co0 + nb) * taps];
                match nb {
                    4 => weight_grad_block::<T, 4>(&xp.data, &offs, d, span, out),
                    2 => weight_grad_block::<T, 2>(&xp.data, &offs, d, span, out),
                    _ => weight_grad_block::<T, 1>(&xp.data, &offs, d, span, out),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop correlation used as the reference.
    fn naive<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
        let (h, wd) = (g.height as isize, g.width as isize);
        let (ph, pw) = (((g.kh - 1) / 2) as isize, ((g.kw - 1) / 2) as isize);
        let mut out = vec![T::zero(); g.batch * g.c_out * g.plane()];
        for n in 0..g.batch {
            for co in 0..g.c_out {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut acc = b[co];
                        for ci in 0..g.c_in {
                            for i in 0..g.kh as isize {
                                for j in 0..g.kw as isize {
                                    let (sy, sx) = (y + i - ph, xx + j - pw);
                                    if sy < 0 || sy >= h || sx < 0 || sx >= wd {
                                        continue;
                                    }
                                    let xi = ((n * g.c_in + ci) as isize * h + sy) * wd + sx;
                                    let wi = ((co * g.c_in + ci) * g.kh + i as usize) * g.kw + j as usize;
                                    acc += x[xi as usize] * w[wi];
                                }
                            }
                        }
                        out[(((n * g.c_out + co) as isize * h + y) * wd + xx) as usize] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_for_assorted_kernels() {
        let mut seed = 1u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        };
        for &(kh, kw, cin, cout, h, w) in
            &[(3, 3, 2, 2, 5, 4), (1, 9, 2, 3, 4, 11), (9, 1, 3, 2, 10, 3), (1, 1, 4, 2, 3, 3), (5, 5, 1, 1, 2, 2)]
        {
            let g = ConvGeom { batch: 2, c_in: cin, c_out: cout, height: h, width: w, kh, kw };
            let x: Vec<f64> = (0..2 * cin * h * w).map(|_| next()).collect();
            let wt: Vec<f64> = (0..cout * cin * kh * kw).map(|_| next()).collect();
            let b: Vec<f64> = (0..cout).map(|_| next()).collect();
            let mut out = vec![0.0; 2 * cout * h * w];
            conv2d_forward(&g, &x, &wt, &b, &mut out);
            let reference = naive(&g, &x, &wt, &b);
            for (a, r) in out.iter().zip(&reference) {
                assert!((a - r).abs() < 1e-12, "{kh}x{kw}: {a} vs {r}");
            }
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), r> is linear in x and w; its gradients follow from the
        // naive forward by probing unit vectors.
        let g = ConvGeom { batch: 2, c_in: 3, c_out: 2, height: 5, width: 19, kh: 3, kw: 5 };
        let x: Vec<f64> = (0..g.batch * g.c_in * g.plane()).map(|i| (i as f64 * 0.37).sin()).collect();
        let wt: Vec<f64> = (0..g.c_out * g.patch()).map(|i| (i as f64 * 0.71).cos()).collect();
        let r: Vec<f64> = (0..g.batch * g.c_out * g.plane()).map(|i| (i as f64 * 0.13).sin()).collect();
        let zero_b = vec![0.0; g.c_out];
        let inner = |x: &[f64], w: &[f64]| -> f64 { naive(&g, x, w, &zero_b).iter().zip(&r).map(|(a, b)| a * b).sum() };

        let mut dx = vec![0.0; x.len()];
        let mut dw = vec![0.0; wt.len()];
        let mut db = vec![0.0; g.c_out];
        conv2d_backward(&g, &x, &wt, &r, Some(&mut dx), Some(&mut dw), Some(&mut db));

        for k in 0..x.len() {
            let mut e = vec![0.0; x.len()];
            e[k] = 1.0;
            assert!((inner(&e, &wt) - dx[k]).abs() < 1e-10, "dx[{k}]");
        }
        for k in 0..wt.len() {
            let mut e = vec![0.0; wt.len()];
            e[k] = 1.0;
            assert!((inner(&x, &e) - dw[k]).abs() < 1e-10, "dw[{k}]");
        }
        for co in 0..g.c_out {
            let expect: f64 = (0..g.batch)
                .flat_map(|n| r[(n * g.c_out + co) * g.plane()..(n * g.c_out + co + 1) * g.plane()].iter())
                .sum();
            assert!((expect - db[co]).abs() < 1e-10);
        }
    }
}
