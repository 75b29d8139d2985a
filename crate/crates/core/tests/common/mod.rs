//! Reference implementations shared by the integration suites: direct loop
//! nests and brute-force searches with no shortcuts.

#![allow(dead_code)]

use hssnet::mask::BinaryMask;
use hssnet::ssm::SsmParams;
use hssnet::tensor::Tensor;
use rand::Rng;

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Cross-correlation of `[N, C, H, W]` with `[Co, C, kh, kw]`, one output
/// element at a time, taps summed in `(ci, ky, kx)` order, bias last.
pub fn conv_oracle(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    k: &[f64],
    (co, kh, kw): (usize, usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * c + ci) * h + iy as usize) * w + ix as usize];
                                acc += k[((o * c + ci) * kh + ky) * kw + kx] * xv;
                            }
                        }
                    }
                    if let Some(bias) = bias {
                        acc += bias[o];
                    }
                    out[((b * co + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Scan parameters with every group randomized, so no path is trivially zero.
pub fn random_params(rng: &mut impl Rng, d_model: usize, d_state: usize) -> SsmParams {
    let mut p = SsmParams::new(rng, d_model, d_state);
    let r = p.dt_rank;
    p.a_log = random_tensor(rng, &[d_model, d_state], -1.0, 1.5);
    p.d_skip = random_tensor(rng, &[d_model], -1.0, 1.0);
    p.w_dt_down = random_tensor(rng, &[r, d_model], -1.0, 1.0);
    p.w_dt_up = random_tensor(rng, &[d_model, r], -1.0, 1.0);
    p.dt_bias = random_tensor(rng, &[d_model], -2.0, 0.5);
    p.w_b = random_tensor(rng, &[d_state, d_model], -1.0, 1.0);
    p.w_c = random_tensor(rng, &[d_state, d_model], -1.0, 1.0);
    p
}

fn softplus_ref(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

/// The selective recurrence evaluated one position at a time on `[C, L]`.
pub fn naive_scan(p: &SsmParams, x: &Tensor) -> Vec<f64> {
    let (ch, len) = (x.shape()[0], x.shape()[1]);
    let (n, r) = (p.d_state, p.dt_rank);
    let xv = |c: usize, l: usize| x.data()[c * len + l];
    let (down, up, bias) = (p.w_dt_down.data(), p.w_dt_up.data(), p.dt_bias.data());
    let (wb, wc, a_log, d) = (p.w_b.data(), p.w_c.data(), p.a_log.data(), p.d_skip.data());
    let mut h = vec![0.0; ch * n];
    let mut y = vec![0.0; ch * len];
    for l in 0..len {
        let low: Vec<f64> = (0..r).map(|k| (0..ch).map(|j| down[k * ch + j] * xv(j, l)).sum()).collect();
        let b: Vec<f64> = (0..n).map(|s| (0..ch).map(|j| wb[s * ch + j] * xv(j, l)).sum()).collect();
        let cc: Vec<f64> = (0..n).map(|s| (0..ch).map(|j| wc[s * ch + j] * xv(j, l)).sum()).collect();
        for c in 0..ch {
            let delta = softplus_ref((0..r).map(|k| up[c * r + k] * low[k]).sum::<f64>() + bias[c]);
            let mut out = d[c] * xv(c, l);
            for s in 0..n {
                let a = -a_log[c * n + s].exp();
                h[c * n + s] = (delta * a).exp() * h[c * n + s] + delta * b[s] * xv(c, l);
                out += cc[s] * h[c * n + s];
            }
            y[c * len + l] = out;
        }
    }
    y
}

fn boundary_pixels(m: &BinaryMask) -> Vec<(i64, i64)> {
    let (h, w) = m.dims();
    let inside = |r: i64, c: i64| r >= 0 && c >= 0 && r < h as i64 && c < w as i64 && m.get(r as usize, c as usize);
    let mut out = vec![];
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            if inside(r, c) && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dr, dc)| !inside(r + dr, c + dc)) {
                out.push((r, c));
            }
        }
    }
    out
}

/// HD95 from all boundary pixel pairs, pooled over both directions, with
/// the linearly interpolated 95th percentile.
pub fn brute_hd95(p: &BinaryMask, g: &BinaryMask) -> f64 {
    let (bp, bg) = (boundary_pixels(p), boundary_pixels(g));
    let directed = |from: &[(i64, i64)], to: &[(i64, i64)]| -> Vec<f64> {
        from.iter()
            .map(|&(r, c)| {
                to.iter().map(|&(s, d)| (((r - s).pow(2) + (c - d).pow(2)) as f64).sqrt()).fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    let mut all = directed(&bp, &bg);
    all.extend(directed(&bg, &bp));
    all.sort_by(f64::total_cmp);
    let pos = 0.95 * (all.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    all[lo] + (all[hi] - all[lo]) * (pos - lo as f64)
}

pub fn random_mask(rng: &mut impl Rng, h: usize, w: usize) -> BinaryMask {
    let density = rng.random_range(0.05..0.9);
    loop {
        let m = BinaryMask::from_fn(h, w, |_, _| rng.random_bool(density));
        if !m.is_empty() {
            return m;
        }
    }
}

/// Filled ellipse with semi-axes `a` (along the tilted long axis) and `b`.
pub fn ellipse(size: usize, cx: f64, cy: f64, a: f64, b: f64, tilt_deg: f64) -> BinaryMask {
    let (s, c) = tilt_deg.to_radians().sin_cos();
    BinaryMask::from_fn(size, size, |y, x| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let u = dx * s + dy * c;
        let v = dx * c - dy * s;
        (u / a).powi(2) + (v / b).powi(2) <= 1.0
    })
}
