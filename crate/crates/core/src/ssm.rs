//! Selective state-space (S6) scan and the multi-direction STCS mixer.
//!
//! For one direction with input `x: [C, L]` the step size, input and output
//! projections are computed per position from `x` itself:
//!
//! ```text
//! delta_k = softplus(W_up W_down x_k + delta_bias)      [C]
//! B_k     = W_B x_k,  C_k = W_C x_k                      [N]
//! h_k     = exp(delta_k * A) h_{k-1} + delta_k B_k x_k   [C, N], h_0 = 0
//! y_k     = C_k . h_k + D * x_k
//! ```
//!
//! with `A = -exp(A_log)` strictly negative so every decay factor lies in
//! (0, 1). The recurrence is evaluated chunk-wise: each chunk is scanned
//! from a zero state while tracking its cumulative decay, then chunk carries
//! are propagated in a second pass.

use rand::Rng;

use crate::nn::{const_param, join, normal_param, Linear, Module};
use crate::scan::{make_order, ModeSet, PatchGrid, ScanDirection, ScanMode};
use crate::tensor::{invalid, shape_err, BackwardCtx, Result, Tensor, TensorError};

pub const DEFAULT_D_STATE: usize = 8;
const CHUNK: usize = 64;

/// Parameters of one selective scan direction.
#[derive(Debug, Clone)]
pub struct SsmParams {
    pub d_model: usize,
    pub d_state: usize,
    pub dt_rank: usize,
    /// `[C, N]`; the state matrix is `-exp(a_log)`.
    pub a_log: Tensor,
    /// `[C]` skip weights.
    pub d_skip: Tensor,
    /// `[rank, C]` then `[C, rank]`: low-rank step-size projection.
    pub w_dt_down: Tensor,
    pub w_dt_up: Tensor,
    pub dt_bias: Tensor,
    /// `[N, C]`
    pub w_b: Tensor,
    /// `[N, C]`
    pub w_c: Tensor,
}

/// `softplus^{-1}(y) = y + ln(1 - e^{-y})`.
fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl SsmParams {
    /// Initialization: `A_log[c, n] = ln(n + 1)`, `D = 1`, step sizes drawn
    /// log-uniformly from `[1e-3, 1e-1]` through the bias.
    pub fn new(rng: &mut impl Rng, d_model: usize, d_state: usize) -> Self {
        let dt_rank = (d_model / 16).max(1);
        let a_log: Vec<f64> =
            (0..d_model).flat_map(|_| (1..=d_state).map(|n| (n as f64).ln())).collect();
        let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
        let dt_bias: Vec<f64> =
            (0..d_model).map(|_| inverse_softplus(rng.random_range(lo..hi).exp())).collect();
        let down = Linear::new(rng, d_model, dt_rank, false).weight;
        let up = normal_param(rng, &[d_model, dt_rank], (1.0 / dt_rank as f64).sqrt() * 0.1);
        Self {
            d_model,
            d_state,
            dt_rank,
            a_log: Tensor::param(&[d_model, d_state], a_log).expect("a_log shape"),
            d_skip: const_param(&[d_model], 1.0),
            w_dt_down: down,
            w_dt_up: up,
            dt_bias: Tensor::param(&[d_model], dt_bias).expect("dt_bias shape"),
            w_b: Linear::new(rng, d_model, d_state, false).weight,
            w_c: Linear::new(rng, d_model, d_state, false).weight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, n, r) = (self.d_model, self.d_state, self.dt_rank);
        let checks: [(&str, &Tensor, Vec<usize>); 7] = [
            ("a_log", &self.a_log, vec![c, n]),
            ("d_skip", &self.d_skip, vec![c]),
            ("w_dt_down", &self.w_dt_down, vec![r, c]),
            ("w_dt_up", &self.w_dt_up, vec![c, r]),
            ("dt_bias", &self.dt_bias, vec![c]),
            ("w_b", &self.w_b, vec![n, c]),
            ("w_c", &self.w_c, vec![n, c]),
        ];
        for (name, t, want) in checks {
            if t.shape() != want.as_slice() {
                return Err(shape_err("SsmParams", format!("{name} is {:?}, expected {want:?}", t.shape())));
            }
        }
        Ok(())
    }

    /// `A = -exp(A_log)`.
    pub fn state_matrix(&self) -> Result<Tensor> {
        self.a_log.exp()?.neg()
    }
}

impl Module for SsmParams {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "a_log"), &mut self.a_log);
        f(&join(prefix, "d_skip"), &mut self.d_skip);
        f(&join(prefix, "w_dt_down"), &mut self.w_dt_down);
        f(&join(prefix, "w_dt_up"), &mut self.w_dt_up);
        f(&join(prefix, "dt_bias"), &mut self.dt_bias);
        f(&join(prefix, "w_b"), &mut self.w_b);
        f(&join(prefix, "w_c"), &mut self.w_c);
    }
}

/// Selective scan of a `[C, L]` sequence.
pub fn selective_scan(params: &SsmParams, x: &Tensor) -> Result<Tensor> {
    params.validate()?;
    if x.rank() != 2 || x.shape()[0] != params.d_model {
        return Err(shape_err(
            "selective_scan",
            format!("input {:?} must be [{}, L]", x.shape(), params.d_model),
        ));
    }
    let xt = x.transpose()?;
    let delta = xt
        .linear(&params.w_dt_down, None)?
        .linear(&params.w_dt_up, Some(&params.dt_bias))?
        .softplus()?;
    let b = xt.linear(&params.w_b, None)?;
    let c = xt.linear(&params.w_c, None)?;
    let a = params.state_matrix()?;
    selective_recurrence(&xt, &delta, &a, &b, &c, &params.d_skip)?.transpose()
}

/// The discretized recurrence as a single tape operation.
///
/// Shapes: `x, delta: [L, C]`, `a: [C, N]`, `b, c: [L, N]`, `d: [C]`;
/// returns `y: [L, C]`.
pub fn selective_recurrence(
    x: &Tensor,
    delta: &Tensor,
    a: &Tensor,
    b: &Tensor,
    c: &Tensor,
    d: &Tensor,
) -> Result<Tensor> {
    let &[len, ch] = x.shape() else {
        return Err(shape_err("selective_recurrence", format!("x must be [L, C], got {:?}", x.shape())));
    };
    let &[ch_a, n] = a.shape() else {
        return Err(shape_err("selective_recurrence", format!("a must be [C, N], got {:?}", a.shape())));
    };
    if delta.shape() != x.shape() || ch_a != ch || b.shape() != [len, n] || c.shape() != [len, n] || d.shape() != [ch]
    {
        return Err(shape_err(
            "selective_recurrence",
            format!(
                "x {:?}, delta {:?}, a {:?}, b {:?}, c {:?}, d {:?}",
                x.shape(),
                delta.shape(),
                a.shape(),
                b.shape(),
                c.shape(),
                d.shape()
            ),
        ));
    }
    if delta.data().iter().any(|&v| v <= 0.0) {
        return Err(invalid("selective_recurrence", "step sizes must be positive"));
    }
    let state = chunked_scan(len, ch, n, x.data(), delta.data(), a.data(), b.data())?;
    let (xd, cd, dd) = (x.data(), c.data(), d.data());
    let mut y = vec![0.0; len * ch];
    for l in 0..len {
        let cl = &cd[l * n..(l + 1) * n];
        for ci in 0..ch {
            let h = &state.h[(l * ch + ci) * n..(l * ch + ci + 1) * n];
            let dot: f64 = h.iter().zip(cl).map(|(h, c)| h * c).sum();
            y[l * ch + ci] = dot + dd[ci] * xd[l * ch + ci];
        }
    }
    Tensor::from_op(
        "selective_recurrence",
        vec![len, ch],
        y,
        vec![x.clone(), delta.clone(), a.clone(), b.clone(), c.clone(), d.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| recurrence_backward(len, ch, n, &state, ctx)),
    )
}

struct ScanState {
    /// Hidden states `[L, C, N]`.
    h: Vec<f64>,
    /// Decay factors `exp(delta * A)`, `[L, C, N]`.
    decay: Vec<f64>,
}

fn chunked_scan(
    len: usize,
    ch: usize,
    n: usize,
    x: &[f64],
    delta: &[f64],
    a: &[f64],
    b: &[f64],
) -> Result<ScanState> {
    let width = ch * n;
    let mut h = vec![0.0; len * width];
    let mut decay = vec![0.0; len * width];
    // cumulative decay since the start of the current chunk
    let mut cum = vec![0.0; len * width];
    for start in (0..len).step_by(CHUNK) {
        let end = (start + CHUNK).min(len);
        for l in start..end {
            let row = l * width;
            for ci in 0..ch {
                let dt = delta[l * ch + ci];
                let u = dt * x[l * ch + ci];
                for j in 0..n {
                    let idx = row + ci * n + j;
                    let da = (dt * a[ci * n + j]).exp();
                    decay[idx] = da;
                    let bu = u * b[l * n + j];
                    if l == start {
                        h[idx] = bu;
                        cum[idx] = da;
                    } else {
                        h[idx] = da * h[idx - width] + bu;
                        cum[idx] = da * cum[idx - width];
                    }
                }
            }
        }
    }
    for start in (CHUNK..len).step_by(CHUNK) {
        let end = (start + CHUNK).min(len);
        let (done, rest) = h.split_at_mut(start * width);
        let carry = &done[(start - 1) * width..];
        for l in start..end {
            let off = (l - start) * width;
            let row = &mut rest[off..off + width];
            let cl = &cum[l * width..(l + 1) * width];
            for ((hv, &cv), &carry_v) in row.iter_mut().zip(cl).zip(carry) {
                *hv += cv * carry_v;
            }
        }
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite { op: "selective_recurrence" });
    }
    Ok(ScanState { h, decay })
}

fn recurrence_backward(
    len: usize,
    ch: usize,
    n: usize,
    state: &ScanState,
    ctx: &BackwardCtx<'_>,
) -> Vec<Option<Vec<f64>>> {
    let [x, delta, a, b, c, d] = ctx.inputs else { unreachable!("six inputs") };
    let (xd, dtd, ad, bd, cd, dd) = (x.data(), delta.data(), a.data(), b.data(), c.data(), d.data());
    let width = ch * n;
    let mut gx = vec![0.0; len * ch];
    let mut gdt = vec![0.0; len * ch];
    let mut ga = vec![0.0; ch * n];
    let mut gb = vec![0.0; len * n];
    let mut gc = vec![0.0; len * n];
    let mut gd = vec![0.0; ch];
    // adjoint of h_l, carried backwards
    let mut gh = vec![0.0; width];
    for l in (0..len).rev() {
        for ci in 0..ch {
            let gy = ctx.grad[l * ch + ci];
            let xv = xd[l * ch + ci];
            let dt = dtd[l * ch + ci];
            gx[l * ch + ci] += dd[ci] * gy;
            gd[ci] += gy * xv;
            let mut gdt_acc = 0.0;
            let mut gx_acc = 0.0;
            for j in 0..n {
                let idx = l * width + ci * n + j;
                gc[l * n + j] += gy * state.h[idx];
                let g = gh[ci * n + j] + cd[l * n + j] * gy;
                let hprev = if l > 0 { state.h[idx - width] } else { 0.0 };
                let da = state.decay[idx];
                let g_decay = g * hprev;
                let bj = bd[l * n + j];
                gdt_acc += g_decay * ad[ci * n + j] * da + g * bj * xv;
                ga[ci * n + j] += g_decay * dt * da;
                gb[l * n + j] += g * dt * xv;
                gx_acc += g * dt * bj;
                gh[ci * n + j] = g * da;
            }
            gdt[l * ch + ci] += gdt_acc;
            gx[l * ch + ci] += gx_acc;
        }
    }
    vec![Some(gx), Some(gdt), Some(ga), Some(gb), Some(gc), Some(gd)]
}

/// Per-direction parameters for the cross-scan mixer: eight independent
/// sets (mode x direction), or a single set shared by all directions.
#[derive(Debug, Clone)]
pub struct StcsParams {
    pub directions: Vec<SsmParams>,
    pub shared: bool,
}

impl StcsParams {
    pub fn new(rng: &mut impl Rng, d_model: usize, d_state: usize, shared: bool) -> Self {
        let count = if shared { 1 } else { 8 };
        Self { directions: (0..count).map(|_| SsmParams::new(rng, d_model, d_state)).collect(), shared }
    }

    pub fn for_direction(&self, mode: ScanMode, dir: ScanDirection) -> &SsmParams {
        if self.shared {
            &self.directions[0]
        } else {
            &self.directions[mode.index() * 2 + dir as usize]
        }
    }

    pub fn for_direction_mut(&mut self, mode: ScanMode, dir: ScanDirection) -> &mut SsmParams {
        if self.shared {
            &mut self.directions[0]
        } else {
            &mut self.directions[mode.index() * 2 + dir as usize]
        }
    }

    pub fn d_model(&self) -> usize {
        self.directions[0].d_model
    }
}

impl Module for StcsParams {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if self.shared {
            self.directions[0].visit(&join(prefix, "shared"), f);
            return;
        }
        for mode in ScanMode::ALL {
            for dir in ScanDirection::BOTH {
                let tag = format!("{}_{}", mode.name(), if dir == ScanDirection::Forward { "fwd" } else { "bwd" });
                self.for_direction_mut(mode, dir).visit(&join(prefix, &tag), f);
            }
        }
    }
}

/// Scans `seq: [C, L]` along every enabled direction and returns each
/// result restored to canonical slot order, in (mode, direction) order.
pub fn stcs_directions(
    params: &StcsParams,
    seq: &Tensor,
    grid: PatchGrid,
    modes: ModeSet,
) -> Result<Vec<Tensor>> {
    if modes.is_empty() {
        return Err(invalid("stcs_mix", "no scan modes enabled"));
    }
    if seq.rank() != 2 || seq.shape()[1] != grid.len() || seq.shape()[0] != params.d_model() {
        return Err(shape_err(
            "stcs_mix",
            format!("sequence {:?} vs grid of {} slots, {} channels", seq.shape(), grid.len(), params.d_model()),
        ));
    }
    let mut outs = Vec::with_capacity(modes.len() * 2);
    for mode in modes.iter() {
        for dir in ScanDirection::BOTH {
            let order = make_order(grid, mode, dir);
            let scanned = selective_scan(params.for_direction(mode, dir), &order.apply(seq)?)?;
            outs.push(order.invert(&scanned)?);
        }
    }
    Ok(outs)
}

/// Mean of all enabled direction outputs.
pub fn stcs_mix(params: &StcsParams, seq: &Tensor, grid: PatchGrid, modes: ModeSet) -> Result<Tensor> {
    let outs = stcs_directions(params, seq, grid, modes)?;
    let count = outs.len() as f64;
    let mut acc = outs[0].clone();
    for o in &outs[1..] {
        acc = acc.add(o)?;
    }
    acc.scale(1.0 / count)
}
