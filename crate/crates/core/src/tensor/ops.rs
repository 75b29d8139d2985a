use super::{invalid, numel_of, shape_err, BackwardCtx, Result, Tensor};

/// Shape of a binary elementwise result. Broadcasting only repeats the
/// smaller operand over leading dimensions: after left-padding with ones,
/// its shape must be `[1, .., 1, suffix]` with `suffix` matching the trailing
/// extents of the other operand.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    let (big, small) = if numel_of(a) >= numel_of(b) { (a, b) } else { (b, a) };
    let mut trimmed = small;
    while trimmed.len() > 1 && trimmed[0] == 1 {
        trimmed = &trimmed[1..];
    }
    let ok = small.len() <= big.len() && trimmed.len() <= big.len() && {
        let suffix = &big[big.len() - trimmed.len()..];
        suffix == trimmed || (trimmed == [1])
    };
    if ok {
        Ok(big.to_vec())
    } else {
        Err(shape_err(op, format!("cannot broadcast {a:?} with {b:?}")))
    }
}

/// `C = op(A) * op(B)` (or `C += ...` when `accumulate`), with `A` m×k and
/// `B` k×n described by row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(m == 0 || k == 0 || (m - 1) * a_strides.0 + (k - 1) * a_strides.1 < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * b_strides.0 + (n - 1) * b_strides.1 < b.len());
    assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn reduce_to(grad: &[f64], n: usize) -> Vec<f64> {
    if grad.len() == n {
        return grad.to_vec();
    }
    let mut out = vec![0.0; n];
    for chunk in grad.chunks_exact(n) {
        out.iter_mut().zip(chunk).for_each(|(o, g)| *o += g);
    }
    out
}

impl Tensor {
    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        // derivative given (input, output)
        df: fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(
            op,
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let x = ctx.inputs[0].data();
                let g = x
                    .iter()
                    .zip(ctx.out)
                    .zip(ctx.grad)
                    .map(|((&x, &y), &g)| g * df(x, y))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    fn binary(
        &self,
        other: &Tensor,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        // partials with respect to (a, b), given (a, b, out)
        da: fn(f64, f64, f64) -> f64,
        db: fn(f64, f64, f64) -> f64,
    ) -> Result<Tensor> {
        let shape = broadcast_shape(op, self.shape(), other.shape())?;
        let n = numel_of(&shape);
        let (na, nb) = (self.numel(), other.numel());
        let (a, b) = (self.data(), other.data());
        let data: Vec<f64> = (0..n).map(|i| f(a[i % na], b[i % nb])).collect();
        Tensor::from_op(
            op,
            shape,
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let a = ctx.inputs[0].data();
                let b = ctx.inputs[1].data();
                let mut ga = vec![0.0; na];
                let mut gb = vec![0.0; nb];
                let want_a = ctx.inputs[0].requires_grad();
                let want_b = ctx.inputs[1].requires_grad();
                for (i, (&g, &y)) in ctx.grad.iter().zip(ctx.out).enumerate() {
                    let (x, z) = (a[i % na], b[i % nb]);
                    if want_a {
                        ga[i % na] += g * da(x, z, y);
                    }
                    if want_b {
                        gb[i % nb] += g * db(x, z, y);
                    }
                }
                vec![want_a.then_some(ga), want_b.then_some(gb)]
            }),
        )
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", |a, b| a + b, |_, _, _| 1.0, |_, _, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", |a, b| a - b, |_, _, _| 1.0, |_, _, _| -1.0)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", |a, b| a * b, |_, b, _| b, |a, _, _| a)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "div", |a, b| a / b, |_, b, _| 1.0 / b, |_, b, y| -y / b)
    }

    pub fn scale(&self, s: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|x| x * s).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| vec![Some(ctx.grad.iter().map(|g| g * s).collect())]),
        )
    }

    pub fn add_scalar(&self, s: f64) -> Result<Tensor> {
        self.unary("add_scalar", |x| x + s, |_, _| 1.0)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Result<Tensor> {
        if self.data().iter().any(|&x| x <= 0.0) {
            return Err(invalid("ln", "non-positive input"));
        }
        self.unary("ln", f64::ln, |x, _| 1.0 / x)
    }

    pub fn square(&self) -> Result<Tensor> {
        self.unary("square", |x| x * x, |x, _| 2.0 * x)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn silu(&self) -> Result<Tensor> {
        self.unary("silu", |x| x * sigmoid(x), |x, _| {
            let s = sigmoid(x);
            s * (1.0 + x * (1.0 - s))
        })
    }

    pub fn softplus(&self) -> Result<Tensor> {
        self.unary("softplus", softplus, |x, _| sigmoid(x))
    }

    /// Clamps into `[lo, hi]`; gradient flows only where the input is inside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        if lo > hi {
            return Err(invalid("clamp", format!("lo {lo} > hi {hi}")));
        }
        let data = self.data().iter().map(|x| x.clamp(lo, hi)).collect();
        let mask: Vec<f64> =
            self.data().iter().map(|&x| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 }).collect();
        Tensor::from_op(
            "clamp",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                vec![Some(ctx.grad.iter().zip(&mask).map(|(g, m)| g * m).collect())]
            }),
        )
    }

    pub fn sum(&self) -> Result<Tensor> {
        let total: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| vec![Some(vec![ctx.grad[0]; n])]),
        )
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            return Err(shape_err(
                "matmul",
                format!("expected rank-2 operands, got {:?} and {:?}", self.shape(), other.shape()),
            ));
        };
        if k != k2 {
            return Err(shape_err("matmul", format!("{:?} x {:?}", self.shape(), other.shape())));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(), (k, 1), other.data(), (n, 1), &mut out, false);
        Tensor::from_op(
            "matmul",
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let (a, b) = (&ctx.inputs[0], &ctx.inputs[1]);
                let ga = a.requires_grad().then(|| {
                    // dA = G Bᵀ
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, ctx.grad, (n, 1), b.data(), (1, n), &mut ga, false);
                    ga
                });
                let gb = b.requires_grad().then(|| {
                    // dB = Aᵀ G
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, a.data(), (1, k), ctx.grad, (n, 1), &mut gb, false);
                    gb
                });
                vec![ga, gb]
            }),
        )
    }

    /// `x Wᵀ + b` over the last axis: `x: [.., in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let &[d_out, d_in] = weight.shape() else {
            return Err(shape_err("linear", format!("weight must be rank 2, got {:?}", weight.shape())));
        };
        if self.shape().last() != Some(&d_in) {
            return Err(shape_err(
                "linear",
                format!("input {:?} does not end in {d_in}", self.shape()),
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [d_out] {
                return Err(shape_err("linear", format!("bias {:?} != [{d_out}]", b.shape())));
            }
        }
        let rows = self.numel() / d_in;
        let mut out = vec![0.0; rows * d_out];
        if let Some(b) = bias {
            for row in out.chunks_exact_mut(d_out) {
                row.copy_from_slice(b.data());
            }
        }
        gemm(rows, d_in, d_out, self.data(), (d_in, 1), weight.data(), (1, d_in), &mut out, bias.is_some());
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = d_out;
        let mut inputs = vec![self.clone(), weight.clone()];
        inputs.extend(bias.cloned());
        Tensor::from_op(
            "linear",
            shape,
            out,
            inputs,
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let (x, w) = (&ctx.inputs[0], &ctx.inputs[1]);
                let g = ctx.grad;
                let gx = x.requires_grad().then(|| {
                    let mut gx = vec![0.0; rows * d_in];
                    gemm(rows, d_out, d_in, g, (d_out, 1), w.data(), (d_in, 1), &mut gx, false);
                    gx
                });
                let gw = w.requires_grad().then(|| {
                    let mut gw = vec![0.0; d_out * d_in];
                    gemm(d_out, rows, d_in, g, (1, d_out), x.data(), (d_in, 1), &mut gw, false);
                    gw
                });
                let mut grads = vec![gx, gw];
                if ctx.inputs.len() == 3 {
                    grads.push(ctx.inputs[2].requires_grad().then(|| reduce_to(g, d_out)));
                }
                grads
            }),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(shape_err("reshape", format!("{:?} -> {shape:?}", self.shape())));
        }
        Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|ctx: &BackwardCtx<'_>| vec![Some(ctx.grad.to_vec())]),
        )
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(invalid("permute", format!("{axes:?} is not a permutation of 0..{rank}")));
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
        let src_index = permuted_source_index(&in_shape, axes);
        let data = src_index.iter().map(|&i| self.data()[i]).collect();
        let n = self.numel();
        Tensor::from_op(
            "permute",
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut g = vec![0.0; n];
                for (o, &i) in src_index.iter().enumerate() {
                    g[i] = ctx.grad[o];
                }
                vec![Some(g)]
            }),
        )
    }

    /// Swaps the two axes of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(shape_err("transpose", format!("rank-2 input required, got {:?}", self.shape())));
        }
        self.permute(&[1, 0])
    }

    /// Picks entries `indices` along axis 0.
    pub fn index_select0(&self, indices: &[usize]) -> Result<Tensor> {
        let d0 = self.shape()[0];
        if indices.is_empty() || indices.iter().any(|&i| i >= d0) {
            return Err(invalid("index_select0", format!("indices {indices:?} out of 0..{d0}")));
        }
        let inner = self.numel() / d0;
        let mut data = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            data.extend_from_slice(&self.data()[i * inner..(i + 1) * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[0] = indices.len();
        let indices = indices.to_vec();
        let n = self.numel();
        Tensor::from_op(
            "index_select0",
            shape,
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut g = vec![0.0; n];
                for (k, &i) in indices.iter().enumerate() {
                    let src = &ctx.grad[k * inner..(k + 1) * inner];
                    g[i * inner..(i + 1) * inner].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                }
                vec![Some(g)]
            }),
        )
    }

    /// Gathers along the last axis: `out[.., k] = x[.., perm[k]]`. `perm`
    /// must be a permutation of the last extent.
    pub fn gather_last(&self, perm: &[usize]) -> Result<Tensor> {
        let len = *self.shape().last().unwrap();
        if perm.len() != len {
            return Err(shape_err("gather_last", format!("perm of {} for last extent {len}", perm.len())));
        }
        let rows = self.numel() / len;
        let mut data = vec![0.0; self.numel()];
        for r in 0..rows {
            let src = &self.data()[r * len..(r + 1) * len];
            let dst = &mut data[r * len..(r + 1) * len];
            for (d, &p) in dst.iter_mut().zip(perm) {
                *d = src[p];
            }
        }
        let perm = perm.to_vec();
        Tensor::from_op(
            "gather_last",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut g = vec![0.0; rows * len];
                for r in 0..rows {
                    let src = &ctx.grad[r * len..(r + 1) * len];
                    let dst = &mut g[r * len..(r + 1) * len];
                    for (k, &p) in perm.iter().enumerate() {
                        dst[p] += src[k];
                    }
                }
                vec![Some(g)]
            }),
        )
    }
}

/// For each output position of a permuted tensor, the flat input index.
fn permuted_source_index(in_shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let rank = in_shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = numel_of(in_shape);
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    let last = rank - 1;
    loop {
        // innermost axis as a tight loop
        let (ext, st) = (out_shape[last], strides[last]);
        for j in 0..ext {
            out.push(offset + j * st);
        }
        let mut ax = last;
        loop {
            if ax == 0 {
                return out;
            }
            ax -= 1;
            idx[ax] += 1;
            offset += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, switching to the identity above 30 where the correction
/// is below f64 resolution.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}
