use super::{invalid, shape_err, BackwardCtx, Result, Tensor};

#[derive(Clone, Copy)]
struct ConvGeom {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    ci_per_group: usize,
    co_per_group: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    /// Output columns `ox` whose input column `ox*stride + kx - pad` is in range.
    fn valid_range(&self, k: usize, out_len: usize, in_len: usize) -> (usize, usize) {
        // smallest o with o*s + k >= pad
        let lo = if k >= self.pad { 0 } else { (self.pad - k).div_ceil(self.stride) };
        // largest o with o*s + k - pad <= in_len - 1
        let hi = if in_len + self.pad > k { (in_len + self.pad - 1 - k) / self.stride + 1 } else { 0 };
        (lo.min(out_len), hi.min(out_len))
    }

    /// Calls `f(co, ci, ky, kx, oy, iy, ox_lo, ox_hi)` for every kernel tap,
    /// with input channels visited in order for a fixed output channel.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize, usize)) {
        for co in 0..self.c_out {
            let g = co / self.co_per_group;
            for cl in 0..self.ci_per_group {
                let ci = g * self.ci_per_group + cl;
                for ky in 0..self.kh {
                    let (oy_lo, oy_hi) = self.valid_range(ky, self.oh, self.h);
                    for kx in 0..self.kw {
                        let (ox_lo, ox_hi) = self.valid_range(kx, self.ow, self.w);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * self.stride + ky - self.pad;
                            f(co, ci, ky, kx, oy, iy, ox_lo, ox_hi);
                        }
                    }
                }
            }
        }
    }
}

impl Tensor {
    /// 2-D cross-correlation over `[N, C, H, W]` with kernel
    /// `[C_out, C / groups, kh, kw]`, zero padding and an optional bias.
    pub fn conv2d(
        &self,
        kernel: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Tensor> {
        let &[n, c_in, h, w] = self.shape() else {
            return Err(shape_err("conv2d", format!("input must be rank 4, got {:?}", self.shape())));
        };
        let &[c_out, ci_per_group, kh, kw] = kernel.shape() else {
            return Err(shape_err("conv2d", format!("kernel must be rank 4, got {:?}", kernel.shape())));
        };
        if stride == 0 {
            return Err(invalid("conv2d", "stride must be positive"));
        }
        if groups == 0 || ci_per_group * groups != c_in || c_out % groups != 0 {
            return Err(shape_err(
                "conv2d",
                format!("kernel {:?} with groups={groups} incompatible with {c_in} input channels", kernel.shape()),
            ));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(shape_err("conv2d", format!("kernel {kh}x{kw} exceeds padded input {h}x{w}+{padding}")));
        }
        if let Some(b) = bias {
            if b.shape() != [c_out] {
                return Err(shape_err("conv2d", format!("bias {:?} != [{c_out}]", b.shape())));
            }
        }
        let geom = ConvGeom {
            n,
            c_in,
            h,
            w,
            c_out,
            ci_per_group,
            co_per_group: c_out / groups,
            kh,
            kw,
            stride,
            pad: padding,
            oh: (h + 2 * padding - kh) / stride + 1,
            ow: (w + 2 * padding - kw) / stride + 1,
        };
        let out = conv_forward(&geom, self.data(), kernel.data(), bias.map(|b| b.data()));
        let mut inputs = vec![self.clone(), kernel.clone()];
        inputs.extend(bias.cloned());
        Tensor::from_op(
            "conv2d",
            vec![n, c_out, geom.oh, geom.ow],
            out,
            inputs,
            Box::new(move |ctx: &BackwardCtx<'_>| conv_backward(&geom, ctx)),
        )
    }

    /// Nearest-neighbour upsampling of `[N, C, H, W]` by an integer factor.
    pub fn upsample_nearest2d(&self, factor: usize) -> Result<Tensor> {
        let &[n, c, h, w] = self.shape() else {
            return Err(shape_err("upsample_nearest2d", format!("rank 4 required, got {:?}", self.shape())));
        };
        if factor == 0 {
            return Err(invalid("upsample_nearest2d", "factor must be positive"));
        }
        let (oh, ow) = (h * factor, w * factor);
        let planes = n * c;
        let mut out = vec![0.0; planes * oh * ow];
        for p in 0..planes {
            let src = &self.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    dst[y * ow + x] = src[(y / factor) * w + x / factor];
                }
            }
        }
        Tensor::from_op(
            "upsample_nearest2d",
            vec![n, c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut g = vec![0.0; planes * h * w];
                for p in 0..planes {
                    let src = &ctx.grad[p * oh * ow..(p + 1) * oh * ow];
                    let dst = &mut g[p * h * w..(p + 1) * h * w];
                    for y in 0..oh {
                        for x in 0..ow {
                            dst[(y / factor) * w + x / factor] += src[y * ow + x];
                        }
                    }
                }
                vec![Some(g)]
            }),
        )
    }

    /// Bilinear upsampling of `[N, C, H, W]` by an integer factor with
    /// half-pixel centres and edge clamping.
    pub fn upsample_bilinear2d(&self, factor: usize) -> Result<Tensor> {
        let &[n, c, h, w] = self.shape() else {
            return Err(shape_err("upsample_bilinear2d", format!("rank 4 required, got {:?}", self.shape())));
        };
        if factor == 0 {
            return Err(invalid("upsample_bilinear2d", "factor must be positive"));
        }
        let (oh, ow) = (h * factor, w * factor);
        let ys = interp_taps(h, factor);
        let xs = interp_taps(w, factor);
        let planes = n * c;
        let mut out = vec![0.0; planes * oh * ow];
        for p in 0..planes {
            let src = &self.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for (y, &(y0, y1, wy)) in ys.iter().enumerate() {
                for (x, &(x0, x1, wx)) in xs.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
                    let bot = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
                    dst[y * ow + x] = top * (1.0 - wy) + bot * wy;
                }
            }
        }
        Tensor::from_op(
            "upsample_bilinear2d",
            vec![n, c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut g = vec![0.0; planes * h * w];
                for p in 0..planes {
                    let src = &ctx.grad[p * oh * ow..(p + 1) * oh * ow];
                    let dst = &mut g[p * h * w..(p + 1) * h * w];
                    for (y, &(y0, y1, wy)) in ys.iter().enumerate() {
                        for (x, &(x0, x1, wx)) in xs.iter().enumerate() {
                            let gv = src[y * ow + x];
                            dst[y0 * w + x0] += gv * (1.0 - wy) * (1.0 - wx);
                            dst[y0 * w + x1] += gv * (1.0 - wy) * wx;
                            dst[y1 * w + x0] += gv * wy * (1.0 - wx);
                            dst[y1 * w + x1] += gv * wy * wx;
                        }
                    }
                }
                vec![Some(g)]
            }),
        )
    }
}

/// For each output coordinate: (lower source index, upper source index,
/// weight of the upper one).
fn interp_taps(len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn conv_forward(g: &ConvGeom, input: &[f64], kernel: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (in_plane, out_plane) = (g.h * g.w, g.oh * g.ow);
    let k_per_co = g.ci_per_group * g.kh * g.kw;
    let mut out = vec![0.0; g.n * g.c_out * out_plane];
    for b in 0..g.n {
        let inp = &input[b * g.c_in * in_plane..(b + 1) * g.c_in * in_plane];
        let o = &mut out[b * g.c_out * out_plane..(b + 1) * g.c_out * out_plane];
        g.for_each_tap(|co, ci, ky, kx, oy, iy, lo, hi| {
            let wv = kernel[co * k_per_co + (ci % g.ci_per_group) * g.kh * g.kw + ky * g.kw + kx];
            let src = &inp[ci * in_plane + iy * g.w..ci * in_plane + (iy + 1) * g.w];
            let dst = &mut o[co * out_plane + oy * g.ow..co * out_plane + (oy + 1) * g.ow];
            if g.stride == 1 {
                let off = kx as isize - g.pad as isize;
                for ox in lo..hi {
                    dst[ox] += wv * src[(ox as isize + off) as usize];
                }
            } else {
                for ox in lo..hi {
                    dst[ox] += wv * src[ox * g.stride + kx - g.pad];
                }
            }
        });
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                o[co * out_plane..(co + 1) * out_plane].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

fn conv_backward(g: &ConvGeom, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
    let (input, kernel) = (&ctx.inputs[0], &ctx.inputs[1]);
    let (in_plane, out_plane) = (g.h * g.w, g.oh * g.ow);
    let k_per_co = g.ci_per_group * g.kh * g.kw;
    let want_x = input.requires_grad();
    let want_k = kernel.requires_grad();
    let mut gx = want_x.then(|| vec![0.0; input.numel()]);
    let mut gk = want_k.then(|| vec![0.0; kernel.numel()]);
    for b in 0..g.n {
        let inp = &input.data()[b * g.c_in * in_plane..(b + 1) * g.c_in * in_plane];
        let go = &ctx.grad[b * g.c_out * out_plane..(b + 1) * g.c_out * out_plane];
        g.for_each_tap(|co, ci, ky, kx, oy, iy, lo, hi| {
            let kidx = co * k_per_co + (ci % g.ci_per_group) * g.kh * g.kw + ky * g.kw + kx;
            let grow = &go[co * out_plane + oy * g.ow..co * out_plane + (oy + 1) * g.ow];
            let ibase = b * g.c_in * in_plane + ci * in_plane + iy * g.w;
            let col = |ox: usize| ox * g.stride + kx - g.pad;
            if let Some(gk) = gk.as_mut() {
                let src = &inp[ci * in_plane + iy * g.w..ci * in_plane + (iy + 1) * g.w];
                let mut acc = 0.0;
                for ox in lo..hi {
                    acc += grow[ox] * src[col(ox)];
                }
                gk[kidx] += acc;
            }
            if let Some(gx) = gx.as_mut() {
                let wv = kernel.data()[kidx];
                let dst = &mut gx[ibase..ibase + g.w];
                for ox in lo..hi {
                    dst[col(ox)] += wv * grow[ox];
                }
            }
        });
    }
    let mut grads = vec![gx, gk];
    if ctx.inputs.len() == 3 {
        let gb = ctx.inputs[2].requires_grad().then(|| {
            let mut gb = vec![0.0; g.c_out];
            for b in 0..g.n {
                for (co, acc) in gb.iter_mut().enumerate() {
                    let base = (b * g.c_out + co) * out_plane;
                    *acc += ctx.grad[base..base + out_plane].iter().sum::<f64>();
                }
            }
            gb
        });
        grads.push(gb);
    }
    grads
}
