use super::{invalid, shape_err, BackwardCtx, Result, Tensor};

impl Tensor {
    /// Layer normalization over the last axis (extent `normalized`), with
    /// population variance. A vector whose variance plus `eps` is zero maps
    /// to `beta`.
    pub fn layer_norm(&self, normalized: usize, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        if normalized == 0 {
            return Err(invalid("layer_norm", "zero-length normalization axis"));
        }
        if self.shape().last() != Some(&normalized) {
            return Err(shape_err(
                "layer_norm",
                format!("last extent of {:?} is not {normalized}", self.shape()),
            ));
        }
        if gamma.shape() != [normalized] || beta.shape() != [normalized] {
            return Err(shape_err(
                "layer_norm",
                format!("gamma {:?} / beta {:?} must be [{normalized}]", gamma.shape(), beta.shape()),
            ));
        }
        if eps < 0.0 {
            return Err(invalid("layer_norm", "eps must be non-negative"));
        }
        let d = normalized;
        let rows = self.numel() / d;
        let mut xhat = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; self.numel()];
        let (g, b) = (gamma.data(), beta.data());
        for r in 0..rows {
            let x = &self.data()[r * d..(r + 1) * d];
            let mean = x.iter().sum::<f64>() / d as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let denom = var + eps;
            let is = if denom > 0.0 { 1.0 / denom.sqrt() } else { 0.0 };
            inv_std[r] = is;
            for j in 0..d {
                let xh = (x[j] - mean) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = g[j] * xh + b[j];
            }
        }
        Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let gamma = ctx.inputs[1].data();
                let gout = ctx.grad;
                let mut ggamma = vec![0.0; d];
                let mut gbeta = vec![0.0; d];
                let want_x = ctx.inputs[0].requires_grad();
                let mut gx = vec![0.0; rows * d];
                let mut gxh = vec![0.0; d];
                for r in 0..rows {
                    let go = &gout[r * d..(r + 1) * d];
                    let xh = &xhat[r * d..(r + 1) * d];
                    for j in 0..d {
                        ggamma[j] += go[j] * xh[j];
                        gbeta[j] += go[j];
                    }
                    if want_x {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..d {
                            gxh[j] = go[j] * gamma[j];
                            m1 += gxh[j];
                            m2 += gxh[j] * xh[j];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        let is = inv_std[r];
                        for j in 0..d {
                            gx[r * d + j] = is * (gxh[j] - m1 - xh[j] * m2);
                        }
                    }
                }
                vec![want_x.then_some(gx), Some(ggamma), Some(gbeta)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::fd_check;

    fn v(data: &[f64]) -> Tensor {
        Tensor::from_vec(&[data.len()], data.to_vec()).unwrap()
    }

    #[test]
    fn constant_vector_collapses_to_beta() {
        let y = v(&[5.0; 4]).layer_norm(4, &Tensor::ones(&[4]), &Tensor::zeros(&[4]), 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0; 4]);
        let y = v(&[5.0; 4]).layer_norm(4, &Tensor::ones(&[4]), &Tensor::zeros(&[4]), 0.0).unwrap();
        assert_eq!(y.data(), &[0.0; 4]);
    }

    #[test]
    fn two_element_hand_value() {
        let y = v(&[1.0, 3.0]).layer_norm(2, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let x = Tensor::from_vec(&[2, 3], vec![0.3, -2.0, 7.0, 1.0, 1.5, -0.25]).unwrap();
        let y = x.layer_norm(3, &Tensor::zeros(&[3]), &Tensor::full(&[3], 7.0), 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn errors() {
        let x = Tensor::ones(&[2, 3]);
        assert!(x.layer_norm(0, &Tensor::ones(&[3]), &Tensor::ones(&[3]), 1e-5).is_err());
        assert!(x.layer_norm(2, &Tensor::ones(&[2]), &Tensor::ones(&[2]), 1e-5).is_err());
    }

    #[test]
    fn gradients() {
        let x = Tensor::from_vec(&[3, 4], (0..12).map(|i| (i as f64 * 0.9).sin()).collect()).unwrap();
        let gamma = v(&[0.5, -1.2, 2.0, 0.8]);
        let beta = v(&[0.1, 0.2, -0.3, 0.0]);
        let w = Tensor::from_vec(&[3, 4], (0..12).map(|i| (i as f64 * 0.37).cos()).collect()).unwrap();
        let f = |x: &Tensor, g: &Tensor, b: &Tensor| x.layer_norm(4, g, b, 1e-5)?.mul(&w)?.sum();
        assert!(fd_check(|x| f(x, &gamma, &beta), &x, 1e-5).unwrap() < 1e-4);
        assert!(fd_check(|g| f(&x, g, &beta), &gamma, 1e-5).unwrap() < 1e-6);
        assert!(fd_check(|b| f(&x, &gamma, b), &beta, 1e-5).unwrap() < 1e-6);
    }
}
