use super::{no_grad, Result, Tensor, TensorError};

/// Largest relative disagreement between the tape gradient of `f` at `x`
/// and a central finite difference with step `h`, measured per coordinate
/// as `|analytic - numeric| / max(1, |analytic|)`.
pub fn fd_check(f: impl Fn(&Tensor) -> Result<Tensor>, x: &Tensor, h: f64) -> Result<f64> {
    let leaf = Tensor::param(x.shape(), x.to_vec())?;
    let y = f(&leaf)?;
    if y.numel() != 1 {
        return Err(TensorError::NonScalar(y.shape().to_vec()));
    }
    y.backward()?;
    let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; x.numel()]);
    let eval = |data: Vec<f64>| -> Result<f64> {
        let probe = Tensor::from_vec(x.shape(), data)?;
        no_grad(|| f(&probe)).map(|t| t.item())
    };
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = x.to_vec();
        plus[i] += h;
        let mut minus = x.to_vec();
        minus[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        if !numeric.is_finite() {
            return Err(TensorError::NonFinite { op: "fd_check" });
        }
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(n: usize) -> Tensor {
        Tensor::from_vec(&[n], (0..n).map(|i| ((i as f64) * 1.3).sin()).collect()).unwrap()
    }

    #[test]
    fn quadratic_is_nearly_exact() {
        assert!(fd_check(|x| x.square()?.sum(), &cube(8), 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn silu_within_tolerance() {
        assert!(fd_check(|x| x.silu()?.sum(), &cube(8), 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let err = fd_check(|_| Tensor::scalar(3.0), &cube(4), 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let x = Tensor::from_vec(&[1], vec![800.0]).unwrap();
        assert!(fd_check(|x| x.exp()?.sum(), &x, 1e-5).is_err());
    }
}
