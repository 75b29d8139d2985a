//! Parameter containers shared by the network modules.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Result, Tensor};

/// Anything that owns named trainable tensors.
pub trait Module {
    /// Calls `f` on every parameter with its dotted path, in a fixed order.
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));

    fn named_params(&mut self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    fn num_params(&mut self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    fn zero_grad(&mut self) {
        self.visit("", &mut |_, t| t.zero_grad());
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Trainable tensor with i.i.d. `N(0, std^2)` entries.
pub fn normal_param(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * std).collect();
    Tensor::param(shape, data).expect("normal_param: positive shape")
}

pub fn const_param(shape: &[usize], value: f64) -> Tensor {
    Tensor::param(shape, vec![value; shape.iter().product()]).expect("const_param: positive shape")
}

/// Fully connected layer over the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(rng: &mut impl Rng, d_in: usize, d_out: usize, bias: bool) -> Self {
        Self {
            weight: normal_param(rng, &[d_out, d_in], (1.0 / d_in as f64).sqrt()),
            bias: bias.then(|| const_param(&[d_out], 0.0)),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.linear(&self.weight, self.bias.as_ref())
    }

    /// Multiplies the weight matrix by `gain`, keeping it a leaf parameter.
    pub fn scale_weight_(&mut self, gain: f64) {
        let data = self.weight.data().iter().map(|w| w * gain).collect();
        self.weight = self.weight.with_data(data).expect("same length");
    }

    /// Zeroes the layer so its output is identically zero.
    pub fn zero_(&mut self) {
        self.weight = const_param(self.weight.shape(), 0.0);
        if let Some(b) = &mut self.bias {
            *b = const_param(b.shape(), 0.0);
        }
    }
}

impl Module for Linear {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self { gamma: const_param(&[dim], 1.0), beta: const_param(&[dim], 0.0), eps: 1e-5 }
    }

    pub fn dim(&self) -> usize {
        self.gamma.numel()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(self.dim(), &self.gamma, &self.beta, self.eps)
    }
}

impl Module for LayerNorm {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

/// Two-layer perceptron `fc2(silu(fc1(x)))` over the last axis.
#[derive(Debug, Clone)]
pub struct Ffn {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Ffn {
    pub fn new(rng: &mut impl Rng, dim: usize, expansion: usize) -> Self {
        Self { fc1: Linear::new(rng, dim, dim * expansion, true), fc2: Linear::new(rng, dim * expansion, dim, true) }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.silu()?)
    }
}

impl Module for Ffn {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::fd_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_are_dotted_and_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ffn = Ffn::new(&mut rng, 4, 2);
        let names: Vec<String> = ffn.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"]);
        assert_eq!(ffn.num_params(), 4 * 8 + 8 + 8 * 4 + 4);
    }

    #[test]
    fn ffn_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ffn = Ffn::new(&mut rng, 8, 4);
        let x = normal_param(&mut rng, &[3, 8], 0.5).detach();
        let err = fd_check(|x| ffn.forward(x)?.square()?.sum(), &x, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
        let w = ffn.fc1.weight.detach();
        let err = fd_check(
            |w| x.linear(w, ffn.fc1.bias.as_ref())?.silu()?.linear(&ffn.fc2.weight, None)?.square()?.sum(),
            &w,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
