//! Small building blocks shared by the policy, value and reward networks.

use rand::Rng;

use crate::autodiff::{linear, ParamSet, Tape, Tensor, Var};
use crate::error::Result;

/// Fully connected stack with `tanh` between layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    /// `(weight, bias)` parameter indices per layer.
    layers: Vec<(usize, usize)>,
}

impl Mlp {
    /// Registers the layers of a `sizes[0] -> … -> sizes[last]` network in `params`.
    /// The output layer's weights are multiplied by `out_scale`.
    pub fn init(params: &mut ParamSet, prefix: &str, sizes: &[usize], out_scale: f64, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (i, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let w = params.push_uniform(format!("{prefix}.{i}.weight"), &[fan_in, fan_out], fan_in, rng);
            if i == sizes.len() - 2 && out_scale != 1.0 {
                let scaled = params.get(w).map(|x| x * out_scale);
                params.set(w, scaled).expect("same shape");
            }
            let b = params.push(format!("{prefix}.{i}.bias"), Tensor::zeros(&[1, fan_out]));
            layers.push((w, b));
        }
        Self {
            sizes: sizes.to_vec(),
            layers,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = linear(tape, h, vars[w], vars[b])?;
            if i + 1 < self.layers.len() {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    /// Forward pass without gradient bookkeeping beyond a throwaway tape.
    pub fn eval(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let xv = tape.leaf(x.clone());
        let y = self.forward(&mut tape, &vars, xv)?;
        Ok(tape.value(y).clone())
    }
}
