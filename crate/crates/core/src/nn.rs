//! Multilayer perceptrons built on the tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
    Softmax,
}

/// Layer widths from input to output plus the activations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub output: OutputActivation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation, output: OutputActivation) -> Result<Self> {
        let spec = Self {
            widths,
            activation,
            output,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least 2 widths, got {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config(format!("MLP widths must be >= 1, got {:?}", self.widths)));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated spec")
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }
}

/// Weights are `fan_in x fan_out`; biases are `1 x fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: MlpParams,
}

/// An [`Mlp`] whose parameters have been placed on a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    spec: MlpSpec,
    weights: Vec<Var>,
    biases: Vec<Var>,
}

impl Mlp {
    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::with_capacity(spec.layers());
        let mut biases = Vec::with_capacity(spec.layers());
        for pair in spec.widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(Tensor::uniform(fan_in, fan_out, bound, rng));
            biases.push(Tensor::zeros(1, fan_out));
        }
        Ok(Self {
            spec,
            params: MlpParams { weights, biases },
        })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let weights = spec.widths.windows(2).map(|p| Tensor::zeros(p[0], p[1])).collect();
        let biases = spec.widths[1..].iter().map(|&w| Tensor::zeros(1, w)).collect();
        Ok(Self {
            spec,
            params: MlpParams { weights, biases },
        })
    }

    pub fn from_params(spec: MlpSpec, params: MlpParams) -> Result<Self> {
        spec.validate()?;
        if params.weights.len() != spec.layers() || params.biases.len() != spec.layers() {
            return Err(Error::Contract(format!(
                "{} weight and {} bias tensors for a {}-layer spec",
                params.weights.len(),
                params.biases.len(),
                spec.layers()
            )));
        }
        for (l, pair) in spec.widths.windows(2).enumerate() {
            if params.weights[l].shape() != (pair[0], pair[1]) {
                return Err(Error::dim("mlp weights", params.weights[l].shape(), (pair[0], pair[1])));
            }
            if params.biases[l].shape() != (1, pair[1]) {
                return Err(Error::dim("mlp bias", params.biases[l].shape(), (1, pair[1])));
            }
        }
        Ok(Self { spec, params })
    }

    /// Parameters in binding order: `w0, b0, w1, b1, ...`.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.params
            .weights
            .iter()
            .zip(&self.params.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.params
            .weights
            .iter_mut()
            .zip(self.params.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    /// Places the parameters on the tape as trainable leaves.
    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        self.bind_with(tape, true)
    }

    /// Places the parameters on the tape as constants.
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundMlp {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let mut weights = Vec::with_capacity(self.spec.layers());
        let mut biases = Vec::with_capacity(self.spec.layers());
        for (w, b) in self.params.weights.iter().zip(&self.params.biases) {
            weights.push(leaf(w));
            biases.push(leaf(b));
        }
        BoundMlp {
            spec: self.spec.clone(),
            weights,
            biases,
        }
    }

    /// Forward pass on a throwaway tape; no gradients.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind_frozen(&mut tape);
        let x = tape.constant(input.clone());
        let out = bound.forward(&mut tape, x)?;
        Ok(tape.value(out).clone())
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

impl BoundMlp {
    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// Leaves in the same order as [`Mlp::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(&w, &b)| [w, b])
            .collect()
    }

    /// Everything up to, but excluding, the output activation.
    pub fn forward_logits(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let width = tape.value(input).cols();
        if width != self.spec.input_width() {
            return Err(Error::dim(
                "mlp_forward",
                tape.value(input).shape(),
                (tape.value(input).rows(), self.spec.input_width()),
            ));
        }
        let last = self.spec.layers() - 1;
        let mut h = input;
        for (l, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let hw = tape.matmul(h, w)?;
            h = tape.add_row(hw, b)?;
            if l < last {
                h = match self.spec.activation {
                    Activation::Relu => tape.relu(h)?,
                    Activation::Tanh => tape.tanh(h)?,
                };
            }
        }
        Ok(h)
    }

    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let logits = self.forward_logits(tape, input)?;
        match self.spec.output {
            OutputActivation::Identity => Ok(logits),
            OutputActivation::Sigmoid => tape.sigmoid(logits),
            OutputActivation::Softmax => tape.softmax(logits),
        }
    }
}

/// Collects the gradients of bound leaves, zero-filled where the loss did not
/// reach them.
pub fn collect_grads(tape: &Tape, vars: &[Var]) -> Vec<Tensor> {
    vars.iter().map(|&v| tape.grad_or_zeros(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(widths: &[usize], out: OutputActivation) -> MlpSpec {
        MlpSpec::new(widths.to_vec(), Activation::Relu, out).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![3], Activation::Relu, OutputActivation::Identity).is_err());
        assert!(MlpSpec::new(vec![3, 0, 1], Activation::Relu, OutputActivation::Identity).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mlp = Mlp::zeros(spec(&[3, 4, 2], OutputActivation::Identity)).unwrap();
        let out = mlp.predict(&Tensor::full(5, 3, 1.7)).unwrap();
        assert_eq!(out, Tensor::zeros(5, 2));
    }

    #[test]
    fn single_affine_layer() {
        let params = MlpParams {
            weights: vec![Tensor::scalar(2.0)],
            biases: vec![Tensor::scalar(1.0)],
        };
        let mlp = Mlp::from_params(spec(&[1, 1], OutputActivation::Identity), params).unwrap();
        assert_eq!(mlp.predict(&Tensor::scalar(3.0)).unwrap().data(), &[7.0]);
    }

    #[test]
    fn sigmoid_of_zero_logit_is_half() {
        let mlp = Mlp::zeros(spec(&[2, 1], OutputActivation::Sigmoid)).unwrap();
        let out = mlp.predict(&Tensor::full(1, 2, 0.3)).unwrap();
        assert_eq!(out.data(), &[0.5]);
    }

    #[test]
    fn softmax_output_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::init(spec(&[4, 6, 3], OutputActivation::Softmax), &mut rng).unwrap();
        let out = mlp.predict(&Tensor::randn(10, 4, &mut rng)).unwrap();
        for r in 0..10 {
            assert!((out.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn init_respects_glorot_bound_and_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::init(spec(&[10, 6], OutputActivation::Identity), &mut rng).unwrap();
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(mlp.params.weights[0].data().iter().all(|w| w.abs() <= bound));
        assert!(mlp.params.biases[0].data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn width_mismatch_is_dimension_error() {
        let mlp = Mlp::zeros(spec(&[3, 1], OutputActivation::Identity)).unwrap();
        assert!(matches!(mlp.predict(&Tensor::zeros(2, 4)), Err(Error::Dimension { .. })));
    }
}
