use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::sigmoid;
use super::{Parameterized, Real, Tensor};
use crate::error::{dim_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn derivative_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

/// Fully connected layer `activation(weight · x + bias)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub activation: Activation,
}

impl<T: Real> DenseParams<T> {
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        DenseParams {
            weight: Tensor::glorot(&[output, input], input, output, rng),
            bias: Tensor::zeros(&[output]),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    fn check(&self, x: &[T]) -> Result<()> {
        if self.weight.shape().len() != 2 || self.bias.len() != self.weight.rows() {
            return dim_err(format!(
                "dense: weight {:?} with bias {:?}",
                self.weight.shape(),
                self.bias.shape()
            ));
        }
        if x.len() != self.weight.cols() {
            return dim_err(format!(
                "dense: input length {} for weight {:?}",
                x.len(),
                self.weight.shape()
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check(x)?;
        let mut out = vec![T::zero(); self.output_dim()];
        self.weight.matvec_into(x, &mut out);
        for (o, &b) in out.iter_mut().zip(self.bias.data()) {
            *o = self.activation.apply(*o + b);
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grads` and returns `∂L/∂x`.
    /// `y` is this layer's output for input `x`.
    pub fn backward(&self, x: &[T], y: &[T], dy: &[T], grads: &mut DenseParams<T>) -> Vec<T> {
        let da: Vec<T> = dy
            .iter()
            .zip(y)
            .map(|(&d, &o)| d * self.activation.derivative_from_output(o))
            .collect();
        grads.weight.outer_acc(&da, x);
        for (b, &d) in grads.bias.data_mut().iter_mut().zip(&da) {
            *b += d;
        }
        let mut dx = vec![T::zero(); x.len()];
        self.weight.matvec_t_acc(&da, &mut dx);
        dx
    }
}

impl<T: Real> Parameterized<T> for DenseParams<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            ("weight".into(), &mut self.weight),
            ("bias".into(), &mut self.bias),
        ]
    }
}

pub fn dense_forward<T: Real>(x: &[T], p: &DenseParams<T>) -> Result<Vec<T>> {
    p.forward(x)
}

/// Stack of dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<DenseParams<T>>,
}

impl<T: Real> Mlp<T> {
    /// Hidden layers use `hidden_act`; the head is a single sigmoid unit.
    pub fn binary_head<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        hidden_act: Activation,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &h in hidden {
            layers.push(DenseParams::new(prev, h, hidden_act, rng));
            prev = h;
        }
        layers.push(DenseParams::new(prev, 1, Activation::Sigmoid, rng));
        Mlp { layers }
    }

    /// Returns every layer's output; the last entry is the network output.
    pub fn forward(&self, x: &[T]) -> Result<Vec<Vec<T>>> {
        let mut outs: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = outs.last().map(Vec::as_slice).unwrap_or(x);
            let y = layer.forward(input)?;
            outs.push(y);
        }
        Ok(outs)
    }

    /// Backward pass given gradient `dy` at the final layer's *output*.
    pub fn backward(&self, x: &[T], outs: &[Vec<T>], dy: &[T], grads: &mut Mlp<T>) -> Vec<T> {
        let mut d = dy.to_vec();
        for l in (0..self.layers.len()).rev() {
            let input = if l == 0 { x } else { &outs[l - 1] };
            d = self.layers[l].backward(input, &outs[l], &d, &mut grads.layers[l]);
        }
        d
    }

    /// Backward pass for a sigmoid head given `∂L/∂logit` directly, which
    /// avoids dividing by a saturated sigmoid derivative.
    pub fn backward_from_logit(
        &self,
        x: &[T],
        outs: &[Vec<T>],
        d_logit: T,
        grads: &mut Mlp<T>,
    ) -> Vec<T> {
        let last = self.layers.len() - 1;
        let input = if last == 0 { x } else { &outs[last - 1] };
        let head = &self.layers[last];
        let da = [d_logit];
        grads.layers[last].weight.outer_acc(&da, input);
        grads.layers[last].bias.data_mut()[0] += d_logit;
        let mut d = vec![T::zero(); input.len()];
        head.weight.matvec_t_acc(&da, &mut d);
        for l in (0..last).rev() {
            let input = if l == 0 { x } else { &outs[l - 1] };
            d = self.layers[l].backward(input, &outs[l], &d, &mut grads.layers[l]);
        }
        d
    }
}

impl<T: Real> Parameterized<T> for Mlp<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.params()
                    .into_iter()
                    .map(move |(n, t)| (format!("{i}.{n}"), t))
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                l.params_mut()
                    .into_iter()
                    .map(move |(n, t)| (format!("{i}.{n}"), t))
            })
            .collect()
    }
}
