use rand::Rng;

use super::{axpy, dot};
use crate::error::{ensure_dim, ensure_finite, Error, Result};

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    pub fn code(self) -> u32 {
        match self {
            Activation::Tanh => 0,
            Activation::Identity => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Fully connected network stored as one flat parameter buffer.
///
/// Layer `l` maps `dims[l]` to `dims[l + 1]`; its weight block is
/// `dims[l + 1] x dims[l]` row-major, followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    hidden: Activation,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Activations recorded by [`Mlp::forward_tape`]: `acts[0]` is the input and
/// `acts[l + 1]` the post-activation output of layer `l`.
#[derive(Debug, Clone)]
pub struct MlpTape {
    pub acts: Vec<Vec<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("tape holds at least the input")
    }
}

fn layer_offsets(dims: &[usize]) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(dims.len().saturating_sub(1));
    let mut at = 0;
    for w in dims.windows(2) {
        offsets.push(at);
        at += w[0] * w[1] + w[1];
    }
    (offsets, at)
}

impl Mlp {
    /// All-zero network with the given layer widths `[in, h1, ..., out]`.
    pub fn zeros(dims: &[usize], hidden: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Dimension(
                "an MLP needs at least an input and an output width".into(),
            ));
        }
        let (offsets, n) = layer_offsets(dims);
        Ok(Self {
            dims: dims.to_vec(),
            hidden,
            params: vec![0.0; n],
            offsets,
        })
    }

    /// Glorot-uniform weights, zero biases. With `zero_output` the last layer
    /// is all zeros so the network starts out as the constant zero map.
    pub fn glorot<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        zero_output: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut mlp = Self::zeros(dims, hidden)?;
        let last = mlp.num_layers() - 1;
        for l in 0..mlp.num_layers() {
            if zero_output && l == last {
                continue;
            }
            let (fan_in, fan_out) = (mlp.dims[l], mlp.dims[l + 1]);
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in mlp.weights_mut(l) {
                *w = rng.random_range(-s..s);
            }
        }
        Ok(mlp)
    }

    /// Rebuilds a network from a flat parameter buffer.
    pub fn from_params(dims: &[usize], hidden: Activation, params: Vec<f64>) -> Result<Self> {
        let mut mlp = Self::zeros(dims, hidden)?;
        ensure_dim("MLP parameter count", mlp.params.len(), params.len())?;
        ensure_finite("MLP parameters", &params)?;
        mlp.params = params;
        Ok(mlp)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn weight_range(&self, l: usize) -> std::ops::Range<usize> {
        let start = self.offsets[l];
        start..start + self.dims[l] * self.dims[l + 1]
    }

    fn bias_range(&self, l: usize) -> std::ops::Range<usize> {
        let start = self.offsets[l] + self.dims[l] * self.dims[l + 1];
        start..start + self.dims[l + 1]
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        &self.params[self.weight_range(l)]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let r = self.weight_range(l);
        &mut self.params[r]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        &self.params[self.bias_range(l)]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let r = self.bias_range(l);
        &mut self.params[r]
    }

    /// Checked forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        ensure_dim("MLP input", self.input_dim(), input.len())?;
        ensure_finite("MLP input", input)?;
        let tape = self.forward_tape(input);
        Ok(tape.acts.into_iter().last().unwrap())
    }

    /// Unchecked forward pass that keeps every activation for backprop.
    pub fn forward_tape(&self, input: &[f64]) -> MlpTape {
        debug_assert_eq!(input.len(), self.input_dim());
        let last = self.num_layers() - 1;
        let mut acts = Vec::with_capacity(self.dims.len());
        acts.push(input.to_vec());
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = self.weights(l);
            let b = self.bias(l);
            let x = &acts[l];
            let mut y = Vec::with_capacity(n_out);
            for o in 0..n_out {
                y.push(b[o] + dot(&w[o * n_in..(o + 1) * n_in], x));
            }
            if l < last && self.hidden == Activation::Tanh {
                for v in &mut y {
                    *v = v.tanh();
                }
            }
            acts.push(y);
        }
        MlpTape { acts }
    }

    /// Reverse accumulation of `upstream · output` through a recorded pass.
    /// Parameter gradients are added into `grad` (same layout as `params`);
    /// the gradient with respect to the input is returned.
    pub fn backward_tape(&self, tape: &MlpTape, upstream: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(upstream.len(), self.output_dim());
        debug_assert_eq!(grad.len(), self.params.len());
        let last = self.num_layers() - 1;
        let mut delta = upstream.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            if l < last && self.hidden == Activation::Tanh {
                for (d, a) in delta.iter_mut().zip(&tape.acts[l + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let x = &tape.acts[l];
            let w = self.weights(l);
            let (wr, br) = (self.weight_range(l), self.bias_range(l));
            {
                let gw = &mut grad[wr];
                for o in 0..n_out {
                    if delta[o] != 0.0 {
                        axpy(delta[o], x, &mut gw[o * n_in..(o + 1) * n_in]);
                    }
                }
            }
            for (g, d) in grad[br].iter_mut().zip(&delta) {
                *g += d;
            }
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                if delta[o] != 0.0 {
                    axpy(delta[o], &w[o * n_in..(o + 1) * n_in], &mut prev);
                }
            }
            delta = prev;
        }
        delta
    }

    /// Checked backward pass: returns `(parameter gradients, input gradient)`
    /// of `upstream · forward(input)`.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        ensure_dim("MLP input", self.input_dim(), input.len())?;
        ensure_dim("MLP upstream gradient", self.output_dim(), upstream.len())?;
        ensure_finite("MLP input", input)?;
        ensure_finite("MLP upstream gradient", upstream)?;
        let tape = self.forward_tape(input);
        let mut grad = vec![0.0; self.params.len()];
        let input_grad = self.backward_tape(&tape, upstream, &mut grad);
        Ok((grad, input_grad))
    }
}
