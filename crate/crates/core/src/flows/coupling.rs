use rand::Rng;

use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::numcore::{Activation, Mlp, MlpTape};

/// Affine coupling layer.
///
/// Coordinates flagged as pass-through (`A`) are copied; the others (`B`)
/// are scaled and shifted by a conditioner reading `[x_A ; cond]`:
/// `x_B = z_B * exp(s) + t` with `s = c * tanh(s_raw / c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    dim: usize,
    cond_dim: usize,
    clamp: f64,
    pass: Vec<usize>,
    trans: Vec<usize>,
    net: Mlp,
}

#[derive(Debug, Clone)]
pub(crate) struct CouplingTape {
    net: MlpTape,
    s: Vec<f64>,
    ds_draw: Vec<f64>,
    in_b: Vec<f64>,
    out_b: Vec<f64>,
}

impl CouplingLayer {
    /// Builds a layer from an explicit mask (`true` = pass-through) and an
    /// already constructed conditioner.
    pub fn from_parts(mask: &[bool], cond_dim: usize, clamp: f64, net: Mlp) -> Result<Self> {
        if !(clamp > 0.0) {
            return Err(Error::Config(format!("scale clamp must be positive, got {clamp}")));
        }
        let pass: Vec<usize> = (0..mask.len()).filter(|&j| mask[j]).collect();
        let trans: Vec<usize> = (0..mask.len()).filter(|&j| !mask[j]).collect();
        if trans.is_empty() {
            return Err(Error::Config("coupling mask transforms no coordinate".into()));
        }
        ensure_dim("conditioner input", pass.len() + cond_dim, net.input_dim())?;
        ensure_dim("conditioner output", 2 * trans.len(), net.output_dim())?;
        Ok(Self {
            dim: mask.len(),
            cond_dim,
            clamp,
            pass,
            trans,
            net,
        })
    }

    /// Layer with a Glorot-initialized conditioner whose last layer is zero,
    /// so it starts as the identity map.
    pub fn new<R: Rng + ?Sized>(
        mask: &[bool],
        cond_dim: usize,
        hidden: &[usize],
        clamp: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let n_pass = mask.iter().filter(|&&m| m).count();
        let n_trans = mask.len() - n_pass;
        let mut dims = vec![n_pass + cond_dim];
        dims.extend_from_slice(hidden);
        dims.push(2 * n_trans);
        let net = Mlp::glorot(&dims, Activation::Tanh, true, rng)?;
        Self::from_parts(mask, cond_dim, clamp, net)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn clamp(&self) -> f64 {
        self.clamp
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.dim];
        for &j in &self.pass {
            m[j] = true;
        }
        m
    }

    pub fn transformed(&self) -> &[usize] {
        &self.trans
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    fn conditioner(&self, v: &[f64], cond: &[f64]) -> (MlpTape, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut input = Vec::with_capacity(self.pass.len() + self.cond_dim);
        input.extend(self.pass.iter().map(|&j| v[j]));
        input.extend_from_slice(cond);
        let tape = self.net.forward_tape(&input);
        let nb = self.trans.len();
        let out = tape.output();
        let mut s = Vec::with_capacity(nb);
        let mut ds = Vec::with_capacity(nb);
        for &raw in &out[..nb] {
            let th = (raw / self.clamp).tanh();
            s.push(self.clamp * th);
            ds.push(1.0 - th * th);
        }
        let t = out[nb..].to_vec();
        (tape, s, ds, t)
    }

    pub(crate) fn forward_tape(&self, z: &[f64], cond: &[f64]) -> (Vec<f64>, f64, CouplingTape) {
        let (net, s, ds_draw, t) = self.conditioner(z, cond);
        let mut x = z.to_vec();
        let mut in_b = Vec::with_capacity(self.trans.len());
        let mut out_b = Vec::with_capacity(self.trans.len());
        let mut logdet = 0.0;
        for (k, &j) in self.trans.iter().enumerate() {
            in_b.push(z[j]);
            x[j] = z[j] * s[k].exp() + t[k];
            out_b.push(x[j]);
            logdet += s[k];
        }
        let tape = CouplingTape {
            net,
            s,
            ds_draw,
            in_b,
            out_b,
        };
        (x, logdet, tape)
    }

    pub(crate) fn inverse_tape(&self, x: &[f64], cond: &[f64]) -> (Vec<f64>, f64, CouplingTape) {
        let (net, s, ds_draw, t) = self.conditioner(x, cond);
        let mut z = x.to_vec();
        let mut in_b = Vec::with_capacity(self.trans.len());
        let mut out_b = Vec::with_capacity(self.trans.len());
        let mut logdet = 0.0;
        for (k, &j) in self.trans.iter().enumerate() {
            in_b.push(x[j]);
            z[j] = (x[j] - t[k]) * (-s[k]).exp();
            out_b.push(z[j]);
            logdet -= s[k];
        }
        let tape = CouplingTape {
            net,
            s,
            ds_draw,
            in_b,
            out_b,
        };
        (z, logdet, tape)
    }

    fn finish_backward(
        &self,
        tape: &CouplingTape,
        g_out: &[f64],
        g_raw: Vec<f64>,
        g_t: Vec<f64>,
        mut g_in: Vec<f64>,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let mut upstream = g_raw;
        upstream.extend(g_t);
        let g_net_in = self.net.backward_tape(&tape.net, &upstream, grad);
        for (i, &j) in self.pass.iter().enumerate() {
            g_in[j] = g_out[j] + g_net_in[i];
        }
        g_in
    }

    /// Pulls `(g_out, g_logdet)` back through a forward pass; parameter
    /// gradients accumulate into `grad`.
    pub(crate) fn backward_forward(
        &self,
        tape: &CouplingTape,
        g_out: &[f64],
        g_logdet: f64,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let nb = self.trans.len();
        let mut g_in = vec![0.0; self.dim];
        let mut g_raw = Vec::with_capacity(nb);
        let mut g_t = Vec::with_capacity(nb);
        for (k, &j) in self.trans.iter().enumerate() {
            let e = tape.s[k].exp();
            g_in[j] = g_out[j] * e;
            let g_s = g_out[j] * tape.in_b[k] * e + g_logdet;
            g_raw.push(g_s * tape.ds_draw[k]);
            g_t.push(g_out[j]);
        }
        self.finish_backward(tape, g_out, g_raw, g_t, g_in, grad)
    }

    /// Same as [`Self::backward_forward`] for a pass recorded by `inverse_tape`.
    pub(crate) fn backward_inverse(
        &self,
        tape: &CouplingTape,
        g_out: &[f64],
        g_logdet: f64,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let nb = self.trans.len();
        let mut g_in = vec![0.0; self.dim];
        let mut g_raw = Vec::with_capacity(nb);
        let mut g_t = Vec::with_capacity(nb);
        for (k, &j) in self.trans.iter().enumerate() {
            let e = (-tape.s[k]).exp();
            g_in[j] = g_out[j] * e;
            let g_s = -g_out[j] * tape.out_b[k] - g_logdet;
            g_raw.push(g_s * tape.ds_draw[k]);
            g_t.push(-g_out[j] * e);
        }
        self.finish_backward(tape, g_out, g_raw, g_t, g_in, grad)
    }

    fn check_inputs(&self, v: &[f64], cond: &[f64]) -> Result<()> {
        ensure_dim("coupling input", self.dim, v.len())?;
        ensure_dim("coupling condition", self.cond_dim, cond.len())?;
        ensure_finite("coupling input", v)?;
        ensure_finite("coupling condition", cond)
    }

    fn check_outputs(out: &[f64], logdet: f64) -> Result<()> {
        ensure_finite("coupling output", out)?;
        if !logdet.is_finite() {
            return Err(Error::Numeric("non-finite coupling log-determinant".into()));
        }
        Ok(())
    }

    /// `z -> (x, log|det dx/dz|)`.
    pub fn forward(&self, z: &[f64], cond: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_inputs(z, cond)?;
        let (x, ld, _) = self.forward_tape(z, cond);
        Self::check_outputs(&x, ld)?;
        Ok((x, ld))
    }

    /// `x -> (z, log|det dz/dx|)`.
    pub fn inverse(&self, x: &[f64], cond: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_inputs(x, cond)?;
        let (z, ld, _) = self.inverse_tape(x, cond);
        Self::check_outputs(&z, ld)?;
        Ok((z, ld))
    }
}

/// Alternating even/odd pass-through mask. One-dimensional layers transform
/// their only coordinate from a conditioner that sees just the condition.
pub fn parity_mask(dim: usize, parity: usize) -> Vec<bool> {
    if dim == 1 {
        return vec![false];
    }
    (0..dim).map(|j| j % 2 == parity % 2).collect()
}
