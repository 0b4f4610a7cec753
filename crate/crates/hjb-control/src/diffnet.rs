//! Differential value network.
//!
//! A fully-connected network with a single scalar output that computes the
//! value `V(x)` and the input Jacobian `dV/dx` in one forward pass by
//! propagating the layer Jacobian alongside the activations. The backward
//! pass is the hand-derived adjoint of that accumulation, so losses may
//! depend on both outputs and the parameter gradient stays exact to machine
//! precision. Because the Jacobian path is differentiated, the activation
//! must be twice continuously differentiable.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::{self, Stream};
use crate::value::ValueFunction;

const CHECKPOINT_MAGIC: &[u8; 8] = b"HJBDVNET";
const CHECKPOINT_VERSION: u32 = 1;

/// Hidden-layer activation. Both variants are C^2 everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Softplus,
    Tanh,
}

impl Activation {
    /// Value, first and second derivative at `z`.
    #[inline]
    fn eval(self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Softplus => {
                // softplus(z) = max(z, 0) + ln(1 + e^{-|z|}) is overflow-safe.
                let a = z.max(0.0) + (-z.abs()).exp().ln_1p();
                let s = sigmoid(z);
                (a, s, s * (1.0 - s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
        }
    }

    pub fn id(self) -> u32 {
        match self {
            Activation::Softplus => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_id(id: u32) -> Result<Self> {
        match id {
            0 => Ok(Activation::Softplus),
            1 => Ok(Activation::Tanh),
            other => Err(Error::Format(format!("unknown activation id {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Softplus => "softplus",
            Activation::Tanh => "tanh",
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fully-connected scalar-output network with joint value/Jacobian forward.
#[derive(Debug, Clone)]
pub struct DifferentialNetwork {
    widths: Vec<usize>,
    activation: Activation,
    /// Flat parameter vector; per layer: weights row-major, then biases.
    params: Vec<f64>,
    /// (weight offset, bias offset) per layer into `params`.
    offsets: Vec<(usize, usize)>,
    seed: u64,
}

/// Per-layer caches from a forward pass.
#[derive(Debug, Clone)]
struct LayerCache {
    /// Post-activation values a^l.
    act: Vec<f64>,
    /// sigma'(z^l).
    d1: Vec<f64>,
    /// sigma''(z^l).
    d2: Vec<f64>,
}

/// Value, input Jacobian and the caches needed by [`DifferentialNetwork::backward`].
#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub value: f64,
    /// dV/dx, length = input dimension.
    pub jacobian: Vec<f64>,
    input: Vec<f64>,
    layers: Vec<LayerCache>,
}

impl DifferentialNetwork {
    /// Builds a network with deterministic uniform initialization
    /// (+-sqrt(6/(fan_in+fan_out))) and zero biases.
    pub fn init(widths: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(format!(
                "network needs at least input and output widths, got {widths:?}"
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!("zero width in {widths:?}")));
        }
        if *widths.last().unwrap() != 1 {
            return Err(Error::Config(format!(
                "output width must be 1 (scalar value function), got {widths:?}"
            )));
        }

        let mut offsets = Vec::with_capacity(widths.len() - 1);
        let mut count = 0usize;
        for l in 1..widths.len() {
            let w_off = count;
            count += widths[l] * widths[l - 1];
            let b_off = count;
            count += widths[l];
            offsets.push((w_off, b_off));
        }

        let mut params = vec![0.0; count];
        let mut rng = seeds::rng(seed, Stream::NetworkInit);
        for l in 1..widths.len() {
            let (fan_in, fan_out) = (widths[l - 1] as f64, widths[l] as f64);
            let limit = (6.0 / (fan_in + fan_out)).sqrt();
            let (w_off, b_off) = offsets[l - 1];
            for w in &mut params[w_off..b_off] {
                *w = rng.random_range(-limit..limit);
            }
        }

        Ok(Self {
            widths: widths.to_vec(),
            activation,
            params,
            offsets,
            seed,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::InvalidInput(format!(
                "parameter vector length {} != {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    #[inline]
    fn weights(&self, layer: usize) -> &[f64] {
        let (w_off, b_off) = self.offsets[layer];
        &self.params[w_off..b_off]
    }

    #[inline]
    fn biases(&self, layer: usize) -> &[f64] {
        let (_, b_off) = self.offsets[layer];
        &self.params[b_off..b_off + self.widths[layer + 1]]
    }

    /// Joint value/Jacobian forward pass with caches for `backward`.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardResult> {
        let n_x = self.input_dim();
        if x.len() != n_x {
            return Err(Error::InvalidInput(format!(
                "input dimension {} != network input {}",
                x.len(),
                n_x
            )));
        }

        let n_layers = self.layer_count();
        let mut layers = Vec::with_capacity(n_layers - 1);
        let mut act: Vec<f64> = x.to_vec();
        // Layer Jacobian d a^l / d x, row-major (width x n_x); starts as identity.
        let mut jac: Vec<f64> = identity(n_x);

        for l in 0..n_layers - 1 {
            let (n_out, n_in) = (self.widths[l + 1], self.widths[l]);
            let w = self.weights(l);
            let b = self.biases(l);

            let mut next_act = vec![0.0; n_out];
            let mut d1 = vec![0.0; n_out];
            let mut d2 = vec![0.0; n_out];
            let mut next_jac = vec![0.0; n_out * n_x];

            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut z = b[o];
                for (wi, ai) in row.iter().zip(&act) {
                    z = wi.mul_add(*ai, z);
                }
                let (a, da, dda) = self.activation.eval(z);
                next_act[o] = a;
                d1[o] = da;
                d2[o] = dda;

                // G^l[o, :] = sigma'(z_o) * sum_i w_oi G^{l-1}[i, :]
                let out_row = &mut next_jac[o * n_x..(o + 1) * n_x];
                for (wi, in_row) in row.iter().zip(jac.chunks_exact(n_x)) {
                    for (g, j) in out_row.iter_mut().zip(in_row) {
                        *g = wi.mul_add(*j, *g);
                    }
                }
                for g in out_row.iter_mut() {
                    *g *= da;
                }
            }

            layers.push(LayerCache {
                act: next_act.clone(),
                d1,
                d2,
            });
            act = next_act;
            jac = next_jac;
        }

        // Linear output layer.
        let w = self.weights(n_layers - 1);
        let b = self.biases(n_layers - 1);
        let mut value = b[0];
        for (wi, ai) in w.iter().zip(&act) {
            value = wi.mul_add(*ai, value);
        }
        let mut jacobian = vec![0.0; n_x];
        for (wi, row) in w.iter().zip(jac.chunks_exact(n_x)) {
            for (j_out, j) in jacobian.iter_mut().zip(row) {
                *j_out = wi.mul_add(*j, *j_out);
            }
        }

        Ok(ForwardResult {
            value,
            jacobian,
            input: x.to_vec(),
            layers,
        })
    }

    /// Parameter gradient of `L = d_value * V + d_jacobian . dV/dx`.
    ///
    /// `fwd` must come from `forward` on this network with unchanged
    /// parameters. The adjoint runs back through the Jacobian accumulation,
    /// which is where the activation second derivative enters.
    pub fn backward(
        &self,
        fwd: &ForwardResult,
        d_value: f64,
        d_jacobian: &[f64],
    ) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.params.len()];
        self.backward_into(fwd, d_value, d_jacobian, &mut grad)?;
        Ok(grad)
    }

    /// `backward` accumulating into a caller-provided gradient buffer.
    pub fn backward_into(
        &self,
        fwd: &ForwardResult,
        d_value: f64,
        d_jacobian: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        let n_x = self.input_dim();
        if d_jacobian.len() != n_x {
            return Err(Error::InvalidInput(format!(
                "adjoint dimension {} != network input {}",
                d_jacobian.len(),
                n_x
            )));
        }
        if grad.len() != self.params.len() {
            return Err(Error::InvalidInput(format!(
                "gradient buffer length {} != parameter count {}",
                grad.len(),
                self.params.len()
            )));
        }

        let n_layers = self.layer_count();
        let n_hidden = n_layers - 1;

        // Forward sweep of the Jacobian-contraction vector:
        //   c^0 = d_jacobian, u^l = W^l c^{l-1}, c^l = sigma'(z^l) . u^l.
        // With it, d_jacobian . dV/dx == W^out c^{last}.
        let mut c_vecs: Vec<Vec<f64>> = Vec::with_capacity(n_hidden + 1);
        let mut u_vecs: Vec<Vec<f64>> = Vec::with_capacity(n_hidden);
        c_vecs.push(d_jacobian.to_vec());
        for l in 0..n_hidden {
            let (n_out, n_in) = (self.widths[l + 1], self.widths[l]);
            let w = self.weights(l);
            let c_prev = &c_vecs[l];
            let mut u = vec![0.0; n_out];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut s = 0.0;
                for (wi, ci) in row.iter().zip(c_prev) {
                    s = wi.mul_add(*ci, s);
                }
                u[o] = s;
            }
            let c: Vec<f64> = u
                .iter()
                .zip(&fwd.layers[l].d1)
                .map(|(ui, di)| ui * di)
                .collect();
            u_vecs.push(u);
            c_vecs.push(c);
        }

        let act_prev = |l: usize| -> &[f64] {
            if l == 0 {
                &fwd.input
            } else {
                &fwd.layers[l - 1].act
            }
        };

        // Output layer: V = W a + b, plus the Jacobian contraction W c.
        let out_layer = n_layers - 1;
        let (w_off, b_off) = self.offsets[out_layer];
        let w_out = self.weights(out_layer).to_vec();
        {
            let a_last = act_prev(out_layer);
            let c_last = &c_vecs[n_hidden];
            let g = &mut grad[w_off..b_off];
            for ((gi, ai), ci) in g.iter_mut().zip(a_last).zip(c_last) {
                *gi += d_value * ai + ci;
            }
            grad[b_off] += d_value;
        }

        // Activation and contraction adjoints entering the last hidden layer.
        let mut a_bar: Vec<f64> = w_out.iter().map(|w| d_value * w).collect();
        let mut c_bar: Vec<f64> = w_out;

        for l in (0..n_hidden).rev() {
            let (n_out, n_in) = (self.widths[l + 1], self.widths[l]);
            let w = self.weights(l);
            let cache = &fwd.layers[l];
            let u = &u_vecs[l];
            let c_prev = &c_vecs[l];
            let a_in = act_prev(l);

            // u_bar = sigma' . c_bar ; z_bar = sigma' . a_bar + sigma'' . u . c_bar
            let mut u_bar = vec![0.0; n_out];
            let mut z_bar = vec![0.0; n_out];
            for o in 0..n_out {
                u_bar[o] = cache.d1[o] * c_bar[o];
                z_bar[o] = cache.d1[o] * a_bar[o] + cache.d2[o] * u[o] * c_bar[o];
            }

            let (w_off, b_off) = self.offsets[l];
            {
                let gw = &mut grad[w_off..b_off];
                for o in 0..n_out {
                    let row = &mut gw[o * n_in..(o + 1) * n_in];
                    let (zb, ub) = (z_bar[o], u_bar[o]);
                    for ((gi, ai), ci) in row.iter_mut().zip(a_in).zip(c_prev) {
                        *gi += zb * ai + ub * ci;
                    }
                }
            }
            for (gb, zb) in grad[b_off..b_off + n_out].iter_mut().zip(&z_bar) {
                *gb += zb;
            }

            if l > 0 {
                let mut a_next = vec![0.0; n_in];
                let mut c_next = vec![0.0; n_in];
                for o in 0..n_out {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let (zb, ub) = (z_bar[o], u_bar[o]);
                    for i in 0..n_in {
                        a_next[i] = row[i].mul_add(zb, a_next[i]);
                        c_next[i] = row[i].mul_add(ub, c_next[i]);
                    }
                }
                a_bar = a_next;
                c_bar = c_next;
            }
        }

        Ok(())
    }

    /// Cache-free value/gradient evaluation for control loops.
    pub fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let fwd = self.forward(x)?;
        Ok((fwd.value, fwd.jacobian))
    }
}

impl ValueFunction for DifferentialNetwork {
    fn state_dim(&self) -> usize {
        self.input_dim()
    }

    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let fwd = self
            .forward(x)
            .expect("state dimension mismatch in value_grad");
        (fwd.value, fwd.jacobian)
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

/// Checkpoint metadata stored next to the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    /// Discounting the checkpointed parameters were trained down to.
    pub rho: f64,
}

/// Writes a self-describing checkpoint: header then the flat parameter
/// vector as little-endian f64.
pub fn save_checkpoint(path: &Path, net: &DifferentialNetwork, rho: f64) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&net.activation.id().to_le_bytes());
    buf.extend_from_slice(&(net.widths.len() as u32).to_le_bytes());
    for w in &net.widths {
        buf.extend_from_slice(&(*w as u32).to_le_bytes());
    }
    buf.extend_from_slice(&net.seed.to_le_bytes());
    buf.extend_from_slice(&rho.to_le_bytes());
    buf.extend_from_slice(&(net.params.len() as u64).to_le_bytes());
    for p in &net.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Loads a checkpoint, validating magic, version and width consistency.
pub fn load_checkpoint(path: &Path) -> Result<(DifferentialNetwork, CheckpointMeta)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };

    let magic = cur.take(8)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a value-network checkpoint".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let activation = Activation::from_id(cur.u32()?)?;
    let n_widths = cur.u32()? as usize;
    if n_widths < 2 || n_widths > 64 {
        return Err(Error::Format(format!("implausible width count {n_widths}")));
    }
    let mut widths = Vec::with_capacity(n_widths);
    for _ in 0..n_widths {
        widths.push(cur.u32()? as usize);
    }
    let seed = cur.u64()?;
    let rho = cur.f64()?;
    let n_params = cur.u64()? as usize;

    let net_shell = DifferentialNetwork::init(&widths, activation, seed)
        .map_err(|e| Error::Format(format!("checkpoint widths rejected: {e}")))?;
    if net_shell.param_count() != n_params {
        return Err(Error::Format(format!(
            "parameter count {} does not match widths {:?} (expected {})",
            n_params,
            widths,
            net_shell.param_count()
        )));
    }
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        params.push(cur.f64()?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint payload".into()));
    }

    let mut net = net_shell;
    net.set_params(&params)?;
    let meta = CheckpointMeta {
        widths,
        activation,
        seed,
        rho,
    };
    Ok((net, meta))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
