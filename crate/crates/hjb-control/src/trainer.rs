//! HJB residual training with a discount curriculum.
//!
//! The value network is fit by minimizing the mean absolute residual of
//!
//! `rho V(x) + g*(-B^T(x) V_x) - r(x) - a^T(x) V_x = 0`
//!
//! over states sampled uniformly from the domain, optionally augmented with
//! boundary, terminal-state and periodicity penalties. Training starts
//! heavily discounted (`rho >> 1`), where the only finite solution is V ~ 0,
//! and multiplies `rho` by a decay factor whenever the stage trigger fires,
//! tracking that solution branch down to the far-sighted `rho_final`.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action_cost::ActionCost;
use crate::diffnet::DifferentialNetwork;
use crate::dynamics::ControlAffineSystem;
use crate::error::{Error, Result};
use crate::seeds::{self, Stream};
use crate::value::ValueFunction;

/// Curriculum, penalty and optimizer settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Initial (short-sighted) discounting, 1/s.
    pub rho_init: f64,
    /// Final (far-sighted) discounting, 1/s.
    pub rho_final: f64,
    /// Multiplicative decay applied to rho when the stage trigger fires.
    pub rho_decay: f64,
    /// Stage trigger: mean |residual| below `residual_trigger_scale` times
    /// the mean state cost over the domain.
    pub residual_trigger_scale: f64,
    /// Tighter trigger for the last stage at `rho_final`, where the fit is
    /// polished rather than merely tracked.
    pub final_residual_trigger_scale: f64,
    /// Epoch cap per curriculum stage.
    pub stage_epochs: usize,
    /// Epoch cap for the last stage at `rho_final`.
    pub final_stage_epochs: usize,
    /// Collocation states per step, resampled fresh every step.
    pub batch_size: usize,
    pub lambda_boundary: f64,
    pub lambda_terminal: f64,
    pub lambda_periodic: f64,
    /// Also penalize the Jacobian mismatch across periods, not just values.
    pub periodic_jacobian: bool,
    /// Boundary samples per step (used only when `lambda_boundary > 0`).
    pub boundary_batch: usize,
    /// States per step entering the periodicity penalty.
    pub periodic_batch: usize,
    pub learning_rate: f64,
    /// Learning-rate decay per curriculum stage, floored at `lr_min`.
    pub lr_stage_decay: f64,
    pub lr_min: f64,
    pub seed: u64,
    /// Abort when mean |residual| exceeds this or becomes non-finite.
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rho_init: 100.0,
            rho_final: 0.1,
            rho_decay: 0.8,
            residual_trigger_scale: 0.05,
            final_residual_trigger_scale: 1e-4,
            stage_epochs: 200,
            final_stage_epochs: 2000,
            batch_size: 1024,
            lambda_boundary: 0.0,
            lambda_terminal: 1.0,
            lambda_periodic: 1.0,
            periodic_jacobian: false,
            boundary_batch: 256,
            periodic_batch: 256,
            learning_rate: 1e-3,
            lr_stage_decay: 1.0,
            lr_min: 1e-4,
            seed: 0,
            divergence_threshold: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_init > self.rho_final && self.rho_final > 0.0) {
            return Err(Error::Config(format!(
                "need rho_init > rho_final > 0, got {} and {}",
                self.rho_init, self.rho_final
            )));
        }
        if !(self.rho_decay > 0.0 && self.rho_decay < 1.0) {
            return Err(Error::Config(format!(
                "rho decay must be in (0,1), got {}",
                self.rho_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.lambda_boundary < 0.0 || self.lambda_terminal < 0.0 || self.lambda_periodic < 0.0 {
            return Err(Error::Config("penalty weights must be nonnegative".into()));
        }
        if !(self.lr_stage_decay > 0.0 && self.lr_stage_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr stage decay must be in (0,1], got {}",
                self.lr_stage_decay
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// One training epoch as reported in the training CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub rho: f64,
    pub mean_abs_residual: f64,
    pub loss_boundary: f64,
    pub loss_terminal: f64,
    pub loss_periodic: f64,
    pub wall_s: f64,
}

/// Full training report; `rho` over records is non-increasing.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub final_rho: f64,
    pub converged: bool,
    /// Where the trained parameters were checkpointed, when they were.
    pub checkpoint: Option<String>,
}

impl TrainReport {
    pub fn csv_header() -> &'static str {
        "epoch,rho,mean_abs_residual,loss_b,loss_T,loss_p"
    }

    pub fn csv_line(rec: &EpochRecord) -> String {
        format!(
            "{},{},{},{},{},{}",
            rec.epoch,
            rec.rho,
            rec.mean_abs_residual,
            rec.loss_boundary,
            rec.loss_terminal,
            rec.loss_periodic
        )
    }
}

/// Residual of the conjugate-form HJB at `x` for an arbitrary value function.
pub fn hjb_residual<V: ValueFunction>(
    vf: &V,
    cost: &ActionCost,
    system: &ControlAffineSystem,
    rho: f64,
    x: &[f64],
) -> Result<f64> {
    let (value, grad) = vf.value_grad(x);
    residual_from_value(&value_parts(system, x), cost, rho, value, &grad, x)
        .map(|(res, _)| res)
}

struct SystemAt {
    drift: Vec<f64>,
    b: Vec<f64>,
    r: f64,
    n_u: usize,
}

fn value_parts(system: &ControlAffineSystem, x: &[f64]) -> SystemAt {
    let n_x = system.state_dim();
    let n_u = system.action_dim();
    let mut drift = vec![0.0; n_x];
    system.drift(x, &mut drift);
    let mut b = vec![0.0; n_x * n_u];
    system.input_map(x, &mut b);
    SystemAt { drift, b, r: system.state_cost(x), n_u }
}

/// Residual plus the conjugate argument `w = -B^T V_x`.
fn residual_from_value(
    sys: &SystemAt,
    cost: &ActionCost,
    rho: f64,
    value: f64,
    grad: &[f64],
    x: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let n_x = grad.len();
    let mut w = vec![0.0; sys.n_u];
    for j in 0..sys.n_u {
        let mut s = 0.0;
        for i in 0..n_x {
            s = sys.b[i * sys.n_u + j].mul_add(grad[i], s);
        }
        w[j] = -s;
    }
    let gstar = cost.conjugate(&w)?;
    let a_dot_grad: f64 = sys.drift.iter().zip(grad).map(|(a, g)| a * g).sum();
    let res = rho * value + gstar - sys.r - a_dot_grad;
    if !res.is_finite() {
        return Err(Error::TrainingFault {
            state: x.to_vec(),
            what: format!("non-finite HJB residual (V = {value}, g* = {gstar})"),
        });
    }
    Ok((res, w))
}

/// `d res / dV_x = -B u*(x) - a(x)`, the Jacobian adjoint of the residual.
fn residual_grad_adjoint(sys: &SystemAt, u_star: &[f64]) -> Vec<f64> {
    let n_x = sys.drift.len();
    let mut d_grad = vec![0.0; n_x];
    for i in 0..n_x {
        let mut s = 0.0;
        for (j, uj) in u_star.iter().enumerate() {
            s = sys.b[i * sys.n_u + j].mul_add(*uj, s);
        }
        d_grad[i] = -s - sys.drift[i];
    }
    d_grad
}

/// Mean squared positive part of the outward closed-loop velocity over
/// boundary samples; zero iff the learned policy never pushes outward there.
pub fn boundary_penalty<V: ValueFunction>(
    vf: &V,
    cost: &ActionCost,
    system: &ControlAffineSystem,
    boundary_states: &[Vec<f64>],
) -> Result<f64> {
    if boundary_states.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for xb in boundary_states {
        let (_, grad) = vf.value_grad(xb);
        let (speed, _) = boundary_outward_speed(system, cost, xb, &grad)?;
        let clipped = speed.max(0.0);
        total += clipped * clipped;
    }
    Ok(total / boundary_states.len() as f64)
}

struct BoundaryParts {
    w: Vec<f64>,
    b: Vec<f64>,
    eta: Vec<f64>,
}

/// Outward closed-loop speed `(a + B u*)^T eta` at a boundary point.
fn boundary_outward_speed(
    system: &ControlAffineSystem,
    cost: &ActionCost,
    xb: &[f64],
    grad: &[f64],
) -> Result<(f64, BoundaryParts)> {
    let n_x = system.state_dim();
    let n_u = system.action_dim();
    let eta = system.boundary_normal(xb)?;

    let mut drift = vec![0.0; n_x];
    system.drift(xb, &mut drift);
    let mut b = vec![0.0; n_x * n_u];
    system.input_map(xb, &mut b);

    let mut w = vec![0.0; n_u];
    for j in 0..n_u {
        let mut s = 0.0;
        for i in 0..n_x {
            s = b[i * n_u + j].mul_add(grad[i], s);
        }
        w[j] = -s;
    }
    let u_star = cost.policy(&w)?;

    let mut speed = 0.0;
    for i in 0..n_x {
        let mut f = drift[i];
        for (j, uj) in u_star.iter().enumerate() {
            f = b[i * n_u + j].mul_add(*uj, f);
        }
        speed += f * eta[i];
    }
    Ok((speed, BoundaryParts { w, b, eta }))
}

/// Squared error between V at the terminal states and the stationary
/// discounted target `r(x_T) / rho`.
pub fn terminal_penalty<V: ValueFunction>(
    vf: &V,
    system: &ControlAffineSystem,
    rho: f64,
) -> f64 {
    let terminals = system.terminal_states();
    if terminals.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for xt in terminals {
        let v = vf.value(xt);
        let target = system.state_cost(xt) / rho;
        total += (v - target) * (v - target);
    }
    total / terminals.len() as f64
}

/// Mean squared difference of V (and optionally V_x) between each state and
/// the state shifted by one period along every periodic dimension.
pub fn periodicity_penalty<V: ValueFunction>(
    vf: &V,
    system: &ControlAffineSystem,
    states: &[Vec<f64>],
    include_jacobian: bool,
) -> f64 {
    let periodic = system.periodic_dims();
    if periodic.is_empty() || states.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for x in states {
        for (dim, period) in periodic {
            let mut shifted = x.clone();
            shifted[*dim] += period;
            let (v0, g0) = vf.value_grad(x);
            let (v1, g1) = vf.value_grad(&shifted);
            let mut err = (v0 - v1) * (v0 - v1);
            if include_jacobian {
                err += g0
                    .iter()
                    .zip(&g1)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
            total += err;
            count += 1;
        }
    }
    total / count as f64
}

/// `n` i.i.d. uniform draws from the domain box, deterministic under `seed`.
pub fn sample_states(system: &ControlAffineSystem, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeds::rng(seed, Stream::TrainBatch);
    sample_states_with(system, n, &mut rng)
}

pub fn sample_states_with<R: Rng>(
    system: &ControlAffineSystem,
    n: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            system
                .domain()
                .iter()
                .map(|(lo, hi)| rng.random_range(*lo..*hi))
                .collect()
        })
        .collect()
}

/// Uniform samples on the domain boundary: pick a face, sample its interior.
pub fn sample_boundary_states(
    system: &ControlAffineSystem,
    n: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut rng = seeds::rng(seed, Stream::BoundaryBatch);
    sample_boundary_with(system, n, &mut rng)
}

fn sample_boundary_with<R: Rng>(
    system: &ControlAffineSystem,
    n: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let n_x = system.state_dim();
    (0..n)
        .map(|_| {
            let face_dim = rng.random_range(0..n_x);
            let upper = rng.random_range(0..2u32) == 1;
            let mut x: Vec<f64> = system
                .domain()
                .iter()
                .map(|(lo, hi)| rng.random_range(*lo..*hi))
                .collect();
            let (lo, hi) = system.domain()[face_dim];
            x[face_dim] = if upper { hi } else { lo };
            x
        })
        .collect()
}

/// Loss components of one step.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub mean_abs_residual: f64,
    pub boundary: f64,
    pub terminal: f64,
    pub periodic: f64,
}

impl LossParts {
    pub fn total(&self, cfg: &TrainConfig) -> f64 {
        self.mean_abs_residual
            + cfg.lambda_boundary * self.boundary
            + cfg.lambda_terminal * self.terminal
            + cfg.lambda_periodic * self.periodic
    }
}

/// Total loss and its exact parameter gradient on the given batches.
///
/// Residual terms accumulate over fixed-size chunks that are reduced in a
/// fixed order, so the result does not depend on the worker count.
pub fn loss_and_grad(
    net: &DifferentialNetwork,
    system: &ControlAffineSystem,
    cost: &ActionCost,
    rho: f64,
    cfg: &TrainConfig,
    batch: &[Vec<f64>],
    boundary_batch: &[Vec<f64>],
    periodic_batch: &[Vec<f64>],
) -> Result<(LossParts, Vec<f64>)> {
    let n_params = net.param_count();
    let n = batch.len();
    let inv_n = 1.0 / n as f64;

    let chunk_results: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_chunks(64)
        .map(|chunk| {
            let mut grad = vec![0.0; n_params];
            let mut abs_sum = 0.0;
            for x in chunk {
                let fwd = net.forward(x)?;
                let sys = value_parts(system, x);
                let (res, w) =
                    residual_from_value(&sys, cost, rho, fwd.value, &fwd.jacobian, x)?;
                abs_sum += res.abs();
                let u_star = cost.policy(&w)?;
                let d_grad = residual_grad_adjoint(&sys, &u_star);
                let s = res.signum() * inv_n;
                let dj: Vec<f64> = d_grad.iter().map(|g| s * g).collect();
                net.backward_into(&fwd, s * rho, &dj, &mut grad)?;
            }
            Ok((abs_sum, grad))
        })
        .collect();

    let mut grad = vec![0.0; n_params];
    let mut abs_sum = 0.0;
    for r in chunk_results {
        let (a, g) = r?;
        abs_sum += a;
        for (acc, gi) in grad.iter_mut().zip(&g) {
            *acc += gi;
        }
    }
    let mean_abs_residual = abs_sum * inv_n;

    // Terminal clamp.
    let mut terminal = 0.0;
    if cfg.lambda_terminal > 0.0 {
        let terminals = system.terminal_states();
        let inv_t = 1.0 / terminals.len().max(1) as f64;
        let zero = vec![0.0; net.input_dim()];
        for xt in terminals {
            let fwd = net.forward(xt)?;
            let target = system.state_cost(xt) / rho;
            let diff = fwd.value - target;
            terminal += diff * diff * inv_t;
            let dv = cfg.lambda_terminal * 2.0 * diff * inv_t;
            net.backward_into(&fwd, dv, &zero, &mut grad)?;
        }
    }

    // Periodicity penalty.
    let mut periodic = 0.0;
    let periodic_dims = system.periodic_dims();
    if cfg.lambda_periodic > 0.0 && !periodic_dims.is_empty() && !periodic_batch.is_empty() {
        let count = (periodic_batch.len() * periodic_dims.len()) as f64;
        let zero = vec![0.0; net.input_dim()];
        for x in periodic_batch {
            for (dim, period) in periodic_dims {
                let mut shifted = x.clone();
                shifted[*dim] += period;
                let f0 = net.forward(x)?;
                let f1 = net.forward(&shifted)?;
                let dv = f0.value - f1.value;
                periodic += dv * dv / count;
                let scale = cfg.lambda_periodic * 2.0 / count;
                if cfg.periodic_jacobian {
                    let dj: Vec<f64> = f0
                        .jacobian
                        .iter()
                        .zip(&f1.jacobian)
                        .map(|(a, b)| (a - b) * scale)
                        .collect();
                    let neg_dj: Vec<f64> = dj.iter().map(|v| -v).collect();
                    periodic += f0
                        .jacobian
                        .iter()
                        .zip(&f1.jacobian)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        / count;
                    net.backward_into(&f0, scale * dv, &dj, &mut grad)?;
                    net.backward_into(&f1, -scale * dv, &neg_dj, &mut grad)?;
                } else {
                    net.backward_into(&f0, scale * dv, &zero, &mut grad)?;
                    net.backward_into(&f1, -scale * dv, &zero, &mut grad)?;
                }
            }
        }
    }

    // Boundary penalty.
    let mut boundary = 0.0;
    if cfg.lambda_boundary > 0.0 && !boundary_batch.is_empty() {
        let n_x = system.state_dim();
        let n_u = system.action_dim();
        let inv_b = 1.0 / boundary_batch.len() as f64;
        for xb in boundary_batch {
            let fwd = net.forward(xb)?;
            let (speed, parts) = boundary_outward_speed(system, cost, xb, &fwd.jacobian)?;
            if speed <= 0.0 {
                continue;
            }
            boundary += speed * speed * inv_b;
            // d speed / dV_x = -B (policy'(w) . B^T eta)
            let deriv = cost.policy_deriv(&parts.w)?;
            let mut bt_eta = vec![0.0; n_u];
            for j in 0..n_u {
                let mut s = 0.0;
                for i in 0..n_x {
                    s = parts.b[i * n_u + j].mul_add(parts.eta[i], s);
                }
                bt_eta[j] = s * deriv[j];
            }
            let mut dj = vec![0.0; n_x];
            for i in 0..n_x {
                let mut s = 0.0;
                for j in 0..n_u {
                    s = parts.b[i * n_u + j].mul_add(bt_eta[j], s);
                }
                dj[i] = -s * cfg.lambda_boundary * 2.0 * speed * inv_b;
            }
            net.backward_into(&fwd, 0.0, &dj, &mut grad)?;
        }
    }

    Ok((
        LossParts { mean_abs_residual, boundary, terminal, periodic },
        grad,
    ))
}

/// Adam with bias correction.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Mean state cost over the domain, the scale for the stage trigger.
pub fn mean_state_cost(system: &ControlAffineSystem, seed: u64) -> f64 {
    let mut rng = seeds::rng(seed, Stream::MeanStateCost);
    let samples = sample_states_with(system, 4096, &mut rng);
    samples.iter().map(|x| system.state_cost(x)).sum::<f64>() / samples.len() as f64
}

/// Runs the curriculum: stochastic steps on the penalized residual loss,
/// decaying rho stage by stage down to `rho_final`. The per-epoch callback
/// receives every record as it is produced (the CLI streams it to CSV).
pub fn train<F: FnMut(&EpochRecord)>(
    net: &mut DifferentialNetwork,
    system: &ControlAffineSystem,
    cost: &ActionCost,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainReport> {
    cfg.validate()?;
    if cost.action_dim() != system.action_dim() {
        return Err(Error::Config(format!(
            "cost action dimension {} != system action dimension {}",
            cost.action_dim(),
            system.action_dim()
        )));
    }
    if net.input_dim() != system.state_dim() {
        return Err(Error::Config(format!(
            "network input {} != system state dimension {}",
            net.input_dim(),
            system.state_dim()
        )));
    }

    let start = Instant::now();
    let mean_r = mean_state_cost(system, cfg.seed);
    let threshold = cfg.residual_trigger_scale * mean_r;
    let final_threshold = cfg.final_residual_trigger_scale * mean_r;
    let mut batch_rng = seeds::rng(cfg.seed, Stream::TrainBatch);
    let mut boundary_rng = seeds::rng(cfg.seed, Stream::BoundaryBatch);
    let mut periodic_rng = seeds::rng(cfg.seed, Stream::PeriodicBatch);

    let mut report = TrainReport::default();
    let mut rho = cfg.rho_init;
    let mut lr = cfg.learning_rate;
    let mut epoch = 0usize;
    // A few epochs per stage before the trigger may fire, so one lucky batch
    // cannot skip a stage outright.
    let min_stage_epochs = 10usize.min(cfg.stage_epochs);

    loop {
        let last_stage = rho <= cfg.rho_final * (1.0 + 1e-12);
        let cap = if last_stage { cfg.final_stage_epochs } else { cfg.stage_epochs };
        let stage_threshold = if last_stage { final_threshold } else { threshold };
        let mut triggered = false;
        // Each stage is a fresh optimization problem along the continuation
        // path; carrying moment estimates across the gradient-scale jump at
        // a rho decay strangles the step size.
        let mut adam = Adam::new(net.param_count());

        for stage_epoch in 0..cap {
            // The final stage anneals the step size for a tighter fit: the
            // L1 residual gradient never vanishes, so the parameter noise
            // floor tracks the step size.
            let lr_eff = if last_stage {
                lr * 0.5f64.powi((8 * stage_epoch / cap.max(1)) as i32)
            } else {
                lr
            };
            let batch = sample_states_with(system, cfg.batch_size, &mut batch_rng);
            let boundary_batch = if cfg.lambda_boundary > 0.0 {
                sample_boundary_with(system, cfg.boundary_batch, &mut boundary_rng)
            } else {
                Vec::new()
            };
            let periodic_batch =
                if cfg.lambda_periodic > 0.0 && !system.periodic_dims().is_empty() {
                    sample_states_with(system, cfg.periodic_batch, &mut periodic_rng)
                } else {
                    Vec::new()
                };

            let (parts, grad) = loss_and_grad(
                net,
                system,
                cost,
                rho,
                cfg,
                &batch,
                &boundary_batch,
                &periodic_batch,
            )?;

            if !parts.mean_abs_residual.is_finite()
                || parts.mean_abs_residual > cfg.divergence_threshold
            {
                return Err(Error::TrainingDiverged {
                    epoch,
                    mean_abs_residual: parts.mean_abs_residual,
                });
            }

            adam.step(net.params_mut(), &grad, lr_eff);

            let record = EpochRecord {
                epoch,
                rho,
                mean_abs_residual: parts.mean_abs_residual,
                loss_boundary: parts.boundary,
                loss_terminal: parts.terminal,
                loss_periodic: parts.periodic,
                wall_s: start.elapsed().as_secs_f64(),
            };
            on_epoch(&record);
            report.records.push(record);
            epoch += 1;

            if parts.mean_abs_residual < stage_threshold && stage_epoch + 1 >= min_stage_epochs {
                triggered = true;
                break;
            }
        }

        if last_stage {
            report.converged = triggered;
            break;
        }
        rho = (rho * cfg.rho_decay).max(cfg.rho_final);
        lr = (lr * cfg.lr_stage_decay).max(cfg.lr_min);
    }

    report.final_rho = rho;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::analytic_theta_1d;
    use crate::value::Quadratic1d;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn lin_system() -> ControlAffineSystem {
        ControlAffineSystem::linear_1d()
    }

    /// Table-1 linear cost matching the appendix convention R = 1/2, i.e.
    /// R_table = 2 R_appendix = 1.
    fn lin_cost() -> ActionCost {
        ActionCost::linear(vec![1.0]).unwrap()
    }

    #[test]
    fn residual_vanishes_on_the_analytic_solution() {
        let system = lin_system();
        let cost = lin_cost();
        for rho in [0.0_f64, 0.1, 1.0, 10.0, 100.0, 1000.0] {
            let (theta, _) = analytic_theta_1d(1.0, 1.0, 0.5, 0.5, rho).unwrap();
            let vf = Quadratic1d { theta };
            for k in 0..101 {
                let x = -5.0 + 0.1 * k as f64;
                let res = hjb_residual(&vf, &cost, &system, rho, &[x]).unwrap();
                assert!(
                    res.abs() < 1e-9,
                    "residual {res} at x = {x}, rho = {rho}, theta = {theta}"
                );
            }
        }
    }

    #[test]
    fn residual_of_zero_value_function_is_minus_state_cost() {
        let system = lin_system();
        let cost = lin_cost();
        let vf = Quadratic1d { theta: 0.0 };
        let res = hjb_residual(&vf, &cost, &system, 3.0, &[0.0]).unwrap();
        assert_eq!(res, 0.0);
        let res = hjb_residual(&vf, &cost, &system, 3.0, &[2.0]).unwrap();
        assert_relative_eq!(res, -system.state_cost(&[2.0]), epsilon = 1e-14);
    }

    #[test]
    fn residual_zero_at_undiscounted_root() {
        // rho = 0: theta = (1 + sqrt 2)/2 for A = B = 1, Q = R = 1/2.
        let theta = 0.5 * (1.0 + 2.0_f64.sqrt());
        assert_relative_eq!(theta, 1.20710678, epsilon = 1e-7);
        let vf = Quadratic1d { theta };
        let res = hjb_residual(&vf, &lin_cost(), &lin_system(), 0.0, &[3.0]).unwrap();
        assert!(res.abs() < 1e-12, "{res}");
    }

    #[test]
    fn boundary_penalty_cases() {
        let system = lin_system();
        let cost = lin_cost();

        // V = 0 => u* = 0, flow at x = 5 is +5 outward, penalty 25.
        let zero = Quadratic1d { theta: 0.0 };
        let p = boundary_penalty(&zero, &cost, &system, &[vec![5.0]]).unwrap();
        assert_relative_eq!(p, 25.0, epsilon = 1e-12);

        // Strong feedback drags the boundary inward: penalty 0.
        let strong = Quadratic1d { theta: 2.0 };
        let p = boundary_penalty(&strong, &cost, &system, &[vec![5.0]]).unwrap();
        assert_eq!(p, 0.0);

        // Nonnegative for arbitrary thetas.
        let mut rng = crate::seeds::rng(1, Stream::Custom(3));
        for _ in 0..50 {
            let vf = Quadratic1d { theta: rng.random_range(-3.0..3.0) };
            let p = boundary_penalty(&vf, &cost, &system, &[vec![5.0], vec![-5.0]]).unwrap();
            assert!(p >= 0.0);
        }
    }

    #[test]
    fn terminal_penalty_cases() {
        let system = lin_system();
        // Zero value function hits the r(x_T)/rho = 0 target exactly.
        assert_eq!(terminal_penalty(&Quadratic1d { theta: 0.0 }, &system, 0.5), 0.0);
        assert_eq!(terminal_penalty(&Quadratic1d { theta: 7.0 }, &system, 0.5), 0.0);

        // V(x_T) = 2 against target 0 gives 4.
        struct Offset;
        impl ValueFunction for Offset {
            fn state_dim(&self) -> usize {
                1
            }
            fn value_grad(&self, _x: &[f64]) -> (f64, Vec<f64>) {
                (2.0, vec![0.0])
            }
        }
        assert_relative_eq!(terminal_penalty(&Offset, &system, 0.5), 4.0, epsilon = 1e-14);
    }

    #[test]
    fn periodicity_penalty_cases() {
        // No periodic dimensions: zero.
        let lin = lin_system();
        let vf = Quadratic1d { theta: 1.0 };
        assert_eq!(periodicity_penalty(&vf, &lin, &[vec![1.0]], false), 0.0);

        let pend = ControlAffineSystem::pendulum();

        // V = theta (the coordinate): difference over one period is 2 pi.
        struct Ramp;
        impl ValueFunction for Ramp {
            fn state_dim(&self) -> usize {
                2
            }
            fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
                (x[0], vec![1.0, 0.0])
            }
        }
        let p = periodicity_penalty(&Ramp, &pend, &[vec![0.3, 0.0]], false);
        let period = 2.0 * std::f64::consts::PI;
        assert_relative_eq!(p, period * period, epsilon = 1e-10);

        // A function of cos(theta) is exactly periodic.
        struct Periodic;
        impl ValueFunction for Periodic {
            fn state_dim(&self) -> usize {
                2
            }
            fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
                (x[0].cos() + x[1] * x[1], vec![-x[0].sin(), 2.0 * x[1]])
            }
        }
        let p = periodicity_penalty(&Periodic, &pend, &[vec![0.4, 1.0], vec![-2.0, 0.5]], true);
        assert!(p < 1e-24, "{p}");
    }

    #[test]
    fn sampling_is_deterministic_in_bounds_and_centered() {
        let system = ControlAffineSystem::pendulum();
        let a = sample_states(&system, 64, 9);
        let b = sample_states(&system, 64, 9);
        assert_eq!(a, b);
        let c = sample_states(&system, 64, 10);
        assert_ne!(a, c);

        let big = sample_states(&system, 10_000, 1);
        for x in &big {
            assert!(system.contains(x));
        }
        // Per-dimension empirical mean within 3 sigma of the box center.
        for dim in 0..2 {
            let (lo, hi) = system.domain()[dim];
            let mean = big.iter().map(|x| x[dim]).sum::<f64>() / big.len() as f64;
            let sigma = (hi - lo) / (12.0_f64).sqrt() / (big.len() as f64).sqrt();
            let center = 0.5 * (lo + hi);
            assert!(
                (mean - center).abs() < 3.0 * sigma,
                "dim {dim}: mean {mean} vs center {center} (sigma {sigma})"
            );
        }
    }

    #[test]
    fn boundary_samples_lie_on_faces() {
        let system = ControlAffineSystem::pendulum();
        let xs = sample_boundary_states(&system, 200, 4);
        for x in &xs {
            assert!(system.boundary_normal(x).is_ok(), "{x:?} not on boundary");
        }
    }

    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        use crate::diffnet::{Activation, DifferentialNetwork};

        let system = ControlAffineSystem::pendulum();
        let cost = ActionCost::atan_act_scaled(2.5, 1).unwrap();
        let mut net = DifferentialNetwork::init(&[2, 8, 1], Activation::Softplus, 3).unwrap();
        let cfg = TrainConfig {
            lambda_boundary: 0.5,
            lambda_terminal: 1.0,
            lambda_periodic: 0.7,
            periodic_jacobian: true,
            ..TrainConfig::default()
        };
        let rho = 2.0;
        let batch = sample_states(&system, 16, 5);
        let boundary = sample_boundary_states(&system, 8, 6);
        let periodic = sample_states(&system, 6, 7);

        let (_, grad) =
            loss_and_grad(&net, &system, &cost, rho, &cfg, &batch, &boundary, &periodic)
                .unwrap();

        let loss_of = |net: &DifferentialNetwork| {
            let (parts, _) =
                loss_and_grad(net, &system, &cost, rho, &cfg, &batch, &boundary, &periodic)
                    .unwrap();
            parts.total(&cfg)
        };

        let h = 1e-6;
        for i in 0..net.param_count() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let lp = loss_of(&net);
            net.params_mut()[i] = orig - h;
            let lm = loss_of(&net);
            net.params_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let scale = grad[i].abs().max(fd.abs()).max(1e-2);
            assert!(
                (grad[i] - fd).abs() / scale < 1e-4,
                "param {i}: analytic {} vs fd {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn config_validation() {
        let cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        let cfg = TrainConfig { rho_init: 0.05, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { rho_decay: 1.5, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { lambda_terminal: -1.0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn short_sighted_stage_pins_value_near_zero() {
        use crate::diffnet::{Activation, DifferentialNetwork};

        // One stage at rho ~ 1000: the unique finite solution is V ~ 0, so
        // max |V| over the domain must fall below theta_+(1000) * 25 + tol.
        let system = lin_system();
        let cost = lin_cost();
        let mut net = DifferentialNetwork::init(&[1, 16, 1], Activation::Softplus, 0).unwrap();
        let cfg = TrainConfig {
            rho_init: 1000.0,
            rho_final: 999.0,
            rho_decay: 0.999,
            stage_epochs: 300,
            final_stage_epochs: 300,
            batch_size: 256,
            ..TrainConfig::default()
        };
        let report = train(&mut net, &system, &cost, &cfg, |_| {}).unwrap();
        assert!(!report.records.is_empty());

        let (theta_plus, _) = analytic_theta_1d(1.0, 1.0, 0.5, 0.5, 1000.0).unwrap();
        let bound = theta_plus * 25.0 + 0.05;
        let max_v = (0..101)
            .map(|k| {
                use crate::value::ValueFunction;
                net.value(&[-5.0 + 0.1 * k as f64]).abs()
            })
            .fold(0.0_f64, f64::max);
        assert!(
            max_v < bound,
            "short-sighted V too large: {max_v} vs bound {bound} (theta_+ = {theta_plus})"
        );
    }

    #[test]
    fn rho_sequence_non_increasing_and_reaches_final() {
        use crate::diffnet::{Activation, DifferentialNetwork};

        let system = lin_system();
        let cost = lin_cost();
        let mut net = DifferentialNetwork::init(&[1, 8, 1], Activation::Softplus, 1).unwrap();
        let cfg = TrainConfig {
            rho_init: 10.0,
            rho_final: 1.0,
            rho_decay: 0.5,
            stage_epochs: 15,
            final_stage_epochs: 15,
            batch_size: 64,
            ..TrainConfig::default()
        };
        let report = train(&mut net, &system, &cost, &cfg, |_| {}).unwrap();
        for pair in report.records.windows(2) {
            assert!(pair[1].rho <= pair[0].rho + 1e-15);
        }
        assert_relative_eq!(report.final_rho, 1.0, epsilon = 1e-12);
        assert_relative_eq!(report.records.last().unwrap().rho, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn curriculum_beats_or_matches_naive_training() {
        use crate::diffnet::{Activation, DifferentialNetwork};
        use crate::value::ValueFunction;

        // Training at the final discounting from scratch may fall into the
        // spurious negative-definite branch; the curriculum must do at
        // least as well in verified error against the analytic solution.
        let system = lin_system();
        let cost = lin_cost();
        let rho_final = 0.5;
        let (theta_plus, _) = analytic_theta_1d(1.0, 1.0, 0.5, 0.5, rho_final).unwrap();
        let max_err = |net: &DifferentialNetwork| {
            (0..51)
                .map(|k| {
                    let x = -5.0 + 0.2 * k as f64;
                    (net.value(&[x]) - theta_plus * x * x).abs()
                })
                .fold(0.0_f64, f64::max)
        };

        let base = TrainConfig {
            rho_final,
            rho_decay: 0.7,
            stage_epochs: 80,
            final_stage_epochs: 600,
            batch_size: 256,
            seed: 12,
            ..TrainConfig::default()
        };

        let mut curriculum_net =
            DifferentialNetwork::init(&[1, 16, 1], Activation::Softplus, 12).unwrap();
        let cfg = TrainConfig { rho_init: 20.0, ..base.clone() };
        train(&mut curriculum_net, &system, &cost, &cfg, |_| {}).unwrap();

        let mut naive_net =
            DifferentialNetwork::init(&[1, 16, 1], Activation::Softplus, 12).unwrap();
        let cfg = TrainConfig { rho_init: rho_final * 1.0001, ..base };
        train(&mut naive_net, &system, &cost, &cfg, |_| {}).unwrap();

        let (curr, naive) = (max_err(&curriculum_net), max_err(&naive_net));
        assert!(
            curr <= naive + 1e-6,
            "curriculum err {curr} worse than naive err {naive}"
        );
    }

    #[test]
    fn divergent_training_aborts() {
        use crate::diffnet::{Activation, DifferentialNetwork};

        let system = lin_system();
        let cost = lin_cost();
        let mut net = DifferentialNetwork::init(&[1, 8, 1], Activation::Softplus, 1).unwrap();
        // An absurd learning rate blows the parameters up immediately.
        let cfg = TrainConfig {
            rho_init: 10.0,
            rho_final: 1.0,
            stage_epochs: 2000,
            batch_size: 32,
            learning_rate: 1e9,
            lr_min: 1e9,
            divergence_threshold: 1e6,
            ..TrainConfig::default()
        };
        match train(&mut net, &system, &cost, &cfg, |_| {}) {
            Err(Error::TrainingDiverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
