//! Semi-Lagrangian value iteration on a dense state grid.
//!
//! Fixed point `V(x) = min_u [ c(x, u) dt + e^{-rho dt} V(x + f(x, u) dt) ]`
//! with multilinear interpolation at the flowed point, periodic wrapping on
//! revolute dimensions and clamping elsewhere. Sweeps are Jacobi-style
//! (double buffered) so cell updates parallelize deterministically; between
//! full minimization sweeps the scheme runs cheap frozen-policy sweeps
//! (modified policy iteration), which only accelerates the march to the same
//! fixed point. Convergence is certified by the max update of a full
//! minimization sweep.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::action_cost::ActionCost;
use crate::controller::Policy;
use crate::dynamics::ControlAffineSystem;
use crate::error::{Error, Result};

const GRID_MAGIC: &[u8; 8] = b"HJBVGRID";
const GRID_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub periodic: bool,
}

impl Axis {
    fn coord(&self, i: usize) -> f64 {
        if self.periodic {
            self.lo + (self.hi - self.lo) * i as f64 / self.n as f64
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64
        }
    }

    fn step(&self) -> f64 {
        if self.periodic {
            (self.hi - self.lo) / self.n as f64
        } else {
            (self.hi - self.lo) / (self.n - 1) as f64
        }
    }

    /// Base index and fraction for interpolation at `x`.
    fn locate(&self, x: f64) -> (usize, usize, f64) {
        if self.periodic {
            let t = (x - self.lo).rem_euclid(self.hi - self.lo) / self.step();
            let i0 = (t.floor() as usize).min(self.n - 1);
            let frac = t - i0 as f64;
            ((i0) % self.n, (i0 + 1) % self.n, frac)
        } else {
            let t = ((x - self.lo) / self.step()).clamp(0.0, (self.n - 1) as f64);
            let i0 = (t.floor() as usize).min(self.n - 2);
            let frac = (t - i0 as f64).clamp(0.0, 1.0);
            (i0, i0 + 1, frac)
        }
    }
}

/// Converged value table with its grid metadata.
#[derive(Debug, Clone)]
pub struct ValueGrid {
    pub axes: Vec<Axis>,
    /// Row-major over axes (first axis slowest).
    pub table: Vec<f64>,
    pub rho: f64,
    pub dt: f64,
    pub sweeps: usize,
    pub max_update: f64,
}

impl ValueGrid {
    pub fn cell_count(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    fn coords_of(&self, mut cell: usize) -> Vec<f64> {
        let mut idx = vec![0usize; self.axes.len()];
        for d in (0..self.axes.len()).rev() {
            idx[d] = cell % self.axes[d].n;
            cell /= self.axes[d].n;
        }
        idx.iter().zip(&self.axes).map(|(i, a)| a.coord(*i)).collect()
    }

    /// Multilinear interpolation with periodic wrap / boundary clamp.
    pub fn value_at(&self, x: &[f64]) -> f64 {
        let d = self.axes.len();
        debug_assert_eq!(x.len(), d);
        let mut locs = Vec::with_capacity(d);
        for (xi, axis) in x.iter().zip(&self.axes) {
            locs.push(axis.locate(*xi));
        }
        let mut value = 0.0;
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut flat = 0usize;
            for (dim, (i0, i1, frac)) in locs.iter().enumerate() {
                let hi_side = corner >> dim & 1 == 1;
                weight *= if hi_side { *frac } else { 1.0 - frac };
                flat = flat * self.axes[dim].n + if hi_side { *i1 } else { *i0 };
            }
            if weight != 0.0 {
                value += weight * self.table[flat];
            }
        }
        value
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(GRID_MAGIC);
        buf.extend_from_slice(&GRID_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.rho.to_le_bytes());
        buf.extend_from_slice(&self.dt.to_le_bytes());
        buf.extend_from_slice(&(self.axes.len() as u32).to_le_bytes());
        for a in &self.axes {
            buf.extend_from_slice(&(a.n as u32).to_le_bytes());
            buf.extend_from_slice(&a.lo.to_le_bytes());
            buf.extend_from_slice(&a.hi.to_le_bytes());
            buf.push(a.periodic as u8);
        }
        buf.extend_from_slice(&(self.table.len() as u64).to_le_bytes());
        for v in &self.table {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::Format("truncated value grid".into()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 8)? != GRID_MAGIC {
            return Err(Error::Format("not a value-grid file".into()));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != GRID_VERSION {
            return Err(Error::Format(format!("unsupported grid version {version}")));
        }
        let rho = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let dt = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let n_axes = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut axes = Vec::with_capacity(n_axes);
        for _ in 0..n_axes {
            let n = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let lo = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            let hi = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            let periodic = take(&mut pos, 1)?[0] != 0;
            axes.push(Axis { lo, hi, n, periodic });
        }
        let len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        if len != axes.iter().map(|a| a.n).product::<usize>() {
            return Err(Error::Format("grid table length mismatch".into()));
        }
        let mut table = Vec::with_capacity(len);
        for _ in 0..len {
            table.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        Ok(Self { axes, table, rho, dt, sweeps: 0, max_update: f64::NAN })
    }
}

#[derive(Debug, Clone)]
pub struct ValueIterationOptions {
    pub tolerance: f64,
    /// Cap on full minimization sweeps.
    pub max_sweeps: usize,
    /// Frozen-policy sweeps between full minimization sweeps.
    pub policy_sweeps: usize,
}

impl Default for ValueIterationOptions {
    fn default() -> Self {
        Self { tolerance: 1e-6, max_sweeps: 5000, policy_sweeps: 20 }
    }
}

/// Interpolation stencil of one flowed point: up to four corner gathers.
#[derive(Clone, Copy)]
struct Stencil {
    idx: [u32; 4],
    w: [f64; 4],
}

/// Dense-grid value iteration for systems with at most two state dimensions
/// and a scalar action.
pub fn value_iteration(
    system: &ControlAffineSystem,
    cost: &ActionCost,
    points_per_dim: &[usize],
    actions: &[f64],
    rho: f64,
    dt: f64,
    opts: ValueIterationOptions,
) -> Result<ValueGrid> {
    let d = system.state_dim();
    if d > 2 {
        return Err(Error::InvalidInput(format!(
            "dense grids support at most 2 state dimensions, got {d}"
        )));
    }
    if system.action_dim() != 1 {
        return Err(Error::InvalidInput("grid oracle expects a scalar action".into()));
    }
    if points_per_dim.len() != d || points_per_dim.iter().any(|n| *n < 2) {
        return Err(Error::InvalidInput(format!(
            "need {d} per-dimension point counts >= 2, got {points_per_dim:?}"
        )));
    }
    if actions.is_empty() {
        return Err(Error::InvalidInput("empty action grid".into()));
    }
    if dt <= 0.0 || rho < 0.0 {
        return Err(Error::InvalidInput("need dt > 0 and rho >= 0".into()));
    }

    let axes: Vec<Axis> = system
        .domain()
        .iter()
        .enumerate()
        .map(|(dim, (lo, hi))| Axis {
            lo: *lo,
            hi: *hi,
            n: points_per_dim[dim],
            periodic: system.periodic_dims().iter().any(|(p, _)| *p == dim),
        })
        .collect();
    let n_cells: usize = axes.iter().map(|a| a.n).product();
    let gamma = (-rho * dt).exp();

    let grid_shell = ValueGrid {
        axes: axes.clone(),
        table: vec![0.0; n_cells],
        rho,
        dt,
        sweeps: 0,
        max_update: f64::NAN,
    };

    // Per-action running cost g(u) dt; errors surface config problems early.
    let mut g_dt = Vec::with_capacity(actions.len());
    for u in actions {
        g_dt.push(cost.cost(&[*u])? * dt);
    }

    // Per-cell state cost and per-(cell, action) flow stencils.
    let cells: Vec<Vec<f64>> = (0..n_cells).map(|c| grid_shell.coords_of(c)).collect();
    let r_dt: Vec<f64> = cells.iter().map(|x| system.state_cost(x) * dt).collect();

    let locate_stencil = |x: &[f64]| -> Stencil {
        match d {
            1 => {
                let (i0, i1, f) = axes[0].locate(x[0]);
                Stencil {
                    idx: [i0 as u32, i1 as u32, 0, 0],
                    w: [1.0 - f, f, 0.0, 0.0],
                }
            }
            _ => {
                let (i0, i1, f0) = axes[0].locate(x[0]);
                let (j0, j1, f1) = axes[1].locate(x[1]);
                let n1 = axes[1].n as u32;
                Stencil {
                    idx: [
                        i0 as u32 * n1 + j0 as u32,
                        i0 as u32 * n1 + j1 as u32,
                        i1 as u32 * n1 + j0 as u32,
                        i1 as u32 * n1 + j1 as u32,
                    ],
                    w: [
                        (1.0 - f0) * (1.0 - f1),
                        (1.0 - f0) * f1,
                        f0 * (1.0 - f1),
                        f0 * f1,
                    ],
                }
            }
        }
    };

    let n_actions = actions.len();
    let stencils: Vec<Stencil> = (0..n_cells)
        .into_par_iter()
        .flat_map_iter(|c| {
            let x = &cells[c];
            let mut out = vec![0.0; d];
            (0..n_actions)
                .map(|ai| {
                    system.state_derivative(x, &actions[ai..ai + 1], &mut out);
                    let next: Vec<f64> =
                        x.iter().zip(&out).map(|(xi, fi)| xi + fi * dt).collect();
                    locate_stencil(&next)
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let interp = |table: &[f64], s: &Stencil| -> f64 {
        s.w[0] * table[s.idx[0] as usize]
            + s.w[1] * table[s.idx[1] as usize]
            + s.w[2] * table[s.idx[2] as usize]
            + s.w[3] * table[s.idx[3] as usize]
    };

    let mut v = vec![0.0; n_cells];
    let mut v_next = vec![0.0; n_cells];
    let mut best_action = vec![0u32; n_cells];
    let mut sweeps = 0usize;
    let mut max_update = f64::INFINITY;

    for full_sweep in 0..opts.max_sweeps {
        // Full minimization sweep (Jacobi, double buffered).
        let updates: Vec<(f64, u32)> = (0..n_cells)
            .into_par_iter()
            .map(|c| {
                let base = c * n_actions;
                let mut best = f64::INFINITY;
                let mut best_a = 0u32;
                for ai in 0..n_actions {
                    let q = r_dt[c] + g_dt[ai] + gamma * interp(&v, &stencils[base + ai]);
                    if q < best {
                        best = q;
                        best_a = ai as u32;
                    }
                }
                (best, best_a)
            })
            .collect();
        max_update = 0.0;
        for (c, (val, ba)) in updates.into_iter().enumerate() {
            max_update = max_update.max((val - v[c]).abs());
            v_next[c] = val;
            best_action[c] = ba;
        }
        std::mem::swap(&mut v, &mut v_next);
        sweeps += 1;

        if max_update < opts.tolerance {
            let _ = full_sweep;
            break;
        }

        // Frozen-policy acceleration sweeps.
        for _ in 0..opts.policy_sweeps {
            let updates: Vec<f64> = (0..n_cells)
                .into_par_iter()
                .map(|c| {
                    let ai = best_action[c] as usize;
                    r_dt[c] + g_dt[ai] + gamma * interp(&v, &stencils[c * n_actions + ai])
                })
                .collect();
            v_next.copy_from_slice(&updates);
            std::mem::swap(&mut v, &mut v_next);
            sweeps += 1;
        }
    }

    if max_update >= opts.tolerance {
        return Err(Error::Convergence {
            what: format!("value iteration did not reach tolerance in {sweeps} sweeps"),
            residual: max_update,
        });
    }

    Ok(ValueGrid { axes, table: v, rho, dt, sweeps, max_update })
}

/// Greedy one-step-lookahead policy on a converged value grid.
pub struct GridPolicy {
    grid: ValueGrid,
    system: ControlAffineSystem,
    actions: Vec<f64>,
    g_dt: Vec<f64>,
    gamma: f64,
}

impl GridPolicy {
    pub fn new(grid: ValueGrid, system: ControlAffineSystem, cost: &ActionCost, actions: Vec<f64>) -> Result<Self> {
        let mut g_dt = Vec::with_capacity(actions.len());
        for u in &actions {
            g_dt.push(cost.cost(&[*u])? * grid.dt);
        }
        let gamma = (-grid.rho * grid.dt).exp();
        Ok(Self { grid, system, actions, g_dt, gamma })
    }

    pub fn grid(&self) -> &ValueGrid {
        &self.grid
    }
}

impl Policy for GridPolicy {
    fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn act(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.system.state_dim();
        if x.len() != d {
            return Err(Error::InvalidInput(format!("state dimension {} != {d}", x.len())));
        }
        let mut x = x.to_vec();
        self.system.wrap_state(&mut x);
        let x = &x[..];
        let dt = self.grid.dt;
        let mut deriv = vec![0.0; d];
        let mut best = f64::INFINITY;
        let mut best_u = self.actions[0];
        for (ai, u) in self.actions.iter().enumerate() {
            self.system.state_derivative(x, &[*u], &mut deriv);
            let next: Vec<f64> = x.iter().zip(&deriv).map(|(xi, fi)| xi + fi * dt).collect();
            let q = self.g_dt[ai] + self.gamma * self.grid.value_at(&next);
            if q < best {
                best = q;
                best_u = *u;
            }
        }
        Ok(vec![best_u])
    }
}

/// Uniform action grid, inset from the limits by `inset` times the range so
/// barrier costs stay finite on it.
pub fn uniform_action_grid(limit: f64, n: usize, inset: f64) -> Vec<f64> {
    let hi = limit * (1.0 - inset);
    (0..n)
        .map(|k| -hi + 2.0 * hi * k as f64 / (n - 1) as f64)
        .collect()
}
