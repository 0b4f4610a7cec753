//! Control-affine benchmark systems and the fixed-step integrator.
//!
//! Each system provides the drift `a(x)`, the input map `B(x)`, a
//! nonnegative state cost `r(x)` minimized at its terminal state, a box
//! domain with optional periodic dimensions, and outward normals on the box
//! boundary. Closed-loop simulation runs classical RK4 with zero-order-hold
//! actions at 500 Hz.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simulation rate used throughout the experiments.
pub const SIM_RATE_HZ: f64 = 500.0;
pub const SIM_DT: f64 = 1.0 / SIM_RATE_HZ;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear1dParams {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub x_max: f64,
    /// Action limit of the constrained (log-cosine) variant.
    pub action_limit: f64,
}

impl Default for Linear1dParams {
    fn default() -> Self {
        Self { a: 1.0, b: 1.0, q: 0.5, x_max: 5.0, action_limit: 5.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    /// Signed gravitational constant; the default -9.81 makes the upright
    /// position (theta = 0) the unstable equilibrium.
    pub gravity: f64,
    pub q0: f64,
    pub q1: f64,
    pub theta_dot_max: f64,
    pub action_limit: f64,
    /// Flips the sign of the gravity term in the drift.
    pub invert_drift_sign: bool,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: -9.81,
            q0: 1.0,
            q1: 0.1,
            theta_dot_max: 8.0,
            action_limit: 2.5,
            invert_drift_sign: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CartpoleParams {
    pub m_a: f64,
    pub m_p: f64,
    pub m_theta: f64,
    pub k_s: f64,
    pub l_theta: f64,
    pub b_a: f64,
    pub b_p: f64,
    pub b_theta: f64,
    pub gravity: f64,
    /// Mass in the input map; defaults to the actuated cart mass.
    pub m_c: Option<f64>,
    /// Keep the spring coupling entry exactly as `-2 K_s / m_a`; disabling
    /// substitutes `-K_s/m_a - K_s/m_p` instead.
    pub printed_spring_row: bool,
    pub q_diag: [f64; 6],
    pub domain_half_widths: [f64; 6],
}

impl Default for CartpoleParams {
    fn default() -> Self {
        Self {
            m_a: 0.57,
            m_p: 0.375,
            m_theta: 0.127,
            k_s: 200.0,
            l_theta: 0.1778,
            b_a: 0.5,
            b_p: 0.5,
            b_theta: 0.0024,
            gravity: 9.81,
            m_c: None,
            printed_spring_row: true,
            q_diag: [1.0, 1.0, 5.0, 0.1, 0.1, 0.1],
            domain_half_widths: [0.5, 0.05, 0.3, 1.0, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone)]
enum Model {
    Linear1d(Linear1dParams),
    Pendulum(PendulumParams),
    Cartpole { a: [[f64; 6]; 6], b: [f64; 6], q_diag: [f64; 6] },
}

/// A control-affine benchmark: `dx/dt = a(x) + B(x) u` on a box domain.
#[derive(Debug, Clone)]
pub struct ControlAffineSystem {
    name: String,
    n_x: usize,
    n_u: usize,
    model: Model,
    domain: Vec<(f64, f64)>,
    terminal_states: Vec<Vec<f64>>,
    /// `(dimension, period)` pairs for revolute coordinates.
    periodic: Vec<(usize, f64)>,
    action_limit: Option<f64>,
    /// Half-widths of the success box around a terminal state.
    success_tol: Vec<f64>,
}

impl ControlAffineSystem {
    /// One-dimensional integrator `dx = (A x + B u) dt`, `r = Q x^2`.
    pub fn linear_1d() -> Self {
        Self::linear_1d_with(Linear1dParams::default())
    }

    pub fn linear_1d_with(p: Linear1dParams) -> Self {
        Self {
            name: "linear_1d".into(),
            n_x: 1,
            n_u: 1,
            domain: vec![(-p.x_max, p.x_max)],
            terminal_states: vec![vec![0.0]],
            periodic: vec![],
            action_limit: Some(p.action_limit),
            success_tol: vec![0.1],
            model: Model::Linear1d(p),
        }
    }

    /// Torque-limited pendulum with theta = 0 upright, state [theta, theta_dot].
    pub fn pendulum() -> Self {
        Self::pendulum_with(PendulumParams::default())
    }

    pub fn pendulum_with(p: PendulumParams) -> Self {
        Self {
            name: "pendulum".into(),
            n_x: 2,
            n_u: 1,
            domain: vec![
                (-std::f64::consts::PI, std::f64::consts::PI),
                (-p.theta_dot_max, p.theta_dot_max),
            ],
            terminal_states: vec![vec![0.0, 0.0]],
            periodic: vec![(0, 2.0 * std::f64::consts::PI)],
            action_limit: Some(p.action_limit),
            success_tol: vec![0.1, 0.5],
            model: Model::Pendulum(p),
        }
    }

    /// Six-state linearized cartpole with a spring between the actuated and
    /// the pendulum cart.
    pub fn flexible_cartpole() -> Self {
        Self::flexible_cartpole_with(CartpoleParams::default())
    }

    pub fn flexible_cartpole_with(p: CartpoleParams) -> Self {
        let mut a = [[0.0; 6]; 6];
        a[0][3] = 1.0;
        a[1][4] = 1.0;
        a[2][5] = 1.0;

        a[3][1] = p.k_s / p.m_a;
        a[3][3] = -p.b_a / p.m_a;

        a[4][1] = if p.printed_spring_row {
            -p.k_s / p.m_a - p.k_s / p.m_a
        } else {
            -p.k_s / p.m_a - p.k_s / p.m_p
        };
        a[4][2] = p.m_theta * p.gravity / p.m_p;
        a[4][3] = p.b_a / p.m_a - p.b_p / p.m_p;
        a[4][4] = -p.b_p / p.m_p;
        a[4][5] = -p.b_p / (p.m_p * p.l_theta);

        a[5][1] = -p.k_s / (p.m_p * p.l_theta);
        a[5][2] = p.gravity * (p.m_p + p.m_theta) / (p.m_p * p.l_theta);
        a[5][3] = -p.b_p / (p.m_p * p.l_theta);
        a[5][4] = -p.b_p / (p.m_p * p.l_theta);
        a[5][5] = -p.b_theta * (p.m_p + p.m_theta) / (p.m_p * p.m_theta * p.l_theta * p.l_theta);

        let m_c = p.m_c.unwrap_or(p.m_a);
        let mut b = [0.0; 6];
        b[3] = 1.0 / m_c;
        b[4] = -1.0 / m_c;

        let d = p.domain_half_widths;
        Self {
            name: "flexible_cartpole".into(),
            n_x: 6,
            n_u: 1,
            domain: d.iter().map(|h| (-h, *h)).collect(),
            terminal_states: vec![vec![0.0; 6]],
            periodic: vec![],
            action_limit: None,
            success_tol: vec![0.05, 0.02, 0.05, 0.2, 0.2, 0.2],
            model: Model::Cartpole { a, b, q_diag: p.q_diag },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.n_x
    }

    pub fn action_dim(&self) -> usize {
        self.n_u
    }

    pub fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }

    pub fn terminal_states(&self) -> &[Vec<f64>] {
        &self.terminal_states
    }

    pub fn periodic_dims(&self) -> &[(usize, f64)] {
        &self.periodic
    }

    /// Torque limit of the barrier-cost variant, when the benchmark has one.
    pub fn action_limit(&self) -> Option<f64> {
        self.action_limit
    }

    pub fn success_tolerances(&self) -> &[f64] {
        &self.success_tol
    }

    /// Drift `a(x)`.
    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_x);
        match &self.model {
            Model::Linear1d(p) => out[0] = p.a * x[0],
            Model::Pendulum(p) => {
                let sign = if p.invert_drift_sign { 1.0 } else { -1.0 };
                out[0] = x[1];
                out[1] = sign * 3.0 * p.gravity / (2.0 * p.length) * x[0].sin();
            }
            Model::Cartpole { a, .. } => {
                for i in 0..6 {
                    let mut s = 0.0;
                    for j in 0..6 {
                        s = a[i][j].mul_add(x[j], s);
                    }
                    out[i] = s;
                }
            }
        }
    }

    /// Input map `B(x)`, row-major `n_x x n_u`.
    pub fn input_map(&self, _x: &[f64], out: &mut [f64]) {
        match &self.model {
            Model::Linear1d(p) => out[0] = p.b,
            Model::Pendulum(p) => {
                out[0] = 0.0;
                out[1] = 3.0 / (p.mass * p.length * p.length);
            }
            Model::Cartpole { b, .. } => out.copy_from_slice(b),
        }
    }

    /// Instantaneous state cost `r(x) >= 0`, zero at the terminal state.
    pub fn state_cost(&self, x: &[f64]) -> f64 {
        match &self.model {
            Model::Linear1d(p) => p.q * x[0] * x[0],
            Model::Pendulum(p) => {
                let s = (0.5 * x[0]).sin();
                p.q0 * std::f64::consts::PI.powi(2) * s * s + p.q1 * x[1] * x[1]
            }
            Model::Cartpole { q_diag, .. } => x
                .iter()
                .zip(q_diag)
                .map(|(xi, q)| q * xi * xi)
                .sum(),
        }
    }

    /// `dx/dt = a(x) + B(x) u`.
    pub fn state_derivative(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        self.drift(x, out);
        let mut b = vec![0.0; self.n_x * self.n_u];
        self.input_map(x, &mut b);
        for i in 0..self.n_x {
            for (j, uj) in u.iter().enumerate() {
                out[i] = b[i * self.n_u + j].mul_add(*uj, out[i]);
            }
        }
    }

    /// Linearization `(A, B)` of the dynamics at the terminal state,
    /// row-major; exact for the linear benchmarks.
    pub fn linearized_dynamics(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.model {
            Model::Linear1d(p) => (vec![p.a], vec![p.b]),
            Model::Pendulum(p) => {
                let sign = if p.invert_drift_sign { 1.0 } else { -1.0 };
                let g_term = sign * 3.0 * p.gravity / (2.0 * p.length);
                (
                    vec![0.0, 1.0, g_term, 0.0],
                    vec![0.0, 3.0 / (p.mass * p.length * p.length)],
                )
            }
            Model::Cartpole { a, b, .. } => {
                let mut a_flat = Vec::with_capacity(36);
                for row in a {
                    a_flat.extend_from_slice(row);
                }
                (a_flat, b.to_vec())
            }
        }
    }

    /// Diagonal Q of the quadratic expansion `r(x) ~ x^T Q x` around the
    /// terminal state; exact for the quadratic benchmarks.
    pub fn state_cost_quadratic_diag(&self) -> Vec<f64> {
        match &self.model {
            Model::Linear1d(p) => vec![p.q],
            // q0 pi^2 sin^2(theta/2) ~ (q0 pi^2 / 4) theta^2.
            Model::Pendulum(p) => {
                vec![p.q0 * std::f64::consts::PI.powi(2) / 4.0, p.q1]
            }
            Model::Cartpole { q_diag, .. } => q_diag.to_vec(),
        }
    }

    /// True when every coordinate lies inside the box (periodic dimensions
    /// always count as inside).
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(i, xi)| {
            self.is_periodic(i) || (self.domain[i].0 <= *xi && *xi <= self.domain[i].1)
        })
    }

    fn is_periodic(&self, dim: usize) -> bool {
        self.periodic.iter().any(|(d, _)| *d == dim)
    }

    /// Wraps periodic coordinates into their base interval.
    pub fn wrap_state(&self, x: &mut [f64]) {
        for (dim, period) in &self.periodic {
            let (lo, _) = self.domain[*dim];
            let v = (x[*dim] - lo).rem_euclid(*period) + lo;
            x[*dim] = v;
        }
    }

    /// Axis-aligned outward unit normal of the face(s) containing `x`.
    /// Corner points get the normalized sum of the active face normals.
    pub fn boundary_normal(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_x {
            return Err(Error::InvalidInput(format!(
                "state dimension {} != {}",
                x.len(),
                self.n_x
            )));
        }
        let mut normal = vec![0.0; self.n_x];
        let mut active = false;
        for (i, &(lo, hi)) in self.domain.iter().enumerate() {
            let tol = 1e-9 * (hi - lo).max(1.0);
            if (x[i] - hi).abs() <= tol {
                normal[i] += 1.0;
                active = true;
            } else if (x[i] - lo).abs() <= tol {
                normal[i] -= 1.0;
                active = true;
            }
        }
        if !active {
            return Err(Error::InvalidInput(format!(
                "state {x:?} is not on the domain boundary"
            )));
        }
        let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut normal {
            *v /= norm;
        }
        Ok(normal)
    }

    /// One classical RK4 step with the action held constant.
    pub fn step(&self, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
        if dt <= 0.0 {
            return Err(Error::InvalidInput(format!("step size must be positive, got {dt}")));
        }
        let n = self.n_x;
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut tmp = vec![0.0; n];

        self.state_derivative(x, u, &mut k1);
        for i in 0..n {
            tmp[i] = 0.5f64.mul_add(dt * k1[i], x[i]);
        }
        self.state_derivative(&tmp, u, &mut k2);
        for i in 0..n {
            tmp[i] = 0.5f64.mul_add(dt * k2[i], x[i]);
        }
        self.state_derivative(&tmp, u, &mut k3);
        for i in 0..n {
            tmp[i] = dt.mul_add(k3[i], x[i]);
        }
        self.state_derivative(&tmp, u, &mut k4);

        let mut next = vec![0.0; n];
        for i in 0..n {
            next[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if !next[i].is_finite() {
                return Err(Error::SimulationFault {
                    t: 0.0,
                    what: format!("non-finite state component {i} after step from {x:?}"),
                });
            }
        }
        Ok(next)
    }

    /// True when `x` is inside the success box of some terminal state
    /// (periodic dimensions compared modulo their period).
    pub fn is_success_state(&self, x: &[f64]) -> bool {
        self.terminal_states.iter().any(|xt| {
            x.iter().enumerate().all(|(i, xi)| {
                let mut d = (xi - xt[i]).abs();
                if let Some((_, period)) = self.periodic.iter().find(|(dim, _)| *dim == i) {
                    d = d.rem_euclid(*period);
                    d = d.min(period - d);
                }
                d <= self.success_tol[i]
            })
        })
    }
}

/// How a closed-loop rollout ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    ReachedHorizon,
    LeftDomain,
    Fault,
}

/// Time-stamped closed-loop rollout record.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    /// Sample times, `states.len() == times.len() == actions.len() + 1`.
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    /// Instantaneous cost c(x_k, u_k).
    pub inst_cost: Vec<f64>,
    /// Running discounted cost, nondecreasing.
    pub running_cost: Vec<f64>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn total_discounted_cost(&self) -> f64 {
        self.running_cost.last().copied().unwrap_or(0.0)
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least the initial state")
    }

    /// CSV with header `t,x0..,u0..,c,J` (the last row has empty action/cost
    /// fields: there is one more state than action).
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let n_x = self.states[0].len();
        let n_u = self.actions.first().map_or(0, |u| u.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..n_x).map(|i| format!("x{i}")));
        header.extend((0..n_u).map(|i| format!("u{i}")));
        header.push("c".into());
        header.push("J".into());
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.states.len() {
            let mut row = vec![format!("{}", self.times[k])];
            row.extend(self.states[k].iter().map(|v| format!("{v}")));
            if k < self.actions.len() {
                row.extend(self.actions[k].iter().map(|v| format!("{v}")));
                row.push(format!("{}", self.inst_cost[k]));
                row.push(format!("{}", self.running_cost[k]));
            } else {
                row.extend(std::iter::repeat_n(String::new(), n_u + 2));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_1d_matches_parameters() {
        let sys = ControlAffineSystem::linear_1d();
        let mut a = [0.0];
        sys.drift(&[0.0], &mut a);
        assert_eq!(a[0], 0.0);
        let mut b = [0.0];
        sys.input_map(&[0.0], &mut b);
        assert_eq!(b[0], 1.0);
        assert_relative_eq!(sys.state_cost(&[5.0]), 12.5, epsilon = 1e-15);
        assert_eq!(sys.action_limit(), Some(5.5));
        assert_eq!(sys.domain(), &[(-5.0, 5.0)]);
    }

    #[test]
    fn pendulum_drift_and_cost() {
        let sys = ControlAffineSystem::pendulum();
        let mut a = [0.0, 0.0];
        sys.drift(&[0.0, 0.0], &mut a);
        assert_eq!(a, [0.0, 0.0]);

        let mut b = [0.0, 0.0];
        sys.input_map(&[0.0, 0.0], &mut b);
        assert_eq!(b, [0.0, 3.0]);
        assert_eq!(sys.action_limit(), Some(2.5));

        // Gravity with g = -9.81 pulls the pendulum away from upright.
        sys.drift(&[0.5, 0.0], &mut a);
        assert!(a[1] > 0.0, "upright must be unstable, got {a:?}");

        // Hanging position has maximal position cost q0 pi^2.
        let r_down = sys.state_cost(&[std::f64::consts::PI, 0.0]);
        assert_relative_eq!(r_down, std::f64::consts::PI.powi(2), epsilon = 1e-12);
        assert_eq!(sys.state_cost(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn cartpole_matrix_entries() {
        let sys = ControlAffineSystem::flexible_cartpole();
        let Model::Cartpole { a, b, .. } = &sys.model else {
            panic!("expected cartpole model")
        };
        assert_eq!(a[0][3], 1.0);
        assert_eq!(a[1][4], 1.0);
        assert_eq!(a[2][5], 1.0);
        // Printed spring entry -2 K_s / m_a.
        assert_relative_eq!(a[4][1], -2.0 * 200.0 / 0.57, epsilon = 1e-12);
        assert_relative_eq!(b[3], 1.0 / 0.57, epsilon = 1e-12);
        assert_relative_eq!(b[4], -1.0 / 0.57, epsilon = 1e-12);
        assert!(b.iter().enumerate().all(|(i, v)| i == 3 || i == 4 || *v == 0.0));

        // Origin is an equilibrium of the linear drift.
        let mut d = [0.0; 6];
        sys.drift(&[0.0; 6], &mut d);
        assert!(d.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cartpole_drift_is_linear() {
        let sys = ControlAffineSystem::flexible_cartpole();
        let x1 = [0.1, -0.02, 0.05, 0.3, -0.2, 0.7];
        let x2 = [-0.4, 0.01, -0.2, 0.1, 0.5, -0.3];
        let sum: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + b).collect();
        let mut d1 = [0.0; 6];
        let mut d2 = [0.0; 6];
        let mut ds = [0.0; 6];
        sys.drift(&x1, &mut d1);
        sys.drift(&x2, &mut d2);
        sys.drift(&sum, &mut ds);
        for i in 0..6 {
            assert_relative_eq!(ds[i], d1[i] + d2[i], epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn rk4_equilibrium_and_exponential() {
        let sys = ControlAffineSystem::linear_1d();
        // u = -x makes dx/dt = 0.
        let next = sys.step(&[1.0], &[-1.0], 0.13).unwrap();
        assert_eq!(next[0], 1.0);

        // Free response follows e^{dt} to O(dt^5).
        let next = sys.step(&[1.0], &[0.0], 0.002).unwrap();
        assert!((next[0] - (0.002f64).exp()).abs() < 1e-9, "{}", next[0]);
    }

    #[test]
    fn rk4_order_at_least_four_and_a_half() {
        let sys = ControlAffineSystem::linear_1d();
        let one_step_err = |h: f64| -> f64 {
            let next = sys.step(&[1.0], &[0.0], h).unwrap();
            (next[0] - h.exp()).abs()
        };
        let hs = [0.2, 0.1, 0.05, 0.025];
        let mut orders = Vec::new();
        for pair in hs.windows(2) {
            let order = (one_step_err(pair[0]) / one_step_err(pair[1])).log2();
            orders.push(order);
        }
        let mean = orders.iter().sum::<f64>() / orders.len() as f64;
        assert!(mean >= 4.5, "measured RK4 order {mean} ({orders:?})");
    }

    #[test]
    fn pendulum_at_hanging_keeps_velocity() {
        let sys = ControlAffineSystem::pendulum();
        // sin(pi) = 0 up to float rounding, so theta_dot stays ~0.
        let next = sys.step(&[std::f64::consts::PI, 0.0], &[0.0], SIM_DT).unwrap();
        assert!(next[1].abs() < 1e-12, "{next:?}");
    }

    #[test]
    fn pendulum_energy_conservation_over_ten_seconds() {
        let sys = ControlAffineSystem::pendulum();
        let energy = |x: &[f64]| {
            // E = theta_dot^2 / 2 - (3 g / 2 l) cos(theta); conserved for u = 0.
            0.5 * x[1] * x[1] + 14.715 * x[0].cos()
        };
        let mut x = vec![2.0, 0.0];
        let e0 = energy(&x);
        for _ in 0..5000 {
            x = sys.step(&x, &[0.0], SIM_DT).unwrap();
        }
        let drift = (energy(&x) - e0).abs() / e0.abs();
        assert!(drift < 1e-3, "energy drift {drift}");
    }

    #[test]
    fn state_cost_nonnegative_and_minimal_at_terminal() {
        let systems = [
            ControlAffineSystem::linear_1d(),
            ControlAffineSystem::pendulum(),
            ControlAffineSystem::flexible_cartpole(),
        ];
        let mut rng = crate::seeds::rng(5, crate::seeds::Stream::Custom(2));
        use rand::Rng;
        for sys in &systems {
            let r_t = sys.state_cost(&sys.terminal_states()[0]);
            assert_eq!(r_t, 0.0, "{}", sys.name());
            for _ in 0..500 {
                let x: Vec<f64> = sys
                    .domain()
                    .iter()
                    .map(|(lo, hi)| rng.random_range(*lo..*hi))
                    .collect();
                assert!(sys.state_cost(&x) >= 0.0, "{}", sys.name());
            }
        }
    }

    #[test]
    fn boundary_normals() {
        let sys = ControlAffineSystem::linear_1d();
        assert_eq!(sys.boundary_normal(&[5.0]).unwrap(), vec![1.0]);
        assert_eq!(sys.boundary_normal(&[-5.0]).unwrap(), vec![-1.0]);
        assert!(sys.boundary_normal(&[0.3]).is_err());

        let sys = ControlAffineSystem::pendulum();
        assert_eq!(sys.boundary_normal(&[0.4, 8.0]).unwrap(), vec![0.0, 1.0]);

        // Corner: normalized sum of face normals.
        let n = sys.boundary_normal(&[std::f64::consts::PI, 8.0]).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(n[0], s, epsilon = 1e-12);
        assert_relative_eq!(n[1], s, epsilon = 1e-12);
    }

    #[test]
    fn wrap_and_success_checks() {
        let sys = ControlAffineSystem::pendulum();
        let mut x = vec![std::f64::consts::PI + 0.3, 0.0];
        sys.wrap_state(&mut x);
        assert_relative_eq!(x[0], -std::f64::consts::PI + 0.3, epsilon = 1e-12);

        assert!(sys.is_success_state(&[0.05, -0.2]));
        assert!(sys.is_success_state(&[2.0 * std::f64::consts::PI - 0.05, 0.2]));
        assert!(!sys.is_success_state(&[0.5, 0.0]));
        assert!(!sys.is_success_state(&[0.0, 1.0]));
    }

    #[test]
    fn trajectory_csv_layout() {
        let traj = Trajectory {
            dt: 0.5,
            times: vec![0.0, 0.5],
            states: vec![vec![1.0], vec![0.5]],
            actions: vec![vec![-1.0]],
            inst_cost: vec![0.25],
            running_cost: vec![0.125],
            termination: Termination::ReachedHorizon,
        };
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x0,u0,c,J");
        assert_eq!(lines.next().unwrap(), "0,1,-1,0.25,0.125");
        assert_eq!(lines.next().unwrap(), "0.5,0.5,,,");
    }
}
