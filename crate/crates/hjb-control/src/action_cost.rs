//! Strictly convex action costs, their convex conjugates and conjugate
//! gradients.
//!
//! For a separable cost `c(x, u) = r(x) + g(u)` with strictly convex `g`, the
//! minimization inside the HJB collapses through the conjugate
//! `g*(w) = sup_u { u.w - g(u) }` and the optimal policy is
//! `u* = grad g*(-B^T V_x)`. Barrier-shaped costs (atan / tanh) diverge at the
//! actuator limits, so the policy saturates strictly inside them for every
//! finite argument. The catalog covers linear, logistic, atan, tanh, the
//! scale/shift combinators, and the bang-bang / bang-lin limit shapes.
//!
//! All catalog entries are separable per action component; `Linear` carries a
//! diagonal weight matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-component action interval. `open` intervals diverge at the ends
/// (barrier costs); closed ones admit their endpoints (bang shapes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub open: bool,
}

impl Interval {
    fn contains(&self, u: f64) -> bool {
        if self.open {
            u > self.lo && u < self.hi
        } else {
            u >= self.lo && u <= self.hi
        }
    }
}

#[derive(Debug, Clone)]
enum Kind {
    /// g(u) = 1/2 u^T R u with diagonal R > 0.
    Linear { r_diag: Vec<f64> },
    /// g(u) = u log u + (1-u) log(1-u) on (0, 1); policy is the sigmoid.
    Logistic,
    /// g(u) = -log cos u on (-pi/2, pi/2); policy is atan.
    Atan,
    /// g(u) = g_logistic((u+1)/2) - g_logistic(1/2) on (-1, 1); policy tanh.
    Tanh,
    /// Characteristic function of [-1, 1]; policy sign(w); conjugate |w|.
    BangBang,
    /// g(u) = 1/2 u^2 restricted to [-1, 1]; policy clamp; conjugate Huber.
    BangLin,
    /// g(u) = alpha g0(u / alpha).
    ActionScaled { alpha: f64, base: Box<Kind> },
    /// g(u) = beta g0(u).
    CostScaled { beta: f64, base: Box<Kind> },
    /// g(u) = g0(u + gamma) - g0(gamma).
    ActionShifted { gamma: f64, base: Box<Kind> },
}

impl Kind {
    fn cost_1(&self, i: usize, u: f64) -> f64 {
        match self {
            Kind::Linear { r_diag } => 0.5 * r_diag[i] * u * u,
            Kind::Logistic => xlogx(u) + xlogx(1.0 - u),
            Kind::Atan => -u.cos().ln(),
            Kind::Tanh => {
                let v = 0.5 * (u + 1.0);
                xlogx(v) + xlogx(1.0 - v) + std::f64::consts::LN_2
            }
            Kind::BangBang => 0.0,
            Kind::BangLin => 0.5 * u * u,
            Kind::ActionScaled { alpha, base } => alpha * base.cost_1(i, u / alpha),
            Kind::CostScaled { beta, base } => beta * base.cost_1(i, u),
            Kind::ActionShifted { gamma, base } => {
                base.cost_1(i, u + gamma) - base.cost_1(i, *gamma)
            }
        }
    }

    fn conjugate_1(&self, i: usize, w: f64) -> f64 {
        match self {
            Kind::Linear { r_diag } => 0.5 * w * w / r_diag[i],
            Kind::Logistic => log1pexp(w),
            Kind::Atan => {
                // 1/2 log(1 + w^2) rewritten to survive w^2 overflow.
                let half_log = if w.abs() > 1.0 {
                    w.abs().ln() + 0.5 * (1.0 / (w * w)).ln_1p()
                } else {
                    0.5 * (w * w).ln_1p()
                };
                w * w.atan() - half_log
            }
            Kind::Tanh => logcosh(w),
            Kind::BangBang => w.abs(),
            Kind::BangLin => {
                if w.abs() <= 1.0 {
                    0.5 * w * w
                } else {
                    w.abs() - 0.5
                }
            }
            Kind::ActionScaled { alpha, base } => alpha * base.conjugate_1(i, w),
            Kind::CostScaled { beta, base } => beta * base.conjugate_1(i, w / beta),
            // Exact conjugate of g0(u + gamma) - g0(gamma); the additive
            // g0(gamma) keeps the Fenchel-Young identity tight.
            Kind::ActionShifted { gamma, base } => {
                base.conjugate_1(i, w) - gamma * w + base.cost_1(i, *gamma)
            }
        }
    }

    fn policy_1(&self, i: usize, w: f64) -> f64 {
        match self {
            Kind::Linear { r_diag } => w / r_diag[i],
            Kind::Logistic => sigmoid(w),
            Kind::Atan => w.atan(),
            Kind::Tanh => w.tanh(),
            // sign(w) with the subdifferential midpoint at 0.
            Kind::BangBang => {
                if w > 0.0 {
                    1.0
                } else if w < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            // clamp(w, -1, 1) written as a relu composition.
            Kind::BangLin => -1.0 + relu(w + 1.0) - relu(w - 1.0),
            Kind::ActionScaled { alpha, base } => alpha * base.policy_1(i, w),
            Kind::CostScaled { beta, base } => base.policy_1(i, w / beta),
            Kind::ActionShifted { gamma, base } => base.policy_1(i, w) - gamma,
        }
    }

    /// d/dw of the policy (diagonal of the conjugate Hessian).
    fn policy_deriv_1(&self, i: usize, w: f64) -> f64 {
        match self {
            Kind::Linear { r_diag } => 1.0 / r_diag[i],
            Kind::Logistic => {
                let s = sigmoid(w);
                s * (1.0 - s)
            }
            Kind::Atan => 1.0 / w.mul_add(w, 1.0),
            Kind::Tanh => {
                let t = w.tanh();
                1.0 - t * t
            }
            Kind::BangBang => 0.0,
            Kind::BangLin => {
                if w.abs() < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Kind::ActionScaled { alpha, base } => alpha * base.policy_deriv_1(i, w),
            Kind::CostScaled { beta, base } => base.policy_deriv_1(i, w / beta) / beta,
            Kind::ActionShifted { base, .. } => base.policy_deriv_1(i, w),
        }
    }

    fn domain_1(&self, i: usize) -> Interval {
        match self {
            Kind::Linear { .. } => Interval {
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
                open: true,
            },
            Kind::Logistic => Interval { lo: 0.0, hi: 1.0, open: true },
            Kind::Atan => Interval {
                lo: -std::f64::consts::FRAC_PI_2,
                hi: std::f64::consts::FRAC_PI_2,
                open: true,
            },
            Kind::Tanh => Interval { lo: -1.0, hi: 1.0, open: true },
            Kind::BangBang | Kind::BangLin => Interval { lo: -1.0, hi: 1.0, open: false },
            Kind::ActionScaled { alpha, base } => {
                let d = base.domain_1(i);
                Interval { lo: alpha * d.lo, hi: alpha * d.hi, open: d.open }
            }
            Kind::CostScaled { base, .. } => base.domain_1(i),
            Kind::ActionShifted { gamma, base } => {
                let d = base.domain_1(i);
                Interval { lo: d.lo - gamma, hi: d.hi - gamma, open: d.open }
            }
        }
    }

    fn strictly_convex(&self) -> bool {
        match self {
            Kind::BangBang => false,
            Kind::ActionScaled { base, .. }
            | Kind::CostScaled { base, .. }
            | Kind::ActionShifted { base, .. } => base.strictly_convex(),
            _ => true,
        }
    }

    fn smooth(&self) -> bool {
        match self {
            Kind::BangBang | Kind::BangLin => false,
            Kind::ActionScaled { base, .. }
            | Kind::CostScaled { base, .. }
            | Kind::ActionShifted { base, .. } => base.smooth(),
            _ => true,
        }
    }
}

#[inline]
fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

#[inline]
fn sigmoid(w: f64) -> f64 {
    if w >= 0.0 {
        1.0 / (1.0 + (-w).exp())
    } else {
        let e = w.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^w) without overflow.
#[inline]
fn log1pexp(w: f64) -> f64 {
    w.max(0.0) + (-w.abs()).exp().ln_1p()
}

/// log cosh w = |w| + log(1 + e^{-2|w|}) - log 2 without overflow.
#[inline]
fn logcosh(w: f64) -> f64 {
    w.abs() + (-2.0 * w.abs()).exp().ln_1p() - std::f64::consts::LN_2
}

#[inline]
fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// A strictly convex action cost bundled with its conjugate and policy.
#[derive(Debug, Clone)]
pub struct ActionCost {
    id: String,
    n_u: usize,
    kind: Kind,
}

impl ActionCost {
    /// Quadratic cost `1/2 u^T R u` with diagonal `R`.
    pub fn linear(r_diag: Vec<f64>) -> Result<Self> {
        if r_diag.is_empty() || r_diag.iter().any(|r| *r <= 0.0 || !r.is_finite()) {
            return Err(Error::Config(format!(
                "linear cost needs positive diagonal R, got {r_diag:?}"
            )));
        }
        Ok(Self {
            id: "linear".into(),
            n_u: r_diag.len(),
            kind: Kind::Linear { r_diag },
        })
    }

    pub fn logistic(n_u: usize) -> Self {
        Self { id: "logistic".into(), n_u, kind: Kind::Logistic }
    }

    pub fn atan(n_u: usize) -> Self {
        Self { id: "atan".into(), n_u, kind: Kind::Atan }
    }

    pub fn tanh(n_u: usize) -> Self {
        Self { id: "tanh".into(), n_u, kind: Kind::Tanh }
    }

    pub fn bang_bang(n_u: usize) -> Self {
        Self { id: "bang-bang".into(), n_u, kind: Kind::BangBang }
    }

    pub fn bang_lin(n_u: usize) -> Self {
        Self { id: "bang-lin".into(), n_u, kind: Kind::BangLin }
    }

    /// Tanh barrier with limits (-alpha, alpha): policy `alpha tanh w`.
    pub fn tanh_act_scaled(alpha: f64, n_u: usize) -> Result<Self> {
        let mut c = Self::tanh(n_u).scale_action(alpha)?;
        c.id = "tanh-scaled".into();
        Ok(c)
    }

    /// Log-cosine barrier with limits (-alpha, alpha):
    /// `g(u) = (2 alpha / pi) (-log cos(pi u / (2 alpha)))`, policy
    /// `(2 alpha / pi) atan w`. This is the atan cost under the action-scale
    /// rule with factor `2 alpha / pi`, which is what keeps the action range
    /// at (-alpha, alpha).
    pub fn atan_act_scaled(alpha: f64, n_u: usize) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::Config(format!("barrier limit must be positive, got {alpha}")));
        }
        let factor = 2.0 * alpha / std::f64::consts::PI;
        let mut c = Self::atan(n_u).scale_action(factor)?;
        c.id = "atan-scaled".into();
        Ok(c)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn action_dim(&self) -> usize {
        self.n_u
    }

    /// Per-component action intervals.
    pub fn domain(&self) -> Vec<Interval> {
        (0..self.n_u).map(|i| self.kind.domain_1(i)).collect()
    }

    /// Upper limit of the (symmetric) action range, if bounded.
    pub fn action_limit(&self) -> Option<f64> {
        let d = self.kind.domain_1(0);
        d.hi.is_finite().then_some(d.hi)
    }

    pub fn is_strictly_convex(&self) -> bool {
        self.kind.strictly_convex()
    }

    /// Smooth entries support derivative-based identities everywhere; the
    /// bang shapes have kinks at their saturation points.
    pub fn is_smooth(&self) -> bool {
        self.kind.smooth()
    }

    /// `g(u)`. Errors when any component leaves the action domain.
    pub fn cost(&self, u: &[f64]) -> Result<f64> {
        self.check_dim(u.len())?;
        let mut total = 0.0;
        for (i, &ui) in u.iter().enumerate() {
            let dom = self.kind.domain_1(i);
            if !dom.contains(ui) {
                return Err(Error::ActionDomain(format!(
                    "u[{i}] = {ui} outside {}({}, {})",
                    if dom.open { "open " } else { "" },
                    dom.lo,
                    dom.hi
                )));
            }
            total += self.kind.cost_1(i, ui);
        }
        Ok(total)
    }

    /// `g*(w) = sup_u { u.w - g(u) }`.
    pub fn conjugate(&self, w: &[f64]) -> Result<f64> {
        self.check_finite(w)?;
        Ok(w.iter()
            .enumerate()
            .map(|(i, &wi)| self.kind.conjugate_1(i, wi))
            .sum())
    }

    /// `grad g*(w)` — the closed-form policy shape.
    ///
    /// For open (barrier) domains the mathematical policy is strictly
    /// interior at every finite `w`; when floating-point rounding saturates
    /// it onto the boundary (e.g. `tanh(40) == 1.0` in f64), the component is
    /// nudged to the nearest representable interior value so the limit
    /// guarantee stays exact.
    pub fn policy(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_finite(w)?;
        Ok(w.iter()
            .enumerate()
            .map(|(i, &wi)| {
                let mut u = self.kind.policy_1(i, wi);
                let dom = self.kind.domain_1(i);
                if dom.open {
                    if u >= dom.hi {
                        u = dom.hi.next_down();
                    } else if u <= dom.lo {
                        u = dom.lo.next_up();
                    }
                }
                u
            })
            .collect())
    }

    /// Componentwise derivative of the policy (conjugate Hessian diagonal).
    pub fn policy_deriv(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_finite(w)?;
        Ok(w.iter()
            .enumerate()
            .map(|(i, &wi)| self.kind.policy_deriv_1(i, wi))
            .collect())
    }

    /// Action-scale rule: `g(u) = alpha g0(u/alpha)`, domain and policy scale
    /// by `alpha`, conjugate scales by `alpha`.
    pub fn scale_action(&self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Config(format!("action scale must be positive, got {alpha}")));
        }
        Ok(Self {
            id: format!("action-scaled({alpha})*{}", self.id),
            n_u: self.n_u,
            kind: Kind::ActionScaled { alpha, base: Box::new(self.kind.clone()) },
        })
    }

    /// Cost-scale rule: `g(u) = beta g0(u)`, policy `grad g0*(w/beta)`,
    /// conjugate `beta g0*(w/beta)`.
    pub fn scale_cost(&self, beta: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::Config(format!("cost scale must be positive, got {beta}")));
        }
        Ok(Self {
            id: format!("cost-scaled({beta})*{}", self.id),
            n_u: self.n_u,
            kind: Kind::CostScaled { beta, base: Box::new(self.kind.clone()) },
        })
    }

    /// Action-shift rule: `g(u) = g0(u + gamma) - g0(gamma)`, policy
    /// `grad g0*(w) - gamma`. `gamma` must lie in the base domain so the
    /// normalization `g0(gamma)` is finite.
    pub fn shift_action(&self, gamma: f64) -> Result<Self> {
        if !gamma.is_finite() {
            return Err(Error::Config(format!("action shift must be finite, got {gamma}")));
        }
        for i in 0..self.n_u {
            if !self.kind.domain_1(i).contains(gamma) && gamma != 0.0 {
                return Err(Error::Config(format!(
                    "shift {gamma} leaves component {i} with an invalid domain"
                )));
            }
        }
        Ok(Self {
            id: format!("action-shifted({gamma})*{}", self.id),
            n_u: self.n_u,
            kind: Kind::ActionShifted { gamma, base: Box::new(self.kind.clone()) },
        })
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.n_u {
            return Err(Error::InvalidInput(format!(
                "action dimension {len} != cost dimension {}",
                self.n_u
            )));
        }
        Ok(())
    }

    fn check_finite(&self, w: &[f64]) -> Result<()> {
        self.check_dim(w.len())?;
        if let Some(bad) = w.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite conjugate argument {bad}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn catalog() -> Vec<ActionCost> {
        vec![
            ActionCost::linear(vec![1.0]).unwrap(),
            ActionCost::linear(vec![2.5]).unwrap(),
            ActionCost::logistic(1),
            ActionCost::atan(1),
            ActionCost::tanh(1),
            ActionCost::tanh_act_scaled(2.5, 1).unwrap(),
            ActionCost::atan_act_scaled(5.5, 1).unwrap(),
            ActionCost::bang_bang(1),
            ActionCost::bang_lin(1),
            ActionCost::tanh(1).scale_cost(0.3).unwrap(),
            ActionCost::logistic(1).shift_action(0.5).unwrap(),
            ActionCost::atan(1).scale_action(2.0).unwrap().scale_cost(2.0).unwrap(),
        ]
    }

    fn ws() -> Vec<f64> {
        vec![-6.0, -2.3, -1.0, -0.31, 0.0, 0.17, 0.5, 1.0, 2.9, 6.0]
    }

    #[test]
    fn table_values_linear() {
        let c = ActionCost::linear(vec![1.0]).unwrap();
        assert_relative_eq!(c.cost(&[2.0]).unwrap(), 2.0, epsilon = 1e-15);
        assert_relative_eq!(c.conjugate(&[3.0]).unwrap(), 4.5, epsilon = 1e-15);
        assert_relative_eq!(c.policy(&[3.0]).unwrap()[0], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn table_values_logistic() {
        let c = ActionCost::logistic(1);
        assert_relative_eq!(c.cost(&[0.5]).unwrap(), -std::f64::consts::LN_2, epsilon = 1e-12);
        assert_relative_eq!(c.conjugate(&[0.0]).unwrap(), std::f64::consts::LN_2, epsilon = 1e-12);
        assert_relative_eq!(c.policy(&[0.0]).unwrap()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn table_values_atan_and_tanh() {
        let atan = ActionCost::atan(1);
        assert_eq!(atan.cost(&[0.0]).unwrap(), 0.0);
        assert_eq!(atan.conjugate(&[0.0]).unwrap(), 0.0);

        let tanh = ActionCost::tanh(1);
        assert_eq!(tanh.policy(&[0.0]).unwrap()[0], 0.0);
        assert_eq!(tanh.conjugate(&[0.0]).unwrap(), 0.0);
        assert_relative_eq!(tanh.cost(&[0.0]).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn bang_bang_policy_signs() {
        let c = ActionCost::bang_bang(1);
        assert_eq!(c.policy(&[3.0]).unwrap()[0], 1.0);
        assert_eq!(c.policy(&[-0.2]).unwrap()[0], -1.0);
        assert_eq!(c.policy(&[0.0]).unwrap()[0], 0.0);
        assert_eq!(c.conjugate(&[-4.0]).unwrap(), 4.0);
    }

    #[test]
    fn bang_lin_clamp_and_huber() {
        let c = ActionCost::bang_lin(1);
        assert_relative_eq!(c.policy(&[0.3]).unwrap()[0], 0.3, epsilon = 1e-15);
        assert_eq!(c.policy(&[7.0]).unwrap()[0], 1.0);
        assert_eq!(c.policy(&[-7.0]).unwrap()[0], -1.0);
        // Huber with threshold 1 at w = 2.
        assert_relative_eq!(c.conjugate(&[2.0]).unwrap(), 1.5, epsilon = 1e-15);
        assert_relative_eq!(c.conjugate(&[0.5]).unwrap(), 0.125, epsilon = 1e-15);
    }

    #[test]
    fn barrier_policy_saturates_inside_limits() {
        let c = ActionCost::tanh_act_scaled(2.5, 1).unwrap();
        let almost = c.policy(&[40.0]).unwrap()[0];
        assert!(almost < 2.5 && almost > 2.4999);
        let c = ActionCost::atan_act_scaled(5.5, 1).unwrap();
        for w in [-1e8, -5.0, 5.0, 1e8] {
            let u = c.policy(&[w]).unwrap()[0];
            assert!(u.abs() < 5.5, "policy {u} escaped the limit at w = {w}");
        }
    }

    #[test]
    fn tanh_bridge_to_sigmoid() {
        for w in ws() {
            let lhs = w.tanh();
            let rhs = 2.0 * sigmoid(2.0 * w) - 1.0;
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn combinator_rules_match_table() {
        // Action-Scaled tanh: policy alpha tanh w, conjugate alpha logcosh w.
        let base = ActionCost::tanh(1);
        let scaled = base.scale_action(2.5).unwrap();
        for w in ws() {
            assert_relative_eq!(
                scaled.policy(&[w]).unwrap()[0],
                2.5 * w.tanh(),
                epsilon = 1e-12
            );
            assert_relative_eq!(
                scaled.conjugate(&[w]).unwrap(),
                2.5 * base.conjugate(&[w]).unwrap(),
                epsilon = 1e-12
            );
        }

        // Cost-Scaled linear R=1 by beta=2: policy w/2.
        let lin = ActionCost::linear(vec![1.0]).unwrap().scale_cost(2.0).unwrap();
        for w in ws() {
            assert_relative_eq!(lin.policy(&[w]).unwrap()[0], w / 2.0, epsilon = 1e-14);
        }

        // Identity shift leaves every evaluator unchanged.
        let base = ActionCost::atan(1);
        let shifted = base.shift_action(0.0).unwrap();
        for w in ws() {
            assert_eq!(shifted.policy(&[w]).unwrap(), base.policy(&[w]).unwrap());
            assert_eq!(shifted.conjugate(&[w]).unwrap(), base.conjugate(&[w]).unwrap());
            let u = 0.3;
            assert_eq!(shifted.cost(&[u]).unwrap(), base.cost(&[u]).unwrap());
        }

        // Action-Shifted policy: grad g*(w) - gamma.
        let shifted = ActionCost::logistic(1).shift_action(0.5).unwrap();
        for w in ws() {
            assert_relative_eq!(
                shifted.policy(&[w]).unwrap()[0],
                sigmoid(w) - 0.5,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn tanh_row_follows_from_logistic_and_combinators() {
        // Scale logistic actions by 2, scale cost by 1/2, shift by 1:
        // policy 2 sigma(2w) - 1 = tanh w, conjugate log cosh w.
        let derived = ActionCost::logistic(1)
            .scale_action(2.0)
            .unwrap()
            .scale_cost(0.5)
            .unwrap()
            .shift_action(1.0)
            .unwrap();
        let direct = ActionCost::tanh(1);
        for w in ws() {
            assert_relative_eq!(
                derived.policy(&[w]).unwrap()[0],
                direct.policy(&[w]).unwrap()[0],
                epsilon = 1e-12
            );
            assert_relative_eq!(
                derived.conjugate(&[w]).unwrap(),
                direct.conjugate(&[w]).unwrap(),
                epsilon = 1e-12
            );
        }
        for u in [-0.9, -0.4, 0.0, 0.55, 0.95] {
            assert_relative_eq!(
                derived.cost(&[u]).unwrap(),
                direct.cost(&[u]).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn fenchel_young_identity_at_the_optimizer() {
        for cost in catalog() {
            for w in ws() {
                let u = cost.policy(&[w]).unwrap();
                let g = match cost.cost(&u) {
                    Ok(g) => g,
                    Err(e) => panic!("policy of {} left its domain: {e}", cost.id()),
                };
                let lhs = g + cost.conjugate(&[w]).unwrap();
                let rhs = w * u[0];
                let tol = if cost.is_smooth() { 1e-8 } else { 1e-12 };
                assert!(
                    (lhs - rhs).abs() < tol,
                    "Fenchel-Young violated for {} at w={w}: {lhs} vs {rhs}",
                    cost.id()
                );
            }
        }
    }

    /// Dense grid + local refinement supremum of u*w - g(u); independent of
    /// the closed-form conjugate.
    fn grid_conjugate(cost: &ActionCost, w: f64) -> f64 {
        let dom = cost.domain()[0];
        let (lo, hi) = if dom.hi.is_finite() {
            let shrink = if dom.open { 1e-9 } else { 0.0 };
            let width = dom.hi - dom.lo;
            (dom.lo + shrink * width, dom.hi - shrink * width)
        } else {
            (-60.0, 60.0)
        };
        let n = 200_001;
        let mut best = f64::NEG_INFINITY;
        for k in 0..n {
            let u = lo + (hi - lo) * k as f64 / (n - 1) as f64;
            if let Ok(g) = cost.cost(&[u]) {
                best = best.max(u * w - g);
            }
        }
        best
    }

    #[test]
    fn conjugate_matches_grid_search_supremum() {
        for cost in catalog() {
            for w in [-4.0, -1.2, 0.0, 0.7, 3.3] {
                let oracle = grid_conjugate(&cost, w);
                let closed = cost.conjugate(&[w]).unwrap();
                assert!(
                    (closed - oracle).abs() < 1e-3,
                    "{}: conjugate {closed} vs grid {oracle} at w={w}",
                    cost.id()
                );
            }
        }
    }

    #[test]
    fn policy_inverts_the_cost_gradient() {
        // For smooth costs, grad g at u = policy(w) returns w (finite diff).
        // The step shrinks near barrier boundaries where g'' blows up.
        for cost in catalog().into_iter().filter(|c| c.is_smooth()) {
            for w in [-2.0, -0.3, 0.4, 1.7] {
                let u = cost.policy(&[w]).unwrap()[0];
                let dom = cost.domain()[0];
                let dist = (u - dom.lo).min(dom.hi - u);
                let h = (1e-6_f64).min(0.01 * dist);
                let gp = cost.cost(&[u + h]).unwrap();
                let gm = cost.cost(&[u - h]).unwrap();
                let grad = (gp - gm) / (2.0 * h);
                assert!(
                    (grad - w).abs() < 1e-5 * w.abs().max(1.0),
                    "{}: grad g({u}) = {grad}, expected {w}",
                    cost.id()
                );
            }
        }
    }

    #[test]
    fn strict_convexity_midpoint_test() {
        let mut rng = crate::seeds::rng(3, crate::seeds::Stream::Custom(1));
        for cost in catalog().into_iter().filter(|c| c.is_strictly_convex()) {
            let dom = cost.domain()[0];
            let (lo, hi) = if dom.hi.is_finite() {
                let width = dom.hi - dom.lo;
                (dom.lo + 1e-3 * width, dom.hi - 1e-3 * width)
            } else {
                (-5.0, 5.0)
            };
            for _ in 0..200 {
                let a = rng.random_range(lo..hi);
                let b = rng.random_range(lo..hi);
                if (a - b).abs() < 1e-6 {
                    continue;
                }
                let mid = cost.cost(&[(a + b) / 2.0]).unwrap();
                let avg = 0.5 * (cost.cost(&[a]).unwrap() + cost.cost(&[b]).unwrap());
                assert!(
                    mid < avg + 1e-14,
                    "{}: midpoint test failed between {a} and {b}",
                    cost.id()
                );
            }
        }
    }

    #[test]
    fn policies_are_monotone() {
        for cost in catalog() {
            let mut sorted = ws();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let us: Vec<f64> = sorted
                .iter()
                .map(|w| cost.policy(&[*w]).unwrap()[0])
                .collect();
            for pair in us.windows(2) {
                assert!(
                    pair[0] <= pair[1] + 1e-14,
                    "{}: policy not monotone ({} > {})",
                    cost.id(),
                    pair[0],
                    pair[1]
                );
            }
        }
    }

    #[test]
    fn policy_derivative_matches_finite_differences() {
        for cost in catalog().into_iter().filter(|c| c.is_smooth()) {
            for w in [-3.0, -0.5, 0.0, 0.8, 2.1] {
                let d = cost.policy_deriv(&[w]).unwrap()[0];
                let h = 1e-6;
                let fd = (cost.policy(&[w + h]).unwrap()[0] - cost.policy(&[w - h]).unwrap()[0])
                    / (2.0 * h);
                assert!((d - fd).abs() < 1e-6 * d.abs().max(1.0), "{}: {d} vs {fd}", cost.id());
            }
        }
    }

    #[test]
    fn domain_errors_and_stability() {
        let atan = ActionCost::atan(1);
        assert!(atan.cost(&[2.0]).is_err());
        assert!(atan.cost(&[std::f64::consts::FRAC_PI_2]).is_err());
        let logistic = ActionCost::logistic(1);
        assert!(logistic.cost(&[0.0]).is_err());
        assert!(logistic.cost(&[-0.1]).is_err());
        let bb = ActionCost::bang_bang(1);
        assert_eq!(bb.cost(&[1.0]).unwrap(), 0.0);
        assert!(bb.cost(&[1.0 + 1e-12]).is_err());

        // Overflow-safe conjugates at extreme arguments.
        let tanh = ActionCost::tanh(1);
        let big = tanh.conjugate(&[800.0]).unwrap();
        assert!(big.is_finite());
        assert_relative_eq!(big, 800.0 - std::f64::consts::LN_2, epsilon = 1e-9);
        let logi = ActionCost::logistic(1);
        assert_relative_eq!(logi.conjugate(&[900.0]).unwrap(), 900.0, epsilon = 1e-9);

        assert!(tanh.conjugate(&[f64::NAN]).is_err());
        assert!(ActionCost::linear(vec![0.0]).is_err());
        assert!(ActionCost::linear(vec![-1.0]).is_err());
        assert!(ActionCost::tanh(1).scale_action(0.0).is_err());
        assert!(ActionCost::tanh(1).scale_cost(-2.0).is_err());
        assert!(ActionCost::logistic(1).shift_action(1.5).is_err());
    }

    #[test]
    fn bang_limits_of_tanh_scaling() {
        // Cost-scaling tanh toward zero approaches the bang-bang policy.
        let nearly_bang = ActionCost::tanh(1).scale_cost(1e-3).unwrap();
        for w in [-2.0, -0.5, 0.5, 2.0] {
            let u = nearly_bang.policy(&[w]).unwrap()[0];
            assert!((u - w.signum()).abs() < 1e-3, "w={w}: {u}");
        }
    }
}
