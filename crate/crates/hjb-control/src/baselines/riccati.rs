//! Discount-adjusted continuous algebraic Riccati equation via
//! Newton-Kleinman iteration.
//!
//! For the discounted objective `int e^{-rho t} (x^T Q x + u^T R u) dt` the
//! quadratic value `V = x^T P x` solves the standard CARE on the shifted
//! drift `A_rho = A - rho/2 I`:
//!
//! `A_rho^T P + P A_rho - P B R^{-1} B^T P + Q = 0`,   `K = R^{-1} B^T P`.
//!
//! Each Newton step solves a Lyapunov equation by the direct vectorized
//! linear system; state dimension here is at most 6, which keeps that cheap.
//! The initial stabilizing gain comes from Bass' eigenvalue-shift method.

use nalgebra::DMatrix;

use crate::controller::LqrPolicy;
use crate::error::{Error, Result};

/// Both roots of the 1D quadratic-value equation
/// `R^{-1} B^2 theta^2 + (rho - 2A) theta - Q = 0`, i.e.
/// `theta = 1/2 B^{-2} ((2A - rho) R +- sqrt((2A - rho)^2 R^2 + 4 R Q B^2))`.
pub fn analytic_theta_1d(a: f64, b: f64, q: f64, r: f64, rho: f64) -> Result<(f64, f64)> {
    if b == 0.0 {
        return Err(Error::Infeasible("B = 0: the input does not reach the state".into()));
    }
    let m = (2.0 * a - rho) * r;
    let disc = (m * m + 4.0 * r * q * b * b).sqrt();
    let scale = 0.5 / (b * b);
    Ok((scale * (m + disc), scale * (m - disc)))
}

/// Solution of the discount-adjusted CARE.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    /// Value matrix, `V(x) = x^T P x`.
    pub p: DMatrix<f64>,
    /// Gain, `u = -K x`.
    pub k: DMatrix<f64>,
    /// Max-abs residual of the Riccati equation.
    pub residual: f64,
    pub rho: f64,
}

fn max_real_eig(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Solves `M^T P + P M = -C` by the vectorized direct linear system.
fn solve_lyapunov(m: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let mt = m.transpose();
    // vec(M^T P) = (I (x) M^T) vec(P), vec(P M) = (M^T (x) I) vec(P).
    let lhs = eye.kronecker(&mt) + mt.kronecker(&eye);
    let rhs = DMatrix::from_column_slice(n * n, 1, c.as_slice()).scale(-1.0);
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Convergence {
            what: "singular Lyapunov operator".into(),
            residual: f64::NAN,
        })?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok(0.5 * (&p + p.transpose()))
}

/// Bass' method: for `beta` beyond the largest real eigenvalue part, the
/// solution X of `(A + beta I) X + X (A + beta I)^T = 2 B B^T` yields the
/// stabilizing gain `K = B^T X^{-1}`.
fn stabilizing_gain(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let base = max_real_eig(a).max(0.0) + 0.5 * a.norm() / (n as f64).sqrt() + 1.0;
    for attempt in 0..6 {
        let beta = base * (1 << attempt) as f64;
        let shifted = a + DMatrix::<f64>::identity(n, n).scale(beta);
        // (A + beta I) X + X (A + beta I)^T = 2 B B^T is the transposed
        // Lyapunov form with M = (A + beta I)^T.
        let rhs = -2.0 * b * b.transpose();
        let x = match solve_lyapunov(&shifted.transpose(), &rhs) {
            Ok(x) => x,
            Err(_) => continue,
        };
        let Some(x_inv) = x.clone().try_inverse() else { continue };
        let k = b.transpose() * x_inv;
        if max_real_eig(&(a - b * &k)) < -1e-9 {
            return Ok(k);
        }
    }
    Err(Error::Infeasible(
        "no stabilizing initial gain found (is (A - rho/2 I, B) stabilizable?)".into(),
    ))
}

/// Solves the discount-adjusted CARE for cost `x^T Q x + u^T R u`.
pub fn care_solve(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    rho: f64,
) -> Result<RiccatiSolution> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::InvalidInput("A must be square".into()));
    }
    if b.nrows() != n {
        return Err(Error::InvalidInput(format!("B must have {n} rows")));
    }
    let m = b.ncols();
    if q.shape() != (n, n) {
        return Err(Error::InvalidInput(format!("Q must be {n} x {n}")));
    }
    if r.shape() != (m, m) {
        return Err(Error::InvalidInput(format!("R must be {m} x {m}")));
    }
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("R must be invertible".into()))?;
    if max_real_eig(&(-r.clone())) >= 0.0 {
        return Err(Error::InvalidInput("R must be positive definite".into()));
    }

    let a_rho = a - DMatrix::<f64>::identity(n, n).scale(rho / 2.0);
    let mut k = if max_real_eig(&a_rho) < -1e-9 {
        DMatrix::<f64>::zeros(m, n)
    } else {
        stabilizing_gain(&a_rho, b)?
    };

    let mut p = DMatrix::<f64>::zeros(n, n);
    let mut converged = false;
    for iter in 0..60 {
        let a_cl = &a_rho - b * &k;
        let c = q + k.transpose() * r * &k;
        let p_next = solve_lyapunov(&a_cl, &c)?;
        k = &r_inv * b.transpose() * &p_next;
        let delta = (&p_next - &p).norm() / p_next.norm().max(1.0);
        p = p_next;
        if iter > 0 && delta < 1e-13 {
            converged = true;
            break;
        }
    }

    let residual_matrix =
        a_rho.transpose() * &p + &p * &a_rho - &p * b * &r_inv * b.transpose() * &p + q;
    let residual = residual_matrix.amax();
    if !converged || residual > 1e-8 * p.amax().max(1.0) {
        return Err(Error::Convergence {
            what: "Newton-Kleinman stagnated".into(),
            residual,
        });
    }
    if max_real_eig(&(&a_rho - b * &k)) >= 0.0 {
        return Err(Error::Convergence {
            what: "Riccati closed loop not (discounted-)stable".into(),
            residual,
        });
    }
    Ok(RiccatiSolution { p, k, residual, rho })
}

/// Packages the gain as a feedback policy, optionally clamped.
pub fn lqr_policy(sol: &RiccatiSolution, clip: Option<f64>) -> LqrPolicy {
    LqrPolicy {
        k: sol.k.transpose().as_slice().to_vec(),
        n_x: sol.k.ncols(),
        n_u: sol.k.nrows(),
        clip,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::Policy;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn analytic_roots_reference_values() {
        let (tp, tm) = analytic_theta_1d(1.0, 1.0, 0.5, 0.5, 0.0).unwrap();
        assert_relative_eq!(tp, 1.207107, epsilon = 1e-6);
        assert_relative_eq!(tm, -0.207107, epsilon = 1e-6);
    }

    #[test]
    fn analytic_roots_satisfy_quadratic() {
        let mut rng = crate::seeds::rng(2, crate::seeds::Stream::Custom(4));
        for _ in 0..200 {
            let a = rng.random_range(-2.0..2.0);
            let b = rng.random_range(0.2..3.0);
            let q = rng.random_range(0.0..4.0);
            let r = rng.random_range(0.1..3.0);
            let rho = rng.random_range(0.0..50.0);
            let (tp, tm) = analytic_theta_1d(a, b, q, r, rho).unwrap();
            for theta in [tp, tm] {
                let poly = b * b / r * theta * theta + (rho - 2.0 * a) * theta - q;
                // Tolerance scales with the polynomial's term magnitudes.
                let scale = (b * b / r * theta * theta)
                    .abs()
                    .max(((rho - 2.0 * a) * theta).abs())
                    .max(q)
                    .max(1.0);
                assert!(poly.abs() < 1e-12 * scale, "{poly} (scale {scale})");
            }
        }
    }

    #[test]
    fn analytic_roots_limits() {
        // Large rho: positive root collapses to 0+, negative root diverges.
        let (tp3, tm3) = analytic_theta_1d(1.0, 1.0, 0.5, 0.5, 1000.0).unwrap();
        assert!(tp3 > 0.0 && tp3 < 1e-3, "{tp3}");
        let (_, tm_small) = analytic_theta_1d(1.0, 1.0, 0.5, 0.5, 10.0).unwrap();
        assert!(tm3 < tm_small && tm3 < -400.0, "{tm3} vs {tm_small}");

        // Q = 0 and rho > 2A: the short-sighted branch is exactly zero.
        let (tp, _) = analytic_theta_1d(1.0, 1.0, 0.0, 0.5, 5.0).unwrap();
        assert_eq!(tp, 0.0);

        assert!(analytic_theta_1d(1.0, 0.0, 0.5, 0.5, 0.0).is_err());
    }

    #[test]
    fn care_matches_analytic_in_1d() {
        let mut rng = crate::seeds::rng(7, crate::seeds::Stream::Custom(5));
        for _ in 0..60 {
            let a = rng.random_range(-2.0..2.0);
            let b = rng.random_range(0.3..2.5);
            let q = rng.random_range(0.05..4.0);
            let r = rng.random_range(0.1..3.0);
            let rho = rng.random_range(0.0..5.0);
            let sol = care_solve(
                &DMatrix::from_element(1, 1, a),
                &DMatrix::from_element(1, 1, b),
                &DMatrix::from_element(1, 1, q),
                &DMatrix::from_element(1, 1, r),
                rho,
            )
            .unwrap();
            let (tp, _) = analytic_theta_1d(a, b, q, r, rho).unwrap();
            assert!(
                (sol.p[(0, 0)] - tp).abs() < 1e-9 * tp.max(1.0),
                "P = {} vs theta_+ = {tp} (a={a}, b={b}, q={q}, r={r}, rho={rho})",
                sol.p[(0, 0)]
            );
        }
    }

    #[test]
    fn care_stable_system_zero_cost() {
        let n = 3;
        let a = -DMatrix::<f64>::identity(n, n);
        let b = DMatrix::<f64>::from_fn(n, 1, |i, _| (i + 1) as f64);
        let q = DMatrix::<f64>::zeros(n, n);
        let r = DMatrix::<f64>::identity(1, 1);
        let sol = care_solve(&a, &b, &q, &r, 0.0).unwrap();
        assert!(sol.p.amax() < 1e-12, "{}", sol.p);
    }

    #[test]
    fn care_cartpole_residual_and_stability() {
        let sys = crate::dynamics::ControlAffineSystem::flexible_cartpole();
        let n = 6;
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            let mut col = vec![0.0; n];
            sys.drift(&e, &mut col);
            for j in 0..n {
                a[(j, i)] = col[j];
            }
        }
        let mut b_vec = vec![0.0; n];
        sys.input_map(&vec![0.0; n], &mut b_vec);
        let b = DMatrix::from_column_slice(n, 1, &b_vec);
        let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            1.0, 1.0, 5.0, 0.1, 0.1, 0.1,
        ]));
        let r = DMatrix::from_element(1, 1, 0.5);
        let sol = care_solve(&a, &b, &q, &r, 0.1).unwrap();
        assert!(sol.residual < 1e-8, "residual {}", sol.residual);
        let a_cl = &a - &b * &sol.k;
        assert!(
            max_real_eig(&a_cl) < 0.1 / 2.0,
            "closed loop violates the discounted stability margin"
        );
        // P is positive definite for this Q > 0.
        let eigs = sol.p.clone().symmetric_eigenvalues();
        assert!(eigs.iter().all(|e| *e > 0.0), "{eigs}");
    }

    #[test]
    fn lqr_gain_matches_appendix_policy() {
        // K = R^{-1} B P = theta / R = 1 + sqrt 2 for the undiscounted case.
        let sol = care_solve(
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 0.5),
            &DMatrix::from_element(1, 1, 0.5),
            0.0,
        )
        .unwrap();
        let policy = lqr_policy(&sol, None);
        let u = policy.act(&[1.0]).unwrap()[0];
        assert_relative_eq!(u, -(1.0 + 2.0_f64.sqrt()), epsilon = 1e-9);

        let clipped = lqr_policy(&sol, Some(5.5));
        assert_eq!(clipped.act(&[100.0]).unwrap()[0], -5.5);
    }
}
