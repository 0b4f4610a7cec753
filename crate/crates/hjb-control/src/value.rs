//! Value-function abstraction shared by the trainer, the controller and the
//! analytic baselines.

/// Anything that evaluates a scalar value function together with its gradient
/// with respect to the state.
pub trait ValueFunction: Sync {
    fn state_dim(&self) -> usize;

    /// Returns `(V(x), dV/dx)`.
    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>);

    fn value(&self, x: &[f64]) -> f64 {
        self.value_grad(x).0
    }
}

impl<T: ValueFunction + ?Sized> ValueFunction for &T {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }

    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (**self).value_grad(x)
    }
}

/// One-dimensional quadratic value `V(x) = theta x^2`.
#[derive(Debug, Clone, Copy)]
pub struct Quadratic1d {
    pub theta: f64,
}

impl ValueFunction for Quadratic1d {
    fn state_dim(&self) -> usize {
        1
    }

    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(x.len(), 1, "Quadratic1d expects a scalar state");
        (self.theta * x[0] * x[0], vec![2.0 * self.theta * x[0]])
    }
}

/// Quadratic form `V(x) = x^T P x` with symmetric `P` stored row-major.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    n: usize,
    p: Vec<f64>,
}

impl QuadraticForm {
    pub fn new(n: usize, p: Vec<f64>) -> Self {
        assert_eq!(p.len(), n * n, "P must be n x n");
        Self { n, p }
    }
}

impl ValueFunction for QuadraticForm {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(x.len(), self.n, "state dimension mismatch");
        let mut px = vec![0.0; self.n];
        for i in 0..self.n {
            let row = &self.p[i * self.n..(i + 1) * self.n];
            px[i] = row.iter().zip(x).map(|(p, xi)| p * xi).sum();
        }
        let v = x.iter().zip(&px).map(|(xi, pi)| xi * pi).sum();
        // dV/dx = (P + P^T) x = 2 P x for symmetric P.
        let grad = px.iter().map(|p| 2.0 * p).collect();
        (v, grad)
    }
}
