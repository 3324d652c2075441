//! Finite-difference policy shared by every derivative-consuming operation.
//!
//! Central differences with step `rel_step * max(1, |argument|)`; operations
//! that consume derivatives accept an [`FdPolicy`] so the step can be
//! overridden per call site.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct FdPolicy {
    pub rel_step: f64,
}

impl Default for FdPolicy {
    fn default() -> Self {
        FdPolicy { rel_step: 1e-6 }
    }
}

impl FdPolicy {
    pub fn new(rel_step: f64) -> Self {
        FdPolicy { rel_step }
    }

    /// Step size for differencing around `arg`.
    pub fn step(&self, arg: f64) -> f64 {
        self.rel_step * arg.abs().max(1.0)
    }

    /// d/dx of a scalar function.
    pub fn d_scalar<F: Fn(f64) -> f64>(&self, f: F, x: f64) -> f64 {
        let h = self.step(x);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    /// d/dt of a vector-valued function of a scalar.
    pub fn d_vector<F: Fn(f64) -> DVector<f64>>(&self, f: F, x: f64) -> DVector<f64> {
        let h = self.step(x);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    /// Jacobian of a vector-valued function of a vector, one column per input.
    pub fn jacobian<F: Fn(&DVector<f64>) -> DVector<f64>>(
        &self,
        f: F,
        x: &DVector<f64>,
    ) -> DMatrix<f64> {
        let n = x.len();
        let probe = f(x);
        let rows = probe.len();
        let mut jac = DMatrix::zeros(rows, n);
        for j in 0..n {
            let h = self.step(x[j]);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let col = (f(&xp) - f(&xm)) / (2.0 * h);
            jac.set_column(j, &col);
        }
        jac
    }

    /// Gradient of a scalar function of a vector.
    pub fn gradient<F: Fn(&DVector<f64>) -> f64>(&self, f: F, x: &DVector<f64>) -> DVector<f64> {
        let n = x.len();
        let mut g = DVector::zeros(n);
        for j in 0..n {
            let h = self.step(x[j]);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            g[j] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }
}
