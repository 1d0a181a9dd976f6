//! Low-order L-stable Rosenbrock stepper for stiff networks.
//!
//! A two-stage Rosenbrock method with an embedded third-order error
//! estimate (the classic `ode23s` scheme). Each step evaluates the analytic
//! mass-action Jacobian once, factors `W = I − h·d·J` once, and performs
//! three right-hand-side evaluations and three triangular solves. L-stability
//! lets the step size track the solution's slow manifold instead of the
//! fastest rate constant, which is what makes high-gain controller networks
//! tractable.

use nalgebra::{DMatrix, DVector};

use crate::crn::CompiledCrn;

/// `d = 1 / (2 + √2)`, the method's damping parameter.
fn d() -> f64 {
    1.0 / (2.0 + std::f64::consts::SQRT_2)
}

/// Coefficient of the third-stage correction.
fn e32() -> f64 {
    6.0 + std::f64::consts::SQRT_2
}

/// Error estimate order + 1; step-size control uses `err^(-1/ORDER)`.
pub(crate) const ERROR_EXPONENT: f64 = 1.0 / 3.0;

pub(crate) struct Rosenbrock23 {
    jac: DMatrix<f64>,
    f0: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    y_stage: Vec<f64>,
    scratch: DVector<f64>,
}

pub(crate) enum RosenbrockOutcome {
    /// `y_new` and `err` are filled in.
    Candidate,
    /// `W` could not be factored; the driver should shrink the step.
    SingularMatrix,
}

impl Rosenbrock23 {
    pub(crate) fn new(n: usize) -> Self {
        Rosenbrock23 {
            jac: DMatrix::zeros(n, n),
            f0: vec![0.0; n],
            f1: vec![0.0; n],
            f2: vec![0.0; n],
            y_stage: vec![0.0; n],
            scratch: DVector::zeros(n),
        }
    }

    /// Attempts one step of size `h` from `y`. Returns the outcome plus the
    /// number of rhs and Jacobian evaluations performed.
    pub(crate) fn step(
        &mut self,
        sys: &CompiledCrn,
        y: &[f64],
        h: f64,
        y_new: &mut [f64],
        err: &mut [f64],
    ) -> (RosenbrockOutcome, u64, u64) {
        let n = y.len();
        sys.rhs_into(y, &mut self.f0);
        sys.jacobian_into(y, &mut self.jac);
        let mut w = DMatrix::zeros(n, n);
        let hd = h * d();
        for i in 0..n {
            for j in 0..n {
                w[(i, j)] = -hd * self.jac[(i, j)];
            }
            w[(i, i)] += 1.0;
        }
        let lu = w.lu();

        let mut solve = |rhs: &[f64], out: &mut Vec<f64>| -> bool {
            self.scratch.copy_from_slice(rhs);
            match lu.solve(&self.scratch) {
                Some(solution) => {
                    out.clear();
                    out.extend_from_slice(solution.as_slice());
                    true
                }
                None => false,
            }
        };

        let mut k1 = Vec::new();
        if !solve(&self.f0, &mut k1) {
            return (RosenbrockOutcome::SingularMatrix, 1, 1);
        }
        for i in 0..n {
            self.y_stage[i] = y[i] + 0.5 * h * k1[i];
        }
        sys.rhs_into(&self.y_stage, &mut self.f1);
        let rhs2: Vec<f64> = (0..n).map(|i| self.f1[i] - k1[i]).collect();
        let mut k2 = Vec::new();
        if !solve(&rhs2, &mut k2) {
            return (RosenbrockOutcome::SingularMatrix, 2, 1);
        }
        for i in 0..n {
            k2[i] += k1[i];
        }
        for i in 0..n {
            y_new[i] = y[i] + h * k2[i];
        }
        sys.rhs_into(y_new, &mut self.f2);
        let rhs3: Vec<f64> = (0..n)
            .map(|i| {
                self.f2[i] - e32() * (k2[i] - self.f1[i]) - 2.0 * (k1[i] - self.f0[i])
            })
            .collect();
        let mut k3 = Vec::new();
        if !solve(&rhs3, &mut k3) {
            return (RosenbrockOutcome::SingularMatrix, 3, 1);
        }
        for i in 0..n {
            err[i] = (h / 6.0) * (k1[i] - 2.0 * k2[i] + k3[i]);
        }
        (RosenbrockOutcome::Candidate, 3, 1)
    }
}
