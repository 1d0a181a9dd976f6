//! Dormand–Prince 5(4) embedded Runge–Kutta pair.
//!
//! Seven stages, fifth-order solution with an embedded fourth-order error
//! estimate, first-same-as-last (the seventh stage is the derivative at the
//! accepted point and is reused as the first stage of the next step).

use crate::crn::CompiledCrn;

// Stage abscissae are implicit in the coefficients below; the system is
// autonomous so they never enter explicitly.
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
/// Fifth-order weights (also the seventh stage row: FSAL).
const B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
/// Difference between the fifth- and embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Error estimate order + 1; step-size control uses `err^(-1/ORDER)`.
pub(crate) const ERROR_EXPONENT: f64 = 1.0 / 5.0;

pub(crate) struct Dopri5 {
    k: [Vec<f64>; 7],
    y_stage: Vec<f64>,
    /// Whether `k[0]` currently holds the derivative at the step's start.
    fsal_valid: bool,
}

impl Dopri5 {
    pub(crate) fn new(n: usize) -> Self {
        Dopri5 {
            k: std::array::from_fn(|_| vec![0.0; n]),
            y_stage: vec![0.0; n],
            fsal_valid: false,
        }
    }

    /// Attempts one step of size `h` from `y`, writing the fifth-order
    /// solution into `y_new` and the embedded error estimate into `err`.
    /// Returns the number of fresh derivative evaluations.
    pub(crate) fn step(
        &mut self,
        sys: &CompiledCrn,
        y: &[f64],
        h: f64,
        y_new: &mut [f64],
        err: &mut [f64],
    ) -> u64 {
        let n = y.len();
        let mut evals = 0;
        if !self.fsal_valid {
            sys.rhs_into(y, &mut self.k[0]);
            evals += 1;
        }
        let stages: [&[f64]; 5] = [&A2, &A3, &A4, &A5, &A6];
        for (s, coeffs) in stages.iter().enumerate() {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, &a) in coeffs.iter().enumerate() {
                    acc += a * self.k[j][i];
                }
                self.y_stage[i] = y[i] + h * acc;
            }
            sys.rhs_into(&self.y_stage, &mut self.k[s + 1]);
            evals += 1;
        }
        for i in 0..n {
            let mut acc = 0.0;
            for (j, &b) in B.iter().enumerate() {
                acc += b * self.k[j][i];
            }
            y_new[i] = y[i] + h * acc;
        }
        // FSAL stage: derivative at the candidate point, also used in the
        // error estimate.
        sys.rhs_into(y_new, &mut self.k[6]);
        evals += 1;
        for i in 0..n {
            let mut acc = 0.0;
            for (j, &e) in E.iter().enumerate() {
                acc += e * self.k[j][i];
            }
            err[i] = h * acc;
        }
        evals
    }

    /// Records that the last candidate was accepted unchanged, promoting the
    /// FSAL stage. `clamped` reports that the accepted state was adjusted
    /// (nonnegativity clamping), which invalidates the cached derivative.
    pub(crate) fn on_accept(&mut self, clamped: bool) {
        if clamped {
            self.fsal_valid = false;
        } else {
            self.k.swap(0, 6);
            self.fsal_valid = true;
        }
    }
}
