//! Verification experiments: block convergence ladders and the PI-vs-PID
//! closed-loop comparison.
//!
//! The controller blocks are only asymptotically ideal — their outputs
//! approach the intended algebra as the copy and tracking rates grow. The
//! convergence runners make that claim measurable: they simulate a block at
//! several speed scales and report the error at each scale together with a
//! monotone-decrease verdict. [`compare_pi_pid`] runs the full closed loop
//! twice — once with the derivative term and once without — and summarizes
//! how well the plant output follows the decoded reference over a transient
//! and a steady window. Every comparison run also audits the integral
//! block's defining identity (decoded output = gain × integral of the
//! decoded error) and fails loudly if it drifts.
//!
//! Reports serialize to CSV ([`ConvergenceReport::to_csv`],
//! [`ComparisonReport::to_csv`]) and to a human-readable summary table
//! ([`ConvergenceReport::summary`], [`ComparisonReport::summary`]).

use std::fmt::Write as _;

use thiserror::Error;

use crate::blocks::{
    build_closed_loop, derivative_block, loop_signals, proportional_block, BlockError,
    BlockParams, DualRailSignal, LoopSpec,
};
use crate::builtins::sine_reference;
use crate::crn::{union, CrnError, SpeciesId};
use crate::dsl::CrnDocument;
use crate::sim::{signal_metrics, simulate_document, Metrics, SimError, SimOptions, Window};

/// Horizon for derivative-convergence runs.
const DERIVATIVE_T_END: f64 = 200.0;
/// The derivative error window opens after this many tracking
/// time-constants. The start-up mismatch decays like `(1 + vt)·e^{−vt}`
/// through the block's two cascaded stages, so twelve constants push it
/// well below the finite-speed bias the experiment measures (five would
/// leave an `e^{−5}` floor comparable to the bias itself).
const POST_TRANSIENT_CONSTANTS: f64 = 12.0;
/// Settling horizon for proportional-convergence runs, in units of the
/// block's copy time-constant `1/s`.
const PROPORTIONAL_SETTLE_CONSTANTS: f64 = 40.0;
/// Constant probe held on the proportional block's input rails.
const PROPORTIONAL_PROBE: (f64, f64) = (3.0, 1.0);
/// A ladder entry must shrink the error to at most this fraction of its
/// predecessor to count as a monotone decrease (5% slack for solver noise).
const MONOTONE_SLACK: f64 = 0.95;

/// Closed-loop horizon for a constant reference.
const CONSTANT_T_END: f64 = 200.0;
/// Closed-loop horizon for a sine reference.
const SINE_T_END: f64 = 600.0;
/// Length of the transient window at the start of a comparison run.
const TRANSIENT_SPAN: f64 = 50.0;
/// Length of the steady window at the end of a comparison run.
const STEADY_SPAN: f64 = 50.0;
/// The integral-identity audit covers `[0, min(t_end, 200)]`.
const AUDIT_END: f64 = 200.0;
/// Largest tolerated relative drift in the integral identity.
const AUDIT_BUDGET: f64 = 1e-4;
/// Step cap for comparison runs; small enough that the trapezoidal audit
/// quadrature stays far inside its budget.
const COMPARE_MAX_STEP: f64 = 0.01;
const COMPARE_REL_TOL: f64 = 1e-8;
const COMPARE_ABS_TOL: f64 = 1e-11;

/// What can go wrong while running an experiment.
#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("a convergence ladder needs at least one scale factor, strictly increasing and positive")]
    InvalidLadder,
    #[error("sine input needs a nonnegative finite amplitude and a positive finite rate, got amplitude {amplitude}, rate {rate}")]
    InvalidSineInput { amplitude: f64, rate: f64 },
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error(transparent)]
    Crn(#[from] CrnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("integral identity violated: decoded integral output drifts from the gain-scaled integral of the decoded error by {relative_error:.3e} relative, over the {budget:.0e} budget")]
    IntegralIdentity { relative_error: f64, budget: f64 },
}

/// A sinusoidal drive `amplitude · sin(rate · t)` for block experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineInput {
    pub amplitude: f64,
    pub rate: f64,
}

impl SineInput {
    fn validate(&self) -> Result<(), AnalysisError> {
        let ok = self.amplitude.is_finite()
            && self.amplitude >= 0.0
            && self.rate.is_finite()
            && self.rate > 0.0;
        if ok {
            Ok(())
        } else {
            Err(AnalysisError::InvalidSineInput { amplitude: self.amplitude, rate: self.rate })
        }
    }
}

/// Error-versus-speed record for one block experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// The swept parameter, e.g. `"s,v speed scale"`.
    pub parameter: String,
    /// Strictly increasing scale factors.
    pub ladder: Vec<f64>,
    /// Error metric at each scale, same order as the ladder.
    pub errors: Vec<f64>,
    /// Whether each error is at most 95% of its predecessor.
    pub monotone_decrease: bool,
}

impl ConvergenceReport {
    fn assemble(parameter: &str, ladder: &[f64], errors: Vec<f64>) -> ConvergenceReport {
        let monotone_decrease = errors
            .windows(2)
            .all(|pair| pair[1] <= MONOTONE_SLACK * pair[0]);
        ConvergenceReport {
            parameter: parameter.to_string(),
            ladder: ladder.to_vec(),
            errors,
            monotone_decrease,
        }
    }

    /// CSV form: one `scale,error` row per ladder entry.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scale,error\n");
        for (scale, error) in self.ladder.iter().zip(&self.errors) {
            let _ = writeln!(out, "{scale},{error}");
        }
        out
    }

    /// Human-readable table with the monotonicity verdict. A single-row
    /// report has nothing to compare, so the verdict line is omitted.
    pub fn summary(&self) -> String {
        let mut out = format!("convergence in the {}\n", self.parameter);
        let _ = writeln!(out, "  {:>10}  {:>12}", "scale", "error");
        for (scale, error) in self.ladder.iter().zip(&self.errors) {
            let _ = writeln!(out, "  {scale:>10}  {error:>12.6e}");
        }
        if self.ladder.len() >= 2 {
            let verdict = if self.monotone_decrease { "yes" } else { "no" };
            let _ = writeln!(out, "  monotone decrease (5% slack): {verdict}");
        }
        out
    }
}

fn validate_ladder(ladder: &[f64]) -> Result<(), AnalysisError> {
    let increasing = ladder
        .windows(2)
        .all(|pair| pair[0] < pair[1]);
    let positive = ladder.iter().all(|&x| x.is_finite() && x > 0.0);
    if ladder.is_empty() || !increasing || !positive {
        return Err(AnalysisError::InvalidLadder);
    }
    Ok(())
}

/// Simulates the isolated derivative block over a ladder of speed scales,
/// driven by `drive` (which must expose the input rails `R+`/`R-`), and
/// returns the post-transient sup error against `ideal(t)` at each scale.
fn derivative_errors(
    drive: &CrnDocument,
    ideal: impl Fn(f64) -> f64,
    p_base: &BlockParams,
    ladder: &[f64],
) -> Result<Vec<f64>, AnalysisError> {
    let input = DualRailSignal::from_base(loop_signals::REFERENCE)?;
    let aux = DualRailSignal::from_base(loop_signals::DERIVATIVE_AUX)?;
    let output = DualRailSignal::from_base(loop_signals::DERIVATIVE)?;
    let mut errors = Vec::with_capacity(ladder.len());
    for &scale in ladder {
        let params = p_base.speed_scaled(scale)?;
        let block = derivative_block(&input, &aux, &output, &params)?;
        let crn = union(drive.crn(), &block);
        let initial = drive.initial().iter().map(|(s, &x)| (s.clone(), x));
        let doc = CrnDocument::new(crn, initial)?;
        let options = SimOptions::new(DERIVATIVE_T_END)
            .with_tolerances(1e-8, 1e-11)
            .with_max_step(0.25);
        let trajectory = simulate_document(&doc, &options)?;
        let window_start = POST_TRANSIENT_CONSTANTS / params.v();
        let decoded = trajectory.decode(&output)?;
        let error = trajectory
            .times()
            .iter()
            .zip(&decoded)
            .filter(|(&t, _)| t >= window_start)
            .map(|(&t, &d)| (d - ideal(t)).abs())
            .fold(0.0_f64, f64::max);
        errors.push(error);
    }
    Ok(errors)
}

/// Sweeps the derivative block's copy and tracking rates (`s ← σs`,
/// `v ← σv`) over a ladder of scales `σ`, driving the block with a sine
/// oscillator, and reports the sup error against the analytic derivative
/// `r · amplitude · rate · cos(rate · t)` after the block's transient
/// (five tracking time-constants) has passed.
pub fn derivative_convergence(
    p_base: &BlockParams,
    ladder: &[f64],
    input: &SineInput,
) -> Result<ConvergenceReport, AnalysisError> {
    validate_ladder(ladder)?;
    input.validate()?;
    let drive = sine_reference(input.amplitude, input.rate);
    let gain = p_base.r();
    let (amplitude, rate) = (input.amplitude, input.rate);
    let ideal = move |t: f64| gain * amplitude * rate * (rate * t).cos();
    let errors = derivative_errors(&drive, ideal, p_base, ladder)?;
    Ok(ConvergenceReport::assemble("s,v speed scale", ladder, errors))
}

/// Sweeps the proportional block's copy rate (`s ← σs`) over a ladder of
/// scales `σ` under a constant input held at `E+ = 3`, `E- = 1`, and
/// reports the settled rail error `|P+ − r·E+| + |P- − r·E-|` at each
/// scale. The decoded output is exact at every speed; the rails themselves
/// only approach their ideal values as the annihilation leak becomes
/// negligible against the copy rate.
pub fn proportional_convergence(
    p_base: &BlockParams,
    ladder: &[f64],
) -> Result<ConvergenceReport, AnalysisError> {
    validate_ladder(ladder)?;
    let input = DualRailSignal::from_base(loop_signals::ERROR)?;
    let output = DualRailSignal::from_base(loop_signals::PROPORTIONAL)?;
    let (probe_plus, probe_minus) = PROPORTIONAL_PROBE;
    let mut errors = Vec::with_capacity(ladder.len());
    for &scale in ladder {
        let params = p_base.speed_scaled(scale)?;
        let block = proportional_block(&input, &output, &params)?;
        let doc = CrnDocument::new(
            block,
            [
                (input.plus().clone(), probe_plus),
                (input.minus().clone(), probe_minus),
            ],
        )?;
        let t_end = PROPORTIONAL_SETTLE_CONSTANTS / params.s();
        let options = SimOptions::new(t_end)
            .with_tolerances(1e-10, 1e-13)
            .with_max_step(t_end / 200.0);
        let trajectory = simulate_document(&doc, &options)?;
        let final_state = trajectory.final_state();
        let rail = |s: &SpeciesId| -> f64 {
            trajectory
                .species()
                .iter()
                .position(|x| x == s)
                .map(|i| final_state[i])
                .unwrap_or(0.0)
        };
        let error = (rail(output.plus()) - params.r() * probe_plus).abs()
            + (rail(output.minus()) - params.r() * probe_minus).abs();
        errors.push(error);
    }
    Ok(ConvergenceReport::assemble("s speed scale", ladder, errors))
}

/// Which experiment profile a comparison run follows: the horizon is 200
/// time units for a constant reference and 600 for a sine reference. The
/// reference network itself comes from the loop spec; this only selects the
/// windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceProfile {
    Constant,
    Sine,
}

impl ReferenceProfile {
    fn t_end(self) -> f64 {
        match self {
            ReferenceProfile::Constant => CONSTANT_T_END,
            ReferenceProfile::Sine => SINE_T_END,
        }
    }
}

/// Integrator settings for a comparison run.
///
/// The defaults keep the trapezoidal quadrature of the integral-identity
/// audit orders of magnitude inside its budget; loosening them is allowed
/// but can make the audit fail honestly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            rel_tol: COMPARE_REL_TOL,
            abs_tol: COMPARE_ABS_TOL,
            max_step: COMPARE_MAX_STEP,
        }
    }
}

/// Tracking metrics for one controller over both comparison windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerMetrics {
    /// Plant output vs decoded reference over the first 50 time units.
    pub transient: Metrics,
    /// Same comparison over the final 50 time units.
    pub steady: Metrics,
}

/// Side-by-side closed-loop tracking summary for PI and PID control.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub t_end: f64,
    pub transient_window: Window,
    pub steady_window: Window,
    pub pi: ControllerMetrics,
    pub pid: ControllerMetrics,
    /// Relative drift of the integral identity in the PI run.
    pub integral_residual_pi: f64,
    /// Relative drift of the integral identity in the PID run.
    pub integral_residual_pid: f64,
}

impl ComparisonReport {
    /// CSV form: one row per controller and window.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("controller,window,rmse,max_abs_err,final_err\n");
        for (controller, metrics) in [("pi", &self.pi), ("pid", &self.pid)] {
            for (window, m) in [("transient", metrics.transient), ("steady", metrics.steady)] {
                let _ = writeln!(
                    out,
                    "{controller},{window},{},{},{}",
                    m.rmse, m.max_abs_err, m.final_err
                );
            }
        }
        out
    }

    /// Human-readable side-by-side table.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "closed-loop tracking to t = {} (transient [{}, {}], steady [{}, {}])\n",
            self.t_end,
            self.transient_window.start,
            self.transient_window.end,
            self.steady_window.start,
            self.steady_window.end,
        );
        let _ = writeln!(
            out,
            "  {:>4} {:>10}  {:>12} {:>12} {:>12}",
            "ctrl", "window", "rmse", "max_abs_err", "final_err"
        );
        for (controller, metrics) in [("pi", &self.pi), ("pid", &self.pid)] {
            for (window, m) in [("transient", metrics.transient), ("steady", metrics.steady)] {
                let _ = writeln!(
                    out,
                    "  {controller:>4} {window:>10}  {:>12.6} {:>12.6} {:>12.6}",
                    m.rmse, m.max_abs_err, m.final_err
                );
            }
        }
        let _ = writeln!(
            out,
            "  integral identity drift: pi {:.3e}, pid {:.3e} (budget {AUDIT_BUDGET:.0e})",
            self.integral_residual_pi, self.integral_residual_pid
        );
        out
    }
}

/// Cumulative trapezoidal integral of `values` over `times`.
fn cumulative_trapezoid(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..times.len() {
        acc += 0.5 * (values[i] + values[i - 1]) * (times[i] - times[i - 1]);
        out.push(acc);
    }
    out
}

/// Checks that the decoded integral output equals `gain ×` the running
/// integral of the decoded error over `[0, min(t_end, 200)]`, and returns
/// the observed relative drift.
fn audit_integral_identity(
    trajectory: &crate::sim::Trajectory,
    gain: f64,
) -> Result<f64, AnalysisError> {
    let error = trajectory.decode(&DualRailSignal::from_base(loop_signals::ERROR)?)?;
    let integral = trajectory.decode(&DualRailSignal::from_base(loop_signals::INTEGRAL)?)?;
    let running = cumulative_trapezoid(trajectory.times(), &error);
    let mut drift: f64 = 0.0;
    let mut scale: f64 = 1.0;
    for ((&t, &lhs), &integral_of_error) in
        trajectory.times().iter().zip(&integral).zip(&running)
    {
        if t > AUDIT_END {
            break;
        }
        let rhs = gain * integral_of_error;
        drift = drift.max((lhs - rhs).abs());
        scale = scale.max(lhs.abs()).max(rhs.abs());
    }
    let relative_error = drift / scale;
    if relative_error > AUDIT_BUDGET {
        return Err(AnalysisError::IntegralIdentity { relative_error, budget: AUDIT_BUDGET });
    }
    Ok(relative_error)
}

/// A comparison report together with the two trajectories behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRun {
    pub report: ComparisonReport,
    pub pi: crate::sim::Trajectory,
    pub pid: crate::sim::Trajectory,
}

/// Runs the closed loop described by `spec` twice — as given (PID) and with
/// the derivative gain zeroed (PI) — and reports tracking metrics of the
/// plant output against the decoded reference over the transient (first 50
/// time units) and steady (last 50) windows. Returns the trajectories
/// alongside the report.
///
/// Both runs audit the integral identity and fail with
/// [`AnalysisError::IntegralIdentity`] if it drifts beyond 1e-4 relative.
/// Runs are deterministic: identical inputs produce bit-identical reports.
pub fn run_comparison(
    spec: &LoopSpec,
    profile: ReferenceProfile,
    compare: &CompareOptions,
) -> Result<ComparisonRun, AnalysisError> {
    let t_end = profile.t_end();
    let transient_window = Window::new(0.0, TRANSIENT_SPAN);
    let steady_window = Window::new(t_end - STEADY_SPAN, t_end);
    let options = SimOptions::new(t_end)
        .with_tolerances(compare.rel_tol, compare.abs_tol)
        .with_max_step(compare.max_step);
    let reference = DualRailSignal::from_base(loop_signals::REFERENCE)?;

    let run = |gains| -> Result<(ControllerMetrics, f64, crate::sim::Trajectory), AnalysisError> {
        let mut variant = spec.clone();
        variant.gains = gains;
        let doc = build_closed_loop(&variant)?;
        let trajectory = simulate_document(&doc, &options)?;
        let output = trajectory.series(&spec.output)?;
        let decoded_reference = trajectory.decode(&reference)?;
        let transient =
            signal_metrics(trajectory.times(), &output, &decoded_reference, transient_window)?;
        let steady =
            signal_metrics(trajectory.times(), &output, &decoded_reference, steady_window)?;
        let residual = audit_integral_identity(&trajectory, variant.gains.ki())?;
        Ok((ControllerMetrics { transient, steady }, residual, trajectory))
    };

    let (pid, integral_residual_pid, pid_trajectory) = run(spec.gains)?;
    let (pi, integral_residual_pi, pi_trajectory) = run(spec.gains.without_derivative())?;
    Ok(ComparisonRun {
        report: ComparisonReport {
            t_end,
            transient_window,
            steady_window,
            pi,
            pid,
            integral_residual_pi,
            integral_residual_pid,
        },
        pi: pi_trajectory,
        pid: pid_trajectory,
    })
}

/// [`run_comparison`] with default options, keeping only the report.
pub fn compare_pi_pid(
    spec: &LoopSpec,
    profile: ReferenceProfile,
) -> Result<ComparisonReport, AnalysisError> {
    run_comparison(spec, profile, &CompareOptions::default()).map(|run| run.report)
}
