//! Deterministic simulation of reaction networks and trajectory analysis.
//!
//! [`simulate`] integrates the mass-action rate equations with an adaptive
//! step: an explicit Dormand–Prince 5(4) pair by default, or an L-stable
//! Rosenbrock method for stiff networks (chosen automatically when rate
//! coefficients are large). Concentrations are kept physical: a trial step
//! that would push any species below `-abs_tol` is rejected and retried with
//! a smaller step, and accepted values in `[-abs_tol, 0)` are clamped to
//! zero.
//!
//! A [`Trajectory`] records sampled states either at every accepted step or
//! on a fixed uniform grid (filled by linear interpolation between accepted
//! steps). Trajectories decode dual-rail signals, compute tracking metrics
//! over time windows, and export CSV.

mod dopri;
mod rosenbrock;

use std::io;

use thiserror::Error;

use crate::blocks::DualRailSignal;
use crate::crn::{CompiledCrn, Crn, CrnError, SpeciesId, State};
use crate::dsl::CrnDocument;

use dopri::Dopri5;
use rosenbrock::{Rosenbrock23, RosenbrockOutcome};

/// Integration method selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Pick based on the network's largest rate coefficient: above
    /// [`STIFF_RATE_THRESHOLD`] use [`Method::Rosenbrock`], otherwise
    /// [`Method::DormandPrince`].
    #[default]
    Auto,
    /// Explicit Dormand–Prince 5(4) embedded pair.
    DormandPrince,
    /// L-stable Rosenbrock 2(3) with the analytic mass-action Jacobian.
    Rosenbrock,
}

/// Rate-coefficient threshold above which [`Method::Auto`] switches to the
/// stiff stepper.
///
/// A crude but effective signal: timescale separation in these networks
/// comes from deliberately large block rates (the asymptotic limits drive
/// `s`, `v` → ∞), which show up directly as large coefficients. Scaled
/// derivative blocks at ×10 (rates ≤ ~1000) still run efficiently on the
/// explicit pair; ×100 and beyond do not.
pub const STIFF_RATE_THRESHOLD: f64 = 1500.0;

/// How sampled states are spaced in the output trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputGrid {
    /// One sample per accepted integrator step.
    #[default]
    Solver,
    /// `points` uniformly spaced samples from 0 to `t_end` inclusive,
    /// linearly interpolated between accepted steps. Must be at least 2.
    Fixed { points: usize },
}

/// Options controlling one integration run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    /// End of the integration interval `[0, t_end]`.
    pub t_end: f64,
    /// Relative error tolerance per step (default `1e-6`).
    pub rel_tol: f64,
    /// Absolute error tolerance per step (default `1e-9`); also the
    /// threshold for nonnegativity rejection and clamping.
    pub abs_tol: f64,
    /// Upper bound on the step size (default `t_end`).
    pub max_step: f64,
    /// Stepper selection (default [`Method::Auto`]).
    pub method: Method,
    /// Output sampling (default [`OutputGrid::Solver`]).
    pub grid: OutputGrid,
    /// Abort after this many attempted steps (default two million). This
    /// bounds runtime and memory when a stability-limited explicit run
    /// would otherwise creep along at a vanishing step size.
    pub max_steps: u64,
}

impl SimOptions {
    /// Default options for an integration to `t_end`.
    pub fn new(t_end: f64) -> Self {
        SimOptions {
            t_end,
            rel_tol: 1e-6,
            abs_tol: 1e-9,
            max_step: t_end,
            method: Method::Auto,
            grid: OutputGrid::Solver,
            max_steps: 2_000_000,
        }
    }

    /// Sets both error tolerances.
    pub fn with_tolerances(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    /// Sets the step-size cap.
    pub fn with_max_step(mut self, max_step: f64) -> Self {
        self.max_step = max_step;
        self
    }

    /// Sets the stepper.
    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    /// Samples on a fixed uniform grid with the given number of points.
    pub fn with_fixed_grid(mut self, points: usize) -> Self {
        self.grid = OutputGrid::Fixed { points };
        self
    }

    /// Sets the attempted-step budget.
    pub fn with_max_steps(mut self, max_steps: u64) -> Self {
        self.max_steps = max_steps;
        self
    }

    fn validate(&self) -> Result<(), SimError> {
        if !self.t_end.is_finite() || self.t_end <= 0.0 {
            return Err(SimError::InvalidTimeSpan(self.t_end));
        }
        for tol in [self.rel_tol, self.abs_tol] {
            if !(tol > 0.0 && tol < 1.0) {
                return Err(SimError::InvalidTolerance(tol));
            }
        }
        if !self.max_step.is_finite() || self.max_step <= 0.0 {
            return Err(SimError::InvalidMaxStep(self.max_step));
        }
        if let OutputGrid::Fixed { points } = self.grid {
            if points < 2 {
                return Err(SimError::InvalidGrid(points));
            }
        }
        if self.max_steps == 0 {
            return Err(SimError::InvalidStepBudget);
        }
        Ok(())
    }
}

/// Errors from simulation and trajectory analysis.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Crn(#[from] CrnError),
    #[error("t_end must be positive and finite, got {0}")]
    InvalidTimeSpan(f64),
    #[error("tolerances must lie in (0, 1), got {0}")]
    InvalidTolerance(f64),
    #[error("max_step must be positive and finite, got {0}")]
    InvalidMaxStep(f64),
    #[error("a fixed output grid needs at least 2 points, got {0}")]
    InvalidGrid(usize),
    #[error("max_steps must be positive")]
    InvalidStepBudget,
    #[error("step size underflowed at t = {t} (h = {h:e}); the system may be too stiff for the chosen method")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("gave up after {steps} steps at t = {t}; the system may need the stiff method or looser tolerances")]
    StepBudgetExhausted { t: f64, steps: u64 },
    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("signal lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("window [{start}, {end}] contains no samples")]
    EmptyWindow { start: f64, end: f64 },
}

/// Counters describing one integration run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimStats {
    /// Stepper actually used (after [`Method::Auto`] resolution).
    pub method: Method,
    pub steps_accepted: u64,
    pub steps_rejected: u64,
    pub rhs_evaluations: u64,
    pub jacobian_evaluations: u64,
    /// Most negative concentration seen in any accepted state before
    /// clamping. Never below `-abs_tol` by construction.
    pub min_before_clamp: f64,
}

/// A time window `[start, end]`, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Self {
        Window { start, end }
    }

    /// Whether a sample time falls inside the window.
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }
}

/// Tracking-error summary of a signal against a reference over a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Root-mean-square error over the window's samples.
    pub rmse: f64,
    /// Largest absolute error over the window's samples.
    pub max_abs_err: f64,
    /// Signed error at the last sample in the window.
    pub final_err: f64,
}

/// Pointwise error summary between two sampled signals over a time window.
///
/// All three metrics are computed over the samples whose times fall in the
/// window (inclusive). Fails if the slices disagree in length or the window
/// captures no samples.
pub fn signal_metrics(
    times: &[f64],
    signal: &[f64],
    reference: &[f64],
    window: Window,
) -> Result<Metrics, SimError> {
    if times.len() != signal.len() {
        return Err(SimError::LengthMismatch(times.len(), signal.len()));
    }
    if times.len() != reference.len() {
        return Err(SimError::LengthMismatch(times.len(), reference.len()));
    }
    let mut count = 0u64;
    let mut sum_sq = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut last = 0.0;
    for i in 0..times.len() {
        if window.contains(times[i]) {
            let err = signal[i] - reference[i];
            count += 1;
            sum_sq += err * err;
            max_abs = max_abs.max(err.abs());
            last = err;
        }
    }
    if count == 0 {
        return Err(SimError::EmptyWindow { start: window.start, end: window.end });
    }
    Ok(Metrics {
        rmse: (sum_sq / count as f64).sqrt(),
        max_abs_err: max_abs,
        final_err: last,
    })
}

/// A sampled solution of a network's rate equations.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    species: Vec<SpeciesId>,
    times: Vec<f64>,
    /// `samples[i]` is the state at `times[i]`, in species order.
    samples: Vec<Vec<f64>>,
    stats: SimStats,
}

impl Trajectory {
    /// The species order of the sampled states.
    pub fn species(&self) -> &[SpeciesId] {
        &self.species
    }

    /// Sample times, strictly increasing, starting at 0.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Sampled states, one row per time.
    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    /// Integration counters.
    pub fn stats(&self) -> &SimStats {
        &self.stats
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    /// Whether the trajectory holds no samples (never true for a successful
    /// simulation, which samples at least t = 0 and t = t_end).
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Position of a species in the sample rows.
    pub fn species_index(&self, species: &SpeciesId) -> Option<usize> {
        self.species.iter().position(|s| s == species)
    }

    /// Time series of one species.
    pub fn series(&self, species: &SpeciesId) -> Result<Vec<f64>, SimError> {
        let i = self
            .species_index(species)
            .ok_or_else(|| CrnError::UnknownSpecies(species.clone()))?;
        Ok(self.samples.iter().map(|row| row[i]).collect())
    }

    /// The last sampled state.
    pub fn final_state(&self) -> &[f64] {
        self.samples.last().expect("a trajectory always has samples")
    }

    /// Decodes a dual-rail signal: the plus rail minus the minus rail at
    /// every sample.
    pub fn decode(&self, signal: &DualRailSignal) -> Result<Vec<f64>, SimError> {
        let p = self
            .species_index(signal.plus())
            .ok_or_else(|| CrnError::UnknownSpecies(signal.plus().clone()))?;
        let m = self
            .species_index(signal.minus())
            .ok_or_else(|| CrnError::UnknownSpecies(signal.minus().clone()))?;
        Ok(self.samples.iter().map(|row| row[p] - row[m]).collect())
    }

    /// Writes the trajectory as CSV: a `time` column followed by one column
    /// per species, one row per sample.
    pub fn write_csv<W: io::Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "time")?;
        for s in &self.species {
            write!(out, ",{s}")?;
        }
        writeln!(out)?;
        for (t, row) in self.times.iter().zip(&self.samples) {
            write!(out, "{t}")?;
            for v in row {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Integrates a document's network from its initial conditions.
pub fn simulate_document(doc: &CrnDocument, options: &SimOptions) -> Result<Trajectory, SimError> {
    simulate(doc.crn(), &doc.initial_state(), options)
}

/// Integrates `crn` from `x0` over `[0, t_end]`.
///
/// The state is advanced adaptively; see the module docs for the
/// nonnegativity contract. The returned trajectory's first sample is the
/// initial condition (tiny negatives clamped to zero) and its last sample is
/// at exactly `t_end`.
pub fn simulate(crn: &Crn, x0: &State, options: &SimOptions) -> Result<Trajectory, SimError> {
    options.validate()?;
    if x0.values().len() != crn.n_species() {
        return Err(CrnError::DimensionMismatch {
            expected: crn.n_species(),
            got: x0.values().len(),
        }
        .into());
    }
    let sys = CompiledCrn::new(crn);
    let method = match options.method {
        Method::Auto => {
            if sys.max_rate() > STIFF_RATE_THRESHOLD {
                Method::Rosenbrock
            } else {
                Method::DormandPrince
            }
        }
        m => m,
    };
    let driver = Driver::new(&sys, method, options);
    let (times, samples, stats) = driver.run(x0.values())?;
    Ok(Trajectory { species: crn.species().to_vec(), times, samples, stats })
}

/// Step-size controller safety factor.
const SAFETY: f64 = 0.9;
/// Smallest allowed step shrink factor per retry.
const MIN_FACTOR: f64 = 0.2;
/// Largest allowed step growth factor per accepted step.
const MAX_FACTOR: f64 = 5.0;

enum Stepper {
    Dopri(Dopri5),
    Rosenbrock(Rosenbrock23),
}

struct Driver<'a> {
    sys: &'a CompiledCrn,
    method: Method,
    options: &'a SimOptions,
}

impl<'a> Driver<'a> {
    fn new(sys: &'a CompiledCrn, method: Method, options: &'a SimOptions) -> Self {
        Driver { sys, method, options }
    }

    /// Tolerance-scaled RMS norm of the error estimate; acceptance is
    /// `norm <= 1`.
    fn error_norm(&self, err: &[f64], y_old: &[f64], y_new: &[f64]) -> f64 {
        let n = err.len();
        if n == 0 {
            return 0.0;
        }
        let mut sum = 0.0;
        for i in 0..n {
            let scale = self.options.abs_tol
                + self.options.rel_tol * y_old[i].abs().max(y_new[i].abs());
            let ratio = err[i] / scale;
            sum += ratio * ratio;
        }
        (sum / n as f64).sqrt()
    }

    fn run(&self, x0: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>, SimStats), SimError> {
        let n = self.sys.n_species();
        let t_end = self.options.t_end;
        let mut stats = SimStats {
            method: self.method,
            steps_accepted: 0,
            steps_rejected: 0,
            rhs_evaluations: 0,
            jacobian_evaluations: 0,
            min_before_clamp: 0.0,
        };

        let mut y: Vec<f64> = x0.to_vec();
        for v in &y {
            stats.min_before_clamp = stats.min_before_clamp.min(*v);
        }
        for v in &mut y {
            if *v < 0.0 {
                *v = 0.0;
            }
        }

        let mut output = Output::new(&self.options.grid, t_end, &y);

        let mut stepper = match self.method {
            Method::DormandPrince => Stepper::Dopri(Dopri5::new(n)),
            Method::Rosenbrock => Stepper::Rosenbrock(Rosenbrock23::new(n)),
            Method::Auto => unreachable!("Auto is resolved before the driver runs"),
        };
        let exponent = match self.method {
            Method::DormandPrince => dopri::ERROR_EXPONENT,
            _ => rosenbrock::ERROR_EXPONENT,
        };

        let mut t = 0.0;
        let mut h = (0.1 / (1.0 + self.sys.max_rate()))
            .min(self.options.max_step)
            .min(t_end);
        let h_floor = t_end * 1e-14;
        let mut y_new = vec![0.0; n];
        let mut err = vec![0.0; n];
        // After a rejection, hold the step size down until a step succeeds.
        let mut just_rejected = false;

        while t < t_end {
            if stats.steps_accepted + stats.steps_rejected >= self.options.max_steps {
                return Err(SimError::StepBudgetExhausted {
                    t,
                    steps: self.options.max_steps,
                });
            }
            h = h.min(self.options.max_step);
            let last = t + h >= t_end;
            if last {
                h = t_end - t;
            }

            let candidate_ok = match &mut stepper {
                Stepper::Dopri(s) => {
                    stats.rhs_evaluations += s.step(self.sys, &y, h, &mut y_new, &mut err);
                    true
                }
                Stepper::Rosenbrock(s) => {
                    let (outcome, rhs, jac) = s.step(self.sys, &y, h, &mut y_new, &mut err);
                    stats.rhs_evaluations += rhs;
                    stats.jacobian_evaluations += jac;
                    matches!(outcome, RosenbrockOutcome::Candidate)
                }
            };

            let finite = candidate_ok && y_new.iter().all(|v| v.is_finite());
            if !finite {
                stats.steps_rejected += 1;
                just_rejected = true;
                h *= 0.5;
                if h < h_floor {
                    return Err(SimError::NonFiniteState { t });
                }
                continue;
            }

            let norm = self.error_norm(&err, &y, &y_new);
            if !norm.is_finite() || norm > 1.0 {
                stats.steps_rejected += 1;
                just_rejected = true;
                let factor = if norm.is_finite() {
                    (SAFETY * norm.powf(-exponent)).max(MIN_FACTOR)
                } else {
                    0.5
                };
                h *= factor.min(1.0);
                if h < h_floor {
                    return Err(SimError::StepSizeUnderflow { t, h });
                }
                continue;
            }

            let min_new = y_new.iter().copied().fold(f64::INFINITY, f64::min);
            if min_new < -self.options.abs_tol {
                // Accurate but unphysical: retry with a smaller step.
                stats.steps_rejected += 1;
                just_rejected = true;
                h *= 0.5;
                if h < h_floor {
                    return Err(SimError::StepSizeUnderflow { t, h });
                }
                continue;
            }

            // Accept.
            stats.min_before_clamp = stats.min_before_clamp.min(min_new);
            let mut clamped = false;
            for v in &mut y_new {
                if *v < 0.0 {
                    *v = 0.0;
                    clamped = true;
                }
            }
            if let Stepper::Dopri(s) = &mut stepper {
                s.on_accept(clamped);
            }
            let t_new = if last { t_end } else { t + h };
            output.on_step(t, &y, t_new, &y_new);
            std::mem::swap(&mut y, &mut y_new);
            t = t_new;
            stats.steps_accepted += 1;

            let mut factor = if norm == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * norm.powf(-exponent)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            if just_rejected {
                factor = factor.min(1.0);
                just_rejected = false;
            }
            h *= factor;
        }

        let (times, samples) = output.finish(t_end, &y);
        Ok((times, samples, stats))
    }
}

/// Accumulates output samples for either grid mode.
struct Output {
    times: Vec<f64>,
    samples: Vec<Vec<f64>>,
    /// For fixed grids: all requested times and the next index to emit.
    grid: Option<(Vec<f64>, usize)>,
}

impl Output {
    fn new(grid: &OutputGrid, t_end: f64, y0: &[f64]) -> Self {
        let grid = match grid {
            OutputGrid::Solver => None,
            OutputGrid::Fixed { points } => {
                let n = *points;
                let times: Vec<f64> = (0..n)
                    .map(|i| t_end * (i as f64 / (n - 1) as f64))
                    .collect();
                Some((times, 1)) // index 0 is emitted as the initial sample
            }
        };
        Output {
            times: vec![0.0],
            samples: vec![y0.to_vec()],
            grid,
        }
    }

    /// Records an accepted step from `(t0, y0)` to `(t1, y1)`.
    fn on_step(&mut self, t0: f64, y0: &[f64], t1: f64, y1: &[f64]) {
        match &mut self.grid {
            None => {
                self.times.push(t1);
                self.samples.push(y1.to_vec());
            }
            Some((grid_times, next)) => {
                while *next < grid_times.len() && grid_times[*next] <= t1 {
                    let tg = grid_times[*next];
                    let theta = if t1 > t0 { (tg - t0) / (t1 - t0) } else { 1.0 };
                    let row: Vec<f64> = y0
                        .iter()
                        .zip(y1)
                        .map(|(a, b)| a + theta * (b - a))
                        .collect();
                    self.times.push(tg);
                    self.samples.push(row);
                    *next += 1;
                }
            }
        }
    }

    /// Flushes any remaining grid points (floating-point stragglers land on
    /// the final state) and returns the collected samples.
    fn finish(mut self, t_end: f64, y_final: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        if let Some((grid_times, next)) = &mut self.grid {
            while *next < grid_times.len() {
                self.times.push(grid_times[*next]);
                self.samples.push(y_final.to_vec());
                *next += 1;
            }
        } else if self.times.last().copied() != Some(t_end) && self.times.len() == 1 {
            // A zero-species network performs no steps; still sample t_end.
            self.times.push(t_end);
            self.samples.push(y_final.to_vec());
        }
        (self.times, self.samples)
    }
}
