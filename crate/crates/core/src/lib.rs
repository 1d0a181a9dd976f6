//! Chemical reaction network PID control: synthesis, simulation, and
//! numerical verification.
//!
//! This crate turns the classic PID feedback controller into chemistry. A
//! controller is expressed as a set of mass-action reactions over dual-rail
//! species pairs (a signal's value is the difference of two nonnegative
//! concentrations), composed with an arbitrary plant network, and the
//! resulting closed loop is integrated as an ODE system.
//!
//! The crate is organized in layers:
//!
//! * [`crn`] — networks, reactions, states, and deterministic mass-action
//!   semantics (rate vector and Jacobian);
//! * [`dsl`] — a line-oriented text format for networks with initial
//!   conditions, with a canonical pretty-printer;
//! * [`blocks`] — controller building blocks (proportional, integral,
//!   derivative, sums, differences, measurement conversion) and the
//!   closed-loop composer;
//! * [`builtins`] — a stock gene-expression plant and constant/sinusoidal
//!   reference generators;
//! * [`sim`] — adaptive explicit and stiff ODE integration with
//!   nonnegativity handling, trajectories, and CSV export;
//! * [`analysis`] — the verification experiments: asymptotic-correctness
//!   ladders for the controller blocks and PI-versus-PID closed-loop
//!   comparisons.
//!
//! The most common types are re-exported at the crate root.

pub mod analysis;
pub mod blocks;
pub mod builtins;
pub mod crn;
pub mod dsl;
pub mod sim;

pub use analysis::{
    compare_pi_pid, derivative_convergence, proportional_convergence, run_comparison,
    AnalysisError, CompareOptions, ComparisonReport, ComparisonRun, ControllerMetrics,
    ConvergenceReport, ReferenceProfile, SineInput,
};
pub use blocks::{
    build_closed_loop, Actuation, BlockError, BlockParams, DualRailSignal, Gains, LoopRates,
    LoopSpec, RateOverride,
};
pub use crn::{
    mass_action_jacobian, mass_action_rhs, union, Complex, Crn, CrnError, Reaction, SpeciesId,
    State,
};
pub use dsl::{format_crn, parse_crn, CrnDocument, ParseError};
pub use sim::{
    simulate, simulate_document, Method, Metrics, OutputGrid, SimError, SimOptions, SimStats,
    Trajectory, Window,
};
