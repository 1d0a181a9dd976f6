//! Acceptance suite: one test per claim the library stakes, each printing a
//! single pass/fail line (run with `--nocapture` to see them all).
//!
//! Every tolerance here is pinned — these are the numbers the crate
//! promises, not descriptions of current behavior.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use crnpid::builtins::{constant_reference, gene_expression_plant, sine_reference};
use crnpid::{
    build_closed_loop, derivative_convergence, format_crn, mass_action_rhs, parse_crn,
    proportional_convergence, run_comparison, Actuation, BlockParams, CompareOptions, Crn,
    CrnDocument, Gains, LoopSpec, Reaction, ReferenceProfile, SimOptions, SineInput, SpeciesId,
    State, Trajectory,
};

const TOTAL: usize = 8;

/// Runs one acceptance criterion, printing `pass`/`FAIL` with its runtime
/// and enforcing the pinned wall-clock budget.
fn criterion(index: usize, label: &str, budget_seconds: f64, body: impl FnOnce()) {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed().as_secs_f64();
    let verdict = if outcome.is_ok() && elapsed <= budget_seconds { "pass" } else { "FAIL" };
    println!("acceptance {index}/{TOTAL} — {label}: {verdict} ({elapsed:.2}s)");
    if let Err(panic) = outcome {
        std::panic::resume_unwind(panic);
    }
    assert!(
        elapsed <= budget_seconds,
        "criterion {index} exceeded its {budget_seconds}s budget ({elapsed:.2}s)"
    );
}

/// A tiny deterministic generator (xorshift*), so the randomized criteria
/// are reproducible without extra dependencies.
struct Rng(u64);

impl Rng {
    fn next(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        x.wrapping_mul(0x2545F4914F6CDD1D)
    }

    fn below(&mut self, bound: u64) -> u64 {
        self.next() % bound
    }

    /// Uniform in `[0, scale)` with plenty of mantissa noise.
    fn uniform(&mut self, scale: f64) -> f64 {
        (self.next() >> 11) as f64 / (1u64 << 53) as f64 * scale
    }
}

fn species(name: &str) -> SpeciesId {
    SpeciesId::new(name).unwrap()
}

#[test]
fn plant_rhs_matches_hand_derived_odes_and_settles_at_the_fixed_point() {
    criterion(1, "plant dynamics match the hand-derived ground truth", 1.0, || {
        let plant = gene_expression_plant();
        let crn = plant.crn();
        // Species order is mRNA, Pro, microRNA; with unit rates the
        // ground-truth derivatives are
        //   d mRNA     = 1 − mRNA − mRNA·microRNA
        //   d Pro      = mRNA − Pro
        //   d microRNA = 1 − microRNA − mRNA·microRNA
        assert_eq!(
            crn.species().iter().map(|s| s.name()).collect::<Vec<_>>(),
            ["mRNA", "Pro", "microRNA"]
        );
        let mut rng = Rng(0x5EED_0001);
        for _ in 0..100 {
            let m = rng.uniform(10.0);
            let p = rng.uniform(10.0);
            let u = rng.uniform(10.0);
            let state = State::new(crn, vec![m, p, u]).unwrap();
            let rhs = mass_action_rhs(crn, &state).unwrap();
            let expected = [1.0 - m - m * u, m - p, 1.0 - u - m * u];
            for (got, want) in rhs.iter().zip(expected) {
                assert!(
                    (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                    "rhs {got} vs hand value {want} at state ({m}, {p}, {u})"
                );
            }
        }

        let options = SimOptions::new(50.0).with_tolerances(1e-10, 1e-13);
        let trajectory = crnpid::simulate_document(&plant, &options).unwrap();
        let pro = trajectory.series(&species("Pro")).unwrap();
        let fixed_point = (5.0f64.sqrt() - 1.0) / 2.0;
        let final_pro = *pro.last().unwrap();
        assert!(
            (final_pro - fixed_point).abs() < 1e-4,
            "Pro(50) = {final_pro}, expected the open-loop fixed point {fixed_point}"
        );
    });
}

/// The stock tracking loop: builtin plant, split actuation, constant
/// reference of 10, gains tuned for settling.
fn tracking_spec() -> LoopSpec {
    let mut spec = LoopSpec::new(
        gene_expression_plant(),
        species("Pro"),
        Actuation::Split {
            positive_target: species("mRNA"),
            negative_target: species("microRNA"),
        },
        constant_reference(10.0),
    );
    spec.gains = Gains::new(1.0, 0.2, 1.0).unwrap();
    spec
}

/// The oscillation-contrast loop: same plant, sine reference, and the
/// aggressive gains that leave the PI loop underdamped.
fn contrast_spec(actuation: Actuation) -> LoopSpec {
    let mut spec = LoopSpec::new(
        gene_expression_plant(),
        species("Pro"),
        actuation,
        sine_reference(10.0, 0.01),
    );
    spec.gains = Gains::new(1.0, 1.0, 1.0).unwrap();
    spec
}

fn split_actuation() -> Actuation {
    Actuation::Split {
        positive_target: species("mRNA"),
        negative_target: species("microRNA"),
    }
}

#[test]
fn every_closed_loop_satisfies_the_integral_identity() {
    criterion(2, "the integral rails integrate the error to within 1e-4", 5.0, || {
        let compare = CompareOptions::default();
        let constant =
            run_comparison(&tracking_spec(), ReferenceProfile::Constant, &compare).unwrap();
        let sine = run_comparison(
            &contrast_spec(split_actuation()),
            ReferenceProfile::Sine,
            &compare,
        )
        .unwrap();
        for (name, residual) in [
            ("constant/pi", constant.report.integral_residual_pi),
            ("constant/pid", constant.report.integral_residual_pid),
            ("sine/pi", sine.report.integral_residual_pi),
            ("sine/pid", sine.report.integral_residual_pid),
        ] {
            assert!(residual <= 1e-4, "{name} integral residual {residual:e} > 1e-4");
        }
    });
}

#[test]
fn derivative_error_at_least_halves_when_its_rates_scale_tenfold() {
    criterion(3, "a tenfold faster derivative block at least halves its error", 10.0, || {
        let params = BlockParams::new(1.0, 10.0, 10.0).unwrap();
        let input = SineInput { amplitude: 10.0, rate: 0.01 };
        let report = derivative_convergence(&params, &[1.0, 10.0], &input).unwrap();
        let (slow, fast) = (report.errors[0], report.errors[1]);
        assert!(
            fast <= 0.5 * slow,
            "sup error went {slow:e} -> {fast:e}; expected at least a halving"
        );
    });
}

#[test]
fn both_controllers_hold_a_constant_reference_within_half_a_unit() {
    criterion(4, "PI and PID track a constant reference within 0.5", 10.0, || {
        let run = run_comparison(
            &tracking_spec(),
            ReferenceProfile::Constant,
            &CompareOptions::default(),
        )
        .unwrap();
        let pi = run.report.pi.steady.max_abs_err;
        let pid = run.report.pid.steady.max_abs_err;
        assert!(pi < 0.5, "PI deviation {pi} over the settling window");
        assert!(pid < 0.5, "PID deviation {pid} over the settling window");
    });
}

#[test]
fn derivative_action_improves_the_sine_transient_for_every_actuation() {
    criterion(5, "adding derivative action never worsens the sine transient", 30.0, || {
        let actuations = [
            ("split", split_actuation()),
            ("annihilate-mrna", Actuation::Sequester { target: species("mRNA") }),
            ("annihilate-output", Actuation::Sequester { target: species("Pro") }),
        ];
        for (name, actuation) in actuations {
            let run = run_comparison(
                &contrast_spec(actuation),
                ReferenceProfile::Sine,
                &CompareOptions::default(),
            )
            .unwrap();
            let pid = run.report.pid.transient.rmse;
            let pi = run.report.pi.transient.rmse;
            assert!(
                pid <= pi,
                "{name}: PID transient rmse {pid} exceeds PI {pi}"
            );
        }
    });
}

#[test]
fn proportional_error_strictly_decreases_along_the_speed_ladder() {
    criterion(6, "faster proportional stages shrink steady-state error", 5.0, || {
        let params = BlockParams::new(1.0, 1.0, 1.0).unwrap();
        let report = proportional_convergence(&params, &[1.0, 10.0, 100.0]).unwrap();
        assert!(
            report.monotone_decrease,
            "ladder errors {:?} are not decreasing with 5% slack",
            report.errors
        );
        for pair in report.errors.windows(2) {
            assert!(pair[1] <= 0.95 * pair[0], "step {pair:?} lacks 5% improvement");
        }
    });
}

/// Builds one random document: up to 10 species with adversarial names
/// (rail suffixes, dotted segments), up to 20 reactions with multiplicities,
/// and a random sprinkle of initial conditions.
fn random_document(rng: &mut Rng) -> CrnDocument {
    let n_species = 1 + rng.below(10) as usize;
    let names: Vec<SpeciesId> = (0..n_species)
        .map(|i| {
            let name = match rng.below(4) {
                0 => format!("S{i}"),
                1 => format!("G{i}+"),
                2 => format!("X{i}-"),
                _ => format!("n{i}.a"),
            };
            species(&name)
        })
        .collect();

    let n_reactions = 1 + rng.below(20) as usize;
    let reactions: Vec<Reaction> = (0..n_reactions)
        .map(|_| {
            let side = |rng: &mut Rng| -> Vec<(SpeciesId, u32)> {
                let terms = rng.below(3) as usize;
                (0..terms)
                    .map(|_| {
                        let s = names[rng.below(n_species as u64) as usize].clone();
                        (s, 1 + rng.below(3) as u32)
                    })
                    .collect()
            };
            let reactants = side(rng);
            let mut products = side(rng);
            if reactants.is_empty() && products.is_empty() {
                // Keep fully empty reactions rare but present.
                if rng.below(4) != 0 {
                    products = side(rng);
                }
            }
            let rate = match rng.below(8) {
                0 => 0.001,
                1 => 0.125,
                2 => 0.5,
                3 => 1.0,
                4 => 3.75,
                5 => 1_000_000.0,
                _ => (1 + rng.below(997)) as f64 / 8.0,
            };
            Reaction::new(reactants, products, rate).unwrap()
        })
        .collect();

    let crn = Crn::new(names.clone(), reactions).unwrap();
    let mut initials: Vec<(SpeciesId, f64)> = Vec::new();
    for s in &names {
        if rng.below(2) == 0 {
            initials.push((s.clone(), rng.below(401) as f64 / 8.0));
        }
    }
    CrnDocument::new(crn, initials).unwrap()
}

/// Checks that a document survives the text form: the first trip may only
/// canonicalize species order, and the canonical form is a fixed point.
fn assert_round_trips(doc: &CrnDocument, context: &str) {
    let text = format_crn(doc);
    let reparsed = parse_crn(&text).unwrap_or_else(|e| panic!("{context}: reparse failed: {e}"));
    assert_eq!(doc.crn().reactions(), reparsed.crn().reactions(), "{context}: reactions changed");
    let sorted = |crn: &Crn| {
        let mut names: Vec<String> = crn.species().iter().map(|s| s.name().to_string()).collect();
        names.sort();
        names
    };
    assert_eq!(sorted(doc.crn()), sorted(reparsed.crn()), "{context}: species set changed");
    assert_eq!(doc.initial(), reparsed.initial(), "{context}: initial conditions changed");

    let canonical = format_crn(&reparsed);
    let settled = parse_crn(&canonical).unwrap();
    assert_eq!(reparsed, settled, "{context}: canonical form is not a fixed point");
    assert_eq!(canonical, format_crn(&settled), "{context}: canonical text is not stable");
}

#[test]
fn the_dsl_round_trips_a_thousand_random_networks_and_every_builtin() {
    criterion(7, "the text form round-trips 1000 random networks and all builtins", 5.0, || {
        let mut rng = Rng(0x5EED_0007);
        for index in 0..1000 {
            let doc = random_document(&mut rng);
            assert_round_trips(&doc, &format!("random network {index}"));
        }

        assert_round_trips(&gene_expression_plant(), "gene-expression plant");
        assert_round_trips(&constant_reference(10.0), "constant reference");
        assert_round_trips(&sine_reference(10.0, 0.01), "sine reference");
        for (name, spec) in [
            ("tracking loop", tracking_spec()),
            ("contrast loop", contrast_spec(split_actuation())),
        ] {
            let loop_doc = build_closed_loop(&spec).unwrap();
            assert_round_trips(&loop_doc, name);
        }
    });
}

fn assert_nonnegative(trajectory: &Trajectory, context: &str) {
    for (row, sample) in trajectory.samples().iter().enumerate() {
        for value in sample {
            assert!(*value >= 0.0, "{context}: negative exported sample {value} in row {row}");
        }
    }
    let floor = trajectory.stats().min_before_clamp;
    assert!(floor >= -1e-9, "{context}: pre-clamp excursion {floor:e} below -1e-9");
}

#[test]
fn no_trajectory_ever_exports_a_negative_sample() {
    criterion(8, "every exported sample is nonnegative, pre-clamp dips stay above -1e-9", 30.0, || {
        let plant = crnpid::simulate_document(
            &gene_expression_plant(),
            &SimOptions::new(50.0),
        )
        .unwrap();
        assert_nonnegative(&plant, "open-loop plant");

        // Loose tolerances invite overshoot below zero; the clamp and its
        // reporting must still hold the line.
        let loose = crnpid::simulate_document(
            &gene_expression_plant(),
            &SimOptions::new(50.0).with_tolerances(1e-3, 1e-9),
        )
        .unwrap();
        assert_nonnegative(&loose, "loose-tolerance plant");

        let compare = CompareOptions::default();
        let constant =
            run_comparison(&tracking_spec(), ReferenceProfile::Constant, &compare).unwrap();
        assert_nonnegative(&constant.pi, "constant-reference PI loop");
        assert_nonnegative(&constant.pid, "constant-reference PID loop");

        let sine = run_comparison(
            &contrast_spec(split_actuation()),
            ReferenceProfile::Sine,
            &compare,
        )
        .unwrap();
        assert_nonnegative(&sine.pi, "sine-reference PI loop");
        assert_nonnegative(&sine.pid, "sine-reference PID loop");
    });
}
