//! Stock networks: a small gene-expression plant and reference generators.
//!
//! These are the networks the verification experiments and the command-line
//! tool use by default. Each returns a [`CrnDocument`] whose species names
//! are part of the public interface (the loop builder and the CLI refer to
//! them by name).

use crate::crn::{Crn, Reaction, SpeciesId};
use crate::dsl::CrnDocument;

/// The measured output of [`gene_expression_plant`].
pub const GENE_EXPRESSION_OUTPUT: &str = "Pro";
/// The plant species boosted by positive actuation.
pub const GENE_EXPRESSION_TRANSCRIPT: &str = "mRNA";
/// The plant species that sequesters the transcript.
pub const GENE_EXPRESSION_ANTAGONIST: &str = "microRNA";

fn sp(name: &str) -> SpeciesId {
    SpeciesId::new(name).expect("builtin species names are valid")
}

fn rxn(reactants: &[(&str, u32)], products: &[(&str, u32)], rate: f64) -> Reaction {
    Reaction::new(
        reactants.iter().map(|&(s, m)| (sp(s), m)),
        products.iter().map(|&(s, m)| (sp(s), m)),
        rate,
    )
    .expect("builtin reactions are valid")
}

/// A gene-expression plant: a transcript `mRNA` is produced and degraded,
/// translates into the protein `Pro`, and is sequestered by a `microRNA`
/// that is itself produced and degraded. All rates are 1, and the protein
/// starts at 1.
///
/// Left to itself the plant settles at `Pro = (√5 − 1)/2 ≈ 0.618`: the
/// transcript balance `1 − m − m² = 0` pins the golden-ratio conjugate, and
/// the protein tracks the transcript. Feedback control has to fight the
/// sequestration channel to move the protein anywhere else.
pub fn gene_expression_plant() -> CrnDocument {
    let crn = Crn::from_reactions(vec![
        rxn(&[], &[("mRNA", 1)], 1.0),
        rxn(&[("mRNA", 1)], &[], 1.0),
        rxn(&[("mRNA", 1)], &[("mRNA", 1), ("Pro", 1)], 1.0),
        rxn(&[("Pro", 1)], &[], 1.0),
        rxn(&[("mRNA", 1), ("microRNA", 1)], &[], 1.0),
        rxn(&[("microRNA", 1)], &[], 1.0),
        rxn(&[], &[("microRNA", 1)], 1.0),
    ]);
    CrnDocument::new(crn, [(sp("Pro"), 1.0)]).expect("builtin plant is valid")
}

/// A reference that settles to a constant: `R+` is produced at `level` and
/// decays at 1, so the decoded reference follows `level · (1 − e^{−t})`.
/// The minus rail exists but stays at zero.
///
/// # Panics
///
/// Panics if `level` is negative or not finite.
pub fn constant_reference(level: f64) -> CrnDocument {
    assert!(
        level.is_finite() && level >= 0.0,
        "reference level must be finite and nonnegative, got {level}"
    );
    let mut reactions = Vec::new();
    if level > 0.0 {
        reactions.push(rxn(&[], &[("R+", 1)], level));
    }
    reactions.push(rxn(&[("R+", 1)], &[], 1.0));
    let discovered = Crn::from_reactions(reactions);
    let mut species = discovered.species().to_vec();
    species.push(sp("R-"));
    let crn = Crn::new(species, discovered.reactions().to_vec())
        .expect("builtin reference is valid");
    CrnDocument::new(crn, [(sp("R-"), 0.0)]).expect("builtin reference is valid")
}

/// A reference oscillator: the decoded reference follows
/// `amplitude · sin(rate · t)`.
///
/// An auxiliary signal `A` starts at `amplitude` and rotates into `R`: each
/// rail of `A` feeds the like-signed rail of `R`, each rail of `R` feeds the
/// opposite rail of `A`, and both pairs annihilate — six reactions, all at
/// `rate`. The annihilations keep the rails bounded without touching the
/// decoded values, which obey `R' = rate·A`, `A' = −rate·R` exactly.
///
/// # Panics
///
/// Panics if `amplitude` is negative, `rate` is not positive, or either is
/// not finite.
pub fn sine_reference(amplitude: f64, rate: f64) -> CrnDocument {
    assert!(
        amplitude.is_finite() && amplitude >= 0.0,
        "amplitude must be finite and nonnegative, got {amplitude}"
    );
    assert!(
        rate.is_finite() && rate > 0.0,
        "rate must be finite and positive, got {rate}"
    );
    let crn = Crn::from_reactions(vec![
        rxn(&[("A+", 1)], &[("A+", 1), ("R+", 1)], rate),
        rxn(&[("A-", 1)], &[("A-", 1), ("R-", 1)], rate),
        rxn(&[("R+", 1)], &[("R+", 1), ("A-", 1)], rate),
        rxn(&[("R-", 1)], &[("R-", 1), ("A+", 1)], rate),
        rxn(&[("A+", 1), ("A-", 1)], &[], rate),
        rxn(&[("R+", 1), ("R-", 1)], &[], rate),
    ]);
    CrnDocument::new(crn, [(sp("A+"), amplitude)]).expect("builtin reference is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::DualRailSignal;
    use crate::dsl::parse_crn;
    use crate::sim::{simulate_document, SimOptions};
    use approx::assert_relative_eq;

    #[test]
    fn plant_has_the_documented_shape() {
        let doc = gene_expression_plant();
        assert_eq!(doc.crn().reactions().len(), 7);
        assert_eq!(doc.crn().n_species(), 3);
        assert_eq!(doc.initial_of(&sp("Pro")), 1.0);
        assert_eq!(doc.initial_of(&sp("mRNA")), 0.0);
    }

    #[test]
    fn free_running_plant_settles_at_the_golden_ratio_conjugate() {
        let doc = gene_expression_plant();
        let options = SimOptions::new(50.0).with_tolerances(1e-10, 1e-13);
        let traj = simulate_document(&doc, &options).unwrap();
        let target = (5.0f64.sqrt() - 1.0) / 2.0;
        for name in ["mRNA", "Pro", "microRNA"] {
            let series = traj.series(&sp(name)).unwrap();
            assert_relative_eq!(*series.last().unwrap(), target, epsilon = 1e-8);
        }
    }

    #[test]
    fn constant_reference_follows_a_saturating_exponential() {
        let doc = constant_reference(10.0);
        assert_eq!(doc.crn().reactions().len(), 2);
        // Sample at solver steps: fixed-grid output interpolates linearly,
        // which would swamp the tight epsilon here.
        let options = SimOptions::new(3.0).with_tolerances(1e-10, 1e-13);
        let traj = simulate_document(&doc, &options).unwrap();
        let r = DualRailSignal::from_base("R").unwrap();
        let decoded = traj.decode(&r).unwrap();
        for (t, value) in traj.times().iter().zip(&decoded) {
            assert_relative_eq!(*value, 10.0 * (1.0 - (-t).exp()), epsilon = 1e-7);
        }
        let minus = traj.series(&sp("R-")).unwrap();
        assert!(minus.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_level_reference_only_decays() {
        let doc = constant_reference(0.0);
        assert_eq!(doc.crn().reactions().len(), 1);
        assert!(doc.crn().contains(&sp("R-")));
    }

    #[test]
    fn sine_reference_tracks_the_target_sinusoid() {
        let doc = sine_reference(10.0, 0.01);
        assert_eq!(doc.crn().reactions().len(), 6);
        let options = SimOptions::new(200.0).with_tolerances(1e-10, 1e-13);
        let traj = simulate_document(&doc, &options).unwrap();
        let r = DualRailSignal::from_base("R").unwrap();
        let decoded = traj.decode(&r).unwrap();
        for (t, value) in traj.times().iter().zip(&decoded) {
            assert_relative_eq!(*value, 10.0 * (0.01 * t).sin(), epsilon = 1e-5);
        }
    }

    #[test]
    fn builtins_round_trip_through_the_text_format() {
        for doc in [
            gene_expression_plant(),
            constant_reference(10.0),
            constant_reference(0.0),
            sine_reference(10.0, 0.01),
        ] {
            let text = doc.to_string();
            let reparsed = parse_crn(&text).unwrap();
            assert_eq!(reparsed, doc, "round trip failed for:\n{text}");
        }
    }
}
