//! Core chemical reaction network types and deterministic mass-action semantics.
//!
//! A [`Crn`] is a finite set of species together with a list of reactions
//! `r ->{k} p`, where `r` and `p` are multisets of species and `k > 0` is a
//! rate coefficient. Under deterministic mass-action semantics the species
//! concentrations `x` evolve by
//!
//! ```text
//! dx/dt = Σ_τ  υ_τ · k_τ · Π_i x_i^(r_τ,i)
//! ```
//!
//! where `υ_τ = p_τ − r_τ` is the state-change vector of reaction `τ`. This
//! module provides the network types, the right-hand side and its analytic
//! Jacobian, and the structural operations (union, renaming) used to compose
//! larger networks from blocks.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

/// Largest multiplicity a species may have in a single complex.
///
/// Mass-action powers are evaluated with small integer exponents; capping the
/// multiplicity keeps those powers cheap and well-conditioned, and no network
/// in this domain comes close to the cap.
pub const MAX_MULTIPLICITY: u32 = 16;

/// How far below zero a concentration may sit before it is considered invalid.
///
/// Adaptive integration legitimately produces tiny negative concentrations on
/// the order of the absolute tolerance; values in `[-NEGATIVE_TOLERANCE, 0)`
/// are treated as exact zeros when evaluating rates.
pub const NEGATIVE_TOLERANCE: f64 = 1e-9;

/// Errors produced by network construction and evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CrnError {
    /// A species name was empty.
    #[error("species name must be nonempty")]
    EmptySpeciesName,
    /// The same species was listed twice when constructing a network.
    #[error("duplicate species `{0}`")]
    DuplicateSpecies(SpeciesId),
    /// A reaction referred to a species the network does not contain.
    #[error("unknown species `{0}`")]
    UnknownSpecies(SpeciesId),
    /// A reaction was given a rate that is not finite and positive.
    #[error("reaction rate must be finite and positive, got {0}")]
    NonPositiveRate(f64),
    /// A complex listed a species with multiplicity zero.
    #[error("multiplicity of `{0}` must be positive (omit the species for zero)")]
    ZeroMultiplicity(SpeciesId),
    /// A complex exceeded [`MAX_MULTIPLICITY`] for one species.
    #[error("multiplicity {multiplicity} of `{species}` exceeds the maximum {MAX_MULTIPLICITY}")]
    MultiplicityTooLarge { species: SpeciesId, multiplicity: u32 },
    /// A state vector had the wrong number of entries for the network.
    #[error("state has {got} entries but the network has {expected} species")]
    DimensionMismatch { expected: usize, got: usize },
    /// A state entry was not a finite number.
    #[error("concentration of `{species}` is not finite")]
    NonFiniteConcentration { species: SpeciesId },
    /// A state entry was negative beyond [`NEGATIVE_TOLERANCE`].
    #[error("concentration of `{species}` is negative ({value})")]
    NegativeConcentration { species: SpeciesId, value: f64 },
    /// A species renaming mapped two distinct species to the same name.
    #[error("renaming collides on `{0}`")]
    RenameCollision(SpeciesId),
}

/// Name of a chemical species.
///
/// Names are nonempty strings; two species are the same exactly when their
/// names are equal. The DSL additionally restricts names to a printable
/// subset (see [`crate::dsl`]), but the core types accept any nonempty name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpeciesId(String);

impl SpeciesId {
    /// Creates a species id, rejecting empty names.
    pub fn new(name: impl Into<String>) -> Result<Self, CrnError> {
        let name = name.into();
        if name.is_empty() {
            return Err(CrnError::EmptySpeciesName);
        }
        Ok(SpeciesId(name))
    }

    /// The species name.
    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SpeciesId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for SpeciesId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// A multiset of species: the left- or right-hand side of a reaction.
///
/// Stored as a sorted map from species to multiplicity; species with
/// multiplicity zero are never stored. An empty complex is the empty multiset
/// `∅`.
pub type Complex = BTreeMap<SpeciesId, u32>;

/// Accumulates an iterator of `(species, multiplicity)` pairs into a complex,
/// summing duplicates and enforcing the multiplicity rules.
fn build_complex(
    terms: impl IntoIterator<Item = (SpeciesId, u32)>,
) -> Result<Complex, CrnError> {
    let mut complex = Complex::new();
    for (species, multiplicity) in terms {
        if multiplicity == 0 {
            return Err(CrnError::ZeroMultiplicity(species));
        }
        *complex.entry(species).or_insert(0) += multiplicity;
    }
    for (species, &multiplicity) in &complex {
        if multiplicity > MAX_MULTIPLICITY {
            return Err(CrnError::MultiplicityTooLarge {
                species: species.clone(),
                multiplicity,
            });
        }
    }
    Ok(complex)
}

/// A single reaction `reactants ->{rate} products`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    reactants: Complex,
    products: Complex,
    rate: f64,
}

impl Reaction {
    /// Creates a reaction from reactant and product terms.
    ///
    /// Duplicate species within one side are accumulated (`C + C` becomes
    /// `2C`). The rate must be finite and positive; multiplicities must be in
    /// `1..=MAX_MULTIPLICITY` after accumulation.
    pub fn new(
        reactants: impl IntoIterator<Item = (SpeciesId, u32)>,
        products: impl IntoIterator<Item = (SpeciesId, u32)>,
        rate: f64,
    ) -> Result<Self, CrnError> {
        if !rate.is_finite() || rate <= 0.0 {
            return Err(CrnError::NonPositiveRate(rate));
        }
        Ok(Reaction {
            reactants: build_complex(reactants)?,
            products: build_complex(products)?,
            rate,
        })
    }

    /// The reactant complex.
    pub fn reactants(&self) -> &Complex {
        &self.reactants
    }

    /// The product complex.
    pub fn products(&self) -> &Complex {
        &self.products
    }

    /// The rate coefficient.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Returns a copy of this reaction with a different rate coefficient.
    pub fn with_rate(&self, rate: f64) -> Result<Self, CrnError> {
        if !rate.is_finite() || rate <= 0.0 {
            return Err(CrnError::NonPositiveRate(rate));
        }
        Ok(Reaction { rate, ..self.clone() })
    }

    /// Every species mentioned by the reaction, reactants before products,
    /// each side in its stored (sorted) order.
    pub fn species(&self) -> impl Iterator<Item = &SpeciesId> {
        self.reactants.keys().chain(self.products.keys())
    }
}

/// A chemical reaction network: an ordered species list plus reactions.
///
/// The species order is fixed at construction and defines the meaning of
/// state vectors and the column order of trajectories. Networks are immutable
/// after construction; composition builds new networks.
#[derive(Debug, Clone)]
pub struct Crn {
    species: Vec<SpeciesId>,
    index: HashMap<SpeciesId, usize>,
    reactions: Vec<Reaction>,
}

impl PartialEq for Crn {
    fn eq(&self, other: &Self) -> bool {
        self.species == other.species && self.reactions == other.reactions
    }
}

impl Crn {
    /// Creates a network with an explicit species order.
    ///
    /// Every species mentioned by a reaction must appear in `species`, and
    /// the species list must be free of duplicates.
    pub fn new(species: Vec<SpeciesId>, reactions: Vec<Reaction>) -> Result<Self, CrnError> {
        let mut index = HashMap::with_capacity(species.len());
        for (i, s) in species.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(CrnError::DuplicateSpecies(s.clone()));
            }
        }
        for reaction in &reactions {
            for s in reaction.species() {
                if !index.contains_key(s) {
                    return Err(CrnError::UnknownSpecies(s.clone()));
                }
            }
        }
        Ok(Crn { species, index, reactions })
    }

    /// Creates a network whose species are discovered from the reactions in
    /// first-appearance order (reactions in order, reactants before
    /// products).
    pub fn from_reactions(reactions: Vec<Reaction>) -> Self {
        let mut species = Vec::new();
        let mut index = HashMap::new();
        for reaction in &reactions {
            for s in reaction.species() {
                if !index.contains_key(s) {
                    index.insert(s.clone(), species.len());
                    species.push(s.clone());
                }
            }
        }
        Crn { species, index, reactions }
    }

    /// An empty network: no species, no reactions.
    pub fn empty() -> Self {
        Crn { species: Vec::new(), index: HashMap::new(), reactions: Vec::new() }
    }

    /// The species in their fixed order.
    pub fn species(&self) -> &[SpeciesId] {
        &self.species
    }

    /// The reactions in their fixed order.
    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    /// Number of species.
    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    /// Position of a species in the species order, if present.
    pub fn species_index(&self, species: &SpeciesId) -> Option<usize> {
        self.index.get(species).copied()
    }

    /// Whether the network contains the species.
    pub fn contains(&self, species: &SpeciesId) -> bool {
        self.index.contains_key(species)
    }
}

/// A concentration vector for a particular network.
///
/// Entries follow the network's species order. Entries must be finite and
/// nonnegative; values in `[-NEGATIVE_TOLERANCE, 0)` are accepted (and read
/// as zero) because adaptive integration produces them legitimately.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    values: Vec<f64>,
}

impl State {
    /// Creates a state for `crn`, validating length, finiteness, and sign.
    pub fn new(crn: &Crn, values: Vec<f64>) -> Result<Self, CrnError> {
        if values.len() != crn.n_species() {
            return Err(CrnError::DimensionMismatch {
                expected: crn.n_species(),
                got: values.len(),
            });
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(CrnError::NonFiniteConcentration {
                    species: crn.species[i].clone(),
                });
            }
            if v < -NEGATIVE_TOLERANCE {
                return Err(CrnError::NegativeConcentration {
                    species: crn.species[i].clone(),
                    value: v,
                });
            }
        }
        Ok(State { values })
    }

    /// The concentration entries in species order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Consumes the state, returning the raw vector.
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Clamps a concentration for rate evaluation: values in
/// `[-NEGATIVE_TOLERANCE, 0)` read as zero, everything else as itself.
#[inline]
fn clamped(x: f64) -> f64 {
    if x < 0.0 && x >= -NEGATIVE_TOLERANCE {
        0.0
    } else {
        x
    }
}

/// Net state change `products − reactants` of a reaction, as a vector over
/// the network's species order.
///
/// Fails if the reaction mentions a species the network does not contain.
pub fn state_change(reaction: &Reaction, crn: &Crn) -> Result<Vec<i64>, CrnError> {
    let mut change = vec![0i64; crn.n_species()];
    for (s, &m) in reaction.reactants() {
        let i = crn
            .species_index(s)
            .ok_or_else(|| CrnError::UnknownSpecies(s.clone()))?;
        change[i] -= i64::from(m);
    }
    for (s, &m) in reaction.products() {
        let i = crn
            .species_index(s)
            .ok_or_else(|| CrnError::UnknownSpecies(s.clone()))?;
        change[i] += i64::from(m);
    }
    Ok(change)
}

/// Deterministic mass-action right-hand side `dx/dt` at the given state.
///
/// Each reaction contributes `υ · k · Π_i x_i^(r_i)`. State entries in
/// `[-NEGATIVE_TOLERANCE, 0)` are read as zero; the state must have one entry
/// per species.
pub fn mass_action_rhs(crn: &Crn, state: &State) -> Result<Vec<f64>, CrnError> {
    if state.values.len() != crn.n_species() {
        return Err(CrnError::DimensionMismatch {
            expected: crn.n_species(),
            got: state.values.len(),
        });
    }
    let compiled = CompiledCrn::new(crn);
    let mut dx = vec![0.0; crn.n_species()];
    compiled.rhs_into(&state.values, &mut dx);
    Ok(dx)
}

/// Analytic Jacobian `∂(dx/dt)_j / ∂x_i` of the mass-action right-hand side.
///
/// Row `j`, column `i` holds the sensitivity of species `j`'s rate to species
/// `i`'s concentration. Uses the same clamping rule as [`mass_action_rhs`].
pub fn mass_action_jacobian(crn: &Crn, state: &State) -> Result<DMatrix<f64>, CrnError> {
    if state.values.len() != crn.n_species() {
        return Err(CrnError::DimensionMismatch {
            expected: crn.n_species(),
            got: state.values.len(),
        });
    }
    let compiled = CompiledCrn::new(crn);
    let mut jac = DMatrix::zeros(crn.n_species(), crn.n_species());
    compiled.jacobian_into(&state.values, &mut jac);
    Ok(jac)
}

/// Union of two networks, merging species by name.
///
/// Species order is `a`'s species followed by `b`'s species not already in
/// `a`; reactions are `a`'s followed by `b`'s. Duplicate reactions are kept —
/// the union of a network with itself doubles every rate's effect.
pub fn union(a: &Crn, b: &Crn) -> Crn {
    let mut species = a.species.clone();
    let mut index = a.index.clone();
    for s in &b.species {
        if !index.contains_key(s) {
            index.insert(s.clone(), species.len());
            species.push(s.clone());
        }
    }
    let mut reactions = a.reactions.clone();
    reactions.extend(b.reactions.iter().cloned());
    Crn { species, index, reactions }
}

/// Renames species throughout a network.
///
/// `mapping` sends old names to new names; species not in the mapping keep
/// their names. The induced map must be injective on the network's species —
/// two species may not end up with the same name. Mapping entries for
/// species the network does not contain are ignored.
pub fn rename_species(
    crn: &Crn,
    mapping: &HashMap<SpeciesId, SpeciesId>,
) -> Result<Crn, CrnError> {
    let renamed = |s: &SpeciesId| -> SpeciesId { mapping.get(s).cloned().unwrap_or_else(|| s.clone()) };
    let species: Vec<SpeciesId> = crn.species.iter().map(&renamed).collect();
    let mut index = HashMap::with_capacity(species.len());
    for (i, s) in species.iter().enumerate() {
        if index.insert(s.clone(), i).is_some() {
            return Err(CrnError::RenameCollision(s.clone()));
        }
    }
    let rename_complex = |c: &Complex| -> Complex {
        c.iter().map(|(s, &m)| (renamed(s), m)).collect()
    };
    let reactions = crn
        .reactions
        .iter()
        .map(|r| Reaction {
            reactants: rename_complex(&r.reactants),
            products: rename_complex(&r.products),
            rate: r.rate,
        })
        .collect();
    Ok(Crn { species, index, reactions })
}

/// A network lowered to index-based form for fast repeated evaluation.
///
/// Construction resolves every species name to its position once so the
/// integrator's inner loop touches only integers and floats.
#[derive(Debug, Clone)]
pub(crate) struct CompiledCrn {
    n: usize,
    reactions: Vec<CompiledReaction>,
}

#[derive(Debug, Clone)]
struct CompiledReaction {
    rate: f64,
    /// `(species index, multiplicity)` for each distinct reactant.
    reactants: Vec<(usize, u32)>,
    /// `(species index, net change)` for each species the reaction moves.
    changes: Vec<(usize, f64)>,
}

impl CompiledCrn {
    pub(crate) fn new(crn: &Crn) -> Self {
        let reactions = crn
            .reactions
            .iter()
            .map(|r| {
                let reactants: Vec<(usize, u32)> = r
                    .reactants
                    .iter()
                    .map(|(s, &m)| (crn.index[s], m))
                    .collect();
                let mut net: BTreeMap<usize, i64> = BTreeMap::new();
                for (s, &m) in &r.reactants {
                    *net.entry(crn.index[s]).or_insert(0) -= i64::from(m);
                }
                for (s, &m) in &r.products {
                    *net.entry(crn.index[s]).or_insert(0) += i64::from(m);
                }
                let changes = net
                    .into_iter()
                    .filter(|&(_, d)| d != 0)
                    .map(|(i, d)| (i, d as f64))
                    .collect();
                CompiledReaction { rate: r.rate, reactants, changes }
            })
            .collect();
        CompiledCrn { n: crn.n_species(), reactions }
    }

    pub(crate) fn n_species(&self) -> usize {
        self.n
    }

    /// Largest rate coefficient in the network, or 0 if there are no
    /// reactions. Used as a crude stiffness signal.
    pub(crate) fn max_rate(&self) -> f64 {
        self.reactions.iter().map(|r| r.rate).fold(0.0, f64::max)
    }

    /// Writes the mass-action right-hand side into `dx`.
    ///
    /// Negative entries within [`NEGATIVE_TOLERANCE`] read as zero; entries
    /// further below zero (which occur only in trial stages of adaptive
    /// steps) are evaluated as-is, extending the polynomial smoothly.
    pub(crate) fn rhs_into(&self, x: &[f64], dx: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(dx.len(), self.n);
        dx.fill(0.0);
        for reaction in &self.reactions {
            let mut flux = reaction.rate;
            for &(i, m) in &reaction.reactants {
                flux *= clamped(x[i]).powi(m as i32);
            }
            for &(j, change) in &reaction.changes {
                dx[j] += change * flux;
            }
        }
    }

    /// Writes the analytic Jacobian of the right-hand side into `jac`
    /// (row = equation, column = differentiation variable).
    pub(crate) fn jacobian_into(&self, x: &[f64], jac: &mut DMatrix<f64>) {
        debug_assert_eq!(x.len(), self.n);
        jac.fill(0.0);
        for reaction in &self.reactions {
            for (a, &(col, m_a)) in reaction.reactants.iter().enumerate() {
                // d/dx_col of the flux monomial.
                let mut factor = reaction.rate * f64::from(m_a);
                for (b, &(i, m)) in reaction.reactants.iter().enumerate() {
                    let exponent = if a == b { m - 1 } else { m };
                    factor *= clamped(x[i]).powi(exponent as i32);
                }
                for &(j, change) in &reaction.changes {
                    jac[(j, col)] += change * factor;
                }
            }
        }
    }
}
