//! Controller blocks as reaction networks, and the closed-loop builder.
//!
//! Signals are dual-rail encoded: a signal `X` is carried by two species
//! `X+` and `X-` and its value is the concentration difference
//! `x_{X+} − x_{X-}`, so negative quantities stay representable with
//! nonnegative concentrations. Each block below computes one arithmetic
//! operation on such signals using only mass-action reactions:
//!
//! * [`proportional_block`] — output tracks `r ×` input,
//! * [`integral_block`] — output accumulates `r × ∫ input dt` exactly,
//! * [`derivative_block`] — output approaches `r × d(input)/dt` as its
//!   speed rates grow,
//! * [`addition_block`] / [`subtraction_block`] — sums and differences,
//! * [`conversion_block`] — lifts a single-species measurement onto a rail
//!   pair.
//!
//! [`build_closed_loop`] wires these into a PID feedback loop around an
//! arbitrary plant network: the plant output is converted, subtracted from a
//! reference to form the error, fed through the three controller terms, and
//! the summed control signal actuates the plant.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::crn::{union, rename_species, Complex, Crn, CrnError, Reaction, SpeciesId};
use crate::dsl::{parse_crn, CrnDocument, ParseError};

/// Errors from block construction and loop composition.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BlockError {
    #[error("gain must be finite and nonnegative, got {0}")]
    InvalidGain(f64),
    #[error("{name} rate must be finite and positive, got {value}")]
    InvalidRate { name: &'static str, value: f64 },
    #[error("a dual-rail signal needs two distinct species, got `{0}` twice")]
    IdenticalRails(SpeciesId),
    #[error("species `{0}` plays two roles in one block")]
    OverlappingSignals(SpeciesId),
    #[error("species `{0}` is not part of the plant")]
    MissingPlantSpecies(SpeciesId),
    #[error("the reference network must provide the rail `{0}`")]
    MissingReferenceRail(SpeciesId),
    #[error("species name `{0}` is used by both the plant or reference and the controller")]
    NameCollision(SpeciesId),
    #[error("override `{0}` matches no reaction in the composed loop")]
    UnmatchedOverride(String),
    #[error("override `{text}` is not a valid reaction pattern: {source}")]
    InvalidOverride { text: String, source: ParseError },
    #[error(transparent)]
    Crn(#[from] CrnError),
}

/// The two species carrying one signed signal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DualRailSignal {
    plus: SpeciesId,
    minus: SpeciesId,
}

impl DualRailSignal {
    /// Creates a signal from explicit rail species; the rails must differ.
    pub fn new(plus: SpeciesId, minus: SpeciesId) -> Result<Self, BlockError> {
        if plus == minus {
            return Err(BlockError::IdenticalRails(plus));
        }
        Ok(DualRailSignal { plus, minus })
    }

    /// Creates the signal `base` carried by `base+` and `base-`.
    pub fn from_base(base: &str) -> Result<Self, BlockError> {
        let plus = SpeciesId::new(format!("{base}+"))?;
        let minus = SpeciesId::new(format!("{base}-"))?;
        DualRailSignal::new(plus, minus)
    }

    /// The positive rail.
    pub fn plus(&self) -> &SpeciesId {
        &self.plus
    }

    /// The negative rail.
    pub fn minus(&self) -> &SpeciesId {
        &self.minus
    }
}

/// Rate parameters of a controller block.
///
/// * `r` — the block's gain (how strongly the input drives the output);
///   zero is allowed and drops the input-driven production reactions.
/// * `s` — the copy/decay rate; larger `s` makes the block a faster, more
///   ideal amplifier.
/// * `q` — the annihilation rate of the output rails.
/// * `v` — the tracking rate of the derivative block's auxiliary signal
///   (unused by the other blocks).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockParams {
    r: f64,
    s: f64,
    q: f64,
    v: f64,
}

impl BlockParams {
    /// Creates parameters with gain `r`, speed `s`, annihilation `q`, and a
    /// tracking rate of 1.
    pub fn new(r: f64, s: f64, q: f64) -> Result<Self, BlockError> {
        if !r.is_finite() || r < 0.0 {
            return Err(BlockError::InvalidGain(r));
        }
        if !s.is_finite() || s <= 0.0 {
            return Err(BlockError::InvalidRate { name: "s", value: s });
        }
        if !q.is_finite() || q <= 0.0 {
            return Err(BlockError::InvalidRate { name: "q", value: q });
        }
        Ok(BlockParams { r, s, q, v: 1.0 })
    }

    /// Replaces the derivative tracking rate `v`.
    pub fn with_tracking_rate(mut self, v: f64) -> Result<Self, BlockError> {
        if !v.is_finite() || v <= 0.0 {
            return Err(BlockError::InvalidRate { name: "v", value: v });
        }
        self.v = v;
        Ok(self)
    }

    /// Scales the speed rates `s` and `v` by `factor`, leaving the gain and
    /// annihilation rate fixed. This is the knob the asymptotic claims turn:
    /// block outputs converge to their ideal values as the factor grows.
    pub fn speed_scaled(&self, factor: f64) -> Result<Self, BlockError> {
        if !factor.is_finite() || factor <= 0.0 {
            return Err(BlockError::InvalidRate { name: "scale", value: factor });
        }
        Ok(BlockParams { r: self.r, s: self.s * factor, q: self.q, v: self.v * factor })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn v(&self) -> f64 {
        self.v
    }
}

/// Builds a reaction, mapping rate problems (zero gain products never reach
/// here, but overflowing products could) into block errors.
fn rxn(
    reactants: &[(&SpeciesId, u32)],
    products: &[(&SpeciesId, u32)],
    rate: f64,
) -> Result<Reaction, BlockError> {
    Ok(Reaction::new(
        reactants.iter().map(|&(s, m)| (s.clone(), m)),
        products.iter().map(|&(s, m)| (s.clone(), m)),
        rate,
    )?)
}

/// Checks that every species plays a single role within one block.
fn distinct(species: &[&SpeciesId]) -> Result<(), BlockError> {
    let mut seen = HashSet::new();
    for s in species {
        if !seen.insert(*s) {
            return Err(BlockError::OverlappingSignals((*s).clone()));
        }
    }
    Ok(())
}

/// Assembles a block network: species in first-appearance order over the
/// reactions, followed by declared species the reactions never mention
/// (which happens when a zero gain drops the input-driven reactions).
fn assemble(reactions: Vec<Reaction>, declared: &[&SpeciesId]) -> Crn {
    let discovered = Crn::from_reactions(reactions);
    let mut species = discovered.species().to_vec();
    for s in declared {
        if !discovered.contains(s) {
            species.push((*s).clone());
        }
    }
    Crn::new(species, discovered.reactions().to_vec())
        .expect("assembled species list covers every reaction")
}

/// Proportional term: the decoded output tracks `r ×` the decoded input.
///
/// Each input rail catalytically produces its output rail at rate `r·s`; the
/// output rails decay at `s` and annihilate at `q`. At steady state the
/// decoded output is exactly `r ×` the decoded input (the annihilation term
/// cancels in the rail difference); larger `s` shrinks the transient and the
/// rail magnitudes. A zero gain leaves only the decay and annihilation
/// reactions.
pub fn proportional_block(
    input: &DualRailSignal,
    output: &DualRailSignal,
    params: &BlockParams,
) -> Result<Crn, BlockError> {
    distinct(&[input.plus(), input.minus(), output.plus(), output.minus()])?;
    let (ip, im) = (input.plus(), input.minus());
    let (op, om) = (output.plus(), output.minus());
    let mut reactions = Vec::new();
    if params.r() > 0.0 {
        let rs = params.r() * params.s();
        reactions.push(rxn(&[(ip, 1)], &[(ip, 1), (op, 1)], rs)?);
        reactions.push(rxn(&[(im, 1)], &[(im, 1), (om, 1)], rs)?);
    }
    reactions.push(rxn(&[(op, 1), (om, 1)], &[], params.q())?);
    reactions.push(rxn(&[(op, 1)], &[], params.s())?);
    reactions.push(rxn(&[(om, 1)], &[], params.s())?);
    Ok(assemble(reactions, &[ip, im, op, om]))
}

/// Integral term: the decoded output accumulates `r × ∫ input dt`.
///
/// Each input rail catalytically produces its output rail at rate `r`, and
/// the output rails annihilate at `q`. Because annihilation removes equally
/// from both rails, the decoded output equals the integral *exactly* at
/// every time — not just asymptotically. A zero gain leaves only the
/// annihilation reaction.
pub fn integral_block(
    input: &DualRailSignal,
    output: &DualRailSignal,
    params: &BlockParams,
) -> Result<Crn, BlockError> {
    distinct(&[input.plus(), input.minus(), output.plus(), output.minus()])?;
    let (ip, im) = (input.plus(), input.minus());
    let (op, om) = (output.plus(), output.minus());
    let mut reactions = Vec::new();
    if params.r() > 0.0 {
        reactions.push(rxn(&[(ip, 1)], &[(ip, 1), (op, 1)], params.r())?);
        reactions.push(rxn(&[(im, 1)], &[(im, 1), (om, 1)], params.r())?);
    }
    reactions.push(rxn(&[(op, 1), (om, 1)], &[], params.q())?);
    Ok(assemble(reactions, &[ip, im, op, om]))
}

/// Derivative term: the decoded output approaches `r × d(input)/dt` as `s`
/// and `v` grow.
///
/// An auxiliary signal tracks the input with a first-order lag at rate `v`;
/// the output combines a fast copy of the input (rate `r·v·s`) with the
/// cross-railed auxiliary (rate `v·s`), so that at stationarity the output
/// reads the lag difference — a finite-difference quotient of the input.
/// Output rails decay at `s` and annihilate at `q`. The input, auxiliary,
/// and output signals must be pairwise disjoint. A zero gain drops the four
/// input-driven productions.
pub fn derivative_block(
    input: &DualRailSignal,
    aux: &DualRailSignal,
    output: &DualRailSignal,
    params: &BlockParams,
) -> Result<Crn, BlockError> {
    distinct(&[
        input.plus(),
        input.minus(),
        aux.plus(),
        aux.minus(),
        output.plus(),
        output.minus(),
    ])?;
    let (ip, im) = (input.plus(), input.minus());
    let (ap, am) = (aux.plus(), aux.minus());
    let (op, om) = (output.plus(), output.minus());
    let (s, v, q) = (params.s(), params.v(), params.q());
    let mut reactions = Vec::new();
    if params.r() > 0.0 {
        let rv = params.r() * v;
        let rvs = rv * s;
        reactions.push(rxn(&[(ip, 1)], &[(ip, 1), (ap, 1)], rv)?);
        reactions.push(rxn(&[(im, 1)], &[(im, 1), (am, 1)], rv)?);
        reactions.push(rxn(&[(ip, 1)], &[(ip, 1), (op, 1)], rvs)?);
        reactions.push(rxn(&[(im, 1)], &[(im, 1), (om, 1)], rvs)?);
    }
    reactions.push(rxn(&[(ap, 1)], &[], v)?);
    reactions.push(rxn(&[(am, 1)], &[], v)?);
    reactions.push(rxn(&[(ap, 1)], &[(ap, 1), (om, 1)], v * s)?);
    reactions.push(rxn(&[(am, 1)], &[(am, 1), (op, 1)], v * s)?);
    reactions.push(rxn(&[(op, 1)], &[], s)?);
    reactions.push(rxn(&[(om, 1)], &[], s)?);
    reactions.push(rxn(&[(op, 1), (om, 1)], &[], q)?);
    Ok(assemble(reactions, &[ip, im, ap, am, op, om]))
}

/// Addition: the decoded output settles to the sum of the two decoded
/// inputs.
///
/// Both inputs' rails catalytically produce the output rails at rate `s`;
/// output rails decay at `s` and annihilate at `q`.
pub fn addition_block(
    input_a: &DualRailSignal,
    input_b: &DualRailSignal,
    output: &DualRailSignal,
    params: &BlockParams,
) -> Result<Crn, BlockError> {
    distinct(&[
        input_a.plus(),
        input_a.minus(),
        input_b.plus(),
        input_b.minus(),
        output.plus(),
        output.minus(),
    ])?;
    let s = params.s();
    let (op, om) = (output.plus(), output.minus());
    let reactions = vec![
        rxn(&[(input_a.plus(), 1)], &[(input_a.plus(), 1), (op, 1)], s)?,
        rxn(&[(input_b.plus(), 1)], &[(input_b.plus(), 1), (op, 1)], s)?,
        rxn(&[(input_a.minus(), 1)], &[(input_a.minus(), 1), (om, 1)], s)?,
        rxn(&[(input_b.minus(), 1)], &[(input_b.minus(), 1), (om, 1)], s)?,
        rxn(&[(op, 1), (om, 1)], &[], params.q())?,
        rxn(&[(op, 1)], &[], s)?,
        rxn(&[(om, 1)], &[], s)?,
    ];
    Ok(assemble(reactions, &[]))
}

/// Subtraction: the decoded output settles to `minuend − subtrahend`.
///
/// The minuend's rails feed the like-signed output rails and the
/// subtrahend's rails feed the opposite-signed ones, all at rate `s`; output
/// rails decay at `s` and annihilate at `q`.
pub fn subtraction_block(
    minuend: &DualRailSignal,
    subtrahend: &DualRailSignal,
    output: &DualRailSignal,
    params: &BlockParams,
) -> Result<Crn, BlockError> {
    distinct(&[
        minuend.plus(),
        minuend.minus(),
        subtrahend.plus(),
        subtrahend.minus(),
        output.plus(),
        output.minus(),
    ])?;
    let s = params.s();
    let (op, om) = (output.plus(), output.minus());
    let reactions = vec![
        rxn(&[(minuend.plus(), 1)], &[(minuend.plus(), 1), (op, 1)], s)?,
        rxn(&[(subtrahend.minus(), 1)], &[(subtrahend.minus(), 1), (op, 1)], s)?,
        rxn(&[(minuend.minus(), 1)], &[(minuend.minus(), 1), (om, 1)], s)?,
        rxn(&[(subtrahend.plus(), 1)], &[(subtrahend.plus(), 1), (om, 1)], s)?,
        rxn(&[(op, 1), (om, 1)], &[], params.q())?,
        rxn(&[(op, 1)], &[], s)?,
        rxn(&[(om, 1)], &[], s)?,
    ];
    Ok(assemble(reactions, &[]))
}

/// Measurement conversion: lifts a nonnegative single-species value onto a
/// rail pair.
///
/// The measured species catalytically produces the plus rail at rate `s`,
/// which decays at `s` and annihilates with the minus rail at `q`. Nothing
/// produces the minus rail here — it exists so downstream blocks can consume
/// the output as an ordinary signal.
pub fn conversion_block(
    input: &SpeciesId,
    output: &DualRailSignal,
    params: &BlockParams,
) -> Result<Crn, BlockError> {
    distinct(&[input, output.plus(), output.minus()])?;
    let s = params.s();
    let (op, om) = (output.plus(), output.minus());
    let reactions = vec![
        rxn(&[(input, 1)], &[(input, 1), (op, 1)], s)?,
        rxn(&[(op, 1)], &[], s)?,
        rxn(&[(op, 1), (om, 1)], &[], params.q())?,
    ];
    Ok(assemble(reactions, &[om]))
}

/// Controller gains `(k_p, k_i, k_d)`; each must be finite and nonnegative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains {
    kp: f64,
    ki: f64,
    kd: f64,
}

impl Gains {
    pub fn new(kp: f64, ki: f64, kd: f64) -> Result<Self, BlockError> {
        for g in [kp, ki, kd] {
            if !g.is_finite() || g < 0.0 {
                return Err(BlockError::InvalidGain(g));
            }
        }
        Ok(Gains { kp, ki, kd })
    }

    pub fn kp(&self) -> f64 {
        self.kp
    }

    pub fn ki(&self) -> f64 {
        self.ki
    }

    pub fn kd(&self) -> f64 {
        self.kd
    }

    /// This controller with the derivative term disabled.
    pub fn without_derivative(&self) -> Gains {
        Gains { kd: 0.0, ..*self }
    }
}

impl Default for Gains {
    /// Unit gains `(1, 1, 1)`.
    fn default() -> Self {
        Gains { kp: 1.0, ki: 1.0, kd: 1.0 }
    }
}

/// Per-stage rate parameters of the composed loop.
///
/// For the `proportional`, `integral`, and `derivative` stages the gain
/// field `r` inside each [`BlockParams`] is ignored — the loop's [`Gains`]
/// supply it at build time. The summing, error, and conversion stages are
/// unit-gain copies, so their `r` is ignored too.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopRates {
    pub proportional: BlockParams,
    pub integral: BlockParams,
    pub derivative: BlockParams,
    /// Addition of the proportional and integral terms.
    pub sum_pi: BlockParams,
    /// Addition of the PI sum and the derivative term.
    pub sum_pid: BlockParams,
    /// Subtraction forming the error signal.
    pub error: BlockParams,
    /// Conversion of the plant output onto rails.
    pub conversion: BlockParams,
}

impl Default for LoopRates {
    /// The rates used throughout the verification experiments: moderate
    /// speeds everywhere, with a ×10 speed on the derivative copy path and
    /// slightly detuned summing stages.
    fn default() -> Self {
        let p = |s, q| BlockParams::new(1.0, s, q).expect("constant rates are valid");
        LoopRates {
            proportional: p(1.0, 1.0),
            integral: p(1.0, 1.0),
            derivative: p(10.0, 10.0)
                .with_tracking_rate(1.0)
                .expect("constant rates are valid"),
            sum_pi: p(0.8, 0.3),
            sum_pid: p(1.1, 0.1),
            error: p(1.0, 1.0),
            conversion: p(1.0, 1.0),
        }
    }
}

/// How the control signal's rails drive the plant.
///
/// All actuation reactions run at rate 1: the control signal's operating
/// point, not a rate constant, sets the drive strength.
#[derive(Debug, Clone, PartialEq)]
pub enum Actuation {
    /// `U+` catalytically produces one plant species and `U-` another
    /// (typically an antagonist that removes the first).
    Split { positive_target: SpeciesId, negative_target: SpeciesId },
    /// `U+` catalytically produces a plant species and `U-` sequesters it
    /// (`U- + target → ∅`).
    Sequester { target: SpeciesId },
    /// Arbitrary extra reactions; they should couple the `U+`/`U-` rails to
    /// the plant. Used as-is, without collision checks.
    Custom(Crn),
}

/// A rate override applied to the composed loop.
///
/// The pattern is a reaction without its rate, written in the same syntax as
/// the textual format: `E+ -> E+ + P+`, `D+ + D- -> 0`. Every reaction whose
/// reactant and product complexes match gets the new rate; a pattern that
/// matches nothing is an error.
#[derive(Debug, Clone, PartialEq)]
pub struct RateOverride {
    reaction: String,
    rate: f64,
}

impl RateOverride {
    pub fn new(reaction: impl Into<String>, rate: f64) -> Result<Self, BlockError> {
        let reaction = reaction.into();
        if !rate.is_finite() || rate <= 0.0 {
            return Err(BlockError::InvalidRate { name: "override", value: rate });
        }
        parse_override(&reaction)?; // validate the pattern eagerly
        Ok(RateOverride { reaction, rate })
    }

    pub fn reaction(&self) -> &str {
        &self.reaction
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

/// Parses an override pattern into its reactant and product complexes.
fn parse_override(text: &str) -> Result<(Complex, Complex), BlockError> {
    let invalid = |source: ParseError| BlockError::InvalidOverride {
        text: text.to_string(),
        source,
    };
    let arrow = text.find("->").ok_or_else(|| {
        invalid(ParseError {
            line: 1,
            column: 1,
            kind: crate::dsl::ParseErrorKind::ExpectedReactionOrInit,
        })
    })?;
    let line = format!("{} ->{{1}} {}", &text[..arrow], &text[arrow + 2..]);
    let doc = parse_crn(&line).map_err(invalid)?;
    let reaction = &doc.crn().reactions()[0];
    Ok((reaction.reactants().clone(), reaction.products().clone()))
}

/// Everything needed to compose a closed PID loop around a plant.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopSpec {
    /// The controlled network, with its initial conditions.
    pub plant: CrnDocument,
    /// The plant species treated as the measured output.
    pub output: SpeciesId,
    /// How the control rails drive the plant.
    pub actuation: Actuation,
    /// The network producing the reference rails `R+`/`R-`, with its initial
    /// conditions. Species other than those rails are namespaced with a
    /// `ref.` prefix during composition.
    pub reference: CrnDocument,
    pub gains: Gains,
    pub rates: LoopRates,
    pub overrides: Vec<RateOverride>,
}

impl LoopSpec {
    /// A loop spec with unit gains, default rates, and no overrides.
    pub fn new(
        plant: CrnDocument,
        output: SpeciesId,
        actuation: Actuation,
        reference: CrnDocument,
    ) -> Self {
        LoopSpec {
            plant,
            output,
            actuation,
            reference,
            gains: Gains::default(),
            rates: LoopRates::default(),
            overrides: Vec::new(),
        }
    }
}

/// Signal base names used by [`build_closed_loop`]. Rails append `+`/`-`,
/// so the error signal, for instance, lives on `E+` and `E-`.
pub mod loop_signals {
    /// Reference signal (provided by the reference network).
    pub const REFERENCE: &str = "R";
    /// Rail-converted plant output.
    pub const MEASUREMENT: &str = "Y'";
    /// Tracking error, reference minus measurement.
    pub const ERROR: &str = "E";
    /// Proportional term.
    pub const PROPORTIONAL: &str = "P";
    /// Integral term.
    pub const INTEGRAL: &str = "I";
    /// Derivative term.
    pub const DERIVATIVE: &str = "D";
    /// The derivative block's internal tracking signal.
    pub const DERIVATIVE_AUX: &str = "D.A";
    /// Sum of the proportional and integral terms.
    pub const PI_SUM: &str = "PI";
    /// Control signal driving the actuation.
    pub const CONTROL: &str = "U";
    /// Prefix applied to reference-internal species.
    pub const REFERENCE_PREFIX: &str = "ref.";
}

/// Wires plant, reference, and controller blocks into one closed-loop
/// network.
///
/// The loop computes `error = reference − measurement` (negative feedback),
/// applies the three controller terms with the spec's gains, sums them into
/// the control signal `U`, and couples `U` to the plant through the
/// actuation. Controller species use the fixed names in [`loop_signals`];
/// plant and reference species must not collide with them (reference
/// internals are auto-prefixed with `ref.` to that end). Initial conditions
/// are the plant's plus the reference's; every controller species starts at
/// zero.
pub fn build_closed_loop(spec: &LoopSpec) -> Result<CrnDocument, BlockError> {
    let plant = spec.plant.crn();
    if !plant.contains(&spec.output) {
        return Err(BlockError::MissingPlantSpecies(spec.output.clone()));
    }

    let r_sig = DualRailSignal::from_base(loop_signals::REFERENCE)?;
    let y_sig = DualRailSignal::from_base(loop_signals::MEASUREMENT)?;
    let e_sig = DualRailSignal::from_base(loop_signals::ERROR)?;
    let p_sig = DualRailSignal::from_base(loop_signals::PROPORTIONAL)?;
    let i_sig = DualRailSignal::from_base(loop_signals::INTEGRAL)?;
    let d_sig = DualRailSignal::from_base(loop_signals::DERIVATIVE)?;
    let aux_sig = DualRailSignal::from_base(loop_signals::DERIVATIVE_AUX)?;
    let pi_sig = DualRailSignal::from_base(loop_signals::PI_SUM)?;
    let u_sig = DualRailSignal::from_base(loop_signals::CONTROL)?;

    let with_gain = |gain: f64, stage: &BlockParams| -> Result<BlockParams, BlockError> {
        if !gain.is_finite() || gain < 0.0 {
            return Err(BlockError::InvalidGain(gain));
        }
        let base = BlockParams::new(gain, stage.s(), stage.q())?;
        base.with_tracking_rate(stage.v())
    };

    let conversion = conversion_block(&spec.output, &y_sig, &spec.rates.conversion)?;
    let subtraction = subtraction_block(&r_sig, &y_sig, &e_sig, &spec.rates.error)?;
    let proportional = proportional_block(
        &e_sig,
        &p_sig,
        &with_gain(spec.gains.kp(), &spec.rates.proportional)?,
    )?;
    let integral =
        integral_block(&e_sig, &i_sig, &with_gain(spec.gains.ki(), &spec.rates.integral)?)?;
    let derivative = derivative_block(
        &e_sig,
        &aux_sig,
        &d_sig,
        &with_gain(spec.gains.kd(), &spec.rates.derivative)?,
    )?;
    let sum_pi = addition_block(&p_sig, &i_sig, &pi_sig, &spec.rates.sum_pi)?;
    let sum_pid = addition_block(&pi_sig, &d_sig, &u_sig, &spec.rates.sum_pid)?;

    let require_plant = |s: &SpeciesId| -> Result<(), BlockError> {
        if plant.contains(s) {
            Ok(())
        } else {
            Err(BlockError::MissingPlantSpecies(s.clone()))
        }
    };
    let actuation = match &spec.actuation {
        Actuation::Split { positive_target, negative_target } => {
            require_plant(positive_target)?;
            require_plant(negative_target)?;
            let up = u_sig.plus();
            let um = u_sig.minus();
            Crn::from_reactions(vec![
                rxn(&[(up, 1)], &[(up, 1), (positive_target, 1)], 1.0)?,
                rxn(&[(um, 1)], &[(um, 1), (negative_target, 1)], 1.0)?,
            ])
        }
        Actuation::Sequester { target } => {
            require_plant(target)?;
            let up = u_sig.plus();
            let um = u_sig.minus();
            Crn::from_reactions(vec![
                rxn(&[(up, 1)], &[(up, 1), (target, 1)], 1.0)?,
                rxn(&[(um, 1), (target, 1)], &[], 1.0)?,
            ])
        }
        Actuation::Custom(crn) => crn.clone(),
    };

    // Collision checks: the 18 controller rail names are reserved...
    let mut reserved: HashSet<&SpeciesId> = HashSet::new();
    for signal in [
        &r_sig, &y_sig, &e_sig, &p_sig, &i_sig, &d_sig, &aux_sig, &pi_sig, &u_sig,
    ] {
        reserved.insert(signal.plus());
        reserved.insert(signal.minus());
    }
    for s in plant.species() {
        if reserved.contains(s) {
            return Err(BlockError::NameCollision(s.clone()));
        }
    }

    // ...and reference internals are namespaced out of everyone's way.
    let reference = spec.reference.crn();
    if !reference.contains(r_sig.plus()) {
        return Err(BlockError::MissingReferenceRail(r_sig.plus().clone()));
    }
    let mut prefix_map = HashMap::new();
    for s in reference.species() {
        if s != r_sig.plus() && s != r_sig.minus() {
            let prefixed =
                SpeciesId::new(format!("{}{}", loop_signals::REFERENCE_PREFIX, s.name()))?;
            prefix_map.insert(s.clone(), prefixed);
        }
    }
    let reference = rename_species(reference, &prefix_map)?;
    for s in reference.species() {
        if s == r_sig.plus() || s == r_sig.minus() {
            continue;
        }
        if plant.contains(s) || reserved.contains(s) {
            return Err(BlockError::NameCollision(s.clone()));
        }
    }

    let mut net = plant.clone();
    for part in [
        &actuation,
        &reference,
        &conversion,
        &subtraction,
        &proportional,
        &integral,
        &derivative,
        &sum_pi,
        &sum_pid,
    ] {
        net = union(&net, part);
    }

    if !spec.overrides.is_empty() {
        let mut reactions = net.reactions().to_vec();
        for over in &spec.overrides {
            let (reactants, products) = parse_override(over.reaction())?;
            let mut matched = false;
            for reaction in &mut reactions {
                if reaction.reactants() == &reactants && reaction.products() == &products {
                    *reaction = reaction.with_rate(over.rate())?;
                    matched = true;
                }
            }
            if !matched {
                return Err(BlockError::UnmatchedOverride(over.reaction().to_string()));
            }
        }
        net = Crn::new(net.species().to_vec(), reactions)?;
    }

    let initials: Vec<(SpeciesId, f64)> = spec
        .plant
        .initial()
        .iter()
        .map(|(s, &v)| (s.clone(), v))
        .chain(spec.reference.initial().iter().map(|(s, &v)| {
            (prefix_map.get(s).cloned().unwrap_or_else(|| s.clone()), v)
        }))
        .collect();
    Ok(CrnDocument::new(net, initials)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins::{constant_reference, gene_expression_plant, sine_reference};
    use crate::crn::{mass_action_rhs, State};
    use crate::sim::{simulate_document, SimOptions};
    use approx::assert_relative_eq;

    fn sp(name: &str) -> SpeciesId {
        SpeciesId::new(name).unwrap()
    }

    fn sig(base: &str) -> DualRailSignal {
        DualRailSignal::from_base(base).unwrap()
    }

    fn params(r: f64, s: f64, q: f64) -> BlockParams {
        BlockParams::new(r, s, q).unwrap()
    }

    /// A network with no reactions holding a static dual-rail input.
    fn static_input(base: &str, plus: f64, minus: f64) -> CrnDocument {
        let crn = Crn::new(vec![sp(&format!("{base}+")), sp(&format!("{base}-"))], vec![])
            .unwrap();
        CrnDocument::new(crn, [
            (sp(&format!("{base}+")), plus),
            (sp(&format!("{base}-")), minus),
        ])
        .unwrap()
    }

    /// Drives `block` with the given static input document and returns the
    /// final decoded output.
    fn settle(input_doc: &CrnDocument, block: &Crn, output: &DualRailSignal, t_end: f64) -> f64 {
        let net = union(input_doc.crn(), block);
        let doc = CrnDocument::new(
            net,
            input_doc.initial().iter().map(|(s, &v)| (s.clone(), v)),
        )
        .unwrap();
        let options = SimOptions::new(t_end).with_tolerances(1e-10, 1e-13);
        let traj = simulate_document(&doc, &options).unwrap();
        *traj.decode(output).unwrap().last().unwrap()
    }

    #[test]
    fn params_are_validated() {
        assert!(matches!(
            BlockParams::new(-1.0, 1.0, 1.0),
            Err(BlockError::InvalidGain(_))
        ));
        assert!(matches!(
            BlockParams::new(1.0, 0.0, 1.0),
            Err(BlockError::InvalidRate { name: "s", .. })
        ));
        assert!(matches!(
            BlockParams::new(1.0, 1.0, -2.0),
            Err(BlockError::InvalidRate { name: "q", .. })
        ));
        assert!(matches!(
            params(1.0, 1.0, 1.0).with_tracking_rate(0.0),
            Err(BlockError::InvalidRate { name: "v", .. })
        ));
        // Zero gain is allowed.
        assert!(BlockParams::new(0.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn speed_scaling_touches_only_s_and_v() {
        let base = params(2.0, 3.0, 5.0).with_tracking_rate(7.0).unwrap();
        let scaled = base.speed_scaled(10.0).unwrap();
        assert_eq!(
            (scaled.r(), scaled.s(), scaled.q(), scaled.v()),
            (2.0, 30.0, 5.0, 70.0)
        );
    }

    #[test]
    fn dual_rail_rejects_identical_rails() {
        assert!(matches!(
            DualRailSignal::new(sp("X"), sp("X")),
            Err(BlockError::IdenticalRails(_))
        ));
        let s = sig("E");
        assert_eq!(s.plus(), &sp("E+"));
        assert_eq!(s.minus(), &sp("E-"));
    }

    #[test]
    fn blocks_reject_overlapping_signals() {
        let e = sig("E");
        let err = proportional_block(&e, &e, &params(1.0, 1.0, 1.0));
        assert!(matches!(err, Err(BlockError::OverlappingSignals(_))));
        let err = derivative_block(&e, &e, &sig("D"), &params(1.0, 1.0, 1.0));
        assert!(matches!(err, Err(BlockError::OverlappingSignals(_))));
    }

    #[test]
    fn reaction_counts_match_the_definitions() {
        let e = sig("E");
        let out = sig("O");
        let aux = sig("A");
        let b = sig("B");
        let p = params(1.0, 2.0, 3.0);
        let p0 = params(0.0, 2.0, 3.0);
        assert_eq!(proportional_block(&e, &out, &p).unwrap().reactions().len(), 5);
        assert_eq!(proportional_block(&e, &out, &p0).unwrap().reactions().len(), 3);
        assert_eq!(integral_block(&e, &out, &p).unwrap().reactions().len(), 3);
        assert_eq!(integral_block(&e, &out, &p0).unwrap().reactions().len(), 1);
        assert_eq!(derivative_block(&e, &aux, &out, &p).unwrap().reactions().len(), 11);
        assert_eq!(derivative_block(&e, &aux, &out, &p0).unwrap().reactions().len(), 7);
        assert_eq!(addition_block(&e, &b, &out, &p).unwrap().reactions().len(), 7);
        assert_eq!(subtraction_block(&e, &b, &out, &p).unwrap().reactions().len(), 7);
        assert_eq!(conversion_block(&sp("Y"), &out, &p).unwrap().reactions().len(), 3);
    }

    #[test]
    fn zero_gain_blocks_still_declare_their_signals() {
        let e = sig("E");
        let out = sig("P");
        let crn = proportional_block(&e, &out, &params(0.0, 1.0, 1.0)).unwrap();
        for rail in [sp("E+"), sp("E-"), sp("P+"), sp("P-")] {
            assert!(crn.contains(&rail), "{rail} missing");
        }
    }

    #[test]
    fn block_constructors_are_deterministic() {
        let a = derivative_block(&sig("E"), &sig("A"), &sig("D"), &params(1.0, 10.0, 10.0))
            .unwrap();
        let b = derivative_block(&sig("E"), &sig("A"), &sig("D"), &params(1.0, 10.0, 10.0))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn proportional_block_settles_to_gain_times_input() {
        // Steady state: s(P+ − P−) = r·s(E+ − E−), so the decoded output is
        // exactly r × the decoded input; each rail individually carries
        // δ = (q/s)(rE+ − δ)(rE− − δ) of annihilation shrinkage.
        let e = sig("E");
        let out = sig("P");
        let block = proportional_block(&e, &out, &params(1.0, 1.0, 1.0)).unwrap();
        let input = static_input("E", 3.0, 1.0);
        let decoded = settle(&input, &block, &out, 60.0);
        assert_relative_eq!(decoded, 2.0, epsilon = 1e-7);

        let net = union(input.crn(), &block);
        let doc = CrnDocument::new(net, [(sp("E+"), 3.0), (sp("E-"), 1.0)]).unwrap();
        let traj = simulate_document(
            &doc,
            &SimOptions::new(60.0).with_tolerances(1e-10, 1e-13),
        )
        .unwrap();
        let delta = (5.0 - 13.0f64.sqrt()) / 2.0; // root of δ = (3−δ)(1−δ)
        let p_plus = traj.series(&sp("P+")).unwrap();
        let p_minus = traj.series(&sp("P-")).unwrap();
        assert_relative_eq!(*p_plus.last().unwrap(), 3.0 - delta, epsilon = 1e-6);
        assert_relative_eq!(*p_minus.last().unwrap(), 1.0 - delta, epsilon = 1e-6);
    }

    #[test]
    fn integral_block_accumulates_exactly() {
        // Constant input 2 × gain 0.5 integrates to t.
        let e = sig("E");
        let out = sig("I");
        let block = integral_block(&e, &out, &params(0.5, 1.0, 1.0)).unwrap();
        let input = static_input("E", 2.0, 0.0);
        let decoded = settle(&input, &block, &out, 10.0);
        assert_relative_eq!(decoded, 10.0, max_relative = 1e-8);
    }

    #[test]
    fn derivative_block_reports_a_ramp_slope_exactly() {
        // Input R(t) = 0.3 t; the decoded derivative settles to exactly
        // r × 0.3 (the lag errors cancel for a ramp).
        let input_sig = sig("R");
        let aux = sig("A");
        let out = sig("D");
        let p = params(1.0, 10.0, 10.0).with_tracking_rate(1.0).unwrap();
        let block = derivative_block(&input_sig, &aux, &out, &p).unwrap();
        let ramp = Crn::from_reactions(vec![
            Reaction::new([], [(sp("R+"), 1)], 0.3).unwrap(),
        ]);
        let net = union(&union(&ramp, &Crn::new(vec![sp("R-")], vec![]).unwrap()), &block);
        let doc = CrnDocument::from_crn(net);
        let options = SimOptions::new(20.0).with_tolerances(1e-10, 1e-13);
        let traj = simulate_document(&doc, &options).unwrap();
        let decoded = traj.decode(&out).unwrap();
        assert_relative_eq!(*decoded.last().unwrap(), 0.3, epsilon = 1e-3);
    }

    #[test]
    fn addition_block_sums_signed_inputs() {
        let a = sig("P");
        let b = sig("I");
        let out = sig("B");
        let block = addition_block(&a, &b, &out, &params(1.0, 1.0, 1.0)).unwrap();
        // P = +2, I = −1 (entirely on the minus rail): sum = 1.
        let crn = Crn::new(vec![sp("P+"), sp("P-"), sp("I+"), sp("I-")], vec![]).unwrap();
        let input =
            CrnDocument::new(crn, [(sp("P+"), 2.0), (sp("I-"), 1.0)]).unwrap();
        let decoded = settle(&input, &block, &out, 60.0);
        assert_relative_eq!(decoded, 1.0, epsilon = 1e-7);
    }

    #[test]
    fn subtraction_block_computes_minuend_minus_subtrahend() {
        let minuend = sig("R");
        let subtrahend = sig("Y'");
        let out = sig("E");
        let block =
            subtraction_block(&minuend, &subtrahend, &out, &params(1.0, 1.0, 1.0)).unwrap();
        let crn = Crn::new(vec![sp("R+"), sp("R-"), sp("Y'+"), sp("Y'-")], vec![]).unwrap();
        let input = CrnDocument::new(crn, [(sp("R+"), 3.0), (sp("Y'+"), 1.0)]).unwrap();
        let decoded = settle(&input, &block, &out, 60.0);
        assert_relative_eq!(decoded, 2.0, epsilon = 1e-7);
    }

    #[test]
    fn conversion_block_copies_a_measurement_onto_rails() {
        let out = sig("Y'");
        let block = conversion_block(&sp("Y"), &out, &params(1.0, 1.0, 1.0)).unwrap();
        let crn = Crn::new(vec![sp("Y")], vec![]).unwrap();
        let input = CrnDocument::new(crn, [(sp("Y"), 2.0)]).unwrap();
        let decoded = settle(&input, &block, &out, 40.0);
        assert_relative_eq!(decoded, 2.0, epsilon = 1e-8);
    }

    fn unit_loop() -> LoopSpec {
        LoopSpec::new(
            gene_expression_plant(),
            sp("Pro"),
            Actuation::Split {
                positive_target: sp("mRNA"),
                negative_target: sp("microRNA"),
            },
            constant_reference(10.0),
        )
    }

    #[test]
    fn closed_loop_has_the_expected_shape() {
        let doc = build_closed_loop(&unit_loop()).unwrap();
        // plant 7 + actuation 2 + reference 2 + conversion 3 + subtraction 7
        // + proportional 5 + integral 3 + derivative 11 + two sums 7 each.
        assert_eq!(doc.crn().reactions().len(), 54);
        assert_eq!(doc.crn().n_species(), 21);
        for rail in [
            "mRNA", "Pro", "microRNA", "U+", "U-", "R+", "R-", "Y'+", "Y'-", "E+", "E-",
            "P+", "P-", "I+", "I-", "D.A+", "D.A-", "D+", "D-", "PI+", "PI-",
        ] {
            assert!(doc.crn().contains(&sp(rail)), "{rail} missing");
        }
        // Initial conditions: the plant's only; controller species at zero.
        assert_eq!(doc.initial().len(), 1);
        assert_eq!(doc.initial_of(&sp("Pro")), 1.0);
    }

    #[test]
    fn closed_loop_composition_is_deterministic() {
        let a = build_closed_loop(&unit_loop()).unwrap();
        let b = build_closed_loop(&unit_loop()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pi_variant_drops_four_reactions() {
        let mut spec = unit_loop();
        spec.gains = spec.gains.without_derivative();
        let doc = build_closed_loop(&spec).unwrap();
        assert_eq!(doc.crn().reactions().len(), 50);
    }

    #[test]
    fn sine_reference_internals_are_namespaced() {
        let mut spec = unit_loop();
        spec.reference = sine_reference(10.0, 0.01);
        let doc = build_closed_loop(&spec).unwrap();
        assert!(doc.crn().contains(&sp("ref.A+")));
        assert!(doc.crn().contains(&sp("ref.A-")));
        assert!(!doc.crn().contains(&sp("A+")));
        assert_eq!(doc.initial_of(&sp("ref.A+")), 10.0);
        // 4 more reactions than the constant reference's 2.
        assert_eq!(doc.crn().reactions().len(), 58);
    }

    #[test]
    fn closed_loop_rejects_bad_wiring() {
        let mut spec = unit_loop();
        spec.output = sp("Ribosome");
        assert!(matches!(
            build_closed_loop(&spec),
            Err(BlockError::MissingPlantSpecies(_))
        ));

        let mut spec = unit_loop();
        spec.actuation = Actuation::Sequester { target: sp("Ribosome") };
        assert!(matches!(
            build_closed_loop(&spec),
            Err(BlockError::MissingPlantSpecies(_))
        ));

        // A plant species squatting on a controller name.
        let plant = CrnDocument::new(
            Crn::from_reactions(vec![
                Reaction::new([(sp("E+"), 1)], [], 1.0).unwrap(),
            ]),
            [],
        )
        .unwrap();
        let spec = LoopSpec::new(
            plant,
            sp("E+"),
            Actuation::Sequester { target: sp("E+") },
            constant_reference(1.0),
        );
        assert!(matches!(
            build_closed_loop(&spec),
            Err(BlockError::NameCollision(_))
        ));

        // A reference without the plus rail.
        let mut spec = unit_loop();
        spec.reference = CrnDocument::new(
            Crn::from_reactions(vec![
                Reaction::new([], [(sp("Q"), 1)], 1.0).unwrap(),
            ]),
            [],
        )
        .unwrap();
        assert!(matches!(
            build_closed_loop(&spec),
            Err(BlockError::MissingReferenceRail(_))
        ));
    }

    #[test]
    fn overrides_rewrite_matching_rates() {
        let mut spec = unit_loop();
        spec.overrides = vec![
            RateOverride::new("mRNA -> 0", 2.5).unwrap(),
            RateOverride::new("E+ -> E+ + P+", 4.0).unwrap(),
        ];
        let doc = build_closed_loop(&spec).unwrap();
        let rates: Vec<f64> = doc
            .crn()
            .reactions()
            .iter()
            .filter(|r| {
                r.reactants().len() == 1
                    && r.reactants().contains_key(&sp("mRNA"))
                    && r.products().is_empty()
            })
            .map(|r| r.rate())
            .collect();
        assert_eq!(rates, vec![2.5]);
        assert!(doc.crn().reactions().iter().any(|r| r.rate() == 4.0));
    }

    #[test]
    fn unmatched_and_malformed_overrides_are_rejected() {
        let mut spec = unit_loop();
        spec.overrides = vec![RateOverride::new("Nope -> 0", 1.0).unwrap()];
        assert!(matches!(
            build_closed_loop(&spec),
            Err(BlockError::UnmatchedOverride(_))
        ));
        assert!(matches!(
            RateOverride::new("E+ + ->", 1.0),
            Err(BlockError::InvalidOverride { .. })
        ));
        assert!(matches!(
            RateOverride::new("no arrow here", 1.0),
            Err(BlockError::InvalidOverride { .. })
        ));
        assert!(matches!(
            RateOverride::new("E+ -> 0", 0.0),
            Err(BlockError::InvalidRate { .. })
        ));
    }

    #[test]
    fn closed_loop_rhs_is_finite_at_a_random_state() {
        let doc = build_closed_loop(&unit_loop()).unwrap();
        let n = doc.crn().n_species();
        let state = State::new(doc.crn(), (0..n).map(|i| (i % 5) as f64 * 0.3).collect())
            .unwrap();
        let dx = mass_action_rhs(doc.crn(), &state).unwrap();
        assert!(dx.iter().all(|v| v.is_finite()));
    }
}
