//! Plain-text format for reaction networks with initial conditions.
//!
//! The format is line-oriented. Each nonblank line is a reaction, an initial
//! condition, or a comment:
//!
//! ```text
//! # gene expression with feedback
//! mRNA ->{1} mRNA + Pro
//! 2A + B ->{0.5} C
//! ->{10} R+            # production from nothing
//! X ->{1}              # decay to nothing
//! init Pro = 1
//! ```
//!
//! Species names match `[A-Za-z][A-Za-z0-9_'.+-]*`, so dual-rail names like
//! `E+`, `E-`, and namespaced names like `ref.A+` are ordinary identifiers.
//! Inside a complex, terms are separated by a standalone `+` surrounded by
//! whitespace; an integer multiplicity is attached directly to its species
//! (`2C`). An empty side is written as `0` or simply left out. The word
//! `init` is reserved and cannot name a species.
//!
//! `init` lines give initial concentrations (default 0) and may introduce
//! species that no reaction mentions. [`format_crn`] emits a canonical form:
//! one reaction per line in network order, complexes in species order,
//! multiplicity prefixes only when greater than one, omitted empty sides, and
//! an `init` line for every species with a nonzero initial value plus every
//! species no reaction mentions. Formatting is idempotent, and
//! `parse_crn(format_crn(doc)) == doc` for every document this crate
//! produces.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::crn::{Complex, Crn, CrnError, Reaction, SpeciesId, State, MAX_MULTIPLICITY};

/// A reaction network together with its initial concentrations.
///
/// The initial map is kept canonical: species that appear in reactions are
/// listed only when their value is nonzero, while species that appear in no
/// reaction are always listed (even at zero — they would otherwise vanish
/// from the textual form). Unlisted species start at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CrnDocument {
    crn: Crn,
    initial: BTreeMap<SpeciesId, f64>,
}

impl CrnDocument {
    /// Creates a document, validating and canonicalizing the initial map.
    ///
    /// Every key must name a species of the network and every value must be
    /// finite and nonnegative.
    pub fn new(
        crn: Crn,
        initial: impl IntoIterator<Item = (SpeciesId, f64)>,
    ) -> Result<Self, CrnError> {
        let mut map = BTreeMap::new();
        for (species, value) in initial {
            if !crn.contains(&species) {
                return Err(CrnError::UnknownSpecies(species));
            }
            if !value.is_finite() {
                return Err(CrnError::NonFiniteConcentration { species });
            }
            if value < 0.0 {
                return Err(CrnError::NegativeConcentration { species, value });
            }
            map.insert(species, value);
        }
        let mut mentioned = std::collections::HashSet::new();
        for reaction in crn.reactions() {
            mentioned.extend(reaction.species().cloned());
        }
        map.retain(|s, &mut v| v != 0.0 || !mentioned.contains(s));
        for s in crn.species() {
            if !mentioned.contains(s) {
                map.entry(s.clone()).or_insert(0.0);
            }
        }
        Ok(CrnDocument { crn, initial: map })
    }

    /// A document with all-zero initial conditions.
    pub fn from_crn(crn: Crn) -> Self {
        CrnDocument::new(crn, []).expect("empty initial map is always valid")
    }

    /// The underlying network.
    pub fn crn(&self) -> &Crn {
        &self.crn
    }

    /// The canonical initial map (see the type docs for what is listed).
    pub fn initial(&self) -> &BTreeMap<SpeciesId, f64> {
        &self.initial
    }

    /// Initial concentration of one species (0 when unlisted).
    pub fn initial_of(&self, species: &SpeciesId) -> f64 {
        self.initial.get(species).copied().unwrap_or(0.0)
    }

    /// The full initial state vector in species order.
    pub fn initial_state(&self) -> State {
        let values = self
            .crn
            .species()
            .iter()
            .map(|s| self.initial_of(s))
            .collect();
        State::new(&self.crn, values).expect("initial values validated at construction")
    }
}

impl fmt::Display for CrnDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_crn(self))
    }
}

impl FromStr for CrnDocument {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_crn(s)
    }
}

/// A parse failure with its position in the input.
///
/// `line` and `column` are 1-based; `column` counts characters.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

/// What went wrong while parsing.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    /// A nonblank line is neither a reaction nor an `init` line.
    #[error("expected a reaction (`lhs ->{{rate}} rhs`) or `init <species> = <value>`")]
    ExpectedReactionOrInit,
    /// A `>` appeared without a preceding `-`.
    #[error("malformed arrow: expected `->{{rate}}`")]
    MalformedArrow,
    /// The arrow was not immediately followed by `{`.
    #[error("expected `{{rate}}` immediately after `->`")]
    MissingRate,
    /// The rate's closing `}` is missing.
    #[error("unterminated rate: missing `}}`")]
    UnterminatedRate,
    /// The rate text is not a number.
    #[error("invalid rate `{0}`")]
    InvalidRate(String),
    /// The rate is zero, negative, or not finite.
    #[error("rate must be finite and positive, got `{0}`")]
    NonPositiveRate(String),
    /// A species name does not match the grammar.
    #[error("invalid species name `{0}`")]
    InvalidSpeciesName(String),
    /// A species was named `init`, which is reserved.
    #[error("`init` is a reserved word and cannot name a species")]
    ReservedWord,
    /// Two terms were not separated by `+`.
    #[error("expected `+` between terms, found `{0}`")]
    ExpectedSeparator(String),
    /// A `+` separator was not followed by a term.
    #[error("expected a term after `+`")]
    DanglingSeparator,
    /// `0` (the empty complex) appeared alongside other terms.
    #[error("`0` denotes the empty complex and cannot be combined with terms")]
    MixedEmptyComplex,
    /// A number stood alone where a term was expected.
    #[error("multiplicity must be attached to its species (write `2C`, not `2 C`)")]
    DetachedMultiplicity,
    /// A multiplicity did not parse as an integer.
    #[error("invalid multiplicity `{0}`")]
    InvalidMultiplicity(String),
    /// A term had multiplicity zero.
    #[error("multiplicity of `{0}` must be positive (omit the species for zero)")]
    ZeroMultiplicity(String),
    /// A species' accumulated multiplicity exceeded [`MAX_MULTIPLICITY`].
    #[error("multiplicity {multiplicity} of `{species}` exceeds the maximum {MAX_MULTIPLICITY}")]
    MultiplicityTooLarge { species: String, multiplicity: u64 },
    /// An `init` line is not of the form `init <species> = <value>`.
    #[error("expected `init <species> = <value>`")]
    MalformedInit,
    /// An initial value is not a number.
    #[error("invalid initial value `{0}`")]
    InvalidInitialValue(String),
    /// An initial value is negative or not finite.
    #[error("initial value must be finite and nonnegative, got `{0}`")]
    NegativeInitialValue(String),
    /// The same species received two `init` lines.
    #[error("duplicate initial condition for `{0}`")]
    DuplicateInit(String),
    /// Extra text followed a complete `init` line.
    #[error("unexpected trailing text `{0}`")]
    TrailingText(String),
}

/// One whitespace-delimited token and its 1-based column.
struct Token<'a> {
    column: usize,
    text: &'a str,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push(Token { column: column_at(line, s), text: &line[s..i] });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push(Token { column: column_at(line, s), text: &line[s..] });
    }
    tokens
}

/// 1-based character column of byte offset `byte` in `line`.
fn column_at(line: &str, byte: usize) -> usize {
    line[..byte].chars().count() + 1
}

fn is_valid_species_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '\'' | '.' | '+' | '-'))
}

struct LineParser {
    line_no: usize,
    /// Species in first-appearance order across reaction lines.
    appearance: Vec<SpeciesId>,
    seen: std::collections::HashSet<SpeciesId>,
    /// `init` entries in order of appearance.
    initials: Vec<(SpeciesId, f64)>,
    reactions: Vec<Reaction>,
}

impl LineParser {
    fn err(&self, column: usize, kind: ParseErrorKind) -> ParseError {
        ParseError { line: self.line_no, column, kind }
    }

    /// Parses one species token (no multiplicity), validating the grammar.
    fn species(&self, column: usize, text: &str) -> Result<SpeciesId, ParseError> {
        if text == "init" {
            return Err(self.err(column, ParseErrorKind::ReservedWord));
        }
        if !is_valid_species_name(text) {
            return Err(self.err(column, ParseErrorKind::InvalidSpeciesName(text.to_string())));
        }
        Ok(SpeciesId::new(text).expect("grammar guarantees nonempty"))
    }

    /// Parses a complex from the tokens of one reaction side, recording
    /// first appearances in written order.
    fn complex(&mut self, tokens: &[Token<'_>]) -> Result<Complex, ParseError> {
        let mut complex = Complex::new();
        if tokens.is_empty() {
            return Ok(complex);
        }
        if tokens.len() == 1 && tokens[0].text == "0" {
            return Ok(complex);
        }
        let mut expect_term = true;
        let mut last_column = tokens[0].column;
        for token in tokens {
            last_column = token.column;
            if expect_term {
                if token.text == "+" {
                    return Err(self.err(token.column, ParseErrorKind::DanglingSeparator));
                }
                if token.text == "0" {
                    return Err(self.err(token.column, ParseErrorKind::MixedEmptyComplex));
                }
                let (species, multiplicity) = self.term(token)?;
                let entry = complex.entry(species.clone()).or_insert(0);
                let total = u64::from(*entry) + u64::from(multiplicity);
                if total > u64::from(MAX_MULTIPLICITY) {
                    return Err(self.err(
                        token.column,
                        ParseErrorKind::MultiplicityTooLarge {
                            species: species.name().to_string(),
                            multiplicity: total,
                        },
                    ));
                }
                *entry = total as u32;
                if self.seen.insert(species.clone()) {
                    self.appearance.push(species);
                }
                expect_term = false;
            } else if token.text == "+" {
                expect_term = true;
            } else {
                return Err(self.err(
                    token.column,
                    ParseErrorKind::ExpectedSeparator(token.text.to_string()),
                ));
            }
        }
        if expect_term {
            return Err(self.err(last_column, ParseErrorKind::DanglingSeparator));
        }
        Ok(complex)
    }

    /// Parses one `[multiplicity]species` term.
    fn term(&self, token: &Token<'_>) -> Result<(SpeciesId, u32), ParseError> {
        let text = token.text;
        let digits = text.chars().take_while(|c| c.is_ascii_digit()).count();
        let (prefix, name) = text.split_at(digits);
        if name.is_empty() {
            // Pure number: a multiplicity with no species attached.
            return Err(self.err(token.column, ParseErrorKind::DetachedMultiplicity));
        }
        let multiplicity = if prefix.is_empty() {
            1u32
        } else {
            let value: u32 = prefix.parse().map_err(|_| {
                self.err(token.column, ParseErrorKind::InvalidMultiplicity(prefix.to_string()))
            })?;
            if value == 0 {
                return Err(
                    self.err(token.column, ParseErrorKind::ZeroMultiplicity(name.to_string()))
                );
            }
            value
        };
        if multiplicity > MAX_MULTIPLICITY {
            return Err(self.err(
                token.column,
                ParseErrorKind::MultiplicityTooLarge {
                    species: name.to_string(),
                    multiplicity: u64::from(multiplicity),
                },
            ));
        }
        let species = self.species(token.column + digits, name)?;
        Ok((species, multiplicity))
    }

    fn reaction_line(&mut self, line: &str) -> Result<(), ParseError> {
        let gt = match line.find('>') {
            Some(i) => i,
            None => return Err(self.err(1, ParseErrorKind::ExpectedReactionOrInit)),
        };
        if gt == 0 || !line[..gt].ends_with('-') {
            return Err(self.err(column_at(line, gt), ParseErrorKind::MalformedArrow));
        }
        let after_arrow = &line[gt + 1..];
        if !after_arrow.starts_with('{') {
            return Err(self.err(column_at(line, gt) + 1, ParseErrorKind::MissingRate));
        }
        let brace = gt + 1;
        let close = match after_arrow.find('}') {
            Some(i) => brace + i,
            None => return Err(self.err(column_at(line, brace), ParseErrorKind::UnterminatedRate)),
        };
        let rate_text = &line[brace + 1..close];
        let rate_column = column_at(line, brace + 1);
        let rate: f64 = rate_text.trim().parse().map_err(|_| {
            self.err(rate_column, ParseErrorKind::InvalidRate(rate_text.to_string()))
        })?;
        if !rate.is_finite() || rate <= 0.0 {
            return Err(
                self.err(rate_column, ParseErrorKind::NonPositiveRate(rate_text.to_string()))
            );
        }
        let lhs_tokens = tokenize(&line[..gt - 1]);
        let reactants = self.complex(&lhs_tokens)?;
        // Columns on the product side are relative to the full line, so
        // re-tokenize with the prefix length folded in.
        let rhs_text = &line[close + 1..];
        let rhs_offset = column_at(line, close + 1) - 1;
        let mut rhs_tokens = tokenize(rhs_text);
        for t in &mut rhs_tokens {
            t.column += rhs_offset;
        }
        let products = self.complex(&rhs_tokens)?;
        let reaction = Reaction::new(reactants, products, rate)
            .expect("rate and multiplicities validated during parsing");
        self.reactions.push(reaction);
        Ok(())
    }

    fn init_line(&mut self, tokens: &[Token<'_>], line_len: usize) -> Result<(), ParseError> {
        // tokens[0] is the `init` keyword itself.
        let species_token = tokens
            .get(1)
            .ok_or_else(|| self.err(line_len + 1, ParseErrorKind::MalformedInit))?;
        let species = self.species(species_token.column, species_token.text)?;
        match tokens.get(2) {
            Some(t) if t.text == "=" => {}
            Some(t) => return Err(self.err(t.column, ParseErrorKind::MalformedInit)),
            None => return Err(self.err(line_len + 1, ParseErrorKind::MalformedInit)),
        }
        let value_token = tokens
            .get(3)
            .ok_or_else(|| self.err(line_len + 1, ParseErrorKind::MalformedInit))?;
        let value: f64 = value_token.text.parse().map_err(|_| {
            self.err(
                value_token.column,
                ParseErrorKind::InvalidInitialValue(value_token.text.to_string()),
            )
        })?;
        if !value.is_finite() || value < 0.0 {
            return Err(self.err(
                value_token.column,
                ParseErrorKind::NegativeInitialValue(value_token.text.to_string()),
            ));
        }
        if let Some(extra) = tokens.get(4) {
            return Err(
                self.err(extra.column, ParseErrorKind::TrailingText(extra.text.to_string()))
            );
        }
        if self.initials.iter().any(|(s, _)| *s == species) {
            return Err(self.err(
                species_token.column,
                ParseErrorKind::DuplicateInit(species.name().to_string()),
            ));
        }
        self.initials.push((species, value));
        Ok(())
    }
}

/// Parses the textual format into a document.
///
/// Errors carry the 1-based line and column of the offending token. The
/// resulting species order is canonical: first appearance across reaction
/// lines (written order), then `init`-only species in `init` order.
pub fn parse_crn(text: &str) -> Result<CrnDocument, ParseError> {
    let mut parser = LineParser {
        line_no: 0,
        appearance: Vec::new(),
        seen: std::collections::HashSet::new(),
        initials: Vec::new(),
        reactions: Vec::new(),
    };
    for (i, raw_line) in text.lines().enumerate() {
        parser.line_no = i + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        if line.trim().is_empty() {
            continue;
        }
        let tokens = tokenize(line);
        if tokens.first().map(|t| t.text) == Some("init") {
            parser.init_line(&tokens, line.chars().count())?;
        } else {
            parser.reaction_line(line)?;
        }
    }
    let LineParser { appearance, seen, initials, reactions, .. } = parser;
    let mut species = appearance;
    for (s, _) in &initials {
        if !seen.contains(s) {
            species.push(s.clone());
        }
    }
    let crn = Crn::new(species, reactions).expect("species collected from reactions");
    Ok(CrnDocument::new(crn, initials).expect("initial values validated during parsing"))
}

/// Renders a document in canonical textual form.
///
/// Reactions appear one per line in network order with complexes in species
/// order; `init` lines follow in species order. Formatting an already
/// canonical string reproduces it exactly.
pub fn format_crn(doc: &CrnDocument) -> String {
    let crn = doc.crn();
    let format_complex = |complex: &Complex| -> String {
        let mut terms = Vec::with_capacity(complex.len());
        for s in crn.species() {
            if let Some(&m) = complex.get(s) {
                if m == 1 {
                    terms.push(s.name().to_string());
                } else {
                    terms.push(format!("{m}{s}"));
                }
            }
        }
        terms.join(" + ")
    };
    let mut out = String::new();
    for reaction in crn.reactions() {
        let lhs = format_complex(reaction.reactants());
        let rhs = format_complex(reaction.products());
        let arrow = format!("->{{{}}}", reaction.rate());
        match (lhs.is_empty(), rhs.is_empty()) {
            (false, false) => out.push_str(&format!("{lhs} {arrow} {rhs}\n")),
            (true, false) => out.push_str(&format!("{arrow} {rhs}\n")),
            (false, true) => out.push_str(&format!("{lhs} {arrow}\n")),
            (true, true) => out.push_str(&format!("{arrow}\n")),
        }
    }
    for s in crn.species() {
        if let Some(&v) = doc.initial().get(s) {
            out.push_str(&format!("init {s} = {v}\n"));
        }
    }
    out
}
