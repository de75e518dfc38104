//! The DNF concept grammar: types, sampling, evaluation, and exact priors.
//!
//! Concepts are definitions in disjunctive normal form over `n` binary
//! features, produced by a small context-free grammar:
//!
//! ```text
//! S      -> forall x. l(x) <=> D_top
//! D_top  -> C_top | D
//! C_top  -> P & C
//! D      -> C_top | D    /  False
//! C      -> P & C    /  True
//! P      -> F_1 ... F_n
//! F_i    -> f_i(x)=1  /  f_i(x)=0
//! ```
//!
//! `D_top`/`C_top` force every derivation to contain at least one disjunct,
//! and every disjunct opens with a real literal (its `C`-chain tail may stop
//! at `True` immediately), so derivable formulas have no empty conjunctions
//! and at least one disjunct. Each nonterminal carries a vector
//! of production probabilities; sampling those vectors from a symmetric
//! Dirichlet and marginalizing yields the closed-form prior over formulas
//! computed by [`marginal_log_prior`].

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Nonterminal indices into [`Grammar::nonterminals`], [`ProbTable::probs`]
/// and [`ProductionCounts::counts`]. Feature nonterminal `F_i` lives at
/// `NT_F_BASE + i - 1`.
pub const NT_S: usize = 0;
pub const NT_D_TOP: usize = 1;
pub const NT_C_TOP: usize = 2;
pub const NT_D: usize = 3;
pub const NT_C: usize = 4;
pub const NT_P: usize = 5;
pub const NT_F_BASE: usize = 6;

/// Production indices for the two-way nonterminals.
pub const D_CONS: usize = 0; // D -> C_top | D
pub const D_FALSE: usize = 1; // D -> False
pub const C_CONS: usize = 0; // C -> P & C
pub const C_TRUE: usize = 1; // C -> True
pub const F_ONE: usize = 0; // F_i -> f_i(x)=1
pub const F_ZERO: usize = 1; // F_i -> f_i(x)=0

/// An object: a fixed-length vector of binary feature values.
///
/// The bitstring form writes feature 1 first, so `"0111"` has feature 1 = 0
/// and features 2..4 = 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Object {
    bits: Vec<u8>,
}

impl Object {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidArgument("object bits must be 0 or 1".into()));
        }
        Ok(Object { bits })
    }

    pub fn from_bitstring(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0u8),
                '1' => Ok(1u8),
                other => Err(Error::InvalidArgument(format!(
                    "invalid bit {other:?} in object {s:?}"
                ))),
            })
            .collect::<Result<Vec<u8>>>()?;
        if bits.is_empty() {
            return Err(Error::InvalidArgument("empty object bitstring".into()));
        }
        Ok(Object { bits })
    }

    pub fn bitstring(&self) -> String {
        self.bits.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Value of feature `i` (1-based).
    pub fn feature(&self, i: usize) -> Option<u8> {
        if i == 0 {
            return None;
        }
        self.bits.get(i - 1).copied()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Position in the canonical enumeration of the object space: the
    /// bitstring read as a binary number (feature 1 is the high bit).
    pub fn index(&self) -> usize {
        self.bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize)
    }

    /// All `2^n` objects in canonical order.
    pub fn all(n_features: usize) -> Vec<Object> {
        let count = 1usize << n_features;
        (0..count)
            .map(|ix| {
                let bits = (0..n_features)
                    .map(|i| ((ix >> (n_features - 1 - i)) & 1) as u8)
                    .collect();
                Object { bits }
            })
            .collect()
    }
}

impl Serialize for Object {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.bitstring())
    }
}

impl<'de> Deserialize<'de> for Object {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Object::from_bitstring(&s).map_err(serde::de::Error::custom)
    }
}

/// A single feature assertion `f_i(x) = value`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureLiteral {
    /// 1-based feature index.
    pub feature: usize,
    /// Asserted value, 0 or 1.
    pub value: u8,
}

impl FeatureLiteral {
    pub fn new(feature: usize, value: u8) -> Result<Self> {
        if feature == 0 {
            return Err(Error::InvalidArgument("feature index is 1-based".into()));
        }
        if value > 1 {
            return Err(Error::InvalidArgument("literal value must be 0 or 1".into()));
        }
        Ok(FeatureLiteral { feature, value })
    }

    pub fn satisfied_by(&self, object: &Object) -> Result<bool> {
        match object.feature(self.feature) {
            Some(v) => Ok(v == self.value),
            None => Err(Error::InvalidArgument(format!(
                "literal references feature {} but object has {} features",
                self.feature,
                object.len()
            ))),
        }
    }
}

/// A conjunction of literals. The empty conjunction is satisfied by every
/// object and prints as `(TRUE)`; it is representable for generality but no
/// grammar derivation produces one (every disjunct opens through `C_top`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Conjunction {
    pub literals: Vec<FeatureLiteral>,
}

impl Conjunction {
    pub fn new(literals: Vec<FeatureLiteral>) -> Self {
        Conjunction { literals }
    }

    pub fn satisfied_by(&self, object: &Object) -> Result<bool> {
        for lit in &self.literals {
            if !lit.satisfied_by(object)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// A DNF formula: an ordered disjunction of conjunctions. The empty
/// disjunction denotes `False`. Order and duplicates are preserved so that
/// formulas correspond one-to-one with grammar derivations.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Formula {
    pub conjunctions: Vec<Conjunction>,
}

impl Formula {
    pub fn new(conjunctions: Vec<Conjunction>) -> Self {
        Formula { conjunctions }
    }

    pub fn is_false(&self) -> bool {
        self.conjunctions.is_empty()
    }

    /// Total number of literals; the enumeration budget unit.
    pub fn literal_count(&self) -> usize {
        self.conjunctions.iter().map(|c| c.literals.len()).sum()
    }
}

/// True iff some conjunction is fully satisfied by the object.
pub fn evaluate(formula: &Formula, object: &Object) -> Result<bool> {
    for conj in &formula.conjunctions {
        if conj.satisfied_by(object)? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Evaluation of `formula` over the whole `2^n` object space, packed as a
/// bitmask indexed by [`Object::index`].
pub fn eval_mask(formula: &Formula, n_features: usize) -> Result<u64> {
    debug_assert!(n_features <= 6);
    let mut mask = 0u64;
    for (ix, object) in Object::all(n_features).iter().enumerate() {
        if evaluate(formula, object)? {
            mask |= 1 << ix;
        }
    }
    Ok(mask)
}

/// One production: a named right-hand side, for display and validation only.
/// Sampling and counting use the fixed rule layout documented at the top of
/// this module.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Production {
    pub rhs: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Nonterminal {
    pub name: String,
    pub productions: Vec<Production>,
}

/// The DNF grammar for a fixed feature count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grammar {
    n_features: usize,
    nonterminals: Vec<Nonterminal>,
}

impl Grammar {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn nonterminals(&self) -> &[Nonterminal] {
        &self.nonterminals
    }

    /// Number of productions of nonterminal `nt`.
    pub fn arity(&self, nt: usize) -> usize {
        self.nonterminals[nt].productions.len()
    }
}

/// The grammar of the figure: fixed rules, `n_features` feature
/// nonterminals.
pub fn default_grammar(n_features: usize) -> Result<Grammar> {
    if n_features < 1 {
        return Err(Error::InvalidArgument(format!(
            "n_features must be >= 1, got {n_features}"
        )));
    }
    let nt = |name: &str, rhs: &[String]| Nonterminal {
        name: name.to_string(),
        productions: rhs.iter().map(|r| Production { rhs: r.clone() }).collect(),
    };
    let mut nonterminals = vec![
        nt("S", &["forall x. l(x) <=> D_top".to_string()]),
        nt("D_top", &["C_top | D".to_string()]),
        nt("C_top", &["P & C".to_string()]),
        nt("D", &["C_top | D".to_string(), "False".to_string()]),
        nt("C", &["P & C".to_string(), "True".to_string()]),
        nt(
            "P",
            &(1..=n_features).map(|i| format!("F_{i}")).collect::<Vec<_>>(),
        ),
    ];
    for i in 1..=n_features {
        nonterminals.push(nt(
            &format!("F_{i}"),
            &[format!("f_{i}(x)=1"), format!("f_{i}(x)=0")],
        ));
    }
    Ok(Grammar { n_features, nonterminals })
}

/// Per-nonterminal production probability vectors, aligned with
/// [`Grammar::nonterminals`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbTable {
    pub probs: Vec<Vec<f64>>,
}

impl ProbTable {
    /// Uniform probabilities for every nonterminal.
    pub fn uniform(grammar: &Grammar) -> ProbTable {
        let probs = grammar
            .nonterminals
            .iter()
            .map(|nt| {
                let m = nt.productions.len();
                vec![1.0 / m as f64; m]
            })
            .collect();
        ProbTable { probs }
    }

    pub fn validate(&self, grammar: &Grammar) -> Result<()> {
        if self.probs.len() != grammar.nonterminals.len() {
            return Err(Error::InvalidArgument("prob table shape mismatch".into()));
        }
        for (nt, p) in grammar.nonterminals.iter().zip(&self.probs) {
            if p.len() != nt.productions.len() {
                return Err(Error::InvalidArgument(format!(
                    "prob vector for {} has wrong length",
                    nt.name
                )));
            }
            if p.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "negative or NaN probability for {}",
                    nt.name
                )));
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "probabilities for {} sum to {sum}",
                    nt.name
                )));
            }
        }
        Ok(())
    }
}

/// How many times each production fired in a derivation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductionCounts {
    pub counts: Vec<Vec<u64>>,
}

/// Draw a probability table with each nonterminal's vector from a symmetric
/// Dirichlet(`alpha`). Single-production nonterminals get `[1.0]`.
pub fn sample_prob_table(grammar: &Grammar, alpha: f64, rng: &mut Rng) -> Result<ProbTable> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be > 0, got {alpha}")));
    }
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("bad Dirichlet alpha: {e}")))?;
    let mut probs = Vec::with_capacity(grammar.nonterminals.len());
    for nt in &grammar.nonterminals {
        let m = nt.productions.len();
        if m == 1 {
            probs.push(vec![1.0]);
            continue;
        }
        loop {
            let draws: Vec<f64> = (0..m).map(|_| gamma.sample(rng)).collect();
            let sum: f64 = draws.iter().sum();
            if sum > 0.0 && sum.is_finite() {
                probs.push(draws.iter().map(|d| d / sum).collect());
                break;
            }
            // all-zero underflow at tiny alpha: redraw
        }
    }
    Ok(ProbTable { probs })
}

fn choose(weights: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

const MAX_REJECTIONS: usize = 10_000;

/// Sample a formula by recursive expansion from `S`. A derivation whose
/// `D`/`C`-family expansion count exceeds `max_depth` is discarded and the
/// formula resampled (the probability table stays fixed), so the result is
/// the conditional distribution on bounded derivations.
pub fn sample_formula(
    grammar: &Grammar,
    probs: &ProbTable,
    rng: &mut Rng,
    max_depth: usize,
) -> Result<Formula> {
    if max_depth < 2 {
        return Err(Error::InvalidArgument("max_depth must be >= 2".into()));
    }
    probs.validate(grammar)?;
    for _ in 0..MAX_REJECTIONS {
        if let Some(f) = try_sample(probs, rng, max_depth) {
            return Ok(f);
        }
    }
    Err(Error::SamplingDiverged(MAX_REJECTIONS))
}

fn try_sample(probs: &ProbTable, rng: &mut Rng, max_depth: usize) -> Option<Formula> {
    let mut expansions = 0usize;
    let budget = |e: &mut usize| {
        *e += 1;
        *e <= max_depth
    };
    let sample_literal = |rng: &mut Rng| -> FeatureLiteral {
        let feature = choose(&probs.probs[NT_P], rng) + 1;
        let value_ix = choose(&probs.probs[NT_F_BASE + feature - 1], rng);
        FeatureLiteral {
            feature,
            value: if value_ix == F_ONE { 1 } else { 0 },
        }
    };
    let mut conjunctions = Vec::new();

    // Every disjunct expands through C_top, so its head literal is forced
    // and only the C-chain tail is free.
    let expand_c_top = |rng: &mut Rng, expansions: &mut usize| -> Option<Conjunction> {
        if !budget(expansions) {
            return None;
        }
        let mut lits = vec![sample_literal(rng)];
        loop {
            if !budget(expansions) {
                return None;
            }
            match choose(&probs.probs[NT_C], rng) {
                C_CONS => lits.push(sample_literal(rng)),
                _ => break,
            }
        }
        Some(Conjunction::new(lits))
    };

    // D_top -> C_top | D, then the D chain for the remaining disjuncts.
    conjunctions.push(expand_c_top(rng, &mut expansions)?);
    loop {
        if !budget(&mut expansions) {
            return None;
        }
        match choose(&probs.probs[NT_D], rng) {
            D_FALSE => break,
            _ => conjunctions.push(expand_c_top(rng, &mut expansions)?),
        }
    }
    Some(Formula::new(conjunctions))
}

/// Production counts of the unique derivation of `formula`.
///
/// Rejects formulas a derivation cannot produce: the empty disjunction, any
/// empty conjunction, or out-of-range feature indices.
pub fn derivation_counts(formula: &Formula, grammar: &Grammar) -> Result<ProductionCounts> {
    let n = grammar.n_features;
    if formula.conjunctions.is_empty() {
        return Err(Error::NotDerivable(
            "the empty disjunction (False) has no derivation: D_top forces one disjunct".into(),
        ));
    }
    if formula.conjunctions.iter().any(|c| c.literals.is_empty()) {
        return Err(Error::NotDerivable(
            "conjunctions must be nonempty: every disjunct opens through C_top".into(),
        ));
    }
    let mut counts: Vec<Vec<u64>> = grammar
        .nonterminals
        .iter()
        .map(|nt| vec![0u64; nt.productions.len()])
        .collect();
    let k = formula.conjunctions.len() as u64;
    counts[NT_S][0] = 1;
    counts[NT_D_TOP][0] = 1;
    counts[NT_C_TOP][0] = k;
    counts[NT_D][D_CONS] = k - 1;
    counts[NT_D][D_FALSE] = 1;
    counts[NT_C][C_TRUE] = k;
    for conj in &formula.conjunctions {
        // Each conjunction's head literal comes from C_top, not C.
        counts[NT_C][C_CONS] += conj.literals.len() as u64 - 1;
        for lit in &conj.literals {
            if lit.feature == 0 || lit.feature > n {
                return Err(Error::NotDerivable(format!(
                    "literal feature {} out of range for {n}-feature grammar",
                    lit.feature
                )));
            }
            counts[NT_P][lit.feature - 1] += 1;
            let slot = if lit.value == 1 { F_ONE } else { F_ZERO };
            counts[NT_F_BASE + lit.feature - 1][slot] += 1;
        }
    }
    Ok(ProductionCounts { counts })
}

/// Log probability of `formula` under fixed production probabilities: the sum
/// of log rule probabilities along its unique derivation. Returns `-inf` if a
/// used rule has probability zero.
pub fn log_prob_given_probs(formula: &Formula, grammar: &Grammar, probs: &ProbTable) -> Result<f64> {
    let counts = derivation_counts(formula, grammar)?;
    Ok(log_prob_of_counts(&counts, probs))
}

pub fn log_prob_of_counts(counts: &ProductionCounts, probs: &ProbTable) -> f64 {
    let mut total = 0.0;
    for (cs, ps) in counts.counts.iter().zip(&probs.probs) {
        for (&c, &p) in cs.iter().zip(ps) {
            if c == 0 {
                continue;
            }
            if p <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total += c as f64 * p.ln();
        }
    }
    total
}

/// Log of the Dirichlet-marginalized prior of `formula`: for each
/// nonterminal `Y` with counts `c`, the Dirichlet-multinomial term
/// `B(c + alpha) / B(alpha)` (single-production nonterminals contribute 0).
pub fn marginal_log_prior(formula: &Formula, grammar: &Grammar, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument("alpha must be > 0".into()));
    }
    let counts = derivation_counts(formula, grammar)?;
    Ok(marginal_log_prior_of_counts(&counts, alpha))
}

pub fn marginal_log_prior_of_counts(counts: &ProductionCounts, alpha: f64) -> f64 {
    let mut total = 0.0;
    for cs in &counts.counts {
        let m = cs.len();
        if m < 2 {
            continue;
        }
        let n_total: u64 = cs.iter().sum();
        if n_total == 0 {
            continue;
        }
        total += ln_gamma(m as f64 * alpha) - ln_gamma(n_total as f64 + m as f64 * alpha);
        for &c in cs {
            if c > 0 {
                total += ln_gamma(c as f64 + alpha) - ln_gamma(alpha);
            }
        }
    }
    total
}

/// Hard cap on enumeration size; beyond this the call reports resource
/// exhaustion instead of thrashing memory.
pub const ENUMERATION_LIMIT: u64 = 200_000_000;

/// Number of formulas with [`Formula::literal_count`] at most `max_literals`.
pub fn count_formulas(grammar: &Grammar, max_literals: usize) -> u64 {
    let lits = 2 * grammar.n_features as u64;
    // chains[b] = number of conjunction sequences (each nonempty, a
    // conjunction with j literals coming in lits^j variants) with total
    // literal count exactly b; chains[0] = 1 counts the empty tail, which a
    // formula itself can never be, so formulas with c literals = chains[c]
    // for c >= 1.
    let mut chains = vec![0u64; max_literals + 1];
    chains[0] = 1;
    for b in 1..=max_literals {
        let mut acc = 0u64;
        let mut ways = 1u64;
        for j in 1..=b {
            ways = ways.saturating_mul(lits);
            acc = acc.saturating_add(ways.saturating_mul(chains[b - j]));
        }
        chains[b] = acc;
    }
    chains[1..].iter().fold(0u64, |t, &c| t.saturating_add(c))
}

/// Visit every formula with [`Formula::literal_count`] `<= max_literals`,
/// each exactly once. Every conjunction is nonempty, so the bound makes the
/// set finite.
pub fn for_each_formula<F: FnMut(&Formula) -> Result<()>>(
    grammar: &Grammar,
    max_literals: usize,
    mut visit: F,
) -> Result<()> {
    if max_literals < 1 {
        return Err(Error::InvalidArgument("max_literals must be >= 1".into()));
    }
    let count = count_formulas(grammar, max_literals);
    if count > ENUMERATION_LIMIT {
        return Err(Error::ResourceExhausted(count, ENUMERATION_LIMIT));
    }
    let n = grammar.n_features;
    let mut literals = Vec::with_capacity(2 * n);
    for feature in 1..=n {
        for value in [1u8, 0u8] {
            literals.push(FeatureLiteral { feature, value });
        }
    }
    // Depth-first over conjunction slots; every conjunction holds at least
    // one literal. `tails` is entered with a complete formula and `budget`
    // left for further disjuncts; `grow_or_close` is entered while the last
    // conjunction is still open.
    fn tails<F: FnMut(&Formula) -> Result<()>>(
        formula: &mut Formula,
        literals: &[FeatureLiteral],
        budget: usize,
        visit: &mut F,
    ) -> Result<()> {
        visit(formula)?;
        if budget >= 1 {
            for &lit in literals {
                formula.conjunctions.push(Conjunction::new(vec![lit]));
                grow_or_close(formula, literals, budget - 1, visit)?;
                formula.conjunctions.pop();
            }
        }
        Ok(())
    }
    fn grow_or_close<F: FnMut(&Formula) -> Result<()>>(
        formula: &mut Formula,
        literals: &[FeatureLiteral],
        budget: usize,
        visit: &mut F,
    ) -> Result<()> {
        tails(formula, literals, budget, visit)?;
        if budget >= 1 {
            for &lit in literals {
                formula.conjunctions.last_mut().unwrap().literals.push(lit);
                grow_or_close(formula, literals, budget - 1, visit)?;
                formula.conjunctions.last_mut().unwrap().literals.pop();
            }
        }
        Ok(())
    }
    let mut formula = Formula::default();
    for &head in &literals {
        formula.conjunctions.push(Conjunction::new(vec![head]));
        grow_or_close(&mut formula, &literals, max_literals - 1, &mut visit)?;
        formula.conjunctions.pop();
    }
    Ok(())
}

/// Materialized version of [`for_each_formula`].
pub fn enumerate_formulas(grammar: &Grammar, max_literals: usize) -> Result<Vec<Formula>> {
    let mut out = Vec::new();
    for_each_formula(grammar, max_literals, |f| {
        out.push(f.clone());
        Ok(())
    })?;
    Ok(out)
}

impl fmt::Display for Formula {
    /// Text form: `(f3=1 & f2=0) | (f1=1)`, `FALSE` for the empty
    /// disjunction, `(TRUE)` for an empty disjunct. Round-trips byte-exactly
    /// through the `FromStr` parser.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.conjunctions.is_empty() {
            return write!(f, "FALSE");
        }
        for (i, conj) in self.conjunctions.iter().enumerate() {
            if i > 0 {
                write!(f, " | ")?;
            }
            write!(f, "(")?;
            if conj.literals.is_empty() {
                write!(f, "TRUE")?;
            } else {
                for (j, lit) in conj.literals.iter().enumerate() {
                    if j > 0 {
                        write!(f, " & ")?;
                    }
                    write!(f, "f{}={}", lit.feature, lit.value)?;
                }
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl FromStr for Formula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Parse { line: 0, msg: format!("{msg} in formula {s:?}") };
        let s = s.trim();
        if s == "FALSE" {
            return Ok(Formula::default());
        }
        let mut conjunctions = Vec::new();
        for part in s.split(" | ") {
            let inner = part
                .strip_prefix('(')
                .and_then(|p| p.strip_suffix(')'))
                .ok_or_else(|| bad("disjunct not parenthesized"))?;
            if inner == "TRUE" {
                conjunctions.push(Conjunction::default());
                continue;
            }
            let mut literals = Vec::new();
            for tok in inner.split(" & ") {
                let rest = tok.strip_prefix('f').ok_or_else(|| bad("literal must start with 'f'"))?;
                let (feat, val) = rest.split_once('=').ok_or_else(|| bad("literal missing '='"))?;
                let feature: usize = feat.parse().map_err(|_| bad("bad feature index"))?;
                let value: u8 = match val {
                    "0" => 0,
                    "1" => 1,
                    _ => return Err(bad("literal value must be 0 or 1")),
                };
                literals.push(FeatureLiteral::new(feature, value)?);
            }
            conjunctions.push(Conjunction::new(literals));
        }
        Ok(Formula::new(conjunctions))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use std::collections::{HashMap, HashSet};

    fn lit(feature: usize, value: u8) -> FeatureLiteral {
        FeatureLiteral { feature, value }
    }

    fn formula(conjs: &[&[FeatureLiteral]]) -> Formula {
        Formula::new(conjs.iter().map(|c| Conjunction::new(c.to_vec())).collect())
    }

    #[test]
    fn default_grammar_shapes() {
        let g = default_grammar(4).unwrap();
        assert_eq!(g.arity(NT_P), 4);
        assert_eq!(g.nonterminals().len(), 6 + 4);

        let g1 = default_grammar(1).unwrap();
        assert_eq!(g1.arity(NT_P), 1);
        assert_eq!(g1.arity(NT_F_BASE), 2);

        // n=3: 3 features x 2 values of terminal literal choices
        let g3 = default_grammar(3).unwrap();
        let choices: usize = (0..3).map(|i| g3.arity(NT_F_BASE + i)).sum();
        assert_eq!(choices, 6);

        assert!(default_grammar(0).is_err());
    }

    #[test]
    fn object_roundtrip_and_index() {
        let o = Object::from_bitstring("0111").unwrap();
        assert_eq!(o.feature(1), Some(0));
        assert_eq!(o.feature(4), Some(1));
        assert_eq!(o.bitstring(), "0111");
        assert_eq!(o.index(), 0b0111);
        assert_eq!(Object::all(4).len(), 16);
        assert!(Object::from_bitstring("01x1").is_err());
    }

    #[test]
    fn prob_table_single_production_is_one() {
        let g = default_grammar(4).unwrap();
        let mut r = rng::root(1);
        let pt = sample_prob_table(&g, 1.0, &mut r).unwrap();
        assert_eq!(pt.probs[NT_C_TOP], vec![1.0]);
        assert_eq!(pt.probs[NT_S], vec![1.0]);
        pt.validate(&g).unwrap();
    }

    #[test]
    fn prob_table_fixed_seed_is_reproducible() {
        let g = default_grammar(4).unwrap();
        let a = sample_prob_table(&g, 1.0, &mut rng::root(42)).unwrap();
        let b = sample_prob_table(&g, 1.0, &mut rng::root(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prob_table_large_alpha_mean_near_uniform() {
        // As alpha grows the Dirichlet concentrates on the uniform vector;
        // check the empirical mean of the P-vector over 10^4 draws at a large
        // alpha against the 3-sigma band for the component mean.
        let g = default_grammar(4).unwrap();
        let alpha = 100.0;
        let draws = 10_000usize;
        let m = 4.0;
        let var = (1.0 / m) * (1.0 - 1.0 / m) / (m * alpha + 1.0);
        let sigma_mean = (var / draws as f64).sqrt();
        let mut r = rng::root(9);
        let mut mean = vec![0.0f64; 4];
        for _ in 0..draws {
            let pt = sample_prob_table(&g, alpha, &mut r).unwrap();
            for (acc, &p) in mean.iter_mut().zip(&pt.probs[NT_P]) {
                *acc += p;
            }
        }
        for acc in &mut mean {
            *acc /= draws as f64;
            assert!((*acc - 0.25).abs() < 3.0 * sigma_mean, "mean {acc} vs 0.25");
        }
    }

    #[test]
    fn forced_probs_sample_single_literal() {
        let g = default_grammar(4).unwrap();
        let mut pt = ProbTable::uniform(&g);
        pt.probs[NT_D] = vec![0.0, 1.0]; // always False
        pt.probs[NT_C] = vec![0.0, 1.0]; // always True
        let mut r = rng::root(3);
        for _ in 0..50 {
            let f = sample_formula(&g, &pt, &mut r, 25).unwrap();
            assert_eq!(f.conjunctions.len(), 1);
            assert_eq!(f.conjunctions[0].literals.len(), 1);
        }
    }

    #[test]
    fn sampled_conjunctions_all_nonempty() {
        let g = default_grammar(4).unwrap();
        let pt = ProbTable::uniform(&g);
        let mut r = rng::root(4);
        for _ in 0..500 {
            let f = sample_formula(&g, &pt, &mut r, 25).unwrap();
            assert!(!f.conjunctions.is_empty());
            assert!(f.conjunctions.iter().all(|c| !c.literals.is_empty()));
        }
    }

    #[test]
    fn single_literal_probability_under_uniform_probs() {
        // S -> ... (forced) ; literal choice 1/4 * 1/2 ; C -> True 1/2 ;
        // D -> False 1/2: each single-literal formula has probability 1/32.
        let g = default_grammar(4).unwrap();
        let f = formula(&[&[lit(1, 1)]]);
        let pt = ProbTable::uniform(&g);
        let lp = log_prob_given_probs(&f, &g, &pt).unwrap();
        assert!((lp - (1.0f64 / 32.0).ln()).abs() < 1e-12);

        // empirical check over 10^5 samples, 3 sigma binomial band
        let mut r = rng::root(5);
        let n = 100_000usize;
        let mut hits_specific = 0usize;
        let mut hits_any_single = 0usize;
        for _ in 0..n {
            let s = sample_formula(&g, &pt, &mut r, 50).unwrap();
            if s == f {
                hits_specific += 1;
            }
            if s.conjunctions.len() == 1 && s.conjunctions[0].literals.len() == 1 {
                hits_any_single += 1;
            }
        }
        let check = |hits: usize, p: f64| {
            let sigma = (p * (1.0 - p) * n as f64).sqrt();
            assert!(
                (hits as f64 - p * n as f64).abs() < 3.0 * sigma,
                "hits {hits} vs expected {}",
                p * n as f64
            );
        };
        check(hits_specific, 1.0 / 32.0);
        check(hits_any_single, 8.0 / 32.0);
    }

    #[test]
    fn zero_probability_rule_gives_neg_infinity() {
        let g = default_grammar(4).unwrap();
        let mut pt = ProbTable::uniform(&g);
        pt.probs[NT_P] = vec![0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        let f = formula(&[&[lit(1, 1)]]);
        assert_eq!(log_prob_given_probs(&f, &g, &pt).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn evaluate_paper_example() {
        // (f3=1 & f2=0) on 0010: feature 3 is 1, feature 2 is 0 -> true
        let f = formula(&[&[lit(3, 1), lit(2, 0)]]);
        let o = Object::from_bitstring("0010").unwrap();
        assert!(evaluate(&f, &o).unwrap());
        let o2 = Object::from_bitstring("0110").unwrap();
        assert!(!evaluate(&f, &o2).unwrap());
    }

    #[test]
    fn evaluate_false_and_symmetry() {
        let false_formula = Formula::default();
        for o in Object::all(4) {
            assert!(!evaluate(&false_formula, &o).unwrap());
        }
        let f = formula(&[&[lit(1, 0)]]);
        let trues = Object::all(4)
            .iter()
            .filter(|o| evaluate(&f, o).unwrap())
            .count();
        assert_eq!(trues, 8);
    }

    #[test]
    fn evaluate_out_of_range_errors() {
        let f = formula(&[&[lit(5, 1)]]);
        let o = Object::from_bitstring("0000").unwrap();
        assert!(evaluate(&f, &o).is_err());
    }

    #[test]
    fn derivation_counts_single_literal() {
        let g = default_grammar(4).unwrap();
        let f = formula(&[&[lit(1, 1)]]);
        let c = derivation_counts(&f, &g).unwrap();
        assert_eq!(c.counts[NT_D_TOP], vec![1]);
        assert_eq!(c.counts[NT_C_TOP], vec![1]);
        assert_eq!(c.counts[NT_P], vec![1, 0, 0, 0]);
        assert_eq!(c.counts[NT_F_BASE], vec![1, 0]);
        assert_eq!(c.counts[NT_C], vec![0, 1]); // C -> True once
        assert_eq!(c.counts[NT_D], vec![0, 1]); // D -> False once
    }

    #[test]
    fn derivation_counts_two_disjuncts() {
        let g = default_grammar(4).unwrap();
        let f = formula(&[&[lit(3, 1), lit(2, 0)], &[lit(1, 1)]]);
        let c = derivation_counts(&f, &g).unwrap();
        assert_eq!(c.counts[NT_D], vec![1, 1]);
        assert_eq!(c.counts[NT_C_TOP], vec![2]); // one per disjunct
        assert_eq!(c.counts[NT_C], vec![1, 2]); // (2-1)+(1-1) cons, one True per conj
    }

    #[test]
    fn false_formula_not_derivable() {
        let g = default_grammar(4).unwrap();
        assert!(matches!(
            derivation_counts(&Formula::default(), &g),
            Err(Error::NotDerivable(_))
        ));
        // empty conjunctions are rejected wherever they appear
        let f = Formula::new(vec![Conjunction::default()]);
        assert!(derivation_counts(&f, &g).is_err());
        let f2 = formula(&[&[lit(1, 1)], &[]]);
        assert!(derivation_counts(&f2, &g).is_err());
    }

    #[test]
    fn enumerate_small_spaces() {
        let g = default_grammar(4).unwrap();
        let fs = enumerate_formulas(&g, 1).unwrap();
        assert_eq!(fs.len(), 8);
        assert_eq!(count_formulas(&g, 1), 8);

        let g1 = default_grammar(1).unwrap();
        assert_eq!(enumerate_formulas(&g1, 1).unwrap().len(), 2);

        let fs3 = enumerate_formulas(&g, 3).unwrap();
        assert_eq!(fs3.len() as u64, count_formulas(&g, 3));
        let set: HashSet<String> = fs3.iter().map(|f| f.to_string()).collect();
        assert_eq!(set.len(), fs3.len(), "duplicate formulas in enumeration");
        for f in &fs3 {
            assert!(f.literal_count() <= 3);
            derivation_counts(f, &g).unwrap();
        }
    }

    #[test]
    fn marginal_prior_matches_monte_carlo() {
        // E_theta[P(f | theta)] over Dirichlet(1) draws vs the closed form.
        let g = default_grammar(4).unwrap();
        let f = formula(&[&[lit(1, 1)]]);
        let exact = marginal_log_prior(&f, &g, 1.0).unwrap().exp();
        let draws = 100_000usize;
        let mut r = rng::root(11);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..draws {
            let pt = sample_prob_table(&g, 1.0, &mut r).unwrap();
            let p = log_prob_given_probs(&f, &g, &pt).unwrap().exp();
            sum += p;
            sumsq += p * p;
        }
        let mean = sum / draws as f64;
        let var = (sumsq / draws as f64 - mean * mean).max(0.0);
        let sigma = (var / draws as f64).sqrt();
        assert!(
            (mean - exact).abs() < 3.0 * sigma,
            "MC {mean} vs exact {exact} (sigma {sigma})"
        );
    }

    #[test]
    fn marginal_prior_partial_mass_at_most_one() {
        let g = default_grammar(4).unwrap();
        let mut mass = 0.0;
        for_each_formula(&g, 4, |f| {
            mass += marginal_log_prior(f, &g, 1.0).unwrap().exp();
            Ok(())
        })
        .unwrap();
        assert!(mass <= 1.0 + 1e-9, "partial mass {mass}");
        assert!(mass > 0.5, "suspiciously low partial mass {mass}");
    }

    #[test]
    fn sampled_formulas_match_exact_probabilities() {
        // Empirical frequency of each bounded-size formula under fixed theta
        // vs exp(log_prob_given_probs), 3-sigma binomial bands.
        let g = default_grammar(4).unwrap();
        let pt = sample_prob_table(&g, 1.0, &mut rng::root(13)).unwrap();
        let n = 1_000_000usize;
        let mut freq: HashMap<String, usize> = HashMap::new();
        let mut r = rng::root(14);
        for _ in 0..n {
            let f = sample_formula(&g, &pt, &mut r, 50).unwrap();
            if f.literal_count() <= 2 {
                *freq.entry(f.to_string()).or_default() += 1;
            }
        }
        let mut checked = 0;
        for_each_formula(&g, 2, |f| {
            let p = log_prob_given_probs(f, &g, &pt).unwrap().exp();
            if p < 1e-4 {
                return Ok(());
            }
            let hits = *freq.get(&f.to_string()).unwrap_or(&0) as f64;
            let sigma = (p * (1.0 - p) * n as f64).sqrt();
            assert!(
                (hits - p * n as f64).abs() < 3.0 * sigma,
                "formula {f}: {hits} hits vs expected {}",
                p * n as f64
            );
            checked += 1;
            Ok(())
        })
        .unwrap();
        assert!(checked > 10);
    }

    #[test]
    fn display_and_parse_roundtrip() {
        let f = formula(&[&[lit(3, 1), lit(2, 0)], &[lit(1, 1)]]);
        let s = f.to_string();
        assert_eq!(s, "(f3=1 & f2=0) | (f1=1)");
        assert_eq!(s.parse::<Formula>().unwrap(), f);

        assert_eq!("FALSE".parse::<Formula>().unwrap(), Formula::default());
        assert_eq!(Formula::default().to_string(), "FALSE");

        let with_true = Formula::new(vec![
            Conjunction::new(vec![lit(1, 1)]),
            Conjunction::default(),
        ]);
        let s2 = with_true.to_string();
        assert_eq!(s2, "(f1=1) | (TRUE)");
        assert_eq!(s2.parse::<Formula>().unwrap(), with_true);

        assert!("(f1=2)".parse::<Formula>().is_err());
        assert!("f1=1".parse::<Formula>().is_err());
    }
}
