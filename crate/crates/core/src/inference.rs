//! Exact pattern-query probabilities under independent per-step class atoms,
//! the holdsAt filtering recursion, and a brute-force enumeration oracle.

use thiserror::Error;

use crate::ec::{ClassDistribution, ClassId, EventKey, FluentId, PatternRule, Polarity, RuleSet, TimePoint};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("probability {0} outside [0,1]")]
    Domain(f64),
    #[error("time point {t} precedes the first full window (window {window} needs t >= {})", window - 1)]
    Window { t: TimePoint, window: usize },
    #[error("time point {t} beyond stream of length {len}")]
    OutOfRange { t: TimePoint, len: usize },
    #[error("rule polarity is {found}, expected {expected}")]
    Polarity { expected: Polarity, found: Polarity },
    #[error("no rule for {0:?}")]
    NoRule(EventKey),
    #[error("instance too large for enumeration: {classes}^{len} assignments exceeds {limit}")]
    TooLarge { classes: usize, len: usize, limit: u64 },
    #[error("distribution has {found} classes, ruleset declares {expected}")]
    ClassCount { expected: usize, found: usize },
}

/// Sequence of probabilities indexed by time point.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbSeries(pub Vec<f64>);

impl ProbSeries {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Arithmetic over probabilities. Implemented for plain `f64` evaluation and
/// for the differentiable circuit builder, so both share one code path.
pub trait ProbAlgebra {
    type Value: Clone;
    fn constant(&mut self, v: f64) -> Self::Value;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    /// `1 - a`
    fn complement(&mut self, a: &Self::Value) -> Self::Value;
}

/// Plain floating-point evaluation.
#[derive(Debug, Default, Clone, Copy)]
pub struct Real;

impl ProbAlgebra for Real {
    type Value = f64;
    fn constant(&mut self, v: f64) -> f64 {
        v
    }
    fn add(&mut self, a: &f64, b: &f64) -> f64 {
        a + b
    }
    fn mul(&mut self, a: &f64, b: &f64) -> f64 {
        a * b
    }
    fn complement(&mut self, a: &f64) -> f64 {
        1.0 - a
    }
}

/// Poisson-binomial tail `P(at least k events)` by a DP over capped counts.
///
/// `cells[j]` holds `P(count == j)` for `j < k` and `cells[k]` holds
/// `P(count >= k)`. Absent cells are exact zeros and emit no operations.
pub fn at_least_k_with<A: ProbAlgebra>(alg: &mut A, probs: &[A::Value], k: usize) -> A::Value {
    if k == 0 {
        return alg.constant(1.0);
    }
    if k > probs.len() {
        return alg.constant(0.0);
    }
    let mut cells: Vec<Option<A::Value>> = vec![None; k + 1];
    cells[0] = Some(alg.constant(1.0));
    for p in probs {
        let q = alg.complement(p);
        let mut next: Vec<Option<A::Value>> = vec![None; k + 1];
        // Saturated cell absorbs one more success.
        let carried = cells[k - 1].as_ref().map(|c| alg.mul(c, p));
        next[k] = sum_opt(alg, cells[k].clone(), carried);
        for j in (0..k).rev() {
            let stay = cells[j].as_ref().map(|c| alg.mul(c, &q));
            let step = if j > 0 { cells[j - 1].as_ref().map(|c| alg.mul(c, p)) } else { None };
            next[j] = sum_opt(alg, stay, step);
        }
        cells = next;
    }
    cells[k].take().unwrap_or_else(|| alg.constant(0.0))
}

fn sum_opt<A: ProbAlgebra>(alg: &mut A, a: Option<A::Value>, b: Option<A::Value>) -> Option<A::Value> {
    match (a, b) {
        (Some(a), Some(b)) => Some(alg.add(&a, &b)),
        (a, None) => a,
        (None, b) => b,
    }
}

/// Probability that a pattern fires, given the trigger-class probabilities
/// over its window (oldest first, anchor last).
pub fn pattern_with<A: ProbAlgebra>(alg: &mut A, window_probs: &[A::Value], count: usize) -> A::Value {
    let (anchor, earlier) = window_probs.split_last().expect("window is non-empty");
    let tail = at_least_k_with(alg, earlier, count.saturating_sub(1));
    alg.mul(anchor, &tail)
}

/// Exact `P(at least k of the independent Bernoulli events occur)`.
pub fn at_least_k_prob(bernoullis: &[f64], k: usize) -> Result<f64, InferenceError> {
    if let Some(&p) = bernoullis.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(InferenceError::Domain(p));
    }
    Ok(at_least_k_with(&mut Real, bernoullis, k).clamp(0.0, 1.0))
}

pub(crate) fn check_window(rule: &PatternRule, t: TimePoint, len: usize) -> Result<(), InferenceError> {
    if t + 1 < rule.window {
        return Err(InferenceError::Window { t, window: rule.window });
    }
    if t >= len {
        return Err(InferenceError::OutOfRange { t, len });
    }
    Ok(())
}

/// Probability that `rule` fires at `t`, regardless of polarity.
pub fn pattern_prob(dists: &[ClassDistribution], rule: &PatternRule, t: TimePoint) -> Result<f64, InferenceError> {
    check_window(rule, t, dists.len())?;
    let c = rule.trigger_class;
    let probs: Vec<f64> = dists[t + 1 - rule.window..=t].iter().map(|d| d.prob(c)).collect();
    Ok(pattern_with(&mut Real, &probs, rule.count).clamp(0.0, 1.0))
}

fn expect_polarity(rule: &PatternRule, expected: Polarity) -> Result<(), InferenceError> {
    if rule.polarity == expected {
        Ok(())
    } else {
        Err(InferenceError::Polarity { expected, found: rule.polarity })
    }
}

/// `P(startsAt(fluent, t))` for a Start rule.
pub fn start_prob(dists: &[ClassDistribution], rule: &PatternRule, t: TimePoint) -> Result<f64, InferenceError> {
    expect_polarity(rule, Polarity::Start)?;
    pattern_prob(dists, rule, t)
}

/// `P(endsAt(fluent, t))` for an End rule.
pub fn end_prob(dists: &[ClassDistribution], rule: &PatternRule, t: TimePoint) -> Result<f64, InferenceError> {
    expect_polarity(rule, Polarity::End)?;
    pattern_prob(dists, rule, t)
}

/// Start/end probability series for one rule; zero before the first full window.
pub fn pattern_series(dists: &[ClassDistribution], rule: &PatternRule) -> ProbSeries {
    ProbSeries(
        (0..dists.len())
            .map(|t| if t < rule.first_anchor() { 0.0 } else { pattern_prob(dists, rule, t).unwrap_or(0.0) })
            .collect(),
    )
}

/// Filtering recursion `h[t+1] = h[t](1 - term[t]) + (1 - h[t]) init[t]`
/// with `h[0] = h0`. Output has one value per stream step.
pub fn holds_at_filter(
    dists: &[ClassDistribution],
    rs: &RuleSet,
    fluent: FluentId,
    h0: f64,
) -> Result<ProbSeries, InferenceError> {
    if !(0.0..=1.0).contains(&h0) {
        return Err(InferenceError::Domain(h0));
    }
    let rule_for = |kind| {
        let key = EventKey { kind, fluent };
        rs.rule(key).ok_or(InferenceError::NoRule(key))
    };
    let init = pattern_series(dists, rule_for(Polarity::Start)?);
    let term = pattern_series(dists, rule_for(Polarity::End)?);
    Ok(filter_series(&init.0, &term.0, h0))
}

/// The holdsAt recursion over precomputed initiation/termination series.
pub fn filter_series(init: &[f64], term: &[f64], h0: f64) -> ProbSeries {
    let mut out = Vec::with_capacity(init.len());
    let mut h = h0;
    for (i, e) in init.iter().zip(term) {
        out.push(h);
        h = (h * (1.0 - e) + (1.0 - h) * i).clamp(0.0, 1.0);
    }
    ProbSeries(out)
}

/// Largest number of joint assignments the oracle will enumerate.
pub const ORACLE_LIMIT: u64 = 1_000_000;

/// Exact query probability by summing the probability of every joint class
/// assignment of the whole stream under which the deterministic pattern holds.
pub fn enumerate_oracle(
    dists: &[ClassDistribution],
    key: EventKey,
    t: TimePoint,
    rs: &RuleSet,
) -> Result<f64, InferenceError> {
    let rule = rs.rule(key).ok_or(InferenceError::NoRule(key))?;
    let classes = rs.num_classes();
    let len = dists.len();
    if let Some(d) = dists.iter().find(|d| d.num_classes() != classes) {
        return Err(InferenceError::ClassCount { expected: classes, found: d.num_classes() });
    }
    let too_large = InferenceError::TooLarge { classes, len, limit: ORACLE_LIMIT };
    let total = u32::try_from(len).ok().and_then(|n| (classes as u64).checked_pow(n)).ok_or(too_large.clone())?;
    if total > ORACLE_LIMIT {
        return Err(too_large);
    }
    check_window(rule, t, len)?;

    let mut assignment = vec![ClassId(0); len];
    let mut sum = 0.0;
    for _ in 0..total {
        if rule.fires(&assignment, t) {
            sum += assignment.iter().zip(dists).map(|(c, d)| d.prob(*c)).product::<f64>();
        }
        // odometer increment
        for slot in assignment.iter_mut() {
            slot.0 += 1;
            if slot.0 < classes {
                break;
            }
            slot.0 = 0;
        }
    }
    Ok(sum.clamp(0.0, 1.0))
}
