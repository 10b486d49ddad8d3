//! Event-calculus domain types: class distributions, streams, pattern rules
//! and the deterministic ground-truth annotation of streams.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index into a stream. One unit is one stream step.
pub type TimePoint = usize;

/// Identifier of a simple-event class (index into `RuleSet::classes`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassId(pub usize);

/// Identifier of a fluent (index into `RuleSet::fluents`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FluentId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Start,
    End,
}

impl Polarity {
    pub fn keyword(self) -> &'static str {
        match self {
            Polarity::Start => "start",
            Polarity::End => "end",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarity::Start => f.write_str("Start"),
            Polarity::End => f.write_str("End"),
        }
    }
}

/// Kind of a complex-event query. Queries mirror rule polarities one to one.
pub type QueryKind = Polarity;

/// A (kind, fluent) pair: "fluent f starts" or "fluent f ends".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventKey {
    pub kind: QueryKind,
    pub fluent: FluentId,
}

#[derive(Debug, Error, PartialEq)]
pub enum EcError {
    #[error("ground truth required")]
    GroundTruthRequired,
    #[error("invalid class distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid stream: {0}")]
    InvalidStream(String),
}

/// One supervised query: does `(kind, fluent)` fire at `t`?
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuerySample {
    pub kind: QueryKind,
    pub fluent: FluentId,
    pub t: TimePoint,
    pub label: bool,
}

impl QuerySample {
    pub fn key(&self) -> EventKey {
        EventKey { kind: self.kind, fluent: self.fluent }
    }
}

/// Categorical distribution over the `C` simple-event classes at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution(Vec<f64>);

impl ClassDistribution {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(probs: Vec<f64>) -> Result<Self, EcError> {
        if probs.is_empty() {
            return Err(EcError::InvalidDistribution("no classes".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(EcError::InvalidDistribution(format!("entry {p} outside [0,1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(EcError::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn one_hot(class: ClassId, num_classes: usize) -> Self {
        let mut probs = vec![0.0; num_classes];
        probs[class.0] = 1.0;
        Self(probs)
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self(vec![1.0 / num_classes as f64; num_classes])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn prob(&self, class: ClassId) -> f64 {
        self.0[class.0]
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    /// Most likely class; ties resolve to the lowest class id.
    pub fn argmax(&self) -> ClassId {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        ClassId(best)
    }
}

/// Complex events that fire at each step of a stream.
pub type EventLabels = Vec<Vec<EventKey>>;

/// Ordered feature vectors with optional frame classes and derived
/// complex-event labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStream {
    features: Vec<Vec<f64>>,
    gt_class: Option<Vec<ClassId>>,
    events: Option<EventLabels>,
}

impl EventStream {
    pub fn new(features: Vec<Vec<f64>>, gt_class: Option<Vec<ClassId>>) -> Result<Self, EcError> {
        if features.is_empty() {
            return Err(EcError::InvalidStream("stream is empty".into()));
        }
        let dim = features[0].len();
        if let Some(i) = features.iter().position(|f| f.len() != dim) {
            return Err(EcError::InvalidStream(format!(
                "feature vector at step {i} has dimension {}, expected {dim}",
                features[i].len()
            )));
        }
        if let Some(gt) = &gt_class {
            if gt.len() != features.len() {
                return Err(EcError::InvalidStream(format!(
                    "{} ground-truth classes for {} steps",
                    gt.len(),
                    features.len()
                )));
            }
        }
        Ok(Self { features, gt_class, events: None })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn feature(&self, t: TimePoint) -> &[f64] {
        &self.features[t]
    }

    pub fn gt_class(&self) -> Option<&[ClassId]> {
        self.gt_class.as_deref()
    }

    pub fn events(&self) -> Option<&EventLabels> {
        self.events.as_ref()
    }

    /// Attaches complex-event labels derived from the frame classes.
    pub fn with_annotation(mut self, rs: &RuleSet) -> Result<Self, EcError> {
        self.events = Some(annotate_ground_truth(&self, rs)?);
        Ok(self)
    }

    /// Attaches externally supplied complex-event labels.
    pub fn with_events(mut self, events: EventLabels) -> Result<Self, EcError> {
        if events.len() != self.len() {
            return Err(EcError::InvalidStream(format!("{} event label rows for {} steps", events.len(), self.len())));
        }
        self.events = Some(events);
        Ok(self)
    }

    /// Drops frame classes, leaving features and complex-event labels only.
    pub fn without_ground_truth(&self) -> Self {
        Self { features: self.features.clone(), gt_class: None, events: self.events.clone() }
    }

    /// Concatenates streams in order. Complex-event labels are not carried.
    pub fn concat(parts: &[EventStream]) -> Result<Self, EcError> {
        let mut features = Vec::new();
        let mut gt = Some(Vec::new());
        for part in parts {
            features.extend(part.features.iter().cloned());
            match (&mut gt, &part.gt_class) {
                (Some(acc), Some(g)) => acc.extend_from_slice(g),
                _ => gt = None,
            }
        }
        Self::new(features, gt)
    }
}

/// "k occurrences of the trigger class within w steps" anchored at the last
/// occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternRule {
    pub fluent: FluentId,
    pub polarity: Polarity,
    pub trigger_class: ClassId,
    pub count: usize,
    pub window: usize,
}

impl PatternRule {
    pub fn key(&self) -> EventKey {
        EventKey { kind: self.polarity, fluent: self.fluent }
    }

    /// Earliest step at which the rule can fire.
    pub fn first_anchor(&self) -> TimePoint {
        self.window.saturating_sub(1)
    }

    /// Deterministic firing condition over a class sequence.
    pub fn fires(&self, classes: &[ClassId], t: TimePoint) -> bool {
        if t + 1 < self.window || t >= classes.len() || classes[t] != self.trigger_class {
            return false;
        }
        let earlier = classes[t + 1 - self.window..t].iter().filter(|&&c| c == self.trigger_class).count();
        earlier + 1 >= self.count
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    pub classes: Vec<String>,
    pub fluents: Vec<String>,
    pub rules: Vec<PatternRule>,
}

/// A broken RuleSet invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

impl RuleSet {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_fluents(&self) -> usize {
        self.fluents.len()
    }

    pub fn class_id(&self, name: &str) -> Option<ClassId> {
        self.classes.iter().position(|c| c == name).map(ClassId)
    }

    pub fn fluent_id(&self, name: &str) -> Option<FluentId> {
        self.fluents.iter().position(|f| f == name).map(FluentId)
    }

    pub fn rule(&self, key: EventKey) -> Option<&PatternRule> {
        self.rules.iter().find(|r| r.key() == key)
    }

    /// All (kind, fluent) queries in canonical order: every Start, then every End.
    pub fn event_keys(&self) -> Vec<EventKey> {
        [Polarity::Start, Polarity::End]
            .into_iter()
            .flat_map(|kind| (0..self.num_fluents()).map(move |f| EventKey { kind, fluent: FluentId(f) }))
            .collect()
    }

    /// Largest window among the rules.
    pub fn max_window(&self) -> usize {
        self.rules.iter().map(|r| r.window).max().unwrap_or(0)
    }

    /// Copy with every rule's window replaced.
    pub fn with_window(&self, window: usize) -> RuleSet {
        let mut out = self.clone();
        for rule in &mut out.rules {
            rule.window = window;
        }
        out
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_ruleset(self)
    }
}

/// Lists every broken RuleSet invariant; an empty list means the set is valid.
pub fn validate_ruleset(rs: &RuleSet) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |location: String, message: &str| out.push(Violation { location, message: message.to_string() });

    if rs.classes.is_empty() {
        push("classes".into(), "no classes declared");
    }
    let mut seen = HashSet::new();
    for name in &rs.classes {
        if !seen.insert(name) {
            push(format!("class {name}"), "duplicate class name");
        }
    }
    let mut seen = HashSet::new();
    for name in &rs.fluents {
        if !seen.insert(name) {
            push(format!("fluent {name}"), "duplicate fluent name");
        }
    }

    for (i, rule) in rs.rules.iter().enumerate() {
        let location = match rs.fluents.get(rule.fluent.0) {
            Some(name) => format!("fluent {name} {} rule", rule.polarity.keyword()),
            None => {
                push(format!("rule {i}"), "unknown fluent");
                continue;
            }
        };
        if rule.trigger_class.0 >= rs.classes.len() {
            push(location.clone(), "trigger class out of range");
        }
        if rule.count < 2 {
            push(location.clone(), "count must be at least 2");
        }
        if rule.window < 2 {
            push(location.clone(), "window must be at least 2");
        }
        if rule.count > rule.window {
            push(location, "count exceeds window");
        }
    }

    for (f, name) in rs.fluents.iter().enumerate() {
        for polarity in [Polarity::Start, Polarity::End] {
            let n = rs.rules.iter().filter(|r| r.fluent == FluentId(f) && r.polarity == polarity).count();
            match n {
                0 => push(format!("fluent {name}"), &format!("missing {polarity} rule")),
                1 => {}
                _ => push(format!("fluent {name}"), &format!("multiple {polarity} rules")),
            }
        }
    }
    out
}

/// Deterministic complex-event labels from frame classes: `(kind, f)` is in
/// `out[t]` iff the rule for `(kind, f)` fires at `t`.
pub fn annotate_ground_truth(stream: &EventStream, rs: &RuleSet) -> Result<EventLabels, EcError> {
    let gt = stream.gt_class().ok_or(EcError::GroundTruthRequired)?;
    Ok(annotate_classes(gt, rs))
}

pub(crate) fn annotate_classes(gt: &[ClassId], rs: &RuleSet) -> EventLabels {
    let keys = rs.event_keys();
    (0..gt.len())
        .map(|t| keys.iter().copied().filter(|&key| rs.rule(key).is_some_and(|r| r.fires(gt, t))).collect())
        .collect()
}
