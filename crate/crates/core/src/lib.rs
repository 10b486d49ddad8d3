//! Probabilistic event-calculus complex-event processing with an
//! end-to-end trainable simple-event classifier.
//!
//! Streams of per-step feature vectors are classified into simple-event
//! distributions by an MLP. Pattern rules ("k occurrences of a class within
//! w steps") turn those distributions into start/end probabilities of
//! complex events, and the whole pipeline is differentiable so the
//! classifier can be trained from complex-event labels alone.

pub mod checkpoint;
pub mod dataio;
pub mod ec;
pub mod inference;
pub mod nn;
pub mod purenn;
pub mod rules;
pub mod seed;
pub mod training;

pub use ec::{
    annotate_ground_truth, validate_ruleset, ClassDistribution, ClassId, EventKey, EventStream, FluentId, PatternRule,
    Polarity, QueryKind, QuerySample, RuleSet, TimePoint,
};
pub use rules::{parse_ruleset, pretty_print, ParseError, SourceSpan};
