//! End-to-end training from complex-event labels, evaluation metrics and the
//! cross-validation driver shared by the hybrid model and the PureNN
//! baseline.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{assemble_sequence, training_folds, DataError, Dataset, NUM_FOLDS};
use crate::ec::{ClassDistribution, EcError, EventKey, EventStream, QuerySample, RuleSet, TimePoint};
use crate::inference::{pattern_prob, InferenceError};
use crate::nn::{bce_loss, classify_stream, query_forward, Adam, AdamConfig, Mlp, NnError, DEFAULT_HIDDEN};
use crate::seed::indexed_seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("complex-event labels required")]
    LabelsRequired,
    #[error("empty evaluation set")]
    EmptyEvaluation,
    #[error("non-finite loss {loss} at epoch {epoch}, step {step} ({sample:?})")]
    NonFiniteLoss { loss: f64, epoch: usize, step: usize, sample: QuerySample },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Stream(#[from] EcError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub points_per_epoch: usize,
    /// Pattern window applied to every rule.
    pub window: usize,
    /// Negatives per positive.
    pub ratio: f64,
    pub lr: f64,
    pub hidden: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            points_per_epoch: 750,
            window: 3,
            ratio: 1.0,
            lr: 1e-3,
            hidden: DEFAULT_HIDDEN,
            threshold: 0.5,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.window < 2 {
            return bad("window must be at least 2");
        }
        if self.points_per_epoch == 0 {
            return bad("points per epoch must be positive");
        }
        if !(self.ratio > 0.0 && self.ratio.is_finite()) {
            return bad("ratio must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.hidden == 0 {
            return bad("hidden width must be positive");
        }
        Ok(())
    }
}

/// Earliest time point used for queries: every rule has a full window there.
pub fn first_query_time(rs: &RuleSet) -> TimePoint {
    rs.max_window().saturating_sub(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPoints {
    pub samples: Vec<QuerySample>,
    pub positives: usize,
    pub negatives: usize,
}

/// Samples positives (true start/end anchors) and negatives (non-firing
/// `(kind, fluent, t)` triples) at `ratio` negatives per positive, within a
/// budget of `budget` points. With no positives the whole budget is negative.
pub fn build_training_points(
    stream: &EventStream,
    rs: &RuleSet,
    budget: usize,
    ratio: f64,
    seed: u64,
) -> Result<TrainingPoints, TrainError> {
    let events = stream.events().ok_or(TrainError::LabelsRequired)?;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (t, at_t) in events.iter().enumerate().skip(first_query_time(rs)) {
        for key in rs.event_keys() {
            let label = at_t.contains(&key);
            let q = QuerySample { kind: key.kind, fluent: key.fluent, t, label };
            if label {
                pos.push(q);
            } else {
                neg.push(q);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = (budget as f64 / (1.0 + ratio)).round() as usize;
    let n_pos = pos.len().min(target);
    let n_neg = if n_pos == 0 { budget } else { (budget - n_pos).min((n_pos as f64 * ratio).round() as usize) };
    let mut samples: Vec<QuerySample> = pos.choose_multiple(&mut rng, n_pos).copied().collect();
    let n_neg = n_neg.min(neg.len());
    samples.extend(neg.choose_multiple(&mut rng, n_neg).copied());
    samples.shuffle(&mut rng);
    Ok(TrainingPoints { samples, positives: n_pos, negatives: n_neg })
}

/// A model trainable from query labels.
pub trait QueryModel: Clone + Send + Sync {
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    /// Query probability `p` and the gradient of `seed_of(p) * p`, one
    /// buffer per tensor in `tensors_mut` order.
    fn query_grad(
        &self,
        stream: &EventStream,
        sample: &QuerySample,
        rs: &RuleSet,
        seed_of: &dyn Fn(f64) -> f64,
    ) -> Result<(f64, Vec<Vec<f64>>), TrainError>;

    fn frame_classifier(&self) -> &Mlp;

    /// Probabilities of every `rs.event_keys()` entry at `t`, given the frame
    /// distributions of the whole stream.
    fn event_probs(&self, dists: &[ClassDistribution], t: TimePoint, rs: &RuleSet) -> Result<Vec<f64>, TrainError>;
}

impl QueryModel for Mlp {
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        Mlp::tensors_mut(self).into_iter().collect()
    }

    fn query_grad(
        &self,
        stream: &EventStream,
        sample: &QuerySample,
        rs: &RuleSet,
        seed_of: &dyn Fn(f64) -> f64,
    ) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
        let fwd = query_forward(self, stream, sample, rs)?;
        let g = fwd.backward(seed_of(fwd.prob));
        Ok((fwd.prob, vec![g.hidden.weight, g.hidden.bias, g.output.weight, g.output.bias]))
    }

    fn frame_classifier(&self) -> &Mlp {
        self
    }

    fn event_probs(&self, dists: &[ClassDistribution], t: TimePoint, rs: &RuleSet) -> Result<Vec<f64>, TrainError> {
        rs.event_keys()
            .into_iter()
            .map(|key| {
                let rule = rs.rule(key).ok_or(InferenceError::NoRule(key)).map_err(NnError::from)?;
                pattern_prob(dists, rule, t).map_err(|e| TrainError::Nn(e.into()))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub params: M,
    /// Loss of every update, in order.
    pub losses: Vec<f64>,
    /// Every training sample consumed, in order.
    pub samples: Vec<QuerySample>,
}

/// Sampling seed of one epoch.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    indexed_seed(seed, "sampling", epoch as u64)
}

/// Per-sample Adam updates over `epochs x points_per_epoch` resampled
/// training points. Frame classes are stripped from the stream first, so
/// only complex-event labels reach the model.
pub fn fit<M: QueryModel>(
    init: M,
    stream: &EventStream,
    rs: &RuleSet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome<M>, TrainError> {
    cfg.validate()?;
    let stream = stream.without_ground_truth();
    let mut params = init;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut losses = Vec::with_capacity(cfg.epochs * cfg.points_per_epoch);
    let mut seen = Vec::with_capacity(cfg.epochs * cfg.points_per_epoch);
    for epoch in 0..cfg.epochs {
        let points = build_training_points(&stream, rs, cfg.points_per_epoch, cfg.ratio, epoch_seed(seed, epoch))?;
        for (step, sample) in points.samples.iter().enumerate() {
            let (prob, grads) = params.query_grad(&stream, sample, rs, &|p| bce_loss(p, sample.label).1)?;
            let (loss, _) = bce_loss(prob, sample.label);
            if !loss.is_finite() || !prob.is_finite() {
                return Err(TrainError::NonFiniteLoss { loss, epoch, step, sample: *sample });
            }
            let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            adam.step(&mut params.tensors_mut(), &grad_refs)?;
            losses.push(loss);
            seen.push(*sample);
        }
    }
    Ok(TrainOutcome { params, losses, samples: seen })
}

/// Fraction of steps whose argmax class matches the ground truth.
pub fn eval_sound_accuracy(params: &Mlp, stream: &EventStream) -> Result<f64, TrainError> {
    let gt = stream.gt_class().ok_or(EcError::GroundTruthRequired)?;
    if gt.is_empty() {
        return Err(TrainError::EmptyEvaluation);
    }
    let dists = classify_stream(params, stream)?;
    let correct = dists.iter().zip(gt).filter(|(d, g)| d.argmax() == **g).count();
    Ok(correct as f64 / gt.len() as f64)
}

/// Outcome counts of the pattern-accuracy protocol.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternConfusion {
    /// True event, predicted one of the events occurring there.
    pub event_correct: usize,
    /// True event, predicted a different event.
    pub event_wrong: usize,
    /// True event, predicted none.
    pub event_missed: usize,
    /// No event, predicted none.
    pub none_correct: usize,
    /// No event, predicted an event.
    pub false_alarm: usize,
}

impl PatternConfusion {
    pub fn total(&self) -> usize {
        self.event_correct + self.event_wrong + self.event_missed + self.none_correct + self.false_alarm
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (self.event_correct + self.none_correct) as f64 / total as f64
    }
}

/// Prediction at one evaluation point: the most probable event, or `None`
/// when every probability is below `threshold`. Ties go to the first key.
pub fn predict_event(probs: &[f64], keys: &[EventKey], threshold: f64) -> Option<EventKey> {
    let mut best: Option<usize> = None;
    for (i, p) in probs.iter().enumerate() {
        if best.is_none_or(|b| *p > probs[b]) {
            best = Some(i);
        }
    }
    best.filter(|&b| probs[b] >= threshold).map(|b| keys[b])
}

/// Evaluation points: every step with a true start/end plus an equal number
/// of seeded event-free steps (all of them if fewer exist).
pub fn evaluation_points(stream: &EventStream, rs: &RuleSet, seed: u64) -> Result<Vec<TimePoint>, TrainError> {
    let events = stream.events().ok_or(TrainError::LabelsRequired)?;
    let (pos, neg): (Vec<TimePoint>, Vec<TimePoint>) =
        (first_query_time(rs)..stream.len()).partition(|&t| !events[t].is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: BTreeSet<TimePoint> = neg.choose_multiple(&mut rng, pos.len().min(neg.len())).copied().collect();
    let mut points = pos;
    points.extend(picked);
    points.sort_unstable();
    Ok(points)
}

/// Pattern accuracy with its confusion counts.
pub fn pattern_confusion<M: QueryModel>(
    model: &M,
    stream: &EventStream,
    rs: &RuleSet,
    threshold: f64,
    seed: u64,
) -> Result<PatternConfusion, TrainError> {
    let events = stream.events().ok_or(TrainError::LabelsRequired)?;
    let points = evaluation_points(stream, rs, seed)?;
    let dists = classify_stream(model.frame_classifier(), stream)?;
    let keys = rs.event_keys();
    let mut out = PatternConfusion::default();
    for t in points {
        let probs = model.event_probs(&dists, t, rs)?;
        let truth = &events[t];
        match (predict_event(&probs, &keys, threshold), truth.is_empty()) {
            (None, true) => out.none_correct += 1,
            (Some(_), true) => out.false_alarm += 1,
            (None, false) => out.event_missed += 1,
            (Some(k), false) if truth.contains(&k) => out.event_correct += 1,
            (Some(_), false) => out.event_wrong += 1,
        }
    }
    Ok(out)
}

/// Fraction of evaluation points whose predicted event (or none) is right.
pub fn eval_pattern_accuracy<M: QueryModel>(
    model: &M,
    stream: &EventStream,
    rs: &RuleSet,
    threshold: f64,
    seed: u64,
) -> Result<f64, TrainError> {
    Ok(pattern_confusion(model, stream, rs, threshold, seed)?.accuracy())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Hybrid,
    Purenn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: u32,
    pub sound_acc: f64,
    pub pattern_acc: f64,
    pub confusion: PatternConfusion,
    pub final_loss: Option<f64>,
}

/// Cross-validation results; serializes to the metrics JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: ModelKind,
    pub window: usize,
    pub folds: Vec<FoldMetrics>,
    pub mean_sound_acc: f64,
    pub mean_pattern_acc: f64,
    pub config: TrainConfig,
    pub seed: u64,
}

impl MetricsReport {
    pub fn new(model: ModelKind, cfg: &TrainConfig, folds: Vec<FoldMetrics>) -> Self {
        let mean = |f: fn(&FoldMetrics) -> f64| {
            if folds.is_empty() {
                0.0
            } else {
                folds.iter().map(f).sum::<f64>() / folds.len() as f64
            }
        };
        Self {
            model,
            window: cfg.window,
            mean_sound_acc: mean(|m| m.sound_acc),
            mean_pattern_acc: mean(|m| m.pattern_acc),
            folds,
            config: *cfg,
            seed: cfg.seed,
        }
    }
}

/// Train and test streams of one fold.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub fold: u32,
    pub train: EventStream,
    pub test: EventStream,
}

pub fn fold_data(data: &Dataset, rs: &RuleSet, fold: u32, seed: u64) -> Result<FoldData, TrainError> {
    let train = assemble_sequence(data, &training_folds(fold), indexed_seed(seed, "assembly", fold.into()), rs)?;
    let test = assemble_sequence(data, &[fold], indexed_seed(seed, "assembly-test", fold.into()), rs)?;
    Ok(FoldData { fold, train, test })
}

/// Initialization seed of a fold's frame classifier.
pub fn init_seed(seed: u64, fold: u32) -> u64 {
    indexed_seed(seed, "init", fold.into())
}

/// Sampling seed of a fold's training run.
pub fn fold_sampling_seed(seed: u64, fold: u32) -> u64 {
    indexed_seed(seed, "fold-sampling", fold.into())
}

pub fn eval_seed(seed: u64, fold: u32) -> u64 {
    indexed_seed(seed, "eval", fold.into())
}

/// A trained model with its held-out metrics.
#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub params: M,
    pub metrics: FoldMetrics,
    pub outcome_losses: Vec<f64>,
    pub samples: Vec<QuerySample>,
}

/// Trains a model on one fold's training stream and scores it on its test
/// stream.
pub fn train_and_evaluate<M: QueryModel>(
    init: M,
    fold: &FoldData,
    rs: &RuleSet,
    cfg: &TrainConfig,
) -> Result<Trained<M>, TrainError> {
    let outcome = fit(init, &fold.train, rs, cfg, fold_sampling_seed(cfg.seed, fold.fold))?;
    let sound_acc = eval_sound_accuracy(outcome.params.frame_classifier(), &fold.test)?;
    let confusion = pattern_confusion(&outcome.params, &fold.test, rs, cfg.threshold, eval_seed(cfg.seed, fold.fold))?;
    let metrics = FoldMetrics {
        fold: fold.fold,
        sound_acc,
        pattern_acc: confusion.accuracy(),
        confusion,
        final_loss: outcome.losses.last().copied(),
    };
    Ok(Trained { params: outcome.params, metrics, outcome_losses: outcome.losses, samples: outcome.samples })
}

/// Trains the hybrid classifier on the given fold.
pub fn train(data: &Dataset, rs: &RuleSet, cfg: &TrainConfig, fold: u32) -> Result<Trained<Mlp>, TrainError> {
    let rs = rs.with_window(cfg.window);
    let fd = fold_data(data, &rs, fold, cfg.seed)?;
    let init = Mlp::init(data.manifest.dim, cfg.hidden, rs.num_classes(), init_seed(cfg.seed, fold));
    train_and_evaluate(init, &fd, &rs, cfg)
}

/// Runs `job` for every fold on up to `threads` workers; results keep fold
/// order.
pub fn run_folds<T: Send>(
    folds: &[u32],
    threads: usize,
    job: impl Fn(u32) -> Result<T, TrainError> + Sync,
) -> Result<Vec<T>, TrainError> {
    let threads = threads.clamp(1, folds.len().max(1));
    let mut slots: Vec<Option<Result<T, TrainError>>> = (0..folds.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let job = &job;
        let handles: Vec<_> = slots
            .chunks_mut(folds.len().div_ceil(threads).max(1))
            .zip(folds.chunks(folds.len().div_ceil(threads).max(1)))
            .map(|(out, ids)| {
                scope.spawn(move || {
                    for (slot, &fold) in out.iter_mut().zip(ids) {
                        *slot = Some(job(fold));
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().expect("fold worker panicked");
        }
    });
    slots.into_iter().map(|s| s.expect("every fold ran")).collect()
}

pub fn all_folds() -> Vec<u32> {
    (1..=NUM_FOLDS).collect()
}

/// Hybrid cross-validation over `folds`.
pub fn cross_validate(
    data: &Dataset,
    rs: &RuleSet,
    cfg: &TrainConfig,
    folds: &[u32],
    threads: usize,
) -> Result<(MetricsReport, Vec<Mlp>), TrainError> {
    cfg.validate()?;
    let results = run_folds(folds, threads, |fold| train(data, rs, cfg, fold))?;
    let (metrics, params) = results.into_iter().map(|r| (r.metrics, r.params)).unzip();
    Ok((MetricsReport::new(ModelKind::Hybrid, cfg, metrics), params))
}
