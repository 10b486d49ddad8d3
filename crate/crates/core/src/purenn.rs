//! Pure neural baseline: the pattern layer is replaced by a second MLP over
//! the frame classifier's window of softmax outputs.
//!
//! Head output order is `Start(f)` for every fluent, then `End(f)` for every
//! fluent, then `none`; the first `2F` entries line up with
//! [`RuleSet::event_keys`].

use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::ec::{ClassDistribution, EventStream, Polarity, QuerySample, RuleSet, TimePoint};
use crate::inference::InferenceError;
use crate::nn::{softmax, Circuit, Mlp, NnError, NodeId};
use crate::seed::indexed_seed;
use crate::training::{
    fold_data, init_seed, run_folds, train_and_evaluate, MetricsReport, ModelKind, QueryModel, TrainConfig, TrainError,
    Trained,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PureNnParams {
    pub frame: Mlp,
    pub head: Mlp,
    pub window: usize,
}

impl PureNnParams {
    /// Frame classifier `dim -> hidden -> classes`, head
    /// `window * classes -> head_hidden -> 2 * fluents + 1`.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        dim: usize,
        hidden: usize,
        classes: usize,
        fluents: usize,
        window: usize,
        head_hidden: usize,
        frame_seed: u64,
        head_seed: u64,
    ) -> Self {
        Self {
            frame: Mlp::init(dim, hidden, classes, frame_seed),
            head: Mlp::init(window * classes, head_hidden, 2 * fluents + 1, head_seed),
            window,
        }
    }

    pub fn zeros(dim: usize, hidden: usize, classes: usize, fluents: usize, window: usize, head_hidden: usize) -> Self {
        Self {
            frame: Mlp::zeros(dim, hidden, classes),
            head: Mlp::zeros(window * classes, head_hidden, 2 * fluents + 1),
            window,
        }
    }

    pub fn num_fluents(&self) -> usize {
        (self.head.output_dim() - 1) / 2
    }

    fn head_index(&self, kind: Polarity, fluent: usize) -> usize {
        match kind {
            Polarity::Start => fluent,
            Polarity::End => self.num_fluents() + fluent,
        }
    }

    fn check(&self, stream: &EventStream, t: TimePoint) -> Result<(), NnError> {
        if t + 1 < self.window {
            return Err(InferenceError::Window { t, window: self.window }.into());
        }
        if t >= stream.len() {
            return Err(InferenceError::OutOfRange { t, len: stream.len() }.into());
        }
        if stream.dim() != self.frame.input_dim() {
            return Err(NnError::Dimension { expected: self.frame.input_dim(), found: stream.dim() });
        }
        Ok(())
    }

    /// Records the head distribution at `t` into a circuit over layers
    /// `[frame.hidden, frame.output, head.hidden, head.output]`.
    fn record(&self, circuit: &mut Circuit<'_>, stream: &EventStream, t: TimePoint) -> NodeId {
        let frames: Vec<NodeId> = (t + 1 - self.window..=t)
            .map(|s| {
                let x = circuit.input(stream.feature(s));
                Mlp::record(circuit, 0, x)
            })
            .collect();
        let joined = circuit.concat(&frames);
        Mlp::record(circuit, 2, joined)
    }

    fn layers(&self) -> Vec<&crate::nn::Linear> {
        vec![&self.frame.hidden, &self.frame.output, &self.head.hidden, &self.head.output]
    }

    fn head_from_dists(&self, dists: &[ClassDistribution], t: TimePoint) -> Vec<f64> {
        let joined: Vec<f64> = dists[t + 1 - self.window..=t].iter().flat_map(|d| d.probs().iter().copied()).collect();
        softmax(&self.head.logits(&joined))
    }
}

/// Distribution over the `2F + 1` pattern classes at `t`.
pub fn purenn_forward(params: &PureNnParams, stream: &EventStream, t: TimePoint) -> Result<Vec<f64>, NnError> {
    params.check(stream, t)?;
    let mut circuit = Circuit::new(params.layers());
    let out = params.record(&mut circuit, stream, t);
    Ok(circuit.value(out).to_vec())
}

impl QueryModel for PureNnParams {
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.frame.tensors_mut().into_iter().collect();
        out.extend(self.head.tensors_mut());
        out
    }

    fn query_grad(
        &self,
        stream: &EventStream,
        sample: &QuerySample,
        _rs: &RuleSet,
        seed_of: &dyn Fn(f64) -> f64,
    ) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
        self.check(stream, sample.t)?;
        let mut circuit = Circuit::new(self.layers());
        let dist = self.record(&mut circuit, stream, sample.t);
        let out = circuit.pick(dist, self.head_index(sample.kind, sample.fluent.0));
        let prob = circuit.scalar(out);
        let grads = circuit.backward(out, seed_of(prob));
        Ok((prob, grads.into_iter().flat_map(|l| [l.weight, l.bias]).collect()))
    }

    fn frame_classifier(&self) -> &Mlp {
        &self.frame
    }

    fn event_probs(&self, dists: &[ClassDistribution], t: TimePoint, rs: &RuleSet) -> Result<Vec<f64>, TrainError> {
        if t + 1 < self.window {
            return Err(NnError::from(InferenceError::Window { t, window: self.window }).into());
        }
        let head = self.head_from_dists(dists, t);
        Ok(rs.event_keys().iter().map(|k| head[self.head_index(k.kind, k.fluent.0)]).collect())
    }
}

pub fn purenn_init(data: &Dataset, rs: &RuleSet, cfg: &TrainConfig, fold: u32) -> PureNnParams {
    PureNnParams::init(
        data.manifest.dim,
        cfg.hidden,
        rs.num_classes(),
        rs.num_fluents(),
        cfg.window,
        cfg.hidden,
        init_seed(cfg.seed, fold),
        indexed_seed(cfg.seed, "init-head", fold.into()),
    )
}

/// Trains the baseline on one fold with the same samples, budget, optimizer
/// and metrics as the hybrid model.
pub fn purenn_train(
    data: &Dataset,
    rs: &RuleSet,
    cfg: &TrainConfig,
    fold: u32,
) -> Result<Trained<PureNnParams>, TrainError> {
    let rs = rs.with_window(cfg.window);
    let fd = fold_data(data, &rs, fold, cfg.seed)?;
    train_and_evaluate(purenn_init(data, &rs, cfg, fold), &fd, &rs, cfg)
}

/// Baseline cross-validation over `folds`.
pub fn purenn_cross_validate(
    data: &Dataset,
    rs: &RuleSet,
    cfg: &TrainConfig,
    folds: &[u32],
    threads: usize,
) -> Result<(MetricsReport, Vec<PureNnParams>), TrainError> {
    cfg.validate()?;
    let results = run_folds(folds, threads, |fold| purenn_train(data, rs, cfg, fold))?;
    let (metrics, params) = results.into_iter().map(|r| (r.metrics, r.params)).unzip();
    Ok((MetricsReport::new(ModelKind::Purenn, cfg, metrics), params))
}
