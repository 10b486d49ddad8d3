//! Softmax MLP classifier, query circuits through the pattern semantics,
//! loss and optimizer.

mod adam;
pub mod circuit;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{Adam, AdamConfig};
pub use circuit::{softmax, Circuit, NodeId, Op};

use crate::ec::{ClassDistribution, EventStream, QuerySample, RuleSet};
use crate::inference::{check_window, pattern_with, InferenceError};

/// Default hidden width.
pub const DEFAULT_HIDDEN: usize = 128;

/// Probability clamp used by [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("feature dimension {found} does not match model input {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("ruleset has {found} classes, model outputs {expected}")]
    Classes { expected: usize, found: usize },
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("non-finite gradient; step refused")]
    NonFiniteGradient,
    #[error("parameter and gradient shapes differ")]
    Shape,
}

/// Fully connected layer. `weight` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weight: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
    pub fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-bound..bound)).collect::<Vec<_>>();
        let weight = draw(inputs * outputs);
        let bias = draw(outputs);
        Self { inputs, outputs, weight, bias }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs, self.outputs)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weight[r * self.inputs..(r + 1) * self.inputs]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        (0..self.outputs).map(|r| self.bias[r] + self.row(r).iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// One-hidden-layer classifier `D -> H (ReLU) -> C (softmax)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    pub fn init(inputs: usize, hidden: usize, outputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden_layer = Linear::init(inputs, hidden, &mut rng);
        let output = Linear::init(hidden, outputs, &mut rng);
        Self { hidden: hidden_layer, output }
    }

    pub fn zeros(inputs: usize, hidden: usize, outputs: usize) -> Self {
        Self { hidden: Linear::zeros(inputs, hidden), output: Linear::zeros(hidden, outputs) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { hidden: self.hidden.zeros_like(), output: self.output.zeros_like() }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.inputs
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden.outputs
    }

    pub fn output_dim(&self) -> usize {
        self.output.outputs
    }

    pub fn layers(&self) -> [&Linear; 2] {
        [&self.hidden, &self.output]
    }

    pub fn from_layers(mut layers: impl Iterator<Item = Linear>) -> Self {
        let hidden = layers.next().expect("hidden layer");
        let output = layers.next().expect("output layer");
        Self { hidden, output }
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.hidden.weight, &self.hidden.bias, &self.output.weight, &self.output.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.hidden.weight, &mut self.hidden.bias, &mut self.output.weight, &mut self.output.bias]
    }

    pub fn is_finite(&self) -> bool {
        self.hidden.is_finite() && self.output.is_finite()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = self.hidden.apply(x).into_iter().map(|v| v.max(0.0)).collect();
        self.output.apply(&h)
    }

    /// Records `softmax(W2 relu(W1 x + b1) + b2)` into `circuit`, using the
    /// circuit layers at `offset` and `offset + 1`.
    pub fn record(circuit: &mut Circuit<'_>, offset: usize, x: NodeId) -> NodeId {
        let h = circuit.affine(offset, x);
        let r = circuit.relu(h);
        let z = circuit.affine(offset + 1, r);
        circuit.softmax(z)
    }
}

/// Class distribution for one feature vector.
pub fn mlp_forward(params: &Mlp, x: &[f64]) -> Result<ClassDistribution, NnError> {
    if x.len() != params.input_dim() {
        return Err(NnError::Dimension { expected: params.input_dim(), found: x.len() });
    }
    Ok(ClassDistribution::new(softmax(&params.logits(x))).expect("softmax output is a distribution"))
}

/// Class distributions for every step of a stream.
pub fn classify_stream(params: &Mlp, stream: &EventStream) -> Result<Vec<ClassDistribution>, NnError> {
    stream.features().iter().map(|x| mlp_forward(params, x)).collect()
}

/// Query probability together with the circuit that computed it.
#[derive(Debug, Clone)]
pub struct QueryForward<'p> {
    pub prob: f64,
    pub circuit: Circuit<'p>,
    pub output: NodeId,
}

impl QueryForward<'_> {
    pub fn backward(&self, seed: f64) -> Mlp {
        backward(self, seed)
    }
}

/// Forward pass from raw features through the classifier and the pattern
/// semantics of `sample`'s rule to the query probability.
pub fn query_forward<'p>(
    params: &'p Mlp,
    stream: &EventStream,
    sample: &QuerySample,
    rs: &RuleSet,
) -> Result<QueryForward<'p>, NnError> {
    let rule = rs.rule(sample.key()).ok_or(InferenceError::NoRule(sample.key()))?;
    check_window(rule, sample.t, stream.len())?;
    if stream.dim() != params.input_dim() {
        return Err(NnError::Dimension { expected: params.input_dim(), found: stream.dim() });
    }
    if rs.num_classes() != params.output_dim() {
        return Err(NnError::Classes { expected: params.output_dim(), found: rs.num_classes() });
    }
    let mut circuit = Circuit::new(params.layers().to_vec());
    let c = rule.trigger_class.0;
    let window: Vec<NodeId> = (sample.t + 1 - rule.window..=sample.t)
        .map(|t| {
            let x = circuit.input(stream.feature(t));
            let dist = Mlp::record(&mut circuit, 0, x);
            circuit.pick(dist, c)
        })
        .collect();
    let output = pattern_with(&mut circuit, &window, rule.count);
    let prob = circuit.scalar(output);
    Ok(QueryForward { prob, circuit, output })
}

/// Gradient of `seed * prob` with respect to the classifier parameters.
pub fn backward(forward: &QueryForward<'_>, seed: f64) -> Mlp {
    Mlp::from_layers(forward.circuit.backward(forward.output, seed).into_iter())
}

/// Binary cross-entropy of a query probability and its derivative with
/// respect to that probability. The probability is clamped to
/// `[BCE_EPS, 1 - BCE_EPS]`.
pub fn bce_loss(prob: f64, label: bool) -> (f64, f64) {
    let p = prob.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if label {
        (-p.ln(), -1.0 / p)
    } else {
        (-(1.0 - p).ln(), 1.0 / (1.0 - p))
    }
}
