//! Fuzzy cognitive map primitives: concept state, weight matrices, and the
//! synchronous update loop.
//!
//! A map over `n` concepts holds activations in [0,1] and an `n x n` weight
//! matrix with entries in [-1,1], where entry `(j, i)` is the causal weight of
//! the edge from concept `j` to concept `i`. One step feeds each concept its
//! own previous value plus the weighted sum of all incoming edges, then pushes
//! the total through the activation function.

use std::collections::BTreeSet;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Activation state of every concept at one point in time; values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptVector {
    values: Vec<f64>,
}

impl ConceptVector {
    /// Builds a state vector, rejecting empty input and values outside [0,1].
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidData(
                "a concept vector must hold at least one concept".into(),
            ));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange {
                    what: format!("concept {i}"),
                    value: v,
                    lo: 0.0,
                    hi: 1.0,
                });
            }
        }
        Ok(Self { values })
    }

    /// Number of concepts.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// A concept vector is never empty, but clippy likes the pair.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The activation values in concept order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Serialize for ConceptVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.values.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ConceptVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(deserializer)?;
        ConceptVector::new(values).map_err(D::Error::custom)
    }
}

/// Square causal weight matrix, row-major; `weight(j, i)` is the edge j -> i.
///
/// Entries stay in [-1,1]; the diagonal (self-loops) is allowed and learned
/// like any other cell.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    weights: Vec<f64>,
}

impl WeightMatrix {
    /// Builds an `n x n` matrix from a flat row-major buffer.
    pub fn new(n: usize, weights: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidData(
                "a weight matrix needs at least one concept".into(),
            ));
        }
        if weights.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                actual: weights.len(),
            });
        }
        for (c, &w) in weights.iter().enumerate() {
            if !w.is_finite() || !(-1.0..=1.0).contains(&w) {
                return Err(Error::OutOfRange {
                    what: format!("weight ({}, {})", c / n, c % n),
                    value: w,
                    lo: -1.0,
                    hi: 1.0,
                });
            }
        }
        Ok(Self { n, weights })
    }

    /// Builds a matrix from nested rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        for row in &rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: row.len(),
                });
            }
        }
        Self::new(n, rows.into_iter().flatten().collect())
    }

    /// The all-zero matrix (no causal influence at all).
    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(n, vec![0.0; n * n])
    }

    /// Number of concepts on each side of the matrix.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Weight of the edge `from -> to`. Panics if an index is out of bounds.
    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.weights[from * self.n + to]
    }

    /// Flat row-major view of all `n * n` weights.
    pub fn as_flat(&self) -> &[f64] {
        &self.weights
    }

    /// Rows in order, each a slice of `n` outgoing weights.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.chunks_exact(self.n)
    }

    /// Mutable flat view for the genetic operators, which keep every entry on
    /// the valid [-1,1] range by construction.
    pub(crate) fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }
}

impl Serialize for WeightMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.rows())
    }
}

impl<'de> Deserialize<'de> for WeightMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        WeightMatrix::from_rows(rows).map_err(D::Error::custom)
    }
}

/// Squashing function applied to every concept after the weighted update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ActivationSpec {
    /// Logistic curve `1 / (1 + exp(-steepness * x))`.
    Sigmoid { steepness: f64 },
    /// Hard clamp of the raw sum onto [0,1].
    Clip,
}

impl Default for ActivationSpec {
    fn default() -> Self {
        ActivationSpec::Sigmoid { steepness: 1.0 }
    }
}

impl ActivationSpec {
    /// A sigmoid with the given steepness, validated.
    pub fn sigmoid(steepness: f64) -> Result<Self> {
        let spec = ActivationSpec::Sigmoid { steepness };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks the variant-specific parameters.
    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationSpec::Sigmoid { steepness } => {
                if !steepness.is_finite() || steepness <= 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "sigmoid steepness must be a positive real, got {steepness}"
                    )));
                }
            }
            ActivationSpec::Clip => {}
        }
        Ok(())
    }
}

/// How long to iterate the map and when to declare it stable.
///
/// The simulation stops early once every concept in `output_set` moved by
/// less than `threshold` in one step. An empty output set disables the check
/// entirely, so the run always performs `max_iterations` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub max_iterations: usize,
    pub output_set: BTreeSet<usize>,
    pub threshold: f64,
}

impl SimulationSpec {
    /// Full spec with an explicit output set and stabilization threshold.
    pub fn new(max_iterations: usize, output_set: BTreeSet<usize>, threshold: f64) -> Result<Self> {
        if !threshold.is_finite() || threshold < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "stabilization threshold must be a nonnegative real, got {threshold}"
            )));
        }
        Ok(Self {
            max_iterations,
            output_set,
            threshold,
        })
    }

    /// Runs exactly `steps` iterations with no early stop; this is what the
    /// learner uses so that simulated step `s` always aligns with wave `s`.
    pub fn fixed_steps(steps: usize) -> Self {
        Self {
            max_iterations: steps,
            output_set: BTreeSet::new(),
            threshold: 0.0,
        }
    }
}

/// Ordered concept states produced by a simulation; index 0 is the initial
/// state, index `k` the state after `k` synchronous steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    steps: Vec<ConceptVector>,
}

impl Trajectory {
    /// Builds a trajectory, requiring at least the initial state and a single
    /// consistent concept count.
    pub fn new(steps: Vec<ConceptVector>) -> Result<Self> {
        let first = steps
            .first()
            .ok_or_else(|| Error::InvalidData("a trajectory needs at least one state".into()))?;
        let n = first.len();
        for step in &steps {
            if step.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: step.len(),
                });
            }
        }
        Ok(Self { steps })
    }

    /// All states in order, starting with the initial one.
    pub fn steps(&self) -> &[ConceptVector] {
        &self.steps
    }

    /// Number of stored states (steps performed + 1).
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Number of concepts per state.
    pub fn concept_count(&self) -> usize {
        self.steps[0].len()
    }

    /// State after `index` steps. Panics if out of bounds.
    pub fn step(&self, index: usize) -> &ConceptVector {
        &self.steps[index]
    }

    /// The last computed state.
    pub fn last(&self) -> &ConceptVector {
        self.steps.last().expect("trajectory is never empty")
    }
}

/// A finished simulation: the trajectory plus whether the output set settled
/// below the threshold before the iteration cap.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub trajectory: Trajectory,
    pub stabilized: bool,
}

/// Applies the activation function to a raw summed input.
pub fn activate(x: f64, activation: &ActivationSpec) -> f64 {
    match *activation {
        ActivationSpec::Sigmoid { steepness } => 1.0 / (1.0 + (-steepness * x).exp()),
        ActivationSpec::Clip => x.clamp(0.0, 1.0),
    }
}

/// One synchronous update on raw slices; shared by [`step_fcm`] and the
/// learner's inner loop so both always compute bit-identical states.
///
/// For every concept `i` the raw input is the previous value of `i` plus the
/// incoming weighted sum over `j` in ascending index order.
pub(crate) fn step_into(
    state: &[f64],
    weights: &[f64],
    n: usize,
    activation: &ActivationSpec,
    next: &mut [f64],
) {
    next.copy_from_slice(state);
    for (from, &s) in state.iter().enumerate() {
        let row = &weights[from * n..(from + 1) * n];
        for (to, acc) in next.iter_mut().enumerate() {
            *acc += s * row[to];
        }
    }
    for acc in next.iter_mut() {
        *acc = activate(*acc, activation);
    }
}

/// Performs one synchronous update of every concept.
pub fn step_fcm(
    state: &ConceptVector,
    weights: &WeightMatrix,
    activation: &ActivationSpec,
) -> Result<ConceptVector> {
    if state.len() != weights.dim() {
        return Err(Error::DimensionMismatch {
            expected: weights.dim(),
            actual: state.len(),
        });
    }
    activation.validate()?;
    let mut next = vec![0.0; state.len()];
    step_into(
        state.values(),
        weights.as_flat(),
        weights.dim(),
        activation,
        &mut next,
    );
    ConceptVector::new(next)
}

/// Iterates the map from `initial`, recording every state, until either
/// `spec.max_iterations` steps have run or all concepts in `spec.output_set`
/// moved by less than `spec.threshold` in the latest step.
pub fn simulate_fcm(
    initial: &ConceptVector,
    weights: &WeightMatrix,
    activation: &ActivationSpec,
    spec: &SimulationSpec,
) -> Result<SimulationRun> {
    let n = weights.dim();
    if initial.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: initial.len(),
        });
    }
    activation.validate()?;
    if let Some(&o) = spec.output_set.iter().find(|&&o| o >= n) {
        return Err(Error::InvalidConfig(format!(
            "output concept {o} does not exist in a map of {n} concepts"
        )));
    }

    let mut steps = Vec::with_capacity(spec.max_iterations + 1);
    steps.push(initial.clone());
    let mut state = initial.values().to_vec();
    let mut next = vec![0.0; n];
    let mut stabilized = false;

    for _ in 0..spec.max_iterations {
        step_into(&state, weights.as_flat(), n, activation, &mut next);
        steps.push(ConceptVector::new(next.clone())?);
        let settled = !spec.output_set.is_empty()
            && spec
                .output_set
                .iter()
                .all(|&o| (next[o] - state[o]).abs() < spec.threshold);
        std::mem::swap(&mut state, &mut next);
        if settled {
            stabilized = true;
            break;
        }
    }

    Ok(SimulationRun {
        trajectory: Trajectory::new(steps)?,
        stabilized,
    })
}
