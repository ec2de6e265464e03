//! Real-coded genetic algorithm that learns a weight matrix from the observed
//! waves of a single individual.
//!
//! Candidates are full `n x n` matrices. Each generation applies one-point
//! crossover on adjacent pairs, per-matrix mutation onto a 0.01 grid,
//! re-evaluation, and fitness-proportional (roulette) selection. Fitness is
//! `1 / (100 * error + 1)` where the error either sums absolute deviations
//! over every observed wave (`trajectory` mode) or over the final wave only
//! (`endpoint` mode).

use rand::distributions::{Distribution, Uniform, WeightedIndex};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcm::{step_into, ActivationSpec, ConceptVector, WeightMatrix};

/// Which deviations drive the fitness function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitnessMode {
    /// Compare every simulated step against its observed wave.
    Trajectory,
    /// Compare only the final simulated step against the final wave.
    Endpoint,
}

/// How many cells each mutation touches over the course of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MutationSchedule {
    /// Always exactly `n_mutation` cells.
    Constant,
    /// Per generation, a fair coin picks between `n_mutation` cells and a
    /// count that shrinks linearly from `n_mutation` down to 1 across the
    /// generation budget.
    Decaying,
}

/// Tuning knobs for one learner run. The defaults are the standard budget;
/// population-scale runs usually lower `max_generations` or raise it to 10^6
/// for exhaustive searches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub max_generations: usize,
    /// Population size; must be even so crossover can pair neighbors.
    pub gen_size: usize,
    /// Stop as soon as any candidate reaches this fitness.
    pub fitness_threshold: f64,
    pub p_crossover: f64,
    pub p_mutation: f64,
    /// Cells rewritten per mutation (before the optional decay schedule).
    pub n_mutation: usize,
    pub mutation_schedule: MutationSchedule,
    pub fitness_mode: FitnessMode,
    pub activation: ActivationSpec,
    pub seed: u64,
    /// Keep the best (matrix, fitness) ever evaluated and return it at the
    /// generation cap. Without this, selection can lose the best candidate
    /// and the run returns the best of the final generation only.
    pub track_best_ever: bool,
    /// Candidates injected verbatim at the head of the initial population;
    /// the remainder is filled with uniform random matrices.
    pub warm_start: Vec<WeightMatrix>,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            max_generations: 100_000,
            gen_size: 100,
            fitness_threshold: 0.99,
            p_crossover: 0.9,
            p_mutation: 0.5,
            n_mutation: 2,
            mutation_schedule: MutationSchedule::Constant,
            fitness_mode: FitnessMode::Trajectory,
            activation: ActivationSpec::default(),
            seed: 0,
            track_best_ever: true,
            warm_start: Vec::new(),
        }
    }
}

impl GaConfig {
    /// Validates every knob against a concrete concept count `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.gen_size < 2 || !self.gen_size.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "gen_size must be an even integer of at least 2, got {}",
                self.gen_size
            )));
        }
        if !(0.0..=1.0).contains(&self.p_crossover) || !self.p_crossover.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "p_crossover must lie in [0,1], got {}",
                self.p_crossover
            )));
        }
        if !(0.0..=1.0).contains(&self.p_mutation) || !self.p_mutation.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "p_mutation must lie in [0,1], got {}",
                self.p_mutation
            )));
        }
        if !self.fitness_threshold.is_finite()
            || self.fitness_threshold <= 0.0
            || self.fitness_threshold > 1.0
        {
            return Err(Error::InvalidConfig(format!(
                "fitness_threshold must lie in (0,1], got {}",
                self.fitness_threshold
            )));
        }
        if self.n_mutation > n * n {
            return Err(Error::InvalidConfig(format!(
                "n_mutation = {} exceeds the {} cells of a {n}x{n} matrix",
                self.n_mutation,
                n * n
            )));
        }
        self.activation.validate()?;
        if self.warm_start.len() > self.gen_size {
            return Err(Error::InvalidConfig(format!(
                "{} warm-start matrices do not fit a population of {}",
                self.warm_start.len(),
                self.gen_size
            )));
        }
        if let Some(w) = self.warm_start.iter().find(|w| w.dim() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: w.dim(),
            });
        }
        Ok(())
    }
}

/// Outcome of one learner run.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnResult {
    pub weights: WeightMatrix,
    /// Evaluated fitness of `weights` against the target data.
    pub fitness: f64,
    /// GA iterations actually executed (0 if the initial population sufficed).
    pub generations_used: usize,
    /// Whether `fitness_threshold` was reached before the generation cap.
    pub reached_threshold: bool,
}

/// Diagnostic trace of a learner run, mainly for tests and tuning.
#[derive(Debug, Clone, Default)]
pub struct LearnTrace {
    /// Best fitness of each evaluated generation; index 0 is the initial
    /// population.
    pub best_fitness_per_generation: Vec<f64>,
    /// The last evaluated generation, aligned with `final_fitnesses`.
    pub final_population: Vec<WeightMatrix>,
    pub final_fitnesses: Vec<f64>,
}

/// Draws `count` random matrices with entries uniform in [-1,1].
fn random_matrices(count: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<WeightMatrix> {
    let dist = Uniform::new_inclusive(-1.0f64, 1.0f64);
    (0..count)
        .map(|_| {
            let weights = (0..n * n).map(|_| dist.sample(rng)).collect();
            WeightMatrix::new(n, weights).expect("uniform draws are always in range")
        })
        .collect()
}

/// Creates the initial population: `gen_size` matrices with every entry drawn
/// uniformly from [-1,1].
pub fn init_population(
    gen_size: usize,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<WeightMatrix>> {
    if gen_size < 2 {
        return Err(Error::InvalidConfig(format!(
            "population needs at least 2 matrices, got {gen_size}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidConfig(
            "population needs at least 1 concept".into(),
        ));
    }
    Ok(random_matrices(gen_size, n, rng))
}

/// Sum of absolute per-concept deviations over every observed wave.
///
/// `desired` holds the `t` target waves; wave `s` (1-based) is compared
/// against `simulated.step(s)`. Step 0 is the shared initial condition and is
/// excluded.
pub fn trajectory_error(
    simulated: &crate::fcm::Trajectory,
    desired: &[ConceptVector],
) -> Result<f64> {
    if desired.is_empty() {
        return Err(Error::InvalidData(
            "at least one target wave is required".into(),
        ));
    }
    if simulated.len() < desired.len() + 1 {
        return Err(Error::DimensionMismatch {
            expected: desired.len() + 1,
            actual: simulated.len(),
        });
    }
    let n = simulated.concept_count();
    let mut error = 0.0;
    for (s, wave) in desired.iter().enumerate() {
        if wave.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: wave.len(),
            });
        }
        let sim = simulated.step(s + 1);
        for m in 0..n {
            error += (sim.values()[m] - wave.values()[m]).abs();
        }
    }
    Ok(error)
}

/// Sum of absolute deviations between a final state and the desired one.
pub fn endpoint_error(final_state: &ConceptVector, desired: &ConceptVector) -> Result<f64> {
    if final_state.len() != desired.len() {
        return Err(Error::DimensionMismatch {
            expected: desired.len(),
            actual: final_state.len(),
        });
    }
    Ok(final_state
        .values()
        .iter()
        .zip(desired.values())
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// Maps an error onto (0,1]: `1 / (100 * error + 1)`.
///
/// Strictly decreasing, equal to 1 exactly at zero error. Panics if handed a
/// negative or non-finite error, which callers rule out by construction.
pub fn fitness_of(error: f64) -> f64 {
    assert!(
        error.is_finite() && error >= 0.0,
        "fitness is only defined for finite nonnegative errors, got {error}"
    );
    1.0 / (100.0 * error + 1.0)
}

/// One-point crossover at a drawn cell: in the flattened row-major genomes,
/// every entry from that cell (inclusive) to the end is exchanged.
pub fn crossover_pair(
    a: &WeightMatrix,
    b: &WeightMatrix,
    rng: &mut ChaCha8Rng,
) -> Result<(WeightMatrix, WeightMatrix)> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let point = rng.gen_range(0..a.dim() * a.dim());
    crossover_pair_at(a, b, point)
}

/// Crossover with an explicit 0-based cell index (the random draw in
/// [`crossover_pair`] made deterministic, mostly for tests and replay).
pub fn crossover_pair_at(
    a: &WeightMatrix,
    b: &WeightMatrix,
    point: usize,
) -> Result<(WeightMatrix, WeightMatrix)> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let cells = a.dim() * a.dim();
    if point >= cells {
        return Err(Error::InvalidConfig(format!(
            "crossover point {point} out of range for {cells} cells"
        )));
    }
    let mut a = a.clone();
    let mut b = b.clone();
    a.as_flat_mut()[point..].swap_with_slice(&mut b.as_flat_mut()[point..]);
    Ok((a, b))
}

/// Rewrites `count` distinct cells (chosen uniformly without replacement)
/// with values drawn uniformly from the 201-point grid {-1.00, -0.99, ..., 1.00}.
pub fn mutate(w: &WeightMatrix, n_mutation: usize, rng: &mut ChaCha8Rng) -> Result<WeightMatrix> {
    let cells = w.dim() * w.dim();
    if n_mutation > cells {
        return Err(Error::InvalidConfig(format!(
            "n_mutation = {n_mutation} exceeds the {cells} cells of the matrix"
        )));
    }
    let mut out = w.clone();
    mutate_in_place(&mut out, n_mutation, rng);
    Ok(out)
}

fn mutate_in_place(w: &mut WeightMatrix, count: usize, rng: &mut ChaCha8Rng) {
    let cells = w.dim() * w.dim();
    let picks = rand::seq::index::sample(rng, cells, count);
    let flat = w.as_flat_mut();
    for cell in picks {
        let ticks: i32 = rng.gen_range(-100..=100);
        flat[cell] = f64::from(ticks) * 0.01;
    }
}

/// Roulette selection: draws `matrices.len()` times with replacement, picking
/// matrix `i` with probability `fitness[i] / sum(fitness)`.
pub fn select_next_generation(
    matrices: &[WeightMatrix],
    fitnesses: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<WeightMatrix>> {
    if matrices.is_empty() || matrices.len() != fitnesses.len() {
        return Err(Error::DimensionMismatch {
            expected: matrices.len(),
            actual: fitnesses.len(),
        });
    }
    if let Some(&f) = fitnesses.iter().find(|f| !f.is_finite() || **f < 0.0) {
        return Err(Error::InvalidData(format!(
            "fitness values must be finite and nonnegative, got {f}"
        )));
    }
    let dist = WeightedIndex::new(fitnesses).map_err(|_| Error::DegenerateSelection)?;
    Ok((0..matrices.len())
        .map(|_| matrices[dist.sample(rng)].clone())
        .collect())
}

/// Per-candidate fitness evaluation with reusable scratch buffers.
///
/// Drives the same [`step_into`] kernel as the public simulation entry point,
/// so a fitness computed here is bit-identical to simulating the candidate
/// and scoring the trajectory through the public functions.
struct Evaluator {
    n: usize,
    t: usize,
    initial: Vec<f64>,
    /// Wave-major: `desired[s * n + m]` is concept `m` of wave `s + 1`.
    desired: Vec<f64>,
    activation: ActivationSpec,
    mode: FitnessMode,
    state: Vec<f64>,
    next: Vec<f64>,
}

impl Evaluator {
    fn new(
        initial: &ConceptVector,
        desired: &[ConceptVector],
        activation: ActivationSpec,
        mode: FitnessMode,
    ) -> Self {
        let n = initial.len();
        Self {
            n,
            t: desired.len(),
            initial: initial.values().to_vec(),
            desired: desired.iter().flat_map(|w| w.values().iter().copied()).collect(),
            activation,
            mode,
            state: vec![0.0; n],
            next: vec![0.0; n],
        }
    }

    fn error(&mut self, w: &WeightMatrix) -> f64 {
        self.state.copy_from_slice(&self.initial);
        let mut error = 0.0;
        for s in 0..self.t {
            step_into(&self.state, w.as_flat(), self.n, &self.activation, &mut self.next);
            let include = match self.mode {
                FitnessMode::Trajectory => true,
                FitnessMode::Endpoint => s == self.t - 1,
            };
            if include {
                let wave = &self.desired[s * self.n..(s + 1) * self.n];
                for (m, target) in wave.iter().enumerate() {
                    error += (self.next[m] - target).abs();
                }
            }
            std::mem::swap(&mut self.state, &mut self.next);
        }
        error
    }

    fn fitness(&mut self, w: &WeightMatrix) -> f64 {
        fitness_of(self.error(w))
    }
}

/// Index of the first strict maximum in a fitness list.
fn argmax_first(fitnesses: &[f64]) -> usize {
    let mut best = 0;
    for (i, &f) in fitnesses.iter().enumerate() {
        if f > fitnesses[best] {
            best = i;
        }
    }
    best
}

/// Mutation cell count for a 1-based generation number under the decay
/// schedule: linear from `n_mutation` at generation 1 down to 1 at the cap.
fn decayed_count(n_mutation: usize, generation: usize, max_generations: usize) -> usize {
    if n_mutation == 0 {
        return 0;
    }
    if max_generations <= 1 {
        return n_mutation;
    }
    let frac = (generation - 1) as f64 / (max_generations - 1) as f64;
    let count = (n_mutation as f64 - (n_mutation as f64 - 1.0) * frac).round();
    (count as usize).max(1)
}

/// Runs the full GA loop against one individual's data.
///
/// `desired` holds the `t >= 1` observed waves after the baseline; candidates
/// are simulated for exactly `t` steps from `initial` so that step `s` aligns
/// with wave `s`. Terminates at the first generation containing a candidate
/// with fitness at or above the threshold (returning the lowest-index such
/// candidate), or after `max_generations`, returning the best matrix seen —
/// the best-ever candidate when `track_best_ever` is set, otherwise the best
/// of the final evaluated generation.
pub fn learn_individual(
    initial: &ConceptVector,
    desired: &[ConceptVector],
    config: &GaConfig,
) -> Result<LearnResult> {
    run_learn(initial, desired, config, false).map(|(result, _)| result)
}

/// [`learn_individual`] plus a [`LearnTrace`] for inspecting convergence and
/// the final generation.
pub fn learn_individual_traced(
    initial: &ConceptVector,
    desired: &[ConceptVector],
    config: &GaConfig,
) -> Result<(LearnResult, LearnTrace)> {
    run_learn(initial, desired, config, true)
}

fn run_learn(
    initial: &ConceptVector,
    desired: &[ConceptVector],
    config: &GaConfig,
    keep_final: bool,
) -> Result<(LearnResult, LearnTrace)> {
    let n = initial.len();
    config.validate(n)?;
    if desired.is_empty() {
        return Err(Error::InvalidData(
            "at least one target wave is required".into(),
        ));
    }
    if let Some(wave) = desired.iter().find(|w| w.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: wave.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut population = config.warm_start.clone();
    population.extend(random_matrices(
        config.gen_size - population.len(),
        n,
        &mut rng,
    ));

    let mut eval = Evaluator::new(initial, desired, config.activation, config.fitness_mode);
    let mut fitnesses: Vec<f64> = population.iter().map(|w| eval.fitness(w)).collect();

    let mut trace = LearnTrace::default();
    let first_best = argmax_first(&fitnesses);
    let mut best = (population[first_best].clone(), fitnesses[first_best]);
    trace.best_fitness_per_generation.push(fitnesses[first_best]);

    let finish = |population: Vec<WeightMatrix>,
                  fitnesses: Vec<f64>,
                  result: LearnResult,
                  mut trace: LearnTrace| {
        if keep_final {
            trace.final_population = population;
            trace.final_fitnesses = fitnesses;
        }
        Ok((result, trace))
    };

    if let Some(hit) = fitnesses.iter().position(|&f| f >= config.fitness_threshold) {
        let result = LearnResult {
            weights: population[hit].clone(),
            fitness: fitnesses[hit],
            generations_used: 0,
            reached_threshold: true,
        };
        return finish(population, fitnesses, result, trace);
    }

    let cell_count = n * n;
    for generation in 1..=config.max_generations {
        // Operator phase; the only phase that consumes randomness, in a fixed
        // order: schedule coin, crossover per pair, then mutation per matrix.
        let count = match config.mutation_schedule {
            MutationSchedule::Constant => config.n_mutation,
            MutationSchedule::Decaying => {
                if rng.gen::<f64>() < 0.5 {
                    config.n_mutation
                } else {
                    decayed_count(config.n_mutation, generation, config.max_generations)
                }
            }
        };
        for pair in (0..config.gen_size).step_by(2) {
            if rng.gen::<f64>() < config.p_crossover {
                let point = rng.gen_range(0..cell_count);
                let (left, right) = population.split_at_mut(pair + 1);
                left[pair].as_flat_mut()[point..]
                    .swap_with_slice(&mut right[0].as_flat_mut()[point..]);
            }
        }
        for w in population.iter_mut() {
            if rng.gen::<f64>() < config.p_mutation {
                mutate_in_place(w, count, &mut rng);
            }
        }

        for (i, w) in population.iter().enumerate() {
            fitnesses[i] = eval.fitness(w);
        }

        let gen_best = argmax_first(&fitnesses);
        trace.best_fitness_per_generation.push(fitnesses[gen_best]);
        if fitnesses[gen_best] > best.1 {
            best = (population[gen_best].clone(), fitnesses[gen_best]);
        }

        if let Some(hit) = fitnesses.iter().position(|&f| f >= config.fitness_threshold) {
            let result = LearnResult {
                weights: population[hit].clone(),
                fitness: fitnesses[hit],
                generations_used: generation,
                reached_threshold: true,
            };
            return finish(population, fitnesses, result, trace);
        }

        // The selection after the last evaluation would never be scored, so
        // skip it and keep the final evaluated generation intact.
        if generation < config.max_generations {
            population = select_next_generation(&population, &fitnesses, &mut rng)?;
        }
    }

    let (weights, fitness) = if config.track_best_ever {
        best
    } else {
        let i = argmax_first(&fitnesses);
        (population[i].clone(), fitnesses[i])
    };
    let result = LearnResult {
        weights,
        fitness,
        generations_used: config.max_generations,
        reached_threshold: false,
    };
    finish(population, fitnesses, result, trace)
}
