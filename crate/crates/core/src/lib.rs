//! Fuzzy cognitive map (FCM) simulation and learning for longitudinal survey
//! data.
//!
//! An FCM holds `n` concepts with activation levels in `[0,1]` and a dense
//! `n x n` weight matrix of causal edge strengths in `[-1,1]`. States advance
//! synchronously: each concept's next level is the squashed sum of its own
//! current level plus the weighted levels of all concepts ([`fcm`]).
//!
//! Given a participant's observed waves, a real-coded genetic algorithm
//! searches for the weight matrix whose simulated trajectory reproduces them
//! ([`ga`]), either over the whole trajectory or the endpoint only. The
//! [`population`] module scales this to cohorts — one matrix per participant
//! or a single shared matrix fitted to the mean participant — with restart
//! policies and fully deterministic per-task seeding. [`data`] handles
//! long-form CSV ingestion, schema-based normalization, matrix/vector file
//! formats, and synthetic ground-truth cohorts; [`eval`] produces signed
//! error reports, normality screens, and trajectory comparisons.
//!
//! All randomness flows through explicitly seeded ChaCha8 generators: every
//! public entry point is bit-reproducible across runs and thread counts.

pub mod data;
pub mod error;
pub mod eval;
pub mod fcm;
pub mod ga;
pub mod population;

pub use error::{Error, Result};
pub use eval::{
    dagostino_pearson, evaluate_population, normality_screen, trajectory_report, ErrorReport,
    ModelSet, NormalityCell, NormalityReport, TrajectoryReport,
};
pub use fcm::{
    activate, simulate_fcm, step_fcm, ActivationSpec, ConceptVector, SimulationRun,
    SimulationSpec, Trajectory, WeightMatrix,
};
pub use ga::{
    crossover_pair, crossover_pair_at, endpoint_error, fitness_of, init_population,
    learn_individual, learn_individual_traced, mutate, select_next_generation, trajectory_error,
    FitnessMode, GaConfig, LearnResult, LearnTrace, MutationSchedule,
};
pub use population::{
    learn_participant, mean_participant, one_fits_all, one_for_each, LongitudinalDataset,
    Participant, PopulationResult, RestartPolicy,
};
pub use data::{
    generate_synthetic, load_longitudinal, load_raw, normalize, read_concept_vector,
    read_weight_matrix, write_concept_vector, write_dataset, write_weight_matrix, ConceptDef,
    ConceptSchema, LoadedDataset, RawDataset, SyntheticSpec,
};
