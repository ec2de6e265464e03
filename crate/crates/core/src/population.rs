//! Population-scale learning: one weight matrix per participant, or a single
//! shared matrix fitted to the mean participant.
//!
//! Every (participant, restart) task derives its own RNG seed from the master
//! seed, the participant id, and the restart index, so results are identical
//! no matter how work is scheduled across threads.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fcm::ConceptVector;
use crate::ga::{learn_individual, GaConfig, LearnResult};

/// One individual's observed concept values: `waves[0]` is the baseline, the
/// rest are follow-ups in chronological order.
#[derive(Debug, Clone, PartialEq)]
pub struct Participant {
    id: String,
    waves: Vec<ConceptVector>,
}

impl Participant {
    pub fn new(id: impl Into<String>, waves: Vec<ConceptVector>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::InvalidData("participant id must be non-empty".into()));
        }
        if waves.len() < 2 {
            return Err(Error::InvalidData(format!(
                "participant {id:?} needs a baseline plus at least one follow-up, got {} wave(s)",
                waves.len()
            )));
        }
        let n = waves[0].len();
        if let Some(w) = waves.iter().find(|w| w.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: w.len(),
            });
        }
        Ok(Self { id, waves })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// All waves, baseline first.
    pub fn waves(&self) -> &[ConceptVector] {
        &self.waves
    }

    pub fn baseline(&self) -> &ConceptVector {
        &self.waves[0]
    }

    /// The follow-up waves the learner must reproduce (everything after the
    /// baseline).
    pub fn targets(&self) -> &[ConceptVector] {
        &self.waves[1..]
    }

    pub fn concept_count(&self) -> usize {
        self.waves[0].len()
    }

    /// Number of follow-up waves.
    pub fn follow_ups(&self) -> usize {
        self.waves.len() - 1
    }
}

/// A cohort of participants observed over the same waves.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset {
    concept_labels: Vec<String>,
    participants: Vec<Participant>,
}

impl LongitudinalDataset {
    /// Validates that the cohort is rectangular: at least one participant,
    /// unique ids, and identical concept and wave counts throughout.
    pub fn new(concept_labels: Vec<String>, participants: Vec<Participant>) -> Result<Self> {
        if participants.is_empty() {
            return Err(Error::InvalidData(
                "a dataset needs at least one participant".into(),
            ));
        }
        if concept_labels.is_empty() {
            return Err(Error::InvalidData("a dataset needs at least one concept".into()));
        }
        let n = concept_labels.len();
        let waves = participants[0].waves.len();
        let mut seen = BTreeSet::new();
        for p in &participants {
            if p.concept_count() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: p.concept_count(),
                });
            }
            if p.waves.len() != waves {
                return Err(Error::InvalidData(format!(
                    "participant {:?} has {} waves but the cohort has {}",
                    p.id,
                    p.waves.len(),
                    waves
                )));
            }
            if !seen.insert(p.id.clone()) {
                return Err(Error::InvalidData(format!(
                    "duplicate participant id {:?}",
                    p.id
                )));
            }
        }
        Ok(Self {
            concept_labels,
            participants,
        })
    }

    pub fn concept_labels(&self) -> &[String] {
        &self.concept_labels
    }

    pub fn concept_count(&self) -> usize {
        self.concept_labels.len()
    }

    pub fn participants(&self) -> &[Participant] {
        &self.participants
    }

    pub fn participant(&self, id: &str) -> Option<&Participant> {
        self.participants.iter().find(|p| p.id == id)
    }

    /// Waves per participant, baseline included.
    pub fn wave_count(&self) -> usize {
        self.participants[0].waves.len()
    }

    /// Follow-up waves per participant.
    pub fn follow_ups(&self) -> usize {
        self.wave_count() - 1
    }

    /// Content digest (SHA-256 hex) over labels, ids, and every value's exact
    /// bit pattern; any change to the dataset changes the digest.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        let put_str = |h: &mut Sha256, s: &str| {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        };
        h.update((self.concept_labels.len() as u64).to_le_bytes());
        h.update((self.participants.len() as u64).to_le_bytes());
        h.update((self.wave_count() as u64).to_le_bytes());
        for label in &self.concept_labels {
            put_str(&mut h, label);
        }
        for p in &self.participants {
            put_str(&mut h, &p.id);
            for wave in &p.waves {
                for &v in wave.values() {
                    h.update(v.to_bits().to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}

/// How many independently seeded learner runs each participant gets, and how
/// the winner among them is chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestartPolicy {
    /// Independent runs per participant (>= 1).
    pub restarts: usize,
    /// With `false` (the default) the first restart that reaches the fitness
    /// threshold wins and later restarts are skipped; with `true` every
    /// restart runs and the highest fitness wins (lowest restart index on
    /// ties).
    pub exhaustive: bool,
}

impl Default for RestartPolicy {
    fn default() -> Self {
        Self {
            restarts: 1,
            exhaustive: false,
        }
    }
}

impl RestartPolicy {
    fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidConfig(
                "restart policy needs at least 1 restart".into(),
            ));
        }
        Ok(())
    }
}

/// Result of a per-participant learning run over a whole cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationResult {
    /// Winning learner result per participant id.
    pub per_participant: BTreeMap<String, LearnResult>,
}

/// Seed-domain tags keep participant runs and mean-participant runs on
/// disjoint random streams even when ids collide.
const SEED_DOMAIN_PARTICIPANT: u8 = 0x50;
const SEED_DOMAIN_MEAN: u8 = 0x4D;

/// Derives the task seed for one (id, restart) pair from the master seed by
/// hashing; collisions between tasks are cryptographically unlikely.
fn derive_task_seed(master: u64, domain: u8, id: &str, restart: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update([domain]);
    h.update((id.len() as u64).to_le_bytes());
    h.update(id.as_bytes());
    h.update((restart as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
}

/// Runs `policy.restarts` independently seeded learner runs for one
/// participant and returns the winner (see [`RestartPolicy`]).
fn learn_with_restarts(
    participant: &Participant,
    config: &GaConfig,
    policy: &RestartPolicy,
    domain: u8,
) -> Result<LearnResult> {
    policy.validate()?;
    // Advisory cutoff: once restart r reaches the threshold, restarts with a
    // higher index may be skipped. Only results at indices <= the first hit
    // can win, so skipping never changes the outcome.
    let first_hit = AtomicU64::new(u64::MAX);
    let skip_later = !policy.exhaustive;
    let outcomes: Vec<Option<LearnResult>> = (0..policy.restarts)
        .into_par_iter()
        .map(|restart| {
            if skip_later && first_hit.load(Ordering::Relaxed) < restart as u64 {
                return Ok(None);
            }
            let mut task_config = config.clone();
            task_config.seed = derive_task_seed(config.seed, domain, participant.id(), restart);
            let result = learn_individual(participant.baseline(), participant.targets(), &task_config)?;
            if skip_later && result.reached_threshold {
                first_hit.fetch_min(restart as u64, Ordering::Relaxed);
            }
            Ok(Some(result))
        })
        .collect::<Result<_>>()?;

    if !policy.exhaustive {
        for outcome in outcomes.iter().flatten() {
            if outcome.reached_threshold {
                return Ok(outcome.clone());
            }
        }
    }
    // Either exhaustive mode, or no restart reached the threshold (in which
    // case nothing was skipped): highest fitness wins, lowest index on ties.
    outcomes
        .into_iter()
        .flatten()
        .reduce(|best, candidate| if candidate.fitness > best.fitness { candidate } else { best })
        .ok_or_else(|| Error::InvalidConfig("restart policy produced no runs".into()))
}

/// Learns one weight matrix for a single participant under the restart
/// policy, using the same seed derivation as the population runs.
pub fn learn_participant(
    participant: &Participant,
    config: &GaConfig,
    policy: &RestartPolicy,
) -> Result<LearnResult> {
    config.validate(participant.concept_count())?;
    learn_with_restarts(participant, config, policy, SEED_DOMAIN_PARTICIPANT)
}

/// Learns one weight matrix per participant ("one for each"). Participants
/// are independent: adding or removing one never changes another's result.
pub fn one_for_each(
    data: &LongitudinalDataset,
    config: &GaConfig,
    policy: &RestartPolicy,
) -> Result<PopulationResult> {
    config.validate(data.concept_count())?;
    policy.validate()?;
    let per_participant = data
        .participants()
        .par_iter()
        .map(|p| {
            learn_with_restarts(p, config, policy, SEED_DOMAIN_PARTICIPANT)
                .map(|r| (p.id().to_string(), r))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(PopulationResult { per_participant })
}

/// The element-wise mean of all participants, wave by wave, as a synthetic
/// participant with id `"mean"`.
pub fn mean_participant(data: &LongitudinalDataset) -> Participant {
    let n = data.concept_count();
    let waves = data.wave_count();
    let count = data.participants().len() as f64;
    let mean_waves = (0..waves)
        .map(|w| {
            let values = (0..n)
                .map(|m| {
                    let sum: f64 = data
                        .participants()
                        .iter()
                        .map(|p| p.waves()[w].values()[m])
                        .sum();
                    // Guard against float roundoff nudging a mean of values
                    // in [0,1] just past the boundary.
                    (sum / count).clamp(0.0, 1.0)
                })
                .collect();
            ConceptVector::new(values).expect("means of unit-range values are in range")
        })
        .collect();
    Participant::new("mean", mean_waves).expect("mean participant mirrors a valid cohort")
}

/// Learns a single shared weight matrix ("one fits all") by fitting the mean
/// participant under the restart policy.
pub fn one_fits_all(
    data: &LongitudinalDataset,
    config: &GaConfig,
    policy: &RestartPolicy,
) -> Result<LearnResult> {
    config.validate(data.concept_count())?;
    let mean = mean_participant(data);
    learn_with_restarts(&mean, config, policy, SEED_DOMAIN_MEAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcm::{simulate_fcm, ActivationSpec, SimulationSpec, WeightMatrix};

    fn cv(values: &[f64]) -> ConceptVector {
        ConceptVector::new(values.to_vec()).unwrap()
    }

    /// Builds a participant whose follow-ups are the exact simulation of a
    /// known matrix, so the learner has a perfect optimum available.
    fn simulated_participant(id: &str, truth: &WeightMatrix, baseline: &[f64], t: usize) -> Participant {
        let initial = cv(baseline);
        let run = simulate_fcm(
            &initial,
            truth,
            &ActivationSpec::default(),
            &SimulationSpec::fixed_steps(t),
        )
        .unwrap();
        Participant::new(id, run.trajectory.steps().to_vec()).unwrap()
    }

    fn two_person_dataset() -> LongitudinalDataset {
        let wa = WeightMatrix::from_rows(vec![vec![0.4, -0.2], vec![0.1, 0.3]]).unwrap();
        let wb = WeightMatrix::from_rows(vec![vec![-0.5, 0.6], vec![0.2, -0.1]]).unwrap();
        LongitudinalDataset::new(
            vec!["c0".into(), "c1".into()],
            vec![
                simulated_participant("alice", &wa, &[0.3, 0.7], 2),
                simulated_participant("bob", &wb, &[0.6, 0.4], 2),
            ],
        )
        .unwrap()
    }

    fn quick_config() -> GaConfig {
        GaConfig {
            max_generations: 25,
            gen_size: 12,
            seed: 5,
            ..GaConfig::default()
        }
    }

    #[test]
    fn participant_validation() {
        assert!(Participant::new("", vec![cv(&[0.1]), cv(&[0.2])]).is_err());
        assert!(Participant::new("solo", vec![cv(&[0.1])]).is_err(), "baseline only");
        assert!(
            Participant::new("ragged", vec![cv(&[0.1]), cv(&[0.2, 0.3])]).is_err(),
            "inconsistent concept counts"
        );
        let p = Participant::new("ok", vec![cv(&[0.1, 0.2]), cv(&[0.3, 0.4])]).unwrap();
        assert_eq!(p.baseline().values(), &[0.1, 0.2]);
        assert_eq!(p.targets().len(), 1);
        assert_eq!(p.follow_ups(), 1);
        assert_eq!(p.concept_count(), 2);
    }

    #[test]
    fn dataset_validation() {
        let p = |id: &str| Participant::new(id, vec![cv(&[0.1]), cv(&[0.2])]).unwrap();
        let labels = vec!["c0".to_string()];
        assert!(LongitudinalDataset::new(labels.clone(), vec![]).is_err());
        assert!(LongitudinalDataset::new(vec![], vec![p("a")]).is_err());
        assert!(
            LongitudinalDataset::new(labels.clone(), vec![p("a"), p("a")]).is_err(),
            "duplicate ids"
        );
        let wide = Participant::new("w", vec![cv(&[0.1, 0.2]), cv(&[0.3, 0.4])]).unwrap();
        assert!(
            LongitudinalDataset::new(labels.clone(), vec![p("a"), wide]).is_err(),
            "concept count mismatch"
        );
        let long = Participant::new("l", vec![cv(&[0.1]), cv(&[0.2]), cv(&[0.3])]).unwrap();
        assert!(
            LongitudinalDataset::new(labels.clone(), vec![p("a"), long]).is_err(),
            "wave count mismatch"
        );
        let ok = LongitudinalDataset::new(labels, vec![p("a"), p("b")]).unwrap();
        assert_eq!(ok.wave_count(), 2);
        assert_eq!(ok.follow_ups(), 1);
        assert!(ok.participant("a").is_some());
        assert!(ok.participant("zz").is_none());
    }

    #[test]
    fn digest_is_deterministic_and_content_sensitive() {
        let d1 = two_person_dataset();
        let d2 = two_person_dataset();
        assert_eq!(d1.digest(), d2.digest());
        assert_eq!(d1.digest().len(), 64, "sha-256 hex");

        // Any change — a value, an id, a label — moves the digest.
        let mut tweaked_wave = d1.participants()[0].waves()[1].values().to_vec();
        tweaked_wave[0] = (tweaked_wave[0] + 0.01).min(1.0);
        let tweaked = LongitudinalDataset::new(
            d1.concept_labels().to_vec(),
            vec![
                Participant::new(
                    "alice",
                    vec![
                        d1.participants()[0].waves()[0].clone(),
                        cv(&tweaked_wave),
                        d1.participants()[0].waves()[2].clone(),
                    ],
                )
                .unwrap(),
                d1.participants()[1].clone(),
            ],
        )
        .unwrap();
        assert_ne!(d1.digest(), tweaked.digest());

        let relabeled =
            LongitudinalDataset::new(vec!["x0".into(), "x1".into()], d1.participants().to_vec())
                .unwrap();
        assert_ne!(d1.digest(), relabeled.digest());

        let reordered = LongitudinalDataset::new(
            d1.concept_labels().to_vec(),
            vec![d1.participants()[1].clone(), d1.participants()[0].clone()],
        )
        .unwrap();
        assert_ne!(d1.digest(), reordered.digest());
    }

    #[test]
    fn task_seeds_are_distinct_across_all_inputs() {
        let mut seen = BTreeSet::new();
        for master in [0u64, 1, 99] {
            for domain in [SEED_DOMAIN_PARTICIPANT, SEED_DOMAIN_MEAN] {
                for id in ["a", "b", "mean"] {
                    for restart in 0..4usize {
                        seen.insert(derive_task_seed(master, domain, id, restart));
                    }
                }
            }
        }
        assert_eq!(seen.len(), 3 * 2 * 3 * 4, "every task gets its own seed");
        assert_eq!(
            derive_task_seed(7, SEED_DOMAIN_PARTICIPANT, "p01", 2),
            derive_task_seed(7, SEED_DOMAIN_PARTICIPANT, "p01", 2),
            "derivation is a pure function"
        );
    }

    #[test]
    fn one_for_each_fits_every_participant_deterministically() {
        let data = two_person_dataset();
        let config = quick_config();
        let policy = RestartPolicy::default();
        let a = one_for_each(&data, &config, &policy).unwrap();
        let b = one_for_each(&data, &config, &policy).unwrap();
        assert_eq!(a, b, "same master seed, same outcome");
        assert_eq!(
            a.per_participant.keys().cloned().collect::<Vec<_>>(),
            vec!["alice".to_string(), "bob".to_string()]
        );
        for result in a.per_participant.values() {
            assert!(result.fitness > 0.0 && result.fitness <= 1.0);
            assert_eq!(result.weights.dim(), 2);
        }
    }

    #[test]
    fn participants_are_learned_independently() {
        let data = two_person_dataset();
        let config = quick_config();
        let policy = RestartPolicy::default();
        let both = one_for_each(&data, &config, &policy).unwrap();

        let alice_only = LongitudinalDataset::new(
            data.concept_labels().to_vec(),
            vec![data.participants()[0].clone()],
        )
        .unwrap();
        let solo = one_for_each(&alice_only, &config, &policy).unwrap();
        assert_eq!(
            both.per_participant["alice"], solo.per_participant["alice"],
            "removing bob must not change alice's learned matrix"
        );
    }

    #[test]
    fn learn_participant_matches_population_entry() {
        let data = two_person_dataset();
        let config = quick_config();
        let policy = RestartPolicy {
            restarts: 2,
            exhaustive: false,
        };
        let population = one_for_each(&data, &config, &policy).unwrap();
        let single = learn_participant(&data.participants()[1], &config, &policy).unwrap();
        assert_eq!(population.per_participant["bob"], single);
    }

    #[test]
    fn more_restarts_never_lower_the_kept_fitness() {
        let data = two_person_dataset();
        let config = GaConfig {
            max_generations: 10,
            gen_size: 8,
            seed: 3,
            ..GaConfig::default()
        };
        for exhaustive in [false, true] {
            let fitness_with = |restarts: usize| {
                let policy = RestartPolicy { restarts, exhaustive };
                one_for_each(&data, &config, &policy).unwrap().per_participant["alice"].fitness
            };
            let f1 = fitness_with(1);
            let f3 = fitness_with(3);
            assert!(
                f3 >= f1,
                "exhaustive={exhaustive}: restarts 3 gave {f3}, worse than 1 restart's {f1}"
            );
        }
    }

    #[test]
    fn exhaustive_and_early_exit_agree_when_no_threshold_hit() {
        // A tiny budget with the default 0.99 threshold: no run reaches it,
        // so both policies reduce to argmax over all restarts.
        let data = two_person_dataset();
        let config = GaConfig {
            max_generations: 5,
            gen_size: 8,
            seed: 13,
            ..GaConfig::default()
        };
        let early = one_for_each(
            &data,
            &config,
            &RestartPolicy { restarts: 3, exhaustive: false },
        )
        .unwrap();
        let exhaustive = one_for_each(
            &data,
            &config,
            &RestartPolicy { restarts: 3, exhaustive: true },
        )
        .unwrap();
        for result in early.per_participant.values() {
            assert!(!result.reached_threshold, "budget was meant to be too small");
        }
        assert_eq!(early, exhaustive);
    }

    #[test]
    fn early_exit_keeps_the_first_threshold_hit() {
        // A generous threshold makes restart 0 hit immediately; the kept
        // result must be restart 0's, bit for bit.
        let data = two_person_dataset();
        let config = GaConfig {
            max_generations: 50,
            gen_size: 12,
            fitness_threshold: 0.05,
            seed: 17,
            ..GaConfig::default()
        };
        let policy = RestartPolicy { restarts: 4, exhaustive: false };
        let kept = one_for_each(&data, &config, &policy).unwrap();
        for (id, result) in &kept.per_participant {
            assert!(result.reached_threshold);
            let mut restart0 = config.clone();
            restart0.seed = derive_task_seed(config.seed, SEED_DOMAIN_PARTICIPANT, id, 0);
            let p = data.participant(id).unwrap();
            let expected = learn_individual(p.baseline(), p.targets(), &restart0).unwrap();
            assert_eq!(result, &expected, "participant {id} must keep restart 0");
        }
    }

    #[test]
    fn mean_participant_averages_waves() {
        let labels = vec!["c0".to_string(), "c1".to_string()];
        let p1 = Participant::new("a", vec![cv(&[0.0, 0.4]), cv(&[0.2, 1.0])]).unwrap();
        let p2 = Participant::new("b", vec![cv(&[1.0, 0.6]), cv(&[0.4, 0.0])]).unwrap();
        let data = LongitudinalDataset::new(labels, vec![p1, p2]).unwrap();
        let mean = mean_participant(&data);
        assert_eq!(mean.id(), "mean");
        assert_eq!(mean.waves()[0].values(), &[0.5, 0.5]);
        assert!((mean.waves()[1].values()[0] - 0.3).abs() < 1e-15);
        assert!((mean.waves()[1].values()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn one_fits_all_learns_the_mean_participant() {
        let data = two_person_dataset();
        let config = quick_config();
        let policy = RestartPolicy::default();
        let shared = one_fits_all(&data, &config, &policy).unwrap();
        assert!(shared.fitness > 0.0 && shared.fitness <= 1.0);
        assert_eq!(shared.weights.dim(), 2);

        // Oracle: the same run done by hand on the mean participant with the
        // mean-domain task seed.
        let mean = mean_participant(&data);
        let mut by_hand = config.clone();
        by_hand.seed = derive_task_seed(config.seed, SEED_DOMAIN_MEAN, "mean", 0);
        let expected = learn_individual(mean.baseline(), mean.targets(), &by_hand).unwrap();
        assert_eq!(shared, expected);

        // The mean domain is distinct from the participant domain, so the
        // shared matrix differs from a participant run with the same id.
        let as_participant = learn_participant(&mean, &config, &policy).unwrap();
        assert_ne!(shared.weights, as_participant.weights);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let data = two_person_dataset();
        let config = quick_config();
        let policy = RestartPolicy { restarts: 2, exhaustive: false };
        let pools: Vec<rayon::ThreadPool> = [1usize, 4]
            .iter()
            .map(|&threads| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .unwrap()
            })
            .collect();
        let single = pools[0].install(|| one_for_each(&data, &config, &policy).unwrap());
        let multi = pools[1].install(|| one_for_each(&data, &config, &policy).unwrap());
        assert_eq!(single, multi);
    }

    #[test]
    fn zero_restarts_is_rejected() {
        let data = two_person_dataset();
        let policy = RestartPolicy { restarts: 0, exhaustive: false };
        assert!(one_for_each(&data, &quick_config(), &policy).is_err());
        assert!(one_fits_all(&data, &quick_config(), &policy).is_err());
    }
}
