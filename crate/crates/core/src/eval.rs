//! Evaluation of learned models against observed cohorts: signed
//! mean-difference error reports, an omnibus normality test, and per-person
//! trajectory comparisons.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcm::{simulate_fcm, ActivationSpec, SimulationSpec, Trajectory, WeightMatrix};
use crate::population::{LongitudinalDataset, Participant, PopulationResult};

/// Which learned matrix simulates which participant.
#[derive(Debug, Clone)]
pub enum ModelSet<'a> {
    /// One matrix per participant id; every evaluated participant must have
    /// an entry.
    PerParticipant(BTreeMap<&'a str, &'a WeightMatrix>),
    /// A single matrix shared by the whole cohort.
    Shared(&'a WeightMatrix),
}

impl<'a> ModelSet<'a> {
    pub fn shared(matrix: &'a WeightMatrix) -> Self {
        ModelSet::Shared(matrix)
    }

    pub fn per_participant(map: BTreeMap<&'a str, &'a WeightMatrix>) -> Self {
        ModelSet::PerParticipant(map)
    }

    fn model_for(&self, id: &str) -> Result<&'a WeightMatrix> {
        match self {
            ModelSet::Shared(w) => Ok(w),
            ModelSet::PerParticipant(map) => map
                .get(id)
                .copied()
                .ok_or_else(|| Error::MissingModel(id.to_string())),
        }
    }
}

impl<'a> From<&'a PopulationResult> for ModelSet<'a> {
    fn from(result: &'a PopulationResult) -> Self {
        ModelSet::PerParticipant(
            result
                .per_participant
                .iter()
                .map(|(id, r)| (id.as_str(), &r.weights))
                .collect(),
        )
    }
}

/// Signed mean differences between simulated and observed values over a
/// sampled subset of the cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `per_concept_per_wave[s][m]`: mean over sampled participants of
    /// (simulated - observed) for concept `m` at follow-up wave `s + 1`.
    /// Positive means the simulation overshoots.
    pub per_concept_per_wave: Vec<Vec<f64>>,
    /// Mean of the absolute cell values.
    pub mean_abs: f64,
    /// Largest absolute cell value.
    pub max_abs: f64,
    /// Mean over waves of each concept's signed cell values.
    pub per_concept_means: Vec<f64>,
    /// Ids of the sampled participants, ascending.
    pub sample_ids: Vec<String>,
}

/// Simulates each sampled participant from their baseline for the cohort's
/// follow-up count and averages the signed deviations per (wave, concept).
///
/// `sample_size` participants are drawn without replacement. Accumulation
/// runs in ascending id order, so with `sample_size` equal to the cohort size
/// the report is bit-identical regardless of the RNG.
pub fn evaluate_population(
    data: &LongitudinalDataset,
    models: &ModelSet,
    sample_size: usize,
    activation: &ActivationSpec,
    rng: &mut ChaCha8Rng,
) -> Result<ErrorReport> {
    activation.validate()?;
    let population = data.participants().len();
    if sample_size == 0 || sample_size > population {
        return Err(Error::InvalidConfig(format!(
            "sample_size must lie in 1..={population}, got {sample_size}"
        )));
    }
    let mut sampled: Vec<&Participant> = rand::seq::index::sample(rng, population, sample_size)
        .iter()
        .map(|i| &data.participants()[i])
        .collect();
    sampled.sort_by(|a, b| a.id().cmp(b.id()));

    let t = data.follow_ups();
    let n = data.concept_count();
    let spec = SimulationSpec::fixed_steps(t);
    let mut sums = vec![vec![0.0f64; n]; t];
    for p in &sampled {
        let model = models.model_for(p.id())?;
        let run = simulate_fcm(p.baseline(), model, activation, &spec)?;
        for (s, sums_row) in sums.iter_mut().enumerate() {
            let sim = run.trajectory.step(s + 1).values();
            let obs = p.waves()[s + 1].values();
            for m in 0..n {
                sums_row[m] += sim[m] - obs[m];
            }
        }
    }

    let k = sample_size as f64;
    let per_concept_per_wave: Vec<Vec<f64>> = sums
        .into_iter()
        .map(|row| row.into_iter().map(|v| v / k).collect())
        .collect();
    let mut mean_abs = 0.0;
    let mut max_abs = 0.0f64;
    let mut per_concept_means = vec![0.0f64; n];
    for row in &per_concept_per_wave {
        for (m, &cell) in row.iter().enumerate() {
            mean_abs += cell.abs();
            max_abs = max_abs.max(cell.abs());
            per_concept_means[m] += cell;
        }
    }
    mean_abs /= (t * n) as f64;
    for mean in per_concept_means.iter_mut() {
        *mean /= t as f64;
    }

    Ok(ErrorReport {
        per_concept_per_wave,
        mean_abs,
        max_abs,
        per_concept_means,
        sample_ids: sampled.iter().map(|p| p.id().to_string()).collect(),
    })
}

/// D'Agostino-Pearson omnibus normality test.
///
/// Combines the skewness z-transform (D'Agostino 1970) and the kurtosis
/// z-transform (Anscombe & Glass 1983) into `K^2 = z_s^2 + z_k^2`, which is
/// chi-squared with 2 degrees of freedom under normality; the returned
/// p-value is `exp(-K^2 / 2)`. Requires at least 20 observations and a
/// non-constant sample.
pub fn dagostino_pearson(sample: &[f64]) -> Result<(f64, f64)> {
    let count = sample.len();
    if count < 20 {
        return Err(Error::SampleTooSmall {
            needed: 20,
            actual: count,
        });
    }
    if let Some(&bad) = sample.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!(
            "normality test requires finite observations, got {bad}"
        )));
    }
    let n = count as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for &x in sample {
        let d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 == 0.0 {
        return Err(Error::ZeroVariance);
    }

    // Skewness z-transform.
    let b1 = m3 / m2.powf(1.5);
    let y = b1 * (((n + 1.0) * (n + 3.0)) / (6.0 * (n - 2.0))).sqrt();
    let beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
        / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    let y = if y == 0.0 { 1.0 } else { y };
    let z_skew = delta * (y / alpha + ((y / alpha) * (y / alpha) + 1.0).sqrt()).ln();

    // Kurtosis z-transform.
    let b2 = m4 / (m2 * m2);
    let e_b2 = 3.0 * (n - 1.0) / (n + 1.0);
    let var_b2 =
        24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0) * (n + 1.0) * (n + 3.0) * (n + 5.0));
    let x = (b2 - e_b2) / var_b2.sqrt();
    let sqrt_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * ((6.0 * (n + 3.0) * (n + 5.0)) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0
        + 8.0 / sqrt_beta1
            * (2.0 / sqrt_beta1 + (1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * (2.0 / (a - 4.0)).sqrt();
    if denom == 0.0 {
        return Err(Error::InvalidData(
            "kurtosis z-transform is undefined for this sample (zero denominator)".into(),
        ));
    }
    let term2 = ((1.0 - 2.0 / a) / denom).cbrt();
    let z_kurt = (term1 - term2) / (2.0 / (9.0 * a)).sqrt();

    let k2 = z_skew * z_skew + z_kurt * z_kurt;
    let p_value = (-k2 / 2.0).exp();
    Ok((k2, p_value))
}

/// One (wave, concept) cell of a normality screen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityCell {
    pub k2: f64,
    pub p_value: f64,
    /// Whether normality is rejected at the 0.05 level.
    pub reject_at_005: bool,
}

/// Normality test results for every (wave, concept) column of a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub concept_labels: Vec<String>,
    /// `cells[w][m]` covers concept `m` at wave `w` (0 = baseline).
    pub cells: Vec<Vec<NormalityCell>>,
}

/// Runs [`dagostino_pearson`] on every (wave, concept) column across the
/// whole cohort. Needs at least 20 participants.
pub fn normality_screen(data: &LongitudinalDataset) -> Result<NormalityReport> {
    let population = data.participants().len();
    if population < 20 {
        return Err(Error::SampleTooSmall {
            needed: 20,
            actual: population,
        });
    }
    let n = data.concept_count();
    let cells = (0..data.wave_count())
        .map(|w| {
            (0..n)
                .map(|m| {
                    let column: Vec<f64> = data
                        .participants()
                        .iter()
                        .map(|p| p.waves()[w].values()[m])
                        .collect();
                    let (k2, p_value) = dagostino_pearson(&column)?;
                    Ok(NormalityCell {
                        k2,
                        p_value,
                        reject_at_005: p_value < 0.05,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NormalityReport {
        concept_labels: data.concept_labels().to_vec(),
        cells,
    })
}

/// A participant's observed trajectory next to the simulated trajectory of
/// one or more candidate matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryReport {
    /// `series[0]` is `("observed", ...)`; the rest follow the input order.
    pub series: Vec<(String, Trajectory)>,
}

/// Simulates each labeled matrix from the participant's baseline for the
/// participant's follow-up count and lines the trajectories up against the
/// observed waves.
pub fn trajectory_report(
    participant: &Participant,
    models: &[(String, WeightMatrix)],
    activation: &ActivationSpec,
) -> Result<TrajectoryReport> {
    if models.is_empty() {
        return Err(Error::InvalidConfig(
            "trajectory report needs at least one matrix to compare".into(),
        ));
    }
    let observed = Trajectory::new(participant.waves().to_vec())?;
    let spec = SimulationSpec::fixed_steps(participant.follow_ups());
    let mut series = vec![("observed".to_string(), observed)];
    for (label, matrix) in models {
        if label == "observed" {
            return Err(Error::InvalidConfig(
                "the series label \"observed\" is reserved".into(),
            ));
        }
        let run = simulate_fcm(participant.baseline(), matrix, activation, &spec)?;
        series.push((label.clone(), run.trajectory));
    }
    Ok(TrajectoryReport { series })
}
