//! Dataset ingestion, normalization, file formats, and synthetic data.
//!
//! Longitudinal data travels as long-form CSV with the exact header
//! `participant_id,timestep,concept_id,value`: one row per observed value,
//! timesteps and concept ids both starting at 0. Weight matrices and concept
//! vectors are small CSV files with a label header; numeric cells are written
//! with 17 significant digits so every `f64` round-trips exactly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcm::{simulate_fcm, ActivationSpec, ConceptVector, SimulationSpec, WeightMatrix};
use crate::population::{LongitudinalDataset, Participant};

/// Expected header of every long-form dataset CSV.
pub const DATASET_HEADER: [&str; 4] = ["participant_id", "timestep", "concept_id", "value"];

/// One concept's identity and raw measurement range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptDef {
    /// Concept index; must equal the concept's position in the schema.
    pub id: usize,
    pub label: String,
    /// Optional free-text grouping, carried through but never interpreted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    pub raw_min: f64,
    pub raw_max: f64,
}

/// Ordered list of concept definitions; the contract for normalizing raw
/// survey values into [0,1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSchema {
    pub concepts: Vec<ConceptDef>,
}

impl ConceptSchema {
    /// A schema whose raw range already is the unit interval, one entry per
    /// label.
    pub fn unit(labels: &[String]) -> Self {
        Self {
            concepts: labels
                .iter()
                .enumerate()
                .map(|(id, label)| ConceptDef {
                    id,
                    label: label.clone(),
                    domain: None,
                    raw_min: 0.0,
                    raw_max: 1.0,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.concepts.iter().map(|c| c.label.clone()).collect()
    }

    /// Checks ids are exactly 0..n-1 in order, ranges are finite with
    /// `raw_min < raw_max`, and labels are non-empty and unique.
    pub fn validate(&self) -> Result<()> {
        if self.concepts.is_empty() {
            return Err(Error::InvalidData("schema defines no concepts".into()));
        }
        let mut labels = BTreeSet::new();
        for (i, c) in self.concepts.iter().enumerate() {
            if c.id != i {
                return Err(Error::InvalidData(format!(
                    "concept at position {i} has id {}; ids must be 0..{} in order",
                    c.id,
                    self.concepts.len() - 1
                )));
            }
            if c.label.is_empty() {
                return Err(Error::InvalidData(format!("concept {i} has an empty label")));
            }
            if !labels.insert(c.label.clone()) {
                return Err(Error::InvalidData(format!(
                    "duplicate concept label {:?}",
                    c.label
                )));
            }
            if !c.raw_min.is_finite() || !c.raw_max.is_finite() || c.raw_min >= c.raw_max {
                return Err(Error::InvalidData(format!(
                    "concept {i} needs a finite range with raw_min < raw_max, got [{}, {}]",
                    c.raw_min, c.raw_max
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        let schema: Self = serde_json::from_reader(BufReader::new(file)).map_err(|e| {
            Error::Parse {
                line: e.line() as u64,
                message: format!("schema JSON: {e}"),
            }
        })?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, self)
            .map_err(|e| Error::InvalidData(format!("schema JSON: {e}")))?;
        out.write_all(b"\n")?;
        Ok(())
    }
}

/// A successfully loaded cohort plus the ids of participants that were
/// dropped for missing observations.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub dataset: LongitudinalDataset,
    /// Participants with at least one missing (timestep, concept) cell, in
    /// first-appearance order.
    pub dropped: Vec<String>,
}

/// Raw (un-normalized) long-form data: values are only required to be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub concept_count: usize,
    /// Complete participants in first-appearance order; each wave is a plain
    /// value row of length `concept_count`.
    pub participants: Vec<(String, Vec<Vec<f64>>)>,
    pub dropped: Vec<String>,
}

/// Shared long-form grid reader. `require_unit` additionally enforces values
/// in [0,1] (for already-normalized data).
fn load_grid(path: &Path, require_unit: bool) -> Result<RawDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;

    let header = reader.headers()?;
    if *header != DATASET_HEADER[..] {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected header {:?}, got {:?}",
                DATASET_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut cells: HashMap<String, BTreeMap<(usize, usize), f64>> = HashMap::new();
    let mut timesteps_seen = BTreeSet::new();
    let mut concepts_seen = BTreeSet::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parse = |message: String| Error::Parse { line, message };
        if record.len() != 4 {
            return Err(parse(format!("expected 4 fields, got {}", record.len())));
        }
        let pid = record[0].to_string();
        if pid.is_empty() {
            return Err(parse("participant_id must be non-empty".into()));
        }
        let timestep: usize = record[1]
            .parse()
            .map_err(|_| parse(format!("timestep {:?} is not a nonnegative integer", &record[1])))?;
        let concept: usize = record[2]
            .parse()
            .map_err(|_| parse(format!("concept_id {:?} is not a nonnegative integer", &record[2])))?;
        let value: f64 = record[3]
            .parse()
            .map_err(|_| parse(format!("value {:?} is not a number", &record[3])))?;
        if !value.is_finite() {
            return Err(parse(format!("value {value} is not finite")));
        }
        if require_unit && !(0.0..=1.0).contains(&value) {
            return Err(parse(format!("value {value} is outside [0,1]")));
        }

        if !cells.contains_key(&pid) {
            order.push(pid.clone());
        }
        if cells
            .entry(pid.clone())
            .or_default()
            .insert((timestep, concept), value)
            .is_some()
        {
            return Err(parse(format!(
                "duplicate observation for participant {pid:?}, timestep {timestep}, concept {concept}"
            )));
        }
        timesteps_seen.insert(timestep);
        concepts_seen.insert(concept);
    }

    if order.is_empty() {
        return Err(Error::InvalidData("the dataset contains no data rows".into()));
    }
    let concept_count = concepts_seen.iter().next_back().unwrap() + 1;
    let wave_count = timesteps_seen.iter().next_back().unwrap() + 1;
    for c in 0..concept_count {
        if !concepts_seen.contains(&c) {
            return Err(Error::InvalidData(format!(
                "concept id {c} never appears although {} does; ids must be contiguous from 0",
                concept_count - 1
            )));
        }
    }
    for t in 0..wave_count {
        if !timesteps_seen.contains(&t) {
            return Err(Error::InvalidData(format!(
                "timestep {t} never appears although {} does; timesteps must be contiguous from 0",
                wave_count - 1
            )));
        }
    }
    if wave_count < 2 {
        return Err(Error::InvalidData(
            "the dataset needs a baseline (timestep 0) and at least one follow-up".into(),
        ));
    }

    let mut participants = Vec::new();
    let mut dropped = Vec::new();
    for pid in order {
        let grid = &cells[&pid];
        if grid.len() == wave_count * concept_count {
            let waves = (0..wave_count)
                .map(|t| (0..concept_count).map(|c| grid[&(t, c)]).collect())
                .collect();
            participants.push((pid, waves));
        } else {
            dropped.push(pid);
        }
    }
    if participants.is_empty() {
        return Err(Error::InvalidData(
            "every participant is missing observations; nothing left to load".into(),
        ));
    }
    Ok(RawDataset {
        concept_count,
        participants,
        dropped,
    })
}

/// Loads an already-normalized long-form CSV (values in [0,1]). Concept
/// labels are auto-generated as `c0..c{n-1}`; participants missing any
/// (timestep, concept) cell are dropped and reported.
pub fn load_longitudinal(path: impl AsRef<Path>) -> Result<LoadedDataset> {
    let raw = load_grid(path.as_ref(), true)?;
    let labels = (0..raw.concept_count).map(|c| format!("c{c}")).collect();
    let participants = raw
        .participants
        .into_iter()
        .map(|(id, waves)| {
            let waves = waves
                .into_iter()
                .map(ConceptVector::new)
                .collect::<Result<Vec<_>>>()?;
            Participant::new(id, waves)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedDataset {
        dataset: LongitudinalDataset::new(labels, participants)?,
        dropped: raw.dropped,
    })
}

/// Loads a raw long-form CSV without range restrictions, for use with
/// [`normalize`].
pub fn load_raw(path: impl AsRef<Path>) -> Result<RawDataset> {
    load_grid(path.as_ref(), false)
}

/// Min-max normalizes raw values into [0,1] using the schema's per-concept
/// ranges; values outside their concept's range are rejected.
pub fn normalize(raw: &RawDataset, schema: &ConceptSchema) -> Result<LongitudinalDataset> {
    schema.validate()?;
    if schema.len() != raw.concept_count {
        return Err(Error::DimensionMismatch {
            expected: raw.concept_count,
            actual: schema.len(),
        });
    }
    let participants = raw
        .participants
        .iter()
        .map(|(id, waves)| {
            let waves = waves
                .iter()
                .enumerate()
                .map(|(t, wave)| {
                    let values = wave
                        .iter()
                        .enumerate()
                        .map(|(c, &v)| {
                            let def = &schema.concepts[c];
                            if v < def.raw_min || v > def.raw_max {
                                return Err(Error::OutOfRange {
                                    what: format!(
                                        "participant {id:?} timestep {t} concept {c} raw value"
                                    ),
                                    value: v,
                                    lo: def.raw_min,
                                    hi: def.raw_max,
                                });
                            }
                            Ok((v - def.raw_min) / (def.raw_max - def.raw_min))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    ConceptVector::new(values)
                })
                .collect::<Result<Vec<_>>>()?;
            Participant::new(id.clone(), waves)
        })
        .collect::<Result<Vec<_>>>()?;
    LongitudinalDataset::new(schema.labels(), participants)
}

/// Writes a cohort as long-form CSV (the inverse of [`load_longitudinal`]).
/// Values use the shortest decimal form that round-trips exactly.
pub fn write_dataset(path: impl AsRef<Path>, data: &LongitudinalDataset) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(DATASET_HEADER)?;
    for p in data.participants() {
        for (t, wave) in p.waves().iter().enumerate() {
            for (c, &v) in wave.values().iter().enumerate() {
                writer
                    .write_record([p.id(), &t.to_string(), &c.to_string(), &format!("{v}")])
                    ?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

/// Formats a float with 17 significant digits, enough for an exact `f64`
/// round-trip through text.
fn full_precision(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a weight matrix as CSV: one header row of concept labels, then n
/// value rows of n columns each.
pub fn write_weight_matrix(
    path: impl AsRef<Path>,
    matrix: &WeightMatrix,
    labels: &[String],
) -> Result<()> {
    if labels.len() != matrix.dim() {
        return Err(Error::DimensionMismatch {
            expected: matrix.dim(),
            actual: labels.len(),
        });
    }
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(labels)?;
    for row in matrix.rows() {
        writer
            .write_record(row.iter().map(|&v| full_precision(v)))
            ?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a weight matrix written by [`write_weight_matrix`], returning the
/// matrix and its header labels.
pub fn read_weight_matrix(path: impl AsRef<Path>) -> Result<(WeightMatrix, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let labels: Vec<String> = reader
        .headers()
        ?
        .iter()
        .map(str::to_string)
        .collect();
    let n = labels.len();
    let mut weights = Vec::with_capacity(n * n);
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != n {
            return Err(Error::Parse {
                line,
                message: format!("expected {n} columns, got {}", record.len()),
            });
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("weight {field:?} is not a number"),
            })?;
            weights.push(v);
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::InvalidData(format!(
            "weight matrix must be square: header names {n} concepts but there are {rows} rows"
        )));
    }
    Ok((WeightMatrix::new(n, weights)?, labels))
}

/// Writes a concept vector as CSV: a header row of labels and one value row.
pub fn write_concept_vector(
    path: impl AsRef<Path>,
    vector: &ConceptVector,
    labels: &[String],
) -> Result<()> {
    if labels.len() != vector.len() {
        return Err(Error::DimensionMismatch {
            expected: vector.len(),
            actual: labels.len(),
        });
    }
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(labels)?;
    writer
        .write_record(vector.values().iter().map(|&v| full_precision(v)))
        ?;
    writer.flush()?;
    Ok(())
}

/// Reads a concept vector written by [`write_concept_vector`].
pub fn read_concept_vector(path: impl AsRef<Path>) -> Result<(ConceptVector, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let labels: Vec<String> = reader
        .headers()
        ?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = reader.records();
    let record = rows
        .next()
        .ok_or_else(|| Error::InvalidData("concept vector file has no value row".into()))?
        ?;
    let line = record.position().map(|p| p.line()).unwrap_or(0);
    if record.len() != labels.len() {
        return Err(Error::Parse {
            line,
            message: format!("expected {} values, got {}", labels.len(), record.len()),
        });
    }
    let values = record
        .iter()
        .map(|field| {
            field.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("value {field:?} is not a number"),
            })
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if rows.next().is_some() {
        return Err(Error::InvalidData(
            "concept vector file must contain exactly one value row".into(),
        ));
    }
    Ok((ConceptVector::new(values)?, labels))
}

/// Recipe for a synthetic ground-truth cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub participants: usize,
    pub concepts: usize,
    /// Follow-up waves per participant (the baseline comes on top).
    pub follow_ups: usize,
    /// Probability that any given weight-matrix cell carries a nonzero edge.
    pub density: f64,
    /// Standard deviation of measurement noise added to every observed value
    /// (0 disables noise entirely and reproduces the exact trajectories).
    pub noise_sd: f64,
    pub seed: u64,
    pub activation: ActivationSpec,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            participants: 20,
            concepts: 5,
            follow_ups: 3,
            density: 0.4,
            noise_sd: 0.05,
            seed: 0,
            activation: ActivationSpec::default(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.participants == 0 || self.concepts == 0 || self.follow_ups == 0 {
            return Err(Error::InvalidConfig(
                "a synthetic cohort needs at least 1 participant, 1 concept, and 1 follow-up".into(),
            ));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "density must lie in (0,1], got {}",
                self.density
            )));
        }
        if !self.noise_sd.is_finite() || self.noise_sd < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "noise_sd must be finite and nonnegative, got {}",
                self.noise_sd
            )));
        }
        self.activation.validate()
    }
}

/// Generates a synthetic cohort with known ground truth.
///
/// Per participant: a sparse truth matrix (each cell carries an edge with
/// probability `density`, edge weights uniform in [-1,1]), a uniform random
/// baseline, and `follow_ups` exact simulation steps. With `noise_sd > 0`,
/// Gaussian noise is added to every follow-up value (the baseline stays
/// exact) and the result clipped back into [0,1]; with `noise_sd == 0` the
/// observed waves are bit-exact simulation states.
///
/// Returns the cohort and the truth matrix per participant id.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
) -> Result<(LongitudinalDataset, BTreeMap<String, WeightMatrix>)> {
    spec.validate()?;
    let n = spec.concepts;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let weight_dist = Uniform::new_inclusive(-1.0f64, 1.0f64);
    let level_dist = Uniform::new_inclusive(0.0f64, 1.0f64);
    let id_width = spec.participants.saturating_sub(1).to_string().len().max(3);

    let mut participants = Vec::with_capacity(spec.participants);
    let mut truths = BTreeMap::new();
    for i in 0..spec.participants {
        let id = format!("p{i:0id_width$}");

        let weights = (0..n * n)
            .map(|_| {
                if rng.gen::<f64>() < spec.density {
                    weight_dist.sample(&mut rng)
                } else {
                    0.0
                }
            })
            .collect();
        let truth = WeightMatrix::new(n, weights)?;

        let baseline =
            ConceptVector::new((0..n).map(|_| level_dist.sample(&mut rng)).collect())?;
        let run = simulate_fcm(
            &baseline,
            &truth,
            &spec.activation,
            &SimulationSpec::fixed_steps(spec.follow_ups),
        )?;
        let mut waves: Vec<ConceptVector> = run.trajectory.steps().to_vec();

        if spec.noise_sd > 0.0 {
            let noise = Normal::new(0.0, spec.noise_sd)
                .map_err(|e| Error::InvalidConfig(format!("noise distribution: {e}")))?;
            for wave in waves.iter_mut().skip(1) {
                let values = wave
                    .values()
                    .iter()
                    .map(|&v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0))
                    .collect();
                *wave = ConceptVector::new(values)?;
            }
        }

        participants.push(Participant::new(id.clone(), waves)?);
        truths.insert(id, truth);
    }

    let labels = (0..n).map(|c| format!("c{c}")).collect();
    Ok((LongitudinalDataset::new(labels, participants)?, truths))
}
