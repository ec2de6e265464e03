//! Implementations of the four subcommands plus their shared plumbing:
//! dataset loading, seed resolution, output-table writers, and manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use fcm_core::{
    evaluate_population, generate_synthetic, learn_participant, load_longitudinal, load_raw,
    normality_screen, normalize, one_fits_all, one_for_each, read_concept_vector,
    read_weight_matrix, simulate_fcm, write_dataset, write_weight_matrix, ActivationSpec,
    ConceptSchema, Error, ErrorReport, GaConfig, LearnResult, LongitudinalDataset, ModelSet,
    NormalityReport, RestartPolicy, Result, SimulationSpec, SyntheticSpec, Trajectory,
    WeightMatrix,
};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::manifest::RunManifest;
use crate::{
    ActivationArgs, ActivationKind, EvaluateArgs, LearnArgs, ModeKind, PresetKind, SimulateArgs,
    SynthArgs,
};

/// Invocation-wide facts every subcommand needs for its manifest.
pub struct Context {
    pub argv: Vec<String>,
    pub started: Instant,
    pub threads: Option<usize>,
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn display_path(path: &Path) -> String {
    path.display().to_string()
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Seed precedence: explicit flag, then the FCM_SEED environment variable,
/// then 0.
fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    Ok(env_seed()?.unwrap_or(0))
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("FCM_SEED") {
        Ok(raw) => raw.trim().parse::<u64>().map(Some).map_err(|_| {
            Error::InvalidConfig(format!(
                "FCM_SEED must be an unsigned integer, got {raw:?}"
            ))
        }),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::InvalidConfig(format!("FCM_SEED: {e}"))),
    }
}

/// 17 significant digits: every f64 round-trips exactly.
fn full_precision(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidData(format!("JSON serialization: {e}")))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Resolves the activation flags against a base (the built-in default or the
/// one named in a config file).
fn resolve_activation(args: &ActivationArgs, base: &ActivationSpec) -> Result<ActivationSpec> {
    match (args.activation, args.lambda) {
        (Some(ActivationKind::Clip), None) => Ok(ActivationSpec::Clip),
        (Some(ActivationKind::Clip), Some(_)) => Err(Error::InvalidConfig(
            "--lambda only applies to --activation sigmoid".into(),
        )),
        (Some(ActivationKind::Sigmoid), Some(lambda)) => ActivationSpec::sigmoid(lambda),
        (Some(ActivationKind::Sigmoid), None) => match base {
            ActivationSpec::Sigmoid { steepness } => ActivationSpec::sigmoid(*steepness),
            ActivationSpec::Clip => ActivationSpec::sigmoid(1.0),
        },
        (None, Some(lambda)) => match base {
            ActivationSpec::Sigmoid { .. } => ActivationSpec::sigmoid(lambda),
            ActivationSpec::Clip => Err(Error::InvalidConfig(
                "--lambda only applies to a sigmoid activation; pass --activation sigmoid".into(),
            )),
        },
        (None, None) => Ok(*base),
    }
}

struct DataInput {
    data: LongitudinalDataset,
    dropped: Vec<String>,
    /// Input file path -> SHA-256, ready for the manifest.
    inputs: BTreeMap<String, String>,
}

/// Loads a dataset either directly (values already in [0,1]) or through a
/// concept schema that min-max normalizes raw values.
fn load_data(data_path: &Path, schema_path: Option<&Path>) -> Result<DataInput> {
    let mut inputs = BTreeMap::new();
    inputs.insert(display_path(data_path), sha256_file(data_path)?);
    match schema_path {
        None => {
            let loaded = load_longitudinal(data_path)?;
            Ok(DataInput {
                data: loaded.dataset,
                dropped: loaded.dropped,
                inputs,
            })
        }
        Some(schema_path) => {
            inputs.insert(display_path(schema_path), sha256_file(schema_path)?);
            let raw = load_raw(data_path)?;
            let schema = ConceptSchema::load(schema_path)?;
            let data = normalize(&raw, &schema)?;
            Ok(DataInput {
                data,
                dropped: raw.dropped,
                inputs,
            })
        }
    }
}

fn warn_dropped(dropped: &[String]) {
    for id in dropped {
        eprintln!("warning: dropped participant {id:?} (incomplete trajectory)");
    }
}

/// Maps a participant id to a safe file stem; anything outside
/// [A-Za-z0-9._-] becomes '_'.
fn sanitize_id(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write_index(dir: &Path, rows: &[(String, String)]) -> Result<()> {
    let mut writer = csv::Writer::from_path(dir.join("index.csv"))?;
    writer.write_record(["participant_id", "file"])?;
    for (pid, file) in rows {
        writer.write_record([pid.as_str(), file.as_str()])?;
    }
    writer.flush()?;
    Ok(())
}

fn read_results_index(path: &Path) -> Result<Vec<(String, String)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().ne(["participant_id", "file"]) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header participant_id,file, got {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 fields, got {}", record.len()),
            });
        }
        rows.push((record[0].to_string(), record[1].to_string()));
    }
    if rows.is_empty() {
        return Err(Error::InvalidData(format!(
            "{}: no model entries",
            path.display()
        )));
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn trajectory_table(trajectory: &Trajectory, labels: &[String]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["step".to_string()];
    header.extend_from_slice(labels);
    writer.write_record(&header)?;
    for (i, step) in trajectory.steps().iter().enumerate() {
        let mut record = vec![i.to_string()];
        record.extend(step.values().iter().map(|&v| full_precision(v)));
        writer.write_record(&record)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::InvalidData(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidData(format!("csv utf8: {e}")))
}

pub fn run_simulate(ctx: &Context, args: &SimulateArgs) -> Result<()> {
    let (weights, w_labels) = read_weight_matrix(&args.weights)?;
    let (baseline, b_labels) = read_concept_vector(&args.baseline)?;
    if w_labels != b_labels {
        return Err(Error::InvalidConfig(format!(
            "weight matrix and baseline disagree on concepts: {w_labels:?} vs {b_labels:?}"
        )));
    }
    let activation = resolve_activation(&args.activation, &ActivationSpec::sigmoid(1.0)?)?;
    let spec = SimulationSpec::new(
        args.steps,
        args.output_set.iter().copied().collect(),
        args.stabilize_threshold,
    )?;
    let run = simulate_fcm(&baseline, &weights, &activation, &spec)?;
    let table = trajectory_table(&run.trajectory, &w_labels)?;
    match &args.out {
        None => {
            print!("{table}");
            if run.stabilized {
                eprintln!("stabilized after {} steps", run.trajectory.len() - 1);
            }
        }
        Some(out) => {
            fs::create_dir_all(out)?;
            fs::write(out.join("trajectory.csv"), &table)?;
            let mut manifest = RunManifest::new("simulate", &ctx.argv);
            manifest.threads = ctx.threads;
            manifest.activation = Some(activation);
            manifest
                .inputs
                .insert(display_path(&args.weights), sha256_file(&args.weights)?);
            manifest
                .inputs
                .insert(display_path(&args.baseline), sha256_file(&args.baseline)?);
            manifest.outputs.push("trajectory.csv".into());
            manifest.write(out, ctx.started)?;
            println!(
                "wrote {} ({} steps{})",
                out.join("trajectory.csv").display(),
                run.trajectory.len() - 1,
                if run.stabilized { ", stabilized" } else { "" }
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// learn
// ---------------------------------------------------------------------------

fn mode_name(mode: ModeKind) -> &'static str {
    match mode {
        ModeKind::OneForEach => "one-for-each",
        ModeKind::OneFitsAll => "one-fits-all",
        ModeKind::Single => "single",
    }
}

/// Assembles the learner configuration. Precedence, lowest to highest:
/// built-in defaults, config file, preset, individual flags. The seed is
/// resolved as flag, then FCM_SEED, then the config file, then 0.
fn build_ga_config(args: &LearnArgs) -> Result<(GaConfig, RestartPolicy)> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str::<GaConfig>(&text).map_err(|e| Error::Parse {
                line: e.line() as u64,
                message: format!("learner config: {e}"),
            })?
        }
        None => GaConfig::default(),
    };
    let mut restarts = args.restarts;
    if let Some(PresetKind::Full) = args.preset {
        config.max_generations = 1_000_000;
        if restarts.is_none() {
            restarts = Some(100);
        }
    }
    if let Some(v) = args.max_generations {
        config.max_generations = v;
    }
    if let Some(v) = args.gen_size {
        config.gen_size = v;
    }
    if let Some(v) = args.fitness_threshold {
        config.fitness_threshold = v;
    }
    if let Some(v) = args.p_crossover {
        config.p_crossover = v;
    }
    if let Some(v) = args.p_mutation {
        config.p_mutation = v;
    }
    if let Some(v) = args.n_mutation {
        config.n_mutation = v;
    }
    if let Some(v) = args.mutation_schedule {
        config.mutation_schedule = v.into();
    }
    if let Some(v) = args.fitness {
        config.fitness_mode = v.into();
    }
    if args.no_best_ever {
        config.track_best_ever = false;
    }
    config.activation = resolve_activation(&args.activation, &config.activation.clone())?;
    if args.seed.is_none() {
        if let Some(seed) = env_seed()? {
            config.seed = seed;
        }
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let policy = RestartPolicy {
        restarts: restarts.unwrap_or(1),
        exhaustive: args.exhaustive_restarts,
    };
    Ok((config, policy))
}

pub fn run_learn(ctx: &Context, args: &LearnArgs) -> Result<()> {
    let input = load_data(&args.data, args.schema.as_deref())?;
    warn_dropped(&input.dropped);
    let (config, policy) = build_ga_config(args)?;

    if args.participant.is_some() && args.mode != ModeKind::Single {
        return Err(Error::InvalidConfig(
            "--participant only applies to --mode single".into(),
        ));
    }
    let results: Vec<(String, LearnResult)> = match args.mode {
        ModeKind::OneForEach => {
            let result = one_for_each(&input.data, &config, &policy)?;
            result.per_participant.into_iter().collect()
        }
        ModeKind::OneFitsAll => {
            let result = one_fits_all(&input.data, &config, &policy)?;
            vec![("mean".to_string(), result)]
        }
        ModeKind::Single => {
            let id = args.participant.clone().ok_or_else(|| {
                Error::InvalidConfig("--mode single requires --participant".into())
            })?;
            let participant = input.data.participant(&id).ok_or_else(|| {
                Error::InvalidConfig(format!("participant {id:?} not found in the dataset"))
            })?;
            let result = learn_participant(participant, &config, &policy)?;
            vec![(id, result)]
        }
    };

    fs::create_dir_all(&args.out)?;
    let labels = input.data.concept_labels().to_vec();
    let mut outputs = Vec::new();
    let mut used: BTreeMap<String, String> = BTreeMap::new();
    let mut index_rows = Vec::new();
    for (pid, result) in &results {
        let file = format!("{}.weights.csv", sanitize_id(pid));
        if let Some(previous) = used.insert(file.clone(), pid.clone()) {
            return Err(Error::InvalidConfig(format!(
                "participant ids {previous:?} and {pid:?} map to the same output file {file:?}; rename one"
            )));
        }
        write_weight_matrix(args.out.join(&file), &result.weights, &labels)?;
        outputs.push(file.clone());
        index_rows.push((pid.clone(), file));
    }
    write_index(&args.out, &index_rows)?;
    outputs.push("index.csv".into());

    let mut writer = csv::Writer::from_path(args.out.join("fitness.csv"))?;
    writer.write_record([
        "participant_id",
        "file",
        "fitness",
        "generations_used",
        "reached_threshold",
    ])?;
    for ((pid, result), (_, file)) in results.iter().zip(&index_rows) {
        let fitness = full_precision(result.fitness);
        let generations = result.generations_used.to_string();
        let reached = result.reached_threshold.to_string();
        writer.write_record([
            pid.as_str(),
            file.as_str(),
            fitness.as_str(),
            generations.as_str(),
            reached.as_str(),
        ])?;
    }
    writer.flush()?;
    outputs.push("fitness.csv".into());

    let mut manifest = RunManifest::new("learn", &ctx.argv);
    manifest.threads = ctx.threads;
    manifest.seed = Some(config.seed);
    manifest.mode = Some(mode_name(args.mode));
    manifest.restarts = Some(policy.restarts);
    manifest.exhaustive_restarts = Some(policy.exhaustive);
    manifest.activation = Some(config.activation);
    manifest.ga_config = Some(config.clone());
    manifest.inputs = input.inputs.clone();
    if let Some(cfg) = &args.config {
        manifest.inputs.insert(display_path(cfg), sha256_file(cfg)?);
    }
    manifest.dataset_digest = Some(input.data.digest());
    manifest.outputs = outputs;
    manifest.write(&args.out, ctx.started)?;

    for (pid, result) in &results {
        println!(
            "{pid}: fitness {:.6} after {} generations{}",
            result.fitness,
            result.generations_used,
            if result.reached_threshold {
                " (threshold reached)"
            } else {
                ""
            }
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

fn write_error_table(dir: &Path, report: &ErrorReport, labels: &[String]) -> Result<()> {
    let mut writer = csv::Writer::from_path(dir.join("error_report.csv"))?;
    writer.write_record(["wave", "concept_id", "concept_label", "mean_signed_diff"])?;
    for (s, row) in report.per_concept_per_wave.iter().enumerate() {
        for (m, &value) in row.iter().enumerate() {
            let wave = (s + 1).to_string();
            let concept = m.to_string();
            let cell = full_precision(value);
            writer.write_record([
                wave.as_str(),
                concept.as_str(),
                labels[m].as_str(),
                cell.as_str(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn write_normality_table(dir: &Path, report: &NormalityReport) -> Result<()> {
    let mut writer = csv::Writer::from_path(dir.join("normality.csv"))?;
    writer.write_record([
        "wave",
        "concept_id",
        "concept_label",
        "k2",
        "p_value",
        "reject_at_005",
    ])?;
    for (w, row) in report.cells.iter().enumerate() {
        for (m, cell) in row.iter().enumerate() {
            let wave = w.to_string();
            let concept = m.to_string();
            let k2 = full_precision(cell.k2);
            let p_value = full_precision(cell.p_value);
            let reject = cell.reject_at_005.to_string();
            writer.write_record([
                wave.as_str(),
                concept.as_str(),
                report.concept_labels[m].as_str(),
                k2.as_str(),
                p_value.as_str(),
                reject.as_str(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn run_evaluate(ctx: &Context, args: &EvaluateArgs) -> Result<()> {
    let input = load_data(&args.data, args.schema.as_deref())?;
    warn_dropped(&input.dropped);
    let data = &input.data;
    let n = data.concept_count();
    let mut inputs = input.inputs.clone();

    let index_path = args.results.join("index.csv");
    let entries = read_results_index(&index_path)?;
    inputs.insert(display_path(&index_path), sha256_file(&index_path)?);
    let mut matrices: BTreeMap<String, WeightMatrix> = BTreeMap::new();
    for (pid, file) in &entries {
        let path = args.results.join(file);
        let (matrix, _labels) = read_weight_matrix(&path)?;
        if matrix.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: matrix.dim(),
            });
        }
        inputs.insert(display_path(&path), sha256_file(&path)?);
        if matrices.insert(pid.clone(), matrix).is_some() {
            return Err(Error::InvalidData(format!(
                "duplicate participant {pid:?} in {}",
                index_path.display()
            )));
        }
    }

    // A results directory holding exactly one matrix for the synthetic
    // "mean" participant (and no real participant by that name) is a shared
    // model for the whole cohort.
    let shared = matrices.len() == 1
        && matrices.contains_key("mean")
        && data.participant("mean").is_none();
    let models = if shared {
        ModelSet::shared(&matrices["mean"])
    } else {
        ModelSet::per_participant(matrices.iter().map(|(id, m)| (id.as_str(), m)).collect())
    };

    let population = data.participants().len();
    let sample_size = args.sample_size.unwrap_or_else(|| population.min(100));
    let seed = resolve_seed(args.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let activation = resolve_activation(&args.activation, &ActivationSpec::sigmoid(1.0)?)?;
    let report = evaluate_population(data, &models, sample_size, &activation, &mut rng)?;

    fs::create_dir_all(&args.out)?;
    let mut outputs = Vec::new();
    write_json(&args.out.join("error_report.json"), &report)?;
    outputs.push("error_report.json".into());
    write_error_table(&args.out, &report, data.concept_labels())?;
    outputs.push("error_report.csv".into());

    let normality = if args.normality {
        let norm = normality_screen(data)?;
        write_json(&args.out.join("normality.json"), &norm)?;
        outputs.push("normality.json".into());
        write_normality_table(&args.out, &norm)?;
        outputs.push("normality.csv".into());
        Some(norm)
    } else {
        None
    };

    let mut manifest = RunManifest::new("evaluate", &ctx.argv);
    manifest.threads = ctx.threads;
    manifest.seed = Some(seed);
    manifest.sample_size = Some(sample_size);
    manifest.activation = Some(activation);
    manifest.inputs = inputs;
    manifest.dataset_digest = Some(data.digest());
    manifest.outputs = outputs;
    manifest.write(&args.out, ctx.started)?;

    println!(
        "evaluated {} of {} participants with {}: mean |error| {:.6}, max |error| {:.6}",
        report.sample_ids.len(),
        population,
        if shared {
            "the shared matrix".to_string()
        } else {
            format!("{} per-participant matrices", matrices.len())
        },
        report.mean_abs,
        report.max_abs
    );
    if let Some(norm) = &normality {
        let total = norm.cells.iter().map(|row| row.len()).sum::<usize>();
        let rejections = norm
            .cells
            .iter()
            .flatten()
            .filter(|c| c.reject_at_005)
            .count();
        println!(
            "normality screen: {rejections} of {total} (wave, concept) cells reject normality at 0.05"
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn run_synth(ctx: &Context, args: &SynthArgs) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let activation = resolve_activation(&args.activation, &ActivationSpec::sigmoid(1.0)?)?;
    let spec = SyntheticSpec {
        participants: args.participants,
        concepts: args.concepts,
        follow_ups: args.follow_ups,
        density: args.density,
        noise_sd: args.noise_sd,
        seed,
        activation,
    };
    let (data, truths) = generate_synthetic(&spec)?;

    let truth_dir = args.out.join("truth");
    fs::create_dir_all(&truth_dir)?;
    let mut outputs = Vec::new();
    write_dataset(args.out.join("dataset.csv"), &data)?;
    outputs.push("dataset.csv".into());
    let schema = ConceptSchema::unit(data.concept_labels());
    schema.save(args.out.join("schema.json"))?;
    outputs.push("schema.json".into());

    let labels = data.concept_labels().to_vec();
    let mut index_rows = Vec::new();
    for (pid, matrix) in &truths {
        let file = format!("{}.weights.csv", sanitize_id(pid));
        write_weight_matrix(truth_dir.join(&file), matrix, &labels)?;
        outputs.push(format!("truth/{file}"));
        index_rows.push((pid.clone(), file));
    }
    write_index(&truth_dir, &index_rows)?;
    outputs.push("truth/index.csv".into());

    let mut manifest = RunManifest::new("synth", &ctx.argv);
    manifest.threads = ctx.threads;
    manifest.seed = Some(seed);
    manifest.synth_spec = Some(spec.clone());
    manifest.activation = Some(spec.activation);
    manifest.dataset_digest = Some(data.digest());
    manifest.outputs = outputs;
    manifest.write(&args.out, ctx.started)?;

    println!(
        "wrote synthetic cohort to {}: {} participants x {} concepts x {} follow-ups (dataset digest {})",
        args.out.display(),
        spec.participants,
        spec.concepts,
        spec.follow_ups,
        &data.digest()[..12]
    );
    Ok(())
}
