//! Command line for the two-stage next-city recommender: synthetic data,
//! dataset preparation, training, evaluation, model comparison, and
//! single-trip prediction.
//!
//! Exit codes: 0 success, 2 input error, 3 schema or config error,
//! 1 internal error.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use triprank::config::FullConfig;
use triprank::dataset::{
    assemble_trips, generate_synthetic, parse_checkins, split_dataset, write_checkins, Checkin,
    ColumnMap, Trip, Vocab, Vocabs,
};
use triprank::dates::Date;
use triprank::features::{hash_hex, schema_hash, FeatureConfig};
use triprank::ltr::two_proportion_z_test;
use triprank::nn::checkpoint::{self, CheckpointError};
use triprank::nn::{ParameterStore, RerankModel, VocabSizes};
use triprank::train::{
    evaluate, fit, fit_epoch_stats, score_prefix, EvalOutcome, FeaturePipeline,
    Scorer, TrainContext, TrainError, EPOCH_CSV_HEADER,
};

#[derive(Parser)]
#[command(
    name = "triprank",
    about = "Two-stage next-city recommender: candidate generation plus attention reranking"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic Markov-chain checkin CSV for desk-scale runs.
    Synth(SynthArgs),
    /// Split a checkin CSV into train/validation/holdout and freeze the
    /// vocabularies.
    Prepare(PrepareArgs),
    /// Train the attention reranker, keeping the best-validation
    /// checkpoint.
    Train(TrainArgs),
    /// Score one split with a trained checkpoint.
    Evaluate(EvaluateArgs),
    /// Evaluate several models on one split, with significance tests
    /// against the best one.
    Compare(CompareArgs),
    /// Rank next-city candidates for one trip prefix given as JSON.
    Predict(PredictArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// CSV file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    trips: usize,
    #[arg(long, default_value_t = 64)]
    cities: usize,
    #[arg(long, default_value_t = 8)]
    countries: usize,
    /// Probability that a trip follows the cyclic city chain.
    #[arg(long, default_value_t = 0.9)]
    sharpness: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct PrepareArgs {
    /// Checkin CSV (columns mirror the dataset release).
    #[arg(long)]
    input: PathBuf,
    /// Data directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Trips held out for validation.
    #[arg(long, default_value_t = 4000)]
    val: usize,
    /// Trips held out for final evaluation.
    #[arg(long, default_value_t = 4000)]
    holdout: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory written by `prepare`.
    #[arg(long)]
    data: PathBuf,
    /// Flat key=value config; omitted keys use defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for best.ckpt, epochs.csv, and the manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint produced by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "holdout")]
    split: String,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Manifest directory; defaults to the data directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated list: baseline names (GlobalTop,
    /// LastCityCountryTop, TransitionChain) or checkpoint paths.
    #[arg(long)]
    models: String,
    #[arg(long, default_value = "holdout")]
    split: String,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Manifest directory; defaults to the data directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// JSON file path or inline JSON: an array of checkin objects plus a
    /// final target-context object (dates, device, affiliate, booker
    /// country of the stay to predict).
    #[arg(long)]
    trip: String,
    #[arg(long, default_value_t = 4)]
    top: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Manifest directory; defaults to the data directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Input(anyhow::Error),
    Schema(anyhow::Error),
    Internal(anyhow::Error),
}

impl Failure {
    fn input(e: impl Into<anyhow::Error>) -> Failure {
        Failure::Input(e.into())
    }

    fn schema(e: impl Into<anyhow::Error>) -> Failure {
        Failure::Schema(e.into())
    }

    fn internal(e: impl Into<anyhow::Error>) -> Failure {
        Failure::Internal(e.into())
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Schema(_) => 3,
            Failure::Internal(_) => 1,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Schema(e) | Failure::Internal(e) => e,
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Synth(a) => cmd_synth(&a),
        Cmd::Prepare(a) => cmd_prepare(&a),
        Cmd::Train(a) => cmd_train(&a),
        Cmd::Evaluate(a) => cmd_evaluate(&a),
        Cmd::Compare(a) => cmd_compare(&a),
        Cmd::Predict(a) => cmd_predict(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

/// TRIPRANK_THREADS caps the rayon pool. Results are identical at any
/// worker count; this only bounds CPU use.
fn configure_threads() {
    if let Ok(v) = std::env::var("TRIPRANK_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

const CHECKINS_FILE: &str = "checkins.csv";
const SPLIT_NAMES: [&str; 3] = ["train", "validation", "holdout"];

fn split_file(name: &str) -> String {
    format!("split_{name}.txt")
}

fn sha256_hex(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::input)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let mut out = String::with_capacity(64);
    for b in hasher.finalize() {
        out.push_str(&format!("{b:02x}"));
    }
    Ok(out)
}

/// Writes `<dir>/<file>`: the command, its seed and parameters, a digest
/// per input file, and the full config snapshot. Everything in it is
/// deterministic, so identical reruns produce identical manifests.
fn write_manifest(
    dir: &Path,
    file: &str,
    command: &str,
    params: &[(String, String)],
    inputs: &[(String, String)],
    config_text: Option<&str>,
) -> CliResult {
    let mut text = format!("command = {command}\n");
    for (k, v) in params {
        text.push_str(&format!("param.{k} = {v}\n"));
    }
    let mut sorted: Vec<&(String, String)> = inputs.iter().collect();
    sorted.sort();
    for (name, digest) in sorted {
        text.push_str(&format!("input.{name} = {digest}\n"));
    }
    if let Some(cfg) = config_text {
        for line in cfg.lines() {
            text.push_str(&format!("config.{line}\n"));
        }
    }
    fs::write(dir.join(file), text)
        .with_context(|| format!("writing manifest in {}", dir.display()))
        .map_err(Failure::internal)
}

fn read_lines(path: &Path) -> CliResult<Vec<String>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::input)?;
    Ok(text.lines().map(str::to_string).collect())
}

struct DataDir {
    dir: PathBuf,
    train: Vec<Trip>,
    validation: Vec<Trip>,
    holdout: Vec<Trip>,
    vocabs: Vocabs,
    feature_cfg: FeatureConfig,
}

impl DataDir {
    fn split(&self, name: &str) -> CliResult<&[Trip]> {
        match name {
            "train" => Ok(&self.train),
            "validation" => Ok(&self.validation),
            "holdout" => Ok(&self.holdout),
            other => Err(Failure::input(anyhow!(
                "unknown split {other:?}; expected train, validation, or holdout"
            ))),
        }
    }

    /// Digests of every file later commands depend on.
    fn input_digests(&self) -> CliResult<Vec<(String, String)>> {
        let mut files = vec![
            CHECKINS_FILE.to_string(),
            "vocab_city.txt".into(),
            "vocab_country.txt".into(),
            "vocab_affiliate.txt".into(),
            "feature_years.txt".into(),
        ];
        files.extend(SPLIT_NAMES.iter().map(|n| split_file(n)));
        let mut out = Vec::with_capacity(files.len());
        for f in files {
            out.push((f.clone(), sha256_hex(&self.dir.join(&f))?));
        }
        Ok(out)
    }
}

fn load_data_dir(dir: &Path) -> CliResult<DataDir> {
    let csv_path = dir.join(CHECKINS_FILE);
    let file = File::open(&csv_path)
        .with_context(|| format!("opening {}", csv_path.display()))
        .map_err(Failure::input)?;
    let checkins =
        parse_checkins(BufReader::new(file), &ColumnMap::default()).map_err(Failure::input)?;
    let trips = assemble_trips(checkins);
    let by_id: BTreeMap<&str, &Trip> = trips.iter().map(|t| (t.utrip_id.as_str(), t)).collect();

    let mut splits: Vec<Vec<Trip>> = Vec::with_capacity(3);
    for name in SPLIT_NAMES {
        let ids = read_lines(&dir.join(split_file(name)))?;
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let trip = by_id.get(id.as_str()).ok_or_else(|| {
                Failure::input(anyhow!("split {name} lists unknown trip id {id:?}"))
            })?;
            out.push((*trip).clone());
        }
        splits.push(out);
    }
    let holdout = splits.pop().unwrap();
    let validation = splits.pop().unwrap();
    let train = splits.pop().unwrap();

    let vocab_from = |file: &str| -> CliResult<Vocab> {
        Ok(Vocab::from_lines(read_lines(&dir.join(file))?))
    };
    let vocabs = Vocabs {
        city: vocab_from("vocab_city.txt")?,
        country: vocab_from("vocab_country.txt")?,
        affiliate: vocab_from("vocab_affiliate.txt")?,
    };

    let mut years = Vec::new();
    for line in read_lines(&dir.join("feature_years.txt"))? {
        if line.trim().is_empty() {
            continue;
        }
        let y: i32 = line
            .trim()
            .parse()
            .map_err(|_| Failure::input(anyhow!("bad year line in feature_years.txt: {line:?}")))?;
        years.push(y);
    }

    Ok(DataDir {
        dir: dir.to_path_buf(),
        train,
        validation,
        holdout,
        vocabs,
        feature_cfg: FeatureConfig { years },
    })
}

fn load_config(path: Option<&Path>) -> CliResult<(FullConfig, Option<String>)> {
    match path {
        None => Ok((FullConfig::default(), None)),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .map_err(Failure::input)?;
            let cfg = FullConfig::parse(&text).map_err(Failure::schema)?;
            Ok((cfg, Some(text)))
        }
    }
}

fn map_train_error(e: TrainError) -> Failure {
    match &e {
        TrainError::EmptyInput => Failure::input(e),
        TrainError::Config(_) => Failure::schema(e),
        TrainError::Ltr(_) => Failure::internal(e),
    }
}

fn map_checkpoint_error(e: CheckpointError) -> Failure {
    match &e {
        CheckpointError::BadMagic | CheckpointError::SchemaMismatch => Failure::schema(e),
        CheckpointError::Io(_) | CheckpointError::Corrupt(_) => Failure::input(e),
    }
}

fn vocab_sizes(vocabs: &Vocabs) -> VocabSizes {
    VocabSizes {
        city: vocabs.city.n_indices(),
        country: vocabs.country.n_indices(),
        affiliate: vocabs.affiliate.n_indices(),
    }
}

/// Loads a checkpoint, enforcing that it was trained against this data
/// directory's feature schema and vocabularies.
fn load_model(data: &DataDir, path: &Path) -> CliResult<(RerankModel, ParameterStore)> {
    let expected = schema_hash(&data.feature_cfg, &data.vocabs);
    let (store, model_cfg, _) =
        checkpoint::load(path, Some(&expected)).map_err(map_checkpoint_error)?;
    model_cfg
        .validate()
        .map_err(|m| Failure::schema(anyhow!("checkpoint model config: {m}")))?;
    Ok((RerankModel::new(model_cfg, vocab_sizes(&data.vocabs)), store))
}

fn cmd_synth(args: &SynthArgs) -> CliResult {
    let checkins = generate_synthetic(
        args.trips,
        args.cities,
        args.countries,
        args.sharpness,
        args.seed,
    );
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(Failure::internal)?;
        }
    }
    let mut file = BufWriter::new(File::create(&args.out).map_err(Failure::input)?);
    write_checkins(&mut file, &checkins).map_err(Failure::internal)?;
    file.flush().map_err(Failure::internal)?;
    println!(
        "wrote {} checkins ({} trips) to {}",
        checkins.len(),
        args.trips,
        args.out.display()
    );

    let manifest_dir = args.out.parent().unwrap_or(Path::new("."));
    let manifest_name = format!(
        "{}.manifest.txt",
        args.out.file_stem().unwrap_or_default().to_string_lossy()
    );
    write_manifest(
        manifest_dir,
        &manifest_name,
        "synth",
        &[
            ("trips".into(), args.trips.to_string()),
            ("cities".into(), args.cities.to_string()),
            ("countries".into(), args.countries.to_string()),
            ("sharpness".into(), args.sharpness.to_string()),
            ("seed".into(), args.seed.to_string()),
        ],
        &[(
            args.out.file_name().unwrap().to_string_lossy().into_owned(),
            sha256_hex(&args.out)?,
        )],
        None,
    )
}

fn cmd_prepare(args: &PrepareArgs) -> CliResult {
    let file = File::open(&args.input)
        .with_context(|| format!("opening {}", args.input.display()))
        .map_err(Failure::input)?;
    let checkins =
        parse_checkins(BufReader::new(file), &ColumnMap::default()).map_err(Failure::input)?;
    let n_checkins = checkins.len();

    fs::create_dir_all(&args.out).map_err(Failure::internal)?;
    let mut copy = BufWriter::new(
        File::create(args.out.join(CHECKINS_FILE)).map_err(Failure::internal)?,
    );
    write_checkins(&mut copy, &checkins).map_err(Failure::internal)?;
    copy.flush().map_err(Failure::internal)?;

    let trips = assemble_trips(checkins);
    let n_trips = trips.len();
    let split = split_dataset(trips, args.val, args.holdout, args.seed).map_err(Failure::input)?;

    let write_ids = |name: &str, trips: &[Trip]| -> CliResult {
        let mut text = String::new();
        for t in trips {
            text.push_str(&t.utrip_id);
            text.push('\n');
        }
        fs::write(args.out.join(split_file(name)), text).map_err(Failure::internal)
    };
    write_ids("train", &split.train)?;
    write_ids("validation", &split.validation)?;
    write_ids("holdout", &split.holdout)?;

    // Vocabularies and feature years are frozen from the train split, so
    // evaluation-only values map to the out-of-vocabulary index.
    let vocabs = triprank::dataset::build_vocabs(&split.train);
    let write_vocab = |file: &str, vocab: &Vocab| -> CliResult {
        let mut text = String::new();
        for v in vocab.values() {
            text.push_str(v);
            text.push('\n');
        }
        fs::write(args.out.join(file), text).map_err(Failure::internal)
    };
    write_vocab("vocab_city.txt", &vocabs.city)?;
    write_vocab("vocab_country.txt", &vocabs.country)?;
    write_vocab("vocab_affiliate.txt", &vocabs.affiliate)?;

    let feature_cfg = FeatureConfig::from_trips(&split.train);
    let years_text: String = feature_cfg
        .years
        .iter()
        .map(|y| format!("{y}\n"))
        .collect();
    fs::write(args.out.join("feature_years.txt"), years_text).map_err(Failure::internal)?;

    println!(
        "{} checkins, {} trips: train {}, validation {}, holdout {}",
        n_checkins,
        n_trips,
        split.train.len(),
        split.validation.len(),
        split.holdout.len()
    );
    println!(
        "vocab sizes: {} cities, {} countries, {} affiliates; schema {}",
        vocabs.city.n_values(),
        vocabs.country.n_values(),
        vocabs.affiliate.n_values(),
        hash_hex(&schema_hash(&feature_cfg, &vocabs))
    );

    write_manifest(
        &args.out,
        "manifest.txt",
        "prepare",
        &[
            ("seed".into(), args.seed.to_string()),
            ("val".into(), args.val.to_string()),
            ("holdout".into(), args.holdout.to_string()),
        ],
        &[("input.csv".into(), sha256_hex(&args.input)?)],
        None,
    )
}

fn cmd_train(args: &TrainArgs) -> CliResult {
    let (full, _) = load_config(args.config.as_deref())?;
    let data = load_data_dir(&args.data)?;
    let model = RerankModel::new(full.model.clone(), vocab_sizes(&data.vocabs));
    let schema = schema_hash(&data.feature_cfg, &data.vocabs);

    fs::create_dir_all(&args.out).map_err(Failure::internal)?;
    let ckpt_path = args.out.join("best.ckpt");
    let csv_path = args.out.join("epochs.csv");
    let mut csv = BufWriter::new(File::create(&csv_path).map_err(Failure::internal)?);
    writeln!(csv, "{EPOCH_CSV_HEADER}").map_err(Failure::internal)?;

    let ctx = TrainContext {
        model: &model,
        vocabs: &data.vocabs,
        feature_cfg: &data.feature_cfg,
        candidate_cfg: &full.candidates,
        cfg: &full.train,
    };
    let mut sink_error: Option<std::io::Error> = None;
    let result = fit(&ctx, &data.train, &data.validation, |report, snapshot| {
        println!(
            "epoch {:>3}  train_ndcg{} {:.4}  val_ndcg{} {:.4}  val_acc{} {:.4}  {:.1}s{}{}",
            report.epoch,
            full.train.ndcg_k,
            report.train_ndcg,
            full.train.ndcg_k,
            report.val_ndcg,
            full.train.acc_k,
            report.val_acc,
            report.seconds,
            if report.skipped > 0 {
                format!("  (skipped {})", report.skipped)
            } else {
                String::new()
            },
            if snapshot.is_some() { "  *" } else { "" },
        );
        let io = writeln!(csv, "{}", report.csv_line())
            .and_then(|_| csv.flush())
            .and_then(|_| match snapshot {
                Some(store) => checkpoint::save(&ckpt_path, store, &model.cfg, &schema),
                None => Ok(()),
            });
        if let (Err(e), None) = (io, sink_error.as_ref()) {
            sink_error = Some(e);
        }
    })
    .map_err(map_train_error)?;
    if let Some(e) = sink_error {
        return Err(Failure::internal(anyhow!(e).context("writing run artifacts")));
    }

    println!(
        "best epoch {} val_acc{} {:.4}; checkpoint {}",
        result.best_epoch,
        full.train.acc_k,
        result.best_val_acc,
        ckpt_path.display()
    );

    let mut inputs = data.input_digests()?;
    if let Some(p) = &args.config {
        inputs.push(("config".into(), sha256_hex(p)?));
    }
    write_manifest(
        &args.out,
        "manifest.txt",
        "train",
        &[("seed".into(), full.train.seed.to_string())],
        &inputs,
        Some(&full.to_text()),
    )
}

fn print_outcome(label: &str, outcome: &EvalOutcome, acc_k: usize, ndcg_k: usize) {
    println!(
        "{label}  accuracy_at_{acc_k} {:.4}  ndcg_at_{ndcg_k} {:.4}  n {}",
        outcome.accuracy, outcome.ndcg, outcome.n_trips
    );
}

fn cmd_evaluate(args: &EvaluateArgs) -> CliResult {
    let (full, _) = load_config(args.config.as_deref())?;
    let data = load_data_dir(&args.data)?;
    let (model, store) = load_model(&data, &args.model)?;
    let stats = fit_epoch_stats(&data.train, &data.vocabs);
    let pipe = FeaturePipeline {
        vocabs: &data.vocabs,
        feature_cfg: &data.feature_cfg,
        candidate_cfg: &full.candidates,
        matrix: &stats.matrix,
        stats: &stats.stats,
    };
    let trips = data.split(&args.split)?;
    let outcome = evaluate(trips, &Scorer::Reranker(&model, &store), &pipe, &full.train)
        .map_err(map_train_error)?;
    print_outcome("RerankingAttention", &outcome, full.train.acc_k, full.train.ndcg_k);

    let mut inputs = data.input_digests()?;
    inputs.push(("model".into(), sha256_hex(&args.model)?));
    let manifest_dir = args.out.as_deref().unwrap_or(&data.dir);
    fs::create_dir_all(manifest_dir).map_err(Failure::internal)?;
    write_manifest(
        manifest_dir,
        "manifest_evaluate.txt",
        "evaluate",
        &[("split".into(), args.split.clone())],
        &inputs,
        Some(&full.to_text()),
    )
}

enum ModelSpec {
    Baseline(&'static str),
    Checkpoint(String),
}

fn parse_model_list(list: &str) -> CliResult<Vec<ModelSpec>> {
    let mut out = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let spec = match item {
            "GlobalTop" => ModelSpec::Baseline("GlobalTop"),
            "LastCityCountryTop" => ModelSpec::Baseline("LastCityCountryTop"),
            "TransitionChain" => ModelSpec::Baseline("TransitionChain"),
            other if Path::new(other).exists() => ModelSpec::Checkpoint(other.to_string()),
            other => {
                return Err(Failure::input(anyhow!(
                    "model {other:?} is neither a baseline name nor an existing checkpoint"
                )))
            }
        };
        out.push(spec);
    }
    if out.is_empty() {
        return Err(Failure::input(anyhow!("empty --models list")));
    }
    Ok(out)
}

fn cmd_compare(args: &CompareArgs) -> CliResult {
    let (full, _) = load_config(args.config.as_deref())?;
    let data = load_data_dir(&args.data)?;
    let specs = parse_model_list(&args.models)?;
    let stats = fit_epoch_stats(&data.train, &data.vocabs);
    let pipe = FeaturePipeline {
        vocabs: &data.vocabs,
        feature_cfg: &data.feature_cfg,
        candidate_cfg: &full.candidates,
        matrix: &stats.matrix,
        stats: &stats.stats,
    };
    let trips = data.split(&args.split)?;

    // Checkpoints are loaded first so the scorers can borrow them.
    let mut loaded: Vec<Option<(RerankModel, ParameterStore)>> = Vec::new();
    for spec in &specs {
        loaded.push(match spec {
            ModelSpec::Baseline(_) => None,
            ModelSpec::Checkpoint(p) => Some(load_model(&data, Path::new(p))?),
        });
    }
    let mut rows: Vec<(String, EvalOutcome)> = Vec::new();
    for (spec, model) in specs.iter().zip(&loaded) {
        let (label, scorer) = match (spec, model) {
            (ModelSpec::Baseline("GlobalTop"), _) => ("GlobalTop".to_string(), Scorer::GlobalTop),
            (ModelSpec::Baseline("LastCityCountryTop"), _) => {
                ("LastCityCountryTop".to_string(), Scorer::LastCityCountryTop)
            }
            (ModelSpec::Baseline(_), _) => {
                ("TransitionChain".to_string(), Scorer::TransitionChain)
            }
            (ModelSpec::Checkpoint(p), Some((model, store))) => (
                format!("RerankingAttention({p})"),
                Scorer::Reranker(model, store),
            ),
            (ModelSpec::Checkpoint(_), None) => unreachable!(),
        };
        let outcome = evaluate(trips, &scorer, &pipe, &full.train).map_err(map_train_error)?;
        rows.push((label, outcome));
    }

    let best = rows
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.1.accuracy
                .partial_cmp(&b.1.accuracy)
                .unwrap()
                .then(ib.cmp(ia))
        })
        .map(|(i, _)| i)
        .unwrap();
    let n = rows[best].1.n_trips as u64;
    let successes = |o: &EvalOutcome| (o.accuracy * o.n_trips as f64).round() as u64;
    let best_successes = successes(&rows[best].1);

    println!(
        "model\taccuracy_at_{}\tndcg_at_{}\tn\tp_vs_best",
        full.train.acc_k, full.train.ndcg_k
    );
    for (i, (label, outcome)) in rows.iter().enumerate() {
        let p = two_proportion_z_test(best_successes, successes(outcome), n);
        let marker = if i == best { " (best)" } else { "" };
        println!(
            "{label}\t{:.4}\t{:.4}\t{}\t{:.6}{marker}",
            outcome.accuracy, outcome.ndcg, outcome.n_trips, p
        );
    }

    let mut inputs = data.input_digests()?;
    for spec in &specs {
        if let ModelSpec::Checkpoint(p) = spec {
            inputs.push((format!("model.{p}"), sha256_hex(Path::new(p))?));
        }
    }
    let manifest_dir = args.out.as_deref().unwrap_or(&data.dir);
    fs::create_dir_all(manifest_dir).map_err(Failure::internal)?;
    write_manifest(
        manifest_dir,
        "manifest_compare.txt",
        "compare",
        &[
            ("split".into(), args.split.clone()),
            ("models".into(), args.models.clone()),
        ],
        &inputs,
        Some(&full.to_text()),
    )
}

fn json_str(obj: &serde_json::Value, key: &str) -> Option<String> {
    obj.get(key).and_then(|v| v.as_str()).map(str::to_string)
}

fn json_date(obj: &serde_json::Value, key: &str, what: &str) -> CliResult<Date> {
    let raw = json_str(obj, key)
        .ok_or_else(|| Failure::input(anyhow!("{what}: missing field {key:?}")))?;
    Date::parse_iso(&raw)
        .ok_or_else(|| Failure::input(anyhow!("{what}: bad date {raw:?} in field {key:?}")))
}

/// Builds the prefix checkins and the target-context checkin from the
/// JSON array. Unknown cities, countries, and affiliates are allowed;
/// they map to the out-of-vocabulary index downstream.
fn parse_trip_json(raw: &str) -> CliResult<(Trip, Checkin)> {
    let value: serde_json::Value = serde_json::from_str(raw)
        .map_err(|e| Failure::input(anyhow!("parsing trip JSON: {e}")))?;
    let arr = value
        .as_array()
        .ok_or_else(|| Failure::input(anyhow!("trip JSON must be an array")))?;
    if arr.len() < 2 {
        return Err(Failure::input(anyhow!(
            "trip JSON needs at least one checkin plus the final target-context object"
        )));
    }

    let mut checkins = Vec::with_capacity(arr.len() - 1);
    for (i, obj) in arr[..arr.len() - 1].iter().enumerate() {
        let what = format!("checkin {i}");
        let require = |key: &str| -> CliResult<String> {
            json_str(obj, key)
                .ok_or_else(|| Failure::input(anyhow!("{what}: missing field {key:?}")))
        };
        checkins.push(Checkin {
            user_id: json_str(obj, "user_id").unwrap_or_default(),
            checkin: json_date(obj, "checkin", &what)?,
            checkout: json_date(obj, "checkout", &what)?,
            city_id: require("city_id")?,
            device_class: json_str(obj, "device_class").unwrap_or_default(),
            affiliate_id: json_str(obj, "affiliate_id").unwrap_or_default(),
            booker_country: require("booker_country")?,
            hotel_country: require("hotel_country")?,
            utrip_id: json_str(obj, "utrip_id").unwrap_or_else(|| "predict".into()),
        });
    }

    let ctx = &arr[arr.len() - 1];
    let what = "target context";
    let first = &checkins[0];
    // The city and hotel country of the target are what we predict; the
    // context object only carries the known attributes.
    let target = Checkin {
        user_id: first.user_id.clone(),
        checkin: json_date(ctx, "checkin", what)?,
        checkout: json_date(ctx, "checkout", what)?,
        city_id: String::new(),
        device_class: json_str(ctx, "device_class").unwrap_or_default(),
        affiliate_id: json_str(ctx, "affiliate_id").unwrap_or_default(),
        booker_country: json_str(ctx, "booker_country")
            .unwrap_or_else(|| first.booker_country.clone()),
        hotel_country: String::new(),
        utrip_id: first.utrip_id.clone(),
    };
    let trip = Trip {
        utrip_id: first.utrip_id.clone(),
        checkins,
    };
    Ok((trip, target))
}

fn cmd_predict(args: &PredictArgs) -> CliResult {
    let raw = if Path::new(&args.trip).exists() {
        fs::read_to_string(&args.trip).map_err(Failure::input)?
    } else {
        args.trip.clone()
    };
    let (prefix, target) = parse_trip_json(&raw)?;

    let (full, _) = load_config(args.config.as_deref())?;
    let data = load_data_dir(&args.data)?;
    let (model, store) = load_model(&data, &args.model)?;
    let stats = fit_epoch_stats(&data.train, &data.vocabs);
    let pipe = FeaturePipeline {
        vocabs: &data.vocabs,
        feature_cfg: &data.feature_cfg,
        candidate_cfg: &full.candidates,
        matrix: &stats.matrix,
        stats: &stats.stats,
    };
    let ranked = score_prefix(&model, &store, &prefix, &target, &pipe);
    for &(city, score) in ranked.iter().take(args.top) {
        let id = data.vocabs.city.value(city).unwrap_or("<unk>");
        println!("{id}\t{score:.6}");
    }

    let mut inputs = data.input_digests()?;
    inputs.push(("model".into(), sha256_hex(&args.model)?));
    let manifest_dir = args.out.as_deref().unwrap_or(&data.dir);
    fs::create_dir_all(manifest_dir).map_err(Failure::internal)?;
    write_manifest(
        manifest_dir,
        "manifest_predict.txt",
        "predict",
        &[("top".into(), args.top.to_string())],
        &inputs,
        Some(&full.to_text()),
    )
}
