//! Command-line pipeline: subsampling, training, prediction, evaluation,
//! and coupling inspection.
//!
//! Exit codes are fixed for scripting: 0 success, 2 usage or configuration
//! errors, 3 data errors (unreadable or misaligned files, schema mismatches,
//! missing couplings), 4 numeric failure during training. Training reads a
//! structured config file; every value there can be overridden by a flag,
//! and flags win. All outputs land under `--out` with fixed names, and every
//! command is deterministic given its arguments, so a rerun with the same
//! manifest reproduces identical files.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    self, read_conll, sample_low_resource, Corpus, CorpusError, MultiTaskSentence, SchemaSource,
    SplitSize, SplitSpec,
};
use crate::eval::{self, ComparisonReport, EvalError};
use crate::factorial::BpConfig;
use crate::features::FeatureConfig;
use crate::model::{load_model, save_model, ModelIoError, SavedModel, Tagger, Variant};
use crate::multihead::ModelError;
use crate::tagset::{MultiTaskSchema, TagsetError};
use crate::train::{
    multi_seed_protocol, train_model, Grid, ProtocolOptions, TrainConfig, TrainError,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TagsetError> for CliError {
    fn from(e: TagsetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelIoError> for CliError {
    fn from(e: ModelIoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            TrainError::InvalidConfig(_) | TrainError::EmptyGrid(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

fn io_data(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(
    name = "mtcrf",
    version,
    about = "Multi-task sequence tagging with coupled conditional random fields"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw nested low-resource training subsets and write one file per size.
    Split(SplitArgs),
    /// Run the multi-seed training protocol for one variant.
    Train(TrainArgs),
    /// Tag a file with a saved model, replacing its label columns.
    Predict(PredictArgs),
    /// Score a prediction file against gold and write the report.
    Evaluate(EvaluateArgs),
    /// Export one coupling matrix as positive/negative heatmap tables.
    InspectCoupling(InspectArgs),
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Training file to subsample (token<TAB>label... lines).
    #[arg(long)]
    train: PathBuf,
    /// Comma-separated subset sizes, e.g. "100,500,1000,full".
    #[arg(long)]
    sizes: String,
    /// Seed of the shared permutation; smaller subsets nest in larger ones.
    #[arg(long, default_value_t = 13)]
    seed: u64,
    /// Output directory; writes train.<size>.conll per size.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Config file with data paths and training settings.
    #[arg(long)]
    config: PathBuf,
    /// Model family: st, mh, fac, wfac, or cfac.
    #[arg(long)]
    variant: String,
    /// Output directory for the manifest, records, summaries, and models.
    #[arg(long)]
    out: PathBuf,
    /// Override: comma-separated run seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Override: maximum training epochs.
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Override: early-stopping patience in epochs.
    #[arg(long)]
    patience: Option<usize>,
    /// Override: mini-batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Override: base learning rate.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Override: comma-separated training-subset sizes.
    #[arg(long)]
    splits: Option<String>,
    /// Override: number of grid settings to sample.
    #[arg(long)]
    num_settings: Option<usize>,
    /// Override: base seed for grid sampling.
    #[arg(long)]
    setting_seed: Option<u64>,
    /// Override: seed of the subset permutation.
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Saved model file.
    #[arg(long)]
    model: PathBuf,
    /// Input file; its label columns are replaced by predictions.
    #[arg(long)]
    input: PathBuf,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Gold file.
    #[arg(long)]
    gold: PathBuf,
    /// Prediction file aligned with the gold file.
    #[arg(long)]
    pred: PathBuf,
    /// Schema file naming each task's labels and scheme.
    #[arg(long)]
    schema: PathBuf,
    /// Output directory; writes report.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// Saved model file of a coupled variant.
    #[arg(long)]
    model: PathBuf,
    /// Task pair "A,B": rows are B's labels, columns are A's.
    #[arg(long)]
    pair: String,
    /// Output directory; writes coupling_pos.csv and coupling_neg.csv.
    #[arg(long)]
    out: PathBuf,
}

/// Parses argv and runs one command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Split(args) => cmd_split(args),
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::InspectCoupling(args) => cmd_inspect_coupling(args),
    }
}

fn parse_sizes(text: &str) -> Result<Vec<SplitSize>, CliError> {
    let sizes: Vec<SplitSize> = text
        .split(',')
        .map(|s| SplitSize::from_str(s.trim()))
        .collect::<Result<_, _>>()
        .map_err(CliError::Usage)?;
    if sizes.is_empty() {
        return Err(CliError::Usage("no sizes given".to_string()));
    }
    Ok(sizes)
}

fn parse_seed_list(text: &str) -> Result<Vec<u64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| CliError::Usage(format!("invalid seed {:?}", s.trim())))
        })
        .collect()
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_data(dir, e))
}

fn cmd_split(args: SplitArgs) -> Result<(), CliError> {
    let sizes = parse_sizes(&args.sizes)?;
    let outcome = read_conll(&args.train, SchemaSource::Infer(Vec::new()))?;
    let subsets = sample_low_resource(
        &outcome.sentences,
        &SplitSpec {
            sizes: sizes.clone(),
            seed: args.seed,
        },
    )?;
    ensure_dir(&args.out)?;
    for (size, subset) in sizes.iter().zip(&subsets) {
        let path = args.out.join(format!("train.{size}.conll"));
        corpus::write_conll(&outcome.schema, subset, &path)?;
        println!("wrote {} ({} sentences)", path.display(), subset.len());
    }
    Ok(())
}

/// The config file. Every table is optional except `[data]`; missing values
/// fall back to library defaults, and command-line flags override the file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data: DataSection,
    #[serde(default)]
    training: TrainingSection,
    #[serde(default)]
    grid: GridSection,
    #[serde(default)]
    features: FeaturesSection,
    #[serde(default)]
    protocol: ProtocolSection,
    #[serde(default)]
    bp: BpSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    train: PathBuf,
    dev: PathBuf,
    test: PathBuf,
    /// Task names for the label columns, left to right. Missing names
    /// default to task1..taskJ.
    #[serde(default)]
    tasks: Vec<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainingSection {
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    clip_norm: Option<f64>,
    seeds: Option<Vec<u64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    hidden_dims: Option<Vec<usize>>,
    batch_sizes: Option<Vec<usize>>,
    num_layers: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeaturesSection {
    embedding_dim: Option<usize>,
    char_ngram_orders: Option<Vec<usize>>,
    hash_buckets: Option<usize>,
    window: Option<usize>,
    hidden_dim: Option<usize>,
    num_layers: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProtocolSection {
    splits: Option<Vec<String>>,
    split_seed: Option<u64>,
    num_settings: Option<usize>,
    setting_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BpSection {
    max_iterations: Option<usize>,
}

/// Reproducibility record written before any training starts.
#[derive(Debug, Serialize)]
struct RunManifest {
    config_path: String,
    data: DataSection,
    out_dir: String,
    variants: Vec<String>,
    seeds: Vec<u64>,
    train_config: TrainConfig,
    protocol: ProtocolOptions,
}

fn resolve_train(
    args: &TrainArgs,
    variant: Variant,
) -> Result<(DataSection, TrainConfig, ProtocolOptions), CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| io_data(&args.config, e))?;
    let file: FileConfig = toml::from_str(&text).map_err(|e| {
        CliError::Usage(format!("{}: {e}", args.config.display()))
    })?;

    let mut grid = Grid::default();
    if let Some(v) = file.grid.hidden_dims {
        grid.hidden_dims = v;
    }
    if let Some(v) = file.grid.batch_sizes {
        grid.batch_sizes = v;
    }
    if let Some(v) = file.grid.num_layers {
        grid.num_layers = v;
    }

    let mut feature = FeatureConfig::default();
    if let Some(v) = file.features.embedding_dim {
        feature.embedding_dim = v;
    }
    if let Some(v) = file.features.char_ngram_orders {
        feature.char_ngram_orders = v;
    }
    if let Some(v) = file.features.hash_buckets {
        feature.hash_buckets = v;
    }
    if let Some(v) = file.features.window {
        feature.window = v;
    }
    if let Some(v) = file.features.hidden_dim {
        feature.hidden_dim = v;
    }
    if let Some(v) = file.features.num_layers {
        feature.num_layers = v;
    }

    let mut config = TrainConfig {
        grid,
        feature,
        variant,
        ..TrainConfig::default()
    };
    if let Some(v) = file.training.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = file.training.max_epochs {
        config.max_epochs = v;
    }
    if let Some(v) = file.training.patience {
        config.patience = v;
    }
    if let Some(v) = file.training.clip_norm {
        config.clip_norm = v;
    }
    if let Some(v) = file.training.seeds {
        config.seeds = v;
    }
    match file.training.batch_size {
        Some(v) => config.batch_size = v,
        // Keep the default batch size consistent with a narrowed grid.
        None if !config.grid.batch_sizes.contains(&config.batch_size) => {
            config.batch_size = config.grid.batch_sizes[0];
        }
        None => {}
    }

    let mut options = ProtocolOptions {
        variants: vec![variant],
        ..ProtocolOptions::default()
    };
    if let Some(v) = &file.protocol.splits {
        options.splits = parse_sizes(&v.join(","))?;
    }
    if let Some(v) = file.protocol.split_seed {
        options.split_seed = v;
    }
    if let Some(v) = file.protocol.num_settings {
        options.num_settings = v;
    }
    if let Some(v) = file.protocol.setting_seed {
        options.setting_seed = v;
    }
    if let Some(v) = file.bp.max_iterations {
        options.bp = BpConfig {
            max_iterations: v,
            ..BpConfig::default()
        };
    }

    // Flags win over the file.
    if let Some(v) = &args.seeds {
        config.seeds = parse_seed_list(v)?;
    }
    if let Some(v) = args.max_epochs {
        config.max_epochs = v;
    }
    if let Some(v) = args.patience {
        config.patience = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = &args.splits {
        options.splits = parse_sizes(v)?;
    }
    if let Some(v) = args.num_settings {
        options.num_settings = v;
    }
    if let Some(v) = args.setting_seed {
        options.setting_seed = v;
    }
    if let Some(v) = args.split_seed {
        options.split_seed = v;
    }
    Ok((file.data, config, options))
}

fn read_corpus(data: &DataSection) -> Result<Corpus, CliError> {
    let train = read_conll(&data.train, SchemaSource::Infer(data.tasks.clone()))?;
    let dev = read_conll(&data.dev, SchemaSource::Fixed(&train.schema))?;
    let test = read_conll(&data.test, SchemaSource::Fixed(&train.schema))?;
    Ok(Corpus::new(
        train.schema,
        train.sentences,
        dev.sentences,
        test.sentences,
    )?)
}

fn model_file_name(variant: Variant, task: Option<&str>) -> String {
    match task {
        Some(name) => format!("model.{name}.bin"),
        None => {
            debug_assert!(!variant.is_single_task());
            "model.bin".to_string()
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let variant = Variant::from_str(&args.variant).map_err(|e| CliError::Usage(e.to_string()))?;
    let (data, config, options) = resolve_train(&args, variant)?;
    ensure_dir(&args.out)?;

    let manifest = RunManifest {
        config_path: args.config.display().to_string(),
        data: data.clone(),
        out_dir: args.out.display().to_string(),
        variants: vec![variant.to_string()],
        seeds: config.seeds.clone(),
        train_config: config.clone(),
        protocol: options.clone(),
    };
    let manifest_path = args.out.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )
    .map_err(|e| io_data(&manifest_path, e))?;

    let corpus = read_corpus(&data)?;
    let schema_path = args.out.join("schema.toml");
    corpus.schema.write_file(&schema_path)?;

    let outcome = multi_seed_protocol(&corpus, &options, &config)?;

    for record in &outcome.records {
        let scope = record.task.as_deref().unwrap_or("joint");
        let setting = format!(
            "h{}b{}l{}",
            record.setting.hidden_dim, record.setting.batch_size, record.setting.num_layers
        );
        let dir = args
            .out
            .join("records")
            .join(record.variant.to_string())
            .join(&record.split)
            .join(scope)
            .join(setting)
            .join(format!("seed{}", record.seed));
        ensure_dir(&dir)?;
        let path = dir.join("run_record.json");
        std::fs::write(
            &path,
            serde_json::to_string_pretty(record).expect("record serializes") + "\n",
        )
        .map_err(|e| io_data(&path, e))?;
    }

    let report = ComparisonReport::from_points(&outcome.points)?;
    let writes = [
        ("summary.csv", report.to_csv()),
        ("summary.txt", report.to_text()),
        (
            "learning_curve.csv",
            ComparisonReport::learning_curve_csv(&outcome.points),
        ),
    ];
    for (name, content) in writes {
        let path = args.out.join(name);
        std::fs::write(&path, content).map_err(|e| io_data(&path, e))?;
    }

    // Final models: retrain the selected setting on the last split with the
    // first seed. Deterministic, so this reproduces the recorded run.
    let last_split = options
        .splits
        .last()
        .ok_or_else(|| CliError::Usage("no splits requested".to_string()))?
        .to_string();
    let subsets = sample_low_resource(
        &corpus.train,
        &SplitSpec {
            sizes: options.splits.clone(),
            seed: options.split_seed,
        },
    )?;
    let last_corpus = Corpus {
        schema: corpus.schema.clone(),
        train: subsets.last().unwrap().clone(),
        dev: corpus.dev.clone(),
        test: corpus.test.clone(),
    };
    let scopes: Vec<Option<String>> = if variant.is_single_task() {
        corpus
            .schema
            .tasks
            .iter()
            .map(|t| Some(t.name.clone()))
            .collect()
    } else {
        vec![None]
    };
    let seed = config.seeds[0];
    for scope in scopes {
        let chosen = outcome
            .records
            .iter()
            .find(|r| r.selected && r.split == last_split && r.task.as_deref() == scope.as_deref())
            .expect("protocol selected a setting");
        let run_corpus = match &scope {
            Some(name) => {
                let j = corpus.schema.task_index(name).expect("known task");
                last_corpus.project_task(j)
            }
            None => last_corpus.clone(),
        };
        let mut final_config = config.with_choice(chosen.setting);
        final_config.variant = variant;
        final_config.feature.seed = seed;
        let mut tagger = Tagger::from_corpus(
            variant,
            &final_config.feature,
            &run_corpus.schema,
            &run_corpus.train,
            options.bp,
        );
        train_model(&mut tagger, &run_corpus, &final_config, seed)?;
        let saved = SavedModel {
            schema: run_corpus.schema.clone(),
            variant,
            tagger,
            config: serde_json::to_value(&final_config).expect("config serializes"),
        };
        let path = args.out.join(model_file_name(variant, scope.as_deref()));
        save_model(&saved, &path)?;
        println!("wrote {}", path.display());
    }
    println!("wrote {}", manifest_path.display());
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    let saved = load_model(&args.model)?;
    let input = read_conll(&args.input, SchemaSource::Fixed(&saved.schema))?;
    let tagged: Vec<MultiTaskSentence> = input
        .sentences
        .into_iter()
        .map(|s| {
            let gold = saved.tagger.predict(&s.tokens);
            MultiTaskSentence {
                tokens: s.tokens,
                gold,
            }
        })
        .collect();
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    corpus::write_conll(&saved.schema, &tagged, &args.out)?;
    println!("wrote {} ({} sentences)", args.out.display(), tagged.len());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let schema = MultiTaskSchema::read_file(&args.schema)?;
    let gold = read_conll(&args.gold, SchemaSource::Fixed(&schema))?;
    let pred = read_conll(&args.pred, SchemaSource::Fixed(&schema))?;
    let labels: Vec<Vec<Vec<crate::tagset::LabelId>>> =
        pred.sentences.into_iter().map(|s| s.gold).collect();
    let report = eval::evaluate(&schema, &gold.sentences, &labels)?;
    ensure_dir(&args.out)?;
    let path = args.out.join("report.csv");
    let csv = report.to_csv();
    std::fs::write(&path, &csv).map_err(|e| io_data(&path, e))?;
    print!("{csv}");
    Ok(())
}

fn cmd_inspect_coupling(args: InspectArgs) -> Result<(), CliError> {
    let parts: Vec<&str> = args.pair.split(',').map(str::trim).collect();
    let [task_a, task_b] = parts.as_slice() else {
        return Err(CliError::Usage(format!(
            "--pair expects two comma-separated task names, got {:?}",
            args.pair
        )));
    };
    let saved = load_model(&args.model)?;
    let model = match &saved.tagger {
        Tagger::Factorial(m) => m,
        Tagger::MultiHead(_) => {
            return Err(CliError::Data(format!(
                "model {} is a multi-head variant and has no couplings",
                args.model.display()
            )));
        }
    };
    ensure_dir(&args.out)?;
    let (pos, neg) = eval::export_coupling_heatmap(model, &saved.schema, task_a, task_b, &args.out)?;
    println!("wrote {}", pos.display());
    println!("wrote {}", neg.display());
    Ok(())
}
