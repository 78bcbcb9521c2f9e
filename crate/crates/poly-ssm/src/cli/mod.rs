//! Command-line front end. Every run resolves its configuration from
//! flags, an optional JSON file, and a seed fallback chain, writes a
//! manifest echoing the fully resolved result, and emits artifacts that
//! embed the seed and a configuration hash. Re-running a manifest
//! reproduces every artifact byte for byte; the output directory is not
//! part of the configuration, so reproduction works from any location.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::construct::{
    construct_monomial_model, construct_polynomial_model, stack_to_json, verify_construction,
    MonomialSpec,
};
use crate::datasets::{
    generate_count_in_row, generate_regression, load_dataset, sample_random_poly_task,
    save_dataset, Dataset,
};
use crate::error::{Error, Result};
use crate::genbound::{
    bound_length_sweep, evaluate_bound, norm_profile, BoundInputs, ClassifierWeights, NormProfile,
};
use crate::layers::{AttentionWeights, S6Variant, S6Weights};
use crate::numerics::{Matrix, Rng};
use crate::polyalg::{
    attention_layer_symbolic, extract_attention_poly, extract_lti_ssm_poly,
    extract_s6_channel_poly, poly_from_json, poly_to_json, Monomial, MultiPoly,
};
use crate::trainer::{
    grad_check_lti, grad_check_mamba_block, grad_check_model, metrics_csv, train, AdamConfig,
    HeadConfig, LossKind, ModelConfig, SupervisedData, TrainConfig, GRAD_CHECK_EPSILON,
    GRAD_CHECK_TOL,
};

/// Environment variable consulted when neither a flag nor a manifest
/// provides the seed. The final fallback is 0.
pub const SEED_ENV: &str = "POLY_SSM_SEED";

/// Entry point for the binary: parses process arguments and returns the
/// exit code. 0 is success, 1 a contract violation, 2 a usage error.
pub fn main_from_env() -> i32 {
    run_cli(std::env::args_os())
}

/// In-process runner behind [`main_from_env`]; tests drive the whole
/// binary through this without spawning a process.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap reports --help and --version through Err; both are
            // successful outcomes, not usage errors.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Parser)]
#[command(
    name = "poly-ssm",
    version,
    about = "Expressivity laboratory for selective state-space sequence layers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a train/test dataset pair as JSON lines.
    Data(DataArgs),
    /// Train one model; writes metrics, weights, and a summary.
    Train(TrainArgs),
    /// Unroll a layer into its exact output polynomial and report degrees.
    Extract(ExtractArgs),
    /// Compile a monomial or polynomial into gated blocks and verify it.
    Construct(ConstructArgs),
    /// Evaluate the generalization certificate, optionally across lengths.
    Bound(BoundArgs),
    /// Compare analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Train a grid of configurations and summarize one row per config.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON parameter file, or a previous run's manifest.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base seed; defaults to the manifest seed, then $POLY_SSM_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory artifacts are written into; never part of the config hash.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Task family: count_in_row or regression.
    #[arg(long)]
    task: Option<String>,
    /// Sequence length.
    #[arg(long = "L")]
    l: Option<usize>,
    /// Training split size.
    #[arg(long)]
    n_train: Option<usize>,
    /// Test split size.
    #[arg(long)]
    n_test: Option<usize>,
    /// Exact class balance for count-in-row.
    #[arg(long)]
    balanced: Option<bool>,
    /// Standardize regression targets with training-split statistics.
    #[arg(long)]
    standardize: Option<bool>,
    /// Seed of the sampled regression target polynomial.
    #[arg(long)]
    task_seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Training split path (JSON lines).
    #[arg(long, value_name = "PATH")]
    train_data: Option<String>,
    /// Test split path (JSON lines).
    #[arg(long, value_name = "PATH")]
    test_data: Option<String>,
    /// Number of passes over the training split.
    #[arg(long)]
    epochs: Option<usize>,
    /// Minibatch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Layer to unroll: s6, linear_attention, lti, or attention_stack.
    #[arg(long)]
    layer: Option<String>,
    /// Sequence length.
    #[arg(long = "L")]
    l: Option<usize>,
    /// Weight source: unit or random.
    #[arg(long)]
    weights: Option<String>,
    /// Depth of the stacked linear-attention unroll.
    #[arg(long)]
    stack: Option<usize>,
}

#[derive(Args)]
struct ConstructArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Monomial target, written j=<var>,P=<power>,c=<coeff>.
    #[arg(long, value_name = "SPEC")]
    monomial: Option<String>,
    /// Path to a polynomial JSON target.
    #[arg(long, value_name = "PATH")]
    target: Option<String>,
    /// Input length the stack is built for.
    #[arg(long = "L")]
    l: Option<usize>,
    /// Number of random inputs the certificate evaluates.
    #[arg(long)]
    verify: Option<usize>,
    /// Sampling box for verification, written lo,hi.
    #[arg(long = "box", value_name = "LO,HI", allow_hyphen_values = true)]
    bounds: Option<String>,
}

#[derive(Args)]
struct BoundArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Path to classifier weights JSON; the norm profile is computed.
    #[arg(long, value_name = "PATH")]
    weights: Option<String>,
    /// Contraction constant K in (0, 1).
    #[arg(long)]
    k: Option<f64>,
    /// Margin the classifier is held to.
    #[arg(long)]
    gamma: Option<f64>,
    /// Confidence level delta.
    #[arg(long)]
    delta: Option<f64>,
    /// Sample count.
    #[arg(long)]
    m: Option<usize>,
    /// Channel count.
    #[arg(long = "D")]
    d: Option<usize>,
    /// State size per channel.
    #[arg(long = "N")]
    n: Option<usize>,
    /// Sequence length.
    #[arg(long = "L")]
    l: Option<usize>,
    /// Number of classes.
    #[arg(long = "C")]
    c: Option<usize>,
    /// Frobenius norm of the stacked input data.
    #[arg(long)]
    data_norm: Option<f64>,
    /// Lengths for a sweep CSV, written 16,32,64.
    #[arg(long, value_name = "LIST")]
    lengths: Option<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// What to check: model, mamba_block, or lti.
    #[arg(long)]
    target: Option<String>,
    /// Sequence length.
    #[arg(long = "L")]
    l: Option<usize>,
    /// Channel count for mamba_block.
    #[arg(long = "D")]
    d: Option<usize>,
    /// State size for mamba_block or lti.
    #[arg(long = "N")]
    n: Option<usize>,
    /// Central-difference step size.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Number of random initializations, seeded seed, seed+1, ...
    #[arg(long)]
    checks: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Training split path (JSON lines).
    #[arg(long, value_name = "PATH")]
    train_data: Option<String>,
    /// Test split path (JSON lines).
    #[arg(long, value_name = "PATH")]
    test_data: Option<String>,
    /// Number of passes over the training split.
    #[arg(long)]
    epochs: Option<usize>,
    /// Minibatch size.
    #[arg(long)]
    batch_size: Option<usize>,
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Data(a) => run_data(a),
        Command::Train(a) => run_train(a),
        Command::Extract(a) => run_extract(a),
        Command::Construct(a) => run_construct(a),
        Command::Bound(a) => run_bound(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Sweep(a) => run_sweep(a),
    }
}

fn usage(message: impl Into<String>) -> Error {
    Error::Usage {
        message: message.into(),
    }
}

/// A manifest is recognized by its "command" key; bare parameter files
/// have none. Extra top-level keys in a manifest are ignored, the stored
/// hash among them: it is recomputed from the content, never trusted.
#[derive(Deserialize)]
struct ManifestIn {
    command: String,
    seed: u64,
    params: Value,
}

/// Loads the config file if given and resolves the seed. Precedence:
/// the --seed flag, then a manifest's recorded seed, then $POLY_SSM_SEED,
/// then 0. The returned params are always a JSON object.
fn resolve_config(common: &CommonArgs, command: &str) -> Result<(u64, Value)> {
    let mut file_seed = None;
    let mut params = json!({});
    if let Some(path) = &common.config {
        let text = read_text(path)?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        if !value.is_object() {
            return Err(usage(format!(
                "config {} must be a JSON object",
                path.display()
            )));
        }
        if value.get("command").is_some() {
            let manifest: ManifestIn = serde_json::from_value(value)
                .map_err(|e| usage(format!("manifest {}: {e}", path.display())))?;
            if manifest.command != command {
                return Err(usage(format!(
                    "manifest {} records a '{}' run, but the invoked command is '{command}'",
                    path.display(),
                    manifest.command
                )));
            }
            if !manifest.params.is_object() {
                return Err(usage(format!(
                    "manifest {}: params must be a JSON object",
                    path.display()
                )));
            }
            file_seed = Some(manifest.seed);
            params = manifest.params;
        } else {
            params = value;
        }
    }
    let seed = match (common.seed, file_seed) {
        (Some(s), _) => s,
        (None, Some(s)) => s,
        (None, None) => env_seed()?,
    };
    Ok((seed, params))
}

fn env_seed() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(text) => text.trim().parse().map_err(|_| {
            usage(format!(
                "{SEED_ENV} must be an unsigned integer, got '{text}'"
            ))
        }),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(usage(format!("{SEED_ENV}: {e}"))),
    }
}

/// Writes a flag value over the config-file value of the same key.
fn set_key(params: &mut Value, key: &str, value: Option<Value>) {
    if let Some(v) = value {
        params
            .as_object_mut()
            .expect("resolve_config returns an object")
            .insert(key.to_string(), v);
    }
}

/// As [`set_key`] for one level of nesting, creating the intermediate
/// object if the config file omitted it.
fn set_nested(params: &mut Value, outer: &str, key: &str, value: Option<Value>) {
    if let Some(v) = value {
        let obj = params
            .as_object_mut()
            .expect("resolve_config returns an object");
        let inner = obj.entry(outer.to_string()).or_insert_with(|| json!({}));
        if !inner.is_object() {
            *inner = json!({});
        }
        inner
            .as_object_mut()
            .expect("just ensured an object")
            .insert(key.to_string(), v);
    }
}

fn parse_params<T: serde::de::DeserializeOwned>(command: &str, params: Value) -> Result<T> {
    serde_json::from_value(params).map_err(|e| usage(format!("{command} parameters: {e}")))
}

/// FNV-1a over the canonical JSON of command, seed, and resolved
/// parameters. serde_json orders object keys, so the text is canonical;
/// the output directory stays out because where artifacts land does not
/// change what they are.
fn config_hash<P: Serialize>(command: &str, seed: u64, params: &P) -> String {
    let canon = json!({ "command": command, "seed": seed, "params": params });
    let text = serde_json::to_string(&canon).expect("config serializes");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    format!("{h:016x}")
}

fn write_manifest<P: Serialize>(
    out_dir: &Path,
    command: &str,
    seed: u64,
    hash: &str,
    params: &P,
) -> Result<()> {
    let manifest = json!({
        "command": command,
        "seed": seed,
        "config_hash": hash,
        "params": params,
    });
    write_json(&out_dir.join("manifest.json"), &manifest)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_text(path, &text)
}

/// Adds the seed and config hash into a tool-produced JSON object without
/// disturbing its shape, so the file stays readable by its own parser.
fn embed_identity(text: &str, seed: u64, hash: &str) -> String {
    let mut value: Value = serde_json::from_str(text).expect("tool-produced JSON parses");
    let obj = value
        .as_object_mut()
        .expect("tool-produced JSON is an object");
    obj.insert("seed".to_string(), json!(seed));
    obj.insert("config_hash".to_string(), json!(hash));
    let mut out = serde_json::to_string_pretty(&value).expect("artifact serializes");
    out.push('\n');
    out
}

fn csv_identity_line(seed: u64, hash: &str) -> String {
    format!("# seed={seed} config_hash={hash}\n")
}

fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Loads a dataset split and pairs it with the loss its labels call for.
fn load_supervised(path: &str) -> Result<(SupervisedData, LossKind)> {
    match load_dataset(path)? {
        Dataset::CountInRow(d) => Ok((
            SupervisedData::from_count_in_row(&d)?,
            LossKind::CrossEntropy,
        )),
        Dataset::Regression(d) => Ok((SupervisedData::from_regression(&d)?, LossKind::Mse)),
    }
}

fn head_matches_loss(head: &HeadConfig, loss: LossKind) -> bool {
    matches!(
        (head, loss),
        (HeadConfig::Classification { .. }, LossKind::CrossEntropy)
            | (HeadConfig::Regression, LossKind::Mse)
    )
}

fn default_true() -> bool {
    true
}

// data --------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TaskKind {
    CountInRow,
    Regression,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataParams {
    task: TaskKind,
    #[serde(rename = "L")]
    l: usize,
    n_train: usize,
    n_test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    balanced: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    standardize: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    task_seed: Option<u64>,
}

fn run_data(args: DataArgs) -> Result<()> {
    let (seed, mut params) = resolve_config(&args.common, "data")?;
    set_key(&mut params, "task", args.task.map(Value::from));
    set_key(&mut params, "L", args.l.map(|v| json!(v)));
    set_key(&mut params, "n_train", args.n_train.map(|v| json!(v)));
    set_key(&mut params, "n_test", args.n_test.map(|v| json!(v)));
    set_key(&mut params, "balanced", args.balanced.map(Value::from));
    set_key(&mut params, "standardize", args.standardize.map(Value::from));
    set_key(&mut params, "task_seed", args.task_seed.map(|v| json!(v)));
    let mut p: DataParams = parse_params("data", params)?;

    match p.task {
        TaskKind::CountInRow => {
            if p.standardize.is_some() || p.task_seed.is_some() {
                return Err(usage(
                    "standardize and task_seed apply to the regression task only",
                ));
            }
            p.balanced.get_or_insert(true);
        }
        TaskKind::Regression => {
            if p.balanced.is_some() {
                return Err(usage("balanced applies to the count-in-row task only"));
            }
            p.standardize.get_or_insert(true);
            p.task_seed.get_or_insert(seed);
        }
    }

    let hash = config_hash("data", seed, &p);
    let out_dir = &args.common.out_dir;
    create_out_dir(out_dir)?;
    write_manifest(out_dir, "data", seed, &hash, &p)?;

    let (train_split, test_split) = match p.task {
        TaskKind::CountInRow => {
            let balanced = p.balanced.expect("resolved above");
            let train = generate_count_in_row(p.n_train, p.l, seed, balanced)?;
            let test = generate_count_in_row(p.n_test, p.l, seed.wrapping_add(1), balanced)?;
            (Dataset::CountInRow(train), Dataset::CountInRow(test))
        }
        TaskKind::Regression => {
            let standardize = p.standardize.expect("resolved above");
            let (task, _) = sample_random_poly_task(p.l, p.task_seed.expect("resolved above"))?;
            let train = generate_regression(&task, p.n_train, seed, standardize)?;
            let mut test = generate_regression(&task, p.n_test, seed.wrapping_add(1), false)?;
            if standardize {
                let stats = train.stats.expect("standardized split carries stats");
                test.apply_stats(stats)?;
            }
            (Dataset::Regression(train), Dataset::Regression(test))
        }
    };
    save_dataset(out_dir.join("train.jsonl"), &train_split)?;
    save_dataset(out_dir.join("test.jsonl"), &test_split)?;
    println!(
        "wrote {} train and {} test sequences of length {}",
        train_split.len(),
        test_split.len(),
        p.l
    );
    Ok(())
}

// train -------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainParams {
    model: ModelConfig,
    train_data: String,
    test_data: String,
    epochs: usize,
    #[serde(default = "crate::trainer::default_batch_size")]
    batch_size: usize,
    #[serde(default)]
    adam: AdamConfig,
}

fn run_train(args: TrainArgs) -> Result<()> {
    let (seed, mut params) = resolve_config(&args.common, "train")?;
    set_key(&mut params, "train_data", args.train_data.map(Value::from));
    set_key(&mut params, "test_data", args.test_data.map(Value::from));
    set_key(&mut params, "epochs", args.epochs.map(|v| json!(v)));
    set_key(&mut params, "batch_size", args.batch_size.map(|v| json!(v)));
    set_nested(&mut params, "adam", "lr", args.lr.map(Value::from));
    let p: TrainParams = parse_params("train", params)?;

    let hash = config_hash("train", seed, &p);
    let out_dir = &args.common.out_dir;
    create_out_dir(out_dir)?;
    write_manifest(out_dir, "train", seed, &hash, &p)?;

    let (train_sd, loss) = load_supervised(&p.train_data)?;
    let (test_sd, test_loss) = load_supervised(&p.test_data)?;
    if !head_matches_loss(&p.model.head, test_loss) || !head_matches_loss(&p.model.head, loss) {
        return Err(Error::InvalidInput {
            reason: "model head and dataset task disagree".to_string(),
        });
    }
    train_sd.check_against(&p.model.head)?;
    test_sd.check_against(&p.model.head)?;

    let train_cfg = TrainConfig {
        adam: p.adam,
        batch_size: p.batch_size,
        epochs: p.epochs,
        seed,
        loss,
    };
    let (model, metrics) = train(&p.model, &train_cfg, &train_sd, &test_sd)?;

    let mut csv = csv_identity_line(seed, &hash);
    csv.push_str(&metrics_csv(&hash, seed, &metrics));
    write_text(&out_dir.join("metrics.csv"), &csv)?;
    write_text(
        &out_dir.join("weights.json"),
        &embed_identity(&model.to_json(), seed, &hash),
    )?;
    write_json(
        &out_dir.join("summary.json"),
        &json!({
            "seed": seed,
            "config_hash": hash,
            "epochs": p.epochs,
            "best_epoch": metrics.best_epoch,
            "final_metric": metrics.final_metric,
            "parameter_count": metrics.parameter_count,
        }),
    )?;
    println!(
        "trained {} epochs; best epoch {}, test metric {:?}",
        p.epochs, metrics.best_epoch, metrics.final_metric
    );
    Ok(())
}

// extract -----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LayerKind {
    S6,
    LinearAttention,
    Lti,
    AttentionStack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum WeightsSource {
    Unit,
    Random,
}

fn default_weights_source() -> WeightsSource {
    WeightsSource::Unit
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtractParams {
    layer: LayerKind,
    #[serde(rename = "L")]
    l: usize,
    #[serde(default = "default_weights_source")]
    weights: WeightsSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stack: Option<usize>,
}

/// Scalar weight for the unrolled layers. Random draws keep their
/// magnitude away from zero so the top-degree coefficient survives and
/// the reported degree is the generic one.
fn extract_scalar(source: WeightsSource, rng: &mut Rng) -> f64 {
    match source {
        WeightsSource::Unit => 1.0,
        WeightsSource::Random => {
            let magnitude = rng.range(0.25, 1.75);
            if rng.range(-1.0, 1.0) < 0.0 {
                -magnitude
            } else {
                magnitude
            }
        }
    }
}

fn scalar_matrix(source: WeightsSource, rng: &mut Rng) -> Matrix {
    let v = extract_scalar(source, rng);
    Matrix::from_fn(1, 1, |_, _| v)
}

const DEGREE_NOTE: &str = "At the last position the selective channel's unroll reaches total \
degree L + 2: the readout gate, the injection gate, and the injected input each contribute \
one, and the recurrence applies a transition gate at the L - 1 positions after the injection. \
Counting a transition gate at the injection position as well yields the looser figure L + 3; \
the extractor reports the exact count.";

fn run_extract(args: ExtractArgs) -> Result<()> {
    let (seed, mut params) = resolve_config(&args.common, "extract")?;
    set_key(&mut params, "layer", args.layer.map(Value::from));
    set_key(&mut params, "L", args.l.map(|v| json!(v)));
    set_key(&mut params, "weights", args.weights.map(Value::from));
    set_key(&mut params, "stack", args.stack.map(|v| json!(v)));
    let mut p: ExtractParams = parse_params("extract", params)?;

    if p.l == 0 {
        return Err(usage("L must be at least 1"));
    }
    if p.layer == LayerKind::AttentionStack {
        let depth = *p.stack.get_or_insert(2);
        if !(1..=8).contains(&depth) {
            return Err(usage("stack depth must lie in 1..=8"));
        }
    } else if p.stack.is_some() {
        return Err(usage("stack applies to the attention_stack layer only"));
    }

    let hash = config_hash("extract", seed, &p);
    let out_dir = &args.common.out_dir;
    create_out_dir(out_dir)?;
    write_manifest(out_dir, "extract", seed, &hash, &p)?;

    let mut rng = Rng::new(seed).derive(0xec_17);
    let poly = match p.layer {
        LayerKind::S6 => {
            let w = S6Weights::new(
                scalar_matrix(p.weights, &mut rng),
                scalar_matrix(p.weights, &mut rng),
                scalar_matrix(p.weights, &mut rng),
                scalar_matrix(p.weights, &mut rng),
            )?;
            let mut channels = extract_s6_channel_poly(&w, p.l)?;
            channels.pop().expect("one channel at D = 1")
        }
        LayerKind::LinearAttention => {
            let w = AttentionWeights::new(
                scalar_matrix(p.weights, &mut rng),
                scalar_matrix(p.weights, &mut rng),
                scalar_matrix(p.weights, &mut rng),
                1.0,
            )?;
            extract_attention_poly(&w, p.l)?
        }
        LayerKind::Lti => {
            let abar = extract_scalar(p.weights, &mut rng);
            let bbar = extract_scalar(p.weights, &mut rng);
            let c = extract_scalar(p.weights, &mut rng);
            extract_lti_ssm_poly(abar, bbar, c, p.l)
        }
        LayerKind::AttentionStack => {
            let depth = p.stack.expect("resolved above");
            let mut polys: Vec<MultiPoly> = (1..=p.l)
                .map(|i| {
                    let mut var = MultiPoly::zero(p.l);
                    var.add_term(Monomial::from_pairs(&[(i as u32, 1)]), 1.0);
                    var
                })
                .collect();
            for _ in 0..depth {
                let w = AttentionWeights::new(
                    scalar_matrix(p.weights, &mut rng),
                    scalar_matrix(p.weights, &mut rng),
                    scalar_matrix(p.weights, &mut rng),
                    1.0,
                )?;
                polys = attention_layer_symbolic(&polys, &w)?;
            }
            polys.pop().expect("one poly per position")
        }
    };

    let stats = poly.stats();
    write_text(
        &out_dir.join("polynomial.json"),
        &embed_identity(&poly_to_json(&poly)?, seed, &hash),
    )?;

    let mut reference = json!({
        "s6_last_position": p.l + 2,
        "linear_attention": 3,
        "lti": 1,
    });
    if let Some(depth) = p.stack {
        reference["stacked_linear_attention_max"] = json!(3u64.pow(depth as u32));
    }
    write_json(
        &out_dir.join("degree_report.json"),
        &json!({
            "seed": seed,
            "config_hash": hash,
            "layer": p.layer,
            "L": p.l,
            "weights": p.weights,
            "stack": p.stack,
            "max_total_degree": stats.max_total_degree,
            "n_monomials": stats.n_monomials,
            "reference_degrees": reference,
            "note": DEGREE_NOTE,
        }),
    )?;
    println!(
        "max total degree {} over {} monomials",
        stats.max_total_degree, stats.n_monomials
    );
    Ok(())
}

// construct ---------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MonomialParams {
    j: usize,
    #[serde(rename = "P")]
    p: u32,
    c: f64,
}

fn default_verify_draws() -> usize {
    200
}

fn default_box() -> [f64; 2] {
    [-1.0, 1.0]
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstructParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    monomial: Option<MonomialParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<String>,
    #[serde(rename = "L")]
    l: usize,
    #[serde(default = "default_verify_draws")]
    verify: usize,
    #[serde(rename = "box", default = "default_box")]
    bounds: [f64; 2],
}

fn parse_monomial_flag(text: &str) -> Result<Value> {
    let mut out = serde_json::Map::new();
    for part in text.split(',') {
        let (key, raw) = part.split_once('=').ok_or_else(|| {
            usage(format!(
                "monomial spec '{text}' must be written j=<var>,P=<power>,c=<coeff>"
            ))
        })?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = match key {
            "j" => json!(raw
                .parse::<u64>()
                .map_err(|_| usage(format!("monomial variable index '{raw}' is not an integer")))?),
            "P" => json!(raw
                .parse::<u64>()
                .map_err(|_| usage(format!("monomial power '{raw}' is not an integer")))?),
            "c" => json!(raw
                .parse::<f64>()
                .map_err(|_| usage(format!("monomial coefficient '{raw}' is not a number")))?),
            other => return Err(usage(format!("unknown monomial field '{other}'"))),
        };
        out.insert(key.to_string(), value);
    }
    Ok(Value::Object(out))
}

fn parse_box_flag(text: &str) -> Result<Value> {
    let parts: Vec<&str> = text.split(',').collect();
    let [lo, hi] = parts.as_slice() else {
        return Err(usage(format!("box '{text}' must be written lo,hi")));
    };
    let lo: f64 = lo
        .trim()
        .parse()
        .map_err(|_| usage(format!("box lower bound '{lo}' is not a number")))?;
    let hi: f64 = hi
        .trim()
        .parse()
        .map_err(|_| usage(format!("box upper bound '{hi}' is not a number")))?;
    Ok(json!([lo, hi]))
}

fn run_construct(args: ConstructArgs) -> Result<()> {
    let (seed, mut params) = resolve_config(&args.common, "construct")?;
    let monomial = args.monomial.as_deref().map(parse_monomial_flag).transpose()?;
    let bounds = args.bounds.as_deref().map(parse_box_flag).transpose()?;
    set_key(&mut params, "monomial", monomial);
    set_key(&mut params, "target", args.target.map(Value::from));
    set_key(&mut params, "L", args.l.map(|v| json!(v)));
    set_key(&mut params, "verify", args.verify.map(|v| json!(v)));
    set_key(&mut params, "box", bounds);
    let p: ConstructParams = parse_params("construct", params)?;

    match (&p.monomial, &p.target) {
        (Some(_), Some(_)) => {
            return Err(usage("monomial and target are mutually exclusive"));
        }
        (None, None) => {
            return Err(usage("construct needs a monomial spec or a target file"));
        }
        _ => {}
    }
    if p.verify == 0 {
        return Err(usage("verify needs at least one draw"));
    }
    if !(p.bounds[0].is_finite() && p.bounds[1].is_finite() && p.bounds[0] < p.bounds[1]) {
        return Err(usage("box must be a finite interval with lo < hi"));
    }

    let hash = config_hash("construct", seed, &p);
    let out_dir = &args.common.out_dir;
    create_out_dir(out_dir)?;
    write_manifest(out_dir, "construct", seed, &hash, &p)?;

    let (stack, target_poly) = match (&p.monomial, &p.target) {
        (Some(m), None) => {
            let spec = MonomialSpec::new(m.j, m.p, m.c)?;
            let stack = construct_monomial_model(&spec, p.l)?;
            let n_vars = p.l.max(m.j);
            let mut target = MultiPoly::zero(n_vars);
            target.add_term(Monomial::from_pairs(&[(m.j as u32, m.p)]), m.c);
            (stack, target)
        }
        (None, Some(path)) => {
            let target = poly_from_json(&read_text(Path::new(path))?)?;
            let stack = construct_polynomial_model(&target, p.l)?;
            (stack, target)
        }
        _ => unreachable!("validated above"),
    };

    let report = verify_construction(
        &stack,
        &target_poly,
        p.verify,
        (p.bounds[0], p.bounds[1]),
        seed,
    )?;

    write_text(
        &out_dir.join("stack.json"),
        &embed_identity(&stack_to_json(&stack)?, seed, &hash),
    )?;
    write_json(
        &out_dir.join("verification.json"),
        &json!({ "seed": seed, "config_hash": hash, "report": report }),
    )?;
    println!(
        "{} blocks; verification max rel err {:e} over {} draws: {}",
        stack.blocks.len(),
        report.max_rel_err,
        report.n_trials,
        if report.pass { "pass" } else { "FAIL" }
    );
    if !report.pass {
        return Err(Error::InvalidInput {
            reason: format!(
                "constructed stack misses its target: max relative error {:e} over {} draws",
                report.max_rel_err, report.n_trials
            ),
        });
    }
    Ok(())
}

// bound -------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileParams {
    rho_w: f64,
    rho_a: f64,
    rho_b: f64,
    rho_c: f64,
    rho_delta: f64,
}

fn default_k() -> f64 {
    0.5
}

fn default_margin() -> f64 {
    1.0
}

fn default_confidence() -> f64 {
    0.1
}

fn default_samples() -> usize {
    1000
}

fn default_channels() -> usize {
    2
}

fn default_state_size() -> usize {
    1
}

fn default_bound_len() -> usize {
    16
}

fn default_classes() -> usize {
    2
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    profile: Option<ProfileParams>,
    #[serde(default = "default_k")]
    k: f64,
    #[serde(default = "default_margin")]
    gamma: f64,
    #[serde(default = "default_confidence")]
    delta: f64,
    #[serde(default = "default_samples")]
    m: usize,
    #[serde(rename = "D", default = "default_channels")]
    d: usize,
    #[serde(rename = "N", default = "default_state_size")]
    n: usize,
    #[serde(rename = "L", default = "default_bound_len")]
    l: usize,
    #[serde(rename = "C", default = "default_classes")]
    c: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    lengths: Vec<usize>,
}

fn parse_lengths_flag(text: &str) -> Result<Value> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let n: u64 = part.trim().parse().map_err(|_| {
            usage(format!(
                "lengths expects comma-separated integers, got '{text}'"
            ))
        })?;
        out.push(json!(n));
    }
    Ok(Value::Array(out))
}

fn run_bound(args: BoundArgs) -> Result<()> {
    let (seed, mut params) = resolve_config(&args.common, "bound")?;
    let lengths = args.lengths.as_deref().map(parse_lengths_flag).transpose()?;
    set_key(&mut params, "weights", args.weights.map(Value::from));
    set_key(&mut params, "k", args.k.map(Value::from));
    set_key(&mut params, "gamma", args.gamma.map(Value::from));
    set_key(&mut params, "delta", args.delta.map(Value::from));
    set_key(&mut params, "m", args.m.map(|v| json!(v)));
    set_key(&mut params, "D", args.d.map(|v| json!(v)));
    set_key(&mut params, "N", args.n.map(|v| json!(v)));
    set_key(&mut params, "L", args.l.map(|v| json!(v)));
    set_key(&mut params, "C", args.c.map(|v| json!(v)));
    set_key(&mut params, "data_norm", args.data_norm.map(Value::from));
    set_key(&mut params, "lengths", lengths);
    let mut p: BoundParams = parse_params("bound", params)?;

    if p.weights.is_some() && p.profile.is_some() {
        return Err(usage("weights and profile are mutually exclusive"));
    }
    if let Some(pr) = &p.profile {
        for (name, v) in [
            ("rho_w", pr.rho_w),
            ("rho_a", pr.rho_a),
            ("rho_b", pr.rho_b),
            ("rho_c", pr.rho_c),
            ("rho_delta", pr.rho_delta),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(usage(format!(
                    "profile {name} must be finite and nonnegative, got {v}"
                )));
            }
        }
    }
    p.data_norm.get_or_insert((p.m as f64).sqrt());

    let hash = config_hash("bound", seed, &p);
    let out_dir = &args.common.out_dir;
    create_out_dir(out_dir)?;
    write_manifest(out_dir, "bound", seed, &hash, &p)?;

    let profile = match (&p.weights, &p.profile) {
        (Some(path), None) => {
            let parsed: ClassifierWeights = serde_json::from_str(&read_text(Path::new(path))?)
                .map_err(|e| Error::InvalidInput {
                    reason: format!("classifier weights {path}: {e}"),
                })?;
            let ClassifierWeights { s6, w } = parsed;
            let s6 = S6Weights::new(s6.s_b, s6.s_c, s6.s_delta, s6.a)?;
            norm_profile(&ClassifierWeights::new(s6, w)?)
        }
        (None, Some(pr)) => NormProfile {
            rho_w: pr.rho_w,
            rho_a: pr.rho_a,
            rho_b: pr.rho_b,
            rho_c: pr.rho_c,
            rho_delta: pr.rho_delta,
            gamma_product: pr.rho_w * pr.rho_a * pr.rho_b * pr.rho_c * pr.rho_delta,
        },
        (None, None) => NormProfile {
            rho_w: 1.0,
            rho_a: 1.0,
            rho_b: 1.0,
            rho_c: 1.0,
            rho_delta: 1.0,
            gamma_product: 1.0,
        },
        (Some(_), Some(_)) => unreachable!("validated above"),
    };

    let inputs = BoundInputs {
        gamma: p.gamma,
        delta: p.delta,
        m: p.m,
        d: p.d,
        n: p.n,
        l: p.l,
        c: p.c,
    };
    let data_norm = p.data_norm.expect("resolved above");
    let report = evaluate_bound(&profile, p.k, &inputs, data_norm)?;

    write_json(
        &out_dir.join("bound.json"),
        &json!({ "seed": seed, "config_hash": hash, "profile": profile, "report": report }),
    )?;
    if !p.lengths.is_empty() {
        let rows = bound_length_sweep(&profile, p.k, &inputs, data_norm, &p.lengths)?;
        let mut csv = csv_identity_line(seed, &hash);
        csv.push_str("L,term1,term2,bound\n");
        for row in &rows {
            writeln!(csv, "{},{:?},{:?},{:?}", row.l, row.term1, row.term2, row.bound)
                .expect("writing to a string cannot fail");
        }
        write_text(&out_dir.join("length_sweep.csv"), &csv)?;
    }
    println!(
        "bound {:?} (term1 {:?}, term2 {:?}) at Gamma {:?}, K {:?}",
        report.bound, report.term1, report.term2, profile.gamma_product, p.k
    );
    Ok(())
}

// gradcheck ---------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum GradcheckTarget {
    Model,
    MambaBlock,
    Lti,
}

fn default_gradcheck_target() -> GradcheckTarget {
    GradcheckTarget::Model
}

fn default_gradcheck_epsilon() -> f64 {
    GRAD_CHECK_EPSILON
}

fn default_checks() -> usize {
    1
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GradcheckParams {
    #[serde(default = "default_gradcheck_target")]
    target: GradcheckTarget,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model: Option<ModelConfig>,
    #[serde(rename = "L")]
    l: usize,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    d: Option<usize>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variant: Option<S6Variant>,
    #[serde(default = "default_gradcheck_epsilon")]
    epsilon: f64,
    #[serde(default = "default_checks")]
    checks: usize,
}

fn run_gradcheck(args: GradcheckArgs) -> Result<()> {
    let (seed, mut params) = resolve_config(&args.common, "gradcheck")?;
    set_key(&mut params, "target", args.target.map(Value::from));
    set_key(&mut params, "L", args.l.map(|v| json!(v)));
    set_key(&mut params, "D", args.d.map(|v| json!(v)));
    set_key(&mut params, "N", args.n.map(|v| json!(v)));
    set_key(&mut params, "epsilon", args.epsilon.map(Value::from));
    set_key(&mut params, "checks", args.checks.map(|v| json!(v)));
    let mut p: GradcheckParams = parse_params("gradcheck", params)?;

    if p.checks == 0 {
        return Err(usage("checks needs at least one initialization"));
    }
    if !(1e-7..=1e-3).contains(&p.epsilon) {
        return Err(usage("epsilon must lie in [1e-7, 1e-3]"));
    }
    match p.target {
        GradcheckTarget::Model => {
            if p.model.is_none() {
                return Err(usage(
                    "gradcheck target 'model' needs a model record in the config file",
                ));
            }
            if p.d.is_some() || p.n.is_some() || p.variant.is_some() {
                return Err(usage("D, N, and variant apply to layer targets only"));
            }
        }
        GradcheckTarget::MambaBlock => {
            if p.model.is_some() {
                return Err(usage("model applies to the model target only"));
            }
            if p.d.is_none() || p.n.is_none() {
                return Err(usage("gradcheck target 'mamba_block' needs D and N"));
            }
            p.variant.get_or_insert(S6Variant::Original);
        }
        GradcheckTarget::Lti => {
            if p.model.is_some() || p.d.is_some() || p.variant.is_some() {
                return Err(usage("gradcheck target 'lti' takes only N and L"));
            }
            if p.n.is_none() {
                return Err(usage("gradcheck target 'lti' needs N"));
            }
        }
    }

    let hash = config_hash("gradcheck", seed, &p);
    let out_dir = &args.common.out_dir;
    create_out_dir(out_dir)?;
    write_manifest(out_dir, "gradcheck", seed, &hash, &p)?;

    let mut max_err = 0.0f64;
    for i in 0..p.checks {
        let run_seed = seed.wrapping_add(i as u64);
        let err = match p.target {
            GradcheckTarget::Model => grad_check_model(
                p.model.as_ref().expect("validated above"),
                p.l,
                run_seed,
                p.epsilon,
            )?,
            GradcheckTarget::MambaBlock => grad_check_mamba_block(
                p.d.expect("validated above"),
                p.n.expect("validated above"),
                p.l,
                p.variant.as_ref().expect("resolved above"),
                run_seed,
                p.epsilon,
            )?,
            GradcheckTarget::Lti => {
                grad_check_lti(p.n.expect("validated above"), p.l, run_seed, p.epsilon)?
            }
        };
        max_err = max_err.max(err);
    }
    let pass = max_err <= GRAD_CHECK_TOL;

    write_json(
        &out_dir.join("gradcheck.json"),
        &json!({
            "seed": seed,
            "config_hash": hash,
            "epsilon": p.epsilon,
            "checks": p.checks,
            "max_rel_err": max_err,
            "tolerance": GRAD_CHECK_TOL,
            "pass": pass,
        }),
    )?;
    println!(
        "max relative error {:e} over {} checks (tolerance {:e})",
        max_err, p.checks, GRAD_CHECK_TOL
    );
    if !pass {
        return Err(Error::GradCheckFailed {
            max_rel_err: max_err,
            tolerance: GRAD_CHECK_TOL,
        });
    }
    Ok(())
}

// sweep -------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepEntry {
    id: String,
    model: ModelConfig,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepParams {
    train_data: String,
    test_data: String,
    epochs: usize,
    #[serde(default = "crate::trainer::default_batch_size")]
    batch_size: usize,
    #[serde(default)]
    adam: AdamConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    seeds: Vec<u64>,
    models: Vec<SweepEntry>,
}

fn family_tag(cfg: &ModelConfig) -> &'static str {
    match cfg.family {
        crate::trainer::ModelFamily::S6 => "s6",
        crate::trainer::ModelFamily::LinearAttention => "linear_attention",
        crate::trainer::ModelFamily::SoftmaxAttention => "softmax_attention",
    }
}

fn head_tag(head: &HeadConfig) -> String {
    match head {
        HeadConfig::Classification { classes } => format!("classification({classes})"),
        HeadConfig::Regression => "regression".to_string(),
    }
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let (seed, mut params) = resolve_config(&args.common, "sweep")?;
    set_key(&mut params, "train_data", args.train_data.map(Value::from));
    set_key(&mut params, "test_data", args.test_data.map(Value::from));
    set_key(&mut params, "epochs", args.epochs.map(|v| json!(v)));
    set_key(&mut params, "batch_size", args.batch_size.map(|v| json!(v)));
    let mut p: SweepParams = parse_params("sweep", params)?;

    if p.models.is_empty() {
        return Err(usage("sweep needs at least one model entry"));
    }
    for entry in &p.models {
        if entry.id.is_empty() || entry.id.contains([',', '"', '\n']) {
            return Err(usage(format!(
                "config id '{}' must be nonempty and free of commas, quotes, and newlines",
                entry.id
            )));
        }
    }
    for pair in p.models.windows(2) {
        let _ = pair;
    }
    {
        let mut ids: Vec<&str> = p.models.iter().map(|e| e.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(usage("config ids must be unique"));
        }
    }
    if p.seeds.is_empty() {
        p.seeds = vec![seed, seed.wrapping_add(1), seed.wrapping_add(2)];
    }

    let hash = config_hash("sweep", seed, &p);
    let out_dir = &args.common.out_dir;
    create_out_dir(out_dir)?;
    write_manifest(out_dir, "sweep", seed, &hash, &p)?;

    let (train_sd, loss) = load_supervised(&p.train_data)?;
    let (test_sd, test_loss) = load_supervised(&p.test_data)?;
    for entry in &p.models {
        if !head_matches_loss(&entry.model.head, loss) || !head_matches_loss(&entry.model.head, test_loss) {
            return Err(Error::InvalidInput {
                reason: format!("model '{}' and dataset task disagree", entry.id),
            });
        }
        train_sd.check_against(&entry.model.head)?;
        test_sd.check_against(&entry.model.head)?;
    }

    let jobs: Vec<(&SweepEntry, u64)> = p
        .models
        .iter()
        .flat_map(|entry| p.seeds.iter().map(move |&s| (entry, s)))
        .collect();
    use rayon::prelude::*;
    let metrics: Vec<f64> = jobs
        .par_iter()
        .map(|(entry, run_seed)| {
            let train_cfg = TrainConfig {
                adam: p.adam,
                batch_size: p.batch_size,
                epochs: p.epochs,
                seed: *run_seed,
                loss,
            };
            train(&entry.model, &train_cfg, &train_sd, &test_sd).map(|(_, m)| m.final_metric)
        })
        .collect::<Result<_>>()?;

    let mut csv = csv_identity_line(seed, &hash);
    csv.push_str(
        "config_id,family,n_layers,D,N,use_pe,head,n_seeds,mean_metric,min_metric,max_metric\n",
    );
    for (i, entry) in p.models.iter().enumerate() {
        let chunk = &metrics[i * p.seeds.len()..(i + 1) * p.seeds.len()];
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        let min = chunk.iter().copied().fold(f64::INFINITY, f64::min);
        let max = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{:?},{:?},{:?}",
            entry.id,
            family_tag(&entry.model),
            entry.model.n_layers,
            entry.model.d,
            entry.model.n,
            entry.model.use_pe,
            head_tag(&entry.model.head),
            p.seeds.len(),
            mean,
            min,
            max
        )
        .expect("writing to a string cannot fail");
    }
    write_text(&out_dir.join("summary.csv"), &csv)?;
    println!(
        "swept {} configurations x {} seeds",
        p.models.len(),
        p.seeds.len()
    );
    Ok(())
}
