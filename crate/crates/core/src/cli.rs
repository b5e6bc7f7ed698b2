//! Command-line entry point wiring data generation, training, evaluation,
//! gradient checking and agreement analysis.
//!
//! Every subcommand honors the global `--seed`, `--mock` and `--out`
//! flags. Settings can also come from a flat `key = value` config file;
//! explicit flags override file values, which override the defaults.

use crate::datagen::{
    build_client, generate_preference_pairs, FallacyExemplarBank, GeneratorClientConfig,
};
use crate::dataset::{
    load_arguments, load_generated, load_preferences, save_jsonl, split_stats,
    synthetic_corpus, ArgumentSample, FallacyDistribution, SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::judge::{
    confusion_matrix, fallacy_rate, judge_fallacies, judge_winrate,
    majority_agreement_ratio, position_bias_flip_rate, randolph_kappa, win_rate,
    AnnotationRecord, ComparisonItem, EvalReport, FallacyVerdict, JudgeClient, MockJudge,
};
use crate::model::{
    DecodingConfig, EncodedPrompt, PolicyConfig, PolicyModel, Vocabulary,
};
use crate::tensor::Precision;
use crate::trainer::{train_preference, train_sft, Method, TrainConfig};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

const DEFAULTS_NOTE: &str = "Key defaults: beta=0.25 (dpo), beta=0.1 (cpo/fipo), lambda=0.3, \
learning rate 2e-4, 3 epochs, batch size 16, decoding top_p p=0.75, top_k k=10, \
max_new_tokens=24, 4 generated fallacies per argument.";

#[derive(Parser, Debug)]
#[command(
    name = "fipo",
    version,
    about = "Desk-scale preference optimization with fallacy-informed losses",
    after_help = DEFAULTS_NOTE,
)]
struct Cli {
    /// Seed for the run; all randomness derives from it
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Offline mode: deterministic mock clients, zero network access
    #[arg(long, global = true)]
    mock: bool,

    /// Output directory (creates datasets/, checkpoints/, reports/, logs/)
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Flat key=value config file; explicit flags win over file values
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic marker-token argument corpus (offline toy data)
    SynthCorpus(SynthCorpusArgs),
    /// Generate preference pairs (4 fallacious counterparts per argument)
    GenData(GenDataArgs),
    /// Supervised fine-tuning on an argument corpus
    TrainSft(TrainSftArgs),
    /// Preference-phase training (dpo, cpo or fipo) from an SFT checkpoint
    TrainPref(TrainPrefArgs),
    /// Sample arguments from a checkpoint over a corpus of topics
    Generate(GenerateArgs),
    /// Judge-based evaluation: pairwise win-rate or fallacy classification
    Eval(EvalArgs),
    /// Randolph's kappa and majority agreement from annotation JSONL
    Agreement(AgreementArgs),
    /// Finite-difference verification of all loss gradients
    Gradcheck(GradcheckArgs),
    /// Render an evaluation report as tables plus a CSV heatmap
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthCorpusArgs {
    /// Number of arguments to synthesize
    #[arg(long)]
    n: Option<usize>,
    /// Fraction of arguments carrying their topic's marker token
    #[arg(long)]
    marker_rate: Option<f64>,
    /// Output JSONL path [default: <out>/datasets/corpus.jsonl]
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Argument corpus JSONL
    #[arg(long)]
    args: PathBuf,
    /// Fallacy distribution JSON (canonical name -> probability)
    #[arg(long)]
    dist: Option<PathBuf>,
    /// Fallacious generations per source argument [default: 4]
    #[arg(long)]
    n_per: Option<usize>,
    /// Chat-completion endpoint URL (ignored with --mock)
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name sent to the endpoint
    #[arg(long)]
    model_name: Option<String>,
    /// Output JSONL path [default: <out>/datasets/preferences.jsonl]
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ModelShapeArgs {
    /// Embedding width [default: 64]
    #[arg(long)]
    d_model: Option<usize>,
    /// Transformer blocks [default: 2]
    #[arg(long)]
    n_layers: Option<usize>,
    /// Attention heads [default: 2]
    #[arg(long)]
    n_heads: Option<usize>,
    /// Maximum sequence length [default: 128]
    #[arg(long)]
    max_seq_len: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct TrainKnobArgs {
    /// Learning rate [default: 2e-4]
    #[arg(long)]
    lr: Option<f64>,
    /// Training epochs [default: 3]
    #[arg(long)]
    epochs: Option<usize>,
    /// Batch size [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Numeric mode: f32 (train) or f64 (verify) [default: f32]
    #[arg(long)]
    precision: Option<String>,
}

#[derive(Args, Debug)]
struct TrainSftArgs {
    /// Training corpus JSONL
    #[arg(long)]
    corpus: PathBuf,
    /// Held-out corpus JSONL for per-epoch log-probability
    #[arg(long)]
    heldout: Option<PathBuf>,
    #[command(flatten)]
    shape: ModelShapeArgs,
    #[command(flatten)]
    knobs: TrainKnobArgs,
    /// Checkpoint path [default: <out>/checkpoints/sft.ckpt.json]
    #[arg(long)]
    checkpoint_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainPrefArgs {
    /// Alignment method
    #[arg(long, value_parser = ["dpo", "cpo", "fipo"])]
    method: String,
    /// Preference pairs JSONL
    #[arg(long)]
    pairs: PathBuf,
    /// Starting checkpoint (the SFT model)
    #[arg(long)]
    init: PathBuf,
    /// Frozen reference checkpoint; required for dpo
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Margin temperature beta [default: 0.25 for dpo, 0.1 for cpo/fipo]
    #[arg(long)]
    beta: Option<f64>,
    /// Classification-loss weight lambda, fipo only [default: 0.3]
    #[arg(long)]
    lambda: Option<f64>,
    /// Ablation: downsample to equal pairs per fallacy type
    #[arg(long)]
    uniform_dataset: bool,
    /// Ablation: unweighted cross-entropy (all class weights = 1)
    #[arg(long)]
    unweighted_ce: bool,
    /// Held-out pairs JSONL for per-epoch metrics
    #[arg(long)]
    heldout: Option<PathBuf>,
    #[command(flatten)]
    knobs: TrainKnobArgs,
    /// Checkpoint path [default: <out>/checkpoints/<method>.ckpt.json]
    #[arg(long)]
    checkpoint_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Model checkpoint to sample from
    #[arg(long)]
    checkpoint: PathBuf,
    /// Topics/stances JSONL (argument fields are ignored)
    #[arg(long)]
    corpus: PathBuf,
    /// Nucleus probability p [default: 0.75]
    #[arg(long)]
    top_p: Option<f64>,
    /// Top-k cutoff k [default: 10]
    #[arg(long)]
    top_k: Option<usize>,
    /// Maximum generated tokens [default: 24]
    #[arg(long)]
    max_new_tokens: Option<usize>,
    /// Output JSONL path [default: <out>/datasets/generated.jsonl]
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// What to evaluate
    #[arg(long, value_parser = ["winrate", "fallacy"])]
    kind: String,
    /// winrate: baseline arguments JSONL (the SFT side)
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// winrate: aligned arguments JSONL, aligned by line with --baseline
    #[arg(long)]
    aligned: Option<PathBuf>,
    /// fallacy: arguments JSONL to classify
    #[arg(long)]
    input: Option<PathBuf>,
    /// fallacy: human verdicts JSONL to cross with the judge's
    /// (fills the confusion matrix in the report)
    #[arg(long)]
    human: Option<PathBuf>,
    /// winrate: also judge with swapped positions and report the flip rate
    #[arg(long)]
    position_audit: bool,
    /// Chat-completion endpoint URL (ignored with --mock)
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name sent to the endpoint
    #[arg(long)]
    model_name: Option<String>,
    /// Report JSON path [default: <out>/reports/eval_<kind>.json]
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AgreementArgs {
    /// Annotation JSONL: {"id": ..., "labels": ["Agree","Disagree",...]}
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Random model/batch draws per loss [default: 20]
    #[arg(long)]
    trials: Option<usize>,
    /// Central-difference step [default: 1e-5]
    #[arg(long)]
    eps: Option<f64>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// EvalReport JSON produced by `eval`
    #[arg(long)]
    input: PathBuf,
}

// ── config file ─────────────────────────────────────────────────────────

const KNOWN_KEYS: [&str; 24] = [
    "seed",
    "mock",
    "out",
    "lr",
    "learning_rate",
    "epochs",
    "batch_size",
    "beta",
    "lambda",
    "method",
    "precision",
    "d_model",
    "n_layers",
    "n_heads",
    "max_seq_len",
    "top_p",
    "top_k",
    "max_new_tokens",
    "n_per",
    "endpoint",
    "model_name",
    "api_key_env",
    "max_parallel",
    "temperature",
];

/// Parsed flat key=value file with typed getters.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: HashMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut values = HashMap::new();
        for (i, line) in raw.lines().enumerate() {
            let line_no = i + 1;
            let stripped = line.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let eq = stripped.find('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{line_no}:{}: expected 'key = value'",
                    path.display(),
                    line.len().max(1)
                ))
            })?;
            let key = stripped[..eq].trim().to_string();
            let value = stripped[eq + 1..].trim().to_string();
            if key.is_empty() || value.is_empty() {
                return Err(Error::Config(format!(
                    "{}:{line_no}:{}: empty key or value",
                    path.display(),
                    eq + 1
                )));
            }
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "{}:{line_no}: unknown config key '{key}'",
                    path.display()
                )));
            }
            values.insert(key, value);
        }
        Ok(ConfigFile { values })
    }

    fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("config key '{key}': cannot parse '{raw}'"))
            }),
        }
    }

    pub fn get_string(&self, key: &str) -> Option<String> {
        self.values.get(key).cloned()
    }
}

/// The merged run settings: defaults, overridden by the config file,
/// overridden by explicit flags.
pub struct RunConfig {
    pub subcommand: String,
    pub seed: u64,
    pub mock: bool,
    pub out_dir: PathBuf,
    pub file: ConfigFile,
}

impl RunConfig {
    fn resolve<T: std::str::FromStr>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.file.get_parsed(key)?.unwrap_or(default)),
        }
    }

    fn dir(&self, sub: &str) -> Result<PathBuf> {
        let dir = self.out_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn write_manifest<S: Serialize>(&self, extra: &S) -> Result<()> {
        let logs = self.dir("logs")?;
        let manifest = serde_json::json!({
            "subcommand": self.subcommand,
            "seed": self.seed,
            "mock": self.mock,
            "params": extra,
        });
        let path = logs.join(format!("run_{}.json", self.subcommand));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap())
            .map_err(|e| Error::io(&path, e))
    }

    fn generator_config(
        &self,
        endpoint: Option<String>,
        model_name: Option<String>,
    ) -> Result<GeneratorClientConfig> {
        let mut config = GeneratorClientConfig {
            mock_mode: self.mock,
            ..Default::default()
        };
        if let Some(e) = endpoint.or_else(|| self.file.get_string("endpoint")) {
            config.endpoint = e;
        }
        if let Some(m) = model_name.or_else(|| self.file.get_string("model_name")) {
            config.model = m;
        }
        if let Some(k) = self.file.get_string("api_key_env") {
            config.api_key_env = k;
        }
        config.max_parallel = self.resolve(None, "max_parallel", config.max_parallel)?;
        config.temperature = self.resolve(None, "temperature", config.temperature)?;
        Ok(config)
    }
}

// ── dispatch ────────────────────────────────────────────────────────────

/// Parses argv and runs the subcommand. Exit code 0 on success, 1 on
/// usage/validation errors, 2 on runtime failures.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // --help / --version are successful exits
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let file = match &cli.config {
        Some(path) => match ConfigFile::load(path) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("error: {e}");
                return e.exit_code();
            }
        },
        None => ConfigFile::default(),
    };
    let run = RunConfig {
        subcommand: subcommand_name(&cli.command).to_string(),
        seed: resolve_seed(&cli, &file),
        mock: cli.mock || file.get_string("mock").as_deref() == Some("true"),
        out_dir: cli.out.clone(),
        file,
    };
    match execute(cli.command, &run) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_seed(cli: &Cli, file: &ConfigFile) -> u64 {
    // the flag default is 0; an explicit file seed wins over that default
    if cli.seed != 0 {
        cli.seed
    } else {
        file.get_string("seed")
            .and_then(|s| s.parse().ok())
            .unwrap_or(cli.seed)
    }
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::SynthCorpus(_) => "synth-corpus",
        Command::GenData(_) => "gen-data",
        Command::TrainSft(_) => "train-sft",
        Command::TrainPref(_) => "train-pref",
        Command::Generate(_) => "generate",
        Command::Eval(_) => "eval",
        Command::Agreement(_) => "agreement",
        Command::Gradcheck(_) => "gradcheck",
        Command::Report(_) => "report",
    }
}

fn require_exists(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::Config(format!("path not found: {}", path.display())));
    }
    Ok(())
}

fn execute(command: Command, run: &RunConfig) -> Result<()> {
    match command {
        Command::SynthCorpus(args) => synth_corpus(args, run),
        Command::GenData(args) => gen_data(args, run),
        Command::TrainSft(args) => train_sft_cmd(args, run),
        Command::TrainPref(args) => train_pref_cmd(args, run),
        Command::Generate(args) => generate_cmd(args, run),
        Command::Eval(args) => eval_cmd(args, run),
        Command::Agreement(args) => agreement_cmd(args, run),
        Command::Gradcheck(args) => gradcheck_cmd(args, run),
        Command::Report(args) => report_cmd(args, run),
    }
}

// ── subcommands ─────────────────────────────────────────────────────────

fn synth_corpus(args: SynthCorpusArgs, run: &RunConfig) -> Result<()> {
    let n = args.n.unwrap_or(160);
    let marker_rate = args.marker_rate.unwrap_or(0.5);
    let output = match args.output {
        Some(p) => p,
        None => run.dir("datasets")?.join("corpus.jsonl"),
    };
    let corpus = synthetic_corpus(&SyntheticConfig {
        n_args: n,
        marker_rate,
        seed: run.seed,
    });
    save_jsonl(&output, &corpus)?;
    run.write_manifest(&serde_json::json!({"n": n, "marker_rate": marker_rate}))?;
    println!("wrote {} synthetic arguments to {}", n, output.display());
    Ok(())
}

fn gen_data(args: GenDataArgs, run: &RunConfig) -> Result<()> {
    require_exists(&args.args)?;
    let corpus = load_arguments(&args.args)?;
    for w in &corpus.warnings {
        eprintln!("warning: {w}");
    }
    let dist = match &args.dist {
        Some(path) => {
            require_exists(path)?;
            FallacyDistribution::load(path)?
        }
        None => FallacyDistribution::default(),
    };
    let n_per = run.resolve(args.n_per, "n_per", 4)?;
    let gen_config = run.generator_config(args.endpoint, args.model_name)?;
    gen_config.validate()?;
    let client = build_client(&gen_config)?;
    let bank = FallacyExemplarBank::builtin();
    let outcome = generate_preference_pairs(
        &corpus.records,
        &dist,
        client.as_ref(),
        &bank,
        n_per,
        run.seed,
        gen_config.max_parallel,
    )?;
    let output = match args.output {
        Some(p) => p,
        None => run.dir("datasets")?.join("preferences.jsonl"),
    };
    save_jsonl(&output, &outcome.pairs)?;
    let skips_path = run.dir("logs")?.join("generation_skips.jsonl");
    save_jsonl(&skips_path, &outcome.skipped)?;
    run.write_manifest(&serde_json::json!({
        "n_per": n_per,
        "inputs": corpus.records.len(),
        "pairs": outcome.pairs.len(),
        "skipped": outcome.skipped.len(),
    }))?;
    let stats = split_stats(&corpus.records, n_per);
    println!(
        "{} source arguments ({} train / {} test) -> {} preference pairs ({} skipped)",
        corpus.records.len(),
        stats.train_sources,
        stats.test_sources,
        outcome.pairs.len(),
        outcome.skipped.len()
    );
    println!("wrote {}", output.display());
    Ok(())
}

fn parse_precision(s: Option<String>, run: &RunConfig) -> Result<Precision> {
    let value = match s {
        Some(v) => v,
        None => run
            .file
            .get_string("precision")
            .unwrap_or_else(|| "f32".into()),
    };
    value.parse()
}

fn knobs_to_config(
    method: Method,
    knobs: &TrainKnobArgs,
    run: &RunConfig,
    checkpoint: PathBuf,
) -> Result<TrainConfig> {
    let mut config = TrainConfig::for_method(method);
    let file_lr = match run.file.get_parsed::<f64>("lr")? {
        Some(v) => Some(v),
        None => run.file.get_parsed::<f64>("learning_rate")?,
    };
    config.learning_rate = knobs.lr.or(file_lr).unwrap_or(config.learning_rate);
    config.epochs = run.resolve(knobs.epochs, "epochs", config.epochs)?;
    config.batch_size = run.resolve(knobs.batch_size, "batch_size", config.batch_size)?;
    config.precision = parse_precision(knobs.precision.clone(), run)?;
    config.seed = run.seed;
    config.checkpoint = Some(checkpoint);
    Ok(config)
}

fn train_sft_cmd(args: TrainSftArgs, run: &RunConfig) -> Result<()> {
    require_exists(&args.corpus)?;
    let corpus = load_arguments(&args.corpus)?;
    for w in &corpus.warnings {
        eprintln!("warning: {w}");
    }
    if corpus.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let heldout = match &args.heldout {
        Some(p) => {
            require_exists(p)?;
            Some(load_arguments(p)?.records)
        }
        None => None,
    };
    let texts: Vec<String> = corpus
        .records
        .iter()
        .map(|a| format!("{} {}", a.topic, a.argument))
        .collect();
    let vocab = Vocabulary::build(texts.iter().map(|s| s.as_str()));
    let policy_config = PolicyConfig {
        d_model: run.resolve(args.shape.d_model, "d_model", 64)?,
        n_layers: run.resolve(args.shape.n_layers, "n_layers", 2)?,
        n_heads: run.resolve(args.shape.n_heads, "n_heads", 2)?,
        max_seq_len: run.resolve(args.shape.max_seq_len, "max_seq_len", 128)?,
        vocab_size: vocab.size(),
    };
    let checkpoint = match args.checkpoint_out {
        Some(p) => p,
        None => run.dir("checkpoints")?.join("sft.ckpt.json"),
    };
    let config = knobs_to_config(Method::Sft, &args.knobs, run, checkpoint.clone())?;
    let mut model = PolicyModel::init(policy_config, vocab, run.seed)?;
    let log = train_sft(&mut model, &corpus.records, &config, heldout.as_deref())?;
    run.write_manifest(&serde_json::json!({
        "corpus": args.corpus,
        "steps": log.steps.len(),
        "final_loss": log.final_loss(),
    }))?;
    println!(
        "sft: {} steps, final loss {:.6}, checkpoint {}",
        log.steps.len(),
        log.final_loss().unwrap_or(f64::NAN),
        checkpoint.display()
    );
    Ok(())
}

fn train_pref_cmd(args: TrainPrefArgs, run: &RunConfig) -> Result<()> {
    let method: Method = args.method.parse()?;
    if method == Method::Dpo && args.reference.is_none() {
        return Err(Error::Config(
            "train-pref --method dpo requires --reference (the frozen SFT checkpoint)".into(),
        ));
    }
    if args.lambda.is_some() && method != Method::Fipo {
        return Err(Error::Config("--lambda applies to fipo only".into()));
    }
    require_exists(&args.pairs)?;
    require_exists(&args.init)?;
    let pairs = load_preferences(&args.pairs)?;
    for w in &pairs.warnings {
        eprintln!("warning: {w}");
    }
    let heldout = match &args.heldout {
        Some(p) => {
            require_exists(p)?;
            Some(load_preferences(p)?.records)
        }
        None => None,
    };
    let mut model = PolicyModel::load(&args.init)?;
    let reference = match &args.reference {
        Some(p) => {
            require_exists(p)?;
            Some(PolicyModel::load(p)?)
        }
        None => None,
    };
    let checkpoint = match args.checkpoint_out {
        Some(p) => p,
        None => run
            .dir("checkpoints")?
            .join(format!("{method}.ckpt.json")),
    };
    let mut config = knobs_to_config(method, &args.knobs, run, checkpoint.clone())?;
    config.beta = run.resolve(args.beta, "beta", config.beta)?;
    if method == Method::Fipo {
        config.lambda = run.resolve(args.lambda, "lambda", config.lambda)?;
    }
    config.uniform_dataset = args.uniform_dataset;
    config.unweighted_ce = args.unweighted_ce;
    let log = train_preference(
        &mut model,
        reference.as_ref(),
        &pairs.records,
        &config,
        heldout.as_deref(),
    )?;
    run.write_manifest(&serde_json::json!({
        "method": method.to_string(),
        "pairs": pairs.records.len(),
        "steps": log.steps.len(),
        "final_loss": log.final_loss(),
        "loss_fingerprint": config.loss_fingerprint(),
    }))?;
    println!(
        "{method}: {} steps, final loss {:.6}, checkpoint {}",
        log.steps.len(),
        log.final_loss().unwrap_or(f64::NAN),
        checkpoint.display()
    );
    Ok(())
}

fn generate_cmd(args: GenerateArgs, run: &RunConfig) -> Result<()> {
    require_exists(&args.checkpoint)?;
    require_exists(&args.corpus)?;
    let model = PolicyModel::load(&args.checkpoint)?;
    let corpus = load_arguments(&args.corpus)?;
    let decoding = DecodingConfig {
        top_p: run.resolve(args.top_p, "top_p", 0.75)?,
        top_k: run.resolve(args.top_k, "top_k", 10)?,
        max_new_tokens: run.resolve(args.max_new_tokens, "max_new_tokens", 24)?,
        seed: 0,
    };
    let mut generated = Vec::with_capacity(corpus.records.len());
    for (i, a) in corpus.records.iter().enumerate() {
        let prompt = EncodedPrompt::new(&model.vocab, &a.topic, a.stance);
        let cfg = DecodingConfig {
            seed: crate::rng::derive_seed(run.seed, i as u64),
            ..decoding.clone()
        };
        let ids = model.generate(&prompt, &cfg)?;
        let mut sample = ArgumentSample::new(a.topic.clone(), a.stance, model.vocab.decode(&ids));
        sample.split = a.split;
        generated.push(sample);
    }
    let output = match args.output {
        Some(p) => p,
        None => run.dir("datasets")?.join("generated.jsonl"),
    };
    save_jsonl(&output, &generated)?;
    run.write_manifest(&serde_json::json!({
        "checkpoint": args.checkpoint,
        "count": generated.len(),
        "top_p": decoding.top_p,
        "top_k": decoding.top_k,
    }))?;
    println!("wrote {} generations to {}", generated.len(), output.display());
    Ok(())
}

fn judge_client(run: &RunConfig, endpoint: Option<String>, model_name: Option<String>) -> Result<Box<dyn JudgeClient>> {
    if run.mock {
        Ok(Box::new(MockJudge::new()))
    } else {
        let config = run.generator_config(endpoint, model_name)?;
        Ok(Box::new(crate::datagen::HttpChatClient::new(config)?))
    }
}

fn eval_cmd(args: EvalArgs, run: &RunConfig) -> Result<()> {
    let client = judge_client(run, args.endpoint.clone(), args.model_name.clone())?;
    let parallel = run.resolve(None, "max_parallel", 4usize)?;
    let mut report = EvalReport {
        seed: run.seed,
        ..Default::default()
    };
    let reports_dir = run.dir("reports")?;
    match args.kind.as_str() {
        "winrate" => {
            let (baseline, aligned) = match (&args.baseline, &args.aligned) {
                (Some(b), Some(a)) => (b, a),
                _ => {
                    return Err(Error::Config(
                        "eval --kind winrate needs --baseline and --aligned".into(),
                    ))
                }
            };
            require_exists(baseline)?;
            require_exists(aligned)?;
            let base = load_generated(baseline)?.records;
            let align = load_generated(aligned)?.records;
            if base.len() != align.len() {
                return Err(Error::Data(format!(
                    "baseline has {} rows, aligned has {}",
                    base.len(),
                    align.len()
                )));
            }
            let items: Vec<ComparisonItem> = base
                .iter()
                .zip(&align)
                .map(|(b, a)| {
                    if b.topic != a.topic {
                        return Err(Error::Data(format!(
                            "misaligned topics: '{}' vs '{}'",
                            b.topic, a.topic
                        )));
                    }
                    Ok(ComparisonItem {
                        topic: b.topic.clone(),
                        stance: b.stance,
                        arg_a: b.argument.clone(),
                        arg_b: a.argument.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let verdicts = judge_winrate(client.as_ref(), &items, parallel)?;
            save_jsonl(&reports_dir.join("verdicts_winrate.jsonl"), &verdicts)?;
            report.win_rate = Some(win_rate(&verdicts)?);
            if args.position_audit {
                report.position_flip_rate =
                    Some(position_bias_flip_rate(client.as_ref(), &items, parallel)?);
            }
        }
        "fallacy" => {
            let input = args.input.as_ref().ok_or_else(|| {
                Error::Config("eval --kind fallacy needs --input".into())
            })?;
            require_exists(input)?;
            let loaded = load_generated(input)?;
            for w in &loaded.warnings {
                eprintln!("warning: {w}");
            }
            let (verdicts, unparsed) = judge_fallacies(client.as_ref(), &loaded.records, parallel)?;
            save_jsonl(&reports_dir.join("verdicts_fallacy.jsonl"), &verdicts)?;
            report.fallacy = Some(fallacy_rate(&verdicts)?);
            report.unparsed_fallacy_responses = Some(unparsed);
            if let Some(human_path) = &args.human {
                require_exists(human_path)?;
                let raw = std::fs::read_to_string(human_path)
                    .map_err(|e| Error::io(human_path, e))?;
                let mut human: Vec<FallacyVerdict> = Vec::new();
                for (i, line) in raw.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    human.push(serde_json::from_str(line).map_err(|e| Error::Jsonl {
                        path: human_path.clone(),
                        line: i + 1,
                        msg: e.to_string(),
                    })?);
                }
                report.confusion = Some(confusion_matrix(&human, &verdicts)?);
            }
        }
        other => return Err(Error::Config(format!("unknown eval kind '{other}'"))),
    }
    let output = match args.output {
        Some(p) => p,
        None => reports_dir.join(format!("eval_{}.json", args.kind)),
    };
    std::fs::write(&output, serde_json::to_string_pretty(&report).unwrap())
        .map_err(|e| Error::io(&output, e))?;
    run.write_manifest(&serde_json::json!({"kind": args.kind, "report": output}))?;
    print!("{}", report.render_table());
    println!("report written to {}", output.display());
    Ok(())
}

fn agreement_cmd(args: AgreementArgs, run: &RunConfig) -> Result<()> {
    require_exists(&args.input)?;
    let raw = std::fs::read_to_string(&args.input).map_err(|e| Error::io(&args.input, e))?;
    let mut records: Vec<AnnotationRecord> = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord = serde_json::from_str(line).map_err(|e| Error::Jsonl {
            path: args.input.clone(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        records.push(record);
    }
    let kappa = randolph_kappa(&records)?;
    let majority = majority_agreement_ratio(&records)?;
    let report = EvalReport {
        seed: run.seed,
        kappa: Some(kappa),
        majority_agreement: Some(majority),
        ..Default::default()
    };
    let path = run.dir("reports")?.join("agreement.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report).unwrap())
        .map_err(|e| Error::io(&path, e))?;
    println!("kappa = {kappa:.6}");
    println!("majority agreement ratio = {majority:.6}");
    Ok(())
}

fn gradcheck_cmd(args: GradcheckArgs, run: &RunConfig) -> Result<()> {
    let trials = args.trials.unwrap_or(20);
    let eps = args.eps.unwrap_or(1e-5);
    let checks = crate::gradsuite::run(trials, eps, run.seed)?;
    let mut all_ok = true;
    for c in &checks {
        let ok = c.max_rel_err < 1e-4;
        all_ok &= ok;
        println!(
            "{:<5} max relative error {:.3e}  [{}]",
            c.loss,
            c.max_rel_err,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if !all_ok {
        return Err(Error::Model("gradient check failed".into()));
    }
    Ok(())
}

fn report_cmd(args: ReportArgs, run: &RunConfig) -> Result<()> {
    require_exists(&args.input)?;
    let raw = std::fs::read_to_string(&args.input).map_err(|e| Error::io(&args.input, e))?;
    let report: EvalReport =
        serde_json::from_str(&raw).map_err(|e| Error::Data(format!("bad report JSON: {e}")))?;
    print!("{}", report.render_table());
    if let Some(confusion) = &report.confusion {
        let csv = run.dir("reports")?.join("confusion.csv");
        std::fs::write(&csv, confusion.to_csv()).map_err(|e| Error::io(&csv, e))?;
        println!("confusion heatmap written to {}", csv.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write(path: &Path, contents: &str) {
        std::fs::write(path, contents).unwrap();
    }

    #[test]
    fn empty_config_file_is_all_defaults() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.conf");
        write(&path, "");
        let file = ConfigFile::load(&path).unwrap();
        assert!(file.get_string("lambda").is_none());
    }

    #[test]
    fn unknown_key_is_named_in_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("typo.conf");
        write(&path, "lamda = 0.5\n");
        match ConfigFile::load(&path) {
            Err(Error::Config(msg)) => assert!(msg.contains("lamda"), "{msg}"),
            other => panic!("expected Config error, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.conf");
        write(&path, "seed = 1\njust words\n");
        match ConfigFile::load(&path) {
            Err(Error::Config(msg)) => assert!(msg.contains(":2:"), "{msg}"),
            other => panic!("expected Config error, got {other:?}"),
        }
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("file.conf");
        write(&path, "lambda = 0.3\nepochs = 7\n");
        let run = RunConfig {
            subcommand: "test".into(),
            seed: 0,
            mock: true,
            out_dir: dir.path().to_path_buf(),
            file: ConfigFile::load(&path).unwrap(),
        };
        // flag present: wins
        let v: f64 = run.resolve(Some(0.5), "lambda", 0.0).unwrap();
        assert_eq!(v, 0.5);
        // flag absent: file wins over default
        let v: f64 = run.resolve(None, "lambda", 0.0).unwrap();
        assert_eq!(v, 0.3);
        let e: usize = run.resolve(None, "epochs", 3).unwrap();
        assert_eq!(e, 7);
        // neither: default
        let b: f64 = run.resolve(None, "beta", 0.25).unwrap();
        assert_eq!(b, 0.25);
    }

    #[test]
    fn comments_and_spacing_accepted() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.conf");
        write(&path, "# a comment\n  beta=0.1   # trailing\n\nepochs = 2\n");
        let file = ConfigFile::load(&path).unwrap();
        assert_eq!(file.get_string("beta").unwrap(), "0.1");
        assert_eq!(file.get_string("epochs").unwrap(), "2");
    }

    #[test]
    fn bad_typed_value_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.conf");
        write(&path, "epochs = soon\n");
        let file = ConfigFile::load(&path).unwrap();
        assert!(file.get_parsed::<usize>("epochs").is_err());
    }

    #[test]
    fn unknown_subcommand_exits_one() {
        assert_eq!(dispatch(["fipo", "frobnicate"]), 1);
        assert_eq!(dispatch(["fipo", "eval", "--bogus-flag"]), 1);
    }

    #[test]
    fn help_exits_zero_and_lists_defaults() {
        assert_eq!(dispatch(["fipo", "--help"]), 0);
        assert_eq!(dispatch(["fipo", "train-pref", "--help"]), 0);
    }
}
