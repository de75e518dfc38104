//! Command-line driver wiring corpus generation, Rational Rules inference,
//! meta-training, and benchmark evaluation into reproducible runs.
//!
//! Every option can come from a `key=value` config file (`--config`), with
//! command-line flags taking precedence over the file and the file over
//! built-in defaults. Unknown file keys are rejected. Each run that writes
//! outputs also writes a `resolved-config.txt` snapshot beside them that is
//! sufficient to re-run the exact command.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric divergence,
//! 4 I/O or file-format error.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use distill::bench::{
    builtin_benchmarks, predict_with_rr_blocks, run_experiment, BenchmarkTable, Experiment,
    ExperimentSpec, Sweep,
};
use distill::episode::{generate_corpus, read_corpus, CorpusConfig, OutlierParam, SupportSize};
use distill::error::{Error, Result};
use distill::grammar::{default_grammar, Object};
use distill::meta::{meta_train, Checkpoint, MetaConfig, MultiStepWeights, OuterOptimizer};
use distill::mlp::MLPConfig;
use distill::rr::{examples_from_pairs, RRConfig};

#[derive(Parser)]
#[command(name = "distill", version, about = "Concept-prior distillation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an episode corpus (train/val/test files plus manifest)
    Gen(GenArgs),
    /// Rational Rules posterior predictive on a benchmark or example file
    Rr(RrArgs),
    /// Meta-train a network initialization on a corpus
    Train(TrainArgs),
    /// Run a benchmark experiment over a checkpoint sweep
    Eval(EvalArgs),
}

/// Key=value file contents plus the set of keys a command recognizes, so
/// unknown keys can be rejected after resolution.
struct FileConfig {
    map: BTreeMap<String, String>,
    known: BTreeSet<String>,
    /// Resolved (key, value) pairs for the snapshot, in resolution order.
    resolved: Vec<(String, String)>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig> {
        let mut map = BTreeMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path)?;
            for (ix, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| Error::Config(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    ix + 1
                )))?;
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(FileConfig { map, known: BTreeSet::new(), resolved: Vec::new() })
    }

    /// Resolve one option: flag > file > default.
    fn get<T: FromStr + Display + Clone>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T> {
        self.known.insert(key.to_string());
        let value = match flag {
            Some(v) => v,
            None => match self.map.get(key) {
                Some(raw) => raw.parse().map_err(|_| {
                    Error::Config(format!("config key {key}: cannot parse {raw:?}"))
                })?,
                None => default,
            },
        };
        self.resolved.push((key.to_string(), value.to_string()));
        Ok(value)
    }

    /// Like [`FileConfig::get`] but with no default: missing means `None`.
    fn get_opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        self.known.insert(key.to_string());
        let value = match flag {
            Some(v) => Some(v),
            None => match self.map.get(key) {
                Some(raw) => Some(raw.parse().map_err(|_| {
                    Error::Config(format!("config key {key}: cannot parse {raw:?}"))
                })?),
                None => None,
            },
        };
        if let Some(v) = &value {
            self.resolved.push((key.to_string(), v.to_string()));
        }
        Ok(value)
    }

    fn get_path(&mut self, key: &str, flag: Option<PathBuf>, default: &str) -> Result<PathBuf> {
        let s = self.get(
            key,
            flag.map(|p| p.to_string_lossy().into_owned()),
            default.to_string(),
        )?;
        Ok(PathBuf::from(s))
    }

    fn get_path_opt(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        let s = self.get_opt(key, flag.map(|p| p.to_string_lossy().into_owned()))?;
        Ok(s.map(PathBuf::from))
    }

    /// A repeatable option: flag occurrences, else comma-separated file value.
    fn get_list(&mut self, key: &str, flag: &[String]) -> Result<Vec<String>> {
        self.known.insert(key.to_string());
        let values: Vec<String> = if !flag.is_empty() {
            flag.to_vec()
        } else {
            match self.map.get(key) {
                Some(raw) => raw.split(',').map(|s| s.trim().to_string()).collect(),
                None => Vec::new(),
            }
        };
        if !values.is_empty() {
            self.resolved.push((key.to_string(), values.join(",")));
        }
        Ok(values)
    }

    /// Reject file keys no resolver asked about.
    fn finish(&self) -> Result<()> {
        for key in self.map.keys() {
            if !self.known.contains(key) {
                return Err(Error::Config(format!("unknown config key {key:?}")));
            }
        }
        Ok(())
    }

    /// Write the resolved-config snapshot beside a run's outputs.
    fn write_snapshot(&self, subcommand: &str, dir: &Path) -> Result<()> {
        let mut text = format!("# distill {subcommand}\n");
        for (key, value) in &self.resolved {
            text.push_str(&format!("{key}={value}\n"));
        }
        fs::create_dir_all(dir)?;
        fs::write(dir.join("resolved-config.txt"), text)?;
        Ok(())
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of binary features
    #[arg(long)]
    features: Option<usize>,
    /// Outlier parameter of the label-flip likelihood
    #[arg(long)]
    b: Option<u32>,
    /// Dirichlet concentration over production probabilities
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Support sizes are uniform over 1..=this
    #[arg(long)]
    support_max: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace existing corpus files
    #[arg(long)]
    overwrite: bool,
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let mut cfg = FileConfig::load(args.config.as_deref())?;
    let features = cfg.get("features", args.features, 4)?;
    let b = cfg.get("b", args.b, 1)?;
    let seed = cfg.get("seed", args.seed, 0)?;
    let mut corpus = CorpusConfig::new(features, OutlierParam(b), seed);
    corpus.dirichlet_alpha = cfg.get("alpha", args.alpha, corpus.dirichlet_alpha)?;
    corpus.n_train = cfg.get("n-train", args.n_train, corpus.n_train)?;
    corpus.n_val = cfg.get("n-val", args.n_val, corpus.n_val)?;
    corpus.n_test = cfg.get("n-test", args.n_test, corpus.n_test)?;
    let support_max = cfg.get("support-max", args.support_max, 20)?;
    corpus.support_size = SupportSize::Uniform { max: support_max };
    let out = cfg.get_path("out", args.out.clone(), "corpus")?;
    cfg.finish()?;

    let grammar = default_grammar(features)?;
    let manifest = generate_corpus(&grammar, &corpus, &out, args.overwrite)?;
    cfg.write_snapshot("gen", &out)?;
    println!("{}", out.join("manifest.json").display());
    println!("digest {}", manifest.digest());
    Ok(())
}

#[derive(Args)]
struct RrArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in benchmark name (e.g. medin-schaffer, ls, shj-i)
    #[arg(long)]
    benchmark: Option<String>,
    /// Example file: one "<bits> <label>" pair per line instead of a benchmark
    #[arg(long)]
    examples: Option<PathBuf>,
    #[arg(long)]
    b: Option<u32>,
    /// Number of identical training-set presentations (b' = b * blocks)
    #[arg(long)]
    blocks: Option<u32>,
    /// Inference method: enum or sample
    #[arg(long)]
    method: Option<String>,
    /// Enumeration bound on total literal count
    #[arg(long)]
    max_literals: Option<usize>,
    /// Importance-sample count for the sampling method
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output format: csv or text
    #[arg(long)]
    format: Option<String>,
    /// Write predictions here instead of stdout (snapshot written beside it)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn find_benchmark(name: &str) -> Result<BenchmarkTable> {
    builtin_benchmarks()
        .into_iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::Config(format!("unknown benchmark {name:?}")))
}

/// Benchmark-shaped table over a whole object space from a user example file.
fn table_from_examples(path: &Path) -> Result<BenchmarkTable> {
    let text = fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (ix, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (bits, label) = (parts.next(), parts.next());
        match (bits, label, parts.next()) {
            (Some(bits), Some(label), None) => {
                let label: u8 = label.parse().map_err(|_| Error::Parse {
                    line: ix + 1,
                    msg: format!("bad label {label:?}"),
                })?;
                pairs.push((bits.to_string(), label));
            }
            _ => {
                return Err(Error::Parse {
                    line: ix + 1,
                    msg: "expected \"<bits> <label>\"".into(),
                })
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Config(format!("{}: no examples", path.display())));
    }
    let borrowed: Vec<(&str, u8)> = pairs.iter().map(|(s, l)| (s.as_str(), *l)).collect();
    let training = examples_from_pairs(&borrowed)?;
    let n_features = training[0].object.len();
    let objects = Object::all(n_features);
    Ok(BenchmarkTable {
        name: "examples".into(),
        n_features,
        row_names: objects.iter().map(|o| o.bitstring()).collect(),
        test_objects: objects,
        test_labels: None,
        columns: Vec::new(),
        training,
    })
}

fn cmd_rr(args: &RrArgs) -> Result<()> {
    let mut cfg = FileConfig::load(args.config.as_deref())?;
    let benchmark = cfg.get_opt("benchmark", args.benchmark.clone())?;
    let examples = cfg.get_path_opt("examples", args.examples.clone())?;
    let b = cfg.get("b", args.b, 1)?;
    let blocks = cfg.get("blocks", args.blocks, 1)?;
    let method = cfg.get("method", args.method.clone(), "enum".to_string())?;
    let max_literals = cfg.get("max-literals", args.max_literals, 5)?;
    let samples = cfg.get("samples", args.samples, 1_000_000)?;
    let seed = cfg.get("seed", args.seed, 0)?;
    let format = cfg.get("format", args.format.clone(), "csv".to_string())?;
    let out = cfg.get_path_opt("out", args.out.clone())?;
    cfg.finish()?;

    let table = match (&benchmark, &examples) {
        (Some(name), None) => find_benchmark(name)?,
        (None, Some(path)) => table_from_examples(path)?,
        _ => {
            return Err(Error::Config(
                "exactly one of benchmark= and examples= is required".into(),
            ))
        }
    };
    let rr_cfg = match method.as_str() {
        "enum" => RRConfig::enumeration(OutlierParam(1), max_literals),
        "sample" => RRConfig::sampling(OutlierParam(1), samples, seed),
        other => return Err(Error::Config(format!("method must be enum or sample, got {other:?}"))),
    };
    if blocks < 1 {
        return Err(Error::Config("blocks must be >= 1".into()));
    }
    let pred = predict_with_rr_blocks(&table, OutlierParam(b), blocks, &rr_cfg)?;
    let mut text = String::new();
    match format.as_str() {
        "csv" => {
            text.push_str("row,object,prob_a\n");
            for (i, row) in table.row_names.iter().enumerate() {
                text.push_str(&format!(
                    "{row},{},{}\n",
                    table.test_objects[i].bitstring(),
                    pred[i]
                ));
            }
        }
        "text" => {
            for (i, row) in table.row_names.iter().enumerate() {
                text.push_str(&format!(
                    "{row} {} P(A) = {:.4}\n",
                    table.test_objects[i].bitstring(),
                    pred[i]
                ));
            }
        }
        other => return Err(Error::Config(format!("format must be csv or text, got {other:?}"))),
    }
    match out {
        Some(path) => {
            fs::write(&path, text)?;
            let dir = path.parent().unwrap_or(Path::new("."));
            cfg.write_snapshot("rr", dir)?;
            println!("{}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus directory containing manifest.json
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Architecture: tiny, baseline, or modified
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    inner_lr: Option<f64>,
    #[arg(long)]
    outer_lr: Option<f64>,
    #[arg(long)]
    inner_epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    passes: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Drop second-order terms from the meta-gradient
    #[arg(long)]
    first_order: bool,
    /// Multi-step query-loss weights: uniform or final
    #[arg(long)]
    multi_step: Option<String>,
    /// Outer optimizer: adam or sgd
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for checkpoint.bin and train.log
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    overwrite: bool,
}

fn arch_config(name: &str, input_dim: usize) -> Result<MLPConfig> {
    match name {
        "tiny" => Ok(MLPConfig::tiny(input_dim)),
        "baseline" => Ok(MLPConfig::baseline(input_dim)),
        "modified" => Ok(MLPConfig::modified(input_dim)),
        other => Err(Error::Config(format!(
            "arch must be tiny, baseline, or modified, got {other:?}"
        ))),
    }
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = FileConfig::load(args.config.as_deref())?;
    let corpus_dir = cfg
        .get_path_opt("corpus", args.corpus.clone())?
        .ok_or_else(|| Error::Config("corpus= is required".into()))?;
    let arch = cfg.get("arch", args.arch.clone(), "baseline".to_string())?;
    let seed = cfg.get("seed", args.seed, 0)?;
    let mut meta = MetaConfig::new(seed);
    meta.inner_lr = cfg.get("inner-lr", args.inner_lr, meta.inner_lr)?;
    meta.outer_lr = cfg.get("outer-lr", args.outer_lr, meta.outer_lr)?;
    meta.inner_epochs_per_episode =
        cfg.get("inner-epochs", args.inner_epochs, meta.inner_epochs_per_episode)?;
    meta.meta_batch_size = cfg.get("batch", args.batch, meta.meta_batch_size)?;
    meta.total_passes = cfg.get("passes", args.passes, meta.total_passes)?;
    meta.patience = cfg.get("patience", args.patience, meta.patience)?;
    meta.first_order = cfg.get(
        "first-order",
        if args.first_order { Some(true) } else { None },
        false,
    )?;
    let multi_step = cfg.get("multi-step", args.multi_step.clone(), "uniform".to_string())?;
    meta.multi_step_weights = match multi_step.as_str() {
        "uniform" => MultiStepWeights::Uniform,
        "final" => MultiStepWeights::FinalOnly,
        other => {
            return Err(Error::Config(format!(
                "multi-step must be uniform or final, got {other:?}"
            )))
        }
    };
    let optimizer = cfg.get("optimizer", args.optimizer.clone(), "adam".to_string())?;
    meta.outer_optimizer = match optimizer.as_str() {
        "adam" => OuterOptimizer::Adam,
        "sgd" => OuterOptimizer::Sgd,
        other => return Err(Error::Config(format!("optimizer must be adam or sgd, got {other:?}"))),
    };
    let out = cfg.get_path("out", args.out.clone(), "run")?;
    cfg.finish()?;

    let manifest_text = fs::read_to_string(corpus_dir.join("manifest.json"))?;
    let manifest: distill::episode::Manifest = serde_json::from_str(&manifest_text)?;
    let train = read_corpus(&corpus_dir.join("train.jsonl"))?;
    let val = read_corpus(&corpus_dir.join("val.jsonl"))?;
    let mlp = arch_config(&arch, manifest.config.n_features)?;

    let ck_path = out.join("checkpoint.bin");
    if ck_path.exists() && !args.overwrite {
        return Err(Error::Config(format!(
            "output {} exists; pass --overwrite to replace it",
            ck_path.display()
        )));
    }
    fs::create_dir_all(&out)?;
    let (checkpoint, log) = meta_train(&train, &val, &mlp, &meta, &manifest.digest())?;
    checkpoint.save(&ck_path)?;
    let log_text: String = log.iter().map(|e| format!("{e}\n")).collect();
    fs::write(out.join("train.log"), log_text)?;
    cfg.write_snapshot("train", &out)?;
    println!("{}", ck_path.display());
    if let Some(last) = log.last() {
        println!("{last}");
    }
    Ok(())
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment: medin-schaffer, ls-nls, shj, or medin82
    #[arg(long)]
    experiment: Option<String>,
    /// Sweep axis, e.g. "b=1..8" or "epochs=1..8"
    #[arg(long)]
    sweep: Option<String>,
    /// Checkpoint path; repeatable. For b sweeps use "B=PATH" entries.
    #[arg(long = "checkpoint")]
    checkpoints: Vec<String>,
    /// Also run the Rational Rules predictor at each sweep point
    #[arg(long)]
    rr: bool,
    /// Enumeration bound for the Rational Rules predictor
    #[arg(long)]
    max_literals: Option<usize>,
    /// Output format for the printed summary: csv or text
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parse "axis=lo..hi" into (axis, points).
fn parse_sweep(spec: &str) -> Result<(&str, Vec<u32>)> {
    let err = || Error::Config(format!("sweep must look like b=1..8 or epochs=1..8, got {spec:?}"));
    let (axis, range) = spec.split_once('=').ok_or_else(err)?;
    let (lo, hi) = range.split_once("..").ok_or_else(err)?;
    let (lo, hi): (u32, u32) = (lo.parse().map_err(|_| err())?, hi.parse().map_err(|_| err())?);
    if lo < 1 || hi < lo {
        return Err(err());
    }
    Ok((axis, (lo..=hi).collect()))
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let mut cfg = FileConfig::load(args.config.as_deref())?;
    let experiment: Experiment = cfg
        .get_opt("experiment", args.experiment.clone())?
        .ok_or_else(|| Error::Config("experiment= is required".into()))?
        .parse()?;
    let sweep_spec = cfg.get("sweep", args.sweep.clone(), "b=1..8".to_string())?;
    let ck_specs = cfg.get_list("checkpoint", &args.checkpoints)?;
    let include_rr = cfg.get("rr", if args.rr { Some(true) } else { None }, false)?;
    let max_literals = cfg.get("max-literals", args.max_literals, 4)?;
    let format = cfg.get("format", args.format.clone(), "csv".to_string())?;
    let out = cfg.get_path("out", args.out.clone(), "eval-out")?;
    cfg.finish()?;

    if ck_specs.is_empty() {
        return Err(Error::Config("at least one checkpoint= is required".into()));
    }
    let (axis, points) = parse_sweep(&sweep_spec)?;
    let sweep = match axis {
        "b" => {
            let mut map: BTreeMap<u32, Vec<Checkpoint>> = BTreeMap::new();
            for spec in &ck_specs {
                let (b, path) = spec.split_once('=').ok_or_else(|| {
                    Error::Config(format!("b sweep needs B=PATH checkpoint entries, got {spec:?}"))
                })?;
                let b: u32 = b
                    .parse()
                    .map_err(|_| Error::Config(format!("bad b in checkpoint entry {spec:?}")))?;
                map.entry(b).or_default().push(Checkpoint::load(Path::new(path))?);
            }
            Sweep::OutlierB { points, checkpoints: map }
        }
        "epochs" => {
            let mut cks = Vec::new();
            for spec in &ck_specs {
                if spec.contains('=') {
                    return Err(Error::Config(format!(
                        "epochs sweep takes plain checkpoint paths, got {spec:?}"
                    )));
                }
                cks.push(Checkpoint::load(Path::new(spec))?);
            }
            Sweep::Epochs { points, checkpoints: cks }
        }
        other => return Err(Error::Config(format!("sweep axis must be b or epochs, got {other:?}"))),
    };

    let spec = ExperimentSpec { experiment, sweep, include_rr, rr_max_literals: max_literals };
    let report = run_experiment(&spec, Some(&out))?;
    cfg.write_snapshot("eval", &out)?;
    match format.as_str() {
        "csv" => {
            print!("benchmark,axis,point,stat,value\n");
            for row in &report.summary {
                println!("{},{},{},{},{}", row.benchmark, row.axis, row.point, row.stat, row.value);
            }
        }
        "text" => {
            for row in &report.summary {
                println!("{row}");
            }
        }
        other => return Err(Error::Config(format!("format must be csv or text, got {other:?}"))),
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_)
        | Error::Json(_)
        | Error::Corrupted(_)
        | Error::Parse { .. }
        | Error::VersionMismatch { .. } => 4,
        Error::Divergence(_)
        | Error::InferenceDegenerate
        | Error::SamplingDiverged(_)
        | Error::ResourceExhausted(..) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Rr(args) => cmd_rr(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
