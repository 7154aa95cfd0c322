//! Config-driven experiment runs: the five commands behind the `relpred`
//! binary, plus the TOML [`RunConfig`] they share.
//!
//! Every command writes into the run's output directory:
//!
//! ```text
//! <out>/config.toml          resolved config snapshot
//! <out>/vocab.json           tokenizer vocabulary
//! <out>/model.ckpt           final checkpoint
//! <out>/checkpoints/         one checkpoint per finished epoch
//! <out>/reports/             stats.json, train.jsonl, metrics.json, ranks.csv,
//!                            failures.csv, failures.txt
//! <out>/inductive/           train/valid/test.tsv, provenance.json,
//!                            verification.txt, and reports/ or run/
//! ```

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{worst_predictions, write_failure_csv, FailureRow, FailureTable, RankKind};
use crate::error::{Error, Result};
use crate::kg_data::{build_dataset, write_file, DatasetStats, KnowledgeGraphDataset, NameNormalization};
use crate::metrics::{evaluate_with_policy, write_rank_csv, MetricsReport, TiePolicy, DEFAULT_HITS};
use crate::model::{ClassifierState, ModelConfig};
use crate::splits::{make_inductive, verify_inductive, Provenance, VerificationReport};
use crate::tokenizer::{train_vocabulary, Vocabulary};
use crate::trainer::{train_with_observer, EpochRecord, TrainConfig, TrainObserver, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    pub names: PathBuf,
    #[serde(default)]
    pub normalization: NameNormalization,
    /// Label recorded in inductive split provenance.
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSection {
    pub max_size: usize,
    pub pad_len: usize,
    /// Load this vocabulary instead of training one on the name table.
    pub vocab: Option<PathBuf>,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        Self {
            max_size: 8000,
            pad_len: 50,
            vocab: None,
        }
    }
}

/// Architecture fields of [`ModelConfig`]; the rest come from the data,
/// the vocabulary, and the global seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub feedforward_dim: usize,
    pub dropout_rate: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
            feedforward_dim: 256,
            dropout_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub hits: Vec<usize>,
    pub tie_policy: TiePolicy,
    pub failure_rank: RankKind,
    pub failures_k: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            hits: DEFAULT_HITS.to_vec(),
            tie_policy: TiePolicy::Optimistic,
            failure_rank: RankKind::Filtered,
            failures_k: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InductiveSection {
    pub fraction: f64,
}

impl Default for InductiveSection {
    fn default() -> Self {
        Self { fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialization, dropout, shuffling, and split sampling.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub data: DataSection,
    #[serde(default)]
    pub tokenizer: TokenizerSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub inductive: InductiveSection,
    #[serde(skip)]
    pub quiet: bool,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

fn set_key(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|p| !p.is_empty()).ok_or_else(|| Error::Config(format!("empty key in override {key:?}")))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{p} in {key:?} is not a section")))?;
    }
    cur.insert(last.to_owned(), value);
    Ok(())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    let joined = base.join(&*p);
    let absolute = std::path::absolute(&joined).unwrap_or(joined);
    *p = absolute.components().collect();
}

impl RunConfig {
    /// Parses TOML text, applies `key=value` overrides (dotted keys such as
    /// `train.learning_rate=1e-3`), resolves relative paths against
    /// `base_dir`, and propagates the global seed.
    pub fn from_toml_str(text: &str, base_dir: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        for (k, v) in overrides {
            set_key(&mut table, k, parse_value(v))?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid config: {e}")))?;
        for p in [
            &mut cfg.data.train,
            &mut cfg.data.valid,
            &mut cfg.data.test,
            &mut cfg.data.names,
            &mut cfg.out,
        ] {
            resolve(base_dir, p);
        }
        if let Some(v) = &mut cfg.tokenizer.vocab {
            resolve(base_dir, v);
        }
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base, overrides)
    }

    /// A config for the four files `train.tsv`, `valid.tsv`, `test.tsv`,
    /// `names.tsv` in `dir`, with defaults elsewhere.
    pub fn for_data_dir(dir: &Path, out: &Path) -> Self {
        Self {
            seed: 0,
            out: out.to_owned(),
            data: DataSection {
                train: dir.join("train.tsv"),
                valid: dir.join("valid.tsv"),
                test: dir.join("test.tsv"),
                names: dir.join("names.tsv"),
                normalization: NameNormalization::Verbatim,
                source: dir.display().to_string(),
            },
            tokenizer: TokenizerSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            inductive: InductiveSection::default(),
            quiet: false,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.shuffle_seed = seed;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable in TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let missing: Vec<String> = [&self.data.train, &self.data.valid, &self.data.test, &self.data.names]
            .into_iter()
            .chain(self.tokenizer.vocab.as_ref())
            .filter(|p| !p.is_file())
            .map(|p| p.display().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!("missing input files: {}", missing.join(", "))));
        }
        self.train.validate()?;
        if self.eval.hits.is_empty() || self.eval.hits.contains(&0) {
            return Err(Error::Config("eval.hits must be a non-empty list of positive levels".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize, num_relations: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            pad_len: self.tokenizer.pad_len,
            embed_dim: self.model.embed_dim,
            num_layers: self.model.num_layers,
            num_heads: self.model.num_heads,
            feedforward_dim: self.model.feedforward_dim,
            num_relations,
            dropout_rate: self.model.dropout_rate,
            seed: self.seed,
        }
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out.join("reports")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out.join("model.ckpt")
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.tokenizer.vocab.clone().unwrap_or_else(|| self.out.join("vocab.json"))
    }

    fn say(&self, text: impl std::fmt::Display) {
        if !self.quiet {
            println!("{text}");
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    create_dir(&cfg.reports_dir())?;
    write_file(&cfg.out.join("config.toml"), cfg.to_toml().as_bytes())
}

pub fn load_dataset(cfg: &RunConfig) -> Result<KnowledgeGraphDataset> {
    cfg.validate()?;
    let d = &cfg.data;
    build_dataset(&d.train, &d.valid, &d.test, &d.names, d.normalization)
}

pub fn cmd_stats(cfg: &RunConfig) -> Result<DatasetStats> {
    let dataset = load_dataset(cfg)?;
    let stats = dataset.stats();
    prepare_out(cfg)?;
    let json = serde_json::to_string_pretty(&stats)?;
    write_file(&cfg.reports_dir().join("stats.json"), json.as_bytes())?;
    cfg.say(stats);
    Ok(stats)
}

/// Loads the configured vocabulary, or trains one on the entity names.
/// The result is always written to `<out>/vocab.json`.
fn vocabulary_for(cfg: &RunConfig, dataset: &KnowledgeGraphDataset) -> Result<Vocabulary> {
    let vocab = match &cfg.tokenizer.vocab {
        Some(p) => Vocabulary::load(p)?,
        None => train_vocabulary(dataset.names.iter(), cfg.tokenizer.max_size)?,
    };
    vocab.save(&cfg.out.join("vocab.json"))?;
    Ok(vocab)
}

struct EpochCheckpoints {
    dir: PathBuf,
}

impl TrainObserver for EpochCheckpoints {
    fn on_epoch_end(&mut self, record: &EpochRecord, state: &ClassifierState) -> Result<()> {
        state.save(&self.dir.join(format!("epoch-{:03}.ckpt", record.epoch)))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub checkpoint: PathBuf,
    pub state: ClassifierState,
}

fn train_on(cfg: &RunConfig, dataset: &KnowledgeGraphDataset) -> Result<TrainOutcome> {
    prepare_out(cfg)?;
    let vocab = vocabulary_for(cfg, dataset)?;
    let state = ClassifierState::init(cfg.model_config(vocab.len(), dataset.num_relations()))?;
    let dir = cfg.out.join("checkpoints");
    create_dir(&dir)?;
    log::info!(
        "training {} parameters on {} triples",
        state.num_params(),
        dataset.train.len()
    );
    let mut observer = EpochCheckpoints { dir };
    let (state, mut report) =
        train_with_observer(dataset, state, &cfg.train, &vocab, cfg.tokenizer.pad_len, &mut observer)?;
    let checkpoint = cfg.checkpoint_path();
    state.save(&checkpoint)?;
    report.checkpoint = Some(checkpoint.clone());
    write_file(&cfg.reports_dir().join("train.jsonl"), report.to_json_lines().as_bytes())?;
    cfg.say(report.summary().trim_end());
    Ok(TrainOutcome {
        report,
        checkpoint,
        state,
    })
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let dataset = load_dataset(cfg)?;
    train_on(cfg, &dataset)
}

fn load_model(cfg: &RunConfig, dataset: &KnowledgeGraphDataset, checkpoint: &Path) -> Result<(ClassifierState, Vocabulary)> {
    let vocab_path = cfg.vocab_path();
    if !vocab_path.is_file() {
        return Err(Error::Config(format!(
            "no vocabulary at {}; run `train` first or set tokenizer.vocab",
            vocab_path.display()
        )));
    }
    let vocab = Vocabulary::load(&vocab_path)?;
    let expected = cfg.model_config(vocab.len(), dataset.num_relations());
    let state = ClassifierState::load_expecting(checkpoint, &expected)?;
    Ok((state, vocab))
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub records: Vec<crate::metrics::RankRecord>,
}

fn evaluate_into(
    cfg: &RunConfig,
    dataset: &KnowledgeGraphDataset,
    state: &ClassifierState,
    vocab: &Vocabulary,
    reports: &Path,
) -> Result<Evaluation> {
    let (report, records) = evaluate_with_policy(
        state,
        dataset,
        &dataset.test,
        &dataset.index,
        vocab,
        cfg.tokenizer.pad_len,
        &cfg.eval.hits,
        cfg.eval.tie_policy,
    )?;
    create_dir(reports)?;
    write_file(&reports.join("metrics.json"), report.to_json().as_bytes())?;
    write_rank_csv(&reports.join("ranks.csv"), &records, dataset)?;
    cfg.say(&report);
    Ok(Evaluation { report, records })
}

/// Evaluates `checkpoint` (default `<out>/model.ckpt`) on the test split.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Evaluation> {
    let dataset = load_dataset(cfg)?;
    let checkpoint = checkpoint.map_or_else(|| cfg.checkpoint_path(), Path::to_owned);
    let (state, vocab) = load_model(cfg, &dataset, &checkpoint)?;
    prepare_out(cfg)?;
    evaluate_into(cfg, &dataset, &state, &vocab, &cfg.reports_dir())
}

/// What to do with the inductive split once it is written.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum InductiveModel {
    /// Only generate and verify the split.
    #[default]
    None,
    /// Train a fresh model on the pruned training split, into `<out>/inductive/run`.
    Retrain,
    /// Evaluate an existing checkpoint on the inductive test split.
    Reuse(PathBuf),
}

#[derive(Debug, Clone)]
pub struct InductiveOutcome {
    pub provenance: Provenance,
    pub verification: VerificationReport,
    pub evaluation: Option<Evaluation>,
}

pub fn cmd_inductive(cfg: &RunConfig, model: &InductiveModel) -> Result<InductiveOutcome> {
    let dataset = load_dataset(cfg)?;
    let split = make_inductive(&dataset, cfg.inductive.fraction, cfg.seed)?.with_source(cfg.data.source.clone());
    let verification = verify_inductive(&split);
    prepare_out(cfg)?;
    let dir = cfg.out.join("inductive");
    split.write(&dir, &dataset)?;
    write_file(&dir.join("verification.txt"), format!("{verification}\n").as_bytes())?;
    let c = &split.provenance.counts;
    cfg.say(format!(
        "inductive split: {} train, {} valid, {} test ({} train and {} valid triples removed)",
        c.train, c.valid, c.test, c.removed_train, c.removed_valid
    ));
    cfg.say(&verification);
    if !verification.passed() {
        return Err(Error::Consistency("inductive split failed verification".into()));
    }
    if !split.unseen_test_relations.is_empty() {
        log::warn!(
            "{} test relations no longer occur in training",
            split.unseen_test_relations.len()
        );
    }

    let inductive = split.to_dataset(&dataset);
    let evaluation = match model {
        InductiveModel::None => None,
        InductiveModel::Retrain => {
            let mut run = cfg.clone();
            run.out = dir.join("run");
            let outcome = train_on(&run, &inductive)?;
            let vocab = Vocabulary::load(&run.out.join("vocab.json"))?;
            Some(evaluate_into(&run, &inductive, &outcome.state, &vocab, &run.reports_dir())?)
        }
        InductiveModel::Reuse(checkpoint) => {
            let (state, vocab) = load_model(cfg, &inductive, checkpoint)?;
            Some(evaluate_into(cfg, &inductive, &state, &vocab, &dir.join("reports"))?)
        }
    };
    Ok(InductiveOutcome {
        provenance: split.provenance,
        verification,
        evaluation,
    })
}

/// Evaluates, then reports the `k` (default `eval.failures_k`) worst-ranked
/// test triples.
pub fn cmd_failures(cfg: &RunConfig, checkpoint: Option<&Path>, k: Option<usize>) -> Result<Vec<FailureRow>> {
    let k = k.unwrap_or(cfg.eval.failures_k);
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let dataset = load_dataset(cfg)?;
    let checkpoint = checkpoint.map_or_else(|| cfg.checkpoint_path(), Path::to_owned);
    let (state, vocab) = load_model(cfg, &dataset, &checkpoint)?;
    prepare_out(cfg)?;
    let quiet = RunConfig {
        quiet: true,
        ..cfg.clone()
    };
    let eval = evaluate_into(&quiet, &dataset, &state, &vocab, &cfg.reports_dir())?;
    let rows = worst_predictions(&eval.records, &dataset, k, cfg.eval.failure_rank)?;
    let table = FailureTable(&rows).to_string();
    write_failure_csv(&cfg.reports_dir().join("failures.csv"), &rows)?;
    write_file(&cfg.reports_dir().join("failures.txt"), table.as_bytes())?;
    cfg.say(table.trim_end());
    Ok(rows)
}

#[derive(Debug, Parser)]
#[command(name = "relpred", version, about = "Relation prediction from entity names")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, default_value = "relpred.toml")]
    pub config: PathBuf,
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Only print errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    /// Overrides any config key, e.g. `--set train.epochs=2`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_override)]
    pub overrides: Vec<(String, String)>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_override(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))
}

#[derive(Debug, Args)]
pub struct CheckpointArg {
    /// Checkpoint to load; defaults to `<out>/model.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print split, entity, and relation counts.
    Stats,
    /// Train a classifier and write checkpoints and a loss report.
    Train,
    /// Rank test relations and write metrics and per-query ranks.
    Evaluate(CheckpointArg),
    /// Build and verify an entity-inductive split.
    Inductive {
        /// Fraction of test triples to keep.
        #[arg(long)]
        fraction: Option<f64>,
        /// Train and evaluate a fresh model on the split.
        #[arg(long, conflicts_with = "checkpoint")]
        retrain: bool,
        /// Evaluate this existing checkpoint on the split.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// List the worst-ranked test triples.
    Failures {
        #[command(flatten)]
        checkpoint: CheckpointArg,
        /// Number of rows.
        #[arg(short, long)]
        k: Option<usize>,
    },
}

impl Cli {
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Command::Inductive { fraction: Some(f), .. } = &self.command {
            overrides.push(("inductive.fraction".into(), f.to_string()));
        }
        let mut cfg = RunConfig::load(&self.config, &overrides)?;
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
            resolve(Path::new(""), &mut cfg.out);
        }
        cfg.quiet = self.quiet;
        Ok(cfg)
    }

    pub fn execute(&self) -> Result<()> {
        let cfg = self.run_config()?;
        match &self.command {
            Command::Stats => cmd_stats(&cfg).map(drop),
            Command::Train => cmd_train(&cfg).map(drop),
            Command::Evaluate(c) => cmd_evaluate(&cfg, c.checkpoint.as_deref()).map(drop),
            Command::Inductive {
                retrain, checkpoint, ..
            } => {
                let model = match (retrain, checkpoint) {
                    (true, _) => InductiveModel::Retrain,
                    (false, Some(p)) => InductiveModel::Reuse(p.clone()),
                    (false, None) => InductiveModel::None,
                };
                cmd_inductive(&cfg, &model).map(drop)
            }
            Command::Failures { checkpoint, k } => cmd_failures(&cfg, checkpoint.checkpoint.as_deref(), *k).map(drop),
        }
    }
}

/// Parses arguments, runs the command, and returns the process exit code:
/// 0 success, 1 usage or config error, 2 data error, 3 runtime error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_secs()
        .try_init();
    match cli.execute() {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
