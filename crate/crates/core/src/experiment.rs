//! Experiment configuration and the end-to-end protocols behind the `trade`
//! command: corpus synthesis, training, evaluation, zero-shot transfer and
//! few-shot fine-tuning.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::continual::{finetune, fisher_diag, ContinualError, EpisodicMemory, FinetuneSets, Regularizer, Strategy};
use crate::corpus::synth::{synth_splits, SynthSpec};
use crate::corpus::{exclude_domain, load_corpus, sample_fraction, save_corpus, Corpus, CorpusError, DomainSlot, Vocabulary};
use crate::eval::{
    all_none_evals, embedding_similarity, evaluate, write_predictions, EvalError, MetricReport, SlotDenominator, TurnEval,
};
use crate::model::{examples_of, Example, ModelConfig, ModelError, TradeModel};
use crate::train::{train, EpochLog, Plain, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl ExperimentError {
    /// Process exit code: 1 for configuration problems, 2 for failures at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 1,
            ExperimentError::Runtime(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, ExperimentError>;

fn config_err(m: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(m.into())
}

fn runtime(m: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Runtime(m.to_string())
}

impl From<CorpusError> for ExperimentError {
    fn from(e: CorpusError) -> Self {
        // Corpus problems come from user-supplied files or settings.
        ExperimentError::Config(e.to_string())
    }
}

impl From<ModelError> for ExperimentError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::Corpus(_) => ExperimentError::Config(e.to_string()),
            _ => ExperimentError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for ExperimentError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => ExperimentError::Config(m),
            TrainError::Model(m) => m.into(),
            other => ExperimentError::Runtime(other.to_string()),
        }
    }
}

impl From<EvalError> for ExperimentError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            other => ExperimentError::Runtime(other.to_string()),
        }
    }
}

impl From<CheckpointError> for ExperimentError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Model(m) => m.into(),
            other => ExperimentError::Config(other.to_string()),
        }
    }
}

impl From<ContinualError> for ExperimentError {
    fn from(e: ContinualError) -> Self {
        match e {
            ContinualError::Config(m) => ExperimentError::Config(m),
            ContinualError::Model(m) => m.into(),
            other => ExperimentError::Runtime(other.to_string()),
        }
    }
}

/// Independent seed for one named component of a run.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut x = seed ^ h;
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Corpus files; give all three or none. Without them the corpus is synthesized.
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub synth: SynthSpec,
    /// Train / valid / test dialogue counts for the synthesized corpus.
    pub splits: [usize; 3],
    pub vocab_min_freq: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: None,
            valid: None,
            test: None,
            synth: SynthSpec::default(),
            splits: [300, 50, 50],
            vocab_min_freq: 1,
        }
    }
}

impl DataConfig {
    fn validate(&self) -> Result<()> {
        let given = [&self.train, &self.valid, &self.test].iter().filter(|p| p.is_some()).count();
        if given != 0 && given != 3 {
            return Err(config_err("data: give train, valid and test paths together, or none"));
        }
        if given == 0 {
            self.synth.validate()?;
            if self.splits.iter().any(|&n| n == 0) {
                return Err(config_err("data.splits: every split needs at least one dialogue"));
            }
        }
        if self.vocab_min_freq == 0 {
            return Err(config_err("data.vocab_min_freq must be at least 1"));
        }
        Ok(())
    }

    /// Train, valid and test corpora, all labeled against one registry.
    pub fn load(&self, seed: u64) -> Result<[Corpus; 3]> {
        self.validate()?;
        match (&self.train, &self.valid, &self.test) {
            (Some(a), Some(b), Some(c)) => {
                let splits = [load_corpus(a)?, load_corpus(b)?, load_corpus(c)?];
                if splits[1].ontology() != splits[0].ontology() || splits[2].ontology() != splits[0].ontology() {
                    return Err(config_err("train, valid and test corpora use different ontologies"));
                }
                Ok(splits)
            }
            _ => Ok(synth_splits(&self.synth, self.splits, derive_seed(seed, "data"))?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZeroShotConfig {
    pub heldout: String,
}

impl Default for ZeroShotConfig {
    fn default() -> Self {
        ZeroShotConfig { heldout: "hotel".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub target: String,
    /// Share of the target domain's training dialogues used for fine-tuning.
    pub fraction: f64,
    pub strategy: Strategy,
    /// Fixed EWC strength; when absent the grid is searched on validation.
    pub lambda: Option<f64>,
    pub lambda_grid: Vec<f64>,
    /// Share of source training turns kept as GEM memory.
    pub memory_fraction: f64,
    /// Source training turns used for the Fisher estimate (0 = all).
    pub fisher_samples: usize,
    /// Also train a fresh model on the same few-shot data.
    pub scratch_baseline: bool,
    pub train: TrainConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            target: "hotel".into(),
            fraction: 0.01,
            strategy: Strategy::Gem,
            lambda: None,
            lambda_grid: vec![1e2, 1e4, 1e6, 1e8],
            memory_fraction: 0.01,
            fisher_samples: 256,
            scratch_baseline: true,
            train: TrainConfig {
                epochs: 20,
                batch_size: 4,
                lr: 1e-3,
                lr_min: 1e-4,
                patience: usize::MAX,
                warmup_epochs: usize::MAX,
                restore_best: false,
                ..TrainConfig::default()
            },
        }
    }
}

impl FinetuneConfig {
    fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(config_err(format!("finetune.fraction {} not in (0, 1]", self.fraction)));
        }
        if !(self.memory_fraction > 0.0 && self.memory_fraction <= 1.0) {
            return Err(config_err(format!("finetune.memory_fraction {} not in (0, 1]", self.memory_fraction)));
        }
        for &l in self.lambda.iter().chain(&self.lambda_grid) {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(config_err(format!("EWC lambda {l} must be finite and >= 0")));
            }
        }
        if self.strategy == Strategy::Ewc && self.lambda.is_none() && self.lambda_grid.is_empty() {
            return Err(config_err("EWC needs finetune.lambda or a non-empty finetune.lambda_grid"));
        }
        self.train.validate()?;
        Ok(())
    }
}

/// Everything a run depends on besides the data files themselves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub slot_denominator: SlotDenominator,
    /// Train without this domain: its dialogues are dropped and its pairs are
    /// neither trained nor scored.
    pub exclude: Option<String>,
    pub zeroshot: ZeroShotConfig,
    pub finetune: FinetuneConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            data: DataConfig::default(),
            model: ModelConfig::desk(),
            train: TrainConfig::desk(),
            slot_denominator: SlotDenominator::AllPairs,
            exclude: None,
            zeroshot: ZeroShotConfig::default(),
            finetune: FinetuneConfig::default(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_err(format!("experiment config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        self.finetune.validate()?;
        Ok(())
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ExperimentError {
    runtime(format!("{}: {e}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(runtime)?;
    s.push('\n');
    write_text(path, &s)
}

fn write_dump(path: &Path, evals: &[TurnEval]) -> Result<()> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    write_predictions(evals, &mut w)?;
    w.flush().map_err(|e| io_err(path, e))
}

fn require_domain(corpus: &Corpus, domain: &str) -> Result<()> {
    if corpus.ontology().has_domain(domain) {
        Ok(())
    } else {
        Err(config_err(format!("unknown domain {domain:?}; registry has {:?}", corpus.ontology().domains())))
    }
}

fn registry_of(model: &TradeModel, pairs: &[usize]) -> Vec<DomainSlot> {
    pairs.iter().map(|&j| model.ontology.pairs()[j].clone()).collect()
}

fn pairs_except(model: &TradeModel, domain: Option<&str>) -> Vec<usize> {
    let keep: Vec<&str> =
        model.ontology.domains().iter().map(String::as_str).filter(|d| Some(*d) != domain).collect();
    model.pairs_in(&keep)
}

/// Metric report plus the per-turn records it came from.
pub struct Scored {
    pub report: MetricReport,
    pub evals: Vec<TurnEval>,
}

pub fn score(
    model: &TradeModel,
    examples: &[Example],
    pairs: &[usize],
    denominator: SlotDenominator,
) -> Result<Scored> {
    let evals = evaluate(model, examples, pairs)?;
    let report = MetricReport::from_evals(&evals, &registry_of(model, pairs), denominator)?;
    Ok(Scored { report, evals })
}

/// Source examples the Fisher estimate is computed on.
fn fisher_subset(examples: &[Example], limit: usize, seed: u64) -> Vec<Example> {
    if limit == 0 || limit >= examples.len() {
        return examples.to_vec();
    }
    let mut idx: Vec<usize> = (0..examples.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(limit);
    idx.sort_unstable();
    idx.into_iter().map(|i| examples[i].clone()).collect()
}

/// Outcome of [`train_run`].
pub struct TrainedRun {
    /// Best-validation model, with the Fisher estimate and GEM memory of its
    /// training data attached.
    pub checkpoint: Checkpoint,
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub pairs: Vec<usize>,
    pub valid: Scored,
    pub test: Scored,
    /// Set when training stopped on a non-finite loss; the checkpoint then
    /// holds the last good parameters.
    pub diverged: Option<String>,
}

/// Builds the vocabulary and model, trains, and scores valid and test.
/// With `exclude` the domain's dialogues are dropped from every split and
/// only the remaining pairs are trained and scored.
pub fn train_run(
    cfg: &ExperimentConfig,
    splits: &[Corpus; 3],
    exclude: Option<&str>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainedRun> {
    cfg.validate()?;
    let kept: Vec<Corpus> = match exclude {
        None => splits.to_vec(),
        Some(d) => {
            require_domain(&splits[0], d)?;
            splits.iter().map(|c| exclude_domain(c, d).map(|(rest, _)| rest)).collect::<std::result::Result<_, _>>()?
        }
    };
    if kept[0].is_empty() || kept[1].is_empty() {
        return Err(config_err("training and validation splits need at least one dialogue"));
    }
    let vocab = Vocabulary::build(&kept[0], cfg.data.vocab_min_freq);
    let mut model =
        TradeModel::new(cfg.model.clone(), vocab, kept[0].ontology().clone(), derive_seed(cfg.seed, "init"))?;
    let pairs = pairs_except(&model, exclude);
    let window = model.config.history;
    let train_ex = examples_of(&kept[0], window, &model.vocab)?;
    let valid_ex = examples_of(&kept[1], window, &model.vocab)?;
    let test_ex = examples_of(&kept[2], window, &model.vocab)?;

    let result = train(
        &mut model,
        &train_ex,
        &pairs,
        &valid_ex,
        &pairs,
        &cfg.train,
        derive_seed(cfg.seed, "train"),
        &mut Plain,
        &[],
        |log, _| on_epoch(log),
    );
    let (logs, best_epoch, diverged) = match result {
        Ok(out) => (out.logs, out.best_epoch, None),
        Err(TrainError::Diverged { epoch, reason }) => {
            (Vec::new(), 0, Some(format!("training diverged at epoch {epoch}: {reason}")))
        }
        Err(e) => return Err(e.into()),
    };

    let mut checkpoint = Checkpoint::new(model);
    if diverged.is_none() {
        let sample = fisher_subset(&train_ex, cfg.finetune.fisher_samples, derive_seed(cfg.seed, "fisher"));
        checkpoint.fisher = Some(fisher_diag(&checkpoint.model, &sample, &pairs)?);
        checkpoint.memory =
            Some(EpisodicMemory::sample(&train_ex, cfg.finetune.memory_fraction, derive_seed(cfg.seed, "memory"))?);
    }
    let model = &checkpoint.model;
    let trained: Vec<String> = registry_of(model, &pairs).iter().map(|p| p.key().joined()).collect();
    checkpoint.meta.insert("seed".into(), serde_json::json!(cfg.seed));
    checkpoint.meta.insert("excluded_domain".into(), serde_json::json!(exclude));
    checkpoint.meta.insert("trained_pairs".into(), serde_json::json!(trained));
    checkpoint.meta.insert("best_epoch".into(), serde_json::json!(best_epoch));
    let valid = score(model, &valid_ex, &pairs, cfg.slot_denominator)?;
    let test = if test_ex.is_empty() {
        return Err(config_err("test split has no dialogues left"));
    } else {
        score(model, &test_ex, &pairs, cfg.slot_denominator)?
    };
    Ok(TrainedRun { checkpoint, logs, best_epoch, pairs, valid, test, diverged })
}

/// Writes train, valid and test corpora; returns their paths.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<[PathBuf; 3]> {
    cfg.validate()?;
    let splits = cfg.data.load(cfg.seed)?;
    ensure_dir(out)?;
    let names = ["train.json", "valid.json", "test.json"];
    let mut paths = names.map(|n| out.join(n));
    for (c, p) in splits.iter().zip(&mut paths) {
        save_corpus(c, &p).map_err(|e| io_err(p, e))?;
    }
    Ok(paths)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub excluded_domain: Option<String>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub valid: MetricReport,
    pub test: MetricReport,
}

/// Trains on the configured data and writes `checkpoint.json`,
/// `train_log.csv`, `report.json`, `test_predictions.jsonl` and
/// `slot_similarity.csv` into `out`. A diverged run still leaves the last
/// good checkpoint behind before reporting a runtime error.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    let splits = cfg.data.load(cfg.seed)?;
    ensure_dir(out)?;
    let log_path = out.join("train_log.csv");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| io_err(&log_path, e))?);
    writeln!(log, "{}", EpochLog::CSV_HEADER).map_err(|e| io_err(&log_path, e))?;
    let mut log_err = None;
    let run = train_run(cfg, &splits, cfg.exclude.as_deref(), |e| {
        if let Err(err) = writeln!(log, "{}", e.csv_row()).and_then(|_| log.flush()) {
            log_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = log_err {
        return Err(io_err(&log_path, e));
    }
    run.checkpoint.save(out.join("checkpoint.json")).map_err(runtime)?;
    if let Some(reason) = run.diverged {
        return Err(runtime(format!("{reason}; last good checkpoint kept in {}", out.display())));
    }
    let report = TrainReport {
        seed: cfg.seed,
        excluded_domain: cfg.exclude.clone(),
        best_epoch: run.best_epoch,
        epochs_run: run.logs.len(),
        valid: run.valid.report,
        test: run.test.report,
    };
    write_json(&out.join("report.json"), &report)?;
    write_dump(&out.join("test_predictions.jsonl"), &run.test.evals)?;
    write_text(&out.join("slot_similarity.csv"), &embedding_similarity(&run.checkpoint.model.slot_embeddings()).to_csv())?;
    Ok(report)
}

/// Scores a checkpoint on a corpus file. With `domain`, only dialogues
/// touching it are read and only its pairs are scored. Writes `report.json`
/// and `predictions.jsonl` into `out`.
pub fn cmd_eval(
    checkpoint: &Path,
    corpus: &Path,
    domain: Option<&str>,
    denominator: SlotDenominator,
    out: &Path,
) -> Result<MetricReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let corpus = load_corpus(corpus)?;
    if corpus.ontology() != &ck.model.ontology {
        return Err(config_err("corpus ontology differs from the checkpoint's"));
    }
    let (corpus, pairs) = match domain {
        None => (corpus, ck.model.all_pairs()),
        Some(d) => {
            require_domain(&corpus, d)?;
            let filtered = corpus.filter_domain(d)?;
            if filtered.is_empty() {
                return Err(config_err(format!("no dialogues touch domain {d:?}")));
            }
            (filtered, ck.model.pairs_in(&[d]))
        }
    };
    if corpus.is_empty() {
        return Err(config_err("corpus has no dialogues"));
    }
    let examples = examples_of(&corpus, ck.model.config.history, &ck.model.vocab)?;
    let scored = score(&ck.model, &examples, &pairs, denominator)?;
    ensure_dir(out)?;
    write_json(&out.join("report.json"), &scored.report)?;
    write_dump(&out.join("predictions.jsonl"), &scored.evals)?;
    Ok(scored.report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub heldout_domain: String,
    /// Trained domains on their own test dialogues.
    pub seen: MetricReport,
    /// Held-out pairs on test dialogues touching the held-out domain.
    pub heldout: MetricReport,
    /// Predicting NONE for every held-out pair on the same turns.
    pub all_none_baseline: MetricReport,
    pub margin_over_baseline: f64,
}

/// Held-out evaluation of a model trained without `heldout`.
pub fn zeroshot_report(
    model: &TradeModel,
    test: &Corpus,
    heldout: &str,
    seen: MetricReport,
    denominator: SlotDenominator,
) -> Result<(ZeroShotReport, Vec<TurnEval>)> {
    require_domain(test, heldout)?;
    let held = test.filter_domain(heldout)?;
    if held.is_empty() {
        return Err(config_err(format!("test split has no dialogues touching {heldout:?}")));
    }
    let examples = examples_of(&held, model.config.history, &model.vocab)?;
    let pairs = model.pairs_in(&[heldout]);
    let registry = registry_of(model, &pairs);
    let scored = score(model, &examples, &pairs, denominator)?;
    let baseline = MetricReport::from_evals(&all_none_evals(&examples, &registry), &registry, denominator)?;
    let report = ZeroShotReport {
        heldout_domain: heldout.to_string(),
        margin_over_baseline: scored.report.joint_accuracy - baseline.joint_accuracy,
        seen,
        heldout: scored.report,
        all_none_baseline: baseline,
    };
    Ok((report, scored.evals))
}

/// Trains without the held-out domain, then scores its pairs on its test
/// dialogues. Writes `checkpoint.json`, `train_log.csv`, `zeroshot.json` and
/// `heldout_predictions.jsonl`; the checkpoint doubles as the fine-tuning base.
pub fn cmd_zeroshot(cfg: &ExperimentConfig, out: &Path) -> Result<ZeroShotReport> {
    cfg.validate()?;
    let splits = cfg.data.load(cfg.seed)?;
    let heldout = cfg.zeroshot.heldout.as_str();
    require_domain(&splits[0], heldout)?;
    ensure_dir(out)?;
    let mut rows = vec![EpochLog::CSV_HEADER.to_string()];
    let run = train_run(cfg, &splits, Some(heldout), |e| rows.push(e.csv_row()))?;
    write_text(&out.join("train_log.csv"), &(rows.join("\n") + "\n"))?;
    run.checkpoint.save(out.join("checkpoint.json")).map_err(runtime)?;
    if let Some(reason) = run.diverged {
        return Err(runtime(reason));
    }
    let (report, evals) =
        zeroshot_report(&run.checkpoint.model, &splits[2], heldout, run.test.report, cfg.slot_denominator)?;
    write_json(&out.join("zeroshot.json"), &report)?;
    write_dump(&out.join("heldout_predictions.jsonl"), &evals)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaScore {
    pub lambda: f64,
    pub target_valid_joint: f64,
    pub source_valid_joint: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainReports {
    pub source: MetricReport,
    pub target: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forgetting {
    pub source_joint_before: f64,
    pub source_joint_after: f64,
    /// Before minus after; positive means the source domains got worse.
    pub source_drop: f64,
    pub target_joint_before: f64,
    pub target_joint_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub strategy: Strategy,
    pub target: String,
    pub fraction: f64,
    pub few_shot_dialogues: usize,
    pub few_shot_turns: usize,
    pub lambda: Option<f64>,
    pub lambda_search: Vec<LambdaScore>,
    pub best_epoch: usize,
    pub base: DomainReports,
    pub after: DomainReports,
    pub forgetting: Forgetting,
}

/// One fine-tuning run: the report, the adapted model and its epoch logs.
pub struct FinetuneRun {
    pub report: FinetuneReport,
    pub checkpoint: Checkpoint,
    pub logs: Vec<EpochLog>,
}

/// Fixed data and base metrics shared by every strategy on one base model.
pub struct ContinualBench {
    base: Checkpoint,
    cfg: FinetuneConfig,
    seed: u64,
    denominator: SlotDenominator,
    source_pairs: Vec<usize>,
    target_pairs: Vec<usize>,
    few_shot_dialogues: usize,
    few_shot: Vec<Example>,
    target_valid: Vec<Example>,
    source_valid: Vec<Example>,
    target_test: Vec<Example>,
    source_test: Vec<Example>,
    base_reports: DomainReports,
}

impl ContinualBench {
    /// The few-shot set is `cfg.finetune.fraction` of the target domain's
    /// training dialogues. Source sets are the other dialogues with target
    /// labels stripped, scored on the source pairs.
    pub fn new(base: Checkpoint, splits: &[Corpus; 3], cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let target = cfg.finetune.target.as_str();
        require_domain(&splits[0], target)?;
        let model = &base.model;
        if splits[0].ontology() != &model.ontology {
            return Err(config_err("corpus ontology differs from the base checkpoint's"));
        }
        let window = model.config.history;
        let few = sample_fraction(&splits[0], target, cfg.finetune.fraction, derive_seed(cfg.seed, "few-shot"))?;
        let few_shot = examples_of(&few, window, &model.vocab)?;
        let target_of = |c: &Corpus| -> Result<Vec<Example>> {
            let f = c.filter_domain(target)?;
            if f.is_empty() {
                return Err(config_err(format!("a split has no dialogues touching {target:?}")));
            }
            Ok(examples_of(&f, window, &model.vocab)?)
        };
        let source_of = |c: &Corpus| -> Result<Vec<Example>> {
            let (rest, _) = exclude_domain(c, target)?;
            if rest.is_empty() {
                return Err(config_err(format!("a split has only dialogues touching {target:?}")));
            }
            Ok(examples_of(&rest, window, &model.vocab)?)
        };
        let (target_valid, target_test) = (target_of(&splits[1])?, target_of(&splits[2])?);
        let (source_valid, source_test) = (source_of(&splits[1])?, source_of(&splits[2])?);
        let source_pairs = pairs_except(model, Some(target));
        let target_pairs = model.pairs_in(&[target]);
        let base_reports = DomainReports {
            source: score(model, &source_test, &source_pairs, cfg.slot_denominator)?.report,
            target: score(model, &target_test, &target_pairs, cfg.slot_denominator)?.report,
        };
        Ok(ContinualBench {
            cfg: cfg.finetune.clone(),
            seed: cfg.seed,
            denominator: cfg.slot_denominator,
            few_shot_dialogues: few.len(),
            base,
            source_pairs,
            target_pairs,
            few_shot,
            target_valid,
            source_valid,
            target_test,
            source_test,
            base_reports,
        })
    }

    pub fn base_reports(&self) -> &DomainReports {
        &self.base_reports
    }

    pub fn few_shot(&self) -> &[Example] {
        &self.few_shot
    }

    fn sets(&self) -> FinetuneSets<'_> {
        FinetuneSets {
            train: &self.few_shot,
            train_pairs: &self.target_pairs,
            target_valid: &self.target_valid,
            target_pairs: &self.target_pairs,
            source_valid: &self.source_valid,
            source_pairs: &self.source_pairs,
        }
    }

    fn tune(&self, regularizer: &Regularizer<'_>, train: &TrainConfig) -> Result<(TradeModel, Vec<EpochLog>, usize)> {
        let mut model = self.base.model.clone();
        let seed = derive_seed(self.seed, "finetune");
        let out = finetune(&mut model, &self.sets(), regularizer, train, seed)?;
        Ok((model, out.logs, out.best_epoch))
    }

    /// Fine-tunes a copy of the base model on the few-shot set with
    /// `strategy`. EWC strength comes from `lambda` if set, else from a grid
    /// search maximizing mean target and source validation joint accuracy.
    pub fn run(&self, strategy: Strategy) -> Result<FinetuneRun> {
        self.run_with(strategy, self.cfg.lambda)
    }

    /// EWC with a fixed strength, bypassing the configured grid.
    pub fn run_with_lambda(&self, lambda: f64) -> Result<FinetuneRun> {
        self.run_with(Strategy::Ewc, Some(lambda))
    }

    fn run_with(&self, strategy: Strategy, fixed_lambda: Option<f64>) -> Result<FinetuneRun> {
        let train = &self.cfg.train;
        let missing = |what: &str| config_err(format!("{} needs {what} stored in the base checkpoint", strategy.name()));
        let mut lambda_search = Vec::new();
        let (lambda, (model, logs, best_epoch)) = match strategy {
            Strategy::Naive => (None, self.tune(&Regularizer::Naive, train)?),
            Strategy::Gem => {
                let memory = self.base.memory.as_ref().ok_or_else(|| missing("an episodic memory"))?;
                (None, self.tune(&Regularizer::Gem { memory }, train)?)
            }
            Strategy::Ewc => {
                let fisher = self.base.fisher.as_ref().ok_or_else(|| missing("a Fisher estimate"))?;
                let grid: Vec<f64> = match fixed_lambda {
                    Some(l) => vec![l],
                    None => self.cfg.lambda_grid.clone(),
                };
                let mut best: Option<(f64, f64, (TradeModel, Vec<EpochLog>, usize))> = None;
                for &lambda in &grid {
                    let tuned = self.tune(&Regularizer::Ewc { fisher, lambda }, train)?;
                    let t = score(&tuned.0, &self.target_valid, &self.target_pairs, self.denominator)?.report;
                    let s = score(&tuned.0, &self.source_valid, &self.source_pairs, self.denominator)?.report;
                    lambda_search.push(LambdaScore {
                        lambda,
                        target_valid_joint: t.joint_accuracy,
                        source_valid_joint: s.joint_accuracy,
                    });
                    let value = 0.5 * (t.joint_accuracy + s.joint_accuracy);
                    if best.as_ref().map_or(true, |(_, v, _)| value > *v) {
                        best = Some((lambda, value, tuned));
                    }
                }
                let (lambda, _, tuned) = best.ok_or_else(|| config_err("empty EWC lambda grid"))?;
                (Some(lambda), tuned)
            }
        };
        let after = DomainReports {
            source: score(&model, &self.source_test, &self.source_pairs, self.denominator)?.report,
            target: score(&model, &self.target_test, &self.target_pairs, self.denominator)?.report,
        };
        let base = self.base_reports.clone();
        let forgetting = Forgetting {
            source_joint_before: base.source.joint_accuracy,
            source_joint_after: after.source.joint_accuracy,
            source_drop: base.source.joint_accuracy - after.source.joint_accuracy,
            target_joint_before: base.target.joint_accuracy,
            target_joint_after: after.target.joint_accuracy,
        };
        let report = FinetuneReport {
            strategy,
            target: self.cfg.target.clone(),
            fraction: self.cfg.fraction,
            few_shot_dialogues: self.few_shot_dialogues,
            few_shot_turns: self.few_shot.len(),
            lambda,
            lambda_search,
            best_epoch,
            base,
            after,
            forgetting,
        };
        let mut checkpoint = Checkpoint::new(model);
        checkpoint.meta = self.base.meta.clone();
        checkpoint.meta.insert("finetune_strategy".into(), serde_json::json!(strategy.name()));
        checkpoint.meta.insert("finetune_target".into(), serde_json::json!(self.cfg.target));
        if let Some(l) = lambda {
            checkpoint.meta.insert("ewc_lambda".into(), serde_json::json!(l));
        }
        Ok(FinetuneRun { report, checkpoint, logs })
    }

    /// A fresh model (same vocabulary and dimensions as the base) trained on
    /// the few-shot set alone, scored on the target test dialogues.
    pub fn scratch(&self) -> Result<MetricReport> {
        let base = &self.base.model;
        let mut model = TradeModel::new(
            base.config.clone(),
            base.vocab.clone(),
            base.ontology.clone(),
            derive_seed(self.seed, "scratch-init"),
        )?;
        train(
            &mut model,
            &self.few_shot,
            &self.target_pairs,
            &self.target_valid,
            &self.target_pairs,
            &self.cfg.train,
            derive_seed(self.seed, "finetune"),
            &mut Plain,
            &[],
            |_, _| {},
        )?;
        Ok(score(&model, &self.target_test, &self.target_pairs, self.denominator)?.report)
    }
}

/// `cmd_finetune` output: the strategy's report plus the scratch baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSummary {
    #[serde(flatten)]
    pub run: FinetuneReport,
    pub scratch_target: Option<MetricReport>,
}

/// Fine-tunes the base checkpoint on the configured target domain with the
/// configured strategy. Writes `checkpoint.json`, `finetune_log.csv` (with
/// source validation joint accuracy per epoch) and `finetune.json`.
pub fn cmd_finetune(cfg: &ExperimentConfig, base: &Path, out: &Path) -> Result<FinetuneSummary> {
    cfg.validate()?;
    let base = Checkpoint::load(base)?;
    let splits = cfg.data.load(cfg.seed)?;
    let bench = ContinualBench::new(base, &splits, cfg)?;
    let run = bench.run(cfg.finetune.strategy)?;
    let scratch_target = if cfg.finetune.scratch_baseline { Some(bench.scratch()?) } else { None };
    ensure_dir(out)?;
    run.checkpoint.save(out.join("checkpoint.json")).map_err(runtime)?;
    let mut csv = format!("{},source_joint\n", EpochLog::CSV_HEADER);
    for l in &run.logs {
        let src = l.monitors.get("source").map(|v| format!("{v:.6}")).unwrap_or_default();
        csv.push_str(&format!("{},{src}\n", l.csv_row()));
    }
    write_text(&out.join("finetune_log.csv"), &csv)?;
    let summary = FinetuneSummary { run: run.report, scratch_target };
    write_json(&out.join("finetune.json"), &summary)?;
    Ok(summary)
}
