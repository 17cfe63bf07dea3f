use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trade_core::checkpoint::Checkpoint;
use trade_core::continual::Strategy;
use trade_core::demo::DemoSession;
use trade_core::eval::SlotDenominator;
use trade_core::experiment::{
    cmd_eval, cmd_finetune, cmd_synth, cmd_train, cmd_zeroshot, ExperimentConfig, ExperimentError,
};

/// Dialogue state tracking with a copy-augmented, slot-gated generator.
#[derive(Parser, Debug)]
#[command(name = "trade", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parent directory for run outputs; each run gets a fresh timestamped subdirectory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Corpus files (all three together); otherwise the corpus is synthesized.
    #[arg(long, global = true)]
    train_corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    valid_corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    test_corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    lr_min: Option<f64>,
    #[arg(long, global = true)]
    patience: Option<usize>,
    #[arg(long, global = true)]
    d_emb: Option<usize>,
    #[arg(long, global = true)]
    d_hdd: Option<usize>,
    #[arg(long, global = true)]
    dropout: Option<f64>,
    /// Count only cells where gold or prediction is set toward slot accuracy.
    #[arg(long, global = true)]
    active_only: bool,
    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train / valid / test corpora.
    Synth {
        /// Write here instead of a run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dialogues: Option<usize>,
    },
    /// Train on every domain, or on all but `--exclude`.
    Train {
        #[arg(long)]
        exclude: Option<String>,
    },
    /// Score a checkpoint on a corpus file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Only dialogues touching this domain, scored on its pairs.
        #[arg(long)]
        domain: Option<String>,
    },
    /// Train without a domain and score it zero-shot.
    Zeroshot {
        #[arg(long)]
        heldout: Option<String>,
    },
    /// Fine-tune a base checkpoint on a few target-domain dialogues.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        target: Option<String>,
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
        #[arg(long)]
        fraction: Option<f64>,
        /// Fixed EWC strength (skips the grid search).
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        memory_fraction: Option<f64>,
    },
    /// Type dialogue turns and watch the predicted state.
    Demo {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    match s {
        "naive" => Ok(Strategy::Naive),
        "ewc" => Ok(Strategy::Ewc),
        "gem" => Ok(Strategy::Gem),
        _ => Err(format!("unknown strategy {s:?} (naive, ewc, gem)")),
    }
}

fn resolve_config(c: &Common) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    macro_rules! set {
        ($flag:expr => $field:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v;
            }
        };
    }
    set!(c.seed => cfg.seed);
    set!(c.output_dir => cfg.output_dir);
    set!(c.epochs => cfg.train.epochs);
    set!(c.batch_size => cfg.train.batch_size);
    set!(c.lr => cfg.train.lr);
    set!(c.lr_min => cfg.train.lr_min);
    set!(c.patience => cfg.train.patience);
    set!(c.d_emb => cfg.model.d_emb);
    set!(c.d_hdd => cfg.model.d_hdd);
    set!(c.dropout => cfg.model.dropout);
    if c.train_corpus.is_some() {
        cfg.data.train = c.train_corpus.clone();
    }
    if c.valid_corpus.is_some() {
        cfg.data.valid = c.valid_corpus.clone();
    }
    if c.test_corpus.is_some() {
        cfg.data.test = c.test_corpus.clone();
    }
    if c.active_only {
        cfg.slot_denominator = SlotDenominator::ActiveOnly;
    }
    Ok(cfg)
}

/// `<parent>/<verb>-<UTC timestamp>`, suffixed when that already exists.
fn fresh_run_dir(parent: &Path, verb: &str) -> Result<PathBuf, ExperimentError> {
    let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
    let base = parent.join(format!("{verb}-{stamp}"));
    let mut dir = base.clone();
    let mut n = 1;
    while dir.exists() {
        dir = PathBuf::from(format!("{}-{n}", base.display()));
        n += 1;
    }
    std::fs::create_dir_all(&dir).map_err(|e| ExperimentError::Runtime(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn save_config(cfg: &ExperimentConfig, dir: &Path) -> Result<(), ExperimentError> {
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_json()).map_err(|e| ExperimentError::Runtime(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    let mut cfg = resolve_config(&cli.common)?;
    match cli.command {
        Command::Synth { out, dialogues } => {
            if let Some(n) = dialogues {
                cfg.data.splits[0] = n;
            }
            cfg.validate()?;
            let dir = match out {
                Some(d) => d,
                None => fresh_run_dir(&cfg.output_dir, "synth")?,
            };
            for p in cmd_synth(&cfg, &dir)? {
                println!("{}", p.display());
            }
        }
        Command::Train { exclude } => {
            if exclude.is_some() {
                cfg.exclude = exclude;
            }
            cfg.validate()?;
            let dir = fresh_run_dir(&cfg.output_dir, "train")?;
            save_config(&cfg, &dir)?;
            let report = cmd_train(&cfg, &dir)?;
            println!("run directory: {}", dir.display());
            println!("best epoch {} of {}", report.best_epoch, report.epochs_run);
            println!("test\n{}", report.test);
        }
        Command::Eval { checkpoint, corpus, domain } => {
            let dir = fresh_run_dir(&cfg.output_dir, "eval")?;
            let report = cmd_eval(&checkpoint, &corpus, domain.as_deref(), cfg.slot_denominator, &dir)?;
            println!("run directory: {}", dir.display());
            print!("{report}");
        }
        Command::Zeroshot { heldout } => {
            if let Some(h) = heldout {
                cfg.zeroshot.heldout = h;
            }
            cfg.validate()?;
            let dir = fresh_run_dir(&cfg.output_dir, "zeroshot")?;
            save_config(&cfg, &dir)?;
            let r = cmd_zeroshot(&cfg, &dir)?;
            println!("run directory: {}", dir.display());
            println!("seen domains joint      {:.4}", r.seen.joint_accuracy);
            println!("{} joint (zero-shot) {:.4}", r.heldout_domain, r.heldout.joint_accuracy);
            println!("all-NONE baseline joint {:.4}", r.all_none_baseline.joint_accuracy);
        }
        Command::Finetune { checkpoint, target, strategy, fraction, lambda, memory_fraction } => {
            let f = &mut cfg.finetune;
            if let Some(t) = target {
                f.target = t;
            }
            if let Some(s) = strategy {
                f.strategy = s;
            }
            if let Some(x) = fraction {
                f.fraction = x;
            }
            if lambda.is_some() {
                f.lambda = lambda;
            }
            if let Some(m) = memory_fraction {
                f.memory_fraction = m;
            }
            cfg.validate()?;
            let dir = fresh_run_dir(&cfg.output_dir, "finetune")?;
            save_config(&cfg, &dir)?;
            let s = cmd_finetune(&cfg, &checkpoint, &dir)?;
            let r = &s.run;
            println!("run directory: {}", dir.display());
            println!("strategy {} on {} ({} dialogues)", r.strategy.name(), r.target, r.few_shot_dialogues);
            if let Some(l) = r.lambda {
                println!("EWC lambda {l}");
            }
            let fg = &r.forgetting;
            println!("source joint {:.4} -> {:.4} (drop {:.4})", fg.source_joint_before, fg.source_joint_after, fg.source_drop);
            println!("target joint {:.4} -> {:.4}", fg.target_joint_before, fg.target_joint_after);
            if let Some(sc) = &s.scratch_target {
                println!("target joint from scratch {:.4}", sc.joint_accuracy);
            }
        }
        Command::Demo { checkpoint } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let mut session = DemoSession::new(&ck.model);
            let stdin = io::stdin();
            let mut stdout = io::stdout().lock();
            for line in stdin.lock().lines() {
                let line = line.map_err(|e| ExperimentError::Runtime(e.to_string()))?;
                let (text, quit) = session.handle(&line).map_err(|e| ExperimentError::Runtime(e.to_string()))?;
                stdout.write_all(text.as_bytes()).map_err(|e| ExperimentError::Runtime(e.to_string()))?;
                stdout.flush().map_err(|e| ExperimentError::Runtime(e.to_string()))?;
                if quit {
                    break;
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.common.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
