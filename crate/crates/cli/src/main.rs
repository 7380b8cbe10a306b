//! `dyngest`: dataset generation, training, evaluation, sliding-window
//! inference and FLOP analysis.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dyngest::evaluator::{flop_report, predict_split, EvalReport};
use dyngest::net::checkpoint::load_checkpoint;
use dyngest::stream::{default_stride, infer_stream, save_predictions, write_predictions};
use dyngest::synthdata::{generate_dataset, load_clip, Dataset, Split, GESTURE_NAMES};
use dyngest::trainer::{train, TrainOptions};
use dyngest::{Error, GestureNet, RunConfig};

// Training allocates and frees large per-step buffers; glibc returns them to
// the kernel and page-faults them back in on every step.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

const CONFIG_FILE: &str = "config.json";

#[derive(Parser, Debug)]
#[command(name = "dyngest", version, about = "Patch-selection gesture recognition on synthetic long-distance clips")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (clips + manifest.json).
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of clips (overrides data.num_clips).
        #[arg(long)]
        clips: Option<usize>,
        /// Replace an existing dataset in --out.
        #[arg(long)]
        force: bool,
    },
    /// Train a model; writes config.json, metrics.csv and checkpoint.dgck.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Resume from this checkpoint.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Stop after this many epochs (the checkpoint can be resumed).
        #[arg(long)]
        stop_after: Option<usize>,
        /// Suppress per-epoch progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory for report.csv, report.txt and config.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Also write accuracy-vs-FLOPs and accuracy-vs-distance series.
        #[arg(long)]
        emit_plot_data: bool,
    },
    /// Sliding-window inference over a clip file `[C, L, H, W]`.
    Infer {
        #[command(flatten)]
        config: ConfigArgs,
        /// Clip file to stream.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Window stride in frames (default: half the window).
        #[arg(long)]
        stride: Option<usize>,
        /// Directory for predictions.csv and config.json; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-window MACs of the dynamic and static pipelines; needs no data.
    Flops {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory for flops.csv and config.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Run configuration (JSON); defaults to the desk configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set train.epochs=5 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for network initialization, training order and data generation.
    #[arg(long)]
    seed: Option<u64>,
    /// Deterministic execution (on by default).
    #[arg(long, value_enum)]
    determinism: Option<Switch>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Switch {
    On,
    Off,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum SplitArg {
    Train,
    Test,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl ConfigArgs {
    /// Config file (or defaults), then `--set` overrides in order, then
    /// `--seed` and `--determinism`.
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            cfg = cfg.with_override(o).map_err(|e| Failure::Usage(e.to_string()))?;
        }
        if let Some(seed) = self.seed {
            cfg.network.seed = seed;
            cfg.train.seed = seed;
            cfg.data.seed = seed;
        }
        if let Some(d) = self.determinism {
            cfg.train.determinism = d == Switch::On;
        }
        Ok(cfg)
    }
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { context: format!("creating {}", dir.display()), source })
}

fn save_config(dir: &Path, cfg: &RunConfig) -> Result<(), Error> {
    create_dir(dir)?;
    cfg.save(&dir.join(CONFIG_FILE))
}

/// Loads a checkpoint and records its network and pipeline in `cfg`.
fn load_model(ckpt: &Path, cfg: &mut RunConfig) -> Result<GestureNet<f32>, Error> {
    let (model, state) = load_checkpoint::<f32>(ckpt, None)?;
    cfg.network = model.config().clone();
    cfg.pipeline = model.pipeline();
    if let Some(t) = state.train {
        cfg.train = t;
    }
    Ok(model)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate { config, out, clips, force } => {
            let mut cfg = config.resolve()?;
            if let Some(n) = clips {
                cfg.data.num_clips = n;
            }
            cfg.validate()?;
            let manifest = generate_dataset(&out, cfg.network.input_dims, &cfg.data, force)?;
            save_config(&out, &cfg)?;
            let train = manifest.split(Split::Train).count();
            println!(
                "wrote {} clips ({} train, {} test) to {}",
                manifest.clips.len(),
                train,
                manifest.clips.len() - train,
                out.display()
            );
        }
        Command::Train { config, data, out, ckpt, stop_after, quiet } => {
            let cfg = config.resolve()?;
            cfg.validate()?;
            let dataset = Dataset::open(&data)?;
            let model = GestureNet::<f32>::new(cfg.network.clone(), cfg.pipeline)?;
            save_config(&out, &cfg)?;
            let opts = TrainOptions { out_dir: Some(out.clone()), resume: ckpt, stop_after, verbose: !quiet };
            let outcome = train(model, &dataset, &cfg.train, &opts)?;
            if let Some(last) = outcome.metrics.last() {
                let test = last.test_top1.map_or("-".to_string(), |v| format!("{v:.4}"));
                println!(
                    "trained {} epochs; final loss {:.4}, train top-1 {:.4}, test top-1 {test}",
                    outcome.state.epoch, last.loss_total, last.train_top1
                );
            }
        }
        Command::Eval { config, data, ckpt, out, split, emit_plot_data } => {
            let mut cfg = config.resolve()?;
            let model = load_model(&ckpt, &mut cfg)?;
            let dataset = Dataset::open(&data)?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let results = predict_split(&model, &dataset, split, cfg.train.batch_size)?;
            let flops = model.window_flops()?;
            let report = EvalReport::from_results(&results, model.config().num_classes, Some(flops))?;
            let text = report.to_text(Some(&GESTURE_NAMES));
            print!("{text}");
            if let Some(dir) = out {
                save_config(&dir, &cfg)?;
                report.write_csv(&dir.join("report.csv"))?;
                std::fs::write(dir.join("report.txt"), &text)
                    .map_err(|source| Error::Io { context: "writing report.txt".into(), source })?;
                if emit_plot_data {
                    report.write_plot_data(&dir.join("plot"), &model.pipeline().to_string())?;
                }
            } else if emit_plot_data {
                return Err(Failure::Usage("--emit-plot-data needs --out".into()));
            }
        }
        Command::Infer { config, data, ckpt, stride, out } => {
            let mut cfg = config.resolve()?;
            let model = load_model(&ckpt, &mut cfg)?;
            let window = model.config().input_dims[0];
            let stride = stride.unwrap_or_else(|| default_stride(window));
            if stride == 0 {
                return Err(Failure::Usage("--stride must be at least 1".into()));
            }
            let stream = load_clip(&data)?;
            let preds = infer_stream(&model, &stream, stride, cfg.train.batch_size)?;
            match out {
                Some(dir) => {
                    save_config(&dir, &cfg)?;
                    save_predictions(&dir.join("predictions.csv"), &preds, window, stride)?;
                    println!("{} windows -> {}", preds.len(), dir.join("predictions.csv").display());
                }
                None => write_predictions(&mut std::io::stdout().lock(), &preds, window, stride)?,
            }
        }
        Command::Flops { config, out } => {
            let cfg = config.resolve()?;
            cfg.network.validate()?;
            let report = flop_report(&cfg.network)?;
            print!("{}", report.to_text());
            if let Some(dir) = out {
                save_config(&dir, &cfg)?;
                report.write_csv(&dir.join("flops.csv"))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
