use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcbdet::cli::{cmd_bench, cmd_eval, cmd_patchify, cmd_predict, cmd_synth, cmd_train, BenchArgs, DataSource, EvalArgs, RunConfig};
use pcbdet::data::{PatchOptions, Split, SyntheticDatasetSpec};
use pcbdet::eval::{write_predictions, BoxLine};
use pcbdet::par::{init_threads, Exec};
use pcbdet::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "pcbdet", version, about = "Attention-condenser PCB component detector")]
struct Cli {
    /// Run config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for batch loops (0 = one per core, 1 = sequential).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cut annotated boards into square patches and split them.
    Patchify(PatchifyArgs),
    /// Generate a synthetic board dataset (uses the config's synthetic spec if given).
    Synth(SynthArgs),
    /// Train a detector from a run config.
    Train,
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(EvalCmd),
    /// Detect components in one image.
    Predict(PredictArgs),
    /// Time inference of one or more checkpoints and compare them.
    Bench(BenchCmd),
}

#[derive(Args, Debug)]
struct PatchifyArgs {
    /// Board annotations (JSON lines).
    #[arg(long)]
    annotations: PathBuf,
    /// Directory holding the board images (default: next to the annotations).
    #[arg(long)]
    boards: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    patch_size: usize,
    /// Defaults to the patch size.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, default_value_t = 0.25)]
    min_box_frac: f64,
    #[arg(long, default_value_t = 0.125)]
    val_frac: f64,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Boards whose patches go to train/val.
    #[arg(long)]
    boards: Option<usize>,
    /// Holdout boards.
    #[arg(long)]
    test_boards: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "val")]
    split: Split,
    /// Allow scoring the training split.
    #[arg(long)]
    allow_train: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
}

#[derive(Args, Debug)]
struct BenchCmd {
    /// Checkpoint directory; repeat to compare models (the first is the reference).
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    /// Evaluation report per checkpoint (default: <checkpoint>/eval.json).
    #[arg(long = "eval")]
    evals: Vec<PathBuf>,
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long, default_value_t = pcbdet::bench::DEFAULT_WARMUP)]
    warmup: usize,
    #[arg(long, default_value_t = pcbdet::bench::DEFAULT_ITERS)]
    iters: usize,
}

fn require_out(out: &Option<PathBuf>) -> Result<&Path> {
    out.as_deref().ok_or_else(|| Error::Config("--out is required for this command".into()))
}

fn run(cli: Cli) -> Result<()> {
    init_threads(cli.threads);
    let exec = if cli.threads == 1 { Exec::Sequential } else { Exec::Parallel };
    let config = cli.config.as_deref().map(RunConfig::load).transpose()?;
    match cli.command {
        Command::Patchify(a) => {
            let opts = PatchOptions {
                patch_size: a.patch_size,
                stride: a.stride.unwrap_or(a.patch_size),
                min_box_area_frac: a.min_box_frac,
                val_frac: a.val_frac,
            };
            let s = cmd_patchify(&a.annotations, a.boards.as_deref(), &opts, cli.seed.unwrap_or(0), require_out(&cli.out)?)?;
            println!("{} boards -> {} patches ({} boxes): train {}, val {}, test {}", s.boards, s.patches, s.boxes, s.train, s.val, s.test);
        }
        Command::Synth(a) => {
            let (mut spec, cfg_seed) = match config.map(|c| c.data) {
                Some(DataSource::Synthetic { seed, spec }) => (spec, seed),
                Some(DataSource::Dataset { .. }) => return Err(Error::Config("config data source is not synthetic".into())),
                None => (SyntheticDatasetSpec::default(), 0),
            };
            if let Some(n) = a.boards {
                spec.train_val_boards = n;
            }
            if let Some(n) = a.test_boards {
                spec.test_boards = n;
            }
            let s = cmd_synth(&spec, cli.seed.unwrap_or(cfg_seed), require_out(&cli.out)?, exec)?;
            println!("{} boards -> {} patches ({} boxes): train {}, val {}, test {}", s.boards, s.patches, s.boxes, s.train, s.val, s.test);
        }
        Command::Train => {
            let mut cfg = config.ok_or_else(|| Error::Config("train needs --config".into()))?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(o) = cli.out {
                cfg.out = o;
            }
            let outcome = cmd_train(&cfg, exec)?;
            match (&outcome.best_eval, outcome.best_epoch) {
                (Some(r), Some(e)) => println!("best epoch {e}: val mAP {:.4}, mAP@0.5 {:.4}", r.map, r.map_50),
                _ => println!("wrote {}", outcome.out.display()),
            }
        }
        Command::Eval(a) => {
            let args = EvalArgs { checkpoint: a.checkpoint, dataset: a.dataset, split: a.split, allow_train: a.allow_train, out: cli.out };
            print!("{}", cmd_eval(&args, exec)?.to_table());
        }
        Command::Predict(a) => {
            let preds = cmd_predict(&a.checkpoint, &a.image)?;
            match &cli.out {
                Some(out) => {
                    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                    write_predictions(&out.join("predictions.jsonl"), &preds)?;
                }
                None => {
                    for p in &preds {
                        let b = &p.bbox;
                        let line = BoxLine { image_id: p.image_id.clone(), bbox: [b.x_min, b.y_min, b.x_max, b.y_max], class_id: p.class_id, score: Some(p.score) };
                        println!("{}", serde_json::to_string(&line).expect("line serialises"));
                    }
                }
            }
        }
        Command::Bench(a) => {
            let args = BenchArgs { checkpoints: a.checkpoints, evals: a.evals, input_size: a.input_size, warmup: a.warmup, iters: a.iters, out: cli.out };
            let (_, cmp) = cmd_bench(&args)?;
            print!("{}", cmp.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
