//! `echores`: synthesize echo scenarios, run the linear canceller, train and
//! evaluate the residual echo suppressor, and enhance single files.

mod config;
mod fail;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use echores::audio::{derive_seed, read_wav, write_wav};
use echores::echo::dataset::Sources;
use echores::echo::{synth_dataset, Corpus, Manifest, SignalKind};
use echores::laec::laec_manifest;
use echores::model::{ModelConfig, TasNet, Variant};
use echores::train::{
    evaluate, load_examples, split_validation, train, EvalOptions, System,
};

use config::CliConfig;
use fail::{CliError, Kind};

#[derive(Parser, Debug)]
#[command(name = "echores", version, about = "Nonlinear residual echo suppression pipeline")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` and `train.seed` from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single-threaded execution.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker threads for per-item stages and batch gradients.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a scenario dataset and its manifest.
    Synth(SynthArgs),
    /// Run the linear canceller on every manifest item.
    Laec(LaecArgs),
    /// Train the suppressor on the double-talk items of a manifest.
    Train(TrainArgs),
    /// Score systems on a manifest and write a CSV report.
    Eval(EvalArgs),
    /// Enhance one canceller output.
    Infer(InferArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    items: Option<usize>,
    #[arg(long)]
    item_secs: Option<f64>,
    /// Directory of far-end speech WAVs; synthetic when omitted.
    #[arg(long)]
    far_speech: Option<PathBuf>,
    /// Directory of far-end music WAVs; synthetic when omitted.
    #[arg(long)]
    far_music: Option<PathBuf>,
    /// Directory of near-end speech WAVs; synthetic when omitted.
    #[arg(long)]
    near: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LaecArgs {
    /// Manifest file or the directory holding it.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint and loss-curve directory.
    #[arg(long)]
    out: PathBuf,
    /// MI, L or O.
    #[arg(long)]
    variant: Option<Variant>,
    /// Replaces the model section with a named size: full, desk or tiny.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Random crop length in samples.
    #[arg(long)]
    segment_len: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// CSV report path.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated: laec, model, pass-through, oracle-mask.
    #[arg(long, value_delimiter = ',')]
    systems: Option<Vec<String>>,
    /// Seconds excluded from ERLE at the start of each item.
    #[arg(long)]
    erle_skip: Option<f64>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Canceller residual.
    #[arg(long)]
    s_aec: PathBuf,
    /// Canceller echo estimate; needed by the MI variant.
    #[arg(long)]
    d_hat: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

struct Run {
    cfg: CliConfig,
    /// Whether the config file set the model section explicitly.
    model_pinned: bool,
    jobs: usize,
}

fn preset(name: &str, variant: Variant) -> Result<ModelConfig, CliError> {
    match name {
        "full" => Ok(ModelConfig::full(variant)),
        "desk" => Ok(ModelConfig::desk(variant)),
        "tiny" => Ok(ModelConfig::tiny(variant)),
        _ => Err(CliError::new(
            Kind::Config,
            format!("unknown preset {name:?} (expected full, desk or tiny)"),
        )),
    }
}

fn effective_config(cli: &Cli) -> Result<Run, CliError> {
    let (mut cfg, model_pinned) = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => (CliConfig::default(), false),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    match &cli.command {
        Some(Command::Synth(a)) => {
            if let Some(n) = a.items {
                cfg.synth.items = n;
            }
            if let Some(s) = a.item_secs {
                cfg.synth.item_secs = s;
            }
        }
        Some(Command::Train(a)) => {
            let variant = a.variant.unwrap_or(cfg.model.variant);
            if let Some(p) = &a.preset {
                cfg.model = preset(p, variant)?;
            }
            cfg.model.variant = variant;
            if let Some(e) = a.epochs {
                cfg.train.epochs = e;
            }
            if a.max_steps.is_some() {
                cfg.train.max_steps = a.max_steps;
            }
            if a.segment_len.is_some() {
                cfg.train.segment_len = a.segment_len;
            }
        }
        Some(Command::Eval(a)) => {
            if let Some(s) = &a.systems {
                cfg.eval.systems = s.clone();
            }
            if let Some(s) = a.erle_skip {
                cfg.eval.erle_skip_secs = s;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    let jobs = if cli.deterministic {
        1
    } else {
        cli.jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    };
    Ok(Run {
        cfg,
        model_pinned,
        jobs,
    })
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::new(Kind::MissingFile, format!("{}: not found", path.display())))
    }
}

fn corpus(dir: Option<&Path>, kind: SignalKind) -> Result<Corpus, CliError> {
    match dir {
        Some(d) => {
            require(d)?;
            Ok(Corpus::from_dir(d, kind)?)
        }
        None => Ok(Corpus::Synthetic(kind)),
    }
}

fn run_synth(run: &Run, a: &SynthArgs) -> Result<(), CliError> {
    let far_speech = corpus(a.far_speech.as_deref(), SignalKind::Speech)?;
    let far_music = corpus(a.far_music.as_deref(), SignalKind::Music)?;
    let near = corpus(a.near.as_deref(), SignalKind::Speech)?;
    let sources = Sources {
        far_speech: &far_speech,
        far_music: &far_music,
        near: &near,
    };
    let m = synth_dataset(&run.cfg.synth, &sources, run.cfg.seed, &a.out, run.jobs)?;
    println!("wrote {} items to {}", m.records.len(), m.path().display());
    Ok(())
}

fn run_laec(run: &Run, a: &LaecArgs) -> Result<(), CliError> {
    require(&a.data)?;
    let mut m = Manifest::read(&a.data)?;
    laec_manifest(&mut m, &run.cfg.fdkf, run.jobs)?;
    println!("processed {} items in {}", m.records.len(), m.path().display());
    Ok(())
}

fn run_train(run: &Run, a: &TrainArgs) -> Result<(), CliError> {
    require(&a.data)?;
    let m = Manifest::read(&a.data)?;
    let examples = load_examples(&m)?;
    let (train_set, val) = split_validation(examples, run.cfg.eval.val_fraction);
    let mut tc = run.cfg.train.clone();
    tc.checkpoint_dir = Some(a.out.clone());
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let cfg_path = a.out.join("config.toml");
    std::fs::write(&cfg_path, run.cfg.to_toml()).map_err(|e| CliError::io(&cfg_path, e))?;
    let mut model = TasNet::new(run.cfg.model.clone(), derive_seed(run.cfg.seed, 1))?;
    eprintln!(
        "training TasNet-{} ({} parameters) on {} items, validating on {}",
        run.cfg.model.variant,
        model.num_params(),
        train_set.len(),
        if val.is_empty() { train_set.len() } else { val.len() }
    );
    let out = train(&mut model, &train_set, &val, &tc, run.jobs, |st, tr, va| {
        eprintln!(
            "epoch {} step {} train {tr:.4} val {va:.4} lr {:.2e}",
            st.epoch + 1,
            st.step,
            st.lr()
        );
    })?;
    println!(
        "best validation loss {:.4} after {} steps; checkpoints in {}",
        out.state.best_val_loss(),
        out.state.step,
        a.out.display()
    );
    Ok(())
}

fn parse_system(name: &str) -> Result<System, CliError> {
    match name.trim() {
        "laec" => Ok(System::Laec),
        "model" => Ok(System::Model),
        "pass-through" => Ok(System::PassThrough),
        "oracle-mask" => Ok(System::OracleMask),
        other => Err(CliError::new(
            Kind::Config,
            format!("unknown system {other:?} (expected laec, model, pass-through or oracle-mask)"),
        )),
    }
}

/// Loads a checkpoint and, when the config file pins a model section,
/// insists that both describe the same architecture.
fn load_model(run: &Run, path: &Path) -> Result<TasNet, CliError> {
    require(path)?;
    let model = TasNet::load(path)?;
    if run.model_pinned && model.config() != &run.cfg.model {
        return Err(CliError::new(
            Kind::Checkpoint,
            format!(
                "{}: checkpoint model config differs from the [model] section of the config file",
                path.display()
            ),
        ));
    }
    Ok(model)
}

fn run_eval(run: &Run, a: &EvalArgs) -> Result<(), CliError> {
    require(&a.data)?;
    let model = load_model(run, &a.checkpoint)?;
    let m = Manifest::read(&a.data)?;
    let systems = run
        .cfg
        .eval
        .systems
        .iter()
        .map(|s| parse_system(s))
        .collect::<Result<Vec<_>, _>>()?;
    let opts = EvalOptions {
        systems,
        erle_skip_secs: run.cfg.eval.erle_skip_secs,
        zero_mean: run.cfg.train.zero_mean,
        jobs: run.jobs,
    };
    let report = evaluate(&m, &model, &opts)?;
    report.validate()?;
    report.write_csv(&a.out)?;
    print!("{}", report.table());
    Ok(())
}

fn run_infer(run: &Run, a: &InferArgs) -> Result<(), CliError> {
    require(&a.s_aec)?;
    if let Some(d) = &a.d_hat {
        require(d)?;
    }
    let model = load_model(run, &a.checkpoint)?;
    let s_aec = read_wav(&a.s_aec)?;
    let d_hat = a.d_hat.as_ref().map(read_wav).transpose()?;
    let out = model.forward(&s_aec, d_hat.as_ref())?;
    write_wav(&a.out, &out.s_hat)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let run = effective_config(cli)?;
    if cli.dump_config {
        print!("{}", run.cfg.to_toml());
        return Ok(());
    }
    match &cli.command {
        Some(Command::Synth(a)) => run_synth(&run, a),
        Some(Command::Laec(a)) => run_laec(&run, a),
        Some(Command::Train(a)) => run_train(&run, a),
        Some(Command::Eval(a)) => run_eval(&run, a),
        Some(Command::Infer(a)) => run_infer(&run, a),
        None => Err(CliError::new(
            Kind::Config,
            "no subcommand given (synth, laec, train, eval or infer)",
        )),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.kind.code() as u8)
        }
    }
}
