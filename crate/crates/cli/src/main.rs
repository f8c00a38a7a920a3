use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dofvo::frontend::GeometryMode;
use dofvo::metrics::AngleUnit;
use dofvo::pipeline::{self, EvalInputs, PipelineConfig, PipelineError, CONFIG_TEMPLATE};
use dofvo::refiner::Activation;
use dofvo::synthetic::FixtureConfig;

#[derive(Parser)]
#[command(name = "dofvo", version, about = "Monocular visual odometry with per-DoF refinement networks")]
struct Cli {
    /// TOML config; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<GeometryMode>,
    /// Report ATE without rigid alignment.
    #[arg(long, global = true)]
    no_align: bool,
    /// Rotation units in reports.
    #[arg(long, global = true, value_parser = parse_units)]
    units: Option<AngleUnit>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a config template with every default documented.
    InitConfig {
        /// Destination; prints to stdout when omitted.
        path: Option<PathBuf>,
    },
    /// Render a synthetic sequence in EuRoC layout with a matching config.
    SynthDataset {
        root: PathBuf,
        #[arg(long, default_value_t = 120)]
        frames: usize,
        /// Replace every k-th frame with a flat image; 0 disables.
        #[arg(long, default_value_t = 0)]
        corrupt_every: usize,
        #[arg(long, default_value_t = 1)]
        fixture_seed: u64,
    },
    /// Absolute ground truth to per-pair relative targets.
    ConvertGt,
    /// Frontend over every consecutive frame pair.
    RunVo,
    /// Train the six branches and the fusion head.
    Train {
        #[arg(long)]
        raw: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Refine raw poses with a trained model.
    Infer {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        raw: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// RPE and ATE of raw and, when given, refined poses.
    Eval {
        #[arg(long)]
        raw: Option<PathBuf>,
        #[arg(long)]
        refined: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Train and evaluate once per activation.
    Ablate {
        /// Comma-separated, e.g. tanh,relu,selu.
        #[arg(long, value_delimiter = ',', value_parser = parse_activation)]
        activations: Option<Vec<Activation>>,
        #[arg(long)]
        raw: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Per-stage latency and frames per second.
    Bench {
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<GeometryMode, String> {
    s.parse()
}

fn parse_units(s: &str) -> Result<AngleUnit, String> {
    s.parse()
}

fn parse_activation(s: &str) -> Result<Activation, String> {
    s.parse()
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(m) = cli.mode {
        cfg.mode = m;
    }
    if cli.no_align {
        cfg.eval.align = false;
    }
    if let Some(u) = cli.units {
        cfg.eval.units = u;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<String, PipelineError> {
    if let Command::InitConfig { path } = &cli.command {
        return match path {
            Some(p) => {
                pipeline::write_atomic(p, CONFIG_TEMPLATE.as_bytes())?;
                Ok(format!("wrote {}\n", p.display()))
            }
            None => Ok(CONFIG_TEMPLATE.to_string()),
        };
    }
    if let Command::SynthDataset {
        root,
        frames,
        corrupt_every,
        fixture_seed,
    } = &cli.command
    {
        if *frames < 2 {
            return Err(PipelineError::Usage("--frames must be at least 2".into()));
        }
        let fixture = FixtureConfig {
            frames: *frames,
            seed: *fixture_seed,
            corrupt_frames: match corrupt_every {
                0 => Vec::new(),
                k => (0..*frames).filter(|i| (i + 1).is_multiple_of(*k)).collect(),
            },
            ..FixtureConfig::default()
        };
        let (_, config) = pipeline::cmd_synth_dataset(root, &fixture)?;
        return Ok(format!(
            "wrote {} frames under {}\nconfig: {}\n",
            frames,
            root.display(),
            config.display()
        ));
    }

    let mut cfg = load_config(&cli)?;
    cfg.validate().map_err(PipelineError::Usage)?;
    Ok(match cli.command {
        Command::InitConfig { .. } | Command::SynthDataset { .. } => unreachable!("handled above"),
        Command::ConvertGt => pipeline::cmd_convert_gt(&cfg)?.text,
        Command::RunVo => pipeline::cmd_run_vo(&cfg)?.text,
        Command::Train { raw, gt } => {
            pipeline::cmd_train(&cfg, &EvalInputs { raw, gt, ..Default::default() })?.text
        }
        Command::Infer { model, raw, gt } => {
            pipeline::cmd_infer(&cfg, &EvalInputs { raw, gt, model, ..Default::default() })?.text
        }
        Command::Eval { raw, refined, gt } => {
            pipeline::cmd_eval(&cfg, &EvalInputs { raw, refined, gt, model: None })?.text
        }
        Command::Ablate { activations, raw, gt } => {
            let inputs = EvalInputs { raw, gt, ..Default::default() };
            pipeline::cmd_ablate(&cfg, &inputs, activations.as_deref())?.text
        }
        Command::Bench { pairs, model } => {
            if let Some(p) = pairs {
                cfg.bench.min_pairs = p.max(1);
            }
            pipeline::cmd_bench(&cfg, &EvalInputs { model, ..Default::default() })?.text
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
