use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fairlatent::classifier::RegScope;
use fairlatent::estimator::LatentMode;
use fairlatent_cli::commands::{
    cmd_ablate, cmd_estimate, cmd_evaluate, cmd_pipeline, cmd_sweep, cmd_synth, cmd_train,
};
use fairlatent_cli::experiments::{AblateMode, SweepParam};
use fairlatent_cli::{Overrides, RunConfig, Stage, StageError};

#[derive(Parser)]
#[command(name = "fairlatent", version, about = "Fair classification with an estimated latent sensitive attribute")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    mi: Option<Switch>,
    #[arg(long, global = true)]
    latents: Option<Latents>,
    #[arg(long = "reg-scope", global = true)]
    reg_scope: Option<Scope>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Latents {
    Mean,
    Sample,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    Batch,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    Lambda,
    Beta,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Random,
    Top1,
    Noisy,
    Gm,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic dataset as CSV.
    Synth,
    /// Train the sensitive-attribute estimator.
    Estimate,
    /// Train the classifier (uses the estimator from `estimate`).
    Train,
    /// Evaluate stored models on the test split.
    Evaluate,
    /// Estimate, train and evaluate in one run.
    Pipeline,
    /// Sweep lambda or beta over a grid.
    Sweep {
        #[arg(long)]
        param: Param,
        /// Comma-separated values; defaults to the config's grid.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Estimation AUC under alternative relevant-feature choices.
    Ablate {
        /// Modes to run; all of them by default.
        #[arg(long, value_delimiter = ',')]
        mode: Option<Vec<Mode>>,
    },
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            lambda: self.lambda,
            beta: self.beta,
            mi: self.mi.map(|s| matches!(s, Switch::On)),
            latents: self.latents.map(|l| match l {
                Latents::Mean => LatentMode::Mean,
                Latents::Sample => LatentMode::Sample,
            }),
            reg_scope: self.reg_scope.map(|s| match s {
                Scope::Batch => RegScope::Batch,
                Scope::Full => RegScope::Full,
            }),
            out: self.out.clone(),
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, StageError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|source| StageError {
            stage: Stage::Config,
            source,
        })?,
        None => RunConfig::default(),
    };
    cfg.apply(&common.overrides());
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), StageError> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Synth => {
            let path = cmd_synth(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::Estimate => {
            let s = cmd_estimate(&cfg)?;
            println!("final_loss={}", s.final_loss);
            if let Some(v) = s.estimation_auc {
                println!("estimation_auc={v}");
            }
            if let Some(v) = s.raw_relevant_auc {
                println!("raw_relevant_auc={v}");
            }
        }
        Command::Train => {
            cmd_train(&cfg)?;
            println!("wrote {}", cfg.out.join(fairlatent_cli::commands::CLASSIFIER_FILE).display());
        }
        Command::Evaluate => print!("{}", cmd_evaluate(&cfg)?.to_key_value()),
        Command::Pipeline => print!("{}", cmd_pipeline(&cfg)?.to_key_value()),
        Command::Sweep { param, grid } => {
            let param = match param {
                Param::Lambda => SweepParam::Lambda,
                Param::Beta => SweepParam::Beta,
            };
            let rows = cmd_sweep(&cfg, param, grid.as_deref())?;
            for r in rows {
                let auc = r.estimation_auc.map(|v| v.to_string()).unwrap_or_default();
                println!(
                    "{}={} accuracy={} delta_eo={} delta_dp={} estimation_auc={auc}",
                    param.name(),
                    r.value,
                    r.accuracy,
                    r.delta_eo,
                    r.delta_dp
                );
            }
        }
        Command::Ablate { mode } => {
            let modes: Vec<AblateMode> = match mode {
                None => AblateMode::ALL.to_vec(),
                Some(m) => m
                    .into_iter()
                    .map(|m| match m {
                        Mode::Random => AblateMode::Random,
                        Mode::Top1 => AblateMode::Top1,
                        Mode::Noisy => AblateMode::Noisy,
                        Mode::Gm => AblateMode::Gm,
                    })
                    .collect(),
            };
            for r in cmd_ablate(&cfg, &modes)? {
                println!("{} [{}] estimation_auc={}", r.mode, r.relevant.join(","), r.estimation_auc);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
