use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sourcetrace::cli::{cmd_eval, cmd_kfold, cmd_synth, cmd_train, Outcome, ViewPaths};
use sourcetrace::metrics::EerMethod;
use sourcetrace::synth::{Mixing, SynthSpec};
use sourcetrace::Error;

#[derive(Parser)]
#[command(name = "sourcetrace", version, about = "Train and evaluate synthetic-speech source tracing models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MixingArg {
    Random,
    Identity,
}

#[derive(Clone, Copy, ValueEnum)]
enum EerArg {
    Midpoint,
    Interpolated,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a two-view synthetic embedding dataset.
    Synth {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        per_class: usize,
        #[arg(long)]
        da: usize,
        #[arg(long)]
        db: usize,
        /// Class-mean spacing in within-class standard deviations.
        #[arg(long)]
        sep: f64,
        /// Share of latent variance common to both views, in [0, 1].
        #[arg(long)]
        corr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        latent_dim: usize,
        #[arg(long, value_enum, default_value = "random")]
        mixing: MixingArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model from a JSON run config and evaluate it.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Stratified k-fold training and evaluation.
    Kfold {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Folds trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate a checkpoint on labelled embedding files.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        view_a: PathBuf,
        #[arg(long)]
        view_b: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the method recorded in the checkpoint.
        #[arg(long, value_enum)]
        eer_method: Option<EerArg>,
    },
}

fn report(outcome: &Outcome) {
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    println!("{}", outcome.summary);
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth {
            classes,
            per_class,
            da,
            db,
            sep,
            corr,
            seed,
            latent_dim,
            mixing,
            out,
        } => {
            let mut spec = SynthSpec::new(classes, per_class, da, db, sep, corr, seed);
            spec.latent_dim = latent_dim;
            spec.mixing = match mixing {
                MixingArg::Random => Mixing::Random,
                MixingArg::Identity => Mixing::Identity,
            };
            let (a, b) = cmd_synth(&spec, &out)?;
            println!("wrote {} and {}", a.display(), b.display());
        }
        Command::Train { config } => report(&cmd_train(&config)?),
        Command::Kfold { config, k, jobs } => report(&cmd_kfold(&config, k, jobs)?),
        Command::Eval {
            checkpoint,
            view_a,
            view_b,
            out,
            eer_method,
        } => {
            let method = eer_method.map(|m| match m {
                EerArg::Midpoint => EerMethod::Midpoint,
                EerArg::Interpolated => EerMethod::Interpolated,
            });
            let (_, outcome) = cmd_eval(&checkpoint, &ViewPaths { view_a, view_b }, &out, method)?;
            report(&outcome);
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
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
