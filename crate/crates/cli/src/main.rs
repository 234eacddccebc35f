//! `prompt-das`: synthetic DAS data, MAE pretraining, prompt tuning and reporting.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use prompt_das::error::Error;
use prompt_das::experiment::{self, RunConfig};
use prompt_das::metrics::format_percent;

#[derive(Parser)]
#[command(name = "prompt-das", version, about = "Prompt tuning of masked-autoencoder pretrained ViTs on DAS signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Key-value run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration key (`key=value`); may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic dataset into `data.dir`.
    Synth(Common),
    /// Resize an existing dataset (`preprocess.input`) into `data.dir`.
    Preprocess(Common),
    /// Masked-autoencoder pretraining.
    Pretrain(Common),
    /// Fine-tune with `method` (fft, lp or vpt).
    Finetune(Common),
    /// Evaluate a fine-tuned checkpoint.
    Eval(Common),
    /// Prompt-count, depth or data-size sweep.
    Sweep(Common),
    /// Aggregate metrics of previous runs into a table.
    Report(Common),
}

fn run(command: Command) -> Result<(), Error> {
    let (Command::Synth(c)
    | Command::Preprocess(c)
    | Command::Pretrain(c)
    | Command::Finetune(c)
    | Command::Eval(c)
    | Command::Sweep(c)
    | Command::Report(c)) = &command;
    let cfg = RunConfig::load(&c.config, &c.overrides)?;
    match command {
        Command::Synth(_) => {
            let spec = experiment::run_synth(&cfg)?;
            println!("wrote scenario `{}` ({} classes) to {}", spec.name, spec.class_specs.len(), cfg.data_dir.as_ref().expect("checked").display());
        }
        Command::Preprocess(_) => {
            let n = experiment::run_preprocess(&cfg)?;
            println!("resized {n} samples to {0}x{0}", cfg.preprocess_size);
        }
        Command::Pretrain(_) => {
            experiment::run_pretrain(&cfg)?;
            println!("wrote {}", cfg.output.join(experiment::PRETRAINED_FILE).display());
        }
        Command::Finetune(_) => {
            let out = experiment::run_finetune(&cfg)?;
            println!("{}: best val accuracy {:.4} at epoch {}", cfg.method, out.best_val_acc, out.best_epoch);
        }
        Command::Eval(_) => {
            let r = experiment::run_eval(&cfg)?;
            println!("{}: {} accuracy {:.4}, tuned {}", r.method, cfg.eval_split, r.accuracy, format_percent(r.trainable.fraction()));
        }
        Command::Sweep(_) => print!("{}", experiment::run_sweep(&cfg)?),
        Command::Report(_) => print!("{}", experiment::run_report(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("prompt-das: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
