use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fuzzyssvep::experiment::{self, ExperimentConfig, WindowChoice};
use fuzzyssvep::explain::NormAxis;
use fuzzyssvep::Result;
use serde_json::Value;

#[derive(Parser)]
#[command(name = "fuzzyssvep", version, about = "Fuzzy-attention SSVEP decoding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training seed (the synthesis seed for `gen`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for LOSO folds.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Window length in seconds; replaces the evaluation window list.
    #[arg(long)]
    window_seconds: Option<f64>,
    /// Dotted-path override, e.g. `--set train.max_epochs=200`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Norm {
    Rules,
    Tokens,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset file.
    Gen(Common),
    /// Train one model.
    Train(Common),
    /// Leave-one-subject-out cross-validation.
    Loso(Common),
    /// Score a checkpoint on fixed test windows.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Subjects to score; all when omitted.
        #[arg(long, value_delimiter = ',')]
        subjects: Option<Vec<usize>>,
    },
    /// Firing strengths, recovered centers and rule spectra for one window.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        subject: usize,
        #[arg(long)]
        trial: usize,
        /// Index among the trial's fixed test windows.
        #[arg(long, default_value_t = 0, conflicts_with = "start")]
        window: usize,
        /// Explicit window start sample.
        #[arg(long)]
        start: Option<usize>,
        /// Also write min-max scaled firing matrices for display.
        #[arg(long, value_enum)]
        normalize: Option<Norm>,
    },
    /// Finite-difference check of the analytic gradients.
    Gradcheck(Common),
}

fn load(common: &Common, gen: bool) -> Result<ExperimentConfig> {
    let mut overrides: Vec<(String, Value)> = Vec::new();
    if let Some(seed) = common.seed {
        let key = if gen { "synthesis.seed" } else { "train.seed" };
        overrides.push((key.into(), Value::from(seed)));
    }
    if let Some(out) = &common.out {
        overrides.push(("out_dir".into(), Value::from(out.to_string_lossy().into_owned())));
    }
    if let Some(w) = common.window_seconds {
        overrides.push(("eval.window_seconds".into(), Value::from(vec![w])));
        overrides.push(("train.window_seconds".into(), Value::from(w)));
    }
    for s in &common.set {
        overrides.push(experiment::parse_override(s)?);
    }
    ExperimentConfig::load(common.config.as_deref(), &overrides)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen(c) => {
            let cfg = load(&c, true)?;
            let path = experiment::cmd_gen(&cfg)?;
            println!("{}", path.display());
        }
        Command::Train(c) => {
            let cfg = load(&c, false)?;
            let summary = experiment::cmd_train(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
        }
        Command::Loso(c) => {
            let cfg = load(&c, false)?;
            let summary = experiment::cmd_loso(&cfg, c.jobs.max(1))?;
            for w in &summary.windows {
                println!(
                    "window {} s: accuracy {:.4} ± {:.4}, ITR {:.2} ± {:.2} bits/min",
                    w.window_seconds, w.accuracy_mean, w.accuracy_sd, w.itr_mean, w.itr_sd
                );
            }
        }
        Command::Eval {
            common,
            checkpoint,
            subjects,
        } => {
            let cfg = load(&common, false)?;
            let summary = experiment::cmd_eval(
                &cfg,
                &checkpoint,
                subjects.as_deref(),
                common.window_seconds,
            )?;
            for s in &summary.subjects {
                println!(
                    "subject {}: accuracy {:.4}, ITR {:.2} bits/min",
                    s.subject, s.report.accuracy, s.report.itr
                );
            }
        }
        Command::Explain {
            common,
            checkpoint,
            subject,
            trial,
            window,
            start,
            normalize,
        } => {
            let cfg = load(&common, false)?;
            let choice = match start {
                Some(s) => WindowChoice::Start(s),
                None => WindowChoice::TestWindow(window),
            };
            let axis = normalize.map(|n| match n {
                Norm::Rules => NormAxis::Rules,
                Norm::Tokens => NormAxis::Tokens,
            });
            let report = experiment::cmd_explain(&cfg, &checkpoint, subject, trial, choice, axis)?;
            println!(
                "predicted class {}, true class {}",
                report.predicted_class,
                report.true_class.map_or("-".into(), |c| c.to_string())
            );
        }
        Command::Gradcheck(c) => {
            let cfg = load(&c, false)?;
            let runs = experiment::cmd_gradcheck(&cfg)?;
            let mut ok = true;
            for run in &runs {
                let r = &run.report;
                println!(
                    "{:?} (h = {:e}, {}, tolerance {:e})",
                    run.consequent_mode, r.h, r.precision, r.tolerance
                );
                for g in &r.groups {
                    println!(
                        "  {:<24} {} max rel {:.3e} at {:?}",
                        g.group,
                        if g.passed { "pass" } else { "FAIL" },
                        g.max_rel_error,
                        g.worst_index
                    );
                }
                ok &= r.passed;
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
