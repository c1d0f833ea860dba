//! `bcol`: benchmark CLI for budgeted-counterfactual offline RL on finite
//! MDPs.
//!
//! Exit codes: 0 = all checks passed, 1 = a check failed (or a runtime
//! error), 2 = usage error.

mod commands;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Ctx;
use spec::ExperimentSpec;

#[derive(Parser)]
#[command(
    name = "bcol",
    version,
    about = "Budgeted-counterfactual offline RL: exact solver, oracles, training pipelines, sweeps, ablations"
)]
struct Cli {
    /// Experiment spec file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    spec: Option<PathBuf>,

    /// Output directory (overrides the spec's [output] dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed override: sets the dataset, training, and evaluation
    /// seeds at once.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for sweep cells (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Suppress progress output (result files are always written).
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the environment exactly and certify the fixed point against
    /// the independent oracles.
    Solve,
    /// Generate an offline dataset under the logging policy.
    GenData {
        /// Environment name (overrides the spec's [env] name).
        #[arg(long)]
        env: Option<String>,
        /// Episodes to draw (overrides [dataset]).
        #[arg(long)]
        episodes: Option<usize>,
        /// Actions per episode (overrides [dataset]).
        #[arg(long)]
        horizon: Option<usize>,
        /// Logging policy: designated, uniform, or mix:<eps>.
        #[arg(long)]
        logging: Option<String>,
        /// Dataset file to write (defaults to <out>/dataset.txt).
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Offline pipeline: generate data, train, evaluate, persist
    /// checkpoints and result rows.
    Train,
    /// Evaluate stored checkpoints (q_theta.txt, logits.txt, mu_hat.txt).
    Eval {
        /// Checkpoint directory (defaults to the output directory).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every cell of the budget × omega grid.
    Sweep,
    /// Compare the full method against the three reference schemes:
    /// no_budgeting, random_budget_unplanned, random_budget_trained.
    Ablate {
        /// Use exact dynamic-programming solutions instead of training.
        #[arg(long)]
        exact: bool,
    },
}

fn build_ctx(cli: &Cli) -> anyhow::Result<Ctx> {
    let mut spec = match &cli.spec {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.dataset.seed = seed;
        spec.train.seed = seed;
        spec.eval.seed = seed;
    }
    let out_dir = cli.out.clone().unwrap_or_else(|| spec.output.dir.clone());
    Ok(Ctx {
        spec,
        out_dir,
        quiet: cli.quiet,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.workers > 0 {
        // Sweep parallelism; per-cell work stays deterministic regardless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global();
    }
    let mut ctx = match build_ctx(&cli) {
        Ok(ctx) => ctx,
        Err(err) => {
            eprintln!("error: {err:#}");
            return ExitCode::from(2);
        }
    };
    let outcome = match &cli.command {
        Command::Solve => commands::cmd_solve(&ctx),
        Command::GenData {
            env,
            episodes,
            horizon,
            logging,
            file,
        } => {
            if let Some(name) = env {
                ctx.spec.env.name = name.clone();
            }
            if let Some(n) = episodes {
                ctx.spec.dataset.episodes = *n;
            }
            if let Some(h) = horizon {
                ctx.spec.dataset.horizon = *h;
            }
            if let Some(l) = logging {
                ctx.spec.dataset.logging = l.clone();
            }
            commands::cmd_gen_data(&ctx, file.clone())
        }
        Command::Train => commands::cmd_train(&ctx),
        Command::Eval { checkpoint } => commands::cmd_eval(&ctx, checkpoint.clone()),
        Command::Sweep => commands::cmd_sweep(&ctx),
        Command::Ablate { exact } => commands::cmd_ablate(&ctx, *exact),
    };
    match outcome {
        Ok(status) if status.checks_passed => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(err) => {
            // Unknown names and malformed specs are usage errors; anything
            // else is a failed run.
            let usage = err.downcast_ref::<bcol::envs::EnvError>().is_some();
            eprintln!("error: {err:#}");
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
