//! `clot`: synthetic data, training, segmentation, evaluation and solver
//! utilities on the command line.
//!
//! Exit codes: 0 success, 2 bad input or configuration, 3 state conflicts
//! (existing outputs, incompatible checkpoints), 4 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use clot::eval::MatchLevel;
use clot::pipeline::DecodeSource;

#[derive(Parser)]
#[command(name = "clot", version, about = "Unsupervised action segmentation with closed-loop optimal transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a key = value spec file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Run configuration (key = value); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines training log, one record per optimizer step.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Overrides the seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Overwrite an existing checkpoint.
        #[arg(long)]
        force: bool,
    },
    /// Segment every video of a dataset with a trained checkpoint.
    Segment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "TR")]
        decode_from: DecodeSource,
    },
    /// Score predicted label files against ground truth.
    Eval {
        /// Directory of `<video>.txt` predictions.
        #[arg(long)]
        pred: PathBuf,
        /// Dataset directory (uses its labels/) or a directory of label files.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value = "activity")]
        level: MatchLevel,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ground-truth label excluded from matching and scoring.
        #[arg(long)]
        ignore: Option<usize>,
    },
    /// Solve one fused transport problem on a raw cost matrix.
    Solve {
        /// N×K cost matrix in feature-file format.
        #[arg(long)]
        cost: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        alpha: f64,
        #[arg(long, default_value_t = 0.07)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        /// Temporal adjacency radius of the row structure matrix.
        #[arg(long, default_value_t = 1)]
        radius: usize,
        #[arg(long, default_value_t = 10)]
        outer_iters: usize,
        #[arg(long, default_value_t = 500)]
        inner_iters: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Coupling output; a JSON sidecar is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    CheckGrad {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Deliberately corrupt one backward rule (test fixture).
        #[arg(long, hide = true)]
        inject_fault: Option<FaultArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    Relu,
    Softmax,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match commands::threads_from_env() {
        Ok(t) => t,
        Err(e) => return fail(&e),
    };
    let result = match cli.command {
        Command::Synth { spec, out } => commands::synth(&spec, &out),
        Command::Train { data, config, out, log, seed, force } => {
            commands::train(&data, config.as_deref(), &out, log.as_deref(), seed, force, threads)
        }
        Command::Segment { data, ckpt, out, decode_from } => commands::segment(&data, &ckpt, &out, decode_from, threads),
        Command::Eval { pred, gt, level, out, ignore } => commands::eval(&pred, &gt, level, out.as_deref(), ignore),
        Command::Solve { cost, alpha, epsilon, lambda, radius, outer_iters, inner_iters, tol, out } => {
            let ot = clot::ot::OtConfig { alpha, epsilon, lambda, outer_iters, inner_iters, tol };
            commands::solve(&cost, &ot, radius, &out)
        }
        Command::CheckGrad { seed, json, inject_fault } => {
            let fault = inject_fault.map(|f| match f {
                FaultArg::Relu => clot::model::Fault::LeakyReluBackward,
                FaultArg::Softmax => clot::model::Fault::SoftmaxSkipsCorrection,
            });
            commands::check_grad(seed, json.as_deref(), fault)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => fail(&e),
    }
}

fn fail(e: &clot::ClotError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}
