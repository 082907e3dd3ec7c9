//! Experiment harness: configuration, presets and the subcommands behind
//! the `discflow` binary.

pub mod commands;
pub mod config;
pub mod pgm;
pub mod presets;
pub mod problem;

pub use commands::{
    cmd_baseline, cmd_compare, cmd_eval_gmm, cmd_render_ising, cmd_sample, cmd_train, Baseline,
    GmmEval, RunMeta, SampleOutcome, Timings, TrainSummary,
};
pub use config::ExperimentConfig;

use discflow::Error;

/// Process exit status for an error: 2 configuration, 3 numeric or
/// training failure, 4 input/output.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Dimension(_) | Error::Domain(_) => 2,
        Error::Numeric(_) | Error::Training(_) => 3,
        Error::Format(_) | Error::Io(_) | Error::Csv(_) => 4,
    }
}
