//! Library behind the `cmplan` binary: experiment configuration, problem
//! sets, benchmark records and the subcommands.

pub mod bench;
pub mod commands;
pub mod config;
pub mod pathfile;
pub mod problems;

pub use bench::{run_bench, run_problem, summarize, Models, RunOutput, RunRecord, Summary};
pub use config::{Cell, ExperimentConfig, Planner, SamplerKind, SceneSource};
pub use problems::{Problem, ProblemSet};
