//! Pipeline orchestration for the `kiqt` binary: dataset simulation,
//! ensemble training, evaluation with figures, and report merging.

pub mod artifacts;
pub mod commands;
pub mod dataset;
pub mod figures;
pub mod profile;

pub use commands::{run, Cli, Command};
pub use profile::Profile;
