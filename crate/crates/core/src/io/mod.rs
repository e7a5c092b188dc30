//! Configuration, file formats and the scenario runner behind the
//! `qdinterf` binary.

pub mod config;
pub mod formats;
pub mod scenario;

pub use config::{RunConfig, Scenario};
pub use formats::{load_histogram, read_mask, save_histogram, write_mask, Table};
pub use scenario::{emit_plotdata, load_bundle, run_scenario, write_bundle, NamedTrace, ResultBundle};
