//! Run configuration, text formats and the batch drivers.

pub mod config;
pub mod driver;
pub mod format;

pub use config::{ConfigError, InitialSpec, RunConfig, SweepSpec};
pub use driver::{
    run_verify, simulate, steady, sweep, DriverError, SimulateReport, SteadyReport, SweepReport,
};
pub use format::{ledger_csv, parse_ledger_csv, FormatError, Snapshot, LEDGER_HEADER};
