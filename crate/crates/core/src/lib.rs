//! Discrete-event model of a national firewall's Tor blocking: DPI
//! fingerprinting, active scanning, block-table lifecycle, and the
//! countermeasures that defeat each stage.

pub mod analysis;
pub mod blocktable;
pub mod bundled;
pub mod dpi;
pub mod evasion;
pub mod protocol;
pub mod scanner;
pub mod scenario;
pub mod sim;
pub mod simnet;

use thiserror::Error;

pub use analysis::{ExperimentReport, TimeSeries};
pub use blocktable::{BlockEntry, BlockMode, BlockPolicy, BlockTable};
pub use scanner::{ScanJob, ScanOutcome};
pub use scenario::Scenario;
pub use sim::RunOutput;
pub use simnet::{EventLog, LogKind, LogRecord, Segment, SimTime};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("unknown random stream '{0}'")]
    UnknownStream(String),
}
