//! Input systems (trajectory files, teleop) and output systems (CSV logs,
//! live telemetry).

pub mod input;
pub mod log;
pub mod telemetry;
pub mod teleop;
pub mod trajectory;

use thiserror::Error;

use crate::record::RecordError;

pub use input::{TeleopInput, TrajectoryInput};
pub use log::{log_header, log_path, log_row, LogWriter, LOG_SPACES};
pub use telemetry::{Broadcaster, TelemetryServer, TELEMETRY_PROTOCOL};
pub use teleop::{
    teleop_schema, teleop_to_input, TeleopCommand, TeleopFrame, TeleopHub, TeleopMessage,
    TeleopTarget,
};
pub use trajectory::{load_trajectory, parse_trajectory, Trajectory};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: time {t} does not increase")]
    NonMonotoneTime { path: String, line: usize, t: f64 },
    #[error("{0}")]
    Message(String),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
