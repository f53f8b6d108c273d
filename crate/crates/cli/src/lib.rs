//! Experiment harness around the `matchradius` library: scenario files,
//! batch runs over seeds, and result reports.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod report;

pub use config::{InvalidConfig, ScenarioConfig};

/// Process exit code for a failed command: 2 when the inputs were rejected
/// (bad configuration or an incompatible checkpoint), 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let rejected = err.chain().any(|e| {
        e.is::<InvalidConfig>()
            || matches!(
                e.downcast_ref::<matchradius::Error>(),
                Some(matchradius::Error::Config(_) | matchradius::Error::CheckpointMismatch(_))
            )
    });
    if rejected {
        2
    } else {
        1
    }
}
