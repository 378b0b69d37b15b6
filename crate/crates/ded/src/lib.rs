//! File formats, run configuration and the command-line pipeline around
//! `ded-core`.

pub mod cli;
pub mod config;
pub mod io;
pub mod pipeline;
pub mod stages;

/// Bad input: configuration, file contents or shapes. Maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ValidationError(pub String);

/// Exit status for an error: 2 for validation failures, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use ded_core::Error as E;
    for cause in err.chain() {
        if cause.is::<ValidationError>() || cause.is::<io::ParseError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidMdp(_)
                | E::InvalidLayout(_)
                | E::InvalidParameter(_)
                | E::DimensionMismatch { .. }
                | E::ShapeMismatch(_)
                | E::MalformedTrajectory { .. }
                | E::NonTabularData(_)
                | E::OutOfRange { .. }
                | E::BadIndex { .. } => 2,
                _ => 1,
            };
        }
    }
    1
}
