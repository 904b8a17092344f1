//! Command implementations and the experiment harness behind the `pwgp`
//! binary. Kept as a library so integration tests can drive the same
//! code paths the executable uses.

pub mod args;
pub mod commands;
pub mod experiments;
pub mod model;

use pwgp::Error;

/// Process exit codes: 0 ok, 2 usage/config, 3 IO, 4 numerical
/// degeneracy.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::Format { .. } => 3,
        Error::NotFactorizable { .. } | Error::NotSymmetric { .. } => 4,
        _ => 2,
    }
}
