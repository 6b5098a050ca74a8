//! Pipeline orchestration behind the `panlab` binary.

pub mod commands;
pub mod config;
pub mod dataset;

pub use config::RunConfig;

/// Process exit code for an error chain: 2 config, 3 data, 4 divergence.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use panlab::ErrorKind;
    match err.chain().find_map(|e| e.downcast_ref::<panlab::Error>()).map(panlab::Error::kind) {
        Some(ErrorKind::Config) => 2,
        Some(ErrorKind::Numeric) => 4,
        Some(ErrorKind::Data) | None => 3,
    }
}
