//! Library side of the `replab` command: subcommand implementations, CSV
//! tables, SVG figures and the toy replication driver.

pub mod commands;
pub mod replicate;
pub mod svg;
pub mod table;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    /// Bad input: unreadable or inconsistent files, invalid flags or config.
    pub const INPUT: i32 = 1;
    /// Anything else, including training divergence and panics.
    pub const INTERNAL: i32 = 2;
}

/// Exit code for a failed command.
pub fn exit_code(err: &replab::Error) -> i32 {
    if err.is_input_error() {
        exit::INPUT
    } else {
        exit::INTERNAL
    }
}
