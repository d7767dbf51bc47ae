//! One module per subcommand. Each takes a fully resolved config (output
//! directory included), computes everything in memory and only then writes.

pub mod compare;
pub mod gen_data;
pub mod plot;
pub mod theory;
pub mod train;

use std::path::PathBuf;

use crate::{CliError, CliResult};

pub(crate) fn output_dir(configured: &Option<String>) -> CliResult<PathBuf> {
    configured
        .as_deref()
        .map(PathBuf::from)
        .ok_or_else(|| CliError::config("output_dir is not set"))
}
