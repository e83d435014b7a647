//! Library side of the `gspn` command: the verification suite, the scaling
//! benchmark, heatmap extraction and toy training, plus the exit-code
//! contract shared by all subcommands.

pub mod bench;
pub mod checks;
pub mod heatmap;
pub mod train;

use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Gspn(#[from] gspn::Error),
    #[error(transparent)]
    Tensor(#[from] gspn::TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        }
    }
}

/// Worker count from `--threads`, else `GSPN_THREADS`, else rayon's default.
pub fn resolve_threads(flag: Option<usize>, env: Option<&str>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        return Ok(Some(n));
    }
    match env.map(str::trim).filter(|s| !s.is_empty()) {
        None => Ok(None),
        Some(s) => match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("GSPN_THREADS must be a positive integer, got `{s}`"))),
        },
    }
}
