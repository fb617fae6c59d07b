use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] headprobe_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("no token series: dump was written in LAST mode")]
    NoTokenSeries,
    #[error("example {0:?} not found in dump")]
    NotFound(String),
    #[error("cell (example {example}, token {token}, layer {layer}, head {head}) {problem}")]
    Cell {
        example: usize,
        token: usize,
        layer: usize,
        head: usize,
        problem: &'static str,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("split hygiene violated: {0}")]
    Leak(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Core(e) if e.is_numerical() => 4,
            Error::Core(headprobe_core::Error::InvalidConfig(_)) => 2,
            _ => 3,
        }
    }
}
