use std::io;
use std::path::PathBuf;
use std::time::Duration;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed profile{}: {reason}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    MalformedProfile { line: Option<usize>, reason: String },

    #[error("unknown profile `{0}` (built-ins: 3b, 7b, 13b)")]
    UnknownProfile(String),

    #[error("invalid alignment {0}: must be a power of two >= 512")]
    InvalidAlignment(u64),

    #[error("workload has no objects")]
    EmptyWorkload,

    #[error("plan does not match: {0}")]
    PlanMismatch(String),

    #[error("{path}: filesystem rejected direct I/O: {source}")]
    DirectUnsupported { path: PathBuf, source: io::Error },

    #[error("{path}: {source}")]
    Path { path: PathBuf, source: io::Error },

    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },

    #[error("{what} {value} is not a multiple of the {alignment}-byte alignment")]
    AlignmentViolation { what: &'static str, value: u64, alignment: u64 },

    #[error("invalid file handle {0}")]
    InvalidHandle(u32),

    #[error("request not permitted on handle opened {0}")]
    ModeViolation(&'static str),

    #[error("missing checkpoint file {0}")]
    MissingFile(PathBuf),

    #[error("manifest unusable: {0}")]
    ShortManifest(String),

    #[error("rendezvous `{label}` timed out after {waited:?}: {arrived}/{world} ranks arrived")]
    RendezvousTimeout { label: String, arrived: usize, world: usize, waited: Duration },

    #[error("rank {rank} failed with exit code {code}: {diagnostics}")]
    RankFailure { rank: u32, code: i32, diagnostics: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    /// A missing path becomes [`Error::MissingFile`].
    pub fn path(path: impl Into<PathBuf>, source: io::Error) -> Self {
        let path = path.into();
        if source.kind() == io::ErrorKind::NotFound {
            return Error::MissingFile(path);
        }
        Error::Path { path, source }
    }

    /// Process exit code used by the command line tool: 3 for I/O problems,
    /// 4 for rendezvous timeouts, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::RendezvousTimeout { .. } => 4,
            Error::RankFailure { code, .. } => *code,
            Error::DirectUnsupported { .. }
            | Error::Path { .. }
            | Error::Io { .. }
            | Error::MissingFile(_)
            | Error::ShortManifest(_) => 3,
            _ => 1,
        }
    }
}
