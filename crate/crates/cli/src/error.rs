use shapeforge_core::Error as CoreError;
use std::path::PathBuf;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing dataset {}; run `shapeforge gen` with the same configuration first", .0.display())]
    MissingDataset(PathBuf),

    #[error("missing checkpoint {}; run `shapeforge train` first", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error("{} does not match the metrics report schema: missing or invalid field `{field}`", path.display())]
    SchemaMismatch { path: PathBuf, field: String },

    #[error("run directory {} is in use (lock file {} exists)", dir.display(), lock.display())]
    Locked { dir: PathBuf, lock: PathBuf },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for missing or corrupt data, 4 for a
    /// diverged loss, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingDataset(_) | CliError::MissingCheckpoint(_) | CliError::SchemaMismatch { .. } => 3,
            CliError::Json(_) => 3,
            CliError::Io(_) => 3,
            CliError::Locked { .. } => 1,
            CliError::Core(e) => match e {
                CoreError::InvalidConfig(_)
                | CoreError::OddBatchSize(_)
                | CoreError::InvalidLambda(_)
                | CoreError::InvalidLevel(_)
                | CoreError::IndivisibleDimensions { .. } => 2,
                CoreError::DivergedLoss { .. } => 4,
                _ => 3,
            },
        }
    }
}
