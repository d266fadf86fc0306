use std::io;
use std::path::PathBuf;

use topple_core::dataset::DatasetError;
use topple_core::eval::EvalError;
use topple_core::learn::LearnError;
use topple_core::physics::SimError;
use topple_core::render::RenderError;
use topple_core::scene::SceneError;
use topple_core::stability::StabilityError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("no dataset at {0} (run `topple dataset` first)")]
    MissingDataset(PathBuf),
    #[error("scene {scene_id}: {msg}")]
    Scene { scene_id: String, msg: String },
    #[error(transparent)]
    Generation(#[from] SceneError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for the CLI, one per failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::Json { .. } | Error::Format { .. } => 4,
            Error::MissingDataset(_) => 5,
            Error::Scene { .. }
            | Error::Generation(_)
            | Error::Simulation(_)
            | Error::Stability(_)
            | Error::Render(_) => 6,
            Error::Learn(_) | Error::Eval(_) | Error::Dataset(_) => 7,
            Error::Config(_) => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
