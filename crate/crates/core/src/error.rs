use thiserror::Error;

/// A configuration value failed validation. `field` names the offending key.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid configuration `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("mass matrix is not positive definite at q = {0:?}")]
    SingularMassMatrix([f64; 3]),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("action index {index} out of range for {count} actions")]
    InvalidAction { index: usize, count: usize },
    #[error("snapshot was taken from a differently configured environment")]
    SnapshotMismatch,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnError {
    #[error("replay buffer holds {len} transitions, batch needs {batch}")]
    InsufficientSamples { len: usize, batch: usize },
    #[error("online and target networks have different layouts")]
    LayoutMismatch,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
