use thiserror::Error;

/// Errors raised while building or moving through a scene.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("only a single RIS panel is supported, found {0}")]
    MultipleRis(usize),
    #[error("agent left the room at {position:?}")]
    LeftRoom { position: [f64; 3] },
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("negative time step {0}")]
    NegativeStep(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("zero-length propagation leg")]
    ZeroLength,
    #[error("transmitter or receiver lies in the RIS plane")]
    InPanelPlane,
    #[error("path is not of the expected class: {0}")]
    WrongPathClass(&'static str),
    #[error("phase configuration does not match the panel ({0})")]
    PhaseShape(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrlbError {
    #[error("position is unobservable from the given paths")]
    Unobservable,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("invalid GA configuration: {0}")]
    InvalidConfig(String),
    #[error("search space of {0} configurations exceeds the exhaustive limit")]
    SearchSpaceTooLarge(f64),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Crlb(#[from] CrlbError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("scenario error at cycle {cycle}: {source}")]
    Scenario { cycle: usize, source: EnvError },
    #[error("config: {0}")]
    Config(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
