use thiserror::Error;

pub type Result<T, E = MsaeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MsaeError {
    #[error("degenerate bout: frame-0 mean segment length {0:e} is below 1e-12")]
    DegenerateBout(f64),

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("{len} frames cannot be split into slices of {frames_per_slice}")]
    SliceMisaligned { len: usize, frames_per_slice: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: {message}")]
    Shape { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint checksum mismatch: {0}")]
    ChecksumMismatch(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("only {visible} visible frames remain, fewer than one slice of {frames_per_slice}")]
    EmptyVisible { visible: usize, frames_per_slice: usize },

    #[error("mask plan covers {plan_frames}x{plan_joints}, sequence is {frames}x{joints}")]
    PlanMismatch {
        plan_frames: usize,
        plan_joints: usize,
        frames: usize,
        joints: usize,
    },

    #[error("position (frame {frame}, joint {joint}) is outside the positional tables")]
    PositionOutOfRange { frame: usize, joint: usize },

    #[error("loss support is empty: no masked positions")]
    EmptyLossSupport,

    #[error("non-finite gradient in tensor `{tensor}` (flat index {index})")]
    NonFiniteGradient { tensor: String, index: usize },

    #[error("non-finite loss; {0}")]
    NonFiniteLoss(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("step {step}: {source}")]
    AtStep {
        step: u64,
        #[source]
        source: Box<MsaeError>,
    },
}

impl MsaeError {
    /// Strips any step context.
    pub fn root(&self) -> &MsaeError {
        match self {
            MsaeError::AtStep { source, .. } => source.root(),
            other => other,
        }
    }
}
