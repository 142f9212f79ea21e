use alloc::string::String;

/// Errors raised by the core computations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// The field has no pointwise value at this time.
    #[error("time {t} is outside the domain (0, 1]")]
    TimeDomain { t: f64 },

    #[error("time step {dt} is outside [0, {max}] for stage {stage}; split the step across stages")]
    StepOutOfRange { stage: u32, dt: f64, max: f64 },

    #[error("query reaches stage {needed}, beyond the configured depth {max_depth}; raise the depth")]
    DepthExceeded { needed: u32, max_depth: u32 },

    #[error("density at level {level} is too coarse for stage {stage}; refine to level {required} first")]
    LevelTooCoarse { level: u32, stage: u32, required: u32 },

    #[error("stage {stage} is not admissible for mollification radius {eps}; deepest admissible stage is {max_stage}")]
    StageNotAdmissible { stage: u32, eps: f64, max_stage: i64 },

    #[error("grid spacing {h} is too coarse for mollification radius {eps} (need h <= eps/8)")]
    GridTooCoarse { h: f64, eps: f64 },

    #[error("invalid mollification radius {eps} (need 0 < eps < 1/4)")]
    InvalidRadius { eps: f64 },

    #[error("step {step} does not divide the segment [{a}, {b}] between stage boundaries")]
    MisalignedStep { step: f64, a: f64, b: f64 },

    #[error("time {t} is outside the path range [{t_min}, {t_max}]")]
    TimeOutOfRange { t: f64, t_min: f64, t_max: f64 },

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("cannot parse dyadic from {0:?}")]
    Parse(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
