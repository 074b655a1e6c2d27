use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("twisted seam transport is only defined on axis 0, requested axis {0}")]
    TwistedAxis(usize),
    #[error("operation needs a grid-mode domain")]
    NotGridMode,
    #[error("singular or non-finite metric at node {node}")]
    SingularMetric { node: usize },
    #[error("nonpositive volume element at node {node}")]
    NonpositiveVolume { node: usize },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("step size collapsed at t = {t}: dt = {dt} fell below dt_min")]
    StepCollapse { t: f64, dt: f64 },
    #[error("density lost positivity at t = {t}")]
    PositivityLost { t: f64 },
    #[error("density mass {mass} deviates from 1 under the active convention")]
    MassViolation { mass: f64 },
    #[error("invalid soliton spec: {0}")]
    InvalidSpec(String),
    #[error("time window [{start}, {end}] is not covered by the trajectory")]
    WindowNotCovered { start: f64, end: f64 },
    #[error("oracle probe leaves the interpolation region around node {node}")]
    ProbeOutOfRange { node: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
