use alloc::string::String;

/// Errors produced by the twin's kinematics, constraint and benchmark code.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),

    #[error("target unreachable: pose residual {residual:.3e} after {iterations} iterations")]
    Unreachable { iterations: usize, residual: f64 },

    #[error("joint {joint} at {value:.6} rad violates its limits")]
    JointLimit { joint: usize, value: f64 },

    #[error("degenerate calibration: flange orientations do not span the offset (sigma_min {sigma_min:.3e})")]
    DegenerateCalibration { sigma_min: f64 },

    #[error("tool axis misses the fulcrum by {miss:.6} m")]
    FulcrumMisalignment { miss: f64 },

    #[error("direction from fulcrum is undefined (point coincides with the hole)")]
    UndefinedDirection,

    #[error("tool retracted: outside length {r:.6} m is not shorter than tool length {tool_length:.6} m")]
    ToolRetracted { r: f64, tool_length: f64 },

    #[error("tip motion cannot be resolved at this state (singular spherical jacobian)")]
    DegenerateDirection,

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = core::result::Result<T, Error>;
