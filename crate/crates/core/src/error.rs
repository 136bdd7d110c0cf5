use thiserror::Error;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("analyzer angle must be finite, got {0}")]
    NonFiniteAngle(f64),

    #[error("analyzer on arm {arm} is absent where a polarizer setting is required")]
    AbsentAngle { arm: u8 },

    #[error("coincidence window saturated on arm {arm}: window x singles = {occupancy:.3e} >= 1")]
    WindowSaturation { arm: u8, occupancy: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no efficiency threshold for f = {f}: the CH sum is not violated anywhere in (0, 1]")]
    NoThreshold { f: f64 },

    #[error("singular fit: {0}")]
    SingularFit(String),
}

impl LabError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        LabError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
