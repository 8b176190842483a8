use thiserror::Error;

/// Every way a model evaluation, controller call or scenario can be rejected.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("theta{index} = {value:.6} rad is outside the admissible range (-pi/2, pi/2)")]
    OutsideDomain { index: usize, value: f64 },

    #[error("inertia matrix is not positive definite at this configuration")]
    SingularInertia,

    #[error("linear solve residual {residual:.3e} exceeds tolerance")]
    IllConditioned { residual: f64 },

    #[error("barrier domain violated: e_y^2 = {ey_sq:.6} >= rho = {rho}")]
    BarrierDomain { ey_sq: f64, rho: f64 },

    #[error("vertical thrust component u{index} = {value:.6} N is not positive")]
    Actuation { index: usize, value: f64 },

    #[error("setpoint is inconsistent with the formation geometry: {0}")]
    Setpoint(String),

    #[error("unreachable configuration: {0}")]
    Configuration(String),

    #[error("unknown body point `{0}` (expected drone1, drone2 or bar_mid)")]
    UnknownPoint(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),
}

pub type Result<T> = std::result::Result<T, Error>;
