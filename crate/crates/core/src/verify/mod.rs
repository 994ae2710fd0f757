//! Closed-loop simulation and the verification harness.

mod lyapunov;
mod performance;
mod regularity;
mod simulate;
mod stability;

use thiserror::Error;

use crate::cesaro::CesaroError;
use crate::model::ModelError;
use crate::ocp::OcpError;
use crate::rotation::RotationError;

pub use lyapunov::{check_lyapunov, LyapunovOptions};
pub use performance::{check_performance, performance_csv, PerformanceOptions, PerformanceRow};
pub use regularity::{check_feasibility_near_orbit, check_vn_regularity, RegularityRow};
pub use simulate::{simulate_closed_loop, simulate_with_policy, ClosedLoopRun};
pub use stability::{
    check_stability_eps_delta, check_turnpike, storage_constant, turnpike_count, turnpike_row, EpsDeltaRow,
    StabilityOptions, TurnpikeRow,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("closed loop infeasible at step {step} (state {state:?}): {source}")]
    Infeasible {
        step: usize,
        state: Vec<f64>,
        source: OcpError,
    },
    #[error("orbit average cost is {0}, expected 0 (shift the stage cost first)")]
    NonZeroOrbitCost(f64),
    #[error("{0}")]
    InvalidInput(String),
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cesaro(#[from] CesaroError),
    #[error(transparent)]
    Rotation(#[from] RotationError),
}
