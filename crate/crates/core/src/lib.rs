//! Economic model predictive control with terminal conditions for systems
//! whose optimal operation is periodic.
//!
//! The crate solves finite-horizon optimal control problems on grids, runs
//! receding-horizon closed loops, evaluates Cesàro-averaged costs and checks
//! dissipativity, terminal and Lyapunov conditions numerically.

pub mod cesaro;
pub mod cli;
pub mod grid;
pub mod model;
pub mod ocp;
pub mod report;
pub mod rotation;
pub mod verify;
