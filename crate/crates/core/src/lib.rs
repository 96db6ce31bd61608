//! Uplink cell-free massive MIMO: closed-form statistical SINR, max-min
//! fairness via alternating receiver-filter and power optimization, and a
//! Monte Carlo channel simulator that checks the closed form term by term.
//!
//! The pipeline for one network realization is
//!
//! ```text
//! topology -> pilots -> chanstats -> maxmin (receiver + power) -> rates
//! ```
//!
//! and [`harness`] drives it over many realizations to produce per-user
//! rate CDFs.

pub mod chanstats;
pub mod error;
pub mod harness;
pub mod maxmin;
pub mod oracle;
pub mod pilots;
pub mod power;
pub mod receiver;
pub mod sinr;
pub mod topology;

pub use chanstats::{ChannelStats, UserMatrices};
pub use error::{Error, Result};
pub use maxmin::{solve_baseline, solve_p1, IterationTrace, SolverOptions};
pub use pilots::{assign_pilots, PilotBook, PilotMode};
pub use power::{maxmin_power, PowerAllocation, PowerOptions, SinrCoefficients};
pub use sinr::{rate, sinr_k, Solution};
pub use topology::{generate_topology, SimParams, Topology};
