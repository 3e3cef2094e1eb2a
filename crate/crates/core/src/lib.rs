//! Split-horizon dual dynamic programming for long-horizon nonlinear optimal
//! control, instantiated on cascaded hydro-reservoir scheduling with bilinear
//! head effects.
//!
//! The planning horizon is split into a short first stage solved on the exact
//! bilinear model (grid dynamic programming) and a long second stage solved as
//! a linear program after McCormick-envelope relaxation of the bilinear terms.
//! Benders cuts extracted from the second-stage duals tie the two stages
//! together, with a-priori suboptimality bounds derived from the envelope
//! widths. A shrinking-horizon MPC harness drives the method, a full-horizon
//! grid DP reference, a pure-LP baseline and a multi-cell MILP baseline under
//! an identical protocol.

pub mod ddp;
pub mod dp;
pub mod io;
pub mod linearize;
pub mod lp;
pub mod model;
pub mod prices;
pub mod sim;

pub use model::{PriceSeries, ReservoirNetwork, Trajectory};
