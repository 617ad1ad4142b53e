//! Flexibility regions of active distribution networks at the TSO-DSO
//! interface.
//!
//! The crate builds four optimal-power-flow models of a radial feeder
//! (AC-OPF, DistFlow, its second-order-cone relaxation and LinDistFlow),
//! solves them with a primal-dual interior-point method, and traces the
//! boundary of the feasible `(p, q)` exchange at the substation with an
//! epsilon-constraint sweep. An independent backward-forward sweep power
//! flow and Monte Carlo sampler serve as validation oracles.

pub mod caseio;
pub mod cli;
pub mod formulations;
pub mod ipm;
pub mod linalg;
pub mod netmodel;
pub mod nlpcore;
pub mod oracle;
pub mod region;
pub mod sweep;
