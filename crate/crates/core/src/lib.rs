//! Iterative data-driven scenario construction for stochastic AC optimal power flow.

pub mod construct;
pub mod driver;
pub mod montecarlo;
pub mod netcase;
pub mod nlp;
pub mod powerflow;
pub mod sopf;
pub mod sparse;
pub mod uncertainty;
