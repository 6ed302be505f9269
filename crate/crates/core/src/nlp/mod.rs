//! Generic smooth nonlinear programs and a primal-dual interior-point solver.

mod ipm;

pub use ipm::{solve, IpmError, IpmOptions, IpmResult};

use crate::sparse::Triplets;

/// `min f(x)  s.t.  g(x) = 0,  h(x) <= 0`.
///
/// Jacobians and the Hessian must emit the same coordinate set on every call
/// (push explicit zeros), so the KKT sparsity pattern stays fixed.
pub trait Nlp {
    fn n(&self) -> usize;
    fn m_eq(&self) -> usize;
    fn m_ineq(&self) -> usize;
    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn eq(&self, x: &[f64]) -> Vec<f64>;
    fn ineq(&self, x: &[f64]) -> Vec<f64>;
    fn eq_jacobian(&self, x: &[f64]) -> Triplets;
    fn ineq_jacobian(&self, x: &[f64]) -> Triplets;
    /// Lower triangle of `σ∇²f + Σ λ_i ∇²g_i + Σ μ_j ∇²h_j`.
    fn hessian(&self, x: &[f64], sigma: f64, lam: &[f64], mu: &[f64]) -> Triplets;
}
