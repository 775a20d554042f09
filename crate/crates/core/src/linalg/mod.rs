//! Probabilistic linear solvers for symmetric positive definite systems.
//!
//! The solver keeps a Gaussian belief over `A⁻¹`. Each step moves along
//! `−Hᵢ rᵢ` with `Hᵢ` the current posterior mean, then conditions the
//! belief on the observed pair `(sᵢ, A sᵢ)`. Started from `H₀ = I` this
//! reproduces conjugate gradients; started from the posterior of a related
//! problem it recycles what was learned about the operator.

mod belief;
mod operator;
mod solver;

pub use belief::{
    default_truncation_rank, posterior_mean_apply, recycled_prior, truncate_belief,
    LowRankOperator, MatrixBelief,
};
pub use operator::{probe_spd, DenseOperator, LinearOperator, PROBE_LIMIT, SPD_PROBES};
pub use solver::{
    calibrate_scale, classic_cg, cold_start_sequence, solve_probabilistic, warm_start_sequence,
    SolveOptions, SolveReport,
};
