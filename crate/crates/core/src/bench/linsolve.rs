//! Side-by-side classic and probabilistic CG on one system.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use super::{config_error, fmt_opt, BenchResult, Record};
use crate::linalg::{classic_cg, solve_probabilistic, DenseOperator, LinearOperator, MatrixBelief, SolveOptions};

/// Relative iterate difference accepted as a match.
pub const MATCH_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperatorSpec {
    /// `M Mᵀ / n + I` with seeded standard normal `M`.
    RandomSpd { n: usize },
    Diagonal { values: Vec<f64> },
    /// Comma-separated rows.
    CsvFile { path: PathBuf },
    /// Little-endian `u64` size followed by row-major `f64` entries.
    BinaryFile { path: PathBuf },
}

impl OperatorSpec {
    pub fn build(&self, seed: u64) -> BenchResult<DenseOperator> {
        Ok(match self {
            OperatorSpec::RandomSpd { n } => {
                if *n == 0 {
                    return Err(config_error("operator size must be positive"));
                }
                DenseOperator::random_spd(*n, seed)
            }
            OperatorSpec::Diagonal { values } => DenseOperator::diagonal(values)?,
            OperatorSpec::CsvFile { path } => DenseOperator::from_csv(path)?,
            OperatorSpec::BinaryFile { path } => DenseOperator::from_binary(path)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinsolveConfig {
    pub operator: OperatorSpec,
    pub tol: f64,
    pub max_iter: Option<usize>,
    /// Seeds the operator (when random) and the right-hand side.
    pub seed: u64,
}

impl Default for LinsolveConfig {
    fn default() -> Self {
        Self {
            operator: OperatorSpec::RandomSpd { n: 32 },
            tol: 1e-10,
            max_iter: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinsolveRow {
    pub iteration: usize,
    pub cg_residual: Option<f64>,
    pub prob_residual: Option<f64>,
    /// `‖x_prob − x_cg‖ / ‖x_cg‖` at this iteration.
    pub iterate_rel_diff: Option<f64>,
    pub cg_match: bool,
}

impl Record for LinsolveRow {
    const HEADER: &'static [&'static str] =
        &["iteration", "cg_residual", "prob_residual", "iterate_rel_diff", "cg_match"];

    fn cells(&self) -> Vec<String> {
        vec![
            self.iteration.to_string(),
            fmt_opt(self.cg_residual),
            fmt_opt(self.prob_residual),
            fmt_opt(self.iterate_rel_diff),
            self.cg_match.to_string(),
        ]
    }
}

pub fn rhs(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))
}

/// One row per iteration, starting with the initial residual at 0.
pub fn run(cfg: &LinsolveConfig) -> BenchResult<Vec<LinsolveRow>> {
    if !(cfg.tol > 0.0) {
        return Err(config_error("tol must be positive"));
    }
    let a = cfg.operator.build(cfg.seed)?;
    let b = rhs(a.dim(), cfg.seed);
    let opts = SolveOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        record_iterates: true,
    };
    let cg = classic_cg(&a, &b, None, &opts)?;
    let prob = solve_probabilistic(&a, &b, &MatrixBelief::identity(a.dim()), None, &opts)?;
    let rows = cg.iterations.max(prob.iterations) + 1;
    Ok((0..rows)
        .map(|k| {
            let diff = if k == 0 {
                Some(0.0)
            } else {
                match (cg.iterates.get(k - 1), prob.iterates.get(k - 1)) {
                    (Some(xc), Some(xp)) => Some((xp - xc).norm() / xc.norm()),
                    _ => None,
                }
            };
            LinsolveRow {
                iteration: k,
                cg_residual: cg.residual_norms.get(k).copied(),
                prob_residual: prob.residual_norms.get(k).copied(),
                iterate_rel_diff: diff,
                cg_match: diff.is_some_and(|d| d <= MATCH_TOL),
            }
        })
        .collect())
}
