//! Cold versus warm starts on a drifting deconvolution sequence.

use serde::{Deserialize, Serialize};

use super::{config_error, fmt_f64, BenchResult, Record};
use crate::deconv::{generate_sequence, run_recycling_benchmark, ConvolutionConfig, RecyclingReport};
use crate::linalg::default_truncation_rank;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecycleConfig {
    pub sequence: ConvolutionConfig,
    /// Carried belief rank; defaults to twice the signal length, capped
    /// at 64.
    pub rank: Option<usize>,
    pub tol: f64,
    pub seed: u64,
}

impl Default for RecycleConfig {
    fn default() -> Self {
        Self {
            sequence: ConvolutionConfig::default(),
            rank: None,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl RecycleConfig {
    pub fn resolved_rank(&self) -> usize {
        self.rank
            .unwrap_or_else(|| default_truncation_rank(self.sequence.signal_len))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecycleCsvRow {
    pub variant: String,
    pub problem_index: usize,
    pub iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub matvecs: usize,
}

impl Record for RecycleCsvRow {
    const HEADER: &'static [&'static str] = &[
        "variant",
        "problem_index",
        "iterations",
        "initial_residual",
        "final_residual",
        "matvecs",
    ];

    fn cells(&self) -> Vec<String> {
        vec![
            self.variant.clone(),
            self.problem_index.to_string(),
            self.iterations.to_string(),
            fmt_f64(self.initial_residual),
            fmt_f64(self.final_residual),
            self.matvecs.to_string(),
        ]
    }
}

pub fn report(cfg: &RecycleConfig) -> BenchResult<RecyclingReport> {
    if !(cfg.tol > 0.0) {
        return Err(config_error("tol must be positive"));
    }
    let seq = generate_sequence(&cfg.sequence, cfg.seed)?;
    Ok(run_recycling_benchmark(&seq.problems, cfg.resolved_rank(), cfg.tol)?)
}

/// Cold rows first, then warm rows, each in sequence order.
pub fn run(cfg: &RecycleConfig) -> BenchResult<Vec<RecycleCsvRow>> {
    Ok(report(cfg)?
        .rows
        .iter()
        .map(|r| RecycleCsvRow {
            variant: r.variant.label().into(),
            problem_index: r.problem_index,
            iterations: r.iterations,
            initial_residual: r.initial_residual,
            final_residual: r.final_residual,
            matvecs: r.matvecs,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_has_both_variants() {
        let rows = run(&RecycleConfig::default()).unwrap();
        assert_eq!(rows.len(), 40);
        assert!(rows[..20].iter().all(|r| r.variant == "cold"));
        assert!(rows[20..].iter().all(|r| r.variant == "warm"));
    }

    #[test]
    fn nested_sequence_table_parses() {
        let cfg: RecycleConfig = toml::from_str("rank = 0\n[sequence]\ndrift = 0.01\nlength = 3\n").unwrap();
        assert_eq!(cfg.sequence.length, 3);
        assert_eq!(cfg.sequence.signal_len, 32);
        assert!(toml::from_str::<RecycleConfig>("[sequence]\nsize = 3\n").is_err());
    }
}
