//! Evidence estimation race on a Gaussian likelihood with analytic `Z`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_increasing, config_error, fmt_f64, timed, BenchResult, JobTiming, Record};
use crate::monte_carlo::{ais_evidence, smc_integrate, AisConfig, EvidenceProblem};
use crate::warped::{warped_bq_integrate_box, BoxDomain, WarpedOptions, MAX_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvidenceMethod {
    WarpedBq,
    Smc,
    Ais,
}

impl EvidenceMethod {
    pub fn label(self) -> &'static str {
        match self {
            EvidenceMethod::WarpedBq => "warped-bq",
            EvidenceMethod::Smc => "smc",
            EvidenceMethod::Ais => "ais",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AisSchedule {
    pub temperatures: usize,
    pub mh_steps: usize,
    /// One run per entry; the evaluation count grows with the chains.
    pub chains: Vec<usize>,
}

impl Default for AisSchedule {
    fn default() -> Self {
        Self {
            temperatures: 64,
            mh_steps: 5,
            chains: vec![1, 2, 4, 8, 16, 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvidenceConfig {
    /// Uniform prior box.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Isotropic Gaussian likelihood `N(θ; mean, sd² I)`.
    pub mean: Vec<f64>,
    pub sd: f64,
    pub methods: Vec<EvidenceMethod>,
    pub seed: u64,
    pub seeds: usize,
    pub warped_budget: usize,
    /// SMC records at every power of two up to this count.
    pub smc_budget: usize,
    pub ais: AisSchedule,
}

impl Default for EvidenceConfig {
    fn default() -> Self {
        Self {
            lo: vec![-1.0, -1.0],
            hi: vec![1.0, 1.0],
            mean: vec![0.1, -0.2],
            sd: 0.2,
            methods: vec![EvidenceMethod::WarpedBq, EvidenceMethod::Smc, EvidenceMethod::Ais],
            seed: 0,
            seeds: 10,
            warped_budget: 40,
            smc_budget: 16384,
            ais: AisSchedule::default(),
        }
    }
}

impl EvidenceConfig {
    pub fn problem(&self) -> BenchResult<EvidenceProblem> {
        if self.lo.len() > MAX_DIM {
            return Err(config_error(format!("dimension must be at most {MAX_DIM}")));
        }
        let domain = BoxDomain::new(self.lo.clone(), self.hi.clone())?;
        Ok(EvidenceProblem::gaussian(domain, self.mean.clone(), self.sd)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRow {
    pub method: String,
    pub seed: u64,
    pub evaluations: usize,
    pub log_estimate: f64,
    pub log_truth: f64,
    pub abs_log_error: f64,
    /// Delta-method standard deviation of the log estimate.
    pub log_std: f64,
}

impl Record for EvidenceRow {
    const HEADER: &'static [&'static str] = &[
        "method",
        "seed",
        "evaluations",
        "log_estimate",
        "log_truth",
        "abs_log_error",
        "log_std",
    ];

    fn cells(&self) -> Vec<String> {
        vec![
            self.method.clone(),
            self.seed.to_string(),
            self.evaluations.to_string(),
            fmt_f64(self.log_estimate),
            fmt_f64(self.log_truth),
            fmt_f64(self.abs_log_error),
            fmt_f64(self.log_std),
        ]
    }
}

fn run_method(
    cfg: &EvidenceConfig,
    problem: &EvidenceProblem,
    method: EvidenceMethod,
    seed: u64,
) -> BenchResult<Vec<EvidenceRow>> {
    let log_truth = problem.log_evidence().expect("analytic problem");
    let vol = problem.domain().volume();
    let points: Vec<(usize, f64, f64)> = match method {
        EvidenceMethod::WarpedBq => {
            let run = warped_bq_integrate_box(
                |x| problem.likelihood(x),
                problem.domain(),
                cfg.warped_budget,
                seed,
                &WarpedOptions::default(),
            )?;
            run.trace
                .iter()
                .map(|p| (p.evaluations, (p.estimate / vol).ln(), p.std / p.estimate))
                .collect()
        }
        EvidenceMethod::Smc => smc_integrate(problem, cfg.smc_budget, seed)?
            .trace
            .iter()
            .map(|p| (p.evaluations, p.estimate.ln(), p.std / p.estimate))
            .collect(),
        EvidenceMethod::Ais => cfg
            .ais
            .chains
            .iter()
            .map(|&chains| {
                let r = ais_evidence(
                    problem,
                    &AisConfig {
                        n_temps: cfg.ais.temperatures,
                        n_chains: chains,
                        mh_steps: cfg.ais.mh_steps,
                    },
                    seed,
                )?;
                Ok((r.evaluations, r.log_evidence, r.log_std))
            })
            .collect::<BenchResult<_>>()?,
    };
    Ok(points
        .into_iter()
        .map(|(evaluations, log_estimate, log_std)| EvidenceRow {
            method: method.label().into(),
            seed,
            evaluations,
            log_estimate,
            log_truth,
            abs_log_error: (log_estimate - log_truth).abs(),
            log_std,
        })
        .collect())
}

pub fn validate(cfg: &EvidenceConfig) -> BenchResult<()> {
    if cfg.methods.is_empty() {
        return Err(config_error("methods must not be empty"));
    }
    if cfg.seeds == 0 {
        return Err(config_error("seeds must be at least 1"));
    }
    if cfg.warped_budget < 3 {
        return Err(config_error("warped_budget must be at least 3"));
    }
    if cfg.smc_budget == 0 {
        return Err(config_error("smc_budget must be at least 1"));
    }
    check_increasing("ais.chains", &cfg.ais.chains)?;
    Ok(())
}

/// Rows ordered by method (as configured), then seed, then evaluations.
pub fn run(cfg: &EvidenceConfig) -> BenchResult<Vec<EvidenceRow>> {
    Ok(run_timed(cfg)?.0)
}

/// [`run`] plus the wall time of every `(method, seed)` job.
pub fn run_timed(cfg: &EvidenceConfig) -> BenchResult<(Vec<EvidenceRow>, Vec<JobTiming>)> {
    validate(cfg)?;
    let problem = cfg.problem()?;
    let jobs: Vec<(EvidenceMethod, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| (0..cfg.seeds as u64).map(move |s| (m, cfg.seed + s)))
        .collect();
    let parts: Vec<(BenchResult<Vec<EvidenceRow>>, JobTiming)> = jobs
        .par_iter()
        .map(|&(m, s)| timed(m.label(), s, || run_method(cfg, &problem, m, s)))
        .collect();
    let mut rows = Vec::new();
    let mut timings = Vec::with_capacity(parts.len());
    for (p, t) in parts {
        rows.extend(p?);
        timings.push(t);
    }
    Ok((rows, timings))
}

/// Smallest evaluation count at which `method` first reaches
/// `|log error| < threshold` for `seed`; `None` if it never does.
pub fn evaluations_to_reach(rows: &[EvidenceRow], method: EvidenceMethod, seed: u64, threshold: f64) -> Option<usize> {
    rows.iter()
        .filter(|r| r.method == method.label() && r.seed == seed)
        .filter(|r| r.abs_log_error < threshold)
        .map(|r| r.evaluations)
        .min()
}

/// Median of per-seed [`evaluations_to_reach`], counting seeds that never
/// reach the threshold as infinite.
pub fn median_evaluations_to_reach(rows: &[EvidenceRow], method: EvidenceMethod, threshold: f64) -> f64 {
    let mut seeds: Vec<u64> = rows.iter().filter(|r| r.method == method.label()).map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let mut v: Vec<f64> = seeds
        .iter()
        .map(|&s| evaluations_to_reach(rows, method, s, threshold).map_or(f64::INFINITY, |n| n as f64))
        .collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
