//! Monte Carlo baselines for evidence estimation: simple Monte Carlo over
//! the prior and annealed importance sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::trace::TracePoint;
use crate::warped::BoxDomain;

pub type LogLikelihood = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Evidence `Z = ∫ L(θ) p(θ) dθ` with a uniform prior `p` on a box.
#[derive(Clone)]
pub struct EvidenceProblem {
    domain: BoxDomain,
    log_likelihood: Arc<LogLikelihood>,
    log_evidence: Option<f64>,
}

impl fmt::Debug for EvidenceProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EvidenceProblem")
            .field("domain", &self.domain)
            .field("log_evidence", &self.log_evidence)
            .finish_non_exhaustive()
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

impl EvidenceProblem {
    pub fn new(domain: BoxDomain, log_likelihood: Arc<LogLikelihood>, log_evidence: Option<f64>) -> Self {
        Self {
            domain,
            log_likelihood,
            log_evidence,
        }
    }

    /// `L ≡ c`, so `Z = c`.
    pub fn constant(domain: BoxDomain, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidArgument(format!("constant likelihood must be positive, got {c}")));
        }
        let lc = c.ln();
        Ok(Self::new(domain, Arc::new(move |_| lc), Some(lc)))
    }

    /// Isotropic Gaussian likelihood `N(θ; μ, s² I)` under the uniform prior,
    /// with `Z = vol⁻¹ ∏_d [Φ((hi−μ)/s) − Φ((lo−μ)/s)]`.
    pub fn gaussian(domain: BoxDomain, mean: Vec<f64>, sd: f64) -> Result<Self> {
        if mean.len() != domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                got: mean.len(),
            });
        }
        if !(sd > 0.0) || !sd.is_finite() || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("Gaussian likelihood needs finite mean and sd > 0".into()));
        }
        let mut log_z = -domain.volume().ln();
        for d in 0..domain.dim() {
            let mass = normal_cdf((domain.hi()[d] - mean[d]) / sd) - normal_cdf((domain.lo()[d] - mean[d]) / sd);
            log_z += mass.ln();
        }
        let dim = mean.len() as f64;
        let norm = -0.5 * dim * (2.0 * std::f64::consts::PI * sd * sd).ln();
        let ll = move |theta: &[f64]| {
            let q: f64 = theta.iter().zip(&mean).map(|(t, m)| (t - m) * (t - m)).sum();
            norm - 0.5 * q / (sd * sd)
        };
        Ok(Self::new(domain, Arc::new(ll), Some(log_z)))
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        (self.log_likelihood)(theta)
    }

    pub fn likelihood(&self, theta: &[f64]) -> f64 {
        self.log_likelihood(theta).exp()
    }

    /// Uniform prior density on the box.
    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        let inside = theta
            .iter()
            .enumerate()
            .all(|(d, t)| *t >= self.domain.lo()[d] && *t <= self.domain.hi()[d]);
        if inside {
            -self.domain.volume().ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn log_evidence(&self) -> Option<f64> {
        self.log_evidence
    }

    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.domain.sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmcResult {
    pub estimate: f64,
    pub std_error: f64,
    /// Running estimate at every power of two and at `n`.
    pub trace: Vec<TracePoint>,
}

/// Mean of the likelihood over `n` prior draws.
pub fn smc_integrate(problem: &EvidenceProblem, n: usize, seed: u64) -> Result<SmcResult> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut trace = Vec::new();
    let std_error = |m2: f64, k: usize| {
        if k > 1 {
            (m2 / (k - 1) as f64 / k as f64).sqrt()
        } else {
            f64::INFINITY
        }
    };
    for k in 1..=n {
        let v = problem.likelihood(&problem.sample_prior(&mut rng));
        let delta = v - mean;
        mean += delta / k as f64;
        m2 += delta * (v - mean);
        if k.is_power_of_two() || k == n {
            trace.push(TracePoint {
                evaluations: k,
                estimate: mean,
                std: std_error(m2, k),
            });
        }
    }
    Ok(SmcResult {
        estimate: mean,
        std_error: std_error(m2, n),
        trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AisResult {
    pub log_evidence: f64,
    /// Delta-method standard error of `log Ẑ`.
    pub log_std: f64,
    pub effective_sample_size: f64,
    /// Set when the effective sample size of the final weights is below 2.
    pub degenerate: bool,
    /// Likelihood evaluations across all chains.
    pub evaluations: usize,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AisConfig {
    pub n_temps: usize,
    pub n_chains: usize,
    pub mh_steps: usize,
}

/// `β₀ = 0` followed by `n_temps` geometrically spaced values from `1e-4`
/// to 1.
pub fn temperature_ladder(n_temps: usize) -> Vec<f64> {
    let mut betas = vec![0.0];
    if n_temps == 1 {
        betas.push(1.0);
        return betas;
    }
    let lo = (1e-4f64).ln();
    for k in 1..=n_temps {
        let frac = (k - 1) as f64 / (n_temps - 1) as f64;
        betas.push((lo * (1.0 - frac)).exp());
    }
    betas
}

struct ChainOutcome {
    log_weight: f64,
    evaluations: usize,
    accepted: usize,
    proposed: usize,
}

fn run_chain(problem: &EvidenceProblem, betas: &[f64], cfg: &AisConfig, seed: u64, chain: u64) -> ChainOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    let dom = problem.domain();
    let scale: Vec<f64> = (0..dom.dim())
        .map(|d| 0.5 * dom.width(d) / (cfg.n_temps as f64).sqrt())
        .collect();
    let mut theta = problem.sample_prior(&mut rng);
    let mut ll = problem.log_likelihood(&theta);
    let mut out = ChainOutcome {
        log_weight: 0.0,
        evaluations: 1,
        accepted: 0,
        proposed: 0,
    };
    let last = betas.len() - 1;
    for k in 1..=last {
        out.log_weight += (betas[k] - betas[k - 1]) * ll;
        if k == last {
            break;
        }
        for _ in 0..cfg.mh_steps {
            out.proposed += 1;
            let prop: Vec<f64> = theta
                .iter()
                .zip(&scale)
                .map(|(t, s)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    t + s * z
                })
                .collect();
            let inside = prop
                .iter()
                .enumerate()
                .all(|(d, p)| *p >= dom.lo()[d] && *p <= dom.hi()[d]);
            // keep the uniform draw consumed either way so streams stay aligned
            let u: f64 = rng.random();
            if !inside {
                continue;
            }
            let ll_prop = problem.log_likelihood(&prop);
            out.evaluations += 1;
            if u.ln() < betas[k] * (ll_prop - ll) {
                theta = prop;
                ll = ll_prop;
                out.accepted += 1;
            }
        }
    }
    out
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / v.len() as f64).ln()
}

/// Annealed importance sampling with random-walk Metropolis transitions.
///
/// Proposals are Gaussian with per-axis scale `0.5 · width · T^{-1/2}`;
/// proposals leaving the box are rejected without evaluating the
/// likelihood. Chains use independent streams of one seeded generator and
/// are reduced in chain order, so the result does not depend on threading.
pub fn ais_evidence(problem: &EvidenceProblem, cfg: &AisConfig, seed: u64) -> Result<AisResult> {
    if cfg.n_temps == 0 || cfg.n_chains == 0 || cfg.mh_steps == 0 {
        return Err(Error::InvalidArgument(
            "AIS needs n_temps, n_chains and mh_steps all at least 1".into(),
        ));
    }
    let betas = temperature_ladder(cfg.n_temps);
    let chains: Vec<ChainOutcome> = (0..cfg.n_chains as u64)
        .into_par_iter()
        .map(|c| run_chain(problem, &betas, cfg, seed, c))
        .collect();
    let logw: Vec<f64> = chains.iter().map(|c| c.log_weight).collect();
    let log_z = log_mean_exp(&logw);
    if !log_z.is_finite() {
        return Err(Error::Numerical("all AIS weights vanished".into()));
    }
    let w: Vec<f64> = logw.iter().map(|l| (l - log_z).exp()).collect();
    let n = w.len() as f64;
    let sum: f64 = w.iter().sum();
    let sum_sq: f64 = w.iter().map(|x| x * x).sum();
    let ess = sum * sum / sum_sq;
    let mean = sum / n;
    let var = if w.len() > 1 {
        w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        f64::INFINITY
    };
    let proposed: usize = chains.iter().map(|c| c.proposed).sum();
    let accepted: usize = chains.iter().map(|c| c.accepted).sum();
    let degenerate = ess < 2.0;
    if degenerate {
        log::warn!("AIS effective sample size {ess:.2} is below 2");
    }
    Ok(AisResult {
        log_evidence: log_z,
        log_std: (var / n).sqrt() / mean,
        effective_sample_size: ess,
        degenerate,
        evaluations: chains.iter().map(|c| c.evaluations).sum(),
        acceptance_rate: if proposed > 0 {
            accepted as f64 / proposed as f64
        } else {
            0.0
        },
    })
}
