//! One-dimensional quadrature: convergence and calibration tables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use super::{check_increasing, config_error, fmt_f64, fmt_opt, timed, BenchResult, JobTiming, Record};
use crate::gp::{fit_hyperparameters, Domain, Kernel, KernelFamily, ParamBounds, PathSampler};
use crate::quadrature::{bq_integrate_active, bq_integrate_grid, select_nodes_grid, trapezoid, BqState};
use crate::warped::warped_bq_integrate;

/// `exp(−sin²(3x) − x²)`
pub fn paper_example(x: f64) -> f64 {
    let s = (3.0 * x).sin();
    (-s * s - x * x).exp()
}

pub const PAPER_DOMAIN: (f64, f64) = (-3.0, 3.0);

/// Integral of [`paper_example`] over `[−3, 3]` by a 10⁶-node trapezoid
/// rule, computed once.
pub fn paper_example_truth() -> f64 {
    static TRUTH: OnceLock<f64> = OnceLock::new();
    *TRUTH.get_or_init(|| {
        let n = 1_000_000;
        let (lo, hi) = PAPER_DOMAIN;
        let h = (hi - lo) / (n - 1) as f64;
        let inner: f64 = (1..n - 1).map(|i| paper_example(lo + h * i as f64)).sum();
        h * (inner + 0.5 * (paper_example(lo) + paper_example(hi)))
    })
}

fn default_c() -> f64 {
    1.0
}

fn default_lo() -> f64 {
    PAPER_DOMAIN.0
}

fn default_hi() -> f64 {
    PAPER_DOMAIN.1
}

fn default_draw_grid() -> usize {
    901
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum IntegrandSpec {
    /// `exp(−sin²(3x) − x²)` on `[−3, 3]`.
    PaperExample {},
    /// Piecewise-linear interpolant of a linear-spline GP draw on a grid,
    /// one draw per seed.
    SplineDraw {
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default = "default_c")]
        b: f64,
        #[serde(default = "default_lo")]
        lo: f64,
        #[serde(default = "default_hi")]
        hi: f64,
        #[serde(default = "default_draw_grid")]
        grid_points: usize,
    },
    /// Piecewise-linear interpolant of values on an equidistant endpoint
    /// grid over `[lo, hi]`.
    CustomGridValues { lo: f64, hi: f64, values: Vec<f64> },
}

impl IntegrandSpec {
    pub fn label(&self) -> &'static str {
        match self {
            IntegrandSpec::PaperExample {} => "paper-example",
            IntegrandSpec::SplineDraw { .. } => "spline-draw",
            IntegrandSpec::CustomGridValues { .. } => "custom-grid-values",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadMethod {
    Trapezoid,
    /// Linear-spline BQ on the endpoint grid.
    SplineBq,
    /// Exponentiated-quadratic BQ on the endpoint grid, hyperparameters by
    /// type-II maximum likelihood.
    EqBq,
    /// Linear-spline BQ with variance-driven node selection.
    ActiveBq,
    /// Square-root warped BQ; needs a positive integrand.
    WarpedBq,
    /// Simple Monte Carlo with uniform draws.
    Smc,
}

impl QuadMethod {
    pub fn label(self) -> &'static str {
        match self {
            QuadMethod::Trapezoid => "trapezoid",
            QuadMethod::SplineBq => "spline-bq",
            QuadMethod::EqBq => "eq-bq",
            QuadMethod::ActiveBq => "active-bq",
            QuadMethod::WarpedBq => "warped-bq",
            QuadMethod::Smc => "smc",
        }
    }

    fn min_budget(self) -> usize {
        match self {
            QuadMethod::Trapezoid | QuadMethod::SplineBq => 2,
            QuadMethod::EqBq | QuadMethod::WarpedBq => 3,
            QuadMethod::ActiveBq | QuadMethod::Smc => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplineParams {
    pub c: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadConfig {
    pub integrand: IntegrandSpec,
    pub methods: Vec<QuadMethod>,
    pub budgets: Vec<usize>,
    pub seed: u64,
    /// Number of consecutive seeds starting at `seed`.
    pub seeds: usize,
    /// Kernel used by `spline-bq` and `active-bq`.
    pub spline: SplineParams,
    /// Search box for `eq-bq` hyperparameters `(θ, λ)`.
    pub eq_bounds: ParamBounds,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            integrand: IntegrandSpec::PaperExample {},
            methods: vec![QuadMethod::Trapezoid, QuadMethod::SplineBq, QuadMethod::EqBq, QuadMethod::Smc],
            budgets: vec![4, 8, 16, 32, 64, 128, 256],
            seed: 0,
            seeds: 1,
            spline: SplineParams { c: 1.0, b: 1.0 },
            eq_bounds: ParamBounds {
                scale: (1e-3, 1e3),
                shape: (0.05, 6.0),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadRow {
    pub method: String,
    pub integrand: String,
    pub seed: u64,
    pub budget: usize,
    pub estimate: f64,
    pub truth: f64,
    pub abs_error: f64,
    /// Posterior standard deviation or Monte Carlo standard error.
    pub std: Option<f64>,
}

impl QuadRow {
    /// `(estimate − truth) / std`
    pub fn standardized_error(&self) -> Option<f64> {
        self.std.filter(|s| *s > 0.0).map(|s| (self.estimate - self.truth) / s)
    }
}

impl Record for QuadRow {
    const HEADER: &'static [&'static str] =
        &["method", "integrand", "seed", "budget", "estimate", "truth", "abs_error", "std"];

    fn cells(&self) -> Vec<String> {
        vec![
            self.method.clone(),
            self.integrand.clone(),
            self.seed.to_string(),
            self.budget.to_string(),
            fmt_f64(self.estimate),
            fmt_f64(self.truth),
            fmt_f64(self.abs_error),
            fmt_opt(self.std),
        ]
    }
}

/// A concrete integrand with its reference integral.
#[derive(Debug, Clone)]
pub enum Integrand {
    Paper,
    Interpolated { grid: Vec<f64>, values: Vec<f64> },
}

impl Integrand {
    pub fn build(spec: &IntegrandSpec, seed: u64) -> BenchResult<Self> {
        Ok(Self::build_all(spec, &[seed])?.remove(0))
    }

    /// One integrand per seed; spline draws share a single factorization.
    pub fn build_all(spec: &IntegrandSpec, seeds: &[u64]) -> BenchResult<Vec<Self>> {
        match spec {
            IntegrandSpec::PaperExample {} => Ok(seeds.iter().map(|_| Integrand::Paper).collect()),
            IntegrandSpec::SplineDraw {
                c,
                b,
                lo,
                hi,
                grid_points,
            } => {
                if *grid_points < 2 {
                    return Err(config_error("spline-draw needs at least 2 grid points"));
                }
                let domain = Domain::new(*lo, *hi)?;
                let kernel = Kernel::linear_spline(*c, *b, domain)?;
                let grid = domain.linspace(*grid_points);
                let sampler = PathSampler::new(&kernel, &grid)?;
                Ok(seeds
                    .par_iter()
                    .map(|&s| Integrand::Interpolated {
                        grid: grid.clone(),
                        values: sampler.sample(s),
                    })
                    .collect())
            }
            IntegrandSpec::CustomGridValues { lo, hi, values } => {
                if values.len() < 2 {
                    return Err(config_error("custom-grid-values needs at least 2 values"));
                }
                let domain = Domain::new(*lo, *hi)?;
                let f = Integrand::Interpolated {
                    grid: domain.linspace(values.len()),
                    values: values.clone(),
                };
                Ok(seeds.iter().map(|_| f.clone()).collect())
            }
        }
    }

    pub fn domain(&self) -> Domain {
        match self {
            Integrand::Paper => Domain::new(PAPER_DOMAIN.0, PAPER_DOMAIN.1).expect("valid interval"),
            Integrand::Interpolated { grid, .. } => {
                Domain::new(grid[0], *grid.last().expect("non-empty")).expect("validated interval")
            }
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Integrand::Paper => paper_example(x),
            Integrand::Interpolated { grid, values } => {
                let n = grid.len();
                let (lo, hi) = (grid[0], grid[n - 1]);
                let pos = ((x - lo) / (hi - lo) * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
                let i = (pos.floor() as usize).min(n - 2);
                let t = pos - i as f64;
                values[i] * (1.0 - t) + values[i + 1] * t
            }
        }
    }

    /// Exact for the interpolant; the cached fine-grid value otherwise.
    pub fn truth(&self) -> f64 {
        match self {
            Integrand::Paper => paper_example_truth(),
            Integrand::Interpolated { grid, values } => trapezoid(grid, values).expect("validated grid"),
        }
    }
}

fn smc_rows(f: &Integrand, budgets: &[usize], seed: u64) -> Vec<(usize, f64, Option<f64>)> {
    let d = f.domain();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let (mut mean, mut m2) = (0.0, 0.0);
    let mut out = Vec::with_capacity(budgets.len());
    let mut next = 0;
    let max = *budgets.last().expect("validated budgets");
    for k in 1..=max {
        let v = f.eval(d.lo() + d.width() * rng.random::<f64>());
        let delta = v - mean;
        mean += delta / k as f64;
        m2 += delta * (v - mean);
        if k == budgets[next] {
            let se = (k > 1).then(|| d.width() * (m2 / (k - 1) as f64 / k as f64).sqrt());
            out.push((k, d.width() * mean, se));
            next += 1;
        }
    }
    out
}

fn run_method(cfg: &QuadConfig, method: QuadMethod, seed: u64, f: &Integrand) -> BenchResult<Vec<QuadRow>> {
    let domain = f.domain();
    let truth = f.truth();
    let spline = || Kernel::linear_spline(cfg.spline.c, cfg.spline.b, domain);
    let results: Vec<(usize, f64, Option<f64>)> = match method {
        QuadMethod::Trapezoid => cfg
            .budgets
            .iter()
            .map(|&n| {
                let nodes = select_nodes_grid(&domain, n)?;
                let values: Vec<f64> = nodes.iter().map(|&x| f.eval(x)).collect();
                Ok((n, trapezoid(&nodes, &values)?, None))
            })
            .collect::<BenchResult<_>>()?,
        QuadMethod::SplineBq => {
            let k = spline()?;
            cfg.budgets
                .iter()
                .map(|&n| {
                    let e = bq_integrate_grid(&k, |x| f.eval(x), n)?;
                    Ok((n, e.mean, Some(e.std())))
                })
                .collect::<BenchResult<_>>()?
        }
        QuadMethod::EqBq => cfg
            .budgets
            .iter()
            .map(|&n| {
                let nodes = select_nodes_grid(&domain, n)?;
                let values: Vec<f64> = nodes.iter().map(|&x| f.eval(x)).collect();
                let fit = fit_hyperparameters(KernelFamily::ExpQuadratic, domain, &nodes, &values, cfg.eq_bounds)?;
                let e = BqState::with_data(fit.kernel, &nodes, &values)?.posterior()?;
                Ok((n, e.mean, Some(e.std())))
            })
            .collect::<BenchResult<_>>()?,
        QuadMethod::ActiveBq => {
            let max = *cfg.budgets.last().expect("validated budgets");
            let trace = bq_integrate_active(&spline()?, |x| f.eval(x), max)?;
            cfg.budgets
                .iter()
                .map(|&n| {
                    let e = &trace[n - 1];
                    (n, e.mean, Some(e.std()))
                })
                .collect()
        }
        QuadMethod::WarpedBq => {
            let max = *cfg.budgets.last().expect("validated budgets");
            let (_, trace) = warped_bq_integrate(|x| f.eval(x), &domain, max, seed)?;
            cfg.budgets
                .iter()
                .map(|&n| {
                    let p = trace
                        .iter()
                        .find(|p| p.evaluations == n)
                        .expect("trace covers every budget from 3");
                    (n, p.estimate, Some(p.std))
                })
                .collect()
        }
        QuadMethod::Smc => smc_rows(f, &cfg.budgets, seed),
    };
    Ok(results
        .into_iter()
        .map(|(budget, estimate, std)| QuadRow {
            method: method.label().into(),
            integrand: cfg.integrand.label().into(),
            seed,
            budget,
            estimate,
            truth,
            abs_error: (estimate - truth).abs(),
            std,
        })
        .collect())
}

pub fn validate(cfg: &QuadConfig) -> BenchResult<()> {
    check_increasing("budgets", &cfg.budgets)?;
    if cfg.methods.is_empty() {
        return Err(config_error("methods must not be empty"));
    }
    if cfg.seeds == 0 {
        return Err(config_error("seeds must be at least 1"));
    }
    for m in &cfg.methods {
        if cfg.budgets[0] < m.min_budget() {
            return Err(config_error(format!(
                "{} needs budgets of at least {}",
                m.label(),
                m.min_budget()
            )));
        }
    }
    Ok(())
}

/// Rows ordered by method (as configured), then seed, then budget.
pub fn run(cfg: &QuadConfig) -> BenchResult<Vec<QuadRow>> {
    Ok(run_timed(cfg)?.0)
}

/// [`run`] plus the wall time of every `(method, seed)` job.
pub fn run_timed(cfg: &QuadConfig) -> BenchResult<(Vec<QuadRow>, Vec<JobTiming>)> {
    validate(cfg)?;
    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|s| cfg.seed + s).collect();
    let integrands = Integrand::build_all(&cfg.integrand, &seeds)?;
    let jobs: Vec<(QuadMethod, usize)> = cfg
        .methods
        .iter()
        .flat_map(|&m| (0..seeds.len()).map(move |i| (m, i)))
        .collect();
    let parts: Vec<(BenchResult<Vec<QuadRow>>, JobTiming)> = jobs
        .par_iter()
        .map(|&(m, i)| timed(m.label(), seeds[i], || run_method(cfg, m, seeds[i], &integrands[i])))
        .collect();
    let mut rows = Vec::new();
    let mut timings = Vec::with_capacity(parts.len());
    for (p, t) in parts {
        rows.extend(p?);
        timings.push(t);
    }
    Ok((rows, timings))
}
