//! Gauss–Markov filtering for ODE initial value problems, plus classical
//! explicit Runge–Kutta references.
//!
//! The filter places a `q`-times integrated Wiener process prior on the
//! solution and its first `q` derivatives. The state vector stacks blocks
//! `[x, x', x'', …]`, each of length `d`. At each grid point the vector
//! field is evaluated at the predicted mean and the derivative block is
//! conditioned on that value without observation noise.
//!
//! Two update modes are offered:
//!
//! * [`UpdateMode::Restart`] (default): before conditioning, the cross
//!   covariance between `x` and its derivatives is dropped, i.e. the current
//!   `x` estimate is treated as the initial value of a fresh local
//!   extrapolation. For `q = 1` the mean then reproduces explicit Euler
//!   exactly and the variance of `x` grows monotonically.
//! * [`UpdateMode::Joint`]: the textbook Kalman update, which lets the
//!   derivative observation also correct `x`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::trace::loglog_slope;

pub type FieldFn = dyn Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync;

#[derive(Clone)]
pub enum VectorField {
    /// `f ≡ 0`
    Zero,
    /// `f(x) = rate · x`, componentwise.
    Linear { rate: f64 },
    /// `f(x) = rate · x (1 − x / capacity)`, componentwise.
    Logistic { rate: f64, capacity: f64 },
    /// `f(x) = rate · x` with `rate < 0`.
    StiffLinear { rate: f64 },
    /// `x' = αx − βxy`, `y' = δxy − γy`.
    LotkaVolterra {
        alpha: f64,
        beta: f64,
        delta: f64,
        gamma: f64,
    },
    Custom(Arc<FieldFn>),
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Linear { rate } => write!(f, "Linear {{ rate: {rate} }}"),
            Self::Logistic { rate, capacity } => {
                write!(f, "Logistic {{ rate: {rate}, capacity: {capacity} }}")
            }
            Self::StiffLinear { rate } => write!(f, "StiffLinear {{ rate: {rate} }}"),
            Self::LotkaVolterra {
                alpha,
                beta,
                delta,
                gamma,
            } => write!(
                f,
                "LotkaVolterra {{ alpha: {alpha}, beta: {beta}, delta: {delta}, gamma: {gamma} }}"
            ),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl VectorField {
    pub fn eval(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        match self {
            Self::Zero => DVector::zeros(x.len()),
            Self::Linear { rate } | Self::StiffLinear { rate } => x * *rate,
            Self::Logistic { rate, capacity } => x.map(|v| rate * v * (1.0 - v / capacity)),
            Self::LotkaVolterra {
                alpha,
                beta,
                delta,
                gamma,
            } => DVector::from_vec(vec![
                alpha * x[0] - beta * x[0] * x[1],
                delta * x[0] * x[1] - gamma * x[1],
            ]),
            Self::Custom(f) => f(x, t),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IvProblem {
    pub field: VectorField,
    pub x0: DVector<f64>,
    pub t0: f64,
    pub t_end: f64,
}

impl IvProblem {
    pub fn new(field: VectorField, x0: DVector<f64>, t0: f64, t_end: f64) -> Result<Self> {
        if !(t_end > t0) || !t0.is_finite() || !t_end.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "need t0 < t_end, got [{t0}, {t_end}]"
            )));
        }
        if x0.is_empty() || x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        match &field {
            VectorField::LotkaVolterra { .. } if x0.len() != 2 => {
                return Err(Error::DimensionMismatch {
                    expected: 2,
                    got: x0.len(),
                })
            }
            VectorField::StiffLinear { rate } if *rate >= 0.0 => {
                return Err(Error::InvalidArgument(format!(
                    "stiff linear field needs a negative rate, got {rate}"
                )))
            }
            VectorField::Logistic { capacity, .. } if *capacity == 0.0 => {
                return Err(Error::InvalidArgument("logistic capacity must be non-zero".into()))
            }
            _ => {}
        }
        let probe = field.eval(&x0, t0);
        if probe.len() != x0.len() {
            return Err(Error::DimensionMismatch {
                expected: x0.len(),
                got: probe.len(),
            });
        }
        if probe.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteField { t: t0 });
        }
        Ok(Self {
            field,
            x0,
            t0,
            t_end,
        })
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    /// Closed-form solution at `t`, where one is known.
    pub fn exact(&self, t: f64) -> Option<DVector<f64>> {
        let tau = t - self.t0;
        match &self.field {
            VectorField::Zero => Some(self.x0.clone()),
            VectorField::Linear { rate } | VectorField::StiffLinear { rate } => {
                Some(&self.x0 * (rate * tau).exp())
            }
            VectorField::Logistic { rate, capacity } => Some(self.x0.map(|v| {
                let e = (rate * tau).exp();
                capacity * v * e / (capacity + v * (e - 1.0))
            })),
            _ => None,
        }
    }

    fn field_at(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        let y = self.field.eval(x, t);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteField { t });
        }
        Ok(y)
    }

    /// Number of steps of size `h` covering the interval.
    pub fn steps_for(&self, h: f64) -> Result<usize> {
        let span = self.t_end - self.t0;
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
        }
        let n = (span / h).round();
        if n < 1.0 || (n * h - span).abs() > 1e-9 * span.max(1.0) {
            return Err(Error::StepMismatch { h, span });
        }
        Ok(n as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RkMethod {
    Euler,
    Midpoint,
    Rk4,
}

/// Explicit Butcher tableau.
#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    /// Strictly lower triangular stage weights.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub order: u32,
}

impl RkMethod {
    pub fn tableau(self) -> ButcherTableau {
        match self {
            Self::Euler => ButcherTableau {
                a: vec![vec![]],
                b: vec![1.0],
                c: vec![0.0],
                order: 1,
            },
            Self::Midpoint => ButcherTableau {
                a: vec![vec![], vec![0.5]],
                b: vec![0.0, 1.0],
                c: vec![0.0, 0.5],
                order: 2,
            },
            Self::Rk4 => ButcherTableau {
                a: vec![vec![], vec![0.5], vec![0.0, 0.5], vec![0.0, 0.0, 1.0]],
                b: vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
                c: vec![0.0, 0.5, 0.5, 1.0],
                order: 4,
            },
        }
    }

    pub fn order(self) -> u32 {
        self.tableau().order
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("trajectories are non-empty")
    }
}

/// Classical explicit Runge–Kutta with fixed step `h`.
pub fn rk_reference(problem: &IvProblem, method: RkMethod, h: f64) -> Result<Trajectory> {
    let n = problem.steps_for(h)?;
    let tab = method.tableau();
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut x = problem.x0.clone();
    times.push(problem.t0);
    states.push(x.clone());
    for i in 0..n {
        let t = problem.t0 + i as f64 * h;
        let mut k: Vec<DVector<f64>> = Vec::with_capacity(tab.b.len());
        for (s, row) in tab.a.iter().enumerate() {
            let mut xs = x.clone();
            for (j, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    xs.axpy(h * w, &k[j], 1.0);
                }
            }
            k.push(problem.field_at(&xs, t + tab.c[s] * h)?);
        }
        for (j, &w) in tab.b.iter().enumerate() {
            if w != 0.0 {
                x.axpy(h * w, &k[j], 1.0);
            }
        }
        times.push(problem.t0 + (i + 1) as f64 * h);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateMode {
    #[default]
    Restart,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    /// Prior order `q`, 1 or 2.
    pub order: usize,
    pub step: f64,
    /// Diffusion `ρ²` of the Wiener process.
    pub diffusion: f64,
    pub mode: UpdateMode,
}

impl FilterConfig {
    pub fn new(order: usize, step: f64) -> Self {
        Self {
            order,
            step,
            diffusion: 1.0,
            mode: UpdateMode::Restart,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.order) {
            return Err(Error::InvalidArgument(format!(
                "filter order must be 1 or 2, got {}",
                self.order
            )));
        }
        if !(self.diffusion > 0.0) || !self.diffusion.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "diffusion must be positive, got {}",
                self.diffusion
            )));
        }
        Ok(())
    }
}

/// Filter posterior at one grid point (after the update).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub t: f64,
    /// `[x, x', …]`, `(q + 1) d` entries.
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub step: f64,
    pub order: usize,
    pub diffusion: f64,
}

impl FilterState {
    pub fn dim(&self) -> usize {
        self.mean.len() / (self.order + 1)
    }

    pub fn x_mean(&self) -> DVector<f64> {
        self.mean.rows(0, self.dim()).into_owned()
    }

    pub fn x_std(&self) -> DVector<f64> {
        let d = self.dim();
        DVector::from_fn(d, |i, _| self.cov[(i, i)].max(0.0).sqrt())
    }
}

#[derive(Debug, Clone)]
pub struct FilterSolution {
    pub states: Vec<FilterState>,
    /// Innovations `y − E[x']` and their predictive covariances, one per
    /// grid point, under the diffusion used for the run.
    innovations: Vec<(DVector<f64>, DMatrix<f64>)>,
}

impl FilterSolution {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn means(&self) -> Vec<DVector<f64>> {
        self.states.iter().map(|s| s.x_mean()).collect()
    }

    pub fn stds(&self) -> Vec<DVector<f64>> {
        self.states.iter().map(|s| s.x_std()).collect()
    }

    pub fn last(&self) -> &FilterState {
        self.states.last().expect("solutions are non-empty")
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Transition `A(h)` and process noise `Q(h)` of the `q`-times integrated
/// Wiener process for one scalar coordinate.
pub fn iwp_transition(q: usize, h: f64, diffusion: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let a = DMatrix::from_fn(q + 1, q + 1, |i, j| {
        if j >= i {
            h.powi((j - i) as i32) / factorial(j - i)
        } else {
            0.0
        }
    });
    let qm = DMatrix::from_fn(q + 1, q + 1, |i, j| {
        let p = 2 * q + 1 - i - j;
        diffusion * h.powi(p as i32) / (p as f64 * factorial(q - i) * factorial(q - j))
    });
    (a, qm)
}

/// `M ⊗ I_d` in the block layout `[x, x', …]`.
fn kron_identity(m: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        for j in 0..n {
            if m[(i, j)] != 0.0 {
                for k in 0..d {
                    out[(i * d + k, j * d + k)] = m[(i, j)];
                }
            }
        }
    }
    out
}

fn check_psd(cov: &DMatrix<f64>, t: f64) -> Result<()> {
    let trace = cov.trace();
    if !trace.is_finite() {
        return Err(Error::CovarianceBreakdown { t });
    }
    let min = cov.clone().symmetric_eigen().eigenvalues.min();
    if min < -1e-8 * trace.max(f64::MIN_POSITIVE) {
        return Err(Error::CovarianceBreakdown { t });
    }
    Ok(())
}

/// Conditions the derivative block on `y` (noise-free) and returns the
/// innovation and its covariance.
fn update(
    problem: &IvProblem,
    mode: UpdateMode,
    t: f64,
    mean: &mut DVector<f64>,
    cov: &mut DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = problem.dim();
    let n = mean.len();
    let y = problem.field_at(&mean.rows(0, d).into_owned(), t)?;
    if mode == UpdateMode::Restart {
        for i in 0..d {
            for j in d..n {
                cov[(i, j)] = 0.0;
                cov[(j, i)] = 0.0;
            }
        }
    }
    let s = cov.view((d, d), (d, d)).into_owned();
    let innovation = &y - mean.rows(d, d);
    let cross = cov.columns(d, d).into_owned();
    let gain = match s.clone().cholesky() {
        Some(ch) => ch.solve(&cross.transpose()).transpose(),
        // derivative already known exactly: nothing to learn beyond `y`
        None => DMatrix::zeros(n, d),
    };
    *mean += &gain * &innovation;
    *cov -= &gain * cross.transpose();
    for i in 0..n {
        for j in d..2 * d {
            cov[(i, j)] = 0.0;
            cov[(j, i)] = 0.0;
        }
    }
    mean.rows_mut(d, d).copy_from(&y);
    let sym = (&*cov + cov.transpose()) * 0.5;
    *cov = sym;
    Ok((innovation, s))
}

/// Runs the filter over the fixed grid `t₀, t₀ + h, …, t_end`.
///
/// The initial state is `x = x₀` exactly with derivatives of prior variance
/// `ρ²`. Costs one vector-field evaluation per grid point.
pub fn solve_ivp_filter(problem: &IvProblem, config: &FilterConfig) -> Result<FilterSolution> {
    config.validate()?;
    let n_steps = problem.steps_for(config.step)?;
    let d = problem.dim();
    let q = config.order;
    let size = (q + 1) * d;
    let (a1, q1) = iwp_transition(q, config.step, config.diffusion);
    let a = kron_identity(&a1, d);
    let qn = kron_identity(&q1, d);

    let mut mean = DVector::zeros(size);
    mean.rows_mut(0, d).copy_from(&problem.x0);
    let mut cov = DMatrix::zeros(size, size);
    for i in d..size {
        cov[(i, i)] = config.diffusion;
    }

    let mut states = Vec::with_capacity(n_steps + 1);
    let mut innovations = Vec::with_capacity(n_steps + 1);
    for step in 0..=n_steps {
        let t = problem.t0 + step as f64 * config.step;
        if step > 0 {
            mean = &a * &mean;
            cov = &a * &cov * a.transpose() + &qn;
            check_psd(&cov, t)?;
        }
        innovations.push(update(problem, config.mode, t, &mut mean, &mut cov)?);
        states.push(FilterState {
            t,
            mean: mean.clone(),
            cov: cov.clone(),
            step: config.step,
            order: q,
            diffusion: config.diffusion,
        });
    }
    Ok(FilterSolution {
        states,
        innovations,
    })
}

/// Maximum-likelihood diffusion `ρ²` from the one-step predictive
/// distribution of the observed derivatives.
///
/// The filter mean does not depend on `ρ²` and all covariances scale
/// linearly with it, so a single run at `ρ² = 1` yields the likelihood for
/// every `ρ²`. The maximizer is located on a 16-point log grid over
/// `[1e-8, 1e8]` and then refined by step halving.
pub fn calibrate_diffusion(problem: &IvProblem, config: &FilterConfig) -> Result<f64> {
    let unit = FilterConfig {
        diffusion: 1.0,
        ..*config
    };
    let sol = solve_ivp_filter(problem, &unit)?;
    let mut quad = 0.0;
    let mut logdet = 0.0;
    let mut count = 0.0;
    for (e, s) in &sol.innovations {
        if e.is_empty() {
            continue;
        }
        if let Some(ch) = s.clone().cholesky() {
            quad += e.dot(&ch.solve(e));
            logdet += 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            count += e.len() as f64;
        }
    }
    if count == 0.0 || quad == 0.0 {
        return Ok(1.0);
    }
    let loglik = |log_rho2: f64| -0.5 * (count * log_rho2 + logdet + quad / log_rho2.exp());
    let (lo, hi) = ((1e-8f64).ln(), (1e8f64).ln());
    let step = (hi - lo) / 15.0;
    let mut best = (f64::NEG_INFINITY, lo);
    for i in 0..16 {
        let t = lo + step * i as f64;
        let v = loglik(t);
        if v > best.0 {
            best = (v, t);
        }
    }
    let mut h = step;
    while h > 1e-10 {
        let mut moved = false;
        for t in [best.1 + h, best.1 - h] {
            let v = loglik(t);
            if v > best.0 {
                best = (v, t);
                moved = true;
                break;
            }
        }
        if !moved {
            h *= 0.5;
        }
    }
    Ok(best.1.exp())
}

/// Rescales every covariance of a solution to a new diffusion.
pub fn rescale_diffusion(solution: &FilterSolution, diffusion: f64) -> FilterSolution {
    let states = solution
        .states
        .iter()
        .map(|s| FilterState {
            cov: &s.cov * (diffusion / s.diffusion),
            diffusion,
            ..s.clone()
        })
        .collect();
    let innovations = solution
        .innovations
        .iter()
        .map(|(e, s)| (e.clone(), s * (diffusion / solution.states[0].diffusion)))
        .collect();
    FilterSolution {
        states,
        innovations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConvergenceSolver {
    RungeKutta { method: RkMethod },
    Filter { order: usize, mode: UpdateMode },
}

impl ConvergenceSolver {
    pub fn label(&self) -> String {
        match self {
            Self::RungeKutta { method } => match method {
                RkMethod::Euler => "euler".into(),
                RkMethod::Midpoint => "midpoint".into(),
                RkMethod::Rk4 => "rk4".into(),
            },
            Self::Filter { order, mode } => match mode {
                UpdateMode::Restart => format!("filter-q{order}"),
                UpdateMode::Joint => format!("filter-q{order}-joint"),
            },
        }
    }

    /// Final state for step `h`.
    pub fn final_state(&self, problem: &IvProblem, h: f64) -> Result<DVector<f64>> {
        match *self {
            Self::RungeKutta { method } => Ok(rk_reference(problem, method, h)?.last().clone()),
            Self::Filter { order, mode } => {
                let cfg = FilterConfig {
                    order,
                    step: h,
                    diffusion: 1.0,
                    mode,
                };
                Ok(solve_ivp_filter(problem, &cfg)?.last().x_mean())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
}

/// Least-squares slope of `log(global error at t_end)` against `log h`.
pub fn convergence_order_estimate(
    solver: &ConvergenceSolver,
    problem: &IvProblem,
    steps: &[f64],
) -> Result<ConvergenceStudy> {
    if steps.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "need at least 4 step sizes, got {}",
            steps.len()
        )));
    }
    let ratio = steps[1] / steps[0];
    if !(ratio > 0.0 && ratio != 1.0)
        || steps
            .windows(2)
            .any(|w| ((w[1] / w[0]) - ratio).abs() > 1e-9 * ratio.abs())
    {
        return Err(Error::InvalidArgument(
            "step sizes must form a geometric progression".into(),
        ));
    }
    let exact = problem.exact(problem.t_end).ok_or_else(|| {
        Error::InvalidArgument("convergence study needs a closed-form solution".into())
    })?;
    let mut errors = Vec::with_capacity(steps.len());
    for &h in steps {
        let e = (solver.final_state(problem, h)? - &exact).norm();
        if e == 0.0 {
            return Err(Error::ZeroError);
        }
        errors.push(e);
    }
    let slope = loglog_slope(steps, &errors).ok_or(Error::ZeroError)?;
    Ok(ConvergenceStudy {
        steps: steps.to_vec(),
        errors,
        slope,
    })
}
