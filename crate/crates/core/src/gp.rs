//! Gaussian process machinery on a bounded interval.
//!
//! Two stationary covariance families are supported:
//!
//! * `LinearSpline`: `k(x, x') = c (1 + b - b |x - x'| / 3)`, a stationary
//!   relative of the Wiener process whose posterior mean is the piecewise
//!   linear interpolant of the data.
//! * `ExpQuadratic`: `k(x, x') = θ² exp(-(x - x')² / λ²)`.
//!
//! Conditioning is noise-free. Gram matrices are factorized with a small
//! diagonal jitter (see [`GramFactor`]).

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Relative tolerance (in units of domain width) under which two abscissae
/// count as the same node.
pub const DUPLICATE_TOL: f64 = 1e-12;

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;
const REFINE_STEPS: usize = 4;

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    lo: f64,
    hi: f64,
}

impl Domain {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        ensure_finite(&[lo, hi])?;
        if lo >= hi {
            return Err(Error::InvalidArgument(format!(
                "domain requires lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        let slack = DUPLICATE_TOL * self.width();
        x >= self.lo - slack && x <= self.hi + slack
    }

    /// `n` equidistant points including both endpoints (exactly).
    pub fn linspace(&self, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![self.midpoint()],
            _ => {
                let step = self.width() / (n - 1) as f64;
                let mut pts: Vec<f64> = (0..n).map(|i| self.lo + step * i as f64).collect();
                pts[n - 1] = self.hi;
                pts
            }
        }
    }

    pub(crate) fn check(&self, x: f64) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        if !self.contains(x) {
            return Err(Error::OutsideDomain {
                x,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    LinearSpline,
    ExpQuadratic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelParams {
    /// `c (1 + b - b |r| / 3)`
    LinearSpline { scale: f64, slope: f64 },
    /// `θ² exp(-r² / λ²)`
    ExpQuadratic {
        output_scale: f64,
        length_scale: f64,
    },
}

/// A covariance function together with the interval it is defined on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    params: KernelParams,
    domain: Domain,
}

impl Kernel {
    /// Linear spline kernel with scale `c` and slope `b`.
    ///
    /// On an interval of width `W` the kernel is positive semi-definite iff
    /// `1 + b >= b W / 6`; always true on intervals of width at most 6.
    pub fn linear_spline(c: f64, b: f64, domain: Domain) -> Result<Self> {
        ensure_finite(&[c, b])?;
        if c <= 0.0 || b <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "linear spline kernel needs c, b > 0 (got c={c}, b={b})"
            )));
        }
        if 1.0 + b < b * domain.width() / 6.0 {
            return Err(Error::InvalidArgument(format!(
                "linear spline kernel with b={b} is indefinite on an interval of width {}",
                domain.width()
            )));
        }
        Ok(Self {
            params: KernelParams::LinearSpline { scale: c, slope: b },
            domain,
        })
    }

    pub fn exp_quadratic(theta: f64, lambda: f64, domain: Domain) -> Result<Self> {
        ensure_finite(&[theta, lambda])?;
        if theta <= 0.0 || lambda <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "exponentiated quadratic kernel needs θ, λ > 0 (got θ={theta}, λ={lambda})"
            )));
        }
        Ok(Self {
            params: KernelParams::ExpQuadratic {
                output_scale: theta,
                length_scale: lambda,
            },
            domain,
        })
    }

    /// Builds a kernel from its family and the `(scale, shape)` pair, i.e.
    /// `(c, b)` for the spline and `(θ, λ)` for the exponentiated quadratic.
    pub fn from_family(
        family: KernelFamily,
        scale: f64,
        shape: f64,
        domain: Domain,
    ) -> Result<Self> {
        match family {
            KernelFamily::LinearSpline => Self::linear_spline(scale, shape, domain),
            KernelFamily::ExpQuadratic => Self::exp_quadratic(scale, shape, domain),
        }
    }

    pub fn family(&self) -> KernelFamily {
        match self.params {
            KernelParams::LinearSpline { .. } => KernelFamily::LinearSpline,
            KernelParams::ExpQuadratic { .. } => KernelFamily::ExpQuadratic,
        }
    }

    pub fn params(&self) -> KernelParams {
        self.params
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// `c` or `θ`.
    pub fn scale_param(&self) -> f64 {
        match self.params {
            KernelParams::LinearSpline { scale, .. } => scale,
            KernelParams::ExpQuadratic { output_scale, .. } => output_scale,
        }
    }

    /// `b` or `λ`.
    pub fn shape_param(&self) -> f64 {
        match self.params {
            KernelParams::LinearSpline { slope, .. } => slope,
            KernelParams::ExpQuadratic { length_scale, .. } => length_scale,
        }
    }

    /// `k(x, x)`, identical for every `x` since both families are stationary.
    pub fn prior_variance(&self) -> f64 {
        match self.params {
            KernelParams::LinearSpline { scale, slope } => scale * (1.0 + slope),
            KernelParams::ExpQuadratic { output_scale, .. } => output_scale * output_scale,
        }
    }

    /// Checked covariance evaluation.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        self.domain.check(x)?;
        self.domain.check(y)?;
        Ok(self.cov(x, y))
    }

    #[inline]
    pub(crate) fn cov(&self, x: f64, y: f64) -> f64 {
        match self.params {
            KernelParams::LinearSpline { scale, slope } => {
                scale * (1.0 + slope - slope * (x - y).abs() / 3.0)
            }
            KernelParams::ExpQuadratic {
                output_scale,
                length_scale,
            } => {
                let r = (x - y) / length_scale;
                output_scale * output_scale * (-r * r).exp()
            }
        }
    }

    pub fn gram(&self, nodes: &[f64]) -> DMatrix<f64> {
        let n = nodes.len();
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = self.cov(nodes[i], nodes[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    pub(crate) fn cross(&self, x: f64, nodes: &[f64]) -> DVector<f64> {
        DVector::from_iterator(nodes.len(), nodes.iter().map(|&n| self.cov(x, n)))
    }
}

/// Covariance `k(x, x')`; errors on NaN input or points outside the domain.
pub fn kernel_eval(kernel: &Kernel, x: f64, x_prime: f64) -> Result<f64> {
    kernel.eval(x, x_prime)
}

/// Cholesky factor of a jittered Gram matrix.
///
/// The diagonal is loaded with `1e-10 · mean(diag)`; on failure the jitter
/// is raised tenfold up to `1e-6 · mean(diag)` before giving up.
#[derive(Debug, Clone)]
pub struct GramFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl GramFactor {
    pub fn new(gram: &DMatrix<f64>) -> Result<Self> {
        let n = gram.nrows();
        if n == 0 || gram.ncols() != n {
            return Err(Error::InvalidArgument(
                "Gram matrix must be square and non-empty".into(),
            ));
        }
        let mean_diag = gram.diagonal().mean();
        if !(mean_diag.is_finite() && mean_diag > 0.0) {
            return Err(Error::SingularGram { jitter: 0.0 });
        }
        let mut rel = JITTER_START;
        loop {
            let jitter = rel * mean_diag;
            let mut m = gram.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(m) {
                return Ok(Self { chol, jitter });
            }
            rel *= 10.0;
            if rel > JITTER_MAX * 1.000_001 {
                return Err(Error::SingularGram { jitter });
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Absolute jitter added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `K⁻¹ b`
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `K⁻¹ b` for the unjittered `gram`, by iterative refinement with the
    /// jittered factor as preconditioner. Stops once the residual no longer
    /// shrinks, so a nearly singular `gram` falls back to the jittered solve.
    pub fn solve_refined(&self, gram: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        let mut x = self.solve(b);
        if self.jitter == 0.0 {
            return x;
        }
        let mut res = b - gram * &x;
        let mut norm = res.norm();
        for _ in 0..REFINE_STEPS {
            if norm <= f64::EPSILON * b.norm() {
                break;
            }
            let next = &x + self.solve(&res);
            let next_res = b - gram * &next;
            let next_norm = next_res.norm();
            if !(next_norm < norm) {
                break;
            }
            x = next;
            res = next_res;
            norm = next_norm;
        }
        x
    }

    /// `L⁻¹ b` with `K = L Lᵀ`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal")
    }

    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Checks that nodes are finite, inside the domain and pairwise distinct.
pub(crate) fn validate_nodes(domain: &Domain, nodes: &[f64]) -> Result<()> {
    for &x in nodes {
        domain.check(x)?;
    }
    let mut sorted = nodes.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let tol = DUPLICATE_TOL * domain.width();
    for w in sorted.windows(2) {
        if w[1] - w[0] <= tol {
            return Err(Error::DuplicateNode(w[1]));
        }
    }
    Ok(())
}

/// Noise-free GP posterior.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    kernel: Kernel,
    nodes: Vec<f64>,
    values: Vec<f64>,
    weights: DVector<f64>,
    factor: GramFactor,
}

impl GpPosterior {
    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `K⁻¹ y`
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn factor(&self) -> &GramFactor {
        &self.factor
    }

    pub fn mean(&self, x: f64) -> Result<f64> {
        self.kernel.domain.check(x)?;
        Ok(self.kernel.cross(x, &self.nodes).dot(&self.weights))
    }

    pub fn variance(&self, x: f64) -> Result<f64> {
        self.mean_and_variance(x).map(|(_, v)| v)
    }

    pub fn mean_and_variance(&self, x: f64) -> Result<(f64, f64)> {
        self.kernel.domain.check(x)?;
        let kx = self.kernel.cross(x, &self.nodes);
        let mean = kx.dot(&self.weights);
        let v = self.factor.solve_lower(&kx);
        let var = (self.kernel.prior_variance() - v.norm_squared()).max(0.0);
        Ok((mean, var))
    }
}

/// Conditions a zero-mean GP on exact observations `values` at `nodes`.
pub fn gp_condition(kernel: &Kernel, nodes: &[f64], values: &[f64]) -> Result<GpPosterior> {
    if nodes.is_empty() {
        return Err(Error::InvalidArgument("need at least one node".into()));
    }
    if nodes.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: nodes.len(),
            got: values.len(),
        });
    }
    ensure_finite(values)?;
    validate_nodes(&kernel.domain, nodes)?;
    let gram = kernel.gram(nodes);
    let factor = GramFactor::new(&gram)?;
    let weights = factor.solve_refined(&gram, &DVector::from_column_slice(values));
    Ok(GpPosterior {
        kernel: *kernel,
        nodes: nodes.to_vec(),
        values: values.to_vec(),
        weights,
        factor,
    })
}

/// Gaussian log marginal likelihood `log N(y; 0, K)` (with jitter).
pub fn log_marginal_likelihood(kernel: &Kernel, nodes: &[f64], values: &[f64]) -> Result<f64> {
    if nodes.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: nodes.len(),
            got: values.len(),
        });
    }
    let factor = GramFactor::new(&kernel.gram(nodes))?;
    let y = DVector::from_column_slice(values);
    let alpha = factor.solve(&y);
    let n = nodes.len() as f64;
    Ok(-0.5 * y.dot(&alpha) - 0.5 * factor.log_det() - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

/// Box constraints for `(scale, shape)`, i.e. `(c, b)` or `(θ, λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub scale: (f64, f64),
    pub shape: (f64, f64),
}

impl ParamBounds {
    fn validate(&self) -> Result<()> {
        for (lo, hi) in [self.scale, self.shape] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "parameter bounds must satisfy 0 < lo <= hi, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    /// Logarithmic grid points per parameter.
    pub grid_points: usize,
    /// Refine the best grid point by coordinate descent.
    pub local_search: bool,
    pub max_iterations: usize,
    /// Stop once the log-space step falls below this.
    pub rel_tol: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            grid_points: 16,
            local_search: true,
            max_iterations: 50,
            rel_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HyperparameterFit {
    pub kernel: Kernel,
    pub log_marginal_likelihood: f64,
    /// Best value found on the grid alone.
    pub grid_log_marginal_likelihood: f64,
    /// Set when the data carry no scale information (all values identical);
    /// the kernel then sits at the lower parameter bounds.
    pub degenerate: bool,
}

/// Type-II maximum likelihood over a log grid refined by coordinate descent.
pub fn fit_hyperparameters(
    family: KernelFamily,
    domain: Domain,
    nodes: &[f64],
    values: &[f64],
    bounds: ParamBounds,
) -> Result<HyperparameterFit> {
    fit_hyperparameters_with(family, domain, nodes, values, bounds, SearchOptions::default())
}

pub fn fit_hyperparameters_with(
    family: KernelFamily,
    domain: Domain,
    nodes: &[f64],
    values: &[f64],
    bounds: ParamBounds,
    opts: SearchOptions,
) -> Result<HyperparameterFit> {
    if nodes.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "hyperparameter fitting needs at least 3 nodes, got {}",
            nodes.len()
        )));
    }
    if nodes.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: nodes.len(),
            got: values.len(),
        });
    }
    if opts.grid_points < 2 {
        return Err(Error::InvalidArgument("grid needs at least 2 points".into()));
    }
    bounds.validate()?;
    ensure_finite(values)?;
    validate_nodes(&domain, nodes)?;

    let first = values[0];
    if values.iter().all(|&v| v == first) {
        warn!("all observed values are identical; kernel scale is unidentifiable");
        let kernel = Kernel::from_family(family, bounds.scale.0, bounds.shape.0, domain)?;
        let lml = log_marginal_likelihood(&kernel, nodes, values).unwrap_or(f64::NEG_INFINITY);
        return Ok(HyperparameterFit {
            kernel,
            log_marginal_likelihood: lml,
            grid_log_marginal_likelihood: lml,
            degenerate: true,
        });
    }

    let lo = [bounds.scale.0.ln(), bounds.shape.0.ln()];
    let hi = [bounds.scale.1.ln(), bounds.shape.1.ln()];
    let objective = |p: [f64; 2]| -> f64 {
        Kernel::from_family(family, p[0].exp(), p[1].exp(), domain)
            .and_then(|k| log_marginal_likelihood(&k, nodes, values))
            .unwrap_or(f64::NEG_INFINITY)
    };

    let g = opts.grid_points;
    let step0 = [(hi[0] - lo[0]) / (g - 1) as f64, (hi[1] - lo[1]) / (g - 1) as f64];
    let mut best = (f64::NEG_INFINITY, lo);
    for i in 0..g {
        for j in 0..g {
            let p = [lo[0] + step0[0] * i as f64, lo[1] + step0[1] * j as f64];
            let v = objective(p);
            if v > best.0 {
                best = (v, p);
            }
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Numerical(
            "marginal likelihood is not finite anywhere on the grid".into(),
        ));
    }
    let grid_best = best.0;

    if opts.local_search {
        let mut step = step0;
        for _ in 0..opts.max_iterations {
            let mut improved = false;
            for c in 0..2 {
                for dir in [1.0, -1.0] {
                    let mut p = best.1;
                    p[c] = (p[c] + dir * step[c]).clamp(lo[c], hi[c]);
                    if p[c] == best.1[c] {
                        continue;
                    }
                    let v = objective(p);
                    if v > best.0 {
                        best = (v, p);
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                step = [step[0] * 0.5, step[1] * 0.5];
                if step[0].max(step[1]) < opts.rel_tol {
                    break;
                }
            }
        }
    }

    Ok(HyperparameterFit {
        kernel: Kernel::from_family(family, best.1[0].exp(), best.1[1].exp(), domain)?,
        log_marginal_likelihood: best.0,
        grid_log_marginal_likelihood: grid_best,
        degenerate: false,
    })
}

/// Draws paths from the zero-mean GP prior on a fixed grid.
///
/// The Cholesky factor is computed once so repeated draws are cheap.
#[derive(Debug, Clone)]
pub struct PathSampler {
    grid: Vec<f64>,
    lower: DMatrix<f64>,
}

impl PathSampler {
    pub fn new(kernel: &Kernel, grid: &[f64]) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::InvalidArgument("empty sampling grid".into()));
        }
        for &x in grid {
            kernel.domain.check(x)?;
        }
        let tol = DUPLICATE_TOL * kernel.domain.width();
        for w in grid.windows(2) {
            if w[1] < w[0] {
                return Err(Error::UnsortedNodes);
            }
            if w[1] - w[0] <= tol {
                return Err(Error::DuplicateNode(w[1]));
            }
        }
        let factor = GramFactor::new(&kernel.gram(grid))?;
        Ok(Self {
            grid: grid.to_vec(),
            lower: factor.lower(),
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn sample(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng)
    }

    pub fn sample_with<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_iterator(
            self.grid.len(),
            (0..self.grid.len()).map(|_| StandardNormal.sample(rng)),
        );
        (&self.lower * z).iter().copied().collect()
    }
}

/// One draw from `N(0, K)` on `grid`, deterministic in `seed`.
pub fn sample_path(kernel: &Kernel, grid: &[f64], seed: u64) -> Result<Vec<f64>> {
    Ok(PathSampler::new(kernel, grid)?.sample(seed))
}
