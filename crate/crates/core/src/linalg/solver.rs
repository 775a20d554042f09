use nalgebra::{DMatrix, DVector};

use super::belief::{orthonormal_form, recycled_prior, LowRankOperator, MatrixBelief};
use super::operator::LinearOperator;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Converged once `‖Ax − b‖ ≤ tol · ‖b‖`.
    pub tol: f64,
    /// Defaults to four times the system dimension; in floating point,
    /// ill-conditioned systems need more than the `N` steps of exact
    /// arithmetic.
    pub max_iter: Option<usize>,
    /// Keep every iterate `x₁, x₂, …` in the report.
    pub record_iterates: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: None,
            record_iterates: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: DVector<f64>,
    pub iterations: usize,
    /// `‖Ax − b‖` before the first step and after every step.
    pub residual_norms: Vec<f64>,
    pub converged: bool,
    /// Operator applications, including the initial residual when `x₀ ≠ 0`.
    pub matvecs: usize,
    /// `x₁ … x_k` when requested.
    pub iterates: Vec<DVector<f64>>,
    /// `⟨sᵢ, yᵢ⟩ / ⟨sᵢ, sᵢ⟩` per step.
    pub rayleigh_quotients: Vec<f64>,
    /// Posterior belief over `A⁻¹`; absent for classic CG.
    pub belief: Option<MatrixBelief>,
}

impl SolveReport {
    pub fn initial_residual(&self) -> f64 {
        self.residual_norms[0]
    }

    pub fn final_residual(&self) -> f64 {
        *self.residual_norms.last().expect("at least the initial residual")
    }
}

fn check_inputs<O: LinearOperator + ?Sized>(
    op: &O,
    b: &DVector<f64>,
    x0: Option<&DVector<f64>>,
    opts: &SolveOptions,
) -> Result<()> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if b.len() != op.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            got: b.len(),
        });
    }
    if let Some(x) = x0 {
        if x.len() != op.dim() {
            return Err(Error::DimensionMismatch {
                expected: op.dim(),
                got: x.len(),
            });
        }
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}

/// Initial iterate and residual `r = Ax − b`.
fn start<O: LinearOperator + ?Sized>(
    op: &O,
    b: &DVector<f64>,
    x0: Option<&DVector<f64>>,
) -> (DVector<f64>, DVector<f64>, usize) {
    match x0 {
        Some(x) if x.iter().any(|&v| v != 0.0) => (x.clone(), op.apply(x) - b, 1),
        _ => (DVector::zeros(b.len()), -b, 0),
    }
}

/// Hestenes–Stiefel conjugate gradients.
pub fn classic_cg<O: LinearOperator + ?Sized>(
    op: &O,
    b: &DVector<f64>,
    x0: Option<&DVector<f64>>,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    check_inputs(op, b, x0, opts)?;
    let max_iter = opts.max_iter.unwrap_or(4 * op.dim());
    let threshold = opts.tol * b.norm();
    let (mut x, r, mut matvecs) = start(op, b, x0);
    // CG is usually written with the negated residual
    let mut r = -r;
    let mut rr = r.norm_squared();
    let mut p = r.clone();
    let mut residual_norms = vec![rr.sqrt()];
    let mut iterates = Vec::new();
    let mut rayleigh = Vec::new();
    let mut k = 0;
    while rr.sqrt() > threshold && k < max_iter {
        let ap = op.apply(&p);
        matvecs += 1;
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(Error::Breakdown {
                iteration: k,
                curvature: pap,
            });
        }
        let alpha = rr / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rr_new = r.norm_squared();
        rayleigh.push(pap / p.norm_squared());
        residual_norms.push(rr_new.sqrt());
        if opts.record_iterates {
            iterates.push(x.clone());
        }
        k += 1;
        let beta = rr_new / rr;
        rr = rr_new;
        p = &r + beta * p;
    }
    Ok(SolveReport {
        solution: x,
        iterations: k,
        converged: rr.sqrt() <= threshold,
        residual_norms,
        matvecs,
        iterates,
        rayleigh_quotients: rayleigh,
        belief: None,
    })
}

/// Observations `(sᵢ, yᵢ = A sᵢ)` absorbed one at a time.
///
/// Conditioning a belief with mean `H` on one pair, with the covariance
/// factor chosen so that `W y = s`, gives the symmetric rank-2 update
///
/// `H⁺ = H + (ρ + ρ² ⟨y, v⟩) s sᵀ − ρ (s vᵀ + v sᵀ)`, `v = H y`, `ρ = 1/⟨s, y⟩`,
///
/// which satisfies `H⁺ y = s` and stays positive definite because
/// `⟨s, y⟩ > 0`. Along the conjugate directions of the solver, later
/// updates preserve the earlier conditions `H yᵢ = sᵢ`, so in exact
/// arithmetic this equals conditioning on all pairs at once. The joint
/// form needs `(SᵀY)⁻¹`, which loses definiteness in floating point once
/// conjugacy decays on ill-conditioned systems.
struct Observations {
    s: Vec<DVector<f64>>,
    v: Vec<DVector<f64>>,
    rho: Vec<f64>,
    c: Vec<f64>,
}

impl Observations {
    fn new() -> Self {
        Self {
            s: Vec::new(),
            v: Vec::new(),
            rho: Vec::new(),
            c: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.s.len()
    }

    fn push(&mut self, s: DVector<f64>, y: DVector<f64>, prior: &LowRankOperator) {
        let v = self.apply(prior, &y);
        let rho = 1.0 / s.dot(&y);
        self.c.push(rho + rho * rho * y.dot(&v));
        self.rho.push(rho);
        self.s.push(s);
        self.v.push(v);
    }

    /// `H r` for the current posterior mean.
    fn apply(&self, prior: &LowRankOperator, r: &DVector<f64>) -> DVector<f64> {
        let mut out = prior.apply(r);
        for j in 0..self.len() {
            let (sr, vr) = (self.s[j].dot(r), self.v[j].dot(r));
            out.axpy(self.c[j] * sr - self.rho[j] * vr, &self.s[j], 1.0);
            out.axpy(-self.rho[j] * sr, &self.v[j], 1.0);
        }
        out
    }

    /// `H − H₀` as `U diag(E) Uᵀ` with orthonormal `U`.
    fn low_rank_update(&self, dim: usize) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.len();
        if m == 0 {
            return (DMatrix::zeros(dim, 0), DVector::zeros(0));
        }
        let mut stacked = DMatrix::zeros(dim, 2 * m);
        let mut core = DMatrix::zeros(2 * m, 2 * m);
        for j in 0..m {
            stacked.set_column(j, &self.s[j]);
            stacked.set_column(m + j, &self.v[j]);
            core[(j, j)] = self.c[j];
            core[(j, m + j)] = -self.rho[j];
            core[(m + j, j)] = -self.rho[j];
        }
        orthonormal_form(dim, &[(&stacked, &core)])
    }
}

/// Solves `Ax = b` by stepping along `dᵢ = −Hᵢ rᵢ` with exact line search,
/// where `Hᵢ` is the posterior mean of a Gaussian belief over `A⁻¹`
/// after absorbing the previous steps.
///
/// The posterior mean of `belief` serves as the prior mean `H₀`. With
/// `H₀ = I` the iterates coincide with those of [`classic_cg`]. One operator
/// application per step.
pub fn solve_probabilistic<O: LinearOperator + ?Sized>(
    op: &O,
    b: &DVector<f64>,
    belief: &MatrixBelief,
    x0: Option<&DVector<f64>>,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    if belief.dim() != op.dim() {
        return Err(Error::BeliefDimensionMismatch {
            belief: belief.dim(),
            operator: op.dim(),
        });
    }
    check_inputs(op, b, x0, opts)?;
    let n = op.dim();
    let prior = belief.collapse();
    let max_iter = opts.max_iter.unwrap_or(4 * n);
    let threshold = opts.tol * b.norm();
    let (mut x, mut r, mut matvecs) = start(op, b, x0);
    let mut residual_norms = vec![r.norm()];
    let mut iterates = Vec::new();
    let mut rayleigh = Vec::new();
    let mut obs = Observations::new();
    while *residual_norms.last().unwrap() > threshold && obs.len() < max_iter {
        let d = -obs.apply(&prior, &r);
        let ad = op.apply(&d);
        matvecs += 1;
        let curvature = d.dot(&ad);
        if !(curvature > 0.0) {
            return Err(Error::Breakdown {
                iteration: obs.len(),
                curvature,
            });
        }
        let alpha = -d.dot(&r) / curvature;
        let s = alpha * d;
        let y = alpha * ad;
        x += &s;
        r += &y;
        rayleigh.push(s.dot(&y) / s.norm_squared());
        residual_norms.push(r.norm());
        if opts.record_iterates {
            iterates.push(x.clone());
        }
        obs.push(s, y, &prior);
    }
    let (u, e) = obs.low_rank_update(n);
    let scale = if rayleigh.is_empty() {
        belief.scale()
    } else {
        geometric_mean(&rayleigh)
    };
    Ok(SolveReport {
        solution: x,
        iterations: obs.len(),
        converged: *residual_norms.last().unwrap() <= threshold,
        residual_norms,
        matvecs,
        iterates,
        rayleigh_quotients: rayleigh,
        belief: Some(MatrixBelief::from_parts(prior, u, e, obs.len(), scale)),
    })
}

fn geometric_mean(v: &[f64]) -> f64 {
    (v.iter().map(|q| q.ln()).sum::<f64>() / v.len() as f64).exp()
}

/// Scale `σ` of the belief: geometric mean of the Rayleigh quotients
/// `⟨sᵢ, A sᵢ⟩ / ⟨sᵢ, sᵢ⟩` collected during the solve.
pub fn calibrate_scale(report: &SolveReport) -> Result<f64> {
    if report.rayleigh_quotients.is_empty() {
        return Err(Error::InsufficientTrace { needed: 1, got: 0 });
    }
    Ok(geometric_mean(&report.rayleigh_quotients))
}

/// Solves each problem with the identity prior and `x₀ = 0`.
pub fn cold_start_sequence<O: LinearOperator>(
    problems: &[(O, DVector<f64>)],
    tol: f64,
) -> Result<Vec<SolveReport>> {
    let opts = SolveOptions {
        tol,
        ..Default::default()
    };
    problems
        .iter()
        .map(|(a, b)| solve_probabilistic(a, b, &MatrixBelief::identity(a.dim()), None, &opts))
        .collect()
}

/// Solves the problems in order, seeding each with the rank-`r` truncation
/// of the previous posterior mean as prior mean and `x₀ = H₀ b`.
///
/// With `r = 0` nothing is carried over and `x₀ = 0`, so the run matches
/// [`cold_start_sequence`] exactly.
pub fn warm_start_sequence<O: LinearOperator>(
    problems: &[(O, DVector<f64>)],
    rank: usize,
    tol: f64,
) -> Result<Vec<SolveReport>> {
    let opts = SolveOptions {
        tol,
        ..Default::default()
    };
    let Some((first, _)) = problems.first() else {
        return Ok(Vec::new());
    };
    let dim = first.dim();
    let mut prior = LowRankOperator::identity(dim);
    let mut reports = Vec::with_capacity(problems.len());
    for (a, b) in problems {
        if a.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: a.dim(),
            });
        }
        let x0 = (prior.rank() > 0).then(|| prior.apply(b));
        let report = solve_probabilistic(a, b, &MatrixBelief::from_prior(prior.clone()), x0.as_ref(), &opts)?;
        prior = recycled_prior(report.belief.as_ref().expect("probabilistic solves carry a belief"), rank);
        reports.push(report);
    }
    Ok(reports)
}
