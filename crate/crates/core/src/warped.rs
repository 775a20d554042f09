//! Square-root warped Bayesian quadrature for positive integrands.
//!
//! The integrand is written as `f(x) = α + ½ g(x)²` with a GP on `g` and a
//! tensor-product exponentiated quadratic kernel on a box. The offset is
//! `α = 0.8 · min f` over the evaluations so far, re-set each iteration.
//! Moments of `f` come from linearizing the square around the posterior
//! mean of `g`:
//!
//! * `E[f(x)] ≈ α + ½ m(x)²`
//! * `Cov[f(x), f(x')] ≈ m(x) C(x, x') m(x')`
//!
//! so the integral mean stays above `α · vol > 0`. Nodes are chosen one at a
//! time where the linearized variance of `f` is largest.

use gauss_quad::legendre::GaussLegendre;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::num::NonZeroUsize;

use crate::error::{ensure_finite, Error, Result};
use crate::gp::{Domain, GramFactor, Kernel};
use crate::quadrature::QuadratureEstimate;
use crate::trace::TracePoint;

pub const MAX_DIM: usize = 4;
pub const WARP_OFFSET_FRACTION: f64 = 0.8;
const CANDIDATES: usize = 512;
const GL_ORDER: usize = 8;
const MAX_PANELS: usize = 256;

/// Axis-aligned box, dimension 1 to 4.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.is_empty() || lo.len() > MAX_DIM {
            return Err(Error::InvalidArgument(format!(
                "box dimension must be in 1..={MAX_DIM}, got {}",
                lo.len()
            )));
        }
        ensure_finite(&lo)?;
        ensure_finite(&hi)?;
        if lo.iter().zip(&hi).any(|(l, h)| l >= h) {
            return Err(Error::InvalidArgument("box requires lo < hi per axis".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn from_interval(d: &Domain) -> Self {
        Self {
            lo: vec![d.lo()],
            hi: vec![d.hi()],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|d| self.width(d)).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| rng.random_range(l..h))
            .collect()
    }
}

/// `θ² ∏_d exp(−(a_d − b_d)² / λ_d²)`
#[derive(Debug, Clone, PartialEq)]
pub struct TensorEqKernel {
    pub output_scale_sq: f64,
    pub length_scales: Vec<f64>,
}

impl TensorEqKernel {
    fn correlation(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((x, y), l) in a.iter().zip(b).zip(&self.length_scales) {
            let r = (x - y) / l;
            s += r * r;
        }
        (-s).exp()
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.output_scale_sq * self.correlation(a, b)
    }
}

/// Hyperparameter search range for the relative length scale `ℓ`
/// (`λ_d = ℓ · width_d`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpedOptions {
    pub length_scale_range: (f64, f64),
    pub grid_points: usize,
}

impl Default for WarpedOptions {
    fn default() -> Self {
        Self {
            length_scale_range: (0.02, 2.0),
            grid_points: 16,
        }
    }
}

/// Integral posterior under the linearized warp.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedEstimate {
    pub mean: f64,
    pub variance: f64,
    pub n_evals: usize,
    pub offset: f64,
    pub kernel: TensorEqKernel,
}

impl WarpedEstimate {
    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct WarpedRun {
    pub estimate: WarpedEstimate,
    /// One entry per evaluation from the third onward.
    pub trace: Vec<TracePoint>,
    pub nodes: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

/// Model of `g` fitted to the current evaluations.
struct WarpModel<'a> {
    domain: &'a BoxDomain,
    nodes: &'a [Vec<f64>],
    kernel: TensorEqKernel,
    /// Factor of the correlation matrix (unit output scale).
    factor: GramFactor,
    weights: DVector<f64>,
    offset: f64,
}

fn correlation_gram(nodes: &[Vec<f64>], kernel: &TensorEqKernel) -> DMatrix<f64> {
    let n = nodes.len();
    let mut c = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = kernel.correlation(&nodes[i], &nodes[j]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

/// Profiled log-likelihood of `g` for relative length scale `ell`; the
/// output scale is replaced by its maximizer `gᵀC⁻¹g / n`.
fn profiled_fit(
    domain: &BoxDomain,
    nodes: &[Vec<f64>],
    g: &DVector<f64>,
    ell: f64,
) -> Option<(f64, TensorEqKernel, GramFactor)> {
    let mut kernel = TensorEqKernel {
        output_scale_sq: 1.0,
        length_scales: (0..domain.dim()).map(|d| ell * domain.width(d)).collect(),
    };
    let factor = GramFactor::new(&correlation_gram(nodes, &kernel)).ok()?;
    let n = g.len() as f64;
    let theta_sq = g.dot(&factor.solve(g)) / n;
    if !(theta_sq.is_finite() && theta_sq > 0.0) {
        return None;
    }
    let ll = -0.5 * n * theta_sq.ln() - 0.5 * factor.log_det();
    kernel.output_scale_sq = theta_sq;
    Some((ll, kernel, factor))
}

impl<'a> WarpModel<'a> {
    fn fit(
        domain: &'a BoxDomain,
        nodes: &'a [Vec<f64>],
        values: &[f64],
        opts: &WarpedOptions,
    ) -> Result<Self> {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let offset = WARP_OFFSET_FRACTION * min;
        let g = DVector::from_iterator(
            values.len(),
            values.iter().map(|&f| (2.0 * (f - offset)).sqrt()),
        );

        let (lo, hi) = (opts.length_scale_range.0.ln(), opts.length_scale_range.1.ln());
        let m = opts.grid_points.max(2);
        let step = (hi - lo) / (m - 1) as f64;
        let score = |t: f64| profiled_fit(domain, nodes, &g, t.exp()).map(|r| r.0);
        let mut best = (f64::NEG_INFINITY, lo);
        for i in 0..m {
            let t = lo + step * i as f64;
            if let Some(v) = score(t) {
                if v > best.0 {
                    best = (v, t);
                }
            }
        }
        if !best.0.is_finite() {
            return Err(Error::SingularGram { jitter: f64::NAN });
        }
        let mut h = step;
        while h > 1e-3 {
            let mut moved = false;
            for t in [best.1 + h, best.1 - h] {
                if (lo..=hi).contains(&t) {
                    if let Some(v) = score(t) {
                        if v > best.0 {
                            best = (v, t);
                            moved = true;
                            break;
                        }
                    }
                }
            }
            if !moved {
                h *= 0.5;
            }
        }
        let (_, kernel, factor) =
            profiled_fit(domain, nodes, &g, best.1.exp()).expect("re-evaluating the best fit");
        // `factor` holds the correlation matrix C, so K⁻¹ = C⁻¹ / θ²
        let weights = factor.solve(&g) / kernel.output_scale_sq;
        Ok(Self {
            domain,
            nodes,
            kernel,
            factor,
            weights,
            offset,
        })
    }

    /// `L⁻¹ v` for the Cholesky factor `L` of the scaled Gram matrix.
    fn solve_lower(&self, v: &DVector<f64>) -> DVector<f64> {
        self.factor.solve_lower(v) / self.kernel.output_scale_sq.sqrt()
    }

    fn cross(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.nodes.len(), self.nodes.iter().map(|n| self.kernel.eval(x, n)))
    }

    /// Linearized variance of `f` at `x`: `m(x)² · var_g(x)`.
    fn acquisition(&self, x: &[f64]) -> f64 {
        let k = self.cross(x);
        let m = k.dot(&self.weights);
        let v = self.solve_lower(&k);
        let var = (self.kernel.output_scale_sq - v.norm_squared()).max(0.0);
        m * m * var
    }

    fn estimate(&self) -> Result<WarpedEstimate> {
        let n = self.nodes.len();
        let dim = self.domain.dim();
        let mut pair = DMatrix::from_element(n, n, 1.0);
        let mut triple = DMatrix::from_element(n, n, 1.0);
        for d in 0..dim {
            let (lo, hi) = (self.domain.lo()[d], self.domain.hi()[d]);
            let lambda = self.kernel.length_scales[d];
            let coords: Vec<f64> = self.nodes.iter().map(|p| p[d]).collect();
            for j in 0..n {
                for i in j..n {
                    let v = gauss_product_integral(coords[i], coords[j], lambda, lo, hi);
                    pair[(i, j)] *= v;
                    if i != j {
                        pair[(j, i)] *= v;
                    }
                }
            }
            let t = triple_integrals(&coords, lambda, lo, hi);
            triple.component_mul_assign(&t);
        }
        let t2 = self.kernel.output_scale_sq * self.kernel.output_scale_sq;
        let p = &pair * &self.weights * t2;
        let mean = self.offset * self.domain.volume() + 0.5 * self.weights.dot(&p);
        let first = t2 * self.kernel.output_scale_sq * self.weights.dot(&(&triple * &self.weights));
        let u = self.solve_lower(&p);
        let variance = (first - u.norm_squared()).max(0.0);
        Ok(WarpedEstimate {
            mean,
            variance,
            n_evals: n,
            offset: self.offset,
            kernel: self.kernel.clone(),
        })
    }
}

/// `∫_lo^hi exp(−(x−a)²/λ²) exp(−(x−b)²/λ²) dx`
fn gauss_product_integral(a: f64, b: f64, lambda: f64, lo: f64, hi: f64) -> f64 {
    let m = 0.5 * (a + b);
    let s = std::f64::consts::SQRT_2 / lambda;
    let diff = a - b;
    (-(diff * diff) / (2.0 * lambda * lambda)).exp() * (lambda / std::f64::consts::SQRT_2)
        * (PI.sqrt() / 2.0)
        * (libm::erf(s * (hi - m)) - libm::erf(s * (lo - m)))
}

/// `T(a_i, a_j) = ∬ e(x − a_i) e(x − x') e(x' − a_j) dx dx'` with
/// `e(r) = exp(−r²/λ²)`: the inner integral in closed form, the outer one by
/// composite Gauss–Legendre on panels no wider than `λ/2`.
fn triple_integrals(coords: &[f64], lambda: f64, lo: f64, hi: f64) -> DMatrix<f64> {
    let n = coords.len();
    let panels = (((hi - lo) / (0.5 * lambda)).ceil() as usize).clamp(1, MAX_PANELS);
    let rule = GaussLegendre::new(NonZeroUsize::new(GL_ORDER).unwrap());
    let h = (hi - lo) / panels as f64;
    let q = panels * GL_ORDER;
    let mut left = DMatrix::zeros(n, q);
    let mut right = DMatrix::zeros(q, n);
    let mut col = 0;
    for p in 0..panels {
        let a = lo + h * p as f64;
        for &(node, weight) in rule.as_node_weight_pairs() {
            let x = a + 0.5 * h * (node + 1.0);
            let w = 0.5 * h * weight;
            for (i, &c) in coords.iter().enumerate() {
                let r = (x - c) / lambda;
                left[(i, col)] = w * (-r * r).exp();
                right[(col, i)] = gauss_product_integral(x, c, lambda, lo, hi);
            }
            col += 1;
        }
    }
    let t = left * right;
    (&t + t.transpose()) * 0.5
}

/// Warped active BQ on a box.
///
/// The initial design is the box center plus two seeded uniform points; each
/// further node maximizes `m(x)² var_g(x)` over 512 candidates (equidistant
/// in 1-D, seeded uniform otherwise). Hyperparameters are refitted after
/// every evaluation.
pub fn warped_bq_integrate_box<F: Fn(&[f64]) -> f64>(
    f: F,
    domain: &BoxDomain,
    budget: usize,
    seed: u64,
    opts: &WarpedOptions,
) -> Result<WarpedRun> {
    if budget < 3 {
        return Err(Error::InvalidArgument(format!(
            "warped BQ needs a budget of at least 3, got {budget}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: Vec<Vec<f64>> = Vec::with_capacity(budget);
    let mut values = Vec::with_capacity(budget);
    let eval = |x: &[f64]| -> Result<f64> {
        let v = f(x);
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NonPositiveEvaluation {
                x: x.to_vec(),
                value: v,
            });
        }
        Ok(v)
    };
    let grid_1d: Option<Vec<f64>> = (domain.dim() == 1).then(|| {
        Domain::new(domain.lo()[0], domain.hi()[0])
            .expect("validated box")
            .linspace(CANDIDATES)
    });

    let initial = [domain.center(), domain.sample(&mut rng), domain.sample(&mut rng)];
    for x in initial {
        values.push(eval(&x)?);
        nodes.push(x);
    }
    let mut trace = Vec::with_capacity(budget);
    loop {
        let model = WarpModel::fit(domain, &nodes, &values, opts)?;
        let est = model.estimate()?;
        trace.push(TracePoint {
            evaluations: nodes.len(),
            estimate: est.mean,
            std: est.std(),
        });
        if nodes.len() >= budget {
            return Ok(WarpedRun {
                estimate: est,
                trace,
                nodes,
                values,
            });
        }
        let candidates: Vec<Vec<f64>> = match &grid_1d {
            Some(g) => g.iter().map(|&x| vec![x]).collect(),
            None => (0..CANDIDATES).map(|_| domain.sample(&mut rng)).collect(),
        };
        let tol = 1e-12;
        let candidates: Vec<Vec<f64>> = candidates
            .into_iter()
            .filter(|c| {
                nodes.iter().all(|n| {
                    n.iter()
                        .zip(c)
                        .enumerate()
                        .any(|(d, (a, b))| (a - b).abs() > tol * domain.width(d))
                })
            })
            .collect();
        if candidates.is_empty() {
            return Err(Error::NoCandidates);
        }
        let scores: Vec<f64> = candidates.par_iter().map(|c| model.acquisition(c)).collect();
        let mut best = 0;
        for i in 1..scores.len() {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        let x = candidates[best].clone();
        values.push(eval(&x)?);
        nodes.push(x);
    }
}

/// One-dimensional warped active BQ returning an interval-kernel estimate.
pub fn warped_bq_integrate<F: Fn(f64) -> f64>(
    f: F,
    domain: &Domain,
    budget: usize,
    seed: u64,
) -> Result<(QuadratureEstimate, Vec<TracePoint>)> {
    let b = BoxDomain::from_interval(domain);
    let run = warped_bq_integrate_box(|x| f(x[0]), &b, budget, seed, &WarpedOptions::default())?;
    let k = &run.estimate.kernel;
    let kernel = Kernel::exp_quadratic(k.output_scale_sq.sqrt(), k.length_scales[0], *domain)?;
    Ok((
        QuadratureEstimate {
            mean: run.estimate.mean,
            variance: run.estimate.variance,
            n_evals: run.estimate.n_evals,
            kernel,
            clamped: false,
        },
        run.trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gl_integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> f64 {
        let rule = GaussLegendre::new(NonZeroUsize::new(30).unwrap());
        let panels = 200;
        let h = (hi - lo) / panels as f64;
        (0..panels)
            .map(|p| rule.integrate(lo + h * p as f64, lo + h * (p + 1) as f64, &f))
            .sum()
    }

    #[test]
    fn pair_integral_matches_quadrature() {
        let (a, b, l) = (0.3, -0.5, 0.7);
        let e = |x: f64, c: f64| (-((x - c) / l).powi(2)).exp();
        let oracle = gl_integrate(|x| e(x, a) * e(x, b), -1.0, 2.0);
        assert_relative_eq!(gauss_product_integral(a, b, l, -1.0, 2.0), oracle, max_relative = 1e-12);
    }

    #[test]
    fn triple_integral_matches_quadrature() {
        let coords = [-0.4, 0.9];
        let l = 0.6;
        let e = |x: f64, c: f64| (-((x - c) / l).powi(2)).exp();
        let t = triple_integrals(&coords, l, -1.0, 2.0);
        let rule = GaussLegendre::new(NonZeroUsize::new(30).unwrap());
        let oracle = gl_integrate(
            |x| {
                let inner: f64 = (0..60)
                    .map(|p| {
                        let h = 3.0 / 60.0;
                        rule.integrate(-1.0 + h * p as f64, -1.0 + h * (p + 1) as f64, |y| {
                            e(x, y) * e(y, coords[1])
                        })
                    })
                    .sum();
                e(x, coords[0]) * inner
            },
            -1.0,
            2.0,
        );
        assert_relative_eq!(t[(0, 1)], oracle, max_relative = 1e-8);
    }

    #[test]
    fn constant_integrand() {
        let d = Domain::new(0.0, 1.0).unwrap();
        let (est, trace) = warped_bq_integrate(|_| 1.0, &d, 5, 0).unwrap();
        assert!((0.99..=1.01).contains(&est.mean), "mean {}", est.mean);
        assert_eq!(trace.len(), 3);
    }

    #[test]
    fn gaussian_mass() {
        let d = Domain::new(-5.0, 5.0).unwrap();
        let f = |x: f64| (-x * x / 2.0).exp() / (2.0 * PI).sqrt();
        let (est, trace) = warped_bq_integrate(f, &d, 15, 1).unwrap();
        assert!((est.mean - 0.999_999_4).abs() < 0.01, "mean {}", est.mean);
        assert!(trace.iter().all(|t| t.estimate > 0.0));
    }

    #[test]
    fn non_positive_values_abort() {
        let d = Domain::new(-1.0, 1.0).unwrap();
        let r = warped_bq_integrate(|x| x, &d, 5, 0);
        assert!(matches!(r, Err(Error::NonPositiveEvaluation { .. })));
    }

    #[test]
    fn deterministic_in_seed() {
        let b = BoxDomain::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let f = |x: &[f64]| (-(x[0] * x[0] + 2.0 * x[1] * x[1])).exp();
        let r1 = warped_bq_integrate_box(f, &b, 12, 4, &WarpedOptions::default()).unwrap();
        let r2 = warped_bq_integrate_box(f, &b, 12, 4, &WarpedOptions::default()).unwrap();
        assert_eq!(r1.trace, r2.trace);
    }

    #[test]
    fn two_dimensional_gaussian() {
        let b = BoxDomain::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let f = |x: &[f64]| (-(x[0] * x[0] + x[1] * x[1]) / 0.5).exp();
        // ∫ exp(-x²/0.5) over [-1,1] = sqrt(0.5π) erf(sqrt 2)
        let one = (0.5 * PI).sqrt() * libm::erf(2f64.sqrt());
        let r = warped_bq_integrate_box(f, &b, 30, 2, &WarpedOptions::default()).unwrap();
        assert_relative_eq!(r.estimate.mean, one * one, max_relative = 0.02);
        assert!(r.estimate.std() > 0.0);
    }
}
