//! Bayesian quadrature on an interval.
//!
//! With a GP prior on the integrand, the integral `F = ∫ f` is Gaussian a
//! posteriori with mean `zᵀK⁻¹y` and variance `Z₀ − zᵀK⁻¹z`, where
//! `zᵢ = ∫ k(x, xᵢ) dx` and `Z₀ = ∬ k(x, x') dx dx'`. Both embeddings are
//! available in closed form for the two kernel families in [`crate::gp`].

use rayon::prelude::*;
use std::f64::consts::PI;

use crate::error::{ensure_finite, Error, Result};
use crate::gp::{validate_nodes, Domain, GramFactor, Kernel, KernelParams, DUPLICATE_TOL};

/// Number of candidates in the default active-selection scan.
pub const DEFAULT_CANDIDATES: usize = 512;

/// Slack (relative to `Z₀`) below zero tolerated before a posterior
/// variance is treated as a numerical failure rather than clamped.
pub const VARIANCE_CLAMP_TOL: f64 = 1e-8;

const TIE_TOL: f64 = 1e-12;

/// Composite trapezoid rule `Σ ½ (f(xᵢ) + f(xᵢ₋₁)) (xᵢ − xᵢ₋₁)`.
pub fn trapezoid(nodes: &[f64], values: &[f64]) -> Result<f64> {
    if nodes.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: nodes.len(),
            got: values.len(),
        });
    }
    if nodes.len() < 2 {
        return Err(Error::InvalidArgument(
            "trapezoid rule needs at least 2 nodes".into(),
        ));
    }
    ensure_finite(nodes)?;
    ensure_finite(values)?;
    let mut sum = 0.0;
    for i in 1..nodes.len() {
        let h = nodes[i] - nodes[i - 1];
        if h <= 0.0 {
            return Err(Error::UnsortedNodes);
        }
        sum += 0.5 * (values[i] + values[i - 1]) * h;
    }
    Ok(sum)
}

/// Closed-form integrals of a kernel over its domain.
#[derive(Debug, Clone, Copy)]
pub struct KernelEmbedding {
    kernel: Kernel,
}

impl KernelEmbedding {
    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// `z(x) = ∫ k(t, x) dt` over the domain.
    pub fn z(&self, x: f64) -> f64 {
        let d = self.kernel.domain();
        let (lo, hi, w) = (d.lo(), d.hi(), d.width());
        match self.kernel.params() {
            KernelParams::LinearSpline { scale: c, slope: b } => {
                let (l, r) = (x - lo, hi - x);
                c * (1.0 + b) * w - c * b / 6.0 * (l * l + r * r)
            }
            KernelParams::ExpQuadratic {
                output_scale: theta,
                length_scale: lambda,
            } => {
                theta * theta * lambda * PI.sqrt() / 2.0
                    * (libm::erf((hi - x) / lambda) - libm::erf((lo - x) / lambda))
            }
        }
    }

    /// `Z₀ = ∬ k(t, t') dt dt'`, the prior variance of the integral.
    pub fn z0(&self) -> f64 {
        let w = self.kernel.domain().width();
        match self.kernel.params() {
            KernelParams::LinearSpline { scale: c, slope: b } => {
                c * (1.0 + b) * w * w - c * b * w * w * w / 9.0
            }
            KernelParams::ExpQuadratic {
                output_scale: theta,
                length_scale: lambda,
            } => {
                let r = w / lambda;
                theta
                    * theta
                    * (w * lambda * PI.sqrt() * libm::erf(r) + lambda * lambda * (-r * r).exp_m1())
            }
        }
    }
}

pub fn kernel_embeddings(kernel: &Kernel) -> KernelEmbedding {
    KernelEmbedding { kernel: *kernel }
}

/// Posterior over an integral.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureEstimate {
    pub mean: f64,
    /// Non-negative; see `clamped`.
    pub variance: f64,
    pub n_evals: usize,
    pub kernel: Kernel,
    /// Set when a slightly negative variance (round-off) was clamped to 0.
    pub clamped: bool,
}

impl QuadratureEstimate {
    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Nodes, values and cached embeddings for one kernel.
#[derive(Debug, Clone)]
pub struct BqState {
    kernel: Kernel,
    embedding: KernelEmbedding,
    nodes: Vec<f64>,
    values: Vec<f64>,
    z: Vec<f64>,
    z0: f64,
}

impl BqState {
    pub fn new(kernel: Kernel) -> Self {
        let embedding = kernel_embeddings(&kernel);
        Self {
            kernel,
            embedding,
            nodes: Vec::new(),
            values: Vec::new(),
            z: Vec::new(),
            z0: embedding.z0(),
        }
    }

    pub fn with_data(kernel: Kernel, nodes: &[f64], values: &[f64]) -> Result<Self> {
        if nodes.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: nodes.len(),
                got: values.len(),
            });
        }
        ensure_finite(values)?;
        validate_nodes(&kernel.domain(), nodes)?;
        let mut state = Self::new(kernel);
        state.nodes = nodes.to_vec();
        state.values = values.to_vec();
        state.z = nodes.iter().map(|&x| state.embedding.z(x)).collect();
        Ok(state)
    }

    /// Appends one evaluation.
    pub fn add(&mut self, x: f64, y: f64) -> Result<()> {
        self.kernel.domain().check(x)?;
        if !y.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        let tol = DUPLICATE_TOL * self.kernel.domain().width();
        if self.nodes.iter().any(|&n| (n - x).abs() <= tol) {
            return Err(Error::DuplicateNode(x));
        }
        self.nodes.push(x);
        self.values.push(y);
        self.z.push(self.embedding.z(x));
        Ok(())
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn embedding(&self) -> &KernelEmbedding {
        &self.embedding
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn z0(&self) -> f64 {
        self.z0
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn posterior(&self) -> Result<QuadratureEstimate> {
        bq_posterior(self)
    }
}

fn clamp_variance(raw: f64, z0: f64) -> Result<(f64, bool)> {
    if raw >= 0.0 {
        Ok((raw, false))
    } else if raw >= -VARIANCE_CLAMP_TOL * z0 {
        Ok((0.0, true))
    } else {
        Err(Error::Numerical(format!(
            "integral posterior variance {raw:e} is negative beyond round-off (Z0 = {z0:e})"
        )))
    }
}

/// Posterior mean and variance of the integral given the state.
///
/// With no nodes this is the prior: mean 0, variance `Z₀`.
pub fn bq_posterior(state: &BqState) -> Result<QuadratureEstimate> {
    if state.is_empty() {
        return Ok(QuadratureEstimate {
            mean: 0.0,
            variance: state.z0,
            n_evals: 0,
            kernel: state.kernel,
            clamped: false,
        });
    }
    let gram = state.kernel.gram(&state.nodes);
    let factor = GramFactor::new(&gram)?;
    let z = nalgebra::DVector::from_column_slice(&state.z);
    let y = nalgebra::DVector::from_column_slice(&state.values);
    let mean = z.dot(&factor.solve_refined(&gram, &y));
    let u = factor.solve_lower(&z);
    let (variance, clamped) = clamp_variance(state.z0 - u.norm_squared(), state.z0)?;
    Ok(QuadratureEstimate {
        mean,
        variance,
        n_evals: state.len(),
        kernel: state.kernel,
        clamped,
    })
}

/// `n` equidistant nodes including both endpoints.
pub fn select_nodes_grid(domain: &Domain, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "an endpoint grid needs at least 2 nodes, got {n}"
        )));
    }
    Ok(domain.linspace(n))
}

/// The default scan: 512 equidistant points minus those already in the state.
pub fn default_candidates(state: &BqState) -> Vec<f64> {
    let domain = state.kernel.domain();
    let tol = DUPLICATE_TOL * domain.width();
    domain
        .linspace(DEFAULT_CANDIDATES)
        .into_iter()
        .filter(|c| state.nodes.iter().all(|n| (n - c).abs() > tol))
        .collect()
}

/// Integral posterior variance after hypothetically adding each candidate.
///
/// Uses the rank-one update of the Cholesky factor, so no integrand values
/// are needed. Candidates that coincide with an existing node leave the
/// variance unchanged.
pub fn candidate_variances(state: &BqState, candidates: &[f64]) -> Result<Vec<f64>> {
    let domain = state.kernel.domain();
    for &c in candidates {
        domain.check(c)?;
    }
    let z0 = state.z0;
    let kss = state.kernel.prior_variance();
    let emb = state.embedding;
    if state.is_empty() {
        return Ok(candidates
            .par_iter()
            .map(|&c| {
                let zc = emb.z(c);
                z0 - zc * zc / kss
            })
            .collect());
    }
    let factor = GramFactor::new(&state.kernel.gram(&state.nodes))?;
    let u = factor.solve_lower(&nalgebra::DVector::from_column_slice(&state.z));
    let base = z0 - u.norm_squared();
    let nodes = &state.nodes;
    let kernel = state.kernel;
    Ok(candidates
        .par_iter()
        .map(|&c| {
            let kc = nalgebra::DVector::from_iterator(nodes.len(), nodes.iter().map(|&n| kernel.cov(c, n)));
            let v = factor.solve_lower(&kc);
            let denom = kss - v.norm_squared();
            if denom <= f64::EPSILON * kss {
                return base;
            }
            let gain = emb.z(c) - v.dot(&u);
            base - gain * gain / denom
        })
        .collect())
}

/// Picks the candidate minimizing the integral variance after adding it.
///
/// Values within `1e-12·Z₀` of each other count as ties; the smallest
/// abscissa wins. The scan is parallel but the reduction is sequential in
/// abscissa order, so the result does not depend on thread count.
pub fn select_node_active(state: &BqState, candidates: &[f64]) -> Result<f64> {
    let tol = DUPLICATE_TOL * state.kernel.domain().width();
    let mut pool: Vec<f64> = candidates
        .iter()
        .copied()
        .filter(|c| state.nodes.iter().all(|n| (n - c).abs() > tol))
        .collect();
    if pool.is_empty() {
        return Err(Error::NoCandidates);
    }
    ensure_finite(&pool)?;
    pool.sort_by(|a, b| a.total_cmp(b));
    let vars = candidate_variances(state, &pool)?;
    let slack = TIE_TOL * state.z0;
    let mut best = 0;
    for i in 1..pool.len() {
        if vars[i] < vars[best] - slack {
            best = i;
        }
    }
    Ok(pool[best])
}

/// Evaluates `f` on an endpoint grid and returns the BQ posterior.
pub fn bq_integrate_grid<F: Fn(f64) -> f64>(kernel: &Kernel, f: F, n: usize) -> Result<QuadratureEstimate> {
    let nodes = select_nodes_grid(&kernel.domain(), n)?;
    let values: Vec<f64> = nodes.iter().map(|&x| f(x)).collect();
    BqState::with_data(*kernel, &nodes, &values)?.posterior()
}

/// Actively selects `budget` nodes from the default scan, evaluating `f`
/// after each choice. Returns one estimate per evaluation count.
pub fn bq_integrate_active<F: Fn(f64) -> f64>(
    kernel: &Kernel,
    f: F,
    budget: usize,
) -> Result<Vec<QuadratureEstimate>> {
    let mut state = BqState::new(*kernel);
    let mut trace = Vec::with_capacity(budget);
    for _ in 0..budget {
        let x = select_node_active(&state, &default_candidates(&state))?;
        state.add(x, f(x))?;
        trace.push(state.posterior()?);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::sample_path;
    use approx::assert_relative_eq;
    use gauss_quad::legendre::GaussLegendre;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::num::NonZeroUsize;

    fn sym() -> Domain {
        Domain::new(-3.0, 3.0).unwrap()
    }

    /// Composite Gauss–Legendre on `panels` equal pieces of `[a, b]`.
    fn gl<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
        let rule = GaussLegendre::new(NonZeroUsize::new(20).unwrap());
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|p| {
                let (lo, hi) = (a + h * p as f64, a + h * (p + 1) as f64);
                rule.integrate(lo, hi, &f)
            })
            .sum()
    }

    /// Double integral of the kernel, splitting the inner integral at the
    /// diagonal so the kink of the spline kernel sits on a panel boundary.
    fn z0_oracle(k: &Kernel) -> f64 {
        let d = k.domain();
        gl(
            |x| gl(|t| k.cov(x, t), d.lo(), x, 32) + gl(|t| k.cov(x, t), x, d.hi(), 32),
            d.lo(),
            d.hi(),
            32,
        )
    }

    #[test]
    fn trapezoid_examples() {
        let nodes = [-3.0, -1.2, 0.5, 3.0];
        assert_eq!(trapezoid(&nodes, &[1.0; 4]).unwrap(), 6.0);
        let sym_nodes = [-3.0, -1.0, 1.0, 3.0];
        assert_eq!(trapezoid(&sym_nodes, &sym_nodes).unwrap(), 0.0);
        let sq: Vec<f64> = sym_nodes.iter().map(|x| x * x).collect();
        assert_eq!(trapezoid(&sym_nodes, &sq).unwrap(), 22.0);
        assert_eq!(trapezoid(&[1.0, 0.0], &[1.0, 1.0]), Err(Error::UnsortedNodes));
    }

    #[test]
    fn spline_z0_matches_hand_value_and_oracle() {
        let k = Kernel::linear_spline(1.0, 1.0, sym()).unwrap();
        let z0 = kernel_embeddings(&k).z0();
        assert_relative_eq!(z0, 48.0, max_relative = 1e-14);
        assert_relative_eq!(z0_oracle(&k), 48.0, max_relative = 1e-10);
        // the value c(1 + b/3) misses the W² = 36 area factor
        assert_relative_eq!(z0 / (1.0 * (1.0 + 1.0 / 3.0)), 36.0, max_relative = 1e-14);
    }

    #[test]
    fn eq_z0_matches_oracle() {
        let k = Kernel::exp_quadratic(1.0, 1.0, sym()).unwrap();
        assert_relative_eq!(kernel_embeddings(&k).z0(), z0_oracle(&k), max_relative = 1e-9);
    }

    #[test]
    fn eq_z0_long_length_scale_is_area() {
        let k = Kernel::exp_quadratic(1.7, 600.0, sym()).unwrap();
        let z0 = kernel_embeddings(&k).z0();
        assert_relative_eq!(z0, 1.7 * 1.7 * 36.0, max_relative = 0.01);
    }

    #[test]
    fn z_matches_oracle() {
        let d = Domain::new(-1.0, 2.5).unwrap();
        for k in [
            Kernel::linear_spline(0.7, 1.3, d).unwrap(),
            Kernel::exp_quadratic(1.2, 0.4, d).unwrap(),
        ] {
            let emb = kernel_embeddings(&k);
            for &x in &[-1.0, -0.3, 0.9, 2.5] {
                let oracle = gl(|t| k.cov(t, x), d.lo(), x, 16) + gl(|t| k.cov(t, x), x, d.hi(), 16);
                assert_relative_eq!(emb.z(x), oracle, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn random_params_z0_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let c = rng.random_range(0.1..5.0);
            let b = rng.random_range(0.1..5.0);
            let k = Kernel::linear_spline(c, b, sym()).unwrap();
            assert_relative_eq!(kernel_embeddings(&k).z0(), z0_oracle(&k), max_relative = 1e-6);
        }
    }

    #[test]
    fn empty_state_is_prior() {
        let k = Kernel::linear_spline(1.0, 1.0, sym()).unwrap();
        let est = bq_posterior(&BqState::new(k)).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.variance, 48.0);
        assert_eq!(est.n_evals, 0);
    }

    #[test]
    fn spline_bq_equals_trapezoid_on_grid() {
        let k = Kernel::linear_spline(1.0, 1.0, sym()).unwrap();
        let nodes = select_nodes_grid(&sym(), 17).unwrap();
        let values: Vec<f64> = nodes.iter().map(|x| (x * 1.3).cos() + 0.1 * x).collect();
        let est = BqState::with_data(k, &nodes, &values).unwrap().posterior().unwrap();
        assert_relative_eq!(est.mean, trapezoid(&nodes, &values).unwrap(), max_relative = 1e-9);
    }

    fn paper_integrand(x: f64) -> f64 {
        (-(3.0 * x).sin().powi(2) - x * x).exp()
    }

    #[test]
    fn eq_bq_beats_trapezoid_on_smooth_integrand() {
        let fine = sym().linspace(1_000_001);
        let fv: Vec<f64> = fine.iter().map(|&x| paper_integrand(x)).collect();
        let truth = trapezoid(&fine, &fv).unwrap();
        let n = 16;
        let nodes = select_nodes_grid(&sym(), n).unwrap();
        let vals: Vec<f64> = nodes.iter().map(|&x| paper_integrand(x)).collect();
        let trap = trapezoid(&nodes, &vals).unwrap();
        let k = Kernel::exp_quadratic(1.0, 0.5, sym()).unwrap();
        let est = bq_integrate_grid(&k, paper_integrand, n).unwrap();
        assert!((est.mean - truth).abs() < (trap - truth).abs());
    }

    #[test]
    fn grid_examples() {
        assert_eq!(select_nodes_grid(&sym(), 2).unwrap(), vec![-3.0, 3.0]);
        assert_eq!(select_nodes_grid(&sym(), 4).unwrap(), vec![-3.0, -1.0, 1.0, 3.0]);
        assert!(select_nodes_grid(&sym(), 1).is_err());
    }

    #[test]
    fn grid_beats_random_endpoint_designs() {
        let k = Kernel::linear_spline(1.0, 1.0, sym()).unwrap();
        let grid = select_nodes_grid(&sym(), 5).unwrap();
        let grid_var = BqState::with_data(k, &grid, &[0.0; 5]).unwrap().posterior().unwrap().variance;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let mut nodes = vec![-3.0, 3.0];
            nodes.extend((0..3).map(|_| rng.random_range(-3.0..3.0)));
            let var = BqState::with_data(k, &nodes, &[0.0; 5]).unwrap().posterior().unwrap().variance;
            assert!(grid_var <= var + 1e-12);
        }
    }

    #[test]
    fn interior_equidistant_design_beats_endpoint_grid() {
        // The kernel is stationary, so pulling the grid inward from the
        // endpoints lowers the integral variance.
        let k = Kernel::linear_spline(1.0, 1.0, sym()).unwrap();
        let grid = select_nodes_grid(&sym(), 5).unwrap();
        let inner: Vec<f64> = (0..5).map(|i| -2.354 + 1.177 * i as f64).collect();
        let v = |n: &[f64]| BqState::with_data(k, n, &[0.0; 5]).unwrap().posterior().unwrap().variance;
        assert!(v(&inner) < 0.7 * v(&grid));
    }

    /// Brute force: refit the posterior with each candidate appended.
    fn exhaustive_best(state: &BqState, candidates: &[f64]) -> f64 {
        let mut best = (f64::INFINITY, f64::NAN);
        let mut sorted = candidates.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let z0 = state.z0();
        for &c in &sorted {
            let mut s = state.clone();
            s.add(c, 0.0).unwrap();
            let v = s.posterior().unwrap().variance;
            if v < best.0 - 1e-12 * z0 {
                best = (v, c);
            }
        }
        best.1
    }

    #[test]
    fn active_selection_empty_state_picks_midpoint() {
        let k = Kernel::linear_spline(1.0, 1.0, sym()).unwrap();
        let state = BqState::new(k);
        let cands = default_candidates(&state);
        let x = select_node_active(&state, &cands).unwrap();
        assert_eq!(x, exhaustive_best(&state, &cands));
        // 512 equidistant points straddle 0; the left neighbour wins the tie
        assert!(x < 0.0 && x > -6.0 / 511.0);

        let odd: Vec<f64> = sym().linspace(11);
        assert_eq!(select_node_active(&state, &odd).unwrap(), 0.0);
    }

    #[test]
    fn active_selection_second_node_goes_left() {
        let k = Kernel::linear_spline(1.0, 1.0, sym()).unwrap();
        let mut state = BqState::new(k);
        state.add(0.0, 1.0).unwrap();
        let cands = default_candidates(&state);
        let x = select_node_active(&state, &cands).unwrap();
        assert_eq!(x, exhaustive_best(&state, &cands));
        assert!(x < 0.0);
    }

    #[test]
    fn active_selection_is_argmin() {
        let k = Kernel::exp_quadratic(1.0, 0.8, sym()).unwrap();
        let mut state = BqState::new(k);
        for x in [-2.0, 0.3, 1.1] {
            state.add(x, x.sin()).unwrap();
        }
        let cands = default_candidates(&state);
        let x = select_node_active(&state, &cands).unwrap();
        let vars = candidate_variances(&state, &cands).unwrap();
        let chosen = vars[cands.iter().position(|&c| c == x).unwrap()];
        assert!(vars.iter().all(|&v| chosen <= v + 1e-12 * state.z0()));
        assert_eq!(x, exhaustive_best(&state, &cands));
    }

    #[test]
    fn no_candidates_error() {
        let k = Kernel::linear_spline(1.0, 1.0, sym()).unwrap();
        let mut state = BqState::new(k);
        state.add(1.0, 0.0).unwrap();
        assert_eq!(select_node_active(&state, &[]), Err(Error::NoCandidates));
        assert_eq!(select_node_active(&state, &[1.0]), Err(Error::NoCandidates));
    }

    #[test]
    fn active_integration_variance_decreases() {
        let k = Kernel::linear_spline(1.0, 1.0, sym()).unwrap();
        let trace = bq_integrate_active(&k, paper_integrand, 8).unwrap();
        for w in trace.windows(2) {
            assert!(w[1].variance <= w[0].variance + 1e-10);
        }
    }

    #[test]
    fn spline_calibration_smoke() {
        // a few spline draws: the standardized error should be O(1)
        let k = Kernel::linear_spline(1.0, 1.0, sym()).unwrap();
        let fine = sym().linspace(901);
        let nodes = select_nodes_grid(&sym(), 10).unwrap();
        for seed in 0..5 {
            let path = sample_path(&k, &fine, seed).unwrap();
            let truth = trapezoid(&fine, &path).unwrap();
            let vals: Vec<f64> = nodes
                .iter()
                .map(|&x| {
                    let i = ((x + 3.0) / 6.0 * 900.0).round() as usize;
                    path[i]
                })
                .collect();
            let est = BqState::with_data(k, &nodes, &vals).unwrap().posterior().unwrap();
            assert!(((truth - est.mean) / est.std()).abs() < 6.0);
        }
    }

    proptest! {
        #[test]
        fn trapezoid_equivalence(
            c in 0.1f64..5.0,
            b in 0.1f64..5.0,
            n in 2usize..=200,
            a1 in -2.0f64..2.0,
            a2 in 0.2f64..3.0,
            a3 in -1.0f64..1.0,
        ) {
            let k = Kernel::linear_spline(c, b, sym()).unwrap();
            let nodes = select_nodes_grid(&sym(), n).unwrap();
            let f = |x: f64| a1 + (a2 * x).sin() + a3 * x * x;
            let values: Vec<f64> = nodes.iter().map(|&x| f(x)).collect();
            let est = BqState::with_data(k, &nodes, &values).unwrap().posterior().unwrap();
            let trap = trapezoid(&nodes, &values).unwrap();
            prop_assert!((est.mean - trap).abs() <= 1e-9 * trap.abs().max(1e-3));
        }

        #[test]
        fn variance_monotone_and_scale_equivariant(
            spline in any::<bool>(),
            picks in prop::collection::btree_set(0usize..=20, 1..10),
            extra in 0usize..=20,
            alpha in -5.0f64..5.0,
        ) {
            let k = if spline {
                Kernel::linear_spline(1.0, 1.0, sym()).unwrap()
            } else {
                Kernel::exp_quadratic(1.0, 0.7, sym()).unwrap()
            };
            let nodes: Vec<f64> = picks.iter().map(|&i| -3.0 + 0.3 * i as f64).collect();
            let values: Vec<f64> = nodes.iter().map(|x| x.cos()).collect();
            let s = BqState::with_data(k, &nodes, &values).unwrap();
            let before = s.posterior().unwrap();
            let x = -3.0 + 0.3 * extra as f64;
            if !picks.contains(&extra) {
                let mut s2 = s.clone();
                s2.add(x, 0.0).unwrap();
                prop_assert!(s2.posterior().unwrap().variance <= before.variance + 1e-10);
            }
            let scaled: Vec<f64> = values.iter().map(|v| alpha * v).collect();
            let after = BqState::with_data(k, &nodes, &scaled).unwrap().posterior().unwrap();
            prop_assert!((after.mean - alpha * before.mean).abs() <= 1e-10 * (1.0 + (alpha * before.mean).abs()));
            prop_assert_eq!(after.variance, before.variance);
        }
    }
}
