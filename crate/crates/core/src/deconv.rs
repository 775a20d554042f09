//! Sequences of related SPD systems from slowly drifting 1-D blurs.
//!
//! Each problem is the regularized normal equation `(XₜᵀXₜ + εI) x = bₜ`
//! where `Xₜ` convolves with a normalized Gaussian blob whose centre and
//! width follow a seeded random walk.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cold_start_sequence, probe_spd, warm_start_sequence, DenseOperator, LinearOperator, PROBE_LIMIT};

const WIDTH_RANGE: (f64, f64) = (0.6, 3.0);
const SHIFT_RANGE: (f64, f64) = (-1.5, 1.5);
const MAX_DRIFT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvolutionConfig {
    pub signal_len: usize,
    pub length: usize,
    /// Bound on `‖Aₜ₊₁ − Aₜ‖_F / ‖Aₜ‖_F`.
    pub drift: f64,
    /// Standard deviation of the white observation noise.
    pub noise: f64,
    pub kernel_radius: usize,
    pub initial_width: f64,
}

impl Default for ConvolutionConfig {
    fn default() -> Self {
        Self {
            signal_len: 32,
            length: 20,
            drift: 0.02,
            noise: 0.01,
            kernel_radius: 4,
            initial_width: 1.5,
        }
    }
}

impl ConvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::InvalidArgument("sequence length must be at least 2".into()));
        }
        if self.signal_len < 2 {
            return Err(Error::InvalidArgument("signal length must be at least 2".into()));
        }
        if !(0.0..=MAX_DRIFT).contains(&self.drift) {
            return Err(Error::InvalidArgument(format!(
                "drift must lie in [0, {MAX_DRIFT}], got {}",
                self.drift
            )));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::InvalidArgument("noise level must be finite and non-negative".into()));
        }
        if !(WIDTH_RANGE.0..=WIDTH_RANGE.1).contains(&self.initial_width) {
            return Err(Error::InvalidArgument(format!(
                "initial width must lie in [{}, {}]",
                WIDTH_RANGE.0, WIDTH_RANGE.1
            )));
        }
        Ok(())
    }
}

/// Blob parameters of one blur.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlurParams {
    pub shift: f64,
    pub width: f64,
}

impl BlurParams {
    fn clamped(self) -> Self {
        Self {
            shift: self.shift.clamp(SHIFT_RANGE.0, SHIFT_RANGE.1),
            width: self.width.clamp(WIDTH_RANGE.0, WIDTH_RANGE.1),
        }
    }
}

/// Taps `f[k]`, `k = −R..=R`, summing to one.
pub fn blur_taps(params: BlurParams, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|k| {
            let d = k as f64 - params.shift;
            (-0.5 * d * d / (params.width * params.width)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Convolution matrix with zero boundary: `(Xx)ᵢ = Σₖ f[k] x[i−k]`.
pub fn convolution_matrix(taps: &[f64], n: usize) -> DMatrix<f64> {
    let r = (taps.len() / 2) as isize;
    DMatrix::from_fn(n, n, |i, j| {
        let k = i as isize - j as isize;
        if k.abs() <= r {
            taps[(k + r) as usize]
        } else {
            0.0
        }
    })
}

fn normal_matrix(x: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let mut a = x.tr_mul(x);
    for i in 0..a.nrows() {
        a[(i, i)] += eps;
    }
    (&a + a.transpose()) * 0.5
}

/// Piecewise smooth test signal: a plateau plus seeded bumps.
pub fn ground_truth(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let bumps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let z: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
            (0.5 + 0.5 * (0.5 * z[0]).tanh(), 0.05 + 0.02 * z[1].abs(), z[2])
        })
        .collect();
    DVector::from_fn(n, |i, _| {
        let t = (i as f64 + 0.5) / n as f64;
        let plateau = if (0.3..0.6).contains(&t) { 1.0 } else { 0.0 };
        plateau
            + bumps
                .iter()
                .map(|(c, w, a)| a * (-0.5 * ((t - c) / w).powi(2)).exp())
                .sum::<f64>()
    })
}

#[derive(Debug, Clone)]
pub struct ConvolutionSequence {
    pub problems: Vec<(DenseOperator, DVector<f64>)>,
    /// Solution of every noise-free system.
    pub reference: DVector<f64>,
    pub epsilon: f64,
    pub params: Vec<BlurParams>,
    /// Measured `‖Aₜ₊₁ − Aₜ‖_F / ‖Aₜ‖_F` per step.
    pub drifts: Vec<f64>,
}

fn relative_drift(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (b - a).norm() / a.norm()
}

/// Builds `length` systems `Aₜ = XₜᵀXₜ + εI`, `bₜ = Aₜ x + Xₜᵀ nₜ`.
///
/// `ε = 10⁻³ · trace(X₀ᵀX₀) / n` is fixed over the sequence. Each step
/// draws a random direction in `(shift, width)` and takes the longest
/// step along it, found by bisection, whose measured relative drift
/// stays within the configured bound.
pub fn generate_sequence(config: &ConvolutionConfig, seed: u64) -> Result<ConvolutionSequence> {
    config.validate()?;
    let n = config.signal_len;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference = ground_truth(n, &mut rng);

    let mut params = BlurParams {
        shift: 0.0,
        width: config.initial_width,
    };
    let build = |p: BlurParams| convolution_matrix(&blur_taps(p, config.kernel_radius), n);
    let x0 = build(params);
    let epsilon = 1e-3 * x0.tr_mul(&x0).trace() / n as f64;

    let mut xs = vec![x0];
    let mut ops = vec![normal_matrix(&xs[0], epsilon)];
    let mut all_params = vec![params];
    let mut drifts = Vec::with_capacity(config.length - 1);
    for _ in 1..config.length {
        let current = ops.last().expect("sequence is non-empty").clone();
        let (ds, dw): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
        let norm = ds.hypot(dw).max(f64::MIN_POSITIVE);
        let dir = (ds / norm, dw / norm);
        let at = |s: f64| {
            BlurParams {
                shift: params.shift + s * dir.0,
                width: params.width + s * dir.1,
            }
            .clamped()
        };
        let drift_at = |s: f64| {
            let x = build(at(s));
            relative_drift(&current, &normal_matrix(&x, epsilon))
        };
        let mut step = 0.0;
        if config.drift > 0.0 {
            let mut hi = 1.0;
            while drift_at(hi) <= config.drift && hi < 8.0 {
                hi *= 2.0;
            }
            let mut lo = 0.0;
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if drift_at(mid) <= config.drift {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            step = lo;
        }
        params = at(step);
        let x = build(params);
        let a = normal_matrix(&x, epsilon);
        drifts.push(relative_drift(&current, &a));
        xs.push(x);
        ops.push(a);
        all_params.push(params);
    }

    let mut problems = Vec::with_capacity(config.length);
    for (x, a) in xs.iter().zip(ops) {
        let mut rhs = &a * &reference;
        if config.noise > 0.0 {
            let noise = DVector::from_fn(n, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                config.noise * z
            });
            rhs += x.tr_mul(&noise);
        }
        let op = DenseOperator::new_unprobed(a)?;
        if n <= PROBE_LIMIT {
            probe_spd(&op, seed)?;
        }
        problems.push((op, rhs));
    }
    Ok(ConvolutionSequence {
        problems,
        reference,
        epsilon,
        params: all_params,
        drifts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Cold,
    Warm,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Cold => "cold",
            Variant::Warm => "warm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecycleRow {
    pub variant: Variant,
    /// One-based position in the sequence.
    pub problem_index: usize,
    pub iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub matvecs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecyclingReport {
    pub rank: usize,
    pub tol: f64,
    pub rows: Vec<RecycleRow>,
}

impl RecyclingReport {
    pub fn variant(&self, v: Variant) -> impl Iterator<Item = &RecycleRow> {
        self.rows.iter().filter(move |r| r.variant == v)
    }

    pub fn total_matvecs(&self, v: Variant) -> usize {
        self.variant(v).map(|r| r.matvecs).sum()
    }

    /// Mean initial residual over one-based problems `from..=to`.
    pub fn mean_initial_residual(&self, v: Variant, from: usize, to: usize) -> f64 {
        let sel: Vec<f64> = self
            .variant(v)
            .filter(|r| (from..=to).contains(&r.problem_index))
            .map(|r| r.initial_residual)
            .collect();
        sel.iter().sum::<f64>() / sel.len() as f64
    }

    pub fn iterations(&self, v: Variant) -> Vec<usize> {
        self.variant(v).map(|r| r.iterations).collect()
    }
}

/// Solves the sequence from scratch and with recycled beliefs of rank
/// `rank`; the two runs execute concurrently.
pub fn run_recycling_benchmark<O: LinearOperator + Send>(
    problems: &[(O, DVector<f64>)],
    rank: usize,
    tol: f64,
) -> Result<RecyclingReport> {
    if problems.is_empty() {
        return Err(Error::InvalidArgument("empty problem sequence".into()));
    }
    let (cold, warm) = rayon::join(
        || cold_start_sequence(problems, tol),
        || warm_start_sequence(problems, rank, tol),
    );
    let mut rows = Vec::with_capacity(2 * problems.len());
    for (variant, reports) in [(Variant::Cold, cold?), (Variant::Warm, warm?)] {
        for (i, r) in reports.iter().enumerate() {
            rows.push(RecycleRow {
                variant,
                problem_index: i + 1,
                iterations: r.iterations,
                initial_residual: r.initial_residual(),
                final_residual: r.final_residual(),
                matvecs: r.matvecs,
            });
        }
    }
    Ok(RecyclingReport { rank, tol, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::default_truncation_rank;

    fn cfg(drift: f64) -> ConvolutionConfig {
        ConvolutionConfig {
            drift,
            ..Default::default()
        }
    }

    #[test]
    fn zero_drift_gives_identical_operators() {
        let s = generate_sequence(&cfg(0.0), 1).unwrap();
        let a0 = s.problems[0].0.matrix();
        for (a, _) in &s.problems {
            assert_eq!((a.matrix() - a0).norm(), 0.0);
        }
    }

    #[test]
    fn measured_drift_is_bounded() {
        let s = generate_sequence(&cfg(0.02), 2).unwrap();
        assert_eq!(s.problems.len(), 20);
        for w in s.problems.windows(2) {
            let (a, b) = (w[0].0.matrix(), w[1].0.matrix());
            let d = (b - a).norm() / a.norm();
            assert!(d <= 0.02, "drift {d}");
        }
        // the bound is used, not avoided
        assert!(s.drifts.iter().any(|d| *d > 0.01));
    }

    #[test]
    fn noise_free_reference_has_zero_residual() {
        let c = ConvolutionConfig {
            noise: 0.0,
            ..cfg(0.02)
        };
        let s = generate_sequence(&c, 3).unwrap();
        for (a, b) in &s.problems {
            assert_eq!(a.apply(&s.reference) - b, DVector::zeros(b.len()));
        }
    }

    #[test]
    fn taps_normalized_and_matrix_convolves() {
        let taps = blur_taps(BlurParams { shift: 0.3, width: 1.2 }, 3);
        assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let x = convolution_matrix(&taps, 10);
        let e = DVector::from_fn(10, |i, _| if i == 5 { 1.0 } else { 0.0 });
        let y = &x * e;
        for k in -3..=3isize {
            assert_eq!(y[(5 + k) as usize], taps[(k + 3) as usize]);
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate_sequence(&cfg(0.2), 0).is_err());
        assert!(generate_sequence(&ConvolutionConfig { length: 1, ..cfg(0.01) }, 0).is_err());
    }

    #[test]
    fn zero_drift_warm_start_converges_immediately() {
        let s = generate_sequence(&cfg(0.0), 4).unwrap();
        let rep = run_recycling_benchmark(&s.problems, default_truncation_rank(32), 1e-6).unwrap();
        assert!(rep.total_matvecs(Variant::Warm) <= rep.total_matvecs(Variant::Cold));
        for r in rep.variant(Variant::Warm).skip(1) {
            assert!(r.iterations <= 2, "problem {} took {}", r.problem_index, r.iterations);
        }
    }

    #[test]
    fn recycling_lowers_initial_residual() {
        let s = generate_sequence(&cfg(0.02), 5).unwrap();
        let rep = run_recycling_benchmark(&s.problems, default_truncation_rank(32), 1e-6).unwrap();
        let cold = rep.mean_initial_residual(Variant::Cold, 5, 20);
        let warm = rep.mean_initial_residual(Variant::Warm, 5, 20);
        assert!(warm <= cold / 3.0, "warm {warm} cold {cold}");
    }

    #[test]
    fn rank_zero_matches_cold() {
        let s = generate_sequence(&cfg(0.02), 6).unwrap();
        let rep = run_recycling_benchmark(&s.problems, 0, 1e-6).unwrap();
        assert_eq!(rep.iterations(Variant::Cold), rep.iterations(Variant::Warm));
    }

    #[test]
    fn recycling_never_costs_much() {
        for seed in 0..5 {
            for drift in [0.01, 0.03, 0.05] {
                let s = generate_sequence(&cfg(drift), seed).unwrap();
                let rep = run_recycling_benchmark(&s.problems, default_truncation_rank(32), 1e-6).unwrap();
                let (c, w) = (rep.total_matvecs(Variant::Cold), rep.total_matvecs(Variant::Warm));
                assert!(w as f64 <= 1.05 * c as f64, "seed {seed} drift {drift}: {w} vs {c}");
            }
        }
    }

    #[test]
    fn operators_pass_spd_probe() {
        let s = generate_sequence(&cfg(0.05), 7).unwrap();
        for (a, _) in &s.problems {
            probe_spd(a, 11).unwrap();
        }
    }
}
