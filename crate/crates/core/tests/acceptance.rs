//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Every criterion also has a wall-clock budget.

use gauss_quad::GaussLegendre;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::num::NonZeroUsize;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use pnum::bench::evidence::{self, median_evaluations_to_reach, EvidenceConfig, EvidenceMethod};
use pnum::bench::quad::{self, IntegrandSpec, QuadConfig, QuadMethod};
use pnum::bench::recycle::{self, RecycleConfig};
use pnum::deconv::Variant;
use pnum::gp::{kernel_eval, Domain, Kernel};
use pnum::linalg::{classic_cg, solve_probabilistic, DenseOperator, MatrixBelief, SolveOptions};
use pnum::ode::{rk_reference, solve_ivp_filter, FilterConfig, IvProblem, RkMethod, VectorField};
use pnum::quadrature::{kernel_embeddings, select_nodes_grid, trapezoid, BqState};
use pnum::trace::{loglog_slope, unit_coverage};

type Check = fn() -> Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn trapezoid_equivalence() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        // redraw until the spline kernel is positive definite on the domain
        let (domain, c, b, kernel) = loop {
            let lo = rng.random_range(-5.0..5.0);
            let domain = Domain::new(lo, lo + rng.random_range(0.1..10.0)).unwrap();
            let c = rng.random_range(0.05..5.0);
            let b = rng.random_range(0.05..5.0);
            if let Ok(k) = Kernel::linear_spline(c, b, domain) {
                break (domain, c, b, k);
            }
        };
        let n = rng.random_range(2..=200);
        let nodes = select_nodes_grid(&domain, n).unwrap();
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bq = BqState::with_data(kernel, &nodes, &values).unwrap().posterior().unwrap().mean;
        let trap = trapezoid(&nodes, &values).unwrap();
        // relative to the integral of |f| so sign cancellation cannot hide an error
        let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
        let rel = (bq - trap).abs() / trapezoid(&nodes, &abs).unwrap();
        worst = worst.max(rel);
        ensure(rel <= 1e-9, || format!("case {case}: n={n} c={c:.3} b={b:.3} rel={rel:.2e}"))?;
    }
    Ok(format!("100 cases, worst relative deviation {worst:.2e}"))
}

fn spd_systems() -> Vec<(DenseOperator, DVector<f64>)> {
    let sizes = [8, 16, 32, 64];
    (0..50u64)
        .map(|seed| {
            let n = sizes[seed as usize % sizes.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            (DenseOperator::random_spd(n, seed), b)
        })
        .collect()
}

fn cg_equivalence() -> Result<String, String> {
    let opts = SolveOptions {
        tol: 1e-8,
        max_iter: None,
        record_iterates: true,
    };
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for (seed, (a, b)) in spd_systems().iter().enumerate() {
        let n = b.len();
        let cg = classic_cg(a, b, None, &opts).map_err(|e| e.to_string())?;
        let prob = solve_probabilistic(a, b, &MatrixBelief::identity(n), None, &opts).map_err(|e| e.to_string())?;
        ensure(cg.converged && prob.converged, || format!("system {seed}: not converged"))?;
        ensure(cg.iterations == prob.iterations, || {
            format!("system {seed}: {} vs {} iterations", cg.iterations, prob.iterations)
        })?;
        for (k, (xc, xp)) in cg.iterates.iter().zip(&prob.iterates).enumerate() {
            let rel = (xp - xc).norm() / xc.norm();
            worst = worst.max(rel);
            compared += 1;
            ensure(rel <= 1e-6, || format!("system {seed} (n={n}) iterate {}: rel={rel:.2e}", k + 1))?;
        }
    }
    Ok(format!("50 systems, {compared} iterates, worst relative deviation {worst:.2e}"))
}

fn n_step_convergence() -> Result<String, String> {
    let mut most = 0;
    for (seed, (a, b)) in spd_systems().iter().enumerate() {
        let n = b.len();
        let opts = SolveOptions {
            tol: 1e-10,
            max_iter: Some(n),
            record_iterates: false,
        };
        let r = solve_probabilistic(a, b, &MatrixBelief::identity(n), None, &opts).map_err(|e| e.to_string())?;
        let res = r.final_residual() / b.norm();
        ensure(r.converged && res <= 1e-10, || {
            format!("system {seed} (n={n}): relative residual {res:.2e} after {} steps", r.iterations)
        })?;
        most = most.max(r.iterations);
    }
    Ok(format!("50 systems converged, at most {most} iterations"))
}

fn euler_filter_equivalence() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let d = rng.random_range(1..=3);
        let (field, x0) = if case % 2 == 0 {
            let x0 = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
            (VectorField::Linear { rate: rng.random_range(-2.0..1.0) }, x0)
        } else {
            let capacity = rng.random_range(0.5..3.0);
            let x0 = DVector::from_fn(d, |_, _| rng.random_range(0.05..1.0) * capacity);
            (
                VectorField::Logistic {
                    rate: rng.random_range(0.2..2.0),
                    capacity,
                },
                x0,
            )
        };
        let h = [0.1, 0.05, 0.02, 0.01][rng.random_range(0..4)];
        let problem = IvProblem::new(field, x0, 0.0, 2.0).unwrap();
        let euler = rk_reference(&problem, RkMethod::Euler, h).unwrap();
        let filter = solve_ivp_filter(&problem, &FilterConfig::new(1, h)).unwrap();
        ensure(euler.states.len() == filter.states.len(), || format!("case {case}: grid mismatch"))?;
        for (x, s) in euler.states.iter().zip(&filter.states) {
            let m = s.x_mean();
            for i in 0..d {
                let dev = (m[i] - x[i]).abs() / (1.0 + x[i].abs());
                worst = worst.max(dev);
                ensure(dev <= 1e-10, || format!("case {case} at t={}: scaled deviation {dev:.2e}", s.t))?;
            }
        }
    }
    Ok(format!("20 problems, worst scaled deviation {worst:.2e}"))
}

fn convergence_rates() -> Result<String, String> {
    let trap = quad::run(&QuadConfig {
        methods: vec![QuadMethod::Trapezoid],
        budgets: vec![64, 128, 256, 512],
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let n: Vec<f64> = trap.iter().map(|r| r.budget as f64).collect();
    let e: Vec<f64> = trap.iter().map(|r| r.abs_error).collect();
    let trap_slope = loglog_slope(&n, &e).ok_or("trapezoid errors vanished")?;

    let budgets: Vec<usize> = (4..=14).map(|k| 1 << k).collect();
    let smc = quad::run(&QuadConfig {
        methods: vec![QuadMethod::Smc],
        budgets: budgets.clone(),
        seeds: 100,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let rmse: Vec<f64> = budgets
        .iter()
        .map(|&b| {
            let sq: Vec<f64> = smc.iter().filter(|r| r.budget == b).map(|r| r.abs_error.powi(2)).collect();
            (sq.iter().sum::<f64>() / sq.len() as f64).sqrt()
        })
        .collect();
    let n: Vec<f64> = budgets.iter().map(|&b| b as f64).collect();
    let smc_slope = loglog_slope(&n, &rmse).ok_or("SMC errors vanished")?;
    ensure((-2.3..=-1.7).contains(&trap_slope), || format!("trapezoid slope {trap_slope:.3}"))?;
    ensure((-0.6..=-0.4).contains(&smc_slope), || format!("SMC slope {smc_slope:.3}"))?;
    Ok(format!("trapezoid slope {trap_slope:.3}, SMC RMSE slope {smc_slope:.3}"))
}

fn calibration() -> Result<String, String> {
    let rows = quad::run(&QuadConfig {
        integrand: IntegrandSpec::SplineDraw {
            c: 1.0,
            b: 1.0,
            lo: -3.0,
            hi: 3.0,
            grid_points: 901,
        },
        methods: vec![QuadMethod::SplineBq, QuadMethod::EqBq],
        budgets: vec![10],
        seeds: 200,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let coverage = |m: QuadMethod| {
        let z: Vec<f64> = rows
            .iter()
            .filter(|r| r.method == m.label())
            .filter_map(|r| r.standardized_error())
            .collect();
        (unit_coverage(&z), z.len())
    };
    let (spline, ns) = coverage(QuadMethod::SplineBq);
    let (eq, ne) = coverage(QuadMethod::EqBq);
    ensure(ns == 200 && ne == 200, || format!("{ns} spline and {ne} EQ standardized errors"))?;
    ensure((0.55..=0.80).contains(&spline), || format!("spline coverage {spline:.3}"))?;
    ensure(eq < 0.55, || format!("EQ coverage {eq:.3}"))?;
    Ok(format!("spline-bq coverage {spline:.3}, eq-bq coverage {eq:.3}"))
}

fn recycling() -> Result<String, String> {
    let rep = recycle::report(&RecycleConfig::default()).map_err(|e| e.to_string())?;
    let warm = rep.mean_initial_residual(Variant::Warm, 5, 20);
    let cold = rep.mean_initial_residual(Variant::Cold, 5, 20);
    let (mw, mc) = (rep.total_matvecs(Variant::Warm), rep.total_matvecs(Variant::Cold));
    ensure(warm <= cold / 3.0, || format!("warm {warm:.3e} vs cold {cold:.3e}"))?;
    ensure(mw < mc, || format!("matvecs warm {mw} vs cold {mc}"))?;
    Ok(format!(
        "mean initial residual warm {warm:.3e} vs cold {cold:.3e}, matvecs {mw} vs {mc}"
    ))
}

fn evidence_race() -> Result<String, String> {
    let cfg = EvidenceConfig {
        methods: vec![EvidenceMethod::WarpedBq, EvidenceMethod::Smc],
        ..Default::default()
    };
    let rows = evidence::run(&cfg).map_err(|e| e.to_string())?;
    let warped = median_evaluations_to_reach(&rows, EvidenceMethod::WarpedBq, 0.1);
    let smc = median_evaluations_to_reach(&rows, EvidenceMethod::Smc, 0.1);
    ensure(warped.is_finite() && warped <= smc / 5.0, || {
        format!("median evaluations warped {warped} vs SMC {smc}")
    })?;
    Ok(format!("median evaluations to |log error| < 0.1: warped-bq {warped}, smc {smc}"))
}

/// Composite Gauss–Legendre, 32 panels of 20 points.
fn gl<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let rule = GaussLegendre::new(NonZeroUsize::new(20).unwrap());
    let h = (b - a) / 32.0;
    (0..32).map(|p| rule.integrate(a + h * p as f64, a + h * (p + 1) as f64, &f)).sum()
}

fn double_integral_oracle() -> Result<String, String> {
    let domain = Domain::new(-3.0, 3.0).unwrap();
    let w = domain.width();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut min_gap = f64::INFINITY;
    for _ in 0..20 {
        let c = rng.random_range(0.05..5.0);
        let b = rng.random_range(0.05..5.0);
        let k = Kernel::linear_spline(c, b, domain).unwrap();
        let cov = |x: f64, y: f64| kernel_eval(&k, x, y).unwrap();
        // inner integral split at the diagonal, where the kernel has a kink
        let oracle = gl(|x| gl(|t| cov(x, t), -3.0, x) + gl(|t| cov(x, t), x, 3.0), -3.0, 3.0);
        let z0 = kernel_embeddings(&k).z0();
        let rel = (z0 - oracle).abs() / oracle;
        worst = worst.max(rel);
        ensure(rel <= 1e-6, || format!("c={c:.3} b={b:.3}: z0 {z0} vs oracle {oracle}"))?;
        let printed = c * (1.0 + b / 3.0);
        let gap = (z0 - printed).abs() / z0;
        min_gap = min_gap.min(gap);
        ensure(gap > 0.9, || format!("c={c:.3} b={b:.3}: z0 {z0} unexpectedly near {printed}"))?;
        let area_mean = z0 / (w * w);
        ensure((area_mean - printed).abs() <= 1e-12 * printed, || {
            format!("c={c:.3} b={b:.3}: z0/W² {area_mean} vs {printed}")
        })?;
    }
    Ok(format!(
        "20 cases, worst oracle deviation {worst:.2e}; c(1+b/3) is z0/W² (smallest gap to z0 {:.1}%)",
        100.0 * min_gap
    ))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cli_determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs = [
        ("quad", "quad"),
        ("evidence", "evidence"),
        ("linsolve", "linsolve"),
        ("recycle", "recycle"),
        ("ode", "ode"),
        ("ode", "ode_trajectory"),
    ];
    for (experiment, config) in runs {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = dir.path().join(format!("{config}_{rep}.csv"));
            let status = Command::new(env!("CARGO_BIN_EXE_pnum"))
                .arg(experiment)
                .arg("--config")
                .arg(configs_dir().join(format!("{config}.toml")))
                .arg("--out")
                .arg(&out)
                .args(["--seed", "7", "--reproducible"])
                .env("RUST_LOG", "error")
                .status()
                .map_err(|e| e.to_string())?;
            ensure(status.success(), || format!("{config}: exit {status}"))?;
            outputs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
        }
        ensure(outputs[0] == outputs[1], || format!("{config}: CSV differs between runs"))?;
    }
    Ok(format!("{} configs byte-identical across reruns", runs.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, Check); 10] = [
        ("trapezoid equivalence", Duration::from_secs(10), trapezoid_equivalence),
        ("CG equivalence", Duration::from_secs(30), cg_equivalence),
        ("N-step convergence", Duration::from_secs(10), n_step_convergence),
        ("Euler/filter equivalence", Duration::from_secs(5), euler_filter_equivalence),
        ("convergence rates", Duration::from_secs(60), convergence_rates),
        ("calibration", Duration::from_secs(60), calibration),
        ("recycling benefit", Duration::from_secs(30), recycling),
        ("evidence race", Duration::from_secs(120), evidence_race),
        ("double-integral oracle", Duration::from_secs(10), double_integral_oracle),
        ("CLI determinism", Duration::from_secs(120), cli_determinism),
    ];
    let mut failures = 0;
    for (i, (name, budget, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {elapsed:.2?}, budget {budget:?}"))
            }
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({elapsed:.2?})", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL {:>2} {name}: {detail} ({elapsed:.2?})", i + 1);
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
