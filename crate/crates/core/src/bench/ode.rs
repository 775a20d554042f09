//! Convergence-order studies and calibrated filter trajectories.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{config_error, fmt_f64, BenchResult, Experiment, Record, Table};
use crate::ode::{
    calibrate_diffusion, convergence_order_estimate, rescale_diffusion, solve_ivp_filter, ConvergenceSolver,
    FilterConfig, IvProblem, RkMethod, UpdateMode, VectorField,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero {},
    Linear { rate: f64 },
    Logistic { rate: f64, capacity: f64 },
    StiffLinear { rate: f64 },
    LotkaVolterra { alpha: f64, beta: f64, delta: f64, gamma: f64 },
}

impl From<FieldSpec> for VectorField {
    fn from(f: FieldSpec) -> Self {
        match f {
            FieldSpec::Zero {} => VectorField::Zero,
            FieldSpec::Linear { rate } => VectorField::Linear { rate },
            FieldSpec::Logistic { rate, capacity } => VectorField::Logistic { rate, capacity },
            FieldSpec::StiffLinear { rate } => VectorField::StiffLinear { rate },
            FieldSpec::LotkaVolterra {
                alpha,
                beta,
                delta,
                gamma,
            } => VectorField::LotkaVolterra {
                alpha,
                beta,
                delta,
                gamma,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub field: FieldSpec,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub t0: f64,
    pub t_end: f64,
}

impl ProblemSpec {
    pub fn build(&self) -> BenchResult<IvProblem> {
        Ok(IvProblem::new(
            self.field.into(),
            DVector::from_column_slice(&self.x0),
            self.t0,
            self.t_end,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OdeConfig {
    /// Global error at `t_end` against the closed form, per solver and step.
    Order {
        problem: ProblemSpec,
        solvers: Vec<ConvergenceSolver>,
        /// Geometric sequence of step sizes.
        steps: Vec<f64>,
    },
    /// Filter means and standard deviations on the step grid, with the
    /// diffusion calibrated by maximum likelihood.
    Trajectory {
        problem: ProblemSpec,
        order: usize,
        step: f64,
        #[serde(default)]
        mode: UpdateMode,
    },
}

impl Default for OdeConfig {
    fn default() -> Self {
        OdeConfig::Order {
            problem: ProblemSpec {
                field: FieldSpec::Linear { rate: 1.0 },
                x0: vec![1.0],
                t0: 0.0,
                t_end: 1.0,
            },
            solvers: vec![
                ConvergenceSolver::RungeKutta { method: RkMethod::Euler },
                ConvergenceSolver::RungeKutta {
                    method: RkMethod::Midpoint,
                },
                ConvergenceSolver::RungeKutta { method: RkMethod::Rk4 },
                ConvergenceSolver::Filter {
                    order: 1,
                    mode: UpdateMode::Restart,
                },
                ConvergenceSolver::Filter {
                    order: 2,
                    mode: UpdateMode::Restart,
                },
            ],
            steps: vec![0.1, 0.05, 0.025, 0.0125, 0.00625],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderRow {
    pub solver: String,
    pub h: f64,
    pub steps: usize,
    pub error: f64,
    pub fitted_slope: f64,
}

impl Record for OrderRow {
    const HEADER: &'static [&'static str] = &["solver", "h", "steps", "error", "fitted_slope"];

    fn cells(&self) -> Vec<String> {
        vec![
            self.solver.clone(),
            fmt_f64(self.h),
            self.steps.to_string(),
            fmt_f64(self.error),
            fmt_f64(self.fitted_slope),
        ]
    }
}

/// Rows ordered by solver (as configured), then step size.
pub fn order_rows(problem: &IvProblem, solvers: &[ConvergenceSolver], steps: &[f64]) -> BenchResult<Vec<OrderRow>> {
    if solvers.is_empty() {
        return Err(config_error("solvers must not be empty"));
    }
    let counts = steps
        .iter()
        .map(|&h| problem.steps_for(h))
        .collect::<Result<Vec<usize>, _>>()?;
    let studies: Vec<BenchResult<_>> = solvers
        .par_iter()
        .map(|s| Ok(convergence_order_estimate(s, problem, steps)?))
        .collect();
    let mut rows = Vec::new();
    for (solver, study) in solvers.iter().zip(studies) {
        let study = study?;
        for ((h, e), n) in study.steps.iter().zip(&study.errors).zip(&counts) {
            rows.push(OrderRow {
                solver: solver.label(),
                h: *h,
                steps: *n,
                error: *e,
                fitted_slope: study.slope,
            });
        }
    }
    Ok(rows)
}

fn trajectory_table(problem: &IvProblem, order: usize, step: f64, mode: UpdateMode) -> BenchResult<Table> {
    let cfg = FilterConfig {
        mode,
        ..FilterConfig::new(order, step)
    };
    let diffusion = calibrate_diffusion(problem, &cfg)?;
    let sol = rescale_diffusion(&solve_ivp_filter(problem, &cfg)?, diffusion);
    let d = problem.dim();
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|i| format!("mean_{i}")));
    header.extend((0..d).map(|i| format!("std_{i}")));
    let rows = sol
        .states
        .iter()
        .map(|s| {
            let mut row = vec![fmt_f64(s.t)];
            row.extend(s.x_mean().iter().map(|v| fmt_f64(*v)));
            row.extend(s.x_std().iter().map(|v| fmt_f64(*v)));
            row
        })
        .collect();
    Ok(Table {
        experiment: Experiment::Ode,
        header,
        rows,
    })
}

pub fn run(cfg: &OdeConfig) -> BenchResult<Table> {
    match cfg {
        OdeConfig::Order {
            problem,
            solvers,
            steps,
        } => {
            let rows = order_rows(&problem.build()?, solvers, steps)?;
            Ok(Table::from_records(Experiment::Ode, &rows))
        }
        OdeConfig::Trajectory {
            problem,
            order,
            step,
            mode,
        } => trajectory_table(&problem.build()?, *order, *step, *mode),
    }
}
