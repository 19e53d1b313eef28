//! L-BFGS whose initial inverse Hessian is the factored quadratic Hessian.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::precond::Preconditioner;
use crate::data_terms::DataTerm;
use crate::energy::QuadraticEnergy;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsOptions {
    pub iterations: usize,
    pub memory: usize,
    /// Sufficient-decrease constant of the backtracking line search.
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Stop once `||g||_inf <= gradient_tolerance * (1 + |E|)`.
    pub gradient_tolerance: f64,
    /// Optional stop once an accepted step changes the energy by less than this.
    pub energy_change: Option<f64>,
    /// Optional bound on the largest coordinate change of the first trial
    /// step of every line search.
    pub max_step: Option<f64>,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            iterations: 100,
            memory: 10,
            armijo: 1e-4,
            max_backtracks: 30,
            gradient_tolerance: 1e-9,
            energy_change: None,
            max_step: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    IterationLimit,
    GradientTolerance,
    EnergyChange,
    LineSearchFailed,
}

/// State after an accepted step, or the start point at iteration 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub total: f64,
    pub quadratic: f64,
    /// Unweighted data energy.
    pub data: f64,
    pub gradient_inf: f64,
    /// Line-search step length, 0 for the start point.
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct MinimizeOutcome {
    pub x: Vec<f64>,
    pub trace: Vec<IterationRecord>,
    pub stop: StopReason,
    /// Accepted steps.
    pub iterations: usize,
}

struct Evaluation {
    total: f64,
    quadratic: f64,
    data: f64,
    gradient: Vec<f64>,
}

fn evaluate(
    x: &[f64],
    quad: &QuadraticEnergy,
    data: Option<&dyn DataTerm>,
    alpha_data: f64,
    iteration: usize,
) -> Result<Evaluation> {
    let (quadratic, mut gradient) = quad.value_and_gradient(x)?;
    let mut data_value = 0.0;
    if let Some(term) = data.filter(|_| alpha_data != 0.0) {
        let (e, g) = term.value_and_gradient(x)?;
        data_value = e;
        for (acc, gi) in gradient.iter_mut().zip(&g) {
            *acc += alpha_data * gi;
        }
    }
    let total = quadratic + alpha_data * data_value;
    if !total.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { iteration });
    }
    Ok(Evaluation {
        total,
        quadratic,
        data: data_value,
        gradient,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `quad(x) + alpha_data * data(x)` from `x0`. `observe` sees every
/// record together with the current point and may abort by returning an error.
pub fn plbfgs_minimize(
    x0: &[f64],
    quad: &QuadraticEnergy,
    data: Option<&dyn DataTerm>,
    alpha_data: f64,
    precond: &Preconditioner,
    options: &LbfgsOptions,
    mut observe: impl FnMut(&IterationRecord, &[f64]) -> Result<()>,
) -> Result<MinimizeOutcome> {
    if x0.len() != quad.dim() || precond.dim() != quad.dim() {
        return Err(Error::DimensionMismatch {
            expected: quad.dim(),
            found: if x0.len() != quad.dim() { x0.len() } else { precond.dim() },
        });
    }
    let mut x = x0.to_vec();
    let mut current = evaluate(&x, quad, data, alpha_data, 0)?;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(options.memory);
    let start = IterationRecord {
        iteration: 0,
        total: current.total,
        quadratic: current.quadratic,
        data: current.data,
        gradient_inf: inf_norm(&current.gradient),
        step: 0.0,
    };
    observe(&start, &x)?;
    let mut trace = vec![start];
    let mut stop = StopReason::IterationLimit;
    let mut accepted = 0;

    for iteration in 1..=options.iterations {
        let g = &current.gradient;
        if inf_norm(g) <= options.gradient_tolerance * (1.0 + current.total.abs()) {
            stop = StopReason::GradientTolerance;
            break;
        }
        let direction = {
            let mut q = g.clone();
            let mut alphas = Vec::with_capacity(history.len());
            for (s, y, rho) in history.iter().rev() {
                let a = rho * dot(s, &q);
                for (qi, yi) in q.iter_mut().zip(y) {
                    *qi -= a * yi;
                }
                alphas.push(a);
            }
            let mut r = precond.solve_unchecked(&q);
            // Scale the seed by the newest pair, s'y / y'My; the first
            // iteration keeps the unscaled quadratic inverse.
            if let Some((s, y, _)) = history.back() {
                let my = precond.solve_unchecked(y);
                let gamma = dot(s, y) / dot(y, &my);
                if gamma.is_finite() && gamma > 0.0 {
                    for ri in r.iter_mut() {
                        *ri *= gamma;
                    }
                }
            }
            for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
                let b = rho * dot(y, &r);
                for (ri, si) in r.iter_mut().zip(s) {
                    *ri += (a - b) * si;
                }
            }
            let mut d: Vec<f64> = r.into_iter().map(|v| -v).collect();
            if !(dot(&d, g) < 0.0) {
                d = precond.solve_unchecked(g).into_iter().map(|v| -v).collect();
                if !(dot(&d, g) < 0.0) {
                    d = g.iter().map(|v| -v).collect();
                }
            }
            d
        };
        let slope = dot(&direction, g);
        let mut t = 1.0;
        if let Some(cap) = options.max_step {
            let longest = inf_norm(&direction);
            if longest > cap {
                t = cap / longest;
            }
        }
        let mut next = None;
        for _ in 0..=options.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&direction).map(|(xi, di)| xi + t * di).collect();
            let eval = evaluate(&trial, quad, data, alpha_data, iteration)?;
            if eval.total <= current.total + options.armijo * t * slope {
                next = Some((trial, eval));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, eval)) = next else {
            stop = StopReason::LineSearchFailed;
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = eval.gradient.iter().zip(g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm(&s) * norm(&y) {
            if history.len() == options.memory {
                history.pop_front();
            }
            if options.memory > 0 {
                history.push_back((s, y, 1.0 / sy));
            }
        }
        let change = current.total - eval.total;
        x = x_new;
        current = eval;
        accepted += 1;
        let record = IterationRecord {
            iteration,
            total: current.total,
            quadratic: current.quadratic,
            data: current.data,
            gradient_inf: inf_norm(&current.gradient),
            step: t,
        };
        observe(&record, &x)?;
        trace.push(record);
        if options.energy_change.is_some_and(|tol| change.abs() < tol) {
            stop = StopReason::EnergyChange;
            break;
        }
    }
    Ok(MinimizeOutcome {
        x,
        trace,
        stop,
        iterations: accepted,
    })
}
