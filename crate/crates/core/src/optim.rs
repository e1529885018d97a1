//! Box-constrained limited-memory BFGS maximizer.
//!
//! Each iteration fixes the variables sitting on a bound whose gradient points
//! outward, builds a quasi-Newton direction over the remaining ones with the
//! two-loop recursion, and backtracks along the projected path until the
//! Armijo condition holds. Every iterate is projected onto the box.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::domain::Bounds;
use crate::error::{Error, Result};

/// A scalar objective to maximize. `evaluate` writes the gradient into `grad`
/// and returns the value.
pub trait Objective {
    fn evaluate(&mut self, q: &[f64], grad: &mut [f64]) -> f64;
}

impl<F> Objective for F
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    fn evaluate(&mut self, q: &[f64], grad: &mut [f64]) -> f64 {
        self(q, grad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOpts {
    pub max_iter: usize,
    /// Convergence threshold on the ∞-norm of the projected gradient.
    pub tol: f64,
    pub memory: usize,
    /// Step shrink factor of the backtracking line search.
    pub backtrack: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Keep every accepted iterate in the report.
    pub record_iterates: bool,
}

impl Default for SolverOpts {
    fn default() -> Self {
        SolverOpts {
            max_iter: 100,
            tol: 1e-5,
            memory: 10,
            backtrack: 0.5,
            armijo: 1e-4,
            max_backtracks: 40,
            record_iterates: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIter,
    LineSearchFail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub start_value: f64,
    pub value: f64,
    pub projected_grad_norm: f64,
    pub termination: Termination,
    /// True where the solution sits on a bound.
    pub active: Vec<bool>,
    /// Whether the starting point had to be projected into the box.
    pub start_clamped: bool,
    /// Accepted iterates, starting point included, when requested.
    pub iterates: Vec<Vec<f64>>,
}

/// ∞-norm of `P(x - g) - x` for the minimization gradient `g`.
fn projected_gradient_norm(x: &[f64], g: &[f64], b: &Bounds) -> f64 {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (&xi, &gi))| ((xi - gi).clamp(b.lower()[i], b.upper()[i]) - xi).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// `-H g` restricted to `free` variables.
fn two_loop(g: &[f64], free: &[bool], memory: &VecDeque<Pair>) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(free).map(|(x, f)| if *f { *x } else { 0.0 }).collect() };
    let mut q = mask(g);
    let mut alphas = Vec::with_capacity(memory.len());
    for p in memory.iter().rev() {
        let s = mask(&p.s);
        let y = mask(&p.y);
        let a = p.rho * dot(&s, &q);
        for (qi, yi) in q.iter_mut().zip(&y) {
            *qi -= a * yi;
        }
        alphas.push((a, s, y));
    }
    if let Some(p) = memory.back() {
        let y = mask(&p.y);
        let yy = dot(&y, &y);
        if yy > 0.0 {
            let gamma = dot(&mask(&p.s), &y) / yy;
            if gamma.is_finite() && gamma > 0.0 {
                q.iter_mut().for_each(|v| *v *= gamma);
            }
        }
    }
    for (p, (a, s, y)) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = p.rho * dot(&y, &q);
        for (qi, si) in q.iter_mut().zip(&s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().zip(free).map(|(v, f)| if *f { -v } else { 0.0 }).collect()
}

/// Maximizes `objective` over `bounds` from `q0` (projected into the box first).
///
/// Returns the best point, its value and a report. A non-finite value or
/// gradient at the start is an error; later non-finite trial points only
/// shrink the step.
pub fn solve_bounded<O: Objective + ?Sized>(
    objective: &mut O,
    q0: &[f64],
    bounds: &Bounds,
    opts: &SolverOpts,
) -> Result<(Vec<f64>, f64, SolveReport)> {
    bounds.check_dim(q0.len())?;
    let n = q0.len();
    let mut x = q0.to_vec();
    bounds.project(&mut x)?;
    let start_clamped = x != q0;
    if start_clamped {
        log::debug!("solver start projected into bounds");
    }

    // Internally minimize phi = -f.
    let mut evaluations = 0;
    let mut eval = |x: &[f64], g: &mut [f64]| {
        evaluations += 1;
        let v = objective.evaluate(x, g);
        g.iter_mut().for_each(|gi| *gi = -*gi);
        -v
    };
    let mut g = vec![0.0; n];
    let mut phi = eval(&x, &mut g);
    if !phi.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective at starting point"));
    }
    let start_value = -phi;

    let mut memory: VecDeque<Pair> = VecDeque::with_capacity(opts.memory);
    let mut iterates = Vec::new();
    if opts.record_iterates {
        iterates.push(x.clone());
    }
    let mut termination = Termination::MaxIter;
    let mut iterations = 0;
    let mut g_new = vec![0.0; n];

    while iterations < opts.max_iter {
        if projected_gradient_norm(&x, &g, bounds) < opts.tol {
            termination = Termination::Converged;
            break;
        }
        iterations += 1;
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= bounds.lower()[i] && g[i] > 0.0) || (x[i] >= bounds.upper()[i] && g[i] < 0.0)))
            .collect();
        let steepest: Vec<f64> = g.iter().zip(&free).map(|(v, f)| if *f { -v } else { 0.0 }).collect();
        let mut d = two_loop(&g, &free, &memory);
        if dot(&d, &g) >= 0.0 || d.iter().any(|v| !v.is_finite()) {
            memory.clear();
            d = steepest.clone();
        }
        let mut alpha = if memory.is_empty() {
            let gmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (1.0 / gmax.max(1.0)).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        let mut using_steepest = memory.is_empty();
        let mut tries = 0;
        while tries < opts.max_backtracks {
            tries += 1;
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            bounds.project(&mut trial)?;
            let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &step);
            if decrease >= 0.0 {
                if step.iter().all(|s| *s == 0.0) {
                    break;
                }
                if !using_steepest {
                    // projection bent the quasi-Newton step uphill
                    using_steepest = true;
                    d = steepest.clone();
                    alpha = 1.0 / d.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                    tries = 0;
                    continue;
                }
                alpha *= opts.backtrack;
                continue;
            }
            let phi_trial = eval(&trial, &mut g_new);
            if phi_trial.is_finite()
                && g_new.iter().all(|v| v.is_finite())
                && phi_trial <= phi + opts.armijo * decrease
            {
                accepted = Some((trial, step, phi_trial));
                break;
            }
            alpha *= opts.backtrack;
        }

        let Some((x_next, s, phi_next)) = accepted else {
            termination = Termination::LineSearchFail;
            break;
        };
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(1e-300) && sy.is_finite() {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back(Pair { s, y, rho: 1.0 / sy });
        }
        let stalled = (phi - phi_next).abs() <= 1e-15 * phi.abs().max(1.0);
        x = x_next;
        phi = phi_next;
        std::mem::swap(&mut g, &mut g_new);
        if opts.record_iterates {
            iterates.push(x.clone());
        }
        if stalled {
            termination = Termination::Converged;
            break;
        }
    }
    if termination == Termination::MaxIter && projected_gradient_norm(&x, &g, bounds) < opts.tol {
        termination = Termination::Converged;
    }

    let active = (0..n)
        .map(|i| x[i] <= bounds.lower()[i] || x[i] >= bounds.upper()[i])
        .collect();
    let report = SolveReport {
        iterations,
        evaluations,
        start_value,
        value: -phi,
        projected_grad_norm: projected_gradient_norm(&x, &g, bounds),
        termination,
        active,
        start_clamped,
        iterates,
    };
    Ok((x, -phi, report))
}
