//! Limited-memory BFGS with a backtracking Armijo line search.
//!
//! Objectives may return a non-finite value (for example when a covariance
//! matrix cannot be factorized); the line search treats that as a failed
//! trial step and shrinks.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::linalg::dot;
use crate::scalar::{lit, Scalar};

/// A differentiable objective to be minimized.
pub trait Objective<T: Scalar> {
    fn dim(&self) -> usize;

    /// Value and gradient at `x`. A non-finite value marks `x` infeasible.
    fn value_grad(&self, x: &[T]) -> (T, Vec<T>);
}

impl<T: Scalar, F: Fn(&[T]) -> (T, Vec<T>)> Objective<T> for (usize, F) {
    fn dim(&self) -> usize {
        self.0
    }

    fn value_grad(&self, x: &[T]) -> (T, Vec<T>) {
        (self.1)(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when the gradient sup-norm falls below this.
    pub grad_tol: f64,
    /// Stop when the relative decrease of the objective stays below this.
    pub f_tol: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { memory: 10, max_iters: 500, grad_tol: 1e-6, f_tol: 1e-13, max_backtracks: 40 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    FunctionTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct Minimum<T> {
    pub x: Vec<T>,
    pub value: T,
    pub grad: Vec<T>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl<T: Scalar> Minimum<T> {
    pub fn grad_sup_norm(&self) -> T {
        sup_norm(&self.grad)
    }
}

fn sup_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Minimizes `objective` starting at `x0`. Returns `None` if the objective is
/// not finite at the starting point.
pub fn minimize<T: Scalar, O: Objective<T> + ?Sized>(
    objective: &O,
    x0: &[T],
    cfg: &LbfgsConfig,
) -> Option<Minimum<T>> {
    let n = objective.dim();
    assert_eq!(x0.len(), n);
    let mut x = x0.to_vec();
    let (mut f, mut g) = objective.value_grad(&x);
    let mut evaluations = 1;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut history: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(cfg.memory);
    let grad_tol: T = lit(cfg.grad_tol);
    let f_tol: T = lit(cfg.f_tol);
    let c1: T = lit(1e-4);
    let mut small_steps = 0;

    for iter in 0..cfg.max_iters {
        if n == 0 || sup_norm(&g) <= grad_tol {
            return Some(Minimum { x, value: f, grad: g, iterations: iter, evaluations, termination: Termination::GradientTolerance });
        }

        let mut d = two_loop(&g, &history);
        let mut slope = dot(&d, &g);
        if !(slope < T::zero()) {
            // not a descent direction: reset memory and use steepest descent
            history.clear();
            d = g.iter().map(|&v| -v).collect();
            slope = dot(&d, &g);
        }
        let mut step = if history.is_empty() {
            let gn = dot(&g, &g).sqrt();
            (T::one() / gn).min(T::one())
        } else {
            T::one()
        };

        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let xn: Vec<T> = x.iter().zip(&d).map(|(&xi, &di)| xi + step * di).collect();
            let (fnew, gnew) = objective.value_grad(&xn);
            evaluations += 1;
            if fnew.is_finite() && gnew.iter().all(|v| v.is_finite()) && fnew <= f + c1 * step * slope {
                accepted = Some((xn, fnew, gnew));
                break;
            }
            step *= lit(0.5);
        }
        let Some((xn, fnew, gnew)) = accepted else {
            return Some(Minimum { x, value: f, grad: g, iterations: iter, evaluations, termination: Termination::LineSearchFailed });
        };

        let s: Vec<T> = xn.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = gnew.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > T::epsilon() * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, T::one() / sy));
        }

        let decrease = f - fnew;
        x = xn;
        g = gnew;
        let scale = f.abs().max(fnew.abs()).max(T::one());
        f = fnew;
        if decrease <= f_tol * scale {
            small_steps += 1;
            if small_steps >= 3 {
                return Some(Minimum { x, value: f, grad: g, iterations: iter + 1, evaluations, termination: Termination::FunctionTolerance });
            }
        } else {
            small_steps = 0;
        }
    }
    Some(Minimum { x, value: f, grad: g, iterations: cfg.max_iters, evaluations, termination: Termination::MaxIterations })
}

/// Standard two-loop recursion returning the search direction `-H g`.
fn two_loop<T: Scalar>(g: &[T], history: &VecDeque<(Vec<T>, Vec<T>, T)>) -> Vec<T> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = *rho * dot(s, &q);
        for (qi, &yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = *rho * dot(y, &q);
        for (qi, &si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|&v| -v).collect()
}
