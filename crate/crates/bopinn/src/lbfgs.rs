//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The implementation follows the standard two-loop recursion over the most
//! recent curvature pairs, with the initial Hessian scaled by
//! `γ = (s·y)/(y·y)` from the latest pair, and a bracketing/zoom line search
//! with cubic interpolation (Nocedal & Wright, algorithms 3.5 and 3.6).

use std::collections::VecDeque;

use crate::{Error, Result};

/// Solver options.
#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    /// Number of curvature pairs kept for the two-loop recursion.
    pub memory: usize,
    /// Iteration cap.
    pub max_iters: usize,
    /// Stop when the gradient infinity norm falls below this.
    pub grad_tol: f64,
    /// Sufficient-decrease constant (Armijo).
    pub wolfe_c1: f64,
    /// Curvature constant.
    pub wolfe_c2: f64,
    /// Cap on function evaluations within one line search.
    pub max_line_search_steps: usize,
    /// Assert the strong Wolfe inequalities on every accepted step.
    pub validate_wolfe: bool,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 500,
            grad_tol: 1e-6,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            max_line_search_steps: 40,
            validate_wolfe: false,
        }
    }
}

impl LbfgsOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < c1 < c2 < 1, got c1 = {}, c2 = {}",
                self.wolfe_c1, self.wolfe_c2
            )));
        }
        if self.memory == 0 {
            return Err(Error::Config("memory must be >= 1".into()));
        }
        Ok(())
    }
}

/// Why the solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    /// Gradient infinity norm fell below `grad_tol`.
    Converged,
    /// Iteration cap reached.
    MaxIters,
    /// No acceptable step found within the line-search budget; the best
    /// iterate so far is returned.
    LineSearchFailure,
}

impl TerminationReason {
    pub fn name(&self) -> &'static str {
        match self {
            TerminationReason::Converged => "converged",
            TerminationReason::MaxIters => "max_iters",
            TerminationReason::LineSearchFailure => "line_search_failure",
        }
    }
}

/// Record of one minimization.
#[derive(Debug, Clone)]
pub struct OptimTrace {
    /// Accepted iterations performed.
    pub iterations: usize,
    /// Objective value at the start and after each accepted iteration.
    pub loss_history: Vec<f64>,
    /// Gradient infinity norm at the final iterate.
    pub terminal_grad_norm: f64,
    pub termination_reason: TerminationReason,
    /// Total objective evaluations, line search included.
    pub func_evals: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Search direction `-H g` from the two-loop recursion.
fn two_loop_direction(grad: &[f64], pairs: &VecDeque<Pair>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for p in pairs.iter().rev() {
        let alpha = p.rho * dot(&p.s, &q);
        for (qi, yi) in q.iter_mut().zip(&p.y) {
            *qi -= alpha * yi;
        }
        alphas.push(alpha);
    }
    let gamma = pairs.back().map_or(1.0, |p| dot(&p.s, &p.y) / dot(&p.y, &p.y));
    for qi in q.iter_mut() {
        *qi *= gamma;
    }
    for (p, &alpha) in pairs.iter().zip(alphas.iter().rev()) {
        let beta = p.rho * dot(&p.y, &q);
        for (qi, si) in q.iter_mut().zip(&p.s) {
            *qi += (alpha - beta) * si;
        }
    }
    for qi in q.iter_mut() {
        *qi = -*qi;
    }
    q
}

/// One evaluation along the ray `x + alpha d`.
struct Probe {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

/// Minimize `f_and_grad` from `x0`. Returns the final point, its value, and
/// the optimization trace. The callable must be deterministic for the trace
/// invariants to hold; non-finite values at accepted iterates are errors,
/// while non-finite trial values during the line search merely shrink the
/// step.
pub fn minimize<F>(
    mut f_and_grad: F,
    x0: &[f64],
    opts: &LbfgsOptions,
) -> Result<(Vec<f64>, f64, OptimTrace)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    opts.validate()?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial point".into()));
    }

    let mut evals = 0usize;
    let mut fg = |x: &[f64]| {
        evals += 1;
        f_and_grad(x)
    };

    let mut x = x0.to_vec();
    let (mut f, mut g) = fg(&x)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective at initial point".into()));
    }

    let mut pairs: VecDeque<Pair> = VecDeque::with_capacity(opts.memory);
    let mut loss_history = vec![f];

    let finish = |x: Vec<f64>, f: f64, g: &[f64], iters: usize, history: Vec<f64>, reason: TerminationReason, evals: usize| {
        (
            x,
            f,
            OptimTrace {
                iterations: iters,
                loss_history: history,
                terminal_grad_norm: inf_norm(g),
                termination_reason: reason,
                func_evals: evals,
            },
        )
    };

    for iter in 0..opts.max_iters {
        if inf_norm(&g) <= opts.grad_tol {
            return Ok(finish(x, f, &g, iter, loss_history, TerminationReason::Converged, evals));
        }

        let mut d = two_loop_direction(&g, &pairs);
        let mut slope0 = dot(&g, &d);
        if !(slope0 < 0.0) {
            // Curvature information went stale; restart from steepest descent.
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            slope0 = dot(&g, &d);
            if !(slope0 < 0.0) {
                return Ok(finish(x, f, &g, iter, loss_history, TerminationReason::Converged, evals));
            }
        }

        let alpha_init = if pairs.is_empty() {
            // First step: scale down when the gradient is large.
            (1.0f64).min(1.0 / dot(&g, &g).sqrt()).max(1e-10)
        } else {
            1.0
        };

        let accepted = strong_wolfe_search(&mut fg, &x, &d, f, slope0, alpha_init, opts)?;
        let probe = match accepted {
            Some(p) => p,
            None => {
                return Ok(finish(x, f, &g, iter, loss_history, TerminationReason::LineSearchFailure, evals));
            }
        };

        if opts.validate_wolfe {
            let armijo = probe.f <= f + opts.wolfe_c1 * probe.alpha * slope0 + 1e-12 * f.abs().max(1.0);
            let curvature = probe.slope.abs() <= opts.wolfe_c2 * slope0.abs() + 1e-12;
            assert!(armijo, "Armijo violated: f {} -> {} at alpha {}", f, probe.f, probe.alpha);
            assert!(curvature, "curvature violated: |{}| > c2 |{}|", probe.slope, slope0);
        }

        let x_new: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + probe.alpha * di).collect();
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = probe.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        // Skip pairs that would break positive definiteness.
        if sy > f64::EPSILON * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back(Pair { s, y, rho: 1.0 / sy });
        }

        x = x_new;
        f = probe.f;
        g = probe.g;
        loss_history.push(f);
    }

    Ok(finish(x, f, &g, opts.max_iters, loss_history, TerminationReason::MaxIters, evals))
}

/// Evaluate the objective along the ray, treating non-finite trial values as
/// `+inf` so the search backs away from them.
fn eval_ray<F>(
    f_and_grad: &mut F,
    x: &[f64],
    d: &[f64],
    alpha: f64,
) -> Result<Probe>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let trial: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
    match f_and_grad(&trial) {
        Ok((f, g)) => {
            let finite = f.is_finite() && g.iter().all(|v| v.is_finite());
            if finite {
                let slope = dot(&g, d);
                Ok(Probe { alpha, f, g, slope })
            } else {
                Ok(Probe { alpha, f: f64::INFINITY, g, slope: f64::INFINITY })
            }
        }
        Err(Error::NonFinite(_)) => Ok(Probe {
            alpha,
            f: f64::INFINITY,
            g: vec![0.0; x.len()],
            slope: f64::INFINITY,
        }),
        Err(e) => Err(e),
    }
}

/// Bracketing phase of the strong-Wolfe search. Returns `None` when no
/// acceptable step was found within the evaluation budget.
fn strong_wolfe_search<F>(
    f_and_grad: &mut F,
    x: &[f64],
    d: &[f64],
    f0: f64,
    slope0: f64,
    alpha_init: f64,
    opts: &LbfgsOptions,
) -> Result<Option<Probe>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let c1 = opts.wolfe_c1;
    let c2 = opts.wolfe_c2;
    let mut budget = opts.max_line_search_steps;
    const ALPHA_MAX: f64 = 1e10;

    let mut prev = Probe {
        alpha: 0.0,
        f: f0,
        g: Vec::new(),
        slope: slope0,
    };
    let mut alpha = alpha_init;

    while budget > 0 {
        budget -= 1;
        let cur = eval_ray(f_and_grad, x, d, alpha)?;

        if cur.f > f0 + c1 * alpha * slope0 || (cur.f >= prev.f && prev.alpha > 0.0) {
            return zoom(f_and_grad, x, d, f0, slope0, prev, cur, opts, budget);
        }
        if cur.slope.abs() <= -c2 * slope0 {
            return Ok(Some(cur));
        }
        if cur.slope >= 0.0 {
            return zoom(f_and_grad, x, d, f0, slope0, cur, prev, opts, budget);
        }
        let next = (alpha * 2.0).min(ALPHA_MAX);
        if next == alpha {
            return Ok(None);
        }
        prev = cur;
        alpha = next;
    }
    Ok(None)
}

/// Zoom phase (bracket refinement with safeguarded cubic interpolation).
/// `lo` always satisfies the sufficient-decrease condition.
#[allow(clippy::too_many_arguments)]
fn zoom<F>(
    f_and_grad: &mut F,
    x: &[f64],
    d: &[f64],
    f0: f64,
    slope0: f64,
    mut lo: Probe,
    mut hi: Probe,
    opts: &LbfgsOptions,
    mut budget: usize,
) -> Result<Option<Probe>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let c1 = opts.wolfe_c1;
    let c2 = opts.wolfe_c2;

    while budget > 0 {
        budget -= 1;
        let width = (hi.alpha - lo.alpha).abs();
        if width < 1e-16 * (1.0 + lo.alpha.abs()) {
            // Bracket collapsed; accept lo if it at least decreases.
            return Ok(if lo.alpha > 0.0 && lo.f < f0 { Some(lo) } else { None });
        }

        let alpha = cubic_step(&lo, &hi);

        let cur = eval_ray(f_and_grad, x, d, alpha)?;
        if cur.f > f0 + c1 * alpha * slope0 || cur.f >= lo.f {
            hi = cur;
        } else {
            if cur.slope.abs() <= -c2 * slope0 {
                return Ok(Some(cur));
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    // Budget exhausted: fall back to the best sufficient-decrease point.
    Ok(if lo.alpha > 0.0 && lo.f < f0 { Some(lo) } else { None })
}

/// Cubic-interpolation trial point inside the bracket, safeguarded to make
/// at least 10% progress from either end.
fn cubic_step(lo: &Probe, hi: &Probe) -> f64 {
    let (a_lo, a_hi) = (lo.alpha, hi.alpha);
    let lower = a_lo.min(a_hi);
    let upper = a_lo.max(a_hi);
    let guard = 0.1 * (upper - lower);

    let trial = if lo.slope.is_finite() && hi.slope.is_finite() && hi.f.is_finite() {
        let d1 = lo.slope + hi.slope - 3.0 * (lo.f - hi.f) / (a_lo - a_hi);
        let d2_sq = d1 * d1 - lo.slope * hi.slope;
        if d2_sq >= 0.0 {
            let d2 = d2_sq.sqrt() * (a_hi - a_lo).signum();
            a_hi - (a_hi - a_lo) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2)
        } else {
            f64::NAN
        }
    } else {
        f64::NAN
    };

    if trial.is_finite() && trial > lower + guard && trial < upper - guard {
        trial
    } else {
        0.5 * (lower + upper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(max_iters: usize, grad_tol: f64) -> LbfgsOptions {
        LbfgsOptions {
            max_iters,
            grad_tol,
            validate_wolfe: true,
            ..LbfgsOptions::default()
        }
    }

    #[test]
    fn one_dimensional_quadratic() {
        let fg = |x: &[f64]| Ok(((x[0] - 3.0).powi(2), vec![2.0 * (x[0] - 3.0)]));
        let (x, f, trace) = minimize(fg, &[0.0], &opts(50, 1e-10)).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-8, "x = {}", x[0]);
        assert!(f < 1e-16);
        assert!(trace.iterations <= 5, "{} iterations", trace.iterations);
        assert_eq!(trace.termination_reason, TerminationReason::Converged);
    }

    #[test]
    fn rosenbrock_reaches_global_minimum() {
        let fg = |x: &[f64]| {
            let (a, b) = (1.0, 100.0);
            let f = (a - x[0]).powi(2) + b * (x[1] - x[0] * x[0]).powi(2);
            let g = vec![
                -2.0 * (a - x[0]) - 4.0 * b * (x[1] - x[0] * x[0]) * x[0],
                2.0 * b * (x[1] - x[0] * x[0]),
            ];
            Ok((f, g))
        };
        let (x, f, trace) = minimize(fg, &[-1.2, 1.0], &opts(200, 1e-10)).unwrap();
        assert!(f < 1e-10, "f = {f} after {} iters", trace.iterations);
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] - 1.0).abs() < 1e-5);
        assert!(f <= fg(&[-1.2, 1.0]).unwrap().0);
    }

    #[test]
    fn high_dimensional_quadratic_converges_fast() {
        let a: Vec<f64> = (0..50).map(|i| (i as f64) * 0.1 - 2.0).collect();
        let a2 = a.clone();
        let fg = move |x: &[f64]| {
            let f: f64 = x.iter().zip(&a2).map(|(xi, ai)| (xi - ai) * (xi - ai)).sum();
            let g: Vec<f64> = x.iter().zip(&a2).map(|(xi, ai)| 2.0 * (xi - ai)).collect();
            Ok((f, g))
        };
        let (x, _, trace) = minimize(fg, &vec![0.0; 50], &opts(50, 1e-10)).unwrap();
        assert!(trace.iterations <= 10, "{} iterations", trace.iterations);
        for (xi, ai) in x.iter().zip(&a) {
            assert!((xi - ai).abs() < 1e-8);
        }
    }

    #[test]
    fn loss_history_is_non_increasing() {
        let fg = |x: &[f64]| {
            let f = x[0].powi(4) + (x[1] - 2.0).powi(2) + (x[0] * x[1]).powi(2);
            let g = vec![
                4.0 * x[0].powi(3) + 2.0 * x[0] * x[1] * x[1],
                2.0 * (x[1] - 2.0) + 2.0 * x[0] * x[0] * x[1],
            ];
            Ok((f, g))
        };
        let (_, _, trace) = minimize(fg, &[2.0, -3.0], &opts(100, 1e-9)).unwrap();
        for w in trace.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "loss rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn identical_inputs_give_identical_traces() {
        let fg = |x: &[f64]| {
            let f = (x[0] - 0.3).powi(2) * (1.0 + (3.0 * x[1]).sin().powi(2)) + x[1] * x[1];
            let g = vec![
                2.0 * (x[0] - 0.3) * (1.0 + (3.0 * x[1]).sin().powi(2)),
                (x[0] - 0.3).powi(2) * 6.0 * (3.0 * x[1]).sin() * (3.0 * x[1]).cos() + 2.0 * x[1],
            ];
            Ok((f, g))
        };
        let o = opts(60, 1e-9);
        let (x1, f1, t1) = minimize(fg, &[5.0, -1.0], &o).unwrap();
        let (x2, f2, t2) = minimize(fg, &[5.0, -1.0], &o).unwrap();
        assert_eq!(x1, x2);
        assert_eq!(f1, f2);
        assert_eq!(t1.loss_history, t2.loss_history);
    }

    #[test]
    fn non_finite_initial_point_is_an_error() {
        let fg = |x: &[f64]| Ok((x[0] * x[0], vec![2.0 * x[0]]));
        assert!(minimize(fg, &[f64::NAN], &opts(10, 1e-8)).is_err());
    }

    #[test]
    fn non_finite_trials_shrink_instead_of_failing() {
        // A wall of non-finite values at x >= 1: trial points beyond it must
        // shrink the step rather than abort the minimization.
        let fg = |x: &[f64]| {
            if x[0] >= 1.0 {
                Ok((f64::INFINITY, vec![f64::INFINITY]))
            } else {
                Ok(((x[0] - 2.0).powi(2), vec![2.0 * (x[0] - 2.0)]))
            }
        };
        let o = LbfgsOptions {
            max_iters: 200,
            grad_tol: 1e-9,
            ..LbfgsOptions::default()
        };
        let (x, f, _) = minimize(fg, &[0.0], &o).unwrap();
        // The unconstrained minimum (x = 2) is unreachable; the iterates must
        // have marched toward the wall and stayed finite.
        assert!(x[0] > 0.8 && x[0] < 1.0, "x = {}", x[0]);
        assert!(f < fg(&[0.0]).unwrap().0);
        assert!(f.is_finite());
    }

    #[test]
    fn bad_options_are_rejected() {
        let base = LbfgsOptions::default();
        assert!(LbfgsOptions { wolfe_c1: 0.95, ..base.clone() }.validate().is_err());
        assert!(LbfgsOptions { memory: 0, ..base.clone() }.validate().is_err());
        assert!(LbfgsOptions { wolfe_c2: 1.0, ..base }.validate().is_err());
    }
}
