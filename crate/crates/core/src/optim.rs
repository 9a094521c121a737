//! Bounded derivative-free maximization on top of `argmin`'s Nelder-Mead.

use std::cell::RefCell;
use std::rc::Rc;

use argmin::core::{CostFunction, Error as ArgminError, Executor};
use argmin::solver::neldermead::NelderMead;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    /// Objective value at `x` (the maximum over all evaluations).
    pub value: f64,
    pub evals: usize,
    /// The simplex met the tolerance before the evaluation budget ran out.
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop once the standard deviation of the simplex values drops below this.
    pub tol: f64,
    /// Initial simplex edge length.
    pub step: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_evals: 400, tol: 1e-6, step: 0.5, lower: -20.0, upper: 20.0 }
    }
}

/// Evaluation count and best point seen so far.
type Tally = Rc<RefCell<(usize, Option<(Vec<f64>, f64)>)>>;

struct Problem<'a, F> {
    f: &'a F,
    lower: f64,
    upper: f64,
    max_evals: usize,
    state: Tally,
}

const BUDGET_EXHAUSTED: &str = "evaluation budget exhausted";

impl<F: Fn(&[f64]) -> f64> CostFunction for Problem<'_, F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, ArgminError> {
        let mut st = self.state.borrow_mut();
        if st.0 >= self.max_evals {
            return Err(ArgminError::msg(BUDGET_EXHAUSTED));
        }
        st.0 += 1;
        let clamped: Vec<f64> = p.iter().map(|v| v.clamp(self.lower, self.upper)).collect();
        let outside: f64 = p.iter().zip(&clamped).map(|(a, b)| (a - b).powi(2)).sum();
        let v = (self.f)(&clamped);
        let v = if v.is_nan() { f64::NEG_INFINITY } else { v };
        if v > st.1.as_ref().map_or(f64::NEG_INFINITY, |b| b.1) || st.1.is_none() {
            st.1 = Some((clamped, v));
        }
        Ok(if v.is_finite() { -v + outside } else { f64::INFINITY })
    }
}

/// Maximize `f` over the box `[lower, upper]^d` starting from `x0`.
/// Points outside the box are evaluated at their projection with a quadratic
/// penalty on the distance, so the simplex is pulled back inside. The budget
/// always covers the `d + 1` vertices of the initial simplex.
pub fn maximize<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], opts: &NelderMeadOptions) -> Result<OptimResult> {
    let d = x0.len();
    if d == 0 {
        return Err(Error::input("nothing to optimize"));
    }
    let x0: Vec<f64> = x0.iter().map(|v| v.clamp(opts.lower, opts.upper)).collect();
    let mut simplex = vec![x0.clone()];
    for i in 0..d {
        let mut v = x0.clone();
        v[i] = if v[i] + opts.step <= opts.upper { v[i] + opts.step } else { v[i] - opts.step };
        simplex.push(v);
    }
    let state = Rc::new(RefCell::new((0, None)));
    let problem = Problem { f, lower: opts.lower, upper: opts.upper, max_evals: opts.max_evals.max(d + 1), state: Rc::clone(&state) };
    let solver = NelderMead::new(simplex).with_sd_tolerance(opts.tol).map_err(|e| Error::Optimization(e.to_string()))?;
    let run = Executor::new(problem, solver).configure(|s| s.max_iters(u64::MAX)).run();
    let converged = match &run {
        Ok(_) => true,
        Err(e) if e.to_string().contains(BUDGET_EXHAUSTED) => false,
        Err(e) => return Err(Error::Optimization(e.to_string())),
    };
    let (evals, best) = state.take();
    let (x, value) = best.ok_or_else(|| Error::Optimization("no evaluations".into()))?;
    Ok(OptimResult { x, value, evals, converged })
}
