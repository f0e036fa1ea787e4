//! Augmented Lagrangian outer loop with a nonmonotone spectral projected
//! gradient inner solver.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    project_simplex_in_place, Evaluation, Multipliers, NlpProblem, ProblemShape, SolveOptions,
    SolveResult, SolveStatus,
};

const PENALTY_INIT: f64 = 1.0;
const PENALTY_GROWTH: f64 = 10.0;
const PENALTY_MAX: f64 = 1e10;
const NONMONOTONE_MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const WARM_START_TOL: f64 = 1e-6;

pub(crate) fn project(shape: &ProblemShape, x: &mut [f64]) {
    for &(o, n) in &shape.simplex_blocks {
        project_simplex_in_place(&mut x[o..o + n]);
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Best point seen so far that satisfies the original problem's
/// constraints within tolerance.
#[derive(Debug, Clone)]
pub(crate) struct Tracker {
    pub tol: f64,
    pub best: Option<(Vec<f64>, f64, f64)>,
}

impl Tracker {
    pub fn new(tol: f64) -> Self {
        Tracker { tol, best: None }
    }

    pub fn offer(&mut self, problem: &dyn NlpProblem, x: &[f64], kkt: f64) {
        let mut e = Evaluation::for_shape(problem.shape());
        problem.evaluate(x, &mut e);
        if !(e.max_violation() <= self.tol) || !e.objective.is_finite() {
            return;
        }
        if self.best.as_ref().is_none_or(|(_, f, _)| e.objective < *f) {
            self.best = Some((x.to_vec(), e.objective, kkt));
        }
    }
}

pub(crate) struct RunOutcome {
    pub x: Vec<f64>,
    pub converged: bool,
    pub kkt: f64,
    pub iterations: usize,
}

/// Augmented Lagrangian state over the ineq/eq constraints of `problem`.
/// Complementarity pairs, if any, are ignored here.
struct AugLag<'a> {
    problem: &'a dyn NlpProblem,
    fscale: f64,
    rho: f64,
    mu: Vec<f64>,
    lam: Vec<f64>,
    eval: Evaluation,
    zeros: Vec<f64>,
}

impl<'a> AugLag<'a> {
    fn new(problem: &'a dyn NlpProblem, x0: &[f64]) -> Self {
        let shape = problem.shape();
        let zeros = vec![0.0; shape.n_ineq.max(shape.n_eq).max(shape.n_comp)];
        let mut g = vec![0.0; shape.dim];
        let w = Multipliers {
            objective: 1.0,
            ineq: &zeros[..shape.n_ineq],
            eq: &zeros[..shape.n_eq],
            comp_a: &zeros[..shape.n_comp],
            comp_b: &zeros[..shape.n_comp],
        };
        problem.gradient(x0, &w, &mut g);
        let fscale = max_abs(&g).max(1.0);
        AugLag {
            problem,
            fscale,
            rho: PENALTY_INIT,
            mu: vec![0.0; shape.n_ineq],
            lam: vec![0.0; shape.n_eq],
            eval: Evaluation::for_shape(shape),
            zeros,
        }
    }

    fn value(&mut self, x: &[f64]) -> f64 {
        self.problem.evaluate(x, &mut self.eval);
        let rho = self.rho;
        let mut v = self.eval.objective / self.fscale;
        for (g, mu) in self.eval.ineq.iter().zip(&self.mu) {
            let s = (mu + rho * g).max(0.0);
            v += (s * s - mu * mu) / (2.0 * rho);
        }
        for (h, lam) in self.eval.eq.iter().zip(&self.lam) {
            v += lam * h + 0.5 * rho * h * h;
        }
        v
    }

    /// Gradient at `x`; `value(x)` must have been called last.
    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let wi: Vec<f64> = self
            .eval
            .ineq
            .iter()
            .zip(&self.mu)
            .map(|(g, mu)| (mu + self.rho * g).max(0.0))
            .collect();
        let we: Vec<f64> = self
            .eval
            .eq
            .iter()
            .zip(&self.lam)
            .map(|(h, lam)| lam + self.rho * h)
            .collect();
        let nc = self.problem.shape().n_comp;
        let w = Multipliers {
            objective: 1.0 / self.fscale,
            ineq: &wi,
            eq: &we,
            comp_a: &self.zeros[..nc],
            comp_b: &self.zeros[..nc],
        };
        self.problem.gradient(x, &w, grad);
    }

    /// Projected gradient of the plain Lagrangian with current multipliers.
    fn kkt(&self, x: &[f64]) -> f64 {
        let shape = self.problem.shape();
        let nc = shape.n_comp;
        let mut g = vec![0.0; shape.dim];
        let w = Multipliers {
            objective: 1.0 / self.fscale,
            ineq: &self.mu,
            eq: &self.lam,
            comp_a: &self.zeros[..nc],
            comp_b: &self.zeros[..nc],
        };
        self.problem.gradient(x, &w, &mut g);
        projected_step_norm(shape, x, &g, 1.0)
    }
}

fn projected_step_norm(shape: &ProblemShape, x: &[f64], g: &[f64], step: f64) -> f64 {
    let mut y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - step * b).collect();
    project(shape, &mut y);
    y.iter().zip(x).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

/// Minimizes the current augmented Lagrangian from `x` in place.
fn spg(al: &mut AugLag<'_>, x: &mut Vec<f64>, tol: f64, max_iters: usize) -> (bool, usize) {
    let shape = al.problem.shape().clone();
    let n = shape.dim;
    let mut f = al.value(x);
    let mut g = vec![0.0; n];
    al.gradient(x, &mut g);
    let mut history: VecDeque<f64> = VecDeque::with_capacity(NONMONOTONE_MEMORY);
    history.push_back(f);
    let mut bb = 1.0 / max_abs(&g).max(1e-12);
    bb = bb.min(1.0);
    let mut d = vec![0.0; n];
    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    for it in 0..max_iters {
        if projected_step_norm(&shape, x, &g, 1.0) <= tol {
            return (true, it);
        }
        for i in 0..n {
            d[i] = x[i] - bb * g[i];
        }
        project(&shape, &mut d);
        for i in 0..n {
            d[i] -= x[i];
        }
        let gd: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        if gd >= 0.0 {
            // No descent left at this precision.
            return (projected_step_norm(&shape, x, &g, 1.0) <= tol, it);
        }
        let fmax = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut a = 1.0;
        let mut fnew;
        loop {
            for i in 0..n {
                xn[i] = x[i] + a * d[i];
            }
            fnew = al.value(&xn);
            if fnew.is_finite() && fnew <= fmax + ARMIJO * a * gd {
                break;
            }
            // safeguarded quadratic backtracking
            let q = if fnew.is_finite() {
                -gd * a * a / (2.0 * (fnew - f - a * gd))
            } else {
                0.1 * a
            };
            a = q.clamp(0.1 * a, 0.5 * a);
            if a < 1e-16 {
                return (false, it);
            }
        }
        al.gradient(&xn, &mut gn);
        let mut ss = 0.0;
        let mut sy = 0.0;
        for i in 0..n {
            let s = xn[i] - x[i];
            ss += s * s;
            sy += s * (gn[i] - g[i]);
        }
        bb = if sy > 0.0 {
            (ss / sy).clamp(1e-12, 1e12)
        } else {
            1e12_f64.min(bb * 10.0)
        };
        std::mem::swap(x, &mut xn);
        std::mem::swap(&mut g, &mut gn);
        f = fnew;
        if history.len() == NONMONOTONE_MEMORY {
            history.pop_front();
        }
        history.push_back(f);
    }
    (projected_step_norm(&shape, x, &g, 1.0) <= tol, max_iters)
}

/// One augmented Lagrangian run from `x0`. Every outer iterate is offered
/// to `tracker`, judged against `original`.
pub(crate) fn run(
    problem: &dyn NlpProblem,
    original: &dyn NlpProblem,
    x0: &[f64],
    opts: &SolveOptions,
    tracker: &mut Tracker,
) -> RunOutcome {
    let mut x = x0.to_vec();
    project(problem.shape(), &mut x);
    let mut al = AugLag::new(problem, &x);
    let mut viol_prev = f64::INFINITY;
    let mut iterations = 0;
    let mut kkt = al.kkt(&x);
    tracker.offer(original, &x, kkt);
    for _ in 0..opts.max_outer_iters {
        let x_prev = x.clone();
        let (_, its) = spg(&mut al, &mut x, opts.step_tol, opts.max_inner_iters);
        iterations += its;
        problem.evaluate(&x, &mut al.eval);
        let viol = al.eval.max_ineq_violation().max(al.eval.max_eq_violation());
        for (mu, g) in al.mu.iter_mut().zip(&al.eval.ineq) {
            *mu = (*mu + al.rho * g).max(0.0);
        }
        for (lam, h) in al.lam.iter_mut().zip(&al.eval.eq) {
            *lam += al.rho * h;
        }
        kkt = al.kkt(&x);
        tracker.offer(original, &x, kkt);
        let step = x
            .iter()
            .zip(&x_prev)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()));
        let scale = 1.0 + max_abs(&x);
        if viol <= opts.constraint_tol && (kkt <= opts.step_tol || step <= opts.step_tol * scale) {
            return RunOutcome {
                x,
                converged: true,
                kkt,
                iterations,
            };
        }
        if viol > 0.25 * viol_prev {
            al.rho = (al.rho * PENALTY_GROWTH).min(PENALTY_MAX);
        }
        viol_prev = viol;
    }
    RunOutcome {
        x,
        converged: false,
        kkt,
        iterations,
    }
}

/// Random start: Dirichlet(1) on each simplex block, uniform on the
/// problem's range for free variables.
pub fn random_start(problem: &dyn NlpProblem, seed: u64) -> Vec<f64> {
    let shape = problem.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; shape.dim];
    for &(o, n) in &shape.simplex_blocks {
        let mut s = 0.0;
        for v in &mut x[o..o + n] {
            *v = -(1.0 - rng.gen::<f64>()).ln();
            s += *v;
        }
        x[o..o + n].iter_mut().for_each(|v| *v /= s);
    }
    for i in shape.free_indices() {
        let (lo, hi) = problem.free_range(i);
        x[i] = if lo < hi { rng.gen_range(lo..hi) } else { lo };
    }
    x
}

pub(crate) fn warm_start_ok(shape: &ProblemShape, x: &[f64]) -> bool {
    x.len() == shape.dim
        && x.iter().all(|v| v.is_finite())
        && shape.simplex_blocks.iter().all(|&(o, n)| {
            let b = &x[o..o + n];
            b.iter().all(|v| *v >= -WARM_START_TOL)
                && (b.iter().sum::<f64>() - 1.0).abs() <= WARM_START_TOL
        })
}

/// Per-start outcome, merged into a [`SolveResult`] by [`select`].
pub(crate) struct StartOutcome {
    pub x: Vec<f64>,
    pub status: SolveStatus,
    pub kkt: f64,
    pub iterations: usize,
    pub best: Option<(Vec<f64>, f64, f64)>,
    pub stages: usize,
    pub final_t: f64,
}

pub(crate) fn infeasible_start(problem: &dyn NlpProblem, x: &[f64]) -> SolveResult {
    let mut e = Evaluation::for_shape(problem.shape());
    let x: Vec<f64> = if x.len() == problem.shape().dim {
        x.to_vec()
    } else {
        vec![0.0; problem.shape().dim]
    };
    problem.evaluate(&x, &mut e);
    SolveResult {
        point: x,
        objective: e.objective,
        kkt_residual: f64::INFINITY,
        max_ineq_violation: e.max_ineq_violation(),
        max_eq_violation: e.max_eq_violation(),
        max_comp_violation: e.max_comp_violation(),
        status: SolveStatus::InfeasibleStart,
        iterations: 0,
        restarts_used: 0,
        restart_objectives: Vec::new(),
        relaxation_stages: 0,
        final_relaxation: 0.0,
    }
}

/// Runs `one` from the warm start, or from `multistart` seeded random
/// points, and keeps the best feasible outcome (lowest start index on ties).
pub(crate) fn multistart<F>(problem: &dyn NlpProblem, opts: &SolveOptions, one: F) -> SolveResult
where
    F: Fn(Vec<f64>) -> StartOutcome + Sync,
{
    let starts: Vec<Vec<f64>> = match &opts.warm_start {
        Some(w) => vec![w.clone()],
        None => (0..opts.multistart as u64)
            .map(|i| random_start(problem, opts.seed.wrapping_add(i)))
            .collect(),
    };
    let outcomes: Vec<StartOutcome> = starts.into_par_iter().map(&one).collect();
    let restart_objectives: Vec<Option<f64>> = outcomes
        .iter()
        .map(|o| o.best.as_ref().map(|b| b.1))
        .collect();

    let mut pick: Option<usize> = None;
    for (i, o) in outcomes.iter().enumerate() {
        if let Some((_, f, _)) = &o.best {
            if pick.is_none_or(|p| *f < outcomes[p].best.as_ref().expect("picked has best").1) {
                pick = Some(i);
            }
        }
    }
    let restarts_used = outcomes.len();
    let (x, status, kkt, o) = match pick {
        Some(i) => {
            let o = &outcomes[i];
            let (x, _, kkt) = o.best.clone().expect("picked has best");
            (x, o.status, kkt, o)
        }
        None => {
            // nothing feasible: report the least violated final iterate
            let mut e = Evaluation::for_shape(problem.shape());
            let mut best = 0;
            let mut best_v = f64::INFINITY;
            for (i, o) in outcomes.iter().enumerate() {
                problem.evaluate(&o.x, &mut e);
                if e.max_violation() < best_v {
                    best_v = e.max_violation();
                    best = i;
                }
            }
            let o = &outcomes[best];
            let status = if o.status == SolveStatus::Converged {
                SolveStatus::MaxIters
            } else {
                o.status
            };
            (o.x.clone(), status, o.kkt, o)
        }
    };
    let mut e = Evaluation::for_shape(problem.shape());
    problem.evaluate(&x, &mut e);
    SolveResult {
        objective: e.objective,
        kkt_residual: kkt,
        max_ineq_violation: e.max_ineq_violation(),
        max_eq_violation: e.max_eq_violation(),
        max_comp_violation: e.max_comp_violation(),
        status,
        iterations: o.iterations,
        restarts_used,
        restart_objectives,
        relaxation_stages: o.stages,
        final_relaxation: o.final_t,
        point: x,
    }
}

/// Minimizes a problem without complementarity pairs. With a warm start
/// the solve is a single run from it; otherwise `multistart` seeded random
/// starts run and the best feasible point is returned.
pub fn solve(problem: &dyn NlpProblem, opts: &SolveOptions) -> SolveResult {
    if let Some(w) = &opts.warm_start {
        if !warm_start_ok(problem.shape(), w) {
            return infeasible_start(problem, w);
        }
    }
    multistart(problem, opts, |x0| {
        let mut tracker = Tracker::new(opts.constraint_tol);
        let out = run(problem, problem, &x0, opts, &mut tracker);
        StartOutcome {
            status: if out.converged {
                SolveStatus::Converged
            } else {
                SolveStatus::MaxIters
            },
            x: out.x,
            kkt: out.kkt,
            iterations: out.iterations,
            best: tracker.best,
            stages: 0,
            final_t: 0.0,
        }
    })
}
