//! Smooth nonlinear programming over products of probability simplices and
//! free variables, with inequality, equality and complementarity
//! constraints.

mod mpcc;
mod solver;

pub use mpcc::solve_mpcc;
pub use solver::{random_start, solve};

use serde::Serialize;

/// Sizes and variable structure of a problem. Variables outside every
/// simplex block are free.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProblemShape {
    pub dim: usize,
    /// `(offset, size)` groups constrained to the probability simplex.
    pub simplex_blocks: Vec<(usize, usize)>,
    pub n_ineq: usize,
    pub n_eq: usize,
    pub n_comp: usize,
}

impl ProblemShape {
    /// Indices of variables not covered by any simplex block.
    pub fn free_indices(&self) -> Vec<usize> {
        let mut covered = vec![false; self.dim];
        for &(o, n) in &self.simplex_blocks {
            covered[o..o + n].iter_mut().for_each(|c| *c = true);
        }
        (0..self.dim).filter(|&i| !covered[i]).collect()
    }
}

/// Function values at a point: `g(x) <= 0`, `h(x) = 0`, and pairs
/// `a(x) >= 0, b(x) >= 0, a(x) b(x) = 0`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub ineq: Vec<f64>,
    pub eq: Vec<f64>,
    pub comp_a: Vec<f64>,
    pub comp_b: Vec<f64>,
}

impl Evaluation {
    pub fn for_shape(shape: &ProblemShape) -> Self {
        Evaluation {
            objective: 0.0,
            ineq: vec![0.0; shape.n_ineq],
            eq: vec![0.0; shape.n_eq],
            comp_a: vec![0.0; shape.n_comp],
            comp_b: vec![0.0; shape.n_comp],
        }
    }

    pub fn max_ineq_violation(&self) -> f64 {
        self.ineq.iter().fold(0.0, |m, g| m.max(*g))
    }

    pub fn max_eq_violation(&self) -> f64 {
        self.eq.iter().fold(0.0, |m, h| m.max(h.abs()))
    }

    /// `max(0, -a, -b, min(a, b))` over all pairs.
    pub fn max_comp_violation(&self) -> f64 {
        self.comp_a
            .iter()
            .zip(&self.comp_b)
            .fold(0.0, |m, (&a, &b)| m.max(-a).max(-b).max(a.min(b)))
    }

    pub fn max_violation(&self) -> f64 {
        self.max_ineq_violation()
            .max(self.max_eq_violation())
            .max(self.max_comp_violation())
    }
}

/// Weights of a vector-Jacobian product: the gradient routine adds
/// `objective * grad f + sum ineq_i grad g_i + ...` into its output.
#[derive(Debug, Clone, Copy)]
pub struct Multipliers<'a> {
    pub objective: f64,
    pub ineq: &'a [f64],
    pub eq: &'a [f64],
    pub comp_a: &'a [f64],
    pub comp_b: &'a [f64],
}

/// A smooth program. Implementations must be pure.
pub trait NlpProblem: Sync {
    fn shape(&self) -> &ProblemShape;

    fn evaluate(&self, x: &[f64], out: &mut Evaluation);

    /// Adds the weighted sum of gradients into `grad`.
    fn gradient(&self, x: &[f64], weights: &Multipliers<'_>, grad: &mut [f64]);

    /// Sampling range of free variable `i` for random restarts.
    fn free_range(&self, _i: usize) -> (f64, f64) {
        (0.0, 100.0)
    }
}

type EvalFn = dyn Fn(&[f64], &mut Evaluation) + Sync;
type GradFn = dyn Fn(&[f64], &Multipliers<'_>, &mut [f64]) + Sync;

/// Problem assembled from closures.
pub struct FnProblem {
    pub shape: ProblemShape,
    eval: Box<EvalFn>,
    grad: Box<GradFn>,
}

impl FnProblem {
    pub fn new(
        shape: ProblemShape,
        eval: impl Fn(&[f64], &mut Evaluation) + Sync + 'static,
        grad: impl Fn(&[f64], &Multipliers<'_>, &mut [f64]) + Sync + 'static,
    ) -> Self {
        FnProblem {
            shape,
            eval: Box::new(eval),
            grad: Box::new(grad),
        }
    }
}

impl NlpProblem for FnProblem {
    fn shape(&self) -> &ProblemShape {
        &self.shape
    }
    fn evaluate(&self, x: &[f64], out: &mut Evaluation) {
        (self.eval)(x, out)
    }
    fn gradient(&self, x: &[f64], weights: &Multipliers<'_>, grad: &mut [f64]) {
        (self.grad)(x, weights, grad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Stationarity and step-size tolerance.
    pub step_tol: f64,
    /// Largest accepted constraint violation.
    pub constraint_tol: f64,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    /// Number of random starts when no warm start is given.
    pub multistart: usize,
    pub seed: u64,
    pub relax_t0: f64,
    pub relax_sigma: f64,
    pub warm_start: Option<Vec<f64>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            step_tol: 1e-6,
            constraint_tol: 1e-6,
            max_outer_iters: 60,
            max_inner_iters: 5000,
            multistart: 10,
            seed: 0,
            relax_t0: 0.1,
            relax_sigma: 0.2,
            warm_start: None,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.step_tol > 0.0 && self.constraint_tol > 0.0) {
            return Err("tolerances must be positive".into());
        }
        if !(self.relax_sigma > 0.0 && self.relax_sigma < 1.0) {
            return Err(format!(
                "relax_sigma must lie in (0,1), got {}",
                self.relax_sigma
            ));
        }
        if !(self.relax_t0 > 0.0) {
            return Err(format!("relax_t0 must be positive, got {}", self.relax_t0));
        }
        if self.multistart == 0 {
            return Err("multistart must be at least 1".into());
        }
        Ok(())
    }

    pub fn with_warm_start(&self, x: Vec<f64>) -> Self {
        SolveOptions {
            warm_start: Some(x),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
    InfeasibleStart,
    RelaxationStalled,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIters => "max_iters",
            SolveStatus::InfeasibleStart => "infeasible_start",
            SolveStatus::RelaxationStalled => "relaxation_stalled",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveResult {
    #[serde(skip)]
    pub point: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub max_ineq_violation: f64,
    pub max_eq_violation: f64,
    pub max_comp_violation: f64,
    pub status: SolveStatus,
    /// Inner iterations of the selected run.
    pub iterations: usize,
    pub restarts_used: usize,
    /// Best feasible objective of each start, `None` if it found nothing
    /// feasible.
    pub restart_objectives: Vec<Option<f64>>,
    /// Relaxation stages and final relaxation parameter (complementarity
    /// problems only).
    pub relaxation_stages: usize,
    pub final_relaxation: f64,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Euclidean projection onto `{x >= 0, sum x = 1}`.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    project_simplex_in_place(&mut out);
    out
}

pub(crate) fn project_simplex_in_place(v: &mut [f64]) {
    assert!(!v.is_empty(), "projection of an empty vector");
    if v.len() == 1 {
        v[0] = 1.0;
        return;
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
    // Remove rounding drift so the sum is 1 to machine precision.
    let s: f64 = v.iter().sum();
    if s > 0.0 && s != 1.0 {
        let k = v
            .iter()
            .enumerate()
            .fold(0, |k, (i, x)| if *x > v[k] { i } else { k });
        v[k] += 1.0 - s;
        if v[k] < 0.0 {
            v[k] = 0.0;
        }
    }
}

/// Central finite differences against the analytic gradient of the
/// objective and of every constraint function. Returns the largest
/// discrepancy relative to `max(1, |analytic|)`.
pub fn grad_check(problem: &dyn NlpProblem, x: &[f64], h: f64) -> f64 {
    let shape = problem.shape();
    let n = shape.dim;
    let mut plus = Evaluation::for_shape(shape);
    let mut minus = Evaluation::for_shape(shape);
    let n_fun = 1 + shape.n_ineq + shape.n_eq + 2 * shape.n_comp;
    let flatten = |e: &Evaluation| -> Vec<f64> {
        let mut v = Vec::with_capacity(n_fun);
        v.push(e.objective);
        v.extend(&e.ineq);
        v.extend(&e.eq);
        v.extend(&e.comp_a);
        v.extend(&e.comp_b);
        v
    };
    let mut fd = vec![vec![0.0; n]; n_fun];
    let mut xp = x.to_vec();
    for i in 0..n {
        let orig = xp[i];
        xp[i] = orig + h;
        problem.evaluate(&xp, &mut plus);
        xp[i] = orig - h;
        problem.evaluate(&xp, &mut minus);
        xp[i] = orig;
        for (k, (p, m)) in flatten(&plus).into_iter().zip(flatten(&minus)).enumerate() {
            fd[k][i] = (p - m) / (2.0 * h);
        }
    }
    let mut worst: f64 = 0.0;
    let mut unit = vec![0.0; n_fun];
    for k in 0..n_fun {
        unit.iter_mut().for_each(|u| *u = 0.0);
        unit[k] = 1.0;
        let (obj, rest) = unit.split_at(1);
        let (ineq, rest) = rest.split_at(shape.n_ineq);
        let (eq, rest) = rest.split_at(shape.n_eq);
        let (ca, cb) = rest.split_at(shape.n_comp);
        let w = Multipliers {
            objective: obj[0],
            ineq,
            eq,
            comp_a: ca,
            comp_b: cb,
        };
        let mut g = vec![0.0; n];
        problem.gradient(x, &w, &mut g);
        for i in 0..n {
            worst = worst.max((fd[k][i] - g[i]).abs() / g[i].abs().max(1.0));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex(&[0.3, 0.7]), vec![0.3, 0.7]);
        assert_eq!(project_simplex(&[0.8, 0.8]), vec![0.5, 0.5]);
        assert_eq!(project_simplex(&[1.5, -0.2]), vec![1.0, 0.0]);
        assert_eq!(project_simplex(&[-3.0]), vec![1.0]);
    }

    fn quadratic(target: f64) -> FnProblem {
        let shape = ProblemShape {
            dim: 2,
            simplex_blocks: vec![(0, 2)],
            n_ineq: 0,
            n_eq: 0,
            n_comp: 0,
        };
        FnProblem::new(
            shape,
            move |x, e| e.objective = (x[0] - target).powi(2),
            move |x, w, g| g[0] += w.objective * 2.0 * (x[0] - target),
        )
    }

    #[test]
    fn grad_check_catches_corruption() {
        let good = quadratic(0.2);
        assert!(grad_check(&good, &[0.6, 0.4], 1e-5) < 1e-9);
        let shape = good.shape.clone();
        let bad = FnProblem::new(
            shape,
            |x, e| e.objective = (x[0] - 0.2).powi(2),
            |x, w, g| g[0] += w.objective * 3.0 * (x[0] - 0.2),
        );
        assert!(grad_check(&bad, &[0.6, 0.4], 1e-5) > 1e-2);
    }

    #[test]
    fn grad_check_affine_constraint() {
        let shape = ProblemShape {
            dim: 3,
            simplex_blocks: vec![],
            n_ineq: 1,
            n_eq: 1,
            n_comp: 0,
        };
        let p = FnProblem::new(
            shape,
            |x, e| {
                e.objective = 0.0;
                e.ineq[0] = 2.0 * x[0] - x[1] + 0.5;
                e.eq[0] = x[2] - 3.0 * x[1];
            },
            |_, w, g| {
                g[0] += 2.0 * w.ineq[0];
                g[1] += -w.ineq[0] - 3.0 * w.eq[0];
                g[2] += w.eq[0];
            },
        );
        assert!(grad_check(&p, &[0.3, -1.2, 7.0], 1e-5) <= 1e-9);
    }

    #[test]
    fn violations() {
        let e = Evaluation {
            objective: 0.0,
            ineq: vec![-1.0, 0.25],
            eq: vec![-0.5],
            comp_a: vec![0.0, 0.3, -0.1],
            comp_b: vec![2.0, 0.2, 5.0],
        };
        assert_eq!(e.max_ineq_violation(), 0.25);
        assert_eq!(e.max_eq_violation(), 0.5);
        assert_eq!(e.max_comp_violation(), 0.2);
    }

    proptest! {
        #[test]
        fn projection_properties(v in prop::collection::vec(-5.0f64..5.0, 1..12),
                                 q in prop::collection::vec(0.0f64..1.0, 12)) {
            let p = project_simplex(&v);
            prop_assert!(p.iter().all(|x| *x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let again = project_simplex(&p);
            for (a, b) in p.iter().zip(&again) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
            // a point of the simplex is never farther from the projection
            let mut s: Vec<f64> = q[..v.len()].iter().map(|x| x + 1e-3).collect();
            let t: f64 = s.iter().sum();
            s.iter_mut().for_each(|x| *x /= t);
            let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            prop_assert!(dist(&p, &s) <= dist(&v, &s) + 1e-12);
        }
    }
}
