//! Scholtes relaxation for complementarity constraints.

use super::solver::{infeasible_start, multistart, run, warm_start_ok, StartOutcome, Tracker};
use super::{
    Evaluation, Multipliers, NlpProblem, ProblemShape, SolveOptions, SolveResult, SolveStatus,
};

/// Relaxation parameters below this count as underflow.
const RELAX_FLOOR: f64 = 1e-14;

/// `problem` with each pair `(a, b)` replaced by the inequalities
/// `-a - t <= 0`, `-b - t <= 0`, `a b - t <= 0`.
struct Relaxed<'a> {
    inner: &'a dyn NlpProblem,
    shape: ProblemShape,
    t: f64,
}

impl<'a> Relaxed<'a> {
    fn new(inner: &'a dyn NlpProblem, t: f64) -> Self {
        let s = inner.shape();
        let shape = ProblemShape {
            n_ineq: s.n_ineq + 3 * s.n_comp,
            n_comp: 0,
            ..s.clone()
        };
        Relaxed { inner, shape, t }
    }
}

impl NlpProblem for Relaxed<'_> {
    fn shape(&self) -> &ProblemShape {
        &self.shape
    }

    fn evaluate(&self, x: &[f64], out: &mut Evaluation) {
        let s = self.inner.shape();
        let mut e = Evaluation::for_shape(s);
        self.inner.evaluate(x, &mut e);
        out.objective = e.objective;
        out.ineq[..s.n_ineq].copy_from_slice(&e.ineq);
        for (i, (a, b)) in e.comp_a.iter().zip(&e.comp_b).enumerate() {
            let k = s.n_ineq + 3 * i;
            out.ineq[k] = -a - self.t;
            out.ineq[k + 1] = -b - self.t;
            out.ineq[k + 2] = a * b - self.t;
        }
        out.eq.copy_from_slice(&e.eq);
    }

    fn gradient(&self, x: &[f64], w: &Multipliers<'_>, grad: &mut [f64]) {
        let s = self.inner.shape();
        let mut e = Evaluation::for_shape(s);
        self.inner.evaluate(x, &mut e);
        let mut wa = vec![0.0; s.n_comp];
        let mut wb = vec![0.0; s.n_comp];
        for i in 0..s.n_comp {
            let k = s.n_ineq + 3 * i;
            wa[i] = -w.ineq[k] + w.ineq[k + 2] * e.comp_b[i];
            wb[i] = -w.ineq[k + 1] + w.ineq[k + 2] * e.comp_a[i];
        }
        let inner = Multipliers {
            objective: w.objective,
            ineq: &w.ineq[..s.n_ineq],
            eq: w.eq,
            comp_a: &wa,
            comp_b: &wb,
        };
        self.inner.gradient(x, &inner, grad);
    }

    fn free_range(&self, i: usize) -> (f64, f64) {
        self.inner.free_range(i)
    }
}

/// `problem` with each pair fixed to one branch: the smaller side at the
/// current point becomes an equality `= 0`, the other an inequality
/// `>= 0`.
struct Branch<'a> {
    inner: &'a dyn NlpProblem,
    shape: ProblemShape,
    /// `true` where `b = 0` is imposed, `false` where `a = 0` is.
    zero_b: Vec<bool>,
}

impl<'a> Branch<'a> {
    fn at(inner: &'a dyn NlpProblem, e: &Evaluation) -> Self {
        let s = inner.shape();
        let shape = ProblemShape {
            n_ineq: s.n_ineq + s.n_comp,
            n_eq: s.n_eq + s.n_comp,
            n_comp: 0,
            ..s.clone()
        };
        let zero_b = e.comp_a.iter().zip(&e.comp_b).map(|(a, b)| a > b).collect();
        Branch {
            inner,
            shape,
            zero_b,
        }
    }
}

impl NlpProblem for Branch<'_> {
    fn shape(&self) -> &ProblemShape {
        &self.shape
    }

    fn evaluate(&self, x: &[f64], out: &mut Evaluation) {
        let s = self.inner.shape();
        let mut e = Evaluation::for_shape(s);
        self.inner.evaluate(x, &mut e);
        out.objective = e.objective;
        out.ineq[..s.n_ineq].copy_from_slice(&e.ineq);
        out.eq[..s.n_eq].copy_from_slice(&e.eq);
        for (i, &zb) in self.zero_b.iter().enumerate() {
            let (zero, free) = if zb {
                (e.comp_b[i], e.comp_a[i])
            } else {
                (e.comp_a[i], e.comp_b[i])
            };
            out.ineq[s.n_ineq + i] = -free;
            out.eq[s.n_eq + i] = zero;
        }
    }

    fn gradient(&self, x: &[f64], w: &Multipliers<'_>, grad: &mut [f64]) {
        let s = self.inner.shape();
        let mut wa = vec![0.0; s.n_comp];
        let mut wb = vec![0.0; s.n_comp];
        for (i, &zb) in self.zero_b.iter().enumerate() {
            let (wz, wf) = (w.eq[s.n_eq + i], -w.ineq[s.n_ineq + i]);
            if zb {
                (wa[i], wb[i]) = (wf, wz);
            } else {
                (wa[i], wb[i]) = (wz, wf);
            }
        }
        let inner = Multipliers {
            objective: w.objective,
            ineq: &w.ineq[..s.n_ineq],
            eq: &w.eq[..s.n_eq],
            comp_a: &wa,
            comp_b: &wb,
        };
        self.inner.gradient(x, &inner, grad);
    }

    fn free_range(&self, i: usize) -> (f64, f64) {
        self.inner.free_range(i)
    }
}

/// Solves a program with complementarity pairs through a sequence of
/// relaxed programs with `t_k = relax_t0 * relax_sigma^k`, each started
/// from the previous solution, until the pairs hold within
/// `constraint_tol`. Once the relaxation is tighter than `relax_t0`, each
/// stage that misses the tolerance is followed by a polish on the branch
/// the stage identified, since `a b <= t` alone bounds `min(a, b)` only
/// loosely when one side is small.
pub fn solve_mpcc(problem: &dyn NlpProblem, opts: &SolveOptions) -> SolveResult {
    if let Some(w) = &opts.warm_start {
        if !warm_start_ok(problem.shape(), w) {
            return infeasible_start(problem, w);
        }
    }
    multistart(problem, opts, |x0| {
        let mut tracker = Tracker::new(opts.constraint_tol);
        let mut x = x0;
        let mut t = opts.relax_t0;
        let mut stages = 0;
        let mut kkt;
        let mut iterations = 0;
        let mut e = Evaluation::for_shape(problem.shape());
        let status = loop {
            let relaxed = Relaxed::new(problem, t);
            let out = run(&relaxed, problem, &x, opts, &mut tracker);
            stages += 1;
            iterations += out.iterations;
            kkt = out.kkt;
            x = out.x;
            problem.evaluate(&x, &mut e);
            if e.max_violation() <= opts.constraint_tol {
                break if out.converged {
                    SolveStatus::Converged
                } else {
                    SolveStatus::MaxIters
                };
            }
            if stages > 1 {
                let branch = Branch::at(problem, &e);
                let polished = run(&branch, problem, &x, opts, &mut tracker);
                iterations += polished.iterations;
                problem.evaluate(&polished.x, &mut e);
                if e.max_violation() <= opts.constraint_tol {
                    kkt = polished.kkt;
                    x = polished.x;
                    break if polished.converged {
                        SolveStatus::Converged
                    } else {
                        SolveStatus::MaxIters
                    };
                }
                problem.evaluate(&x, &mut e);
            }
            t *= opts.relax_sigma;
            if t < RELAX_FLOOR {
                break SolveStatus::RelaxationStalled;
            }
        };
        StartOutcome {
            x,
            status,
            kkt,
            iterations,
            best: tracker.best,
            stages,
            final_t: t,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::{grad_check, FnProblem};

    /// min (x - 1)^2 + (y - 1)^2 s.t. 0 <= x ⊥ y >= 0: minima at (1, 0)
    /// and (0, 1).
    fn corner() -> FnProblem {
        let shape = ProblemShape {
            dim: 2,
            simplex_blocks: vec![],
            n_ineq: 0,
            n_eq: 0,
            n_comp: 1,
        };
        FnProblem::new(
            shape,
            |x, e| {
                e.objective = (x[0] - 1.0).powi(2) + (x[1] - 1.0).powi(2);
                e.comp_a[0] = x[0];
                e.comp_b[0] = x[1];
            },
            |x, w, g| {
                g[0] += w.objective * 2.0 * (x[0] - 1.0) + w.comp_a[0];
                g[1] += w.objective * 2.0 * (x[1] - 1.0) + w.comp_b[0];
            },
        )
    }

    #[test]
    fn complementarity_corner() {
        let p = corner();
        let r = solve_mpcc(
            &p,
            &SolveOptions {
                multistart: 4,
                ..Default::default()
            },
        );
        assert!(r.converged(), "{r:?}");
        assert!(r.max_comp_violation <= 1e-6);
        assert!(r.point[0].min(r.point[1]) <= 1e-6);
        assert!((r.objective - 1.0).abs() < 1e-5, "{}", r.objective);
        assert!(r.relaxation_stages >= 2);
    }

    #[test]
    fn feasible_zero_component() {
        // a is forced to zero by the objective; b is free to stay positive
        let shape = ProblemShape {
            dim: 2,
            simplex_blocks: vec![],
            n_ineq: 0,
            n_eq: 0,
            n_comp: 1,
        };
        let p = FnProblem::new(
            shape,
            |x, e| {
                e.objective = x[0] * x[0] + (x[1] - 2.0).powi(2);
                e.comp_a[0] = x[0];
                e.comp_b[0] = x[1];
            },
            |x, w, g| {
                g[0] += w.objective * 2.0 * x[0] + w.comp_a[0];
                g[1] += w.objective * 2.0 * (x[1] - 2.0) + w.comp_b[0];
            },
        );
        let r = solve_mpcc(
            &p,
            &SolveOptions {
                multistart: 2,
                ..Default::default()
            },
        );
        assert!(r.point[0].min(r.point[1]) <= 1e-6);
        assert!((r.point[1] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn relaxed_gradients() {
        let p = corner();
        let r = Relaxed::new(&p, 0.01);
        assert!(grad_check(&r, &[0.3, 0.8], 1e-5) < 1e-8);
        let mut e = Evaluation::for_shape(p.shape());
        p.evaluate(&[0.3, 0.8], &mut e);
        let b = Branch::at(&p, &e);
        assert_eq!(b.zero_b, vec![false]);
        assert!(grad_check(&b, &[0.3, 0.8], 1e-5) < 1e-8);
    }
}
