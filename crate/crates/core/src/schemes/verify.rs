use serde::Serialize;

use crate::assignment::{
    expected_route_times, marginal_regret, PolicyMode, RoutingPolicy, ScenarioLoad, UeReference,
};
use crate::netmodel::ProblemInstance;

use super::{PaymentSchedule, Scheme, SchemeResult};

/// Routes carrying less than this share are skipped by the robust Pareto
/// check.
pub const ROBUST_ALPHA_MIN: f64 = 1e-6;

/// Largest accepted marginal regret of a UE policy (hours).
pub const REGRET_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub constraint: f64,
    pub cpurr: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            constraint: 1e-6,
            cpurr: 5e-5,
        }
    }
}

/// Mechanism residuals recomputed from the policy and payments alone. All
/// residuals are clamped at zero; time residuals are in hours, the budget
/// residual in currency.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub pareto_exante_resid: f64,
    pub truthful_exante_resid: f64,
    pub budget_resid: f64,
    pub robust_pareto_resid: f64,
    pub truthful_expost_resid: f64,
    /// Complementarity exceedance of scenario-independent equilibria.
    pub ue_comp_resid: Option<f64>,
    pub marginal_regret: Option<f64>,
    /// `max(1, max_j sum_c p_c A_cj)`, hours.
    pub time_scale: f64,
    /// `max(1, E[T_mon,UE])`, currency.
    pub money_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub property: &'static str,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn new(property: &'static str, residual: f64, tolerance: f64) -> Self {
        Check {
            property,
            residual,
            tolerance,
            pass: residual <= tolerance,
        }
    }
}

impl VerificationReport {
    /// Checks required of `scheme`. SO has none.
    pub fn checks(&self, scheme: Scheme, tol: &Tolerances) -> Vec<Check> {
        let ct = tol.constraint;
        let mut out = Vec::new();
        let ex_ante = |out: &mut Vec<Check>| {
            out.push(Check::new(
                "pareto_exante",
                self.pareto_exante_resid,
                ct * self.time_scale,
            ));
            out.push(Check::new(
                "truthful_exante",
                self.truthful_exante_resid,
                ct * self.time_scale,
            ));
            out.push(Check::new(
                "budget",
                self.budget_resid,
                ct * self.money_scale,
            ));
        };
        match scheme {
            Scheme::Ue => {
                out.push(Check::new(
                    "ue_comp",
                    self.ue_comp_resid.unwrap_or(f64::INFINITY),
                    ct,
                ));
                out.push(Check::new(
                    "marginal_regret",
                    self.marginal_regret.unwrap_or(f64::INFINITY),
                    REGRET_TOL,
                ));
            }
            Scheme::So => {}
            Scheme::Ops | Scheme::Aops => ex_ante(&mut out),
            Scheme::AopsEpt => {
                ex_ante(&mut out);
                out.push(Check::new("robust_pareto", self.robust_pareto_resid, ct));
                out.push(Check::new(
                    "truthful_expost",
                    self.truthful_expost_resid,
                    ct,
                ));
            }
            Scheme::Cpurr => {
                out.push(Check::new(
                    "ue_comp",
                    self.ue_comp_resid.unwrap_or(f64::INFINITY),
                    tol.cpurr,
                ));
                out.push(Check::new(
                    "budget",
                    self.budget_resid,
                    tol.cpurr * self.money_scale,
                ));
            }
        }
        out
    }
}

/// Recomputes every residual of `result` from its policy and payments.
pub fn verify(
    inst: &ProblemInstance,
    result: &SchemeResult,
    ue: &UeReference,
) -> VerificationReport {
    verify_parts(
        inst,
        result.scheme,
        &result.policy,
        result.payments.as_ref(),
        ue,
    )
}

pub(crate) fn verify_parts(
    inst: &ProblemInstance,
    scheme: Scheme,
    policy: &RoutingPolicy,
    payments: Option<&PaymentSchedule>,
    ue: &UeReference,
) -> VerificationReport {
    let zero;
    let pay = match payments {
        Some(p) => p,
        None => {
            zero = PaymentSchedule::zero(inst);
            &zero
        }
    };
    let dep = policy.to_scenario_dependent();
    let n_cls = inst.n_classes();
    let n_od = inst.n_od();
    let route_times: Vec<Vec<f64>> = (0..inst.n_scenarios())
        .map(|c| ScenarioLoad::compute(inst, &dep.layout(), dep.as_slice(), c).route_times)
        .collect();

    // cost[c][j][i][k]: mean time plus payments in hours at VOT s_i of a
    // class-i driver routed and charged as class k
    let cost = |c: usize, j: usize, i: usize, k: usize| -> f64 {
        let s = inst.vot(i);
        inst.route_range(j)
            .map(|g| dep.alpha(c, k, g) * (route_times[c][g] + pay.pi(c, k, g) / s))
            .sum()
    };

    let mut pareto: f64 = 0.0;
    let mut truthful: f64 = 0.0;
    let mut expost: f64 = 0.0;
    let mut robust: f64 = 0.0;
    let mut budget = 0.0;
    for j in 0..n_od {
        let a_bar = ue.expected_a(inst, j);
        for i in 0..n_cls {
            let lhs: f64 = (0..inst.n_scenarios())
                .map(|c| inst.probability(c) * cost(c, j, i, i))
                .sum();
            pareto = pareto.max(lhs - a_bar);
            for k in (0..n_cls).filter(|&k| k != i) {
                let mut rhs = 0.0;
                for c in 0..inst.n_scenarios() {
                    let (own, other) = (cost(c, j, i, i), cost(c, j, i, k));
                    rhs += inst.probability(c) * other;
                    expost = expost.max(own - other);
                }
                truthful = truthful.max(lhs - rhs);
            }
        }
    }
    for c in 0..inst.n_scenarios() {
        let p = inst.probability(c);
        for j in 0..n_od {
            for w in 0..n_cls {
                let d = inst.demand(c, j, w);
                let s = inst.vot(w);
                for g in inst.route_range(j) {
                    let a = dep.alpha(c, w, g);
                    budget += p * d * a * pay.pi(c, w, g);
                    if a > ROBUST_ALPHA_MIN {
                        robust =
                            robust.max(route_times[c][g] + pay.pi(c, w, g) / s - ue.a_ue[c][j]);
                    }
                }
            }
        }
    }

    let equilibrium = matches!(scheme, Scheme::Ue | Scheme::Cpurr)
        && policy.mode() == PolicyMode::ScenarioIndependent;
    let ue_comp_resid = equilibrium.then(|| {
        let f = expected_route_times(inst, &policy.layout(), policy.as_slice());
        let mut worst: f64 = 0.0;
        for j in 0..n_od {
            for w in 0..n_cls {
                let fcp: Vec<f64> = inst
                    .route_range(j)
                    .map(|g| f[g] + pay.pi(0, w, g) / inst.vot(w))
                    .collect();
                let best = fcp.iter().copied().fold(f64::INFINITY, f64::min);
                for (r, g) in inst.route_range(j).enumerate() {
                    worst = worst.max(policy.alpha(0, w, g).min(fcp[r] - best));
                }
            }
        }
        worst
    });

    VerificationReport {
        pareto_exante_resid: pareto.max(0.0),
        truthful_exante_resid: truthful.max(0.0),
        budget_resid: budget.abs(),
        robust_pareto_resid: robust.max(0.0),
        truthful_expost_resid: expost.max(0.0),
        ue_comp_resid,
        marginal_regret: (scheme == Scheme::Ue).then(|| marginal_regret(inst, policy)),
        time_scale: ue.time_scale(inst),
        money_scale: ue.money_scale(),
    }
}
