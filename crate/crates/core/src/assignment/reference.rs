use serde::Serialize;

use crate::netmodel::ProblemInstance;

use super::cost::{expected_route_times, flow_metrics, ScenarioLoad};
use super::policy::{PolicyMode, RoutingPolicy};
use super::AssignmentError;

/// Largest tolerated cross-class spread of `A^UE`, relative to
/// `max(1, A^UE)`.
pub const UE_CLASS_SPREAD_TOL: f64 = 1e-6;

/// Averages at the user equilibrium that every pricing scheme is measured
/// against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UeReference {
    /// `A^UE[c][j]` (hours).
    pub a_ue: Vec<Vec<f64>>,
    pub e_t_mon_ue: f64,
    #[serde(skip)]
    pub policy: RoutingPolicy,
    /// Largest difference between class-specific averages; zero for a
    /// class-anonymous equilibrium.
    pub class_spread: f64,
}

impl UeReference {
    /// `sum_c p_c A^UE[c][j]`.
    pub fn expected_a(&self, inst: &ProblemInstance, j: usize) -> f64 {
        (0..inst.n_scenarios())
            .map(|c| inst.probability(c) * self.a_ue[c][j])
            .sum()
    }

    /// Natural scale of time-valued residuals.
    pub fn time_scale(&self, inst: &ProblemInstance) -> f64 {
        (0..inst.n_od())
            .map(|j| self.expected_a(inst, j))
            .fold(1.0, f64::max)
    }

    /// Natural scale of money-valued residuals.
    pub fn money_scale(&self) -> f64 {
        self.e_t_mon_ue.abs().max(1.0)
    }
}

/// Builds the UE reference. Class-specific averages are combined with
/// demand weights; a spread beyond [`UE_CLASS_SPREAD_TOL`] is an error.
pub fn ue_reference(
    inst: &ProblemInstance,
    ue_policy: &RoutingPolicy,
) -> Result<UeReference, AssignmentError> {
    if ue_policy.mode() != PolicyMode::ScenarioIndependent {
        return Err(AssignmentError::NotScenarioIndependent);
    }
    let layout = ue_policy.layout();
    let alpha = ue_policy.as_slice();
    let mut a_ue = vec![vec![0.0; inst.n_od()]; inst.n_scenarios()];
    let mut spread: f64 = 0.0;
    for c in 0..inst.n_scenarios() {
        let load = ScenarioLoad::compute(inst, &layout, alpha, c);
        for j in 0..inst.n_od() {
            let per_class: Vec<f64> = (0..inst.n_classes())
                .map(|w| {
                    inst.route_range(j)
                        .map(|g| alpha[layout.index(c, w, g)] * load.route_times[g])
                        .sum()
                })
                .collect();
            let weights: Vec<f64> = (0..inst.n_classes())
                .map(|w| inst.demand(c, j, w))
                .collect();
            let total: f64 = weights.iter().sum();
            let avg = if total > 0.0 {
                per_class
                    .iter()
                    .zip(&weights)
                    .map(|(a, d)| a * d)
                    .sum::<f64>()
                    / total
            } else {
                per_class.iter().sum::<f64>() / per_class.len() as f64
            };
            let hi = per_class.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = per_class.iter().copied().fold(f64::INFINITY, f64::min);
            let s = hi - lo;
            spread = spread.max(s);
            if s > UE_CLASS_SPREAD_TOL * avg.abs().max(1.0) {
                return Err(AssignmentError::ClassSpread {
                    spread: s,
                    scenario: c + 1,
                    od: j + 1,
                });
            }
            a_ue[c][j] = avg;
        }
    }
    Ok(UeReference {
        a_ue,
        e_t_mon_ue: flow_metrics(inst, ue_policy).e_t_mon,
        policy: ue_policy.clone(),
        class_spread: spread,
    })
}

/// Demand-weighted expected time a driver could save by moving to a best
/// route, `sum alpha (F_r - min F)` averaged over `(c, j, w)`.
pub fn marginal_regret(inst: &ProblemInstance, policy: &RoutingPolicy) -> f64 {
    let layout = policy.layout();
    let alpha = policy.as_slice();
    let f = expected_route_times(inst, &layout, alpha);
    let mut num = 0.0;
    let mut den = 0.0;
    for c in 0..inst.n_scenarios() {
        for j in 0..inst.n_od() {
            let range = inst.route_range(j);
            let best = f[range.clone()]
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            for w in 0..inst.n_classes() {
                let weight = inst.probability(c) * inst.demand(c, j, w);
                if weight == 0.0 {
                    continue;
                }
                let regret: f64 = range
                    .clone()
                    .map(|g| alpha[layout.index(c, w, g)] * (f[g] - best))
                    .sum();
                num += weight * regret;
                den += weight;
            }
        }
    }
    if den > 0.0 {
        (num / den).max(0.0)
    } else {
        0.0
    }
}
