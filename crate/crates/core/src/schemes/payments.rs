use crate::assignment::{flow_metrics, RoutingPolicy, ScenarioLoad, UeReference};
use crate::netmodel::ProblemInstance;

use super::{PaymentSchedule, SchemeError};

/// Per-driver weight of the benefit share, `1 / (S_c D_cw)` where `D_cw`
/// is the total demand of class `w` in scenario `c` and `S_c` sums the VOTs
/// of the classes with demand in that scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassShares {
    /// `inv[c][w]`, zero for a class without demand.
    pub inv: Vec<Vec<f64>>,
    /// `(c, w)` pairs without demand.
    pub degenerate: Vec<(usize, usize)>,
}

impl ClassShares {
    pub fn max(&self) -> f64 {
        self.inv.iter().flatten().fold(0.0, |m, v| m.max(*v))
    }

    /// `sum_c p_c inv[c][w]`.
    pub fn expected(&self, inst: &ProblemInstance, w: usize) -> f64 {
        (0..inst.n_scenarios())
            .map(|c| inst.probability(c) * self.inv[c][w])
            .sum()
    }
}

pub fn class_share_weights(inst: &ProblemInstance) -> Result<ClassShares, SchemeError> {
    let mut inv = vec![vec![0.0; inst.n_classes()]; inst.n_scenarios()];
    let mut degenerate = Vec::new();
    for (c, row) in inv.iter_mut().enumerate() {
        let d: Vec<f64> = (0..inst.n_classes())
            .map(|w| inst.class_demand(c, w))
            .collect();
        let s: f64 = (0..inst.n_classes())
            .filter(|&w| d[w] > 0.0)
            .map(|w| inst.vot(w))
            .sum();
        if s == 0.0 {
            return Err(SchemeError::EmptyScenario { scenario: c + 1 });
        }
        for w in 0..inst.n_classes() {
            if d[w] > 0.0 {
                row[w] = 1.0 / (s * d[w]);
            } else {
                degenerate.push((c, w));
            }
        }
    }
    Ok(ClassShares { inv, degenerate })
}

/// Route times, UE gap and shares needed by the AOPS algebra.
struct AopsTerms {
    policy: RoutingPolicy,
    route_times: Vec<Vec<f64>>,
    delta: f64,
    shares: ClassShares,
}

impl AopsTerms {
    fn new(
        inst: &ProblemInstance,
        policy: &RoutingPolicy,
        ue: &UeReference,
    ) -> Result<Self, SchemeError> {
        let policy = policy.to_scenario_dependent();
        let layout = policy.layout();
        let route_times = (0..inst.n_scenarios())
            .map(|c| ScenarioLoad::compute(inst, &layout, policy.as_slice(), c).route_times)
            .collect();
        let delta = flow_metrics(inst, &policy).e_t_mon - ue.e_t_mon_ue;
        Ok(AopsTerms {
            policy,
            route_times,
            delta,
            shares: class_share_weights(inst)?,
        })
    }

    /// `sum_r alpha[c][j][k][r] J[c][j][r]`.
    fn class_time(&self, inst: &ProblemInstance, c: usize, j: usize, k: usize) -> f64 {
        inst.route_range(j)
            .map(|g| self.policy.alpha(c, k, g) * self.route_times[c][g])
            .sum()
    }
}

/// The AOPS payment schedule of `policy`:
/// `pi = s_w (A_cj - J_cjr) + s_w (E[T_mon] - E[T_mon,UE]) inv[c][w]`.
///
/// Classes without demand in a scenario get no benefit share and are
/// listed in `degenerate_classes`.
pub fn aops_payments(
    inst: &ProblemInstance,
    policy: &RoutingPolicy,
    ue: &UeReference,
) -> Result<PaymentSchedule, SchemeError> {
    let t = AopsTerms::new(inst, policy, ue)?;
    let mut pi = vec![0.0; t.policy.as_slice().len()];
    let layout = t.policy.layout();
    for c in 0..inst.n_scenarios() {
        for j in 0..inst.n_od() {
            for w in 0..inst.n_classes() {
                let s = inst.vot(w);
                let share = s * t.delta * t.shares.inv[c][w];
                for g in inst.route_range(j) {
                    pi[layout.index(c, w, g)] = s * (ue.a_ue[c][j] - t.route_times[c][g]) + share;
                }
            }
        }
    }
    let mut schedule = PaymentSchedule::per_driver(inst, pi);
    schedule.degenerate_classes = t.shares.degenerate;
    Ok(schedule)
}

/// Ex-ante truthfulness sides `(H, N)` for OD `j`, true class `i` and
/// declared class `k`; the AOPS payments are truthful there iff `H <= N`.
pub fn h_n(
    inst: &ProblemInstance,
    policy: &RoutingPolicy,
    ue: &UeReference,
    j: usize,
    i: usize,
    k: usize,
) -> Result<(f64, f64), SchemeError> {
    let t = AopsTerms::new(inst, policy, ue)?;
    let rho = inst.vot(k) / inst.vot(i);
    let mut h = 0.0;
    let mut n = 0.0;
    for c in 0..inst.n_scenarios() {
        let p = inst.probability(c);
        h += p * ((1.0 - rho) * ue.a_ue[c][j] + t.delta * t.shares.inv[c][i]);
        n += p * ((1.0 - rho) * t.class_time(inst, c, j, k) + rho * t.delta * t.shares.inv[c][k]);
    }
    Ok((h, n))
}

/// Ex-post truthfulness sides `(Q, U)` in scenario `c`.
pub fn q_u(
    inst: &ProblemInstance,
    policy: &RoutingPolicy,
    ue: &UeReference,
    c: usize,
    j: usize,
    i: usize,
    k: usize,
) -> Result<(f64, f64), SchemeError> {
    let t = AopsTerms::new(inst, policy, ue)?;
    let rho = inst.vot(k) / inst.vot(i);
    let q = (1.0 - rho) * ue.a_ue[c][j] + t.delta * t.shares.inv[c][i];
    let u = (1.0 - rho) * t.class_time(inst, c, j, k) + rho * t.delta * t.shares.inv[c][k];
    Ok((q, u))
}
