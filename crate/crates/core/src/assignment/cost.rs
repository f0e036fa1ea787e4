use std::fmt::Write as _;

use serde::Serialize;

use crate::netmodel::{Link, ProblemInstance};

use super::policy::{AlphaLayout, RoutingPolicy};

/// BPR travel time of a link carrying `x_t` trucks.
pub fn link_time(link: &Link, x_t: f64, pce: f64) -> f64 {
    let v = (link.x_lp + pce * x_t) / link.eps_c;
    link.eps_a + link.eps_b * v.powi(4)
}

/// `d link_time / d x_t`.
pub fn link_time_slope(link: &Link, x_t: f64, pce: f64) -> f64 {
    let v = (link.x_lp + pce * x_t) / link.eps_c;
    4.0 * link.eps_b * pce * v.powi(3) / link.eps_c
}

/// Link flows, link times and route times of one demand scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioLoad {
    pub flows: Vec<f64>,
    pub times: Vec<f64>,
    pub slopes: Vec<f64>,
    /// `J[g]` per global route.
    pub route_times: Vec<f64>,
}

impl ScenarioLoad {
    pub fn compute(inst: &ProblemInstance, layout: &AlphaLayout, alpha: &[f64], c: usize) -> Self {
        let net = inst.network();
        let mut flows = vec![0.0; net.link_count()];
        for j in 0..inst.n_od() {
            for w in 0..inst.n_classes() {
                let d = inst.demand(c, j, w);
                if d == 0.0 {
                    continue;
                }
                for g in inst.route_range(j) {
                    let a = alpha[layout.index(c, w, g)];
                    if a == 0.0 {
                        continue;
                    }
                    for &l in &inst.global_route(g).links {
                        flows[l] += d * a;
                    }
                }
            }
        }
        let pce = inst.pce();
        let times: Vec<f64> = net
            .links()
            .iter()
            .zip(&flows)
            .map(|(l, &x)| link_time(l, x, pce))
            .collect();
        let slopes = net
            .links()
            .iter()
            .zip(&flows)
            .map(|(l, &x)| link_time_slope(l, x, pce))
            .collect();
        let route_times = (0..inst.n_routes())
            .map(|g| inst.global_route(g).links.iter().map(|&l| times[l]).sum())
            .collect();
        ScenarioLoad {
            flows,
            times,
            slopes,
            route_times,
        }
    }

    /// Pulls link and route sensitivities of a scalar `phi` back onto the
    /// routing proportions of scenario `c`.
    ///
    /// `link_adj[l]` holds `d phi / d X_l` at entry and is overwritten with
    /// the total link sensitivity including route-time effects
    /// `route_adj[g] = d phi / d J_g`. Adds `d phi / d alpha[c][.][w][g]`
    /// into `grad` for every class.
    pub fn pullback(
        &self,
        inst: &ProblemInstance,
        layout: &AlphaLayout,
        c: usize,
        link_adj: &mut [f64],
        route_adj: &[f64],
        grad: &mut [f64],
    ) {
        for (g, &rw) in route_adj.iter().enumerate() {
            if rw != 0.0 {
                for &l in &inst.global_route(g).links {
                    link_adj[l] += rw * self.slopes[l];
                }
            }
        }
        for j in 0..inst.n_od() {
            for g in inst.route_range(j) {
                let s: f64 = inst
                    .global_route(g)
                    .links
                    .iter()
                    .map(|&l| link_adj[l])
                    .sum();
                if s == 0.0 {
                    continue;
                }
                for w in 0..inst.n_classes() {
                    let d = inst.demand(c, j, w);
                    if d != 0.0 {
                        grad[layout.index(c, w, g)] += d * s;
                    }
                }
            }
        }
    }
}

/// Per-link truck flows `X_lT` of scenario `c`.
pub fn truck_link_flows(inst: &ProblemInstance, policy: &RoutingPolicy, c: usize) -> Vec<f64> {
    ScenarioLoad::compute(inst, &policy.layout(), policy.as_slice(), c).flows
}

/// `J[c][j][r]` of global route `g`. Class independent.
pub fn route_time(inst: &ProblemInstance, policy: &RoutingPolicy, c: usize, g: usize) -> f64 {
    ScenarioLoad::compute(inst, &policy.layout(), policy.as_slice(), c).route_times[g]
}

/// `F[j][r] = sum_c p_c J[c][j][r]` for route `r` of OD `j`. The class
/// index is accepted for symmetry with the tensor layout and never read.
pub fn expected_route_time(
    inst: &ProblemInstance,
    policy: &RoutingPolicy,
    j: usize,
    _w: usize,
    r: usize,
) -> f64 {
    let g = inst.route_offset(j) + r;
    (0..inst.n_scenarios())
        .map(|c| inst.probability(c) * route_time(inst, policy, c, g))
        .sum()
}

/// `F` for every global route.
pub fn expected_route_times(
    inst: &ProblemInstance,
    layout: &AlphaLayout,
    alpha: &[f64],
) -> Vec<f64> {
    let mut f = vec![0.0; inst.n_routes()];
    for c in 0..inst.n_scenarios() {
        let load = ScenarioLoad::compute(inst, layout, alpha, c);
        let p = inst.probability(c);
        for (fg, jg) in f.iter_mut().zip(&load.route_times) {
            *fg += p * jg;
        }
    }
    f
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowMetrics {
    pub e_t_tr: f64,
    pub e_t_mon: f64,
    pub e_t_p: f64,
    pub e_t_s: f64,
    pub objective: f64,
}

impl FlowMetrics {
    pub const CSV_HEADER: &'static str = "scheme,lambda,mu,e_t_tr,e_t_mon,e_t_p,e_t_s,objective";

    pub fn csv_row(&self, scheme: &str, lambda: f64, mu: f64) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{scheme},{lambda:.6},{mu:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.e_t_tr, self.e_t_mon, self.e_t_p, self.e_t_s, self.objective
        );
        s
    }
}

/// Coefficients of a linear combination of the three expected totals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub truck: f64,
    pub passenger: f64,
    pub monetary: f64,
}

impl CostWeights {
    /// `lambda (mu E[T_tr] + (1 - mu) E[T_p]) + (1 - lambda) E[T_mon]`.
    pub fn social(inst: &ProblemInstance) -> Self {
        let (l, m) = (inst.lambda(), inst.mu());
        CostWeights {
            truck: l * m,
            passenger: l * (1.0 - m),
            monetary: 1.0 - l,
        }
    }

    /// `lambda E[T_tr] + (1 - lambda) E[T_mon]`, the equilibrium selection
    /// objective.
    pub fn equilibrium(inst: &ProblemInstance) -> Self {
        let l = inst.lambda();
        CostWeights {
            truck: l,
            passenger: 0.0,
            monetary: 1.0 - l,
        }
    }

    pub fn monetary() -> Self {
        CostWeights {
            truck: 0.0,
            passenger: 0.0,
            monetary: 1.0,
        }
    }
}

/// `(T_tr, T_mon, T_p)` of scenario `c` from its load, not weighted by the
/// scenario probability.
pub fn scenario_totals(
    inst: &ProblemInstance,
    layout: &AlphaLayout,
    alpha: &[f64],
    c: usize,
    load: &ScenarioLoad,
) -> (f64, f64, f64) {
    let mut tr = 0.0;
    let mut pas = 0.0;
    for (l, link) in inst.network().links().iter().enumerate() {
        tr += load.flows[l] * load.times[l];
        pas += link.x_lp * load.times[l];
    }
    let mut mon = 0.0;
    for j in 0..inst.n_od() {
        for w in 0..inst.n_classes() {
            let d = inst.demand(c, j, w);
            let s = inst.vot(w);
            for g in inst.route_range(j) {
                mon += d * alpha[layout.index(c, w, g)] * s * load.route_times[g];
            }
        }
    }
    (tr, mon, pas)
}

/// `(E[T_tr], E[T_mon], E[T_p])` in fixed scenario-major, link-minor order.
pub fn expected_totals(
    inst: &ProblemInstance,
    layout: &AlphaLayout,
    alpha: &[f64],
) -> (f64, f64, f64) {
    let (mut tr, mut mon, mut pas) = (0.0, 0.0, 0.0);
    for c in 0..inst.n_scenarios() {
        let load = ScenarioLoad::compute(inst, layout, alpha, c);
        let p = inst.probability(c);
        let (s_tr, s_mon, s_p) = scenario_totals(inst, layout, alpha, c, &load);
        tr += p * s_tr;
        pas += p * s_p;
        mon += p * s_mon;
    }
    (tr, mon, pas)
}

/// Adds the scenario-`c` contribution of a weighted cost to `link_adj`
/// (`d/dX_l`), `route_adj` (`d/dJ_g`) and the direct `alpha` terms of
/// `grad`, all multiplied by `scale`. Returns the unscaled contribution.
/// Finish with [`ScenarioLoad::pullback`].
#[allow(clippy::too_many_arguments)]
pub fn cost_adjoint(
    inst: &ProblemInstance,
    layout: &AlphaLayout,
    alpha: &[f64],
    c: usize,
    load: &ScenarioLoad,
    weights: CostWeights,
    scale: f64,
    link_adj: &mut [f64],
    route_adj: &mut [f64],
    grad: &mut [f64],
) -> f64 {
    let p = inst.probability(c);
    let mut value = 0.0;
    if weights.truck != 0.0 || weights.passenger != 0.0 {
        for (l, link) in inst.network().links().iter().enumerate() {
            let (x, t, dt) = (load.flows[l], load.times[l], load.slopes[l]);
            value += p * (weights.truck * x * t + weights.passenger * link.x_lp * t);
            link_adj[l] +=
                scale * p * (weights.truck * (t + x * dt) + weights.passenger * link.x_lp * dt);
        }
    }
    if weights.monetary != 0.0 {
        let k = p * weights.monetary;
        for j in 0..inst.n_od() {
            for w in 0..inst.n_classes() {
                let d = inst.demand(c, j, w);
                if d == 0.0 {
                    continue;
                }
                let s = inst.vot(w);
                for g in inst.route_range(j) {
                    let idx = layout.index(c, w, g);
                    let a = alpha[idx];
                    value += k * d * a * s * load.route_times[g];
                    route_adj[g] += scale * k * d * a * s;
                    grad[idx] += scale * k * d * s * load.route_times[g];
                }
            }
        }
    }
    value
}

/// Value of a weighted cost and, if requested, its gradient with respect to
/// `alpha` (added into `grad`).
pub fn weighted_cost(
    inst: &ProblemInstance,
    layout: &AlphaLayout,
    alpha: &[f64],
    weights: CostWeights,
    grad: Option<&mut [f64]>,
) -> f64 {
    let Some(grad) = grad else {
        let (tr, mon, pas) = expected_totals(inst, layout, alpha);
        return weights.truck * tr + weights.passenger * pas + weights.monetary * mon;
    };
    let mut value = 0.0;
    let mut link_adj = vec![0.0; inst.network().link_count()];
    let mut route_adj = vec![0.0; inst.n_routes()];
    for c in 0..inst.n_scenarios() {
        let load = ScenarioLoad::compute(inst, layout, alpha, c);
        link_adj.iter_mut().for_each(|a| *a = 0.0);
        route_adj.iter_mut().for_each(|a| *a = 0.0);
        value += cost_adjoint(
            inst,
            layout,
            alpha,
            c,
            &load,
            weights,
            1.0,
            &mut link_adj,
            &mut route_adj,
            grad,
        );
        load.pullback(inst, layout, c, &mut link_adj, &route_adj, grad);
    }
    value
}

/// Expected totals and the social objective of a policy.
pub fn flow_metrics(inst: &ProblemInstance, policy: &RoutingPolicy) -> FlowMetrics {
    metrics_from_alpha(inst, &policy.layout(), policy.as_slice())
}

pub fn metrics_from_alpha(
    inst: &ProblemInstance,
    layout: &AlphaLayout,
    alpha: &[f64],
) -> FlowMetrics {
    let (e_t_tr, e_t_mon, e_t_p) = expected_totals(inst, layout, alpha);
    let w = CostWeights::social(inst);
    FlowMetrics {
        e_t_tr,
        e_t_mon,
        e_t_p,
        e_t_s: e_t_p + e_t_tr,
        objective: w.truck * e_t_tr + w.passenger * e_t_p + w.monetary * e_t_mon,
    }
}
