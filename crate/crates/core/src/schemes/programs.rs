//! Each scheme as a smooth program over flat variable vectors. Payment and
//! toll variables are stored in hours (currency divided by a VOT) so that
//! every variable has a comparable scale.

use crate::assignment::{
    cost_adjoint, scenario_totals, AlphaLayout, CostWeights, PolicyMode, ScenarioLoad, UeReference,
};
use crate::netmodel::ProblemInstance;
use crate::nlp::{Evaluation, Multipliers, NlpProblem, ProblemShape};

use super::payments::ClassShares;

/// Sampling range of payment and toll variables (hours).
const PAYMENT_RANGE: (f64, f64) = (-1.0, 1.0);

fn simplex_blocks(inst: &ProblemInstance, layout: &AlphaLayout) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(layout.n_blocks() * inst.n_od());
    for b in 0..layout.n_blocks() {
        for j in 0..inst.n_od() {
            out.push((
                b * layout.n_routes + inst.route_offset(j),
                inst.routes(j).len(),
            ));
        }
    }
    out
}

fn loads(inst: &ProblemInstance, layout: &AlphaLayout, alpha: &[f64]) -> Vec<ScenarioLoad> {
    (0..inst.n_scenarios())
        .map(|c| ScenarioLoad::compute(inst, layout, alpha, c))
        .collect()
}

fn weighted_value(
    inst: &ProblemInstance,
    layout: &AlphaLayout,
    alpha: &[f64],
    loads: &[ScenarioLoad],
    w: CostWeights,
) -> f64 {
    loads
        .iter()
        .enumerate()
        .map(|(c, load)| {
            let (tr, mon, pas) = scenario_totals(inst, layout, alpha, c, load);
            inst.probability(c) * (w.truck * tr + w.monetary * mon + w.passenger * pas)
        })
        .sum()
}

/// `E[T_mon]` from precomputed loads.
fn monetary(
    inst: &ProblemInstance,
    layout: &AlphaLayout,
    alpha: &[f64],
    loads: &[ScenarioLoad],
) -> f64 {
    weighted_value(inst, layout, alpha, loads, CostWeights::monetary())
}

/// Scratch adjoint buffers for one scenario at a time.
struct Adjoint {
    link: Vec<f64>,
    route: Vec<f64>,
}

impl Adjoint {
    fn new(inst: &ProblemInstance) -> Self {
        Adjoint {
            link: vec![0.0; inst.network().link_count()],
            route: vec![0.0; inst.n_routes()],
        }
    }

    fn reset(&mut self) {
        self.link.iter_mut().for_each(|v| *v = 0.0);
        self.route.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// User equilibrium: class-anonymous route split `alpha[g]` plus one
/// cost level `zeta[j]` per OD pair, with `0 <= alpha ⊥ F - zeta >= 0`.
pub struct UeProgram<'a> {
    inst: &'a ProblemInstance,
    layout: AlphaLayout,
    shape: ProblemShape,
    weights: CostWeights,
}

impl<'a> UeProgram<'a> {
    pub fn new(inst: &'a ProblemInstance) -> Self {
        let layout = AlphaLayout::new(inst, PolicyMode::ScenarioIndependent, true);
        let shape = ProblemShape {
            dim: inst.n_routes() + inst.n_od(),
            simplex_blocks: simplex_blocks(inst, &layout),
            n_ineq: 0,
            n_eq: 0,
            n_comp: inst.n_routes(),
        };
        UeProgram {
            inst,
            layout,
            shape,
            weights: CostWeights::equilibrium(inst),
        }
    }

    pub fn layout(&self) -> AlphaLayout {
        self.layout
    }

    pub fn split<'x>(&self, x: &'x [f64]) -> (&'x [f64], &'x [f64]) {
        x.split_at(self.inst.n_routes())
    }
}

impl NlpProblem for UeProgram<'_> {
    fn shape(&self) -> &ProblemShape {
        &self.shape
    }

    fn evaluate(&self, x: &[f64], out: &mut Evaluation) {
        let inst = self.inst;
        let (alpha, zeta) = self.split(x);
        let loads = loads(inst, &self.layout, alpha);
        out.objective = weighted_value(inst, &self.layout, alpha, &loads, self.weights);
        for g in 0..inst.n_routes() {
            let f: f64 = loads
                .iter()
                .enumerate()
                .map(|(c, l)| inst.probability(c) * l.route_times[g])
                .sum();
            out.comp_a[g] = alpha[g];
            out.comp_b[g] = f - zeta[inst.route_od(g)];
        }
    }

    fn gradient(&self, x: &[f64], w: &Multipliers<'_>, grad: &mut [f64]) {
        let inst = self.inst;
        let (alpha, _) = self.split(x);
        let (ga, gz) = grad.split_at_mut(inst.n_routes());
        let mut adj = Adjoint::new(inst);
        for c in 0..inst.n_scenarios() {
            let load = ScenarioLoad::compute(inst, &self.layout, alpha, c);
            adj.reset();
            cost_adjoint(
                inst,
                &self.layout,
                alpha,
                c,
                &load,
                self.weights,
                w.objective,
                &mut adj.link,
                &mut adj.route,
                ga,
            );
            let p = inst.probability(c);
            for (r, wb) in adj.route.iter_mut().zip(w.comp_b) {
                *r += p * wb;
            }
            load.pullback(inst, &self.layout, c, &mut adj.link, &adj.route, ga);
        }
        for g in 0..inst.n_routes() {
            ga[g] += w.comp_a[g];
            gz[inst.route_od(g)] -= w.comp_b[g];
        }
    }
}

/// System optimum over scenario-dependent, class-specific routing.
pub struct SoProgram<'a> {
    inst: &'a ProblemInstance,
    layout: AlphaLayout,
    shape: ProblemShape,
    weights: CostWeights,
}

impl<'a> SoProgram<'a> {
    pub fn new(inst: &'a ProblemInstance) -> Self {
        let layout = AlphaLayout::new(inst, PolicyMode::ScenarioDependent, false);
        let shape = ProblemShape {
            dim: layout.len(),
            simplex_blocks: simplex_blocks(inst, &layout),
            n_ineq: 0,
            n_eq: 0,
            n_comp: 0,
        };
        SoProgram {
            inst,
            layout,
            shape,
            weights: CostWeights::social(inst),
        }
    }

    pub fn layout(&self) -> AlphaLayout {
        self.layout
    }
}

impl NlpProblem for SoProgram<'_> {
    fn shape(&self) -> &ProblemShape {
        &self.shape
    }

    fn evaluate(&self, x: &[f64], out: &mut Evaluation) {
        let loads = loads(self.inst, &self.layout, x);
        out.objective = weighted_value(self.inst, &self.layout, x, &loads, self.weights);
    }

    fn gradient(&self, x: &[f64], w: &Multipliers<'_>, grad: &mut [f64]) {
        let inst = self.inst;
        let mut adj = Adjoint::new(inst);
        for c in 0..inst.n_scenarios() {
            let load = ScenarioLoad::compute(inst, &self.layout, x, c);
            adj.reset();
            cost_adjoint(
                inst,
                &self.layout,
                x,
                c,
                &load,
                self.weights,
                w.objective,
                &mut adj.link,
                &mut adj.route,
                grad,
            );
            load.pullback(inst, &self.layout, c, &mut adj.link, &adj.route, grad);
        }
    }
}

/// Enumerates `(j, i, k)` with `i != k`.
fn deviation_triples(inst: &ProblemInstance) -> Vec<(usize, usize, usize)> {
    let n = inst.n_classes();
    let mut out = Vec::new();
    for j in 0..inst.n_od() {
        for i in 0..n {
            for k in (0..n).filter(|&k| k != i) {
                out.push((j, i, k));
            }
        }
    }
    out
}

/// Optimum pricing scheme: routing `alpha` and payments `q = pi / s_w`
/// (hours), both scenario-dependent and per class.
///
/// Inequalities: ex-ante Pareto per `(j, w)`, then ex-ante truthfulness per
/// `(j, i, k)`. Equality: expected net payments divided by `max(1,
/// E[T_mon,UE])`.
pub struct OpsProgram<'a> {
    inst: &'a ProblemInstance,
    layout: AlphaLayout,
    shape: ProblemShape,
    weights: CostWeights,
    /// `sum_c p_c A_cj`.
    a_bar: Vec<f64>,
    triples: Vec<(usize, usize, usize)>,
    money_scale: f64,
}

impl<'a> OpsProgram<'a> {
    pub fn new(inst: &'a ProblemInstance, ue: &UeReference) -> Self {
        let layout = AlphaLayout::new(inst, PolicyMode::ScenarioDependent, false);
        let triples = deviation_triples(inst);
        let shape = ProblemShape {
            dim: 2 * layout.len(),
            simplex_blocks: simplex_blocks(inst, &layout),
            n_ineq: inst.n_od() * inst.n_classes() + triples.len(),
            n_eq: 1,
            n_comp: 0,
        };
        OpsProgram {
            inst,
            layout,
            shape,
            weights: CostWeights::social(inst),
            a_bar: (0..inst.n_od()).map(|j| ue.expected_a(inst, j)).collect(),
            triples,
            money_scale: ue.money_scale(),
        }
    }

    pub fn layout(&self) -> AlphaLayout {
        self.layout
    }

    pub fn split<'x>(&self, x: &'x [f64]) -> (&'x [f64], &'x [f64]) {
        x.split_at(self.layout.len())
    }

    /// Index of the Pareto constraint of `(j, w)`.
    fn pareto(&self, j: usize, w: usize) -> usize {
        j * self.inst.n_classes() + w
    }
}

impl NlpProblem for OpsProgram<'_> {
    fn shape(&self) -> &ProblemShape {
        &self.shape
    }

    fn evaluate(&self, x: &[f64], out: &mut Evaluation) {
        let inst = self.inst;
        let l = &self.layout;
        let (alpha, q) = self.split(x);
        let loads = loads(inst, l, alpha);
        out.objective = weighted_value(inst, l, alpha, &loads, self.weights);
        out.ineq.iter_mut().for_each(|v| *v = 0.0);
        let np = inst.n_od() * inst.n_classes();
        let mut budget = 0.0;
        for (c, load) in loads.iter().enumerate() {
            let p = inst.probability(c);
            let jt = &load.route_times;
            for j in 0..inst.n_od() {
                for w in 0..inst.n_classes() {
                    let d = inst.demand(c, j, w);
                    let s = inst.vot(w);
                    let mut cost = 0.0;
                    for g in inst.route_range(j) {
                        let idx = l.index(c, w, g);
                        cost += alpha[idx] * (jt[g] + q[idx]);
                        budget += p * d * s * alpha[idx] * q[idx];
                    }
                    out.ineq[self.pareto(j, w)] += p * cost;
                }
            }
            for (t, &(j, i, k)) in self.triples.iter().enumerate() {
                let rho = inst.vot(k) / inst.vot(i);
                let mut v = 0.0;
                for g in inst.route_range(j) {
                    let (ii, kk) = (l.index(c, i, g), l.index(c, k, g));
                    v += alpha[ii] * (jt[g] + q[ii]) - alpha[kk] * (jt[g] + rho * q[kk]);
                }
                out.ineq[np + t] += p * v;
            }
        }
        for j in 0..inst.n_od() {
            for w in 0..inst.n_classes() {
                out.ineq[self.pareto(j, w)] -= self.a_bar[j];
            }
        }
        out.eq[0] = budget / self.money_scale;
    }

    fn gradient(&self, x: &[f64], w: &Multipliers<'_>, grad: &mut [f64]) {
        let inst = self.inst;
        let l = &self.layout;
        let (alpha, q) = self.split(x);
        let (ga, gq) = grad.split_at_mut(l.len());
        let np = inst.n_od() * inst.n_classes();
        let eb = w.eq[0] / self.money_scale;
        let mut adj = Adjoint::new(inst);
        for c in 0..inst.n_scenarios() {
            let load = ScenarioLoad::compute(inst, l, alpha, c);
            adj.reset();
            cost_adjoint(
                inst,
                l,
                alpha,
                c,
                &load,
                self.weights,
                w.objective,
                &mut adj.link,
                &mut adj.route,
                ga,
            );
            let p = inst.probability(c);
            let jt = &load.route_times;
            for j in 0..inst.n_od() {
                for cls in 0..inst.n_classes() {
                    let u = p * w.ineq[self.pareto(j, cls)];
                    let e = eb * p * inst.demand(c, j, cls) * inst.vot(cls);
                    for g in inst.route_range(j) {
                        let idx = l.index(c, cls, g);
                        ga[idx] += u * (jt[g] + q[idx]) + e * q[idx];
                        gq[idx] += u * alpha[idx] + e * alpha[idx];
                        adj.route[g] += u * alpha[idx];
                    }
                }
            }
            for (t, &(j, i, k)) in self.triples.iter().enumerate() {
                let v = p * w.ineq[np + t];
                if v == 0.0 {
                    continue;
                }
                let rho = inst.vot(k) / inst.vot(i);
                for g in inst.route_range(j) {
                    let (ii, kk) = (l.index(c, i, g), l.index(c, k, g));
                    ga[ii] += v * (jt[g] + q[ii]);
                    gq[ii] += v * alpha[ii];
                    ga[kk] -= v * (jt[g] + rho * q[kk]);
                    gq[kk] -= v * rho * alpha[kk];
                    adj.route[g] += v * (alpha[ii] - alpha[kk]);
                }
            }
            load.pullback(inst, l, c, &mut adj.link, &adj.route, ga);
        }
    }

    fn free_range(&self, _i: usize) -> (f64, f64) {
        PAYMENT_RANGE
    }
}

/// AOPS and AOPS-EPT: routing only, with payments implied in closed form.
///
/// Inequality 0 is `kappa (E[T_mon] - E[T_mon,UE])` with `kappa` the largest
/// per-driver share weight, which bounds every Pareto residual of the
/// implied payments in hours. The remaining inequalities are `H - N` per
/// `(j, i, k)`, or `Q - U` per `(c, j, i, k)` for the ex-post variant.
pub struct AopsProgram<'a> {
    inst: &'a ProblemInstance,
    layout: AlphaLayout,
    shape: ProblemShape,
    weights: CostWeights,
    a_ue: Vec<Vec<f64>>,
    e_mon_ue: f64,
    shares: ClassShares,
    kappa: f64,
    triples: Vec<(usize, usize, usize)>,
    ex_post: bool,
}

impl<'a> AopsProgram<'a> {
    pub fn new(
        inst: &'a ProblemInstance,
        ue: &UeReference,
        shares: ClassShares,
        ex_post: bool,
    ) -> Self {
        let layout = AlphaLayout::new(inst, PolicyMode::ScenarioDependent, false);
        let triples = deviation_triples(inst);
        let per = if ex_post { inst.n_scenarios() } else { 1 };
        let shape = ProblemShape {
            dim: layout.len(),
            simplex_blocks: simplex_blocks(inst, &layout),
            n_ineq: 1 + per * triples.len(),
            n_eq: 0,
            n_comp: 0,
        };
        let kappa = shares.max();
        AopsProgram {
            inst,
            layout,
            shape,
            weights: CostWeights::social(inst),
            a_ue: ue.a_ue.clone(),
            e_mon_ue: ue.e_t_mon_ue,
            shares,
            kappa,
            triples,
            ex_post,
        }
    }

    pub fn layout(&self) -> AlphaLayout {
        self.layout
    }

    /// Index of the truthfulness constraint of triple `t` in scenario `c`.
    fn truthful(&self, c: usize, t: usize) -> usize {
        let c = if self.ex_post { c } else { 0 };
        1 + c * self.triples.len() + t
    }

    fn class_time(&self, alpha: &[f64], load: &ScenarioLoad, c: usize, j: usize, k: usize) -> f64 {
        self.inst
            .route_range(j)
            .map(|g| alpha[self.layout.index(c, k, g)] * load.route_times[g])
            .sum()
    }
}

impl NlpProblem for AopsProgram<'_> {
    fn shape(&self) -> &ProblemShape {
        &self.shape
    }

    fn evaluate(&self, x: &[f64], out: &mut Evaluation) {
        let inst = self.inst;
        let loads = loads(inst, &self.layout, x);
        out.objective = weighted_value(inst, &self.layout, x, &loads, self.weights);
        let delta = monetary(inst, &self.layout, x, &loads) - self.e_mon_ue;
        out.ineq.iter_mut().for_each(|v| *v = 0.0);
        out.ineq[0] = self.kappa * delta;
        for (c, load) in loads.iter().enumerate() {
            // ex-ante rows are expectations over scenarios
            let p = if self.ex_post {
                1.0
            } else {
                inst.probability(c)
            };
            let inv = &self.shares.inv[c];
            for (t, &(j, i, k)) in self.triples.iter().enumerate() {
                let rho = inst.vot(k) / inst.vot(i);
                let v = (1.0 - rho) * (self.a_ue[c][j] - self.class_time(x, load, c, j, k))
                    + delta * (inv[i] - rho * inv[k]);
                out.ineq[self.truthful(c, t)] += p * v;
            }
        }
    }

    fn gradient(&self, x: &[f64], w: &Multipliers<'_>, grad: &mut [f64]) {
        let inst = self.inst;
        let l = &self.layout;
        // total weight on delta across all rows
        let mut w_delta = self.kappa * w.ineq[0];
        for c in 0..inst.n_scenarios() {
            let p = if self.ex_post {
                1.0
            } else {
                inst.probability(c)
            };
            let inv = &self.shares.inv[c];
            for (t, &(_, i, k)) in self.triples.iter().enumerate() {
                let rho = inst.vot(k) / inst.vot(i);
                w_delta += w.ineq[self.truthful(c, t)] * p * (inv[i] - rho * inv[k]);
            }
        }
        let mut adj = Adjoint::new(inst);
        for c in 0..inst.n_scenarios() {
            let load = ScenarioLoad::compute(inst, l, x, c);
            adj.reset();
            cost_adjoint(
                inst,
                l,
                x,
                c,
                &load,
                self.weights,
                w.objective,
                &mut adj.link,
                &mut adj.route,
                grad,
            );
            if w_delta != 0.0 {
                cost_adjoint(
                    inst,
                    l,
                    x,
                    c,
                    &load,
                    CostWeights::monetary(),
                    w_delta,
                    &mut adj.link,
                    &mut adj.route,
                    grad,
                );
            }
            let p = if self.ex_post {
                1.0
            } else {
                inst.probability(c)
            };
            for (t, &(j, i, k)) in self.triples.iter().enumerate() {
                let v = w.ineq[self.truthful(c, t)];
                if v == 0.0 {
                    continue;
                }
                let coef = -v * p * (1.0 - inst.vot(k) / inst.vot(i));
                for g in inst.route_range(j) {
                    let kk = l.index(c, k, g);
                    grad[kk] += coef * load.route_times[g];
                    adj.route[g] += coef * x[kk];
                }
            }
            load.pullback(inst, l, c, &mut adj.link, &adj.route, grad);
        }
    }
}

/// Route-based congestion pricing with uniform revenue refunding: per-class
/// scenario-independent routing `alpha[w][g]`, tolls `tau[g] = pi[g] /
/// s_ref` (hours at the mean VOT) and cost levels `zeta[j][w]`, with
/// `0 <= alpha ⊥ F + pi / s_w - zeta >= 0` and zero expected net toll
/// revenue (divided by `max(1, money_scale)`).
pub struct CpurrProgram<'a> {
    inst: &'a ProblemInstance,
    layout: AlphaLayout,
    shape: ProblemShape,
    weights: CostWeights,
    s_ref: f64,
    money_scale: f64,
}

impl<'a> CpurrProgram<'a> {
    pub fn new(inst: &'a ProblemInstance, money_scale: f64) -> Self {
        let layout = AlphaLayout::new(inst, PolicyMode::ScenarioIndependent, false);
        let nr = inst.n_routes();
        let shape = ProblemShape {
            dim: layout.len() + nr + inst.n_od() * inst.n_classes(),
            simplex_blocks: simplex_blocks(inst, &layout),
            n_ineq: 0,
            n_eq: 1,
            n_comp: layout.len(),
        };
        CpurrProgram {
            inst,
            layout,
            shape,
            weights: CostWeights::social(inst),
            s_ref: inst.vot_sum() / inst.n_classes() as f64,
            money_scale: money_scale.max(1.0),
        }
    }

    pub fn layout(&self) -> AlphaLayout {
        self.layout
    }

    /// Currency per hour of one toll variable.
    pub fn toll_unit(&self) -> f64 {
        self.s_ref
    }

    /// `(alpha, tau, zeta)`.
    pub fn split<'x>(&self, x: &'x [f64]) -> (&'x [f64], &'x [f64], &'x [f64]) {
        let (alpha, rest) = x.split_at(self.layout.len());
        let (tau, zeta) = rest.split_at(self.inst.n_routes());
        (alpha, tau, zeta)
    }

    /// Index of `zeta[j][w]` within the zeta block.
    fn zeta_index(&self, j: usize, w: usize) -> usize {
        j * self.inst.n_classes() + w
    }

    /// `sum_c p_c d_cjw`.
    fn expected_demand(&self, j: usize, w: usize) -> f64 {
        (0..self.inst.n_scenarios())
            .map(|c| self.inst.probability(c) * self.inst.demand(c, j, w))
            .sum()
    }
}

impl NlpProblem for CpurrProgram<'_> {
    fn shape(&self) -> &ProblemShape {
        &self.shape
    }

    fn evaluate(&self, x: &[f64], out: &mut Evaluation) {
        let inst = self.inst;
        let l = &self.layout;
        let (alpha, tau, zeta) = self.split(x);
        let loads = loads(inst, l, alpha);
        out.objective = weighted_value(inst, l, alpha, &loads, self.weights);
        let nr = inst.n_routes();
        let mut budget = 0.0;
        for g in 0..nr {
            let f: f64 = loads
                .iter()
                .enumerate()
                .map(|(c, ld)| inst.probability(c) * ld.route_times[g])
                .sum();
            let j = inst.route_od(g);
            for w in 0..inst.n_classes() {
                let idx = l.index(0, w, g);
                out.comp_a[idx] = alpha[idx];
                out.comp_b[idx] =
                    f + tau[g] * self.s_ref / inst.vot(w) - zeta[self.zeta_index(j, w)];
                budget += self.expected_demand(j, w) * alpha[idx] * self.s_ref * tau[g];
            }
        }
        out.eq[0] = budget / self.money_scale;
    }

    fn gradient(&self, x: &[f64], w: &Multipliers<'_>, grad: &mut [f64]) {
        let inst = self.inst;
        let l = &self.layout;
        let (alpha, tau, _) = self.split(x);
        let na = l.len();
        let nr = inst.n_routes();
        let (ga, rest) = grad.split_at_mut(na);
        let (gt, gz) = rest.split_at_mut(nr);
        // sum_w wb[w][g], the weight on F_g
        let mut wf = vec![0.0; nr];
        for g in 0..nr {
            for cls in 0..inst.n_classes() {
                wf[g] += w.comp_b[l.index(0, cls, g)];
            }
        }
        let mut adj = Adjoint::new(inst);
        for c in 0..inst.n_scenarios() {
            let load = ScenarioLoad::compute(inst, l, alpha, c);
            adj.reset();
            cost_adjoint(
                inst,
                l,
                alpha,
                c,
                &load,
                self.weights,
                w.objective,
                &mut adj.link,
                &mut adj.route,
                ga,
            );
            let p = inst.probability(c);
            for (r, f) in adj.route.iter_mut().zip(&wf) {
                *r += p * f;
            }
            load.pullback(inst, l, c, &mut adj.link, &adj.route, ga);
        }
        let eb = w.eq[0] / self.money_scale;
        for g in 0..nr {
            let j = inst.route_od(g);
            for cls in 0..inst.n_classes() {
                let idx = l.index(0, cls, g);
                let wb = w.comp_b[idx];
                let dm = eb * self.expected_demand(j, cls) * self.s_ref;
                ga[idx] += w.comp_a[idx] + dm * tau[g];
                gt[g] += wb * self.s_ref / inst.vot(cls) + dm * alpha[idx];
                gz[self.zeta_index(j, cls)] -= wb;
            }
        }
    }

    fn free_range(&self, i: usize) -> (f64, f64) {
        let na = self.layout.len();
        if i < na + self.inst.n_routes() {
            PAYMENT_RANGE
        } else {
            (0.0, 100.0)
        }
    }
}
