use rayon::prelude::*;
use serde::Serialize;

use crate::assignment::{
    link_time, link_time_slope, metrics_from_alpha, AlphaLayout, CostWeights, PolicyMode,
    RoutingPolicy, UeReference,
};
use crate::netmodel::ProblemInstance;
use crate::nlp::{Evaluation, NlpProblem};
use crate::schemes::{class_share_weights, AopsProgram};

use super::OracleError;

/// Largest constraint value accepted by the AOPS feasibility filter, hours.
pub const FEASIBILITY_TOL: f64 = 1e-9;

pub const DEFAULT_MAX_CELLS: u64 = 100_000_000;

/// Resolution of the grid placed on every routing simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    /// Requested spacing; the grid uses `1 / ceil(1 / step)`, which is never
    /// coarser.
    pub step: f64,
    pub max_cells: u64,
}

impl GridSpec {
    pub fn new(step: f64) -> Result<Self, OracleError> {
        let g = GridSpec {
            step,
            max_cells: DEFAULT_MAX_CELLS,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if !(self.step > 0.0 && self.step <= 0.5) {
            return Err(OracleError::InvalidGrid(format!(
                "step must lie in (0, 0.5], got {}",
                self.step
            )));
        }
        if self.max_cells == 0 {
            return Err(OracleError::InvalidGrid(
                "max_cells must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Intervals per simplex edge.
    pub fn divisions(&self) -> u32 {
        (1.0 / self.step - 1e-9).ceil() as u32
    }

    /// Spacing actually used.
    pub fn effective_step(&self) -> f64 {
        1.0 / f64::from(self.divisions())
    }
}

/// Objective minimized by [`grid_search_best`]. AOPS variants keep only
/// cells satisfying their constraints.
#[derive(Debug, Clone, Copy)]
pub enum GridObjective<'a> {
    So,
    Aops(&'a UeReference),
    AopsEpt(&'a UeReference),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridOutcome {
    Best {
        policy: RoutingPolicy,
        value: f64,
        cells: u64,
    },
    NoFeasibleCell {
        cells: u64,
    },
}

impl GridOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            GridOutcome::Best { value, .. } => Some(*value),
            GridOutcome::NoFeasibleCell { .. } => None,
        }
    }

    pub fn cells(&self) -> u64 {
        match self {
            GridOutcome::Best { cells, .. } | GridOutcome::NoFeasibleCell { cells } => *cells,
        }
    }
}

/// Grid points of the simplex with `n` vertices and `m` divisions,
/// flattened, in lexicographic order of the coordinates.
fn simplex_points(n: usize, m: u32) -> Vec<f64> {
    fn rec(n: usize, left: u32, m: u32, prefix: &mut Vec<u32>, out: &mut Vec<f64>) {
        if prefix.len() + 1 == n {
            out.extend(prefix.iter().map(|&k| f64::from(k) / f64::from(m)));
            out.push(f64::from(left) / f64::from(m));
            return;
        }
        for k in 0..=left {
            prefix.push(k);
            rec(n, left - k, m, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, m, m, &mut Vec::with_capacity(n), &mut out);
    out
}

fn simplex_count(n: usize, m: u32) -> u64 {
    // C(m + n - 1, n - 1)
    let mut c: u128 = 1;
    for i in 1..n as u128 {
        c = c * (u128::from(m) + i) / i;
    }
    u64::try_from(c).unwrap_or(u64::MAX)
}

fn product_count(blocks: &[usize], m: u32) -> u64 {
    blocks
        .iter()
        .fold(1u64, |acc, &n| acc.saturating_mul(simplex_count(n, m)))
}

struct Found {
    point: Vec<f64>,
    value: f64,
}

/// Exhaustive minimization over the product of simplex grids. `eval`
/// returns `None` for filtered cells. Ties go to the lexicographically
/// smallest point, independently of how work is split across threads.
fn search<S, I, E>(blocks: &[usize], m: u32, init: I, eval: E) -> Option<Found>
where
    I: Fn() -> S + Sync + Send,
    E: Fn(&mut S, &[f64]) -> Option<f64> + Sync + Send,
{
    let dim: usize = blocks.iter().sum();
    if blocks.is_empty() {
        let mut s = init();
        return eval(&mut s, &[])
            .filter(|v| !v.is_nan())
            .map(|value| Found {
                point: Vec::new(),
                value,
            });
    }
    let pts: Vec<Vec<f64>> = blocks.iter().map(|&n| simplex_points(n, m)).collect();
    let lens: Vec<usize> = pts.iter().zip(blocks).map(|(p, &n)| p.len() / n).collect();
    let offsets: Vec<usize> = blocks
        .iter()
        .scan(0, |o, &n| Some(std::mem::replace(o, *o + n)))
        .collect();
    let put = |point: &mut [f64], b: usize, i: usize| {
        let n = blocks[b];
        point[offsets[b]..offsets[b] + n].copy_from_slice(&pts[b][i * n..(i + 1) * n]);
    };

    let per_head: Vec<Option<(f64, Vec<usize>)>> = (0..lens[0])
        .into_par_iter()
        .map_init(&init, |scratch, head| {
            let mut idx = vec![0usize; blocks.len()];
            idx[0] = head;
            let mut point = vec![0.0; dim];
            for (b, &i) in idx.iter().enumerate() {
                put(&mut point, b, i);
            }
            let mut best: Option<(f64, Vec<usize>)> = None;
            loop {
                if let Some(v) = eval(scratch, &point) {
                    if !v.is_nan() && best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                        best = Some((v, idx.clone()));
                    }
                }
                // odometer over blocks 1.., last block fastest
                let mut b = blocks.len() - 1;
                loop {
                    if b == 0 {
                        return best;
                    }
                    idx[b] += 1;
                    if idx[b] < lens[b] {
                        put(&mut point, b, idx[b]);
                        break;
                    }
                    idx[b] = 0;
                    put(&mut point, b, 0);
                    b -= 1;
                }
            }
        })
        .collect();

    let (value, idx) = per_head.into_iter().flatten().fold(
        None,
        |acc: Option<(f64, Vec<usize>)>, cand| match acc {
            Some(a) if a.0 <= cand.0 => Some(a),
            _ => Some(cand),
        },
    )?;
    let mut point = vec![0.0; dim];
    for (b, &i) in idx.iter().enumerate() {
        put(&mut point, b, i);
    }
    Some(Found { point, value })
}

/// Exhaustive search with a caller-supplied objective over the product of
/// simplices of sizes `blocks`. Returns the best point and value, or `None`
/// when `eval` rejects every cell.
pub fn grid_search_by<E>(
    blocks: &[usize],
    grid: &GridSpec,
    eval: E,
) -> Result<Option<(Vec<f64>, f64)>, OracleError>
where
    E: Fn(&[f64]) -> Option<f64> + Sync + Send,
{
    grid.validate()?;
    let m = grid.divisions();
    check_cap(product_count(blocks, m), grid)?;
    Ok(search(blocks, m, || (), |_, x| eval(x)).map(|f| (f.point, f.value)))
}

fn check_cap(cells: u64, grid: &GridSpec) -> Result<(), OracleError> {
    if cells > grid.max_cells {
        return Err(OracleError::CellCap {
            cells,
            cap: grid.max_cells,
        });
    }
    Ok(())
}

/// Routing simplices of one scenario in layout order: `(class, od)`.
fn scenario_blocks(inst: &ProblemInstance) -> Vec<usize> {
    let mut blocks = Vec::new();
    for _ in 0..inst.n_classes() {
        for j in 0..inst.n_od() {
            blocks.push(inst.routes(j).len());
        }
    }
    blocks
}

/// Best grid policy for `objective`. The social objective separates over
/// scenarios, so SO is searched one scenario at a time; the AOPS
/// constraints couple scenarios and are searched jointly.
pub fn grid_search_best(
    inst: &ProblemInstance,
    objective: GridObjective<'_>,
    grid: &GridSpec,
) -> Result<GridOutcome, OracleError> {
    grid.validate()?;
    let m = grid.divisions();
    let layout = AlphaLayout::new(inst, PolicyMode::ScenarioDependent, false);
    let per_scenario = scenario_blocks(inst);
    let span = inst.n_classes() * inst.n_routes();
    let mut alpha = vec![0.0; layout.len()];

    let cells = match objective {
        GridObjective::So => {
            let cells = (0..inst.n_scenarios()).fold(0u64, |acc, _| {
                acc.saturating_add(product_count(&per_scenario, m))
            });
            check_cap(cells, grid)?;
            for c in 0..inst.n_scenarios() {
                let cost = ScenarioCost::new(inst, c);
                let found = search(
                    &per_scenario,
                    m,
                    || cost.scratch(),
                    |s, x| Some(cost.eval(s, x)),
                )
                .expect("unfiltered search always finds a cell");
                let o = layout.index(c, 0, 0);
                alpha[o..o + span].copy_from_slice(&found.point);
            }
            cells
        }
        GridObjective::Aops(ue) | GridObjective::AopsEpt(ue) => {
            let ex_post = matches!(objective, GridObjective::AopsEpt(_));
            let blocks: Vec<usize> = (0..inst.n_scenarios())
                .flat_map(|_| per_scenario.iter().copied())
                .collect();
            let cells = product_count(&blocks, m);
            check_cap(cells, grid)?;
            let prog = AopsProgram::new(inst, ue, class_share_weights(inst)?, ex_post);
            let found = search(
                &blocks,
                m,
                || Evaluation::for_shape(prog.shape()),
                |ev, x| {
                    prog.evaluate(x, ev);
                    (ev.max_ineq_violation() <= FEASIBILITY_TOL).then_some(ev.objective)
                },
            );
            match found {
                Some(f) => alpha = f.point,
                None => return Ok(GridOutcome::NoFeasibleCell { cells }),
            }
            cells
        }
    };
    let value = metrics_from_alpha(inst, &layout, &alpha).objective;
    let policy = RoutingPolicy::with_layout(inst, layout, alpha)?;
    Ok(GridOutcome::Best {
        policy,
        value,
        cells,
    })
}

/// Allocation-free social cost of one scenario, weighted by its
/// probability. Only links on some route vary; the rest contribute a
/// constant passenger term.
struct ScenarioCost {
    weight: CostWeights,
    p: f64,
    pce: f64,
    /// `(eps_a, eps_b, eps_c, x_lp)` of every link on some route.
    links: Vec<(f64, f64, f64, f64)>,
    route_links: Vec<Vec<usize>>,
    /// `d` and `d s` per `(class, route)`.
    demand: Vec<f64>,
    money: Vec<f64>,
    fixed_passenger: f64,
    n_routes: usize,
}

impl ScenarioCost {
    fn new(inst: &ProblemInstance, c: usize) -> Self {
        let net = inst.network();
        let mut local = vec![usize::MAX; net.link_count()];
        let mut links = Vec::new();
        let route_links = (0..inst.n_routes())
            .map(|g| {
                inst.global_route(g)
                    .links
                    .iter()
                    .map(|&l| {
                        if local[l] == usize::MAX {
                            let k = net.link(l);
                            local[l] = links.len();
                            links.push((k.eps_a, k.eps_b, k.eps_c, k.x_lp));
                        }
                        local[l]
                    })
                    .collect()
            })
            .collect();
        let fixed_passenger = net
            .links()
            .iter()
            .enumerate()
            .filter(|(l, _)| local[*l] == usize::MAX)
            .map(|(_, k)| k.x_lp * link_time(k, 0.0, inst.pce()))
            .sum();
        let mut demand = Vec::new();
        let mut money = Vec::new();
        for w in 0..inst.n_classes() {
            for g in 0..inst.n_routes() {
                let d = inst.demand(c, inst.route_od(g), w);
                demand.push(d);
                money.push(d * inst.vot(w));
            }
        }
        ScenarioCost {
            weight: CostWeights::social(inst),
            p: inst.probability(c),
            pce: inst.pce(),
            links,
            route_links,
            demand,
            money,
            fixed_passenger,
            n_routes: inst.n_routes(),
        }
    }

    fn scratch(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; self.links.len()], vec![0.0; self.links.len()])
    }

    fn eval(&self, (flows, times): &mut (Vec<f64>, Vec<f64>), alpha: &[f64]) -> f64 {
        flows.iter_mut().for_each(|f| *f = 0.0);
        for (i, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                let q = self.demand[i] * a;
                for &l in &self.route_links[i % self.n_routes] {
                    flows[l] += q;
                }
            }
        }
        let (mut tr, mut pas) = (0.0, self.fixed_passenger);
        for (l, &(ea, eb, ec, xp)) in self.links.iter().enumerate() {
            let v = (xp + self.pce * flows[l]) / ec;
            let t = ea + eb * v.powi(4);
            times[l] = t;
            tr += flows[l] * t;
            pas += xp * t;
        }
        let mut mon = 0.0;
        for (i, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                let j: f64 = self.route_links[i % self.n_routes]
                    .iter()
                    .map(|&l| times[l])
                    .sum();
                mon += self.money[i] * a * j;
            }
        }
        self.p * (self.weight.truck * tr + self.weight.passenger * pas + self.weight.monetary * mon)
    }
}

/// Bound on the sum over routing coordinates of `|d objective / d alpha|`
/// on the whole feasible set, from the largest possible truck flow on each
/// link. Rounding any policy to the grid changes every coordinate by less
/// than the step, so the grid optimum is within `L * step` of the true
/// optimum.
pub fn lipschitz_bound(inst: &ProblemInstance) -> f64 {
    let net = inst.network();
    let (l, mu) = (inst.lambda(), inst.mu());
    let s_max = inst.classes().iter().map(|k| k.vot).fold(0.0, f64::max);
    let pce = inst.pce();
    let mut total = 0.0;
    for c in 0..inst.n_scenarios() {
        let mut x_max = vec![0.0; net.link_count()];
        for j in 0..inst.n_od() {
            let d: f64 = (0..inst.n_classes()).map(|w| inst.demand(c, j, w)).sum();
            let mut on = vec![false; net.link_count()];
            for r in inst.routes(j) {
                r.links.iter().for_each(|&k| on[k] = true);
            }
            for (k, x) in x_max.iter_mut().enumerate() {
                if on[k] {
                    *x += d;
                }
            }
        }
        for g in 0..inst.n_routes() {
            let j = inst.route_od(g);
            let mut per_unit = 0.0;
            let mut time = 0.0;
            for &k in &inst.global_route(g).links {
                let link = net.link(k);
                let x = x_max[k];
                let (t, dt) = (link_time(link, x, pce), link_time_slope(link, x, pce));
                per_unit += l * mu * (t + x * dt)
                    + l * (1.0 - mu) * link.x_lp * dt
                    + (1.0 - l) * s_max * x * dt;
                time += t;
            }
            for w in 0..inst.n_classes() {
                let d = inst.demand(c, j, w);
                total += inst.probability(c) * d * (per_unit + (1.0 - l) * inst.vot(w) * time);
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::{flow_metrics, ue_reference};
    use crate::netmodel::{gen_synthetic, parallel_network, pigou_instance, SyntheticSpec};

    #[test]
    fn simplex_points_are_lexicographic_and_include_vertices() {
        let p = simplex_points(3, 2);
        let rows: Vec<&[f64]> = p.chunks(3).collect();
        assert_eq!(rows.len() as u64, simplex_count(3, 2));
        assert_eq!(rows[0], &[0.0, 0.0, 1.0]);
        assert_eq!(*rows.last().unwrap(), &[1.0, 0.0, 0.0]);
        assert!(rows.windows(2).all(|w| w[0] < w[1]));
        assert!(rows
            .iter()
            .all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-15));
        assert_eq!(simplex_count(3, 100), 5151);
    }

    #[test]
    fn grid_spec_bounds() {
        assert!(GridSpec::new(0.0).is_err());
        assert!(GridSpec::new(0.6).is_err());
        let g = GridSpec::new(0.3).unwrap();
        assert_eq!(g.divisions(), 4);
        assert_eq!(GridSpec::new(0.01).unwrap().divisions(), 100);
    }

    #[test]
    fn pigou_so_grid() {
        let inst = pigou_instance(2.0, 100.0);
        let out =
            grid_search_best(&inst, GridObjective::So, &GridSpec::new(0.01).unwrap()).unwrap();
        let v = out.value().unwrap();
        assert!((v - 1.4650077).abs() < 5e-3, "{v}");
        assert!(v >= 1.4650077560 - 1e-9);
        assert_eq!(out.cells(), 101);
    }

    #[test]
    fn single_route_is_one_exact_cell() {
        let inst = pigou_instance(2.0, 100.0);
        let net = inst.network().clone();
        let routes = vec![vec![crate::netmodel::Route::new(&net, 0, vec![1])]];
        let single = crate::netmodel::ProblemInstance::new(
            net,
            inst.od_pairs().to_vec(),
            routes,
            inst.classes().to_vec(),
            inst.scenarios().to_vec(),
            1.0,
            1.0,
            3.0,
        )
        .unwrap();
        let out =
            grid_search_best(&single, GridObjective::So, &GridSpec::new(0.1).unwrap()).unwrap();
        assert_eq!(out.cells(), 1);
        // all 2 trucks on B: 2 * 2^4
        assert_eq!(out.value(), Some(32.0));
    }

    #[test]
    fn everything_filtered() {
        let g = GridSpec::new(0.25).unwrap();
        assert_eq!(grid_search_by(&[3, 2], &g, |_| None).unwrap(), None);
        let (x, v) = grid_search_by(&[3, 2], &g, |x| Some(x[1] + x[4]))
            .unwrap()
            .unwrap();
        assert_eq!(v, 0.0);
        // first minimizer in lexicographic order
        assert_eq!(x, vec![0.0, 0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn cap_is_enforced() {
        let inst = gen_synthetic(&parallel_network(3), 1, &SyntheticSpec::three_route()).unwrap();
        let g = GridSpec {
            step: 0.01,
            max_cells: 1000,
        };
        assert!(matches!(
            grid_search_best(&inst, GridObjective::So, &g),
            Err(OracleError::CellCap { .. })
        ));
    }

    #[test]
    fn fast_cost_matches_metrics() {
        let inst = gen_synthetic(&parallel_network(3), 4, &SyntheticSpec::three_route()).unwrap();
        let policy = RoutingPolicy::uniform(&inst, PolicyMode::ScenarioDependent);
        let layout = policy.layout();
        let span = inst.n_classes() * inst.n_routes();
        let total: f64 = (0..inst.n_scenarios())
            .map(|c| {
                let cost = ScenarioCost::new(&inst, c);
                let o = layout.index(c, 0, 0);
                cost.eval(&mut cost.scratch(), &policy.as_slice()[o..o + span])
            })
            .sum();
        let m = flow_metrics(&inst, &policy).objective;
        assert!((total - m).abs() <= 1e-10 * m.abs().max(1.0));
    }

    #[test]
    fn coarse_aops_grid_is_feasible_and_bounded() {
        let inst = pigou_instance(2.0, 100.0);
        let ue_policy = RoutingPolicy::class_anonymous(&inst, &[0.5, 0.5]).unwrap();
        let ue = ue_reference(&inst, &ue_policy).unwrap();
        let g = GridSpec::new(0.01).unwrap();
        let so = grid_search_best(&inst, GridObjective::So, &g)
            .unwrap()
            .value()
            .unwrap();
        for obj in [GridObjective::Aops(&ue), GridObjective::AopsEpt(&ue)] {
            let v = grid_search_best(&inst, obj, &g).unwrap().value().unwrap();
            assert!(v >= so - 1e-12 && v <= 2.0 + 1e-12);
        }
    }

    #[test]
    fn lipschitz_covers_grid_gap() {
        let inst = pigou_instance(2.0, 100.0);
        // 2 on A, and 2 * (16 + 2 * 32) on B
        assert!((lipschitz_bound(&inst) - 162.0).abs() < 1e-9);
        let g = GridSpec::new(0.1).unwrap();
        let v = grid_search_best(&inst, GridObjective::So, &g)
            .unwrap()
            .value()
            .unwrap();
        assert!(v <= 1.4650077560 + lipschitz_bound(&inst) * g.effective_step());
    }
}
