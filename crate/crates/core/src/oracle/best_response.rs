use crate::assignment::{
    expected_route_times, marginal_regret, AlphaLayout, PolicyMode, RoutingPolicy,
};
use crate::netmodel::ProblemInstance;
use crate::schemes::REGRET_TOL;

use super::OracleError;

/// Iteration stops once the marginal regret falls below this, well inside
/// [`REGRET_TOL`].
pub const BR_TARGET_REGRET: f64 = REGRET_TOL * 1e-2;

/// Cost differences below this (relative to `max(1, F)`) count as ties.
const TIE_TOL: f64 = 1e-12;

const BISECTION_STEPS: usize = 80;

/// Damped best response from the uniform class-anonymous policy.
pub fn best_response_ue(
    inst: &ProblemInstance,
    iters: usize,
    damping: f64,
) -> Result<RoutingPolicy, OracleError> {
    let start = RoutingPolicy::uniform(inst, PolicyMode::ScenarioIndependent);
    best_response_ue_from(inst, start.block(0, 0), iters, damping)
}

/// Damped best response from per-route proportions `start`, shared by all
/// classes and scenarios.
///
/// Each sweep visits the OD pairs in order and moves drivers from the most
/// expensive used route to the cheapest one, `damping` times the amount
/// that equalizes their expected times. Routes within the tie tolerance of
/// the cheapest keep their drivers.
pub fn best_response_ue_from(
    inst: &ProblemInstance,
    start: &[f64],
    iters: usize,
    damping: f64,
) -> Result<RoutingPolicy, OracleError> {
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(OracleError::InvalidArgument(format!(
            "damping must lie in (0, 1], got {damping}"
        )));
    }
    let mut alpha = RoutingPolicy::class_anonymous(inst, start)?
        .block(0, 0)
        .to_vec();
    let layout = AlphaLayout::new(inst, PolicyMode::ScenarioIndependent, true);
    let times = |a: &[f64]| expected_route_times(inst, &layout, a);

    let mut regret = f64::INFINITY;
    for _ in 0..=iters {
        regret = marginal_regret(inst, &RoutingPolicy::class_anonymous(inst, &alpha)?);
        if regret <= BR_TARGET_REGRET {
            return RoutingPolicy::class_anonymous(inst, &alpha).map_err(Into::into);
        }
        for j in 0..inst.n_od() {
            let f = times(&alpha);
            let range = inst.route_range(j);
            let b = range
                .clone()
                .min_by(|&x, &y| f[x].total_cmp(&f[y]))
                .expect("routes are nonempty");
            let Some(u) = range
                .clone()
                .filter(|&g| alpha[g] > 0.0)
                .max_by(|&x, &y| f[x].total_cmp(&f[y]))
            else {
                continue;
            };
            if f[u] - f[b] <= TIE_TOL * f[b].abs().max(1.0) {
                continue;
            }
            let gap = |t: f64| {
                let mut a = alpha.clone();
                a[u] -= t;
                a[b] += t;
                let f = times(&a);
                f[u] - f[b]
            };
            let cap = alpha[u];
            let t = if gap(cap) >= 0.0 {
                cap
            } else {
                let (mut lo, mut hi) = (0.0, cap);
                for _ in 0..BISECTION_STEPS {
                    let mid = 0.5 * (lo + hi);
                    if gap(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            };
            let t = (damping * t).min(alpha[u]);
            alpha[u] -= t;
            alpha[b] += t;
        }
    }
    Err(OracleError::NoConvergence { iters, regret })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{
        gen_synthetic, parallel_network, pigou_instance, DemandScenario, OdPair, Route,
        SyntheticSpec, VotClass,
    };
    use crate::schemes::{solve_ue, SchemeOptions};

    #[test]
    fn pigou_equilibrium() {
        let inst = pigou_instance(2.0, 100.0);
        for start in [[1.0, 0.0], [0.0, 1.0], [0.9, 0.1]] {
            let p = best_response_ue_from(&inst, &start, 200, 0.7).unwrap();
            assert!((p.alpha(0, 0, 1) - 0.5).abs() < 1e-4, "{start:?}");
            assert!(marginal_regret(&inst, &p) <= REGRET_TOL);
        }
    }

    #[test]
    fn constant_costs_keep_any_start() {
        let net = parallel_network(3)
            .with_parameters(|_, _| (2.0, 0.0, 1.0, 0.0))
            .unwrap();
        let routes = vec![(0..3).map(|l| Route::new(&net, 0, vec![l])).collect()];
        let inst = ProblemInstance::new(
            net,
            vec![OdPair {
                origin: 1,
                destination: 2,
            }],
            routes,
            vec![VotClass { vot: 10.0 }, VotClass { vot: 30.0 }],
            vec![DemandScenario {
                probability: 1.0,
                demand: vec![vec![1.0, 2.0]],
            }],
            0.5,
            0.5,
            3.0,
        )
        .unwrap();
        let start = [0.2, 0.3, 0.5];
        let p = best_response_ue_from(&inst, &start, 0, 1.0).unwrap();
        assert_eq!(p.block(0, 0), &start);
    }

    #[test]
    fn agrees_with_mpcc_on_three_routes() {
        for seed in [1, 3] {
            let inst =
                gen_synthetic(&parallel_network(3), seed, &SyntheticSpec::three_route()).unwrap();
            let br = best_response_ue(&inst, 500, 1.0).unwrap();
            assert!(marginal_regret(&inst, &br) <= REGRET_TOL);
            let ue = solve_ue(&inst, &SchemeOptions::default()).unwrap();
            for g in 0..inst.n_routes() {
                assert!(
                    (br.alpha(0, 0, g) - ue.policy.alpha(0, 0, g)).abs() <= 1e-3,
                    "seed {seed} route {g}"
                );
            }
        }
    }

    #[test]
    fn rejects_bad_damping() {
        let inst = pigou_instance(2.0, 1.0);
        assert!(best_response_ue(&inst, 10, 0.0).is_err());
        assert!(best_response_ue(&inst, 10, 1.5).is_err());
    }
}
