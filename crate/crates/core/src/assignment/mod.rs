//! Flow and cost algebra: truck link loads, BPR times, route times,
//! expected totals and the UE reference.

mod cost;
mod policy;
mod reference;

pub use cost::{
    cost_adjoint, expected_route_time, expected_route_times, expected_totals, flow_metrics,
    link_time, link_time_slope, metrics_from_alpha, route_time, scenario_totals, truck_link_flows,
    weighted_cost, CostWeights, FlowMetrics, ScenarioLoad,
};
pub use policy::{AlphaLayout, PolicyMode, RoutingPolicy, SIMPLEX_TOL};
pub use reference::{marginal_regret, ue_reference, UeReference, UE_CLASS_SPREAD_TOL};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignmentError {
    #[error("policy has {got} entries, instance needs {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("the UE reference needs a scenario-independent policy")]
    NotScenarioIndependent,
    #[error("UE averages differ across classes by {spread} in scenario {scenario}, OD pair {od}")]
    ClassSpread {
        spread: f64,
        scenario: usize,
        od: usize,
    },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{
        gen_synthetic, parallel_network, pigou_instance, Link, ProblemInstance, SyntheticSpec,
    };
    use proptest::prelude::*;

    fn p1_policy(inst: &ProblemInstance, b: f64) -> RoutingPolicy {
        RoutingPolicy::new(inst, PolicyMode::ScenarioIndependent, vec![1.0 - b, b]).unwrap()
    }

    fn link(a: f64, b: f64, c: f64, xlp: f64) -> Link {
        Link {
            id: "x".into(),
            tail: 1,
            head: 2,
            eps_a: a,
            eps_b: b,
            eps_c: c,
            x_lp: xlp,
        }
    }

    #[test]
    fn link_time_examples() {
        assert_eq!(link_time(&link(0.0, 1.0, 3.0, 0.0), 1.0, 3.0), 1.0);
        assert_eq!(link_time(&link(0.7, 0.0, 3.0, 5.0), 123.0, 3.0), 0.7);
        assert_eq!(link_time(&link(0.5, 2.0, 5.0, 2.0), 1.0, 3.0), 2.5);
    }

    #[test]
    fn p1_flows_and_times() {
        let inst = pigou_instance(2.0, 100.0);
        let ue = p1_policy(&inst, 0.5);
        assert_eq!(truck_link_flows(&inst, &ue, 0), vec![1.0, 1.0]);
        assert_eq!(route_time(&inst, &ue, 0, 1), 1.0);
        assert_eq!(route_time(&inst, &ue, 0, 0), 1.0);
        // SO split from the closed form x_B = 5^(-1/4)
        let x = 5f64.powf(-0.25);
        let so = p1_policy(&inst, x / 2.0);
        let flows = truck_link_flows(&inst, &so, 0);
        assert!((flows[1] - 0.66874).abs() < 1e-5);
        assert_eq!(expected_route_time(&inst, &so, 0, 0, 0), 1.0);
        let zero = pigou_instance(0.0, 100.0);
        assert_eq!(route_time(&zero, &p1_policy(&zero, 0.5), 0, 1), 0.0);
    }

    #[test]
    fn p1_metrics() {
        let inst = pigou_instance(2.0, 100.0);
        let m = flow_metrics(&inst, &p1_policy(&inst, 0.5));
        assert!((m.e_t_tr - 2.0).abs() < 1e-12);
        assert!((m.e_t_mon - 200.0).abs() < 1e-9);
        assert_eq!(m.e_t_p, 0.0);
        let x = 5f64.powf(-0.25);
        let m = flow_metrics(&inst, &p1_policy(&inst, x / 2.0));
        let exact = (2.0 - x) + x.powi(5);
        assert!((m.e_t_tr - exact).abs() < 1e-12);
        assert!((m.e_t_tr - 1.4650077).abs() < 1e-7);
        assert_eq!(m.objective, m.e_t_tr);
        let zero = pigou_instance(0.0, 100.0);
        let m = flow_metrics(&zero, &p1_policy(&zero, 0.5));
        assert_eq!(
            (m.e_t_tr, m.e_t_mon, m.e_t_p, m.e_t_s),
            (0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn csv_row_has_six_decimals() {
        let inst = pigou_instance(2.0, 100.0);
        let m = flow_metrics(&inst, &p1_policy(&inst, 0.5));
        assert_eq!(
            m.csv_row("UE", 1.0, 1.0),
            "UE,1.000000,1.000000,2.000000,200.000000,0.000000,2.000000,2.000000"
        );
        assert_eq!(FlowMetrics::CSV_HEADER.split(',').count(), 8);
    }

    #[test]
    fn two_scenario_expected_time() {
        let inst = gen_synthetic(&parallel_network(3), 5, &SyntheticSpec::three_route()).unwrap();
        let pol = RoutingPolicy::uniform(&inst, PolicyMode::ScenarioDependent);
        let j0 = route_time(&inst, &pol, 0, 2);
        let j1 = route_time(&inst, &pol, 1, 2);
        let f = expected_route_time(&inst, &pol, 0, 1, 2);
        assert!((f - 0.5 * (j0 + j1)).abs() < 1e-15);
    }

    #[test]
    fn ue_reference_and_regret_on_p1() {
        let inst = pigou_instance(2.0, 100.0);
        let ue = p1_policy(&inst, 0.5);
        let r = ue_reference(&inst, &ue).unwrap();
        assert_eq!(r.a_ue, vec![vec![1.0]]);
        assert_eq!(r.e_t_mon_ue, 200.0);
        assert_eq!(r.class_spread, 0.0);
        assert_eq!(marginal_regret(&inst, &ue), 0.0);
        assert_eq!(marginal_regret(&inst, &p1_policy(&inst, 1.0)), 15.0);
        let dep = ue.to_scenario_dependent();
        assert_eq!(
            ue_reference(&inst, &dep).unwrap_err(),
            AssignmentError::NotScenarioIndependent
        );
    }

    #[test]
    fn single_route_reference() {
        let mut spec = SyntheticSpec::three_route();
        spec.k = 1;
        let inst = gen_synthetic(&parallel_network(3), 2, &spec).unwrap();
        let pol = RoutingPolicy::uniform(&inst, PolicyMode::ScenarioIndependent);
        let r = ue_reference(&inst, &pol).unwrap();
        for c in 0..2 {
            assert_eq!(r.a_ue[c][0], route_time(&inst, &pol, c, 0));
        }
        assert_eq!(marginal_regret(&inst, &pol), 0.0);
    }

    #[test]
    fn class_inconsistent_ue_is_flagged() {
        let inst = gen_synthetic(&parallel_network(3), 2, &SyntheticSpec::three_route()).unwrap();
        let pol = RoutingPolicy::new(
            &inst,
            PolicyMode::ScenarioIndependent,
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        assert!(matches!(
            ue_reference(&inst, &pol),
            Err(AssignmentError::ClassSpread { .. })
        ));
    }

    fn random_policy(inst: &ProblemInstance, mode: PolicyMode, raw: &[f64]) -> RoutingPolicy {
        let layout = AlphaLayout::new(inst, mode, false);
        let mut alpha: Vec<f64> = (0..layout.len())
            .map(|i| raw[i % raw.len()] + 1e-3)
            .collect();
        for b in 0..layout.n_blocks() {
            for j in 0..inst.n_od() {
                let r = inst.route_range(j);
                let block = &mut alpha[b * layout.n_routes..(b + 1) * layout.n_routes];
                let s: f64 = block[r.clone()].iter().sum();
                block[r].iter_mut().for_each(|a| *a /= s);
            }
        }
        RoutingPolicy::new(inst, mode, alpha).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn flows_linear_in_demand(seed in 0u64..1000, raw in prop::collection::vec(0.0f64..1.0, 12)) {
            let inst = gen_synthetic(&parallel_network(3), seed, &SyntheticSpec::three_route()).unwrap();
            let doubled = inst
                .with_scenarios(inst.scenarios().iter().map(|s| {
                    let mut s = s.clone();
                    s.demand.iter_mut().flatten().for_each(|d| *d *= 2.0);
                    s
                }).collect())
                .unwrap();
            let pol = random_policy(&inst, PolicyMode::ScenarioDependent, &raw);
            for c in 0..inst.n_scenarios() {
                let x1 = truck_link_flows(&inst, &pol, c);
                let x2 = truck_link_flows(&doubled, &pol, c);
                for (a, b) in x1.iter().zip(&x2) {
                    prop_assert!(*a >= 0.0);
                    prop_assert_eq!(2.0 * a, *b);
                }
            }
        }

        #[test]
        fn link_time_monotone(a in 0.0f64..2.0, b in 1e-3f64..3.0, c in 0.1f64..10.0, xlp in 0.0f64..5.0,
                              x in 0.0f64..10.0, dx in 1e-3f64..5.0) {
            let l = link(a, b, c, xlp);
            prop_assert!(link_time(&l, x + dx, 3.0) > link_time(&l, x, 3.0));
            let flat = link(a, 0.0, c, xlp);
            prop_assert!(link_time(&flat, x + dx, 3.0) == link_time(&flat, x, 3.0));
        }

        #[test]
        fn totals_consistent(seed in 0u64..1000, raw in prop::collection::vec(0.0f64..1.0, 12)) {
            let inst = gen_synthetic(&parallel_network(3), seed, &SyntheticSpec::three_route()).unwrap();
            let pol = random_policy(&inst, PolicyMode::ScenarioDependent, &raw);
            let m = flow_metrics(&inst, &pol);
            prop_assert!((m.e_t_s - (m.e_t_p + m.e_t_tr)).abs() <= 1e-9 * m.e_t_s.abs().max(1.0));
            for w in 1..inst.n_classes() {
                prop_assert_eq!(expected_route_time(&inst, &pol, 0, w, 1), expected_route_time(&inst, &pol, 0, 0, 1));
            }
        }

        #[test]
        fn weighted_cost_gradient(seed in 0u64..1000, raw in prop::collection::vec(0.05f64..1.0, 12)) {
            let inst = gen_synthetic(&parallel_network(3), seed, &SyntheticSpec::three_route()).unwrap();
            let pol = random_policy(&inst, PolicyMode::ScenarioDependent, &raw);
            let layout = pol.layout();
            let x = pol.as_slice().to_vec();
            let w = CostWeights::social(&inst);
            let mut g = vec![0.0; x.len()];
            let v = weighted_cost(&inst, &layout, &x, w, Some(&mut g));
            prop_assert!((v - flow_metrics(&inst, &pol).objective).abs() <= 1e-9 * v.abs().max(1.0));
            let h = 1e-6;
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let fd = (weighted_cost(&inst, &layout, &xp, w, None) - weighted_cost(&inst, &layout, &xm, w, None)) / (2.0 * h);
                prop_assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0), "i={} fd={} g={}", i, fd, g[i]);
            }
        }
    }
}
