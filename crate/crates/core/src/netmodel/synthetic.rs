//! Seeded synthetic parameters for a fixed topology.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::instance::{DemandScenario, OdPair, ProblemInstance, Route, RouteSelection, VotClass};
use super::routes::enumerate_k_least_congested;
use super::{InstanceError, Link, Network};

#[derive(Debug, Clone, PartialEq)]
pub enum DemandSpec {
    /// Each `d[c][j][w]` drawn independently from `U[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
    /// `demand[c][w][j]`, same layout as the instance file.
    Fixed(Vec<Vec<Vec<f64>>>),
}

/// Parameter ranges for [`gen_synthetic`]. Every range is a closed
/// interval `(lo, hi)` sampled uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Free-flow time (hours).
    pub eps_a: (f64, f64),
    /// Ratio `eps_b / eps_a`.
    pub bpr_ratio: (f64, f64),
    /// Capacity (PCE).
    pub eps_c: (f64, f64),
    /// Passenger volume.
    pub x_lp: (f64, f64),
    /// 1-based node pairs. Empty means the single pair `(1, n)` with `n`
    /// the last node.
    pub od_pairs: Vec<(usize, usize)>,
    pub vots: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub demand: DemandSpec,
    pub k: usize,
    pub lambda: f64,
    pub mu: f64,
    pub pce: f64,
}

impl SyntheticSpec {
    /// Six OD pairs, two VOT classes and two equiprobable demand matrices
    /// on the Sioux Falls topology.
    pub fn sioux_falls() -> Self {
        SyntheticSpec {
            eps_a: (0.05, 0.3),
            bpr_ratio: (0.15, 0.6),
            eps_c: (30.0, 60.0),
            x_lp: (10.0, 40.0),
            od_pairs: vec![(1, 7), (1, 11), (10, 11), (10, 20), (15, 5), (24, 10)],
            vots: vec![200.0, 50.0],
            probabilities: vec![0.5, 0.5],
            demand: DemandSpec::Fixed(vec![
                vec![
                    vec![3.0, 4.5, 6.0, 3.0, 14.0, 3.6],
                    vec![1.0, 2.8, 5.4, 7.0, 9.0, 2.0],
                ],
                vec![
                    vec![5.0, 1.8, 3.9, 15.0, 6.4, 2.4],
                    vec![6.0, 5.5, 1.8, 6.5, 11.0, 6.0],
                ],
            ]),
            k: 10,
            lambda: 0.9,
            mu: 0.9,
            pce: 3.0,
        }
    }

    /// One OD pair over [`parallel_network`]`(3)`: two classes, two
    /// scenarios, random demand. Small enough for exhaustive grids.
    pub fn three_route() -> Self {
        SyntheticSpec {
            eps_a: (0.2, 1.0),
            bpr_ratio: (0.5, 2.0),
            eps_c: (2.0, 6.0),
            x_lp: (0.0, 2.0),
            od_pairs: vec![(1, 2)],
            vots: vec![120.0, 40.0],
            probabilities: vec![0.5, 0.5],
            demand: DemandSpec::Uniform { lo: 0.5, hi: 2.0 },
            k: 3,
            lambda: 0.9,
            mu: 0.9,
            pce: 3.0,
        }
    }

    fn validate(&self) -> Result<(), InstanceError> {
        let ranges = [
            ("eps_a", self.eps_a, false),
            ("bpr_ratio", self.bpr_ratio, false),
            ("eps_c", self.eps_c, true),
            ("x_lp", self.x_lp, false),
        ];
        for (name, (lo, hi), strict) in ranges {
            let ok = lo.is_finite()
                && hi.is_finite()
                && lo <= hi
                && if strict { lo > 0.0 } else { lo >= 0.0 };
            if !ok {
                return Err(InstanceError::Invalid(format!(
                    "range {name} = ({lo}, {hi}) is not a valid range"
                )));
            }
        }
        if let DemandSpec::Uniform { lo, hi } = self.demand {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return Err(InstanceError::Invalid(format!(
                    "demand range ({lo}, {hi}) is not a valid range"
                )));
            }
        }
        if self.k == 0 {
            return Err(InstanceError::Invalid("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// `n` parallel links from node 1 to node 2, ids `A`, `B`, ... Link
/// parameters are placeholders meant to be replaced by [`gen_synthetic`].
pub fn parallel_network(n: usize) -> Network {
    let links = (0..n)
        .map(|i| Link {
            id: ((b'A' + (i % 26) as u8) as char).to_string() + &"'".repeat(i / 26),
            tail: 1,
            head: 2,
            eps_a: 1.0,
            eps_b: 1.0,
            eps_c: 1.0,
            x_lp: 0.0,
        })
        .collect();
    Network::new(2, links).expect("parallel network is valid")
}

/// Two parallel links: `A` with constant time 1 and `B` with time
/// `x_B^4` for `x_B` trucks (pce 3). One OD pair, one class, one scenario,
/// `lambda = mu = 1`.
pub fn pigou_instance(demand: f64, vot: f64) -> ProblemInstance {
    let net = Network::new(
        2,
        vec![
            Link {
                id: "A".into(),
                tail: 1,
                head: 2,
                eps_a: 1.0,
                eps_b: 0.0,
                eps_c: 1.0,
                x_lp: 0.0,
            },
            Link {
                id: "B".into(),
                tail: 1,
                head: 2,
                eps_a: 0.0,
                eps_b: 1.0,
                eps_c: 3.0,
                x_lp: 0.0,
            },
        ],
    )
    .expect("fixed network");
    let routes = vec![vec![
        Route::new(&net, 0, vec![0]),
        Route::new(&net, 0, vec![1]),
    ]];
    ProblemInstance::new(
        net,
        vec![OdPair {
            origin: 1,
            destination: 2,
        }],
        routes,
        vec![VotClass { vot }],
        vec![DemandScenario {
            probability: 1.0,
            demand: vec![vec![demand]],
        }],
        1.0,
        1.0,
        3.0,
    )
    .expect("valid for nonnegative demand and positive vot")
}

/// Draws link parameters and demand from `spec`, keeping the topology of
/// `net`. The result is a deterministic function of `(net, seed, spec)`.
pub fn gen_synthetic(
    net: &Network,
    seed: u64,
    spec: &SyntheticSpec,
) -> Result<ProblemInstance, InstanceError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |(lo, hi): (f64, f64)| if lo == hi { lo } else { rng.gen_range(lo..=hi) };

    let mut params = Vec::with_capacity(net.link_count());
    for _ in 0..net.link_count() {
        let a = draw(spec.eps_a);
        let ratio = draw(spec.bpr_ratio);
        let c = draw(spec.eps_c);
        let xlp = draw(spec.x_lp);
        params.push((a, a * ratio, c, xlp));
    }
    let net = net
        .with_parameters(|i, _| params[i])
        .map_err(|e| InstanceError::Invalid(e.to_string()))?;

    let od_pairs: Vec<OdPair> = if spec.od_pairs.is_empty() {
        vec![OdPair {
            origin: 1,
            destination: net.node_count(),
        }]
    } else {
        spec.od_pairs
            .iter()
            .map(|&(o, d)| OdPair {
                origin: o,
                destination: d,
            })
            .collect()
    };
    let n_od = od_pairs.len();
    let n_classes = spec.vots.len();

    let demand_cwj: Vec<Vec<Vec<f64>>> = match &spec.demand {
        DemandSpec::Fixed(m) => m.clone(),
        DemandSpec::Uniform { lo, hi } => (0..spec.probabilities.len())
            .map(|_| {
                (0..n_classes)
                    .map(|_| (0..n_od).map(|_| draw((*lo, *hi))).collect())
                    .collect()
            })
            .collect(),
    };
    if demand_cwj.len() != spec.probabilities.len()
        || demand_cwj
            .iter()
            .any(|m| m.len() != n_classes || m.iter().any(|row| row.len() != n_od))
    {
        return Err(InstanceError::config(
            "scenarios",
            format!(
                "demand must be {} scenarios x {n_classes} classes x {n_od} OD pairs",
                spec.probabilities.len()
            ),
        ));
    }
    let scenarios = spec
        .probabilities
        .iter()
        .zip(&demand_cwj)
        .map(|(&p, m)| DemandScenario {
            probability: p,
            demand: (0..n_od)
                .map(|j| (0..n_classes).map(|w| m[w][j]).collect())
                .collect(),
        })
        .collect();

    let mut routes = Vec::with_capacity(n_od);
    for (j, od) in od_pairs.iter().enumerate() {
        if od.origin == 0
            || od.origin > net.node_count()
            || od.destination == 0
            || od.destination > net.node_count()
        {
            return Err(InstanceError::config(
                "od_pairs",
                format!("unknown node in ({}, {})", od.origin, od.destination),
            ));
        }
        let found = enumerate_k_least_congested(&net, *od, spec.k, spec.pce)?;
        routes.push(
            found
                .into_iter()
                .map(|links| Route::new(&net, j, links))
                .collect(),
        );
    }

    let mut inst = ProblemInstance::new(
        net,
        od_pairs,
        routes,
        spec.vots.iter().map(|&vot| VotClass { vot }).collect(),
        scenarios,
        spec.lambda,
        spec.mu,
        spec.pce,
    )?;
    inst.set_route_selection(RouteSelection::KLeastCongested(spec.k));
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{parse_network, SIOUX_FALLS};

    #[test]
    fn deterministic_in_seed() {
        let net = parse_network(SIOUX_FALLS).unwrap();
        let spec = SyntheticSpec::sioux_falls();
        let a = gen_synthetic(&net, 7, &spec).unwrap();
        let b = gen_synthetic(&net, 7, &spec).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(&net, 8, &spec).unwrap();
        assert_ne!(a.network().link(0).eps_b, c.network().link(0).eps_b);
    }

    #[test]
    fn sioux_falls_shape() {
        let net = parse_network(SIOUX_FALLS).unwrap();
        let inst = gen_synthetic(&net, 1, &SyntheticSpec::sioux_falls()).unwrap();
        assert_eq!(inst.network().node_count(), 24);
        assert_eq!(inst.network().link_count(), 76);
        assert_eq!(inst.n_od(), 6);
        assert_eq!(inst.n_classes(), 2);
        assert_eq!(inst.n_scenarios(), 2);
        assert!((0..6).all(|j| inst.routes(j).len() == 10));
        assert_eq!(inst.demand(0, 4, 0), 14.0);
        assert_eq!(inst.demand(1, 5, 1), 6.0);
    }

    #[test]
    fn three_route_preset() {
        let inst = gen_synthetic(&parallel_network(3), 3, &SyntheticSpec::three_route()).unwrap();
        assert_eq!(inst.n_routes(), 3);
        assert!(inst.network().links().iter().all(|l| l.eps_b > 0.0));
    }

    #[test]
    fn bad_ranges_rejected() {
        let mut spec = SyntheticSpec::three_route();
        spec.eps_c = (0.0, 1.0);
        assert!(gen_synthetic(&parallel_network(3), 0, &spec).is_err());
        let mut spec = SyntheticSpec::three_route();
        spec.eps_a = (2.0, 1.0);
        assert!(gen_synthetic(&parallel_network(3), 0, &spec).is_err());
    }
}
