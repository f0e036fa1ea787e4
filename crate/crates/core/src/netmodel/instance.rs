use serde::{Deserialize, Serialize};

use super::routes::enumerate_k_least_congested;
use super::{InstanceError, Network, PROBABILITY_TOL};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VotClass {
    /// Value of time (currency per hour).
    pub vot: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandScenario {
    pub probability: f64,
    /// `demand[j][w]`: trucks of class `w` on OD pair `j`. Fractional values
    /// are legal (continuum of users).
    pub demand: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OdPair {
    pub origin: usize,
    pub destination: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub od: usize,
    /// Link indices into the network, in travel order.
    pub links: Vec<usize>,
    pub label: String,
}

impl Route {
    pub fn new(net: &Network, od: usize, links: Vec<usize>) -> Self {
        let label = links
            .iter()
            .map(|&l| net.link(l).id.as_str())
            .collect::<Vec<_>>()
            .join("-");
        Route { od, links, label }
    }
}

/// How route sets were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteSelection {
    Explicit,
    KLeastCongested(usize),
}

/// The immutable world every solve reads.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    network: Network,
    od_pairs: Vec<OdPair>,
    routes: Vec<Vec<Route>>,
    classes: Vec<VotClass>,
    scenarios: Vec<DemandScenario>,
    lambda: f64,
    mu: f64,
    pce: f64,
    route_selection: RouteSelection,
    route_offset: Vec<usize>,
    route_od: Vec<usize>,
}

impl ProblemInstance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        network: Network,
        od_pairs: Vec<OdPair>,
        routes: Vec<Vec<Route>>,
        classes: Vec<VotClass>,
        scenarios: Vec<DemandScenario>,
        lambda: f64,
        mu: f64,
        pce: f64,
    ) -> Result<Self, InstanceError> {
        if od_pairs.is_empty() {
            return Err(InstanceError::config(
                "od_pairs",
                "at least one OD pair is required",
            ));
        }
        if classes.is_empty() {
            return Err(InstanceError::config(
                "classes",
                "at least one class is required",
            ));
        }
        if scenarios.is_empty() {
            return Err(InstanceError::config(
                "scenarios",
                "at least one scenario is required",
            ));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(InstanceError::config(
                "weights",
                format!("lambda must lie in [0,1], got {lambda}"),
            ));
        }
        if !(0.0..=1.0).contains(&mu) {
            return Err(InstanceError::config(
                "weights",
                format!("mu must lie in [0,1], got {mu}"),
            ));
        }
        if !(pce > 0.0 && pce.is_finite()) {
            return Err(InstanceError::config(
                "weights",
                format!("pce must be positive, got {pce}"),
            ));
        }
        for (i, c) in classes.iter().enumerate() {
            if !(c.vot > 0.0 && c.vot.is_finite()) {
                return Err(InstanceError::config(
                    "classes",
                    format!("value of time must be positive, got {}", c.vot),
                ));
            }
            if classes[..i].iter().any(|o| o.vot == c.vot) {
                return Err(InstanceError::DuplicateVot { vot: c.vot });
            }
        }
        for od in &od_pairs {
            for node in [od.origin, od.destination] {
                if node == 0 || node > network.node_count() {
                    return Err(InstanceError::config(
                        "od_pairs",
                        format!("unknown node {node}"),
                    ));
                }
            }
            if od.origin == od.destination {
                return Err(InstanceError::config(
                    "od_pairs",
                    format!("origin equals destination ({})", od.origin),
                ));
            }
        }
        let mut sum = 0.0;
        for (c, s) in scenarios.iter().enumerate() {
            if !(s.probability > 0.0 && s.probability.is_finite()) {
                return Err(InstanceError::config(
                    "scenarios",
                    format!(
                        "scenario {} has non-positive probability {}",
                        c + 1,
                        s.probability
                    ),
                ));
            }
            sum += s.probability;
            if s.demand.len() != od_pairs.len()
                || s.demand.iter().any(|row| row.len() != classes.len())
            {
                return Err(InstanceError::config(
                    "scenarios",
                    format!(
                        "scenario {} demand must be {} classes x {} OD pairs",
                        c + 1,
                        classes.len(),
                        od_pairs.len()
                    ),
                ));
            }
            if s.demand
                .iter()
                .flatten()
                .any(|d| !(*d >= 0.0 && d.is_finite()))
            {
                return Err(InstanceError::config(
                    "scenarios",
                    format!("scenario {} has negative demand", c + 1),
                ));
            }
        }
        if (sum - 1.0).abs() > PROBABILITY_TOL {
            return Err(InstanceError::ProbabilitySum { sum });
        }
        if routes.len() != od_pairs.len() {
            return Err(InstanceError::config(
                "routes",
                "one route set per OD pair is required",
            ));
        }
        for (j, set) in routes.iter().enumerate() {
            if set.is_empty() {
                let od = od_pairs[j];
                return Err(InstanceError::NoPath {
                    origin: od.origin,
                    destination: od.destination,
                });
            }
            for r in set {
                if r.od != j {
                    return Err(InstanceError::config(
                        "routes",
                        format!("route {} filed under OD {}", r.label, j + 1),
                    ));
                }
                check_route(&network, od_pairs[j], r)?;
            }
        }
        let mut route_offset = Vec::with_capacity(routes.len() + 1);
        let mut route_od = Vec::new();
        let mut acc = 0;
        for (j, set) in routes.iter().enumerate() {
            route_offset.push(acc);
            acc += set.len();
            route_od.extend(std::iter::repeat_n(j, set.len()));
        }
        route_offset.push(acc);
        Ok(ProblemInstance {
            network,
            od_pairs,
            routes,
            classes,
            scenarios,
            lambda,
            mu,
            pce,
            route_selection: RouteSelection::Explicit,
            route_offset,
            route_od,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }
    pub fn od_pairs(&self) -> &[OdPair] {
        &self.od_pairs
    }
    pub fn routes(&self, j: usize) -> &[Route] {
        &self.routes[j]
    }
    pub fn classes(&self) -> &[VotClass] {
        &self.classes
    }
    pub fn scenarios(&self) -> &[DemandScenario] {
        &self.scenarios
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn pce(&self) -> f64 {
        self.pce
    }
    pub fn route_selection(&self) -> RouteSelection {
        self.route_selection
    }

    pub fn n_od(&self) -> usize {
        self.od_pairs.len()
    }
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }
    pub fn n_scenarios(&self) -> usize {
        self.scenarios.len()
    }
    /// Total number of routes over all OD pairs.
    pub fn n_routes(&self) -> usize {
        self.route_offset[self.od_pairs.len()]
    }
    /// First global route index of OD pair `j`; routes of `j` occupy
    /// `route_offset(j)..route_offset(j + 1)`.
    pub fn route_offset(&self, j: usize) -> usize {
        self.route_offset[j]
    }
    pub fn route_range(&self, j: usize) -> std::ops::Range<usize> {
        self.route_offset[j]..self.route_offset[j + 1]
    }
    /// OD pair of a global route index.
    pub fn route_od(&self, g: usize) -> usize {
        self.route_od[g]
    }
    pub fn global_route(&self, g: usize) -> &Route {
        let j = self.route_od[g];
        &self.routes[j][g - self.route_offset[j]]
    }

    pub fn vot(&self, w: usize) -> f64 {
        self.classes[w].vot
    }
    pub fn vot_sum(&self) -> f64 {
        self.classes.iter().map(|c| c.vot).sum()
    }
    pub fn probability(&self, c: usize) -> f64 {
        self.scenarios[c].probability
    }
    pub fn demand(&self, c: usize, j: usize, w: usize) -> f64 {
        self.scenarios[c].demand[j][w]
    }
    /// `sum_j d[c][j][w]`.
    pub fn class_demand(&self, c: usize, w: usize) -> f64 {
        self.scenarios[c].demand.iter().map(|row| row[w]).sum()
    }

    /// Same world with different objective weights.
    pub fn with_weights(&self, lambda: f64, mu: f64) -> Result<Self, InstanceError> {
        if !(0.0..=1.0).contains(&lambda) || !(0.0..=1.0).contains(&mu) {
            return Err(InstanceError::config(
                "weights",
                format!("weights must lie in [0,1], got lambda={lambda}, mu={mu}"),
            ));
        }
        Ok(ProblemInstance {
            lambda,
            mu,
            ..self.clone()
        })
    }

    /// Same world with demand scenarios replaced.
    pub fn with_scenarios(&self, scenarios: Vec<DemandScenario>) -> Result<Self, InstanceError> {
        let mut inst = ProblemInstance::new(
            self.network.clone(),
            self.od_pairs.clone(),
            self.routes.clone(),
            self.classes.clone(),
            scenarios,
            self.lambda,
            self.mu,
            self.pce,
        )?;
        inst.route_selection = self.route_selection;
        Ok(inst)
    }

    pub(crate) fn set_route_selection(&mut self, sel: RouteSelection) {
        self.route_selection = sel;
    }
}

fn check_route(net: &Network, od: OdPair, r: &Route) -> Result<(), InstanceError> {
    let bad = |why: &str| InstanceError::config("routes", format!("route {}: {why}", r.label));
    if r.links.is_empty() {
        return Err(bad("empty"));
    }
    if r.links.iter().any(|&l| l >= net.link_count()) {
        return Err(bad("unknown link"));
    }
    let first = net.link(r.links[0]);
    if first.tail != od.origin {
        return Err(bad("does not start at the origin"));
    }
    let mut visited = vec![first.tail];
    let mut at = first.tail;
    for &l in &r.links {
        let link = net.link(l);
        if link.tail != at {
            return Err(bad("consecutive links do not share a node"));
        }
        if visited.contains(&link.head) {
            return Err(bad("repeats a node"));
        }
        visited.push(link.head);
        at = link.head;
    }
    if at != od.destination {
        return Err(bad("does not end at the destination"));
    }
    Ok(())
}

fn default_pce() -> f64 {
    3.0
}

/// Instance file schema (TOML).
///
/// ```toml
/// network = "p1.net"
/// pce = 3.0
///
/// [weights]
/// lambda = 0.9
/// mu = 0.9
///
/// [classes]
/// vot = [200.0, 50.0]
///
/// [scenarios]
/// probability = [0.5, 0.5]
/// # one matrix per scenario: one row per class, one column per OD pair
/// demand = [[[3.0, 4.5], [1.0, 2.8]], [[5.0, 1.8], [6.0, 5.5]]]
///
/// [od_pairs]
/// pairs = [[1, 7], [1, 11]]
///
/// [routes]
/// k = 10
/// # or: explicit = [{ od = 1, links = ["A"] }, { od = 1, links = ["B"] }]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    /// Network file, relative to the instance file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<String>,
    #[serde(default = "default_pce")]
    pub pce: f64,
    pub weights: WeightsSection,
    pub classes: ClassesSection,
    pub scenarios: ScenariosSection,
    pub od_pairs: OdPairsSection,
    pub routes: RoutesSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    pub lambda: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassesSection {
    pub vot: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenariosSection {
    pub probability: Vec<f64>,
    /// `demand[c][w][j]`.
    pub demand: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdPairsSection {
    pub pairs: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutesSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit: Option<Vec<ExplicitRoute>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitRoute {
    /// 1-based OD pair index.
    pub od: usize,
    pub links: Vec<String>,
}

impl InstanceConfig {
    pub fn parse(text: &str) -> Result<Self, InstanceError> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let section = ["weights", "classes", "scenarios", "od_pairs", "routes"]
                .into_iter()
                .find(|s| msg.contains(s) || e.to_string().contains(&format!("[{s}]")))
                .unwrap_or("instance");
            InstanceError::Config {
                section: leak_section(section),
                reason: e.to_string().trim().replace('\n', " "),
            }
        })
    }

    /// Describes an instance with explicit routes, so loading it back gives
    /// an identical instance.
    pub fn from_instance(inst: &ProblemInstance, network: Option<String>) -> Self {
        let net = inst.network();
        let demand = inst
            .scenarios()
            .iter()
            .map(|s| {
                (0..inst.n_classes())
                    .map(|w| s.demand.iter().map(|row| row[w]).collect())
                    .collect()
            })
            .collect();
        let explicit = (0..inst.n_od())
            .flat_map(|j| {
                inst.routes(j).iter().map(move |r| ExplicitRoute {
                    od: j + 1,
                    links: r.links.iter().map(|&l| net.link(l).id.clone()).collect(),
                })
            })
            .collect();
        InstanceConfig {
            network,
            pce: inst.pce(),
            weights: WeightsSection {
                lambda: inst.lambda(),
                mu: inst.mu(),
            },
            classes: ClassesSection {
                vot: inst.classes().iter().map(|c| c.vot).collect(),
            },
            scenarios: ScenariosSection {
                probability: inst.scenarios().iter().map(|s| s.probability).collect(),
                demand,
            },
            od_pairs: OdPairsSection {
                pairs: inst
                    .od_pairs()
                    .iter()
                    .map(|o| [o.origin, o.destination])
                    .collect(),
            },
            routes: RoutesSection {
                k: None,
                explicit: Some(explicit),
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("instance config always serializes")
    }

    /// Builds and validates the instance against a network.
    pub fn build(&self, net: &Network) -> Result<ProblemInstance, InstanceError> {
        let n_classes = self.classes.vot.len();
        let n_od = self.od_pairs.pairs.len();
        let od_pairs: Vec<OdPair> = self
            .od_pairs
            .pairs
            .iter()
            .map(|p| OdPair {
                origin: p[0],
                destination: p[1],
            })
            .collect();
        for od in &od_pairs {
            for node in [od.origin, od.destination] {
                if node == 0 || node > net.node_count() {
                    return Err(InstanceError::config(
                        "od_pairs",
                        format!("unknown node {node}"),
                    ));
                }
            }
        }

        if self.scenarios.probability.len() != self.scenarios.demand.len() {
            return Err(InstanceError::config(
                "scenarios",
                format!(
                    "{} probabilities but {} demand matrices",
                    self.scenarios.probability.len(),
                    self.scenarios.demand.len()
                ),
            ));
        }
        let sum: f64 = self.scenarios.probability.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_TOL {
            return Err(InstanceError::ProbabilitySum { sum });
        }
        let mut scenarios = Vec::with_capacity(self.scenarios.demand.len());
        for (c, (p, matrix)) in self
            .scenarios
            .probability
            .iter()
            .zip(&self.scenarios.demand)
            .enumerate()
        {
            if matrix.len() != n_classes || matrix.iter().any(|row| row.len() != n_od) {
                return Err(InstanceError::config(
                    "scenarios",
                    format!("demand matrix {} must have {n_classes} rows (classes) of {n_od} columns (OD pairs)", c + 1),
                ));
            }
            let demand = (0..n_od)
                .map(|j| (0..n_classes).map(|w| matrix[w][j]).collect())
                .collect();
            scenarios.push(DemandScenario {
                probability: *p,
                demand,
            });
        }

        let (routes, selection) = match (&self.routes.k, &self.routes.explicit) {
            (Some(_), Some(_)) => {
                return Err(InstanceError::config(
                    "routes",
                    "give either `k` or `explicit`, not both",
                ))
            }
            (None, None) => {
                return Err(InstanceError::config("routes", "missing `k` or `explicit`"))
            }
            (Some(k), None) => {
                if *k == 0 {
                    return Err(InstanceError::config("routes", "k must be at least 1"));
                }
                let mut sets = Vec::with_capacity(n_od);
                for (j, od) in od_pairs.iter().enumerate() {
                    let found = enumerate_k_least_congested(net, *od, *k, self.pce)?;
                    sets.push(
                        found
                            .into_iter()
                            .map(|links| Route::new(net, j, links))
                            .collect(),
                    );
                }
                (sets, RouteSelection::KLeastCongested(*k))
            }
            (None, Some(list)) => {
                let mut sets: Vec<Vec<Route>> = vec![Vec::new(); n_od];
                for er in list {
                    if er.od == 0 || er.od > n_od {
                        return Err(InstanceError::config(
                            "routes",
                            format!("route refers to OD pair {}", er.od),
                        ));
                    }
                    let mut links = Vec::with_capacity(er.links.len());
                    for id in &er.links {
                        links.push(net.link_index(id).ok_or_else(|| {
                            InstanceError::config("routes", format!("unknown link id `{id}`"))
                        })?);
                    }
                    sets[er.od - 1].push(Route::new(net, er.od - 1, links));
                }
                (sets, RouteSelection::Explicit)
            }
        };

        let mut inst = ProblemInstance::new(
            net.clone(),
            od_pairs,
            routes,
            self.classes
                .vot
                .iter()
                .map(|&vot| VotClass { vot })
                .collect(),
            scenarios,
            self.weights.lambda,
            self.weights.mu,
            self.pce,
        )?;
        inst.set_route_selection(selection);
        Ok(inst)
    }
}

fn leak_section(s: &str) -> &'static str {
    match s {
        "weights" => "weights",
        "classes" => "classes",
        "scenarios" => "scenarios",
        "od_pairs" => "od_pairs",
        "routes" => "routes",
        _ => "instance",
    }
}

/// Parses an instance description and binds it to a network.
pub fn load_instance(text: &str, net: &Network) -> Result<ProblemInstance, InstanceError> {
    InstanceConfig::parse(text)?.build(net)
}
