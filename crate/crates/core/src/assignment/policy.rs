use crate::netmodel::ProblemInstance;

use super::AssignmentError;

/// Tolerance on `sum_r alpha = 1` for a valid policy.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// One routing decision for every demand realization (UE, CPURR).
    ScenarioIndependent,
    /// Routing may react to the realized demand (SO, OPS, AOPS).
    ScenarioDependent,
}

/// Read-only view of a flat `alpha` vector laid out block by block, one
/// block of `n_routes` entries (all OD pairs, global route order) per
/// stored `(scenario, class)` pair.
///
/// Scenario-independent layouts store one scenario; class-shared layouts
/// store one class. Both collapse the corresponding index in [`block`].
///
/// [`block`]: AlphaLayout::block
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlphaLayout {
    pub mode: PolicyMode,
    pub classes_shared: bool,
    pub n_scenarios: usize,
    pub n_classes: usize,
    pub n_routes: usize,
}

impl AlphaLayout {
    pub fn new(inst: &ProblemInstance, mode: PolicyMode, classes_shared: bool) -> Self {
        AlphaLayout {
            mode,
            classes_shared,
            n_scenarios: inst.n_scenarios(),
            n_classes: inst.n_classes(),
            n_routes: inst.n_routes(),
        }
    }

    pub fn stored_scenarios(&self) -> usize {
        match self.mode {
            PolicyMode::ScenarioIndependent => 1,
            PolicyMode::ScenarioDependent => self.n_scenarios,
        }
    }

    pub fn stored_classes(&self) -> usize {
        if self.classes_shared {
            1
        } else {
            self.n_classes
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.stored_scenarios() * self.stored_classes()
    }

    pub fn len(&self) -> usize {
        self.n_blocks() * self.n_routes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of the block holding `alpha[c][.][w][.]`.
    pub fn block(&self, c: usize, w: usize) -> usize {
        let c = if self.mode == PolicyMode::ScenarioIndependent {
            0
        } else {
            c
        };
        let w = if self.classes_shared { 0 } else { w };
        c * self.stored_classes() + w
    }

    /// Flat index of `alpha[c][j][w][g]` for global route `g`.
    pub fn index(&self, c: usize, w: usize, g: usize) -> usize {
        self.block(c, w) * self.n_routes + g
    }
}

/// The routing lottery `alpha[c][j][w][r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingPolicy {
    layout: AlphaLayout,
    alpha: Vec<f64>,
}

impl RoutingPolicy {
    /// Validates shape, nonnegativity and the per-OD simplex sums.
    pub fn new(
        inst: &ProblemInstance,
        mode: PolicyMode,
        alpha: Vec<f64>,
    ) -> Result<Self, AssignmentError> {
        let layout = AlphaLayout::new(inst, mode, false);
        Self::with_layout(inst, layout, alpha)
    }

    /// Scenario-independent policy with the same route split for every class.
    pub fn class_anonymous(
        inst: &ProblemInstance,
        per_route: &[f64],
    ) -> Result<Self, AssignmentError> {
        let layout = AlphaLayout::new(inst, PolicyMode::ScenarioIndependent, true);
        Self::with_layout(inst, layout, per_route.to_vec())
    }

    /// Builds a policy from any layout, expanding shared classes.
    pub fn with_layout(
        inst: &ProblemInstance,
        layout: AlphaLayout,
        alpha: Vec<f64>,
    ) -> Result<Self, AssignmentError> {
        if alpha.len() != layout.len()
            || layout.n_routes != inst.n_routes()
            || layout.n_classes != inst.n_classes()
        {
            return Err(AssignmentError::DimensionMismatch {
                expected: AlphaLayout { ..layout }.len(),
                got: alpha.len(),
            });
        }
        let full = AlphaLayout {
            classes_shared: false,
            ..layout
        };
        let mut out = vec![0.0; full.len()];
        for c in 0..full.stored_scenarios() {
            for w in 0..full.n_classes {
                let src = layout.block(c, w) * layout.n_routes;
                let dst = full.block(c, w) * full.n_routes;
                out[dst..dst + full.n_routes].copy_from_slice(&alpha[src..src + layout.n_routes]);
            }
        }
        let policy = RoutingPolicy {
            layout: full,
            alpha: out,
        };
        policy.check(inst)?;
        Ok(policy)
    }

    /// Every OD split evenly across its routes.
    pub fn uniform(inst: &ProblemInstance, mode: PolicyMode) -> Self {
        let layout = AlphaLayout::new(inst, mode, false);
        let mut alpha = vec![0.0; layout.len()];
        for b in 0..layout.n_blocks() {
            for j in 0..inst.n_od() {
                let range = inst.route_range(j);
                let share = 1.0 / range.len() as f64;
                for g in range {
                    alpha[b * layout.n_routes + g] = share;
                }
            }
        }
        RoutingPolicy { layout, alpha }
    }

    fn check(&self, inst: &ProblemInstance) -> Result<(), AssignmentError> {
        if let Some(v) = self.alpha.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
            return Err(AssignmentError::InvalidPolicy(format!(
                "negative or non-finite proportion {v}"
            )));
        }
        for b in 0..self.layout.n_blocks() {
            let block = &self.alpha[b * self.layout.n_routes..(b + 1) * self.layout.n_routes];
            for j in 0..inst.n_od() {
                let sum: f64 = block[inst.route_range(j)].iter().sum();
                if (sum - 1.0).abs() > SIMPLEX_TOL {
                    return Err(AssignmentError::InvalidPolicy(format!(
                        "proportions of OD pair {} sum to {sum}",
                        j + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn mode(&self) -> PolicyMode {
        self.layout.mode
    }

    pub fn layout(&self) -> AlphaLayout {
        self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.alpha
    }

    /// `alpha[c][j][w][r]` for the global route index `g` of `(j, r)`.
    pub fn alpha(&self, c: usize, w: usize, g: usize) -> f64 {
        self.alpha[self.layout.index(c, w, g)]
    }

    /// All routes of scenario `c`, class `w`.
    pub fn block(&self, c: usize, w: usize) -> &[f64] {
        let b = self.layout.block(c, w);
        &self.alpha[b * self.layout.n_routes..(b + 1) * self.layout.n_routes]
    }

    /// Same routing stored with one block per scenario.
    pub fn to_scenario_dependent(&self) -> RoutingPolicy {
        if self.layout.mode == PolicyMode::ScenarioDependent {
            return self.clone();
        }
        let layout = AlphaLayout {
            mode: PolicyMode::ScenarioDependent,
            ..self.layout
        };
        let mut alpha = Vec::with_capacity(layout.len());
        for _ in 0..layout.n_scenarios {
            alpha.extend_from_slice(&self.alpha);
        }
        RoutingPolicy { layout, alpha }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{load_instance, parse_network};

    fn inst() -> ProblemInstance {
        let net = parse_network("nodes 2\nlink A 1 2 1 0 1 0\nlink B 1 2 0 1 3 0\n").unwrap();
        let text = r#"
[weights]
lambda = 1.0
mu = 1.0
[classes]
vot = [100.0, 20.0]
[scenarios]
probability = [0.25, 0.75]
demand = [[[2.0], [1.0]], [[1.0], [3.0]]]
[od_pairs]
pairs = [[1, 2]]
[routes]
explicit = [{ od = 1, links = ["A"] }, { od = 1, links = ["B"] }]
"#;
        load_instance(text, &net).unwrap()
    }

    #[test]
    fn layout_indexing() {
        let i = inst();
        let dep = AlphaLayout::new(&i, PolicyMode::ScenarioDependent, false);
        assert_eq!(dep.len(), 8);
        assert_eq!(dep.index(1, 1, 1), 7);
        let ind = AlphaLayout::new(&i, PolicyMode::ScenarioIndependent, false);
        assert_eq!(ind.index(1, 1, 1), ind.index(0, 1, 1));
        let shared = AlphaLayout::new(&i, PolicyMode::ScenarioIndependent, true);
        assert_eq!(shared.len(), 2);
        assert_eq!(shared.index(1, 1, 0), 0);
    }

    #[test]
    fn validation() {
        let i = inst();
        assert!(RoutingPolicy::new(
            &i,
            PolicyMode::ScenarioIndependent,
            vec![0.5, 0.5, 0.2, 0.8]
        )
        .is_ok());
        assert!(RoutingPolicy::new(
            &i,
            PolicyMode::ScenarioIndependent,
            vec![0.5, 0.6, 0.2, 0.8]
        )
        .is_err());
        assert!(RoutingPolicy::new(
            &i,
            PolicyMode::ScenarioIndependent,
            vec![1.5, -0.5, 0.2, 0.8]
        )
        .is_err());
        assert!(RoutingPolicy::new(&i, PolicyMode::ScenarioDependent, vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn class_anonymous_expands() {
        let i = inst();
        let p = RoutingPolicy::class_anonymous(&i, &[0.3, 0.7]).unwrap();
        assert_eq!(p.block(0, 1), &[0.3, 0.7]);
        assert_eq!(p.alpha(1, 0, 1), 0.7);
        let d = p.to_scenario_dependent();
        assert_eq!(d.as_slice().len(), 8);
        assert_eq!(d.alpha(1, 1, 0), 0.3);
    }
}
