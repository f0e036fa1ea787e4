//! The six routing regimes (UE, SO, OPS, AOPS, AOPS-EPT, CPURR), the
//! closed-form AOPS payments and first-principles verification of the
//! mechanism properties.

mod payments;
mod programs;
mod report;
mod solve;
mod verify;

pub use payments::{aops_payments, class_share_weights, h_n, q_u, ClassShares};
pub use programs::{AopsProgram, CpurrProgram, OpsProgram, SoProgram, UeProgram};
pub use report::{
    alpha_csv, pi_csv, report_text, summary_header, summary_row, ALPHA_CSV_HEADER, PI_CSV_HEADER,
};
pub use solve::{
    solve_aops, solve_aops_ept, solve_cpurr, solve_cpurr_from, solve_ops, solve_so, solve_ue,
};
pub use verify::{verify, Check, Tolerances, VerificationReport, REGRET_TOL, ROBUST_ALPHA_MIN};

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::assignment::{AlphaLayout, AssignmentError, FlowMetrics, PolicyMode, RoutingPolicy};
use crate::netmodel::ProblemInstance;
use crate::nlp::{SolveOptions, SolveResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Scheme {
    Ue,
    So,
    Ops,
    Aops,
    AopsEpt,
    Cpurr,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::Ue,
        Scheme::So,
        Scheme::Ops,
        Scheme::Aops,
        Scheme::AopsEpt,
        Scheme::Cpurr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Ue => "UE",
            Scheme::So => "SO",
            Scheme::Ops => "OPS",
            Scheme::Aops => "AOPS",
            Scheme::AopsEpt => "AOPS-EPT",
            Scheme::Cpurr => "CPURR",
        }
    }

    /// Schemes that carry a payment schedule.
    pub fn has_payments(self) -> bool {
        !matches!(self, Scheme::Ue | Scheme::So)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|k| {
                k.name().eq_ignore_ascii_case(s)
                    || k.name().replace('-', "_").eq_ignore_ascii_case(s)
            })
            .ok_or_else(|| format!("unknown scheme '{s}'"))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeError {
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error("scenario {scenario} has no truck demand; benefit shares are undefined")]
    EmptyScenario { scenario: usize },
    #[error("invalid options: {0}")]
    Options(String),
    #[error("warm start does not match the instance: {0}")]
    WarmStart(String),
}

/// Solver settings shared by all schemes.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeOptions {
    pub nlp: SolveOptions,
    /// Constraint tolerance of the CPURR program, looser than
    /// `nlp.constraint_tol` because its complementarity is harder.
    pub cpurr_constraint_tol: f64,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        SchemeOptions {
            nlp: SolveOptions::default(),
            cpurr_constraint_tol: 5e-5,
        }
    }
}

impl SchemeOptions {
    pub fn validate(&self) -> Result<(), SchemeError> {
        self.nlp.validate().map_err(SchemeError::Options)?;
        if !(self.cpurr_constraint_tol > 0.0) {
            return Err(SchemeError::Options(
                "CPURR constraint tolerance must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            constraint: self.nlp.constraint_tol,
            cpurr: self.cpurr_constraint_tol,
        }
    }
}

/// How a payment tensor was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentMode {
    /// One payment per `(scenario, OD, class, route)`.
    PerDriver,
    /// Route tolls shared by every scenario and class.
    RouteToll,
}

/// Payments `pi[c][j][w][r]` in currency; positive means the driver pays.
/// Always stored scenario-dependent and per class.
#[derive(Debug, Clone, PartialEq)]
pub struct PaymentSchedule {
    pub mode: PaymentMode,
    layout: AlphaLayout,
    pi: Vec<f64>,
    /// `(scenario, class)` pairs without demand that received no benefit
    /// share.
    pub degenerate_classes: Vec<(usize, usize)>,
}

impl PaymentSchedule {
    pub fn per_driver(inst: &ProblemInstance, pi: Vec<f64>) -> Self {
        let layout = AlphaLayout::new(inst, PolicyMode::ScenarioDependent, false);
        assert_eq!(pi.len(), layout.len(), "payment tensor size");
        PaymentSchedule {
            mode: PaymentMode::PerDriver,
            layout,
            pi,
            degenerate_classes: Vec::new(),
        }
    }

    /// Expands per-route tolls to the full tensor.
    pub fn route_tolls(inst: &ProblemInstance, tolls: &[f64]) -> Self {
        assert_eq!(tolls.len(), inst.n_routes(), "toll vector size");
        let layout = AlphaLayout::new(inst, PolicyMode::ScenarioDependent, false);
        let mut pi = Vec::with_capacity(layout.len());
        for _ in 0..layout.n_blocks() {
            pi.extend_from_slice(tolls);
        }
        PaymentSchedule {
            mode: PaymentMode::RouteToll,
            layout,
            pi,
            degenerate_classes: Vec::new(),
        }
    }

    pub fn zero(inst: &ProblemInstance) -> Self {
        Self::per_driver(
            inst,
            vec![0.0; AlphaLayout::new(inst, PolicyMode::ScenarioDependent, false).len()],
        )
    }

    pub fn pi(&self, c: usize, w: usize, g: usize) -> f64 {
        self.pi[self.layout.index(c, w, g)]
    }

    pub fn layout(&self) -> AlphaLayout {
        self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.pi
    }
}

/// Auxiliary solver variables worth reporting.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SolverAuxiliaries {
    /// `zeta[j][w]` (hours), the equilibrium cost level of UE and CPURR.
    pub zeta: Vec<Vec<f64>>,
    /// CPURR tolls per global route (currency).
    pub tolls: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SchemeResult {
    pub scheme: Scheme,
    pub policy: RoutingPolicy,
    pub payments: Option<PaymentSchedule>,
    pub metrics: FlowMetrics,
    pub solver: SolveResult,
    pub verification: VerificationReport,
    pub aux: SolverAuxiliaries,
}

impl SchemeResult {
    /// Verification checks under `tol`.
    pub fn checks(&self, tol: &Tolerances) -> Vec<Check> {
        self.verification.checks(self.scheme, tol)
    }

    pub fn verified(&self, tol: &Tolerances) -> bool {
        self.checks(tol).iter().all(|c| c.pass)
    }
}
