//! Independent ground truths for small instances: closed forms for the
//! two-link network, exhaustive grid search and a best-response
//! equilibrium.

mod best_response;
mod grid;
mod pigou;

pub use best_response::{best_response_ue, best_response_ue_from, BR_TARGET_REGRET};
pub use grid::{
    grid_search_best, grid_search_by, lipschitz_bound, GridObjective, GridOutcome, GridSpec,
    DEFAULT_MAX_CELLS, FEASIBILITY_TOL,
};
pub use pigou::{pigou_analytic, pigou_total, PigouSolution};

use thiserror::Error;

use crate::assignment::AssignmentError;
use crate::schemes::SchemeError;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid has {cells} cells, above the cap of {cap}")]
    CellCap { cells: u64, cap: u64 },
    #[error("best response did not converge in {iters} iterations (regret {regret:.3e})")]
    NoConvergence { iters: usize, regret: f64 },
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
}
