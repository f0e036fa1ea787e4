use serde::Serialize;

/// Closed-form equilibrium, optimum and supporting tolls of the two-link
/// network of [`crate::netmodel::pigou_instance`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PigouSolution {
    /// Trucks on link `B` at the user equilibrium.
    pub ue_split: f64,
    /// Trucks on link `B` at the system optimum.
    pub so_split: f64,
    /// Total truck hours at the equilibrium.
    pub ue_total: f64,
    pub so_total: f64,
    /// `(A, B)` per-driver payments that make the optimum an equilibrium
    /// with zero net revenue.
    pub supporting_tolls: (f64, f64),
}

/// Total truck hours with `x` of `d` trucks on `B`.
pub fn pigou_total(d: f64, x: f64) -> f64 {
    (d - x) + x.powi(5)
}

/// Analytic solution for demand `d > 0` and value of time `s`.
///
/// # Panics
/// If `d` is not positive and finite.
pub fn pigou_analytic(d: f64, s: f64) -> PigouSolution {
    assert!(d > 0.0 && d.is_finite(), "demand must be positive, got {d}");
    let ue_split = d.min(1.0);
    let so_split = d.min(5f64.powf(-0.25));
    let so_total = pigou_total(d, so_split);
    // common generalized cost k: 1 + pi_A / s = x^4 + pi_B / s = k, and
    // (d - x) pi_A + x pi_B = 0 gives k d = so_total
    let k = so_total / d;
    let tolls = (s * (k - 1.0), s * (k - so_split.powi(4)));
    PigouSolution {
        ue_split,
        so_split,
        ue_total: pigou_total(d, ue_split),
        so_total,
        supporting_tolls: tolls,
    }
}
