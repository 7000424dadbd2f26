//! Point estimators of the pooled slope β.
//!
//! Every estimator in this module reduces to the plug-in form
//! `β̂ = (Σ X̂⊥ X̂⊥ᵀ)⁻¹ Σ X̂⊥ Y` for some estimate `X̂⊥` of the regressor's
//! idiosyncratic part; they differ only in how `X̂⊥` is built (unit demeaning,
//! two-way demeaning, CCE projection, truncated SVD residuals, grouped
//! demeaning) or, for IFE, in jointly fitting a low-rank nuisance term.

mod fixed_effects;
mod ife;
pub mod kmeans;
mod ols;
mod pc;
mod twgfe;

pub use fixed_effects::{cce_pooled, mean_group, twfe, two_way_demean, within_estimator};
pub use ife::{ife_als, ife_als_detailed, IfeFit, IfeOptions, IfeStart};
pub use ols::{partialled_ols, pooled_ols};
pub use pc::{pc_x, pc_yx};
pub use twgfe::{cluster_panel, twgfe, Clustering, FeatureRule, TwgfeOptions};


/// Gram matrices with a larger condition number are treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Residual energy at or below this fraction of the raw regressor energy
/// counts as "no residual variation".
pub const DEGENERACY_RATIO: f64 = 1e-12;

/// Point estimate plus fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorResult {
    pub beta: Vec<f64>,
    pub rank_used: usize,
    /// Zero for closed-form estimators.
    pub iterations: usize,
    /// Sum of squared residuals of the fitted problem.
    pub final_objective: f64,
    /// `Σ(X̂⊥)²` for one regressor, otherwise the determinant of the Gram matrix.
    pub denominator: f64,
    /// False only when an iterative estimator hit its iteration cap.
    pub converged: bool,
}

impl EstimatorResult {
    /// The first (for scalar estimators, the only) coefficient.
    pub fn scalar(&self) -> f64 {
        self.beta[0]
    }
}

/// `min(⌊3·n^{3/8}⌋, min(n,T) − 1)`.
pub fn rank_rule(n: usize, t: usize) -> usize {
    let mut rule = (3.0 * (n as f64).powf(3.0 / 8.0)).floor() as u128;
    // Exact integer correction: ⌊3·n^{3/8}⌋ is the largest r with r⁸ ≤ 3⁸·n³.
    if let Some(bound) = (n as u128).checked_pow(3).and_then(|c| c.checked_mul(6561)) {
        let fits = |r: u128| r.checked_pow(8).is_some_and(|p| p <= bound);
        while rule > 0 && !fits(rule) {
            rule -= 1;
        }
        while fits(rule + 1) {
            rule += 1;
        }
    }
    (rule as usize).min(n.min(t).saturating_sub(1))
}
