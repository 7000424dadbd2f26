use faer::Mat;

use super::{EstimatorResult, CONDITION_LIMIT, DEGENERACY_RATIO};
use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::panel::PanelMatrix;

/// Pooled least squares of `y` on already-residualized regressors.
///
/// `reference[k]` is the raw energy `Σ X_k²` the residual `xs[k]` came from;
/// a residual with energy at or below `DEGENERACY_RATIO · reference[k]` is
/// reported as degenerate. Pass zeros to reject only exact zeros.
pub(crate) fn pooled_fit(
    y: &PanelMatrix,
    xs: &[&PanelMatrix],
    reference: &[f64],
    rank_used: usize,
) -> Result<EstimatorResult> {
    let k = xs.len();
    if k == 0 {
        return Err(Error::DimensionMismatch("no regressors supplied".into()));
    }
    for (j, x) in xs.iter().enumerate() {
        if x.shape() != y.shape() {
            return Err(Error::DimensionMismatch(format!(
                "regressor {j} is {}x{}, outcome is {}x{}",
                x.n(),
                x.t(),
                y.n(),
                y.t()
            )));
        }
    }
    let gram = SquareMatrix::from_fn(k, |a, b| xs[a].dot(xs[b]));
    for j in 0..k {
        let energy = gram.get(j, j);
        if energy <= 0.0 || energy <= DEGENERACY_RATIO * reference[j] {
            return Err(Error::DegenerateDenominator(format!(
                "regressor {j} has no residual variation"
            )));
        }
    }
    let rhs: Vec<f64> = xs.iter().map(|x| x.dot(y)).collect();
    let (beta, denominator) = if k == 1 {
        (vec![rhs[0] / gram.get(0, 0)], gram.get(0, 0))
    } else {
        if gram.symmetric_condition() > CONDITION_LIMIT {
            return Err(Error::DegenerateDenominator(
                "Gram matrix of residualized regressors is ill-conditioned".into(),
            ));
        }
        let beta = gram.solve(&rhs).ok_or_else(|| {
            Error::DegenerateDenominator("Gram matrix of residualized regressors is singular".into())
        })?;
        (beta, gram.determinant())
    };
    let final_objective = residual_energy(y, xs, &beta);
    Ok(EstimatorResult {
        beta,
        rank_used,
        iterations: 0,
        final_objective,
        denominator,
        converged: true,
    })
}

pub(crate) fn residual_energy(y: &PanelMatrix, xs: &[&PanelMatrix], beta: &[f64]) -> f64 {
    let mut total = 0.0;
    for idx in 0..y.values().len() {
        let mut e = y.values()[idx];
        for (x, b) in xs.iter().zip(beta) {
            e -= b * x.values()[idx];
        }
        total += e * e;
    }
    total
}

/// Plug-in estimator `Σ Y·X̂⊥ / Σ (X̂⊥)²`, or the K×K normal equations for
/// several regressors.
pub fn pooled_ols(y: &PanelMatrix, xperp: &[PanelMatrix]) -> Result<EstimatorResult> {
    let refs: Vec<&PanelMatrix> = xperp.iter().collect();
    pooled_fit(y, &refs, &vec![0.0; refs.len()], 0)
}

/// Coefficient on `x` in the OLS regression of `y` on `(1, x, controls)`,
/// computed by residualizing `x` on `(1, controls)` first.
pub fn partialled_ols(y: &[f64], x: &[f64], controls: &[Vec<f64>]) -> Result<f64> {
    let n = y.len();
    if x.len() != n || controls.iter().any(|c| c.len() != n) {
        return Err(Error::DimensionMismatch(
            "outcome, regressor and controls must share a length".into(),
        ));
    }
    let p = controls.len() + 1;
    if n <= p {
        return Err(Error::CollinearControls);
    }
    let design = Mat::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { controls[j - 1][i] });
    let svd = design.thin_svd().expect("SVD of a finite design");
    let s: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    // σ_max/σ_min above √CONDITION_LIMIT puts cond(DᵀD) above CONDITION_LIMIT.
    if s[p - 1] <= s[0] / CONDITION_LIMIT.sqrt() {
        return Err(Error::CollinearControls);
    }
    let u = svd.U();
    let mut resid = x.to_vec();
    for j in 0..p {
        let proj: f64 = (0..n).map(|i| u[(i, j)] * x[i]).sum();
        for (i, r) in resid.iter_mut().enumerate() {
            *r -= proj * u[(i, j)];
        }
    }
    let denom: f64 = resid.iter().map(|r| r * r).sum();
    let energy: f64 = x.iter().map(|v| v * v).sum();
    if denom <= DEGENERACY_RATIO * energy || denom == 0.0 {
        return Err(Error::CollinearControls);
    }
    Ok(resid.iter().zip(y).map(|(r, yi)| r * yi).sum::<f64>() / denom)
}
