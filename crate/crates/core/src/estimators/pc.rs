use super::ols::pooled_fit;
use super::EstimatorResult;
use crate::error::{Error, Result};
use crate::linalg::low_rank_residual;
use crate::panel::PanelMatrix;

fn check(y: &PanelMatrix, xs: &[PanelMatrix]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::DimensionMismatch("no regressors supplied".into()));
    }
    if let Some(k) = xs.iter().position(|x| x.shape() != y.shape()) {
        return Err(Error::DimensionMismatch(format!(
            "regressor {k} is {}x{}, outcome is {}x{}",
            xs[k].n(),
            xs[k].t(),
            y.n(),
            y.t()
        )));
    }
    Ok(())
}

/// PC(X): strip the leading `rank` principal components from every regressor,
/// then pooled OLS of the untouched outcome on the residuals.
pub fn pc_x(y: &PanelMatrix, xs: &[PanelMatrix], rank: usize) -> Result<EstimatorResult> {
    check(y, xs)?;
    let resid = xs
        .iter()
        .map(|x| low_rank_residual(x, rank))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&PanelMatrix> = resid.iter().collect();
    let energy: Vec<f64> = xs.iter().map(PanelMatrix::frobenius_sq).collect();
    pooled_fit(y, &refs, &energy, rank)
}

/// PC(YX): outcome and regressor are residualized independently with the
/// same rank before the pooled regression.
pub fn pc_yx(y: &PanelMatrix, x: &PanelMatrix, rank: usize) -> Result<EstimatorResult> {
    check(y, std::slice::from_ref(x))?;
    let y_resid = low_rank_residual(y, rank)?;
    let x_resid = low_rank_residual(x, rank)?;
    pooled_fit(&y_resid, &[&x_resid], &[x.frobenius_sq()], rank)
}
