use faer::Mat;

use super::ols::pooled_fit;
use super::{EstimatorResult, CONDITION_LIMIT};
use crate::error::{Error, Result};
use crate::panel::PanelMatrix;

fn check_shapes(y: &PanelMatrix, x: &PanelMatrix) -> Result<()> {
    if y.shape() != x.shape() {
        return Err(Error::DimensionMismatch(format!(
            "outcome is {}x{}, regressor is {}x{}",
            y.n(),
            y.t(),
            x.n(),
            x.t()
        )));
    }
    Ok(())
}

fn unit_demean(z: &PanelMatrix) -> PanelMatrix {
    let means = z.unit_means();
    let t = z.t();
    let mut out = z.clone();
    for (k, v) in out.values_mut().iter_mut().enumerate() {
        *v -= means[k / t];
    }
    out
}

/// Within-group estimator: pooled OLS of `Y` on unit-demeaned `X`.
pub fn within_estimator(y: &PanelMatrix, x: &PanelMatrix) -> Result<EstimatorResult> {
    check_shapes(y, x)?;
    let xt = unit_demean(x);
    pooled_fit(y, &[&xt], &[x.frobenius_sq()], 0)
}

/// Mean-group estimator: equal-weighted average of unit-wise within slopes.
///
/// Every unit must satisfy `Σ_t X̃_it² ≥ min_denominator`; the reported
/// denominator is the smallest unit denominator.
pub fn mean_group(y: &PanelMatrix, x: &PanelMatrix, min_denominator: f64) -> Result<EstimatorResult> {
    check_shapes(y, x)?;
    let xt = unit_demean(x);
    let mut slopes = Vec::with_capacity(x.n());
    let mut smallest = f64::INFINITY;
    for i in 0..x.n() {
        let xi = xt.row(i);
        let den: f64 = xi.iter().map(|v| v * v).sum();
        if !(den >= min_denominator) || den == 0.0 {
            return Err(Error::UnitDegenerate(i));
        }
        smallest = smallest.min(den);
        let num: f64 = xi.iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
        slopes.push(num / den);
    }
    let beta = slopes.iter().sum::<f64>() / slopes.len() as f64;
    let mut objective = 0.0;
    for (i, b) in slopes.iter().enumerate() {
        let ym = y.row(i).iter().sum::<f64>() / y.t() as f64;
        for (yv, xv) in y.row(i).iter().zip(xt.row(i)) {
            objective += (yv - ym - b * xv).powi(2);
        }
    }
    Ok(EstimatorResult {
        beta: vec![beta],
        rank_used: 0,
        iterations: 0,
        final_objective: objective,
        denominator: smallest,
        converged: true,
    })
}

/// `Ẑ_it = Z_it − Z̄_{g_i,t} − Z̄_{i,c_t} + Z̄_{g_i,c_t}` for unit groups `g`
/// and period clusters `c`. Single groups reduce to two-way demeaning.
pub(crate) fn group_demean(
    z: &PanelMatrix,
    unit_groups: &[usize],
    n_groups: usize,
    period_groups: &[usize],
    n_periods: usize,
) -> PanelMatrix {
    let (n, t) = z.shape();
    debug_assert_eq!(unit_groups.len(), n);
    debug_assert_eq!(period_groups.len(), t);

    let mut group_size = vec![0usize; n_groups];
    for &g in unit_groups {
        group_size[g] += 1;
    }
    let mut cluster_size = vec![0usize; n_periods];
    for &c in period_groups {
        cluster_size[c] += 1;
    }

    // Z̄_{g,t}
    let mut group_time = vec![0.0; n_groups * t];
    // Z̄_{i,c}
    let mut unit_cluster = vec![0.0; n * n_periods];
    // Z̄_{g,c}
    let mut cell = vec![0.0; n_groups * n_periods];
    for i in 0..n {
        let g = unit_groups[i];
        for (s, &v) in z.row(i).iter().enumerate() {
            let c = period_groups[s];
            group_time[g * t + s] += v;
            unit_cluster[i * n_periods + c] += v;
            cell[g * n_periods + c] += v;
        }
    }
    for g in 0..n_groups {
        for s in 0..t {
            group_time[g * t + s] /= group_size[g] as f64;
        }
        for c in 0..n_periods {
            cell[g * n_periods + c] /= (group_size[g] * cluster_size[c]) as f64;
        }
    }
    for i in 0..n {
        for c in 0..n_periods {
            unit_cluster[i * n_periods + c] /= cluster_size[c] as f64;
        }
    }

    let mut out = Vec::with_capacity(n * t);
    for i in 0..n {
        let g = unit_groups[i];
        for (s, &v) in z.row(i).iter().enumerate() {
            let c = period_groups[s];
            out.push(
                v - group_time[g * t + s] - unit_cluster[i * n_periods + c]
                    + cell[g * n_periods + c],
            );
        }
    }
    PanelMatrix::from_raw(n, t, out)
}

/// `Z_it − Z̄_i· − Z̄_·t + Z̄_··`.
pub fn two_way_demean(z: &PanelMatrix) -> PanelMatrix {
    group_demean(z, &vec![0; z.n()], 1, &vec![0; z.t()], 1)
}

/// Two-way fixed effects: pooled OLS after subtracting unit and period means
/// and adding back the grand mean.
pub fn twfe(y: &PanelMatrix, x: &PanelMatrix) -> Result<EstimatorResult> {
    check_shapes(y, x)?;
    let yd = two_way_demean(y);
    let xd = two_way_demean(x);
    pooled_fit(&yd, &[&xd], &[x.frobenius_sq()], 0)
}

/// Pooled common correlated effects estimator.
///
/// Each unit's time series is projected off the span of `H = [1, Ȳ_·t, X̄_·t]`
/// before pooling.
pub fn cce_pooled(y: &PanelMatrix, x: &PanelMatrix) -> Result<EstimatorResult> {
    check_shapes(y, x)?;
    let t = y.t();
    if t < 3 {
        return Err(Error::RankDeficientAugmentation);
    }
    let ybar = y.period_means();
    let xbar = x.period_means();
    let h = Mat::from_fn(t, 3, |s, j| match j {
        0 => 1.0,
        1 => ybar[s],
        _ => xbar[s],
    });
    let svd = h.thin_svd().expect("SVD of a finite augmentation");
    let sv: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    if sv[2] <= sv[0] / CONDITION_LIMIT.sqrt() {
        return Err(Error::RankDeficientAugmentation);
    }
    let q = svd.U();
    let project_off = |z: &PanelMatrix| -> PanelMatrix {
        let mut out = z.clone();
        let vals = out.values_mut();
        for i in 0..z.n() {
            let row = &mut vals[i * t..(i + 1) * t];
            for j in 0..3 {
                let coef: f64 = (0..t).map(|s| q[(s, j)] * row[s]).sum();
                for (s, v) in row.iter_mut().enumerate() {
                    *v -= coef * q[(s, j)];
                }
            }
        }
        out
    };
    let xm = project_off(x);
    let ym = project_off(y);
    pooled_fit(&ym, &[&xm], &[x.frobenius_sq()], 0)
}
