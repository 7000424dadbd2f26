//! Two-way grouped fixed effects.
//!
//! Units and periods are discretized by k-means on moment features of
//! `(Y, X)`, then each panel is demeaned within the resulting two-way group
//! structure before pooled OLS.

use rand::Rng;

use super::fixed_effects::group_demean;
use super::kmeans::kmeans;
use super::ols::pooled_fit;
use super::EstimatorResult;
use crate::error::{Error, Result};
use crate::panel::PanelMatrix;

/// Moment features used to cluster units and periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureRule {
    /// Means of `Y` and `X`.
    MeansOnly,
    /// Means plus the second moments `Y²`, `X²` and `Y·X`.
    #[default]
    MeansAndSecondMoments,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwgfeOptions {
    /// Number of unit groups.
    pub groups: usize,
    /// Number of period clusters.
    pub clusters: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub feature_rule: FeatureRule,
}

impl TwgfeOptions {
    pub fn new(groups: usize, clusters: usize) -> Self {
        Self {
            groups,
            clusters,
            ..Self::default()
        }
    }

    pub fn validate(&self, n: usize, t: usize) -> Result<()> {
        if self.groups == 0 || self.clusters == 0 {
            return Err(Error::InvalidSpec("TWGFE needs G ≥ 1 and C ≥ 1".into()));
        }
        if self.groups > n || self.clusters > t {
            return Err(Error::InvalidSpec(format!(
                "TWGFE needs G ≤ n and C ≤ T, got G={} n={n} C={} T={t}",
                self.groups, self.clusters
            )));
        }
        Ok(())
    }
}

impl Default for TwgfeOptions {
    fn default() -> Self {
        Self {
            groups: 1,
            clusters: 1,
            kmeans_restarts: 10,
            kmeans_max_iter: 100,
            feature_rule: FeatureRule::default(),
        }
    }
}

/// Unit and period labels from the discretization step.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub unit_labels: Vec<usize>,
    pub groups: usize,
    pub period_labels: Vec<usize>,
    pub clusters: usize,
}

fn features(series: &[(Vec<f64>, Vec<f64>)], rule: FeatureRule) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = series
        .iter()
        .map(|(ys, xs)| {
            let m = ys.len() as f64;
            let mean = |f: &dyn Fn(usize) -> f64| (0..ys.len()).map(f).sum::<f64>() / m;
            let mut v = vec![mean(&|k| ys[k]), mean(&|k| xs[k])];
            if rule == FeatureRule::MeansAndSecondMoments {
                v.push(mean(&|k| ys[k] * ys[k]));
                v.push(mean(&|k| xs[k] * xs[k]));
                v.push(mean(&|k| ys[k] * xs[k]));
            }
            v
        })
        .collect();
    standardize(&mut out);
    out
}

/// Centers every feature and scales it to unit standard deviation, so the
/// partition does not depend on the units of `Y` or `X`.
fn standardize(points: &mut [Vec<f64>]) {
    let m = points.len() as f64;
    let dim = points.first().map_or(0, Vec::len);
    for d in 0..dim {
        let mean = points.iter().map(|p| p[d]).sum::<f64>() / m;
        let var = points.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / m;
        let sd = var.sqrt();
        for p in points.iter_mut() {
            p[d] -= mean;
            if sd > 0.0 {
                p[d] /= sd;
            }
        }
    }
}

/// Steps 1–2: k-means on unit features and on period features.
pub fn cluster_panel<R: Rng + ?Sized>(
    y: &PanelMatrix,
    x: &PanelMatrix,
    opts: &TwgfeOptions,
    rng: &mut R,
) -> Result<Clustering> {
    let (n, t) = y.shape();
    opts.validate(n, t)?;
    let units: Vec<(Vec<f64>, Vec<f64>)> =
        (0..n).map(|i| (y.row(i).to_vec(), x.row(i).to_vec())).collect();
    let periods: Vec<(Vec<f64>, Vec<f64>)> = (0..t)
        .map(|s| {
            (
                (0..n).map(|i| y.get(i, s)).collect(),
                (0..n).map(|i| x.get(i, s)).collect(),
            )
        })
        .collect();
    let unit_fit = kmeans(
        &features(&units, opts.feature_rule),
        opts.groups,
        opts.kmeans_restarts,
        opts.kmeans_max_iter,
        rng,
    )?;
    let period_fit = kmeans(
        &features(&periods, opts.feature_rule),
        opts.clusters,
        opts.kmeans_restarts,
        opts.kmeans_max_iter,
        rng,
    )?;
    Ok(Clustering {
        unit_labels: unit_fit.labels,
        groups: opts.groups,
        period_labels: period_fit.labels,
        clusters: opts.clusters,
    })
}

impl Clustering {
    pub(crate) fn demean(&self, z: &PanelMatrix) -> PanelMatrix {
        group_demean(z, &self.unit_labels, self.groups, &self.period_labels, self.clusters)
    }
}

/// Step 3: pooled OLS of the group-demeaned outcome on the group-demeaned regressor.
pub fn twgfe<R: Rng + ?Sized>(
    y: &PanelMatrix,
    x: &PanelMatrix,
    opts: &TwgfeOptions,
    rng: &mut R,
) -> Result<EstimatorResult> {
    if y.shape() != x.shape() {
        return Err(Error::DimensionMismatch("outcome and regressor shapes differ".into()));
    }
    let clustering = cluster_panel(y, x, opts, rng)?;
    let yd = clustering.demean(y);
    let xd = clustering.demean(x);
    pooled_fit(&yd, &[&xd], &[x.frobenius_sq()], 0)
}
