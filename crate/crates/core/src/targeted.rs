//! Targeted weighted effects.
//!
//! The conditional second moments `Σ_it = Cov((Y, X) | latents)` are
//! estimated by applying a rank-`R` approximation separately to `Y`, `X`,
//! `Y∘X` and `X∘X` and combining them through `Cov(a, b) = E[ab] − E[a]E[b]`.
//! The plug-in `β̂_w` then averages the ratios `Σ̂_YX / Σ̂_XX` under
//! user-chosen weights. With several regressors, the pooled estimand loads on
//! every treatment's heterogeneous effect through the contamination weights
//! `λ_it = M̄⁻¹ V_it`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::estimators::{cluster_panel, TwgfeOptions, DEGENERACY_RATIO};
use crate::linalg::{rank_r_approx, SquareMatrix};
use crate::panel::PanelMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaFieldEstimate {
    pub sigma_yx: PanelMatrix,
    pub sigma_xx: PanelMatrix,
    pub m_y: PanelMatrix,
    pub m_x: PanelMatrix,
    pub m_yx: PanelMatrix,
    pub m_xx: PanelMatrix,
    pub rank_used: usize,
}

pub fn estimate_sigma_field(y: &PanelMatrix, x: &PanelMatrix, rank: usize) -> Result<SigmaFieldEstimate> {
    if y.shape() != x.shape() {
        return Err(Error::DimensionMismatch("outcome and regressor shapes differ".into()));
    }
    let m_y = rank_r_approx(y, rank)?;
    let m_x = rank_r_approx(x, rank)?;
    let m_yx = rank_r_approx(&y.hadamard(x), rank)?;
    let m_xx = rank_r_approx(&x.hadamard(x), rank)?;
    let sigma_yx = m_yx.sub(&m_y.hadamard(&m_x));
    let sigma_xx = m_xx.sub(&m_x.hadamard(&m_x));
    Ok(SigmaFieldEstimate {
        sigma_yx,
        sigma_xx,
        m_y,
        m_x,
        m_yx,
        m_xx,
        rank_used: rank,
    })
}

/// `0.05 · median(sigma_xx)`.
pub fn default_floor_tau(sigma_xx: &PanelMatrix) -> f64 {
    let mut v = sigma_xx.values().to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    let median = if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    };
    0.05 * median
}

/// Rejects negative or all-zero weights.
fn check_weights(weights: &PanelMatrix, shape: (usize, usize)) -> Result<()> {
    if weights.shape() != shape {
        return Err(Error::DimensionMismatch("weight panel shape differs from data".into()));
    }
    if let Some(pos) = weights.values().iter().position(|w| *w < 0.0) {
        return Err(Error::NegativeWeights(format!(
            "weight at ({}, {}) is negative",
            pos / shape.1,
            pos % shape.1
        )));
    }
    if weights.sum() <= 0.0 {
        return Err(Error::NegativeWeights("weights have no positive mass".into()));
    }
    Ok(())
}

/// `(1/nT) Σ w_it · Σ̂_YX,it / max(Σ̂_XX,it, τ)`; weights must be
/// non-negative with mean one.
pub fn beta_w_estimate(
    y: &PanelMatrix,
    x: &PanelMatrix,
    rank: usize,
    weights: &PanelMatrix,
    floor_tau: f64,
) -> Result<f64> {
    let fields = estimate_sigma_field(y, x, rank)?;
    beta_w_from_fields(&fields, weights, floor_tau)
}

/// [`beta_w_estimate`] on precomputed fields.
pub fn beta_w_from_fields(fields: &SigmaFieldEstimate, weights: &PanelMatrix, floor_tau: f64) -> Result<f64> {
    let shape = fields.sigma_xx.shape();
    check_weights(weights, shape)?;
    let mean = weights.mean();
    if (mean - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidSpec(format!("weights must average to one, mean is {mean}")));
    }
    if !(floor_tau > 0.0) {
        return Err(Error::InvalidSpec(format!("regularization floor must be positive, got {floor_tau}")));
    }
    let total: f64 = weights
        .values()
        .iter()
        .zip(fields.sigma_yx.values().iter().zip(fields.sigma_xx.values()))
        .map(|(w, (syx, sxx))| w * syx / sxx.max(floor_tau))
        .sum();
    Ok(total / (shape.0 * shape.1) as f64)
}

/// Cellwise OLS slopes on the TWGFE partition, aggregated with the sum of
/// weights in each cell as its mass.
///
/// Cells with fewer than two observations or no within-cell variation in `X`
/// are dropped and the remaining masses renormalized.
pub fn twgfe_beta_w<R: Rng + ?Sized>(
    y: &PanelMatrix,
    x: &PanelMatrix,
    opts: &TwgfeOptions,
    weights: &PanelMatrix,
    rng: &mut R,
) -> Result<f64> {
    if y.shape() != x.shape() {
        return Err(Error::DimensionMismatch("outcome and regressor shapes differ".into()));
    }
    check_weights(weights, y.shape())?;
    let clustering = cluster_panel(y, x, opts, rng)?;
    let cells = clustering.groups * clustering.clusters;
    let cell_of = |i: usize, s: usize| clustering.unit_labels[i] * clustering.clusters + clustering.period_labels[s];

    let mut count = vec![0usize; cells];
    let mut sum_x = vec![0.0; cells];
    let mut sum_y = vec![0.0; cells];
    let mut mass = vec![0.0; cells];
    for i in 0..y.n() {
        for s in 0..y.t() {
            let c = cell_of(i, s);
            count[c] += 1;
            sum_x[c] += x.get(i, s);
            sum_y[c] += y.get(i, s);
            mass[c] += weights.get(i, s);
        }
    }
    let mut sxx = vec![0.0; cells];
    let mut sxy = vec![0.0; cells];
    let mut raw = vec![0.0; cells];
    for i in 0..y.n() {
        for s in 0..y.t() {
            let c = cell_of(i, s);
            let k = count[c] as f64;
            let dx = x.get(i, s) - sum_x[c] / k;
            let dy = y.get(i, s) - sum_y[c] / k;
            sxx[c] += dx * dx;
            sxy[c] += dx * dy;
            raw[c] += x.get(i, s) * x.get(i, s);
        }
    }
    let mut num = 0.0;
    let mut kept_mass = 0.0;
    for c in 0..cells {
        if count[c] < 2 || sxx[c] <= 0.0 || sxx[c] <= DEGENERACY_RATIO * raw[c] {
            continue;
        }
        num += mass[c] * sxy[c] / sxx[c];
        kept_mass += mass[c];
    }
    if kept_mass <= 0.0 {
        return Err(Error::AllCellsDegenerate);
    }
    Ok(num / kept_mass)
}

fn mean_matrix(v: &[SquareMatrix]) -> Result<SquareMatrix> {
    let first = v
        .first()
        .ok_or_else(|| Error::InvalidSpec("no second-moment matrices supplied".into()))?;
    let k = first.dim();
    let mut m = SquareMatrix::zeros(k);
    for (idx, vi) in v.iter().enumerate() {
        if vi.dim() != k {
            return Err(Error::DimensionMismatch(format!(
                "matrix {idx} is {}x{}, expected {k}x{k}",
                vi.dim(),
                vi.dim()
            )));
        }
        m.add_assign(vi);
    }
    m.scale(1.0 / v.len() as f64);
    Ok(m)
}

/// `M̄⁻¹`, refusing a mean matrix that is not safely positive definite.
fn mean_inverse(m: &SquareMatrix) -> Result<SquareMatrix> {
    let eig = m.symmetric_eigenvalues();
    let max = eig.iter().copied().fold(0.0, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= max * 1e-12 {
        return Err(Error::SingularMeanMatrix);
    }
    m.inverse().ok_or(Error::SingularMeanMatrix)
}

/// `M̄⁻¹ · (1/nT) Σ V_it β_it` with `M̄ = (1/nT) Σ V_it`.
pub fn beta_star_multi_oracle(v: &[SquareMatrix], beta: &[Vec<f64>]) -> Result<Vec<f64>> {
    if v.len() != beta.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} matrices but {} effect vectors",
            v.len(),
            beta.len()
        )));
    }
    let m = mean_matrix(v)?;
    let k = m.dim();
    let mut rhs = vec![0.0; k];
    for (vi, bi) in v.iter().zip(beta) {
        if bi.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "effect vector has length {}, expected {k}",
                bi.len()
            )));
        }
        for (r, add) in rhs.iter_mut().zip(vi.mul_vec(bi)) {
            *r += add;
        }
    }
    let scale = 1.0 / v.len() as f64;
    rhs.iter_mut().for_each(|r| *r *= scale);
    Ok(mean_inverse(&m)?.mul_vec(&rhs))
}

/// Per-observation weights `λ_it = M̄⁻¹ V_it`; entry `(k, j)` says how much
/// treatment `j`'s effect at `(i, t)` enters the `k`-th pooled coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct ContaminationWeights {
    pub lambda: Vec<SquareMatrix>,
    pub mean_matrix: SquareMatrix,
}

impl ContaminationWeights {
    /// `λ_{kj,it}` across observations.
    pub fn entry(&self, k: usize, j: usize) -> Vec<f64> {
        self.lambda.iter().map(|l| l.get(k, j)).collect()
    }

    /// `(1/nT) Σ_it Σ_j λ_{kj,it} β_{it,j}`.
    pub fn decompose(&self, beta: &[Vec<f64>]) -> Vec<f64> {
        let k = self.mean_matrix.dim();
        let mut out = vec![0.0; k];
        for (l, b) in self.lambda.iter().zip(beta) {
            for (o, add) in out.iter_mut().zip(l.mul_vec(b)) {
                *o += add;
            }
        }
        let scale = 1.0 / self.lambda.len() as f64;
        out.iter_mut().for_each(|o| *o *= scale);
        out
    }
}

pub fn contamination_weights(v: &[SquareMatrix]) -> Result<ContaminationWeights> {
    let m = mean_matrix(v)?;
    let inv = mean_inverse(&m)?;
    Ok(ContaminationWeights {
        lambda: v.iter().map(|vi| inv.matmul(vi)).collect(),
        mean_matrix: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{derive_stream, SeedSpec};
    use rand_distr::StandardNormal;

    fn spd_field(k: usize, count: usize, rng: &mut impl Rng) -> Vec<SquareMatrix> {
        (0..count)
            .map(|_| {
                let a: Vec<f64> = (0..k * k).map(|_| rng.sample(StandardNormal)).collect();
                SquareMatrix::from_fn(k, |r, c| (0..k).map(|m| a[r * k + m] * a[c * k + m]).sum())
            })
            .collect()
    }

    #[test]
    fn constant_panels_have_no_conditional_variation() {
        let y = PanelMatrix::filled(7, 6, 3.0).unwrap();
        let x = PanelMatrix::filled(7, 6, -1.5).unwrap();
        for r in 1..4 {
            let f = estimate_sigma_field(&y, &x, r).unwrap();
            assert!(f.sigma_xx.values().iter().all(|v| v.abs() < 1e-10));
            assert!(f.sigma_yx.values().iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn zero_rank_truncates_everything() {
        let mut rng = derive_stream(SeedSpec::new(61), 0);
        let y = PanelMatrix::from_fn(4, 5, |_, _| rng.sample(StandardNormal)).unwrap();
        let x = PanelMatrix::from_fn(4, 5, |_, _| rng.sample(StandardNormal)).unwrap();
        let f = estimate_sigma_field(&y, &x, 0).unwrap();
        let zero = PanelMatrix::zeros(4, 5);
        for m in [&f.m_y, &f.m_x, &f.m_yx, &f.m_xx, &f.sigma_yx, &f.sigma_xx] {
            assert_eq!(m, &zero);
        }
    }

    #[test]
    fn fields_satisfy_covariance_identity() {
        let mut rng = derive_stream(SeedSpec::new(62), 0);
        let y = PanelMatrix::from_fn(9, 8, |_, _| rng.sample(StandardNormal)).unwrap();
        let x = PanelMatrix::from_fn(9, 8, |_, _| rng.sample(StandardNormal)).unwrap();
        let f = estimate_sigma_field(&y, &x, 2).unwrap();
        for k in 0..72 {
            let (i, s) = (k / 8, k % 8);
            let syx = f.m_yx.get(i, s) - f.m_y.get(i, s) * f.m_x.get(i, s);
            assert!((f.sigma_yx.get(i, s) - syx).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_validation() {
        let y = PanelMatrix::filled(3, 3, 1.0).unwrap();
        let zeros = PanelMatrix::zeros(3, 3);
        assert!(matches!(beta_w_estimate(&y, &y, 1, &zeros, 0.1), Err(Error::NegativeWeights(_))));
        let mut w = PanelMatrix::filled(3, 3, 1.0).unwrap();
        w.values_mut()[4] = -0.5;
        assert!(matches!(beta_w_estimate(&y, &y, 1, &w, 0.1), Err(Error::NegativeWeights(_))));
        let ones = PanelMatrix::filled(3, 3, 1.0).unwrap();
        assert!(matches!(beta_w_estimate(&y, &y, 1, &ones, 0.0), Err(Error::InvalidSpec(_))));
        assert!(matches!(
            beta_w_estimate(&y, &y, 4, &ones, 0.1),
            Err(Error::RankOutOfRange { .. })
        ));
    }

    #[test]
    fn single_cell_is_ols_with_intercept() {
        let mut rng = derive_stream(SeedSpec::new(63), 0);
        let x = PanelMatrix::from_fn(8, 6, |_, _| rng.sample(StandardNormal)).unwrap();
        let y = PanelMatrix::from_fn(8, 6, |i, s| 1.0 + 0.7 * x.get(i, s) + 0.1 * ((i * s) as f64).sin()).unwrap();
        let w = PanelMatrix::filled(8, 6, 1.0).unwrap();
        let got = twgfe_beta_w(&y, &x, &TwgfeOptions::new(1, 1), &w, &mut rng).unwrap();
        let (mx, my) = (x.mean(), y.mean());
        let sxy: f64 = x.values().iter().zip(y.values()).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.values().iter().map(|a| (a - mx) * (a - mx)).sum();
        assert!((got - sxy / sxx).abs() < 1e-12);
    }

    /// Units in two well-separated level groups, periods in two level
    /// clusters; cell `(g, c)` has slope `1 + 2g + c`.
    fn planted(constant_cell: bool) -> (PanelMatrix, PanelMatrix) {
        let (n, t) = (20, 16);
        let x = PanelMatrix::from_fn(n, t, |i, s| {
            let (g, c) = (i % 2, s % 2);
            if constant_cell && g == 1 && c == 1 {
                return 50.0;
            }
            20.0 * g as f64 + 40.0 * c as f64 + ((i * 7 + s * 3) % 5) as f64 * 0.1
        })
        .unwrap();
        let y = PanelMatrix::from_fn(n, t, |i, s| {
            let (g, c) = (i % 2, s % 2);
            (1 + 2 * g + c) as f64 * x.get(i, s)
        })
        .unwrap();
        (y, x)
    }

    #[test]
    fn planted_cells_average_their_slopes() {
        let (y, x) = planted(false);
        let w = PanelMatrix::filled(20, 16, 1.0).unwrap();
        let mut rng = derive_stream(SeedSpec::new(64), 0);
        let got = twgfe_beta_w(&y, &x, &TwgfeOptions::new(2, 2), &w, &mut rng).unwrap();
        assert!((got - 2.5).abs() < 1e-10, "{got}");
    }

    #[test]
    fn degenerate_cell_is_dropped() {
        let (y, x) = planted(true);
        let w = PanelMatrix::filled(20, 16, 1.0).unwrap();
        let mut rng = derive_stream(SeedSpec::new(65), 0);
        let got = twgfe_beta_w(&y, &x, &TwgfeOptions::new(2, 2), &w, &mut rng).unwrap();
        // Remaining slopes 1, 2, 3 with equal mass.
        assert!((got - 2.0).abs() < 1e-10, "{got}");
        let flat = PanelMatrix::filled(20, 16, 2.0).unwrap();
        assert_eq!(
            twgfe_beta_w(&flat, &flat, &TwgfeOptions::new(1, 1), &w, &mut rng).unwrap_err(),
            Error::AllCellsDegenerate
        );
    }

    #[test]
    fn homogeneous_effects_are_recovered() {
        let mut rng = derive_stream(SeedSpec::new(66), 0);
        let v = spd_field(3, 40, &mut rng);
        let b = vec![0.4, -1.0, 2.5];
        let got = beta_star_multi_oracle(&v, &vec![b.clone(); 40]).unwrap();
        for (g, e) in got.iter().zip(&b) {
            assert!((g - e).abs() < 1e-10);
        }
    }

    #[test]
    fn scalar_case_is_variance_weighted() {
        let v: Vec<SquareMatrix> = [1.0, 2.0, 5.0].iter().map(|s| SquareMatrix::new(1, vec![*s]).unwrap()).collect();
        let b = vec![vec![1.0], vec![4.0], vec![-2.0]];
        let got = beta_star_multi_oracle(&v, &b).unwrap();
        assert!((got[0] - (1.0 + 8.0 - 10.0) / 8.0).abs() < 1e-15);
    }

    #[test]
    fn two_regressor_oracle_matches_direct_sums() {
        let mut rng = derive_stream(SeedSpec::new(67), 0);
        let v = spd_field(2, 25, &mut rng);
        let b: Vec<Vec<f64>> = (0..25).map(|_| vec![rng.sample(StandardNormal), rng.sample(StandardNormal)]).collect();
        let (mut a, mut bb, mut d, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (vi, bi) in v.iter().zip(&b) {
            a += vi.get(0, 0);
            bb += vi.get(0, 1);
            d += vi.get(1, 1);
            r0 += vi.get(0, 0) * bi[0] + vi.get(0, 1) * bi[1];
            r1 += vi.get(1, 0) * bi[0] + vi.get(1, 1) * bi[1];
        }
        let det = a * d - bb * bb;
        let expected = [(d * r0 - bb * r1) / det, (a * r1 - bb * r0) / det];
        let got = beta_star_multi_oracle(&v, &b).unwrap();
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn diagonal_fields_do_not_contaminate() {
        let mut rng = derive_stream(SeedSpec::new(68), 0);
        let v: Vec<SquareMatrix> = (0..30)
            .map(|_| {
                let d: [f64; 3] = [rng.random::<f64>() + 0.1, rng.random::<f64>() + 0.1, rng.random::<f64>() + 0.1];
                SquareMatrix::from_fn(3, |r, c| if r == c { d[r] } else { 0.0 })
            })
            .collect();
        let w = contamination_weights(&v).unwrap();
        for k in 0..3 {
            for j in 0..3 {
                if j != k {
                    assert!(w.entry(k, j).iter().all(|x| *x == 0.0));
                }
            }
        }
    }

    #[test]
    fn constant_field_gives_identity_weights() {
        let m = SquareMatrix::new(2, vec![2.0, 0.5, 0.5, 1.0]).unwrap();
        let w = contamination_weights(&vec![m; 6]).unwrap();
        for l in &w.lambda {
            for k in 0..2 {
                for j in 0..2 {
                    let e = if j == k { 1.0 } else { 0.0 };
                    assert!((l.get(k, j) - e).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn contamination_means_and_decomposition() {
        let mut rng = derive_stream(SeedSpec::new(69), 0);
        let v = spd_field(3, 50, &mut rng);
        let w = contamination_weights(&v).unwrap();
        for k in 0..3 {
            for j in 0..3 {
                let mean = w.entry(k, j).iter().sum::<f64>() / 50.0;
                let e = if j == k { 1.0 } else { 0.0 };
                assert!((mean - e).abs() < 1e-10);
            }
        }
        let b: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let direct = beta_star_multi_oracle(&v, &b).unwrap();
        for (a, c) in direct.iter().zip(w.decompose(&b)) {
            assert!((a - c).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_mean_is_rejected() {
        let v = vec![SquareMatrix::new(2, vec![1.0, 1.0, 1.0, 1.0]).unwrap(); 4];
        assert_eq!(contamination_weights(&v).unwrap_err(), Error::SingularMeanMatrix);
        assert_eq!(
            beta_star_multi_oracle(&v, &vec![vec![0.0, 0.0]; 4]).unwrap_err(),
            Error::SingularMeanMatrix
        );
    }
}
