//! Truncated SVD, rank-`R` approximation and spectral diagnostics.
//!
//! Dense decompositions are delegated to `faer`, built without its thread
//! pool so that every decomposition runs sequentially and reproducibly inside
//! whichever worker calls it.

use faer::Mat;

use crate::error::{Error, Result};
use crate::panel::PanelMatrix;

/// Leading singular triplets of a panel.
///
/// `left[r]` and `right[r]` are the r-th left (length `n`) and right
/// (length `T`) singular vectors; the first entry of each left vector whose
/// magnitude exceeds `1e-12` is non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactors {
    pub rank: usize,
    pub left: Vec<Vec<f64>>,
    pub right: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
}

impl LowRankFactors {
    /// `Σ_r σ_r u_r v_rᵀ` as an `n × T` panel.
    pub fn reconstruct(&self, n: usize, t: usize) -> PanelMatrix {
        let mut out = vec![0.0; n * t];
        for r in 0..self.rank {
            let (u, v, s) = (&self.left[r], &self.right[r], self.singular_values[r]);
            for i in 0..n {
                let ui = s * u[i];
                let row = &mut out[i * t..(i + 1) * t];
                for (o, vs) in row.iter_mut().zip(v) {
                    *o += ui * vs;
                }
            }
        }
        PanelMatrix::from_raw(n, t, out)
    }
}

/// Norms and low-rank tail energies of a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDiagnostics {
    pub spectral_norm: f64,
    pub frobenius_sq: f64,
    /// `tail_energy[R] = Σ_{r>R} σ_r² / Σ_r σ_r²` for `R = 0..=min(n,T)`.
    pub tail_energy: Vec<f64>,
}

impl SpectralDiagnostics {
    pub fn tail_energy_at(&self, rank: usize) -> f64 {
        self.tail_energy[rank.min(self.tail_energy.len() - 1)]
    }
}

pub(crate) fn to_faer(a: &PanelMatrix) -> Mat<f64> {
    Mat::from_fn(a.n(), a.t(), |i, s| a.get(i, s))
}

struct ThinSvd {
    u: Mat<f64>,
    s: Vec<f64>,
    v: Mat<f64>,
}

fn thin_svd(a: &PanelMatrix) -> ThinSvd {
    let m = to_faer(a);
    // faer only fails to converge on non-finite input, which PanelMatrix excludes.
    let svd = m.thin_svd().expect("SVD of a finite matrix");
    let s = svd.S().column_vector().iter().copied().collect();
    ThinSvd {
        u: svd.U().to_owned(),
        s,
        v: svd.V().to_owned(),
    }
}

fn check_rank(a: &PanelMatrix, rank: usize) -> Result<()> {
    let max = a.n().min(a.t());
    if rank > max {
        return Err(Error::RankOutOfRange { rank, max });
    }
    Ok(())
}

/// Leading `rank` singular triplets of `a`, in non-increasing σ order.
pub fn truncated_svd(a: &PanelMatrix, rank: usize) -> Result<LowRankFactors> {
    check_rank(a, rank)?;
    let (n, t) = a.shape();
    if rank == 0 {
        return Ok(LowRankFactors {
            rank: 0,
            left: Vec::new(),
            right: Vec::new(),
            singular_values: Vec::new(),
        });
    }
    let svd = thin_svd(a);
    let mut left = Vec::with_capacity(rank);
    let mut right = Vec::with_capacity(rank);
    for r in 0..rank {
        let mut u: Vec<f64> = (0..n).map(|i| svd.u[(i, r)]).collect();
        let mut v: Vec<f64> = (0..t).map(|s| svd.v[(s, r)]).collect();
        if let Some(first) = u.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                u.iter_mut().for_each(|x| *x = -*x);
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        left.push(u);
        right.push(v);
    }
    Ok(LowRankFactors {
        rank,
        left,
        right,
        singular_values: svd.s[..rank].to_vec(),
    })
}

/// Best rank-`rank` approximation of `a` in Frobenius norm; zero for `rank = 0`.
pub fn rank_r_approx(a: &PanelMatrix, rank: usize) -> Result<PanelMatrix> {
    check_rank(a, rank)?;
    let (n, t) = a.shape();
    if rank == 0 {
        return Ok(PanelMatrix::zeros(n, t));
    }
    let svd = thin_svd(a);
    let us = Mat::from_fn(n, rank, |i, r| svd.u[(i, r)] * svd.s[r]);
    let vr = svd.v.subcols(0, rank);
    let g = &us * vr.transpose();
    Ok(PanelMatrix::from_raw(
        n,
        t,
        (0..n * t).map(|k| g[(k / t, k % t)]).collect(),
    ))
}

/// `a − rank_r_approx(a, rank)`.
pub fn low_rank_residual(a: &PanelMatrix, rank: usize) -> Result<PanelMatrix> {
    if rank == 0 {
        check_rank(a, rank)?;
        return Ok(a.clone());
    }
    Ok(a.sub(&rank_r_approx(a, rank)?))
}

/// Singular values of `a`, non-increasing.
pub fn singular_values(a: &PanelMatrix) -> Vec<f64> {
    to_faer(a)
        .singular_values()
        .expect("singular values of a finite matrix")
}

/// Above this `min(n, T)` the spectral norm comes from power iteration.
pub const POWER_ITERATION_THRESHOLD: usize = 512;

pub fn spectral_diagnostics(a: &PanelMatrix) -> SpectralDiagnostics {
    let sv = singular_values(a);
    let frobenius_sq = a.frobenius_sq();
    let spectral_norm = if a.n().min(a.t()) <= POWER_ITERATION_THRESHOLD {
        sv.first().copied().unwrap_or(0.0)
    } else {
        power_iteration_norm(a, 1e-10, 10_000)
    };
    let sq: Vec<f64> = sv.iter().map(|s| s * s).collect();
    let total: f64 = sq.iter().sum();
    let mut tail_energy = vec![0.0; sq.len() + 1];
    if total > 0.0 {
        let mut suffix = 0.0;
        for r in (0..sq.len()).rev() {
            suffix += sq[r];
            tail_energy[r] = suffix / total;
        }
        tail_energy[0] = 1.0;
    }
    SpectralDiagnostics {
        spectral_norm,
        frobenius_sq,
        tail_energy,
    }
}

/// Largest singular value by power iteration on `AᵀA`.
pub fn power_iteration_norm(a: &PanelMatrix, tol: f64, max_iter: usize) -> f64 {
    let (n, t) = a.shape();
    // Deterministic start with no zero component.
    let mut v: Vec<f64> = (0..t).map(|s| 1.0 + (s as f64 * 0.618_034).fract()).collect();
    normalize(&mut v);
    let mut sigma = 0.0;
    let mut av = vec![0.0; n];
    for _ in 0..max_iter {
        for (i, out) in av.iter_mut().enumerate() {
            *out = a.row(i).iter().zip(&v).map(|(x, y)| x * y).sum();
        }
        let mut w = vec![0.0; t];
        for (i, ai) in av.iter().enumerate() {
            for (ws, x) in w.iter_mut().zip(a.row(i)) {
                *ws += ai * x;
            }
        }
        let norm = normalize(&mut w);
        let next = norm.sqrt();
        v = w;
        if norm == 0.0 {
            return 0.0;
        }
        if (next - sigma).abs() <= tol * next {
            return next;
        }
        sigma = next;
    }
    sigma
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Small dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    dim: usize,
    values: Vec<f64>,
}

impl SquareMatrix {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "{dim}x{dim} matrix needs {} values, got {}",
                dim * dim,
                values.len()
            )));
        }
        Ok(Self { dim, values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for k in 0..dim {
            m.set(k, k, 1.0);
        }
        m
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for r in 0..dim {
            for c in 0..dim {
                m.set(r, c, f(r, c));
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.dim + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.dim + c] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn add_assign(&mut self, other: &SquareMatrix) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|r| (0..self.dim).map(|c| self.get(r, c) * x[c]).sum())
            .collect()
    }

    pub fn matmul(&self, other: &SquareMatrix) -> SquareMatrix {
        SquareMatrix::from_fn(self.dim, |r, c| {
            (0..self.dim).map(|k| self.get(r, k) * other.get(k, c)).sum()
        })
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.dim).all(|r| {
            (0..r).all(|c| (self.get(r, c) - self.get(c, r)).abs() <= tol * (1.0 + self.get(r, c).abs()))
        })
    }

    /// Eigenvalues of the symmetric part, non-decreasing.
    pub fn symmetric_eigenvalues(&self) -> Vec<f64> {
        let m = Mat::from_fn(self.dim, self.dim, |r, c| 0.5 * (self.get(r, c) + self.get(c, r)));
        m.self_adjoint_eigenvalues(faer::Side::Lower)
            .expect("eigenvalues of a finite symmetric matrix")
    }

    /// `λ_max / λ_min` of a symmetric matrix; infinite unless positive definite.
    pub fn symmetric_condition(&self) -> f64 {
        let ev = self.symmetric_eigenvalues();
        match (ev.first(), ev.last()) {
            (Some(&lo), Some(&hi)) if lo > 0.0 && lo.is_finite() && hi.is_finite() => hi / lo,
            _ => f64::INFINITY,
        }
    }

    pub fn determinant(&self) -> f64 {
        let (lu, _, sign) = match self.lu() {
            Some(parts) => parts,
            None => return 0.0,
        };
        (0..self.dim).map(|k| lu[k * self.dim + k]).product::<f64>() * sign
    }

    /// Gaussian elimination with partial pivoting; `None` if exactly singular.
    fn lu(&self) -> Option<(Vec<f64>, Vec<usize>, f64)> {
        let d = self.dim;
        let mut a = self.values.clone();
        let mut perm: Vec<usize> = (0..d).collect();
        let mut sign = 1.0;
        for k in 0..d {
            let p = (k..d)
                .max_by(|&x, &y| a[x * d + k].abs().total_cmp(&a[y * d + k].abs()))
                .unwrap_or(k);
            if a[p * d + k] == 0.0 {
                return None;
            }
            if p != k {
                for c in 0..d {
                    a.swap(k * d + c, p * d + c);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            for r in k + 1..d {
                let f = a[r * d + k] / a[k * d + k];
                a[r * d + k] = f;
                for c in k + 1..d {
                    a[r * d + c] -= f * a[k * d + c];
                }
            }
        }
        Some((a, perm, sign))
    }

    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let d = self.dim;
        let (lu, perm, _) = self.lu()?;
        let mut x: Vec<f64> = perm.iter().map(|&p| rhs[p]).collect();
        for r in 0..d {
            for c in 0..r {
                x[r] -= lu[r * d + c] * x[c];
            }
        }
        for r in (0..d).rev() {
            for c in r + 1..d {
                x[r] -= lu[r * d + c] * x[c];
            }
            x[r] /= lu[r * d + r];
        }
        Some(x)
    }

    pub fn inverse(&self) -> Option<SquareMatrix> {
        let d = self.dim;
        let mut inv = SquareMatrix::zeros(d);
        for c in 0..d {
            let mut e = vec![0.0; d];
            e[c] = 1.0;
            let col = self.solve(&e)?;
            for r in 0..d {
                inv.set(r, c, col[r]);
            }
        }
        Some(inv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{derive_stream, SeedSpec};
    use rand::Rng;

    fn random_panel(n: usize, t: usize, seed: u64) -> PanelMatrix {
        let mut rng = derive_stream(SeedSpec::new(seed), 0);
        PanelMatrix::from_fn(n, t, |_, _| rng.random::<f64>() * 2.0 - 1.0).unwrap()
    }

    fn rel_frob(a: &PanelMatrix, b: &PanelMatrix) -> f64 {
        a.sub(b).frobenius() / a.frobenius().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn exact_rank_one_input() {
        let u = [0.6, 0.8, 0.0];
        let v = [0.0, 1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt(), 0.0];
        let a = PanelMatrix::from_fn(3, 4, |i, s| 5.0 * u[i] * v[s]).unwrap();
        let f = truncated_svd(&a, 1).unwrap();
        assert!((f.singular_values[0] - 5.0).abs() < 1e-12);
        let g = rank_r_approx(&a, 1).unwrap();
        assert!(a.sub(&g).frobenius() < 1e-10);
    }

    #[test]
    fn diagonal_truncation() {
        let a = PanelMatrix::new(2, 2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let g = rank_r_approx(&a, 1).unwrap();
        let expected = [3.0, 0.0, 0.0, 0.0];
        for (x, e) in g.values().iter().zip(expected) {
            assert!((x - e).abs() < 1e-12);
        }
        assert!((a.sub(&g).frobenius() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_bounds() {
        let a = random_panel(4, 3, 1);
        assert_eq!(
            truncated_svd(&a, 4).unwrap_err(),
            Error::RankOutOfRange { rank: 4, max: 3 }
        );
        assert!(rank_r_approx(&a, 0).unwrap().values().iter().all(|v| *v == 0.0));
        let full = rank_r_approx(&a, 3).unwrap();
        assert!(rel_frob(&a, &full) < 1e-9);
    }

    #[test]
    fn left_vectors_have_nonnegative_leading_entry() {
        let a = random_panel(7, 5, 3);
        let f = truncated_svd(&a, 5).unwrap();
        for u in &f.left {
            let first = u.iter().find(|x| x.abs() > 1e-12).unwrap();
            assert!(*first >= 0.0);
        }
        assert!(f.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn spectral_examples() {
        let eye = PanelMatrix::new(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let d = spectral_diagnostics(&eye);
        assert!((d.spectral_norm - 1.0).abs() < 1e-12);
        assert!((d.frobenius_sq - 3.0).abs() < 1e-12);
        let b = PanelMatrix::new(2, 2, vec![0.0, 2.0, 0.0, 0.0]).unwrap();
        let d = spectral_diagnostics(&b);
        assert!((d.spectral_norm - 2.0).abs() < 1e-12);
        assert_eq!(d.tail_energy_at(0), 1.0);
        assert_eq!(d.tail_energy_at(2), 0.0);
    }

    #[test]
    fn zero_matrix_has_zero_tail() {
        let d = spectral_diagnostics(&PanelMatrix::zeros(3, 2));
        assert_eq!(d.spectral_norm, 0.0);
        assert!(d.tail_energy.iter().all(|e| *e == 0.0));
    }

    #[test]
    fn power_iteration_matches_decomposition() {
        let a = random_panel(30, 20, 9);
        let sv = singular_values(&a);
        let p = power_iteration_norm(&a, 1e-12, 100_000);
        assert!((p - sv[0]).abs() < 1e-6 * sv[0]);
    }

    #[test]
    fn small_solve_and_inverse() {
        let m = SquareMatrix::new(3, vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]).unwrap();
        let x = m.solve(&[1.0, 2.0, 3.0]).unwrap();
        let back = m.mul_vec(&x);
        for (b, e) in back.iter().zip([1.0, 2.0, 3.0]) {
            assert!((b - e).abs() < 1e-12);
        }
        let inv = m.inverse().unwrap();
        let id = m.matmul(&inv);
        for r in 0..3 {
            for c in 0..3 {
                let e = if r == c { 1.0 } else { 0.0 };
                assert!((id.get(r, c) - e).abs() < 1e-12);
            }
        }
        assert!(m.symmetric_condition() > 1.0);
        let singular = SquareMatrix::new(2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(singular.solve(&[1.0, 1.0]).is_none() || singular.symmetric_condition() > 1e12);
        assert_eq!(singular.determinant(), 0.0);
    }
}
