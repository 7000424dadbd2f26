//! Independent reference routines shared by the integration tests.

#![allow(dead_code)]

use panelfactor::{PanelMatrix, RandomStream, SeedSpec};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> RandomStream {
    SeedSpec::new(seed).stream(0)
}

pub fn normal_panel(n: usize, t: usize, rng: &mut impl Rng) -> PanelMatrix {
    PanelMatrix::from_fn(n, t, |_, _| rng.sample(StandardNormal)).unwrap()
}

pub fn normal_vec(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Cyclic Jacobi eigenvalues of a dense symmetric matrix (row-major),
/// sorted non-increasing.
pub fn jacobi_eigenvalues(mut a: Vec<f64>, dim: usize) -> Vec<f64> {
    for _sweep in 0..100 {
        let off: f64 = (0..dim)
            .flat_map(|p| (0..dim).filter(move |q| *q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[p * dim + q] * a[p * dim + q])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..dim {
            for q in p + 1..dim {
                let apq = a[p * dim + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * dim + q] - a[p * dim + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..dim {
                    let akp = a[k * dim + p];
                    let akq = a[k * dim + q];
                    a[k * dim + p] = c * akp - s * akq;
                    a[k * dim + q] = s * akp + c * akq;
                }
                for k in 0..dim {
                    let apk = a[p * dim + k];
                    let aqk = a[q * dim + k];
                    a[p * dim + k] = c * apk - s * aqk;
                    a[q * dim + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..dim).map(|k| a[k * dim + k]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    eig
}

/// Squared singular values of `a`, via Jacobi on the smaller Gram matrix.
pub fn squared_singular_values(a: &PanelMatrix) -> Vec<f64> {
    let (n, t) = a.shape();
    let (dim, gram): (usize, Vec<f64>) = if t <= n {
        (t, (0..t * t).map(|k| (0..n).map(|i| a.get(i, k / t) * a.get(i, k % t)).sum()).collect())
    } else {
        (n, (0..n * n).map(|k| (0..t).map(|s| a.get(k / n, s) * a.get(k % n, s)).sum()).collect())
    };
    jacobi_eigenvalues(gram, dim).into_iter().map(|v| v.max(0.0)).collect()
}

/// Gaussian elimination with partial pivoting on a dense system.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let k = b.len();
    for col in 0..k {
        let piv = (col..k).max_by(|x, y| a[*x][col].abs().total_cmp(&a[*y][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..k {
            let f = a[row][col] / a[col][col];
            for c in col..k {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; k];
    for row in (0..k).rev() {
        let s: f64 = (row + 1..k).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// OLS coefficients of `y` on the given columns via the normal equations.
pub fn long_regression(y: &[f64], columns: &[Vec<f64>]) -> Vec<f64> {
    let k = columns.len();
    let gram: Vec<Vec<f64>> = (0..k)
        .map(|a| (0..k).map(|b| columns[a].iter().zip(&columns[b]).map(|(u, v)| u * v).sum()).collect())
        .collect();
    let rhs: Vec<f64> = columns.iter().map(|c| c.iter().zip(y).map(|(u, v)| u * v).sum()).collect();
    solve(gram, rhs)
}
