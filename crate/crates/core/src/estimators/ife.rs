//! Interactive fixed effects by alternating least squares.
//!
//! Minimizes `Q(β, G) = ‖Y − Σ_k X_k β_k − G‖²_F` over `rank(G) ≤ R` by
//! alternating the two exact block minimizers:
//!
//! * `G ← rank_r_approx(Y − Xβ, R)` (Eckart–Young),
//! * `β ← OLS of (Y − G) on X`.
//!
//! Each block step is a global minimizer of its block, so the objective
//! sequence is non-increasing. The problem is non-convex in `(β, G)` jointly;
//! several starting values are tried and the lowest final objective wins.

use super::ols::pooled_fit;
use super::{pc_x, pooled_ols, EstimatorResult};
use crate::error::{Error, Result};
use crate::linalg::rank_r_approx;
use crate::panel::PanelMatrix;

/// Starting value for one ALS run.
#[derive(Debug, Clone, PartialEq)]
pub enum IfeStart {
    /// Pooled OLS of `Y` on the raw regressors.
    PooledOls,
    /// The PC(X) estimate at the same rank.
    PcX,
    Value(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IfeOptions {
    /// Stop once the relative objective decrease of a full sweep drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub initializations: Vec<IfeStart>,
}

impl Default for IfeOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 1000,
            initializations: vec![IfeStart::PooledOls, IfeStart::PcX],
        }
    }
}

impl IfeOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidSpec("IFE tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidSpec("IFE needs at least one iteration".into()));
        }
        if self.initializations.is_empty() {
            return Err(Error::InvalidSpec("IFE needs at least one initialization".into()));
        }
        Ok(())
    }
}

/// Winning ALS run with its objective path.
#[derive(Debug, Clone)]
pub struct IfeFit {
    pub result: EstimatorResult,
    /// Objective after every block step, starting from the first `G` update.
    pub objective_path: Vec<f64>,
    /// Index into `IfeOptions::initializations` of the winning start.
    pub start: usize,
    /// Low-rank term paired with the returned β.
    pub factor_term: PanelMatrix,
}

pub fn ife_als(
    y: &PanelMatrix,
    xs: &[PanelMatrix],
    rank: usize,
    opts: &IfeOptions,
) -> Result<EstimatorResult> {
    ife_als_detailed(y, xs, rank, opts).map(|fit| fit.result)
}

pub fn ife_als_detailed(
    y: &PanelMatrix,
    xs: &[PanelMatrix],
    rank: usize,
    opts: &IfeOptions,
) -> Result<IfeFit> {
    opts.validate()?;
    if xs.is_empty() {
        return Err(Error::DimensionMismatch("no regressors supplied".into()));
    }
    if let Some(k) = xs.iter().position(|x| x.shape() != y.shape()) {
        return Err(Error::DimensionMismatch(format!("regressor {k} shape differs from outcome")));
    }
    let max = y.n().min(y.t());
    if rank > max {
        return Err(Error::RankOutOfRange { rank, max });
    }

    let mut best: Option<IfeFit> = None;
    let mut last_err = None;
    for (idx, start) in opts.initializations.iter().enumerate() {
        let beta0 = match start {
            IfeStart::PooledOls => pooled_ols(y, xs).map(|r| r.beta),
            IfeStart::PcX => pc_x(y, xs, rank).map(|r| r.beta),
            IfeStart::Value(v) if v.len() == xs.len() => Ok(v.clone()),
            IfeStart::Value(v) => Err(Error::DimensionMismatch(format!(
                "start value has {} coefficients, expected {}",
                v.len(),
                xs.len()
            ))),
        };
        let run = beta0.and_then(|b| run_als(y, xs, rank, opts, b));
        match run {
            Ok((result, path, g)) => {
                let better = best
                    .as_ref()
                    .is_none_or(|b| result.final_objective < b.result.final_objective);
                if better {
                    best = Some(IfeFit {
                        result,
                        objective_path: path,
                        start: idx,
                        factor_term: g,
                    });
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(Error::InvalidSpec("no IFE start succeeded".into())))
}

fn fitted_residual(y: &PanelMatrix, xs: &[PanelMatrix], beta: &[f64]) -> PanelMatrix {
    let mut w = y.clone();
    for (x, b) in xs.iter().zip(beta) {
        for (wv, xv) in w.values_mut().iter_mut().zip(x.values()) {
            *wv -= b * xv;
        }
    }
    w
}

fn run_als(
    y: &PanelMatrix,
    xs: &[PanelMatrix],
    rank: usize,
    opts: &IfeOptions,
    mut beta: Vec<f64>,
) -> Result<(EstimatorResult, Vec<f64>, PanelMatrix)> {
    let refs: Vec<&PanelMatrix> = xs.iter().collect();
    let energy = vec![0.0; xs.len()];
    let mut path = Vec::new();
    let mut previous: Option<f64> = None;
    let mut iterations = 0;
    let mut converged = false;
    let mut denominator;
    let mut g;
    let mut objective;

    loop {
        let w = fitted_residual(y, xs, &beta);
        g = rank_r_approx(&w, rank)?;
        path.push(w.sub(&g).frobenius_sq());

        let fit = pooled_fit(&y.sub(&g), &refs, &energy, rank)?;
        beta = fit.beta;
        denominator = fit.denominator;
        iterations += 1;
        objective = fitted_residual(y, xs, &beta).sub(&g).frobenius_sq();
        path.push(objective);

        if let Some(prev) = previous {
            if prev - objective <= opts.tolerance * prev {
                converged = true;
                break;
            }
        }
        if objective == 0.0 {
            converged = true;
            break;
        }
        if iterations >= opts.max_iterations {
            break;
        }
        previous = Some(objective);
    }

    Ok((
        EstimatorResult {
            beta,
            rank_used: rank,
            iterations,
            final_objective: objective,
            denominator,
            converged,
        },
        path,
        g,
    ))
}
