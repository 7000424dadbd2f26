//! Location-scale factor simulators, the one-factor counterexample and the
//! oracle estimands attached to every simulated dataset.
//!
//! The location-scale design draws
//!
//! ```text
//! X_it = l_x(λ_{i,x}, f_{t,x}) + s_x ε_{it,x}
//! Y_it = γ_it X_it + l_y(λ_i, f_t) + s_y ε_it,   ε = ρ ε_x + √(1−ρ²) u
//! ```
//!
//! with `s_y = λ_i + f_t`, `s_x = λ_{i,x} + f_{t,x}` and
//! `γ_it = β₀ + κ s_y / s_x`. The conditional projection coefficient of `Y` on
//! `X` given the latents is `β_it = β₀ + (κ+ρ) s_y / s_x`.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::panel::{format_f64, PanelDataset, PanelMatrix};

/// Default number of discarded AR(1) steps.
pub const DEFAULT_BURN_IN: usize = 500;

/// Probability limit of TWFE and CCE in the counterexample design.
pub const COUNTEREXAMPLE_TWFE_PLIM: f64 = 0.5;

/// Shape of the location functions `l_y`, `l_x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocationFamily {
    /// `l(a, b) = a·b`.
    Lfm,
    /// `l(a, b) = (0.5 a¹⁰ + 0.5 b¹⁰)^{1/10}`.
    Nlfm,
}

impl LocationFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            LocationFamily::Lfm => "LFM",
            LocationFamily::Nlfm => "NLFM",
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            LocationFamily::Lfm => a * b,
            LocationFamily::Nlfm => ces10(a, b),
        }
    }
}

/// `(0.5 a¹⁰ + 0.5 b¹⁰)^{1/10}` for `a, b ≥ 0`, scaled by the larger input
/// so neither the power nor the root can overflow.
fn ces10(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m <= 0.0 {
        return 0.0;
    }
    let (ra, rb) = (a / m, b / m);
    m * (0.5 * ra.powi(10) + 0.5 * rb.powi(10)).powf(0.1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpSpec {
    pub n: usize,
    pub t: usize,
    pub kappa: f64,
    pub rho: f64,
    /// Mixing weight between the outcome-only and shared latents.
    pub pi: f64,
    /// AR(1) coefficient of the factors.
    pub alpha: f64,
    pub beta0: f64,
    pub location_family: LocationFamily,
    pub burn_in: usize,
}

impl DgpSpec {
    /// One of the four simulation designs, `id ∈ {1, 2, 3, 4}`:
    ///
    /// | id | κ   | ρ   | location |
    /// |----|-----|-----|----------|
    /// | 1  | 0   | 0.5 | LFM      |
    /// | 2  | 0   | 0.5 | NLFM     |
    /// | 3  | 0.5 | 0   | LFM      |
    /// | 4  | 0.5 | 0   | NLFM     |
    ///
    /// All use `α = 0.5` and `β₀ = 0`.
    pub fn preset(id: u8, n: usize, t: usize, pi: f64) -> Result<Self> {
        let (kappa, rho, location_family) = match id {
            1 => (0.0, 0.5, LocationFamily::Lfm),
            2 => (0.0, 0.5, LocationFamily::Nlfm),
            3 => (0.5, 0.0, LocationFamily::Lfm),
            4 => (0.5, 0.0, LocationFamily::Nlfm),
            _ => {
                return Err(Error::InvalidSpec(format!(
                    "unknown design {id}; valid values are 1, 2, 3, 4"
                )))
            }
        };
        let spec = Self {
            n,
            t,
            kappa,
            rho,
            pi,
            alpha: 0.5,
            beta0: 0.0,
            location_family,
            burn_in: DEFAULT_BURN_IN,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 {
            return Err(Error::InvalidSpec(format!(
                "panel dimensions must be positive, got {}x{}",
                self.n, self.t
            )));
        }
        if !(self.rho.abs() <= 1.0) {
            return Err(Error::InvalidSpec(format!("rho must lie in [-1, 1], got {}", self.rho)));
        }
        if !(0.0..=1.0).contains(&self.pi) {
            return Err(Error::InvalidSpec(format!("pi must lie in [0, 1], got {}", self.pi)));
        }
        check_alpha(self.alpha)?;
        if !self.kappa.is_finite() || !self.beta0.is_finite() {
            return Err(Error::InvalidSpec("kappa and beta0 must be finite".into()));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    // Negative coefficients would let the recursion turn negative, which the
    // scale functions cannot absorb; they are rejected.
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidAlpha(alpha));
    }
    Ok(())
}

/// Primitive random inputs of the location-scale design.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDraws {
    pub lambda_plus: Vec<f64>,
    pub lambda_x: Vec<f64>,
    pub f_plus: Vec<f64>,
    pub f_x: Vec<f64>,
    pub eps_x: PanelMatrix,
    pub u: PanelMatrix,
}

impl LatentDraws {
    /// Outcome loadings `λ_i = π λ⁺_i + (1−π) λ_{i,x}`.
    pub fn lambda(&self, pi: f64) -> Vec<f64> {
        mix(&self.lambda_plus, &self.lambda_x, pi)
    }

    /// Outcome factors `f_t = π f⁺_t + (1−π) f_{t,x}`.
    pub fn f(&self, pi: f64) -> Vec<f64> {
        mix(&self.f_plus, &self.f_x, pi)
    }
}

fn mix(a: &[f64], b: &[f64], pi: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(p, q)| pi * p + (1.0 - pi) * q).collect()
}

/// Primitive random inputs of the counterexample design.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleDraws {
    pub eta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub kappa: Vec<f64>,
    pub z: Vec<f64>,
    pub eps: PanelMatrix,
    pub nu: PanelMatrix,
}

/// Conditional moments given the latents.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleFields {
    pub beta_it: PanelMatrix,
    pub var_x_cond: PanelMatrix,
    pub cov_yx_cond: PanelMatrix,
    /// `var_x_cond` normalized to sum to one.
    pub weights_nt: PanelMatrix,
    pub gamma_it: PanelMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Latents {
    LocationScale {
        spec: DgpSpec,
        draws: LatentDraws,
        oracle: OracleFields,
    },
    Counterexample {
        draws: CounterexampleDraws,
        oracle: OracleFields,
    },
}

impl Latents {
    pub fn oracle(&self) -> &OracleFields {
        match self {
            Latents::LocationScale { oracle, .. } | Latents::Counterexample { oracle, .. } => oracle,
        }
    }

    /// Sidecar CSV with header `kind,i,t,value`; the unused index of a
    /// unit- or period-level series is left empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "kind,i,t,value")?;
        let unit = |out: &mut W, kind: &str, v: &[f64]| -> Result<()> {
            for (i, x) in v.iter().enumerate() {
                writeln!(out, "{kind},{i},,{}", format_f64(*x))?;
            }
            Ok(())
        };
        let period = |out: &mut W, kind: &str, v: &[f64]| -> Result<()> {
            for (s, x) in v.iter().enumerate() {
                writeln!(out, "{kind},,{s},{}", format_f64(*x))?;
            }
            Ok(())
        };
        let panel = |out: &mut W, kind: &str, p: &PanelMatrix| -> Result<()> {
            for (i, row) in p.rows().enumerate() {
                for (s, x) in row.iter().enumerate() {
                    writeln!(out, "{kind},{i},{s},{}", format_f64(*x))?;
                }
            }
            Ok(())
        };
        match self {
            Latents::LocationScale { draws, .. } => {
                unit(&mut out, "lambda_plus", &draws.lambda_plus)?;
                unit(&mut out, "lambda_x", &draws.lambda_x)?;
                period(&mut out, "f_plus", &draws.f_plus)?;
                period(&mut out, "f_x", &draws.f_x)?;
                panel(&mut out, "eps_x", &draws.eps_x)?;
                panel(&mut out, "u", &draws.u)?;
            }
            Latents::Counterexample { draws, .. } => {
                unit(&mut out, "eta", &draws.eta)?;
                unit(&mut out, "lambda", &draws.lambda)?;
                unit(&mut out, "kappa", &draws.kappa)?;
                period(&mut out, "z", &draws.z)?;
                panel(&mut out, "eps", &draws.eps)?;
                panel(&mut out, "nu", &draws.nu)?;
            }
        }
        let o = self.oracle();
        panel(&mut out, "beta_it", &o.beta_it)?;
        panel(&mut out, "var_x_cond", &o.var_x_cond)?;
        panel(&mut out, "cov_yx_cond", &o.cov_yx_cond)?;
        panel(&mut out, "weights_nt", &o.weights_nt)?;
        panel(&mut out, "gamma_it", &o.gamma_it)?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        self.write_csv(&mut out)?;
        out.flush()?;
        Ok(())
    }
}

/// Stationary AR(1) with Gamma innovations, mean 1 and variance 1:
/// `f_t = α f_{t−1} + η_t`, `η_t ~ Gamma(shape (1−α)/(1+α), scale 1+α)`.
///
/// The recursion starts at 1 and the first `burn_in` values are discarded.
pub fn ar1_gamma<R: Rng + ?Sized>(t: usize, alpha: f64, burn_in: usize, rng: &mut R) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if t == 0 {
        return Err(Error::InvalidSpec("series length must be positive".into()));
    }
    let shape = (1.0 - alpha).powi(2) / (1.0 - alpha * alpha);
    let scale = (1.0 - alpha * alpha) / (1.0 - alpha);
    let innov = Gamma::new(shape, scale)
        .map_err(|e| Error::InvalidSpec(format!("gamma innovation law: {e}")))?;
    let mut f = 1.0;
    for _ in 0..burn_in {
        f = alpha * f + innov.sample(rng);
    }
    let mut out = Vec::with_capacity(t);
    for _ in 0..t {
        f = alpha * f + innov.sample(rng);
        out.push(f);
    }
    Ok(out)
}

fn gamma_unit<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let law = Gamma::new(1.0, 1.0).expect("unit gamma law is valid");
    (0..len).map(|_| law.sample(rng)).collect()
}

fn normal_vec<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn normal_panel<R: Rng + ?Sized>(n: usize, t: usize, rng: &mut R) -> PanelMatrix {
    PanelMatrix::from_raw(n, t, normal_vec(n * t, rng))
}

/// Draws the latents in a fixed order (`λ⁺`, `λ_x`, `f⁺`, `f_x`, `ε_x`, `u`).
pub fn draw_latents<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R) -> Result<LatentDraws> {
    spec.validate()?;
    let lambda_plus = gamma_unit(spec.n, rng);
    let lambda_x = gamma_unit(spec.n, rng);
    let f_plus = ar1_gamma(spec.t, spec.alpha, spec.burn_in, rng)?;
    let f_x = ar1_gamma(spec.t, spec.alpha, spec.burn_in, rng)?;
    let eps_x = normal_panel(spec.n, spec.t, rng);
    let u = normal_panel(spec.n, spec.t, rng);
    Ok(LatentDraws {
        lambda_plus,
        lambda_x,
        f_plus,
        f_x,
        eps_x,
        u,
    })
}

/// Builds `(Y, X)` and the oracle fields from given latents.
pub fn assemble(spec: &DgpSpec, draws: LatentDraws) -> Result<PanelDataset> {
    spec.validate()?;
    let (n, t) = (spec.n, spec.t);
    if draws.lambda_plus.len() != n
        || draws.lambda_x.len() != n
        || draws.f_plus.len() != t
        || draws.f_x.len() != t
        || draws.eps_x.shape() != (n, t)
        || draws.u.shape() != (n, t)
    {
        return Err(Error::DimensionMismatch("latent draws do not match the design size".into()));
    }
    let lambda = draws.lambda(spec.pi);
    let f = draws.f(spec.pi);
    let root = (1.0 - spec.rho * spec.rho).max(0.0).sqrt();
    let size = n * t;
    let mut y = Vec::with_capacity(size);
    let mut x = Vec::with_capacity(size);
    let mut beta = Vec::with_capacity(size);
    let mut var = Vec::with_capacity(size);
    let mut cov = Vec::with_capacity(size);
    let mut gamma = Vec::with_capacity(size);
    for i in 0..n {
        for s in 0..t {
            let sy = lambda[i] + f[s];
            let sx = draws.lambda_x[i] + draws.f_x[s];
            let ly = spec.location_family.apply(lambda[i], f[s]);
            let lx = spec.location_family.apply(draws.lambda_x[i], draws.f_x[s]);
            let ex = draws.eps_x.get(i, s);
            let e = spec.rho * ex + root * draws.u.get(i, s);
            let g = spec.beta0 + spec.kappa * sy * sx / (sx * sx);
            let xv = lx + sx * ex;
            x.push(xv);
            y.push(g * xv + ly + sy * e);
            gamma.push(g);
            beta.push(spec.beta0 + (spec.kappa + spec.rho) * sy * sx / (sx * sx));
            var.push(sx * sx);
            cov.push(g * sx * sx + spec.rho * sy * sx);
        }
    }
    let total: f64 = var.iter().sum();
    let weights: Vec<f64> = var.iter().map(|v| v / total).collect();
    let oracle = OracleFields {
        beta_it: PanelMatrix::from_raw(n, t, beta),
        var_x_cond: PanelMatrix::from_raw(n, t, var),
        cov_yx_cond: PanelMatrix::from_raw(n, t, cov),
        weights_nt: PanelMatrix::from_raw(n, t, weights),
        gamma_it: PanelMatrix::from_raw(n, t, gamma),
    };
    let y = PanelMatrix::new(n, t, y)?;
    let x = PanelMatrix::new(n, t, x)?;
    Ok(PanelDataset::new(y, vec![x])?.with_latents(Latents::LocationScale {
        spec: *spec,
        draws,
        oracle,
    }))
}

/// Simulates one location-scale dataset with latents attached.
pub fn simulate<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R) -> Result<PanelDataset> {
    let draws = draw_latents(spec, rng)?;
    assemble(spec, draws)
}

/// `β₀ + (κ+ρ)(6−4π)/6`, the closed form used for table normalization.
pub fn beta_star_analytic(spec: &DgpSpec) -> f64 {
    spec.beta0 + (spec.kappa + spec.rho) * (6.0 - 4.0 * spec.pi) / 6.0
}

/// `E[s_y s_x] / E[s_x²]` evaluated from the stationary moments of the
/// latents (unit-mean, unit-variance, mutually independent components):
/// `β₀ + (κ+ρ)(6−2π)/6`.
pub fn beta_star_population(spec: &DgpSpec) -> f64 {
    spec.beta0 + (spec.kappa + spec.rho) * (6.0 - 2.0 * spec.pi) / 6.0
}

/// Finite-population estimand `Σ cov_yx_cond / Σ var_x_cond`.
pub fn beta_star_nt(data: &PanelDataset) -> Result<f64> {
    let o = data.latents.as_ref().ok_or(Error::MissingLatents)?.oracle();
    Ok(o.cov_yx_cond.sum() / o.var_x_cond.sum())
}

/// One-factor design with additive effects in which TWFE and CCE converge
/// to 1/2 although every conditional effect is zero:
/// `Y = η_i + λ_i z_t + ε_it`, `X = κ_i + λ_i z_t + ν_it`.
pub fn counterexample_simulate<R: Rng + ?Sized>(n: usize, t: usize, rng: &mut R) -> Result<PanelDataset> {
    if n < 2 || t < 2 {
        return Err(Error::InvalidSpec(format!(
            "counterexample needs n, T ≥ 2, got {n}x{t}"
        )));
    }
    let eta = normal_vec(n, rng);
    let lambda = normal_vec(n, rng);
    let kappa = normal_vec(n, rng);
    let z = normal_vec(t, rng);
    let eps = normal_panel(n, t, rng);
    let nu = normal_panel(n, t, rng);
    let y = PanelMatrix::from_fn(n, t, |i, s| eta[i] + lambda[i] * z[s] + eps.get(i, s))?;
    let x = PanelMatrix::from_fn(n, t, |i, s| kappa[i] + lambda[i] * z[s] + nu.get(i, s))?;
    let w = 1.0 / (n * t) as f64;
    let oracle = OracleFields {
        beta_it: PanelMatrix::zeros(n, t),
        var_x_cond: PanelMatrix::filled(n, t, 1.0)?,
        cov_yx_cond: PanelMatrix::zeros(n, t),
        weights_nt: PanelMatrix::filled(n, t, w)?,
        gamma_it: PanelMatrix::zeros(n, t),
    };
    Ok(PanelDataset::new(y, vec![x])?.with_latents(Latents::Counterexample {
        draws: CounterexampleDraws {
            eta,
            lambda,
            kappa,
            z,
            eps,
            nu,
        },
        oracle,
    }))
}
