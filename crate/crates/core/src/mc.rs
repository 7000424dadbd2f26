//! Monte Carlo replication engine.
//!
//! Each replication `m` draws its data from the simulation lane of the
//! master seed and any estimator randomness from a fresh copy of the
//! estimation lane, so results depend only on `(config, m)` and never on
//! scheduling or on which other estimators run. Draws are recorded as raw
//! estimates together with both estimands; the normalized statistic
//! `√min(n,T)·(β̂ − β*)` is formed at summary time.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;

use crate::dgp::{beta_star_analytic, beta_star_nt, counterexample_simulate, simulate, DgpSpec};
use crate::error::{Error, Result};
use crate::estimators::{cce_pooled, ife_als, pc_x, pc_yx, rank_rule, twfe, twgfe, IfeOptions, TwgfeOptions};
use crate::panel::{format_f64, PanelDataset, SeedSpec, StreamLane};

/// Environment variable consulted for the default worker count.
pub const WORKERS_ENV: &str = "PANELFACTOR_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorTag {
    Ife,
    PcX,
    PcYx,
    Cce,
    Twfe,
    Twgfe,
}

impl EstimatorTag {
    pub const ALL: [EstimatorTag; 6] = [
        EstimatorTag::Ife,
        EstimatorTag::PcX,
        EstimatorTag::PcYx,
        EstimatorTag::Cce,
        EstimatorTag::Twfe,
        EstimatorTag::Twgfe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorTag::Ife => "IFE",
            EstimatorTag::PcX => "PC_X",
            EstimatorTag::PcYx => "PC_YX",
            EstimatorTag::Cce => "CCE",
            EstimatorTag::Twfe => "TWFE",
            EstimatorTag::Twgfe => "TWGFE",
        }
    }
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorTag {
    type Err = Error;

    /// Case-insensitive; `PC_X`, `pc-x`, `PC(X)` and `pcx` all parse.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match key.as_str() {
            "ife" => Ok(EstimatorTag::Ife),
            "pcx" => Ok(EstimatorTag::PcX),
            "pcyx" => Ok(EstimatorTag::PcYx),
            "cce" => Ok(EstimatorTag::Cce),
            "twfe" => Ok(EstimatorTag::Twfe),
            "twgfe" => Ok(EstimatorTag::Twgfe),
            _ => Err(Error::UnknownEstimatorTag(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DgpChoice {
    /// Location-scale design `id ∈ {1, 2, 3, 4}`.
    LocationScale { id: u8, spec: DgpSpec },
    Counterexample { n: usize, t: usize },
}

impl DgpChoice {
    pub fn preset(id: u8, n: usize, t: usize, pi: f64) -> Result<Self> {
        Ok(DgpChoice::LocationScale {
            id,
            spec: DgpSpec::preset(id, n, t, pi)?,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            DgpChoice::LocationScale { spec, .. } => (spec.n, spec.t),
            DgpChoice::Counterexample { n, t } => (*n, *t),
        }
    }

    /// `DGP1` … `DGP4` or `counterexample`.
    pub fn label(&self) -> String {
        match self {
            DgpChoice::LocationScale { id, .. } => format!("DGP{id}"),
            DgpChoice::Counterexample { .. } => "counterexample".into(),
        }
    }

    pub fn simulate(&self, rng: &mut crate::panel::RandomStream) -> Result<PanelDataset> {
        match self {
            DgpChoice::LocationScale { spec, .. } => simulate(spec, rng),
            DgpChoice::Counterexample { n, t } => counterexample_simulate(*n, *t, rng),
        }
    }

    /// Closed-form estimand; zero for the counterexample, whose conditional
    /// effects all vanish.
    pub fn beta_star_analytic(&self) -> f64 {
        match self {
            DgpChoice::LocationScale { spec, .. } => beta_star_analytic(spec),
            DgpChoice::Counterexample { .. } => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankChoice {
    Explicit(usize),
    /// `rank_rule(n, T)`.
    RuleDefault,
}

/// Which estimand centres the normalized statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimandMode {
    PaperAnalytic,
    OracleNT,
}

impl EstimandMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimandMode::PaperAnalytic => "PaperAnalytic",
            EstimandMode::OracleNT => "OracleNT",
        }
    }
}

impl FromStr for EstimandMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "paperanalytic" | "analytic" | "paper" => Ok(EstimandMode::PaperAnalytic),
            "oraclent" | "oracle" => Ok(EstimandMode::OracleNT),
            _ => Err(Error::Parse(format!(
                "unknown estimand mode `{s}`; expected PaperAnalytic or OracleNT"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McCellConfig {
    pub dgp: DgpChoice,
    pub estimators: Vec<EstimatorTag>,
    pub replications: usize,
    pub seed: SeedSpec,
    pub rank: RankChoice,
    pub estimand: EstimandMode,
    pub ife: IfeOptions,
    pub twgfe: TwgfeOptions,
}

impl McCellConfig {
    /// Defaults: rank rule, analytic estimand, default estimator options.
    pub fn new(dgp: DgpChoice, estimators: Vec<EstimatorTag>, replications: usize, seed: u64) -> Self {
        Self {
            dgp,
            estimators,
            replications,
            seed: SeedSpec::new(seed),
            rank: RankChoice::RuleDefault,
            estimand: EstimandMode::PaperAnalytic,
            ife: IfeOptions::default(),
            twgfe: TwgfeOptions::default(),
        }
    }

    pub fn rank(&self) -> usize {
        let (n, t) = self.dgp.shape();
        match self.rank {
            RankChoice::Explicit(r) => r,
            RankChoice::RuleDefault => rank_rule(n, t),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidSpec("at least one replication is required".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidSpec("no estimators requested".into()));
        }
        match &self.dgp {
            DgpChoice::LocationScale { spec, .. } => spec.validate()?,
            DgpChoice::Counterexample { n, t } if *n < 2 || *t < 2 => {
                return Err(Error::InvalidSpec("counterexample needs n, T ≥ 2".into()))
            }
            DgpChoice::Counterexample { .. } => {}
        }
        let (n, t) = self.dgp.shape();
        let max = n.min(t);
        if self.rank() > max {
            return Err(Error::RankOutOfRange {
                rank: self.rank(),
                max,
            });
        }
        self.ife.validate()?;
        if self.estimators.contains(&EstimatorTag::Twgfe) {
            self.twgfe.validate(n, t)?;
        }
        Ok(())
    }

    /// `√min(n, T)`.
    pub fn scale(&self) -> f64 {
        let (n, t) = self.dgp.shape();
        (n.min(t) as f64).sqrt()
    }
}

/// Raw outcome of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub beta_star_analytic: f64,
    /// `None` when simulation itself failed.
    pub beta_star_nt: Option<f64>,
    /// One entry per requested estimator, in configuration order.
    pub estimates: Vec<Result<f64>>,
}

impl ReplicationRecord {
    fn beta_star(&self, mode: EstimandMode) -> Option<f64> {
        match mode {
            EstimandMode::PaperAnalytic => Some(self.beta_star_analytic),
            EstimandMode::OracleNT => self.beta_star_nt,
        }
    }
}

/// All replications of a cell, before summarizing.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub config: McCellConfig,
    pub rank: usize,
    pub records: Vec<ReplicationRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub estimator: EstimatorTag,
    pub reps: usize,
    pub reps_effective: usize,
    /// Mean of the normalized statistic.
    pub bias: f64,
    /// Population variance of the normalized statistic.
    pub var: f64,
    /// Mean of `β̂ − β*` without normalization.
    pub mean_error: f64,
    /// Mean of `β̂`.
    pub mean_estimate: f64,
    pub failures: BTreeMap<&'static str, usize>,
}

impl EstimatorSummary {
    pub fn failure_count(&self) -> usize {
        self.failures.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub dgp: DgpChoice,
    pub rank: usize,
    pub seed: SeedSpec,
    pub mode: EstimandMode,
    /// The analytic value, or the replication average of `β*_nT`.
    pub beta_star_value: f64,
    pub estimators: Vec<EstimatorSummary>,
}

impl McSummary {
    pub fn get(&self, tag: EstimatorTag) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.estimator == tag)
    }
}

impl CellRun {
    /// Normalized draws of one estimator, in replication order, skipping
    /// failed replications.
    pub fn normalized_draws(&self, tag: EstimatorTag, mode: EstimandMode) -> Result<Vec<f64>> {
        let k = self
            .config
            .estimators
            .iter()
            .position(|e| *e == tag)
            .ok_or_else(|| Error::UnknownEstimatorTag(tag.as_str().into()))?;
        let scale = self.config.scale();
        Ok(self
            .records
            .iter()
            .filter_map(|r| match (&r.estimates[k], r.beta_star(mode)) {
                (Ok(b), Some(star)) => Some(scale * (b - star)),
                _ => None,
            })
            .collect())
    }

    pub fn summarize(&self, mode: EstimandMode) -> McSummary {
        let scale = self.config.scale();
        let stars: Vec<f64> = self.records.iter().filter_map(|r| r.beta_star(mode)).collect();
        let beta_star_value = match mode {
            EstimandMode::PaperAnalytic => self.config.dgp.beta_star_analytic(),
            EstimandMode::OracleNT => stars.iter().sum::<f64>() / stars.len() as f64,
        };
        let estimators = self
            .config
            .estimators
            .iter()
            .enumerate()
            .map(|(k, &tag)| {
                let mut failures = BTreeMap::new();
                let mut errors = Vec::with_capacity(self.records.len());
                let mut estimates = Vec::with_capacity(self.records.len());
                for r in &self.records {
                    match (&r.estimates[k], r.beta_star(mode)) {
                        (Ok(b), Some(star)) => {
                            errors.push(b - star);
                            estimates.push(*b);
                        }
                        (Err(e), _) => *failures.entry(e.kind()).or_insert(0) += 1,
                        (Ok(_), None) => *failures.entry(Error::MissingLatents.kind()).or_insert(0) += 1,
                    }
                }
                let normalized: Vec<f64> = errors.iter().map(|e| scale * e).collect();
                let (bias, var) = mean_and_population_variance(&normalized);
                EstimatorSummary {
                    estimator: tag,
                    reps: self.records.len(),
                    reps_effective: normalized.len(),
                    bias,
                    var,
                    mean_error: mean_and_population_variance(&errors).0,
                    mean_estimate: mean_and_population_variance(&estimates).0,
                    failures,
                }
            })
            .collect();
        McSummary {
            dgp: self.config.dgp,
            rank: self.rank,
            seed: self.config.seed,
            mode,
            beta_star_value,
            estimators,
        }
    }
}

/// Two-pass mean and population variance in input order; NaN when empty.
fn mean_and_population_variance(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var)
}

fn estimate(tag: EstimatorTag, data: &PanelDataset, rank: usize, cfg: &McCellConfig, m: u64) -> Result<f64> {
    let (y, x) = (&data.y, &data.x);
    let r = match tag {
        EstimatorTag::Ife => ife_als(y, x, rank, &cfg.ife)?,
        EstimatorTag::PcX => pc_x(y, x, rank)?,
        EstimatorTag::PcYx => pc_yx(y, &x[0], rank)?,
        EstimatorTag::Cce => cce_pooled(y, &x[0])?,
        EstimatorTag::Twfe => twfe(y, &x[0])?,
        EstimatorTag::Twgfe => {
            let mut rng = cfg.seed.lane_stream(StreamLane::Estimation, m);
            twgfe(y, &x[0], &cfg.twgfe, &mut rng)?
        }
    };
    Ok(r.scalar())
}

fn replicate(cfg: &McCellConfig, rank: usize, m: u64) -> ReplicationRecord {
    let beta_star_analytic = cfg.dgp.beta_star_analytic();
    let mut rng = cfg.seed.lane_stream(StreamLane::Simulation, m);
    match cfg.dgp.simulate(&mut rng) {
        Ok(data) => ReplicationRecord {
            beta_star_analytic,
            beta_star_nt: beta_star_nt(&data).ok(),
            estimates: cfg
                .estimators
                .iter()
                .map(|&tag| estimate(tag, &data, rank, cfg, m))
                .collect(),
        },
        Err(e) => ReplicationRecord {
            beta_star_analytic,
            beta_star_nt: None,
            estimates: cfg.estimators.iter().map(|_| Err(e.clone())).collect(),
        },
    }
}

/// Worker count from `PANELFACTOR_WORKERS`, else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|w| *w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every replication of a cell on `workers` threads.
pub fn simulate_cell(cfg: &McCellConfig, workers: usize) -> Result<CellRun> {
    cfg.validate()?;
    let rank = cfg.rank();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidSpec(format!("cannot build worker pool: {e}")))?;
    let records = pool.install(|| {
        (0..cfg.replications as u64)
            .into_par_iter()
            .map(|m| replicate(cfg, rank, m))
            .collect()
    });
    Ok(CellRun {
        config: cfg.clone(),
        rank,
        records,
    })
}

pub fn run_cell(cfg: &McCellConfig) -> Result<McSummary> {
    run_cell_with_workers(cfg, default_workers())
}

pub fn run_cell_with_workers(cfg: &McCellConfig, workers: usize) -> Result<McSummary> {
    Ok(simulate_cell(cfg, workers)?.summarize(cfg.estimand))
}

/// Runs cells in order; each cell parallelizes over its replications.
pub fn run_table(cells: &[McCellConfig]) -> Result<Vec<McSummary>> {
    run_table_with_workers(cells, default_workers())
}

pub fn run_table_with_workers(cells: &[McCellConfig], workers: usize) -> Result<Vec<McSummary>> {
    cells.iter().map(|c| run_cell_with_workers(c, workers)).collect()
}

/// Normalized draws of one estimator, one per successful replication.
pub fn export_histogram(cfg: &McCellConfig, tag: &str) -> Result<Vec<f64>> {
    export_histogram_with_workers(cfg, tag, default_workers())
}

pub fn export_histogram_with_workers(cfg: &McCellConfig, tag: &str, workers: usize) -> Result<Vec<f64>> {
    let tag: EstimatorTag = tag.parse()?;
    let single = McCellConfig {
        estimators: vec![tag],
        ..cfg.clone()
    };
    simulate_cell(&single, workers)?.normalized_draws(tag, cfg.estimand)
}

/// Writes the histogram data file: a header line, then one value per line.
pub fn write_histogram<W: Write>(mut out: W, cfg: &McCellConfig, tag: EstimatorTag, draws: &[f64]) -> Result<()> {
    let (n, t) = cfg.dgp.shape();
    writeln!(
        out,
        "# estimator={tag} n={n} T={t} dgp={} seed={}",
        cfg.dgp.label(),
        cfg.seed.master_seed
    )?;
    for d in draws {
        writeln!(out, "{}", format_f64(*d))?;
    }
    Ok(())
}

/// Reads the values of a histogram data file, skipping `#` lines.
pub fn read_histogram<R: BufRead>(input: R) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(
            line.parse()
                .map_err(|_| Error::Parse(format!("line {}: `{line}` is not a number", k + 1)))?,
        );
    }
    Ok(out)
}

pub const SUMMARY_HEADER: &str =
    "dgp,location_family,n,T,pi,kappa,rho,estimator,rank,reps,reps_effective,bias,var,beta_star_mode,beta_star_value,seed";

/// One line of an mc_summary CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub dgp: String,
    /// `None` for the counterexample.
    pub location_family: Option<String>,
    pub n: usize,
    pub t: usize,
    pub pi: Option<f64>,
    pub kappa: Option<f64>,
    pub rho: Option<f64>,
    pub estimator: EstimatorTag,
    pub rank: usize,
    pub reps: usize,
    pub reps_effective: usize,
    pub bias: f64,
    pub var: f64,
    pub beta_star_mode: EstimandMode,
    pub beta_star_value: f64,
    pub seed: u64,
}

impl McSummary {
    pub fn rows(&self) -> Vec<SummaryRow> {
        let (n, t) = self.dgp.shape();
        let (family, pi, kappa, rho) = match &self.dgp {
            DgpChoice::LocationScale { spec, .. } => (
                Some(spec.location_family.as_str().to_string()),
                Some(spec.pi),
                Some(spec.kappa),
                Some(spec.rho),
            ),
            DgpChoice::Counterexample { .. } => (None, None, None, None),
        };
        self.estimators
            .iter()
            .map(|e| SummaryRow {
                dgp: self.dgp.label(),
                location_family: family.clone(),
                n,
                t,
                pi,
                kappa,
                rho,
                estimator: e.estimator,
                rank: self.rank,
                reps: e.reps,
                reps_effective: e.reps_effective,
                bias: e.bias,
                var: e.var,
                beta_star_mode: self.mode,
                beta_star_value: self.beta_star_value,
                seed: self.seed.master_seed,
            })
            .collect()
    }
}

const MISSING: &str = "NA";

fn opt_f64(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), format_f64)
}

pub fn write_summary_csv<W: Write>(mut out: W, summaries: &[McSummary]) -> Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for s in summaries {
        for r in s.rows() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.dgp,
                r.location_family.as_deref().unwrap_or(MISSING),
                r.n,
                r.t,
                opt_f64(r.pi),
                opt_f64(r.kappa),
                opt_f64(r.rho),
                r.estimator,
                r.rank,
                r.reps,
                r.reps_effective,
                format_f64(r.bias),
                format_f64(r.var),
                r.beta_star_mode.as_str(),
                format_f64(r.beta_star_value),
                r.seed
            )?;
        }
    }
    Ok(())
}

pub fn read_summary_csv<R: BufRead>(input: R) -> Result<Vec<SummaryRow>> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty summary file".into()))??;
    if header.trim() != SUMMARY_HEADER {
        return Err(Error::Parse(format!("unexpected summary header `{}`", header.trim())));
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = k + 2;
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 16 {
            return Err(Error::Parse(format!("line {lineno}: expected 16 fields, got {}", f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Parse(format!("line {lineno}: `{s}` is not a number")))
        };
        let opt = |s: &str| -> Result<Option<f64>> {
            if s == MISSING {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        let int = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Parse(format!("line {lineno}: `{s}` is not an integer")))
        };
        rows.push(SummaryRow {
            dgp: f[0].to_string(),
            location_family: (f[1] != MISSING).then(|| f[1].to_string()),
            n: int(f[2])?,
            t: int(f[3])?,
            pi: opt(f[4])?,
            kappa: opt(f[5])?,
            rho: opt(f[6])?,
            estimator: f[7].parse()?,
            rank: int(f[8])?,
            reps: int(f[9])?,
            reps_effective: int(f[10])?,
            bias: num(f[11])?,
            var: num(f[12])?,
            beta_star_mode: f[13].parse()?,
            beta_star_value: num(f[14])?,
            seed: f[15]
                .parse()
                .map_err(|_| Error::Parse(format!("line {lineno}: `{}` is not a seed", f[15])))?,
        });
    }
    Ok(rows)
}

/// Estimators tabulated in the reproduction tables, in column order.
pub const TABLE_ESTIMATORS: [EstimatorTag; 4] =
    [EstimatorTag::Ife, EstimatorTag::PcYx, EstimatorTag::PcX, EstimatorTag::Cce];

pub const DEFAULT_N_LIST: [usize; 5] = [25, 50, 75, 100, 200];
pub const DEFAULT_PI_LIST: [f64; 2] = [0.0, 0.5];

/// Cells of reproduction table `table ∈ {1, 2, 3, 4}` (design `table`),
/// rows ordered by `n` then `π`, with `n = T`.
pub fn table_cells(table: u8, reps: usize, seed: u64, n_list: &[usize], pi_list: &[f64]) -> Result<Vec<McCellConfig>> {
    if !(1..=4).contains(&table) {
        return Err(Error::InvalidSpec(format!("unknown table {table}; valid values are 1, 2, 3, 4")));
    }
    let mut cells = Vec::with_capacity(n_list.len() * pi_list.len());
    for &n in n_list {
        for &pi in pi_list {
            let cfg = McCellConfig::new(DgpChoice::preset(table, n, n, pi)?, TABLE_ESTIMATORS.to_vec(), reps, seed);
            cfg.validate()?;
            cells.push(cfg);
        }
    }
    Ok(cells)
}
