//! Command-line front end for `panelfactor`.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 I/O failure,
//! 4 numerical degeneracy.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use panelfactor::dgp::beta_star_nt;
use panelfactor::estimators::{
    cce_pooled, ife_als, mean_group, pc_x, pc_yx, pooled_ols, rank_rule, twfe, twgfe, within_estimator,
    EstimatorResult, IfeOptions, TwgfeOptions,
};
use panelfactor::mc::{
    default_workers, export_histogram_with_workers, run_cell_with_workers, run_table_with_workers, table_cells,
    write_histogram, write_summary_csv, DgpChoice, EstimandMode, EstimatorTag, McCellConfig, DEFAULT_N_LIST,
    DEFAULT_PI_LIST, WORKERS_ENV,
};
use panelfactor::panel::format_f64;
use panelfactor::{Error, PanelMatrix, SeedSpec, StreamLane};

pub use config::CliConfig;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => 3,
        Error::DegenerateDenominator(_)
        | Error::CollinearControls
        | Error::UnitDegenerate(_)
        | Error::RankDeficientAugmentation
        | Error::EmptyCluster
        | Error::AllCellsDegenerate
        | Error::SingularMeanMatrix
        | Error::NonFiniteEntry { .. } => 4,
        _ => 2,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            message: format!("{}: {e}", e.kind()),
        }
    }
}

fn with_path(path: &Path, e: Error) -> CliError {
    let mut err = CliError::from(e);
    err.message = format!("{}: {}", path.display(), err.message);
    err
}

#[derive(Debug, Parser)]
#[command(name = "panelfactor", version, about = "Factor-augmented panel estimators and Monte Carlo tables")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one dataset and write Y.csv and X.csv.
    Simulate(SimulateArgs),
    /// Fit one estimator to panel CSV files.
    Estimate(EstimateArgs),
    /// Reproduce a Monte Carlo table as an mc_summary CSV.
    Table(TableArgs),
    /// Write normalized draws of one estimator for a histogram.
    Hist(HistArgs),
    /// Run one Monte Carlo cell described by a configuration file.
    Run(RunArgs),
}

const DGP_VALUES: [&str; 5] = ["1", "2", "3", "4", "counterexample"];

#[derive(Debug, Args)]
pub struct DgpArgs {
    #[arg(long, value_parser = DGP_VALUES)]
    pub dgp: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub t: usize,
    /// Mixing weight of the location-scale designs; ignored by the counterexample.
    #[arg(long, default_value_t = 0.0)]
    pub pi: f64,
}

impl DgpArgs {
    pub fn choice(&self) -> Result<DgpChoice, CliError> {
        if self.dgp == "counterexample" {
            if self.n < 2 || self.t < 2 {
                return Err(CliError::usage("--n and --t must be at least 2 for the counterexample"));
            }
            return Ok(DgpChoice::Counterexample { n: self.n, t: self.t });
        }
        let id: u8 = self.dgp.parse().expect("validated by clap");
        Ok(DgpChoice::preset(id, self.n, self.t, self.pi)?)
    }
}

#[derive(Debug, Args)]
pub struct WorkerArgs {
    /// Worker threads; defaults to PANELFACTOR_WORKERS, then the available parallelism.
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
}

impl WorkerArgs {
    pub fn resolve(&self) -> Result<usize, CliError> {
        match self.workers {
            Some(0) => Err(CliError::usage("--workers must be positive")),
            Some(w) => Ok(w),
            None => Ok(default_workers()),
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub dgp: DgpArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write latents.csv.
    #[arg(long)]
    pub emit_latents: bool,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub y: PathBuf,
    /// Regressor panel; repeat for several regressors.
    #[arg(long, required = true)]
    pub x: Vec<PathBuf>,
    /// ife, pc_x, pc_yx, cce, twfe, twgfe, within, mean_group or pooled_ols.
    #[arg(long)]
    pub estimator: String,
    #[arg(long, conflicts_with = "rank_rule")]
    pub rank: Option<usize>,
    /// Use the default rank rule (the default when --rank is absent).
    #[arg(long)]
    pub rank_rule: bool,
    #[arg(long)]
    pub ife_tol: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub twgfe_g: usize,
    #[arg(long, default_value_t = 1)]
    pub twgfe_c: usize,
    /// Seed of the k-means stream used by twgfe.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    #[arg(long)]
    pub table: u8,
    #[arg(long)]
    pub reps: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub n_list: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub pi_list: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub workers: WorkerArgs,
}

#[derive(Debug, Args)]
pub struct HistArgs {
    #[command(flatten)]
    pub dgp: DgpArgs,
    #[arg(long)]
    pub estimator: String,
    #[arg(long)]
    pub reps: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// PaperAnalytic or OracleNT.
    #[arg(long, default_value = "PaperAnalytic")]
    pub estimand: String,
    #[command(flatten)]
    pub workers: WorkerArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the `out` key; stdout when neither is given.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub workers: WorkerArgs,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            if code == 0 {
                write!(stdout, "{e}").map_err(|e| CliError::io(e.to_string()))?;
                return Ok(());
            }
            return Err(CliError {
                code: 2,
                message: e.render().to_string().trim_end().to_string(),
            });
        }
    };
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a, stdout),
        Command::Estimate(a) => cmd_estimate(&a, stdout),
        Command::Table(a) => cmd_table(&a, stdout),
        Command::Hist(a) => cmd_hist(&a, stdout),
        Command::Run(a) => cmd_run(&a, stdout),
    }
}

fn say(stdout: &mut dyn Write, text: &str) -> Result<(), CliError> {
    writeln!(stdout, "{text}").map_err(|e| CliError::io(format!("stdout: {e}")))
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn finish(mut out: BufWriter<fs::File>, path: &Path) -> Result<(), CliError> {
    out.flush().map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

pub fn cmd_simulate(a: &SimulateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let choice = a.dgp.choice()?;
    let mut rng = SeedSpec::new(a.seed).lane_stream(StreamLane::Simulation, 0);
    let data = choice.simulate(&mut rng)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| CliError::io(format!("{}: {e}", a.out_dir.display())))?;
    let y_path = a.out_dir.join("Y.csv");
    let x_path = a.out_dir.join("X.csv");
    data.y.write_csv_file(&y_path).map_err(|e| with_path(&y_path, e))?;
    data.x[0].write_csv_file(&x_path).map_err(|e| with_path(&x_path, e))?;
    if a.emit_latents {
        let l_path = a.out_dir.join("latents.csv");
        data.latents
            .as_ref()
            .expect("simulated datasets carry latents")
            .write_csv_file(&l_path)
            .map_err(|e| with_path(&l_path, e))?;
    }
    say(stdout, &format!("beta_star_analytic={}", format_f64(choice.beta_star_analytic())))?;
    say(stdout, &format!("beta_star_oracle={}", format_f64(beta_star_nt(&data)?)))
}

/// Estimators accepted by `estimate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CliEstimator {
    Tag(EstimatorTag),
    Within,
    MeanGroup,
    PooledOls,
}

impl CliEstimator {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        let key: String = s.chars().filter(char::is_ascii_alphanumeric).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "within" => Ok(Self::Within),
            "meangroup" => Ok(Self::MeanGroup),
            "pooledols" | "ols" => Ok(Self::PooledOls),
            _ => s.parse().map(Self::Tag).map_err(|_| {
                CliError::usage(format!(
                    "--estimator: unknown estimator `{s}`; valid values are ife, pc_x, pc_yx, cce, twfe, twgfe, within, mean_group, pooled_ols"
                ))
            }),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Tag(t) => t.as_str(),
            Self::Within => "WITHIN",
            Self::MeanGroup => "MEAN_GROUP",
            Self::PooledOls => "POOLED_OLS",
        }
    }

    fn uses_rank(self) -> bool {
        matches!(self, Self::Tag(EstimatorTag::Ife | EstimatorTag::PcX | EstimatorTag::PcYx))
    }

    fn multi_regressor(self) -> bool {
        matches!(self, Self::Tag(EstimatorTag::Ife | EstimatorTag::PcX) | Self::PooledOls)
    }
}

/// Library call behind `estimate`.
pub fn fit(
    est: CliEstimator,
    y: &PanelMatrix,
    xs: &[PanelMatrix],
    rank: Option<usize>,
    ife_tol: Option<f64>,
    twgfe_opts: &TwgfeOptions,
    seed: u64,
) -> Result<EstimatorResult, CliError> {
    if let Some(k) = xs.iter().position(|x| x.shape() != y.shape()) {
        return Err(Error::DimensionMismatch(format!(
            "--x #{} is {}x{}, --y is {}x{}",
            k + 1,
            xs[k].n(),
            xs[k].t(),
            y.n(),
            y.t()
        ))
        .into());
    }
    if xs.len() > 1 && !est.multi_regressor() {
        return Err(CliError::usage(format!("--estimator {} takes a single --x", est.label())));
    }
    let rank = rank.unwrap_or_else(|| rank_rule(y.n(), y.t()));
    let x = &xs[0];
    let r = match est {
        CliEstimator::Tag(EstimatorTag::Ife) => {
            let mut opts = IfeOptions::default();
            if let Some(tol) = ife_tol {
                opts.tolerance = tol;
            }
            ife_als(y, xs, rank, &opts)?
        }
        CliEstimator::Tag(EstimatorTag::PcX) => pc_x(y, xs, rank)?,
        CliEstimator::Tag(EstimatorTag::PcYx) => pc_yx(y, x, rank)?,
        CliEstimator::Tag(EstimatorTag::Cce) => cce_pooled(y, x)?,
        CliEstimator::Tag(EstimatorTag::Twfe) => twfe(y, x)?,
        CliEstimator::Tag(EstimatorTag::Twgfe) => {
            let mut rng = SeedSpec::new(seed).lane_stream(StreamLane::Estimation, 0);
            twgfe(y, x, twgfe_opts, &mut rng)?
        }
        CliEstimator::Within => within_estimator(y, x)?,
        CliEstimator::MeanGroup => mean_group(y, x, 1e-12)?,
        CliEstimator::PooledOls => pooled_ols(y, xs)?,
    };
    Ok(r)
}

/// `estimator,beta,rank,iterations,objective`, coefficients joined by `;`.
pub fn record_line(label: &str, r: &EstimatorResult) -> String {
    let beta: Vec<String> = r.beta.iter().map(|b| format_f64(*b)).collect();
    format!(
        "{label},{},{},{},{}",
        beta.join(";"),
        r.rank_used,
        r.iterations,
        format_f64(r.final_objective)
    )
}

fn read_panel(path: &Path) -> Result<PanelMatrix, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    PanelMatrix::read_csv(BufReader::new(file)).map_err(|e| with_path(path, e))
}

pub fn cmd_estimate(a: &EstimateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let est = CliEstimator::parse(&a.estimator)?;
    let y = read_panel(&a.y)?;
    let xs = a.x.iter().map(|p| read_panel(p)).collect::<Result<Vec<_>, _>>()?;
    let opts = TwgfeOptions::new(a.twgfe_g, a.twgfe_c);
    let r = fit(est, &y, &xs, a.rank, a.ife_tol, &opts, a.seed)?;
    say(stdout, &record_line(est.label(), &r))?;
    let mut block = format!("estimator   {}\n", est.label());
    for (k, b) in r.beta.iter().enumerate() {
        block.push_str(&format!("beta[{k}]     {}\n", format_f64(*b)));
    }
    if est.uses_rank() {
        block.push_str(&format!("rank        {}\n", r.rank_used));
    }
    block.push_str(&format!("iterations  {}\n", r.iterations));
    block.push_str(&format!("objective   {}\n", format_f64(r.final_objective)));
    block.push_str(&format!("converged   {}", r.converged));
    say(stdout, &block)
}

pub fn cmd_table(a: &TableArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if !(1..=4).contains(&a.table) {
        return Err(CliError::usage(format!("--table: `{}` is not one of 1, 2, 3, 4", a.table)));
    }
    let n_list = a.n_list.clone().unwrap_or_else(|| DEFAULT_N_LIST.to_vec());
    let pi_list = a.pi_list.clone().unwrap_or_else(|| DEFAULT_PI_LIST.to_vec());
    let cells = table_cells(a.table, a.reps, a.seed, &n_list, &pi_list)?;
    let summaries = run_table_with_workers(&cells, a.workers.resolve()?)?;
    let mut out = create_file(&a.out)?;
    write_summary_csv(&mut out, &summaries).map_err(|e| with_path(&a.out, e))?;
    finish(out, &a.out)?;
    say(stdout, &format!("wrote {} rows to {}", summaries.len() * 4, a.out.display()))
}

pub fn cmd_hist(a: &HistArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let tag: EstimatorTag = a
        .estimator
        .parse()
        .map_err(|_| CliError::usage(format!("--estimator: unknown estimator `{}`", a.estimator)))?;
    let mut cfg = McCellConfig::new(a.dgp.choice()?, vec![tag], a.reps, a.seed);
    cfg.estimand = a.estimand.parse::<EstimandMode>()?;
    let draws = export_histogram_with_workers(&cfg, tag.as_str(), a.workers.resolve()?)?;
    let mut out = create_file(&a.out)?;
    write_histogram(&mut out, &cfg, tag, &draws).map_err(|e| with_path(&a.out, e))?;
    finish(out, &a.out)?;
    say(stdout, &format!("wrote {} draws to {}", draws.len(), a.out.display()))
}

pub fn cmd_run(a: &RunArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.config).map_err(|e| CliError::io(format!("{}: {e}", a.config.display())))?;
    let conf = CliConfig::parse(&text).map_err(|mut e| {
        e.message = format!("{}: {}", a.config.display(), e.message);
        e
    })?;
    let cell = conf.cell()?;
    let summary = run_cell_with_workers(&cell, a.workers.resolve()?)?;
    let target = a.out.clone().or_else(|| conf.out().map(PathBuf::from));
    match target {
        Some(path) => {
            let mut out = create_file(&path)?;
            write_summary_csv(&mut out, &[summary]).map_err(|e| with_path(&path, e))?;
            finish(out, &path)
        }
        None => {
            let mut buf = Vec::new();
            write_summary_csv(&mut buf, &[summary])?;
            stdout.write_all(&buf).map_err(|e| CliError::io(format!("stdout: {e}")))
        }
    }
}
