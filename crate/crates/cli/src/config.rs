//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::str::FromStr;

use panelfactor::dgp::{DgpSpec, LocationFamily};
use panelfactor::estimators::{IfeOptions, TwgfeOptions};
use panelfactor::mc::{DgpChoice, EstimandMode, EstimatorTag, McCellConfig, RankChoice};
use panelfactor::SeedSpec;

use crate::CliError;

pub const REQUIRED_KEYS: [&str; 6] = ["dgp", "n", "t", "reps", "seed", "estimators"];

pub const OPTIONAL_KEYS: [&str; 14] = [
    "pi",
    "kappa",
    "rho",
    "alpha",
    "beta0",
    "location_family",
    "burn_in",
    "rank",
    "estimand",
    "ife_tol",
    "ife_max_iter",
    "twgfe_g",
    "twgfe_c",
    "out",
];

/// Parsed configuration file, keys lower-cased.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CliConfig {
    entries: BTreeMap<String, String>,
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("config line {}: expected `key = value`", k + 1)))?;
            let key = key.trim().to_ascii_lowercase();
            if !REQUIRED_KEYS.contains(&key.as_str()) && !OPTIONAL_KEYS.contains(&key.as_str()) {
                return Err(CliError::usage(format!("config line {}: unknown key `{key}`", k + 1)));
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(CliError::usage(format!("config line {}: duplicate key `{key}`", k + 1)));
            }
        }
        let missing: Vec<&str> = REQUIRED_KEYS
            .iter()
            .copied()
            .filter(|k| !entries.contains_key(*k))
            .collect();
        if !missing.is_empty() {
            return Err(CliError::usage(format!("config is missing required keys: {}", missing.join(", "))));
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn value<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| CliError::usage(format!("config key `{key}`: cannot parse `{v}`")))
            })
            .transpose()
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.value(key)?
            .ok_or_else(|| CliError::usage(format!("config is missing required keys: {key}")))
    }

    /// Output path for the summary CSV, if configured.
    pub fn out(&self) -> Option<&str> {
        self.get("out")
    }

    pub fn cell(&self) -> Result<McCellConfig, CliError> {
        let n: usize = self.required("n")?;
        let t: usize = self.required("t")?;
        let dgp_key = self.get("dgp").unwrap_or_default();
        let dgp = if dgp_key.eq_ignore_ascii_case("counterexample") {
            DgpChoice::Counterexample { n, t }
        } else {
            let id: u8 = dgp_key
                .parse()
                .map_err(|_| CliError::usage(format!("config key `dgp`: `{dgp_key}` is not one of 1, 2, 3, 4, counterexample")))?;
            let mut spec = DgpSpec::preset(id, n, t, self.value("pi")?.unwrap_or(0.0))?;
            if let Some(v) = self.value("kappa")? {
                spec.kappa = v;
            }
            if let Some(v) = self.value("rho")? {
                spec.rho = v;
            }
            if let Some(v) = self.value("alpha")? {
                spec.alpha = v;
            }
            if let Some(v) = self.value("beta0")? {
                spec.beta0 = v;
            }
            if let Some(v) = self.value("burn_in")? {
                spec.burn_in = v;
            }
            if let Some(v) = self.get("location_family") {
                spec.location_family = match v.to_ascii_uppercase().as_str() {
                    "LFM" => LocationFamily::Lfm,
                    "NLFM" => LocationFamily::Nlfm,
                    _ => return Err(CliError::usage(format!("config key `location_family`: `{v}` is not LFM or NLFM"))),
                };
            }
            spec.validate()?;
            DgpChoice::LocationScale { id, spec }
        };
        let estimators = self
            .get("estimators")
            .unwrap_or_default()
            .split(',')
            .map(|s| s.trim().parse::<EstimatorTag>())
            .collect::<panelfactor::Result<Vec<_>>>()?;
        let rank = match self.get("rank") {
            None => RankChoice::RuleDefault,
            Some(v) if v.eq_ignore_ascii_case("rule") => RankChoice::RuleDefault,
            Some(_) => RankChoice::Explicit(self.required("rank")?),
        };
        let estimand = match self.get("estimand") {
            None => EstimandMode::PaperAnalytic,
            Some(v) => v.parse()?,
        };
        let mut ife = IfeOptions::default();
        if let Some(v) = self.value("ife_tol")? {
            ife.tolerance = v;
        }
        if let Some(v) = self.value("ife_max_iter")? {
            ife.max_iterations = v;
        }
        let twgfe = TwgfeOptions::new(
            self.value("twgfe_g")?.unwrap_or(1),
            self.value("twgfe_c")?.unwrap_or(1),
        );
        let cfg = McCellConfig {
            dgp,
            estimators,
            replications: self.required("reps")?,
            seed: SeedSpec::new(self.required("seed")?),
            rank,
            estimand,
            ife,
            twgfe,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = "# cell\ndgp = 3\nn = 10\nt = 8\npi = 0.5 # mixed\nreps = 4\nseed = 9\nestimators = IFE, pc_x\nrank = 2\nestimand = OracleNT\n";

    #[test]
    fn parses_a_full_config() {
        let cfg = CliConfig::parse(FULL).unwrap().cell().unwrap();
        assert_eq!(cfg.replications, 4);
        assert_eq!(cfg.rank, RankChoice::Explicit(2));
        assert_eq!(cfg.estimators, vec![EstimatorTag::Ife, EstimatorTag::PcX]);
        assert_eq!(cfg.estimand, EstimandMode::OracleNT);
        assert_eq!(cfg.dgp, DgpChoice::preset(3, 10, 8, 0.5).unwrap());
    }

    #[test]
    fn reports_every_missing_key() {
        let err = CliConfig::parse("dgp = 1\nn = 5\n").unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.ends_with("t, reps, seed, estimators"), "{}", err.message);
    }

    #[test]
    fn rejects_unknown_keys() {
        let err = CliConfig::parse(&format!("{FULL}colour = blue\n")).unwrap_err();
        assert!(err.message.contains("unknown key `colour`"));
    }

    #[test]
    fn counterexample_ignores_design_keys() {
        let text = "dgp = counterexample\nn = 6\nt = 5\nreps = 2\nseed = 1\nestimators = twfe\n";
        let cfg = CliConfig::parse(text).unwrap().cell().unwrap();
        assert_eq!(cfg.dgp, DgpChoice::Counterexample { n: 6, t: 5 });
    }
}
