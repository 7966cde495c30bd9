//! Flat `key = value` run configuration with flag overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use vix_signals::backtest::{BacktestConfig, FoldConfiguration};
use vix_signals::dynamics::EconomicParams;
use vix_signals::network::{
    parse_hidden, AdamConfig, Architecture, LossKind, OutputActivation, TrainConfig,
};
use vix_signals::signal::CostModel;
use vix_signals::utility::{UtilityKind, UtilitySpec};

use crate::error::CliError;

pub struct Setting {
    pub key: &'static str,
    pub default: &'static str,
    /// Part of the config hash.
    pub hashed: bool,
    /// A file path, resolved against the config file's directory.
    pub path: bool,
    pub help: &'static str,
}

const fn s(
    key: &'static str,
    default: &'static str,
    hashed: bool,
    path: bool,
    help: &'static str,
) -> Setting {
    Setting {
        key,
        default,
        hashed,
        path,
        help,
    }
}

/// Every accepted key. An empty default means unset.
pub const SETTINGS: &[Setting] = &[
    s("futures", "", false, true, "futures settlements CSV"),
    s("vix", "", false, true, "spot index CSV"),
    s("calendar", "", false, true, "optional expiry calendar CSV"),
    s("seed", "", true, false, "master seed (required)"),
    s("r", "0", true, false, "annual risk-free rate"),
    s(
        "dt",
        "0.003968253968253968",
        true,
        false,
        "year fraction per day",
    ),
    s(
        "utility",
        "piecewise_linear",
        true,
        false,
        "piecewise_linear | exponential",
    ),
    s(
        "gamma",
        "",
        true,
        false,
        "risk aversion (default 1.3 or 3 by utility)",
    ),
    s(
        "loss",
        "",
        true,
        false,
        "quadratic | certainty_equivalent (default by utility)",
    ),
    s("n_states", "100000", true, false, "training states N"),
    s("m_inner", "300", true, false, "scenarios per state M"),
    s("epochs", "15", true, false, "training epochs"),
    s("batch_size", "160", true, false, "mini-batch size"),
    s("learning_rate", "0.001", true, false, "Adam step size"),
    s(
        "hidden",
        "550x5",
        true,
        false,
        "hidden widths, `550x5` or `64,32`",
    ),
    s("alpha", "0.1", true, false, "PReLU negative slope"),
    s(
        "output_activation",
        "prelu",
        true,
        false,
        "prelu | tanh | linear",
    ),
    s(
        "epsilon_bps",
        "0",
        true,
        false,
        "proportional cost in basis points",
    ),
    s(
        "half_tick",
        "0.025",
        true,
        false,
        "index points per contract per side",
    ),
    s(
        "multiplier",
        "1000",
        true,
        false,
        "currency per index point",
    ),
    s(
        "notional_per_unit",
        "1",
        true,
        false,
        "portfolio unit in multiples of the multiplier",
    ),
    s("folds", "10", true, false, "number of folds k"),
    s(
        "fold_config",
        "contiguous",
        true,
        false,
        "contiguous | non-adjacent",
    ),
    s(
        "integer_contracts",
        "false",
        true,
        false,
        "round positions to whole contracts",
    ),
    s(
        "mode_min_samples",
        "100",
        true,
        false,
        "minimum states for the mode estimate",
    ),
    s(
        "test_fold",
        "",
        true,
        false,
        "fit/train on the training folds of this fold",
    ),
    s("out", ".", false, true, "output directory"),
    s("jobs", "0", false, false, "worker threads (0 = all cores)"),
    s(
        "model",
        "",
        false,
        true,
        "model JSON (default <out>/model.json)",
    ),
    s(
        "network",
        "",
        false,
        true,
        "network JSON (default <out>/network.json)",
    ),
    s(
        "date",
        "",
        false,
        false,
        "signal date (default last usable date)",
    ),
    s(
        "value",
        "100",
        false,
        false,
        "portfolio value P for the signal",
    ),
    s(
        "action",
        "",
        false,
        false,
        "force the signal action, e.g. (0,0)",
    ),
    s("horizon", "252", false, false, "simulated days per path"),
    s("paths", "100", false, false, "simulated paths"),
    s(
        "benchmark",
        "",
        false,
        true,
        "reference return series CSV for bench",
    ),
    s(
        "fixture_start",
        "2019-01-02",
        false,
        false,
        "first fixture date",
    ),
    s(
        "fixture_days",
        "200",
        false,
        false,
        "fixture length in weekdays",
    ),
    s("fixture_seed", "20190102", false, false, "fixture seed"),
    s(
        "fixture_kind",
        "standard",
        false,
        false,
        "standard | front_contango",
    ),
];

fn setting(key: &str) -> Option<&'static Setting> {
    SETTINGS.iter().find(|s| s.key == key)
}

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "{}:{}: expected key = value",
                    path.display(),
                    i + 1
                ))
            })?;
            cfg.set_relative(k.trim(), v.trim(), base)?;
        }
        Ok(cfg)
    }

    /// Set from a flag: paths stay relative to the working directory.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        self.set_relative(key, value, Path::new(""))
    }

    fn set_relative(&mut self, key: &str, value: &str, base: &Path) -> Result<(), CliError> {
        let key = key.replace('-', "_");
        let st = setting(&key).ok_or_else(|| CliError::Config(format!("unknown key {key:?}")))?;
        let value = if st.path && !value.is_empty() {
            base.join(value).to_string_lossy().into_owned()
        } else {
            value.to_string()
        };
        self.values.insert(st.key, value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        let st = setting(key).expect("known key");
        let v = self
            .values
            .get(st.key)
            .map(String::as_str)
            .unwrap_or(st.default);
        (!v.is_empty()).then_some(v)
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::Config(format!("bad value {v:?} for {key}: {e}")))
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.parse(key)?
            .ok_or_else(|| CliError::Config(format!("{key} is required")))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, CliError> {
        let p = self
            .path(key)
            .ok_or_else(|| CliError::Config(format!("{key} is required")))?;
        if !p.exists() {
            return Err(CliError::Config(format!(
                "{key} file {} does not exist",
                p.display()
            )));
        }
        Ok(p)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.path("out").unwrap_or_else(|| PathBuf::from("."))
    }

    /// Artifact path from `key`, or `<out>/<name>`.
    pub fn artifact(&self, key: &str, name: &str) -> PathBuf {
        self.path(key).unwrap_or_else(|| self.out_dir().join(name))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.require("seed")
    }

    pub fn econ(&self) -> Result<EconomicParams, CliError> {
        Ok(EconomicParams::new(
            self.require("r")?,
            self.require("dt")?,
        )?)
    }

    pub fn utility(&self) -> Result<UtilitySpec, CliError> {
        let kind: UtilityKind = self.require("utility")?;
        let gamma = self
            .parse("gamma")?
            .unwrap_or(UtilitySpec::default_for(kind).gamma);
        Ok(UtilitySpec::new(kind, gamma)?)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let utility = self.utility()?;
        let architecture = Architecture {
            hidden: parse_hidden(self.get("hidden").unwrap_or_default())?,
            alpha: self.require("alpha")?,
            output_activation: self.require::<OutputActivation>("output_activation")?,
            ..Architecture::default()
        };
        let cfg = TrainConfig {
            n_states: self.require("n_states")?,
            m_inner: self.require("m_inner")?,
            epochs: self.require("epochs")?,
            batch_size: self.require("batch_size")?,
            optimizer: AdamConfig {
                learning_rate: self.require("learning_rate")?,
                ..AdamConfig::default()
            },
            seed: self.seed()?,
            loss_kind: self
                .parse::<LossKind>("loss")?
                .unwrap_or(LossKind::default_for(utility.kind)),
            architecture,
        };
        cfg.validate(&utility)?;
        Ok(cfg)
    }

    pub fn cost_model(&self) -> Result<CostModel, CliError> {
        let cm = CostModel {
            epsilon_bps: self.require("epsilon_bps")?,
            half_tick: self.require("half_tick")?,
            multiplier: self.require("multiplier")?,
            notional_per_unit: self.require("notional_per_unit")?,
        };
        cm.validate()?;
        Ok(cm)
    }

    pub fn backtest_config(&self) -> Result<BacktestConfig, CliError> {
        let mut cfg = BacktestConfig::new(self.utility()?, self.train_config()?, self.seed()?);
        cfg.k = self.require("folds")?;
        cfg.configuration = self.require::<FoldConfiguration>("fold_config")?;
        cfg.costs = self.cost_model()?;
        cfg.econ = self.econ()?;
        cfg.integer_contracts = self.require("integer_contracts")?;
        cfg.mode_min_samples = self.require("mode_min_samples")?;
        Ok(cfg)
    }

    /// Effective value of every key, defaults included.
    pub fn effective(&self) -> BTreeMap<&'static str, String> {
        SETTINGS
            .iter()
            .map(|st| (st.key, self.get(st.key).unwrap_or("").to_string()))
            .collect()
    }

    /// SHA-256 of the file contents of the data inputs, by key.
    pub fn data_fingerprints(&self) -> Result<BTreeMap<&'static str, String>, CliError> {
        let mut out = BTreeMap::new();
        for key in ["futures", "vix", "calendar", "benchmark"] {
            if let Some(p) = self.path(key) {
                if !p.exists() {
                    return Err(CliError::Config(format!(
                        "{key} file {} does not exist",
                        p.display()
                    )));
                }
                let bytes = std::fs::read(&p).map_err(|e| CliError::io(&p, e))?;
                out.insert(key, format!("{:x}", Sha256::digest(&bytes)));
            }
        }
        Ok(out)
    }

    /// Hash of the result-determining keys and the market data contents.
    /// Output locations, thread counts and per-invocation inputs are left
    /// out so the same run reproduces the same hash anywhere.
    pub fn hash(&self) -> Result<String, CliError> {
        let mut h = Sha256::new();
        for st in SETTINGS.iter().filter(|s| s.hashed) {
            h.update(format!("{}={}\n", st.key, self.get(st.key).unwrap_or("")));
        }
        for (k, v) in self.data_fingerprints()? {
            if k != "benchmark" {
                h.update(format!("data.{k}={v}\n"));
            }
        }
        Ok(format!("{:x}", h.finalize()))
    }
}
