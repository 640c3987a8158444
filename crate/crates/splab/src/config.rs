//! Flat key-value experiment configuration, parsed from a text file.
//! Unknown keys are rejected; a seed is mandatory so no run depends on
//! implicit entropy.

use std::collections::BTreeMap;

use crate::bootstrap::MultiplierLaw;
use crate::error::{Error, Result};
use crate::law::KlLaw;
use crate::model::EigenProfile;
use crate::operator::IndexBlock;
use crate::spectral::Truncation;

/// Experiment selector, the CLI subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Quantities,
    PerturbationCheck,
    CltDistance,
    BootstrapCoverage,
    ModelRelations,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Quantities => "quantities",
            ExperimentKind::PerturbationCheck => "perturbation-check",
            ExperimentKind::CltDistance => "clt-distance",
            ExperimentKind::BootstrapCoverage => "bootstrap-coverage",
            ExperimentKind::ModelRelations => "model-relations",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "quantities" => ExperimentKind::Quantities,
            "perturbation-check" => ExperimentKind::PerturbationCheck,
            "clt-distance" => ExperimentKind::CltDistance,
            "bootstrap-coverage" => ExperimentKind::BootstrapCoverage,
            "model-relations" => ExperimentKind::ModelRelations,
            other => return Err(Error::config(format!("unknown experiment `{other}`"))),
        })
    }
}

/// Output format for reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::config(format!("unknown format `{other}`"))),
        }
    }
}

/// All recognized configuration keys.
const KNOWN_KEYS: &[&str] = &[
    "experiment",
    "profile",
    "d",
    "a",
    "spikes",
    "g",
    "spread",
    "gap_fraction",
    "balance",
    "j1",
    "j2",
    "i2",
    "j_grid",
    "law",
    "nu",
    "law_alpha",
    "multiplier",
    "n",
    "n_grid",
    "b",
    "mc_runs",
    "limit_draws",
    "sigma_draws",
    "alpha",
    "p",
    "s",
    "q",
    "seed",
    "instances",
    "d_max",
    "standardized",
    "out",
    "format",
];

/// Parsed experiment configuration. Field presence is validated per
/// experiment by the runners.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    raw: BTreeMap<String, String>,
}

impl ExperimentConfig {
    /// Parse `key = value` lines; `#` starts a comment, blank lines ignored.
    pub fn from_str_with_experiment(text: &str, experiment: ExperimentKind) -> Result<Self> {
        let mut raw = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::config(format!(
                    "line {}: unknown key `{key}`",
                    lineno + 1
                )));
            }
            if raw.insert(key.clone(), value).is_some() {
                return Err(Error::config(format!("duplicate key `{key}`")));
            }
        }
        if let Some(exp) = raw.get("experiment") {
            let from_file = ExperimentKind::parse(exp)?;
            if from_file != experiment {
                return Err(Error::config(format!(
                    "config names experiment `{}` but `{}` was requested",
                    from_file.name(),
                    experiment.name()
                )));
            }
        }
        let cfg = Self { experiment, raw };
        cfg.require_seed()?;
        if let Some(n) = cfg.get_usize("n")? {
            if n < 2 {
                return Err(Error::config("n must be at least 2"));
            }
        }
        for n in cfg.get_usize_list("n_grid")?.unwrap_or_default() {
            if n < 2 {
                return Err(Error::config("every n in n_grid must be at least 2"));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path, experiment: ExperimentKind) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_with_experiment(&text, experiment)
    }

    /// Override a key (CLI flags take precedence over the file).
    pub fn set(&mut self, key: &str, value: String) {
        self.raw.insert(key.to_string(), value);
    }

    /// Echo of the effective configuration for the report.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = self.raw.clone();
        m.insert("experiment".into(), self.experiment.name().into());
        m
    }

    fn require_seed(&self) -> Result<u64> {
        self.get_u64("seed")?
            .ok_or_else(|| Error::config("a seed is required (no implicit entropy)"))
    }

    pub fn seed(&self) -> u64 {
        self.get_u64("seed")
            .ok()
            .flatten()
            .expect("validated at parse")
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.raw.get(key).map(|s| s.as_str())
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.get(key)
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|_| Error::config(format!("`{key}` must be an unsigned integer")))
            })
            .transpose()
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        Ok(self.get_u64(key)?.map(|v| v as usize))
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::config(format!("`{key}` must be a number")))
            })
            .transpose()
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|v| match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(Error::config(format!("`{key}` must be true or false"))),
            })
            .transpose()
    }

    pub fn get_usize_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|tok| {
                        tok.trim().parse::<usize>().map_err(|_| {
                            Error::config(format!("`{key}` must be a comma-separated integer list"))
                        })
                    })
                    .collect::<Result<Vec<usize>>>()
            })
            .transpose()
    }

    fn required<T>(&self, key: &str, v: Option<T>) -> Result<T> {
        v.ok_or_else(|| Error::config(format!("missing required key `{key}`")))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.get_usize(key)?.unwrap_or(default))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.get_f64(key)?.unwrap_or(default))
    }

    /// The eigenvalue profile described by the config.
    pub fn profile(&self) -> Result<EigenProfile> {
        let name = self.required("profile", self.get("profile"))?;
        let dim = self.required("d", self.get_usize("d")?)?;
        Ok(match name {
            "exp-decay" => EigenProfile::ExpDecay {
                rate: self.required("a", self.get_f64("a")?)?,
                dim,
            },
            "poly-decay" => EigenProfile::PolyDecay {
                rate: self.required("a", self.get_f64("a")?)?,
                dim,
            },
            "spiked" => EigenProfile::Spiked {
                spikes: self
                    .get_usize("spikes")?
                    .or(self.get_usize("j2")?)
                    .ok_or_else(|| Error::config("spiked profile needs `spikes` or `j2`"))?,
                gap: self.required("g", self.get_f64("g")?)?,
                spread: self.f64_or("spread", 1.0)?,
                dim,
            },
            "pervasive" => EigenProfile::Pervasive {
                spikes: self
                    .get_usize("spikes")?
                    .or(self.get_usize("j2")?)
                    .ok_or_else(|| Error::config("pervasive profile needs `spikes` or `j2`"))?,
                gap_fraction: self.f64_or("gap_fraction", 0.5)?,
                balance: self.f64_or("balance", 2.0)?,
                dim,
            },
            other => return Err(Error::config(format!("unknown profile `{other}`"))),
        })
    }

    pub fn law(&self) -> Result<KlLaw> {
        KlLaw::parse(
            self.get("law").unwrap_or("gaussian"),
            self.get_f64("nu")?,
            self.get_f64("law_alpha")?,
        )
    }

    pub fn multiplier(&self) -> Result<MultiplierLaw> {
        MultiplierLaw::parse(self.get("multiplier").unwrap_or("gaussian"))
    }

    pub fn block(&self) -> Result<IndexBlock> {
        let j1 = self.usize_or("j1", 1)?;
        let j2 = self.required("j2", self.get_usize("j2")?)?;
        IndexBlock::new(j1, j2)
    }

    pub fn truncation(&self) -> Result<Truncation> {
        Ok(match self.get_usize("i2")? {
            Some(i2) => Truncation::UpTo(i2),
            None => Truncation::Full,
        })
    }

    pub fn n_grid(&self) -> Result<Vec<usize>> {
        if let Some(grid) = self.get_usize_list("n_grid")? {
            if grid.is_empty() {
                return Err(Error::config("n_grid is empty"));
            }
            return Ok(grid);
        }
        if let Some(n) = self.get_usize("n")? {
            return Ok(vec![n]);
        }
        Err(Error::config("need `n` or `n_grid`"))
    }

    pub fn out_path(&self) -> Option<&str> {
        self.get("out")
    }

    pub fn format(&self) -> Result<OutputFormat> {
        self.get("format")
            .map_or(Ok(OutputFormat::Csv), OutputFormat::parse)
    }
}
