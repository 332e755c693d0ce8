//! Run configuration: TOML file, command-line overrides, validation.

use std::path::{Path, PathBuf};

use dtfn_core::verify::{Perturbation, VerifyGrid};
use dtfn_core::{check_assumptions, AssumptionReport, DistortionSpec, MarkovSource};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    #[default]
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceConfig {
    BirthDeath { p: f64 },
    Banded { tail: Vec<f64> },
    Geometric { p0: f64, ratio: f64 },
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self::BirthDeath { p: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DistortionConfig {
    #[default]
    Absolute,
    Hamming,
    Power {
        r: f64,
    },
    Table {
        values: Vec<f64>,
    },
}

/// Strategy for `simulate`. Fields left out are taken from the constrained
/// solution at `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StrategyConfig {
    Threshold {
        k: usize,
    },
    /// Per-stage randomization at `|e| = k*`.
    Bernoulli {
        #[serde(default)]
        k: Option<usize>,
        #[serde(default)]
        q: Option<f64>,
    },
    Steering {
        #[serde(default)]
        k: Option<usize>,
        #[serde(default)]
        target: Option<f64>,
    },
    TimeSharing {
        #[serde(default)]
        k: Option<usize>,
        #[serde(default)]
        schedule: Option<Vec<(u64, u64)>>,
        #[serde(default)]
        zero_visit_cycles: bool,
    },
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self::Threshold { k: 1 }
    }
}

fn one_or_many<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Betas {
        One(f64),
        Many(Vec<f64>),
    }
    Ok(match Betas::deserialize(de)? {
        Betas::One(b) => vec![b],
        Betas::Many(v) => v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub source: SourceConfig,
    pub distortion: DistortionConfig,
    #[serde(deserialize_with = "one_or_many")]
    pub beta: Vec<f64>,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub k_min: usize,
    pub k_max: Option<usize>,
    pub horizon: u64,
    pub replicates: usize,
    pub seed: u64,
    pub strategy: StrategyConfig,
    /// CSV dump of the first replicate's trajectory.
    pub trajectory: Option<PathBuf>,
    pub trajectory_steps: u64,
    /// Dense samples per curve.
    pub samples: usize,
    /// Decimals in text and CSV tables.
    pub precision: usize,
    pub format: Format,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub verify: VerifyGrid,
    pub perturb: Option<Perturbation>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            source: SourceConfig::default(),
            distortion: DistortionConfig::default(),
            beta: vec![0.9],
            alpha: None,
            lambda: None,
            k_min: 0,
            k_max: None,
            horizon: 100_000,
            replicates: 64,
            seed: 0,
            strategy: StrategyConfig::default(),
            trajectory: None,
            trajectory_steps: 1000,
            samples: 200,
            precision: 4,
            format: Format::Text,
            out: None,
            verify: VerifyGrid::default(),
            perturb: None,
        }
    }
}

/// Where a setting came from, for error messages.
#[derive(Debug, Clone)]
struct Origin {
    path: PathBuf,
    text: String,
    doc: toml_edit::ImDocument<String>,
}

impl Origin {
    fn line_col(&self, offset: usize) -> (usize, usize) {
        let before = &self.text[..offset.min(self.text.len())];
        let line = before.matches('\n').count() + 1;
        let col = before.rfind('\n').map(|i| offset - i).unwrap_or(offset + 1);
        (line, col)
    }

    /// Span of the value at `path`, or of the nearest enclosing key.
    fn locate(&self, path: &[&str]) -> Option<(usize, usize)> {
        let mut item = self.doc.as_item();
        let mut found = None;
        for key in path {
            let Some(next) = item.get(key) else { break };
            if let Some(span) = next.span() {
                found = Some(span.start);
            } else if let Some(kv) = item.as_table_like().and_then(|t| t.get_key_value(key)) {
                found = kv.0.span().map(|s| s.start).or(found);
            }
            item = next;
        }
        found.map(|o| self.line_col(o))
    }
}

/// A validated configuration with its source model and distortion.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub source: MarkovSource,
    pub distortion: DistortionSpec,
    pub assumptions: AssumptionReport,
    pub hash: String,
}

/// Builder that tracks which keys were set on the command line.
#[derive(Debug, Default)]
pub struct Loader {
    pub config: RunConfig,
    origin: Option<Origin>,
    flags: Vec<(String, &'static str)>,
}

impl Loader {
    pub fn from_file(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str(&text, path)
    }

    pub fn from_str(text: &str, path: &Path) -> Result<Self, Failure> {
        let config: RunConfig = toml::from_str(text)
            .map_err(|e| Failure::Config(format!("{}: {}", path.display(), e.to_string().trim_end())))?;
        let doc = toml_edit::ImDocument::parse(text.to_string())
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        Ok(Self {
            config,
            origin: Some(Origin {
                path: path.to_path_buf(),
                text: text.to_string(),
                doc,
            }),
            flags: Vec::new(),
        })
    }

    /// Record that `key` was overridden by `flag`.
    pub fn set_by_flag(&mut self, key: &str, flag: &'static str) {
        self.flags.push((key.to_string(), flag));
    }

    fn error(&self, path: &[&str], msg: impl std::fmt::Display) -> Failure {
        let dotted = path.join(".");
        if let Some((_, flag)) = self.flags.iter().rev().find(|(k, _)| dotted.starts_with(k.as_str())) {
            return Failure::Config(format!("{flag}: {msg}"));
        }
        match &self.origin {
            Some(o) => match o.locate(path) {
                Some((line, col)) => Failure::Config(format!("{}:{line}:{col}: {dotted}: {msg}", o.path.display())),
                None => Failure::Config(format!("{}: {dotted}: {msg}", o.path.display())),
            },
            None => Failure::Config(format!("{dotted}: {msg}")),
        }
    }

    pub fn resolve(self) -> Result<Resolved, Failure> {
        let c = &self.config;
        let source = match &c.source {
            SourceConfig::BirthDeath { p } => {
                MarkovSource::birth_death(*p).map_err(|e| self.error(&["source", "p"], e))?
            }
            SourceConfig::Banded { tail } => {
                MarkovSource::banded(tail).map_err(|e| self.error(&["source", "tail"], e))?
            }
            SourceConfig::Geometric { p0, ratio } => {
                MarkovSource::geometric(*p0, *ratio).map_err(|e| self.error(&["source"], e))?
            }
        };
        let distortion = match &c.distortion {
            DistortionConfig::Absolute => DistortionSpec::Absolute,
            DistortionConfig::Hamming => DistortionSpec::Hamming,
            DistortionConfig::Power { r } => {
                DistortionSpec::power(*r).map_err(|e| self.error(&["distortion", "r"], e))?
            }
            DistortionConfig::Table { values } => {
                DistortionSpec::table(values.clone()).map_err(|e| self.error(&["distortion", "values"], e))?
            }
        };
        if c.beta.is_empty() {
            return Err(self.error(&["beta"], "at least one discount factor is required"));
        }
        if let Some(b) = c.beta.iter().find(|b| !(**b > 0.0 && **b <= 1.0)) {
            return Err(self.error(&["beta"], format!("beta must lie in (0, 1], got {b}")));
        }
        if let Some(a) = c.alpha {
            if !(a > 0.0 && a < 1.0) {
                return Err(self.error(&["alpha"], format!("alpha must lie in (0, 1), got {a}")));
            }
        }
        if let Some(l) = c.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(self.error(&["lambda"], format!("lambda must be finite and non-negative, got {l}")));
            }
        }
        if let Some(k) = c.k_max {
            if k < c.k_min {
                return Err(self.error(&["k_max"], format!("k_max = {k} is below k_min = {}", c.k_min)));
            }
        }
        if c.horizon == 0 {
            return Err(self.error(&["horizon"], "horizon must be positive"));
        }
        if c.replicates == 0 {
            return Err(self.error(&["replicates"], "replicate count must be positive"));
        }
        if c.precision > 17 {
            return Err(self.error(&["precision"], "at most 17 decimals"));
        }
        match &c.strategy {
            StrategyConfig::Bernoulli { q: Some(x), .. } | StrategyConfig::Steering { target: Some(x), .. }
                if !(0.0..=1.0).contains(x) =>
            {
                return Err(self.error(&["strategy"], format!("probability must lie in [0, 1], got {x}")));
            }
            StrategyConfig::TimeSharing { schedule: Some(s), .. } if s.iter().all(|&(a, b)| a + b == 0) => {
                return Err(self.error(&["strategy", "schedule"], "schedule has no cycles"));
            }
            _ => {}
        }
        let radius = source.band().unwrap_or(0).max(20);
        let assumptions = check_assumptions(&source, &distortion, radius, c.lambda.unwrap_or(1.0));
        let hash = config_hash(c);
        Ok(Resolved {
            config: self.config,
            source,
            distortion,
            assumptions,
            hash,
        })
    }
}

/// First 16 hex digits of the SHA-256 of the canonical JSON form.
/// The output path is not part of the hash.
pub fn config_hash(c: &RunConfig) -> String {
    let json = serde_json::to_vec(c).expect("config serializes");
    hex::encode(&Sha256::digest(&json)[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<Resolved, Failure> {
        Loader::from_str(text, Path::new("run.toml"))?.resolve()
    }

    #[test]
    fn defaults() {
        let r = load("").unwrap();
        assert_eq!(r.config.beta, vec![0.9]);
        assert_eq!(r.source.birth_death_p(), Some(0.3));
        assert_eq!(r.hash.len(), 16);
    }

    #[test]
    fn full_document() {
        let r = load(
            r#"
beta = [0.9, 0.95, 1.0]
alpha = 0.5
source = { kind = "banded", tail = [0.4, 0.2, 0.1] }
distortion = { kind = "power", r = 2.0 }
strategy = { kind = "time-sharing", schedule = [[14, 1]] }
[verify]
betas = [0.9]
"#,
        )
        .unwrap();
        assert_eq!(r.config.beta.len(), 3);
        assert_eq!(r.source.band(), Some(2));
        assert_eq!(r.config.verify.betas, vec![0.9]);
        assert_eq!(r.config.verify.k_max, 20);
    }

    #[test]
    fn validation_error_has_line() {
        let err = load("beta = 0.9\n\nsource = { kind = \"birth-death\", p = 0.6 }\n").unwrap_err();
        let Failure::Config(msg) = err else { panic!() };
        assert!(msg.starts_with("run.toml:3:"), "{msg}");
        assert!(msg.contains("source.p"), "{msg}");

        let err = load("[source]\nkind = \"birth-death\"\np = 0.6\n").unwrap_err();
        let Failure::Config(msg) = err else { panic!() };
        assert!(msg.starts_with("run.toml:3:"), "{msg}");
    }

    #[test]
    fn parse_error_has_line() {
        let err = load("beta = 0.9\nbogus = 1\n").unwrap_err();
        let Failure::Config(msg) = err else { panic!() };
        assert!(msg.contains("line 2"), "{msg}");
        let err = load("alpha = 1.5\n").unwrap_err();
        let Failure::Config(msg) = err else { panic!() };
        assert!(msg.starts_with("run.toml:1:"), "{msg}");
    }

    #[test]
    fn flag_errors_name_the_flag() {
        let mut l = Loader::default();
        l.config.alpha = Some(2.0);
        l.set_by_flag("alpha", "--alpha");
        let Err(Failure::Config(msg)) = l.resolve() else {
            panic!()
        };
        assert!(msg.starts_with("--alpha:"), "{msg}");
    }

    #[test]
    fn hash_ignores_output_path() {
        let mut a = RunConfig::default();
        let h = config_hash(&a);
        a.out = Some("x.csv".into());
        assert_eq!(config_hash(&a), h);
        a.seed = 5;
        assert_ne!(config_hash(&a), h);
    }
}
