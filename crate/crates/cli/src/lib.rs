//! Command-line front end: tables, curves, constrained solutions,
//! simulation and the verification suite.

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod output;

use config::{DistortionConfig, Format, Loader, Resolved, SourceConfig, StrategyConfig};

#[derive(Debug)]
pub enum Failure {
    /// Invalid configuration or arguments; exit code 2.
    Config(String),
    /// The verification suite ran and found disagreements; exit code 3.
    Verification(String),
    /// Anything else; exit code 1.
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Verification(_) => 3,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Verification(m) => write!(f, "verification failed: {m}"),
            Failure::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<dtfn_core::Error> for Failure {
    fn from(e: dtfn_core::Error) -> Self {
        match e {
            dtfn_core::Error::Domain(m) => Failure::Config(m),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dtfn",
    version,
    about = "Distortion-transmission trade-off for remote estimation of Markov sources"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// birth-death, banded:P0,P1,..., or geometric:P0,RATIO
    #[arg(long, global = true)]
    pub source: Option<String>,

    /// Birth-death jump probability.
    #[arg(long, global = true)]
    pub p: Option<f64>,

    /// absolute, hamming, power:R, or table:D0,D1,...
    #[arg(long, global = true)]
    pub distortion: Option<String>,

    /// Discount factor(s); 1 selects the long-term average.
    #[arg(long, global = true, value_delimiter = ',')]
    pub beta: Option<Vec<f64>>,

    #[arg(long, global = true)]
    pub alpha: Option<f64>,

    #[arg(long, global = true)]
    pub lambda: Option<f64>,

    #[arg(long, global = true)]
    pub k_min: Option<usize>,

    #[arg(long, global = true)]
    pub k_max: Option<usize>,

    #[arg(long, global = true)]
    pub horizon: Option<u64>,

    #[arg(long, global = true)]
    pub replicates: Option<usize>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// threshold:K, bernoulli[:K:Q], steering[:K:TARGET], time-sharing[:K:A/B]
    #[arg(long, global = true)]
    pub strategy: Option<String>,

    /// Write the first replicate's trajectory as CSV.
    #[arg(long, global = true, value_name = "PATH")]
    pub trajectory: Option<PathBuf>,

    /// Decimals in text and CSV tables.
    #[arg(long, global = true)]
    pub precision: Option<usize>,

    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Shift one verification cell: SUITE:INDEX:DELTA (testing hook).
    #[arg(long, global = true, hide = true)]
    pub perturb: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// D, N and lambda for a range of thresholds.
    Table,
    /// Vertices and samples of D*(alpha) and C*(lambda).
    Curve,
    /// Optimal strategy under a transmission constraint.
    Solve,
    /// Optimal threshold and cost for a multiplier.
    Lagrange,
    /// Monte Carlo simulation of the closed loop.
    Simulate,
    /// Cross-check analytic results against the DP oracle.
    Verify,
}

fn floats(s: &str, flag: &'static str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|e| Failure::Config(format!("{flag}: bad number {x:?}: {e}")))
        })
        .collect()
}

fn parse_source(s: &str) -> Result<SourceConfig, Failure> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    match kind {
        "birth-death" if rest.is_empty() => Ok(SourceConfig::BirthDeath { p: 0.3 }),
        "birth-death" => Ok(SourceConfig::BirthDeath {
            p: floats(rest, "--source")?[0],
        }),
        "banded" => Ok(SourceConfig::Banded {
            tail: floats(rest, "--source")?,
        }),
        "geometric" => match floats(rest, "--source")?[..] {
            [p0, ratio] => Ok(SourceConfig::Geometric { p0, ratio }),
            _ => Err(Failure::Config("--source: geometric needs P0,RATIO".into())),
        },
        _ => Err(Failure::Config(format!("--source: unknown source {s:?}"))),
    }
}

fn parse_distortion(s: &str) -> Result<DistortionConfig, Failure> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    match kind {
        "absolute" => Ok(DistortionConfig::Absolute),
        "hamming" => Ok(DistortionConfig::Hamming),
        "power" => Ok(DistortionConfig::Power {
            r: floats(rest, "--distortion")?[0],
        }),
        "table" => Ok(DistortionConfig::Table {
            values: floats(rest, "--distortion")?,
        }),
        _ => Err(Failure::Config(format!("--distortion: unknown distortion {s:?}"))),
    }
}

fn parse_strategy(s: &str) -> Result<StrategyConfig, Failure> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Failure::Config(format!("--strategy: cannot parse {s:?}"));
    let int = |x: &str| x.parse::<usize>().map_err(|_| bad());
    let num = |x: &str| x.parse::<f64>().map_err(|_| bad());
    match parts[..] {
        ["threshold", k] => Ok(StrategyConfig::Threshold { k: int(k)? }),
        ["bernoulli"] => Ok(StrategyConfig::Bernoulli { k: None, q: None }),
        ["bernoulli", k, q] => Ok(StrategyConfig::Bernoulli {
            k: Some(int(k)?),
            q: Some(num(q)?),
        }),
        ["steering"] => Ok(StrategyConfig::Steering { k: None, target: None }),
        ["steering", k, t] => Ok(StrategyConfig::Steering {
            k: Some(int(k)?),
            target: Some(num(t)?),
        }),
        ["time-sharing"] => Ok(StrategyConfig::TimeSharing {
            k: None,
            schedule: None,
            zero_visit_cycles: false,
        }),
        ["time-sharing", k, ab] => {
            let (a, b) = ab.split_once('/').ok_or_else(bad)?;
            Ok(StrategyConfig::TimeSharing {
                k: Some(int(k)?),
                schedule: Some(vec![(a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?)]),
                zero_visit_cycles: false,
            })
        }
        _ => Err(bad()),
    }
}

fn parse_perturb(s: &str) -> Result<dtfn_core::verify::Perturbation, Failure> {
    let bad = || Failure::Config(format!("--perturb: expected SUITE:INDEX:DELTA, got {s:?}"));
    let mut it = s.splitn(3, ':');
    let (Some(suite), Some(cell), Some(delta)) = (it.next(), it.next(), it.next()) else {
        return Err(bad());
    };
    Ok(dtfn_core::verify::Perturbation {
        suite: suite.to_string(),
        cell: cell.parse().map_err(|_| bad())?,
        delta: delta.parse().map_err(|_| bad())?,
    })
}

/// Merge the config file and flags into a validated configuration.
pub fn load(cli: &Cli) -> Result<Resolved, Failure> {
    let mut l = match &cli.config {
        Some(path) => Loader::from_file(path)?,
        None => Loader::default(),
    };
    macro_rules! set {
        ($field:ident, $key:literal, $flag:literal, $val:expr) => {
            if let Some(v) = $val {
                l.config.$field = v;
                l.set_by_flag($key, $flag);
            }
        };
    }
    set!(
        source,
        "source",
        "--source",
        cli.source.as_deref().map(parse_source).transpose()?
    );
    if let Some(p) = cli.p {
        match &mut l.config.source {
            SourceConfig::BirthDeath { p: q } => *q = p,
            _ => return Err(Failure::Config("--p: applies only to the birth-death source".into())),
        }
        l.set_by_flag("source.p", "--p");
    }
    set!(
        distortion,
        "distortion",
        "--distortion",
        cli.distortion.as_deref().map(parse_distortion).transpose()?
    );
    set!(beta, "beta", "--beta", cli.beta.clone());
    set!(alpha, "alpha", "--alpha", cli.alpha.map(Some));
    set!(lambda, "lambda", "--lambda", cli.lambda.map(Some));
    set!(k_min, "k_min", "--k-min", cli.k_min);
    set!(k_max, "k_max", "--k-max", cli.k_max.map(Some));
    set!(horizon, "horizon", "--horizon", cli.horizon);
    set!(replicates, "replicates", "--replicates", cli.replicates);
    set!(seed, "seed", "--seed", cli.seed);
    set!(
        strategy,
        "strategy",
        "--strategy",
        cli.strategy.as_deref().map(parse_strategy).transpose()?
    );
    set!(
        trajectory,
        "trajectory",
        "--trajectory",
        cli.trajectory.clone().map(Some)
    );
    set!(precision, "precision", "--precision", cli.precision);
    set!(format, "format", "--format", cli.format);
    set!(out, "out", "--out", cli.out.clone().map(Some));
    set!(
        perturb,
        "perturb",
        "--perturb",
        cli.perturb.as_deref().map(parse_perturb).transpose()?.map(Some)
    );
    l.resolve()
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let resolved = load(cli)?;
    let doc = commands::dispatch(cli.command, &resolved)?;
    output::emit(&resolved, &doc)?;
    match doc.failed {
        Some(msg) => Err(Failure::Verification(msg)),
        None => Ok(()),
    }
}
