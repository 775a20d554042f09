//! Experiment runner behind the `pnum` command line.
//!
//! Every experiment reads a TOML config with a fixed schema, runs to
//! completion and produces a [`Table`]. Work fans out over `(method, seed)`
//! pairs with rayon; rows are assembled in configuration order, so output
//! never depends on scheduling.

pub mod evidence;
pub mod linsolve;
pub mod ode;
pub mod quad;
pub mod recycle;

use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::Error;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Numerical(Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl BenchError {
    /// 2 for config errors, 3 for numerical failures, 1 for i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::Numerical(_) => 3,
            BenchError::Io(_) => 1,
        }
    }
}

impl From<Error> for BenchError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(m) => BenchError::Io(m),
            Error::InvalidArgument(_)
            | Error::DimensionMismatch { .. }
            | Error::OutsideDomain { .. }
            | Error::UnsortedNodes
            | Error::DuplicateNode(_)
            | Error::StepMismatch { .. } => BenchError::Config(e.to_string()),
            other => BenchError::Numerical(other),
        }
    }
}

impl From<std::io::Error> for BenchError {
    fn from(e: std::io::Error) -> Self {
        BenchError::Io(e.to_string())
    }
}

pub type BenchResult<T> = std::result::Result<T, BenchError>;

pub(crate) fn config_error(msg: impl Into<String>) -> BenchError {
    BenchError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Quad,
    Evidence,
    Linsolve,
    Recycle,
    Ode,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Quad => "quad",
            Experiment::Evidence => "evidence",
            Experiment::Linsolve => "linsolve",
            Experiment::Recycle => "recycle",
            Experiment::Ode => "ode",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = BenchError;

    fn from_str(s: &str) -> BenchResult<Self> {
        match s {
            "quad" => Ok(Experiment::Quad),
            "evidence" => Ok(Experiment::Evidence),
            "linsolve" => Ok(Experiment::Linsolve),
            "recycle" => Ok(Experiment::Recycle),
            "ode" => Ok(Experiment::Ode),
            other => Err(config_error(format!("unknown experiment {other:?}"))),
        }
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Column names plus rows of already formatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub experiment: Experiment,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// A typed row with a fixed column order.
pub trait Record {
    const HEADER: &'static [&'static str];
    fn cells(&self) -> Vec<String>;
}

impl Table {
    pub fn from_records<R: Record>(experiment: Experiment, records: &[R]) -> Self {
        Self {
            experiment,
            header: R::HEADER.iter().map(|s| s.to_string()).collect(),
            rows: records.iter().map(Record::cells).collect(),
        }
    }

    /// CSV with a leading `# pnum <experiment>` line. Unless
    /// `reproducible`, the line also carries the generation time.
    pub fn write_csv<W: Write>(&self, out: W, reproducible: bool) -> BenchResult<()> {
        let mut out = out;
        if reproducible {
            writeln!(out, "# pnum {}", self.experiment)?;
        } else {
            let now = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            writeln!(out, "# pnum {} generated_at_unix={now}", self.experiment)?;
        }
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| BenchError::Io(e.to_string());
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            w.write_record(row).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads typed rows back from a CSV written by [`Table::write_csv`].
pub fn read_csv<R: DeserializeOwned>(path: &Path) -> BenchResult<Vec<R>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| BenchError::Io(e.to_string()))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<R>, _>>()
        .map_err(|e| BenchError::Io(e.to_string()))
}

pub(crate) fn parse_config<C: DeserializeOwned>(text: &str) -> BenchResult<C> {
    toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
}

/// Rejects an empty or non-increasing budget list.
pub(crate) fn check_increasing(name: &str, values: &[usize]) -> BenchResult<()> {
    if values.is_empty() {
        return Err(config_error(format!("{name} must not be empty")));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(config_error(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

/// Wall time of one `(method, seed)` job. Informational only; it never
/// enters the CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobTiming {
    pub method: String,
    pub seed: u64,
    pub wall_ms: f64,
}

pub(crate) fn timed<T>(method: &str, seed: u64, f: impl FnOnce() -> T) -> (T, JobTiming) {
    let start = std::time::Instant::now();
    let out = f();
    let timing = JobTiming {
        method: method.to_string(),
        seed,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    (out, timing)
}

/// Output of one experiment: the table, the resolved config and per-job
/// wall times where the experiment has jobs.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub table: Table,
    pub resolved: serde_json::Value,
    pub timings: Vec<JobTiming>,
}

fn finish<C: Serialize>(experiment: Experiment, table: Table, config: &C) -> BenchResult<Outcome> {
    let resolved = serde_json::json!({
        "experiment": experiment.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::to_value(config).map_err(|e| BenchError::Io(e.to_string()))?,
    });
    Ok(Outcome {
        table,
        resolved,
        timings: Vec::new(),
    })
}

/// Parses `config_text`, applies the seed override and runs `experiment`.
pub fn run_experiment(experiment: Experiment, config_text: &str, seed: Option<u64>) -> BenchResult<Outcome> {
    match experiment {
        Experiment::Quad => {
            let mut cfg: quad::QuadConfig = parse_config(config_text)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (rows, timings) = quad::run_timed(&cfg)?;
            let outcome = finish(experiment, Table::from_records(experiment, &rows), &cfg)?;
            Ok(Outcome { timings, ..outcome })
        }
        Experiment::Evidence => {
            let mut cfg: evidence::EvidenceConfig = parse_config(config_text)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (rows, timings) = evidence::run_timed(&cfg)?;
            let outcome = finish(experiment, Table::from_records(experiment, &rows), &cfg)?;
            Ok(Outcome { timings, ..outcome })
        }
        Experiment::Linsolve => {
            let mut cfg: linsolve::LinsolveConfig = parse_config(config_text)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let rows = linsolve::run(&cfg)?;
            finish(experiment, Table::from_records(experiment, &rows), &cfg)
        }
        Experiment::Recycle => {
            let mut cfg: recycle::RecycleConfig = parse_config(config_text)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let rows = recycle::run(&cfg)?;
            finish(experiment, Table::from_records(experiment, &rows), &cfg)
        }
        Experiment::Ode => {
            let cfg: ode::OdeConfig = parse_config(config_text)?;
            let table = ode::run(&cfg)?;
            finish(experiment, table, &cfg)
        }
    }
}

/// Sidecar path: the output path with its extension replaced by `json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

/// Runs an experiment from a config file and writes the CSV and its JSON
/// sidecar.
pub fn run_to_files(
    experiment: Experiment,
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    reproducible: bool,
) -> BenchResult<()> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| BenchError::Io(format!("{}: {e}", config.display())))?;
    let started = std::time::Instant::now();
    let mut outcome = run_experiment(experiment, &text, seed)?;
    if !reproducible {
        outcome.resolved["wall_ms"] = serde_json::json!(started.elapsed().as_millis() as u64);
        if !outcome.timings.is_empty() {
            outcome.resolved["timings"] =
                serde_json::to_value(&outcome.timings).map_err(|e| BenchError::Io(e.to_string()))?;
        }
    }
    let file = std::fs::File::create(out).map_err(|e| BenchError::Io(format!("{}: {e}", out.display())))?;
    outcome.table.write_csv(std::io::BufWriter::new(file), reproducible)?;
    let sidecar = serde_json::to_string_pretty(&outcome.resolved).map_err(|e| BenchError::Io(e.to_string()))?;
    std::fs::write(sidecar_path(out), sidecar + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0, 1e-300, 1.1433287777179344, -2.5e17, f64::INFINITY] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn error_classes() {
        assert_eq!(BenchError::from(Error::InvalidArgument("x".into())).exit_code(), 2);
        assert_eq!(BenchError::from(Error::SingularGram { jitter: 1.0 }).exit_code(), 3);
        assert_eq!(BenchError::from(Error::Io("x".into())).exit_code(), 1);
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = run_experiment(Experiment::Linsolve, "bogus = 1\n", None).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("bogus"));
    }

    #[test]
    fn reproducible_header_has_no_timestamp() {
        let t = Table {
            experiment: Experiment::Ode,
            header: vec!["a".into()],
            rows: vec![vec!["1.0".into()]],
        };
        let mut a = Vec::new();
        t.write_csv(&mut a, true).unwrap();
        assert_eq!(String::from_utf8(a).unwrap(), "# pnum ode\na\n1.0\n");
        let mut b = Vec::new();
        t.write_csv(&mut b, false).unwrap();
        assert!(String::from_utf8(b).unwrap().starts_with("# pnum ode generated_at_unix="));
    }
}
