//! The `kcmlab` command line: JSON config in, JSON report and CSV series out.
//!
//! Exit codes: 0 on success, 1 on invalid input, 2 when `verify` finds a
//! failing check.

pub mod config;
pub mod verify;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::exact::{
    build_generator, build_hat_chain, build_minimal_boundary_chain, build_taboo_chain, build_tilde_chain,
    spectral_gap, ExactError, RateMatrix,
};
use crate::experiments::{
    block_scale, run_gap_scan, run_persistence, run_pipeline_demo, run_relaxation, ExperimentError, PipelineParams,
};
use crate::graph::{partition_cover, GraphError};
use crate::kmc::{estimate_expectation, KmcError, SeriesEstimate, SimParams};
use crate::model::{block_labels, BoundaryCondition, ModelError, Volume};

pub use config::RunConfig;
pub use verify::{run_suite, Suite, SuiteReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write output: {0}")]
    Write(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Kmc(#[from] KmcError),
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Parser)]
#[command(name = "kcmlab", version, about = "Simulate and verify the one-spin facilitated model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration; defaults apply to absent keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "KCMLAB_WORKERS")]
    pub workers: Option<usize>,
    /// Output directory; without it the JSON report goes to stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Monte Carlo estimate of `E f(σ_t)`.
    Simulate,
    /// Relaxation series with decay fits.
    Relax,
    /// Persistence of vacancies against the drift bound.
    Persist,
    /// Exact spectral gap of one chain.
    Gap,
    /// Exact restricted gaps over a family of segments and a q grid.
    Gapscan,
    /// Runs exact verification suites.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
    },
    /// Block pipeline: partition, exit estimate and assembled bound.
    Pipeline,
    /// Block partition of the volume.
    Partition,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Relax => "relax",
            Command::Persist => "persist",
            Command::Gap => "gap",
            Command::Gapscan => "gapscan",
            Command::Verify { .. } => "verify",
            Command::Pipeline => "pipeline",
            Command::Partition => "partition",
        }
    }
}

/// What every report carries besides its result.
#[derive(Debug, Serialize)]
pub struct Report {
    pub command: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    /// Outcome of the run's own checks, where it has any.
    pub passed: Option<bool>,
    pub result: Value,
}

pub struct Outcome {
    pub report: Report,
    pub series: Option<SeriesEstimate>,
}

impl Outcome {
    /// 2 when the run was a verification that failed.
    pub fn exit_code(&self) -> i32 {
        if self.report.command == "verify" && self.report.passed == Some(false) {
            2
        } else {
            0
        }
    }
}

fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

pub fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
                path: path.clone(),
                source,
            })?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    cfg.seed = Some(cli.seed.or(cfg.seed).unwrap_or(0));
    Ok(cfg)
}

fn chain_for(cfg: &RunConfig) -> Result<RateMatrix, CliError> {
    let spec = cfg.spec()?;
    let volume = Arc::new(cfg.graph.volume()?);
    let (labels, blocks) = block_assignment(cfg, &volume)?;
    Ok(match cfg.chain {
        config::ChainChoice::Full => build_generator(&*cfg.region()?, &spec)?,
        config::ChainChoice::Hat => build_hat_chain(&volume, &spec, &labels, blocks)?,
        config::ChainChoice::Tilde => build_tilde_chain(&volume, &spec, &labels, blocks)?,
        config::ChainChoice::Taboo => build_taboo_chain(&*cfg.region()?, &spec, &labels, blocks)?,
        config::ChainChoice::Minimal => {
            let z = match &cfg.boundary {
                BoundaryCondition::FilledExceptAt(z) => *z,
                _ => *volume
                    .boundary()
                    .first()
                    .ok_or_else(|| CliError::Invalid("volume has no boundary".into()))?,
            };
            build_minimal_boundary_chain(&volume, z, &spec)?
        }
    })
}

/// Labels from the config: explicit, from `ℓ`, or a single block.
fn block_assignment(cfg: &RunConfig, volume: &Volume) -> Result<(Vec<usize>, usize), CliError> {
    let n = volume.len();
    if let Some(labels) = &cfg.partition.labels {
        if labels.len() != n {
            return Err(CliError::Invalid(format!("labels cover {} sites, volume has {n}", labels.len())));
        }
        let blocks = labels.iter().max().map_or(0, |m| m + 1);
        return Ok((labels.clone(), blocks));
    }
    match scale(cfg) {
        Some(ell) => {
            let p = partition_cover(volume.host(), volume.sites(), ell)?;
            Ok((block_labels(volume, &p)?, p.len()))
        }
        None => Ok((vec![0; n], 1)),
    }
}

fn scale(cfg: &RunConfig) -> Option<u32> {
    cfg.partition.ell.or_else(|| {
        let eps = cfg.partition.epsilon?;
        Some(block_scale(cfg.partition.t.unwrap_or(cfg.pipeline.t), eps, cfg.dim()))
    })
}

fn sim_params(cfg: &RunConfig, seed: u64) -> Result<SimParams, CliError> {
    Ok(SimParams::new(cfg.times.clone(), seed, cfg.replicas)?)
}

fn default_site(cfg: &RunConfig, len: usize) -> usize {
    cfg.site.unwrap_or(len / 2)
}

/// Runs one subcommand without touching the filesystem.
pub fn execute(command: &Command, cfg: RunConfig) -> Result<Outcome, CliError> {
    let seed = cfg.seed.unwrap_or(0);
    let mut series = None;
    let (passed, result) = match command {
        Command::Simulate => {
            let region = cfg.region()?;
            let f = cfg.observable(region.len())?;
            let s = estimate_expectation(std::slice::from_ref(&f), &cfg.law, &region, &cfg.spec()?, &sim_params(&cfg, seed)?)?
                .remove(0);
            let value = to_value(&s);
            series = Some(s);
            (None, value)
        }
        Command::Relax => {
            let region = cfg.region()?;
            let f = cfg.observable(region.len())?;
            let r = run_relaxation(&region, &cfg.spec()?, &cfg.law, &f, &sim_params(&cfg, seed)?, cfg.dim() as f64)?;
            series = Some(r.series.clone());
            (r.shape_matched, to_value(&r))
        }
        Command::Persist => {
            let region = cfg.region()?;
            let x = default_site(&cfg, region.len());
            let r = run_persistence(&region, &cfg.spec()?, cfg.theta, &cfg.law, x, &sim_params(&cfg, seed)?)?;
            series = r.series.clone();
            (r.passed, to_value(&r))
        }
        Command::Gap => {
            let chain = chain_for(&cfg)?;
            let r = spectral_gap(&chain)?;
            (None, to_value(&r))
        }
        Command::Gapscan => {
            let volumes = cfg
                .lengths
                .iter()
                .map(|&n| Volume::segment(n).map(Arc::new))
                .collect::<Result<Vec<_>, _>>()?;
            let r = run_gap_scan(&volumes, &cfg.q_grid, cfg.dim() as u32)?;
            let passed = r.all_positive
                && r.envelopes.iter().all(|e| e.holds_on_holdout)
                && r.comparisons.iter().all(|c| c.comparison_holds != Some(false));
            (Some(passed), to_value(&r))
        }
        Command::Verify { suite } => {
            let r = run_suite(*suite, seed)?;
            (Some(r.passed), to_value(&r))
        }
        Command::Pipeline => {
            let p = &cfg.pipeline;
            let params = PipelineParams {
                t: p.t,
                q: cfg.q,
                dim: p.dim,
                epsilon: p.epsilon,
                speed: p.speed,
                law: cfg.law.clone(),
                observable: p.observable.clone(),
                c: p.c,
                theta: p.theta,
                replicas: cfg.replicas,
                seed,
            };
            let r = run_pipeline_demo(&params)?;
            (r.passed, to_value(&r))
        }
        Command::Partition => {
            let volume = cfg.graph.volume()?;
            let ell = scale(&cfg).ok_or_else(|| CliError::Invalid("partition needs ell or epsilon".into()))?;
            let g = volume.host();
            let p = partition_cover(g, volume.sites(), ell)?;
            let p = p.halve_blocks(g).unwrap_or(p);
            let violations = p.violations(g);
            let value = serde_json::json!({
                "ell": ell,
                "blocks": p.len(),
                "min_block": p.min_block_size(),
                "max_block": p.max_block_size(),
                "violations": violations,
                "partition": to_value(&p),
            });
            (Some(violations.is_empty()), value)
        }
    };
    Ok(Outcome {
        report: Report {
            command: command.name(),
            config_hash: cfg.hash(),
            seed,
            config: cfg,
            passed,
            result,
        },
        series,
    })
}

/// Writes `series` as `time,mean,stderr,replicas` after a `# config_hash` line.
pub fn write_series(path: &Path, hash: &str, seed: u64, s: &SeriesEstimate) -> Result<(), CliError> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "# config_hash={hash},seed={seed}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["time", "mean", "stderr", "replicas"])?;
    for k in 0..s.times.len() {
        w.serialize((s.times[k], s.means[k], s.stderrs[k], s.replicas))?;
    }
    w.flush()?;
    Ok(())
}

fn emit(outcome: &Outcome, out: Option<&Path>) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(&outcome.report).expect("reports serialize");
    let r = &outcome.report;
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(format!("{}.json", r.command)), format!("{json}\n"))?;
            if let Some(s) = &outcome.series {
                write_series(&dir.join(format!("{}.csv", r.command)), &r.config_hash, r.seed, s)?;
            }
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn run_cli(cli: &Cli) -> Result<i32, CliError> {
    let cfg = load_config(cli)?;
    // where the files go is not part of the run, so `--out` stays out of the echo
    let out = cli.out.clone().or_else(|| cfg.out.clone().map(PathBuf::from));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers.filter(|&n| n > 0) {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Invalid(e.to_string()))?;
    let outcome = pool.install(|| execute(&cli.command, cfg))?;
    emit(&outcome, out.as_deref())?;
    Ok(outcome.exit_code())
}

/// Entry point of the binary; returns the process exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_cli(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(command: Command, json: &str) -> Outcome {
        let mut cfg = RunConfig::parse(json).unwrap();
        cfg.seed = Some(3);
        execute(&command, cfg).unwrap()
    }

    #[test]
    fn two_site_hat_gap_is_q() {
        let o = run(Command::Gap, r#"{"graph": {"kind": "segment", "n": 2}, "q": 0.7, "chain": "hat"}"#);
        let gap = o.report.result["gap"].as_f64().unwrap();
        assert!((gap - 0.7).abs() < 1e-10);
    }

    #[test]
    fn simulate_is_deterministic() {
        let json = r#"{"replicas": 300, "times": [0.5, 1.0]}"#;
        let a = serde_json::to_string(&run(Command::Simulate, json).report).unwrap();
        let b = serde_json::to_string(&run(Command::Simulate, json).report).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn partition_and_chain_kinds() {
        let o = run(Command::Partition, r#"{"graph": {"kind": "segment", "n": 30}, "partition": {"ell": 3}}"#);
        assert_eq!(o.report.passed, Some(true));
        for chain in ["full", "tilde", "taboo", "minimal"] {
            let json = format!(r#"{{"graph": {{"kind": "segment", "n": 6}}, "chain": "{chain}", "partition": {{"ell": 1}}}}"#);
            let o = run(Command::Gap, &json);
            assert!(o.report.result["gap"].as_f64().unwrap() > 0.0, "{chain}");
        }
    }

    #[test]
    fn csv_header_carries_hash() {
        let o = run(Command::Simulate, r#"{"replicas": 50, "times": [1.0]}"#);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_series(&path, &o.report.config_hash, 3, o.series.as_ref().unwrap()).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), format!("# config_hash={},seed=3", o.report.config_hash));
        assert_eq!(lines.next().unwrap(), "time,mean,stderr,replicas");
        assert!(lines.next().unwrap().starts_with("1.0,"));
    }
}
