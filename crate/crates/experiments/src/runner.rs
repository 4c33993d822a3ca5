//! Config resolution, seeded replicate execution, verdicts and manifests.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mdes_core::io::write_json;
use mdes_core::rng::derive_seed;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, ExpError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VERDICT_FILE: &str = "verdict.json";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    FigImplicit,
    FigBernstein,
    FigOffsetAnalysis,
    ExpL1Rate,
    ExpKernel,
    ExpPathVsErm,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::FigImplicit,
        ExperimentKind::FigBernstein,
        ExperimentKind::FigOffsetAnalysis,
        ExperimentKind::ExpL1Rate,
        ExperimentKind::ExpKernel,
        ExperimentKind::ExpPathVsErm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::FigImplicit => "fig-implicit",
            ExperimentKind::FigBernstein => "fig-bernstein",
            ExperimentKind::FigOffsetAnalysis => "fig-offset-analysis",
            ExperimentKind::ExpL1Rate => "exp-l1-rate",
            ExperimentKind::ExpKernel => "exp-kernel",
            ExperimentKind::ExpPathVsErm => "exp-path-vs-erm",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = ExpError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.replace('_', "-");
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| ExpError::UnknownExperiment(s.to_string()))
    }
}

/// The JSON config file. Experiment parameters live under `params`; missing
/// keys take the experiment's defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Option<ExperimentKind>,
    #[serde(default)]
    pub base_seed: Option<u64>,
    #[serde(default)]
    pub replicates: Option<usize>,
    /// Explicit seed list; takes precedence over `replicates`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub params: serde_json::Value,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Command-line overrides applied on top of a config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// Replicate count; seeds are then derived from the base seed.
    pub seeds: Option<usize>,
    pub base_seed: Option<u64>,
    /// Worker threads; `None` or 0 uses rayon's default.
    pub jobs: Option<usize>,
}

/// Resolves the seed list: an explicit `--seeds k` or `replicates` derives
/// `k` seeds from the base seed; otherwise a config seed list is used as is.
pub fn resolve_seeds(
    cfg: &ExperimentConfig,
    ov: &Overrides,
    default_replicates: usize,
) -> Result<(u64, Vec<u64>)> {
    let base = ov.base_seed.or(cfg.base_seed).unwrap_or(0);
    let derived = |k: usize| -> Result<Vec<u64>> {
        if k == 0 {
            return Err(config_err("replicates must be at least 1"));
        }
        Ok((0..k as u64).map(|i| derive_seed(base, i)).collect())
    };
    let seeds = match (ov.seeds, &cfg.seeds) {
        (Some(k), _) => derived(k)?,
        (None, Some(list)) if ov.base_seed.is_none() => {
            if list.is_empty() {
                return Err(config_err("seed list must not be empty"));
            }
            list.clone()
        }
        _ => derived(cfg.replicates.unwrap_or(default_replicates))?,
    };
    Ok((base, seeds))
}

/// Per-run state shared by all replicates.
pub struct RunContext {
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pool: rayon::ThreadPool,
}

impl RunContext {
    pub fn new(out_dir: impl Into<PathBuf>, seeds: Vec<u64>, jobs: Option<usize>) -> Result<Self> {
        if seeds.is_empty() {
            return Err(config_err("need at least one seed"));
        }
        let out_dir = out_dir.into();
        fs::create_dir_all(&out_dir)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.unwrap_or(0))
            .build()
            .map_err(|e| ExpError::Pool(e.to_string()))?;
        Ok(RunContext {
            out_dir,
            seeds,
            pool,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Runs `f(index, seed)` for every seed in parallel; results come back in
    /// seed order.
    pub fn replicates<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, u64) -> Result<T> + Sync,
    {
        self.map(&self.seeds, |i, &s| f(i, s))
    }

    /// Ordered parallel map over arbitrary work items.
    pub fn map<I, T, F>(&self, items: &[I], f: F) -> Result<Vec<T>>
    where
        I: Sync,
        T: Send,
        F: Fn(usize, &I) -> Result<T> + Sync,
    {
        self.pool.install(|| {
            items
                .par_iter()
                .enumerate()
                .map(|(i, item)| f(i, item))
                .collect()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub experiment: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl Verdict {
    pub fn new(kind: ExperimentKind, checks: Vec<Check>) -> Self {
        Verdict {
            experiment: kind.name().to_string(),
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

/// Written next to the outputs. Deliberately free of timestamps and host
/// details so reruns are byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub library_version: String,
    pub config_hash: String,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub trait Experiment {
    const KIND: ExperimentKind;
    const DEFAULT_REPLICATES: usize;
    type Params: Serialize + DeserializeOwned + Default + Sync;
    type Report: Serialize;

    fn run(ctx: &RunContext, params: &Self::Params) -> Result<Self::Report>;
    fn checks(report: &Self::Report) -> Vec<Check>;
}

pub struct Execution<R> {
    pub verdict: Verdict,
    pub report: R,
    pub manifest: Manifest,
}

fn parse_params<P: DeserializeOwned + Default>(value: &serde_json::Value) -> Result<P> {
    match value {
        serde_json::Value::Null => Ok(P::default()),
        v => serde_json::from_value(v.clone()).map_err(|e| config_err(format!("params: {e}"))),
    }
}

/// Runs one experiment end to end: resolves seeds and parameters, runs the
/// replicates, writes `summary.json`, `verdict.json` and `manifest.json`.
pub fn execute<E: Experiment>(
    cfg: &ExperimentConfig,
    ov: &Overrides,
    out_dir: &Path,
) -> Result<Execution<E::Report>> {
    if let Some(kind) = cfg.experiment {
        if kind != E::KIND {
            return Err(config_err(format!("config is for {kind}, not {}", E::KIND)));
        }
    }
    let params: E::Params = parse_params(&cfg.params)?;
    let (base_seed, seeds) = resolve_seeds(cfg, ov, E::DEFAULT_REPLICATES)?;
    let resolved = serde_json::json!({
        "experiment": E::KIND,
        "base_seed": base_seed,
        "seeds": seeds,
        "params": params,
    });
    let config_hash = sha256_hex(serde_json::to_string(&resolved)?.as_bytes());

    let ctx = RunContext::new(out_dir, seeds.clone(), ov.jobs.filter(|&j| j > 0))?;
    let report = E::run(&ctx, &params)?;
    let verdict = Verdict::new(E::KIND, E::checks(&report));
    write_json(&ctx.path(SUMMARY_FILE), &report)?;
    write_json(&ctx.path(VERDICT_FILE), &verdict)?;

    let mut outputs = Vec::new();
    let mut names: Vec<String> = fs::read_dir(out_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != MANIFEST_FILE && (n.ends_with(".csv") || n.ends_with(".json")))
        .collect();
    names.sort();
    for name in names {
        let bytes = fs::read(out_dir.join(&name))?;
        outputs.push(FileDigest {
            name,
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        experiment: E::KIND.name().to_string(),
        library_version: mdes_core::VERSION.to_string(),
        config_hash,
        base_seed,
        seeds,
        config: resolved,
        outputs,
    };
    write_json(&ctx.path(MANIFEST_FILE), &manifest)?;
    Ok(Execution {
        verdict,
        report,
        manifest,
    })
}
