//! Flat `key = value` experiment configuration with `#` comments, strict
//! unknown-key rejection, and a re-feedable effective-config dump.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};

use fedcascade::agent::{AlgorithmParams, CommOrder, Protocol};
use fedcascade::environment::{SyntheticConfig, ThetaMode};
use fedcascade::protocol::{EnvConfig, RatingsEnvConfig};
use fedcascade::runner::ExperimentConfig;

const KNOWN_KEYS: [&str; 20] = [
    "protocol",
    "horizon",
    "num_users",
    "num_clusters",
    "dim",
    "items_per_round",
    "K",
    "theta_mode",
    "clip_weights",
    "lambda",
    "alpha_c",
    "alpha_d",
    "delta",
    "R",
    "num_runs",
    "base_seed",
    "snapshot_interval",
    "output",
    "embeddings",
    "sample_seed",
];

/// Raw parsed key/value pairs, before defaulting and validation.
#[derive(Debug, Default)]
pub struct RawConfig {
    values: HashMap<String, (String, usize)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {line_no}: expected 'key = value', got '{line}'"))?;
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                bail!("line {line_no}: unknown key '{key}'");
            }
            if values.insert(key.to_string(), (value.to_string(), line_no)).is_some() {
                bail!("line {line_no}: duplicate key '{key}'");
            }
        }
        Ok(Self { values })
    }

    fn take(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    fn parse_as<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow!("key '{key}': invalid value '{raw}' ({e})")),
        }
    }
}

/// Fully-defaulted, validated configuration.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub protocol: Protocol,
    pub horizon: usize,
    pub num_users: usize,
    pub num_clusters: usize,
    pub dim: usize,
    pub items_per_round: usize,
    pub list_len: usize,
    pub theta_mode: ThetaMode,
    pub clip_weights: bool,
    pub lambda: f64,
    pub alpha_c: f64,
    pub alpha_d: f64,
    pub delta: f64,
    pub noise_scale: f64,
    pub num_runs: usize,
    pub base_seed: u64,
    pub snapshot_interval: usize,
    pub output: PathBuf,
    pub embeddings: Option<PathBuf>,
    pub sample_seed: Option<u64>,
    pub warnings: Vec<String>,
}

fn parse_theta_mode(s: &str) -> Result<ThetaMode> {
    match s {
        "orthogonal" => Ok(ThetaMode::Orthogonal),
        "random_normalized" => Ok(ThetaMode::RandomNormalized),
        other => bail!("key 'theta_mode': expected orthogonal or random_normalized, got '{other}'"),
    }
}

pub fn resolve(raw: &RawConfig) -> Result<ResolvedConfig> {
    let mut warnings = Vec::new();

    let horizon: usize = raw
        .parse_as("horizon")?
        .ok_or_else(|| anyhow!("key 'horizon' is required"))?;
    if horizon == 0 {
        bail!("key 'horizon': must be >= 1");
    }
    let output: PathBuf = raw
        .take("output")
        .map(PathBuf::from)
        .ok_or_else(|| anyhow!("key 'output' is required"))?;

    let embeddings: Option<PathBuf> = raw.take("embeddings").map(PathBuf::from);
    if embeddings.is_none() {
        for key in ["sample_seed"] {
            if raw.take(key).is_some() {
                bail!("key '{key}' only applies when 'embeddings' is set");
            }
        }
    } else {
        for key in ["num_clusters", "dim", "theta_mode"] {
            if raw.take(key).is_some() {
                bail!("key '{key}' does not apply when 'embeddings' is set (the bundle fixes it)");
            }
        }
    }

    let protocol: Protocol = match raw.take("protocol") {
        None => Protocol::FedC3UcbH,
        Some(s) => s.parse().map_err(|e| anyhow!("key 'protocol': {e}"))?,
    };
    let num_users: usize = raw.parse_as("num_users")?.unwrap_or(40);
    let num_clusters: usize = raw.parse_as("num_clusters")?.unwrap_or(5);
    let mut dim: usize = raw.parse_as("dim")?.unwrap_or(20);
    let items_per_round: usize = raw.parse_as("items_per_round")?.unwrap_or(200);
    let list_len: usize = raw.parse_as("K")?.unwrap_or(4);
    let theta_mode = match raw.take("theta_mode") {
        None => ThetaMode::Orthogonal,
        Some(s) => parse_theta_mode(s)?,
    };
    let clip_weights: bool = raw.parse_as("clip_weights")?.unwrap_or(true);

    let lambda = match raw.parse_as::<f64>("lambda")? {
        Some(l) => {
            if !(l > 0.0) {
                bail!("key 'lambda': must be > 0, got {l}");
            }
            if protocol == Protocol::ForceComm && l <= list_len as f64 {
                bail!("key 'lambda': force_comm requires lambda > K ({list_len}), got {l}");
            }
            l
        }
        None => {
            if protocol == Protocol::ForceComm {
                let raised = (list_len + 1) as f64;
                warnings.push(format!(
                    "force_comm requires lambda > K; raising default lambda to {raised}"
                ));
                raised
            } else {
                1.0
            }
        }
    };

    let alpha_c = match raw.parse_as::<f64>("alpha_c")? {
        Some(a) if a > 0.0 => a,
        Some(a) => bail!("key 'alpha_c': must be > 0, got {a}"),
        None => 1.0 / (num_users * num_users) as f64,
    };
    let alpha_d = match raw.parse_as::<f64>("alpha_d")? {
        Some(a) if a > 0.0 => a,
        Some(a) => bail!("key 'alpha_d': must be > 0, got {a}"),
        None => 1.0,
    };
    let delta = match raw.parse_as::<f64>("delta")? {
        Some(d) if d > 0.0 && d < 1.0 => d,
        Some(d) => bail!("key 'delta': must be in (0,1), got {d}"),
        None => (1.0 / horizon as f64).min(0.5),
    };
    let noise_scale = match raw.parse_as::<f64>("R")? {
        Some(r) if r > 0.0 => r,
        Some(r) => bail!("key 'R': must be > 0, got {r}"),
        None => 0.5,
    };
    let num_runs: usize = raw.parse_as("num_runs")?.unwrap_or(3);
    if num_runs == 0 {
        bail!("key 'num_runs': must be >= 1");
    }
    let base_seed: u64 = raw.parse_as("base_seed")?.unwrap_or(0);
    let snapshot_interval: usize =
        raw.parse_as("snapshot_interval")?.unwrap_or_else(|| (horizon / 200).max(1));
    if snapshot_interval == 0 {
        bail!("key 'snapshot_interval': must be >= 1");
    }
    let sample_seed: Option<u64> = raw.parse_as("sample_seed")?;

    if list_len == 0 || list_len > items_per_round {
        bail!("key 'K': must be in [1, items_per_round ({items_per_round})], got {list_len}");
    }

    if let Some(path) = &embeddings {
        let bundle = fedcascade::ingest::read_bundle(path)
            .with_context(|| format!("key 'embeddings': cannot load '{}'", path.display()))?;
        dim = bundle.dim;
        if num_users > bundle.num_users() {
            bail!(
                "key 'num_users': bundle holds {} users, requested {num_users}",
                bundle.num_users()
            );
        }
        if items_per_round > bundle.item_features.len() {
            bail!(
                "key 'items_per_round': bundle holds {} items, requested {items_per_round}",
                bundle.item_features.len()
            );
        }
    } else {
        if num_clusters > num_users {
            bail!("key 'num_clusters': must not exceed num_users ({num_users}), got {num_clusters}");
        }
        if theta_mode == ThetaMode::Orthogonal && num_clusters > dim {
            bail!("key 'dim': orthogonal theta_mode needs dim >= num_clusters ({num_clusters}), got {dim}");
        }
    }

    Ok(ResolvedConfig {
        protocol,
        horizon,
        num_users,
        num_clusters,
        dim,
        items_per_round,
        list_len,
        theta_mode,
        clip_weights,
        lambda,
        alpha_c,
        alpha_d,
        delta,
        noise_scale,
        num_runs,
        base_seed,
        snapshot_interval,
        output,
        embeddings,
        sample_seed,
        warnings,
    })
}

impl ResolvedConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config '{}'", path.display()))?;
        resolve(&RawConfig::parse(&text)?)
    }

    pub fn experiment(&self) -> ExperimentConfig {
        let env = match &self.embeddings {
            Some(path) => EnvConfig::Ratings(RatingsEnvConfig {
                bundle_path: path.clone(),
                num_users: self.num_users,
                items_per_round: self.items_per_round,
                clip_weights: self.clip_weights,
                sample_seed: self.sample_seed,
            }),
            None => EnvConfig::Synthetic(SyntheticConfig {
                num_users: self.num_users,
                num_clusters: self.num_clusters,
                dim: self.dim,
                items_per_round: self.items_per_round,
                list_len: self.list_len,
                horizon: self.horizon,
                theta_mode: self.theta_mode,
                clip_weights: self.clip_weights,
            }),
        };
        ExperimentConfig {
            env,
            params: AlgorithmParams {
                protocol: self.protocol,
                lambda: self.lambda,
                alpha_c: self.alpha_c,
                alpha_d: self.alpha_d,
                delta: self.delta,
                noise_scale: self.noise_scale,
                list_len: self.list_len,
                dim: self.dim,
                horizon: self.horizon,
                num_users: self.num_users,
                comm_order: CommOrder::UploadFirst,
            },
            num_runs: self.num_runs,
            base_seed: self.base_seed,
            snapshot_interval: self.snapshot_interval,
        }
    }

    /// Effective configuration in the same grammar; feeding this back
    /// reproduces the identical run.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "protocol = {}", self.protocol);
        let _ = writeln!(out, "horizon = {}", self.horizon);
        let _ = writeln!(out, "num_users = {}", self.num_users);
        if let Some(path) = &self.embeddings {
            let _ = writeln!(out, "embeddings = {}", path.display());
            if let Some(seed) = self.sample_seed {
                let _ = writeln!(out, "sample_seed = {seed}");
            }
        } else {
            let _ = writeln!(out, "num_clusters = {}", self.num_clusters);
            let _ = writeln!(out, "dim = {}", self.dim);
            let mode = match self.theta_mode {
                ThetaMode::Orthogonal => "orthogonal",
                ThetaMode::RandomNormalized => "random_normalized",
            };
            let _ = writeln!(out, "theta_mode = {mode}");
        }
        let _ = writeln!(out, "items_per_round = {}", self.items_per_round);
        let _ = writeln!(out, "K = {}", self.list_len);
        let _ = writeln!(out, "clip_weights = {}", self.clip_weights);
        let _ = writeln!(out, "lambda = {}", self.lambda);
        let _ = writeln!(out, "alpha_c = {}", self.alpha_c);
        let _ = writeln!(out, "alpha_d = {}", self.alpha_d);
        let _ = writeln!(out, "delta = {}", self.delta);
        let _ = writeln!(out, "R = {}", self.noise_scale);
        let _ = writeln!(out, "num_runs = {}", self.num_runs);
        let _ = writeln!(out, "base_seed = {}", self.base_seed);
        let _ = writeln!(out, "snapshot_interval = {}", self.snapshot_interval);
        let _ = writeln!(out, "output = {}", self.output.display());
        out
    }
}
