//! Subcommand implementations. Success output goes to stdout; warnings and
//! failures to stderr (the binary maps errors to a nonzero exit).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use fedcascade::ingest::{run_pipeline, write_bundle};
use fedcascade::runner::{read_csv, run_experiment, write_csv, AggregateSeries, SnapshotPoint};

use crate::config::ResolvedConfig;

pub struct SimulateOptions {
    pub seed_override: Option<u64>,
    pub jobs: Option<usize>,
    pub dump_effective_config: bool,
}

pub fn cmd_simulate(config_path: &Path, opts: &SimulateOptions) -> Result<()> {
    let mut cfg = ResolvedConfig::load(config_path)?;
    if let Some(seed) = opts.seed_override {
        cfg.base_seed = seed;
    }
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    if opts.dump_effective_config {
        print!("{}", cfg.dump());
        return Ok(());
    }
    if let Some(jobs) = opts.jobs {
        if jobs == 0 {
            bail!("--jobs must be >= 1");
        }
        // ignore the error when a global pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let experiment = cfg.experiment();
    let series = run_experiment(&experiment)?;
    write_csv(&series, &cfg.output)
        .with_context(|| format!("cannot write '{}'", cfg.output.display()))?;
    println!("wrote {}", cfg.output.display());
    let fin = |points: &[SnapshotPoint]| -> String {
        match points.last() {
            Some(p) => format!("{} ± {}", p.mean, p.stddev),
            None => "n/a".to_string(),
        }
    };
    println!(
        "final cum_regret {} | cum_comm {} | cluster_error {} (protocol={}, T={}, runs={})",
        fin(&series.cum_regret),
        fin(&series.cum_comm),
        fin(&series.cluster_error),
        cfg.protocol,
        cfg.horizon,
        cfg.num_runs
    );
    Ok(())
}

pub struct IngestOptions {
    pub ratings: PathBuf,
    pub dim: usize,
    pub clusters: usize,
    pub top_items: usize,
    pub top_users: usize,
    pub seed: u64,
    pub output: PathBuf,
}

pub fn cmd_ingest(opts: &IngestOptions) -> Result<()> {
    let out = run_pipeline(
        &opts.ratings,
        opts.dim,
        opts.clusters,
        opts.top_items,
        opts.top_users,
        opts.seed,
    )
    .with_context(|| format!("ingest of '{}' failed", opts.ratings.display()))?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    write_bundle(&out.bundle, &opts.output)
        .with_context(|| format!("cannot write '{}'", opts.output.display()))?;
    println!("wrote {}", opts.output.display());
    let sv: Vec<String> = out.singular_values.iter().map(|s| format!("{s:.6}")).collect();
    println!("singular values: [{}]", sv.join(", "));
    println!(
        "users {} | items {} | clusters {} | min center distance {:.6}{}",
        out.bundle.num_users(),
        out.bundle.item_features.len(),
        out.bundle.num_clusters,
        out.bundle.min_center_distance,
        if out.bundle.centers_scaled { " (centers scaled to unit norm)" } else { "" }
    );
    Ok(())
}

pub fn cmd_report(paths: &[PathBuf]) -> Result<()> {
    if paths.is_empty() {
        bail!("report needs at least one csv file");
    }
    let mut rows = Vec::new();
    let mut horizon: Option<(usize, PathBuf)> = None;
    for path in paths {
        let series: AggregateSeries =
            read_csv(path).with_context(|| format!("cannot parse '{}'", path.display()))?;
        let this = series
            .final_round()
            .with_context(|| format!("'{}' has no data rows", path.display()))?;
        match &horizon {
            None => horizon = Some((this, path.clone())),
            Some((h, first)) if *h != this => bail!(
                "horizon mismatch: '{}' ends at {} but '{}' ends at {}",
                first.display(),
                h,
                path.display(),
                this
            ),
            _ => {}
        }
        rows.push((path.clone(), series));
    }
    let fmt = |points: &[SnapshotPoint]| -> String {
        match points.last() {
            Some(p) => format!("{:.4} ± {:.4}", p.mean, p.stddev),
            None => "n/a".to_string(),
        }
    };
    println!(
        "{:<40} {:>24} {:>24} {:>24}",
        "file", "cum_regret", "cum_comm", "cluster_error"
    );
    for (path, series) in &rows {
        println!(
            "{:<40} {:>24} {:>24} {:>24}",
            path.display().to_string(),
            fmt(&series.cum_regret),
            fmt(&series.cum_comm),
            fmt(&series.cluster_error)
        );
    }
    Ok(())
}
