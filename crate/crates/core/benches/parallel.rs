//! Sequential vs rayon-parallel throughput on the two data-parallel cores:
//! experiment replications and the dense SVD inner loops.

use criterion::{criterion_group, criterion_main, Criterion};

use fedcascade::agent::{AlgorithmParams, CommOrder, Protocol};
use fedcascade::environment::{SyntheticConfig, ThetaMode};
use fedcascade::ingest::{truncated_svd, Matrix};
use fedcascade::protocol::EnvConfig;
use fedcascade::runner::{
    aggregate, run_replications_parallel, run_replications_sequential, ExperimentConfig,
};

fn experiment_config() -> ExperimentConfig {
    let num_users = 8;
    let dim = 8;
    let horizon = 1500;
    ExperimentConfig {
        env: EnvConfig::Synthetic(SyntheticConfig {
            num_users,
            num_clusters: 2,
            dim,
            items_per_round: 25,
            list_len: 4,
            horizon,
            theta_mode: ThetaMode::Orthogonal,
            clip_weights: true,
        }),
        params: AlgorithmParams {
            protocol: Protocol::FedC3UcbH,
            lambda: 1.0,
            alpha_c: 1.0 / (num_users * num_users) as f64,
            alpha_d: 1.0,
            delta: 1.0 / horizon as f64,
            noise_scale: 0.5,
            list_len: 4,
            dim,
            horizon,
            num_users,
            comm_order: CommOrder::UploadFirst,
        },
        num_runs: 4,
        base_seed: 7,
        snapshot_interval: 250,
    }
}

fn bench_replications(c: &mut Criterion) {
    let cfg = experiment_config();
    let mut group = c.benchmark_group("replications");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| aggregate(&run_replications_sequential(&cfg).unwrap()).unwrap())
    });
    group.bench_function("parallel", |b| {
        b.iter(|| aggregate(&run_replications_parallel(&cfg).unwrap()).unwrap())
    });
    group.finish();
}

fn bench_svd(c: &mut Criterion) {
    // a deterministic 200x200 matrix with decaying spectrum
    let n = 200;
    let mut m = Matrix::zeros(n, n);
    for r in 0..n {
        for col in 0..n {
            let v = ((r * 31 + col * 17) % 97) as f64 / 97.0
                + if r == col { 2.0 + 1.0 / (1 + r) as f64 } else { 0.0 };
            m.set(r, col, v);
        }
    }
    let mut group = c.benchmark_group("svd_200x200_rank10");
    group.sample_size(10);
    // the parallel/sequential split lives behind the crate feature; this
    // target builds with the feature on, so the comparison partner is the
    // same benchmark run with `--no-default-features` builds of the crate.
    group.bench_function("truncated_svd", |b| b.iter(|| truncated_svd(&m, 10).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_replications, bench_svd);
criterion_main!(benches);
