//! Trace-replay and cache-consistency checks for the agent and server.

mod common;

use common::{gauss_solve, rng};
use fedcascade::agent::{AgentState, AlgorithmParams, CommOrder, GramSummary, Protocol};
use fedcascade::environment::{oracle_topk, Environment, SyntheticConfig, ThetaMode};
use fedcascade::numerics::SymMatrix;
use fedcascade::server::ServerState;
use rand::Rng;

fn cfg() -> SyntheticConfig {
    SyntheticConfig {
        num_users: 3,
        num_clusters: 2,
        dim: 4,
        items_per_round: 8,
        list_len: 3,
        horizon: 50,
        theta_mode: ThetaMode::RandomNormalized,
        clip_weights: true,
    }
}

#[test]
fn absorbed_buffer_equals_independent_summation() {
    let c = cfg();
    let env = Environment::synthetic(&c, &mut rng(1)).unwrap();
    let mut arrivals = rng(2);
    let mut items = rng(3);
    let mut clicks = rng(4);
    let mut agent = AgentState::new(0, c.dim, 1.0).unwrap();

    // replay a recorded trace and accumulate the expected sums by hand
    let mut expect_sigma = vec![vec![0.0; c.dim]; c.dim];
    let mut expect_b = vec![0.0; c.dim];
    let mut expect_count = 0u64;
    for t in 1..=120 {
        let ctx = env.draw_round(t, &mut arrivals, &mut items).unwrap();
        let ucbs = agent.compute_ucbs(&ctx.items, 1.0).unwrap();
        let action = oracle_topk(&ucbs, c.list_len).unwrap();
        let fb = env.play(&ctx, &action, &mut clicks).unwrap();
        for k in 0..fb.observed {
            let x = &ctx.items[action.items()[k]];
            for i in 0..c.dim {
                for j in 0..c.dim {
                    expect_sigma[i][j] += x[i] * x[j];
                }
            }
            if fb.clicks[k] {
                for (e, v) in expect_b.iter_mut().zip(x) {
                    *e += v;
                }
            }
            expect_count += 1;
        }
        agent.absorb_feedback(&ctx, &action, &fb).unwrap();
    }
    assert_eq!(agent.local.count, expect_count);
    for i in 0..c.dim {
        for j in 0..c.dim {
            assert!((agent.local.sigma.entry(i, j) - expect_sigma[i][j]).abs() <= 1e-9);
        }
        assert!((agent.local.b[i] - expect_b[i]).abs() <= 1e-9);
    }
    // local count never exceeds K * acting rounds
    assert!(agent.local.count <= (c.list_len as u64) * 120);
}

#[test]
fn server_theta_cache_matches_recompute_from_scratch() {
    let dim = 3;
    let lambda = 0.7;
    let mut server = ServerState::new(2, dim, lambda).unwrap();
    let mut r = rng(5);
    // feed a series of random uploads and re-derive the cached estimate via
    // elimination on an independently accumulated matrix
    let mut sigma_rows = vec![vec![0.0; dim]; dim];
    let mut b_acc = vec![0.0; dim];
    for (i, row) in sigma_rows.iter_mut().enumerate() {
        row[i] = lambda;
    }
    for _ in 0..25 {
        let mut up = GramSummary::empty(dim).unwrap();
        for _ in 0..r.gen_range(1..=4) {
            let x = common::random_unit_vector(dim, &mut r);
            let w = r.gen_range(0..=1) as f64;
            up.absorb(&x, w).unwrap();
            for a in 0..dim {
                for b in 0..dim {
                    sigma_rows[a][b] += x[a] * x[b];
                }
            }
            for (acc, xi) in b_acc.iter_mut().zip(&x) {
                *acc += w * xi;
            }
        }
        server.receive_upload(0, &up).unwrap();
        let expect = gauss_solve(&sigma_rows, &b_acc).unwrap();
        for (g, e) in server.server_theta(0).iter().zip(&expect) {
            assert!((g - e).abs() <= 1e-9 * e.abs().max(1.0));
        }
    }
}

#[test]
fn deletion_only_edges_under_random_uploads() {
    let mut server = ServerState::new(6, 2, 1.0).unwrap();
    let mut r = rng(6);
    let mut prev_edges = server.edge_count();
    for _ in 0..200 {
        let user = r.gen_range(0..6);
        let mut up = GramSummary::empty(2).unwrap();
        let x = common::random_unit_vector(2, &mut r);
        up.absorb(&x, r.gen_range(0..=1) as f64).unwrap();
        server.receive_upload(user, &up).unwrap();
        server.update_graph(user, 0.3).unwrap();
        let edges = server.edge_count();
        assert!(edges <= prev_edges);
        prev_edges = edges;
    }
}

#[test]
fn download_then_det_condition_is_false_with_empty_buffer() {
    let p = AlgorithmParams {
        protocol: Protocol::NoAuxiliary,
        lambda: 1.0,
        alpha_c: 0.01,
        alpha_d: 1.0,
        delta: 0.05,
        noise_scale: 0.5,
        list_len: 2,
        dim: 3,
        horizon: 100,
        num_users: 2,
        comm_order: CommOrder::UploadFirst,
    };
    let mut agent = AgentState::new(0, 3, 1.0).unwrap();
    let mut sigma = SymMatrix::regularized(3, 1.0).unwrap();
    sigma.rank1_update(&[0.5, 0.5, 0.5], 1.0).unwrap();
    agent.apply_download(sigma, vec![0.1, 0.2, 0.3], 10).unwrap();
    assert_eq!(agent.should_communicate(&p, 11, 0.9).unwrap(), None);
}
