//! The round-by-round state machine wiring environment, agents and server
//! for each protocol variant, with communication-cost accounting.
//!
//! The asynchrony of the system is logical, not wall-clock: agents act on
//! models that are stale between downloads, which the sequential loop
//! captures exactly. One master seed splits into independent streams
//! (preference generation, arrivals, items, clicks, protocol coin) so that
//! protocol randomness never perturbs the environment trajectory across
//! variants sharing a seed.

use std::path::PathBuf;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::agent::{
    beta_federated, beta_single, ucb_values, AgentError, AgentState, AlgorithmParams, CommOrder,
    CommTrigger, Protocol,
};
use crate::environment::{
    oracle_topk, Environment, EnvironmentError, GroundTruth, SyntheticConfig,
};
use crate::ingest::IngestError;
use crate::numerics::NumericsError;
use crate::server::{ServerError, ServerState};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("components do not partition the user set: {0}")]
    NotAPartition(String),
}

/// Environment configuration for a run.
#[derive(Debug, Clone)]
pub enum EnvConfig {
    Synthetic(SyntheticConfig),
    Ratings(RatingsEnvConfig),
}

#[derive(Debug, Clone)]
pub struct RatingsEnvConfig {
    pub bundle_path: PathBuf,
    pub num_users: usize,
    pub items_per_round: usize,
    pub clip_weights: bool,
    /// Seed for sampling users out of the bundle; defaults to the run seed.
    pub sample_seed: Option<u64>,
}

/// What fired the communication this round, if anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    None,
    Determinant,
    AuxiliaryCoin,
    ForcedArrival,
}

impl From<Option<CommTrigger>> for Trigger {
    fn from(t: Option<CommTrigger>) -> Self {
        match t {
            None => Trigger::None,
            Some(CommTrigger::Determinant) => Trigger::Determinant,
            Some(CommTrigger::AuxiliaryCoin) => Trigger::AuxiliaryCoin,
            Some(CommTrigger::ForcedArrival) => Trigger::ForcedArrival,
        }
    }
}

/// Per-round metrics.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub t: usize,
    pub user: usize,
    pub action: Vec<usize>,
    pub pseudo_regret: f64,
    pub communicated: bool,
    pub trigger: Trigger,
    /// Sampled on snapshot rounds only.
    pub cluster_error_rate: Option<f64>,
}

/// Full trajectory of a run plus its cumulative series.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<RoundRecord>,
    pub cumulative_regret: Vec<f64>,
    pub cumulative_comm: Vec<u64>,
    pub final_components: Vec<Vec<usize>>,
}

/// Extra per-round observability for tests and diagnostics.
pub struct StepTrace<'a> {
    pub record: &'a RoundRecord,
    /// UCB values of the items actually played, in list order.
    pub action_ucbs: &'a [f64],
    /// True expected weights of the played items, in list order.
    pub action_weights: &'a [f64],
    /// Whether the acting agent had received at least one download before
    /// choosing this round's action.
    pub agent_synced_before: bool,
    /// Server edge count after this round.
    pub server_edges: usize,
}

/// Fraction of users whose server-side component is not set-equal to their
/// ground-truth cluster.
pub fn clustering_error_rate(
    components: &[Vec<usize>],
    gt: &GroundTruth,
) -> Result<f64, SimulationError> {
    let n = gt.num_users();
    let mut comp_of: Vec<Option<usize>> = vec![None; n];
    for (ci, comp) in components.iter().enumerate() {
        for &u in comp {
            if u >= n {
                return Err(SimulationError::NotAPartition(format!("unknown user {u}")));
            }
            if comp_of[u].is_some() {
                return Err(SimulationError::NotAPartition(format!("user {u} appears twice")));
            }
            comp_of[u] = Some(ci);
        }
    }
    if comp_of.iter().any(|c| c.is_none()) {
        return Err(SimulationError::NotAPartition("some user is missing".into()));
    }
    let truth = gt.clusters();
    let mut incorrect = 0usize;
    for u in 0..n {
        let comp = &components[comp_of[u].unwrap()];
        let cluster = &truth[gt.cluster_of[u]];
        // both sides are sorted member lists
        if comp != cluster {
            incorrect += 1;
        }
    }
    Ok(incorrect as f64 / n as f64)
}

fn stream(seed: u64, id: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const STREAM_THETA: u64 = 0;
const STREAM_ARRIVALS: u64 = 1;
const STREAM_ITEMS: u64 = 2;
const STREAM_CLICKS: u64 = 3;
const STREAM_COIN: u64 = 4;
const STREAM_SAMPLE: u64 = 5;

/// One seeded run of one protocol variant: the environment, all agents and
/// the server, advanced round by round.
pub struct Simulation {
    env: Environment,
    agents: Vec<AgentState>,
    server: ServerState,
    params: AlgorithmParams,
    beta: f64,
    arrivals_rng: ChaCha12Rng,
    items_rng: ChaCha12Rng,
    clicks_rng: ChaCha12Rng,
    coin_rng: ChaCha12Rng,
}

struct StepOutput {
    record: RoundRecord,
    action_ucbs: Vec<f64>,
    action_weights: Vec<f64>,
    agent_synced_before: bool,
}

impl Simulation {
    pub fn new(
        env_cfg: &EnvConfig,
        params: &AlgorithmParams,
        seed: u64,
    ) -> Result<Self, SimulationError> {
        params.validate()?;
        let env = match env_cfg {
            EnvConfig::Synthetic(cfg) => {
                cfg.validate()?;
                if cfg.list_len != params.list_len {
                    return Err(SimulationError::ConfigMismatch(format!(
                        "environment K ({}) != algorithm K ({})",
                        cfg.list_len, params.list_len
                    )));
                }
                Environment::synthetic(cfg, &mut stream(seed, STREAM_THETA))?
            }
            EnvConfig::Ratings(cfg) => {
                let bundle = crate::ingest::read_bundle(&cfg.bundle_path)?;
                let mut sample_rng = stream(cfg.sample_seed.unwrap_or(seed), STREAM_SAMPLE);
                Environment::from_bundle(
                    &bundle,
                    cfg.num_users,
                    cfg.items_per_round,
                    cfg.clip_weights,
                    &mut sample_rng,
                )?
            }
        };
        if env.dim() != params.dim {
            return Err(SimulationError::ConfigMismatch(format!(
                "environment dim ({}) != algorithm dim ({})",
                env.dim(),
                params.dim
            )));
        }
        if env.num_users() != params.num_users {
            return Err(SimulationError::ConfigMismatch(format!(
                "environment num_users ({}) != algorithm num_users ({})",
                env.num_users(),
                params.num_users
            )));
        }
        if params.list_len > env.items_per_round() {
            return Err(SimulationError::ConfigMismatch(format!(
                "K ({}) exceeds items_per_round ({})",
                params.list_len,
                env.items_per_round()
            )));
        }
        let agents = (0..params.num_users)
            .map(|u| AgentState::new(u, params.dim, params.lambda))
            .collect::<Result<Vec<_>, _>>()?;
        let server = ServerState::new(params.num_users, params.dim, params.lambda)?;
        Ok(Self {
            beta: beta_federated(params),
            env,
            agents,
            server,
            params: params.clone(),
            arrivals_rng: stream(seed, STREAM_ARRIVALS),
            items_rng: stream(seed, STREAM_ITEMS),
            clicks_rng: stream(seed, STREAM_CLICKS),
            coin_rng: stream(seed, STREAM_COIN),
        })
    }

    pub fn environment(&self) -> &Environment {
        &self.env
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn agent(&self, user: usize) -> &AgentState {
        &self.agents[user]
    }

    /// Executes one round and returns its record.
    pub fn step(&mut self, t: usize) -> Result<RoundRecord, SimulationError> {
        Ok(self.step_inner(t)?.record)
    }

    fn step_inner(&mut self, t: usize) -> Result<StepOutput, SimulationError> {
        let ctx = self.env.draw_round(t, &mut self.arrivals_rng, &mut self.items_rng)?;
        let agent = &mut self.agents[ctx.user];
        let agent_synced_before = agent.has_synced;

        let ucbs = if self.params.protocol == Protocol::FedInd {
            let (factor, theta) = agent.independent_model(self.params.lambda)?;
            let beta = beta_single(agent.local.count, &self.params);
            ucb_values(&factor, &theta, &ctx.items, beta)?
        } else {
            agent.compute_ucbs(&ctx.items, self.beta)?
        };
        let action = oracle_topk(&ucbs, self.params.list_len)?;
        let weights = self.env.round_weights(&ctx)?;
        let pseudo_regret = crate::environment::regret_against_best(&weights, &action)?;
        let feedback = self.env.play(&ctx, &action, &mut self.clicks_rng)?;
        agent.absorb_feedback(&ctx, &action, &feedback)?;

        let coin: f64 = self.coin_rng.gen();
        let trigger = agent.should_communicate(&self.params, t, coin)?;
        if trigger.is_some() {
            let upload = agent.local.clone();
            let skip_graph_update = self.params.protocol == Protocol::FedLinUcb;
            match self.params.comm_order {
                CommOrder::UploadFirst => {
                    self.server.receive_upload(ctx.user, &upload)?;
                    if !skip_graph_update {
                        self.server.update_graph(ctx.user, self.params.alpha_d)?;
                    }
                    let component = self.server.connected_component(ctx.user);
                    let model = self.server.aggregate_component(&component)?;
                    agent.apply_download(model.sigma, model.theta, t)?;
                }
                CommOrder::LiteralPseudocode => {
                    let component = self.server.connected_component(ctx.user);
                    let model = self.server.aggregate_component(&component)?;
                    self.server.receive_upload(ctx.user, &upload)?;
                    if !skip_graph_update {
                        self.server.update_graph(ctx.user, self.params.alpha_d)?;
                    }
                    agent.apply_download(model.sigma, model.theta, t)?;
                }
            }
        }

        let action_ucbs: Vec<f64> = action.items().iter().map(|&i| ucbs[i]).collect();
        let action_weights: Vec<f64> = action.items().iter().map(|&i| weights[i]).collect();
        let record = RoundRecord {
            t,
            user: ctx.user,
            action: action.items().to_vec(),
            pseudo_regret,
            communicated: trigger.is_some(),
            trigger: trigger.into(),
            cluster_error_rate: None,
        };
        Ok(StepOutput { record, action_ucbs, action_weights, agent_synced_before })
    }
}

/// Runs a full horizon. Cluster error is sampled every `snapshot_interval`
/// rounds (and at the final round); pass 0 to sample only at the end.
pub fn run(
    env_cfg: &EnvConfig,
    params: &AlgorithmParams,
    seed: u64,
    snapshot_interval: usize,
) -> Result<RunResult, SimulationError> {
    run_traced(env_cfg, params, seed, snapshot_interval, |_| {})
}

/// [`run`] with a per-round observer.
pub fn run_traced(
    env_cfg: &EnvConfig,
    params: &AlgorithmParams,
    seed: u64,
    snapshot_interval: usize,
    mut observer: impl FnMut(&StepTrace<'_>),
) -> Result<RunResult, SimulationError> {
    let mut sim = Simulation::new(env_cfg, params, seed)?;
    let horizon = params.horizon;
    let mut records = Vec::with_capacity(horizon);
    let mut cumulative_regret = Vec::with_capacity(horizon);
    let mut cumulative_comm = Vec::with_capacity(horizon);
    let mut regret_sum = 0.0;
    let mut comm_sum = 0u64;
    for t in 1..=horizon {
        let mut out = sim.step_inner(t)?;
        let at_snapshot =
            (snapshot_interval > 0 && t % snapshot_interval == 0) || t == horizon;
        if at_snapshot {
            let err = clustering_error_rate(&sim.server.components(), sim.env.ground_truth())?;
            out.record.cluster_error_rate = Some(err);
        }
        regret_sum += out.record.pseudo_regret;
        comm_sum += out.record.communicated as u64;
        cumulative_regret.push(regret_sum);
        cumulative_comm.push(comm_sum);
        observer(&StepTrace {
            record: &out.record,
            action_ucbs: &out.action_ucbs,
            action_weights: &out.action_weights,
            agent_synced_before: out.agent_synced_before,
            server_edges: sim.server.edge_count(),
        });
        records.push(out.record);
    }
    Ok(RunResult {
        records,
        cumulative_regret,
        cumulative_comm,
        final_components: sim.server.components(),
    })
}
