//! The world: users, clusters and preference vectors, per-round item
//! contexts, cascade feedback sampling, the exact top-K oracle and per-round
//! pseudo-regret.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::numerics::{dot, l2_distance, l2_norm};

#[derive(Debug, Error)]
pub enum EnvironmentError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("expected weight {value} outside [0,1] for user {user} with clipping disabled")]
    WeightOutOfRange { user: usize, value: f64 },
    #[error("item pool has {pool} items but {requested} were requested per round")]
    PoolTooSmall { pool: usize, requested: usize },
    #[error("oracle needs at least {k} items, got {items}")]
    TooFewItems { items: usize, k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaMode {
    /// Random orthonormal preference vectors (pairwise distance `sqrt(2)`).
    Orthogonal,
    /// Standard-Gaussian entries normalized to unit length.
    RandomNormalized,
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub num_users: usize,
    pub num_clusters: usize,
    pub dim: usize,
    pub items_per_round: usize,
    /// Number of items recommended per round (the cascade list length).
    pub list_len: usize,
    pub horizon: usize,
    pub theta_mode: ThetaMode,
    pub clip_weights: bool,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), EnvironmentError> {
        if self.num_users == 0 || self.num_clusters == 0 || self.dim == 0 {
            return Err(EnvironmentError::InvalidConfig(
                "num_users, num_clusters and dim must be >= 1".into(),
            ));
        }
        if self.num_clusters > self.num_users {
            return Err(EnvironmentError::InvalidConfig(format!(
                "num_clusters ({}) must not exceed num_users ({})",
                self.num_clusters, self.num_users
            )));
        }
        if self.theta_mode == ThetaMode::Orthogonal && self.num_clusters > self.dim {
            return Err(EnvironmentError::InvalidConfig(format!(
                "orthogonal theta_mode needs dim >= num_clusters, got dim={} < {}",
                self.dim, self.num_clusters
            )));
        }
        if self.list_len == 0 || self.list_len > self.items_per_round {
            return Err(EnvironmentError::InvalidConfig(format!(
                "list length K ({}) must be in [1, items_per_round ({})]",
                self.list_len, self.items_per_round
            )));
        }
        Ok(())
    }
}

/// The hidden state of the world: cluster membership and the per-cluster
/// preference vectors.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Cluster index of each user.
    pub cluster_of: Vec<usize>,
    /// One preference vector per cluster, each with l2 norm <= 1.
    pub thetas: Vec<Vec<f64>>,
    /// Minimum pairwise distance between distinct preference vectors;
    /// `+inf` when there is a single cluster.
    pub realized_gamma: f64,
}

impl GroundTruth {
    pub fn num_users(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn num_clusters(&self) -> usize {
        self.thetas.len()
    }

    pub fn dim(&self) -> usize {
        self.thetas[0].len()
    }

    pub fn theta_of(&self, user: usize) -> &[f64] {
        &self.thetas[self.cluster_of[user]]
    }

    /// The partition of users by cluster, each member list sorted.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters()];
        for (user, &c) in self.cluster_of.iter().enumerate() {
            out[c].push(user);
        }
        out
    }
}

fn gaussian_vector(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit_gaussian_vector(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let mut v = gaussian_vector(dim, rng);
        let n = l2_norm(&v);
        if n > 1e-12 {
            for e in &mut v {
                *e /= n;
            }
            return v;
        }
    }
}

fn min_pairwise_distance(thetas: &[Vec<f64>]) -> f64 {
    if thetas.len() < 2 {
        return f64::INFINITY;
    }
    let mut gamma = f64::INFINITY;
    for i in 0..thetas.len() {
        for j in (i + 1)..thetas.len() {
            gamma = gamma.min(l2_distance(&thetas[i], &thetas[j]));
        }
    }
    gamma
}

/// Draws cluster preference vectors and assigns users to clusters round-robin
/// before shuffling, so every cluster is nonempty and sizes are near-equal.
pub fn generate_synthetic(
    cfg: &SyntheticConfig,
    rng: &mut impl Rng,
) -> Result<GroundTruth, EnvironmentError> {
    cfg.validate()?;
    let j = cfg.num_clusters;
    let thetas = match cfg.theta_mode {
        ThetaMode::RandomNormalized => {
            (0..j).map(|_| unit_gaussian_vector(cfg.dim, rng)).collect::<Vec<_>>()
        }
        ThetaMode::Orthogonal => {
            let mut basis: Vec<Vec<f64>> = Vec::with_capacity(j);
            while basis.len() < j {
                let mut v = gaussian_vector(cfg.dim, rng);
                for b in &basis {
                    let p = dot(&v, b);
                    for (ve, be) in v.iter_mut().zip(b) {
                        *ve -= p * be;
                    }
                }
                let n = l2_norm(&v);
                if n > 1e-6 {
                    for e in &mut v {
                        *e /= n;
                    }
                    basis.push(v);
                }
            }
            basis
        }
    };
    let mut cluster_of: Vec<usize> = (0..cfg.num_users).map(|i| i % j).collect();
    use rand::seq::SliceRandom;
    cluster_of.shuffle(rng);
    let realized_gamma = min_pairwise_distance(&thetas);
    Ok(GroundTruth { cluster_of, thetas, realized_gamma })
}

/// One round's context: the acting user and the item feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundContext {
    pub t: usize,
    pub user: usize,
    pub items: Vec<Vec<f64>>,
}

/// An ordered list of distinct item indices into the round's item list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Action {
    items: Vec<usize>,
}

impl Action {
    pub fn new(items: Vec<usize>) -> Result<Self, EnvironmentError> {
        if items.is_empty() {
            return Err(EnvironmentError::InvalidAction("action must contain at least one item".into()));
        }
        let mut seen = items.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(EnvironmentError::InvalidAction("action items must be distinct".into()));
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn validate_against(&self, ctx: &RoundContext) -> Result<(), EnvironmentError> {
        if let Some(&bad) = self.items.iter().find(|&&i| i >= ctx.items.len()) {
            return Err(EnvironmentError::InvalidAction(format!(
                "item index {bad} out of range for {} items",
                ctx.items.len()
            )));
        }
        Ok(())
    }
}

/// Cascade feedback: the user scans the list in order and stops at the first
/// click, so exactly `observed` prefix items carry click observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Feedback {
    /// Number of observed prefix items (position of the first click, or the
    /// full list length if nothing was clicked).
    pub observed: usize,
    /// Click indicator per observed position; at most the last one is true.
    pub clicks: Vec<bool>,
    /// Whether any item was clicked.
    pub clicked: bool,
    /// 1.0 on a click, 0.0 otherwise.
    pub realized_reward: f64,
}

enum ItemSource {
    /// Fresh unit-norm Gaussian vectors every round.
    Fresh { dim: usize },
    /// Uniform sampling without replacement from a fixed pool.
    Pool(Vec<Vec<f64>>),
}

/// An immutable world instance; rng streams are supplied by the caller so
/// that arrival, item and click randomness stay on separate streams.
pub struct Environment {
    gt: GroundTruth,
    source: ItemSource,
    items_per_round: usize,
    clip_weights: bool,
}

impl Environment {
    pub fn synthetic(cfg: &SyntheticConfig, rng: &mut impl Rng) -> Result<Self, EnvironmentError> {
        let gt = generate_synthetic(cfg, rng)?;
        Ok(Self {
            source: ItemSource::Fresh { dim: cfg.dim },
            items_per_round: cfg.items_per_round,
            clip_weights: cfg.clip_weights,
            gt,
        })
    }

    /// Ratings-mode world: samples `num_users` users without replacement
    /// from an embedding bundle. Each sampled user keeps its cluster's
    /// center as preference vector; cluster labels are reindexed over the
    /// sample and items come from the bundle's fixed pool.
    pub fn from_bundle(
        bundle: &crate::ingest::EmbeddingBundle,
        num_users: usize,
        items_per_round: usize,
        clip_weights: bool,
        sample_rng: &mut impl Rng,
    ) -> Result<Self, EnvironmentError> {
        if num_users == 0 || num_users > bundle.num_users() {
            return Err(EnvironmentError::InvalidConfig(format!(
                "num_users ({num_users}) must be in [1, bundle users ({})]",
                bundle.num_users()
            )));
        }
        let picked = rand::seq::index::sample(sample_rng, bundle.num_users(), num_users);
        let mut thetas: Vec<Vec<f64>> = Vec::new();
        let mut label_of_bundle_cluster: Vec<Option<usize>> = vec![None; bundle.num_clusters];
        let mut cluster_of = Vec::with_capacity(num_users);
        for u in picked.iter() {
            let c = bundle.cluster_of[u];
            let label = *label_of_bundle_cluster[c].get_or_insert_with(|| {
                thetas.push(bundle.user_thetas[u].clone());
                thetas.len() - 1
            });
            cluster_of.push(label);
        }
        let realized_gamma = min_pairwise_distance(&thetas);
        let gt = GroundTruth { cluster_of, thetas, realized_gamma };
        Self::from_pool(gt, bundle.item_features.clone(), items_per_round, clip_weights)
    }

    /// A world over a fixed item pool (items are assumed unit-norm).
    pub fn from_pool(
        gt: GroundTruth,
        pool: Vec<Vec<f64>>,
        items_per_round: usize,
        clip_weights: bool,
    ) -> Result<Self, EnvironmentError> {
        if pool.len() < items_per_round {
            return Err(EnvironmentError::PoolTooSmall { pool: pool.len(), requested: items_per_round });
        }
        if pool.iter().any(|x| x.len() != gt.dim()) {
            return Err(EnvironmentError::InvalidConfig("pool item dimension mismatch".into()));
        }
        Ok(Self { gt, source: ItemSource::Pool(pool), items_per_round, clip_weights })
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.gt
    }

    pub fn dim(&self) -> usize {
        self.gt.dim()
    }

    pub fn num_users(&self) -> usize {
        self.gt.num_users()
    }

    pub fn items_per_round(&self) -> usize {
        self.items_per_round
    }

    pub fn draw_round(
        &self,
        t: usize,
        arrival_rng: &mut impl Rng,
        item_rng: &mut impl Rng,
    ) -> Result<RoundContext, EnvironmentError> {
        let user = arrival_rng.gen_range(0..self.gt.num_users());
        let items = match &self.source {
            ItemSource::Fresh { dim } => {
                (0..self.items_per_round).map(|_| unit_gaussian_vector(*dim, item_rng)).collect()
            }
            ItemSource::Pool(pool) => {
                if pool.len() < self.items_per_round {
                    return Err(EnvironmentError::PoolTooSmall {
                        pool: pool.len(),
                        requested: self.items_per_round,
                    });
                }
                rand::seq::index::sample(item_rng, pool.len(), self.items_per_round)
                    .iter()
                    .map(|i| pool[i].clone())
                    .collect()
            }
        };
        Ok(RoundContext { t, user, items })
    }

    /// Expected weight of one item for one user, under this world's clipping
    /// policy. With clipping disabled an out-of-range inner product is an
    /// error because it is not a valid Bernoulli parameter.
    pub fn checked_weight(&self, user: usize, x: &[f64]) -> Result<f64, EnvironmentError> {
        let w = expected_weight(&self.gt, user, x, self.clip_weights);
        if !(0.0..=1.0).contains(&w) {
            return Err(EnvironmentError::WeightOutOfRange { user, value: w });
        }
        Ok(w)
    }

    /// Expected weights of all items in a round for the acting user.
    pub fn round_weights(&self, ctx: &RoundContext) -> Result<Vec<f64>, EnvironmentError> {
        ctx.items.iter().map(|x| self.checked_weight(ctx.user, x)).collect()
    }

    /// Plays an action under the cascade model: items are scanned in order,
    /// each clicking independently with its expected weight, stopping at the
    /// first click. Consumes exactly `observed` draws from `rng`.
    pub fn play(
        &self,
        ctx: &RoundContext,
        action: &Action,
        rng: &mut impl Rng,
    ) -> Result<Feedback, EnvironmentError> {
        action.validate_against(ctx)?;
        let mut clicks = Vec::with_capacity(action.len());
        let mut clicked = false;
        for &idx in action.items() {
            let w = self.checked_weight(ctx.user, &ctx.items[idx])?;
            let u: f64 = rng.gen();
            let hit = u < w;
            clicks.push(hit);
            if hit {
                clicked = true;
                break;
            }
        }
        Ok(Feedback {
            observed: clicks.len(),
            clicked,
            realized_reward: if clicked { 1.0 } else { 0.0 },
            clicks,
        })
    }

    /// `f(a*, w) - f(a, w)` against the exact top-K action on the true
    /// expected weights; always nonnegative.
    pub fn per_round_regret(
        &self,
        ctx: &RoundContext,
        action: &Action,
    ) -> Result<f64, EnvironmentError> {
        action.validate_against(ctx)?;
        let weights = self.round_weights(ctx)?;
        regret_against_best(&weights, action)
    }
}

pub(crate) fn regret_against_best(
    weights: &[f64],
    action: &Action,
) -> Result<f64, EnvironmentError> {
    let best = oracle_topk(weights, action.len())?;
    let best_reward = expected_reward_of(weights, &best);
    let got = expected_reward_of(weights, action);
    Ok((best_reward - got).max(0.0))
}

fn expected_reward_of(weights: &[f64], action: &Action) -> f64 {
    let ws: Vec<f64> = action.items().iter().map(|&i| weights[i]).collect();
    expected_reward(&ws)
}

/// Expected weight `<theta_user, x>`, clipped into [0,1] when `clip` is set.
pub fn expected_weight(gt: &GroundTruth, user: usize, x: &[f64], clip: bool) -> f64 {
    let w = dot(gt.theta_of(user), x);
    if clip {
        w.clamp(0.0, 1.0)
    } else {
        w
    }
}

/// Expected cascade reward `1 - prod_k (1 - w_k)`; an empty list yields 0.
pub fn expected_reward(weights: &[f64]) -> f64 {
    1.0 - weights.iter().map(|w| 1.0 - w).product::<f64>()
}

/// The exact oracle for the disjunctive cascade reward: the K items with the
/// largest values, ordered by decreasing value, ties broken by lowest index.
pub fn oracle_topk(values: &[f64], k: usize) -> Result<Action, EnvironmentError> {
    if values.len() < k {
        return Err(EnvironmentError::TooFewItems { items: values.len(), k });
    }
    if k == 0 {
        return Err(EnvironmentError::InvalidAction("k must be >= 1".into()));
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_unstable_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Action::new(idx)
}
