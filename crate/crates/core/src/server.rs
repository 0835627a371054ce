//! The central server: per-agent uploaded summaries with cached ridge
//! estimates, the pairwise heterogeneity test over a deletion-only user
//! graph, and connected-component aggregation for downloads.

use thiserror::Error;

use crate::agent::GramSummary;
use crate::numerics::{l2_distance, NumericsError, SymMatrix};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("unknown user id {user} (server tracks {num_users} users)")]
    UnknownUser { user: usize, num_users: usize },
    #[error("component must be nonempty")]
    EmptyComponent,
}

/// Aggregated model of one connected component: `sigma = lambda I + sum of
/// member summaries`, with `theta = sigma^{-1} b`.
#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub sigma: SymMatrix,
    pub b: Vec<f64>,
    pub theta: Vec<f64>,
}

/// Server state: one summary and cached estimate per user, plus the
/// undirected heterogeneity graph, which starts complete and only ever loses
/// edges.
pub struct ServerState {
    lambda: f64,
    dim: usize,
    summaries: Vec<GramSummary>,
    thetas: Vec<Vec<f64>>,
    adjacency: Vec<Vec<bool>>,
    edge_count: usize,
}

impl ServerState {
    pub fn new(num_users: usize, dim: usize, lambda: f64) -> Result<Self, ServerError> {
        let summaries = (0..num_users)
            .map(|_| GramSummary::empty(dim))
            .collect::<Result<Vec<_>, _>>()?;
        let mut adjacency = vec![vec![true; num_users]; num_users];
        for (u, row) in adjacency.iter_mut().enumerate() {
            row[u] = false;
        }
        Ok(Self {
            lambda,
            dim,
            summaries,
            thetas: vec![vec![0.0; dim]; num_users],
            adjacency,
            edge_count: num_users * num_users.saturating_sub(1) / 2,
        })
    }

    pub fn num_users(&self) -> usize {
        self.summaries.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a][b]
    }

    pub fn observation_count(&self, user: usize) -> u64 {
        self.summaries[user].count
    }

    /// Cached per-agent ridge estimate `(lambda I + Sigma_ser)^{-1} b_ser`.
    pub fn server_theta(&self, user: usize) -> &[f64] {
        &self.thetas[user]
    }

    fn check_user(&self, user: usize) -> Result<(), ServerError> {
        if user >= self.num_users() {
            return Err(ServerError::UnknownUser { user, num_users: self.num_users() });
        }
        Ok(())
    }

    fn recompute_theta(&mut self, user: usize) -> Result<(), ServerError> {
        let mut sigma = SymMatrix::regularized(self.dim, self.lambda)?;
        sigma.add_assign(&self.summaries[user].sigma)?;
        self.thetas[user] = sigma.factorize()?.solve(&self.summaries[user].b)?;
        Ok(())
    }

    /// Folds an uploaded local buffer into the user's server-side summary and
    /// refreshes the cached estimate.
    pub fn receive_upload(&mut self, user: usize, upload: &GramSummary) -> Result<(), ServerError> {
        self.check_user(user)?;
        self.summaries[user].merge(upload)?;
        self.recompute_theta(user)
    }

    fn delete_edge(&mut self, a: usize, b: usize) {
        if self.adjacency[a][b] {
            self.adjacency[a][b] = false;
            self.adjacency[b][a] = false;
            self.edge_count -= 1;
        }
    }

    /// Runs the heterogeneity test between the acting user and each of its
    /// current neighbors, deleting the edge when the estimate gap strictly
    /// exceeds the count-dependent threshold. Touches no other edges.
    pub fn update_graph(&mut self, acting: usize, alpha_d: f64) -> Result<usize, ServerError> {
        self.check_user(acting)?;
        let acting_count = self.summaries[acting].count;
        let mut doomed = Vec::new();
        for u in 0..self.num_users() {
            if !self.adjacency[acting][u] {
                continue;
            }
            let gap = l2_distance(&self.thetas[acting], &self.thetas[u]);
            let thr = heterogeneity_threshold(acting_count, self.summaries[u].count, alpha_d);
            if gap > thr {
                doomed.push(u);
            }
        }
        for u in &doomed {
            self.delete_edge(acting, *u);
        }
        Ok(doomed.len())
    }

    /// Maximal connected set containing `user` under the current edge set,
    /// by breadth-first traversal; members sorted ascending.
    pub fn connected_component(&self, user: usize) -> Vec<usize> {
        let n = self.num_users();
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::new();
        seen[user] = true;
        queue.push_back(user);
        let mut members = Vec::new();
        while let Some(v) = queue.pop_front() {
            members.push(v);
            for w in 0..n {
                if self.adjacency[v][w] && !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        members.sort_unstable();
        members
    }

    /// All connected components, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.num_users();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for u in 0..n {
            if !seen[u] {
                let comp = self.connected_component(u);
                for &v in &comp {
                    seen[v] = true;
                }
                out.push(comp);
            }
        }
        out
    }

    /// Builds the downloadable model for a component.
    pub fn aggregate_component(&self, component: &[usize]) -> Result<ClusterModel, ServerError> {
        if component.is_empty() {
            return Err(ServerError::EmptyComponent);
        }
        let mut sigma = SymMatrix::regularized(self.dim, self.lambda)?;
        let mut b = vec![0.0; self.dim];
        for &u in component {
            self.check_user(u)?;
            sigma.add_assign(&self.summaries[u].sigma)?;
            for (bi, si) in b.iter_mut().zip(&self.summaries[u].b) {
                *bi += si;
            }
        }
        let theta = sigma.factorize()?.solve(&b)?;
        Ok(ClusterModel { sigma, b, theta })
    }
}

/// Deletion threshold `alpha_d * (sqrt((1+ln(1+T_a))/(1+T_a)) +
/// sqrt((1+ln(1+T_b))/(1+T_b)))`, strictly decreasing in each count.
pub fn heterogeneity_threshold(count_a: u64, count_b: u64, alpha_d: f64) -> f64 {
    let term = |c: u64| {
        let c = c as f64;
        ((1.0 + (1.0 + c).ln()) / (1.0 + c)).sqrt()
    };
    alpha_d * (term(count_a) + term(count_b))
}
