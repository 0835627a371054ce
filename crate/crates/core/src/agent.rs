//! The local learning agent: UCB scoring from the last downloaded model,
//! local Gram-buffer accumulation from cascade feedback, and the
//! communication-trigger rules for every protocol variant.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::environment::{Action, Feedback, RoundContext};
use crate::numerics::{det_condition, dot, Cholesky, NumericsError, SymMatrix};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("feedback inconsistent with action: {0}")]
    BadFeedback(String),
}

/// Which communication rule a run follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Determinant trigger plus the `min(1, 3 ln t / t)` auxiliary coin.
    FedC3UcbH,
    /// Determinant trigger only.
    NoAuxiliary,
    /// Determinant trigger plus forced communication on power-of-two arrivals.
    ForceComm,
    /// Clustering disabled: one permanent component, determinant trigger only.
    FedLinUcb,
    /// No server at all; agents learn from their own data only.
    FedInd,
}

impl Protocol {
    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::FedC3UcbH => "fedc3ucb_h",
            Protocol::NoAuxiliary => "no_auxiliary",
            Protocol::ForceComm => "force_comm",
            Protocol::FedLinUcb => "fed_lin_ucb",
            Protocol::FedInd => "fed_ind",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fedc3ucb_h" => Ok(Protocol::FedC3UcbH),
            "no_auxiliary" => Ok(Protocol::NoAuxiliary),
            "force_comm" => Ok(Protocol::ForceComm),
            "fed_lin_ucb" => Ok(Protocol::FedLinUcb),
            "fed_ind" => Ok(Protocol::FedInd),
            other => Err(format!(
                "unknown protocol '{other}' (expected fedc3ucb_h, no_auxiliary, force_comm, fed_lin_ucb or fed_ind)"
            )),
        }
    }
}

/// Order of server-side operations on a communication round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CommOrder {
    /// Apply the upload, run the heterogeneity test, then aggregate the
    /// post-deletion component for download.
    #[default]
    UploadFirst,
    /// Compatibility mode: aggregate the pre-upload, pre-deletion component
    /// first, so the download excludes the acting agent's fresh upload.
    LiteralPseudocode,
}

#[derive(Debug, Clone)]
pub struct AlgorithmParams {
    pub protocol: Protocol,
    pub lambda: f64,
    pub alpha_c: f64,
    pub alpha_d: f64,
    pub delta: f64,
    /// Sub-Gaussian noise scale R; Bernoulli clicks give R = 1/2.
    pub noise_scale: f64,
    /// Cascade list length K.
    pub list_len: usize,
    pub dim: usize,
    pub horizon: usize,
    pub num_users: usize,
    pub comm_order: CommOrder,
}

impl AlgorithmParams {
    pub fn validate(&self) -> Result<(), AgentError> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("alpha_c", self.alpha_c),
            ("alpha_d", self.alpha_d),
            ("R", self.noise_scale),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(AgentError::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(AgentError::InvalidParameter(format!(
                "delta must be in (0,1), got {}",
                self.delta
            )));
        }
        if self.list_len == 0 || self.dim == 0 || self.num_users == 0 {
            return Err(AgentError::InvalidParameter(
                "K, dim and num_users must be >= 1".into(),
            ));
        }
        if self.protocol == Protocol::ForceComm && !(self.lambda > self.list_len as f64) {
            return Err(AgentError::InvalidParameter(format!(
                "force_comm requires lambda > K, got lambda={} K={}",
                self.lambda, self.list_len
            )));
        }
        Ok(())
    }
}

/// Confidence radius for the federated decision model. The staleness factor
/// `sqrt(1 + U*alpha_c) + U*sqrt(2*alpha_c)` inflates a self-normalized bound
/// whose scale is set by the noise level R; the `sqrt(lambda)` prior term is
/// not scaled by R.
pub fn beta_federated(p: &AlgorithmParams) -> f64 {
    let u = p.num_users as f64;
    let d = p.dim as f64;
    let kt = (p.list_len * p.horizon) as f64;
    let inflation = (1.0 + u * p.alpha_c).sqrt() + u * (2.0 * p.alpha_c).sqrt();
    let inner = d * (1.0 + kt / (p.alpha_c * p.lambda * d)).ln()
        + 2.0 * (1.0 / p.delta).ln()
        + 4.0 * ((p.horizon as f64) * u).ln();
    p.lambda.sqrt() + p.noise_scale * inflation * inner.sqrt()
}

/// Single-agent self-normalized radius used by the independent baseline,
/// parameterized by that agent's own observation count.
pub fn beta_single(count: u64, p: &AlgorithmParams) -> f64 {
    let d = p.dim as f64;
    let inner = d * (1.0 + count as f64 / (p.lambda * d)).ln() + 2.0 * (1.0 / p.delta).ln();
    p.noise_scale * inner.sqrt() + p.lambda.sqrt()
}

/// Auxiliary communication probability `min(1, 3 ln t / t)`.
pub fn auxiliary_probability(t: usize) -> f64 {
    if t == 0 {
        return 0.0;
    }
    let t = t as f64;
    (3.0 * t.ln() / t).clamp(0.0, 1.0)
}

/// Why a communication fired this round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommTrigger {
    Determinant,
    AuxiliaryCoin,
    ForcedArrival,
}

/// Sufficient statistics of ridge regression over observed item pulls:
/// `sigma = sum x x^T`, `b = sum w x`, and the pull count.
#[derive(Debug, Clone)]
pub struct GramSummary {
    pub sigma: SymMatrix,
    pub b: Vec<f64>,
    pub count: u64,
}

impl GramSummary {
    pub fn empty(dim: usize) -> Result<Self, NumericsError> {
        Ok(Self { sigma: SymMatrix::zeros(dim)?, b: vec![0.0; dim], count: 0 })
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn absorb(&mut self, x: &[f64], weight: f64) -> Result<(), NumericsError> {
        self.sigma.rank1_update(x, 1.0)?;
        for (bi, xi) in self.b.iter_mut().zip(x) {
            *bi += weight * xi;
        }
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &GramSummary) -> Result<(), NumericsError> {
        self.sigma.add_assign(&other.sigma)?;
        for (bi, oi) in self.b.iter_mut().zip(&other.b) {
            *bi += oi;
        }
        self.count += other.count;
        Ok(())
    }
}

/// Agent-side state: the decision model frozen since the last download, the
/// local buffer of not-yet-uploaded observations, and the arrival counter.
pub struct AgentState {
    pub user: usize,
    model_sigma: SymMatrix,
    model_factor: Cholesky,
    model_theta: Vec<f64>,
    pub local: GramSummary,
    pub arrivals: u64,
    pub last_sync_round: usize,
    pub has_synced: bool,
}

impl AgentState {
    /// Cold start: a `lambda * I` decision matrix and a zero estimate, the
    /// natural limit of any later download.
    pub fn new(user: usize, dim: usize, lambda: f64) -> Result<Self, AgentError> {
        let model_sigma = SymMatrix::regularized(dim, lambda)?;
        let model_factor = model_sigma.factorize()?;
        Ok(Self {
            user,
            model_theta: vec![0.0; dim],
            local: GramSummary::empty(dim)?,
            arrivals: 0,
            last_sync_round: 0,
            has_synced: false,
            model_sigma,
            model_factor,
        })
    }

    pub fn model_sigma(&self) -> &SymMatrix {
        &self.model_sigma
    }

    pub fn model_theta(&self) -> &[f64] {
        &self.model_theta
    }

    /// UCB value per item: `min(theta . x + beta * ||x||_{Sigma^-1}, 1)`,
    /// floored at 0 so every value is a valid optimistic click probability.
    pub fn compute_ucbs(&self, items: &[Vec<f64>], beta: f64) -> Result<Vec<f64>, AgentError> {
        ucb_values(&self.model_factor, &self.model_theta, items, beta)
    }

    /// Folds the observed prefix of a cascade round into the local buffer
    /// and counts the arrival.
    pub fn absorb_feedback(
        &mut self,
        ctx: &RoundContext,
        action: &Action,
        fb: &Feedback,
    ) -> Result<(), AgentError> {
        if fb.observed > action.len() || fb.clicks.len() != fb.observed {
            return Err(AgentError::BadFeedback(format!(
                "observed {} clicks {} for action of length {}",
                fb.observed,
                fb.clicks.len(),
                action.len()
            )));
        }
        for k in 0..fb.observed {
            let x = &ctx.items[action.items()[k]];
            self.local.absorb(x, if fb.clicks[k] { 1.0 } else { 0.0 })?;
        }
        self.arrivals += 1;
        Ok(())
    }

    /// Evaluates this round's communication decision. `coin` is a uniform
    /// draw in [0,1) from the protocol stream; it is only consulted by the
    /// auxiliary rule. Communication fires when either condition holds; the
    /// protocol-specific rule wins the attribution so that auxiliary/forced
    /// counts reflect their own firing rates.
    pub fn should_communicate(
        &self,
        p: &AlgorithmParams,
        t: usize,
        coin: f64,
    ) -> Result<Option<CommTrigger>, AgentError> {
        match p.protocol {
            Protocol::FedInd => return Ok(None),
            Protocol::FedC3UcbH if coin < auxiliary_probability(t) => {
                return Ok(Some(CommTrigger::AuxiliaryCoin))
            }
            Protocol::ForceComm if self.arrivals.is_power_of_two() => {
                return Ok(Some(CommTrigger::ForcedArrival))
            }
            _ => {}
        }
        if det_condition(&self.model_sigma, &self.local.sigma, p.alpha_c)? {
            return Ok(Some(CommTrigger::Determinant));
        }
        Ok(None)
    }

    /// Installs a downloaded cluster model and clears the local buffer.
    pub fn apply_download(
        &mut self,
        sigma: SymMatrix,
        theta: Vec<f64>,
        t: usize,
    ) -> Result<(), AgentError> {
        self.model_factor = sigma.factorize()?;
        self.model_sigma = sigma;
        self.model_theta = theta;
        self.local = GramSummary::empty(self.model_sigma.dim())?;
        self.last_sync_round = t;
        self.has_synced = true;
        Ok(())
    }

    /// Decision model for the independent baseline: ridge over the agent's
    /// own all-time buffer, which is never reset.
    pub fn independent_model(&self, lambda: f64) -> Result<(Cholesky, Vec<f64>), AgentError> {
        let mut sigma = SymMatrix::regularized(self.local.sigma.dim(), lambda)?;
        sigma.add_assign(&self.local.sigma)?;
        let factor = sigma.factorize()?;
        let theta = factor.solve(&self.local.b)?;
        Ok((factor, theta))
    }
}

/// Shared UCB kernel over an explicit factorized model.
pub fn ucb_values(
    factor: &Cholesky,
    theta: &[f64],
    items: &[Vec<f64>],
    beta: f64,
) -> Result<Vec<f64>, AgentError> {
    items
        .iter()
        .map(|x| {
            let est = dot(theta, x) + beta * factor.mahalanobis(x)?;
            Ok(est.clamp(0.0, 1.0))
        })
        .collect()
}
