//! Group Relative Policy Optimization.
//!
//! Advantages are standardized within each rollout group, the per-sample
//! objective is the clipped importance-weighted advantage minus a
//! `beta`-scaled KL estimate against the reference policy, and the update
//! step ascends the batch-mean objective using central finite differences
//! over the policy's (few) scalar parameters.

use serde::{Deserialize, Serialize};

use crate::difficulty::RolloutGroup;
use crate::reward::{DifficultyScore, RewardError, RewardStack, RolloutSample};
use crate::scalar::{mean_std, Real};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrpoError {
    #[error("group has {0} rewards; at least 2 are required")]
    GroupTooSmall(usize),
    #[error("group has {samples} samples but {advantages} advantages")]
    Misaligned { samples: usize, advantages: usize },
    #[error("batch has {groups} groups but {gammas} difficulty scores")]
    GammaMismatch { groups: usize, gammas: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("likelihood ratio overflows for log-ratio {log_ratio}")]
    KlOverflow { log_ratio: f64 },
    #[error("non-finite objective in group {index} (`{question_id}`)")]
    NonFiniteObjective { index: usize, question_id: String },
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(usize),
    #[error("reward evaluation failed in group {index}: {source}")]
    Reward {
        index: usize,
        #[source]
        source: RewardError,
    },
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoConfig<T> {
    pub clip_epsilon: T,
    pub kl_beta: T,
    pub group_size: usize,
    pub std_floor: T,
    pub learning_rate: T,
    pub steps: usize,
    pub seed: u64,
    /// Finite-difference step for the parameter gradient.
    pub fd_step: T,
}

impl<T: Real> Default for GrpoConfig<T> {
    fn default() -> Self {
        Self {
            clip_epsilon: T::lit(0.2),
            kl_beta: T::lit(0.04),
            group_size: 8,
            std_floor: T::lit(1e-6),
            learning_rate: T::lit(0.5),
            steps: 300,
            seed: 42,
            fd_step: T::lit(1e-5),
        }
    }
}

impl<T: Real> GrpoConfig<T> {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::InvalidConfig(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if !(self.clip_epsilon >= T::zero()) {
            return bad("clip_epsilon must be nonnegative");
        }
        if !(self.kl_beta >= T::zero() && self.kl_beta.is_finite()) {
            return bad("kl_beta must be finite and nonnegative");
        }
        if !(self.std_floor > T::zero()) {
            return bad("std_floor must be positive");
        }
        if !(self.learning_rate >= T::zero() && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and nonnegative");
        }
        if !(self.fd_step > T::zero()) {
            return bad("fd_step must be positive");
        }
        Ok(())
    }
}

/// Per-sample advantages of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet<T> {
    pub values: Vec<T>,
}

/// `(r_i - mean) / std` with the population standard deviation; all zeros
/// when the standard deviation is below `std_floor`.
pub fn group_advantages<T: Real>(rewards: &[T], cfg: &GrpoConfig<T>) -> Result<AdvantageSet<T>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let (mean, std) = mean_std(rewards);
    let values = if std < cfg.std_floor {
        vec![T::zero(); rewards.len()]
    } else {
        let denom = std.max(cfg.std_floor);
        rewards.iter().map(|&r| (r - mean) / denom).collect()
    };
    Ok(AdvantageSet { values })
}

/// `rho - ln(rho) - 1` with `rho = pi_ref / pi_theta`, evaluated from log
/// likelihoods. Nonnegative, zero only when the likelihoods agree.
pub fn kl_term<T: Real>(logprob_ref: T, logprob_current: T) -> Result<T, GrpoError> {
    let x = logprob_ref - logprob_current;
    if !x.is_finite() || !x.exp().is_finite() {
        return Err(GrpoError::KlOverflow { log_ratio: x.to_f64().unwrap_or(f64::NAN) });
    }
    if x.abs() < T::lit(1e-3) {
        // Series of exp(x) - 1 - x; avoids cancellation near zero.
        let x2 = x * x;
        let s = T::lit(0.5)
            + x * (T::one() / T::lit(6.0)
                + x * (T::one() / T::lit(24.0) + x * (T::one() / T::lit(120.0) + x / T::lit(720.0))));
        Ok(x2 * s)
    } else {
        Ok((x.exp_m1() - x).max(T::zero()))
    }
}

/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`.
#[inline]
pub fn clipped_surrogate<T: Real>(ratio: T, advantage: T, clip_epsilon: T) -> T {
    let clipped = ratio.max(T::one() - clip_epsilon).min(T::one() + clip_epsilon);
    (ratio * advantage).min(clipped * advantage)
}

fn sample_objective<T: Real>(
    logprob_current: T,
    sample: &RolloutSample<T>,
    advantage: T,
    cfg: &GrpoConfig<T>,
) -> Result<T, GrpoError> {
    let ratio = (logprob_current - sample.logprob_old).exp();
    let kl = kl_term(sample.logprob_ref, logprob_current)?;
    Ok(clipped_surrogate(ratio, advantage, cfg.clip_epsilon) - cfg.kl_beta * kl)
}

/// Group-mean GRPO objective using the samples' stored log-likelihoods.
pub fn grpo_objective<T: Real>(
    group: &RolloutGroup<T>,
    advantages: &AdvantageSet<T>,
    cfg: &GrpoConfig<T>,
) -> Result<T, GrpoError> {
    let currents: Vec<T> = group.samples.iter().map(|s| s.logprob_current).collect();
    objective_with(group, &currents, advantages, cfg)
}

fn objective_with<T: Real>(
    group: &RolloutGroup<T>,
    logprob_current: &[T],
    advantages: &AdvantageSet<T>,
    cfg: &GrpoConfig<T>,
) -> Result<T, GrpoError> {
    if group.samples.len() != advantages.values.len() {
        return Err(GrpoError::Misaligned { samples: group.samples.len(), advantages: advantages.values.len() });
    }
    let mut acc = T::zero();
    for ((s, &lp), &a) in group.samples.iter().zip(logprob_current).zip(&advantages.values) {
        acc = acc + sample_objective(lp, s, a, cfg)?;
    }
    Ok(acc / T::count(group.samples.len()))
}

/// A policy with a handful of unconstrained scalar parameters whose
/// log-likelihood of a sampled answer can be evaluated at arbitrary
/// parameter values.
pub trait LengthPolicy<T: Real>: Clone {
    fn params(&self) -> Vec<T>;

    /// Copy of the policy with the current parameters replaced; old and
    /// reference snapshots are kept.
    fn with_params(&self, params: &[T]) -> Self;

    /// Sets the old-policy snapshot to the current parameters.
    fn refresh_old(&mut self);

    fn log_prob(&self, params: &[T], group: &RolloutGroup<T>, sample: &RolloutSample<T>) -> T;

    /// Log-likelihoods of every sample in `group`; override when the
    /// per-group work can be shared.
    fn log_probs(&self, params: &[T], group: &RolloutGroup<T>) -> Vec<T> {
        group.samples.iter().map(|s| self.log_prob(params, group, s)).collect()
    }
}

/// Central (`central = true`) or forward finite-difference gradient of `f`.
pub fn fd_gradient<T: Real, E>(f: impl Fn(&[T]) -> Result<T, E>, at: &[T], h: T, central: bool) -> Result<Vec<T>, E> {
    let base = if central { None } else { Some(f(at)?) };
    let mut x = at.to_vec();
    let mut grad = Vec::with_capacity(at.len());
    for k in 0..at.len() {
        x[k] = at[k] + h;
        let up = f(&x)?;
        let g = if let Some(b) = base {
            (up - b) / h
        } else {
            x[k] = at[k] - h;
            let down = f(&x)?;
            (up - down) / (h + h)
        };
        x[k] = at[k];
        grad.push(g);
    }
    Ok(grad)
}

/// Everything one ascent step computed.
#[derive(Debug, Clone)]
pub struct StepReport<T, P> {
    pub policy: P,
    /// Batch-mean objective at the pre-update parameters.
    pub objective: T,
    pub mean_reward: T,
    /// Mean per-sample KL estimate at the pre-update parameters.
    pub kl_mean: T,
    pub gradient: Vec<T>,
    pub rewards: Vec<Vec<T>>,
}

/// Rewards and group advantages for a batch; these do not depend on the
/// policy parameters.
pub fn batch_advantages<T: Real>(
    batch: &[RolloutGroup<T>],
    gammas: &[DifficultyScore<T>],
    stack: &RewardStack<T>,
    cfg: &GrpoConfig<T>,
) -> Result<(Vec<Vec<T>>, Vec<AdvantageSet<T>>), GrpoError> {
    if batch.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    if gammas.len() != batch.len() {
        return Err(GrpoError::GammaMismatch { groups: batch.len(), gammas: gammas.len() });
    }
    let mut rewards = Vec::with_capacity(batch.len());
    let mut advantages = Vec::with_capacity(batch.len());
    for (index, (g, &gamma)) in batch.iter().zip(gammas).enumerate() {
        let r = g
            .samples
            .iter()
            .map(|s| stack.score(s, gamma))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|source| GrpoError::Reward { index, source })?;
        advantages.push(group_advantages(&r, cfg)?);
        rewards.push(r);
    }
    Ok((rewards, advantages))
}

/// Batch-mean objective at `params`, recomputing the current-policy
/// log-likelihoods.
pub fn batch_objective<T: Real, P: LengthPolicy<T>>(
    policy: &P,
    params: &[T],
    batch: &[RolloutGroup<T>],
    advantages: &[AdvantageSet<T>],
    cfg: &GrpoConfig<T>,
) -> Result<T, GrpoError> {
    let mut total = T::zero();
    for (index, (g, a)) in batch.iter().zip(advantages).enumerate() {
        let lp = policy.log_probs(params, g);
        let j = objective_with(g, &lp, a, cfg)?;
        if !j.is_finite() {
            return Err(GrpoError::NonFiniteObjective { index, question_id: g.question_id.clone() });
        }
        total = total + j;
    }
    Ok(total / T::count(batch.len()))
}

/// One GRPO ascent step. Rollouts in `batch` must have been sampled under
/// the policy's old snapshot; the returned policy's old snapshot is the
/// updated parameters.
pub fn policy_update_step<T: Real, P: LengthPolicy<T>>(
    policy: &P,
    batch: &[RolloutGroup<T>],
    gammas: &[DifficultyScore<T>],
    stack: &RewardStack<T>,
    cfg: &GrpoConfig<T>,
) -> Result<StepReport<T, P>, GrpoError> {
    cfg.validate()?;
    let (rewards, advantages) = batch_advantages(batch, gammas, stack, cfg)?;
    let theta = policy.params();

    let objective = batch_objective(policy, &theta, batch, &advantages, cfg)?;
    let gradient = fd_gradient(|p| batch_objective(policy, p, batch, &advantages, cfg), &theta, cfg.fd_step, true)?;
    if let Some(k) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(GrpoError::NonFiniteGradient(k));
    }

    let mut kl_sum = T::zero();
    let mut n = 0usize;
    for g in batch {
        for (s, lp) in g.samples.iter().zip(policy.log_probs(&theta, g)) {
            kl_sum = kl_sum + kl_term(s.logprob_ref, lp)?;
            n += 1;
        }
    }
    let reward_sum = rewards.iter().flatten().fold(T::zero(), |a, &r| a + r);

    let updated: Vec<T> = theta.iter().zip(&gradient).map(|(&t, &g)| t + cfg.learning_rate * g).collect();
    let mut next = policy.with_params(&updated);
    next.refresh_old();

    Ok(StepReport {
        policy: next,
        objective,
        mean_reward: reward_sum / T::count(n.max(1)),
        kl_mean: kl_sum / T::count(n.max(1)),
        gradient,
        rewards,
    })
}
