//! Seeded GRPO training loop over the synthetic environment.

use serde::{Deserialize, Serialize};

use crate::difficulty::{audio_attention_entropy, grdr_gamma, normalize_batch, DifficultyError, RolloutGroup};
use crate::grpo::{policy_update_step, GrpoConfig, GrpoError};
use crate::label::DifficultyLabel;
use crate::reward::{DifficultyScore, RewardConfig, RewardError, RewardStack};
use crate::sim::{sample_rollout_group, stream_rng, synth_attention, PolicyState, QuestionSpec, SimError, Stream};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Difficulty(#[from] DifficultyError),
    #[error("step {step}: {source}")]
    Numeric {
        step: usize,
        #[source]
        source: GrpoError,
    },
    #[error("invalid optimizer configuration: {0}")]
    Config(GrpoError),
    #[error("question bank is empty")]
    EmptyBank,
}

/// Which reward stack (and difficulty source) drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StackKind {
    AccuracyOnly,
    Truncation,
    GrdrAdaptive,
    Ga2drAdaptive,
    GrdrThresholded,
    Ga2drThresholded,
}

impl StackKind {
    pub const ALL: [StackKind; 6] = [
        Self::AccuracyOnly,
        Self::Truncation,
        Self::GrdrAdaptive,
        Self::Ga2drAdaptive,
        Self::GrdrThresholded,
        Self::Ga2drThresholded,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::AccuracyOnly => "accuracy-only",
            Self::Truncation => "truncation",
            Self::GrdrAdaptive => "grdr-adaptive",
            Self::Ga2drAdaptive => "ga2dr-adaptive",
            Self::GrdrThresholded => "grdr-thresholded",
            Self::Ga2drThresholded => "ga2dr-thresholded",
        }
    }

    pub fn stack(self, cfg: RewardConfig<f64>) -> Result<RewardStack<f64>, RewardError> {
        match self {
            Self::AccuracyOnly => RewardStack::accuracy_only(cfg),
            Self::Truncation => RewardStack::truncation(cfg),
            Self::GrdrAdaptive | Self::Ga2drAdaptive => RewardStack::adaptive(cfg),
            Self::GrdrThresholded | Self::Ga2drThresholded => RewardStack::adaptive_thresholded(cfg),
        }
    }

    fn uses_attention(self) -> bool {
        matches!(self, Self::Ga2drAdaptive | Self::Ga2drThresholded)
    }
}

impl std::str::FromStr for StackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown reward stack `{s}`"))
    }
}

/// Environment and policy settings for a simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub initial_mean: f64,
    pub length_spread: f64,
    pub bins: usize,
    pub attention_tokens: usize,
    pub audio_tokens: usize,
    pub attention_heads: usize,
    /// Renormalize the audio sub-distribution before taking its entropy.
    pub renormalize: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            initial_mean: 0.5,
            length_spread: 0.2,
            bins: 64,
            attention_tokens: 64,
            audio_tokens: 32,
            attention_heads: 4,
            renormalize: false,
        }
    }
}

/// One training-log row.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub objective: f64,
    pub mean_reward: f64,
    /// Mean sampled normalized length per class; `None` when the class is
    /// absent from the batch.
    pub mean_length: [Option<f64>; 3],
    pub kl_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassSummary {
    pub questions: usize,
    pub mean_length: f64,
    pub accuracy: f64,
}

/// Policy statistics over a question bank: expected normalized length and
/// expected accuracy under the policy's length distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub per_class: [Option<ClassSummary>; 3],
    pub overall_mean_length: f64,
    pub overall_accuracy: f64,
}

impl Summary {
    pub fn of(policy: &PolicyState, bank: &[QuestionSpec]) -> Self {
        let mut per_class = [None; 3];
        for class in DifficultyLabel::ALL {
            let qs: Vec<&QuestionSpec> = bank.iter().filter(|q| q.class == class).collect();
            if qs.is_empty() {
                continue;
            }
            let acc = qs.iter().map(|q| policy.expected_accuracy(q)).sum::<f64>() / qs.len() as f64;
            per_class[class.index()] =
                Some(ClassSummary { questions: qs.len(), mean_length: policy.expected_length(class), accuracy: acc });
        }
        let n = bank.len().max(1) as f64;
        let overall_mean_length = bank.iter().map(|q| policy.expected_length(q.class)).sum::<f64>() / n;
        let overall_accuracy = bank.iter().map(|q| policy.expected_accuracy(q)).sum::<f64>() / n;
        Self { per_class, overall_mean_length, overall_accuracy }
    }

    pub fn class(&self, class: DifficultyLabel) -> Option<ClassSummary> {
        self.per_class[class.index()]
    }

    /// Mean length of a class; NaN when the bank has none.
    pub fn mean_length(&self, class: DifficultyLabel) -> f64 {
        self.class(class).map_or(f64::NAN, |c| c.mean_length)
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub log: Vec<StepLog>,
    pub initial: Summary,
    pub summary: Summary,
    pub policy: PolicyState,
}

/// Difficulty scores for every group of a step's batch.
fn batch_gammas(
    kind: StackKind,
    batch: &[RolloutGroup<f64>],
    bank: &[QuestionSpec],
    sim: &SimConfig,
    seed: u64,
    step: usize,
) -> Result<Vec<DifficultyScore<f64>>, TrainError> {
    if kind.uses_attention() {
        let entropies = bank
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let mut rng = stream_rng(seed, step as u64, i as u64, Stream::Attention);
                let snap = synth_attention(q, sim.attention_tokens, sim.audio_tokens, sim.attention_heads, &mut rng)?;
                Ok(audio_attention_entropy(&snap, sim.renormalize)?)
            })
            .collect::<Result<Vec<f64>, TrainError>>()?;
        Ok(normalize_batch(&entropies)?.gammas)
    } else {
        Ok(batch.iter().map(grdr_gamma).collect())
    }
}

/// Runs `grpo.steps` GRPO updates, one rollout group per bank question per
/// step. Deterministic in `(bank, configs)`.
pub fn run_simulation(
    bank: &[QuestionSpec],
    kind: StackKind,
    reward: &RewardConfig<f64>,
    grpo: &GrpoConfig<f64>,
    sim: &SimConfig,
) -> Result<SimulationOutcome, TrainError> {
    if bank.is_empty() {
        return Err(TrainError::EmptyBank);
    }
    grpo.validate().map_err(TrainError::Config)?;
    let stack = kind.stack(*reward)?;
    let mut policy = PolicyState::new(sim.initial_mean, sim.length_spread, sim.bins, reward.max_length)?;
    let initial = Summary::of(&policy, bank);
    let mut log = Vec::with_capacity(grpo.steps);

    for step in 0..grpo.steps {
        let batch = bank
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let mut rng = stream_rng(grpo.seed, step as u64, i as u64, Stream::Rollout);
                sample_rollout_group(&policy, q, grpo.group_size, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let gammas = batch_gammas(kind, &batch, bank, sim, grpo.seed, step)?;

        let mut len_sum = [0.0; 3];
        let mut len_n = [0usize; 3];
        for g in &batch {
            let c = g.class.expect("sampled groups carry their class").index();
            for s in &g.samples {
                len_sum[c] += s.norm_length;
                len_n[c] += 1;
            }
        }

        let report = policy_update_step(&policy, &batch, &gammas, &stack, grpo)
            .map_err(|source| TrainError::Numeric { step, source })?;
        log.push(StepLog {
            step,
            objective: report.objective,
            mean_reward: report.mean_reward,
            mean_length: std::array::from_fn(|c| (len_n[c] > 0).then(|| len_sum[c] / len_n[c] as f64)),
            kl_mean: report.kl_mean,
        });
        policy = report.policy;
    }

    let summary = Summary::of(&policy, bank);
    Ok(SimulationOutcome { log, initial, summary, policy })
}
