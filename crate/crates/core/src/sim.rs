//! Synthetic stand-in for a reasoning model.
//!
//! Questions carry a latent difficulty class and a saturating accuracy
//! curve `p(l) = floor + (ceiling - floor) * (1 - exp(-l / tau))`. The
//! policy picks a reasoning length per class from a Gaussian discretized
//! onto fixed bins over `[0, 1]`, so likelihoods are exact pmf values.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::difficulty::{AttentionSnapshot, DifficultyError, RolloutGroup};
use crate::grpo::LengthPolicy;
use crate::label::DifficultyLabel;
use crate::reward::RolloutSample;
use crate::scalar::logistic;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("question `{id}`: {msg}")]
    InvalidQuestion { id: String, msg: String },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid attention request: {0}")]
    InvalidAttention(String),
    #[error("bank line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Difficulty(#[from] DifficultyError),
}

/// Accuracy curve parameters for one difficulty class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassProfile {
    pub floor: f64,
    pub ceiling: f64,
    /// Length scale `tau` in normalized-length units.
    pub tau: f64,
}

/// Class profiles used to generate a question bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BankProfile {
    pub easy: ClassProfile,
    pub medium: ClassProfile,
    pub hard: ClassProfile,
}

impl Default for BankProfile {
    fn default() -> Self {
        Self {
            easy: ClassProfile { floor: 0.70, ceiling: 0.90, tau: 0.05 },
            medium: ClassProfile { floor: 0.35, ceiling: 0.80, tau: 0.20 },
            hard: ClassProfile { floor: 0.10, ceiling: 0.70, tau: 0.45 },
        }
    }
}

impl BankProfile {
    pub fn get(&self, class: DifficultyLabel) -> ClassProfile {
        match class {
            DifficultyLabel::Easy => self.easy,
            DifficultyLabel::Medium => self.medium,
            DifficultyLabel::Hard => self.hard,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionSpec {
    pub id: String,
    pub class: DifficultyLabel,
    pub accuracy_floor: f64,
    pub accuracy_ceiling: f64,
    pub length_scale: f64,
}

impl QuestionSpec {
    pub fn new(
        id: impl Into<String>,
        class: DifficultyLabel,
        accuracy_floor: f64,
        accuracy_ceiling: f64,
        length_scale: f64,
    ) -> Result<Self, SimError> {
        let id = id.into();
        let err = |msg: &str| Err(SimError::InvalidQuestion { id: id.clone(), msg: msg.to_string() });
        if !(0.0..=1.0).contains(&accuracy_floor) || !(0.0..=1.0).contains(&accuracy_ceiling) {
            return err("accuracy bounds must lie in [0, 1]");
        }
        if accuracy_floor > accuracy_ceiling {
            return err("accuracy floor exceeds ceiling");
        }
        if !(length_scale > 0.0 && length_scale.is_finite()) {
            return err("length scale must be positive");
        }
        if id.contains(',') || id.trim().is_empty() {
            return err("id must be nonempty and comma-free");
        }
        Ok(Self { id, class, accuracy_floor, accuracy_ceiling, length_scale })
    }

    pub fn latent_difficulty(&self) -> f64 {
        self.class.latent()
    }

    /// Probability of a correct answer at normalized length `l`.
    pub fn p_correct(&self, l: f64) -> f64 {
        self.accuracy_floor + (self.accuracy_ceiling - self.accuracy_floor) * -(-l / self.length_scale).exp_m1()
    }
}

/// `per_class` questions of each class, in a seeded shuffled order.
pub fn default_question_bank(per_class: usize, seed: u64) -> Vec<QuestionSpec> {
    question_bank(per_class, seed, &BankProfile::default()).expect("default profile is valid")
}

pub fn question_bank(per_class: usize, seed: u64, profile: &BankProfile) -> Result<Vec<QuestionSpec>, SimError> {
    let mut bank = Vec::with_capacity(3 * per_class);
    for class in DifficultyLabel::ALL {
        let p = profile.get(class);
        for i in 0..per_class {
            bank.push(QuestionSpec::new(format!("{class}-{i:04}"), class, p.floor, p.ceiling, p.tau)?);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 0, 0, Stream::Bank));
    // Fisher-Yates
    for i in (1..bank.len()).rev() {
        let j = rng.random_range(0..=i);
        bank.swap(i, j);
    }
    Ok(bank)
}

/// Writes a bank as `id,class,floor,ceiling,tau` lines under a header.
pub fn write_bank(bank: &[QuestionSpec]) -> String {
    let mut out = String::from("id,class,floor,ceiling,tau\n");
    for q in bank {
        let _ = writeln!(out, "{},{},{},{},{}", q.id, q.class, q.accuracy_floor, q.accuracy_ceiling, q.length_scale);
    }
    out
}

/// Parses the bank format written by [`write_bank`]. The header line is
/// optional; blank lines and `#` comments are skipped.
pub fn parse_bank(text: &str) -> Result<Vec<QuestionSpec>, SimError> {
    let mut bank = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') || (bank.is_empty() && l.starts_with("id,")) {
            continue;
        }
        let perr = |msg: String| SimError::Parse { line, msg };
        let fields: Vec<&str> = l.split(',').map(str::trim).collect();
        let [id, class, floor, ceiling, tau] = fields[..] else {
            return Err(perr(format!("expected 5 fields, got {}", fields.len())));
        };
        let class: DifficultyLabel = class.parse().map_err(|e| perr(format!("{e}")))?;
        let num = |name: &str, v: &str| v.parse::<f64>().map_err(|e| perr(format!("bad {name} `{v}`: {e}")));
        let q = QuestionSpec::new(id, class, num("floor", floor)?, num("ceiling", ceiling)?, num("tau", tau)?)
            .map_err(|e| perr(e.to_string()))?;
        bank.push(q);
    }
    if bank.is_empty() {
        return Err(SimError::Parse { line: 0, msg: "bank contains no questions".into() });
    }
    Ok(bank)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Rollout = 1,
    Attention = 2,
    Bank = 3,
}

/// Independent per-(step, index, purpose) seed derived from the master seed.
pub fn stream_seed(master: u64, step: u64, index: u64, stream: Stream) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(mix(mix(master) ^ step) ^ index) ^ stream as u64)
}

pub fn stream_rng(master: u64, step: u64, index: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, step, index, stream))
}

/// Class-conditional length policy. Parameters are unconstrained and mapped
/// to a mean length in `(0, 1)` by the logistic function.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    pub mean_length_params: [f64; 3],
    pub reference_params: [f64; 3],
    pub old_params: [f64; 3],
    /// Standard deviation of the length Gaussian, in normalized units.
    pub length_spread: f64,
    pub bins: usize,
    /// Maximum output length in tokens.
    pub max_length: usize,
}

impl PolicyState {
    /// All classes start at mean length `initial_mean`; reference and old
    /// snapshots equal the initial parameters.
    pub fn new(initial_mean: f64, length_spread: f64, bins: usize, max_length: usize) -> Result<Self, SimError> {
        if !(initial_mean > 0.0 && initial_mean < 1.0) {
            return Err(SimError::InvalidPolicy(format!("initial mean {initial_mean} is outside (0, 1)")));
        }
        if !(length_spread > 0.0 && length_spread.is_finite()) {
            return Err(SimError::InvalidPolicy("length spread must be positive".into()));
        }
        if bins < 2 {
            return Err(SimError::InvalidPolicy("need at least 2 bins".into()));
        }
        if max_length < 2 * bins {
            return Err(SimError::InvalidPolicy(format!(
                "max_length {max_length} must be at least twice the bin count {bins}"
            )));
        }
        let theta = (initial_mean / (1.0 - initial_mean)).ln();
        Ok(Self {
            mean_length_params: [theta; 3],
            reference_params: [theta; 3],
            old_params: [theta; 3],
            length_spread,
            bins,
            max_length,
        })
    }

    pub fn mean(&self, class: DifficultyLabel) -> f64 {
        logistic(self.mean_length_params[class.index()])
    }

    /// Token count for bin `b`: the bin center rounded to whole tokens.
    pub fn bin_tokens(&self, b: usize) -> usize {
        let center = (b as f64 + 0.5) / self.bins as f64;
        ((center * self.max_length as f64).round() as usize).min(self.max_length)
    }

    pub fn bin_length(&self, b: usize) -> f64 {
        self.bin_tokens(b) as f64 / self.max_length as f64
    }

    pub fn bin_of(&self, raw_length: usize) -> usize {
        (raw_length * self.bins / self.max_length).min(self.bins - 1)
    }

    /// Log pmf over bins for a raw (unconstrained) parameter value.
    pub fn log_pmf_at(&self, theta: f64) -> Vec<f64> {
        let mu = logistic(theta);
        let inv = 1.0 / (2.0 * self.length_spread * self.length_spread);
        let scores: Vec<f64> = (0..self.bins)
            .map(|b| {
                let d = (b as f64 + 0.5) / self.bins as f64 - mu;
                -d * d * inv
            })
            .collect();
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
        scores.into_iter().map(|s| s - lse).collect()
    }

    pub fn pmf_at(&self, theta: f64) -> Vec<f64> {
        self.log_pmf_at(theta).into_iter().map(f64::exp).collect()
    }

    pub fn pmf(&self, class: DifficultyLabel) -> Vec<f64> {
        self.pmf_at(self.mean_length_params[class.index()])
    }

    /// Expected normalized length for a class.
    pub fn expected_length(&self, class: DifficultyLabel) -> f64 {
        self.pmf(class).iter().enumerate().map(|(b, p)| p * self.bin_length(b)).sum()
    }

    /// Expected accuracy on a question under the current parameters.
    pub fn expected_accuracy(&self, q: &QuestionSpec) -> f64 {
        self.pmf(q.class).iter().enumerate().map(|(b, p)| p * q.p_correct(self.bin_length(b))).sum()
    }
}

impl LengthPolicy<f64> for PolicyState {
    fn params(&self) -> Vec<f64> {
        self.mean_length_params.to_vec()
    }

    fn with_params(&self, params: &[f64]) -> Self {
        let mut next = self.clone();
        next.mean_length_params.copy_from_slice(&params[..3]);
        next
    }

    fn refresh_old(&mut self) {
        self.old_params = self.mean_length_params;
    }

    fn log_prob(&self, params: &[f64], group: &RolloutGroup<f64>, sample: &RolloutSample<f64>) -> f64 {
        let class = group.class.expect("policy groups carry their class");
        self.log_pmf_at(params[class.index()])[self.bin_of(sample.raw_length)]
    }

    fn log_probs(&self, params: &[f64], group: &RolloutGroup<f64>) -> Vec<f64> {
        let class = group.class.expect("policy groups carry their class");
        let lp = self.log_pmf_at(params[class.index()]);
        group.samples.iter().map(|s| lp[self.bin_of(s.raw_length)]).collect()
    }
}

fn draw_index<R: Rng>(rng: &mut R, pmf: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    pmf.len() - 1
}

/// Draws `group_size` answers for `question` under the policy's old
/// snapshot and records all three log-likelihoods.
pub fn sample_rollout_group<R: Rng>(
    policy: &PolicyState,
    question: &QuestionSpec,
    group_size: usize,
    rng: &mut R,
) -> Result<RolloutGroup<f64>, SimError> {
    let c = question.class.index();
    let old_lp = policy.log_pmf_at(policy.old_params[c]);
    let cur_lp = policy.log_pmf_at(policy.mean_length_params[c]);
    let ref_lp = policy.log_pmf_at(policy.reference_params[c]);
    let old_pmf: Vec<f64> = old_lp.iter().map(|v| v.exp()).collect();

    let mut samples = Vec::with_capacity(group_size);
    for _ in 0..group_size {
        let b = draw_index(rng, &old_pmf);
        let raw = policy.bin_tokens(b);
        let l = raw as f64 / policy.max_length as f64;
        let correct = rng.random::<f64>() < question.p_correct(l);
        let s = RolloutSample::from_lengths(correct, raw, policy.max_length)
            .and_then(|s| s.with_logprobs(cur_lp[b], old_lp[b], ref_lp[b]))
            .map_err(|e| SimError::InvalidPolicy(e.to_string()))?;
        samples.push(s);
    }
    Ok(RolloutGroup::new(question.id.clone(), samples)?.with_class(question.class))
}

/// Softmax temperature used for a question of latent difficulty `d`.
pub fn attention_temperature(d: f64) -> f64 {
    0.5 + 1.5 * d
}

/// Score offset applied to non-audio positions so they carry near-zero mass.
const NON_AUDIO_OFFSET: f64 = 12.0;

/// Synthetic final-token attention: per head, a softmax of standard-normal
/// scores divided by a difficulty-dependent temperature over the audio
/// block; other positions are pushed far below the audio scores. Harder
/// questions get flatter (higher-entropy) attention.
pub fn synth_attention<R: Rng>(
    question: &QuestionSpec,
    tokens: usize,
    audio_count: usize,
    heads: usize,
    rng: &mut R,
) -> Result<AttentionSnapshot<f64>, SimError> {
    synth_attention_with_temperature(
        attention_temperature(question.latent_difficulty()),
        tokens,
        audio_count,
        heads,
        rng,
    )
}

pub fn synth_attention_with_temperature<R: Rng>(
    temperature: f64,
    tokens: usize,
    audio_count: usize,
    heads: usize,
    rng: &mut R,
) -> Result<AttentionSnapshot<f64>, SimError> {
    if audio_count == 0 || audio_count > tokens {
        return Err(SimError::InvalidAttention(format!("audio_count {audio_count} must be in 1..={tokens}")));
    }
    if heads == 0 {
        return Err(SimError::InvalidAttention("need at least one head".into()));
    }
    if !(temperature > 0.0) {
        return Err(SimError::InvalidAttention("temperature must be positive".into()));
    }
    // Audio block sits after a short prompt prefix.
    let start = (tokens - audio_count) / 4;
    let audio: Vec<usize> = (start..start + audio_count).collect();
    let mut rows = Vec::with_capacity(heads);
    for _ in 0..heads {
        let scores: Vec<f64> = (0..tokens)
            .map(|j| {
                let z: f64 = rng.sample(StandardNormal);
                let s = z / temperature;
                if (start..start + audio_count).contains(&j) {
                    s
                } else {
                    s - NON_AUDIO_OFFSET
                }
            })
            .collect();
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let total: f64 = e.iter().sum();
        rows.push(e.into_iter().map(|v| v / total).collect());
    }
    Ok(AttentionSnapshot::new(rows, audio)?)
}
