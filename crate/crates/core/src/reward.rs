//! Rule-based rewards over rollout samples.
//!
//! Everything here is a pure function of its inputs. The adaptive length
//! reward is `sign(o) * exp(-k(gamma) * l)` where `k` interpolates linearly
//! between a steep slope for easy questions and a flat one for hard
//! questions, so correct answers are pushed short on easy questions and
//! allowed to run long on hard ones.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("raw length {raw} exceeds the declared maximum {max}")]
    LengthExceedsMax { raw: usize, max: usize },
    #[error("maximum length must be positive")]
    ZeroMaxLength,
    #[error("normalized length {0} is outside [0, 1]")]
    NormLengthOutOfRange(f64),
    #[error("log-likelihood `{field}` is not finite ({value})")]
    NonFiniteLogprob { field: &'static str, value: f64 },
    #[error("difficulty {0} is outside [0, 1]")]
    GammaOutOfRange(f64),
    #[error("l_min = {0} is outside [0, 1)")]
    LMinOutOfRange(f64),
    #[error("invalid reward configuration: {0}")]
    InvalidConfig(String),
}

/// One sampled answer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutSample<T> {
    pub correct: bool,
    /// Output length in tokens.
    pub raw_length: usize,
    /// Output length divided by the maximum output length.
    pub norm_length: T,
    pub logprob_current: T,
    pub logprob_old: T,
    pub logprob_ref: T,
    pub format_ok: bool,
}

impl<T: Real> RolloutSample<T> {
    /// Builds a sample from a token count and the run's maximum output length.
    /// Log-likelihoods start at zero and the format gate is open.
    pub fn from_lengths(correct: bool, raw_length: usize, max_length: usize) -> Result<Self, RewardError> {
        if max_length == 0 {
            return Err(RewardError::ZeroMaxLength);
        }
        if raw_length > max_length {
            return Err(RewardError::LengthExceedsMax { raw: raw_length, max: max_length });
        }
        Ok(Self {
            correct,
            raw_length,
            norm_length: T::count(raw_length) / T::count(max_length),
            logprob_current: T::zero(),
            logprob_old: T::zero(),
            logprob_ref: T::zero(),
            format_ok: true,
        })
    }

    /// Builds a sample directly from a normalized length; `raw_length` is
    /// left at zero, so this is only meaningful for length-ratio rewards.
    pub fn from_norm_length(correct: bool, norm_length: T) -> Result<Self, RewardError> {
        let s = Self {
            correct,
            raw_length: 0,
            norm_length,
            logprob_current: T::zero(),
            logprob_old: T::zero(),
            logprob_ref: T::zero(),
            format_ok: true,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_logprobs(mut self, current: T, old: T, reference: T) -> Result<Self, RewardError> {
        self.logprob_current = current;
        self.logprob_old = old;
        self.logprob_ref = reference;
        self.validate()?;
        Ok(self)
    }

    pub fn with_format(mut self, format_ok: bool) -> Self {
        self.format_ok = format_ok;
        self
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        let l = self.norm_length;
        if !(l >= T::zero() && l <= T::one()) {
            return Err(RewardError::NormLengthOutOfRange(l.to_f64().unwrap_or(f64::NAN)));
        }
        for (field, v) in [
            ("logprob_current", self.logprob_current),
            ("logprob_old", self.logprob_old),
            ("logprob_ref", self.logprob_ref),
        ] {
            if !v.is_finite() {
                return Err(RewardError::NonFiniteLogprob { field, value: v.to_f64().unwrap_or(f64::NAN) });
            }
        }
        Ok(())
    }

    /// +1 for a correct sample, -1 otherwise.
    #[inline]
    pub fn sign(&self) -> T {
        if self.correct {
            T::one()
        } else {
            -T::one()
        }
    }
}

/// Shaping parameters for every reward in this module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig<T> {
    pub k_easy: T,
    pub k_hard: T,
    pub l_min: T,
    /// Truncation threshold in tokens.
    pub trunc_threshold: usize,
    /// Truncation penalty.
    pub trunc_penalty: T,
    pub incorrect_within_threshold_reward: T,
    /// Maximum output length in tokens; normalizes raw lengths.
    pub max_length: usize,
}

impl<T: Real> Default for RewardConfig<T> {
    fn default() -> Self {
        Self {
            k_easy: T::lit(10.0),
            k_hard: T::lit(2.0),
            l_min: T::lit(0.1),
            trunc_threshold: 400,
            trunc_penalty: T::lit(-0.5),
            incorrect_within_threshold_reward: T::zero(),
            max_length: 1024,
        }
    }
}

impl<T: Real> RewardConfig<T> {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.k_easy > T::zero() && self.k_easy.is_finite()) {
            return Err(RewardError::InvalidConfig(format!("k_easy must be positive, got {}", self.k_easy)));
        }
        if !(self.k_hard > T::zero() && self.k_hard.is_finite()) {
            return Err(RewardError::InvalidConfig(format!("k_hard must be positive, got {}", self.k_hard)));
        }
        if !(self.l_min >= T::zero() && self.l_min < T::one()) {
            return Err(RewardError::LMinOutOfRange(self.l_min.to_f64().unwrap_or(f64::NAN)));
        }
        if self.trunc_threshold == 0 {
            return Err(RewardError::InvalidConfig("trunc_threshold must be positive".into()));
        }
        if self.max_length == 0 {
            return Err(RewardError::ZeroMaxLength);
        }
        if !self.trunc_penalty.is_finite() || !self.incorrect_within_threshold_reward.is_finite() {
            return Err(RewardError::InvalidConfig("truncation rewards must be finite".into()));
        }
        Ok(())
    }
}

/// Difficulty in `[0, 1]`; larger is harder.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct DifficultyScore<T>(T);

impl<T: Real> DifficultyScore<T> {
    pub fn new(gamma: T) -> Result<Self, RewardError> {
        if gamma >= T::zero() && gamma <= T::one() {
            Ok(Self(gamma))
        } else {
            Err(RewardError::GammaOutOfRange(gamma.to_f64().unwrap_or(f64::NAN)))
        }
    }

    /// Clamps into `[0, 1]`; NaN maps to the neutral midpoint.
    pub fn saturating(gamma: T) -> Self {
        if gamma.is_nan() {
            Self(T::lit(0.5))
        } else {
            Self(gamma.max(T::zero()).min(T::one()))
        }
    }

    pub fn easy() -> Self {
        Self(T::zero())
    }

    pub fn medium() -> Self {
        Self(T::lit(0.5))
    }

    pub fn hard() -> Self {
        Self(T::one())
    }

    #[inline]
    pub fn value(self) -> T {
        self.0
    }
}

/// Decay rate interpolated between `k_easy` (gamma = 0) and `k_hard` (gamma = 1).
#[inline]
pub fn k_of_gamma<T: Real>(gamma: DifficultyScore<T>, cfg: &RewardConfig<T>) -> T {
    let g = gamma.value();
    (T::one() - g) * cfg.k_easy + g * cfg.k_hard
}

/// `sign(o) * exp(-k(gamma) * l)`.
#[inline]
pub fn adaptive_length_reward<T: Real>(
    sample: &RolloutSample<T>,
    gamma: DifficultyScore<T>,
    cfg: &RewardConfig<T>,
) -> T {
    sample.sign() * (-k_of_gamma(gamma, cfg) * sample.norm_length).exp()
}

/// Renormalizes a length ratio so that everything at or below `l_min` maps to 0
/// and `l = 1` maps to 1.
pub fn zeta<T: Real>(norm_length: T, l_min: T) -> Result<T, RewardError> {
    if !(l_min >= T::zero() && l_min < T::one()) {
        return Err(RewardError::LMinOutOfRange(l_min.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(((norm_length - l_min) / (T::one() - l_min)).max(T::zero()))
}

/// The adaptive reward evaluated at `zeta(l; l_min)` instead of `l`; saturates
/// at `sign(o)` for every length at or below `l_min`.
pub fn adaptive_length_reward_thresholded<T: Real>(
    sample: &RolloutSample<T>,
    gamma: DifficultyScore<T>,
    cfg: &RewardConfig<T>,
) -> Result<T, RewardError> {
    let z = zeta(sample.norm_length, cfg.l_min)?;
    Ok(sample.sign() * (-k_of_gamma(gamma, cfg) * z).exp())
}

/// Fixed-threshold baseline: 1 for a correct answer within `trunc_threshold`
/// tokens, the penalty for anything longer, and the configured value
/// (default 0) for an incorrect answer within the threshold.
pub fn truncation_reward<T: Real>(sample: &RolloutSample<T>, cfg: &RewardConfig<T>) -> T {
    if sample.raw_length > cfg.trunc_threshold {
        cfg.trunc_penalty
    } else if sample.correct {
        T::one()
    } else {
        cfg.incorrect_within_threshold_reward
    }
}

/// 1 for a correct sample, 0 otherwise.
#[inline]
pub fn accuracy_reward<T: Real>(sample: &RolloutSample<T>) -> T {
    if sample.correct {
        T::one()
    } else {
        T::zero()
    }
}

/// Prompt template the output was produced under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    /// Answer-only template.
    Implicit,
    /// Reasoning in a think block, then the answer block.
    Explicit,
}

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";
const TAGS: [&str; 4] = [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE];

fn contains_tag(s: &str) -> bool {
    TAGS.iter().any(|t| s.contains(t))
}

/// Splits `<open>inner</close>rest`, requiring `s` to start with `open` and
/// `inner` to be free of any structural tag.
fn take_block<'a>(s: &'a str, open: &str, close: &str) -> Option<(&'a str, &'a str)> {
    let body = s.strip_prefix(open)?;
    let end = body.find(close)?;
    let inner = &body[..end];
    if contains_tag(inner) {
        return None;
    }
    Some((inner, &body[end + close.len()..]))
}

/// Structural format check on the tag layout only; never grades the answer.
pub fn format_reward(output_text: &str, mode: PromptMode) -> bool {
    match mode {
        PromptMode::Explicit => {
            let Some((_, rest)) = take_block(output_text.trim(), THINK_OPEN, THINK_CLOSE) else {
                return false;
            };
            let Some((_, tail)) = take_block(rest.trim_start(), ANSWER_OPEN, ANSWER_CLOSE) else {
                return false;
            };
            tail.trim().is_empty()
        }
        PromptMode::Implicit => {
            if output_text.matches(ANSWER_OPEN).count() != 1 || output_text.matches(ANSWER_CLOSE).count() != 1 {
                return false;
            }
            let start = output_text.find(ANSWER_OPEN).expect("counted");
            take_block(&output_text[start..], ANSWER_OPEN, ANSWER_CLOSE).is_some()
        }
    }
}

/// One summand of a reward stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardTerm {
    /// Gate: contributes the weight when the sample's format check passed.
    Format,
    Accuracy,
    Truncation,
    AdaptiveLength,
    AdaptiveLengthThresholded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedTerm<T> {
    pub term: RewardTerm,
    pub weight: T,
}

/// Ordered list of reward terms whose weighted values are summed.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardStack<T> {
    pub terms: Vec<WeightedTerm<T>>,
    pub cfg: RewardConfig<T>,
}

impl<T: Real> RewardStack<T> {
    pub fn new(cfg: RewardConfig<T>, terms: &[RewardTerm]) -> Result<Self, RewardError> {
        cfg.validate()?;
        Ok(Self { terms: terms.iter().map(|&term| WeightedTerm { term, weight: T::one() }).collect(), cfg })
    }

    pub fn accuracy_only(cfg: RewardConfig<T>) -> Result<Self, RewardError> {
        Self::new(cfg, &[RewardTerm::Format, RewardTerm::Accuracy])
    }

    pub fn truncation(cfg: RewardConfig<T>) -> Result<Self, RewardError> {
        Self::new(cfg, &[RewardTerm::Format, RewardTerm::Truncation])
    }

    pub fn adaptive(cfg: RewardConfig<T>) -> Result<Self, RewardError> {
        Self::new(cfg, &[RewardTerm::Format, RewardTerm::Accuracy, RewardTerm::AdaptiveLength])
    }

    pub fn adaptive_thresholded(cfg: RewardConfig<T>) -> Result<Self, RewardError> {
        Self::new(cfg, &[RewardTerm::Format, RewardTerm::Accuracy, RewardTerm::AdaptiveLengthThresholded])
    }

    /// Whether any term reads the difficulty score.
    pub fn uses_difficulty(&self) -> bool {
        self.terms.iter().any(|t| matches!(t.term, RewardTerm::AdaptiveLength | RewardTerm::AdaptiveLengthThresholded))
    }

    pub fn score(&self, sample: &RolloutSample<T>, gamma: DifficultyScore<T>) -> Result<T, RewardError> {
        let mut total = T::zero();
        for wt in &self.terms {
            let v = match wt.term {
                RewardTerm::Format => {
                    if sample.format_ok {
                        T::one()
                    } else {
                        T::zero()
                    }
                }
                RewardTerm::Accuracy => accuracy_reward(sample),
                RewardTerm::Truncation => truncation_reward(sample, &self.cfg),
                RewardTerm::AdaptiveLength => adaptive_length_reward(sample, gamma, &self.cfg),
                RewardTerm::AdaptiveLengthThresholded => adaptive_length_reward_thresholded(sample, gamma, &self.cfg)?,
            };
            total = total + wt.weight * v;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // High-precision reference values (30-digit evaluation, rounded to f64).
    const EXP_M1: f64 = 0.367_879_441_171_442_32;
    const EXP_M02: f64 = 0.818_730_753_077_981_86;
    const EXP_M10: f64 = 4.539_992_976_248_485e-5;

    fn cfg() -> RewardConfig<f64> {
        RewardConfig::default()
    }

    fn g(v: f64) -> DifficultyScore<f64> {
        DifficultyScore::new(v).unwrap()
    }

    fn sample(correct: bool, l: f64) -> RolloutSample<f64> {
        RolloutSample::from_norm_length(correct, l).unwrap()
    }

    #[test]
    fn k_endpoints_and_midpoint() {
        assert_eq!(k_of_gamma(g(0.0), &cfg()), 10.0);
        assert_eq!(k_of_gamma(g(1.0), &cfg()), 2.0);
        assert!((k_of_gamma(g(0.5), &cfg()) - 6.0).abs() < 1e-15);
    }

    #[test]
    fn adaptive_reward_examples() {
        for gamma in [0.0, 0.3, 1.0] {
            assert_eq!(adaptive_length_reward(&sample(true, 0.0), g(gamma), &cfg()), 1.0);
            assert_eq!(adaptive_length_reward(&sample(false, 0.0), g(gamma), &cfg()), -1.0);
        }
        assert!((adaptive_length_reward(&sample(true, 0.1), g(0.0), &cfg()) - EXP_M1).abs() < 1e-12);
        assert!((adaptive_length_reward(&sample(true, 0.1), g(1.0), &cfg()) - EXP_M02).abs() < 1e-12);
    }

    #[test]
    fn zeta_examples() {
        assert_eq!(zeta(0.05, 0.1).unwrap(), 0.0);
        assert_eq!(zeta(1.0, 0.1).unwrap(), 1.0);
        assert_eq!(zeta(1.0, 0.0).unwrap(), 1.0);
        assert!((zeta(0.55f64, 0.1).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(zeta(0.1, 0.1).unwrap(), 0.0);
        assert!(matches!(zeta(0.5, 1.0), Err(RewardError::LMinOutOfRange(_))));
        assert!(zeta(0.5, -0.1).is_err());
    }

    #[test]
    fn thresholded_examples() {
        let c = cfg();
        assert_eq!(adaptive_length_reward_thresholded(&sample(true, 0.08), g(0.7), &c).unwrap(), 1.0);
        let v = adaptive_length_reward_thresholded(&sample(true, 1.0), g(0.0), &c).unwrap();
        assert!((v - EXP_M10).abs() < 1e-12);
        let v = adaptive_length_reward_thresholded(&sample(false, 0.55), g(1.0), &c).unwrap();
        assert!((v + EXP_M1).abs() < 1e-12);
    }

    #[test]
    fn thresholded_rejects_degenerate_l_min() {
        let c = RewardConfig { l_min: 1.0, ..cfg() };
        assert!(c.validate().is_err());
        assert!(adaptive_length_reward_thresholded(&sample(true, 0.5), g(0.0), &c).is_err());
    }

    #[test]
    fn truncation_examples() {
        let c = RewardConfig { trunc_threshold: 120, ..cfg() };
        let s = |ok, n| RolloutSample::<f64>::from_lengths(ok, n, 1024).unwrap();
        assert_eq!(truncation_reward(&s(true, 100), &c), 1.0);
        assert_eq!(truncation_reward(&s(true, 130), &c), -0.5);
        assert_eq!(truncation_reward(&s(false, 130), &c), -0.5);
        assert_eq!(truncation_reward(&s(false, 100), &c), 0.0);
        assert_eq!(accuracy_reward(&s(false, 100)), truncation_reward(&s(false, 100), &c));
        let c2 = RewardConfig { incorrect_within_threshold_reward: -0.25, ..c };
        assert_eq!(truncation_reward(&s(false, 100), &c2), -0.25);
    }

    #[test]
    fn truncation_is_a_step_at_the_threshold() {
        for threshold in [120usize, 400] {
            let c = RewardConfig { trunc_threshold: threshold, ..cfg() };
            for n in threshold - 50..=threshold + 50 {
                let r = truncation_reward(&RolloutSample::<f64>::from_lengths(true, n, 1024).unwrap(), &c);
                assert_eq!(r, if n <= threshold { 1.0 } else { -0.5 }, "n={n}");
            }
        }
    }

    #[test]
    fn sample_construction_checks() {
        let s = RolloutSample::<f64>::from_lengths(true, 256, 1024).unwrap();
        assert_eq!(s.norm_length, 0.25);
        assert!(matches!(
            RolloutSample::<f64>::from_lengths(true, 1025, 1024),
            Err(RewardError::LengthExceedsMax { raw: 1025, max: 1024 })
        ));
        assert!(RolloutSample::<f64>::from_lengths(true, 0, 0).is_err());
        assert!(RolloutSample::from_norm_length(true, 1.5f64).is_err());
        assert!(s.with_logprobs(f64::NAN, 0.0, 0.0).is_err());
        assert!(s.with_logprobs(-1.0, -2.0, f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn format_examples() {
        use PromptMode::*;
        assert!(format_reward("<think>a</think><answer>b</answer>", Explicit));
        assert!(format_reward("  <think>a\nb</think>\n<answer>b</answer>\n", Explicit));
        assert!(!format_reward("<answer>b</answer>", Explicit));
        assert!(format_reward("<answer>b</answer>", Implicit));
        assert!(format_reward("some words <answer>b</answer>", Implicit));
        assert!(!format_reward("<think>a</think><answer>b</answer>tail", Explicit));
        assert!(!format_reward("pre<think>a</think><answer>b</answer>", Explicit));
        assert!(!format_reward("<think>a</think><answer>b</answer><answer>c</answer>", Explicit));
        assert!(!format_reward("<think>a<think>x</think></think><answer>b</answer>", Explicit));
        assert!(!format_reward("<answer>b</answer><think>a</think>", Explicit));
        assert!(!format_reward("<answer>b</answer><answer>c</answer>", Implicit));
        assert!(!format_reward("</answer>b<answer>", Implicit));
        assert!(!format_reward("<answer>b", Implicit));
        assert!(!format_reward("", Implicit));
        assert!(!format_reward("", Explicit));
    }

    #[test]
    fn stack_sums_terms_in_order() {
        let c = cfg();
        let st = RewardStack::adaptive(c).unwrap();
        let s = sample(true, 0.1);
        let v = st.score(&s, g(0.0)).unwrap();
        assert!((v - (1.0 + 1.0 + EXP_M1)).abs() < 1e-12);
        let closed = s.with_format(false);
        assert!((st.score(&closed, g(0.0)).unwrap() - (1.0 + EXP_M1)).abs() < 1e-12);
        assert!(st.uses_difficulty());
        assert!(!RewardStack::accuracy_only(c).unwrap().uses_difficulty());
        let thr = RewardStack::adaptive_thresholded(c).unwrap();
        assert_eq!(thr.score(&sample(false, 0.05), g(0.2)).unwrap(), 1.0 + 0.0 - 1.0);
    }

    #[test]
    fn generic_over_f32() {
        let c = RewardConfig::<f32>::default();
        let s = RolloutSample::<f32>::from_norm_length(true, 0.1).unwrap();
        let r = adaptive_length_reward(&s, DifficultyScore::new(0.0f32).unwrap(), &c);
        assert!((r - EXP_M1 as f32).abs() < 1e-6);
    }

    #[test]
    fn gamma_bounds() {
        assert!(DifficultyScore::new(1.01f64).is_err());
        assert!(DifficultyScore::new(f64::NAN).is_err());
        assert_eq!(DifficultyScore::saturating(2.0f64).value(), 1.0);
        assert_eq!(DifficultyScore::saturating(f64::NAN).value(), 0.5);
    }
}
