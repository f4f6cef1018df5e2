//! Model-perspective difficulty estimators.
//!
//! * [`grdr_gamma`] buckets a rollout group by its count of correct answers.
//! * [`ga2dr_gamma`] measures how dispersed the final-token attention over
//!   the audio positions is (head-averaged entropy) and min-max normalizes
//!   the entropies across a batch.

use std::fmt::Write as _;

use crate::label::DifficultyLabel;
use crate::reward::{DifficultyScore, RolloutSample};
use crate::scalar::{xlogx, Real};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DifficultyError {
    #[error("rollout group `{id}` has {size} samples; at least 2 are required")]
    GroupTooSmall { id: String, size: usize },
    #[error("attention snapshot has no heads")]
    NoHeads,
    #[error("attention snapshot has no tokens")]
    NoTokens,
    #[error("head {head} has {got} entries, expected {expected}")]
    RaggedHead { head: usize, got: usize, expected: usize },
    #[error("head {head} entry {index} is negative or not finite ({value})")]
    BadAttentionValue { head: usize, index: usize, value: f64 },
    #[error("head {head} sums to {sum}, expected 1")]
    HeadNotNormalized { head: usize, sum: f64 },
    #[error("audio index set is empty")]
    NoAudioIndices,
    #[error("audio index {index} is out of bounds for {tokens} tokens")]
    AudioIndexOutOfBounds { index: usize, tokens: usize },
    #[error("audio index {0} is listed twice")]
    DuplicateAudioIndex(usize),
    #[error("attention mass on the audio positions is zero; cannot renormalize")]
    ZeroAudioMass,
    #[error("entropy batch is empty")]
    EmptyBatch,
    #[error("entropy {value} at batch index {index} is not finite")]
    NonFiniteEntropy { index: usize, value: f64 },
    #[error("snapshot {index} in batch: {source}")]
    InBatch {
        index: usize,
        #[source]
        source: Box<DifficultyError>,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// The `G` sampled answers for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup<T> {
    pub question_id: String,
    /// Policy context the group was sampled under, when known.
    pub class: Option<DifficultyLabel>,
    pub samples: Vec<RolloutSample<T>>,
}

impl<T: Real> RolloutGroup<T> {
    pub fn new(question_id: impl Into<String>, samples: Vec<RolloutSample<T>>) -> Result<Self, DifficultyError> {
        let question_id = question_id.into();
        if samples.len() < 2 {
            return Err(DifficultyError::GroupTooSmall { id: question_id, size: samples.len() });
        }
        Ok(Self { question_id, class: None, samples })
    }

    pub fn with_class(mut self, class: DifficultyLabel) -> Self {
        self.class = Some(class);
        self
    }

    pub fn size(&self) -> usize {
        self.samples.len()
    }

    pub fn correct_count(&self) -> usize {
        self.samples.iter().filter(|s| s.correct).count()
    }
}

/// Group-ratio difficulty: 0 when at least `ceil(3G/4)` answers are correct,
/// 0.5 when at least `ceil(3G/8)` are, 1 otherwise. For `G = 8` the cutoffs
/// are 6 and 3.
pub fn grdr_gamma<T: Real>(group: &RolloutGroup<T>) -> DifficultyScore<T> {
    grdr_from_counts(group.correct_count(), group.size())
}

pub fn grdr_from_counts<T: Real>(correct: usize, group_size: usize) -> DifficultyScore<T> {
    let easy_min = (3 * group_size).div_ceil(4);
    let medium_min = (3 * group_size).div_ceil(8);
    if correct >= easy_min {
        DifficultyScore::easy()
    } else if correct >= medium_min {
        DifficultyScore::medium()
    } else {
        DifficultyScore::hard()
    }
}

/// Final-layer, last-token attention rows for each head plus the positions
/// that belong to the audio segment.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSnapshot<T> {
    head_rows: Vec<Vec<T>>,
    audio_indices: Vec<usize>,
}

impl<T: Real> AttentionSnapshot<T> {
    /// Validates the rows (nonnegative, each summing to 1) and the audio
    /// index set (nonempty, in bounds, no repeats). Indices are 0-based.
    pub fn new(head_rows: Vec<Vec<T>>, audio_indices: Vec<usize>) -> Result<Self, DifficultyError> {
        let first = head_rows.first().ok_or(DifficultyError::NoHeads)?;
        let tokens = first.len();
        if tokens == 0 {
            return Err(DifficultyError::NoTokens);
        }
        let tol = T::lit(1e-9).max(T::epsilon() * T::count(tokens) * T::lit(8.0));
        for (h, row) in head_rows.iter().enumerate() {
            if row.len() != tokens {
                return Err(DifficultyError::RaggedHead { head: h, got: row.len(), expected: tokens });
            }
            let mut sum = T::zero();
            for (j, &a) in row.iter().enumerate() {
                if !(a >= T::zero() && a.is_finite()) {
                    return Err(DifficultyError::BadAttentionValue {
                        head: h,
                        index: j,
                        value: a.to_f64().unwrap_or(f64::NAN),
                    });
                }
                sum = sum + a;
            }
            if (sum - T::one()).abs() > tol {
                return Err(DifficultyError::HeadNotNormalized { head: h, sum: sum.to_f64().unwrap_or(f64::NAN) });
            }
        }
        if audio_indices.is_empty() {
            return Err(DifficultyError::NoAudioIndices);
        }
        let mut seen = vec![false; tokens];
        for &j in &audio_indices {
            if j >= tokens {
                return Err(DifficultyError::AudioIndexOutOfBounds { index: j, tokens });
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(DifficultyError::DuplicateAudioIndex(j));
            }
        }
        Ok(Self { head_rows, audio_indices })
    }

    pub fn heads(&self) -> usize {
        self.head_rows.len()
    }

    pub fn token_count(&self) -> usize {
        self.head_rows[0].len()
    }

    pub fn head_rows(&self) -> &[Vec<T>] {
        &self.head_rows
    }

    pub fn audio_indices(&self) -> &[usize] {
        &self.audio_indices
    }

    /// Head-averaged attention restricted to the audio positions, in the
    /// order of `audio_indices`.
    pub fn audio_profile(&self) -> Vec<T> {
        let n = T::count(self.heads());
        self.audio_indices.iter().map(|&j| self.head_rows.iter().fold(T::zero(), |acc, row| acc + row[j]) / n).collect()
    }

    /// Parses the text format written by [`AttentionSnapshot::to_text`]:
    ///
    /// ```text
    /// # optional comments
    /// N T M
    /// <N lines of T whitespace-separated reals>
    /// <one line of M 0-based audio indices>
    /// ```
    pub fn parse(text: &str) -> Result<Self, DifficultyError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let perr = |line: usize, msg: String| DifficultyError::Parse { line, msg };

        let (hline, header) = lines.next().ok_or_else(|| perr(0, "missing header line `N T M`".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| perr(hline, format!("bad header field `{t}`: {e}"))))
            .collect::<Result<_, _>>()?;
        let [heads, tokens, audio] = dims[..] else {
            return Err(perr(hline, format!("header needs 3 fields, got {}", dims.len())));
        };

        let mut rows = Vec::with_capacity(heads);
        for h in 0..heads {
            let (ln, line) = lines.next().ok_or_else(|| perr(hline, format!("missing attention row {}", h + 1)))?;
            let row: Vec<T> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map(T::lit).map_err(|e| perr(ln, format!("bad attention value `{t}`: {e}"))))
                .collect::<Result<_, _>>()?;
            if row.len() != tokens {
                return Err(perr(ln, format!("expected {tokens} values, got {}", row.len())));
            }
            rows.push(row);
        }
        let (ln, line) = lines.next().ok_or_else(|| perr(hline, "missing audio index line".into()))?;
        let idx: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| perr(ln, format!("bad audio index `{t}`: {e}"))))
            .collect::<Result<_, _>>()?;
        if idx.len() != audio {
            return Err(perr(ln, format!("expected {audio} audio indices, got {}", idx.len())));
        }
        if let Some((ln, _)) = lines.next() {
            return Err(perr(ln, "trailing content after audio index line".into()));
        }
        Self::new(rows, idx).map_err(|e| perr(hline, e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.heads(), self.token_count(), self.audio_indices.len());
        for row in &self.head_rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        let idx: Vec<String> = self.audio_indices.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(out, "{}", idx.join(" "));
        out
    }
}

/// Entropy (natural log) of the head-averaged attention over the audio
/// positions. With `renormalize`, the audio sub-distribution is rescaled to
/// sum to one first, bounding the result by `ln |M|`.
pub fn audio_attention_entropy<T: Real>(snap: &AttentionSnapshot<T>, renormalize: bool) -> Result<T, DifficultyError> {
    let mut profile = snap.audio_profile();
    if renormalize {
        let mass = profile.iter().fold(T::zero(), |a, &p| a + p);
        if mass <= T::zero() {
            return Err(DifficultyError::ZeroAudioMass);
        }
        for p in &mut profile {
            *p = *p / mass;
        }
    }
    Ok(-profile.iter().fold(T::zero(), |a, &p| a + xlogx(p)))
}

/// Per-batch entropies and their min-max normalized difficulties.
#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyBatch<T> {
    pub entropies: Vec<T>,
    pub gammas: Vec<DifficultyScore<T>>,
}

/// Min-max normalization onto `[0, 1]`. A degenerate batch (all values equal,
/// including a single element) maps every entry to 0.5.
pub fn normalize_batch<T: Real>(entropies: &[T]) -> Result<DifficultyBatch<T>, DifficultyError> {
    if entropies.is_empty() {
        return Err(DifficultyError::EmptyBatch);
    }
    if let Some((index, v)) = entropies.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(DifficultyError::NonFiniteEntropy { index, value: v.to_f64().unwrap_or(f64::NAN) });
    }
    let lo = entropies.iter().copied().fold(T::infinity(), T::min);
    let hi = entropies.iter().copied().fold(T::neg_infinity(), T::max);
    let span = hi - lo;
    let gammas =
        entropies
            .iter()
            .map(|&h| {
                if span > T::zero() {
                    DifficultyScore::saturating((h - lo) / span)
                } else {
                    DifficultyScore::medium()
                }
            })
            .collect();
    Ok(DifficultyBatch { entropies: entropies.to_vec(), gammas })
}

/// Attention-entropy difficulty for every snapshot of a batch.
pub fn ga2dr_gamma<T: Real>(
    snaps: &[AttentionSnapshot<T>],
    renormalize: bool,
) -> Result<DifficultyBatch<T>, DifficultyError> {
    let entropies = snaps
        .iter()
        .enumerate()
        .map(|(index, s)| {
            audio_attention_entropy(s, renormalize).map_err(|e| DifficultyError::InBatch { index, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>, _>>()?;
    normalize_batch(&entropies)
}
