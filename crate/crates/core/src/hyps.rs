//! Batch-parallel partial-hypothesis storage.
//!
//! Transcripts, timestamps and (for TDT) durations live in [B, capacity]
//! row-major buffers with one write cursor per row. Appends are masked:
//! one call appends to any subset of rows. Capacity doubles when a masked
//! append would overflow, so appends are O(1) amortized. Step scores
//! accumulate for every row on every call, blanks included; callers pass
//! 0.0 for rows that took no step (adding 0.0 to a non-negative-zero f32 is
//! a bitwise no-op, and accumulated log-probabilities never produce -0.0).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::BoolMask;

#[derive(Clone, Debug)]
pub struct BatchedHyps {
    batch: usize,
    capacity: usize,
    lengths: Vec<usize>,
    transcripts: Vec<u32>,
    timestamps: Vec<u32>,
    durations: Option<Vec<u32>>,
    scores: Vec<f32>,
    vocab_size: usize,
    reallocations: usize,
}

impl BatchedHyps {
    /// `initial_capacity` is typically `ceil(T/2).max(1)` for a batch whose
    /// longest utterance has `T` frames; see [`initial_capacity_for`].
    pub fn new(
        batch: usize,
        initial_capacity: usize,
        vocab_size: usize,
        track_durations: bool,
    ) -> Result<Self> {
        if batch < 1 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if initial_capacity < 1 {
            return Err(Error::Config("initial capacity must be >= 1".into()));
        }
        Ok(Self {
            batch,
            capacity: initial_capacity,
            lengths: vec![0; batch],
            transcripts: vec![0; batch * initial_capacity],
            timestamps: vec![0; batch * initial_capacity],
            durations: track_durations.then(|| vec![0; batch * initial_capacity]),
            scores: vec![0.0; batch],
            vocab_size,
            reallocations: 0,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    /// How many times the storage grew.
    pub fn reallocations(&self) -> usize {
        self.reallocations
    }

    /// Append `labels[i] @ times[i]` to every row with a true mask and add
    /// `step_scores[i]` to every row's score. Real labels only; appending
    /// blank or BOS under a true mask is a caller bug.
    pub fn add_results(
        &mut self,
        add_mask: &BoolMask,
        labels: &[u32],
        times: &[u32],
        step_scores: &[f32],
        durations: Option<&[u32]>,
    ) -> Result<()> {
        let b = self.batch;
        if add_mask.len() != b
            || labels.len() != b
            || times.len() != b
            || step_scores.len() != b
            || durations.map_or(false, |d| d.len() != b)
        {
            return Err(Error::Shape("add_results argument lengths disagree".into()));
        }
        if self.durations.is_some() && durations.is_none() && add_mask.any() {
            return Err(Error::Contract("duration-tracking hyps need durations".into()));
        }
        for i in 0..b {
            if add_mask.get(i) && labels[i] as usize >= self.vocab_size {
                return Err(Error::Contract(format!(
                    "label {} at row {i} is not a real label (vocab {})",
                    labels[i], self.vocab_size
                )));
            }
        }
        // Grow exactly when a masked row sits at capacity, never earlier.
        while (0..b).any(|i| add_mask.get(i) && self.lengths[i] == self.capacity) {
            self.grow();
        }
        for i in 0..b {
            if add_mask.get(i) {
                let at = i * self.capacity + self.lengths[i];
                self.transcripts[at] = labels[i];
                self.timestamps[at] = times[i];
                if let (Some(store), Some(src)) = (self.durations.as_mut(), durations) {
                    store[at] = src[i];
                }
                self.lengths[i] += 1;
            }
            self.scores[i] += step_scores[i];
        }
        Ok(())
    }

    /// Double the capacity, preserving contents.
    pub fn grow(&mut self) {
        let old = self.capacity;
        let new = old * 2;
        let regrow = |buf: &mut Vec<u32>, batch: usize| {
            let mut bigger = vec![0u32; batch * new];
            for i in 0..batch {
                bigger[i * new..i * new + old].copy_from_slice(&buf[i * old..(i + 1) * old]);
            }
            *buf = bigger;
        };
        regrow(&mut self.transcripts, self.batch);
        regrow(&mut self.timestamps, self.batch);
        if let Some(d) = self.durations.as_mut() {
            regrow(d, self.batch);
        }
        self.capacity = new;
        self.reallocations += 1;
    }

    /// Unpack into per-utterance outcomes, first `lengths[i]` entries each.
    pub fn unpack(&self) -> Vec<DecodeOutcome> {
        (0..self.batch)
            .map(|i| {
                let range = i * self.capacity..i * self.capacity + self.lengths[i];
                DecodeOutcome {
                    tokens: self.transcripts[range.clone()].to_vec(),
                    timestamps: self.timestamps[range.clone()].to_vec(),
                    durations: self.durations.as_ref().map(|d| d[range].to_vec()),
                    score: self.scores[i],
                }
            })
            .collect()
    }
}

/// Capacity policy: half the longest utterance, at least one slot.
pub fn initial_capacity_for(max_frames: usize) -> usize {
    max_frames.div_ceil(2).max(1)
}

/// Final per-utterance hypothesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeOutcome {
    pub tokens: Vec<u32>,
    pub timestamps: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub durations: Option<Vec<u32>>,
    pub score: f32,
}

impl DecodeOutcome {
    /// Equality down to the score's bit pattern.
    pub fn bitwise_eq(&self, other: &DecodeOutcome) -> bool {
        self.tokens == other.tokens
            && self.timestamps == other.timestamps
            && self.durations == other.durations
            && self.score.to_bits() == other.score.to_bits()
    }
}

/// First point where two outcome lists disagree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutcomeDivergence {
    pub utterance: usize,
    pub field: &'static str,
    /// Step index within the field, when applicable.
    pub step: Option<usize>,
    pub left: String,
    pub right: String,
}

impl std::fmt::Display for OutcomeDivergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "utterance {}, {}", self.utterance, self.field)?;
        if let Some(s) = self.step {
            write!(f, " at step {s}")?;
        }
        write!(f, ": {} vs {}", self.left, self.right)
    }
}

/// Compare two outcome lists bitwise, reporting the first divergence.
pub fn diff_outcomes(a: &[DecodeOutcome], b: &[DecodeOutcome]) -> Option<OutcomeDivergence> {
    if a.len() != b.len() {
        return Some(OutcomeDivergence {
            utterance: a.len().min(b.len()),
            field: "utterance count",
            step: None,
            left: a.len().to_string(),
            right: b.len().to_string(),
        });
    }
    for (u, (x, y)) in a.iter().zip(b).enumerate() {
        let vecs: [(&'static str, &[u32], &[u32]); 3] = [
            ("tokens", &x.tokens, &y.tokens),
            ("timestamps", &x.timestamps, &y.timestamps),
            (
                "durations",
                x.durations.as_deref().unwrap_or(&[]),
                y.durations.as_deref().unwrap_or(&[]),
            ),
        ];
        for (field, l, r) in vecs {
            if l.len() != r.len() {
                return Some(OutcomeDivergence {
                    utterance: u,
                    field,
                    step: Some(l.len().min(r.len())),
                    left: format!("len {}", l.len()),
                    right: format!("len {}", r.len()),
                });
            }
            if let Some(s) = l.iter().zip(r).position(|(a, b)| a != b) {
                return Some(OutcomeDivergence {
                    utterance: u,
                    field,
                    step: Some(s),
                    left: l[s].to_string(),
                    right: r[s].to_string(),
                });
            }
        }
        if x.score.to_bits() != y.score.to_bits() {
            return Some(OutcomeDivergence {
                utterance: u,
                field: "score",
                step: None,
                left: format!("{:?}", x.score),
                right: format!("{:?}", y.score),
            });
        }
    }
    None
}
