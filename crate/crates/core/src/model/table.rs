//! Table-driven model: forces a chosen per-utterance alignment so that
//! decode traces can be checked step by step.
//!
//! The trick is to make the forced emission a pure function of the joint
//! inputs. Encoder rows carry `[frame_index, alignment_id]`, the predictor
//! output carries the count of consumed labels, and the projections spread
//! those into disjoint joint-space slots. The joiner then knows exactly
//! which alignment position `(t, u)` it is being evaluated at and emits
//! dominant logits (chosen entry 10, others 0) for the scripted step.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{
    DecoderKind, JointLogits, ModelConfig, PredictorKind, PredictorStates, TransducerModel,
};

pub const DOMINANT_LOGIT: f32 = 10.0;

/// One scripted emission. `token` may be a vocabulary index, a vocabulary
/// string, or the blank marker `"<b>"`. `duration` is required for TDT
/// alignments and forbidden for RNNT ones.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableStep {
    pub token: TableToken,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<u32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TableToken {
    Id(u32),
    Name(String),
}

/// JSON form of a table model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableSpec {
    pub decoder: DecoderKind,
    pub vocab: Vec<String>,
    #[serde(default)]
    pub max_duration: usize,
    pub alignments: Vec<Vec<TableStep>>,
}

/// Internal resolved step: token id (blank = vocab_size) plus duration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Step {
    token: u32,
    duration: u32,
}

pub struct TableModel {
    cfg: ModelConfig,
    vocab: Vec<String>,
    alignments: Vec<Vec<Step>>,
    /// Per alignment: (frame, emitted-label count) -> step index.
    lookup: Vec<HashMap<(u32, u32), usize>>,
    /// Frames consumed by replaying each alignment.
    lengths: Vec<usize>,
}

impl TableModel {
    pub fn from_spec(spec: TableSpec) -> Result<Self> {
        if spec.vocab.is_empty() {
            return Err(Error::Config("table model needs a non-empty vocab".into()));
        }
        let v = spec.vocab.len();
        if spec.decoder == DecoderKind::Tdt && spec.max_duration < 1 {
            return Err(Error::Config("TDT table model needs max_duration >= 1".into()));
        }
        let mut alignments = Vec::with_capacity(spec.alignments.len());
        for (ai, steps) in spec.alignments.iter().enumerate() {
            let mut resolved = Vec::with_capacity(steps.len());
            for step in steps {
                let token = match &step.token {
                    TableToken::Id(id) => {
                        if *id as usize > v {
                            return Err(Error::Config(format!(
                                "alignment {ai}: token id {id} out of range"
                            )));
                        }
                        *id
                    }
                    TableToken::Name(name) if name == "<b>" => v as u32,
                    TableToken::Name(name) => {
                        spec.vocab
                            .iter()
                            .position(|w| w == name)
                            .ok_or_else(|| {
                                Error::Config(format!(
                                    "alignment {ai}: token {name:?} not in vocab"
                                ))
                            })? as u32
                    }
                };
                let duration = match (spec.decoder, step.duration) {
                    (DecoderKind::Rnnt, None) => 0,
                    (DecoderKind::Rnnt, Some(_)) => {
                        return Err(Error::Config(format!(
                            "alignment {ai}: RNNT steps cannot carry durations"
                        )))
                    }
                    (DecoderKind::Tdt, Some(d)) => {
                        if d as usize > spec.max_duration {
                            return Err(Error::Config(format!(
                                "alignment {ai}: duration {d} exceeds max {}",
                                spec.max_duration
                            )));
                        }
                        d
                    }
                    (DecoderKind::Tdt, None) => {
                        return Err(Error::Config(format!(
                            "alignment {ai}: TDT steps need durations"
                        )))
                    }
                };
                resolved.push(Step { token, duration });
            }
            alignments.push(resolved);
        }

        let mut lookup = Vec::with_capacity(alignments.len());
        let mut lengths = Vec::with_capacity(alignments.len());
        for (ai, steps) in alignments.iter().enumerate() {
            let (map, frames) = replay(spec.decoder, v as u32, steps);
            // Every step must be evaluated before the utterance runs out of
            // frames, otherwise the alignment cannot be reproduced.
            for (&(t, _), &k) in &map {
                if t as usize >= frames {
                    return Err(Error::Config(format!(
                        "alignment {ai}: step {k} at frame {t} is unreachable \
                         (replay consumes only {frames} frames)"
                    )));
                }
            }
            lookup.push(map);
            lengths.push(frames);
        }

        let cfg = ModelConfig {
            vocab_size: v,
            enc_dim: 2,
            pred_dim: 1,
            joint_dim: 3,
            predictor_kind: PredictorKind::Stateless,
            decoder_kind: spec.decoder,
            max_duration: spec.max_duration,
        };
        Ok(Self {
            cfg,
            vocab: spec.vocab,
            alignments,
            lookup,
            lengths,
        })
    }

    /// The two-utterance fixture: transcriptions "CAT" and "DOG" over four
    /// frames, alignments `C <b> <b> A T <b> <b>` and `<b> D <b> <b> O G <b>`.
    pub fn cat_dog() -> Self {
        let spec = cat_dog_spec();
        Self::from_spec(spec).expect("builtin fixture is valid")
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn num_utterances(&self) -> usize {
        self.alignments.len()
    }

    /// Frames each alignment consumes under replay.
    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    /// Scripted emission at a given alignment position, indexed by step.
    pub fn step(&self, utterance: usize, step: usize) -> Result<(u32, Option<u32>)> {
        let steps = self
            .alignments
            .get(utterance)
            .ok_or_else(|| Error::Index(format!("utterance {utterance}")))?;
        let s = steps
            .get(step)
            .ok_or_else(|| Error::Index(format!("step {step} of {}", steps.len())))?;
        let dur = match self.cfg.decoder_kind {
            DecoderKind::Tdt => Some(s.duration),
            DecoderKind::Rnnt => None,
        };
        Ok((s.token, dur))
    }

    /// Synthesized encoder input for the whole fixture: `enc[b, t] =
    /// [t, b]`, plus the per-utterance lengths. Frames beyond an
    /// utterance's length are zero padding.
    pub fn encoder_input(&self) -> (Tensor, Vec<usize>) {
        let b = self.alignments.len();
        let t_max = self.lengths.iter().copied().max().unwrap_or(0);
        let mut data = vec![0.0f32; b * t_max * 2];
        for bi in 0..b {
            for t in 0..self.lengths[bi] {
                data[(bi * t_max + t) * 2] = t as f32;
                data[(bi * t_max + t) * 2 + 1] = bi as f32;
            }
        }
        (
            Tensor::new(&[b, t_max, 2], data).expect("fixture tensor"),
            self.lengths.clone(),
        )
    }

    /// Map label ids back through the vocab.
    pub fn text(&self, tokens: &[u32]) -> String {
        tokens
            .iter()
            .map(|&t| self.vocab.get(t as usize).map(String::as_str).unwrap_or("?"))
            .collect()
    }
}

/// Walk an alignment, recording which step is evaluated at each
/// (frame, labels-so-far) position and how many frames the walk consumes.
/// Blank steps advance the frame (by at least one for TDT, exactly one for
/// RNNT); label steps advance the label count and, for TDT, the frame by the
/// predicted duration.
fn replay(kind: DecoderKind, blank: u32, steps: &[Step]) -> (HashMap<(u32, u32), usize>, usize) {
    let mut map = HashMap::new();
    let (mut t, mut u) = (0u32, 0u32);
    for (k, s) in steps.iter().enumerate() {
        map.insert((t, u), k);
        if s.token == blank {
            t += match kind {
                DecoderKind::Rnnt => 1,
                DecoderKind::Tdt => s.duration.max(1),
            };
        } else {
            u += 1;
            if kind == DecoderKind::Tdt {
                t += s.duration;
            }
        }
    }
    (map, t as usize)
}

pub fn cat_dog_spec() -> TableSpec {
    let step = |name: &str| TableStep {
        token: TableToken::Name(name.to_string()),
        duration: None,
    };
    TableSpec {
        decoder: DecoderKind::Rnnt,
        vocab: ["A", "C", "D", "G", "O", "T"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        max_duration: 0,
        alignments: vec![
            vec![
                step("C"),
                step("<b>"),
                step("<b>"),
                step("A"),
                step("T"),
                step("<b>"),
                step("<b>"),
            ],
            vec![
                step("<b>"),
                step("D"),
                step("<b>"),
                step("<b>"),
                step("O"),
                step("G"),
                step("<b>"),
            ],
        ],
    }
}

impl TransducerModel for TableModel {
    fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn init_states(&self, batch: usize) -> PredictorStates {
        PredictorStates::StepCount(vec![0; batch])
    }

    fn predictor_step(
        &self,
        states: &PredictorStates,
        tokens: &[u32],
    ) -> Result<(Tensor, PredictorStates)> {
        let PredictorStates::StepCount(counts) = states else {
            return Err(Error::Contract("table model needs StepCount states".into()));
        };
        if tokens.len() != counts.len() {
            return Err(Error::Shape(format!(
                "{} tokens for batch {}",
                tokens.len(),
                counts.len()
            )));
        }
        for &t in tokens {
            if t > self.cfg.bos_id() {
                return Err(Error::Contract(format!("token {t} out of range")));
            }
        }
        let dec = Tensor::new(
            &[counts.len(), 1],
            counts.iter().map(|&c| c as f32).collect(),
        )?;
        let next = PredictorStates::StepCount(counts.iter().map(|&c| c + 1).collect());
        Ok((dec, next))
    }

    fn project_encoder_rows(&self, rows: &Tensor) -> Result<Tensor> {
        if rows.rank() != 2 || rows.dims()[1] != 2 {
            return Err(Error::Shape(format!(
                "table encoder rows have dims {:?}, expected [N, 2]",
                rows.dims()
            )));
        }
        let n = rows.dims()[0];
        let mut out = Vec::with_capacity(n * 3);
        for i in 0..n {
            let r = rows.row(i)?;
            out.extend_from_slice(&[r[0], r[1], 0.0]);
        }
        Tensor::new(&[n, 3], out)
    }

    fn project_predictor(&self, dec: &Tensor) -> Result<Tensor> {
        if dec.rank() != 2 || dec.dims()[1] != 1 {
            return Err(Error::Shape(format!(
                "table predictor rows have dims {:?}, expected [N, 1]",
                dec.dims()
            )));
        }
        let n = dec.dims()[0];
        let mut out = Vec::with_capacity(n * 3);
        for i in 0..n {
            out.extend_from_slice(&[0.0, 0.0, dec.row(i)?[0]]);
        }
        Tensor::new(&[n, 3], out)
    }

    fn joint(&self, enc_proj: &Tensor, pred_proj: &Tensor) -> Result<JointLogits> {
        if enc_proj.dims() != pred_proj.dims() || enc_proj.rank() != 2 || enc_proj.dims()[1] != 3 {
            return Err(Error::Shape(format!(
                "table joint input dims {:?} vs {:?}",
                enc_proj.dims(),
                pred_proj.dims()
            )));
        }
        let batch = enc_proj.dims()[0];
        let v1 = self.cfg.num_token_outputs();
        let blank = self.cfg.blank_id();
        let tdt = self.cfg.decoder_kind == DecoderKind::Tdt;
        let nd = self.cfg.num_duration_outputs();
        let mut tok = vec![0.0f32; batch * v1];
        let mut dur = tdt.then(|| vec![0.0f32; batch * nd]);
        for i in 0..batch {
            let ep = enc_proj.row(i)?;
            let pp = pred_proj.row(i)?;
            // Slot sums recover (frame, alignment id, label count); all are
            // small exact integers so the additions are lossless.
            let t = (ep[0] + pp[0]) as u32;
            let aid = (ep[1] + pp[1]) as usize;
            let u = (ep[2] + pp[2]) as u32;
            let scripted = self
                .lookup
                .get(aid)
                .and_then(|m| m.get(&(t, u)))
                .map(|&k| self.alignments[aid][k]);
            // Off-script positions only occur for rows whose result the
            // decoder discards; emit a frame-advancing blank so any caller
            // still terminates.
            let step = scripted.unwrap_or(Step {
                token: blank,
                duration: 1.min(self.cfg.max_duration as u32),
            });
            tok[i * v1 + step.token as usize] = DOMINANT_LOGIT;
            if let Some(d) = dur.as_mut() {
                d[i * nd + step.duration as usize] = DOMINANT_LOGIT;
            }
        }
        Ok(JointLogits {
            tokens: Tensor::new(&[batch, v1], tok)?,
            durations: match dur {
                Some(d) => Some(Tensor::new(&[batch, nd], d)?),
                None => None,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cat_dog_layout() {
        let m = TableModel::cat_dog();
        assert_eq!(m.num_utterances(), 2);
        assert_eq!(m.lengths(), &[4, 4]);
        // First scripted emission per the fixture captions.
        let (c, _) = m.step(0, 0).unwrap();
        assert_eq!(m.vocab()[c as usize], "C");
        let (b, _) = m.step(1, 0).unwrap();
        assert_eq!(b, m.config().blank_id());
    }

    #[test]
    fn step_out_of_range_errors() {
        let m = TableModel::cat_dog();
        assert!(m.step(0, 7).is_err());
        assert!(m.step(2, 0).is_err());
    }

    #[test]
    fn empty_alignment_consumes_zero_frames() {
        let spec = TableSpec {
            decoder: DecoderKind::Rnnt,
            vocab: vec!["A".into()],
            max_duration: 0,
            alignments: vec![vec![]],
        };
        let m = TableModel::from_spec(spec).unwrap();
        assert_eq!(m.lengths(), &[0]);
        assert!(m.step(0, 0).is_err());
    }

    #[test]
    fn trailing_label_is_rejected() {
        // A label after the last frame advance can never be replayed.
        let spec = TableSpec {
            decoder: DecoderKind::Rnnt,
            vocab: vec!["A".into()],
            max_duration: 0,
            alignments: vec![vec![TableStep {
                token: TableToken::Name("A".into()),
                duration: None,
            }]],
        };
        assert!(matches!(TableModel::from_spec(spec), Err(Error::Config(_))));
    }

    #[test]
    fn tdt_replay_counts_durations() {
        let step = |name: &str, d: u32| TableStep {
            token: TableToken::Name(name.to_string()),
            duration: Some(d),
        };
        let spec = TableSpec {
            decoder: DecoderKind::Tdt,
            vocab: vec!["D".into(), "G".into(), "O".into()],
            max_duration: 2,
            alignments: vec![vec![
                step("D", 1),
                step("O", 2),
                step("G", 1),
                step("<b>", 1),
            ]],
        };
        let m = TableModel::from_spec(spec).unwrap();
        assert_eq!(m.lengths(), &[5]);
    }

    #[test]
    fn unknown_token_name_errors() {
        let spec = TableSpec {
            decoder: DecoderKind::Rnnt,
            vocab: vec!["A".into()],
            max_duration: 0,
            alignments: vec![vec![TableStep {
                token: TableToken::Name("Z".into()),
                duration: None,
            }]],
        };
        assert!(TableModel::from_spec(spec).is_err());
    }

    #[test]
    fn spec_roundtrips_through_json() {
        let spec = cat_dog_spec();
        let json = serde_json::to_string(&spec).unwrap();
        let back: TableSpec = serde_json::from_str(&json).unwrap();
        let m = TableModel::from_spec(back).unwrap();
        assert_eq!(m.lengths(), &[4, 4]);
    }
}
