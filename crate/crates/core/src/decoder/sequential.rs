//! Single-utterance greedy decoding; the oracle the batched algorithms are
//! checked against.
//!
//! The predictor output is refreshed only after a label is accepted (it is
//! a pure function of state and last token, so re-evaluating it on blank
//! steps would produce identical bits). Time advances on blanks (RNNT) or
//! by the predicted duration (TDT); a per-frame symbol cap forces time
//! forward if a model never predicts blank.

use crate::counters::CallCounters;
use crate::error::{Error, Result};
use crate::hyps::{initial_capacity_for, BatchedHyps, DecodeOutcome};
use crate::model::{DecoderKind, PredictorStates, TransducerModel};
use crate::tensor::{argmax_row, log_softmax_at, BoolMask, Tensor};

use super::DecodeOptions;

struct SeqState<'m> {
    model: &'m dyn TransducerModel,
    precompute: bool,
    /// [T, joint_dim] when projections are precomputed.
    enc_proj: Option<Tensor>,
    states: PredictorStates,
    pending_token: u32,
    /// (predictor output, successor states, cached projection).
    dec: Option<(Tensor, PredictorStates, Option<Tensor>)>,
}

impl<'m> SeqState<'m> {
    fn new(
        model: &'m dyn TransducerModel,
        enc_row: &Tensor,
        opts: &DecodeOptions,
        counters: &mut CallCounters,
    ) -> Result<Self> {
        let enc_proj = if opts.precompute_projections {
            counters.record_encoder_projection_rows(enc_row.dims()[0]);
            Some(model.project_encoder_rows(enc_row)?)
        } else {
            None
        };
        Ok(Self {
            model,
            precompute: opts.precompute_projections,
            enc_proj,
            states: model.init_states(1),
            pending_token: model.config().bos_id(),
            dec: None,
        })
    }

    fn refresh_dec(&mut self, counters: &mut CallCounters) -> Result<()> {
        if self.dec.is_none() {
            counters.record_predictor(1, 0);
            let (d, ns) = self
                .model
                .predictor_step(&self.states, &[self.pending_token])?;
            let pp = if self.precompute {
                counters.record_predictor_projection();
                Some(self.model.project_predictor(&d)?)
            } else {
                None
            };
            self.dec = Some((d, ns, pp));
        }
        Ok(())
    }

    /// One joint evaluation at frame `t`.
    fn evaluate(
        &mut self,
        enc_row: &Tensor,
        t: usize,
        counters: &mut CallCounters,
    ) -> Result<crate::model::JointLogits> {
        self.refresh_dec(counters)?;
        let ep = match &self.enc_proj {
            Some(p) => Tensor::new(&[1, p.dims()[1]], p.row(t)?.to_vec())?,
            None => {
                let raw = Tensor::new(&[1, enc_row.dims()[1]], enc_row.row(t)?.to_vec())?;
                counters.record_encoder_projection_rows(1);
                self.model.project_encoder_rows(&raw)?
            }
        };
        let (d, _, pp_cached) = self.dec.as_ref().expect("refreshed above");
        let fresh;
        let pp = match pp_cached {
            Some(p) => p,
            None => {
                counters.record_predictor_projection();
                fresh = self.model.project_predictor(d)?;
                &fresh
            }
        };
        let out = self.model.joint(&ep, pp)?;
        counters.record_joint(1, 0);
        Ok(out)
    }

    /// Commit the pending predictor state and schedule a refresh with the
    /// accepted label.
    fn accept(&mut self, label: u32) {
        let (_, ns, _) = self.dec.take().expect("a decision implies a live dec");
        self.states = ns;
        self.pending_token = label;
    }
}

/// Greedy RNNT decoding of one utterance; `enc_row` is [T, enc_dim].
pub fn decode_sequential_rnnt(
    model: &dyn TransducerModel,
    enc_row: &Tensor,
    opts: &DecodeOptions,
) -> Result<(DecodeOutcome, CallCounters)> {
    let cfg = model.config();
    if cfg.decoder_kind != DecoderKind::Rnnt {
        return Err(Error::Config("decode_sequential_rnnt needs an RNNT model".into()));
    }
    check_row(enc_row, cfg.enc_dim)?;
    let t_total = enc_row.dims()[0];
    let blank = cfg.blank_id();
    let mut counters = CallCounters::default();
    let mut hyps = BatchedHyps::new(1, initial_capacity_for(t_total), cfg.vocab_size, false)?;
    let mut seq = SeqState::new(model, enc_row, opts, &mut counters)?;

    let mut t = 0usize;
    let mut symbols_at_frame = 0usize;
    while t < t_total {
        counters.outer_loop_iterations += 1;
        let out = seq.evaluate(enc_row, t, &mut counters)?;
        let row = out.tokens.row(0)?;
        let label = argmax_row(row)? as u32;
        let step_score = log_softmax_at(row, label as usize)?;
        if label != blank {
            hyps.add_results(
                &BoolMask::from_slice(&[true]),
                &[label],
                &[t as u32],
                &[step_score],
                None,
            )?;
            seq.accept(label);
            symbols_at_frame += 1;
            if symbols_at_frame >= opts.max_symbols_per_frame {
                t += 1;
                symbols_at_frame = 0;
            }
        } else {
            hyps.add_results(&BoolMask::from_slice(&[false]), &[0], &[0], &[step_score], None)?;
            t += 1;
            symbols_at_frame = 0;
        }
    }
    Ok((hyps.unpack().remove(0), counters))
}

/// Greedy TDT decoding of one utterance; `enc_row` is [T, enc_dim].
///
/// Time advances by the predicted duration for blanks and accepted labels
/// alike. A blank with duration 0 still advances one frame (otherwise the
/// decode would stall); a label with duration 0 stays on the frame and
/// counts toward the per-frame symbol cap.
pub fn decode_sequential_tdt(
    model: &dyn TransducerModel,
    enc_row: &Tensor,
    opts: &DecodeOptions,
) -> Result<(DecodeOutcome, CallCounters)> {
    let cfg = model.config();
    if cfg.decoder_kind != DecoderKind::Tdt {
        return Err(Error::Config("decode_sequential_tdt needs a TDT model".into()));
    }
    check_row(enc_row, cfg.enc_dim)?;
    let t_total = enc_row.dims()[0];
    let blank = cfg.blank_id();
    let mut counters = CallCounters::default();
    let mut hyps = BatchedHyps::new(1, initial_capacity_for(t_total), cfg.vocab_size, true)?;
    let mut seq = SeqState::new(model, enc_row, opts, &mut counters)?;

    let mut t = 0usize;
    let mut symbols_at_frame = 0usize;
    while t < t_total {
        counters.outer_loop_iterations += 1;
        let out = seq.evaluate(enc_row, t, &mut counters)?;
        let row = out.tokens.row(0)?;
        let durs = out
            .durations
            .as_ref()
            .ok_or_else(|| Error::Contract("TDT model produced no duration logits".into()))?;
        let drow = durs.row(0)?;
        let label = argmax_row(row)? as u32;
        let duration = argmax_row(drow)? as u32;
        let step_score = log_softmax_at(row, label as usize)? + log_softmax_at(drow, duration as usize)?;
        if label != blank {
            hyps.add_results(
                &BoolMask::from_slice(&[true]),
                &[label],
                &[t as u32],
                &[step_score],
                Some(&[duration]),
            )?;
            seq.accept(label);
            symbols_at_frame += 1;
            if duration == 0 {
                counters.label_zero_duration_steps += 1;
                if symbols_at_frame >= opts.max_symbols_per_frame {
                    t += 1;
                    symbols_at_frame = 0;
                }
            } else {
                t += duration as usize;
                symbols_at_frame = 0;
            }
        } else {
            hyps.add_results(
                &BoolMask::from_slice(&[false]),
                &[0],
                &[0],
                &[step_score],
                Some(&[0]),
            )?;
            let advance = if duration == 0 {
                counters.blank_zero_duration_steps += 1;
                1
            } else {
                duration as usize
            };
            t += advance;
            symbols_at_frame = 0;
        }
    }
    Ok((hyps.unpack().remove(0), counters))
}

fn check_row(enc_row: &Tensor, enc_dim: usize) -> Result<()> {
    if enc_row.rank() != 2 || enc_row.dims()[1] != enc_dim {
        return Err(Error::Shape(format!(
            "utterance encoder output must be [T, {enc_dim}], got {:?}",
            enc_row.dims()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::extract_row;
    use crate::model::{
        DecoderKind, ModelConfig, PredictorKind, SyntheticModel, TableModel, TableSpec, TableStep,
        TableToken,
    };

    fn opts() -> DecodeOptions {
        DecodeOptions::default()
    }

    fn small_cfg(kind: DecoderKind) -> ModelConfig {
        ModelConfig {
            vocab_size: 4,
            enc_dim: 3,
            pred_dim: 3,
            joint_dim: 3,
            predictor_kind: PredictorKind::Recurrent,
            decoder_kind: kind,
            max_duration: if kind == DecoderKind::Tdt { 2 } else { 0 },
        }
    }

    #[test]
    fn cat_alignment_replays() {
        let m = TableModel::cat_dog();
        let (enc, lens) = m.encoder_input();
        let row = extract_row(&enc, 0, lens[0]).unwrap();
        let (out, _) = decode_sequential_rnnt(&m, &row, &opts()).unwrap();
        assert_eq!(m.text(&out.tokens), "CAT");
        assert_eq!(out.timestamps, vec![0, 2, 2]);
    }

    #[test]
    fn dog_alignment_replays() {
        let m = TableModel::cat_dog();
        let (enc, lens) = m.encoder_input();
        let row = extract_row(&enc, 1, lens[1]).unwrap();
        let (out, _) = decode_sequential_rnnt(&m, &row, &opts()).unwrap();
        assert_eq!(m.text(&out.tokens), "DOG");
        assert_eq!(out.timestamps, vec![1, 3, 3]);
    }

    #[test]
    fn always_blank_makes_one_joint_per_frame() {
        let cfg = small_cfg(DecoderKind::Rnnt);
        let blank = cfg.blank_id();
        let m = SyntheticModel::constant(cfg, blank, 0).unwrap();
        let enc = Tensor::zeros(&[5, 3]).unwrap();
        let (out, counters) = decode_sequential_rnnt(&m, &enc, &opts()).unwrap();
        assert!(out.tokens.is_empty());
        assert_eq!(counters.joint_batched_invocations, 5);
        assert_eq!(counters.predictor_batched_invocations, 1);
    }

    #[test]
    fn never_blank_is_capped_by_the_guard() {
        let cfg = small_cfg(DecoderKind::Rnnt);
        let m = SyntheticModel::constant(cfg, 2, 0).unwrap();
        let enc = Tensor::zeros(&[2, 3]).unwrap();
        let (out, counters) = decode_sequential_rnnt(&m, &enc, &opts()).unwrap();
        assert_eq!(out.tokens.len(), 20);
        assert!(out.tokens.iter().all(|&t| t == 2));
        assert_eq!(out.timestamps[..10], [0; 10]);
        assert_eq!(out.timestamps[10..], [1; 10]);
        assert_eq!(counters.joint_batched_invocations, 20);
    }

    #[test]
    fn empty_utterance_decodes_to_nothing() {
        let cfg = small_cfg(DecoderKind::Rnnt);
        let m = SyntheticModel::from_seed(1, cfg).unwrap();
        let enc = Tensor::new(&[0, 3], vec![]).unwrap();
        let (out, counters) = decode_sequential_rnnt(&m, &enc, &opts()).unwrap();
        assert!(out.tokens.is_empty());
        assert_eq!(out.score, 0.0);
        assert_eq!(counters.joint_batched_invocations, 0);
    }

    #[test]
    fn tdt_table_fixture_with_durations() {
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
        let (enc, lens) = m.encoder_input();
        assert_eq!(lens, vec![5]);
        let row = extract_row(&enc, 0, lens[0]).unwrap();
        let (out, _) = decode_sequential_tdt(&m, &row, &opts()).unwrap();
        assert_eq!(m.text(&out.tokens), "DOG");
        assert_eq!(out.timestamps, vec![0, 1, 3]);
        assert_eq!(out.durations.as_deref(), Some(&[1, 2, 1][..]));
    }

    #[test]
    fn tdt_blank_skips_frames() {
        let cfg = small_cfg(DecoderKind::Tdt);
        let blank = cfg.blank_id();
        let m = SyntheticModel::constant(cfg, blank, 2).unwrap();
        let enc = Tensor::zeros(&[4, 3]).unwrap();
        let (out, counters) = decode_sequential_tdt(&m, &enc, &opts()).unwrap();
        assert!(out.tokens.is_empty());
        assert_eq!(counters.joint_batched_invocations, 2); // t: 0 -> 2 -> 4
    }

    #[test]
    fn tdt_blank_duration_zero_advances_anyway() {
        let cfg = small_cfg(DecoderKind::Tdt);
        let blank = cfg.blank_id();
        let m = SyntheticModel::constant(cfg, blank, 0).unwrap();
        let enc = Tensor::zeros(&[3, 3]).unwrap();
        let (out, counters) = decode_sequential_tdt(&m, &enc, &opts()).unwrap();
        assert!(out.tokens.is_empty());
        assert_eq!(counters.joint_batched_invocations, 3);
        assert_eq!(counters.blank_zero_duration_steps, 3);
    }

    #[test]
    fn precompute_toggle_is_bitwise_invisible() {
        let cfg = small_cfg(DecoderKind::Rnnt);
        let m = SyntheticModel::from_seed(12, cfg).unwrap();
        let mut rng = crate::rng::Xoshiro256StarStar::seed_from_u64(120);
        let enc =
            Tensor::new(&[6, 3], (0..18).map(|_| rng.next_f32_centered()).collect()).unwrap();
        let (a, ca) = decode_sequential_rnnt(&m, &enc, &opts()).unwrap();
        let on = DecodeOptions {
            precompute_projections: true,
            ..opts()
        };
        let (b, cb) = decode_sequential_rnnt(&m, &enc, &on).unwrap();
        assert!(a.bitwise_eq(&b));
        assert_eq!(
            ca.joint_batched_invocations,
            cb.joint_batched_invocations
        );
        // With precomputation the predictor projection runs once per
        // predictor call; without, once per joint call.
        assert_eq!(cb.predictor_projection_evaluations, cb.predictor_batched_invocations);
        assert_eq!(ca.predictor_projection_evaluations, ca.joint_batched_invocations);
    }
}
