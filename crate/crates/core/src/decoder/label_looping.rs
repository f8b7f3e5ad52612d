//! Label-looping batched decoding.
//!
//! The outer loop iterates over emitted labels: one predictor call per
//! iteration, for the whole batch, no masked state bookkeeping (every row
//! consumed a token last iteration, or is inactive and its output is
//! discarded). The inner loop scans blanks with the predictor output held
//! fixed, advancing each row's own frame cursor until every active row has
//! found its next label or run out of frames.
//!
//! Two bookkeeping rules keep the per-row decision sequence identical to
//! the sequential decoder while keeping the predictor-call count at
//! max-hypothesis-length + 1:
//! - an accepted label's time advance (TDT durations) is applied lazily at
//!   the row's next scan entry, and
//! - a row that hit the per-frame symbol cap has its cursor pushed forward
//!   at its next scan entry, not at acceptance time.
//!
//! Inactive rows still occupy batch rows in every predictor and joint call;
//! their results are discarded and tallied as wasted element evaluations.
//! Works for RNNT (every advance is 1 frame) and TDT (advances come from
//! the duration head).

use crate::counters::CallCounters;
use crate::error::{Error, Result};
use crate::hyps::{initial_capacity_for, BatchedHyps};
use crate::model::{DecoderKind, TransducerModel};
use crate::tensor::{argmax_row, log_softmax_at, BoolMask};

use super::{joint_encoder_rows, DecodeRequest, DecodeResult};

pub fn decode_label_looping_rnnt(
    model: &dyn TransducerModel,
    req: &DecodeRequest,
) -> Result<DecodeResult> {
    decode_label_looping(model, req, DecoderKind::Rnnt)
}

pub fn decode_label_looping_tdt(
    model: &dyn TransducerModel,
    req: &DecodeRequest,
) -> Result<DecodeResult> {
    decode_label_looping(model, req, DecoderKind::Tdt)
}

fn decode_label_looping(
    model: &dyn TransducerModel,
    req: &DecodeRequest,
    kind: DecoderKind,
) -> Result<DecodeResult> {
    req.validate(model)?;
    let cfg = model.config();
    if cfg.decoder_kind != kind {
        return Err(Error::Config(format!(
            "label-looping {kind} entry point got a {} model",
            cfg.decoder_kind
        )));
    }
    let tdt = kind == DecoderKind::Tdt;
    let batch = req.input_lengths.len();
    let mut counters = CallCounters::default();
    if batch == 0 {
        return Ok(DecodeResult {
            outcomes: Vec::new(),
            counters,
        });
    }
    let t_max = req.enc.dims()[1];
    let max_len = req.input_lengths.iter().copied().max().unwrap_or(0);
    let blank = cfg.blank_id();

    let mut hyps = BatchedHyps::new(batch, initial_capacity_for(max_len), cfg.vocab_size, tdt)?;
    let mut states = model.init_states(batch);
    let mut last_predictions = vec![cfg.bos_id(); batch];
    let enc_proj = if req.precompute_projections {
        counters.record_encoder_projection_rows(batch * t_max);
        Some(model.project_encoder(req.enc)?)
    } else {
        None
    };

    let mut b2time = vec![0usize; batch];
    let mut b2active: Vec<bool> = req.input_lengths.iter().map(|&l| l > 0).collect();
    let mut symbols_at_frame = vec![0usize; batch];
    // Time advance owed by the last accepted label, applied at scan entry.
    let mut pending_advance = vec![0usize; batch];

    while b2active.iter().any(|&a| a) {
        counters.outer_loop_iterations += 1;

        // One predictor call per emitted label, batch-wide. Nothing is
        // selectively kept: active rows all consumed a token, and inactive
        // rows' outputs (dummy last predictions) are never observed.
        let inactive = b2active.iter().filter(|&&a| !a).count();
        counters.record_predictor(batch, inactive);
        let (dec, new_states) = model.predictor_step(&states, &last_predictions)?;
        states = new_states;
        let pp_cached = if req.precompute_projections {
            counters.record_predictor_projection();
            Some(model.project_predictor(&dec)?)
        } else {
            None
        };

        // Scan entry: settle owed advances, then the symbol-cap advance.
        for i in 0..batch {
            if !b2active[i] {
                continue;
            }
            if pending_advance[i] > 0 {
                b2time[i] += pending_advance[i];
                pending_advance[i] = 0;
                symbols_at_frame[i] = 0;
            }
            if symbols_at_frame[i] >= req.max_symbols_per_frame {
                b2time[i] += 1;
                symbols_at_frame[i] = 0;
            }
            if b2time[i] >= req.input_lengths[i] {
                b2active[i] = false;
            }
        }

        // Blank scan: joint evaluations with this iteration's dec, each row
        // advancing through blanks until it finds a label or goes inactive.
        let mut scanning = b2active.clone();
        while scanning.iter().any(|&s| s) {
            counters.inner_loop_iterations += 1;
            let times: Vec<usize> = b2time.iter().map(|&t| t.min(t_max - 1)).collect();
            let enc_rows =
                joint_encoder_rows(model, req.enc, enc_proj.as_ref(), &times, &mut counters)?;
            let fresh_pp;
            let pp = match &pp_cached {
                Some(p) => p,
                None => {
                    counters.record_predictor_projection();
                    fresh_pp = model.project_predictor(&dec)?;
                    &fresh_pp
                }
            };
            let out = model.joint(&enc_rows, pp)?;
            let scanning_rows = scanning.iter().filter(|&&s| s).count();
            counters.record_joint(batch, batch - scanning_rows);

            let mut add_mask = BoolMask::new_false(batch);
            let mut labels = vec![0u32; batch];
            let mut label_times = vec![0u32; batch];
            let mut step_scores = vec![0.0f32; batch];
            let mut durations = vec![0u32; batch];
            for i in 0..batch {
                if !scanning[i] {
                    continue;
                }
                let row = out.tokens.row(i)?;
                let k = argmax_row(row)? as u32;
                let mut score = log_softmax_at(row, k as usize)?;
                let duration = if tdt {
                    let durs = out.durations.as_ref().ok_or_else(|| {
                        Error::Contract("TDT model produced no duration logits".into())
                    })?;
                    let drow = durs.row(i)?;
                    let d = argmax_row(drow)? as u32;
                    score += log_softmax_at(drow, d as usize)?;
                    d
                } else {
                    0
                };
                step_scores[i] = score;
                if k != blank {
                    add_mask.set(i, true);
                    labels[i] = k;
                    label_times[i] = b2time[i] as u32;
                    durations[i] = duration;
                    symbols_at_frame[i] += 1;
                    pending_advance[i] = duration as usize;
                    if tdt && duration == 0 {
                        counters.label_zero_duration_steps += 1;
                    }
                    scanning[i] = false;
                } else {
                    let advance = if tdt {
                        if duration == 0 {
                            counters.blank_zero_duration_steps += 1;
                            1
                        } else {
                            duration as usize
                        }
                    } else {
                        1
                    };
                    b2time[i] += advance;
                    symbols_at_frame[i] = 0;
                    if b2time[i] >= req.input_lengths[i] {
                        b2active[i] = false;
                        scanning[i] = false;
                    }
                }
            }
            hyps.add_results(
                &add_mask,
                &labels,
                &label_times,
                &step_scores,
                tdt.then_some(durations.as_slice()),
            )?;
            for i in 0..batch {
                if add_mask.get(i) {
                    last_predictions[i] = labels[i];
                }
            }
        }
    }
    Ok(DecodeResult {
        outcomes: hyps.unpack(),
        counters,
    })
}
