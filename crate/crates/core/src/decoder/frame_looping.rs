//! Conventional batched decoding: the outer loop walks frames in lockstep,
//! an inner loop drains each frame's labels for the whole batch.
//!
//! The predictor runs for the full batch on every evaluation, but its state
//! updates are committed only for rows that emitted a label; everything
//! else is recomputed (and counted as wasted). Rows whose utterance ended,
//! rows that already predicted blank at this frame, and rows that hit the
//! per-frame symbol cap sit masked until the frame advances. RNNT only:
//! duration predictions have no place in a frame-synchronous loop.

use crate::counters::CallCounters;
use crate::error::Result;
use crate::hyps::{initial_capacity_for, BatchedHyps};
use crate::model::TransducerModel;
use crate::tensor::{argmax_row, log_softmax_at, BoolMask};

use super::{joint_encoder_rows, DecodeRequest, DecodeResult};

pub fn decode_frame_looping(
    model: &dyn TransducerModel,
    req: &DecodeRequest,
) -> Result<DecodeResult> {
    req.validate(model)?;
    let cfg = model.config();
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

    let mut hyps = BatchedHyps::new(
        batch,
        initial_capacity_for(max_len),
        cfg.vocab_size,
        false,
    )?;
    let mut states = model.init_states(batch);
    let mut last_labels = vec![cfg.bos_id(); batch];
    let enc_proj = if req.precompute_projections {
        counters.record_encoder_projection_rows(batch * t_max);
        Some(model.project_encoder(req.enc)?)
    } else {
        None
    };

    let mut symbols_at_frame = vec![0usize; batch];
    for t in 0..max_len {
        counters.outer_loop_iterations += 1;
        // Rows still taking decisions at this frame. Finished utterances
        // stay masked for good; blank predictions and the symbol cap mask
        // rows until the next frame.
        let mut frame_mask: Vec<bool> = req.input_lengths.iter().map(|&l| t < l).collect();
        for s in symbols_at_frame.iter_mut() {
            *s = 0;
        }
        let times = vec![t; batch];
        while frame_mask.iter().any(|&m| m) {
            counters.inner_loop_iterations += 1;
            let participants = frame_mask.iter().filter(|&&m| m).count();

            let (dec, new_states) = model.predictor_step(&states, &last_labels)?;
            let pp_cached = if req.precompute_projections {
                counters.record_predictor_projection();
                Some(model.project_predictor(&dec)?)
            } else {
                None
            };
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
            counters.record_joint(batch, batch - participants);

            let mut add_mask = BoolMask::new_false(batch);
            let mut labels = vec![0u32; batch];
            let mut label_times = vec![0u32; batch];
            let mut step_scores = vec![0.0f32; batch];
            let mut emitted = 0usize;
            for i in 0..batch {
                if !frame_mask[i] {
                    continue;
                }
                let row = out.tokens.row(i)?;
                let k = argmax_row(row)? as u32;
                step_scores[i] = log_softmax_at(row, k as usize)?;
                if k != blank {
                    add_mask.set(i, true);
                    labels[i] = k;
                    label_times[i] = t as u32;
                    emitted += 1;
                    symbols_at_frame[i] += 1;
                    if symbols_at_frame[i] >= req.max_symbols_per_frame {
                        frame_mask[i] = false;
                    }
                } else {
                    frame_mask[i] = false;
                }
            }
            // Only emitting rows keep their advanced predictor state; the
            // rest of the batch's state computation was wasted work.
            counters.record_predictor(batch, batch - emitted);
            states.assign_masked(&add_mask, &new_states)?;
            hyps.add_results(&add_mask, &labels, &label_times, &step_scores, None)?;
            for i in 0..batch {
                if add_mask.get(i) {
                    last_labels[i] = labels[i];
                }
            }
        }
    }
    Ok(DecodeResult {
        outcomes: hyps.unpack(),
        counters,
    })
}
