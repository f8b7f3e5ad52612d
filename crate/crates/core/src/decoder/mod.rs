//! Greedy decoding algorithms over the abstract model surface.
//!
//! Three algorithms, one contract: for any model, batch composition and
//! length mixture, the batched decoders produce tokens, timestamps,
//! durations and scores bitwise-identical to decoding each row alone with
//! the sequential decoder.
//!
//! - `sequential`: one utterance at a time; the correctness oracle.
//! - `frame_looping`: conventional batched decoding; the outer loop walks
//!   frames and an inner loop drains the labels of each frame (RNNT only).
//! - `label_looping`: the outer loop walks emitted labels (one predictor
//!   call per iteration) and an inner loop scans blanks; works for RNNT and
//!   TDT.
//!
//! Every decoder takes a projection-precompute toggle. Precomputation moves
//! the encoder projection ahead of the loop and ties predictor projections
//! to predictor calls instead of joint calls; outcomes are bitwise
//! unaffected, only the projection counters move.

mod frame_looping;
mod label_looping;
mod sequential;

pub use frame_looping::decode_frame_looping;
pub use label_looping::{decode_label_looping_rnnt, decode_label_looping_tdt};
pub use sequential::{decode_sequential_rnnt, decode_sequential_tdt};

use serde::{Deserialize, Serialize};

use crate::counters::CallCounters;
use crate::error::{Error, Result};
use crate::hyps::DecodeOutcome;
use crate::model::{DecoderKind, TransducerModel};
use crate::tensor::{gather_time_rows, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sequential,
    FrameLooping,
    LabelLooping,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algorithm::Sequential => write!(f, "sequential"),
            Algorithm::FrameLooping => write!(f, "frame-looping"),
            Algorithm::LabelLooping => write!(f, "label-looping"),
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(Algorithm::Sequential),
            "frame-looping" | "frame_looping" => Ok(Algorithm::FrameLooping),
            "label-looping" | "label_looping" => Ok(Algorithm::LabelLooping),
            other => Err(Error::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

pub const DEFAULT_MAX_SYMBOLS_PER_FRAME: usize = 10;

/// Per-decode knobs shared by all algorithms.
#[derive(Clone, Copy, Debug)]
pub struct DecodeOptions {
    pub precompute_projections: bool,
    /// Cap on labels emitted at a single frame before time is forced
    /// forward; guarantees termination for models that never predict blank.
    pub max_symbols_per_frame: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            precompute_projections: false,
            max_symbols_per_frame: DEFAULT_MAX_SYMBOLS_PER_FRAME,
        }
    }
}

/// A batched decode request over precomputed encoder outputs.
#[derive(Clone, Debug)]
pub struct DecodeRequest<'a> {
    /// Encoder outputs, [B, T_max, enc_dim]; rows are zero-padded past each
    /// utterance's length.
    pub enc: &'a Tensor,
    /// Frames per utterance, each <= T_max.
    pub input_lengths: &'a [usize],
    pub decoder_kind: DecoderKind,
    pub algorithm: Algorithm,
    pub precompute_projections: bool,
    pub max_symbols_per_frame: usize,
}

impl<'a> DecodeRequest<'a> {
    pub fn new(
        enc: &'a Tensor,
        input_lengths: &'a [usize],
        decoder_kind: DecoderKind,
        algorithm: Algorithm,
    ) -> Self {
        Self {
            enc,
            input_lengths,
            decoder_kind,
            algorithm,
            precompute_projections: false,
            max_symbols_per_frame: DEFAULT_MAX_SYMBOLS_PER_FRAME,
        }
    }

    pub fn options(&self) -> DecodeOptions {
        DecodeOptions {
            precompute_projections: self.precompute_projections,
            max_symbols_per_frame: self.max_symbols_per_frame,
        }
    }

    pub fn validate(&self, model: &dyn TransducerModel) -> Result<()> {
        let cfg = model.config();
        if self.enc.rank() != 3 {
            return Err(Error::Config(format!(
                "encoder output must be rank 3, got {}",
                self.enc.rank()
            )));
        }
        let (b, t_max, d) = (
            self.enc.dims()[0],
            self.enc.dims()[1],
            self.enc.dims()[2],
        );
        if d != cfg.enc_dim {
            return Err(Error::Config(format!(
                "encoder dim {d} does not match model enc_dim {}",
                cfg.enc_dim
            )));
        }
        if self.input_lengths.len() != b {
            return Err(Error::Config(format!(
                "{} lengths for batch {b}",
                self.input_lengths.len()
            )));
        }
        if let Some(&bad) = self.input_lengths.iter().find(|&&l| l > t_max) {
            return Err(Error::Config(format!(
                "input length {bad} exceeds T_max {t_max}"
            )));
        }
        if self.max_symbols_per_frame < 1 {
            return Err(Error::Config("max_symbols_per_frame must be >= 1".into()));
        }
        if self.decoder_kind != cfg.decoder_kind {
            return Err(Error::Config(format!(
                "request decoder kind {} does not match model kind {}",
                self.decoder_kind, cfg.decoder_kind
            )));
        }
        if self.algorithm == Algorithm::FrameLooping && self.decoder_kind == DecoderKind::Tdt {
            return Err(Error::Config(
                "frame-looping decoding does not support TDT models".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DecodeResult {
    pub outcomes: Vec<DecodeOutcome>,
    pub counters: CallCounters,
}

/// Dispatch on the requested algorithm. `Sequential` decodes each utterance
/// independently and sums the counters.
pub fn decode(model: &dyn TransducerModel, req: &DecodeRequest) -> Result<DecodeResult> {
    req.validate(model)?;
    match req.algorithm {
        Algorithm::Sequential => {
            let opts = req.options();
            let mut outcomes = Vec::with_capacity(req.input_lengths.len());
            let mut counters = CallCounters::default();
            for (b, &len) in req.input_lengths.iter().enumerate() {
                let row = extract_row(req.enc, b, len)?;
                let (outcome, c) = match req.decoder_kind {
                    DecoderKind::Rnnt => decode_sequential_rnnt(model, &row, &opts)?,
                    DecoderKind::Tdt => decode_sequential_tdt(model, &row, &opts)?,
                };
                counters.merge(&c);
                outcomes.push(outcome);
            }
            Ok(DecodeResult { outcomes, counters })
        }
        Algorithm::FrameLooping => decode_frame_looping(model, req),
        Algorithm::LabelLooping => match req.decoder_kind {
            DecoderKind::Rnnt => decode_label_looping_rnnt(model, req),
            DecoderKind::Tdt => decode_label_looping_tdt(model, req),
        },
    }
}

/// Copy utterance `b`'s first `len` frames out of a padded [B, T, D] batch.
pub fn extract_row(enc: &Tensor, b: usize, len: usize) -> Result<Tensor> {
    if enc.rank() != 3 {
        return Err(Error::Shape("extract_row needs rank 3".into()));
    }
    let (nb, t_max, d) = (enc.dims()[0], enc.dims()[1], enc.dims()[2]);
    if b >= nb || len > t_max {
        return Err(Error::Index(format!(
            "row {b} len {len} of [{nb}, {t_max}]"
        )));
    }
    let mut data = Vec::with_capacity(len * d);
    for t in 0..len {
        data.extend_from_slice(enc.row3(b, t)?);
    }
    Tensor::new(&[len, d], data)
}

/// Gather the per-row encoder inputs for one joint evaluation, applying the
/// encoder projection here when it was not precomputed.
pub(crate) fn joint_encoder_rows(
    model: &dyn TransducerModel,
    enc: &Tensor,
    enc_proj: Option<&Tensor>,
    times: &[usize],
    counters: &mut CallCounters,
) -> Result<Tensor> {
    match enc_proj {
        Some(projected) => gather_time_rows(projected, times),
        None => {
            let raw = gather_time_rows(enc, times)?;
            counters.record_encoder_projection_rows(times.len());
            model.project_encoder_rows(&raw)
        }
    }
}
