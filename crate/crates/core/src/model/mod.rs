//! The abstract Transducer model surface consumed by the decoders: a
//! predictor (stateful or stateless), encoder/predictor projections into the
//! joint space, and a joiner producing token logits (plus duration logits
//! for token-and-duration models).
//!
//! Two implementations ship: a seeded synthetic model for randomized
//! equivalence testing, and a table-driven model that forces chosen
//! alignments for trace-level fixtures.

mod synthetic;
mod table;

pub use synthetic::{ModelWeights, SyntheticModel};
pub use table::{TableModel, TableSpec, TableStep, TableToken};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ltf;
use crate::tensor::{masked_assign, BoolMask, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Rnnt,
    Tdt,
}

impl std::fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecoderKind::Rnnt => write!(f, "rnnt"),
            DecoderKind::Tdt => write!(f, "tdt"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Recurrent,
    Stateless,
}

/// Static model description. The blank id is `vocab_size` and the BOS id is
/// `vocab_size + 1`; BOS exists only as an embedding row and is never
/// emitted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub enc_dim: usize,
    pub pred_dim: usize,
    pub joint_dim: usize,
    pub predictor_kind: PredictorKind,
    pub decoder_kind: DecoderKind,
    /// Largest predictable duration; durations range over 0..=max_duration.
    /// Only meaningful for TDT models.
    #[serde(default)]
    pub max_duration: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 1 {
            return Err(Error::Config("vocab_size must be >= 1".into()));
        }
        if self.enc_dim < 1 || self.pred_dim < 1 || self.joint_dim < 1 {
            return Err(Error::Config("all model dims must be >= 1".into()));
        }
        if self.decoder_kind == DecoderKind::Tdt && self.max_duration < 1 {
            return Err(Error::Config("TDT models need max_duration >= 1".into()));
        }
        Ok(())
    }

    pub fn blank_id(&self) -> u32 {
        self.vocab_size as u32
    }

    pub fn bos_id(&self) -> u32 {
        self.vocab_size as u32 + 1
    }

    /// Output width of the token head: real labels plus blank.
    pub fn num_token_outputs(&self) -> usize {
        self.vocab_size + 1
    }

    pub fn num_duration_outputs(&self) -> usize {
        self.max_duration + 1
    }
}

/// Per-utterance recurrent state, one variant per predictor family.
#[derive(Clone, Debug, PartialEq)]
pub enum PredictorStates {
    /// Hidden vectors, [B, pred_dim].
    Recurrent(Tensor),
    /// Last consumed token per row (stateless predictors).
    LastToken(Vec<u32>),
    /// Count of consumed tokens per row (table models).
    StepCount(Vec<u32>),
}

impl PredictorStates {
    pub fn batch(&self) -> usize {
        match self {
            PredictorStates::Recurrent(t) => t.dims()[0],
            PredictorStates::LastToken(v) => v.len(),
            PredictorStates::StepCount(v) => v.len(),
        }
    }

    /// Row-masked overwrite: `self[i] = src[i]` wherever `mask[i]`.
    pub fn assign_masked(&mut self, mask: &BoolMask, src: &PredictorStates) -> Result<()> {
        match (self, src) {
            (PredictorStates::Recurrent(d), PredictorStates::Recurrent(s)) => {
                masked_assign(d, mask, s)
            }
            (PredictorStates::LastToken(d), PredictorStates::LastToken(s))
            | (PredictorStates::StepCount(d), PredictorStates::StepCount(s)) => {
                if d.len() != s.len() || mask.len() != d.len() {
                    return Err(Error::Shape("state/mask lengths disagree".into()));
                }
                for i in 0..d.len() {
                    if mask.get(i) {
                        d[i] = s[i];
                    }
                }
                Ok(())
            }
            _ => Err(Error::Contract("mismatched predictor state variants".into())),
        }
    }
}

/// Joint head outputs for one batched evaluation.
#[derive(Clone, Debug)]
pub struct JointLogits {
    /// [B, vocab_size + 1]; the last column is blank.
    pub tokens: Tensor,
    /// [B, max_duration + 1] for TDT models, absent for RNNT.
    pub durations: Option<Tensor>,
}

/// Model contract shared by every decoding algorithm.
///
/// All methods are pure functions of (self, arguments); repeated calls with
/// identical inputs return bitwise-identical outputs, and every batched
/// evaluation equals the row-by-row evaluation of the same inputs.
pub trait TransducerModel {
    fn config(&self) -> &ModelConfig;

    fn init_states(&self, batch: usize) -> PredictorStates;

    /// Consume one token per row, producing the predictor output [B,
    /// pred_dim] and the advanced states.
    fn predictor_step(
        &self,
        states: &PredictorStates,
        tokens: &[u32],
    ) -> Result<(Tensor, PredictorStates)>;

    /// Project gathered encoder rows [N, enc_dim] into the joint space
    /// [N, joint_dim].
    fn project_encoder_rows(&self, rows: &Tensor) -> Result<Tensor>;

    /// Project a whole encoder output [B, T, enc_dim] -> [B, T, joint_dim].
    /// Defined row-by-row, so precomputed and on-the-fly projections agree
    /// bitwise.
    fn project_encoder(&self, enc: &Tensor) -> Result<Tensor> {
        if enc.rank() != 3 {
            return Err(Error::Shape(format!(
                "project_encoder needs rank 3, got {}",
                enc.rank()
            )));
        }
        let (b, t, d) = (enc.dims()[0], enc.dims()[1], enc.dims()[2]);
        let flat = Tensor::new(&[b * t, d], enc.data().to_vec())?;
        let proj = self.project_encoder_rows(&flat)?;
        let dj = proj.dims()[1];
        Tensor::new(&[b, t, dj], proj.into_data())
    }

    /// Project predictor outputs [B, pred_dim] -> [B, joint_dim].
    fn project_predictor(&self, dec: &Tensor) -> Result<Tensor>;

    /// Combine projected encoder and predictor rows into output logits.
    fn joint(&self, enc_proj: &Tensor, pred_proj: &Tensor) -> Result<JointLogits>;
}

/// File names used when a synthetic model is stored as explicit tensors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightRefs {
    pub emb: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_h: Option<String>,
    pub b_h: String,
    pub w_enc: String,
    pub b_enc: String,
    pub w_pred: String,
    pub b_pred: String,
    pub w_out: String,
    pub b_out: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_dur: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_dur: Option<String>,
}

/// Model file: either a synthetic model (config plus a seed, or config plus
/// explicit LTF1 tensor references) or a table model with inline alignments.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelManifest {
    Synthetic {
        config: ModelConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<WeightRefs>,
    },
    Table(TableSpec),
}

/// Load a model manifest, resolving weight references relative to the
/// manifest's directory. Explicit references win over a seed if both are
/// present.
pub fn load_model<P: AsRef<Path>>(path: P) -> Result<Box<dyn TransducerModel>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let manifest: ModelManifest = serde_json::from_str(&text)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    match manifest {
        ModelManifest::Synthetic { config, seed, weights } => {
            config.validate()?;
            if let Some(refs) = weights {
                let weights = load_weight_refs(dir, &config, &refs)?;
                Ok(Box::new(SyntheticModel::new(config, weights)?))
            } else if let Some(seed) = seed {
                Ok(Box::new(SyntheticModel::from_seed(seed, config)?))
            } else {
                Err(Error::Config(
                    "synthetic manifest needs either a seed or weight references".into(),
                ))
            }
        }
        ModelManifest::Table(spec) => Ok(Box::new(TableModel::from_spec(spec)?)),
    }
}

fn load_weight_refs(dir: &Path, cfg: &ModelConfig, refs: &WeightRefs) -> Result<ModelWeights> {
    let read = |name: &str| ltf::read_tensor_file(dir.join(name));
    let read_opt = |name: &Option<String>| -> Result<Option<Tensor>> {
        match name {
            Some(n) => Ok(Some(read(n)?)),
            None => Ok(None),
        }
    };
    let weights = ModelWeights {
        emb: read(&refs.emb)?,
        w_h: read_opt(&refs.w_h)?,
        b_h: read(&refs.b_h)?,
        w_enc: read(&refs.w_enc)?,
        b_enc: read(&refs.b_enc)?,
        w_pred: read(&refs.w_pred)?,
        b_pred: read(&refs.b_pred)?,
        w_out: read(&refs.w_out)?,
        b_out: read(&refs.b_out)?,
        w_dur: read_opt(&refs.w_dur)?,
        b_dur: read_opt(&refs.b_dur)?,
    };
    weights.validate(cfg)?;
    Ok(weights)
}

/// Write a synthetic model as a manifest plus LTF1 tensors with canonical
/// file names. Returns the manifest path.
pub fn save_synthetic<P: AsRef<Path>>(
    dir: P,
    cfg: &ModelConfig,
    weights: &ModelWeights,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut write = |name: &str, t: &Tensor| -> Result<String> {
        ltf::write_tensor_file(dir.join(name), t)?;
        Ok(name.to_string())
    };
    let refs = WeightRefs {
        emb: write("emb.ltf", &weights.emb)?,
        w_h: weights
            .w_h
            .as_ref()
            .map(|t| write("w_h.ltf", t))
            .transpose()?,
        b_h: write("b_h.ltf", &weights.b_h)?,
        w_enc: write("w_enc.ltf", &weights.w_enc)?,
        b_enc: write("b_enc.ltf", &weights.b_enc)?,
        w_pred: write("w_pred.ltf", &weights.w_pred)?,
        b_pred: write("b_pred.ltf", &weights.b_pred)?,
        w_out: write("w_out.ltf", &weights.w_out)?,
        b_out: write("b_out.ltf", &weights.b_out)?,
        w_dur: weights
            .w_dur
            .as_ref()
            .map(|t| write("w_dur.ltf", t))
            .transpose()?,
        b_dur: weights
            .b_dur
            .as_ref()
            .map(|t| write("b_dur.ltf", t))
            .transpose()?,
    };
    let manifest = ModelManifest::Synthetic {
        config: cfg.clone(),
        seed: None,
        weights: Some(refs),
    };
    let path = dir.join("model.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// Write a table model manifest. Returns the manifest path.
pub fn save_table<P: AsRef<Path>>(dir: P, spec: &TableSpec) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let manifest = ModelManifest::Table(spec.clone());
    let path = dir.join("model.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}
