//! Model checkpoint container.
//!
//! A checkpoint is one JSON object:
//!
//! ```text
//! {
//!   "format": "prenet-checkpoint",
//!   "version": 1,
//!   "model": {
//!     "config": { "variant": "PRENET", "input_dim": D, "hidden_dims": [..],
//!                 "l2_lambda": λ, "labels": { "c1": .., "c2": .., "c3": .. } },
//!     "params": { "hidden": [ { "weights": { "rows", "cols", "data": [row-major] },
//!                              "bias": [..] }, .. ],
//!                 "output_weights": [..], "output_bias": .. }
//!   },
//!   "standardizer": { "mean": [..], "std": [..] },
//!   "partners": { "anomalies": Matrix, "unlabeled": Matrix }
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so save→load is bit-exact.
//! `partners` holds the standardized members of `A` and `U` that test instances
//! are paired with at scoring time.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Standardizer, WeakSupervisionSplit};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::ndcore::Matrix;

pub const FORMAT_TAG: &str = "prenet-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartnerPools {
    pub anomalies: Matrix,
    pub unlabeled: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: Model,
    pub standardizer: Standardizer,
    pub partners: PartnerPools,
}

impl Checkpoint {
    pub fn new(model: Model, standardizer: Standardizer, split: &WeakSupervisionSplit) -> Self {
        Checkpoint {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            model,
            standardizer,
            partners: PartnerPools {
                anomalies: split.features.select_rows(&split.labeled_anomalies),
                unlabeled: split.features.select_rows(&split.unlabeled),
            },
        }
    }

    /// Partner pools as a split over a fresh feature store (`A` rows first, then `U`).
    pub fn partner_split(&self) -> Result<WeakSupervisionSplit> {
        let a = &self.partners.anomalies;
        let u = &self.partners.unlabeled;
        if a.cols() != u.cols() {
            return Err(Error::Format("partner pools differ in width".into()));
        }
        let mut data = a.as_slice().to_vec();
        data.extend_from_slice(u.as_slice());
        let k = a.rows();
        let n = u.rows();
        WeakSupervisionSplit::from_parts(
            Matrix::from_vec(k + n, a.cols(), data)?,
            (0..k).collect(),
            (k..k + n).collect(),
            vec![0; n],
        )
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if ckpt.format != FORMAT_TAG || ckpt.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let model = Model::with_params(ckpt.model.config.clone(), ckpt.model.params.clone())?;
        if ckpt.standardizer.mean.len() != model.config.input_dim
            || ckpt.partners.anomalies.cols() != model.config.input_dim
        {
            return Err(Error::Format("checkpoint dimensions disagree".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
