//! Unified model checkpoint: named SACC and TCN tensors, the TCN
//! architecture, the filter bank the model was trained with, and training
//! metadata. Serialized as JSON with a fixed field order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array::SpatialFilterBank;
use crate::config::hex_digest;
use crate::error::{Error, Result};
use crate::model::AsoboModel;
use crate::params::{NamedTensor, Parameters};
use crate::sacc::SaccParams;
use crate::tcn::{TcnConfig, TcnModel};

pub const FORMAT: &str = "asobo-checkpoint";
pub const VERSION: u32 = 1;

/// Content hash of a filter bank, independent of where it is stored.
pub fn bank_hash(bank: &SpatialFilterBank) -> Result<String> {
    Ok(hex_digest(bank.to_json(None)?.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankRef {
    pub hash: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub filterbank: BankRef,
    pub seed: u64,
    pub steps: u64,
    pub bins: usize,
    pub hidden: usize,
    pub tcn: TcnConfig,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(model: &AsoboModel, config_hash: &str, filterbank: BankRef, seed: u64, steps: u64) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            config_hash: config_hash.into(),
            filterbank,
            seed,
            steps,
            bins: model.sacc.bins(),
            hidden: model.sacc.hidden(),
            tcn: model.tcn.config,
            tensors: model.to_named(),
        }
    }

    pub fn model(&self) -> Result<AsoboModel> {
        self.tcn.validate()?;
        let mut model = AsoboModel {
            sacc: SaccParams::zeros(self.bins, self.hidden),
            tcn: TcnModel::zeros(self.tcn),
        };
        model.load_named(&self.tensors)?;
        if !model.all_finite() {
            return Err(Error::Numeric("checkpoint holds non-finite parameters".into()));
        }
        Ok(model)
    }

    /// Errors unless `bank` is the filter bank this model was trained on.
    pub fn check_bank(&self, bank: &SpatialFilterBank) -> Result<()> {
        let h = bank_hash(bank)?;
        if h != self.filterbank.hash {
            return Err(Error::Incompatible(format!(
                "filter bank hash {h} differs from the checkpoint's {}",
                self.filterbank.hash
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::Incompatible(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
