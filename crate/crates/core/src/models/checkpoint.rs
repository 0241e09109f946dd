use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HierarchicalConfig, HierarchicalModel, UNetConfig, UNetModel};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Params;

const FORMAT: &str = "poolbench-checkpoint/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Hierarchical(HierarchicalConfig),
    Unet(UNetConfig),
}

/// Textual model dump: architecture, training seed and every named matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub seed: u64,
    pub architecture: Architecture,
    pub params: Params,
}

pub(crate) fn check_compatible(expected: &Params, found: &Params) -> Result<()> {
    if expected.len() != found.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} parameters, architecture needs {}",
            found.len(),
            expected.len()
        )));
    }
    for id in expected.ids() {
        let (a, b) = (expected.get(id), found.get(id));
        if expected.name(id) != found.name(id) || a.shape() != b.shape() {
            return Err(Error::Config(format!(
                "checkpoint parameter {} {:?} does not match {} {:?}",
                found.name(id),
                b.shape(),
                expected.name(id),
                a.shape()
            )));
        }
    }
    Ok(())
}

impl Checkpoint {
    pub fn hierarchical(model: &HierarchicalModel, seed: u64) -> Self {
        Self {
            format: FORMAT.into(),
            seed,
            architecture: Architecture::Hierarchical(model.config),
            params: model.params.clone(),
        }
    }

    pub fn unet(model: &UNetModel, seed: u64) -> Self {
        Self {
            format: FORMAT.into(),
            seed,
            architecture: Architecture::Unet(model.config),
            params: model.params.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        let ck: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if ck.format != FORMAT {
            return Err(Error::Config(format!(
                "unknown checkpoint format {}",
                ck.format
            )));
        }
        Ok(ck)
    }

    pub fn into_hierarchical(self) -> Result<HierarchicalModel> {
        match self.architecture {
            Architecture::Hierarchical(cfg) => {
                HierarchicalModel::new(cfg, &mut seeded(self.seed))?.with_params(self.params)
            }
            Architecture::Unet(_) => Err(Error::Config("checkpoint holds a u-net".into())),
        }
    }

    pub fn into_unet(self) -> Result<UNetModel> {
        match self.architecture {
            Architecture::Unet(cfg) => {
                UNetModel::new(cfg, &mut seeded(self.seed))?.with_params(self.params)
            }
            Architecture::Hierarchical(_) => Err(Error::Config(
                "checkpoint holds a hierarchical model".into(),
            )),
        }
    }
}
