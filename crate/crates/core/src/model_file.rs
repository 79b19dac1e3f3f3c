//! JSON model files: architecture plus the non-diagonal weights as `{a, b, value}` triples.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LmeError, Result};
use crate::machine::{MachineSpec, WeightMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionTag {
    Lme,
    Mle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub a: usize,
    pub b: usize,
    pub value: f64,
}

/// On-disk model. Node indices are zero-based with visible nodes first;
/// pairs not listed have weight zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub visible_count: usize,
    pub hidden_count: usize,
    pub weights: Vec<WeightEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionTag>,
}

impl ModelFile {
    pub fn from_model(spec: &MachineSpec, weights: &WeightMatrix) -> Self {
        let entries = spec
            .features()
            .iter()
            .zip(weights.values())
            .map(|(f, &value)| WeightEntry { a: f.a, b: f.b, value })
            .collect();
        Self {
            visible_count: spec.visible(),
            hidden_count: spec.hidden(),
            weights: entries,
            selection: None,
        }
    }

    pub fn with_selection(mut self, tag: SelectionTag) -> Self {
        self.selection = Some(tag);
        self
    }

    /// Validates and converts into a machine and its weights.
    pub fn to_model(&self) -> Result<(MachineSpec, WeightMatrix)> {
        let spec = MachineSpec::new(self.visible_count, self.hidden_count)?;
        let m = spec.nodes();
        let mut weights = WeightMatrix::zeros(m);
        let mut seen = vec![false; spec.feature_count()];
        for e in &self.weights {
            if e.a >= e.b || e.b >= m {
                return Err(LmeError::InvalidWeights(format!(
                    "pair ({}, {}) is not in the strict upper triangle of a {m}-node machine",
                    e.a, e.b
                )));
            }
            let i = spec.feature_index(e.a, e.b).expect("checked pair");
            if std::mem::replace(&mut seen[i], true) {
                return Err(LmeError::InvalidWeights(format!("pair ({}, {}) listed twice", e.a, e.b)));
            }
            weights.set(e.a, e.b, e.value)?;
        }
        Ok((spec, weights))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| LmeError::Parse {
            path: path.display().to_string(),
            line: match &e {
                LmeError::Json(j) => j.line(),
                _ => 0,
            },
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}
