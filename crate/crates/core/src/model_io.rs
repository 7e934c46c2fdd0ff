//! Versioned JSON dump of a trained model and its stored patterns.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::{Model, Rule};
use crate::patterns::PatternSet;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub rule: Rule,
    /// Kernel scaling factor, 0 for non-kernel rules.
    pub c: f64,
    pub lambda: f64,
    pub patterns: PatternSet,
    pub model: Model,
}

impl ModelFile {
    pub fn new(rule: Rule, c: f64, lambda: f64, patterns: PatternSet, model: Model) -> Self {
        ModelFile {
            format_version: FORMAT_VERSION,
            rule,
            c,
            lambda,
            patterns,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "model format version {} is not supported (expected {FORMAT_VERSION})",
                file.format_version
            )));
        }
        if file.model.n() != file.patterns.n() {
            return Err(Error::DimensionMismatch {
                expected: file.patterns.n(),
                found: file.model.n(),
            });
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
