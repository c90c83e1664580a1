//! Versioned on-disk representation of a fitted grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, CenteringStats, FeatureLayout, FeatureMap};
use crate::data::{CandidateChoice, NormalizationSpec};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::policy::{NormalizedPolicy, OwnedGreedyPolicy};
use crate::solver::{FitDiagnostics, LocalModelGrid};

use super::config::Mode;

pub const FORMAT: &str = "kshrl-model";
pub const VERSION: u32 = 1;

/// A fitted grid with everything needed to evaluate it on raw data.
///
/// Floats are written in their shortest round-trip decimal form, so
/// reading and re-writing a file reproduces it byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub mode: Mode,
    pub candidate: CandidateChoice,
    pub normalization: NormalizationSpec,
    pub basis: BasisSpec,
    pub centering: CenteringStats,
    pub layout: FeatureLayout,
    pub kernel: KernelSpec,
    pub gamma: f64,
    /// Normalized grid values.
    pub zs: Vec<f64>,
    /// One coefficient row per grid value.
    pub coefficients: Vec<Vec<f64>>,
    pub diagnostics: Vec<FitDiagnostics>,
}

impl ModelFile {
    pub fn new(grid: &LocalModelGrid, normalization: NormalizationSpec, mode: Mode, candidate: CandidateChoice) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            mode,
            candidate,
            normalization,
            basis: grid.features.basis.clone(),
            centering: grid.features.centering.clone(),
            layout: grid.features.layout,
            kernel: grid.kernel,
            gamma: grid.gamma,
            zs: grid.zs(),
            coefficients: grid.coefficients(),
            diagnostics: grid.models.iter().map(|m| m.diagnostics.clone()).collect(),
        }
    }

    pub fn grid(&self) -> Result<LocalModelGrid> {
        if self.zs.len() != self.coefficients.len() || self.zs.len() != self.diagnostics.len() {
            return Err(Error::ModelFile("grid, coefficient and diagnostic counts differ".into()));
        }
        let features = FeatureMap::new(self.basis.clone(), self.centering.clone(), self.layout.exclude, self.layout.actions)
            .map_err(|e| Error::ModelFile(e.to_string()))?;
        if features.layout != self.layout {
            return Err(Error::ModelFile("layout does not match basis and centering".into()));
        }
        let mut grid = LocalModelGrid::from_rows(&self.zs, self.coefficients.clone(), features, self.kernel, self.gamma)
            .map_err(|e| Error::ModelFile(e.to_string()))?;
        for (model, diagnostics) in grid.models.iter_mut().zip(&self.diagnostics) {
            model.diagnostics = diagnostics.clone();
        }
        Ok(grid)
    }

    /// Greedy policy acting on raw states.
    pub fn policy(&self) -> Result<NormalizedPolicy<OwnedGreedyPolicy>> {
        Ok(NormalizedPolicy {
            inner: OwnedGreedyPolicy(self.grid()?),
            spec: self.normalization.clone(),
            candidate: self.candidate,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::ModelFile(e.to_string()))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let header: Header = serde_json::from_str(text).map_err(|e| Error::ModelFile(e.to_string()))?;
        if header.format != FORMAT {
            return Err(Error::ModelFile(format!("not a model file (format `{}`)", header.format)));
        }
        if header.version != VERSION {
            return Err(Error::ModelFile(format!("unsupported version {} (expected {VERSION})", header.version)));
        }
        let model: ModelFile = serde_json::from_str(text).map_err(|e| Error::ModelFile(e.to_string()))?;
        model.grid()?;
        Ok(model)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::Io { path: path.display().to_string(), source: e })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        Self::from_json(&text)
    }
}
