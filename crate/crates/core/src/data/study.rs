//! Study manifests and the cohort index.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::synth::SynthConfig;
use crate::error::{Error, Result};

pub const MIN_DIAMETER_MM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Malignant,
}

impl Label {
    pub fn from_class(class: u8) -> Result<Self> {
        match class {
            0 => Ok(Label::Benign),
            1 => Ok(Label::Malignant),
            other => Err(Error::invalid("Label", format!("class {other} is not 0 or 1"))),
        }
    }

    /// 1 for malignant, 0 for benign.
    pub fn class(self) -> u8 {
        match self {
            Label::Benign => 0,
            Label::Malignant => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Benign => "benign",
            Label::Malignant => "malignant",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "benign" => Ok(Label::Benign),
            "malignant" => Ok(Label::Malignant),
            _ => Err(Error::invalid("Label", format!("{s:?} is not \"malignant\" or \"benign\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimePoint {
    /// Relative to the manifest's directory.
    pub volume: PathBuf,
    pub center_voxel: [usize; 3],
    pub diameter_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoduleStudy {
    pub study_id: String,
    pub label: Label,
    pub interval_days: u32,
    pub t1: TimePoint,
    pub t2: TimePoint,
}

impl NoduleStudy {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("NoduleStudy", format!("{}: {reason}", self.study_id)));
        if self.study_id.is_empty() {
            return Err(Error::invalid("NoduleStudy", "empty study_id"));
        }
        if self.interval_days == 0 {
            return bad("interval_days must be positive".into());
        }
        for (name, tp) in [("t1", &self.t1), ("t2", &self.t2)] {
            if !(tp.diameter_mm >= MIN_DIAMETER_MM) {
                return bad(format!("{name} diameter {} mm below {MIN_DIAMETER_MM} mm", tp.diameter_mm));
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let study: Self = serde_json::from_str(&text)?;
        study.validate()?;
        Ok(study)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Lists the manifests of a cohort, with the generator settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortIndex {
    /// Relative to the index file's directory.
    pub manifests: Vec<PathBuf>,
    pub seed: u64,
    pub generator: Option<SynthConfig>,
}

pub const COHORT_INDEX_FILE: &str = "cohort.json";

impl CohortIndex {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Accepts either a cohort directory or the index file itself.
pub fn resolve_index_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(COHORT_INDEX_FILE)
    } else {
        path.to_path_buf()
    }
}
