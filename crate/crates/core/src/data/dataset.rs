//! In-memory patch pairs ready for training.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;

use crate::data::study::{resolve_index_path, CohortIndex, Label, NoduleStudy};
use crate::data::synth::{synthesize_study, SynthConfig};
use crate::data::{extract_patch, CubeSymmetry, Volume};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PATCH_SIZE: usize = 32;

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub label: Label,
    /// `[1, s, s, s]`, clip-normalised.
    pub t1: Tensor<f32>,
    pub t2: Tensor<f32>,
}

impl Sample {
    pub fn from_volumes(study: &NoduleStudy, t1: &Volume, t2: &Volume, patch: usize) -> Result<Self> {
        Ok(Self {
            id: study.study_id.clone(),
            label: study.label,
            t1: extract_patch(t1, study.t1.center_voxel, patch)?,
            t2: extract_patch(t2, study.t2.center_voxel, patch)?,
        })
    }

    /// Loads a manifest and its two volumes.
    pub fn from_manifest(path: &Path, patch: usize) -> Result<Self> {
        let study = NoduleStudy::read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let t1 = Volume::read(&base.join(&study.t1.volume))?;
        let t2 = Volume::read(&base.join(&study.t2.volume))?;
        Self::from_volumes(&study, &t1, &t2, patch)
    }
}

/// One mini-batch: `[N, 1, s, s, s]` per time point and 0/1 labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub t1: Tensor<f32>,
    pub t2: Tensor<f32>,
    pub labels: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (i, s) in samples.iter().enumerate() {
            if let Some(j) = seen.insert(s.id.clone(), i) {
                return Err(Error::invalid(
                    "Dataset",
                    format!("duplicate study id {:?} at positions {j} and {i}", s.id),
                ));
            }
            s.t1.expect_same_shape("Dataset", &s.t2)?;
        }
        Ok(Self { samples })
    }

    /// Reads every study listed in a cohort index (or cohort directory).
    pub fn load_cohort(path: &Path, patch: usize) -> Result<Self> {
        let index_path = resolve_index_path(path);
        let index = CohortIndex::read(&index_path)?;
        let base = index_path.parent().unwrap_or(Path::new("."));
        let samples = index
            .manifests
            .iter()
            .map(|m| Sample::from_manifest(&base.join(m), patch))
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples)
    }

    /// Renders the cohort in memory and crops the patches, without touching disk.
    pub fn synthesize(cfg: &SynthConfig, patch: usize) -> Result<Self> {
        let samples = (0..cfg.n_studies)
            .map(|i| {
                let s = synthesize_study(cfg, i)?;
                Sample::from_volumes(&s.study, &s.t1, &s.t2, patch)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }

    pub fn classes(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label.class()).collect()
    }

    /// The samples with the given ids, in the order given.
    pub fn subset(&self, ids: &[String]) -> Result<Self> {
        let pos: HashMap<&str, usize> = self.samples.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
        let samples = ids
            .iter()
            .map(|id| {
                pos.get(id.as_str())
                    .map(|&i| self.samples[i].clone())
                    .ok_or_else(|| Error::invalid("Dataset::subset", format!("unknown study id {id:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples)
    }

    /// Stacks the samples at `indices`. With an RNG, each pair gets its own
    /// random cube symmetry, shared by its two time points.
    pub fn batch<R: Rng + ?Sized>(&self, indices: &[usize], mut augment: Option<&mut R>) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::invalid("Dataset::batch", "empty batch"));
        }
        let mut t1 = Vec::with_capacity(indices.len());
        let mut t2 = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self
                .samples
                .get(i)
                .ok_or_else(|| Error::invalid("Dataset::batch", format!("index {i} out of range")))?;
            match augment.as_deref_mut() {
                Some(rng) => {
                    let g = CubeSymmetry::random(rng);
                    t1.push(g.apply(&s.t1)?);
                    t2.push(g.apply(&s.t2)?);
                }
                None => {
                    t1.push(s.t1.clone());
                    t2.push(s.t2.clone());
                }
            }
            labels.push(s.label.class() as f64);
        }
        let stack = |parts: Vec<Tensor<f32>>| -> Result<Tensor<f32>> {
            let refs: Vec<&Tensor<f32>> = parts.iter().collect();
            let mut shape = vec![indices.len()];
            shape.extend_from_slice(parts[0].shape());
            Tensor::stack_outer(&refs)?.reshape(&shape)
        };
        Ok(Batch {
            t1: stack(t1)?,
            t2: stack(t2)?,
            labels,
        })
    }
}
