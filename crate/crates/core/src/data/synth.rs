//! Synthetic longitudinal nodule cohort.
//!
//! Each study is a pair of 64³ HU volumes with one soft-edged spherical nodule.
//! Benign nodules keep their size and density; malignant ones grow and gain
//! density between the two scans. The T1 scan alone carries no label signal.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StdNormal};

use crate::data::study::{CohortIndex, Label, NoduleStudy, TimePoint, COHORT_INDEX_FILE, MIN_DIAMETER_MM};
use crate::data::Volume;
use crate::error::{Error, Result};
use crate::rng::keyed_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_studies: usize,
    pub n_malignant: usize,
    pub t1_diameter_mean_mm: f64,
    pub t1_diameter_sd_mm: f64,
    pub malignant_growth_mean_mm: f64,
    pub malignant_growth_sd_mm: f64,
    pub benign_growth_mean_mm: f64,
    pub benign_growth_sd_mm: f64,
    pub core_hu_mean: f64,
    pub core_hu_sd: f64,
    pub malignant_density_increase_hu: f64,
    pub background_hu_mean: f64,
    pub background_hu_sd: f64,
    pub spacing_mm: f64,
    pub volume_extent: usize,
    pub interval_days_min: u32,
    pub interval_days_max: u32,
    pub center_jitter_voxels: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_studies: 161,
            n_malignant: 103,
            t1_diameter_mean_mm: 10.96,
            t1_diameter_sd_mm: 5.24,
            malignant_growth_mean_mm: 4.1,
            malignant_growth_sd_mm: 3.0,
            benign_growth_mean_mm: 0.0,
            benign_growth_sd_mm: 0.8,
            core_hu_mean: 40.0,
            core_hu_sd: 20.0,
            malignant_density_increase_hu: 30.0,
            background_hu_mean: -850.0,
            background_hu_sd: 40.0,
            spacing_mm: 1.0,
            volume_extent: 64,
            interval_days_min: 32,
            interval_days_max: 2464,
            center_jitter_voxels: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("SynthConfig", reason));
        if self.n_studies == 0 {
            return bad("n_studies must be positive".into());
        }
        if self.n_malignant > self.n_studies {
            return bad(format!("n_malignant {} exceeds n_studies {}", self.n_malignant, self.n_studies));
        }
        if self.t1_diameter_mean_mm <= MIN_DIAMETER_MM {
            return bad(format!("t1_diameter_mean_mm must exceed {MIN_DIAMETER_MM}"));
        }
        if self.malignant_growth_mean_mm <= 0.0 {
            return bad("malignant_growth_mean_mm must be positive".into());
        }
        for (name, sd) in [
            ("t1_diameter_sd_mm", self.t1_diameter_sd_mm),
            ("malignant_growth_sd_mm", self.malignant_growth_sd_mm),
            ("benign_growth_sd_mm", self.benign_growth_sd_mm),
            ("core_hu_sd", self.core_hu_sd),
            ("background_hu_sd", self.background_hu_sd),
        ] {
            if !(sd > 0.0 && sd.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.spacing_mm > 0.0) {
            return bad("spacing_mm must be positive".into());
        }
        if self.volume_extent < 8 {
            return bad("volume_extent must be at least 8".into());
        }
        if self.interval_days_min == 0 || self.interval_days_min > self.interval_days_max {
            return bad("interval_days range must be positive and ordered".into());
        }
        if self.center_jitter_voxels * 4 > self.volume_extent {
            return bad("center_jitter_voxels too large for the volume".into());
        }
        Ok(())
    }

    /// Location of the normal that, clamped below at `floor`, has mean `target`.
    fn clamped_location(target: f64, sd: f64, floor: f64) -> f64 {
        // E[max(X, f)] = f + sd * g((mu - f) / sd) with g(z) = z Φ(z) + φ(z).
        let n = StdNormal::standard();
        let g = |z: f64| z * n.cdf(z) + n.pdf(z);
        let want = (target - floor) / sd;
        let (mut lo, mut hi) = (-40.0, want + 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < want {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        floor + sd * 0.5 * (lo + hi)
    }

    /// T1 diameter draw: normal clamped at the minimum size, located so the
    /// clamped mean equals `t1_diameter_mean_mm`.
    pub fn draw_t1_diameter<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mu = Self::clamped_location(self.t1_diameter_mean_mm, self.t1_diameter_sd_mm, MIN_DIAMETER_MM);
        let d = Normal::new(mu, self.t1_diameter_sd_mm).expect("validated sd");
        d.sample(rng).max(MIN_DIAMETER_MM)
    }

    /// Diameter change between the scans. Malignant growth is clamped at zero
    /// with its clamped mean equal to `malignant_growth_mean_mm`.
    pub fn draw_growth<R: Rng + ?Sized>(&self, label: Label, rng: &mut R) -> f64 {
        match label {
            Label::Malignant => {
                let mu = Self::clamped_location(self.malignant_growth_mean_mm, self.malignant_growth_sd_mm, 0.0);
                let d = Normal::new(mu, self.malignant_growth_sd_mm).expect("validated sd");
                d.sample(rng).max(0.0)
            }
            Label::Benign => {
                let d = Normal::new(self.benign_growth_mean_mm, self.benign_growth_sd_mm).expect("validated sd");
                d.sample(rng)
            }
        }
    }

    /// Labels for every study index; exactly `n_malignant` are malignant.
    pub fn labels(&self) -> Vec<Label> {
        let mut order: Vec<usize> = (0..self.n_studies).collect();
        order.shuffle(&mut keyed_rng(self.seed, "synth labels", 0));
        let mut labels = vec![Label::Benign; self.n_studies];
        for &i in &order[..self.n_malignant] {
            labels[i] = Label::Malignant;
        }
        labels
    }
}

pub fn study_id(index: usize) -> String {
    format!("S{index:04}")
}

#[derive(Debug, Clone)]
pub struct SynthStudy {
    pub study: NoduleStudy,
    pub t1: Volume,
    pub t2: Volume,
}

/// One scan: per-voxel background noise blended towards `core_hu` by a
/// linear ramp from 1 mm inside to 1 mm outside the nodule radius.
fn render(cfg: &SynthConfig, center: [usize; 3], diameter_mm: f64, core_hu: f64, noise_key: &str, index: u64) -> Result<Volume> {
    let e = cfg.volume_extent;
    let mut rng = keyed_rng(cfg.seed, noise_key, index);
    let bg = Normal::new(cfg.background_hu_mean, cfg.background_hu_sd).expect("validated sd");
    let radius = diameter_mm / 2.0;
    let mut voxels = Vec::with_capacity(e * e * e);
    for z in 0..e {
        for y in 0..e {
            for x in 0..e {
                let b: f64 = bg.sample(&mut rng);
                let d2 = [x, y, z]
                    .iter()
                    .zip(&center)
                    .map(|(&p, &c)| {
                        let d = (p as f64 - c as f64) * cfg.spacing_mm;
                        d * d
                    })
                    .sum::<f64>();
                let s = ((radius + 1.0 - d2.sqrt()) / 2.0).clamp(0.0, 1.0);
                voxels.push((b + (core_hu - b) * s) as f32);
            }
        }
    }
    let sp = cfg.spacing_mm as f32;
    Volume::new([e; 3], [sp; 3], voxels)
}

pub fn synthesize_study(cfg: &SynthConfig, index: usize) -> Result<SynthStudy> {
    cfg.validate()?;
    if index >= cfg.n_studies {
        return Err(Error::invalid(
            "synthesize_study",
            format!("index {index} out of range for {} studies", cfg.n_studies),
        ));
    }
    let label = cfg.labels()[index];
    let mut rng = keyed_rng(cfg.seed, "synth study", index as u64);
    let d1 = cfg.draw_t1_diameter(&mut rng);
    let d2 = (d1 + cfg.draw_growth(label, &mut rng)).max(MIN_DIAMETER_MM);
    let core = Normal::new(cfg.core_hu_mean, cfg.core_hu_sd).expect("validated sd").sample(&mut rng);
    let core2 = match label {
        Label::Malignant => core + cfg.malignant_density_increase_hu,
        Label::Benign => core,
    };
    let interval_days = rng.random_range(cfg.interval_days_min..=cfg.interval_days_max);
    let e = cfg.volume_extent;
    let c1: [usize; 3] = std::array::from_fn(|_| rng.random_range(3 * e / 8..=5 * e / 8));
    let j = cfg.center_jitter_voxels as i64;
    let c2: [usize; 3] = std::array::from_fn(|k| (c1[k] as i64 + rng.random_range(-j..=j)) as usize);

    let id = study_id(index);
    let t1 = render(cfg, c1, d1, core, "synth t1 noise", index as u64)?;
    let t2 = render(cfg, c2, d2, core2, "synth t2 noise", index as u64)?;
    let study = NoduleStudy {
        study_id: id.clone(),
        label,
        interval_days,
        t1: TimePoint {
            volume: format!("volumes/{id}_t1.nvol").into(),
            center_voxel: c1,
            diameter_mm: d1,
        },
        t2: TimePoint {
            volume: format!("volumes/{id}_t2.nvol").into(),
            center_voxel: c2,
            diameter_mm: d2,
        },
    };
    Ok(SynthStudy { study, t1, t2 })
}

/// Writes every study of `cfg` under `out_dir` and returns the index, which is
/// also saved as `out_dir/cohort.json`.
pub fn write_cohort(cfg: &SynthConfig, out_dir: &Path) -> Result<CohortIndex> {
    cfg.validate()?;
    for sub in ["volumes", "studies"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut manifests = Vec::with_capacity(cfg.n_studies);
    for index in 0..cfg.n_studies {
        let s = synthesize_study(cfg, index)?;
        s.t1.write(&out_dir.join(&s.study.t1.volume))?;
        s.t2.write(&out_dir.join(&s.study.t2.volume))?;
        // Manifests live one level down, so volume paths get a `..` prefix.
        let mut study = s.study.clone();
        study.t1.volume = Path::new("..").join(&study.t1.volume);
        study.t2.volume = Path::new("..").join(&study.t2.volume);
        let rel = Path::new("studies").join(format!("{}.json", study.study_id));
        study.write(&out_dir.join(&rel))?;
        manifests.push(rel);
    }
    let index = CohortIndex {
        manifests,
        seed: cfg.seed,
        generator: Some(cfg.clone()),
    };
    index.write(&out_dir.join(COHORT_INDEX_FILE))?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_studies: 6,
            n_malignant: 4,
            volume_extent: 16,
            seed: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn default_label_counts() {
        let labels = SynthConfig::default().labels();
        assert_eq!(labels.iter().filter(|l| **l == Label::Malignant).count(), 103);
        assert_eq!(labels.len(), 161);
    }

    #[test]
    fn clamped_location_hits_target_mean() {
        let mu = SynthConfig::clamped_location(4.1, 3.0, 0.0);
        assert!(mu < 4.1 && mu > 3.8, "{mu}");
        let mu = SynthConfig::clamped_location(10.96, 5.24, 5.0);
        assert!(mu < 10.96 && mu > 10.0, "{mu}");
    }

    #[test]
    fn studies_are_deterministic() {
        let cfg = small();
        let a = synthesize_study(&cfg, 3).unwrap();
        let b = synthesize_study(&cfg, 3).unwrap();
        assert_eq!(a.t1, b.t1);
        assert_eq!(a.t2, b.t2);
        assert_eq!(a.study, b.study);
        assert!(synthesize_study(&cfg, 6).is_err());
    }

    #[test]
    fn nodule_core_is_rendered_at_center() {
        let s = synthesize_study(&small(), 0).unwrap();
        let [x, y, z] = s.study.t1.center_voxel;
        let v = s.t1.get(x, y, z);
        assert!(v > -400.0, "core voxel {v}");
        assert!(s.t1.get(0, 0, 0) < -600.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = SynthConfig {
            n_malignant: 7,
            ..small()
        };
        assert!(cfg.validate().is_err());
    }
}
