//! Run configuration: one TOML document, overridden by command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use mono3d_core::kitti::EvalSpec;
use mono3d_core::synth::DetectionNoise;
use mono3d_core::{ApInterpolation, FitConfig, SceneConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Seed for every random draw of a run. Replaces `synth.scene.seed`.
    pub seed: u64,
    /// Worker threads for frame-level work; 0 uses every core.
    pub jobs: usize,
    pub eval: EvalSection,
    pub pseudolabel: PseudoLabelSection,
    pub fit: FitConfig,
    pub synth: SynthSection,
    pub gradcheck: GradCheckSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub classes: Vec<String>,
    pub iou_thresholds: Vec<f64>,
    /// 11 or 40.
    pub ap_points: u32,
    /// Score given to prediction lines that carry none. Unset makes such
    /// lines an error.
    pub default_score: Option<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let spec = EvalSpec::default();
        EvalSection {
            classes: spec.classes,
            iou_thresholds: spec.iou_thresholds,
            ap_points: spec.interpolation.points(),
            default_score: None,
        }
    }
}

impl EvalSection {
    pub fn spec(&self) -> Result<EvalSpec> {
        let interpolation = ApInterpolation::from_points(self.ap_points)?;
        let spec = EvalSpec {
            classes: self.classes.clone(),
            iou_thresholds: self.iou_thresholds.clone(),
            interpolation,
            ..EvalSpec::default()
        };
        for &t in &spec.iou_thresholds {
            spec.config(t, mono3d_core::IouKind::ThreeD)?;
        }
        Ok(spec)
    }
}

/// Where pseudo labels take their yaw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum YawSource {
    /// The label's observation angle column.
    #[default]
    Alpha,
    /// Yaw fixed at zero.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoLabelSection {
    pub yaw_source: YawSource,
    /// Image size `[width, height]` for frames without calibration.
    pub image_size: Option<[f64; 2]>,
}

impl Default for PseudoLabelSection {
    fn default() -> Self {
        PseudoLabelSection { yaw_source: YawSource::Alpha, image_size: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub frames: usize,
    /// Also write noisy scored detections under `detections/label_2`.
    pub detections: bool,
    pub noise: DetectionNoise,
    pub scene: SceneConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection { frames: 20, detections: false, noise: DetectionNoise::default(), scene: SceneConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckSection {
    pub points: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckSection {
    fn default() -> Self {
        GradCheckSection { points: 1000, step: 1e-6, tolerance: 1e-4 }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.eval.spec()?;
        self.fit.validate()?;
        self.synth.scene.validate()?;
        if let Some(s) = self.eval.default_score {
            if !s.is_finite() {
                bail!("eval.default_score must be finite");
            }
        }
        if let Some([w, h]) = self.pseudolabel.image_size {
            if !(w > 0.0 && h > 0.0) {
                bail!("pseudolabel.image_size must be positive, got [{w}, {h}]");
            }
        }
        if !(self.gradcheck.step > 0.0 && self.gradcheck.tolerance > 0.0) {
            bail!("gradcheck.step and gradcheck.tolerance must be positive");
        }
        Ok(())
    }
}
