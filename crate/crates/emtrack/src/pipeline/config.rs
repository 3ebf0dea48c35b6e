use serde::{Deserialize, Serialize};

use crate::detect::{AugmentationSpec, DecodeConfig};
use crate::discover::{FusionConfig, SaliencyConfig};
use crate::ego::RansacConfig;
use crate::flow::FlowCheckConfig;
use crate::track::{TrackConfig, VerifyConfig};

/// Where the per-frame flow comes from during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowSource {
    /// Read stored flow files (adding the configured noise), falling back
    /// to block matching when a file is missing.
    Files,
    /// Always estimate with pyramidal block matching.
    Estimated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowStageConfig {
    pub source: FlowSource,
    /// Gaussian noise added to stored flow (pixels per component).
    pub noise_sigma: f64,
    /// Fraction of stored-flow vectors replaced with garbage.
    pub corrupt_rho: f64,
    pub check: FlowCheckConfig,
}

impl Default for FlowStageConfig {
    fn default() -> Self {
        Self {
            source: FlowSource::Files,
            noise_sigma: 0.0,
            corrupt_rho: 0.0,
            check: FlowCheckConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EgoStageConfig {
    pub ransac: RansacConfig,
    /// Max round-trip error accepted by the egomotion cycle check (meters).
    pub cycle_threshold: f64,
}

impl Default for EgoStageConfig {
    fn default() -> Self {
        Self {
            ransac: RansacConfig::default(),
            cycle_threshold: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub seg_iterations: usize,
    pub det_iterations: usize,
    /// Learning rate for the first round (random initialization).
    pub lr_round1: f64,
    /// Learning rate for warm-started later rounds.
    pub lr_warm: f64,
    /// Gradient accumulation window (effective batch size).
    pub accumulation: usize,
    pub augmentation: AugmentationSpec,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            seg_iterations: 2400,
            det_iterations: 1200,
            lr_round1: 5e-3,
            lr_warm: 5e-4,
            accumulation: 4,
            augmentation: AugmentationSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PromotionConfig {
    /// Minimum proposal confidence to promote into a pseudo-label.
    pub min_confidence: f64,
    /// Minimum visible GT pixels for a box to count during evaluation.
    pub eval_min_pixels: usize,
}

impl Default for PromotionConfig {
    fn default() -> Self {
        Self {
            min_confidence: 0.2,
            eval_min_pixels: 20,
        }
    }
}

/// Every knob of the EM pipeline in one place. Serialized alongside each
/// run so reports are self-describing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub rounds: usize,
    pub seed: u64,
    /// Worker threads for the per-frame E step; 1 = fully sequential.
    pub jobs: usize,
    pub flow: FlowStageConfig,
    pub ego: EgoStageConfig,
    pub saliency: SaliencyConfig,
    pub fusion: FusionConfig,
    pub promotion: PromotionConfig,
    pub training: TrainingConfig,
    pub detection: DecodeConfig,
    pub tracking: TrackConfig,
    pub verify: VerifyConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            seed: 0,
            jobs: 1,
            flow: FlowStageConfig::default(),
            ego: EgoStageConfig::default(),
            saliency: SaliencyConfig::default(),
            fusion: FusionConfig::default(),
            promotion: PromotionConfig::default(),
            training: TrainingConfig::default(),
            detection: DecodeConfig::default(),
            tracking: TrackConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_yields_defaults() {
        let cfg = PipelineConfig::from_json("{}").unwrap();
        assert_eq!(cfg.rounds, 3);
        assert_eq!(cfg.flow.check.alpha1, 0.01);
        assert_eq!(cfg.flow.check.alpha2, 0.1);
        assert_eq!(cfg.ego.cycle_threshold, 0.25);
        assert_eq!(cfg.fusion.ensemble_threshold, 2.0);
        assert_eq!(cfg.saliency.motion_threshold, 0.25);
    }

    #[test]
    fn partial_override_keeps_other_defaults() {
        let cfg =
            PipelineConfig::from_json(r#"{"rounds": 2, "fusion": {"ensemble_threshold": 0.5}}"#)
                .unwrap();
        assert_eq!(cfg.rounds, 2);
        assert_eq!(cfg.fusion.ensemble_threshold, 0.5);
        assert_eq!(cfg.fusion.lambda, 2.0);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = PipelineConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = PipelineConfig::from_json(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
}
