//! Experiment configuration, read from TOML.

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentConfig, AugmentMode};
use crate::error::{Error, Result};
use crate::geometry::GridShape;
use crate::grs::{Extent, GrsConfig, RelationPairing};

use super::extractor::BevGrid;
use super::scene::{JitterSpec, SceneSpec};

/// The configuration shipped as `configs/default.toml`.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../../../../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub iterations: usize,
    pub lr: f64,
    /// Final mean relation error below which a run counts as converged.
    pub convergence_tol: f64,
    pub scene: SceneSection,
    pub extractor: ExtractorSection,
    pub labels: LabelSection,
    pub grs: GrsSection,
    pub augment: AugmentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub num_boxes: usize,
    pub background_points: usize,
    /// `[x_min, x_max, y_min, y_max]`, meters.
    pub extent: [f64; 4],
    pub classes: Vec<u32>,
    pub points_per_box: usize,
    pub reference_range: f64,
    pub min_points_per_box: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorSection {
    /// BEV cells as `[rows, cols]`.
    pub cells: [usize; 2],
    pub channels: usize,
    pub init_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelSection {
    pub max_center_jitter: f64,
    pub max_yaw_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrsSection {
    pub lambda_1: f64,
    pub score_threshold: f64,
    pub epsilon_norm: f64,
    /// `"student-teacher"` or `"student-student"`.
    pub pairing: String,
    /// Weight of the quadratic surrogate base loss `½·w·‖θ‖²`.
    pub base_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    /// Apply range-decayed voxel augmentation to the student input.
    pub enabled: bool,
    /// Apply a random global flip and rotation to the student input first.
    pub strong: bool,
    pub max_rotation: f64,
    pub grid: String,
    pub c_decay: f64,
    pub d_range: f64,
    pub tau_aug: f64,
    pub n_p_min: usize,
    pub mode: String,
    pub keep_ratio: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            iterations: 500,
            lr: 0.5,
            convergence_tol: 0.05,
            scene: SceneSection::default(),
            extractor: ExtractorSection::default(),
            labels: LabelSection::default(),
            grs: GrsSection::default(),
            augment: AugmentSection::default(),
        }
    }
}

impl Default for SceneSection {
    fn default() -> Self {
        let s = SceneSpec::default();
        Self {
            num_boxes: s.num_boxes,
            background_points: s.background_points,
            extent: [
                s.extent.x_min,
                s.extent.x_max,
                s.extent.y_min,
                s.extent.y_max,
            ],
            classes: s.classes,
            points_per_box: s.points_per_box,
            reference_range: s.reference_range,
            min_points_per_box: s.min_points_per_box,
        }
    }
}

impl Default for ExtractorSection {
    fn default() -> Self {
        Self {
            cells: [40, 40],
            channels: 8,
            init_scale: 0.5,
        }
    }
}

impl Default for LabelSection {
    fn default() -> Self {
        Self {
            max_center_jitter: 0.2,
            max_yaw_jitter: 0.1,
        }
    }
}

impl Default for GrsSection {
    fn default() -> Self {
        let g = GrsConfig::default();
        Self {
            lambda_1: g.lambda_1,
            score_threshold: g.score_threshold,
            epsilon_norm: g.epsilon_norm,
            pairing: "student-teacher".into(),
            base_weight: 0.0,
        }
    }
}

impl Default for AugmentSection {
    fn default() -> Self {
        let a = AugmentConfig::default();
        Self {
            enabled: false,
            strong: false,
            max_rotation: std::f64::consts::FRAC_PI_4,
            grid: a.grid.to_string(),
            c_decay: a.c_decay,
            d_range: a.d_range,
            tau_aug: a.tau_aug,
            n_p_min: a.n_p_min,
            mode: a.mode.as_str().into(),
            keep_ratio: a.sparsify_keep_ratio,
        }
    }
}

fn bad(key: &str, message: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(format!("{key}: {message}"))
}

impl ExperimentConfig {
    /// Parses and validates. Syntax errors report line and column; semantic
    /// errors name the offending key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(bad("lr", "must be a non-negative finite number"));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(bad("convergence_tol", "must be positive"));
        }
        self.scene_spec().map_err(|e| bad("scene", e))?;
        self.bev_grid()?;
        if self.extractor.channels == 0 {
            return Err(bad("extractor.channels", "must be at least 1"));
        }
        if !(self.extractor.init_scale >= 0.0) {
            return Err(bad("extractor.init_scale", "must be non-negative"));
        }
        if !(self.labels.max_center_jitter >= 0.0) {
            return Err(bad("labels.max_center_jitter", "must be non-negative"));
        }
        if !(self.labels.max_yaw_jitter >= 0.0) {
            return Err(bad("labels.max_yaw_jitter", "must be non-negative"));
        }
        self.grs_config()?;
        if !(self.grs.base_weight >= 0.0) {
            return Err(bad("grs.base_weight", "must be non-negative"));
        }
        self.augment_config(0)?;
        Ok(())
    }

    pub fn scene_spec(&self) -> Result<SceneSpec> {
        let s = &self.scene;
        let [x_min, x_max, y_min, y_max] = s.extent;
        let extent = Extent::new(x_min, x_max, y_min, y_max).map_err(|e| bad("scene.extent", e))?;
        if s.num_boxes == 0 {
            return Err(bad("scene.num_boxes", "must be at least 1"));
        }
        if s.classes.is_empty() {
            return Err(bad("scene.classes", "must not be empty"));
        }
        if !(s.reference_range > 0.0) {
            return Err(bad("scene.reference_range", "must be positive"));
        }
        Ok(SceneSpec {
            num_boxes: s.num_boxes,
            background_points: s.background_points,
            extent,
            classes: s.classes.clone(),
            points_per_box: s.points_per_box,
            reference_range: s.reference_range,
            min_points_per_box: s.min_points_per_box.max(self.augment.n_p_min + 1),
            centers: None,
            seed: self.seed,
        })
    }

    pub fn bev_grid(&self) -> Result<BevGrid> {
        let [height, width] = self.extractor.cells;
        if height == 0 || width == 0 {
            return Err(bad("extractor.cells", "must be positive"));
        }
        let [x_min, x_max, y_min, y_max] = self.scene.extent;
        Ok(BevGrid {
            extent: Extent::new(x_min, x_max, y_min, y_max).map_err(|e| bad("scene.extent", e))?,
            height,
            width,
        })
    }

    pub fn jitter(&self) -> JitterSpec {
        JitterSpec {
            max_center: self.labels.max_center_jitter,
            max_yaw: self.labels.max_yaw_jitter,
        }
    }

    pub fn grs_config(&self) -> Result<GrsConfig> {
        let pairing = match self.grs.pairing.as_str() {
            "student-teacher" => RelationPairing::StudentTeacher,
            "student-student" => RelationPairing::StudentStudent,
            other => return Err(bad("grs.pairing", format!("unknown pairing {other:?}"))),
        };
        let cfg = GrsConfig {
            lambda_1: self.grs.lambda_1,
            score_threshold: self.grs.score_threshold,
            epsilon_norm: self.grs.epsilon_norm,
            pairing,
        };
        cfg.validate().map_err(|e| bad("grs", e))?;
        Ok(cfg)
    }

    /// Augmentation settings with the seed for one training step.
    pub fn augment_config(&self, step: usize) -> Result<AugmentConfig> {
        let a = &self.augment;
        let grid: GridShape = a.grid.parse().map_err(|e| bad("augment.grid", e))?;
        let mode: AugmentMode = a.mode.parse().map_err(|e| bad("augment.mode", e))?;
        if !(a.max_rotation >= 0.0 && a.max_rotation.is_finite()) {
            return Err(bad("augment.max_rotation", "must be non-negative"));
        }
        let cfg = AugmentConfig {
            grid,
            c_decay: a.c_decay,
            d_range: a.d_range,
            n_p_min: a.n_p_min,
            tau_aug: a.tau_aug,
            mode,
            sparsify_keep_ratio: a.keep_ratio,
            seed: self.seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        };
        cfg.validate().map_err(|e| bad("augment", e))?;
        Ok(cfg)
    }
}
