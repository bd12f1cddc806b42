//! Synthetic LiDAR scenes and jittered teacher predictions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::PseudoLabel;
use crate::error::{Error, Result};
use crate::geometry::{Box3D, Point, PointCloud};
use crate::grs::Extent;

/// Nominal `(length, width, height)` per class id; ids beyond the table reuse the last entry.
pub const CLASS_DIMS: [[f64; 3]; 3] = [[4.2, 1.8, 1.6], [0.8, 0.7, 1.7], [1.8, 0.7, 1.6]];

pub fn class_dims(class_id: u32) -> [f64; 3] {
    CLASS_DIMS[(class_id as usize).min(CLASS_DIMS.len() - 1)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub num_boxes: usize,
    pub background_points: usize,
    pub extent: Extent,
    /// Class ids drawn uniformly for each box.
    pub classes: Vec<u32>,
    /// Points in a box whose center lies within `reference_range`.
    pub points_per_box: usize,
    pub reference_range: f64,
    /// Floor on points per box, whatever its range.
    pub min_points_per_box: usize,
    /// Fixed BEV box centers; random non-overlapping placement when `None`.
    pub centers: Option<Vec<[f64; 2]>>,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            num_boxes: 3,
            background_points: 1000,
            extent: Extent {
                x_min: -20.0,
                x_max: 20.0,
                y_min: -20.0,
                y_max: 20.0,
            },
            classes: vec![0, 1, 2],
            points_per_box: 200,
            reference_range: 10.0,
            min_points_per_box: 6,
            centers: None,
            seed: 0,
        }
    }
}

impl SceneSpec {
    /// Point budget of a box centered at `range` meters: constant up to the
    /// reference range, then falling with the square of the range.
    pub fn points_at_range(&self, range: f64) -> usize {
        let falloff = if range <= self.reference_range {
            1.0
        } else {
            (self.reference_range / range).powi(2)
        };
        ((self.points_per_box as f64 * falloff).round() as usize).max(self.min_points_per_box)
    }

    fn validate(&self) -> Result<()> {
        Extent::new(
            self.extent.x_min,
            self.extent.x_max,
            self.extent.y_min,
            self.extent.y_max,
        )?;
        if self.num_boxes == 0 {
            return Err(Error::InvalidConfig("scene needs at least one box".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::InvalidConfig(
                "scene needs at least one class".into(),
            ));
        }
        if !(self.reference_range > 0.0) {
            return Err(Error::InvalidConfig(
                "reference_range must be positive".into(),
            ));
        }
        let largest = self
            .classes
            .iter()
            .map(|&c| class_dims(c)[0].max(class_dims(c)[1]))
            .fold(0.0, f64::max);
        if self.extent.width() < largest || self.extent.height() < largest {
            return Err(Error::InvalidConfig(format!(
                "extent {:?} is smaller than the largest box ({largest} m)",
                self.extent
            )));
        }
        if let Some(c) = &self.centers {
            if c.len() != self.num_boxes {
                return Err(Error::InvalidConfig(format!(
                    "{} fixed centers for {} boxes",
                    c.len(),
                    self.num_boxes
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub cloud: PointCloud,
    pub gt_boxes: Vec<(Box3D, u32)>,
    pub seed: u64,
}

impl SyntheticScene {
    /// Ground truth as labels with score 1.
    pub fn gt_labels(&self) -> Vec<PseudoLabel> {
        self.gt_boxes
            .iter()
            .map(|&(b, c)| PseudoLabel {
                box3d: b,
                class_id: c,
                score: 1.0,
            })
            .collect()
    }
}

/// Uniform draw in `[-m, m]`; exactly zero when `m` is zero.
fn symmetric<R: Rng>(rng: &mut R, m: f64) -> f64 {
    if m > 0.0 {
        rng.gen_range(-m..=m)
    } else {
        0.0
    }
}

/// Deterministic scene under `spec.seed`. Boxes stand on the ground plane
/// `z = 0`; background returns lie just below it, outside every box.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let e = spec.extent;
    let mut boxes: Vec<(Box3D, u32)> = Vec::with_capacity(spec.num_boxes);
    for k in 0..spec.num_boxes {
        let class = spec.classes[rng.gen_range(0..spec.classes.len())];
        let [l, w, h] = class_dims(class);
        let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let radius = 0.5 * l.hypot(w);
        let center = match &spec.centers {
            Some(c) => c[k],
            None => {
                let mut placed = None;
                for _ in 0..1000 {
                    let (xr, yr) = (
                        (e.x_min + radius).min(e.x_max - radius)
                            ..=(e.x_max - radius).max(e.x_min + radius),
                        (e.y_min + radius).min(e.y_max - radius)
                            ..=(e.y_max - radius).max(e.y_min + radius),
                    );
                    let c = [rng.gen_range(xr), rng.gen_range(yr)];
                    let clear = boxes.iter().all(|(b, _)| {
                        let bc = b.center();
                        let r2 = 0.5 * b.length().hypot(b.width());
                        (bc[0] - c[0]).hypot(bc[1] - c[1]) > radius + r2 + 0.5
                    });
                    if clear {
                        placed = Some(c);
                        break;
                    }
                }
                placed.ok_or_else(|| {
                    Error::InvalidConfig("could not place boxes without overlap".into())
                })?
            }
        };
        boxes.push((
            Box3D::new([center[0], center[1], h / 2.0], [l, w, h], yaw)?,
            class,
        ));
    }

    let mut points = Vec::new();
    for (b, _) in &boxes {
        let n = spec.points_at_range(b.bev_range());
        let [l, w, h] = b.dims();
        for _ in 0..n {
            // stay clear of the faces so f32 rounding cannot push a point out
            let q = [
                rng.gen_range(-0.49 * l..0.49 * l),
                rng.gen_range(-0.49 * w..0.49 * w),
                rng.gen_range(-0.49 * h..0.49 * h),
            ];
            let p = b.to_world(q);
            points.push(Point::new(
                p[0] as f32,
                p[1] as f32,
                p[2] as f32,
                rng.gen_range(0.2f32..1.0),
            ));
        }
    }
    for _ in 0..spec.background_points {
        points.push(Point::new(
            rng.gen_range(e.x_min..e.x_max) as f32,
            rng.gen_range(e.y_min..e.y_max) as f32,
            rng.gen_range(-0.3f32..-0.05),
            rng.gen_range(0.0f32..0.3),
        ));
    }
    Ok(SyntheticScene {
        cloud: PointCloud::new(points)?,
        gt_boxes: boxes,
        seed: spec.seed,
    })
}

/// Bounds on the teacher's localization error.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JitterSpec {
    pub max_center: f64,
    pub max_yaw: f64,
}

/// Score assigned to a prediction displaced by `center_error` meters and
/// rotated by `yaw_error` radians.
pub fn jitter_score(center_error: f64, yaw_error: f64) -> f64 {
    (-(center_error + yaw_error.abs())).exp()
}

/// Perturbs every ground-truth box and scores it by how far it moved.
pub fn teacher_pseudo_labels(
    scene: &SyntheticScene,
    jitter: JitterSpec,
    seed: u64,
) -> Result<Vec<PseudoLabel>> {
    if !(jitter.max_center >= 0.0 && jitter.max_yaw >= 0.0) {
        return Err(Error::InvalidConfig(
            "jitter magnitudes must be non-negative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    scene
        .gt_boxes
        .iter()
        .map(|&(b, class_id)| {
            let dx = symmetric(&mut rng, jitter.max_center);
            let dy = symmetric(&mut rng, jitter.max_center);
            let dyaw = symmetric(&mut rng, jitter.max_yaw);
            let c = b.center();
            let moved = Box3D::new([c[0] + dx, c[1] + dy, c[2]], b.dims(), b.yaw() + dyaw)?;
            PseudoLabel::new(moved, class_id, jitter_score(dx.hypot(dy), dyaw))
        })
        .collect()
}
