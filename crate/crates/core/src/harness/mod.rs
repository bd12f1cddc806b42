//! Desk-scale teacher-student distillation.
//!
//! A frozen teacher and a trainable student (with adapter) each turn a
//! point cloud into a BEV feature map. One [`distill_step`] reads both maps
//! at the keypoints of the pseudo-labels, evaluates the weighted relation
//! loss and takes a plain gradient-descent step on the student.

pub mod config;
pub mod extractor;
pub mod scene;

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::{augment_scene, PseudoLabel};
use crate::error::{Error, Result};
use crate::geometry::{extract_keypoints, project_to_bev, rotate2, Box3D, Point, PointCloud};
use crate::grs::{
    align_feature_map, grs_gradient, sample_points, total_loss, GrsConfig, KeypointFeatures,
    ObjectFeatures,
};

pub use config::{ExperimentConfig, DEFAULT_CONFIG_TOML};
pub use extractor::{cell_statistics, BevGrid, ExtractorGrad, ToyExtractor, NUM_STATS};
pub use scene::{generate_scene, teacher_pseudo_labels, JitterSpec, SceneSpec, SyntheticScene};

/// Global BEV motion applied to the student's view of a scene: optional
/// mirror across the `x` axis, then rotation about the origin.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GlobalTransform {
    pub flip_y: bool,
    pub angle: f64,
}

impl GlobalTransform {
    pub fn is_identity(&self) -> bool {
        !self.flip_y && self.angle == 0.0
    }

    pub fn apply_xy(&self, p: [f64; 2]) -> [f64; 2] {
        let y = if self.flip_y { -p[1] } else { p[1] };
        let (s, c) = self.angle.sin_cos();
        let (x, y) = rotate2(p[0], y, c, s);
        [x, y]
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        if self.is_identity() {
            return cloud.clone();
        }
        let pts = cloud
            .points()
            .iter()
            .map(|p| {
                let [x, y] = self.apply_xy([p.x as f64, p.y as f64]);
                Point::new(x as f32, y as f32, p.z, p.intensity)
            })
            .collect();
        PointCloud::from_trusted(pts)
    }

    pub fn apply_box(&self, b: &Box3D) -> Result<Box3D> {
        let c = b.center();
        let [x, y] = self.apply_xy([c[0], c[1]]);
        let yaw = if self.flip_y { -b.yaw() } else { b.yaw() };
        Box3D::new([x, y, c[2]], b.dims(), yaw + self.angle)
    }
}

/// Inputs of one distillation step.
#[derive(Debug, Clone)]
pub struct DistillBatch<'a> {
    pub teacher_cloud: &'a PointCloud,
    /// The student's (possibly augmented) view of the same scene.
    pub student_cloud: &'a PointCloud,
    /// Pseudo-labels in the teacher's frame.
    pub labels: &'a [PseudoLabel],
    /// Maps teacher-frame positions into the student's frame.
    pub student_view: GlobalTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub l_grs: f64,
    pub l_total: f64,
    /// Mean over included objects of the per-object mean `|M_s − M_t|`.
    pub mean_relation_error: f64,
    pub param_norm: f64,
    /// Fingerprint of every teacher keypoint feature used in the step.
    pub teacher_digest: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub rows: Vec<StepRow>,
    pub converged: bool,
}

pub const METRICS_HEADER: &str = "step,l_grs,l_total,mean_relation_error,param_norm,teacher_digest";

impl TrainReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.rows.first().map(|r| r.l_grs)
    }

    pub fn min_loss(&self) -> Option<f64> {
        self.rows.iter().map(|r| r.l_grs).reduce(f64::min)
    }

    pub fn final_relation_error(&self) -> Option<f64> {
        self.rows.last().map(|r| r.mean_relation_error)
    }

    /// Comma-separated metrics with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{:016x}",
                r.step, r.l_grs, r.l_total, r.mean_relation_error, r.param_norm, r.teacher_digest
            );
        }
        out
    }
}

/// FNV-1a over the bit patterns of `values`.
fn digest(values: impl IntoIterator<Item = f64>, mut h: u64) -> u64 {
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

const DIGEST_SEED: u64 = 0xcbf2_9ce4_8422_2325;

struct Sampled {
    stats: KeypointFeatures,
    mass: Vec<f64>,
}

fn sample_stats(map: &crate::grs::FeatureMap, points: &[[f64; 2]]) -> Sampled {
    let s = sample_points(map, points);
    let mass = s
        .out_of_bounds
        .iter()
        .map(|&o| if o { 0.0 } else { 1.0 })
        .collect();
    Sampled {
        stats: s.features,
        mass,
    }
}

fn features(model: &ToyExtractor, s: &Sampled) -> Result<KeypointFeatures> {
    let rows: Vec<Vec<f64>> = (0..s.stats.k())
        .map(|i| model.features_from_stats(s.stats.row(i), s.mass[i]))
        .collect();
    KeypointFeatures::from_rows(&rows)
}

/// One gradient-descent step of the student on `L_base + λ₁·L_GRS`.
///
/// Both models see their input through per-cell statistics sampled
/// bilinearly at the keypoints; because the extractor is affine in the
/// statistics this equals sampling its feature map, and it keeps the chain
/// rule exact. The returned row describes the student before the update.
pub fn distill_step(
    student: &mut ToyExtractor,
    teacher: &ToyExtractor,
    batch: &DistillBatch<'_>,
    cfg: &GrsConfig,
    lr: f64,
    base_weight: f64,
    step: usize,
) -> Result<StepRow> {
    if !(lr >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "lr must be non-negative, got {lr}"
        )));
    }
    let tg = teacher.grid();
    let teacher_stats = cell_statistics(batch.teacher_cloud, tg)?;
    let student_stats = cell_statistics(batch.student_cloud, student.grid())?;
    let student_stats = align_feature_map(&student_stats, tg.extent, (tg.height, tg.width))?;

    let mut teacher_feats = Vec::with_capacity(batch.labels.len());
    let mut student_feats = Vec::with_capacity(batch.labels.len());
    let mut student_samples = Vec::with_capacity(batch.labels.len());
    for label in batch.labels {
        let kp = extract_keypoints(&project_to_bev(&label.box3d));
        let teacher_pts = kp.xy();
        let student_pts = teacher_pts.map(|p| batch.student_view.apply_xy(p));
        let ts = sample_stats(&teacher_stats, &teacher_pts);
        let ss = sample_stats(&student_stats, &student_pts);
        teacher_feats.push(features(teacher, &ts)?);
        student_feats.push(features(student, &ss)?);
        student_samples.push(ss);
    }
    let objects: Vec<ObjectFeatures<'_>> = batch
        .labels
        .iter()
        .zip(student_feats.iter().zip(&teacher_feats))
        .map(|(l, (s, t))| ObjectFeatures {
            student: s,
            teacher: t,
            score: l.score,
        })
        .collect();
    let eval = grs_gradient(&objects, cfg)?;

    let mut grad = student.zero_grad();
    for (k, sample) in student_samples.iter().enumerate() {
        if !eval.included[k] {
            continue;
        }
        let g = &eval.grads[k];
        for i in 0..g.k() {
            let upstream: Vec<f64> = g.row(i).iter().map(|v| cfg.lambda_1 * v).collect();
            student.backward(sample.stats.row(i), sample.mass[i], &upstream, &mut grad);
        }
    }
    student.add_weight_decay(base_weight, &mut grad);

    let param_norm = student.parameter_norm();
    let l_base = 0.5 * base_weight * param_norm * param_norm;
    let l_total = total_loss(l_base, eval.loss, cfg.lambda_1);
    if !l_total.is_finite() {
        return Err(Error::Diverged {
            step,
            loss: l_total,
        });
    }
    let included: Vec<f64> = eval
        .per_object
        .iter()
        .zip(&eval.included)
        .filter_map(|(l, &inc)| inc.then_some(*l))
        .collect();
    let mean_relation_error = if included.is_empty() {
        0.0
    } else {
        included.iter().sum::<f64>() / included.len() as f64
    };
    let teacher_digest = teacher_feats
        .iter()
        .fold(DIGEST_SEED, |h, f| digest(f.as_slice().iter().copied(), h));

    student.apply_gradient(&grad, lr);
    if !student.is_finite() {
        return Err(Error::Diverged {
            step,
            loss: f64::NAN,
        });
    }
    Ok(StepRow {
        step,
        l_grs: eval.loss,
        l_total,
        mean_relation_error,
        param_norm,
        teacher_digest,
    })
}

/// The models and data of an experiment before training.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub scene: SyntheticScene,
    pub labels: Vec<PseudoLabel>,
    pub teacher: ToyExtractor,
    pub student: ToyExtractor,
}

pub fn setup_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSetup> {
    cfg.validate()?;
    let scene = generate_scene(&cfg.scene_spec()?)?;
    let labels = teacher_pseudo_labels(&scene, cfg.jitter(), cfg.seed.wrapping_add(1))?;
    let grid = cfg.bev_grid()?;
    let e = &cfg.extractor;
    let teacher = ToyExtractor::random(
        grid,
        e.channels,
        e.init_scale,
        false,
        cfg.seed.wrapping_add(2),
    )?;
    let student = ToyExtractor::random(
        grid,
        e.channels,
        e.init_scale,
        true,
        cfg.seed.wrapping_add(3),
    )?;
    Ok(ExperimentSetup {
        scene,
        labels,
        teacher,
        student,
    })
}

/// The student's input for one step: optional global flip/rotation, then
/// optional voxel augmentation of the pseudo-labeled boxes.
pub fn student_view(
    cfg: &ExperimentConfig,
    setup: &ExperimentSetup,
    step: usize,
) -> Result<(PointCloud, GlobalTransform)> {
    let mut view = GlobalTransform::default();
    if cfg.augment.strong {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(4));
        rng.set_stream(step as u64);
        view.flip_y = rng.gen::<bool>();
        let m = cfg.augment.max_rotation;
        view.angle = if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
    }
    let cloud = view.apply_cloud(&setup.scene.cloud);
    if !cfg.augment.enabled {
        return Ok((cloud, view));
    }
    let labels = setup
        .labels
        .iter()
        .map(|l| {
            Ok(PseudoLabel {
                box3d: view.apply_box(&l.box3d)?,
                ..*l
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (out, _) = augment_scene(&cloud, &labels, false, &cfg.augment_config(step)?)?;
    Ok((out, view))
}

/// Runs the configured number of distillation steps.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<TrainReport> {
    let mut setup = setup_experiment(cfg)?;
    let grs = cfg.grs_config()?;
    let mut rows = Vec::with_capacity(cfg.iterations);
    for step in 0..cfg.iterations {
        let (student_cloud, view) = student_view(cfg, &setup, step)?;
        let batch = DistillBatch {
            teacher_cloud: &setup.scene.cloud,
            student_cloud: &student_cloud,
            labels: &setup.labels,
            student_view: view,
        };
        let row = distill_step(
            &mut setup.student,
            &setup.teacher,
            &batch,
            &grs,
            cfg.lr,
            cfg.grs.base_weight,
            step,
        )?;
        rows.push(row);
    }
    let converged = rows
        .last()
        .is_some_and(|r| r.mean_relation_error < cfg.convergence_tol);
    Ok(TrainReport { rows, converged })
}
