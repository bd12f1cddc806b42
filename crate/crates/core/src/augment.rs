//! Range-decayed voxel-wise augmentation of object point clouds.
//!
//! Each box is split into a voxel grid. Voxels of one box share a single
//! participation probability that decays exponentially with the box's
//! distance from the sensor, so sparse far-away objects are rarely touched.
//! Two operations act on participating voxels:
//!
//! * **sparsify** subsamples the points of each selected voxel;
//! * **order dropout** removes a contiguous angular run of voxels, walking
//!   clockwise or counterclockwise, which mimics a self-occluded surface.
//!
//! Both refuse to act when they would leave `n_p_min` or fewer points in
//! the box.
//!
//! # Random stream protocol
//!
//! Every box draws from its own ChaCha8 stream keyed by `(seed, box index)`,
//! so results do not depend on how boxes are scheduled. Within a box, draws
//! happen in this order, per operation in mode order (sparsify first):
//!
//! 1. order dropout only: one `bool` picks the direction (`true` = counterclockwise);
//! 2. one `f64` in `[0, 1)` per voxel in linear index order; the voxel is
//!    selected when the draw is `< p`;
//! 3. sparsify only: for each selected voxel whose kept count is below its
//!    point count, one `rand::seq::index::sample` call.

use std::f64::consts::PI;

use rand::{seq::index, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{voxel_centers, Box3D, BoxBinner, BoxVoxelGrid, GridShape, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    Sparsify,
    OrderDropout,
    Both,
}

impl AugmentMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AugmentMode::Sparsify => "sparsify",
            AugmentMode::OrderDropout => "dropout",
            AugmentMode::Both => "both",
        }
    }
}

impl std::str::FromStr for AugmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparsify" => Ok(AugmentMode::Sparsify),
            "dropout" | "order-dropout" => Ok(AugmentMode::OrderDropout),
            "both" => Ok(AugmentMode::Both),
            other => Err(Error::Parse(format!("unknown augmentation mode {other:?}"))),
        }
    }
}

/// Traversal direction around the box for order dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Decreasing relative angle.
    Clockwise,
    /// Increasing relative angle.
    Counterclockwise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub grid: GridShape,
    /// Probability scale at the sensor origin.
    pub c_decay: f64,
    /// Range constant of the exponential decay, meters.
    pub d_range: f64,
    /// Minimum in-box points an operation must leave behind (strictly more survive).
    pub n_p_min: usize,
    /// Pseudo-label score required before an unlabeled box is augmented.
    pub tau_aug: f64,
    pub mode: AugmentMode,
    pub sparsify_keep_ratio: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            grid: GridShape::default(),
            c_decay: 0.05,
            d_range: 100.0,
            n_p_min: 5,
            tau_aug: 0.7,
            mode: AugmentMode::Both,
            sparsify_keep_ratio: 0.5,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        GridShape::new(self.grid.n_l, self.grid.n_w, self.grid.n_h)?;
        if !(self.c_decay > 0.0 && self.c_decay <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "c_decay must lie in (0, 1], got {}",
                self.c_decay
            )));
        }
        if !(self.d_range > 0.0 && self.d_range.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "d_range must be positive, got {}",
                self.d_range
            )));
        }
        if !(0.0..=1.0).contains(&self.tau_aug) {
            return Err(Error::InvalidConfig(format!(
                "tau_aug must lie in [0, 1], got {}",
                self.tau_aug
            )));
        }
        if !(self.sparsify_keep_ratio > 0.0 && self.sparsify_keep_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "sparsify_keep_ratio must lie in (0, 1], got {}",
                self.sparsify_keep_ratio
            )));
        }
        Ok(())
    }
}

/// A box predicted by the teacher (or a ground-truth box) with its class score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel {
    pub box3d: Box3D,
    pub class_id: u32,
    pub score: f64,
}

impl PseudoLabel {
    pub fn new(box3d: Box3D, class_id: u32, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidConfig(format!(
                "score must lie in [0, 1], got {score}"
            )));
        }
        Ok(Self {
            box3d,
            class_id,
            score,
        })
    }
}

/// `c_decay · exp(-‖center‖ / d_range)`.
pub fn decay_probability(center_xy: [f64; 2], cfg: &AugmentConfig) -> f64 {
    let range = center_xy[0].hypot(center_xy[1]);
    cfg.c_decay * (-range / cfg.d_range).exp()
}

/// The per-box random stream.
pub fn box_rng(seed: u64, box_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(box_index as u64);
    rng
}

/// Wraps into `(-π, π]`; an input of exactly `-π` maps to `π`.
fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta;
    while t > PI {
        t -= 2.0 * PI;
    }
    while t <= -PI {
        t += 2.0 * PI;
    }
    t
}

/// Angle of each voxel center as seen from the sensor, measured relative
/// to the direction of the box center.
pub fn relative_voxel_angles(box3d: &Box3D, centers: &[[f64; 3]]) -> Vec<f64> {
    let c = box3d.center();
    let box_angle = c[1].atan2(c[0]);
    centers
        .iter()
        .map(|v| wrap_angle(v[1].atan2(v[0]) - box_angle))
        .collect()
}

/// Voxel linear indices sorted by relative angle in the given direction;
/// ties keep ascending voxel index.
pub fn traversal_order(angles: &[f64], direction: Direction) -> Vec<usize> {
    let mut order: Vec<usize> = (0..angles.len()).collect();
    order.sort_by(|&a, &b| {
        let by_angle = angles[a].total_cmp(&angles[b]);
        let by_angle = match direction {
            Direction::Counterclockwise => by_angle,
            Direction::Clockwise => by_angle.reverse(),
        };
        by_angle.then(a.cmp(&b))
    });
    order
}

fn draw_mask<R: Rng>(rng: &mut R, voxels: usize, p: f64) -> Vec<bool> {
    (0..voxels).map(|_| rng.gen::<f64>() < p).collect()
}

/// What order dropout decided for one box.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderDropoutPlan {
    pub direction: Direction,
    /// Voxel indices in traversal order.
    pub traversal: Vec<usize>,
    /// Number of voxels selected by the Bernoulli mask.
    pub selected: usize,
    /// The first `selected` voxels of `traversal`.
    pub dropped_voxels: Vec<usize>,
    /// Point indices removed; empty when the retention guard vetoed.
    pub removed: Vec<usize>,
    pub vetoed: bool,
}

/// What sparsify decided for one box.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsifyPlan {
    pub selected_voxels: Vec<usize>,
    /// Point indices removed, ascending; empty when the guard vetoed.
    pub removed: Vec<usize>,
    pub vetoed: bool,
}

/// Plans order dropout over per-voxel point lists.
fn plan_order_dropout<R: Rng>(
    box3d: &Box3D,
    centers: &[[f64; 3]],
    members: &[Vec<usize>],
    p: f64,
    n_p_min: usize,
    direction: Direction,
    rng: &mut R,
) -> OrderDropoutPlan {
    let angles = relative_voxel_angles(box3d, centers);
    let mask = draw_mask(rng, members.len(), p);
    let traversal = traversal_order(&angles, direction);
    let selected = mask.iter().filter(|&&m| m).count();
    let dropped_voxels = traversal[..selected].to_vec();

    let in_box: usize = members.iter().map(Vec::len).sum();
    let dropping: usize = dropped_voxels.iter().map(|&v| members[v].len()).sum();
    let vetoed = !(in_box - dropping > n_p_min);
    let mut removed = Vec::new();
    if !vetoed {
        for &v in &dropped_voxels {
            removed.extend_from_slice(&members[v]);
        }
        removed.sort_unstable();
    }
    OrderDropoutPlan {
        direction,
        traversal,
        selected,
        dropped_voxels,
        removed,
        vetoed,
    }
}

fn plan_sparsify<R: Rng>(
    members: &[Vec<usize>],
    p: f64,
    keep_ratio: f64,
    n_p_min: usize,
    rng: &mut R,
) -> SparsifyPlan {
    let mask = draw_mask(rng, members.len(), p);
    let selected_voxels: Vec<usize> = (0..members.len()).filter(|&v| mask[v]).collect();
    let mut removed = Vec::new();
    for &v in &selected_voxels {
        let pts = &members[v];
        let n = pts.len();
        if n == 0 {
            continue;
        }
        let keep = ((n as f64 * keep_ratio).ceil() as usize).clamp(1, n);
        if keep == n {
            continue;
        }
        let mut kept = vec![false; n];
        for i in index::sample(rng, n, keep) {
            kept[i] = true;
        }
        removed.extend(
            pts.iter()
                .zip(&kept)
                .filter(|(_, &k)| !k)
                .map(|(&pi, _)| pi),
        );
    }
    let in_box: usize = members.iter().map(Vec::len).sum();
    let vetoed = !(in_box - removed.len() > n_p_min);
    if vetoed {
        removed.clear();
    }
    removed.sort_unstable();
    SparsifyPlan {
        selected_voxels,
        removed,
        vetoed,
    }
}

fn remove_points(cloud: &PointCloud, removed: &[usize]) -> PointCloud {
    let mut keep = vec![true; cloud.len()];
    for &i in removed {
        keep[i] = false;
    }
    cloud.retain_mask(&keep)
}

/// Order dropout on a single voxelized box, returning the decision alongside.
pub fn order_dropout_with_plan<R: Rng>(
    grid: &BoxVoxelGrid,
    cloud: &PointCloud,
    p: f64,
    n_p_min: usize,
    direction: Direction,
    rng: &mut R,
) -> (PointCloud, OrderDropoutPlan) {
    let plan = plan_order_dropout(
        &grid.box3d,
        &grid.voxel_centers,
        &grid.points_per_voxel(),
        p,
        n_p_min,
        direction,
        rng,
    );
    (remove_points(cloud, &plan.removed), plan)
}

/// Removes the points of a contiguous angular run of voxels.
///
/// The number of voxels dropped is the number of successes of a per-voxel
/// Bernoulli(`p`) draw; the run starts at the first voxel of the traversal.
/// Survivors keep their input order. Nothing is removed when fewer than
/// `n_p_min + 1` in-box points would remain.
pub fn voxel_order_dropout<R: Rng>(
    grid: &BoxVoxelGrid,
    cloud: &PointCloud,
    p: f64,
    n_p_min: usize,
    direction: Direction,
    rng: &mut R,
) -> PointCloud {
    order_dropout_with_plan(grid, cloud, p, n_p_min, direction, rng).0
}

pub fn sparsify_with_plan<R: Rng>(
    grid: &BoxVoxelGrid,
    cloud: &PointCloud,
    p: f64,
    keep_ratio: f64,
    n_p_min: usize,
    rng: &mut R,
) -> (PointCloud, SparsifyPlan) {
    let plan = plan_sparsify(&grid.points_per_voxel(), p, keep_ratio, n_p_min, rng);
    (remove_points(cloud, &plan.removed), plan)
}

/// Subsamples each selected voxel to `ceil(n · keep_ratio)` points (at least one).
pub fn voxel_sparsify<R: Rng>(
    grid: &BoxVoxelGrid,
    cloud: &PointCloud,
    p: f64,
    keep_ratio: f64,
    n_p_min: usize,
    rng: &mut R,
) -> PointCloud {
    sparsify_with_plan(grid, cloud, p, keep_ratio, n_p_min, rng).0
}

/// Per-box outcome of [`augment_scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoxReport {
    pub index: usize,
    pub p: f64,
    /// Unlabeled box below `tau_aug`; nothing was drawn or changed.
    pub skipped: bool,
    /// At least one voxel was selected by some operation and its guard let it act.
    pub applied: bool,
    pub points_before: usize,
    pub points_after: usize,
    pub sparsify: Option<SparsifyPlan>,
    pub dropout: Option<OrderDropoutPlan>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentReport {
    pub boxes: Vec<BoxReport>,
    pub points_in: usize,
    pub points_out: usize,
}

/// How [`augment_scene_with`] schedules the per-box point scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

/// Augments every eligible box of a scene.
///
/// Labeled scenes treat every box as eligible. For unlabeled scenes a box
/// is skipped when its score is below `tau_aug`. Boxes are processed in
/// input order; a point removed by an earlier box is absent for later ones.
pub fn augment_scene(
    cloud: &PointCloud,
    labels: &[PseudoLabel],
    labeled_mode: bool,
    cfg: &AugmentConfig,
) -> Result<(PointCloud, AugmentReport)> {
    augment_scene_with(cloud, labels, labeled_mode, cfg, Execution::default())
}

pub fn augment_scene_with(
    cloud: &PointCloud,
    labels: &[PseudoLabel],
    labeled_mode: bool,
    cfg: &AugmentConfig,
    execution: Execution,
) -> Result<(PointCloud, AugmentReport)> {
    cfg.validate()?;
    let eligible: Vec<bool> = labels
        .iter()
        .map(|l| labeled_mode || l.score >= cfg.tau_aug)
        .collect();

    let index = if eligible.iter().any(|&e| e) {
        BevIndex::build(cloud)
    } else {
        BevIndex::default()
    };
    // Voxel membership against the input cloud does not depend on earlier
    // removals, so it can be computed for all boxes at once.
    let scan = |(label, &ok): (&PseudoLabel, &bool)| -> Vec<(u32, u32)> {
        if !ok {
            return Vec::new();
        }
        let binner = BoxBinner::new(&label.box3d, cfg.grid);
        let points = cloud.points();
        index
            .candidates(&label.box3d)
            .into_iter()
            .filter_map(|i| binner.voxel_of(&points[i as usize]).map(|v| (i, v as u32)))
            .collect()
    };
    let memberships: Vec<Vec<(u32, u32)>> = match execution {
        Execution::Sequential => labels.iter().zip(&eligible).map(scan).collect(),
        Execution::Parallel => labels.par_iter().zip(&eligible).map(scan).collect(),
    };

    let mut alive = vec![true; cloud.len()];
    let mut reports = Vec::with_capacity(labels.len());
    for (k, label) in labels.iter().enumerate() {
        let b = &label.box3d;
        let c = b.center();
        let p = decay_probability([c[0], c[1]], cfg);
        let mut members = vec![Vec::new(); cfg.grid.voxel_count()];
        for &(pi, vi) in &memberships[k] {
            if alive[pi as usize] {
                members[vi as usize].push(pi as usize);
            }
        }
        let points_before: usize = members.iter().map(Vec::len).sum();
        if !eligible[k] {
            reports.push(BoxReport {
                index: k,
                p,
                skipped: true,
                applied: false,
                points_before,
                points_after: points_before,
                sparsify: None,
                dropout: None,
            });
            continue;
        }

        let mut rng = box_rng(cfg.seed, k);
        let mut applied = false;
        let mut sparsify = None;
        let mut dropout = None;
        if matches!(cfg.mode, AugmentMode::Sparsify | AugmentMode::Both) {
            let plan = plan_sparsify(&members, p, cfg.sparsify_keep_ratio, cfg.n_p_min, &mut rng);
            applied |= !plan.vetoed && !plan.selected_voxels.is_empty();
            kill(&mut alive, &mut members, &plan.removed);
            sparsify = Some(plan);
        }
        if matches!(cfg.mode, AugmentMode::OrderDropout | AugmentMode::Both) {
            let direction = if rng.gen::<bool>() {
                Direction::Counterclockwise
            } else {
                Direction::Clockwise
            };
            let centers = voxel_centers(b, cfg.grid);
            let plan =
                plan_order_dropout(b, &centers, &members, p, cfg.n_p_min, direction, &mut rng);
            applied |= !plan.vetoed && plan.selected > 0;
            kill(&mut alive, &mut members, &plan.removed);
            dropout = Some(plan);
        }
        let points_after = members.iter().map(Vec::len).sum();
        reports.push(BoxReport {
            index: k,
            p,
            skipped: false,
            applied,
            points_before,
            points_after,
            sparsify,
            dropout,
        });
    }

    let out = cloud.retain_mask(&alive);
    let report = AugmentReport {
        boxes: reports,
        points_in: cloud.len(),
        points_out: out.len(),
    };
    Ok((out, report))
}

/// Uniform BEV bucketing of point indices, used to avoid testing every
/// point against every box.
#[derive(Debug, Default)]
struct BevIndex {
    x0: f64,
    y0: f64,
    size: f64,
    nx: usize,
    ny: usize,
    /// Offsets into `items`, one per cell plus a sentinel.
    starts: Vec<u32>,
    /// Point indices grouped by cell, ascending within a cell.
    items: Vec<u32>,
}

impl BevIndex {
    const MAX_CELLS_PER_AXIS: f64 = 512.0;
    const MIN_CELL: f64 = 1.0;

    fn build(cloud: &PointCloud) -> Self {
        let pts = cloud.points();
        if pts.is_empty() {
            return Self::default();
        }
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in pts {
            x0 = x0.min(p.x as f64);
            x1 = x1.max(p.x as f64);
            y0 = y0.min(p.y as f64);
            y1 = y1.max(p.y as f64);
        }
        let size = ((x1 - x0).max(y1 - y0) / Self::MAX_CELLS_PER_AXIS).max(Self::MIN_CELL);
        let nx = ((x1 - x0) / size) as usize + 1;
        let ny = ((y1 - y0) / size) as usize + 1;
        let mut index = Self {
            x0,
            y0,
            size,
            nx,
            ny,
            starts: vec![0; nx * ny + 1],
            items: vec![0; pts.len()],
        };
        let cells: Vec<usize> = pts
            .iter()
            .map(|p| index.cell(p.x as f64, p.y as f64))
            .collect();
        for &c in &cells {
            index.starts[c + 1] += 1;
        }
        for c in 0..nx * ny {
            index.starts[c + 1] += index.starts[c];
        }
        let mut fill = index.starts.clone();
        for (i, &c) in cells.iter().enumerate() {
            index.items[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        index
    }

    fn axis(&self, v: f64, origin: f64, n: usize) -> usize {
        (((v - origin) / self.size).floor().max(0.0) as usize).min(n - 1)
    }

    fn cell(&self, x: f64, y: f64) -> usize {
        self.axis(y, self.y0, self.ny) * self.nx + self.axis(x, self.x0, self.nx)
    }

    /// Ascending indices of every point that may lie in `b`'s footprint.
    fn candidates(&self, b: &Box3D) -> Vec<u32> {
        if self.items.is_empty() {
            return Vec::new();
        }
        let c = b.center();
        // one extra cell each side absorbs rounding at cell edges
        let r = (b.length() / 2.0).hypot(b.width() / 2.0) + self.size;
        let (ix0, ix1) = (
            self.axis(c[0] - r, self.x0, self.nx),
            self.axis(c[0] + r, self.x0, self.nx),
        );
        let (iy0, iy1) = (
            self.axis(c[1] - r, self.y0, self.ny),
            self.axis(c[1] + r, self.y0, self.ny),
        );
        let mut out = Vec::new();
        for iy in iy0..=iy1 {
            let row = iy * self.nx;
            let (lo, hi) = (
                self.starts[row + ix0] as usize,
                self.starts[row + ix1 + 1] as usize,
            );
            out.extend_from_slice(&self.items[lo..hi]);
        }
        out.sort_unstable();
        out
    }
}

/// Marks `removed` dead and drops them from the voxel lists.
fn kill(alive: &mut [bool], members: &mut [Vec<usize>], removed: &[usize]) {
    if removed.is_empty() {
        return;
    }
    for &i in removed {
        alive[i] = false;
    }
    for m in members.iter_mut() {
        m.retain(|&i| alive[i]);
    }
}
