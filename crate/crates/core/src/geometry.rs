//! Oriented boxes, bird's-eye-view projection, keypoints and per-box voxel
//! partitioning.
//!
//! Box canonical frame: `+x` points to the front of the box (along its
//! length), `+y` to its left (along its width), `+z` up. Yaw rotates the
//! canonical frame counterclockwise about the vertical axis.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A single LiDAR return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl Point {
    pub const fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Self { x, y, z, intensity }
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }

    /// Bitwise identity, used where equality must hold byte-for-byte.
    pub fn bits(&self) -> [u32; 4] {
        [
            self.x.to_bits(),
            self.y.to_bits(),
            self.z.to_bits(),
            self.intensity.to_bits(),
        ]
    }
}

/// An ordered collection of points with finite coordinates.
///
/// Order carries no geometric meaning; it only gives each point a stable
/// identity for deterministic sampling.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinitePoint { index: i });
        }
        Ok(Self { points })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a cloud from points already known to be finite, such as a
    /// subset of another cloud.
    pub(crate) fn from_trusted(points: Vec<Point>) -> Self {
        debug_assert!(points.iter().all(Point::is_finite));
        Self { points }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    /// Keeps the points whose flag is set, preserving input order.
    pub fn retain_mask(&self, keep: &[bool]) -> PointCloud {
        assert_eq!(keep.len(), self.points.len(), "mask length mismatch");
        let points = self
            .points
            .iter()
            .zip(keep)
            .filter_map(|(p, &k)| k.then_some(*p))
            .collect();
        Self::from_trusted(points)
    }

    /// True when both clouds hold the same points in the same order, bit for bit.
    pub fn bitwise_eq(&self, other: &PointCloud) -> bool {
        self.points.len() == other.points.len()
            && self
                .points
                .iter()
                .zip(&other.points)
                .all(|(a, b)| a.bits() == b.bits())
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut t = theta % (2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    } else if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

#[inline]
pub(crate) fn rotate2(x: f64, y: f64, cos: f64, sin: f64) -> (f64, f64) {
    (x * cos - y * sin, x * sin + y * cos)
}

/// Oriented 3D bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    center: [f64; 3],
    dims: [f64; 3],
    yaw: f64,
}

impl Box3D {
    /// `dims` is `(length, width, height)`; yaw is normalized into `(-π, π]`.
    pub fn new(center: [f64; 3], dims: [f64; 3], yaw: f64) -> Result<Self> {
        if center.iter().chain(&dims).any(|v| !v.is_finite()) || !yaw.is_finite() {
            return Err(Error::InvalidBox("non-finite parameter".into()));
        }
        if dims.iter().any(|&d| d <= 0.0) {
            return Err(Error::InvalidBox(format!(
                "dimensions must be positive, got {dims:?}"
            )));
        }
        Ok(Self {
            center,
            dims,
            yaw: normalize_angle(yaw),
        })
    }

    pub fn center(&self) -> [f64; 3] {
        self.center
    }

    pub fn dims(&self) -> [f64; 3] {
        self.dims
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn length(&self) -> f64 {
        self.dims[0]
    }

    pub fn width(&self) -> f64 {
        self.dims[1]
    }

    pub fn height(&self) -> f64 {
        self.dims[2]
    }

    /// Distance of the box center from the sensor origin in the ground plane.
    pub fn bev_range(&self) -> f64 {
        self.center[0].hypot(self.center[1])
    }

    /// Maps a world point into the box canonical frame.
    pub fn to_canonical(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let (x, y) = rotate2(dx, dy, c, -s);
        [x, y, p[2] - self.center[2]]
    }

    /// Maps a canonical-frame point back into the world frame.
    pub fn to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let (x, y) = rotate2(p[0], p[1], c, s);
        [
            x + self.center[0],
            y + self.center[1],
            p[2] + self.center[2],
        ]
    }

    /// The eight corners: bottom face first, then top face, each in the
    /// order front-right, rear-right, rear-left, front-left.
    pub fn corners(&self) -> [[f64; 3]; 8] {
        let [hl, hw, hh] = self.dims.map(|d| d / 2.0);
        let face = [(hl, -hw), (-hl, -hw), (-hl, hw), (hl, hw)];
        let mut out = [[0.0; 3]; 8];
        for (k, z) in [-hh, hh].into_iter().enumerate() {
            for (j, (x, y)) in face.iter().enumerate() {
                out[k * 4 + j] = self.to_world([*x, *y, z]);
            }
        }
        out
    }

    /// Returns this box rigidly moved: rotated by `angle` about the world
    /// origin, then translated.
    pub fn transformed(&self, angle: f64, translation: [f64; 3]) -> Box3D {
        let (s, c) = angle.sin_cos();
        let (x, y) = rotate2(self.center[0], self.center[1], c, s);
        Box3D {
            center: [
                x + translation[0],
                y + translation[1],
                self.center[2] + translation[2],
            ],
            dims: self.dims,
            yaw: normalize_angle(self.yaw + angle),
        }
    }
}

/// Bird's-eye-view rectangle of a [`Box3D`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevBox {
    center: [f64; 2],
    dims: [f64; 2],
    yaw: f64,
    corners: [[f64; 2]; 4],
}

impl BevBox {
    pub fn new(center: [f64; 2], dims: [f64; 2], yaw: f64) -> Result<Self> {
        if center.iter().chain(&dims).any(|v| !v.is_finite()) || !yaw.is_finite() {
            return Err(Error::InvalidBox("non-finite parameter".into()));
        }
        if dims[0] <= 0.0 || dims[1] <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "BEV dimensions must be positive, got {dims:?}"
            )));
        }
        Ok(Self::from_parts(center, dims, yaw))
    }

    fn from_parts(center: [f64; 2], dims: [f64; 2], yaw: f64) -> Self {
        let corners = bev_corners(center, dims, yaw);
        Self {
            center,
            dims,
            yaw,
            corners,
        }
    }

    pub fn center(&self) -> [f64; 2] {
        self.center
    }

    pub fn dims(&self) -> [f64; 2] {
        self.dims
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn area(&self) -> f64 {
        self.dims[0] * self.dims[1]
    }

    /// Corners in the order front-right, rear-right, rear-left, front-left.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        self.corners
    }

    /// Maps a canonical-frame BEV point into the world frame.
    pub fn to_world(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        let (x, y) = rotate2(p[0], p[1], c, s);
        [x + self.center[0], y + self.center[1]]
    }
}

fn bev_corners(center: [f64; 2], dims: [f64; 2], yaw: f64) -> [[f64; 2]; 4] {
    let (s, c) = yaw.sin_cos();
    let (hl, hw) = (dims[0] / 2.0, dims[1] / 2.0);
    [(hl, -hw), (-hl, -hw), (-hl, hw), (hl, hw)].map(|(x, y)| {
        let (rx, ry) = rotate2(x, y, c, s);
        [rx + center[0], ry + center[1]]
    })
}

pub fn project_to_bev(b: &Box3D) -> BevBox {
    BevBox::from_parts([b.center[0], b.center[1]], [b.dims[0], b.dims[1]], b.yaw)
}

/// Number of keypoints per object.
pub const NUM_KEYPOINTS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeypointKind {
    Center,
    EdgeMidpoint,
    Corner,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub kind: KeypointKind,
}

/// Canonical keypoint layout as `(x in half-lengths, y in half-widths, kind)`.
///
/// Order: center; edge midpoints front, right, rear, left; corners
/// front-right, rear-right, rear-left, front-left.
const CANONICAL_KEYPOINTS: [(f64, f64, KeypointKind); NUM_KEYPOINTS] = [
    (0.0, 0.0, KeypointKind::Center),
    (1.0, 0.0, KeypointKind::EdgeMidpoint),
    (0.0, -1.0, KeypointKind::EdgeMidpoint),
    (-1.0, 0.0, KeypointKind::EdgeMidpoint),
    (0.0, 1.0, KeypointKind::EdgeMidpoint),
    (1.0, -1.0, KeypointKind::Corner),
    (-1.0, -1.0, KeypointKind::Corner),
    (-1.0, 1.0, KeypointKind::Corner),
    (1.0, 1.0, KeypointKind::Corner),
];

/// For each edge midpoint (indices 1..=4), the indices of its two adjacent corners.
pub const EDGE_ADJACENT_CORNERS: [(usize, usize); 4] = [(8, 5), (5, 6), (6, 7), (7, 8)];

/// The nine BEV keypoints of one object in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointSet {
    points: [Keypoint; NUM_KEYPOINTS],
}

impl KeypointSet {
    pub fn points(&self) -> &[Keypoint; NUM_KEYPOINTS] {
        &self.points
    }

    pub fn center(&self) -> Keypoint {
        self.points[0]
    }

    pub fn edge_midpoints(&self) -> &[Keypoint] {
        &self.points[1..5]
    }

    pub fn corners(&self) -> &[Keypoint] {
        &self.points[5..9]
    }

    pub fn xy(&self) -> [[f64; 2]; NUM_KEYPOINTS] {
        self.points.map(|k| [k.x, k.y])
    }

    /// Applies a rigid BEV motion (rotation by `angle` about `pivot`) to
    /// every keypoint, keeping the index correspondence.
    pub fn rotated_about(&self, pivot: [f64; 2], angle: f64) -> KeypointSet {
        let (s, c) = angle.sin_cos();
        let points = self.points.map(|k| {
            let (x, y) = rotate2(k.x - pivot[0], k.y - pivot[1], c, s);
            Keypoint {
                x: x + pivot[0],
                y: y + pivot[1],
                kind: k.kind,
            }
        });
        KeypointSet { points }
    }

    /// Applies an arbitrary map to every keypoint position, keeping kinds and order.
    pub fn map_xy(&self, mut f: impl FnMut([f64; 2]) -> [f64; 2]) -> KeypointSet {
        let points = self.points.map(|k| {
            let [x, y] = f([k.x, k.y]);
            Keypoint { x, y, kind: k.kind }
        });
        KeypointSet { points }
    }
}

pub fn extract_keypoints(b: &BevBox) -> KeypointSet {
    let (hl, hw) = (b.dims[0] / 2.0, b.dims[1] / 2.0);
    let points = CANONICAL_KEYPOINTS.map(|(u, v, kind)| {
        if kind == KeypointKind::Center {
            // exact: the rotation fixes the origin
            return Keypoint {
                x: b.center[0],
                y: b.center[1],
                kind,
            };
        }
        let [x, y] = b.to_world([u * hl, v * hw]);
        Keypoint { x, y, kind }
    });
    KeypointSet { points }
}

/// Voxel partition resolution along box length, width and height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridShape {
    pub n_l: usize,
    pub n_w: usize,
    pub n_h: usize,
}

impl GridShape {
    pub fn new(n_l: usize, n_w: usize, n_h: usize) -> Result<Self> {
        if n_l == 0 || n_w == 0 || n_h == 0 {
            return Err(Error::InvalidGrid { n_l, n_w, n_h });
        }
        Ok(Self { n_l, n_w, n_h })
    }

    pub fn voxel_count(&self) -> usize {
        self.n_l * self.n_w * self.n_h
    }

    /// Linear voxel index; length index varies slowest, height fastest.
    pub fn linear_index(&self, il: usize, iw: usize, ih: usize) -> usize {
        (il * self.n_w + iw) * self.n_h + ih
    }

    pub fn unravel(&self, index: usize) -> (usize, usize, usize) {
        let ih = index % self.n_h;
        let iw = (index / self.n_h) % self.n_w;
        let il = index / (self.n_h * self.n_w);
        (il, iw, ih)
    }
}

impl Default for GridShape {
    fn default() -> Self {
        Self {
            n_l: 4,
            n_w: 2,
            n_h: 1,
        }
    }
}

impl std::fmt::Display for GridShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.n_l, self.n_w, self.n_h)
    }
}

impl std::str::FromStr for GridShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(['x', 'X']).collect();
        let bad = || Error::Parse(format!("grid must look like LxWxH, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let mut n = [0usize; 3];
        for (slot, part) in n.iter_mut().zip(&parts) {
            *slot = part.trim().parse().map_err(|_| bad())?;
        }
        GridShape::new(n[0], n[1], n[2])
    }
}

/// Bins one canonical coordinate into `n` cells spanning `[-half, half]`.
/// Returns `None` outside the closed interval; the upper face lands in the last cell.
#[inline]
fn bin(coord: f64, half: f64, n: usize) -> Option<usize> {
    if !(coord.abs() <= half) {
        return None;
    }
    let cell = (2.0 * half) / n as f64;
    let idx = ((coord + half) / cell).floor();
    Some((idx.max(0.0) as usize).min(n - 1))
}

/// Precomputed transform for testing many points against one box.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BoxBinner {
    center: [f64; 3],
    half: [f64; 3],
    cos: f64,
    sin: f64,
    grid: GridShape,
    bev_radius: f64,
}

impl BoxBinner {
    pub(crate) fn new(b: &Box3D, grid: GridShape) -> Self {
        let (sin, cos) = b.yaw.sin_cos();
        let half = b.dims.map(|d| d / 2.0);
        Self {
            center: b.center,
            half,
            cos,
            sin,
            grid,
            bev_radius: half[0].hypot(half[1]),
        }
    }

    /// Voxel linear index of `p`, or `None` if it lies outside the box.
    #[inline]
    pub(crate) fn voxel_of(&self, p: &Point) -> Option<usize> {
        let dx = p.x as f64 - self.center[0];
        let dy = p.y as f64 - self.center[1];
        let dz = p.z as f64 - self.center[2];
        if dz.abs() > self.half[2] || dx.abs() > self.bev_radius || dy.abs() > self.bev_radius {
            return None;
        }
        let (x, y) = rotate2(dx, dy, self.cos, -self.sin);
        let il = bin(x, self.half[0], self.grid.n_l)?;
        let iw = bin(y, self.half[1], self.grid.n_w)?;
        let ih = bin(dz, self.half[2], self.grid.n_h)?;
        Some(self.grid.linear_index(il, iw, ih))
    }
}

/// World-frame voxel centers of `b` under `grid`, in linear index order.
pub fn voxel_centers(b: &Box3D, grid: GridShape) -> Vec<[f64; 3]> {
    let [l, w, h] = b.dims;
    let mut out = Vec::with_capacity(grid.voxel_count());
    for il in 0..grid.n_l {
        for iw in 0..grid.n_w {
            for ih in 0..grid.n_h {
                let cx = -l / 2.0 + (il as f64 + 0.5) * l / grid.n_l as f64;
                let cy = -w / 2.0 + (iw as f64 + 0.5) * w / grid.n_w as f64;
                let cz = -h / 2.0 + (ih as f64 + 0.5) * h / grid.n_h as f64;
                out.push(b.to_world([cx, cy, cz]));
            }
        }
    }
    out
}

/// A box partitioned into voxels, with every point of a cloud either
/// assigned to a voxel or listed as outside.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxVoxelGrid {
    pub box3d: Box3D,
    pub grid: GridShape,
    pub voxel_centers: Vec<[f64; 3]>,
    /// `(point index, voxel linear index)` for in-box points, ascending by point index.
    pub assignment: Vec<(usize, usize)>,
    pub outside_indices: Vec<usize>,
}

impl BoxVoxelGrid {
    pub fn voxel_count(&self) -> usize {
        self.grid.voxel_count()
    }

    pub fn in_box_count(&self) -> usize {
        self.assignment.len()
    }

    /// Point indices of each voxel, each list ascending.
    pub fn points_per_voxel(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.voxel_count()];
        for &(pi, vi) in &self.assignment {
            out[vi].push(pi);
        }
        out
    }
}

pub fn voxelize_box(b: &Box3D, cloud: &PointCloud, grid: GridShape) -> Result<BoxVoxelGrid> {
    let grid = GridShape::new(grid.n_l, grid.n_w, grid.n_h)?;
    let binner = BoxBinner::new(b, grid);
    let mut assignment = Vec::new();
    let mut outside_indices = Vec::new();
    for (i, p) in cloud.points().iter().enumerate() {
        match binner.voxel_of(p) {
            Some(v) => assignment.push((i, v)),
            None => outside_indices.push(i),
        }
    }
    Ok(BoxVoxelGrid {
        box3d: *b,
        grid,
        voxel_centers: voxel_centers(b, grid),
        assignment,
        outside_indices,
    })
}
