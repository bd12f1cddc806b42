//! Keypoint relation supervision between a teacher and a student BEV
//! feature map.
//!
//! For every object, features are read at its nine keypoints from both maps.
//! The student relation matrix pairs student rows with teacher columns,
//! `M_s[i][j] = cos(f_s[i], f_t[j])`; the teacher matrix is
//! `M_t[i][j] = cos(f_t[i], f_t[j])`. The per-object loss is the mean
//! absolute difference of the two matrices, and objects are combined by a
//! score-weighted sum.

use crate::error::{Error, Result};
use crate::geometry::KeypointSet;

/// Floor on `‖u‖·‖v‖` inside the cosine.
pub const DEFAULT_EPSILON_NORM: f64 = 1e-8;

/// Axis-aligned world rectangle, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extent {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Extent {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let e = Self {
            x_min,
            x_max,
            y_min,
            y_max,
        };
        if ![x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite())
            || x_max <= x_min
            || y_max <= y_min
        {
            return Err(Error::InvalidFeatureMap(format!("degenerate extent {e:?}")));
        }
        Ok(e)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn overlaps(&self, other: &Extent) -> bool {
        self.x_min < other.x_max
            && other.x_min < self.x_max
            && self.y_min < other.y_max
            && other.y_min < self.y_max
    }
}

/// Dense `H × W × C` grid over a world rectangle. Rows run along `y`,
/// columns along `x`; cell `(r, c)` is centered at
/// `(x_min + (c + ½)·res_x, y_min + (r + ½)·res_y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    extent: Extent,
    values: Vec<f64>,
}

/// One bilinear tap: a cell and its interpolation weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub row: usize,
    pub col: usize,
    pub weight: f64,
}

/// Continuous coordinates this close to an integer are snapped onto it, so
/// sampling at a cell center reads that cell exactly.
const SNAP: f64 = 1e-9;

fn snap(u: f64) -> f64 {
    let r = u.round();
    if (u - r).abs() < SNAP {
        r
    } else {
        u
    }
}

/// Lower index, upper index and fraction along one axis of `n` cells.
fn axis_taps(u: f64, n: usize) -> (usize, usize, f64) {
    let last = (n - 1) as f64;
    if u <= 0.0 {
        (0, 0, 0.0)
    } else if u >= last {
        (n - 1, n - 1, 0.0)
    } else {
        let lo = u.floor();
        (lo as usize, lo as usize + 1, u - lo)
    }
}

impl FeatureMap {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        extent: Extent,
        values: Vec<f64>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidFeatureMap(format!(
                "empty shape {height}x{width}x{channels}"
            )));
        }
        Extent::new(extent.x_min, extent.x_max, extent.y_min, extent.y_max)?;
        if values.len() != height * width * channels {
            return Err(Error::InvalidFeatureMap(format!(
                "expected {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidFeatureMap("non-finite value".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            extent,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize, extent: Extent) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            extent,
            vec![0.0; height * width * channels],
        )
    }

    /// Builds a map by evaluating `f(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        extent: Extent,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    values.push(f(r, c, ch));
                }
            }
        }
        Self::new(height, width, channels, extent, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Meters per cell along `x` and `y`.
    pub fn resolution(&self) -> (f64, f64) {
        (
            self.extent.width() / self.width as f64,
            self.extent.height() / self.height as f64,
        )
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.values[start..start + self.channels]
    }

    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        let (rx, ry) = self.resolution();
        [
            self.extent.x_min + (col as f64 + 0.5) * rx,
            self.extent.y_min + (row as f64 + 0.5) * ry,
        ]
    }

    /// Bilinear taps for world point `(x, y)`, or `None` outside the extent.
    /// Points in the outer half-cell border clamp to the edge cells.
    pub fn taps(&self, x: f64, y: f64) -> Option<[Tap; 4]> {
        if !self.extent.contains(x, y) {
            return None;
        }
        let (rx, ry) = self.resolution();
        let u = snap((x - self.extent.x_min) / rx - 0.5);
        let v = snap((y - self.extent.y_min) / ry - 0.5);
        let (c0, c1, fu) = axis_taps(u, self.width);
        let (r0, r1, fv) = axis_taps(v, self.height);
        Some([
            Tap {
                row: r0,
                col: c0,
                weight: (1.0 - fu) * (1.0 - fv),
            },
            Tap {
                row: r0,
                col: c1,
                weight: fu * (1.0 - fv),
            },
            Tap {
                row: r1,
                col: c0,
                weight: (1.0 - fu) * fv,
            },
            Tap {
                row: r1,
                col: c1,
                weight: fu * fv,
            },
        ])
    }

    /// Bilinear read at a world point; `None` outside the extent.
    pub fn sample(&self, x: f64, y: f64) -> Option<Vec<f64>> {
        let taps = self.taps(x, y)?;
        let mut out = vec![0.0; self.channels];
        for t in taps {
            if t.weight == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.cell(t.row, t.col)) {
                *o += t.weight * v;
            }
        }
        Some(out)
    }
}

/// Resamples `map` onto a target grid by bilinear interpolation at each
/// target cell center. Target cells outside the source extent read zero.
pub fn align_feature_map(
    map: &FeatureMap,
    target_extent: Extent,
    target_shape: (usize, usize),
) -> Result<FeatureMap> {
    let target_extent = Extent::new(
        target_extent.x_min,
        target_extent.x_max,
        target_extent.y_min,
        target_extent.y_max,
    )?;
    if !map.extent.overlaps(&target_extent) {
        return Err(Error::DisjointExtent);
    }
    let (h, w) = target_shape;
    if (h, w) == (map.height, map.width) && target_extent == map.extent {
        return Ok(map.clone());
    }
    let mut out = FeatureMap::zeros(h, w, map.channels, target_extent)?;
    for r in 0..h {
        for c in 0..w {
            let [x, y] = out.cell_center(r, c);
            if let Some(v) = map.sample(x, y) {
                let start = (r * w + c) * map.channels;
                out.values[start..start + map.channels].copy_from_slice(&v);
            }
        }
    }
    Ok(out)
}

/// `k` feature vectors of length `c`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFeatures {
    k: usize,
    c: usize,
    data: Vec<f64>,
}

impl KeypointFeatures {
    pub fn new(k: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != k * c {
            return Err(Error::ShapeMismatch(format!(
                "{k}x{c} features need {} values, got {}",
                k * c,
                data.len()
            )));
        }
        Ok(Self { k, c, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::ShapeMismatch("ragged feature rows".into()));
        }
        Ok(Self {
            k: rows.len(),
            c,
            data: rows.concat(),
        })
    }

    pub fn zeros(k: usize, c: usize) -> Self {
        Self {
            k,
            c,
            data: vec![0.0; k * c],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.c..(i + 1) * self.c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.c..(i + 1) * self.c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Features read at one object's keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFeatures {
    pub features: KeypointFeatures,
    /// Set for keypoints outside the map extent; their vectors are zero.
    pub out_of_bounds: Vec<bool>,
}

pub fn sample_features(map: &FeatureMap, keypoints: &KeypointSet) -> SampledFeatures {
    sample_points(map, &keypoints.xy())
}

/// Bilinear reads at arbitrary world points.
pub fn sample_points(map: &FeatureMap, points: &[[f64; 2]]) -> SampledFeatures {
    let mut features = KeypointFeatures::zeros(points.len(), map.channels);
    let mut out_of_bounds = Vec::with_capacity(points.len());
    for (i, &[x, y]) in points.iter().enumerate() {
        match map.sample(x, y) {
            Some(v) => {
                features.row_mut(i).copy_from_slice(&v);
                out_of_bounds.push(false);
            }
            None => out_of_bounds.push(true),
        }
    }
    SampledFeatures {
        features,
        out_of_bounds,
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `⟨u, v⟩ / max(‖u‖·‖v‖, epsilon_norm)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &[f64], v: &[f64], epsilon_norm: f64) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let d = dot(u, v);
    let n = dot(u, u).sqrt() * dot(v, v).sqrt();
    (d / n.max(epsilon_norm)).clamp(-1.0, 1.0)
}

/// Gradient of [`cosine_similarity`] with respect to `u`, added into `out`
/// after scaling by `scale`. Zero where the clamp is active.
fn add_cosine_grad(u: &[f64], v: &[f64], epsilon_norm: f64, scale: f64, out: &mut [f64]) {
    let d = dot(u, v);
    let uu = dot(u, u);
    let n = uu.sqrt() * dot(v, v).sqrt();
    if n > epsilon_norm {
        let raw = d / n;
        if raw.abs() > 1.0 {
            return;
        }
        let k = d / (uu * n);
        for ((o, a), b) in out.iter_mut().zip(u).zip(v) {
            *o += scale * (b / n - k * a);
        }
    } else {
        if (d / epsilon_norm).abs() > 1.0 {
            return;
        }
        for (o, b) in out.iter_mut().zip(v) {
            *o += scale * b / epsilon_norm;
        }
    }
}

/// `K × K` matrix of pairwise cosines.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationMatrix {
    k: usize,
    values: Vec<f64>,
}

impl RelationMatrix {
    pub fn new(k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != k * k {
            return Err(Error::ShapeMismatch(format!(
                "{k}x{k} relation matrix needs {} values, got {}",
                k * k,
                values.len()
            )));
        }
        Ok(Self { k, values })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.k + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Which features the student relation matrix pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RelationPairing {
    /// `cos(f_s[i], f_t[j])`.
    #[default]
    StudentTeacher,
    /// `cos(f_s[i], f_s[j])`.
    StudentStudent,
}

fn check_pair(a: &KeypointFeatures, b: &KeypointFeatures) -> Result<()> {
    if a.k != b.k || a.c != b.c {
        return Err(Error::ShapeMismatch(format!(
            "features {}x{} vs {}x{}",
            a.k, a.c, b.k, b.c
        )));
    }
    Ok(())
}

/// `M[i][j] = cos(rows[i], cols[j])`.
pub fn relation_matrix(
    rows: &KeypointFeatures,
    cols: &KeypointFeatures,
    epsilon_norm: f64,
) -> Result<RelationMatrix> {
    check_pair(rows, cols)?;
    let k = rows.k;
    let mut values = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            values.push(cosine_similarity(rows.row(i), cols.row(j), epsilon_norm));
        }
    }
    Ok(RelationMatrix { k, values })
}

pub fn relation_matrix_student(
    f_s: &KeypointFeatures,
    f_t: &KeypointFeatures,
) -> Result<RelationMatrix> {
    relation_matrix(f_s, f_t, DEFAULT_EPSILON_NORM)
}

pub fn relation_matrix_teacher(f_t: &KeypointFeatures) -> Result<RelationMatrix> {
    relation_matrix(f_t, f_t, DEFAULT_EPSILON_NORM)
}

/// Mean absolute entrywise difference.
pub fn relation_loss(m_s: &RelationMatrix, m_t: &RelationMatrix) -> Result<f64> {
    if m_s.k != m_t.k {
        return Err(Error::ShapeMismatch(format!(
            "relation matrices {} vs {}",
            m_s.k, m_t.k
        )));
    }
    if m_s.k == 0 {
        return Ok(0.0);
    }
    let sum: f64 = m_s
        .values
        .iter()
        .zip(&m_t.values)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(sum / (m_s.k * m_s.k) as f64)
}

/// `Σ s_k · L_k` over objects with `s_k ≥ score_threshold`, summed in input order.
pub fn weighted_grs_loss(per_object: &[(f64, f64)], score_threshold: f64) -> f64 {
    per_object
        .iter()
        .filter(|(s, _)| *s >= score_threshold)
        .map(|(s, l)| s * l)
        .sum()
}

pub fn total_loss(l_base: f64, l_grs: f64, lambda_1: f64) -> f64 {
    l_base + lambda_1 * l_grs
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrsConfig {
    pub lambda_1: f64,
    pub score_threshold: f64,
    pub epsilon_norm: f64,
    pub pairing: RelationPairing,
}

impl Default for GrsConfig {
    fn default() -> Self {
        Self {
            lambda_1: 2.0,
            score_threshold: 0.3,
            epsilon_norm: DEFAULT_EPSILON_NORM,
            pairing: RelationPairing::StudentTeacher,
        }
    }
}

impl GrsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_1 >= 0.0 && self.lambda_1.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda_1 must be non-negative, got {}",
                self.lambda_1
            )));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::InvalidConfig(format!(
                "score_threshold must lie in [0, 1], got {}",
                self.score_threshold
            )));
        }
        if !(self.epsilon_norm > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon_norm must be positive, got {}",
                self.epsilon_norm
            )));
        }
        Ok(())
    }

    pub fn student_matrix(
        &self,
        f_s: &KeypointFeatures,
        f_t: &KeypointFeatures,
    ) -> Result<RelationMatrix> {
        match self.pairing {
            RelationPairing::StudentTeacher => relation_matrix(f_s, f_t, self.epsilon_norm),
            RelationPairing::StudentStudent => {
                check_pair(f_s, f_t)?;
                relation_matrix(f_s, f_s, self.epsilon_norm)
            }
        }
    }

    pub fn teacher_matrix(&self, f_t: &KeypointFeatures) -> Result<RelationMatrix> {
        relation_matrix(f_t, f_t, self.epsilon_norm)
    }
}

/// One object's student and teacher keypoint features with its score.
#[derive(Debug, Clone, Copy)]
pub struct ObjectFeatures<'a> {
    pub student: &'a KeypointFeatures,
    pub teacher: &'a KeypointFeatures,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrsEvaluation {
    /// Weighted loss over included objects.
    pub loss: f64,
    /// Unweighted relation loss of every object, included or not.
    pub per_object: Vec<f64>,
    pub included: Vec<bool>,
    /// Gradient with respect to each object's student features.
    pub grads: Vec<KeypointFeatures>,
}

/// Weighted relation loss and its exact gradient with respect to the
/// student features; teacher features are constants. The subgradient of
/// `|x|` at zero is taken as zero.
pub fn grs_gradient(objects: &[ObjectFeatures<'_>], cfg: &GrsConfig) -> Result<GrsEvaluation> {
    cfg.validate()?;
    let mut per_object = Vec::with_capacity(objects.len());
    let mut included = Vec::with_capacity(objects.len());
    let mut grads = Vec::with_capacity(objects.len());
    let mut weighted = Vec::with_capacity(objects.len());
    for obj in objects {
        check_pair(obj.student, obj.teacher)?;
        let (k, c) = (obj.student.k, obj.student.c);
        let m_s = cfg.student_matrix(obj.student, obj.teacher)?;
        let m_t = cfg.teacher_matrix(obj.teacher)?;
        let l = relation_loss(&m_s, &m_t)?;
        let take = obj.score >= cfg.score_threshold;
        per_object.push(l);
        included.push(take);
        weighted.push((obj.score, l));

        let mut g = KeypointFeatures::zeros(k, c);
        if take && obj.score != 0.0 && k > 0 {
            let w = obj.score / (k * k) as f64;
            for i in 0..k {
                for j in 0..k {
                    let diff = m_s.get(i, j) - m_t.get(i, j);
                    if diff == 0.0 {
                        continue;
                    }
                    let scale = w * diff.signum();
                    match cfg.pairing {
                        RelationPairing::StudentTeacher => add_cosine_grad(
                            obj.student.row(i),
                            obj.teacher.row(j),
                            cfg.epsilon_norm,
                            scale,
                            g.row_mut(i),
                        ),
                        RelationPairing::StudentStudent => {
                            let (a, b) = (obj.student.row(i), obj.student.row(j));
                            let mut gi = vec![0.0; c];
                            let mut gj = vec![0.0; c];
                            add_cosine_grad(a, b, cfg.epsilon_norm, scale, &mut gi);
                            add_cosine_grad(b, a, cfg.epsilon_norm, scale, &mut gj);
                            for (o, v) in g.row_mut(i).iter_mut().zip(&gi) {
                                *o += v;
                            }
                            for (o, v) in g.row_mut(j).iter_mut().zip(&gj) {
                                *o += v;
                            }
                        }
                    }
                }
            }
        }
        grads.push(g);
    }
    Ok(GrsEvaluation {
        loss: weighted_grs_loss(&weighted, cfg.score_threshold),
        per_object,
        included,
        grads,
    })
}

/// Relation matrices and loss of one object read from a pair of maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRelation {
    pub score: f64,
    pub included: bool,
    pub l_delta: f64,
    pub student: RelationMatrix,
    pub teacher: RelationMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapEvaluation {
    pub l_grs: f64,
    pub objects: Vec<ObjectRelation>,
}

/// Aligns the student map onto the teacher's grid, then scores every
/// labeled box by its keypoint relations.
pub fn evaluate_feature_maps(
    teacher: &FeatureMap,
    student: &FeatureMap,
    labels: &[crate::augment::PseudoLabel],
    cfg: &GrsConfig,
) -> Result<MapEvaluation> {
    cfg.validate()?;
    if teacher.channels != student.channels {
        return Err(Error::ShapeMismatch(format!(
            "teacher has {} channels, student {}",
            teacher.channels, student.channels
        )));
    }
    let student = align_feature_map(student, teacher.extent, (teacher.height, teacher.width))?;
    let mut objects = Vec::with_capacity(labels.len());
    let mut weighted = Vec::with_capacity(labels.len());
    for label in labels {
        let kp = crate::geometry::extract_keypoints(&crate::geometry::project_to_bev(&label.box3d));
        let f_t = sample_features(teacher, &kp).features;
        let f_s = sample_features(&student, &kp).features;
        let m_s = cfg.student_matrix(&f_s, &f_t)?;
        let m_t = cfg.teacher_matrix(&f_t)?;
        let l_delta = relation_loss(&m_s, &m_t)?;
        weighted.push((label.score, l_delta));
        objects.push(ObjectRelation {
            score: label.score,
            included: label.score >= cfg.score_threshold,
            l_delta,
            student: m_s,
            teacher: m_t,
        });
    }
    Ok(MapEvaluation {
        l_grs: weighted_grs_loss(&weighted, cfg.score_threshold),
        objects,
    })
}
