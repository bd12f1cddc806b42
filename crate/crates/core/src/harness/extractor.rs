//! A linear stand-in for a BEV detector backbone.
//!
//! Points are binned into a fixed BEV grid; each cell is summarized by
//! [`NUM_STATS`] statistics, and a learnable affine map turns the statistics
//! into `C` feature channels. The student additionally owns a `C × C`
//! adapter applied after the affine map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::grs::{Extent, FeatureMap};

/// Statistics per cell: scaled point count, mean height, mean intensity, occupancy.
pub const NUM_STATS: usize = 4;

/// Points per cell that map to a unit count statistic.
pub const COUNT_SCALE: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevGrid {
    pub extent: Extent,
    pub height: usize,
    pub width: usize,
}

/// Per-cell statistics of `cloud` as a [`NUM_STATS`]-channel map.
pub fn cell_statistics(cloud: &PointCloud, grid: &BevGrid) -> Result<FeatureMap> {
    let (h, w) = (grid.height, grid.width);
    let e = grid.extent;
    let rx = e.width() / w as f64;
    let ry = e.height() / h as f64;
    let mut count = vec![0usize; h * w];
    let mut z_sum = vec![0.0f64; h * w];
    let mut i_sum = vec![0.0f64; h * w];
    for p in cloud.points() {
        let (x, y) = (p.x as f64, p.y as f64);
        if !e.contains(x, y) {
            continue;
        }
        let col = (((x - e.x_min) / rx) as usize).min(w - 1);
        let row = (((y - e.y_min) / ry) as usize).min(h - 1);
        let cell = row * w + col;
        count[cell] += 1;
        z_sum[cell] += p.z as f64;
        i_sum[cell] += p.intensity as f64;
    }
    let mut values = Vec::with_capacity(h * w * NUM_STATS);
    for cell in 0..h * w {
        let n = count[cell];
        if n == 0 {
            values.extend_from_slice(&[0.0; NUM_STATS]);
        } else {
            let nf = n as f64;
            values.extend_from_slice(&[nf / COUNT_SCALE, z_sum[cell] / nf, i_sum[cell] / nf, 1.0]);
        }
    }
    FeatureMap::new(h, w, NUM_STATS, e, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyExtractor {
    grid: BevGrid,
    channels: usize,
    /// `C × NUM_STATS`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
    /// `C × C`, row-major; student only.
    adapter: Option<Vec<f64>>,
}

/// Gradient of a scalar loss with respect to every parameter of a [`ToyExtractor`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub adapter: Option<Vec<f64>>,
}

impl ToyExtractor {
    /// Parameters drawn uniformly from `[-init_scale, init_scale]`.
    pub fn random(
        grid: BevGrid,
        channels: usize,
        init_scale: f64,
        with_adapter: bool,
        seed: u64,
    ) -> Result<Self> {
        if channels == 0 || grid.height == 0 || grid.width == 0 {
            return Err(Error::InvalidConfig(
                "extractor needs a non-empty grid and channels".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    if init_scale > 0.0 {
                        rng.gen_range(-init_scale..=init_scale)
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let weights = draw(channels * NUM_STATS);
        let bias = draw(channels);
        Ok(Self {
            grid,
            channels,
            weights,
            bias,
            adapter: with_adapter.then(|| identity(channels)),
        })
    }

    /// A student with the same affine map as `self` and an identity adapter.
    pub fn student_copy(&self) -> Self {
        Self {
            adapter: Some(identity(self.channels)),
            ..self.clone()
        }
    }

    pub fn grid(&self) -> &BevGrid {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn adapter(&self) -> Option<&[f64]> {
        self.adapter.as_deref()
    }

    pub fn parameter_norm(&self) -> f64 {
        self.parameters().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn parameters(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .chain(&self.bias)
            .chain(self.adapter.iter().flatten())
            .copied()
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().all(f64::is_finite)
    }

    /// Affine map then adapter applied to one statistics vector. `mass` is
    /// the total interpolation weight behind `stats` (1 inside the map,
    /// 0 outside), which scales the bias.
    pub fn features_from_stats(&self, stats: &[f64], mass: f64) -> Vec<f64> {
        let pre = self.pre_adapter(stats, mass);
        match &self.adapter {
            Some(a) => mat_vec(a, &pre, self.channels),
            None => pre,
        }
    }

    fn pre_adapter(&self, stats: &[f64], mass: f64) -> Vec<f64> {
        (0..self.channels)
            .map(|c| {
                let row = &self.weights[c * NUM_STATS..(c + 1) * NUM_STATS];
                row.iter().zip(stats).map(|(w, s)| w * s).sum::<f64>() + self.bias[c] * mass
            })
            .collect()
    }

    /// Full feature map of a cloud.
    pub fn forward(&self, cloud: &PointCloud) -> Result<FeatureMap> {
        let stats = cell_statistics(cloud, &self.grid)?;
        let (h, w) = (self.grid.height, self.grid.width);
        let mut values = Vec::with_capacity(h * w * self.channels);
        for r in 0..h {
            for c in 0..w {
                values.extend(self.features_from_stats(stats.cell(r, c), 1.0));
            }
        }
        FeatureMap::new(h, w, self.channels, self.grid.extent, values)
    }

    /// Accumulates into `grad` the parameter gradient given `upstream`, the
    /// loss gradient with respect to `features_from_stats(stats, mass)`.
    pub fn backward(&self, stats: &[f64], mass: f64, upstream: &[f64], grad: &mut ExtractorGrad) {
        let c = self.channels;
        let through_adapter = match &self.adapter {
            Some(a) => {
                let pre = self.pre_adapter(stats, mass);
                let ga = grad.adapter.get_or_insert_with(|| vec![0.0; c * c]);
                for i in 0..c {
                    for j in 0..c {
                        ga[i * c + j] += upstream[i] * pre[j];
                    }
                }
                mat_t_vec(a, upstream, c)
            }
            None => upstream.to_vec(),
        };
        for (ch, g) in through_adapter.iter().enumerate() {
            for (s, stat) in stats.iter().enumerate() {
                grad.weights[ch * NUM_STATS + s] += g * stat;
            }
            grad.bias[ch] += g * mass;
        }
    }

    pub fn zero_grad(&self) -> ExtractorGrad {
        ExtractorGrad {
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
            adapter: self.adapter.as_ref().map(|a| vec![0.0; a.len()]),
        }
    }

    /// `θ ← θ − lr · g`.
    pub fn apply_gradient(&mut self, grad: &ExtractorGrad, lr: f64) {
        for (p, g) in self.weights.iter_mut().zip(&grad.weights) {
            *p -= lr * g;
        }
        for (p, g) in self.bias.iter_mut().zip(&grad.bias) {
            *p -= lr * g;
        }
        if let (Some(a), Some(ga)) = (self.adapter.as_mut(), grad.adapter.as_ref()) {
            for (p, g) in a.iter_mut().zip(ga) {
                *p -= lr * g;
            }
        }
    }

    /// Adds `weight · θ` to `grad` (gradient of `½·weight·‖θ‖²`).
    pub fn add_weight_decay(&self, weight: f64, grad: &mut ExtractorGrad) {
        if weight == 0.0 {
            return;
        }
        for (g, p) in grad.weights.iter_mut().zip(&self.weights) {
            *g += weight * p;
        }
        for (g, p) in grad.bias.iter_mut().zip(&self.bias) {
            *g += weight * p;
        }
        if let (Some(ga), Some(a)) = (grad.adapter.as_mut(), self.adapter.as_ref()) {
            for (g, p) in ga.iter_mut().zip(a) {
                *g += weight * p;
            }
        }
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn mat_vec(m: &[f64], v: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            m[i * n..(i + 1) * n]
                .iter()
                .zip(v)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

fn mat_t_vec(m: &[f64], v: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| (0..n).map(|i| m[i * n + j] * v[i]).sum())
        .collect()
}
