//! Straight-line reference implementations used to check the augmentation
//! engine. Nothing here calls into the library's voxelization or dropout
//! code; only the random stream protocol is shared.

#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A box described by plain numbers.
#[derive(Debug, Clone, Copy)]
pub struct RawBox {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

pub type RawPoint = [f32; 4];

/// Same stream the library uses for box `index`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn canonical(b: &RawBox, p: &RawPoint) -> (f64, f64, f64) {
    let dx = p[0] as f64 - b.cx;
    let dy = p[1] as f64 - b.cy;
    let (s, c) = b.yaw.sin_cos();
    (dx * c + dy * s, -dx * s + dy * c, p[2] as f64 - b.cz)
}

/// Half-open slab test with the last slab closed on its upper face.
fn in_slab(v: f64, extent: f64, n: usize, k: usize) -> bool {
    let cell = extent / n as f64;
    let lo = -extent / 2.0 + k as f64 * cell;
    let hi = lo + cell;
    if k + 1 == n {
        v >= lo && v <= extent / 2.0
    } else {
        v >= lo && v < hi
    }
}

/// Voxels enumerated length-major, then width, then height.
pub fn voxel_list(grid: (usize, usize, usize)) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for il in 0..grid.0 {
        for iw in 0..grid.1 {
            for ih in 0..grid.2 {
                out.push((il, iw, ih));
            }
        }
    }
    out
}

/// For every voxel, the indices of the points that fall into it, found by
/// testing each point against each voxel's slabs.
pub fn members(b: &RawBox, grid: (usize, usize, usize), cloud: &[RawPoint]) -> Vec<Vec<usize>> {
    voxel_list(grid)
        .into_iter()
        .map(|(il, iw, ih)| {
            cloud
                .iter()
                .enumerate()
                .filter(|(_, p)| {
                    let (x, y, z) = canonical(b, p);
                    in_slab(x, b.l, grid.0, il)
                        && in_slab(y, b.w, grid.1, iw)
                        && in_slab(z, b.h, grid.2, ih)
                })
                .map(|(i, _)| i)
                .collect()
        })
        .collect()
}

fn voxel_center(b: &RawBox, grid: (usize, usize, usize), v: (usize, usize, usize)) -> (f64, f64) {
    let x = -b.l / 2.0 + (v.0 as f64 + 0.5) * b.l / grid.0 as f64;
    let y = -b.w / 2.0 + (v.1 as f64 + 0.5) * b.w / grid.1 as f64;
    let (s, c) = b.yaw.sin_cos();
    (b.cx + x * c - y * s, b.cy + x * s + y * c)
}

/// Relative angle of each voxel center, wrapped into `(-π, π]`.
pub fn angles(b: &RawBox, grid: (usize, usize, usize)) -> Vec<f64> {
    let box_angle = b.cy.atan2(b.cx);
    voxel_list(grid)
        .into_iter()
        .map(|v| {
            let (x, y) = voxel_center(b, grid, v);
            let mut r = y.atan2(x) - box_angle;
            if r > PI {
                r -= 2.0 * PI;
            }
            if r <= -PI {
                r += 2.0 * PI;
            }
            r
        })
        .collect()
}

/// Traversal by repeated selection of the extreme remaining voxel.
pub fn traversal(angles: &[f64], counterclockwise: bool) -> Vec<usize> {
    let mut left: Vec<usize> = (0..angles.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for cand in 1..left.len() {
            let (a, b) = (angles[left[cand]], angles[left[best]]);
            let better = if counterclockwise { a < b } else { a > b };
            if better {
                best = cand;
            }
        }
        out.push(left.remove(best));
    }
    out
}

/// Reference order dropout for one box. `rng` must be positioned where the
/// library would draw the per-voxel mask.
pub fn order_dropout(
    b: &RawBox,
    grid: (usize, usize, usize),
    cloud: &[RawPoint],
    p: f64,
    n_p_min: usize,
    counterclockwise: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<RawPoint> {
    let voxels = voxel_list(grid).len();
    let mut mask = Vec::new();
    for _ in 0..voxels {
        mask.push(rng.gen::<f64>() < p);
    }
    let order = traversal(&angles(b, grid), counterclockwise);
    let mut count = 0;
    for m in &mask {
        if *m {
            count += 1;
        }
    }
    let mut will_drop = vec![false; voxels];
    for v in order.iter().take(count) {
        will_drop[*v] = true;
    }
    let per_voxel = members(b, grid, cloud);
    let mut in_box = 0;
    let mut dropping = 0;
    for (v, pts) in per_voxel.iter().enumerate() {
        in_box += pts.len();
        if will_drop[v] {
            dropping += pts.len();
        }
    }
    let mut removed = vec![false; cloud.len()];
    if in_box - dropping > n_p_min {
        for (v, pts) in per_voxel.iter().enumerate() {
            if will_drop[v] {
                for &i in pts {
                    removed[i] = true;
                }
            }
        }
    }
    cloud
        .iter()
        .zip(&removed)
        .filter(|(_, r)| !**r)
        .map(|(p, _)| *p)
        .collect()
}

/// Points per voxel after sparsifying with every voxel selected.
pub fn sparsify_counts(per_voxel: &[usize], keep_ratio: f64) -> Vec<usize> {
    per_voxel
        .iter()
        .map(|&n| {
            if n == 0 {
                0
            } else {
                let mut keep = (n as f64 * keep_ratio).ceil() as usize;
                if keep < 1 {
                    keep = 1;
                }
                keep.min(n)
            }
        })
        .collect()
}

/// Points placed strictly inside each voxel, `counts[v]` of them in voxel `v`.
pub fn fill_voxels<R: Rng>(
    b: &RawBox,
    grid: (usize, usize, usize),
    counts: &[usize],
    rng: &mut R,
) -> Vec<RawPoint> {
    let mut out = Vec::new();
    let (s, c) = b.yaw.sin_cos();
    for (v, &(il, iw, ih)) in voxel_list(grid).iter().enumerate() {
        let cl = b.l / grid.0 as f64;
        let cw = b.w / grid.1 as f64;
        let ch = b.h / grid.2 as f64;
        for _ in 0..counts[v] {
            let x = -b.l / 2.0 + (il as f64 + rng.gen_range(0.1..0.9)) * cl;
            let y = -b.w / 2.0 + (iw as f64 + rng.gen_range(0.1..0.9)) * cw;
            let z = -b.h / 2.0 + (ih as f64 + rng.gen_range(0.1..0.9)) * ch;
            out.push([
                (b.cx + x * c - y * s) as f32,
                (b.cy + x * s + y * c) as f32,
                (b.cz + z) as f32,
                rng.gen_range(0.0..1.0),
            ]);
        }
    }
    out
}
