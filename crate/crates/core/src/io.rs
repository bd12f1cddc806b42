//! On-disk formats.
//!
//! * Cloud file: `b"GPC1"`, point count as `u64` LE, then `count` records of
//!   four `f32` LE values `x y z intensity`.
//! * Feature map file: `b"GFM1"`, `H W C` as `u64` LE, six `f64` LE values
//!   `x_min x_max y_min y_max res_x res_y`, then `H·W·C` `f32` LE values in
//!   row-major `(row, col, channel)` order.
//! * Label file: UTF-8 text, one box per line
//!   `class_id x y z l w h yaw score`; blank lines and lines starting with
//!   `#` are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::augment::PseudoLabel;
use crate::geometry::{Box3D, Point, PointCloud};
use crate::grs::{Extent, FeatureMap};

pub const CLOUD_MAGIC: &[u8; 4] = b"GPC1";
pub const FEATURE_MAGIC: &[u8; 4] = b"GFM1";

const CLOUD_HEADER: usize = 12;
const FEATURE_HEADER: usize = 4 + 3 * 8 + 6 * 8;

/// Tolerance on `H·res_y` against the extent height (and likewise for `W`).
pub const RESOLUTION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("truncated header: {0} bytes")]
    TruncatedHeader(usize),
    #[error("payload is {actual} bytes, header implies {expected}")]
    PayloadLength { expected: u64, actual: u64 },
    #[error("value {index} is not finite")]
    NonFinite { index: usize },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("invalid header: {0}")]
    Header(String),
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

fn f64_at(bytes: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

fn f32_at(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(CLOUD_HEADER + 16 * cloud.len());
    out.extend_from_slice(CLOUD_MAGIC);
    out.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
    for p in cloud.points() {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_cloud(bytes: &[u8]) -> Result<PointCloud, FormatError> {
    if bytes.len() < CLOUD_HEADER {
        return Err(FormatError::TruncatedHeader(bytes.len()));
    }
    if &bytes[..4] != CLOUD_MAGIC {
        return Err(FormatError::BadMagic { expected: "GPC1" });
    }
    let count = u64_at(bytes, 4);
    let payload = (bytes.len() - CLOUD_HEADER) as u64;
    if count.checked_mul(16) != Some(payload) {
        return Err(FormatError::PayloadLength {
            expected: count.saturating_mul(16),
            actual: payload,
        });
    }
    let points: Vec<Point> = bytes[CLOUD_HEADER..]
        .chunks_exact(16)
        .map(|r| Point::new(f32_at(r, 0), f32_at(r, 4), f32_at(r, 8), f32_at(r, 12)))
        .collect();
    PointCloud::new(points).map_err(|e| match e {
        crate::Error::NonFinitePoint { index } => FormatError::NonFinite { index },
        other => FormatError::Header(other.to_string()),
    })
}

pub fn read_cloud(path: &Path) -> crate::Result<PointCloud> {
    Ok(decode_cloud(&fs::read(path)?)?)
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> crate::Result<()> {
    fs::write(path, encode_cloud(cloud))?;
    Ok(())
}

pub fn encode_feature_map(map: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(FEATURE_HEADER + 4 * map.values().len());
    out.extend_from_slice(FEATURE_MAGIC);
    for n in [map.height(), map.width(), map.channels()] {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    let e = map.extent();
    let (rx, ry) = map.resolution();
    for v in [e.x_min, e.x_max, e.y_min, e.y_max, rx, ry] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in map.values() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_feature_map(bytes: &[u8]) -> Result<FeatureMap, FormatError> {
    if bytes.len() < FEATURE_HEADER {
        return Err(FormatError::TruncatedHeader(bytes.len()));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(FormatError::BadMagic { expected: "GFM1" });
    }
    let (h, w, c) = (u64_at(bytes, 4), u64_at(bytes, 12), u64_at(bytes, 20));
    let header: Vec<f64> = (0..6).map(|i| f64_at(bytes, 28 + 8 * i)).collect();
    let [x_min, x_max, y_min, y_max, rx, ry] = header[..] else {
        unreachable!()
    };
    let payload = (bytes.len() - FEATURE_HEADER) as u64;
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .and_then(|n| n.checked_mul(4));
    if expected != Some(payload) {
        return Err(FormatError::PayloadLength {
            expected: expected.unwrap_or(u64::MAX),
            actual: payload,
        });
    }
    if h == 0 || w == 0 || c == 0 {
        return Err(FormatError::Header(format!("empty shape {h}x{w}x{c}")));
    }
    let extent =
        Extent::new(x_min, x_max, y_min, y_max).map_err(|e| FormatError::Header(e.to_string()))?;
    let (hf, wf) = (h as f64, w as f64);
    if !((hf * ry - extent.height()).abs() <= RESOLUTION_TOLERANCE
        && (wf * rx - extent.width()).abs() <= RESOLUTION_TOLERANCE)
    {
        return Err(FormatError::Header(format!(
            "resolution ({rx}, {ry}) inconsistent with extent and shape {h}x{w}"
        )));
    }
    let mut values = Vec::with_capacity((payload / 4) as usize);
    for (i, chunk) in bytes[FEATURE_HEADER..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::NonFinite { index: i });
        }
        values.push(v as f64);
    }
    FeatureMap::new(h as usize, w as usize, c as usize, extent, values)
        .map_err(|e| FormatError::Header(e.to_string()))
}

pub fn read_feature_map(path: &Path) -> crate::Result<FeatureMap> {
    Ok(decode_feature_map(&fs::read(path)?)?)
}

pub fn write_feature_map(path: &Path, map: &FeatureMap) -> crate::Result<()> {
    fs::write(path, encode_feature_map(map))?;
    Ok(())
}

fn line_err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Line {
        line,
        message: message.into(),
    }
}

pub fn parse_labels(text: &str) -> Result<Vec<PseudoLabel>, FormatError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 9 {
            return Err(line_err(
                line_no,
                format!("expected 9 fields, found {}", fields.len()),
            ));
        }
        let class_id: u32 = fields[0]
            .parse()
            .map_err(|_| line_err(line_no, format!("bad class id {:?}", fields[0])))?;
        let mut v = [0.0f64; 8];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f
                .parse()
                .map_err(|_| line_err(line_no, format!("bad number {f:?}")))?;
            if !slot.is_finite() {
                return Err(line_err(line_no, format!("non-finite value {f:?}")));
            }
        }
        let [x, y, z, l, w, h, yaw, score] = v;
        let b =
            Box3D::new([x, y, z], [l, w, h], yaw).map_err(|e| line_err(line_no, e.to_string()))?;
        let label =
            PseudoLabel::new(b, class_id, score).map_err(|e| line_err(line_no, e.to_string()))?;
        out.push(label);
    }
    Ok(out)
}

/// One line per label; `{}` on `f64` prints the shortest exact representation.
pub fn format_labels(labels: &[PseudoLabel]) -> String {
    let mut out = String::new();
    for l in labels {
        let [x, y, z] = l.box3d.center();
        let [bl, bw, bh] = l.box3d.dims();
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {} {}",
            l.class_id,
            x,
            y,
            z,
            bl,
            bw,
            bh,
            l.box3d.yaw(),
            l.score
        );
    }
    out
}

pub fn read_labels(path: &Path) -> crate::Result<Vec<PseudoLabel>> {
    Ok(parse_labels(&fs::read_to_string(path)?)?)
}
