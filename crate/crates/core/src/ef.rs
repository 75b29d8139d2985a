//! Left-ventricular volumes by the method of disks and ejection fraction.
//!
//! The long axis of a mask is its principal second-moment axis, clipped to
//! the pixel extent along that axis. The axis is cut into equal slabs; each
//! pixel spreads its unit area over the slabs its footprint overlaps, and a
//! slab's diameter is its accumulated area divided by the slab width.
//! Volumes are in cubic pixels; the calibration cancels in the ejection
//! fraction.

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

pub const DEFAULT_DISKS: usize = 20;

/// Long axis and slab diameters of one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvGeometry {
    /// Axis endpoints as `(x, y)` = `(col, row)` pixel coordinates.
    pub axis_start: (f64, f64),
    pub axis_end: (f64, f64),
    pub length: f64,
    pub diameters: Vec<f64>,
}

impl LvGeometry {
    pub fn n_disks(&self) -> usize {
        self.diameters.len()
    }

    pub fn slab_width(&self) -> f64 {
        self.length / self.n_disks() as f64
    }
}

/// Keeps the largest 4-connected component of `mask`.
pub fn largest_component(mask: &BinaryMask) -> (BinaryMask, usize) {
    let (h, w) = mask.dims();
    let mut label = vec![usize::MAX; h * w];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask.bits()[start] || label[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        label[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (r, c) = (i / w, i % w);
            let mut visit = |j: usize| {
                if mask.bits()[j] && label[j] == usize::MAX {
                    label[j] = id;
                    queue.push_back(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        sizes.push(size);
    }
    let Some(best) = (0..sizes.len()).max_by_key(|&k| (sizes[k], std::cmp::Reverse(k))) else {
        return (mask.clone(), 0);
    };
    let kept = BinaryMask::from_bits(h, w, label.iter().map(|&l| l == best).collect()).expect("same extents");
    (kept, sizes.len())
}

/// Long axis and `n_disks` slab diameters of a ventricle mask.
pub fn extract_geometry(mask: &BinaryMask, n_disks: usize) -> Result<LvGeometry> {
    if n_disks == 0 {
        return Err(Error::invalid("extract_geometry", "n_disks must be positive"));
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask("extract_geometry"));
    }
    let (mask, components) = largest_component(mask);
    if components > 1 {
        log::warn!("mask has {components} components; using the largest");
    }
    let pts: Vec<(f64, f64)> = mask.pixels().map(|(r, c)| (c as f64, r as f64)).collect();
    if pts.len() < 2 {
        return Err(Error::invalid("extract_geometry", "degenerate single-pixel mask"));
    }
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in &pts {
        sxx += (x - cx) * (x - cx);
        syy += (y - cy) * (y - cy);
        sxy += (x - cx) * (y - cy);
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (ux, uy) = (theta.cos(), theta.sin());
    let proj: Vec<f64> = pts.iter().map(|&(x, y)| (x - cx) * ux + (y - cy) * uy).collect();
    let lo = proj.iter().copied().fold(f64::INFINITY, f64::min) - 0.5;
    let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 0.5;
    let length = hi - lo;
    let width = length / n_disks as f64;
    let mut area = vec![0.0; n_disks];
    for s in proj {
        let (start, end) = (s - 0.5 - lo, s + 0.5 - lo);
        let first = ((start / width).floor().max(0.0) as usize).min(n_disks - 1);
        let last = ((end / width).floor().max(0.0) as usize).min(n_disks - 1);
        for (k, slot) in area.iter_mut().enumerate().take(last + 1).skip(first) {
            let (a, b) = (k as f64 * width, (k + 1) as f64 * width);
            *slot += end.min(b) - start.max(a);
        }
    }
    Ok(LvGeometry {
        axis_start: (cx + lo * ux, cy + lo * uy),
        axis_end: (cx + hi * ux, cy + hi * uy),
        length,
        diameters: area.into_iter().map(|a| a / width).collect(),
    })
}

/// Single-plane disks volume `(pi/4) (L/N) sum a_k^2`.
pub fn volume_single_plane(g: &LvGeometry) -> f64 {
    PI / 4.0 * g.slab_width() * g.diameters.iter().map(|a| a * a).sum::<f64>()
}

/// Linearly interpolates a diameter profile at normalized slab centres of an
/// `n`-slab axis.
pub fn resample_profile(diameters: &[f64], n: usize) -> Vec<f64> {
    let m = diameters.len();
    (0..n)
        .map(|k| {
            let pos = ((k as f64 + 0.5) / n as f64 * m as f64 - 0.5).clamp(0.0, (m - 1) as f64);
            let i = pos.floor() as usize;
            let j = (i + 1).min(m - 1);
            let f = pos - i as f64;
            if f == 0.0 {
                diameters[i]
            } else {
                diameters[i] * (1.0 - f) + diameters[j] * f
            }
        })
        .collect()
}

/// Biplane disks volume `(pi/4) (L/N) sum a_k b_k` with `L` the longer of the
/// two axes; the shorter view's profile is resampled onto the longer view's
/// slabs.
pub fn volume_biplane(a: &LvGeometry, b: &LvGeometry) -> Result<f64> {
    let n = a.n_disks();
    if b.n_disks() != n {
        return Err(Error::invalid("volume_biplane", format!("disk counts differ: {n} vs {}", b.n_disks())));
    }
    let (long, short) = if a.length >= b.length { (a, b) } else { (b, a) };
    let resampled = resample_profile(&short.diameters, n);
    let sum: f64 = long.diameters.iter().zip(&resampled).map(|(x, y)| x * y).sum();
    Ok(PI / 4.0 * (long.length / n as f64) * sum)
}

/// `100 (edv - esv) / edv`.
pub fn ejection_fraction(edv: f64, esv: f64) -> Result<f64> {
    if !(edv > 0.0) {
        return Err(Error::invalid("ejection_fraction", format!("end-diastolic volume must be positive, got {edv}")));
    }
    Ok(100.0 * (edv - esv) / edv)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfReport {
    pub edv: f64,
    pub esv: f64,
    pub ef: f64,
}

impl EfReport {
    pub fn from_volumes(edv: f64, esv: f64) -> Result<Self> {
        Ok(Self { edv, esv, ef: ejection_fraction(edv, esv)? })
    }
}

/// Single-plane report from one view's ED and ES masks.
pub fn report_single_plane(ed: &BinaryMask, es: &BinaryMask, n_disks: usize) -> Result<EfReport> {
    let edv = volume_single_plane(&extract_geometry(ed, n_disks)?);
    let esv = volume_single_plane(&extract_geometry(es, n_disks)?);
    EfReport::from_volumes(edv, esv)
}

/// Biplane report from two orthogonal views' ED and ES masks.
pub fn report_biplane(
    ed_a: &BinaryMask,
    es_a: &BinaryMask,
    ed_b: &BinaryMask,
    es_b: &BinaryMask,
    n_disks: usize,
) -> Result<EfReport> {
    let edv = volume_biplane(&extract_geometry(ed_a, n_disks)?, &extract_geometry(ed_b, n_disks)?)?;
    let esv = volume_biplane(&extract_geometry(es_a, n_disks)?, &extract_geometry(es_b, n_disks)?)?;
    EfReport::from_volumes(edv, esv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rect(h: usize, w: usize, top: usize, left: usize, rows: usize, cols: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |r, c| (top..top + rows).contains(&r) && (left..left + cols).contains(&c))
    }

    #[test]
    fn rectangle_geometry() {
        let g = extract_geometry(&rect(64, 64, 10, 20, 40, 20), 20).unwrap();
        assert_abs_diff_eq!(g.length, 40.0, epsilon = 1e-9);
        assert!(g.diameters.iter().all(|&d| (d - 20.0).abs() < 1e-9), "{:?}", g.diameters);
        assert_abs_diff_eq!(volume_single_plane(&g), 12566.370614359172, epsilon = 1e-6);
    }

    #[test]
    fn biplane_closed_form() {
        let mk = |d: f64| LvGeometry {
            axis_start: (0.0, 0.0),
            axis_end: (0.0, 40.0),
            length: 40.0,
            diameters: vec![d; 20],
        };
        assert_abs_diff_eq!(volume_biplane(&mk(20.0), &mk(10.0)).unwrap(), 6283.185307179586, epsilon = 1e-6);
        assert_eq!(volume_biplane(&mk(20.0), &mk(0.0)).unwrap(), 0.0);
        let g = mk(13.0);
        assert_eq!(volume_biplane(&g, &g).unwrap(), volume_single_plane(&g));
        let mut short = mk(1.0);
        short.diameters.truncate(10);
        assert!(volume_biplane(&g, &short).is_err());
    }

    #[test]
    fn resample_identity_and_interpolation() {
        let d = vec![1.0, 3.0, 2.0, 8.0];
        assert_eq!(resample_profile(&d, 4), d);
        assert_eq!(resample_profile(&[0.0, 10.0], 4), vec![0.0, 2.5, 7.5, 10.0]);
    }

    #[test]
    fn ef_examples() {
        assert_eq!(ejection_fraction(100.0, 50.0).unwrap(), 50.0);
        assert_eq!(ejection_fraction(7.5, 7.5).unwrap(), 0.0);
        assert!(ejection_fraction(0.0, 1.0).is_err());
        assert!(ejection_fraction(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn errors_and_components() {
        assert!(matches!(extract_geometry(&BinaryMask::new(4, 4), 20), Err(Error::EmptyMask(_))));
        let single = BinaryMask::from_fn(4, 4, |r, c| r == 1 && c == 2);
        assert!(extract_geometry(&single, 20).is_err());
        let two = BinaryMask::from_fn(32, 32, |r, c| (r < 3 && c < 3) || ((10..30).contains(&r) && (5..15).contains(&c)));
        let (kept, n) = largest_component(&two);
        assert_eq!((n, kept.count()), (2, 200));
        let g = extract_geometry(&two, 10).unwrap();
        assert_abs_diff_eq!(g.length, 20.0, epsilon = 1e-9);
    }

    #[test]
    fn report_serializes() {
        let r = EfReport::from_volumes(200.0, 80.0).unwrap();
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"edv":200.0,"esv":80.0,"ef":60.0}"#);
    }
}
