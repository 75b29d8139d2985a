//! Synthetic echocardiography clips with analytic ground truth.
//!
//! A clip shows an elliptical cavity contracting from end-diastole (first
//! frame) to end-systole (last frame): a dark cavity inside a bright wall
//! on a mid-gray background, multiplicative gamma speckle and optional
//! per-frame acoustic dropout wedges over the wall. Only the first and last
//! frames carry masks.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::mask::{read_gray_pgm, write_gray_pgm, BinaryMask};
use crate::tensor::Tensor;

const CAVITY: f64 = 0.06;
const WALL: f64 = 0.72;
const BACKGROUND: f64 = 0.24;
const DROPOUT_GAIN: f64 = 0.3;

/// Parameters of one synthetic clip.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub size: usize,
    pub frames: usize,
    /// End-diastolic semi-axes in pixels along and across the long axis.
    pub a0: f64,
    pub b0: f64,
    /// End-systolic semi-axes as fractions of the end-diastolic ones.
    pub ca: f64,
    pub cb: f64,
    /// Cavity centre `(x, y)` in pixels.
    pub center: (f64, f64),
    /// Long-axis angle from vertical, degrees.
    pub tilt_deg: f64,
    pub wall: f64,
    /// Standard deviation of the unit-mean speckle multiplier.
    pub noise: f64,
    /// Per-frame probability of a dropout wedge.
    pub occlusion: f64,
}

impl SynthSpec {
    pub fn with_size(size: usize) -> Self {
        let s = size as f64 / 64.0;
        Self {
            size,
            frames: 10,
            a0: 23.5 * s,
            b0: 15.5 * s,
            ca: 0.8,
            cb: 0.8,
            center: (size as f64 / 2.0, size as f64 / 2.0),
            tilt_deg: 0.0,
            wall: 4.0 * s,
            noise: 0.3,
            occlusion: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::Config(format!("synth spec: {d}")));
        if self.size == 0 || self.frames < 2 {
            return bad(format!("size {} and frames {} (need >= 2 frames)", self.size, self.frames));
        }
        for (name, c) in [("ca", self.ca), ("cb", self.cb)] {
            if !(c > 0.0 && c < 1.0) {
                return bad(format!("{name} = {c} outside (0, 1)"));
            }
        }
        if !(self.b0 > 0.0 && self.a0 > self.b0 && self.a0 * self.ca > self.b0 * self.cb) {
            return bad(format!(
                "semi-axes must satisfy a > b > 0 at both phases (a0 {}, b0 {}, ca {}, cb {})",
                self.a0, self.b0, self.ca, self.cb
            ));
        }
        if !(self.noise >= 0.0 && self.wall >= 0.0 && (0.0..=1.0).contains(&self.occlusion)) {
            return bad("noise, wall and occlusion must be non-negative, occlusion <= 1".into());
        }
        let (ha, hb) = (self.a0 + self.wall, self.b0 + self.wall);
        let th = self.tilt_deg.to_radians();
        let half_x = ((ha * th.sin()).powi(2) + (hb * th.cos()).powi(2)).sqrt();
        let half_y = ((ha * th.cos()).powi(2) + (hb * th.sin()).powi(2)).sqrt();
        let (cx, cy) = self.center;
        let n = self.size as f64;
        if cx - half_x < 0.0 || cy - half_y < 0.0 || cx + half_x > n || cy + half_y > n {
            return Err(Error::Data(format!(
                "ellipse with wall ({half_x:.1} x {half_y:.1} half-extent at ({cx:.1}, {cy:.1})) exceeds the {n}-pixel image"
            )));
        }
        Ok(())
    }

    /// Semi-axes at frame `t`, eased with a half cosine from ED to ES.
    pub fn semi_axes(&self, t: usize) -> (f64, f64) {
        let s = t as f64 / (self.frames - 1) as f64;
        let e = 0.5 * (1.0 - (PI * s).cos());
        (self.a0 * (1.0 - (1.0 - self.ca) * e), self.b0 * (1.0 - (1.0 - self.cb) * e))
    }

    /// Ejection fraction of the analytic contours measured by `n_disks`
    /// single-plane disks.
    pub fn analytic_ef(&self, n_disks: usize) -> f64 {
        let vol = |a: f64, b: f64| {
            let w = 2.0 * a / n_disks as f64;
            let sum: f64 = (0..n_disks)
                .map(|k| {
                    let x = -a + (k as f64 + 0.5) * w;
                    4.0 * b * b * (1.0 - (x / a).powi(2))
                })
                .sum();
            PI / 4.0 * w * sum
        };
        let (ea, eb) = self.semi_axes(0);
        let (sa, sb) = self.semi_axes(self.frames - 1);
        let edv = vol(ea, eb);
        100.0 * (edv - vol(sa, sb)) / edv
    }

    /// Elliptical coordinates of a pixel centre: `(u/a)^2 + (v/b)^2` test
    /// inputs along and across the long axis.
    fn local(&self, r: usize, c: usize) -> (f64, f64) {
        let th = self.tilt_deg.to_radians();
        let (dx, dy) = (c as f64 + 0.5 - self.center.0, r as f64 + 0.5 - self.center.1);
        (dx * th.sin() + dy * th.cos(), dx * th.cos() - dy * th.sin())
    }

    pub fn cavity_mask(&self, t: usize) -> BinaryMask {
        let (a, b) = self.semi_axes(t);
        BinaryMask::from_fn(self.size, self.size, |r, c| {
            let (u, v) = self.local(r, c);
            (u / a).powi(2) + (v / b).powi(2) <= 1.0
        })
    }

    fn to_meta(&self) -> Vec<(String, String)> {
        vec![
            ("size".into(), self.size.to_string()),
            ("frames".into(), self.frames.to_string()),
            ("a0".into(), self.a0.to_string()),
            ("b0".into(), self.b0.to_string()),
            ("ca".into(), self.ca.to_string()),
            ("cb".into(), self.cb.to_string()),
            ("center_x".into(), self.center.0.to_string()),
            ("center_y".into(), self.center.1.to_string()),
            ("tilt_deg".into(), self.tilt_deg.to_string()),
            ("wall".into(), self.wall.to_string()),
            ("noise".into(), self.noise.to_string()),
            ("occlusion".into(), self.occlusion.to_string()),
        ]
    }
}

/// One clip with its two annotated frames.
#[derive(Debug, Clone)]
pub struct ClipRecord {
    pub clip_id: String,
    /// `[T, 1, H, W]` intensities in `[0, 1]`; frame 0 is ED, frame T-1 is ES.
    pub frames: Tensor,
    pub ed_mask: BinaryMask,
    pub es_mask: BinaryMask,
    pub true_ef: Option<f64>,
    pub meta: BTreeMap<String, String>,
}

impl ClipRecord {
    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.frames.shape()[2], self.frames.shape()[3])
    }

    pub fn validate(&self) -> Result<()> {
        let &[t, 1, h, w] = self.frames.shape() else {
            return Err(Error::Data(format!("{}: frames must be [T, 1, H, W], got {:?}", self.clip_id, self.frames.shape())));
        };
        if t < 2 {
            return Err(Error::Data(format!("{}: need at least two frames", self.clip_id)));
        }
        for m in [&self.ed_mask, &self.es_mask] {
            if m.dims() != (h, w) {
                return Err(Error::MaskShape(m.dims(), (h, w)));
            }
        }
        Ok(())
    }

    /// Frame `t` as a row-major `H*W` slice.
    pub fn frame(&self, t: usize) -> &[f64] {
        let (h, w) = self.dims();
        &self.frames.data()[t * h * w..(t + 1) * h * w]
    }
}

/// Renders the clip for `spec`; bit-identical for equal `(spec, seed)`.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<ClipRecord> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.size;
    let speckle = (spec.noise > 0.0).then(|| {
        let k = 1.0 / (spec.noise * spec.noise);
        Gamma::new(k, 1.0 / k).expect("positive shape and scale")
    });
    let mut data = Vec::with_capacity(spec.frames * n * n);
    for t in 0..spec.frames {
        let (a, b) = spec.semi_axes(t);
        let (wa, wb) = (a + spec.wall, b + spec.wall);
        let wedge = (rng.random::<f64>() < spec.occlusion).then(|| {
            let centre = rng.random_range(-PI..PI);
            let half = rng.random_range(10f64.to_radians()..25f64.to_radians());
            (centre, half)
        });
        for r in 0..n {
            for c in 0..n {
                let (u, v) = spec.local(r, c);
                let base = if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                    CAVITY
                } else if (u / wa).powi(2) + (v / wb).powi(2) <= 1.0 {
                    WALL
                } else {
                    BACKGROUND
                };
                let mut value = base;
                if let Some((centre, half)) = wedge {
                    let ang = v.atan2(u);
                    let diff = (ang - centre + PI).rem_euclid(2.0 * PI) - PI;
                    if diff.abs() <= half && (u / a).powi(2) + (v / b).powi(2) > 0.25 {
                        value *= DROPOUT_GAIN;
                    }
                }
                if let Some(g) = &speckle {
                    value *= g.sample(&mut rng);
                }
                data.push(value.clamp(0.0, 1.0));
            }
        }
    }
    let frames = Tensor::from_vec(&[spec.frames, 1, n, n], data)?;
    let mut meta: BTreeMap<String, String> = spec.to_meta().into_iter().collect();
    meta.insert("seed".into(), seed.to_string());
    Ok(ClipRecord {
        clip_id: format!("synth_{seed:06}"),
        frames,
        ed_mask: spec.cavity_mask(0),
        es_mask: spec.cavity_mask(spec.frames - 1),
        true_ef: Some(spec.analytic_ef(crate::ef::DEFAULT_DISKS)),
        meta,
    })
}

/// A closed interval parsed from `x` or `lo..hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
}

impl Span {
    pub const fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    fn scaled(self, s: f64) -> Self {
        Self { lo: self.lo * s, hi: self.hi * s }
    }
}

impl FromStr for Span {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("'{x}': {e}"));
        let span = match s.split_once("..") {
            Some((lo, hi)) => Span::new(num(lo)?, num(hi)?),
            None => Span::fixed(num(s)?),
        };
        if !(span.lo <= span.hi) {
            return Err(format!("empty range '{s}'"));
        }
        Ok(span)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lo == self.hi {
            write!(f, "{}", self.lo)
        } else {
            write!(f, "{}..{}", self.lo, self.hi)
        }
    }
}

/// Distribution over [`SynthSpec`]s for generating a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub size: usize,
    pub frames: usize,
    pub a0: Span,
    pub b0: Span,
    pub ca: Span,
    pub cb: Span,
    /// Offset of the cavity centre from the image centre, per axis.
    pub jitter: Span,
    pub tilt_deg: Span,
    pub wall: Span,
    pub noise: Span,
    pub occlusion: f64,
}

impl CorpusSpec {
    /// Default ranges, scaled from a 64-pixel layout.
    pub fn with_size(size: usize) -> Self {
        let s = size as f64 / 64.0;
        Self {
            size,
            frames: 10,
            a0: Span::new(22.0, 25.0).scaled(s),
            b0: Span::new(14.0, 17.0).scaled(s),
            ca: Span::new(0.75, 0.95),
            cb: Span::new(0.65, 0.92),
            jitter: Span::new(-1.5, 1.5).scaled(s),
            tilt_deg: Span::new(-8.0, 8.0),
            wall: Span::fixed(4.0).scaled(s),
            noise: Span::new(0.2, 0.35),
            occlusion: 0.3,
        }
    }

    pub fn sample(&self, seed: u64) -> SynthSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5EC7);
        let half = self.size as f64 / 2.0;
        SynthSpec {
            size: self.size,
            frames: self.frames,
            a0: self.a0.sample(&mut rng),
            b0: self.b0.sample(&mut rng),
            ca: self.ca.sample(&mut rng),
            cb: self.cb.sample(&mut rng),
            center: (half + self.jitter.sample(&mut rng), half + self.jitter.sample(&mut rng)),
            tilt_deg: self.tilt_deg.sample(&mut rng),
            wall: self.wall.sample(&mut rng),
            noise: self.noise.sample(&mut rng),
            occlusion: self.occlusion,
        }
    }

    /// Clip `i` uses seed `base_seed + i`, independent of generation order.
    pub fn generate(&self, n: usize, base_seed: u64) -> Result<Vec<ClipRecord>> {
        (0..n as u64)
            .map(|i| {
                let seed = base_seed + i;
                generate(&self.sample(seed), seed)
            })
            .collect()
    }

    /// Parses `key = value` lines; unknown keys are rejected, missing keys
    /// keep the size-scaled defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let size = match kv.get("size") {
            Some(v) => v.parse().map_err(|e| Error::Config(format!("size: {e}")))?,
            None => 64,
        };
        let mut spec = Self::with_size(size);
        for (k, v) in &kv {
            let span = || v.parse::<Span>().map_err(|e| Error::Config(format!("{k}: {e}")));
            match k.as_str() {
                "size" => {}
                "frames" => spec.frames = v.parse().map_err(|e| Error::Config(format!("frames: {e}")))?,
                "a0" => spec.a0 = span()?,
                "b0" => spec.b0 = span()?,
                "ca" => spec.ca = span()?,
                "cb" => spec.cb = span()?,
                "jitter" => spec.jitter = span()?,
                "tilt_deg" => spec.tilt_deg = span()?,
                "wall" => spec.wall = span()?,
                "noise" => spec.noise = span()?,
                "occlusion" => spec.occlusion = v.parse().map_err(|e| Error::Config(format!("occlusion: {e}")))?,
                other => return Err(Error::Config(format!("unknown synth key '{other}'"))),
            }
        }
        Ok(spec)
    }
}

/// Parses line-oriented `key = value` text; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected 'key = value', got '{raw}'", no + 1)));
        };
        let key = k.trim().to_string();
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key '{key}'", no + 1)));
        }
    }
    Ok(out)
}

/// Augmentation ranges; each transform fires independently with `prob`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub prob: f64,
    pub gamma: Span,
    pub scale: Span,
    pub rotation_deg: Span,
    pub contrast: Span,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            prob: 0.5,
            gamma: Span::new(0.7, 1.5),
            scale: Span::new(0.9, 1.1),
            rotation_deg: Span::new(-10.0, 10.0),
            contrast: Span::new(0.8, 1.2),
        }
    }
}

/// The concrete transforms chosen for one clip; `None` skips a transform.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AugmentDraw {
    pub gamma: Option<f64>,
    pub scale: Option<f64>,
    pub rotation_deg: Option<f64>,
    pub contrast: Option<f64>,
}

impl AugmentDraw {
    pub fn sample(cfg: &AugmentConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pick = |span: &Span| {
            let fire = rng.random::<f64>() < cfg.prob;
            let v = span.sample(&mut rng);
            fire.then_some(v)
        };
        Self {
            gamma: pick(&cfg.gamma),
            scale: pick(&cfg.scale),
            rotation_deg: pick(&cfg.rotation_deg),
            contrast: pick(&cfg.contrast),
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }
}

/// Inverse mapping of output pixel `(r, c)` to source coordinates under a
/// rotation by `deg` and scaling by `s` about the image centre.
fn source_coords(h: usize, w: usize, r: usize, c: usize, s: f64, deg: f64) -> (f64, f64) {
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let (dy, dx) = (r as f64 + 0.5 - cy, c as f64 + 0.5 - cx);
    let (sin, cos) = deg.to_radians().sin_cos();
    let sx = (cos * dx + sin * dy) / s;
    let sy = (-sin * dx + cos * dy) / s;
    (sy + cy - 0.5, sx + cx - 0.5)
}

/// Rotates and scales a mask about the image centre: the 0/1 image is
/// resampled bilinearly and thresholded at one half.
pub fn warp_mask(m: &BinaryMask, scale: f64, rotation_deg: f64) -> BinaryMask {
    let (h, w) = m.dims();
    let img: Vec<f64> = m.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let warped = warp_image(&img, h, w, scale, rotation_deg);
    BinaryMask::from_bits(h, w, warped.iter().map(|&v| v >= 0.5).collect()).expect("same extents")
}

/// Rotates and scales one `H*W` image about its centre (bilinear, zero
/// outside).
pub fn warp_image(img: &[f64], h: usize, w: usize, scale: f64, rotation_deg: f64) -> Vec<f64> {
    let at = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            img[y as usize * w + x as usize]
        }
    };
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let (y, x) = source_coords(h, w, r, c, scale, rotation_deg);
            let (y0, x0) = (y.floor(), x.floor());
            let (fy, fx) = (y - y0, x - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            let v = at(y0, x0) * (1.0 - fy) * (1.0 - fx)
                + at(y0, x0 + 1) * (1.0 - fy) * fx
                + at(y0 + 1, x0) * fy * (1.0 - fx)
                + at(y0 + 1, x0 + 1) * fy * fx;
            out.push(v);
        }
    }
    out
}

/// Applies `draw`: spatial transforms to every frame and both masks,
/// intensity transforms to frames only.
pub fn apply_augment(record: &ClipRecord, draw: &AugmentDraw) -> Result<ClipRecord> {
    if draw.is_identity() {
        return Ok(record.clone());
    }
    let (h, w) = record.dims();
    let t = record.num_frames();
    let mut out = record.clone();
    let mut data = record.frames.to_vec();
    if draw.scale.is_some() || draw.rotation_deg.is_some() {
        let s = draw.scale.unwrap_or(1.0);
        let deg = draw.rotation_deg.unwrap_or(0.0);
        data = (0..t).flat_map(|k| warp_image(&data[k * h * w..(k + 1) * h * w], h, w, s, deg)).collect();
        out.ed_mask = warp_mask(&record.ed_mask, s, deg);
        out.es_mask = warp_mask(&record.es_mask, s, deg);
    }
    if let Some(g) = draw.gamma {
        data.iter_mut().for_each(|v| *v = v.max(0.0).powf(g));
    }
    if let Some(k) = draw.contrast {
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        data.iter_mut().for_each(|v| *v = ((*v - mean) * k + mean).clamp(0.0, 1.0));
    }
    out.frames = record.frames.with_data(data)?;
    Ok(out)
}

pub fn augment(record: &ClipRecord, cfg: &AugmentConfig, seed: u64) -> Result<ClipRecord> {
    apply_augment(record, &AugmentDraw::sample(cfg, seed))
}

fn frame_name(t: usize) -> String {
    format!("frame_{t:03}.pgm")
}

/// Writes `<dir>/<clip_id>/` with frame PGMs, both masks and `meta.txt`.
pub fn write_clip(dir: impl AsRef<Path>, record: &ClipRecord) -> Result<PathBuf> {
    record.validate()?;
    let root = dir.as_ref().join(&record.clip_id);
    fs::create_dir_all(&root)?;
    let (h, w) = record.dims();
    for t in 0..record.num_frames() {
        write_gray_pgm(root.join(frame_name(t)), h, w, record.frame(t))?;
    }
    record.ed_mask.write_pgm(root.join("ed_mask.pgm"))?;
    record.es_mask.write_pgm(root.join("es_mask.pgm"))?;
    let mut meta = record.meta.clone();
    meta.insert("clip_id".into(), record.clip_id.clone());
    if let Some(ef) = record.true_ef {
        meta.insert("true_ef".into(), ef.to_string());
    }
    let text: String = meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    fs::write(root.join("meta.txt"), text)?;
    Ok(root)
}

/// Reads a clip directory written by [`write_clip`] (or laid out the same
/// way by hand; `meta.txt` is optional).
pub fn read_clip(dir: impl AsRef<Path>) -> Result<ClipRecord> {
    let dir = dir.as_ref();
    let mut meta = BTreeMap::new();
    let meta_path = dir.join("meta.txt");
    if meta_path.exists() {
        meta = parse_key_values(&fs::read_to_string(&meta_path)?)
            .map_err(|e| Error::Data(format!("{}: {e}", meta_path.display())))?;
    }
    let mut data = Vec::new();
    let mut dims = None;
    let mut t = 0;
    while dir.join(frame_name(t)).exists() {
        let (h, w, px) = read_gray_pgm(dir.join(frame_name(t)))?;
        if dims.is_some_and(|d| d != (h, w)) {
            return Err(Error::Data(format!("{}: frame {t} size differs", dir.display())));
        }
        dims = Some((h, w));
        data.extend(px);
        t += 1;
    }
    let Some((h, w)) = dims else {
        return Err(Error::Data(format!("{}: no frames", dir.display())));
    };
    let clip_id = meta.remove("clip_id").unwrap_or_else(|| {
        dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    });
    let true_ef = match meta.remove("true_ef") {
        Some(v) => Some(v.parse().map_err(|e| Error::Data(format!("{clip_id}: true_ef: {e}")))?),
        None => None,
    };
    let record = ClipRecord {
        clip_id,
        frames: Tensor::from_vec(&[t, 1, h, w], data)?,
        ed_mask: BinaryMask::read_pgm(dir.join("ed_mask.pgm"))?,
        es_mask: BinaryMask::read_pgm(dir.join("es_mask.pgm"))?,
        true_ef,
        meta,
    };
    record.validate()?;
    Ok(record)
}

/// Reads every clip subdirectory of `dir` in name order.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<ClipRecord>> {
    let dir = dir.as_ref();
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(frame_name(0)).exists())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(Error::Data(format!("{}: no clip directories", dir.display())));
    }
    subdirs.iter().map(read_clip).collect()
}
