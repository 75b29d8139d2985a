//! Training loss and evaluation metrics.
//!
//! The loss mixes soft Dice and binary cross-entropy. Evaluation uses the
//! hard Dice coefficient, the 95th-percentile Hausdorff distance in pixels
//! and agreement statistics between predicted and reference ejection
//! fractions.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::tensor::{self, Tensor};

pub const DEFAULT_ALPHA: f64 = 0.8;
pub const DICE_SMOOTH: f64 = 1.0;
pub const BCE_CLAMP: f64 = 1e-7;

/// Soft Dice loss `1 - (2 sum(PG) + s) / (sum(P) + sum(G) + s)`.
pub fn dice_loss(p: &Tensor, g: &Tensor) -> tensor::Result<Tensor> {
    check_pair(p, g)?;
    let inter = p.mul(g)?.sum()?.scale(2.0)?.add_scalar(DICE_SMOOTH)?;
    let denom = p.sum()?.add(&g.sum()?)?.add_scalar(DICE_SMOOTH)?;
    inter.div(&denom)?.neg()?.add_scalar(1.0)
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(p: &Tensor, g: &Tensor) -> tensor::Result<Tensor> {
    check_pair(p, g)?;
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)?;
    let pos = g.mul(&p.ln()?)?;
    let neg = g.neg()?.add_scalar(1.0)?.mul(&p.neg()?.add_scalar(1.0)?.ln()?)?;
    pos.add(&neg)?.mean()?.neg()
}

/// `alpha * dice + (1 - alpha) * bce` on probability maps of equal shape.
pub fn total_loss(p: &Tensor, g: &Tensor, alpha: f64) -> tensor::Result<Tensor> {
    let dice = dice_loss(p, g)?;
    let bce = bce_loss(p, g)?;
    dice.scale(alpha)?.add(&bce.scale(1.0 - alpha)?)
}

fn check_pair(p: &Tensor, g: &Tensor) -> tensor::Result<()> {
    if p.shape() != g.shape() {
        return Err(tensor::TensorError::Shape {
            op: "loss",
            detail: format!("prediction {:?} vs target {:?}", p.shape(), g.shape()),
        });
    }
    Ok(())
}

/// Binary cross-entropy computed from logits as `softplus(z) - g z`.
/// Matches [`bce_loss`] on `sigmoid(z)` wherever the probability lies
/// inside the clamp range, and keeps a non-zero gradient when saturated.
pub fn bce_with_logits(z: &Tensor, g: &Tensor) -> tensor::Result<Tensor> {
    check_pair(z, g)?;
    z.softplus()?.sub(&g.mul(z)?)?.mean()
}

fn frame_loss(z: &Tensor, g: &Tensor, alpha: f64) -> tensor::Result<Tensor> {
    let dice = dice_loss(&z.sigmoid()?, g)?;
    let bce = bce_with_logits(z, g)?;
    dice.scale(alpha)?.add(&bce.scale(1.0 - alpha)?)
}

/// Loss of one clip from `[T, 1, H, W]` logits: only the first (ED) and
/// last (ES) frames are supervised, and the two frame losses are averaged.
pub fn clip_loss(logits: &Tensor, ed: &BinaryMask, es: &BinaryMask, alpha: f64) -> Result<Tensor> {
    let &[t, 1, h, w] = logits.shape() else {
        return Err(Error::invalid("clip_loss", format!("expected [T, 1, H, W] logits, got {:?}", logits.shape())));
    };
    for m in [ed, es] {
        if m.dims() != (h, w) {
            return Err(Error::MaskShape(m.dims(), (h, w)));
        }
    }
    let ends = logits.index_select0(&[0, t - 1])?;
    let ed_loss = frame_loss(&ends.index_select0(&[0])?.reshape(&[h, w])?, &ed.to_tensor(), alpha)?;
    let es_loss = frame_loss(&ends.index_select0(&[1])?.reshape(&[h, w])?, &es.to_tensor(), alpha)?;
    Ok(ed_loss.add(&es_loss)?.scale(0.5)?)
}

/// Hard Dice coefficient; 1.0 when both masks are empty.
pub fn dice_metric(p: &BinaryMask, g: &BinaryMask) -> Result<f64> {
    p.ensure_same_shape(g)?;
    let inter = p.bits().iter().zip(g.bits()).filter(|(a, b)| **a && **b).count();
    let total = p.count() + g.count();
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

/// Exact squared Euclidean distance from every pixel to the nearest seed
/// pixel, by separable lower envelopes of parabolas. Seedless images map
/// to infinity.
pub fn squared_distance_transform(height: usize, width: usize, seeds: &[(usize, usize)]) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; height * width];
    for &(r, c) in seeds {
        d[r * width + c] = 0.0;
    }
    let mut buf = Vec::new();
    for r in 0..height {
        buf.clear();
        buf.extend_from_slice(&d[r * width..(r + 1) * width]);
        let out = edt_1d(&buf);
        d[r * width..(r + 1) * width].copy_from_slice(&out);
    }
    for c in 0..width {
        buf.clear();
        buf.extend((0..height).map(|r| d[r * width + c]));
        let out = edt_1d(&buf);
        for (r, v) in out.into_iter().enumerate() {
            d[r * width + c] = v;
        }
    }
    d
}

fn edt_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let sites: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if sites.is_empty() {
        return vec![f64::INFINITY; n];
    }
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    let cross = |q: usize, p: usize| {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf))
    };
    for &q in &sites {
        while let Some(&p) = v.last() {
            if v.len() > 1 && cross(q, p) <= z[z.len() - 1] {
                v.pop();
                z.pop();
            } else {
                break;
            }
        }
        if v.is_empty() {
            z.push(f64::NEG_INFINITY);
        } else {
            z.push(cross(q, *v.last().unwrap()));
        }
        v.push(q);
    }
    let mut out = vec![0.0; n];
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *o = dq * dq + f[v[k]];
    }
    out
}

/// Percentile `q` in `[0, 100]` of `values` with linear interpolation
/// between closest ranks.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Directed distances from each boundary pixel of `from` to the nearest
/// boundary pixel of `to`.
fn directed_boundary_distances(from: &BinaryMask, to: &BinaryMask) -> Vec<f64> {
    let (h, w) = to.dims();
    let field = squared_distance_transform(h, w, &to.boundary());
    from.boundary().into_iter().map(|(r, c)| field[r * w + c].sqrt()).collect()
}

/// 95th-percentile Hausdorff distance in pixels over the pooled boundary
/// distances in both directions.
pub fn hd95(p: &BinaryMask, g: &BinaryMask) -> Result<f64> {
    p.ensure_same_shape(g)?;
    if p.is_empty() {
        return Err(Error::EmptyMask("hd95 prediction"));
    }
    if g.is_empty() {
        return Err(Error::EmptyMask("hd95 reference"));
    }
    let mut pooled = directed_boundary_distances(p, g);
    pooled.extend(directed_boundary_distances(g, p));
    Ok(percentile(&pooled, 95.0).expect("non-empty masks have boundary pixels"))
}

/// Agreement between predicted and reference ejection fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfStats {
    /// Pearson correlation; `None` when either list has zero variance.
    pub corr: Option<f64>,
    /// Mean of `pred - true`.
    pub bias: f64,
    /// Population standard deviation of `pred - true`.
    pub std: f64,
    pub n: usize,
}

pub fn ef_stats(pred: &[f64], truth: &[f64]) -> Result<EfStats> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::invalid("ef_stats", format!("lengths {} and {}", pred.len(), truth.len())));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    let corr = (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0));
    let diffs: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| p - t).collect();
    let bias = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - bias).powi(2)).sum::<f64>() / n;
    Ok(EfStats { corr, bias, std: var.sqrt(), n: pred.len() })
}

/// One row of the per-clip metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub clip_id: String,
    pub dice_ed: f64,
    pub dice_es: f64,
    pub hd95_ed: Option<f64>,
    pub hd95_es: Option<f64>,
    pub ef_true: Option<f64>,
    pub ef_pred: Option<f64>,
}

impl ClipMetrics {
    pub fn mean_dice(&self) -> f64 {
        0.5 * (self.dice_ed + self.dice_es)
    }
}

/// Dataset-level aggregate of [`ClipMetrics`] rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub clips: usize,
    /// Mean over clips of the per-clip ED/ES average.
    pub dice: f64,
    /// Mean over all finite HD95 values.
    pub hd95: Option<f64>,
    pub hd95_missing: usize,
    pub ef: Option<EfStats>,
    pub ef_missing: usize,
}

pub fn summarize(rows: &[ClipMetrics]) -> Result<MetricSummary> {
    if rows.is_empty() {
        return Err(Error::Data("no clips to summarize".into()));
    }
    let dice = rows.iter().map(ClipMetrics::mean_dice).sum::<f64>() / rows.len() as f64;
    let hds: Vec<f64> = rows.iter().flat_map(|r| [r.hd95_ed, r.hd95_es]).flatten().collect();
    let hd95_missing = 2 * rows.len() - hds.len();
    if hd95_missing > 0 {
        log::warn!("{hd95_missing} HD95 values missing (empty masks) and excluded");
    }
    let hd95 = (!hds.is_empty()).then(|| hds.iter().sum::<f64>() / hds.len() as f64);
    let (pred, truth): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| Some((r.ef_pred?, r.ef_true?)))
        .unzip();
    let ef_missing = rows.len() - pred.len();
    let ef = if pred.is_empty() { None } else { Some(ef_stats(&pred, &truth)?) };
    Ok(MetricSummary { clips: rows.len(), dice, hd95, hd95_missing, ef, ef_missing })
}

pub fn write_metrics_csv(w: impl Write, rows: &[ClipMetrics]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics_csv(r: impl std::io::Read) -> Result<Vec<ClipMetrics>> {
    csv::Reader::from_reader(r).deserialize().map(|row| row.map_err(Error::from)).collect()
}
