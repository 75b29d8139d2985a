//! Training and evaluation.
//!
//! Adam with cosine-annealed learning rate, loss on the annotated first and
//! last frames only, per-epoch validation, CSV logging and resumable
//! checkpoints. Runs are bit-reproducible for a fixed seed: every random
//! stream (shuffling, augmentation) is derived from the seed and the epoch.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, apply_net_key, Progress};
use crate::ef::{self, DEFAULT_DISKS};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::metrics::{clip_loss, dice_metric, hd95, summarize, ClipMetrics, MetricSummary, DEFAULT_ALPHA};
use crate::model::{HssNet, NetConfig};
use crate::nn::Module;
use crate::synth::{augment, parse_key_values, read_dataset, AugmentConfig, ClipRecord, CorpusSpec};
use crate::tensor::{no_grad, Tensor};

/// Where training clips come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// A generated corpus split in order into train / val / test.
    Synth { corpus: CorpusSpec, train: usize, val: usize, test: usize, seed: u64 },
    /// Clip directories on disk.
    Dirs { train: PathBuf, val: Option<PathBuf>, test: Option<PathBuf> },
}

#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<ClipRecord>,
    pub val: Vec<ClipRecord>,
    pub test: Vec<ClipRecord>,
}

impl DataSource {
    pub fn load(&self) -> Result<Splits> {
        let splits = match self {
            DataSource::Synth { corpus, train, val, test, seed } => {
                let mut all = corpus.generate(train + val + test, *seed)?;
                let test_part = all.split_off(train + val);
                let val_part = all.split_off(*train);
                Splits { train: all, val: val_part, test: test_part }
            }
            DataSource::Dirs { train, val, test } => Splits {
                train: read_dataset(train)?,
                val: val.as_ref().map(read_dataset).transpose()?.unwrap_or_default(),
                test: test.as_ref().map(read_dataset).transpose()?.unwrap_or_default(),
            },
        };
        if splits.train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        Ok(splits)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub lr_max: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub alpha: f64,
    pub augment: Option<AugmentConfig>,
    pub data: DataSource,
    /// Output directory for the checkpoint and the CSV log.
    pub out_dir: Option<PathBuf>,
    pub checkpoint_every: usize,
    pub resume: Option<PathBuf>,
    /// Stop after this many completed epochs (the schedule still spans
    /// `epochs`); used to interrupt and later resume a run.
    pub stop_after: Option<usize>,
    pub n_disks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            lr_max: 1e-4,
            lr_min: 1e-5,
            epochs: 120,
            batch: 2,
            seed: 0,
            alpha: DEFAULT_ALPHA,
            augment: Some(AugmentConfig::default()),
            data: DataSource::Synth { corpus: CorpusSpec::with_size(64), train: 32, val: 16, test: 16, seed: 0 },
            out_dir: None,
            checkpoint_every: 1,
            resume: None,
            stop_after: None,
            n_disks: DEFAULT_DISKS,
        }
    }
}

fn cfg_err(key: &str, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {e}"))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::Config(format!("need 0 < lr_min <= lr_max, got {} and {}", self.lr_min, self.lr_max)));
        }
        if self.epochs == 0 || self.batch == 0 || self.checkpoint_every == 0 || self.n_disks == 0 {
            return Err(Error::Config("epochs, batch, checkpoint_every and n_disks must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }

    /// Parses line-oriented `key = value` text. Relative paths resolve
    /// against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let mut cfg = TrainConfig::default();
        let mut corpus = CorpusSpec::with_size(64);
        let (mut n_train, mut n_val, mut n_test, mut data_seed) = (32, 16, 16, 0);
        let (mut train_dir, mut val_dir, mut test_dir) = (None, None, None);
        let mut aug = AugmentConfig::default();
        let mut use_aug = true;
        let path = |v: &str| base.join(v);
        if let Some(v) = kv.get("synth_size") {
            corpus = CorpusSpec::with_size(v.parse().map_err(|e| cfg_err("synth_size", e))?);
        }
        if let Some(v) = kv.get("synth_spec") {
            let p = path(v);
            let text = fs::read_to_string(&p).map_err(|e| cfg_err("synth_spec", format!("{}: {e}", p.display())))?;
            corpus = CorpusSpec::parse(&text)?;
        }
        for (k, v) in &kv {
            if apply_net_key(&mut cfg.net, k, v)? {
                continue;
            }
            let num = |v: &str| v.parse::<f64>().map_err(|e| cfg_err(k, e));
            let int = |v: &str| v.parse::<usize>().map_err(|e| cfg_err(k, e));
            match k.as_str() {
                "lr_max" => cfg.lr_max = num(v)?,
                "lr_min" => cfg.lr_min = num(v)?,
                "epochs" => cfg.epochs = int(v)?,
                "batch" => cfg.batch = int(v)?,
                "seed" => cfg.seed = v.parse().map_err(|e| cfg_err(k, e))?,
                "alpha" => cfg.alpha = num(v)?,
                "augment" => use_aug = v.parse().map_err(|e| cfg_err(k, e))?,
                "augment_prob" => aug.prob = num(v)?,
                "out_dir" => cfg.out_dir = Some(path(v)),
                "checkpoint_every" => cfg.checkpoint_every = int(v)?,
                "resume" => cfg.resume = Some(path(v)),
                "stop_after" => cfg.stop_after = Some(int(v)?),
                "n_disks" => cfg.n_disks = int(v)?,
                "synth_size" | "synth_spec" => {}
                "synth_train" => n_train = int(v)?,
                "synth_val" => n_val = int(v)?,
                "synth_test" => n_test = int(v)?,
                "synth_seed" => data_seed = v.parse().map_err(|e| cfg_err(k, e))?,
                "train_dir" => train_dir = Some(path(v)),
                "val_dir" => val_dir = Some(path(v)),
                "test_dir" => test_dir = Some(path(v)),
                other => return Err(Error::Config(format!("unknown key '{other}'"))),
            }
        }
        cfg.augment = use_aug.then_some(aug);
        cfg.data = match train_dir {
            Some(train) => DataSource::Dirs { train, val: val_dir, test: test_dir },
            None => DataSource::Synth { corpus, train: n_train, val: n_val, test: n_test, seed: data_seed },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total`.
pub fn lr_schedule(step: usize, total: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid("lr_schedule", "total_steps must be positive"));
    }
    if step > total {
        return Err(Error::invalid("lr_schedule", format!("step {step} beyond total {total}")));
    }
    if step == total {
        return Ok(lr_min);
    }
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * step as f64 / total as f64).cos()))
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
    pub skipped: usize,
}

impl Default for Adam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, moments: BTreeMap::new(), skipped: 0 }
    }
}

impl Adam {
    /// One update of every parameter of `module` from its accumulated
    /// gradients. Returns `false` (and counts the skip) when any gradient
    /// is non-finite; parameters and moments are then left untouched.
    pub fn step(&mut self, module: &mut dyn Module, lr: f64) -> Result<bool> {
        let grads: Vec<(String, Vec<f64>)> = module
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.grad().unwrap_or_else(|| vec![0.0; t.numel()])))
            .collect();
        if grads.iter().any(|(_, g)| g.iter().any(|v| !v.is_finite())) {
            self.skipped += 1;
            log::warn!("non-finite gradient; step skipped ({} so far)", self.skipped);
            return Ok(false);
        }
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let mut grads: BTreeMap<String, Vec<f64>> = grads.into_iter().collect();
        let moments = &mut self.moments;
        let mut failure = None;
        module.visit("", &mut |name, p| {
            let g = grads.remove(name).expect("visit order is stable");
            let (m, v) = moments.entry(name.to_string()).or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            let mut data = p.to_vec();
            for i in 0..data.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                data[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
            match p.with_data(data) {
                Ok(t) => *p = t,
                Err(e) => failure = Some(e),
            }
        });
        if let Some(e) = failure {
            return Err(e.into());
        }
        Ok(true)
    }
}

/// One row of the per-epoch training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_dice: Option<f64>,
    pub val_hd95: Option<f64>,
    pub val_ef_corr: Option<f64>,
    pub val_ef_bias: Option<f64>,
    pub skipped_steps: usize,
}

pub struct TrainOutcome {
    pub net: HssNet,
    pub log: Vec<EpochLog>,
    pub optimizer: Adam,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 31;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^ (x >> 29)
}

/// Forward + loss + backward over one batch; returns the mean loss.
fn batch_step(net: &mut HssNet, clips: &[ClipRecord], alpha: f64) -> Result<f64> {
    net.zero_grad();
    let mut total: Option<Tensor> = None;
    for clip in clips {
        let logits = net.forward(&clip.frames)?;
        let loss = clip_loss(&logits, &clip.ed_mask, &clip.es_mask, alpha)?;
        total = Some(match total {
            Some(t) => t.add(&loss)?,
            None => loss,
        });
    }
    let mean = total.expect("non-empty batch").scale(1.0 / clips.len() as f64)?;
    mean.backward()?;
    Ok(mean.item())
}

pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Trains from scratch or from `cfg.resume` on `data`.
pub fn train(cfg: &TrainConfig, data: &Splits) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let (mut net, mut opt, start) = match &cfg.resume {
        Some(dir) => {
            let ck = checkpoint::load(dir)?;
            if ck.net.config != cfg.net {
                return Err(Error::Checkpoint("resume checkpoint architecture differs from the config".into()));
            }
            let mut opt = Adam { skipped: ck.progress.skipped_steps, ..Adam::default() };
            if let Some((t, moments)) = ck.optimizer {
                opt.t = t;
                opt.moments = moments;
            }
            log::info!("resuming at epoch {} step {}", ck.progress.epoch, ck.progress.step);
            (ck.net, opt, ck.progress)
        }
        None => (HssNet::new(cfg.net.clone())?, Adam::default(), Progress::default()),
    };
    let steps_per_epoch = data.train.len().div_ceil(cfg.batch);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut step = start.step;
    let mut log = Vec::new();
    let mut log_writer = match &cfg.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(LOG_FILE);
            let append = cfg.resume.is_some() && path.exists();
            let file = fs::OpenOptions::new().create(true).append(append).write(true).truncate(!append).open(path)?;
            Some(csv::WriterBuilder::new().has_headers(!append).from_writer(file))
        }
        None => None,
    };
    let last_epoch = cfg.stop_after.map_or(cfg.epochs, |s| s.min(cfg.epochs));
    for epoch in start.epoch..last_epoch {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, 1)));
        let mut loss_sum = 0.0;
        let mut lr = cfg.lr_max;
        for chunk in order.chunks(cfg.batch) {
            lr = lr_schedule(step, total_steps, cfg.lr_max, cfg.lr_min)?;
            let clips: Vec<ClipRecord> = chunk
                .iter()
                .map(|&i| match &cfg.augment {
                    Some(a) => augment(&data.train[i], a, mix(cfg.seed, epoch as u64, 2 + i as u64)),
                    None => Ok(data.train[i].clone()),
                })
                .collect::<Result<_>>()?;
            loss_sum += batch_step(&mut net, &clips, cfg.alpha)?;
            opt.step(&mut net, lr)?;
            step += 1;
        }
        net.zero_grad();
        let val = if data.val.is_empty() { None } else { Some(summarize(&evaluate(&net, &data.val, cfg.n_disks)?)?) };
        let row = EpochLog {
            epoch: epoch + 1,
            step,
            lr,
            train_loss: loss_sum / steps_per_epoch as f64,
            val_dice: val.as_ref().map(|v| v.dice),
            val_hd95: val.as_ref().and_then(|v| v.hd95),
            val_ef_corr: val.as_ref().and_then(|v| v.ef.and_then(|e| e.corr)),
            val_ef_bias: val.as_ref().and_then(|v| v.ef.map(|e| e.bias)),
            skipped_steps: opt.skipped,
        };
        log::info!(
            "epoch {:>3} loss {:.4} val dice {} ef corr {}",
            row.epoch,
            row.train_loss,
            row.val_dice.map_or("-".into(), |d| format!("{d:.4}")),
            row.val_ef_corr.map_or("-".into(), |c| format!("{c:.3}")),
        );
        if let Some(w) = log_writer.as_mut() {
            w.serialize(&row)?;
            w.flush()?;
        }
        log.push(row);
        let done = epoch + 1;
        if let Some(dir) = &cfg.out_dir {
            if done % cfg.checkpoint_every == 0 || done == last_epoch {
                let progress = Progress { epoch: done, step, skipped_steps: opt.skipped };
                checkpoint::save(dir.join(CHECKPOINT_DIR), &mut net, &progress, Some((opt.t, &opt.moments)))?;
            }
        }
    }
    Ok(TrainOutcome { net, log, optimizer: opt })
}

/// Thresholded ED and ES predictions of `net` for one clip.
pub fn predict_masks(net: &HssNet, clip: &ClipRecord) -> Result<(BinaryMask, BinaryMask)> {
    let logits = no_grad(|| net.forward(&clip.frames))?;
    let t = logits.shape()[0];
    let ed = BinaryMask::from_tensor(&logits.index_select0(&[0])?, 0.0)?;
    let es = BinaryMask::from_tensor(&logits.index_select0(&[t - 1])?, 0.0)?;
    Ok((ed, es))
}

/// Per-clip metrics of `net` on `clips`.
pub fn evaluate(net: &HssNet, clips: &[ClipRecord], n_disks: usize) -> Result<Vec<ClipMetrics>> {
    let preds = clips.iter().map(|c| predict_masks(net, c)).collect::<Result<Vec<_>>>()?;
    evaluate_predictions(clips, &preds, n_disks)
}

fn optional<T>(what: &str, id: &str, r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e @ (Error::EmptyMask(_) | Error::Invalid { .. })) => {
            log::warn!("{id}: {what} missing: {e}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Per-clip metrics for given ED/ES predictions. The reference EF is
/// measured on the reference masks with the same pipeline. Clips sharing a
/// `pair` meta value form a two-view study and both get its biplane EF.
pub fn evaluate_predictions(
    clips: &[ClipRecord],
    preds: &[(BinaryMask, BinaryMask)],
    n_disks: usize,
) -> Result<Vec<ClipMetrics>> {
    if clips.len() != preds.len() {
        return Err(Error::invalid("evaluate", format!("{} clips, {} predictions", clips.len(), preds.len())));
    }
    if clips.is_empty() {
        return Err(Error::Data("no clips to evaluate".into()));
    }
    let mut rows = Vec::with_capacity(clips.len());
    for (clip, (ed, es)) in clips.iter().zip(preds) {
        let id = clip.clip_id.as_str();
        rows.push(ClipMetrics {
            clip_id: clip.clip_id.clone(),
            dice_ed: dice_metric(ed, &clip.ed_mask)?,
            dice_es: dice_metric(es, &clip.es_mask)?,
            hd95_ed: optional("hd95_ed", id, hd95(ed, &clip.ed_mask))?,
            hd95_es: optional("hd95_es", id, hd95(es, &clip.es_mask))?,
            ef_true: optional("ef_true", id, ef::report_single_plane(&clip.ed_mask, &clip.es_mask, n_disks))?
                .map(|r| r.ef),
            ef_pred: optional("ef_pred", id, ef::report_single_plane(ed, es, n_disks))?.map(|r| r.ef),
        });
    }
    let mut pairs: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in clips.iter().enumerate() {
        if let Some(p) = c.meta.get("pair") {
            pairs.entry(p.as_str()).or_default().push(i);
        }
    }
    for (pair, idx) in pairs {
        let &[a, b] = idx.as_slice() else {
            log::warn!("pair '{pair}' has {} views; using single-plane EF", idx.len());
            continue;
        };
        let (ca, cb) = (&clips[a], &clips[b]);
        let truth = optional(
            "biplane ef_true",
            pair,
            ef::report_biplane(&ca.ed_mask, &ca.es_mask, &cb.ed_mask, &cb.es_mask, n_disks),
        )?;
        let pred = optional(
            "biplane ef_pred",
            pair,
            ef::report_biplane(&preds[a].0, &preds[a].1, &preds[b].0, &preds[b].1, n_disks),
        )?;
        for i in [a, b] {
            rows[i].ef_true = truth.map(|r| r.ef);
            rows[i].ef_pred = pred.map(|r| r.ef);
        }
    }
    Ok(rows)
}

/// Writes the per-clip CSV and returns the aggregate.
pub fn write_report(path: impl AsRef<Path>, rows: &[ClipMetrics]) -> Result<MetricSummary> {
    let file = fs::File::create(path)?;
    crate::metrics::write_metrics_csv(file, rows)?;
    summarize(rows)
}

/// JSON aggregate line for logs and the CLI.
pub fn summary_json(summary: &MetricSummary) -> Result<String> {
    let mut out = Vec::new();
    serde_json::to_writer(&mut out, summary)?;
    writeln!(out)?;
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}
