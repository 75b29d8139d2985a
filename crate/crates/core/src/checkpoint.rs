//! On-disk checkpoints: a text manifest plus named tensor files.
//!
//! ```text
//! <dir>/manifest.txt    key = value architecture and progress
//! <dir>/weights.bin     named tensors in visit order
//! <dir>/optimizer.bin   Adam moments (optional)
//! ```
//!
//! A named-tensor file is a little-endian `u64` count followed by, for each
//! entry, a `u32` name length, the UTF-8 name and one encoded tensor.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::blocks::BlockConfig;
use crate::error::{Error, Result};
use crate::model::{HssNet, NetConfig, StageKind};
use crate::nn::Module;
use crate::scan::ModeSet;
use crate::synth::parse_key_values;
use crate::tensor::{read_tensor, write_tensor, Tensor};

pub const MANIFEST: &str = "manifest.txt";
pub const WEIGHTS: &str = "weights.bin";
pub const OPTIMIZER: &str = "optimizer.bin";

pub fn write_named(w: &mut impl Write, tensors: &[(String, Tensor)]) -> Result<()> {
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write_tensor(w, t)?;
    }
    Ok(())
}

pub fn read_named(r: &mut impl Read) -> Result<Vec<(String, Tensor)>> {
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8);
    let mut out = Vec::new();
    for _ in 0..n {
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let len = u32::from_le_bytes(b4) as usize;
        if len > 4096 {
            return Err(Error::Checkpoint(format!("tensor name length {len} is implausible")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
        out.push((name, read_tensor(r)?));
    }
    Ok(out)
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<[T; 4]>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = v
        .split(',')
        .map(|s| s.trim().parse::<T>().map_err(|e| Error::Config(format!("{key}: '{s}': {e}"))))
        .collect::<Result<_>>()?;
    items.try_into().map_err(|_| Error::Config(format!("{key}: expected 4 comma-separated values, got '{v}'")))
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse().map_err(|e| Error::Config(format!("{key}: '{v}': {e}")))
}

/// Applies one architecture key to `cfg`; returns `false` for keys that are
/// not architecture keys.
pub fn apply_net_key(cfg: &mut NetConfig, key: &str, v: &str) -> Result<bool> {
    match key {
        "channels" => cfg.blocks.channels = parse_list(key, v)?,
        "encoder_blocks" => cfg.blocks.encoder_blocks = parse_list(key, v)?,
        "decoder_blocks" => cfg.blocks.decoder_blocks = parse_list(key, v)?,
        "ffn_expansion" => cfg.blocks.ffn_expansion = parse_value(key, v)?,
        "conv_expansion" => cfg.blocks.conv_expansion = parse_value(key, v)?,
        "d_state" => cfg.blocks.d_state = parse_value(key, v)?,
        "stage_types" => cfg.stage_kinds = parse_list::<StageKind>(key, v)?,
        "scan_modes" => cfg.scan_modes = v.parse::<ModeSet>().map_err(|e| Error::Config(format!("{key}: {e}")))?,
        "share_directions" => cfg.share_directions = parse_value(key, v)?,
        "init_seed" => cfg.init_seed = parse_value(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Training progress stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Progress {
    pub epoch: usize,
    pub step: usize,
    pub skipped_steps: usize,
}

pub struct Checkpoint {
    pub net: HssNet,
    pub progress: Progress,
    /// Adam step count and per-parameter first/second moments.
    pub optimizer: Option<(u64, BTreeMap<String, (Vec<f64>, Vec<f64>)>)>,
}

pub fn save(
    dir: impl AsRef<Path>,
    net: &mut HssNet,
    progress: &Progress,
    optimizer: Option<(u64, &BTreeMap<String, (Vec<f64>, Vec<f64>)>)>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest: Vec<(String, String)> = net.manifest();
    manifest.push(("init_seed".into(), net.config.init_seed.to_string()));
    manifest.push(("epoch".into(), progress.epoch.to_string()));
    manifest.push(("step".into(), progress.step.to_string()));
    manifest.push(("skipped_steps".into(), progress.skipped_steps.to_string()));
    if let Some((t, _)) = optimizer {
        manifest.push(("adam_steps".into(), t.to_string()));
    }
    let text: String = manifest.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    fs::write(dir.join(MANIFEST), text)?;

    let params = net.named_params();
    let mut w = BufWriter::new(File::create(dir.join(WEIGHTS))?);
    write_named(&mut w, &params)?;
    w.flush()?;

    if let Some((_, moments)) = optimizer {
        let mut entries = Vec::with_capacity(2 * moments.len());
        for (name, t) in &params {
            let Some((m, v)) = moments.get(name) else { continue };
            entries.push((format!("m.{name}"), Tensor::from_vec(t.shape(), m.clone())?));
            entries.push((format!("v.{name}"), Tensor::from_vec(t.shape(), v.clone())?));
        }
        let mut w = BufWriter::new(File::create(dir.join(OPTIMIZER))?);
        write_named(&mut w, &entries)?;
        w.flush()?;
    } else if dir.join(OPTIMIZER).exists() {
        fs::remove_file(dir.join(OPTIMIZER))?;
    }
    Ok(())
}

/// Architecture stored in a checkpoint manifest.
pub fn read_config(dir: impl AsRef<Path>) -> Result<(NetConfig, BTreeMap<String, String>)> {
    let path = dir.as_ref().join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let kv = parse_key_values(&text)?;
    let mut cfg = NetConfig { blocks: BlockConfig::default(), ..NetConfig::default() };
    for (k, v) in &kv {
        apply_net_key(&mut cfg, k, v)?;
    }
    Ok((cfg, kv))
}

pub fn load(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let (cfg, kv) = read_config(dir)?;
    let get = |k: &str| -> Result<usize> { kv.get(k).map_or(Ok(0), |v| parse_value(k, v)) };
    let progress = Progress { epoch: get("epoch")?, step: get("step")?, skipped_steps: get("skipped_steps")? };
    let mut net = HssNet::new(cfg)?;
    let stored = read_named(&mut BufReader::new(File::open(dir.join(WEIGHTS))?))?;
    load_weights(&mut net, stored)?;

    let optimizer = if dir.join(OPTIMIZER).exists() {
        let t: u64 = kv.get("adam_steps").map_or(Ok(0), |v| parse_value("adam_steps", v))?;
        let mut moments: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for (name, tensor) in read_named(&mut BufReader::new(File::open(dir.join(OPTIMIZER))?))? {
            let (kind, pname) = name
                .split_once('.')
                .ok_or_else(|| Error::Checkpoint(format!("bad optimizer entry '{name}'")))?;
            let slot = moments.entry(pname.to_string()).or_default();
            match kind {
                "m" => slot.0 = tensor.to_vec(),
                "v" => slot.1 = tensor.to_vec(),
                _ => return Err(Error::Checkpoint(format!("bad optimizer entry '{name}'"))),
            }
        }
        Some((t, moments))
    } else {
        None
    };
    Ok(Checkpoint { net, progress, optimizer })
}

/// Replaces every parameter of `net` with the stored tensor of the same
/// name; names and shapes must match exactly.
pub fn load_weights(net: &mut HssNet, stored: Vec<(String, Tensor)>) -> Result<()> {
    let mut by_name: BTreeMap<String, Tensor> = stored.into_iter().collect();
    let mut failure = None;
    net.visit("", &mut |name, t| {
        if failure.is_some() {
            return;
        }
        match by_name.remove(name) {
            Some(s) if s.shape() == t.shape() => match t.with_data(s.to_vec()) {
                Ok(p) => *t = p,
                Err(e) => failure = Some(Error::from(e)),
            },
            Some(s) => {
                failure = Some(Error::Checkpoint(format!(
                    "parameter {name}: stored shape {:?}, model expects {:?}",
                    s.shape(),
                    t.shape()
                )))
            }
            None => failure = Some(Error::Checkpoint(format!("parameter {name} missing from checkpoint"))),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::Checkpoint(format!("checkpoint has unknown parameter {extra}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::BlockConfig;
    use crate::model::IMAGE_LEVEL;

    fn tiny() -> NetConfig {
        NetConfig {
            blocks: BlockConfig {
                channels: [4, 8, 16, 32],
                encoder_blocks: [1, 1, 1, 1],
                decoder_blocks: [1, 1, 1, 1],
                ffn_expansion: 2,
                conv_expansion: 2,
                d_state: 4,
            },
            ..NetConfig::default()
        }
    }

    #[test]
    fn round_trip_weights_and_moments() {
        let dir = tempfile::tempdir().unwrap();
        let mut net = HssNet::new(NetConfig { init_seed: 5, ..tiny() }).unwrap();
        let moments: BTreeMap<String, (Vec<f64>, Vec<f64>)> = net
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, (vec![0.25; t.numel()], vec![0.5; t.numel()])))
            .collect();
        let progress = Progress { epoch: 3, step: 12, skipped_steps: 1 };
        save(dir.path(), &mut net, &progress, Some((12, &moments))).unwrap();
        let mut back = load(dir.path()).unwrap();
        assert_eq!(back.progress, progress);
        assert_eq!(back.net.config, net.config);
        let (t, m) = back.optimizer.unwrap();
        assert_eq!(t, 12);
        assert_eq!(m, moments);
        for ((na, a), (nb, b)) in net.named_params().iter().zip(back.net.named_params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(a.data(), b.data());
            assert!(b.requires_grad());
        }
    }

    #[test]
    fn mismatched_architecture_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut net = HssNet::new(tiny()).unwrap();
        save(dir.path(), &mut net, &Progress::default(), None).unwrap();
        let stored = read_named(&mut BufReader::new(File::open(dir.path().join(WEIGHTS)).unwrap())).unwrap();
        let mut other = HssNet::new(NetConfig { stage_kinds: IMAGE_LEVEL, ..tiny() }).unwrap();
        assert!(matches!(load_weights(&mut other, stored), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn manifest_parse_errors_are_config_errors() {
        let mut cfg = tiny();
        assert!(matches!(apply_net_key(&mut cfg, "channels", "1,2,3"), Err(Error::Config(_))));
        assert!(matches!(apply_net_key(&mut cfg, "stage_types", "conv,conv,lstm,mamba"), Err(Error::Config(_))));
        assert!(!apply_net_key(&mut cfg, "lr_max", "1").unwrap());
        assert!(apply_net_key(&mut cfg, "stage_types", "conv,conv,conv,mamba").unwrap());
        assert_eq!(cfg.stage_kinds[3], StageKind::Mamba);
    }
}
