//! End-to-end checks of the command-line interface.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hssnet::mask::BinaryMask;

fn hssnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hssnet")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn rect(h: usize, w: usize, top: usize, left: usize, rows: usize, cols: usize) -> BinaryMask {
    BinaryMask::from_fn(h, w, |r, c| (top..top + rows).contains(&r) && (left..left + cols).contains(&c))
}

#[test]
fn scan_dump_temporal_is_identity() {
    let o = hssnet(&["scan-dump", "--t", "2", "--rows", "2", "--cols", "2", "--mode", "temporal", "--direction", "forward"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "mode,direction,step,slot,t,row,col");
    let slots: Vec<usize> = lines[1..].iter().map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(slots, (0..8).collect::<Vec<_>>());
}

#[test]
fn scan_dump_spatial_both_directions() {
    let o = hssnet(&["scan-dump", "--t", "2", "--rows", "2", "--cols", "2", "--mode", "spatial"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let slots: Vec<usize> = text.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(&slots[..8], &[0, 4, 1, 5, 2, 6, 3, 7]);
    assert_eq!(&slots[8..], &[7, 3, 6, 2, 5, 1, 4, 0]);
}

#[test]
fn scan_dump_bad_grid_is_config_error() {
    let o = hssnet(&["scan-dump", "--t", "0", "--rows", "2", "--cols", "2", "--mode", "spatial"]);
    assert_eq!(o.status.code(), Some(2));
    let o = hssnet(&["scan-dump", "--t", "1", "--rows", "2", "--cols", "2", "--mode", "zigzag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ef_single_plane_and_biplane() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    rect(64, 64, 10, 20, 40, 20).write_pgm(p("ed.pgm")).unwrap();
    rect(64, 64, 10, 24, 40, 12).write_pgm(p("es.pgm")).unwrap();
    let o = hssnet(&["ef", "--ed", &p("ed.pgm"), "--es", &p("es.pgm")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let ef = v["ef"].as_f64().unwrap();
    assert!((ef - 100.0 * (1.0 - 144.0 / 400.0)).abs() < 1e-9, "{ef}");
    assert!((v["edv"].as_f64().unwrap() - 12566.370614359172).abs() < 1e-6);

    let o = hssnet(&["ef", "--ed", &p("ed.pgm"), "--es", &p("es.pgm"), "--ed2", &p("ed.pgm"), "--es2", &p("es.pgm")]);
    assert!(o.status.success());
    let b: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(b["ef"], v["ef"]);
}

#[test]
fn ef_manifest_batch() {
    let dir = tempfile::tempdir().unwrap();
    rect(64, 64, 10, 20, 40, 20).write_pgm(dir.path().join("ed.pgm")).unwrap();
    rect(64, 64, 10, 24, 40, 12).write_pgm(dir.path().join("es.pgm")).unwrap();
    fs::write(dir.path().join("list.txt"), "# studies\na ed.pgm es.pgm\nb ed.pgm es.pgm ed.pgm es.pgm\n").unwrap();
    let o = hssnet(&["ef", "--manifest", &dir.path().join("list.txt").to_string_lossy()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["id"], "a");
    assert_eq!(lines[1]["id"], "b");
}

#[test]
fn ef_missing_or_empty_masks_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.pgm");
    BinaryMask::new(16, 16).write_pgm(&empty).unwrap();
    let e = empty.to_string_lossy();
    assert_eq!(hssnet(&["ef", "--ed", &e, "--es", &e]).status.code(), Some(3));
    assert_eq!(hssnet(&["ef", "--ed", "/nonexistent.pgm", "--es", &e]).status.code(), Some(3));
}

#[test]
fn synth_writes_clip_directories() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.txt");
    fs::write(&spec, "size = 32\nnoise = 0.1\n").unwrap();
    let out = dir.path().join("clips");
    let o = hssnet(&["synth", "--spec", &spec.to_string_lossy(), "--n", "2", "--out", &out.to_string_lossy()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let clips = hssnet::synth::read_dataset(&out).unwrap();
    assert_eq!(clips.len(), 2);
    assert_eq!(clips[0].dims(), (32, 32));

    fs::write(&spec, "size = 32\nshape = star\n").unwrap();
    let o = hssnet(&["synth", "--spec", &spec.to_string_lossy(), "--n", "1", "--out", &out.to_string_lossy()]);
    assert_eq!(o.status.code(), Some(2));
}

fn write_tiny_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let cfg = dir.join("cfg.txt");
    fs::write(
        &cfg,
        format!(
            "channels = 4,8,16,32\nencoder_blocks = 1,1,1,1\ndecoder_blocks = 1,1,1,1\nffn_expansion = 2\n\
             conv_expansion = 2\nd_state = 4\nepochs = 2\nlr_max = 1e-3\nsynth_size = 32\nsynth_train = 2\n\
             synth_val = 1\nsynth_test = 2\nout_dir = run\n{extra}"
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn train_eval_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path(), "");
    let o = hssnet(&["train", "--config", &cfg.to_string_lossy()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("run");
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,step,lr,train_loss,val_dice"));
    assert_eq!(log.lines().count(), 3);
    assert!(run.join("checkpoint/manifest.txt").exists());
    let summary: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(summary["clips"], 2);

    let data = dir.path().join("data");
    let o = hssnet(&["synth", "--spec", &dir.path().join("none").to_string_lossy(), "--n", "1", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(dir.path().join("s.txt"), "size = 32\n").unwrap();
    let o = hssnet(&["synth", "--spec", &dir.path().join("s.txt").to_string_lossy(), "--n", "2", "--out", &data.to_string_lossy()]);
    assert!(o.status.success());
    let metrics = dir.path().join("m.csv");
    let ck = run.join("checkpoint");
    let o = hssnet(&["eval", "--ckpt", &ck.to_string_lossy(), "--data", &data.to_string_lossy(), "--out", &metrics.to_string_lossy()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&metrics).unwrap();
    assert!(csv.starts_with("clip_id,dice_ed,dice_es,hd95_ed,hd95_es,ef_true,ef_pred"));
    assert_eq!(csv.lines().count(), 3);

    // An untrained tiny model may predict empty masks; give the report
    // command a file with known values instead.
    fs::write(&metrics, "clip_id,dice_ed,dice_es,hd95_ed,hd95_es,ef_true,ef_pred\na,1,1,0,0,50,52\nb,1,1,0,0,60,57\n").unwrap();
    let svg = dir.path().join("ef.svg");
    let o = hssnet(&["report", "--metrics", &metrics.to_string_lossy(), "--out", &svg.to_string_lossy()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&svg).unwrap().matches("<circle").count(), 2);
}

#[test]
fn bad_train_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path(), "lr_min = 1\n");
    assert_eq!(hssnet(&["train", "--config", &cfg.to_string_lossy()]).status.code(), Some(2));
    assert_eq!(hssnet(&["train", "--config", "/no/such/file"]).status.code(), Some(2));
}

#[test]
fn eval_on_empty_directory_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let o = hssnet(&["eval", "--ckpt", &dir.path().join("nockpt").to_string_lossy(), "--data", &empty.to_string_lossy()]);
    assert_eq!(o.status.code(), Some(3));
}
