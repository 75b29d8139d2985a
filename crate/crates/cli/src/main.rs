//! Command-line entry point: training, evaluation, ejection fraction from
//! masks, scan-order inspection, synthetic data and report plots.
//!
//! Exit codes: 0 success, 1 internal failure, 2 configuration error,
//! 3 data error.

mod report;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hssnet::ef::{report_biplane, report_single_plane, DEFAULT_DISKS};
use hssnet::mask::BinaryMask;
use hssnet::metrics::read_metrics_csv;
use hssnet::scan::{make_order, PatchGrid, ScanDirection, ScanMode};
use hssnet::synth::{write_clip, CorpusSpec};
use hssnet::train::{evaluate, summary_json, train, write_report, TrainConfig, CHECKPOINT_DIR};
use hssnet::{checkpoint, synth, Error};

#[derive(Parser)]
#[command(name = "hssnet", version, about = "Echocardiography segmentation and ejection fraction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network from a `key = value` config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on a directory of clips.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Per-clip metrics CSV.
        #[arg(long, default_value = "metrics.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DISKS)]
        n_disks: usize,
    },
    /// Ejection fraction from ED/ES masks (single-plane, or biplane with a
    /// second view), or from a manifest of mask paths.
    Ef {
        #[arg(long, requires = "es", conflicts_with = "manifest")]
        ed: Option<PathBuf>,
        #[arg(long, requires = "ed")]
        es: Option<PathBuf>,
        #[arg(long, requires_all = ["es2", "ed"])]
        ed2: Option<PathBuf>,
        #[arg(long, requires = "ed2")]
        es2: Option<PathBuf>,
        /// Lines of `id ed.pgm es.pgm [ed2.pgm es2.pgm]`; paths are relative
        /// to the manifest.
        #[arg(long, required_unless_present = "ed")]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_DISKS)]
        n_disks: usize,
    },
    /// Print scan-order permutations as CSV.
    ScanDump {
        #[arg(long)]
        t: usize,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        mode: ScanMode,
        /// `forward`, `backward`, or both when omitted.
        #[arg(long)]
        direction: Option<ScanDirection>,
    },
    /// Generate synthetic clips.
    Synth {
        /// Corpus spec (`key = value`); defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// SVG scatter of predicted versus reference EF from a metrics CSV.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value = "ef_scatter.svg")]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Checkpoint(_) => 3,
        e if e.is_data_error() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> hssnet::error::Result<()> {
    let mut stdout = io::stdout().lock();
    match command {
        Command::Train { config } => {
            let cfg = TrainConfig::from_file(&config)?;
            let data = cfg.data.load()?;
            log::info!("{} train / {} val / {} test clips", data.train.len(), data.val.len(), data.test.len());
            let outcome = train(&cfg, &data)?;
            if let (Some(dir), false) = (&cfg.out_dir, data.test.is_empty()) {
                let rows = evaluate(&outcome.net, &data.test, cfg.n_disks)?;
                let summary = write_report(dir.join("test_metrics.csv"), &rows)?;
                stdout.write_all(summary_json(&summary)?.as_bytes())?;
                log::info!("checkpoint in {}", dir.join(CHECKPOINT_DIR).display());
            }
        }
        Command::Eval { ckpt, data, out, n_disks } => {
            let ck = checkpoint::load(&ckpt)?;
            let clips = synth::read_dataset(&data)?;
            let rows = evaluate(&ck.net, &clips, n_disks)?;
            let summary = write_report(&out, &rows)?;
            stdout.write_all(summary_json(&summary)?.as_bytes())?;
        }
        Command::Ef { ed, es, ed2, es2, manifest, n_disks } => {
            if let Some(m) = manifest {
                run_manifest(&m, n_disks, &mut stdout)?;
            } else {
                let (ed, es) = (ed.expect("clap requires --ed"), es.expect("clap requires --es"));
                let second = ed2.zip(es2);
                let report = ef_for(&ed, &es, second.as_ref().map(|(a, b)| (a.as_path(), b.as_path())), n_disks)?;
                writeln!(stdout, "{}", serde_json::to_string(&report)?)?;
            }
        }
        Command::ScanDump { t, rows, cols, mode, direction } => {
            let grid = PatchGrid::new(t, rows, cols).map_err(|e| Error::Config(e.to_string()))?;
            let dirs = direction.map_or(ScanDirection::BOTH.to_vec(), |d| vec![d]);
            writeln!(stdout, "mode,direction,step,slot,t,row,col")?;
            for d in dirs {
                let order = make_order(grid, mode, d);
                for (k, &slot) in order.perm.iter().enumerate() {
                    let (ti, rem) = (slot / grid.positions(), slot % grid.positions());
                    let dname = if d == ScanDirection::Forward { "forward" } else { "backward" };
                    writeln!(stdout, "{mode},{dname},{k},{slot},{ti},{},{}", rem / cols, rem % cols)?;
                }
            }
        }
        Command::Synth { spec, n, out, seed } => {
            let corpus = match spec {
                Some(p) => CorpusSpec::parse(
                    &fs::read_to_string(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
                )?,
                None => CorpusSpec::with_size(64),
            };
            fs::create_dir_all(&out)?;
            for (i, rec) in (0..n as u64).map(|i| (i, synth::generate(&corpus.sample(seed + i), seed + i))) {
                let rec = rec?;
                write_clip(&out, &rec)?;
                log::debug!("clip {i}: {} ef {:.1}", rec.clip_id, rec.true_ef.unwrap_or(f64::NAN));
            }
            writeln!(stdout, "wrote {n} clips to {}", out.display())?;
        }
        Command::Report { metrics, out } => {
            let file = fs::File::open(&metrics).map_err(|e| Error::Data(format!("{}: {e}", metrics.display())))?;
            let rows = read_metrics_csv(file)?;
            let points: Vec<(f64, f64)> = rows.iter().filter_map(|r| Some((r.ef_true?, r.ef_pred?))).collect();
            if points.is_empty() {
                return Err(Error::Data("no clips with both reference and predicted EF".into()));
            }
            fs::write(&out, report::scatter_svg(&points)?)?;
            writeln!(stdout, "wrote {} points to {}", points.len(), out.display())?;
        }
    }
    Ok(())
}

fn ef_for(ed: &Path, es: &Path, second: Option<(&Path, &Path)>, n_disks: usize) -> hssnet::error::Result<hssnet::ef::EfReport> {
    let (ed, es) = (BinaryMask::read_pgm(ed)?, BinaryMask::read_pgm(es)?);
    match second {
        Some((ed2, es2)) => {
            report_biplane(&ed, &es, &BinaryMask::read_pgm(ed2)?, &BinaryMask::read_pgm(es2)?, n_disks)
        }
        None => report_single_plane(&ed, &es, n_disks),
    }
}

#[derive(serde::Serialize)]
struct ManifestLine<'a> {
    id: &'a str,
    #[serde(flatten)]
    report: hssnet::ef::EfReport,
}

fn run_manifest(path: &Path, n_disks: usize, out: &mut impl Write) -> hssnet::error::Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let p = |i: usize| base.join(f[i]);
        let report = match f.len() {
            3 => ef_for(&p(1), &p(2), None, n_disks)?,
            5 => ef_for(&p(1), &p(2), Some((&p(3), &p(4))), n_disks)?,
            n => {
                return Err(Error::Data(format!(
                    "{} line {}: expected 3 or 5 fields, got {n}",
                    path.display(),
                    no + 1
                )))
            }
        };
        writeln!(out, "{}", serde_json::to_string(&ManifestLine { id: f[0], report })?)?;
    }
    Ok(())
}
