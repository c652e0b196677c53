use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use sstrack::config::RunConfig;
use sstrack::eval::{aggregate, evaluate, sha256_file, timestamp, EvalReport, ReportMeta, TrackConfig};
use sstrack::model::{GroundTruthOracle, ModelConfig};
use sstrack::pipeline::{load_tracker, log_path, read_log, train};
use sstrack::synth::{generate_dataset_frames, read_dataset, write_dataset, Preset, DEFAULT_NUM_FRAMES};

#[derive(Parser)]
#[command(name = "sstrack", version, about = "Self-supervised single-object tracking on synthetic video")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic dataset.
    Generate {
        #[arg(long, default_value = "easy")]
        preset: Preset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sequence count; defaults to the preset's size.
        #[arg(long)]
        num: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_NUM_FRAMES)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a tracker; writes the checkpoint and a `.log.jsonl` beside it.
    Train {
        /// JSON run config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: bool,
    },
    /// Track every sequence and write a JSON report.
    Eval {
        #[arg(long, required_unless_present = "oracle")]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Use the ground-truth oracle instead of a checkpoint.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        multi_ref: bool,
        /// Size smoothing weight; defaults to 1 with --oracle.
        #[arg(long)]
        size_update: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Draw success, precision and (optionally) loss curves as SVG.
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training log, or a checkpoint whose log sits beside it.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run gradient and geometry self-checks.
    Selftest,
}

struct EvalArgs<'a> {
    ckpt: Option<&'a Path>,
    data: &'a Path,
    report: &'a Path,
    oracle: bool,
    multi_ref: bool,
    size_update: Option<f64>,
    seed: u64,
}

fn run_eval(args: EvalArgs) -> anyhow::Result<()> {
    let EvalArgs { ckpt, data, report, oracle, multi_ref, size_update, seed } = args;
    let data = read_dataset(data).with_context(|| format!("reading dataset {}", data.display()))?;
    if data.is_empty() {
        bail!("dataset is empty");
    }
    let base = if oracle { TrackConfig::exact() } else { TrackConfig::default() };
    let cfg = TrackConfig {
        multi_ref,
        size_update: size_update.unwrap_or(base.size_update),
        ..base
    };
    if !(cfg.size_update > 0.0 && cfg.size_update <= 1.0) {
        bail!("--size-update must lie in (0, 1]");
    }
    let (traces, ckpt_hash, config_hash) = if oracle {
        let o = GroundTruthOracle {
            cfg: ModelConfig::default(),
        };
        (evaluate::<f64, _>(&o, &data, &cfg)?, None, RunConfig::default().hash())
    } else {
        let path = ckpt.context("--ckpt is required without --oracle")?;
        let (model, ck) = load_tracker(path).with_context(|| format!("loading {}", path.display()))?;
        let run: RunConfig = serde_json::from_value(ck.meta["run_config"].clone()).unwrap_or_default();
        (evaluate(&model, &data, &cfg)?, Some(sha256_file(path)?), run.hash())
    };
    let agg = aggregate(traces.values())?;
    let rep = EvalReport {
        meta: ReportMeta {
            ckpt_path: ckpt.map(|p| p.display().to_string()),
            ckpt_hash,
            config_hash,
            seed,
            oracle,
            multi_ref,
            size_update: cfg.size_update,
            num_sequences: traces.len(),
            num_frames: traces.values().map(|t| t.iou.len()).sum(),
            timestamp: timestamp(),
        },
        per_sequence: traces,
        aggregate: agg,
    };
    rep.save(report)?;
    let a = &rep.aggregate;
    println!(
        "AUC {:.4}  P {:.4}  P_Norm {:.4}  AO {:.4}  SR_0.5 {:.4}  SR_0.75 {:.4}",
        a.auc, a.p, a.p_norm, a.ao, a.sr50, a.sr75
    );
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Generate { preset, seed, num, frames, out } => {
            let n = num.unwrap_or(preset.default_count());
            let data = generate_dataset_frames(preset, seed, n, frames)?;
            write_dataset(&data, &out)?;
            println!("wrote {} sequences to {}", data.len(), out.display());
        }
        Cmd::Train { config, data, out, resume } => {
            let run = match config {
                Some(p) => RunConfig::load(&p).with_context(|| format!("loading config {}", p.display()))?,
                None => RunConfig::default(),
            };
            let data = read_dataset(&data).with_context(|| format!("reading dataset {}", data.display()))?;
            let log = train(&run, &data, &out, resume)?;
            if let Some(last) = log.last() {
                println!("step {} loss_all {:.4}", last.step, last.loss_all);
            }
            println!("checkpoint {}", out.display());
        }
        Cmd::Eval { ckpt, data, report, oracle, multi_ref, size_update, seed } => {
            run_eval(EvalArgs {
                ckpt: ckpt.as_deref(),
                data: &data,
                report: &report,
                oracle,
                multi_ref,
                size_update,
                seed,
            })?;
        }
        Cmd::Plot { report, out, log } => {
            let rep = EvalReport::load(&report).with_context(|| format!("loading report {}", report.display()))?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("success.svg"), sstrack::plot::success_plot(&rep))?;
            std::fs::write(out.join("precision.svg"), sstrack::plot::precision_plot(&rep))?;
            if let Some(l) = log {
                let l = if l.extension().is_some_and(|e| e == "ckpt") { log_path(&l) } else { l };
                let entries = read_log(&l).with_context(|| format!("reading log {}", l.display()))?;
                std::fs::write(out.join("loss.svg"), sstrack::plot::loss_plot(&entries))?;
            }
            println!("plots in {}", out.display());
        }
        Cmd::Selftest => {
            let results = sstrack::selftest::run_all()?;
            let mut failed = 0;
            for r in &results {
                println!(
                    "{} {:<32} err {:.3e} tol {:.0e}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.err,
                    r.tol
                );
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                bail!("{failed} of {} checks failed", results.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
