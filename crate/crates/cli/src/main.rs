use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lineage_core::data_io::{
    export_bank, generate_synthetic, read_checkpoint, write_checkpoint, write_dataset, Dataset, SyntheticSpec,
};
use lineage_core::protocol::{
    calibrate_tau, calibration_confidences, calibration_score, evaluate_at, metrics_table, parse_grid,
    parse_toggles, per_class_table, run_ablation, sample_scores, write_jsonl, write_scores_csv,
    write_step_log, AblationPlan, AblationRow, Experiment, StepRecord, Sweep, TrainConfig,
};

#[derive(Parser)]
#[command(name = "lineage", version, about = "Incremental open-set attribution over encoder features")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic hierarchical dataset (manifest + feature files).
    Synth(SynthArgs),
    /// Train the incremental protocol, optionally resuming or stopping early.
    TrainEp1(TrainArgs),
    /// Train on every non-holdout class jointly.
    TrainEp2(TrainArgs),
    /// Evaluate a checkpoint on the test splits.
    Eval(EvalArgs),
    /// Select tau on the calibration split.
    Calibrate(CalibrateArgs),
    /// Run component toggles or a hyperparameter sweep.
    Ablate(AblateArgs),
    /// Dump the memory bank as a feature file.
    ExportBank {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Families including the real family.
    #[arg(long, default_value_t = 4)]
    families: usize,
    #[arg(long, default_value_t = 3)]
    models_per_family: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Training samples per class.
    #[arg(long, default_value_t = 500)]
    samples: usize,
    #[arg(long, default_value_t = 100)]
    test_samples: usize,
    #[arg(long, default_value_t = 100)]
    calib_samples: usize,
    #[arg(long, default_value_t = 1)]
    holdout_families: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// TOML config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint written after training.
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "L")]
    task_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from this checkpoint instead of starting fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop once this many tasks are complete.
    #[arg(long)]
    stop_after: Option<usize>,
    /// Metric history as JSON lines.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Per-step losses as JSON lines.
    #[arg(long)]
    step_log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    tau: Option<f64>,
    /// Per-sample max-softmax CSV.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    per_class: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "0.5:0.95:0.05")]
    grid: String,
    /// Write the checkpoint back with the selected tau.
    #[arg(long)]
    write: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cumulative component toggles, e.g. `replay,l1,l2,lu`.
    #[arg(long, default_value = "replay,l1,l2,lu")]
    toggles: String,
    #[arg(long, conflicts_with_all = ["budgets", "l_grid", "alpha"])]
    tau_grid: Option<String>,
    /// Comma-separated bank budgets.
    #[arg(long, conflicts_with_all = ["l_grid", "alpha"])]
    budgets: Option<String>,
    /// Comma-separated task sizes.
    #[arg(long = "L-grid", conflicts_with = "alpha")]
    l_grid: Option<String>,
    /// `i=grid`, e.g. `3=0:1:0.25`.
    #[arg(long)]
    alpha: Option<String>,
    /// Results as JSON lines.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    Ok(match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    })
}

fn usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| p.trim().parse().with_context(|| format!("bad integer `{p}`")))
        .collect()
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        families: a.families,
        models_per_family: a.models_per_family,
        dim: a.dim,
        train_samples: a.samples,
        test_samples: a.test_samples,
        calib_samples: a.calib_samples,
        holdout_families: a.holdout_families,
        seed: a.seed,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec)?;
    let path = write_dataset(&data.dataset, &a.out)?;
    println!("{}", path.display());
    Ok(())
}

fn train(a: TrainArgs, ep2: bool) -> Result<()> {
    let dataset = Dataset::load(&a.manifest)?;
    let mut exp = match &a.resume {
        Some(ckpt) => {
            if a.config.is_some() || a.task_size.is_some() || a.seed.is_some() {
                bail!("--resume takes its configuration from the checkpoint");
            }
            read_checkpoint(ckpt)?
        }
        None => {
            let mut config = load_config(a.config.as_deref())?;
            if let Some(l) = a.task_size {
                config.task_size = l;
            }
            if let Some(s) = a.seed {
                config.seed = s;
            }
            config.validate()?;
            if ep2 {
                Experiment::ep2(&dataset, config)?
            } else {
                Experiment::ep1(&dataset, config)?
            }
        }
    };
    let mut steps: Vec<StepRecord> = Vec::new();
    exp.run(&dataset, a.stop_after, &mut |s| steps.push(*s))?;
    write_checkpoint(&exp, &a.out)?;
    print!("{}", metrics_table(&exp.state.history));
    if ep2 {
        if let Some(rec) = exp.final_metrics() {
            print!("{}", per_class_table(rec));
        }
    }
    if let Some(p) = &a.metrics {
        let mut w = create(p)?;
        write_jsonl(&mut w, &exp.state.history)?;
        w.flush()?;
    }
    if let Some(p) = &a.step_log {
        let mut w = create(p)?;
        write_step_log(&mut w, &steps)?;
        w.flush()?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let dataset = Dataset::load(&a.manifest)?;
    let exp = read_checkpoint(&a.ckpt)?;
    let st = &exp.state;
    let rec = evaluate_at(st, &dataset, &exp.stream.holdout, a.tau.unwrap_or(st.tau))?;
    print!("{}", metrics_table(std::slice::from_ref(&rec)));
    if a.per_class {
        print!("{}", per_class_table(&rec));
    }
    if let Some(p) = &a.scores {
        let mut w = create(p)?;
        write_scores_csv(&mut w, &sample_scores(st, &dataset, &exp.stream.holdout)?)?;
        w.flush()?;
    }
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let dataset = Dataset::load(&a.manifest)?;
    let mut exp = read_checkpoint(&a.ckpt)?;
    let grid = parse_grid(&a.grid)?;
    let (seen, unseen) = calibration_confidences(&exp.state, &dataset)?;
    for &t in &grid {
        println!("tau={t:.4} score={:.4}", calibration_score(&seen, &unseen, t));
    }
    let tau = calibrate_tau(&exp.state, &dataset, &grid)?;
    println!("selected tau={tau}");
    if a.write {
        exp.state.tau = tau;
        write_checkpoint(&exp, &a.ckpt)?;
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let dataset = Dataset::load(&a.manifest)?;
    let base = load_config(a.config.as_deref())?;
    let sweep = if let Some(g) = &a.tau_grid {
        Some(Sweep::Tau(parse_grid(g)?))
    } else if let Some(b) = &a.budgets {
        Some(Sweep::Budget(usize_list(b)?))
    } else if let Some(l) = &a.l_grid {
        Some(Sweep::TaskSize(usize_list(l)?))
    } else if let Some(spec) = &a.alpha {
        let (i, g) = spec.split_once('=').context("--alpha expects `i=grid`")?;
        Some(Sweep::Alpha(i.trim().parse().context("bad alpha index")?, parse_grid(g)?))
    } else {
        None
    };
    let plan = match &sweep {
        Some(s) => AblationPlan::sweep(&base, s)?,
        None => AblationPlan::cumulative(&base, &parse_toggles(&a.toggles)?),
    };
    let rows: Vec<AblationRow> = run_ablation(&dataset, &plan)?;
    let w = rows.iter().map(|r| r.label.len()).max().unwrap_or(0);
    for r in &rows {
        let f = r.final_metrics();
        println!(
            "{:<w$}  avg={:.4} auth={:.4} unseen={}",
            r.label,
            f.avg_acc,
            f.auth_acc,
            f.unseen_acc.map_or("-".into(), |u| format!("{u:.4}"))
        );
    }
    if let Some(p) = &a.out {
        let mut out = create(p)?;
        write_jsonl(&mut out, &rows)?;
        out.flush()?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Cmd::Synth(a) => synth(a),
        Cmd::TrainEp1(a) => train(a, false),
        Cmd::TrainEp2(a) => train(a, true),
        Cmd::Eval(a) => eval(a),
        Cmd::Calibrate(a) => calibrate(a),
        Cmd::Ablate(a) => ablate(a),
        Cmd::ExportBank { ckpt, out } => {
            let exp = read_checkpoint(&ckpt)?;
            export_bank(&exp.state)?.write(&out)?;
            log::info!("wrote {}", out.display());
            Ok(())
        }
    }
}
