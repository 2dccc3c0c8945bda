use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::{Map, Value};

use advsim::attack::{attack_cloud, default_sweep, frame_seed, sweep_parameter, with_sweep_parameter};
use advsim::metrics::{build_report, score_pair, EvalOptions, EvalReport, ReportRow};
use advsim::orchestrator::{run_session, DatasetSink, FrameSink};
use advsim::scenario::{
    export_frame, load_dataset, parse_config, write_metadata, AttackSpec, DatasetMetadata,
    FrameRecord,
};
use advsim::{Exec, Point3, PointCloud};

#[derive(Parser)]
#[command(name = "advsim", version, about = "Adversarial LiDAR/V2X co-simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and export its dataset(s).
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply a perception attack to a stored dataset.
    Attack {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "type")]
        kind: String,
        /// Inline JSON or @path.
        #[arg(long)]
        params: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score adversarial datasets against their clean source.
    Evaluate {
        #[arg(long)]
        clean: PathBuf,
        #[arg(long, required = true)]
        adv: Vec<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Attack a clean dataset at several strengths and report every row.
    Sweep {
        #[arg(long)]
        clean: PathBuf,
        #[arg(long = "type")]
        kind: String,
        /// Base parameters; the swept field is overwritten.
        #[arg(long, default_value = "{}")]
        params: String,
        /// Comma-separated values; defaults to the standard set of the attack.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long)]
        report: PathBuf,
        /// Also export each adversarial dataset under this directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        eval: EvalArgs,
    },
}

#[derive(Args, Clone, Copy)]
struct EvalArgs {
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Ground-truth boxes with fewer returns are not scored.
    #[arg(long, default_value_t = 5)]
    min_points: usize,
}

impl EvalArgs {
    fn options(self) -> EvalOptions {
        EvalOptions {
            iou_threshold: self.iou,
            min_points: self.min_points,
        }
    }
}

/// Errors in what the user asked for, as opposed to failures while doing it.
#[derive(Debug)]
struct Usage(anyhow::Error);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(e: impl Into<anyhow::Error>) -> anyhow::Error {
    Usage(e.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(u) = e.downcast_ref::<Usage>() {
                eprintln!("error: {u}");
                ExitCode::from(2)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { config, out } => simulate(&config, out),
        Command::Attack {
            input,
            kind,
            params,
            out,
        } => {
            let spec = parse_attack(&kind, read_params(&params)?)?;
            attack(&input, &spec, &out)
        }
        Command::Evaluate {
            clean,
            adv,
            report,
            eval,
        } => evaluate(&clean, &adv, &report, eval.options()),
        Command::Sweep {
            clean,
            kind,
            params,
            values,
            report,
            out,
            eval,
        } => sweep(&clean, &kind, &params, values, &report, out.as_deref(), eval.options()),
    }
}

fn simulate(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let text = fs::read_to_string(config)
        .with_context(|| format!("reading {}", config.display()))
        .map_err(usage)?;
    let cfg = parse_config(&text).map_err(usage)?;
    let out = out.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    let mut sink = DatasetSink::new(&out, &cfg)?;
    let summary = run_session(&cfg, &mut [&mut sink as &mut dyn FrameSink])?;
    println!("ticks: {}", summary.ticks);
    println!("frames: {}", summary.frames);
    if summary.attacks_applied.is_empty() {
        println!("attacks applied: none");
    } else {
        for (name, n) in &summary.attacks_applied {
            println!("attack {name}: applied on {n} ticks");
        }
    }
    Ok(())
}

fn read_params(arg: &str) -> Result<Value> {
    let text = match arg.strip_prefix('@') {
        Some(path) => fs::read_to_string(path)
            .with_context(|| format!("reading parameter file {path}"))
            .map_err(usage)?,
        None => arg.to_string(),
    };
    serde_json::from_str(&text)
        .context("parameters are not valid JSON")
        .map_err(usage)
}

fn parse_attack(kind: &str, params: Value) -> Result<AttackSpec> {
    let doc = serde_json::json!({ "type": kind, "params": params });
    let spec: AttackSpec = serde_json::from_value(doc)
        .with_context(|| format!("invalid `{kind}` attack"))
        .map_err(usage)?;
    if !spec.is_perception() {
        return Err(usage(anyhow!(
            "`{kind}` acts on CAM streams; configure it in the scenario instead"
        )));
    }
    Ok(spec)
}

/// Attack every frame. Frames where the attack has nothing to do are passed
/// through with a warning.
fn attack_frames(meta: &DatasetMetadata, frames: &[FrameRecord], spec: &AttackSpec) -> Result<Vec<Vec<Point3>>> {
    let model = meta.detector.clone().with_exec(Exec::Sequential);
    let base = match spec {
        AttackSpec::Perturb(p) => p.seed.unwrap_or(meta.seed),
        _ => meta.seed,
    };
    let results = Exec::default().map_slice(frames, |f| {
        let seed = frame_seed(base, 0, f.tick_index);
        attack_cloud(&model, spec, &f.point_cloud.points, &f.gt_boxes, seed)
    });
    frames
        .iter()
        .zip(results)
        .map(|(f, r)| match r {
            Ok(cloud) => Ok(cloud),
            Err(e) if e.is_degenerate() => {
                warn!("tick {}: {e}; frame copied unchanged", f.tick_index);
                Ok(f.point_cloud.points.clone())
            }
            Err(e) => Err(usage(e)),
        })
        .collect()
}

fn export(dir: &Path, meta: &DatasetMetadata, spec: &AttackSpec, frames: &[FrameRecord], clouds: Vec<Vec<Point3>>) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let meta = DatasetMetadata {
        adversarial: true,
        attacks: vec![spec.clone()],
        ..meta.clone()
    };
    write_metadata(dir, &meta)?;
    for (f, cloud) in frames.iter().zip(clouds) {
        let record = FrameRecord {
            point_cloud: PointCloud::new(cloud),
            ..f.clone()
        };
        export_frame(&record, dir)?;
    }
    Ok(())
}

fn load(dir: &Path) -> Result<(DatasetMetadata, Vec<FrameRecord>)> {
    load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn attack(input: &Path, spec: &AttackSpec, out: &Path) -> Result<()> {
    let (meta, frames) = load(input)?;
    let clouds = attack_frames(&meta, &frames, spec)?;
    export(out, &meta, spec, &frames, clouds)?;
    println!("{} frames attacked with {}", frames.len(), spec.name());
    Ok(())
}

fn ticks(frames: &[FrameRecord]) -> BTreeSet<u64> {
    frames.iter().map(|f| f.tick_index).collect()
}

fn check_ticks(clean: &[FrameRecord], adv: &[FrameRecord], adv_dir: &Path) -> Result<()> {
    let (c, a) = (ticks(clean), ticks(adv));
    if c != a {
        let missing: Vec<_> = c.difference(&a).collect();
        let extra: Vec<_> = a.difference(&c).collect();
        bail!(
            "tick sets differ for {}: missing ticks {missing:?}, unexpected ticks {extra:?}",
            adv_dir.display()
        );
    }
    Ok(())
}

fn score(
    meta: &DatasetMetadata,
    clean: &[FrameRecord],
    adv: &[Vec<Point3>],
    opts: &EvalOptions,
) -> Result<advsim::metrics::PairScores> {
    let clouds: Vec<Vec<Point3>> = clean.iter().map(|f| f.point_cloud.points.clone()).collect();
    let gt: Vec<_> = clean.iter().map(|f| f.gt_boxes.clone()).collect();
    Ok(score_pair(&meta.detector, &clouds, adv, &gt, opts, Exec::default())?)
}

fn row_for(spec: Option<&AttackSpec>, scores: advsim::metrics::PairScores, dataset: Option<String>) -> ReportRow {
    let (name, param) = match spec {
        Some(s) => (s.name(), sweep_parameter(s).unwrap_or(0.0)),
        None => ("none", 0.0),
    };
    ReportRow {
        dataset,
        ..ReportRow::new(name, param, scores.map_clean, scores.map_adv, scores.mean_cd)
    }
}

fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, report.to_json()).with_context(|| format!("writing {}", path.display()))?;
    let table = report.to_table();
    fs::write(path.with_extension("txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn evaluate(clean_dir: &Path, adv_dirs: &[PathBuf], report: &Path, opts: EvalOptions) -> Result<()> {
    let (meta, clean) = load(clean_dir)?;
    let mut rows = Vec::new();
    for dir in adv_dirs {
        let (adv_meta, adv) = load(dir)?;
        check_ticks(&clean, &adv, dir)?;
        let clouds: Vec<_> = adv.into_iter().map(|f| f.point_cloud.points).collect();
        let scores = score(&meta, &clean, &clouds, &opts)?;
        let spec = adv_meta
            .attacks
            .iter()
            .find(|a| a.is_perception())
            .or(adv_meta.attacks.first());
        rows.push(row_for(spec, scores, Some(dir.display().to_string())));
    }
    let report_doc = build_report(rows, &clean_dir.display().to_string(), &meta.detector, opts.iou_threshold);
    write_report(report, &report_doc)
}

fn sweep(
    clean_dir: &Path,
    kind: &str,
    params: &str,
    values: Vec<f64>,
    report: &Path,
    out: Option<&Path>,
    opts: EvalOptions,
) -> Result<()> {
    let values = if values.is_empty() {
        default_sweep(kind)
            .ok_or_else(|| usage(anyhow!("`{kind}` cannot be swept")))?
            .to_vec()
    } else {
        values
    };
    let base = read_params(params)?;
    let mut base: Map<String, Value> = match base {
        Value::Object(m) => m,
        _ => return Err(usage(anyhow!("parameters must be a JSON object"))),
    };
    let field = match kind {
        "detach" => "drop_ratio",
        _ => "epsilon_m",
    };
    base.entry(field).or_insert(Value::from(values[0]));
    let template = parse_attack(kind, Value::Object(base))?;
    let (meta, clean) = load(clean_dir)?;
    let mut rows = Vec::new();
    for &v in &values {
        let spec = with_sweep_parameter(&template, v).expect("perception attack");
        let clouds = attack_frames(&meta, &clean, &spec)?;
        let scores = score(&meta, &clean, &clouds, &opts)?;
        info!("{kind} {v}: ratio {:.2}", scores.map_ratio);
        let dataset = match out {
            Some(root) => {
                let dir = root.join(format!("{kind}_{v}"));
                export(&dir, &meta, &spec, &clean, clouds)?;
                Some(dir.display().to_string())
            }
            None => None,
        };
        rows.push(row_for(Some(&spec), scores, dataset));
    }
    let report_doc = build_report(rows, &clean_dir.display().to_string(), &meta.detector, opts.iou_threshold);
    write_report(report, &report_doc)
}
