//! Command-line front end: data generation, training, evaluation, the
//! inspection loop and the experiment sweeps.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bottle_inspect::ensemble::{build_ensemble, precision_curve, write_curve_csv, EnsembleError, EnsembleModel};
use bottle_inspect::imaging::write_pgm;
use bottle_inspect::pipeline::{
    capture_background, evaluate, feature_grid, inspection_window, run_inspection, sweep_feature_params,
    sweep_label_noise, sweep_t, write_csv, write_events, DirFrames, InspectionEvent, PipelineConfig, PipelineError,
    Verdict,
};
use bottle_inspect::synthgen::{conveyor_schedule, gen_dataset, gen_stream, LabeledDataset};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "bottle-inspect", version, about = "Backlit bottle inspection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config document; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding `paths.reports`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic train/test datasets, and optionally a conveyor stream.
    Gen {
        #[arg(long)]
        stream: bool,
    },
    /// Build an ensemble and save the model artifact.
    Train,
    /// Score a saved model on a dataset.
    Eval,
    /// Run the soft trigger and classifier over a frame directory.
    Inspect,
    /// Tabulate the binomial precision curve.
    Curve,
    /// Single sub-classifier precision over feature-parameter grids.
    SweepFeatures,
    /// Error and training cost against ensemble size.
    SweepT,
    /// Ensemble precision against training-label noise.
    SweepNoise,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = if e.is_validation() { 1 } else { 2 };
            eprintln!("{}", json!({ "status": "error", "error": e.to_string() }));
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<Value, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.paths.reports.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out)?;
    let mut summary = match cli.command {
        Command::Gen { stream } => gen(&cfg, &out, stream)?,
        Command::Train => train(&cfg, &out)?,
        Command::Eval => eval(&cfg, &out)?,
        Command::Inspect => inspect(&cfg, &out)?,
        Command::Curve => curve(&cfg, &out)?,
        Command::SweepFeatures => sweep_features(&cfg, &out)?,
        Command::SweepT => sweep_sizes(&cfg, &out)?,
        Command::SweepNoise => sweep_noise(&cfg, &out)?,
    };
    summary["status"] = json!("ok");
    summary["seed"] = json!(cfg.seed);
    Ok(summary)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, PipelineError> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
}

fn synth_train(cfg: &PipelineConfig) -> Result<LabeledDataset, PipelineError> {
    let d = &cfg.data;
    Ok(gen_dataset(&cfg.scene(), d.n_train, d.defective_fraction, cfg.stage_seed("train-data"))?)
}

fn synth_test(cfg: &PipelineConfig) -> Result<LabeledDataset, PipelineError> {
    let d = &cfg.data;
    Ok(gen_dataset(&cfg.scene(), d.n_test, d.defective_fraction, cfg.stage_seed("test-data"))?)
}

/// The configured dataset, or a synthetic one rendered from the seed.
fn load_or_synth(
    path: &Option<PathBuf>,
    cfg: &PipelineConfig,
    synth: fn(&PipelineConfig) -> Result<LabeledDataset, PipelineError>,
) -> Result<(LabeledDataset, Value), PipelineError> {
    match path {
        Some(p) => Ok((LabeledDataset::read(p)?, json!(p))),
        None => Ok((synth(cfg)?, json!("synthetic"))),
    }
}

fn load_model(cfg: &PipelineConfig) -> Result<EnsembleModel, PipelineError> {
    let path = cfg
        .paths
        .model
        .as_ref()
        .ok_or_else(|| PipelineError::Config("paths.model is not set".into()))?;
    Ok(EnsembleModel::load(path)?)
}

fn gen(cfg: &PipelineConfig, out: &Path, stream: bool) -> Result<Value, PipelineError> {
    let mut train = synth_train(cfg)?;
    let mut test = synth_test(cfg)?;
    train.write(out.join("train"))?;
    test.write(out.join("test"))?;
    let mut summary = json!({
        "command": "gen",
        "train": { "n": train.len(), "defective": train.count(bottle_inspect::Label::Defective) },
        "test": { "n": test.len(), "defective": test.count(bottle_inspect::Label::Defective) },
    });
    if stream {
        let s = &cfg.stream;
        let seed = cfg.stage_seed("stream");
        let schedule = conveyor_schedule(s.n_frames, s.n_bottles, s.leading_background, seed)?;
        let frames = gen_stream(&cfg.scene(), s.n_frames, &schedule, seed)?;
        let dir = out.join("stream");
        fs::create_dir_all(&dir)?;
        let mut truth = create(&dir.join("truth.jsonl"))?;
        for i in 0..frames.len() {
            write_pgm(dir.join(format!("frame_{i:05}.pgm")), &frames.frame(i)?)?;
            let bottle = frames.slots()[i].bottle().map(|(b, _)| b);
            let rec = json!({
                "frame": i,
                "present": frames.slots()[i].present(),
                "bottle": bottle,
                "label": bottle.map(|b| frames.bottles()[b].label.sign()),
            });
            serde_json::to_writer(&mut truth, &rec)?;
            std::io::Write::write_all(&mut truth, b"\n")?;
        }
        std::io::Write::flush(&mut truth)?;
        summary["stream"] = json!({ "frames": frames.len(), "bottles": frames.presence_runs() });
    }
    Ok(summary)
}

fn train(cfg: &PipelineConfig, out: &Path) -> Result<Value, PipelineError> {
    let (d, source) = load_or_synth(&cfg.paths.dataset, cfg, synth_train)?;
    let p = cfg.ensemble_params();
    match build_ensemble(&d, &cfg.pool_pairs(), &p) {
        Ok((model, report)) => {
            let path = out.join("model.bin");
            model.save(&path)?;
            serde_json::to_writer_pretty(create(&out.join("build_report.json"))?, &report)?;
            Ok(json!({
                "command": "train",
                "data": source,
                "model": path,
                "members": model.size(),
                "member_pool_indices": report.member_pool_indices,
                "held_out_errors": model.members().iter().map(|m| m.delta_false()).collect::<Vec<_>>(),
                "draws": report.draws,
                "it_rejections": report.it_rejections,
                "gate_rejections": report.gate_rejections,
            }))
        }
        Err(EnsembleError::BuildFailed(f)) => {
            serde_json::to_writer_pretty(create(&out.join("build_report.json"))?, &f.report)?;
            Err(EnsembleError::BuildFailed(f).into())
        }
        Err(e) => Err(e.into()),
    }
}

fn eval(cfg: &PipelineConfig, out: &Path) -> Result<Value, PipelineError> {
    let model = load_model(cfg)?;
    let (d, source) = load_or_synth(&cfg.paths.test_dataset, cfg, synth_test)?;
    let m = evaluate(&model, &d)?;
    serde_json::to_writer_pretty(create(&out.join("metrics.json"))?, &m)?;
    Ok(json!({ "command": "eval", "data": source, "metrics": m }))
}

fn inspect(cfg: &PipelineConfig, out: &Path) -> Result<Value, PipelineError> {
    let model = load_model(cfg)?;
    let dir = cfg
        .paths
        .stream
        .as_ref()
        .ok_or_else(|| PipelineError::Config("paths.stream is not set".into()))?;
    let frames = DirFrames::open(dir)?;
    let window = inspection_window(cfg);
    let bg = capture_background(&frames, cfg.trigger.n_background_frames, &window)?;
    let events = run_inspection(&frames, &bg, &model, cfg)?;
    write_events(&events, create(&out.join("events.jsonl"))?)?;
    let count = |want: Verdict| {
        events
            .iter()
            .filter(|e| matches!(e, InspectionEvent::Verdict { verdict, .. } if *verdict == want))
            .count()
    };
    Ok(json!({
        "command": "inspect",
        "frames": bottle_inspect::pipeline::FrameSource::len(&frames),
        "fires": events.len(),
        "pass": count(Verdict::Pass),
        "reject": count(Verdict::Reject),
        "skipped": events.iter().filter(|e| matches!(e, InspectionEvent::Skip { .. })).count(),
    }))
}

fn curve(cfg: &PipelineConfig, out: &Path) -> Result<Value, PipelineError> {
    let points = precision_curve(&cfg.curve.epsilons, &cfg.curve.ts)?;
    let path = out.join("curve.csv");
    write_curve_csv(&points, create(&path)?)?;
    Ok(json!({ "command": "curve", "rows": points.len(), "report": path }))
}

fn sweep_features(cfg: &PipelineConfig, out: &Path) -> Result<Value, PipelineError> {
    let (d, source) = load_or_synth(&cfg.paths.dataset, cfg, synth_train)?;
    let mut rows = sweep_feature_params(&d, &feature_grid(cfg), &cfg.classifiers(), &cfg.ensemble_params())?;
    rows.iter_mut().for_each(|r| r.seed = cfg.seed);
    let path = out.join("sweep_features.csv");
    write_csv(&rows, create(&path)?)?;
    Ok(json!({
        "command": "sweep-features",
        "data": source,
        "rows": rows.len(),
        "failed": rows.iter().filter(|r| r.status != "ok").count(),
        "report": path,
    }))
}

fn sweep_sizes(cfg: &PipelineConfig, out: &Path) -> Result<Value, PipelineError> {
    let (train, source) = load_or_synth(&cfg.paths.dataset, cfg, synth_train)?;
    let (test, _) = load_or_synth(&cfg.paths.test_dataset, cfg, synth_test)?;
    let mut sweep = sweep_t(&train, &test, &cfg.sweeps.ts, &cfg.pool_pairs(), &cfg.ensemble_params())?;
    sweep.rows.iter_mut().for_each(|r| r.seed = cfg.seed);
    sweep.timing.iter_mut().for_each(|r| r.seed = cfg.seed);
    let path = out.join("sweep_t.csv");
    let timing = out.join("sweep_t_timing.csv");
    write_csv(&sweep.rows, create(&path)?)?;
    write_csv(&sweep.timing, create(&timing)?)?;
    Ok(json!({
        "command": "sweep-t",
        "data": source,
        "rows": sweep.rows.len(),
        "failed": sweep.rows.iter().filter(|r| r.status != "complete").count(),
        "report": path,
        "timing": timing,
    }))
}

fn sweep_noise(cfg: &PipelineConfig, out: &Path) -> Result<Value, PipelineError> {
    let (train, source) = load_or_synth(&cfg.paths.dataset, cfg, synth_train)?;
    let (test, _) = load_or_synth(&cfg.paths.test_dataset, cfg, synth_test)?;
    let mut sweep = sweep_label_noise(
        &train,
        &test,
        &cfg.sweeps.noise_ratios,
        &cfg.pool_pairs(),
        &cfg.ensemble_params(),
        cfg.stage_seed("label-noise"),
    )?;
    sweep.rows.iter_mut().for_each(|r| r.seed = cfg.seed);
    let path = out.join("sweep_noise.csv");
    write_csv(&sweep.rows, create(&path)?)?;
    Ok(json!({
        "command": "sweep-noise",
        "data": source,
        "rows": sweep.rows.len(),
        "incomplete": sweep.rows.iter().filter(|r| r.status != "complete").count(),
        "report": path,
    }))
}
