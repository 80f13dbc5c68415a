//! The five experiment commands. Each has a pure part returning data and a
//! `cmd_*` wrapper that writes files under an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tpc_core::controller::{Controller, ProportionalFeedback, TpcController};
use tpc_core::deepc::{deepc_memory_estimate, implied_predictor, DeepcController, DeepcProblem};
use tpc_core::hankel::{build_hankel, excitation_rank_check, ExcitationSpec, HankelStack, RankReport, Trajectory};
use tpc_core::predictor::{estimate, Dims, EstimatorOptions, MultistepPredictor};
use tpc_core::sim::{collect_training_data, run_closed_loop, ClosedLoopRun};

use crate::config::{ControllerKind, ExperimentConfig, VariantSection};
use crate::error::{HarnessError, HarnessResult};
use crate::metrics::{self, median, RunMetrics};
use crate::plot::{line_chart, Series};
use crate::telemetry::{write_substeps, write_telemetry, write_timing};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_name: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl Provenance {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Self {
        Provenance {
            config_name: cfg.name.clone(),
            config_hash: cfg.hash(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> HarnessResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| HarnessError::Data(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| HarnessError::Data(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> HarnessResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn read_file(path: &Path) -> HarnessResult<Vec<u8>> {
    fs::read(path).map_err(|e| HarnessError::Data(format!("cannot read {}: {e}", path.display())))
}

fn dims(cfg: &ExperimentConfig) -> Dims {
    Dims { m: 2, q: 4, rho: cfg.controller.rho, tau: cfg.controller.tau }
}

/// Samples needed for a Hankel stack with `n_cols` columns.
pub fn samples_for_columns(cfg: &ExperimentConfig, n_cols: usize) -> usize {
    n_cols + cfg.controller.rho + cfg.controller.tau - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectionMode {
    OpenLoop,
    Proportional,
    Tpc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub samples: usize,
    pub dt: f64,
    pub amplitude: f64,
    pub mode: CollectionMode,
    pub outputs: Vec<String>,
    pub inputs: Vec<String>,
    pub csv_sha256: String,
    pub provenance: Provenance,
}

/// Training data per the `[training]` section. Closed-loop collection runs
/// TPC on `predictor` when given, the proportional loop otherwise.
pub fn collect(
    cfg: &ExperimentConfig,
    seed: u64,
    closed_loop: bool,
    predictor: Option<MultistepPredictor>,
) -> HarnessResult<(Trajectory, CollectionMode)> {
    let mut plant = cfg.plant()?;
    let spec = cfg.excitation();
    if !closed_loop {
        let traj = collect_training_data(&mut plant, &spec, spec.length, seed, None)?;
        return Ok((traj, CollectionMode::OpenLoop));
    }
    let schedule = cfg.training_schedule()?;
    let (mut ctl, mode): (Box<dyn Controller>, _) = match predictor {
        Some(pred) => {
            check_predictor_dims(cfg, &pred)?;
            (Box::new(TpcController::new(pred, cfg.tpc_config(None))?), CollectionMode::Tpc)
        }
        None => (Box::new(ProportionalFeedback::inverter(cfg.training.feedback_gain)), CollectionMode::Proportional),
    };
    let traj = collect_training_data(&mut plant, &spec, spec.length, seed, Some((ctl.as_mut(), &schedule)))?;
    Ok((traj, mode))
}

pub fn cmd_collect(
    cfg: &ExperimentConfig,
    seed: u64,
    out: &Path,
    closed_loop: bool,
    predictor_path: Option<&Path>,
) -> HarnessResult<TrainingMetadata> {
    let predictor = predictor_path.map(|p| load_predictor(cfg, p)).transpose()?;
    let closed_loop = closed_loop || cfg.training.closed_loop;
    let (traj, mode) = collect(cfg, seed, closed_loop, predictor)?;
    let mut bytes = Vec::new();
    traj.write_csv(&mut bytes)?;
    write_file(&out.join("training.csv"), &bytes)?;
    let meta = TrainingMetadata {
        samples: traj.len(),
        dt: traj.dt,
        amplitude: cfg.training.amplitude,
        mode,
        outputs: traj.layout.output_names.clone(),
        inputs: traj.layout.input_names.clone(),
        csv_sha256: sha256_hex(&bytes),
        provenance: Provenance::new(cfg, seed),
    };
    write_json(&out.join("training.meta.json"), &meta)?;
    Ok(meta)
}

pub fn load_training(cfg: &ExperimentConfig, path: &Path) -> HarnessResult<Trajectory> {
    let bytes = read_file(path)?;
    Trajectory::read_csv(bytes.as_slice(), cfg.tick_dt(), Some(cfg.layout()))
        .map_err(|e| HarnessError::from(e).context(&path.display().to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub rho: usize,
    pub tau: usize,
    pub hankel_columns: usize,
    pub hp_shape: [usize; 2],
    pub hu_shape: [usize; 2],
    pub causality_violation: f64,
    pub rank: usize,
    pub rank_rows: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub provenance: Provenance,
}

pub fn estimate_predictor(cfg: &ExperimentConfig, traj: &Trajectory) -> HarnessResult<(MultistepPredictor, HankelStack)> {
    let h = build_hankel(traj, cfg.controller.rho, cfg.controller.tau)?;
    let pred = estimate(&h, &EstimatorOptions::default())?;
    Ok((pred, h))
}

pub fn cmd_estimate(cfg: &ExperimentConfig, seed: u64, data: &Path, out: &Path) -> HarnessResult<EstimateSummary> {
    let traj = load_training(cfg, data)?;
    let h = build_hankel(&traj, cfg.controller.rho, cfg.controller.tau)?;
    let rank: RankReport = excitation_rank_check(&h);
    if rank.deficient {
        eprintln!(
            "warning: Hankel stack has numerical rank {} of {} (σ_min/σ_max = {:.3e})",
            rank.rank,
            rank.rows,
            rank.sigma_min / rank.sigma_max.max(f64::MIN_POSITIVE)
        );
    }
    let pred = estimate(&h, &EstimatorOptions::default()).map_err(|e| HarnessError::from(e).context("estimation"))?;
    let mut bytes = Vec::new();
    pred.write_artifact(&mut bytes)?;
    write_file(&out.join("predictor.csv"), &bytes)?;
    let summary = EstimateSummary {
        rho: cfg.controller.rho,
        tau: cfg.controller.tau,
        hankel_columns: h.n_cols(),
        hp_shape: [pred.hp.nrows(), pred.hp.ncols()],
        hu_shape: [pred.hu.nrows(), pred.hu.ncols()],
        causality_violation: pred.causality_violation(),
        rank: rank.rank,
        rank_rows: rank.rows,
        sigma_min: rank.sigma_min,
        sigma_max: rank.sigma_max,
        provenance: Provenance::new(cfg, seed),
    };
    write_json(&out.join("estimate.json"), &summary)?;
    Ok(summary)
}

fn check_predictor_dims(cfg: &ExperimentConfig, pred: &MultistepPredictor) -> HarnessResult<()> {
    if pred.dims != dims(cfg) {
        return Err(HarnessError::Config(format!(
            "predictor artifact has dims {:?}, config implies {:?}",
            pred.dims,
            dims(cfg)
        )));
    }
    Ok(())
}

pub fn load_predictor(cfg: &ExperimentConfig, path: &Path) -> HarnessResult<MultistepPredictor> {
    let bytes = read_file(path)?;
    let pred = MultistepPredictor::read_artifact(bytes.as_slice(), Some(cfg.layout()))
        .map_err(|e| HarnessError::from(e).context(&path.display().to_string()))?;
    check_predictor_dims(cfg, &pred)?;
    Ok(pred)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub name: String,
    pub current_limit: Option<f64>,
    pub telemetry_file: String,
    pub timing_file: String,
    pub substeps_file: String,
    pub plots: Vec<String>,
    pub telemetry_sha256: String,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub controller: ControllerKind,
    pub duration: f64,
    pub tick_dt: f64,
    pub lead_in: usize,
    pub settle_band: f64,
    pub training_samples: usize,
    pub causality_violation: Option<f64>,
    pub variants: Vec<VariantReport>,
    pub provenance: Provenance,
}

/// Where the controller's model comes from.
pub enum ModelSource {
    Predictor(MultistepPredictor),
    Data(Trajectory),
}

/// Builds the controller for one scenario variant.
pub fn build_controller(
    cfg: &ExperimentConfig,
    source: &ModelSource,
    variant: &VariantSection,
) -> HarnessResult<Box<dyn Controller>> {
    let limit = Some(variant.current_limit);
    match (cfg.controller.kind, source) {
        (ControllerKind::Tpc, ModelSource::Predictor(pred)) => {
            Ok(Box::new(TpcController::new(pred.clone(), cfg.tpc_config(limit))?))
        }
        (ControllerKind::Tpc, ModelSource::Data(traj)) => {
            let (pred, _) = estimate_predictor(cfg, traj)?;
            Ok(Box::new(TpcController::new(pred, cfg.tpc_config(limit))?))
        }
        (ControllerKind::Deepc, ModelSource::Data(traj)) => {
            let h = build_hankel(traj, cfg.controller.rho, cfg.controller.tau)?;
            let problem = DeepcProblem::new(&h, cfg.deepc_settings(limit))?;
            Ok(Box::new(DeepcController::new(problem)?))
        }
        (ControllerKind::Deepc, ModelSource::Predictor(_)) => {
            Err(HarnessError::Config("DeePC needs training data, not a predictor artifact".into()))
        }
    }
}

/// Closed-loop run of one variant. The plant noise stream uses `seed + 1`
/// so that it differs from the training stream.
pub fn run_variant(
    cfg: &ExperimentConfig,
    source: &ModelSource,
    variant: &VariantSection,
    seed: u64,
) -> HarnessResult<ClosedLoopRun> {
    let mut ctl = build_controller(cfg, source, variant)?;
    let mut plant = cfg.plant()?;
    let schedule = cfg.schedule()?;
    Ok(run_closed_loop(&mut plant, ctl.as_mut(), &schedule, cfg.scenario.duration, seed.wrapping_add(1))?)
}

pub fn solved_times(run: &ClosedLoopRun) -> Vec<f64> {
    run.telemetry
        .iter()
        .zip(&run.solve_times)
        .filter(|(r, _)| r.status.is_some())
        .map(|(_, &t)| t)
        .collect()
}

pub fn run_metrics(cfg: &ExperimentConfig, run: &ClosedLoopRun) -> RunMetrics {
    metrics::compute(&run.telemetry, &solved_times(run), cfg.controller.rho, cfg.scenario.settle_band)
}

/// Resolves the model source: an artifact, a training CSV, or fresh data
/// collected with `seed`.
pub fn model_source(
    cfg: &ExperimentConfig,
    seed: u64,
    predictor_path: Option<&Path>,
    data_path: Option<&Path>,
) -> HarnessResult<(ModelSource, usize)> {
    match (cfg.controller.kind, predictor_path, data_path) {
        (ControllerKind::Tpc, Some(p), _) => Ok((ModelSource::Predictor(load_predictor(cfg, p)?), 0)),
        (ControllerKind::Deepc, Some(_), _) => {
            Err(HarnessError::Config("DeePC needs training data, not a predictor artifact".into()))
        }
        (kind, None, data) => {
            let traj = match data {
                Some(d) => load_training(cfg, d)?,
                None => collect(cfg, seed, cfg.training.closed_loop, None)?.0,
            };
            let n = traj.len();
            if kind == ControllerKind::Tpc {
                let (pred, _) = estimate_predictor(cfg, &traj)?;
                Ok((ModelSource::Predictor(pred), n))
            } else {
                Ok((ModelSource::Data(traj), n))
            }
        }
    }
}

fn write_plots(dir: &Path, run: &ClosedLoopRun, limit: Option<f64>) -> HarnessResult<Vec<String>> {
    let t: Vec<f64> = run.telemetry.iter().map(|r| r.time).collect();
    let col = |f: &dyn Fn(&tpc_core::sim::TickRecord) -> f64| run.telemetry.iter().map(f).collect::<Vec<f64>>();
    let (p, pr, q, qr) = (col(&|r| r.y_clean[0]), col(&|r| r.p_ref), col(&|r| r.y_clean[1]), col(&|r| r.q_ref));
    let (ud, uq) = (col(&|r| r.u[0]), col(&|r| r.u[1]));
    let ts: Vec<f64> = run.substeps.iter().map(|s| s.time).collect();
    let imag: Vec<f64> = run.substeps.iter().map(|s| s.y[2].hypot(s.y[3])).collect();
    let lim: Vec<f64> = limit.map(|l| vec![l; ts.len()]).unwrap_or_default();

    let power = line_chart(
        "Active and reactive power",
        "time [s]",
        "power [p.u.]",
        &[
            Series { label: "P", x: &t, y: &p, color: "#1f77b4", dashed: false },
            Series { label: "P ref", x: &t, y: &pr, color: "#1f77b4", dashed: true },
            Series { label: "Q", x: &t, y: &q, color: "#d62728", dashed: false },
            Series { label: "Q ref", x: &t, y: &qr, color: "#d62728", dashed: true },
        ],
    );
    let mut current_series = vec![Series { label: "|i|", x: &ts, y: &imag, color: "#2ca02c", dashed: false }];
    if limit.is_some() {
        current_series.push(Series { label: "limit", x: &ts, y: &lim, color: "black", dashed: true });
    }
    let current = line_chart("Current magnitude", "time [s]", "|i| [p.u.]", &current_series);
    let input = line_chart(
        "Current references",
        "time [s]",
        "reference [p.u.]",
        &[
            Series { label: "i_d*", x: &t, y: &ud, color: "#9467bd", dashed: false },
            Series { label: "i_q*", x: &t, y: &uq, color: "#8c564b", dashed: false },
        ],
    );
    let mut names = Vec::new();
    for (name, svg) in [("power.svg", power), ("current.svg", current), ("input.svg", input)] {
        write_file(&dir.join(name), svg.as_bytes())?;
        names.push(name.to_string());
    }
    Ok(names)
}

pub fn cmd_run(
    cfg: &ExperimentConfig,
    seed: u64,
    out: &Path,
    predictor_path: Option<&Path>,
    data_path: Option<&Path>,
) -> HarnessResult<RunReport> {
    let (source, training_samples) = model_source(cfg, seed, predictor_path, data_path)?;
    let causality_violation = match &source {
        ModelSource::Predictor(p) => Some(p.causality_violation()),
        ModelSource::Data(_) => None,
    };
    let mut variants = Vec::new();
    for variant in cfg.variants() {
        let run = run_variant(cfg, &source, &variant, seed).map_err(|e| e.context(&format!("variant {}", variant.name)))?;
        let dir: PathBuf = out.join(&variant.name);
        let mut telemetry = Vec::new();
        write_telemetry(&mut telemetry, &run.telemetry)?;
        write_file(&dir.join("telemetry.csv"), &telemetry)?;
        let mut timing = Vec::new();
        write_timing(&mut timing, &run.telemetry, &run.solve_times)?;
        write_file(&dir.join("timing.csv"), &timing)?;
        let mut substeps = Vec::new();
        write_substeps(&mut substeps, &run.substeps)?;
        write_file(&dir.join("substeps.csv"), &substeps)?;
        let plots = if cfg.output.plots { write_plots(&dir, &run, variant.current_limit)? } else { Vec::new() };
        let rel = |f: &str| format!("{}/{f}", variant.name);
        variants.push(VariantReport {
            name: variant.name.clone(),
            current_limit: variant.current_limit,
            telemetry_file: rel("telemetry.csv"),
            timing_file: rel("timing.csv"),
            substeps_file: rel("substeps.csv"),
            plots: plots.iter().map(|p| rel(p)).collect(),
            telemetry_sha256: sha256_hex(&telemetry),
            metrics: run_metrics(cfg, &run),
        });
    }
    let report = RunReport {
        controller: cfg.controller.kind,
        duration: cfg.scenario.duration,
        tick_dt: cfg.tick_dt(),
        lead_in: cfg.controller.rho,
        settle_band: cfg.scenario.settle_band,
        training_samples,
        causality_violation,
        variants,
        provenance: Provenance::new(cfg, seed),
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Tpc,
    Deepc,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Tpc => "tpc",
            Method::Deepc => "deepc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub method: Method,
    /// `None` when the method cannot be built at this size.
    pub median_solve_time: Option<f64>,
    pub min_solve_time: Option<f64>,
    pub max_solve_time: Option<f64>,
    pub samples: usize,
    pub median_iterations: Option<f64>,
    /// Analytical estimate (DeePC) or exact controller footprint (TPC).
    pub memory_estimate_bytes: usize,
    pub measured_bytes: Option<usize>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub ticks: usize,
    pub rounds: usize,
    pub tpc_rounds: usize,
    pub provenance: Provenance,
}

struct BenchEntry {
    n: usize,
    method: Method,
    controller: Option<Box<dyn Controller>>,
    memory_estimate: usize,
    measured: Option<usize>,
    note: Option<String>,
    times: Vec<f64>,
    iterations: Vec<f64>,
}

/// Median per-tick solve times over closed-loop runs. Within a method the
/// sizes are interleaved round by round so slow drifts of the host affect
/// every N alike.
pub fn bench(cfg: &ExperimentConfig, seed: u64) -> HarnessResult<BenchReport> {
    let d = dims(cfg);
    let with_box = cfg.controller.input_lower.is_some();
    let with_cl = cfg.controller.current_limit.is_some();
    let variant = VariantSection { name: "bench".into(), current_limit: cfg.controller.current_limit };
    let mut entries = Vec::new();
    for &n in &cfg.bench.n_list {
        let mut plant = cfg.plant()?;
        let len = samples_for_columns(cfg, n);
        let spec = ExcitationSpec { length: len, ..cfg.excitation() };
        let traj = collect_training_data(&mut plant, &spec, len, seed, None)?;
        let (pred, h) = estimate_predictor(cfg, &traj)?;
        let tpc = TpcController::new(pred.clone(), cfg.tpc_config(Some(variant.current_limit)))?;
        let tpc_bytes = tpc.workspace_bytes() + (pred.hp.len() + pred.hu.len()) * std::mem::size_of::<f64>();
        entries.push(BenchEntry {
            n,
            method: Method::Tpc,
            controller: Some(Box::new(tpc)),
            memory_estimate: tpc_bytes,
            measured: Some(tpc_bytes),
            note: None,
            times: Vec::new(),
            iterations: Vec::new(),
        });
        if cfg.bench.deepc {
            let estimate = deepc_memory_estimate(h.n_cols(), &d, with_box, with_cl);
            let built = DeepcProblem::new(&h, cfg.deepc_settings(Some(variant.current_limit))).and_then(DeepcController::new);
            let (controller, measured, note): (Option<Box<dyn Controller>>, _, _) = match built {
                Ok(c) => {
                    let bytes = c.memory_bytes();
                    (Some(Box::new(c)), Some(bytes), None)
                }
                Err(e) => (None, None, Some(e.to_string())),
            };
            entries.push(BenchEntry {
                n,
                method: Method::Deepc,
                controller,
                memory_estimate: estimate,
                measured,
                note,
                times: Vec::new(),
                iterations: Vec::new(),
            });
        }
    }
    let schedule = cfg.schedule()?;
    let duration = cfg.bench.ticks as f64 * cfg.tick_dt();
    // Methods run apart so DeePC's large working set does not evict TPC's.
    for (method, rounds) in [(Method::Tpc, cfg.bench.tpc_rounds), (Method::Deepc, cfg.bench.rounds)] {
        for round in 0..rounds {
            for e in entries.iter_mut().filter(|e| e.method == method) {
                let Some(ctl) = e.controller.as_mut() else { continue };
                let mut plant = cfg.plant()?;
                let run =
                    run_closed_loop(&mut plant, ctl.as_mut(), &schedule, duration, seed.wrapping_add(1 + round as u64))?;
                e.times.extend(solved_times(&run));
                e.iterations
                    .extend(run.telemetry.iter().filter(|r| r.status.is_some()).map(|r| r.iterations as f64));
            }
        }
    }
    let rows = entries
        .into_iter()
        .map(|mut e| BenchRow {
            n: e.n,
            method: e.method,
            min_solve_time: e.times.iter().copied().reduce(f64::min),
            max_solve_time: e.times.iter().copied().reduce(f64::max),
            samples: e.times.len(),
            median_solve_time: median(&mut e.times),
            median_iterations: median(&mut e.iterations),
            memory_estimate_bytes: e.memory_estimate,
            measured_bytes: e.measured,
            note: e.note,
        })
        .collect();
    Ok(BenchReport {
        rows,
        ticks: cfg.bench.ticks,
        rounds: cfg.bench.rounds,
        tpc_rounds: cfg.bench.tpc_rounds,
        provenance: Provenance::new(cfg, seed),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
}

fn human_time(v: Option<f64>) -> String {
    match v {
        None => "-".into(),
        Some(t) if t >= 1e-3 => format!("{:.2} ms", t * 1e3),
        Some(t) => format!("{:.1} µs", t * 1e6),
    }
}

pub fn bench_csv(report: &BenchReport) -> HarnessResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "n",
        "method",
        "median_solve_time",
        "min_solve_time",
        "max_solve_time",
        "samples",
        "median_iterations",
        "memory_estimate_bytes",
        "measured_bytes",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.n.to_string(),
            r.method.name().to_string(),
            opt(r.median_solve_time),
            opt(r.min_solve_time),
            opt(r.max_solve_time),
            r.samples.to_string(),
            opt(r.median_iterations),
            r.memory_estimate_bytes.to_string(),
            r.measured_bytes.map(|b| b.to_string()).unwrap_or_else(|| "-".into()),
        ])?;
    }
    w.into_inner().map_err(|e| HarnessError::Data(e.to_string()))
}

/// Text table with one line per N: DeePC and TPC medians side by side.
pub fn bench_table(report: &BenchReport) -> String {
    let mut ns: Vec<usize> = report.rows.iter().map(|r| r.n).collect();
    ns.dedup();
    let mut s = format!("{:>8} | {:>12} | {:>12} | {:>16}\n", "N", "DeePC", "TPC", "DeePC memory est.");
    s.push_str(&format!("{}\n", "-".repeat(58)));
    for n in ns {
        let find = |m: Method| report.rows.iter().find(|r| r.n == n && r.method == m);
        let deepc = find(Method::Deepc);
        s.push_str(&format!(
            "{:>8} | {:>12} | {:>12} | {:>16}\n",
            n,
            human_time(deepc.and_then(|r| r.median_solve_time)),
            human_time(find(Method::Tpc).and_then(|r| r.median_solve_time)),
            deepc.map(|r| format!("{} B", r.memory_estimate_bytes)).unwrap_or_else(|| "-".into()),
        ));
    }
    s
}

pub fn cmd_bench(cfg: &ExperimentConfig, seed: u64, out: &Path) -> HarnessResult<BenchReport> {
    let report = bench(cfg, seed)?;
    write_file(&out.join("bench.csv"), &bench_csv(&report)?)?;
    let table = bench_table(&report);
    write_file(&out.join("bench.txt"), table.as_bytes())?;
    write_json(&out.join("report.json"), &report)?;
    print!("{table}");
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub seed: u64,
    pub n: usize,
    pub tpc_error: f64,
    pub deepc_error: f64,
    /// Causality violation of the TPC predictor relative to `‖Ĥ_u‖_F`.
    pub tpc_causality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub n: usize,
    pub tpc_median: f64,
    pub deepc_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub rows: Vec<BiasRow>,
    pub summary: Vec<BiasSummary>,
    /// TPC median at the largest N over the median at the smallest.
    pub tpc_ratio: f64,
    pub provenance: Provenance,
}

/// RMS multistep prediction error over every window of `val`, using the
/// recorded past and the recorded future inputs.
pub fn prediction_error(pred: &MultistepPredictor, val: &Trajectory) -> HarnessResult<f64> {
    let Dims { m, q, rho, tau } = pred.dims;
    let windows = val.len().checked_sub(rho + tau - 1).filter(|&w| w > 0).ok_or_else(|| {
        HarnessError::Config("validation record is shorter than one prediction window".into())
    })?;
    let mut zp = DVector::zeros((q + m) * rho);
    let mut uf = DVector::zeros(m * tau);
    let (mut acc, mut count) = (0.0, 0usize);
    for s in 0..windows {
        for b in 0..rho {
            zp.rows_mut(b * (q + m), q + m).copy_from(&val.z(s + b));
        }
        for k in 0..tau {
            uf.rows_mut(k * m, m).copy_from(&val.u.column(s + rho + k));
        }
        let yhat = pred.predict(&zp, &uf)?;
        for k in 0..tau {
            for c in 0..q {
                acc += (yhat[k * q + c] - val.y[(c, s + rho + k)]).powi(2);
                count += 1;
            }
        }
    }
    Ok((acc / count as f64).sqrt())
}

fn bias_seed(cfg: &ExperimentConfig, seed: u64) -> HarnessResult<Vec<BiasRow>> {
    let b = &cfg.bias;
    let schedule = cfg.bias_schedule()?;
    let mut clean = cfg.plant_with_noise([0.0; 4])?;
    let vspec = ExcitationSpec { amplitude: b.validation_amplitude, length: b.validation_length, channels: 2 };
    let val = collect_training_data(&mut clean, &vspec, b.validation_length, 10_000 + seed, None)?;
    let mut rows = Vec::new();
    for &n in &b.n_list {
        let mut plant = cfg.plant_with_noise([b.noise_std; 4])?;
        let mut fb = ProportionalFeedback::inverter(b.feedback_gain);
        let len = samples_for_columns(cfg, n);
        let spec = ExcitationSpec { amplitude: b.amplitude, length: len, channels: 2 };
        let traj = collect_training_data(&mut plant, &spec, len, seed, Some((&mut fb, &schedule)))?;
        let h = build_hankel(&traj, cfg.controller.rho, cfg.controller.tau)?;
        let tpc = estimate(&h, &EstimatorOptions::default())?;
        let deepc = implied_predictor(&h)?;
        rows.push(BiasRow {
            seed,
            n,
            tpc_error: prediction_error(&tpc, &val)?,
            deepc_error: prediction_error(&deepc, &val)?,
            tpc_causality: tpc.causality_violation() / tpc.hu.norm(),
        });
    }
    Ok(rows)
}

/// Per seed: closed-loop noisy data for every N, TPC and DeePC-implied
/// predictors, and their errors on a noise-free open-loop validation record.
/// Seeds run on separate threads; results do not depend on scheduling.
pub fn bias(cfg: &ExperimentConfig, seed: u64) -> HarnessResult<BiasReport> {
    let seeds: Vec<u64> = (0..cfg.bias.seeds as u64).map(|i| seed.wrapping_mul(1000).wrapping_add(i)).collect();
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(seeds.len()).max(1);
    let chunk = seeds.len().div_ceil(threads);
    let results: Vec<HarnessResult<Vec<BiasRow>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || -> HarnessResult<Vec<BiasRow>> {
                    let mut rows = Vec::new();
                    for &s in part {
                        rows.extend(bias_seed(cfg, s)?);
                    }
                    Ok(rows)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("bias worker panicked")).collect()
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    let summary: Vec<BiasSummary> = cfg
        .bias
        .n_list
        .iter()
        .map(|&n| {
            let mut t: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.tpc_error).collect();
            let mut d: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.deepc_error).collect();
            BiasSummary { n, tpc_median: median(&mut t).unwrap_or(f64::NAN), deepc_median: median(&mut d).unwrap_or(f64::NAN) }
        })
        .collect();
    let tpc_ratio = summary.last().unwrap().tpc_median / summary[0].tpc_median;
    Ok(BiasReport { rows, summary, tpc_ratio, provenance: Provenance::new(cfg, seed) })
}

pub fn cmd_bias(cfg: &ExperimentConfig, seed: u64, out: &Path) -> HarnessResult<BiasReport> {
    let report = bias(cfg, seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["seed", "n", "tpc_error", "deepc_error", "tpc_causality"])?;
    for r in &report.rows {
        w.write_record([
            r.seed.to_string(),
            r.n.to_string(),
            r.tpc_error.to_string(),
            r.deepc_error.to_string(),
            r.tpc_causality.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Data(e.to_string()))?;
    write_file(&out.join("bias.csv"), &bytes)?;
    write_json(&out.join("report.json"), &report)?;
    println!("{:>8} | {:>12} | {:>12}", "N", "TPC median", "DeePC median");
    for s in &report.summary {
        println!("{:>8} | {:>12.6} | {:>12.6}", s.n, s.tpc_median, s.deepc_median);
    }
    println!("TPC error ratio largest/smallest N: {:.3}", report.tpc_ratio);
    Ok(report)
}
