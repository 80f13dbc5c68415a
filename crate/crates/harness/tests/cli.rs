use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DVector;

use tpc_core::hankel::{SignalLayout, Trajectory};
use tpc_core::predictor::MultistepPredictor;
use tpc_harness::commands::{bias, cmd_run, sha256_hex, RunReport};
use tpc_harness::metrics;
use tpc_harness::telemetry::{read_telemetry, read_timing};
use tpc_harness::ExperimentConfig;
use tpc_oracles::{stack_window, white_inputs, InnovationModel};

fn tpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpc")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn collect_writes_500_rows_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        let o = tpc(&["collect", "--config", "fig3", "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let text = std::fs::read_to_string(a.join("training.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,u_0,u_1,y_0,y_1,y_2,y_3"));
    assert_eq!(lines.count(), 500);
    let hash = |p: &Path| sha256_hex(&std::fs::read(p.join("training.csv")).unwrap());
    assert_eq!(hash(&a), hash(&b));
    assert_ne!(hash(&a), hash(&c));
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("training.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["csv_sha256"], hash(&a));
    assert_eq!(meta["provenance"]["seed"], 7);
    assert_eq!(meta["mode"], "open_loop");
}

#[test]
fn estimate_then_run_from_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert!(tpc(&["collect", "--config", "fig3", "--out", out]).status.success());
    let o = tpc(&["estimate", "--config", "fig3", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let artifact = dir.path().join("predictor.csv");
    let pred = MultistepPredictor::read_artifact(std::fs::File::open(&artifact).unwrap(), None).unwrap();
    assert_eq!(pred.hp.shape(), (24, 36));
    assert_eq!(pred.hu.shape(), (24, 12));

    let closed = dir.path().join("closed");
    let o = tpc(&[
        "collect",
        "--config",
        "fig3",
        "--closed-loop",
        "--predictor",
        artifact.to_str().unwrap(),
        "--out",
        closed.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let meta = std::fs::read_to_string(closed.join("training.meta.json")).unwrap();
    assert!(meta.contains("\"mode\": \"tpc\""));

    let run_out = dir.path().join("run");
    let o = tpc(&["run", "--config", "fig3", "--predictor", artifact.to_str().unwrap(), "--out", run_out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: RunReport = serde_json::from_str(&std::fs::read_to_string(run_out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.variants.len(), 2);
    for v in &report.variants {
        for plot in &v.plots {
            let svg = std::fs::read_to_string(run_out.join(plot)).unwrap();
            assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
        }
    }
}

#[test]
fn summary_metrics_are_recomputable_from_the_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::preset("fig3").unwrap();
    let report = cmd_run(&cfg, 11, dir.path(), None, None).unwrap();
    for v in &report.variants {
        let rows = read_telemetry(std::fs::File::open(dir.path().join(&v.telemetry_file)).unwrap()).unwrap();
        let times: Vec<f64> = read_timing(std::fs::File::open(dir.path().join(&v.timing_file)).unwrap())
            .unwrap()
            .into_iter()
            .map(|(_, t)| t)
            .collect();
        let again = metrics::compute(&rows, &times, report.lead_in, report.settle_band);
        assert_eq!(again, v.metrics);
        assert_eq!(sha256_hex(&std::fs::read(dir.path().join(&v.telemetry_file)).unwrap()), v.telemetry_sha256);
    }
}

#[test]
fn zero_duration_run_gives_an_empty_table_and_a_valid_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset("fig3").unwrap();
    cfg.scenario.duration = 0.0;
    let report = cmd_run(&cfg, 1, dir.path(), None, None).unwrap();
    for v in &report.variants {
        assert_eq!(v.metrics.ticks, 0);
        assert!(v.metrics.p.is_none());
        let text = std::fs::read_to_string(dir.path().join(&v.telemetry_file)).unwrap();
        assert_eq!(text.lines().count(), 1);
    }
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["provenance"]["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn exit_codes_distinguish_config_data_and_numerical_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    let bad = write_config(dir.path(), "bad.toml", "[controller]\nly_weights = [1.0, 1.0, 0.0]\n");
    assert_eq!(tpc(&["run", "--config", &bad, "--out", out]).status.code(), Some(1));
    let unknown = write_config(dir.path(), "unknown.toml", "[plant]\ntheta_typo = 1.0\n");
    assert_eq!(tpc(&["run", "--config", &unknown, "--out", out]).status.code(), Some(1));
    assert_eq!(tpc(&["run", "--config", "no-such-preset", "--out", out]).status.code(), Some(1));
    assert_eq!(tpc(&["run", "--bogus-flag"]).status.code(), Some(1));

    let missing = dir.path().join("missing.csv");
    let o = tpc(&["estimate", "--config", "fig3", "--data", missing.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(2));

    // Zero excitation and no noise: every sample is zero and the stack has rank 0.
    let flat = write_config(
        dir.path(),
        "flat.toml",
        "[plant]\nnoise_std = [0.0, 0.0, 0.0, 0.0]\n[training]\namplitude = 0.0\n",
    );
    assert!(tpc(&["collect", "--config", &flat, "--out", out]).status.success());
    let o = tpc(&["estimate", "--config", &flat, "--out", out]);
    assert_eq!(o.status.code(), Some(3));
    let msg = stderr(&o);
    assert!(msg.contains("row") && msg.contains("singular"), "{msg}");
}

#[test]
fn bench_with_a_single_size_has_one_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bench.toml",
        "[controller]\ncurrent_limit = 1.0\n[bench]\nn_list = [100]\nticks = 12\nrounds = 1\n",
    );
    let o = tpc(&["bench", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("100,tpc,") && rows[1].starts_with("100,deepc,"));
}

#[test]
fn bench_reports_oversized_deepc_as_a_dash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bench.toml", "[bench]\nn_list = [600]\nticks = 8\nrounds = 1\n");
    let o = tpc(&["bench", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let deepc = csv.lines().find(|l| l.starts_with("600,deepc,")).unwrap();
    assert!(deepc.starts_with("600,deepc,-,-,-,0,-,"), "{deepc}");
}

#[test]
fn estimate_recovers_an_oracle_predictor_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let sys = InnovationModel::random_deadbeat(4, 2, 4, 17);
    let len = 2000 + 11;
    let u = white_inputs(2, len, 1.0, 3);
    // Innovation noise of 1e-8 keeps the stack at full rank; exactly
    // noise-free data is rank deficient.
    let y = sys.simulate(&u, 1e-8, 4);
    let traj = Trajectory::new(0.01, u, y, SignalLayout::inverter()).unwrap();
    let data = dir.path().join("oracle.csv");
    traj.write_csv(std::fs::File::create(&data).unwrap()).unwrap();
    let o = tpc(&["estimate", "--config", "fig3", "--data", data.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pred = MultistepPredictor::read_artifact(std::fs::File::open(dir.path().join("predictor.csv")).unwrap(), None).unwrap();
    // Entries along noise-only directions stay undetermined; compare
    // predictions on clean trajectories of the same system instead.
    let u = white_inputs(2, 80, 1.0, 5);
    let y = sys.simulate(&u, 0.0, 0);
    let mut worst: f64 = 0.0;
    for s in 0..60 {
        let zp = stack_window(&y, &u, s, 6);
        let uf = DVector::from_fn(12, |i, _| u[(i % 2, s + 6 + i / 2)]);
        let yhat = pred.predict(&zp, &uf).unwrap();
        for k in 0..6 {
            for c in 0..4 {
                worst = worst.max((yhat[k * 4 + c] - y[(c, s + 6 + k)]).abs());
            }
        }
    }
    assert!(worst < 1e-6, "{worst:e}");
}

#[test]
fn presets_parse_validate_and_round_trip() {
    for (name, _) in tpc_harness::config::PRESETS {
        let cfg = ExperimentConfig::preset(name).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again, "{name}");
        assert_eq!(cfg.hash(), again.hash());
    }
    let o = tpc(&["presets"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 5);
}

#[test]
fn bias_needs_five_seeds() {
    let mut cfg = ExperimentConfig::preset("bias").unwrap();
    cfg.bias.seeds = 4;
    assert!(cfg.validate().is_err());
}

#[test]
fn near_noise_free_closed_loop_data_shows_no_bias() {
    // Exactly noise-free data makes the Hankel stack rank deficient, so the
    // degenerate case is probed with vanishing noise.
    let mut cfg = ExperimentConfig::preset("bias").unwrap();
    cfg.bias.seeds = 5;
    cfg.bias.n_list = vec![500];
    cfg.bias.noise_std = 1e-7;
    let report = bias(&cfg, 0).unwrap();
    for r in &report.rows {
        assert!(r.tpc_error < 1e-6 && r.deepc_error < 1e-6, "{r:?}");
    }
}

#[test]
fn bias_error_trend_is_nonincreasing_in_n() {
    let cfg = ExperimentConfig::preset("bias").unwrap();
    let report = bias(&cfg, cfg.seed).unwrap();
    for w in report.summary.windows(2) {
        assert!(w[1].tpc_median <= w[0].tpc_median, "{:?}", report.summary);
    }
    let mut again = bias(&cfg, cfg.seed).unwrap();
    again.provenance = report.provenance.clone();
    assert_eq!(again, report);
}
