use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use kinn_core::dataset::{load_series, SeriesFrame, WindowSpec};
use kinn_core::evaluation::Arm;
use kinn_core::experiment::{
    derive_seed, emit_plot_data, run_experiment, run_in_memory, validate_data, ArchSpec, ArmSelection,
    ExperimentError, RunConfig,
};
use kinn_core::models::Arch;

fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2010, 1, 4).unwrap()
}

fn wavy(n: usize) -> Vec<f64> {
    (0..n).map(|i| 1000.0 + 2.0 * i as f64 + 40.0 * (i as f64 * 0.21).sin() + 15.0 * (i as f64 * 1.7).cos()).collect()
}

fn write_series(dir: &Path, values: &[f64]) -> std::path::PathBuf {
    let mut s = String::from("date,value\n");
    for (i, v) in values.iter().enumerate() {
        writeln!(s, "{},{v}", start() + chrono::Duration::days(i as i64)).unwrap();
    }
    let path = dir.join("series.csv");
    std::fs::write(&path, s).unwrap();
    path
}

fn quick_config(arch: &str, epochs: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.set("architectures", arch).unwrap();
    cfg.epochs = epochs;
    cfg.threads = 1;
    cfg
}

#[test]
fn config_file_parses() {
    let cfg = RunConfig::parse(
        "# experiment\narchitectures = kgate, relu:raw, rbf\nnormalize = rbf=false\narms = kinn\nepochs = 50\nseed = 9  # master\nlr=0.005\n",
    )
    .unwrap();
    assert_eq!(cfg.architectures.len(), 3);
    assert_eq!(cfg.architectures[0], ArchSpec { arch: Arch::Kgate, normalize: false });
    assert_eq!(cfg.architectures[1], ArchSpec { arch: Arch::MlpRelu, normalize: false });
    assert_eq!(cfg.architectures[2], ArchSpec { arch: Arch::Rbf, normalize: false });
    assert_eq!(cfg.arms, ArmSelection::Kinn);
    assert_eq!((cfg.epochs, cfg.seed, cfg.lr), (50, 9, 0.005));
    assert_eq!(cfg.architectures[0].label(), "kgate_raw");
    assert_eq!(RunConfig::default().architectures[0].label(), "kgate_norm");
    assert_eq!(cfg.architectures[1].label(), "mlp_relu_raw");
}

#[test]
fn config_errors_are_reported() {
    let err = RunConfig::parse("epochs = 10\narchitectures = lstm\n").unwrap_err();
    assert!(matches!(err, ExperimentError::Config(ref m) if m.contains("line 2")), "{err}");
    assert!(RunConfig::parse("colour = blue").is_err());
    assert!(RunConfig::parse("epochs = many").is_err());
    let mut cfg = RunConfig::default();
    cfg.train_obs = 62;
    assert!(cfg.validate().is_err());
    cfg = RunConfig::default();
    cfg.lr = 0.0;
    assert!(cfg.validate().is_err());
}

#[test]
fn derived_seeds_separate_items() {
    let d = start();
    let base = derive_seed(0, "kgate_norm", Arm::Ann, d);
    assert_eq!(base, derive_seed(0, "kgate_norm", Arm::Ann, d));
    assert_ne!(base, derive_seed(1, "kgate_norm", Arm::Ann, d));
    assert_ne!(base, derive_seed(0, "kgate_raw", Arm::Ann, d));
    assert_ne!(base, derive_seed(0, "kgate_norm", Arm::Kinn, d));
    assert_ne!(base, derive_seed(0, "kgate_norm", Arm::Ann, d.succ_opt().unwrap()));
}

#[test]
fn linear_trend_is_forecast_closely() {
    let values: Vec<f64> = (0..240).map(|i| 500.0 + 3.0 * i as f64).collect();
    let frame = SeriesFrame::from_values(start(), values).unwrap();
    for arch in ["linear_closed_form:raw", "linear_closed_form:norm"] {
        let cfg = quick_config(arch, 1);
        let (sessions, items, tables) = run_in_memory(&cfg, &frame).unwrap();
        assert_eq!(sessions.len(), 1);
        assert_eq!(items.len(), 2);
        // trend windows are collinear, so the fit goes through the ridge fallback
        for item in &items {
            assert!(item.result.mape < 1e-5, "{arch} {}: {}", item.arm, item.result.mape);
            assert_eq!(item.trace.len(), 91 * 30);
        }
        assert!(tables[0].flags.contains(&"single_session".to_string()));
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let frame = SeriesFrame::from_values(start(), wavy(480)).unwrap();
    let mut cfg = quick_config("relu:raw,kgate", 15);
    let (_, serial, _) = run_in_memory(&cfg, &frame).unwrap();
    cfg.threads = 3;
    let (_, parallel, _) = run_in_memory(&cfg, &frame).unwrap();
    assert_eq!(serial.len(), 12);
    for (a, b) in serial.iter().zip(&parallel) {
        assert_eq!((a.spec, a.arm, a.session_index, a.seed), (b.spec, b.arm, b.session_index, b.seed));
        assert_eq!(a.result, b.result);
        assert_eq!(a.trace, b.trace);
    }
}

#[test]
fn sessions_only_see_their_own_blocks() {
    let base = wavy(480);
    let mut altered = base.clone();
    for v in &mut altered[360..] {
        *v *= 1.5;
    }
    let cfg = quick_config("tanh", 10);
    let (_, a, _) = run_in_memory(&cfg, &SeriesFrame::from_values(start(), base).unwrap()).unwrap();
    let (_, b, _) = run_in_memory(&cfg, &SeriesFrame::from_values(start(), altered).unwrap()).unwrap();
    for (x, y) in a.iter().zip(&b) {
        if x.session_index < 2 {
            assert_eq!(x.result, y.result, "session {} leaked", x.session_index);
        } else {
            assert_ne!(x.result, y.result);
        }
    }
}

#[test]
fn run_writes_reports_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let values = wavy(360);
    let data = write_series(dir.path(), &values);
    let mut cfg = quick_config("relu:raw", 5);
    cfg.data = data.clone();
    cfg.output_dir = dir.path().join("out");
    cfg.dump_windows = true;
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.sessions.len(), 2);
    let out = &cfg.output_dir;
    for f in ["sessions.csv", "summary.csv", "run_metadata.json", "windows.jsonl"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let sessions = std::fs::read_to_string(out.join("sessions.csv")).unwrap();
    assert_eq!(sessions.lines().count(), 1 + 2 * 2);
    let dump = std::fs::read_to_string(out.join("windows.jsonl")).unwrap();
    assert_eq!(dump.lines().count(), 2 * 30);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["session_pairs"], 2);
    assert_eq!(meta["items"].as_array().unwrap().len(), 4);
    assert_eq!(meta["items"][0]["train_start_date"], start().to_string());

    let frame = load_series(&data).unwrap();
    let mut actual_by_arm = Vec::new();
    for arm in [Arm::Ann, Arm::Kinn] {
        let path = emit_plot_data(out, "mlp_relu_raw", arm).unwrap();
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        assert_eq!(
            rdr.headers().unwrap().iter().collect::<Vec<_>>(),
            ["session", "window", "horizon", "day", "date", "actual", "predicted"]
        );
        let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 2 * 91 * 30);
        let mut actuals = Vec::new();
        for (k, r) in rows.iter().enumerate() {
            let window: usize = r[1].parse().unwrap();
            let horizon: usize = r[2].parse().unwrap();
            let day: usize = r[3].parse().unwrap();
            assert_eq!(horizon, k % 30);
            assert_eq!(window, (k / 30) % 91);
            assert_eq!(r[4].to_string(), frame.dates()[day].to_string());
            let a: f64 = r[5].parse().unwrap();
            assert_eq!(a, values[day]);
            actuals.push(a);
        }
        actual_by_arm.push(actuals);
    }
    assert_eq!(actual_by_arm[0], actual_by_arm[1]);
    assert!(matches!(emit_plot_data(out, "kgate_norm", Arm::Ann), Err(ExperimentError::MissingArtifact(_))));
}

#[test]
fn run_rejects_bad_data() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_config("relu", 1);
    cfg.data = write_series(dir.path(), &wavy(200));
    cfg.output_dir = dir.path().join("out");
    assert!(matches!(run_experiment(&cfg), Err(ExperimentError::Data(_))));
    cfg.data = dir.path().join("missing.csv");
    assert!(run_experiment(&cfg).is_err());
}

#[test]
fn djia_file_validates() {
    let path = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/djia_2005_2022.csv"));
    let s = validate_data(path, &WindowSpec::default()).unwrap();
    assert_eq!(s.full_sessions, 35);
    assert_eq!(s.session_pairs, 34);
    assert_eq!(s.first_date.to_string().get(..4), Some("2005"));
}
