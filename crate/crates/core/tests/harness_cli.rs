use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use coteach::harness::{
    cell_csv_name, metrics_csv, prepare_data, run_experiment, run_sweep, summarize,
    train_prepared, ExperimentConfig, RunSummary, CSV_HEADER,
};
use coteach::strategies::Strategy;

fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/determinism.json")
}

fn fixture() -> ExperimentConfig {
    ExperimentConfig::load(&fixture_path()).unwrap()
}

fn short(epochs: usize) -> ExperimentConfig {
    let mut cfg = fixture();
    cfg.optimizer.epochs = epochs;
    cfg.optimizer.decay_start = epochs.min(cfg.optimizer.decay_start);
    cfg.strategy.e_k = epochs.clamp(1, 2);
    cfg.strategy.warmup_epochs = 0;
    cfg
}

fn coteach(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coteach"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn one_epoch_csv_has_header_and_one_row() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&short(1), dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines[1].split(',').count(), 8);
    assert!(lines[1].starts_with("0,1,"));
}

#[test]
fn summary_matches_csv_columns() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&short(13), dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 13);
    let last10 = &rows[3..];
    let mean = |col: usize| last10.iter().map(|r| r[col]).sum::<f64>() / 10.0;
    assert!((summary.mean_acc_1.unwrap() - mean(2)).abs() < 1e-12);
    assert!((summary.mean_acc_2.unwrap() - mean(3)).abs() < 1e-12);
    assert!((summary.mean_purity.unwrap() - mean(5)).abs() < 1e-12);
    // last quarter of 13 epochs is 3 epochs
    let tv = rows[10..].iter().map(|r| r[4]).sum::<f64>() / 3.0;
    assert!((summary.mean_tv_last_quarter.unwrap() - tv).abs() < 1e-12);
    let peak = rows.iter().map(|r| r[2]).fold(0.0, f64::max);
    assert_eq!(summary.peak_acc_1, Some(peak));

    let json = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let back: RunSummary = serde_json::from_str(&json).unwrap();
    assert_eq!(back, summary);
}

#[test]
fn single_network_rows_leave_pair_columns_empty() {
    let mut cfg = short(2);
    cfg.strategy.name = Strategy::Standard;
    let data = prepare_data(&cfg).unwrap();
    let (_, history) = train_prepared(&cfg, &data).unwrap();
    let csv = metrics_csv(&history);
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!((f[3], f[4]), ("", ""));
    }
    let s = summarize(Strategy::Standard, 0, data.empirical_noise_rate, &history);
    assert_eq!(s.mean_tv_last_quarter, None);
}

#[test]
fn cli_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture_path();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = coteach(&["--out", out.to_str().unwrap(), "run", "--config", config.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push((
            std::fs::read(out.join("metrics.csv")).unwrap(),
            std::fs::read(out.join("summary.json")).unwrap(),
            o.stdout,
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn sweep_writes_one_csv_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short(2);
    let result = run_sweep(&cfg, &Strategy::ALL, 2, dir.path(), 4).unwrap();
    assert_eq!(result.cells.len(), 10);
    assert_eq!(result.rows.len(), 5);
    for s in Strategy::ALL {
        assert_eq!(result.cells_for(s).count(), 2);
        for t in 0..2 {
            let csv = std::fs::read_to_string(dir.path().join(cell_csv_name(s, t))).unwrap();
            assert_eq!(csv.lines().count(), 3);
        }
    }
    let table = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(table.lines().count(), 6);

    // same cells regardless of parallelism
    let dir2 = tempfile::tempdir().unwrap();
    assert_eq!(run_sweep(&cfg, &Strategy::ALL, 2, dir2.path(), 1).unwrap(), result);
}

#[test]
fn single_cell_sweep_equals_run() {
    let cfg = short(3);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let run = run_experiment(&cfg, a.path()).unwrap();
    let sweep = run_sweep(&cfg, &[cfg.strategy.name], 1, b.path(), 1).unwrap();
    assert_eq!(sweep.cells, vec![run]);
    assert_eq!(
        std::fs::read(a.path().join("metrics.csv")).unwrap(),
        std::fs::read(b.path().join(cell_csv_name(cfg.strategy.name, 0))).unwrap()
    );
}

#[test]
fn zero_epochs_write_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture();
    cfg.optimizer.epochs = 0;
    cfg.optimizer.decay_start = 0;
    cfg.strategy.warmup_epochs = 0;
    cfg.strategy.warmup_mode = coteach::strategies::WarmupMode::None;
    let s = run_experiment(&cfg, dir.path()).unwrap();
    assert_eq!(s.epochs, 0);
    assert_eq!(s.mean_acc_1, None);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv, format!("{CSV_HEADER}\n"));
}

fn write_variant(dir: &Path, name: &str, edit: impl Fn(&mut serde_json::Value)) -> PathBuf {
    let text = std::fs::read_to_string(fixture_path()).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    edit(&mut v);
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string(&v).unwrap()).unwrap();
    p
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let code = |cfg: &Path| coteach(&["--out", out, "run", "--config", cfg.to_str().unwrap()]).status.code();

    let unknown = write_variant(dir.path(), "unknown.json", |v| {
        v["optimizer"]["momentum"] = 0.9.into();
    });
    assert_eq!(code(&unknown), Some(2));

    let same_seeds = write_variant(dir.path(), "seeds.json", |v| {
        v["seeds"]["init2"] = 11.into();
    });
    assert_eq!(code(&same_seeds), Some(2));

    let huge_lr = write_variant(dir.path(), "lr.json", |v| {
        v["optimizer"]["lr"] = 1e308.into();
    });
    assert_eq!(code(&huge_lr), Some(3));

    let missing = write_variant(dir.path(), "missing.json", |v| {
        v["dataset"] = serde_json::json!({"mnist": {
            "train_images": "nope-images", "train_labels": "nope-labels",
            "test_images": "nope-images", "test_labels": "nope-labels"}});
    });
    assert_eq!(code(&missing), Some(4));

    std::fs::write(dir.path().join("bad-images"), b"not an idx file at all").unwrap();
    std::fs::write(dir.path().join("bad-labels"), b"\0\0\x08\x01\0\0\0\0").unwrap();
    let corrupt = write_variant(dir.path(), "corrupt.json", |v| {
        v["dataset"] = serde_json::json!({"mnist": {
            "train_images": "bad-images", "train_labels": "bad-labels",
            "test_images": "bad-images", "test_labels": "bad-labels"}});
    });
    assert_eq!(code(&corrupt), Some(4));

    assert_eq!(code(&dir.path().join("absent.json")), Some(4));
    let o = coteach(&["make-noise", "--kind", "pair", "--tau", "1.5", "--classes", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn make_noise_prints_parseable_matrix() {
    let o = coteach(&["make-noise", "--kind", "symmetric", "--tau", "0.5", "--classes", "3"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text, "3\n0.5 0.25 0.25\n0.25 0.5 0.25\n0.25 0.25 0.5\n");
    let q = coteach::noise::TransitionMatrix::parse_text(&text).unwrap();
    assert_eq!(q.noise_rate(), 0.5);
}

#[test]
fn custom_noise_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<String> = (0..10)
        .map(|i| {
            (0..10)
                .map(|j| if i == j { "1" } else { "0" })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    std::fs::write(dir.path().join("q.txt"), format!("10\n{}\n", rows.join("\n"))).unwrap();
    let p = write_variant(dir.path(), "custom.json", |v| {
        v["noise"] = serde_json::json!({"kind": "custom", "matrix_path": "q.txt"});
        v["strategy"]["tau"] = 0.2.into();
        v["optimizer"]["epochs"] = 1.into();
        v["optimizer"]["decay_start"] = 1.into();
        v["strategy"]["e_k"] = 1.into();
        v["strategy"]["warmup_epochs"] = 0.into();
    });
    let cfg = ExperimentConfig::load(&p).unwrap();
    let data = prepare_data(&cfg).unwrap();
    assert_eq!(data.empirical_noise_rate, 0.0);
    assert_eq!(data.train.noisy_labels().unwrap(), data.train.clean_labels());
}
