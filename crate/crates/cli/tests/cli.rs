use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mmdbfair::diff::Matrix;
use mmdbfair::evaluation::{majority_rate, read_embeddings};
use mmdbfair::fairlearn::{load_model, save_model};
use mmdbfair::FairModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mmdbfair"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

fn field(row: &str, k: usize) -> f64 {
    row.split(',').nth(k).unwrap().parse().unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(&path, body).unwrap();
    path
}

const QUICK: &str = "synthetic = 300, 150, 500\npreset = compas\nmode = eo\nmax_epochs = 3\nseed = 1\n";

fn train(dir: &Path, extra: &[&str]) -> PathBuf {
    let cfg = write_config(dir, QUICK);
    let out = dir.join("train");
    let mut args = vec!["train", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn zero_epochs_write_a_header_only_history() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path(), &["--max-epochs", "0"]);
    assert_eq!(lines(&out.join("history.csv")), vec!["epoch,l_cls,rho_s,rho_t,train_objective,val_objective"]);
    assert!(out.join("model.mbfm").exists());
    let report = lines(&out.join("report.csv"));
    assert_eq!(report.len(), 2);
    assert_eq!(report[0], "lambda_s,seed,accuracy,dp,eo,eo_t0,eo_t1,samples");
}

#[test]
fn training_writes_one_history_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path(), &[]);
    let history = lines(&out.join("history.csv"));
    assert_eq!(history.len(), 4);
    for (i, row) in history[1..].iter().enumerate() {
        assert!(row.starts_with(&format!("{},", i + 1)));
        assert_eq!(row.split(',').count(), 6);
    }
    let model = load_model(&out.join("model.mbfm")).unwrap();
    assert_eq!(model.input_dim(), 2);
}

#[test]
fn identical_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let oa = train(a.path(), &["--lambda-s", "5"]);
    let ob = train(b.path(), &["--lambda-s", "5"]);
    for f in ["history.csv", "report.csv", "model.mbfm"] {
        assert_eq!(std::fs::read(oa.join(f)).unwrap(), std::fs::read(ob.join(f)).unwrap(), "{f}");
    }
    let oc = train(b.path(), &["--lambda-s", "5", "--seed", "2"]);
    assert_ne!(std::fs::read(oa.join("history.csv")).unwrap(), std::fs::read(oc.join("history.csv")).unwrap());
}

#[test]
fn floats_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path(), &[]);
    for row in &lines(&out.join("history.csv"))[1..] {
        for v in row.split(',').skip(1) {
            let x: f64 = v.parse().unwrap();
            assert_eq!(format!("{x:.16e}"), v);
        }
    }
}

#[test]
fn sweep_with_one_cell_writes_one_detail_and_one_aggregate_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUICK);
    let out = dir.path().join("sweep");
    let o = run(&[
        "sweep",
        "-c",
        cfg.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--lambdas",
        "10",
        "--audit",
        "false",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let detail = lines(&out.join("sweep.csv"));
    assert_eq!(detail[0], "lambda_s,seed,accuracy,dp,eo,sensitive_audit_acc,mmd_audit_power");
    assert_eq!(detail.len(), 2);
    assert!(detail[1].ends_with(",,"));
    assert_eq!(lines(&out.join("sweep_aggregate.csv")).len(), 2);
    let run_dir = out.join("runs").join("lambda_10_seed_1");
    for f in ["model.mbfm", "history.csv", "report.csv"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
}

#[test]
fn sweep_aggregates_equal_hand_averages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUICK);
    let out = dir.path().join("sweep");
    let o = run(&[
        "sweep",
        "-c",
        cfg.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--lambdas",
        "0, 10",
        "--seeds",
        "1, 2, 3",
        "--workers",
        "3",
        "--audit-trials",
        "5",
        "--audit-kernel-epochs",
        "2",
        "--audit-classifier-epochs",
        "5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let detail = lines(&out.join("sweep.csv"));
    let agg = lines(&out.join("sweep_aggregate.csv"));
    assert_eq!(detail.len(), 7);
    assert_eq!(agg.len(), 3);
    let seeds: Vec<f64> = detail[1..].iter().map(|r| field(r, 1)).collect();
    assert_eq!(seeds, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    for (g, row) in agg[1..].iter().enumerate() {
        let cells = &detail[1 + 3 * g..4 + 3 * g];
        assert_eq!(field(row, 0), field(&cells[0], 0));
        for (col, agg_col) in [(2, 2), (3, 4), (4, 6), (5, 8), (6, 10)] {
            let vals: Vec<f64> = cells.iter().map(|c| field(c, col)).collect();
            let mean = vals.iter().sum::<f64>() / 3.0;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
            assert!((field(row, agg_col) - mean).abs() <= 1e-12, "column {col}");
            assert!((field(row, agg_col + 1) - sd).abs() <= 1e-12, "column {col}");
        }
    }
    for l in ["0", "10"] {
        for s in 1..=3 {
            let run = out.join("runs").join(format!("lambda_{l}_seed_{s}"));
            assert!(run.join("audit.csv").exists());
        }
    }
}

#[test]
fn audit_is_deterministic_and_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path(), &[]);
    let cfg = write_config(dir.path(), QUICK);
    let model = out.join("model.mbfm");
    let mut rows = Vec::new();
    for k in 0..2 {
        let audit_dir = dir.path().join(format!("audit{k}"));
        let o = run(&[
            "audit",
            "--model",
            model.to_str().unwrap(),
            "-c",
            cfg.to_str().unwrap(),
            "--out-dir",
            audit_dir.to_str().unwrap(),
            "--audit-trials",
            "10",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        rows.push(lines(&audit_dir.join("audit.csv")));
    }
    assert_eq!(rows[0], rows[1]);
    assert_eq!(
        rows[0][0],
        "seed,sensitive_audit_acc,majority_baseline,mmd_audit_power,rejections,trials"
    );
    let power = field(&rows[0][1], 3);
    assert!((0.0..=1.0).contains(&power));
    assert_eq!(field(&rows[0][1], 5), 10.0);
}

#[test]
fn constant_representation_audits_at_the_majority_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = FairModel::new(2, &[3], 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for p in model.featurizer.parameters_mut() {
        *p = Matrix::zeros(p.rows(), p.cols());
    }
    let path = dir.path().join("constant.mbfm");
    save_model(&path, &model).unwrap();
    let cfg = write_config(dir.path(), QUICK);
    let out = dir.path().join("audit");
    let o = run(&[
        "audit",
        "--model",
        path.to_str().unwrap(),
        "-c",
        cfg.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--audit-trials",
        "10",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let row = &lines(&out.join("audit.csv"))[1];
    assert_eq!(field(row, 1), field(row, 2));
    assert_eq!(field(row, 3), 0.0);
}

#[test]
fn audit_rejects_a_model_of_the_wrong_width() {
    let dir = tempfile::tempdir().unwrap();
    let model = FairModel::new(5, &[3], 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let path = dir.path().join("wide.mbfm");
    save_model(&path, &model).unwrap();
    let cfg = write_config(dir.path(), QUICK);
    let o = run(&["audit", "--model", path.to_str().unwrap(), "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("expects 5 input features"), "{}", stderr(&o));
}

#[test]
fn chi2_on_independent_labels_is_small() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "chi2",
        "--synthetic",
        "2000, 500, 500",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = lines(&dir.path().join("chi2.csv"));
    assert_eq!(rows[0], "split,n,statistic,p_value");
    let names: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(names, vec!["train", "val", "test"]);
    assert_eq!(field(&rows[1], 1), 2000.0);
    assert!(field(&rows[1], 2) < 3.85);
}

#[test]
fn config_errors_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "synthetic = 100, 50, 100\n\nmax_epochs = many\n");
    let o = run(&["train", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("run.cfg:3"), "{}", stderr(&o));
    let o = run(&["train", "--mode", "xy", "--synthetic", "10,10,10"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["train", "--no-such-flag", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no dataset"), "{}", stderr(&o));
}

#[test]
fn schema_paths_resolve_against_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut csv = String::from("x,group,label\n");
    for _ in 0..200 {
        let s: u8 = rng.gen_range(0..2);
        let t: u8 = rng.gen_range(0..2);
        let x: f64 = rng.sample::<f64, _>(StandardNormal) + f64::from(t);
        csv.push_str(&format!("{x},{},{}\n", if s == 1 { "a" } else { "b" }, t));
    }
    std::fs::write(data.join("toy.csv"), csv).unwrap();
    let schema = "name = toy\n\
                  path = data/toy.csv\n\
                  continuous = x\n\
                  target = label\n\
                  target_positive = 1\n\
                  sensitive = group\n\
                  sensitive_positive = a\n\
                  split_fractions = 0.6, 0.2, 0.2\n";
    std::fs::write(dir.path().join("toy.schema"), schema).unwrap();
    let conf = dir.path().join("configs");
    std::fs::create_dir_all(&conf).unwrap();
    std::fs::write(conf.join("toy.cfg"), "schema = ../toy.schema\nmax_epochs = 1\nfeaturizer = 4\nclassifier_width = 4\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "chi2",
        "-c",
        conf.join("toy.cfg").to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = lines(&out.join("chi2.csv"));
    let n: f64 = rows[1..].iter().map(|r| field(r, 1)).sum();
    assert_eq!(n, 200.0);
}

fn write_sample(path: &Path, n: usize, shift: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::from("a\n");
    for _ in 0..n {
        let v: f64 = rng.sample(StandardNormal);
        text.push_str(&format!("{}\n", v + shift));
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn test_against_itself_fails_to_reject() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    write_sample(&a, 100, 0.0, 1);
    let o = run(&["test", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("decision: fail-to-reject"));
    for key in ["statistic:", "threshold:", "estimated_power:"] {
        assert!(text.contains(key), "{key}");
    }
}

#[test]
fn test_separates_shifted_normals() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    write_sample(&a, 100, 0.0, 1);
    write_sample(&b, 100, 5.0, 2);
    for kernel in ["gaussian", "linear"] {
        let o = run(&["test", a.to_str().unwrap(), b.to_str().unwrap(), "--kernel", kernel]);
        assert_eq!(o.status.code(), Some(1), "{kernel}: {}", stderr(&o));
        assert!(stdout(&o).contains("decision: reject"));
    }
    let o = run(&["test", a.to_str().unwrap(), b.to_str().unwrap(), "--sigma", "2", "--alpha", "0.01"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn test_truncates_unequal_samples() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    write_sample(&a, 120, 0.0, 1);
    write_sample(&b, 80, 5.0, 2);
    let o = run(&["test", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("first 80 rows"), "{}", stderr(&o));
}

#[test]
fn test_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    write_sample(&a, 20, 0.0, 1);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1.0\n2.0\nthree\n").unwrap();
    let o = run(&["test", a.to_str().unwrap(), bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.csv"), "{}", stderr(&o));
    let wide = dir.path().join("wide.csv");
    std::fs::write(&wide, "1,2\n3,4\n5,6\n").unwrap();
    let o = run(&["test", a.to_str().unwrap(), wide.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["test", a.to_str().unwrap(), dir.path().join("missing.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exported_embeddings_match_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path(), &[]);
    let cfg = write_config(dir.path(), QUICK);
    let model_path = out.join("model.mbfm");
    let target = dir.path().join("emb").join("val.csv");
    let o = run(&[
        "export-embeddings",
        "--model",
        model_path.to_str().unwrap(),
        "--split",
        "val",
        "--output",
        target.to_str().unwrap(),
        "-c",
        cfg.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (ids, t, s, z) = read_embeddings(&target).unwrap();
    assert_eq!(ids, (0..150).collect::<Vec<_>>());
    assert_eq!(z.cols(), 8);
    let model = load_model(&model_path).unwrap();
    let cfg = mmdbfair_cli::config::RunConfig::from_file(&cfg).unwrap();
    let splits = mmdbfair_cli::commands::load_splits(&cfg).unwrap();
    assert_eq!(z, model.represent(&splits.val.features).unwrap());
    assert_eq!(t, splits.val.t);
    assert_eq!(s, splits.val.s);
    let labels: Vec<u8> = s.iter().flatten().copied().collect();
    assert!(majority_rate(&labels) < 1.0);
}

#[test]
fn cache_dir_reuses_encoded_splits() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.csv");
    let mut text = String::from("x,s,t\n");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        text.push_str(&format!("{},{},{}\n", rng.gen_range(0.0..1.0), rng.gen_range(0..2), rng.gen_range(0..2)));
    }
    std::fs::write(&data, text).unwrap();
    std::fs::write(
        dir.path().join("toy.schema"),
        "name = toy\npath = toy.csv\ncontinuous = x\ntarget = t\ntarget_positive = 1\nsensitive = s\nsensitive_positive = 1\nsplit_fractions = 0.5, 0.25, 0.25\n",
    )
    .unwrap();
    let cache = dir.path().join("cache");
    let cfg = write_config(dir.path(), "schema = toy.schema\ncache_dir = cache\n");
    let out = dir.path().join("out");
    let args = ["chi2", "-c", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
    let first = run(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    let before = std::fs::read(out.join("chi2.csv")).unwrap();
    for split in ["train", "val", "test"] {
        assert!(cache.join(format!("toy.{split}.mbfd")).exists());
    }
    std::fs::remove_file(&data).unwrap();
    let second = run(&args);
    assert!(second.status.success(), "{}", stderr(&second));
    assert_eq!(std::fs::read(out.join("chi2.csv")).unwrap(), before);
}

fn data_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("MMDBFAIR_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    let present = ["compas-scores-two-years.csv", "adult.data", "adult.test"]
        .iter()
        .all(|f| dir.join(f).exists());
    if !present {
        eprintln!("benchmark data not found under {}, skipping", dir.display());
    }
    present.then_some(dir)
}

#[test]
fn unregularized_compas_run_beats_the_majority_class() {
    let Some(data) = data_dir() else { return };
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/compas.cfg");
    let o = run(&[
        "train",
        "-c",
        cfg.to_str().unwrap(),
        "--data-dir",
        data.to_str().unwrap(),
        "--lambda-s",
        "0",
        "--seed",
        "0",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = lines(&dir.path().join("report.csv"));
    assert!(field(&report[1], 2) > 0.66, "{}", report[1]);
}

#[test]
fn adult_test_split_is_independent() {
    let Some(data) = data_dir() else { return };
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/adult.cfg");
    let o = run(&[
        "chi2",
        "-c",
        cfg.to_str().unwrap(),
        "--data-dir",
        data.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = lines(&dir.path().join("chi2.csv"));
    assert!(rows[3].starts_with("test,"));
    assert_eq!(field(&rows[3], 3), 1.0);
    assert!(field(&rows[1], 3) < 1e-100);
}
