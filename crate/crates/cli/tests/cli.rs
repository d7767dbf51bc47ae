use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dash_core::dash::ThresholdSchedule;
use dash_core::io::read_metrics;
use serde_json::Value;

fn dash(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dash"))
        .args(args)
        .current_dir(cwd)
        .env_remove("DASH_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

const SMALL: [&str; 6] = ["--set", "data.n_unlabeled=200", "--set", "data.n_test=200", "--set", "train.T=120"];

#[test]
fn gen_data_counts_and_rerun_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&dash(&["gen-data", "-o", "d"], tmp.path()));
    let d = tmp.path().join("d");
    assert_eq!(listing(&d), ["labeled.csv", "resolved-config.json", "test.csv", "unlabeled.csv"]);
    let labeled = fs::read_to_string(d.join("labeled.csv")).unwrap();
    assert_eq!(labeled.lines().count(), 1 + 8);
    let unlabeled = fs::read_to_string(d.join("unlabeled.csv")).unwrap();
    assert_eq!(unlabeled.lines().filter(|l| l.ends_with(",unlabeled-q")).count(), 200);
    let before: Vec<Vec<u8>> = listing(&d).iter().map(|f| fs::read(d.join(f)).unwrap()).collect();

    let again = dash(&["gen-data", "-o", "d"], tmp.path());
    assert_eq!(again.status.code(), Some(2));
    ok(&dash(&["gen-data", "-o", "d", "--overwrite"], tmp.path()));
    let after: Vec<Vec<u8>> = listing(&d).iter().map(|f| fs::read(d.join(f)).unwrap()).collect();
    assert_eq!(before, after);
}

#[test]
fn train_reads_generated_data() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&dash(&["gen-data", "-o", "d", "--set", "data.n_unlabeled=200"], tmp.path()));
    ok(&dash(&["train", "-o", "r", "--set", "data.from_dir=d", "--set", "train.T=20"], tmp.path()));
    let rows = read_metrics(fs::File::open(tmp.path().join("r/metrics.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r.n_sampled <= 64));
}

#[test]
fn fixmatch_threshold_is_constant() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "-o", "fm", "--set", r#"train.algorithm={"kind":"fix-match","tau":0.95}"#];
    args.extend(SMALL);
    ok(&dash(&args, tmp.path()));
    let rows = read_metrics(fs::File::open(tmp.path().join("fm/metrics.csv")).unwrap()).unwrap();
    let level = -(0.95f64).ln();
    assert!(rows.iter().all(|r| (r.rho_t - level).abs() < 1e-12));
}

#[test]
fn dash_threshold_replays_schedule() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "-o", "dash"];
    args.extend(SMALL);
    ok(&dash(&args, tmp.path()));
    let rows = read_metrics(fs::File::open(tmp.path().join("dash/metrics.csv")).unwrap()).unwrap();
    let first = rows.iter().find(|r| r.rho_t.is_finite()).expect("threshold activates");
    let sched = ThresholdSchedule::practice(first.rho_t / 1.0001).unwrap();
    for r in &rows {
        let want = sched.threshold(r.epoch);
        if want.is_infinite() {
            assert!(r.rho_t.is_infinite(), "epoch {}", r.epoch);
        } else {
            assert!((r.rho_t - want).abs() <= 1e-12 * want, "epoch {}: {} vs {want}", r.epoch, r.rho_t);
        }
    }
    let mut levels: Vec<f64> = rows.iter().map(|r| r.rho_t).filter(|r| r.is_finite()).collect();
    levels.dedup();
    assert!(levels.len() >= 3, "{levels:?}");
}

#[test]
fn dash_pl_and_pseudo_labeling_run() {
    let tmp = tempfile::tempdir().unwrap();
    for (dir, alg) in [("dpl", r#"{"kind":"dash-pl"}"#), ("pl", r#"{"kind":"pseudo-labeling","tau":0.95}"#)] {
        let set = format!("train.algorithm={alg}");
        ok(&dash(&["train", "-o", dir, "--set", &set, "--set", "train.T=20"], tmp.path()));
    }
}

#[test]
fn train_rerun_is_byte_identical_and_dir_is_minimal() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["train", "-o", "r", "--set", "train.T=40", "--overwrite"];
    ok(&dash(&args, tmp.path()));
    let d = tmp.path().join("r");
    assert_eq!(listing(&d), ["metrics.csv", "model.ckpt", "resolved-config.json"]);
    let first: Vec<Vec<u8>> = listing(&d).iter().map(|f| fs::read(d.join(f)).unwrap()).collect();
    ok(&dash(&args, tmp.path()));
    let second: Vec<Vec<u8>> = listing(&d).iter().map(|f| fs::read(d.join(f)).unwrap()).collect();
    assert_eq!(first, second);
}

#[test]
fn resolved_config_replays() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&dash(&["train", "-o", "a", "--set", "train.T=30", "--set", "train.seed=7"], tmp.path()));
    let resolved = tmp.path().join("a/resolved-config.json");
    let doc: Value = serde_json::from_str(&fs::read_to_string(&resolved).unwrap()).unwrap();
    assert_eq!(doc["train"]["seed"], 7);
    assert_eq!(doc["train"]["lambda_u"], 1.0);
    ok(&dash(&["train", "-c", resolved.to_str().unwrap(), "-o", "b"], tmp.path()));
    assert_eq!(
        fs::read(tmp.path().join("a/metrics.csv")).unwrap(),
        fs::read(tmp.path().join("b/metrics.csv")).unwrap()
    );
}

#[test]
fn plot_flag_adds_series_dir() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&dash(&["train", "-o", "r", "--set", "train.T=20", "--set", "plot=true"], tmp.path()));
    let d = tmp.path().join("r");
    assert_eq!(listing(&d), ["metrics.csv", "model.ckpt", "plots", "resolved-config.json"]);
    assert_eq!(listing(&d.join("plots")), ["correct.dat", "rho.dat", "test-error.dat", "wrong.dat"]);
}

#[test]
fn unknown_key_exits_2_with_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dash(&["train", "-o", "r", "--set", "train.schedule.gama=1.1"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.schedule") && err.contains("gama"), "{err}");
    assert!(!tmp.path().join("r").exists());
}

#[test]
fn divergence_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dash(
        &[
            "train",
            "-o",
            "r",
            "--set",
            "train.eta=1e6",
            "--set",
            "train.lr_schedule=constant",
            "--set",
            "train.T=200",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!tmp.path().join("r").exists());
}

#[test]
fn infeasible_constants_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dash(&["theory-verify", "-o", "t", "--set", "batch.kind=formula"], tmp.path());
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("beta = ") && err.contains("alpha = "), "{err}");
}

#[test]
fn theory_report_schema_and_degenerate_mixture() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dash(&["theory-verify", "-o", "t", "--set", "q=1", "--set", "tsybakov=null"], tmp.path());
    ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("pass fraction envelope: 1\n"), "{stdout}");
    let d = tmp.path().join("t");
    assert_eq!(listing(&d), ["report.json", "resolved-config.json", "series"]);
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    let run = report["runs"][0].as_object().unwrap();
    let mut keys: Vec<&str> = run.keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        ["A_rho", "B_rho", "F", "envelope", "pass_A", "pass_B", "pass_envelope", "seed", "steps"]
    );
    assert_eq!(report["runs"].as_array().unwrap().len(), 20);
    assert_eq!(report["pass_fraction_envelope"], 1.0);
}

#[test]
fn compare_identical_variants_give_identical_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{
        "data": {"n_unlabeled": 120, "n_test": 100},
        "base": {"T": 15, "T0": 10},
        "variants": [
            {"label": "b-first", "algorithm": {"kind": "dash"}},
            {"label": "a-second", "algorithm": {"kind": "dash"}},
            {"algorithm": {"kind": "fix-match", "tau": 0.95}}
        ],
        "seeds": [3, 1]
    }"#;
    fs::write(tmp.path().join("cmp.json"), cfg).unwrap();
    ok(&dash(&["compare", "-c", "cmp.json", "-o", "c"], tmp.path()));
    let d = tmp.path().join("c");
    assert_eq!(listing(&d), ["cells", "comparison.csv", "comparison.txt", "resolved-config.json"]);
    assert_eq!(listing(&d.join("cells")).len(), 6);
    let csv = fs::read_to_string(d.join("comparison.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("b-first,") && lines[2].starts_with("a-second,") && lines[3].starts_with("fixmatch,"));
    let tail = |l: &str| l.split_once(',').unwrap().1.to_string();
    assert_eq!(tail(lines[1]), tail(lines[2]));
    assert!(lines[1].split(',').nth(3) == Some("2"));
}

#[test]
fn compare_needs_two_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dash(&["compare", "-o", "c", "--set", "seeds=[1]"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn plot_data_series_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir(tmp.path().join("empty")).unwrap();
    let out = dash(&["plot-data", "empty", "-o", "p"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("p").exists());

    let mut args = vec!["train", "-o", "run"];
    args.extend(SMALL);
    ok(&dash(&args, tmp.path()));
    ok(&dash(&["plot-data", "run", "--threshold-demo", "-o", "p"], tmp.path()));
    let p = tmp.path().join("p");
    let files = listing(&p);
    for want in ["run.correct.dat", "run.wrong.dat", "run.rho.dat", "run.test-error.dat", "threshold-fixed-tau0.95.dat"] {
        assert!(files.iter().any(|f| f == want), "{want} missing from {files:?}");
    }
    for f in files.iter().filter(|f| f.ends_with(".dat")) {
        let xs: Vec<f64> = fs::read_to_string(p.join(f))
            .unwrap()
            .lines()
            .map(|l| {
                let mut it = l.split_whitespace();
                let x = it.next().unwrap().parse().unwrap();
                let _: f64 = it.next().unwrap().parse().unwrap();
                assert!(it.next().is_none());
                x
            })
            .collect();
        assert!(!xs.is_empty(), "{f}");
        assert!(xs.windows(2).all(|w| w[0] < w[1]), "{f}");
    }

    fs::create_dir(tmp.path().join("bad")).unwrap();
    fs::write(tmp.path().join("bad/metrics.csv"), "step,epoch\n1,1\n").unwrap();
    let out = dash(&["plot-data", "bad", "-o", "q"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rho_t"));
    assert!(!tmp.path().join("q").exists());
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dash"))
        .args(["gen-data"])
        .current_dir(tmp.path())
        .env("DASH_OUTPUT_ROOT", "root")
        .output()
        .unwrap();
    ok(&out);
    assert!(tmp.path().join("root/gen-data/labeled.csv").exists());
}
