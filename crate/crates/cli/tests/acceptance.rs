//! Acceptance suite. Every test prints one `criterion N ...: PASS|FAIL` line.
//!
//! Criteria 6 and 7 are directional comparisons on a toy task; they report
//! their verdict without failing the build unless `DASH_ACCEPTANCE_STRICT=1`.
//! All other criteria fail the test when they fail.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use dash_cli::commands::compare::{run_compare, CompareConfig, Variant};
use dash_cli::commands::theory::{run_theory_verify, TheoryVerifyConfig};
use dash_core::augment::{passes_confidence, passes_neg_log};
use dash_core::dash::{run_warmup, threshold, Algorithm, ThresholdSchedule};
use dash_core::io::read_metrics;
use dash_core::models::{finite_diff_check, one_hot, Architecture, Model};
use dash_core::rng::stream;
use dash_core::theory::{
    compare_with_plain_sgd, derive_constants, make_pl_problem, make_q_distribution, min_m_for, plan_from_constants,
    MixtureOracle, QKind, TheoryInputs,
};
use rand::Rng;
use rand_distr::{Dirichlet, Distribution};

fn verdict(n: u32, name: &str, pass: bool, detail: &str, strict: bool) {
    // Bypasses libtest output capture so the verdict shows in every run.
    let line = format!("criterion {n} [{name}]: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
    let strict = strict || std::env::var("DASH_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    assert!(pass || !strict, "criterion {n} failed: {detail}");
}

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for arch in [Architecture::SoftmaxLinear, Architecture::Mlp { hidden: 8 }] {
        for seed in 0..100u64 {
            let mut r = stream(seed, &[0xacc, 1]);
            let (d, k) = (r.random_range(1..6), r.random_range(2..5));
            let model = Model::init(arch, d, k, &mut r).unwrap();
            let n = r.random_range(1..6);
            let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
            let ts: Vec<Vec<f64>> = (0..n).map(|_| one_hot(r.random_range(0..k), k)).collect();
            let batch: Vec<(&[f64], &[f64])> = xs.iter().zip(&ts).map(|(x, t)| (x.as_slice(), t.as_slice())).collect();
            worst = worst.max(finite_diff_check(&model, &batch, 1e-5).unwrap());
            pairs += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("max relative error {worst:.2e} over {pairs} pairs, {secs:.1} s");
    verdict(1, "gradient correctness", worst < 1e-5 && secs < 30.0, &detail, true);
}

#[test]
fn criterion_02_schedule_exactness() {
    let mut worst: f64 = 0.0;
    for gamma in [1.1, 1.27, 2.0] {
        for (c, rho_hat) in [(1.0001, 1.0), (2.0, 3.5)] {
            let s = ThresholdSchedule::theory(c, gamma, rho_hat).unwrap();
            for t in 1..=100 {
                let want = c * rho_hat / gamma.powf((t - 1) as f64);
                worst = worst.max((threshold(t, &s) - want).abs() / want);
            }
        }
    }
    let fig = ThresholdSchedule::theory(1.0001, 1.27, 1.0).unwrap();
    let first = threshold(1, &fig);
    let practice = ThresholdSchedule::practice(1.0).unwrap();
    let late = threshold(1000, &practice);
    let pass = worst < 1e-12 && first == 1.0001 && late == 0.05;
    let detail = format!("max relative deviation {worst:.1e}, rho_1 = {first}, floored value {late}");
    verdict(2, "threshold schedule exactness", pass, &detail, true);
}

#[test]
fn criterion_03_indicator_equivalence() {
    let mut r = stream(3, &[0xacc]);
    let tau = 0.95;
    let peaked = Dirichlet::new([0.05; 10]).unwrap();
    let flat = Dirichlet::new([1.0; 10]).unwrap();
    let (mut agree, mut above) = (0, 0);
    let n = 10_000;
    for i in 0..n {
        let h: [f64; 10] = if i % 2 == 0 { peaked.sample(&mut r) } else { flat.sample(&mut r) };
        let c = h.iter().copied().fold(0.0, f64::max);
        above += usize::from(passes_confidence(c, tau));
        agree += usize::from(passes_confidence(c, tau) == passes_neg_log(c, tau));
    }
    let boundary = passes_confidence(tau, tau) && passes_neg_log(tau, tau);
    let detail = format!("{agree}/{n} agree ({above} above tau), boundary inclusive in both: {boundary}");
    verdict(3, "indicator equivalence", agree == n && boundary, &detail, true);
}

fn theory_run() -> (dash_core::theory::BoundReport, f64) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TheoryVerifyConfig {
        output_dir: Some(dir.path().join("t").to_string_lossy().into_owned()),
        ..TheoryVerifyConfig::default()
    };
    let start = Instant::now();
    let s = run_theory_verify(&cfg, false).unwrap();
    (s.report, start.elapsed().as_secs_f64())
}

#[test]
fn criterion_04_envelope() {
    let (r, secs) = theory_run();
    let detail = format!(
        "envelope held in {:.0}% of {} seeds, T = {}, rho_hat = {:.4e}, final F seed 0 = {:.4e}, {secs:.1} s",
        100.0 * r.pass_fraction_envelope,
        r.runs.len(),
        r.t,
        r.constants.rho_hat,
        r.runs[0].f.last().unwrap()
    );
    let pass = r.pass_fraction_envelope >= 0.9 && r.runs.len() == 20 && r.t == 15 && secs < 300.0;
    verdict(4, "convergence envelope", pass, &detail, true);
}

#[test]
fn criterion_05_set_size_bounds() {
    let (r, _) = theory_run();
    let max_b = r.runs.iter().flat_map(|s| s.b_rho.iter().copied()).max().unwrap();
    let detail = format!(
        "A bound {:.0}%, B bound {:.0}%, A nondecreasing {:.0}%, max B {max_b} vs 2 b0 m = {:.1} ({:.0}% below)",
        100.0 * r.pass_fraction_a,
        100.0 * r.pass_fraction_b,
        100.0 * r.a_nondecreasing_fraction,
        2.0 * r.b_bound,
        100.0 * r.b_below_twice_bound_fraction
    );
    let pass = r.pass_fraction_a >= 0.9
        && r.pass_fraction_b >= 0.9
        && r.a_nondecreasing_fraction >= 0.9
        && r.b_below_twice_bound_fraction == 1.0;
    verdict(5, "set-size bounds", pass, &detail, true);
}

const MOON_SEEDS: [u64; 10] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];

fn variant(algorithm: Algorithm) -> Variant {
    Variant {
        label: None,
        algorithm,
        overrides: serde_json::json!({}),
    }
}

/// Per-epoch (correct, wrong) selected counts of one cell.
fn epoch_counts(dir: &Path) -> Vec<(usize, usize)> {
    let rows = read_metrics(fs::File::open(dir.join("metrics.csv")).unwrap()).unwrap();
    let epochs = rows.iter().map(|r| r.epoch).max().unwrap();
    let mut out = vec![(0, 0); epochs];
    for r in rows {
        out[r.epoch - 1].0 += r.n_sel_correct;
        out[r.epoch - 1].1 += r.n_sel_wrong;
    }
    out
}

struct MoonResults {
    table: dash_cli::commands::compare::ComparisonTable,
    dir: tempfile::TempDir,
    secs: f64,
}

fn moon_comparison() -> &'static MoonResults {
    static CELL: std::sync::OnceLock<MoonResults> = std::sync::OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CompareConfig {
            variants: vec![
                variant(Algorithm::Dash),
                variant(Algorithm::FixMatch { tau: 0.95 }),
                variant(Algorithm::DashPl),
                variant(Algorithm::PseudoLabeling { tau: 0.95 }),
            ],
            seeds: MOON_SEEDS.to_vec(),
            output_dir: Some(dir.path().join("cmp").to_string_lossy().into_owned()),
            ..CompareConfig::default()
        };
        let start = Instant::now();
        let table = run_compare(&cfg, false).unwrap();
        MoonResults {
            table,
            dir,
            secs: start.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_06_selection_counts() {
    let res = moon_comparison();
    let cells = res.dir.path().join("cmp/cells");
    let activation = dash_core::dash::PRACTICE_ACTIVATION_EPOCHS;
    let mut drops = 0;
    let (mut dash_correct, mut fix_correct) = (0.0, 0.0);
    for seed in MOON_SEEDS {
        let d = epoch_counts(&cells.join(format!("dash-lpc4-seed{seed}")));
        let f = epoch_counts(&cells.join(format!("fixmatch-lpc4-seed{seed}")));
        let peak = d[..activation].iter().map(|c| c.1).max().unwrap();
        let window = &d[activation..(activation + 30).min(d.len())];
        drops += usize::from(window.iter().any(|c| c.1 < peak));
        let tail = |v: &[(usize, usize)]| v[v.len() - 20..].iter().map(|c| c.0 as f64).sum::<f64>() / 20.0;
        dash_correct += tail(&d) / MOON_SEEDS.len() as f64;
        fix_correct += tail(&f) / MOON_SEEDS.len() as f64;
    }
    let pass = drops >= 8 && dash_correct > fix_correct;
    let detail = format!(
        "wrong count fell below pre-activation peak in {drops}/10 seeds; mean correct per epoch over last 20: dash {dash_correct:.1}, fixed tau {fix_correct:.1}"
    );
    verdict(6, "selection counts", pass, &detail, false);
}

#[test]
fn criterion_07_test_error_ordering() {
    let res = moon_comparison();
    let row = |name: &str| res.table.rows.iter().find(|r| r.algorithm == name).unwrap();
    let (dash, fix, dpl, pl) = (row("dash"), row("fixmatch"), row("dash-pl"), row("pseudo-labeling"));
    let tie = 0.005;
    let pass = dash.mean_test_error <= fix.mean_test_error + tie
        && dpl.mean_test_error <= pl.mean_test_error + tie
        && res.secs < 600.0;
    let pct = |r: &dash_cli::commands::compare::ComparisonRow| {
        format!("{:.2}±{:.2}%", 100.0 * r.mean_test_error, 100.0 * r.std_test_error)
    };
    let half_std = |a: &dash_cli::commands::compare::ComparisonRow, b: &dash_cli::commands::compare::ComparisonRow| {
        a.mean_test_error <= b.mean_test_error + 0.5 * a.std_test_error.max(b.std_test_error)
    };
    let detail = format!(
        "dash {} vs fixed {}; dash-pl {} vs pl {}; within half a std: {}; {:.0} s",
        pct(dash),
        pct(fix),
        pct(dpl),
        pct(pl),
        half_std(dash, fix) && half_std(dpl, pl),
        res.secs
    );
    verdict(7, "test error ordering", pass, &detail, false);
}

#[test]
fn criterion_08_degenerate_mixture() {
    let p = make_pl_problem(10, 0.5, 2.0, 1.0, 0).unwrap();
    let q_dist = make_q_distribution(&p, QKind::ShiftedMinimizer { offset: 50.0 }, 0).unwrap();
    let (b, theta) = q_dist.analytic_condition(&p).unwrap();
    let inputs = TheoryInputs {
        g: p.g_bound(),
        l: 2.0,
        mu: 0.5,
        a: 0.5,
        b,
        theta,
        delta: 0.01,
        q: 1.0,
        c: 2.0,
        eta0: 0.5,
        eta: 0.5,
        f_w0: 1.0,
        m_override: Some(min_m_for(0.01, 1.0, 2.0, 0.5, 0.5)),
    };
    let k = derive_constants(&inputs).unwrap();
    let warm = (k.t0_steps(), k.m0_batch(), k.inputs.eta0);
    let mut ratios = Vec::new();
    for seed in 0..5u64 {
        let w0 = p.boundary_point(&mut stream(seed, &[dash_core::rng::tag::INIT]));
        let mut probe = MixtureOracle::new(&p, &q_dist, 1.0, seed).unwrap();
        let w1 = run_warmup(&mut probe, &w0, warm.2, warm.0, warm.1).unwrap();
        let rho_hat = probe.practical_rho_hat(&w1, 1000);
        let mut plan = plan_from_constants(&k, 15).unwrap();
        plan.schedule = ThresholdSchedule::theory(k.inputs.c, k.gamma_theory, rho_hat).unwrap();
        let (f_dash, f_plain) = compare_with_plain_sgd(&p, &q_dist, 1.0, warm, &plan, seed).unwrap();
        ratios.push(f_dash.last().unwrap() / f_plain.last().unwrap());
    }
    let pass = ratios.iter().all(|r| *r <= 10.0 && *r >= 0.1);
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
    verdict(8, "degenerate mixture", pass, &format!("final F ratio dash/plain per seed: {}", shown.join(", ")), true);
}

fn run_dash(args: &[&str], cwd: &Path) {
    let out = Command::new(env!("CARGO_BIN_EXE_dash"))
        .args(args)
        .current_dir(cwd)
        .env_remove("DASH_OUTPUT_ROOT")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn criterion_09_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let mut same = true;
    let mut compared = 0;
    for (cmd, algorithm) in [
        ("train", r#"{"kind":"dash"}"#),
        ("train", r#"{"kind":"fix-match","tau":0.95}"#),
        ("train", r#"{"kind":"dash-pl"}"#),
        ("theory-verify", ""),
    ] {
        let dir = format!("run-{compared}");
        let set = format!("train.algorithm={algorithm}");
        let mut args = vec![cmd, "-o", &dir, "--overwrite"];
        if cmd == "train" {
            args.extend(["--set", &set]);
        }
        run_dash(&args, tmp.path());
        let first = snapshot(&tmp.path().join(&dir));
        run_dash(&args, tmp.path());
        let second = snapshot(&tmp.path().join(&dir));
        let key = if cmd == "train" { "metrics.csv" } else { "report.json" };
        assert!(first.iter().any(|(n, _)| n == key));
        same &= first == second;
        compared += 1;
    }
    verdict(9, "determinism", same, &format!("{compared} runs repeated, all output files compared byte for byte"), true);
}

#[test]
fn criterion_10_constants_oracle() {
    let inputs = TheoryInputs {
        g: 1.0,
        l: 1.0,
        mu: 1.0,
        a: 0.5,
        b: 0.0,
        theta: 1.0,
        delta: 0.1,
        q: 0.5,
        c: 2.0,
        eta0: 0.5,
        eta: 0.1,
        f_w0: 2.0,
        m_override: Some(100),
    };
    let k = derive_constants(&inputs).unwrap();
    let pass = k.m_formula == 5 && k.m0 == 80.0 && (k.gamma_theory - 20.0 / 19.0).abs() < 1e-15;
    let detail = format!("m = {}, m0 = {}, gamma = {:.17}", k.m_formula, k.m0, k.gamma_theory);
    verdict(10, "constants oracle", pass, &detail, true);
}
