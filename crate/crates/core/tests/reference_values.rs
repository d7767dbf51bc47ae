//! Worked examples checked against independently computed values.

use dash_core::augment::{self, sharpen, AugmentPolicy, Substreams};
use dash_core::dash::{
    estimate_rho_hat_practical, evaluate_unlabeled, run_selection_stage, run_warmup, sample_complexity, select,
    threshold, truncated_gradient, truncated_gradient_with_labeled, GradientForm, ThresholdSchedule, TheoryPlan,
    UnlabeledLoss, DEFAULT_N_CAP,
};
use dash_core::data::{make_two_moons, split_ssl, Example, MixtureStream, OodKind, Provenance, SplitSpec};
use dash_core::models::{cross_entropy, one_hot, Architecture, Model};
use dash_core::rng::stream;
use dash_core::theory::{
    derive_constants, estimate_tsybakov, m_formula, make_pl_problem, make_q_distribution, rho_hat_theoretical,
    MixtureOracle, QKind, TheoryInputs,
};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// Plain-loop forward pass over the documented parameter layout:
/// `W1 (h x d), b1, W2 (k x h), b2`, tanh hidden units.
fn naive_mlp(p: &[f64], d: usize, h: usize, k: usize, x: &[f64]) -> Vec<f64> {
    let w1 = &p[..h * d];
    let b1 = &p[h * d..h * d + h];
    let w2 = &p[h * d + h..h * d + h + k * h];
    let b2 = &p[h * d + h + k * h..];
    let mut hidden = vec![0.0; h];
    for j in 0..h {
        let mut s = b1[j];
        for i in 0..d {
            s += w1[j * d + i] * x[i];
        }
        hidden[j] = s.tanh();
    }
    let mut z = vec![0.0; k];
    for c in 0..k {
        let mut s = b2[c];
        for j in 0..h {
            s += w2[c * h + j] * hidden[j];
        }
        z[c] = s;
    }
    z
}

fn naive_ce(target: &[f64], logits: &[f64]) -> f64 {
    let denom: f64 = logits.iter().map(|z| z.exp()).sum();
    -target
        .iter()
        .zip(logits)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, z)| t * (z.exp() / denom).ln())
        .sum::<f64>()
}

#[test]
fn mlp_logits_match_loop_oracle() {
    let (d, h, k) = (4, 6, 3);
    for seed in 0..20 {
        let m = Model::init(Architecture::Mlp { hidden: h }, d, k, &mut stream(seed, &[1])).unwrap();
        let x: Vec<f64> = (0..d).map(|i| (seed as f64 + 1.0) * 0.1 * i as f64 - 0.3).collect();
        let want = naive_mlp(m.params().values(), d, h, k, &x);
        let got = m.forward(&x).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }
}

#[test]
fn soft_cross_entropy_reference() {
    let v = cross_entropy(&[0.3, 0.7], &[0.1, -0.2]).unwrap();
    assert!((v - 0.764_355_244_468_527_1).abs() < 1e-12, "{v}");
}

#[test]
fn sharpen_reference() {
    let s = sharpen(&[0.7, 0.3], 0.5).unwrap();
    assert!((s[0] - 0.844_827_586_206_896_6).abs() < 1e-12);
    assert!((s[1] - 0.155_172_413_793_103_45).abs() < 1e-12);
}

#[test]
fn constants_worked_examples() {
    assert_eq!(m_formula(0.1, 0.5, 2.0), 5);
    let r = rho_hat_theoretical(1.0, 0.1, 1.0, 5, 0.05, 2.0, 0.5).unwrap();
    assert!(close(r, 320.0, 1e-12));
    let r2 = rho_hat_theoretical(2.0, 0.1, 1.0, 5, 0.05, 2.0, 0.0).unwrap();
    assert!(close(r2, 4.0 * 320.0, 1e-12));

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
        m_override: Some(200),
    };
    let k = derive_constants(&inputs).unwrap();
    assert_eq!(k.m_formula, 5);
    assert!(close(k.m0, 80.0, 1e-12), "{}", k.m0);
    assert!(close(k.gamma_theory, 20.0 / 19.0, 1e-12));
    assert!(close(k.t0, 3.0, 1e-12), "{}", k.t0);
    assert_eq!(k.t0_steps(), 3);
}

#[test]
fn threshold_examples() {
    let fig = ThresholdSchedule::theory(1.0001, 1.27, 1.0).unwrap();
    assert_eq!(threshold(1, &fig), 1.0001);
    let s = ThresholdSchedule::theory(1.0 + 1e-12, 2.0, 512.0).unwrap();
    assert!(close(threshold(10, &s), 1.0, 1e-11));
    let floored = ThresholdSchedule::new(1.5, 2.0, 0.04, 0.05, 0, dash_core::dash::DecayCadence::PerIteration).unwrap();
    assert_eq!(threshold(1, &floored), 0.06);
    assert_eq!(threshold(2, &floored), 0.05);
    assert_eq!(select(&[0.01, 0.06], 0.0513), vec![true, false]);
    assert_eq!(select(&[0.2, 0.2], 0.2), vec![true, true]);
}

fn moons(seed: u64) -> dash_core::data::DatasetBundle {
    let full = make_two_moons(108, 0.1, seed).unwrap();
    split_ssl(
        &full,
        2,
        &SplitSpec {
            labels_per_class: 4,
            q: 0.8,
            ood_kind: OodKind::LabelFlip,
        },
        seed,
    )
    .unwrap()
}

/// Recomputes one unsupervised loss and gradient from the augmentation
/// streams, with no shared code beyond the augmentations themselves.
fn brute_eval(m: &Model, x: &[f64], policy: &AugmentPolicy, s: &Substreams, i: u64) -> (f64, Vec<f64>) {
    let weak = augment::weak_augment(x, policy, &mut s.weak(i));
    let h = m.predict_proba(&weak).unwrap();
    let mut best = 0;
    for c in 1..h.len() {
        if h[c] > h[best] {
            best = c;
        }
    }
    let strong = augment::strong_augment(x, policy, &mut s.strong(i));
    let target = one_hot(best, m.num_classes());
    let (loss, grad) = m.loss_and_grad(&[(strong.as_slice(), target.as_slice())]).unwrap();
    (loss, grad)
}

#[test]
fn truncated_gradient_matches_brute_force() {
    let bundle = moons(5);
    let m = Model::init(Architecture::Mlp { hidden: 8 }, 2, 2, &mut stream(5, &[1])).unwrap();
    let batch: Vec<&Example> = bundle.unlabeled.iter().take(8).collect();
    let policy = AugmentPolicy::default();
    let streams = Substreams { seed: 11, step: 3 };
    let brute: Vec<(f64, Vec<f64>)> = batch
        .iter()
        .enumerate()
        .map(|(i, e)| brute_eval(&m, &e.x, &policy, &streams, i as u64))
        .collect();
    let mut losses: Vec<f64> = brute.iter().map(|b| b.0).collect();
    losses.sort_by(f64::total_cmp);
    let rho = losses[2];

    let mut want = vec![0.0; m.num_params()];
    let mut n = 0;
    for (l, g) in &brute {
        if *l <= rho {
            n += 1;
            want.iter_mut().zip(g).for_each(|(w, v)| *w += v);
        }
    }
    assert_eq!(n, 3);
    want.iter_mut().for_each(|w| *w /= 3.0);

    let (got, stats) = truncated_gradient(&m, &batch, rho, &UnlabeledLoss::fixmatch(policy), &streams).unwrap();
    assert_eq!(stats.n_selected, 3);
    assert_eq!(stats.n_sampled, 8);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-12);
    }

    let (all, _) = truncated_gradient(&m, &batch, f64::INFINITY, &UnlabeledLoss::fixmatch(policy), &streams).unwrap();
    let mut mean = vec![0.0; m.num_params()];
    for (_, g) in &brute {
        mean.iter_mut().zip(g).for_each(|(w, v)| *w += v / 8.0);
    }
    for (g, w) in all.iter().zip(&mean) {
        assert!((g - w).abs() < 1e-12);
    }
}

#[test]
fn labeled_form_matches_brute_force() {
    let bundle = moons(6);
    let m = Model::init(Architecture::Mlp { hidden: 8 }, 2, 2, &mut stream(6, &[1])).unwrap();
    let batch: Vec<&Example> = bundle.unlabeled.iter().take(10).collect();
    let labeled: Vec<&Example> = bundle.labeled.iter().collect();
    let policy = AugmentPolicy::default();
    let streams = Substreams { seed: 12, step: 1 };
    let brute: Vec<(f64, Vec<f64>)> = batch
        .iter()
        .enumerate()
        .map(|(i, e)| brute_eval(&m, &e.x, &policy, &streams, i as u64))
        .collect();
    let mut losses: Vec<f64> = brute.iter().map(|b| b.0).collect();
    losses.sort_by(f64::total_cmp);
    let rho = losses[4];

    let mut num = vec![0.0; m.num_params()];
    let mut n_sel = 0;
    for (l, g) in &brute {
        if *l <= rho {
            n_sel += 1;
            num.iter_mut().zip(g).for_each(|(w, v)| *w += v);
        }
    }
    for (i, e) in labeled.iter().enumerate() {
        let x = augment::weak_augment(&e.x, &policy, &mut streams.labeled(i as u64));
        let t = one_hot(e.true_label.unwrap(), 2);
        let (_, g) = m.loss_and_grad(&[(x.as_slice(), t.as_slice())]).unwrap();
        num.iter_mut().zip(&g).for_each(|(w, v)| *w += v);
    }
    let denom = (labeled.len() + n_sel) as f64;
    let (got, stats) =
        truncated_gradient_with_labeled(&m, &batch, &labeled, rho, &UnlabeledLoss::fixmatch(policy), &streams)
            .unwrap();
    assert_eq!(stats.n_selected, n_sel);
    for (g, w) in got.iter().zip(&num) {
        assert!((g - w / denom).abs() < 1e-12);
    }
}

#[test]
fn practical_rho_hat_is_plain_mean() {
    for seed in 0..5 {
        let bundle = moons(seed);
        let m = Model::init(Architecture::Mlp { hidden: 5 }, 2, 2, &mut stream(seed, &[1])).unwrap();
        let want = bundle
            .labeled
            .iter()
            .map(|e| {
                let z = naive_mlp(m.params().values(), 2, 5, 2, &e.x);
                naive_ce(&one_hot(e.true_label.unwrap(), 2), &z)
            })
            .sum::<f64>()
            / bundle.labeled.len() as f64;
        let got = estimate_rho_hat_practical(&m, &bundle.labeled).unwrap();
        assert!((got - want).abs() < 1e-12);
    }
    let single = Example::new(vec![0.5, 0.5], Some(1), Provenance::Labeled).unwrap();
    let m = Model::zeros(Architecture::SoftmaxLinear, 2, 2).unwrap();
    let v = estimate_rho_hat_practical(&m, std::slice::from_ref(&single)).unwrap();
    assert!((v - 2f64.ln()).abs() < 1e-15);
}

#[test]
fn mixture_fraction_at_half() {
    let full = make_two_moons(2008, 0.1, 1).unwrap();
    let bundle = split_ssl(
        &full,
        2,
        &SplitSpec {
            labels_per_class: 4,
            q: 0.5,
            ood_kind: OodKind::None,
        },
        1,
    )
    .unwrap();
    let mut s = MixtureStream::new(&bundle, 9).unwrap();
    let n = 10_000;
    let p = (0..n)
        .filter(|_| bundle.unlabeled[s.next_index()].provenance() == Provenance::UnlabeledP)
        .count();
    let frac = p as f64 / n as f64;
    assert!((0.48..=0.52).contains(&frac), "{frac}");
}

#[test]
fn far_shift_rarely_undercuts_near_minimizer() {
    let p = make_pl_problem(10, 0.5, 2.0, 1.0, 3).unwrap();
    let q = make_q_distribution(&p, QKind::ShiftedMinimizer { offset: 4.0 }, 3).unwrap();
    let mut w = p.w_star.clone();
    w[0] += 0.1;
    let f = p.objective(&w);
    let est = estimate_tsybakov(&q, &p, &w, f, 10_000, &mut stream(3, &[2])).unwrap();
    assert!(est.probability < 0.05, "{est:?}");
}

#[test]
fn pl_inequality_on_random_points() {
    let p = make_pl_problem(10, 0.5, 2.0, 1.0, 4).unwrap();
    let mut r = stream(4, &[5]);
    for _ in 0..1000 {
        let mut w = p.boundary_point(&mut r);
        let s: f64 = rand::Rng::random_range(&mut r, 0.0..1.0);
        w.iter_mut().zip(&p.w_star).for_each(|(a, b)| *a = b + s * (*a - b));
        let g = p.gradient(&w);
        let g2: f64 = g.iter().map(|v| v * v).sum();
        assert!(2.0 * p.mu * p.objective(&w) <= g2 * (1.0 + 1e-12));
    }
}

#[test]
fn sample_bookkeeping_is_exact() {
    let p = make_pl_problem(5, 0.5, 2.0, 1.0, 2).unwrap();
    let q = make_q_distribution(&p, QKind::ShiftedMinimizer { offset: 10.0 }, 2).unwrap();
    let mut oracle = MixtureOracle::new(&p, &q, 0.8, 2).unwrap();
    let w0 = p.boundary_point(&mut stream(2, &[1]));
    let (t0, m0) = (4, 30);
    let w1 = run_warmup(&mut oracle, &w0, 0.5, t0, m0).unwrap();
    let plan = TheoryPlan {
        m: 7,
        gamma: 1.3,
        eta: 0.5,
        steps: 6,
        schedule: ThresholdSchedule::theory(2.0, 1.3, 50.0).unwrap(),
        gradient_form: GradientForm::UnlabeledOnly,
        n_cap: DEFAULT_N_CAP,
    };
    let (_, log) = run_selection_stage(&mut oracle, &w1, &plan).unwrap();
    let drawn: usize = log.iter().map(|r| r.n_sampled).sum();
    assert_eq!(oracle.draws as usize, t0 * m0 + drawn);
    let (exact, bound) = sample_complexity(t0, m0, 7, 1.3, 6);
    assert_eq!(exact, oracle.draws as f64);
    assert!(exact <= bound);
}

#[test]
fn constants_are_monotone_on_a_grid() {
    let base = TheoryInputs {
        g: 2.0,
        l: 2.0,
        mu: 0.5,
        a: 0.5,
        b: 1e-3,
        theta: 1.0,
        delta: 0.05,
        q: 0.9,
        c: 2.0,
        eta0: 0.5,
        eta: 0.5,
        f_w0: 1.0,
        m_override: Some(10_000),
    };
    let deltas = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5];
    for w in deltas.windows(2) {
        assert!(m_formula(w[1], 0.9, 2.0) <= m_formula(w[0], 0.9, 2.0));
    }
    let m0 = |a: f64| derive_constants(&TheoryInputs { a, ..base }).unwrap().m0;
    for w in [0.1, 0.2, 0.5, 1.0, 2.0].windows(2) {
        assert!(m0(w[1]) < m0(w[0]));
    }
    let gamma = |eta: f64| derive_constants(&TheoryInputs { eta, ..base }).unwrap().gamma_theory;
    for w in [0.1, 0.3, 0.5, 1.0, 2.0].windows(2) {
        assert!(gamma(w[1]) > gamma(w[0]));
    }
}

#[test]
fn evaluation_order_does_not_matter() {
    let bundle = moons(8);
    let m = Model::init(Architecture::Mlp { hidden: 4 }, 2, 2, &mut stream(8, &[1])).unwrap();
    let spec = UnlabeledLoss::fixmatch(AugmentPolicy::default());
    let batch: Vec<&Example> = bundle.unlabeled.iter().take(6).collect();
    let s = Substreams { seed: 1, step: 1 };
    let a = evaluate_unlabeled(&m, &batch, &spec, &s).unwrap();
    let b = evaluate_unlabeled(&m, &batch, &spec, &s).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.loss.to_bits() == y.loss.to_bits()));
}
