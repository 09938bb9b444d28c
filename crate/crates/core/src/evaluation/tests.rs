use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::data::SplitTag;
use crate::kernels::KernelSpec;

fn noise(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Matrix::zeros(n, d);
    for v in m.data_mut() {
        *v = rng.sample(StandardNormal);
    }
    m
}

fn coin(n: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0..2)).collect()
}

fn quick() -> AuditConfig {
    AuditConfig {
        classifier_epochs: 50,
        kernel_epochs: 10,
        ..AuditConfig::default()
    }
}

#[test]
fn dp_examples() {
    let s = [0, 0, 1, 1, 0, 1];
    assert_eq!(demographic_parity(&[1; 6], &s).unwrap(), 1.0);
    assert_eq!(demographic_parity(&s, &s).unwrap(), 0.0);
    let mut pred = Vec::new();
    let mut groups = Vec::new();
    for (g, ones) in [(0u8, 30), (1u8, 10)] {
        for i in 0..40 {
            pred.push((i < ones) as u8);
            groups.push(g);
        }
    }
    assert!((demographic_parity(&pred, &groups).unwrap() - 0.5).abs() < 1e-15);
    assert!(demographic_parity(&[1, 0], &[0, 0]).is_err());
}

#[test]
fn eo_examples() {
    let t = [0, 0, 0, 0, 1, 1, 1, 1];
    let s = [0, 1, 0, 1, 0, 1, 0, 1];
    assert_eq!(equalized_odds(&t, &t, &s).unwrap(), (1.0, [1.0, 1.0]));
    // Perfect on t = 0, T̂ = s on t = 1.
    let pred = [0, 0, 0, 0, 0, 1, 0, 1];
    assert_eq!(equalized_odds(&pred, &t, &s).unwrap(), (0.5, [1.0, 0.0]));
    assert!(equalized_odds(&pred, &[0, 0, 0, 0, 0, 0, 0, 0], &s).is_err());
}

#[test]
fn eo_enumerated_cells() {
    // Cells (t, s): counts of correct predictions out of totals.
    // (0,0) 3/4, (0,1) 1/2, (1,0) 2/5, (1,1) 3/3.
    let mut pred = Vec::new();
    let mut t = Vec::new();
    let mut s = Vec::new();
    for (ti, si, correct, total) in [(0u8, 0u8, 3, 4), (0, 1, 1, 2), (1, 0, 2, 5), (1, 1, 3, 3)] {
        for i in 0..total {
            t.push(ti);
            s.push(si);
            pred.push(if i < correct { ti } else { 1 - ti });
        }
    }
    let (mean, c) = equalized_odds(&pred, &t, &s).unwrap();
    let e0 = 1.0 - (0.75f64 - 0.5).abs();
    let e1 = 1.0 - (0.4f64 - 1.0).abs();
    assert!((c[0] - e0).abs() < 1e-15 && (c[1] - e1).abs() < 1e-15);
    assert!((mean - (e0 + e1) / 2.0).abs() < 1e-15);
}

#[test]
fn report_marks_empty_class_absent() {
    let t = [0, 0, 1, 1];
    let s = [0, 1, 0, 0];
    let r = fairness_report(&[0, 0, 1, 0], &t, &s).unwrap();
    assert_eq!(r.eo_per_class, [Some(1.0), None]);
    assert_eq!(r.eo, 1.0);
    assert_eq!(r.accuracy, 0.75);
    assert_eq!(r.samples, 4);
}

proptest! {
    #[test]
    fn metrics_ignore_sample_order(
        rows in prop::collection::vec((0u8..2, 0u8..2, 0u8..2), 8..60),
        seed in any::<u64>(),
    ) {
        let mut rows = rows;
        rows.extend([(0, 0, 0), (0, 0, 1), (1, 1, 0), (1, 1, 1)]);
        let split = |r: &[(u8, u8, u8)]| -> (Vec<u8>, Vec<u8>, Vec<u8>) {
            (r.iter().map(|x| x.0).collect(), r.iter().map(|x| x.1).collect(), r.iter().map(|x| x.2).collect())
        };
        let (p, t, s) = split(&rows);
        let base = fairness_report(&p, &t, &s).unwrap();
        let mut shuffled = rows.clone();
        rand::seq::SliceRandom::shuffle(&mut shuffled[..], &mut ChaCha8Rng::seed_from_u64(seed));
        let (p2, t2, s2) = split(&shuffled);
        let other = fairness_report(&p2, &t2, &s2).unwrap();
        prop_assert!((base.dp - other.dp).abs() < 1e-12);
        prop_assert!((base.eo - other.eo).abs() < 1e-12);
        prop_assert!((base.accuracy - other.accuracy).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base.dp) && (0.0..=1.0).contains(&base.eo));
    }

    #[test]
    fn dp_of_s_measurable_predictor_matches_hand_formula(
        s in prop::collection::vec(0u8..2, 4..40),
        map in (0u8..2, 0u8..2),
    ) {
        let mut s = s;
        s.extend([0, 1]);
        let pred: Vec<u8> = s.iter().map(|&v| if v == 0 { map.0 } else { map.1 }).collect();
        let expected = 1.0 - (map.0 as f64 - map.1 as f64).abs();
        prop_assert_eq!(demographic_parity(&pred, &s).unwrap(), expected);
    }
}

#[test]
fn partition_is_disjoint_and_covering() {
    let (fit, eval) = audit_partition(101, 0.6, 3).unwrap();
    assert_eq!(fit.len(), 61);
    assert_eq!(eval.len(), 40);
    let mut all: Vec<usize> = fit.iter().chain(&eval).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..101).collect::<Vec<_>>());
    assert_eq!(audit_partition(101, 0.6, 3).unwrap(), (fit, eval));
    assert!(audit_partition(10, 1.0, 0).is_err());
}

#[test]
fn constant_representation_audit_hits_majority() {
    let mut s = vec![0u8; 300];
    s.extend(vec![1u8; 100]);
    let reps = Matrix::zeros(400, 4);
    let (acc, majority) = sensitive_classifier_audit(&reps, &s, &quick(), 1).unwrap();
    assert_eq!(acc, majority);
    assert!(majority > 0.6);
}

#[test]
fn majority_baseline_uses_the_fit_portion_label() {
    let (fit, eval) = audit_partition(40, 0.6, 2).unwrap();
    let mut s = vec![0u8; 40];
    for &i in fit.iter().take(13) {
        s[i] = 1;
    }
    for &i in eval.iter().take(6) {
        s[i] = 1;
    }
    assert_eq!(eval.len(), 16);
    let (acc, baseline) = sensitive_classifier_audit(&Matrix::zeros(40, 2), &s, &quick(), 2).unwrap();
    assert_eq!(baseline, 6.0 / 16.0);
    assert_eq!(acc, baseline);
    for &i in eval.iter().skip(6).take(2) {
        s[i] = 1;
    }
    let (_, baseline) = sensitive_classifier_audit(&Matrix::zeros(40, 2), &s, &quick(), 2).unwrap();
    assert_eq!(baseline, 0.5);
}

#[test]
fn one_hot_sensitive_representation_is_recovered() {
    let s = coin(400, 2);
    let reps = Matrix::from_rows(&s.iter().map(|&v| [v as f64, 1.0 - v as f64]).collect::<Vec<_>>()).unwrap();
    let (acc, _) = sensitive_classifier_audit(&reps, &s, &quick(), 1).unwrap();
    assert!(acc >= 0.99, "accuracy {acc}");
}

#[test]
fn single_class_is_rejected() {
    assert!(sensitive_classifier_audit(&Matrix::zeros(10, 2), &[1; 10], &quick(), 0).is_err());
}

#[test]
fn mmd_audit_is_calibrated_on_noise() {
    let reps = noise(600, 4, 3);
    let s = coin(600, 4);
    let (power, rejections) = mmd_power_audit(&reps, &s, &quick(), 5).unwrap();
    assert_eq!(power, rejections as f64 / 100.0);
    assert!((0.0..=0.12).contains(&power), "power {power}");
}

#[test]
fn mmd_audit_detects_separated_groups() {
    let s = coin(600, 6);
    let mut reps = noise(600, 2, 7);
    for i in 0..600 {
        for j in 0..2 {
            let v = s[i] as f64 + 1e-3 * reps.get(i, j);
            reps.set(i, j, v);
        }
    }
    let (power, _) = mmd_power_audit(&reps, &s, &quick(), 8).unwrap();
    assert!(power >= 0.99, "power {power}");
}

#[test]
fn mmd_audit_needs_enough_evaluation_samples() {
    let reps = noise(100, 2, 1);
    let s = coin(100, 2);
    assert!(matches!(
        mmd_power_audit(&reps, &s, &quick(), 0),
        Err(Error::InsufficientSamples { .. })
    ));
}

#[test]
fn rejection_rate_grows_with_trial_size() {
    let n = 2000;
    let s = coin(n, 9);
    let mut x = noise(n, 1, 10);
    for i in 0..n {
        x.set(i, 0, x.get(i, 0) + 0.5 * s[i] as f64);
    }
    let k = KernelSpec::gaussian(1.0).unwrap();
    let small = AuditConfig {
        per_group: 16,
        ..quick()
    };
    let large = AuditConfig {
        per_group: 32,
        ..quick()
    };
    let r16 = rejection_rate(&x, &s, &k, &small, 11).unwrap();
    let r32 = rejection_rate(&x, &s, &k, &large, 11).unwrap();
    assert!(r32 > r16, "{r16} vs {r32}");
}

#[test]
fn audits_are_deterministic() {
    let reps = noise(500, 3, 12);
    let s = coin(500, 13);
    assert_eq!(audit(&reps, &s, &quick(), 4).unwrap(), audit(&reps, &s, &quick(), 4).unwrap());
}

#[test]
fn transfer_on_target_reproduces_direct_report() {
    let n = 500;
    let s = coin(n, 14);
    let t = coin(n, 15);
    let mut reps = noise(n, 2, 16);
    for i in 0..n {
        reps.set(i, 0, reps.get(i, 0) + 2.0 * t[i] as f64);
    }
    let cfg = quick();
    let report = transfer_eval(&reps, &t, &s, &cfg, 3).unwrap();
    let (fit, eval) = audit_partition(n, cfg.train_fraction, 3).unwrap();
    let y_fit: Vec<u8> = fit.iter().map(|&i| t[i]).collect();
    let net = fit_classifier(&reps.select_rows(&fit), &y_fit, 2, &cfg, 3 ^ 0xa0d1_0001).unwrap();
    let pred = predict(&net, &reps.select_rows(&eval)).unwrap();
    let t_eval: Vec<u8> = eval.iter().map(|&i| t[i]).collect();
    let s_eval: Vec<u8> = eval.iter().map(|&i| s[i]).collect();
    assert_eq!(report, fairness_report(&pred, &t_eval, &s_eval).unwrap());
}

#[test]
fn transfer_on_unrelated_label_is_near_majority() {
    let n = 800;
    let reps = noise(n, 3, 17);
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let y: Vec<u8> = (0..n).map(|_| (rng.gen::<f64>() < 0.7) as u8).collect();
    let s = coin(n, 19);
    let report = transfer_eval(&reps, &y, &s, &quick(), 1).unwrap();
    let (_, eval) = audit_partition(n, 0.6, 1).unwrap();
    let majority = majority_rate(&eval.iter().map(|&i| y[i]).collect::<Vec<_>>());
    assert!((report.accuracy - majority).abs() < 0.05, "{} vs {majority}", report.accuracy);
}

#[test]
fn transfer_on_linear_label_is_accurate() {
    let n = 800;
    let reps = noise(n, 3, 20);
    let y: Vec<u8> = (0..n).map(|i| (reps.get(i, 0) - 0.5 * reps.get(i, 2) > 0.0) as u8).collect();
    let s = coin(n, 21);
    let cfg = AuditConfig {
        classifier_epochs: 100,
        ..quick()
    };
    let report = transfer_eval(&reps, &y, &s, &cfg, 2).unwrap();
    assert!(report.accuracy >= 0.95, "accuracy {}", report.accuracy);
}

fn toy_model() -> crate::fairlearn::FairModel {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    crate::fairlearn::FairModel::new(2, &[5, 4], 3, &mut rng).unwrap()
}

#[test]
fn export_round_trips() {
    let m = toy_model();
    let split = DatasetSplit::new(
        noise(3, 2, 22),
        vec![Some(1), None, Some(0)],
        vec![Some(0), Some(1), None],
        SplitTag::Test,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.csv");
    export_embeddings(&m, &split, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "row,t,s,z0,z1,z2,z3");
    assert!(lines.iter().all(|l| l.split(',').count() == 3 + 4));
    let (ids, t, s, z) = read_embeddings(&path).unwrap();
    assert_eq!(ids, vec![0, 1, 2]);
    assert_eq!(t, split.t);
    assert_eq!(s, split.s);
    let reps = m.represent(&split.features).unwrap();
    assert!(reps.zip_map(&z, |a, b| (a - b).abs()).max_abs() <= 1e-12);
}

#[test]
fn evaluate_model_uses_fully_labeled_rows() {
    let m = toy_model();
    let split = DatasetSplit::new(
        noise(6, 2, 23),
        vec![Some(0), Some(1), None, Some(0), Some(1), Some(1)],
        vec![Some(0), Some(0), Some(1), Some(1), Some(1), None],
        SplitTag::Test,
    )
    .unwrap();
    let r = evaluate_model(&m, &split).unwrap();
    assert_eq!(r.samples, 4);
    let pred = m.predict(&split.features.select_rows(&[0, 1, 3, 4])).unwrap();
    assert_eq!(r, fairness_report(&pred, &[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap());
}

