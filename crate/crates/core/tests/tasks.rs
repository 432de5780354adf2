mod common;

use common::*;
use proptest::prelude::*;
use transferlab::linalg::{self, Matrix};
use transferlab::rng;
use transferlab::tasks::*;
use transferlab::Error;

fn check_invariants(t: &TaskDataset) {
    for i in 0..t.n() {
        let r: Vec<f64> = t.inputs().row(i).iter().copied().collect();
        assert!((norm(&r) - 1.0).abs() <= 1e-12);
        assert!(t.labels()[i].abs() <= 1.0);
    }
}

#[test]
fn relu_teacher_label_mean_matches_resampling() {
    let teacher = LabelFnSpec::random_relu(10, 4, 5);
    let t = gen_task(50, 10, &teacher, 42).unwrap();
    check_invariants(&t);
    assert_eq!(t, gen_task(50, 10, &teacher, 42).unwrap());

    let pool: Vec<f64> = (1000..1040)
        .flat_map(|s| gen_task(50, 10, &teacher, s).unwrap().labels().iter().copied().collect::<Vec<_>>())
        .collect();
    let mu = pool.iter().sum::<f64>() / pool.len() as f64;
    let var = pool.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (pool.len() - 1) as f64;
    let mean = t.labels().mean();
    let se = (var / 50.0).sqrt();
    assert!((mean - mu).abs() <= 3.0 * se, "mean {mean} vs {mu} +- {se}");
}

#[test]
fn relu_teacher_by_hand() {
    // two units in d = 2: [v1, c1, v2, c2]
    let spec = LabelFnSpec {
        kind: LabelKind::ReluTeacher,
        parameters: vec![1.0, 0.0, 0.5, 0.0, 1.0, -0.25],
        clip: false,
    };
    let x = Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, -0.6, 0.8]);
    let y = spec.evaluate(&x).unwrap();
    let expected = [0.5, -0.25, -0.25 * 0.8];
    for i in 0..3 {
        assert!((y[i] - expected[i]).abs() < 1e-15);
    }
}

#[test]
fn rotations() {
    let t = gen_task(6, 4, &LabelFnSpec::random_linear(4, 0.8, 1), 3).unwrap();
    let same = rotate_inputs(&t, &Matrix::identity(4, 4)).unwrap();
    assert_eq!(same.inputs(), t.inputs());

    let r = linalg::random_orthogonal(4, &mut rng::stream(9, 1));
    let there = rotate_inputs(&t, &r).unwrap();
    let back = rotate_inputs(&there, &r.transpose()).unwrap();
    assert!((back.inputs() - t.inputs()).amax() < 1e-10);
    assert_eq!(back.labels(), t.labels());
    check_invariants(&there);

    let t2 = gen_task(5, 2, &LabelFnSpec::constant(0.25), 4).unwrap();
    let q = rotate_inputs(&t2, &linalg::planar_rotation(2, 0, 1, std::f64::consts::FRAC_PI_2)).unwrap();
    for i in 0..5 {
        let (a, b) = (t2.inputs()[(i, 0)], t2.inputs()[(i, 1)]);
        assert!((q.inputs()[(i, 0)] + b).abs() < 1e-12);
        assert!((q.inputs()[(i, 1)] - a).abs() < 1e-12);
    }

    let skew = Matrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
    match rotate_inputs(&t2, &skew) {
        Err(Error::NotOrthogonal { deviation }) => assert!(deviation > 0.05),
        other => panic!("expected NotOrthogonal, got {other:?}"),
    }
}

#[test]
fn relabelling() {
    let teacher = LabelFnSpec::random_relu(5, 3, 2);
    let t = gen_task(12, 5, &teacher, 8).unwrap();
    let zero = relabel(&t, &LabelFnSpec::constant(0.0)).unwrap();
    assert_eq!(zero.inputs(), t.inputs());
    assert!(zero.labels().iter().all(|&v| v == 0.0));
    assert_eq!(relabel(&t, &teacher).unwrap().labels(), t.labels());

    let neg = relabel(&t, &teacher.negated(5)).unwrap();
    // teacher applied by hand to the first three rows
    for i in 0..3 {
        let x: Vec<f64> = t.inputs().row(i).iter().copied().collect();
        let mut y = 0.0;
        for unit in teacher.parameters.chunks(6) {
            y += unit[5] * dot(&unit[..5], &x).max(0.0);
        }
        let y = y.clamp(-1.0, 1.0);
        assert!((t.labels()[i] - y).abs() < 1e-15);
        assert!((neg.labels()[i] + y).abs() < 1e-15);
    }
}

fn spec(overlap: f64, target: LabelFnSpec) -> TaskPairSpec {
    TaskPairSpec {
        n_source: 15,
        n_target: 15,
        d: 5,
        input_overlap: overlap,
        source_labels: LabelFnSpec::random_relu(5, 3, 1),
        target_labels: target,
        seed: 77,
    }
}

#[test]
fn pairs() {
    let shared = LabelFnSpec::random_relu(5, 3, 1);
    let (p, q) = make_task_pair(&spec(1.0, shared.clone())).unwrap();
    check_invariants(&p);
    check_invariants(&q);
    // same process: the shared teacher explains both label vectors
    assert_eq!(shared.evaluate(q.inputs()).unwrap(), *q.labels());
    assert_eq!(shared.evaluate(p.inputs()).unwrap(), *p.labels());

    let (_, z) = make_task_pair(&spec(1.0, LabelFnSpec::constant(0.0))).unwrap();
    assert!(z.labels().iter().all(|&v| v == 0.0));

    let bad = TaskPairSpec { input_overlap: 1.5, ..spec(1.0, shared) };
    assert!(make_task_pair(&bad).is_err());
}

#[test]
fn validation_reports() {
    let t = gen_task(4, 3, &LabelFnSpec::constant(0.1), 2).unwrap();
    let r = t.validate();
    assert!(r.passed && r.max_norm_deviation < 1e-12);

    let mut y = t.labels().clone();
    y[2] = 1.5;
    let bad = TaskDataset::from_parts_unchecked("bad", 0, t.inputs().clone(), y);
    let r = bad.validate();
    assert!(!r.passed);
    assert_eq!(r.label_violations, vec![2]);

    let mut x = t.inputs().clone();
    let row0 = x.row(0).into_owned();
    x.set_row(3, &row0);
    let dup = TaskDataset::from_parts_unchecked("dup", 0, x.clone(), t.labels().clone());
    assert_eq!(dup.validate().duplicate_pairs, vec![(0, 3)]);
    assert!(TaskDataset::new("dup", 0, x, t.labels().clone()).is_err());
}

#[test]
fn json_and_csv_round_trip() {
    let t = gen_task(7, 3, &LabelFnSpec::random_relu(3, 2, 4), 5).unwrap();
    let back = TaskDataset::from_json_str(&t.to_json_string().unwrap()).unwrap();
    assert_eq!(back.inputs(), t.inputs());
    assert_eq!(back.labels(), t.labels());
    let csv = t.to_csv();
    let text = csv.as_str();
    assert!(text.starts_with("index,label,x0,x1,x2\n"));
    assert_eq!(text.lines().count(), 8);
}

#[test]
fn distortion_family_moves_away_from_the_target() {
    let s = spec(0.5, LabelFnSpec::random_relu(5, 3, 1));
    let distractor = LabelFnSpec::random_relu(5, 3, 99);
    let (p, targets) = distortion_family(&s, &distractor, &[0.0, 0.5, 1.0]).unwrap();
    let (p0, q0) = make_task_pair(&s).unwrap();
    assert_eq!(p, p0);
    assert_eq!(targets[0].inputs(), q0.inputs());
    // members are labelled on their own (possibly rotated) inputs
    let base = s.target_labels.evaluate(q0.inputs()).unwrap();
    assert_eq!(*targets[0].labels(), base);
    let d1 = (targets[1].labels() - &base).norm();
    let d2 = (targets[2].labels() - &base).norm();
    assert!(0.0 < d1 && d1 < d2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generated_tasks_satisfy_invariants(n in 1usize..30, d in 2usize..8, seed in any::<u64>(), kind in 0u8..4) {
        let f = match kind {
            0 => LabelFnSpec::random_linear(d, 2.0, seed),
            1 => LabelFnSpec::random_relu(d, 3, seed),
            2 => LabelFnSpec::random_signs((seed % 1000) as u32),
            _ => LabelFnSpec::constant(-0.5),
        };
        let t = gen_task(n, d, &f, seed).unwrap();
        prop_assert!(t.validate().passed);
        prop_assert_eq!(&t, &gen_task(n, d, &f, seed).unwrap());
    }

    #[test]
    fn rotation_preserves_inner_products(seed in any::<u64>(), d in 2usize..7) {
        let t = gen_task(6, d, &LabelFnSpec::constant(0.0), seed).unwrap();
        let r = linalg::random_orthogonal(d, &mut rng::stream(seed, 3));
        let q = rotate_inputs(&t, &r).unwrap();
        let a = t.inputs() * t.inputs().transpose();
        let b = q.inputs() * q.inputs().transpose();
        prop_assert!((a - b).amax() < 1e-10);
    }

    #[test]
    fn overlap_one_shared_teacher_agrees_pointwise(seed in any::<u64>()) {
        let f = LabelFnSpec::random_relu(4, 3, seed);
        let (p, q) = make_task_pair(&TaskPairSpec {
            n_source: 8, n_target: 8, d: 4, input_overlap: 1.0,
            source_labels: f.clone(), target_labels: f.clone(), seed,
        }).unwrap();
        prop_assert_eq!(f.evaluate(p.inputs()).unwrap(), p.labels().clone());
        prop_assert_eq!(f.evaluate(q.inputs()).unwrap(), q.labels().clone());
    }
}
