mod common;

use common::*;
use proptest::prelude::*;
use transferlab::linalg::Matrix;
use transferlab::ntk;
use transferlab::shallow::*;
use transferlab::stats;
use transferlab::tasks::{gen_task, make_task_pair, LabelFnSpec, TaskDataset, TaskPairSpec};
use transferlab::trace::DeviationRef;

fn task(n: usize, d: usize, seed: u64) -> TaskDataset {
    gen_task(n, d, &LabelFnSpec::random_relu(d, 3, seed + 1), seed).unwrap()
}

fn unit_list(net: &ShallowNet) -> Vec<Vec<f64>> {
    cols(net.w())
}

#[test]
fn forward_matches_naive_loops() {
    let t = task(9, 4, 1);
    let net = init_net(4, 33, 0.7, 2).unwrap();
    let a: Vec<f64> = net.a().iter().copied().collect();
    let oracle = shallow_forward(&unit_list(&net), &a, &rows(t.inputs()));
    let u = net.forward(t.inputs()).unwrap();
    for i in 0..9 {
        assert!((u[i] - oracle[i]).abs() < 1e-12);
    }
    let l = net.loss(t.inputs(), t.labels()).unwrap();
    let y: Vec<f64> = t.labels().iter().copied().collect();
    assert!((l - half_sq(&oracle, &y)).abs() < 1e-12);
}

fn off_kink(net: &ShallowNet, x: &Matrix) -> bool {
    net.pre_activations(x).iter().all(|p| p.abs() > 1e-4)
}

#[test]
fn grad_w_matches_central_differences() {
    let mut checked = 0;
    let mut seed = 0;
    while checked < 50 {
        seed += 1;
        let t = task(6, 3, seed);
        let net = init_net(3, 8, 1.0, seed).unwrap();
        if !off_kink(&net, t.inputs()) {
            continue;
        }
        let (d, m) = (3, 8);
        let a: Vec<f64> = net.a().iter().copied().collect();
        let x = rows(t.inputs());
        let y: Vec<f64> = t.labels().iter().copied().collect();
        let f = |theta: &[f64]| {
            let units: Vec<Vec<f64>> = theta.chunks(d).map(|c| c.to_vec()).collect();
            half_sq(&shallow_forward(&units, &a, &x), &y)
        };
        let theta: Vec<f64> = net.w().iter().copied().collect();
        let fd = fd_gradient(f, &theta, 1e-6);
        let g = net.grad_w(t.inputs(), t.labels()).unwrap();
        assert_eq!(g.shape(), (d, m));
        let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / norm(&fd).max(1e-12);
        assert!(rel <= 1e-5, "seed {seed}: relative error {rel:e}");
        checked += 1;
    }
}

#[test]
fn grad_w_is_z_times_residual() {
    let t = task(7, 4, 3);
    let net = init_net(4, 16, 1.0, 5).unwrap();
    let z = net.z_matrix(t.inputs(), Z_ENTRY_BUDGET).unwrap();
    let r = net.forward(t.inputs()).unwrap() - t.labels();
    let zr = &z * &r;
    let g = net.grad_w(t.inputs(), t.labels()).unwrap();
    // column-major vec(W): unit r occupies rows r*d .. (r+1)*d of Z
    for (k, v) in g.iter().enumerate() {
        assert!((v - zr[k]).abs() < 1e-12);
    }
    let ztz = z.transpose() * &z;
    let emp = ntk::gram_empirical(&net, t.inputs(), t.inputs()).unwrap().values;
    assert!((ztz - emp).amax() < 1e-12);
}

#[test]
fn init_scale_concentrates() {
    // ||W||_F / kappa is chi with dm degrees of freedom
    let (d, m, kappa) = (10, 1000, 1e-6);
    let net = init_net(d, m, kappa, 8).unwrap();
    let expected = kappa * ((d * m) as f64).sqrt();
    let fro = net.w().norm();
    assert!((fro / expected - 1.0).abs() < 0.2, "{fro} vs {expected}");
    assert!((fro / expected - 1.0).abs() < 0.05, "chi concentration is much tighter");
}

#[test]
fn both_signs_present_at_width_64() {
    // P(all equal) = 2^-63 per seed
    for seed in 0..100 {
        let net = init_net(2, 64, 1.0, seed).unwrap();
        let pos = net.a().iter().filter(|&&s| s > 0.0).count();
        assert!(pos > 0 && pos < 64, "seed {seed}");
    }
}

#[test]
fn activation_gradient_identity_through_training() {
    let t = task(10, 5, 4);
    let net = init_net(5, 256, 1.0, 4).unwrap();
    let mut cfg = TrainConfig::new(0.5, 200);
    cfg.check_identity = true;
    let (_, trace) = train_gd(&net, &t, &cfg, DeviationRef::Init).unwrap();
    assert!(trace.max_identity_error.unwrap() <= 1e-12);
}

#[test]
fn activation_flip_fraction_of_negated_net() {
    let t = task(8, 4, 9);
    let net = init_net(4, 50, 1.0, 2).unwrap();
    let neg = net.with_weights(-net.w().clone()).unwrap();
    assert_eq!(activation_flip_fraction(&net, &net, t.inputs()).unwrap(), 0.0);
    assert_eq!(activation_flip_fraction(&neg, &net, t.inputs()).unwrap(), 1.0);
}

#[test]
fn training_is_deterministic() {
    let t = task(8, 4, 2);
    let net = init_net(4, 64, 1.0, 1).unwrap();
    let cfg = TrainConfig::new(0.5, 50).record_every(5);
    let a = train_gd(&net, &t, &cfg, DeviationRef::Init).unwrap();
    let b = train_gd(&net, &t, &cfg, DeviationRef::Init).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.1.to_csv().as_str(), b.1.to_csv().as_str());
    // the input net is untouched
    assert_eq!(net.step(), 0);
    assert_eq!(net.w(), net.w_init());
}

#[test]
fn deviation_grows_monotonically() {
    let t = task(12, 5, 6);
    let net = init_net(5, 512, 1.0, 6).unwrap();
    let (_, trace) = train_gd(&net, &t, &TrainConfig::new(0.5, 300), DeviationRef::Init).unwrap();
    let dev = trace.deviations();
    assert_eq!(dev[0], 0.0);
    assert!(stats::fraction_non_decreasing(&dev, 0.0) >= 0.95);
}

#[test]
fn flips_and_movement_shrink_with_width() {
    let t = task(10, 5, 11);
    let mut flips = Vec::new();
    let mut moves = Vec::new();
    for m in [256, 1024, 4096] {
        let (mut f, mut mv) = (Vec::new(), Vec::new());
        for seed in 0..3 {
            let net = init_net(5, m, 1.0, seed).unwrap();
            let (out, _) = train_gd(&net, &t, &TrainConfig::new(0.5, 300).record_every(300), DeviationRef::Init).unwrap();
            f.push(activation_flip_fraction(&out, &net, t.inputs()).unwrap());
            mv.push(out.max_neuron_movement());
        }
        flips.push(stats::median(&f));
        moves.push(stats::median(&mv));
    }
    assert!(stats::non_increasing(&flips, 0.0), "{flips:?}");
    assert!(flips[2] < flips[0], "{flips:?}");
    assert!(stats::non_increasing(&moves, 0.0), "{moves:?}");
}

#[test]
fn identical_target_barely_moves_the_pretrained_net() {
    let t = task(10, 5, 12);
    let net_cfg = NetConfig { m: 1024, kappa: 1e-2, seed: 3 };
    let pre = TrainConfig::new(1.0, 3000).record_every(3000);
    let fine = TrainConfig::new(1.0, 500).record_every(500);
    let report = pretrain_then_transfer(&t, &t, &net_cfg, &pre, &fine).unwrap();
    let (scratch, _) = train_scratch(&t, &net_cfg, &fine).unwrap();
    let scratch_dev = (scratch.w() - scratch.w_init()).norm();
    assert!(
        report.transfer_deviation * 10.0 <= scratch_dev,
        "{} vs {scratch_dev}",
        report.transfer_deviation
    );
    assert!(report.theorem2_bound().unwrap() < 1e-6);
}

fn pair(target: LabelFnSpec, seed: u64) -> (TaskDataset, TaskDataset) {
    make_task_pair(&TaskPairSpec {
        n_source: 12,
        n_target: 12,
        d: 5,
        input_overlap: 1.0,
        source_labels: LabelFnSpec::random_relu(5, 3, 50),
        target_labels: target,
        seed,
    })
    .unwrap()
}

#[test]
fn transfer_deviation_follows_bound_ordering() {
    let near = pair(LabelFnSpec::random_relu(5, 3, 50), 4);
    let far = pair(LabelFnSpec::random_relu(5, 3, 51).negated(5), 4);
    let net_cfg = NetConfig { m: 2048, kappa: 1e-2, seed: 1 };
    let pre = TrainConfig::new(1.0, 1500).record_every(1500);
    let fine = TrainConfig::new(1.0, 1500).record_every(1500);
    let a = pretrain_then_transfer(&near.0, &near.1, &net_cfg, &pre, &fine).unwrap();
    let b = pretrain_then_transfer(&far.0, &far.1, &net_cfg, &pre, &fine).unwrap();
    assert!(a.theorem2_bound().unwrap() < b.theorem2_bound().unwrap());
    assert!(a.transfer_deviation < b.transfer_deviation);
}

#[test]
fn zero_labelled_tasks_give_no_signal() {
    let zero = LabelFnSpec::constant(0.0);
    let (p, q) = make_task_pair(&TaskPairSpec {
        n_source: 8,
        n_target: 8,
        d: 4,
        input_overlap: 1.0,
        source_labels: zero.clone(),
        target_labels: zero,
        seed: 2,
    })
    .unwrap();
    let net_cfg = NetConfig { m: 512, kappa: 1e-4, seed: 1 };
    let cfg = TrainConfig::new(1.0, 200).record_every(200);
    let r = pretrain_then_transfer(&p, &q, &net_cfg, &cfg, &cfg).unwrap();
    assert!(r.pretrain_deviation < 1e-3);
    assert!(r.transfer_deviation < 1e-3);
}

#[test]
fn epoch_sweep_source_residual_falls() {
    let (p, q) = make_specific_noise_pair_for_test();
    let net_cfg = NetConfig { m: 512, kappa: 1e-2, seed: 5 };
    let fine = TrainConfig::new(1.0, 100).record_every(100);
    let sweep = epoch_sweep_transfer(&p, &q, &net_cfg, 1.0, &[0, 50, 200, 800], &fine).unwrap();
    let src: Vec<f64> = sweep.rows.iter().map(|r| r.source_residual).collect();
    assert!(stats::non_increasing(&src, 1e-12), "{src:?}");
    assert_eq!(sweep.rows[0].pretrain_steps, 0);
    assert_eq!(sweep.to_csv().as_str().lines().count(), 5);
}

fn make_specific_noise_pair_for_test() -> (TaskDataset, TaskDataset) {
    transferlab::tasks::make_specific_noise_pair(15, 15, 5, 0.5, 3).unwrap()
}

#[test]
fn checkpoint_file_round_trip() {
    let t = task(6, 3, 1);
    let net = init_net(3, 20, 0.5, 7).unwrap();
    let (trained, _) = train_gd(&net, &t, &TrainConfig::new(0.5, 10), DeviationRef::Init).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    write_checkpoint(&trained, &path).unwrap();
    let back = read_checkpoint(&path).unwrap();
    assert_eq!(back, trained);
    assert_eq!(back.step(), 10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn identity_holds_for_any_net(seed in any::<u64>(), m in 1usize..40, n in 1usize..8) {
        let t = task(n, 3, seed % 1000);
        let net = init_net(3, m, 1.0, seed).unwrap();
        let g = net.grad_activations(t.inputs(), t.labels()).unwrap();
        let r = (net.forward(t.inputs()).unwrap() - t.labels()).norm_squared();
        prop_assert!((g.squared_norm - r).abs() <= 1e-12 * r.max(1.0));
    }

    #[test]
    fn output_is_positively_homogeneous_in_w(seed in any::<u64>(), c in 0.01f64..10.0) {
        let t = task(5, 3, seed % 1000);
        let net = init_net(3, 16, 1.0, seed).unwrap();
        let scaled = net.with_weights(net.w() * c).unwrap();
        let u = net.forward(t.inputs()).unwrap();
        let v = scaled.forward(t.inputs()).unwrap();
        prop_assert!((v - u * c).amax() < 1e-12 * c.max(1.0));
    }

    #[test]
    fn zero_rate_keeps_weights(seed in any::<u64>()) {
        let t = task(4, 3, seed % 1000);
        let net = init_net(3, 8, 1.0, seed).unwrap();
        let (out, trace) = train_gd(&net, &t, &TrainConfig::new(0.0, 5), DeviationRef::Init).unwrap();
        prop_assert_eq!(out.w(), net.w());
        let res = trace.residuals();
        prop_assert!(res.iter().all(|&r| r == res[0]));
    }
}

