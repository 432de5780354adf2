mod common;

use common::*;
use proptest::prelude::*;
use transferlab::deepnet::*;
use transferlab::linalg::{Matrix, Vector};
use transferlab::shallow::{init_net, TrainConfig};
use transferlab::tasks::{gen_task, LabelFnSpec, TaskDataset};
use transferlab::trace::DeviationRef;

fn task(n: usize, d: usize, seed: u64) -> TaskDataset {
    gen_task(n, d, &LabelFnSpec::random_relu(d, 3, seed + 7), seed).unwrap()
}

fn layers_as_vecs(net: &DeepNet) -> Vec<Vec<Vec<f64>>> {
    net.weights().iter().map(rows).collect()
}

fn unflatten(dims: &[usize], theta: &[f64]) -> Vec<Vec<Vec<f64>>> {
    let mut at = 0;
    dims.windows(2)
        .map(|w| {
            let (r, c) = (w[0], w[1]);
            let layer = (0..r).map(|i| theta[at + i * c..at + (i + 1) * c].to_vec()).collect();
            at += r * c;
            layer
        })
        .collect()
}

fn off_kink(net: &DeepNet, x: &Matrix) -> bool {
    let mut h = x.clone();
    for w in &net.weights()[..net.depth() - 1] {
        let z = &h * w;
        if z.iter().any(|v| v.abs() < 1e-4) {
            return false;
        }
        h = z.map(|v| v.max(0.0));
    }
    true
}

#[test]
fn every_layer_matches_central_differences() {
    let dims = [3, 5, 4, 1];
    let mut checked = 0;
    let mut seed = 0;
    while checked < 50 {
        seed += 1;
        let t = task(4, 3, seed);
        let net = init_deep(&dims, &Scale::He { gain: 1.0 }, seed).unwrap();
        if !off_kink(&net, t.inputs()) {
            continue;
        }
        let x = rows(t.inputs());
        let y: Vec<f64> = t.labels().iter().copied().collect();
        let f = |theta: &[f64]| {
            let layers = unflatten(&dims, theta);
            let u: Vec<f64> = x.iter().map(|xi| mlp_forward(&layers, xi)).collect();
            half_sq(&u, &y)
        };
        // row-major flattening of every layer
        let theta: Vec<f64> = layers_as_vecs(&net).into_iter().flatten().flatten().collect();
        let fd = fd_gradient(f, &theta, 1e-6);
        let bw = net.forward_backward(t.inputs(), t.labels()).unwrap();
        let mut at = 0;
        for (k, g) in bw.weight_grads.iter().enumerate() {
            let flat: Vec<f64> = rows(g).into_iter().flatten().collect();
            let oracle = &fd[at..at + flat.len()];
            at += flat.len();
            let diff: Vec<f64> = flat.iter().zip(oracle).map(|(a, b)| a - b).collect();
            let rel = norm(&diff) / norm(oracle).max(1e-12);
            assert!(rel <= 1e-5, "seed {seed} layer {}: {rel:e}", k + 1);
        }
        checked += 1;
    }
}

#[test]
fn transport_identity_recomputed_by_hand() {
    let t = task(5, 4, 3);
    let net = init_deep(&[4, 6, 5, 3, 1], &Scale::He { gain: 1.0 }, 3).unwrap();
    let bw = net.forward_backward(t.inputs(), t.labels()).unwrap();
    let depth = net.depth();
    assert_eq!(bw.activation_grads.len(), depth + 1);
    assert_eq!(bw.masks.len(), depth - 1);
    for k in 1..=depth {
        let up = rows(&bw.activation_grads[k]);
        let w = rows(&net.weights()[k - 1]);
        let got = rows(&bw.activation_grads[k - 1]);
        for i in 0..t.n() {
            for a in 0..w.len() {
                let mut s = 0.0;
                for b in 0..w[0].len() {
                    let m = if k < depth { bw.masks[k - 1][(i, b)] } else { 1.0 };
                    s += m * up[i][b] * w[a][b];
                }
                assert!((got[i][a] - s).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn dead_network_has_no_gradient() {
    let t = task(6, 3, 1);
    let net = init_deep(&[3, 4, 1], &Scale::Fixed { scale: 0.0 }, 1).unwrap();
    assert!(net.forward(t.inputs()).unwrap().iter().all(|&u| u == 0.0));
    let bw = net.forward_backward(t.inputs(), t.labels()).unwrap();
    assert!((bw.loss - 0.5 * t.labels().norm_squared()).abs() < 1e-15);
    assert!(bw.weight_grads.iter().all(|g| g.iter().all(|&v| v == 0.0)));

    let live = init_deep(&[3, 4, 4, 1], &Scale::Fixed { scale: 1.0 }, 1).unwrap();
    let zero_x = Matrix::zeros(4, 3);
    let y = Vector::from_vec(vec![0.5, -0.5, 0.2, 0.1]);
    let bw = live.forward_backward(&zero_x, &y).unwrap();
    assert!(bw.weight_grads.iter().all(|g| g.iter().all(|&v| v == 0.0)));
}

#[test]
fn gaussian_layers_have_expected_norm() {
    let dims = [64, 128, 128, 1];
    let s = 0.3;
    let net = init_deep(&dims, &Scale::Fixed { scale: s }, 4).unwrap();
    for (k, w) in net.weights().iter().enumerate() {
        let expected = s * ((dims[k] * dims[k + 1]) as f64).sqrt();
        assert!((w.norm() / expected - 1.0).abs() < 0.2, "layer {}", k + 1);
    }
}

#[test]
fn one_hidden_layer_reduces_to_the_shallow_identity() {
    let t = task(7, 4, 2);
    let shallow = init_net(4, 32, 1.0, 2).unwrap();
    let deep = DeepNet::from_shallow(&shallow).unwrap();
    let u_s = shallow.forward(t.inputs()).unwrap();
    let u_d = deep.forward(t.inputs()).unwrap();
    assert!((u_s - &u_d).amax() < 1e-12);
    let bw = deep.forward_backward(t.inputs(), t.labels()).unwrap();
    let r2 = (u_d - t.labels()).norm_squared();
    assert!((bw.activation_grads[1].norm_squared() - r2).abs() < 1e-12);
}

#[test]
fn checkpoint_reload_is_bit_identical() {
    let t = task(6, 3, 5);
    let net = init_deep(&[3, 8, 6, 1], &Scale::He { gain: 1.0 }, 5).unwrap();
    let (trained, _) = train_deep(&net, &t, &TrainConfig::new(0.05, 20), DeviationRef::Init).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("deep.ckpt");
    write_deep_checkpoint(&trained, &path).unwrap();
    assert_eq!(read_deep_checkpoint(&path).unwrap(), trained);
    let pre = load_pretrained(&path, "run-7").unwrap();
    assert_eq!(pre.weights(), trained.weights());
    assert_eq!(pre.init_snapshot(), trained.weights());
    assert_eq!(pre.init_kind(), &InitKind::PretrainedFrom { run_id: "run-7".into() });
}

#[test]
fn line_search_yields_monotone_loss() {
    let t = task(10, 4, 8);
    let net = init_deep(&[4, 16, 16, 1], &Scale::He { gain: 1.5 }, 8).unwrap();
    let (_, trace, eta) =
        train_deep_line_search(&net, &t, &TrainConfig::new(2.0, 200).record_every(10), DeviationRef::Init, 20)
            .unwrap();
    assert!(eta <= 2.0 && eta > 0.0);
    let losses = trace.losses();
    assert!(losses.windows(2).all(|w| w[1] <= w[0]));
    assert!(losses.last().unwrap() < &losses[0]);
}

#[test]
fn deep_training_is_deterministic_and_pure() {
    let t = task(8, 3, 4);
    let net = init_deep(&[3, 10, 10, 1], &Scale::He { gain: 1.0 }, 4).unwrap();
    let cfg = TrainConfig::new(0.05, 30).record_every(3);
    let a = train_deep(&net, &t, &cfg, DeviationRef::Init).unwrap();
    let b = train_deep(&net, &t, &cfg, DeviationRef::Init).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(net.step(), 0);
    let (same, _) = train_deep(&net, &t, &TrainConfig::new(0.0, 10), DeviationRef::Init).unwrap();
    assert_eq!(same.weights(), net.weights());
}

#[test]
fn grad_report_has_one_entry_per_layer() {
    let t = task(6, 3, 6);
    let net = init_deep(&[3, 7, 7, 7, 1], &Scale::He { gain: 1.0 }, 6).unwrap();
    let rep = net.layer_grad_scale(t.inputs(), t.labels()).unwrap();
    assert_eq!(rep.layers.len(), 4);
    let bw = net.forward_backward(t.inputs(), t.labels()).unwrap();
    for (k, l) in rep.layers.iter().enumerate() {
        assert!(l.grad_fro_norm >= 0.0 && l.activation_grad_norm >= 0.0);
        let ratio = bw.activation_grads[k].norm() / bw.activation_grads[k + 1].norm();
        assert!((l.scaling_ratio - ratio).abs() < 1e-12);
    }
    let logs: Vec<f64> = rep.layers.iter().map(|l| l.scaling_ratio.ln()).collect();
    let gm = (logs.iter().sum::<f64>() / 4.0).exp();
    assert!((rep.geometric_mean_ratio() - gm).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_matches_naive_mlp(seed in any::<u64>(), h1 in 1usize..8, h2 in 1usize..8) {
        let t = task(4, 3, seed % 500);
        let net = init_deep(&[3, h1, h2, 1], &Scale::Fixed { scale: 0.8 }, seed).unwrap();
        let layers = layers_as_vecs(&net);
        let u = net.forward(t.inputs()).unwrap();
        for (i, xi) in rows(t.inputs()).iter().enumerate() {
            prop_assert!((u[i] - mlp_forward(&layers, xi)).abs() < 1e-12);
        }
    }

    #[test]
    fn transport_holds_at_every_training_step(seed in 0u64..50) {
        let t = task(5, 3, seed);
        let net = init_deep(&[3, 6, 6, 1], &Scale::He { gain: 1.0 }, seed).unwrap();
        let mut cur = net;
        for _ in 0..5 {
            let bw = cur.forward_backward(t.inputs(), t.labels()).unwrap();
            for k in 1..=cur.depth() {
                let delta = if k < cur.depth() {
                    bw.activation_grads[k].component_mul(&bw.masks[k - 1])
                } else {
                    bw.activation_grads[k].clone()
                };
                let back = delta * cur.weights()[k - 1].transpose();
                prop_assert!((back - &bw.activation_grads[k - 1]).amax() < 1e-12);
            }
            cur = train_deep(&cur, &t, &TrainConfig::new(0.05, 1), DeviationRef::Init).unwrap().0;
        }
    }
}
