use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn t(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Central differences over every parameter scalar.
fn numeric_grads(params: &Params, loss: &dyn Fn(&Params) -> f64, eps: f64) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    let mut work = params.clone();
    for (name, tensor) in params.iter() {
        let mut g = Vec::with_capacity(tensor.len());
        for i in 0..tensor.len() {
            let orig = tensor.data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + eps;
            let up = loss(&work);
            work.get_mut(name).unwrap().data_mut()[i] = orig - eps;
            let down = loss(&work);
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            g.push((up - down) / (2.0 * eps));
        }
        out.push((name.clone(), g));
    }
    out
}

fn max_rel_error(analytic: &GradRecord, numeric: &[(String, Vec<f64>)]) -> f64 {
    let mut worst: f64 = 0.0;
    for (name, num) in numeric {
        let a = analytic.get(name).unwrap().data();
        for (x, y) in a.iter().zip(num) {
            let denom = x.abs().max(y.abs()).max(1e-6);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}

fn check(params: &Params, build: &dyn Fn(&mut Tape<'_>) -> Var) -> f64 {
    let loss = |p: &Params| {
        let mut tape = Tape::new(p);
        let l = build(&mut tape);
        tape.value(l).unwrap().data()[0]
    };
    let mut tape = Tape::new(params);
    let l = build(&mut tape);
    let analytic = tape.backward(l).unwrap();
    max_rel_error(&analytic, &numeric_grads(params, &loss, 1e-5))
}

#[test]
fn linear_identity_and_hand_values() {
    let x = Tensor::vector(vec![0.3, -2.0]);
    let y = forward_linear(&Tensor::identity(2), &Tensor::zeros(&[2]), &x).unwrap();
    assert_eq!(y, x);
    let w = t(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
    let y = forward_linear(&w, &Tensor::vector(vec![1.0, 1.0]), &Tensor::vector(vec![1.0, 1.0])).unwrap();
    assert_eq!(y.data(), &[4.0, 8.0]);
    let y = forward_linear(&Tensor::zeros(&[3, 2]), &Tensor::zeros(&[3]), &x).unwrap();
    assert_eq!(y.data(), &[0.0; 3]);
}

#[test]
fn linear_rejects_bad_shapes() {
    let w = Tensor::zeros(&[3, 2]);
    assert!(matches!(
        forward_linear(&w, &Tensor::zeros(&[3]), &Tensor::vector(vec![1.0; 4])),
        Err(NeuralError::ShapeMismatch { .. })
    ));
    assert!(forward_linear(&w, &Tensor::zeros(&[2]), &Tensor::vector(vec![1.0; 2])).is_err());
}

#[test]
fn linear_batches_rows_independently() {
    let w = t(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
    let b = Tensor::vector(vec![1.0, 1.0]);
    let x = t(&[vec![1.0, 1.0], vec![0.0, 1.0]]);
    let y = forward_linear(&w, &b, &x).unwrap();
    assert_eq!(y.shape(), &[2, 2]);
    assert_eq!(y.data(), &[4.0, 8.0, 3.0, 5.0]);
}

fn zero_gru(inp: usize, hidden: usize) -> Params {
    let mut p = Params::new();
    init_gru(&mut p, &mut ChaCha8Rng::seed_from_u64(0), "g", inp, hidden);
    for (_, t) in p.iter_mut() {
        t.data_mut().fill(0.0);
    }
    p
}

#[test]
fn gru_at_zero_params_halves_hidden() {
    let p = zero_gru(3, 4);
    let h = Tensor::vector(vec![0.8, -0.4, 0.2, 1.0]);
    let x = Tensor::vector(vec![5.0, -1.0, 2.0]);
    let out = forward_gru(&p, "g", &h, &x).unwrap();
    for (o, h) in out.data().iter().zip(h.data()) {
        assert_eq!(*o, 0.5 * h);
    }
}

#[test]
fn gru_saturated_update_gate_returns_candidate() {
    let mut p = zero_gru(2, 2);
    p.get_mut("g.xz.b").unwrap().data_mut().fill(50.0);
    *p.get_mut("g.xn.w").unwrap() = t(&[vec![0.5, 0.0], vec![0.0, -1.0]]);
    let x = Tensor::vector(vec![0.4, 0.7]);
    let out = forward_gru(&p, "g", &Tensor::zeros(&[2]), &x).unwrap();
    let want = [(0.2f64).tanh(), (-0.7f64).tanh()];
    for (o, w) in out.data().iter().zip(want) {
        assert!((o - w).abs() < 1e-12, "{o} vs {w}");
    }
}

#[test]
fn gru_outputs_stay_in_open_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10_000 {
        let mut p = Params::new();
        init_gru(&mut p, &mut rng, "g", 3, 4);
        for (_, t) in p.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        let h = random_tensor(&mut rng, &[4], 0.999);
        let x = random_tensor(&mut rng, &[3], 1.0);
        let out = forward_gru(&p, "g", &h, &x).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1.0));
    }
}

#[test]
fn gru_saturation_never_leaves_closed_unit_interval() {
    // With pre-activations near 20, tanh rounds to exactly 1.0 in f64.
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..2_000 {
        let mut p = Params::new();
        init_gru(&mut p, &mut rng, "g", 3, 4);
        for (_, t) in p.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-10.0..10.0));
        }
        let h = random_tensor(&mut rng, &[4], 1.0);
        let x = random_tensor(&mut rng, &[3], 10.0);
        let out = forward_gru(&p, "g", &h, &x).unwrap();
        assert!(out.data().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }
}

#[test]
fn gru_rejects_wrong_hidden_width() {
    let p = zero_gru(3, 4);
    let r = forward_gru(&p, "g", &Tensor::zeros(&[5]), &Tensor::zeros(&[3]));
    assert!(matches!(r, Err(NeuralError::ShapeMismatch { .. })));
}

#[test]
fn sum_of_linear_gradient_replicates_input() {
    let mut p = Params::new();
    p.insert("l.w", t(&[vec![1.0, -1.0, 2.0], vec![0.5, 0.0, 3.0]]));
    let mut tape = Tape::new(&p);
    let x = tape.input(Tensor::vector(vec![2.0, 3.0, -1.0])).unwrap();
    let y = linear_on_tape(&mut tape, "l", x).unwrap();
    let s = tape.sum(y).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get("l.w").unwrap().data(), &[2.0, 3.0, -1.0, 2.0, 3.0, -1.0]);
}

#[test]
fn loss_without_parameters_has_zero_gradients() {
    let mut p = Params::new();
    init_linear(&mut p, &mut ChaCha8Rng::seed_from_u64(1), "l", 3, 2, true);
    let mut tape = Tape::new(&p);
    let x = tape.input(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.len(), 2);
    assert_eq!(g.max_abs(), 0.0);
}

#[test]
fn backward_needs_a_recorded_variable() {
    let p = Params::new();
    let mut other = Tape::new(&p);
    let foreign = other.input(Tensor::vector(vec![1.0])).unwrap();
    let tape = Tape::new(&p);
    assert!(matches!(tape.backward(foreign), Err(NeuralError::NoForwardRecorded)));
}

#[test]
fn backward_requires_scalar_loss() {
    let p = Params::new();
    let mut tape = Tape::new(&p);
    let x = tape.input(Tensor::vector(vec![1.0, 2.0])).unwrap();
    assert!(matches!(tape.backward(x), Err(NeuralError::ShapeMismatch { .. })));
}

#[test]
fn gradcheck_linear_with_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut p = Params::new();
    init_linear(&mut p, &mut rng, "l", 5, 4, true);
    p.get_mut("l.b").unwrap().data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let x = random_tensor(&mut rng, &[3, 5], 1.0);
    let target = random_tensor(&mut rng, &[3, 4], 1.0);
    let err = check(&p, &|tape| {
        let xv = tape.input(x.clone()).unwrap();
        let y = linear_on_tape(tape, "l", xv).unwrap();
        let tv = tape.input(target.clone()).unwrap();
        tape.mse(y, tv).unwrap()
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn gradcheck_message_layer_both_activations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p = Params::new();
    init_message_layer(&mut p, &mut rng, "mp", 3, 4);
    let adj = Adjacency::new(vec![vec![1], vec![0, 2, 3], vec![1], vec![1]]);
    let s = random_tensor(&mut rng, &[4, 3], 1.0);
    let target = random_tensor(&mut rng, &[4, 4], 1.0);
    for act in [Activation::Tanh, Activation::Identity] {
        let err = check(&p, &|tape| {
            let sv = tape.input(s.clone()).unwrap();
            let y = message_on_tape(tape, "mp", sv, &adj, act).unwrap();
            let tv = tape.input(target.clone()).unwrap();
            tape.mse(y, tv).unwrap()
        });
        assert!(err < 1e-4, "{act:?}: {err}");
    }
}

#[test]
fn edgeless_graph_aggregates_to_zero_and_keeps_self_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut p = Params::new();
    init_message_layer(&mut p, &mut rng, "mp", 3, 3);
    let adj = Adjacency::edgeless(5);
    let s = random_tensor(&mut rng, &[5, 3], 1.0);
    let mut tape = Tape::new(&p);
    let sv = tape.input(s).unwrap();
    let agg = tape.aggregate(sv, &adj).unwrap();
    assert!(tape.value(agg).unwrap().data().iter().all(|x| *x == 0.0));
    let out = message_on_tape(&mut tape, "mp", sv, &adj, Activation::Identity).unwrap();
    let own = linear_on_tape(&mut tape, "mp.self", sv).unwrap();
    assert_eq!(tape.value(out).unwrap(), tape.value(own).unwrap());
}

#[test]
fn gradcheck_gru_cell() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut p = Params::new();
    init_gru(&mut p, &mut rng, "g", 3, 5);
    let x = random_tensor(&mut rng, &[2, 3], 1.0);
    let h = random_tensor(&mut rng, &[2, 5], 0.9);
    let target = random_tensor(&mut rng, &[2, 5], 0.9);
    let err = check(&p, &|tape| {
        let xv = tape.input(x.clone()).unwrap();
        let hv = tape.input(h.clone()).unwrap();
        let y = gru_on_tape(tape, "g", xv, hv).unwrap();
        let tv = tape.input(target.clone()).unwrap();
        tape.mse(y, tv).unwrap()
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn gradcheck_gathered_q_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut p = Params::new();
    init_linear(&mut p, &mut rng, "proj", 6, 8, true);
    init_linear(&mut p, &mut rng, "head", 8, 5, true);
    let x = random_tensor(&mut rng, &[4, 6], 1.0);
    let actions = [0, 4, 2, 2];
    let y = random_tensor(&mut rng, &[4, 1], 1.0);
    let err = check(&p, &|tape| {
        let xv = tape.input(x.clone()).unwrap();
        let a = linear_on_tape(tape, "proj", xv).unwrap();
        let a = tape.tanh(a).unwrap();
        let q = linear_on_tape(tape, "head", a).unwrap();
        let picked = tape.gather(q, &actions).unwrap();
        let yv = tape.input(y.clone()).unwrap();
        tape.mse(picked, yv).unwrap()
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut p = Params::new();
    p.insert("x", Tensor::vector(vec![1.0, -2.0]));
    let before = p.clone();
    let mut opt = Adam::new(AdamConfig::default());
    let g = GradRecord::zeros_like(&p);
    for _ in 0..5 {
        opt.step(&mut p, &g).unwrap();
    }
    assert_eq!(p, before);
    assert_eq!(opt.steps(), 5);
}

fn quadratic_grad(p: &Params) -> GradRecord {
    let mut tape = Tape::new(p);
    let x = tape.param("x").unwrap();
    let sq = tape.mul(x, x).unwrap();
    let l = tape.sum(sq).unwrap();
    tape.backward(l).unwrap()
}

#[test]
fn adam_descends_quadratic_monotonically() {
    let mut p = Params::new();
    p.insert("x", Tensor::vector(vec![1.0]));
    let mut opt = Adam::new(AdamConfig { lr: 0.01, ..AdamConfig::default() });
    let mut last = 1.0;
    for _ in 0..100 {
        let g = quadratic_grad(&p);
        opt.step(&mut p, &g).unwrap();
        let x = p.get("x").unwrap().data()[0];
        assert!(x * x < last);
        last = x * x;
    }
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
    for g in [0.3, -7.0, 1e-2] {
        let mut p = Params::new();
        p.insert("x", Tensor::vector(vec![0.0]));
        let mut grads = GradRecord::zeros_like(&p);
        grads.accumulate("x", &[g]).unwrap();
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut p, &grads).unwrap();
        let moved = p.get("x").unwrap().data()[0];
        let want = -1e-3 * g / (g.abs() + 1e-8);
        assert!((moved - want).abs() < 1e-15);
        assert!((moved.abs() - 1e-3).abs() < 1e-8);
    }
}

#[test]
fn adam_rejects_shape_mismatch() {
    let mut p = Params::new();
    p.insert("x", Tensor::vector(vec![0.0, 1.0]));
    let mut q = Params::new();
    q.insert("x", Tensor::vector(vec![0.0]));
    let g = GradRecord::zeros_like(&q);
    assert!(Adam::new(AdamConfig::default()).step(&mut p, &g).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut online = Params::new();
    init_gru(&mut online, &mut rng, "g", 3, 4);
    online.insert("odd", Tensor::vector(vec![-0.0, f64::MIN_POSITIVE / 4.0, f64::MAX, 1e-300]));
    let mut target = online.clone();
    target.get_mut("odd").unwrap().data_mut()[0] = 42.0;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    save_checkpoint(&path, "abc123", &[("online", &online), ("target", &target)]).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.config_hash, "abc123");
    assert_eq!(ck.sets["online"].fingerprint(), online.fingerprint());
    assert_eq!(ck.sets["target"].fingerprint(), target.fingerprint());
    let again = dir.path().join("ck2.bin");
    save_checkpoint(&again, "abc123", &[("online", &ck.sets["online"]), ("target", &ck.sets["target"])]).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn checkpoint_rejects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    let mut p = Params::new();
    p.insert("a", Tensor::vector(vec![1.0, 2.0]));
    save_checkpoint(&path, "h", &[("online", &p)]).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.pop();
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(NeuralError::Format(_))));
    std::fs::write(&path, b"nope").unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn fingerprint_tracks_values() {
    let mut p = Params::new();
    p.insert("a", Tensor::vector(vec![1.0]));
    let f = p.fingerprint();
    assert_eq!(f, p.clone().fingerprint());
    p.get_mut("a").unwrap().data_mut()[0] = 1.0 + f64::EPSILON;
    assert_ne!(f, p.fingerprint());
}
