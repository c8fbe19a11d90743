use editlab_core::numerics::{adam_step, derive_seed, grad_check, Activation, AdamConfig, AdamState, Checkpoint, Mlp, Rng};
use proptest::prelude::*;

/// Straight-line 2-8-2 tanh network on a flat parameter slice laid out as
/// `W0 (8x2, row-major), b0, W1 (2x8), b1`.
fn straight_line(p: &[f64], x: [f64; 2]) -> [f64; 2] {
    let mut h = [0.0; 8];
    for (o, hv) in h.iter_mut().enumerate() {
        *hv = (p[2 * o] * x[0] + p[2 * o + 1] * x[1] + p[16 + o]).tanh();
    }
    let mut y = [0.0; 2];
    for (o, yv) in y.iter_mut().enumerate() {
        *yv = p[40 + o];
        for (i, hi) in h.iter().enumerate() {
            *yv += p[24 + 8 * o + i] * hi;
        }
    }
    y
}

/// Smallest |pre-activation| over the hidden layers of a ReLU net with layout `W_k, b_k, ...`.
fn min_hidden_preactivation(p: &[f64], widths: &[usize], x: &[f64]) -> f64 {
    let mut h = x.to_vec();
    let mut off = 0;
    let mut min = f64::INFINITY;
    for k in 0..widths.len() - 2 {
        let (n_in, n_out) = (widths[k], widths[k + 1]);
        let z: Vec<f64> = (0..n_out)
            .map(|o| p[off + n_in * n_out + o] + (0..n_in).map(|i| p[off + o * n_in + i] * h[i]).sum::<f64>())
            .collect();
        off += n_in * n_out + n_out;
        min = z.iter().fold(min, |m, v| m.min(v.abs()));
        h = z.iter().map(|v| v.max(0.0)).collect();
    }
    min
}

fn seeded_net() -> Mlp {
    let mut rng = Rng::new(42);
    let mut net = Mlp::init(&[2, 8, 2], Activation::Tanh, &mut rng).unwrap();
    for b in net.bias_mut(0) {
        *b = rng.uniform_range(-0.5, 0.5);
    }
    for b in net.bias_mut(1) {
        *b = rng.uniform_range(-0.5, 0.5);
    }
    net
}

#[test]
fn seeded_network_matches_straight_line_arithmetic() {
    let net = seeded_net();
    assert_eq!(net.num_params(), 42);
    let want = straight_line(net.params().values(), [0.5, -0.5]);
    let got = net.forward(&[0.5, -0.5]).unwrap();
    assert!((got[0] - want[0]).abs() < 1e-14 && (got[1] - want[1]).abs() < 1e-14, "{got:?} vs {want:?}");
}

#[test]
fn dimension_mismatch_is_rejected() {
    assert!(seeded_net().forward(&[1.0, 2.0, 3.0]).is_err());
}

#[test]
fn checkpoint_rejects_truncated_parameters() {
    let mut ckpt = Checkpoint::from_network("test", &seeded_net(), 42);
    ckpt.params.pop();
    assert!(Checkpoint::from_json(&ckpt.to_json()).and_then(|c| c.network()).is_err());
}

proptest! {
    #[test]
    fn forward_agrees_with_independent_implementation(seed in any::<u64>(), x in -3.0..3.0f64, y in -3.0..3.0f64) {
        let mut rng = Rng::new(seed);
        let mut net = Mlp::init(&[2, 8, 2], Activation::Tanh, &mut rng).unwrap();
        for v in net.params_mut().values_mut() {
            *v += 0.1 * rng.normal();
        }
        let want = straight_line(net.params().values(), [x, y]);
        let got = net.forward(&[x, y]).unwrap();
        prop_assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences(seed in any::<u64>(), relu in any::<bool>()) {
        let mut rng = Rng::new(seed);
        let act = if relu { Activation::Relu } else { Activation::Tanh };
        let net = Mlp::init(&[3, 5, 4, 2], act, &mut rng).unwrap();
        let input = [rng.normal(), rng.normal(), rng.normal()];
        let cot = [rng.normal(), rng.normal()];
        let loss = |p: &[f64]| {
            let m = Mlp::from_parameters(net.widths(), act, p.to_vec()).unwrap();
            let trace = m.forward_trace(&input).unwrap();
            let out = trace.output();
            let mut g = vec![0.0; p.len()];
            m.backward_into(&trace, &cot, &mut g, None).unwrap();
            (out[0] * cot[0] + out[1] * cot[1], g)
        };
        // Finite differences are meaningless across a ReLU kink.
        prop_assume!(!relu || min_hidden_preactivation(net.params().values(), net.widths(), &input) > 1e-3);
        let r = grad_check(loss, net.params().values(), 1e-5);
        prop_assert!(r.max_relative_error < if relu { 1e-2 } else { 1e-4 }, "{:?}", r);
    }

    #[test]
    fn checkpoint_json_round_trip_is_bit_exact(seed in any::<u64>(), h in 1usize..12) {
        let mut rng = Rng::new(seed);
        let mut net = Mlp::init(&[4, h, 3], Activation::Tanh, &mut rng).unwrap();
        for v in net.params_mut().values_mut() {
            *v *= 1.0 + 1e-9 * rng.normal();
        }
        let ckpt = Checkpoint::from_network("test", &net, seed);
        let back = Checkpoint::from_json(&ckpt.to_json()).unwrap();
        prop_assert_eq!(&back, &ckpt);
        prop_assert_eq!(back.network().unwrap(), net);
    }

    #[test]
    fn rng_streams_are_reproducible_and_labelled(seed in any::<u64>(), label in "[a-z]{1,8}") {
        let a = Rng::new(seed);
        let mut f1 = a.fork(&label);
        let mut f2 = a.fork(&label);
        let mut other = a.fork(&format!("{label}x"));
        let x: Vec<u64> = (0..4).map(|_| f1.next_u64()).collect();
        let y: Vec<u64> = (0..4).map(|_| f2.next_u64()).collect();
        let z: Vec<u64> = (0..4).map(|_| other.next_u64()).collect();
        prop_assert_eq!(&x, &y);
        prop_assert_ne!(&x, &z);
        prop_assert_ne!(derive_seed(seed, 0), derive_seed(seed, 1));
    }

    #[test]
    fn adam_first_step_moves_each_coordinate_by_lr(g in prop::collection::vec(prop_oneof![-10.0..-1e-3f64, 1e-3..10.0f64], 1..20), lr in 1e-4..1e-1f64) {
        let mut p = vec![0.0; g.len()];
        let mut st = AdamState::new(g.len(), AdamConfig::default());
        adam_step(&mut p, &g, &mut st, lr).unwrap();
        for (pi, gi) in p.iter().zip(&g) {
            prop_assert!((pi + lr * gi.signum()).abs() < 1e-3 * lr);
        }
    }
}
