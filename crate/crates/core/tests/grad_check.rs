use proptest::prelude::*;
#[path = "support/ext_fd.rs"]
mod ext_fd;

use ext_fd::ext_fd_gradient;
use rhn_core::grad::{
    bptt, clip_global_norm, fd_derivative, fd_gradient, fd_gradient_with, forward_loss, max_relative_error, FdConfig,
    Gradients,
};
use rhn_core::numerics::{gaussian_matrix, Matrix, RngStream};
use rhn_core::{Batch, CellSpec, DropoutMasks, Family, InitScheme, InputKind, LossKind, Network, NetworkSpec, StepData};

const VOCAB: usize = 4;

fn randomize(net: &mut Network, rng: &mut RngStream, std: f64) {
    for t in net.tensors_mut() {
        for v in t.data.iter_mut() {
            *v = std * rng.standard_normal();
        }
    }
}

fn symbol_batch(rng: &mut RngStream, steps: usize, b: usize) -> Batch {
    let draw = |rng: &mut RngStream| (0..b).map(|_| rng.below(VOCAB)).collect::<Vec<_>>();
    let inputs = (0..steps).map(|_| StepData::Symbols(draw(rng))).collect();
    let targets = (0..steps).map(|_| StepData::Symbols(draw(rng))).collect();
    Batch::new(inputs, targets)
}

fn network(family: Family, n: usize, depth: usize, coupled: bool, rng: &mut RngStream) -> Network {
    let mut cell = CellSpec::rhn(3, n, depth).with_family(family);
    cell.coupled_gates = coupled;
    let spec = NetworkSpec {
        cell,
        input: InputKind::Symbols { vocab: VOCAB },
        tied: false,
    };
    let mut net = spec.init(InitScheme::Gaussian { std: 0.1 }, rng).unwrap();
    randomize(&mut net, rng, 0.5);
    net
}

fn variants() -> Vec<(Family, usize, bool)> {
    let mut v = vec![(Family::Rnn, 1, true)];
    for depth in [1, 2, 5] {
        v.push((Family::Rhn, depth, true));
        v.push((Family::Rhn, depth, false));
        v.push((Family::Dt, depth, true));
        v.push((Family::Dts, depth, true));
    }
    v
}

#[test]
fn bptt_matches_finite_differences_for_every_family() {
    let mut rng = RngStream::new(31);
    let mut worst = 0.0f64;
    for (family, depth, coupled) in variants() {
        for n in [2, 5] {
            for steps in [1, 3, 7] {
                let net = network(family, n, depth, coupled, &mut rng);
                let batch = symbol_batch(&mut rng, steps, 2);
                let s0 = gaussian_matrix(&mut rng, 2, n, 0.5).unwrap();
                let out = bptt(&net, &batch, LossKind::SoftmaxXent, &s0, None).unwrap();
                let fd = ext_fd_gradient(&net, &batch, &s0, None);
                let (err, at) = max_relative_error(&out.grads, &fd);
                assert!(err < 1e-6, "{family} L={depth} coupled={coupled} n={n} T={steps}: {err:e} at {at}");
                worst = worst.max(err);
            }
        }
    }
    eprintln!("worst relative error {worst:e}");
}

#[test]
fn bptt_matches_fd_with_dropout_masks() {
    let mut rng = RngStream::new(8);
    for (family, depth, coupled) in variants() {
        let n = 3;
        let net = network(family, n, depth, coupled, &mut rng);
        let batch = symbol_batch(&mut rng, 4, 2);
        let s0 = gaussian_matrix(&mut rng, 2, n, 0.5).unwrap();
        let mask = |rng: &mut RngStream, r, c| {
            let mut m = Matrix::zeros(r, c);
            m.as_mut_slice().iter_mut().for_each(|v| *v = if rng.bernoulli(0.7) { 1.0 / 0.7 } else { 0.0 });
            m
        };
        let masks = DropoutMasks {
            embed: Some(mask(&mut rng, 2, VOCAB)),
            input: Some(mask(&mut rng, 2, 3)),
            hidden: (0..depth).map(|_| mask(&mut rng, 2, n)).collect(),
            output: Some(mask(&mut rng, 2, n)),
        };
        let out = bptt(&net, &batch, LossKind::SoftmaxXent, &s0, Some(&masks)).unwrap();
        let fd = ext_fd_gradient(&net, &batch, &s0, Some(&masks));
        let (err, at) = max_relative_error(&out.grads, &fd);
        assert!(err < 1e-6, "{family} L={depth}: {err:e} at {at}");
    }
}

#[test]
fn tied_heads_and_state_gradient() {
    let mut rng = RngStream::new(12);
    let mut cell = CellSpec::rhn(4, 4, 3);
    cell.transform_bias_init = -1.0;
    let spec = NetworkSpec {
        cell,
        input: InputKind::Symbols { vocab: VOCAB },
        tied: true,
    };
    let mut net = spec.init(InitScheme::Gaussian { std: 0.1 }, &mut rng).unwrap();
    randomize(&mut net, &mut rng, 0.5);
    let batch = symbol_batch(&mut rng, 5, 3);
    let s0 = gaussian_matrix(&mut rng, 3, 4, 0.5).unwrap();
    let out = bptt(&net, &batch, LossKind::SoftmaxXent, &s0, None).unwrap();
    let fd = ext_fd_gradient(&net, &batch, &s0, None);
    assert!(max_relative_error(&out.grads, &fd).0 < 1e-6);

    let eps = 1e-5;
    for i in 0..3 {
        for j in 0..4 {
            let f = |v: f64| {
                let mut s = s0.clone();
                s[(i, j)] = v;
                forward_loss(&net, &batch, LossKind::SoftmaxXent, &s, None).unwrap().loss
            };
            let num = fd_derivative(f, s0[(i, j)], eps);
            let ana = out.d_state0[(i, j)];
            assert!((num - ana).abs() / (num.abs() + ana.abs() + 1e-12) < 1e-6);
        }
    }
}

#[test]
fn bernoulli_frames_gradient() {
    let mut rng = RngStream::new(77);
    let d = 5;
    for family in [Family::Rhn, Family::Dt, Family::Rnn] {
        let spec = NetworkSpec {
            cell: CellSpec::rhn(d, 4, 2).with_family(family),
            input: InputKind::Frames { dim: d },
            tied: false,
        };
        let mut net = spec.init(InitScheme::Gaussian { std: 0.1 }, &mut rng).unwrap();
        randomize(&mut net, &mut rng, 0.5);
        let frame = |rng: &mut RngStream| {
            let mut m = Matrix::zeros(2, d);
            m.as_mut_slice().iter_mut().for_each(|v| *v = if rng.bernoulli(0.3) { 1.0 } else { 0.0 });
            m
        };
        let inputs: Vec<_> = (0..4).map(|_| StepData::Frames(frame(&mut rng))).collect();
        let targets: Vec<_> = (0..4).map(|_| StepData::Frames(frame(&mut rng))).collect();
        let mut batch = Batch::new(inputs, targets);
        batch.valid = Some(vec![vec![true, true], vec![true, true], vec![true, false], vec![false, false]]);
        let s0 = Matrix::zeros(2, 4);
        let out = bptt(&net, &batch, LossKind::BernoulliNll, &s0, None).unwrap();
        assert_eq!(out.count, 5);
        let fd = ext_fd_gradient(&net, &batch, &s0, None);
        let (err, at) = max_relative_error(&out.grads, &fd);
        assert!(err < 1e-6, "{family}: {err:e} at {at}");
    }
}

#[test]
fn f64_central_and_richardson_oracles_agree_where_resolvable() {
    // The library's own f64 oracle, checked against the extended one on an
    // instance whose gradients are all comfortably above its noise floor.
    let mut rng = RngStream::new(21);
    let net = network(Family::Rhn, 3, 2, true, &mut rng);
    let batch = symbol_batch(&mut rng, 3, 2);
    let s0 = gaussian_matrix(&mut rng, 2, 3, 0.5).unwrap();
    let ext = ext_fd_gradient(&net, &batch, &s0, None);
    let central = fd_gradient(&net, &batch, LossKind::SoftmaxXent, &s0, FdConfig::default()).unwrap();
    let rich = fd_gradient(&net, &batch, LossKind::SoftmaxXent, &s0, FdConfig::richardson(1e-3)).unwrap();
    let masked = fd_gradient_with(&net, FdConfig::default(), |p| {
        forward_loss(p, &batch, LossKind::SoftmaxXent, &s0, None).map(|o| o.loss)
    })
    .unwrap();
    assert_eq!(masked, central);
    for (e, (c, r)) in ext.0.tensors().iter().zip(central.0.tensors().iter().zip(rich.0.tensors())) {
        for i in 0..e.data.len() {
            assert!((e.data[i] - c.data[i]).abs() < 1e-9, "{}", e.name);
            assert!((e.data[i] - r.data[i]).abs() < 1e-11, "{}", e.name);
        }
    }
}

#[test]
fn extended_oracle_kernels_are_accurate() {
    ext_fd::self_check();
}

#[test]
fn empty_batch_gives_zero_loss_and_gradient() {
    let mut rng = RngStream::new(1);
    let net = network(Family::Rhn, 3, 2, true, &mut rng);
    let s0 = Matrix::zeros(2, 3);
    let out = bptt(&net, &Batch::default(), LossKind::SoftmaxXent, &s0, None).unwrap();
    assert_eq!(out.loss, 0.0);
    assert_eq!(out.grads.global_norm(), 0.0);
    let fd = fd_gradient(&net, &Batch::default(), LossKind::SoftmaxXent, &s0, FdConfig::default()).unwrap();
    assert_eq!(fd.global_norm(), 0.0);
}

#[test]
fn balanced_two_symbol_corpus_starts_at_ln2() {
    let mut rng = RngStream::new(3);
    let spec = NetworkSpec {
        cell: CellSpec::rhn(2, 3, 2),
        input: InputKind::Symbols { vocab: 2 },
        tied: false,
    };
    let mut net = spec.init(InitScheme::Gaussian { std: 0.3 }, &mut rng).unwrap();
    net.heads.projection.as_mut().unwrap().fill(0.0);
    let seq: Vec<usize> = (0..9).map(|i| i % 2).collect();
    let batch = Batch::new(
        seq[..8].iter().map(|&s| StepData::Symbols(vec![s])).collect(),
        seq[1..].iter().map(|&s| StepData::Symbols(vec![s])).collect(),
    );
    let out = bptt(&net, &batch, LossKind::SoftmaxXent, &Matrix::zeros(1, 3), None).unwrap();
    assert!((out.loss / out.count as f64 - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn fd_matches_closed_form_scalar_derivative() {
    // One-unit linear chain y = w·x with loss (y - 1)²: dL/dw = 2x(wx - 1).
    let (w, x) = (0.7, 1.3);
    let exact = 2.0 * x * (w * x - 1.0);
    for eps in [1e-3, 1e-4, 1e-5] {
        let num = fd_derivative(|w| (w * x - 1.0f64).powi(2), w, eps);
        assert!((num - exact).abs() < 10.0 * eps * eps + 1e-10);
    }
}

#[test]
fn fd_rejects_bad_eps_and_is_deterministic() {
    let mut rng = RngStream::new(4);
    let net = network(Family::Rhn, 2, 1, true, &mut rng);
    let batch = symbol_batch(&mut rng, 2, 1);
    let s0 = Matrix::zeros(1, 2);
    assert!(fd_gradient(&net, &batch, LossKind::SoftmaxXent, &s0, FdConfig { eps: 1e-2, ..FdConfig::default() }).is_err());
    let a = fd_gradient(&net, &batch, LossKind::SoftmaxXent, &s0, FdConfig::default()).unwrap();
    let b = fd_gradient(&net, &batch, LossKind::SoftmaxXent, &s0, FdConfig::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn clip_examples() {
    let mut rng = RngStream::new(5);
    let net = network(Family::Rhn, 2, 1, true, &mut rng);
    let mut g = Gradients::zeros_like(&net);
    g.0.heads.bias.as_mut_slice()[0] = 20.0;
    assert_eq!(clip_global_norm(&mut g, 10.0).unwrap(), 0.5);
    assert_eq!(g.global_norm(), 10.0);
    let mut g = Gradients::zeros_like(&net);
    g.0.heads.bias.as_mut_slice()[0] = 5.0;
    let before = g.clone();
    assert_eq!(clip_global_norm(&mut g, 10.0).unwrap(), 1.0);
    assert_eq!(g, before);
    let mut z = Gradients::zeros_like(&net);
    assert_eq!(clip_global_norm(&mut z, 10.0).unwrap(), 1.0);
    assert!(clip_global_norm(&mut z, 0.0).is_err());
}

#[test]
fn saturated_carry_preserves_state_gradient() {
    // With every transform gate shut, dy(T)/dy(0) is the identity for T ≤ 100.
    let mut rng = RngStream::new(6);
    for depth in [1, 3] {
        let mut cell = CellSpec::rhn(3, 4, depth);
        cell.transform_bias_init = -40.0;
        let spec = NetworkSpec {
            cell,
            input: InputKind::Symbols { vocab: VOCAB },
            tied: false,
        };
        let net = spec.init(InitScheme::Gaussian { std: 0.5 }, &mut rng).unwrap();
        let net0 = net;
        let steps = 100;
        let mut s = gaussian_matrix(&mut rng, 1, 4, 0.5).unwrap();
        let mut caches = Vec::new();
        for _ in 0..steps {
            let x = gaussian_matrix(&mut rng, 1, 3, 1.0).unwrap();
            let (y, c) = net0.cell.forward_batch(&x, &s, &[]).unwrap();
            caches.push(c);
            s = y;
        }
        let v = gaussian_matrix(&mut rng, 1, 4, 1.0).unwrap();
        let mut ds = v.clone();
        let mut sink = net0.cell.clone();
        for c in caches.iter().rev() {
            ds = net0.cell.backward_batch(c, &ds, &mut sink).unwrap().0;
        }
        for j in 0..4 {
            assert!((ds[(0, j)] - v[(0, j)]).abs() <= 1e-9 * (1.0 + v[(0, j)].abs()), "depth {depth}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn gradient_is_additive_over_batches(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let net = network(Family::Rhn, 3, 2, true, &mut rng);
        let a = symbol_batch(&mut rng, 3, 1);
        let b = symbol_batch(&mut rng, 4, 1);
        let s0 = gaussian_matrix(&mut rng, 1, 3, 0.5).unwrap();
        let ga = bptt(&net, &a, LossKind::SoftmaxXent, &s0, None).unwrap();
        let gb = bptt(&net, &b, LossKind::SoftmaxXent, &s0, None).unwrap();
        let mut sum = ga.grads.clone();
        sum.add_assign(&gb.grads);
        // Sum of the two losses as one objective, via a two-stream batch of equal length.
        let pad = |bt: &Batch, len: usize| {
            let mut v: Vec<bool> = vec![true; bt.len()];
            v.resize(len, false);
            v
        };
        let len = 4;
        let extend = |bt: &Batch| -> (Vec<usize>, Vec<usize>) {
            let mut x: Vec<usize> = bt.inputs.iter().map(|s| match s { StepData::Symbols(v) => v[0], _ => unreachable!() }).collect();
            let mut y: Vec<usize> = bt.targets.iter().map(|s| match s { StepData::Symbols(v) => v[0], _ => unreachable!() }).collect();
            x.resize(len, 0);
            y.resize(len, 0);
            (x, y)
        };
        let (xa, ya) = extend(&a);
        let (xb, yb) = extend(&b);
        let (va, vb) = (pad(&a, len), pad(&b, len));
        let mut joint = Batch::new(
            (0..len).map(|t| StepData::Symbols(vec![xa[t], xb[t]])).collect(),
            (0..len).map(|t| StepData::Symbols(vec![ya[t], yb[t]])).collect(),
        );
        joint.valid = Some((0..len).map(|t| vec![va[t], vb[t]]).collect());
        let mut s2 = Matrix::zeros(2, 3);
        s2.row_mut(0).copy_from_slice(s0.row(0));
        s2.row_mut(1).copy_from_slice(s0.row(0));
        let gj = bptt(&net, &joint, LossKind::SoftmaxXent, &s2, None).unwrap();
        for (x, y) in gj.grads.0.tensors().iter().zip(sum.0.tensors()) {
            for (p, q) in x.data.iter().zip(y.data) {
                prop_assert!((p - q).abs() <= 1e-12 * (1.0 + q.abs()), "{} {p} {q}", x.name);
            }
        }
    }

    #[test]
    fn clipped_norm_never_exceeds_limit(seed in any::<u64>(), limit in 1e-3f64..100.0) {
        let mut rng = RngStream::new(seed);
        let net = network(Family::Dt, 3, 2, true, &mut rng);
        let mut g = Gradients::zeros_like(&net);
        randomize(&mut g.0, &mut rng, 10.0);
        clip_global_norm(&mut g, limit).unwrap();
        prop_assert!(g.global_norm() <= limit * (1.0 + 1e-12));
    }
}
