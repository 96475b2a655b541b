use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use visracer_nn::io::{decode, encode, read_network, write_network};
use visracer_nn::{depth_to_space, mse_loss, space_to_depth, Adam, AdamConfig, LayerSpec, Network, Tensor};

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

fn conv_net(seed: u64) -> Network {
    Network::new(
        vec![8, 8, 1],
        vec![
            LayerSpec::SpaceToDepth { block: 2 },
            LayerSpec::DepthwiseSeparableConv {
                in_channels: 4,
                out_channels: 6,
                kernel: 3,
                stride: 2,
            },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { inputs: 24, outputs: 5 },
            LayerSpec::Tanh,
        ],
        seed,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn space_to_depth_matches_index_formula(n in 1usize..3, h in 1usize..4, w in 1usize..4, c in 1usize..4, b in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (h * b, w * b);
        let x = random_tensor(vec![n, h, w, c], &mut rng);
        let y = space_to_depth(&x, b).unwrap();
        let (ho, wo, co) = (h / b, w / b, c * b * b);
        prop_assert_eq!(y.shape(), &[n, ho, wo, co][..]);
        for i in 0..n {
            for yy in 0..h {
                for xx in 0..w {
                    for ch in 0..c {
                        let src = x.data()[((i * h + yy) * w + xx) * c + ch];
                        let dst = y.data()[((i * ho + yy / b) * wo + xx / b) * co + ch * b * b + (yy % b) * b + xx % b];
                        prop_assert_eq!(src, dst);
                    }
                }
            }
        }
        prop_assert_eq!(depth_to_space(&y, b).unwrap(), x);
    }

    #[test]
    fn weights_roundtrip_bit_exact(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = conv_net(seed);
        for p in net.params_mut() {
            *p += rng.random_range(-0.1f32..0.1);
        }
        let bytes = encode(&net);
        let (back, used) = decode(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back.params(), net.params());
        let x = random_tensor(vec![10, 8, 8, 1], &mut rng);
        prop_assert_eq!(net.predict(&x).unwrap(), back.predict(&x).unwrap());
    }
}

#[test]
fn stream_roundtrip_and_corruption() {
    let net = conv_net(3);
    let mut buf = Vec::new();
    write_network(&mut buf, &net).unwrap();
    let back = read_network(&mut buf.as_slice()).unwrap();
    assert_eq!(back.params(), net.params());
    for i in [0, 9, buf.len() / 2, buf.len() - 1] {
        let mut bad = buf.clone();
        bad[i] ^= 0x10;
        assert!(read_network(&mut bad.as_slice()).is_err(), "flip at {i} accepted");
    }
    assert!(read_network(&mut &buf[..buf.len() - 3]).is_err());
}

// independent central differences in f64 accumulation on the loss
// sum(up * f(x)), compared with the reverse-mode parameter gradient
#[test]
fn parameter_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = conv_net(5);
    let x = random_tensor(vec![3, 8, 8, 1], &mut rng);
    let up = random_tensor(vec![3, 5], &mut rng);
    let (_, acts) = net.forward(&x).unwrap();
    let g = net.backward_params(&acts, &up).unwrap();
    let loss = |n: &Network| -> f64 {
        let y = n.predict(&x).unwrap();
        y.data().iter().zip(up.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
    };
    let h = 1e-2f32;
    let mut worst = 0.0f64;
    for i in (0..net.param_count()).step_by(3) {
        let mut p = net.clone();
        p.params_mut()[i] += h;
        let lp = loss(&p);
        p.params_mut()[i] -= 2.0 * h;
        let lm = loss(&p);
        let num = (lp - lm) / (2.0 * h as f64);
        let err = (num - g[i] as f64).abs() / (num.abs() + (g[i] as f64).abs()).max(1e-2);
        worst = worst.max(err);
    }
    // ReLU kinks inside the +-h window account for the rare larger errors
    assert!(worst < 2e-2, "worst relative error {worst}");
}

#[test]
fn mse_loss_matches_hand_computation() {
    let p = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 5.0]).unwrap();
    let t = Tensor::new(vec![2, 2], vec![0.0, 2.0, 1.0, 4.0]).unwrap();
    let (l, g) = mse_loss(&p, &t).unwrap();
    // (1 + 0 + 4 + 1) / 2
    assert!((l - 3.0).abs() < 1e-6);
    assert_eq!(g.data(), &[1.0, 0.0, 2.0, 1.0]);
}

#[test]
fn adam_first_step_has_magnitude_lr() {
    let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
    let mut opt = Adam::new(3, cfg);
    let mut p = [1.0f32, -2.0, 0.5];
    opt.step(&mut p, &[10.0, -0.001, 3.0]);
    // bias-corrected m/sqrt(v) = sign(g) on the first step
    for (after, before, s) in [(p[0], 1.0, 1.0), (p[1], -2.0, -1.0), (p[2], 0.5, 1.0)] {
        assert!((before - after - 0.01 * s).abs() < 1e-5, "{before} -> {after}");
    }
}

#[test]
fn dense_regression_converges() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut net = Network::new(vec![3], vec![LayerSpec::Dense { inputs: 3, outputs: 1 }], 1).unwrap();
    let mut opt = Adam::new(net.param_count(), AdamConfig { lr: 0.05, ..AdamConfig::default() });
    let x = random_tensor(vec![64, 3], &mut rng);
    let y: Vec<f32> = (0..64).map(|i| 2.0 * x.row(i)[0] - x.row(i)[1] + 0.5 * x.row(i)[2] + 0.3).collect();
    let y = Tensor::new(vec![64, 1], y).unwrap();
    let mut last = f32::INFINITY;
    for _ in 0..1000 {
        let (out, acts) = net.forward(&x).unwrap();
        let (l, g) = mse_loss(&out, &y).unwrap();
        let grads = net.backward_params(&acts, &g).unwrap();
        opt.step(net.params_mut(), &grads);
        last = l;
    }
    assert!(last < 1e-4, "loss {last}");
    // weights [in][out] then bias
    let p = net.params();
    for (a, b) in p.iter().zip([2.0, -1.0, 0.5, 0.3]) {
        assert!((a - b).abs() < 1e-2, "{p:?}");
    }
}
