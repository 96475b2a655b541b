//! Oracle suites behind the `selftest` command and the acceptance criteria
//! that do not need trained artifacts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use visracer_core::baseline::pursuit_action;
use visracer_core::dynamics::{resolve_walls, step, CONTROL_DT};
use visracer_core::geometry::progress_delta;
use visracer_core::{CameraSpec, Pose, Track, VehicleParams, VehicleState};
use visracer_learn::env::{compute_reward, EnvSetup, ObsMode, RacingEnv};
use visracer_learn::phase1::{representation_layers, ReprNetwork};
use visracer_learn::train::{run_trial, Behaviour};
use visracer_learn::SacConfig;
use visracer_nn::gradcheck::{check_network, GradCheckReport};
use visracer_nn::{LayerSpec, Network, Tensor};

use crate::oracle;
use crate::pipeline::identity_standardizer;

/// One named pass/fail line.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!("[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

pub const GEOMETRY_TOL_M: f64 = 5e-3;
pub const CIRCLE_CURVATURE_TOL: f64 = 1e-4;
pub const LAYER_GRAD_TOL: f64 = 1e-4;
pub const STACK_GRAD_TOL: f64 = 1e-3;
pub const REWARD_REL_TOL: f64 = 1e-6;

pub fn geometry_check(poses: usize, seed: u64) -> Check {
    let tracks = oracle::oracle_tracks();
    let e = oracle::geometry_suite(&tracks, poses, seed);
    let passed = e.max_distance_error() <= GEOMETRY_TOL_M
        && e.circle_curvature <= CIRCLE_CURVATURE_TOL
        && e.circle_lateral <= GEOMETRY_TOL_M;
    Check::new(
        "geometry oracles",
        passed,
        format!(
            "{} poses on {} tracks; max err projection s {:.2e} lateral {:.2e} rays {:.2e} min-edge {:.2e} m \
             (tol {GEOMETRY_TOL_M:.0e}); circle |kappa - 1/R| {:.2e} (tol {CIRCLE_CURVATURE_TOL:.0e})",
            e.poses,
            tracks.len(),
            e.projection_s,
            e.projection_lateral,
            e.ray,
            e.min_edge,
            e.circle_curvature
        ),
    )
}

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).expect("shape matches")
}

fn grad_case(layers: Vec<LayerSpec>, input_shape: Vec<usize>, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::new(input_shape.clone(), layers, seed).expect("valid layers");
    for p in net.params_mut() {
        *p += rng.random_range(-0.05f32..0.05);
    }
    let mut xs = vec![2];
    xs.extend(input_shape);
    let x = random_tensor(xs, &mut rng);
    let mut os = vec![2];
    os.extend_from_slice(net.output_shape());
    let up = random_tensor(os, &mut rng);
    check_network(&net, &x, &up, 1e-4, 1e-3, usize::MAX, true)
}

/// `phi_reg . phi_rep` as one network for the finite-difference check.
pub fn full_stack(camera: &CameraSpec, channels: [usize; 3], seed: u64) -> Network {
    let repr = ReprNetwork::new(camera, channels, identity_standardizer(), seed).expect("valid camera");
    let mut layers = representation_layers(camera, channels).expect("valid camera");
    layers.extend_from_slice(repr.phi_reg.layers());
    let mut net = Network::new(repr.phi_rep.input_shape().to_vec(), layers, seed).expect("valid layers");
    let params: Vec<f32> = repr.phi_rep.params().iter().chain(repr.phi_reg.params()).copied().collect();
    net.set_params(&params).expect("parameter count matches");
    net
}

/// Per-layer checks at 1e-4 and the full default-size stack at 1e-3.
pub fn gradient_checks(stack_coords: usize) -> Vec<Check> {
    let cases: Vec<(&str, Vec<LayerSpec>, Vec<usize>)> = vec![
        ("dense", vec![LayerSpec::Dense { inputs: 7, outputs: 5 }], vec![7]),
        (
            "relu",
            vec![LayerSpec::Dense { inputs: 6, outputs: 6 }, LayerSpec::Relu],
            vec![6],
        ),
        ("tanh", vec![LayerSpec::Tanh], vec![9]),
        (
            "separable conv stride 1",
            vec![LayerSpec::DepthwiseSeparableConv {
                in_channels: 3,
                out_channels: 4,
                kernel: 3,
                stride: 1,
            }],
            vec![5, 6, 3],
        ),
        (
            "separable conv stride 2",
            vec![LayerSpec::DepthwiseSeparableConv {
                in_channels: 3,
                out_channels: 4,
                kernel: 3,
                stride: 2,
            }],
            vec![7, 6, 3],
        ),
        (
            "space-to-depth + flatten",
            vec![
                LayerSpec::SpaceToDepth { block: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 24, outputs: 3 },
            ],
            vec![4, 6, 1],
        ),
    ];
    let mut out = Vec::new();
    for (i, (name, layers, shape)) in cases.into_iter().enumerate() {
        let r = grad_case(layers, shape, 10 + i as u64);
        out.push(Check::new(
            &format!("gradient {name}"),
            r.max_rel_error <= LAYER_GRAD_TOL && r.checked > 0,
            format!("max rel err {:.2e} over {} coords (tol {LAYER_GRAD_TOL:.0e})", r.max_rel_error, r.checked),
        ));
    }
    let camera = CameraSpec::default();
    let net = full_stack(&camera, [16, 32, 64], 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // pixel values in the [0, 1] range the embedding sees
    let x = Tensor::new(
        vec![2, camera.height, camera.width, camera.channels],
        (0..2 * camera.pixel_count() * camera.channels).map(|_| rng.random_range(0.0f32..1.0)).collect(),
    )
    .expect("shape matches");
    let up = random_tensor(vec![2, net.output_shape()[0]], &mut rng);
    let r = check_network(&net, &x, &up, 1e-4, 1e-3, stack_coords, false);
    out.push(Check::new(
        "gradient full phi_reg . phi_rep stack",
        r.max_rel_error <= STACK_GRAD_TOL && r.checked > 0,
        format!(
            "{}x{} input, max rel err {:.2e} over {} params, {} kink skips (tol {STACK_GRAD_TOL:.0e})",
            camera.width, camera.height, r.max_rel_error, r.checked, r.skipped_kinks
        ),
    ));
    out
}

/// Runs the baseline around one lap and closes the loop at the start pose;
/// returns the summed progress terms of the reward and the track length.
pub fn lap_progress_sum(track: &Track) -> (f64, f64) {
    let vehicle = VehicleParams::default();
    let pursuit = visracer_core::PursuitParams::default();
    let start = Pose::new(track.point_at(0.0), track.tangent_at(0.0).angle());
    let mut state = VehicleState::with_speed(start, 5.0);
    let mut s_prev = track.project(start.position).expect("on track").s;
    let mut total = 0.0;
    let mut travelled = 0.0;
    loop {
        let a = pursuit_action(track, &state, &pursuit, &vehicle).expect("on track");
        let raw = step(&state, a, &vehicle, CONTROL_DT).expect("finite");
        let (next, _) = resolve_walls(track, &raw, &vehicle);
        let s = track.project(next.pose.position).expect("on track").s;
        // contact flag off: only the progress term is summed
        total += compute_reward(track, s_prev, s, raw.velocity, false, 0.0);
        travelled += progress_delta(track.length(), s_prev, s);
        s_prev = s;
        state = next;
        if travelled > track.length() - 5.0 {
            break;
        }
    }
    // finish on the start line itself
    total += compute_reward(track, s_prev, 0.0, state.velocity, false, 0.0);
    (total, track.length())
}

pub fn reward_conservation_check() -> Check {
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for (name, track) in oracle::oracle_tracks() {
        let (sum, l) = lap_progress_sum(&track);
        let rel = (sum - l).abs() / l;
        worst = worst.max(rel);
        detail.push(format!("{name} {sum:.9}/{l:.9}"));
    }
    Check::new(
        "reward conservation",
        worst <= REWARD_REL_TOL,
        format!("sum of progress / L: {}; max rel err {worst:.2e} (tol {REWARD_REL_TOL:.0e})", detail.join(", ")),
    )
}

/// Records vision-agent transitions and checks every frame timestamp
/// against its state timestamp. Returns `(transitions, violations)`.
pub fn delay_contract(frame_delay: usize, action_repeat: usize, seconds: f64) -> (usize, usize) {
    let track = Track::build(&visracer_core::TrackSpec::default_circuit()).expect("default track builds");
    let camera = oracle::tiny_camera();
    let repr = ReprNetwork::new(&camera, [4, 4, 4], identity_standardizer(), 0).expect("valid camera");
    let setup = EnvSetup {
        track,
        vehicle: VehicleParams::default(),
        camera,
        window: Default::default(),
        c_w: 0.01,
        frame_delay,
        action_repeat,
    };
    let mut env = RacingEnv::new(setup, ObsMode::Vision(Box::new(repr)));
    let cfg = SacConfig {
        trial_duration: seconds,
        frame_delay,
        control_steps_per_env_step: action_repeat,
        ..SacConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let log = run_trial(&mut env, &Behaviour::Uniform, &cfg, &mut rng).expect("trial runs");
    let k = frame_delay as u64;
    let bad = log
        .meta
        .iter()
        .filter(|m| {
            // before the buffer fills, the first frame (tick 0) stands in
            let expected = m.state_tick.saturating_sub(k);
            m.frame_tick != Some(expected)
        })
        .count();
    (log.meta.len(), bad)
}

pub fn delay_check() -> Check {
    let mut total = 0;
    let mut bad = 0;
    for repeat in [1, 6] {
        let (n, b) = delay_contract(4, repeat, 20.0);
        total += n;
        bad += b;
    }
    Check::new(
        "delay contract",
        bad == 0 && total > 0,
        format!("{total} transitions (action repeat 1 and 6), {bad} with frame tick != state tick - 4"),
    )
}

/// Everything `selftest` runs; `quick` shrinks the sample counts.
pub fn run_all(quick: bool) -> Vec<Check> {
    let mut out = vec![geometry_check(if quick { 100 } else { 1000 }, 1)];
    out.extend(gradient_checks(if quick { 64 } else { 400 }));
    out.push(reward_conservation_check());
    out.push(delay_check());
    out
}
