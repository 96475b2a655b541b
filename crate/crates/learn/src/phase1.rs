//! Representation learning: disrupted-baseline data collection and
//! regression of the 27 environment observations from a single frame.

use log::info;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use visracer_core::baseline::{disrupted_action, pursuit_action, NoiseConfig, NoiseState, PursuitParams};
use visracer_core::dynamics::{resolve_walls, step, DynamicsError, CONTROL_DT};
use visracer_core::geometry::{GeometryError, LookaheadWindow, Pose, Track};
use visracer_core::obs::{env_observation, slots, EnvObservation, ObsError, Standardizer, EMBED_DIM, ENV_DIM};
use visracer_core::render::{render_view, CameraSpec, Frame};
use visracer_core::{VehicleParams, VehicleState};
use visracer_nn::{mse_loss, Adam, AdamConfig, LayerSpec, Network, NnError, Tensor};

#[derive(Debug, Error)]
pub enum Phase1Error {
    #[error("baseline made no progress for {seconds} s")]
    BaselineStuck { seconds: f64 },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("frame is {actual:?}, network expects {expected:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Obs(#[from] ObsError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T, E = Phase1Error> = std::result::Result<T, E>;

/// A frame and the raw observation measured at the same tick.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionSample {
    pub frame: Frame,
    pub target: EnvObservation,
    pub tick: u64,
    pub pose: Pose,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StopAfter {
    Samples(usize),
    Laps(usize),
}

/// Everything the collector needs besides the rng.
#[derive(Clone, Copy, Debug)]
pub struct CollectSetup<'a> {
    pub track: &'a Track,
    pub vehicle: &'a VehicleParams,
    pub pursuit: &'a PursuitParams,
    pub camera: &'a CameraSpec,
    pub window: &'a LookaheadWindow,
    pub noise: &'a NoiseConfig,
}

const STUCK_SECONDS: f64 = 30.0;

/// Drives the (optionally disrupted) baseline from arclength `start_s` and
/// records one sample per control tick.
pub fn collect_regression_dataset<R: Rng + ?Sized>(
    setup: &CollectSetup<'_>,
    start_s: f64,
    stop: StopAfter,
    rng: &mut R,
) -> Result<Vec<RegressionSample>> {
    let track = setup.track;
    let s0 = track.wrap_s(start_s);
    let pose = Pose::new(track.point_at(s0), track.tangent_at(s0).angle());
    let mut state = VehicleState::at_rest(pose);
    let mut noise = NoiseState::default();
    let mut out = Vec::new();
    let mut s_prev = s0;
    let mut progress = 0.0;
    let mut best_progress = 0.0;
    let mut last_gain_tick = 0u64;
    loop {
        let done = match stop {
            StopAfter::Samples(n) => out.len() >= n,
            StopAfter::Laps(n) => progress >= n as f64 * track.length(),
        };
        if done {
            return Ok(out);
        }
        let target = env_observation(track, &state, setup.window)?;
        out.push(RegressionSample {
            frame: render_view(track, &state.pose, setup.camera, state.tick),
            target,
            tick: state.tick,
            pose: state.pose,
        });
        let base = pursuit_action(track, &state, setup.pursuit, setup.vehicle)?;
        let action = disrupted_action(base, &mut noise, setup.noise, rng);
        state = resolve_walls(track, &step(&state, action, setup.vehicle, CONTROL_DT)?, setup.vehicle).0;
        let s = track.project(state.pose.position)?.s;
        progress += track.progress_delta(s_prev, s);
        s_prev = s;
        if progress > best_progress + 1.0 {
            best_progress = progress;
            last_gain_tick = state.tick;
        }
        if (state.tick - last_gain_tick) as f64 * CONTROL_DT > STUCK_SECONDS {
            return Err(Phase1Error::BaselineStuck { seconds: STUCK_SECONDS });
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase1Config {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Channels of the three separable-convolution stages.
    pub channels: [usize; 3],
    pub train_samples: usize,
    pub eval_samples: usize,
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl Default for Phase1Config {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            channels: [16, 32, 64],
            train_samples: 20_000,
            eval_samples: 2_000,
            noise: NoiseConfig::default(),
            seed: 0,
        }
    }
}

impl Phase1Config {
    pub fn validate(&self) -> Result<(), String> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err("epochs and batch_size must be at least 1".into());
        }
        if self.train_samples < 2 || self.eval_samples == 0 {
            return Err("need at least 2 training and 1 evaluation sample".into());
        }
        if !(self.learning_rate > 0.0) {
            return Err("learning_rate must be positive".into());
        }
        self.noise.validate()
    }
}

/// `phi_rep` maps a frame to the 64-wide embedding; `phi_reg` maps the
/// embedding to the 27 standardized targets.
#[derive(Clone, Debug, PartialEq)]
pub struct ReprNetwork {
    pub phi_rep: Network,
    pub phi_reg: Network,
    pub standardizer: Standardizer,
}

/// SpaceToDepth(2), three stride-2 separable convolutions with ReLU,
/// flatten, dense to the embedding, tanh.
pub fn representation_layers(camera: &CameraSpec, channels: [usize; 3]) -> Result<Vec<LayerSpec>> {
    let mut layers = vec![LayerSpec::SpaceToDepth { block: 2 }];
    let mut cin = camera.channels * 4;
    for c in channels {
        layers.push(LayerSpec::DepthwiseSeparableConv {
            in_channels: cin,
            out_channels: c,
            kernel: 3,
            stride: 2,
        });
        layers.push(LayerSpec::Relu);
        cin = c;
    }
    layers.push(LayerSpec::Flatten);
    let probe = Network::with_zero_params(frame_shape(camera), layers.clone(), 0)?;
    let flat = probe.output_shape()[0];
    layers.push(LayerSpec::Dense {
        inputs: flat,
        outputs: EMBED_DIM,
    });
    layers.push(LayerSpec::Tanh);
    Ok(layers)
}

pub fn frame_shape(camera: &CameraSpec) -> Vec<usize> {
    vec![camera.height, camera.width, camera.channels]
}

impl ReprNetwork {
    pub fn new(camera: &CameraSpec, channels: [usize; 3], standardizer: Standardizer, seed: u64) -> Result<Self> {
        let phi_rep = Network::new(frame_shape(camera), representation_layers(camera, channels)?, seed)?;
        let phi_reg = Network::new(
            vec![EMBED_DIM],
            vec![LayerSpec::Dense {
                inputs: EMBED_DIM,
                outputs: ENV_DIM,
            }],
            seed.wrapping_add(1),
        )?;
        Ok(Self {
            phi_rep,
            phi_reg,
            standardizer,
        })
    }

    fn check_frame(&self, frame: &Frame) -> Result<()> {
        let shape = vec![frame.height, frame.width, frame.channels];
        if shape != self.phi_rep.input_shape() {
            return Err(Phase1Error::ShapeMismatch {
                expected: self.phi_rep.input_shape().to_vec(),
                actual: shape,
            });
        }
        Ok(())
    }

    /// The 64-wide embedding of one frame.
    pub fn embed(&self, frame: &Frame) -> Result<Vec<f64>> {
        self.check_frame(frame)?;
        let x = frames_to_tensor(&[frame]);
        Ok(self.phi_rep.predict(&x)?.data().iter().map(|&v| v as f64).collect())
    }

    /// Predicted observations in native units.
    pub fn predict_observation(&self, frame: &Frame) -> Result<Vec<f64>> {
        self.check_frame(frame)?;
        let x = frames_to_tensor(&[frame]);
        let z = self.phi_reg.predict(&self.phi_rep.predict(&x)?)?;
        let z: Vec<f64> = z.data().iter().map(|&v| v as f64).collect();
        Ok(self.standardizer.invert(&z))
    }

    /// Standardized predictions for a batch of frames.
    pub fn predict_standardized(&self, frames: &[&Frame]) -> Result<Tensor> {
        for f in frames {
            self.check_frame(f)?;
        }
        let x = frames_to_tensor(frames);
        Ok(self.phi_reg.predict(&self.phi_rep.predict(&x)?)?)
    }
}

pub fn frames_to_tensor(frames: &[&Frame]) -> Tensor {
    let f0 = frames[0];
    let mut data = Vec::with_capacity(frames.len() * f0.data.len());
    for f in frames {
        data.extend(f.data.iter().map(|&v| v as f32 / 255.0));
    }
    Tensor::new(vec![frames.len(), f0.height, f0.width, f0.channels], data).expect("consistent frames")
}

fn standardized_targets(std: &Standardizer, samples: &[&RegressionSample]) -> Tensor {
    let mut data = Vec::with_capacity(samples.len() * ENV_DIM);
    for s in samples {
        data.extend(std.apply(s.target.as_slice()).into_iter().map(|v| v as f32));
    }
    Tensor::new(vec![samples.len(), ENV_DIM], data).expect("target shape")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_mse: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: ReprNetwork,
    pub history: Vec<EpochRecord>,
    /// Epoch (1-based) of the returned snapshot.
    pub best_epoch: usize,
}

/// Mean-over-elements standardized MSE of `net` on `samples`.
fn eval_mse(net: &ReprNetwork, samples: &[RegressionSample], batch: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&RegressionSample> = chunk.iter().collect();
        let frames: Vec<&Frame> = chunk.iter().map(|s| &s.frame).collect();
        let pred = net.predict_standardized(&frames)?;
        let target = standardized_targets(&net.standardizer, &refs);
        let (loss, _) = mse_loss(&pred, &target)?;
        total += loss as f64 * chunk.len() as f64;
    }
    Ok(total / (samples.len() as f64 * ENV_DIM as f64))
}

/// Minimizes the standardized squared error of `phi_reg(phi_rep(frame))`
/// and returns the epoch snapshot with the lowest evaluation error.
pub fn train_repr<R: Rng + ?Sized>(
    train: &[RegressionSample],
    eval: &[RegressionSample],
    camera: &CameraSpec,
    cfg: &Phase1Config,
    rng: &mut R,
) -> Result<TrainOutcome> {
    if train.len() < 2 || eval.is_empty() {
        return Err(Phase1Error::EmptyDataset);
    }
    let standardizer = Standardizer::fit(train.iter().map(|s| s.target.as_slice()))?;
    let mut net = ReprNetwork::new(camera, cfg.channels, standardizer, cfg.seed)?;
    let adam_cfg = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut opt_rep = Adam::new(net.phi_rep.param_count(), adam_cfg);
    let mut opt_reg = Adam::new(net.phi_reg.param_count(), adam_cfg);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ReprNetwork)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&RegressionSample> = idx.iter().map(|&i| &train[i]).collect();
            let frames: Vec<&Frame> = batch.iter().map(|s| &s.frame).collect();
            let x = frames_to_tensor(&frames);
            let y = standardized_targets(&net.standardizer, &batch);
            let (emb, rep_acts) = net.phi_rep.forward(&x)?;
            let (pred, reg_acts) = net.phi_reg.forward(&emb)?;
            let (loss, grad) = mse_loss(&pred, &y)?;
            if !loss.is_finite() {
                return Err(Phase1Error::NonFiniteLoss { epoch });
            }
            loss_sum += loss as f64 * batch.len() as f64;
            let g_reg = net.phi_reg.backward(&reg_acts, &grad)?;
            let g_rep = net.phi_rep.backward_params(&rep_acts, g_reg.input.as_ref().expect("input gradient"))?;
            opt_reg.step(net.phi_reg.params_mut(), &g_reg.params);
            opt_rep.step(net.phi_rep.params_mut(), &g_rep);
        }
        let train_loss = loss_sum / (train.len() as f64 * ENV_DIM as f64);
        let eval_err = eval_mse(&net, eval, 256)?;
        if !eval_err.is_finite() {
            return Err(Phase1Error::NonFiniteLoss { epoch });
        }
        info!("phase1 epoch {epoch}: train {train_loss:.4} eval {eval_err:.4}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            eval_mse: eval_err,
        });
        if best.as_ref().is_none_or(|(e, _, _)| eval_err < *e) {
            best = Some((eval_err, epoch, net.clone()));
        }
    }
    let (_, best_epoch, net) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        net,
        history,
        best_epoch,
    })
}

/// Target groups reported by [`evaluate_regression`].
pub const GROUPS: [(&str, std::ops::Range<usize>); 5] = [
    ("rays", slots::RAYS),
    ("edges", slots::EDGES),
    ("lateral", slots::LATERAL),
    ("heading", slots::HEADING),
    ("curvatures", slots::CURVATURES),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub samples: usize,
    /// Standardized MSE averaged over all 27 elements.
    pub overall_mse: f64,
    pub per_element_mse: Vec<f64>,
    /// `(group, standardized MSE, RMSE in native units)`.
    pub groups: Vec<(String, f64, f64)>,
}

fn metrics_from_errors(sq_std: &[f64], sq_native: &[f64], n: usize) -> RegressionMetrics {
    let per_element_mse: Vec<f64> = sq_std.iter().map(|v| v / n as f64).collect();
    let groups = GROUPS
        .iter()
        .map(|(name, r)| {
            let k = r.len() as f64;
            let mse = per_element_mse[r.clone()].iter().sum::<f64>() / k;
            let rmse = (sq_native[r.clone()].iter().sum::<f64>() / (k * n as f64)).sqrt();
            (name.to_string(), mse, rmse)
        })
        .collect();
    RegressionMetrics {
        samples: n,
        overall_mse: per_element_mse.iter().sum::<f64>() / ENV_DIM as f64,
        per_element_mse,
        groups,
    }
}

/// Scores arbitrary standardized predictions against the samples' targets.
pub fn score_predictions(std: &Standardizer, samples: &[RegressionSample], preds: &[Vec<f64>]) -> Result<RegressionMetrics> {
    if samples.is_empty() {
        return Err(Phase1Error::EmptyDataset);
    }
    let mut sq_std = vec![0.0; ENV_DIM];
    let mut sq_native = vec![0.0; ENV_DIM];
    for (s, p) in samples.iter().zip(preds) {
        let z = std.apply(s.target.as_slice());
        let native = std.invert(p);
        for j in 0..ENV_DIM {
            sq_std[j] += (p[j] - z[j]).powi(2);
            sq_native[j] += (native[j] - s.target.0[j]).powi(2);
        }
    }
    Ok(metrics_from_errors(&sq_std, &sq_native, samples.len()))
}

pub fn evaluate_regression(net: &ReprNetwork, samples: &[RegressionSample]) -> Result<RegressionMetrics> {
    if samples.is_empty() {
        return Err(Phase1Error::EmptyDataset);
    }
    let mut preds = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(256) {
        let frames: Vec<&Frame> = chunk.iter().map(|s| &s.frame).collect();
        let p = net.predict_standardized(&frames)?;
        preds.extend((0..chunk.len()).map(|i| p.row(i).iter().map(|&v| v as f64).collect::<Vec<_>>()));
    }
    score_predictions(&net.standardizer, samples, &preds)
}

/// Metrics of the constant predictor that always outputs the training mean.
pub fn mean_predictor_metrics(std: &Standardizer, samples: &[RegressionSample]) -> Result<RegressionMetrics> {
    let zeros = vec![vec![0.0; ENV_DIM]; samples.len()];
    score_predictions(std, samples, &zeros)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use visracer_core::TrackSpec;

    fn small_camera() -> CameraSpec {
        CameraSpec {
            width: 32,
            height: 16,
            ..CameraSpec::default()
        }
    }

    #[test]
    fn default_tower_shapes() {
        let layers = representation_layers(&CameraSpec::default(), [16, 32, 64]).unwrap();
        let net = Network::new(vec![64, 96, 1], layers, 0).unwrap();
        assert_eq!(net.output_shape(), &[EMBED_DIM]);
        assert!(net.layers().contains(&LayerSpec::Dense {
            inputs: 4 * 6 * 64,
            outputs: 64
        }));
    }

    #[test]
    fn samples_pair_frame_and_target_at_one_tick() {
        let track = Track::build(&TrackSpec::default_circuit()).unwrap();
        let cam = small_camera();
        let setup = CollectSetup {
            track: &track,
            vehicle: &VehicleParams::default(),
            pursuit: &PursuitParams::default(),
            camera: &cam,
            window: &LookaheadWindow::default(),
            noise: &NoiseConfig::default(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ds = collect_regression_dataset(&setup, 30.0, StopAfter::Samples(200), &mut rng).unwrap();
        assert_eq!(ds.len(), 200);
        for (i, s) in ds.iter().enumerate() {
            assert_eq!(s.tick, i as u64);
            assert_eq!(s.frame.timestamp, s.tick);
            let st = VehicleState::at_rest(s.pose);
            assert_eq!(env_observation(&track, &st, &LookaheadWindow::default()).unwrap(), s.target);
            assert_eq!(render_view(&track, &s.pose, &cam, s.tick), s.frame);
        }
    }

    #[test]
    fn zero_noise_matches_pure_baseline() {
        let track = Track::build(&TrackSpec::default_circuit()).unwrap();
        let cam = small_camera();
        let setup = CollectSetup {
            track: &track,
            vehicle: &VehicleParams::default(),
            pursuit: &PursuitParams::default(),
            camera: &cam,
            window: &LookaheadWindow::default(),
            noise: &NoiseConfig::OFF,
        };
        let a = collect_regression_dataset(&setup, 0.0, StopAfter::Samples(300), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = collect_regression_dataset(&setup, 0.0, StopAfter::Samples(300), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
        // and equal to stepping the undisturbed controller by hand
        let mut st = VehicleState::at_rest(Pose::new(track.point_at(0.0), track.tangent_at(0.0).angle()));
        for s in &a {
            assert_eq!(s.pose, st.pose);
            let act = pursuit_action(&track, &st, setup.pursuit, setup.vehicle).unwrap();
            st = resolve_walls(&track, &step(&st, act, setup.vehicle, CONTROL_DT).unwrap(), setup.vehicle).0;
        }
    }

    #[test]
    fn perfect_and_mean_predictors() {
        let track = Track::build(&TrackSpec::default_circuit()).unwrap();
        let cam = small_camera();
        let setup = CollectSetup {
            track: &track,
            vehicle: &VehicleParams::default(),
            pursuit: &PursuitParams::default(),
            camera: &cam,
            window: &LookaheadWindow::default(),
            noise: &NoiseConfig::default(),
        };
        let ds = collect_regression_dataset(&setup, 0.0, StopAfter::Samples(400), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let std = Standardizer::fit(ds.iter().map(|s| s.target.as_slice())).unwrap();
        let perfect: Vec<Vec<f64>> = ds.iter().map(|s| std.apply(s.target.as_slice())).collect();
        let m = score_predictions(&std, &ds, &perfect).unwrap();
        assert!(m.overall_mse.abs() < 1e-20 && m.groups.iter().all(|g| g.1 < 1e-20 && g.2 < 1e-9));
        let mean = mean_predictor_metrics(&std, &ds).unwrap();
        for (j, e) in mean.per_element_mse.iter().enumerate() {
            // elements that never vary are floored to zero error
            assert!((e - 1.0).abs() < 1e-3 || *e < 1e-12, "element {j}: {e}");
        }
        let mut rev = ds.clone();
        rev.reverse();
        let again = mean_predictor_metrics(&std, &rev).unwrap();
        assert!((again.overall_mse - mean.overall_mse).abs() < 1e-12);
    }

    #[test]
    fn selection_returns_minimum_eval_epoch() {
        let track = Track::build(&TrackSpec::default_circuit()).unwrap();
        let cam = small_camera();
        let setup = CollectSetup {
            track: &track,
            vehicle: &VehicleParams::default(),
            pursuit: &PursuitParams::default(),
            camera: &cam,
            window: &LookaheadWindow::default(),
            noise: &NoiseConfig::default(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let train = collect_regression_dataset(&setup, 0.0, StopAfter::Samples(256), &mut rng).unwrap();
        let eval = collect_regression_dataset(&setup, 200.0, StopAfter::Samples(64), &mut rng).unwrap();
        let cfg = Phase1Config {
            epochs: 6,
            channels: [4, 8, 8],
            ..Phase1Config::default()
        };
        let out = train_repr(&train, &eval, &cam, &cfg, &mut rng).unwrap();
        let min = out.history.iter().map(|h| h.eval_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(out.history[out.best_epoch - 1].eval_mse, min);
        let again = evaluate_regression(&out.net, &eval).unwrap();
        assert!((again.overall_mse - min).abs() < 1e-5 * min.max(1.0));
        assert_eq!(out.net.embed(&eval[0].frame).unwrap().len(), 64);
    }
}
