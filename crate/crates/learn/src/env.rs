//! The racing environment the policy interacts with.

use thiserror::Error;

use visracer_core::dynamics::{dedicated_snapshot, resolve_walls, step, DynamicsError, CONTROL_DT};
use visracer_core::geometry::{GeometryError, LookaheadWindow, Pose, Track};
use visracer_core::obs::{assemble_policy_input, assemble_privileged_input, env_observation, ObsError, Standardizer, POLICY_DIM, PRIVILEGED_DIM};
use visracer_core::render::{render_view, CameraSpec};
use visracer_core::{Action, Vec2, VehicleParams, VehicleState};

use crate::delay::DelayStream;
use crate::phase1::{Phase1Error, ReprNetwork};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Obs(#[from] ObsError),
    #[error(transparent)]
    Phase1(#[from] Phase1Error),
}

pub type Result<T, E = EnvError> = std::result::Result<T, E>;

/// Progress along the centerline minus the wall penalty `c_w * |v|^2` on contact.
pub fn compute_reward(track: &Track, s_prev: f64, s_curr: f64, velocity: Vec2, contact: bool, c_w: f64) -> f64 {
    let penalty = if contact { c_w * velocity.norm_sq() } else { 0.0 };
    track.progress_delta(s_prev, s_curr) - penalty
}

/// What the policy sees.
#[derive(Clone, Debug)]
pub enum ObsMode {
    /// Delayed frame through the frozen Phase-1 embedding, plus dedicated features.
    Vision(Box<ReprNetwork>),
    /// Standardized ground-truth observation, plus dedicated features.
    Privileged(Standardizer),
}

impl ObsMode {
    pub fn obs_dim(&self) -> usize {
        match self {
            ObsMode::Vision(_) => POLICY_DIM,
            ObsMode::Privileged(_) => PRIVILEGED_DIM,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EnvSetup {
    pub track: Track,
    pub vehicle: VehicleParams,
    pub camera: CameraSpec,
    pub window: LookaheadWindow,
    pub c_w: f64,
    pub frame_delay: usize,
    pub action_repeat: usize,
}

/// Observation plus the timestamps it was assembled from.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub values: Vec<f64>,
    pub state_tick: u64,
    /// Tick of the frame behind the embedding; `None` without images.
    pub frame_tick: Option<u64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    /// Sum of the progress terms alone.
    pub progress: f64,
    /// Wall contacts that began during this step.
    pub contact_onsets: usize,
    /// Ticks in contact during this step.
    pub contact_ticks: usize,
}

#[derive(Clone, Debug)]
pub struct RacingEnv {
    pub setup: EnvSetup,
    pub mode: ObsMode,
    state: VehicleState,
    prev: VehicleState,
    s: f64,
    in_contact: bool,
    poses: DelayStream<Pose>,
}

impl RacingEnv {
    pub fn new(setup: EnvSetup, mode: ObsMode) -> Self {
        let pose = Pose::new(setup.track.point_at(0.0), setup.track.tangent_at(0.0).angle());
        let state = VehicleState::at_rest(pose);
        let delay = setup.frame_delay;
        let mut env = Self {
            setup,
            mode,
            state,
            prev: state,
            s: 0.0,
            in_contact: false,
            poses: DelayStream::new(delay),
        };
        env.reset(pose, 0.0).expect("track origin is on track");
        env
    }

    pub fn obs_dim(&self) -> usize {
        self.mode.obs_dim()
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn track(&self) -> &Track {
        &self.setup.track
    }

    /// Centerline arclength of the current position.
    pub fn s(&self) -> f64 {
        self.s
    }

    /// Places the vehicle at `pose` moving forward at `speed`, tick 0.
    pub fn reset(&mut self, pose: Pose, speed: f64) -> Result<()> {
        self.state = VehicleState::with_speed(pose, speed);
        self.prev = self.state;
        self.s = self.setup.track.project(pose.position)?.s;
        self.in_contact = false;
        self.poses.clear();
        self.poses.push(0, pose);
        Ok(())
    }

    /// Pose at centerline arclength `s` offset laterally and in heading.
    pub fn start_pose(&self, s: f64, lateral: f64, heading: f64) -> Pose {
        let t = &self.setup.track;
        let tan = t.tangent_at(s);
        Pose::new(t.point_at(s) + tan.perp() * lateral, tan.angle() + heading)
    }

    pub fn observe(&self) -> Result<Observation> {
        let ded = dedicated_snapshot(&self.prev, &self.state, CONTROL_DT);
        let (values, frame_tick) = match &self.mode {
            ObsMode::Vision(repr) => {
                let (tick, pose) = self.poses.delayed().expect("reset pushes a pose");
                let frame = render_view(&self.setup.track, pose, &self.setup.camera, tick);
                let emb = repr.embed(&frame)?;
                (assemble_policy_input(&emb, &ded)?.0, Some(tick))
            }
            ObsMode::Privileged(std) => {
                let env = env_observation(&self.setup.track, &self.state, &self.setup.window)?;
                (assemble_privileged_input(&env, std, &ded)?.0, None)
            }
        };
        Ok(Observation {
            values,
            state_tick: self.state.tick,
            frame_tick,
        })
    }

    /// Holds `action` for `action_repeat` control ticks.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        let mut out = StepOutcome::default();
        for _ in 0..self.setup.action_repeat {
            let raw = step(&self.state, action, &self.setup.vehicle, CONTROL_DT)?;
            let (next, hit) = resolve_walls(&self.setup.track, &raw, &self.setup.vehicle);
            let s = self.setup.track.project(next.pose.position)?.s;
            out.reward += compute_reward(&self.setup.track, self.s, s, raw.velocity, hit, self.setup.c_w);
            out.progress += self.setup.track.progress_delta(self.s, s);
            if hit {
                out.contact_ticks += 1;
                if !self.in_contact {
                    out.contact_onsets += 1;
                }
            }
            self.in_contact = hit;
            self.s = s;
            self.prev = self.state;
            self.state = next;
            self.poses.push(next.tick, next.pose);
        }
        Ok(out)
    }
}
