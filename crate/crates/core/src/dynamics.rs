//! Vehicle model: kinematic bicycle with a longitudinal acceleration limit,
//! speed-dependent steering saturation (lateral grip), lateral slip decay,
//! and a restitution/damping wall response.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Track};
use crate::vec2::{wrap_angle, Vec2};

pub const STEER_LIMIT: f64 = std::f64::consts::FRAC_PI_6;
pub const CONTROL_DT: f64 = 1.0 / 60.0;
pub const DEDICATED_DIM: usize = 11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("vehicle state became non-finite at t = {time:.3} s")]
    NonFiniteState { time: f64 },
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub max_accel: f64,
    pub max_brake: f64,
    pub max_speed: f64,
    /// Lateral acceleration limit; steering saturates beyond it.
    pub lateral_grip: f64,
    pub wall_restitution: f64,
    pub wall_tangential_damping: f64,
    pub half_width: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.6,
            max_accel: 4.0,
            max_brake: 9.0,
            max_speed: 25.0,
            lateral_grip: 8.0,
            wall_restitution: 0.3,
            wall_tangential_damping: 0.7,
            half_width: 1.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let positive = [
            ("wheelbase", self.wheelbase),
            ("max_accel", self.max_accel),
            ("max_brake", self.max_brake),
            ("max_speed", self.max_speed),
            ("lateral_grip", self.lateral_grip),
            ("wall_tangential_damping", self.wall_tangential_damping),
            ("half_width", self.half_width),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DynamicsError::InvalidParams(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.wall_restitution) {
            return Err(DynamicsError::InvalidParams("wall_restitution must be in [0, 1)".into()));
        }
        if self.wall_tangential_damping > 1.0 {
            return Err(DynamicsError::InvalidParams("wall_tangential_damping must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// Lateral distance from the centerline at which the body touches a wall.
    pub fn wall_offset(&self, track: &Track) -> f64 {
        track.width() / 2.0 - self.half_width
    }
}

/// Control command: steering in `[-pi/6, pi/6]`, combined throttle (+) / brake (-) in `[-1, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub steering: f64,
    pub throttle_brake: f64,
}

impl Action {
    pub fn new(steering: f64, throttle_brake: f64) -> Self {
        Self {
            steering,
            throttle_brake,
        }
    }

    pub fn clamped(self) -> Self {
        let fix = |v: f64, lim: f64| if v.is_nan() { 0.0 } else { v.clamp(-lim, lim) };
        Self {
            steering: fix(self.steering, STEER_LIMIT),
            throttle_brake: fix(self.throttle_brake, 1.0),
        }
    }

    pub fn in_bounds(&self) -> bool {
        self.steering.abs() <= STEER_LIMIT && self.throttle_brake.abs() <= 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub pose: Pose,
    /// World-frame velocity.
    pub velocity: Vec2,
    pub yaw_rate: f64,
    pub prev_steering: f64,
    pub wall_contact: bool,
    pub time: f64,
    pub tick: u64,
}

impl VehicleState {
    pub fn at_rest(pose: Pose) -> Self {
        Self::with_speed(pose, 0.0)
    }

    /// Moving along the heading at `speed`.
    pub fn with_speed(pose: Pose, speed: f64) -> Self {
        Self {
            pose,
            velocity: pose.heading() * speed,
            yaw_rate: 0.0,
            prev_steering: 0.0,
            wall_contact: false,
            time: 0.0,
            tick: 0,
        }
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    /// (longitudinal, lateral) velocity in the body frame.
    pub fn body_velocity(&self) -> (f64, f64) {
        let h = self.pose.heading();
        (self.velocity.dot(h), self.velocity.dot(h.perp()))
    }

    fn is_finite(&self) -> bool {
        self.pose.position.is_finite()
            && self.pose.yaw.is_finite()
            && self.velocity.is_finite()
            && self.yaw_rate.is_finite()
            && self.prev_steering.is_finite()
            && self.time.is_finite()
    }
}

/// Advances the vehicle by `dt` with semi-implicit Euler. Out-of-range
/// actions are clamped.
pub fn step(state: &VehicleState, action: Action, params: &VehicleParams, dt: f64) -> Result<VehicleState, DynamicsError> {
    let a = action.clamped();
    let (mut u, mut w) = state.body_velocity();

    let omega = a.throttle_brake;
    if omega >= 0.0 {
        u += omega * params.max_accel * dt;
    } else {
        // brakes pull toward standstill from either direction, never through it
        let dv = -omega * params.max_brake * dt;
        u = if u > 0.0 { (u - dv).max(0.0) } else { (u + dv).min(0.0) };
    }
    u = u.min(params.max_speed);

    let slip = params.lateral_grip * dt;
    w = if w > 0.0 { (w - slip).max(0.0) } else { (w + slip).min(0.0) };

    let mut tan_delta = a.steering.tan();
    if u != 0.0 {
        let cap = params.lateral_grip * params.wheelbase / (u * u);
        tan_delta = tan_delta.clamp(-cap, cap);
    }
    let yaw_rate = u * tan_delta / params.wheelbase;
    let yaw = wrap_angle(state.pose.yaw + yaw_rate * dt);
    let h = Vec2::from_angle(yaw);
    let mut velocity = h * u + h.perp() * w;
    let speed = velocity.norm();
    if speed > params.max_speed {
        velocity = velocity * (params.max_speed / speed);
    }
    let next = VehicleState {
        pose: Pose {
            position: state.pose.position + velocity * dt,
            yaw,
        },
        velocity,
        yaw_rate,
        prev_steering: a.steering,
        wall_contact: false,
        time: state.time + dt,
        tick: state.tick + 1,
    };
    if !next.is_finite() {
        return Err(DynamicsError::NonFiniteState { time: next.time });
    }
    Ok(next)
}

/// Clamps a state that crossed the wall offset back onto it. On contact the
/// velocity's outward normal component is reflected with `wall_restitution`
/// and its tangential component scaled by `wall_tangential_damping`.
pub fn resolve_walls(track: &Track, state: &VehicleState, params: &VehicleParams) -> (VehicleState, bool) {
    let bound = params.wall_offset(track);
    let proj = track.project_unbounded(state.pose.position);
    if proj.lateral.abs() <= bound + 1e-9 {
        return (*state, false);
    }
    let side = proj.lateral.signum();
    let outward = proj.segment_dir.perp() * side;
    let mut out = *state;
    out.pose.position = proj.point + outward * bound;
    let vn = state.velocity.dot(outward);
    let vt = state.velocity.dot(proj.segment_dir);
    let vn = if vn > 0.0 { -params.wall_restitution * vn } else { vn };
    out.velocity = outward * vn + proj.segment_dir * (vt * params.wall_tangential_damping);
    out.wall_contact = true;
    (out, true)
}

/// The 11 directly measured features: body-frame linear velocity (3),
/// linear acceleration (3), angular velocity (roll, pitch, yaw), wall flag,
/// previous steering command.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DedicatedFeatures(pub [f64; DEDICATED_DIM]);

impl DedicatedFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn dedicated_snapshot(prev: &VehicleState, state: &VehicleState, dt: f64) -> DedicatedFeatures {
    let (u, w) = state.body_velocity();
    let (pu, pw) = prev.body_velocity();
    let (au, aw) = if dt > 0.0 { ((u - pu) / dt, (w - pw) / dt) } else { (0.0, 0.0) };
    DedicatedFeatures([
        u,
        w,
        0.0,
        au,
        aw,
        0.0,
        0.0,
        0.0,
        state.yaw_rate,
        if state.wall_contact { 1.0 } else { 0.0 },
        state.prev_steering,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TrackSpec;
    use std::f64::consts::PI;

    fn straight_track() -> Track {
        Track::build(&TrackSpec::stadium(400.0, 30.0, 10.0, 0.5)).unwrap()
    }

    #[test]
    fn rest_with_no_input_only_advances_time() {
        let p = VehicleParams::default();
        let s0 = VehicleState::at_rest(Pose::new(Vec2::new(3.0, 4.0), 0.7));
        let s1 = step(&s0, Action::default(), &p, CONTROL_DT).unwrap();
        assert_eq!(s1.pose, s0.pose);
        assert_eq!(s1.velocity, s0.velocity);
        assert_eq!(s1.yaw_rate, 0.0);
        assert!((s1.time - CONTROL_DT).abs() < 1e-15);
    }

    #[test]
    fn full_throttle_saturates_at_max_speed() {
        let p = VehicleParams::default();
        let mut s = VehicleState::at_rest(Pose::new(Vec2::ZERO, 0.0));
        let mut last = 0.0;
        for _ in 0..60 * 30 {
            s = step(&s, Action::new(0.0, 1.0), &p, CONTROL_DT).unwrap();
            assert!(s.speed() >= last - 1e-12);
            assert!(s.speed() <= p.max_speed + 1e-9);
            last = s.speed();
        }
        assert!((last - p.max_speed).abs() < 1e-9);
    }

    #[test]
    fn constant_steering_traces_the_kinematic_circle() {
        let p = VehicleParams {
            lateral_grip: 100.0,
            ..Default::default()
        };
        let delta: f64 = 0.1;
        let v = 10.0;
        let radius = p.wheelbase / delta.tan();
        let start = VehicleState::with_speed(Pose::new(Vec2::ZERO, 0.0), v);
        let mut s = start;
        let circumference = 2.0 * PI * radius;
        let ticks = (circumference / v / CONTROL_DT).round() as usize;
        let mut max_r: f64 = 0.0;
        let center = Vec2::new(0.0, radius);
        for _ in 0..ticks {
            s = step(&s, Action::new(delta, 0.0), &p, CONTROL_DT).unwrap();
            max_r = max_r.max((s.pose.position - center).norm());
        }
        let miss = s.pose.position.distance(start.pose.position);
        assert!(miss < 0.01 * circumference, "miss {miss}");
        assert!((max_r - radius).abs() < 0.01 * radius);
    }

    #[test]
    fn steering_saturates_at_grip_limit() {
        let p = VehicleParams::default();
        let s = VehicleState::with_speed(Pose::new(Vec2::ZERO, 0.0), 20.0);
        let n = step(&s, Action::new(STEER_LIMIT, 0.0), &p, CONTROL_DT).unwrap();
        let lat_acc = n.yaw_rate * 20.0;
        assert!(lat_acc <= p.lateral_grip + 1e-9);
        assert!(lat_acc > 0.99 * p.lateral_grip);
    }

    #[test]
    fn braking_never_reverses() {
        let p = VehicleParams::default();
        let mut s = VehicleState::with_speed(Pose::new(Vec2::ZERO, 0.0), 3.0);
        for _ in 0..120 {
            s = step(&s, Action::new(0.0, -1.0), &p, CONTROL_DT).unwrap();
            assert!(s.body_velocity().0 >= 0.0);
        }
        assert_eq!(s.speed(), 0.0);
    }

    #[test]
    fn inside_state_is_untouched() {
        let t = straight_track();
        let p = VehicleParams::default();
        let s = VehicleState::with_speed(Pose::new(t.point_at(40.0) + Vec2::new(0.0, 1.0), 0.2), 12.0);
        let (out, contact) = resolve_walls(&t, &s, &p);
        assert!(!contact);
        assert_eq!(out, s);
    }

    #[test]
    fn normal_impact_without_restitution_stops_normal_motion() {
        let t = straight_track();
        let p = VehicleParams {
            wall_restitution: 0.0,
            ..Default::default()
        };
        let mut s = VehicleState::with_speed(Pose::new(t.point_at(40.0) + Vec2::new(0.0, 4.3), PI / 2.0), 8.0);
        s.velocity = Vec2::new(0.0, 8.0);
        let (out, contact) = resolve_walls(&t, &s, &p);
        assert!(contact);
        assert!(out.velocity.y.abs() < 1e-12);
        assert!((t.lateral_offset(&out.pose).unwrap() - p.wall_offset(&t)).abs() < 1e-9);
    }

    #[test]
    fn grazing_impact_scales_tangential_speed() {
        let t = straight_track();
        let p = VehicleParams::default();
        let inc = 10f64.to_radians();
        let v = Vec2::new(inc.cos(), inc.sin()) * 15.0;
        let mut s = VehicleState::with_speed(Pose::new(t.point_at(40.0) + Vec2::new(0.0, 4.1), inc), 15.0);
        s.velocity = v;
        let (out, contact) = resolve_walls(&t, &s, &p);
        assert!(contact);
        let expected_t = v.x * p.wall_tangential_damping;
        assert!((out.velocity.x - expected_t).abs() < 1e-12);
        assert!((out.velocity.y + p.wall_restitution * v.y).abs() < 1e-12);
    }

    #[test]
    fn snapshot_layout() {
        let pose = Pose::new(Vec2::ZERO, 0.3);
        let rest = VehicleState::at_rest(pose);
        assert_eq!(dedicated_snapshot(&rest, &rest, CONTROL_DT).0, [0.0; DEDICATED_DIM]);

        let p = VehicleParams::default();
        let a = VehicleState::with_speed(pose, 12.0);
        let b = step(&a, Action::default(), &p, CONTROL_DT).unwrap();
        let f = dedicated_snapshot(&a, &b, CONTROL_DT);
        assert_eq!(f.0.len(), 11);
        assert!((f.0[0] - 12.0).abs() < 1e-12);
        assert!(f.0[3].abs() < 1e-9 && f.0[4].abs() < 1e-9);
        assert_eq!([f.0[2], f.0[5], f.0[6], f.0[7]], [0.0; 4]);
    }
}
