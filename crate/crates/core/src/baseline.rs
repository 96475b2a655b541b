//! Pure-pursuit driver with a curvature-limited speed target.
//!
//! It follows the centerline, so it leaves the racing-line headroom a
//! learned policy can exploit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Action, VehicleParams, VehicleState};
use crate::geometry::{GeometryError, Track};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PursuitParams {
    /// Lookahead at standstill, meters.
    pub lookahead_base: f64,
    /// Additional lookahead per m/s of speed, seconds.
    pub lookahead_speed_gain: f64,
    /// Target lateral acceleration in corners, m/s^2.
    pub corner_accel_budget: f64,
    /// Fraction of the curvature-limited speed actually targeted, in `(0, 1]`.
    pub speed_margin: f64,
    /// Throttle per m/s of speed error.
    pub speed_gain: f64,
}

impl Default for PursuitParams {
    fn default() -> Self {
        Self {
            lookahead_base: 4.0,
            lookahead_speed_gain: 0.4,
            corner_accel_budget: 6.0,
            speed_margin: 0.9,
            speed_gain: 0.5,
        }
    }
}

impl PursuitParams {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.lookahead_base,
            self.lookahead_speed_gain,
            self.corner_accel_budget,
            self.speed_margin,
            self.speed_gain,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err("pursuit parameters must be positive".into());
        }
        if self.speed_margin > 1.0 {
            return Err("speed_margin must be in (0, 1]".into());
        }
        Ok(())
    }

    pub fn lookahead(&self, speed: f64) -> f64 {
        self.lookahead_base + self.lookahead_speed_gain * speed.max(0.0)
    }
}

/// Curvature-limited target speed at arclength `s` for current speed `speed`.
///
/// The window covers the steering lookahead plus the braking distance from
/// `speed`, so the car is already slow when a corner arrives.
pub fn target_speed(track: &Track, s: f64, speed: f64, params: &PursuitParams, vehicle: &VehicleParams) -> f64 {
    let span = params.lookahead(speed) + speed * speed / (2.0 * vehicle.max_brake);
    let n = (span / track.step()).ceil() as usize + 1;
    let kmax = (0..=n)
        .map(|i| track.curvature_at(s + span * i as f64 / n as f64).abs())
        .fold(0.0, f64::max);
    if kmax <= 1e-9 {
        return vehicle.max_speed;
    }
    (params.speed_margin * (params.corner_accel_budget / kmax).sqrt()).min(vehicle.max_speed)
}

pub fn pursuit_action(
    track: &Track,
    state: &VehicleState,
    params: &PursuitParams,
    vehicle: &VehicleParams,
) -> Result<Action, GeometryError> {
    let proj = track.project(state.pose.position)?;
    if proj.lateral.abs() > track.width() / 2.0 + crate::geometry::OFF_TRACK_MARGIN {
        return Err(GeometryError::OffTrack { lateral: proj.lateral });
    }
    let (u, _) = state.body_velocity();
    let ld = params.lookahead(u);
    let target = track.point_at(proj.s + ld);
    let local = (target - state.pose.position).rotate(-state.pose.yaw);
    let dist = local.norm().max(1e-6);
    let alpha = local.y.atan2(local.x);
    let steering = (2.0 * vehicle.wheelbase * alpha.sin() / dist).atan();
    let v_target = target_speed(track, proj.s, u, params, vehicle);
    let throttle = params.speed_gain * (v_target - u);
    Ok(Action::new(steering, throttle).clamped())
}

/// Piecewise-constant uniform offsets added to the baseline's commands.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Ticks between offset resamples.
    pub period: u32,
    pub steering_amplitude: f64,
    pub throttle_amplitude: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            period: 30,
            steering_amplitude: 0.1,
            throttle_amplitude: 0.3,
        }
    }
}

impl NoiseConfig {
    pub const OFF: NoiseConfig = NoiseConfig {
        period: 30,
        steering_amplitude: 0.0,
        throttle_amplitude: 0.0,
    };

    pub fn validate(&self) -> Result<(), String> {
        if self.period == 0 {
            return Err("noise period must be at least one tick".into());
        }
        if !(self.steering_amplitude >= 0.0 && self.throttle_amplitude >= 0.0) {
            return Err("noise amplitudes must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NoiseState {
    ticks_left: u32,
    offset: Action,
}

impl NoiseState {
    pub fn offset(&self) -> Action {
        self.offset
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, amp: f64) -> f64 {
    if amp > 0.0 { rng.random_range(-amp..amp) } else { 0.0 }
}

/// Adds the held offset to `base`, drawing a new offset every `period` ticks.
/// With both amplitudes zero the rng is never touched and `base` passes through.
pub fn disrupted_action<R: Rng + ?Sized>(base: Action, noise: &mut NoiseState, cfg: &NoiseConfig, rng: &mut R) -> Action {
    if cfg.steering_amplitude == 0.0 && cfg.throttle_amplitude == 0.0 {
        return base.clamped();
    }
    if noise.ticks_left == 0 {
        noise.offset = Action::new(uniform(rng, cfg.steering_amplitude), uniform(rng, cfg.throttle_amplitude));
        noise.ticks_left = cfg.period;
    }
    noise.ticks_left -= 1;
    Action::new(
        base.steering + noise.offset.steering,
        base.throttle_brake + noise.offset.throttle_brake,
    )
    .clamped()
}
