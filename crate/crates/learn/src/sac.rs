//! Soft actor-critic with twin critics and automatic temperature.
//!
//! The policy works in a normalized action space `[-1, 1]^2`; [`to_action`]
//! scales it to steering and throttle/brake bounds. The actor emits a mean
//! and log-std per dimension and actions are `tanh(mu + sigma * eps)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use visracer_core::dynamics::STEER_LIMIT;
use visracer_core::Action;
use visracer_nn::{Adam, AdamConfig, LayerSpec, Network, NnError, Tensor};

pub const ACT_DIM: usize = 2;
pub const LOG_STD_MIN: f32 = -20.0;
pub const LOG_STD_MAX: f32 = 2.0;
/// Physical half-range of each action dimension.
pub const ACTION_SCALE: [f64; ACT_DIM] = [STEER_LIMIT, 1.0];

const HALF_LOG_2PI: f32 = 0.918_938_5;

#[derive(Debug, Error)]
pub enum SacError {
    #[error("non-finite {what}")]
    NonFiniteLoss { what: &'static str },
    #[error("non-finite observation")]
    NonFiniteObservation,
    #[error("observation has {actual} values, policy expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T, E = SacError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f32,
    pub critic_lr: f32,
    pub alpha_lr: f32,
    pub initial_alpha: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Uniform-random actions before the policy takes over.
    pub warmup_steps: usize,
    /// Defaults to `-ACT_DIM` when absent.
    pub target_entropy: Option<f64>,
    pub hidden: usize,
    /// Gradient steps per collected transition.
    pub updates_per_step: f64,
    /// Wall penalty weight, s^2/m^2.
    pub c_w: f64,
    /// Seconds per trial.
    pub trial_duration: f64,
    pub trials_per_epoch: usize,
    /// Render-to-policy lag in control ticks.
    pub frame_delay: usize,
    /// Control ticks each policy action is held for.
    pub control_steps_per_env_step: usize,
    pub epochs: usize,
    /// Initial speed at the start of a training trial, m/s.
    pub trial_start_speed: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.98,
            tau: 0.005,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            initial_alpha: 1.0,
            batch_size: 256,
            replay_capacity: 300_000,
            warmup_steps: 3_000,
            target_entropy: None,
            hidden: 256,
            updates_per_step: 1.0,
            c_w: 0.01,
            trial_duration: 100.0,
            trials_per_epoch: 20,
            frame_delay: 4,
            control_steps_per_env_step: 1,
            epochs: 400,
            trial_start_speed: 10.0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err("gamma must be in (0, 1)".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err("tau must be in (0, 1]".into());
        }
        if !(self.c_w >= 0.0) {
            return Err("c_w must be non-negative".into());
        }
        if self.batch_size == 0 || self.hidden == 0 || self.replay_capacity < self.batch_size {
            return Err("batch_size and hidden must be positive and fit in the replay buffer".into());
        }
        if self.control_steps_per_env_step == 0 || self.trials_per_epoch == 0 || !(self.trial_duration > 0.0) {
            return Err("trial protocol values must be positive".into());
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.alpha_lr > 0.0 && self.initial_alpha > 0.0) {
            return Err("learning rates and initial_alpha must be positive".into());
        }
        if !(self.updates_per_step >= 0.0) {
            return Err("updates_per_step must be non-negative".into());
        }
        Ok(())
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy.unwrap_or(-(ACT_DIM as f64))
    }
}

/// Normalized action to physical bounds.
pub fn to_action(a: &[f64]) -> Action {
    Action::new(a[0] * ACTION_SCALE[0], a[1] * ACTION_SCALE[1])
}

pub fn from_action(a: &Action) -> [f64; ACT_DIM] {
    [a.steering / ACTION_SCALE[0], a.throttle_brake / ACTION_SCALE[1]]
}

fn mlp(inputs: usize, hidden: usize, outputs: usize, seed: u64) -> Result<Network> {
    Ok(Network::new(
        vec![inputs],
        vec![
            LayerSpec::Dense { inputs, outputs: hidden },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: hidden,
                outputs: hidden,
            },
            LayerSpec::Relu,
            LayerSpec::Dense { inputs: hidden, outputs },
        ],
        seed,
    )?)
}

/// `log(1 - tanh(u)^2)` without cancellation for large `|u|`.
fn log_one_minus_tanh_sq(u: f32) -> f32 {
    // log(sech^2 u) = 2 (log 2 - u - softplus(-2u))
    let x = -2.0 * u;
    let softplus = if x > 20.0 { x } else { x.exp().ln_1p() };
    2.0 * (std::f32::consts::LN_2 - u - softplus)
}

/// One squashed-Gaussian draw with everything the actor gradient needs.
#[derive(Clone, Copy, Debug)]
struct Draw {
    eps: [f32; ACT_DIM],
    sigma: [f32; ACT_DIM],
    tanh_u: [f32; ACT_DIM],
    /// Log-std hit a clamp bound; its gradient is zero.
    clamped: [bool; ACT_DIM],
    log_prob: f32,
}

fn draw(head: &[f32], eps: [f32; ACT_DIM]) -> Draw {
    let mut d = Draw {
        eps,
        sigma: [0.0; ACT_DIM],
        tanh_u: [0.0; ACT_DIM],
        clamped: [false; ACT_DIM],
        log_prob: 0.0,
    };
    for i in 0..ACT_DIM {
        let raw = head[ACT_DIM + i];
        let log_std = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
        d.clamped[i] = log_std != raw;
        d.sigma[i] = log_std.exp();
        let u = head[i] + d.sigma[i] * eps[i];
        d.tanh_u[i] = u.tanh();
        d.log_prob += -0.5 * eps[i] * eps[i] - log_std - HALF_LOG_2PI - log_one_minus_tanh_sq(u);
    }
    d
}

/// Gaussian policy trunk `obs -> hidden -> hidden -> (mean, log-std)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    pub net: Network,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    Stochastic,
    Deterministic,
}

impl PolicyNet {
    pub fn new(obs_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            net: mlp(obs_dim, hidden, 2 * ACT_DIM, seed)?,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_shape()[0]
    }

    /// Normalized action in `[-1, 1]^2` and its log-density in that space.
    pub fn act_normalized<R: Rng + ?Sized>(&self, obs: &[f64], mode: ActionMode, rng: &mut R) -> Result<([f64; ACT_DIM], f64)> {
        if obs.len() != self.obs_dim() {
            return Err(SacError::DimensionMismatch {
                expected: self.obs_dim(),
                actual: obs.len(),
            });
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(SacError::NonFiniteObservation);
        }
        let x = Tensor::new(vec![1, obs.len()], obs.iter().map(|&v| v as f32).collect())?;
        let head = self.net.predict(&x)?;
        let eps = match mode {
            ActionMode::Stochastic => [rng.sample::<f32, _>(StandardNormal), rng.sample::<f32, _>(StandardNormal)],
            ActionMode::Deterministic => [0.0; ACT_DIM],
        };
        let d = draw(head.data(), eps);
        Ok((d.tanh_u.map(|v| v as f64), d.log_prob as f64))
    }

    /// Physical action and its log-density over physical action space.
    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &[f64], mode: ActionMode, rng: &mut R) -> Result<(Action, f64)> {
        let (a, lp) = self.act_normalized(obs, mode, rng)?;
        let jac: f64 = ACTION_SCALE.iter().map(|b| b.ln()).sum();
        Ok((to_action(&a).clamped(), lp - jac))
    }

    /// Log-density of a normalized action `a` in `(-1, 1)^2`.
    pub fn log_prob_normalized(&self, obs: &[f64], a: &[f64; ACT_DIM]) -> Result<f64> {
        let x = Tensor::new(vec![1, obs.len()], obs.iter().map(|&v| v as f32).collect())?;
        let head = self.net.predict(&x)?;
        let h = head.data();
        let mut lp = 0.0;
        for i in 0..ACT_DIM {
            let log_std = (h[ACT_DIM + i] as f64).clamp(LOG_STD_MIN as f64, LOG_STD_MAX as f64);
            let u = a[i].atanh();
            let eps = (u - h[i] as f64) / log_std.exp();
            lp += -0.5 * eps * eps - log_std - HALF_LOG_2PI as f64 - (1.0 - a[i] * a[i]).ln();
        }
        Ok(lp)
    }
}

/// Twin Q-networks `(obs, action) -> hidden -> hidden -> 1` with target copies.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticPair {
    pub q: [Network; 2],
    pub target: [Network; 2],
}

impl CriticPair {
    pub fn new(obs_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        let q1 = mlp(obs_dim + ACT_DIM, hidden, 1, seed)?;
        let q2 = mlp(obs_dim + ACT_DIM, hidden, 1, seed.wrapping_add(1))?;
        Ok(Self {
            target: [q1.clone(), q2.clone()],
            q: [q1, q2],
        })
    }

    pub fn soft_update(&mut self, tau: f32) -> Result<()> {
        for i in 0..2 {
            self.target[i].soft_update_from(&self.q[i], tau)?;
        }
        Ok(())
    }
}

/// One stored step. Observations are kept as `f32` like the networks' inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f32>,
    /// Normalized action in `[-1, 1]^2`.
    pub action: [f32; ACT_DIM],
    pub reward: f32,
    pub next_obs: Vec<f32>,
    /// Non-recoverable termination: no bootstrap from `next_obs`.
    pub done: bool,
    /// Time-limit cut: bootstraps normally.
    pub truncated: bool,
}

/// Fixed-capacity ring buffer evicting oldest-first.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    obs_dim: usize,
    capacity: usize,
    len: usize,
    head: usize,
    obs: Vec<f32>,
    next_obs: Vec<f32>,
    actions: Vec<f32>,
    rewards: Vec<f32>,
    dones: Vec<f32>,
}

/// Column-major view of sampled transitions, ready for the networks.
#[derive(Clone, Debug)]
pub struct Batch {
    pub obs: Tensor,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    pub next_obs: Tensor,
    pub dones: Vec<f32>,
}

impl ReplayBuffer {
    pub fn new(obs_dim: usize, capacity: usize) -> Self {
        Self {
            obs_dim,
            capacity,
            len: 0,
            head: 0,
            obs: Vec::new(),
            next_obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.obs.len() != self.obs_dim || t.next_obs.len() != self.obs_dim {
            return Err(SacError::DimensionMismatch {
                expected: self.obs_dim,
                actual: t.obs.len(),
            });
        }
        let d = self.obs_dim;
        let done = if t.done { 1.0 } else { 0.0 };
        if self.len < self.capacity {
            self.obs.extend_from_slice(&t.obs);
            self.next_obs.extend_from_slice(&t.next_obs);
            self.actions.extend_from_slice(&t.action);
            self.rewards.push(t.reward);
            self.dones.push(done);
            self.len += 1;
        } else {
            let i = self.head;
            self.obs[i * d..(i + 1) * d].copy_from_slice(&t.obs);
            self.next_obs[i * d..(i + 1) * d].copy_from_slice(&t.next_obs);
            self.actions[i * ACT_DIM..(i + 1) * ACT_DIM].copy_from_slice(&t.action);
            self.rewards[i] = t.reward;
            self.dones[i] = done;
        }
        self.head = (self.head + 1) % self.capacity;
        Ok(())
    }

    /// Reward stored in slot `i` (insertion order modulo capacity).
    pub fn reward_at(&self, i: usize) -> f32 {
        self.rewards[i]
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Batch {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.len)).collect();
        self.gather(&idx)
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let d = self.obs_dim;
        let mut obs = Vec::with_capacity(idx.len() * d);
        let mut next = Vec::with_capacity(idx.len() * d);
        let mut actions = Vec::with_capacity(idx.len() * ACT_DIM);
        for &i in idx {
            obs.extend_from_slice(&self.obs[i * d..(i + 1) * d]);
            next.extend_from_slice(&self.next_obs[i * d..(i + 1) * d]);
            actions.extend_from_slice(&self.actions[i * ACT_DIM..(i + 1) * ACT_DIM]);
        }
        Batch {
            obs: Tensor::new(vec![idx.len(), d], obs).unwrap(),
            actions,
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_obs: Tensor::new(vec![idx.len(), d], next).unwrap(),
            dones: idx.iter().map(|&i| self.dones[i]).collect(),
        }
    }
}

fn concat_actions(obs: &Tensor, actions: &[f32]) -> Tensor {
    let n = obs.batch();
    let d = obs.row_len();
    let mut data = Vec::with_capacity(n * (d + ACT_DIM));
    for i in 0..n {
        data.extend_from_slice(obs.row(i));
        data.extend_from_slice(&actions[i * ACT_DIM..(i + 1) * ACT_DIM]);
    }
    Tensor::new(vec![n, d + ACT_DIM], data).unwrap()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    /// Mean of `-log pi` over the batch.
    pub entropy: f64,
}

#[derive(Clone, Debug)]
pub struct SacAgent {
    pub cfg: SacConfig,
    pub policy: PolicyNet,
    pub critics: CriticPair,
    pub log_alpha: f64,
    actor_opt: Adam,
    critic_opt: [Adam; 2],
    alpha_opt: Adam,
    updates: u64,
}

impl SacAgent {
    pub fn new(obs_dim: usize, cfg: SacConfig, seed: u64) -> Result<Self> {
        let policy = PolicyNet::new(obs_dim, cfg.hidden, seed)?;
        let critics = CriticPair::new(obs_dim, cfg.hidden, seed.wrapping_add(100))?;
        let adam = |lr: f32| AdamConfig { lr, ..AdamConfig::default() };
        Ok(Self {
            actor_opt: Adam::new(policy.net.param_count(), adam(cfg.actor_lr)),
            critic_opt: [
                Adam::new(critics.q[0].param_count(), adam(cfg.critic_lr)),
                Adam::new(critics.q[1].param_count(), adam(cfg.critic_lr)),
            ],
            alpha_opt: Adam::new(1, adam(cfg.alpha_lr)),
            log_alpha: cfg.initial_alpha.ln(),
            policy,
            critics,
            cfg,
            updates: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Clipped double-Q soft Bellman targets for `batch`.
    pub fn critic_targets<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Result<Vec<f32>> {
        let n = batch.rewards.len();
        let head = self.policy.net.predict(&batch.next_obs)?;
        let mut next_a = Vec::with_capacity(n * ACT_DIM);
        let mut next_lp = Vec::with_capacity(n);
        for i in 0..n {
            let d = draw(head.row(i), [rng.sample(StandardNormal), rng.sample(StandardNormal)]);
            next_a.extend_from_slice(&d.tanh_u);
            next_lp.push(d.log_prob);
        }
        let x = concat_actions(&batch.next_obs, &next_a);
        let q1 = self.critics.target[0].predict(&x)?;
        let q2 = self.critics.target[1].predict(&x)?;
        let alpha = self.alpha() as f32;
        let gamma = self.cfg.gamma as f32;
        Ok((0..n)
            .map(|i| {
                let v = q1.data()[i].min(q2.data()[i]) - alpha * next_lp[i];
                batch.rewards[i] + gamma * (1.0 - batch.dones[i]) * v
            })
            .collect())
    }

    /// Mean squared error of both critics against `targets`, with gradients
    /// applied when `apply` is set. Returns the mean of the two losses.
    pub fn critic_step(&mut self, batch: &Batch, targets: &[f32], apply: bool) -> Result<f64> {
        let n = targets.len();
        let x = concat_actions(&batch.obs, &batch.actions);
        let mut total = 0.0;
        for k in 0..2 {
            let (q, acts) = self.critics.q[k].forward(&x)?;
            let mut loss = 0.0f64;
            let mut g = Vec::with_capacity(n);
            for (&qi, &ti) in q.data().iter().zip(targets) {
                let e = qi - ti;
                loss += (e as f64) * (e as f64);
                g.push(2.0 * e / n as f32);
            }
            loss /= n as f64;
            if !loss.is_finite() {
                return Err(SacError::NonFiniteLoss { what: "critic loss" });
            }
            total += loss;
            if apply {
                let grads = self.critics.q[k].backward_params(&acts, &Tensor::new(vec![n, 1], g)?)?;
                self.critic_opt[k].step(self.critics.q[k].params_mut(), &grads);
            }
        }
        Ok(total / 2.0)
    }

    /// Actor objective `mean(alpha * log pi - min Q)` at fixed noise `eps`
    /// (two values per row), its parameter gradient and the mean log-density.
    pub fn actor_loss_and_grad(&self, obs: &Tensor, eps: &[f32]) -> Result<(f64, Vec<f32>, f64)> {
        let n = obs.batch();
        let (head, acts) = self.policy.net.forward(obs)?;
        let draws: Vec<Draw> = (0..n).map(|i| draw(head.row(i), [eps[2 * i], eps[2 * i + 1]])).collect();
        let a: Vec<f32> = draws.iter().flat_map(|d| d.tanh_u).collect();
        let x = concat_actions(obs, &a);
        let obs_dim = obs.row_len();
        let mut q = Vec::new();
        let mut dq_da = Vec::new();
        for k in 0..2 {
            let (out, qa) = self.critics.q[k].forward(&x)?;
            let ones = Tensor::new(vec![n, 1], vec![1.0; n])?;
            let gi = self.critics.q[k].backward(&qa, &ones)?.input.expect("input gradient");
            q.push(out.into_data());
            dq_da.push(gi);
        }
        let alpha = self.alpha() as f32;
        let inv_n = 1.0 / n as f32;
        let mut grad = vec![0.0f32; n * 2 * ACT_DIM];
        let mut loss = 0.0f64;
        let mut lp_sum = 0.0f64;
        for (i, d) in draws.iter().enumerate() {
            let k = if q[0][i] <= q[1][i] { 0 } else { 1 };
            loss += (alpha * d.log_prob - q[k][i]) as f64;
            lp_sum += d.log_prob as f64;
            let row = dq_da[k].row(i);
            for j in 0..ACT_DIM {
                let t = d.tanh_u[j];
                let dq = row[obs_dim + j] * (1.0 - t * t);
                let se = d.sigma[j] * d.eps[j];
                // d logpi / d mu = 2 tanh(u); d logpi / d log_std = -1 + 2 tanh(u) sigma eps
                grad[i * 2 * ACT_DIM + j] = inv_n * (alpha * 2.0 * t - dq);
                if !d.clamped[j] {
                    grad[i * 2 * ACT_DIM + ACT_DIM + j] = inv_n * (alpha * (-1.0 + 2.0 * t * se) - dq * se);
                }
            }
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(SacError::NonFiniteLoss { what: "actor loss" });
        }
        let g = self.policy.net.backward_params(&acts, &Tensor::new(vec![n, 2 * ACT_DIM], grad)?)?;
        Ok((loss, g, lp_sum / n as f64))
    }

    /// Reparameterized actor step and temperature step on `batch.obs`.
    fn actor_step<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<(f64, f64)> {
        let n = batch.obs.batch();
        let eps: Vec<f32> = (0..n * ACT_DIM).map(|_| rng.sample(StandardNormal)).collect();
        let (loss, g, mean_lp) = self.actor_loss_and_grad(&batch.obs, &eps)?;
        self.actor_opt.step(self.policy.net.params_mut(), &g);
        let g_alpha = -(mean_lp + self.cfg.target_entropy());
        let mut la = [self.log_alpha as f32];
        self.alpha_opt.step(&mut la, &[g_alpha as f32]);
        self.log_alpha = la[0] as f64;
        Ok((loss, -mean_lp))
    }

    /// One gradient step each for critics, actor and temperature, then
    /// polyak averaging of the target critics.
    pub fn update<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<UpdateReport> {
        let batch = buffer.sample(self.cfg.batch_size, rng);
        self.update_on(&batch, rng)
    }

    pub fn update_on<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<UpdateReport> {
        let targets = self.critic_targets(batch, rng)?;
        let critic_loss = self.critic_step(batch, &targets, true)?;
        let (actor_loss, entropy) = self.actor_step(batch, rng)?;
        self.critics.soft_update(self.cfg.tau as f32)?;
        self.updates += 1;
        Ok(UpdateReport {
            critic_loss,
            actor_loss,
            alpha: self.alpha(),
            entropy,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> SacConfig {
        SacConfig {
            hidden: 16,
            batch_size: 8,
            replay_capacity: 64,
            ..SacConfig::default()
        }
    }

    fn transition(obs_dim: usize, v: f32) -> Transition {
        Transition {
            obs: vec![v; obs_dim],
            action: [v.sin(), v.cos()],
            reward: v,
            next_obs: vec![v + 1.0; obs_dim],
            done: false,
            truncated: false,
        }
    }

    #[test]
    fn stochastic_actions_stay_in_bounds() {
        let p = PolicyNet::new(5, 16, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..10_000 {
            let obs: Vec<f64> = (0..5).map(|j| ((i * 7 + j) as f64).sin() * 50.0).collect();
            let (a, lp) = p.sample_action(&obs, ActionMode::Stochastic, &mut rng).unwrap();
            assert!(a.in_bounds() && lp.is_finite());
        }
    }

    #[test]
    fn deterministic_mode_ignores_rng() {
        let p = PolicyNet::new(4, 16, 3).unwrap();
        let obs = [0.3, -0.2, 1.0, 0.0];
        let a = p.sample_action(&obs, ActionMode::Deterministic, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = p.sample_action(&obs, ActionMode::Deterministic, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_observation_is_rejected() {
        let p = PolicyNet::new(2, 8, 0).unwrap();
        let r = p.sample_action(&[f64::NAN, 0.0], ActionMode::Deterministic, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(SacError::NonFiniteObservation)));
    }

    #[test]
    fn sampled_log_prob_matches_density_formula() {
        let p = PolicyNet::new(3, 16, 9).unwrap();
        let obs = [0.5, -1.0, 0.25];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (a, lp) = p.act_normalized(&obs, ActionMode::Stochastic, &mut rng).unwrap();
            if a.iter().any(|v| v.abs() > 0.999) {
                continue;
            }
            let direct = p.log_prob_normalized(&obs, &a).unwrap();
            assert!((lp - direct).abs() < 1e-3, "{lp} vs {direct}");
        }
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut agent = SacAgent::new(3, small_cfg(), 4).unwrap();
        agent.log_alpha = 0.3f64.ln();
        let obs = Tensor::new(vec![4, 3], (0..12).map(|i| (i as f32 * 0.7).sin()).collect()).unwrap();
        let eps: Vec<f32> = (0..8).map(|i| (i as f32 * 1.3).cos()).collect();
        let (_, g, _) = agent.actor_loss_and_grad(&obs, &eps).unwrap();
        let n = agent.policy.net.param_count();
        let mut worst = 0.0f64;
        for j in (0..n).step_by(7) {
            let mut plus = agent.clone();
            plus.policy.net.params_mut()[j] += 3e-3;
            let mut minus = agent.clone();
            minus.policy.net.params_mut()[j] -= 3e-3;
            let fp = plus.actor_loss_and_grad(&obs, &eps).unwrap().0;
            let fm = minus.actor_loss_and_grad(&obs, &eps).unwrap().0;
            let num = (fp - fm) / 6e-3;
            let e = (num - g[j] as f64).abs() / num.abs().max(g[j].abs() as f64).max(1e-2);
            worst = worst.max(e);
        }
        assert!(worst < 2e-2, "{worst}");
    }

    #[test]
    fn replay_evicts_oldest_first() {
        let mut b = ReplayBuffer::new(3, 4);
        for v in 0..6 {
            b.push(&transition(3, v as f32)).unwrap();
            assert!(b.len() <= 4);
        }
        assert_eq!(b.len(), 4);
        // slots 0 and 1 were overwritten by the 5th and 6th pushes
        let r: Vec<f32> = (0..4).map(|i| b.reward_at(i)).collect();
        assert_eq!(r, vec![4.0, 5.0, 2.0, 3.0]);
    }

    #[test]
    fn polyak_with_unit_tau_copies_online_critics() {
        let mut cfg = small_cfg();
        cfg.tau = 1.0;
        let mut agent = SacAgent::new(3, cfg, 1).unwrap();
        let mut buf = ReplayBuffer::new(3, 64);
        for v in 0..20 {
            buf.push(&transition(3, v as f32 * 0.1)).unwrap();
        }
        agent.update(&buf, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for k in 0..2 {
            assert_eq!(agent.critics.target[k].params(), agent.critics.q[k].params());
        }
    }

    #[test]
    fn critic_loss_vanishes_on_matching_targets() {
        let mut agent = SacAgent::new(3, small_cfg(), 2).unwrap();
        let mut buf = ReplayBuffer::new(3, 64);
        for v in 0..8 {
            buf.push(&transition(3, v as f32 * 0.3)).unwrap();
        }
        let batch = buf.gather(&(0..8).collect::<Vec<_>>());
        // make both critics identical so one target vector matches both
        let p = agent.critics.q[0].params().to_vec();
        agent.critics.q[1].set_params(&p).unwrap();
        let q = agent.critics.q[0]
            .predict(&concat_actions(&batch.obs, &batch.actions))
            .unwrap()
            .into_data();
        assert_eq!(agent.critic_step(&batch, &q, false).unwrap(), 0.0);
    }
}
