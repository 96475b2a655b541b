//! One-step sanity task: observe `x ~ U(-1, 1)`, act `a`, receive `-(x - a)^2`.
//!
//! Only the first action dimension is scored; the second is ignored.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sac::{ActionMode, ReplayBuffer, Result, SacAgent, SacConfig, Transition};
use crate::seed;

pub fn toy_reward(x: f64, a: f64) -> f64 {
    -(x - a) * (x - a)
}

pub fn toy_config() -> SacConfig {
    SacConfig {
        hidden: 64,
        batch_size: 64,
        replay_capacity: 10_000,
        warmup_steps: 256,
        actor_lr: 1e-3,
        critic_lr: 1e-3,
        alpha_lr: 1e-3,
        initial_alpha: 0.1,
        ..SacConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyOutcome {
    /// `(updates so far, mean deterministic evaluation reward)`.
    pub curve: Vec<(u64, f64)>,
    pub final_reward: f64,
}

/// Deterministic-policy mean reward on a fixed grid of states.
pub fn evaluate_toy(agent: &SacAgent) -> Result<f64> {
    let n = 201;
    let mut total = 0.0;
    let mut rng = seed::stream(0, "toy-eval");
    for i in 0..n {
        let x = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
        let (a, _) = agent.policy.act_normalized(&[x], ActionMode::Deterministic, &mut rng)?;
        total += toy_reward(x, a[0]);
    }
    Ok(total / n as f64)
}

/// One environment step and one update per iteration after warmup.
pub fn train_toy(cfg: &SacConfig, seed_root: u64, updates: u64, eval_every: u64) -> Result<ToyOutcome> {
    let mut agent = SacAgent::new(1, cfg.clone(), seed::stream_seed(seed_root, "init"))?;
    let mut env_rng = seed::stream(seed_root, "collect");
    let mut sac_rng = seed::stream(seed_root, "sac");
    let mut buffer = ReplayBuffer::new(1, cfg.replay_capacity);
    let mut curve = Vec::new();
    let mut steps = 0usize;
    while agent.updates() < updates {
        let x: f64 = env_rng.random_range(-1.0..1.0);
        let a = if steps < cfg.warmup_steps {
            [env_rng.random_range(-1.0..1.0), env_rng.random_range(-1.0..1.0)]
        } else {
            agent.policy.act_normalized(&[x], ActionMode::Stochastic, &mut env_rng)?.0
        };
        buffer.push(&Transition {
            obs: vec![x as f32],
            action: [a[0] as f32, a[1] as f32],
            reward: toy_reward(x, a[0]) as f32,
            next_obs: vec![x as f32],
            done: true,
            truncated: false,
        })?;
        steps += 1;
        if buffer.len() >= cfg.batch_size && steps >= cfg.warmup_steps {
            agent.update(&buffer, &mut sac_rng)?;
            if agent.updates() % eval_every == 0 {
                curve.push((agent.updates(), evaluate_toy(&agent)?));
            }
        }
    }
    let final_reward = evaluate_toy(&agent)?;
    Ok(ToyOutcome { curve, final_reward })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_shape() {
        assert_eq!(toy_reward(0.5, 0.5), 0.0);
        assert_eq!(toy_reward(1.0, -1.0), -4.0);
    }
}
