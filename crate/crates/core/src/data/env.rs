//! Desk-scale environments with scripted behaviour policies.

use crate::error::{Error, Result};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Result of one environment transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Env {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn max_steps(&self) -> usize;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Step;
    /// Action of the scripted near-optimal controller.
    fn expert_action(&self, observation: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    Bandit2d,
    Pointmaze,
}

impl EnvName {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::Bandit2d => "bandit2d",
            EnvName::Pointmaze => "pointmaze",
        }
    }

    pub fn make(self) -> Box<dyn Env> {
        match self {
            EnvName::Bandit2d => Box::new(Bandit2d::default()),
            EnvName::Pointmaze => Box::new(PointMaze::default()),
        }
    }
}

impl std::str::FromStr for EnvName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bandit2d" => Ok(EnvName::Bandit2d),
            "pointmaze" => Ok(EnvName::Pointmaze),
            other => Err(Error::Config(format!("unknown environment `{other}`"))),
        }
    }
}

/// Uniform action in `[-1, 1]^d`.
pub fn random_action(act_dim: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    (0..act_dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

fn clamp_unit(a: &[f64]) -> Vec<f64> {
    a.iter().map(|v| v.clamp(-1.0, 1.0)).collect()
}

/// Single-step task whose good actions form two separated clusters.
#[derive(Clone, Debug, Default)]
pub struct Bandit2d {
    done: bool,
}

impl Bandit2d {
    pub const CENTERS: [[f64; 2]; 2] = [[-0.6, -0.6], [0.6, 0.6]];
    pub const SIGMA: f64 = 0.05;

    /// Index of the nearest mode and the distance to it.
    pub fn nearest_center(action: &[f64]) -> (usize, f64) {
        let d = |c: &[f64; 2]| ((action[0] - c[0]).powi(2) + (action[1] - c[1]).powi(2)).sqrt();
        let (d0, d1) = (d(&Self::CENTERS[0]), d(&Self::CENTERS[1]));
        if d0 <= d1 {
            (0, d0)
        } else {
            (1, d1)
        }
    }

    pub fn reward(action: &[f64]) -> f64 {
        1.0 - Self::nearest_center(action).1
    }
}

impl Env for Bandit2d {
    fn obs_dim(&self) -> usize {
        1
    }

    fn act_dim(&self) -> usize {
        2
    }

    fn max_steps(&self) -> usize {
        1
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Vec<f64> {
        self.done = false;
        vec![0.0]
    }

    fn step(&mut self, action: &[f64]) -> Step {
        self.done = true;
        Step {
            observation: vec![0.0],
            reward: Self::reward(&clamp_unit(action)),
            done: true,
        }
    }

    /// Picks a mode uniformly and adds isotropic Gaussian noise.
    fn expert_action(&self, _observation: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let c = Self::CENTERS[rng.gen_range(0..2)];
        let noise = Normal::new(0.0, Self::SIGMA).unwrap();
        clamp_unit(&[c[0] + noise.sample(rng), c[1] + noise.sample(rng)])
    }
}

/// Point mass with bounded acceleration in the unit box; reward 1 on
/// entering the goal disc, which ends the episode.
#[derive(Clone, Debug)]
pub struct PointMaze {
    pos: [f64; 2],
    vel: [f64; 2],
    steps: usize,
}

impl Default for PointMaze {
    fn default() -> Self {
        Self {
            pos: [0.0; 2],
            vel: [0.0; 2],
            steps: 0,
        }
    }
}

impl PointMaze {
    pub const GOAL: [f64; 2] = [0.9, 0.9];
    pub const GOAL_RADIUS: f64 = 0.1;
    /// Episodes never start closer than this to the goal centre.
    pub const MIN_START_DISTANCE: f64 = 0.3;
    pub const MAX_STEPS: usize = 100;
    const DAMPING: f64 = 0.5;
    const ACCEL: f64 = 0.01;
    /// Terminal speed per axis under full acceleration.
    const MAX_SPEED: f64 = 0.02;
    const EXPERT_GAIN: f64 = 10.0;
    const EXPERT_NOISE: f64 = 0.1;

    fn observation(&self) -> Vec<f64> {
        vec![
            self.pos[0],
            self.pos[1],
            self.vel[0] / Self::MAX_SPEED,
            self.vel[1] / Self::MAX_SPEED,
        ]
    }

    fn goal_distance(pos: &[f64]) -> f64 {
        ((pos[0] - Self::GOAL[0]).powi(2) + (pos[1] - Self::GOAL[1]).powi(2)).sqrt()
    }
}

impl Env for PointMaze {
    fn obs_dim(&self) -> usize {
        4
    }

    fn act_dim(&self) -> usize {
        2
    }

    fn max_steps(&self) -> usize {
        Self::MAX_STEPS
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        loop {
            let p = [rng.gen::<f64>(), rng.gen::<f64>()];
            if Self::goal_distance(&p) >= Self::MIN_START_DISTANCE {
                self.pos = p;
                break;
            }
        }
        self.vel = [0.0; 2];
        self.steps = 0;
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Step {
        let a = clamp_unit(action);
        for k in 0..2 {
            self.vel[k] = Self::DAMPING * self.vel[k] + Self::ACCEL * a[k];
            self.pos[k] += self.vel[k];
            if !(0.0..=1.0).contains(&self.pos[k]) {
                self.pos[k] = self.pos[k].clamp(0.0, 1.0);
                self.vel[k] = 0.0;
            }
        }
        self.steps += 1;
        let reached = Self::goal_distance(&self.pos) <= Self::GOAL_RADIUS;
        Step {
            observation: self.observation(),
            reward: if reached { 1.0 } else { 0.0 },
            done: reached || self.steps >= Self::MAX_STEPS,
        }
    }

    /// Saturating proportional controller towards the goal, lightly noised.
    fn expert_action(&self, observation: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let noise = Normal::new(0.0, Self::EXPERT_NOISE).unwrap();
        (0..2)
            .map(|k| {
                let a = Self::EXPERT_GAIN * (Self::GOAL[k] - observation[k]) + noise.sample(rng);
                a.clamp(-1.0, 1.0)
            })
            .collect()
    }
}
