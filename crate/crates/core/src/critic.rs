//! Twin Q-networks, clipped double-Q targets and Polyak averaging.

use crate::data::Batch;
use crate::engine::{Activation, BoundMlp, MlpParams, MlpSpec, Tape, Tensor, Var};
use crate::error::{Error, Result};
use rand::Rng;

/// Online critics `q1`, `q2` and their slowly moving targets.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticPair {
    pub q1: MlpParams,
    pub q2: MlpParams,
    pub q1_target: MlpParams,
    pub q2_target: MlpParams,
}

impl CriticPair {
    /// Independent online critics; targets start as exact copies.
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let mut spec = MlpSpec::new(obs_dim + act_dim, hidden.to_vec(), 1);
        spec.hidden_activation = activation;
        let q1 = MlpParams::init(&spec, rng);
        let q2 = MlpParams::init(&spec, rng);
        Self {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundCritics {
        BoundCritics {
            q1: self.q1.bind(tape, trainable),
            q2: self.q2.bind(tape, trainable),
        }
    }

    /// `min(q1(s,a), q2(s,a))` of the online critics, no gradient.
    pub fn q_min(&self, states: &Tensor, actions: &Tensor) -> Result<Tensor> {
        let x = Tensor::concat_cols(&[states, actions])?;
        let (a, b) = (self.q1.infer(&x)?, self.q2.infer(&x)?);
        Ok(elementwise_min(&a, &b))
    }
}

fn elementwise_min(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| x.min(*y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

/// The two online critics bound to a tape.
pub struct BoundCritics {
    pub q1: BoundMlp,
    pub q2: BoundMlp,
}

impl BoundCritics {
    pub fn q_values(&self, tape: &mut Tape, states: Var, actions: Var) -> Result<(Var, Var)> {
        let x = tape.concat(&[states, actions])?;
        Ok((self.q1.forward(tape, x)?, self.q2.forward(tape, x)?))
    }
}

/// `y = r + γ(1 − done)·min(q1'(s', a'), q2'(s', a'))`, one row per sample.
///
/// The result is a plain tensor, so nothing downstream can differentiate
/// into the target networks.
pub fn td_targets(
    batch: &Batch,
    next_actions: &Tensor,
    critics: &CriticPair,
    gamma: f64,
) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config(format!("discount {gamma} outside [0, 1]")));
    }
    let x = Tensor::concat_cols(&[&batch.next_observations, next_actions])?;
    let q1 = critics.q1_target.infer(&x)?;
    let q2 = critics.q2_target.infer(&x)?;
    let data = (0..batch.len())
        .map(|k| {
            let mask = if batch.terminals[k] { 0.0 } else { 1.0 };
            batch.rewards[k] + gamma * mask * q1.data()[k].min(q2.data()[k])
        })
        .collect();
    Tensor::matrix(batch.len(), 1, data)
}

/// `mean((q1(s,a) − y)² + (q2(s,a) − y)²)`.
pub fn critic_loss(
    tape: &mut Tape,
    critics: &BoundCritics,
    batch: &Batch,
    targets: &Tensor,
) -> Result<Var> {
    let s = tape.constant(batch.observations.clone());
    let a = tape.constant(batch.actions.clone());
    let y = tape.constant(targets.clone());
    let (q1, q2) = critics.q_values(tape, s, a)?;
    let d1 = tape.sub(q1, y)?;
    let d2 = tape.sub(q2, y)?;
    let e1 = tape.square(d1);
    let e2 = tape.square(d2);
    let total = tape.add(e1, e2)?;
    Ok(tape.mean(total))
}

/// `target ← ρ·target + (1 − ρ)·online`, entry by entry.
pub fn polyak_update(target: &mut MlpParams, online: &MlpParams, rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Config(format!("polyak rate {rho} outside [0, 1)")));
    }
    if target.num_params() != online.num_params()
        || target
            .tensors()
            .zip(online.tensors())
            .any(|(t, o)| t.shape() != o.shape())
    {
        return Err(Error::Dimension(
            "target and online networks differ in shape".into(),
        ));
    }
    for (t, o) in target.tensors_mut().zip(online.tensors()) {
        for (t, o) in t.data_mut().iter_mut().zip(o.data()) {
            *t = rho * *t + (1.0 - rho) * o;
        }
    }
    Ok(())
}
