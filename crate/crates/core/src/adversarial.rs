//! Discriminator losses, the down-weight ratio and the policy score term.

use crate::engine::{sigmoid, Activation, BoundMlp, MlpParams, MlpSpec, Tape, Tensor, Var};
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_CLAMP_EPS: f64 = 1e-4;

/// How the network's scalar output is interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Sigmoid probability, clamped into `[clamp_eps, 1 − clamp_eps]`.
    SigmoidProb,
    /// Unbounded Wasserstein critic value.
    RawCritic,
}

/// Which discriminator-derived bonus enters the policy objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreVariant {
    /// `−log(1 − D(s, a))`.
    NeglogOneMinusD,
    /// `f_w(s, a)`.
    RawCriticScore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorNet {
    pub net: MlpParams,
    pub mode: OutputMode,
    pub clamp_eps: f64,
}

impl DiscriminatorNet {
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        activation: Activation,
        mode: OutputMode,
        rng: &mut impl Rng,
    ) -> Self {
        let mut spec = MlpSpec::new(obs_dim + act_dim, hidden.to_vec(), 1);
        spec.hidden_activation = activation;
        Self {
            net: MlpParams::init(&spec, rng),
            mode,
            clamp_eps: DEFAULT_CLAMP_EPS,
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundDiscriminator {
        BoundDiscriminator {
            mlp: self.net.bind(tape, trainable),
            mode: self.mode,
            clamp_eps: self.clamp_eps,
        }
    }

    /// Network output per row: clamped probability or raw critic value.
    pub fn scores(&self, states: &Tensor, actions: &Tensor) -> Result<Tensor> {
        let raw = self.net.infer(&Tensor::concat_cols(&[states, actions])?)?;
        Ok(match self.mode {
            OutputMode::SigmoidProb => raw.map(|v| clamp_prob(sigmoid(v), self.clamp_eps)),
            OutputMode::RawCritic => raw,
        })
    }

    /// Probability that `(s, a)` came from the data. A raw critic is squashed
    /// through a sigmoid first.
    pub fn probabilities(&self, states: &Tensor, actions: &Tensor) -> Result<Tensor> {
        let raw = self.net.infer(&Tensor::concat_cols(&[states, actions])?)?;
        Ok(raw.map(|v| clamp_prob(sigmoid(v), self.clamp_eps)))
    }
}

fn clamp_prob(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0 - eps)
}

pub struct BoundDiscriminator {
    pub mlp: BoundMlp,
    pub mode: OutputMode,
    pub clamp_eps: f64,
}

impl BoundDiscriminator {
    /// `[n, 1]` output for the pairs `(s, a)`.
    pub fn output(&self, tape: &mut Tape, states: Var, actions: Var) -> Result<Var> {
        let x = tape.concat(&[states, actions])?;
        let raw = self.mlp.forward(tape, x)?;
        Ok(match self.mode {
            OutputMode::SigmoidProb => {
                let p = tape.sigmoid(raw);
                tape.clamp(p, self.clamp_eps, 1.0 - self.clamp_eps)
            }
            OutputMode::RawCritic => raw,
        })
    }

    fn require(&self, mode: OutputMode, what: &str) -> Result<()> {
        if self.mode != mode {
            return Err(Error::Config(format!(
                "{what} needs a {mode:?} discriminator, got {:?}",
                self.mode
            )));
        }
        Ok(())
    }
}

fn finite(tape: &Tape, v: Var, what: &str) -> Result<Var> {
    if !tape.value(v).is_finite() {
        return Err(Error::Numeric(format!("{what} is not finite")));
    }
    Ok(v)
}

/// Standard GAN discriminator loss
/// `−mean log D(s, a_data) − mean log(1 − D(s, a_policy))`.
pub fn disc_loss_vanilla(
    tape: &mut Tape,
    disc: &BoundDiscriminator,
    states: Var,
    real: Var,
    fake: Var,
) -> Result<Var> {
    disc.require(OutputMode::SigmoidProb, "vanilla loss")?;
    let d_real = disc.output(tape, states, real)?;
    let d_fake = disc.output(tape, states, fake)?;
    let log_real = tape.log(d_real);
    let one_minus = one_minus(tape, d_fake);
    let log_fake = tape.log(one_minus);
    let total = tape.add(log_real, log_fake)?;
    let mean = tape.mean(total);
    let loss = tape.neg(mean);
    finite(tape, loss, "discriminator loss")
}

/// Wasserstein critic loss `mean f(s, a_policy) − mean f(s, a_data)`.
/// Pair every optimizer step with [`crate::engine::clip_params`].
pub fn disc_loss_wgan(
    tape: &mut Tape,
    disc: &BoundDiscriminator,
    states: Var,
    real: Var,
    fake: Var,
) -> Result<Var> {
    disc.require(OutputMode::RawCritic, "wasserstein loss")?;
    let f_real = disc.output(tape, states, real)?;
    let f_fake = disc.output(tape, states, fake)?;
    let diff = tape.sub(f_fake, f_real)?;
    let loss = tape.mean(diff);
    finite(tape, loss, "discriminator loss")
}

fn one_minus(tape: &mut Tape, x: Var) -> Var {
    let n = tape.neg(x);
    tape.add_scalar(n, 1.0)
}

/// Ratio of clamped probabilities `p_sampled / p_data`.
pub fn down_weight_from_probs(p_sampled: &[f64], p_data: &[f64], clamp_eps: f64) -> Vec<f64> {
    p_sampled
        .iter()
        .zip(p_data)
        .map(|(&a, &b)| clamp_prob(a, clamp_eps) / clamp_prob(b, clamp_eps))
        .collect()
}

/// Per-sample `D(s, a_sampled) / D(s, a_data)` as a plain `[n, 1]` tensor;
/// it carries no gradient by construction.
pub fn down_weight(
    disc: &DiscriminatorNet,
    states: &Tensor,
    sampled: &Tensor,
    data: &Tensor,
) -> Result<Tensor> {
    let p_s = disc.probabilities(states, sampled)?;
    let p_d = disc.probabilities(states, data)?;
    let w = down_weight_from_probs(p_s.data(), p_d.data(), disc.clamp_eps);
    Tensor::matrix(w.len(), 1, w)
}

/// Per-sample score `S_D(s, a)` as `[n, 1]`; differentiable through `actions`.
pub fn score_term(
    tape: &mut Tape,
    disc: &BoundDiscriminator,
    states: Var,
    actions: Var,
    variant: ScoreVariant,
) -> Result<Var> {
    match variant {
        ScoreVariant::NeglogOneMinusD => {
            disc.require(OutputMode::SigmoidProb, "-log(1 - D) score")?;
            let d = disc.output(tape, states, actions)?;
            let om = one_minus(tape, d);
            let l = tape.log(om);
            Ok(tape.neg(l))
        }
        ScoreVariant::RawCriticScore => {
            disc.require(OutputMode::RawCritic, "raw critic score")?;
            disc.output(tape, states, actions)
        }
    }
}
