use super::config::{GanVariant, TrainConfig};
use crate::adversarial::{
    disc_loss_vanilla, disc_loss_wgan, down_weight, score_term, DiscriminatorNet, OutputMode,
    ScoreVariant,
};
use crate::critic::{critic_loss, polyak_update, td_targets, CriticPair};
use crate::data::{sample_batch, Batch, Dataset};
use crate::diffusion::{
    diffusion_loss_per_sample, make_schedule, sample_action, sample_action_graph, BoundPolicy,
    NoiseSchedule, PolicyNet,
};
use crate::engine::{adam_step, clip_params, AdamConfig, AdamState, Tape, Tensor, Var};
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Floor on the α denominator so an all-zero critic cannot divide by zero.
const ALPHA_DENOM_FLOOR: f64 = 1e-8;

/// One stage of a training step, recorded when tracing is enabled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    SampleBatch,
    TargetActions,
    Discriminator,
    Critic,
    Policy,
    Targets,
}

/// Scalars observed during one [`TrainerState::train_step`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepMetrics {
    pub critic_loss: f64,
    pub disc_loss: f64,
    pub mean_q: f64,
    pub policy: Option<PolicyLossParts>,
}

/// Components of the policy loss, as plain numbers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PolicyLossParts {
    pub loss: f64,
    /// `α · mean Q_min(s, a)`, zero when the Q term is off.
    pub q_term: f64,
    /// `λ · mean(w · L_d)`.
    pub diffusion_term: f64,
    pub score_term: f64,
    /// Unweighted mean per-sample diffusion loss.
    pub diffusion_loss: f64,
    pub alpha: f64,
    pub down_weight_mean: f64,
}

/// Source of the per-sample down-weights in the policy loss.
#[derive(Clone, Debug)]
pub enum DownWeights {
    /// Computed from the discriminator on the freshly sampled actions.
    Live,
    /// Supplied values, `[n, 1]`.
    Frozen(Tensor),
}

/// Networks, optimizers and RNG of a run.
#[derive(Clone, Debug)]
pub struct TrainerState {
    pub config: TrainConfig,
    pub schedule: NoiseSchedule,
    pub policy: PolicyNet,
    pub policy_target: PolicyNet,
    pub critics: CriticPair,
    pub disc: DiscriminatorNet,
    pub policy_opt: AdamState,
    pub q1_opt: AdamState,
    pub q2_opt: AdamState,
    pub disc_opt: AdamState,
    /// Completed training steps.
    pub step: u64,
    pub policy_updates: u64,
    pub rng: ChaCha8Rng,
    trace: Option<Vec<Phase>>,
}

impl TrainerState {
    pub fn new(config: TrainConfig, obs_dim: usize, act_dim: usize) -> Result<Self> {
        config.validate()?;
        let schedule = make_schedule(config.diffusion_steps, config.beta_min, config.beta_max)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let hidden = TrainConfig::hidden;
        let policy = PolicyNet::new(
            obs_dim,
            act_dim,
            &hidden(config.policy_hidden, config.policy_layers),
            config.activation,
            &mut rng,
        );
        let critics = CriticPair::new(
            obs_dim,
            act_dim,
            &hidden(config.critic_hidden, config.critic_layers),
            config.activation,
            &mut rng,
        );
        let mode = match config.gan_variant {
            GanVariant::Vanilla => OutputMode::SigmoidProb,
            GanVariant::Wgan => OutputMode::RawCritic,
        };
        let mut disc = DiscriminatorNet::new(
            obs_dim,
            act_dim,
            &hidden(config.disc_hidden, config.disc_layers),
            config.activation,
            mode,
            &mut rng,
        );
        disc.clamp_eps = config.clamp_eps;
        if mode == OutputMode::RawCritic {
            clip_params(&mut disc.net, config.wgan_clip);
        }
        let policy_opt = AdamState::new(&policy.eps_model, AdamConfig::with_lr(config.policy_lr));
        let q1_opt = AdamState::new(&critics.q1, AdamConfig::with_lr(config.critic_lr));
        let q2_opt = AdamState::new(&critics.q2, AdamConfig::with_lr(config.critic_lr));
        let disc_opt = AdamState::new(&disc.net, AdamConfig::with_lr(config.disc_lr));
        Ok(Self {
            schedule,
            policy_target: policy.clone(),
            policy,
            critics,
            disc,
            policy_opt,
            q1_opt,
            q2_opt,
            disc_opt,
            step: 0,
            policy_updates: 0,
            rng,
            trace: None,
            config,
        })
    }

    /// Starts recording the phases of every subsequent step.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> &[Phase] {
        self.trace.as_deref().unwrap_or(&[])
    }

    fn mark(&mut self, phase: Phase) {
        if let Some(t) = self.trace.as_mut() {
            t.push(phase);
        }
    }

    pub fn score_variant(&self) -> ScoreVariant {
        match self.config.gan_variant {
            GanVariant::Vanilla => ScoreVariant::NeglogOneMinusD,
            GanVariant::Wgan => ScoreVariant::RawCriticScore,
        }
    }

    /// Whether the policy update at `step` (0-based) runs.
    pub fn is_policy_step(&self, step: u64) -> bool {
        step.is_multiple_of(self.config.d)
    }

    /// One full update: discriminator, critics, (delayed) policy, targets.
    pub fn train_step(&mut self, dataset: &Dataset) -> Result<StepMetrics> {
        let step = self.step;
        self.step_inner(dataset).map_err(|e| match e {
            Error::Numeric(msg) => Error::Numeric(format!("step {step}: {msg}")),
            other => other,
        })
    }

    fn step_inner(&mut self, dataset: &Dataset) -> Result<StepMetrics> {
        let cfg = self.config.clone();
        let batch = sample_batch(dataset, cfg.batch_size, &mut self.rng)?;
        self.mark(Phase::SampleBatch);

        let next_actions = sample_action(
            &self.policy_target,
            &batch.next_observations,
            &self.schedule,
            &mut self.rng,
        )?;
        self.mark(Phase::TargetActions);

        let fake = sample_action(
            &self.policy,
            &batch.observations,
            &self.schedule,
            &mut self.rng,
        )?;
        let disc_loss = self.update_discriminator(&batch, &fake)?;
        self.mark(Phase::Discriminator);

        let (critic_loss, mean_q) = self.update_critics(&batch, &next_actions)?;
        self.mark(Phase::Critic);

        let policy = if self.is_policy_step(self.step) {
            let parts = self.update_policy(&batch)?;
            self.mark(Phase::Policy);
            Some(parts)
        } else {
            None
        };

        polyak_update(
            &mut self.policy_target.eps_model,
            &self.policy.eps_model,
            cfg.rho,
        )?;
        polyak_update(&mut self.critics.q1_target, &self.critics.q1, cfg.rho)?;
        polyak_update(&mut self.critics.q2_target, &self.critics.q2, cfg.rho)?;
        self.mark(Phase::Targets);

        self.step += 1;
        Ok(StepMetrics {
            critic_loss,
            disc_loss,
            mean_q,
            policy,
        })
    }

    fn update_discriminator(&mut self, batch: &Batch, fake: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.disc.bind(&mut tape, true);
        let s = tape.constant(batch.observations.clone());
        let real = tape.constant(batch.actions.clone());
        let fake = tape.constant(fake.clone());
        let loss = match self.config.gan_variant {
            GanVariant::Vanilla => disc_loss_vanilla(&mut tape, &bound, s, real, fake)?,
            GanVariant::Wgan => disc_loss_wgan(&mut tape, &bound, s, real, fake)?,
        };
        let grads = tape.backward(loss)?;
        adam_step(
            &mut self.disc.net,
            &bound.mlp.grads(&tape, &grads),
            &mut self.disc_opt,
        )?;
        if self.config.gan_variant == GanVariant::Wgan {
            clip_params(&mut self.disc.net, self.config.wgan_clip);
        }
        tape.value(loss).item()
    }

    fn update_critics(&mut self, batch: &Batch, next_actions: &Tensor) -> Result<(f64, f64)> {
        let y = td_targets(batch, next_actions, &self.critics, self.config.gamma)?;
        let mut tape = Tape::new();
        let bound = self.critics.bind(&mut tape, true);
        let loss = critic_loss(&mut tape, &bound, batch, &y)?;
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::Numeric("critic loss is not finite".into()));
        }
        let grads = tape.backward(loss)?;
        let g1 = bound.q1.grads(&tape, &grads);
        let g2 = bound.q2.grads(&tape, &grads);
        adam_step(&mut self.critics.q1, &g1, &mut self.q1_opt)?;
        adam_step(&mut self.critics.q2, &g2, &mut self.q2_opt)?;
        let mean_q = self
            .critics
            .q_min(&batch.observations, &batch.actions)?
            .mean();
        Ok((value, mean_q))
    }

    fn update_policy(&mut self, batch: &Batch) -> Result<PolicyLossParts> {
        let mut tape = Tape::new();
        let bound = self.policy.bind(&mut tape, true);
        let mut rng = self.rng.clone();
        let (loss, parts) =
            self.policy_loss(&mut tape, &bound, batch, &mut rng, DownWeights::Live)?;
        self.rng = rng;
        let grads = tape.backward(loss)?;
        adam_step(
            &mut self.policy.eps_model,
            &bound.mlp.grads(&tape, &grads),
            &mut self.policy_opt,
        )?;
        self.policy_updates += 1;
        Ok(parts)
    }

    /// Builds the policy loss on `tape` (to minimize):
    ///
    /// `−[α·mean Q_min(s, a) − λ·mean(w · L_d(s, a_data)) + mean S_D(s, a)]`
    ///
    /// with `a` drawn from the reverse chain of `policy` (differentiable),
    /// `α = η / mean|Q_min(s, a)|` treated as a constant, and `w` the detached
    /// down-weight. Critic and discriminator parameters enter as constants.
    pub fn policy_loss(
        &self,
        tape: &mut Tape,
        policy: &BoundPolicy,
        batch: &Batch,
        rng: &mut ChaCha8Rng,
        weights: DownWeights,
    ) -> Result<(Var, PolicyLossParts)> {
        let cfg = &self.config;
        let n = batch.len();
        let s = tape.constant(batch.observations.clone());
        let needs_samples = cfg.use_q_term
            || cfg.use_score_term
            || (cfg.use_down_weight && matches!(weights, DownWeights::Live));
        let sampled = if needs_samples {
            Some(sample_action_graph(
                tape,
                policy,
                s,
                self.policy.act_dim(),
                &self.schedule,
                rng,
            )?)
        } else {
            None
        };

        let mut objective: Option<Var> = None;
        let mut parts = PolicyLossParts::default();
        let mut add = |tape: &mut Tape, term: Var| -> Result<()> {
            objective = Some(match objective {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
            Ok(())
        };

        if cfg.use_q_term {
            let a = sampled.expect("sampled actions");
            let critics = self.critics.bind(tape, false);
            let (q1, q2) = critics.q_values(tape, s, a)?;
            let q_min = tape.min(q1, q2)?;
            let mean_abs = tape
                .value(q_min)
                .data()
                .iter()
                .map(|v| v.abs())
                .sum::<f64>()
                / n as f64;
            let alpha = cfg.eta / mean_abs.max(ALPHA_DENOM_FLOOR);
            let mean_q = tape.mean(q_min);
            let q_term = tape.scale(mean_q, alpha);
            parts.alpha = alpha;
            parts.q_term = tape.value(q_term).item()?;
            add(tape, q_term)?;
        }

        let per_sample =
            diffusion_loss_per_sample(tape, policy, s, &batch.actions, &self.schedule, rng)?;
        parts.diffusion_loss = tape.value(per_sample).mean();
        let w = match (cfg.use_down_weight, weights) {
            (false, _) => Tensor::filled(vec![n, 1], 1.0),
            (true, DownWeights::Frozen(w)) => w,
            (true, DownWeights::Live) => {
                let a = tape.value(sampled.expect("sampled actions")).clone();
                down_weight(&self.disc, &batch.observations, &a, &batch.actions)?
            }
        };
        parts.down_weight_mean = w.mean();
        let w = tape.constant(w);
        let weighted = tape.mul(per_sample, w)?;
        let mean_weighted = tape.mean(weighted);
        let diffusion_term = tape.scale(mean_weighted, -cfg.lambda);
        parts.diffusion_term = -tape.value(diffusion_term).item()?;
        add(tape, diffusion_term)?;

        if cfg.use_score_term {
            let a = sampled.expect("sampled actions");
            let disc = self.disc.bind(tape, false);
            let score = score_term(tape, &disc, s, a, self.score_variant())?;
            let mean_score = tape.mean(score);
            parts.score_term = tape.value(mean_score).item()?;
            add(tape, mean_score)?;
        }

        let objective = objective.expect("diffusion term always present");
        let loss = tape.neg(objective);
        parts.loss = tape.value(loss).item()?;
        if !parts.loss.is_finite() {
            return Err(Error::Numeric(format!(
                "policy loss is not finite: {parts:?}"
            )));
        }
        Ok((loss, parts))
    }
}
