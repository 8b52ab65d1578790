//! Conditional DDPM over actions.
//!
//! The noise model ε(aⁱ, s, i) is trained with the simplified noise-prediction
//! loss and sampled through the reverse chain, clamping to `[-1, 1]` after
//! every step.

use crate::engine::{Activation, BoundMlp, MlpParams, MlpSpec, Tape, Tensor, Var};
use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Width of the sinusoidal timestep embedding fed to the noise model.
pub const TIME_EMBED_DIM: usize = 16;

/// Variance-preserving discretised schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// `β_i = 1 − exp(−β_min/T − ½(β_max − β_min)(2i − 1)/T²)` for `i = 1..=T`.
pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Config("diffusion needs at least one step".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max.is_finite()) {
        return Err(Error::Config(format!(
            "need 0 < beta_min <= beta_max, got {beta_min}, {beta_max}"
        )));
    }
    let t = steps as f64;
    let betas: Vec<f64> = (1..=steps)
        .map(|i| {
            let exponent =
                -beta_min / t - 0.5 * (beta_max - beta_min) * (2.0 * i as f64 - 1.0) / (t * t);
            -exponent.exp_m1()
        })
        .collect();
    if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
        return Err(Error::Config(format!("schedule produced beta = {b}")));
    }
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let alpha_bars = alphas
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule {
        betas,
        alphas,
        alpha_bars,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `β_i`, 1-based.
    pub fn beta(&self, i: usize) -> f64 {
        self.betas[i - 1]
    }

    pub fn alpha(&self, i: usize) -> f64 {
        self.alphas[i - 1]
    }

    pub fn alpha_bar(&self, i: usize) -> f64 {
        self.alpha_bars[i - 1]
    }

    fn check_step(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.steps() {
            return Err(Error::Usage(format!(
                "diffusion step {i} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// Closed-form forward marginal `aⁱ = √ᾱ_i a⁰ + √(1 − ᾱ_i) ε`.
pub fn forward_diffuse(
    a0: &Tensor,
    step: usize,
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    sched.check_step(step)?;
    if a0.shape() != eps.shape() {
        return Err(Error::Dimension(format!(
            "action {:?} vs noise {:?}",
            a0.shape(),
            eps.shape()
        )));
    }
    let ab = sched.alpha_bar(step);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = a0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(a, e)| sa * a + sn * e)
        .collect();
    Tensor::new(a0.shape().to_vec(), data)
}

/// Sinusoidal embedding of a diffusion step.
pub fn timestep_embedding(step: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half.max(1) as f64).exp();
        let x = step as f64 * freq;
        out[k] = x.sin();
        out[half + k] = x.cos();
    }
    out
}

fn embedding_rows(steps: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(steps.len() * TIME_EMBED_DIM);
    for &s in steps {
        data.extend(timestep_embedding(s, TIME_EMBED_DIM));
    }
    Tensor::matrix(steps.len(), TIME_EMBED_DIM, data).unwrap()
}

/// Anything that predicts the injected noise from `(aⁱ, s, i)`; `steps` holds
/// one diffusion index per row.
pub trait NoiseModel {
    fn predict(&self, tape: &mut Tape, noisy: Var, states: Var, steps: &[usize]) -> Result<Var>;
}

/// The conditional noise model ε_θ.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    pub eps_model: MlpParams,
    obs_dim: usize,
    act_dim: usize,
}

impl PolicyNet {
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let mut spec = MlpSpec::new(act_dim + obs_dim + TIME_EMBED_DIM, hidden.to_vec(), act_dim);
        spec.hidden_activation = activation;
        spec.output_init_scale = 1e-2;
        Self {
            eps_model: MlpParams::init(&spec, rng),
            obs_dim,
            act_dim,
        }
    }

    pub fn from_params(eps_model: MlpParams, obs_dim: usize, act_dim: usize) -> Result<Self> {
        if eps_model.in_dim() != act_dim + obs_dim + TIME_EMBED_DIM
            || eps_model.out_dim() != act_dim
        {
            return Err(Error::Dimension(format!(
                "noise model maps {} -> {}, expected {} -> {act_dim}",
                eps_model.in_dim(),
                eps_model.out_dim(),
                act_dim + obs_dim + TIME_EMBED_DIM
            )));
        }
        Ok(Self {
            eps_model,
            obs_dim,
            act_dim,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundPolicy {
        BoundPolicy {
            mlp: self.eps_model.bind(tape, trainable),
        }
    }
}

/// A [`PolicyNet`] whose parameters live on a tape.
pub struct BoundPolicy {
    pub mlp: BoundMlp,
}

impl NoiseModel for BoundPolicy {
    fn predict(&self, tape: &mut Tape, noisy: Var, states: Var, steps: &[usize]) -> Result<Var> {
        let emb = tape.constant(embedding_rows(steps));
        let input = tape.concat(&[noisy, states, emb])?;
        self.mlp.forward(tape, input)
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Per-sample noise-prediction errors `‖ε − ε_θ(aⁱ, s, i)‖²` as `[n, 1]`.
///
/// Each row draws its own `i ~ U{1..T}` and `ε ~ N(0, I)` (row by row, step
/// first).
pub fn diffusion_loss_per_sample(
    tape: &mut Tape,
    model: &impl NoiseModel,
    states: Var,
    actions: &Tensor,
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<Var> {
    let (n, d) = (actions.rows(), actions.cols());
    if tape.value(states).rows() != n {
        return Err(Error::Dimension(format!(
            "{} states for {n} actions",
            tape.value(states).rows()
        )));
    }
    let mut steps = Vec::with_capacity(n);
    let mut eps = Vec::with_capacity(n * d);
    let mut noisy = Vec::with_capacity(n * d);
    for r in 0..n {
        let i = rng.gen_range(1..=sched.steps());
        let ab = sched.alpha_bar(i);
        steps.push(i);
        for &a in actions.row_slice(r) {
            let e: f64 = rng.sample(StandardNormal);
            eps.push(e);
            noisy.push(ab.sqrt() * a + (1.0 - ab).sqrt() * e);
        }
    }
    let noisy = tape.constant(Tensor::matrix(n, d, noisy)?);
    let target = tape.constant(Tensor::matrix(n, d, eps)?);
    let pred = model.predict(tape, noisy, states, &steps)?;
    let diff = tape.sub(target, pred)?;
    let sq = tape.square(diff);
    Ok(tape.sum_cols(sq))
}

/// Batch mean of [`diffusion_loss_per_sample`], differentiable in the model.
pub fn diffusion_loss_graph(
    tape: &mut Tape,
    model: &impl NoiseModel,
    states: Var,
    actions: &Tensor,
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<Var> {
    let per = diffusion_loss_per_sample(tape, model, states, actions, sched, rng)?;
    Ok(tape.mean(per))
}

/// Numeric value of the diffusion loss for `policy` on `(states, actions)`.
pub fn diffusion_loss(
    policy: &PolicyNet,
    states: &Tensor,
    actions: &Tensor,
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = policy.bind(&mut tape, false);
    let s = tape.constant(states.clone());
    let loss = diffusion_loss_graph(&mut tape, &bound, s, actions, sched, rng)?;
    tape.value(loss).item()
}

/// Runs the reverse chain from `a^T ~ N(0, I)` down to `a⁰` on the tape.
///
/// `a^{i−1} = a^i/√α_i − β_i/√(α_i(1 − ᾱ_i)) · ε_θ(a^i, s, i) + √β_i z`, with
/// `z = 0` on the final step and a clamp to `[-1, 1]` after every step.
/// Gradients flow through every step when the model is trainable.
pub fn sample_action_graph(
    tape: &mut Tape,
    model: &impl NoiseModel,
    states: Var,
    act_dim: usize,
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<Var> {
    let n = tape.value(states).rows();
    let mut a = tape.constant(gaussian(n, act_dim, rng));
    for i in (1..=sched.steps()).rev() {
        let (alpha, beta, ab) = (sched.alpha(i), sched.beta(i), sched.alpha_bar(i));
        let steps = vec![i; n];
        let eps = model.predict(tape, a, states, &steps)?;
        let x = tape.scale(a, 1.0 / alpha.sqrt());
        let e = tape.scale(eps, beta / (alpha * (1.0 - ab)).sqrt());
        let mut next = tape.sub(x, e)?;
        if i > 1 {
            let z = gaussian(n, act_dim, rng).map(|v| v * beta.sqrt());
            let z = tape.constant(z);
            next = tape.add(next, z)?;
        }
        a = tape.clamp(next, -1.0, 1.0);
    }
    Ok(a)
}

/// Draws one action per state row from the reverse chain.
pub fn sample_action(
    policy: &PolicyNet,
    states: &Tensor,
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    if states.cols() != policy.obs_dim() {
        return Err(Error::Dimension(format!(
            "policy expects {} state features, got {}",
            policy.obs_dim(),
            states.cols()
        )));
    }
    let mut tape = Tape::new();
    let bound = policy.bind(&mut tape, false);
    let s = tape.constant(states.clone());
    let a = sample_action_graph(&mut tape, &bound, s, policy.act_dim(), sched, rng)?;
    Ok(tape.value(a).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// ε_θ ≡ 0.
    struct Zero;
    impl NoiseModel for Zero {
        fn predict(&self, tape: &mut Tape, noisy: Var, _: Var, _: &[usize]) -> Result<Var> {
            let shape = tape.value(noisy).shape().to_vec();
            Ok(tape.constant(Tensor::zeros(shape)))
        }
    }

    /// Recovers the injected noise exactly given the clean actions.
    struct Oracle<'a> {
        clean: &'a Tensor,
        sched: &'a NoiseSchedule,
    }
    impl NoiseModel for Oracle<'_> {
        fn predict(&self, tape: &mut Tape, noisy: Var, _: Var, steps: &[usize]) -> Result<Var> {
            let x = tape.value(noisy).clone();
            let d = x.cols();
            let data = (0..x.len())
                .map(|k| {
                    let ab = self.sched.alpha_bar(steps[k / d]);
                    (x.data()[k] - ab.sqrt() * self.clean.data()[k]) / (1.0 - ab).sqrt()
                })
                .collect();
            Ok(tape.constant(Tensor::new(x.shape().to_vec(), data)?))
        }
    }

    #[test]
    fn schedule_values() {
        let s = make_schedule(5, 0.1, 10.0).unwrap();
        // exponent for i = 1: 0.1/5 + 0.5·9.9·1/25 = 0.218
        assert!((s.beta(1) - (1.0 - (-0.218f64).exp())).abs() < 1e-12);
        assert!((s.beta(1) - 0.195875).abs() < 1e-6);
        // i = 5: 0.02 + 0.5·9.9·9/25 = 1.802
        assert!((s.beta(5) - (1.0 - (-1.802f64).exp())).abs() < 1e-12);
        assert!((s.beta(5) - 0.835031).abs() < 1e-6);
        let one = make_schedule(1, 0.7, 0.7).unwrap();
        assert!((one.beta(1) - (1.0 - (-0.7f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn schedule_rejects_bad_configuration() {
        assert!(make_schedule(0, 0.1, 10.0).is_err());
        assert!(make_schedule(5, 0.0, 10.0).is_err());
        assert!(make_schedule(5, 2.0, 1.0).is_err());
        // a huge rate drives beta to exactly 1 in floating point
        assert!(matches!(make_schedule(1, 1e6, 1e6), Err(Error::Config(_))));
    }

    #[test]
    fn forward_diffuse_degenerate_cases() {
        let s = make_schedule(5, 0.1, 10.0).unwrap();
        let a0 = Tensor::row(&[0.5, -0.25]);
        let zero = Tensor::row(&[0.0, 0.0]);
        let out = forward_diffuse(&a0, 3, &zero, &s).unwrap();
        let k = s.alpha_bar(3).sqrt();
        assert_eq!(out.data(), &[0.5 * k, -0.25 * k]);
        let e = Tensor::row(&[1.5, -2.0]);
        let out = forward_diffuse(&zero, 2, &e, &s).unwrap();
        let k = (1.0 - s.alpha_bar(2)).sqrt();
        assert_eq!(out.data(), &[1.5 * k, -2.0 * k]);
        assert!(matches!(
            forward_diffuse(&a0, 0, &zero, &s),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            forward_diffuse(&a0, 6, &zero, &s),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn perfect_denoiser_has_zero_loss() {
        let s = make_schedule(5, 0.1, 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let actions = gaussian(64, 3, &mut rng).map(|v| v.clamp(-1.0, 1.0));
        let mut tape = Tape::new();
        let states = tape.constant(Tensor::zeros(vec![64, 1]));
        let oracle = Oracle {
            clean: &actions,
            sched: &s,
        };
        let l = diffusion_loss_graph(&mut tape, &oracle, states, &actions, &s, &mut rng).unwrap();
        assert!(tape.value(l).item().unwrap() < 1e-24);
    }

    #[test]
    fn zero_model_loss_is_action_dim() {
        // E‖ε‖² = d
        let s = make_schedule(5, 0.1, 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let actions = Tensor::filled(vec![n, 3], 0.3);
        let mut tape = Tape::new();
        let states = tape.constant(Tensor::zeros(vec![n, 2]));
        let l = diffusion_loss_graph(&mut tape, &Zero, states, &actions, &s, &mut rng).unwrap();
        let v = tape.value(l).item().unwrap();
        assert!((v - 3.0).abs() / 3.0 < 0.05, "{v}");
    }

    #[test]
    fn zero_model_single_step_sample() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        let mut tape = Tape::new();
        let states = tape.constant(Tensor::zeros(vec![200, 1]));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = sample_action_graph(&mut tape, &Zero, states, 2, &s, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a1 = gaussian(200, 2, &mut rng);
        let expected = a1.map(|v| (v / s.alpha(1).sqrt()).clamp(-1.0, 1.0));
        for (x, y) in tape.value(a).data().iter().zip(expected.data()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn samples_are_bounded_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let policy = PolicyNet::new(3, 2, &[16, 16], Activation::Mish, &mut rng);
        let s = make_schedule(5, 0.1, 10.0).unwrap();
        let states = gaussian(50, 3, &mut rng);
        let a = sample_action(&policy, &states, &s, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_action(&policy, &states, &s, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.shape(), &[50, 2]);
        assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_state_width_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let policy = PolicyNet::new(3, 2, &[8], Activation::Mish, &mut rng);
        let s = make_schedule(2, 0.1, 10.0).unwrap();
        let states = Tensor::zeros(vec![4, 2]);
        assert!(matches!(
            sample_action(&policy, &states, &s, &mut rng),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn embedding_shape_and_range() {
        let e = timestep_embedding(7, TIME_EMBED_DIM);
        assert_eq!(e.len(), TIME_EMBED_DIM);
        assert_eq!(e[0], 7f64.sin());
        assert_eq!(e[8], 7f64.cos());
        assert!(e.iter().all(|v| v.abs() <= 1.0));
    }
}
