use crate::engine::Activation;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Discriminator objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanVariant {
    /// Cross-entropy discriminator; policy bonus `−log(1 − D)`.
    Vanilla,
    /// Weight-clipped Wasserstein critic; policy bonus `f_w(s, a)`.
    Wgan,
}

/// Every knob of a training run. Serialized as one flat JSON object; missing
/// keys take the defaults below and unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of diffusion steps.
    #[serde(rename = "T")]
    pub diffusion_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub gamma: f64,
    pub rho: f64,
    /// Weight of the (down-weighted) diffusion loss in the policy objective.
    pub lambda: f64,
    /// Scale of the batch-normalized Q term.
    pub eta: f64,
    /// Policy update period.
    pub d: u64,
    pub gan_variant: GanVariant,
    pub batch_size: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub log_interval: u64,
    pub policy_hidden: usize,
    pub policy_layers: usize,
    pub critic_hidden: usize,
    pub critic_layers: usize,
    pub disc_hidden: usize,
    pub disc_layers: usize,
    pub activation: Activation,
    pub policy_lr: f64,
    pub critic_lr: f64,
    pub disc_lr: f64,
    pub antmaze_reward_shift: bool,
    pub use_q_term: bool,
    pub use_score_term: bool,
    pub use_down_weight: bool,
    pub wgan_clip: f64,
    pub clamp_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            diffusion_steps: 5,
            beta_min: 0.1,
            beta_max: 10.0,
            gamma: 0.99,
            rho: 0.995,
            lambda: 1.0,
            eta: 2.5,
            d: 2,
            gan_variant: GanVariant::Vanilla,
            batch_size: 256,
            total_steps: 20_000,
            seed: 0,
            eval_interval: 2_000,
            eval_episodes: 10,
            log_interval: 500,
            policy_hidden: 256,
            policy_layers: 3,
            critic_hidden: 256,
            critic_layers: 2,
            disc_hidden: 256,
            disc_layers: 2,
            activation: Activation::Mish,
            policy_lr: 3e-4,
            critic_lr: 3e-4,
            disc_lr: 1e-4,
            antmaze_reward_shift: false,
            use_q_term: true,
            use_score_term: true,
            use_down_weight: true,
            wgan_clip: 0.01,
            clamp_eps: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.diffusion_steps < 1 {
            return fail("T must be at least 1".into());
        }
        if self.d < 1 {
            return fail("d must be at least 1".into());
        }
        if !(self.eta > 0.0) {
            return fail(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.lambda >= 0.0) {
            return fail(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return fail(format!("rho {} outside [0, 1)", self.rho));
        }
        for (name, lr) in [
            ("policy_lr", self.policy_lr),
            ("critic_lr", self.critic_lr),
            ("disc_lr", self.disc_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("{name} must be positive, got {lr}"));
            }
        }
        for (name, v) in [
            ("policy_hidden", self.policy_hidden),
            ("policy_layers", self.policy_layers),
            ("critic_hidden", self.critic_hidden),
            ("critic_layers", self.critic_layers),
            ("disc_hidden", self.disc_hidden),
            ("disc_layers", self.disc_layers),
            ("eval_episodes", self.eval_episodes),
        ] {
            if v < 1 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if self.eval_interval < 1 || self.log_interval < 1 {
            return fail("eval_interval and log_interval must be at least 1".into());
        }
        if !(self.wgan_clip > 0.0) {
            return fail(format!(
                "wgan_clip must be positive, got {}",
                self.wgan_clip
            ));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return fail(format!("clamp_eps {} outside (0, 0.5)", self.clamp_eps));
        }
        crate::diffusion::make_schedule(self.diffusion_steps, self.beta_min, self.beta_max)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Pretty JSON with every key present.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Hash ignoring `total_steps`, which may grow when a run is resumed.
    pub fn resume_hash(&self) -> String {
        Self {
            total_steps: 0,
            ..self.clone()
        }
        .hash()
    }

    pub fn hidden(width: usize, layers: usize) -> Vec<usize> {
        vec![width; layers]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(TrainConfig::from_json(&c.to_json()).unwrap(), c);
        assert!(c.to_json().contains("\"T\": 5"));
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = TrainConfig::from_json(r#"{"T": 8, "gan_variant": "wgan"}"#).unwrap();
        assert_eq!(c.diffusion_steps, 8);
        assert_eq!(c.gan_variant, GanVariant::Wgan);
        assert_eq!(c.eta, 2.5);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            TrainConfig::from_json(r#"{"tau": 0.005}"#),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn invariants_enforced() {
        for bad in [
            r#"{"T": 0}"#,
            r#"{"d": 0}"#,
            r#"{"eta": 0.0}"#,
            r#"{"lambda": -1.0}"#,
            r#"{"batch_size": 0}"#,
            r#"{"rho": 1.0}"#,
        ] {
            assert!(TrainConfig::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.total_steps += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.resume_hash(), b.resume_hash());
    }
}
