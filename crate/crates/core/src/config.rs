//! Experiment configuration: JSON schema, defaults matching the reference
//! hyper-parameters, validation, and environment-variable overrides.

use serde::{Deserialize, Serialize};

use crate::cdrl::StageRule;
use crate::error::{Error, Result};
use crate::gating::EtaRates;
use crate::incsfa::IncSfaParams;
use crate::stream_env::{ClockMode, OscFamily, StreamSpec, SwapSchedule};

/// Prefix for environment-variable overrides of top-level config keys,
/// e.g. `SLOWSTREAM_TAU=50`.
pub const ENV_PREFIX: &str = "SLOWSTREAM_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Stationary,
    NonstationarySweep,
    StabilityCompare,
    PixelSurrogate,
}

/// `beta` may be a number or `"auto"` (`nu * ln 2 / (2 (n - 1))`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSpec {
    Value(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Default for BetaSpec {
    fn default() -> Self {
        BetaSpec::Auto(AutoTag::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpsilonConfig {
    pub initial: f64,
    pub decay: f64,
    pub stages: Vec<StageRule>,
}

impl Default for EpsilonConfig {
    fn default() -> Self {
        EpsilonConfig {
            initial: 1.2,
            decay: 0.999,
            stages: vec![StageRule { below: 0.8, multiplier: Some(0.95) }],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    /// Running mean of one-hot instantaneous tensors.
    Mean,
    /// Local per-cell EMA with whole-tensor normalization (stability
    /// comparison only).
    Legacy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardReset {
    OnFreeze,
    Never,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub streams: Vec<StreamSpec>,
    pub tau: usize,
    /// IncSFA learning rate.
    pub nu: f64,
    /// Convergence threshold on the slowness derivative.
    pub delta: f64,
    /// Expert-reward width.
    pub sigma: f64,
    pub beta: BetaSpec,
    /// Discount factor of the policy solver.
    pub gamma: f64,
    pub epsilon: EpsilonConfig,
    pub trials: usize,
    pub seed: u64,
    /// Iteration (batch) budget per trial.
    pub budget: u64,
    /// Consecutive all-filtered iterations that terminate a trial early.
    pub patience: u64,
    pub clock: ClockMode,
    pub reward_mode: RewardMode,
    /// EMA constant for the legacy reward rule.
    pub alpha: f64,
    pub reward_reset: RewardReset,
    /// Number of slow features per abstraction.
    pub num_features: usize,
    /// Cap on the whitening rank (defaults to the input dimension).
    pub pca_rank: Option<usize>,
    pub warmup: u64,
    /// Updating batches per fresh extractor excluded from reward
    /// attribution, so the initialization transient of the eigenvalue
    /// estimates does not register as learning progress.
    pub reward_warmup: u64,
    /// Scale of the expert-term mastery statistic (weight change per
    /// cubed angular feature speed), calibrated so the documented σ
    /// values keep their meaning for this extractor's weight-change
    /// magnitudes.
    pub mastery_scale: f64,
    /// Scale of the learning-progress statistic relative to the expert
    /// term. Net extractor displacement per sample is a much smaller
    /// number than the weight-change units the reward constants were
    /// chosen for.
    pub progress_gain: f64,
    /// Largest watermark drop credited per rewarded batch. Metering the
    /// payout keeps the learning-progress income uniform over visits
    /// instead of front-loaded into the first few, so later visits under
    /// a settling policy still earn.
    pub progress_step: f64,
    /// Smoothing constant of the per-stream difficulty estimate that
    /// routes the intrinsic reward to the easiest unencoded stream.
    pub difficulty_ema: f64,
    pub amnesic_mu: f64,
    pub amnesic_floor: f64,
    pub eta_rates: EtaRates,
    pub swap: Option<SwapSchedule>,
    /// Worker count for multi-trial runs; `None` uses all cores.
    pub jobs: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: Scenario::Stationary,
            streams: vec![
                StreamSpec::Osc { family: OscFamily::X1 },
                StreamSpec::Osc { family: OscFamily::X2 },
                StreamSpec::Osc { family: OscFamily::X3 },
            ],
            tau: 100,
            nu: 0.05,
            delta: 0.0006,
            sigma: 0.0009,
            beta: BetaSpec::default(),
            gamma: 0.9,
            epsilon: EpsilonConfig::default(),
            trials: 20,
            seed: 0,
            budget: 20_000,
            patience: 500,
            clock: ClockMode::Observed,
            reward_mode: RewardMode::Mean,
            alpha: 0.1,
            reward_reset: RewardReset::OnFreeze,
            num_features: 2,
            pca_rank: None,
            warmup: 50,
            reward_warmup: 20,
            mastery_scale: 0.0045,
            progress_gain: 80.0,
            progress_step: 1e-3,
            difficulty_ema: 0.2,
            amnesic_mu: 2.0,
            amnesic_floor: 3e-3,
            eta_rates: EtaRates::default(),
            swap: None,
            jobs: None,
        }
    }
}

impl ExperimentConfig {
    pub fn n(&self) -> usize {
        self.streams.len()
    }

    /// Resolved expert-reward scale.
    pub fn effective_beta(&self) -> f64 {
        match self.beta {
            BetaSpec::Value(v) => v,
            BetaSpec::Auto(_) => {
                self.nu * std::f64::consts::LN_2 / (2.0 * (self.n() as f64 - 1.0))
            }
        }
    }

    pub fn incsfa_params(&self) -> IncSfaParams {
        IncSfaParams {
            learning_rate: self.nu,
            inhibition: 2.0,
            amnesic_mu: self.amnesic_mu,
            amnesic_floor: self.amnesic_floor,
            warmup: self.warmup,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, reason: &str| {
            Err(Error::InvalidConfig { field: field.into(), reason: reason.into() })
        };
        if self.streams.len() < 2 {
            return fail("streams", "need at least 2 streams");
        }
        if self.tau < 2 {
            return fail("tau", "must be >= 2");
        }
        if self.delta <= 0.0 {
            return fail("delta", "must be > 0");
        }
        if self.nu <= 0.0 {
            return fail("nu", "must be > 0");
        }
        if self.sigma < 0.0 {
            return fail("sigma", "must be >= 0");
        }
        if let BetaSpec::Value(b) = self.beta {
            if b < 0.0 {
                return fail("beta", "must be >= 0");
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail("gamma", "must be in [0, 1)");
        }
        if self.alpha <= 0.0 || self.alpha > 1.0 {
            return fail("alpha", "must be in (0, 1]");
        }
        if self.trials == 0 {
            return fail("trials", "must be >= 1");
        }
        if self.num_features == 0 {
            return fail("num_features", "must be >= 1");
        }
        let dim = self.streams[0].dim();
        if self.streams.iter().any(|s| s.dim() != dim) {
            return fail("streams", "all streams must share one input dimension");
        }
        if let Some(swap) = &self.swap {
            if swap.target >= self.streams.len() {
                return fail("swap.target", "stream index out of range");
            }
            if swap.replacement.dim() != dim {
                return fail("swap.replacement", "dimension mismatch with streams");
            }
        }
        Ok(())
    }

    /// Parse a config file, applying `SLOWSTREAM_*` environment overrides
    /// to top-level keys.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut value: serde_json::Value = serde_json::from_str(&text)?;
        apply_env_overrides(&mut value, std::env::vars());
        let config: ExperimentConfig = serde_json::from_value(value)?;
        config.validate()?;
        Ok(config)
    }
}

/// Override top-level keys from `SLOWSTREAM_<KEY>` variables. Values are
/// parsed as JSON when possible, otherwise taken as strings.
pub fn apply_env_overrides<I: Iterator<Item = (String, String)>>(
    value: &mut serde_json::Value,
    vars: I,
) {
    let obj = match value.as_object_mut() {
        Some(obj) => obj,
        None => return,
    };
    for (key, raw) in vars {
        if let Some(rest) = key.strip_prefix(ENV_PREFIX) {
            let field = rest.to_lowercase();
            let parsed = serde_json::from_str(&raw)
                .unwrap_or(serde_json::Value::String(raw));
            obj.insert(field, parsed);
        }
    }
}
