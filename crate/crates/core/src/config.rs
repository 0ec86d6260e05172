//! Engine-wide tunables.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConfigError {
    #[error("config field `{field}` = {value} is outside {range}")]
    OutOfRange {
        field: &'static str,
        value: f64,
        range: &'static str,
    },
}

/// Immutable parameters of one engine instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    /// Learning rate applied to confidence deltas, in (0, 1].
    pub alpha: f64,
    /// Weight threshold above which habitual subpaths may be compressed.
    pub tau_w: f64,
    /// Prune ratio threshold, in (0, 1).
    pub epsilon: f64,
    /// Cosine threshold for aligning two nodes into one unit, in (0, 1].
    pub tau_sim: f64,
    pub embedding_dim: usize,
    /// Confidence given to freshly explored (provisional) edges.
    pub initial_confidence_p0: f64,
    /// Number of prune scans a rejected triple is skipped for.
    pub prune_cooldown_turns: u64,
    /// Scale applied to the confidence delta of expert-flagged feedback.
    #[serde(default = "default_expert_multiplier")]
    pub expert_feedback_multiplier: f64,
}

fn default_expert_multiplier() -> f64 {
    2.0
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            tau_w: 10.0,
            epsilon: 0.05,
            tau_sim: 0.85,
            embedding_dim: 64,
            initial_confidence_p0: 0.5,
            prune_cooldown_turns: 3,
            expert_feedback_multiplier: default_expert_multiplier(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn check(
            field: &'static str,
            value: f64,
            ok: bool,
            range: &'static str,
        ) -> Result<(), ConfigError> {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::OutOfRange { field, value, range })
            }
        }
        check("alpha", self.alpha, self.alpha > 0.0 && self.alpha <= 1.0, "(0, 1]")?;
        check("tau_w", self.tau_w, self.tau_w > 0.0, "(0, inf)")?;
        check(
            "epsilon",
            self.epsilon,
            self.epsilon > 0.0 && self.epsilon < 1.0,
            "(0, 1)",
        )?;
        check(
            "tau_sim",
            self.tau_sim,
            self.tau_sim > 0.0 && self.tau_sim <= 1.0,
            "(0, 1]",
        )?;
        check(
            "embedding_dim",
            self.embedding_dim as f64,
            self.embedding_dim > 0,
            "[1, inf)",
        )?;
        check(
            "initial_confidence_p0",
            self.initial_confidence_p0,
            (0.0..=1.0).contains(&self.initial_confidence_p0),
            "[0, 1]",
        )?;
        check(
            "expert_feedback_multiplier",
            self.expert_feedback_multiplier,
            self.expert_feedback_multiplier >= 0.0,
            "[0, inf)",
        )?;
        Ok(())
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_tau_w(mut self, tau_w: f64) -> Self {
        self.tau_w = tau_w;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }
}
