//! Experiment configuration.
//!
//! Configs are JSON documents with strict schemas: unknown keys are
//! rejected and every field is validated before any compute starts.
//! Validation messages name the offending key.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_alpha() -> f64 {
    1.0
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.99
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_eta() -> f64 {
    0.1
}
fn default_local_iters() -> usize {
    5
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_true() -> bool {
    true
}

/// Which algorithm drives a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Local SGD + parameter averaging.
    FedAvg,
    /// Coupled local SGDM + parameter and momentum averaging.
    NaiveLocalSgdm,
    /// Decoupled momentum with the plain momentum-sum server step.
    FeddaSgdm,
    /// Decoupled momentum feeding a server Adam.
    FeddaAdam,
    /// Decoupled momentum feeding a server AdaGrad.
    FeddaAdagrad,
    /// Decoupled momentum with a proximal local step (uses `mu`).
    FedproxDa,
    /// Pseudo-gradient server optimizer, SGDM flavor.
    FedoptSgdm,
    /// Pseudo-gradient server optimizer, Adam flavor.
    FedoptAdam,
    /// Pseudo-gradient server optimizer, AdaGrad flavor.
    FedoptAdagrad,
    /// Per-round restarted local SGDM + parameter averaging.
    FedlocalSgdm,
    /// Per-round restarted local Adam + parameter averaging.
    FedlocalAdam,
    /// Per-round restarted local AdaGrad + parameter averaging.
    FedlocalAdagrad,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fed_avg",
            Algorithm::NaiveLocalSgdm => "naive_local_sgdm",
            Algorithm::FeddaSgdm => "fedda_sgdm",
            Algorithm::FeddaAdam => "fedda_adam",
            Algorithm::FeddaAdagrad => "fedda_adagrad",
            Algorithm::FedproxDa => "fedprox_da",
            Algorithm::FedoptSgdm => "fedopt_sgdm",
            Algorithm::FedoptAdam => "fedopt_adam",
            Algorithm::FedoptAdagrad => "fedopt_adagrad",
            Algorithm::FedlocalSgdm => "fedlocal_sgdm",
            Algorithm::FedlocalAdam => "fedlocal_adam",
            Algorithm::FedlocalAdagrad => "fedlocal_adagrad",
        }
    }
}

/// Partition scheme selection in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionConfig {
    Iid,
    Dirichlet { alpha: f64 },
    Quantity { min_fraction: f64 },
}

/// Data source for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Synthetic heterogeneous quadratic clients.
    Quadratic {
        clients: usize,
        dim: usize,
        heterogeneity: f64,
    },
    /// Deterministic two-client mirrored quadratic (identity curvature,
    /// minimizers at `(±heterogeneity, 0)`).
    MirroredQuadratic { heterogeneity: f64 },
    /// Synthetic Gaussian-cluster classification, partitioned across
    /// clients.
    Classification {
        samples: usize,
        features: usize,
        classes: usize,
        clients: usize,
        partition: PartitionConfig,
    },
    /// CSV file on disk, partitioned across clients.
    Csv {
        path: String,
        target_column: String,
        #[serde(default = "default_true")]
        has_header: bool,
        classes: Option<usize>,
        clients: usize,
        partition: PartitionConfig,
    },
}

impl DataSpec {
    pub fn clients(&self) -> usize {
        match self {
            DataSpec::Quadratic { clients, .. } => *clients,
            DataSpec::MirroredQuadratic { .. } => 2,
            DataSpec::Classification { clients, .. } => *clients,
            DataSpec::Csv { clients, .. } => *clients,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, DataSpec::Classification { .. } | DataSpec::Csv { .. })
    }
}

/// End-of-training full-batch phase: forces one local iteration with
/// full-batch gradients (and by default full participation) so each
/// round coincides with a centralized step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilizationConfig {
    #[serde(default)]
    pub enabled: bool,
    /// First stabilized round; defaults to the last 10% of rounds.
    #[serde(default)]
    pub start_round: Option<usize>,
    #[serde(default = "default_true")]
    pub full_participation: bool,
}

impl Default for StabilizationConfig {
    fn default() -> Self {
        StabilizationConfig {
            enabled: false,
            start_round: None,
            full_participation: true,
        }
    }
}

/// Settings for the deviation-trace experiment (quadratic data only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviationConfig {
    /// Synchronized steps to run.
    pub steps: usize,
    /// Full-batch gradients (recommended; removes sampling noise).
    #[serde(default = "default_true")]
    pub full_batch: bool,
}

/// All hyperparameters of a federated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    pub algorithm: Algorithm,
    pub data: DataSpec,
    pub rounds: usize,
    /// Participants per round `K`; defaults to all clients.
    #[serde(default)]
    pub clients_per_round: Option<usize>,
    /// Local iterations per round `T`.
    #[serde(default = "default_local_iters")]
    pub local_iters: usize,
    /// Mini-batch size; absent means full batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Client learning rate.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Server learning-rate scale (server learning rate for the
    /// pseudo-gradient baselines).
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Momentum coefficient (first moment).
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    /// Second-moment coefficient.
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    /// Adaptive-denominator fuzz factor.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Proximal coefficient.
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub stabilization: StabilizationConfig,
    #[serde(default)]
    pub seed: u64,
    /// Held-out pooled test fraction (classification only).
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Initial parameter vector; defaults to zeros.
    #[serde(default)]
    pub init: Option<Vec<f64>>,
    /// Record wall-clock milliseconds in metrics output. Off by default
    /// so metrics files are byte-identical across reruns.
    #[serde(default)]
    pub emit_timing: bool,
    /// Deviation-experiment settings (used by the deviation command).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deviation: Option<DeviationConfig>,
}

impl FederationConfig {
    /// Participants per round after defaulting.
    pub fn participants(&self) -> usize {
        self.clients_per_round.unwrap_or_else(|| self.data.clients())
    }

    /// First stabilized round, if stabilization is enabled.
    pub fn stabilization_start(&self) -> Option<usize> {
        if !self.stabilization.enabled {
            return None;
        }
        Some(
            self.stabilization
                .start_round
                .unwrap_or_else(|| (self.rounds as f64 * 0.9).ceil() as usize),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.data.clients();
        if m == 0 {
            return Err(Error::Config("data.clients must be at least 1".into()));
        }
        let k = self.participants();
        if k == 0 || k > m {
            return Err(Error::Config(format!(
                "clients_per_round must satisfy 1 <= K <= {m}, got {k}"
            )));
        }
        if self.local_iters == 0 {
            return Err(Error::Config("local_iters must be at least 1".into()));
        }
        if let Some(b) = self.batch_size {
            if b == 0 {
                return Err(Error::Config("batch_size must be at least 1".into()));
            }
        }
        if self.eta <= 0.0 || self.eta.is_nan() {
            return Err(Error::Config("eta must be positive".into()));
        }
        if self.alpha <= 0.0 || self.alpha.is_nan() {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::Config("beta1 must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta2 must lie in [0, 1)".into()));
        }
        if self.epsilon <= 0.0 || self.epsilon.is_nan() {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.mu < 0.0 {
            return Err(Error::Config("mu must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config("test_fraction must lie in [0, 1)".into()));
        }
        if let Some(dev) = &self.deviation {
            if dev.steps == 0 {
                return Err(Error::Config("deviation.steps must be at least 1".into()));
            }
        }
        if let Some(start) = self.stabilization.start_round {
            if self.stabilization.enabled && start >= self.rounds && self.rounds > 0 {
                return Err(Error::Config(format!(
                    "stabilization.start_round {start} is past the last round {}",
                    self.rounds - 1
                )));
            }
        }
        match &self.data {
            DataSpec::Quadratic {
                dim, heterogeneity, ..
            } => {
                if *dim == 0 {
                    return Err(Error::Config("data.dim must be at least 1".into()));
                }
                if *heterogeneity < 0.0 {
                    return Err(Error::Config(
                        "data.heterogeneity must be non-negative".into(),
                    ));
                }
            }
            DataSpec::MirroredQuadratic { heterogeneity } => {
                if *heterogeneity < 0.0 {
                    return Err(Error::Config(
                        "data.heterogeneity must be non-negative".into(),
                    ));
                }
            }
            DataSpec::Classification {
                samples,
                features,
                classes,
                clients,
                partition,
            } => {
                if *classes < 2 {
                    return Err(Error::Config("data.classes must be at least 2".into()));
                }
                if *samples < *classes {
                    return Err(Error::Config(
                        "data.samples must be at least data.classes".into(),
                    ));
                }
                if *features == 0 {
                    return Err(Error::Config("data.features must be at least 1".into()));
                }
                if *clients > *samples {
                    return Err(Error::Config(
                        "data.clients exceeds data.samples".into(),
                    ));
                }
                validate_partition(partition, *clients)?;
            }
            DataSpec::Csv {
                clients, partition, ..
            } => {
                validate_partition(partition, *clients)?;
            }
        }
        Ok(())
    }
}

fn validate_partition(partition: &PartitionConfig, clients: usize) -> Result<()> {
    match partition {
        PartitionConfig::Iid => Ok(()),
        PartitionConfig::Dirichlet { alpha } => {
            if *alpha > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(
                    "data.partition.alpha must be positive".into(),
                ))
            }
        }
        PartitionConfig::Quantity { min_fraction } => {
            if *min_fraction > 0.0 && *min_fraction <= 1.0 / clients as f64 {
                Ok(())
            } else {
                Err(Error::Config(
                    "data.partition.min_fraction must lie in (0, 1/clients]".into(),
                ))
            }
        }
    }
}

/// Parse a strict-schema JSON config.
pub fn parse_config(text: &str) -> Result<FederationConfig> {
    let config: FederationConfig =
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Stable 64-bit FNV-1a hash of the resolved config's canonical JSON,
/// rendered as hex. Stored in checkpoints so a state file can be matched
/// back to the config that produced it.
pub fn config_hash(config: &FederationConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in json.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> FederationConfig {
        parse_config(
            r#"{
                "algorithm": "fedda_sgdm",
                "data": {"kind": "quadratic", "clients": 2, "dim": 2, "heterogeneity": 1.0},
                "rounds": 5
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let c = minimal();
        assert_eq!(c.beta1, 0.9);
        assert_eq!(c.beta2, 0.99);
        assert_eq!(c.epsilon, 0.1);
        assert_eq!(c.mu, 0.0);
        assert_eq!(c.alpha, 1.0);
        assert_eq!(c.participants(), 2);
        assert!(c.batch_size.is_none());
        assert!(!c.emit_timing);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse_config(
            r#"{
                "algorithm": "fed_avg",
                "data": {"kind": "quadratic", "clients": 2, "dim": 2, "heterogeneity": 0.0},
                "rounds": 1,
                "learning_rate": 0.1
            }"#,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("learning_rate"), "message names the key: {msg}");
    }

    #[test]
    fn validation_names_offending_key() {
        let mut c = minimal();
        c.clients_per_round = Some(5);
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("clients_per_round"), "{msg}");

        let mut c = minimal();
        c.beta1 = 1.0;
        assert!(c.validate().unwrap_err().to_string().contains("beta1"));

        let mut c = minimal();
        c.eta = 0.0;
        assert!(c.validate().unwrap_err().to_string().contains("eta"));
    }

    #[test]
    fn stabilization_default_start_is_last_tenth() {
        let mut c = minimal();
        c.rounds = 100;
        c.stabilization.enabled = true;
        assert_eq!(c.stabilization_start(), Some(90));
        c.stabilization.enabled = false;
        assert_eq!(c.stabilization_start(), None);
    }

    #[test]
    fn config_round_trips_and_hash_is_stable() {
        let c = minimal();
        let json = serde_json::to_string(&c).unwrap();
        let back = parse_config(&json).unwrap();
        assert_eq!(c, back);
        assert_eq!(config_hash(&c), config_hash(&back));
        let mut other = c.clone();
        other.seed = 99;
        assert_ne!(config_hash(&c), config_hash(&other));
    }
}
