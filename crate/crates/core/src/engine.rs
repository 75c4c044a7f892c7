//! Round orchestration: participant sampling, phase scheduling, local
//! fan-out, server updates, metrics, and checkpoints.
//!
//! Determinism contract: every stochastic choice is keyed by
//! `(seed, domain, round, client)`, client work is reduced in ascending
//! client id, and metrics are formatted with shortest-round-trip float
//! printing — so two runs of the same config produce byte-identical
//! metrics for any worker count.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::centralized::GlobalObjective;
use crate::config::{Algorithm, DataSpec, FederationConfig, PartitionConfig};
use crate::data::{
    generate_quadratic_federation, generate_synthetic_classification, load_csv,
    mirrored_pair_quadratic, partition, ClientDataset, ColumnRef, CsvSchema, Federation,
    PartitionScheme, PartitionSpec, RawDataset,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::local::{run_local_round, ClientReport, LocalRule, LocalUpdate};
use crate::models::Model;
use crate::rng::{stream, StreamDomain};
use crate::server::{
    aggregate, global_update_fedavg, global_update_fedda_adagrad, global_update_fedda_adam,
    global_update_fedda_sgdm, global_update_fedopt, global_update_naive_sgdm, restart_local_run,
    ReportField, RestartLocalRule, ServerOptimizer, ServerState,
};
use crate::vector::ParamVector;

/// Scheduling phase of a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Normal,
    Stabilization,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Normal => "normal",
            Phase::Stabilization => "stabilization",
        }
    }
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub phase: Phase,
    /// Pooled full-batch training loss at the post-update parameters.
    pub loss: f64,
    /// Held-out accuracy (classification runs only).
    pub accuracy: Option<f64>,
    /// Euclidean norm of the pooled gradient at the post-update
    /// parameters.
    pub grad_norm: f64,
    /// Wall-clock milliseconds; populated only when the config opts in,
    /// so default metrics files stay byte-identical across reruns.
    pub wall_ms: Option<u64>,
}

pub const METRICS_HEADER: &str = "round,phase,loss,accuracy,grad_norm,wall_ms";

pub fn metrics_csv_row(m: &RoundMetrics) -> String {
    let accuracy = m.accuracy.map(|a| a.to_string()).unwrap_or_default();
    let wall = m.wall_ms.map(|w| w.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{}",
        m.round,
        m.phase.as_str(),
        m.loss,
        accuracy,
        m.grad_norm,
        wall
    )
}

pub fn metrics_to_csv(rows: &[RoundMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&metrics_csv_row(row));
        out.push('\n');
    }
    out
}

/// Uniformly sample `k` distinct participants for a round,
/// deterministically in `(seed, round)`.
pub fn sample_clients(m: usize, k: usize, round: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > m {
        return Err(Error::InvalidArgument(format!(
            "participants must satisfy 1 <= K <= {m}, got {k}"
        )));
    }
    if k == m {
        return Ok((0..m).collect());
    }
    let mut rng = stream(seed, StreamDomain::ClientSampling { round: round as u64 });
    let mut ids = rand::seq::index::sample(&mut rng, m, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Materialized data + models for a config.
pub struct BuiltExperiment {
    pub federation: Federation<f64>,
    pub models: Vec<Model<f64>>,
    /// Pooled held-out split (classification only).
    pub test_features: Option<Matrix<f64>>,
    pub test_targets: Vec<f64>,
}

/// Generate datasets and models for a config. Deterministic per seed.
pub fn build_experiment(config: &FederationConfig) -> Result<BuiltExperiment> {
    match &config.data {
        DataSpec::Quadratic {
            clients,
            dim,
            heterogeneity,
        } => {
            let (federation, models) =
                generate_quadratic_federation(*clients, *dim, *heterogeneity, config.seed)?;
            Ok(BuiltExperiment {
                federation,
                models,
                test_features: None,
                test_targets: Vec::new(),
            })
        }
        DataSpec::MirroredQuadratic { heterogeneity } => {
            let (federation, models) = mirrored_pair_quadratic(*heterogeneity);
            Ok(BuiltExperiment {
                federation,
                models,
                test_features: None,
                test_targets: Vec::new(),
            })
        }
        DataSpec::Classification {
            samples,
            features,
            classes,
            clients,
            partition: scheme,
        } => {
            let raw =
                generate_synthetic_classification(*samples, *features, *classes, config.seed)?;
            build_classification(config, raw, *clients, scheme)
        }
        DataSpec::Csv {
            path,
            target_column,
            has_header,
            classes,
            clients,
            partition: scheme,
        } => {
            let target = match target_column.parse::<usize>() {
                Ok(idx) if !has_header => ColumnRef::Index(idx),
                _ => {
                    if *has_header {
                        ColumnRef::Name(target_column.clone())
                    } else {
                        return Err(Error::Config(
                            "data.target_column must be a column index when has_header is false"
                                .into(),
                        ));
                    }
                }
            };
            let schema = CsvSchema {
                has_header: *has_header,
                target,
                classes: *classes,
            };
            let mut raw = load_csv(std::path::Path::new(path), &schema)?;
            if raw.classes.is_none() {
                let max = raw.targets.iter().cloned().fold(0.0_f64, f64::max);
                raw.classes = Some(max as usize + 1);
            }
            build_classification(config, raw, *clients, scheme)
        }
    }
}

fn build_classification(
    config: &FederationConfig,
    raw: RawDataset<f64>,
    clients: usize,
    scheme: &PartitionConfig,
) -> Result<BuiltExperiment> {
    let n = raw.len();
    let n_test = (config.test_fraction * n as f64).round() as usize;
    let (train, test_features, test_targets) = if n_test == 0 {
        (raw, None, Vec::new())
    } else {
        if n - n_test < clients {
            return Err(Error::Config(
                "test_fraction leaves fewer training samples than clients".into(),
            ));
        }
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut stream(config.seed, StreamDomain::TestSplit));
        let mut test_idx = order[..n_test].to_vec();
        let mut train_idx = order[n_test..].to_vec();
        test_idx.sort_unstable();
        train_idx.sort_unstable();
        let take = |idx: &[usize]| -> Result<(Matrix<f64>, Vec<f64>)> {
            let features = Matrix::from_rows(
                idx.iter().map(|&i| raw.features.row(i).to_vec()).collect(),
            )?;
            let targets = idx.iter().map(|&i| raw.targets[i]).collect();
            Ok((features, targets))
        };
        let (test_f, test_t) = take(&test_idx)?;
        let (train_f, train_t) = take(&train_idx)?;
        (
            RawDataset {
                features: train_f,
                targets: train_t,
                classes: raw.classes,
            },
            Some(test_f),
            test_t,
        )
    };

    let partition_scheme = match scheme {
        PartitionConfig::Iid => PartitionScheme::Iid,
        PartitionConfig::Dirichlet { alpha } => {
            PartitionScheme::DirichletLabelSkew { alpha: *alpha }
        }
        PartitionConfig::Quantity { min_fraction } => PartitionScheme::QuantitySkew {
            min_fraction: *min_fraction,
        },
    };
    let federation = partition(
        &train,
        clients,
        &PartitionSpec {
            scheme: partition_scheme,
            seed: config.seed,
        },
    )?;
    let model = Model::logistic(
        train.features.cols(),
        train.classes.ok_or_else(|| {
            Error::Config("classification data needs a class count".into())
        })?,
    )?;
    let models = vec![model; federation.client_count()];
    Ok(BuiltExperiment {
        federation,
        models,
        test_features,
        test_targets,
    })
}

/// Phase of a round under the config's stabilization schedule.
pub fn phase_of(config: &FederationConfig, round: usize) -> Phase {
    match config.stabilization_start() {
        Some(start) if round >= start => Phase::Stabilization,
        _ => Phase::Normal,
    }
}

fn local_rule(config: &FederationConfig, phase: Phase) -> LocalRule<f64> {
    let beta = config.beta1;
    let update = match config.algorithm {
        Algorithm::FedAvg
        | Algorithm::FedoptSgdm
        | Algorithm::FedoptAdam
        | Algorithm::FedoptAdagrad => LocalUpdate::SgdDecoupled { beta: 0.0 },
        Algorithm::NaiveLocalSgdm => LocalUpdate::NaiveSgdm { beta },
        Algorithm::FeddaSgdm | Algorithm::FeddaAdam | Algorithm::FeddaAdagrad => {
            LocalUpdate::SgdDecoupled { beta }
        }
        Algorithm::FedproxDa => LocalUpdate::ProxDecoupled {
            beta,
            mu: config.mu,
        },
        // Restart baselines dispatch through `restart_local_run`; the
        // rule here is unused but kept total.
        Algorithm::FedlocalSgdm | Algorithm::FedlocalAdam | Algorithm::FedlocalAdagrad => {
            LocalUpdate::SgdDecoupled { beta: 0.0 }
        }
    };
    let _ = phase;
    LocalRule {
        update,
        eta: config.eta,
    }
}

fn restart_rule(config: &FederationConfig) -> Option<RestartLocalRule<f64>> {
    match config.algorithm {
        Algorithm::FedlocalSgdm => Some(RestartLocalRule::Sgdm { beta: config.beta1 }),
        Algorithm::FedlocalAdam => Some(RestartLocalRule::Adam {
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
        }),
        Algorithm::FedlocalAdagrad => Some(RestartLocalRule::Adagrad {
            epsilon: config.epsilon,
        }),
        _ => None,
    }
}

fn run_one_client(
    config: &FederationConfig,
    built: &BuiltExperiment,
    state: &ServerState<f64>,
    round: usize,
    client_id: usize,
    iters: usize,
    full_batch: bool,
) -> Result<ClientReport<f64>> {
    let client: &ClientDataset<f64> = &built.federation.clients[client_id];
    let model = &built.models[client_id];
    let batch_size = if full_batch {
        client.sample_count()
    } else {
        config
            .batch_size
            .unwrap_or_else(|| client.sample_count())
            .min(client.sample_count())
    };
    let mut rng = stream(
        config.seed,
        StreamDomain::LocalBatches {
            round: round as u64,
            client_id: client_id as u64,
        },
    );
    if let Some(rule) = restart_rule(config) {
        return restart_local_run(
            &state.params,
            model,
            client,
            &rule,
            iters,
            config.eta,
            batch_size,
            &mut rng,
        );
    }
    let rule = local_rule(config, phase_of(config, round));
    run_local_round(
        &state.params,
        &state.momentum,
        model,
        client,
        iters,
        &rule,
        batch_size,
        &mut rng,
    )
}

fn apply_server_update(
    config: &FederationConfig,
    state: &mut ServerState<f64>,
    reports: &[ClientReport<f64>],
) -> Result<()> {
    match config.algorithm {
        Algorithm::FedAvg | Algorithm::FedlocalSgdm | Algorithm::FedlocalAdam
        | Algorithm::FedlocalAdagrad => global_update_fedavg(state, reports),
        Algorithm::NaiveLocalSgdm => global_update_naive_sgdm(state, reports),
        Algorithm::FeddaSgdm | Algorithm::FedproxDa => {
            let p = aggregate(reports, ReportField::MomentumSum)?;
            let m_new = aggregate(reports, ReportField::MomentumFinal)?;
            global_update_fedda_sgdm(state, &p, m_new, config.eta, config.alpha)
        }
        Algorithm::FeddaAdam => {
            let p = aggregate(reports, ReportField::MomentumSum)?;
            let m_new = aggregate(reports, ReportField::MomentumFinal)?;
            global_update_fedda_adam(
                state,
                &p,
                m_new,
                config.eta,
                config.alpha,
                config.beta1,
                config.beta2,
                config.epsilon,
            )
        }
        Algorithm::FeddaAdagrad => {
            let p = aggregate(reports, ReportField::MomentumSum)?;
            let m_new = aggregate(reports, ReportField::MomentumFinal)?;
            global_update_fedda_adagrad(
                state,
                &p,
                m_new,
                config.eta,
                config.alpha,
                config.beta1,
                config.epsilon,
            )
        }
        Algorithm::FedoptSgdm => global_update_fedopt(
            state,
            reports,
            &ServerOptimizer::Sgdm { beta: config.beta1 },
            config.alpha,
        ),
        Algorithm::FedoptAdam => global_update_fedopt(
            state,
            reports,
            &ServerOptimizer::Adam {
                beta1: config.beta1,
                beta2: config.beta2,
                epsilon: config.epsilon,
            },
            config.alpha,
        ),
        Algorithm::FedoptAdagrad => global_update_fedopt(
            state,
            reports,
            &ServerOptimizer::Adagrad {
                epsilon: config.epsilon,
            },
            config.alpha,
        ),
    }
}

fn evaluate_accuracy(built: &BuiltExperiment, params: &ParamVector<f64>) -> Option<f64> {
    let features = built.test_features.as_ref()?;
    if features.rows() == 0 {
        return None;
    }
    let model = built.models.first()?;
    let mut correct = 0usize;
    for row in 0..features.rows() {
        let predicted = model.predict_class(params, features.row(row))?;
        if predicted == built.test_targets[row].round() as usize {
            correct += 1;
        }
    }
    Some(correct as f64 / features.rows() as f64)
}

/// Execute one round: sample participants, fan out local work, reduce,
/// update the server state, and measure.
pub fn run_round(
    config: &FederationConfig,
    built: &BuiltExperiment,
    objective: &GlobalObjective<'_, f64>,
    state: &mut ServerState<f64>,
    round: usize,
    pool: &rayon::ThreadPool,
) -> Result<RoundMetrics> {
    let started = Instant::now();
    let phase = phase_of(config, round);
    let m = built.federation.client_count();
    let (iters, full_batch, k) = match phase {
        Phase::Normal => (config.local_iters, config.batch_size.is_none(), config.participants()),
        Phase::Stabilization => {
            let k = if config.stabilization.full_participation {
                m
            } else {
                config.participants()
            };
            (1, true, k)
        }
    };
    let ids = sample_clients(m, k, round, config.seed)?;
    let snapshot = &*state;
    let reports: Vec<ClientReport<f64>> = pool.install(|| {
        ids.par_iter()
            .map(|&id| run_one_client(config, built, snapshot, round, id, iters, full_batch))
            .collect::<Result<Vec<_>>>()
    })?;
    apply_server_update(config, state, &reports)?;

    let loss = objective.loss(&state.params)?;
    let grad_norm = objective.grad(&state.params)?.norm();
    let accuracy = evaluate_accuracy(built, &state.params);
    let wall_ms = config
        .emit_timing
        .then(|| started.elapsed().as_millis() as u64);
    Ok(RoundMetrics {
        round,
        phase,
        loss,
        accuracy,
        grad_norm,
        wall_ms,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Worker threads for the client fan-out (and sweep cells).
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { jobs: 1 }
    }
}

/// Full experiment output: metrics table plus the final server state.
pub struct ExperimentOutput {
    pub metrics: Vec<RoundMetrics>,
    pub state: ServerState<f64>,
    pub config_hash: String,
}

pub fn run_experiment(config: &FederationConfig) -> Result<ExperimentOutput> {
    run_experiment_with(config, RunOptions::default(), |_| {})
}

/// Run all rounds, invoking `observer` after each one (the CLI uses the
/// observer to flush metrics rows as they are produced, so a failed run
/// still leaves partial metrics on disk).
pub fn run_experiment_with(
    config: &FederationConfig,
    options: RunOptions,
    mut observer: impl FnMut(&RoundMetrics),
) -> Result<ExperimentOutput> {
    config.validate()?;
    let built = build_experiment(config)?;
    let objective = GlobalObjective::new(&built.federation, &built.models);
    let dim = built.models[0].dim();
    let init = match &config.init {
        Some(values) => {
            if values.len() != dim {
                return Err(Error::Config(format!(
                    "init must have length {dim}, got {}",
                    values.len()
                )));
            }
            ParamVector::new(values.clone())
        }
        None => ParamVector::zeros(dim),
    };
    let mut state = ServerState::new(init);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let mut metrics = Vec::with_capacity(config.rounds);
    for round in 0..config.rounds {
        let row = run_round(config, &built, &objective, &mut state, round, &pool)?;
        observer(&row);
        metrics.push(row);
    }
    Ok(ExperimentOutput {
        metrics,
        state,
        config_hash: crate::config::config_hash(config),
    })
}

/// Versioned state dump. Version 1 is JSON with flat float arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub round: usize,
    pub params: Vec<f64>,
    pub momentum: Vec<f64>,
    pub second_moment: Vec<f64>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn from_state(state: &ServerState<f64>, config_hash: &str) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            round: state.round,
            params: state.params.as_slice().to_vec(),
            momentum: state.momentum.as_slice().to_vec(),
            second_moment: state.second_moment.as_slice().to_vec(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cp: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("checkpoint: {e}")))?;
        if cp.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                cp.version
            )));
        }
        Ok(cp)
    }
}
