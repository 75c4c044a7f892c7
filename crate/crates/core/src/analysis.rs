//! Verification harness: momentum-deviation traces, growth-rate fits,
//! the drift bound probe, closed-form rate constants, and the
//! exact-reduction suite.
//!
//! The deviation experiment runs three synchronized systems from one
//! initialization and never re-syncs them:
//!
//! * the centralized SGDM recursion on the pooled loss,
//! * per-client coupled SGDM (each client trains on its own loss), and
//! * the decoupled system (local parameters move by raw gradients; the
//!   momentum recursion and a separately-updated global trajectory run
//!   alongside, aggregated every step with unit server scale).
//!
//! Recorded norms are Euclidean; row `t = 0` is identically zero by
//! shared initialization.

use serde::Serialize;

use crate::centralized::{
    run_centralized_full_batch, CentralOptimizer, CentralState, GlobalObjective,
};
use crate::config::{parse_config, FederationConfig};
use crate::data::Federation;
use crate::engine::{build_experiment, metrics_to_csv, run_round};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::scalar::Scalar;
use crate::server::ServerState;
use crate::vector::ParamVector;

/// Per-step deviation norms of the naive-local and decoupled systems
/// from the centralized reference.
#[derive(Debug, Clone)]
pub struct DeviationTrace {
    /// `[t][client]` distance of each coupled local momentum from the
    /// centralized momentum.
    pub momentum_local: Vec<Vec<f64>>,
    /// `[t]` distance of the aggregated decoupled momentum from the
    /// centralized momentum.
    pub momentum_fedda: Vec<f64>,
    /// `[t][client]` distance of each coupled local parameter vector
    /// from the centralized one.
    pub params_local: Vec<Vec<f64>>,
    /// `[t]` distance of the decoupled global trajectory from the
    /// centralized one.
    pub params_fedda: Vec<f64>,
}

impl DeviationTrace {
    pub fn steps(&self) -> usize {
        self.momentum_fedda.len().saturating_sub(1)
    }

    /// Worst-client momentum deviation per step.
    pub fn momentum_local_max(&self) -> Vec<f64> {
        self.momentum_local
            .iter()
            .map(|row| row.iter().cloned().fold(0.0, f64::max))
            .collect()
    }

    /// Worst-client parameter deviation per step.
    pub fn params_local_max(&self) -> Vec<f64> {
        self.params_local
            .iter()
            .map(|row| row.iter().cloned().fold(0.0, f64::max))
            .collect()
    }

    /// Trace CSV with the documented columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,d_m_local_max,d_m_fedda,d_w_local_max,d_w_fedda\n");
        let m_local = self.momentum_local_max();
        let w_local = self.params_local_max();
        for t in 0..self.momentum_fedda.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                t, m_local[t], self.momentum_fedda[t], w_local[t], self.params_fedda[t]
            ));
        }
        out
    }
}

/// Run the three synchronized systems for `steps` steps. `full_batch`
/// removes sampling noise (batches are shared across the systems when
/// sampling is on, so only drift separates them).
#[allow(clippy::too_many_arguments)]
pub fn deviation_experiment(
    federation: &Federation<f64>,
    models: &[Model<f64>],
    beta: f64,
    eta: f64,
    steps: usize,
    full_batch: bool,
    batch_size: usize,
    seed: u64,
    w0: &ParamVector<f64>,
    m0: &ParamVector<f64>,
) -> Result<DeviationTrace> {
    if federation.client_count() != models.len() {
        return Err(Error::InvalidArgument(
            "one model per client required".into(),
        ));
    }
    if !(0.0..1.0).contains(&beta) || eta <= 0.0 {
        return Err(Error::InvalidArgument(
            "need beta in [0, 1) and positive eta".into(),
        ));
    }
    let clients = federation.client_count();
    let total = federation.total_samples() as f64;
    let weights: Vec<f64> = federation
        .clients
        .iter()
        .map(|c| c.sample_count() as f64 / total)
        .collect();

    let mut central_w = w0.clone();
    let mut central_m = m0.clone();
    let mut naive_w = vec![w0.clone(); clients];
    let mut naive_m = vec![m0.clone(); clients];
    let mut dec_w = vec![w0.clone(); clients];
    let mut dec_m = vec![m0.clone(); clients];
    let mut fedda_w = w0.clone();

    let mut trace = DeviationTrace {
        momentum_local: vec![vec![0.0; clients]],
        momentum_fedda: vec![0.0],
        params_local: vec![vec![0.0; clients]],
        params_fedda: vec![0.0],
    };

    let mut rngs: Vec<_> = (0..clients)
        .map(|i| {
            crate::rng::stream(
                seed,
                crate::rng::StreamDomain::LocalBatches {
                    round: 0,
                    client_id: i as u64,
                },
            )
        })
        .collect();

    for _t in 1..=steps {
        // One shared batch per client per step.
        let batches: Vec<_> = federation
            .clients
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if full_batch {
                    Ok(c.full_batch())
                } else {
                    c.sample_batch(batch_size.min(c.sample_count()), &mut rngs[i])
                }
            })
            .collect::<Result<Vec<_>>>()?;

        // Centralized SGDM on the pooled loss.
        let mut central_g = ParamVector::zeros(central_w.len());
        for i in 0..clients {
            let g = models[i].grad(&central_w, &batches[i])?;
            central_g.axpy(weights[i], &g);
        }
        central_m.scale_axpy(beta, 1.0 - beta, &central_g);
        central_w.axpy(-eta, &central_m.clone());

        // Coupled local SGDM per client.
        for i in 0..clients {
            let g = models[i].grad(&naive_w[i], &batches[i])?;
            naive_m[i].scale_axpy(beta, 1.0 - beta, &g);
            naive_w[i].axpy(-eta, &naive_m[i].clone());
        }

        // Decoupled system: local parameters by raw gradients, momentum
        // bookkeeping aggregated each step, unit server scale.
        let mut fedda_m = ParamVector::zeros(central_w.len());
        for i in 0..clients {
            let g = models[i].grad(&dec_w[i], &batches[i])?;
            dec_w[i].axpy(-eta, &g);
            dec_m[i].scale_axpy(beta, 1.0 - beta, &g);
            fedda_m.axpy(weights[i], &dec_m[i]);
        }
        fedda_w.axpy(-eta, &fedda_m);

        trace.momentum_local.push(
            (0..clients)
                .map(|i| naive_m[i].sub(&central_m).norm())
                .collect(),
        );
        trace
            .params_local
            .push((0..clients).map(|i| naive_w[i].sub(&central_w).norm()).collect());
        trace.momentum_fedda.push(fedda_m.sub(&central_m).norm());
        trace.params_fedda.push(fedda_w.sub(&central_w).norm());
    }
    Ok(trace)
}

/// Inclusive index window `[start, end]` into a per-step series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start) + 1
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}

/// Least-squares fits of a positive series over a window:
/// `log d` vs `t` (exponential rate) and `log d` vs `log t`
/// (power-law exponent), each with its coefficient of determination.
#[derive(Debug, Clone, Serialize)]
pub struct GrowthFit {
    pub window: Window,
    pub exp_rate: f64,
    pub exp_r2: f64,
    pub power_exponent: f64,
    pub power_r2: f64,
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        sxx += (x - x_mean) * (x - x_mean);
        sxy += (x - x_mean) * (y - y_mean);
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        let fit = intercept + slope * x;
        ss_res += (y - fit) * (y - fit);
        ss_tot += (y - y_mean) * (y - y_mean);
    }
    let r2 = if ss_tot == 0.0 {
        if ss_res.abs() < 1e-30 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    (slope, intercept, r2)
}

/// Fit both growth laws on `series[window]`. The window must start at
/// `t >= 1` (the power fit takes `log t`), contain at least five
/// points, and hold strictly positive values.
pub fn fit_growth(series: &[f64], window: Window) -> Result<GrowthFit> {
    if window.start < 1 {
        return Err(Error::InvalidArgument(
            "growth window must start at t >= 1".into(),
        ));
    }
    if window.end >= series.len() {
        return Err(Error::InvalidArgument(format!(
            "window end {} past series length {}",
            window.end,
            series.len()
        )));
    }
    if window.is_empty() || window.len() < 5 {
        return Err(Error::WindowTooSmall {
            min: 5,
            got: window.len(),
        });
    }
    let values = &series[window.start..=window.end];
    if values.iter().any(|&v| v <= 0.0) {
        return Err(Error::NonpositiveValueInWindow);
    }
    let ts: Vec<f64> = (window.start..=window.end).map(|t| t as f64).collect();
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let (exp_rate, _, exp_r2) = least_squares(&ts, &logs);
    let log_ts: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let (power_exponent, _, power_r2) = least_squares(&log_ts, &logs);
    Ok(GrowthFit {
        window,
        exp_rate,
        exp_r2,
        power_exponent,
        power_r2,
    })
}

/// Documented window procedure for a deviation series: start at the
/// first `t >= 1` with `d(t) > floor`, end before saturation — at the
/// step before `d` first exceeds `cap`, or at the series peak if the
/// cap never binds (a trace that has stopped growing has saturated).
pub fn growth_window(series: &[f64], floor: f64, cap: f64) -> Option<Window> {
    let start = (1..series.len()).find(|&t| series[t] > floor)?;
    let end = match series[start..].iter().position(|&v| v > cap) {
        Some(0) => return None,
        Some(offset) => start + offset - 1,
        None => series.len() - 1,
    };
    let peak = (start..=end)
        .max_by(|&a, &b| series[a].partial_cmp(&series[b]).expect("finite series"))?;
    let end = end.min(peak);
    (end >= start).then_some(Window { start, end })
}

/// Post-peak relaxation window: from the series maximum to the last
/// index still above `floor`.
pub fn decay_window(series: &[f64], floor: f64) -> Option<Window> {
    let (peak, _) = series
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite series"))?;
    let start = peak.max(1);
    let end = (start..series.len())
        .take_while(|&t| series[t] > floor)
        .last()?;
    (end > start).then_some(Window { start, end })
}

/// Select the fitting window for a deviation series: the growth window
/// when it is usable and the series actually grows across it, otherwise
/// the post-peak relaxation window. Deterministic in the series.
pub fn select_fit_window(series: &[f64], floor: f64, cap: f64) -> Option<Window> {
    if let Some(w) = growth_window(series, floor, cap) {
        if w.len() >= 5 && series[w.end] > series[w.start] {
            return Some(w);
        }
    }
    decay_window(series, floor)
}

/// Fit results for one deviation series, tagged with the regime the
/// window selector landed on.
#[derive(Debug, Clone, Serialize)]
pub struct SeriesFit {
    /// "growth" when the pre-saturation window was used, "relaxation"
    /// for the post-peak fallback.
    pub regime: &'static str,
    pub fit: GrowthFit,
}

/// Summary emitted by the deviation command: fits for the worst-client
/// and aggregated momentum deviations, the dominance check, and the
/// predicted rate constants.
#[derive(Debug, Clone, Serialize)]
pub struct DeviationSummary {
    /// True when every deviation stays below the noise floor (identical
    /// client losses); no fits are attempted in that case.
    pub degenerate: bool,
    /// Saturation cap used by the window procedure:
    /// `0.1 ‖W(0) − W*‖`.
    pub cap: f64,
    pub local_momentum: Option<SeriesFit>,
    pub fedda_momentum: Option<SeriesFit>,
    /// Whether the aggregated-momentum deviation stays below the
    /// worst-client deviation for every `t >= 10`.
    pub fedda_dominated_from_t10: bool,
    pub first_dominance_violation: Option<usize>,
    pub lipschitz: Option<f64>,
    pub lambda_plus: Option<f64>,
}

const DEVIATION_NOISE_FLOOR: f64 = 1e-8;

fn fit_series(series: &[f64], cap: f64) -> Option<SeriesFit> {
    let window = select_fit_window(series, DEVIATION_NOISE_FLOOR, cap)?;
    let regime = match growth_window(series, DEVIATION_NOISE_FLOOR, cap) {
        Some(g) if g == window => "growth",
        _ => "relaxation",
    };
    fit_growth(series, window).ok().map(|fit| SeriesFit { regime, fit })
}

/// Apply the documented window/fit procedure to a deviation trace.
/// `distance_to_optimum` is `‖W(0) − W*‖` of the pooled objective.
pub fn summarize_deviation(
    trace: &DeviationTrace,
    distance_to_optimum: f64,
    constants: Option<TheoryConstants>,
) -> DeviationSummary {
    let local = trace.momentum_local_max();
    let fedda = &trace.momentum_fedda;
    let peak = local
        .iter()
        .chain(fedda.iter())
        .cloned()
        .fold(0.0, f64::max);
    let cap = 0.1 * distance_to_optimum;
    if peak <= DEVIATION_NOISE_FLOOR {
        return DeviationSummary {
            degenerate: true,
            cap,
            local_momentum: None,
            fedda_momentum: None,
            fedda_dominated_from_t10: true,
            first_dominance_violation: None,
            lipschitz: constants.map(|c| c.lipschitz),
            lambda_plus: constants.map(|c| c.lambda_plus),
        };
    }
    let first_violation = (10..fedda.len()).find(|&t| fedda[t] > local[t]);
    DeviationSummary {
        degenerate: false,
        cap,
        local_momentum: fit_series(&local, cap),
        fedda_momentum: fit_series(fedda, cap),
        fedda_dominated_from_t10: first_violation.is_none(),
        first_dominance_violation: first_violation,
        lipschitz: constants.map(|c| c.lipschitz),
        lambda_plus: constants.map(|c| c.lambda_plus),
    }
}

/// Closed-form rate constants for a quadratic federation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TheoryConstants {
    /// Gradient Lipschitz constant: the largest client curvature
    /// eigenvalue.
    pub lipschitz: f64,
    /// Predicted exponential deviation rate (per unit continuous time).
    pub lambda_plus: f64,
}

/// `L = maxᵢ λmax(Aᵢ)` by eigenvalue computation, then
/// `λ⁺ = (−(1−β) + √((1−β)² + 4 (1−β) L)) / (2η)`.
pub fn theory_constants<T: Scalar>(
    models: &[Model<T>],
    beta: f64,
    eta: f64,
) -> Result<TheoryConstants> {
    let mut lipschitz = 0.0_f64;
    for model in models {
        let Model::Quadratic { curvature, .. } = model else {
            return Err(Error::NotQuadratic);
        };
        let top = curvature.symmetric_max_eigenvalue()?.as_f64();
        lipschitz = lipschitz.max(top);
    }
    let b = 1.0 - beta;
    let lambda_plus = (-b + (b * b + 4.0 * b * lipschitz).sqrt()) / (2.0 * eta);
    Ok(TheoryConstants {
        lipschitz,
        lambda_plus,
    })
}

/// Per-step parameter drift of never-synced local full-batch GD from
/// centralized GD, with the crude linear-in-t bound
/// `2 · sup‖∇Lⁱ‖∞ · t · η` built from the gradients observed along both
/// trajectories.
#[derive(Debug, Clone, Serialize)]
pub struct DriftProbe {
    pub measured: Vec<f64>,
    pub bound: Vec<f64>,
    pub grad_sup: f64,
}

pub fn fedavg_drift_probe(
    federation: &Federation<f64>,
    models: &[Model<f64>],
    eta: f64,
    steps: usize,
    w0: &ParamVector<f64>,
) -> Result<DriftProbe> {
    if eta <= 0.0 {
        return Err(Error::InvalidArgument("eta must be positive".into()));
    }
    let clients = federation.client_count();
    let total = federation.total_samples() as f64;
    let weights: Vec<f64> = federation
        .clients
        .iter()
        .map(|c| c.sample_count() as f64 / total)
        .collect();

    let mut central = w0.clone();
    let mut locals = vec![w0.clone(); clients];
    let mut grad_sup = 0.0_f64;
    let mut measured = vec![0.0];

    for _t in 1..=steps {
        let mut pooled = ParamVector::zeros(w0.len());
        for i in 0..clients {
            let g_central = models[i].grad(&central, &federation.clients[i].full_batch())?;
            grad_sup = grad_sup.max(g_central.norm_inf());
            pooled.axpy(weights[i], &g_central);
        }
        central.axpy(-eta, &pooled);
        let mut averaged = ParamVector::zeros(w0.len());
        for i in 0..clients {
            let g_local = models[i].grad(&locals[i], &federation.clients[i].full_batch())?;
            grad_sup = grad_sup.max(g_local.norm_inf());
            locals[i].axpy(-eta, &g_local);
            averaged.axpy(weights[i], &locals[i]);
        }
        measured.push(central.sub(&averaged).norm());
    }
    let bound = (0..=steps)
        .map(|t| 2.0 * grad_sup * t as f64 * eta)
        .collect();
    Ok(DriftProbe {
        measured,
        bound,
        grad_sup,
    })
}

/// One reduction case of the exact-equivalence suite.
#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceCase {
    pub name: String,
    /// Largest componentwise state deviation observed over the run.
    pub max_deviation: f64,
    pub tolerance: f64,
    /// Whether the case demands bit-for-bit equality.
    pub bitwise: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub cases: Vec<EquivalenceCase>,
}

impl EquivalenceReport {
    pub fn all_passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }
}

type StateSeries = (
    Vec<ParamVector<f64>>,
    Vec<ParamVector<f64>>,
    Vec<ParamVector<f64>>,
);

struct FederatedTrajectory {
    params: Vec<ParamVector<f64>>,
    momentum: Vec<ParamVector<f64>>,
    second_moment: Vec<ParamVector<f64>>,
    metrics_csv: String,
}

fn federated_trajectory(config: &FederationConfig) -> Result<FederatedTrajectory> {
    config.validate()?;
    let built = build_experiment(config)?;
    let objective = GlobalObjective::new(&built.federation, &built.models);
    let dim = built.models[0].dim();
    let init = match &config.init {
        Some(v) => ParamVector::new(v.clone()),
        None => ParamVector::zeros(dim),
    };
    let mut state = ServerState::new(init);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let mut params = vec![state.params.clone()];
    let mut momentum = vec![state.momentum.clone()];
    let mut second_moment = vec![state.second_moment.clone()];
    let mut rows = Vec::new();
    for round in 0..config.rounds {
        let row = run_round(config, &built, &objective, &mut state, round, &pool)?;
        rows.push(row);
        params.push(state.params.clone());
        momentum.push(state.momentum.clone());
        second_moment.push(state.second_moment.clone());
    }
    Ok(FederatedTrajectory {
        params,
        momentum,
        second_moment,
        metrics_csv: metrics_to_csv(&rows),
    })
}

fn max_series_deviation(a: &[ParamVector<f64>], b: &[ParamVector<f64>]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.max_abs_diff(y))
        .fold(0.0, f64::max)
}

fn quadratic_reduction_config(algorithm: &str, rounds: usize, eta: f64) -> FederationConfig {
    parse_config(&format!(
        r#"{{
            "algorithm": "{algorithm}",
            "data": {{"kind": "quadratic", "clients": 3, "dim": 4, "heterogeneity": 1.0}},
            "rounds": {rounds},
            "clients_per_round": 3,
            "local_iters": 1,
            "eta": {eta},
            "alpha": 1.0,
            "beta1": 0.9,
            "beta2": 0.99,
            "epsilon": 0.1,
            "seed": 7,
            "init": [0.5, -0.25, 0.75, 0.1]
        }}"#
    ))
    .expect("valid reduction config")
}

fn centralized_counterpart(
    config: &FederationConfig,
    optimizer: &CentralOptimizer<f64>,
    eta: f64,
) -> Result<StateSeries> {
    let built = build_experiment(config)?;
    let objective = GlobalObjective::new(&built.federation, &built.models);
    let init = match &config.init {
        Some(v) => ParamVector::new(v.clone()),
        None => ParamVector::zeros(built.models[0].dim()),
    };
    let traj = run_centralized_full_batch(
        optimizer,
        &objective,
        CentralState::new(init),
        config.rounds,
        eta,
    )?;
    let params = traj.states.iter().map(|s| s.params.clone()).collect();
    let momentum = traj.states.iter().map(|s| s.momentum.clone()).collect();
    let second = traj
        .states
        .iter()
        .map(|s| s.second_moment.clone())
        .collect();
    Ok((params, momentum, second))
}

/// Run every single-step/full-batch/zero-coefficient reduction on its
/// pinned instance. `eta_perturbation` is a test hook that scales the
/// federated side's learning rate in the momentum case; anything other
/// than 1.0 must make the suite fail.
pub fn equivalence_suite(eta_perturbation: f64) -> Result<EquivalenceReport> {
    let mut cases = Vec::new();

    // (a) Parameter averaging with one full-batch local step and full
    // participation reproduces centralized GD.
    {
        let config = quadratic_reduction_config("fed_avg", 200, 0.1);
        let fed = federated_trajectory(&config)?;
        let (central_w, _, _) = centralized_counterpart(&config, &CentralOptimizer::Gd, 0.1)?;
        let dev = max_series_deviation(&fed.params, &central_w);
        cases.push(EquivalenceCase {
            name: "fedavg_vs_centralized_gd".into(),
            max_deviation: dev,
            tolerance: 1e-12,
            bitwise: false,
            passed: dev < 1e-12,
        });
    }

    // (b) Decoupled momentum with unit server scale reproduces
    // centralized SGDM (parameters and momentum).
    {
        let mut config = quadratic_reduction_config("fedda_sgdm", 100, 0.1);
        config.eta *= eta_perturbation;
        let fed = federated_trajectory(&config)?;
        let (cw, cm, _) =
            centralized_counterpart(&config, &CentralOptimizer::Sgdm { beta: 0.9 }, 0.1)?;
        let dev = max_series_deviation(&fed.params, &cw)
            .max(max_series_deviation(&fed.momentum, &cm));
        cases.push(EquivalenceCase {
            name: "fedda_sgdm_vs_centralized_sgdm".into(),
            max_deviation: dev,
            tolerance: 1e-9,
            bitwise: false,
            passed: dev < 1e-9,
        });
    }

    // (c) Same reduction for the adaptive servers.
    {
        let config = quadratic_reduction_config("fedda_adam", 100, 0.1);
        let fed = federated_trajectory(&config)?;
        let (cw, cm, cv) = centralized_counterpart(
            &config,
            &CentralOptimizer::Adam {
                beta1: 0.9,
                beta2: 0.99,
                epsilon: 0.1,
            },
            0.1,
        )?;
        let dev = max_series_deviation(&fed.params, &cw)
            .max(max_series_deviation(&fed.momentum, &cm))
            .max(max_series_deviation(&fed.second_moment, &cv));
        cases.push(EquivalenceCase {
            name: "fedda_adam_vs_centralized_adam".into(),
            max_deviation: dev,
            tolerance: 1e-9,
            bitwise: false,
            passed: dev < 1e-9,
        });
    }
    {
        let config = quadratic_reduction_config("fedda_adagrad", 100, 0.1);
        let fed = federated_trajectory(&config)?;
        let (cw, _, cv) = centralized_counterpart(
            &config,
            &CentralOptimizer::Adagrad { epsilon: 0.1 },
            0.1,
        )?;
        let dev = max_series_deviation(&fed.params, &cw)
            .max(max_series_deviation(&fed.second_moment, &cv));
        cases.push(EquivalenceCase {
            name: "fedda_adagrad_vs_centralized_adagrad".into(),
            max_deviation: dev,
            tolerance: 1e-9,
            bitwise: false,
            passed: dev < 1e-9,
        });
    }

    // (d) Zero momentum coefficient collapses the decoupled method onto
    // parameter averaging. Bitwise equality is checked on a dyadic
    // instance (power-of-two learning rate and weights, exact gradient
    // arithmetic), where both recombinations compute the same reals.
    {
        let dyadic = |algorithm: &str| {
            parse_config(&format!(
                r#"{{
                    "algorithm": "{algorithm}",
                    "data": {{"kind": "mirrored_quadratic", "heterogeneity": 1.0}},
                    "rounds": 5,
                    "local_iters": 2,
                    "eta": 0.125,
                    "alpha": 1.0,
                    "beta1": 0.0,
                    "seed": 5,
                    "init": [1.0, -0.5]
                }}"#
            ))
            .expect("valid dyadic config")
        };
        let fedda = federated_trajectory(&dyadic("fedda_sgdm"))?;
        let fedavg = federated_trajectory(&dyadic("fed_avg"))?;
        let dev = max_series_deviation(&fedda.params, &fedavg.params);
        let bits_equal = fedda
            .params
            .iter()
            .zip(fedavg.params.iter())
            .all(|(a, b)| {
                a.as_slice()
                    .iter()
                    .zip(b.as_slice().iter())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
            });
        cases.push(EquivalenceCase {
            name: "fedda_beta0_vs_fedavg_bitwise".into(),
            max_deviation: dev,
            tolerance: 0.0,
            bitwise: true,
            passed: bits_equal && fedda.metrics_csv == fedavg.metrics_csv,
        });
    }

    // (d') Companion on a general stochastic instance: same reduction to
    // floating-point accuracy under shared batch streams.
    {
        let general = |algorithm: &str| {
            parse_config(&format!(
                r#"{{
                    "algorithm": "{algorithm}",
                    "data": {{
                        "kind": "classification",
                        "samples": 60,
                        "features": 3,
                        "classes": 2,
                        "clients": 3,
                        "partition": {{"scheme": "dirichlet", "alpha": 0.5}}
                    }},
                    "rounds": 20,
                    "local_iters": 3,
                    "batch_size": 8,
                    "eta": 0.2,
                    "alpha": 1.0,
                    "beta1": 0.0,
                    "seed": 12
                }}"#
            ))
            .expect("valid companion config")
        };
        let fedda = federated_trajectory(&general("fedda_sgdm"))?;
        let fedavg = federated_trajectory(&general("fed_avg"))?;
        let dev = max_series_deviation(&fedda.params, &fedavg.params);
        cases.push(EquivalenceCase {
            name: "fedda_beta0_vs_fedavg_shared_streams".into(),
            max_deviation: dev,
            tolerance: 1e-12,
            bitwise: false,
            passed: dev < 1e-12,
        });
    }

    // (e) Zero proximal coefficient is the decoupled method, bit for
    // bit (identical code path).
    {
        let make = |algorithm: &str| {
            let mut config = quadratic_reduction_config(algorithm, 50, 0.1);
            config.local_iters = 3;
            config.batch_size = Some(1);
            config.mu = 0.0;
            config
        };
        let prox = federated_trajectory(&make("fedprox_da"))?;
        let plain = federated_trajectory(&make("fedda_sgdm"))?;
        let dev = max_series_deviation(&prox.params, &plain.params);
        let bits_equal = prox.metrics_csv == plain.metrics_csv && dev == 0.0;
        cases.push(EquivalenceCase {
            name: "fedprox_mu0_vs_fedda_bitwise".into(),
            max_deviation: dev,
            tolerance: 0.0,
            bitwise: true,
            passed: bits_equal,
        });
    }

    Ok(EquivalenceReport { cases })
}

/// One model-family gradient check result.
#[derive(Debug, Clone, Serialize)]
pub struct GradientCheckCase {
    pub kind: String,
    pub trials: usize,
    pub worst_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Finite-difference verification across 100 seeded (model, point,
/// batch) triples per model family.
pub fn gradient_check_suite() -> Result<Vec<GradientCheckCase>> {
    use crate::linalg::Matrix;
    use crate::models::Batch;
    use crate::rng::{stream, StreamDomain};
    use rand::Rng;

    let mut rng = stream(2024, StreamDomain::DataGeneration);
    let step = 1e-6;
    let trials = 100;

    let mut worst_quadratic = 0.0_f64;
    let mut worst_logistic = 0.0_f64;
    let mut worst_mlp = 0.0_f64;
    for _ in 0..trials {
        let dim = rng.random_range(2..5);
        let mut q = Matrix::<f64>::zeros(dim, dim);
        for i in 0..dim {
            q[(i, i)] = rng.random_range(0.5..2.0);
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                let v = rng.random_range(-0.2..0.2);
                q[(i, j)] = v;
                q[(j, i)] = v;
            }
        }
        // Diagonally dominant, hence PSD.
        for i in 0..dim {
            q[(i, i)] += 0.2 * dim as f64;
        }
        let center = ParamVector::from_fn(dim, |_| rng.random_range(-1.0..1.0));
        let model = Model::quadratic(q, center)?;
        let w = ParamVector::from_fn(dim, |_| rng.random_range(-2.0..2.0));
        let batch = Batch::new(Matrix::zeros(1, 1), vec![0.0], vec![0])?;
        worst_quadratic = worst_quadratic.max(model.finite_diff_check(&w, &batch, step)?);

        let features = rng.random_range(2..6);
        let classes = rng.random_range(2..5);
        let rows = rng.random_range(2..9);
        let model = Model::logistic(features, classes)?;
        let batch = Batch::new(
            Matrix::from_rows(
                (0..rows)
                    .map(|_| (0..features).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect(),
            )?,
            (0..rows)
                .map(|_| rng.random_range(0..classes) as f64)
                .collect(),
            (0..rows).collect(),
        )?;
        let w = ParamVector::from_fn(model.dim(), |_| rng.random_range(-1.0..1.0));
        worst_logistic = worst_logistic.max(model.finite_diff_check(&w, &batch, step)?);

        let input = rng.random_range(2..4);
        let hidden = rng.random_range(3..7);
        let model = Model::mlp(vec![input, hidden, 1])?;
        let rows = 8;
        let batch = Batch::new(
            Matrix::from_rows(
                (0..rows)
                    .map(|_| (0..input).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect(),
            )?,
            (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..rows).collect(),
        )?;
        let w = ParamVector::from_fn(model.dim(), |_| rng.random_range(-1.0..1.0));
        worst_mlp = worst_mlp.max(model.finite_diff_check(&w, &batch, step)?);
    }

    let case = |kind: &str, worst: f64| GradientCheckCase {
        kind: kind.into(),
        trials,
        worst_relative_error: worst,
        tolerance: 1e-5,
        passed: worst < 1e-5,
    };
    Ok(vec![
        case("quadratic", worst_quadratic),
        case("logistic", worst_logistic),
        case("mlp", worst_mlp),
    ])
}

/// Combined report for the check command.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub equivalence: Vec<EquivalenceCase>,
    pub gradients: Vec<GradientCheckCase>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.equivalence.iter().all(|c| c.passed) && self.gradients.iter().all(|c| c.passed)
    }
}

/// Run the full verification battery (reductions + gradient checks).
pub fn run_checks(eta_perturbation: f64) -> Result<CheckReport> {
    let equivalence = equivalence_suite(eta_perturbation)?.cases;
    let gradients = gradient_check_suite()?;
    Ok(CheckReport {
        equivalence,
        gradients,
    })
}
