//! Server-side aggregation and global update rules.
//!
//! Aggregation weights are `Nⁱ / Σ Nʲ` over the round's participants,
//! reduced in ascending client id so results never depend on worker
//! scheduling. The decoupled updates consume the aggregated momentum
//! sum `P`; the adaptive variants first invert the momentum recursion
//! to recover an effective global gradient and feed it to a
//! server-held Adam or AdaGrad state.

use rand_chacha::ChaCha20Rng;

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::local::ClientReport;
use crate::models::Model;
use crate::scalar::Scalar;
use crate::vector::ParamVector;

/// Global optimizer state held by the server.
#[derive(Debug, Clone)]
pub struct ServerState<T> {
    /// Global parameters `W`.
    pub params: ParamVector<T>,
    /// Global momentum `m`.
    pub momentum: ParamVector<T>,
    /// Global elementwise second moment `V` (always non-negative).
    pub second_moment: ParamVector<T>,
    /// Round counter `E`.
    pub round: usize,
}

impl<T: Scalar> ServerState<T> {
    pub fn new(initial_params: ParamVector<T>) -> Self {
        let d = initial_params.len();
        ServerState {
            params: initial_params,
            momentum: ParamVector::zeros(d),
            second_moment: ParamVector::zeros(d),
            round: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    fn check_vector(&self, v: &ParamVector<T>) -> Result<()> {
        self.params.check_same_len(v)
    }
}

/// Sample-count aggregation weights for a report set, aligned with the
/// reports sorted by ascending client id.
#[derive(Debug, Clone)]
pub struct AggregationWeights<T> {
    /// `(client_id, weight)` in ascending client id order.
    pub entries: Vec<(usize, T)>,
}

impl<T: Scalar> AggregationWeights<T> {
    pub fn from_reports(reports: &[ClientReport<T>]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::EmptyReportSet);
        }
        let total: usize = reports.iter().map(|r| r.sample_count).sum();
        if total == 0 {
            return Err(Error::InvalidArgument("reports carry no samples".into()));
        }
        let mut entries: Vec<(usize, T)> = reports
            .iter()
            .map(|r| {
                (
                    r.client_id,
                    T::from_usize(r.sample_count).unwrap() / T::from_usize(total).unwrap(),
                )
            })
            .collect();
        entries.sort_by_key(|(id, _)| *id);
        Ok(AggregationWeights { entries })
    }
}

/// Which uploaded vector to aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportField {
    MomentumSum,
    MomentumFinal,
    ParamsFinal,
}

/// Weighted aggregate `Σ wᵢ vᵢ` of the selected field, in ascending
/// client id order.
pub fn aggregate<T: Scalar>(
    reports: &[ClientReport<T>],
    field: ReportField,
) -> Result<ParamVector<T>> {
    let weights = AggregationWeights::from_reports(reports)?;
    let by_id = |id: usize| {
        reports
            .iter()
            .find(|r| r.client_id == id)
            .expect("weights built from these reports")
    };
    let terms: Vec<(T, &ParamVector<T>)> = weights
        .entries
        .iter()
        .map(|&(id, w)| {
            let r = by_id(id);
            let v = match field {
                ReportField::MomentumSum => &r.momentum_sum,
                ReportField::MomentumFinal => &r.momentum_final,
                ReportField::ParamsFinal => &r.params_final,
            };
            (w, v)
        })
        .collect();
    ParamVector::weighted_sum(&terms)
}

/// Decoupled-momentum SGDM global update:
/// `W ← W − α η P`, `m ← m_new`, `E ← E + 1`. `V` untouched.
pub fn global_update_fedda_sgdm<T: Scalar>(
    state: &mut ServerState<T>,
    momentum_sum: &ParamVector<T>,
    momentum_new: ParamVector<T>,
    eta: T,
    alpha: T,
) -> Result<()> {
    state.check_vector(momentum_sum)?;
    state.check_vector(&momentum_new)?;
    state.params.axpy(-(alpha * eta), momentum_sum);
    state.params.ensure_finite("fedda sgdm update")?;
    state.momentum = momentum_new;
    state.round += 1;
    Ok(())
}

/// Invert one momentum update to recover the effective global gradient:
/// `G = (P − β₁ m_prev) / (1 − β₁)`.
pub fn reconstruct_global_gradient<T: Scalar>(
    momentum_sum: &ParamVector<T>,
    momentum_prev: &ParamVector<T>,
    beta1: T,
) -> Result<ParamVector<T>> {
    if beta1 == T::one() {
        return Err(Error::DegenerateBeta);
    }
    momentum_sum.check_same_len(momentum_prev)?;
    let inv = T::one() / (T::one() - beta1);
    Ok(momentum_sum.zip_map(momentum_prev, |p, m| (p - beta1 * m) * inv))
}

/// Decoupled Adam global update. The reconstructed gradient drives the
/// bias-corrected first/second moments (round exponent starts at 1) and
/// the parameter step; the stored momentum is replaced by the aggregate
/// of the clients' final momenta.
#[allow(clippy::too_many_arguments)]
pub fn global_update_fedda_adam<T: Scalar>(
    state: &mut ServerState<T>,
    momentum_sum: &ParamVector<T>,
    momentum_new: ParamVector<T>,
    eta: T,
    alpha: T,
    beta1: T,
    beta2: T,
    epsilon: T,
) -> Result<()> {
    state.check_vector(momentum_sum)?;
    state.check_vector(&momentum_new)?;
    let grad = reconstruct_global_gradient(momentum_sum, &state.momentum, beta1)?;
    let exponent = state.round as i32 + 1;
    let m_hat_scale = T::one() / (T::one() - beta1.powi(exponent));
    let m_hat = state
        .momentum
        .zip_map(&grad, |m, g| (beta1 * m + (T::one() - beta1) * g) * m_hat_scale);
    state
        .second_moment
        .scale_axpy(beta2, T::one() - beta2, &grad.map(|g| g * g));
    let v_hat_scale = T::one() / (T::one() - beta2.powi(exponent));
    let step = alpha * eta;
    let delta = m_hat.zip_map(&state.second_moment, |m, v| {
        step * m / ((v * v_hat_scale).sqrt() + epsilon)
    });
    state.params.axpy(-T::one(), &delta);
    state.params.ensure_finite("fedda adam update")?;
    state.momentum = momentum_new;
    state.round += 1;
    Ok(())
}

/// Decoupled AdaGrad global update: `V ← V + G²`,
/// `W ← W − α η G / (√V + ε)`.
pub fn global_update_fedda_adagrad<T: Scalar>(
    state: &mut ServerState<T>,
    momentum_sum: &ParamVector<T>,
    momentum_new: ParamVector<T>,
    eta: T,
    alpha: T,
    beta1: T,
    epsilon: T,
) -> Result<()> {
    state.check_vector(momentum_sum)?;
    state.check_vector(&momentum_new)?;
    let grad = reconstruct_global_gradient(momentum_sum, &state.momentum, beta1)?;
    state.second_moment.add_assign(&grad.map(|g| g * g));
    let step = alpha * eta;
    let delta = grad.zip_map(&state.second_moment, |g, v| step * g / (v.sqrt() + epsilon));
    state.params.axpy(-T::one(), &delta);
    state.params.ensure_finite("fedda adagrad update")?;
    state.momentum = momentum_new;
    state.round += 1;
    Ok(())
}

/// Parameter averaging: `W ← Σ wᵢ Wⁱ(T)`. Momentum and second moment
/// untouched.
pub fn global_update_fedavg<T: Scalar>(
    state: &mut ServerState<T>,
    reports: &[ClientReport<T>],
) -> Result<()> {
    let avg = aggregate(reports, ReportField::ParamsFinal)?;
    state.check_vector(&avg)?;
    state.params = avg;
    state.round += 1;
    Ok(())
}

/// Parameter averaging that also inherits the averaged local momentum —
/// the coupled local-SGDM baseline's server side.
pub fn global_update_naive_sgdm<T: Scalar>(
    state: &mut ServerState<T>,
    reports: &[ClientReport<T>],
) -> Result<()> {
    let momentum = aggregate(reports, ReportField::MomentumFinal)?;
    global_update_fedavg(state, reports)?;
    state.momentum = momentum;
    Ok(())
}

/// Server-side optimizer for the pseudo-gradient baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ServerOptimizer<T> {
    Sgdm { beta: T },
    Adam { beta1: T, beta2: T, epsilon: T },
    Adagrad { epsilon: T },
}

/// Pseudo-gradient server update: `Δ = W(E) − Σ wᵢ Wⁱ(T)` fed through
/// one step of the selected server optimizer with learning rate
/// `server_eta`, reusing the state's momentum/second-moment slots.
pub fn global_update_fedopt<T: Scalar>(
    state: &mut ServerState<T>,
    reports: &[ClientReport<T>],
    inner: &ServerOptimizer<T>,
    server_eta: T,
) -> Result<()> {
    let avg = aggregate(reports, ReportField::ParamsFinal)?;
    state.check_vector(&avg)?;
    let delta = state.params.sub(&avg);
    match *inner {
        ServerOptimizer::Sgdm { beta } => {
            state.momentum.scale_axpy(beta, T::one() - beta, &delta);
            state.params.axpy(-server_eta, &state.momentum.clone());
        }
        ServerOptimizer::Adam {
            beta1,
            beta2,
            epsilon,
        } => {
            let exponent = state.round as i32 + 1;
            state.momentum.scale_axpy(beta1, T::one() - beta1, &delta);
            state
                .second_moment
                .scale_axpy(beta2, T::one() - beta2, &delta.map(|d| d * d));
            let m_hat_scale = T::one() / (T::one() - beta1.powi(exponent));
            let v_hat_scale = T::one() / (T::one() - beta2.powi(exponent));
            let update = state.momentum.zip_map(&state.second_moment, |m, v| {
                server_eta * m * m_hat_scale / ((v * v_hat_scale).sqrt() + epsilon)
            });
            state.params.axpy(-T::one(), &update);
        }
        ServerOptimizer::Adagrad { epsilon } => {
            state.second_moment.add_assign(&delta.map(|d| d * d));
            let update = state
                .delta_over_preconditioner(&delta, epsilon)
                .scaled(server_eta);
            state.params.axpy(-T::one(), &update);
        }
    }
    state.params.ensure_finite("fedopt update")?;
    state.round += 1;
    Ok(())
}

impl<T: Scalar> ServerState<T> {
    fn delta_over_preconditioner(&self, delta: &ParamVector<T>, epsilon: T) -> ParamVector<T> {
        delta.zip_map(&self.second_moment, |d, v| d / (v.sqrt() + epsilon))
    }
}

/// Local adaptive rule for the restart baseline: optimizer state is
/// zeroed at every round start, nothing is inherited across rounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RestartLocalRule<T> {
    Sgdm { beta: T },
    Adam { beta1: T, beta2: T, epsilon: T },
    Adagrad { epsilon: T },
}

/// One client's round under the restart baseline: run `iters` steps of
/// the local adaptive rule from freshly zeroed optimizer state and
/// report the final parameters.
#[allow(clippy::too_many_arguments)]
pub fn restart_local_run<T: Scalar>(
    round_start_params: &ParamVector<T>,
    model: &Model<T>,
    data: &ClientDataset<T>,
    rule: &RestartLocalRule<T>,
    iters: usize,
    eta: T,
    batch_size: usize,
    rng: &mut ChaCha20Rng,
) -> Result<ClientReport<T>> {
    if iters == 0 {
        return Err(Error::InvalidIterationCount);
    }
    let d = round_start_params.len();
    let mut w = round_start_params.clone();
    let mut m = ParamVector::zeros(d);
    let mut v = ParamVector::zeros(d);
    let mut p = ParamVector::zeros(d);
    for t in 0..iters {
        let batch = data.sample_batch(batch_size, rng)?;
        let g = model.grad(&w, &batch)?;
        match *rule {
            RestartLocalRule::Sgdm { beta } => {
                m.scale_axpy(beta, T::one() - beta, &g);
                w.axpy(-eta, &m.clone());
            }
            RestartLocalRule::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let exponent = t as i32 + 1;
                m.scale_axpy(beta1, T::one() - beta1, &g);
                v.scale_axpy(beta2, T::one() - beta2, &g.map(|x| x * x));
                let m_hat_scale = T::one() / (T::one() - beta1.powi(exponent));
                let v_hat_scale = T::one() / (T::one() - beta2.powi(exponent));
                let update = m.zip_map(&v, |mi, vi| {
                    eta * mi * m_hat_scale / ((vi * v_hat_scale).sqrt() + epsilon)
                });
                w.axpy(-T::one(), &update);
            }
            RestartLocalRule::Adagrad { epsilon } => {
                v.add_assign(&g.map(|x| x * x));
                let update = g.zip_map(&v, |gi, vi| eta * gi / (vi.sqrt() + epsilon));
                w.axpy(-T::one(), &update);
            }
        }
        p.add_assign(&m);
    }
    w.ensure_finite("restart local run")?;
    Ok(ClientReport {
        client_id: data.client_id,
        momentum_sum: p,
        momentum_final: m,
        params_final: w,
        sample_count: data.sample_count(),
    })
}
