//! Centralized reference trainers.
//!
//! These are the single-machine optimizers the federated runs are
//! measured against: GD, SGD, SGDM, Adam, AdaGrad. Trajectories record
//! the full `(W, m, V)` state after every step so equivalence and
//! deviation experiments can compare round by round.

use rand_chacha::ChaCha20Rng;

use crate::data::{ClientDataset, Federation};
use crate::error::Result;
use crate::models::Model;
use crate::scalar::Scalar;
use crate::vector::ParamVector;

/// The pooled loss `Σ wᵢ Lⁱ(W)` with `wᵢ = Nⁱ/N`, evaluated client by
/// client in ascending client id so its summation order matches the
/// server-side aggregation exactly.
pub struct GlobalObjective<'a, T> {
    parts: Vec<(T, &'a Model<T>, &'a ClientDataset<T>)>,
}

impl<'a, T: Scalar> GlobalObjective<'a, T> {
    pub fn new(federation: &'a Federation<T>, models: &'a [Model<T>]) -> Self {
        let total: usize = federation.total_samples();
        let mut parts: Vec<(T, &Model<T>, &ClientDataset<T>)> = federation
            .clients
            .iter()
            .zip(models.iter())
            .map(|(c, m)| {
                let w = T::from_usize(c.sample_count()).unwrap() / T::from_usize(total).unwrap();
                (w, m, c)
            })
            .collect();
        parts.sort_by_key(|(_, _, c)| c.client_id);
        GlobalObjective { parts }
    }

    pub fn dim(&self) -> usize {
        self.parts.first().map(|(_, m, _)| m.dim()).unwrap_or(0)
    }

    pub fn loss(&self, params: &ParamVector<T>) -> Result<T> {
        let mut total = T::zero();
        for (w, model, data) in &self.parts {
            total += *w * model.loss(params, &data.full_batch())?;
        }
        Ok(total)
    }

    /// Full-batch pooled gradient `Σ wᵢ Gⁱ(W)`.
    pub fn grad(&self, params: &ParamVector<T>) -> Result<ParamVector<T>> {
        let mut acc = ParamVector::zeros(params.len());
        for (w, model, data) in &self.parts {
            let g = model.grad(params, &data.full_batch())?;
            acc.axpy(*w, &g);
        }
        Ok(acc)
    }

    /// Largest client-gradient sup-norm at `params` (used for the
    /// drift-bound probe).
    pub fn max_client_grad_inf(&self, params: &ParamVector<T>) -> Result<T> {
        let mut worst = T::zero();
        for (_, model, data) in &self.parts {
            let g = model.grad(params, &data.full_batch())?;
            worst = worst.max(g.norm_inf());
        }
        Ok(worst)
    }

    /// Minimizer of a pooled quadratic objective, solved from
    /// `(Σ wᵢ Aᵢ) x = Σ wᵢ Aᵢ cᵢ`.
    pub fn quadratic_minimizer(&self) -> Result<ParamVector<T>> {
        use crate::error::Error;
        use crate::linalg::Matrix;
        let d = self.dim();
        let mut lhs = Matrix::zeros(d, d);
        let mut rhs = vec![T::zero(); d];
        for (w, model, _) in &self.parts {
            let Model::Quadratic { curvature, center } = model else {
                return Err(Error::NotQuadratic);
            };
            for i in 0..d {
                for j in 0..d {
                    lhs[(i, j)] += *w * curvature[(i, j)];
                }
            }
            let ac = curvature.matvec(center.as_slice());
            for i in 0..d {
                rhs[i] += *w * ac[i];
            }
        }
        Ok(ParamVector::new(lhs.solve(&rhs)?))
    }
}

/// Centralized optimizer selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CentralOptimizer<T> {
    /// Full-batch gradient descent.
    Gd,
    /// `m ← β m + (1−β) g`, `W ← W − η m`.
    Sgdm { beta: T },
    /// Bias-corrected Adam (step exponent starts at 1).
    Adam { beta1: T, beta2: T, epsilon: T },
    /// `V ← V + g²`, `W ← W − η g / (√V + ε)`.
    Adagrad { epsilon: T },
}

/// One optimizer state snapshot.
#[derive(Debug, Clone)]
pub struct CentralState<T> {
    pub params: ParamVector<T>,
    pub momentum: ParamVector<T>,
    pub second_moment: ParamVector<T>,
}

impl<T: Scalar> CentralState<T> {
    pub fn new(params: ParamVector<T>) -> Self {
        let d = params.len();
        CentralState {
            params,
            momentum: ParamVector::zeros(d),
            second_moment: ParamVector::zeros(d),
        }
    }
}

/// Recorded `(W, m, V)` after every step; `states[0]` is the initial
/// state, `states[t]` the state after `t` steps.
pub struct Trajectory<T> {
    pub states: Vec<CentralState<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn final_state(&self) -> &CentralState<T> {
        self.states.last().expect("trajectory includes initial state")
    }
}

/// Apply one optimizer step in place. `step_index` is 0-based.
pub fn central_step<T: Scalar>(
    opt: &CentralOptimizer<T>,
    state: &mut CentralState<T>,
    grad: &ParamVector<T>,
    eta: T,
    step_index: usize,
) {
    match *opt {
        CentralOptimizer::Gd => {
            state.params.axpy(-eta, grad);
        }
        CentralOptimizer::Sgdm { beta } => {
            state.momentum.scale_axpy(beta, T::one() - beta, grad);
            state.params.axpy(-eta, &state.momentum.clone());
        }
        CentralOptimizer::Adam {
            beta1,
            beta2,
            epsilon,
        } => {
            let exponent = step_index as i32 + 1;
            state.momentum.scale_axpy(beta1, T::one() - beta1, grad);
            state
                .second_moment
                .scale_axpy(beta2, T::one() - beta2, &grad.map(|g| g * g));
            let m_hat_scale = T::one() / (T::one() - beta1.powi(exponent));
            let v_hat_scale = T::one() / (T::one() - beta2.powi(exponent));
            let update = state.momentum.zip_map(&state.second_moment, |m, v| {
                eta * m * m_hat_scale / ((v * v_hat_scale).sqrt() + epsilon)
            });
            state.params.axpy(-T::one(), &update);
        }
        CentralOptimizer::Adagrad { epsilon } => {
            state.second_moment.add_assign(&grad.map(|g| g * g));
            let update = grad.zip_map(&state.second_moment, |g, v| eta * g / (v.sqrt() + epsilon));
            state.params.axpy(-T::one(), &update);
        }
    }
}

/// Run `steps` full-batch steps against the pooled objective.
pub fn run_centralized_full_batch<T: Scalar>(
    opt: &CentralOptimizer<T>,
    objective: &GlobalObjective<'_, T>,
    init: CentralState<T>,
    steps: usize,
    eta: T,
) -> Result<Trajectory<T>> {
    run_centralized_with(opt, init, steps, eta, |w| objective.grad(w))
}

/// Run `steps` mini-batch steps against a single model over pooled data
/// (stochastic references; the batch stream comes from `rng`).
#[allow(clippy::too_many_arguments)]
pub fn run_centralized_minibatch<T: Scalar>(
    opt: &CentralOptimizer<T>,
    model: &Model<T>,
    data: &ClientDataset<T>,
    batch_size: usize,
    init: CentralState<T>,
    steps: usize,
    eta: T,
    rng: &mut ChaCha20Rng,
) -> Result<Trajectory<T>> {
    run_centralized_with(opt, init, steps, eta, |w| {
        let batch = data.sample_batch(batch_size, rng)?;
        model.grad(w, &batch)
    })
}

fn run_centralized_with<T: Scalar>(
    opt: &CentralOptimizer<T>,
    init: CentralState<T>,
    steps: usize,
    eta: T,
    mut grad_fn: impl FnMut(&ParamVector<T>) -> Result<ParamVector<T>>,
) -> Result<Trajectory<T>> {
    let mut states = Vec::with_capacity(steps + 1);
    states.push(init);
    for t in 0..steps {
        let mut next = states.last().unwrap().clone();
        let g = grad_fn(&next.params)?;
        central_step(opt, &mut next, &g, eta, t);
        states.push(next);
    }
    Ok(Trajectory { states })
}
