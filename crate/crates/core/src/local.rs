//! Client-side update rules, run for `T` iterations per round.
//!
//! The decoupled rule is the heart of the method: parameters move by
//! raw gradients only, while the momentum recursion runs alongside and
//! its per-step values are summed into `momentum_sum`. Because the
//! parameter path never reads the momentum, the aggregated momentum of
//! the decoupled system equals the momentum the centralized recursion
//! would produce from the aggregated per-step gradients — exactly, not
//! approximately.
//!
//! `NaiveSgdm` is the coupled baseline (momentum drives the local
//! parameter update); `ProxDecoupled` adds a proximal pull toward the
//! round-start anchor to both the parameter and momentum updates.

use rand_chacha::ChaCha20Rng;

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::scalar::Scalar;
use crate::vector::ParamVector;

/// Per-round local optimizer state.
#[derive(Debug, Clone)]
pub struct LocalState<T> {
    /// Local parameters `Wⁱ`.
    pub params: ParamVector<T>,
    /// Local copy of the global momentum `mⁱ`.
    pub momentum: ParamVector<T>,
    /// Running sum of the per-step momentum values `Pⁱ`.
    pub momentum_sum: ParamVector<T>,
    /// Steps taken this round.
    pub step: usize,
}

impl<T: Scalar> LocalState<T> {
    /// Round-start initialization: `Pⁱ = 0`, `Wⁱ = W(E)`, `mⁱ = m(E)`.
    pub fn at_round_start(params: &ParamVector<T>, momentum: &ParamVector<T>) -> Result<Self> {
        params.check_same_len(momentum)?;
        Ok(LocalState {
            params: params.clone(),
            momentum: momentum.clone(),
            momentum_sum: ParamVector::zeros(params.len()),
            step: 0,
        })
    }
}

/// Which local update rule to run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocalUpdate<T> {
    /// Parameters move by raw gradients; momentum is bookkeeping only.
    SgdDecoupled { beta: T },
    /// Plain local SGDM: momentum drives the parameter update.
    NaiveSgdm { beta: T },
    /// Decoupled rule with `g + mu (Wⁱ − W(E))` replacing the gradient
    /// in both updates.
    ProxDecoupled { beta: T, mu: T },
}

/// Local rule plus its learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalRule<T> {
    pub update: LocalUpdate<T>,
    pub eta: T,
}

impl<T: Scalar> LocalRule<T> {
    pub fn validate(&self) -> Result<()> {
        if self.eta <= T::zero() {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        let beta = match self.update {
            LocalUpdate::SgdDecoupled { beta } | LocalUpdate::NaiveSgdm { beta } => beta,
            LocalUpdate::ProxDecoupled { beta, mu } => {
                if mu < T::zero() {
                    return Err(Error::InvalidArgument(
                        "proximal coefficient must be non-negative".into(),
                    ));
                }
                beta
            }
        };
        if beta < T::zero() || beta >= T::one() {
            return Err(Error::InvalidArgument(
                "momentum coefficient must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

fn fresh_gradient<T: Scalar>(
    state: &LocalState<T>,
    model: &Model<T>,
    data: &ClientDataset<T>,
    batch_size: usize,
    rng: &mut ChaCha20Rng,
) -> Result<ParamVector<T>> {
    let batch = data.sample_batch(batch_size, rng)?;
    model.grad(&state.params, &batch)
}

/// One decoupled step: `Wⁱ ← Wⁱ − η g`, `mⁱ ← β mⁱ + (1−β) g`,
/// `Pⁱ ← Pⁱ + mⁱ`. The parameter update uses `g` only, never `mⁱ`.
pub fn step_decoupled<T: Scalar>(
    state: &mut LocalState<T>,
    model: &Model<T>,
    data: &ClientDataset<T>,
    batch_size: usize,
    beta: T,
    eta: T,
    rng: &mut ChaCha20Rng,
) -> Result<()> {
    let g = fresh_gradient(state, model, data, batch_size, rng)?;
    apply_decoupled(state, &g, beta, eta);
    Ok(())
}

fn apply_decoupled<T: Scalar>(state: &mut LocalState<T>, g: &ParamVector<T>, beta: T, eta: T) {
    state.params.axpy(-eta, g);
    state.momentum.scale_axpy(beta, T::one() - beta, g);
    state.momentum_sum.add_assign(&state.momentum);
    state.step += 1;
}

/// One coupled step: `mⁱ ← β mⁱ + (1−β) g`, `Wⁱ ← Wⁱ − η mⁱ`.
pub fn step_naive_sgdm<T: Scalar>(
    state: &mut LocalState<T>,
    model: &Model<T>,
    data: &ClientDataset<T>,
    batch_size: usize,
    beta: T,
    eta: T,
    rng: &mut ChaCha20Rng,
) -> Result<()> {
    let g = fresh_gradient(state, model, data, batch_size, rng)?;
    state.momentum.scale_axpy(beta, T::one() - beta, &g);
    state.params.axpy(-eta, &state.momentum.clone());
    state.momentum_sum.add_assign(&state.momentum);
    state.step += 1;
    Ok(())
}

/// Decoupled step with the proximal gradient `g + mu (Wⁱ − anchor)`
/// substituted in both the parameter and momentum updates.
#[allow(clippy::too_many_arguments)]
pub fn step_prox<T: Scalar>(
    state: &mut LocalState<T>,
    model: &Model<T>,
    data: &ClientDataset<T>,
    batch_size: usize,
    beta: T,
    mu: T,
    anchor: &ParamVector<T>,
    eta: T,
    rng: &mut ChaCha20Rng,
) -> Result<()> {
    let mut g = fresh_gradient(state, model, data, batch_size, rng)?;
    let pull = state.params.sub(anchor);
    g.axpy(mu, &pull);
    apply_decoupled(state, &g, beta, eta);
    Ok(())
}

/// Per-client upload at the end of a round.
#[derive(Debug, Clone)]
pub struct ClientReport<T> {
    pub client_id: usize,
    /// `Pⁱ`: sum of the momentum values over the round's steps.
    pub momentum_sum: ParamVector<T>,
    /// `mⁱ(T)`: final local momentum.
    pub momentum_final: ParamVector<T>,
    /// `Wⁱ(T)`: final local parameters (used by averaging baselines).
    pub params_final: ParamVector<T>,
    pub sample_count: usize,
}

/// Run `iters` steps of the selected rule from the round-start state and
/// package the upload. A `ProxDecoupled` rule with `mu == 0` is dispatched
/// through the plain decoupled path — the two are the same update, and
/// sharing the code path keeps the reduction exact.
#[allow(clippy::too_many_arguments)]
pub fn run_local_round<T: Scalar>(
    round_start_params: &ParamVector<T>,
    round_start_momentum: &ParamVector<T>,
    model: &Model<T>,
    data: &ClientDataset<T>,
    iters: usize,
    rule: &LocalRule<T>,
    batch_size: usize,
    rng: &mut ChaCha20Rng,
) -> Result<ClientReport<T>> {
    if iters == 0 {
        return Err(Error::InvalidIterationCount);
    }
    rule.validate()?;
    let mut state = LocalState::at_round_start(round_start_params, round_start_momentum)?;
    let update = match rule.update {
        LocalUpdate::ProxDecoupled { beta, mu } if mu == T::zero() => {
            LocalUpdate::SgdDecoupled { beta }
        }
        u => u,
    };
    match update {
        LocalUpdate::SgdDecoupled { beta } => {
            for _ in 0..iters {
                step_decoupled(&mut state, model, data, batch_size, beta, rule.eta, rng)?;
            }
        }
        LocalUpdate::NaiveSgdm { beta } => {
            for _ in 0..iters {
                step_naive_sgdm(&mut state, model, data, batch_size, beta, rule.eta, rng)?;
            }
        }
        LocalUpdate::ProxDecoupled { beta, mu } => {
            let anchor = round_start_params.clone();
            for _ in 0..iters {
                step_prox(
                    &mut state, model, data, batch_size, beta, mu, &anchor, rule.eta, rng,
                )?;
            }
        }
    }
    Ok(ClientReport {
        client_id: data.client_id,
        momentum_sum: state.momentum_sum,
        momentum_final: state.momentum,
        params_final: state.params,
        sample_count: data.sample_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::mirrored_pair_quadratic;
    use crate::linalg::Matrix;
    use crate::rng::{stream, StreamDomain};

    fn quadratic_client(center: Vec<f64>) -> (Model<f64>, ClientDataset<f64>) {
        let dim = center.len();
        let model =
            Model::quadratic(Matrix::identity(dim), ParamVector::new(center)).unwrap();
        let data = ClientDataset {
            client_id: 0,
            features: Matrix::zeros(1, 1),
            targets: vec![0.0],
            source_indices: vec![0],
        };
        (model, data)
    }

    fn rng() -> ChaCha20Rng {
        stream(1, StreamDomain::LocalBatches { round: 0, client_id: 0 })
    }

    #[test]
    fn decoupled_one_step_arithmetic() {
        // g = (1, 0) at W = (0, 0) for center (-1, 0); beta 0.9, eta 0.1.
        let (model, data) = quadratic_client(vec![-1.0, 0.0]);
        let mut state =
            LocalState::at_round_start(&ParamVector::zeros(2), &ParamVector::zeros(2)).unwrap();
        step_decoupled(&mut state, &model, &data, 1, 0.9, 0.1, &mut rng()).unwrap();
        assert_eq!(state.params.as_slice(), &[-0.1, 0.0]);
        assert!((state.momentum[0] - 0.1).abs() < 1e-15);
        assert!((state.momentum_sum[0] - 0.1).abs() < 1e-15);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn beta_zero_momentum_sum_is_gradient_sum() {
        // With beta = 0 the momentum equals the step gradient, so P is the
        // gradient sum along the path and W(T) = W(0) - eta * P. Check
        // against an independently unrolled plain-SGD loop.
        let (model, data) = quadratic_client(vec![0.7, -0.3]);
        let w0 = ParamVector::new(vec![2.0, 1.0]);
        let mut state = LocalState::at_round_start(&w0, &ParamVector::zeros(2)).unwrap();
        let eta = 0.1;
        for _ in 0..5 {
            step_decoupled(&mut state, &model, &data, 1, 0.0, eta, &mut rng()).unwrap();
        }

        let mut w = w0.clone();
        let mut grad_sum = ParamVector::zeros(2);
        for _ in 0..5 {
            let g = model.grad(&w, &data.full_batch()).unwrap();
            grad_sum.add_assign(&g);
            w.axpy(-eta, &g);
        }
        assert!(state.momentum_sum.max_abs_diff(&grad_sum) < 1e-12);
        let mut expected = w0.clone();
        expected.axpy(-eta, &grad_sum);
        assert!(state.params.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn zero_gradient_freezes_params_and_decays_momentum() {
        // W at the client minimum: params frozen, momentum decays
        // geometrically, P accumulates m0 * sum of beta^s.
        let (model, data) = quadratic_client(vec![1.5, 0.0]);
        let w0 = ParamVector::new(vec![1.5, 0.0]);
        let m0 = ParamVector::new(vec![1.0, -2.0]);
        let mut state = LocalState::at_round_start(&w0, &m0).unwrap();
        let beta = 0.8;
        for _ in 0..4 {
            step_decoupled(&mut state, &model, &data, 1, beta, 0.1, &mut rng()).unwrap();
        }
        assert_eq!(state.params.as_slice(), &[1.5, 0.0]);
        let geom: f64 = (1..=4).map(|s| beta.powi(s)).sum();
        assert!((state.momentum[0] - beta.powi(4)).abs() < 1e-12);
        assert!((state.momentum_sum[0] - geom).abs() < 1e-12);
        assert!((state.momentum_sum[1] + 2.0 * geom).abs() < 1e-12);
    }

    #[test]
    fn naive_beta_zero_matches_decoupled_params() {
        let (model, data) = quadratic_client(vec![0.4, 0.9]);
        let w0 = ParamVector::new(vec![-1.0, 2.0]);
        let mut a = LocalState::at_round_start(&w0, &ParamVector::zeros(2)).unwrap();
        let mut b = LocalState::at_round_start(&w0, &ParamVector::zeros(2)).unwrap();
        for _ in 0..6 {
            step_decoupled(&mut a, &model, &data, 1, 0.0, 0.05, &mut rng()).unwrap();
            step_naive_sgdm(&mut b, &model, &data, 1, 0.0, 0.05, &mut rng()).unwrap();
        }
        assert_eq!(a.params.as_slice(), b.params.as_slice());
    }

    #[test]
    fn naive_constant_gradient_approaches_fixed_point() {
        // Constant g = (1, 0): m converges to (1, 0) geometrically.
        let (model, data) = quadratic_client(vec![-1.0, 0.0]);
        let mut state =
            LocalState::at_round_start(&ParamVector::zeros(2), &ParamVector::zeros(2)).unwrap();
        // Hold W fixed by resetting params each step so g stays constant.
        let mut m_expected = 0.0;
        for _ in 0..50 {
            state.params = ParamVector::zeros(2);
            step_naive_sgdm(&mut state, &model, &data, 1, 0.9, 0.1, &mut rng()).unwrap();
            m_expected = 0.9 * m_expected + 0.1;
        }
        assert!((state.momentum[0] - m_expected).abs() < 1e-12);
        assert!((state.momentum[0] - 1.0).abs() < 0.01);
    }

    #[test]
    fn naive_first_step_scales_by_one_minus_beta() {
        let (model, data) = quadratic_client(vec![-1.0, 0.0]);
        let beta = 0.9;
        let eta = 0.1;
        let mut naive =
            LocalState::at_round_start(&ParamVector::zeros(2), &ParamVector::zeros(2)).unwrap();
        step_naive_sgdm(&mut naive, &model, &data, 1, beta, eta, &mut rng()).unwrap();
        assert!((naive.params[0] + eta * (1.0 - beta)).abs() < 1e-15);

        let mut dec =
            LocalState::at_round_start(&ParamVector::zeros(2), &ParamVector::zeros(2)).unwrap();
        step_decoupled(&mut dec, &model, &data, 1, beta, eta, &mut rng()).unwrap();
        assert!((dec.params[0] + eta).abs() < 1e-15);
    }

    #[test]
    fn prox_zero_gradient_pulls_toward_anchor() {
        let (model, data) = quadratic_client(vec![1.0, 0.0]);
        let w0 = ParamVector::new(vec![1.0, 0.0]); // g = 0 here
        let anchor = ParamVector::new(vec![0.0, 0.0]); // W - anchor = (1, 0)
        let mut state = LocalState::at_round_start(&w0, &ParamVector::zeros(2)).unwrap();
        step_prox(&mut state, &model, &data, 1, 0.0, 1.0, &anchor, 0.1, &mut rng()).unwrap();
        assert!((state.params[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn prox_mu_zero_is_bitwise_decoupled() {
        let (fed, models) = mirrored_pair_quadratic::<f64>(1.0);
        let w0 = ParamVector::new(vec![0.3, -0.2]);
        let m0 = ParamVector::new(vec![0.05, 0.0]);
        let prox = run_local_round(
            &w0,
            &m0,
            &models[0],
            &fed.clients[0],
            7,
            &LocalRule {
                update: LocalUpdate::ProxDecoupled { beta: 0.9, mu: 0.0 },
                eta: 0.1,
            },
            1,
            &mut rng(),
        )
        .unwrap();
        let plain = run_local_round(
            &w0,
            &m0,
            &models[0],
            &fed.clients[0],
            7,
            &LocalRule {
                update: LocalUpdate::SgdDecoupled { beta: 0.9 },
                eta: 0.1,
            },
            1,
            &mut rng(),
        )
        .unwrap();
        assert_eq!(prox.params_final, plain.params_final);
        assert_eq!(prox.momentum_sum, plain.momentum_sum);
        assert_eq!(prox.momentum_final, plain.momentum_final);
    }

    #[test]
    fn large_mu_keeps_params_near_anchor() {
        let (fed, models) = mirrored_pair_quadratic::<f64>(1.0);
        let w0 = ParamVector::new(vec![0.0, 0.0]);
        let m0 = ParamVector::zeros(2);
        let run = |mu: f64| {
            run_local_round(
                &w0,
                &m0,
                &models[0],
                &fed.clients[0],
                20,
                &LocalRule {
                    update: LocalUpdate::ProxDecoupled { beta: 0.9, mu },
                    eta: 0.1,
                },
                1,
                &mut rng(),
            )
            .unwrap()
        };
        let free = run(0.0).params_final.sub(&w0).norm();
        let tight = run(5.0).params_final.sub(&w0).norm();
        assert!(tight < free, "mu = 5 run stayed closer: {tight} vs {free}");
    }

    #[test]
    fn single_step_round_report() {
        // T = 1, full batch: P = m(1) = beta m(E) + (1 - beta) G(W(E)).
        let (model, data) = quadratic_client(vec![-1.0, 0.5]);
        let w0 = ParamVector::new(vec![1.0, 1.0]);
        let m0 = ParamVector::new(vec![0.2, -0.4]);
        let beta = 0.9;
        let report = run_local_round(
            &w0,
            &m0,
            &model,
            &data,
            1,
            &LocalRule {
                update: LocalUpdate::SgdDecoupled { beta },
                eta: 0.1,
            },
            data.sample_count(),
            &mut rng(),
        )
        .unwrap();
        let g = model.grad(&w0, &data.full_batch()).unwrap();
        let mut expected = m0.scaled(beta);
        expected.axpy(1.0 - beta, &g);
        assert!(report.momentum_sum.max_abs_diff(&expected) < 1e-15);
        assert!(report.momentum_final.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn zero_iterations_is_an_error() {
        let (model, data) = quadratic_client(vec![0.0, 0.0]);
        let w0 = ParamVector::zeros(2);
        let result = run_local_round(
            &w0,
            &w0,
            &model,
            &data,
            0,
            &LocalRule {
                update: LocalUpdate::SgdDecoupled { beta: 0.9 },
                eta: 0.1,
            },
            1,
            &mut rng(),
        );
        assert!(matches!(result, Err(Error::InvalidIterationCount)));
    }

    #[test]
    fn decoupled_params_independent_of_initial_momentum() {
        let (fed, models) = mirrored_pair_quadratic::<f64>(1.0);
        let w0 = ParamVector::new(vec![0.4, 0.4]);
        let rule = LocalRule {
            update: LocalUpdate::SgdDecoupled { beta: 0.9 },
            eta: 0.05,
        };
        let a = run_local_round(
            &w0,
            &ParamVector::zeros(2),
            &models[0],
            &fed.clients[0],
            9,
            &rule,
            1,
            &mut rng(),
        )
        .unwrap();
        let b = run_local_round(
            &w0,
            &ParamVector::new(vec![3.0, -7.0]),
            &models[0],
            &fed.clients[0],
            9,
            &rule,
            1,
            &mut rng(),
        )
        .unwrap();
        assert_eq!(a.params_final, b.params_final, "W path never reads momentum");
        assert_ne!(a.momentum_final, b.momentum_final);
    }

    #[test]
    fn momentum_recursion_closed_form() {
        // m(t) = beta^t m(0) + (1 - beta) sum_{s<t} beta^{t-1-s} g_s,
        // recomputed directly from the recorded gradient sequence.
        let (model, data) = quadratic_client(vec![0.6, -0.1]);
        let w0 = ParamVector::new(vec![1.0, 2.0]);
        let m0 = ParamVector::new(vec![-0.3, 0.8]);
        let beta = 0.85;
        let eta = 0.07;
        let mut state = LocalState::at_round_start(&w0, &m0).unwrap();
        let mut grads = Vec::new();
        let steps = 12;
        for _ in 0..steps {
            let g = model.grad(&state.params, &data.full_batch()).unwrap();
            grads.push(g.clone());
            apply_decoupled(&mut state, &g, beta, eta);
        }
        let mut closed = m0.scaled(beta.powi(steps));
        for (s, g) in grads.iter().enumerate() {
            closed.axpy((1.0 - beta) * beta.powi(steps - 1 - s as i32), g);
        }
        assert!(state.momentum.max_abs_diff(&closed) < 1e-10);

        // P equals the sum of the momentum sequence.
        let mut m = m0.clone();
        let mut p = ParamVector::zeros(2);
        for g in &grads {
            m.scale_axpy(beta, 1.0 - beta, g);
            p.add_assign(&m);
        }
        assert!(state.momentum_sum.max_abs_diff(&p) < 1e-12);
    }
}
