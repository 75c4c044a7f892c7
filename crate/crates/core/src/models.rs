//! Differentiable loss oracles with analytic gradients.
//!
//! Three model families cover the lab's benchmarks:
//!
//! * `Quadratic` — `½ (W − c)ᵀ A (W − c)` with a symmetric PSD curvature
//!   matrix. Its gradient is exact (no batch noise), which makes it the
//!   workhorse for trajectory-equivalence and deviation experiments.
//! * `Logistic` — multinomial softmax cross-entropy. The bias term is
//!   folded into the feature vector (datasets append a constant-one
//!   column), so the parameter vector stays flat.
//! * `Mlp` — small feedforward net with `tanh` hidden layers, a single
//!   linear output, and squared-error loss. Smooth everywhere, so the
//!   gradient-Lipschitz assumptions behind the deviation theory hold on
//!   bounded domains.
//!
//! All operations are pure: same inputs, same bits.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::vector::ParamVector;

/// Mini-batch of training rows: features, targets, and the source
/// sample ids the rows came from.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub(crate) features: Matrix<T>,
    pub(crate) targets: Vec<T>,
    pub(crate) indices: Vec<usize>,
}

impl<T: Scalar> Batch<T> {
    /// Build a batch, enforcing at least one row, matching lengths, and
    /// unique source indices.
    pub fn new(features: Matrix<T>, targets: Vec<T>, indices: Vec<usize>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::BatchEmpty);
        }
        if targets.len() != features.rows() {
            return Err(Error::DimensionMismatch {
                expected: features.rows(),
                got: targets.len(),
            });
        }
        if indices.len() != features.rows() {
            return Err(Error::DimensionMismatch {
                expected: features.rows(),
                got: indices.len(),
            });
        }
        let mut seen = indices.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != indices.len() {
            return Err(Error::InvalidArgument(
                "duplicate sample indices in batch".into(),
            ));
        }
        Ok(Batch {
            features,
            targets,
            indices,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn targets(&self) -> &[T] {
        &self.targets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

/// Loss oracle over a dataset slice.
#[derive(Debug, Clone)]
pub enum Model<T> {
    /// `½ (W − center)ᵀ curvature (W − center)`; ignores batch contents
    /// (the "data" of a quadratic client is its own loss landscape).
    Quadratic {
        curvature: Matrix<T>,
        center: ParamVector<T>,
    },
    /// Softmax cross-entropy; parameters laid out class-major:
    /// `W[k * features + j]` is the weight of feature `j` for class `k`.
    Logistic { features: usize, classes: usize },
    /// Feedforward `tanh` net, single linear output, squared-error loss.
    /// `layers` lists widths from input to output; parameters are laid
    /// out layer by layer, weights (row-major) before biases.
    Mlp { layers: Vec<usize> },
}

impl<T: Scalar> Model<T> {
    pub fn quadratic(curvature: Matrix<T>, center: ParamVector<T>) -> Result<Self> {
        if curvature.rows() != curvature.cols() {
            return Err(Error::DimensionMismatch {
                expected: curvature.rows(),
                got: curvature.cols(),
            });
        }
        if curvature.rows() != center.len() {
            return Err(Error::DimensionMismatch {
                expected: curvature.rows(),
                got: center.len(),
            });
        }
        for i in 0..curvature.rows() {
            for j in (i + 1)..curvature.cols() {
                if curvature[(i, j)] != curvature[(j, i)] {
                    return Err(Error::InvalidArgument(
                        "curvature matrix must be symmetric".into(),
                    ));
                }
            }
        }
        Ok(Model::Quadratic { curvature, center })
    }

    pub fn logistic(features: usize, classes: usize) -> Result<Self> {
        if features < 1 || classes < 2 {
            return Err(Error::InvalidArgument(
                "logistic model needs features >= 1 and classes >= 2".into(),
            ));
        }
        Ok(Model::Logistic { features, classes })
    }

    pub fn mlp(layers: Vec<usize>) -> Result<Self> {
        if layers.len() < 2 || layers.contains(&0) {
            return Err(Error::InvalidArgument(
                "mlp needs at least input and output layers of width >= 1".into(),
            ));
        }
        if *layers.last().unwrap() != 1 {
            return Err(Error::InvalidArgument(
                "mlp output layer must have width 1".into(),
            ));
        }
        Ok(Model::Mlp { layers })
    }

    /// Flat parameter dimension `d`.
    pub fn dim(&self) -> usize {
        match self {
            Model::Quadratic { center, .. } => center.len(),
            Model::Logistic { features, classes } => features * classes,
            Model::Mlp { layers } => layers
                .windows(2)
                .map(|w| w[1] * (w[0] + 1))
                .sum(),
        }
    }

    fn check_inputs(&self, params: &ParamVector<T>, batch: &Batch<T>) -> Result<()> {
        if params.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: params.len(),
            });
        }
        if batch.is_empty() {
            return Err(Error::BatchEmpty);
        }
        let expected_cols = match self {
            Model::Quadratic { .. } => None,
            Model::Logistic { features, .. } => Some(*features),
            Model::Mlp { layers } => Some(layers[0]),
        };
        if let Some(cols) = expected_cols {
            if batch.features.cols() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: batch.features.cols(),
                });
            }
        }
        Ok(())
    }

    /// Mean loss over the batch.
    pub fn loss(&self, params: &ParamVector<T>, batch: &Batch<T>) -> Result<T> {
        self.check_inputs(params, batch)?;
        let value = match self {
            Model::Quadratic { curvature, center } => {
                let r = params.sub(center);
                let ar = ParamVector::new(curvature.matvec(r.as_slice()));
                T::of(0.5) * r.dot(&ar)
            }
            Model::Logistic { features, classes } => {
                let mut total = T::zero();
                for row in 0..batch.len() {
                    let (lse, z_true) =
                        logistic_forward(params, batch, row, *features, *classes)?;
                    total += lse - z_true;
                }
                total / T::from_usize(batch.len()).unwrap()
            }
            Model::Mlp { layers } => {
                let mut total = T::zero();
                for row in 0..batch.len() {
                    let (activations, _) = mlp_forward(params, layers, batch.features.row(row));
                    let out = activations.last().unwrap()[0];
                    let err = out - batch.targets[row];
                    total += T::of(0.5) * err * err;
                }
                total / T::from_usize(batch.len()).unwrap()
            }
        };
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: "loss".into(),
            });
        }
        Ok(value)
    }

    /// Analytic gradient of the mean batch loss.
    pub fn grad(&self, params: &ParamVector<T>, batch: &Batch<T>) -> Result<ParamVector<T>> {
        self.check_inputs(params, batch)?;
        let g = match self {
            Model::Quadratic { curvature, center } => {
                let r = params.sub(center);
                ParamVector::new(curvature.matvec(r.as_slice()))
            }
            Model::Logistic { features, classes } => {
                let mut grad = ParamVector::zeros(self.dim());
                for row in 0..batch.len() {
                    logistic_grad_accumulate(params, batch, row, *features, *classes, &mut grad)?;
                }
                grad.scaled(T::one() / T::from_usize(batch.len()).unwrap())
            }
            Model::Mlp { layers } => {
                let mut grad = ParamVector::zeros(self.dim());
                for row in 0..batch.len() {
                    mlp_grad_accumulate(
                        params,
                        layers,
                        batch.features.row(row),
                        batch.targets[row],
                        &mut grad,
                    );
                }
                grad.scaled(T::one() / T::from_usize(batch.len()).unwrap())
            }
        };
        g.ensure_finite("grad")?;
        Ok(g)
    }

    /// Max over coordinates of the relative disagreement between the
    /// analytic gradient and a central finite difference of the loss.
    pub fn finite_diff_check(
        &self,
        params: &ParamVector<T>,
        batch: &Batch<T>,
        step: T,
    ) -> Result<T> {
        if step <= T::zero() {
            return Err(Error::InvalidArgument(
                "finite-difference step must be positive".into(),
            ));
        }
        let analytic = self.grad(params, batch)?;
        let mut probe = params.clone();
        let mut worst = T::zero();
        for j in 0..params.len() {
            let original = probe[j];
            probe[j] = original + step;
            let plus = self.loss(&probe, batch)?;
            probe[j] = original - step;
            let minus = self.loss(&probe, batch)?;
            probe[j] = original;
            let fd = (plus - minus) / (T::of(2.0) * step);
            let rel = (analytic[j] - fd).abs() / (fd.abs() + T::of(1e-12));
            worst = worst.max(rel);
        }
        Ok(worst)
    }

    /// Argmax-class prediction for a single feature row (logistic only).
    pub fn predict_class(&self, params: &ParamVector<T>, row: &[T]) -> Option<usize> {
        match self {
            Model::Logistic { features, classes } => {
                if row.len() != *features {
                    return None;
                }
                let mut best = 0;
                let mut best_z = T::neg_infinity();
                for k in 0..*classes {
                    let mut z = T::zero();
                    for j in 0..*features {
                        z += params[k * features + j] * row[j];
                    }
                    if z > best_z {
                        best_z = z;
                        best = k;
                    }
                }
                Some(best)
            }
            _ => None,
        }
    }
}

/// Log-sum-exp of the logits plus the true-class logit, shifted by the
/// max logit for stability.
fn logistic_forward<T: Scalar>(
    params: &ParamVector<T>,
    batch: &Batch<T>,
    row: usize,
    features: usize,
    classes: usize,
) -> Result<(T, T)> {
    let x = batch.features.row(row);
    let label = target_class(batch.targets[row], classes)?;
    let mut logits = vec![T::zero(); classes];
    for (k, logit) in logits.iter_mut().enumerate() {
        let mut z = T::zero();
        for j in 0..features {
            z += params[k * features + j] * x[j];
        }
        *logit = z;
    }
    let max = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let sum: T = logits.iter().map(|&z| (z - max).exp()).sum();
    Ok((sum.ln() + max, logits[label]))
}

fn logistic_grad_accumulate<T: Scalar>(
    params: &ParamVector<T>,
    batch: &Batch<T>,
    row: usize,
    features: usize,
    classes: usize,
    grad: &mut ParamVector<T>,
) -> Result<()> {
    let x = batch.features.row(row);
    let label = target_class(batch.targets[row], classes)?;
    let mut logits = vec![T::zero(); classes];
    for (k, logit) in logits.iter_mut().enumerate() {
        let mut z = T::zero();
        for j in 0..features {
            z += params[k * features + j] * x[j];
        }
        *logit = z;
    }
    let max = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let denom: T = logits.iter().map(|&z| (z - max).exp()).sum();
    for k in 0..classes {
        let mut p = (logits[k] - max).exp() / denom;
        if k == label {
            p -= T::one();
        }
        for j in 0..features {
            grad[k * features + j] += p * x[j];
        }
    }
    Ok(())
}

fn target_class<T: Scalar>(target: T, classes: usize) -> Result<usize> {
    let as_f64 = target.as_f64();
    let label = as_f64.round() as isize;
    if (as_f64 - label as f64).abs() > 1e-9 || label < 0 || label as usize >= classes {
        return Err(Error::InvalidArgument(format!(
            "target {as_f64} is not a class index below {classes}"
        )));
    }
    Ok(label as usize)
}

/// Forward pass; returns per-layer activations (including the input) and
/// pre-activations for the hidden layers.
fn mlp_forward<T: Scalar>(
    params: &ParamVector<T>,
    layers: &[usize],
    input: &[T],
) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
    let mut activations = vec![input.to_vec()];
    let mut pre = Vec::new();
    let mut offset = 0;
    for (l, pair) in layers.windows(2).enumerate() {
        let (n_in, n_out) = (pair[0], pair[1]);
        let prev = activations.last().unwrap().clone();
        let mut z = vec![T::zero(); n_out];
        for (o, zo) in z.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (i, &p) in prev.iter().enumerate() {
                acc += params[offset + o * n_in + i] * p;
            }
            *zo = acc + params[offset + n_out * n_in + o];
        }
        offset += n_out * (n_in + 1);
        let last_layer = l + 2 == layers.len();
        let a = if last_layer {
            z.clone()
        } else {
            z.iter().map(|&v| v.tanh()).collect()
        };
        pre.push(z);
        activations.push(a);
    }
    (activations, pre)
}

fn mlp_grad_accumulate<T: Scalar>(
    params: &ParamVector<T>,
    layers: &[usize],
    input: &[T],
    target: T,
    grad: &mut ParamVector<T>,
) {
    let (activations, pre) = mlp_forward(params, layers, input);
    let n_layers = layers.len() - 1;
    // Squared-error output delta.
    let mut delta = vec![activations.last().unwrap()[0] - target];
    let mut offsets = Vec::with_capacity(n_layers);
    let mut offset = 0;
    for pair in layers.windows(2) {
        offsets.push(offset);
        offset += pair[1] * (pair[0] + 1);
    }
    for l in (0..n_layers).rev() {
        let (n_in, n_out) = (layers[l], layers[l + 1]);
        let base = offsets[l];
        let a_prev = &activations[l];
        for o in 0..n_out {
            for i in 0..n_in {
                grad[base + o * n_in + i] += delta[o] * a_prev[i];
            }
            grad[base + n_out * n_in + o] += delta[o];
        }
        if l > 0 {
            let mut next = vec![T::zero(); n_in];
            for (i, slot) in next.iter_mut().enumerate() {
                let mut acc = T::zero();
                for o in 0..n_out {
                    acc += params[base + o * n_in + i] * delta[o];
                }
                // tanh'(z) = 1 - tanh(z)^2, evaluated via the cached pre-activation.
                let t = pre[l - 1][i].tanh();
                *slot = acc * (T::one() - t * t);
            }
            delta = next;
        }
    }
}
