//! Synthetic dataset generation, federated partitioning, CSV ingestion,
//! and seeded mini-batch sampling.
//!
//! Partitions are exact covers: every global sample index lands on
//! exactly one client, and `Σᵢ Nⁱ = N` always. All generation is
//! deterministic per seed.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{orthonormalize_rows, symmetric_from_spectrum, Matrix};
use crate::models::{Batch, Model};
use crate::rng::{stream, StreamDomain};
use crate::scalar::Scalar;
use crate::vector::ParamVector;

/// Unpartitioned dataset: feature rows, targets, and (for
/// classification) the number of classes.
#[derive(Debug, Clone)]
pub struct RawDataset<T> {
    pub features: Matrix<T>,
    pub targets: Vec<T>,
    pub classes: Option<usize>,
}

impl<T: Scalar> RawDataset<T> {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One client's share of the data. `source_indices` records where each
/// row came from in the raw dataset, which is what makes the partition
/// auditable as a bijection.
#[derive(Debug, Clone)]
pub struct ClientDataset<T> {
    pub client_id: usize,
    pub features: Matrix<T>,
    pub targets: Vec<T>,
    pub source_indices: Vec<usize>,
}

impl<T: Scalar> ClientDataset<T> {
    pub fn sample_count(&self) -> usize {
        self.features.rows()
    }

    fn batch_from_rows(&self, rows: &[usize]) -> Batch<T> {
        let features = Matrix::from_rows(
            rows.iter()
                .map(|&r| self.features.row(r).to_vec())
                .collect(),
        )
        .expect("uniform row widths");
        let targets = rows.iter().map(|&r| self.targets[r]).collect();
        let indices = rows.iter().map(|&r| self.source_indices[r]).collect();
        Batch::new(features, targets, indices).expect("non-empty batch")
    }

    /// Every sample exactly once, in stored order. Does not consume rng,
    /// so full-batch phases leave the batch stream untouched.
    pub fn full_batch(&self) -> Batch<T> {
        let rows: Vec<usize> = (0..self.sample_count()).collect();
        self.batch_from_rows(&rows)
    }

    /// Uniform sample without replacement. `batch_size == sample_count`
    /// returns the full batch; rows come back in ascending order so the
    /// in-batch summation order is canonical.
    pub fn sample_batch(&self, batch_size: usize, rng: &mut ChaCha20Rng) -> Result<Batch<T>> {
        let n = self.sample_count();
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if batch_size > n {
            return Err(Error::BatchTooLarge {
                requested: batch_size,
                available: n,
            });
        }
        if batch_size == n {
            return Ok(self.full_batch());
        }
        let mut rows: Vec<usize> = rand::seq::index::sample(rng, n, batch_size).into_vec();
        rows.sort_unstable();
        Ok(self.batch_from_rows(&rows))
    }
}

/// The federation: all clients plus the invariant `N = Σᵢ Nⁱ`.
#[derive(Debug, Clone)]
pub struct Federation<T> {
    pub clients: Vec<ClientDataset<T>>,
}

impl<T: Scalar> Federation<T> {
    pub fn client_count(&self) -> usize {
        self.clients.len()
    }

    pub fn total_samples(&self) -> usize {
        self.clients.iter().map(|c| c.sample_count()).sum()
    }
}

/// How to split a raw dataset across clients.
#[derive(Debug, Clone, PartialEq)]
pub enum PartitionScheme {
    /// Shuffle, then split as evenly as possible.
    Iid,
    /// Per-client label proportions drawn from a symmetric
    /// Dirichlet(alpha); small alpha means severe label skew.
    DirichletLabelSkew { alpha: f64 },
    /// Label-agnostic size skew; every client keeps at least
    /// `min_fraction` of the samples.
    QuantitySkew { min_fraction: f64 },
}

#[derive(Debug, Clone)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub seed: u64,
}

/// Heterogeneous quadratic federation: client `i` owns the loss
/// `½ (W − cᵢ)ᵀ Aᵢ (W − cᵢ)` with `Aᵢ` a random SPD matrix with
/// eigenvalues in `[0.5, 2]` and `cᵢ` placed at distance
/// `heterogeneity` from the origin (`heterogeneity = 0` collapses all
/// minimizers onto the origin).
pub fn generate_quadratic_federation<T: Scalar>(
    clients: usize,
    dim: usize,
    heterogeneity: f64,
    seed: u64,
) -> Result<(Federation<T>, Vec<Model<T>>)> {
    if clients < 1 || dim < 1 {
        return Err(Error::InvalidArgument(
            "need at least one client and one dimension".into(),
        ));
    }
    if heterogeneity < 0.0 {
        return Err(Error::InvalidArgument(
            "heterogeneity must be non-negative".into(),
        ));
    }
    let mut rng = stream(seed, StreamDomain::DataGeneration);
    let mut models = Vec::with_capacity(clients);
    let mut datasets = Vec::with_capacity(clients);
    for id in 0..clients {
        let mut q = Matrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                let g: f64 = StandardNormal.sample(&mut rng);
                q[(i, j)] = T::of(g);
            }
        }
        orthonormalize_rows(&mut q);
        let spectrum: Vec<T> = (0..dim)
            .map(|_| T::of(rng.random_range(0.5..2.0)))
            .collect();
        let curvature = symmetric_from_spectrum(&q, &spectrum);

        let center = if heterogeneity == 0.0 {
            ParamVector::zeros(dim)
        } else {
            let mut dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            for v in dir.iter_mut() {
                *v = *v / norm * heterogeneity;
            }
            ParamVector::new(dir.into_iter().map(T::of).collect())
        };
        models.push(Model::quadratic(curvature, center)?);
        datasets.push(ClientDataset {
            client_id: id,
            features: Matrix::zeros(1, 1),
            targets: vec![T::zero()],
            source_indices: vec![id],
        });
    }
    Ok((Federation { clients: datasets }, models))
}

/// Deterministic two-client instance with identity curvature and
/// minimizers mirrored at `(±heterogeneity, 0)`. This is the pinned
/// setup for the deviation and drift experiments.
pub fn mirrored_pair_quadratic<T: Scalar>(heterogeneity: f64) -> (Federation<T>, Vec<Model<T>>) {
    let make = |sign: f64, id: usize| {
        let center = ParamVector::new(vec![T::of(sign * heterogeneity), T::zero()]);
        let model = Model::quadratic(Matrix::identity(2), center).expect("valid quadratic");
        let data = ClientDataset {
            client_id: id,
            features: Matrix::zeros(1, 1),
            targets: vec![T::zero()],
            source_indices: vec![id],
        };
        (model, data)
    };
    let (m0, d0) = make(1.0, 0);
    let (m1, d1) = make(-1.0, 1);
    (
        Federation {
            clients: vec![d0, d1],
        },
        vec![m0, m1],
    )
}

/// Gaussian class clusters with unit noise. Class means sit on
/// orthonormal directions scaled by 3 (random unit directions when
/// there are more classes than dimensions), giving well-separated but
/// not trivial clusters. A constant-one column is appended so logistic
/// models get a bias term; the emitted feature width is `features + 1`.
pub fn generate_synthetic_classification<T: Scalar>(
    samples: usize,
    features: usize,
    classes: usize,
    seed: u64,
) -> Result<RawDataset<T>> {
    if classes < 2 || samples < classes {
        return Err(Error::InvalidArgument(
            "need samples >= classes >= 2".into(),
        ));
    }
    if features < 1 {
        return Err(Error::InvalidArgument("need features >= 1".into()));
    }
    let mut rng = stream(seed, StreamDomain::DataGeneration);

    let means: Vec<Vec<f64>> = if classes <= features {
        let mut q = Matrix::<f64>::zeros(features, features);
        for i in 0..features {
            for j in 0..features {
                q[(i, j)] = StandardNormal.sample(&mut rng);
            }
        }
        orthonormalize_rows(&mut q);
        (0..classes)
            .map(|k| q.row(k).iter().map(|v| v * 3.0).collect())
            .collect()
    } else {
        (0..classes)
            .map(|_| {
                let dir: Vec<f64> =
                    (0..features).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                dir.into_iter().map(|v| v / norm * 3.0).collect()
            })
            .collect()
    };

    // Class sizes as even as possible.
    let base = samples / classes;
    let extra = samples % classes;
    let mut rows = Vec::with_capacity(samples);
    let mut targets = Vec::with_capacity(samples);
    for (k, mean) in means.iter().enumerate() {
        let count = base + usize::from(k < extra);
        for _ in 0..count {
            let mut row: Vec<T> = mean
                .iter()
                .map(|&m| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    T::of(m + noise)
                })
                .collect();
            row.push(T::one()); // bias column
            rows.push(row);
            targets.push(T::from_usize(k).unwrap());
        }
    }

    // Shuffle so raw order carries no label structure.
    let mut order: Vec<usize> = (0..samples).collect();
    order.shuffle(&mut rng);
    let features_matrix = Matrix::from_rows(order.iter().map(|&i| rows[i].clone()).collect())?;
    let targets = order.iter().map(|&i| targets[i]).collect();
    Ok(RawDataset {
        features: features_matrix,
        targets,
        classes: Some(classes),
    })
}

/// Split a raw dataset across `clients` per the partition spec. The
/// result is always an exact cover with no empty client.
pub fn partition<T: Scalar>(
    raw: &RawDataset<T>,
    clients: usize,
    spec: &PartitionSpec,
) -> Result<Federation<T>> {
    let n = raw.len();
    if clients == 0 {
        return Err(Error::InvalidArgument("need at least one client".into()));
    }
    if clients > n {
        return Err(Error::TooManyClients {
            clients,
            samples: n,
        });
    }
    let mut rng = stream(spec.seed, StreamDomain::Partition);
    let mut assignment: Vec<Vec<usize>> = match &spec.scheme {
        PartitionScheme::Iid => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            split_even(&order, clients)
        }
        PartitionScheme::DirichletLabelSkew { alpha } => {
            if *alpha <= 0.0 {
                return Err(Error::InvalidArgument(
                    "dirichlet alpha must be positive".into(),
                ));
            }
            dirichlet_label_assignment(raw, clients, *alpha, &mut rng)?
        }
        PartitionScheme::QuantitySkew { min_fraction } => {
            if !(*min_fraction > 0.0 && *min_fraction <= 1.0 / clients as f64) {
                return Err(Error::InvalidArgument(
                    "min_fraction must lie in (0, 1/clients]".into(),
                ));
            }
            quantity_skew_assignment(n, clients, *min_fraction, &mut rng)
        }
    };
    repair_empty_clients(&mut assignment);

    let federation = Federation {
        clients: assignment
            .into_iter()
            .enumerate()
            .map(|(id, mut idx)| {
                idx.sort_unstable();
                let features = Matrix::from_rows(
                    idx.iter().map(|&i| raw.features.row(i).to_vec()).collect(),
                )
                .expect("uniform row widths");
                let targets = idx.iter().map(|&i| raw.targets[i]).collect();
                ClientDataset {
                    client_id: id,
                    features,
                    targets,
                    source_indices: idx,
                }
            })
            .collect(),
    };
    debug_assert_eq!(federation.total_samples(), n);
    Ok(federation)
}

fn split_even(order: &[usize], clients: usize) -> Vec<Vec<usize>> {
    let n = order.len();
    let base = n / clients;
    let extra = n % clients;
    let mut out = Vec::with_capacity(clients);
    let mut cursor = 0;
    for c in 0..clients {
        let take = base + usize::from(c < extra);
        out.push(order[cursor..cursor + take].to_vec());
        cursor += take;
    }
    out
}

/// Draw per-client label proportions from Dirichlet(alpha·1) and turn
/// them into per-class quotas (largest-remainder rounding), popping
/// samples from shuffled per-label pools. Quotas a drained pool cannot
/// meet are refilled from the largest remaining pools.
fn dirichlet_label_assignment<T: Scalar>(
    raw: &RawDataset<T>,
    clients: usize,
    alpha: f64,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<Vec<usize>>> {
    let labels: Vec<usize> = raw
        .targets
        .iter()
        .map(|t| t.as_f64().round() as usize)
        .collect();
    let n_classes = raw
        .classes
        .unwrap_or_else(|| labels.iter().copied().max().unwrap_or(0) + 1);

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &label) in labels.iter().enumerate() {
        if label >= n_classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} outside {n_classes} classes"
            )));
        }
        pools[label].push(i);
    }
    for pool in pools.iter_mut() {
        pool.shuffle(rng);
    }

    let order: Vec<usize> = (0..raw.len()).collect();
    let sizes: Vec<usize> = split_even(&order, clients).iter().map(|c| c.len()).collect();

    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("invalid dirichlet alpha: {e}")))?;
    let mut assignment = vec![Vec::new(); clients];
    for (client, &size) in sizes.iter().enumerate() {
        let mut props: Vec<f64> = (0..n_classes).map(|_| gamma.sample(rng)).collect();
        let total: f64 = props.iter().sum();
        if total <= 0.0 {
            props = vec![1.0; n_classes];
        }
        let total: f64 = props.iter().sum();

        // Largest-remainder rounding of size * q_k into integer quotas.
        let mut quotas = vec![0usize; n_classes];
        let mut fractional: Vec<(usize, f64)> = Vec::with_capacity(n_classes);
        let mut assigned = 0;
        for k in 0..n_classes {
            let share = props[k] / total * size as f64;
            quotas[k] = share.floor() as usize;
            assigned += quotas[k];
            fractional.push((k, share - quotas[k] as f64));
        }
        fractional.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for (k, _) in fractional.into_iter().take(size - assigned) {
            quotas[k] += 1;
        }

        let mut shortfall = 0;
        for (k, quota) in quotas.iter().enumerate() {
            let take = (*quota).min(pools[k].len());
            shortfall += quota - take;
            for _ in 0..take {
                assignment[client].push(pools[k].pop().expect("checked non-empty"));
            }
        }
        for _ in 0..shortfall {
            let largest = (0..n_classes)
                .max_by_key(|&k| pools[k].len())
                .expect("classes exist");
            assignment[client].push(pools[largest].pop().expect("sizes sum to n"));
        }
    }
    Ok(assignment)
}

fn quantity_skew_assignment(
    n: usize,
    clients: usize,
    min_fraction: f64,
    rng: &mut ChaCha20Rng,
) -> Vec<Vec<usize>> {
    let min_count = ((min_fraction * n as f64).floor() as usize).max(1);
    let mut sizes = vec![min_count; clients];
    let mut remaining = n - min_count * clients;

    if remaining > 0 {
        let weights: Vec<f64> = (0..clients)
            .map(|_| -> f64 { rng.random_range(0.0_f64..1.0).max(1e-12).ln().abs() })
            .collect();
        let total: f64 = weights.iter().sum();
        let mut fractional: Vec<(usize, f64)> = Vec::with_capacity(clients);
        let mut assigned = 0;
        for (c, w) in weights.iter().enumerate() {
            let share = w / total * remaining as f64;
            let whole = share.floor() as usize;
            sizes[c] += whole;
            assigned += whole;
            fractional.push((c, share - whole as f64));
        }
        remaining -= assigned;
        // Hand leftovers to the largest fractional parts (index breaks ties).
        fractional.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for (c, _) in fractional.into_iter().take(remaining) {
            sizes[c] += 1;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out = Vec::with_capacity(clients);
    let mut cursor = 0;
    for size in sizes {
        out.push(order[cursor..cursor + size].to_vec());
        cursor += size;
    }
    out
}

/// Every client must own at least one sample (the aggregation weights
/// are `Nⁱ/N`); steal from the largest client when a scheme leaves one
/// empty.
fn repair_empty_clients(assignment: &mut [Vec<usize>]) {
    loop {
        let Some(empty) = assignment.iter().position(|c| c.is_empty()) else {
            return;
        };
        let largest = assignment
            .iter()
            .enumerate()
            .max_by_key(|(_, c)| c.len())
            .map(|(i, _)| i)
            .expect("non-empty assignment list");
        if assignment[largest].len() <= 1 {
            return; // nothing left to steal
        }
        let moved = assignment[largest].pop().expect("largest non-empty");
        assignment[empty].push(moved);
    }
}

/// Which column holds the target in a CSV file.
#[derive(Debug, Clone)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub has_header: bool,
    pub target: ColumnRef,
    /// Number of classes when the file holds classification data.
    pub classes: Option<usize>,
}

/// Load a comma-separated numeric file. Row order is preserved; errors
/// carry 1-based line and column positions.
pub fn load_csv<T: Scalar>(path: &std::path::Path, schema: &CsvSchema) -> Result<RawDataset<T>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();
    if lines.peek().is_none() {
        return Err(Error::EmptyInput(path.display().to_string()));
    }

    let mut header: Option<Vec<String>> = None;
    if schema.has_header {
        let (_, line) = lines.next().expect("peeked non-empty");
        header = Some(line.split(',').map(|s| s.trim().to_string()).collect());
    }

    let target_col = |width: usize, line_no: usize| -> Result<usize> {
        match &schema.target {
            ColumnRef::Index(i) => {
                if *i >= width {
                    Err(Error::Parse {
                        line: line_no,
                        column: i + 1,
                        message: format!("target column {i} out of range (width {width})"),
                    })
                } else {
                    Ok(*i)
                }
            }
            ColumnRef::Name(name) => header
                .as_ref()
                .and_then(|h| h.iter().position(|c| c == name))
                .ok_or_else(|| Error::Parse {
                    line: 1,
                    column: 1,
                    message: format!("target column '{name}' not found in header"),
                }),
        }
    };

    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut width: Option<usize> = None;
    for (line_idx, line) in lines {
        let line_no = line_idx + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if let Some(w) = width {
            if cells.len() != w {
                return Err(Error::Parse {
                    line: line_no,
                    column: cells.len(),
                    message: format!("expected {w} columns, got {}", cells.len()),
                });
            }
        } else {
            width = Some(cells.len());
        }
        let t_col = target_col(cells.len(), line_no)?;
        let mut row = Vec::with_capacity(cells.len() - 1);
        let mut target = None;
        for (col_idx, cell) in cells.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                column: col_idx + 1,
                message: format!("'{}' is not a number", cell.trim()),
            })?;
            if col_idx == t_col {
                target = Some(T::of(value));
            } else {
                row.push(T::of(value));
            }
        }
        features.push(row);
        targets.push(target.expect("target column checked in range"));
    }
    if features.is_empty() {
        return Err(Error::EmptyInput(path.display().to_string()));
    }
    Ok(RawDataset {
        features: Matrix::from_rows(features)?,
        targets,
        classes: schema.classes,
    })
}
