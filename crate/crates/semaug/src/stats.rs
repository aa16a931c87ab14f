//! Per-class cross-domain feature statistics and their estimators.
//!
//! Three estimators produce the same `ClassStats` shape: the feature memory
//! (a fixed slot table caching the latest feature and label seen for every
//! sample in either domain), the iterative moment estimator (running mean
//! and covariance updated batch by batch), and the ideal estimator (a fresh
//! full-dataset forward pass). The ideal one is the reference the bias
//! experiment measures the practical two against.
//!
//! Statistics are detached values: the losses treat them as constants of the
//! current backward pass, never as trainable tensors.

use crate::dataset::{Domain, DomainDataset};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::network::{self, ModelParams};

/// Fixed-size cache of the latest feature row and label per sample; source
/// slots first, target slots after them.
#[derive(Debug, Clone)]
pub struct MemoryModule {
    features: Matrix,
    labels: Vec<usize>,
    domains: Vec<Domain>,
    initialized: Vec<bool>,
    n_source: usize,
}

impl MemoryModule {
    /// Fill every slot from one full forward pass: source slots carry ground
    /// truth labels, target slots carry argmax pseudo-labels.
    pub fn init(
        source: &DomainDataset,
        target: &DomainDataset,
        params: &ModelParams,
    ) -> Result<MemoryModule> {
        if !source.fully_labeled() {
            return Err(Error::Config("source dataset must be fully labeled".to_string()));
        }
        let n_source = source.len();
        let n = n_source + target.len();
        let k = params.feature_dim();
        let mut features = Matrix::zeros(n, k);
        let mut labels = vec![0usize; n];
        let mut domains = vec![Domain::Source; n];

        let src_rec = network::forward(params, &source.inputs)?;
        for i in 0..n_source {
            features.set_row(i, src_rec.features().row(i));
            labels[i] = source.labels[i].expect("checked fully labeled");
        }
        let tgt_rec = network::forward(params, &target.inputs)?;
        let tgt_probs = network::softmax(&tgt_rec.logits);
        for j in 0..target.len() {
            let slot = n_source + j;
            features.set_row(slot, tgt_rec.features().row(j));
            labels[slot] = linalg::argmax(tgt_probs.row(j));
            domains[slot] = Domain::Target;
        }
        Ok(MemoryModule { features, labels, domains, initialized: vec![true; n], n_source })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_source(&self) -> usize {
        self.n_source
    }

    pub fn n_target(&self) -> usize {
        self.len() - self.n_source
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Global slot index of target sample `j`.
    pub fn target_slot(&self, j: usize) -> usize {
        self.n_source + j
    }

    pub fn feature(&self, slot: usize) -> &[f64] {
        self.features.row(slot)
    }

    pub fn label(&self, slot: usize) -> usize {
        self.labels[slot]
    }

    pub fn domain(&self, slot: usize) -> Domain {
        self.domains[slot]
    }

    pub fn all_initialized(&self) -> bool {
        self.initialized.iter().all(|f| *f)
    }

    /// Replace exactly the addressed slots; everything else stays untouched.
    /// Indices are validated up front so a failed call writes nothing.
    pub fn update(&mut self, slots: &[usize], features: &Matrix, labels: &[usize]) -> Result<()> {
        if features.rows() != slots.len() || labels.len() != slots.len() {
            return Err(Error::Dimension(format!(
                "{} slots vs {} feature rows and {} labels",
                slots.len(),
                features.rows(),
                labels.len()
            )));
        }
        if features.cols() != self.feature_dim() {
            return Err(Error::Dimension(format!(
                "feature width {} vs memory width {}",
                features.cols(),
                self.feature_dim()
            )));
        }
        for &slot in slots {
            if slot >= self.len() {
                return Err(Error::Index { index: slot, len: self.len() });
            }
        }
        for (row, &slot) in slots.iter().enumerate() {
            self.features.set_row(slot, features.row(row));
            self.labels[slot] = labels[row];
            self.initialized[slot] = true;
        }
        Ok(())
    }
}

/// Per-class statistics consumed by the surrogate loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEntry {
    pub mu_source: Vector,
    pub mu_target: Vector,
    /// mu_target - mu_source; the mean semantic shift from source to target.
    pub delta_mu: Vector,
    /// Population covariance of target features belonging to this class.
    pub sigma_target: Matrix,
    pub count_source: usize,
    pub count_target: usize,
    /// False when either domain has no samples of the class; stats are zero.
    pub enabled: bool,
}

impl ClassEntry {
    fn disabled(k: usize) -> Self {
        Self {
            mu_source: Vector::zeros(k),
            mu_target: Vector::zeros(k),
            delta_mu: Vector::zeros(k),
            sigma_target: Matrix::zeros(k, k),
            count_source: 0,
            count_target: 0,
            enabled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub feature_dim: usize,
    pub classes: Vec<ClassEntry>,
}

impl ClassStats {
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn any_enabled(&self) -> bool {
        self.classes.iter().any(|c| c.enabled)
    }
}

/// Per-class means from memory slots, target covariance centered on the
/// target mean; classes empty in either domain come back disabled.
pub fn estimate_class_stats(mem: &MemoryModule, class_count: usize) -> Result<ClassStats> {
    debug_assert!(mem.all_initialized(), "memory must be initialized before estimation");
    let k = mem.feature_dim();
    let mut classes = Vec::with_capacity(class_count);
    for c in 0..class_count {
        let mut source_rows = Vec::new();
        let mut target_rows = Vec::new();
        for slot in 0..mem.len() {
            if mem.label(slot) != c {
                continue;
            }
            let row = Vector::new(mem.feature(slot).to_vec());
            match mem.domain(slot) {
                Domain::Source => source_rows.push(row),
                Domain::Target => target_rows.push(row),
            }
        }
        if source_rows.is_empty() || target_rows.is_empty() {
            classes.push(ClassEntry::disabled(k));
            continue;
        }
        let mu_source = linalg::mean(&source_rows)?;
        let mu_target = linalg::mean(&target_rows)?;
        let delta_mu = mu_target.sub(&mu_source);
        let sigma_target = linalg::covariance(&target_rows, &mu_target)?;
        classes.push(ClassEntry {
            mu_source,
            mu_target,
            delta_mu,
            sigma_target,
            count_source: source_rows.len(),
            count_target: target_rows.len(),
            enabled: true,
        });
    }
    Ok(ClassStats { feature_dim: k, classes })
}

/// Fresh statistics from a full forward pass of both datasets through the
/// current model; the reference the practical estimators are biased against.
pub fn ideal_class_stats(
    source: &DomainDataset,
    target: &DomainDataset,
    params: &ModelParams,
) -> Result<ClassStats> {
    let mem = MemoryModule::init(source, target, params)?;
    estimate_class_stats(&mem, params.class_count())
}

#[derive(Debug, Clone)]
struct IterClass {
    mean: Vector,
    cov: Matrix,
    count: usize,
}

/// Running per-class moments blended batch by batch: with a class batch of
/// size B against a running count N, eta = B/(N+B) and
///
/// mean <- (1-eta) mean + eta mean'
/// cov  <- (1-eta) cov + eta cov' + eta(1-eta)(mean - mean')(mean - mean')^T
#[derive(Debug, Clone)]
pub struct IterativeState {
    feature_dim: usize,
    track_covariance: bool,
    classes: Vec<IterClass>,
}

impl IterativeState {
    pub fn new(class_count: usize, feature_dim: usize) -> Self {
        Self::build(class_count, feature_dim, true)
    }

    /// Mean-only variant for the source stream, whose covariance no loss
    /// term consumes.
    pub fn means_only(class_count: usize, feature_dim: usize) -> Self {
        Self::build(class_count, feature_dim, false)
    }

    fn build(class_count: usize, feature_dim: usize, track_covariance: bool) -> Self {
        let classes = (0..class_count)
            .map(|_| IterClass {
                mean: Vector::zeros(feature_dim),
                cov: Matrix::zeros(feature_dim, feature_dim),
                count: 0,
            })
            .collect();
        Self { feature_dim, track_covariance, classes }
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn count(&self, class: usize) -> usize {
        self.classes[class].count
    }

    pub fn mean(&self, class: usize) -> &Vector {
        &self.classes[class].mean
    }

    pub fn covariance(&self, class: usize) -> &Matrix {
        &self.classes[class].cov
    }

    pub fn update(&mut self, features: &Matrix, labels: &[usize]) -> Result<()> {
        if features.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows vs {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if features.cols() != self.feature_dim {
            return Err(Error::Dimension(format!(
                "feature width {} vs state width {}",
                features.cols(),
                self.feature_dim
            )));
        }
        for c in 0..self.classes.len() {
            let rows: Vec<Vector> = (0..features.rows())
                .filter(|&i| labels[i] == c)
                .map(|i| features.row_vector(i))
                .collect();
            if rows.is_empty() {
                continue;
            }
            let batch_mean = linalg::mean(&rows)?;
            let entry = &mut self.classes[c];
            let b = rows.len() as f64;
            let eta = b / (entry.count as f64 + b);
            if self.track_covariance {
                let batch_cov = linalg::covariance(&rows, &batch_mean)?;
                let diff = entry.mean.sub(&batch_mean);
                let mut cov = entry.cov.scale(1.0 - eta);
                cov.scaled_add_assign(&batch_cov, eta);
                cov.add_outer_scaled(diff.as_slice(), diff.as_slice(), eta * (1.0 - eta));
                entry.cov = cov;
            }
            let mut mean = entry.mean.scale(1.0 - eta);
            mean.scaled_add_assign(&batch_mean, eta);
            entry.mean = mean;
            entry.count += rows.len();
        }
        Ok(())
    }
}

/// Combine a source and a target iterative state into the loss-facing shape.
pub fn iterative_class_stats(
    source: &IterativeState,
    target: &IterativeState,
) -> Result<ClassStats> {
    if source.class_count() != target.class_count() || source.feature_dim() != target.feature_dim()
    {
        return Err(Error::Dimension(
            "source and target iterative states must share class count and width".to_string(),
        ));
    }
    let k = source.feature_dim();
    let classes = (0..source.class_count())
        .map(|c| {
            if source.count(c) == 0 || target.count(c) == 0 {
                return ClassEntry::disabled(k);
            }
            let mu_source = source.mean(c).clone();
            let mu_target = target.mean(c).clone();
            ClassEntry {
                delta_mu: mu_target.sub(&mu_source),
                sigma_target: target.covariance(c).clone(),
                count_source: source.count(c),
                count_target: target.count(c),
                enabled: true,
                mu_source,
                mu_target,
            }
        })
        .collect();
    Ok(ClassStats { feature_dim: k, classes })
}

/// Mean distance of a practical estimate from the ideal one: Euclidean on
/// the mean shifts, Frobenius on the covariances, averaged over classes
/// enabled in both estimates.
pub fn estimation_bias(practical: &ClassStats, ideal: &ClassStats) -> Result<(f64, f64)> {
    if practical.class_count() != ideal.class_count()
        || practical.feature_dim != ideal.feature_dim
    {
        return Err(Error::Dimension(
            "bias requires estimates with matching class count and width".to_string(),
        ));
    }
    let mut bias_mu = 0.0;
    let mut bias_sigma = 0.0;
    let mut counted = 0usize;
    for (p, i) in practical.classes.iter().zip(&ideal.classes) {
        if !(p.enabled && i.enabled) {
            continue;
        }
        bias_mu += p.delta_mu.sub(&i.delta_mu).norm();
        bias_sigma += p.sigma_target.sub(&i.sigma_target).frobenius_norm();
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::UndefinedBias);
    }
    Ok((bias_mu / counted as f64, bias_sigma / counted as f64))
}
