//! Brute-force verification of the closed-form machinery.
//!
//! Everything here deliberately avoids the shortcuts the production code
//! relies on: the expected augmented loss is estimated by actually sampling
//! noisy features, the Gaussian moment identity behind the surrogate is
//! checked against raw draws, and every analytic gradient is audited with
//! central finite differences. None of it runs during training.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::loss;
use crate::network::{self, Gradients, ModelParams};
use crate::stats::{ClassEntry, ClassStats};

/// A Monte-Carlo mean with its own uncertainty.
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub value: f64,
    /// Standard error of `value`: sample std of per-draw batch means / sqrt(draws).
    pub std_error: f64,
    pub draws: usize,
}

fn head_only(head_w: &Matrix, head_b: &Vector) -> ModelParams {
    ModelParams { extractor: vec![], head_w: head_w.clone(), head_b: head_b.clone() }
}

/// Estimate the expected cross-entropy over explicitly augmented features:
/// each sample is redrawn `draws` times from N(f + lambda delta_mu^y,
/// lambda sigma_t^y) and scored by the linear head. Classes whose scaled
/// covariance is exactly zero (and everything at lambda = 0) skip sampling,
/// so the degenerate estimate is deterministic with zero standard error.
pub fn monte_carlo_loss(
    features: &Matrix,
    labels: &[usize],
    head_w: &Matrix,
    head_b: &Vector,
    stats: &ClassStats,
    lambda: f64,
    draws: usize,
    rng: &mut impl Rng,
) -> Result<McEstimate> {
    let n = features.rows();
    let k = head_w.cols();
    let classes = head_w.rows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if labels.len() != n || features.cols() != k || stats.feature_dim != k {
        return Err(Error::Dimension(format!(
            "{} rows of width {} vs {} labels, head width {}, stats width {}",
            n,
            features.cols(),
            labels.len(),
            k,
            stats.feature_dim
        )));
    }
    debug_assert!(draws >= 1 && lambda >= 0.0);

    // Per-class deterministic shift and, where needed, a Cholesky factor of
    // the scaled covariance.
    let mut shifts = Vec::with_capacity(classes);
    let mut factors: Vec<Option<Matrix>> = Vec::with_capacity(classes);
    for entry in &stats.classes {
        if !entry.enabled || lambda == 0.0 {
            shifts.push(Vector::zeros(k));
            factors.push(None);
            continue;
        }
        shifts.push(entry.delta_mu.scale(lambda));
        let scaled = entry.sigma_target.scale(lambda);
        factors.push(if scaled.is_zero() {
            None
        } else {
            Some(linalg::cholesky(&scaled, 1e-6)?)
        });
    }

    let mut shifted_rows = Vec::with_capacity(n);
    for i in 0..n {
        let y = labels[i];
        if y >= classes {
            return Err(Error::Index { index: y, len: classes });
        }
        let mut row = Vector::new(features.row(i).to_vec());
        row.scaled_add_assign(&shifts[y], 1.0);
        shifted_rows.push(row);
    }

    if labels.iter().all(|&y| factors[y].is_none()) {
        let mut shifted = Matrix::zeros(n, k);
        for (i, row) in shifted_rows.iter().enumerate() {
            shifted.set_row(i, row.as_slice());
        }
        let record = network::forward(&head_only(head_w, head_b), &shifted)?;
        let (value, _) = loss::cross_entropy(&record.logits, labels)?;
        return Ok(McEstimate { value, std_error: 0.0, draws });
    }

    let inv_n = 1.0 / n as f64;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut logit_row = vec![0.0; classes];
    for m in 1..=draws {
        let mut batch_sum = 0.0;
        for i in 0..n {
            let y = labels[i];
            let augmented = match &factors[y] {
                Some(chol) => linalg::sample_mvn(&shifted_rows[i], chol, rng)?,
                None => shifted_rows[i].clone(),
            };
            for c in 0..classes {
                let mut acc = 0.0;
                for d in 0..k {
                    acc += head_w[(c, d)] * augmented[d];
                }
                logit_row[c] = acc + head_b[c];
            }
            batch_sum += linalg::logsumexp(&logit_row) - logit_row[y];
        }
        let x = batch_sum * inv_n;
        let delta = x - mean;
        mean += delta / m as f64;
        m2 += delta * (x - mean);
    }
    let std_error = if draws > 1 {
        (m2 / (draws - 1) as f64).sqrt() / (draws as f64).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate { value: mean, std_error, draws })
}

/// One self-contained bound-check problem: a linear head over fixed
/// features, class statistics, and an augmentation strength.
#[derive(Debug, Clone)]
pub struct BoundInstance {
    pub id: usize,
    pub lambda: f64,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub head_w: Matrix,
    pub head_b: Vector,
    pub stats: ClassStats,
}

impl BoundInstance {
    pub fn logits(&self) -> Result<Matrix> {
        let record = network::forward(&head_only(&self.head_w, &self.head_b), &self.features)?;
        Ok(record.logits)
    }

    /// The closed-form surrogate value for this instance.
    pub fn surrogate_value(&self) -> Result<f64> {
        let logits = self.logits()?;
        Ok(loss::surrogate_loss(&logits, &self.labels, &self.head_w, &self.stats, self.lambda)?
            .value)
    }

    /// Same instance with every class covariance multiplied by `factor`.
    pub fn with_sigma_scaled(&self, factor: f64) -> BoundInstance {
        let mut out = self.clone();
        for entry in &mut out.stats.classes {
            entry.sigma_target = entry.sigma_target.scale(factor);
        }
        out
    }
}

/// Draw a fully-enabled random instance: up to `max_classes` classes, up to
/// `max_dim` feature dimensions, a handful of samples, standard-normal head
/// and features, random shifts, and random positive-semidefinite
/// covariances.
pub fn random_instance(
    id: usize,
    max_classes: usize,
    max_dim: usize,
    lambda: f64,
    rng: &mut impl Rng,
) -> BoundInstance {
    debug_assert!(max_classes >= 2);
    let classes = rng.gen_range(2..=max_classes);
    let k = rng.gen_range(1..=max_dim);
    let n = rng.gen_range(1..=4);
    fn normal_rows(rows: usize, cols: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..rows)
            .map(|_| (0..cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect()
    }
    let features = Matrix::from_rows(&normal_rows(n, k, rng)).expect("nonempty by construction");
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    let head_w =
        Matrix::from_rows(&normal_rows(classes, k, rng)).expect("nonempty by construction");
    let head_b = Vector::new(normal_rows(1, classes, rng).remove(0));
    let entries = (0..classes)
        .map(|_| {
            let delta_mu = Vector::new(normal_rows(1, k, rng).remove(0));
            let a = Matrix::from_rows(&normal_rows(k, k, rng)).expect("nonempty by construction");
            // A^T A is positive semidefinite; 1/k keeps its scale O(1).
            let sigma_target = a.transpose_matmul(&a).expect("square").scale(1.0 / k as f64);
            ClassEntry {
                mu_source: Vector::zeros(k),
                mu_target: delta_mu.clone(),
                delta_mu,
                sigma_target,
                count_source: 1,
                count_target: 1,
                enabled: true,
            }
        })
        .collect();
    BoundInstance {
        id,
        lambda,
        features,
        labels,
        head_w,
        head_b,
        stats: ClassStats { feature_dim: k, classes: entries },
    }
}

/// Outcome of checking the closed-form value against the sampled one.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub instance_id: usize,
    pub lambda: f64,
    pub l_inf: f64,
    pub mc: McEstimate,
    /// l_inf - mc.value; nonnegative in expectation.
    pub margin: f64,
    /// mc.value <= l_inf + 3 standard errors.
    pub holds: bool,
}

/// The closed-form value must sit above the sampled estimate of the quantity
/// it upper-bounds, up to three standard errors of sampling noise.
pub fn verify_bound(
    instance: &BoundInstance,
    draws: usize,
    rng: &mut impl Rng,
) -> Result<BoundReport> {
    let l_inf = instance.surrogate_value()?;
    let mc = monte_carlo_loss(
        &instance.features,
        &instance.labels,
        &instance.head_w,
        &instance.head_b,
        &instance.stats,
        instance.lambda,
        draws,
        rng,
    )?;
    let margin = l_inf - mc.value;
    let holds = mc.value <= l_inf + 3.0 * mc.std_error;
    Ok(BoundReport { instance_id: instance.id, lambda: instance.lambda, l_inf, mc, margin, holds })
}

/// Relative error of the empirical mean of e^{aX}, X ~ N(mu, sigma), against
/// the closed form e^{a mu + a^2 sigma / 2}. `sigma` is the variance. The
/// running mean keeps degenerate cases (a = 0 or sigma = 0) exact.
pub fn mgf_check(a: f64, mu: f64, sigma: f64, draws: usize, rng: &mut impl Rng) -> f64 {
    debug_assert!(draws >= 1 && sigma >= 0.0);
    let exact = (a * mu + 0.5 * a * a * sigma).exp();
    let sd = sigma.sqrt();
    let mut mean = 0.0;
    for m in 1..=draws {
        let z: f64 = rng.sample(StandardNormal);
        let x = mu + sd * z;
        mean += ((a * x).exp() - mean) / m as f64;
    }
    (mean - exact).abs() / exact
}

/// What a finite-difference sweep found.
#[derive(Debug, Clone)]
pub struct AuditReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub excluded: usize,
    /// (flat index, analytic, numeric) of the worst-agreeing coordinate.
    pub worst: Option<(usize, f64, f64)>,
}

/// Compare an analytic gradient against central differences parameter by
/// parameter. `exclude` marks coordinates to skip (rectifier kinks, where
/// the two-sided difference straddles a nondifferentiable point); relative
/// error uses max(|analytic|, |numeric|, 1e-4) as the denominator. The 1e-4
/// floor sits three decades above the cancellation noise of a central
/// difference (|f| eps_mach / 2 epsilon, about 1e-11 here), so coordinates
/// whose true gradient is near zero are judged by an absolute tolerance of
/// tol * 1e-4 instead of amplifying that noise into a spurious failure.
pub fn finite_diff_audit<F>(
    value_fn: F,
    params: &ModelParams,
    analytic_flat: &[f64],
    epsilon: f64,
    exclude: &[bool],
) -> Result<AuditReport>
where
    F: Fn(&ModelParams) -> Result<f64>,
{
    debug_assert!(epsilon > 0.0);
    let base = params.to_flat();
    if analytic_flat.len() != base.len() || exclude.len() != base.len() {
        return Err(Error::Dimension(format!(
            "{} parameters vs {} analytic entries and {} exclusion flags",
            base.len(),
            analytic_flat.len(),
            exclude.len()
        )));
    }
    let mut max_rel_error = 0.0;
    let mut checked = 0;
    let mut excluded = 0;
    let mut worst = None;
    for idx in 0..base.len() {
        if exclude[idx] {
            excluded += 1;
            continue;
        }
        let mut bumped = base.clone();
        bumped[idx] = base[idx] + epsilon;
        let up = value_fn(&params.from_flat(&bumped))?;
        bumped[idx] = base[idx] - epsilon;
        let down = value_fn(&params.from_flat(&bumped))?;
        let numeric = (up - down) / (2.0 * epsilon);
        let analytic = analytic_flat[idx];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst = Some((idx, analytic, numeric));
        }
        checked += 1;
    }
    Ok(AuditReport { max_rel_error, checked, excluded, worst })
}

/// Full-model surrogate objective: forward, augmented cross-entropy, and the
/// complete analytic gradient (logits route through the network plus the
/// shift-term route into the head weights).
pub fn surrogate_objective(
    params: &ModelParams,
    inputs: &Matrix,
    labels: &[usize],
    stats: &ClassStats,
    lambda: f64,
) -> Result<(f64, Gradients)> {
    let record = network::forward(params, inputs)?;
    let surrogate =
        loss::surrogate_loss(&record.logits, labels, &params.head_w, stats, lambda)?;
    let zero_features = Matrix::zeros(inputs.rows(), params.feature_dim());
    let mut grads = network::backward(params, &record, &surrogate.grad_logits, &zero_features)?;
    grads.head_w.scaled_add_assign(&surrogate.grad_head_w, 1.0);
    Ok((surrogate.value, grads))
}

/// Full-model mutual-information objective on a batch of unlabeled rows.
pub fn mi_objective(params: &ModelParams, inputs: &Matrix) -> Result<(f64, Gradients)> {
    let record = network::forward(params, inputs)?;
    let mi = loss::mi_loss(&network::softmax(&record.logits))?;
    let zero_features = Matrix::zeros(inputs.rows(), params.feature_dim());
    let grads = network::backward(params, &record, &mi.grad_logits, &zero_features)?;
    Ok((mi.value, grads))
}
