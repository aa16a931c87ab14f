//! The augmented surrogate objective and its analytic gradients.
//!
//! Instead of materializing noisy feature copies, the surrogate shifts each
//! wrong-class logit by what an infinite population of augmented features
//! would contribute in expectation:
//!
//! Z_i,c = logit_i,c + lambda (w_c - w_y)^T delta_mu^y
//!       + (lambda/2) (w_c - w_y)^T sigma_t^y (w_c - w_y)
//!
//! and takes plain cross-entropy over Z. A mutual-information term on target
//! predictions sharpens per-sample decisions while keeping the batch
//! marginal spread out. Class statistics are constants of the backward pass;
//! gradients flow to logits and, through the shift terms, to the classifier
//! weights.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::stats::ClassStats;

/// Augmentation strength ramp: lambda grows linearly from 0 to lambda0 over
/// the course of training.
pub fn lambda_schedule(t: usize, total: usize, lambda0: f64) -> f64 {
    debug_assert!(total >= 1, "schedule needs at least one iteration");
    debug_assert!(t <= total, "iteration {t} past the end {total}");
    (t as f64 / total as f64) * lambda0
}

/// Shift every wrong-class logit by the expected augmentation contribution.
/// Rows whose class is disabled in `stats` come through untouched, as does
/// everything at lambda = 0; the true-class entry is always the raw logit.
pub fn augmented_logits(
    logits: &Matrix,
    labels: &[usize],
    head_w: &Matrix,
    stats: &ClassStats,
    lambda: f64,
) -> Result<Matrix> {
    let classes = logits.cols();
    if labels.len() != logits.rows() {
        return Err(Error::Dimension(format!(
            "{} label entries vs {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    if head_w.rows() != classes || stats.class_count() != classes {
        return Err(Error::Dimension(format!(
            "head has {} classes, stats {}, logits {}",
            head_w.rows(),
            stats.class_count(),
            classes
        )));
    }
    if head_w.cols() != stats.feature_dim {
        return Err(Error::Dimension(format!(
            "head width {} vs stats width {}",
            head_w.cols(),
            stats.feature_dim
        )));
    }
    let mut z = logits.clone();
    if lambda == 0.0 {
        return Ok(z);
    }
    for i in 0..logits.rows() {
        let y = labels[i];
        if y >= classes {
            return Err(Error::Index { index: y, len: classes });
        }
        let entry = &stats.classes[y];
        if !entry.enabled {
            continue;
        }
        for c in 0..classes {
            if c == y {
                continue;
            }
            let diff: Vec<f64> = (0..head_w.cols())
                .map(|k| head_w[(c, k)] - head_w[(y, k)])
                .collect();
            let linear: f64 = diff.iter().zip(entry.delta_mu.as_slice()).map(|(d, m)| d * m).sum();
            let sigma_diff = entry.sigma_target.mul_vector(&Vector::new(diff.clone()))?;
            let quad: f64 = diff.iter().zip(sigma_diff.as_slice()).map(|(d, s)| d * s).sum();
            z[(i, c)] += lambda * linear + 0.5 * lambda * quad;
        }
    }
    Ok(z)
}

/// Mean cross-entropy of rows `z` against `labels` plus its gradient,
/// computed with per-row max subtraction.
pub fn cross_entropy(z: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let n = z.rows();
    let classes = z.cols();
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels vs {} rows", labels.len(), n)));
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    let mut grad = Matrix::zeros(n, classes);
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let y = labels[i];
        if y >= classes {
            return Err(Error::Index { index: y, len: classes });
        }
        let row = z.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - max).exp();
        }
        total += max + sum.ln() - row[y];
        for c in 0..classes {
            let p = (row[c] - max).exp() / sum;
            grad[(i, c)] = (p - if c == y { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

/// Surrogate loss value with every analytic gradient route it owns.
#[derive(Debug, Clone)]
pub struct SurrogateLoss {
    pub value: f64,
    /// d value / d logits; the augmentation shift has unit slope in the raw
    /// logit, so the cross-entropy gradient on Z passes straight through.
    pub grad_logits: Matrix,
    /// Classifier-weight gradient from the shift terms only. The route
    /// through logits = W f + b is not included here; it belongs to whoever
    /// backpropagates `grad_logits`.
    pub grad_head_w: Matrix,
    /// Bias gradient from the shift terms: identically zero, kept for shape.
    pub grad_head_b: Vector,
}

/// Cross-entropy over augmented logits, differentiated with the class
/// statistics held constant.
pub fn surrogate_loss(
    logits: &Matrix,
    labels: &[usize],
    head_w: &Matrix,
    stats: &ClassStats,
    lambda: f64,
) -> Result<SurrogateLoss> {
    let z = augmented_logits(logits, labels, head_w, stats, lambda)?;
    let (value, grad_logits) = cross_entropy(&z, labels)?;
    let classes = head_w.rows();
    let width = head_w.cols();
    let mut grad_head_w = Matrix::zeros(classes, width);
    if lambda != 0.0 {
        for i in 0..logits.rows() {
            let y = labels[i];
            let entry = &stats.classes[y];
            if !entry.enabled {
                continue;
            }
            for c in 0..classes {
                if c == y {
                    continue;
                }
                // Z_i,c depends on w_c and w_y through
                //   lambda (w_c - w_y)^T delta_mu + (lambda/2) (w_c - w_y)^T sigma (w_c - w_y)
                // whose gradient w.r.t. w_c is v below; w.r.t. w_y it is -v.
                let diff: Vec<f64> =
                    (0..width).map(|k| head_w[(c, k)] - head_w[(y, k)]).collect();
                let sigma_diff = entry.sigma_target.mul_vector(&Vector::new(diff))?;
                let g = grad_logits[(i, c)];
                for k in 0..width {
                    let v = lambda * (entry.delta_mu[k] + sigma_diff[k]);
                    grad_head_w[(c, k)] += g * v;
                    grad_head_w[(y, k)] -= g * v;
                }
            }
        }
    }
    Ok(SurrogateLoss { value, grad_logits, grad_head_w, grad_head_b: Vector::zeros(classes) })
}

#[derive(Debug, Clone)]
pub struct MiLoss {
    pub value: f64,
    /// d value / d logits of the rows that produced `probs`.
    pub grad_logits: Matrix,
}

/// Mutual-information objective on a batch of target predictions: marginal
/// entropy is rewarded, per-row entropy punished,
///
/// value = sum_c phat_c ln phat_c - (1/n) sum_j sum_c p_jc ln p_jc
///
/// with phat the batch mean row and 0 ln 0 = 0. The gradient is taken with
/// respect to the logits behind `probs` and flows through phat's dependence
/// on every row.
pub fn mi_loss(probs: &Matrix) -> Result<MiLoss> {
    let n = probs.rows();
    let classes = probs.cols();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let inv_n = 1.0 / n as f64;
    let mut mean = vec![0.0; classes];
    for j in 0..n {
        debug_assert!(
            (probs.row(j).iter().sum::<f64>() - 1.0).abs() <= 1e-6,
            "row {j} is not a probability vector"
        );
        for c in 0..classes {
            mean[c] += probs[(j, c)] * inv_n;
        }
    }
    let xlogx = |p: f64| if p > 0.0 { p * p.ln() } else { 0.0 };
    let marginal: f64 = mean.iter().map(|&p| xlogx(p)).sum();
    let mut conditional = 0.0;
    for j in 0..n {
        for c in 0..classes {
            conditional += xlogx(probs[(j, c)]);
        }
    }
    let value = marginal - conditional * inv_n;

    // d value / d p_jc = (1/n)(ln phat_c - ln p_jc); chain through softmax:
    // d value / d z_jk = p_jk (g_jk - sum_c g_jc p_jc).
    let mut grad = Matrix::zeros(n, classes);
    for j in 0..n {
        let g_row: Vec<f64> = (0..classes)
            .map(|c| {
                let p = probs[(j, c)];
                if p > 0.0 && mean[c] > 0.0 {
                    inv_n * (mean[c].ln() - p.ln())
                } else {
                    0.0
                }
            })
            .collect();
        let dot: f64 = (0..classes).map(|c| g_row[c] * probs[(j, c)]).sum();
        for k in 0..classes {
            grad[(j, k)] = probs[(j, k)] * (g_row[k] - dot);
        }
    }
    Ok(MiLoss { value, grad_logits: grad })
}

/// The combined objective value.
pub fn total_loss(l_inf: f64, l_mi: f64, beta: f64) -> f64 {
    l_inf + beta * l_mi
}

/// Everything one optimization step needs: the combined objective and the
/// gradients of `total` with respect to each input. Head fields carry only
/// the augmentation-shift route; the plain logits = W f + b route is
/// expressed through `grad_logits_source` and resolved by the network's
/// backward pass.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub lambda: f64,
    pub l_inf: f64,
    pub l_mi: f64,
    pub total: f64,
    pub grad_logits_source: Matrix,
    /// Direct feature-space route beyond the logits route: zero for this
    /// objective, present so the backward call site stays uniform.
    pub grad_features_source: Matrix,
    pub grad_head_w: Matrix,
    pub grad_head_b: Vector,
    /// Already scaled by beta; exactly zero when beta = 0.
    pub grad_logits_target: Matrix,
}

/// Evaluate the full objective on one step's source logits and target
/// prediction rows.
pub fn combined(
    source_logits: &Matrix,
    source_labels: &[usize],
    head_w: &Matrix,
    stats: &ClassStats,
    lambda: f64,
    target_probs: &Matrix,
    beta: f64,
) -> Result<LossReport> {
    let surrogate = surrogate_loss(source_logits, source_labels, head_w, stats, lambda)?;
    let mi = mi_loss(target_probs)?;
    let grad_logits_target = if beta == 0.0 {
        Matrix::zeros(target_probs.rows(), target_probs.cols())
    } else {
        mi.grad_logits.scale(beta)
    };
    Ok(LossReport {
        lambda,
        l_inf: surrogate.value,
        l_mi: mi.value,
        total: total_loss(surrogate.value, mi.value, beta),
        grad_logits_source: surrogate.grad_logits,
        grad_features_source: Matrix::zeros(source_logits.rows(), head_w.cols()),
        grad_head_w: surrogate.grad_head_w,
        grad_head_b: surrogate.grad_head_b,
        grad_logits_target,
    })
}
