//! The end-to-end training loop and the experiment harnesses built on it.
//!
//! One iteration follows a fixed order that the estimators depend on:
//! ramp the augmentation strength, draw one batch per domain, forward both,
//! pseudo-label the target batch, push the fresh features into the selected
//! estimator, re-estimate class statistics, evaluate the combined loss, and
//! take one SGD step. Harnesses wrap that loop for the bias study (all
//! estimators maintained side by side against a per-epoch ideal recompute),
//! the target-fraction sweep, and decision-boundary dumps.
//!
//! Randomness is split into independent named streams of one generator
//! family, so ablations that disable a consumer (for example the target
//! loss) leave every other stream's draws untouched.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{self, DomainDataset};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::loss;
use crate::network::{self, ModelParams, OptimizerState};
use crate::oracle::BoundReport;
use crate::stats::{self, ClassStats, IterativeState, MemoryModule};

/// RNG stream for model initialization.
const MODEL_STREAM: u64 = 0;
/// RNG stream for source batch index draws.
const SOURCE_BATCH_STREAM: u64 = 1;
/// RNG stream for target batch index draws.
const TARGET_BATCH_STREAM: u64 = 2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Which practical statistics estimator feeds the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    /// Per-sample feature cache refreshed batch by batch.
    Memory,
    /// Running per-class moment recurrences.
    Iterative,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorKind::Memory => write!(f, "memory"),
            EstimatorKind::Iterative => write!(f, "iterative"),
        }
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "memory" => Ok(EstimatorKind::Memory),
            "iterative" => Ok(EstimatorKind::Iterative),
            other => Err(Error::Config(format!(
                "unknown estimator {other:?}, expected \"memory\" or \"iterative\""
            ))),
        }
    }
}

/// Everything one training run needs. `Default` is the two-moons recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Final augmentation strength; ramps linearly from zero.
    pub lambda0: f64,
    /// Weight of the mutual-information term.
    pub beta: f64,
    pub total_iters: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub hidden_widths: Vec<usize>,
    pub seed: u64,
    /// Re-estimate class statistics every this many iterations.
    pub stats_refresh_k: usize,
    pub estimator: EstimatorKind,
    /// Fraction of the target set used for training, stratified by label.
    pub rho: f64,
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda0: 0.25,
            beta: 0.1,
            total_iters: 2000,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            hidden_widths: vec![32, 32],
            seed: 0,
            stats_refresh_k: 1,
            estimator: EstimatorKind::Memory,
            rho: 1.0,
            eval_interval: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda0 < 0.0 {
            return Err(Error::Config(format!("lambda0 must be >= 0, got {}", self.lambda0)));
        }
        if self.beta < 0.0 {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.total_iters == 0 {
            return Err(Error::Config("iters must be at least 1".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".to_string()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.stats_refresh_k == 0 {
            return Err(Error::Config("stats_refresh_k must be at least 1".to_string()));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!("rho must be in (0, 1], got {}", self.rho)));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("eval_interval must be at least 1".to_string()));
        }
        Ok(())
    }

    /// Parse a flat `key=value` file; `#` starts a comment, blank lines are
    /// skipped. Keys match the CLI flag names.
    pub fn from_file(path: impl AsRef<Path>) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut config = TrainConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            config
                .apply_kv(key.trim(), value.trim())
                .map_err(|e| Error::Parse { line: idx + 1, message: e.to_string() })?;
        }
        Ok(config)
    }

    /// Apply one `key=value` setting. Shared by the config file parser and
    /// the CLI override path.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            value
                .parse()
                .map_err(|e| Error::Config(format!("bad value {value:?} for {key}: {e}")))
        }
        match key {
            "lambda0" => self.lambda0 = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "iters" => self.total_iters = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.learning_rate = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "hidden" => {
                self.hidden_widths = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|part| num::<usize>("hidden", part.trim()))
                        .collect::<Result<_>>()?
                };
            }
            "seed" => self.seed = num(key, value)?,
            "stats_refresh_k" => self.stats_refresh_k = num(key, value)?,
            "estimator" => self.estimator = value.parse()?,
            "rho" => self.rho = num(key, value)?,
            "eval_interval" => self.eval_interval = num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }
}

/// One evaluation snapshot during training. The bias columns stay empty
/// outside the bias experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub lambda: f64,
    pub loss_total: f64,
    pub loss_inf: f64,
    pub loss_mi: f64,
    pub src_acc: f64,
    /// Absent when the target set carries no evaluation labels.
    pub tgt_acc: Option<f64>,
    pub bias_mu: Option<f64>,
    pub bias_sigma: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub metrics: Vec<MetricsRow>,
}

/// Per-epoch distance of each practical estimator from the ideal recompute.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasRow {
    pub epoch: usize,
    pub bias_mu_memory: f64,
    pub bias_sigma_memory: f64,
    pub bias_mu_iterative: f64,
    pub bias_sigma_iterative: f64,
}

#[derive(Debug, Clone)]
pub struct BiasOutcome {
    pub model: ModelParams,
    pub metrics: Vec<MetricsRow>,
    pub rows: Vec<BiasRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub rho: f64,
    pub tgt_acc: f64,
}

/// Per-row argmax with ties resolved to the lowest class index.
pub fn pseudo_label(probs: &Matrix) -> Vec<usize> {
    (0..probs.rows()).map(|i| linalg::argmax(probs.row(i))).collect()
}

/// Fraction of samples whose predicted class matches the label.
pub fn evaluate(params: &ModelParams, ds: &DomainDataset) -> Result<f64> {
    if !ds.fully_labeled() {
        return Err(Error::Eval(format!("cannot score a partially labeled {} set", ds.domain)));
    }
    let record = network::forward(params, &ds.inputs)?;
    let probs = network::softmax(&record.logits);
    let correct = (0..ds.len())
        .filter(|&i| linalg::argmax(probs.row(i)) == ds.labels[i].expect("fully labeled"))
        .count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Features and labels of a full dataset pass under the current model:
/// ground-truth labels for the source, argmax pseudo-labels otherwise.
fn full_pass(model: &ModelParams, ds: &DomainDataset, use_labels: bool) -> Result<(Matrix, Vec<usize>)> {
    let record = network::forward(model, &ds.inputs)?;
    let labels = if use_labels {
        ds.labels
            .iter()
            .map(|l| l.ok_or_else(|| Error::Config("dataset must be fully labeled".to_string())))
            .collect::<Result<Vec<usize>>>()?
    } else {
        pseudo_label(&network::softmax(&record.logits))
    };
    Ok((record.features().clone(), labels))
}

/// The practical estimators a run keeps warm. Both kinds start from a full
/// forward pass of the initial model, so at iteration zero they agree with
/// the ideal recompute exactly.
struct EstimatorBank {
    memory: Option<MemoryModule>,
    iterative: Option<(IterativeState, IterativeState)>,
}

impl EstimatorBank {
    fn init(
        source: &DomainDataset,
        target: &DomainDataset,
        model: &ModelParams,
        with_memory: bool,
        with_iterative: bool,
    ) -> Result<EstimatorBank> {
        let memory =
            if with_memory { Some(MemoryModule::init(source, target, model)?) } else { None };
        let iterative = if with_iterative {
            let classes = model.class_count();
            let width = model.feature_dim();
            let mut src_state = IterativeState::means_only(classes, width);
            let mut tgt_state = IterativeState::new(classes, width);
            let (src_features, src_labels) = full_pass(model, source, true)?;
            src_state.update(&src_features, &src_labels)?;
            let (tgt_features, tgt_labels) = full_pass(model, target, false)?;
            tgt_state.update(&tgt_features, &tgt_labels)?;
            Some((src_state, tgt_state))
        } else {
            None
        };
        Ok(EstimatorBank { memory, iterative })
    }

    fn update(
        &mut self,
        src_idx: &[usize],
        src_features: &Matrix,
        src_labels: &[usize],
        tgt_idx: &[usize],
        tgt_features: &Matrix,
        pseudo: &[usize],
    ) -> Result<()> {
        if let Some(memory) = &mut self.memory {
            memory.update(src_idx, src_features, src_labels)?;
            let slots: Vec<usize> = tgt_idx.iter().map(|&j| memory.target_slot(j)).collect();
            memory.update(&slots, tgt_features, pseudo)?;
        }
        if let Some((src_state, tgt_state)) = &mut self.iterative {
            src_state.update(src_features, src_labels)?;
            tgt_state.update(tgt_features, pseudo)?;
        }
        Ok(())
    }

    fn stats_for(&self, kind: EstimatorKind, classes: usize) -> Result<ClassStats> {
        match kind {
            EstimatorKind::Memory => {
                let memory = self
                    .memory
                    .as_ref()
                    .ok_or_else(|| Error::Config("memory estimator not maintained".to_string()))?;
                stats::estimate_class_stats(memory, classes)
            }
            EstimatorKind::Iterative => {
                let (src_state, tgt_state) = self
                    .iterative
                    .as_ref()
                    .ok_or_else(|| Error::Config("iterative estimator not maintained".to_string()))?;
                stats::iterative_class_stats(src_state, tgt_state)
            }
        }
    }
}

fn train_inner<H>(
    source: &DomainDataset,
    target: &DomainDataset,
    config: &TrainConfig,
    with_memory: bool,
    with_iterative: bool,
    mut epoch_hook: H,
) -> Result<TrainOutcome>
where
    H: FnMut(usize, &ModelParams, &EstimatorBank) -> Result<()>,
{
    config.validate()?;
    if source.input_dim() != target.input_dim() {
        return Err(Error::Dimension(format!(
            "source width {} vs target width {}",
            source.input_dim(),
            target.input_dim()
        )));
    }
    if !source.fully_labeled() {
        return Err(Error::Config("source dataset must be fully labeled".to_string()));
    }
    let train_target = dataset::stratified_subsample(target, config.rho, config.seed)?;
    let classes = source.class_count;

    let mut model_rng = stream_rng(config.seed, MODEL_STREAM);
    let mut src_rng = stream_rng(config.seed, SOURCE_BATCH_STREAM);
    let mut tgt_rng = stream_rng(config.seed, TARGET_BATCH_STREAM);

    let mut model =
        ModelParams::init(source.input_dim(), &config.hidden_widths, classes, &mut model_rng);
    let mut optimizer = OptimizerState::new(&model, config.learning_rate, config.momentum);
    let mut bank = EstimatorBank::init(source, &train_target, &model, with_memory, with_iterative)?;

    let epoch_iters = source.len().max(train_target.len()).div_ceil(config.batch_size);
    epoch_hook(0, &model, &bank)?;

    let mut metrics = Vec::new();
    let mut cached_stats: Option<ClassStats> = None;
    for t in 1..=config.total_iters {
        let lambda = loss::lambda_schedule(t, config.total_iters, config.lambda0);

        let src_idx = dataset::sample_batch(source, config.batch_size, &mut src_rng);
        let (src_inputs, src_label_opts) = source.gather(&src_idx);
        let src_labels: Vec<usize> =
            src_label_opts.into_iter().map(|l| l.expect("validated fully labeled")).collect();
        let src_record = network::forward(&model, &src_inputs)?;

        let tgt_idx = dataset::sample_batch(&train_target, config.batch_size, &mut tgt_rng);
        let (tgt_inputs, _) = train_target.gather(&tgt_idx);
        let tgt_record = network::forward(&model, &tgt_inputs)?;
        let tgt_probs = network::softmax(&tgt_record.logits);
        let pseudo = pseudo_label(&tgt_probs);

        bank.update(
            &src_idx,
            src_record.features(),
            &src_labels,
            &tgt_idx,
            tgt_record.features(),
            &pseudo,
        )?;
        if cached_stats.is_none() || (t - 1) % config.stats_refresh_k == 0 {
            cached_stats = Some(bank.stats_for(config.estimator, classes)?);
        }
        let class_stats = cached_stats.as_ref().expect("estimated above");

        let report = loss::combined(
            &src_record.logits,
            &src_labels,
            &model.head_w,
            class_stats,
            lambda,
            &tgt_probs,
            config.beta,
        )?;

        let mut grads = network::backward(
            &model,
            &src_record,
            &report.grad_logits_source,
            &report.grad_features_source,
        )?;
        grads.head_w.scaled_add_assign(&report.grad_head_w, 1.0);
        grads.head_b.scaled_add_assign(&report.grad_head_b, 1.0);
        if config.beta != 0.0 {
            let zero_features = Matrix::zeros(tgt_idx.len(), model.feature_dim());
            let tgt_grads =
                network::backward(&model, &tgt_record, &report.grad_logits_target, &zero_features)?;
            grads.add_assign(&tgt_grads);
        }
        network::sgd_step(&mut model, &grads, &mut optimizer);

        if t % config.eval_interval == 0 || t == config.total_iters {
            let tgt_acc =
                if target.fully_labeled() { Some(evaluate(&model, target)?) } else { None };
            metrics.push(MetricsRow {
                iter: t,
                lambda,
                loss_total: report.total,
                loss_inf: report.l_inf,
                loss_mi: report.l_mi,
                src_acc: evaluate(&model, source)?,
                tgt_acc,
                bias_mu: None,
                bias_sigma: None,
            });
        }
        if t % epoch_iters == 0 {
            epoch_hook(t / epoch_iters, &model, &bank)?;
        }
    }
    Ok(TrainOutcome { model, metrics })
}

/// Run the full objective with the configured estimator and return the
/// trained model plus its evaluation trace.
pub fn train(
    source: &DomainDataset,
    target: &DomainDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_inner(
        source,
        target,
        config,
        config.estimator == EstimatorKind::Memory,
        config.estimator == EstimatorKind::Iterative,
        |_, _, _| Ok(()),
    )
}

/// Train while maintaining both practical estimators, measuring each one
/// against a fresh full-dataset recompute at every epoch boundary (epoch 0
/// is the warm start, where both must agree with the ideal exactly).
pub fn bias_experiment(
    source: &DomainDataset,
    target: &DomainDataset,
    config: &TrainConfig,
) -> Result<BiasOutcome> {
    config.validate()?;
    let train_target = dataset::stratified_subsample(target, config.rho, config.seed)?;
    let classes = source.class_count;
    let mut rows: Vec<BiasRow> = Vec::new();
    let outcome = train_inner(source, target, config, true, true, |epoch, model, bank| {
        let ideal = stats::ideal_class_stats(source, &train_target, model)?;
        let memory_stats = bank.stats_for(EstimatorKind::Memory, classes)?;
        let iterative_stats = bank.stats_for(EstimatorKind::Iterative, classes)?;
        let (bias_mu_memory, bias_sigma_memory) = stats::estimation_bias(&memory_stats, &ideal)?;
        let (bias_mu_iterative, bias_sigma_iterative) =
            stats::estimation_bias(&iterative_stats, &ideal)?;
        rows.push(BiasRow {
            epoch,
            bias_mu_memory,
            bias_sigma_memory,
            bias_mu_iterative,
            bias_sigma_iterative,
        });
        Ok(())
    })?;

    // Stamp each metrics row with the selected estimator's bias at the last
    // completed epoch, so the trace carries the study's headline numbers.
    let epoch_iters = source.len().max(train_target.len()).div_ceil(config.batch_size);
    let mut metrics = outcome.metrics;
    for row in &mut metrics {
        let epoch = (row.iter / epoch_iters).min(rows.len().saturating_sub(1));
        let at = &rows[epoch];
        let (mu, sigma) = match config.estimator {
            EstimatorKind::Memory => (at.bias_mu_memory, at.bias_sigma_memory),
            EstimatorKind::Iterative => (at.bias_mu_iterative, at.bias_sigma_iterative),
        };
        row.bias_mu = Some(mu);
        row.bias_sigma = Some(sigma);
    }
    Ok(BiasOutcome { model: outcome.model, metrics, rows })
}

/// Train once per requested target fraction and score each model on the
/// full labeled target set.
pub fn rho_sweep(
    source: &DomainDataset,
    target: &DomainDataset,
    config: &TrainConfig,
    rhos: &[f64],
) -> Result<Vec<SweepRow>> {
    if rhos.is_empty() {
        return Err(Error::Config("sweep needs at least one rho value".to_string()));
    }
    let mut rows = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let mut run_config = config.clone();
        run_config.rho = rho;
        let outcome = train(source, target, &run_config)?;
        rows.push(SweepRow { rho, tgt_acc: evaluate(&outcome.model, target)? });
    }
    Ok(rows)
}

/// Write the `x,y,pred` class grid of a 2D-input model over `bounds` =
/// (xmin, xmax, ymin, ymax), inclusive of the corners.
pub fn dump_boundary(
    params: &ModelParams,
    bounds: (f64, f64, f64, f64),
    resolution: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    if params.input_dim() != 2 {
        return Err(Error::Dimension(format!(
            "boundary grid needs a 2D-input model, got input width {}",
            params.input_dim()
        )));
    }
    if resolution < 2 {
        return Err(Error::Config(format!(
            "resolution must be at least 2 to include both corners, got {resolution}"
        )));
    }
    let (xmin, xmax, ymin, ymax) = bounds;
    let step = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (resolution - 1) as f64;
    let mut points = Vec::with_capacity(resolution * resolution);
    for yi in 0..resolution {
        for xi in 0..resolution {
            points.push(vec![step(xmin, xmax, xi), step(ymin, ymax, yi)]);
        }
    }
    let grid = Matrix::from_rows(&points)?;
    let record = network::forward(params, &grid)?;
    let preds = pseudo_label(&network::softmax(&record.logits));

    let mut text = String::from("x,y,pred\n");
    for (point, pred) in points.iter().zip(&preds) {
        text.push_str(&format!("{},{},{}\n", point[0], point[1], pred));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    let mut text =
        String::from("iter,lambda,loss_total,loss_inf,loss_mi,src_acc,tgt_acc,bias_mu,bias_sigma\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.iter,
            r.lambda,
            r.loss_total,
            r.loss_inf,
            r.loss_mi,
            r.src_acc,
            fmt_opt(r.tgt_acc),
            fmt_opt(r.bias_mu),
            fmt_opt(r.bias_sigma),
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_bias_csv(rows: &[BiasRow], path: impl AsRef<Path>) -> Result<()> {
    let mut text =
        String::from("epoch,bias_mu_memory,bias_sigma_memory,bias_mu_iterative,bias_sigma_iterative\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.bias_mu_memory, r.bias_sigma_memory, r.bias_mu_iterative, r.bias_sigma_iterative
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::from("rho,tgt_acc\n");
    for r in rows {
        text.push_str(&format!("{},{}\n", r.rho, r.tgt_acc));
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_verify_csv(reports: &[BoundReport], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::from("instance_id,lambda,l_inf,mc_value,mc_stderr,margin,holds\n");
    for r in reports {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.instance_id, r.lambda, r.l_inf, r.mc.value, r.mc.std_error, r.margin, r.holds
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{two_moons_task_with, Domain};
    use crate::linalg::Vector;

    fn small_task() -> (DomainDataset, DomainDataset) {
        two_moons_task_with(30, 0.1, 30.0, 7)
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            total_iters: 40,
            batch_size: 16,
            hidden_widths: vec![8],
            eval_interval: 20,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn pseudo_label_takes_argmax_with_low_tie() {
        let probs = Matrix::from_rows(&[
            vec![0.1, 0.7, 0.2],
            vec![0.5, 0.5, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert_eq!(pseudo_label(&probs), vec![1, 0, 2]);
    }

    fn labeled_points(rows: &[(f64, f64, usize)], domain: Domain) -> DomainDataset {
        let inputs =
            Matrix::from_rows(&rows.iter().map(|r| vec![r.0, r.1]).collect::<Vec<_>>()).unwrap();
        let labels = rows.iter().map(|r| Some(r.2)).collect();
        DomainDataset::new(inputs, labels, domain).unwrap()
    }

    fn sign_model() -> ModelParams {
        // Classifies by the sign of the first coordinate.
        ModelParams {
            extractor: vec![],
            head_w: Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap(),
            head_b: Vector::zeros(2),
        }
    }

    #[test]
    fn evaluate_scores_perfect_flipped_and_constant_models() {
        let ds = labeled_points(
            &[(1.0, 0.0, 0), (2.0, 1.0, 0), (-1.0, 0.5, 1), (-2.0, -1.0, 1)],
            Domain::Source,
        );
        assert_eq!(evaluate(&sign_model(), &ds).unwrap(), 1.0);

        let flipped = labeled_points(
            &[(1.0, 0.0, 1), (2.0, 1.0, 1), (-1.0, 0.5, 0), (-2.0, -1.0, 0)],
            Domain::Source,
        );
        assert_eq!(evaluate(&sign_model(), &flipped).unwrap(), 0.0);

        // Zero logits everywhere: constant class-0 prediction on a balanced set.
        let constant = ModelParams {
            extractor: vec![],
            head_w: Matrix::zeros(2, 2),
            head_b: Vector::zeros(2),
        };
        assert_eq!(evaluate(&constant, &ds).unwrap(), 0.5);
    }

    #[test]
    fn evaluate_rejects_unlabeled_sets() {
        let inputs = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let ds = DomainDataset::new(inputs, vec![None], Domain::Target).unwrap();
        assert!(matches!(evaluate(&sign_model(), &ds), Err(Error::Eval(_))));
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let base = TrainConfig::default();
        for broken in [
            TrainConfig { lambda0: -0.1, ..base.clone() },
            TrainConfig { beta: -1.0, ..base.clone() },
            TrainConfig { total_iters: 0, ..base.clone() },
            TrainConfig { batch_size: 0, ..base.clone() },
            TrainConfig { momentum: 1.0, ..base.clone() },
            TrainConfig { stats_refresh_k: 0, ..base.clone() },
            TrainConfig { rho: 0.0, ..base.clone() },
            TrainConfig { rho: 1.5, ..base.clone() },
            TrainConfig { eval_interval: 0, ..base.clone() },
        ] {
            assert!(matches!(broken.validate(), Err(Error::Config(_))), "{broken:?}");
        }
        assert!(base.validate().is_ok());
        // A frozen-model run is legitimate; only negative rates are not.
        assert!(TrainConfig { learning_rate: 0.0, ..base.clone() }.validate().is_ok());
        assert!(TrainConfig { learning_rate: -0.1, ..base }.validate().is_err());
    }

    #[test]
    fn config_file_parses_and_rejects_unknown_keys() {
        let dir = std::env::temp_dir().join("semaug_config_test");
        std::fs::create_dir_all(&dir).unwrap();
        let good = dir.join("good.cfg");
        std::fs::write(
            &good,
            "# two-moons sweep recipe\nlambda0 = 0.5\nhidden = 16, 8\nestimator = iterative\n\nrho=0.4\n",
        )
        .unwrap();
        let config = TrainConfig::from_file(&good).unwrap();
        assert_eq!(config.lambda0, 0.5);
        assert_eq!(config.hidden_widths, vec![16, 8]);
        assert_eq!(config.estimator, EstimatorKind::Iterative);
        assert_eq!(config.rho, 0.4);
        assert_eq!(config.beta, 0.1, "unset keys keep defaults");

        let bad = dir.join("bad.cfg");
        std::fs::write(&bad, "lambda0 = 0.5\nwible = 3\n").unwrap();
        let err = TrainConfig::from_file(&bad).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn single_iteration_run_trains_and_reports_once() {
        let (source, target) = small_task();
        let config = TrainConfig { total_iters: 1, ..quick_config() };
        let outcome = train(&source, &target, &config).unwrap();
        assert_eq!(outcome.metrics.len(), 1);
        assert_eq!(outcome.metrics[0].iter, 1);

        let mut init_rng = stream_rng(config.seed, MODEL_STREAM);
        let init =
            ModelParams::init(2, &config.hidden_widths, source.class_count, &mut init_rng);
        assert_ne!(outcome.model.to_flat(), init.to_flat(), "one update must move the model");
    }

    #[test]
    fn metrics_lambda_column_is_the_exact_ramp() {
        let (source, target) = small_task();
        let config = TrainConfig { total_iters: 60, eval_interval: 25, ..quick_config() };
        let outcome = train(&source, &target, &config).unwrap();
        let iters: Vec<usize> = outcome.metrics.iter().map(|r| r.iter).collect();
        assert_eq!(iters, vec![25, 50, 60]);
        for row in &outcome.metrics {
            assert_eq!(row.lambda, loss::lambda_schedule(row.iter, 60, config.lambda0));
            assert!(row.src_acc >= 0.0 && row.src_acc <= 1.0);
            let tgt = row.tgt_acc.unwrap();
            assert!(tgt >= 0.0 && tgt <= 1.0);
            assert!(row.loss_total.is_finite() && row.loss_inf.is_finite());
            assert!(row.bias_mu.is_none() && row.bias_sigma.is_none());
        }
    }

    /// A plain cross-entropy loop that shares the model and source-batch
    /// streams with the full trainer but never touches target data.
    fn reference_ce_loop(source: &DomainDataset, config: &TrainConfig) -> ModelParams {
        let mut model_rng = stream_rng(config.seed, MODEL_STREAM);
        let mut src_rng = stream_rng(config.seed, SOURCE_BATCH_STREAM);
        let mut model = ModelParams::init(
            source.input_dim(),
            &config.hidden_widths,
            source.class_count,
            &mut model_rng,
        );
        let mut optimizer =
            OptimizerState::new(&model, config.learning_rate, config.momentum);
        for _ in 1..=config.total_iters {
            let idx = dataset::sample_batch(source, config.batch_size, &mut src_rng);
            let (inputs, label_opts) = source.gather(&idx);
            let labels: Vec<usize> = label_opts.into_iter().map(|l| l.unwrap()).collect();
            let record = network::forward(&model, &inputs).unwrap();
            let (_, grad_logits) = loss::cross_entropy(&record.logits, &labels).unwrap();
            let zero_features = Matrix::zeros(idx.len(), model.feature_dim());
            let grads =
                network::backward(&model, &record, &grad_logits, &zero_features).unwrap();
            network::sgd_step(&mut model, &grads, &mut optimizer);
        }
        model
    }

    #[test]
    fn disabled_augmentation_and_mi_reduce_to_plain_cross_entropy() {
        let (source, target) = small_task();
        for estimator in [EstimatorKind::Memory, EstimatorKind::Iterative] {
            let config = TrainConfig {
                lambda0: 0.0,
                beta: 0.0,
                total_iters: 50,
                estimator,
                ..quick_config()
            };
            let full = train(&source, &target, &config).unwrap();
            let reference = reference_ce_loop(&source, &config);
            assert_eq!(
                full.model.to_flat(),
                reference.to_flat(),
                "trajectory must match the plain loop parameter for parameter ({estimator})"
            );
        }
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let (source, target) = small_task();
        let config = TrainConfig { total_iters: 45, ..quick_config() };
        let a = train(&source, &target, &config).unwrap();
        let b = train(&source, &target, &config).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.model.to_flat(), b.model.to_flat());
    }

    #[test]
    fn warm_start_gives_zero_bias_at_epoch_zero() {
        let (source, target) = small_task();
        let outcome = bias_experiment(&source, &target, &quick_config()).unwrap();
        let first = &outcome.rows[0];
        assert_eq!(first.epoch, 0);
        assert_eq!(
            (first.bias_mu_memory, first.bias_sigma_memory, first.bias_mu_iterative, first.bias_sigma_iterative),
            (0.0, 0.0, 0.0, 0.0),
            "both estimators start at the ideal"
        );
        assert!(outcome.metrics.iter().all(|r| r.bias_mu.is_some()));
    }

    #[test]
    fn frozen_model_keeps_memory_bias_at_zero() {
        let (source, target) = small_task();
        let epoch_iters = source.len().max(target.len()).div_ceil(16);
        let config = TrainConfig {
            learning_rate: 0.0,
            total_iters: epoch_iters * 2,
            batch_size: 16,
            ..quick_config()
        };
        let outcome = bias_experiment(&source, &target, &config).unwrap();
        for row in &outcome.rows {
            assert_eq!(
                (row.bias_mu_memory, row.bias_sigma_memory),
                (0.0, 0.0),
                "epoch {}: a frozen model cannot move cached features",
                row.epoch
            );
        }
    }

    #[test]
    fn rho_one_sweep_entry_matches_plain_training() {
        let (source, target) = small_task();
        let config = quick_config();
        let rows = rho_sweep(&source, &target, &config, &[0.5, 1.0]).unwrap();
        assert_eq!(rows.len(), 2);
        let plain = train(&source, &target, &config).unwrap();
        let plain_acc = evaluate(&plain.model, &target).unwrap();
        assert_eq!(rows[1].rho, 1.0);
        assert_eq!(rows[1].tgt_acc, plain_acc);
    }

    #[test]
    fn boundary_grid_covers_corners_inclusively() {
        let dir = std::env::temp_dir().join("semaug_boundary_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("grid.csv");
        dump_boundary(&sign_model(), (-1.0, 1.0, -2.0, 2.0), 2, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,y,pred");
        assert_eq!(lines.len(), 5, "2x2 grid has four points");
        assert_eq!(lines[1], "-1,-2,1");
        assert_eq!(lines[4], "1,2,0");

        let constant = ModelParams {
            extractor: vec![],
            head_w: Matrix::zeros(2, 2),
            head_b: Vector::zeros(2),
        };
        dump_boundary(&constant, (-1.0, 1.0, -1.0, 1.0), 3, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        for line in text.lines().skip(1) {
            assert!(line.ends_with(",0"), "constant model must predict one class: {line}");
        }
    }

    #[test]
    fn boundary_rejects_bad_shapes() {
        let mut rng = stream_rng(0, MODEL_STREAM);
        let model_3d = ModelParams::init(3, &[4], 2, &mut rng);
        let path = std::env::temp_dir().join("semaug_boundary_reject.csv");
        assert!(matches!(
            dump_boundary(&model_3d, (0.0, 1.0, 0.0, 1.0), 4, &path),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            dump_boundary(&sign_model(), (0.0, 1.0, 0.0, 1.0), 1, &path),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn metrics_csv_layout_is_stable() {
        let rows = vec![MetricsRow {
            iter: 50,
            lambda: 0.125,
            loss_total: 0.5,
            loss_inf: 0.45,
            loss_mi: 0.5,
            src_acc: 0.9,
            tgt_acc: None,
            bias_mu: None,
            bias_sigma: None,
        }];
        let path = std::env::temp_dir().join("semaug_metrics_layout.csv");
        write_metrics_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "iter,lambda,loss_total,loss_inf,loss_mi,src_acc,tgt_acc,bias_mu,bias_sigma\n50,0.125,0.5,0.45,0.5,0.9,,,\n"
        );
    }
}
