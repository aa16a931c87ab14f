//! Feed-forward feature extractor plus linear classification head.
//!
//! The extractor is a stack of fully connected layers with a rectifier
//! between consecutive layers; the output of the last extractor layer is the
//! feature vector (no rectifier after it), and the head maps features to
//! logits. Forward passes record enough to run the analytic backward pass,
//! which accepts gradients injected both at the logits and directly at the
//! feature layer so feature-level and logit-level losses compose.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// One fully connected layer, stored out x in. Doubles as the per-layer
/// gradient and velocity carrier since shapes always mirror the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vector,
}

impl Layer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { weight: Matrix::zeros(out_dim, in_dim), bias: Vector::zeros(out_dim) }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub extractor: Vec<Layer>,
    pub head_w: Matrix,
    pub head_b: Vector,
}

impl ModelParams {
    /// Zero biases, Gaussian weights with standard deviation sqrt(2/fan_in).
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_widths: &[usize],
        class_count: usize,
        rng: &mut R,
    ) -> ModelParams {
        let mut extractor = Vec::with_capacity(hidden_widths.len());
        let mut fan_in = input_dim;
        for &width in hidden_widths {
            extractor.push(random_layer(width, fan_in, rng));
            fan_in = width;
        }
        let head = random_layer(class_count, fan_in, rng);
        ModelParams { extractor, head_w: head.weight, head_b: head.bias }
    }

    pub fn input_dim(&self) -> usize {
        self.extractor.first().map(|l| l.in_dim()).unwrap_or_else(|| self.head_w.cols())
    }

    /// Width of the feature layer the head consumes.
    pub fn feature_dim(&self) -> usize {
        self.head_w.cols()
    }

    pub fn class_count(&self) -> usize {
        self.head_w.rows()
    }

    pub fn num_params(&self) -> usize {
        let mut n = self.head_w.rows() * self.head_w.cols() + self.head_b.dim();
        for l in &self.extractor {
            n += l.weight.rows() * l.weight.cols() + l.bias.dim();
        }
        n
    }

    /// Flatten as extractor layers in order (weights row-major, then bias),
    /// then head weights, then head bias. `from_flat` inverts it.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.extractor {
            for i in 0..l.weight.rows() {
                out.extend_from_slice(l.weight.row(i));
            }
            out.extend_from_slice(l.bias.as_slice());
        }
        for i in 0..self.head_w.rows() {
            out.extend_from_slice(self.head_w.row(i));
        }
        out.extend_from_slice(self.head_b.as_slice());
        out
    }

    /// Rebuild parameters with this model's shapes from a flat slice.
    pub fn from_flat(&self, flat: &[f64]) -> ModelParams {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length mismatch");
        let mut out = self.clone();
        let mut pos = 0;
        for l in &mut out.extractor {
            for i in 0..l.weight.rows() {
                let w = l.weight.cols();
                l.weight.row_mut(i).copy_from_slice(&flat[pos..pos + w]);
                pos += w;
            }
            let b = l.bias.dim();
            l.bias.as_mut_slice().copy_from_slice(&flat[pos..pos + b]);
            pos += b;
        }
        for i in 0..out.head_w.rows() {
            let w = out.head_w.cols();
            out.head_w.row_mut(i).copy_from_slice(&flat[pos..pos + w]);
            pos += w;
        }
        out.head_b.as_mut_slice().copy_from_slice(&flat[pos..]);
        out
    }
}

fn random_layer<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Layer {
    let sd = (2.0 / in_dim as f64).sqrt();
    let mut weight = Matrix::zeros(out_dim, in_dim);
    for i in 0..out_dim {
        for j in 0..in_dim {
            weight[(i, j)] = sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Layer { weight, bias: Vector::zeros(out_dim) }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    pub inputs: Matrix,
    /// Pre-activation of each extractor layer, batch x width.
    pub pre_activations: Vec<Matrix>,
    /// Activation of each extractor layer; equals the pre-activation for the
    /// last layer, which feeds the head without a rectifier.
    pub activations: Vec<Matrix>,
    pub logits: Matrix,
}

impl ForwardRecord {
    pub fn features(&self) -> &Matrix {
        self.activations.last().unwrap_or(&self.inputs)
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.rows()
    }
}

/// Row-independent forward pass; identical rows give bitwise identical logits.
pub fn forward(params: &ModelParams, inputs: &Matrix) -> Result<ForwardRecord> {
    if inputs.cols() != params.input_dim() {
        return Err(Error::Dimension(format!(
            "input width {} vs model input dimension {}",
            inputs.cols(),
            params.input_dim()
        )));
    }
    let mut pre_activations = Vec::with_capacity(params.extractor.len());
    let mut activations = Vec::with_capacity(params.extractor.len());
    let mut current = inputs.clone();
    let last = params.extractor.len().saturating_sub(1);
    for (idx, layer) in params.extractor.iter().enumerate() {
        let pre = affine(&current, &layer.weight, &layer.bias)?;
        let act = if idx < last { relu(&pre) } else { pre.clone() };
        pre_activations.push(pre);
        current = act.clone();
        activations.push(act);
    }
    let logits = affine(&current, &params.head_w, &params.head_b)?;
    Ok(ForwardRecord { inputs: inputs.clone(), pre_activations, activations, logits })
}

fn affine(inputs: &Matrix, weight: &Matrix, bias: &Vector) -> Result<Matrix> {
    let mut out = inputs.matmul_transpose(weight)?;
    for i in 0..out.rows() {
        for j in 0..out.cols() {
            out[(i, j)] += bias[j];
        }
    }
    Ok(out)
}

fn relu(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        for v in out.row_mut(i) {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    out
}

/// Row-wise softmax with max-subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..row.len() {
            let e = (row[j] - m).exp();
            out[(i, j)] = e;
            sum += e;
        }
        for j in 0..row.len() {
            out[(i, j)] /= sum;
        }
    }
    out
}

/// Parameter gradients; shapes mirror [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub extractor: Vec<Layer>,
    pub head_w: Matrix,
    pub head_b: Vector,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            extractor: params.extractor.iter().map(|l| Layer::zeros(l.out_dim(), l.in_dim())).collect(),
            head_w: Matrix::zeros(params.head_w.rows(), params.head_w.cols()),
            head_b: Vector::zeros(params.head_b.dim()),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.extractor.iter_mut().zip(&other.extractor) {
            a.weight.add_assign(&b.weight);
            a.bias.scaled_add_assign(&b.bias, 1.0);
        }
        self.head_w.add_assign(&other.head_w);
        self.head_b.scaled_add_assign(&other.head_b, 1.0);
    }

    /// Same flattening order as [`ModelParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let as_params = ModelParams {
            extractor: self.extractor.clone(),
            head_w: self.head_w.clone(),
            head_b: self.head_b.clone(),
        };
        as_params.to_flat()
    }
}

/// Backpropagate `grad_logits` through the head and extractor, adding
/// `grad_features` into the feature layer on the way. Statistics-driven loss
/// terms that differentiate directly with respect to the head parameters are
/// accumulated by the caller on top of the returned gradients.
pub fn backward(
    params: &ModelParams,
    record: &ForwardRecord,
    grad_logits: &Matrix,
    grad_features: &Matrix,
) -> Result<Gradients> {
    let batch = record.batch_size();
    let k = params.feature_dim();
    let c = params.class_count();
    if grad_logits.rows() != batch || grad_logits.cols() != c {
        return Err(Error::Dimension(format!(
            "grad_logits {}x{} vs batch {batch} and {c} classes",
            grad_logits.rows(),
            grad_logits.cols()
        )));
    }
    if grad_features.rows() != batch || grad_features.cols() != k {
        return Err(Error::Dimension(format!(
            "grad_features {}x{} vs batch {batch} and feature dimension {k}",
            grad_features.rows(),
            grad_features.cols()
        )));
    }
    let features = record.features();
    let mut grads = Gradients::zeros_like(params);
    grads.head_w = grad_logits.transpose_matmul(features)?;
    grads.head_b = grad_logits.col_sums();

    // Gradient arriving at the feature layer: head path plus direct injection.
    let mut grad_act = grad_logits.matmul(&params.head_w)?;
    grad_act.add_assign(grad_features);

    let last = params.extractor.len().saturating_sub(1);
    for idx in (0..params.extractor.len()).rev() {
        let pre = &record.pre_activations[idx];
        let mut grad_pre = grad_act;
        if idx < last {
            for i in 0..grad_pre.rows() {
                for j in 0..grad_pre.cols() {
                    if pre[(i, j)] <= 0.0 {
                        grad_pre[(i, j)] = 0.0;
                    }
                }
            }
        }
        let layer_input = if idx == 0 { &record.inputs } else { &record.activations[idx - 1] };
        grads.extractor[idx].weight = grad_pre.transpose_matmul(layer_input)?;
        grads.extractor[idx].bias = grad_pre.col_sums();
        grad_act = grad_pre.matmul(&params.extractor[idx].weight)?;
    }
    Ok(grads)
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub velocity: Gradients,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, learning_rate: f64, momentum: f64) -> Self {
        Self { velocity: Gradients::zeros_like(params), learning_rate, momentum }
    }
}

/// velocity <- momentum * velocity + grad; param <- param - lr * velocity.
pub fn sgd_step(params: &mut ModelParams, grads: &Gradients, state: &mut OptimizerState) {
    let lr = state.learning_rate;
    let m = state.momentum;
    let step_matrix = |p: &mut Matrix, g: &Matrix, v: &mut Matrix| {
        for i in 0..p.rows() {
            for j in 0..p.cols() {
                v[(i, j)] = m * v[(i, j)] + g[(i, j)];
                p[(i, j)] -= lr * v[(i, j)];
            }
        }
    };
    let step_vector = |p: &mut Vector, g: &Vector, v: &mut Vector| {
        for i in 0..p.dim() {
            v[i] = m * v[i] + g[i];
            p[i] -= lr * v[i];
        }
    };
    for idx in 0..params.extractor.len() {
        step_matrix(
            &mut params.extractor[idx].weight,
            &grads.extractor[idx].weight,
            &mut state.velocity.extractor[idx].weight,
        );
        step_vector(
            &mut params.extractor[idx].bias,
            &grads.extractor[idx].bias,
            &mut state.velocity.extractor[idx].bias,
        );
    }
    step_matrix(&mut params.head_w, &grads.head_w, &mut state.velocity.head_w);
    step_vector(&mut params.head_b, &grads.head_b, &mut state.velocity.head_b);
}

/// Exclusion mask (aligned with `to_flat`) for finite-difference audits:
/// a layer's parameters are excluded when any rectifier at or downstream of
/// it sees a pre-activation within `tol` of zero, where the difference
/// quotient straddles the kink. Head parameters never feed a rectifier.
pub fn kink_exclusion_mask(params: &ModelParams, record: &ForwardRecord, tol: f64) -> Vec<bool> {
    let layer_count = params.extractor.len();
    let relu_layer_near_kink: Vec<bool> = (0..layer_count)
        .map(|idx| {
            if idx + 1 >= layer_count {
                return false;
            }
            let pre = &record.pre_activations[idx];
            (0..pre.rows()).any(|i| pre.row(i).iter().any(|v| v.abs() < tol))
        })
        .collect();
    let mut mask = Vec::with_capacity(params.num_params());
    for idx in 0..layer_count {
        let excluded = (idx..layer_count).any(|l| relu_layer_near_kink[l]);
        let layer = &params.extractor[idx];
        let count = layer.weight.rows() * layer.weight.cols() + layer.bias.dim();
        mask.extend(std::iter::repeat(excluded).take(count));
    }
    let head_count = params.head_w.rows() * params.head_w.cols() + params.head_b.dim();
    mask.extend(std::iter::repeat(false).take(head_count));
    mask
}

const CHECKPOINT_MAGIC: &str = "semaug-model 1";

/// Write a decimal-text checkpoint; the shortest-round-trip float formatting
/// makes the dump lossless at 64-bit precision.
pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    out.push_str(CHECKPOINT_MAGIC);
    out.push('\n');
    out.push_str(&format!("extractor {}\n", params.extractor.len()));
    for layer in &params.extractor {
        push_block(&mut out, "layer", &layer.weight, &layer.bias);
    }
    push_block(&mut out, "head", &params.head_w, &params.head_b);
    fs::write(path, out)?;
    Ok(())
}

fn push_block(out: &mut String, tag: &str, weight: &Matrix, bias: &Vector) {
    out.push_str(&format!("{tag} {} {}\n", weight.rows(), weight.cols()));
    for i in 0..weight.rows() {
        let row: Vec<String> = weight.row(i).iter().map(|x| format!("{x}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    let b: Vec<String> = bias.as_slice().iter().map(|x| format!("{x}")).collect();
    out.push_str(&b.join(" "));
    out.push('\n');
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let text = fs::read_to_string(path)?;
    parse_checkpoint(&text)
}

fn parse_checkpoint(text: &str) -> Result<ModelParams> {
    let mut lines = text.lines().enumerate();
    let mut next = |expect: &str| {
        lines.next().ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("unexpected end of checkpoint, expected {expect}"),
        })
    };
    let (_, magic) = next("magic header")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Parse { line: 1, message: format!("bad checkpoint header {magic:?}") });
    }
    let (idx, count_line) = next("extractor count")?;
    let layer_count: usize = match count_line.strip_prefix("extractor ") {
        Some(n) => n.parse().map_err(|_| Error::Parse {
            line: idx + 1,
            message: format!("bad extractor count {n:?}"),
        })?,
        None => {
            return Err(Error::Parse {
                line: idx + 1,
                message: "expected `extractor <count>`".to_string(),
            })
        }
    };
    let mut read_block = |tag: &str| -> Result<Layer> {
        let (idx, shape_line) = next(tag)?;
        let lineno = idx + 1;
        let parts: Vec<&str> = shape_line.split(' ').collect();
        if parts.len() != 3 || parts[0] != tag {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected `{tag} <rows> <cols>`, got {shape_line:?}"),
            });
        }
        let rows: usize = parts[1]
            .parse()
            .map_err(|_| Error::Parse { line: lineno, message: "bad row count".to_string() })?;
        let cols: usize = parts[2]
            .parse()
            .map_err(|_| Error::Parse { line: lineno, message: "bad col count".to_string() })?;
        let mut weight = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let (idx, line) = next("weight row")?;
            let values = parse_floats(line, idx + 1, cols)?;
            weight.set_row(r, &values);
        }
        let (idx, line) = next("bias row")?;
        let values = parse_floats(line, idx + 1, rows)?;
        Ok(Layer { weight, bias: Vector::new(values) })
    };
    let mut extractor = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        extractor.push(read_block("layer")?);
    }
    let head = read_block("head")?;
    Ok(ModelParams { extractor, head_w: head.weight, head_b: head.bias })
}

fn parse_floats(line: &str, lineno: usize, expect: usize) -> Result<Vec<f64>> {
    let values: std::result::Result<Vec<f64>, _> =
        line.split(' ').map(|t| t.parse::<f64>()).collect();
    let values = values
        .map_err(|_| Error::Parse { line: lineno, message: format!("bad float row {line:?}") })?;
    if values.len() != expect {
        return Err(Error::Parse {
            line: lineno,
            message: format!("expected {expect} values, got {}", values.len()),
        });
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_inputs(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        m
    }

    #[test]
    fn forward_with_zero_parameters_gives_zero_logits() {
        let params = ModelParams {
            extractor: vec![Layer::zeros(4, 2)],
            head_w: Matrix::zeros(3, 4),
            head_b: Vector::zeros(3),
        };
        let inputs = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let rec = forward(&params, &inputs).unwrap();
        assert!(rec.logits.is_zero());
    }

    #[test]
    fn forward_identity_extractor_and_identity_head_is_identity() {
        let params = ModelParams {
            extractor: vec![Layer { weight: Matrix::identity(2), bias: Vector::zeros(2) }],
            head_w: Matrix::identity(2),
            head_b: Vector::zeros(2),
        };
        // Negative entries included: the last extractor layer is linear.
        let inputs = Matrix::from_rows(&[vec![0.3, -0.7], vec![-2.0, 5.0]]).unwrap();
        let rec = forward(&params, &inputs).unwrap();
        assert_eq!(rec.logits, inputs);
        assert_eq!(rec.features(), &inputs);
    }

    #[test]
    fn forward_rows_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = ModelParams::init(3, &[5, 4], 2, &mut rng);
        let a = random_inputs(&mut rng, 1, 3);
        let mut doubled = Matrix::zeros(2, 3);
        doubled.set_row(0, a.row(0));
        doubled.set_row(1, a.row(0));
        let rec = forward(&params, &doubled).unwrap();
        assert_eq!(rec.logits.row(0), rec.logits.row(1), "identical rows, identical logits");
        let single = forward(&params, &a).unwrap();
        assert_eq!(single.logits.row(0), rec.logits.row(0), "batching must not change a row");
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = ModelParams::init(3, &[4], 2, &mut rng);
        let inputs = Matrix::zeros(2, 5);
        assert!(matches!(forward(&params, &inputs), Err(Error::Dimension(_))));
    }

    #[test]
    fn softmax_matches_hand_oracles() {
        let logits = Matrix::from_rows(&[vec![0.0, 0.0], vec![1f64.ln(), 3f64.ln()]]).unwrap();
        let p = softmax(&logits);
        assert!((p[(0, 0)] - 0.5).abs() <= 1e-15);
        assert!((p[(0, 1)] - 0.5).abs() <= 1e-15);
        assert!((p[(1, 0)] - 0.25).abs() <= 1e-12);
        assert!((p[(1, 1)] - 0.75).abs() <= 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let logits = random_inputs(&mut rng, 6, 5);
        let p = softmax(&logits);
        let mut shifted = logits.clone();
        for i in 0..shifted.rows() {
            for j in 0..shifted.cols() {
                shifted[(i, j)] += 1000.0;
            }
        }
        let q = softmax(&shifted);
        for i in 0..p.rows() {
            let sum: f64 = p.row(i).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "row {i} sums to {sum}");
            for j in 0..p.cols() {
                assert!(p[(i, j)] >= 0.0);
                assert!((p[(i, j)] - q[(i, j)]).abs() <= 1e-12, "shift changed probabilities");
            }
        }
    }

    #[test]
    fn backward_zero_gradients_give_zero_parameter_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = ModelParams::init(2, &[4], 3, &mut rng);
        let inputs = random_inputs(&mut rng, 5, 2);
        let rec = forward(&params, &inputs).unwrap();
        let grads =
            backward(&params, &rec, &Matrix::zeros(5, 3), &Matrix::zeros(5, 4)).unwrap();
        assert!(grads.head_w.is_zero());
        assert!(grads.extractor.iter().all(|l| l.weight.is_zero()));
        assert!(grads.to_flat().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn backward_feature_injection_alone_leaves_head_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = ModelParams::init(2, &[4, 4], 3, &mut rng);
        let inputs = random_inputs(&mut rng, 5, 2);
        let rec = forward(&params, &inputs).unwrap();
        let mut grad_features = Matrix::zeros(5, 4);
        grad_features[(0, 1)] = 1.0;
        grad_features[(3, 2)] = -0.5;
        let grads = backward(&params, &rec, &Matrix::zeros(5, 3), &grad_features).unwrap();
        assert!(grads.head_w.is_zero(), "head weight grads must stay zero");
        assert!(grads.head_b.as_slice().iter().all(|g| *g == 0.0));
        assert!(
            grads.extractor.iter().any(|l| !l.weight.is_zero()),
            "extractor must receive the injected gradient"
        );
    }

    #[test]
    fn backward_matches_central_differences_on_small_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = ModelParams::init(2, &[4], 3, &mut rng);
        let inputs = random_inputs(&mut rng, 6, 2);
        let labels = [0usize, 2, 1, 1, 0, 2];
        let functional = random_inputs(&mut rng, 6, 4);

        // Scalar loss exercising both gradient entry points: cross-entropy on
        // the logits plus a linear functional applied to the features.
        let eval = |p: &ModelParams| -> f64 {
            let rec = forward(p, &inputs).unwrap();
            let probs = softmax(&rec.logits);
            let mut loss = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                loss -= probs[(i, y)].ln();
            }
            loss /= labels.len() as f64;
            for i in 0..6 {
                for j in 0..4 {
                    loss += functional[(i, j)] * rec.features()[(i, j)];
                }
            }
            loss
        };

        let rec = forward(&params, &inputs).unwrap();
        let probs = softmax(&rec.logits);
        let mut grad_logits = probs.clone();
        for (i, &y) in labels.iter().enumerate() {
            grad_logits[(i, y)] -= 1.0;
        }
        let grad_logits = grad_logits.scale(1.0 / labels.len() as f64);
        let analytic = backward(&params, &rec, &grad_logits, &functional).unwrap().to_flat();

        let flat = params.to_flat();
        let mask = kink_exclusion_mask(&params, &rec, 1e-4);
        let eps = 1e-5;
        let mut max_rel = 0.0f64;
        for i in 0..flat.len() {
            if mask[i] {
                continue;
            }
            let mut plus = flat.clone();
            plus[i] += eps;
            let mut minus = flat.clone();
            minus[i] -= eps;
            let num = (eval(&params.from_flat(&plus)) - eval(&params.from_flat(&minus))) / (2.0 * eps);
            let denom = analytic[i].abs().max(num.abs()).max(1e-12);
            max_rel = max_rel.max((num - analytic[i]).abs() / denom);
        }
        assert!(max_rel <= 1e-6, "max relative gradient error {max_rel}");
    }

    #[test]
    fn sgd_step_zero_gradients_leave_parameters_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ModelParams::init(2, &[3], 2, &mut rng);
        let before = params.clone();
        let grads = Gradients::zeros_like(&params);
        let mut state = OptimizerState::new(&params, 0.1, 0.9);
        sgd_step(&mut params, &grads, &mut state);
        assert_eq!(params, before);
    }

    #[test]
    fn sgd_step_without_momentum_is_plain_descent() {
        let mut params = ModelParams {
            extractor: vec![],
            head_w: Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap(),
            head_b: Vector::new(vec![0.5]),
        };
        let mut grads = Gradients::zeros_like(&params);
        grads.head_w[(0, 0)] = 2.0;
        grads.head_b[0] = -1.0;
        let mut state = OptimizerState::new(&params, 0.1, 0.0);
        sgd_step(&mut params, &grads, &mut state);
        assert!((params.head_w[(0, 0)] - 0.8).abs() <= 1e-15);
        assert!((params.head_w[(0, 1)] - 2.0).abs() <= 1e-15);
        assert!((params.head_b[0] - 0.6).abs() <= 1e-15);
    }

    #[test]
    fn sgd_two_steps_with_constant_gradient_unroll_correctly() {
        let mut params = ModelParams {
            extractor: vec![],
            head_w: Matrix::from_rows(&[vec![1.0]]).unwrap(),
            head_b: Vector::new(vec![0.0]),
        };
        let mut grads = Gradients::zeros_like(&params);
        grads.head_w[(0, 0)] = 0.4;
        let lr = 0.05;
        let mut state = OptimizerState::new(&params, lr, 0.9);
        sgd_step(&mut params, &grads, &mut state);
        sgd_step(&mut params, &grads, &mut state);
        let expected = 1.0 - lr * 0.4 * (1.0 + 1.9);
        assert!((params.head_w[(0, 0)] - expected).abs() <= 1e-12);
    }

    #[test]
    fn init_uses_zero_biases_and_fan_in_scaled_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = ModelParams::init(64, &[256], 4, &mut rng);
        assert!(params.extractor[0].bias.as_slice().iter().all(|b| *b == 0.0));
        assert!(params.head_b.as_slice().iter().all(|b| *b == 0.0));
        let w = &params.extractor[0].weight;
        let n = (w.rows() * w.cols()) as f64;
        let mean: f64 = (0..w.rows()).map(|i| w.row(i).iter().sum::<f64>()).sum::<f64>() / n;
        let var: f64 =
            (0..w.rows()).map(|i| w.row(i).iter().map(|x| (x - mean).powi(2)).sum::<f64>()).sum::<f64>()
                / n;
        let expected_sd = (2.0 / 64.0f64).sqrt();
        assert!((var.sqrt() - expected_sd).abs() / expected_sd < 0.2, "weight scale off");
    }

    #[test]
    fn checkpoint_round_trip_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = ModelParams::init(2, &[5, 3], 4, &mut rng);
        let dir = std::env::temp_dir().join(format!("semaug-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.txt");
        save_checkpoint(&params, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, params, "checkpoint must round-trip bit-exactly");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn checkpoint_rejects_malformed_text() {
        let err = parse_checkpoint("not-a-checkpoint\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_checkpoint("semaug-model 1\nextractor 0\nhead 1 2\n1 2 3\n0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }));
    }

    #[test]
    fn kink_mask_excludes_upstream_of_near_zero_preactivations() {
        // Layer 0 feeds a rectifier (two layers total); force a tiny
        // pre-activation there so layer 0 is excluded and layer 1 plus the
        // head stay included.
        let params = ModelParams {
            extractor: vec![
                Layer { weight: Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap(), bias: Vector::zeros(2) },
                Layer { weight: Matrix::identity(2), bias: Vector::zeros(2) },
            ],
            head_w: Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap(),
            head_b: Vector::zeros(1),
        };
        let inputs = Matrix::from_rows(&[vec![1e-6]]).unwrap();
        let rec = forward(&params, &inputs).unwrap();
        let mask = kink_exclusion_mask(&params, &rec, 1e-4);
        let layer0 = 2 + 2;
        let layer1 = 4 + 2;
        assert!(mask[..layer0].iter().all(|m| *m), "layer 0 must be excluded");
        assert!(!mask[layer0..layer0 + layer1].iter().any(|m| *m), "layer 1 must be included");
        assert!(!mask[layer0 + layer1..].iter().any(|m| *m), "head must be included");
        assert_eq!(mask.len(), params.num_params());
    }
}
