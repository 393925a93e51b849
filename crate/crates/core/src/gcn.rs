//! From-scratch graph convolutional network: sparse propagation forward
//! pass, hand-derived backward pass, Adam optimizer, inverted dropout, and
//! a full-graph training loop with early stopping.
//!
//! Layer rule: H_{l+1} = act(A_hat * drop(H_l) * W_l + b_l) with ReLU on
//! hidden layers and a linear output layer. Weight decay applies to weight
//! matrices only.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::artifact::{header_strings, ArtifactReader, ArtifactWriter};
use crate::error::{Error, Result};
use crate::features::NodeDataset;
use crate::graph::NormalizedAdjacency;
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnConfig {
    pub hidden_dims: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        GcnConfig {
            hidden_dims: vec![128],
            dropout: 0.5,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            max_epochs: 500,
            patience: 50,
            seed: 42,
        }
    }
}

impl GcnConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Domain(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Domain("learning rate must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Domain("patience must be at least 1".into()));
        }
        Ok(())
    }
}

/// One dense layer: weight (in_dim x out_dim) and bias (out_dim).
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnParams {
    pub layers: Vec<DenseLayer>,
}

impl GcnParams {
    /// Glorot-uniform weights, zero biases, drawn from the given generator.
    pub fn glorot(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data: Vec<f64> = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-limit..limit))
                    .collect();
                DenseLayer {
                    weight: Matrix::from_vec(fan_in, fan_out, data),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        GcnParams { layers }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].weight.rows()];
        dims.extend(self.layers.iter().map(|l| l.weight.cols()));
        dims
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }
}

/// Gradients with the same shapes as the parameters.
#[derive(Clone, Debug)]
pub struct GcnGrads {
    pub layers: Vec<DenseLayer>,
}

/// Dropout behaviour for a forward pass.
pub enum ForwardMode<'a> {
    /// No dropout; inference and evaluation.
    Eval,
    /// Inverted dropout with keep scaling, masks drawn from the generator.
    Train {
        dropout: f64,
        rng: &'a mut ChaCha8Rng,
    },
}

/// Intermediates needed by the backward pass.
pub struct ForwardCache {
    /// Input to layer l after dropout and propagation: P_l = A_hat * drop(H_l).
    propagated: Vec<Matrix>,
    /// Pre-activations Z_l = P_l * W_l + b_l.
    pre_activations: Vec<Matrix>,
    /// Dropout masks (scaled), one per layer; `None` when dropout was off.
    masks: Vec<Option<Matrix>>,
}

fn apply_dropout(h: &Matrix, mode: &mut ForwardMode) -> (Matrix, Option<Matrix>) {
    match mode {
        ForwardMode::Eval => (h.clone(), None),
        ForwardMode::Train { dropout, rng } => {
            if *dropout == 0.0 {
                return (h.clone(), None);
            }
            let keep = 1.0 - *dropout;
            let scale = 1.0 / keep;
            let mut mask = Matrix::zeros(h.rows(), h.cols());
            for v in mask.data_mut() {
                if rng.gen::<f64>() < keep {
                    *v = scale;
                }
            }
            let mut dropped = h.clone();
            for (x, m) in dropped.data_mut().iter_mut().zip(mask.data()) {
                *x *= m;
            }
            (dropped, Some(mask))
        }
    }
}

/// Forward pass; returns logits and the cache for backprop.
pub fn gcn_forward(
    params: &GcnParams,
    adj: &NormalizedAdjacency,
    x: &Matrix,
    mode: &mut ForwardMode,
) -> Result<(Matrix, ForwardCache)> {
    if x.rows() != adj.n {
        return Err(Error::Domain(format!(
            "feature rows {} do not match adjacency size {}",
            x.rows(),
            adj.n
        )));
    }
    if x.cols() != params.layers[0].weight.rows() {
        return Err(Error::Domain(format!(
            "feature dim {} does not match first layer input {}",
            x.cols(),
            params.layers[0].weight.rows()
        )));
    }
    let n_layers = params.layers.len();
    let mut cache = ForwardCache {
        propagated: Vec::with_capacity(n_layers),
        pre_activations: Vec::with_capacity(n_layers),
        masks: Vec::with_capacity(n_layers),
    };
    let mut h = x.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let (dropped, mask) = apply_dropout(&h, mode);
        let propagated = adj.mul_dense(&dropped);
        let mut z = propagated.matmul(&layer.weight);
        z.add_row_vector(&layer.bias);

        cache.masks.push(mask);
        cache.propagated.push(propagated);
        cache.pre_activations.push(z.clone());

        if l + 1 < n_layers {
            z.map_inplace(|v| v.max(0.0));
        }
        h = z;
    }
    Ok((h, cache))
}

/// Mean negative log-softmax over masked nodes, max-subtracted for
/// stability. Also returns the full softmax probability matrix.
pub fn masked_cross_entropy(
    logits: &Matrix,
    labels: &[u16],
    mask: &[bool],
) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() || logits.rows() != mask.len() {
        return Err(Error::Domain(
            "logits, labels, and mask lengths disagree".into(),
        ));
    }
    let n_masked = mask.iter().filter(|&&m| m).count();
    if n_masked == 0 {
        return Err(Error::Domain(
            "cross entropy needs at least one masked node".into(),
        ));
    }
    let mut probs = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, &z) in row.iter().enumerate() {
            let e = (z - max).exp();
            probs.set(i, j, e);
            sum += e;
        }
        for j in 0..logits.cols() {
            probs.set(i, j, probs.get(i, j) / sum);
        }
        if mask[i] {
            let z_label = row[labels[i] as usize];
            loss += max + sum.ln() - z_label;
        }
    }
    Ok((loss / n_masked as f64, probs))
}

/// Analytic gradients of masked cross-entropy plus L2 weight decay
/// (weights only), flowing through the propagation products, ReLU gates,
/// and dropout masks recorded in the cache.
pub fn gcn_backward(
    cache: &ForwardCache,
    params: &GcnParams,
    adj: &NormalizedAdjacency,
    labels: &[u16],
    mask: &[bool],
    weight_decay: f64,
) -> Result<GcnGrads> {
    let n_layers = params.layers.len();
    if cache.pre_activations.len() != n_layers {
        return Err(Error::Domain(
            "forward cache does not match parameter shapes".into(),
        ));
    }
    let logits = &cache.pre_activations[n_layers - 1];
    let n_masked = mask.iter().filter(|&&m| m).count();
    if n_masked == 0 {
        return Err(Error::Domain(
            "backward needs at least one masked node".into(),
        ));
    }

    // dL/dZ_last = (softmax - onehot) / n_masked on masked rows, 0 elsewhere
    let (_, probs) = masked_cross_entropy(logits, labels, mask)?;
    let mut dz = Matrix::zeros(logits.rows(), logits.cols());
    let inv = 1.0 / n_masked as f64;
    for i in 0..logits.rows() {
        if !mask[i] {
            continue;
        }
        for j in 0..logits.cols() {
            let delta = if j == labels[i] as usize { 1.0 } else { 0.0 };
            dz.set(i, j, (probs.get(i, j) - delta) * inv);
        }
    }

    let mut grads: Vec<DenseLayer> = params
        .layers
        .iter()
        .map(|l| DenseLayer {
            weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
            bias: vec![0.0; l.bias.len()],
        })
        .collect();

    for l in (0..n_layers).rev() {
        // dW = P_l^T dZ + wd * W ; db = column sums of dZ
        let mut dw = cache.propagated[l].tmatmul(&dz);
        if weight_decay != 0.0 {
            for (g, w) in dw.data_mut().iter_mut().zip(params.layers[l].weight.data()) {
                *g += weight_decay * w;
            }
        }
        grads[l].weight = dw;
        grads[l].bias = dz.column_sums();

        if l == 0 {
            break;
        }
        // dP = dZ W^T ; dDropped = A_hat^T dP = A_hat dP (symmetric)
        let dp = dz.matmul_nt(&params.layers[l].weight);
        let mut dh = adj.mul_dense(&dp);
        if let Some(mask_mat) = &cache.masks[l] {
            for (g, m) in dh.data_mut().iter_mut().zip(mask_mat.data()) {
                *g *= m;
            }
        }
        // through the previous layer's ReLU gate
        for (g, z) in dh
            .data_mut()
            .iter_mut()
            .zip(cache.pre_activations[l - 1].data())
        {
            if *z <= 0.0 {
                *g = 0.0;
            }
        }
        dz = dh;
    }
    Ok(GcnGrads { layers: grads })
}

/// Adam moments, one pair of tensors per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<DenseLayer>,
    v: Vec<DenseLayer>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &GcnParams) -> Self {
        let zeros = |p: &GcnParams| {
            p.layers
                .iter()
                .map(|l| DenseLayer {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect()
        };
        AdamState {
            m: zeros(params),
            v: zeros(params),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

fn adam_update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    state_t: u64,
    b1: f64,
    b2: f64,
    eps: f64,
) {
    let bc1 = 1.0 - b1.powi(state_t as i32);
    let bc2 = 1.0 - b2.powi(state_t as i32);
    for i in 0..theta.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
        v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One Adam step with bias correction over every parameter tensor.
pub fn adam_step(params: &mut GcnParams, grads: &GcnGrads, state: &mut AdamState, lr: f64) {
    state.t += 1;
    let (b1, b2, eps, t) = (state.beta1, state.beta2, state.eps, state.t);
    for (l, layer) in params.layers.iter_mut().enumerate() {
        adam_update(
            layer.weight.data_mut(),
            grads.layers[l].weight.data(),
            state.m[l].weight.data_mut(),
            state.v[l].weight.data_mut(),
            lr,
            t,
            b1,
            b2,
            eps,
        );
        adam_update(
            &mut layer.bias,
            &grads.layers[l].bias,
            &mut state.m[l].bias,
            &mut state.v[l].bias,
            lr,
            t,
            b1,
            b2,
            eps,
        );
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

impl TrainHistory {
    /// CSV export: epoch, train_loss, val_loss, train_acc, val_acc.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,train_acc,val_acc\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.train_loss, e.val_loss, e.train_acc, e.val_acc
            ));
        }
        out
    }
}

fn masked_accuracy(logits: &Matrix, labels: &[u16], mask: &[bool]) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for i in 0..logits.rows() {
        if !mask[i] {
            continue;
        }
        total += 1;
        let row = logits.row(i);
        let pred = argmax_ties_low(row);
        if pred == labels[i] as usize {
            correct += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

/// Index of the row maximum; ties resolve to the lowest index.
pub fn argmax_ties_low(row: &[f64]) -> usize {
    let mut best = 0usize;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Full-graph training with early stopping on validation loss.
///
/// Weights are Glorot-initialized from `config.seed`; the parameters of the
/// best validation epoch are returned. Deterministic given the seed.
pub fn train(
    dataset: &NodeDataset,
    adj: &NormalizedAdjacency,
    config: &GcnConfig,
) -> Result<(GcnParams, TrainHistory)> {
    config.validate()?;
    let masks = dataset.masks()?;
    let n_classes = dataset.n_classes();
    if n_classes < 2 {
        return Err(Error::Domain(
            "training requires at least two classes".into(),
        ));
    }
    if !masks.train.iter().any(|&b| b) {
        return Err(Error::Domain("training mask is empty".into()));
    }
    if !masks.val.iter().any(|&b| b) {
        return Err(Error::Domain("validation mask is empty".into()));
    }

    let mut dims = vec![dataset.features.cols()];
    dims.extend(&config.hidden_dims);
    dims.push(n_classes);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = GcnParams::glorot(&dims, &mut rng);
    let mut adam = AdamState::new(&params);

    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_epoch: 0,
    };
    let mut best_val = f64::INFINITY;
    let mut best_params = params.clone();
    let mut epochs_since_best = 0usize;

    for epoch in 1..=config.max_epochs {
        let mut mode = ForwardMode::Train {
            dropout: config.dropout,
            rng: &mut rng,
        };
        let (logits, cache) = gcn_forward(&params, adj, &dataset.features, &mut mode)?;
        let (step_loss, _) = masked_cross_entropy(&logits, &dataset.labels, &masks.train)?;
        if !step_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss diverged at epoch {epoch}"
            )));
        }
        let grads = gcn_backward(
            &cache,
            &params,
            adj,
            &dataset.labels,
            &masks.train,
            config.weight_decay,
        )?;
        adam_step(&mut params, &grads, &mut adam, config.learning_rate);

        // post-update evaluation with dropout off
        let (eval_logits, _) =
            gcn_forward(&params, adj, &dataset.features, &mut ForwardMode::Eval)?;
        let (train_loss, _) = masked_cross_entropy(&eval_logits, &dataset.labels, &masks.train)?;
        let (val_loss, _) = masked_cross_entropy(&eval_logits, &dataset.labels, &masks.val)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "evaluation loss diverged at epoch {epoch}"
            )));
        }
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            train_acc: masked_accuracy(&eval_logits, &dataset.labels, &masks.train),
            val_acc: masked_accuracy(&eval_logits, &dataset.labels, &masks.val),
        });

        if val_loss < best_val {
            best_val = val_loss;
            best_params = params.clone();
            history.best_epoch = epoch;
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
        }
        history.stopped_epoch = epoch;
        if epochs_since_best >= config.patience {
            break;
        }
    }
    Ok((best_params, history))
}

/// Hard class predictions from a probability (or logit) matrix.
pub fn predictions_from_proba(proba: &Matrix) -> Vec<u16> {
    (0..proba.rows())
        .map(|i| argmax_ties_low(proba.row(i)) as u16)
        .collect()
}

/// Evaluation-mode forward plus row-wise softmax.
pub fn predict_proba(params: &GcnParams, adj: &NormalizedAdjacency, x: &Matrix) -> Result<Matrix> {
    let (logits, _) = gcn_forward(params, adj, x, &mut ForwardMode::Eval)?;
    let mut probs = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, &z) in row.iter().enumerate() {
            let e = (z - max).exp();
            probs.set(i, j, e);
            sum += e;
        }
        for j in 0..logits.cols() {
            probs.set(i, j, probs.get(i, j) / sum);
        }
    }
    Ok(probs)
}

/// Model checkpoint: JSON header (config, classes, dims) + f64 tensors.
pub fn save_checkpoint(
    path: &Path,
    params: &GcnParams,
    config: &GcnConfig,
    class_names: &[String],
    mut meta: Value,
) -> Result<()> {
    meta["config"] = serde_json::to_value(config).map_err(|e| Error::Artifact(e.to_string()))?;
    meta["class_names"] = Value::from(class_names.to_vec());
    meta["dims"] = Value::from(params.dims().iter().map(|&d| d as u64).collect::<Vec<_>>());
    let mut w = ArtifactWriter::create(path, "checkpoint", meta)?;
    for layer in &params.layers {
        w.write_f64s(layer.weight.data())?;
        w.write_f64s(&layer.bias)?;
    }
    w.finish()
}

pub fn load_checkpoint(path: &Path) -> Result<(GcnParams, GcnConfig, Vec<String>, Value)> {
    let mut r = ArtifactReader::open(path, "checkpoint")?;
    let config: GcnConfig = serde_json::from_value(r.header["config"].clone())
        .map_err(|e| Error::Artifact(format!("bad config in checkpoint: {e}")))?;
    let class_names = header_strings(&r.header, "class_names")?;
    let dims: Vec<usize> = r.header["dims"]
        .as_array()
        .ok_or_else(|| Error::Artifact("checkpoint missing dims".into()))?
        .iter()
        .map(|v| v.as_u64().unwrap_or(0) as usize)
        .collect();
    let mut layers = Vec::with_capacity(dims.len().saturating_sub(1));
    for w in dims.windows(2) {
        let weight = Matrix::from_vec(w[0], w[1], r.read_f64s(w[0] * w[1])?);
        let bias = r.read_f64s(w[1])?;
        layers.push(DenseLayer { weight, bias });
    }
    let header = r.header.clone();
    Ok((GcnParams { layers }, config, class_names, header))
}
