//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Samples are rows: a layer maps a batch `A` (`B × in`) to
//! `act(A · Wᵀ + b)` with `W` of shape `out × in`. Weight matrices can be
//! assigned to one of two regularization groups, each with its own strength;
//! biases are never regularized.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::data::{add_noise, derive_seed, seeded_rng, NoiseSpec};
use crate::linalg::{LinalgError, Matrix};
use crate::optim::{AdamState, OptimError, ParamSet};
use crate::regularizer::RegKind;

/// Probabilities are clamped to this floor inside the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("network has no layers")]
    Empty,
    #[error("layer {layer} expects input width {expected}, previous layer produces {found}")]
    BrokenChain {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("softmax is only allowed on the final layer (found on layer {0})")]
    SoftmaxNotFinal(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("divergence: non-finite values in {}", match .layer { Some(k) => format!("layer {k}"), None => "the loss".to_string() })]
    Divergence { layer: Option<usize> },
    #[error("training diverged at step {step}: {source}")]
    TrainingDiverged { step: usize, source: Box<NnError> },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Relu,
    Softmax,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegGroup {
    None,
    Group1,
    Group2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub has_bias: bool,
    pub reg_group: RegGroup,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Empty);
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(NnError::BrokenChain {
                    layer: k + 1,
                    expected: pair[1].in_dim,
                    found: pair[0].out_dim,
                });
            }
        }
        if let Some(k) = layers[..layers.len() - 1]
            .iter()
            .position(|l| l.activation == Activation::Softmax)
        {
            return Err(NnError::SoftmaxNotFinal(k));
        }
        Ok(Self { layers })
    }

    /// `784 → hidden (sigmoid) → 10 (softmax)`; the first weight matrix is in group 1.
    pub fn classifier(input_dim: usize, hidden: usize, classes: usize) -> Self {
        Self::new(vec![
            LayerSpec {
                in_dim: input_dim,
                out_dim: hidden,
                activation: Activation::Sigmoid,
                has_bias: true,
                reg_group: RegGroup::Group1,
            },
            LayerSpec {
                in_dim: hidden,
                out_dim: classes,
                activation: Activation::Softmax,
                has_bias: true,
                reg_group: RegGroup::None,
            },
        ])
        .expect("valid classifier spec")
    }

    /// Encoder `E₁, E₂` and decoder `D₂, D₁` with ReLU everywhere except a
    /// sigmoid output. Outer matrices `E₁, D₁` are group 1, inner `E₂, D₂` group 2.
    pub fn autoencoder(input_dim: usize, outer: usize, code: usize) -> Self {
        let layer = |i, o, activation, reg_group| LayerSpec {
            in_dim: i,
            out_dim: o,
            activation,
            has_bias: true,
            reg_group,
        };
        Self::new(vec![
            layer(input_dim, outer, Activation::Relu, RegGroup::Group1),
            layer(outer, code, Activation::Relu, RegGroup::Group2),
            layer(code, outer, Activation::Relu, RegGroup::Group2),
            layer(outer, input_dim, Activation::Sigmoid, RegGroup::Group1),
        ])
        .expect("valid autoencoder spec")
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }
}

fn weight_name(k: usize) -> String {
    format!("layer{k}.weight")
}

fn bias_name(k: usize) -> String {
    format!("layer{k}.bias")
}

/// Per-layer weights (`out × in`) and optional biases (`1 × out`), stored as
/// a [`ParamSet`] so optimizers can update them directly.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    set: ParamSet,
    layers: usize,
}

impl NetworkParams {
    /// Zero weights and biases shaped for `spec`.
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let mut set = ParamSet::new();
        for (k, l) in spec.layers.iter().enumerate() {
            set.insert(weight_name(k), Matrix::zeros(l.out_dim, l.in_dim));
            if l.has_bias {
                set.insert(bias_name(k), Matrix::zeros(1, l.out_dim));
            }
        }
        Self {
            set,
            layers: spec.layers.len(),
        }
    }

    pub fn weight(&self, k: usize) -> &Matrix {
        self.set.get(&weight_name(k)).expect("layer index in range")
    }

    pub fn weight_mut(&mut self, k: usize) -> &mut Matrix {
        self.set
            .get_mut(&weight_name(k))
            .expect("layer index in range")
    }

    pub fn bias(&self, k: usize) -> Option<&Matrix> {
        self.set.get(&bias_name(k))
    }

    pub fn bias_mut(&mut self, k: usize) -> Option<&mut Matrix> {
        self.set.get_mut(&bias_name(k))
    }

    pub fn num_layers(&self) -> usize {
        self.layers
    }

    pub fn param_set(&self) -> &ParamSet {
        &self.set
    }

    pub fn param_set_mut(&mut self) -> &mut ParamSet {
        &mut self.set
    }

    fn check_spec(&self, spec: &NetworkSpec) -> Result<(), NnError> {
        if self.layers != spec.layers.len() {
            return Err(NnError::Shape(format!(
                "params have {} layers, spec has {}",
                self.layers,
                spec.layers.len()
            )));
        }
        for (k, l) in spec.layers.iter().enumerate() {
            if self.weight(k).shape() != (l.out_dim, l.in_dim) {
                return Err(NnError::Shape(format!(
                    "layer {k} weight is {:?}",
                    self.weight(k).shape()
                )));
            }
            if self.bias(k).is_some() != l.has_bias {
                return Err(NnError::Shape(format!(
                    "layer {k} bias presence differs from spec"
                )));
            }
        }
        Ok(())
    }
}

/// Weights i.i.d. uniform on `[−1/√in, 1/√in)`, biases zero. Layers are filled
/// in order, each weight matrix row by row.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> NetworkParams {
    let mut rng = seeded_rng(seed);
    let mut params = NetworkParams::zeros(spec);
    for (k, l) in spec.layers.iter().enumerate() {
        let bound = 1.0 / (l.in_dim as f64).sqrt();
        let w = params.weight_mut(k);
        for i in 0..l.out_dim {
            for j in 0..l.in_dim {
                w[(i, j)] = bound * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
    }
    params
}

/// Layer inputs and outputs recorded by [`forward`]; `activations[0]` is the
/// batch, `activations[k + 1]` the output of layer `k`.
#[derive(Debug, Clone)]
pub struct Tape {
    pub activations: Vec<Matrix>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for i in 0..z.rows() {
        let row = z.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (j, e) in exps.iter().enumerate() {
            out[(i, j)] = e / total;
        }
    }
    out
}

fn activate(act: Activation, z: Matrix) -> Matrix {
    match act {
        Activation::Sigmoid => z.map(sigmoid),
        Activation::Relu => z.map(|v| v.max(0.0)),
        Activation::Softmax => softmax_rows(&z),
        Activation::Identity => z,
    }
}

/// Gradient with respect to the pre-activation, given the gradient with
/// respect to the activation output `a`.
fn activation_backward(act: Activation, a: &Matrix, da: &Matrix) -> Matrix {
    match act {
        Activation::Sigmoid => a.zip_map(da, |s, g| g * s * (1.0 - s)),
        Activation::Relu => a.zip_map(da, |s, g| if s > 0.0 { g } else { 0.0 }),
        Activation::Identity => da.clone(),
        Activation::Softmax => {
            let mut dz = da.clone();
            for i in 0..a.rows() {
                let dot: f64 = (0..a.cols()).map(|j| a[(i, j)] * da[(i, j)]).sum();
                for j in 0..a.cols() {
                    dz[(i, j)] = a[(i, j)] * (da[(i, j)] - dot);
                }
            }
            dz
        }
    }
}

pub fn forward(
    spec: &NetworkSpec,
    params: &NetworkParams,
    batch: &Matrix,
) -> Result<(Matrix, Tape), NnError> {
    params.check_spec(spec)?;
    if batch.cols() != spec.input_dim() {
        return Err(NnError::Shape(format!(
            "batch has {} columns, network expects {}",
            batch.cols(),
            spec.input_dim()
        )));
    }
    let mut activations = Vec::with_capacity(spec.layers.len() + 1);
    activations.push(batch.clone());
    for (k, l) in spec.layers.iter().enumerate() {
        let input = activations.last().expect("nonempty");
        let mut z = input.matmul_transposed(params.weight(k));
        if let Some(b) = params.bias(k) {
            z = z.add_row_broadcast(b);
        }
        activations.push(activate(l.activation, z));
    }
    let output = activations.last().expect("nonempty").clone();
    Ok((output, Tape { activations }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean over the batch of `−Σ y log(max(p, 1e-12))`.
    CrossEntropy,
    /// Mean squared error over the batch and output coordinates.
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Strength applied to every group-1 weight matrix.
    pub lambda1: f64,
    /// Strength applied to every group-2 weight matrix.
    pub lambda2: f64,
    pub reg_kind: RegKind,
}

impl LossConfig {
    pub fn unregularized(kind: LossKind) -> Self {
        Self {
            kind,
            lambda1: 0.0,
            lambda2: 0.0,
            reg_kind: RegKind::None,
        }
    }

    fn lambda_for(&self, group: RegGroup) -> f64 {
        match group {
            RegGroup::None => 0.0,
            RegGroup::Group1 => self.lambda1,
            RegGroup::Group2 => self.lambda2,
        }
    }
}

/// Data term and its gradient with respect to the network output.
fn data_loss(kind: LossKind, output: &Matrix, targets: &Matrix) -> (f64, Matrix) {
    let (b, d) = output.shape();
    match kind {
        LossKind::CrossEntropy => {
            let inv_b = 1.0 / b as f64;
            let mut loss = 0.0;
            let grad = output.zip_map(targets, |p, y| {
                if y == 0.0 {
                    return 0.0;
                }
                loss -= y * p.max(LOG_FLOOR).ln();
                if p > LOG_FLOOR {
                    -y / p * inv_b
                } else {
                    0.0
                }
            });
            (loss * inv_b, grad)
        }
        LossKind::L2 => {
            let inv = 1.0 / (b * d) as f64;
            let diff = output - targets;
            (diff.sum_of_squares() * inv, diff.scale(2.0 * inv))
        }
    }
}

fn find_divergence(tape: &Tape) -> NnError {
    let layer = tape.activations[1..].iter().position(|a| !a.is_finite());
    NnError::Divergence { layer }
}

/// Regularized loss and gradients for every parameter.
///
/// The loss is the data term plus `λ_g · penalty(W)` for each weight matrix in
/// group `g`; the weight gradient receives `λ_g · ∇penalty(W)` (canonical
/// subgradient when the largest singular value is repeated).
pub fn loss_and_grads(
    spec: &NetworkSpec,
    params: &NetworkParams,
    batch: &Matrix,
    targets: &Matrix,
    cfg: &LossConfig,
) -> Result<(f64, NetworkParams), NnError> {
    let (output, tape) = forward(spec, params, batch)?;
    if targets.shape() != output.shape() {
        return Err(NnError::Shape(format!(
            "targets are {:?}, output is {:?}",
            targets.shape(),
            output.shape()
        )));
    }
    let (mut loss, mut upstream) = data_loss(cfg.kind, &output, targets);
    if !loss.is_finite() {
        return Err(find_divergence(&tape));
    }

    let mut grads = NetworkParams::zeros(spec);
    for (k, l) in spec.layers.iter().enumerate().rev() {
        let a_out = &tape.activations[k + 1];
        let a_in = &tape.activations[k];
        let dz = activation_backward(l.activation, a_out, &upstream);
        *grads.weight_mut(k) = dz.transposed_matmul(a_in);
        if let Some(db) = grads.bias_mut(k) {
            *db = dz.column_sums();
        }
        if k > 0 {
            upstream = dz.matmul(params.weight(k));
        }
    }

    if cfg.reg_kind != RegKind::None {
        for (k, l) in spec.layers.iter().enumerate() {
            let lambda = cfg.lambda_for(l.reg_group);
            if lambda == 0.0 {
                continue;
            }
            let w = params.weight(k);
            let (value, g) = cfg.reg_kind.value_and_gradient(w)?;
            loss += lambda * value;
            grads.weight_mut(k).add_scaled_in_place(lambda, &g);
        }
    }
    if !loss.is_finite() {
        return Err(NnError::Divergence { layer: None });
    }
    Ok((loss, grads))
}

const EVAL_CHUNK: usize = 1000;

fn forward_chunked(
    spec: &NetworkSpec,
    params: &NetworkParams,
    inputs: &Matrix,
    mut f: impl FnMut(usize, &Matrix),
) -> Result<(), NnError> {
    let n = inputs.rows();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let (out, _) = forward(spec, params, &inputs.select_rows(&idx))?;
        f(start, &out);
        start = end;
    }
    Ok(())
}

/// Fraction of samples whose argmax output (lowest index on ties) equals the label.
pub fn evaluate_classifier(
    spec: &NetworkSpec,
    params: &NetworkParams,
    images: &Matrix,
    labels: &[u8],
) -> Result<f64, NnError> {
    if images.rows() != labels.len() {
        return Err(NnError::Shape(format!(
            "{} images but {} labels",
            images.rows(),
            labels.len()
        )));
    }
    let mut correct = 0usize;
    forward_chunked(spec, params, images, |start, out| {
        for i in 0..out.rows() {
            let row = out.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if best == labels[start + i] as usize {
                correct += 1;
            }
        }
    })?;
    Ok(correct as f64 / labels.len() as f64)
}

/// Mean squared error between the reconstruction of `noisy` and `clean`.
pub fn evaluate_reconstruction(
    spec: &NetworkSpec,
    params: &NetworkParams,
    noisy: &Matrix,
    clean: &Matrix,
) -> Result<f64, NnError> {
    if noisy.shape() != clean.shape() {
        return Err(NnError::Shape(format!(
            "noisy {:?} vs clean {:?}",
            noisy.shape(),
            clean.shape()
        )));
    }
    let mut total = 0.0;
    forward_chunked(spec, params, noisy, |start, out| {
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                let d = out[(i, j)] - clean[(start + i, j)];
                total += d * d;
            }
        }
    })?;
    Ok(total / (clean.rows() * clean.cols()) as f64)
}

/// Mean squared difference of two equally shaped matrices.
pub fn mse(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).sum_of_squares() / (a.rows() * a.cols()) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Seeds shuffling and (if enabled) input noise.
    pub seed: u64,
    /// When set, inputs are corrupted with fresh Gaussian noise at this SNR
    /// every epoch while targets stay clean.
    pub input_snr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    /// Mean step loss per epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainHistory {
    pub fn steps(&self) -> usize {
        self.step_losses.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
}

impl fmt::Display for EpochSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {} mean loss {:.6}",
            self.epoch + 1,
            self.mean_loss
        )
    }
}

/// Mini-batch Adam training. Batches are drawn from a fresh seeded
/// permutation each epoch; the last partial batch is kept.
pub fn train(
    spec: &NetworkSpec,
    params: &mut NetworkParams,
    inputs: &Matrix,
    targets: &Matrix,
    cfg: &LossConfig,
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(EpochSummary),
) -> Result<TrainHistory, NnError> {
    if inputs.rows() != targets.rows() {
        return Err(NnError::Shape(format!(
            "{} inputs but {} targets",
            inputs.rows(),
            targets.rows()
        )));
    }
    if tc.batch_size == 0 {
        return Err(NnError::Shape("batch size must be positive".into()));
    }
    let mut adam = AdamState::new(params.param_set(), tc.learning_rate)?;
    let n = inputs.rows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainHistory {
        step_losses: Vec::new(),
        epoch_losses: Vec::with_capacity(tc.epochs),
    };

    for epoch in 0..tc.epochs {
        let noisy;
        let epoch_inputs = match tc.input_snr {
            Some(snr) => {
                noisy = add_noise(
                    inputs,
                    NoiseSpec {
                        snr,
                        seed: derive_seed(tc.seed, 2 * epoch as u64 + 1),
                    },
                );
                &noisy
            }
            None => inputs,
        };
        order.shuffle(&mut seeded_rng(derive_seed(tc.seed, 2 * epoch as u64)));
        let mut sum = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(tc.batch_size) {
            let x = epoch_inputs.select_rows(chunk);
            let y = targets.select_rows(chunk);
            let step = history.step_losses.len() + 1;
            let (loss, grads) = loss_and_grads(spec, params, &x, &y, cfg).map_err(|e| match e {
                NnError::Divergence { .. } => NnError::TrainingDiverged {
                    step,
                    source: Box::new(e),
                },
                other => other,
            })?;
            adam.step(params.param_set_mut(), grads.param_set())?;
            history.step_losses.push(loss);
            sum += loss;
            count += 1;
        }
        let mean_loss = sum / count as f64;
        history.epoch_losses.push(mean_loss);
        on_epoch(EpochSummary { epoch, mean_loss });
    }
    Ok(history)
}
