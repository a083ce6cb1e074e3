//! Dense feedforward network with an optional channel layer at the split.
//!
//! The learnable layers form the baseline network. The augmented network
//! inserts the channel layer at position `split_index` (1-based, counted in
//! the augmented network), i.e. after `split_index - 1` learnable layers. With
//! `split_index == 1` the channel acts on the raw input, with
//! `split_index == L + 1` on the logits.
//!
//! Parameters live in one flat vector, layer-major: for each layer the weight
//! matrix (`out_dim x in_dim`, row-major) followed by the bias (`out_dim`).

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSample, ChannelSpec};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseLayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawNetworkSpec", into = "RawNetworkSpec")]
pub struct NetworkSpec {
    layers: Vec<DenseLayerSpec>,
    split_index: usize,
}

#[derive(Serialize, Deserialize)]
struct RawNetworkSpec {
    layers: Vec<DenseLayerSpec>,
    split_index: usize,
}

impl TryFrom<RawNetworkSpec> for NetworkSpec {
    type Error = Error;

    fn try_from(raw: RawNetworkSpec) -> Result<Self> {
        NetworkSpec::new(raw.layers, raw.split_index)
    }
}

impl From<NetworkSpec> for RawNetworkSpec {
    fn from(spec: NetworkSpec) -> Self {
        RawNetworkSpec {
            layers: spec.layers,
            split_index: spec.split_index,
        }
    }
}

impl NetworkSpec {
    pub fn new(layers: Vec<DenseLayerSpec>, split_index: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::invalid(format!("layer {i} has a zero dimension")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} features but layer {} expects {}",
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        if split_index < 1 || split_index > layers.len() + 1 {
            return Err(Error::invalid(format!(
                "split index {split_index} outside 1..={}",
                layers.len() + 1
            )));
        }
        Ok(NetworkSpec {
            layers,
            split_index,
        })
    }

    /// Multilayer perceptron over `dims` with ReLU hidden layers and identity output.
    pub fn mlp(dims: &[usize], split_index: usize) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("an MLP needs at least input and output sizes"));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| DenseLayerSpec {
                in_dim: dims[i],
                out_dim: dims[i + 1],
                activation: if i + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            })
            .collect();
        NetworkSpec::new(layers, split_index)
    }

    pub fn layers(&self) -> &[DenseLayerSpec] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Position `l0` of the channel layer in the augmented network.
    pub fn split_index(&self) -> usize {
        self.split_index
    }

    /// Number of learnable layers in front of the channel.
    pub fn layers_before_split(&self) -> usize {
        self.split_index - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Feature dimension `d` carried over the channel.
    pub fn split_dim(&self) -> usize {
        match self.layers_before_split() {
            0 => self.input_dim(),
            k => self.layers[k - 1].out_dim,
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.in_dim * l.out_dim + l.out_dim)
            .sum()
    }

    /// Offset of layer `l` in the flat parameter vector.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.layers[..l]
            .iter()
            .map(|l| l.in_dim * l.out_dim + l.out_dim)
            .sum()
    }

    /// Checks that a channel fits the split point.
    pub fn check_channel(&self, channel: &ChannelSpec) -> Result<()> {
        channel.validate()?;
        if channel.d != self.split_dim() {
            return Err(Error::Shape(format!(
                "channel dimension {} does not match split feature dimension {}",
                channel.d,
                self.split_dim()
            )));
        }
        Ok(())
    }
}

/// Flat learnable parameters of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
}

/// Gradient of a scalar w.r.t. a [`ParamVector`], same layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        ParamVector {
            values: vec![0.0; spec.num_params()],
        }
    }

    pub fn from_vec(spec: &NetworkSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.num_params() {
            return Err(Error::Shape(format!(
                "network has {} parameters, got {}",
                spec.num_params(),
                values.len()
            )));
        }
        Ok(ParamVector { values })
    }

    /// Gaussian weights with standard deviation `sigma`, zero biases.
    pub fn init(spec: &NetworkSpec, sigma: f64, rng: &mut Rng) -> Self {
        let mut p = ParamVector::zeros(spec);
        for l in 0..spec.num_layers() {
            let (mut w, _) = layer_mut(spec, &mut p.values, l);
            w.mapv_inplace(|_| sigma * rng.normal());
        }
        p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layer<'a>(&'a self, spec: &NetworkSpec, l: usize) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        layer_view(spec, &self.values, l)
    }

    /// Per-layer `(weights, bias)` copies.
    pub fn unflatten(&self, spec: &NetworkSpec) -> Vec<(Array2<f64>, Array1<f64>)> {
        (0..spec.num_layers())
            .map(|l| {
                let (w, b) = self.layer(spec, l);
                (w.to_owned(), b.to_owned())
            })
            .collect()
    }

    pub fn flatten(spec: &NetworkSpec, layers: &[(Array2<f64>, Array1<f64>)]) -> Result<Self> {
        if layers.len() != spec.num_layers() {
            return Err(Error::Shape(format!(
                "expected {} layers, got {}",
                spec.num_layers(),
                layers.len()
            )));
        }
        let mut values = Vec::with_capacity(spec.num_params());
        for (l, ((w, b), ls)) in layers.iter().zip(spec.layers()).enumerate() {
            if w.dim() != (ls.out_dim, ls.in_dim) || b.len() != ls.out_dim {
                return Err(Error::Shape(format!("layer {l} has the wrong shape")));
            }
            values.extend(w.iter());
            values.extend(b.iter());
        }
        Ok(ParamVector { values })
    }

    pub fn norm(&self) -> f64 {
        l2(&self.values)
    }
}

impl Gradients {
    pub fn zeros(len: usize) -> Self {
        Gradients {
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn layer_range(spec: &NetworkSpec, l: usize) -> (usize, usize, usize) {
    let start = spec.layer_offset(l);
    let ls = spec.layers[l];
    let w_end = start + ls.in_dim * ls.out_dim;
    (start, w_end, w_end + ls.out_dim)
}

fn layer_view<'a>(spec: &NetworkSpec, values: &'a [f64], l: usize) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
    let ls = spec.layers[l];
    let (start, w_end, end) = layer_range(spec, l);
    let w = ArrayView2::from_shape((ls.out_dim, ls.in_dim), &values[start..w_end])
        .expect("layer slice matches its shape");
    let b = ArrayView1::from(&values[w_end..end]);
    (w, b)
}

fn layer_mut<'a>(
    spec: &NetworkSpec,
    values: &'a mut [f64],
    l: usize,
) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
    let ls = spec.layers[l];
    let (start, w_end, end) = layer_range(spec, l);
    let (w, b) = values[start..end].split_at_mut(w_end - start);
    let w = ArrayViewMut2::from_shape((ls.out_dim, ls.in_dim), w).expect("layer slice matches its shape");
    (w, ArrayViewMut1::from(b))
}

/// A labelled mini-batch: one input row per label.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("batch is empty"));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// What happens to the feature at the split point.
#[derive(Clone, Copy)]
pub(crate) enum SplitOp<'a> {
    None,
    Shared(&'a ChannelSample),
    PerRow(&'a [ChannelSample]),
    /// Adds a fixed perturbation matrix; used for finite-difference curvature probes.
    Additive(ArrayView2<'a, f64>),
}

impl SplitOp<'_> {
    fn is_none(&self) -> bool {
        matches!(self, SplitOp::None)
    }

    fn check(&self, rows: usize, d: usize) -> Result<()> {
        match self {
            SplitOp::None => Ok(()),
            SplitOp::Shared(c) => check_sample_dim(c, d),
            SplitOp::PerRow(cs) => {
                if cs.len() != rows {
                    return Err(Error::Shape(format!(
                        "{} channel samples for {rows} rows",
                        cs.len()
                    )));
                }
                cs.iter().try_for_each(|c| check_sample_dim(c, d))
            }
            SplitOp::Additive(a) => {
                if a.dim() != (rows, d) {
                    return Err(Error::Shape("perturbation shape mismatch".into()));
                }
                Ok(())
            }
        }
    }

    fn apply(&self, h: &mut Array2<f64>) -> Result<()> {
        match self {
            SplitOp::None => {}
            SplitOp::Shared(c) => {
                if !matches!(c, ChannelSample::Identity { .. }) {
                    for mut row in h.rows_mut() {
                        c.apply_in_place(row.as_slice_mut().expect("standard layout"))?;
                    }
                }
            }
            SplitOp::PerRow(cs) => {
                for (mut row, c) in h.rows_mut().into_iter().zip(cs.iter()) {
                    c.apply_in_place(row.as_slice_mut().expect("standard layout"))?;
                }
            }
            SplitOp::Additive(a) => *h += a,
        }
        Ok(())
    }

    fn backprop(&self, input: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            SplitOp::None | SplitOp::Additive(_) => {}
            SplitOp::Shared(c) => {
                for (x, mut g) in input.rows().into_iter().zip(grad.rows_mut()) {
                    c.backprop_in_place(x.as_slice().expect("standard layout"), g.as_slice_mut().expect("standard layout"));
                }
            }
            SplitOp::PerRow(cs) => {
                for ((x, mut g), c) in input.rows().into_iter().zip(grad.rows_mut()).zip(cs.iter()) {
                    c.backprop_in_place(x.as_slice().expect("standard layout"), g.as_slice_mut().expect("standard layout"));
                }
            }
        }
    }
}

fn check_sample_dim(c: &ChannelSample, d: usize) -> Result<()> {
    if c.dim() != d {
        return Err(Error::Shape(format!(
            "channel of dimension {} at a split of dimension {d}",
            c.dim()
        )));
    }
    Ok(())
}

/// Activations recorded by a forward pass, consumed by backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input of each learnable layer (after the channel where applicable).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each learnable layer.
    pre: Vec<Array2<f64>>,
    /// Feature entering the channel, when a channel was applied.
    split_input: Option<Array2<f64>>,
}

impl ForwardCache {
    /// Feature entering the channel layer, if one was applied.
    pub fn split_feature(&self) -> Option<Tensor> {
        self.split_input.clone().map(Tensor::from_array)
    }

    /// Pre-activation of learnable layer `l`.
    pub fn pre_activation(&self, l: usize) -> Tensor {
        Tensor::from_array(self.pre[l].clone())
    }
}

fn affine(spec: &NetworkSpec, params: &ParamVector, l: usize, h: &Array2<f64>) -> Array2<f64> {
    let (w, b) = params.layer(spec, l);
    let mut z = h.dot(&w.t());
    z += &b;
    z
}

fn activate(act: Activation, z: &Array2<f64>) -> Array2<f64> {
    match act {
        Activation::Relu => z.mapv(|v| if v > 0.0 { v } else { 0.0 }),
        Activation::Identity => z.clone(),
    }
}

fn ensure_finite(a: &Array2<f64>, layer: usize) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric {
            context: format!("in the output of layer {layer}"),
        })
    }
}

fn check_input(spec: &NetworkSpec, x: &ArrayView2<'_, f64>) -> Result<()> {
    if x.ncols() != spec.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} features, network expects {}",
            x.ncols(),
            spec.input_dim()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::invalid("empty input"));
    }
    Ok(())
}

fn check_params(spec: &NetworkSpec, params: &ParamVector) -> Result<()> {
    if params.len() != spec.num_params() {
        return Err(Error::Shape(format!(
            "network has {} parameters, got {}",
            spec.num_params(),
            params.len()
        )));
    }
    Ok(())
}

pub(crate) fn forward_op(
    spec: &NetworkSpec,
    params: &ParamVector,
    x: ArrayView2<'_, f64>,
    op: SplitOp<'_>,
    record: bool,
) -> Result<(Array2<f64>, Option<ForwardCache>)> {
    check_input(spec, &x)?;
    check_params(spec, params)?;
    op.check(x.nrows(), spec.split_dim())?;

    let split = spec.layers_before_split();
    let mut inputs = Vec::new();
    let mut pre = Vec::new();
    let mut split_input = None;
    let mut h = x.to_owned();
    for (l, ls) in spec.layers().iter().enumerate() {
        if l == split && !op.is_none() {
            if record {
                split_input = Some(h.clone());
            }
            op.apply(&mut h)?;
        }
        let z = affine(spec, params, l, &h);
        ensure_finite(&z, l)?;
        let a = activate(ls.activation, &z);
        if record {
            inputs.push(h);
            pre.push(z);
        }
        h = a;
    }
    if split == spec.num_layers() && !op.is_none() {
        if record {
            split_input = Some(h.clone());
        }
        op.apply(&mut h)?;
        ensure_finite(&h, spec.num_layers())?;
    }
    let cache = record.then_some(ForwardCache {
        inputs,
        pre,
        split_input,
    });
    Ok((h, cache))
}

/// Runs the augmented network on `input` (one row per sample).
///
/// With `channel` present every row passes through that same channel sample.
pub fn forward(
    spec: &NetworkSpec,
    params: &ParamVector,
    input: &Tensor,
    channel: Option<&ChannelSample>,
) -> Result<(Tensor, ForwardCache)> {
    let op = channel.map_or(SplitOp::None, SplitOp::Shared);
    let (logits, cache) = forward_op(spec, params, input.as_batch(), op, true)?;
    Ok((Tensor::from_array(logits), cache.expect("recorded")))
}

/// Like [`forward`], with a separate channel sample for each input row.
pub fn forward_each(
    spec: &NetworkSpec,
    params: &ParamVector,
    input: &Tensor,
    channels: &[ChannelSample],
) -> Result<(Tensor, ForwardCache)> {
    let (logits, cache) = forward_op(spec, params, input.as_batch(), SplitOp::PerRow(channels), true)?;
    Ok((Tensor::from_array(logits), cache.expect("recorded")))
}

/// Layers in front of the channel: returns the feature that enters the channel.
pub(crate) fn forward_prefix(spec: &NetworkSpec, params: &ParamVector, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_input(spec, &x)?;
    check_params(spec, params)?;
    let mut h = x.to_owned();
    for l in 0..spec.layers_before_split() {
        let z = affine(spec, params, l, &h);
        ensure_finite(&z, l)?;
        h = activate(spec.layers[l].activation, &z);
    }
    Ok(h)
}

/// Pulls `seed` (one row per sample, split dimension wide) back through the
/// layers in front of the channel: the gradient of `sum(seed * feature)`.
pub(crate) fn prefix_vjp(
    spec: &NetworkSpec,
    params: &ParamVector,
    x: ArrayView2<'_, f64>,
    seed: ArrayView2<'_, f64>,
) -> Result<Gradients> {
    let split = spec.layers_before_split();
    if seed.dim() != (x.nrows(), spec.split_dim()) {
        return Err(Error::Shape("seed shape mismatch".into()));
    }
    let mut grads = Gradients::zeros(spec.num_params());
    if split == 0 {
        return Ok(grads);
    }
    let (_, cache) = forward_op(spec, params, x, SplitOp::None, true)?;
    let cache = cache.expect("recorded");
    let mut g = seed.to_owned();
    for l in (0..split).rev() {
        if spec.layers[l].activation == Activation::Relu {
            g.zip_mut_with(&cache.pre[l], |gi, &z| {
                if z <= 0.0 {
                    *gi = 0.0
                }
            });
        }
        {
            let (mut dw, mut db) = layer_mut(spec, &mut grads.values, l);
            dw.assign(&g.t().dot(&cache.inputs[l]));
            db.assign(&g.sum_axis(Axis(0)));
        }
        if l > 0 {
            let (w, _) = params.layer(spec, l);
            g = g.dot(&w);
        }
    }
    Ok(grads)
}

/// Channel plus the layers behind it, applied to split features.
pub(crate) fn forward_suffix(
    spec: &NetworkSpec,
    params: &ParamVector,
    mut h: Array2<f64>,
    op: SplitOp<'_>,
) -> Result<Array2<f64>> {
    op.check(h.nrows(), spec.split_dim())?;
    op.apply(&mut h)?;
    for l in spec.layers_before_split()..spec.num_layers() {
        let z = affine(spec, params, l, &h);
        ensure_finite(&z, l)?;
        h = activate(spec.layers[l].activation, &z);
    }
    Ok(h)
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        Err(Error::LabelOutOfRange { label, classes })
    } else {
        Ok(())
    }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

/// Cross-entropy of the softmax of `logits` against `label`.
pub fn loss_ce(logits: &[f64], label: usize) -> Result<f64> {
    check_label(label, logits.len())?;
    Ok((log_sum_exp(logits) - logits[label]).max(0.0))
}

/// Index of the largest logit, ties going to the smallest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// 0-1 loss: 1 iff the predicted class differs from `label`.
pub fn loss_01(logits: &[f64], label: usize) -> Result<u8> {
    check_label(label, logits.len())?;
    Ok(u8::from(argmax(logits) != label))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|z| (z - lse).exp()).collect()
}

pub(crate) struct BackwardOutput {
    pub loss: f64,
    pub grads: Gradients,
    /// d(mean loss)/d(feature entering the channel), one row per sample.
    pub split_grad: Option<Array2<f64>>,
}

pub(crate) fn backward_op(
    spec: &NetworkSpec,
    params: &ParamVector,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    op: SplitOp<'_>,
    want_split_grad: bool,
) -> Result<BackwardOutput> {
    if labels.is_empty() {
        return Err(Error::invalid("batch is empty"));
    }
    if labels.len() != x.nrows() {
        return Err(Error::Shape(format!(
            "{} input rows but {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    let (logits, cache) = forward_op(spec, params, x, op, true)?;
    let cache = cache.expect("recorded");
    let n = labels.len() as f64;
    let classes = spec.classes();

    let mut loss = 0.0;
    let mut g = Array2::<f64>::zeros(logits.dim());
    for ((z, mut gr), &y) in logits.rows().into_iter().zip(g.rows_mut()).zip(labels) {
        let z = z.as_slice().expect("standard layout");
        loss += loss_ce(z, y)?;
        for (gi, p) in gr.iter_mut().zip(softmax(z)) {
            *gi = p / n;
        }
        gr[y] -= 1.0 / n;
    }
    loss /= n;
    debug_assert_eq!(g.ncols(), classes);

    let split = spec.layers_before_split();
    let mut split_grad = None;
    if split == spec.num_layers() {
        if let Some(si) = &cache.split_input {
            op.backprop(si, &mut g);
        }
        if want_split_grad {
            split_grad = Some(g.clone());
        }
    }

    let mut grads = Gradients::zeros(spec.num_params());
    for l in (0..spec.num_layers()).rev() {
        if spec.layers[l].activation == Activation::Relu {
            g.zip_mut_with(&cache.pre[l], |gi, &z| {
                if z <= 0.0 {
                    *gi = 0.0
                }
            });
        }
        {
            let (mut dw, mut db) = layer_mut(spec, &mut grads.values, l);
            dw.assign(&g.t().dot(&cache.inputs[l]));
            db.assign(&g.sum_axis(Axis(0)));
        }
        if l == 0 && split != 0 {
            break;
        }
        let (w, _) = params.layer(spec, l);
        g = g.dot(&w);
        if l == split {
            if let Some(si) = &cache.split_input {
                op.backprop(si, &mut g);
            }
            if want_split_grad {
                split_grad = Some(g.clone());
            }
        }
    }
    if grads.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            context: "in the gradient".into(),
        });
    }
    Ok(BackwardOutput {
        loss,
        grads,
        split_grad,
    })
}

/// Mean cross-entropy over `batch` and its exact gradient.
///
/// A channel sample, when given, is treated as a constant layer.
pub fn backward(
    spec: &NetworkSpec,
    params: &ParamVector,
    batch: &Batch,
    channel: Option<&ChannelSample>,
) -> Result<(f64, Gradients)> {
    let op = channel.map_or(SplitOp::None, SplitOp::Shared);
    let out = backward_op(spec, params, batch.inputs.as_batch(), &batch.labels, op, false)?;
    Ok((out.loss, out.grads))
}

/// Euclidean norm of a gradient vector.
pub fn grad_norm(g: &Gradients) -> f64 {
    l2(&g.values)
}

pub(crate) fn l2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Mean 0-1 loss of logits rows against labels.
pub fn error_rate(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if logits.rows() != labels.len() {
        return Err(Error::Shape("logits rows and labels differ".into()));
    }
    let mut wrong = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        wrong += usize::from(loss_01(logits.row(i), y)?);
    }
    Ok(wrong as f64 / labels.len() as f64)
}

pub(crate) fn rows_of(x: &ArrayView2<'_, f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), x.ncols()));
    for (mut dst, &i) in out.rows_mut().into_iter().zip(idx) {
        dst.assign(&x.slice(s![i, ..]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::STREAM_INIT;

    fn identity_layer(n: usize) -> (NetworkSpec, ParamVector) {
        let spec = NetworkSpec::new(
            vec![DenseLayerSpec {
                in_dim: n,
                out_dim: n,
                activation: Activation::Relu,
            }],
            2,
        )
        .unwrap();
        let w = Array2::<f64>::eye(n);
        let p = ParamVector::flatten(&spec, &[(w, Array1::zeros(n))]).unwrap();
        (spec, p)
    }

    #[test]
    fn single_identity_relu_layer() {
        let (spec, p) = identity_layer(2);
        let (logits, _) = forward(&spec, &p, &Tensor::vector(vec![1.0, -2.0]), None).unwrap();
        assert_eq!(logits.data(), &[1.0, 0.0]);
    }

    #[test]
    fn identity_channel_is_bit_exact() {
        let spec = NetworkSpec::mlp(&[5, 4, 3], 2).unwrap();
        let p = ParamVector::init(&spec, 0.5, &mut Rng::named(1, STREAM_INIT));
        let x = Tensor::matrix(2, 5, (0..10).map(|i| i as f64 * 0.37 - 1.0).collect()).unwrap();
        let (a, _) = forward(&spec, &p, &x, None).unwrap();
        let (b, _) = forward(&spec, &p, &x, Some(&ChannelSample::identity(4))).unwrap();
        assert_eq!(a, b);
        let bec_all_on = ChannelSample::Bec { mask: vec![1.0; 4] };
        let (c, _) = forward(&spec, &p, &x, Some(&bec_all_on)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn channel_dimension_is_checked() {
        let spec = NetworkSpec::mlp(&[5, 4, 3], 2).unwrap();
        let p = ParamVector::zeros(&spec);
        let x = Tensor::vector(vec![0.0; 5]);
        assert!(matches!(
            forward(&spec, &p, &x, Some(&ChannelSample::identity(3))),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            forward(&spec, &p, &Tensor::vector(vec![0.0; 4]), None),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn non_finite_activation_names_layer() {
        let spec = NetworkSpec::mlp(&[2, 2, 2], 2).unwrap();
        let mut p = ParamVector::zeros(&spec);
        p.values[0] = f64::MAX;
        p.values[1] = f64::MAX;
        let x = Tensor::vector(vec![10.0, 10.0]);
        match forward(&spec, &p, &x, None) {
            Err(Error::Numeric { context }) => assert!(context.contains("layer 0"), "{context}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn spec_validation() {
        let bad_chain = vec![
            DenseLayerSpec {
                in_dim: 3,
                out_dim: 4,
                activation: Activation::Relu,
            },
            DenseLayerSpec {
                in_dim: 5,
                out_dim: 2,
                activation: Activation::Identity,
            },
        ];
        assert!(NetworkSpec::new(bad_chain, 2).is_err());
        assert!(NetworkSpec::mlp(&[3, 4, 2], 0).is_err());
        assert!(NetworkSpec::mlp(&[3, 4, 2], 4).is_err());
        let spec = NetworkSpec::mlp(&[784, 256, 32, 10], 3).unwrap();
        assert_eq!(spec.split_dim(), 32);
        assert_eq!(spec.num_params(), 784 * 256 + 256 + 256 * 32 + 32 + 32 * 10 + 10);
        assert_eq!(NetworkSpec::mlp(&[7, 4, 2], 1).unwrap().split_dim(), 7);
        assert_eq!(NetworkSpec::mlp(&[7, 4, 2], 3).unwrap().split_dim(), 2);
    }

    #[test]
    fn rayleigh_channel_needs_even_split() {
        let spec = NetworkSpec::mlp(&[4, 3, 2], 2).unwrap();
        assert!(spec
            .check_channel(&ChannelSpec {
                kind: crate::channel::ChannelKind::RayleighZf { gamma: 1.0 },
                d: 3
            })
            .is_err());
        assert!(spec.check_channel(&ChannelSpec::bec(4, 0.1).unwrap()).is_err());
        assert!(spec.check_channel(&ChannelSpec::bec(3, 0.1).unwrap()).is_ok());
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss_01(&[10.0, 0.0, 0.0], 0).unwrap(), 0);
        assert_eq!(loss_01(&[0.0, 0.0], 1).unwrap(), 1, "ties go to index 0");
        assert!((loss_ce(&[0.0, 0.0], 1).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let direct = -((1f64).exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        assert!((loss_ce(&[1.0, 2.0, 3.0], 0).unwrap() - direct).abs() < 1e-14);
        assert!(matches!(
            loss_ce(&[1.0, 2.0], 2),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
        assert!(loss_01(&[1.0], 1).is_err());
    }

    #[test]
    fn softmax_ce_gradient_identity() {
        // 1-layer identity net: dL/dW = (softmax(Wx) - onehot) x^T
        let spec = NetworkSpec::new(
            vec![DenseLayerSpec {
                in_dim: 3,
                out_dim: 2,
                activation: Activation::Identity,
            }],
            2,
        )
        .unwrap();
        let p = ParamVector::from_vec(&spec, vec![0.2, -0.1, 0.4, 0.3, 0.5, -0.6, 0.0, 0.0]).unwrap();
        let x = [1.0, 2.0, -1.0];
        let batch = Batch::new(Tensor::matrix(1, 3, x.to_vec()).unwrap(), vec![1]).unwrap();
        let (_, g) = backward(&spec, &p, &batch, None).unwrap();
        let z = [0.2 + -0.2 - 0.4, 0.3 + 1.0 + 0.6];
        let sm = softmax(&z);
        let r = [sm[0], sm[1] - 1.0];
        for o in 0..2 {
            for i in 0..3 {
                assert!((g.values[o * 3 + i] - r[o] * x[i]).abs() < 1e-15);
            }
            assert!((g.values[6 + o] - r[o]).abs() < 1e-15);
        }
    }

    #[test]
    fn balanced_symmetric_batch_zero_bias_gradient() {
        let spec = NetworkSpec::mlp(&[2, 3, 2], 2).unwrap();
        let p = ParamVector::zeros(&spec);
        let x = Tensor::matrix(2, 2, vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let batch = Batch::new(x, vec![0, 1]).unwrap();
        let (loss, g) = backward(&spec, &p, &batch, None).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        let off = spec.layer_offset(1) + 3 * 2;
        assert_eq!(&g.values[off..off + 2], &[0.0, 0.0]);
    }

    #[test]
    fn grad_norm_examples() {
        assert_eq!(grad_norm(&Gradients { values: vec![3.0, 4.0] }), 5.0);
        assert_eq!(grad_norm(&Gradients::zeros(7)), 0.0);
    }

    #[test]
    fn flatten_round_trip() {
        let spec = NetworkSpec::mlp(&[4, 3, 5, 2], 3).unwrap();
        let p = ParamVector::init(&spec, 1.0, &mut Rng::named(5, STREAM_INIT));
        let back = ParamVector::flatten(&spec, &p.unflatten(&spec)).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn empty_batch_rejected() {
        assert!(Batch::new(Tensor::zeros(vec![0, 3]), vec![]).is_err());
    }
}
