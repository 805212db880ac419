//! Training by manual backpropagation through the normalized arcsine layers.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gnet::{argmax, col2im, layer_forward, ArchSpec, GNetModel, Layer, LayerCache};
use crate::rng::{mix_seed, RngStream};
use crate::scalar::{gemm, Op, Real};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Optimizer {
    Adam,
    Sgd,
}

/// Objective applied to the head outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum HeadLoss {
    /// Cross-entropy of `softmax(s z)`.
    #[default]
    Signed,
    /// Adds the cross-entropy of `softmax(s |z|)`, so that the class read
    /// out by `argmax |z|` is trained as well.
    SignedAndMagnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// `eps` of the smoothed norms.
    pub eps_norm: f64,
    /// Multiplies the logits inside the cross-entropy only.
    pub logit_scale: f64,
    pub head_loss: HeadLoss,
    /// Clamp margin of the arcsine derivative.
    pub grad_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            optimizer: Optimizer::Adam,
            seed: 0,
            eps_norm: crate::gnet::DEFAULT_EPS,
            logit_scale: 1.0,
            head_loss: HeadLoss::Signed,
            grad_delta: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs >= 1
            && self.batch_size >= 1
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0
            && self.eps_norm > 0.0
            && self.logit_scale > 0.0
            && self.grad_delta > 0.0
            && self.grad_delta < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid training configuration {self:?}")))
        }
    }
}

/// Rows drawn as independent Gaussian vectors scaled to unit length; `c = 0`.
pub fn init_model<T: Real>(arch: &ArchSpec, eps: T, rng: &mut RngStream) -> Result<GNetModel<T>> {
    arch.build(eps, |_, shape| {
        let cols: usize = shape[1..].iter().product();
        let mut data = Vec::with_capacity(shape[0] * cols);
        for _ in 0..shape[0] {
            let row = rng.unit_vector(cols);
            data.extend(row.into_iter().map(T::of));
        }
        Tensor::new(shape.to_vec(), data).expect("shape from a resolved architecture")
    })
}

/// Cross-entropy of `softmax(logits)` against `label`.
pub fn loss<T: Real>(logits: &[T], label: usize) -> T {
    scaled_loss(logits, label, T::one())
}

/// Cross-entropy of `softmax(scale * logits)`.
pub fn scaled_loss<T: Real>(logits: &[T], label: usize, scale: T) -> T {
    let m = logits.iter().fold(T::neg_infinity(), |m, &z| m.max(scale * z));
    let lse = logits.iter().map(|&z| (scale * z - m).exp()).sum::<T>().ln() + m;
    lse - scale * logits[label]
}

/// Loss of one sample under `settings` and, when `grad` is given, its
/// gradient with respect to the logits scaled by `weight`.
fn sample_loss<T: Real>(z: &[T], label: usize, settings: LossSettings, weight: T, grad: Option<&mut [T]>) -> T {
    let scale = T::of(settings.logit_scale);
    let mut loss = scaled_loss(z, label, scale);
    let mut grad = grad;
    if let Some(g) = grad.as_deref_mut() {
        softmax_grad(z, label, scale, weight, g, false);
    }
    if settings.head_loss == HeadLoss::SignedAndMagnitude {
        let mag: Vec<T> = z.iter().map(|v| v.abs()).collect();
        loss = loss + scaled_loss(&mag, label, scale);
        if let Some(g) = grad {
            softmax_grad(z, label, scale, weight, g, true);
        }
    }
    loss
}

/// Adds `weight * d CE(softmax(s f(z))) / dz` to `g`, with `f` the identity
/// or the absolute value (subgradient 0 at 0).
fn softmax_grad<T: Real>(z: &[T], label: usize, scale: T, weight: T, g: &mut [T], magnitude: bool) {
    let f = |v: T| if magnitude { v.abs() } else { v };
    let m = z.iter().fold(T::neg_infinity(), |m, &v| m.max(scale * f(v)));
    let e: Vec<T> = z.iter().map(|&v| (scale * f(v) - m).exp()).collect();
    let sum: T = e.iter().copied().sum();
    for (i, gi) in g.iter_mut().enumerate() {
        let p = e[i] / sum - if i == label { T::one() } else { T::zero() };
        let d = if !magnitude || z[i] > T::zero() {
            T::one()
        } else if z[i] < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        *gi = *gi + scale * p * d * weight;
    }
}

/// Per-layer parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub w: Vec<Tensor<T>>,
    pub c: Vec<T>,
}

impl<T: Real> Gradients<T> {
    pub fn norm(&self) -> T {
        let s: T = self.w.iter().map(Tensor::squared_norm).sum::<T>() + self.c.iter().map(|&g| g * g).sum::<T>();
        s.sqrt()
    }
}

/// Settings the gradient depends on besides the model and the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSettings {
    pub logit_scale: f64,
    pub head_loss: HeadLoss,
    pub grad_delta: f64,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            logit_scale: 1.0,
            head_loss: HeadLoss::Signed,
            grad_delta: 1e-6,
        }
    }
}

impl From<&TrainConfig> for LossSettings {
    fn from(c: &TrainConfig) -> Self {
        Self {
            logit_scale: c.logit_scale,
            head_loss: c.head_loss,
            grad_delta: c.grad_delta,
        }
    }
}

/// Mean batch loss, without gradients.
pub fn batch_loss<T: Real>(model: &GNetModel<T>, x: &Tensor<T>, labels: &[usize], settings: LossSettings) -> Result<T> {
    let z = model.logits(x)?;
    check_batch(z.rows(), labels)?;
    let total: T = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sample_loss(z.row(i), l, settings, T::one(), None))
        .sum();
    Ok(total / T::of(labels.len() as f64))
}

fn check_batch(rows: usize, labels: &[usize]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if rows != labels.len() {
        return Err(Error::Length {
            left: rows,
            right: labels.len(),
        });
    }
    Ok(())
}

/// Result of one backward pass.
#[derive(Debug, Clone)]
pub struct Backward<T> {
    pub loss: T,
    pub grads: Gradients<T>,
    /// Per-sample predictions (`None` for non-finite logits).
    pub predictions: Vec<Option<usize>>,
}

/// Mean batch loss and its exact gradient with respect to every raw weight
/// and every shift.
pub fn backward<T: Real>(
    model: &GNetModel<T>,
    x: &Tensor<T>,
    labels: &[usize],
    settings: LossSettings,
) -> Result<Backward<T>> {
    let batch = labels.len();
    if x.len() != batch * model.input_len() {
        return Err(Error::Shape {
            expected: vec![batch, model.input_len()],
            got: x.shape().to_vec(),
        });
    }
    check_batch(batch, labels)?;
    let eps = model.eps();
    let layers = model.layers();
    let mut caches: Vec<Option<LayerCache<T>>> = vec![None; layers.len()];
    let mut cur = x.data().to_vec();
    for (layer, slot) in layers.iter().zip(caches.iter_mut()) {
        cur = layer_forward(layer, &cur, batch, eps, Some(slot))?;
    }
    let k = model.classes();
    let inv_b = T::one() / T::of(batch as f64);
    let mut loss = T::zero();
    let mut predictions = Vec::with_capacity(batch);
    // dL/dz, batch x classes
    let mut g = vec![T::zero(); batch * k];
    for (s, &label) in labels.iter().enumerate() {
        let z = &cur[s * k..(s + 1) * k];
        predictions.push(argmax(z));
        loss = loss + sample_loss(z, label, settings, inv_b, Some(&mut g[s * k..(s + 1) * k]));
    }
    let delta = T::of(settings.grad_delta);
    let mut gw = vec![Tensor::zeros(&[1]); layers.len()];
    let mut gc = vec![T::zero(); layers.len()];
    for li in (0..layers.len()).rev() {
        let layer = &layers[li];
        let cache = caches[li].take().expect("cache filled by the forward pass");
        let w = layer.weights();
        let (n, kk) = (w.shape()[0], w.len() / w.shape()[0]);
        // dL/du, rows x n
        let gu: Vec<T> = match layer {
            Layer::Head(_) => g,
            Layer::Dense(l) => g
                .iter()
                .zip(&cache.u)
                .map(|(&gy, &u)| gy * l.act.derivative(u, delta))
                .collect(),
            Layer::Conv(l) => {
                let pos = l.geom.positions();
                let mut out = vec![T::zero(); cache.rows * n];
                for s in 0..batch {
                    for f in 0..n {
                        for q in 0..pos {
                            let r = s * pos + q;
                            out[r * n + f] = g[(s * n + f) * pos + q] * l.act.derivative(cache.u[r * n + f], delta);
                        }
                    }
                }
                out
            }
        };
        let need_input_grad = li > 0;
        let (gwl, gxs, gcl) = normalized_backward(&cache, w.data(), n, kk, &gu, need_input_grad, matches!(layer, Layer::Conv(_)));
        gw[li] = Tensor::new(w.shape().to_vec(), gwl)?;
        if let Some(gxs) = gxs {
            g = match layer {
                Layer::Conv(l) => col2im(&l.geom, &l.geom.source_table(), &gxs, batch),
                _ => gxs,
            };
            gc[li] = g.iter().copied().sum();
        } else {
            g = Vec::new();
            gc[li] = gcl.expect("shift gradient computed without input gradient");
        }
        if !gw[li].is_finite() || !gc[li].is_finite() {
            return Err(Error::NonFiniteGradient { layer: li });
        }
    }
    Ok(Backward {
        loss: loss * inv_b,
        grads: Gradients { w: gw, c: gc },
        predictions,
    })
}

/// Gradients of `u = xs w^T / (a b^T)`. Returns `(dW, dxs, dc)`; `dxs` only
/// when requested, `dc` directly when `dxs` is skipped (dense layers only).
fn normalized_backward<T: Real>(
    cache: &LayerCache<T>,
    w: &[T],
    n: usize,
    k: usize,
    gu: &[T],
    want_input: bool,
    is_conv: bool,
) -> (Vec<T>, Option<Vec<T>>, Option<T>) {
    let rows = cache.rows;
    let mut h = vec![T::zero(); rows * n];
    // sum_i g_ri u_ri per row, and sum_r g_ri u_ri per weight row
    let mut row_gu = vec![T::zero(); rows];
    let mut col_gu = vec![T::zero(); n];
    for r in 0..rows {
        for i in 0..n {
            let gv = gu[r * n + i];
            let prod = gv * cache.u[r * n + i];
            row_gu[r] = row_gu[r] + prod;
            col_gu[i] = col_gu[i] + prod;
            h[r * n + i] = gv / (cache.a[r] * cache.b[i]);
        }
    }
    let mut gw = vec![T::zero(); n * k];
    gemm(Op::T, Op::N, n, k, rows, T::one(), &h, &cache.xs, T::zero(), &mut gw);
    for i in 0..n {
        let coef = col_gu[i] / (cache.b[i] * cache.b[i]);
        for j in 0..k {
            gw[i * k + j] = gw[i * k + j] - coef * w[i * k + j];
        }
    }
    if want_input || is_conv {
        let mut gx = vec![T::zero(); rows * k];
        gemm(Op::N, Op::N, rows, k, n, T::one(), &h, w, T::zero(), &mut gx);
        for r in 0..rows {
            let coef = row_gu[r] / (cache.a[r] * cache.a[r]);
            for j in 0..k {
                gx[r * k + j] = gx[r * k + j] - coef * cache.xs[r * k + j];
            }
        }
        // A convolution's shift only reaches non-padded entries, so its
        // caller always needs the scattered input gradient.
        return (gw, Some(gx), None);
    }
    // Dense first layer: sum_j dxs_rj without materializing dxs.
    let wsum: Vec<T> = w.chunks(k).map(|r| r.iter().copied().sum()).collect();
    let mut gc = T::zero();
    for r in 0..rows {
        let hw: T = (0..n).map(|i| h[r * n + i] * wsum[i]).sum();
        let xsum: T = cache.xs[r * k..(r + 1) * k].iter().copied().sum();
        gc = gc + hw - row_gu[r] / (cache.a[r] * cache.a[r]) * xsum;
    }
    (gw, None, Some(gc))
}

/// First-order optimizer state.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    kind: Optimizer,
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    step: i32,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(model: &GNetModel<T>, config: &TrainConfig) -> Self {
        let size = model.param_count();
        let adam = config.optimizer == Optimizer::Adam;
        Self {
            kind: config.optimizer,
            lr: T::of(config.lr),
            beta1: T::of(config.beta1),
            beta2: T::of(config.beta2),
            eps: T::of(config.adam_eps),
            step: 0,
            m: if adam { vec![T::zero(); size] } else { Vec::new() },
            v: if adam { vec![T::zero(); size] } else { Vec::new() },
        }
    }

    /// Applies one update in place.
    pub fn apply(&mut self, model: &mut GNetModel<T>, grads: &Gradients<T>) {
        self.step += 1;
        let (bc1, bc2) = match self.kind {
            Optimizer::Adam => (
                T::one() - self.beta1.powi(self.step),
                T::one() - self.beta2.powi(self.step),
            ),
            Optimizer::Sgd => (T::one(), T::one()),
        };
        let mut offset = 0;
        for (li, layer) in model.layers_mut().iter_mut().enumerate() {
            let gw = grads.w[li].data();
            let params = layer.weights_mut().data_mut();
            for (j, (p, &g)) in params.iter_mut().zip(gw).enumerate() {
                *p = *p - self.delta(offset + j, g, bc1, bc2);
            }
            offset += gw.len();
            let c = layer.shift_mut();
            *c = *c - self.delta(offset, grads.c[li], bc1, bc2);
            offset += 1;
        }
    }

    #[inline]
    fn delta(&mut self, idx: usize, g: T, bc1: T, bc2: T) -> T {
        match self.kind {
            Optimizer::Sgd => self.lr * g,
            Optimizer::Adam => {
                let m = self.beta1 * self.m[idx] + (T::one() - self.beta1) * g;
                let v = self.beta2 * self.v[idx] + (T::one() - self.beta2) * g * g;
                self.m[idx] = m;
                self.v[idx] = v;
                self.lr * (m / bc1) / ((v / bc2).sqrt() + self.eps)
            }
        }
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub loss: f64,
    /// Accuracy of the minibatch predictions made during the epoch.
    pub train_acc: f64,
    /// `NaN` when no test set was supplied.
    pub test_acc: f64,
}

/// Trains `model` in place; shuffling is drawn from the configuration seed.
pub fn fit<T: Real>(
    model: &mut GNetModel<T>,
    train: &Dataset,
    test: Option<&Dataset>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if config.batch_size > train.len() {
        return Err(Error::invalid(format!(
            "batch size {} exceeds the {} training samples",
            config.batch_size,
            train.len()
        )));
    }
    if train.sample_len() != model.input_len() {
        return Err(Error::Length {
            left: model.input_len(),
            right: train.sample_len(),
        });
    }
    let settings = LossSettings::from(config);
    let mut opt = OptimizerState::new(model, config);
    let mut rng = RngStream::new(mix_seed(config.seed, 0x7472_6169_6e), 0);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let (mut loss_sum, mut correct, mut batches) = (0.0, 0usize, 0usize);
        for idx in order.chunks(config.batch_size) {
            let x = train.inputs.select_rows(idx).cast::<T>();
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let b = backward(model, &x, &labels, settings)?;
            opt.apply(model, &b.grads);
            loss_sum += b.loss.as_f64();
            batches += 1;
            correct += b.predictions.iter().zip(&labels).filter(|(p, l)| **p == Some(**l)).count();
        }
        if !model.is_finite() {
            return Err(Error::NonFinite(format!("parameters after epoch {epoch}")));
        }
        let rec = EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            train_acc: correct as f64 / train.len() as f64,
            test_acc: match test {
                Some(t) => evaluate(model, t)?,
                None => f64::NAN,
            },
        };
        on_epoch(&rec);
        history.push(rec);
    }
    Ok(history)
}

/// Fraction of samples whose argmax logit equals the label; samples with
/// non-finite logits count as errors.
pub fn evaluate<T: Real>(model: &GNetModel<T>, data: &Dataset) -> Result<f64> {
    let preds = predict_all(model, data)?;
    let hits = preds.iter().zip(&data.labels).filter(|(p, l)| **p == Some(**l)).count();
    Ok(hits as f64 / data.len().max(1) as f64)
}

/// Primal predictions for a whole dataset, in chunks.
pub fn predict_all<T: Real>(model: &GNetModel<T>, data: &Dataset) -> Result<Vec<Option<usize>>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(256) {
        let x = data.inputs.select_rows(chunk).cast::<T>();
        out.extend(model.predict(&x)?);
    }
    Ok(out)
}

/// Distribution shift of one layer's raw weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDrift {
    pub layer: usize,
    pub kind: String,
    /// Shared histogram range `[lo, hi]` over both weight sets.
    pub range: (f64, f64),
    pub hist_a: Vec<u64>,
    pub hist_b: Vec<u64>,
    /// Two-sample Kolmogorov-Smirnov statistic.
    pub ks: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub std_a: f64,
    pub std_b: f64,
}

pub const DRIFT_BINS: usize = 64;

/// Per-layer histograms and KS statistics between two models of one architecture.
pub fn weight_drift<T: Real>(a: &GNetModel<T>, b: &GNetModel<T>) -> Result<Vec<LayerDrift>> {
    if a.layers().len() != b.layers().len() {
        return Err(Error::Length {
            left: a.layers().len(),
            right: b.layers().len(),
        });
    }
    a.layers()
        .iter()
        .zip(b.layers())
        .enumerate()
        .map(|(i, (la, lb))| {
            let wa: Vec<f64> = la.weights().data().iter().map(|v| v.as_f64()).collect();
            let wb: Vec<f64> = lb.weights().data().iter().map(|v| v.as_f64()).collect();
            let mut d = distribution_drift(&wa, &wb)?;
            d.layer = i;
            d.kind = la.kind_name().to_string();
            Ok(d)
        })
        .collect()
}

/// Histogram and KS comparison of two finite samples.
pub fn distribution_drift(a: &[f64], b: &[f64]) -> Result<LayerDrift> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("drift needs nonempty samples"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("weights".into()));
    }
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    let hist = |v: &[f64]| {
        let mut h = vec![0u64; DRIFT_BINS];
        let width = (hi - lo) / DRIFT_BINS as f64;
        for &x in v {
            let bin = if width > 0.0 { ((x - lo) / width) as usize } else { 0 };
            h[bin.min(DRIFT_BINS - 1)] += 1;
        }
        h
    };
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
        (m, var.sqrt())
    };
    let (mean_a, std_a) = stats(a);
    let (mean_b, std_b) = stats(b);
    Ok(LayerDrift {
        layer: 0,
        kind: String::new(),
        range: (lo, hi),
        hist_a: hist(a),
        hist_b: hist(b),
        ks: ks_statistic(a, b),
        mean_a,
        mean_b,
        std_a,
        std_b,
    })
}

/// `sup_x |F_a(x) - F_b(x)|` of the two empirical distribution functions.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}
