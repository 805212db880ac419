//! Floating-point G-Nets: dense, convolutional and head layers over
//! normalized inner products followed by arcsine activations.
//!
//! Every layer computes `u = <w_i, x'> / (|w_i|_eps |x'|_eps)` with
//! `x' = x + c` and `|v|_eps = sqrt(|v|^2 + eps)`; hidden layers then apply
//! their activation, the head returns `u` itself as logits. Weights are stored
//! raw and normalized on the fly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::scalar::{gemm, Op, Real};
use crate::tensor::Tensor;

/// Default `eps` of the smoothed norms.
pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    /// `n x p`, un-normalized.
    pub w: Tensor<T>,
    pub c: T,
    pub act: ActivationKind,
}

impl<T: Real> DenseLayer<T> {
    pub fn new(w: Tensor<T>, c: T, act: ActivationKind) -> Result<Self> {
        if w.shape().len() != 2 {
            return Err(Error::invalid(format!("dense weights must be 2-D, got {:?}", w.shape())));
        }
        if !act.is_valid() {
            return Err(Error::invalid(format!("invalid activation {act:?}")));
        }
        Ok(Self { w, c, act })
    }

    pub fn inputs(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.w.shape()[0]
    }
}

/// Spatial bookkeeping of a 2-D cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvGeometry {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.in_ch, self.in_h, self.in_w, self.k_h, self.k_w];
        if dims.contains(&0) || self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::invalid(format!("degenerate convolution geometry {self:?}")));
        }
        if self.k_h > self.in_h + 2 * self.padding.0 || self.k_w > self.in_w + 2 * self.padding.1 {
            return Err(Error::invalid(format!("kernel does not fit the padded input: {self:?}")));
        }
        Ok(())
    }

    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding.0 - self.k_h) / self.stride.0 + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding.1 - self.k_w) / self.stride.1 + 1
    }

    /// Number of output positions per filter.
    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Entries of one kernel (`channels x k_h x k_w`).
    pub fn patch_len(&self) -> usize {
        self.in_ch * self.k_h * self.k_w
    }

    pub fn input_len(&self) -> usize {
        self.in_ch * self.in_h * self.in_w
    }

    /// Flat input index read by entry `q` of the patch at position `k`, or
    /// `None` when it falls in the zero padding.
    #[inline]
    pub fn source(&self, k: usize, q: usize) -> Option<usize> {
        let (oy, ox) = (k / self.out_w(), k % self.out_w());
        let ch = q / (self.k_h * self.k_w);
        let (ky, kx) = ((q / self.k_w) % self.k_h, q % self.k_w);
        let y = (oy * self.stride.0 + ky).checked_sub(self.padding.0)?;
        let x = (ox * self.stride.1 + kx).checked_sub(self.padding.1)?;
        (y < self.in_h && x < self.in_w).then(|| (ch * self.in_h + y) * self.in_w + x)
    }

    /// Patch-source table, `positions x patch_len`.
    pub fn source_table(&self) -> Vec<Option<usize>> {
        let (pos, len) = (self.positions(), self.patch_len());
        let mut out = Vec::with_capacity(pos * len);
        for k in 0..pos {
            for q in 0..len {
                out.push(self.source(k, q));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    /// `filters x channels x k_h x k_w`, un-normalized.
    pub w: Tensor<T>,
    pub c: T,
    pub geom: ConvGeometry,
    pub act: ActivationKind,
}

impl<T: Real> ConvLayer<T> {
    pub fn new(w: Tensor<T>, c: T, geom: ConvGeometry, act: ActivationKind) -> Result<Self> {
        geom.validate()?;
        let want = [w.shape()[0], geom.in_ch, geom.k_h, geom.k_w];
        if w.shape() != want {
            return Err(Error::Shape {
                expected: want.to_vec(),
                got: w.shape().to_vec(),
            });
        }
        if !act.is_valid() {
            return Err(Error::invalid(format!("invalid activation {act:?}")));
        }
        Ok(Self { w, c, geom, act })
    }

    pub fn filters(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.filters() * self.geom.positions()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadLayer<T> {
    /// `classes x p`, un-normalized.
    pub w: Tensor<T>,
    pub c: T,
}

impl<T: Real> HeadLayer<T> {
    pub fn new(w: Tensor<T>, c: T) -> Result<Self> {
        if w.shape().len() != 2 || w.shape()[0] < 2 {
            return Err(Error::invalid(format!(
                "head weights must be classes x inputs with at least 2 classes, got {:?}",
                w.shape()
            )));
        }
        Ok(Self { w, c })
    }

    pub fn inputs(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn classes(&self) -> usize {
        self.w.shape()[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Dense(DenseLayer<T>),
    Conv(ConvLayer<T>),
    Head(HeadLayer<T>),
}

impl<T: Real> Layer<T> {
    pub fn input_len(&self) -> usize {
        match self {
            Layer::Dense(l) => l.inputs(),
            Layer::Conv(l) => l.geom.input_len(),
            Layer::Head(l) => l.inputs(),
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            Layer::Dense(l) => l.outputs(),
            Layer::Conv(l) => l.outputs(),
            Layer::Head(l) => l.classes(),
        }
    }

    pub fn weights(&self) -> &Tensor<T> {
        match self {
            Layer::Dense(l) => &l.w,
            Layer::Conv(l) => &l.w,
            Layer::Head(l) => &l.w,
        }
    }

    pub fn weights_mut(&mut self) -> &mut Tensor<T> {
        match self {
            Layer::Dense(l) => &mut l.w,
            Layer::Conv(l) => &mut l.w,
            Layer::Head(l) => &mut l.w,
        }
    }

    pub fn shift(&self) -> T {
        match self {
            Layer::Dense(l) => l.c,
            Layer::Conv(l) => l.c,
            Layer::Head(l) => l.c,
        }
    }

    pub fn shift_mut(&mut self) -> &mut T {
        match self {
            Layer::Dense(l) => &mut l.c,
            Layer::Conv(l) => &mut l.c,
            Layer::Head(l) => &mut l.c,
        }
    }

    /// `None` for the head.
    pub fn activation(&self) -> Option<ActivationKind> {
        match self {
            Layer::Dense(l) => Some(l.act),
            Layer::Conv(l) => Some(l.act),
            Layer::Head(_) => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv(_) => "conv",
            Layer::Head(_) => "head",
        }
    }

    pub fn cast<U: Real>(&self) -> Layer<U> {
        match self {
            Layer::Dense(l) => Layer::Dense(DenseLayer {
                w: l.w.cast(),
                c: U::of(l.c.as_f64()),
                act: l.act,
            }),
            Layer::Conv(l) => Layer::Conv(ConvLayer {
                w: l.w.cast(),
                c: U::of(l.c.as_f64()),
                geom: l.geom,
                act: l.act,
            }),
            Layer::Head(l) => Layer::Head(HeadLayer {
                w: l.w.cast(),
                c: U::of(l.c.as_f64()),
            }),
        }
    }
}

/// A stack of hidden layers closed by exactly one head.
#[derive(Debug, Clone, PartialEq)]
pub struct GNetModel<T> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    eps: T,
}

impl<T: Real> GNetModel<T> {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer<T>>, eps: T) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::invalid(format!("bad input shape {input_shape:?}")));
        }
        if !(eps > T::zero()) {
            return Err(Error::invalid("eps must be positive"));
        }
        match layers.last() {
            Some(Layer::Head(_)) => {}
            _ => return Err(Error::invalid("the last layer must be the head")),
        }
        if layers[..layers.len() - 1].iter().any(|l| matches!(l, Layer::Head(_))) {
            return Err(Error::invalid("only the last layer may be a head"));
        }
        let mut width: usize = input_shape.iter().product();
        for (i, l) in layers.iter().enumerate() {
            if l.input_len() != width {
                return Err(Error::invalid(format!(
                    "layer {i} ({}) expects {} inputs, previous stage yields {width}",
                    l.kind_name(),
                    l.input_len()
                )));
            }
            width = l.output_len();
        }
        Ok(Self {
            input_shape,
            layers,
            eps,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Mutable parameter access; layer kinds and shapes must not change.
    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn eps(&self) -> T {
        self.eps
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, Layer::output_len)
    }

    pub fn head(&self) -> &HeadLayer<T> {
        match self.layers.last() {
            Some(Layer::Head(h)) => h,
            _ => unreachable!("validated at construction"),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights().len() + 1).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights().is_finite() && l.shift().is_finite())
    }

    pub fn cast<U: Real>(&self) -> GNetModel<U> {
        GNetModel {
            input_shape: self.input_shape.clone(),
            layers: self.layers.iter().map(Layer::cast).collect(),
            eps: U::of(self.eps.as_f64()),
        }
    }

    fn batch_of(&self, x: &Tensor<T>) -> Result<usize> {
        let d = self.input_len();
        if x.row_len() == d {
            Ok(x.rows())
        } else if x.len() == d {
            Ok(1)
        } else {
            Err(Error::Shape {
                expected: self.input_shape.clone(),
                got: x.shape().to_vec(),
            })
        }
    }

    /// Runs a batch (`B x input`, or a single unbatched sample) and returns
    /// the `B x classes` logits plus every hidden output.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let batch = self.batch_of(x)?;
        if !x.is_finite() {
            return Err(Error::NonFinite("network input".into()));
        }
        let mut trace = Vec::with_capacity(self.layers.len());
        let mut cur = x.data().to_vec();
        for layer in &self.layers {
            cur = layer_forward(layer, &cur, batch, self.eps, None)?;
            let t = Tensor::new(vec![batch, layer.output_len()], cur.clone())?;
            trace.push(t);
        }
        let logits = trace.pop().expect("model has a head");
        Ok((logits, trace))
    }

    /// Logits without the trace; non-finite weights yield non-finite rows
    /// instead of an error.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = self.batch_of(x)?;
        let mut cur = x.data().to_vec();
        for layer in &self.layers {
            cur = layer_forward(layer, &cur, batch, self.eps, None)?;
        }
        Tensor::new(vec![batch, self.classes()], cur)
    }

    /// `argmax` of the logits per sample (lowest index on ties); rows with a
    /// non-finite logit yield `None`.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<Option<usize>>> {
        let z = self.logits(x)?;
        Ok((0..z.rows()).map(|i| argmax(z.row(i))).collect())
    }
}

/// Index of the largest entry (first on ties), `None` if any entry is not finite.
pub fn argmax<T: Real>(v: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &x) in v.iter().enumerate() {
        if !x.is_finite() {
            return None;
        }
        if best.is_none_or(|(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best.map(|(i, _)| i)
}

/// Intermediates kept for backpropagation. Rows are samples for dense and
/// head layers, `(sample, position)` pairs for convolutions.
#[derive(Debug, Clone)]
pub(crate) struct LayerCache<T> {
    /// Shifted inputs (or shifted, zero-padded patches), `rows x k`.
    pub xs: Vec<T>,
    /// Smoothed norm of every row of `xs`.
    pub a: Vec<T>,
    /// Smoothed norm of every weight row.
    pub b: Vec<T>,
    /// Normalized products, `rows x n`.
    pub u: Vec<T>,
    pub rows: usize,
}

/// `u = xs w^T / (a b^T)` for `rows x k` inputs and `n x k` weights.
pub(crate) fn normalized_products<T: Real>(
    xs: Vec<T>,
    rows: usize,
    w: &[T],
    n: usize,
    k: usize,
    eps: T,
) -> LayerCache<T> {
    let a: Vec<T> = xs.chunks(k).map(|r| norm_eps(r, eps)).collect();
    let b: Vec<T> = w.chunks(k).map(|r| norm_eps(r, eps)).collect();
    let mut u = vec![T::zero(); rows * n];
    gemm(Op::N, Op::T, rows, n, k, T::one(), &xs, w, T::zero(), &mut u);
    for (r, row) in u.chunks_mut(n).enumerate() {
        for (v, &bi) in row.iter_mut().zip(&b) {
            *v = *v / (a[r] * bi);
        }
    }
    LayerCache { xs, a, b, u, rows }
}

#[inline]
fn norm_eps<T: Real>(v: &[T], eps: T) -> T {
    (v.iter().map(|&x| x * x).sum::<T>() + eps).sqrt()
}

/// Shifted, zero-padded patches of a batch, `(B * positions) x patch_len`.
pub(crate) fn im2col<T: Real>(geom: &ConvGeometry, table: &[Option<usize>], x: &[T], c: T, batch: usize) -> Vec<T> {
    let d = geom.input_len();
    let mut out = Vec::with_capacity(batch * table.len());
    for s in 0..batch {
        let xs = &x[s * d..(s + 1) * d];
        out.extend(table.iter().map(|src| src.map_or(T::zero(), |i| xs[i] + c)));
    }
    out
}

/// Adjoint of [`im2col`] (without the shift): scatters patch gradients back.
pub(crate) fn col2im<T: Real>(geom: &ConvGeometry, table: &[Option<usize>], g: &[T], batch: usize) -> Vec<T> {
    let d = geom.input_len();
    let mut out = vec![T::zero(); batch * d];
    for s in 0..batch {
        let gs = &g[s * table.len()..(s + 1) * table.len()];
        let os = &mut out[s * d..(s + 1) * d];
        for (src, &v) in table.iter().zip(gs) {
            if let Some(i) = src {
                os[*i] = os[*i] + v;
            }
        }
    }
    out
}

/// Batched forward of one layer; fills `cache` when given.
pub(crate) fn layer_forward<T: Real>(
    layer: &Layer<T>,
    x: &[T],
    batch: usize,
    eps: T,
    cache: Option<&mut Option<LayerCache<T>>>,
) -> Result<Vec<T>> {
    let (lc, out) = match layer {
        Layer::Dense(l) => {
            let (n, p) = (l.outputs(), l.inputs());
            let xs: Vec<T> = x.iter().map(|&v| v + l.c).collect();
            let lc = normalized_products(xs, batch, l.w.data(), n, p, eps);
            let out = lc.u.iter().map(|&u| l.act.apply(u)).collect();
            (lc, out)
        }
        Layer::Head(l) => {
            let (n, p) = (l.classes(), l.inputs());
            let xs: Vec<T> = x.iter().map(|&v| v + l.c).collect();
            let lc = normalized_products(xs, batch, l.w.data(), n, p, eps);
            let out = lc.u.clone();
            (lc, out)
        }
        Layer::Conv(l) => {
            let g = &l.geom;
            let (f, pos, k) = (l.filters(), g.positions(), g.patch_len());
            let table = g.source_table();
            let cols = im2col(g, &table, x, l.c, batch);
            let lc = normalized_products(cols, batch * pos, l.w.data(), f, k, eps);
            let mut out = vec![T::zero(); batch * f * pos];
            for s in 0..batch {
                for q in 0..pos {
                    let urow = &lc.u[(s * pos + q) * f..(s * pos + q + 1) * f];
                    for (fi, &u) in urow.iter().enumerate() {
                        out[(s * f + fi) * pos + q] = l.act.apply(u);
                    }
                }
            }
            (lc, out)
        }
    };
    if let Some(slot) = cache {
        *slot = Some(lc);
    }
    Ok(out)
}

fn single<T: Real>(layer: &Layer<T>, x: &[T], eps: T) -> Result<Vec<T>> {
    if x.len() != layer.input_len() {
        return Err(Error::Length {
            left: layer.input_len(),
            right: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("layer input".into()));
    }
    layer_forward(layer, x, 1, eps, None)
}

/// One dense layer on one sample.
pub fn dense_forward<T: Real>(layer: &DenseLayer<T>, x: &[T], eps: T) -> Result<Vec<T>> {
    single(&Layer::Dense(layer.clone()), x, eps)
}

/// One convolution on one sample (`channels x h x w`, flattened); the output
/// is `filters x out_h x out_w`, flattened.
pub fn conv_forward<T: Real>(layer: &ConvLayer<T>, x: &[T], eps: T) -> Result<Vec<T>> {
    single(&Layer::Conv(layer.clone()), x, eps)
}

/// Head logits for one sample; every entry lies in `[-1, 1]`.
pub fn head_forward<T: Real>(layer: &HeadLayer<T>, y: &[T], eps: T) -> Result<Vec<T>> {
    single(&Layer::Head(layer.clone()), y, eps)
}

/// Layer recipe used to build models: `CN(in,out,k[,sS][,pP])`, `FC(n)`, `CL(k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        out: usize,
    },
    Head {
        classes: usize,
    },
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
            } => {
                write!(f, "CN({in_ch},{out_ch},{kernel}")?;
                if stride != 1 {
                    write!(f, ",s{stride}")?;
                }
                if padding != 0 {
                    write!(f, ",p{padding}")?;
                }
                write!(f, ")")
            }
            LayerSpec::Dense { out } => write!(f, "FC({out})"),
            LayerSpec::Head { classes } => write!(f, "CL({classes})"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::invalid(format!("cannot parse layer `{s}`"));
        let open = s.find('(').ok_or_else(bad)?;
        if !s.ends_with(')') {
            return Err(bad());
        }
        let name = s[..open].trim().to_ascii_uppercase();
        let args: Vec<&str> = s[open + 1..s.len() - 1].split(',').map(str::trim).collect();
        let num = |a: &str| a.parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(bad);
        match (name.as_str(), args.len()) {
            ("FC", 1) => Ok(LayerSpec::Dense { out: num(args[0])? }),
            ("CL", 1) => Ok(LayerSpec::Head { classes: num(args[0])? }),
            ("CN", 3..=5) => {
                let (mut stride, mut padding) = (1, 0);
                for extra in &args[3..] {
                    if let Some(v) = extra.strip_prefix('s') {
                        stride = num(v)?;
                    } else if let Some(v) = extra.strip_prefix('p') {
                        padding = v.parse().map_err(|_| bad())?;
                    } else {
                        return Err(bad());
                    }
                }
                Ok(LayerSpec::Conv {
                    in_ch: num(args[0])?,
                    out_ch: num(args[1])?,
                    kernel: num(args[2])?,
                    stride,
                    padding,
                })
            }
            _ => Err(bad()),
        }
    }
}

/// Architecture: input shape, layer recipes and the hidden activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub act: ActivationKind,
}

impl ArchSpec {
    /// Parses a whitespace- or `->`-separated layer list.
    pub fn parse(input_shape: Vec<usize>, layers: &str, act: ActivationKind) -> Result<Self> {
        let layers = layers
            .split(|c: char| c.is_whitespace() || c == '>' || c == ';')
            .map(|t| t.trim_end_matches('-'))
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            input_shape,
            layers,
            act,
        })
    }

    /// Weight shapes and conv geometries implied by the recipe.
    pub fn resolve(&self) -> Result<Vec<(LayerSpec, Vec<usize>, Option<ConvGeometry>)>> {
        let mut out = Vec::with_capacity(self.layers.len());
        // (channels, h, w) while spatial, flattened width afterwards.
        let mut spatial = match self.input_shape.as_slice() {
            [h, w] => Some((1, *h, *w)),
            [c, h, w] => Some((*c, *h, *w)),
            _ => None,
        };
        let mut width: usize = self.input_shape.iter().product();
        for (i, spec) in self.layers.iter().enumerate() {
            match *spec {
                LayerSpec::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    padding,
                } => {
                    let (c, h, w) = spatial.ok_or_else(|| {
                        Error::invalid(format!("layer {i}: convolution after a flattened stage"))
                    })?;
                    if c != in_ch {
                        return Err(Error::invalid(format!("layer {i}: expects {in_ch} channels, got {c}")));
                    }
                    let geom = ConvGeometry {
                        in_ch,
                        in_h: h,
                        in_w: w,
                        k_h: kernel,
                        k_w: kernel,
                        stride: (stride, stride),
                        padding: (padding, padding),
                    };
                    geom.validate()?;
                    spatial = Some((out_ch, geom.out_h(), geom.out_w()));
                    width = out_ch * geom.positions();
                    out.push((*spec, vec![out_ch, in_ch, kernel, kernel], Some(geom)));
                }
                LayerSpec::Dense { out: n } => {
                    out.push((*spec, vec![n, width], None));
                    spatial = None;
                    width = n;
                }
                LayerSpec::Head { classes } => {
                    if i + 1 != self.layers.len() {
                        return Err(Error::invalid("the head must be the last layer"));
                    }
                    out.push((*spec, vec![classes, width], None));
                    width = classes;
                }
            }
        }
        match self.layers.last() {
            Some(LayerSpec::Head { .. }) => Ok(out),
            _ => Err(Error::invalid("architecture must end with a CL(k) head")),
        }
    }

    /// Builds a model from per-layer raw weights produced by `weights(i, shape)`.
    pub fn build<T: Real>(
        &self,
        eps: T,
        mut weights: impl FnMut(usize, &[usize]) -> Tensor<T>,
    ) -> Result<GNetModel<T>> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, (spec, shape, geom)) in self.resolve()?.into_iter().enumerate() {
            let w = weights(i, &shape);
            layers.push(match spec {
                LayerSpec::Conv { .. } => Layer::Conv(ConvLayer::new(w, T::zero(), geom.unwrap(), self.act)?),
                LayerSpec::Dense { .. } => Layer::Dense(DenseLayer::new(w, T::zero(), self.act)?),
                LayerSpec::Head { .. } => Layer::Head(HeadLayer::new(w, T::zero())?),
            });
        }
        GNetModel::new(self.input_shape.clone(), layers, eps)
    }
}
