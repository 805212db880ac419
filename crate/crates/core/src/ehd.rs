//! Embedded hyperdimensional (EHD) networks.
//!
//! Each primal layer `act(W x' / norms)` becomes
//! `tau(sign(W E^T) sign(E x'))`: the weight rows are embedded once into
//! `N`-bit codes, and at inference the layer input is projected by the same
//! random matrix `E`, binarized, and scored with popcount inner products.
//! The `1/N` factor is dropped; `tau` is the identity for ASU, `max(., 0)`
//! for RASU and `sign` for TASU, and the head predicts `argmax |score|`.
//!
//! Deeper layers receive integer scores `z ~ N_prev y` (or bits `~ y` after a
//! sign layer). Their shift `c` acts on `y`, so it is folded into the
//! projection as `E z + (s c) rowsum(E)` with `s = N_prev` (or 1), which
//! keeps the integer part exact.
//!
//! Real network inputs are first converted to fixed point with a per-sample
//! power-of-two scale so that Rademacher projections are exact integer sums on
//! every code path.

use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::bits::{bip_words, sign_pack, signed_bitmat_vec, BitMatrix, BitVector};
use crate::error::{Error, Result};
use crate::gnet::{ConvGeometry, GNetModel, Layer};
use crate::rng::{gauss_matrix, rademacher_matrix, RngStream};
use crate::scalar::{gemm, Op, Real};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbedKind {
    Gaussian,
    Rademacher,
}

/// Random projection of one layer: kind, hyperdimension `N` and its stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedSpec {
    pub kind: EmbedKind,
    pub dim: usize,
    pub seed: u64,
    pub stream: u64,
}

impl EmbedSpec {
    pub fn new(kind: EmbedKind, dim: usize, seed: u64, stream: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("hyperdimension must be at least 1"));
        }
        Ok(Self { kind, dim, seed, stream })
    }

    /// One spec per layer, same kind and `N`, stream = layer index.
    pub fn per_layer(kind: EmbedKind, dim: usize, seed: u64, layers: usize) -> Result<Vec<Self>> {
        (0..layers).map(|l| Self::new(kind, dim, seed, l as u64)).collect()
    }
}

/// Stored projection `E` (`N x p`).
#[derive(Debug, Clone, PartialEq)]
pub enum Embed {
    Rademacher(BitMatrix),
    /// Regenerated from its `EmbedSpec` on load unless `stored` is set, in which
    /// case the floats are written to the model file.
    Gaussian { matrix: Tensor<f64>, stored: bool },
}

impl Embed {
    pub fn generate(spec: &EmbedSpec, cols: usize) -> Self {
        let mut rng = RngStream::new(spec.seed, spec.stream);
        match spec.kind {
            EmbedKind::Rademacher => Embed::Rademacher(rademacher_matrix(&mut rng, spec.dim, cols)),
            EmbedKind::Gaussian => Embed::Gaussian {
                matrix: gauss_matrix(&mut rng, spec.dim, cols),
                stored: false,
            },
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            Embed::Rademacher(m) => m.rows(),
            Embed::Gaussian { matrix, .. } => matrix.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Embed::Rademacher(m) => m.cols(),
            Embed::Gaussian { matrix, .. } => matrix.row_len(),
        }
    }

    /// Dense row-major copy.
    pub fn to_dense(&self) -> Vec<f64> {
        match self {
            Embed::Rademacher(m) => m.to_pm1(),
            Embed::Gaussian { matrix, .. } => matrix.data().to_vec(),
        }
    }

    /// Sequential row sums `sum_q E_iq`.
    fn row_sums(&self) -> Vec<f64> {
        match self {
            Embed::Rademacher(m) => m.row_sums().into_iter().map(|v| v as f64).collect(),
            Embed::Gaussian { matrix, .. } => (0..matrix.rows()).map(|i| matrix.row(i).iter().sum()).collect(),
        }
    }
}

/// Output map applied to the integer scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tau {
    Identity,
    Relu,
    Sign,
}

impl Tau {
    pub fn for_activation(act: ActivationKind) -> Self {
        match act {
            ActivationKind::Asu => Tau::Identity,
            ActivationKind::Rasu => Tau::Relu,
            ActivationKind::Tasu { .. } => Tau::Sign,
        }
    }

    fn apply(self, scores: Vec<i64>) -> Signal {
        match self {
            Tau::Identity => Signal::Int(scores),
            Tau::Relu => Signal::Int(scores.into_iter().map(|s| s.max(0)).collect()),
            Tau::Sign => Signal::Bits(sign_pack(&scores)),
        }
    }
}

/// What a layer consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputKind {
    /// The real network input.
    Real,
    /// Integer scores of an identity/ReLU layer of hyperdimension `scale`.
    Int { scale: u64 },
    /// Packed signs of a sign layer.
    Bits,
}

impl InputKind {
    fn name(self) -> &'static str {
        match self {
            InputKind::Real => "real",
            InputKind::Int { .. } => "int",
            InputKind::Bits => "bits",
        }
    }

    /// Multiplier `s` of the folded shift.
    fn shift_scale(self) -> f64 {
        match self {
            InputKind::Int { scale } => scale as f64,
            _ => 1.0,
        }
    }
}

/// Signal travelling between EHD layers.
#[derive(Debug, Clone, PartialEq)]
pub enum Signal {
    Real(Vec<f64>),
    Int(Vec<i64>),
    Bits(BitVector),
}

impl Signal {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Signal::Real(_) => "real",
            Signal::Int(_) => "int",
            Signal::Bits(_) => "bits",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Signal::Real(v) => v.len(),
            Signal::Int(v) => v.len(),
            Signal::Bits(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values as reals (bits as `+-1`).
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Signal::Real(v) => v.clone(),
            Signal::Int(v) => v.iter().map(|&x| x as f64).collect(),
            Signal::Bits(b) => b.to_signs().into_iter().map(|x| x as f64).collect(),
        }
    }
}

/// Fixed-point image of a real vector: `round(v * 2^e)` with the largest `e`
/// such that `max |v| 2^e <= 2^(52 - ceil(log2 terms))`, so that any signed
/// sum of `terms` entries is exact in both `i64` and `f64`.
pub fn quantize_input(v: &[f64], terms: usize) -> Result<Vec<i64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("EHD input".into()));
    }
    let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if m == 0.0 {
        return Ok(vec![0; v.len()]);
    }
    let bits = 52 - (usize::BITS - terms.max(1).saturating_sub(1).leading_zeros()) as i32;
    let limit = libm::ldexp(1.0, bits);
    let mut e = (limit / m).log2().floor() as i32;
    while libm::ldexp(m, e) > limit {
        e -= 1;
    }
    while libm::ldexp(m, e + 1) <= limit {
        e += 1;
    }
    Ok(v.iter().map(|&x| libm::ldexp(x, e).round() as i64).collect())
}

/// Dense or head layer of an EHD network.
#[derive(Debug, Clone, PartialEq)]
pub struct EhdDenseLayer {
    /// `n x N`, `sign(W E^T)`.
    pub codes: BitMatrix,
    /// `N x p`.
    pub embed: Embed,
    pub spec: EmbedSpec,
    pub c: f64,
    pub tau: Tau,
    pub input: InputKind,
}

impl EhdDenseLayer {
    pub fn outputs(&self) -> usize {
        self.codes.rows()
    }

    pub fn inputs(&self) -> usize {
        self.embed.cols()
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    /// Folded shift per projection row (zero for real inputs).
    fn shift_terms(&self) -> Option<Vec<f64>> {
        if self.input == InputKind::Real || self.c == 0.0 {
            return None;
        }
        let sc = self.input.shift_scale() * self.c;
        Some(self.embed.row_sums().into_iter().map(|r| sc * r).collect())
    }

    /// `E x'` for one input, computed with the packed kernels.
    pub fn project(&self, input: &Signal) -> Result<Vec<f64>> {
        self.check_input(input, 0)?;
        let mut proj: Vec<f64> = match (&self.embed, input) {
            (Embed::Rademacher(r), Signal::Real(x)) => {
                let q = quantize_input(&shifted(x, self.c), r.cols())?;
                signed_bitmat_vec(r, &q)?.into_iter().map(|v| v as f64).collect()
            }
            (Embed::Rademacher(r), Signal::Int(z)) => signed_bitmat_vec(r, z)?.into_iter().map(|v| v as f64).collect(),
            (Embed::Rademacher(r), Signal::Bits(t)) => r.bip_rows(t)?.into_iter().map(|v| v as f64).collect(),
            (Embed::Gaussian { matrix, .. }, s) => {
                let v = match s {
                    Signal::Real(x) => shifted(x, self.c),
                    other => other.to_f64(),
                };
                (0..matrix.rows())
                    .map(|i| matrix.row(i).iter().zip(&v).map(|(g, x)| g * x).sum())
                    .collect()
            }
        };
        if let Some(shift) = self.shift_terms() {
            for (p, s) in proj.iter_mut().zip(shift) {
                *p += s;
            }
        }
        Ok(proj)
    }

    fn check_input(&self, input: &Signal, layer: usize) -> Result<()> {
        let ok = matches!(
            (self.input, input),
            (InputKind::Real, Signal::Real(_)) | (InputKind::Int { .. }, Signal::Int(_)) | (InputKind::Bits, Signal::Bits(_))
        );
        if !ok {
            return Err(Error::SignalKind {
                layer,
                expected: self.input.name(),
                got: input.kind_name(),
            });
        }
        if input.len() != self.inputs() {
            return Err(Error::Length {
                left: self.inputs(),
                right: input.len(),
            });
        }
        Ok(())
    }

    /// Raw scores `bip(codes_i, sign(E x'))`.
    pub fn scores(&self, input: &Signal) -> Result<Vec<i64>> {
        let t = sign_pack(&self.project(input)?);
        self.codes.bip_rows(&t)
    }

    pub fn forward(&self, input: &Signal) -> Result<Signal> {
        Ok(self.tau.apply(self.scores(input)?))
    }
}

fn shifted(x: &[f64], c: f64) -> Vec<f64> {
    x.iter().map(|v| v + c).collect()
}

/// Convolution of an EHD network; the filters are embedded, and the input is
/// cross-correlated with `N` random kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct EhdConvLayer {
    /// `filters x N`.
    pub codes: BitMatrix,
    /// `N x patch_len`, one random kernel per row.
    pub embed: Embed,
    pub spec: EmbedSpec,
    pub geom: ConvGeometry,
    pub c: f64,
    pub tau: Tau,
    pub input: InputKind,
}

impl EhdConvLayer {
    pub fn filters(&self) -> usize {
        self.codes.rows()
    }

    pub fn outputs(&self) -> usize {
        self.filters() * self.geom.positions()
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    /// `positions x N` projections of every shifted, zero-padded patch.
    pub fn project(&self, input: &Signal, dense_embed: &[f64]) -> Result<Vec<f64>> {
        let g = &self.geom;
        if input.len() != g.input_len() {
            return Err(Error::Length {
                left: g.input_len(),
                right: input.len(),
            });
        }
        let (pos, k, n) = (g.positions(), g.patch_len(), self.dim());
        let table = g.source_table();
        let values: Vec<f64> = match (self.input, input) {
            (InputKind::Real, Signal::Real(x)) => {
                // The shift applies before padding; fixed point for exactness.
                let xs = shifted(x, self.c);
                match self.spec.kind {
                    EmbedKind::Rademacher => quantize_input(&xs, k)?.into_iter().map(|v| v as f64).collect(),
                    EmbedKind::Gaussian => xs,
                }
            }
            (InputKind::Int { .. }, Signal::Int(_)) | (InputKind::Bits, Signal::Bits(_)) => input.to_f64(),
            (kind, s) => {
                return Err(Error::SignalKind {
                    layer: 0,
                    expected: kind.name(),
                    got: s.kind_name(),
                })
            }
        };
        let cols: Vec<f64> = table.iter().map(|s| s.map_or(0.0, |i| values[i])).collect();
        let mut proj = vec![0.0; pos * n];
        gemm(Op::N, Op::T, pos, n, k, 1.0, &cols, dense_embed, 0.0, &mut proj);
        if self.input != InputKind::Real && self.c != 0.0 {
            let sc = self.input.shift_scale() * self.c;
            let mask: Vec<f64> = table.iter().map(|s| if s.is_some() { 1.0 } else { 0.0 }).collect();
            let mut sums = vec![0.0; pos * n];
            gemm(Op::N, Op::T, pos, n, k, 1.0, &mask, dense_embed, 0.0, &mut sums);
            for (p, s) in proj.iter_mut().zip(sums) {
                *p += sc * s;
            }
        }
        Ok(proj)
    }

    fn scores_with(&self, input: &Signal, dense_embed: &[f64]) -> Result<Vec<i64>> {
        let (pos, n, f) = (self.geom.positions(), self.dim(), self.filters());
        let proj = self.project(input, dense_embed)?;
        let mut out = vec![0i64; f * pos];
        for k in 0..pos {
            let t = sign_pack(&proj[k * n..(k + 1) * n]);
            for fi in 0..f {
                out[fi * pos + k] = bip_words(self.codes.row_words(fi), t.words(), n);
            }
        }
        Ok(out)
    }

    /// Scores laid out `filters x positions`.
    pub fn scores(&self, input: &Signal) -> Result<Vec<i64>> {
        self.scores_with(input, &self.embed.to_dense())
    }

    pub fn forward(&self, input: &Signal) -> Result<Signal> {
        Ok(self.tau.apply(self.scores(input)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EhdLayer {
    Dense(EhdDenseLayer),
    Conv(EhdConvLayer),
    /// Identity output; prediction reads `argmax |score|`.
    Head(EhdDenseLayer),
}

impl EhdLayer {
    pub fn spec(&self) -> &EmbedSpec {
        match self {
            EhdLayer::Dense(l) | EhdLayer::Head(l) => &l.spec,
            EhdLayer::Conv(l) => &l.spec,
        }
    }

    pub fn codes(&self) -> &BitMatrix {
        match self {
            EhdLayer::Dense(l) | EhdLayer::Head(l) => &l.codes,
            EhdLayer::Conv(l) => &l.codes,
        }
    }

    pub fn codes_mut(&mut self) -> &mut BitMatrix {
        match self {
            EhdLayer::Dense(l) | EhdLayer::Head(l) => &mut l.codes,
            EhdLayer::Conv(l) => &mut l.codes,
        }
    }

    pub fn embed(&self) -> &Embed {
        match self {
            EhdLayer::Dense(l) | EhdLayer::Head(l) => &l.embed,
            EhdLayer::Conv(l) => &l.embed,
        }
    }

    pub fn embed_mut(&mut self) -> &mut Embed {
        match self {
            EhdLayer::Dense(l) | EhdLayer::Head(l) => &mut l.embed,
            EhdLayer::Conv(l) => &mut l.embed,
        }
    }

    pub fn tau(&self) -> Tau {
        match self {
            EhdLayer::Dense(l) | EhdLayer::Head(l) => l.tau,
            EhdLayer::Conv(l) => l.tau,
        }
    }

    pub fn input(&self) -> InputKind {
        match self {
            EhdLayer::Dense(l) | EhdLayer::Head(l) => l.input,
            EhdLayer::Conv(l) => l.input,
        }
    }

    pub fn shift(&self) -> f64 {
        match self {
            EhdLayer::Dense(l) | EhdLayer::Head(l) => l.c,
            EhdLayer::Conv(l) => l.c,
        }
    }

    pub fn input_len(&self) -> usize {
        match self {
            EhdLayer::Dense(l) | EhdLayer::Head(l) => l.inputs(),
            EhdLayer::Conv(l) => l.geom.input_len(),
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            EhdLayer::Dense(l) | EhdLayer::Head(l) => l.outputs(),
            EhdLayer::Conv(l) => l.outputs(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            EhdLayer::Dense(_) => "dense",
            EhdLayer::Conv(_) => "conv",
            EhdLayer::Head(_) => "head",
        }
    }

    fn forward(&self, input: &Signal, layer: usize) -> Result<Signal> {
        let r = match self {
            EhdLayer::Dense(l) | EhdLayer::Head(l) => l.forward(input),
            EhdLayer::Conv(l) => l.forward(input),
        };
        r.map_err(|e| match e {
            Error::SignalKind { expected, got, .. } => Error::SignalKind { layer, expected, got },
            other => other,
        })
    }
}

/// A converted network.
#[derive(Debug, Clone, PartialEq)]
pub struct EhdModel {
    input_shape: Vec<usize>,
    layers: Vec<EhdLayer>,
}

impl EhdModel {
    pub fn new(input_shape: Vec<usize>, layers: Vec<EhdLayer>) -> Result<Self> {
        if !matches!(layers.last(), Some(EhdLayer::Head(_))) {
            return Err(Error::invalid("the last EHD layer must be the head"));
        }
        let mut width: usize = input_shape.iter().product();
        let mut expected = InputKind::Real;
        for (i, l) in layers.iter().enumerate() {
            if l.input_len() != width {
                return Err(Error::invalid(format!("EHD layer {i} expects {} inputs, got {width}", l.input_len())));
            }
            if l.input() != expected {
                return Err(Error::SignalKind {
                    layer: i,
                    expected: expected.name(),
                    got: l.input().name(),
                });
            }
            if l.codes().cols() != l.spec().dim || l.embed().rows() != l.spec().dim {
                return Err(Error::invalid(format!("EHD layer {i}: hyperdimension mismatch")));
            }
            if matches!(l, EhdLayer::Head(h) if h.tau != Tau::Identity) {
                return Err(Error::invalid("the EHD head must use the identity output"));
            }
            width = l.output_len();
            expected = match l.tau() {
                Tau::Sign => InputKind::Bits,
                _ => InputKind::Int {
                    scale: l.spec().dim as u64,
                },
            };
        }
        Ok(Self { input_shape, layers })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn layers(&self) -> &[EhdLayer] {
        &self.layers
    }

    /// Code and embed bits may be edited; shapes must be kept.
    pub fn layers_mut(&mut self) -> &mut [EhdLayer] {
        &mut self.layers
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, EhdLayer::output_len)
    }

    /// Per-sample cascade: head scores and every layer's output signal.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<i64>, Vec<Signal>)> {
        self.forward_from(0, Signal::Real(x.to_vec()))
    }

    /// Runs layers `start..` on a signal of the kind layer `start` consumes.
    pub fn forward_from(&self, start: usize, input: Signal) -> Result<(Vec<i64>, Vec<Signal>)> {
        if start == 0 && input.len() != self.input_len() {
            return Err(Error::Length {
                left: self.input_len(),
                right: input.len(),
            });
        }
        let mut trace = Vec::with_capacity(self.layers.len() - start);
        let mut cur = input;
        for (i, layer) in self.layers.iter().enumerate().skip(start) {
            cur = layer.forward(&cur, i)?;
            trace.push(cur.clone());
        }
        match cur {
            Signal::Int(scores) => Ok((scores, trace)),
            _ => unreachable!("the head emits integer scores"),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax_abs(&self.forward(x)?.0))
    }

    /// Bits `sign(E_1 (x + c))` entering the first layer's scoring stage.
    pub fn encode(&self, x: &[f64]) -> Result<BitVector> {
        match &self.layers[0] {
            EhdLayer::Dense(l) | EhdLayer::Head(l) => Ok(sign_pack(&l.project(&Signal::Real(x.to_vec()))?)),
            EhdLayer::Conv(_) => Err(Error::invalid("hypervector access needs a dense first layer")),
        }
    }

    /// Completes inference from a (possibly corrupted) first-layer encoding.
    pub fn predict_from_encoding(&self, t: &BitVector) -> Result<usize> {
        let first = match &self.layers[0] {
            EhdLayer::Dense(l) | EhdLayer::Head(l) => l,
            EhdLayer::Conv(_) => return Err(Error::invalid("hypervector access needs a dense first layer")),
        };
        let out = first.tau.apply(first.codes.bip_rows(t)?);
        if self.layers.len() == 1 {
            return match out {
                Signal::Int(s) => Ok(argmax_abs(&s)),
                _ => unreachable!("head is identity"),
            };
        }
        Ok(argmax_abs(&self.forward_from(1, out)?.0))
    }

    /// Dense copies of every embed, for batched inference.
    pub fn prepare(&self) -> Prepared<'_> {
        Prepared {
            model: self,
            dense: self.layers.iter().map(|l| l.embed().to_dense()).collect(),
            shifts: self
                .layers
                .iter()
                .map(|l| match l {
                    EhdLayer::Dense(d) | EhdLayer::Head(d) => d.shift_terms(),
                    EhdLayer::Conv(_) => None,
                })
                .collect(),
        }
    }
}

/// Index of the largest `|score|`, lowest index on ties.
pub fn argmax_abs(scores: &[i64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.unsigned_abs() > scores[best].unsigned_abs() {
            best = i;
        }
    }
    best
}

/// Batched inference with dense projection matrices. Rademacher results equal
/// the per-sample path exactly; Gaussian projections may round differently in
/// the last place, which only matters for projections within an ulp of zero.
pub struct Prepared<'a> {
    model: &'a EhdModel,
    dense: Vec<Vec<f64>>,
    shifts: Vec<Option<Vec<f64>>>,
}

impl Prepared<'_> {
    pub fn model(&self) -> &EhdModel {
        self.model
    }

    /// Head scores for a batch (`B x input`).
    pub fn scores(&self, x: &Tensor<f64>) -> Result<Vec<Vec<i64>>> {
        let d = self.model.input_len();
        if x.row_len() != d {
            return Err(Error::Length {
                left: d,
                right: x.row_len(),
            });
        }
        let batch = x.rows();
        let mut signals: Vec<Signal> = (0..batch).map(|s| Signal::Real(x.row(s).to_vec())).collect();
        for (li, layer) in self.model.layers.iter().enumerate() {
            signals = match layer {
                EhdLayer::Conv(l) => signals
                    .iter()
                    .map(|s| Ok(l.tau.apply(l.scores_with(s, &self.dense[li])?)))
                    .collect::<Result<_>>()?,
                EhdLayer::Dense(l) | EhdLayer::Head(l) => self.dense_batch(l, li, &signals)?,
            };
        }
        Ok(signals
            .into_iter()
            .map(|s| match s {
                Signal::Int(v) => v,
                _ => unreachable!("the head emits integer scores"),
            })
            .collect())
    }

    fn dense_batch(&self, l: &EhdDenseLayer, li: usize, inputs: &[Signal]) -> Result<Vec<Signal>> {
        let (p, n_dim) = (l.inputs(), l.dim());
        let batch = inputs.len();
        let mut v = Vec::with_capacity(batch * p);
        for s in inputs {
            l.check_input(s, li)?;
            match (s, l.spec.kind) {
                (Signal::Real(x), EmbedKind::Rademacher) => {
                    v.extend(quantize_input(&shifted(x, l.c), p)?.into_iter().map(|q| q as f64))
                }
                (Signal::Real(x), EmbedKind::Gaussian) => v.extend(shifted(x, l.c)),
                (other, _) => v.extend(other.to_f64()),
            }
        }
        let mut proj = vec![0.0; batch * n_dim];
        gemm(Op::N, Op::T, batch, n_dim, p, 1.0, &v, &self.dense[li], 0.0, &mut proj);
        let shift = &self.shifts[li];
        proj.chunks_mut(n_dim)
            .map(|row| {
                if let Some(sh) = shift {
                    for (a, b) in row.iter_mut().zip(sh) {
                        *a += b;
                    }
                }
                let t = sign_pack(row);
                Ok(l.tau.apply(l.codes.bip_rows(&t)?))
            })
            .collect()
    }

    /// `argmax |score|` per sample.
    pub fn predict(&self, x: &Tensor<f64>) -> Result<Vec<usize>> {
        Ok(self.scores(x)?.iter().map(|s| argmax_abs(s)).collect())
    }
}

/// Embeds one weight matrix (`n x p`, raw) into `sign(W E^T)` codes.
fn embed_codes(w: &[f64], n: usize, p: usize, embed: &Embed) -> BitMatrix {
    let dim = embed.rows();
    let dense = embed.to_dense();
    let mut prod = vec![0.0; n * dim];
    gemm(Op::N, Op::T, n, dim, p, 1.0, w, &dense, 0.0, &mut prod);
    let mut codes = BitMatrix::zeros(n, dim);
    for (i, row) in prod.chunks(dim).enumerate() {
        codes.set_row(i, &sign_pack(row)).expect("row width is the hyperdimension");
    }
    codes
}

/// Converts one primal dense (or head) layer.
pub fn convert_dense(
    w: &Tensor<f64>,
    c: f64,
    tau: Tau,
    input: InputKind,
    spec: &EmbedSpec,
) -> Result<EhdDenseLayer> {
    if spec.dim == 0 {
        return Err(Error::invalid("hyperdimension must be at least 1"));
    }
    if !w.is_finite() || !c.is_finite() {
        return Err(Error::NonFinite("weights to convert".into()));
    }
    let (n, p) = (w.rows(), w.row_len());
    let embed = Embed::generate(spec, p);
    Ok(EhdDenseLayer {
        codes: embed_codes(w.data(), n, p, &embed),
        embed,
        spec: *spec,
        c,
        tau,
        input,
    })
}

/// Converts one primal convolution (filter-side embedding).
pub fn convert_conv(
    w: &Tensor<f64>,
    c: f64,
    geom: ConvGeometry,
    tau: Tau,
    input: InputKind,
    spec: &EmbedSpec,
) -> Result<EhdConvLayer> {
    if spec.dim == 0 {
        return Err(Error::invalid("hyperdimension must be at least 1"));
    }
    if !w.is_finite() || !c.is_finite() {
        return Err(Error::NonFinite("weights to convert".into()));
    }
    let (f, k) = (w.rows(), geom.patch_len());
    let embed = Embed::generate(spec, k);
    Ok(EhdConvLayer {
        codes: embed_codes(w.data(), f, k, &embed),
        embed,
        spec: *spec,
        geom,
        c,
        tau,
        input,
    })
}

/// Converts every layer with its own spec.
pub fn convert_model<T: Real>(model: &GNetModel<T>, specs: &[EmbedSpec]) -> Result<EhdModel> {
    if specs.len() != model.layers().len() {
        return Err(Error::Length {
            left: model.layers().len(),
            right: specs.len(),
        });
    }
    let mut input = InputKind::Real;
    let mut layers = Vec::with_capacity(specs.len());
    for (layer, spec) in model.layers().iter().zip(specs) {
        let w = layer.weights().cast::<f64>();
        let c = layer.shift().as_f64();
        let converted = match layer {
            Layer::Dense(l) => EhdLayer::Dense(convert_dense(&w, c, Tau::for_activation(l.act), input, spec)?),
            Layer::Conv(l) => EhdLayer::Conv(convert_conv(&w, c, l.geom, Tau::for_activation(l.act), input, spec)?),
            Layer::Head(_) => EhdLayer::Head(convert_dense(&w, c, Tau::Identity, input, spec)?),
        };
        input = match converted.tau() {
            Tau::Sign => InputKind::Bits,
            _ => InputKind::Int { scale: spec.dim as u64 },
        };
        layers.push(converted);
    }
    EhdModel::new(model.input_shape().to_vec(), layers)
}

/// Fraction of samples on which `argmax |score|` equals the label.
pub fn ehd_accuracy(model: &EhdModel, x: &Tensor<f64>, labels: &[usize]) -> Result<f64> {
    let preds = predict_batched(model, x, 512)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len().max(1) as f64)
}

/// Predictions for a whole batch, processed in chunks of `chunk` samples.
pub fn predict_batched(model: &EhdModel, x: &Tensor<f64>, chunk: usize) -> Result<Vec<usize>> {
    let prepared = model.prepare();
    let idx: Vec<usize> = (0..x.rows()).collect();
    let mut out = Vec::with_capacity(x.rows());
    for c in idx.chunks(chunk.max(1)) {
        out.extend(prepared.predict(&x.select_rows(c))?);
    }
    Ok(out)
}

/// Memory and operation counts of one inference, per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer: usize,
    pub kind: String,
    /// Input width `m` (patch length for convolutions).
    pub m: usize,
    /// Output rows `n` (filters for convolutions).
    pub n: usize,
    pub hyperdim: usize,
    /// `(m + n) N`.
    pub ehd_bits: u64,
    /// Bits actually kept in the model (Gaussian embeds stored as a seed).
    pub ehd_bits_stored: u64,
    /// `m n F`.
    pub fp_bits: u64,
    pub xor_words: u64,
    pub popcount_words: u64,
    /// Integer additions of the projection and score stages.
    pub int_adds: u64,
    /// Real multiplications left in the EHD layer (Gaussian projections).
    pub ehd_real_mults: u64,
    pub fp_real_mults: u64,
    pub fp_real_adds: u64,
    pub fp_arcsin: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub float_bits: u32,
    pub layers: Vec<LayerCost>,
    pub total: LayerCost,
}

/// Size of a stored Gaussian spec: seed, stream, rows, cols.
const SEED_SPEC_BITS: u64 = 4 * 64;

/// Per-layer cost accounting with `float_bits` bits per primal real.
pub fn cost_report<T: Real>(model: &GNetModel<T>, ehd: &EhdModel, float_bits: u32) -> Result<CostReport> {
    if model.layers().len() != ehd.layers().len() {
        return Err(Error::Length {
            left: model.layers().len(),
            right: ehd.layers().len(),
        });
    }
    let f = float_bits as u64;
    let words = |bits: usize| bits.div_ceil(64) as u64;
    let mut layers = Vec::with_capacity(ehd.layers().len());
    for (i, (pl, el)) in model.layers().iter().zip(ehd.layers()).enumerate() {
        let dim = el.spec().dim;
        let nn = dim as u64;
        // positions at which the layer is evaluated
        let (m, n, pos) = match el {
            EhdLayer::Dense(l) | EhdLayer::Head(l) => (l.inputs(), l.outputs(), 1usize),
            EhdLayer::Conv(l) => (l.geom.patch_len(), l.filters(), l.geom.positions()),
        };
        let (mu, nu, pu) = (m as u64, n as u64, pos as u64);
        let embed_bits = match el.embed() {
            Embed::Rademacher(_) => mu * nn,
            Embed::Gaussian { stored: true, .. } => mu * nn * 64,
            Embed::Gaussian { .. } => SEED_SPEC_BITS,
        };
        let gaussian = el.spec().kind == EmbedKind::Gaussian;
        let bits_input = el.input() == InputKind::Bits;
        // projection stage: N rows of m entries at every position
        let (proj_xor, proj_int_adds, proj_mults) = match (gaussian, bits_input, el) {
            (false, true, EhdLayer::Dense(_) | EhdLayer::Head(_)) => (nn * words(m), nn, 0),
            (false, _, _) => (0, pu * nn * mu, 0),
            (true, _, _) => (0, 0, pu * nn * mu),
        };
        let score_words = pu * nu * words(dim);
        let act_calls = if matches!(pl, Layer::Head(_)) { 0 } else { pu * nu };
        layers.push(LayerCost {
            layer: i,
            kind: el.kind_name().to_string(),
            m,
            n,
            hyperdim: dim,
            ehd_bits: (mu + nu) * nn,
            ehd_bits_stored: nu * nn + embed_bits,
            fp_bits: mu * nu * f,
            xor_words: proj_xor + score_words,
            popcount_words: proj_xor + score_words,
            int_adds: proj_int_adds + pu * nu,
            ehd_real_mults: proj_mults,
            fp_real_mults: pu * nu * mu + pu * (mu + nu),
            fp_real_adds: pu * nu * mu + pu * mu,
            fp_arcsin: act_calls,
        });
    }
    let total = layers.iter().fold(
        LayerCost {
            layer: layers.len(),
            kind: "total".into(),
            m: 0,
            n: 0,
            hyperdim: 0,
            ehd_bits: 0,
            ehd_bits_stored: 0,
            fp_bits: 0,
            xor_words: 0,
            popcount_words: 0,
            int_adds: 0,
            ehd_real_mults: 0,
            fp_real_mults: 0,
            fp_real_adds: 0,
            fp_arcsin: 0,
        },
        |mut t, l| {
            t.ehd_bits += l.ehd_bits;
            t.ehd_bits_stored += l.ehd_bits_stored;
            t.fp_bits += l.fp_bits;
            t.xor_words += l.xor_words;
            t.popcount_words += l.popcount_words;
            t.int_adds += l.int_adds;
            t.ehd_real_mults += l.ehd_real_mults;
            t.fp_real_mults += l.fp_real_mults;
            t.fp_real_adds += l.fp_real_adds;
            t.fp_arcsin += l.fp_arcsin;
            t
        },
    );
    Ok(CostReport {
        float_bits,
        layers,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnet::{ArchSpec, DenseLayer, HeadLayer};
    use crate::train::init_model;

    fn spec(kind: EmbedKind, dim: usize) -> EmbedSpec {
        EmbedSpec::new(kind, dim, 42, 7).unwrap()
    }

    #[test]
    fn scalar_weight_codes_are_projection_signs() {
        let w = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        for kind in [EmbedKind::Gaussian, EmbedKind::Rademacher] {
            let l = convert_dense(&w, 0.0, Tau::Identity, InputKind::Real, &spec(kind, 100)).unwrap();
            let col: Vec<f64> = l.embed.to_dense();
            assert_eq!(l.codes.row(0), sign_pack(&col));
        }
    }

    #[test]
    fn conversion_is_deterministic_and_matches_naive_reference() {
        let mut rng = RngStream::new(1, 0);
        let w = Tensor::from_fn(&[2, 3], |_| rng.normal());
        let s = spec(EmbedKind::Gaussian, 8);
        let a = convert_dense(&w, 0.1, Tau::Relu, InputKind::Real, &s).unwrap();
        let b = convert_dense(&w, 0.1, Tau::Relu, InputKind::Real, &s).unwrap();
        assert_eq!(a, b);
        let g = gauss_matrix(&mut RngStream::new(42, 7), 8, 3);
        for i in 0..2 {
            let norm = w.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            for j in 0..8 {
                let dot: f64 = (0..3).map(|q| w.row(i)[q] / norm * g.row(j)[q]).sum();
                assert_eq!(a.codes.get(i, j), dot >= 0.0);
            }
        }
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(EmbedSpec::new(EmbedKind::Rademacher, 0, 0, 0).is_err());
    }

    #[test]
    fn matching_encoding_scores_n() {
        let w = Tensor::new(vec![1, 3], vec![0.2, -0.4, 0.9]).unwrap();
        let l = convert_dense(&w, 0.0, Tau::Identity, InputKind::Real, &spec(EmbedKind::Rademacher, 96)).unwrap();
        // the input parallel to the row produces the row's own code
        assert_eq!(l.scores(&Signal::Real(vec![0.2, -0.4, 0.9])).unwrap(), vec![96]);
        assert_eq!(l.scores(&Signal::Real(vec![-0.2, 0.4, -0.9])).unwrap(), vec![-96]);
    }

    #[test]
    fn zero_relu_input_maps_to_all_ones_encoding() {
        let mut rng = RngStream::new(3, 0);
        let w = Tensor::from_fn(&[4, 5], |_| rng.normal());
        let l = convert_dense(&w, 0.0, Tau::Relu, InputKind::Int { scale: 64 }, &spec(EmbedKind::Rademacher, 70)).unwrap();
        let scores = l.scores(&Signal::Int(vec![0; 5])).unwrap();
        assert_eq!(scores, l.codes.row_sums());
        match l.forward(&Signal::Int(vec![0; 5])).unwrap() {
            Signal::Int(v) => assert!(v.iter().zip(&scores).all(|(a, b)| *a == (*b).max(0))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn signal_kind_is_checked() {
        let w = Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5);
        let l = convert_dense(&w, 0.0, Tau::Sign, InputKind::Bits, &spec(EmbedKind::Rademacher, 16)).unwrap();
        assert!(matches!(l.forward(&Signal::Int(vec![1, 2, 3])), Err(Error::SignalKind { .. })));
        assert!(l.forward(&Signal::Bits(BitVector::ones(3))).is_ok());
    }

    #[test]
    fn quantization_is_exact_and_scale_free() {
        let q = quantize_input(&[0.5, -0.25, 0.0], 4).unwrap();
        assert_eq!(q, vec![1 << 50, -(1 << 49), 0]);
        let tiny = [libm::ldexp(0.5, -990), libm::ldexp(-1.0, -990)];
        assert_eq!(quantize_input(&tiny, 4).unwrap(), quantize_input(&[0.5, -1.0], 4).unwrap());
        assert_eq!(quantize_input(&[0.0; 3], 3).unwrap(), vec![0; 3]);
        assert!(quantize_input(&[f64::INFINITY], 1).is_err());
    }

    #[test]
    fn argmax_abs_takes_lowest_index_on_ties() {
        assert_eq!(argmax_abs(&[3, -5, 5, 1]), 1);
        assert_eq!(argmax_abs(&[0, 0]), 0);
        assert_eq!(argmax_abs(&[i64::MIN, 3]), 0);
    }

    #[test]
    fn head_must_be_identity() {
        let w = Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5);
        let mut h = convert_dense(&w, 0.0, Tau::Identity, InputKind::Real, &spec(EmbedKind::Rademacher, 16)).unwrap();
        h.tau = Tau::Relu;
        assert!(EhdModel::new(vec![3], vec![EhdLayer::Head(h)]).is_err());
    }

    #[test]
    fn batched_and_per_sample_paths_agree() {
        for act in [ActivationKind::Asu, ActivationKind::Rasu, ActivationKind::Tasu { kappa: 5.0 }] {
            let arch = ArchSpec::parse(vec![2, 5, 5], "CN(2,3,3,s2,p1) FC(6) CL(3)", act).unwrap();
            let mut rng = RngStream::new(9, 0);
            let mut m: GNetModel<f64> = init_model(&arch, 1e-6, &mut rng).unwrap();
            for (i, l) in m.layers_mut().iter_mut().enumerate() {
                *l.shift_mut() = 0.1 * i as f64 - 0.05;
            }
            let specs = EmbedSpec::per_layer(EmbedKind::Rademacher, 100, 5, 3).unwrap();
            let e = convert_model(&m, &specs).unwrap();
            let x = Tensor::from_fn(&[6, 50], |_| rng.uniform());
            let batched = e.prepare().scores(&x).unwrap();
            for s in 0..6 {
                assert_eq!(e.forward(x.row(s)).unwrap().0, batched[s], "{act:?}");
            }
        }
    }

    #[test]
    fn model_conversion_preserves_shapes() {
        let w1 = Tensor::from_fn(&[4, 3], |i| (i as f64).cos());
        let w2 = Tensor::from_fn(&[2, 4], |i| (i as f64).sin());
        let m = GNetModel::new(
            vec![3],
            vec![
                Layer::Dense(DenseLayer::new(w1, 0.0, ActivationKind::Tasu { kappa: 2.0 }).unwrap()),
                Layer::Head(HeadLayer::new(w2, 0.0).unwrap()),
            ],
            1e-6,
        )
        .unwrap();
        let e = convert_model(&m, &EmbedSpec::per_layer(EmbedKind::Gaussian, 32, 1, 2).unwrap()).unwrap();
        assert_eq!(e.layers().len(), 2);
        assert_eq!(e.layers()[1].input(), InputKind::Bits);
        assert_eq!(e.classes(), 2);
        assert!(convert_model(&m, &EmbedSpec::per_layer(EmbedKind::Gaussian, 32, 1, 1).unwrap()).is_err());
    }
}
