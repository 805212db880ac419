//! Corruption experiments: bit flips in EHD codes and embeddings, in the
//! floating-point bit patterns of G-Net weights, and in first-layer
//! hypervectors.

use serde::{Deserialize, Serialize};

use crate::bits::BitVector;
use crate::ehd::{ehd_accuracy, EhdModel, Embed};
use crate::error::{Error, Result};
use crate::gnet::GNetModel;
use crate::io::Width;
use crate::rng::{mix_seed, RngStream};
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::verify::SweepResult;

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("flip fraction {rho} outside [0, 1]")));
    }
    Ok(())
}

/// `round(rho * bits)`.
pub fn flip_count(rho: f64, bits: usize) -> usize {
    ((rho * bits as f64).round() as usize).min(bits)
}

/// Calls `flip` on exactly `count` distinct indices of `0..bits`, drawn
/// uniformly without replacement. Above half the range the complement is
/// drawn instead.
pub fn for_each_flip(bits: usize, count: usize, rng: &mut RngStream, mut flip: impl FnMut(usize)) {
    assert!(count <= bits);
    if count * 2 <= bits {
        rng.sample_indices(bits, count).into_iter().for_each(flip);
    } else {
        let mut keep = vec![false; bits];
        for i in rng.sample_indices(bits, bits - count) {
            keep[i] = true;
        }
        keep.iter().enumerate().filter(|(_, &k)| !k).for_each(|(i, _)| flip(i));
    }
}

/// Copy of `ehd` with exactly `round(rho * bits)` uniformly chosen bits
/// inverted in every layer, where a layer's bits are its codes plus, when
/// `include_embeds` is set, its Rademacher embedding.
pub fn flip_ehd_bits(ehd: &EhdModel, rho: f64, include_embeds: bool, rng: &mut RngStream) -> Result<EhdModel> {
    check_rho(rho)?;
    let mut out = ehd.clone();
    for layer in out.layers_mut() {
        let code_bits = layer.codes().len_bits();
        let embed_bits = match layer.embed() {
            Embed::Rademacher(m) if include_embeds => m.len_bits(),
            _ => 0,
        };
        let total = code_bits + embed_bits;
        let mut picks = Vec::with_capacity(flip_count(rho, total));
        for_each_flip(total, flip_count(rho, total), rng, |i| picks.push(i));
        for i in picks {
            if i < code_bits {
                layer.codes_mut().flip_linear(i);
            } else if let Embed::Rademacher(m) = layer.embed_mut() {
                m.flip_linear(i - code_bits);
            }
        }
    }
    Ok(out)
}

/// Bit flips per layer between two EHD models of the same shape
/// (codes plus Rademacher embeddings).
pub fn ehd_bit_distance(a: &EhdModel, b: &EhdModel) -> Result<Vec<usize>> {
    if a.layers().len() != b.layers().len() {
        return Err(Error::Length {
            left: a.layers().len(),
            right: b.layers().len(),
        });
    }
    a.layers()
        .iter()
        .zip(b.layers())
        .map(|(x, y)| {
            let mut d = x.codes().hamming(y.codes())?;
            if let (Embed::Rademacher(p), Embed::Rademacher(q)) = (x.embed(), y.embed()) {
                d += p.hamming(q)?;
            }
            Ok(d)
        })
        .collect()
}

/// Copy of `model` whose weights, stored as `width` floating-point bit
/// patterns, have exactly `round(rho * total bits)` uniformly chosen bits
/// inverted over the whole network. Untouched weights keep their value;
/// non-finite results are kept.
pub fn flip_float_bits<T: Real>(model: &GNetModel<T>, rho: f64, width: Width, rng: &mut RngStream) -> Result<GNetModel<T>> {
    check_rho(rho)?;
    let bits_per = match width {
        Width::F32 => 32,
        Width::F64 => 64,
    };
    let counts: Vec<usize> = model.layers().iter().map(|l| l.weights().len()).collect();
    let total = counts.iter().sum::<usize>() * bits_per;
    let mut picks = Vec::new();
    for_each_flip(total, flip_count(rho, total), rng, |i| picks.push(i));
    picks.sort_unstable();
    let mut out = model.clone();
    let mut offsets = Vec::with_capacity(counts.len());
    let mut acc = 0;
    for c in &counts {
        offsets.push(acc);
        acc += c * bits_per;
    }
    let mut k = 0;
    while k < picks.len() {
        let weight = picks[k] / bits_per;
        let mut mask = 0u64;
        while k < picks.len() && picks[k] / bits_per == weight {
            mask |= 1 << (picks[k] % bits_per);
            k += 1;
        }
        let li = offsets.partition_point(|&o| o <= weight * bits_per) - 1;
        let j = weight - offsets[li] / bits_per;
        let slot = &mut out.layers_mut()[li].weights_mut().data_mut()[j];
        let v = slot.as_f64();
        *slot = T::of(match width {
            Width::F32 => f32::from_bits((v as f32).to_bits() ^ mask as u32) as f64,
            Width::F64 => f64::from_bits(v.to_bits() ^ mask),
        });
    }
    Ok(out)
}

/// Prediction after flipping exactly `round(rho * N_1)` bits of the
/// first-layer encoding `sign(E_1 (x + c))`.
pub fn corrupt_hypervector(ehd: &EhdModel, x: &[f64], rho: f64, rng: &mut RngStream) -> Result<usize> {
    check_rho(rho)?;
    let mut t: BitVector = ehd.encode(x)?;
    let n = t.len();
    for_each_flip(n, flip_count(rho, n), rng, |i| t.flip(i));
    ehd.predict_from_encoding(&t)
}

/// Accuracy of a G-Net where rows with non-finite logits count as wrong.
pub fn gnet_accuracy<T: Real>(model: &GNetModel<T>, x: &Tensor<f64>, labels: &[usize]) -> Result<f64> {
    let mut hits = 0;
    let idx: Vec<usize> = (0..x.rows()).collect();
    for chunk in idx.chunks(256) {
        let preds = model.predict(&x.select_rows(chunk).cast::<T>())?;
        hits += chunk.iter().zip(preds).filter(|(&i, p)| *p == Some(labels[i])).count();
    }
    Ok(hits as f64 / labels.len().max(1) as f64)
}

/// What a robustness sweep corrupts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CorruptionMode {
    /// EHD codes (and Rademacher embeddings unless excluded) in every layer.
    Weights { include_embeds: bool },
    /// The first-layer hypervector of each sample.
    Hypervector,
    /// Floating-point bit patterns of the G-Net weights.
    FloatBits { width: Width },
}

/// Model under test in a robustness sweep.
#[derive(Debug, Clone, Copy)]
pub enum RobustTarget<'a> {
    Ehd(&'a EhdModel),
    Float(&'a GNetModel<f64>),
}

/// Flip fraction, trial count and root seed of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub mode: CorruptionMode,
    pub trials: usize,
    pub seed: u64,
}

/// Mean/std accuracy per flip fraction. Trial `t` at grid index `g` draws its
/// flips from stream `(mix_seed(seed, g), t)`.
pub fn robustness_sweep(
    target: RobustTarget<'_>,
    x: &Tensor<f64>,
    labels: &[usize],
    grid: &[f64],
    cfg: &CorruptionConfig,
) -> Result<SweepResult> {
    if cfg.trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    if x.rows() != labels.len() {
        return Err(Error::Length {
            left: x.rows(),
            right: labels.len(),
        });
    }
    let name = match cfg.mode {
        CorruptionMode::Weights { .. } => "weights",
        CorruptionMode::Hypervector => "hypervector",
        CorruptionMode::FloatBits { .. } => "floatbits",
    };
    let mut out = SweepResult::new(name, "rho");
    for (g, &rho) in grid.iter().enumerate() {
        check_rho(rho)?;
        let mut accs = Vec::with_capacity(cfg.trials);
        for t in 0..cfg.trials {
            let mut rng = RngStream::new(mix_seed(cfg.seed, g as u64), t as u64);
            let acc = match (cfg.mode, target) {
                (CorruptionMode::Weights { include_embeds }, RobustTarget::Ehd(m)) => {
                    ehd_accuracy(&flip_ehd_bits(m, rho, include_embeds, &mut rng)?, x, labels)?
                }
                (CorruptionMode::Hypervector, RobustTarget::Ehd(m)) => {
                    let mut hits = 0;
                    for (r, &l) in labels.iter().enumerate() {
                        hits += (corrupt_hypervector(m, x.row(r), rho, &mut rng)? == l) as usize;
                    }
                    hits as f64 / labels.len().max(1) as f64
                }
                (CorruptionMode::FloatBits { width }, RobustTarget::Float(m)) => {
                    gnet_accuracy(&flip_float_bits(m, rho, width, &mut rng)?, x, labels)?
                }
                _ => return Err(Error::invalid("corruption mode does not apply to this model kind")),
            };
            accs.push(acc);
        }
        out.push(rho, &accs, None)?;
    }
    out.params.insert("trials".into(), cfg.trials as f64);
    Ok(out)
}
