//! Monte Carlo harness for the concentration, isometry and consistency
//! statements behind the EHD construction.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::activation::{asu, rasu, tasu};
use crate::bits::sign_pack;
use crate::ehd::{convert_dense, EhdModel, EmbedKind, EmbedSpec, InputKind, Signal, Tau};
use crate::error::{Error, Result};
use crate::gnet::GNetModel;
use crate::io::{report_json, sweep_csv, SweepRow};
use crate::rng::{gauss_matrix, mix_seed, RngStream};
use crate::scalar::{gemm, Op};
use crate::tensor::Tensor;
use crate::train::{backward, batch_loss, LossSettings};

/// Floor of the denominator in [`relative_error`].
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// `|a - b| / max(|a|, |b|, REL_ERR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(layer, index or None for the shift, analytic, numeric)` of the worst coordinate.
    pub worst: (usize, Option<usize>, f64, f64),
}

/// Compares analytic gradients with central differences at `coords`
/// uniformly drawn parameter coordinates (all of them if `coords` is larger).
pub fn grad_check(
    model: &GNetModel<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
    settings: LossSettings,
    h: f64,
    coords: usize,
    rng: &mut RngStream,
) -> Result<GradCheck> {
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let analytic = backward(model, x, labels, settings)?.grads;
    let mut all: Vec<(usize, Option<usize>)> = Vec::new();
    for (li, layer) in model.layers().iter().enumerate() {
        all.extend((0..layer.weights().len()).map(|j| (li, Some(j))));
        all.push((li, None));
    }
    let picks: Vec<usize> = if coords >= all.len() {
        (0..all.len()).collect()
    } else {
        rng.sample_indices(all.len(), coords)
    };
    let mut probe = model.clone();
    let mut out = GradCheck {
        checked: 0,
        max_rel_err: 0.0,
        worst: (0, None, 0.0, 0.0),
    };
    for &p in &picks {
        let (li, j) = all[p];
        let original = param(&probe, li, j);
        set_param(&mut probe, li, j, original + h);
        let up = batch_loss(&probe, x, labels, settings)?;
        set_param(&mut probe, li, j, original - h);
        let down = batch_loss(&probe, x, labels, settings)?;
        set_param(&mut probe, li, j, original);
        let numeric = (up - down) / (2.0 * h);
        let a = match j {
            Some(j) => analytic.w[li].data()[j],
            None => analytic.c[li],
        };
        let err = relative_error(a, numeric);
        if out.checked == 0 || err > out.max_rel_err {
            out.max_rel_err = err;
            out.worst = (li, j, a, numeric);
        }
        out.checked += 1;
    }
    Ok(out)
}

fn param(m: &GNetModel<f64>, li: usize, j: Option<usize>) -> f64 {
    let l = &m.layers()[li];
    match j {
        Some(j) => l.weights().data()[j],
        None => l.shift(),
    }
}

fn set_param(m: &mut GNetModel<f64>, li: usize, j: Option<usize>, v: f64) {
    let l = &mut m.layers_mut()[li];
    match j {
        Some(j) => l.weights_mut().data_mut()[j] = v,
        None => *l.shift_mut() = v,
    }
}

/// Statistics of a sweep over a grid (hyperdimension, dimension or flip
/// fraction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub name: String,
    pub grid_name: String,
    pub rows: Vec<SweepRow>,
    /// Largest observed value per row.
    pub max: Vec<f64>,
    /// Trials meeting the row's bound, when one applies.
    pub within_bound: Vec<Option<usize>>,
    /// Setup scalars such as derived `kappa` or the identity residual.
    pub params: BTreeMap<String, f64>,
}

impl SweepResult {
    pub fn new(name: &str, grid_name: &str) -> Self {
        Self {
            name: name.into(),
            grid_name: grid_name.into(),
            rows: Vec::new(),
            max: Vec::new(),
            within_bound: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    /// Appends one row from raw per-trial values.
    pub fn push(&mut self, grid: f64, values: &[f64], bound: Option<f64>) -> Result<()> {
        if values.is_empty() {
            return Err(Error::invalid("a sweep cell needs at least one trial"));
        }
        let (mean, std) = mean_std(values);
        self.rows.push(SweepRow {
            grid,
            mean,
            std,
            trials: values.len(),
            bound,
        });
        self.max.push(values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        self.within_bound
            .push(bound.map(|b| values.iter().filter(|&&v| v <= b).count()));
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.grid).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean).collect()
    }

    /// Least-squares slope of `ln mean` against `ln grid`.
    pub fn loglog_slope(&self) -> Result<f64> {
        loglog_slope(&self.grid(), &self.means())
    }

    pub fn to_csv(&self) -> String {
        sweep_csv(&self.rows)
    }

    pub fn to_json(&self) -> Result<String> {
        report_json("sweep", self)
    }
}

/// Mean and sample standard deviation (0 for a single value). The mean is
/// accumulated as offsets from the first value, so equal values give that
/// value exactly.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = v.len() as f64;
    let mean = v[0] + v.iter().map(|x| x - v[0]).sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("a slope needs at least two paired points"));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("log-log slope needs positive finite values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    Ok(sxy / sxx)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_unit(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() || (norm(v) - 1.0).abs() > 1e-8 {
        return Err(Error::invalid(format!("{what} must be a unit vector")));
    }
    Ok(())
}

#[inline]
fn sgn(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// `(2/pi) asin(<u, v>)`.
pub fn grothendieck_target(u: &[f64], v: &[f64]) -> f64 {
    asu(dot(u, v))
}

/// Subset sums of a vector over bytes of a Rademacher row: entry `[j][m]`
/// is `sum_b (+-) v[8j + b]`, with `+` where bit `b` of `m` is set.
struct ByteSums {
    tables: Vec<[f64; 256]>,
}

impl ByteSums {
    fn new(v: &[f64]) -> Self {
        let tables = v
            .chunks(8)
            .map(|chunk| {
                let mut t = [0.0; 256];
                for (m, slot) in t.iter_mut().enumerate() {
                    *slot = chunk
                        .iter()
                        .enumerate()
                        .map(|(b, &x)| if m >> b & 1 == 1 { x } else { -x })
                        .sum();
                }
                t
            })
            .collect();
        Self { tables }
    }

    fn eval(&self, words: &[u64]) -> f64 {
        self.tables
            .iter()
            .enumerate()
            .map(|(j, t)| t[(words[j / 8] >> (8 * (j % 8)) & 0xff) as usize])
            .sum()
    }
}

/// Monte Carlo estimate `(1/N) sum_j sign(r_j.u) sign(r_j.v)` with fresh
/// Gaussian or Rademacher rows `r_j`.
pub fn grothendieck_mc(u: &[f64], v: &[f64], samples: usize, kind: EmbedKind, rng: &mut RngStream) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Length {
            left: u.len(),
            right: v.len(),
        });
    }
    check_unit(u, "u")?;
    check_unit(v, "v")?;
    if samples == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let p = u.len();
    let mut acc = 0i64;
    match kind {
        EmbedKind::Gaussian => {
            let mut g = vec![0.0; p];
            for _ in 0..samples {
                g.iter_mut().for_each(|x| *x = rng.normal());
                acc += (sgn(dot(&g, u)) * sgn(dot(&g, v))) as i64;
            }
        }
        EmbedKind::Rademacher => {
            let (su, sv) = (ByteSums::new(u), ByteSums::new(v));
            let mut words = vec![0u64; p.div_ceil(64)];
            for _ in 0..samples {
                words.iter_mut().for_each(|w| *w = rng.next_u64());
                acc += (sgn(su.eval(&words)) * sgn(sv.eval(&words))) as i64;
            }
        }
    }
    Ok(acc as f64 / samples as f64)
}

/// `g(w, w') = sum_i (w_i^2 + w'_i^2)^{3/2}`.
pub fn g_dispersion(w: &[f64], w2: &[f64]) -> f64 {
    w.iter().zip(w2).map(|(a, b)| (a * a + b * b).powf(1.5)).sum()
}

/// Unit component of `v` orthogonal to `u`; `None` when `v` is parallel to `u`.
pub fn orthogonal_part(u: &[f64], v: &[f64]) -> Option<Vec<f64>> {
    let d = dot(u, v);
    let r: Vec<f64> = v.iter().zip(u).map(|(a, b)| a - d * b).collect();
    let n = norm(&r);
    (n > 1e-12).then(|| r.into_iter().map(|x| x / n).collect())
}

/// Absolute constant of the approximate Grothendieck bound.
pub const RADEMACHER_BOUND_CONST: f64 = 264.0;

/// Random pair of dispersed unit vectors with `<u, v>` uniform in
/// `[-0.9, 0.9]`.
pub fn dispersed_pair(p: usize, rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
    let u = rng.unit_vector(p);
    let w = loop {
        if let Some(w) = orthogonal_part(&u, &rng.unit_vector(p)) {
            break w;
        }
    };
    let rho = 1.8 * rng.uniform() - 0.9;
    let s = (1.0 - rho * rho).sqrt();
    let v: Vec<f64> = u.iter().zip(&w).map(|(a, b)| rho * a + s * b).collect();
    let n = norm(&v);
    (u, v.into_iter().map(|x| x / n).collect())
}

/// Mean `|MC - (2/pi) asin(<u,v>)|` for Rademacher rows over dispersed pairs,
/// per dimension `p`; the bound column is `264 g(u, v_perp)` averaged over
/// the pairs (mean `g` itself is in `params` as `g_mean@<p>`).
pub fn rademacher_error_curve(grid: &[usize], trials: usize, samples: usize, seed: u64) -> Result<SweepResult> {
    if grid.iter().any(|&p| p < 4) {
        return Err(Error::invalid("every dimension in the grid must be at least 4"));
    }
    let mut out = SweepResult::new("rademacher", "p");
    for &p in grid {
        let mut errs = Vec::with_capacity(trials);
        let mut gs = Vec::with_capacity(trials);
        for t in 0..trials {
            let mut rng = RngStream::new(mix_seed(seed, p as u64), t as u64);
            let (u, v) = dispersed_pair(p, &mut rng);
            let vp = orthogonal_part(&u, &v).ok_or_else(|| Error::invalid("degenerate pair"))?;
            gs.push(g_dispersion(&u, &vp));
            let est = grothendieck_mc(&u, &v, samples, EmbedKind::Rademacher, &mut rng)?;
            errs.push((est - grothendieck_target(&u, &v)).abs());
        }
        let g_mean = mean_std(&gs).0;
        out.params.insert(format!("g_mean@{p}"), g_mean);
        out.push(p as f64, &errs, Some(RADEMACHER_BOUND_CONST * g_mean))?;
    }
    out.params.insert("samples".into(), samples as f64);
    Ok(out)
}

/// Exact `E[sign(r.u) sign(r.v)] - (2/pi) asin(<u, v>)` for Rademacher `r`,
/// `u` with entries `+-p^{-1/2}` and `v` equal to `u` with `k` entries negated.
pub fn rademacher_lattice_bias(p: usize, k: usize) -> Result<f64> {
    if k > p || p == 0 {
        return Err(Error::invalid("need 0 <= k <= p and p >= 1"));
    }
    // r.u = (S + T)/sqrt(p), r.v = (S - T)/sqrt(p) with S, T sums of p - k
    // and k independent signs.
    let pmf = |m: usize| -> Vec<f64> {
        let mut ln_fact = vec![0.0f64; m + 1];
        for i in 1..=m {
            ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
        }
        (0..=m)
            .map(|j| (ln_fact[m] - ln_fact[j] - ln_fact[m - j] - m as f64 * std::f64::consts::LN_2).exp())
            .collect()
    };
    let (ps, pt) = (pmf(p - k), pmf(k));
    let mut e = 0.0;
    for (i, a) in ps.iter().enumerate() {
        let s = 2 * i as i64 - (p - k) as i64;
        for (j, b) in pt.iter().enumerate() {
            let t = 2 * j as i64 - k as i64;
            e += a * b * sgn((s + t) as f64) * sgn((s - t) as f64);
        }
    }
    Ok(e - asu((p as f64 - 2.0 * k as f64) / p as f64))
}

/// Geodesic distance `angle(x, y) / pi` of two unit vectors, as
/// `2 atan2(|x - y|, |x + y|) / pi`.
pub fn geodesic(x: &[f64], y: &[f64]) -> f64 {
    let d: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let s: f64 = x.iter().zip(y).map(|(a, b)| (a + b) * (a + b)).sum::<f64>().sqrt();
    2.0 * d.atan2(s) / PI
}

/// Per-pair deviation `|D_H(sign Gx, sign Gy) - D_G(x, y)|` and the residual
/// of `D_H = sin^2((pi/2) D_G(codes))` for a fixed Gaussian `G`.
pub fn isometry_deviations(g: &Tensor<f64>, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<(Vec<f64>, f64)> {
    let (big_n, n) = (g.rows(), g.row_len());
    let mut devs = Vec::with_capacity(pairs.len());
    let mut identity = 0.0f64;
    for chunk in pairs.chunks(64) {
        let mut pts = Vec::with_capacity(2 * chunk.len() * n);
        for (x, y) in chunk {
            if x.len() != n || y.len() != n {
                return Err(Error::Length { left: n, right: x.len() });
            }
            pts.extend_from_slice(x);
            pts.extend_from_slice(y);
        }
        let rows = 2 * chunk.len();
        let mut proj = vec![0.0; rows * big_n];
        gemm(Op::N, Op::T, rows, big_n, n, 1.0, &pts, g.data(), 0.0, &mut proj);
        for (k, (x, y)) in chunk.iter().enumerate() {
            let a = &proj[2 * k * big_n..(2 * k + 1) * big_n];
            let b = &proj[(2 * k + 1) * big_n..(2 * k + 2) * big_n];
            let (ca, cb) = (sign_pack(a), sign_pack(b));
            let dh = ca.hamming(&cb)? as f64 / big_n as f64;
            devs.push((dh - geodesic(x, y)).abs());
            let scale = (big_n as f64).sqrt();
            let ua: Vec<f64> = ca.to_signs().into_iter().map(|s| s as f64 / scale).collect();
            let ub: Vec<f64> = cb.to_signs().into_iter().map(|s| s as f64 / scale).collect();
            let s = (PI / 2.0 * geodesic(&ua, &ub)).sin();
            identity = identity.max((dh - s * s).abs());
        }
    }
    Ok((devs, identity))
}

/// Hamming-versus-geodesic deviation of sign embeddings of `pairs` random
/// sphere pairs in `n` dimensions, per hyperdimension `N`. `max` holds the
/// largest deviation; `params["identity_max_err"]` the worst residual of the
/// `sin^2` identity.
pub fn near_isometry_sweep(n: usize, grid: &[usize], pairs: usize, seed: u64) -> Result<SweepResult> {
    if n == 0 || pairs == 0 {
        return Err(Error::invalid("dimension and pair count must be positive"));
    }
    let mut rng = RngStream::new(seed, 0);
    let points: Vec<(Vec<f64>, Vec<f64>)> = (0..pairs).map(|_| (rng.unit_vector(n), rng.unit_vector(n))).collect();
    let mut out = SweepResult::new("isometry", "N");
    let mut identity = 0.0f64;
    for &big_n in grid {
        if big_n == 0 {
            return Err(Error::invalid("hyperdimension must be at least 1"));
        }
        let g = gauss_matrix(&mut RngStream::new(mix_seed(seed, big_n as u64), 1), big_n, n);
        let (devs, id) = isometry_deviations(&g, &points)?;
        identity = identity.max(id);
        out.push(big_n as f64, &devs, None)?;
    }
    out.params.insert("identity_max_err".into(), identity);
    out.params.insert("n".into(), n as f64);
    Ok(out)
}

/// Primal layer compared in [`layer_discrepancy_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LayerTarget {
    Asu,
    Rasu,
    /// Sharpness and hyperdimension follow from `eps` and `l_min`.
    Tasu { eps: f64, l_min: f64 },
}

/// Settings of [`layer_discrepancy_sweep`]; `c` is the confidence parameter
/// of the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSweep {
    pub target: LayerTarget,
    pub kind: EmbedKind,
    pub trials: usize,
    pub c: f64,
    pub seed: u64,
}

/// `sqrt(2 (c + ln 2n) n / N)`.
pub fn rasu_layer_bound(n: usize, big_n: usize, c: f64) -> f64 {
    (2.0 * (c + (2.0 * n as f64).ln()) * n as f64 / big_n as f64).sqrt()
}

/// Sharpness `(pi / 2 l_min) ln(4 sqrt(n) / eps)` and hyperdimension
/// `ceil(8 (c + ln 2n) n kappa^2 / eps^2)` for a TASU layer with `n` outputs.
pub fn tasu_theory(n: usize, eps: f64, l_min: f64, c: f64) -> Result<(f64, usize)> {
    let rn = (n as f64).sqrt();
    if n == 0 || !(eps > 0.0 && eps <= rn) {
        return Err(Error::invalid("target discrepancy must lie in (0, sqrt(n)]"));
    }
    if !(l_min > 0.0 && l_min <= 1.0) || !(c > 0.0) {
        return Err(Error::invalid("l_min must lie in (0, 1] and c must be positive"));
    }
    let kappa = PI / (2.0 * l_min) * (4.0 * rn / eps).ln();
    let big_n = (8.0 * (c + (2.0 * n as f64).ln()) * n as f64 * kappa * kappa / (eps * eps)).ceil();
    Ok((kappa, big_n as usize))
}

fn unit_rows(w: &Tensor<f64>) -> Result<Tensor<f64>> {
    let mut out = w.clone();
    for i in 0..out.rows() {
        let r = out.row_mut(i);
        let n = norm(r);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::invalid("weight rows must be nonzero and finite"));
        }
        r.iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

/// Smallest `|w_i . x|` over the rows of a row-normalized `w`.
pub fn min_margin(w: &Tensor<f64>, x: &[f64]) -> f64 {
    (0..w.rows()).map(|i| dot(w.row(i), x).abs()).fold(f64::INFINITY, f64::min)
}

/// Draws unit inputs until `count` of them satisfy `|w_i . x| >= l_min` for
/// every row (after normalizing rows), giving up after `max_draws`.
pub fn screened_inputs(w: &Tensor<f64>, count: usize, l_min: f64, max_draws: usize, rng: &mut RngStream) -> Result<Vec<Vec<f64>>> {
    let wn = unit_rows(w)?;
    let mut out = Vec::with_capacity(count);
    let mut best = 0.0f64;
    for _ in 0..max_draws {
        if out.len() == count {
            break;
        }
        let x = rng.unit_vector(wn.row_len());
        let m = min_margin(&wn, &x);
        best = best.max(m);
        if m >= l_min {
            out.push(x);
        }
    }
    if out.len() < count {
        return Err(Error::Margin {
            observed: best,
            required: l_min,
        });
    }
    Ok(out)
}

/// Discrepancy between a primal layer `y = act(W x)` (rows of `W` and `x`
/// normalized) and its embedding: `|y~/N - y|` for ASU/RASU with the
/// confidence bound as the row bound, `|y~ - y|` for TASU with the target
/// `eps` as the bound. Each row pools `trials x inputs` values; trial `t` at
/// hyperdimension `N` uses embedding stream `(mix_seed(seed, N), t)`.
pub fn layer_discrepancy_sweep(w: &Tensor<f64>, inputs: &[Vec<f64>], grid: &[usize], cfg: &LayerSweep) -> Result<SweepResult> {
    if inputs.is_empty() || cfg.trials == 0 {
        return Err(Error::invalid("need at least one input and one trial"));
    }
    let wn = unit_rows(w)?;
    let (n, p) = (wn.rows(), wn.row_len());
    let xs = inputs
        .iter()
        .map(|x| {
            if x.len() != p {
                return Err(Error::Length { left: p, right: x.len() });
            }
            let nx = norm(x);
            if !(nx > 0.0) || !nx.is_finite() {
                return Err(Error::invalid("inputs must be nonzero and finite"));
            }
            Ok(x.iter().map(|v| v / nx).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = SweepResult::new("layer", "N");
    let (tau, kappa) = match cfg.target {
        LayerTarget::Asu => (Tau::Identity, None),
        LayerTarget::Rasu => (Tau::Relu, None),
        LayerTarget::Tasu { eps, l_min } => {
            let (kappa, theory_n) = tasu_theory(n, eps, l_min, cfg.c)?;
            for x in &xs {
                let m = min_margin(&wn, x);
                if m < l_min {
                    return Err(Error::Margin {
                        observed: m,
                        required: l_min,
                    });
                }
            }
            out.params.insert("kappa".into(), kappa);
            out.params.insert("theory_N".into(), theory_n as f64);
            out.params.insert("eps".into(), eps);
            out.params.insert("l_min".into(), l_min);
            (Tau::Sign, Some(kappa))
        }
    };
    let primal: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| {
            (0..n)
                .map(|i| {
                    let u = dot(wn.row(i), x);
                    match (cfg.target, kappa) {
                        (LayerTarget::Rasu, _) => rasu(u),
                        (_, Some(k)) => tasu(u, k),
                        _ => asu(u),
                    }
                })
                .collect()
        })
        .collect();
    for &big_n in grid {
        let mut vals = Vec::with_capacity(cfg.trials * xs.len());
        for t in 0..cfg.trials {
            let spec = EmbedSpec::new(cfg.kind, big_n, mix_seed(cfg.seed, big_n as u64), t as u64)?;
            let layer = convert_dense(&wn, 0.0, tau, InputKind::Real, &spec)?;
            for (x, y) in xs.iter().zip(&primal) {
                let emb = layer.forward(&Signal::Real(x.clone()))?.to_f64();
                let scale = if kappa.is_some() { 1.0 } else { big_n as f64 };
                let d: f64 = emb.iter().zip(y).map(|(a, b)| (a / scale - b).powi(2)).sum::<f64>().sqrt();
                vals.push(d);
            }
        }
        let bound = match cfg.target {
            LayerTarget::Tasu { eps, .. } => eps,
            _ => rasu_layer_bound(n, big_n, cfg.c),
        };
        out.push(big_n as f64, &vals, Some(bound))?;
    }
    out.params.insert("n".into(), n as f64);
    out.params.insert("p".into(), p as f64);
    out.params.insert("c".into(), cfg.c);
    Ok(out)
}

/// Per-layer `|delta_l|` statistics of a network trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTrace {
    pub samples: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub max: Vec<f64>,
}

impl DeltaTrace {
    /// Mean growth per layer: least-squares slope of mean `|delta_l|` over `l`.
    pub fn growth(&self) -> f64 {
        let n = self.mean.len() as f64;
        if self.mean.len() < 2 {
            return 0.0;
        }
        let mx = (n + 1.0) / 2.0;
        let my = self.mean.iter().sum::<f64>() / n;
        let sxy: f64 = self.mean.iter().enumerate().map(|(i, y)| (i as f64 + 1.0 - mx) * (y - my)).sum();
        let sxx: f64 = (0..self.mean.len()).map(|i| (i as f64 + 1.0 - mx).powi(2)).sum();
        sxy / sxx
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.mean.windows(2).all(|w| w[1] >= w[0])
    }
}

/// `| a/|a| - b/|b| |`, with a zero vector mapping to zero.
pub fn normalized_delta(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    let unit = |v: f64, n: f64| if n > 0.0 { v / n } else { 0.0 };
    a.iter()
        .zip(b)
        .map(|(x, y)| (unit(*x, na) - unit(*y, nb)).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Per-layer traces of the primal network on one sample: every hidden
/// output, then `(2/pi) asin` of the head's cosines (the quantity the
/// embedded head estimates).
pub fn primal_trace(gnet: &GNetModel<f64>, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    let (logits, trace) = gnet.forward(&Tensor::new(vec![1, x.len()], x.to_vec())?)?;
    let mut out: Vec<Vec<f64>> = trace.into_iter().map(|t| t.into_data()).collect();
    out.push(logits.data().iter().map(|&u| asu(u)).collect());
    Ok(out)
}

fn trace_stats(deltas: Vec<Vec<f64>>) -> DeltaTrace {
    let layers = deltas.first().map_or(0, |d| d.len());
    let mut t = DeltaTrace {
        samples: deltas.len(),
        mean: Vec::with_capacity(layers),
        std: Vec::with_capacity(layers),
        max: Vec::with_capacity(layers),
    };
    for l in 0..layers {
        let col: Vec<f64> = deltas.iter().map(|d| d[l]).collect();
        let (m, s) = mean_std(&col);
        t.mean.push(m);
        t.std.push(s);
        t.max.push(col.iter().copied().fold(0.0, f64::max));
    }
    t
}

/// `|delta_l|` between the primal trace and the EHD integer/sign trace for
/// every layer and input row.
pub fn network_delta_trace(gnet: &GNetModel<f64>, ehd: &EhdModel, inputs: &Tensor<f64>) -> Result<DeltaTrace> {
    if gnet.layers().len() != ehd.layers().len() {
        return Err(Error::Length {
            left: gnet.layers().len(),
            right: ehd.layers().len(),
        });
    }
    if inputs.rows() == 0 {
        return Err(Error::invalid("need at least one input"));
    }
    let mut deltas = Vec::with_capacity(inputs.rows());
    for r in 0..inputs.rows() {
        let x = inputs.row(r);
        let primal = primal_trace(gnet, x)?;
        let (_, emb) = ehd.forward(x)?;
        deltas.push(primal.iter().zip(&emb).map(|(y, s)| normalized_delta(&s.to_f64(), y)).collect());
    }
    Ok(trace_stats(deltas))
}

/// Trace of two primal networks against each other (zero for identical nets).
pub fn primal_delta_trace(a: &GNetModel<f64>, b: &GNetModel<f64>, inputs: &Tensor<f64>) -> Result<DeltaTrace> {
    let mut deltas = Vec::with_capacity(inputs.rows());
    for r in 0..inputs.rows() {
        let (ta, tb) = (primal_trace(a, inputs.row(r))?, primal_trace(b, inputs.row(r))?);
        deltas.push(ta.iter().zip(&tb).map(|(x, y)| normalized_delta(x, y)).collect());
    }
    Ok(trace_stats(deltas))
}

/// Distortion envelope of `beta^{-1} |ASU(Wx) - ASU(Wy)|^2 - |x - y|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsometryProbe {
    pub n: usize,
    pub p: usize,
    pub pairs: usize,
    pub beta_inv: f64,
    pub min: f64,
    pub max: f64,
}

impl IsometryProbe {
    pub fn max_abs(&self) -> f64 {
        self.min.abs().max(self.max.abs())
    }
}

/// `pi^2 p / (4 (sqrt n + sqrt p)^2)`.
pub fn asu_beta_inv(n: usize, p: usize) -> f64 {
    let s = (n as f64).sqrt() + (p as f64).sqrt();
    PI * PI * p as f64 / (4.0 * s * s)
}

fn ball_point(p: usize, rng: &mut RngStream) -> Vec<f64> {
    let r = rng.uniform().powf(1.0 / p as f64);
    rng.unit_vector(p).into_iter().map(|v| v * r).collect()
}

/// Draws `W` with rows `g_i / |g_i|` and reports the distortion envelope
/// over `pairs` pairs drawn uniformly in the unit ball.
pub fn asu_isometry_probe(n: usize, p: usize, pairs: usize, rng: &mut RngStream) -> Result<IsometryProbe> {
    if n == 0 || p == 0 || pairs == 0 {
        return Err(Error::invalid("dimensions and pair count must be positive"));
    }
    let w = unit_rows(&gauss_matrix(rng, n, p))?;
    let beta_inv = asu_beta_inv(n, p);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut wx = vec![0.0; n];
    let mut wy = vec![0.0; n];
    for _ in 0..pairs {
        let (x, y) = (ball_point(p, rng), ball_point(p, rng));
        gemm(Op::N, Op::N, n, 1, p, 1.0, w.data(), &x, 0.0, &mut wx);
        gemm(Op::N, Op::N, n, 1, p, 1.0, w.data(), &y, 0.0, &mut wy);
        let d = isometry_distortion(&wx, &wy, &x, &y, beta_inv);
        lo = lo.min(d);
        hi = hi.max(d);
    }
    Ok(IsometryProbe {
        n,
        p,
        pairs,
        beta_inv,
        min: lo,
        max: hi,
    })
}

/// `beta_inv |ASU(wx) - ASU(wy)|^2 - |x - y|^2` from precomputed products.
pub fn isometry_distortion(wx: &[f64], wy: &[f64], x: &[f64], y: &[f64], beta_inv: f64) -> f64 {
    let a: f64 = wx.iter().zip(wy).map(|(s, t)| (asu(*s) - asu(*t)).powi(2)).sum();
    let b: f64 = x.iter().zip(y).map(|(s, t)| (s - t).powi(2)).sum();
    beta_inv * a - b
}
