//! Model files, configuration text and report emission.
//!
//! Model files: 4-byte magic (`GNET` or `EHDG`), `u16` format version, then
//! little-endian records, closed by the CRC-32 of everything after the magic.
//! Bit matrices use the in-memory packing (64-bit words, LSB first).

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::activation::ActivationKind;
use crate::bits::BitMatrix;
use crate::ehd::{EhdConvLayer, EhdDenseLayer, EhdLayer, EhdModel, Embed, EmbedKind, EmbedSpec, InputKind, Tau};
use crate::error::{Error, Result};
use crate::gnet::{ConvGeometry, ConvLayer, DenseLayer, GNetModel, HeadLayer, Layer};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const GNET_MAGIC: &[u8; 4] = b"GNET";
pub const EHD_MAGIC: &[u8; 4] = b"EHDG";
pub const FORMAT_VERSION: u16 = 1;
/// Version of the JSON report layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Precision of the reals in a G-Net file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum Width {
    F32,
    F64,
}

impl Width {
    fn byte(self) -> u8 {
        match self {
            Width::F32 => 4,
            Width::F64 => 8,
        }
    }

    pub fn of<T: Real>() -> Self {
        if T::BITS == 32 {
            Width::F32
        } else {
            Width::F64
        }
    }
}

/// Writes `bytes` to `path` through a sibling temporary file, so a failed
/// write never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    let res = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: &[u8; 4]) -> Self {
        let mut buf = magic.to_vec();
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        Self { buf }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("extent fits in u32");
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn real(&mut self, v: f64, width: Width) {
        match width {
            Width::F32 => self.buf.extend_from_slice(&(v as f32).to_le_bytes()),
            Width::F64 => self.f64(v),
        }
    }

    fn shape(&mut self, s: &[usize]) {
        self.u32(s.len());
        for &d in s {
            self.u32(d);
        }
    }

    fn bits(&mut self, m: &BitMatrix) {
        self.u32(m.rows());
        self.u32(m.cols());
        for &w in m.words() {
            self.u64(w);
        }
    }

    fn geom(&mut self, g: &ConvGeometry) {
        for v in [g.in_ch, g.in_h, g.in_w, g.k_h, g.k_w, g.stride.0, g.stride.1, g.padding.0, g.padding.1] {
            self.u32(v);
        }
    }

    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf[4..]);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic, version and checksum; positions after the header.
    fn open(buf: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if buf.len() < 10 {
            return Err(Error::Format("file too short".into()));
        }
        if &buf[..4] != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&buf[..4]),
                String::from_utf8_lossy(magic)
            )));
        }
        let body = &buf[..buf.len() - 4];
        let stored = u32::from_le_bytes(buf[buf.len() - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&body[4..]);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        Ok(Self { buf: body, pos: 6 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Format("truncated record".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn real(&mut self, width: Width) -> Result<f64> {
        match width {
            Width::F32 => Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as f64),
            Width::F64 => self.f64(),
        }
    }

    fn shape(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()?;
        if n > 8 {
            return Err(Error::Format(format!("implausible rank {n}")));
        }
        (0..n).map(|_| self.u32()).collect()
    }

    fn bits(&mut self) -> Result<BitMatrix> {
        let (rows, cols) = (self.u32()?, self.u32()?);
        let words = rows
            .checked_mul(cols.div_ceil(64))
            .filter(|&w| w * 8 <= self.buf.len())
            .ok_or_else(|| Error::Format("bit matrix larger than the file".into()))?;
        let data = (0..words).map(|_| self.u64()).collect::<Result<Vec<_>>>()?;
        BitMatrix::from_words(rows, cols, data)
    }

    fn geom(&mut self) -> Result<ConvGeometry> {
        let v = (0..9).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let g = ConvGeometry {
            in_ch: v[0],
            in_h: v[1],
            in_w: v[2],
            k_h: v[3],
            k_w: v[4],
            stride: (v[5], v[6]),
            padding: (v[7], v[8]),
        };
        g.validate()?;
        Ok(g)
    }

    fn tensor<T: Real>(&mut self, width: Width) -> Result<Tensor<T>> {
        let shape = self.shape()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len
            .filter(|&l| l * width.byte() as usize <= self.buf.len())
            .ok_or_else(|| Error::Format("tensor larger than the file".into()))?;
        let data = (0..len).map(|_| self.real(width).map(T::of)).collect::<Result<Vec<_>>>()?;
        Tensor::new(shape, data)
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn write_act(w: &mut Writer, act: ActivationKind) {
    match act {
        ActivationKind::Asu => {
            w.u8(0);
            w.f64(0.0);
        }
        ActivationKind::Rasu => {
            w.u8(1);
            w.f64(0.0);
        }
        ActivationKind::Tasu { kappa } => {
            w.u8(2);
            w.f64(kappa);
        }
    }
}

fn read_act(r: &mut Reader) -> Result<ActivationKind> {
    let (tag, kappa) = (r.u8()?, r.f64()?);
    let act = match tag {
        0 => ActivationKind::Asu,
        1 => ActivationKind::Rasu,
        2 => ActivationKind::Tasu { kappa },
        t => return Err(Error::Format(format!("unknown activation tag {t}"))),
    };
    if !act.is_valid() {
        return Err(Error::Format(format!("invalid activation {act:?}")));
    }
    Ok(act)
}

/// Serializes a G-Net with reals of the given width.
pub fn gnet_to_bytes<T: Real>(model: &GNetModel<T>, width: Width) -> Vec<u8> {
    let mut w = Writer::new(GNET_MAGIC);
    w.u8(width.byte());
    w.f64(model.eps().as_f64());
    w.shape(model.input_shape());
    w.u32(model.layers().len());
    for layer in model.layers() {
        match layer {
            Layer::Dense(l) => {
                w.u8(0);
                write_act(&mut w, l.act);
            }
            Layer::Conv(l) => {
                w.u8(1);
                write_act(&mut w, l.act);
                w.geom(&l.geom);
            }
            Layer::Head(_) => w.u8(2),
        }
        w.real(layer.shift().as_f64(), width);
        let t = layer.weights();
        w.shape(t.shape());
        for &v in t.data() {
            w.real(v.as_f64(), width);
        }
    }
    w.finish()
}

pub fn gnet_from_bytes<T: Real>(bytes: &[u8]) -> Result<GNetModel<T>> {
    let mut r = Reader::open(bytes, GNET_MAGIC)?;
    let width = match r.u8()? {
        4 => Width::F32,
        8 => Width::F64,
        b => return Err(Error::Format(format!("unsupported real width {b}"))),
    };
    let eps = T::of(r.f64()?);
    let input_shape = r.shape()?;
    let count = r.u32()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let tag = r.u8()?;
        let (act, geom) = match tag {
            0 => (Some(read_act(&mut r)?), None),
            1 => (Some(read_act(&mut r)?), Some(r.geom()?)),
            2 => (None, None),
            t => return Err(Error::Format(format!("unknown layer tag {t}"))),
        };
        let c = T::of(r.real(width)?);
        let w = r.tensor::<T>(width)?;
        layers.push(match (tag, act, geom) {
            (0, Some(a), _) => Layer::Dense(DenseLayer::new(w, c, a)?),
            (1, Some(a), Some(g)) => Layer::Conv(ConvLayer::new(w, c, g, a)?),
            _ => Layer::Head(HeadLayer::new(w, c)?),
        });
    }
    r.done()?;
    GNetModel::new(input_shape, layers, eps)
}

pub fn save_gnet<T: Real>(model: &GNetModel<T>, path: impl AsRef<Path>, width: Width) -> Result<()> {
    write_atomic(path.as_ref(), &gnet_to_bytes(model, width))
}

pub fn load_gnet<T: Real>(path: impl AsRef<Path>) -> Result<GNetModel<T>> {
    let path = path.as_ref();
    gnet_from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

fn tau_tag(t: Tau) -> u8 {
    match t {
        Tau::Identity => 0,
        Tau::Relu => 1,
        Tau::Sign => 2,
    }
}

fn read_tau(r: &mut Reader) -> Result<Tau> {
    match r.u8()? {
        0 => Ok(Tau::Identity),
        1 => Ok(Tau::Relu),
        2 => Ok(Tau::Sign),
        t => Err(Error::Format(format!("unknown output tag {t}"))),
    }
}

/// Serializes an EHD network. Shifts are kept as 64-bit reals.
pub fn ehd_to_bytes(model: &EhdModel) -> Vec<u8> {
    let mut w = Writer::new(EHD_MAGIC);
    w.shape(model.input_shape());
    w.u32(model.layers().len());
    for layer in model.layers() {
        w.u8(match layer {
            EhdLayer::Dense(_) => 0,
            EhdLayer::Conv(_) => 1,
            EhdLayer::Head(_) => 2,
        });
        w.u8(tau_tag(layer.tau()));
        match layer.input() {
            InputKind::Real => {
                w.u8(0);
                w.u64(0);
            }
            InputKind::Int { scale } => {
                w.u8(1);
                w.u64(scale);
            }
            InputKind::Bits => {
                w.u8(2);
                w.u64(0);
            }
        }
        w.f64(layer.shift());
        let spec = layer.spec();
        w.u8(match spec.kind {
            EmbedKind::Gaussian => 0,
            EmbedKind::Rademacher => 1,
        });
        w.u64(spec.dim as u64);
        w.u64(spec.seed);
        w.u64(spec.stream);
        if let EhdLayer::Conv(c) = layer {
            w.geom(&c.geom);
        }
        w.bits(layer.codes());
        match layer.embed() {
            Embed::Rademacher(m) => {
                w.u8(0);
                w.bits(m);
            }
            Embed::Gaussian { matrix, stored: false } => {
                w.u8(1);
                w.u32(matrix.rows());
                w.u32(matrix.row_len());
            }
            Embed::Gaussian { matrix, stored: true } => {
                w.u8(2);
                w.u32(matrix.rows());
                w.u32(matrix.row_len());
                for &v in matrix.data() {
                    w.f64(v);
                }
            }
        }
    }
    w.finish()
}

pub fn ehd_from_bytes(bytes: &[u8]) -> Result<EhdModel> {
    let mut r = Reader::open(bytes, EHD_MAGIC)?;
    let input_shape = r.shape()?;
    let count = r.u32()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let tag = r.u8()?;
        let tau = read_tau(&mut r)?;
        let input = match (r.u8()?, r.u64()?) {
            (0, _) => InputKind::Real,
            (1, scale) => InputKind::Int { scale },
            (2, _) => InputKind::Bits,
            (t, _) => return Err(Error::Format(format!("unknown input tag {t}"))),
        };
        let c = r.f64()?;
        let kind = match r.u8()? {
            0 => EmbedKind::Gaussian,
            1 => EmbedKind::Rademacher,
            t => return Err(Error::Format(format!("unknown embedding tag {t}"))),
        };
        let spec = EmbedSpec::new(kind, r.u64()? as usize, r.u64()?, r.u64()?)?;
        let geom = if tag == 1 { Some(r.geom()?) } else { None };
        let codes = r.bits()?;
        let embed = match r.u8()? {
            0 => Embed::Rademacher(r.bits()?),
            1 => {
                let (rows, cols) = (r.u32()?, r.u32()?);
                if rows != spec.dim {
                    return Err(Error::Format("embedding rows differ from the hyperdimension".into()));
                }
                Embed::generate(&spec, cols)
            }
            2 => {
                let (rows, cols) = (r.u32()?, r.u32()?);
                let n = rows
                    .checked_mul(cols)
                    .filter(|&n| n * 8 <= bytes.len())
                    .ok_or_else(|| Error::Format("embedding larger than the file".into()))?;
                let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                Embed::Gaussian {
                    matrix: Tensor::new(vec![rows, cols], data)?,
                    stored: true,
                }
            }
            t => return Err(Error::Format(format!("unknown embed storage tag {t}"))),
        };
        if matches!(embed, Embed::Rademacher(_)) != (kind == EmbedKind::Rademacher) {
            return Err(Error::Format("embedding storage does not match its kind".into()));
        }
        layers.push(match (tag, geom) {
            (1, Some(geom)) => EhdLayer::Conv(EhdConvLayer {
                codes,
                embed,
                spec,
                geom,
                c,
                tau,
                input,
            }),
            (0 | 2, None) => {
                let l = EhdDenseLayer {
                    codes,
                    embed,
                    spec,
                    c,
                    tau,
                    input,
                };
                if tag == 0 {
                    EhdLayer::Dense(l)
                } else {
                    EhdLayer::Head(l)
                }
            }
            _ => return Err(Error::Format(format!("unknown layer tag {tag}"))),
        });
    }
    r.done()?;
    EhdModel::new(input_shape, layers)
}

pub fn save_ehd(model: &EhdModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &ehd_to_bytes(model))
}

pub fn load_ehd(path: impl AsRef<Path>) -> Result<EhdModel> {
    let path = path.as_ref();
    ehd_from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Line-oriented `key = value` configuration; `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: Vec<ConfigEntry>,
}

#[derive(Debug, Clone, PartialEq)]
struct ConfigEntry {
    key: String,
    value: String,
    line: usize,
    used: bool,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<ConfigEntry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config {
                    line: i + 1,
                    msg: "empty key".into(),
                });
            }
            if entries.iter().any(|e| e.key == key) {
                return Err(Error::Config {
                    line: i + 1,
                    msg: format!("duplicate key `{key}`"),
                });
            }
            entries.push(ConfigEntry {
                key,
                value: v.trim().to_string(),
                line: i + 1,
                used: false,
            });
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Sets or replaces a value (used for command-line overrides).
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|e| e.key == key) {
            Some(e) => e.value = value,
            None => self.entries.push(ConfigEntry {
                key: key.to_string(),
                value,
                line: 0,
                used: false,
            }),
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.iter().any(|e| e.key == key)
    }

    /// Raw value, marking the key as consumed.
    pub fn str(&mut self, key: &str) -> Option<String> {
        let e = self.entries.iter_mut().find(|e| e.key == key)?;
        e.used = true;
        Some(e.value.clone())
    }

    /// Parsed value or `default` when absent.
    pub fn get<V: std::str::FromStr>(&mut self, key: &str, default: V) -> Result<V> {
        let Some(e) = self.entries.iter_mut().find(|e| e.key == key) else {
            return Ok(default);
        };
        e.used = true;
        e.value.parse().map_err(|_| Error::Config {
            line: e.line,
            msg: format!("cannot parse `{}` for `{key}`", e.value),
        })
    }

    pub fn require<V: std::str::FromStr>(&mut self, key: &str) -> Result<V> {
        if !self.contains(key) {
            return Err(Error::Config {
                line: 0,
                msg: format!("missing required key `{key}`"),
            });
        }
        let e = self.entries.iter_mut().find(|e| e.key == key).expect("checked");
        e.used = true;
        e.value.parse().map_err(|_| Error::Config {
            line: e.line,
            msg: format!("cannot parse `{}` for `{key}`", e.value),
        })
    }

    /// Fails on the first key nobody consumed.
    pub fn finish(&self) -> Result<()> {
        match self.entries.iter().find(|e| !e.used) {
            Some(e) => Err(Error::Config {
                line: e.line,
                msg: format!("unknown key `{}`", e.key),
            }),
            None => Ok(()),
        }
    }
}

/// Formats a real with 9 significant digits (`NaN`/`inf` spelled out).
pub fn fmt_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.8e}")
    } else {
        format!("{v}")
    }
}

/// One row of a sweep: statistics at one grid value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct SweepRow {
    pub grid: f64,
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
    pub bound: Option<f64>,
}

pub const SWEEP_HEADER: &str = "grid,mean,std,trials,bound";

/// CSV with the fixed header `grid,mean,std,trials,bound`; a missing bound is
/// an empty field.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_real(r.grid),
            fmt_real(r.mean),
            fmt_real(r.std),
            r.trials,
            r.bound.map(fmt_real).unwrap_or_default()
        ));
    }
    out
}

/// JSON document `{schema_version, kind, ...payload}`.
pub fn report_json<P: Serialize>(kind: &str, payload: &P) -> Result<String> {
    let mut v = serde_json::to_value(payload)?;
    let obj = match v {
        serde_json::Value::Object(ref mut m) => std::mem::take(m),
        other => {
            let mut m = serde_json::Map::new();
            m.insert("data".into(), other);
            m
        }
    };
    let mut doc = serde_json::Map::new();
    doc.insert("schema_version".into(), REPORT_SCHEMA_VERSION.into());
    doc.insert("kind".into(), kind.into());
    doc.extend(obj);
    let mut s = serde_json::to_string_pretty(&serde_json::Value::Object(doc))?;
    s.push('\n');
    Ok(s)
}

pub const HISTORY_HEADER: &str = "epoch,loss,train_acc,test_acc";

pub fn history_csv(history: &[crate::train::EpochRecord]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch,
            fmt_real(r.loss),
            fmt_real(r.train_acc),
            fmt_real(r.test_acc)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehd::convert_model;
    use crate::gnet::ArchSpec;
    use crate::rng::RngStream;
    use crate::train::init_model;

    fn model() -> GNetModel<f64> {
        let arch = ArchSpec::parse(vec![1, 6, 6], "CN(1,2,3,s2,p1) FC(5) CL(3)", ActivationKind::Tasu { kappa: 4.0 }).unwrap();
        let mut m: GNetModel<f64> = init_model(&arch, 1e-6, &mut RngStream::new(8, 0)).unwrap();
        *m.layers_mut()[1].shift_mut() = 0.3;
        m
    }

    #[test]
    fn gnet_round_trip_f64_is_exact() {
        let m = model();
        let back: GNetModel<f64> = gnet_from_bytes(&gnet_to_bytes(&m, Width::F64)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn gnet_round_trip_f32_matches_cast() {
        let m = model().cast::<f32>();
        let back: GNetModel<f32> = gnet_from_bytes(&gnet_to_bytes(&m, Width::F32)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut b = gnet_to_bytes(&model(), Width::F32);
        let mid = b.len() / 2;
        b[mid] ^= 0x10;
        assert!(matches!(gnet_from_bytes::<f64>(&b), Err(Error::Checksum { .. })));
        assert!(gnet_from_bytes::<f64>(b"EHDG\x01\x00\0\0\0\0").is_err());
    }

    #[test]
    fn ehd_round_trip_all_embed_storages() {
        let m = model();
        for kind in [EmbedKind::Rademacher, EmbedKind::Gaussian] {
            let mut e = convert_model(&m, &EmbedSpec::per_layer(kind, 70, 3, 3).unwrap()).unwrap();
            let back = ehd_from_bytes(&ehd_to_bytes(&e)).unwrap();
            assert_eq!(back, e);
            if kind == EmbedKind::Gaussian {
                if let Embed::Gaussian { stored, .. } = e.layers_mut()[1].embed_mut() {
                    *stored = true;
                }
                let back = ehd_from_bytes(&ehd_to_bytes(&e)).unwrap();
                assert_eq!(back, e);
            }
        }
    }

    #[test]
    fn config_parsing() {
        let mut c = Config::parse("# comment\nepochs = 3\nlr=0.01 # trailing\n\nname = fc net\n").unwrap();
        assert_eq!(c.get("epochs", 1usize).unwrap(), 3);
        assert_eq!(c.get("lr", 1.0f64).unwrap(), 0.01);
        assert_eq!(c.get("missing", 7u32).unwrap(), 7);
        assert!(c.finish().is_err());
        assert_eq!(c.str("name").as_deref(), Some("fc net"));
        c.finish().unwrap();
        assert!(Config::parse("no equals sign").is_err());
        assert!(Config::parse("a = 1\na = 2").is_err());
        let mut c = Config::parse("epochs = x").unwrap();
        assert!(matches!(c.get("epochs", 1usize), Err(Error::Config { line: 1, .. })));
    }

    #[test]
    fn empty_sweep_is_header_only() {
        assert_eq!(sweep_csv(&[]), "grid,mean,std,trials,bound\n");
    }

    #[test]
    fn real_formatting_has_nine_significant_digits() {
        assert_eq!(fmt_real(1.0 / 3.0), "3.33333333e-1");
        assert_eq!(fmt_real(0.0), "0.00000000e0");
        assert_eq!(fmt_real(f64::NAN), "NaN");
    }

    #[test]
    fn json_report_round_trips() {
        let rows = vec![SweepRow {
            grid: 256.0,
            mean: 0.5,
            std: 0.1,
            trials: 20,
            bound: None,
        }];
        let s = report_json("sweep", &serde_json::json!({ "rows": rows })).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["schema_version"], 1);
        let back: Vec<SweepRow> = serde_json::from_value(v["rows"].clone()).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn atomic_write_leaves_no_partial_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.gnet");
        save_gnet(&model(), &p, Width::F32).unwrap();
        assert!(p.exists());
        assert!(!dir.path().join("m.gnet.partial").exists());
        let bad = dir.path().join("missing_dir").join("x.gnet");
        assert!(save_gnet(&model(), &bad, Width::F32).is_err());
        assert!(!dir.path().join("missing_dir").exists());
    }
}
