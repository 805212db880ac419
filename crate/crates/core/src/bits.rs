//! Packed +-1 vectors and matrices.
//!
//! Layout: 64-bit words, least significant bit first, `+1 -> 1`, `-1 -> 0`.
//! Bits past `len` in the last word are always zero. This layout is also the
//! on-disk layout of the model files.

use std::cell::Cell;

use crate::error::{Error, Result};

#[inline]
fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

#[inline]
fn tail_mask(len: usize) -> u64 {
    match len % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

/// Packed vector in `{-1, +1}^len`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitVector {
    len: usize,
    words: Vec<u64>,
}

impl BitVector {
    /// All entries -1.
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; words_for(len)],
        }
    }

    /// All entries +1.
    pub fn ones(len: usize) -> Self {
        let mut v = Self {
            len,
            words: vec![u64::MAX; words_for(len)],
        };
        v.clear_padding();
        v
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                v.words[i / 64] |= 1 << (i % 64);
            }
        }
        v
    }

    /// Wraps raw words; fails if the padding region carries set bits.
    pub fn from_words(len: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != words_for(len) {
            return Err(Error::Length {
                left: words_for(len),
                right: words.len(),
            });
        }
        let v = Self { len, words };
        if !v.padding_is_clean() {
            return Err(Error::Format("bit vector padding is not zero".into()));
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len);
        let m = 1u64 << (i % 64);
        if bit {
            self.words[i / 64] |= m;
        } else {
            self.words[i / 64] &= !m;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len);
        self.words[i / 64] ^= 1 << (i % 64);
    }

    /// Entry `i` as `+1` or `-1`.
    #[inline]
    pub fn sign(&self, i: usize) -> i64 {
        if self.get(i) {
            1
        } else {
            -1
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn complement(&self) -> Self {
        let mut v = Self {
            len: self.len,
            words: self.words.iter().map(|w| !w).collect(),
        };
        v.clear_padding();
        v
    }

    pub fn hamming(&self, other: &Self) -> Result<usize> {
        check_len(self.len, other.len)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// Unpacks to `+-1` integers.
    pub fn to_signs(&self) -> Vec<i64> {
        (0..self.len).map(|i| self.sign(i)).collect()
    }

    pub fn padding_is_clean(&self) -> bool {
        match self.words.last() {
            Some(&w) => w & !tail_mask(self.len) == 0,
            None => true,
        }
    }

    fn clear_padding(&mut self) {
        let m = tail_mask(self.len);
        if let Some(w) = self.words.last_mut() {
            *w &= m;
        }
    }
}

#[inline]
fn check_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Length { left: a, right: b })
    }
}

/// Values that can be quantized by [`sign_pack`].
pub trait SignSource: Copy {
    /// `true` when the value maps to +1 (zero included).
    fn nonneg(self) -> bool;
}

impl SignSource for f64 {
    #[inline]
    fn nonneg(self) -> bool {
        self >= 0.0
    }
}

impl SignSource for f32 {
    #[inline]
    fn nonneg(self) -> bool {
        self >= 0.0
    }
}

impl SignSource for i64 {
    #[inline]
    fn nonneg(self) -> bool {
        self >= 0
    }
}

impl SignSource for i32 {
    #[inline]
    fn nonneg(self) -> bool {
        self >= 0
    }
}

/// Packs `sign(v)` with `sign(0) = +1`.
pub fn sign_pack<S: SignSource>(v: &[S]) -> BitVector {
    let mut words = vec![0u64; words_for(v.len())];
    for (w, chunk) in words.iter_mut().zip(v.chunks(64)) {
        let mut acc = 0u64;
        for (b, &x) in chunk.iter().enumerate() {
            acc |= (x.nonneg() as u64) << b;
        }
        *w = acc;
    }
    BitVector { len: v.len(), words }
}

/// Binary inner product `<a, b>` over `{-1, +1}^N`, i.e. `N - 2 popcount(a ^ b)`.
pub fn bip(a: &BitVector, b: &BitVector) -> Result<i64> {
    check_len(a.len, b.len)?;
    Ok(bip_words(&a.words, &b.words, a.len))
}

/// Word-level kernel behind [`bip`]; both slices must share one layout.
#[inline]
pub fn bip_words(a: &[u64], b: &[u64], len: usize) -> i64 {
    debug_assert_eq!(a.len(), b.len());
    counters::record(a.len());
    let diff: u32 = a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum();
    len as i64 - 2 * diff as i64
}

/// Per-thread XOR/popcount word counters, used to audit cost accounting.
pub mod counters {
    use super::Cell;

    thread_local! {
        static XOR_WORDS: Cell<u64> = const { Cell::new(0) };
        static POPCOUNT_WORDS: Cell<u64> = const { Cell::new(0) };
    }

    #[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
    pub struct OpCounts {
        pub xor_words: u64,
        pub popcount_words: u64,
    }

    #[inline]
    pub(crate) fn record(words: usize) {
        XOR_WORDS.with(|c| c.set(c.get() + words as u64));
        POPCOUNT_WORDS.with(|c| c.set(c.get() + words as u64));
    }

    pub fn reset() {
        XOR_WORDS.with(|c| c.set(0));
        POPCOUNT_WORDS.with(|c| c.set(0));
    }

    pub fn read() -> OpCounts {
        OpCounts {
            xor_words: XOR_WORDS.with(Cell::get),
            popcount_words: POPCOUNT_WORDS.with(Cell::get),
        }
    }
}

/// Packed `rows x cols` matrix over `{-1, +1}`; each row is a [`BitVector`] layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    stride: usize,
    data: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let stride = words_for(cols);
        Self {
            rows,
            cols,
            stride,
            data: vec![0; rows * stride],
        }
    }

    pub fn from_rows(rows: &[BitVector]) -> Result<Self> {
        let cols = rows.first().map_or(0, BitVector::len);
        let mut m = Self::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            check_len(cols, r.len)?;
            m.row_words_mut(i).copy_from_slice(&r.words);
        }
        Ok(m)
    }

    /// Wraps row-major words; fails on wrong length or dirty padding.
    pub fn from_words(rows: usize, cols: usize, data: Vec<u64>) -> Result<Self> {
        let stride = words_for(cols);
        if data.len() != rows * stride {
            return Err(Error::Length {
                left: rows * stride,
                right: data.len(),
            });
        }
        let m = Self {
            rows,
            cols,
            stride,
            data,
        };
        if (0..rows).any(|r| m.row_words(r).last().is_some_and(|&w| w & !tail_mask(cols) != 0)) {
            return Err(Error::Format("bit matrix padding is not zero".into()));
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn words_per_row(&self) -> usize {
        self.stride
    }

    pub fn words(&self) -> &[u64] {
        &self.data
    }

    #[inline]
    pub fn row_words(&self, r: usize) -> &[u64] {
        &self.data[r * self.stride..(r + 1) * self.stride]
    }

    #[inline]
    pub fn row_words_mut(&mut self, r: usize) -> &mut [u64] {
        &mut self.data[r * self.stride..(r + 1) * self.stride]
    }

    pub fn row(&self, r: usize) -> BitVector {
        BitVector {
            len: self.cols,
            words: self.row_words(r).to_vec(),
        }
    }

    pub fn set_row(&mut self, r: usize, v: &BitVector) -> Result<()> {
        check_len(self.cols, v.len)?;
        self.row_words_mut(r).copy_from_slice(&v.words);
        Ok(())
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        assert!(r < self.rows && c < self.cols);
        self.data[r * self.stride + c / 64] >> (c % 64) & 1 == 1
    }

    #[inline]
    pub fn sign(&self, r: usize, c: usize) -> i64 {
        if self.get(r, c) {
            1
        } else {
            -1
        }
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, bit: bool) {
        assert!(r < self.rows && c < self.cols);
        let m = 1u64 << (c % 64);
        let w = &mut self.data[r * self.stride + c / 64];
        if bit {
            *w |= m;
        } else {
            *w &= !m;
        }
    }

    /// Inverts the entry at row-major linear index `idx`.
    #[inline]
    pub fn flip_linear(&mut self, idx: usize) {
        let (r, c) = (idx / self.cols, idx % self.cols);
        assert!(r < self.rows);
        self.data[r * self.stride + c / 64] ^= 1 << (c % 64);
    }

    pub fn len_bits(&self) -> usize {
        self.rows * self.cols
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn hamming(&self, other: &Self) -> Result<usize> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape {
                expected: vec![self.rows, self.cols],
                got: vec![other.rows, other.cols],
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// `sum_j M_ij` for every row.
    pub fn row_sums(&self) -> Vec<i64> {
        (0..self.rows)
            .map(|r| {
                let ones: u32 = self.row_words(r).iter().map(|w| w.count_ones()).sum();
                2 * ones as i64 - self.cols as i64
            })
            .collect()
    }

    /// Dense `+-1` copy, row-major.
    pub fn to_pm1(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            let words = self.row_words(r);
            for c in 0..self.cols {
                out.push(if words[c / 64] >> (c % 64) & 1 == 1 { 1.0 } else { -1.0 });
            }
        }
        out
    }

    /// `<row_i, t>` for every row.
    pub fn bip_rows(&self, t: &BitVector) -> Result<Vec<i64>> {
        check_len(self.cols, t.len)?;
        Ok((0..self.rows)
            .map(|r| bip_words(self.row_words(r), &t.words, self.cols))
            .collect())
    }
}

/// Exact `R z` for a packed +-1 matrix and an integer vector.
///
/// Large matrices go through per-byte subset-sum tables (256 partial sums per
/// 8 columns), so each row costs one lookup per byte of packed bits.
pub fn signed_bitmat_vec(r: &BitMatrix, z: &[i64]) -> Result<Vec<i64>> {
    check_len(r.cols, z.len())?;
    if r.rows < 32 {
        return Ok((0..r.rows)
            .map(|i| {
                let w = r.row_words(i);
                z.iter()
                    .enumerate()
                    .map(|(j, &v)| if w[j / 64] >> (j % 64) & 1 == 1 { v } else { -v })
                    .sum()
            })
            .collect());
    }
    let chunks = r.stride * 8;
    let mut tables = vec![0i64; chunks * 256];
    for c in 0..chunks {
        let t = &mut tables[c * 256..(c + 1) * 256];
        let vals: [i64; 8] = std::array::from_fn(|b| z.get(c * 8 + b).copied().unwrap_or(0));
        t[0] = -vals.iter().sum::<i64>();
        for m in 1..256usize {
            let low = m.trailing_zeros() as usize;
            t[m] = t[m & (m - 1)] + 2 * vals[low];
        }
    }
    Ok((0..r.rows)
        .map(|i| {
            let mut acc = 0i64;
            for (w_idx, &w) in r.row_words(i).iter().enumerate() {
                let base = w_idx * 8 * 256;
                for b in 0..8 {
                    acc += tables[base + b * 256 + ((w >> (8 * b)) & 0xff) as usize];
                }
            }
            acc
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rademacher_matrix, RngStream};

    #[test]
    fn sign_pack_maps_zero_to_plus_one() {
        let v = sign_pack(&[1.0, -1.0, 0.0]);
        assert_eq!(v.len(), 3);
        assert!(v.get(0) && !v.get(1) && v.get(2));
        assert!(v.padding_is_clean());
    }

    #[test]
    fn bip_extremes() {
        let a = BitVector::from_bools(&[true, false].repeat(32));
        assert_eq!(bip(&a, &a).unwrap(), 64);
        assert_eq!(bip(&a, &a.complement()).unwrap(), -64);
        assert!(bip(&a, &BitVector::zeros(63)).is_err());
    }

    #[test]
    fn complement_and_ones_keep_padding_clean() {
        let v = BitVector::ones(70);
        assert_eq!(v.count_ones(), 70);
        assert!(v.padding_is_clean());
        let c = BitVector::zeros(70).complement();
        assert_eq!(c, v);
        assert!(c.padding_is_clean());
    }

    #[test]
    fn from_words_rejects_dirty_padding() {
        assert!(BitVector::from_words(3, vec![0b1000]).is_err());
        assert!(BitVector::from_words(3, vec![0b111]).is_ok());
        assert!(BitMatrix::from_words(2, 3, vec![0b111, 0b10000]).is_err());
    }

    #[test]
    fn signed_bitmat_vec_zero_and_all_ones() {
        let mut r = BitMatrix::zeros(40, 9);
        for i in 0..40 {
            for j in 0..9 {
                r.set(i, j, true);
            }
        }
        let z: Vec<i64> = (0..9).map(|j| j as i64 - 3).collect();
        let out = signed_bitmat_vec(&r, &z).unwrap();
        assert!(out.iter().all(|&v| v == z.iter().sum::<i64>()));
        assert!(signed_bitmat_vec(&r, &[0; 9]).unwrap().iter().all(|&v| v == 0));
    }

    #[test]
    fn table_and_direct_paths_agree() {
        let mut rng = RngStream::new(11, 0);
        let big = rademacher_matrix(&mut rng, 64, 131);
        let z: Vec<i64> = (0..131).map(|_| rng.below(2001) as i64 - 1000).collect();
        let fast = signed_bitmat_vec(&big, &z).unwrap();
        for i in 0..64 {
            let want: i64 = (0..131).map(|j| big.sign(i, j) * z[j]).sum();
            assert_eq!(fast[i], want);
        }
    }

    #[test]
    fn row_sums_match_signs() {
        let mut rng = RngStream::new(5, 0);
        let m = rademacher_matrix(&mut rng, 4, 77);
        let sums = m.row_sums();
        for (i, s) in sums.iter().enumerate() {
            assert_eq!(*s, (0..77).map(|j| m.sign(i, j)).sum::<i64>());
        }
    }

    #[test]
    fn counters_track_words() {
        counters::reset();
        let a = BitVector::ones(130);
        bip(&a, &a).unwrap();
        assert_eq!(counters::read().xor_words, 3);
        assert_eq!(counters::read().popcount_words, 3);
    }
}
