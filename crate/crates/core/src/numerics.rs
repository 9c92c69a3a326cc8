//! Dense vector helpers, probability simplex handling and the seeded RNG.
//!
//! Every reduction in this module walks its input left to right so that a
//! given input always produces the same bits, independent of how callers
//! schedule work across threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used to decide that a vector already lies on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A sum within this distance of 1 is treated as already normalized, which
/// makes [`normalize_to_simplex`] exactly idempotent.
const RENORMALIZE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("degenerate vector: zero norm")]
    DegenerateVector,
    #[error("degenerate normalization: entries sum to zero")]
    DegenerateNormalization,
    #[error("negative entry {value} at index {index}")]
    NegativeEntry { index: usize, value: f64 },
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("empty vector")]
    Empty,
    #[error("not a probability vector: sum {0}")]
    NotOnSimplex(f64),
}

pub fn check_finite(v: &[f64]) -> Result<(), NumericsError> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(NumericsError::NonFinite(i)),
        None => Ok(()),
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<(), NumericsError> {
    if a.len() != b.len() {
        return Err(NumericsError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

pub fn sum(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc + x)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| {
        let d = x - y;
        acc + d * d
    })
}

/// Adds `scale * src` into `dst`.
pub fn axpy(dst: &mut [f64], scale: f64, src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// Plain arithmetic mean of equally sized vectors.
pub fn mean_of(vectors: &[&[f64]]) -> Vec<f64> {
    let dim = vectors.first().map_or(0, |v| v.len());
    let mut out = vec![0.0; dim];
    for v in vectors {
        axpy(&mut out, 1.0, v);
    }
    let k = vectors.len() as f64;
    out.iter_mut().for_each(|x| *x /= k);
    out
}

/// `a·b / (‖a‖‖b‖)`, clamped into [-1, 1] against rounding.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, NumericsError> {
    check_dims(a, b)?;
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(NumericsError::DegenerateVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64, NumericsError> {
    check_dims(a, b)?;
    Ok(squared_distance(a, b).sqrt())
}

/// Nonnegative entries summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    /// Validates that `v` already lies on the simplex; does not rescale.
    pub fn new(v: Vec<f64>) -> Result<Self, NumericsError> {
        if v.is_empty() {
            return Err(NumericsError::Empty);
        }
        check_finite(&v)?;
        if let Some((index, &value)) = v.iter().enumerate().find(|(_, x)| **x < 0.0) {
            return Err(NumericsError::NegativeEntry { index, value });
        }
        let s = sum(&v);
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(NumericsError::NotOnSimplex(s));
        }
        Ok(Self(v))
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform simplex over zero entries");
        Self(vec![1.0 / n as f64; n])
    }

    /// The vertex putting all mass on `index`.
    pub fn vertex(n: usize, index: usize) -> Self {
        let mut v = vec![0.0; n];
        v[index] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// True when every entry is bitwise equal.
    pub fn is_uniform(&self) -> bool {
        self.0.windows(2).all(|w| w[0] == w[1])
    }
}

impl TryFrom<Vec<f64>> for SimplexVector {
    type Error = NumericsError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<SimplexVector> for Vec<f64> {
    fn from(v: SimplexVector) -> Self {
        v.0
    }
}

impl std::ops::Index<usize> for SimplexVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Divides a nonnegative vector by its sum.
///
/// An input whose sum is already within 1e-12 of one is returned verbatim,
/// so normalizing twice yields exactly the same bits as normalizing once.
pub fn normalize_to_simplex(v: &[f64]) -> Result<SimplexVector, NumericsError> {
    if v.is_empty() {
        return Err(NumericsError::Empty);
    }
    check_finite(v)?;
    if let Some((index, &value)) = v.iter().enumerate().find(|(_, x)| **x < 0.0) {
        return Err(NumericsError::NegativeEntry { index, value });
    }
    let s = sum(v);
    if s <= 0.0 {
        return Err(NumericsError::DegenerateNormalization);
    }
    if (s - 1.0).abs() <= RENORMALIZE_SLACK {
        return Ok(SimplexVector(v.to_vec()));
    }
    Ok(SimplexVector(v.iter().map(|x| x / s).collect()))
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<SimplexVector, NumericsError> {
    if logits.is_empty() {
        return Err(NumericsError::Empty);
    }
    check_finite(logits)?;
    Ok(SimplexVector(softmax_unchecked(logits)))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let s = sum(&exps);
    exps.into_iter().map(|e| e / s).collect()
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(SPLITMIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ChaCha8 stream keyed by a 64-bit seed.
///
/// Child streams are derived from `(seed, tags)` by SplitMix64 mixing, so a
/// stream for `(round, client)` never depends on how many draws were taken
/// from any other stream.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream labelled by `tags`.
    pub fn derive(&self, tags: &[u64]) -> SeededRng {
        let mut h = splitmix64(self.seed);
        for &t in tags {
            h = splitmix64(h ^ splitmix64(t));
        }
        SeededRng::new(h)
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits.
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        // Lemire-style rejection keeps the draw unbiased.
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.inner.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
