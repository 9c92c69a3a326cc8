//! Contribution tensor and its low-rank completion.
//!
//! Each class slice is a rounds × clients matrix. Missing cells (client not
//! selected, or client lacking the class) are filled from a rank-`r`
//! factorization `U·Vf` fitted by gradient descent on the observed cells.

use std::io::Write;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::numerics::{self, SeededRng, SimplexVector};

#[derive(Debug, Error)]
pub enum CompletionError {
    #[error("class {class}: objective diverged at iteration {iteration}")]
    Diverged { class: usize, iteration: usize },
    #[error("invalid completion config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch")]
    ShapeMismatch,
    #[error("tensor file: {0}")]
    Format(String),
    #[error("tensor file checksum mismatch")]
    Checksum,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompletionConfig {
    pub rank: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub regularization: f64,
    pub seed: u64,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            rank: 4,
            learning_rate: 0.05,
            iterations: 2000,
            regularization: 1e-3,
            seed: 0,
        }
    }
}

impl CompletionConfig {
    pub fn validate(&self) -> Result<(), CompletionError> {
        let bad = |m: &str| Err(CompletionError::InvalidConfig(m.into()));
        if self.rank == 0 {
            return bad("rank must be >= 1");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be > 0");
        }
        if !(self.regularization >= 0.0) || !self.regularization.is_finite() {
            return bad("regularization must be >= 0");
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        Ok(())
    }

    /// Rank actually used for a `rows × cols` slice: the configured rank,
    /// lowered to `min(rows, cols) - 1` (but never below 1).
    pub fn effective_rank(&self, rows: usize, cols: usize) -> usize {
        let cap = rows.min(cols).saturating_sub(1).max(1);
        self.rank.min(cap)
    }
}

/// Rounds × clients × classes values with an observation mask.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContributionTensor {
    rounds: usize,
    clients: usize,
    classes: usize,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl ContributionTensor {
    pub fn new(rounds: usize, clients: usize, classes: usize) -> Self {
        let n = rounds * clients * classes;
        Self { rounds, clients, classes, values: vec![0.0; n], observed: vec![false; n] }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.rounds, self.clients, self.classes)
    }

    fn idx(&self, t: usize, k: usize, c: usize) -> usize {
        debug_assert!(t < self.rounds && k < self.clients && c < self.classes);
        (t * self.clients + k) * self.classes + c
    }

    pub fn set(&mut self, t: usize, k: usize, c: usize, v: f64) {
        let i = self.idx(t, k, c);
        self.values[i] = v;
        self.observed[i] = true;
    }

    /// Observed value, `None` for a missing cell.
    pub fn get(&self, t: usize, k: usize, c: usize) -> Option<f64> {
        let i = self.idx(t, k, c);
        self.observed[i].then_some(self.values[i])
    }

    pub fn is_observed(&self, t: usize, k: usize, c: usize) -> bool {
        self.observed[self.idx(t, k, c)]
    }

    pub fn missing_count(&self) -> usize {
        self.observed.iter().filter(|o| !**o).count()
    }

    pub fn is_complete(&self) -> bool {
        self.observed.iter().all(|o| *o)
    }

    pub fn mask(&self) -> &[bool] {
        &self.observed
    }

    pub fn raw_values(&self) -> &[f64] {
        &self.values
    }

    /// Rows of one class slice as `Option`s, for inspection.
    pub fn class_slice(&self, c: usize) -> Vec<Vec<Option<f64>>> {
        (0..self.rounds)
            .map(|t| (0..self.clients).map(|k| self.get(t, k, c)).collect())
            .collect()
    }

    /// CSV export with header `round,client,class,value,observed`; missing
    /// cells have an empty value field.
    pub fn to_csv(&self) -> Result<Vec<u8>, CompletionError> {
        let mut w = crate::io::csv_writer(Vec::new());
        w.write_record(["round", "client", "class", "value", "observed"])?;
        for t in 0..self.rounds {
            for k in 0..self.clients {
                for c in 0..self.classes {
                    let v = self.get(t, k, c).map(|v| v.to_string()).unwrap_or_default();
                    let o = if self.is_observed(t, k, c) { "1" } else { "0" };
                    w.write_record([t.to_string(), k.to_string(), c.to_string(), v, o.to_string()])?;
                }
            }
        }
        w.into_inner().map_err(|e| CompletionError::Io(e.into_error()))
    }

    /// Binary layout: magic `FLCT`, `u32` format version, three `u64`
    /// dimensions, the `f64` values, the mask packed LSB-first into bytes,
    /// then a SHA-256 digest of everything before it. All integers and floats
    /// are little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.values.len() + self.values.len() / 8 + 33);
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&TENSOR_FORMAT_VERSION.to_le_bytes());
        for d in [self.rounds, self.clients, self.classes] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut bits = vec![0u8; self.observed.len().div_ceil(8)];
        for (i, &o) in self.observed.iter().enumerate() {
            if o {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&bits);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CompletionError> {
        let fmt = |m: &str| CompletionError::Format(m.to_string());
        if bytes.len() < 32 + 4 {
            return Err(fmt("truncated"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CompletionError::Checksum);
        }
        if body.len() < 32 {
            return Err(fmt("truncated header"));
        }
        if &body[..4] != TENSOR_MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
        if version != TENSOR_FORMAT_VERSION {
            return Err(CompletionError::Format(format!("unsupported tensor format version {version}")));
        }
        let dim = |i: usize| u64::from_le_bytes(body[8 + 8 * i..16 + 8 * i].try_into().unwrap()) as usize;
        let (rounds, clients, classes) = (dim(0), dim(1), dim(2));
        let n = rounds
            .checked_mul(clients)
            .and_then(|x| x.checked_mul(classes))
            .ok_or_else(|| fmt("dimensions overflow"))?;
        let expected = 32 + 8 * n + n.div_ceil(8);
        if body.len() != expected {
            return Err(fmt("length does not match dimensions"));
        }
        let values: Vec<f64> = body[32..32 + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let bits = &body[32 + 8 * n..];
        let observed = (0..n).map(|i| bits[i / 8] & (1 << (i % 8)) != 0).collect();
        Ok(Self { rounds, clients, classes, values, observed })
    }

    pub fn write_bytes(&self, mut w: impl Write) -> Result<(), CompletionError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }
}

const TENSOR_MAGIC: &[u8; 4] = b"FLCT";
const TENSOR_FORMAT_VERSION: u32 = 1;

/// A dense matrix with an observation mask, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
}

impl MaskedMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, observed: Vec<bool>) -> Self {
        assert_eq!(values.len(), rows * cols);
        assert_eq!(observed.len(), rows * cols);
        Self { rows, cols, values, observed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixCompletion {
    /// Observed cells verbatim, missing cells `max(U·Vf, 0)`.
    pub values: Vec<f64>,
    /// Objective after each iteration.
    pub objective: Vec<f64>,
    pub rank: usize,
}

/// Objective: `Σ_obs (x - u_t·v_k)² + reg·(‖U‖² + ‖Vf‖²)`.
fn objective(m: &MaskedMatrix, u: &[f64], v: &[f64], r: usize, reg: f64) -> f64 {
    let mut e = 0.0;
    for t in 0..m.rows {
        for k in 0..m.cols {
            let i = t * m.cols + k;
            if m.observed[i] {
                let pred = (0..r).fold(0.0, |acc, j| acc + u[t * r + j] * v[j * m.cols + k]);
                let d = m.values[i] - pred;
                e += d * d;
            }
        }
    }
    e + reg * (numerics::dot(u, u) + numerics::dot(v, v))
}

/// Fits `U (rows×r)` and `Vf (r×cols)` by full-batch gradient descent and
/// fills the missing cells. `label` names the slice in divergence errors.
pub fn complete_matrix(
    m: &MaskedMatrix,
    cfg: &CompletionConfig,
    rng: &mut SeededRng,
    label: usize,
) -> Result<MatrixCompletion, CompletionError> {
    cfg.validate()?;
    let r = cfg.effective_rank(m.rows, m.cols);
    if m.observed.iter().all(|o| *o) {
        return Ok(MatrixCompletion { values: m.values.clone(), objective: Vec::new(), rank: r });
    }
    let mut u: Vec<f64> = (0..m.rows * r).map(|_| rng.uniform_range(-0.1, 0.1)).collect();
    let mut v: Vec<f64> = (0..r * m.cols).map(|_| rng.uniform_range(-0.1, 0.1)).collect();
    let mut gu = vec![0.0; u.len()];
    let mut gv = vec![0.0; v.len()];
    let mut history = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        for (g, x) in gu.iter_mut().zip(&u) {
            *g = 2.0 * cfg.regularization * x;
        }
        for (g, x) in gv.iter_mut().zip(&v) {
            *g = 2.0 * cfg.regularization * x;
        }
        for t in 0..m.rows {
            for k in 0..m.cols {
                let i = t * m.cols + k;
                if !m.observed[i] {
                    continue;
                }
                let pred = (0..r).fold(0.0, |acc, j| acc + u[t * r + j] * v[j * m.cols + k]);
                let d = -2.0 * (m.values[i] - pred);
                for j in 0..r {
                    gu[t * r + j] += d * v[j * m.cols + k];
                    gv[j * m.cols + k] += d * u[t * r + j];
                }
            }
        }
        numerics::axpy(&mut u, -cfg.learning_rate, &gu);
        numerics::axpy(&mut v, -cfg.learning_rate, &gv);
        let e = objective(m, &u, &v, r, cfg.regularization);
        if !e.is_finite() {
            return Err(CompletionError::Diverged { class: label, iteration: it });
        }
        history.push(e);
    }
    let values = (0..m.rows * m.cols)
        .map(|i| {
            if m.observed[i] {
                m.values[i]
            } else {
                let (t, k) = (i / m.cols, i % m.cols);
                (0..r).fold(0.0, |acc, j| acc + u[t * r + j] * v[j * m.cols + k]).max(0.0)
            }
        })
        .collect();
    Ok(MatrixCompletion { values, objective: history, rank: r })
}

/// Completes every class slice independently, then renormalizes each
/// (round, class) row over all clients. Rows that end up all zero become
/// uniform. The result has no missing cells.
pub fn complete_tensor(x: &ContributionTensor, cfg: &CompletionConfig) -> Result<ContributionTensor, CompletionError> {
    cfg.validate()?;
    let (rounds, clients, classes) = x.dims();
    let root = SeededRng::new(cfg.seed);
    let slices: Vec<Vec<f64>> = (0..classes)
        .into_par_iter()
        .map(|c| {
            let mut values = Vec::with_capacity(rounds * clients);
            let mut observed = Vec::with_capacity(rounds * clients);
            for t in 0..rounds {
                for k in 0..clients {
                    let o = x.is_observed(t, k, c);
                    values.push(if o { x.values[x.idx(t, k, c)] } else { 0.0 });
                    observed.push(o);
                }
            }
            let m = MaskedMatrix::new(rounds, clients, values, observed);
            let mut rng = root.derive(&[c as u64]);
            complete_matrix(&m, cfg, &mut rng, c).map(|mc| mc.values)
        })
        .collect::<Result<_, _>>()?;

    let mut out = ContributionTensor::new(rounds, clients, classes);
    for (c, slice) in slices.iter().enumerate() {
        for t in 0..rounds {
            let row = &slice[t * clients..(t + 1) * clients];
            let shares = numerics::normalize_to_simplex(row).unwrap_or_else(|_| {
                warn!("completion: round {t} class {c} has no contribution mass; using uniform shares");
                SimplexVector::uniform(clients)
            });
            for (k, v) in shares.as_slice().iter().enumerate() {
                out.set(t, k, c, *v);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletionErrorReport {
    /// `None` when no cell was missing.
    pub rmse_missing: Option<f64>,
    pub rmse_observed: f64,
}

/// Root-mean-square error of `estimate` against `truth`, split by `observed`.
pub fn completion_error(truth: &[f64], estimate: &[f64], observed: &[bool]) -> Result<CompletionErrorReport, CompletionError> {
    if truth.len() != estimate.len() || truth.len() != observed.len() {
        return Err(CompletionError::ShapeMismatch);
    }
    let (mut sm, mut nm, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for ((a, b), &o) in truth.iter().zip(estimate).zip(observed) {
        let d = (a - b) * (a - b);
        if o {
            so += d;
            no += 1;
        } else {
            sm += d;
            nm += 1;
        }
    }
    Ok(CompletionErrorReport {
        rmse_missing: (nm > 0).then(|| (sm / nm as f64).sqrt()),
        rmse_observed: if no > 0 { (so / no as f64).sqrt() } else { 0.0 },
    })
}
