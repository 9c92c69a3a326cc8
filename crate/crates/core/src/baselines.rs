//! Reference contribution evaluators: data volume, local/global model
//! similarity, and Shapley values (exact enumeration and Monte Carlo).

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::engine::RunRecord;
use crate::evaluation::{self, ClassificationMetrics};
use crate::model::ModelParams;
use crate::momentum::weighted_average;
use crate::numerics::{self, normalize_to_simplex, SeededRng, SimplexVector};

/// Similarities at or below this value are raised to it before normalizing.
pub const SIMILARITY_FLOOR: f64 = 1e-6;

/// Largest player count accepted by [`shapley_exact`].
pub const MAX_EXACT_PLAYERS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("empty partition")]
    Empty,
    #[error("{0} players exceed the exact Shapley limit of {MAX_EXACT_PLAYERS}")]
    TooManyPlayers(usize),
    #[error("permutation count must be >= 1")]
    NoPermutations,
    #[error("run record lacks model similarity snapshots for round {0}")]
    MissingSnapshots(usize),
    #[error("empty test set")]
    EmptyTestSet,
}

/// Shares proportional to client data volume.
pub fn contribution_by_volume(sizes: &[usize]) -> Result<SimplexVector, BaselineError> {
    let raw: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    normalize_to_simplex(&raw).map_err(|_| BaselineError::Empty)
}

/// Raw cosine similarity of each flattened local model to the aggregate.
pub fn model_similarities(local: &[ModelParams], global: &ModelParams) -> Vec<f64> {
    local
        .iter()
        .map(|m| numerics::cosine_similarity(m.values(), global.values()).unwrap_or(0.0))
        .collect()
}

/// Floored similarities normalized over the selected clients.
pub fn similarity_round_shares(similarities: &[f64]) -> SimplexVector {
    let floored: Vec<f64> = similarities.iter().map(|s| s.max(SIMILARITY_FLOOR)).collect();
    normalize_to_simplex(&floored).expect("floored similarities are positive")
}

/// Per-round similarity shares averaged over the rounds each client was
/// selected, then normalized over all clients. Never-selected clients get 0.
pub fn contribution_by_similarity(run: &RunRecord) -> Result<SimplexVector, BaselineError> {
    let n = run.clients.len();
    let mut totals = vec![0.0; n];
    let mut picks = vec![0usize; n];
    for r in &run.rounds {
        if r.model_similarity.len() != r.selected.len() {
            return Err(BaselineError::MissingSnapshots(r.round));
        }
        let shares = similarity_round_shares(&r.model_similarity);
        for (&k, s) in r.selected.iter().zip(shares.as_slice()) {
            totals[k] += s;
            picks[k] += 1;
        }
    }
    let averaged: Vec<f64> = totals
        .iter()
        .zip(&picks)
        .map(|(t, &p)| if p > 0 { t / p as f64 } else { 0.0 })
        .collect();
    normalize_to_simplex(&averaged).map_err(|_| BaselineError::Empty)
}

/// Set of players encoded as a bit mask.
pub type Coalition = u64;

pub trait Utility: Sync {
    fn players(&self) -> usize;
    fn value(&self, coalition: Coalition) -> f64;
}

/// Memoizing wrapper around a coalition value function. Safe to share
/// between threads; a value is computed at most once per coalition unless
/// two threads race on the same miss, in which case both compute the same
/// deterministic value.
pub struct CachedUtility<F> {
    players: usize,
    f: F,
    cache: RwLock<HashMap<Coalition, f64>>,
    evaluations: AtomicUsize,
}

impl<F: Fn(Coalition) -> f64 + Sync> CachedUtility<F> {
    pub fn new(players: usize, f: F) -> Self {
        assert!(players <= 64, "coalitions are 64-bit masks");
        Self { players, f, cache: RwLock::new(HashMap::new()), evaluations: AtomicUsize::new(0) }
    }

    /// Number of times the underlying function was invoked.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }
}

impl<F: Fn(Coalition) -> f64 + Sync> Utility for CachedUtility<F> {
    fn players(&self) -> usize {
        self.players
    }

    fn value(&self, coalition: Coalition) -> f64 {
        if let Some(v) = self.cache.read().expect("cache lock").get(&coalition) {
            return *v;
        }
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let v = (self.f)(coalition);
        self.cache.write().expect("cache lock").insert(coalition, v);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyEstimate {
    pub values: Vec<f64>,
    /// 0 for the exact computation.
    pub permutations: usize,
    pub seed: Option<u64>,
}

impl ShapleyEstimate {
    /// Negative values clamped to zero, then normalized; uniform when nothing
    /// positive remains.
    pub fn to_shares(&self) -> SimplexVector {
        let clamped: Vec<f64> = self.values.iter().map(|v| v.max(0.0)).collect();
        normalize_to_simplex(&clamped).unwrap_or_else(|_| SimplexVector::uniform(self.values.len().max(1)))
    }

    /// `client,phi,permutations,seed` rows; the seed column is empty for the
    /// exact computation.
    pub fn to_csv(&self) -> Result<Vec<u8>, csv::Error> {
        let seed = self.seed.map(|s| s.to_string()).unwrap_or_default();
        crate::io::csv_bytes(
            &["client", "phi", "permutations", "seed"],
            self.values
                .iter()
                .enumerate()
                .map(|(k, v)| [k.to_string(), v.to_string(), self.permutations.to_string(), seed.clone()]),
        )
    }
}

/// Exact Shapley values by the subset-weighted sum
/// `φ_i = Σ_{S ⊆ N\{i}} |S|!(n-|S|-1)!/n! · (v(S ∪ {i}) - v(S))`.
pub fn shapley_exact(v: &dyn Utility) -> Result<ShapleyEstimate, BaselineError> {
    let n = v.players();
    if n > MAX_EXACT_PLAYERS {
        return Err(BaselineError::TooManyPlayers(n));
    }
    let subsets = 1usize << n;
    let values: Vec<f64> = (0..subsets as u64).map(|s| v.value(s)).collect();
    let mut fact = vec![1.0f64; n + 1];
    for i in 1..=n {
        fact[i] = fact[i - 1] * i as f64;
    }
    let weight: Vec<f64> = (0..n).map(|s| fact[s] * fact[n - s - 1] / fact[n]).collect();
    let mut phi = vec![0.0; n];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for s in 0..subsets {
            if s & bit == 0 {
                let size = s.count_ones() as usize;
                *p += weight[size] * (values[s | bit] - values[s]);
            }
        }
    }
    Ok(ShapleyEstimate { values: phi, permutations: 0, seed: None })
}

/// Mean marginal contribution over `permutations` seeded uniform orderings.
/// Prefix coalitions are looked up through `v`, so a memoizing utility
/// evaluates each distinct coalition once.
pub fn shapley_monte_carlo(
    v: &dyn Utility,
    permutations: usize,
    rng: &mut SeededRng,
) -> Result<ShapleyEstimate, BaselineError> {
    if permutations == 0 {
        return Err(BaselineError::NoPermutations);
    }
    let n = v.players();
    let seed = rng.seed();
    let mut phi = vec![0.0; n];
    for _ in 0..permutations {
        let order = rng.permutation(n);
        let mut coalition: Coalition = 0;
        let mut prev = v.value(0);
        for &p in &order {
            coalition |= 1 << p;
            let cur = v.value(coalition);
            phi[p] += cur - prev;
            prev = cur;
        }
    }
    phi.iter_mut().for_each(|x| *x /= permutations as f64);
    Ok(ShapleyEstimate { values: phi, permutations, seed: Some(seed) })
}

/// Accuracy and macro-F1 of a model on a labelled set.
pub fn evaluate_model(params: &ModelParams, test: &Dataset) -> ClassificationMetrics {
    let logits: Vec<Vec<f64>> = test
        .all_features()
        .iter()
        .map(|x| params.forward(x).expect("test width matches model").1)
        .collect();
    let predictions: Vec<usize> = logits.iter().map(|l| numerics::argmax(l)).collect();
    evaluation::classification_metrics(&predictions, test.labels(), params.config().num_classes)
        .expect("test set is nonempty")
}

/// Test accuracy of the unweighted average of the coalition's models; the
/// empty coalition scores the pre-round global model.
pub fn coalition_utility<'a>(
    models: &'a [ModelParams],
    test: &'a Dataset,
    prior_global: &'a ModelParams,
) -> Result<CachedUtility<impl Fn(Coalition) -> f64 + Sync + 'a>, BaselineError> {
    if test.is_empty() {
        return Err(BaselineError::EmptyTestSet);
    }
    let n = models.len();
    Ok(CachedUtility::new(n, move |s: Coalition| {
        if s == 0 {
            return evaluate_model(prior_global, test).accuracy;
        }
        let members: Vec<ModelParams> = (0..n).filter(|i| s & (1 << i) != 0).map(|i| models[i].clone()).collect();
        let avg = weighted_average(&members, &SimplexVector::uniform(members.len())).expect("models share a shape");
        evaluate_model(&avg, test).accuracy
    }))
}
