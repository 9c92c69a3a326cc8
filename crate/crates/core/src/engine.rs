//! The federated training loop: client selection, local training, prototype
//! upload, momentum computation, aggregation, contribution recording and
//! final scoring.

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baselines::{self, BaselineError};
use crate::completion::{complete_tensor, CompletionConfig, CompletionError, ContributionTensor};
use crate::data::{
    self, ClientProfile, DataError, Dataset, Partition, QualityMode, SyntheticGenerator,
};
use crate::evaluation::{
    final_contributions, ClassificationMetrics, ContributionResult, DistributionVectors, EvaluationError,
    Provenance,
};
use crate::model::{local_train, ModelConfig, ModelParams, TrainConfig};
use crate::momentum::{compute_round_momentum, momentum_client_weights, weighted_average, RoundMomentum};
use crate::numerics::{self, normalize_to_simplex, SeededRng, SimplexVector, SIMPLEX_TOL};
use crate::prototypes::{compute_prototypes, GlobalPrototypes, PrototypeSet};

/// Version of the persisted run layout.
pub const SCHEMA_VERSION: u32 = 1;

// Stream labels for `SeededRng::derive`.
const STREAM_DATA: u64 = 1;
const STREAM_TEST: u64 = 2;
const STREAM_PARTITION: u64 = 3;
const STREAM_LABEL_NOISE: u64 = 4;
const STREAM_FEATURE_NOISE: u64 = 5;
const STREAM_INIT: u64 = 6;
const STREAM_SELECT: u64 = 7;
const STREAM_TRAIN: u64 = 8;
const STREAM_COMPLETION: u64 = 9;
const STREAM_SHAPLEY: u64 = 10;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("round {round}: {message}")]
    Round { round: usize, message: String },
    #[error("completion: {0}")]
    Completion(#[from] CompletionError),
    #[error("scoring: {0}")]
    Evaluation(#[from] EvaluationError),
    #[error("baseline: {0}")]
    Baseline(#[from] BaselineError),
}

fn round_err(round: usize) -> impl Fn(&dyn std::fmt::Display) -> EngineError {
    move |e| EngineError::Round { round, message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Flce,
    Fedavg,
    Similarity,
    ShapleyMc,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Flce => "flce",
            Method::Fedavg => "fedavg",
            Method::Similarity => "similarity",
            Method::ShapleyMc => "shapley-mc",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "flce" => Ok(Method::Flce),
            "fedavg" => Ok(Method::Fedavg),
            "similarity" => Ok(Method::Similarity),
            "shapley-mc" => Ok(Method::ShapleyMc),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub clients: usize,
    pub per_round: usize,
    pub rounds: usize,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self { clients: 50, per_round: 10, rounds: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionKind {
    Dirichlet,
    Iid,
    Volume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub classes: usize,
    pub input_dim: usize,
    pub per_class: usize,
    pub spread: f64,
    pub test_per_class: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<String>,
    /// Share of CSV rows held out for global-model evaluation.
    pub test_fraction: f64,
    pub partition: PartitionKind,
    pub dirichlet: f64,
    /// Relative client sizes for the `volume` partition.
    pub volume_weights: Vec<f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            classes: 10,
            input_dim: 16,
            per_class: 200,
            spread: 0.5,
            test_per_class: 50,
            csv_path: None,
            test_fraction: 0.2,
            partition: PartitionKind::Dirichlet,
            dirichlet: 0.5,
            volume_weights: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub label_clients: Vec<usize>,
    pub label_rate: f64,
    pub feature_clients: Vec<usize>,
    pub feature_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dims: Vec<usize>,
    pub repr_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { hidden_dims: vec![64], repr_dim: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PrototypeOptions {
    /// Average only correctly classified samples of each class.
    pub correct_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Weights over rounds; empty means uniform.
    pub round_weights: Vec<f64>,
    /// Weights over classes; empty means uniform.
    pub class_weights: Vec<f64>,
    /// Reference distribution reported next to the scores.
    pub quality: QualityMode,
    pub shapley_permutations: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            round_weights: Vec::new(),
            class_weights: Vec::new(),
            quality: QualityMode::Volume,
            shapley_permutations: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub method: Method,
    pub federation: FederationConfig,
    pub data: DataConfig,
    pub noise: NoiseConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub prototypes: PrototypeOptions,
    pub completion: CompletionConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            method: Method::Flce,
            federation: FederationConfig::default(),
            data: DataConfig::default(),
            noise: NoiseConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            prototypes: PrototypeOptions::default(),
            completion: CompletionConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl RunConfig {
    /// Checks cross-field constraints; the error names the offending key.
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Config(m));
        let f = &self.federation;
        if f.clients == 0 {
            return bad("federation.clients must be >= 1".into());
        }
        if f.per_round == 0 || f.per_round > f.clients {
            return bad(format!("federation.per_round must lie in 1..={}", f.clients));
        }
        if f.rounds == 0 {
            return bad("federation.rounds must be >= 1".into());
        }
        let d = &self.data;
        match d.source {
            DataSource::Synthetic => {
                if d.classes < 2 || d.input_dim < 2 {
                    return bad("data.classes and data.input_dim must be >= 2".into());
                }
                if d.per_class == 0 || d.test_per_class == 0 {
                    return bad("data.per_class and data.test_per_class must be >= 1".into());
                }
                if !(d.spread >= 0.0) {
                    return bad("data.spread must be >= 0".into());
                }
            }
            DataSource::Csv => {
                if d.csv_path.is_none() {
                    return bad("data.csv_path is required when data.source = \"csv\"".into());
                }
                if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
                    return bad("data.test_fraction must lie in (0, 1)".into());
                }
            }
        }
        match d.partition {
            PartitionKind::Dirichlet if !(d.dirichlet > 0.0) => return bad("data.dirichlet must be > 0".into()),
            PartitionKind::Dirichlet if f.clients < 2 => {
                return bad("data.partition = \"dirichlet\" needs federation.clients >= 2".into())
            }
            PartitionKind::Volume if d.volume_weights.len() != f.clients => {
                return bad(format!("data.volume_weights must have {} entries", f.clients))
            }
            _ => {}
        }
        let n = &self.noise;
        if let Some(&k) = n.label_clients.iter().chain(&n.feature_clients).find(|&&k| k >= f.clients) {
            return bad(format!("noise: client id {k} out of range"));
        }
        if !(0.0..=1.0).contains(&n.label_rate) {
            return bad("noise.label_rate must lie in [0, 1]".into());
        }
        if !(n.feature_sigma >= 0.0) {
            return bad("noise.feature_sigma must be >= 0".into());
        }
        if self.model.repr_dim == 0 || self.model.hidden_dims.contains(&0) {
            return bad("model: layer widths must be >= 1".into());
        }
        self.train.validate().map_err(|e| EngineError::Config(format!("train: {e}")))?;
        self.completion.validate().map_err(|e| EngineError::Config(format!("completion: {e}")))?;
        let e = &self.evaluation;
        if !e.round_weights.is_empty() && e.round_weights.len() != f.rounds {
            return bad(format!("evaluation.round_weights must have {} entries", f.rounds));
        }
        if self.method == Method::ShapleyMc && e.shapley_permutations == 0 {
            return bad("evaluation.shapley_permutations must be >= 1".into());
        }
        if self.method == Method::ShapleyMc && f.per_round > 64 {
            return bad("shapley-mc supports at most 64 clients per round".into());
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Selected client ids, ascending.
    pub selected: Vec<usize>,
    /// Aggregation weight of each selected client, in `selected` order.
    pub weights: SimplexVector,
    pub momentum: RoundMomentum,
    /// Global prototype per class after this round; `None` until first seen.
    pub global_prototypes: Vec<Option<Vec<f64>>>,
    /// Cosine of each local model to the aggregated model.
    pub model_similarity: Vec<f64>,
    /// Per-round Monte Carlo Shapley values, for `shapley-mc` runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shapley: Option<Vec<f64>>,
    pub metrics: ClassificationMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub config: RunConfig,
    pub config_hash: String,
    pub num_classes: usize,
    pub model_config: ModelConfig,
    pub clients: Vec<ClientProfile>,
    pub rounds: Vec<RoundRecord>,
    /// The configured method's result first, then the other methods.
    pub contributions: Vec<ContributionResult>,
    /// Mean metrics over the final window of rounds.
    pub final_metrics: ClassificationMetrics,
    pub final_window: usize,
    pub completion_rank: usize,
    #[serde(skip)]
    pub tensor: ContributionTensor,
    #[serde(skip)]
    pub completed: ContributionTensor,
    #[serde(skip)]
    pub final_model: Option<ModelParams>,
}

impl RunRecord {
    pub fn primary(&self) -> &ContributionResult {
        &self.contributions[0]
    }

    pub fn contribution(&self, method: &str) -> Option<&ContributionResult> {
        self.contributions.iter().find(|c| c.provenance.method == method)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clients.iter().map(|c| c.size).collect()
    }

    /// Floats uploaded as prototypes per client per round (all classes).
    pub fn prototype_floats(&self) -> usize {
        self.model_config.repr_dim * self.num_classes
    }
}

/// Number of trailing rounds averaged into the final metrics:
/// `min(100, T/10)`, at least 1.
pub fn final_window(rounds: usize) -> usize {
    (rounds / 10).clamp(1, 100)
}

/// `per_round` distinct clients, drawn uniformly from the stream for `round`
/// and returned in ascending order.
pub fn select_clients(clients: usize, per_round: usize, round: usize, rng: &SeededRng) -> Result<Vec<usize>, EngineError> {
    if per_round > clients {
        return Err(EngineError::Config(format!("cannot select {per_round} of {clients} clients")));
    }
    let mut stream = rng.derive(&[STREAM_SELECT, round as u64]);
    let mut pool: Vec<usize> = (0..clients).collect();
    for i in 0..per_round {
        let j = i + stream.below(clients - i);
        pool.swap(i, j);
    }
    let mut picked = pool[..per_round].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Training data split into clients, plus the server-only held-out set.
pub struct PreparedData {
    pub partition: Partition,
    pub test: Dataset,
}

pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData, EngineError> {
    let root = SeededRng::new(cfg.seed);
    let d = &cfg.data;
    let (train, test) = match d.source {
        DataSource::Synthetic => {
            let mut rng = root.derive(&[STREAM_DATA]);
            let gen = SyntheticGenerator::new(d.classes, d.input_dim, d.spread, &mut rng)?;
            let train = gen.sample(d.per_class, &mut rng)?;
            let test = gen.sample(d.test_per_class, &mut root.derive(&[STREAM_TEST]))?;
            (train, test)
        }
        DataSource::Csv => {
            let path = d.csv_path.as_deref().expect("validated");
            let all = data::load_csv_dataset(path)?;
            let order = root.derive(&[STREAM_TEST]).permutation(all.len());
            let held = ((all.len() as f64) * d.test_fraction).round().max(1.0) as usize;
            if held >= all.len() {
                return Err(EngineError::Config("data.test_fraction leaves no training rows".into()));
            }
            (all.subset(&order[held..]), all.subset(&order[..held]))
        }
    };
    let n = cfg.federation.clients;
    let mut prng = root.derive(&[STREAM_PARTITION]);
    let mut partition = match d.partition {
        PartitionKind::Dirichlet => data::partition_dirichlet(&train, n, d.dirichlet, &mut prng)?,
        PartitionKind::Iid => data::partition_iid(&train, n, &mut prng)?,
        PartitionKind::Volume => data::partition_by_weights(&train, &d.volume_weights, &mut prng)?,
    };
    let noise = &cfg.noise;
    if !noise.label_clients.is_empty() {
        partition =
            data::inject_label_noise(&partition, &noise.label_clients, noise.label_rate, &root.derive(&[STREAM_LABEL_NOISE]))?;
    }
    if !noise.feature_clients.is_empty() {
        partition = data::inject_feature_noise(
            &partition,
            &noise.feature_clients,
            noise.feature_sigma,
            &root.derive(&[STREAM_FEATURE_NOISE]),
        )?;
    }
    Ok(PreparedData { partition, test })
}

/// Runs the configured federation on the current rayon pool.
pub fn run_federation(cfg: &RunConfig) -> Result<RunRecord, EngineError> {
    cfg.validate()?;
    let prepared = prepare_data(cfg)?;
    run_prepared(cfg, &prepared)
}

/// Runs the federation inside a dedicated pool of `threads` workers. Results
/// do not depend on `threads`.
pub fn run_federation_with_threads(cfg: &RunConfig, threads: usize) -> Result<RunRecord, EngineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| EngineError::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_federation(cfg))
}

fn volume_weights(part: &Partition, selected: &[usize]) -> SimplexVector {
    let sizes: Vec<f64> = selected.iter().map(|&k| part.clients[k].len() as f64).collect();
    normalize_to_simplex(&sizes).expect("clients are nonempty")
}

/// Runs rounds on already prepared data.
pub fn run_prepared(cfg: &RunConfig, prepared: &PreparedData) -> Result<RunRecord, EngineError> {
    cfg.validate()?;
    let part = &prepared.partition;
    let test = &prepared.test;
    let root = SeededRng::new(cfg.seed);
    let n = cfg.federation.clients;
    let k = cfg.federation.per_round;
    let t_max = cfg.federation.rounds;
    let classes = part.num_classes;
    let model_config = ModelConfig {
        input_dim: test.input_dim(),
        hidden_dims: cfg.model.hidden_dims.clone(),
        repr_dim: cfg.model.repr_dim,
        num_classes: classes,
    };
    model_config.validate().map_err(|e| EngineError::Config(e.to_string()))?;
    if part.num_clients() != n {
        return Err(EngineError::Config(format!("partition has {} clients, config {n}", part.num_clients())));
    }
    let ab = DistributionVectors::from_weights(t_max, classes, &cfg.evaluation.round_weights, &cfg.evaluation.class_weights)
        .map_err(|e| EngineError::Config(format!("evaluation weights: {e}")))?;

    let mut global = ModelParams::init(model_config.clone(), &mut root.derive(&[STREAM_INIT]));
    let mut globals = GlobalPrototypes::new(classes);
    let mut tensor = ContributionTensor::new(t_max, n, classes);
    let mut rounds = Vec::with_capacity(t_max);
    let mut shapley_totals = vec![0.0; n];

    for t in 0..t_max {
        let err = round_err(t);
        let selected = select_clients(n, k, t, &root)?;
        let results: Vec<Result<(ModelParams, PrototypeSet), EngineError>> = selected
            .par_iter()
            .map(|&client| {
                let mut rng = root.derive(&[STREAM_TRAIN, t as u64, client as u64]);
                let data = &part.clients[client].data;
                let local = local_train(&global, data, &cfg.train, &mut rng).map_err(|e| err(&e))?;
                let protos = compute_prototypes(&local, data, client, t, cfg.prototypes.correct_only).map_err(|e| err(&e))?;
                Ok((local, protos))
            })
            .collect();
        let (locals, uploads): (Vec<ModelParams>, Vec<PrototypeSet>) =
            results.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().unzip();

        let momentum = compute_round_momentum(t, &uploads, &mut globals).map_err(|e| err(&e))?;
        for cm in &momentum.classes {
            for (client, q) in cm.clients.iter().zip(cm.momentum.as_slice()) {
                tensor.set(t, *client, cm.class, *q);
            }
        }

        let weights = match cfg.method {
            Method::Flce => momentum_client_weights(&momentum),
            Method::Fedavg | Method::ShapleyMc => volume_weights(part, &selected),
            Method::Similarity => {
                let reference = weighted_average(&locals, &volume_weights(part, &selected)).map_err(|e| err(&e))?;
                baselines::similarity_round_shares(&baselines::model_similarities(&locals, &reference))
            }
        };
        let next = weighted_average(&locals, &weights).map_err(|e| err(&e))?;
        numerics::check_finite(next.values()).map_err(|e| err(&e))?;
        let model_similarity = baselines::model_similarities(&locals, &next);

        let shapley = if cfg.method == Method::ShapleyMc {
            let utility = baselines::coalition_utility(&locals, test, &global)?;
            let mut rng = root.derive(&[STREAM_SHAPLEY, t as u64]);
            let est = baselines::shapley_monte_carlo(&utility, cfg.evaluation.shapley_permutations, &mut rng)?;
            for (client, phi) in selected.iter().zip(&est.values) {
                shapley_totals[*client] += phi;
            }
            Some(est.values)
        } else {
            None
        };

        global = next;
        let metrics = baselines::evaluate_model(&global, test);
        debug!("round {t}: accuracy {:.4} macro-F1 {:.4}", metrics.accuracy, metrics.macro_f1);
        rounds.push(RoundRecord {
            round: t,
            selected,
            weights,
            momentum,
            global_prototypes: globals.classes.iter().map(|g| g.as_ref().map(|g| g.vector.clone())).collect(),
            model_similarity,
            shapley,
            metrics,
        });
    }

    let mut completion_cfg = cfg.completion;
    completion_cfg.seed = root.derive(&[STREAM_COMPLETION, cfg.completion.seed]).seed();
    let completed = complete_tensor(&tensor, &completion_cfg)?;
    let completion_rank = cfg.completion.effective_rank(t_max, n);
    let hash = cfg.hash();

    let window = final_window(t_max);
    let tail = &rounds[t_max - window..];
    let final_metrics = ClassificationMetrics {
        accuracy: tail.iter().map(|r| r.metrics.accuracy).sum::<f64>() / window as f64,
        macro_f1: tail.iter().map(|r| r.metrics.macro_f1).sum::<f64>() / window as f64,
    };

    let profiles = part.profiles();
    let provenance = |method: &str, source: &str, notes: Vec<String>| Provenance {
        method: method.to_string(),
        config_hash: hash.clone(),
        source: source.to_string(),
        notes,
    };
    let mut results = vec![
        ContributionResult {
            scores: final_contributions(&completed, &ab)?,
            provenance: provenance("flce", "completed.bin", vec![format!("completion rank {completion_rank}")]),
        },
        ContributionResult {
            scores: baselines::contribution_by_volume(&part.sizes())?,
            provenance: provenance("fedavg", "client sizes", vec![]),
        },
    ];
    let mut record = RunRecord {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        config_hash: hash.clone(),
        num_classes: classes,
        model_config,
        clients: profiles,
        rounds,
        contributions: Vec::new(),
        final_metrics,
        final_window: window,
        completion_rank,
        tensor,
        completed,
        final_model: Some(global),
    };
    results.push(ContributionResult {
        scores: baselines::contribution_by_similarity(&record)?,
        provenance: provenance("similarity", "record.json model_similarity", vec![]),
    });
    if cfg.method == Method::ShapleyMc {
        let est = baselines::ShapleyEstimate { values: shapley_totals, permutations: cfg.evaluation.shapley_permutations, seed: Some(cfg.seed) };
        results.push(ContributionResult {
            scores: est.to_shares(),
            provenance: provenance(
                "shapley-mc",
                "record.json shapley",
                vec!["per-round values summed over rounds; negative totals clamped to 0 before normalizing".into()],
            ),
        });
    }
    let primary = results
        .iter()
        .position(|r| r.provenance.method == cfg.method.name())
        .expect("configured method is scored");
    let p = results.remove(primary);
    results.insert(0, p);
    record.contributions = results;
    info!(
        "run {}: final accuracy {:.4}, primary method {}",
        record.config_hash,
        record.final_metrics.accuracy,
        cfg.method.name()
    );
    Ok(record)
}

/// Lists every probability vector in a record that is off the simplex:
/// per-class mass, velocity and momentum, per-round aggregation weights, the
/// completed tensor rows and every final result.
pub fn audit_simplex_invariants(record: &RunRecord) -> Vec<String> {
    fn check(problems: &mut Vec<String>, label: String, v: &[f64]) {
        let s = numerics::sum(v);
        if v.iter().any(|x| *x < 0.0 || !x.is_finite()) || (s - 1.0).abs() > SIMPLEX_TOL {
            problems.push(format!("{label}: sum {s}"));
        }
    }
    let mut problems = Vec::new();
    for r in &record.rounds {
        check(&mut problems, format!("round {} weights", r.round), r.weights.as_slice());
        if r.weights.len() != r.selected.len() {
            problems.push(format!("round {} weights cover {} of {} clients", r.round, r.weights.len(), r.selected.len()));
        }
        for cm in &r.momentum.classes {
            let n = cm.clients.len();
            if cm.mass.len() != n || cm.velocity.len() != n || cm.momentum.len() != n {
                problems.push(format!("round {} class {}: support mismatch", r.round, cm.class));
            }
            check(&mut problems, format!("round {} class {} mass", r.round, cm.class), cm.mass.as_slice());
            check(&mut problems, format!("round {} class {} velocity", r.round, cm.class), cm.velocity.as_slice());
            check(&mut problems, format!("round {} class {} momentum", r.round, cm.class), cm.momentum.as_slice());
        }
    }
    let (rounds, clients, classes) = record.completed.dims();
    for t in 0..rounds {
        for c in 0..classes {
            let row: Vec<f64> = (0..clients).map(|k| record.completed.get(t, k, c).unwrap_or(f64::NAN)).collect();
            check(&mut problems, format!("completed round {t} class {c}"), &row);
        }
    }
    for res in &record.contributions {
        check(&mut problems, format!("{} contributions", res.provenance.method), res.scores.as_slice());
    }
    problems
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_is_deterministic_and_exhaustive() {
        let rng = SeededRng::new(11);
        assert_eq!(select_clients(5, 5, 3, &rng).unwrap(), vec![0, 1, 2, 3, 4]);
        let a = select_clients(50, 10, 7, &rng).unwrap();
        assert_eq!(a, select_clients(50, 10, 7, &rng).unwrap());
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(select_clients(3, 4, 0, &rng).is_err());
    }

    #[test]
    fn window_sizes() {
        assert_eq!(final_window(1), 1);
        assert_eq!(final_window(30), 3);
        assert_eq!(final_window(5000), 100);
    }

    #[test]
    fn config_validation_names_keys() {
        let mut cfg = RunConfig::default();
        cfg.federation.per_round = 60;
        let e = cfg.validate().unwrap_err().to_string();
        assert!(e.contains("federation.per_round"), "{e}");
        let mut cfg = RunConfig::default();
        cfg.data.partition = PartitionKind::Volume;
        assert!(cfg.validate().unwrap_err().to_string().contains("data.volume_weights"));
    }
}
