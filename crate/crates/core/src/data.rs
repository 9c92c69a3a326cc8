//! Datasets, synthetic generation, CSV ingestion, client partitioning, noise
//! injection and reference data-quality distributions.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use rand_distr::{Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, SeededRng, SimplexVector};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("empty dataset")]
    Empty,
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: label {value:?} is not a non-negative integer")]
    BadLabel { line: u64, value: String },
    #[error("line {line}: expected {expected} columns, found {found}")]
    InconsistentWidth { line: u64, expected: usize, found: usize },
    #[error("dataset has {samples} samples, fewer than {clients} clients")]
    TooSmall { samples: usize, clients: usize },
    #[error("unknown client id {0}")]
    UnknownClient(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    num_classes: usize,
    input_dim: usize,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self, DataError> {
        if features.is_empty() {
            return Err(DataError::Empty);
        }
        if features.len() != labels.len() {
            return Err(DataError::InvalidParameter(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let input_dim = features[0].len();
        for (i, f) in features.iter().enumerate() {
            if f.len() != input_dim {
                return Err(DataError::InvalidParameter(format!("row {i} has width {}", f.len())));
            }
            if numerics::check_finite(f).is_err() {
                return Err(DataError::InvalidParameter(format!("row {i} has a non-finite feature")));
            }
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(DataError::InvalidParameter(format!("label {y} >= {num_classes} classes")));
        }
        Ok(Self { features, labels, num_classes, input_dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn all_features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            input_dim: self.input_dim,
        }
    }
}

/// Gaussian class clusters around seeded means on the unit sphere.
#[derive(Debug, Clone)]
pub struct SyntheticGenerator {
    means: Vec<Vec<f64>>,
    spread: f64,
}

impl SyntheticGenerator {
    pub fn new(num_classes: usize, input_dim: usize, spread: f64, rng: &mut SeededRng) -> Result<Self, DataError> {
        if num_classes < 2 || input_dim < 2 {
            return Err(DataError::InvalidParameter("synthetic data needs >= 2 classes and >= 2 features".into()));
        }
        if !(spread >= 0.0) || !spread.is_finite() {
            return Err(DataError::InvalidParameter("spread must be finite and >= 0".into()));
        }
        let means = (0..num_classes)
            .map(|_| loop {
                let v: Vec<f64> = (0..input_dim).map(|_| rng.sample(StandardNormal)).collect();
                let n = numerics::norm(&v);
                if n > 1e-12 {
                    break v.into_iter().map(|x| x / n).collect();
                }
            })
            .collect();
        Ok(Self { means, spread })
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    /// `per_class` samples of every class, grouped by class.
    pub fn sample(&self, per_class: usize, rng: &mut SeededRng) -> Result<Dataset, DataError> {
        let c = self.means.len();
        let mut features = Vec::with_capacity(c * per_class);
        let mut labels = Vec::with_capacity(c * per_class);
        for (y, mean) in self.means.iter().enumerate() {
            for _ in 0..per_class {
                let x = mean
                    .iter()
                    .map(|m| {
                        let z: f64 = rng.sample(StandardNormal);
                        m + self.spread * z
                    })
                    .collect();
                features.push(x);
                labels.push(y);
            }
        }
        Dataset::new(features, labels, c)
    }
}

pub fn generate_synthetic(
    num_classes: usize,
    input_dim: usize,
    per_class: usize,
    spread: f64,
    rng: &mut SeededRng,
) -> Result<Dataset, DataError> {
    SyntheticGenerator::new(num_classes, input_dim, spread, rng)?.sample(per_class, rng)
}

/// Reads rows of `f1,...,fI,label`; the class count is the largest label + 1.
pub fn load_csv_dataset(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < 2 {
            return Err(DataError::Malformed {
                line,
                message: "need at least one feature and a label".into(),
            });
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(DataError::InconsistentWidth { line, expected, found: record.len() });
        }
        let label_field = &record[record.len() - 1];
        let label: usize = label_field.parse().map_err(|_| DataError::BadLabel {
            line,
            value: label_field.to_string(),
        })?;
        let mut row = Vec::with_capacity(record.len() - 1);
        for field in record.iter().take(record.len() - 1) {
            let v: f64 = field.parse().map_err(|_| DataError::Malformed {
                line,
                message: format!("feature {field:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(DataError::Malformed { line, message: "non-finite feature".into() });
            }
            row.push(v);
        }
        features.push(row);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(DataError::Empty);
    }
    let classes = labels.iter().max().copied().unwrap_or(0) + 1;
    Dataset::new(features, labels, classes)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseFlag {
    pub label: bool,
    pub feature: bool,
}

impl NoiseFlag {
    pub fn is_clean(&self) -> bool {
        !self.label && !self.feature
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientData {
    /// Row indices into the source dataset.
    pub indices: Vec<usize>,
    pub data: Dataset,
    pub flags: Vec<NoiseFlag>,
}

impl ClientData {
    fn new(source: &Dataset, indices: Vec<usize>) -> Self {
        let data = source.subset(&indices);
        let flags = vec![NoiseFlag::default(); indices.len()];
        Self { indices, data, flags }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Summary statistics of one client's data, enough to rebuild quality
/// references without the samples themselves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub size: usize,
    pub class_counts: Vec<usize>,
    pub label_noised: usize,
    pub feature_noised: usize,
}

impl ClientProfile {
    pub fn classes_owned(&self) -> usize {
        self.class_counts.iter().filter(|&&c| c > 0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub clients: Vec<ClientData>,
    pub num_classes: usize,
}

impl Partition {
    fn from_index_lists(source: &Dataset, lists: Vec<Vec<usize>>) -> Self {
        Self {
            clients: lists.into_iter().map(|l| ClientData::new(source, l)).collect(),
            num_classes: source.num_classes(),
        }
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clients.iter().map(|c| c.len()).collect()
    }

    pub fn profiles(&self) -> Vec<ClientProfile> {
        self.clients
            .iter()
            .map(|c| ClientProfile {
                size: c.len(),
                class_counts: c.data.class_counts(),
                label_noised: c.flags.iter().filter(|f| f.label).count(),
                feature_noised: c.flags.iter().filter(|f| f.feature).count(),
            })
            .collect()
    }

    /// Audit manifest: client id, source indices and noise flags.
    pub fn manifest_json(&self) -> String {
        #[derive(Serialize)]
        struct Entry<'a> {
            client: usize,
            indices: &'a [usize],
            flags: &'a [NoiseFlag],
        }
        #[derive(Serialize)]
        struct Manifest<'a> {
            num_classes: usize,
            clients: Vec<Entry<'a>>,
        }
        let m = Manifest {
            num_classes: self.num_classes,
            clients: self
                .clients
                .iter()
                .enumerate()
                .map(|(client, c)| Entry { client, indices: &c.indices, flags: &c.flags })
                .collect(),
        };
        serde_json::to_string_pretty(&m).expect("manifest serializes")
    }

    fn check_clients(&self, ids: &[usize]) -> Result<BTreeSet<usize>, DataError> {
        let set: BTreeSet<usize> = ids.iter().copied().collect();
        match set.iter().find(|&&id| id >= self.clients.len()) {
            Some(&id) => Err(DataError::UnknownClient(id)),
            None => Ok(set),
        }
    }
}

/// Shuffles and deals samples into `n` near-equal clients.
pub fn partition_iid(ds: &Dataset, n: usize, rng: &mut SeededRng) -> Result<Partition, DataError> {
    partition_by_weights(ds, &vec![1.0; n], rng)
}

/// Shuffles and splits the dataset into clients whose sizes are proportional
/// to `weights` (largest-remainder rounding, every client at least one sample).
pub fn partition_by_weights(ds: &Dataset, weights: &[f64], rng: &mut SeededRng) -> Result<Partition, DataError> {
    let n = weights.len();
    if n == 0 {
        return Err(DataError::InvalidParameter("no clients".into()));
    }
    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(DataError::InvalidParameter("volume weights must be positive".into()));
    }
    if ds.len() < n {
        return Err(DataError::TooSmall { samples: ds.len(), clients: n });
    }
    let total = numerics::sum(weights);
    let spare = (ds.len() - n) as f64;
    let exact: Vec<f64> = weights.iter().map(|w| spare * w / total).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| 1 + e.floor() as usize).collect();
    let mut remainder = ds.len() - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..n).collect();
    // Largest fractional part first; ties broken by client id.
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if remainder == 0 {
            break;
        }
        sizes[k] += 1;
        remainder -= 1;
    }
    let perm = rng.permutation(ds.len());
    let mut lists = Vec::with_capacity(n);
    let mut start = 0;
    for s in sizes {
        lists.push(perm[start..start + s].to_vec());
        start += s;
    }
    Ok(Partition::from_index_lists(ds, lists))
}

/// Label-skew split: each class is spread over the clients by its own
/// Dirichlet(δ·1) draw. Clients left empty receive one sample from the
/// currently largest client.
pub fn partition_dirichlet(ds: &Dataset, n: usize, delta: f64, rng: &mut SeededRng) -> Result<Partition, DataError> {
    if n < 2 {
        return Err(DataError::InvalidParameter("dirichlet partition needs >= 2 clients".into()));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(DataError::InvalidParameter("dirichlet coefficient must be > 0".into()));
    }
    if ds.len() < n {
        return Err(DataError::TooSmall { samples: ds.len(), clients: n });
    }
    let gamma = Gamma::new(delta, 1.0).map_err(|e| DataError::InvalidParameter(e.to_string()))?;
    let mut lists: Vec<Vec<usize>> = vec![Vec::new(); n];
    for class in 0..ds.num_classes() {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.label(i) == class).collect();
        if members.is_empty() {
            continue;
        }
        rng.shuffle(&mut members);
        let draws: Vec<f64> = (0..n).map(|_| rng.sample(gamma)).collect();
        let props = numerics::normalize_to_simplex(&draws)
            .unwrap_or_else(|_| SimplexVector::uniform(n));
        let total = members.len();
        let mut cum = 0.0;
        let mut start = 0;
        for (k, p) in props.as_slice().iter().enumerate() {
            cum += p;
            let end = if k + 1 == n {
                total
            } else {
                ((cum * total as f64).round() as usize).clamp(start, total)
            };
            lists[k].extend_from_slice(&members[start..end]);
            start = end;
        }
    }
    while let Some(empty) = lists.iter().position(|l| l.is_empty()) {
        let largest = (0..n)
            .max_by(|&a, &b| lists[a].len().cmp(&lists[b].len()).then(b.cmp(&a)))
            .expect("n >= 2");
        let moved = lists[largest].pop().expect("largest client is nonempty");
        lists[empty].push(moved);
    }
    Ok(Partition::from_index_lists(ds, lists))
}

/// Replaces the labels of `⌊rate·|D_k|⌋` samples of each targeted client with
/// a uniformly drawn wrong label.
pub fn inject_label_noise(
    part: &Partition,
    client_ids: &[usize],
    rate: f64,
    rng: &SeededRng,
) -> Result<Partition, DataError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(DataError::InvalidParameter("label noise rate must lie in [0, 1]".into()));
    }
    let targets = part.check_clients(client_ids)?;
    let mut out = part.clone();
    let classes = part.num_classes;
    for id in targets {
        let client = &mut out.clients[id];
        let count = (rate * client.len() as f64).floor() as usize;
        if count == 0 {
            continue;
        }
        if classes < 2 {
            return Err(DataError::InvalidParameter("label noise needs >= 2 classes".into()));
        }
        let mut stream = rng.derive(&[id as u64]);
        let order = stream.permutation(client.len());
        for &i in &order[..count] {
            let y = client.data.labels[i];
            client.data.labels[i] = (y + 1 + stream.below(classes - 1)) % classes;
            client.flags[i].label = true;
        }
    }
    Ok(out)
}

/// Adds N(0, σ²) noise to every feature of every sample on the targeted clients.
pub fn inject_feature_noise(
    part: &Partition,
    client_ids: &[usize],
    sigma: f64,
    rng: &SeededRng,
) -> Result<Partition, DataError> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(DataError::InvalidParameter("feature noise sigma must be >= 0".into()));
    }
    let targets = part.check_clients(client_ids)?;
    let mut out = part.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    for id in targets {
        let client = &mut out.clients[id];
        let mut stream = rng.derive(&[id as u64]);
        for (row, flag) in client.data.features.iter_mut().zip(client.flags.iter_mut()) {
            for v in row.iter_mut() {
                let z: f64 = stream.sample(StandardNormal);
                *v += sigma * z;
            }
            flag.feature = true;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QualityMode {
    Volume,
    ClassDiversity,
}

impl std::str::FromStr for QualityMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "volume" => Ok(Self::Volume),
            "diversity" | "class-diversity" => Ok(Self::ClassDiversity),
            other => Err(format!("unknown quality mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityDistribution {
    pub mode: QualityMode,
    pub shares: SimplexVector,
}

pub fn quality_distribution(part: &Partition, mode: QualityMode) -> Result<QualityDistribution, DataError> {
    quality_from_profiles(&part.profiles(), part.num_classes, mode)
}

/// Volume mode: shares ∝ |D_k|. Class-diversity mode: shares ∝
/// |D_k| · classes_owned_k / C.
pub fn quality_from_profiles(
    profiles: &[ClientProfile],
    num_classes: usize,
    mode: QualityMode,
) -> Result<QualityDistribution, DataError> {
    if profiles.is_empty() || num_classes == 0 {
        return Err(DataError::Empty);
    }
    let raw: Vec<f64> = profiles
        .iter()
        .map(|p| match mode {
            QualityMode::Volume => p.size as f64,
            QualityMode::ClassDiversity => p.size as f64 * p.classes_owned() as f64 / num_classes as f64,
        })
        .collect();
    let shares = numerics::normalize_to_simplex(&raw).map_err(|_| DataError::Empty)?;
    Ok(QualityDistribution { mode, shares })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn profile(size: usize, owned: usize, classes: usize) -> ClientProfile {
        let mut counts = vec![0; classes];
        for c in counts.iter_mut().take(owned) {
            *c = size / owned;
        }
        ClientProfile { size, class_counts: counts, label_noised: 0, feature_noised: 0 }
    }

    #[test]
    fn synthetic_counts_and_determinism() {
        let a = generate_synthetic(2, 3, 10, 0.5, &mut SeededRng::new(1)).unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a.class_counts(), vec![10, 10]);
        let b = generate_synthetic(2, 3, 10, 0.5, &mut SeededRng::new(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_spread_collapses_to_means() {
        let mut rng = SeededRng::new(5);
        let g = SyntheticGenerator::new(3, 4, 0.0, &mut rng).unwrap();
        let ds = g.sample(5, &mut rng).unwrap();
        for i in 0..ds.len() {
            assert_eq!(ds.features(i), g.means()[ds.label(i)].as_slice());
        }
    }

    #[test]
    fn csv_loading() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "0.5,1.0,0\n-1,2,2\n3,4.5,1").unwrap();
        let ds = load_csv_dataset(f.path()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.num_classes(), 3);
        assert_eq!(ds.features(1), &[-1.0, 2.0]);

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "1,2,0\n1,2,x").unwrap();
        let err = load_csv_dataset(bad.path()).unwrap_err();
        assert!(matches!(err, DataError::BadLabel { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("line 2"));

        let mut ragged = tempfile::NamedTempFile::new().unwrap();
        writeln!(ragged, "1,2,0\n1,0").unwrap();
        assert!(matches!(
            load_csv_dataset(ragged.path()),
            Err(DataError::InconsistentWidth { line: 2, expected: 3, found: 2 })
        ));

        let empty = tempfile::NamedTempFile::new().unwrap();
        assert!(matches!(load_csv_dataset(empty.path()), Err(DataError::Empty)));
    }

    #[test]
    fn dirichlet_rejects_tiny_dataset() {
        let ds = generate_synthetic(2, 2, 1, 0.1, &mut SeededRng::new(0)).unwrap();
        assert!(matches!(
            partition_dirichlet(&ds, 3, 0.5, &mut SeededRng::new(0)),
            Err(DataError::TooSmall { .. })
        ));
    }

    #[test]
    fn dirichlet_repairs_empty_clients() {
        let ds = generate_synthetic(2, 2, 10, 0.1, &mut SeededRng::new(0)).unwrap();
        for seed in 0..20 {
            let p = partition_dirichlet(&ds, 8, 0.01, &mut SeededRng::new(seed)).unwrap();
            assert!(p.clients.iter().all(|c| !c.is_empty()));
            assert_eq!(p.sizes().iter().sum::<usize>(), 20);
        }
    }

    #[test]
    fn label_noise_counts() {
        let ds = generate_synthetic(2, 2, 50, 0.1, &mut SeededRng::new(0)).unwrap();
        let part = partition_iid(&ds, 1, &mut SeededRng::new(0)).unwrap();
        let rng = SeededRng::new(3);
        assert_eq!(inject_label_noise(&part, &[0], 0.0, &rng).unwrap(), part);

        let half = inject_label_noise(&part, &[0], 0.5, &rng).unwrap();
        assert_eq!(half.clients[0].flags.iter().filter(|f| f.label).count(), 50);

        let all = inject_label_noise(&part, &[0], 1.0, &rng).unwrap();
        for (a, b) in all.clients[0].data.labels().iter().zip(part.clients[0].data.labels()) {
            assert_ne!(a, b);
        }
        assert!(matches!(inject_label_noise(&part, &[4], 0.5, &rng), Err(DataError::UnknownClient(4))));
    }

    #[test]
    fn feature_noise_flags() {
        let ds = generate_synthetic(3, 4, 20, 0.1, &mut SeededRng::new(0)).unwrap();
        let part = partition_iid(&ds, 3, &mut SeededRng::new(0)).unwrap();
        let rng = SeededRng::new(4);
        assert_eq!(inject_feature_noise(&part, &[0, 2], 0.0, &rng).unwrap(), part);
        let noisy = inject_feature_noise(&part, &[0, 2], 0.3, &rng).unwrap();
        let flagged: usize = noisy.clients.iter().map(|c| c.flags.iter().filter(|f| f.feature).count()).sum();
        assert_eq!(flagged, part.clients[0].len() + part.clients[2].len());
        assert_eq!(noisy.clients[1], part.clients[1]);
    }

    #[test]
    fn quality_examples() {
        let q = quality_from_profiles(&[profile(100, 10, 10), profile(300, 10, 10)], 10, QualityMode::Volume).unwrap();
        assert_eq!(q.shares.as_slice(), &[0.25, 0.75]);

        let q = quality_from_profiles(&[profile(100, 5, 10), profile(300, 10, 10)], 10, QualityMode::ClassDiversity)
            .unwrap();
        assert!((q.shares[0] - 0.142857).abs() < 1e-6);
        assert!((q.shares[1] - 0.857143).abs() < 1e-6);

        let same = vec![profile(40, 4, 10); 4];
        let q = quality_from_profiles(&same, 10, QualityMode::ClassDiversity).unwrap();
        assert!(q.shares.is_uniform());
    }
}
