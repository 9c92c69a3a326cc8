//! MLP encoder with a linear classifier head, trained on cross entropy plus a
//! supervised contrastive term over cosine similarities.
//!
//! Parameters live in one flat `Vec<f64>`; each dense layer stores its weights
//! row-major as `[out][in]` followed by its `out` biases. Hidden layers use a
//! rectifier, the representation layer and the classifier are linear.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::numerics::{self, NumericsError, SeededRng};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty batch or dataset")]
    Empty,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("model blob: {0}")]
    Format(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub repr_dim: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            hidden_dims: vec![64],
            repr_dim: 64,
            num_classes: 10,
        }
    }
}

impl ModelConfig {
    /// `(fan_in, fan_out)` of every dense layer, classifier last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        let mut prev = self.input_dim;
        for &h in self.hidden_dims.iter().chain(std::iter::once(&self.repr_dim)) {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((self.repr_dim, self.num_classes));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.repr_dim == 0 || self.num_classes == 0 {
            return Err(ModelError::InvalidConfig(
                "input_dim, repr_dim and num_classes must be positive".into(),
            ));
        }
        if self.hidden_dims.contains(&0) {
            return Err(ModelError::InvalidConfig("hidden layer of width 0".into()));
        }
        Ok(())
    }

    fn relu_after(&self, layer: usize) -> bool {
        layer < self.hidden_dims.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the contrastive term.
    pub lambda: f64,
    pub temperature: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            temperature: 0.5,
            learning_rate: 0.01,
            batch_size: 64,
            local_epochs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.into()));
        if !(self.temperature > 0.0) {
            return bad("temperature must be > 0");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite and >= 0");
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be finite and >= 0");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be >= 2");
        }
        if self.local_epochs == 0 {
            return bad("local_epochs must be >= 1");
        }
        Ok(())
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            temperature: self.temperature,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    config: ModelConfig,
    values: Vec<f64>,
}

struct Trace {
    /// Input to each layer; `inputs[L]` holds the logits.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Self {
        let n = config.param_count();
        Self {
            config,
            values: vec![0.0; n],
        }
    }

    /// Weights and biases drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn init(config: ModelConfig, rng: &mut SeededRng) -> Self {
        let mut values = Vec::with_capacity(config.param_count());
        for (fan_in, fan_out) in config.layer_dims() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out + fan_out {
                values.push(rng.uniform_range(-bound, bound));
            }
        }
        Self { config, values }
    }

    pub fn from_values(config: ModelConfig, values: Vec<f64>) -> Result<Self, ModelError> {
        let expected = config.param_count();
        if values.len() != expected {
            return Err(ModelError::ShapeMismatch {
                expected,
                got: values.len(),
            });
        }
        numerics::check_finite(&values)?;
        Ok(Self { config, values })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.config.input_dim {
            return Err(ModelError::ShapeMismatch {
                expected: self.config.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let dims = self.config.layer_dims();
        let mut inputs = Vec::with_capacity(dims.len() + 1);
        let mut pre = Vec::with_capacity(dims.len());
        inputs.push(x.to_vec());
        let mut offset = 0;
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = &self.values[offset..offset + fan_in * fan_out];
            let b = &self.values[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let input = &inputs[l];
            let z: Vec<f64> = (0..fan_out)
                .map(|o| b[o] + numerics::dot(&w[o * fan_in..(o + 1) * fan_in], input))
                .collect();
            let out = if self.config.relu_after(l) {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            inputs.push(out);
        }
        Trace { inputs, pre }
    }

    /// Representation and logits for one input.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        self.check_input(x)?;
        let mut t = self.trace(x);
        let logits = t.inputs.pop().expect("at least one layer");
        let repr = t.inputs.pop().expect("encoder output");
        Ok((repr, logits))
    }

    /// Accumulates the gradient for one sample given the upstream gradients on
    /// the logits and on the representation.
    fn backward(&self, t: &Trace, d_logits: &[f64], d_repr_extra: &[f64], grad: &mut [f64]) {
        let dims = self.config.layer_dims();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for &(i, o) in &dims {
            offsets.push(off);
            off += i * o + o;
        }
        let mut d_out = d_logits.to_vec();
        for l in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[l];
            if self.config.relu_after(l) {
                for (d, z) in d_out.iter_mut().zip(&t.pre[l]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let w_off = offsets[l];
            let b_off = w_off + fan_in * fan_out;
            let input = &t.inputs[l];
            for o in 0..fan_out {
                let d = d_out[o];
                if d == 0.0 {
                    continue;
                }
                numerics::axpy(&mut grad[w_off + o * fan_in..w_off + (o + 1) * fan_in], d, input);
                grad[b_off + o] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.values[w_off..b_off];
            let mut d_in = vec![0.0; fan_in];
            for o in 0..fan_out {
                if d_out[o] != 0.0 {
                    numerics::axpy(&mut d_in, d_out[o], &w[o * fan_in..(o + 1) * fan_in]);
                }
            }
            // The classifier input is the representation.
            if l == dims.len() - 1 {
                numerics::axpy(&mut d_in, 1.0, d_repr_extra);
            }
            d_out = d_in;
        }
    }

    /// Rectifier activation pattern over a batch; used to detect kinks during
    /// finite-difference checks.
    fn activation_pattern(&self, batch: &[Vec<f64>]) -> Vec<bool> {
        let mut pattern = Vec::new();
        for x in batch {
            let t = self.trace(x);
            for l in 0..self.config.hidden_dims.len() {
                pattern.extend(t.pre[l].iter().map(|z| *z > 0.0));
            }
        }
        pattern
    }

    /// Blob layout: little-endian `u32` header length, a JSON shape header,
    /// then `len` little-endian `f64` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = BlobHeader {
            input_dim: self.config.input_dim,
            hidden_dims: self.config.hidden_dims.clone(),
            repr_dim: self.config.repr_dim,
            num_classes: self.config.num_classes,
            len: self.values.len(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(4 + json.len() + 8 * self.values.len());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let fmt = |m: &str| ModelError::Format(m.to_string());
        if bytes.len() < 4 {
            return Err(fmt("truncated header length"));
        }
        let hlen = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        let body = bytes.get(4..4 + hlen).ok_or_else(|| fmt("truncated header"))?;
        let header: BlobHeader =
            serde_json::from_slice(body).map_err(|e| ModelError::Format(e.to_string()))?;
        let data = &bytes[4 + hlen..];
        if data.len() != header.len * 8 {
            return Err(fmt("payload length does not match header"));
        }
        let values = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let config = ModelConfig {
            input_dim: header.input_dim,
            hidden_dims: header.hidden_dims,
            repr_dim: header.repr_dim,
            num_classes: header.num_classes,
        };
        Self::from_values(config, values)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), ModelError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, ModelError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

#[derive(Serialize, Deserialize)]
struct BlobHeader {
    input_dim: usize,
    hidden_dims: Vec<usize>,
    repr_dim: usize,
    num_classes: usize,
    len: usize,
}

fn check_labels(labels: &[usize], classes: usize) -> Result<(), ModelError> {
    match labels.iter().find(|&&y| y >= classes) {
        Some(&label) => Err(ModelError::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}

/// Mean negative log-likelihood of the true labels.
pub fn loss_ce(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64, ModelError> {
    if logits.is_empty() {
        return Err(ModelError::Empty);
    }
    if logits.len() != labels.len() {
        return Err(ModelError::ShapeMismatch {
            expected: logits.len(),
            got: labels.len(),
        });
    }
    let mut total = 0.0;
    for (l, &y) in logits.iter().zip(labels) {
        check_labels(&[y], l.len())?;
        total += -log_softmax_at(l, y);
    }
    Ok(total / logits.len() as f64)
}

fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits[index] - lse
}

/// Supervised contrastive loss with cosine similarity.
///
/// Positives for sample `i` are the other samples sharing its label; the
/// denominator runs over every `k != i`. Samples without positives add zero
/// but still count in the batch mean.
pub fn loss_supcon(reprs: &[Vec<f64>], labels: &[usize], temperature: f64) -> Result<f64, ModelError> {
    Ok(supcon_with_grad(reprs, labels, temperature, false)?.0)
}

fn supcon_with_grad(
    reprs: &[Vec<f64>],
    labels: &[usize],
    temperature: f64,
    want_grad: bool,
) -> Result<(f64, Vec<Vec<f64>>), ModelError> {
    let n = reprs.len();
    if n < 2 {
        return Err(ModelError::InvalidConfig("contrastive batch needs >= 2 samples".into()));
    }
    if labels.len() != n {
        return Err(ModelError::ShapeMismatch { expected: n, got: labels.len() });
    }
    if !(temperature > 0.0) {
        return Err(ModelError::InvalidConfig("temperature must be > 0".into()));
    }
    let dim = reprs[0].len();
    let mut grads = if want_grad { vec![vec![0.0; dim]; n] } else { Vec::new() };
    let positives: Vec<usize> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && labels[j] == labels[i]).count())
        .collect();
    if positives.iter().all(|&p| p == 0) {
        return Ok((0.0, grads));
    }

    let norms: Vec<f64> = reprs.iter().map(|z| numerics::norm(z)).collect();
    if norms.iter().any(|&v| v == 0.0 || !v.is_finite()) {
        return Err(NumericsError::DegenerateVector.into());
    }
    let units: Vec<Vec<f64>> = reprs
        .iter()
        .zip(&norms)
        .map(|(z, nz)| z.iter().map(|v| v / nz).collect())
        .collect();
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for k in i..n {
            let s = numerics::dot(&units[i], &units[k]);
            sim[i * n + k] = s;
            sim[k * n + i] = s;
        }
    }

    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    // g[i*n+k] = d loss / d sim(i,k), treating sim(i,k) and sim(k,i) as distinct.
    let mut g = vec![0.0; if want_grad { n * n } else { 0 }];
    for i in 0..n {
        if positives[i] == 0 {
            continue;
        }
        let row = &sim[i * n..(i + 1) * n];
        let max = (0..n)
            .filter(|&k| k != i)
            .map(|k| row[k] / temperature)
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n)
            .filter(|&k| k != i)
            .map(|k| (row[k] / temperature - max).exp())
            .sum();
        let lse = max + denom.ln();
        let p = positives[i] as f64;
        let mut li = 0.0;
        for j in 0..n {
            if j != i && labels[j] == labels[i] {
                li -= row[j] / temperature - lse;
            }
        }
        loss += li / p;
        if want_grad {
            for k in 0..n {
                if k == i {
                    continue;
                }
                let soft = (row[k] / temperature - max).exp() / denom;
                let pos = if labels[k] == labels[i] { 1.0 / p } else { 0.0 };
                g[i * n + k] = inv_n * (soft - pos) / temperature;
            }
        }
    }
    loss *= inv_n;

    if want_grad {
        for i in 0..n {
            let mut du = vec![0.0; dim];
            for k in 0..n {
                let c = g[i * n + k] + g[k * n + i];
                if c != 0.0 {
                    numerics::axpy(&mut du, c, &units[k]);
                }
            }
            let proj = numerics::dot(&units[i], &du);
            for d in 0..dim {
                grads[i][d] = (du[d] - proj * units[i][d]) / norms[i];
            }
        }
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub cross_entropy: f64,
    pub contrastive: f64,
    pub total: f64,
}

fn check_batch(params: &ModelParams, xs: &[Vec<f64>], labels: &[usize]) -> Result<(), ModelError> {
    if xs.is_empty() {
        return Err(ModelError::Empty);
    }
    if xs.len() != labels.len() {
        return Err(ModelError::ShapeMismatch { expected: xs.len(), got: labels.len() });
    }
    for x in xs {
        params.check_input(x)?;
    }
    check_labels(labels, params.config.num_classes)
}

/// Combined loss `CE + lambda * SupCon` on a batch, without gradients.
pub fn batch_loss(
    params: &ModelParams,
    xs: &[Vec<f64>],
    labels: &[usize],
    cfg: LossConfig,
) -> Result<LossParts, ModelError> {
    check_batch(params, xs, labels)?;
    let traces: Vec<Trace> = xs.iter().map(|x| params.trace(x)).collect();
    let l = params.config.layer_dims().len();
    let logits: Vec<Vec<f64>> = traces.iter().map(|t| t.inputs[l].clone()).collect();
    let ce = loss_ce(&logits, labels)?;
    let cl = if cfg.lambda != 0.0 && xs.len() >= 2 {
        let reprs: Vec<Vec<f64>> = traces.iter().map(|t| t.inputs[l - 1].clone()).collect();
        loss_supcon(&reprs, labels, cfg.temperature)?
    } else {
        0.0
    };
    Ok(LossParts { cross_entropy: ce, contrastive: cl, total: ce + cfg.lambda * cl })
}

/// Combined loss and its analytic gradient with respect to every parameter.
pub fn loss_and_gradient(
    params: &ModelParams,
    xs: &[Vec<f64>],
    labels: &[usize],
    cfg: LossConfig,
) -> Result<(LossParts, Vec<f64>), ModelError> {
    check_batch(params, xs, labels)?;
    let n = xs.len();
    let l = params.config.layer_dims().len();
    let traces: Vec<Trace> = xs.iter().map(|x| params.trace(x)).collect();

    let mut ce = 0.0;
    let mut d_logits = Vec::with_capacity(n);
    for (t, &y) in traces.iter().zip(labels) {
        let logits = &t.inputs[l];
        ce -= log_softmax_at(logits, y);
        let mut p = numerics::softmax_unchecked(logits);
        p[y] -= 1.0;
        p.iter_mut().for_each(|v| *v /= n as f64);
        d_logits.push(p);
    }
    ce /= n as f64;

    let (cl, d_repr) = if cfg.lambda != 0.0 && n >= 2 {
        let reprs: Vec<Vec<f64>> = traces.iter().map(|t| t.inputs[l - 1].clone()).collect();
        let (loss, mut g) = supcon_with_grad(&reprs, labels, cfg.temperature, true)?;
        g.iter_mut().flatten().for_each(|v| *v *= cfg.lambda);
        (loss, g)
    } else {
        (0.0, vec![vec![0.0; params.config.repr_dim]; n])
    };

    let mut grad = vec![0.0; params.len()];
    for i in 0..n {
        params.backward(&traces[i], &d_logits[i], &d_repr[i], &mut grad);
    }
    Ok((LossParts { cross_entropy: ce, contrastive: cl, total: ce + cfg.lambda * cl }, grad))
}

/// Mini-batch SGD on the combined loss. Each epoch visits the dataset in a
/// fresh seeded order; the final batch of an epoch may be short.
pub fn local_train(
    params: &ModelParams,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<ModelParams, ModelError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(ModelError::Empty);
    }
    let mut out = params.clone();
    let loss_cfg = cfg.loss();
    for _ in 0..cfg.local_epochs {
        let order = rng.permutation(data.len());
        for chunk in order.chunks(cfg.batch_size) {
            let xs: Vec<Vec<f64>> = chunk.iter().map(|&i| data.features(i).to_vec()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| data.label(i)).collect();
            let (_, grad) = loss_and_gradient(&out, &xs, &ys, loss_cfg)?;
            numerics::axpy(&mut out.values, -cfg.learning_rate, &grad);
            numerics::check_finite(&out.values)?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Number of randomly chosen coordinates; all coordinates when larger
    /// than the parameter count.
    pub coordinates: usize,
    pub step: f64,
    /// Scales the analytic gradient by 1.1 so the failure path can be
    /// exercised.
    pub corrupt: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { coordinates: 200, step: 1e-5, corrupt: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the perturbation crossed a rectifier kink.
    pub skipped: usize,
}

/// Relative errors are taken against `max(|analytic|, |numeric|, 1e-6)`.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares the analytic gradient with central finite differences on a
/// seeded subset of coordinates.
pub fn gradient_check(
    params: &ModelParams,
    xs: &[Vec<f64>],
    labels: &[usize],
    cfg: LossConfig,
    opts: GradCheckOptions,
    rng: &mut SeededRng,
) -> Result<GradCheckReport, ModelError> {
    let (_, mut analytic) = loss_and_gradient(params, xs, labels, cfg)?;
    if opts.corrupt {
        analytic.iter_mut().for_each(|g| *g *= 1.1);
    }
    let mut coords = rng.permutation(params.len());
    coords.truncate(opts.coordinates.min(params.len()));
    coords.sort_unstable();

    let base_pattern = params.activation_pattern(xs);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe = params.clone();
    for &c in &coords {
        let orig = probe.values[c];
        probe.values[c] = orig + opts.step;
        let plus_pattern = probe.activation_pattern(xs);
        let plus = batch_loss(&probe, xs, labels, cfg)?.total;
        probe.values[c] = orig - opts.step;
        let minus_pattern = probe.activation_pattern(xs);
        let minus = batch_loss(&probe, xs, labels, cfg)?.total;
        probe.values[c] = orig;
        if plus_pattern != base_pattern || minus_pattern != base_pattern {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * opts.step);
        let abs = (analytic[c] - numeric).abs();
        let rel = abs / analytic[c].abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        report.max_absolute_error = report.max_absolute_error.max(abs);
        report.max_relative_error = report.max_relative_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

/// A small random network and batch used by the command-line gradient check.
pub struct GradCheckInstance {
    pub params: ModelParams,
    pub xs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub loss: LossConfig,
}

pub fn gradcheck_instance(seed: u64) -> GradCheckInstance {
    let mut rng = SeededRng::new(seed);
    let config = ModelConfig {
        input_dim: 5,
        hidden_dims: vec![8],
        repr_dim: 6,
        num_classes: 3,
    };
    let params = ModelParams::init(config, &mut rng);
    let n = 9;
    let xs = (0..n)
        .map(|_| (0..5).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
        .collect();
    // Three labels, each at least twice, so every sample has a positive.
    let mut labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    rng.shuffle(&mut labels);
    GradCheckInstance {
        params,
        xs,
        labels,
        loss: LossConfig { lambda: 1.0, temperature: 0.5 },
    }
}
