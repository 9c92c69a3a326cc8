use flce::data::Dataset;
use flce::model::{batch_loss, local_train, ModelConfig, ModelParams, TrainConfig};
use flce::numerics::SeededRng;

fn config() -> ModelConfig {
    ModelConfig { input_dim: 3, hidden_dims: vec![4], repr_dim: 2, num_classes: 3 }
}

fn dataset(seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed);
    let xs: Vec<Vec<f64>> = (0..7).map(|_| (0..3).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).collect();
    let ys = vec![0, 1, 2, 0, 1, 2, 0];
    Dataset::new(xs, ys, 3).unwrap()
}

/// Independent cross-entropy gradient for a 3-4-2-3 network written with
/// explicit loops: hidden ReLU layer, linear representation, linear logits.
/// Layout per layer: weights `[out][in]` row-major, then biases.
fn hand_rolled_ce_step(p: &[f64], data: &Dataset, lr: f64) -> Vec<f64> {
    let (i_dim, h_dim, r_dim, c_dim) = (3, 4, 2, 3);
    let w1 = 0;
    let b1 = w1 + h_dim * i_dim;
    let w2 = b1 + h_dim;
    let b2 = w2 + r_dim * h_dim;
    let w3 = b2 + r_dim;
    let b3 = w3 + c_dim * r_dim;
    assert_eq!(b3 + c_dim, p.len());
    let mut g = vec![0.0; p.len()];
    let n = data.len() as f64;
    for s in 0..data.len() {
        let x = data.features(s);
        let y = data.label(s);
        let mut pre1 = [0.0; 4];
        let mut h = [0.0; 4];
        for j in 0..h_dim {
            pre1[j] = p[b1 + j];
            for i in 0..i_dim {
                pre1[j] += p[w1 + j * i_dim + i] * x[i];
            }
            h[j] = if pre1[j] > 0.0 { pre1[j] } else { 0.0 };
        }
        let mut z = [0.0; 2];
        for r in 0..r_dim {
            z[r] = p[b2 + r];
            for j in 0..h_dim {
                z[r] += p[w2 + r * h_dim + j] * h[j];
            }
        }
        let mut logit = [0.0; 3];
        for c in 0..c_dim {
            logit[c] = p[b3 + c];
            for r in 0..r_dim {
                logit[c] += p[w3 + c * r_dim + r] * z[r];
            }
        }
        let m = logit.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = logit.iter().map(|l| (l - m).exp()).sum();
        let mut dl = [0.0; 3];
        for c in 0..c_dim {
            dl[c] = ((logit[c] - m).exp() / denom - if c == y { 1.0 } else { 0.0 }) / n;
        }
        let mut dz = [0.0; 2];
        for c in 0..c_dim {
            g[b3 + c] += dl[c];
            for r in 0..r_dim {
                g[w3 + c * r_dim + r] += dl[c] * z[r];
                dz[r] += dl[c] * p[w3 + c * r_dim + r];
            }
        }
        let mut dh = [0.0; 4];
        for r in 0..r_dim {
            g[b2 + r] += dz[r];
            for j in 0..h_dim {
                g[w2 + r * h_dim + j] += dz[r] * h[j];
                dh[j] += dz[r] * p[w2 + r * h_dim + j];
            }
        }
        for j in 0..h_dim {
            let d = if pre1[j] > 0.0 { dh[j] } else { 0.0 };
            g[b1 + j] += d;
            for i in 0..i_dim {
                g[w1 + j * i_dim + i] += d * x[i];
            }
        }
    }
    p.iter().zip(&g).map(|(v, d)| v - lr * d).collect()
}

#[test]
fn single_full_batch_step_matches_hand_rolled_sgd() {
    for seed in 0..5 {
        let data = dataset(seed);
        let params = ModelParams::init(config(), &mut SeededRng::new(seed + 50));
        let cfg = TrainConfig { lambda: 0.0, learning_rate: 0.1, batch_size: 64, local_epochs: 1, ..TrainConfig::default() };
        let trained = local_train(&params, &data, &cfg, &mut SeededRng::new(seed)).unwrap();
        let oracle = hand_rolled_ce_step(params.values(), &data, 0.1);
        for (a, b) in trained.values().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn small_step_decreases_cross_entropy() {
    for seed in 0..5 {
        let data = dataset(seed);
        let params = ModelParams::init(config(), &mut SeededRng::new(seed + 7));
        let cfg = TrainConfig { lambda: 0.0, learning_rate: 1e-4, batch_size: 64, local_epochs: 1, ..TrainConfig::default() };
        let trained = local_train(&params, &data, &cfg, &mut SeededRng::new(seed)).unwrap();
        let xs = data.all_features().to_vec();
        let before = batch_loss(&params, &xs, data.labels(), cfg.loss()).unwrap().cross_entropy;
        let after = batch_loss(&trained, &xs, data.labels(), cfg.loss()).unwrap().cross_entropy;
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn zero_learning_rate_leaves_params() {
    let data = dataset(1);
    let params = ModelParams::init(config(), &mut SeededRng::new(2));
    let cfg = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
    let trained = local_train(&params, &data, &cfg, &mut SeededRng::new(3)).unwrap();
    assert_eq!(trained.values(), params.values());
}

#[test]
fn training_is_bitwise_deterministic() {
    let data = dataset(4);
    let params = ModelParams::init(config(), &mut SeededRng::new(5));
    let cfg = TrainConfig { batch_size: 3, local_epochs: 3, ..TrainConfig::default() };
    let a = local_train(&params, &data, &cfg, &mut SeededRng::new(6)).unwrap();
    let b = local_train(&params, &data, &cfg, &mut SeededRng::new(6)).unwrap();
    let bits = |p: &ModelParams| p.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&params));
}
