use flce::completion::{complete_matrix, completion_error, CompletionConfig, MaskedMatrix};
use flce::numerics::SeededRng;

const ROWS: usize = 40;
const COLS: usize = 20;

/// Rank-2 matrix with factors drawn from uniform(0, 1/√2), so entries lie in
/// [0, 1] like contribution shares, and a mask hiding exactly 30% of the
/// cells.
fn rank_two_instance(seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = SeededRng::new(seed);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let a: Vec<[f64; 2]> = (0..ROWS).map(|_| [s * rng.uniform(), s * rng.uniform()]).collect();
    let b: Vec<[f64; 2]> = (0..COLS).map(|_| [s * rng.uniform(), s * rng.uniform()]).collect();
    let truth: Vec<f64> = (0..ROWS * COLS)
        .map(|i| {
            let (t, k) = (i / COLS, i % COLS);
            a[t][0] * b[k][0] + a[t][1] * b[k][1]
        })
        .collect();
    let hidden = ROWS * COLS * 3 / 10;
    let order = rng.permutation(ROWS * COLS);
    let mut observed = vec![true; ROWS * COLS];
    for &i in &order[..hidden] {
        observed[i] = false;
    }
    (truth, observed)
}

#[test]
fn recovers_rank_two_matrices_under_defaults() {
    let cfg = CompletionConfig::default();
    for seed in 0..5 {
        let (truth, observed) = rank_two_instance(seed);
        let input: Vec<f64> = truth.iter().zip(&observed).map(|(v, o)| if *o { *v } else { f64::NAN }).collect();
        let m = MaskedMatrix::new(ROWS, COLS, input, observed.clone());
        let out = complete_matrix(&m, &cfg, &mut SeededRng::new(100 + seed), 0).unwrap();
        let report = completion_error(&truth, &out.values, &observed).unwrap();
        let rmse = report.rmse_missing.unwrap();
        assert!(rmse < 0.05, "seed {seed}: rmse_missing {rmse}");
        assert_eq!(report.rmse_observed, 0.0);
        for i in 0..truth.len() {
            if observed[i] {
                assert_eq!(out.values[i].to_bits(), truth[i].to_bits());
            }
        }
        for (i, w) in out.objective.windows(2).enumerate().skip(10) {
            assert!(w[1] <= w[0], "seed {seed}: objective rose at iteration {}", i + 1);
        }
    }
}

#[test]
fn same_seed_same_completion() {
    let (truth, observed) = rank_two_instance(9);
    let m = MaskedMatrix::new(ROWS, COLS, truth, observed);
    let cfg = CompletionConfig::default();
    let a = complete_matrix(&m, &cfg, &mut SeededRng::new(1), 0).unwrap();
    let b = complete_matrix(&m, &cfg, &mut SeededRng::new(1), 0).unwrap();
    assert_eq!(a.values, b.values);
}

