use mutraj_model::{gradient_check, Example, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn desk_model(vocab: usize, init_std: f64, seed: u64) -> Model {
    Model::new(ModelConfig { init_std, ..ModelConfig::desk(vocab) }, seed).unwrap()
}

fn random_ids(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<u32> {
    (0..n).map(|_| rng.random_range(0..vocab as u32)).collect()
}

fn fd_batch(vocab: usize, seed: u64) -> Vec<(Vec<u32>, Vec<bool>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..3)
        .map(|i| {
            let ids = random_ids(&mut rng, 10 + 3 * i, vocab);
            let mask = (0..ids.len()).map(|t| t >= 5).collect();
            (ids, mask)
        })
        .collect()
}

#[test]
fn finite_difference_gradients() {
    let vocab = 120;
    let mut model = desk_model(vocab, 0.2, 3);
    let batch = fd_batch(vocab, 4);
    let examples: Vec<Example> = batch.iter().map(|(a, b)| (a.as_slice(), b.as_slice())).collect();
    let check = gradient_check(&mut model, &examples, 12, 1e-5, 5).unwrap();
    assert!(check.coords > 300);
    assert!(check.worst_relative < 1e-4, "{check:?}");
}

#[test]
fn causal_mask_is_exact() {
    let vocab = 90;
    let model = desk_model(vocab, 0.1, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ids = random_ids(&mut rng, 24, vocab);
    let base = model.forward(&ids).unwrap();
    for cut in [1, 9, 23] {
        let mut changed = ids.clone();
        for t in cut..ids.len() {
            changed[t] = (changed[t] + 1 + rng.random_range(0..vocab as u32 - 1)) % vocab as u32;
        }
        let out = model.forward(&changed).unwrap();
        for t in 0..cut {
            assert_eq!(base.row(t), out.row(t), "row {t} moved when tokens from {cut} changed");
        }
        assert_ne!(base.row(cut), out.row(cut));
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let vocab = 200;
    let model = desk_model(vocab, 0.5, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let ids = random_ids(&mut rng, 60, vocab);
    let probs = model.forward(&ids).unwrap();
    for row in probs.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}

#[test]
fn rope_scores_depend_only_on_relative_position() {
    let vocab = 80;
    let model = desk_model(vocab, 0.3, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ids = random_ids(&mut rng, 16, vocab);
    let base = model.first_layer_scores(&ids, 0).unwrap();
    for offset in [1, 17, 200] {
        let shifted = model.first_layer_scores(&ids, offset).unwrap();
        for (a, b) in base.iter().zip(&shifted) {
            let diff = (a - b).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
            assert!(diff < 1e-6, "offset {offset}: {diff:e}");
        }
    }
    // and positions do matter: swapping two tokens changes the scores
    let mut swapped = ids.clone();
    swapped.swap(2, 9);
    let other = model.first_layer_scores(&swapped, 0).unwrap();
    assert!((other[0][[9, 2]] - base[0][[9, 2]]).abs() > 1e-9);
}

#[test]
fn rejects_bad_input() {
    let model = desk_model(50, 0.02, 1);
    assert!(model.forward(&[]).is_err());
    assert!(model.forward(&[50]).is_err());
    assert!(model.forward(&vec![1; 257]).is_err());
    assert!(model.loss(&[(&[1, 2], &[false, false])]).is_err());
    assert!(Model::from_params(ModelConfig::desk(50), vec![0.0; 3]).is_err());
}
