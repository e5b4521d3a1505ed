mod common;

use latent_scalpel::intervene::*;
use latent_scalpel::lm::*;
use ndarray::Array1;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn binomial_matches_exact_rational() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for _ in 0..500 {
        let n = rng.gen_range(1..120);
        let k = rng.gen_range(0..=n);
        let b = rng.gen_range(2..64u64);
        let a = rng.gen_range(1..b);
        let p0 = a as f64 / b as f64;
        let got = binomial_test_greater(k, n, p0);
        let want = common::binomial_tail_exact(k, n, a, b);
        assert!((got - want).abs() <= 1e-12, "k {k} n {n} p {a}/{b}: {got} vs {want}");
    }
}

#[test]
fn search_rounds_to_nearest_integer() {
    let out = coefficient_search(|a| Ok(-(a - 29.3f64).powi(2)), &SearchConfig::default()).unwrap();
    assert_eq!(out.alpha, 29.0);
    assert!(!out.flat);
}

#[test]
fn search_finds_unimodal_maximizers() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..200 {
        let peak = rng.gen_range(0.0..300.0);
        let width = rng.gen_range(5.0..80.0);
        let power = rng.gen_range(1.0..3.0);
        let out = coefficient_search(|a| Ok(-((a - peak).abs() / width).powf(power)), &SearchConfig::default()).unwrap();
        assert!((out.alpha - peak).abs() <= 1.0, "peak {peak}: found {}", out.alpha);
        assert!(out.objective >= out.best_grid.objective);
    }
}

#[test]
fn brackets_shrink_by_golden_ratio() {
    let out = coefficient_search(|a| Ok(-(a - 141.7f64).powi(2)), &SearchConfig::default()).unwrap();
    assert!(out.brackets.len() > 3);
    for w in out.brackets.windows(2) {
        let ratio = (w[1].1 - w[1].0) / (w[0].1 - w[0].0);
        assert!((ratio - 0.618).abs() <= 1e-3, "ratio {ratio}");
    }
}

#[test]
fn search_caches_repeated_points() {
    let mut calls = std::collections::HashMap::new();
    let _ = coefficient_search(
        |a| {
            *calls.entry(a.to_bits()).or_insert(0) += 1;
            Ok(-(a - 77.0f64).powi(2))
        },
        &SearchConfig::default(),
    )
    .unwrap();
    assert!(calls.values().all(|&c| c == 1));
}

fn tiny_checkpoint(seed: u64) -> Checkpoint {
    Checkpoint::init(ModelConfig {
        n_layers: 3,
        d_model: 8,
        n_heads: 2,
        vocab_size: 20,
        max_seq_len: 16,
        rng_seed: seed,
    })
    .unwrap()
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    let v: Array1<f64> = Array1::from_shape_fn(d, |_| rng.gen_range(-1.0..1.0));
    let n = v.dot(&v).sqrt();
    v / n
}

fn random_tokens(rng: &mut ChaCha8Rng, len: usize) -> Vec<u32> {
    (0..len).map(|_| rng.gen_range(0..20)).collect()
}

/// A steer hook followed by a capture at the same layer sees exactly `alpha * d` added.
#[test]
fn steering_adds_scaled_direction() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for case in 0..120 {
        let ckpt = tiny_checkpoint(case);
        let layer = rng.gen_range(0..3);
        let d = random_unit(&mut rng, 8);
        let alpha = rng.gen_range(-50.0..50.0);
        let len = rng.gen_range(1..12);
        let tokens = random_tokens(&mut rng, len);
        let positions = if rng.gen_bool(0.5) { HookPositions::All } else { HookPositions::FinalPromptToken };
        let steer = make_steer_hook(layer, &d, alpha, positions).unwrap();
        let plain = forward(&ckpt, &tokens, &[HookSpec::capture(layer)]).unwrap();
        let steered = forward(&ckpt, &tokens, &[steer, HookSpec::capture(layer)]).unwrap();
        let last = tokens.len() - 1;
        for q in 0..=last {
            let (a, b) = (&plain.captures[q].vector, &steered.captures[q].vector);
            let touched = positions == HookPositions::All || q == last;
            for (k, (x, y)) in a.iter().zip(b.iter()).enumerate() {
                let want = if touched { alpha * d[k] } else { 0.0 };
                assert!((y - x - want).abs() <= 1e-9, "case {case}: position {q} coord {k}");
            }
        }
    }
}

#[test]
fn zero_alpha_is_a_no_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let ckpt = tiny_checkpoint(1);
    let d = random_unit(&mut rng, 8);
    let tokens = random_tokens(&mut rng, 10);
    let base = forward(&ckpt, &tokens, &[]).unwrap();
    let spec = InterventionSpec::steer(1, 0, &d, 0.0);
    let (new_ckpt, hooks) = spec.apply(&ckpt).unwrap();
    assert!(new_ckpt.is_none());
    let out = forward(&ckpt, &tokens, &hooks).unwrap();
    assert_eq!(base.logits, out.logits);
}

#[test]
fn orthogonalization_matches_projection_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for case in 0..100 {
        let ckpt = tiny_checkpoint(100 + case);
        let d = random_unit(&mut rng, 8);
        let out = orthogonalize_checkpoint(&ckpt, &d, "test").unwrap();
        for ((name, before), (_, after)) in ckpt.weights.residual_writers().iter().zip(out.weights.residual_writers()) {
            for (rb, ra) in before.chunks_exact(8).zip(after.chunks_exact(8)) {
                let proj: f64 = (0..8).map(|k| rb[k] * d[k]).sum();
                for k in 0..8 {
                    assert!((ra[k] - (rb[k] - proj * d[k])).abs() <= 1e-12, "{name}");
                }
            }
        }
        assert!(max_write_component(&out, &d) <= 1e-6);
        let twice = orthogonalize_checkpoint(&out, &d, "test").unwrap();
        for (a, b) in out.weights.tensors().iter().zip(twice.weights.tensors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-6);
            }
        }
    }
}

/// Every residual write is orthogonal to `d`, so the residual stream never carries it.
#[test]
fn orthogonalized_residuals_have_no_component() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let ckpt = tiny_checkpoint(7);
    let d = random_unit(&mut rng, 8);
    let out = orthogonalize_checkpoint(&ckpt, &d, "test").unwrap();
    let tokens = random_tokens(&mut rng, 12);
    let hooks: Vec<HookSpec> = (0..3).map(HookSpec::capture).collect();
    let res = forward(&out, &tokens, &hooks).unwrap();
    for c in &res.captures {
        assert!(c.vector.dot(&d).abs() <= 1e-9);
    }
}

#[test]
fn orthogonalization_rejects_non_unit() {
    let ckpt = tiny_checkpoint(0);
    assert!(orthogonalize_checkpoint(&ckpt, &Array1::from_elem(8, 1.0), "x").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn similarity_is_symmetric_and_bounded(a in proptest::collection::vec(0u32..10, 0..20), b in proptest::collection::vec(0u32..10, 0..20)) {
        let s = token_similarity(&a, &b);
        prop_assert_eq!(s, token_similarity(&b, &a));
        prop_assert!((0.0..=100.0).contains(&s));
        prop_assert_eq!(token_similarity(&a, &a), 100.0);
    }

    #[test]
    fn binomial_tail_is_monotone(n in 1usize..80, p in 0.01f64..0.99) {
        let mut prev = 1.0;
        for k in 0..=n {
            let v = binomial_test_greater(k, n, p);
            prop_assert!(v <= prev + 1e-15);
            prev = v;
        }
    }
}
