mod common;

use latent_scalpel::sae::*;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn encode_decode_loss_match_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..200 {
        let d = rng.gen_range(1..8);
        let s = rng.gen_range(1..20);
        let sae = common::random_sae(&mut rng, d, s);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let lambda = rng.gen_range(0.0..1.0);
        let (a_ref, r_ref, loss_ref) = common::sae_oracle(&x, &sae, lambda);
        let xv = Array1::from(x.clone());
        let a = encode(xv.view(), &sae);
        let r = decode(a.view(), &sae);
        for (u, v) in a.iter().zip(&a_ref) {
            assert!((u - v).abs() <= 1e-9, "case {case}: activation {u} vs {v}");
        }
        for (u, v) in r.iter().zip(&r_ref) {
            assert!((u - v).abs() <= 1e-9, "case {case}: reconstruction {u} vs {v}");
        }
        let loss = sae_loss(xv.view(), &sae, lambda).total;
        assert!((loss - loss_ref).abs() <= 1e-9 * loss_ref.abs().max(1.0), "case {case}");
    }
}

#[test]
fn batch_encoding_matches_rowwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sae = common::random_sae(&mut rng, 5, 11);
    let x = Array2::from_shape_fn((30, 5), |_| rng.gen_range(-2.0..2.0));
    let (_, a) = encode_batch(x.view(), &sae);
    let r = decode_batch(a.view(), &sae);
    for (i, row) in x.rows().into_iter().enumerate() {
        for (u, v) in a.row(i).iter().zip(&encode(row, &sae)) {
            assert!((u - v).abs() <= 1e-12);
        }
        let ri = decode(a.row(i), &sae);
        for (u, v) in r.row(i).iter().zip(&ri) {
            assert!((u - v).abs() <= 1e-12);
        }
    }
}



/// The threshold gradient follows the rectangle-kernel straight-through rule.
#[test]
fn threshold_gradient_matches_kernel_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (d, s, lambda, eps) = (4, 9, 0.2, 0.8);
    let sae = common::random_sae(&mut rng, d, s);
    let x = Array2::from_shape_fn((25, d), |_| rng.gen_range(-1.0..1.0));
    let (_, g) = loss_and_grads(x.view(), &sae, lambda, eps);
    let n = x.nrows() as f64;
    for j in 0..s {
        let mut expect = 0.0;
        for row in x.rows() {
            let (_, r, _) = common::sae_oracle(row.as_slice().unwrap(), &sae, 0.0);
            let z: f64 = sae.b_enc[j] + (0..d).map(|i| row[i] * sae.w_enc[[i, j]]).sum::<f64>();
            let da: f64 = (0..d).map(|k| 2.0 / n * (r[k] - row[k]) * sae.w_dec[[j, k]]).sum();
            if (z - sae.theta[j]).abs() < eps / 2.0 {
                expect += -(da * z + lambda / n) / eps;
            }
        }
        assert!((g.theta[j] - expect).abs() <= 1e-9, "latent {j}: {} vs {expect}", g.theta[j]);
    }
}

#[test]
fn straight_through_gradients_match_central_differences() {
    let (checked, total) = common::sae_gradient_check(3);
    assert!(checked >= 250, "only {checked} of {total} entries checked");
}

#[test]
fn training_keeps_invariants() {
    let dict = PlantedDictionary::random(8, 6, 0.2, Magnitude::Constant(1.0), 5);
    let (x, _) = generate_superposition_data(&dict, 500, 6).unwrap();
    let cfg = SaeTrainConfig {
        steps: 50,
        batch: 32,
        lambda: 0.05,
        ..Default::default()
    };
    let (sae, log) = train_sae_matrix(x.view(), 2, &cfg).unwrap();
    assert_eq!(sae.layer, 2);
    assert_eq!(sae.d_sae(), 6 * EXPANSION);
    assert!(sae.theta.iter().all(|&t| t >= 0.0));
    for row in sae.w_dec.rows() {
        assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-6);
    }
    assert_eq!(log.recon.len(), 50);
    let (again, _) = train_sae_matrix(x.view(), 2, &cfg).unwrap();
    assert_eq!(sae, again);
}




#[test]
fn planted_features_are_recovered_and_selected() {
    let (dict, sae) = common::planted_setup();
    let out = common::planted_selection(&dict, &sae);
    assert!(out.mean_abs_cosine >= 0.9, "mean |cos| {}", out.mean_abs_cosine);
    assert_eq!(out.selected, out.planted);
    assert!(out.margin > 0.5, "margin {}", out.margin);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Activations are either zero or strictly above the threshold.
    #[test]
    fn jumprelu_gate(z in proptest::collection::vec(-3.0f64..3.0, 1..20), t in 0.0f64..2.0) {
        let theta = Array1::from_elem(z.len(), t);
        let a = jumprelu(Array1::from(z.clone()).view(), theta.view());
        for (ai, zi) in a.iter().zip(&z) {
            prop_assert!(*ai == 0.0 || (*ai == *zi && *zi > t));
            prop_assert_eq!(*ai == 0.0, *zi <= t);
        }
    }
}
