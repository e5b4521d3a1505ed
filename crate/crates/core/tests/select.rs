mod common;

use latent_scalpel::intervene::{select_control_feature, CONTROL_MIN_PROMPT_RATE};
use latent_scalpel::lm::Label;
use latent_scalpel::select::*;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn welch_t_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut compared = 0;
    for _ in 0..150 {
        let n = rng.gen_range(4..60);
        let density = rng.gen_range(0.1..0.9);
        let ds = common::random_dataset(&mut rng, n, 6, density);
        for j in 0..ds.n_latents() {
            for counts in [TStatCounts::Total, TStatCounts::Nonzero] {
                let got = welch_t(&ds, j, counts);
                match (got, common::t_oracle(&ds, j, counts)) {
                    (Some((t, t_inc)), Some(r)) => {
                        assert!((t - r).abs() <= 1e-6 * r.abs().max(1.0), "{t} vs {r}");
                        assert_eq!(t_inc, -t);
                        compared += 1;
                    }
                    (None, None) => {}
                    (a, b) => panic!("validity differs: {a:?} vs {b:?}"),
                }
            }
        }
    }
    assert!(compared >= 100, "only {compared} defined cases");
}

#[test]
fn frequencies_and_separation_match_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..150 {
        let n = rng.gen_range(2..50);
        let density = rng.gen_range(0.0..1.0);
        let ds = common::random_dataset(&mut rng, n, 4, density);
        for j in 0..ds.n_latents() {
            let mut fired = [0usize; 2];
            for i in 0..n {
                if ds.activations[[i, j]] > 0.0 {
                    fired[(ds.labels[i] == Label::Incorrect) as usize] += 1;
                }
            }
            let fc = fired[0] as f64 / ds.n_correct as f64;
            let fi = fired[1] as f64 / ds.n_incorrect as f64;
            let sep = frequencies_and_separation(&ds, j).unwrap();
            assert!((sep.f_correct - fc).abs() <= 1e-12);
            assert!((sep.f_incorrect - fi).abs() <= 1e-12);
            assert!((sep.s_correct - (fc - fi)).abs() <= 1e-9);
            assert_eq!(sep.s_incorrect, -sep.s_correct);
        }
    }
}

#[test]
fn background_filter_matches_rate_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let rows = rng.gen_range(1..200);
        let a = Array2::from_shape_fn((rows, 5), |(_, j)| if rng.gen_bool(0.01 * j as f64) { 1.0 } else { 0.0 });
        let thr = rng.gen_range(0.0..0.05);
        let mask = background_filter_activations(a.view(), thr).unwrap();
        for j in 0..5 {
            let rate = a.column(j).iter().filter(|&&v| v > 0.0).count() as f64 / rows as f64;
            assert_eq!(mask.rates[j], rate);
            assert_eq!(mask.keep[j], rate <= thr);
        }
    }
}

fn random_stats(rng: &mut ChaCha8Rng, n: usize) -> Vec<FeatureStats> {
    (0..n)
        .map(|k| {
            // Coarse values force ties.
            let s = rng.gen_range(-3..=3) as f64 / 4.0;
            let t = rng.gen_bool(0.8).then(|| rng.gen_range(-4..=4) as f64);
            FeatureStats {
                layer: rng.gen_range(0..3),
                index: k,
                t_correct: t,
                t_incorrect: t.map(|v| -v),
                f_correct: 0.5,
                f_incorrect: 0.5,
                s_correct: s,
                s_incorrect: -s,
                background_rate: 0.0,
                kept: rng.gen_bool(0.7),
                prompt_rate: rng.gen_range(0..5) as f64 / 10.0,
            }
        })
        .collect()
}

fn brute_argmax(stats: &[FeatureStats], f: impl Fn(&FeatureStats) -> Option<f64>) -> Option<(usize, usize)> {
    let kept: Vec<&FeatureStats> = stats.iter().filter(|s| s.kept && f(s).is_some()).collect();
    let best = kept.iter().map(|s| f(s).unwrap()).fold(f64::NEG_INFINITY, f64::max);
    kept.iter()
        .filter(|s| f(s).unwrap() == best)
        .map(|s| (s.layer, s.index))
        .min()
}

#[test]
fn selection_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..300 {
        let n = rng.gen_range(1..30);
        let stats = random_stats(&mut rng, n);
        let want = [
            brute_argmax(&stats, |s| s.t_correct),
            brute_argmax(&stats, |s| s.t_incorrect),
            brute_argmax(&stats, |s| Some(s.s_correct)),
            brute_argmax(&stats, |s| Some(s.s_incorrect)),
        ];
        match select_features(&stats) {
            Ok(sel) => {
                for (row, w) in sel.rows().iter().zip(want) {
                    assert_eq!(Some((row.layer, row.index)), w);
                }
            }
            Err(_) => assert!(want.iter().any(Option::is_none)),
        }
    }
}

#[test]
fn control_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..300 {
        let n = rng.gen_range(1..30);
        let stats = random_stats(&mut rng, n);
        let eligible: Vec<&FeatureStats> = stats
            .iter()
            .filter(|s| s.kept && s.prompt_rate >= CONTROL_MIN_PROMPT_RATE)
            .collect();
        match select_control_feature(&stats) {
            Ok((l, j)) => {
                let chosen = stats.iter().find(|s| s.layer == l && s.index == j).unwrap();
                for e in &eligible {
                    assert!(chosen.s_correct.abs() <= e.s_correct.abs());
                    if e.s_correct.abs() == chosen.s_correct.abs() {
                        let t = |s: &FeatureStats| s.t_correct.map_or(f64::INFINITY, f64::abs);
                        assert!(t(chosen) <= t(e));
                        if t(chosen) == t(e) {
                            assert!((chosen.layer, chosen.index) <= (e.layer, e.index));
                        }
                    }
                }
            }
            Err(_) => assert!(eligible.is_empty()),
        }
    }
}

fn dataset_strategy() -> impl Strategy<Value = LayerActivationDataset> {
    (4usize..40, 1usize..5, any::<u64>()).prop_map(|(n, m, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let density = rng.gen_range(0.2..1.0);
        common::random_dataset(&mut rng, n, m, density)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn t_and_s_are_antisymmetric(ds in dataset_strategy()) {
        for j in 0..ds.n_latents() {
            if let Some((tc, ti)) = welch_t(&ds, j, TStatCounts::Total) {
                prop_assert_eq!(ti, -tc);
            }
            let s = frequencies_and_separation(&ds, j).unwrap();
            prop_assert_eq!(s.s_incorrect, -s.s_correct);
        }
    }

    #[test]
    fn swapping_labels_swaps_roles(ds in dataset_strategy()) {
        let sw = ds.with_swapped_labels();
        for j in 0..ds.n_latents() {
            let (a, b) = (welch_t(&ds, j, TStatCounts::Total), welch_t(&sw, j, TStatCounts::Total));
            match (a, b) {
                (Some((tc, ti)), Some((sc, si))) => {
                    prop_assert_eq!(sc, ti);
                    prop_assert_eq!(si, tc);
                }
                (None, None) => {}
                _ => prop_assert!(false, "validity changed under label swap"),
            }
            let (x, y) = (frequencies_and_separation(&ds, j).unwrap(), frequencies_and_separation(&sw, j).unwrap());
            prop_assert_eq!(x.f_correct, y.f_incorrect);
            prop_assert_eq!(x.s_correct, y.s_incorrect);
        }
    }

    #[test]
    fn t_is_scale_invariant(ds in dataset_strategy(), c in 0.01f64..100.0) {
        let scaled = LayerActivationDataset::new(
            ds.layer, ds.problem_ids.clone(), ds.activations.mapv(|v| v * c), ds.labels.clone()
        ).unwrap();
        for j in 0..ds.n_latents() {
            match (welch_t(&ds, j, TStatCounts::Total), welch_t(&scaled, j, TStatCounts::Total)) {
                (Some((a, _)), Some((b, _))) => prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0)),
                (None, None) => {}
                _ => prop_assert!(false, "validity changed under scaling"),
            }
            prop_assert_eq!(
                frequencies_and_separation(&ds, j).unwrap(),
                frequencies_and_separation(&scaled, j).unwrap()
            );
        }
    }

    /// A latent firing on exactly `kc` correct and `ki` incorrect samples has s = kc/nc - ki/ni.
    #[test]
    fn planted_separation(nc in 1usize..30, ni in 1usize..30, fc in 0.0f64..=1.0, fi in 0.0f64..=1.0) {
        let (kc, ki) = ((fc * nc as f64) as usize, (fi * ni as f64) as usize);
        let n = nc + ni;
        let mut acts = Array2::zeros((n, 1));
        let mut labels = Vec::new();
        for i in 0..n {
            let correct = i < nc;
            labels.push(if correct { Label::Correct } else { Label::Incorrect });
            let fires = if correct { i < kc } else { i - nc < ki };
            if fires {
                acts[[i, 0]] = 1.5;
            }
        }
        let ds = LayerActivationDataset::new(0, (0..n as u64).collect(), acts, labels).unwrap();
        let s = frequencies_and_separation(&ds, 0).unwrap();
        prop_assert!((s.s_correct - (kc as f64 / nc as f64 - ki as f64 / ni as f64)).abs() <= 1e-9);
    }
}
