mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use lada::acquisition::{bald_score, entropy_score, select_top_pairs, var_ratio_score, PairCandidate};
use lada::autodiff::Tensor;
use lada::beta::{beta_cdf, beta_inv_cdf};
use lada::classifier::{MlpClassifier, SoftLabel};
use lada::config::StrategyName;
use lada::data::{gen_two_moons, split};
use lada::engine::{pair_pool, Engine};
use lada::rng::{stream, Purpose};
use lada::stn::{affine_grid_sample, AffineParams, ImageShape};

fn tau() -> impl Strategy<Value = f64> {
    (-6.9f64..5.0).prop_map(f64::exp)
}

fn logits(c: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, c)
}

fn probs(c: usize) -> impl Strategy<Value = Vec<f64>> {
    logits(c).prop_map(|z| Tensor::from_rows(&[z]).unwrap().softmax_rows().unwrap().data().to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn beta_cdf_is_monotone_and_symmetric(t in tau(), a in 0.001f64..0.999, b in 0.001f64..0.999) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(beta_cdf(lo, t).unwrap() <= beta_cdf(hi, t).unwrap() + 1e-15);
        let s = beta_cdf(a, t).unwrap() + beta_cdf(1.0 - a, t).unwrap();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn beta_inverse_round_trips(t in tau(), u in 1e-6f64..(1.0 - 1e-6)) {
        let x = beta_inv_cdf(u, t).unwrap();
        prop_assert!((1e-9..=1.0 - 1e-9).contains(&x));
        if x > 1e-9 && x < 1.0 - 1e-9 {
            prop_assert!((beta_cdf(x, t).unwrap() - u).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_sums_to_one(z in logits(7)) {
        let p = Tensor::from_rows(&[z]).unwrap().softmax_rows().unwrap();
        prop_assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.data().iter().all(|&q| q >= 0.0));
    }

    #[test]
    fn base_scores_stay_in_range(p in probs(5), draws in prop::collection::vec(probs(5), 2..6)) {
        let c = 5.0f64;
        let h = entropy_score(&p).unwrap();
        prop_assert!(h >= -1e-12 && h <= c.ln() + 1e-12);
        let v = var_ratio_score(&p).unwrap();
        prop_assert!(v >= 0.0 && v <= 1.0 - 1.0 / c + 1e-12);
        prop_assert!(bald_score(&draws).unwrap() >= -1e-12);
    }

    #[test]
    fn pair_pool_is_disjoint(n in 0usize..80, size in 0usize..100, seed in any::<u64>(), round in 0usize..30) {
        let ids: Vec<usize> = (0..n).map(|i| 3 * i + 1).collect();
        let pairs = pair_pool(&ids, size, seed, round);
        prop_assert_eq!(pairs.len(), size.min(n) / 2);
        let mut seen = BTreeSet::new();
        for (a, b) in &pairs {
            prop_assert!(seen.insert(*a) && seen.insert(*b));
            prop_assert!(ids.contains(a) && ids.contains(b));
        }
    }

    #[test]
    fn selection_ignores_constant_shift(
        parts in prop::collection::vec((0.0f64..3.0, 0.0f64..3.0, 0.0f64..3.0), 1..20),
        shift in -5.0f64..5.0,
        half in 0usize..10,
    ) {
        let m = half.min(parts.len());
        let cands = |d: f64| -> Vec<PairCandidate> {
            parts.iter().enumerate()
                .map(|(k, &(a, b, c))| PairCandidate::new(2 * k, 2 * k + 1, 1, 1.0, [a + d, b, c]))
                .collect()
        };
        let ids = |v: Vec<PairCandidate>| v.into_iter().map(|c| c.id_i).collect::<Vec<_>>();
        let base = ids(select_top_pairs(&cands(0.0), 2 * m).unwrap());
        let moved = ids(select_top_pairs(&cands(shift), 2 * m).unwrap());
        prop_assert_eq!(base, moved);
    }

    #[test]
    fn soft_label_target_sums_to_one(yi in 0usize..6, yj in 0usize..6, lam in 1e-9f64..(1.0 - 1e-9)) {
        let t = SoftLabel::mixed(yi, yj, lam).unwrap().target(6);
        prop_assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let want = if yi == yj { 1.0 } else { lam };
        prop_assert!((t[yi] - want).abs() < 1e-12);
    }

    #[test]
    fn identity_warp_is_exact(h in 2usize..7, w in 2usize..7, seed in any::<u64>()) {
        let mut rng = stream(seed, 0, Purpose::Data, 0);
        let img: Vec<f64> = (0..h * w).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let out = affine_grid_sample(&img, ImageShape::new(h, w).unwrap(), &AffineParams::identity()).unwrap();
        prop_assert_eq!(out, img);
    }

    #[test]
    fn layer_split_composes(seed in any::<u64>(), x in prop::collection::vec(-2.0f64..2.0, 3)) {
        let mut rng = stream(seed, 0, Purpose::Init, 0);
        let clf = MlpClassifier::new(&[3, 6, 5, 4], 0.0, &mut rng).unwrap();
        let x = Tensor::from_rows(&[x]).unwrap();
        let full = clf.forward(&x).unwrap();
        for k in 0..clf.num_layers() {
            let h = clf.forward_to_layer(&x, k).unwrap();
            let p = clf.forward_from_layer(&h, k).unwrap();
            for (a, b) in p.data().iter().zip(full.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pool_stays_partitioned(half in 20usize..60, seed in any::<u64>(), reveals in 0usize..20) {
        let n = 2 * half;
        let ds = gen_two_moons(n, 0.2, seed).unwrap();
        let mut pool = split(ds, 4, 10, true, seed).unwrap();
        let picks: Vec<usize> = pool.unlabeled().iter().copied().take(reveals).collect();
        for i in picks {
            let y = pool.hidden_label(i).unwrap();
            pool.reveal(i, y).unwrap();
            prop_assert!(pool.reveal(i, y).is_err());
        }
        pool.check_invariants().unwrap();
        prop_assert_eq!(pool.labeled().len() + pool.unlabeled().len() + pool.test().len(), n);
        prop_assert_eq!(pool.labeled().len(), 4 + reveals.min(n - 14));
        for t in pool.test().to_vec() {
            prop_assert!(pool.reveal(t, 0).is_err());
        }
    }
}

#[test]
fn rounds_never_touch_test_ids() {
    for name in [StrategyName::LadaEntmix, StrategyName::Random, StrategyName::MaxEntropy] {
        let cfg = common::with(&common::moons_config(), name, 4);
        let ds = gen_two_moons(cfg.data.n, cfg.data.noise, 0).unwrap();
        let mut eng = Engine::new(&cfg, ds, 3).unwrap();
        let test: BTreeSet<usize> = eng.pool().test().iter().copied().collect();
        while let Some(prop) = eng.propose().unwrap() {
            assert!(prop.ids().iter().all(|i| !test.contains(i)));
            assert!(prop.pairs.iter().all(|p| !test.contains(&p.id_i) && !test.contains(&p.id_j)));
            let labels: std::collections::BTreeMap<usize, usize> = prop.ids().iter().map(|&i| (i, eng.pool().hidden_label(i).unwrap())).collect();
            eng.complete(&prop, &labels).unwrap();
            eng.pool().check_invariants().unwrap();
            assert_eq!(eng.pool().test().iter().copied().collect::<BTreeSet<_>>(), test);
        }
    }
}
