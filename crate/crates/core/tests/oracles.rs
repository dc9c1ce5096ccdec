use rand::Rng as _;

use lada::acquisition::{mix_features, mix_score, pair_score, BaseScore};
use lada::autodiff::Tensor;
use lada::beta::{beta_cdf, beta_inv_cdf, beta_sample, beta_sample_grad};
use lada::classifier::{LabeledBatch, MlpClassifier};
use lada::data::{gen_two_moons, split};
use lada::engine::{build_virtual_set, evaluate, SelectedPair};
use lada::policy::{train_policy, MixPolicy, PolicyGenerator, PolicyTraining};
use lada::rng::{stream, Purpose};
use lada::stn::{affine_grid_sample, stn_acquisition_score, train_stn_policy, AffineParams, ImageShape, StnTraining};
use lada::verify::{toy_classifier, toy_objective, toy_pair};

fn samples(tau: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, 0, Purpose::Score, 500);
    (0..n).map(|_| beta_sample(tau, &mut rng).unwrap().lambda).collect()
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn cdf_matches_statrs() {
    let mut worst = 0.0f64;
    for &tau in &[1e-3, 0.01, 0.2, 0.5, 1.0, 2.0, 5.0, 50.0, 200.0] {
        for k in 1..100 {
            let x = k as f64 / 100.0;
            let want = statrs::function::beta::beta_reg(tau, tau, x);
            worst = worst.max((beta_cdf(x, tau).unwrap() - want).abs());
        }
        for &x in &[1e-9, 1e-6, 0.999_999] {
            let want = statrs::function::beta::beta_reg(tau, tau, x);
            worst = worst.max((beta_cdf(x, tau).unwrap() - want).abs());
        }
    }
    assert!(worst < 1e-10, "worst {worst:e}");
}

#[test]
fn inverse_cdf_round_trips() {
    let mut rng = stream(1, 0, Purpose::Score, 0);
    for _ in 0..2000 {
        let tau = (rng.random_range(-6.0f64..4.0)).exp().max(1e-3);
        let u: f64 = rng.random_range(1e-6..1.0 - 1e-6);
        let x = beta_inv_cdf(u, tau).unwrap();
        if x <= 1e-9 || x >= 1.0 - 1e-9 {
            // Clamped: all mass below the clamp maps to it.
            assert!(beta_cdf(1e-9, tau).unwrap() >= u.min(1.0 - u) - 1e-12);
            continue;
        }
        assert!((beta_cdf(x, tau).unwrap() - u).abs() < 1e-9, "u {u} τ {tau}");
        let lam: f64 = rng.random_range(0.01..0.99);
        let f = beta_cdf(lam, tau).unwrap();
        if !(1e-6..=1.0 - 1e-6).contains(&f) {
            continue;
        }
        let back = beta_inv_cdf(f, tau).unwrap();
        assert!((back - lam).abs() < 1e-8, "λ {lam} τ {tau}: {back}");
    }
}

#[test]
fn sample_moments() {
    let (m, _) = mean_var(&samples(1.0, 100_000, 0));
    assert!((m - 0.5).abs() < 0.005);
    for &tau in &[0.2, 1.0, 2.0, 5.0] {
        let (_, v) = mean_var(&samples(tau, 100_000, 1));
        let want = 1.0 / (4.0 * (2.0 * tau + 1.0));
        assert!((v / want - 1.0).abs() < 0.05, "τ {tau}: {v} vs {want}");
    }
}

#[test]
fn samples_are_symmetric() {
    for &tau in &[0.2, 2.0] {
        let mut a = samples(tau, 100_000, 2);
        let mut b: Vec<f64> = samples(tau, 100_000, 3).into_iter().map(|x| 1.0 - x).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 - j as f64).abs() / a.len() as f64);
        }
        assert!(d < 0.01, "τ {tau}: D = {d}");
    }
}

#[test]
fn implicit_gradient_at_documented_point() {
    let (u, tau) = (0.9, 2.0);
    let h = 1e-4 * tau;
    let fd = (beta_inv_cdf(u, tau + h).unwrap() - beta_inv_cdf(u, tau - h).unwrap()) / (2.0 * h);
    let g = beta_sample_grad(beta_inv_cdf(u, tau).unwrap(), tau).unwrap();
    assert!(!g.clamped);
    assert!(((g.value - fd) / fd).abs() < 1e-3);
    assert!(g.value < 0.0);
}

#[test]
fn fixed_policy_moments() {
    let mut p = MixPolicy::fixed(2.0).unwrap();
    let z = Tensor::zeros(&[3, 4]);
    assert_eq!(p.infer_taus(&z, &z, 1).unwrap(), vec![2.0; 3]);
    let (_, v) = mean_var(&samples(2.0, 100_000, 4));
    assert!((v - 0.05).abs() < 0.05 * 0.05);
    assert!(MixPolicy::fixed(1e-4).is_err());
}

#[test]
fn mix_features_examples() {
    assert_eq!(mix_features(&[2.0, 0.0], &[0.0, 2.0], 0.5).unwrap(), vec![1.0, 1.0]);
    assert_eq!(mix_features(&[0.3, -1.7], &[5.0, 9.0], 1.0).unwrap(), vec![0.3, -1.7]);
    assert_eq!(mix_features(&[0.3, -1.7], &[0.3, -1.7], 0.37).unwrap(), vec![0.3, -1.7]);
    assert!(mix_features(&[1.0], &[1.0, 2.0], 0.5).is_err());
}

#[test]
fn mc_dropout_mean_converges() {
    let mut rng = stream(3, 0, Purpose::Init, 0);
    let clf = MlpClassifier::new(&[5, 16, 3], 0.5, &mut rng).unwrap();
    let x = Tensor::from_rows(&[[0.3, -0.2, 0.8, 0.1, -0.5]]).unwrap();
    let few = clf.mc_dropout_predict(&x, 100, &mut rng).unwrap();
    let many = clf.mc_dropout_predict(&x, 10_000, &mut rng).unwrap();
    for (c, _) in few[0].data().iter().enumerate() {
        let f: Vec<f64> = few.iter().map(|t| t.data()[c]).collect();
        let m: Vec<f64> = many.iter().map(|t| t.data()[c]).collect();
        let (fm, fv) = mean_var(&f);
        let (mm, _) = mean_var(&m);
        assert!((fm - mm).abs() <= 3.0 * (fv / 100.0).sqrt() + 1e-12, "class {c}");
    }
    for t in &few {
        assert!((t.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn pair_score_matches_quadrature_reference() {
    let clf = toy_classifier();
    let tau = 0.7;
    let exact = toy_objective(tau);
    let mut rng = stream(0, 0, Purpose::Score, 9);
    let (hi, hj) = toy_pair();
    let cand = pair_score(&clf, (3, 4), hi.data(), hj.data(), 1, tau, 100_000, &mut rng, BaseScore::Entropy).unwrap();
    let total = cand.score_i + cand.score_j + cand.score_mix;
    assert!((cand.total - total).abs() < 1e-15);

    // Per-draw spread gives the standard error of the N = 10⁵ estimate.
    let mut r = stream(0, 0, Purpose::Score, 10);
    let draws: Vec<f64> = (0..20_000)
        .map(|_| mix_score(&clf, hi.data(), hj.data(), 1, tau, 1, &mut r, BaseScore::Entropy).unwrap())
        .collect();
    let (_, var) = mean_var(&draws);
    let se = (var / 100_000.0).sqrt();
    assert!((cand.score_mix - exact).abs() < 3.0 * se, "{} vs {exact} (se {se})", cand.score_mix);

    let mut r = stream(0, 0, Purpose::Score, 11);
    let n1k = mix_score(&clf, hi.data(), hj.data(), 1, tau, 1000, &mut r, BaseScore::Entropy).unwrap();
    assert!((n1k - cand.score_mix).abs() < 0.01);
}

#[test]
fn pair_score_trivial_cases() {
    let flat = MlpClassifier::from_parameters(
        vec![Tensor::zeros(&[2, 3]), Tensor::zeros(&[3, 4])],
        vec![Tensor::zeros(&[1, 3]), Tensor::zeros(&[1, 4])],
        0.0,
    )
    .unwrap();
    let mut rng = stream(0, 0, Purpose::Score, 0);
    let c = pair_score(&flat, (0, 1), &[0.2, 0.1], &[-1.0, 3.0], 1, 0.5, 8, &mut rng, BaseScore::Entropy).unwrap();
    assert!((c.total - 3.0 * 4f64.ln()).abs() < 1e-12);

    let mut init = stream(0, 0, Purpose::Init, 0);
    let clf = MlpClassifier::new(&[2, 8, 3], 0.0, &mut init).unwrap();
    let x = [0.4, -0.9];
    let c = pair_score(&clf, (0, 1), &x, &x, 1, 0.3, 16, &mut rng, BaseScore::Entropy).unwrap();
    assert!((c.score_mix - c.score_i).abs() < 1e-12);
}

/// Hidden layer passes the pixels through, offset by 0.5 to stay clear of the
/// relu kink; the class-1 logit grows with the brightness of the left column.
fn left_column_classifier() -> MlpClassifier {
    let mut w2 = vec![0.0; 8];
    w2[1] = 4.0;
    w2[2 * 2 + 1] = 4.0;
    MlpClassifier::from_parameters(
        vec![Tensor::identity(4), Tensor::new(vec![4, 2], w2).unwrap()],
        vec![Tensor::new(vec![1, 4], vec![0.5; 4]).unwrap(), Tensor::new(vec![1, 2], vec![0.0, -5.0]).unwrap()],
        0.0,
    )
    .unwrap()
}

fn entropy_of(clf: &MlpClassifier, img: &[f64]) -> f64 {
    let p = clf.forward(&Tensor::from_rows(&[img]).unwrap()).unwrap();
    -p.data().iter().map(|q| if *q > 0.0 { q * q.ln() } else { 0.0 }).sum::<f64>()
}

#[test]
fn stn_ascent_follows_analytic_direction() {
    let clf = left_column_classifier();
    let before = clf.clone();
    let shape = ImageShape::new(2, 2).unwrap();
    let img = [0.0, 1.0, 0.0, 1.0];
    // The entropy only depends on the left column, which a translation by
    // tx ∈ (0, 1) fills with brightness tx, so the class-1 logit is 8 tx - 1.
    let h = 1e-6;
    let tx0 = 0.05;
    let at = |tx: f64| entropy_of(&clf, &affine_grid_sample(&img, shape, &AffineParams::translation(tx, 0.0)).unwrap());
    let slope = (at(tx0 + h) - at(tx0 - h)) / (2.0 * h);
    let analytic = {
        let z: f64 = 8.0 * tx0 - 1.0;
        let p = 1.0 / (1.0 + (-z).exp());
        // dH/dz = -z p (1 - p) for two classes
        -z * p * (1.0 - p) * 8.0
    };
    assert!(slope > 0.0 && ((slope - analytic) / analytic).abs() < 1e-4, "{slope} vs {analytic}");

    let x = Tensor::from_rows(&[img]).unwrap();
    let out = train_stn_policy(&clf, &x, shape, &StnTraining::default()).unwrap();
    let theta = out.theta[0];
    assert!(theta.0[2] > 0.0, "{theta:?}");
    let ident = stn_acquisition_score(&clf, &img, shape, &AffineParams::identity()).unwrap();
    let learned = stn_acquisition_score(&clf, &img, shape, &theta).unwrap();
    assert!(learned >= ident - 1e-9);
    assert!((ident - 2.0 * entropy_of(&clf, &img)).abs() < 1e-12);
    assert!(out.entropy_trace.iter().all(|&e| e <= out.best_entropy[0] + 1e-12));
    assert_eq!(clf.weights(), before.weights());
    assert_eq!(clf.biases(), before.biases());
}

#[test]
fn policy_training_leaves_classifier_untouched() {
    let clf = toy_classifier();
    let before = clf.clone();
    let (hi, hj) = toy_pair();
    let mut init = stream(0, 0, Purpose::Init, 1);
    let mut policy = PolicyGenerator::new(1, 8, &mut init).unwrap();
    let mut rng = stream(0, 0, Purpose::Policy, 1);
    train_policy(&mut policy, &clf, &hi, &hj, 1, &PolicyTraining::default(), &mut rng).unwrap();
    assert_eq!(clf.weights(), before.weights());
    assert_eq!(clf.biases(), before.biases());
}

#[test]
fn uniform_classifier_accuracy_is_class_zero_frequency() {
    let flat = MlpClassifier::from_parameters(
        vec![Tensor::zeros(&[2, 2]), Tensor::zeros(&[2, 3])],
        vec![Tensor::zeros(&[1, 2]), Tensor::zeros(&[1, 3])],
        0.0,
    )
    .unwrap();
    let y = vec![0, 1, 2, 0, 1, 2, 0];
    let batch = LabeledBatch {
        x: Tensor::zeros(&[7, 2]),
        y,
    };
    assert_eq!(evaluate(&flat, &batch).unwrap(), 3.0 / 7.0);
}

#[test]
fn virtual_set_has_one_instance_per_pair_with_fresh_weights() {
    let ds = gen_two_moons(100, 0.1, 0).unwrap();
    let mut pool = split(ds, 20, 20, true, 0).unwrap();
    let ids: Vec<usize> = pool.unlabeled()[..10].to_vec();
    for &i in &ids {
        let y = pool.hidden_label(i).unwrap();
        pool.reveal(i, y).unwrap();
    }
    let pairs: Vec<SelectedPair> = ids
        .chunks(2)
        .map(|c| SelectedPair {
            id_i: c[0],
            id_j: c[1],
            layer: 1,
            tau: 0.8,
        })
        .collect();
    let mut rng = stream(0, 0, Purpose::Virtual, 0);
    let a = build_virtual_set(&pairs, &pool, &mut rng).unwrap();
    let b = build_virtual_set(&pairs, &pool, &mut rng).unwrap();
    assert_eq!(a.len(), 5);
    for (u, v) in a.iter().zip(&b) {
        assert_ne!(u.lambda, v.lambda);
        assert!(u.lambda > 0.0 && u.lambda < 1.0);
    }

    let unlabeled = SelectedPair {
        id_i: pool.unlabeled()[0],
        id_j: pool.unlabeled()[1],
        layer: 1,
        tau: 1.0,
    };
    assert!(build_virtual_set(&[unlabeled], &pool, &mut rng).is_err());
}
