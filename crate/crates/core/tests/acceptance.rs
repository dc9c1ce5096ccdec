//! One line per acceptance criterion. Run with
//! `cargo test --test acceptance`; exits non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use lada::acquisition::mix_score;
use lada::config::{Augmentation, Config, StrategyName};
use lada::data::Dataset;
use lada::engine::{pair_pool, Engine, SimulatedOracle};
use lada::experiment::{best_accuracy, run_seed};
use lada::rng::{stream, Purpose};
use lada::verify::run_suite;

use common::{digits_config, moons_config, trace, with};

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn suite(name: &'static str, suite: &str, limit: Duration) -> Outcome {
    let start = Instant::now();
    match run_suite(suite, 0) {
        Ok(report) => {
            let took = start.elapsed();
            let failed: Vec<String> = report
                .checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| format!("{}: {}", c.name, c.detail))
                .collect();
            let details: Vec<String> = report.checks.iter().map(|c| c.detail.clone()).collect();
            Outcome {
                name,
                passed: failed.is_empty() && took <= limit,
                detail: if failed.is_empty() {
                    format!("{} in {:.1}s (limit {}s)", details.join("; "), took.as_secs_f64(), limit.as_secs())
                } else {
                    failed.join("; ")
                },
            }
        }
        Err(e) => Outcome {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

/// Mean virtual entropy over the round-10 candidate pairs, under the policy
/// τ* and under τ = 1, on the same classifier.
fn virtual_entropy_probe(cfg: &Config, ds: &Dataset, seed: u64, rounds: usize) -> lada::Result<(f64, f64)> {
    let mut engine = Engine::new(cfg, ds.clone(), seed)?;
    for _ in 0..rounds {
        engine.run_round(&mut SimulatedOracle)?;
    }
    let clf = engine.classifier();
    let pool = engine.pool();
    let pairs = pair_pool(pool.unlabeled(), cfg.strategy.pool_size, seed, rounds);
    let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let base = cfg.pipeline().acquisition.base().expect("entropy");
    let (mut learned, mut fixed, mut count) = (0.0, 0.0, 0usize);
    for k in clf.eligible_mix_layers(cfg.augmentation.mix_input_layer) {
        let hi = clf.forward_to_layer(&pool.rows(&a), k)?;
        let hj = clf.forward_to_layer(&pool.rows(&b), k)?;
        let mut policy = engine.policy().clone();
        let mut rng = stream(seed, rounds, Purpose::Policy, k as u64);
        let taus = policy
            .train(clf, &hi, &hj, k, &cfg.policy_training(), cfg.policy.amortized, &mut rng)?
            .tau_star;
        for (n, &tau) in taus.iter().enumerate().take(pairs.len()) {
            let mut r1 = stream(seed, rounds, Purpose::Score, n as u64);
            let mut r2 = stream(seed, rounds, Purpose::Score, n as u64);
            let (x, y) = (hi.row_slice(n), hj.row_slice(n));
            learned += mix_score(clf, x, y, k, tau, cfg.strategy.mc_samples, &mut r1, base)?;
            fixed += mix_score(clf, x, y, k, 1.0, cfg.strategy.mc_samples, &mut r2, base)?;
            count += 1;
        }
    }
    Ok((learned / count as f64, fixed / count as f64))
}

fn fig5_direction() -> Outcome {
    let name = "virtual-entropy direction (learned τ* vs τ = 1, two-moons, 10 rounds)";
    let cfg = with(&moons_config(), StrategyName::LadaEntmix, 10);
    let run = || -> lada::Result<(usize, Vec<String>)> {
        let ds = cfg.load_dataset()?;
        let mut wins = 0;
        let mut parts = Vec::new();
        for seed in 0..5 {
            let (l, f) = virtual_entropy_probe(&cfg, &ds, seed, 10)?;
            wins += (l >= f) as usize;
            parts.push(format!("s{seed}: {l:.4} vs {f:.4}"));
        }
        Ok((wins, parts))
    };
    match run() {
        Ok((wins, parts)) => Outcome {
            name,
            passed: wins >= 4,
            detail: format!("{wins}/5 seeds learned ≥ fixed ({})", parts.join(", ")),
        },
        Err(e) => Outcome {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn mean_best(cfg: &Config, ds: &Dataset) -> lada::Result<f64> {
    let runs = (0..5u64).map(|s| run_seed(cfg, ds, s)).collect::<lada::Result<Vec<_>>>()?;
    Ok(best_accuracy(&runs).0)
}

fn end_to_end() -> Outcome {
    let name = "end-to-end ordering LADA_EntMix ≥ MaxEnt ≥ Random, LADA − Random ≥ 1 pt (5 seeds × 20 rounds)";
    let start = Instant::now();
    let run = || -> lada::Result<(bool, Vec<String>)> {
        let mut ok = true;
        let mut parts = Vec::new();
        for (label, base) in [("moons", moons_config()), ("digits", digits_config())] {
            let ds = base.load_dataset()?;
            let lada = mean_best(&with(&base, StrategyName::LadaEntmix, 20), &ds)?;
            let ent = mean_best(&with(&base, StrategyName::MaxEntropy, 20), &ds)?;
            let rnd = mean_best(&with(&base, StrategyName::Random, 20), &ds)?;
            let order = lada >= ent && ent >= rnd;
            let gap = lada - rnd >= 0.01;
            ok &= order && gap;
            parts.push(format!(
                "{label}: lada {:.2} ent {:.2} random {:.2} [order {}, gap {:+.2} pt {}]",
                100.0 * lada,
                100.0 * ent,
                100.0 * rnd,
                if order { "ok" } else { "violated" },
                100.0 * (lada - rnd),
                if gap { "ok" } else { "short" }
            ));
        }
        Ok((ok, parts))
    };
    match run() {
        Ok((ok, parts)) => {
            let took = start.elapsed();
            let in_time = took <= Duration::from_secs(600);
            Outcome {
                name,
                passed: ok && in_time,
                detail: format!("{}; {:.0}s (limit 600s)", parts.join("; "), took.as_secs_f64()),
            }
        }
        Err(e) => Outcome {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn equivalences() -> Outcome {
    let name = "equivalence traces (no-augmentation LADA = MaxEnt; fixed τ singles = Ent w/ ManifoldMixup)";
    let run = || -> lada::Result<(bool, String)> {
        let base = moons_config();
        let ds = base.load_dataset()?;
        let mut no_aug = with(&base, StrategyName::LadaEntmix, 10);
        no_aug.augmentation.kind = Some(Augmentation::None);
        let maxent = with(&base, StrategyName::MaxEntropy, 10);
        let mut singles = with(&base, StrategyName::LadaEntmixFixed, 10);
        singles.strategy.lookahead = Some(false);
        let manifold = with(&base, StrategyName::EntManifoldMixup, 10);
        let mut ok = true;
        let mut parts = Vec::new();
        for seed in [0u64, 1] {
            let a = trace(&no_aug, &ds, seed);
            let b = trace(&maxent, &ds, seed);
            let c = trace(&singles, &ds, seed);
            let d = trace(&manifold, &ds, seed);
            let same_ab = a == b;
            let same_cd = c == d;
            ok &= same_ab && same_cd;
            parts.push(format!(
                "seed {seed}: maxent {} ({} rounds), manifold {} ({} rounds)",
                if same_ab { "identical" } else { "DIFFERS" },
                a.0.len(),
                if same_cd { "identical" } else { "DIFFERS" },
                c.0.len()
            ));
        }
        Ok((ok, parts.join("; ")))
    };
    match run() {
        Ok((passed, detail)) => Outcome { name, passed, detail },
        Err(e) => Outcome {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn main() {
    let outcomes = [
        suite("gradient suite (rel. err < 1e-5 ops/nets, < 1e-4 warp, < 30 s)", "grad", Duration::from_secs(30)),
        suite("beta suite (KS < 0.01, implicit gradient < 1e-3, median gradient < 1e-6, < 60 s)", "beta", Duration::from_secs(60)),
        suite("policy-objective oracle (3 SE gradient, τ* ≥ 99% of grid max, < 2 min)", "policy", Duration::from_secs(120)),
        suite("selection oracle (exhaustive match, 100 trials)", "selection", Duration::from_secs(600)),
        fig5_direction(),
        end_to_end(),
        equivalences(),
    ];
    let mut failed = 0;
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
        failed += (!o.passed) as usize;
    }
    println!("acceptance: {} passed, {} failed", outcomes.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
