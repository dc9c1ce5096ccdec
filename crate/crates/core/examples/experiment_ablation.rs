//! Learned versus fixed τ on a small two-moons run, writing the usual run
//! directories under the system temp dir.

use lada::config::{Config, StrategyName};
use lada::experiment::run_ablation;

fn main() -> lada::Result<()> {
    let mut cfg = Config::default().with_strategy(StrategyName::LadaEntmix);
    cfg.run.rounds = 4;
    cfg.run.seeds = vec![0, 1];
    let out = std::env::temp_dir().join("lada-ablation-example");
    let (learned, fixed) = run_ablation(&cfg, &out)?;
    for (name, s) in [("learned", &learned), ("fixed", &fixed)] {
        println!("{name:>8}: best acc {:.4} ± {:.4}  ({})", s.best.0, s.best.1, s.out_dir.display());
    }
    println!("{}", std::fs::read_to_string(out.join("ablation.csv")).map_err(|e| lada::Error::Io { path: out.clone(), source: e })?);
    Ok(())
}
