//! A few LADA rounds on two moons, labeled by the simulated oracle.

use lada::config::{Config, StrategyName};
use lada::engine::{Engine, SimulatedOracle};

fn main() -> lada::Result<()> {
    let mut cfg = Config::default().with_strategy(StrategyName::LadaEntmix);
    cfg.run.rounds = 5;
    let ds = cfg.load_dataset()?;
    let mut engine = Engine::new(&cfg, ds, 0)?;
    let mut oracle = SimulatedOracle;
    while let Some(m) = engine.run_round(&mut oracle)? {
        println!(
            "round {:>2}  labeled {:>3}  acc {:.3}  mean τ {}",
            m.round,
            m.labeled,
            m.test_acc,
            m.mean_tau.map_or("-".into(), |t| format!("{t:.3}"))
        );
    }
    Ok(())
}
