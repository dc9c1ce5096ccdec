#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use lada::config::{Config, DataSource, StrategyName};
use lada::data::Dataset;
use lada::engine::Engine;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

/// The bundled 2000-instance 8×8 digits subset.
pub fn digits_config() -> Config {
    let mut cfg = Config::default();
    cfg.data.source = DataSource::Idx;
    cfg.data.images = Some(data_dir().join("digits-2000-images.idx3-ubyte"));
    cfg.data.labels = Some(data_dir().join("digits-2000-labels.idx1-ubyte"));
    cfg.data.n_test = 500;
    cfg
}

pub fn moons_config() -> Config {
    Config::default()
}

pub fn with(cfg: &Config, name: StrategyName, rounds: usize) -> Config {
    let mut c = cfg.clone().with_strategy(name);
    c.run.rounds = rounds;
    c
}

/// Selected ids and test accuracy per round, driving the engine by hand
/// with ground-truth labels.
pub fn trace(cfg: &Config, ds: &Dataset, seed: u64) -> (Vec<Vec<usize>>, Vec<f64>) {
    let mut e = Engine::new(cfg, ds.clone(), seed).expect("engine");
    let mut ids = Vec::new();
    while let Some(p) = e.propose().expect("propose") {
        let labels: BTreeMap<usize, usize> = p
            .ids()
            .into_iter()
            .map(|i| (i, e.pool().hidden_label(i).expect("unlabeled")))
            .collect();
        ids.push(p.ids());
        e.complete(&p, &labels).expect("complete");
    }
    let acc = e.metrics().iter().map(|m| m.test_acc).collect();
    (ids, acc)
}
