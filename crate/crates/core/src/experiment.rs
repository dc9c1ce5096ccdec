//! Seed sweeps, metrics files and run manifests.
//!
//! A run directory holds `config.toml`, `seeds.txt`, one `metrics_seed{s}.csv`
//! per seed, `aggregate.csv` (mean and std over seeds per round), `best.csv`
//! (best accuracy over rounds, mean and std over seeds) and `manifest.toml`.
//! `manifest.toml` is itself a valid `--config`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Config, DataSource, StrategyName};
use crate::data::{write_csv_to, Dataset};
use crate::engine::{Engine, RoundMetrics, SimulatedOracle};
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "round,labeled,test_acc,mean_virtual_entropy,max_virtual_entropy,mean_tau,strategy,seed,wall_ms";

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub rounds: Option<usize>,
    pub strategy: Option<StrategyName>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: Config) -> Result<Config> {
        if let Some(s) = self.strategy {
            cfg = cfg.with_strategy(s);
        }
        if let Some(s) = self.seed {
            cfg.run.seeds = vec![s];
        }
        if let Some(r) = self.rounds {
            cfg.run.rounds = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(rows: &[RoundMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            m.round,
            m.labeled,
            m.test_acc,
            opt(m.mean_virtual_entropy),
            opt(m.max_virtual_entropy),
            opt(m.mean_tau),
            m.strategy,
            m.seed,
            m.wall_ms
        ));
    }
    s
}

/// Parses a metrics file written by [`metrics_csv`] (per-pair `τ*` are not
/// stored there and come back empty).
pub fn read_metrics_csv(path: &Path) -> Result<Vec<RoundMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format {
            path: path.into(),
            offset: 0,
            detail: "unexpected metrics header".into(),
        });
    }
    let mut offset = METRICS_HEADER.len() + 1;
    let mut out = Vec::new();
    for line in lines {
        let bad = |d: &str| Error::Format {
            path: path.into(),
            offset: offset as u64,
            detail: d.into(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(bad("expected 9 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let optn = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        out.push(RoundMetrics {
            round: f[0].parse().map_err(|_| bad("bad round"))?,
            labeled: f[1].parse().map_err(|_| bad("bad labeled"))?,
            test_acc: num(f[2])?,
            mean_virtual_entropy: optn(f[3])?,
            max_virtual_entropy: optn(f[4])?,
            mean_tau: optn(f[5])?,
            taus: Vec::new(),
            strategy: f[6].to_string(),
            seed: f[7].parse().map_err(|_| bad("bad seed"))?,
            wall_ms: f[8].parse().map_err(|_| bad("bad wall_ms"))?,
        });
        offset += line.len() + 1;
    }
    Ok(out)
}

/// Per-round mean and population std over seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub round: usize,
    pub labeled: usize,
    pub test_acc_mean: f64,
    pub test_acc_std: f64,
    pub mean_virtual_entropy: Option<f64>,
    pub seeds: usize,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

pub fn aggregate(runs: &[Vec<RoundMetrics>]) -> Vec<AggregateRow> {
    let rounds = runs.iter().map(Vec::len).min().unwrap_or(0);
    (0..rounds)
        .map(|r| {
            let accs: Vec<f64> = runs.iter().map(|m| m[r].test_acc).collect();
            let ents: Vec<f64> = runs.iter().filter_map(|m| m[r].mean_virtual_entropy).collect();
            let (mean, std) = mean_std(&accs);
            AggregateRow {
                round: runs[0][r].round,
                labeled: runs[0][r].labeled,
                test_acc_mean: mean,
                test_acc_std: std,
                mean_virtual_entropy: (!ents.is_empty()).then(|| mean_std(&ents).0),
                seeds: runs.len(),
            }
        })
        .collect()
}

/// Best accuracy over rounds for each seed, then mean and std over seeds.
pub fn best_accuracy(runs: &[Vec<RoundMetrics>]) -> (f64, f64) {
    let best: Vec<f64> = runs
        .iter()
        .map(|m| m.iter().map(|r| r.test_acc).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    mean_std(&best)
}

/// `sha256("blob <len>\0" ++ bytes)`, hex.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn data_hashes(cfg: &Config, ds: &Dataset) -> Result<Vec<(String, String)>> {
    let file = |p: &PathBuf| -> Result<(String, String)> {
        let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
        Ok((p.display().to_string(), content_hash(&bytes)))
    };
    let d = &cfg.data;
    Ok(match d.source {
        DataSource::TwoMoons => {
            let mut buf = Vec::new();
            write_csv_to(ds, &mut buf)?;
            vec![("two_moons.csv (generated)".into(), content_hash(&buf))]
        }
        DataSource::Idx => vec![
            file(d.images.as_ref().expect("validated"))?,
            file(d.labels.as_ref().expect("validated"))?,
        ],
        DataSource::Csv => vec![file(d.csv.as_ref().expect("validated"))?],
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    manifest: ManifestHeader,
    config: &'a Config,
}

#[derive(Serialize)]
struct ManifestHeader {
    version: String,
    strategy: String,
    seeds: Vec<u64>,
    data: Vec<DataEntry>,
}

#[derive(Serialize)]
struct DataEntry {
    file: String,
    sha256: String,
}

/// Results of [`run_experiment`].
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub runs: Vec<Vec<RoundMetrics>>,
    pub aggregate: Vec<AggregateRow>,
    pub best: (f64, f64),
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs one seed to completion with the simulated oracle.
pub fn run_seed(cfg: &Config, dataset: &Dataset, seed: u64) -> Result<Vec<RoundMetrics>> {
    let mut engine = Engine::new(cfg, dataset.clone(), seed)?;
    while let Some(m) = engine.run_round(&mut SimulatedOracle)? {
        tracing::info!(
            strategy = %cfg.strategy.name,
            seed,
            round = m.round,
            acc = m.test_acc,
            "round complete"
        );
    }
    Ok(engine.metrics().to_vec())
}

/// Runs every configured seed and writes the run directory.
pub fn run_experiment(cfg: &Config, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let dataset = cfg.load_dataset()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write(&out_dir.join("config.toml"), &cfg.to_toml_string())?;
    let seeds: Vec<String> = cfg.run.seeds.iter().map(u64::to_string).collect();
    write(&out_dir.join("seeds.txt"), &(seeds.join("\n") + "\n"))?;

    let mut runs = Vec::new();
    for &seed in &cfg.run.seeds {
        let rows = run_seed(cfg, &dataset, seed)?;
        write(&out_dir.join(format!("metrics_seed{seed}.csv")), &metrics_csv(&rows))?;
        runs.push(rows);
    }
    let agg = aggregate(&runs);
    let mut s = String::from("round,labeled,test_acc_mean,test_acc_std,mean_virtual_entropy,seeds\n");
    for a in &agg {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            a.round,
            a.labeled,
            a.test_acc_mean,
            a.test_acc_std,
            opt(a.mean_virtual_entropy),
            a.seeds
        ));
    }
    write(&out_dir.join("aggregate.csv"), &s)?;
    let best = best_accuracy(&runs);
    write(
        &out_dir.join("best.csv"),
        &format!(
            "strategy,best_acc_mean,best_acc_std,seeds\n{},{},{},{}\n",
            cfg.strategy.name,
            best.0,
            best.1,
            runs.len()
        ),
    )?;
    let manifest = Manifest {
        manifest: ManifestHeader {
            version: env!("CARGO_PKG_VERSION").into(),
            strategy: cfg.strategy.name.to_string(),
            seeds: cfg.run.seeds.clone(),
            data: data_hashes(cfg, &dataset)?
                .into_iter()
                .map(|(file, sha256)| DataEntry { file, sha256 })
                .collect(),
        },
        config: cfg,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    write(&out_dir.join("manifest.toml"), &text)?;
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        runs,
        aggregate: agg,
        best,
    })
}

/// Learned-versus-fixed comparison for a LADA strategy: runs both under the
/// same seeds into `<out>/<name>` and `<out>/<name>_fixed` and writes
/// `<out>/ablation.csv`.
pub fn run_ablation(cfg: &Config, out_dir: &Path) -> Result<(RunSummary, RunSummary)> {
    let name = cfg.strategy.name;
    let twin = name.fixed_twin().ok_or_else(|| {
        Error::Config(format!("ablate needs a learned LADA strategy, got {name}"))
    })?;
    let learned = run_experiment(cfg, &out_dir.join(name.as_str()))?;
    let fixed_cfg = cfg.clone().with_strategy(twin);
    let fixed = run_experiment(&fixed_cfg, &out_dir.join(twin.as_str()))?;
    let path = out_dir.join("ablation.csv");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut s = String::from("round,labeled,learned_acc_mean,fixed_acc_mean,learned_virtual_entropy,fixed_virtual_entropy\n");
    for (a, b) in learned.aggregate.iter().zip(&fixed.aggregate) {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            a.round,
            a.labeled,
            a.test_acc_mean,
            b.test_acc_mean,
            opt(a.mean_virtual_entropy),
            opt(b.mean_virtual_entropy)
        ));
    }
    f.write_all(s.as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok((learned, fixed))
}
