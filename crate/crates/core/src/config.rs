//! Run configuration, read from TOML. Unknown keys are rejected.
//!
//! Strategies are named presets; the `acquisition`, `lookahead`, `kind` and
//! `learned` keys override individual parts of a preset.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::BaseScore;
use crate::data::{gen_two_moons, load_csv, load_idx, Dataset};
use crate::error::{Error, Result};
use crate::policy::{PolicyOptimizer, PolicyTraining};
use crate::stn::StnTraining;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub strategy: StrategyConfig,
    pub augmentation: AugmentationConfig,
    pub policy: PolicyConfig,
    #[serde(rename = "loop")]
    pub run: LoopConfig,
    pub service: ServiceConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    TwoMoons,
    Idx,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Two-moons size and noise.
    pub n: usize,
    pub noise: f64,
    /// Seed of the generated dataset; splits use the run seed.
    pub data_seed: u64,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub limit: Option<usize>,
    pub n_test: usize,
    pub n_init_labeled: usize,
    pub balanced: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::TwoMoons,
            n: 600,
            noise: 0.15,
            data_seed: 0,
            images: None,
            labels: None,
            csv: None,
            limit: None,
            n_test: 200,
            n_init_labeled: 20,
            balanced: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warm_start: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 64],
            dropout: 0.1,
            lr: 0.05,
            momentum: 0.9,
            batch_size: 32,
            epochs: 30,
            warm_start: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Random,
    MaxEntropy,
    VarRatio,
    Bald,
    EntManifoldMixup,
    LadaEntmix,
    LadaEntmixFixed,
    LadaVarmix,
    LadaVarmixFixed,
    LadaEntstn,
    LadaEntstnFixed,
}

impl StrategyName {
    pub const ALL: [StrategyName; 11] = [
        StrategyName::Random,
        StrategyName::MaxEntropy,
        StrategyName::VarRatio,
        StrategyName::Bald,
        StrategyName::EntManifoldMixup,
        StrategyName::LadaEntmix,
        StrategyName::LadaEntmixFixed,
        StrategyName::LadaVarmix,
        StrategyName::LadaVarmixFixed,
        StrategyName::LadaEntstn,
        StrategyName::LadaEntstnFixed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyName::Random => "random",
            StrategyName::MaxEntropy => "max_entropy",
            StrategyName::VarRatio => "var_ratio",
            StrategyName::Bald => "bald",
            StrategyName::EntManifoldMixup => "ent_manifold_mixup",
            StrategyName::LadaEntmix => "lada_entmix",
            StrategyName::LadaEntmixFixed => "lada_entmix_fixed",
            StrategyName::LadaVarmix => "lada_varmix",
            StrategyName::LadaVarmixFixed => "lada_varmix_fixed",
            StrategyName::LadaEntstn => "lada_entstn",
            StrategyName::LadaEntstnFixed => "lada_entstn_fixed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|n| n.as_str()).collect();
                Error::Config(format!("unknown strategy {s:?}; expected one of {}", names.join(", ")))
            })
    }

    /// The fixed-τ twin of a learned LADA strategy.
    pub fn fixed_twin(self) -> Option<Self> {
        match self {
            StrategyName::LadaEntmix => Some(StrategyName::LadaEntmixFixed),
            StrategyName::LadaVarmix => Some(StrategyName::LadaVarmixFixed),
            StrategyName::LadaEntstn => Some(StrategyName::LadaEntstnFixed),
            _ => None,
        }
    }

    fn preset(self) -> Pipeline {
        use Acquisition as A;
        use Augmentation as G;
        let (acquisition, lookahead, augmentation, learned) = match self {
            StrategyName::Random => (A::Random, false, G::None, false),
            StrategyName::MaxEntropy => (A::Entropy, false, G::None, false),
            StrategyName::VarRatio => (A::VarRatio, false, G::None, false),
            StrategyName::Bald => (A::Bald, false, G::None, false),
            StrategyName::EntManifoldMixup => (A::Entropy, false, G::Mixup, false),
            StrategyName::LadaEntmix => (A::Entropy, true, G::Mixup, true),
            StrategyName::LadaEntmixFixed => (A::Entropy, true, G::Mixup, false),
            StrategyName::LadaVarmix => (A::VarRatio, true, G::Mixup, true),
            StrategyName::LadaVarmixFixed => (A::VarRatio, true, G::Mixup, false),
            StrategyName::LadaEntstn => (A::Entropy, true, G::Stn, true),
            StrategyName::LadaEntstnFixed => (A::Entropy, true, G::Stn, false),
        };
        Pipeline {
            acquisition,
            lookahead,
            augmentation,
            learned,
        }
    }
}

impl std::fmt::Display for StrategyName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acquisition {
    Random,
    Entropy,
    VarRatio,
    Bald,
}

impl Acquisition {
    pub fn base(self) -> Option<BaseScore> {
        match self {
            Acquisition::Entropy => Some(BaseScore::Entropy),
            Acquisition::VarRatio => Some(BaseScore::VarRatio),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    None,
    Mixup,
    Stn,
}

/// A strategy after applying overrides.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pipeline {
    pub acquisition: Acquisition,
    /// Score candidates with their augmented look-ahead term.
    pub lookahead: bool,
    pub augmentation: Augmentation,
    /// Learned policy (τ generator or per-instance warps) versus fixed.
    pub learned: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    pub name: StrategyName,
    pub acquisition: Option<Acquisition>,
    pub lookahead: Option<bool>,
    /// Monte-Carlo mixes per pair (`N`).
    pub mc_samples: usize,
    /// Stochastic passes for BALD.
    pub bald_samples: usize,
    pub budget: usize,
    pub pool_size: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            name: StrategyName::LadaEntmix,
            acquisition: None,
            lookahead: None,
            mc_samples: 8,
            bald_samples: 10,
            budget: 10,
            pool_size: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub kind: Option<Augmentation>,
    /// Allow mixing at the input layer as well as hidden layers.
    pub mix_input_layer: bool,
    pub stn_steps: usize,
    pub stn_lr: f64,
    pub stn_clamp: f64,
    /// Train on warped copies of acquired instances.
    pub stn_virtual: bool,
    /// Entry range of the random warps used by the fixed variant.
    pub stn_fixed_scale: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            kind: None,
            mix_input_layer: false,
            stn_steps: 30,
            stn_lr: 5e-2,
            stn_clamp: 0.5,
            stn_virtual: true,
            stn_fixed_scale: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub learned: Option<bool>,
    pub fixed_tau: f64,
    pub hidden: usize,
    pub steps: usize,
    pub lr: f64,
    pub optimizer: PolicyOptimizer,
    /// Pairs per policy step; 0 means all candidates.
    pub batch_size: usize,
    pub amortized: bool,
    pub reset_each_round: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            learned: None,
            fixed_tau: 1.0,
            hidden: 64,
            steps: 50,
            lr: 1e-2,
            optimizer: PolicyOptimizer::Adam,
            batch_size: 0,
            amortized: true,
            reset_each_round: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub rounds: usize,
    pub seeds: Vec<u64>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            rounds: 20,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub bind: String,
    pub snapshot_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            snapshot_dir: None,
        }
    }
}

/// Manifest files embed the configuration under `[config]`.
#[derive(Deserialize)]
struct ManifestEnvelope {
    config: Config,
}

impl Config {
    /// Parses TOML text. A manifest (with `[manifest]` and `[config]`
    /// tables) is accepted as well.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let cfg: Config = if value.contains_key("manifest") {
            let env: ManifestEnvelope = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
            env.config
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data paths resolve against its
    /// directory and are stored absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    let joined = base.join(&*q);
                    *q = joined.canonicalize().unwrap_or(joined);
                }
            }
        };
        fix(&mut self.data.images);
        fix(&mut self.data.labels);
        fix(&mut self.data.csv);
        fix(&mut self.service.snapshot_dir);
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn pipeline(&self) -> Pipeline {
        let mut p = self.strategy.name.preset();
        if let Some(a) = self.strategy.acquisition {
            p.acquisition = a;
        }
        if let Some(l) = self.strategy.lookahead {
            p.lookahead = l;
        }
        if let Some(k) = self.augmentation.kind {
            p.augmentation = k;
        }
        if let Some(l) = self.policy.learned {
            p.learned = l;
        }
        if p.augmentation == Augmentation::None {
            p.lookahead = false;
        }
        p
    }

    pub fn policy_training(&self) -> PolicyTraining {
        PolicyTraining {
            steps: self.policy.steps,
            lr: self.policy.lr,
            samples: self.strategy.mc_samples,
            batch_size: self.policy.batch_size,
            optimizer: self.policy.optimizer,
            base: self.pipeline().acquisition.base().unwrap_or(BaseScore::Entropy),
        }
    }

    pub fn stn_training(&self) -> StnTraining {
        StnTraining {
            steps: self.augmentation.stn_steps,
            lr: self.augmentation.stn_lr,
            clamp: self.augmentation.stn_clamp,
        }
    }

    /// Switches to another preset, clearing part overrides.
    pub fn with_strategy(mut self, name: StrategyName) -> Self {
        self.strategy.name = name;
        self.strategy.acquisition = None;
        self.strategy.lookahead = None;
        self.augmentation.kind = None;
        self.policy.learned = None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let p = self.pipeline();
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return bad("model.hidden needs at least one positive width".into());
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return bad(format!("model.dropout {} outside [0, 1)", self.model.dropout));
        }
        if !(self.model.lr > 0.0) || self.model.batch_size == 0 {
            return bad("model.lr and model.batch_size must be positive".into());
        }
        if self.strategy.mc_samples == 0 {
            return bad("strategy.mc_samples must be at least 1".into());
        }
        if p.acquisition == Acquisition::Bald && self.strategy.bald_samples < 2 {
            return bad("strategy.bald_samples must be at least 2".into());
        }
        if self.strategy.pool_size < 2 {
            return bad("strategy.pool_size must be at least 2".into());
        }
        if p.augmentation == Augmentation::Mixup && !self.strategy.budget.is_multiple_of(2) {
            return bad(format!("strategy.budget {} must be even for pair selection", self.strategy.budget));
        }
        if p.lookahead && p.acquisition.base().is_none() {
            return bad(format!("look-ahead needs entropy or var_ratio, not {:?}", p.acquisition));
        }
        if p.lookahead && p.augmentation == Augmentation::Mixup && self.strategy.pool_size < self.strategy.budget {
            return bad("strategy.pool_size must cover the budget".into());
        }
        if !(self.policy.fixed_tau >= crate::beta::TAU_FLOOR) {
            return bad(format!("policy.fixed_tau {} below 1e-3", self.policy.fixed_tau));
        }
        if self.policy.hidden == 0 || self.policy.steps == 0 {
            return bad("policy.hidden and policy.steps must be positive".into());
        }
        if !(self.augmentation.stn_clamp > 0.0) {
            return bad("augmentation.stn_clamp must be positive".into());
        }
        if self.data.n_test == 0 {
            return bad("data.n_test must be positive".into());
        }
        match self.data.source {
            DataSource::Idx if self.data.images.is_none() || self.data.labels.is_none() => {
                return bad("data.source = \"idx\" needs data.images and data.labels".into())
            }
            DataSource::Csv if self.data.csv.is_none() => {
                return bad("data.source = \"csv\" needs data.csv".into())
            }
            _ => {}
        }
        if self.run.seeds.is_empty() {
            return bad("loop.seeds must not be empty".into());
        }
        Ok(())
    }

    /// Loads or generates the configured dataset.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let d = &self.data;
        let ds = match d.source {
            DataSource::TwoMoons => gen_two_moons(d.n, d.noise, d.data_seed)?,
            DataSource::Idx => {
                let (i, l) = (d.images.as_ref().expect("validated"), d.labels.as_ref().expect("validated"));
                load_idx(i, l, d.limit)?
            }
            DataSource::Csv => load_csv(d.csv.as_ref().expect("validated"))?,
        };
        if self.pipeline().augmentation == Augmentation::Stn && ds.image_shape().is_none() {
            return Err(Error::Config("STN augmentation needs an image dataset (data.source = \"idx\")".into()));
        }
        Ok(ds)
    }

    /// Classifier widths for a dataset.
    pub fn widths(&self, ds: &Dataset) -> Vec<usize> {
        let mut w = vec![ds.width()];
        w.extend(&self.model.hidden);
        w.push(ds.classes);
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
        let c = Config::from_toml_str("").unwrap();
        assert_eq!(c, Config::default());
    }

    #[test]
    fn unknown_keys_fail() {
        let e = Config::from_toml_str("[model]\nhiden = [3]\n").unwrap_err();
        assert!(matches!(e, Error::Config(m) if m.contains("hiden")));
        assert!(Config::from_toml_str("[modle]\n").is_err());
    }

    #[test]
    fn overrides_apply() {
        let c = Config::from_toml_str("[strategy]\nname = \"lada_entmix\"\n[augmentation]\nkind = \"none\"\n").unwrap();
        let p = c.pipeline();
        assert_eq!(p.augmentation, Augmentation::None);
        assert!(!p.lookahead);
    }

    #[test]
    fn odd_budget_for_pairs_is_config_error() {
        let e = Config::from_toml_str("[strategy]\nbudget = 7\n").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        Config::from_toml_str("[strategy]\nname = \"max_entropy\"\nbudget = 7\n").unwrap();
    }

    #[test]
    fn round_trips_through_toml() {
        let c = Config::default().with_strategy(StrategyName::Bald);
        assert_eq!(Config::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }
}
