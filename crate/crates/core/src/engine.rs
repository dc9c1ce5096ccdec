//! The acquisition loop.
//!
//! A round is split in two halves so that a human oracle can sit between
//! them: [`Engine::propose`] subsamples the pool, pairs and scores candidates
//! and returns the instances to label; [`Engine::complete`] reveals the
//! labels, trains on the labeled set plus this round's virtual instances and
//! evaluates. [`Engine::run_round`] chains both with an in-process oracle.

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::acquisition::{bald_score, mix_score, top_indices, select_top_pairs, BaseScore, PairCandidate};
use crate::autodiff::Tensor;
use crate::beta::beta_sample;
use crate::classifier::{LabeledBatch, MixedExample, MlpClassifier, SoftLabel};
use crate::config::{Acquisition, Augmentation, Config, Pipeline};
use crate::data::{Dataset, Pool};
use crate::error::{Error, Result};
use crate::policy::MixPolicy;
use crate::rng::{stream, Purpose};
use crate::stn::{train_stn_policy, warp_batch, AffineParams, ImageShape};

/// One row of the metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub labeled: usize,
    pub test_acc: f64,
    pub mean_virtual_entropy: Option<f64>,
    pub max_virtual_entropy: Option<f64>,
    pub mean_tau: Option<f64>,
    /// `τ*` of every selected pair.
    #[serde(default)]
    pub taus: Vec<f64>,
    pub strategy: String,
    pub seed: u64,
    pub wall_ms: u64,
}

/// A selected pair and the concentration its virtual instance will use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedPair {
    pub id_i: usize,
    pub id_j: usize,
    pub layer: usize,
    pub tau: f64,
}

/// An instance the oracle is asked to label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub instance_id: usize,
    /// Rank of the pair this instance belongs to, if pairs were selected.
    pub pair_id: Option<usize>,
    pub score: f64,
}

/// First half of a round: what to label and how the round will augment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    /// Index of the round being acquired (1-based).
    pub round: usize,
    pub queries: Vec<Query>,
    pub pairs: Vec<SelectedPair>,
    /// Warps for the STN pipeline, keyed by instance.
    pub warps: Vec<(usize, AffineParams)>,
    /// Look-ahead score of each selected virtual instance.
    pub virtual_scores: Vec<f64>,
    pub elapsed_ms: u64,
}

impl Proposal {
    pub fn ids(&self) -> Vec<usize> {
        self.queries.iter().map(|q| q.instance_id).collect()
    }
}

/// A mixed training instance, alive for one round only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirtualInstance {
    pub id_i: usize,
    pub id_j: usize,
    pub layer: usize,
    pub tau: f64,
    pub lambda: f64,
    pub label: SoftLabel,
}

/// A label source.
pub trait Oracle {
    fn annotate(&mut self, pool: &Pool, ids: &[usize]) -> Result<Vec<usize>>;
}

/// Reveals ground truth immediately.
#[derive(Clone, Copy, Debug, Default)]
pub struct SimulatedOracle;

impl Oracle for SimulatedOracle {
    fn annotate(&mut self, pool: &Pool, ids: &[usize]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|&i| {
                pool.hidden_label(i)
                    .ok_or_else(|| Error::contract(format!("unknown instance {i}")))
            })
            .collect()
    }
}

/// Checks the request, then asks `oracle` for labels.
pub fn query_oracle(oracle: &mut dyn Oracle, pool: &Pool, ids: &[usize]) -> Result<Vec<usize>> {
    let mut seen = HashSet::new();
    for &i in ids {
        if !seen.insert(i) {
            return Err(Error::contract(format!("instance {i} requested twice")));
        }
        if !pool.is_unlabeled(i) {
            return Err(Error::contract(format!("instance {i} is not unlabeled")));
        }
    }
    let labels = oracle.annotate(pool, ids)?;
    if labels.len() != ids.len() {
        return Err(Error::Oracle(format!("{} labels for {} ids", labels.len(), ids.len())));
    }
    Ok(labels)
}

/// Subsamples `pool_size` unlabeled ids (rounded down to even, capped by the
/// pool) and matches them into disjoint pairs through an independent shuffle.
pub fn pair_pool(unlabeled: &[usize], pool_size: usize, seed: u64, round: usize) -> Vec<(usize, usize)> {
    let m = pool_size.min(unlabeled.len()) / 2 * 2;
    let mut ids = unlabeled.to_vec();
    ids.shuffle(&mut stream(seed, round, Purpose::Pool, 0));
    ids.truncate(m);
    ids.shuffle(&mut stream(seed, round, Purpose::Pairing, 0));
    let (a, b) = ids.split_at(m / 2);
    a.iter().copied().zip(b.iter().copied()).collect()
}

/// Draws one λ per selected pair and attaches the mixed soft label.
pub fn build_virtual_set(pairs: &[SelectedPair], pool: &Pool, rng: &mut crate::rng::Rng) -> Result<Vec<VirtualInstance>> {
    pairs
        .iter()
        .map(|p| {
            let (yi, yj) = match (pool.revealed_label(p.id_i), pool.revealed_label(p.id_j)) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::contract("virtual instances need labeled sources")),
            };
            let lambda = beta_sample(p.tau, rng)?.lambda;
            Ok(VirtualInstance {
                id_i: p.id_i,
                id_j: p.id_j,
                layer: p.layer,
                tau: p.tau,
                lambda,
                label: SoftLabel::mixed(yi, yj, lambda)?,
            })
        })
        .collect()
}

/// Argmax accuracy with dropout off.
pub fn evaluate(classifier: &MlpClassifier, test: &LabeledBatch) -> Result<f64> {
    classifier.accuracy(&test.x, &test.y)
}

fn mean_max(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (Some(mean), Some(v.iter().copied().fold(f64::NEG_INFINITY, f64::max)))
}

/// Complete state of one seeded run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Engine {
    config: Config,
    pipeline: Pipeline,
    seed: u64,
    /// Completed acquisition rounds.
    round: usize,
    pool: Pool,
    classifier: MlpClassifier,
    policy: MixPolicy,
    metrics: Vec<RoundMetrics>,
}

impl Engine {
    /// Splits the dataset, initializes the classifier and runs round 0
    /// (training on the initial labeled set).
    pub fn new(config: &Config, dataset: Dataset, seed: u64) -> Result<Self> {
        config.validate()?;
        let start = Instant::now();
        let pipeline = config.pipeline();
        let d = &config.data;
        let widths = config.widths(&dataset);
        let pool = crate::data::split(dataset, d.n_init_labeled, d.n_test, d.balanced, seed)?;
        let classifier = Self::fresh_classifier(config, &widths, seed, 0)?;
        let policy = if pipeline.learned && pipeline.augmentation == Augmentation::Mixup {
            MixPolicy::learned(config.policy.hidden, seed)
        } else {
            MixPolicy::fixed(config.policy.fixed_tau)?
        };
        let mut engine = Self {
            config: config.clone(),
            pipeline,
            seed,
            round: 0,
            pool,
            classifier,
            policy,
            metrics: Vec::new(),
        };
        engine.train(&[], &[])?;
        let acc = evaluate(&engine.classifier, &engine.pool.test_batch())?;
        engine.metrics.push(RoundMetrics {
            round: 0,
            labeled: engine.pool.labeled().len(),
            test_acc: acc,
            mean_virtual_entropy: None,
            max_virtual_entropy: None,
            mean_tau: None,
            taus: Vec::new(),
            strategy: config.strategy.name.to_string(),
            seed,
            wall_ms: start.elapsed().as_millis() as u64,
        });
        Ok(engine)
    }

    fn fresh_classifier(config: &Config, widths: &[usize], seed: u64, round: usize) -> Result<MlpClassifier> {
        let mut rng = stream(seed, round, Purpose::Init, 0);
        Ok(MlpClassifier::new(widths, config.model.dropout, &mut rng)?
            .with_momentum(config.model.momentum)
            .with_batch_size(config.model.batch_size))
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn pipeline(&self) -> Pipeline {
        self.pipeline
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn pool(&self) -> &Pool {
        &self.pool
    }

    pub fn classifier(&self) -> &MlpClassifier {
        &self.classifier
    }

    pub fn policy(&self) -> &MixPolicy {
        &self.policy
    }

    pub fn metrics(&self) -> &[RoundMetrics] {
        &self.metrics
    }

    fn budget(&self) -> usize {
        self.config.strategy.budget
    }

    /// True once the configured rounds are done or the pool cannot fill the
    /// budget.
    pub fn is_finished(&self) -> bool {
        self.round >= self.config.run.rounds || self.pool.unlabeled().len() < self.budget()
    }

    fn image_shape(&self) -> Result<ImageShape> {
        self.pool
            .dataset()
            .image_shape()
            .ok_or_else(|| Error::Config("STN augmentation needs image data".into()))
    }

    /// Steps 1–6 of a round. `None` when the run is finished.
    pub fn propose(&mut self) -> Result<Option<Proposal>> {
        if self.is_finished() {
            return Ok(None);
        }
        let start = Instant::now();
        let r = self.round + 1;
        let mut p = match (self.pipeline.acquisition, self.pipeline.lookahead, self.pipeline.augmentation) {
            _ if self.budget() == 0 => Proposal {
                round: r,
                queries: Vec::new(),
                pairs: Vec::new(),
                warps: Vec::new(),
                virtual_scores: Vec::new(),
                elapsed_ms: 0,
            },
            (Acquisition::Random, _, _) => self.propose_random(r)?,
            (_, true, Augmentation::Mixup) => self.propose_lookahead_pairs(r)?,
            (_, true, Augmentation::Stn) => self.propose_stn(r)?,
            _ => self.propose_singles(r)?,
        };
        p.elapsed_ms = start.elapsed().as_millis() as u64;
        Ok(Some(p))
    }

    fn candidate_ids(&self, r: usize) -> Vec<usize> {
        let m = self.config.strategy.pool_size.min(self.pool.unlabeled().len());
        let mut ids = self.pool.unlabeled().to_vec();
        ids.shuffle(&mut stream(self.seed, r, Purpose::Pool, 0));
        ids.truncate(m);
        ids
    }

    fn draw_layer(&self, r: usize) -> usize {
        let layers = self
            .classifier
            .eligible_mix_layers(self.config.augmentation.mix_input_layer);
        let mut rng = stream(self.seed, r, Purpose::Layer, 0);
        layers[rng.random_range(0..layers.len())]
    }

    fn propose_random(&mut self, r: usize) -> Result<Proposal> {
        let mut ids = self.pool.unlabeled().to_vec();
        ids.shuffle(&mut stream(self.seed, r, Purpose::Random, 0));
        ids.truncate(self.budget());
        let queries = ids
            .into_iter()
            .map(|instance_id| Query {
                instance_id,
                pair_id: None,
                score: 0.0,
            })
            .collect();
        let mut p = Proposal {
            round: r,
            queries,
            pairs: Vec::new(),
            warps: Vec::new(),
            virtual_scores: Vec::new(),
            elapsed_ms: 0,
        };
        if self.pipeline.augmentation == Augmentation::Mixup {
            self.pair_after_selection(&mut p, r)?;
        }
        Ok(p)
    }

    fn individual_scores(&self, ids: &[usize], r: usize) -> Result<Vec<f64>> {
        let x = self.pool.rows(ids);
        match self.pipeline.acquisition {
            Acquisition::Bald => {
                let mut rng = stream(self.seed, r, Purpose::Bald, 0);
                let samples = self
                    .classifier
                    .mc_dropout_predict(&x, self.config.strategy.bald_samples, &mut rng)?;
                (0..ids.len())
                    .map(|i| bald_score(&samples.iter().map(|s| s.row_slice(i)).collect::<Vec<_>>()))
                    .collect()
            }
            a => {
                let base = a.base().unwrap_or(BaseScore::Entropy);
                let p = self.classifier.forward(&x)?;
                (0..ids.len()).map(|i| base.score(p.row_slice(i))).collect()
            }
        }
    }

    /// Top-B individuals; with mixup the selection is paired afterwards.
    fn propose_singles(&mut self, r: usize) -> Result<Proposal> {
        let ids = self.candidate_ids(r);
        let scores = self.individual_scores(&ids, r)?;
        let queries = top_indices(&scores, self.budget())
            .into_iter()
            .map(|i| Query {
                instance_id: ids[i],
                pair_id: None,
                score: scores[i],
            })
            .collect();
        let mut p = Proposal {
            round: r,
            queries,
            pairs: Vec::new(),
            warps: Vec::new(),
            virtual_scores: Vec::new(),
            elapsed_ms: 0,
        };
        if self.pipeline.augmentation == Augmentation::Mixup {
            self.pair_after_selection(&mut p, r)?;
        }
        Ok(p)
    }

    /// Matches already-selected instances randomly and fixes their `τ`.
    fn pair_after_selection(&mut self, p: &mut Proposal, r: usize) -> Result<()> {
        let mut ids = p.ids();
        ids.shuffle(&mut stream(self.seed, r, Purpose::Pairing, 0));
        let half = ids.len() / 2;
        let pairs: Vec<(usize, usize)> = ids[..half].iter().copied().zip(ids[half..].iter().copied()).collect();
        if pairs.is_empty() {
            return Ok(());
        }
        let k = self.draw_layer(r);
        let (hi, hj) = self.pair_features(&pairs, k)?;
        let taus = if self.pipeline.learned {
            let settings = self.config.policy_training();
            let mut rng = stream(self.seed, r, Purpose::Policy, 0);
            self.policy
                .train(&self.classifier, &hi, &hj, k, &settings, self.config.policy.amortized, &mut rng)?
                .tau_star
        } else {
            self.policy.infer_taus(&hi, &hj, k)?
        };
        let base = self.pipeline.acquisition.base().unwrap_or(BaseScore::Entropy);
        for (n, (&(a, b), &tau)) in pairs.iter().zip(&taus).enumerate() {
            let mut rng = stream(self.seed, r, Purpose::Score, n as u64);
            let s = mix_score(
                &self.classifier,
                hi.row_slice(n),
                hj.row_slice(n),
                k,
                tau,
                self.config.strategy.mc_samples,
                &mut rng,
                base,
            )?;
            p.virtual_scores.push(s);
            p.pairs.push(SelectedPair {
                id_i: a,
                id_j: b,
                layer: k,
                tau,
            });
            for q in &mut p.queries {
                if q.instance_id == a || q.instance_id == b {
                    q.pair_id = Some(n);
                }
            }
        }
        Ok(())
    }

    fn pair_features(&self, pairs: &[(usize, usize)], k: usize) -> Result<(Tensor, Tensor)> {
        let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        Ok((
            self.classifier.forward_to_layer(&self.pool.rows(&a), k)?,
            self.classifier.forward_to_layer(&self.pool.rows(&b), k)?,
        ))
    }

    /// Scores candidate pairs with InfoMixup look-ahead and keeps the best B/2.
    fn propose_lookahead_pairs(&mut self, r: usize) -> Result<Proposal> {
        if self.config.policy.reset_each_round {
            self.policy.reset();
        }
        let base = self.pipeline.acquisition.base().expect("validated");
        let pairs = pair_pool(self.pool.unlabeled(), self.config.strategy.pool_size, self.seed, r);
        let k = self.draw_layer(r);
        let (hi, hj) = self.pair_features(&pairs, k)?;
        let taus = {
            let settings = self.config.policy_training();
            let mut rng = stream(self.seed, r, Purpose::Policy, 0);
            self.policy
                .train(&self.classifier, &hi, &hj, k, &settings, self.config.policy.amortized, &mut rng)?
                .tau_star
        };
        let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let pa = self.classifier.forward(&self.pool.rows(&a))?;
        let pb = self.classifier.forward(&self.pool.rows(&b))?;
        let mut candidates = Vec::with_capacity(pairs.len());
        for (n, &(i, j)) in pairs.iter().enumerate() {
            let mut rng = stream(self.seed, r, Purpose::Score, n as u64);
            let s_m = mix_score(
                &self.classifier,
                hi.row_slice(n),
                hj.row_slice(n),
                k,
                taus[n],
                self.config.strategy.mc_samples,
                &mut rng,
                base,
            )?;
            let s_i = base.score(pa.row_slice(n))?;
            let s_j = base.score(pb.row_slice(n))?;
            candidates.push(PairCandidate::new(i, j, k, taus[n], [s_i, s_j, s_m]));
        }
        let chosen = select_top_pairs(&candidates, self.budget())?;
        let mut p = Proposal {
            round: r,
            queries: Vec::new(),
            pairs: Vec::new(),
            warps: Vec::new(),
            virtual_scores: Vec::new(),
            elapsed_ms: 0,
        };
        for (n, c) in chosen.iter().enumerate() {
            for id in [c.id_i, c.id_j] {
                p.queries.push(Query {
                    instance_id: id,
                    pair_id: Some(n),
                    score: c.total,
                });
            }
            p.pairs.push(SelectedPair {
                id_i: c.id_i,
                id_j: c.id_j,
                layer: c.layer,
                tau: c.tau,
            });
            p.virtual_scores.push(c.score_mix);
        }
        Ok(p)
    }

    /// InfoSTN: per-candidate warps, top-B singles by `H(x) + H(warp(x))`.
    fn propose_stn(&self, r: usize) -> Result<Proposal> {
        let shape = self.image_shape()?;
        let ids = self.candidate_ids(r);
        let x = self.pool.rows(&ids);
        let thetas: Vec<AffineParams> = if self.pipeline.learned {
            train_stn_policy(&self.classifier, &x, shape, &self.config.stn_training())?.theta
        } else {
            let mut rng = stream(self.seed, r, Purpose::Stn, 0);
            let scale = self.config.augmentation.stn_fixed_scale;
            (0..ids.len()).map(|_| AffineParams::random_small(scale, &mut rng)).collect()
        };
        let warped = warp_batch(&x, shape, &thetas)?;
        let p0 = self.classifier.forward(&x)?;
        let pw = self.classifier.forward(&warped)?;
        let mut totals = Vec::with_capacity(ids.len());
        let mut virt = Vec::with_capacity(ids.len());
        for i in 0..ids.len() {
            let hw = BaseScore::Entropy.score(pw.row_slice(i))?;
            totals.push(BaseScore::Entropy.score(p0.row_slice(i))? + hw);
            virt.push(hw);
        }
        let mut p = Proposal {
            round: r,
            queries: Vec::new(),
            pairs: Vec::new(),
            warps: Vec::new(),
            virtual_scores: Vec::new(),
            elapsed_ms: 0,
        };
        for i in top_indices(&totals, self.budget()) {
            p.queries.push(Query {
                instance_id: ids[i],
                pair_id: None,
                score: totals[i],
            });
            p.warps.push((ids[i], thetas[i]));
            p.virtual_scores.push(virt[i]);
        }
        Ok(p)
    }

    /// Steps 7–11: reveal labels (matched by id), train, evaluate.
    pub fn complete(&mut self, proposal: &Proposal, labels: &BTreeMap<usize, usize>) -> Result<RoundMetrics> {
        let start = Instant::now();
        if proposal.round != self.round + 1 {
            return Err(Error::contract(format!(
                "proposal for round {} but engine is at round {}",
                proposal.round,
                self.round + 1
            )));
        }
        let ids = proposal.ids();
        if labels.len() != ids.len() || ids.iter().any(|i| !labels.contains_key(i)) {
            return Err(Error::contract("labels must cover exactly the queried instances"));
        }
        let c = self.pool.classes();
        if let Some((id, y)) = labels.iter().find(|(_, &y)| y >= c) {
            return Err(Error::contract(format!("label {y} for instance {id} outside 0..{c}")));
        }
        for &id in &ids {
            if !self.pool.is_unlabeled(id) || self.pool.test().contains(&id) {
                return Err(Error::contract(format!("instance {id} cannot be labeled")));
            }
        }
        for &id in &ids {
            self.pool.reveal(id, labels[&id])?;
        }
        self.pool.check_invariants()?;
        self.round = proposal.round;
        if !self.config.model.warm_start {
            let widths = self.classifier.widths().to_vec();
            self.classifier = Self::fresh_classifier(&self.config, &widths, self.seed, self.round)?;
        }
        let mut extra = Vec::new();
        if self.pipeline.augmentation == Augmentation::Stn && self.config.augmentation.stn_virtual && !proposal.warps.is_empty() {
            let shape = self.image_shape()?;
            let src: Vec<usize> = proposal.warps.iter().map(|w| w.0).collect();
            let th: Vec<AffineParams> = proposal.warps.iter().map(|w| w.1).collect();
            let warped = warp_batch(&self.pool.rows(&src), shape, &th)?;
            for (n, &id) in src.iter().enumerate() {
                extra.push((warped.row_slice(n).to_vec(), labels[&id]));
            }
        }
        self.train(&proposal.pairs, &extra)?;
        let acc = evaluate(&self.classifier, &self.pool.test_batch())?;
        let (mean_v, max_v) = mean_max(&proposal.virtual_scores);
        let taus: Vec<f64> = proposal.pairs.iter().map(|p| p.tau).collect();
        let m = RoundMetrics {
            round: self.round,
            labeled: self.pool.labeled().len(),
            test_acc: acc,
            mean_virtual_entropy: mean_v,
            max_virtual_entropy: max_v,
            mean_tau: mean_max(&taus).0,
            taus,
            strategy: self.config.strategy.name.to_string(),
            seed: self.seed,
            wall_ms: proposal.elapsed_ms + start.elapsed().as_millis() as u64,
        };
        self.metrics.push(m.clone());
        Ok(m)
    }

    /// Epoch loop: X_M is rebuilt with fresh λ every epoch and discarded
    /// afterwards; `extra` rows (warped copies) join the labeled batch.
    fn train(&mut self, pairs: &[SelectedPair], extra: &[(Vec<f64>, usize)]) -> Result<()> {
        let mut batch = self.pool.labeled_batch();
        if !extra.is_empty() {
            let mut rows: Vec<&[f64]> = (0..batch.x.rows()).map(|i| batch.x.row_slice(i)).collect();
            rows.extend(extra.iter().map(|e| e.0.as_slice()));
            let x = Tensor::from_rows(&rows)?;
            batch.y.extend(extra.iter().map(|e| e.1));
            batch.x = x;
        }
        for epoch in 0..self.config.model.epochs {
            let mut vrng = stream(self.seed, self.round, Purpose::Virtual, epoch as u64);
            let virt = build_virtual_set(pairs, &self.pool, &mut vrng)?;
            let mixed: Vec<MixedExample<'_>> = virt
                .iter()
                .map(|v| MixedExample {
                    x_i: self.pool.features(v.id_i),
                    x_j: self.pool.features(v.id_j),
                    layer: v.layer,
                    label: v.label,
                })
                .collect();
            let mut trng = stream(self.seed, self.round, Purpose::Train, epoch as u64);
            self.classifier
                .train_epoch(&batch, &mixed, self.config.model.lr, &mut trng)?;
        }
        Ok(())
    }

    /// One full round with an in-process oracle; `None` when finished.
    pub fn run_round(&mut self, oracle: &mut dyn Oracle) -> Result<Option<RoundMetrics>> {
        let Some(p) = self.propose()? else {
            return Ok(None);
        };
        let ids = p.ids();
        let labels = query_oracle(oracle, &self.pool, &ids)?;
        let map = ids.into_iter().zip(labels).collect();
        self.complete(&p, &map).map(Some)
    }

    /// Runs rounds until finished.
    pub fn run_to_end(&mut self, oracle: &mut dyn Oracle) -> Result<&[RoundMetrics]> {
        while self.run_round(oracle)?.is_some() {}
        Ok(&self.metrics)
    }
}
