//! In-process federation: non-IID partitioning, FedAvg, and the training
//! phases around client unlearning (initial FL, post-training on the
//! remaining clients, retrain-from-scratch and finetune baselines).
//!
//! Clients of one round train concurrently; aggregation is the barrier.
//! Each client's batch order and optimizer state depend only on the run
//! seed, the phase and the client id, so results do not depend on thread
//! scheduling.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BatchSampler, Dataset};
use crate::nn::{cross_entropy, AdamState, Architecture, NetworkModel};
use crate::seed::{derive_seed, Stream};
use crate::tensor::ParameterSet;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub clients: usize,
    /// FL rounds for the initial model and for the retrain baseline.
    pub rounds: usize,
    pub post_train_rounds: usize,
    pub local_iterations: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dirichlet_alpha: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            clients: 5,
            rounds: 30,
            post_train_rounds: 10,
            local_iterations: 20,
            learning_rate: 1e-4,
            batch_size: 64,
            dirichlet_alpha: 1.0,
            seed: 0,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients < 2 {
            return Err(Error::InvalidArgument("federation needs at least 2 clients".into()));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidArgument("rounds must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.dirichlet_alpha > 0.0) {
            return Err(Error::InvalidArgument("dirichlet_alpha must be positive".into()));
        }
        Ok(())
    }
}

/// Splits item indices into `k` shards with per-class proportions drawn from
/// `Dir(alpha * 1_k)`. Empty shards are repaired by moving one item from the
/// largest shard.
pub fn dirichlet_partition(ds: &Dataset, k: usize, alpha: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidArgument("partition needs at least 2 shards".into()));
    }
    if ds.len() < k {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} items into {k} non-empty shards",
            ds.len()
        )));
    }
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("dirichlet alpha {alpha}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes()];
    for (i, &l) in ds.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); k];
    for idx in by_class.iter_mut().filter(|v| !v.is_empty()) {
        idx.shuffle(&mut rng);
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        let n = idx.len();
        let mut start = 0;
        let mut cum = 0.0;
        for (s, &d) in draws.iter().enumerate() {
            cum += if total > 0.0 { d / total } else { 1.0 / k as f64 };
            let end = if s + 1 == k {
                n
            } else {
                ((cum * n as f64).floor() as usize).clamp(start, n)
            };
            shards[s].extend_from_slice(&idx[start..end]);
            start = end;
        }
    }
    while let Some(empty) = shards.iter().position(Vec::is_empty) {
        let largest = (0..k)
            .max_by_key(|&s| (shards[s].len(), std::cmp::Reverse(s)))
            .expect("k >= 2");
        let item = shards[largest].pop().expect("largest shard is non-empty");
        shards[empty].push(item);
    }
    Ok(shards)
}

/// Normalized FedAvg weights `n_k / sum(n_j)` over included clients; the
/// excluded client gets weight 0.
pub fn aggregation_weights(sizes: &[usize], exclude: Option<usize>) -> Result<Vec<f64>> {
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument("client sizes must be positive".into()));
    }
    let total: usize = sizes
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(_, n)| n)
        .sum();
    if total == 0 {
        return Err(Error::InvalidArgument("every client is excluded".into()));
    }
    Ok(sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            if Some(i) == exclude {
                0.0
            } else {
                n as f64 / total as f64
            }
        })
        .collect())
}

/// Sample-size weighted mean of client parameters, optionally leaving one
/// client out. Each coordinate sums its weighted terms in sorted order, so
/// the result does not depend on client order.
pub fn fedavg_aggregate(
    models: &[&ParameterSet],
    sizes: &[usize],
    exclude: Option<usize>,
) -> Result<ParameterSet> {
    if models.is_empty() || models.len() != sizes.len() {
        return Err(Error::InvalidArgument(format!(
            "{} models with {} sizes",
            models.len(),
            sizes.len()
        )));
    }
    for m in &models[1..] {
        models[0].ensure_congruent(m)?;
    }
    let weights = aggregation_weights(sizes, exclude)?;
    let included: Vec<usize> = (0..models.len()).filter(|&i| Some(i) != exclude).collect();
    let mut out = models[0].zeros_like();
    let mut terms = Vec::with_capacity(included.len());
    for (name, entry) in out.iter_mut() {
        let sources: Vec<&[f64]> = included
            .iter()
            .map(|&i| models[i].get(name).expect("congruent").tensor.data())
            .collect();
        for (j, dst) in entry.tensor.data_mut().iter_mut().enumerate() {
            terms.clear();
            terms.extend(included.iter().zip(&sources).map(|(&i, s)| weights[i] * s[j]));
            terms.sort_by(f64::total_cmp);
            *dst = terms.iter().sum();
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub data: Arc<Dataset>,
    pub is_target: bool,
}

impl ClientState {
    pub fn samples(&self) -> usize {
        self.data.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub round: usize,
    pub params: ParameterSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    /// Mean over participating clients of their mean local loss.
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GlobalModel,
    pub log: Vec<RoundLog>,
    pub participants: Vec<usize>,
    pub elapsed: Duration,
}

/// Runs `iterations` Adam steps of cross-entropy on batches from `sampler`.
/// Returns the mean loss.
pub fn train_local(
    model: &mut NetworkModel,
    data: &Dataset,
    sampler: &mut BatchSampler,
    adam: &mut AdamState,
    iterations: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for _ in 0..iterations {
        let (x, y) = data.batch(&sampler.next_batch());
        let out = model.forward_cached(&x)?;
        let (loss, grad) = cross_entropy(&out.logits, &y)?;
        let grads = model.backward(Some(&grad), None)?;
        adam.step(model.params_mut(), &grads)?;
        total += loss;
    }
    Ok(if iterations == 0 { 0.0 } else { total / iterations as f64 })
}

#[derive(Debug, Clone)]
pub struct Federation {
    arch: Architecture,
    clients: Vec<ClientState>,
    cfg: FederationConfig,
}

impl Federation {
    pub fn new(arch: Architecture, clients: Vec<ClientState>, cfg: FederationConfig) -> Result<Self> {
        arch.validate()?;
        if clients.is_empty() {
            return Err(Error::InvalidArgument("no clients".into()));
        }
        if clients.iter().filter(|c| c.is_target).count() > 1 {
            return Err(Error::InvalidArgument("more than one target client".into()));
        }
        for (i, c) in clients.iter().enumerate() {
            if c.data.is_empty() {
                return Err(Error::EmptyDataset(format!("client {}", c.id)));
            }
            if c.data.dim() != arch.input_dim {
                return Err(Error::shape(
                    "layer 0",
                    format!("client {} has {}-wide samples, model expects {}", c.id, c.data.dim(), arch.input_dim),
                ));
            }
            if clients[..i].iter().any(|o| o.id == c.id) {
                return Err(Error::InvalidArgument(format!("duplicate client id {}", c.id)));
            }
        }
        Ok(Self { arch, clients, cfg })
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn target(&self) -> Option<&ClientState> {
        self.clients.iter().find(|c| c.is_target)
    }

    fn remaining(&self) -> Result<Vec<usize>> {
        if self.target().is_none() {
            return Err(Error::InvalidArgument("no target client is marked".into()));
        }
        let rest: Vec<usize> = (0..self.clients.len()).filter(|&i| !self.clients[i].is_target).collect();
        if rest.is_empty() {
            return Err(Error::InvalidArgument("no remaining clients".into()));
        }
        Ok(rest)
    }

    /// FedAvg over `participants` (indices into the client list).
    pub fn run_rounds(
        &self,
        initial: &ParameterSet,
        participants: &[usize],
        rounds: usize,
        stream: Stream,
    ) -> Result<TrainOutcome> {
        self.arch.param_layout().ensure_congruent(initial)?;
        let start = Instant::now();
        let mut states = participants
            .iter()
            .map(|&i| {
                let c = &self.clients[i];
                let sampler = BatchSampler::new(
                    c.data.len(),
                    self.cfg.batch_size,
                    derive_seed(self.cfg.seed, stream, c.id as u64),
                )?;
                Ok((c, sampler, AdamState::new(initial, self.cfg.learning_rate)))
            })
            .collect::<Result<Vec<_>>>()?;
        let sizes: Vec<usize> = states.iter().map(|(c, _, _)| c.samples()).collect();
        let mut global = initial.clone();
        let mut log = Vec::with_capacity(rounds);
        for round in 1..=rounds {
            let g = &global;
            let results = states
                .par_iter_mut()
                .map(|(client, sampler, adam)| {
                    let mut model = NetworkModel::new(self.arch.clone(), g.clone())?;
                    let loss = train_local(&mut model, &client.data, sampler, adam, self.cfg.local_iterations)?;
                    Ok((model.into_params(), loss))
                })
                .collect::<Result<Vec<_>>>()?;
            let locals: Vec<&ParameterSet> = results.iter().map(|(p, _)| p).collect();
            global = fedavg_aggregate(&locals, &sizes, None)?;
            let mean_loss = results.iter().map(|(_, l)| l).sum::<f64>() / results.len() as f64;
            log.push(RoundLog { round, mean_loss });
        }
        Ok(TrainOutcome {
            model: GlobalModel {
                round: rounds,
                params: global,
            },
            log,
            participants: participants.iter().map(|&i| self.clients[i].id).collect(),
            elapsed: start.elapsed(),
        })
    }

    /// FL over every client, producing the trained global model.
    pub fn fl_train(&self, initial: &ParameterSet) -> Result<TrainOutcome> {
        let all: Vec<usize> = (0..self.clients.len()).collect();
        self.run_rounds(initial, &all, self.cfg.rounds, Stream::Train)
    }

    /// FedAvg over the remaining clients starting from the unlearned model.
    pub fn post_train(&self, unlearned: &ParameterSet) -> Result<TrainOutcome> {
        let rest = self.remaining()?;
        self.run_rounds(unlearned, &rest, self.cfg.post_train_rounds, Stream::PostTrain)
    }

    /// Full FL from `initial` without the target client.
    pub fn retrain_baseline(&self, initial: &ParameterSet) -> Result<TrainOutcome> {
        let rest = self.remaining()?;
        self.run_rounds(initial, &rest, self.cfg.rounds, Stream::Retrain)
    }

    /// Post-training applied directly to the trained model.
    pub fn finetune_baseline(&self, trained: &ParameterSet) -> Result<TrainOutcome> {
        self.post_train(trained)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Provenance;
    use crate::tensor::{ParamEntry, ParamKind, Tensor};

    fn scalar(v: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("w", ParamEntry::new(ParamKind::Other, Tensor::new(vec![1], vec![v]).unwrap()))
            .unwrap();
        p
    }

    #[test]
    fn weighted_scalar_mean() {
        let (a, b) = (scalar(1.0), scalar(2.0));
        let out = fedavg_aggregate(&[&a, &b], &[20, 30], None).unwrap();
        assert!((out.get("w").unwrap().tensor.data()[0] - 1.6).abs() < 1e-15);
    }

    #[test]
    fn exclusion_weights() {
        let w = aggregation_weights(&[10, 20, 30], Some(0)).unwrap();
        assert_eq!(w[0], 0.0);
        assert!((w[1] - 0.4).abs() < 1e-15 && (w[2] - 0.6).abs() < 1e-15);
        assert!(aggregation_weights(&[10], Some(0)).is_err());
    }

    #[test]
    fn identical_models_aggregate_to_themselves() {
        let a = scalar(0.123);
        let out = fedavg_aggregate(&[&a, &a, &a], &[3, 5, 7], None).unwrap();
        assert!((out.get("w").unwrap().tensor.data()[0] - 0.123).abs() < 1e-15);
    }

    #[test]
    fn partition_small_cases() {
        let ds = Dataset::new(1, (0..5).map(f64::from).collect(), vec![0, 1, 0, 1, 0], 2, Provenance::Synthetic)
            .unwrap();
        assert!(dirichlet_partition(&ds, 6, 1.0, 0).is_err());
        let shards = dirichlet_partition(&ds, 5, 0.01, 3).unwrap();
        assert!(shards.iter().all(|s| s.len() == 1));
    }
}
