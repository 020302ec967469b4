//! Federated training over non-iid clients and streaming arrival of
//! unlabeled data.

use gradcore::{Model, Tensor, Weights};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::accounting::{PassLedger, RunSummary};
use crate::dataio::{ChannelStats, Dataset};
use crate::engine::{evaluate, run_loop, write_jsonl, EvalSet, Learner, RunLog, TrainConfig, TrainData};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederatedConfig {
    pub n_clients: usize,
    pub n_groups: usize,
    pub clients_per_round: usize,
    pub rounds: u64,
    pub local_iterations: u64,
    pub labeled_per_client: usize,
    /// Share of each client's unlabeled shard drawn from its group's class block.
    pub home_fraction: f64,
    /// Run the sampled clients of a round on separate threads.
    pub parallel: bool,
    /// Root seed; not read from configuration files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for FederatedConfig {
    fn default() -> Self {
        Self {
            n_clients: 100,
            n_groups: 4,
            clients_per_round: 4,
            rounds: 50,
            local_iterations: 64,
            labeled_per_client: 4,
            home_fraction: 0.8,
            parallel: true,
            seed: 0,
        }
    }
}

impl FederatedConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, message: String| Error::Config {
            key: format!("federated.{key}"),
            message,
        };
        if self.n_groups == 0 {
            return Err(err("n_groups", "must be at least 1".into()));
        }
        if self.n_clients % self.n_groups != 0 {
            return Err(err(
                "n_clients",
                format!("{} clients not divisible into {} groups", self.n_clients, self.n_groups),
            ));
        }
        if self.clients_per_round != self.n_groups {
            return Err(err(
                "clients_per_round",
                format!("must equal n_groups ({}), one client per group", self.n_groups),
            ));
        }
        if self.labeled_per_client == 0 {
            return Err(err("labeled_per_client", "must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.home_fraction) {
            return Err(err("home_fraction", format!("{} outside [0, 1]", self.home_fraction)));
        }
        Ok(())
    }

    pub fn clients_per_group(&self) -> usize {
        self.n_clients / self.n_groups
    }
}

/// Data shards of one client plus its persistent training state.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub group_id: usize,
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    /// Created the first time the client is sampled; keeps its pseudo-label
    /// state and cursors between rounds.
    pub learner: Option<Learner>,
}

/// Classes `[g·C/G, (g+1)·C/G)` form the block of group `g`.
pub fn class_block(group: usize, groups: usize, classes: usize) -> std::ops::Range<usize> {
    group * classes / groups..(group + 1) * classes / groups
}

fn group_of_class(class: usize, groups: usize, classes: usize) -> usize {
    (0..groups)
        .find(|&g| class_block(g, groups, classes).contains(&class))
        .unwrap_or(groups - 1)
}

/// Splits the dataset into disjoint, exhaustive client shards.
///
/// Each block's samples are shuffled; the first `home_fraction` go to the
/// block's own group and the rest are dealt round-robin to the other groups.
/// Within a group, home and away samples are dealt round-robin to its
/// clients. Labeled shards are drawn uniformly from each client's shard.
pub fn partition_noniid(dataset: &Dataset, cfg: &FederatedConfig) -> Result<Vec<ClientState>> {
    cfg.validate()?;
    let n = dataset.len();
    if n < cfg.n_clients {
        return Err(Error::Federated(format!("{n} samples for {} clients", cfg.n_clients)));
    }
    let (groups, classes) = (cfg.n_groups, dataset.classes.max(1));
    let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); groups];
    for i in 0..n {
        let g = match dataset.label(i) {
            Some(c) => group_of_class(c, groups, classes),
            None => i % groups,
        };
        blocks[g].push(i);
    }
    let mut home: Vec<Vec<usize>> = vec![Vec::new(); groups];
    let mut away: Vec<Vec<usize>> = vec![Vec::new(); groups];
    for (g, block) in blocks.iter_mut().enumerate() {
        block.shuffle(&mut rng::stream(cfg.seed, "partition-block", 0, g as u64));
        let keep = if groups == 1 {
            block.len()
        } else {
            (block.len() as f64 * cfg.home_fraction).round() as usize
        };
        home[g].extend_from_slice(&block[..keep]);
        let others: Vec<usize> = (0..groups).filter(|&o| o != g).collect();
        for (k, &i) in block[keep..].iter().enumerate() {
            away[others[k % others.len()]].push(i);
        }
    }
    let per_group = cfg.clients_per_group();
    let mut clients = Vec::with_capacity(cfg.n_clients);
    for g in 0..groups {
        let mut shards: Vec<Vec<usize>> = vec![Vec::new(); per_group];
        let mut a = std::mem::take(&mut away[g]);
        a.shuffle(&mut rng::stream(cfg.seed, "partition-away", 0, g as u64));
        for (k, &i) in home[g].iter().enumerate() {
            shards[k % per_group].push(i);
        }
        for (k, &i) in a.iter().enumerate() {
            shards[(home[g].len() + k) % per_group].push(i);
        }
        for (k, mut unlabeled) in shards.into_iter().enumerate() {
            let client_id = g * per_group + k;
            unlabeled.sort_unstable();
            let mut r = rng::stream(cfg.seed, "partition-labeled", 0, client_id as u64);
            let candidates: Vec<usize> = unlabeled.iter().copied().filter(|&i| dataset.label(i).is_some()).collect();
            if candidates.len() < cfg.labeled_per_client {
                return Err(Error::Federated(format!(
                    "client {client_id} has {} labeled candidates, {} needed",
                    candidates.len(),
                    cfg.labeled_per_client
                )));
            }
            let mut labeled: Vec<usize> = candidates.choose_multiple(&mut r, cfg.labeled_per_client).copied().collect();
            labeled.sort_unstable();
            clients.push(ClientState {
                client_id,
                group_id: g,
                labeled,
                unlabeled,
                learner: None,
            });
        }
    }
    Ok(clients)
}

fn mean_tensors(parts: &[&Tensor<f32>]) -> Tensor<f32> {
    let mut out = parts[0].clone();
    out.clear_grad();
    let k = parts.len() as f64;
    let mut vals = vec![0f32; parts.len()];
    for (j, v) in out.data_mut().iter_mut().enumerate() {
        for (slot, p) in vals.iter_mut().zip(parts) {
            *slot = p.data()[j];
        }
        // Sorting makes the sum independent of model order.
        vals.sort_unstable_by(f32::total_cmp);
        *v = (vals.iter().map(|&x| x as f64).sum::<f64>() / k) as f32;
    }
    out
}

/// Unweighted elementwise mean of parameters, EMA shadows and normalization
/// statistics.
pub fn fedavg(models: &[&Model<f32>]) -> Result<Model<f32>> {
    let first = *models
        .first()
        .ok_or_else(|| Error::Federated("no models to average".into()))?;
    for m in &models[1..] {
        first.check_congruent(m)?;
    }
    let mut out = first.clone();
    for i in 0..first.params().len() {
        out.params_mut()[i] = mean_tensors(&models.iter().map(|m| &m.params()[i]).collect::<Vec<_>>());
        out.ema_params_mut()[i] = mean_tensors(&models.iter().map(|m| &m.ema_params()[i]).collect::<Vec<_>>());
    }
    for i in 0..first.buffers().len() {
        out.buffers_mut()[i] = mean_tensors(&models.iter().map(|m| &m.buffers()[i]).collect::<Vec<_>>());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundRecord {
    pub round: u64,
    pub sampled_clients: Vec<usize>,
    pub global_accuracy: f64,
    pub cumulative_epochs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedLog {
    pub flags: String,
    pub rounds: Vec<RoundRecord>,
    /// Ledger passes after each round.
    pub passes: Vec<u64>,
    pub ledger: PassLedger,
    pub target_hit: Option<RoundRecord>,
    /// Confident samples and drawn unlabeled samples over all clients.
    pub confident_total: u64,
    pub drawn_total: u64,
}

impl FederatedLog {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.rounds.last().map(|r| r.global_accuracy)
    }

    pub fn total_utilization(&self) -> Option<f64> {
        (self.drawn_total > 0).then(|| self.confident_total as f64 / self.drawn_total as f64)
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            flags: self.flags.clone(),
            total_forward: self.ledger.forward_total,
            total_backward: self.ledger.backward_total,
            epochs: self.ledger.epochs(),
            total_utilization: self.total_utilization(),
            epochs_to_target: self.target_hit.as_ref().map(|r| r.cumulative_epochs),
        }
    }

    pub fn passes_to_reach(&self, target: f64) -> Option<u64> {
        self.rounds
            .iter()
            .zip(&self.passes)
            .find(|(r, _)| r.global_accuracy >= target)
            .map(|(_, &p)| p)
    }
}

/// One client's local work in a round.
fn client_round(
    train_cfg: &TrainConfig,
    data: &Dataset,
    norm: &ChannelStats,
    client: &mut ClientState,
    global: &Model<f32>,
    first_t: u64,
    local_iterations: u64,
    dataset_size: u64,
    root_seed: u64,
) -> Result<ClientOutcome> {
    let learner = match client.learner.as_mut() {
        Some(l) => {
            l.load_model(train_cfg, global.clone())?;
            l
        }
        None => client.learner.insert(Learner::with_model(
            train_cfg,
            data,
            global.clone(),
            client.labeled.clone(),
            client.unlabeled.clone(),
            None,
            dataset_size,
            rng::derive_seed(root_seed, "client", client.client_id as u64, 0),
        )?),
    };
    learner.ledger = PassLedger::new(dataset_size);
    let (mut confident, mut drawn) = (0, 0);
    for k in 0..local_iterations {
        let rec = learner.step(train_cfg, data, norm, first_t + k)?;
        confident += rec.n_confident as u64;
        drawn += rec.u_t as u64;
    }
    Ok(ClientOutcome {
        model: learner.model.clone(),
        ledger: learner.ledger.clone(),
        confident,
        drawn,
    })
}

struct ClientOutcome {
    model: Model<f32>,
    ledger: PassLedger,
    confident: u64,
    drawn: u64,
}

/// Rounds of local training on sampled clients followed by averaging.
///
/// The curriculum schedule spans `rounds · local_iterations` global
/// iterations. One client per group is sampled per round. With
/// `target_accuracy` and `stop_at_target` set, training stops at the first
/// round whose global EMA accuracy reaches the target.
pub fn run_federated<W: Write + ?Sized>(
    fed: &FederatedConfig,
    train_cfg: &TrainConfig,
    data: &TrainData,
    mut sink: Option<&mut W>,
) -> Result<FederatedLog> {
    fed.validate()?;
    let mut cfg = train_cfg.clone();
    cfg.schedule.total_iterations = (fed.rounds * fed.local_iterations).max(1);
    cfg.validate()?;
    let train_ds = data.train;
    let dataset_size = train_ds.len() as u64;
    let mut clients = partition_noniid(train_ds, fed)?;
    let eval_set = EvalSet::new(data.test, &data.norm)?;
    let arch = cfg.architecture(train_ds.shape(), train_ds.classes);
    let mut global = Model::<f32>::new(arch, rng::derive_seed(fed.seed, "model-init", 0, 0));
    let mut log = FederatedLog {
        flags: cfg.flags_label(),
        rounds: Vec::new(),
        passes: Vec::new(),
        ledger: PassLedger::new(dataset_size),
        target_hit: None,
        confident_total: 0,
        drawn_total: 0,
    };
    let per_group = fed.clients_per_group();
    for round in 0..fed.rounds {
        let sampled: Vec<usize> = (0..fed.n_groups)
            .map(|g| g * per_group + rng::stream(fed.seed, "sample-clients", round, g as u64).gen_range(0..per_group))
            .collect();
        let first_t = round * fed.local_iterations;
        let mut picked: Vec<&mut ClientState> = clients.iter_mut().filter(|c| sampled.contains(&c.client_id)).collect();
        let run = |c: &mut ClientState| {
            client_round(
                &cfg,
                train_ds,
                &data.norm,
                c,
                &global,
                first_t,
                fed.local_iterations,
                dataset_size,
                fed.seed,
            )
        };
        let results: Vec<Result<ClientOutcome>> = if fed.parallel {
            std::thread::scope(|s| {
                let handles: Vec<_> = picked.iter_mut().map(|c| s.spawn(move || run(c))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(Error::Federated("client thread panicked".into()))))
                    .collect()
            })
        } else {
            picked.iter_mut().map(|c| run(c)).collect()
        };
        let results: Vec<ClientOutcome> = results.into_iter().collect::<Result<_>>()?;
        global = fedavg(&results.iter().map(|o| &o.model).collect::<Vec<_>>())?;
        for o in &results {
            log.ledger.merge(&o.ledger);
            log.confident_total += o.confident;
            log.drawn_total += o.drawn;
        }
        let accuracy = evaluate(&global, &eval_set, Weights::Ema, cfg.eval_batch)
            .map_err(|e| Error::Eval(format!("after round {round}: {e}")))?;
        let rec = RoundRecord {
            round,
            sampled_clients: sampled,
            global_accuracy: accuracy,
            cumulative_epochs: log.ledger.epochs(),
        };
        if let Some(s) = sink.as_deref_mut() {
            write_jsonl(s, &rec)?;
        }
        log.rounds.push(rec.clone());
        log.passes.push(log.ledger.total_passes());
        if log.target_hit.is_none() && cfg.target_accuracy.is_some_and(|a| accuracy >= a) {
            log.target_hit = Some(rec);
            if cfg.stop_at_target {
                break;
            }
        }
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamPlan {
    pub n_chunks: usize,
    /// Share of the unlabeled pool visible from the start.
    pub initial_fraction: f64,
}

impl Default for StreamPlan {
    fn default() -> Self {
        Self {
            n_chunks: 10,
            initial_fraction: 0.1,
        }
    }
}

impl StreamPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_chunks == 0 {
            return Err(Error::Config {
                key: "stream.n_chunks".into(),
                message: "must be at least 1".into(),
            });
        }
        if !(self.initial_fraction > 0.0 && self.initial_fraction <= 1.0) {
            return Err(Error::Config {
                key: "stream.initial_fraction".into(),
                message: format!("{} outside (0, 1]", self.initial_fraction),
            });
        }
        Ok(())
    }

    /// Cumulative visible counts after each chunk; the last equals `pool`.
    pub fn chunk_ends(&self, pool: usize) -> Vec<usize> {
        let first = ((self.initial_fraction * pool as f64).ceil() as usize).min(pool);
        let rest = pool - first;
        let later = self.n_chunks.saturating_sub(1).max(1);
        let mut ends = vec![first];
        for k in 1..self.n_chunks {
            ends.push(first + (k * rest).div_ceil(later));
        }
        if let Some(last) = ends.last_mut() {
            *last = pool;
        }
        ends
    }

    /// Iteration at which chunk `k ≥ 1` becomes visible: `⌈k·T/n⌉`.
    pub fn reveal_iteration(&self, k: usize, total: u64) -> u64 {
        (k as u64 * total).div_ceil(self.n_chunks as u64)
    }

    /// Visible pool size at iteration `t`.
    pub fn visible_at(&self, t: u64, total: u64, pool: usize) -> usize {
        let ends = self.chunk_ends(pool);
        let k = (1..self.n_chunks).filter(|&k| self.reveal_iteration(k, total) <= t).count();
        ends[k]
    }
}

/// Seeded shuffle of the unlabeled positions in which every prefix is class
/// balanced: per-class shuffles interleaved round-robin.
pub fn balanced_order(data: &Dataset, unlabeled: &[usize], seed: u64) -> Vec<usize> {
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); data.classes + 1];
    for (p, &i) in unlabeled.iter().enumerate() {
        let b = data.label(i).unwrap_or(data.classes);
        buckets[b].push(p);
    }
    for (b, bucket) in buckets.iter_mut().enumerate() {
        bucket.shuffle(&mut rng::stream(seed, "stream-order", 0, b as u64));
    }
    let mut class_order: Vec<usize> = (0..buckets.len()).collect();
    class_order.shuffle(&mut rng::stream(seed, "stream-order", 1, 0));
    let longest = buckets.iter().map(Vec::len).max().unwrap_or(0);
    let mut order = Vec::with_capacity(unlabeled.len());
    for r in 0..longest {
        for &b in &class_order {
            if let Some(&p) = buckets[b].get(r) {
                order.push(p);
            }
        }
    }
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamLog {
    pub run: RunLog,
    /// `(t, visible)` at every expansion, starting with t = 0.
    pub visibility: Vec<(u64, usize)>,
}

/// Centralized training where the unlabeled pool arrives in chunks. The
/// schedule runs over the global iteration count without resets.
pub fn run_streaming<W: Write + ?Sized>(
    cfg: &TrainConfig,
    plan: &StreamPlan,
    data: &TrainData,
    sink: Option<&mut W>,
) -> Result<StreamLog> {
    plan.validate()?;
    let unlabeled = data.split.unlabeled.clone();
    let order = balanced_order(data.train, &unlabeled, rng::derive_seed(cfg.seed, "stream", 0, 0));
    let ends = plan.chunk_ends(order.len());
    let total = cfg.schedule.total_iterations;
    let eval_set = EvalSet::new(data.test, &data.norm)?;
    let mut learner = Learner::new(
        cfg,
        data.train,
        data.split.labeled.clone(),
        unlabeled,
        Some(order[..ends[0]].to_vec()),
        data.split.distinct_samples() as u64,
        cfg.seed,
    )?;
    let mut visibility = vec![(0, ends[0])];
    let mut next_chunk = 1;
    let run = run_loop(cfg, data.train, &data.norm, &eval_set, &mut learner, sink, |t, l| {
        while next_chunk < plan.n_chunks && plan.reveal_iteration(next_chunk, total) <= t {
            l.reveal(&order[ends[next_chunk - 1]..ends[next_chunk]])?;
            visibility.push((t, l.visible_unlabeled()));
            next_chunk += 1;
        }
        Ok(())
    })?;
    Ok(StreamLog { run, visibility })
}
