//! FixMatch training step and loop with optional curriculum batch size,
//! labeled strong augmentation and curriculum pseudo labeling.

use gradcore::{Architecture, Graph, Mode, Model, Sgd, Tensor, Weights};
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::accounting::{utilization, IterationCounts, PassLedger, RunSummary, UtilizationReport};
use crate::augment::{strong_view, weak_augment, AugmentPolicy};
use crate::curricula::{cosine_lr, lambda_at, unlabeled_batch_size, CplState, ScheduleConfig};
use crate::dataio::{BatchCursor, ChannelStats, Dataset, SslSplit};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdConfig {
    pub tau: f64,
    pub cpl_enabled: bool,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            tau: 0.95,
            cpl_enabled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            ema_decay: 0.999,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Output channels of each conv block.
    pub widths: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { widths: vec![32, 64, 128] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub schedule: ScheduleConfig,
    pub threshold: ThresholdConfig,
    pub labeled_strong_aug: bool,
    /// Root seed; not read from configuration files.
    #[serde(skip)]
    pub seed: u64,
    pub eval_every: u64,
    pub target_accuracy: Option<f64>,
    /// Stop as soon as an evaluation reaches `target_accuracy`.
    pub stop_at_target: bool,
    pub optim: OptimConfig,
    pub model: ModelConfig,
    pub strong_aug: AugmentPolicy,
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            threshold: ThresholdConfig::default(),
            labeled_strong_aug: false,
            seed: 0,
            eval_every: 1024,
            target_accuracy: None,
            stop_at_target: false,
            optim: OptimConfig::default(),
            model: ModelConfig::default(),
            strong_aug: AugmentPolicy::strong(),
            eval_batch: 500,
        }
    }
}

impl TrainConfig {
    /// Sets the three curriculum flags at once.
    pub fn with_flags(mut self, cbs: bool, labeled_strong_aug: bool, cpl: bool) -> Self {
        self.schedule.cbs_enabled = cbs;
        self.labeled_strong_aug = labeled_strong_aug;
        self.threshold.cpl_enabled = cpl;
        self
    }

    /// `vanilla`, or the enabled flags joined by `+` (`cbs`, `lsa`, `cpl`).
    pub fn flags_label(&self) -> String {
        let mut parts = Vec::new();
        if self.schedule.cbs_enabled {
            parts.push("cbs");
        }
        if self.labeled_strong_aug {
            parts.push("lsa");
        }
        if self.threshold.cpl_enabled {
            parts.push("cpl");
        }
        if parts.is_empty() {
            "vanilla".into()
        } else {
            parts.join("+")
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        let err = |key: &str, message: String| Error::Config {
            key: key.into(),
            message,
        };
        if !(self.threshold.tau > 0.0 && self.threshold.tau <= 1.0) {
            return Err(err("threshold.tau", format!("{} outside (0, 1]", self.threshold.tau)));
        }
        if self.eval_every == 0 {
            return Err(err("eval_every", "must be at least 1".into()));
        }
        if let Some(a) = self.target_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(err("target_accuracy", format!("{a} outside [0, 1]")));
            }
        }
        if !(self.optim.lr > 0.0) {
            return Err(err("optim.lr", format!("{} must be positive", self.optim.lr)));
        }
        if !(0.0..1.0).contains(&self.optim.momentum) {
            return Err(err("optim.momentum", format!("{} outside [0, 1)", self.optim.momentum)));
        }
        if !(self.optim.weight_decay >= 0.0) {
            return Err(err("optim.weight_decay", format!("{} negative", self.optim.weight_decay)));
        }
        if !(0.0..1.0).contains(&self.optim.ema_decay) {
            return Err(err("optim.ema_decay", format!("{} outside [0, 1)", self.optim.ema_decay)));
        }
        if self.model.widths.is_empty() || self.model.widths.contains(&0) {
            return Err(err("model.widths", "need at least one positive width".into()));
        }
        if self.eval_batch == 0 {
            return Err(err("eval_batch", "must be at least 1".into()));
        }
        self.strong_aug.validate().map_err(|e| match e {
            Error::Config { key, message } => Error::Config {
                key: format!("strong_aug.{key}"),
                message,
            },
            other => other,
        })
    }

    pub fn architecture(&self, shape: [usize; 3], classes: usize) -> Architecture {
        Architecture::conv_stack(shape, &self.model.widths, classes)
    }
}

/// One JSONL record per iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub t: u64,
    pub u_t: usize,
    pub lambda: f64,
    pub lr: f64,
    pub n_confident: usize,
    pub n_correct_confident: usize,
    pub loss_s: f64,
    pub loss_u: f64,
    pub fwd_total: u64,
    pub bwd_total: u64,
}

impl StepRecord {
    pub fn counts(&self) -> IterationCounts {
        IterationCounts {
            t: self.t,
            u_t: self.u_t,
            n_confident: self.n_confident,
            n_correct_confident: self.n_correct_confident,
        }
    }
}

/// One JSONL record per evaluation of the EMA model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub t: u64,
    pub epoch_equivalent: f64,
    pub accuracy: f64,
}

/// Either kind of metrics line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricsLine {
    Step(StepRecord),
    Eval(EvalRecord),
}

pub fn write_jsonl<W: Write + ?Sized, S: Serialize>(out: &mut W, record: &S) -> Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Weak-view predictions and the confidence mask.
#[derive(Debug, Clone)]
pub struct PseudoBatch {
    pub weak_logits: Tensor<f32>,
    pub pseudo_labels: Vec<usize>,
    pub confidences: Vec<f64>,
    pub mask: Vec<bool>,
}

impl PseudoBatch {
    /// Softmax confidence and argmax of every row; `mask` is
    /// `confidence > thresholds[argmax]`.
    pub fn from_logits(weak_logits: Tensor<f32>, thresholds: &[f64]) -> Result<Self> {
        let shape = weak_logits.shape().to_vec();
        let (n, c) = (shape[0], shape.get(1).copied().unwrap_or(0));
        if shape.len() != 2 || c != thresholds.len() {
            return Err(Error::Eval(format!("logits {shape:?} for {} thresholds", thresholds.len())));
        }
        let mut pseudo_labels = Vec::with_capacity(n);
        let mut confidences = Vec::with_capacity(n);
        let mut mask = Vec::with_capacity(n);
        for row in weak_logits.data().chunks(c) {
            let (arg, &max) = row
                .iter()
                .enumerate()
                .fold((0, &f32::NEG_INFINITY), |best, (i, v)| if *v > *best.1 { (i, v) } else { best });
            if !max.is_finite() {
                return Err(Error::Eval("non-finite logits in the weak pass".into()));
            }
            let denom: f64 = row.iter().map(|&v| ((v - max) as f64).exp()).sum();
            let conf = 1.0 / denom;
            pseudo_labels.push(arg);
            confidences.push(conf);
            mask.push(conf > thresholds[arg]);
        }
        Ok(Self {
            weak_logits,
            pseudo_labels,
            confidences,
            mask,
        })
    }

    pub fn n_confident(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Pseudo-labels from a no-gradient pass of the live weights.
///
/// The pass normalizes with the statistics of the weak batch and folds them
/// into the running estimates, so weak views shape the evaluation statistics
/// even when every training-mode view is strongly augmented.
pub fn pseudo_label(model: &mut Model<f32>, weak_inputs: &Tensor<f32>, thresholds: &[f64]) -> Result<PseudoBatch> {
    let mut graph = Graph::no_grad();
    let x = graph.input(weak_inputs.clone());
    let fwd = model.forward(&mut graph, x, Mode::Train, Weights::Live)?;
    model.update_running_stats(&fwd.batch_stats)?;
    PseudoBatch::from_logits(graph.value(fwd.logits).clone(), thresholds)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub supervised: f32,
    pub unsupervised: f32,
    pub total: f32,
}

/// One optimization step on `[labeled; strong confident]`.
///
/// The loss is mean labeled cross-entropy plus `lambda_t` times the summed
/// cross-entropy of the confident strong views divided by `u_t`. Without
/// confident samples only the labeled batch is forwarded. The step runs
/// backward, folds batch statistics into the running estimates, applies the
/// optimizer at its current learning rate and updates the EMA shadow.
#[allow(clippy::too_many_arguments)]
pub fn fixmatch_step(
    model: &mut Model<f32>,
    optimizer: &mut Sgd<f32>,
    labeled: &Tensor<f32>,
    targets: &[usize],
    strong_confident: &Tensor<f32>,
    pseudo_labels: &[usize],
    u_t: usize,
    lambda_t: f64,
    ema_decay: f64,
) -> Result<StepLosses> {
    let l = targets.len();
    let n_conf = pseudo_labels.len();
    if l == 0 {
        return Err(Error::Eval("empty labeled batch".into()));
    }
    if n_conf > u_t {
        return Err(Error::Accounting(format!("{n_conf} confident samples out of {u_t}")));
    }
    let mut graph = Graph::new();
    let input = if n_conf > 0 {
        Tensor::concat_rows(&[labeled, strong_confident])?
    } else {
        labeled.clone()
    };
    let x = graph.input(input);
    let fwd = model.forward(&mut graph, x, Mode::Train, Weights::Live)?;
    let (loss, supervised, unsupervised) = if n_conf == 0 {
        let ls = graph.cross_entropy(fwd.logits, targets, None)?;
        (ls, graph.value(ls).item(), 0.0)
    } else {
        let lrows = graph.slice_rows(fwd.logits, 0, l)?;
        let ls = graph.cross_entropy(lrows, targets, None)?;
        let urows = graph.slice_rows(fwd.logits, l, l + n_conf)?;
        let lu = graph.cross_entropy_normalized(urows, pseudo_labels, None, u_t as f32)?;
        let weighted = graph.scale(lu, lambda_t as f32);
        let total = graph.add(ls, weighted)?;
        (total, graph.value(ls).item(), graph.value(lu).item())
    };
    let total = graph.value(loss).item();
    if !total.is_finite() {
        return Err(Error::Eval(format!("loss diverged to {total}")));
    }
    model.backward(&graph, loss)?;
    model.update_running_stats(&fwd.batch_stats)?;
    optimizer.step(model)?;
    model.ema_update(ema_decay as f32)?;
    Ok(StepLosses {
        supervised,
        unsupervised,
        total,
    })
}

/// Normalized images stacked into an `[n, c, h, w]` tensor.
pub fn stack_images(images: &[Vec<f32>], shape: [usize; 3]) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(images.len() * shape.iter().product::<usize>());
    images.iter().for_each(|i| data.extend_from_slice(i));
    Ok(Tensor::from_vec(&[images.len(), shape[0], shape[1], shape[2]], data)?)
}

/// Normalized test images ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct EvalSet {
    inputs: Vec<f32>,
    labels: Vec<usize>,
    shape: [usize; 3],
}

impl EvalSet {
    pub fn new(test: &Dataset, norm: &ChannelStats) -> Result<Self> {
        let mut inputs = Vec::with_capacity(test.images().len());
        let mut labels = Vec::with_capacity(test.len());
        for i in 0..test.len() {
            let Some(label) = test.label(i) else {
                return Err(Error::Eval(format!("test sample {i} has no label")));
            };
            let mut img = test.image(i).to_vec();
            norm.apply(&mut img);
            inputs.extend(img);
            labels.push(label);
        }
        Ok(Self {
            inputs,
            labels,
            shape: test.shape(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Top-1 accuracy in eval mode without augmentation.
pub fn evaluate(model: &Model<f32>, set: &EvalSet, weights: Weights, batch: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Eval("empty test set".into()));
    }
    let per = set.shape.iter().product::<usize>();
    let mut correct = 0usize;
    for start in (0..set.len()).step_by(batch.max(1)) {
        let end = (start + batch.max(1)).min(set.len());
        let x = Tensor::from_vec(
            &[end - start, set.shape[0], set.shape[1], set.shape[2]],
            set.inputs[start * per..end * per].to_vec(),
        )?;
        let logits = model.predict(&x, weights)?;
        if !logits.is_finite() {
            return Err(Error::Eval(format!("non-finite logits for test rows {start}..{end}")));
        }
        let c = logits.shape()[1];
        for (row, &y) in logits.data().chunks(c).zip(&set.labels[start..end]) {
            let arg = row
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                .0;
            correct += (arg == y) as usize;
        }
    }
    Ok(correct as f64 / set.len() as f64)
}

/// Mutable state of one training run (or one federated client).
#[derive(Debug, Clone)]
pub struct Learner {
    pub model: Model<f32>,
    pub optimizer: Sgd<f32>,
    pub cpl: CplState,
    pub ledger: PassLedger,
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
    labeled_cursor: BatchCursor,
    unlabeled_cursor: BatchCursor,
    seed: u64,
}

impl Learner {
    /// `visible` lists the unlabeled positions the cursor may draw from;
    /// `None` exposes the whole pool.
    pub fn new(
        cfg: &TrainConfig,
        data: &Dataset,
        labeled: Vec<usize>,
        unlabeled: Vec<usize>,
        visible: Option<Vec<usize>>,
        dataset_size: u64,
        seed: u64,
    ) -> Result<Self> {
        let arch = cfg.architecture(data.shape(), data.classes);
        let model = Model::new(arch, rng::derive_seed(seed, "model-init", 0, 0));
        Self::with_model(cfg, data, model, labeled, unlabeled, visible, dataset_size, seed)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_model(
        cfg: &TrainConfig,
        data: &Dataset,
        model: Model<f32>,
        labeled: Vec<usize>,
        unlabeled: Vec<usize>,
        visible: Option<Vec<usize>>,
        dataset_size: u64,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if labeled.is_empty() {
            return Err(Error::Split("no labeled samples".into()));
        }
        if let Some(&i) = labeled.iter().chain(&unlabeled).find(|&&i| i >= data.len()) {
            return Err(Error::SampleIndex { index: i, len: data.len() });
        }
        if let Some(&i) = labeled.iter().find(|&&i| data.label(i).is_none()) {
            return Err(Error::Split(format!("labeled sample {i} has no label")));
        }
        let optimizer = Self::fresh_optimizer(cfg, &model)?;
        let cpl = CplState::new(unlabeled.len(), data.classes, cfg.threshold.tau, cfg.threshold.cpl_enabled)?;
        let pool = visible.unwrap_or_else(|| (0..unlabeled.len()).collect());
        Ok(Self {
            labeled_cursor: BatchCursor::new((0..labeled.len()).collect(), rng::derive_seed(seed, "labeled-cursor", 0, 0)),
            unlabeled_cursor: BatchCursor::new(pool, rng::derive_seed(seed, "unlabeled-cursor", 0, 0)),
            model,
            optimizer,
            cpl,
            ledger: PassLedger::new(dataset_size),
            labeled,
            unlabeled,
            seed,
        })
    }

    fn fresh_optimizer(cfg: &TrainConfig, model: &Model<f32>) -> Result<Sgd<f32>> {
        Ok(Sgd::new(
            model,
            cfg.optim.lr as f32,
            cfg.optim.momentum as f32,
            cfg.optim.weight_decay as f32,
        )?)
    }

    /// Replaces the model and restarts the optimizer momentum.
    pub fn load_model(&mut self, cfg: &TrainConfig, model: Model<f32>) -> Result<()> {
        self.optimizer = Self::fresh_optimizer(cfg, &model)?;
        self.model = model;
        Ok(())
    }

    pub fn labeled(&self) -> &[usize] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[usize] {
        &self.unlabeled
    }

    pub fn visible_unlabeled(&self) -> usize {
        self.unlabeled_cursor.len()
    }

    /// Makes more unlabeled positions drawable and reshuffles.
    pub fn reveal(&mut self, positions: &[usize]) -> Result<()> {
        if let Some(&p) = positions.iter().find(|&&p| p >= self.unlabeled.len()) {
            return Err(Error::SampleIndex {
                index: p,
                len: self.unlabeled.len(),
            });
        }
        self.unlabeled_cursor.extend_pool(positions);
        Ok(())
    }

    /// Runs iteration `t` of the schedule.
    pub fn step(&mut self, cfg: &TrainConfig, data: &Dataset, norm: &ChannelStats, t: u64) -> Result<StepRecord> {
        let sched = &cfg.schedule;
        let shape = data.shape();
        let thresholds = self.cpl.thresholds();
        let u_t = unlabeled_batch_size(sched, t)?;
        let lambda = lambda_at(sched, u_t);
        let lr = cosine_lr(cfg.optim.lr, t, sched.total_iterations);

        let mut lab_images = Vec::with_capacity(sched.l);
        let mut targets = Vec::with_capacity(sched.l);
        for (j, p) in self.labeled_cursor.next_batch(sched.l).into_iter().enumerate() {
            let idx = self.labeled[p];
            let mut r = rng::stream(self.seed, "labeled-aug", t, j as u64);
            let mut img = if cfg.labeled_strong_aug {
                strong_view(data.image(idx), shape, &mut r, &cfg.strong_aug)
            } else {
                weak_augment(data.image(idx), shape, &mut r)
            };
            norm.apply(&mut img);
            lab_images.push(img);
            targets.push(data.label(idx).expect("checked at construction"));
        }
        let labeled = stack_images(&lab_images, shape)?;

        let positions = self.unlabeled_cursor.next_batch(u_t);
        let u_t = positions.len();
        let mut strong_images = Vec::new();
        let mut pseudo_targets = Vec::new();
        let mut n_correct = 0;
        if u_t > 0 {
            let weak: Vec<Vec<f32>> = positions
                .iter()
                .enumerate()
                .map(|(j, &p)| {
                    let mut r = rng::stream(self.seed, "weak", t, j as u64);
                    let mut img = weak_augment(data.image(self.unlabeled[p]), shape, &mut r);
                    norm.apply(&mut img);
                    img
                })
                .collect();
            let pseudo = pseudo_label(&mut self.model, &stack_images(&weak, shape)?, &thresholds)?;
            for (j, &p) in positions.iter().enumerate() {
                let idx = self.unlabeled[p];
                let class = pseudo.pseudo_labels[j];
                if pseudo.mask[j] {
                    let mut r = rng::stream(self.seed, "strong", t, j as u64);
                    let mut img = strong_view(data.image(idx), shape, &mut r, &cfg.strong_aug);
                    norm.apply(&mut img);
                    strong_images.push(img);
                    pseudo_targets.push(class);
                    n_correct += (data.label(idx) == Some(class)) as usize;
                }
                self.cpl.record(p, class, pseudo.confidences[j])?;
            }
        }
        let strong = stack_images(&strong_images, shape)?;
        self.optimizer.lr = lr as f32;
        let losses = fixmatch_step(
            &mut self.model,
            &mut self.optimizer,
            &labeled,
            &targets,
            &strong,
            &pseudo_targets,
            u_t,
            lambda,
            cfg.optim.ema_decay,
        )?;
        let counts = IterationCounts {
            t,
            u_t,
            n_confident: pseudo_targets.len(),
            n_correct_confident: n_correct,
        };
        self.ledger.record(targets.len(), counts)?;
        Ok(StepRecord {
            t,
            u_t,
            lambda,
            lr,
            n_confident: counts.n_confident,
            n_correct_confident: n_correct,
            loss_s: losses.supervised as f64,
            loss_u: losses.unsupervised as f64,
            fwd_total: self.ledger.forward_total,
            bwd_total: self.ledger.backward_total,
        })
    }
}

/// An evaluation together with the exact pass count at that point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub t: u64,
    pub passes: u64,
    pub epochs: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub flags: String,
    pub counts: Vec<IterationCounts>,
    pub evals: Vec<EvalPoint>,
    pub ledger: PassLedger,
    /// First evaluation that reached the configured target.
    pub target_hit: Option<EvalPoint>,
}

impl RunLog {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.evals.last().map(|e| e.accuracy)
    }

    /// Ledger passes at the first evaluation with accuracy ≥ `target`.
    pub fn passes_to_reach(&self, target: f64) -> Option<u64> {
        self.evals.iter().find(|e| e.accuracy >= target).map(|e| e.passes)
    }

    pub fn utilization(&self) -> Result<UtilizationReport> {
        utilization(&self.counts)
    }

    pub fn summary(&self) -> Result<RunSummary> {
        Ok(RunSummary {
            flags: self.flags.clone(),
            total_forward: self.ledger.forward_total,
            total_backward: self.ledger.backward_total,
            epochs: self.ledger.epochs(),
            total_utilization: if self.counts.is_empty() { None } else { self.utilization()?.total },
            epochs_to_target: self.target_hit.as_ref().map(|e| e.epochs),
        })
    }
}

/// Training data of a centralized run.
#[derive(Debug, Clone)]
pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub split: &'a SslSplit,
    pub norm: ChannelStats,
}

impl<'a> TrainData<'a> {
    /// Normalization statistics come from the training images.
    pub fn new(train: &'a Dataset, test: &'a Dataset, split: &'a SslSplit) -> Self {
        Self {
            train,
            test,
            split,
            norm: train.channel_stats(),
        }
    }
}

/// Drives `learner` over the schedule, writing JSONL and evaluating the EMA
/// model every `eval_every` iterations and after the last one. `before_step`
/// runs ahead of every iteration.
pub fn run_loop<W: Write + ?Sized>(
    cfg: &TrainConfig,
    data: &Dataset,
    norm: &ChannelStats,
    eval_set: &EvalSet,
    learner: &mut Learner,
    mut sink: Option<&mut W>,
    mut before_step: impl FnMut(u64, &mut Learner) -> Result<()>,
) -> Result<RunLog> {
    let total = cfg.schedule.total_iterations;
    let mut log = RunLog {
        flags: cfg.flags_label(),
        counts: Vec::with_capacity(total as usize),
        evals: Vec::new(),
        ledger: learner.ledger.clone(),
        target_hit: None,
    };
    for t in 0..total {
        before_step(t, learner)?;
        let rec = learner.step(cfg, data, norm, t)?;
        log.counts.push(rec.counts());
        if let Some(s) = sink.as_deref_mut() {
            write_jsonl(s, &rec)?;
        }
        if (t + 1) % cfg.eval_every == 0 || t + 1 == total {
            let accuracy = evaluate(&learner.model, eval_set, Weights::Ema, cfg.eval_batch)
                .map_err(|e| Error::Eval(format!("at iteration {t}: {e}")))?;
            let point = EvalPoint {
                t,
                passes: learner.ledger.total_passes(),
                epochs: learner.ledger.epochs(),
                accuracy,
            };
            if let Some(s) = sink.as_deref_mut() {
                write_jsonl(
                    s,
                    &EvalRecord {
                        t,
                        epoch_equivalent: point.epochs,
                        accuracy,
                    },
                )?;
            }
            log.evals.push(point.clone());
            if log.target_hit.is_none() && cfg.target_accuracy.is_some_and(|a| accuracy >= a) {
                log.target_hit = Some(point);
                if cfg.stop_at_target {
                    break;
                }
            }
        }
    }
    log.ledger = learner.ledger.clone();
    Ok(log)
}

/// Centralized training on one labeled/unlabeled split.
pub fn train<W: Write + ?Sized>(cfg: &TrainConfig, data: &TrainData, sink: Option<&mut W>) -> Result<RunLog> {
    let eval_set = EvalSet::new(data.test, &data.norm)?;
    let mut learner = Learner::new(
        cfg,
        data.train,
        data.split.labeled.clone(),
        data.split.unlabeled.clone(),
        None,
        data.split.distinct_samples() as u64,
        cfg.seed,
    )?;
    run_loop(cfg, data.train, &data.norm, &eval_set, &mut learner, sink, |_, _| Ok(()))
}
