//! Weighted BCE objective, Adam updates, the epoch loop with early stopping,
//! and checkpoint persistence.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::data::{generate_tasks, partition_graph, DatasetBundle, Subgraph, Task};
use crate::denoiser::{backward, fuse_graphs, forward, DenoiserConfig, DenoiserOutput, DenoiserParams};
use crate::diffusion::{forward_sample, make_schedule, NoiseSchedule};
use crate::error::{Error, Result};
use crate::eval::{cwa_metrics, MetricsReport};
use crate::kg::{to_adjacency, AdjacencyState, FreqTable, Graph, Vocab};
use crate::rng::{self, CellRng, Purpose};
use crate::sampling::{predict, SampleMode, SamplerConfig, DEFAULT_GAMMA};

pub const MIN_WEIGHT: f64 = 0.1;
pub const MAX_WEIGHT: f64 = 100.0;

// stream tags for seed derivation
const TAG_INIT: u64 = 0x11;
const TAG_PARTITION: u64 = 0x12;
const TAG_TASKS: u64 = 0x13;
const TAG_ORDER: u64 = 0x14;
const TAG_STEP: u64 = 0x15;
const TAG_VALID: u64 = 0x16;

/// Whether the model was trained to complete a query from a support graph or to
/// reconstruct whole subgraphs (the latter drives repaint sampling).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelMode {
    Conditional,
    Reconstruction,
}

impl ModelMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelMode::Conditional => "conditional",
            ModelMode::Reconstruction => "reconstruction",
        }
    }

    fn code(&self) -> u8 {
        match self {
            ModelMode::Conditional => 0,
            ModelMode::Reconstruction => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ModelMode::Conditional),
            1 => Some(ModelMode::Reconstruction),
            _ => None,
        }
    }
}

/// Inverse-frequency channel weights, mean-normalized over observed channels and clipped.
///
/// With `absent_pairs = None` the no-edge channel is left out of the normalization and weighted 1.
pub fn loss_weights(freq: &FreqTable, absent_pairs: Option<u64>) -> Result<Vec<f64>> {
    if freq.relation_counts.iter().all(|&c| c == 0) {
        return Err(Error::DegenerateDataset("every relation has zero triples".into()));
    }
    let mut counts = freq.relation_counts.clone();
    if let Some(a) = absent_pairs {
        counts.push(a);
    }
    let total: u64 = counts.iter().sum();
    let raw: Vec<Option<f64>> = counts.iter().map(|&c| (c > 0).then(|| total as f64 / c as f64)).collect();
    let observed: Vec<f64> = raw.iter().flatten().copied().collect();
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let mut weights: Vec<f64> = raw
        .iter()
        .map(|r| match r {
            Some(v) => (v / mean).clamp(MIN_WEIGHT, MAX_WEIGHT),
            None => MAX_WEIGHT,
        })
        .collect();
    if absent_pairs.is_none() {
        weights.push(1.0);
    }
    Ok(weights)
}

/// Cell counts per channel over the dense views of a set of subgraphs.
pub fn subgraph_frequencies(subgraphs: &[Subgraph], n_rel: usize) -> FreqTable {
    let mut relation_counts = vec![0u64; n_rel];
    let mut absent = 0u64;
    for sg in subgraphs {
        let n = sg.entities.len() as u64;
        let mut pairs = std::collections::HashSet::new();
        for t in sg.graph.triples() {
            relation_counts[t.relation as usize] += 1;
            pairs.insert((t.head, t.tail));
        }
        absent += n * n - pairs.len() as u64;
    }
    FreqTable { relation_counts, absent_pairs: absent }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// One weight per channel, no-edge last.
    pub weights: Vec<f64>,
    /// Leave out real-relation cells already present in the support or the noisy query.
    pub exclude_known: bool,
}

impl LossConfig {
    pub fn unweighted(channels: usize) -> Self {
        LossConfig { weights: vec![1.0; channels], exclude_known: true }
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean weighted BCE over included cells and its gradient with respect to the logits.
pub fn masked_weighted_bce(
    output: &DenoiserOutput,
    target: &AdjacencyState,
    support: &Graph,
    noisy: &AdjacencyState,
    loss: &LossConfig,
) -> Result<(f64, Array2<f64>)> {
    let n = target.n();
    let nr = target.num_relations();
    let b = nr + 1;
    if output.n != n || output.channels() != b || !target.same_frame(noisy) || loss.weights.len() != b {
        return Err(Error::IncompatibleGraphs("loss inputs disagree on shape".into()));
    }
    let support = to_adjacency(support, target.entities())?;
    let mut included = vec![false; n * n * b];
    let mut count = 0usize;
    for i in 0..n {
        for j in 0..n {
            for k in 0..b {
                let known = k < nr && (support.get(i, j, k) || noisy.get(i, j, k));
                if !(loss.exclude_known && known) {
                    included[(i * n + j) * b + k] = true;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyLossSupport);
    }
    let scale = 1.0 / count as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros((n * n, b));
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for k in 0..b {
                if !included[row * b + k] {
                    continue;
                }
                let z = output.logits[[row, k]];
                let y = target.channel(i, j, k);
                let w = loss.weights[k];
                // -log p = softplus(-z), -log(1-p) = softplus(z)
                total += w * if y { softplus(-z) } else { softplus(z) };
                grad[[row, k]] = w * scale * (sigmoid(z) - if y { 1.0 } else { 0.0 });
            }
        }
    }
    Ok((total * scale, grad))
}

/// Adam with bias correction. Moments are stored at checkpoint (f32) precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: DenoiserParams,
    pub v: DenoiserParams,
    pub step: u64,
}

impl Adam {
    pub fn new(params: &DenoiserParams, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }

    pub fn update(&mut self, params: &mut DenoiserParams, grads: &DenoiserParams) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let lr = self.lr;
        let eps = self.eps;
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads.tensors());
        for ((((_, p), (_, m)), (_, v)), (_, g)) in tensors {
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
        params.round_to_f32();
        self.m.round_to_f32();
        self.v.round_to_f32();
    }
}

/// Draws `t` uniformly from `1..=T`.
pub fn sample_timestep(schedule: &NoiseSchedule, rng: &CellRng) -> usize {
    let u = rng.uniform(Purpose::Timestep, 0, 0, 0, 0);
    ((u * schedule.steps() as f64) as usize + 1).min(schedule.steps())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub t: usize,
    pub loss: f64,
}

/// Loss and parameter gradients for one task at a timestep and noise drawn from `rng`.
pub fn task_gradient(
    task: &Task,
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    loss: &LossConfig,
    rng: &CellRng,
) -> Result<(StepOutcome, DenoiserParams)> {
    let t = sample_timestep(schedule, rng);
    let clean = to_adjacency(&task.query, &task.entities)?;
    let noisy = forward_sample(&clean, t, schedule, rng)?;
    let fused = fuse_graphs(&task.support, &noisy)?;
    let (out, cache) = forward(params, &fused, t)?;
    let (value, dlogits) = masked_weighted_bce(&out, &clean, &task.support, &noisy, loss)?;
    let grads = backward(params, &cache, &dlogits);
    Ok((StepOutcome { t, loss: value }, grads))
}

/// One Adam update on one task.
pub fn train_step(
    task: &Task,
    params: &mut DenoiserParams,
    optimizer: &mut Adam,
    schedule: &NoiseSchedule,
    loss: &LossConfig,
    rng: &CellRng,
) -> Result<StepOutcome> {
    let (outcome, grads) = task_gradient(task, params, schedule, loss, rng)?;
    optimizer.update(params, &grads);
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Maximum entities per subgraph.
    pub cap: usize,
    pub rho: f64,
    /// Support/query splits per subgraph.
    pub n_s: usize,
    pub steps: usize,
    pub gamma: f64,
    pub dim: usize,
    pub blocks: usize,
    pub rce_layers: usize,
    pub mode: ModelMode,
    /// Inverse-frequency channel weights; `false` trains with plain BCE.
    pub weighted: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 50,
            patience: 10,
            seed: 0,
            cap: 256,
            rho: 0.8,
            n_s: 100,
            steps: 20,
            gamma: DEFAULT_GAMMA,
            dim: 16,
            blocks: 3,
            rce_layers: 2,
            mode: ModelMode::Conditional,
            weighted: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.patience == 0 || self.patience > self.epochs {
            return bad(format!("patience must lie in 1..={}, got {}", self.epochs, self.patience));
        }
        if self.cap < 2 {
            return bad(format!("subgraph cap must be at least 2, got {}", self.cap));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidRho(self.rho));
        }
        if self.n_s == 0 {
            return bad("n_s must be at least 1".into());
        }
        if self.steps == 0 {
            return Err(Error::InvalidSteps(self.steps));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(Error::InvalidDim(self.dim));
        }
        if self.blocks == 0 || self.rce_layers == 0 {
            return bad("blocks and rce_layers must be at least 1".into());
        }
        Ok(())
    }

    pub fn denoiser_config(&self, n_rel: usize) -> DenoiserConfig {
        DenoiserConfig { dim: self.dim, n_rel, blocks: self.blocks, rce_layers: self.rce_layers }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        let mut cfg = SamplerConfig::new(self.steps);
        cfg.gamma = self.gamma;
        cfg.mode = match self.mode {
            ModelMode::Conditional => SampleMode::Standard,
            ModelMode::Reconstruction => SampleMode::Repaint,
        };
        cfg
    }

    pub fn partition_seed(&self) -> u64 {
        rng::derive_seed(self.seed, &[TAG_PARTITION])
    }

    pub fn validation_seed(&self) -> u64 {
        rng::derive_seed(self.seed, &[TAG_VALID])
    }
}

/// Subgraphs of the training graph, partitioned with a seed derived from the run seed.
pub fn training_subgraphs(train: &Graph, cfg: &TrainConfig) -> Vec<Subgraph> {
    partition_graph(train, cfg.cap, cfg.partition_seed())
}

/// Fixed task list for a run. Subgraphs without triples are skipped. Reconstruction tasks
/// have an empty support and the whole subgraph as query.
pub fn build_tasks(subgraphs: &[Subgraph], cfg: &TrainConfig) -> Result<Vec<Task>> {
    let seed = rng::derive_seed(cfg.seed, &[TAG_TASKS]);
    let mut tasks = Vec::new();
    for sg in subgraphs.iter().filter(|sg| !sg.graph.is_empty()) {
        match cfg.mode {
            ModelMode::Conditional => tasks.extend(generate_tasks(sg, cfg.rho, cfg.n_s, seed)?),
            ModelMode::Reconstruction => {
                for i in 0..cfg.n_s {
                    tasks.push(Task {
                        support: Graph::empty(sg.graph.vocab().clone()),
                        query: sg.graph.clone(),
                        entities: sg.entities.clone(),
                        subgraph: sg.id,
                        seed: rng::derive_seed(seed, &[sg.id as u64, i as u64]),
                    });
                }
            }
        }
    }
    Ok(tasks)
}

/// Loss configuration for a run: inverse cell frequencies over the training subgraphs, or all ones.
pub fn run_loss_config(subgraphs: &[Subgraph], n_rel: usize, weighted: bool) -> Result<LossConfig> {
    if !weighted {
        return Ok(LossConfig::unweighted(n_rel + 1));
    }
    let freq = subgraph_frequencies(subgraphs, n_rel);
    Ok(LossConfig { weights: loss_weights(&freq, Some(freq.absent_pairs))?, exclude_known: true })
}

/// Samples with the training graph as support over the training subgraphs and scores the
/// union against `target` under CWA.
pub fn evaluate_split(
    params: &DenoiserParams,
    mode: ModelMode,
    train: &Graph,
    subgraphs: &[Subgraph],
    target: &Graph,
    cfg: &TrainConfig,
) -> Result<MetricsReport> {
    let schedule = make_schedule(cfg.steps)?;
    let pred = predict(train, subgraphs, params, mode, &schedule, &cfg.sampler_config(), cfg.validation_seed())?;
    cwa_metrics(&pred.triples, target.triples())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub valid_f: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub mode: ModelMode,
    pub config: TrainConfig,
    pub n_rel: usize,
    pub fingerprint: [u8; 32],
    pub params: DenoiserParams,
    pub optimizer: Adam,
    /// Epoch (1-based) the parameters come from.
    pub epoch: usize,
    /// Validation F of these parameters, NaN when the run had no validation split.
    pub valid_f: f64,
}

impl Checkpoint {
    pub fn verify(&self, vocab: &Vocab) -> Result<()> {
        if vocab.num_relations() != self.n_rel || vocab_fingerprint(vocab) != self.fingerprint {
            return Err(Error::DatasetMismatch("vocabulary fingerprint differs from the checkpoint".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Full training run: epochs over all tasks in seeded order, validation after each epoch,
/// best-validation parameters kept (the latest among ties), stop after `patience` epochs
/// without strict improvement.
/// Without a validation split every epoch runs and the last parameters are kept.
pub fn train(bundle: &DatasetBundle, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(bundle, cfg, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(bundle: &DatasetBundle, cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    cfg.validate()?;
    if bundle.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n_rel = bundle.vocab.num_relations();
    let schedule = make_schedule(cfg.steps)?;
    let subgraphs = training_subgraphs(&bundle.train, cfg);
    let tasks = build_tasks(&subgraphs, cfg)?;
    let loss = run_loss_config(&subgraphs, n_rel, cfg.weighted)?;
    log::info!(
        "{} subgraphs, {} tasks, channel weights {:?}",
        subgraphs.len(),
        tasks.len(),
        loss.weights
    );

    let mut params = DenoiserParams::init(cfg.denoiser_config(n_rel), rng::derive_seed(cfg.seed, &[TAG_INIT]));
    params.round_to_f32();
    let mut optimizer = Adam::new(&params, cfg.lr);
    let fingerprint = vocab_fingerprint(&bundle.vocab);
    let snapshot = |params: &DenoiserParams, optimizer: &Adam, epoch: usize, valid_f: f64| Checkpoint {
        mode: cfg.mode,
        config: cfg.clone(),
        n_rel,
        fingerprint,
        params: params.clone(),
        optimizer: optimizer.clone(),
        epoch,
        valid_f,
    };

    let mut best: Option<Checkpoint> = None;
    let mut since_best = 0;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, &[TAG_ORDER, epoch as u64]));
        let epoch_seed = rng::derive_seed(cfg.seed, &[TAG_STEP, epoch as u64]);
        let mut total = 0.0;
        for &ti in &order {
            let task = &tasks[ti];
            let step_rng = CellRng::new(epoch_seed, task.seed);
            total += train_step(task, &mut params, &mut optimizer, &schedule, &loss, &step_rng)?.loss;
        }
        let mean_loss = if tasks.is_empty() { 0.0 } else { total / tasks.len() as f64 };
        let valid_f = if bundle.valid.is_empty() {
            None
        } else {
            Some(evaluate_split(&params, cfg.mode, &bundle.train, &subgraphs, &bundle.valid, cfg)?.f_tsp)
        };
        let entry = EpochLog { epoch, mean_loss, valid_f };
        log::info!("epoch {epoch} loss {mean_loss:.6} valid_f {valid_f:?}");
        on_epoch(&entry);
        log.push(entry);

        match valid_f {
            Some(f) => {
                let best_f = best.as_ref().map(|b| b.valid_f);
                if best_f.is_none_or(|b| f > b) {
                    best = Some(snapshot(&params, &optimizer, epoch, f));
                    since_best = 0;
                } else {
                    // a tie keeps the later parameters but does not count as improvement
                    if best_f == Some(f) {
                        best = Some(snapshot(&params, &optimizer, epoch, f));
                    }
                    since_best += 1;
                    if since_best >= cfg.patience {
                        break;
                    }
                }
            }
            None => best = Some(snapshot(&params, &optimizer, epoch, f64::NAN)),
        }
    }
    let checkpoint = best.expect("at least one epoch runs");
    Ok(TrainOutcome { checkpoint, log })
}

/// Content hash of the entity and relation name lists.
pub fn vocab_fingerprint(vocab: &Vocab) -> [u8; 32] {
    let mut h = Sha256::new();
    for (tag, names) in [(b'E', vocab.entities()), (b'R', vocab.relations())] {
        h.update([tag]);
        h.update((names.len() as u64).to_le_bytes());
        for name in names {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
        }
    }
    h.finalize().into()
}

const MAGIC: &[u8; 8] = b"DTSPCKPT";
const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn tensors(&mut self, params: &DenoiserParams) {
        for (_, t) in params.tensors() {
            for &v in t.iter() {
                self.0.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::CorruptCheckpoint("file is truncated".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::CorruptCheckpoint("size overflows".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn tensors(&mut self, params: &mut DenoiserParams) -> Result<()> {
        for (_, t) in params.tensors_mut() {
            let bytes = self.take(t.len() * 4)?;
            for (v, chunk) in t.iter_mut().zip(bytes.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
            }
        }
        Ok(())
    }
}

/// Serializes a checkpoint: magic, version, header, tensor table, f32 payload, SHA-256 trailer.
pub fn checkpoint_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let c = &ckpt.config;
    let mut w = Writer(MAGIC.to_vec());
    w.u32(VERSION);
    w.u8(ckpt.mode.code());
    w.u8(c.weighted as u8);
    for v in [c.dim, c.steps, c.blocks, c.rce_layers, ckpt.n_rel, c.n_s, c.cap, c.epochs, c.patience, ckpt.epoch] {
        w.u64(v as u64);
    }
    w.u64(c.seed);
    for v in [c.gamma, c.rho, c.lr, ckpt.valid_f, ckpt.optimizer.lr] {
        w.f64(v);
    }
    w.u64(ckpt.optimizer.step);
    w.0.extend_from_slice(&ckpt.fingerprint);
    let tensors = ckpt.params.tensors();
    w.u32(tensors.len() as u32);
    for (name, t) in &tensors {
        w.u32(name.len() as u32);
        w.0.extend_from_slice(name.as_bytes());
        w.u32(t.nrows() as u32);
        w.u32(t.ncols() as u32);
    }
    w.tensors(&ckpt.params);
    w.tensors(&ckpt.optimizer.m);
    w.tensors(&ckpt.optimizer.v);
    let digest: [u8; 32] = Sha256::digest(&w.0).into();
    w.0.extend_from_slice(&digest);
    w.0
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::CorruptCheckpoint("missing magic bytes".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
    }
    let digest: [u8; 32] = Sha256::digest(body).into();
    if digest != trailer {
        return Err(Error::CorruptCheckpoint("checksum mismatch (truncated or modified file)".into()));
    }
    let mode = ModelMode::from_code(r.u8()?).ok_or_else(|| Error::CorruptCheckpoint("unknown mode".into()))?;
    let weighted = r.u8()? != 0;
    let mut sizes = [0usize; 10];
    for s in &mut sizes {
        *s = r.usize()?;
    }
    let [dim, steps, blocks, rce_layers, n_rel, n_s, cap, epochs, patience, epoch] = sizes;
    let seed = r.u64()?;
    let (gamma, rho, lr, valid_f, opt_lr) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let opt_step = r.u64()?;
    let fingerprint: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let config = TrainConfig { lr, epochs, patience, seed, cap, rho, n_s, steps, gamma, dim, blocks, rce_layers, mode, weighted };
    config.validate().map_err(|e| Error::CorruptCheckpoint(format!("stored hyperparameters invalid: {e}")))?;

    let mut params = DenoiserParams::zeros(config.denoiser_config(n_rel));
    let count = r.u32()? as usize;
    let expected = params.tensors();
    if count != expected.len() {
        return Err(Error::CorruptCheckpoint(format!("{count} tensors, expected {}", expected.len())));
    }
    for (name, t) in &expected {
        let len = r.u32()? as usize;
        let stored = r.take(len)?;
        let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
        if stored != name.as_bytes() || (rows, cols) != t.dim() {
            return Err(Error::CorruptCheckpoint(format!("tensor {name} has an unexpected name or shape")));
        }
    }
    drop(expected);
    r.tensors(&mut params)?;
    let mut optimizer = Adam::new(&params, opt_lr);
    optimizer.step = opt_step;
    r.tensors(&mut optimizer.m)?;
    r.tensors(&mut optimizer.v)?;
    if r.pos != body.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    Ok(Checkpoint { mode, config, n_rel, fingerprint, params, optimizer, epoch, valid_f })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(ckpt)).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint; with `vocab` given, also checks it was trained on that vocabulary.
pub fn load_checkpoint(path: impl AsRef<Path>, vocab: Option<&Vocab>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt = parse_checkpoint(&bytes)?;
    if let Some(v) = vocab {
        ckpt.verify(v)?;
    }
    Ok(ckpt)
}
