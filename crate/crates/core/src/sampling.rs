//! Reverse-process generation of missing triples.
//!
//! Standard mode starts from the support entities with no query edges and
//! resolves masked cells step by step. Repaint mode instead re-noises a known
//! graph at every step and merges it with the model's samples.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::Subgraph;
use crate::denoiser::{denoise, forward, DenoiserOutput, DenoiserParams};
use crate::diffusion::{forward_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::kg::{to_adjacency, AdjacencyState, EntityId, Graph, Triple, Vocab};
use crate::rng::{self, CellRng, Purpose};
use crate::training::ModelMode;

/// Default resolution threshold.
pub const DEFAULT_GAMMA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Standard,
    Repaint,
}

/// How a masked cell picked for resolution decides its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    /// Present iff the predicted probability exceeds `gamma`.
    Threshold,
    /// Present with the predicted probability.
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub gamma: f64,
    pub mode: SampleMode,
    pub resolution: Resolution,
    /// Timesteps whose states are recorded; `steps` is the empty start, `0` the result.
    pub snapshot_steps: Vec<usize>,
}

impl SamplerConfig {
    pub fn new(steps: usize) -> Self {
        SamplerConfig {
            steps,
            gamma: DEFAULT_GAMMA,
            mode: SampleMode::Standard,
            resolution: Resolution::Threshold,
            snapshot_steps: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::InvalidSteps(self.steps));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if let Some(&s) = self.snapshot_steps.iter().find(|&&s| s > self.steps) {
            return Err(Error::InvalidStep { t: s, total: self.steps });
        }
        Ok(())
    }

    fn check_schedule(&self, schedule: &NoiseSchedule) -> Result<()> {
        self.validate()?;
        if schedule.steps() != self.steps {
            return Err(Error::InvalidConfig(format!(
                "sampler uses {} steps but the schedule has {}",
                self.steps,
                schedule.steps()
            )));
        }
        Ok(())
    }
}

/// Recorded `(t, state)` pairs in sampling order (decreasing `t`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<(usize, AdjacencyState)>,
}

impl Trajectory {
    pub fn step_snapshots(&self) -> Vec<StepSnapshot> {
        self.snapshots
            .iter()
            .map(|(t, s)| StepSnapshot { step: *t, triples: s.to_triples() })
            .collect()
    }
}

/// Triples present at one timestep, possibly merged over subgraphs.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSnapshot {
    pub step: usize,
    pub triples: Vec<Triple>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    /// Sorted predicted triples, never containing a support (or known) triple.
    pub triples: Vec<Triple>,
    pub trajectory: Trajectory,
    /// Masked cells that were not offered a resolution at the final step.
    pub unresolved: usize,
}

fn require_mode(mode: ModelMode, expected: ModelMode) -> Result<()> {
    if mode != expected {
        return Err(Error::WrongCheckpointMode { expected: expected.as_str(), found: mode.as_str() });
    }
    Ok(())
}

/// One reverse transition `t -> t-1` applied in place to the non-frozen cells.
/// Returns the number of masked cells that stay pending without a resolution draw.
fn reverse_step(
    state: &mut AdjacencyState,
    frozen: &[bool],
    out: &DenoiserOutput,
    t: usize,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &CellRng,
) -> usize {
    let n = state.n();
    let nr = state.num_relations();
    let u = schedule.unmask_probability(t);
    let mut pending = 0;
    for i in 0..n {
        for j in 0..n {
            // a winning no-edge channel leaves every pending cell of the pair absent this step
            let suppress = out.argmax(i, j) == nr;
            for k in 0..nr {
                let idx = state.index(i, j, k);
                if frozen[idx] || state.get(i, j, k) || suppress {
                    continue;
                }
                if rng.uniform(Purpose::Unmask, t, i, j, k) >= u {
                    pending += 1;
                    continue;
                }
                let p = out.prob(i, j, k);
                let present = match cfg.resolution {
                    Resolution::Threshold => p > cfg.gamma,
                    Resolution::Bernoulli => rng.uniform(Purpose::Resolve, t, i, j, k) < p,
                };
                if present {
                    state.set(i, j, k, true);
                }
            }
        }
    }
    pending
}

fn record(trajectory: &mut Trajectory, cfg: &SamplerConfig, t: usize, state: &AdjacencyState) {
    if cfg.snapshot_steps.contains(&t) {
        trajectory.snapshots.push((t, state.clone()));
    }
}

/// Generates query edges over `entities` conditioned on `support`.
pub fn sample(
    support: &Graph,
    entities: &[EntityId],
    params: &DenoiserParams,
    mode: ModelMode,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &CellRng,
) -> Result<SampleOutput> {
    require_mode(mode, ModelMode::Conditional)?;
    cfg.check_schedule(schedule)?;
    let frozen = to_adjacency(support, entities)?;
    let mut state = AdjacencyState::empty(entities.to_vec(), params.config.n_rel);
    let mut trajectory = Trajectory::default();
    record(&mut trajectory, cfg, cfg.steps, &state);
    let mut unresolved = 0;
    for t in (1..=cfg.steps).rev() {
        let out = denoise(&state, support, t, params)?;
        unresolved = reverse_step(&mut state, frozen.cells(), &out, t, schedule, cfg, rng);
        record(&mut trajectory, cfg, t - 1, &state);
    }
    Ok(SampleOutput { triples: state.to_triples(), trajectory, unresolved })
}

/// Repaint-style completion with a whole-graph reconstruction model: known cells are
/// re-noised from `known` at every step, unknown cells come from the reverse model.
pub fn sample_repaint(
    known: &Graph,
    entities: &[EntityId],
    params: &DenoiserParams,
    mode: ModelMode,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &CellRng,
) -> Result<SampleOutput> {
    require_mode(mode, ModelMode::Reconstruction)?;
    cfg.check_schedule(schedule)?;
    let clean = to_adjacency(known, entities)?;
    let mask = clean.cells().to_vec();
    let noise_rng = CellRng::new(rng::derive_seed(rng.seed, &[Purpose::Repaint as u64]), rng.task);
    let mut state = forward_sample(&clean, cfg.steps, schedule, &noise_rng)?;
    let mut trajectory = Trajectory::default();
    record(&mut trajectory, cfg, cfg.steps, &state);
    let mut unresolved = 0;
    for t in (1..=cfg.steps).rev() {
        let (out, _) = forward(params, &state, t)?;
        unresolved = reverse_step(&mut state, &mask, &out, t, schedule, cfg, rng);
        let known_prev = forward_sample(&clean, t - 1, schedule, &noise_rng)?;
        for (idx, cell) in state.cells_mut().iter_mut().enumerate() {
            if mask[idx] {
                *cell = known_prev.cells()[idx];
            }
        }
        record(&mut trajectory, cfg, t - 1, &state);
    }
    let mut unknown = state.clone();
    for (cell, &m) in unknown.cells_mut().iter_mut().zip(&mask) {
        *cell &= !m;
    }
    Ok(SampleOutput { triples: unknown.to_triples(), trajectory, unresolved })
}

/// Union of per-subgraph predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub triples: Vec<Triple>,
    /// Snapshots merged over subgraphs, one per requested step.
    pub snapshots: Vec<StepSnapshot>,
    pub unresolved: usize,
}

/// Runs the sampler on every subgraph (in parallel) with the graph's induced support and
/// unions the results. In repaint mode the graph is the known part instead of a support.
pub fn predict(
    graph: &Graph,
    subgraphs: &[Subgraph],
    params: &DenoiserParams,
    mode: ModelMode,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Prediction> {
    let outputs: Vec<SampleOutput> = subgraphs
        .par_iter()
        .map(|sg| {
            let local = graph.induced(&sg.entities);
            let rng = CellRng::new(seed, sg.id as u64);
            match cfg.mode {
                SampleMode::Standard => sample(&local, &sg.entities, params, mode, schedule, cfg, &rng),
                SampleMode::Repaint => sample_repaint(&local, &sg.entities, params, mode, schedule, cfg, &rng),
            }
        })
        .collect::<Result<_>>()?;

    let mut triples = BTreeSet::new();
    let mut unresolved = 0;
    for out in &outputs {
        triples.extend(out.triples.iter().copied());
        unresolved += out.unresolved;
    }
    let mut snapshots = Vec::new();
    let mut steps = cfg.snapshot_steps.clone();
    steps.sort_unstable_by(|a, b| b.cmp(a));
    steps.dedup();
    for step in steps {
        let mut merged = BTreeSet::new();
        for out in &outputs {
            for (t, state) in &out.trajectory.snapshots {
                if *t == step {
                    merged.extend(state.to_triples());
                }
            }
        }
        snapshots.push(StepSnapshot { step, triples: merged.into_iter().collect() });
    }
    Ok(Prediction { triples: triples.into_iter().collect(), snapshots, unresolved })
}

/// Writes one labeled edge-list file per snapshot. Each file lists the nodes touched by an
/// edge as `# node` comment lines, then `head<TAB>relation<TAB>tail<TAB>flag` rows where the
/// flag is `correct`/`incorrect` against `truth`, or `unknown` without it.
pub fn export_snapshots(
    snapshots: &[StepSnapshot],
    vocab: &Vocab,
    truth: Option<&Graph>,
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if snapshots.is_empty() {
        return Ok(Vec::new());
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(snapshots.len());
    for snap in snapshots {
        let path = dir.join(format!("snapshot_t{:03}.tsv", snap.step));
        let mut text = format!("# step\t{}\n", snap.step);
        let nodes: BTreeSet<EntityId> = snap.triples.iter().flat_map(|t| [t.head, t.tail]).collect();
        for e in nodes {
            text.push_str(&format!("# node\t{}\n", vocab.entity_name(e).unwrap_or("?")));
        }
        for t in &snap.triples {
            let flag = match truth {
                Some(g) if g.contains(t) => "correct",
                Some(_) => "incorrect",
                None => "unknown",
            };
            text.push_str(&format!(
                "{}\t{}\t{}\t{flag}\n",
                vocab.entity_name(t.head).unwrap_or("?"),
                vocab.relation_name(t.relation).unwrap_or("?"),
                vocab.entity_name(t.tail).unwrap_or("?"),
            ));
        }
        let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        file.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
