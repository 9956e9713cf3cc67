use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use difftsp_core::data::{load_tsv, DatasetBundle};
use difftsp_core::diffusion::make_schedule;
use difftsp_core::eval::{cwa_metrics, default_similarity, load_similarity, rs_powa_metrics, Assumption};
use difftsp_core::kg::{Graph, Triple};
use difftsp_core::sampling::{export_snapshots, predict};
use difftsp_core::training::{load_checkpoint, save_checkpoint, train_with, training_subgraphs};
use difftsp_core::Error;

use crate::config::{ConfigError, RunConfig};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_MISMATCH: u8 = 3;
pub const EXIT_RUNTIME: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Core(Error),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(
                Error::DatasetMismatch(_) | Error::CorruptCheckpoint(_) | Error::WrongCheckpointMode { .. },
            ) => EXIT_MISMATCH,
            CliError::Core(Error::InvalidConfig(_)) => EXIT_CONFIG,
            CliError::Core(_) | CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config: {e}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Core(Error::Io { path: path.into(), source: e }))
}

fn prepare_out(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::Core(Error::Io { path: cfg.out.clone(), source: e }))
}

fn echo(cfg: &RunConfig) {
    eprint!("# resolved config\n{}", cfg.resolved());
}

fn load_bundle(cfg: &RunConfig) -> Result<DatasetBundle, CliError> {
    Ok(DatasetBundle::load(&cfg.train_path, &cfg.valid_path, &cfg.test_path)?)
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    echo(cfg);
    prepare_out(cfg)?;
    write(&cfg.out.join("resolved_config.txt"), &cfg.resolved())?;
    let bundle = load_bundle(cfg)?;
    let mut log = String::new();
    let outcome = train_with(&bundle, &cfg.train, |e| {
        let valid = e.valid_f.map_or("none".to_string(), |f| format!("{f:.6}"));
        let line = format!("epoch={} loss={:.6} valid_f_tsp={valid}\n", e.epoch, e.mean_loss);
        eprint!("{line}");
        log.push_str(&line);
    })?;
    write(&cfg.out.join("train.log"), &log)?;
    save_checkpoint(&outcome.checkpoint, cfg.out.join("checkpoint.ckpt"))?;
    println!(
        "checkpoint={} epoch={} valid_f_tsp={}",
        cfg.out.join("checkpoint.ckpt").display(),
        outcome.checkpoint.epoch,
        outcome.checkpoint.valid_f
    );
    Ok(())
}

fn name_key(g: &Graph, t: &Triple) -> (String, String, String) {
    let v = g.vocab();
    (
        v.entity_name(t.head).unwrap_or_default().to_string(),
        v.relation_name(t.relation).unwrap_or_default().to_string(),
        v.entity_name(t.tail).unwrap_or_default().to_string(),
    )
}

/// Samples with the training and validation triples as support over the training partition.
pub fn sample(cfg: &RunConfig, checkpoint: Option<PathBuf>) -> Result<(), CliError> {
    echo(cfg);
    prepare_out(cfg)?;
    let bundle = load_bundle(cfg)?;
    let path = checkpoint.unwrap_or_else(|| cfg.out.join("checkpoint.ckpt"));
    let ckpt = load_checkpoint(&path, Some(&bundle.vocab))?;
    eprintln!(
        "# checkpoint {} mode={} dim={} blocks={} rce_layers={} steps={} epoch={}",
        path.display(),
        ckpt.mode.as_str(),
        ckpt.config.dim,
        ckpt.config.blocks,
        ckpt.config.rce_layers,
        ckpt.config.steps,
        ckpt.epoch
    );
    let support = Graph::from_triples(
        bundle.vocab.clone(),
        bundle.train.triples().iter().chain(bundle.valid.triples()).copied().collect(),
    )?;
    let subgraphs = training_subgraphs(&bundle.train, &ckpt.config);
    let mut sampler = cfg.sampler.clone();
    sampler.steps = ckpt.config.steps;
    sampler.validate()?;
    let schedule = make_schedule(sampler.steps)?;
    let pred = predict(&support, &subgraphs, &ckpt.params, ckpt.mode, &schedule, &sampler, cfg.train.seed)?;

    let rows: BTreeSet<(String, String, String)> = pred.triples.iter().map(|t| name_key(&support, t)).collect();
    let text: String = rows.iter().map(|(h, r, t)| format!("{h}\t{r}\t{t}\n")).collect();
    let out_path = cfg.out.join("predictions.tsv");
    write(&out_path, &text)?;
    let files = export_snapshots(&pred.snapshots, &bundle.vocab, Some(&bundle.test), cfg.out.join("snapshots"))?;
    println!("predictions={} triples={} snapshots={}", out_path.display(), rows.len(), files.len());
    Ok(())
}

pub fn eval(cfg: &RunConfig, predictions: Option<PathBuf>) -> Result<(), CliError> {
    echo(cfg);
    let bundle = load_bundle(cfg)?;
    let path = predictions.unwrap_or_else(|| cfg.out.join("predictions.tsv"));
    let rows = load_tsv(&path)?;
    let mut resolved = Vec::with_capacity(rows.len());
    let mut unresolved = BTreeSet::new();
    for (h, r, t) in &rows {
        match bundle.vocab.resolve(h, r, t) {
            Some(tr) => resolved.push(tr),
            None => {
                unresolved.insert((h.clone(), r.clone(), t.clone()));
            }
        }
    }
    let report = match cfg.assumption {
        Assumption::Cwa => cwa_metrics(&resolved, bundle.test.triples())?,
        Assumption::RsPowa => {
            let sim = match &cfg.similarity {
                Some(p) => load_similarity(p, &bundle.vocab, cfg.theta)?,
                None => default_similarity(&bundle.train)?.with_theta(cfg.theta),
            };
            rs_powa_metrics(&resolved, bundle.test.triples(), bundle.train.triples(), &sim)?
        }
    }
    .with_unresolved(unresolved.len());
    print!("{}", report.to_key_value());
    println!("unresolved={}", unresolved.len());
    println!("{}", report.to_json());
    Ok(())
}
