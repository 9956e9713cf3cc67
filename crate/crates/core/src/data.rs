//! Dataset ingestion, overlapping subgraph partitioning and support/query task generation.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::kg::{build_vocab, EntityId, Graph, Triple, Vocab};
use crate::rng;

pub type NamedTriple = (String, String, String);

/// Reads a headerless TAB-separated triple file.
pub fn load_tsv(path: impl AsRef<Path>) -> Result<Vec<NamedTriple>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&text, path)
}

/// Parses TSV text; `origin` is only used in error messages.
pub fn parse_tsv(text: &str, origin: impl AsRef<Path>) -> Result<Vec<NamedTriple>> {
    let mut out = Vec::new();
    for (idx, line) in text.split('\n').enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: origin.as_ref().to_path_buf(),
                line: idx + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: origin.as_ref().to_path_buf(),
                line: idx + 1,
                message: "empty field".into(),
            });
        }
        out.push((fields[0].to_owned(), fields[1].to_owned(), fields[2].to_owned()));
    }
    Ok(out)
}

/// Train/valid/test graphs over one shared vocabulary.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub vocab: Arc<Vocab>,
    pub train: Graph,
    pub valid: Graph,
    pub test: Graph,
}

impl DatasetBundle {
    /// Builds the bundle; vocabulary ids follow first occurrence in train, then valid, then test.
    pub fn from_named(train: &[NamedTriple], valid: &[NamedTriple], test: &[NamedTriple]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let all: Vec<NamedTriple> = train.iter().chain(valid).chain(test).cloned().collect();
        let vocab = Arc::new(build_vocab(&all)?);
        let resolve = |raw: &[NamedTriple]| -> Result<Graph> {
            let triples = raw
                .iter()
                .map(|(h, r, t)| vocab.resolve(h, r, t).expect("vocab built from these names"))
                .collect();
            Graph::from_triples(vocab.clone(), triples)
        };
        let bundle = DatasetBundle {
            train: resolve(train)?,
            valid: resolve(valid)?,
            test: resolve(test)?,
            vocab: vocab.clone(),
        };
        for (a, b, name) in [
            (&bundle.train, &bundle.valid, "train/valid"),
            (&bundle.train, &bundle.test, "train/test"),
            (&bundle.valid, &bundle.test, "valid/test"),
        ] {
            if let Some(t) = a.triples().iter().find(|t| b.contains(t)) {
                return Err(Error::DegenerateDataset(format!(
                    "{name} splits overlap, e.g. {:?}",
                    (
                        vocab.entity_name(t.head).unwrap_or("?"),
                        vocab.relation_name(t.relation).unwrap_or("?"),
                        vocab.entity_name(t.tail).unwrap_or("?")
                    )
                )));
            }
        }
        Ok(bundle)
    }

    pub fn load(train: impl AsRef<Path>, valid: impl AsRef<Path>, test: impl AsRef<Path>) -> Result<Self> {
        Self::from_named(&load_tsv(train)?, &load_tsv(valid)?, &load_tsv(test)?)
    }
}

/// A bounded entity subset with its induced triples.
#[derive(Debug, Clone)]
pub struct Subgraph {
    pub id: usize,
    pub entities: Vec<EntityId>,
    pub graph: Graph,
}

impl Subgraph {
    pub fn from_entities(id: usize, parent: &Graph, entities: Vec<EntityId>) -> Self {
        let graph = parent.induced(&entities);
        Subgraph { id, entities, graph }
    }
}

/// Covers every vocabulary entity with BFS-grown, possibly overlapping subgraphs of at most `cap` entities.
///
/// Seeds are the least-covered entities, ties broken by a seeded priority.
pub fn partition_graph(graph: &Graph, cap: usize, seed: u64) -> Vec<Subgraph> {
    assert!(cap >= 2, "subgraph cap must be at least 2");
    let n = graph.vocab().num_entities();
    let mut order: Vec<EntityId> = (0..n as EntityId).collect();
    order.sort_by_key(|&e| (rng::hash_key(seed, &[e as u64]), e));

    let mut coverage = vec![0u32; n];
    let mut stamp = vec![usize::MAX; n];
    let mut subgraphs = Vec::new();
    let mut cursor = 0;
    loop {
        while cursor < n && coverage[order[cursor] as usize] > 0 {
            cursor += 1;
        }
        if cursor == n {
            break;
        }
        let root = order[cursor];
        let id = subgraphs.len();
        let mut members = vec![root];
        stamp[root as usize] = id;
        let mut frontier = VecDeque::from([root]);
        'grow: while let Some(e) = frontier.pop_front() {
            let neighbours = graph.outgoing(e).map(|t| t.tail).chain(graph.incoming(e).map(|t| t.head));
            for nb in neighbours {
                if members.len() >= cap {
                    break 'grow;
                }
                if stamp[nb as usize] != id {
                    stamp[nb as usize] = id;
                    members.push(nb);
                    frontier.push_back(nb);
                }
            }
        }
        for &e in &members {
            coverage[e as usize] += 1;
        }
        subgraphs.push(Subgraph::from_entities(id, graph, members));
    }
    subgraphs
}

/// How much of a graph a set of subgraphs can see.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub entities_covered: usize,
    pub entities_total: usize,
    pub triples_covered: usize,
    pub triples_total: usize,
}

impl CoverageReport {
    pub fn triple_ratio(&self) -> f64 {
        if self.triples_total == 0 {
            1.0
        } else {
            self.triples_covered as f64 / self.triples_total as f64
        }
    }
}

/// Counts entities in some subgraph and triples whose endpoints share a subgraph.
pub fn coverage(graph: &Graph, subgraphs: &[Subgraph]) -> CoverageReport {
    let n = graph.vocab().num_entities();
    let mut homes: Vec<Vec<usize>> = vec![Vec::new(); n];
    for sg in subgraphs {
        for &e in &sg.entities {
            homes[e as usize].push(sg.id);
        }
    }
    let triples_covered = graph
        .triples()
        .iter()
        .filter(|t| {
            let a = &homes[t.head as usize];
            homes[t.tail as usize].iter().any(|s| a.contains(s))
        })
        .count();
    CoverageReport {
        entities_covered: homes.iter().filter(|h| !h.is_empty()).count(),
        entities_total: n,
        triples_covered,
        triples_total: graph.len(),
    }
}

/// One support/query split of a subgraph.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub support: Graph,
    pub query: Graph,
    pub entities: Vec<EntityId>,
    pub subgraph: usize,
    pub seed: u64,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Number of support triples for a relation stratum of size `n_r`.
pub fn support_quota(n_r: usize, rho: f64) -> usize {
    if n_r == 1 {
        1
    } else {
        round_half_up(rho * n_r as f64).min(n_r)
    }
}

/// Stratified split: per relation, a shuffled `round(rho * n_r)` triples go to support.
pub fn relation_balanced_split(subgraph: &Subgraph, rho: f64, seed: u64) -> Result<Task> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidRho(rho));
    }
    let graph = &subgraph.graph;
    let mut rng = rng::stream(seed, &[]);
    let mut support = Vec::new();
    let mut query = Vec::new();
    for r in 0..graph.vocab().num_relations() as u32 {
        let mut stratum: Vec<Triple> = graph.relation_triples(r).copied().collect();
        if stratum.is_empty() {
            continue;
        }
        stratum.shuffle(&mut rng);
        let quota = support_quota(stratum.len(), rho);
        query.extend_from_slice(&stratum[quota..]);
        stratum.truncate(quota);
        support.extend(stratum);
    }
    let vocab = graph.vocab().clone();
    Ok(Task {
        support: Graph::from_triples(vocab.clone(), support)?,
        query: Graph::from_triples(vocab, query)?,
        entities: subgraph.entities.clone(),
        subgraph: subgraph.id,
        seed,
    })
}

/// `n_s` independent splits with per-task seeds derived from `(seed, subgraph id, index)`.
pub fn generate_tasks(subgraph: &Subgraph, rho: f64, n_s: usize, seed: u64) -> Result<Vec<Task>> {
    if n_s == 0 {
        return Err(Error::InvalidConfig("number of task repeats must be at least 1".into()));
    }
    (0..n_s)
        .map(|i| {
            let task_seed = rng::derive_seed(seed, &[subgraph.id as u64, i as u64]);
            relation_balanced_split(subgraph, rho, task_seed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(ne: usize, nr: usize) -> Arc<Vocab> {
        Arc::new(
            Vocab::from_names(
                (0..ne).map(|i| format!("e{i}")).collect(),
                (0..nr).map(|i| format!("r{i}")).collect(),
            )
            .unwrap(),
        )
    }

    #[test]
    fn parses_tsv_lines() {
        let rows = parse_tsv("a\tr\tb\n", "mem").unwrap();
        assert_eq!(rows, vec![("a".into(), "r".into(), "b".into())]);
        let rows = parse_tsv("a\tr\tb\r\n\r\nc\ts\td", "mem").unwrap();
        assert_eq!(rows.len(), 2);
        match parse_tsv("a\tr\n", "mem") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        match parse_tsv("a\tr\tb\nx\ty\tz\tw\n", "mem") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_tsv("/nonexistent/file.tsv"), Err(Error::Io { .. })));
    }

    #[test]
    fn bundle_rejects_overlapping_splits() {
        let t = vec![("a".to_string(), "r".to_string(), "b".to_string())];
        assert!(matches!(DatasetBundle::from_named(&t, &t, &[]), Err(Error::DegenerateDataset(_))));
    }

    fn chain(ids: std::ops::Range<u32>) -> Vec<Triple> {
        ids.clone().zip(ids.skip(1)).map(|(a, b)| Triple::new(a, 0, b)).collect()
    }

    #[test]
    fn single_subgraph_when_cap_covers_graph() {
        let v = vocab(10, 1);
        let g = Graph::from_triples(v.clone(), chain(0..10)).unwrap();
        let parts = partition_graph(&g, 10, 3);
        assert_eq!(parts.len(), 1);
        let mut ents = parts[0].entities.clone();
        ents.sort();
        assert_eq!(ents, (0..10).collect::<Vec<_>>());
        assert_eq!(parts[0].graph.len(), 9);
    }

    #[test]
    fn disconnected_components_need_separate_seeds() {
        let v = vocab(10, 1);
        let mut triples = chain(0..5);
        triples.extend(chain(5..10));
        let g = Graph::from_triples(v, triples).unwrap();
        let parts = partition_graph(&g, 5, 11);
        assert!(parts.len() >= 2);
        let cov = coverage(&g, &parts);
        assert_eq!(cov.entities_covered, 10);
        assert_eq!(cov.triples_covered, 8);
    }

    #[test]
    fn split_counts_follow_quota() {
        let v = vocab(12, 2);
        let mut triples: Vec<Triple> = (0..10).map(|i| Triple::new(i, 0, i + 1)).collect();
        triples.push(Triple::new(0, 1, 5));
        let g = Graph::from_triples(v, triples).unwrap();
        let sg = Subgraph::from_entities(0, &g, (0..12).collect());
        let task = relation_balanced_split(&sg, 0.8, 99).unwrap();
        assert_eq!(task.support.relation_triples(0).count(), 8);
        assert_eq!(task.query.relation_triples(0).count(), 2);
        assert_eq!(task.support.relation_triples(1).count(), 1);
        assert_eq!(task.query.relation_triples(1).count(), 0);
    }

    #[test]
    fn split_rejects_bad_rho() {
        let v = vocab(2, 1);
        let g = Graph::from_triples(v, vec![Triple::new(0, 0, 1)]).unwrap();
        let sg = Subgraph::from_entities(0, &g, vec![0, 1]);
        for rho in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(matches!(relation_balanced_split(&sg, rho, 0), Err(Error::InvalidRho(_))));
        }
    }

    #[test]
    fn task_generation_is_deterministic() {
        let v = vocab(20, 3);
        let triples: Vec<Triple> = (0..19).map(|i| Triple::new(i, i % 3, i + 1)).collect();
        let g = Graph::from_triples(v, triples).unwrap();
        let sg = Subgraph::from_entities(0, &g, (0..20).collect());
        assert_eq!(generate_tasks(&sg, 0.8, 1, 5).unwrap().len(), 1);
        let a = generate_tasks(&sg, 0.8, 100, 5).unwrap();
        let b = generate_tasks(&sg, 0.8, 100, 5).unwrap();
        assert_eq!(a.len(), 100);
        assert_eq!(a, b);
        assert!(a.iter().any(|t| t.query != a[0].query));
    }

    proptest! {
        #[test]
        fn splits_are_exact_partitions_with_stratified_balance(
            raw in prop::collection::vec((0u32..40, 0u32..5, 0u32..40), 1..1000),
            rho in 0.05f64..0.95,
            seed in any::<u64>(),
        ) {
            let v = vocab(40, 5);
            let g = Graph::from_triples(v, raw.iter().map(|&(h, r, t)| Triple::new(h, r, t)).collect()).unwrap();
            let sg = Subgraph::from_entities(0, &g, (0..40).collect());
            let task = relation_balanced_split(&sg, rho, seed).unwrap();
            for t in task.support.triples() {
                prop_assert!(!task.query.contains(t));
            }
            let mut union: Vec<Triple> = task.support.triples().iter().chain(task.query.triples()).copied().collect();
            union.sort_unstable();
            prop_assert_eq!(&union[..], g.triples());

            let total = g.len() as f64;
            let ns = task.support.len() as f64;
            for r in 0..5u32 {
                let n_r = g.relation_triples(r).count();
                if n_r < 2 {
                    continue;
                }
                let s_r = task.support.relation_triples(r).count() as f64;
                let gap = (s_r / ns - n_r as f64 / total).abs();
                prop_assert!(gap <= 1.0 / ns + 1.0 / total + 1e-12, "relation {} gap {}", r, gap);
            }
        }

        #[test]
        fn partition_covers_every_entity(
            raw in prop::collection::vec((0u32..60, 0u32..3, 0u32..60), 0..200),
            cap in 2usize..20,
            seed in any::<u64>(),
        ) {
            let v = vocab(60, 3);
            let g = Graph::from_triples(v, raw.iter().map(|&(h, r, t)| Triple::new(h, r, t)).collect()).unwrap();
            let parts = partition_graph(&g, cap, seed);
            let cov = coverage(&g, &parts);
            prop_assert_eq!(cov.entities_covered, 60);
            for p in &parts {
                prop_assert!(p.entities.len() <= cap);
                for t in p.graph.triples() {
                    prop_assert!(p.entities.contains(&t.head) && p.entities.contains(&t.tail));
                }
            }
            prop_assert_eq!(partition_graph(&g, cap, seed).len(), parts.len());
        }
    }
}
