//! Vocabularies, sparse triple storage and dense adjacency views.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;

/// Bidirectional name/id maps for entities and relations.
///
/// Ids are dense and assigned in first-occurrence order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    entities: Vec<String>,
    relations: Vec<String>,
    entity_ids: HashMap<String, EntityId>,
    relation_ids: HashMap<String, RelationId>,
    entity_counts: Vec<u64>,
    relation_counts: Vec<u64>,
}

impl Vocab {
    fn intern_entity(&mut self, name: &str) -> EntityId {
        if let Some(&id) = self.entity_ids.get(name) {
            self.entity_counts[id as usize] += 1;
            return id;
        }
        let id = self.entities.len() as EntityId;
        self.entities.push(name.to_owned());
        self.entity_ids.insert(name.to_owned(), id);
        self.entity_counts.push(1);
        id
    }

    fn intern_relation(&mut self, name: &str) -> RelationId {
        if let Some(&id) = self.relation_ids.get(name) {
            self.relation_counts[id as usize] += 1;
            return id;
        }
        let id = self.relations.len() as RelationId;
        self.relations.push(name.to_owned());
        self.relation_ids.insert(name.to_owned(), id);
        self.relation_counts.push(1);
        id
    }

    /// Builds a vocabulary from explicit name lists. Names must be unique.
    pub fn from_names(entities: Vec<String>, relations: Vec<String>) -> Result<Self> {
        let mut vocab = Vocab::default();
        for name in &entities {
            if vocab.entity_ids.contains_key(name) {
                return Err(Error::InvalidSubset(format!("duplicate entity name {name:?}")));
            }
            vocab.intern_entity(name);
        }
        for name in &relations {
            if vocab.relation_ids.contains_key(name) {
                return Err(Error::InvalidSubset(format!("duplicate relation name {name:?}")));
            }
            vocab.intern_relation(name);
        }
        Ok(vocab)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_ids.get(name).copied()
    }

    pub fn entity_name(&self, id: EntityId) -> Option<&str> {
        self.entities.get(id as usize).map(String::as_str)
    }

    pub fn relation_name(&self, id: RelationId) -> Option<&str> {
        self.relations.get(id as usize).map(String::as_str)
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    /// Number of raw-input occurrences of each entity (as head or tail).
    pub fn entity_counts(&self) -> &[u64] {
        &self.entity_counts
    }

    pub fn relation_counts(&self) -> &[u64] {
        &self.relation_counts
    }

    /// Resolves a named triple, `None` if any name is unknown.
    pub fn resolve(&self, head: &str, relation: &str, tail: &str) -> Option<Triple> {
        Some(Triple {
            head: self.entity_id(head)?,
            relation: self.relation_id(relation)?,
            tail: self.entity_id(tail)?,
        })
    }

    pub fn check(&self, t: &Triple) -> Result<()> {
        let ne = self.entities.len();
        let nr = self.relations.len();
        if t.head as usize >= ne {
            return Err(Error::InvalidId { kind: "entity", id: t.head, len: ne });
        }
        if t.tail as usize >= ne {
            return Err(Error::InvalidId { kind: "entity", id: t.tail, len: ne });
        }
        if t.relation as usize >= nr {
            return Err(Error::InvalidId { kind: "relation", id: t.relation, len: nr });
        }
        Ok(())
    }
}

/// Builds a vocabulary over raw named triples; first occurrence fixes ids.
pub fn build_vocab<S: AsRef<str>>(raw: &[(S, S, S)]) -> Result<Vocab> {
    if raw.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut vocab = Vocab::default();
    for (h, r, t) in raw {
        vocab.intern_entity(h.as_ref());
        vocab.intern_relation(r.as_ref());
        vocab.intern_entity(t.as_ref());
    }
    Ok(vocab)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub const fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triple { head, relation, tail }
    }
}

/// Duplicate-free triple store with relation and entity indices.
///
/// Triples are kept sorted by `(head, relation, tail)`.
#[derive(Debug, Clone)]
pub struct Graph {
    vocab: Arc<Vocab>,
    triples: Vec<Triple>,
    by_relation: Vec<Vec<usize>>,
    outgoing: HashMap<EntityId, Vec<usize>>,
    incoming: HashMap<EntityId, Vec<usize>>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.triples == other.triples
            && (Arc::ptr_eq(&self.vocab, &other.vocab) || *self.vocab == *other.vocab)
    }
}

impl Graph {
    pub fn from_triples(vocab: Arc<Vocab>, mut triples: Vec<Triple>) -> Result<Self> {
        for t in &triples {
            vocab.check(t)?;
        }
        triples.sort_unstable();
        triples.dedup();
        let mut by_relation = vec![Vec::new(); vocab.num_relations()];
        let mut outgoing: HashMap<EntityId, Vec<usize>> = HashMap::new();
        let mut incoming: HashMap<EntityId, Vec<usize>> = HashMap::new();
        for (idx, t) in triples.iter().enumerate() {
            by_relation[t.relation as usize].push(idx);
            outgoing.entry(t.head).or_default().push(idx);
            incoming.entry(t.tail).or_default().push(idx);
        }
        Ok(Graph { vocab, triples, by_relation, outgoing, incoming })
    }

    pub fn empty(vocab: Arc<Vocab>) -> Self {
        let n_rel = vocab.num_relations();
        Graph {
            vocab,
            triples: Vec::new(),
            by_relation: vec![Vec::new(); n_rel],
            outgoing: HashMap::new(),
            incoming: HashMap::new(),
        }
    }

    pub fn vocab(&self) -> &Arc<Vocab> {
        &self.vocab
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.binary_search(t).is_ok()
    }

    pub fn relation_triples(&self, r: RelationId) -> impl Iterator<Item = &Triple> + '_ {
        self.by_relation
            .get(r as usize)
            .into_iter()
            .flatten()
            .map(move |&i| &self.triples[i])
    }

    pub fn outgoing(&self, e: EntityId) -> impl Iterator<Item = &Triple> + '_ {
        self.outgoing.get(&e).into_iter().flatten().map(move |&i| &self.triples[i])
    }

    pub fn incoming(&self, e: EntityId) -> impl Iterator<Item = &Triple> + '_ {
        self.incoming.get(&e).into_iter().flatten().map(move |&i| &self.triples[i])
    }

    /// Subgraph induced by `entities`: triples with both endpoints inside.
    pub fn induced(&self, entities: &[EntityId]) -> Graph {
        let members: std::collections::HashSet<EntityId> = entities.iter().copied().collect();
        let mut picked = Vec::new();
        for &e in entities {
            for t in self.outgoing(e) {
                if members.contains(&t.tail) {
                    picked.push(*t);
                }
            }
        }
        Graph::from_triples(self.vocab.clone(), picked).expect("ids come from a valid graph")
    }
}

/// Per-relation triple counts plus the absent-pair count for the no-edge channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreqTable {
    pub relation_counts: Vec<u64>,
    pub absent_pairs: u64,
}

impl FreqTable {
    pub fn total(&self) -> u64 {
        self.relation_counts.iter().sum()
    }

    pub fn probability(&self, r: RelationId) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.relation_counts[r as usize] as f64 / total as f64
        }
    }
}

pub fn relation_frequencies(graph: &Graph) -> FreqTable {
    let mut relation_counts = vec![0u64; graph.vocab().num_relations()];
    for t in graph.triples() {
        relation_counts[t.relation as usize] += 1;
    }
    FreqTable { relation_counts, absent_pairs: 0 }
}

/// Dense `n x n x n_rel` presence tensor over an ordered entity subset.
///
/// Cells are either present or in the absorbing absent/masked state. The
/// no-edge channel (index `n_rel`) is derived, never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyState {
    entities: Vec<EntityId>,
    n_rel: usize,
    present: Vec<bool>,
}

impl AdjacencyState {
    pub fn empty(entities: Vec<EntityId>, n_rel: usize) -> Self {
        let n = entities.len();
        AdjacencyState { entities, n_rel, present: vec![false; n * n * n_rel] }
    }

    pub fn entities(&self) -> &[EntityId] {
        &self.entities
    }

    pub fn n(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.n_rel
    }

    /// Total channel count including the no-edge channel.
    pub fn channels(&self) -> usize {
        self.n_rel + 1
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n() + j) * self.n_rel + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.present[self.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: bool) {
        let idx = self.index(i, j, k);
        self.present[idx] = value;
    }

    /// Channel value including the derived no-edge channel at `k == n_rel`.
    #[inline]
    pub fn channel(&self, i: usize, j: usize, k: usize) -> bool {
        if k == self.n_rel {
            self.no_edge(i, j)
        } else {
            self.get(i, j, k)
        }
    }

    pub fn no_edge(&self, i: usize, j: usize) -> bool {
        let start = self.index(i, j, 0);
        !self.present[start..start + self.n_rel].iter().any(|&p| p)
    }

    pub fn cells(&self) -> &[bool] {
        &self.present
    }

    pub fn cells_mut(&mut self) -> &mut [bool] {
        &mut self.present
    }

    pub fn present_count(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    /// Present cells as local `(i, k, j)` triples in row-major order.
    pub fn local_edges(&self) -> Vec<(usize, usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..self.n_rel {
                    if self.get(i, j, k) {
                        out.push((i, k, j));
                    }
                }
            }
        }
        out
    }

    /// Present cells mapped back to global triples.
    pub fn to_triples(&self) -> Vec<Triple> {
        self.local_edges()
            .into_iter()
            .map(|(i, k, j)| Triple::new(self.entities[i], k as RelationId, self.entities[j]))
            .collect()
    }

    pub fn same_frame(&self, other: &AdjacencyState) -> bool {
        self.entities == other.entities && self.n_rel == other.n_rel
    }

    /// Relabels entities: entry `perm[i]` becomes position `i` of the result.
    pub fn permuted(&self, perm: &[usize]) -> AdjacencyState {
        let n = self.n();
        assert_eq!(perm.len(), n);
        let entities = perm.iter().map(|&p| self.entities[p]).collect();
        let mut out = AdjacencyState::empty(entities, self.n_rel);
        for i in 0..n {
            for j in 0..n {
                for k in 0..self.n_rel {
                    out.set(i, j, k, self.get(perm[i], perm[j], k));
                }
            }
        }
        out
    }
}

/// Projects `graph` onto the ordered entity list; edges leaving the list are dropped.
pub fn to_adjacency(graph: &Graph, entities: &[EntityId]) -> Result<AdjacencyState> {
    let mut local = HashMap::with_capacity(entities.len());
    for (i, &e) in entities.iter().enumerate() {
        if local.insert(e, i).is_some() {
            return Err(Error::InvalidSubset(format!("entity {e} listed twice")));
        }
    }
    let mut adj = AdjacencyState::empty(entities.to_vec(), graph.vocab().num_relations());
    for (i, &e) in entities.iter().enumerate() {
        for t in graph.outgoing(e) {
            if let Some(&j) = local.get(&t.tail) {
                adj.set(i, j, t.relation as usize, true);
            }
        }
    }
    Ok(adj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn named(v: &[(&str, &str, &str)]) -> Vec<(String, String, String)> {
        v.iter().map(|(a, b, c)| (a.to_string(), b.to_string(), c.to_string())).collect()
    }

    #[test]
    fn vocab_first_occurrence_order() {
        let v = build_vocab(&named(&[("a", "r", "b"), ("b", "r", "a")])).unwrap();
        assert_eq!(v.num_entities(), 2);
        assert_eq!(v.num_relations(), 1);
        assert_eq!(v.entity_id("a"), Some(0));
        assert_eq!(v.entity_id("b"), Some(1));
        assert_eq!(v.relation_id("r"), Some(0));
        assert_eq!(v.entity_counts(), &[2, 2]);
    }

    #[test]
    fn vocab_rejects_empty() {
        let empty: Vec<(String, String, String)> = vec![];
        assert!(matches!(build_vocab(&empty), Err(Error::EmptyDataset)));
    }

    fn tiny_vocab(ne: usize, nr: usize) -> Arc<Vocab> {
        Arc::new(
            Vocab::from_names(
                (0..ne).map(|i| format!("e{i}")).collect(),
                (0..nr).map(|i| format!("r{i}")).collect(),
            )
            .unwrap(),
        )
    }

    #[test]
    fn graph_dedups_and_accepts_self_loops() {
        let v = tiny_vocab(2, 1);
        let g = Graph::from_triples(v.clone(), vec![Triple::new(0, 0, 1), Triple::new(0, 0, 1)]).unwrap();
        assert_eq!(g.len(), 1);
        let g = Graph::from_triples(v, vec![Triple::new(0, 0, 0)]).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.outgoing(0).count(), 1);
        assert_eq!(g.incoming(0).count(), 1);
    }

    #[test]
    fn graph_rejects_bad_ids() {
        let v = tiny_vocab(2, 1);
        let err = Graph::from_triples(v, vec![Triple::new(0, 1, 1)]).unwrap_err();
        assert!(matches!(err, Error::InvalidId { kind: "relation", .. }));
    }

    #[test]
    fn adjacency_single_edge() {
        let v = tiny_vocab(2, 2);
        let g = Graph::from_triples(v, vec![Triple::new(0, 1, 1)]).unwrap();
        let adj = to_adjacency(&g, &[0, 1]).unwrap();
        assert_eq!(adj.local_edges(), vec![(0, 1, 1)]);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(adj.no_edge(i, j), !(i == 0 && j == 1));
            }
        }
        let adj = to_adjacency(&g, &[1]).unwrap();
        assert_eq!(adj.present_count(), 0);
        assert!(adj.channel(0, 0, 2));
    }

    #[test]
    fn adjacency_rejects_duplicate_entities() {
        let v = tiny_vocab(2, 1);
        let g = Graph::empty(v);
        assert!(matches!(to_adjacency(&g, &[0, 0]), Err(Error::InvalidSubset(_))));
    }

    #[test]
    fn frequencies_count_each_relation() {
        let v = tiny_vocab(2, 3);
        let g = Graph::from_triples(
            v.clone(),
            vec![Triple::new(0, 0, 1), Triple::new(1, 0, 0), Triple::new(0, 1, 1)],
        )
        .unwrap();
        let f = relation_frequencies(&g);
        assert_eq!(f.relation_counts, vec![2, 1, 0]);
        assert_eq!(f.total(), g.len() as u64);
        assert_eq!(relation_frequencies(&Graph::empty(v)).relation_counts, vec![0, 0, 0]);
    }

    fn arb_graph() -> impl Strategy<Value = (usize, usize, Vec<(u32, u32, u32)>, Vec<u32>)> {
        (2usize..=30, 1usize..=5).prop_flat_map(|(ne, nr)| {
            (
                Just(ne),
                Just(nr),
                prop::collection::vec((0..ne as u32, 0..nr as u32, 0..ne as u32), 0..120),
                Just((0..ne as u32).collect::<Vec<_>>()).prop_shuffle(),
            )
        })
    }

    proptest! {
        #[test]
        fn adjacency_roundtrip_matches_induced_subgraph(
            (ne, nr, raw, order) in arb_graph(),
            keep in 1usize..=30,
        ) {
            let v = tiny_vocab(ne, nr);
            let triples: Vec<Triple> = raw.iter().map(|&(h, r, t)| Triple::new(h, r, t)).collect();
            let g = Graph::from_triples(v, triples).unwrap();
            let list: Vec<u32> = order.into_iter().take(keep.min(ne)).collect();
            let adj = to_adjacency(&g, &list).unwrap();
            let mut extracted = adj.to_triples();
            extracted.sort_unstable();
            // brute force induced set
            let mut expected: Vec<Triple> = g
                .triples()
                .iter()
                .filter(|t| list.contains(&t.head) && list.contains(&t.tail))
                .copied()
                .collect();
            expected.sort_unstable();
            prop_assert_eq!(&extracted, &expected);
            let induced = g.induced(&list);
            prop_assert_eq!(induced.triples(), &expected[..]);
            for i in 0..adj.n() {
                for j in 0..adj.n() {
                    let any = (0..nr).any(|k| adj.get(i, j, k));
                    prop_assert_eq!(adj.no_edge(i, j), !any);
                }
            }
        }

        #[test]
        fn vocab_roundtrip_identity(names in prop::collection::vec("[a-z]{1,6}", 1..40)) {
            let raw: Vec<(String, String, String)> = names
                .windows(2)
                .map(|w| (w[0].clone(), "rel".to_string(), w[1].clone()))
                .chain(std::iter::once((names[0].clone(), "rel".to_string(), names[0].clone())))
                .collect();
            let v = build_vocab(&raw).unwrap();
            for name in &names {
                let id = v.entity_id(name).unwrap();
                prop_assert_eq!(v.entity_name(id), Some(name.as_str()));
            }
        }

        #[test]
        fn graph_indices_consistent((ne, nr, raw, _o) in arb_graph()) {
            let v = tiny_vocab(ne, nr);
            let g = Graph::from_triples(v, raw.iter().map(|&(h, r, t)| Triple::new(h, r, t)).collect()).unwrap();
            let per_rel: usize = (0..nr as u32).map(|r| g.relation_triples(r).count()).sum();
            prop_assert_eq!(per_rel, g.len());
            for t in g.triples() {
                prop_assert!(g.outgoing(t.head).any(|x| x == t));
                prop_assert!(g.incoming(t.tail).any(|x| x == t));
                prop_assert!(g.relation_triples(t.relation).any(|x| x == t));
            }
        }
    }
}
