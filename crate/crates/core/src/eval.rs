//! Set-level triple prediction metrics under closed-world and
//! relation-similarity partial-open-world assumptions.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kg::{EntityId, Graph, RelationId, Triple, Vocab};

/// Default similarity threshold below which a relation counts as dissimilar.
pub const DEFAULT_THETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Assumption {
    #[serde(rename = "CWA")]
    Cwa,
    #[serde(rename = "RS-POWA")]
    RsPowa,
}

impl Assumption {
    pub fn as_str(&self) -> &'static str {
        match self {
            Assumption::Cwa => "CWA",
            Assumption::RsPowa => "RS-POWA",
        }
    }
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub t_pred: usize,
    /// Predictions that can be judged: all of them under CWA, `+` and `-` under RS-POWA.
    pub t_wa: usize,
    pub t_wa_plus: usize,
    pub t_test: usize,
    pub jprecision: f64,
    pub strecall: f64,
    pub f_tsp: f64,
    pub assumption: Assumption,
}

impl MetricsReport {
    /// Scores from counts. Zero denominators give zero rather than NaN.
    pub fn from_counts(assumption: Assumption, t_pred: usize, t_wa: usize, t_wa_plus: usize, t_test: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let jprecision = 0.5 * (ratio(t_wa_plus, t_wa) + ratio(t_wa_plus, t_pred));
        let strecall = ratio(t_wa_plus, t_test).sqrt();
        let f_tsp = if jprecision > 0.0 && strecall > 0.0 {
            2.0 * jprecision * strecall / (jprecision + strecall)
        } else {
            0.0
        };
        MetricsReport { t_pred, t_wa, t_wa_plus, t_test, jprecision, strecall, f_tsp, assumption }
    }

    /// Adds predictions that could not be mapped to the vocabulary. They only count in `|pred|`
    /// (and in `|WA|` under CWA, where every prediction is judged).
    pub fn with_unresolved(&self, extra: usize) -> Self {
        let wa = match self.assumption {
            Assumption::Cwa => self.t_wa + extra,
            Assumption::RsPowa => self.t_wa,
        };
        Self::from_counts(self.assumption, self.t_pred + extra, wa, self.t_wa_plus, self.t_test)
    }

    /// Flat `key=value` lines.
    pub fn to_key_value(&self) -> String {
        format!(
            "t_pred={}\nt_wa={}\nt_wa_plus={}\nt_test={}\njprecision={:.6}\nstrecall={:.6}\nf_tsp={:.6}\nassumption={}\n",
            self.t_pred,
            self.t_wa,
            self.t_wa_plus,
            self.t_test,
            self.jprecision,
            self.strecall,
            self.f_tsp,
            self.assumption
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report fields are plain numbers and strings")
    }
}

fn dedup(triples: &[Triple]) -> HashSet<Triple> {
    triples.iter().copied().collect()
}

pub fn cwa_metrics(pred: &[Triple], test: &[Triple]) -> Result<MetricsReport> {
    let test = dedup(test);
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let pred = dedup(pred);
    let plus = pred.iter().filter(|t| test.contains(t)).count();
    Ok(MetricsReport::from_counts(Assumption::Cwa, pred.len(), pred.len(), plus, test.len()))
}

/// A prediction outside the test set is a confident negative when some known triple joins the
/// same ordered pair through a relation with similarity below `theta`.
pub fn rs_powa_metrics(pred: &[Triple], test: &[Triple], train: &[Triple], sim: &SimMatrix) -> Result<MetricsReport> {
    let test = dedup(test);
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let pred = dedup(pred);
    let mut known: HashMap<(EntityId, EntityId), Vec<RelationId>> = HashMap::new();
    for t in train.iter().chain(test.iter()) {
        known.entry((t.head, t.tail)).or_default().push(t.relation);
    }
    let mut plus = 0;
    let mut minus = 0;
    for t in &pred {
        if test.contains(t) {
            plus += 1;
        } else if known
            .get(&(t.head, t.tail))
            .is_some_and(|rels| rels.iter().any(|&r| sim.get(t.relation, r) < sim.theta))
        {
            minus += 1;
        }
    }
    Ok(MetricsReport::from_counts(Assumption::RsPowa, pred.len(), plus + minus, plus, test.len()))
}

/// Symmetric relation similarity with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMatrix {
    n: usize,
    values: Vec<f64>,
    pub theta: f64,
}

impl SimMatrix {
    pub fn new(n: usize, values: Vec<f64>, theta: f64) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::InvalidSimilarity(format!("expected {} values, got {}", n * n, values.len())));
        }
        let m = SimMatrix { n, values, theta };
        m.validate(1e-6)?;
        Ok(m)
    }

    /// Every pair fully similar, so no prediction is ever a confident negative.
    pub fn ones(n: usize) -> Self {
        SimMatrix { n, values: vec![1.0; n * n], theta: DEFAULT_THETA }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, a: RelationId, b: RelationId) -> f64 {
        self.values[a as usize * self.n + b as usize]
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    fn validate(&self, tol: f64) -> Result<()> {
        for a in 0..self.n {
            for b in 0..self.n {
                let v = self.values[a * self.n + b];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidSimilarity(format!("value {v} at ({a}, {b}) outside [0, 1]")));
                }
                if (v - self.values[b * self.n + a]).abs() > tol {
                    return Err(Error::InvalidSimilarity(format!("asymmetric at ({a}, {b})")));
                }
            }
            if (self.values[a * self.n + a] - 1.0).abs() > tol {
                return Err(Error::InvalidSimilarity(format!("diagonal entry {a} is not 1")));
            }
        }
        Ok(())
    }
}

/// Cosine similarity of per-relation head and tail entity histograms.
pub fn default_similarity(train: &Graph) -> Result<SimMatrix> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n_rel = train.vocab().num_relations();
    // sparse profiles: head counts then tail counts, keyed by (side, entity)
    let mut profiles: Vec<HashMap<(u8, EntityId), f64>> = vec![HashMap::new(); n_rel];
    for t in train.triples() {
        let p = &mut profiles[t.relation as usize];
        *p.entry((0, t.head)).or_default() += 1.0;
        *p.entry((1, t.tail)).or_default() += 1.0;
    }
    let norms: Vec<f64> = profiles.iter().map(|p| p.values().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut values = vec![0.0; n_rel * n_rel];
    for a in 0..n_rel {
        values[a * n_rel + a] = 1.0;
        for b in a + 1..n_rel {
            if norms[a] == 0.0 || norms[b] == 0.0 {
                continue;
            }
            let (small, large) = if profiles[a].len() <= profiles[b].len() {
                (&profiles[a], &profiles[b])
            } else {
                (&profiles[b], &profiles[a])
            };
            let dot: f64 = small.iter().filter_map(|(k, v)| large.get(k).map(|w| v * w)).sum();
            let s = (dot / (norms[a] * norms[b])).clamp(0.0, 1.0);
            values[a * n_rel + b] = s;
            values[b * n_rel + a] = s;
        }
    }
    Ok(SimMatrix { n: n_rel, values, theta: DEFAULT_THETA })
}

/// Reads a similarity file (header of relation names, then one row per relation)
/// and realigns it to the vocabulary order.
pub fn load_similarity(path: impl AsRef<Path>, vocab: &Vocab, theta: f64) -> Result<SimMatrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_similarity(&text, vocab, theta)
}

pub fn parse_similarity(text: &str, vocab: &Vocab, theta: f64) -> Result<SimMatrix> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::InvalidSimilarity("empty file".into()))?
        .split('\t')
        .map(str::trim)
        .collect();
    let n = vocab.num_relations();
    let mut slot = Vec::with_capacity(header.len());
    let mut seen = vec![false; n];
    for name in &header {
        let id = vocab
            .relation_id(name)
            .ok_or_else(|| Error::InvalidSimilarity(format!("unknown relation {name:?}")))? as usize;
        if std::mem::replace(&mut seen[id], true) {
            return Err(Error::InvalidSimilarity(format!("relation {name:?} listed twice")));
        }
        slot.push(id);
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidSimilarity(format!(
            "relation {:?} missing from header",
            vocab.relation_name(missing as u32).unwrap_or_default()
        )));
    }
    let mut values = vec![0.0; n * n];
    let mut rows = 0;
    for (r, line) in lines.enumerate() {
        if r >= n {
            return Err(Error::InvalidSimilarity("more rows than relations".into()));
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| Error::InvalidSimilarity(format!("bad number {v:?} in row {}", r + 1))))
            .collect::<Result<_>>()?;
        if row.len() != n {
            return Err(Error::InvalidSimilarity(format!("row {} has {} values, expected {n}", r + 1, row.len())));
        }
        for (c, v) in row.into_iter().enumerate() {
            values[slot[r] * n + slot[c]] = v;
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::InvalidSimilarity(format!("{rows} rows, expected {n}")));
    }
    SimMatrix::new(n, values, theta)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-3
    }

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
    fn closed_world_count_fixture() {
        let m = MetricsReport::from_counts(Assumption::Cwa, 2453, 2453, 1657, 4598);
        assert!(close(m.jprecision, 0.675) && close(m.strecall, 0.600) && close(m.f_tsp, 0.635), "{m:?}");
    }

    #[test]
    fn open_world_count_fixtures() {
        let m = MetricsReport::from_counts(Assumption::RsPowa, 7472, 4355, 3472, 15843);
        assert!(close(m.jprecision, 0.630) && close(m.strecall, 0.468) && close(m.f_tsp, 0.537), "{m:?}");
        let m = MetricsReport::from_counts(Assumption::RsPowa, 10162, 6804, 4543, 28727);
        assert!(close(m.jprecision, 0.557) && close(m.strecall, 0.397) && close(m.f_tsp, 0.464), "{m:?}");
        // the same counts read under CWA
        let m = MetricsReport::from_counts(Assumption::Cwa, 7472, 7472, 3472, 15843);
        assert!(close(m.jprecision, 0.464), "{m:?}");
    }

    #[test]
    fn perfect_and_disjoint_predictions() {
        let test = vec![Triple::new(0, 0, 1), Triple::new(1, 1, 2)];
        let m = cwa_metrics(&test, &test).unwrap();
        assert_eq!((m.jprecision, m.strecall, m.f_tsp), (1.0, 1.0, 1.0));
        let m = cwa_metrics(&[Triple::new(2, 0, 0)], &test).unwrap();
        assert_eq!((m.jprecision, m.strecall, m.f_tsp), (0.0, 0.0, 0.0));
        let m = cwa_metrics(&[], &test).unwrap();
        assert_eq!((m.t_pred, m.f_tsp), (0, 0.0));
        assert!(matches!(cwa_metrics(&test, &[]), Err(Error::EmptyTestSet)));
    }

    #[test]
    fn unresolved_predictions_only_grow_pred() {
        let test = vec![Triple::new(0, 0, 1), Triple::new(1, 1, 2)];
        let m = cwa_metrics(&test[..1], &test).unwrap().with_unresolved(1);
        assert_eq!((m.t_pred, m.t_wa_plus), (2, 1));
        assert_eq!(m.jprecision, 0.5);
    }

    #[test]
    fn all_similar_means_no_confident_negatives() {
        let test = vec![Triple::new(0, 0, 1)];
        let train = vec![Triple::new(2, 1, 3)];
        let pred = vec![Triple::new(0, 0, 1), Triple::new(2, 0, 3)];
        let m = rs_powa_metrics(&pred, &test, &train, &SimMatrix::ones(2)).unwrap();
        assert_eq!((m.t_wa, m.t_wa_plus), (1, 1));
        let dissimilar = SimMatrix::new(2, vec![1.0, 0.1, 0.1, 1.0], 0.5).unwrap();
        let m = rs_powa_metrics(&pred, &test, &train, &dissimilar).unwrap();
        assert_eq!((m.t_wa, m.t_wa_plus), (2, 1));
    }

    fn random_triples(seed: u64, count: usize, ne: u32, nr: u32) -> Vec<Triple> {
        let mut rng = crate::rng::stream(seed, &[]);
        use rand::Rng;
        (0..count)
            .map(|_| Triple::new(rng.random_range(0..ne), rng.random_range(0..nr), rng.random_range(0..ne)))
            .collect()
    }

    #[test]
    fn open_world_negatives_match_brute_force() {
        for seed in 0..20 {
            let pred = random_triples(seed, 50, 8, 4);
            let test = random_triples(seed + 100, 50, 8, 4);
            let train = random_triples(seed + 200, 50, 8, 4);
            let mut values = vec![0.0; 16];
            let mut rng = crate::rng::stream(seed, &[9]);
            use rand::Rng;
            for a in 0..4 {
                values[a * 4 + a] = 1.0;
                for b in a + 1..4 {
                    let v: f64 = rng.random();
                    values[a * 4 + b] = v;
                    values[b * 4 + a] = v;
                }
            }
            let sim = SimMatrix::new(4, values, 0.5).unwrap();
            let m = rs_powa_metrics(&pred, &test, &train, &sim).unwrap();

            let mut uniq = pred.clone();
            uniq.sort();
            uniq.dedup();
            let mut minus = 0;
            let mut plus = 0;
            for p in &uniq {
                if test.contains(p) {
                    plus += 1;
                    continue;
                }
                let mut hit = false;
                for k in train.iter().chain(test.iter()) {
                    if k.head == p.head && k.tail == p.tail && sim.get(p.relation, k.relation) < 0.5 {
                        hit = true;
                    }
                }
                minus += hit as usize;
            }
            assert_eq!((m.t_wa_plus, m.t_wa, m.t_pred), (plus, plus + minus, uniq.len()));
        }
    }

    #[test]
    fn open_world_equals_closed_world_without_dissimilar_pairs() {
        for seed in 0..10 {
            let test = random_triples(seed, 40, 10, 3);
            let mut pred = test[..20].to_vec();
            pred.push(Triple::new(10, 0, 11));
            let v = vocab(12, 3);
            let train = Graph::from_triples(v, random_triples(seed + 5, 30, 10, 3)).unwrap();
            let sim = default_similarity(&train).unwrap();
            // extra prediction lands on a pair with no known triples
            let a = cwa_metrics(&pred, &test).unwrap();
            let b = rs_powa_metrics(&pred, &test, train.triples(), &SimMatrix::ones(3)).unwrap();
            assert_eq!(a.t_wa_plus, b.t_wa_plus);
            assert!(b.jprecision >= a.jprecision);
            let c = rs_powa_metrics(&test[..20], &test, train.triples(), &sim).unwrap();
            let d = cwa_metrics(&test[..20], &test).unwrap();
            assert!((c.jprecision - d.jprecision).abs() < 1e-15);
        }
    }

    #[test]
    fn default_similarity_properties() {
        let v = vocab(6, 3);
        let train = Graph::from_triples(
            v,
            vec![Triple::new(0, 0, 1), Triple::new(1, 0, 0), Triple::new(2, 1, 3), Triple::new(0, 2, 1)],
        )
        .unwrap();
        let sim = default_similarity(&train).unwrap();
        for r in 0..3 {
            assert_eq!(sim.get(r, r), 1.0);
        }
        assert_eq!(sim.get(0, 1), 0.0);
        assert!(sim.get(0, 2) > 0.0 && sim.get(0, 2) < 1.0);
        // r0 profile: heads {0:1, 1:1}, tails {1:1, 0:1}; r2: head {0:1}, tail {1:1}
        assert!((sim.get(0, 2) - 2.0 / (2.0 * 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(sim.get(0, 2), sim.get(2, 0));
    }

    #[test]
    fn similarity_file_loading() {
        let v = vocab(2, 3);
        let ok = "r0\tr1\tr2\n1\t0.2\t0.3\n0.2\t1\t0.4\n0.3\t0.4\t1\n";
        let sim = parse_similarity(ok, &v, 0.5).unwrap();
        assert_eq!(sim.get(1, 2), 0.4);
        let permuted = "r2\tr0\tr1\n1\t0.3\t0.4\n0.3\t1\t0.2\n0.4\t0.2\t1\n";
        assert_eq!(parse_similarity(permuted, &v, 0.5).unwrap(), sim);
        let big = "r0\tr1\tr2\n1\t1.2\t0.3\n1.2\t1\t0.4\n0.3\t0.4\t1\n";
        assert!(matches!(parse_similarity(big, &v, 0.5), Err(Error::InvalidSimilarity(_))));
        let asym = "r0\tr1\tr2\n1\t0.2\t0.3\n0.25\t1\t0.4\n0.3\t0.4\t1\n";
        assert!(matches!(parse_similarity(asym, &v, 0.5), Err(Error::InvalidSimilarity(_))));
        let unknown = "r0\tr1\tzz\n1\t0\t0\n0\t1\t0\n0\t0\t1\n";
        assert!(matches!(parse_similarity(unknown, &v, 0.5), Err(Error::InvalidSimilarity(_))));
    }

    #[test]
    fn report_records() {
        let m = MetricsReport::from_counts(Assumption::RsPowa, 4, 2, 1, 8);
        let kv = m.to_key_value();
        assert!(kv.contains("t_pred=4\n") && kv.contains("assumption=RS-POWA\n"));
        let json = m.to_json();
        for key in ["t_pred", "t_wa", "t_wa_plus", "t_test", "jprecision", "strecall", "f_tsp", "assumption"] {
            assert!(json.contains(&format!("\"{key}\":")), "{json}");
        }
        assert!(json.contains("\"RS-POWA\""));
    }

    proptest! {
        #[test]
        fn mean_ordering_and_ranges(pred in 0usize..500, wa_frac in 0.0f64..=1.0, plus_frac in 0.0f64..=1.0, test in 1usize..500) {
            let wa = (pred as f64 * wa_frac) as usize;
            let plus = ((wa as f64 * plus_frac) as usize).min(test);
            let m = MetricsReport::from_counts(Assumption::RsPowa, pred, wa, plus, test);
            for v in [m.jprecision, m.strecall, m.f_tsp] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let geo = (m.jprecision * m.strecall).sqrt();
            let arith = 0.5 * (m.jprecision + m.strecall);
            prop_assert!(m.f_tsp <= geo + 1e-12 && geo <= arith + 1e-12);
        }

        #[test]
        fn adding_a_correct_triple_never_lowers_recall(extra in 0usize..30) {
            let test = random_triples(extra as u64, 40, 12, 3);
            let pred: Vec<Triple> = test[..extra.min(test.len())].to_vec();
            let base = cwa_metrics(&pred, &test).unwrap();
            let mut more = pred.clone();
            more.push(test[39]);
            prop_assert!(cwa_metrics(&more, &test).unwrap().strecall >= base.strecall);
        }
    }
}
