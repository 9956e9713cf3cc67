//! Small synthetic knowledge graphs with known structure, used for smoke runs and probes.

use std::collections::BTreeSet;

use rand::Rng;

use crate::data::NamedTriple;
use crate::rng;

fn named(h: &str, r: &str, t: &str) -> NamedTriple {
    (h.to_string(), r.to_string(), t.to_string())
}

/// Two-parent families with `parent_of`, `child_of` and `sibling_of` (both directions).
///
/// Family sizes `[5, 5, 2, 2, 2, 2]` give 30 entities and 120 triples.
pub fn family_kg(children_per_family: &[usize]) -> Vec<NamedTriple> {
    let mut out = Vec::new();
    for (f, &c) in children_per_family.iter().enumerate() {
        let parents = [format!("f{f}_p0"), format!("f{f}_p1")];
        let kids: Vec<String> = (0..c).map(|k| format!("f{f}_c{k}")).collect();
        for p in &parents {
            for k in &kids {
                out.push(named(p, "parent_of", k));
                out.push(named(k, "child_of", p));
            }
        }
        for a in &kids {
            for b in &kids {
                if a != b {
                    out.push(named(a, "sibling_of", b));
                }
            }
        }
    }
    out
}

/// The standard 30-entity, 3-relation, 120-triple family graph.
pub fn toy_family() -> Vec<NamedTriple> {
    family_kg(&[5, 5, 2, 2, 2, 2])
}

/// Random `r` edges between distinct entities, each mirrored by an inverse `s` edge.
pub fn inverse_kg(entities: usize, pairs: usize, seed: u64) -> Vec<NamedTriple> {
    assert!(entities >= 2 && pairs <= entities * (entities - 1), "too many pairs for the entity count");
    let mut rng = rng::stream(seed, &[0x1a7]);
    let mut edges = BTreeSet::new();
    while edges.len() < pairs {
        let h = rng.random_range(0..entities);
        let t = rng.random_range(0..entities);
        if h != t {
            edges.insert((h, t));
        }
    }
    let mut out = Vec::with_capacity(2 * pairs);
    for (h, t) in edges {
        let (h, t) = (format!("n{h}"), format!("n{t}"));
        out.push(named(&h, "r", &t));
        out.push(named(&t, "s", &h));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::build_vocab;

    #[test]
    fn toy_family_sizes() {
        let triples = toy_family();
        assert_eq!(triples.len(), 120);
        let v = build_vocab(&triples).unwrap();
        assert_eq!((v.num_entities(), v.num_relations()), (30, 3));
    }

    #[test]
    fn inverse_graph_is_closed_under_inversion() {
        let triples = inverse_kg(20, 40, 3);
        assert_eq!(triples.len(), 80);
        let set: BTreeSet<_> = triples.iter().cloned().collect();
        for (h, r, t) in &triples {
            let inv = if r == "r" { "s" } else { "r" };
            assert!(set.contains(&(t.clone(), inv.to_string(), h.clone())));
        }
        assert_eq!(inverse_kg(20, 40, 3), triples);
    }
}
