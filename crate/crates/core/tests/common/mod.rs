#![allow(dead_code)]

use std::collections::HashMap;

use cpsr::graph::{build_graph, GraphOptions, KnowledgeGraph, RawTriple};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random multigraph over at most `max_entities` names and `max_relations` labels.
pub fn random_triples<R: Rng>(
    rng: &mut R,
    max_entities: usize,
    max_relations: usize,
    max_edges: usize,
) -> Vec<RawTriple> {
    let n = rng.gen_range(2..=max_entities);
    let m = rng.gen_range(1..=max_relations);
    let edges = rng.gen_range(1..=max_edges);
    (0..edges)
        .map(|_| {
            RawTriple::new(
                format!("e{}", rng.gen_range(0..n)),
                format!("r{}", rng.gen_range(0..m)),
                format!("e{}", rng.gen_range(0..n)),
            )
        })
        .collect()
}

pub fn random_graph<R: Rng>(
    rng: &mut R,
    max_entities: usize,
    max_relations: usize,
    max_edges: usize,
) -> KnowledgeGraph {
    let raw = random_triples(rng, max_entities, max_relations, max_edges);
    let opts = GraphOptions { add_inverse: rng.gen_bool(0.5), add_self_loop: false };
    build_graph(&raw, opts)
}

/// Same facts with entity names permuted and triple order shuffled, plus
/// the old-name → new-name map.
pub fn permuted<R: Rng>(raw: &[RawTriple], rng: &mut R) -> (Vec<RawTriple>, HashMap<String, String>) {
    let mut names: Vec<String> = raw.iter().flat_map(|t| [t.head.clone(), t.tail.clone()]).collect();
    names.sort();
    names.dedup();
    let mut images = names.clone();
    images.shuffle(rng);
    let map: HashMap<String, String> = names.into_iter().zip(images.into_iter().map(|n| format!("p_{n}"))).collect();
    let mut out: Vec<RawTriple> =
        raw.iter().map(|t| RawTriple::new(map[&t.head].clone(), t.rel.clone(), map[&t.tail].clone())).collect();
    out.shuffle(rng);
    (out, map)
}
