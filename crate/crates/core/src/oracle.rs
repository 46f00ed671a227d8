//! Brute-force reference computations and synthetic data.
//!
//! Nothing here reuses the propagation code: walks are enumerated by scanning
//! the raw triple list, and messages are recomputed from the parameter
//! matrices directly.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;
use crate::graph::{EntityId, RawSplit, RawTriple, RelationId, Triple};
use crate::model::ModelParams;
use crate::rng::{stream, Purpose};
use crate::scalar::Scalar;

/// Longest walk [`enumerate_paths`] will expand.
pub const MAX_WALK_LEN: usize = 4;

/// Walks from a source, each a chain of triples.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PathList {
    pub paths: Vec<Vec<Triple>>,
}

impl PathList {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// Every walk (revisits allowed) of exactly `len` edges from `source` to
/// `target` whose edges pass `retain(step, triple)`, `step` being 1-based.
pub fn enumerate_paths(
    kg: &KnowledgeGraph,
    source: EntityId,
    target: EntityId,
    len: usize,
    retain: impl Fn(usize, &Triple) -> bool,
) -> Result<PathList> {
    if len > MAX_WALK_LEN {
        return Err(Error::Guard(len, MAX_WALK_LEN));
    }
    fn extend(
        kg: &KnowledgeGraph,
        at: EntityId,
        target: EntityId,
        remaining: usize,
        retain: &dyn Fn(usize, &Triple) -> bool,
        prefix: &mut Vec<Triple>,
        out: &mut Vec<Vec<Triple>>,
    ) {
        if remaining == 0 {
            if at == target {
                out.push(prefix.clone());
            }
            return;
        }
        let step = prefix.len() + 1;
        for t in kg.triples() {
            if t.head == at && retain(step, t) {
                prefix.push(*t);
                extend(kg, t.tail, target, remaining - 1, retain, prefix, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    extend(kg, source, target, len, &retain, &mut Vec::with_capacity(len), &mut out);
    Ok(PathList { paths: out })
}

/// `W_{r_q}ᵀ [h_{r_q}; h_r]`, entry by entry.
fn reference_message<T: Scalar>(params: &ModelParams<T>, query_rel: RelationId, rel: RelationId) -> Vec<T> {
    let d = params.dim();
    let w = if params.mix.len() == 1 { &params.mix[0] } else { &params.mix[query_rel as usize] };
    (0..d)
        .map(|j| {
            let mut acc = T::zero();
            for i in 0..d {
                acc += w.get(i, j) * params.rel_emb.get(query_rel as usize, i);
                acc += w.get(d + i, j) * params.rel_emb.get(rel as usize, i);
            }
            acc
        })
        .collect()
}

/// The literal double sum over walks of length `len`: `Σ_walks Σ_edges φ(r_q, r)`.
pub fn brute_embedding<T: Scalar>(
    kg: &KnowledgeGraph,
    params: &ModelParams<T>,
    query_rel: RelationId,
    source: EntityId,
    target: EntityId,
    len: usize,
) -> Result<Vec<T>> {
    let walks = enumerate_paths(kg, source, target, len, |_, _| true)?;
    let mut h = vec![T::zero(); params.dim()];
    for walk in &walks.paths {
        for t in walk {
            for (hk, mk) in h.iter_mut().zip(reference_message(params, query_rel, t.rel)) {
                *hk += mk;
            }
        }
    }
    Ok(h)
}

/// Central finite differences of `loss` with respect to every parameter entry.
pub fn finite_diff_gradients<T: Scalar>(
    loss: impl Fn(&ModelParams<T>) -> T,
    params: &ModelParams<T>,
    step: T,
) -> ModelParams<T> {
    assert!(step > T::zero(), "finite-difference step must be positive");
    let mut out = params.zeros_like();
    let mut probe = params.clone();
    let n_blocks = params.blocks().len();
    for b in 0..n_blocks {
        let len = params.blocks()[b].len();
        for i in 0..len {
            let orig = probe.blocks()[b][i];
            probe.blocks_mut()[b][i] = orig + step;
            let up = loss(&probe);
            probe.blocks_mut()[b][i] = orig - step;
            let down = loss(&probe);
            probe.blocks_mut()[b][i] = orig;
            out.blocks_mut()[b][i] = (up - down) / (step + step);
        }
    }
    out
}

/// A synthetic split where `head(x, z)` holds iff `body1(x, y) ∧ body2(y, z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedRuleSpec {
    pub train_entities: usize,
    pub inference_entities: usize,
    pub body: (String, String),
    pub head: String,
    pub distractor_relations: usize,
    /// Probability that an entity gets an outgoing edge of each distractor relation.
    pub density: f64,
    /// Fraction of train-graph rule-head facts held out for validation, rounded up.
    pub valid_fraction: f64,
    /// Fraction of inference-graph rule-head facts held out for testing, rounded up.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for PlantedRuleSpec {
    fn default() -> Self {
        Self {
            train_entities: 120,
            inference_entities: 30,
            body: ("r1".into(), "r2".into()),
            head: "rq".into(),
            distractor_relations: 3,
            density: 0.3,
            valid_fraction: 0.25,
            test_fraction: 1.0,
            seed: 0,
        }
    }
}

impl PlantedRuleSpec {
    pub fn validate(&self) -> Result<()> {
        let names = [&self.body.0, &self.body.1, &self.head];
        if names[0] == names[1] || names[0] == names[2] || names[1] == names[2] {
            return Err(Error::Config("body and head relations must be distinct".into()));
        }
        if self.train_entities < 3 || self.inference_entities < 3 {
            return Err(Error::Config("each graph needs at least 3 entities".into()));
        }
        for (name, v) in
            [("density", self.density), ("valid_fraction", self.valid_fraction), ("test_fraction", self.test_fraction)]
        {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn distractor_name(k: usize) -> String {
        format!("d{k}")
    }
}

/// Facts and held-out rule-head queries for one graph.
///
/// Entities are split into three equal roles: sources carry one `body1`
/// edge into the middle role, middles carry one `body2` edge into targets.
fn planted_graph<R: Rng>(
    spec: &PlantedRuleSpec,
    n: usize,
    holdout: f64,
    prefix: &str,
    rng: &mut R,
) -> (Vec<RawTriple>, Vec<RawTriple>) {
    let name = |i: usize| format!("{prefix}{i}");
    let third = n / 3;
    let (sources, middles, targets) = (0..third, third..2 * third, 2 * third..n);
    let mut facts = Vec::new();
    let mut next = vec![usize::MAX; n];
    for x in sources.clone() {
        let y = rng.gen_range(middles.clone());
        next[x] = y;
        facts.push(RawTriple::new(name(x), &spec.body.0, name(y)));
    }
    for y in middles {
        let z = rng.gen_range(targets.clone());
        next[y] = z;
        facts.push(RawTriple::new(name(y), &spec.body.1, name(z)));
    }
    for e in 0..n {
        for k in 0..spec.distractor_relations {
            if rng.gen::<f64>() < spec.density {
                let mut t = rng.gen_range(0..n - 1);
                if t >= e {
                    t += 1;
                }
                facts.push(RawTriple::new(name(e), PlantedRuleSpec::distractor_name(k), name(t)));
            }
        }
    }
    let mut heads: Vec<RawTriple> = sources.map(|x| RawTriple::new(name(x), &spec.head, name(next[next[x]]))).collect();
    heads.shuffle(rng);
    let n_held = (holdout * heads.len() as f64).ceil() as usize;
    let kept = heads.split_off(n_held);
    facts.extend(kept);
    (facts, heads)
}

/// Train graph (with validation queries) and an entity-disjoint inference
/// graph (with test queries), both following the planted rule.
pub fn generate_planted_kg(spec: &PlantedRuleSpec) -> Result<RawSplit> {
    spec.validate()?;
    let mut rng = stream(spec.seed, Purpose::Synth, 0, 0, 0);
    let (train, valid) = planted_graph(spec, spec.train_entities, spec.valid_fraction, "tr", &mut rng);
    let (inference, test) = planted_graph(spec, spec.inference_entities, spec.test_fraction, "ind", &mut rng);
    Ok(RawSplit { train, valid, inference, inference_valid: Vec::new(), test })
}
