//! Hop-by-hop propagation of query-conditioned embeddings with cumulative
//! path scoring and Top-k frontier pruning.
//!
//! Hop `l` takes the selected entities of hop `l − 1` and, for every retained
//! edge `(x, r, o)` leaving them, adds `h_x + N_x · φ(r_q, r)` into `h_o`,
//! where `N_x` counts the walks that reached `x`. With no pruning this makes
//! `h_o` exactly the sum, over all walks ending at `o`, of the messages on
//! their edges. [`MessageWeighting::PerEdge`] drops the `N_x` factor.
//!
//! The query head enters hop 1 with a zero embedding. Each reached entity also
//! gets a cumulative path score: the best predecessor score plus `w_path · h_o`.
//! The `K` best entities by that score become the next hop's predecessors.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::masking::{HopMask, QueryMasker};
use crate::model::{cumulative_score, node_score, MessageTable, ModelParams};
use crate::rng::{stream, Purpose};
use crate::scalar::{dot, Scalar};

/// A `(head, relation, ?)` query. `excluded` removes one base fact (and its
/// inverse) from the graph, so a training triple cannot answer itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Query {
    pub head: EntityId,
    pub relation: RelationId,
    pub excluded: Option<Triple>,
}

impl Query {
    pub fn new(head: EntityId, relation: RelationId) -> Self {
        Self { head, relation, excluded: None }
    }

    pub fn excluding(mut self, fact: Triple) -> Self {
        self.excluded = Some(fact);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreAgg {
    /// Best predecessor path.
    Max,
    /// Sum over incoming edges.
    Sum,
}

/// How often an edge message enters its target embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MessageWeighting {
    /// Once per walk through the edge.
    WalkCount,
    /// Once per edge.
    PerEdge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReasonerConfig {
    /// Number of hops `L ≥ 1`.
    pub hops: usize,
    /// Frontier width `K`; `None` keeps everything.
    pub top_k: Option<usize>,
    pub score_agg: ScoreAgg,
    /// When false, pruning ranks by the current node score alone.
    pub cumulative: bool,
    /// Elementwise `max(0, ·)` after each hop's aggregation.
    pub rectifier: bool,
    pub weighting: MessageWeighting,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        Self {
            hops: 3,
            top_k: Some(150),
            score_agg: ScoreAgg::Max,
            cumulative: true,
            rectifier: false,
            weighting: MessageWeighting::WalkCount,
        }
    }
}

/// Entities reached at one hop with their embeddings and cumulative scores.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontierState<T> {
    pub hop: usize,
    /// Reached entities, ascending.
    pub entities: Vec<EntityId>,
    /// Row-major `entities.len() × d`.
    pub embeddings: Vec<T>,
    pub path_scores: Vec<T>,
    /// Number of retained walks of length `hop` from the query head.
    pub walk_counts: Vec<T>,
    /// Index into the previous frontier of the best-scoring predecessor.
    pub best_pred: Vec<Option<u32>>,
    /// Indices into `entities` kept by Top-k, ascending.
    pub selected: Vec<u32>,
    dim: usize,
}

impl<T: Scalar> FrontierState<T> {
    /// Hop 0: the query head alone, with a zero embedding and score.
    pub fn initial(head: EntityId, dim: usize) -> Self {
        Self {
            hop: 0,
            entities: vec![head],
            embeddings: vec![T::zero(); dim],
            path_scores: vec![T::zero()],
            walk_counts: vec![T::one()],
            best_pred: vec![None],
            selected: vec![0],
            dim,
        }
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    #[inline]
    pub fn embedding(&self, i: usize) -> &[T] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn index_of(&self, entity: EntityId) -> Option<usize> {
        self.entities.binary_search(&entity).ok()
    }

    pub fn embedding_of(&self, entity: EntityId) -> Option<&[T]> {
        self.index_of(entity).map(|i| self.embedding(i))
    }

    pub fn selected_entities(&self) -> Vec<EntityId> {
        self.selected.iter().map(|&i| self.entities[i as usize]).collect()
    }
}

/// Edge replayed by the backward pass: indices into the previous and new frontier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceEdge {
    pub src: u32,
    pub rel: RelationId,
    pub dst: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HopRecord {
    pub edges: Vec<TraceEdge>,
    /// Rectifier activity per output entry, when the rectifier is on.
    pub active: Option<Vec<bool>>,
}

/// Everything needed to replay a forward pass backward.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    pub query: Query,
    pub config: ReasonerConfig,
    pub num_entities: usize,
    pub dim: usize,
    pub num_relations: usize,
    pub num_mix: usize,
    /// `frontiers[l]` is the state after hop `l`; shorter than `L + 1` after early termination.
    pub frontiers: Vec<FrontierState<T>>,
    /// `hops[l − 1]` produced `frontiers[l]`.
    pub hops: Vec<HopRecord>,
    pub masks: Vec<Option<HopMask>>,
    pub scores: Vec<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    /// Frontier at hop `L`, if propagation got that far.
    pub fn final_frontier(&self) -> Option<&FrontierState<T>> {
        self.frontiers.get(self.config.hops).filter(|f| f.hop == self.config.hops)
    }

    /// Multiplicity of the message on an edge leaving `frontiers[hop_index][src]`.
    #[inline]
    pub fn edge_weight(&self, hop_index: usize, src: usize) -> T {
        match self.config.weighting {
            MessageWeighting::WalkCount => self.frontiers[hop_index].walk_counts[src],
            MessageWeighting::PerEdge => T::one(),
        }
    }

    /// Recomputes the final scores from the recorded structure only.
    pub fn replay(&self, params: &ModelParams<T>) -> Vec<T> {
        let d = self.dim;
        let messages = MessageTable::new(params, self.query.relation);
        let mut prev = vec![T::zero(); d];
        let mut scores = vec![T::zero(); self.num_entities];
        for (l, rec) in self.hops.iter().enumerate() {
            let n_out = self.frontiers[l + 1].len();
            let mut h = vec![T::zero(); n_out * d];
            for e in &rec.edges {
                let (s, o) = (e.src as usize, e.dst as usize);
                let phi = messages.get(e.rel);
                let w = self.edge_weight(l, s);
                for k in 0..d {
                    h[o * d + k] += prev[s * d + k] + w * phi[k];
                }
            }
            if rec.active.is_some() {
                h.iter_mut().for_each(|x| *x = x.max(T::zero()));
            }
            prev = h;
        }
        if let Some(f) = self.final_frontier() {
            for (i, &e) in f.entities.iter().enumerate() {
                scores[e as usize] = dot(&params.w_out, &prev[i * d..(i + 1) * d]);
            }
        }
        scores
    }
}

/// How a forward pass draws its masks.
#[derive(Clone, Copy, Debug)]
pub struct MaskContext<'a> {
    pub masker: QueryMasker<'a>,
    pub purpose: Purpose,
    pub epoch: u64,
    pub query_index: u64,
}

impl MaskContext<'_> {
    pub fn hop_mask(&self, kg: &KnowledgeGraph, query: &Query, frontier: &[EntityId], hop: usize) -> HopMask {
        let mut rng = stream(self.masker.config.seed, self.purpose, self.epoch, self.query_index, hop as u64);
        self.masker.hop_mask(kg, query.relation, frontier, hop, &mut rng)
    }
}

#[inline]
fn is_excluded(kg: &KnowledgeGraph, query: &Query, x: EntityId, rel: RelationId, o: EntityId) -> bool {
    let Some(f) = query.excluded else { return false };
    if x == f.head && rel == f.rel && o == f.tail {
        return true;
    }
    kg.relations().inverse(f.rel).is_some_and(|inv| inv != f.rel && x == f.tail && rel == inv && o == f.head)
}

/// Indices of the `k` highest-scoring entries, ties broken by ascending entity id,
/// returned in ascending index order.
fn topk_indices<T: Scalar>(entities: &[EntityId], scores: &[T], k: Option<usize>) -> Vec<u32> {
    let n = entities.len();
    match k {
        Some(k) if k < n => {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| {
                let (sa, sb) = (scores[a as usize], scores[b as usize]);
                sb.partial_cmp(&sa).unwrap_or(Ordering::Equal).then(entities[a as usize].cmp(&entities[b as usize]))
            });
            idx.truncate(k);
            idx.sort_unstable();
            idx
        }
        _ => (0..n as u32).collect(),
    }
}

/// Entities kept by Top-k over cumulative path scores.
pub fn select_topk<T: Scalar>(frontier: &FrontierState<T>, k: usize) -> Vec<EntityId> {
    assert!(k >= 1, "K must be at least 1");
    topk_indices(&frontier.entities, &frontier.path_scores, Some(k))
        .into_iter()
        .map(|i| frontier.entities[i as usize])
        .collect()
}

/// Reusable dense entity → slot map.
struct SlotMap {
    slots: Vec<u32>,
    touched: Vec<EntityId>,
}

impl SlotMap {
    fn new(n: usize) -> Self {
        Self { slots: vec![u32::MAX; n], touched: Vec::new() }
    }

    fn clear(&mut self) {
        for &e in &self.touched {
            self.slots[e as usize] = u32::MAX;
        }
        self.touched.clear();
    }
}

#[allow(clippy::too_many_arguments)]
fn propagate_impl<T: Scalar>(
    kg: &KnowledgeGraph,
    params: &ModelParams<T>,
    messages: &MessageTable<T>,
    query: &Query,
    prev: &FrontierState<T>,
    mask: Option<&HopMask>,
    config: &ReasonerConfig,
    slots: &mut SlotMap,
) -> (FrontierState<T>, HopRecord) {
    let d = params.dim();
    let hop = prev.hop + 1;

    // Retained edges, in predecessor order then adjacency order.
    let mut raw_edges: Vec<(u32, RelationId, EntityId)> = Vec::new();
    for &si in &prev.selected {
        let x = prev.entities[si as usize];
        for e in kg.out_edges(x) {
            if mask.is_some_and(|m| !m.is_retained(e.rel)) || is_excluded(kg, query, x, e.rel, e.tail) {
                continue;
            }
            raw_edges.push((si, e.rel, e.tail));
            if slots.slots[e.tail as usize] == u32::MAX {
                slots.slots[e.tail as usize] = 0;
                slots.touched.push(e.tail);
            }
        }
    }

    let mut entities = slots.touched.clone();
    entities.sort_unstable();
    for (i, &e) in entities.iter().enumerate() {
        slots.slots[e as usize] = i as u32;
    }
    let n_out = entities.len();

    let mut embeddings = vec![T::zero(); n_out * d];
    let mut edges = Vec::with_capacity(raw_edges.len());
    let mut walk_counts = vec![T::zero(); n_out];
    let mut pred_agg: Vec<Option<T>> = vec![None; n_out];
    let mut best_pred: Vec<Option<u32>> = vec![None; n_out];
    for &(src, rel, tail) in &raw_edges {
        let dst = slots.slots[tail as usize];
        edges.push(TraceEdge { src, rel, dst });
        let (s, o) = (src as usize, dst as usize);
        let phi = messages.get(rel);
        let h_pred = prev.embedding(s);
        let h_out = &mut embeddings[o * d..(o + 1) * d];
        let n_src = prev.walk_counts[s];
        let w = match config.weighting {
            MessageWeighting::WalkCount => n_src,
            MessageWeighting::PerEdge => T::one(),
        };
        for k in 0..d {
            h_out[k] += h_pred[k] + w * phi[k];
        }
        walk_counts[o] += n_src;

        let contribution = if config.cumulative { prev.path_scores[s] } else { T::zero() };
        pred_agg[o] = Some(match (pred_agg[o], config.score_agg) {
            (None, _) => {
                best_pred[o] = Some(src);
                contribution
            }
            (Some(cur), ScoreAgg::Max) => {
                if contribution > cur {
                    best_pred[o] = Some(src);
                    contribution
                } else {
                    cur
                }
            }
            (Some(cur), ScoreAgg::Sum) => {
                if contribution > prev.path_scores[best_pred[o].unwrap() as usize] {
                    best_pred[o] = Some(src);
                }
                cur + contribution
            }
        });
    }
    slots.clear();

    let active = config.rectifier.then(|| {
        embeddings
            .iter_mut()
            .map(|x| {
                let on = *x > T::zero();
                if !on {
                    *x = T::zero();
                }
                on
            })
            .collect()
    });

    let path_scores: Vec<T> = (0..n_out)
        .map(|o| {
            let current = node_score(params, &embeddings[o * d..(o + 1) * d]);
            cumulative_score(pred_agg[o].unwrap_or_else(T::zero), current)
        })
        .collect();
    let selected = topk_indices(&entities, &path_scores, config.top_k);

    (
        FrontierState { hop, entities, embeddings, path_scores, walk_counts, best_pred, selected, dim: d },
        HopRecord { edges, active },
    )
}

/// One hop of propagation from the selected entities of `prev`.
pub fn propagate_hop<T: Scalar>(
    kg: &KnowledgeGraph,
    params: &ModelParams<T>,
    query: &Query,
    prev: &FrontierState<T>,
    mask: Option<&HopMask>,
    config: &ReasonerConfig,
) -> (FrontierState<T>, HopRecord) {
    let messages = MessageTable::new(params, query.relation);
    let mut slots = SlotMap::new(kg.num_entities());
    propagate_impl(kg, params, &messages, query, prev, mask, config, &mut slots)
}

/// Runs `L` hops of mask → propagate → Top-k and scores every entity.
///
/// Reached entities score `w_out · h^(L)`; everything else scores 0.
pub fn forward<T: Scalar>(
    kg: &KnowledgeGraph,
    params: &ModelParams<T>,
    query: &Query,
    config: &ReasonerConfig,
    masking: Option<&MaskContext<'_>>,
) -> Result<(Vec<T>, ForwardTrace<T>)> {
    kg.check_entity(query.head)?;
    if config.hops == 0 {
        return Err(Error::Config("number of hops must be at least 1".into()));
    }
    if config.top_k == Some(0) {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if params.num_relations() != kg.num_relations() {
        return Err(Error::VocabularyMismatch(format!(
            "parameters cover {} relations, graph has {}",
            params.num_relations(),
            kg.num_relations()
        )));
    }
    if query.relation as usize >= kg.num_relations() {
        return Err(Error::UnknownRelation(format!("id {}", query.relation)));
    }

    let d = params.dim();
    let messages = MessageTable::new(params, query.relation);
    let mut slots = SlotMap::new(kg.num_entities());
    let mut frontiers = vec![FrontierState::initial(query.head, d)];
    let mut hops = Vec::with_capacity(config.hops);
    let mut masks = Vec::with_capacity(config.hops);

    for hop in 1..=config.hops {
        let prev = frontiers.last().expect("initial frontier");
        if prev.selected.is_empty() {
            break;
        }
        let mask = masking.map(|m| m.hop_mask(kg, query, &prev.selected_entities(), hop));
        let (next, record) = propagate_impl(kg, params, &messages, query, prev, mask.as_ref(), config, &mut slots);
        frontiers.push(next);
        hops.push(record);
        masks.push(mask);
    }

    let mut trace = ForwardTrace {
        query: *query,
        config: *config,
        num_entities: kg.num_entities(),
        dim: d,
        num_relations: params.num_relations(),
        num_mix: params.mix.len(),
        frontiers,
        hops,
        masks,
        scores: Vec::new(),
    };
    let mut scores = vec![T::zero(); kg.num_entities()];
    if let Some(f) = trace.final_frontier() {
        for (i, &e) in f.entities.iter().enumerate() {
            scores[e as usize] = dot(&params.w_out, f.embedding(i));
        }
    }
    trace.scores = scores.clone();
    Ok((scores, trace))
}
