//! Filtered ranking metrics (MRR, Hits@k) and the `p_e` sweep.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{EntityId, InductiveSplit, KnowledgeGraph, RelationId, Triple};
use crate::masking::{MaskConfig, QueryMasker};
use crate::model::ModelParams;
use crate::reasoner::{forward, MaskContext, Query, ReasonerConfig};
use crate::rng::Purpose;
use crate::rules::mine_confidence_scoped;
use crate::scalar::Scalar;
use crate::trainer::{fit, TrainConfig};

/// Running sums of reciprocal ranks and hits.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RankingMetrics {
    pub count: u64,
    pub rr_sum: f64,
    pub hits1: u64,
    pub hits3: u64,
    pub hits10: u64,
}

impl RankingMetrics {
    pub fn add_rank(&mut self, rank: usize) {
        assert!(rank >= 1, "ranks are 1-based");
        self.count += 1;
        self.rr_sum += 1.0 / rank as f64;
        self.hits1 += u64::from(rank <= 1);
        self.hits3 += u64::from(rank <= 3);
        self.hits10 += u64::from(rank <= 10);
    }

    pub fn from_ranks(ranks: impl IntoIterator<Item = usize>) -> Self {
        let mut m = Self::default();
        ranks.into_iter().for_each(|r| m.add_rank(r));
        m
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        self.rr_sum += other.rr_sum;
        self.hits1 += other.hits1;
        self.hits3 += other.hits3;
        self.hits10 += other.hits10;
    }

    fn frac(&self, n: u64) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            n as f64 / self.count as f64
        }
    }

    pub fn mrr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.rr_sum / self.count as f64
        }
    }

    pub fn hits_at_1(&self) -> f64 {
        self.frac(self.hits1)
    }

    pub fn hits_at_3(&self) -> f64 {
        self.frac(self.hits3)
    }

    pub fn hits_at_10(&self) -> f64 {
        self.frac(self.hits10)
    }
}

/// Rank of `target` among all entities, ignoring other known answers.
///
/// Ties count as the ceiling of the mean position within the tie group.
pub fn filtered_rank<T: Scalar>(scores: &[T], target: EntityId, known: &HashSet<EntityId>) -> usize {
    let s_t = scores[target as usize];
    let (mut higher, mut tied) = (0usize, 0usize);
    for (x, &s) in scores.iter().enumerate() {
        let x = x as EntityId;
        if x == target || known.contains(&x) {
            continue;
        }
        if s > s_t {
            higher += 1;
        } else if s == s_t {
            tied += 1;
        }
    }
    1 + higher + tied.div_ceil(2)
}

/// Every true answer of `(head, relation, ?)` known from facts and query sets.
#[derive(Clone, Debug, Default)]
pub struct KnownAnswers {
    answers: HashMap<(EntityId, RelationId), HashSet<EntityId>>,
}

impl KnownAnswers {
    /// Collects the graph's base facts plus the given query triples, in both directions.
    pub fn new(kg: &KnowledgeGraph, query_sets: &[&[Triple]]) -> Self {
        let mut answers: HashMap<(EntityId, RelationId), HashSet<EntityId>> = HashMap::new();
        let all = kg.base_triples().iter().chain(query_sets.iter().flat_map(|q| q.iter()));
        for t in all {
            answers.entry((t.head, t.rel)).or_default().insert(t.tail);
            if let Some(inv) = kg.relations().inverse(t.rel) {
                answers.entry((t.tail, inv)).or_default().insert(t.head);
            }
        }
        Self { answers }
    }

    /// Known answers other than `target`.
    pub fn filter_for(&self, head: EntityId, rel: RelationId, target: EntityId) -> HashSet<EntityId> {
        let mut set = self.answers.get(&(head, rel)).cloned().unwrap_or_default();
        set.remove(&target);
        set
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub reasoner: ReasonerConfig,
    /// Masking with fixed per-query streams; `None` disables it.
    pub mask: Option<MaskConfig>,
    pub workers: usize,
}

/// Ranks each query triple as a tail query and, when the graph has inverses,
/// as a head query. Confidences are mined on `kg` itself.
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    kg: &KnowledgeGraph,
    queries: &[Triple],
    known: &KnownAnswers,
    config: &EvalConfig,
) -> Result<RankingMetrics> {
    Ok(RankingMetrics::from_ranks(rank_queries(params, kg, queries, known, config)?))
}

/// Filtered ranks in query order: `[tail_0, head_0, tail_1, head_1, …]`.
pub fn rank_queries<T: Scalar>(
    params: &ModelParams<T>,
    kg: &KnowledgeGraph,
    queries: &[Triple],
    known: &KnownAnswers,
    config: &EvalConfig,
) -> Result<Vec<usize>> {
    if params.num_relations() != kg.num_relations() {
        return Err(Error::VocabularyMismatch(format!(
            "parameters cover {} relations, graph has {}",
            params.num_relations(),
            kg.num_relations()
        )));
    }
    let table = config.mask.map(|m| mine_confidence_scoped(kg, m.scope));
    let masker =
        config.mask.zip(table.as_ref()).map(|(cfg, table)| QueryMasker::new(table, cfg, kg.relations().self_loop()));

    let mut jobs: Vec<(u64, Query, EntityId)> = Vec::with_capacity(2 * queries.len());
    for (i, t) in queries.iter().enumerate() {
        kg.check_entity(t.head)?;
        kg.check_entity(t.tail)?;
        jobs.push((2 * i as u64, Query::new(t.head, t.rel), t.tail));
        if let Some(inv) = kg.relations().inverse(t.rel) {
            jobs.push((2 * i as u64 + 1, Query::new(t.tail, inv), t.head));
        }
    }

    let rank_one = |&(idx, q, target): &(u64, Query, EntityId)| -> Result<usize> {
        let ctx = masker.map(|masker| MaskContext { masker, purpose: Purpose::EvalMask, epoch: 0, query_index: idx });
        let (scores, _) = forward(kg, params, &q, &config.reasoner, ctx.as_ref())?;
        Ok(filtered_rank(&scores, target, &known.filter_for(q.head, q.relation, target)))
    };

    if config.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(rank_one).collect())
    } else {
        jobs.iter().map(rank_one).collect()
    }
}

/// Test-set metrics on the inference graph.
pub fn evaluate_split<T: Scalar>(
    params: &ModelParams<T>,
    split: &InductiveSplit,
    config: &EvalConfig,
) -> Result<RankingMetrics> {
    let known = KnownAnswers::new(&split.inference, &[&split.inference_valid, &split.test]);
    evaluate(params, &split.inference, &split.test, &known, config)
}

/// Trains and evaluates once per `p_e` value with a shared seed; returns `(p_e, test MRR)`.
pub fn sweep_pe<T: Scalar>(split: &InductiveSplit, config: &TrainConfig, values: &[f64]) -> Result<Vec<(f64, f64)>> {
    let mut rows = Vec::with_capacity(values.len());
    for &p_e in values {
        if !(0.0..=1.0).contains(&p_e) {
            return Err(Error::Config(format!("p_e = {p_e} is outside [0, 1]")));
        }
        let cfg = TrainConfig { p_e, ..config.clone() };
        let outcome = fit::<T>(split, &cfg, None, |_, _, _| Ok(()))?;
        let metrics = evaluate_split(&outcome.best, split, &cfg.eval_config())?;
        rows.push((p_e, metrics.mrr()));
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: std::io::Write>(mut w: W, rows: &[(f64, f64)]) -> std::io::Result<()> {
    writeln!(w, "p_e,mrr")?;
    for (p, m) in rows {
        writeln!(w, "{p},{m}")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(xs: &[EntityId]) -> HashSet<EntityId> {
        xs.iter().copied().collect()
    }

    #[test]
    fn rank_examples() {
        assert_eq!(filtered_rank(&[0.9, 0.1, 0.5], 0, &set(&[])), 1);
        // Target tied with a filtered true tail: the tail is ignored.
        assert_eq!(filtered_rank(&[0.5, 0.5, 0.1], 0, &set(&[1])), 1);
        // Unfiltered tie → ceil of mean position (1, 2) = 2.
        assert_eq!(filtered_rank(&[0.5, 0.5], 0, &set(&[])), 2);
        // Three-way tie behind one better entity: positions 2..4, mean 3.
        assert_eq!(filtered_rank(&[0.5, 0.5, 0.5, 0.9], 0, &set(&[])), 3);
    }

    #[test]
    fn metric_arithmetic() {
        let all_one = RankingMetrics::from_ranks([1, 1, 1]);
        assert_eq!(all_one.mrr(), 1.0);
        assert_eq!(all_one.hits_at_10(), 1.0);
        let m = RankingMetrics::from_ranks([1, 2]);
        assert_eq!(m.mrr(), 0.75);
        assert_eq!(m.hits_at_1(), 0.5);
        assert_eq!(m.hits_at_3(), 1.0);
        assert_eq!(RankingMetrics::default().mrr(), 0.0);
    }

    #[test]
    fn sweep_csv_format() {
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &[(0.3, 0.5)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "p_e,mrr\n0.3,0.5\n");
    }

    proptest! {
        #[test]
        fn metric_bounds(ranks in prop::collection::vec(1usize..50, 1..40)) {
            let m = RankingMetrics::from_ranks(ranks);
            prop_assert!(m.mrr() > 0.0 && m.mrr() <= 1.0);
            prop_assert!(m.hits_at_1() <= m.hits_at_3() && m.hits_at_3() <= m.hits_at_10());
            prop_assert!(m.hits_at_10() <= 1.0);
        }

        #[test]
        fn low_scoring_extra_entity_keeps_rank(
            scores in prop::collection::vec(-3i32..3, 2..20), target_pick in any::<prop::sample::Index>(), delta in 1i32..5,
        ) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let target = target_pick.index(scores.len()) as EntityId;
            let r0 = filtered_rank(&scores, target, &HashSet::new());
            let mut more = scores.clone();
            more.push(scores[target as usize] - f64::from(delta));
            prop_assert_eq!(filtered_rank(&more, target, &HashSet::new()), r0);
        }
    }
}
