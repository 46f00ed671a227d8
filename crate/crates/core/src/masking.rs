//! Query-dependent relation masking.
//!
//! At every hop the relations leaving the current frontier are candidates.
//! Each candidate `r` gets a drop probability from its confidence towards the
//! query relation,
//!
//! ```text
//! p = min((C_max − C(r ⇒ r_q)) / (C_max − C_avg) · p_e, p_τ)
//! ```
//!
//! and is removed for that hop with probability `p`. Relations at `C_max`
//! therefore always survive, and no relation is dropped with probability
//! above `p_τ`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationId};
use crate::rules::{confidence_row_stats, ConfidenceTable, MiningScope};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskConfig {
    /// Probability multiplier.
    pub p_e: f64,
    /// Upper cap on any drop probability.
    pub p_tau: f64,
    pub seed: u64,
    /// Edges the confidences are mined over.
    pub scope: MiningScope,
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p_e", self.p_e), ("p_tau", self.p_tau)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// The retained relation set for one hop of one query.
#[derive(Clone, Debug, PartialEq)]
pub struct HopMask {
    /// 1-based hop index.
    pub hop: usize,
    candidates: Vec<RelationId>,
    drop_probabilities: Vec<f64>,
    retained: Vec<RelationId>,
    keep: Vec<bool>,
    draws: usize,
}

impl HopMask {
    /// A mask that keeps every candidate.
    pub fn keep_all(hop: usize, num_relations: usize, candidates: Vec<RelationId>) -> Self {
        let probs = vec![0.0; candidates.len()];
        let mut keep = vec![false; num_relations];
        for &r in &candidates {
            keep[r as usize] = true;
        }
        Self { hop, retained: candidates.clone(), candidates, drop_probabilities: probs, keep, draws: 0 }
    }

    #[inline]
    pub fn is_retained(&self, r: RelationId) -> bool {
        self.keep.get(r as usize).copied().unwrap_or(false)
    }

    pub fn candidates(&self) -> &[RelationId] {
        &self.candidates
    }

    pub fn retained(&self) -> &[RelationId] {
        &self.retained
    }

    /// Drop probability per candidate, aligned with [`HopMask::candidates`].
    pub fn drop_probabilities(&self) -> &[f64] {
        &self.drop_probabilities
    }

    /// Number of Bernoulli draws consumed from the stream.
    pub fn draws(&self) -> usize {
        self.draws
    }
}

/// Union of `R(v)` over the frontier, sorted.
pub fn candidate_relations(kg: &KnowledgeGraph, frontier: &[EntityId]) -> Vec<RelationId> {
    let mut seen = vec![false; kg.num_relations()];
    for &v in frontier {
        for &r in kg.incident_relations(v).expect("frontier entity in bounds") {
            seen[r as usize] = true;
        }
    }
    seen.iter().enumerate().filter(|(_, &s)| s).map(|(r, _)| r as RelationId).collect()
}

/// Drop probability for a relation with confidence `c`; zero on a degenerate hop.
pub fn drop_probability<T: Scalar>(c: T, c_max: T, c_avg: T, p_e: T, p_tau: T) -> T {
    let spread = c_max - c_avg;
    if spread <= T::zero() {
        return T::zero();
    }
    ((c_max - c) / spread * p_e).min(p_tau)
}

/// Drops each candidate independently with its probability.
///
/// Candidates with probability 0 are retained without consuming a draw, so
/// the maximum-confidence relations cannot be lost.
pub fn sample_hop_mask<R: Rng + ?Sized>(
    hop: usize,
    num_relations: usize,
    candidates: &[RelationId],
    probabilities: &[f64],
    rng: &mut R,
) -> HopMask {
    assert_eq!(candidates.len(), probabilities.len(), "one probability per candidate");
    let mut keep = vec![false; num_relations];
    let mut retained = Vec::with_capacity(candidates.len());
    let mut draws = 0;
    for (&r, &p) in candidates.iter().zip(probabilities) {
        let dropped = if p > 0.0 {
            draws += 1;
            rng.gen::<f64>() < p
        } else {
            false
        };
        if !dropped {
            keep[r as usize] = true;
            retained.push(r);
        }
    }
    HopMask { hop, candidates: candidates.to_vec(), drop_probabilities: probabilities.to_vec(), retained, keep, draws }
}

/// Masking policy for one graph: mined confidences plus the sampling config.
#[derive(Clone, Copy, Debug)]
pub struct QueryMasker<'a> {
    pub table: &'a ConfidenceTable,
    pub config: MaskConfig,
    /// Relation that is never masked nor counted in the hop statistics (the self-loop).
    pub exempt: Option<RelationId>,
}

impl<'a> QueryMasker<'a> {
    pub fn new(table: &'a ConfidenceTable, config: MaskConfig, exempt: Option<RelationId>) -> Self {
        Self { table, config, exempt }
    }

    pub fn probabilities(&self, query_rel: RelationId, candidates: &[RelationId]) -> Vec<f64> {
        let scored: Vec<RelationId> = candidates.iter().copied().filter(|&r| Some(r) != self.exempt).collect();
        let Ok((c_max, c_avg)) = confidence_row_stats::<f64>(self.table, query_rel, &scored) else {
            return vec![0.0; candidates.len()];
        };
        candidates
            .iter()
            .map(|&r| {
                if Some(r) == self.exempt {
                    0.0
                } else {
                    let c = self.table.confidence::<f64>(r, query_rel);
                    drop_probability(c, c_max, c_avg, self.config.p_e, self.config.p_tau)
                }
            })
            .collect()
    }

    pub fn hop_mask<R: Rng + ?Sized>(
        &self,
        kg: &KnowledgeGraph,
        query_rel: RelationId,
        frontier: &[EntityId],
        hop: usize,
        rng: &mut R,
    ) -> HopMask {
        let candidates = candidate_relations(kg, frontier);
        let probs = self.probabilities(query_rel, &candidates);
        sample_hop_mask(hop, kg.num_relations(), &candidates, &probs, rng)
    }
}
