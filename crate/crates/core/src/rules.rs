//! Single-rule confidences `C(r ⇒ r_q)` counted per head entity.
//!
//! For each entity `v` let `R(v)` be the set of relations on its outgoing
//! edges. Then
//!
//! ```text
//! support_den(r)      = |{v : r ∈ R(v)}|
//! support_num(r, r_q) = |{v : r ∈ R(v) ∧ r_q ∈ R(v)}|
//! C(r ⇒ r_q)          = support_num / support_den   (0 when support_den = 0)
//! ```

use std::io::Write;

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, RelationId, RelationVocab};
use crate::scalar::Scalar;

/// Dense confidence matrix indexed `[premise][conclusion]`, with integer supports.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfidenceTable {
    num_relations: usize,
    numerators: Vec<u32>,
    denominators: Vec<u32>,
}

impl ConfidenceTable {
    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    /// `(support_num, support_den)` for `premise ⇒ conclusion`.
    #[inline]
    pub fn support(&self, premise: RelationId, conclusion: RelationId) -> (u32, u32) {
        let (p, c) = (premise as usize, conclusion as usize);
        (self.numerators[p * self.num_relations + c], self.denominators[p])
    }

    #[inline]
    pub fn confidence<T: Scalar>(&self, premise: RelationId, conclusion: RelationId) -> T {
        let (num, den) = self.support(premise, conclusion);
        if den == 0 {
            T::zero()
        } else {
            T::of(num as f64) / T::of(den as f64)
        }
    }

    /// Writes `premise,conclusion,confidence,support_num,support_den` rows for every pair.
    pub fn write_csv<W: Write>(&self, mut w: W, relations: &RelationVocab) -> std::io::Result<()> {
        writeln!(w, "premise,conclusion,confidence,support_num,support_den")?;
        for p in 0..self.num_relations as RelationId {
            for c in 0..self.num_relations as RelationId {
                let (num, den) = self.support(p, c);
                writeln!(
                    w,
                    "{},{},{},{num},{den}",
                    relations.name(p),
                    relations.name(c),
                    self.confidence::<f64>(p, c)
                )?;
            }
        }
        Ok(())
    }
}

/// Which edges count towards `R(v)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MiningScope {
    /// Every edge of the graph, inverse and self-loop edges included.
    #[default]
    Augmented,
    /// Only the original facts; derived relations get zero support.
    BaseOnly,
}

pub fn mine_confidence(kg: &KnowledgeGraph) -> ConfidenceTable {
    mine_confidence_scoped(kg, MiningScope::Augmented)
}

pub fn mine_confidence_scoped(kg: &KnowledgeGraph, scope: MiningScope) -> ConfidenceTable {
    let n = kg.num_relations();
    let num_base = kg.relations().num_base() as RelationId;
    let mut numerators = vec![0u32; n * n];
    let mut denominators = vec![0u32; n];
    for v in 0..kg.num_entities() as u32 {
        let mut rels = kg.incident_relations(v).expect("entity in bounds");
        if scope == MiningScope::BaseOnly {
            // Base ids come first and the list is sorted.
            rels = &rels[..rels.partition_point(|&r| r < num_base)];
        }
        for &p in rels {
            denominators[p as usize] += 1;
            let row = &mut numerators[p as usize * n..(p as usize + 1) * n];
            for &c in rels {
                row[c as usize] += 1;
            }
        }
    }
    ConfidenceTable { num_relations: n, numerators, denominators }
}

/// `(C_max, C_avg)` of `C(r ⇒ r_q)` over the candidate premises.
pub fn confidence_row_stats<T: Scalar>(
    table: &ConfidenceTable,
    query_rel: RelationId,
    candidates: &[RelationId],
) -> Result<(T, T)> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut max = T::neg_infinity();
    let mut sum = T::zero();
    for &r in candidates {
        let c = table.confidence::<T>(r, query_rel);
        max = max.max(c);
        sum += c;
    }
    Ok((max, sum / T::of(candidates.len() as f64)))
}
