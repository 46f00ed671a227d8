mod common;

use cpsr::graph::{EntityId, KnowledgeGraph};
use cpsr::masking::MaskConfig;
use cpsr::model::ModelParams;
use cpsr::oracle::finite_diff_gradients;
use cpsr::reasoner::{forward, MaskContext, MessageWeighting, Query, ReasonerConfig, ScoreAgg};
use cpsr::rules::{mine_confidence, MiningScope};
use cpsr::trainer::{backward, multiclass_loss};
use cpsr::{Purpose, QueryMasker};
use proptest::prelude::*;
use rand::Rng;

const STEP: f64 = 1e-5;

/// `|a − f| / max(|a|, |f|, floor)`; the floor keeps entries that are zero
/// up to rounding from producing meaningless ratios.
fn rel_err(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(1e-4)
}

/// Rounding error of a central difference of a loss computed from `scores`.
fn fd_rounding_noise(scores: &[f64]) -> f64 {
    let scale = scores.iter().fold(1.0f64, |m, s| m.max(s.abs()));
    4.0 * f64::EPSILON * scale / STEP
}

fn check(
    kg: &KnowledgeGraph,
    params: &ModelParams<f64>,
    query: Query,
    target: EntityId,
    cfg: &ReasonerConfig,
    ctx: Option<&MaskContext<'_>>,
) -> Result<(), TestCaseError> {
    let (scores, trace) = forward(kg, params, &query, cfg, ctx).unwrap();
    let analytic = backward(&trace, params, target).unwrap();
    let numeric = finite_diff_gradients(
        |p: &ModelParams<f64>| multiclass_loss(&forward(kg, p, &query, cfg, ctx).unwrap().0, target),
        params,
        STEP,
    );
    let noise = fd_rounding_noise(&scores);
    for (b, (ga, gn)) in analytic.blocks().iter().zip(numeric.blocks()).enumerate() {
        for (i, (&a, &f)) in ga.iter().zip(gn).enumerate() {
            prop_assert!(
                (a - f).abs() <= noise || rel_err(a, f) <= 1e-5,
                "block {b} entry {i}: analytic {a}, numeric {f}"
            );
        }
    }
    prop_assert!(analytic.w_path.iter().all(|&g| g == 0.0));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn analytic_gradients_match_finite_differences(
        seed in any::<u64>(), hops in 1usize..=3, dim in 1usize..=4, shared in any::<bool>(), per_edge in any::<bool>(),
    ) {
        let mut rng = common::rng(seed);
        let kg = common::random_graph(&mut rng, 10, 3, 20);
        let params = ModelParams::<f64>::init(kg.num_relations(), dim, shared, &mut rng);
        let head = rng.gen_range(0..kg.num_entities() as EntityId);
        let target = rng.gen_range(0..kg.num_entities() as EntityId);
        let rq = rng.gen_range(0..kg.num_relations() as u32);
        let cfg = ReasonerConfig {
            hops,
            top_k: None,
            weighting: if per_edge { MessageWeighting::PerEdge } else { MessageWeighting::WalkCount },
            ..Default::default()
        };
        check(&kg, &params, Query::new(head, rq), target, &cfg, None)?;
    }

    #[test]
    fn gradients_follow_the_masked_structure(seed in any::<u64>(), hops in 1usize..=3) {
        let mut rng = common::rng(seed);
        let kg = common::random_graph(&mut rng, 10, 4, 25);
        let params = ModelParams::<f64>::init(kg.num_relations(), 3, false, &mut rng);
        let table = mine_confidence(&kg);
        let mask = MaskConfig { p_e: 0.8, p_tau: 0.6, seed, scope: MiningScope::Augmented };
        let ctx = MaskContext { masker: QueryMasker::new(&table, mask, None), purpose: Purpose::TrainMask, epoch: 1, query_index: 0 };
        let cfg = ReasonerConfig { hops, top_k: None, score_agg: ScoreAgg::Sum, ..Default::default() };
        let target = rng.gen_range(0..kg.num_entities() as EntityId);
        check(&kg, &params, Query::new(0, 0), target, &cfg, Some(&ctx))?;
    }
}
