//! Multi-class log-loss, reverse-mode gradients through a recorded forward
//! pass, Adam, and the training loop.
//!
//! Top-k selection and relation masking are discrete choices fixed by the
//! forward pass; gradients flow only through the structure they retained.
//! Consequently `w_path`, which only steers Top-k, never receives gradient.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, KnownAnswers, RankingMetrics};
use crate::graph::{EntityId, GraphOptions, InductiveSplit, KnowledgeGraph};
use crate::masking::{MaskConfig, QueryMasker};
use crate::matrix::Matrix;
use crate::model::{Gradients, ModelParams};
use crate::reasoner::{forward, ForwardTrace, MaskContext, Query, ReasonerConfig};
use crate::rng::{stream, Purpose};
use crate::rules::{mine_confidence_scoped, ConfidenceTable, MiningScope};
use crate::scalar::{add_assign, axpy, Scalar};

/// `−s_target + log Σ_x exp(s_x)`, with max subtraction.
pub fn multiclass_loss<T: Scalar>(scores: &[T], target: EntityId) -> T {
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = scores.iter().map(|&s| (s - max).exp()).sum();
    (max - scores[target as usize]) + sum.ln()
}

/// Loss and `∂loss/∂score` for every entity.
fn loss_and_score_grad<T: Scalar>(scores: &[T], target: EntityId) -> (T, Vec<T>) {
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let mut probs: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: T = probs.iter().copied().sum();
    probs.iter_mut().for_each(|p| *p /= sum);
    probs[target as usize] -= T::one();
    ((max - scores[target as usize]) + sum.ln(), probs)
}

/// Gradient of one query. Only the query relation's mixing matrix can be non-zero.
#[derive(Clone, Debug)]
pub struct QueryGradient<T> {
    pub loss: T,
    pub rel_emb: Matrix<T>,
    pub mix_index: usize,
    pub mix: Matrix<T>,
    pub w_out: Vec<T>,
}

impl<T: Scalar> QueryGradient<T> {
    /// Adds this gradient into a dense accumulator.
    pub fn add_to(&self, grads: &mut Gradients<T>) {
        add_assign(grads.rel_emb.as_mut_slice(), self.rel_emb.as_slice());
        add_assign(grads.mix[self.mix_index].as_mut_slice(), self.mix.as_slice());
        add_assign(&mut grads.w_out, &self.w_out);
    }

    pub fn into_dense(self, params: &ModelParams<T>) -> Gradients<T> {
        let mut g = params.zeros_like();
        self.add_to(&mut g);
        g
    }
}

fn check_trace<T: Scalar>(trace: &ForwardTrace<T>, params: &ModelParams<T>) -> Result<()> {
    let mismatch = |what: &str, a: usize, b: usize| Err(Error::TraceMismatch(format!("{what}: trace {a}, params {b}")));
    if trace.dim != params.dim() {
        return mismatch("dimension", trace.dim, params.dim());
    }
    if trace.num_relations != params.num_relations() {
        return mismatch("relations", trace.num_relations, params.num_relations());
    }
    if trace.num_mix != params.mix.len() {
        return mismatch("mixing matrices", trace.num_mix, params.mix.len());
    }
    if trace.scores.len() != trace.num_entities {
        return mismatch("scores", trace.scores.len(), trace.num_entities);
    }
    Ok(())
}

/// Reverse pass for a single query: loss and compact gradient.
pub fn query_gradient<T: Scalar>(
    trace: &ForwardTrace<T>,
    params: &ModelParams<T>,
    target: EntityId,
) -> Result<QueryGradient<T>> {
    check_trace(trace, params)?;
    if target as usize >= trace.num_entities {
        return Err(Error::EntityOutOfBounds(target));
    }
    let d = params.dim();
    let n_rel = params.num_relations();
    let q = trace.query.relation;
    let mix_index = params.mix_index(q);
    let (loss, g_scores) = loss_and_score_grad(&trace.scores, target);

    let mut out = QueryGradient {
        loss,
        rel_emb: Matrix::zeros(n_rel, d),
        mix_index,
        mix: Matrix::zeros(2 * d, d),
        w_out: vec![T::zero(); d],
    };
    let Some(last) = trace.final_frontier() else {
        return Ok(out);
    };

    // ∂/∂h at the final hop, and w_out.
    let mut g_h = vec![T::zero(); last.len() * d];
    for (i, &e) in last.entities.iter().enumerate() {
        let g = g_scores[e as usize];
        axpy(&mut out.w_out, g, last.embedding(i));
        axpy(&mut g_h[i * d..(i + 1) * d], g, &params.w_out);
    }

    // Back through the hops; collect ∂/∂φ per relation.
    let mut g_phi = Matrix::<T>::zeros(n_rel, d);
    let mut used = vec![false; n_rel];
    for l in (1..=trace.hops.len()).rev() {
        let rec = &trace.hops[l - 1];
        if let Some(active) = &rec.active {
            for (g, &on) in g_h.iter_mut().zip(active) {
                if !on {
                    *g = T::zero();
                }
            }
        }
        let mut g_prev = vec![T::zero(); trace.frontiers[l - 1].len() * d];
        for e in &rec.edges {
            let (s, o) = (e.src as usize, e.dst as usize);
            let g_o = &g_h[o * d..(o + 1) * d];
            axpy(g_phi.row_mut(e.rel as usize), trace.edge_weight(l - 1, s), g_o);
            used[e.rel as usize] = true;
            if l >= 2 {
                add_assign(&mut g_prev[s * d..(s + 1) * d], g_o);
            }
        }
        g_h = g_prev;
    }

    // φ_r = Wᵀ c_r with c_r = [h_q; h_r].
    let w = params.mix_for(q);
    let mut g_c = vec![T::zero(); 2 * d];
    for r in (0..n_rel).filter(|&r| used[r]) {
        let c = params.concat_input(q, r as u32);
        let gp = g_phi.row(r);
        out.mix.add_outer(&c, gp);
        w.mul_vec(gp, &mut g_c);
        add_assign(out.rel_emb.row_mut(q as usize), &g_c[..d]);
        add_assign(out.rel_emb.row_mut(r), &g_c[d..]);
    }
    Ok(out)
}

/// Gradient of the multi-class loss for `target`, replayed from `trace`.
pub fn backward<T: Scalar>(trace: &ForwardTrace<T>, params: &ModelParams<T>, target: EntityId) -> Result<Gradients<T>> {
    Ok(query_gradient(trace, params, target)?.into_dense(params))
}

/// Adam moments and hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ModelParams<T>, lr: f64) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients before touching anything.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &Gradients<T>,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) || !params.same_shape(&state.v) {
        return Err(Error::Dimension("parameter, gradient and moment shapes differ".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("adam_step"));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let lr = T::of(state.lr);
    let eps = T::of(state.eps);
    for (((p, g), m), v) in
        params.blocks_mut().into_iter().zip(grads.blocks()).zip(state.m.blocks_mut()).zip(state.v.blocks_mut())
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub reasoner: ReasonerConfig,
    pub dim: usize,
    pub p_e: f64,
    pub p_tau: f64,
    /// Mask relations during training.
    pub masking: bool,
    /// Mask relations (with fixed per-query streams) during evaluation.
    pub eval_mask: bool,
    /// Draw fresh training masks every epoch; otherwise each query keeps one mask.
    pub resample_masks: bool,
    pub mining: MiningScope,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub workers: usize,
    pub shared_mix: bool,
    pub graph: GraphOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            reasoner: ReasonerConfig::default(),
            dim: 64,
            p_e: 0.5,
            p_tau: 0.5,
            masking: true,
            eval_mask: true,
            resample_masks: true,
            mining: MiningScope::Augmented,
            batch_size: 100,
            lr: 5e-4,
            epochs: 20,
            seed: 0,
            workers: 1,
            shared_mix: false,
            graph: GraphOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.mask_config().validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.dim == 0 {
            return bad("d must be at least 1");
        }
        if self.reasoner.hops == 0 {
            return bad("L must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a finite non-negative number");
        }
        Ok(())
    }

    pub fn mask_config(&self) -> MaskConfig {
        MaskConfig { p_e: self.p_e, p_tau: self.p_tau, seed: self.seed, scope: self.mining }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig { reasoner: self.reasoner, mask: self.eval_mask.then(|| self.mask_config()), workers: self.workers }
    }
}

/// Parameters plus optimizer state after a number of completed epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub params: ModelParams<T>,
    pub optimizer: OptimizerState<T>,
    pub epochs_done: u64,
    pub best_valid_mrr: f64,
}

impl<T: Scalar> TrainState<T> {
    pub fn fresh(num_relations: usize, config: &TrainConfig) -> Self {
        let mut rng = stream(config.seed, Purpose::Init, 0, 0, 0);
        let params = ModelParams::init(num_relations, config.dim, config.shared_mix, &mut rng);
        let optimizer = OptimizerState::new(&params, config.lr);
        Self { params, optimizer, epochs_done: 0, best_valid_mrr: f64::NEG_INFINITY }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: u64,
    pub loss: f64,
    pub valid: RankingMetrics,
}

#[derive(Clone, Debug)]
pub struct FitOutcome<T> {
    /// Parameters with the best validation MRR (the latest ones when there is no validation set).
    pub best: ModelParams<T>,
    pub best_epoch: u64,
    pub state: TrainState<T>,
    pub log: Vec<EpochLog>,
}

/// A training query and its answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainingExample {
    pub query: Query,
    pub target: EntityId,
}

/// One query per base fact, plus the reversed query when inverses exist.
/// The fact itself is hidden from its own query.
pub fn training_examples(kg: &KnowledgeGraph) -> Vec<TrainingExample> {
    let mut out = Vec::with_capacity(2 * kg.base_triples().len());
    for &t in kg.base_triples() {
        out.push(TrainingExample { query: Query::new(t.head, t.rel).excluding(t), target: t.tail });
        if let Some(inv) = kg.relations().inverse(t.rel) {
            out.push(TrainingExample { query: Query::new(t.tail, inv).excluding(t), target: t.head });
        }
    }
    out
}

/// Per-example gradients, in input order.
pub(crate) fn batch_gradients<T: Scalar>(
    kg: &KnowledgeGraph,
    params: &ModelParams<T>,
    examples: &[(usize, TrainingExample)],
    config: &ReasonerConfig,
    masker: Option<QueryMasker<'_>>,
    epoch: u64,
    parallel: bool,
) -> Result<Vec<QueryGradient<T>>> {
    let one = |&(idx, ex): &(usize, TrainingExample)| -> Result<QueryGradient<T>> {
        let ctx =
            masker.map(|masker| MaskContext { masker, purpose: Purpose::TrainMask, epoch, query_index: idx as u64 });
        let (_, trace) = forward(kg, params, &ex.query, config, ctx.as_ref())?;
        query_gradient(&trace, params, ex.target)
    };
    if parallel {
        examples.par_iter().map(one).collect()
    } else {
        examples.iter().map(one).collect()
    }
}

/// Trains on every fact of `split.train`, selecting parameters by validation MRR.
///
/// `resume` continues from a saved state; `on_epoch` sees each epoch's log and state.
pub fn fit<T: Scalar>(
    split: &InductiveSplit,
    config: &TrainConfig,
    resume: Option<TrainState<T>>,
    mut on_epoch: impl FnMut(&EpochLog, &TrainState<T>, bool) -> Result<()>,
) -> Result<FitOutcome<T>> {
    config.validate()?;
    let kg = &split.train;
    let mut state = match resume {
        Some(s) => {
            if s.params.num_relations() != kg.num_relations() || s.params.dim() != config.dim {
                return Err(Error::VocabularyMismatch("resumed parameters do not fit this graph/config".into()));
            }
            s
        }
        None => TrainState::fresh(kg.num_relations(), config),
    };
    state.optimizer.lr = config.lr;

    let examples = training_examples(kg);
    let table: ConfidenceTable = mine_confidence_scoped(kg, config.mining);
    let masker = config.masking.then(|| QueryMasker::new(&table, config.mask_config(), kg.relations().self_loop()));
    let known = KnownAnswers::new(kg, &[&split.valid]);
    let eval_cfg = config.eval_config();
    let pool = if config.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.workers)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut best = state.params.clone();
    let mut best_epoch = state.epochs_done;
    let mut log = Vec::new();

    for epoch in state.epochs_done..config.epochs as u64 {
        let mask_epoch = if config.resample_masks { epoch } else { 0 };
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut stream(config.seed, Purpose::Shuffle, epoch, 0, 0));

        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(usize, TrainingExample)> = chunk.iter().map(|&i| (i, examples[i])).collect();
            let params = &state.params;
            let grads = match &pool {
                Some(pool) => {
                    pool.install(|| batch_gradients(kg, params, &batch, &config.reasoner, masker, mask_epoch, true))
                }
                None => batch_gradients(kg, params, &batch, &config.reasoner, masker, mask_epoch, false),
            }?;
            let mut total = state.params.zeros_like();
            for g in &grads {
                g.add_to(&mut total);
                loss_sum += g.loss.as_f64();
            }
            total.scale(T::one() / T::of(grads.len() as f64));
            adam_step(&mut state.params, &total, &mut state.optimizer)?;
        }

        let valid = if split.valid.is_empty() {
            RankingMetrics::default()
        } else {
            evaluate(&state.params, kg, &split.valid, &known, &eval_cfg)?
        };
        state.epochs_done = epoch + 1;
        let improved = split.valid.is_empty() || valid.mrr() > state.best_valid_mrr;
        if improved {
            state.best_valid_mrr = if split.valid.is_empty() { state.best_valid_mrr } else { valid.mrr() };
            best = state.params.clone();
            best_epoch = state.epochs_done;
        }
        let entry = EpochLog { epoch: state.epochs_done, loss: loss_sum / examples.len().max(1) as f64, valid };
        on_epoch(&entry, &state, improved)?;
        log.push(entry);
    }

    Ok(FitOutcome { best, best_epoch, state, log })
}
