//! Learnable parameters and the per-edge / per-node primitives built on them.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::RelationId;
use crate::matrix::Matrix;
use crate::scalar::{add_assign, dot, Scalar};

/// All learnable parameters. Entity-agnostic: nothing here is indexed by entity.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    /// `|R| × d` relation embeddings.
    pub rel_emb: Matrix<T>,
    /// One `2d × d` mixing matrix per query relation, or a single shared one.
    pub mix: Vec<Matrix<T>>,
    /// Scores the node reached at each hop.
    pub w_path: Vec<T>,
    /// Scores final entity embeddings.
    pub w_out: Vec<T>,
}

/// Gradients have exactly the parameter layout.
pub type Gradients<T> = ModelParams<T>;

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(num_relations: usize, dim: usize, shared_mix: bool) -> Self {
        let n_mix = if shared_mix { 1 } else { num_relations };
        Self {
            rel_emb: Matrix::zeros(num_relations, dim),
            mix: (0..n_mix).map(|_| Matrix::zeros(2 * dim, dim)).collect(),
            w_path: vec![T::zero(); dim],
            w_out: vec![T::zero(); dim],
        }
    }

    /// Uniform Glorot-style initialisation.
    pub fn init<R: Rng + ?Sized>(num_relations: usize, dim: usize, shared_mix: bool, rng: &mut R) -> Self {
        let mut p = Self::zeros(num_relations, dim, shared_mix);
        let mut fill = |xs: &mut [T], fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in xs {
                *x = T::of(rng.gen_range(-bound..bound));
            }
        };
        fill(p.rel_emb.as_mut_slice(), dim, dim);
        for m in &mut p.mix {
            fill(m.as_mut_slice(), 2 * dim, dim);
        }
        fill(&mut p.w_path, dim, 1);
        fill(&mut p.w_out, dim, 1);
        p
    }

    pub fn dim(&self) -> usize {
        self.w_out.len()
    }

    pub fn num_relations(&self) -> usize {
        self.rel_emb.rows()
    }

    pub fn shared_mix(&self) -> bool {
        self.mix.len() == 1 && self.num_relations() != 1
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.num_relations(), self.dim(), self.mix.len() == 1)
    }

    #[inline]
    pub fn mix_index(&self, query_rel: RelationId) -> usize {
        if self.mix.len() == 1 {
            0
        } else {
            query_rel as usize
        }
    }

    pub fn mix_for(&self, query_rel: RelationId) -> &Matrix<T> {
        &self.mix[self.mix_index(query_rel)]
    }

    /// Parameter blocks in declared order: `rel_emb`, each `mix`, `w_path`, `w_out`.
    pub fn blocks(&self) -> Vec<&[T]> {
        let mut out = vec![self.rel_emb.as_slice()];
        out.extend(self.mix.iter().map(|m| m.as_slice()));
        out.push(&self.w_path);
        out.push(&self.w_out);
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = vec![self.rel_emb.as_mut_slice()];
        out.extend(self.mix.iter_mut().map(|m| m.as_mut_slice()));
        out.push(&mut self.w_path);
        out.push(&mut self.w_out);
        out
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rel_emb.rows() == other.rel_emb.rows()
            && self.rel_emb.cols() == other.rel_emb.cols()
            && self.mix.len() == other.mix.len()
            && self.w_path.len() == other.w_path.len()
            && self.w_out.len() == other.w_out.len()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &Self) {
        for (d, s) in self.blocks_mut().into_iter().zip(other.blocks()) {
            add_assign(d, s);
        }
    }

    pub fn scale(&mut self, factor: T) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Converts every entry to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let conv = |m: &Matrix<T>| {
            Matrix::from_vec(m.rows(), m.cols(), m.as_slice().iter().map(|x| U::of(x.as_f64())).collect())
        };
        ModelParams {
            rel_emb: conv(&self.rel_emb),
            mix: self.mix.iter().map(conv).collect(),
            w_path: self.w_path.iter().map(|x| U::of(x.as_f64())).collect(),
            w_out: self.w_out.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }

    /// Concatenation `[h_{r_q}; h_r]`.
    pub fn concat_input(&self, query_rel: RelationId, rel: RelationId) -> Vec<T> {
        let mut c = Vec::with_capacity(2 * self.dim());
        c.extend_from_slice(self.rel_emb.row(query_rel as usize));
        c.extend_from_slice(self.rel_emb.row(rel as usize));
        c
    }
}

/// Message carried by an edge labelled `rel` under query relation `query_rel`,
/// `W_mix[r_q]ᵀ · [h_{r_q}; h_r]`, plus the predecessor embedding when given.
pub fn edge_message<T: Scalar>(
    params: &ModelParams<T>,
    query_rel: RelationId,
    rel: RelationId,
    pred: Option<&[T]>,
) -> Result<Vec<T>> {
    let n = params.num_relations();
    for r in [query_rel, rel] {
        if r as usize >= n {
            return Err(Error::Dimension(format!("relation {r} outside {n} embeddings")));
        }
    }
    let d = params.dim();
    let mut out = vec![T::zero(); d];
    params.mix_for(query_rel).transpose_mul_vec(&params.concat_input(query_rel, rel), &mut out);
    if let Some(h) = pred {
        if h.len() != d {
            return Err(Error::Dimension(format!("predecessor has length {}, expected {d}", h.len())));
        }
        add_assign(&mut out, h);
    }
    Ok(out)
}

/// Score of the node reached at the current hop.
#[inline]
pub fn node_score<T: Scalar>(params: &ModelParams<T>, h: &[T]) -> T {
    dot(&params.w_path, h)
}

/// Path score after appending the current node to a path scored `prev`.
#[inline]
pub fn cumulative_score<T: Scalar>(prev: T, current: T) -> T {
    prev + current
}

/// Messages for every relation under one query relation, computed once per query.
#[derive(Clone, Debug)]
pub struct MessageTable<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> MessageTable<T> {
    pub fn new(params: &ModelParams<T>, query_rel: RelationId) -> Self {
        let d = params.dim();
        let n = params.num_relations();
        let mut data = vec![T::zero(); n * d];
        let w = params.mix_for(query_rel);
        // The query half of the input is shared by every relation.
        let mut base = vec![T::zero(); d];
        let zero = vec![T::zero(); d];
        let mut q_input = params.rel_emb.row(query_rel as usize).to_vec();
        q_input.extend_from_slice(&zero);
        w.transpose_mul_vec(&q_input, &mut base);
        for r in 0..n {
            let out = &mut data[r * d..(r + 1) * d];
            out.copy_from_slice(&base);
            for (i, &x) in params.rel_emb.row(r).iter().enumerate() {
                if x != T::zero() {
                    crate::scalar::axpy(out, x, w.row(d + i));
                }
            }
        }
        Self { dim: d, data }
    }

    #[inline]
    pub fn get(&self, rel: RelationId) -> &[T] {
        let r = rel as usize;
        &self.data[r * self.dim..(r + 1) * self.dim]
    }
}
