//! Inductive knowledge-graph completion by query-conditioned path reasoning.
//!
//! A query `(h, r_q, ?)` is answered by propagating relation-derived messages
//! outward from `h` for a fixed number of hops. At every hop, relations that
//! rarely co-occur with `r_q` are randomly masked out, only the best-scoring
//! frontier entities are expanded, and candidate tails are scored from their
//! final embeddings. No parameter is tied to an entity, so a trained model
//! applies unchanged to graphs with unseen entities.
//!
//! The core is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the common choices.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod graph;
pub mod masking;
pub mod matrix;
pub mod model;
pub mod oracle;
pub mod reasoner;
pub mod rng;
pub mod rules;
pub mod scalar;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use eval::{evaluate, evaluate_split, filtered_rank, sweep_pe, EvalConfig, KnownAnswers, RankingMetrics};
pub use graph::{
    build_graph, build_graph_with_relations, load_triples, load_triples_file, EntityId, GraphOptions, InductiveSplit,
    KnowledgeGraph, RawSplit, RawTriple, RelationId, Triple,
};
pub use masking::{MaskConfig, QueryMasker};
pub use model::{Gradients, ModelParams};
pub use reasoner::{forward, MessageWeighting, Query, ReasonerConfig, ScoreAgg};
pub use rng::Purpose;
pub use rules::{mine_confidence, mine_confidence_scoped, ConfidenceTable, MiningScope};
pub use scalar::Scalar;
pub use trainer::{adam_step, backward, fit, FitOutcome, OptimizerState, TrainConfig, TrainState};

pub type ModelParamsF64 = ModelParams<f64>;
pub type ModelParamsF32 = ModelParams<f32>;
pub type GradientsF64 = Gradients<f64>;
pub type GradientsF32 = Gradients<f32>;
pub type OptimizerStateF64 = OptimizerState<f64>;
pub type OptimizerStateF32 = OptimizerState<f32>;
pub type TrainStateF64 = TrainState<f64>;
pub type TrainStateF32 = TrainState<f32>;
pub type CheckpointF64 = Checkpoint<f64>;
pub type CheckpointF32 = Checkpoint<f32>;
