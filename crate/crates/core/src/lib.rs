//! Streaming memory-bank token compression for video object tracking.
//!
//! A memory bank keeps the prompted GT frame plus a FIFO of recent frames that
//! passed the quality gates. Every frame is pooled once on admission; at read
//! time the motion frames are further thinned by keeping only the tokens least
//! similar to their anchor tokens, and the current frame cross-attends over
//! the result.
//!
//! ```
//! use memshrink::{cost_of, EngineConfig, TemporalStrategy};
//!
//! let cfg = EngineConfig::default();
//! let cost = cost_of(&cfg, 64, 64, 16, 7, TemporalStrategy::TopnSelect).unwrap();
//! assert_eq!(cost.memory_tokens, 2048);
//! assert_eq!(cost.memory_tokens * 14, cost.baseline_tokens);
//! ```

pub mod attention;
pub mod bank;
pub mod cli;
pub mod error;
pub mod exec;
pub mod format;
pub mod harness;
pub mod oracle;
pub mod spatial;
pub mod temporal;
pub mod types;

pub use attention::{
    cost_of, cross_attend, cross_attend_tokens, position_encode, AttentionOutput, CostReport,
};
pub use bank::{gate_check, AdmissionDecision, AdmissionReason, BankState};
pub use error::{Error, Result};
pub use exec::Execution;
pub use harness::{
    generate_stream, run_pipeline, GroundTruth, Pipeline, RunMetrics, RunOptions, ScenarioSpec,
};
pub use spatial::{pool_frame, pool_frame_with, pooled_token_count};
pub use temporal::{assemble_memory, select_topn, similarity_scores, SelectionResult};
pub use types::{
    validate_frame, Anchor, Budget, CompressedFrame, EngineConfig, FeatureFrame, MemorySnapshot,
    MemoryToken, PoolingKind, Scope, ScoredToken, TemporalStrategy, TokenCoord,
};
