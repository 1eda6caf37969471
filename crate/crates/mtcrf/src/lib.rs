//! Multi-task sequence tagging with explicitly coupled CRF prediction heads.
//!
//! `mtcrf` is a small, self-contained toolkit for tagging token sequences with
//! labels for several tasks at once. On top of a pluggable feature function it
//! provides five prediction architectures:
//!
//! - **single-task** — one independent chain CRF model per task,
//! - **multi-head** — one shared feature function, one chain CRF head per task,
//! - **factorial** — multi-head plus a shared per-time-step coupling matrix
//!   between every pair of tasks,
//! - **weighted factorial** — coupling entries scaled by the other task's
//!   emission score, and
//! - **cascaded factorial** — weighted couplings restricted to a task
//!   hierarchy, decoded in one pass without iteration.
//!
//! Exact inference (forward algorithm, forward-backward marginals, Viterbi) is
//! implemented in the log domain; joint decoding across coupled tasks uses an
//! iterated conditional Viterbi loop. Training is mini-batch Adam with
//! gradient clipping, first-epoch learning-rate warmup, dev-loss early
//! stopping, and a seeded multi-seed evaluation protocol. Corpora are read and
//! written in a tab-separated one-token-per-line format, low-resource training
//! subsets are sampled as nested prefixes of one seeded shuffle, and
//! evaluation reports exact-match span F1 for BIO tasks and token accuracy for
//! flat tasks.
//!
//! ## Examples
//!
//! The `examples/` directory contains one runnable program per capability:
//!
//! ```bash
//! cargo run -p mtcrf --example chain_tagging        # chain CRF inference
//! cargo run -p mtcrf --example multi_task_heads     # shared features, per-task heads
//! cargo run -p mtcrf --example factorial_coupling   # coupled decoding variants
//! cargo run -p mtcrf --example low_resource_splits  # nested seeded subsets
//! cargo run -p mtcrf --example silver_auxiliary     # merging silver labels
//! cargo run -p mtcrf --example train_synthetic      # end-to-end training run
//! cargo run -p mtcrf --example span_evaluation      # span extraction and F1
//! cargo run -p mtcrf --example coupling_heatmap     # exporting coupling tables
//! ```
//!
//! A thin command-line frontend (`mtcrf split|train|predict|evaluate|
//! inspect-coupling`) wires the same library calls into batch pipelines; see
//! the README for the config file format.

pub mod chain;
pub mod cli;
pub mod corpus;
pub mod eval;
pub mod factorial;
pub mod features;
pub mod math;
pub mod model;
pub mod multihead;
pub mod oracle;
pub mod synth;
pub mod tagset;
pub mod train;

pub use chain::{ChainHead, EmissionScores};
pub use corpus::{Corpus, MultiTaskSentence, SplitSize, SplitSpec};
pub use factorial::{BpConfig, CouplingVariant, FactorialModel};
pub use features::{FeatureConfig, FeatureMatrix, Featurizer};
pub use model::{Tagger, Variant};
pub use multihead::MultiHeadModel;
pub use tagset::{Label, MultiTaskSchema, Scheme, TaskSchema};
pub use train::{RunRecord, TrainConfig};
