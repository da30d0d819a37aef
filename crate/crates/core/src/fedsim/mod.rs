//! In-process federation: paired HSI/LiDAR clients training in lockstep.
//!
//! Each round runs local branch forwards, an AllGather of (optionally
//! SVD-compressed) feature maps, fusion and loss on every client, an
//! AllReduce of gradients and an identical global update on every replica.
//! Every message is metered in the round ledger.
//!
//! Clients `2j` (HSI) and `2j+1` (LiDAR) share shard `j` and see the same
//! samples in the same order. A single client trains locally on both
//! modalities.

pub mod codec;
pub mod collective;
pub mod ledger;
pub mod model;
pub mod optim;
pub mod trainer;

pub use codec::{lowrank_elements, svd_decode, svd_encode, Codec, Encoded, LowRankFactors, RankPolicy};
pub use collective::{allgather_features, allreduce_mean, exchanges, GradientSet, Inbox};
pub use ledger::{format_mib, mib, Ledger, Message, PayloadKind, RoundLog, BYTES_PER_ELEMENT};
pub use model::{
    argmax, predict, stack_batch, Layout, ModalityMode, Modality, ModelConfig, ModelParams, Role, EVAL_ROUND,
};
pub use optim::{global_update, OptimConfig, OptimState, OptimizerKind};
pub use trainer::{
    evaluate_indices, max_param_diff, pair_batch, Centralized, ClientState, EpochSummary, FedConfig, Federation,
    Split, DIVERGENCE_TOL,
};
