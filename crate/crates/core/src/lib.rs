//! Deterministic single-process simulator for tiered decentralized
//! coordinate descent.
//!
//! A linear model is trained over data that is split two ways: features
//! are partitioned vertically across N silos, and each silo's rows are
//! partitioned horizontally across K clients. Every communication round,
//! each silo's hub averages its clients' model blocks, the hubs agree on Q
//! minibatches and exchange per-sample partial predictions ("intermediate
//! values"), and each client then runs Q local gradient steps against its
//! frozen view of the other silos' contributions.
//!
//! Modules:
//! - [`data`]: datasets, standardization, synthetic generation, and the
//!   two-level partition plan.
//! - [`loss`]: the loss family, block partial gradients, Lipschitz
//!   constants and the step-size feasibility bound.
//! - [`protocol`]: the round engine, minibatch schedule, and exact
//!   communication metering.
//! - [`oracle`]: independent reference implementations for tests and the
//!   CLI's verify mode.
//!
//! Every reduction runs in a fixed order, so identical inputs produce
//! bit-identical outputs regardless of host parallelism.

pub mod data;
pub mod loss;
pub mod matrix;
pub mod oracle;
pub mod protocol;

pub use data::{
    append_bias, load_csv, make_partition, standardize, synth_regression, DataError, Dataset,
    LabelColumn, PartitionPlan, RowScheme,
};
pub use loss::{
    estimate_lipschitz, full_gradient, full_loss, max_step_size, partial_gradient,
    predict_partial, LipschitzInfo, LipschitzMethod, LossError, LossFamily, LossSpec,
};
pub use matrix::Matrix;
pub use protocol::{
    assemble_global, comm_cost, init_state, local_step, run_tdcd, sync_round, FloatWidth, Init,
    MinibatchSchedule, ProtocolError, ProtocolState, RunMetrics, Sampling, TdcdConfig, TdcdRun,
    TrafficBytes,
};
