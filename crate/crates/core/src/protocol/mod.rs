//! The round engine: periodic hub averaging, minibatch agreement,
//! intermediate-value computation, stacking, exchange and projection,
//! followed by Q local gradient steps per client, with exact communication
//! metering.
//!
//! The engine is single-threaded and commits every reduction in fixed
//! (silo, client, sample) order, so runs are bit-identical regardless of
//! how callers schedule them.

mod comm;
mod schedule;

pub use comm::{comm_cost, TrafficBytes};
pub use schedule::{MinibatchSchedule, Sampling};

use std::io::{self, Read, Write};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, PartitionPlan};
use crate::loss::{full_gradient, full_loss, partial_gradient, predict_partial, LossError, LossSpec};
use crate::matrix::{norm2, norm2_sq, Matrix};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("batch references rows no client owns: {0}")]
    ScheduleMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Width of a float on the wire. Computation is always 64-bit; this only
/// affects byte accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum FloatWidth {
    Bits32,
    Bits64,
}

impl FloatWidth {
    pub fn bytes(self) -> u64 {
        match self {
            FloatWidth::Bits32 => 4,
            FloatWidth::Bits64 => 8,
        }
    }
}

impl TryFrom<u8> for FloatWidth {
    type Error = String;
    fn try_from(bits: u8) -> Result<Self, String> {
        match bits {
            32 => Ok(FloatWidth::Bits32),
            64 => Ok(FloatWidth::Bits64),
            other => Err(format!("float width must be 32 or 64, got {other}")),
        }
    }
}

impl From<FloatWidth> for u8 {
    fn from(w: FloatWidth) -> u8 {
        match w {
            FloatWidth::Bits32 => 32,
            FloatWidth::Bits64 => 64,
        }
    }
}

/// Run parameters for the round engine.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TdcdConfig {
    pub n_silos: usize,
    pub clients_per_silo: usize,
    /// Local gradient steps between communication rounds (Q).
    pub local_steps: usize,
    /// Samples per minibatch (B).
    pub batch_size: usize,
    /// Step size.
    pub eta: f64,
    /// Number of communication rounds to run.
    pub rounds: usize,
    pub sampling: Sampling,
    pub seed: u64,
    pub float_width: FloatWidth,
}

impl TdcdConfig {
    pub fn validate(&self, ds: &Dataset, plan: &PartitionPlan) -> Result<(), ProtocolError> {
        let fail = |msg: String| Err(ProtocolError::InvalidConfig(msg));
        if self.n_silos != plan.n_silos || self.clients_per_silo != plan.clients_per_silo {
            return fail(format!(
                "config topology {}x{} does not match plan {}x{}",
                self.n_silos, self.clients_per_silo, plan.n_silos, plan.clients_per_silo
            ));
        }
        if plan.total_features() != ds.n_features() {
            return fail(format!(
                "plan covers {} features, dataset has {}",
                plan.total_features(),
                ds.n_features()
            ));
        }
        if plan.n_rows() != ds.n_samples() {
            return fail(format!(
                "plan covers {} rows, dataset has {}",
                plan.n_rows(),
                ds.n_samples()
            ));
        }
        if self.local_steps == 0 || self.rounds == 0 {
            return fail("local_steps and rounds must be at least 1".into());
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return fail(format!("eta must be finite and nonnegative, got {}", self.eta));
        }
        if self.batch_size == 0 || self.batch_size > ds.n_samples() {
            return fail(format!(
                "batch size {} not in 1..={}",
                self.batch_size,
                ds.n_samples()
            ));
        }
        if self.sampling == Sampling::Stratified {
            if self.batch_size % self.clients_per_silo != 0 {
                return fail(format!(
                    "stratified sampling needs clients ({}) to divide batch size ({})",
                    self.clients_per_silo, self.batch_size
                ));
            }
            if self.batch_size / self.clients_per_silo > plan.min_shard_size() {
                return fail(format!(
                    "per-client share {} exceeds smallest shard {}",
                    self.batch_size / self.clients_per_silo,
                    plan.min_shard_size()
                ));
            }
            if !plan.identical_row_assignment() {
                return fail("stratified sampling needs identical row assignments".into());
            }
        }
        Ok(())
    }
}

/// Model initialization. All clients of a silo start from the same block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zero,
    /// Standard-normal block per silo, drawn from ChaCha stream
    /// `2*silo + 1` of the run seed and shared by the silo's clients.
    SeededRandom,
}

/// One client's intermediate values for one batch: the per-sample partial
/// predictions of its feature block under the freshly averaged model.
#[derive(Debug, Clone)]
pub struct IntermediateBlock {
    pub silo: usize,
    pub client: usize,
    pub batch_index: usize,
    /// This client's rows within the batch, in batch order.
    pub sample_ids: Vec<usize>,
    /// `sample_ids.len() x link_dim` values.
    pub values: Matrix,
}

/// A client's frozen view of the other silos' summed intermediate values
/// for one batch. Immutable between syncs.
#[derive(Debug, Clone, PartialEq)]
pub struct StalePhi {
    pub sample_ids: Vec<usize>,
    pub values: Matrix,
}

/// Everything the round engine mutates.
#[derive(Debug, Clone)]
pub struct ProtocolState {
    /// `client_models[silo][client]` is that client's model block.
    pub client_models: Vec<Vec<Vec<f64>>>,
    /// Per-silo averaged block, realized at sync instants.
    pub hub_models: Vec<Vec<f64>>,
    /// `stale_phi[silo][client][tau]` for the Q scheduled batches.
    pub stale_phi: Vec<Vec<Vec<StalePhi>>>,
    pub schedule: MinibatchSchedule,
    /// Global iteration counter.
    pub t: u64,
    /// Iteration of the most recent sync.
    pub t0: u64,
    /// Traffic of the current round, reset at each sync.
    pub round_bytes: TrafficBytes,
    /// Squared gradient norms per client since the last sync, for drift
    /// instrumentation.
    pub grad_sq_since_sync: Vec<Vec<Vec<f64>>>,
}

/// Fixed-order mean of a silo's client blocks. Identical blocks are
/// returned verbatim: the exact mean of K copies is the copy itself, and
/// summing would reintroduce rounding that breaks sync-time bit equality.
fn silo_mean(blocks: &[Vec<f64>]) -> Vec<f64> {
    if blocks.iter().all(|b| *b == blocks[0]) {
        return blocks[0].clone();
    }
    let mut sum = vec![0.0; blocks[0].len()];
    for block in blocks {
        for (s, x) in sum.iter_mut().zip(block) {
            *s += x;
        }
    }
    let k = blocks.len() as f64;
    for s in sum.iter_mut() {
        *s /= k;
    }
    sum
}

fn extract_rows_block(features: &Matrix, rows: &[usize], start: usize, end: usize) -> Matrix {
    let width = end - start;
    let mut data = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        data.extend_from_slice(&features.row(r)[start..end]);
    }
    Matrix::from_vec(rows.len(), width, data)
}

/// Fresh state with every client of a silo holding the same initial block.
pub fn init_state(cfg: &TdcdConfig, plan: &PartitionPlan, init: Init) -> ProtocolState {
    let mut client_models = Vec::with_capacity(plan.n_silos);
    let mut hub_models = Vec::with_capacity(plan.n_silos);
    for silo in 0..plan.n_silos {
        let width = plan.block_width(silo);
        let block = match init {
            Init::Zero => vec![0.0; width],
            Init::SeededRandom => {
                let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
                rng.set_stream(2 * silo as u64 + 1);
                (0..width).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
            }
        };
        client_models.push(vec![block.clone(); plan.clients_per_silo]);
        hub_models.push(block);
    }
    ProtocolState {
        client_models,
        hub_models,
        stale_phi: vec![vec![Vec::new(); plan.clients_per_silo]; plan.n_silos],
        schedule: MinibatchSchedule { batches: Vec::new() },
        t: 0,
        t0: 0,
        round_bytes: TrafficBytes::default(),
        grad_sq_since_sync: vec![vec![Vec::new(); plan.clients_per_silo]; plan.n_silos],
    }
}

/// One client's intermediate values for one batch, computed from the given
/// block model.
pub fn client_intermediate_block(
    ds: &Dataset,
    plan: &PartitionPlan,
    silo: usize,
    client: usize,
    batch_index: usize,
    batch: &[usize],
    theta_block: &[f64],
) -> Result<IntermediateBlock, ProtocolError> {
    let (start, end) = plan.vertical_blocks[silo];
    let shard = &plan.row_assignment[silo][client];
    // Batch order restricted to this client's rows; both sides are sorted.
    let sample_ids: Vec<usize> = batch
        .iter()
        .copied()
        .filter(|p| shard.binary_search(p).is_ok())
        .collect();
    let feats = extract_rows_block(&ds.features, &sample_ids, start, end);
    let values = predict_partial(&feats, theta_block)?;
    Ok(IntermediateBlock {
        silo,
        client,
        batch_index,
        sample_ids,
        values,
    })
}

/// The sync phase of one communication round: hub averaging, model
/// push-down, minibatch agreement, intermediate-value computation,
/// stacking, full-mesh exchange, per-sample summation and projection back
/// to the clients. Byte counters are tallied from actual payload sizes.
pub fn sync_round(
    state: &mut ProtocolState,
    cfg: &TdcdConfig,
    ds: &Dataset,
    plan: &PartitionPlan,
    spec: &LossSpec,
) -> Result<(), ProtocolError> {
    if state.t % cfg.local_steps as u64 != 0 {
        return Err(ProtocolError::InvalidConfig(format!(
            "sync_round called at iteration {} with Q={}",
            state.t, cfg.local_steps
        )));
    }
    let w = cfg.float_width.bytes();
    let r = spec.link_dim;
    let mut bytes = TrafficBytes::default();

    // (a) hubs average their clients, (b) clients adopt the average.
    for silo in 0..plan.n_silos {
        let mean = silo_mean(&state.client_models[silo]);
        for client in state.client_models[silo].iter_mut() {
            *client = mean.clone();
        }
        state.hub_models[silo] = mean;
        // Model up from every client, averaged model back down.
        let width = plan.block_width(silo) as u64;
        bytes.client_to_hub += w * width * plan.clients_per_silo as u64;
        bytes.hub_to_client += w * width * plan.clients_per_silo as u64;
    }

    // (c) hubs agree on the round's Q minibatches.
    let round = state.t / cfg.local_steps as u64;
    state.schedule = MinibatchSchedule::draw(
        cfg.seed,
        round,
        cfg.local_steps,
        cfg.batch_size,
        cfg.sampling,
        plan,
    )?;

    // (d) every client computes its intermediate values with the fresh
    // model and sends them up; hubs stack them per batch.
    // stacked[silo][tau] holds batch.len()*r values aligned to batch order.
    let mut stacked: Vec<Vec<Vec<f64>>> = Vec::with_capacity(plan.n_silos);
    // blocks[silo][tau][client] kept for the projection step.
    let mut blocks: Vec<Vec<Vec<IntermediateBlock>>> = Vec::with_capacity(plan.n_silos);
    for silo in 0..plan.n_silos {
        let theta = state.hub_models[silo].clone();
        let mut silo_stacks = Vec::with_capacity(state.schedule.batches.len());
        let mut silo_blocks = Vec::with_capacity(state.schedule.batches.len());
        for (tau, batch) in state.schedule.batches.iter().enumerate() {
            let mut stack = vec![0.0; batch.len() * r];
            let mut filled = 0usize;
            let mut batch_blocks = Vec::with_capacity(plan.clients_per_silo);
            for client in 0..plan.clients_per_silo {
                let block =
                    client_intermediate_block(ds, plan, silo, client, tau, batch, &theta)?;
                bytes.client_to_hub += w * (block.sample_ids.len() * r) as u64;
                for (i, &row) in block.sample_ids.iter().enumerate() {
                    let pos = batch
                        .binary_search(&row)
                        .map_err(|_| ProtocolError::ScheduleMismatch(format!("row {row}")))?;
                    for c in 0..r {
                        stack[pos * r + c] = block.values.get(i, c);
                    }
                    filled += 1;
                }
                batch_blocks.push(block);
            }
            if filled != batch.len() {
                return Err(ProtocolError::ScheduleMismatch(format!(
                    "batch {tau} covered {filled} of {} rows in silo {silo}",
                    batch.len()
                )));
            }
            silo_stacks.push(stack);
            silo_blocks.push(batch_blocks);
        }
        stacked.push(silo_stacks);
        blocks.push(silo_blocks);
    }

    // (e) full-mesh exchange; each hub sums the other silos' stacks
    // per sample, in ascending silo order.
    let total_values: u64 = state
        .schedule
        .batches
        .iter()
        .map(|b| (b.len() * r) as u64)
        .sum();
    bytes.hub_to_hub = plan.n_silos as u64 * (plan.n_silos as u64 - 1) * w * total_values;

    for silo in 0..plan.n_silos {
        for (tau, batch) in state.schedule.batches.iter().enumerate() {
            let mut sum = vec![0.0; batch.len() * r];
            for other in 0..plan.n_silos {
                if other == silo {
                    continue;
                }
                for (acc, v) in sum.iter_mut().zip(&stacked[other][tau]) {
                    *acc += v;
                }
            }
            // (f) project onto each client's rows and send down.
            for client in 0..plan.clients_per_silo {
                let ids = blocks[silo][tau][client].sample_ids.clone();
                let mut values = Vec::with_capacity(ids.len() * r);
                for &row in &ids {
                    let pos = batch.binary_search(&row).expect("row placed above");
                    values.extend_from_slice(&sum[pos * r..(pos + 1) * r]);
                }
                bytes.hub_to_client += w * values.len() as u64;
                let phi = StalePhi {
                    values: Matrix::from_vec(ids.len(), r, values),
                    sample_ids: ids,
                };
                if tau == 0 {
                    state.stale_phi[silo][client].clear();
                }
                state.stale_phi[silo][client].push(phi);
            }
        }
    }

    state.round_bytes = bytes;
    state.t0 = state.t;
    for silo in state.grad_sq_since_sync.iter_mut() {
        for client in silo.iter_mut() {
            client.clear();
        }
    }
    Ok(())
}

/// One local gradient step on batch `tau` for every client. Each client's
/// gradient depends only on its own block and its frozen phi values, so
/// updating in place realizes the synchronous sweep.
pub fn local_step(
    state: &mut ProtocolState,
    cfg: &TdcdConfig,
    ds: &Dataset,
    plan: &PartitionPlan,
    spec: &LossSpec,
    tau: usize,
) -> Result<(), ProtocolError> {
    if tau >= cfg.local_steps || tau >= state.schedule.batches.len() {
        return Err(ProtocolError::InvalidConfig(format!(
            "no batch {tau} in the current schedule"
        )));
    }
    for silo in 0..plan.n_silos {
        let (start, end) = plan.vertical_blocks[silo];
        for client in 0..plan.clients_per_silo {
            let phi = &state.stale_phi[silo][client][tau];
            let feats = extract_rows_block(&ds.features, &phi.sample_ids, start, end);
            let labels: Vec<f64> = phi.sample_ids.iter().map(|&p| ds.labels[p]).collect();
            let theta = &state.client_models[silo][client];
            let grad = partial_gradient(spec, &feats, &labels, theta, &phi.values)?;
            state.grad_sq_since_sync[silo][client].push(norm2_sq(&grad));
            let theta = &mut state.client_models[silo][client];
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t -= cfg.eta * g;
            }
        }
    }
    state.t += 1;
    Ok(())
}

/// The virtual global model: concatenation over silos of the fixed-order
/// client mean.
pub fn assemble_global(state: &ProtocolState) -> Vec<f64> {
    let mut out = Vec::new();
    for silo_blocks in &state.client_models {
        out.extend(silo_mean(silo_blocks));
    }
    out
}

/// Per-round measurements. `elapsed` is wall clock and excluded from the
/// canonical CSV stream.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: u64,
    pub iteration: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub bytes: TrafficBytes,
    pub elapsed: Duration,
}

/// Loss, gradient norm and exact traffic at every sync instant, plus a
/// final record after the closing hub average.
#[derive(Debug, Clone, Default)]
pub struct RunMetrics {
    pub rows: Vec<RoundRecord>,
}

impl RunMetrics {
    /// Canonical CSV stream, one row per communication round.
    ///
    /// The elapsed_ms column is pinned to zero so that reruns of the same
    /// seed produce byte-identical files; wall-clock timings stay on the
    /// in-memory records.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "round,iteration,loss,grad_norm,bytes_c2h,bytes_h2c,bytes_h2h,elapsed_ms"
        )?;
        for row in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},0",
                row.round,
                row.iteration,
                row.loss,
                row.grad_norm,
                row.bytes.client_to_hub,
                row.bytes.hub_to_client,
                row.bytes.hub_to_hub
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to Vec cannot fail");
        String::from_utf8(buf).expect("csv is ascii")
    }

    pub fn total_elapsed(&self) -> Duration {
        self.rows.iter().map(|r| r.elapsed).sum()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss)
    }
}

/// Result of a full run.
#[derive(Debug, Clone)]
pub struct TdcdRun {
    pub final_model: Vec<f64>,
    pub metrics: RunMetrics,
}

/// Run `rounds` communication rounds of Q local steps each, then one extra
/// hub average, and assemble the global model.
///
/// Metrics row `r < rounds` describes the sync instant of round `r`: the
/// assembled model after `r` rounds of training and that round's traffic.
/// The last row records the final averaged model with zero traffic.
pub fn run_tdcd(
    cfg: &TdcdConfig,
    ds: &Dataset,
    plan: &PartitionPlan,
    spec: &LossSpec,
    init: Init,
) -> Result<TdcdRun, ProtocolError> {
    cfg.validate(ds, plan)?;
    let mut state = init_state(cfg, plan, init);
    let mut metrics = RunMetrics::default();
    for round in 0..cfg.rounds {
        let started = Instant::now();
        sync_round(&mut state, cfg, ds, plan, spec)?;
        let model = assemble_global(&state);
        let loss = full_loss(spec, ds, &model);
        let grad_norm = norm2(&full_gradient(spec, ds, &model));
        for tau in 0..cfg.local_steps {
            local_step(&mut state, cfg, ds, plan, spec, tau)?;
        }
        metrics.rows.push(RoundRecord {
            round: round as u64,
            iteration: state.t0,
            loss,
            grad_norm,
            bytes: state.round_bytes,
            elapsed: started.elapsed(),
        });
    }
    // Closing hub average so the assembled model reflects the last local
    // steps.
    let started = Instant::now();
    for silo in 0..plan.n_silos {
        let mean = silo_mean(&state.client_models[silo]);
        for client in state.client_models[silo].iter_mut() {
            *client = mean.clone();
        }
        state.hub_models[silo] = mean;
    }
    let final_model = assemble_global(&state);
    let loss = full_loss(spec, ds, &final_model);
    let grad_norm = norm2(&full_gradient(spec, ds, &final_model));
    metrics.rows.push(RoundRecord {
        round: cfg.rounds as u64,
        iteration: state.t,
        loss,
        grad_norm,
        bytes: TrafficBytes::default(),
        elapsed: started.elapsed(),
    });
    Ok(TdcdRun {
        final_model,
        metrics,
    })
}

/// Flat array of 64-bit little-endian reals.
pub fn write_model_binary<W: Write>(mut out: W, model: &[f64]) -> io::Result<()> {
    for v in model {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_model_binary<R: Read>(mut input: R) -> io::Result<Vec<f64>> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    if buf.len() % 8 != 0 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "model binary length is not a multiple of 8",
        ));
    }
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
