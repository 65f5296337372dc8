//! Seeded minibatch agreement.
//!
//! A round's batches are a pure function of `(seed, round)`: round `r`
//! draws from ChaCha stream `2r` of the run seed (odd streams are reserved
//! for model initialization). Batches are stored in ascending sample-ID
//! order, which fixes the reduction order everywhere downstream.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::data::PartitionPlan;

/// Minibatch selection policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// `B/K` samples per client, without replacement within a batch,
    /// identical across silos. Requires identical row assignments.
    Stratified,
    /// `B` samples without replacement from the whole dataset; clients not
    /// hit by a batch contribute only the regularizer term.
    GlobalUniform,
}

/// The Q agreed minibatches of one communication round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinibatchSchedule {
    /// `batches[tau]` holds the global sample IDs of local step `tau`,
    /// sorted ascending.
    pub batches: Vec<Vec<usize>>,
}

impl MinibatchSchedule {
    /// Draw the Q batches for one round. Batches within a round are drawn
    /// independently, so a sample may appear in several of them.
    pub fn draw(
        seed: u64,
        round: u64,
        local_steps: usize,
        batch_size: usize,
        sampling: Sampling,
        plan: &PartitionPlan,
    ) -> Result<Self, ProtocolError> {
        let n_rows = plan.n_rows();
        if batch_size == 0 || batch_size > n_rows {
            return Err(ProtocolError::InvalidConfig(format!(
                "batch size {batch_size} not in 1..={n_rows}"
            )));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(round.wrapping_mul(2));
        let mut batches = Vec::with_capacity(local_steps);
        for _ in 0..local_steps {
            let mut batch = match sampling {
                Sampling::Stratified => {
                    let clients = plan.clients_per_silo;
                    if batch_size % clients != 0 {
                        return Err(ProtocolError::InvalidConfig(format!(
                            "stratified sampling needs clients ({clients}) to divide batch size ({batch_size})"
                        )));
                    }
                    if !plan.identical_row_assignment() {
                        return Err(ProtocolError::InvalidConfig(
                            "stratified sampling needs identical row assignments across silos"
                                .into(),
                        ));
                    }
                    let per_client = batch_size / clients;
                    let mut batch = Vec::with_capacity(batch_size);
                    for shard in &plan.row_assignment[0] {
                        if per_client > shard.len() {
                            return Err(ProtocolError::InvalidConfig(format!(
                                "per-client batch share {per_client} exceeds shard of {} rows",
                                shard.len()
                            )));
                        }
                        for idx in rand::seq::index::sample(&mut rng, shard.len(), per_client) {
                            batch.push(shard[idx]);
                        }
                    }
                    batch
                }
                Sampling::GlobalUniform => {
                    rand::seq::index::sample(&mut rng, n_rows, batch_size).into_vec()
                }
            };
            batch.sort_unstable();
            batches.push(batch);
        }
        Ok(Self { batches })
    }
}
