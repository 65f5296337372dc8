//! Closed-form communication accounting.
//!
//! Per round and per link direction, in bytes of raw float payload.
//! Sample-ID headers are deliberately excluded from the counts.

use serde::{Deserialize, Serialize};

use super::{MinibatchSchedule, TdcdConfig};
use crate::data::PartitionPlan;

/// Exact byte counts for one communication round, split by link direction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficBytes {
    pub client_to_hub: u64,
    pub hub_to_client: u64,
    pub hub_to_hub: u64,
}

impl TrafficBytes {
    pub fn add(&mut self, other: &TrafficBytes) {
        self.client_to_hub += other.client_to_hub;
        self.hub_to_client += other.hub_to_client;
        self.hub_to_hub += other.hub_to_hub;
    }
}

/// Closed-form byte counts for one round with the given batches.
///
/// Per client and silo `j` the uplink carries the model block (`D_j`
/// floats) plus this client's intermediate values for every batch; the
/// downlink mirrors it with the averaged block plus the projected sums.
/// Hubs broadcast their stacked `Q*B` values to each of the `N-1` peers.
pub fn comm_cost(
    cfg: &TdcdConfig,
    plan: &PartitionPlan,
    round_batches: &MinibatchSchedule,
    link_dim: usize,
) -> TrafficBytes {
    let w = cfg.float_width.bytes();
    let r = link_dim as u64;
    let n_rows = plan.n_rows();

    let mut client_to_hub = 0u64;
    let mut hub_to_client = 0u64;
    for silo in 0..plan.n_silos {
        let width = plan.block_width(silo) as u64;
        // rows -> owning client within this silo
        let mut owner = vec![usize::MAX; n_rows];
        for (k, shard) in plan.row_assignment[silo].iter().enumerate() {
            for &row in shard {
                owner[row] = k;
            }
        }
        let mut per_client = vec![0u64; plan.clients_per_silo];
        for batch in &round_batches.batches {
            for &p in batch {
                per_client[owner[p]] += 1;
            }
        }
        for hits in per_client {
            client_to_hub += w * (width + hits * r);
            hub_to_client += w * (width + hits * r);
        }
    }

    let total_batch: u64 = round_batches.batches.iter().map(|b| b.len() as u64).sum();
    let n = plan.n_silos as u64;
    let hub_to_hub = n * (n - 1) * w * total_batch * r;

    TrafficBytes {
        client_to_hub,
        hub_to_client,
        hub_to_hub,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_partition, RowScheme};
    use crate::protocol::{FloatWidth, Sampling};

    fn config(local_steps: usize, batch_size: usize) -> TdcdConfig {
        TdcdConfig {
            n_silos: 2,
            clients_per_silo: 1,
            local_steps,
            batch_size,
            eta: 0.1,
            rounds: 1,
            sampling: Sampling::Stratified,
            seed: 0,
            float_width: FloatWidth::Bits64,
        }
    }

    #[test]
    fn hand_counted_round() {
        // N=2, K=1, Q=1, B=4, D_j=3, r=1, 8-byte floats:
        // per silo 8*(3+4) = 56, times two silos = 112.
        let plan = make_partition(4, 6, 2, 1, None, RowScheme::Contiguous, None).unwrap();
        let cfg = config(1, 4);
        let sched = MinibatchSchedule::draw(0, 0, 1, 4, Sampling::Stratified, &plan).unwrap();
        let bytes = comm_cost(&cfg, &plan, &sched, 1);
        assert_eq!(bytes.client_to_hub, 112);
        assert_eq!(bytes.hub_to_client, 112);
        assert_eq!(bytes.hub_to_hub, 2 * 1 * 8 * 4);
    }

    #[test]
    fn doubling_q_doubles_only_the_phi_term() {
        let plan = make_partition(8, 6, 2, 1, None, RowScheme::Contiguous, None).unwrap();
        let s1 = MinibatchSchedule::draw(0, 0, 1, 4, Sampling::Stratified, &plan).unwrap();
        let s2 = MinibatchSchedule::draw(0, 0, 2, 4, Sampling::Stratified, &plan).unwrap();
        let b1 = comm_cost(&config(1, 4), &plan, &s1, 1);
        let b2 = comm_cost(&config(2, 4), &plan, &s2, 1);
        // Model term: 2 silos * 1 client * 8 bytes * 3 cols = 48 per direction.
        let model = 48;
        assert_eq!(b2.client_to_hub - model, 2 * (b1.client_to_hub - model));
        assert_eq!(b2.hub_to_hub, 2 * b1.hub_to_hub);
    }

    #[test]
    fn single_silo_has_no_hub_traffic() {
        let plan = make_partition(8, 6, 1, 2, None, RowScheme::Contiguous, None).unwrap();
        let mut cfg = config(1, 4);
        cfg.n_silos = 1;
        cfg.clients_per_silo = 2;
        let sched = MinibatchSchedule::draw(0, 0, 1, 4, Sampling::Stratified, &plan).unwrap();
        assert_eq!(comm_cost(&cfg, &plan, &sched, 1).hub_to_hub, 0);
    }
}
