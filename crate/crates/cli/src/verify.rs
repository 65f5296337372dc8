//! `tdcd verify`: run the oracle-equivalence and invariant suite against
//! the configured instance at reduced size and print one PASS/FAIL line
//! per check. A step size above the feasibility bound is reported as WARN
//! only, since the bound is sufficient rather than necessary.

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use tdcd::data::{make_partition, Dataset, PartitionPlan, RowScheme};
use tdcd::loss::{
    estimate_lipschitz, full_gradient, max_step_size, LipschitzMethod, LossSpec,
};
use tdcd::oracle::{centralized_gd, centralized_sgd, finite_diff_gradient};
use tdcd::protocol::{
    assemble_global, init_state, local_step, sync_round, Init, Sampling, TdcdConfig,
};

use crate::config::ExperimentConfig;

struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn single_worker_cfg(base: &TdcdConfig, batch: usize, m: usize) -> TdcdConfig {
    TdcdConfig {
        n_silos: 1,
        clients_per_silo: 1,
        local_steps: 1,
        batch_size: batch.min(m),
        rounds: 1,
        sampling: Sampling::Stratified,
        ..base.clone()
    }
}

fn gradient_check(spec: &LossSpec, ds: &Dataset) -> Check {
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let theta: Vec<f64> = (0..ds.n_features())
        .map(|_| rng.gen::<f64>() - 0.5)
        .collect();
    let exact = full_gradient(spec, ds, &theta);
    let fd = finite_diff_gradient(spec, ds, &theta, 1e-6);
    let worst = exact
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max);
    Check {
        name: "gradient-check",
        passed: worst <= 1e-6,
        detail: format!("max relative error {worst:.3e} (tolerance 1e-6)"),
    }
}

fn gd_equivalence(spec: &LossSpec, ds: &Dataset, base: &TdcdConfig) -> Check {
    let m = ds.n_samples();
    let cfg = single_worker_cfg(base, m, m);
    let plan = make_partition(m, ds.n_features(), 1, 1, None, RowScheme::Contiguous, None)
        .expect("degenerate plan");
    let init = vec![0.0; ds.n_features()];
    let oracle = centralized_gd(spec, ds, cfg.eta, 50, &init);
    let worst = drive_against(&cfg, ds, &plan, spec, &oracle.iterates);
    Check {
        name: "gd-equivalence",
        passed: worst <= 1e-12,
        detail: format!("max coordinate gap {worst:.3e} over 50 steps (tolerance 1e-12)"),
    }
}

fn sgd_equivalence(spec: &LossSpec, ds: &Dataset, base: &TdcdConfig) -> Check {
    let m = ds.n_samples();
    let cfg = single_worker_cfg(base, base.batch_size, m);
    let plan = make_partition(m, ds.n_features(), 1, 1, None, RowScheme::Contiguous, None)
        .expect("degenerate plan");
    let init = vec![0.0; ds.n_features()];
    let oracle = centralized_sgd(spec, ds, cfg.eta, 50, cfg.batch_size, cfg.seed, &init);
    let worst = drive_against(&cfg, ds, &plan, spec, &oracle.iterates);
    Check {
        name: "sgd-equivalence",
        passed: worst <= 1e-12,
        detail: format!("max coordinate gap {worst:.3e} over 50 steps (tolerance 1e-12)"),
    }
}

fn block_equivalence(spec: &LossSpec, ds: &Dataset, base: &TdcdConfig) -> Check {
    let m = ds.n_samples();
    let n = base.n_silos.min(ds.n_features());
    let cfg = TdcdConfig {
        n_silos: n,
        clients_per_silo: 1,
        local_steps: 1,
        batch_size: m,
        rounds: 1,
        sampling: Sampling::Stratified,
        ..base.clone()
    };
    let plan = make_partition(m, ds.n_features(), n, 1, None, RowScheme::Contiguous, None)
        .expect("block plan");
    let init = vec![0.0; ds.n_features()];
    let oracle = centralized_gd(spec, ds, cfg.eta, 50, &init);
    let worst = drive_against(&cfg, ds, &plan, spec, &oracle.iterates);
    Check {
        name: "block-equivalence",
        passed: worst <= 1e-10,
        detail: format!(
            "max coordinate gap {worst:.3e} over 50 steps with {n} blocks (tolerance 1e-10)"
        ),
    }
}

/// Run the engine step for step and return the worst coordinate gap
/// against the oracle iterates.
fn drive_against(
    cfg: &TdcdConfig,
    ds: &Dataset,
    plan: &PartitionPlan,
    spec: &LossSpec,
    iterates: &[Vec<f64>],
) -> f64 {
    let mut state = init_state(cfg, plan, Init::Zero);
    let mut worst = 0.0f64;
    for target in iterates.iter().skip(1) {
        sync_round(&mut state, cfg, ds, plan, spec).expect("sync");
        local_step(&mut state, cfg, ds, plan, spec, 0).expect("step");
        let got = assemble_global(&state);
        for (a, b) in got.iter().zip(target) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

fn protocol_invariants(spec: &LossSpec, ds: &Dataset, base: &TdcdConfig) -> Check {
    let m = ds.n_samples();
    let k = base.clients_per_silo.min(m);
    // Round the batch size down to a multiple of K that fits the shards.
    let max_share = m / k;
    let share = (base.batch_size / k).clamp(1, max_share);
    let cfg = TdcdConfig {
        clients_per_silo: k,
        batch_size: share * k,
        rounds: 1,
        sampling: Sampling::Stratified,
        ..base.clone()
    };
    let plan = match make_partition(
        m,
        ds.n_features(),
        cfg.n_silos,
        k,
        None,
        RowScheme::Contiguous,
        None,
    ) {
        Ok(p) => p,
        Err(e) => {
            return Check {
                name: "hub-staleness-invariants",
                passed: false,
                detail: format!("could not build plan: {e}"),
            }
        }
    };
    let mut state = init_state(&cfg, &plan, Init::SeededRandom);
    let mut detail = String::new();
    let mut passed = true;
    for _round in 0..5 {
        if let Err(e) = sync_round(&mut state, &cfg, ds, &plan, spec) {
            return Check {
                name: "hub-staleness-invariants",
                passed: false,
                detail: format!("sync failed: {e}"),
            };
        }
        let assembled = assemble_global(&state);
        let concat: Vec<f64> = state.hub_models.iter().flatten().copied().collect();
        if assembled != concat {
            passed = false;
            detail = "assembled model diverged from hub concatenation at a sync".into();
            break;
        }
        let frozen = state.stale_phi.clone();
        for tau in 0..cfg.local_steps {
            if let Err(e) = local_step(&mut state, &cfg, ds, &plan, spec, tau) {
                return Check {
                    name: "hub-staleness-invariants",
                    passed: false,
                    detail: format!("local step failed: {e}"),
                };
            }
            if state.stale_phi != frozen {
                passed = false;
                detail = "stale intermediate values changed between syncs".into();
                break;
            }
            // Drift bound per silo.
            let global = assemble_global(&state);
            for silo in 0..plan.n_silos {
                let (start, end) = plan.vertical_blocks[silo];
                let virt = &global[start..end];
                let mut drift = 0.0;
                let mut energy = 0.0;
                for client in 0..k {
                    let block = &state.client_models[silo][client];
                    drift += virt
                        .iter()
                        .zip(block)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>();
                    energy += state.grad_sq_since_sync[silo][client].iter().sum::<f64>();
                }
                let bound = cfg.local_steps as f64 * cfg.eta * cfg.eta * energy;
                if drift / k as f64 > bound / k as f64 + 1e-15 {
                    passed = false;
                    detail = format!("drift bound violated in silo {silo}");
                }
            }
        }
        if !passed {
            break;
        }
    }
    if passed {
        detail = format!(
            "hub concatenation, staleness and drift bound held over 5 rounds (Q={})",
            cfg.local_steps
        );
    }
    Check {
        name: "hub-staleness-invariants",
        passed,
        detail,
    }
}

/// Run all checks on a slice of at most 500 samples; returns false when
/// any check fails.
pub fn verify(config: &ExperimentConfig) -> Result<bool> {
    let full = config.build_dataset()?;
    let ds = full.head(500);
    let spec = config.loss.to_spec();
    let base = config.variants()[0].tdcd_config();

    let checks = vec![
        gradient_check(&spec, &ds),
        gd_equivalence(&spec, &ds, &base),
        sgd_equivalence(&spec, &ds, &base),
        block_equivalence(&spec, &ds, &base),
        protocol_invariants(&spec, &ds, &base),
    ];
    let mut all_passed = true;
    for check in &checks {
        let verdict = if check.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {}: {}", check.name, check.detail);
        all_passed &= check.passed;
    }

    // Step-size feasibility report.
    let plan = make_partition(
        ds.n_samples(),
        ds.n_features(),
        base.n_silos.min(ds.n_features()),
        1,
        None,
        RowScheme::Contiguous,
        None,
    )
    .expect("feasibility plan");
    let method = if ds.n_features() <= 512 {
        LipschitzMethod::Exact
    } else {
        LipschitzMethod::PowerIteration {
            iters: 10_000,
            tol: 1e-12,
        }
    };
    match estimate_lipschitz(&spec, &ds, &plan, method) {
        Ok(info) => {
            let eta_star = max_step_size(&info, base.local_steps);
            if base.eta > eta_star {
                println!(
                    "WARN step-size-feasibility: configured eta {} exceeds bound {eta_star:.6e} \
                     (L={:.4e}, Lmax={:.4e}, Q={}); the bound is sufficient, not necessary",
                    base.eta, info.l, info.l_max, base.local_steps
                );
            } else {
                println!(
                    "PASS step-size-feasibility: eta {} within bound {eta_star:.6e} \
                     (L={:.4e}, Lmax={:.4e}, Q={})",
                    base.eta, info.l, info.l_max, base.local_steps
                );
            }
        }
        Err(e) => {
            all_passed = false;
            println!("FAIL step-size-feasibility: {e}");
        }
    }

    Ok(all_passed)
}
