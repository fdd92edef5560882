//! The replica engine: drives one enhanced walk per replica through the
//! streaming regeneration collector, recording log-spaced displacement
//! checkpoints along the way. Trajectories are never materialized; memory
//! per replica is the collector's pending stack plus the emitted blocks.
//!
//! Replicas run in parallel but outcomes are collected in replica-index
//! order and each replica owns an independent keyed stream, so the results
//! are bit-identical to a serial run at any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use trapwalk_core::env::{ConductanceField, Environment};
use trapwalk_core::lattice::{Point, ORIGIN};
use trapwalk_core::regen::{BlockCollector, RegenBlock};
use trapwalk_core::walk::{Stepper, WalkRng};

use crate::config::ResolvedConfig;

/// One log-spaced progress sample of a replica.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Walk time (steps taken).
    pub time: u64,
    /// Displacement level (X_t - X_0) . direction at that time.
    pub level: f64,
    /// Position at that time (the walk starts at the origin).
    pub pos: Point,
}

/// Everything one replica produces.
#[derive(Clone, Debug)]
pub struct ReplicaOutcome {
    /// Absolute replica index (offset + local index).
    pub replica: u64,
    /// Blocks whose closing regeneration certified within the horizon, in
    /// emission order; index 0 is the pre-regeneration prefix.
    pub blocks: Vec<RegenBlock>,
    pub checkpoints: Vec<Checkpoint>,
    pub final_position: Point,
    pub final_level: f64,
    pub steps: u64,
    /// Stream position after the run; a rerun must land on the same value.
    pub rng_counter: u64,
}

/// Log-spaced checkpoint times: from max(10, steps/1000) up to steps with
/// ratio sqrt(10), deduplicated, always ending at steps. The floor keeps
/// the list near seven entries per thousandfold range regardless of the
/// run length.
pub fn checkpoint_schedule(steps: u64) -> Vec<u64> {
    if steps == 0 {
        return Vec::new();
    }
    let lo = 10u64.max(steps / 1000).min(steps);
    let mut times = vec![lo];
    let ratio = 10f64.sqrt();
    let mut t = lo as f64;
    loop {
        t *= ratio;
        let next = t.round() as u64;
        if next >= steps {
            break;
        }
        if next > *times.last().expect("nonempty") {
            times.push(next);
        }
    }
    if *times.last().expect("nonempty") != steps {
        times.push(steps);
    }
    times
}

/// Runs one replica from the origin. Deterministic in (config, index).
pub fn run_replica(env: &ConductanceField, config: &ResolvedConfig, index: u64) -> ReplicaOutcome {
    let replica = config.walk.replica_offset + index;
    let rng = WalkRng::replica(config.walk.master_seed, replica);
    let dim = env.dim();
    let steps = config.walk.steps;

    let mut stepper = Stepper::new(env, ORIGIN, rng);
    let mut collector = BlockCollector::new(env, ORIGIN, config.regen_config());
    let kernel = stepper.kernel_here();
    collector.feed(ORIGIN, None, &kernel.conductances[..2 * dim], None);

    let schedule = checkpoint_schedule(steps);
    let mut checkpoints = Vec::with_capacity(schedule.len());
    let mut next_cp = 0usize;
    let mut blocks = Vec::new();

    for _ in 0..steps {
        let outcome = stepper.advance();
        let kernel = stepper.kernel_here();
        let emitted = collector.feed(
            stepper.pos,
            Some(outcome.z),
            &kernel.conductances[..2 * dim],
            Some(outcome.crossed_conductance),
        );
        if !emitted.is_empty() {
            blocks.extend(emitted);
        }
        if next_cp < schedule.len() && stepper.time == schedule[next_cp] {
            checkpoints.push(Checkpoint {
                time: stepper.time,
                level: env.level(stepper.pos),
            });
            next_cp += 1;
        }
    }

    ReplicaOutcome {
        replica,
        blocks,
        checkpoints,
        final_position: stepper.pos,
        final_level: env.level(stepper.pos),
        steps,
        rng_counter: stepper.rng_counter(),
    }
}

/// Runs every replica of the config, parallel across the current rayon
/// pool. Collection preserves index order, so the output is independent
/// of the worker count.
pub fn run_all(env: &ConductanceField, config: &ResolvedConfig) -> Vec<ReplicaOutcome> {
    (0..config.walk.replicas)
        .into_par_iter()
        .map(|i| run_replica(env, config, i))
        .collect()
}
