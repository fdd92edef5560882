//! Scratch calibration probe: certified-block yield and step rate as a
//! function of K on the heavy-tailed field. Not part of the crate.

use std::time::Instant;

use trapwalk_core::env::{ConductanceField, ConductanceLaw, Environment};
use trapwalk_core::lattice::ORIGIN;
use trapwalk_core::regen::{BlockCollector, RegenConfig};
use trapwalk_core::scaling::{hill_default_k, hill_estimate};
use trapwalk_core::walk::{Stepper, WalkRng};

fn main() {
    let steps: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(2_000_000);
    println!("steps per case: {steps}");
    let log15 = ConductanceLaw::LogPower {
        gamma: 0.5,
        beta: -1.5,
        x_min: 0.5,
    };
    let log10 = ConductanceLaw::LogPower {
        gamma: 0.5,
        beta: -1.0,
        x_min: 0.5,
    };
    let log075 = ConductanceLaw::LogPower {
        gamma: 0.5,
        beta: -0.75,
        x_min: 0.5,
    };
    for (law, k, lambda) in [
        (&log15, 2.0f64, 1.5f64),
        (&log15, 2.0, 2.0),
        (&log15, 2.0, 3.0),
        (&log10, 2.0, 2.0),
        (&log10, 2.0, 3.0),
        (&log075, 2.0, 3.0),
    ] {
        let env = ConductanceField::new(law.clone(), 11, 2, k, lambda, &[1.0, 0.0]).unwrap();
        let config = RegenConfig {
            alpha: 6,
            margin_level: 30.0,
            n_threshold: 10_000.0,
            delta: 0.25,
        };
        let mut stepper = Stepper::new(&env, ORIGIN, WalkRng::replica(400, 0));
        let mut collector = BlockCollector::new(&env, ORIGIN, config);
        let mut blocks = Vec::new();
        let t0 = Instant::now();
        let kernel = stepper.kernel_here();
        collector.feed(ORIGIN, None, &kernel.conductances, None);
        for _ in 0..steps {
            let out = stepper.advance();
            let kernel = stepper.kernel_here();
            blocks.extend(collector.feed(
                stepper.pos,
                Some(out.z),
                &kernel.conductances,
                Some(out.crossed_conductance),
            ));
        }
        let dt = t0.elapsed().as_secs_f64();
        let proper = blocks.iter().filter(|b| b.index >= 1).count();
        let lt100 = blocks
            .iter()
            .filter(|b| b.index >= 1 && b.flags.lt)
            .count();
        let level = {
            let p = stepper.pos;
            let d = env.direction();
            (0..2).map(|i| p[i] as f64 * d[i]).sum::<f64>()
        };
        let mean_dur = if proper > 0 {
            blocks
                .iter()
                .filter(|b| b.index >= 1)
                .map(|b| b.duration as f64)
                .sum::<f64>()
                / proper as f64
        } else {
            0.0
        };
        let beta = match law {
            ConductanceLaw::LogPower { beta, .. } => *beta,
            _ => 0.0,
        };
        let durations: Vec<f64> = blocks
            .iter()
            .filter(|b| b.index >= 1)
            .map(|b| b.duration as f64)
            .collect();
        let hill = if durations.len() >= 50 {
            hill_estimate(&durations, hill_default_k(durations.len()))
                .map(|f| f.gamma_hat)
                .unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        let lt_blocks: Vec<_> = blocks
            .iter()
            .filter(|b| b.index >= 1 && b.flags.lt)
            .collect();
        let frac = if lt_blocks.is_empty() {
            f64::NAN
        } else {
            lt_blocks
                .iter()
                .map(|b| b.time_on_max_edge as f64 / b.duration as f64)
                .sum::<f64>()
                / lt_blocks.len() as f64
        };
        println!(
            "beta={beta:5.2} K={k:4.1} lambda={lambda:4.1}  proper={proper:6} lt(1e4)={lt100:5} dur={mean_dur:8.1} hill={hill:5.3} lt_frac={frac:5.3} level={level:9.1} steps/s={:.2e}",
            steps as f64 / dt
        );
    }
}
