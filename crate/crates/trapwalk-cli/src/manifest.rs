//! The run manifest: everything needed to reproduce a run bit-exactly,
//! plus timing metadata. Tables and reports carry no timing, so a rerun
//! from the manifest matches them byte for byte; the manifest itself is
//! identical outside its `timing` object.

use serde::{Deserialize, Serialize};

use crate::config::{ResolvedConfig, ARTIFACT_VERSION};
use trapwalk_core::walk::WalkRng;

/// Wall-clock metadata of one run. Excluded from reproducibility
/// comparisons; everything else in the manifest is a pure function of the
/// resolved config.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Timing {
    pub wall_clock_seconds: f64,
    pub steps_per_second: f64,
    pub created_unix: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub run_id: String,
    pub config: ResolvedConfig,
    /// Defaults applied and normalizations performed during resolution.
    pub notices: Vec<String>,
    /// Stream seed of each replica, derived as keyed-function(master_seed,
    /// replica index); echoed so external tools can verify the derivation.
    pub replica_seeds: Vec<u64>,
    /// Files this run wrote, relative to the output directory.
    pub outputs: Vec<String>,
    pub timing: Timing,
}

impl RunManifest {
    pub fn new(config: ResolvedConfig, notices: Vec<String>) -> RunManifest {
        let replica_seeds = if config.experiment.simulates() {
            (0..config.walk.replicas)
                .map(|i| WalkRng::replica(config.walk.master_seed, config.walk.replica_offset + i).seed)
                .collect()
        } else {
            Vec::new()
        };
        RunManifest {
            artifact_version: ARTIFACT_VERSION.to_string(),
            run_id: config.run_id(),
            config,
            notices,
            replica_seeds,
            outputs: Vec::new(),
            timing: Timing::default(),
        }
    }

    /// Reproducibility identity: equal when the two manifests describe the
    /// same run, ignoring timing and output listing order.
    pub fn same_run(&self, other: &RunManifest) -> bool {
        self.artifact_version == other.artifact_version
            && self.run_id == other.run_id
            && self.config == other.config
            && self.replica_seeds == other.replica_seeds
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RawConfig;

    fn resolved() -> (ResolvedConfig, Vec<String>) {
        RawConfig::from_toml(
            r#"
            experiment = "clock"
            [field]
            seed = 7
            [walk]
            steps = 100
            replicas = 3
            master_seed = 41
            [outputs]
            directory = "x"
        "#,
        )
        .unwrap()
        .resolve(None)
        .unwrap()
    }

    #[test]
    fn replica_seeds_match_keyed_derivation() {
        let (cfg, notices) = resolved();
        let m = RunManifest::new(cfg, notices);
        assert_eq!(m.replica_seeds.len(), 3);
        for (i, &s) in m.replica_seeds.iter().enumerate() {
            assert_eq!(s, WalkRng::replica(41, i as u64).seed);
        }
        // Keyed derivation, not sequential: seeds are not consecutive.
        assert_ne!(m.replica_seeds[1], m.replica_seeds[0] + 1);
    }

    #[test]
    fn same_run_ignores_timing() {
        let (cfg, notices) = resolved();
        let mut a = RunManifest::new(cfg.clone(), notices.clone());
        let mut b = RunManifest::new(cfg, notices);
        a.timing.wall_clock_seconds = 1.0;
        b.timing.wall_clock_seconds = 99.0;
        b.outputs.push("blocks.csv".to_string());
        assert!(a.same_run(&b));
    }

    #[test]
    fn manifest_roundtrips_through_json() {
        let (cfg, notices) = resolved();
        let m = RunManifest::new(cfg, notices);
        let text = serde_json::to_string_pretty(&m).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert!(m.same_run(&back));
        assert_eq!(back.run_id, m.config.run_id());
    }
}
