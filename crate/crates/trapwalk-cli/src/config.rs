//! Run configuration: TOML parsing, defaults, and cross-validation.
//!
//! Parsing is strict (unknown keys are rejected as typos) while values are
//! permissive at parse time: every constraint violation is collected and
//! reported in one pass, so a config with three problems produces three
//! diagnostics, not one per run attempt. The resolved config echoes every
//! applied default, and the manifest serializes the resolved form, so no
//! output ever depends on an unstated default.

use serde::{Deserialize, Serialize};

use trapwalk_core::env::{ConductanceField, ConductanceLaw};
use trapwalk_core::regen::RegenConfig;
use trapwalk_core::walk::default_margin_level;

/// Schema version stamped into every artifact this binary writes.
pub const ARTIFACT_VERSION: &str = "trapwalk/1";

#[derive(thiserror::Error, Debug)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    /// All constraint violations, one per line.
    #[error("invalid config:\n{}", .0.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<String>),
}

/// Which experiment a run executes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Displacement-exponent regression from checkpoint levels.
    Exponent,
    /// Block-duration harvest with tail and self-similarity statistics.
    Clock,
    /// Transverse-fluctuation geometry check.
    Fk,
    /// Trap observables and collapsed-model excursion statistics.
    Traps,
    /// Exact-formula checks only; no walk simulation.
    OracleSuite,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Exponent => "exponent",
            Experiment::Clock => "clock",
            Experiment::Fk => "fk",
            Experiment::Traps => "traps",
            Experiment::OracleSuite => "oracle_suite",
        }
    }

    /// Oracle runs never touch the walk engine.
    pub fn simulates(self) -> bool {
        !matches!(self, Experiment::OracleSuite)
    }
}

/// Conductance-law selector in the config file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawKind {
    Pareto,
    LogPower,
    Bounded,
}

/// Output table/report formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// The [field] section as written by the user; every key optional except
/// the law-specific parameters checked during validation.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawField {
    dimension: Option<usize>,
    law: Option<LawKind>,
    gamma: Option<f64>,
    x_min: Option<f64>,
    beta: Option<f64>,
    lo: Option<f64>,
    hi: Option<f64>,
    k: Option<f64>,
    lambda: Option<f64>,
    direction: Option<Vec<f64>>,
    seed: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWalk {
    steps: Option<u64>,
    replicas: Option<u64>,
    replica_offset: Option<u64>,
    master_seed: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegen {
    alpha: Option<u32>,
    margin: Option<f64>,
    n_threshold: Option<f64>,
    delta: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutputs {
    directory: Option<String>,
    formats: Option<Vec<OutputFormat>>,
}

/// The whole config file as parsed; `resolve` turns it into a
/// [`ResolvedConfig`] or the full list of violations.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    experiment: Option<Experiment>,
    #[serde(default)]
    field: RawField,
    #[serde(default)]
    walk: RawWalk,
    #[serde(default)]
    regen: RawRegen,
    #[serde(default)]
    outputs: RawOutputs,
}

/// Resolved [field] section: every value explicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub dimension: usize,
    pub law: ConductanceLaw,
    pub k: f64,
    pub lambda: f64,
    /// Unit vector (normalized during resolution).
    pub direction: Vec<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub steps: u64,
    pub replicas: u64,
    /// First replica index; lets sharded runs cover disjoint index ranges
    /// under one master seed and later merge into one larger run.
    pub replica_offset: u64,
    pub master_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegenSection {
    pub alpha: u32,
    pub margin: f64,
    pub n_threshold: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputsConfig {
    pub directory: String,
    pub formats: Vec<OutputFormat>,
}

/// A fully resolved run configuration: defaults applied, direction
/// normalized, all invariants verified. This is what the manifest echoes
/// and what the run id hashes (outputs excluded, see `run_id`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub experiment: Experiment,
    pub field: FieldConfig,
    pub walk: WalkConfig,
    pub regen: RegenSection,
    pub outputs: OutputsConfig,
}

impl RawConfig {
    pub fn from_toml(text: &str) -> Result<RawConfig, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: &std::path::Path) -> Result<RawConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        RawConfig::from_toml(&text)
    }

    /// Applies defaults and validates. On success returns the resolved
    /// config plus human-readable notices (defaults applied, direction
    /// normalized); on failure returns every violation at once.
    pub fn resolve(&self, out_root: Option<&str>) -> Result<(ResolvedConfig, Vec<String>), ConfigError> {
        let mut violations = Vec::new();
        let mut notices = Vec::new();

        let experiment = match self.experiment {
            Some(e) => e,
            None => {
                violations.push(
                    "experiment is required (exponent | clock | fk | traps | oracle_suite)"
                        .to_string(),
                );
                Experiment::OracleSuite
            }
        };

        let dimension = self.field.dimension.unwrap_or_else(|| {
            notices.push("field.dimension defaulted to 2".to_string());
            2
        });
        if !(2..=4).contains(&dimension) {
            violations.push(format!(
                "field.dimension = {dimension} outside the supported range 2..=4"
            ));
        }

        let law_kind = self.field.law.unwrap_or_else(|| {
            notices.push("field.law defaulted to pareto".to_string());
            LawKind::Pareto
        });
        let law = self.build_law(law_kind, &mut violations, &mut notices);

        let k = self.field.k.unwrap_or_else(|| {
            notices.push("field.k defaulted to 20".to_string());
            20.0
        });
        if !(k >= 1.0) {
            violations.push(format!("field.k = {k} must be >= 1"));
        }

        let lambda = self.field.lambda.unwrap_or_else(|| {
            notices.push("field.lambda defaulted to 1".to_string());
            1.0
        });
        if !(lambda > 0.0) {
            violations.push(format!("field.lambda = {lambda} must be > 0"));
        }

        let dim_for_dir = dimension.clamp(2, 4);
        let mut direction = self.field.direction.clone().unwrap_or_else(|| {
            notices.push("field.direction defaulted to the first basis vector".to_string());
            let mut d = vec![0.0; dim_for_dir];
            d[0] = 1.0;
            d
        });
        if direction.len() != dimension {
            violations.push(format!(
                "field.direction has {} components, field.dimension is {dimension}",
                direction.len()
            ));
        } else {
            let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                violations.push("field.direction must be nonzero".to_string());
            } else {
                if (norm - 1.0).abs() > 1e-12 {
                    notices.push(format!(
                        "field.direction normalized to unit length (was |v| = {norm})"
                    ));
                }
                for v in direction.iter_mut() {
                    *v /= norm;
                }
                for i in 0..direction.len() {
                    if direction[i] < 0.0 {
                        violations.push(format!(
                            "field.direction[{i}] = {} is negative; the basis convention \
                             requires nonnegative, non-increasing components",
                            direction[i]
                        ));
                        break;
                    }
                    if i + 1 < direction.len() && direction[i] + 1e-15 < direction[i + 1] {
                        violations.push(format!(
                            "field.direction components must be non-increasing \
                             (component {} < component {})",
                            i,
                            i + 1
                        ));
                        break;
                    }
                }
            }
        }

        let seed = self.field.seed.unwrap_or_else(|| {
            notices.push("field.seed defaulted to 1".to_string());
            1
        });

        let steps = match self.walk.steps {
            Some(s) => s,
            None => {
                if experiment.simulates() {
                    violations.push("walk.steps is required for simulation experiments".to_string());
                }
                0
            }
        };
        if experiment.simulates() && self.walk.steps == Some(0) {
            violations.push("walk.steps must be >= 1".to_string());
        }
        let replicas = self.walk.replicas.unwrap_or_else(|| {
            if experiment.simulates() {
                notices.push("walk.replicas defaulted to 1".to_string());
            }
            1
        });
        if replicas == 0 {
            violations.push("walk.replicas must be >= 1".to_string());
        }
        let replica_offset = self.walk.replica_offset.unwrap_or(0);
        let master_seed = self.walk.master_seed.unwrap_or_else(|| {
            if experiment.simulates() {
                notices.push("walk.master_seed defaulted to 0".to_string());
            }
            0
        });

        let alpha = self.regen.alpha.unwrap_or_else(|| {
            notices.push(format!(
                "regen.alpha defaulted to dimension + 4 = {}",
                dimension + 4
            ));
            (dimension + 4) as u32
        });
        if alpha < 1 {
            violations.push("regen.alpha must be >= 1".to_string());
        }

        let margin = self.regen.margin.unwrap_or_else(|| {
            let mut d4 = [0.0; 4];
            for (i, v) in direction.iter().take(4).enumerate() {
                d4[i] = *v;
            }
            let m = default_margin_level(&d4, dim_for_dir);
            notices.push(format!("regen.margin defaulted to {m} level units"));
            m
        });
        if !(margin > 0.0) {
            violations.push(format!("regen.margin = {margin} must be > 0"));
        }

        let n_threshold = self.regen.n_threshold.unwrap_or_else(|| {
            notices.push("regen.n_threshold defaulted to 1e4".to_string());
            1e4
        });
        if !(n_threshold > k) {
            violations.push(format!(
                "regen.n_threshold = {n_threshold} must exceed field.k = {k}: a trap edge \
                 must be abnormal, or its endpoints could carry a regeneration point"
            ));
        }

        let delta = self.regen.delta.unwrap_or_else(|| {
            notices.push("regen.delta defaulted to 0.25".to_string());
            0.25
        });
        if !(delta > 0.0 && delta < 1.0) {
            violations.push(format!("regen.delta = {delta} must be in (0, 1)"));
        } else if let Some(gamma) = law.gamma() {
            let cap = 1.0 / (gamma + 3.0);
            if delta >= cap {
                violations.push(format!(
                    "regen.delta = {delta} violates delta < 1/(gamma + 3) = {cap:.6} \
                     for gamma = {gamma}"
                ));
            }
        }

        let formats = self.outputs.formats.clone().unwrap_or_else(|| {
            notices.push("outputs.formats defaulted to [csv, json]".to_string());
            vec![OutputFormat::Csv, OutputFormat::Json]
        });
        if formats.is_empty() {
            violations.push("outputs.formats must not be empty".to_string());
        }

        if !violations.is_empty() {
            return Err(ConfigError::Invalid(violations));
        }

        // The directory may embed the run id, so resolve it after the
        // scientific sections are final.
        let mut resolved = ResolvedConfig {
            experiment,
            field: FieldConfig {
                dimension,
                law,
                k,
                lambda,
                direction,
                seed,
            },
            walk: WalkConfig {
                steps,
                replicas,
                replica_offset,
                master_seed,
            },
            regen: RegenSection {
                alpha,
                margin,
                n_threshold,
                delta,
            },
            outputs: OutputsConfig {
                directory: String::new(),
                formats,
            },
        };
        let directory = match &self.outputs.directory {
            Some(d) => d.clone(),
            None => {
                let root = out_root.map(str::to_string).unwrap_or_else(|| {
                    std::env::var("TRAPWALK_OUT").unwrap_or_else(|_| "trapwalk-out".to_string())
                });
                let dir = format!("{root}/run-{}", &resolved.run_id()[..12]);
                notices.push(format!("outputs.directory defaulted to {dir}"));
                dir
            }
        };
        resolved.outputs.directory = directory;
        Ok((resolved, notices))
    }

    fn build_law(
        &self,
        kind: LawKind,
        violations: &mut Vec<String>,
        notices: &mut Vec<String>,
    ) -> ConductanceLaw {
        let f = &self.field;
        let stray = |name: &str, present: bool, violations: &mut Vec<String>, kind: LawKind| {
            if present {
                violations.push(format!(
                    "field.{name} does not apply to law = {kind:?}",
                ));
            }
        };
        let law = match kind {
            LawKind::Pareto => {
                stray("beta", f.beta.is_some(), violations, kind);
                stray("lo", f.lo.is_some(), violations, kind);
                stray("hi", f.hi.is_some(), violations, kind);
                let gamma = f.gamma.unwrap_or_else(|| {
                    notices.push("field.gamma defaulted to 0.5".to_string());
                    0.5
                });
                let x_min = f.x_min.unwrap_or_else(|| {
                    notices.push("field.x_min defaulted to 1".to_string());
                    1.0
                });
                ConductanceLaw::Pareto { gamma, x_min }
            }
            LawKind::LogPower => {
                stray("lo", f.lo.is_some(), violations, kind);
                stray("hi", f.hi.is_some(), violations, kind);
                let gamma = f.gamma.unwrap_or_else(|| {
                    notices.push("field.gamma defaulted to 0.5".to_string());
                    0.5
                });
                let x_min = f.x_min.unwrap_or_else(|| {
                    notices.push("field.x_min defaulted to 1".to_string());
                    1.0
                });
                let beta = f.beta.unwrap_or_else(|| {
                    notices.push("field.beta defaulted to 1".to_string());
                    1.0
                });
                ConductanceLaw::LogPower { gamma, beta, x_min }
            }
            LawKind::Bounded => {
                stray("gamma", f.gamma.is_some(), violations, kind);
                stray("x_min", f.x_min.is_some(), violations, kind);
                stray("beta", f.beta.is_some(), violations, kind);
                let lo = f.lo.unwrap_or_else(|| {
                    notices.push("field.lo defaulted to 1".to_string());
                    1.0
                });
                let hi = f.hi.unwrap_or_else(|| {
                    notices.push("field.hi defaulted to 2".to_string());
                    2.0
                });
                ConductanceLaw::Bounded { lo, hi }
            }
        };
        if let Err(e) = law.validate() {
            violations.push(e.to_string());
        }
        law
    }
}

impl ResolvedConfig {
    /// Deterministic run identity: a keyed hash of the canonical JSON of
    /// the scientific sections (experiment, field, walk, regen). The
    /// outputs section is excluded so the same run written to two
    /// different directories keeps one identity, and so the directory may
    /// embed the id without circularity.
    pub fn run_id(&self) -> String {
        #[derive(Serialize)]
        struct Scientific<'a> {
            experiment: &'a Experiment,
            field: &'a FieldConfig,
            walk: &'a WalkConfig,
            regen: &'a RegenSection,
        }
        let canon = serde_json::to_string(&Scientific {
            experiment: &self.experiment,
            field: &self.field,
            walk: &self.walk,
            regen: &self.regen,
        })
        .expect("config serializes");
        let words: Vec<u64> = canon
            .as_bytes()
            .chunks(8)
            .map(|c| {
                let mut w = [0u8; 8];
                w[..c.len()].copy_from_slice(c);
                u64::from_le_bytes(w)
            })
            .collect();
        let h1 = trapwalk_core::env::keyed_hash(0x7261_7077_616c_6b31, &words);
        let h2 = trapwalk_core::env::keyed_hash(h1 ^ 0x9e37_79b9_7f4a_7c15, &words);
        format!("{h1:016x}{h2:016x}")
    }

    /// The scientific sections all merge inputs must share: everything
    /// except outputs and the replica partition (master_seed, replicas,
    /// replica_offset), which the merge is allowed to pool over.
    pub fn merge_key(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            experiment: &'a Experiment,
            field: &'a FieldConfig,
            steps: u64,
            regen: &'a RegenSection,
        }
        serde_json::to_string(&Key {
            experiment: &self.experiment,
            field: &self.field,
            steps: self.walk.steps,
            regen: &self.regen,
        })
        .expect("config serializes")
    }

    /// Builds the immutable conductance field this config describes.
    pub fn build_field(&self) -> ConductanceField {
        ConductanceField::new(
            self.field.law.clone(),
            self.field.seed,
            self.field.dimension,
            self.field.k,
            self.field.lambda,
            &self.field.direction,
        )
        .expect("validated config builds")
    }

    pub fn regen_config(&self) -> RegenConfig {
        RegenConfig {
            alpha: self.regen.alpha,
            margin_level: self.regen.margin,
            n_threshold: self.regen.n_threshold,
            delta: self.regen.delta,
        }
    }

    pub fn wants(&self, format: OutputFormat) -> bool {
        self.outputs.formats.contains(&format)
    }
}
