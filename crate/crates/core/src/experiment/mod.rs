//! Batch experiments: JSON configs in, CSV tables and a `manifest.json` out.
//!
//! Every random stream is seeded from `(master_seed, L, Γ/J, M, replicate)`, so outputs do not
//! depend on the thread count or on which other cells share the run.

mod config;
mod manifest;
mod run;

pub use config::{
    validate_config, ExperimentConfig, ExperimentKind, ModelSection, ResolvedConfig,
    ResolvedShift, StudySection, TrialOverride, DEFAULT_RANK_LIMIT, DEFAULT_SAMPLING_REPLICATES,
    DEFAULT_SWEEP_RUNS, SCHEMA_VERSION,
};
pub use manifest::{
    config_hash, sha256_hex, Artifact, ArtifactKind, CellSeed, RunManifest, TrialRecord,
    MANIFEST_FILE, RESOLVED_CONFIG_FILE,
};
pub use run::{run_experiment, run_experiment_with, RunOptions, EXACT_AGREEMENT_TOL};
