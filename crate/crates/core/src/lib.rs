//! Classical emulation of quantum-assisted Green's-function Monte Carlo on the periodic
//! transverse-field Ising chain.
//!
//! Trial amplitudes reach the Monte Carlo driver through an [`AmplitudeOracle`], either exactly or
//! as √(n_x/M) estimates from M simulated computational-basis measurements. The crate quantifies
//! how that finite-measurement noise biases GFMC energies and overlap/local-energy statistics.

pub mod error;
pub mod experiment;
pub mod gfmc;
pub mod model;
pub mod oracle;
pub mod seed;
pub mod spectrum;
pub mod stats;
pub mod trial;
pub mod walkers;

pub use error::{Error, Result};
pub use gfmc::{
    gfmc_step, local_energy, reconfigure, run_gfmc, sweep_measurements, GfmcParams, GfmcResult,
    GfmcSettings, SweepCell, SweepSpec, Walker,
};
pub use model::{SpinConfiguration, TfimModel};
pub use oracle::{
    estimated_amplitude, overlap_distribution, sample_counts, AmplitudeOracle, MeasurementBudget,
    ShotCounts, SignPolicy,
};
pub use seed::derive_seed;
pub use spectrum::{exact_ground_ed, exact_ground_fermion, EdLimits, SpectrumMethod, SpectrumResult};
pub use trial::{
    amplitude_symmetric, build_trial_table, optimize_lambda, variational_energy, LambdaWindow,
    SymmetricExponentialTrial, TrialSpec, TrialTable,
};
pub use walkers::{
    run_walker_study, walker_amplitude, walker_local_energy, walker_overlap, FlipRule,
    NonOrthogonalWalker, Panel, WalkerStudy, WalkerStudyConfig,
};
pub use experiment::{
    run_experiment, run_experiment_with, validate_config, ExperimentConfig, ExperimentKind,
    RunManifest, RunOptions,
};

/// Largest chain for which dense 2^L vectors are built.
pub const DENSE_MAX_SITES: usize = 20;
