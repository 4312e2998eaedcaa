//! JSON experiment configuration: parsing, defaulting and validation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gfmc::GfmcSettings;
use crate::model::TfimModel;
use crate::oracle::SignPolicy;
use crate::spectrum::EdLimits;
use crate::trial::TrialSpec;
use crate::walkers::{FlipRule, WalkerStudyConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Default replicates for the GFMC sweep and for the sampling experiments.
pub const DEFAULT_SWEEP_RUNS: usize = 128;
pub const DEFAULT_SAMPLING_REPLICATES: usize = 16;
pub const DEFAULT_RANK_LIMIT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ExactCheck,
    Variational,
    Overlaps,
    LocalEnergy,
    GfmcSweep,
    WalkerStudy,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::ExactCheck => "exact_check",
            ExperimentKind::Variational => "variational",
            ExperimentKind::Overlaps => "overlaps",
            ExperimentKind::LocalEnergy => "local_energy",
            ExperimentKind::GfmcSweep => "gfmc_sweep",
            ExperimentKind::WalkerStudy => "walker_study",
        }
    }

    fn uses_sampling(&self) -> bool {
        matches!(
            self,
            ExperimentKind::Overlaps
                | ExperimentKind::LocalEnergy
                | ExperimentKind::GfmcSweep
                | ExperimentKind::WalkerStudy
        )
    }

    fn uses_rank_limit(&self) -> bool {
        matches!(self, ExperimentKind::Overlaps | ExperimentKind::LocalEnergy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(rename = "L", deserialize_with = "one_or_many")]
    pub sizes: Vec<usize>,
    #[serde(rename = "J", default = "unit_coupling")]
    pub coupling: f64,
    #[serde(rename = "gamma", deserialize_with = "one_or_many")]
    pub fields: Vec<f64>,
    /// Permits 13 and 14 sites for operations that need dense diagonalization.
    #[serde(default)]
    pub allow_large: bool,
}

fn unit_coupling() -> f64 {
    1.0
}

fn one_or_many<'de, D, T>(deserializer: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    match OneOrMany::deserialize(deserializer) {
        Ok(OneOrMany::One(v)) => Ok(vec![v]),
        Ok(OneOrMany::Many(v)) => Ok(v),
        Err(_) => Err(de::Error::custom("expected a number or a list of numbers")),
    }
}

impl ModelSection {
    pub fn ed_limits(&self) -> EdLimits {
        if self.allow_large {
            EdLimits::extended()
        } else {
            EdLimits::default()
        }
    }

    pub fn model(&self, sites: usize, field: f64) -> Result<TfimModel> {
        TfimModel::new(sites, self.coupling, field)
    }

    pub fn gamma_over_j(&self, field: f64) -> f64 {
        field / self.coupling
    }
}

/// Replaces the top-level trial for one Γ value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialOverride {
    pub gamma: f64,
    pub trial: TrialSpec,
}

/// Walker-study settings. The walker base is the top-level trial; budgets and replicates are
/// the top-level ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub tau: f64,
    pub flip_rule: FlipRule,
    pub baseline_rank_limit: Option<usize>,
}

impl Default for StudySection {
    fn default() -> Self {
        let defaults = WalkerStudyConfig::new(Vec::new());
        Self {
            tau: defaults.tau,
            flip_rule: defaults.flip_rule,
            baseline_rank_limit: defaults.baseline_rank_limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    pub model: ModelSection,
    /// Defaults to the optimized symmetric trial.
    #[serde(default = "TrialSpec::optimized_symmetric")]
    pub trial: TrialSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trial_overrides: Vec<TrialOverride>,
    /// Measurement budgets M; 0 selects the exact oracle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budgets: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign_policy: Option<SignPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gfmc: Option<GfmcSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudySection>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Projector shift in effect for one (L, Γ) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedShift {
    #[serde(rename = "L")]
    pub sites: usize,
    pub gamma: f64,
    pub shift: f64,
}

/// A validated config plus the values derived from it, for display.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig<'a> {
    pub config: &'a ExperimentConfig,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub shifts: Vec<ResolvedShift>,
}

impl ExperimentConfig {
    /// Parses and validates; relative `table_file` paths are taken relative to `base_dir`.
    pub fn from_json(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let deserializer = &mut serde_json::Deserializer::from_str(text);
        let mut config: ExperimentConfig = serde_path_to_error::deserialize(deserializer)
            .map_err(|e| {
                let path = e.path().to_string();
                Error::config(path, e.into_inner().to_string())
            })?;
        if let Some(dir) = base_dir {
            config.rebase_paths(dir);
        }
        config.resolve()?;
        Ok(config)
    }

    pub fn trial_for(&self, field: f64) -> &TrialSpec {
        self.trial_overrides
            .iter()
            .find(|o| o.gamma == field)
            .map_or(&self.trial, |o| &o.trial)
    }

    pub fn budgets(&self) -> &[u64] {
        self.budgets.as_deref().unwrap_or(&[])
    }

    pub fn replicates(&self) -> usize {
        self.replicates.unwrap_or(0)
    }

    pub fn sign_policy(&self) -> SignPolicy {
        self.sign_policy.unwrap_or_default()
    }

    pub fn rank_limit(&self) -> usize {
        self.rank_limit.unwrap_or(DEFAULT_RANK_LIMIT)
    }

    pub fn gfmc_settings(&self) -> GfmcSettings {
        self.gfmc.unwrap_or_default()
    }

    pub fn study_config(&self, trial: &TrialSpec) -> WalkerStudyConfig {
        let study = self.study.clone().unwrap_or_default();
        WalkerStudyConfig {
            base: trial.clone(),
            tau: study.tau,
            flip_rule: study.flip_rule,
            budgets: self.budgets().to_vec(),
            replicates: self.replicates(),
            sign_policy: self.sign_policy(),
            baseline_rank_limit: study.baseline_rank_limit,
        }
    }

    /// Every (Γ, L) pair in output order: Γ outer, L inner.
    pub fn grid(&self) -> Vec<(f64, usize)> {
        self.model
            .fields
            .iter()
            .flat_map(|&g| self.model.sizes.iter().map(move |&l| (g, l)))
            .collect()
    }

    pub fn resolved(&self) -> ResolvedConfig<'_> {
        let shifts = match &self.gfmc {
            Some(settings) => self
                .grid()
                .into_iter()
                .filter_map(|(gamma, sites)| {
                    let model = self.model.model(sites, gamma).ok()?;
                    Some(ResolvedShift {
                        sites,
                        gamma,
                        shift: settings.params(&model, 0).shift,
                    })
                })
                .collect(),
            None => Vec::new(),
        };
        ResolvedConfig {
            config: self,
            shifts,
        }
    }

    fn rebase_paths(&mut self, dir: &Path) {
        rebase_trial(&mut self.trial, dir);
        for o in &mut self.trial_overrides {
            rebase_trial(&mut o.trial, dir);
        }
    }

    /// Checks every invariant and fills in experiment-dependent defaults.
    fn resolve(&mut self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        self.check_model()?;
        self.trial.validate().map_err(|e| Error::config("trial", e.to_string()))?;
        for (i, o) in self.trial_overrides.iter().enumerate() {
            if !self.model.fields.contains(&o.gamma) {
                return Err(Error::config(
                    format!("trial_overrides[{i}].gamma"),
                    format!("{} is not one of model.gamma", o.gamma),
                ));
            }
            o.trial
                .validate()
                .map_err(|e| Error::config(format!("trial_overrides[{i}].trial"), e.to_string()))?;
        }

        let kind = self.experiment;
        if kind.uses_sampling() {
            let budgets = self
                .budgets
                .as_ref()
                .ok_or_else(|| missing("budgets", kind))?;
            if budgets.is_empty() {
                return Err(Error::config("budgets", "must list at least one budget"));
            }
            let replicates = self.replicates.get_or_insert(match kind {
                ExperimentKind::GfmcSweep => DEFAULT_SWEEP_RUNS,
                _ => DEFAULT_SAMPLING_REPLICATES,
            });
            if *replicates == 0 {
                return Err(Error::config("replicates", "must be >= 1"));
            }
            self.sign_policy.get_or_insert_with(SignPolicy::default);
        } else {
            forbid(self.budgets.is_some(), "budgets", kind)?;
            forbid(self.replicates.is_some(), "replicates", kind)?;
            forbid(self.sign_policy.is_some(), "sign_policy", kind)?;
        }

        if kind.uses_rank_limit() {
            if *self.rank_limit.get_or_insert(DEFAULT_RANK_LIMIT) == 0 {
                return Err(Error::config("rank_limit", "must be >= 1"));
            }
        } else {
            forbid(self.rank_limit.is_some(), "rank_limit", kind)?;
        }

        if kind == ExperimentKind::GfmcSweep {
            let settings = self.gfmc.ok_or_else(|| missing("gfmc", kind))?;
            for (gamma, sites) in self.grid() {
                let model = self.model.model(sites, gamma)?;
                check_gfmc(&settings, &model)?;
            }
        } else {
            forbid(self.gfmc.is_some(), "gfmc", kind)?;
        }

        if kind == ExperimentKind::WalkerStudy {
            let study = self.study.as_ref().ok_or_else(|| missing("study", kind))?;
            if !(study.tau.is_finite() && study.tau >= 0.0) {
                return Err(Error::config("study.tau", format!("must be >= 0, got {}", study.tau)));
            }
            if study.baseline_rank_limit == Some(0) {
                return Err(Error::config("study.baseline_rank_limit", "must be >= 1"));
            }
            if let FlipRule::RandomSubsets { per_cardinality: 0, .. } = study.flip_rule {
                return Err(Error::config("study.flip_rule.per_cardinality", "must be >= 1"));
            }
            for (i, spec) in std::iter::once(&self.trial)
                .chain(self.trial_overrides.iter().map(|o| &o.trial))
                .enumerate()
            {
                if matches!(spec, TrialSpec::ImaginaryTimeFiltered { .. }) {
                    let path = if i == 0 {
                        "trial".to_string()
                    } else {
                        format!("trial_overrides[{}].trial", i - 1)
                    };
                    return Err(Error::config(path, "the walker base cannot be filtered; set study.tau instead"));
                }
            }
        } else {
            forbid(self.study.is_some(), "study", kind)?;
        }
        Ok(())
    }

    fn check_model(&self) -> Result<()> {
        let model = &self.model;
        if model.sizes.is_empty() {
            return Err(Error::config("model.L", "must list at least one chain length"));
        }
        let max_sites = model.ed_limits().max_sites;
        for (i, &sites) in model.sizes.iter().enumerate() {
            if sites < 2 || sites > max_sites {
                let hint = if model.allow_large {
                    String::new()
                } else {
                    format!("; set model.allow_large for up to {}", EdLimits::EXTENDED_MAX_SITES)
                };
                return Err(Error::config(
                    format!("model.L[{i}]"),
                    format!("{sites} is outside 2..={max_sites}{hint}"),
                ));
            }
        }
        if !(model.coupling.is_finite() && model.coupling > 0.0) {
            return Err(Error::config("model.J", format!("must be > 0, got {}", model.coupling)));
        }
        if model.fields.is_empty() {
            return Err(Error::config("model.gamma", "must list at least one field"));
        }
        for (i, &g) in model.fields.iter().enumerate() {
            if !(g.is_finite() && g >= 0.0) {
                return Err(Error::config(format!("model.gamma[{i}]"), format!("must be >= 0, got {g}")));
            }
        }
        Ok(())
    }
}

fn check_gfmc(settings: &GfmcSettings, model: &TfimModel) -> Result<()> {
    let params = settings.params(model, 0);
    if params.population == 0 {
        return Err(Error::config("gfmc.population", "must be >= 1"));
    }
    if params.reconfigure_every == 0 {
        return Err(Error::config("gfmc.reconfigure_every", "must be >= 1"));
    }
    if params.equilibration_steps >= params.total_steps {
        return Err(Error::config(
            "gfmc.equilibration_steps",
            format!(
                "must be smaller than total_steps ({} >= {})",
                params.equilibration_steps, params.total_steps
            ),
        ));
    }
    params.validate(model).map_err(|e| {
        Error::config(
            "gfmc.shift",
            format!("L = {}, gamma = {}: {e}", model.sites(), model.field()),
        )
    })
}

fn missing(section: &str, kind: ExperimentKind) -> Error {
    Error::config(section, format!("required by experiment `{}`", kind.as_str()))
}

fn forbid(present: bool, section: &str, kind: ExperimentKind) -> Result<()> {
    if present {
        return Err(Error::config(
            section,
            format!("not used by experiment `{}`", kind.as_str()),
        ));
    }
    Ok(())
}

fn rebase_trial(spec: &mut TrialSpec, dir: &Path) {
    match spec {
        TrialSpec::TableFile { path } if path.is_relative() => *path = dir.join(&*path),
        TrialSpec::ImaginaryTimeFiltered { base, .. } => rebase_trial(base, dir),
        _ => {}
    }
}

/// Reads, parses and validates a config file.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_json(&text, path.parent())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(text, None)
    }

    fn config_path(err: Error) -> String {
        match err {
            Error::Config { path, .. } => path,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn minimal_sweep_echoes_default_shift() {
        let config = parse(
            r#"{"schema_version":1,"experiment":"gfmc_sweep","model":{"L":[6,8],"gamma":0.5},
                "budgets":[1000],"gfmc":{}}"#,
        )
        .unwrap();
        assert_eq!(config.replicates, Some(DEFAULT_SWEEP_RUNS));
        assert_eq!(config.gfmc_settings(), GfmcSettings::default());
        let resolved = config.resolved();
        let shifts: Vec<f64> = resolved.shifts.iter().map(|s| s.shift).collect();
        assert_eq!(shifts, vec![6.0 * 1.5 + 1.0, 8.0 * 1.5 + 1.0]);
        let json = serde_json::to_value(&resolved).unwrap();
        assert_eq!(json["shifts"][0]["shift"], 10.0);
        assert_eq!(json["config"]["model"]["L"], serde_json::json!([6, 8]));
    }

    #[test]
    fn errors_name_the_offending_key() {
        let base = r#""schema_version":1,"model":{"L":6,"gamma":1.0}"#;
        let cases = [
            (format!(r#"{{{base},"experiment":"overlaps","budgets":[10],"replicates":0}}"#), "replicates"),
            (format!(r#"{{{base},"experiment":"exact_check","bogus":1}}"#), "bogus"),
            (r#"{"schema_version":1,"experiment":"exact_check","model":{"L":6,"gamma":1,"K":2}}"#.to_string(), "model.K"),
            (r#"{"schema_version":1,"experiment":"exact_check","model":{"L":[],"gamma":1}}"#.to_string(), "model.L"),
            (r#"{"schema_version":1,"experiment":"exact_check","model":{"L":[6,13],"gamma":1}}"#.to_string(), "model.L[1]"),
            (format!(r#"{{{base},"experiment":"gfmc_sweep","budgets":[10]}}"#), "gfmc"),
            (format!(r#"{{{base},"experiment":"gfmc_sweep","budgets":[10],"gfmc":{{"population":"x"}}}}"#), "gfmc.population"),
            (format!(r#"{{{base},"experiment":"gfmc_sweep","budgets":[10],"gfmc":{{"shift":3.0}}}}"#), "gfmc.shift"),
            (format!(r#"{{{base},"experiment":"exact_check","gfmc":{{}}}}"#), "gfmc"),
            (format!(r#"{{{base},"experiment":"walker_study","budgets":[10],"study":{{"tau":-1}}}}"#), "study.tau"),
            (format!(r#"{{{base},"experiment":"variational","trial":{{"kind":"symmetric_exponential","lambda":-1}}}}"#), "trial"),
            (format!(r#"{{{base},"experiment":"overlaps"}}"#), "budgets"),
            (r#"{"schema_version":2,"experiment":"exact_check","model":{"L":6,"gamma":1}}"#.to_string(), "schema_version"),
        ];
        for (text, key) in cases {
            let err = parse(&text).expect_err(&text);
            assert_eq!(config_path(err), key, "{text}");
        }
    }

    #[test]
    fn unknown_key_message_names_the_key() {
        let err = parse(r#"{"schema_version":1,"experiment":"exact_check","model":{"L":6,"gamma":1},"repilcates":3}"#)
            .unwrap_err();
        assert!(err.to_string().contains("repilcates"), "{err}");
    }

    #[test]
    fn large_chains_need_opt_in() {
        let text = r#"{"schema_version":1,"experiment":"exact_check","model":{"L":14,"gamma":1,"allow_large":true}}"#;
        let config = parse(text).unwrap();
        assert_eq!(config.model.ed_limits(), EdLimits::extended());
    }

    #[test]
    fn hash_input_is_order_independent() {
        let a = parse(r#"{"schema_version":1,"experiment":"exact_check","model":{"L":6,"gamma":1}}"#).unwrap();
        let b = parse(r#"{"model":{"gamma":1,"L":6},"experiment":"exact_check","schema_version":1}"#).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overrides_pick_trial_per_gamma() {
        let config = parse(
            r#"{"schema_version":1,"experiment":"variational","model":{"L":6,"gamma":[0.5,1.0]},
                "trial":{"kind":"symmetric_exponential"},
                "trial_overrides":[{"gamma":0.5,"trial":{"kind":"symmetric_exponential","lambda":0.127}}]}"#,
        )
        .unwrap();
        assert_eq!(config.trial_for(0.5), &TrialSpec::symmetric(0.127));
        assert_eq!(config.trial_for(1.0), &TrialSpec::optimized_symmetric());
        let err = parse(
            r#"{"schema_version":1,"experiment":"variational","model":{"L":6,"gamma":1.0},
                "trial_overrides":[{"gamma":0.5,"trial":{"kind":"exact_ground"}}]}"#,
        )
        .unwrap_err();
        assert_eq!(config_path(err), "trial_overrides[0].gamma");
    }

    #[test]
    fn table_paths_resolve_against_config_dir() {
        let config = ExperimentConfig::from_json(
            r#"{"schema_version":1,"experiment":"variational","model":{"L":6,"gamma":1},
                "trial":{"kind":"table_file","path":"psi.qmct"}}"#,
            Some(Path::new("/configs")),
        )
        .unwrap();
        assert_eq!(
            config.trial,
            TrialSpec::TableFile {
                path: PathBuf::from("/configs/psi.qmct")
            }
        );
    }
}
