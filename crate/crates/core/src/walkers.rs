//! Static overlap and local-energy studies with non-orthogonal walkers X_S|Ψ_MC⟩.
//!
//! Two panels are produced per study:
//! * product-state walkers |x⟩ with Ψ_T = Ψ_MC (the ordinary GFMC walkers), and
//! * spin-flip walkers X_S|Ψ_MC⟩ with Ψ_T = e^{-τH}|Ψ_MC⟩.
//!
//! Each (panel, M, replicate) draws one shot histogram that serves every walker of the panel.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gfmc::{build_oracle, local_energy};
use crate::model::{mask, SpinConfiguration, TfimModel};
use crate::oracle::{AmplitudeOracle, ShotSampler, SignPolicy};
use crate::seed::{derive_seed, CellKey, Stream};
use crate::spectrum::EdLimits;
use crate::stats;
use crate::trial::{build_trial_table_with, TrialSpec, TrialTable};

/// The state X_S|base⟩; amplitudes are read from the base table, nothing is stored.
#[derive(Debug, Clone)]
pub struct NonOrthogonalWalker {
    flip_mask: u64,
    base: Arc<TrialTable>,
}

impl NonOrthogonalWalker {
    pub fn new(flip_mask: u64, base: Arc<TrialTable>) -> Result<Self> {
        if flip_mask & !mask(base.sites()) != 0 {
            return Err(Error::InvalidArgument(format!(
                "flip mask {flip_mask:#b} exceeds {} sites",
                base.sites()
            )));
        }
        Ok(Self { flip_mask, base })
    }

    pub fn flip_mask(&self) -> u64 {
        self.flip_mask
    }

    pub fn flip_count(&self) -> u32 {
        self.flip_mask.count_ones()
    }

    pub fn sites(&self) -> usize {
        self.base.sites()
    }

    #[inline]
    pub fn amplitude(&self, x: SpinConfiguration) -> f64 {
        self.base.amplitudes()[(x.bits() ^ self.flip_mask) as usize]
    }

    pub fn dense(&self) -> Vec<f64> {
        let base = self.base.amplitudes();
        (0..base.len())
            .map(|x| base[x ^ self.flip_mask as usize])
            .collect()
    }
}

pub fn walker_amplitude(walker: &NonOrthogonalWalker, x: SpinConfiguration) -> f64 {
    walker.amplitude(x)
}

/// Σ_x ψ̃(x)·φ_w(x) over the oracle's support.
pub fn walker_overlap(oracle: &AmplitudeOracle, walker: &NonOrthogonalWalker) -> Result<f64> {
    check_sites(oracle, walker)?;
    Ok(contract(oracle.estimates(), &walker.dense()))
}

/// [Σ ψ̃(x)(Hφ_w)(x)] / [Σ ψ̃(x)φ_w(x)] / L.
pub fn walker_local_energy(
    model: &TfimModel,
    oracle: &AmplitudeOracle,
    walker: &NonOrthogonalWalker,
) -> Result<f64> {
    check_sites(oracle, walker)?;
    let terms = WalkerTerms::new(model, walker)?;
    terms
        .local_energy_per_site(oracle.estimates(), model.sites())
        .ok_or(Error::UndefinedLocalEnergy {
            state: walker.flip_mask,
        })
}

fn check_sites(oracle: &AmplitudeOracle, walker: &NonOrthogonalWalker) -> Result<()> {
    if oracle.sites() != walker.sites() {
        return Err(Error::InvalidArgument(format!(
            "oracle is for L = {}, walker for L = {}",
            oracle.sites(),
            walker.sites()
        )));
    }
    Ok(())
}

/// Cached φ_w and Hφ_w for repeated contraction against different oracles.
struct WalkerTerms {
    phi: Vec<f64>,
    h_phi: Vec<f64>,
}

impl WalkerTerms {
    fn new(model: &TfimModel, walker: &NonOrthogonalWalker) -> Result<Self> {
        let phi = walker.dense();
        let h_phi = model.apply_hamiltonian(&phi)?;
        Ok(Self { phi, h_phi })
    }

    fn overlap(&self, estimates: &[f64]) -> f64 {
        contract(estimates, &self.phi)
    }

    fn local_energy_per_site(&self, estimates: &[f64], sites: usize) -> Option<f64> {
        let denominator = self.overlap(estimates);
        if denominator == 0.0 {
            return None;
        }
        Some(contract(estimates, &self.h_phi) / denominator / sites as f64)
    }
}

fn contract(estimates: &[f64], vector: &[f64]) -> f64 {
    estimates
        .iter()
        .zip(vector)
        .filter(|(e, _)| **e != 0.0)
        .map(|(e, v)| e * v)
        .sum()
}

/// Which flip masks generate the spin-flip walkers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FlipRule {
    /// Flip sites 0..k for k = 1..=L, giving exactly L walkers.
    Prefix,
    /// `per_cardinality` distinct random subsets of each size k = 1..=L (fewer when fewer exist).
    RandomSubsets { per_cardinality: usize, seed: u64 },
}

impl FlipRule {
    pub fn masks(&self, sites: usize) -> Vec<u64> {
        match *self {
            FlipRule::Prefix => (1..=sites).map(mask).collect(),
            FlipRule::RandomSubsets {
                per_cardinality,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut masks = Vec::new();
                for k in 1..=sites {
                    let available = binomial(sites, k);
                    let wanted = per_cardinality.min(available);
                    let mut chosen: Vec<u64> = Vec::with_capacity(wanted);
                    while chosen.len() < wanted {
                        let m = sample(&mut rng, sites, k)
                            .into_iter()
                            .fold(0u64, |acc, site| acc | 1 << site);
                        if !chosen.contains(&m) {
                            chosen.push(m);
                        }
                    }
                    masks.extend(chosen);
                }
                masks
            }
        }
    }
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkerStudyConfig {
    /// |Ψ_MC⟩: the spin-flip base and the product-state panel's trial.
    #[serde(default = "TrialSpec::optimized_symmetric")]
    pub base: TrialSpec,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_flip_rule")]
    pub flip_rule: FlipRule,
    /// Measurement budgets; 0 adds exact-oracle rows.
    pub budgets: Vec<u64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub sign_policy: SignPolicy,
    /// Product-state walkers kept, by descending |Ψ_MC(x)|; all 2^L when absent.
    #[serde(default)]
    pub baseline_rank_limit: Option<usize>,
}

fn default_tau() -> f64 {
    0.05
}

fn default_flip_rule() -> FlipRule {
    FlipRule::Prefix
}

fn default_replicates() -> usize {
    16
}

impl WalkerStudyConfig {
    pub fn new(budgets: Vec<u64>) -> Self {
        Self {
            base: TrialSpec::optimized_symmetric(),
            tau: default_tau(),
            flip_rule: FlipRule::Prefix,
            budgets,
            replicates: default_replicates(),
            sign_policy: SignPolicy::ExactSign,
            baseline_rank_limit: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::InvalidArgument(format!("tau must be >= 0, got {}", self.tau)));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("replicates must be >= 1".into()));
        }
        if self.budgets.is_empty() {
            return Err(Error::InvalidArgument("budgets must not be empty".into()));
        }
        self.base.validate()?;
        if matches!(self.base, TrialSpec::ImaginaryTimeFiltered { .. }) {
            return Err(Error::InvalidArgument(
                "the walker base cannot itself be filtered; set tau instead".into(),
            ));
        }
        Ok(())
    }

    /// e^{-τH}|base⟩.
    pub fn filtered_trial(&self) -> TrialSpec {
        TrialSpec::filtered(self.base.clone(), self.tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Panel {
    /// Computational-basis walkers with Ψ_T = Ψ_MC.
    ProductState,
    /// X_S|Ψ_MC⟩ walkers with Ψ_T = e^{-τH}|Ψ_MC⟩.
    SpinFlip,
}

impl Panel {
    pub fn as_str(&self) -> &'static str {
        match self {
            Panel::ProductState => "product_state",
            Panel::SpinFlip => "spin_flip",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub panel: Panel,
    pub walker_id: String,
    /// For product-state walkers this is the state's bit pattern, i.e. the flips from all-down.
    pub flip_mask: u64,
    pub n_flips: u32,
    /// 0 for the exact oracle.
    pub shots: u64,
    pub replicate: usize,
    pub overlap_exact: f64,
    pub overlap_est: f64,
    pub eloc_exact_per_site: Option<f64>,
    pub eloc_est_per_site: Option<f64>,
    pub status: RowStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    /// The estimated overlap vanished, so the local energy is undefined for this replicate.
    UndefinedLocalEnergy,
}

impl RowStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::UndefinedLocalEnergy => "undefined_local_energy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WalkerStudy {
    pub sites: usize,
    pub gamma_over_j: f64,
    pub base: TrialSpec,
    pub filtered: TrialSpec,
    pub rows: Vec<StudyRow>,
}

/// Pooled replicate variance of a panel's estimated local energy per site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceSummary {
    /// Walkers with at least two defined replicates.
    pub walkers: usize,
    pub mean_variance: f64,
    /// Standard error of `mean_variance`, using Var(s²) ≈ 2σ⁴/(n-1) per walker.
    pub stderr: f64,
}

impl WalkerStudy {
    pub fn rows_for(&self, panel: Panel, shots: u64) -> impl Iterator<Item = &StudyRow> {
        self.rows
            .iter()
            .filter(move |r| r.panel == panel && r.shots == shots)
    }

    pub fn local_energy_variance(&self, panel: Panel, shots: u64) -> VarianceSummary {
        let mut per_walker: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
        for row in self.rows_for(panel, shots) {
            if let Some(e) = row.eloc_est_per_site {
                per_walker.entry(&row.walker_id).or_default().push(e);
            }
        }
        let mut variances = Vec::new();
        let mut variance_of_variance = 0.0;
        for values in per_walker.values().filter(|v| v.len() >= 2) {
            let v = stats::sample_variance(values);
            variance_of_variance += 2.0 * v * v / (values.len() - 1) as f64;
            variances.push(v);
        }
        let walkers = variances.len();
        VarianceSummary {
            walkers,
            mean_variance: stats::mean(&variances),
            stderr: variance_of_variance.sqrt() / walkers as f64,
        }
    }

    /// Effective number of walkers carrying the exact squared-overlap weight,
    /// (Σ o²)² / Σ o⁴. Smaller means the weight sits on fewer walkers.
    pub fn overlap_participation(&self, panel: Panel) -> f64 {
        let mut seen = std::collections::BTreeSet::new();
        let overlaps: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.panel == panel && seen.insert(r.walker_id.as_str()))
            .map(|r| r.overlap_exact)
            .collect();
        participation_ratio(&overlaps)
    }
}

pub fn participation_ratio(overlaps: &[f64]) -> f64 {
    let second: f64 = overlaps.iter().map(|o| o * o).sum();
    let fourth: f64 = overlaps.iter().map(|o| o.powi(4)).sum();
    second * second / fourth
}

/// Runs both panels over every budget and replicate. Cells run in parallel on the current rayon
/// pool; rows come back ordered by (panel, M, replicate, walker).
pub fn run_walker_study(
    model: &TfimModel,
    config: &WalkerStudyConfig,
    master_seed: u64,
) -> Result<WalkerStudy> {
    run_walker_study_with(model, config, master_seed, EdLimits::default())
}

pub fn run_walker_study_with(
    model: &TfimModel,
    config: &WalkerStudyConfig,
    master_seed: u64,
    limits: EdLimits,
) -> Result<WalkerStudy> {
    config.validate()?;
    let sites = model.sites();
    let gamma_over_j = model.field() / model.coupling();
    let base_table = Arc::new(build_trial_table_with(&config.base, model, limits)?);
    let resolved_base = base_table.provenance().resolved.clone();
    // Reuse the resolved λ so the filter acts on exactly the base the walkers use.
    let filtered_spec = TrialSpec::filtered(resolved_base.clone(), config.tau);
    let filtered_table = Arc::new(build_trial_table_with(&filtered_spec, model, limits)?);

    let product = ProductPanel::new(model, &base_table, config.baseline_rank_limit)?;
    let flips = FlipPanel::new(model, &base_table, &filtered_table, &config.flip_rule)?;

    let mut tasks = Vec::new();
    for panel in [Panel::ProductState, Panel::SpinFlip] {
        for &shots in &config.budgets {
            for replicate in 0..config.replicates {
                tasks.push((panel, shots, replicate));
            }
        }
    }
    let chunks: Vec<Vec<StudyRow>> = tasks
        .par_iter()
        .map(|&(panel, shots, replicate)| {
            let key = CellKey::new(sites, gamma_over_j, shots, replicate as u64);
            let cell_seed = derive_seed(master_seed, key.index());
            match panel {
                Panel::ProductState => product.rows(model, shots, replicate, config.sign_policy, cell_seed),
                Panel::SpinFlip => flips.rows(model, shots, replicate, config.sign_policy, cell_seed),
            }
        })
        .collect::<Result<_>>()?;

    Ok(WalkerStudy {
        sites,
        gamma_over_j,
        base: resolved_base,
        filtered: filtered_table.provenance().resolved.clone(),
        rows: chunks.into_iter().flatten().collect(),
    })
}

struct ProductPanel {
    table: Arc<TrialTable>,
    sampler: ShotSampler,
    states: Vec<SpinConfiguration>,
    exact_local: Vec<Option<f64>>,
}

impl ProductPanel {
    fn new(model: &TfimModel, table: &Arc<TrialTable>, rank_limit: Option<usize>) -> Result<Self> {
        let exact = AmplitudeOracle::exact(table.clone());
        let limit = rank_limit.unwrap_or(table.len());
        let states: Vec<SpinConfiguration> = crate::oracle::overlap_distribution(&exact, limit)
            .into_iter()
            .map(|entry| entry.state)
            .collect();
        let exact_local = states
            .iter()
            .map(|&x| per_site(local_energy(model, &exact, x), model.sites()))
            .collect::<Result<_>>()?;
        Ok(Self {
            table: table.clone(),
            sampler: ShotSampler::new(table)?,
            states,
            exact_local,
        })
    }

    fn rows(
        &self,
        model: &TfimModel,
        shots: u64,
        replicate: usize,
        policy: SignPolicy,
        cell_seed: u64,
    ) -> Result<Vec<StudyRow>> {
        let oracle = build_oracle(&self.table, &self.sampler, shots, policy, cell_seed)?;
        self.states
            .iter()
            .zip(&self.exact_local)
            .map(|(&x, &exact_local)| {
                let estimated_local = per_site(local_energy(model, &oracle, x), model.sites())?;
                Ok(StudyRow {
                    panel: Panel::ProductState,
                    walker_id: format!("basis-{}", x.bits()),
                    flip_mask: x.bits(),
                    n_flips: x.bits().count_ones(),
                    shots,
                    replicate,
                    overlap_exact: self.table.amplitude(x),
                    overlap_est: oracle.estimated_amplitude(x),
                    eloc_exact_per_site: exact_local,
                    eloc_est_per_site: estimated_local,
                    status: status_of(estimated_local),
                })
            })
            .collect()
    }
}

struct FlipPanel {
    table: Arc<TrialTable>,
    sampler: ShotSampler,
    walkers: Vec<(NonOrthogonalWalker, WalkerTerms, String)>,
    exact: Vec<(f64, Option<f64>)>,
}

impl FlipPanel {
    fn new(
        model: &TfimModel,
        base: &Arc<TrialTable>,
        filtered: &Arc<TrialTable>,
        rule: &FlipRule,
    ) -> Result<Self> {
        let masks = rule.masks(model.sites());
        let mut walkers = Vec::with_capacity(masks.len());
        let mut exact = Vec::with_capacity(masks.len());
        let mut per_cardinality = vec![0usize; model.sites() + 1];
        for m in masks {
            let walker = NonOrthogonalWalker::new(m, base.clone())?;
            let terms = WalkerTerms::new(model, &walker)?;
            exact.push((
                terms.overlap(filtered.amplitudes()),
                terms.local_energy_per_site(filtered.amplitudes(), model.sites()),
            ));
            let k = walker.flip_count() as usize;
            let id = match rule {
                FlipRule::Prefix => format!("flip-{k}"),
                FlipRule::RandomSubsets { .. } => format!("flip-{k}-{}", per_cardinality[k]),
            };
            per_cardinality[k] += 1;
            walkers.push((walker, terms, id));
        }
        Ok(Self {
            table: filtered.clone(),
            sampler: ShotSampler::new(filtered)?,
            walkers,
            exact,
        })
    }

    fn rows(
        &self,
        model: &TfimModel,
        shots: u64,
        replicate: usize,
        policy: SignPolicy,
        cell_seed: u64,
    ) -> Result<Vec<StudyRow>> {
        let stream_seed = derive_seed(cell_seed, Stream::FilteredShots as u64);
        let oracle = build_oracle(&self.table, &self.sampler, shots, policy, stream_seed)?;
        let estimates = oracle.estimates();
        Ok(self
            .walkers
            .iter()
            .zip(&self.exact)
            .map(|((walker, terms, id), &(overlap_exact, eloc_exact))| {
                let eloc_est = terms.local_energy_per_site(estimates, model.sites());
                StudyRow {
                    panel: Panel::SpinFlip,
                    walker_id: id.clone(),
                    flip_mask: walker.flip_mask(),
                    n_flips: walker.flip_count(),
                    shots,
                    replicate,
                    overlap_exact,
                    overlap_est: terms.overlap(estimates),
                    eloc_exact_per_site: eloc_exact,
                    eloc_est_per_site: eloc_est,
                    status: status_of(eloc_est),
                }
            })
            .collect())
    }
}

fn per_site(energy: Result<f64>, sites: usize) -> Result<Option<f64>> {
    match energy {
        Ok(e) => Ok(Some(e / sites as f64)),
        Err(Error::UndefinedLocalEnergy { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn status_of(value: Option<f64>) -> RowStatus {
    if value.is_some() {
        RowStatus::Ok
    } else {
        RowStatus::UndefinedLocalEnergy
    }
}
