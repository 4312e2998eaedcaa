//! Importance-sampled Green's-function Monte Carlo with the linear projector Λ·1 - H.
//!
//! A walker at x carries weight w. One step multiplies w by b(x) = Λ - E_L(x) and moves the walker
//! to x' with probability
//!
//! ```text
//! p(x'|x) = ψ(x') (Λ·1 - H)_{x'x} / (ψ(x) b(x)),   x' ∈ {x} ∪ flips(x)
//! ```
//!
//! where ψ are the oracle's trial estimates. States with a zero estimate are never entered, so a
//! sampled oracle confines the walk to the observed support.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SpinConfiguration, TfimModel};
use crate::oracle::{AmplitudeOracle, MeasurementBudget, ShotSampler, SignPolicy};
use crate::seed::{derive_seed, CellKey, Stream};
use crate::spectrum::{fermion_ground_energy, EdLimits};
use crate::stats;
use crate::trial::{build_trial_table_with, TrialSpec, TrialTable};

/// Number of block averages behind [`GfmcResult::energy_stderr`].
pub const STDERR_BLOCKS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GfmcParams {
    /// Λ in the projector Λ·1 - H.
    pub shift: f64,
    pub population: usize,
    pub total_steps: usize,
    pub equilibration_steps: usize,
    pub reconfigure_every: usize,
    pub seed: u64,
}

impl GfmcParams {
    pub const DEFAULT_POPULATION: usize = 200;
    pub const DEFAULT_TOTAL_STEPS: usize = 1000;
    pub const DEFAULT_EQUILIBRATION_STEPS: usize = 200;

    /// Λ = L(J + Γ) + 1.
    pub fn default_shift(model: &TfimModel) -> f64 {
        model.sites() as f64 * (model.coupling() + model.field()) + 1.0
    }

    pub fn for_model(model: &TfimModel, seed: u64) -> Self {
        Self {
            shift: Self::default_shift(model),
            population: Self::DEFAULT_POPULATION,
            total_steps: Self::DEFAULT_TOTAL_STEPS,
            equilibration_steps: Self::DEFAULT_EQUILIBRATION_STEPS,
            reconfigure_every: 1,
            seed,
        }
    }

    /// Smallest admissible shift is strictly above max_x E_diag(x) + ΓL.
    pub fn shift_lower_bound(model: &TfimModel) -> f64 {
        model.max_diagonal_energy() + model.field() * model.sites() as f64
    }

    pub fn validate(&self, model: &TfimModel) -> Result<()> {
        let bound = Self::shift_lower_bound(model);
        if !(self.shift.is_finite() && self.shift > bound) {
            return Err(Error::InvalidArgument(format!(
                "shift {} must exceed max diagonal energy + ΓL = {bound}",
                self.shift
            )));
        }
        if self.population == 0 {
            return Err(Error::InvalidArgument("population must be >= 1".into()));
        }
        if !(0 < self.equilibration_steps && self.equilibration_steps < self.total_steps) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < equilibration_steps ({}) < total_steps ({})",
                self.equilibration_steps, self.total_steps
            )));
        }
        if self.reconfigure_every == 0 {
            return Err(Error::InvalidArgument("reconfigure_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Walker {
    pub state: SpinConfiguration,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GfmcResult {
    /// Mixed-estimator value of every generation, equilibration included.
    pub energy_series: Vec<f64>,
    pub energy_mean: f64,
    pub energy_stderr: f64,
    pub exact_reference: f64,
    pub error_per_site: f64,
}

/// E_L(x) = E_diag(x) - Γ Σ_{x'} ψ(x')/ψ(x).
pub fn local_energy(model: &TfimModel, oracle: &AmplitudeOracle, x: SpinConfiguration) -> Result<f64> {
    check_oracle(model, oracle)?;
    model.diagonal_energy(x)?;
    Kernel::new(model, oracle, 0.0).local_energy(x.bits())
}

/// The distribution p(x'|x) as (target, probability) pairs: staying first, then flips in site order.
pub fn transition_probabilities(
    model: &TfimModel,
    oracle: &AmplitudeOracle,
    shift: f64,
    x: SpinConfiguration,
) -> Result<Vec<(SpinConfiguration, f64)>> {
    check_oracle(model, oracle)?;
    let kernel = Kernel::new(model, oracle, shift);
    let local = kernel.local_energy(x.bits())?;
    let (norm, weights) = kernel.transition_weights(x.bits(), local)?;
    Ok(std::iter::once(x)
        .chain(model.neighbors(x))
        .zip(weights)
        .map(|(y, w)| (y, w / norm))
        .collect())
}

/// Propagates every walker by one application of the projector. Weights are multiplied by
/// b(x) and never reset here.
pub fn gfmc_step<R: Rng + ?Sized>(
    model: &TfimModel,
    oracle: &AmplitudeOracle,
    params: &GfmcParams,
    population: &[Walker],
    rng: &mut R,
) -> Result<Vec<Walker>> {
    check_oracle(model, oracle)?;
    let kernel = Kernel::new(model, oracle, params.shift);
    population
        .iter()
        .map(|walker| {
            let mut next = *walker;
            let local = kernel.local_energy(walker.state.bits())?;
            kernel.advance(&mut next, local, rng)?;
            Ok(next)
        })
        .collect()
}

/// Systematic (comb) resampling to the same population size; every survivor gets weight 1.
pub fn reconfigure<R: Rng + ?Sized>(population: &[Walker], rng: &mut R) -> Result<Vec<Walker>> {
    let mut out = Vec::with_capacity(population.len());
    reconfigure_into(population, rng, &mut out, |w| *w)?;
    for walker in out.iter_mut() {
        walker.weight = 1.0;
    }
    Ok(out)
}

fn reconfigure_into<T: Copy, R: Rng + ?Sized>(
    items: &[T],
    rng: &mut R,
    out: &mut Vec<T>,
    weight_of: impl Fn(&T) -> Walker,
) -> Result<()> {
    let total: f64 = items.iter().map(|item| weight_of(item).weight).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::PopulationCollapse);
    }
    let n = items.len();
    let offset: f64 = rng.random();
    out.clear();
    let mut cumulative = 0.0;
    let mut tooth = 0usize;
    for item in items {
        cumulative += weight_of(item).weight / total;
        while tooth < n && (tooth as f64 + offset) / (n as f64) < cumulative {
            out.push(*item);
            tooth += 1;
        }
    }
    // Rounding can leave the last teeth unassigned.
    while out.len() < n {
        let last = *items
            .iter()
            .rev()
            .find(|item| weight_of(item).weight > 0.0)
            .expect("total weight is positive");
        out.push(last);
    }
    Ok(())
}

/// Full GFMC run with the mixed estimator E_t = Σ w E_L / Σ w, measured after each move and
/// before reconfiguration. The error is measured against the free-fermion ground energy.
pub fn run_gfmc(model: &TfimModel, oracle: &AmplitudeOracle, params: &GfmcParams) -> Result<GfmcResult> {
    check_oracle(model, oracle)?;
    params.validate(model)?;
    let kernel = Kernel::new(model, oracle, params.shift);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut population = initial_population(model, oracle, params.population, &mut rng)?
        .into_iter()
        .map(|walker| Ok((walker, kernel.local_energy(walker.state.bits())?)))
        .collect::<Result<Vec<(Walker, f64)>>>()?;
    let mut scratch = Vec::with_capacity(population.len());

    let mut series = Vec::with_capacity(params.total_steps);
    for step in 0..params.total_steps {
        let mut weight_sum = 0.0;
        let mut weighted_energy = 0.0;
        for (walker, local) in population.iter_mut() {
            kernel.advance(walker, *local, &mut rng)?;
            *local = kernel.local_energy(walker.state.bits())?;
            weight_sum += walker.weight;
            weighted_energy += walker.weight * *local;
        }
        if !(weight_sum > 0.0 && weight_sum.is_finite()) {
            return Err(Error::PopulationCollapse);
        }
        series.push(weighted_energy / weight_sum);

        if (step + 1) % params.reconfigure_every == 0 {
            reconfigure_into(&population, &mut rng, &mut scratch, |(w, _)| *w)?;
            std::mem::swap(&mut population, &mut scratch);
            for (walker, _) in population.iter_mut() {
                walker.weight = 1.0;
            }
        } else {
            let scale = population.len() as f64 / weight_sum;
            for (walker, _) in population.iter_mut() {
                walker.weight *= scale;
            }
        }
    }

    let production = &series[params.equilibration_steps..];
    let energy_mean = stats::mean(production);
    let energy_stderr = stats::blocked_standard_error(production, STDERR_BLOCKS);
    let exact_reference = fermion_ground_energy(model);
    Ok(GfmcResult {
        energy_mean,
        energy_stderr,
        exact_reference,
        error_per_site: (energy_mean - exact_reference) / model.sites() as f64,
        energy_series: series,
    })
}

/// Walkers drawn from the oracle's support with probability ∝ ψ(x)², which is ∝ n_x for a
/// sampled oracle and |ψ_T(x)|² for the exact one.
fn initial_population<R: Rng + ?Sized>(
    model: &TfimModel,
    oracle: &AmplitudeOracle,
    size: usize,
    rng: &mut R,
) -> Result<Vec<Walker>> {
    let weights: Vec<f64> = oracle.estimates().iter().map(|a| a * a).collect();
    let alias = WeightedAliasIndex::new(weights)
        .map_err(|e| Error::InvalidArgument(format!("oracle has no support: {e}")))?;
    (0..size)
        .map(|_| {
            Ok(Walker {
                state: model.state(alias.sample(rng) as u64)?,
                weight: 1.0,
            })
        })
        .collect()
}

fn check_oracle(model: &TfimModel, oracle: &AmplitudeOracle) -> Result<()> {
    if oracle.sites() != model.sites() {
        return Err(Error::InvalidArgument(format!(
            "oracle is for L = {}, model has L = {}",
            oracle.sites(),
            model.sites()
        )));
    }
    Ok(())
}

struct Kernel<'a> {
    model: &'a TfimModel,
    estimates: &'a [f64],
    shift: f64,
}

impl<'a> Kernel<'a> {
    fn new(model: &'a TfimModel, oracle: &'a AmplitudeOracle, shift: f64) -> Self {
        Self {
            model,
            estimates: oracle.estimates(),
            shift,
        }
    }

    #[inline]
    fn local_energy(&self, x: u64) -> Result<f64> {
        let psi = self.estimates[x as usize];
        if psi == 0.0 {
            return Err(Error::UndefinedLocalEnergy { state: x });
        }
        let mut flips = 0.0;
        for k in 0..self.model.sites() {
            flips += self.estimates[(x ^ (1 << k)) as usize];
        }
        Ok(self.model.diagonal_energy_bits(x) - self.model.field() * flips / psi)
    }

    /// b(x) and the unnormalized weights of [stay, flip 0, …, flip L-1].
    fn transition_weights(&self, x: u64, local: f64) -> Result<(f64, Vec<f64>)> {
        let norm = self.norm(x, local)?;
        let psi = self.estimates[x as usize];
        let mut weights = Vec::with_capacity(self.model.sites() + 1);
        weights.push(self.shift - self.model.diagonal_energy_bits(x));
        for k in 0..self.model.sites() {
            let y = x ^ (1 << k);
            let w = self.model.field() * self.estimates[y as usize] / psi;
            if w < 0.0 {
                return Err(Error::SignProblem { from: x, to: y, weight: w });
            }
            weights.push(w);
        }
        Ok((norm, weights))
    }

    #[inline]
    fn norm(&self, x: u64, local: f64) -> Result<f64> {
        let norm = self.shift - local;
        if !(norm > 0.0) {
            return Err(Error::ShiftTooSmall {
                shift: self.shift,
                norm,
                state: x,
            });
        }
        Ok(norm)
    }

    #[inline]
    fn advance<R: Rng + ?Sized>(&self, walker: &mut Walker, local: f64, rng: &mut R) -> Result<()> {
        let x = walker.state.bits();
        let norm = self.norm(x, local)?;
        walker.weight *= norm;

        let psi = self.estimates[x as usize];
        let stay = self.shift - self.model.diagonal_energy_bits(x);
        let target = rng.random::<f64>() * norm;
        let mut cumulative = stay;
        if target < cumulative {
            return Ok(());
        }
        let gamma = self.model.field();
        let mut last_allowed = None;
        for k in 0..self.model.sites() {
            let y = x ^ (1 << k);
            let w = gamma * self.estimates[y as usize] / psi;
            if w < 0.0 {
                return Err(Error::SignProblem { from: x, to: y, weight: w });
            }
            if w > 0.0 {
                last_allowed = Some(y);
            }
            cumulative += w;
            if target < cumulative && w > 0.0 {
                walker.state = walker.state.flip(k);
                return Ok(());
            }
        }
        // Only reachable through rounding at the top of the cumulative sum.
        if let Some(y) = last_allowed {
            walker.state = walker.state.flip_mask(x ^ y);
        }
        Ok(())
    }
}

/// What the sweep runs inside each cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub sizes: Vec<usize>,
    pub coupling: f64,
    pub field: f64,
    pub trial: TrialSpec,
    /// Measurement budgets; 0 selects the exact oracle.
    pub budgets: Vec<u64>,
    pub runs: usize,
    pub settings: GfmcSettings,
    pub sign_policy: SignPolicy,
    pub master_seed: u64,
    #[serde(skip)]
    pub ed_limits: EdLimits,
}

/// Per-run GFMC settings; the shift defaults to L(J + Γ) + 1 for each chain length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GfmcSettings {
    pub shift: Option<f64>,
    pub population: usize,
    pub total_steps: usize,
    pub equilibration_steps: usize,
    pub reconfigure_every: usize,
}

impl Default for GfmcSettings {
    fn default() -> Self {
        Self {
            shift: None,
            population: GfmcParams::DEFAULT_POPULATION,
            total_steps: GfmcParams::DEFAULT_TOTAL_STEPS,
            equilibration_steps: GfmcParams::DEFAULT_EQUILIBRATION_STEPS,
            reconfigure_every: 1,
        }
    }
}

impl GfmcSettings {
    pub fn params(&self, model: &TfimModel, seed: u64) -> GfmcParams {
        GfmcParams {
            shift: self.shift.unwrap_or_else(|| GfmcParams::default_shift(model)),
            population: self.population,
            total_steps: self.total_steps,
            equilibration_steps: self.equilibration_steps,
            reconfigure_every: self.reconfigure_every,
            seed,
        }
    }
}

/// Summary of one replicate; `outcome` holds the failure message when the run aborted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRun {
    pub replicate: usize,
    pub cell_seed: u64,
    pub outcome: std::result::Result<RunSummary, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSummary {
    pub energy_mean: f64,
    pub energy_stderr: f64,
    pub exact_energy: f64,
    pub error_per_site: f64,
    /// Distinct observed states; the full dimension for the exact oracle.
    pub support_size: usize,
}

/// All replicates of one (L, M) combination plus their aggregate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub gamma_over_j: f64,
    pub sites: usize,
    /// 0 for the exact oracle.
    pub shots: u64,
    pub runs: Vec<SweepRun>,
}

/// Replicate statistics over the successful runs of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellAggregate {
    pub completed: usize,
    pub energy_mean: f64,
    pub energy_stderr: f64,
    pub exact_energy: f64,
    pub error_per_site: f64,
    pub error_per_site_stderr: f64,
    pub abs_error_per_site: f64,
    pub abs_error_per_site_stderr: f64,
}

impl SweepCell {
    pub fn summaries(&self) -> Vec<RunSummary> {
        self.runs.iter().filter_map(|r| r.outcome.as_ref().ok().copied()).collect()
    }

    pub fn failed(&self) -> bool {
        self.runs.iter().all(|r| r.outcome.is_err())
    }

    pub fn aggregate(&self) -> Option<CellAggregate> {
        let summaries = self.summaries();
        if summaries.is_empty() {
            return None;
        }
        let energies: Vec<f64> = summaries.iter().map(|s| s.energy_mean).collect();
        let errors: Vec<f64> = summaries.iter().map(|s| s.error_per_site).collect();
        let abs_errors: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
        Some(CellAggregate {
            completed: summaries.len(),
            energy_mean: stats::mean(&energies),
            energy_stderr: stats::standard_error(&energies),
            exact_energy: summaries[0].exact_energy,
            error_per_site: stats::mean(&errors),
            error_per_site_stderr: stats::standard_error(&errors),
            abs_error_per_site: stats::mean(&abs_errors),
            abs_error_per_site_stderr: stats::standard_error(&abs_errors),
        })
    }
}

/// Full factorial sweep over chain lengths × budgets × replicates at one Γ/J.
///
/// Cells run in parallel on the current rayon pool and are returned in (L, M) order.
pub fn sweep_measurements(spec: &SweepSpec) -> Result<Vec<SweepCell>> {
    if spec.runs == 0 {
        return Err(Error::InvalidArgument("sweep needs at least one run per cell".into()));
    }
    let gamma_over_j = spec.field / spec.coupling;
    let setups = spec
        .sizes
        .iter()
        .map(|&sites| {
            let model = TfimModel::new(sites, spec.coupling, spec.field)?;
            spec.settings.params(&model, 0).validate(&model)?;
            let table = Arc::new(build_trial_table_with(&spec.trial, &model, spec.ed_limits)?);
            let sampler = ShotSampler::new(&table)?;
            Ok((model, table, sampler))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut tasks = Vec::new();
    for (size_index, &sites) in spec.sizes.iter().enumerate() {
        for &shots in &spec.budgets {
            for replicate in 0..spec.runs {
                tasks.push((size_index, sites, shots, replicate));
            }
        }
    }

    let runs: Vec<SweepRun> = tasks
        .par_iter()
        .map(|&(size_index, sites, shots, replicate)| {
            let (model, table, sampler) = &setups[size_index];
            let key = CellKey::new(sites, gamma_over_j, shots, replicate as u64);
            let cell_seed = derive_seed(spec.master_seed, key.index());
            let outcome = run_cell(model, table, sampler, shots, spec, cell_seed)
                .map_err(|e| e.to_string());
            SweepRun {
                replicate,
                cell_seed,
                outcome,
            }
        })
        .collect();

    let mut runs = runs.into_iter();
    let mut cells = Vec::new();
    for &sites in &spec.sizes {
        for &shots in &spec.budgets {
            cells.push(SweepCell {
                gamma_over_j,
                sites,
                shots,
                runs: runs.by_ref().take(spec.runs).collect(),
            });
        }
    }
    Ok(cells)
}

fn run_cell(
    model: &TfimModel,
    table: &Arc<TrialTable>,
    sampler: &ShotSampler,
    shots: u64,
    spec: &SweepSpec,
    cell_seed: u64,
) -> Result<RunSummary> {
    let oracle = build_oracle(table, sampler, shots, spec.sign_policy, cell_seed)?;
    let support_size = oracle
        .counts()
        .map_or(table.len(), |counts| counts.support_size());
    let params = spec
        .settings
        .params(model, derive_seed(cell_seed, Stream::Gfmc as u64));
    let result = run_gfmc(model, &oracle, &params)?;
    Ok(RunSummary {
        energy_mean: result.energy_mean,
        energy_stderr: result.energy_stderr,
        exact_energy: result.exact_reference,
        error_per_site: result.error_per_site,
        support_size,
    })
}

/// Exact oracle for `shots == 0`, otherwise a fresh histogram drawn on the cell's shot stream.
pub(crate) fn build_oracle(
    table: &Arc<TrialTable>,
    sampler: &ShotSampler,
    shots: u64,
    policy: SignPolicy,
    cell_seed: u64,
) -> Result<AmplitudeOracle> {
    if shots == 0 {
        return Ok(AmplitudeOracle::exact(table.clone()));
    }
    let budget = MeasurementBudget::new(shots, derive_seed(cell_seed, Stream::Shots as u64))?;
    AmplitudeOracle::sampled(table.clone(), sampler.sample(budget), policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::sample_counts;
    use crate::spectrum::exact_ground_ed;
    use crate::trial::build_trial_table;

    fn oracle_for(model: &TfimModel, spec: &TrialSpec) -> AmplitudeOracle {
        AmplitudeOracle::exact(Arc::new(build_trial_table(spec, model).unwrap()))
    }

    fn params(model: &TfimModel, population: usize, steps: usize, seed: u64) -> GfmcParams {
        GfmcParams {
            population,
            total_steps: steps,
            equilibration_steps: steps / 5,
            ..GfmcParams::for_model(model, seed)
        }
    }

    #[test]
    fn local_energy_of_exact_ground_state_is_constant() {
        let model = TfimModel::new(8, 1.0, 1.0).unwrap();
        let oracle = oracle_for(&model, &TrialSpec::ExactGround);
        let e0 = exact_ground_ed(&model).unwrap().ground_energy;
        for x in 0..256 {
            let e = local_energy(&model, &oracle, model.state(x).unwrap()).unwrap();
            assert!((e - e0).abs() < 1e-9);
        }
    }

    #[test]
    fn local_energy_without_field_is_diagonal() {
        let model = TfimModel::new(6, 1.0, 0.0).unwrap();
        let oracle = oracle_for(&model, &TrialSpec::symmetric(0.3));
        for x in 0..64 {
            let s = model.state(x).unwrap();
            assert_eq!(
                local_energy(&model, &oracle, s).unwrap(),
                model.diagonal_energy(s).unwrap()
            );
        }
    }

    #[test]
    fn local_energy_matches_dense_matvec() {
        let model = TfimModel::new(6, 1.0, 0.5).unwrap();
        let oracle = oracle_for(&model, &TrialSpec::symmetric(0.127));
        let psi = oracle.table().amplitudes().to_vec();
        for x in [0u64, 1, 5, 21, 42, 63] {
            // ⟨Ψ|H|x⟩ = (HΨ)(x) by symmetry of H.
            let mut delta = vec![0.0; 64];
            delta[x as usize] = 1.0;
            let h_delta = model.apply_hamiltonian(&delta).unwrap();
            let numerator: f64 = psi.iter().zip(&h_delta).map(|(a, b)| a * b).sum();
            let expected = numerator / psi[x as usize];
            let got = local_energy(&model, &oracle, model.state(x).unwrap()).unwrap();
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_estimate_is_undefined() {
        let model = TfimModel::new(8, 1.0, 1.0).unwrap();
        let table = Arc::new(build_trial_table(&TrialSpec::symmetric(0.2), &model).unwrap());
        let counts = sample_counts(&table, MeasurementBudget::new(50, 1).unwrap()).unwrap();
        let oracle = AmplitudeOracle::sampled(table, counts.clone(), SignPolicy::ExactSign).unwrap();
        let unseen = (0..256).find(|&x| !counts.counts().contains_key(&x)).unwrap();
        assert!(matches!(
            local_energy(&model, &oracle, model.state(unseen).unwrap()),
            Err(Error::UndefinedLocalEnergy { .. })
        ));
    }

    #[test]
    fn transition_probabilities_normalized_and_sign_free() {
        let model = TfimModel::new(6, 1.0, 1.0).unwrap();
        let oracle = oracle_for(&model, &TrialSpec::symmetric(0.3));
        let shift = GfmcParams::default_shift(&model);
        for x in 0..64 {
            let probs = transition_probabilities(&model, &oracle, shift, model.state(x).unwrap()).unwrap();
            let total: f64 = probs.iter().map(|p| p.1).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(probs.iter().all(|p| p.1 >= 0.0));
        }
    }

    #[test]
    fn one_step_transitions_match_kernel() {
        // Oracle: p(x'|x) built directly from the dense matrix Λ·1 - H and the trial vector.
        let model = TfimModel::new(4, 1.0, 1.0).unwrap();
        let oracle = oracle_for(&model, &TrialSpec::symmetric(0.35));
        let psi = oracle.table().amplitudes();
        let shift = GfmcParams::default_shift(&model);
        let params = GfmcParams::for_model(&model, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let per_state = 62_500;
        for x in 0..16u64 {
            let mut column = vec![0.0; 16];
            column[x as usize] = 1.0;
            let h_col = model.apply_hamiltonian(&column).unwrap();
            let expected: Vec<f64> = (0..16)
                .map(|y| psi[y] * (shift * column[y] - h_col[y]) / psi[x as usize])
                .collect();
            let norm: f64 = expected.iter().sum();
            let start = vec![Walker { state: model.state(x).unwrap(), weight: 1.0 }; per_state];
            let moved = gfmc_step(&model, &oracle, &params, &start, &mut rng).unwrap();
            let mut hits = [0u64; 16];
            for w in &moved {
                hits[w.state.index()] += 1;
                assert!((w.weight - norm).abs() < 1e-12);
            }
            for y in 0..16 {
                let p = expected[y] / norm;
                let sigma = (per_state as f64 * p * (1.0 - p)).sqrt();
                let diff = (hits[y] as f64 - per_state as f64 * p).abs();
                assert!(diff <= 5.0 * sigma + 1e-9, "x={x} y={y}: {} vs {}", hits[y], per_state as f64 * p);
            }
        }
    }

    #[test]
    fn walkers_frozen_without_field() {
        let model = TfimModel::new(6, 1.0, 0.0).unwrap();
        let oracle = oracle_for(&model, &TrialSpec::symmetric(0.4));
        let params = GfmcParams::for_model(&model, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let start: Vec<Walker> = (0..64)
            .map(|x| Walker { state: model.state(x).unwrap(), weight: 1.0 })
            .collect();
        let moved = gfmc_step(&model, &oracle, &params, &start, &mut rng).unwrap();
        for (a, b) in start.iter().zip(&moved) {
            assert_eq!(a.state, b.state);
        }
    }

    #[test]
    fn small_shift_rejected() {
        let model = TfimModel::new(6, 1.0, 1.0).unwrap();
        let oracle = oracle_for(&model, &TrialSpec::symmetric(0.3));
        let mut p = GfmcParams::for_model(&model, 1);
        p.shift = GfmcParams::shift_lower_bound(&model);
        assert!(run_gfmc(&model, &oracle, &p).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let walkers = [Walker { state: model.state(0b010101).unwrap(), weight: 1.0 }];
        p.shift = -30.0;
        assert!(matches!(
            gfmc_step(&model, &oracle, &p, &walkers, &mut rng),
            Err(Error::ShiftTooSmall { .. })
        ));
    }

    #[test]
    fn signed_trial_reports_sign_problem() {
        let model = TfimModel::new(4, 1.0, 1.0).unwrap();
        let amplitudes: Vec<f64> = (0..16).map(|x| if x == 1 { -0.2 } else { 0.25 }).collect();
        let provenance = crate::trial::TrialProvenance {
            requested: TrialSpec::ExactGround,
            resolved: TrialSpec::ExactGround,
            lambda_optimized: false,
        };
        let table = TrialTable::from_amplitudes(4, amplitudes, provenance).unwrap();
        let oracle = AmplitudeOracle::exact(Arc::new(table));
        let err = transition_probabilities(&model, &oracle, 10.0, model.state(0).unwrap());
        assert!(matches!(err, Err(Error::SignProblem { .. })));
    }

    #[test]
    fn comb_resampling_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let equal: Vec<Walker> = (0..10)
            .map(|x| Walker { state: SpinConfiguration::new(x, 4).unwrap(), weight: 2.5 })
            .collect();
        let out = reconfigure(&equal, &mut rng).unwrap();
        assert_eq!(out.iter().map(|w| w.state).collect::<Vec<_>>(), equal.iter().map(|w| w.state).collect::<Vec<_>>());
        assert!(out.iter().all(|w| w.weight == 1.0));

        let mut single = equal.clone();
        for (i, w) in single.iter_mut().enumerate() {
            w.weight = if i == 3 { 1.0 } else { 0.0 };
        }
        let out = reconfigure(&single, &mut rng).unwrap();
        assert!(out.iter().all(|w| w.state.bits() == 3));

        let dead: Vec<Walker> = single.iter().map(|w| Walker { weight: 0.0, ..*w }).collect();
        assert!(matches!(reconfigure(&dead, &mut rng), Err(Error::PopulationCollapse)));
    }

    #[test]
    fn comb_copy_counts_proportional_to_weight() {
        let weights = [0.1, 2.0, 0.7, 1.3, 0.05, 3.1, 0.9, 1.85];
        let population: Vec<Walker> = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| Walker { state: SpinConfiguration::new(i as u64, 3).unwrap(), weight: w })
            .collect();
        let total: f64 = weights.iter().sum();
        let n = weights.len() as f64;
        let trials = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut copies = vec![0u64; weights.len()];
        for _ in 0..trials {
            for w in reconfigure(&population, &mut rng).unwrap() {
                copies[w.state.index()] += 1;
            }
        }
        for (i, &w) in weights.iter().enumerate() {
            let expected = n * w / total;
            // Comb copy counts take floor/ceil of the expectation: variance ≤ 1/4 per trial.
            let sigma = (0.25 / trials as f64).sqrt();
            let observed = copies[i] as f64 / trials as f64;
            assert!((observed - expected).abs() < 5.0 * sigma, "walker {i}: {observed} vs {expected}");
        }
    }

    #[test]
    fn zero_variance_run() {
        let model = TfimModel::new(8, 1.0, 1.0).unwrap();
        let oracle = oracle_for(&model, &TrialSpec::ExactGround);
        let result = run_gfmc(&model, &oracle, &params(&model, 50, 100, 4)).unwrap();
        assert!(result.energy_stderr < 1e-10);
        assert!((result.energy_mean - result.exact_reference).abs() < 1e-9);
        assert_eq!(result.energy_series.len(), 100);
    }

    #[test]
    fn runs_are_reproducible() {
        let model = TfimModel::new(6, 1.0, 1.0).unwrap();
        let oracle = oracle_for(&model, &TrialSpec::symmetric(0.3));
        let p = params(&model, 40, 200, 8);
        let a = run_gfmc(&model, &oracle, &p).unwrap();
        let b = run_gfmc(&model, &oracle, &p).unwrap();
        assert_eq!(a.energy_series, b.energy_series);
    }

    #[test]
    fn mixed_estimator_consistent_at_four_sites() {
        let model = TfimModel::new(4, 1.0, 0.5).unwrap();
        let oracle = oracle_for(&model, &TrialSpec::symmetric(0.127));
        let result = run_gfmc(&model, &oracle, &params(&model, 400, 4000, 21)).unwrap();
        let e0 = exact_ground_ed(&model).unwrap().ground_energy;
        assert!(
            (result.energy_mean - e0).abs() <= 3.0 * result.energy_stderr.max(1e-12),
            "{} ± {} vs {e0}",
            result.energy_mean,
            result.energy_stderr
        );
    }

    #[test]
    fn params_validation() {
        let model = TfimModel::new(6, 1.0, 0.5).unwrap();
        let good = GfmcParams::for_model(&model, 0);
        assert!(good.validate(&model).is_ok());
        assert_eq!(good.shift, 10.0);
        for bad in [
            GfmcParams { population: 0, ..good },
            GfmcParams { equilibration_steps: 0, ..good },
            GfmcParams { equilibration_steps: good.total_steps, ..good },
            GfmcParams { reconfigure_every: 0, ..good },
        ] {
            assert!(bad.validate(&model).is_err());
        }
    }

    #[test]
    fn sweep_shapes_and_exact_column() {
        let spec = SweepSpec {
            sizes: vec![4, 6],
            coupling: 1.0,
            field: 0.5,
            trial: TrialSpec::symmetric(0.127),
            budgets: vec![0, 100],
            runs: 3,
            settings: GfmcSettings {
                population: 50,
                total_steps: 200,
                equilibration_steps: 50,
                ..GfmcSettings::default()
            },
            sign_policy: SignPolicy::ExactSign,
            master_seed: 1,
            ed_limits: EdLimits::default(),
        };
        let cells = sweep_measurements(&spec).unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!((cells[1].sites, cells[1].shots), (4, 100));
        for cell in &cells {
            assert_eq!(cell.runs.len(), 3);
            assert!(!cell.failed());
        }
        let exact = cells[0].aggregate().unwrap();
        assert!(exact.error_per_site.abs() < 3.0 * exact.error_per_site_stderr + 1e-3);
        let again = sweep_measurements(&spec).unwrap();
        assert_eq!(cells, again);
    }
}
