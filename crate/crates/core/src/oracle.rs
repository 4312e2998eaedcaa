//! Amplitude access to a trial wavefunction, exact or through M simulated measurements.
//!
//! A sampled oracle draws M basis states from |ψ_T(x)|² and reports |ψ_T(x)| ≈ sqrt(n_x / M).
//! Unobserved states get exactly zero.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SpinConfiguration;
use crate::trial::TrialTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementBudget {
    shots: u64,
    seed: u64,
}

impl MeasurementBudget {
    pub fn new(shots: u64, seed: u64) -> Result<Self> {
        if shots == 0 {
            return Err(Error::InvalidArgument("measurement budget M must be >= 1".into()));
        }
        Ok(Self { shots, seed })
    }

    pub fn shots(&self) -> u64 {
        self.shots
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Histogram of M measured basis states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotCounts {
    #[serde(rename = "L")]
    sites: usize,
    #[serde(rename = "M")]
    shots: u64,
    seed: u64,
    /// Keyed by the basis state's bit pattern; only observed states appear.
    counts: BTreeMap<u64, u64>,
}

impl ShotCounts {
    pub fn new(sites: usize, seed: u64, counts: BTreeMap<u64, u64>) -> Result<Self> {
        let shots: u64 = counts.values().sum();
        if shots == 0 {
            return Err(Error::InvalidArgument("shot histogram is empty".into()));
        }
        if let Some(bad) = counts.keys().find(|&&k| k >> sites != 0) {
            return Err(Error::InvalidArgument(format!(
                "state {bad} is not a {sites}-site configuration"
            )));
        }
        Ok(Self {
            sites,
            shots,
            seed,
            counts,
        })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn shots(&self) -> u64 {
        self.shots
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn count(&self, x: SpinConfiguration) -> u64 {
        self.counts.get(&x.bits()).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<u64, u64> {
        &self.counts
    }

    /// Number of distinct observed states.
    pub fn support_size(&self) -> usize {
        self.counts.len()
    }
}

/// Alias table over |ψ_T|², built once and reused for every budget.
#[derive(Debug, Clone)]
pub struct ShotSampler {
    sites: usize,
    alias: WeightedAliasIndex<f64>,
}

impl ShotSampler {
    pub fn new(table: &TrialTable) -> Result<Self> {
        let probabilities: Vec<f64> = table.amplitudes().iter().map(|a| a * a).collect();
        let alias = WeightedAliasIndex::new(probabilities)
            .map_err(|e| Error::InvalidArgument(format!("cannot sample trial table: {e}")))?;
        Ok(Self {
            sites: table.sites(),
            alias,
        })
    }

    pub fn sample(&self, budget: MeasurementBudget) -> ShotCounts {
        let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
        let mut dense = vec![0u64; 1 << self.sites];
        for _ in 0..budget.shots {
            dense[self.alias.sample(&mut rng)] += 1;
        }
        let counts = dense
            .into_iter()
            .enumerate()
            .filter(|&(_, n)| n > 0)
            .map(|(x, n)| (x as u64, n))
            .collect();
        ShotCounts {
            sites: self.sites,
            shots: budget.shots,
            seed: budget.seed,
            counts,
        }
    }
}

/// M independent draws from |ψ_T(x)|²; deterministic in the budget's seed.
pub fn sample_counts(table: &TrialTable, budget: MeasurementBudget) -> Result<ShotCounts> {
    Ok(ShotSampler::new(table)?.sample(budget))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignPolicy {
    /// Signs are read from the exact table; only magnitudes come from sampling.
    #[default]
    ExactSign,
    AssumePositive,
}

#[derive(Debug, Clone)]
enum OracleKind {
    Exact,
    Sampled {
        counts: ShotCounts,
        policy: SignPolicy,
        estimates: Vec<f64>,
    },
}

/// Signed trial amplitudes as seen by the classical driver.
#[derive(Debug, Clone)]
pub struct AmplitudeOracle {
    table: Arc<TrialTable>,
    kind: OracleKind,
}

impl AmplitudeOracle {
    pub fn exact(table: Arc<TrialTable>) -> Self {
        Self {
            table,
            kind: OracleKind::Exact,
        }
    }

    pub fn sampled(table: Arc<TrialTable>, counts: ShotCounts, policy: SignPolicy) -> Result<Self> {
        if counts.sites != table.sites() {
            return Err(Error::InvalidArgument(format!(
                "shot counts are for L = {}, trial table for L = {}",
                counts.sites,
                table.sites()
            )));
        }
        let shots = counts.shots as f64;
        let mut estimates = vec![0.0; table.len()];
        for (&x, &n) in &counts.counts {
            let magnitude = (n as f64 / shots).sqrt();
            let sign = match policy {
                SignPolicy::ExactSign if table.amplitudes()[x as usize] < 0.0 => -1.0,
                _ => 1.0,
            };
            estimates[x as usize] = sign * magnitude;
        }
        Ok(Self {
            table,
            kind: OracleKind::Sampled {
                counts,
                policy,
                estimates,
            },
        })
    }

    pub fn table(&self) -> &TrialTable {
        &self.table
    }

    pub fn shared_table(&self) -> &Arc<TrialTable> {
        &self.table
    }

    pub fn sites(&self) -> usize {
        self.table.sites()
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.kind, OracleKind::Exact)
    }

    /// Measurement budget M, or `None` for the exact (M = ∞) oracle.
    pub fn shots(&self) -> Option<u64> {
        match &self.kind {
            OracleKind::Exact => None,
            OracleKind::Sampled { counts, .. } => Some(counts.shots),
        }
    }

    pub fn counts(&self) -> Option<&ShotCounts> {
        match &self.kind {
            OracleKind::Exact => None,
            OracleKind::Sampled { counts, .. } => Some(counts),
        }
    }

    pub fn sign_policy(&self) -> Option<SignPolicy> {
        match &self.kind {
            OracleKind::Exact => None,
            OracleKind::Sampled { policy, .. } => Some(*policy),
        }
    }

    /// Dense view of every estimate, indexed by basis state.
    #[inline]
    pub fn estimates(&self) -> &[f64] {
        match &self.kind {
            OracleKind::Exact => self.table.amplitudes(),
            OracleKind::Sampled { estimates, .. } => estimates,
        }
    }

    #[inline]
    pub fn estimated_amplitude(&self, x: SpinConfiguration) -> f64 {
        self.estimates()[x.index()]
    }
}

/// sign(x)·sqrt(n_x/M) for a sampled oracle, ψ_T(x) for the exact one; zero for unobserved x.
pub fn estimated_amplitude(oracle: &AmplitudeOracle, x: SpinConfiguration) -> f64 {
    oracle.estimated_amplitude(x)
}

/// One row of an overlap ranking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapEntry {
    pub state: SpinConfiguration,
    pub exact: f64,
    pub estimated: f64,
}

/// The `rank_limit` states with largest exact |ψ_T(x)|, ties broken by ascending bit pattern,
/// paired with the oracle's estimates.
pub fn overlap_distribution(oracle: &AmplitudeOracle, rank_limit: usize) -> Vec<OverlapEntry> {
    let exact = oracle.table().amplitudes();
    let estimates = oracle.estimates();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| exact[b].abs().total_cmp(&exact[a].abs()).then(a.cmp(&b)));
    order
        .into_iter()
        .take(rank_limit)
        .map(|x| OverlapEntry {
            state: SpinConfiguration::new(x as u64, oracle.sites()).expect("index within table"),
            exact: exact[x],
            estimated: estimates[x],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TfimModel;
    use crate::trial::{build_trial_table, TrialProvenance, TrialSpec};

    fn table_from(sites: usize, amplitudes: Vec<f64>) -> Arc<TrialTable> {
        let spec = TrialSpec::TableFile {
            path: "inline".into(),
        };
        let provenance = TrialProvenance {
            requested: spec.clone(),
            resolved: spec,
            lambda_optimized: false,
        };
        Arc::new(TrialTable::from_amplitudes(sites, amplitudes, provenance).unwrap())
    }

    fn eq2_table(sites: usize) -> Arc<TrialTable> {
        let model = TfimModel::new(sites, 1.0, 0.5).unwrap();
        Arc::new(build_trial_table(&TrialSpec::symmetric(0.127), &model).unwrap())
    }

    #[test]
    fn point_mass_collects_every_shot() {
        let mut amplitudes = vec![0.0; 16];
        amplitudes[5] = 1.0;
        let table = table_from(4, amplitudes);
        let counts = sample_counts(&table, MeasurementBudget::new(1000, 3).unwrap()).unwrap();
        assert_eq!(counts.counts().len(), 1);
        assert_eq!(counts.counts()[&5], 1000);
    }

    #[test]
    fn zero_budget_rejected() {
        assert!(MeasurementBudget::new(0, 1).is_err());
    }

    #[test]
    fn uniform_counts_within_binomial_bands() {
        let table = table_from(4, vec![1.0; 16]);
        let shots = 1_000_000u64;
        let counts = sample_counts(&table, MeasurementBudget::new(shots, 11).unwrap()).unwrap();
        let p = 1.0 / 16.0;
        let mean = shots as f64 * p;
        let sigma = (shots as f64 * p * (1.0 - p)).sqrt();
        assert_eq!(counts.shots(), shots);
        for n in counts.counts().values() {
            assert!((*n as f64 - mean).abs() < 5.0 * sigma);
        }
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let table = eq2_table(8);
        let a = sample_counts(&table, MeasurementBudget::new(5000, 42).unwrap()).unwrap();
        let b = sample_counts(&table, MeasurementBudget::new(5000, 42).unwrap()).unwrap();
        let c = sample_counts(&table, MeasurementBudget::new(5000, 43).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn estimator_values() {
        let table = eq2_table(6);
        let counts = sample_counts(&table, MeasurementBudget::new(2000, 9).unwrap()).unwrap();
        let oracle =
            AmplitudeOracle::sampled(table.clone(), counts.clone(), SignPolicy::ExactSign).unwrap();
        for x in 0..64u64 {
            let s = SpinConfiguration::new(x, 6).unwrap();
            let n = counts.count(s);
            let est = oracle.estimated_amplitude(s);
            if n == 0 {
                assert_eq!(est, 0.0);
            } else {
                assert_eq!(est, (n as f64 / 2000.0).sqrt());
            }
        }
        let exact = AmplitudeOracle::exact(table.clone());
        for x in 0..64u64 {
            let s = SpinConfiguration::new(x, 6).unwrap();
            assert_eq!(exact.estimated_amplitude(s).to_bits(), table.amplitude(s).to_bits());
        }
    }

    #[test]
    fn sign_policies() {
        let amplitudes: Vec<f64> = (0..16).map(|x| if x % 3 == 0 { -1.0 } else { 1.0 }).collect();
        let table = table_from(4, amplitudes);
        let counts = sample_counts(&table, MeasurementBudget::new(4000, 1).unwrap()).unwrap();
        let signed = AmplitudeOracle::sampled(table.clone(), counts.clone(), SignPolicy::ExactSign)
            .unwrap();
        let positive =
            AmplitudeOracle::sampled(table.clone(), counts, SignPolicy::AssumePositive).unwrap();
        for x in 0..16 {
            assert_eq!(signed.estimates()[x].signum(), table.amplitudes()[x].signum());
            assert!(positive.estimates()[x] > 0.0);
            assert_eq!(signed.estimates()[x].abs(), positive.estimates()[x]);
        }
    }

    #[test]
    fn mismatched_counts_rejected() {
        let counts = sample_counts(&eq2_table(6), MeasurementBudget::new(10, 1).unwrap()).unwrap();
        assert!(AmplitudeOracle::sampled(eq2_table(8), counts, SignPolicy::ExactSign).is_err());
    }

    #[test]
    fn exact_overlap_columns_identical() {
        let oracle = AmplitudeOracle::exact(eq2_table(8));
        let ranking = overlap_distribution(&oracle, 20);
        assert_eq!(ranking.len(), 20);
        for pair in ranking.windows(2) {
            assert!(pair[0].exact.abs() >= pair[1].exact.abs());
        }
        assert!(ranking.iter().all(|e| e.exact == e.estimated));
        assert_eq!(ranking[0].state.bits(), 0);
        assert_eq!(ranking[1].state.bits(), 255);
    }

    #[test]
    fn counts_json_shape() {
        let counts = sample_counts(&eq2_table(6), MeasurementBudget::new(100, 5).unwrap()).unwrap();
        let json = serde_json::to_value(&counts).unwrap();
        assert_eq!(json["M"], 100);
        assert_eq!(json["seed"], 5);
        let total: u64 = json["counts"]
            .as_object()
            .unwrap()
            .values()
            .map(|v| v.as_u64().unwrap())
            .sum();
        assert_eq!(total, 100);
        let back: ShotCounts = serde_json::from_value(json).unwrap();
        assert_eq!(back, counts);
    }
}
