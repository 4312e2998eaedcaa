//! Trial wavefunctions as dense, unit-norm amplitude tables.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SpinConfiguration, TfimModel};
use crate::spectrum::{exact_ground_ed_with, EdLimits};

/// exp[λ Σ σˣ](|↑…↑⟩ + |↓…↓⟩), evaluated per basis state in closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetricExponentialTrial {
    lambda: f64,
    sites: usize,
}

impl SymmetricExponentialTrial {
    pub fn new(lambda: f64, sites: usize) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self { lambda, sites })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Unnormalized amplitude as a function of the number of down spins.
    pub fn amplitude_by_down_count(&self, down: usize) -> f64 {
        let (c, s) = (self.lambda.cosh(), self.lambda.sinh());
        let up = (self.sites - down) as i32;
        let down = down as i32;
        c.powi(up) * s.powi(down) + s.powi(up) * c.powi(down)
    }

    pub fn amplitude(&self, x: SpinConfiguration) -> f64 {
        self.amplitude_by_down_count(x.down_count())
    }

    /// Normalized dense table over all 2^L states.
    pub fn dense(&self) -> Vec<f64> {
        let by_count: Vec<f64> = (0..=self.sites)
            .map(|d| self.amplitude_by_down_count(d))
            .collect();
        let mut table: Vec<f64> = (0..1u64 << self.sites)
            .map(|x| by_count[self.sites - x.count_ones() as usize])
            .collect();
        normalize(&mut table);
        table
    }
}

/// Unnormalized closed-form amplitude of the symmetric exponential trial.
///
/// With d down spins: (cosh λ)^{L-d} (sinh λ)^d + (sinh λ)^{L-d} (cosh λ)^d.
pub fn amplitude_symmetric(lambda: f64, sites: usize, x: SpinConfiguration) -> Result<f64> {
    if x.sites() != sites {
        return Err(Error::InvalidArgument(format!(
            "state has {} sites, trial has {sites}",
            x.sites()
        )));
    }
    Ok(SymmetricExponentialTrial::new(lambda, sites)?.amplitude(x))
}

/// Which trial wavefunction to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrialSpec {
    /// `lambda: None` selects the variationally optimal λ for the model. This is the stand-in
    /// used for |Ψ_MC⟩.
    SymmetricExponential {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda: Option<f64>,
    },
    ExactGround,
    /// e^{-τH}|base⟩, renormalized. The base may not itself be filtered.
    ImaginaryTimeFiltered { base: Box<TrialSpec>, tau: f64 },
    TableFile { path: PathBuf },
}

impl TrialSpec {
    pub fn symmetric(lambda: f64) -> Self {
        TrialSpec::SymmetricExponential {
            lambda: Some(lambda),
        }
    }

    pub fn optimized_symmetric() -> Self {
        TrialSpec::SymmetricExponential { lambda: None }
    }

    pub fn filtered(base: TrialSpec, tau: f64) -> Self {
        TrialSpec::ImaginaryTimeFiltered {
            base: Box::new(base),
            tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TrialSpec::SymmetricExponential { lambda: Some(l) } => check_lambda(*l),
            TrialSpec::SymmetricExponential { lambda: None } | TrialSpec::ExactGround => Ok(()),
            TrialSpec::ImaginaryTimeFiltered { base, tau } => {
                if !(tau.is_finite() && *tau >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "imaginary time tau must be finite and >= 0, got {tau}"
                    )));
                }
                if matches!(**base, TrialSpec::ImaginaryTimeFiltered { .. }) {
                    return Err(Error::InvalidArgument(
                        "imaginary_time_filtered trials cannot be nested".into(),
                    ));
                }
                base.validate()
            }
            TrialSpec::TableFile { .. } => Ok(()),
        }
    }

    fn needs_dense_propagation(&self) -> bool {
        match self {
            TrialSpec::ExactGround | TrialSpec::ImaginaryTimeFiltered { .. } => true,
            TrialSpec::SymmetricExponential { .. } | TrialSpec::TableFile { .. } => false,
        }
    }
}

/// How a table was produced. `resolved` has every optimized λ filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialProvenance {
    pub requested: TrialSpec,
    pub resolved: TrialSpec,
    /// Set when λ came from [`optimize_lambda`] rather than the caller.
    pub lambda_optimized: bool,
}

impl TrialProvenance {
    fn fixed(spec: TrialSpec) -> Self {
        Self {
            requested: spec.clone(),
            resolved: spec,
            lambda_optimized: false,
        }
    }
}

/// Unit-norm real amplitudes ψ_T(x) over all 2^L basis states.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTable {
    sites: usize,
    amplitudes: Vec<f64>,
    provenance: TrialProvenance,
}

impl TrialTable {
    /// Normalizes `amplitudes`; fails on a length that is not 2^sites or a zero vector.
    pub fn from_amplitudes(
        sites: usize,
        mut amplitudes: Vec<f64>,
        provenance: TrialProvenance,
    ) -> Result<Self> {
        if sites > crate::DENSE_MAX_SITES || amplitudes.len() != 1usize << sites {
            return Err(Error::InvalidArgument(format!(
                "{} amplitudes cannot describe a {sites}-site chain",
                amplitudes.len()
            )));
        }
        if amplitudes.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidArgument("amplitudes must be finite".into()));
        }
        if !normalize(&mut amplitudes) {
            return Err(Error::InvalidArgument("trial vector has zero norm".into()));
        }
        Ok(Self {
            sites,
            amplitudes,
            provenance,
        })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    #[inline]
    pub fn amplitude(&self, x: SpinConfiguration) -> f64 {
        self.amplitudes[x.index()]
    }

    pub fn provenance(&self) -> &TrialProvenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }
}

pub fn build_trial_table(spec: &TrialSpec, model: &TfimModel) -> Result<TrialTable> {
    build_trial_table_with(spec, model, EdLimits::default())
}

pub fn build_trial_table_with(
    spec: &TrialSpec,
    model: &TfimModel,
    limits: EdLimits,
) -> Result<TrialTable> {
    spec.validate()?;
    model.checked_dimension()?;
    if spec.needs_dense_propagation() && model.sites() > limits.max_sites {
        return Err(Error::Capability(format!(
            "{:?} trial needs dense propagation, limited to L <= {}",
            spec, limits.max_sites
        )));
    }
    let sites = model.sites();
    match spec {
        TrialSpec::SymmetricExponential { lambda } => {
            let (lambda, optimized) = match lambda {
                Some(l) => (*l, false),
                None => (optimize_lambda(model, LambdaWindow::default())?, true),
            };
            let amplitudes = SymmetricExponentialTrial::new(lambda, sites)?.dense();
            let provenance = TrialProvenance {
                requested: spec.clone(),
                resolved: TrialSpec::symmetric(lambda),
                lambda_optimized: optimized,
            };
            TrialTable::from_amplitudes(sites, amplitudes, provenance)
        }
        TrialSpec::ExactGround => {
            let ground = exact_ground_ed_with(model, limits)?;
            let vector = ground.ground_vector.expect("ED always returns a vector");
            TrialTable::from_amplitudes(sites, vector, TrialProvenance::fixed(spec.clone()))
        }
        TrialSpec::ImaginaryTimeFiltered { base, tau } => {
            let base_table = build_trial_table_with(base, model, limits)?;
            let filtered = imaginary_time_filter(model, base_table.amplitudes(), *tau)?;
            let provenance = TrialProvenance {
                requested: spec.clone(),
                resolved: TrialSpec::filtered(base_table.provenance.resolved.clone(), *tau),
                lambda_optimized: base_table.provenance.lambda_optimized,
            };
            TrialTable::from_amplitudes(sites, filtered, provenance)
        }
        TrialSpec::TableFile { path } => {
            let (file_sites, amplitudes) = read_table_file(path)?;
            if file_sites != sites {
                return Err(Error::Format(format!(
                    "{} holds a {file_sites}-site table, model has {sites} sites",
                    path.display()
                )));
            }
            TrialTable::from_amplitudes(sites, amplitudes, TrialProvenance::fixed(spec.clone()))
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
        }
    }
}

/// Normalized e^{-τH} v.
///
/// The propagator is split into steps with δ·‖H‖ ≤ 1/2, each expanded as a Taylor series
/// until the next term falls below machine precision. Renormalizing after every step keeps
/// long imaginary times free of overflow.
pub fn imaginary_time_filter(model: &TfimModel, v: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "imaginary time must be finite and >= 0, got {tau}"
        )));
    }
    let dim = model.checked_dimension()?;
    if v.len() != dim {
        return Err(Error::InvalidArgument(format!(
            "vector length {} does not match dimension {dim}",
            v.len()
        )));
    }
    let mut state = v.to_vec();
    if !normalize(&mut state) {
        return Err(Error::InvalidArgument("cannot filter a zero vector".into()));
    }
    let bound = model.sites() as f64 * (model.coupling() + model.field());
    let steps = (2.0 * tau * bound).ceil().max(1.0) as usize;
    let delta = tau / steps as f64;
    if delta == 0.0 {
        return Ok(state);
    }

    let mut term = vec![0.0; dim];
    let mut next = vec![0.0; dim];
    for _ in 0..steps {
        term.copy_from_slice(&state);
        for order in 1..=64 {
            model.apply_hamiltonian_into(&term, &mut next)?;
            let factor = -delta / order as f64;
            let mut term_norm = 0.0;
            for ((t, n), s) in term.iter_mut().zip(&next).zip(state.iter_mut()) {
                *t = factor * n;
                *s += *t;
                term_norm += *t * *t;
            }
            if term_norm.sqrt() < 1e-17 {
                break;
            }
        }
        normalize(&mut state);
    }
    Ok(state)
}

/// ⟨Ψ|H|Ψ⟩ for a unit-norm table.
pub fn variational_energy(table: &TrialTable, model: &TfimModel) -> Result<f64> {
    energy_expectation(model, table.amplitudes())
}

fn energy_expectation(model: &TfimModel, psi: &[f64]) -> Result<f64> {
    let h_psi = model.apply_hamiltonian(psi)?;
    Ok(psi.iter().zip(&h_psi).map(|(a, b)| a * b).sum())
}

/// Search interval for [`optimize_lambda`]; must lie inside [0, 2].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaWindow {
    pub lower: f64,
    pub upper: f64,
}

impl Default for LambdaWindow {
    fn default() -> Self {
        Self {
            lower: 0.0,
            upper: 2.0,
        }
    }
}

/// λ minimizing the variational energy of the symmetric exponential family, by golden-section
/// search down to a window of width 1e-6. The window endpoints are also candidates.
pub fn optimize_lambda(model: &TfimModel, window: LambdaWindow) -> Result<f64> {
    let LambdaWindow { lower, upper } = window;
    if !(0.0..=2.0).contains(&lower) || !(0.0..=2.0).contains(&upper) || lower > upper {
        return Err(Error::InvalidArgument(format!(
            "lambda window [{lower}, {upper}] must lie inside [0, 2]"
        )));
    }
    model.checked_dimension()?;
    let energy = |lambda: f64| -> Result<f64> {
        let psi = SymmetricExponentialTrial::new(lambda, model.sites())?.dense();
        energy_expectation(model, &psi)
    };

    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lower, upper);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (energy(c)?, energy(d)?);
    while b - a > 1e-6 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = energy(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = energy(d)?;
        }
    }
    let interior = 0.5 * (a + b);
    let mut best = (interior, energy(interior)?);
    for candidate in [lower, upper] {
        let e = energy(candidate)?;
        if e < best.1 {
            best = (candidate, e);
        }
    }
    Ok(best.0)
}

const TABLE_MAGIC: &[u8; 4] = b"QMCT";
const TABLE_VERSION: u32 = 1;

/// Reads a binary amplitude table: "QMCT", version u32 = 1, L u32, then 2^L little-endian f64.
/// Amplitudes are returned as stored; normalization happens when a [`TrialTable`] is built.
pub fn read_table_file(path: &Path) -> Result<(usize, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < 12 || &bytes[..4] != TABLE_MAGIC {
        return Err(bad("missing QMCT header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != TABLE_VERSION {
        return Err(bad(format!("unsupported table version {version}")));
    }
    let sites = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if !(2..=crate::DENSE_MAX_SITES).contains(&sites) {
        return Err(bad(format!("unsupported chain length {sites}")));
    }
    let body = &bytes[12..];
    let expected = 8usize << sites;
    if body.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes of amplitudes for L = {sites}, found {}",
            body.len()
        )));
    }
    let amplitudes = body
        .chunks_exact(8)
        .map(|chunk| f64::from_le_bytes(chunk.try_into().unwrap()))
        .collect();
    Ok((sites, amplitudes))
}

/// Writes `table` in the binary format plus a `<path>.json` provenance sidecar.
pub fn write_table_file(path: &Path, table: &TrialTable) -> Result<()> {
    let mut bytes = Vec::with_capacity(12 + 8 * table.len());
    bytes.extend_from_slice(TABLE_MAGIC);
    bytes.extend_from_slice(&TABLE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(table.sites as u32).to_le_bytes());
    for a in &table.amplitudes {
        bytes.extend_from_slice(&a.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let sidecar = sidecar_path(path);
    let meta = serde_json::json!({
        "L": table.sites,
        "provenance": table.provenance,
    });
    fs::write(&sidecar, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(sidecar, e))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    Ok(())
}

/// Scales to unit 2-norm; returns false for a zero vector.
pub(crate) fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm == 0.0 {
        return false;
    }
    for a in v.iter_mut() {
        *a /= norm;
    }
    true
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};

    use super::*;
    use crate::spectrum::{dense, exact_ground_ed, fermion_ground_energy};

    fn model(sites: usize, g: f64) -> TfimModel {
        TfimModel::new(sites, 1.0, g).unwrap()
    }

    fn inner(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// exp(λ Σ σˣ) applied to the two reference states via a dense matrix exponential.
    fn brute_force_symmetric(lambda: f64, sites: usize) -> Vec<f64> {
        let dim = 1 << sites;
        let mut sx = DMatrix::<f64>::zeros(dim, dim);
        for x in 0..dim {
            for k in 0..sites {
                sx[(x ^ (1 << k), x)] += lambda;
            }
        }
        let propagator = sx.exp();
        let mut refs = DVector::<f64>::zeros(dim);
        refs[0] = 1.0;
        refs[dim - 1] = 1.0;
        (propagator * refs).iter().copied().collect()
    }

    #[test]
    fn closed_form_examples() {
        let up = SpinConfiguration::all_up(6).unwrap();
        assert_eq!(amplitude_symmetric(0.0, 6, up).unwrap(), 1.0);
        for bits in 1..63u64 {
            let x = SpinConfiguration::new(bits, 6).unwrap();
            assert_eq!(amplitude_symmetric(0.0, 6, x).unwrap(), 0.0);
        }
        // Frozen from the dense matrix-exponential construction below.
        let one_down = SpinConfiguration::new(0b111110, 6).unwrap();
        let expected = brute_force_symmetric(0.127, 6)[one_down.index()];
        let closed = amplitude_symmetric(0.127, 6, one_down).unwrap();
        assert!((closed - expected).abs() < 1e-12);
        // The quoted ≈ 0.13259 is a rounding of 0.1326008.
        assert!((closed - 0.13259).abs() < 2e-5);
        assert!(amplitude_symmetric(-0.1, 6, one_down).is_err());
    }

    #[test]
    fn closed_form_matches_matrix_exponential() {
        for sites in 2..=8 {
            for &lambda in &[0.05, 0.127, 0.5] {
                let brute = brute_force_symmetric(lambda, sites);
                let trial = SymmetricExponentialTrial::new(lambda, sites).unwrap();
                for (x, &b) in brute.iter().enumerate() {
                    let s = SpinConfiguration::new(x as u64, sites).unwrap();
                    let a = trial.amplitude(s);
                    assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-300), "L={sites} x={x}");
                }
            }
        }
    }

    #[test]
    fn symmetric_table_invariants() {
        let m = model(10, 0.5);
        let table = build_trial_table(&TrialSpec::symmetric(0.127), &m).unwrap();
        let norm: f64 = table.amplitudes().iter().map(|a| a * a).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        let full = (1u64 << 10) - 1;
        for (x, &a) in table.amplitudes().iter().enumerate() {
            assert!(a >= 0.0);
            assert_eq!(a.to_bits(), table.amplitudes()[x ^ full as usize].to_bits());
        }
    }

    #[test]
    fn exact_ground_table_is_ed_vector() {
        let m = model(8, 1.0);
        let table = build_trial_table(&TrialSpec::ExactGround, &m).unwrap();
        let ed = exact_ground_ed(&m).unwrap();
        assert_eq!(table.amplitudes(), ed.ground_vector.unwrap().as_slice());
        let e = variational_energy(&table, &m).unwrap();
        assert!((e - ed.ground_energy).abs() < 1e-10);
    }

    #[test]
    fn zero_tau_filter_is_identity() {
        let m = model(6, 1.0);
        let base = build_trial_table(&TrialSpec::symmetric(0.3), &m).unwrap();
        let filtered =
            build_trial_table(&TrialSpec::filtered(TrialSpec::symmetric(0.3), 0.0), &m).unwrap();
        assert_eq!(base.amplitudes(), filtered.amplitudes());
    }

    #[test]
    fn filter_matches_eigendecomposition() {
        for sites in [4, 6, 8] {
            let m = model(sites, 1.0);
            let eigen = dense::eigen(&m);
            let base = SymmetricExponentialTrial::new(0.2, sites).unwrap().dense();
            // Make the base generic so every symmetry sector participates.
            let base: Vec<f64> = base
                .iter()
                .enumerate()
                .map(|(x, a)| a + 0.01 * ((x * 37 % 17) as f64 - 8.0))
                .collect();
            for &tau in &[0.05, 0.5, 3.0] {
                let coeffs = eigen.eigenvectors.transpose() * DVector::from_column_slice(&base);
                let weighted = DVector::from_iterator(
                    coeffs.len(),
                    coeffs
                        .iter()
                        .zip(eigen.eigenvalues.iter())
                        .map(|(c, e)| c * (-tau * (e - eigen.eigenvalues.min())).exp()),
                );
                let mut oracle: Vec<f64> = (&eigen.eigenvectors * weighted).iter().copied().collect();
                normalize(&mut oracle);
                let got = imaginary_time_filter(&m, &base, tau).unwrap();
                for (a, b) in got.iter().zip(&oracle) {
                    assert!((a - b).abs() < 1e-12, "L={sites} tau={tau}");
                }
            }
        }
    }

    #[test]
    fn long_filter_reaches_ground_state() {
        let m = model(8, 1.0);
        let ground = exact_ground_ed(&m).unwrap().ground_vector.unwrap();
        let table =
            build_trial_table(&TrialSpec::filtered(TrialSpec::symmetric(0.2), 50.0), &m).unwrap();
        let fidelity = inner(table.amplitudes(), &ground).powi(2);
        assert!(fidelity > 1.0 - 1e-8, "fidelity {fidelity}");
    }

    #[test]
    fn filter_lowers_energy_monotonically() {
        let m = model(8, 1.0);
        for base in [TrialSpec::symmetric(0.05), TrialSpec::symmetric(0.6)] {
            let mut last = f64::INFINITY;
            for tau in [0.0, 0.05, 0.1, 0.5] {
                let table = build_trial_table(&TrialSpec::filtered(base.clone(), tau), &m).unwrap();
                let e = variational_energy(&table, &m).unwrap();
                assert!(e <= last + 1e-12, "{base:?} tau={tau}: {e} > {last}");
                last = e;
            }
        }
    }

    #[test]
    fn nested_filter_rejected() {
        let spec = TrialSpec::filtered(TrialSpec::filtered(TrialSpec::ExactGround, 0.1), 0.1);
        assert!(spec.validate().is_err());
        assert!(TrialSpec::filtered(TrialSpec::ExactGround, -1.0).validate().is_err());
    }

    #[test]
    fn classical_limit_energies() {
        let m = TfimModel::new(6, 1.0, 0.0).unwrap();
        let ghz = build_trial_table(&TrialSpec::symmetric(0.0), &m).unwrap();
        assert!((variational_energy(&ghz, &m).unwrap() + 6.0).abs() < 1e-12);
        assert_eq!(optimize_lambda(&m, LambdaWindow::default()).unwrap(), 0.0);
    }

    #[test]
    fn trial_quality_at_half_field() {
        for sites in 6..=12 {
            let m = model(sites, 0.5);
            let table = build_trial_table(&TrialSpec::symmetric(0.127), &m).unwrap();
            let ratio = variational_energy(&table, &m).unwrap() / fermion_ground_energy(&m);
            assert!(ratio >= 0.998, "L={sites}: {ratio}");
            assert!(ratio <= 1.0);
        }
    }

    #[test]
    fn optimized_lambda_matches_grid_scan() {
        let m = model(12, 0.5);
        let best = optimize_lambda(&m, LambdaWindow::default()).unwrap();
        let energy = |l: f64| {
            let psi = SymmetricExponentialTrial::new(l, 12).unwrap().dense();
            energy_expectation(&m, &psi).unwrap()
        };
        let grid = (0..=3000)
            .map(|i| i as f64 * 1e-4)
            .min_by(|a, b| energy(*a).total_cmp(&energy(*b)))
            .unwrap();
        assert!((best - grid).abs() < 2e-4, "golden {best} grid {grid}");
        assert!((best - 0.127).abs() < 0.02);
        assert!(energy(best - 1e-3) >= energy(best));
        assert!(energy(best + 1e-3) >= energy(best));
        assert!(optimize_lambda(&m, LambdaWindow { lower: 0.0, upper: 2.5 }).is_err());
    }

    #[test]
    fn optimized_spec_records_provenance() {
        let m = model(8, 1.0);
        let table = build_trial_table(&TrialSpec::optimized_symmetric(), &m).unwrap();
        assert!(table.provenance().lambda_optimized);
        match table.provenance().resolved {
            TrialSpec::SymmetricExponential { lambda: Some(l) } => assert!(l > 0.1 && l < 1.0),
            ref other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn table_file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trial.qmct");
        let m = model(6, 1.0);
        let table = build_trial_table(&TrialSpec::symmetric(0.3), &m).unwrap();
        write_table_file(&path, &table).unwrap();
        assert!(sidecar_path(&path).exists());

        let spec = TrialSpec::TableFile { path: path.clone() };
        let loaded = build_trial_table(&spec, &m).unwrap();
        assert_eq!(loaded.amplitudes(), table.amplitudes());

        let wrong = build_trial_table(&spec, &model(8, 1.0));
        assert!(matches!(wrong, Err(Error::Format(_))));

        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(build_trial_table(&spec, &m), Err(Error::Format(_))));
    }

    #[test]
    fn spec_json_shape() {
        let spec: TrialSpec = serde_json::from_str(
            r#"{"kind":"imaginary_time_filtered","tau":0.05,"base":{"kind":"symmetric_exponential"}}"#,
        )
        .unwrap();
        assert_eq!(spec, TrialSpec::filtered(TrialSpec::optimized_symmetric(), 0.05));
        assert!(serde_json::from_str::<TrialSpec>(r#"{"kind":"symmetric_exponential","lamda":1}"#).is_err());
    }
}
