//! Exact ground states: dense diagonalization and the free-fermion closed form.
//!
//! For Γ > 0 the Hamiltonian has non-positive off-diagonal elements and a connected flip graph,
//! so its ground state is unique and strictly positive. A positive eigenvector is invariant under
//! every basis permutation that commutes with H, which places it in the sector that is symmetric
//! under both cyclic translation and the global spin flip. Diagonalization is therefore done on
//! that sector (about 2^L / 2L orbit states) and expanded back to the full basis.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mask, TfimModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumMethod {
    Ed,
    Fermion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub method: SpectrumMethod,
    #[serde(rename = "L")]
    pub sites: usize,
    #[serde(rename = "J")]
    pub coupling: f64,
    #[serde(rename = "gamma")]
    pub field: f64,
    #[serde(rename = "energy")]
    pub ground_energy: f64,
    /// Unit-norm, largest-magnitude entry positive. Only produced by diagonalization.
    #[serde(skip)]
    pub ground_vector: Option<Vec<f64>>,
}

/// Size guard for dense diagonalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdLimits {
    pub max_sites: usize,
}

impl EdLimits {
    pub const DEFAULT_MAX_SITES: usize = 12;
    pub const EXTENDED_MAX_SITES: usize = 14;

    /// Opt-in limit for L = 13 and 14.
    pub fn extended() -> Self {
        Self {
            max_sites: Self::EXTENDED_MAX_SITES,
        }
    }
}

impl Default for EdLimits {
    fn default() -> Self {
        Self {
            max_sites: Self::DEFAULT_MAX_SITES,
        }
    }
}

pub fn exact_ground_ed(model: &TfimModel) -> Result<SpectrumResult> {
    exact_ground_ed_with(model, EdLimits::default())
}

pub fn exact_ground_ed_with(model: &TfimModel, limits: EdLimits) -> Result<SpectrumResult> {
    if model.sites() > limits.max_sites {
        return Err(Error::Capability(format!(
            "exact diagonalization limited to L <= {} (requested L = {}); use the extended limit for L <= {}",
            limits.max_sites,
            model.sites(),
            EdLimits::EXTENDED_MAX_SITES
        )));
    }
    let sector = SymmetricSector::new(model.sites());
    let block = sector.hamiltonian_block(model);
    let eigen = SymmetricEigen::new(block);
    let (lowest, &ground_energy) = eigen
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("sector is never empty");
    let coefficients = eigen.eigenvectors.column(lowest);

    let mut vector: Vec<f64> = sector
        .orbit_of
        .iter()
        .map(|&orbit| coefficients[orbit] / (sector.orbit_sizes[orbit] as f64).sqrt())
        .collect();
    fix_sign_and_normalize(&mut vector);

    Ok(SpectrumResult {
        method: SpectrumMethod::Ed,
        sites: model.sites(),
        coupling: model.coupling(),
        field: model.field(),
        ground_energy,
        ground_vector: Some(vector),
    })
}

/// Ground energy from the Jordan-Wigner mapping to free fermions, antiperiodic momenta
/// k_n = π(2n+1)/L with single-particle energies ε(k) = 2·sqrt(J² + Γ² - 2JΓ cos k).
pub fn exact_ground_fermion(model: &TfimModel) -> SpectrumResult {
    SpectrumResult {
        method: SpectrumMethod::Fermion,
        sites: model.sites(),
        coupling: model.coupling(),
        field: model.field(),
        ground_energy: fermion_ground_energy(model),
        ground_vector: None,
    }
}

pub fn fermion_ground_energy(model: &TfimModel) -> f64 {
    let (j, g) = (model.coupling(), model.field());
    let sites = model.sites() as f64;
    let mut energy = 0.0;
    for n in 0..model.sites() {
        let k = std::f64::consts::PI * (2 * n + 1) as f64 / sites;
        let epsilon = 2.0 * (j * j + g * g - 2.0 * j * g * k.cos()).max(0.0).sqrt();
        energy -= 0.5 * epsilon;
    }
    energy
}

/// Unit 2-norm with the largest-magnitude entry made positive (first such entry on ties).
pub(crate) fn fix_sign_and_normalize(vector: &mut [f64]) {
    let norm = vector.iter().map(|a| a * a).sum::<f64>().sqrt();
    let pivot = vector
        .iter()
        .copied()
        .fold(0.0f64, |best, a| if a.abs() > best.abs() { a } else { best });
    let scale = if pivot < 0.0 { -1.0 / norm } else { 1.0 / norm };
    for a in vector.iter_mut() {
        *a *= scale;
    }
}

/// Orbits of the basis under cyclic translation and global spin flip.
struct SymmetricSector {
    sites: usize,
    orbit_of: Vec<usize>,
    orbit_sizes: Vec<usize>,
    members: Vec<Vec<u64>>,
}

impl SymmetricSector {
    fn new(sites: usize) -> Self {
        let dim = 1usize << sites;
        let full = mask(sites);
        let mut orbit_of = vec![usize::MAX; dim];
        let mut members = Vec::new();
        for start in 0..dim as u64 {
            if orbit_of[start as usize] != usize::MAX {
                continue;
            }
            let id = members.len();
            let mut orbit = Vec::with_capacity(2 * sites);
            let mut x = start;
            for _ in 0..sites {
                for y in [x, x ^ full] {
                    if orbit_of[y as usize] == usize::MAX {
                        orbit_of[y as usize] = id;
                        orbit.push(y);
                    }
                }
                x = ((x << 1) | (x >> (sites - 1))) & full;
            }
            members.push(orbit);
        }
        let orbit_sizes = members.iter().map(Vec::len).collect();
        Self {
            sites,
            orbit_of,
            orbit_sizes,
            members,
        }
    }

    fn len(&self) -> usize {
        self.members.len()
    }

    /// ⟨s|H|r⟩ for normalized orbit sums |r⟩ = N_r^{-1/2} Σ_{x ∈ r} |x⟩.
    fn hamiltonian_block(&self, model: &TfimModel) -> DMatrix<f64> {
        let n = self.len();
        let mut block = DMatrix::<f64>::zeros(n, n);
        let gamma = model.field();
        for (r, orbit) in self.members.iter().enumerate() {
            for &x in orbit {
                block[(r, r)] += model.diagonal_energy_bits(x);
                for k in 0..self.sites {
                    let s = self.orbit_of[(x ^ (1 << k)) as usize];
                    block[(s, r)] -= gamma;
                }
            }
        }
        for r in 0..n {
            for s in 0..n {
                block[(s, r)] /= ((self.orbit_sizes[r] * self.orbit_sizes[s]) as f64).sqrt();
            }
        }
        block
    }
}
