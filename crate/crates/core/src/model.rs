//! The periodic transverse-field Ising chain
//!
//! H = -J Σ_k σᶻ_k σᶻ_{k+1} - Γ Σ_k σˣ_k, with site L identified with site 0.
//!
//! Basis states are L-bit integers: bit k set means spin k points up.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest chain a [`SpinConfiguration`] can address.
pub const MAX_SITES: usize = 62;

/// A computational basis state of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct SpinConfiguration {
    bits: u64,
    sites: usize,
}

impl SpinConfiguration {
    pub fn new(bits: u64, sites: usize) -> Result<Self> {
        check_sites(sites)?;
        if bits >> sites != 0 {
            return Err(Error::InvalidArgument(format!(
                "bit pattern {bits:#b} does not fit in {sites} sites"
            )));
        }
        Ok(Self { bits, sites })
    }

    pub fn all_up(sites: usize) -> Result<Self> {
        Self::new(mask(sites), sites)
    }

    pub fn all_down(sites: usize) -> Result<Self> {
        Self::new(0, sites)
    }

    #[inline]
    pub fn bits(self) -> u64 {
        self.bits
    }

    #[inline]
    pub fn sites(self) -> usize {
        self.sites
    }

    #[inline]
    pub fn index(self) -> usize {
        self.bits as usize
    }

    #[inline]
    pub fn is_up(self, site: usize) -> bool {
        self.bits >> site & 1 == 1
    }

    pub fn down_count(self) -> usize {
        self.sites - self.bits.count_ones() as usize
    }

    #[inline]
    pub fn flip(self, site: usize) -> Self {
        debug_assert!(site < self.sites);
        Self {
            bits: self.bits ^ (1 << site),
            sites: self.sites,
        }
    }

    /// Flip every site set in `flip_mask`.
    #[inline]
    pub fn flip_mask(self, flip_mask: u64) -> Self {
        Self {
            bits: (self.bits ^ flip_mask) & mask(self.sites),
            sites: self.sites,
        }
    }

    pub fn complement(self) -> Self {
        self.flip_mask(mask(self.sites))
    }

    /// Cyclic shift by one site: the spin at site k moves to site k+1.
    pub fn rotate(self) -> Self {
        Self {
            bits: rotate_left(self.bits, self.sites),
            sites: self.sites,
        }
    }
}

impl fmt::Display for SpinConfiguration {
    /// Site L-1 first, so the string reads like the binary literal of `bits`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for site in (0..self.sites).rev() {
            f.write_str(if self.is_up(site) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Hamiltonian parameters of the periodic chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TfimModel {
    sites: usize,
    coupling: f64,
    field: f64,
}

impl TfimModel {
    /// `coupling` is J, `field` is Γ. J = 0 is accepted so the paramagnetic limit can be
    /// checked; experiments always run at J > 0.
    pub fn new(sites: usize, coupling: f64, field: f64) -> Result<Self> {
        check_sites(sites)?;
        if !(coupling.is_finite() && coupling >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "coupling J must be finite and non-negative, got {coupling}"
            )));
        }
        if !(field.is_finite() && field >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "field Γ must be finite and non-negative, got {field}"
            )));
        }
        Ok(Self {
            sites,
            coupling,
            field,
        })
    }

    #[inline]
    pub fn sites(&self) -> usize {
        self.sites
    }

    #[inline]
    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    #[inline]
    pub fn field(&self) -> f64 {
        self.field
    }

    /// Hilbert-space dimension 2^L. Only meaningful for chains small enough to store densely.
    pub fn dimension(&self) -> usize {
        1usize << self.sites
    }

    pub fn state(&self, bits: u64) -> Result<SpinConfiguration> {
        SpinConfiguration::new(bits, self.sites)
    }

    pub fn diagonal_energy(&self, x: SpinConfiguration) -> Result<f64> {
        self.check_state(x)?;
        Ok(self.diagonal_energy_bits(x.bits))
    }

    /// Unchecked variant for inner loops; `bits` must fit in `sites` bits.
    #[inline]
    pub fn diagonal_energy_bits(&self, bits: u64) -> f64 {
        let walls = (bits ^ rotate_left(bits, self.sites)).count_ones() as f64;
        -self.coupling * (self.sites as f64 - 2.0 * walls)
    }

    /// The L single-flip states connected to `x` by the transverse field, in site order.
    /// Each carries the off-diagonal element -Γ.
    pub fn neighbors(&self, x: SpinConfiguration) -> Vec<SpinConfiguration> {
        (0..self.sites).map(|k| x.flip(k)).collect()
    }

    /// Upper bound on the diagonal energy: every bond frustrated (even L) or all but one (odd L).
    pub fn max_diagonal_energy(&self) -> f64 {
        let walls = if self.sites % 2 == 0 {
            self.sites
        } else {
            self.sites - 1
        };
        -self.coupling * (self.sites as f64 - 2.0 * walls as f64)
    }

    /// Dense matrix-free product Hv over all 2^L basis states.
    pub fn apply_hamiltonian(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; v.len()];
        self.apply_hamiltonian_into(v, &mut out)?;
        Ok(out)
    }

    pub fn apply_hamiltonian_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        let dim = self.checked_dimension()?;
        if v.len() != dim || out.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "vector length {} (output {}) does not match Hilbert dimension {dim}",
                v.len(),
                out.len()
            )));
        }
        let gamma = self.field;
        for (x, slot) in out.iter_mut().enumerate() {
            let mut flips = 0.0;
            for k in 0..self.sites {
                flips += v[x ^ (1 << k)];
            }
            *slot = self.diagonal_energy_bits(x as u64) * v[x] - gamma * flips;
        }
        Ok(())
    }

    pub(crate) fn checked_dimension(&self) -> Result<usize> {
        if self.sites > crate::DENSE_MAX_SITES {
            return Err(Error::Capability(format!(
                "dense vectors over 2^{} states exceed the {}-site limit",
                self.sites,
                crate::DENSE_MAX_SITES
            )));
        }
        Ok(self.dimension())
    }

    fn check_state(&self, x: SpinConfiguration) -> Result<()> {
        if x.sites != self.sites {
            return Err(Error::InvalidArgument(format!(
                "state has {} sites but the model has {}",
                x.sites, self.sites
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn mask(sites: usize) -> u64 {
    (1u64 << sites) - 1
}

#[inline]
fn rotate_left(bits: u64, sites: usize) -> u64 {
    ((bits << 1) | (bits >> (sites - 1))) & mask(sites)
}

fn check_sites(sites: usize) -> Result<()> {
    if !(2..=MAX_SITES).contains(&sites) {
        return Err(Error::InvalidArgument(format!(
            "chain length must be in 2..={MAX_SITES}, got {sites}"
        )));
    }
    Ok(())
}
