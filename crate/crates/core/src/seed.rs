//! Per-cell seed derivation.

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer. A bijection on u64 with full avalanche.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for cell `cell_index` under `master`: mix64(master XOR mix64(cell_index + γ)).
///
/// Both mixes are bijections, so distinct cells under one master never collide and a
/// different master changes every cell's seed.
pub fn derive_seed(master: u64, cell_index: u64) -> u64 {
    mix64(master ^ mix64(cell_index.wrapping_add(GOLDEN_GAMMA)))
}

/// Coordinates of one experiment cell: chain length, Γ/J, budget (0 = exact) and replicate.
///
/// Seeds are keyed by coordinates rather than by position in a sweep, so every experiment that
/// touches the same (L, Γ/J, M, replicate) sees the same shot histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellKey {
    pub sites: usize,
    pub gamma_over_j: f64,
    pub shots: u64,
    pub replicate: u64,
}

impl CellKey {
    pub fn new(sites: usize, gamma_over_j: f64, shots: u64, replicate: u64) -> Self {
        Self {
            sites,
            gamma_over_j,
            shots,
            replicate,
        }
    }

    /// 64-bit cell index fed to [`derive_seed`].
    pub fn index(&self) -> u64 {
        [self.gamma_over_j.to_bits(), self.shots, self.replicate]
            .into_iter()
            .fold(mix64(self.sites as u64), |acc, part| mix64(acc ^ mix64(part)))
    }
}

/// Independent random streams inside one cell, derived as `derive_seed(cell_seed, stream)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Shots = 0,
    Gfmc = 1,
    /// Shots for the filtered-trial panel of a walker study.
    FilteredShots = 2,
}
