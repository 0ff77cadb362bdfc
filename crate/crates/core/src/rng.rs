//! Counter-based stream derivation.
//!
//! Every random draw is made from a ChaCha8 stream whose key and stream id are
//! fixed functions of the master seed and the cell labels, so results do not
//! depend on thread scheduling or evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent purposes that share one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    MonteCarlo = 0x6d63_6465_6c74_6100,
    Bootstrap = 0x626f_6f74_7374_7200,
}

/// Labels of one Monte Carlo cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellKey {
    pub budget_idx: u32,
    pub eps_idx: u32,
    /// Scale index; the unmitigated arm uses [`CellKey::NOISY_ARM`].
    pub scale_idx: u32,
    pub rep_idx: u32,
}

impl CellKey {
    pub const NOISY_ARM: u32 = u32::MAX;
}

/// Stream for one Monte Carlo cell.
pub fn cell_stream(master_seed: u64, key: CellKey) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&(Domain::MonteCarlo as u64).to_le_bytes());
    seed[16..20].copy_from_slice(&key.budget_idx.to_le_bytes());
    seed[20..24].copy_from_slice(&key.eps_idx.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(((key.scale_idx as u64) << 32) | key.rep_idx as u64);
    rng
}

/// Stream for one bootstrap replicate.
pub fn replicate_stream(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(Domain::Bootstrap as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(replicate);
    rng
}
