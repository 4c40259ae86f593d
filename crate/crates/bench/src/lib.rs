//! Benchmark fixtures shared by the criterion targets.

use kiqt_core::phantom::brain_phantom;
use kiqt_core::tensorio::{ComplexSlice, MagnitudeSlice};

/// Seeded phantom of edge `n`.
pub fn phantom(n: usize, seed: u64) -> MagnitudeSlice {
    brain_phantom(n, n, seed).expect("benchmark sizes are multiples of 8")
}

pub fn phantom_complex(n: usize, seed: u64) -> ComplexSlice {
    ComplexSlice::from_magnitude(&phantom(n, seed))
}
