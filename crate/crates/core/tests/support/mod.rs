//! Test-only helpers shared by the integration suites.
#![allow(dead_code)]

pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random `(volt, lux)` sequence with occasional exact darkness and full-store
/// readings so every branch of the controller is exercised.
pub fn random_inputs(seed: u64, len: usize) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            let volt = if rng.random_bool(0.05) {
                3.6
            } else {
                rng.random_range(2.1..=3.6)
            };
            let lux = if rng.random_bool(0.1) {
                0.0
            } else {
                rng.random_range(0.0..=1000.0)
            };
            (volt, lux)
        })
        .collect()
}
