#![no_main]

use libfuzzer_sys::fuzz_target;
use smash_core::io;
use smash_core::pois::{self, Reconstruction};

fuzz_target!(|text: &str| {
    if let Ok(counts) = io::parse_counts(text) {
        assert!(!counts.is_empty());
        // keep totals small enough that sums cannot overflow
        if counts.len().is_power_of_two() && counts.len() <= 64 && counts.iter().all(|&c| c < 1 << 20) {
            let fit = pois::smooth_poisson(&counts, Reconstruction::Delta).unwrap();
            assert!(fit.mean.iter().all(|m| m.is_finite() && *m >= 0.0));
        }
    }
});
