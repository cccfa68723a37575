#![no_main]

use libfuzzer_sys::fuzz_target;
use smash_core::ash::{self, ObservationSet};
use smash_core::io;

fuzz_target!(|text: &str| {
    if let Ok((betahat, se)) = io::parse_ash_input(text) {
        assert_eq!(betahat.len(), se.len());
        let obs = ObservationSet::new(betahat, se).unwrap();
        if obs.len() <= 64 {
            if let Ok((_, post)) = ash::shrink(&obs) {
                for (m, b) in post.mean.iter().zip(obs.betahat()) {
                    assert!(m.abs() <= b.abs());
                }
            }
        }
    }
});
