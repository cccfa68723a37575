#![no_main]

use libfuzzer_sys::fuzz_target;
use smash_core::io;

fuzz_target!(|text: &str| {
    if let Ok(input) = io::parse_gauss_input(text) {
        assert!(input.y.iter().all(|v| v.is_finite()));
        assert!(input.sd.iter().flatten().all(|&s| s > 0.0 && s.is_finite()));
        if let Some(x) = &input.x {
            assert_eq!(x.len(), input.y.len());
            let (xs, ys) = io::dedupe_median(x, &input.y);
            assert_eq!(xs.len(), ys.len());
            assert!(xs.windows(2).all(|w| w[0] < w[1]));
        }
    }
});
