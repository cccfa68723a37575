#![no_main]

use libfuzzer_sys::fuzz_target;
use smash_core::io;

fuzz_target!(|text: &str| {
    if let Ok(config) = io::parse_bench_config(text) {
        let again = serde_json::to_string(&config).unwrap();
        assert_eq!(io::parse_bench_config(&again).unwrap(), config);
    }
});
