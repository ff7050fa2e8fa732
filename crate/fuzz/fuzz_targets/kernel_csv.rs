#![no_main]

use libfuzzer_sys::fuzz_target;
use tracked_bridge::kernel::{Kernel, KernelSpec};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(spec) = KernelSpec::tabulated_from_csv_str(text) else { return };
    // Parsing checks shape only; normalization is checked on construction.
    let Ok(kernel) = Kernel::new(spec) else { return };
    let m = kernel.moments();
    assert!((m.m0(1.0) - 1.0).abs() < 1e-9);
    for u in [0.0, 0.1, 0.5, 0.9, 1.0] {
        let t = kernel.inverse_m0(u);
        assert!((0.0..=1.0).contains(&t), "inverse of {u} is {t}");
    }
});
