#![no_main]

use libfuzzer_sys::fuzz_target;
use tracked_bridge::geometry::DensityGrid;

fuzz_target!(|data: &[u8]| {
    if let Ok(grid) = DensityGrid::from_bytes(data) {
        assert_eq!(grid.values.len(), grid.grid.nx * grid.grid.ny);
        assert_eq!(grid.to_bytes(), data);
    }
});
