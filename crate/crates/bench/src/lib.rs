//! Fixtures shared by the benchmarks.

use pargrappa::simulate::{run_simulation, Experiment, ExperimentDesign, SimulationConfig};
use pargrappa::CoilKSpaceSeries;

/// A short run at full image size: 96 x 96, 8 coils, 30 calibration frames.
pub fn short_run() -> (Experiment, CoilKSpaceSeries) {
    let cfg = SimulationConfig {
        design: ExperimentDesign {
            n_rest_head: 2,
            epoch_count: 1,
            off_len: 2,
            on_len: 2,
            n_rest_tail: 0,
            discard: 0,
        },
        ..SimulationConfig::default()
    };
    let e = run_simulation(&cfg).expect("default simulation");
    let sub = e.subsampled().expect("subsample");
    (e, sub)
}
