//! Shared fixtures for the benchmark suite.

use s6v_core::measures::{sample_window, MeasureSpec};
use s6v_core::qseries::SixVertexParams;
use s6v_core::rng::{RandomField, Stream};
use s6v_core::OccupancyWindow;

pub fn bernoulli_window(rho: f64, offset: i64, len: usize, seed: u64) -> OccupancyWindow {
    let spec = MeasureSpec::BernoulliProduct { rho };
    sample_window(&spec, offset, len, &mut Stream::new(seed)).unwrap()
}

pub fn standard_params() -> SixVertexParams {
    SixVertexParams::new(2.0 / 3.0, 1.0 / 3.0).unwrap()
}

pub fn field(replica: u64) -> RandomField {
    RandomField::new(0xbe9c_0000, replica)
}
