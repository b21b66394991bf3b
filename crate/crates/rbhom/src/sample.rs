//! Seeded parameter sampling.
//!
//! Uses the ChaCha8 counter-based generator so samples are reproducible
//! byte-for-byte across platforms. The training sample uses the run seed;
//! the test sample uses seed + 1.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::param::{CellParam, ParamBox};

/// One uniform sample over the parameter box.
#[derive(Clone, Copy, Debug)]
pub struct SampleSpec {
    pub seed: u64,
    pub count: usize,
    pub param_box: ParamBox,
}

/// Uniform double in [0, 1) from the top 53 bits of a draw.
fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Draw `count` parameters, each coordinate uniform and independent over the
/// box, in the fixed order (b1, c1, b2, c2, theta).
pub fn sample_params(spec: &SampleSpec) -> Vec<CellParam> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ranges = spec.param_box.ranges();
    (0..spec.count)
        .map(|_| {
            let mut v = [0.0; 5];
            for (slot, &(lo, hi)) in v.iter_mut().zip(&ranges) {
                *slot = lo + unit_f64(&mut rng) * (hi - lo);
            }
            CellParam { b1: v[0], c1: v[1], b2: v[2], c2: v[3], theta: v[4] }
        })
        .collect()
}
