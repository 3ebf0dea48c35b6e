use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::flow::FlowField;

/// Noise model applied to ground-truth flow: iid Gaussian jitter everywhere
/// plus a fraction of vectors replaced with uniform garbage.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FlowNoiseSpec {
    /// Gaussian sigma per component (pixels).
    pub sigma: f64,
    /// Fraction of vectors replaced with garbage in [-20, 20] px.
    pub rho: f64,
    pub seed: u64,
}

impl Default for FlowNoiseSpec {
    fn default() -> Self {
        Self {
            sigma: 0.0,
            rho: 0.0,
            seed: 0,
        }
    }
}

/// Corrupts a flow field. Exactly `⌊rho·H·W⌋` distinct vectors are replaced;
/// the returned mask records which, for test oracles.
pub fn corrupt_flow(flow: &FlowField, spec: &FlowNoiseSpec) -> (FlowField, Vec<bool>) {
    let mut out = flow.clone();
    let n = flow.pixel_count();
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    if spec.sigma > 0.0 {
        let normal = Normal::new(0.0, spec.sigma).unwrap();
        for v in out.vectors.iter_mut() {
            *v += normal.sample(&mut rng) as f32;
        }
    }
    let mut corrupted = vec![false; n];
    let k = ((spec.rho * n as f64).floor() as usize).min(n);
    if k > 0 {
        for idx in sample(&mut rng, n, k) {
            corrupted[idx] = true;
            out.vectors[2 * idx] = rng.gen_range(-20.0..20.0);
            out.vectors[2 * idx + 1] = rng.gen_range(-20.0..20.0);
        }
    }
    (out, corrupted)
}
