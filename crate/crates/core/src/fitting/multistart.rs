//! Seeded low-discrepancy starts and deterministic winner selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::solver::{minimize, LeastSquares, Outcome};
use super::{FitConfig, FitError};

const PRIMES: [u32; 6] = [2, 3, 5, 7, 11, 13];

fn radical_inverse(mut index: usize, base: u32) -> f64 {
    let b = base as usize;
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while index > 0 {
        out += (index % b) as f64 * inv;
        index /= b;
        inv /= base as f64;
    }
    out
}

/// Halton points with a seeded Cranley-Patterson rotation.
pub(crate) struct StartSampler {
    shifts: Vec<f64>,
}

impl StartSampler {
    pub fn new(dims: usize, seed: u64) -> Self {
        assert!(dims <= PRIMES.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            shifts: (0..dims).map(|_| rng.random::<f64>()).collect(),
        }
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        self.shifts
            .iter()
            .zip(PRIMES)
            .map(|(shift, base)| (radical_inverse(index + 1, base) + shift).fract())
            .collect()
    }
}

/// Runs the local solver from every start and keeps the lowest objective;
/// ties go to the lowest start index.
pub(crate) fn best_of<P: LeastSquares>(
    problem: &P,
    starts: &[Vec<f64>],
    config: &FitConfig,
) -> Result<(usize, Outcome), FitError> {
    let outcomes: Vec<Option<Outcome>> = starts
        .par_iter()
        .map(|x0| minimize(problem, x0, config.max_iterations, config.convergence_tol))
        .collect();
    let mut best: Option<(usize, Outcome)> = None;
    for (i, outcome) in outcomes.into_iter().enumerate() {
        let Some(o) = outcome else { continue };
        if !o.cost.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|(_, b)| o.cost < b.cost) {
            best = Some((i, o));
        }
    }
    best.ok_or(FitError::NoFiniteStart)
}
