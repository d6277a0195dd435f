use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::latent::LatentCode;
use crate::network::EncoderWeights;
use crate::scalar::{as_f64, Scalar};

use super::{featurize, PairSampler, TrainError};

const STREAM_CONSISTENCY: u64 = 7 << 32;

/// How well rolling approximates the encoder on cross-view pairs.
///
/// `rolled` aligns `Roll(Enc(X_i), j - i)` with `Enc(X_j)`; `unrolled` is
/// the same cosine without rolling. `random_roll` replaces the true shift
/// with a uniformly drawn wrong nonzero shift, which is the exchangeable
/// control: for an encoder with no roll structure the true shift has no
/// advantage over a wrong one, so `delta_vs_random` centers on zero, while
/// `delta = rolled - unrolled` is biased negative even for a random encoder
/// (any roll breaks the per-dimension alignment two correlated views share
/// under a fixed projection).
#[derive(Clone, Copy, Debug)]
pub struct ConsistencyReport {
    pub rolled_mean_cosine: f64,
    pub unrolled_mean_cosine: f64,
    /// `rolled - unrolled`.
    pub delta: f64,
    pub random_roll_mean_cosine: f64,
    /// `rolled - random_roll`.
    pub delta_vs_random: f64,
    pub pairs: usize,
}

/// Cosine similarity. Bitwise-identical inputs score exactly 1.
pub fn cosine<F: Scalar>(a: &[F], b: &[F]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a == b {
        return 1.0;
    }
    let mut dot = F::zero();
    let mut na = F::zero();
    let mut nb = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = as_f64(na).sqrt() * as_f64(nb).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        as_f64(dot) / denom
    }
}

/// Samples cross-view pairs and measures rolled, unrolled, and
/// wrong-shift-control latent alignment over posterior means.
pub fn latent_consistency<F: Scalar>(
    enc: &EncoderWeights<F>,
    dataset: &Dataset,
    pairs: usize,
    seed: u64,
) -> Result<ConsistencyReport, TrainError> {
    let spec = enc.spec;
    let features = featurize(enc, dataset)?;
    let sampler = PairSampler::new(dataset, spec.bins)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_CONSISTENCY);
    let batch = sampler.sample(pairs, &mut rng);

    let bins = spec.bins as i64;
    let mut rolled_sum = 0.0;
    let mut unrolled_sum = 0.0;
    let mut random_sum = 0.0;
    for p in 0..batch.len() {
        let source = LatentCode::new(
            spec.subvectors,
            spec.bins,
            features[batch.source[p]].clone(),
        )
        .expect("feature extent");
        let target = &features[batch.target[p]];
        let shift = batch.shifts[p];

        rolled_sum += cosine(source.roll_integer(shift).values(), target);
        unrolled_sum += cosine(source.values(), target);

        // wrong nonzero shift, distinct from the true one when N > 2
        let wrong = if bins > 2 {
            let raw = rng.random_range(1..bins - 1);
            if raw >= shift {
                raw + 1
            } else {
                raw
            }
        } else {
            shift
        };
        random_sum += cosine(source.roll_integer(wrong).values(), target);
    }
    let n = batch.len() as f64;
    let rolled_mean_cosine = rolled_sum / n;
    let unrolled_mean_cosine = unrolled_sum / n;
    let random_roll_mean_cosine = random_sum / n;
    Ok(ConsistencyReport {
        rolled_mean_cosine,
        unrolled_mean_cosine,
        delta: rolled_mean_cosine - unrolled_mean_cosine,
        random_roll_mean_cosine,
        delta_vs_random: rolled_mean_cosine - random_roll_mean_cosine,
        pairs: batch.len(),
    })
}
