use rand::Rng;

use crate::data::Dataset;
use crate::latent::AzimuthMapping;

use super::TrainError;

/// One batch of cross-view pairs: same object instance seen from two
/// distinct azimuth bins, with the roll shift `s = bin_j - bin_i (mod N)`.
#[derive(Clone, Debug)]
pub struct PairBatch {
    /// Chip indices of the source views X(theta_i).
    pub source: Vec<usize>,
    /// Chip indices of the target views X(theta_j).
    pub target: Vec<usize>,
    /// Bin-unit shifts, one per pair.
    pub shifts: Vec<i64>,
    /// Object identity `(class_id, instance_id)` per pair.
    pub instances: Vec<(u32, u32)>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }
}

/// Samples cross-view pairs: uniformly over eligible object instances, then
/// two distinct occupied azimuth bins of that instance, then one chip per
/// bin. Instances with fewer than two occupied bins are excluded and
/// counted.
pub struct PairSampler {
    /// Per instance: identity and its occupied bins with chip indices.
    groups: Vec<((u32, u32), Vec<(usize, Vec<usize>)>)>,
    pub excluded_instances: usize,
    bins: usize,
}

impl PairSampler {
    pub fn new(dataset: &Dataset, bins: usize) -> Result<Self, TrainError> {
        let mapping = AzimuthMapping::new(bins);
        let mut groups = Vec::new();
        let mut excluded = 0;
        for (identity, chip_indices) in dataset.instances() {
            let mut by_bin: Vec<Vec<usize>> = vec![Vec::new(); bins];
            for &ci in &chip_indices {
                by_bin[mapping.nearest(dataset.chips[ci].azimuth_deg)].push(ci);
            }
            let occupied: Vec<(usize, Vec<usize>)> = by_bin
                .into_iter()
                .enumerate()
                .filter(|(_, v)| !v.is_empty())
                .collect();
            if occupied.len() >= 2 {
                groups.push((identity, occupied));
            } else {
                excluded += 1;
            }
        }
        if groups.is_empty() {
            return Err(TrainError::NoPairs);
        }
        Ok(PairSampler {
            groups,
            excluded_instances: excluded,
            bins,
        })
    }

    pub fn eligible_instances(&self) -> usize {
        self.groups.len()
    }

    pub fn sample<R: Rng>(&self, batch_size: usize, rng: &mut R) -> PairBatch {
        let mut batch = PairBatch {
            source: Vec::with_capacity(batch_size),
            target: Vec::with_capacity(batch_size),
            shifts: Vec::with_capacity(batch_size),
            instances: Vec::with_capacity(batch_size),
        };
        for _ in 0..batch_size {
            let (identity, occupied) = &self.groups[rng.random_range(0..self.groups.len())];
            let i = rng.random_range(0..occupied.len());
            let j_raw = rng.random_range(0..occupied.len() - 1);
            let j = if j_raw >= i { j_raw + 1 } else { j_raw };
            let (bin_i, chips_i) = &occupied[i];
            let (bin_j, chips_j) = &occupied[j];
            let source = chips_i[rng.random_range(0..chips_i.len())];
            let target = chips_j[rng.random_range(0..chips_j.len())];
            let shift = (*bin_j as i64 - *bin_i as i64).rem_euclid(self.bins as i64);
            batch.source.push(source);
            batch.target.push(target);
            batch.shifts.push(shift);
            batch.instances.push(*identity);
        }
        batch
    }
}
