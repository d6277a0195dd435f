//! Synthetic stand-in for an azimuth-swept radar chip dataset.
//!
//! Each target class is a template of point scatterers on a footprint. A
//! chip at azimuth `theta` rotates the scatterer layout by `theta`,
//! attenuates every scatterer through its azimuthal visibility window (the
//! anisotropic-scattering surrogate that makes appearance genuinely
//! view-dependent), splats Gaussian point-spread blobs onto a 64x64 grid,
//! multiplies unit-mean exponential speckle in, compresses dynamic range
//! with `log(1 + x)`, and normalizes to `[0, 1]`.
//!
//! Generation is deterministic: the template seed, the dataset seed, and the
//! chip index fully determine every pixel. Each chip and each object
//! instance draws from its own counter-derived ChaCha stream, so chips are
//! independent of generation order.

mod chipfile;
mod generator;

pub use chipfile::{read_chips, read_manifest, write_chips, write_manifest, ChipFileError};
pub use generator::{generate_dataset, make_class_templates, render_at, render_chip, InstanceJitter};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::network::CHIP_SIZE;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("azimuth interval is empty")]
    EmptyInterval,
    #[error("per_class and instances_per_class must be positive")]
    EmptyDataset,
    #[error("{0} scatterers is below the minimum of 3")]
    TooFewScatterers(usize),
}

/// One point scatterer of a target template. Positions are meters in body
/// coordinates; the visibility window is degrees of viewing azimuth.
#[derive(Clone, Debug)]
pub struct Scatterer {
    pub x_m: f64,
    pub y_m: f64,
    pub amplitude: f64,
    pub vis_center_deg: f64,
    pub vis_width_deg: f64,
}

/// Template of one target class.
#[derive(Clone, Debug)]
pub struct ScattererModel {
    pub class_id: u32,
    pub scatterers: Vec<Scatterer>,
    /// Footprint radius in meters; scatterers lie within it.
    pub footprint_m: f64,
}

/// One 64x64 chip with its label and viewing direction.
#[derive(Clone, Debug, PartialEq)]
pub struct Chip {
    /// Row-major pixels in `[0, 1]`.
    pub pixels: Vec<f64>,
    pub class_id: u32,
    pub instance_id: u32,
    /// Azimuth in degrees, `[0, 360)`.
    pub azimuth_deg: f64,
}

impl Chip {
    pub fn assert_valid(&self) {
        assert_eq!(self.pixels.len(), CHIP_SIZE * CHIP_SIZE);
        assert!(self
            .pixels
            .iter()
            .all(|&p| p.is_finite() && (0.0..=1.0).contains(&p)));
        assert!((0.0..360.0).contains(&self.azimuth_deg));
    }
}

/// Which protocol phase a dataset belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetRole {
    RlsTrain,
    ClsTrain,
    ClsTest,
}

impl DatasetRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetRole::RlsTrain => "rls-train",
            DatasetRole::ClsTrain => "cls-train",
            DatasetRole::ClsTest => "cls-test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rls-train" => Some(DatasetRole::RlsTrain),
            "cls-train" => Some(DatasetRole::ClsTrain),
            "cls-test" => Some(DatasetRole::ClsTest),
            _ => None,
        }
    }
}

/// Circular azimuth interval: a counterclockwise sweep of `width_deg`
/// degrees starting at `start_deg`. `width_deg = 360` covers everything.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AzimuthInterval {
    pub start_deg: f64,
    pub width_deg: f64,
}

impl AzimuthInterval {
    pub fn full() -> Self {
        AzimuthInterval {
            start_deg: 0.0,
            width_deg: 360.0,
        }
    }

    /// Builds the sweep from `min` to `max` going counterclockwise, wrapping
    /// through zero when `min > max` (e.g. -45..45 becomes 315 + 90 wide).
    pub fn from_min_max(min_deg: f64, max_deg: f64) -> Self {
        let start = min_deg.rem_euclid(360.0);
        let end = max_deg.rem_euclid(360.0);
        let width = if (end - start).abs() < 1e-12 && (max_deg - min_deg).abs() >= 360.0 {
            360.0
        } else {
            (end - start).rem_euclid(360.0)
        };
        AzimuthInterval {
            start_deg: start,
            width_deg: width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.width_deg <= 0.0
    }

    pub fn contains(&self, theta_deg: f64) -> bool {
        let offset = (theta_deg - self.start_deg).rem_euclid(360.0);
        offset < self.width_deg || self.width_deg >= 360.0
    }

    pub fn intersects(&self, other: &AzimuthInterval) -> bool {
        if self.is_empty() || other.is_empty() {
            return false;
        }
        // every maximal overlap arc starts at the start of one of the two
        self.contains(other.start_deg) || other.contains(self.start_deg)
    }
}

/// Everything `generate_dataset` needs besides the templates.
#[derive(Clone, Debug)]
pub struct GeneratorConfig {
    pub role: DatasetRole,
    pub per_class: usize,
    pub instances_per_class: usize,
    pub interval: AzimuthInterval,
    pub seed: u64,
}

/// Description of one generated dataset, stored alongside the binary chips
/// as a human-readable key-value file.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub role: DatasetRole,
    pub seed: u64,
    pub interval: AzimuthInterval,
    pub instances_per_class: usize,
    pub class_counts: BTreeMap<u32, usize>,
}

/// In-memory dataset: a flat list of chips.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub chips: Vec<Chip>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.chips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chips.is_empty()
    }

    /// Distinct class ids in ascending order.
    pub fn class_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.chips.iter().map(|c| c.class_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn class_counts(&self) -> BTreeMap<u32, usize> {
        let mut counts = BTreeMap::new();
        for c in &self.chips {
            *counts.entry(c.class_id).or_insert(0) += 1;
        }
        counts
    }

    /// Chip indices grouped by `(class_id, instance_id)` in ascending order.
    pub fn instances(&self) -> BTreeMap<(u32, u32), Vec<usize>> {
        let mut groups: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
        for (i, c) in self.chips.iter().enumerate() {
            groups.entry((c.class_id, c.instance_id)).or_default().push(i);
        }
        groups
    }
}

#[cfg(test)]
mod tests;
