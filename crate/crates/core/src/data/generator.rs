use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::network::CHIP_SIZE;

use super::{
    Chip, DataError, Dataset, DatasetManifest, GeneratorConfig, Scatterer,
    ScattererModel,
};

/// Meters per pixel; the 64-pixel chip spans 16 m.
const PIXEL_M: f64 = 0.25;
/// Point-spread standard deviation in meters.
const PSF_SIGMA_M: f64 = 0.45;
/// Residual visibility outside a scatterer's window.
const VIS_FLOOR: f64 = 0.03;
/// Scatterer position jitter between instances of one class, meters.
const JITTER_POS_M: f64 = 0.12;
/// Relative amplitude jitter between instances.
const JITTER_AMP: f64 = 0.08;
/// Global sub-pixel translation jitter per instance, pixels.
const JITTER_SHIFT_PX: f64 = 0.75;

// Stream namespaces for counter-derived ChaCha streams.
const STREAM_JITTER: u64 = 1 << 32;
const STREAM_CHIP: u64 = 2 << 32;

/// Deterministic per-class templates. Classes differ in scatterer count,
/// layout, footprint, and visibility windows; amplitude statistics are
/// shared so classes differ in structure rather than brightness.
pub fn make_class_templates<R: Rng>(n_classes: usize, rng: &mut R) -> Vec<ScattererModel> {
    (0..n_classes)
        .map(|class| {
            let footprint_m = rng.random_range(3.2..5.4);
            let n_scat = rng.random_range(4..=8usize);
            let aspect = rng.random_range(0.35..1.0);
            let orient = rng.random_range(0.0..std::f64::consts::TAU);
            let (sin_o, cos_o) = orient.sin_cos();
            let scatterers = (0..n_scat)
                .map(|_| {
                    // uniform in an oriented ellipse inside the footprint
                    let r = footprint_m * rng.random_range(0.0..1.0f64).sqrt();
                    let ang = rng.random_range(0.0..std::f64::consts::TAU);
                    let (ex, ey) = (r * ang.cos(), r * ang.sin() * aspect);
                    let x_m = ex * cos_o - ey * sin_o;
                    let y_m = ex * sin_o + ey * cos_o;
                    Scatterer {
                        x_m,
                        y_m,
                        amplitude: rng.random_range(0.6..1.6),
                        vis_center_deg: rng.random_range(0.0..360.0),
                        vis_width_deg: rng.random_range(50.0..130.0),
                    }
                })
                .collect();
            ScattererModel {
                class_id: class as u32,
                scatterers,
                footprint_m,
            }
        })
        .collect()
}

/// Per-instance perturbation of a class template, shared by every chip of
/// that instance.
#[derive(Clone, Debug)]
pub struct InstanceJitter {
    dx_m: Vec<f64>,
    dy_m: Vec<f64>,
    amp_scale: Vec<f64>,
    shift_x_px: f64,
    shift_y_px: f64,
}

impl InstanceJitter {
    pub fn none(n_scatterers: usize) -> Self {
        InstanceJitter {
            dx_m: vec![0.0; n_scatterers],
            dy_m: vec![0.0; n_scatterers],
            amp_scale: vec![1.0; n_scatterers],
            shift_x_px: 0.0,
            shift_y_px: 0.0,
        }
    }

    pub fn sample<R: Rng>(n_scatterers: usize, rng: &mut R) -> Self {
        let mut normal = || {
            // Box-Muller from two uniform draws
            let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        };
        let dx_m = (0..n_scatterers).map(|_| normal() * JITTER_POS_M).collect();
        let dy_m = (0..n_scatterers).map(|_| normal() * JITTER_POS_M).collect();
        let amp_scale = (0..n_scatterers)
            .map(|_| (1.0 + normal() * JITTER_AMP).max(0.2))
            .collect();
        InstanceJitter {
            dx_m,
            dy_m,
            amp_scale,
            shift_x_px: normal() * JITTER_SHIFT_PX,
            shift_y_px: normal() * JITTER_SHIFT_PX,
        }
    }
}

fn circular_distance_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Renders one chip of `model` seen from azimuth `theta_deg`.
///
/// The rng supplies only the speckle draws (one per pixel, row-major), so a
/// fixed rng makes the chip a deterministic function of (model, jitter,
/// theta).
pub fn render_chip<R: Rng>(
    model: &ScattererModel,
    jitter: &InstanceJitter,
    instance_id: u32,
    theta_deg: f64,
    rng: &mut R,
) -> Chip {
    let theta = theta_deg.to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    let half = (CHIP_SIZE as f64 - 1.0) / 2.0;

    // rotate jittered scatterers into image coordinates and apply the
    // visibility window for this viewing direction
    let placed: Vec<(f64, f64, f64)> = model
        .scatterers
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let x = s.x_m + jitter.dx_m[i];
            let y = s.y_m + jitter.dy_m[i];
            let rx = x * cos_t - y * sin_t + jitter.shift_x_px * PIXEL_M;
            let ry = x * sin_t + y * cos_t + jitter.shift_y_px * PIXEL_M;
            let delta = circular_distance_deg(theta_deg, s.vis_center_deg);
            let sigma = s.vis_width_deg / 2.0;
            let gain = VIS_FLOOR + (1.0 - VIS_FLOOR) * (-0.5 * (delta / sigma).powi(2)).exp();
            (rx, ry, s.amplitude * jitter.amp_scale[i] * gain)
        })
        .collect();

    let inv_two_sigma_sq = 1.0 / (2.0 * PSF_SIGMA_M * PSF_SIGMA_M);
    let mut pixels = vec![0.0f64; CHIP_SIZE * CHIP_SIZE];
    for row in 0..CHIP_SIZE {
        let y = (row as f64 - half) * PIXEL_M;
        for col in 0..CHIP_SIZE {
            let x = (col as f64 - half) * PIXEL_M;
            let mut intensity = 0.0;
            for &(sx, sy, amp) in &placed {
                let d2 = (x - sx) * (x - sx) + (y - sy) * (y - sy);
                intensity += amp * (-d2 * inv_two_sigma_sq).exp();
            }
            // unit-mean exponential speckle, always one draw per pixel
            let speckle: f64 = rng.sample(Exp1);
            pixels[row * CHIP_SIZE + col] = (1.0 + intensity * speckle).ln();
        }
    }

    let max = pixels.iter().copied().fold(0.0f64, f64::max);
    if max > 0.0 {
        pixels.iter_mut().for_each(|p| *p /= max);
    } else {
        pixels.iter_mut().for_each(|p| *p = 0.0);
    }

    Chip {
        pixels,
        class_id: model.class_id,
        instance_id,
        azimuth_deg: theta_deg.rem_euclid(360.0),
    }
}

fn jitter_rng(seed: u64, class_id: u32, instance: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_JITTER | (class_id as u64) << 12 | instance as u64);
    rng
}

fn chip_rng(seed: u64, chip_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_CHIP | chip_index);
    rng
}

/// Generates `per_class` chips for every template, spread evenly over
/// `instances_per_class` jittered instances, with azimuths drawn uniformly
/// over the configured interval. Fully reproducible from the seed.
pub fn generate_dataset(
    templates: &[ScattererModel],
    cfg: &GeneratorConfig,
) -> Result<(Dataset, DatasetManifest), DataError> {
    if cfg.interval.is_empty() {
        return Err(DataError::EmptyInterval);
    }
    if cfg.per_class == 0 || cfg.instances_per_class == 0 {
        return Err(DataError::EmptyDataset);
    }
    if let Some(m) = templates.iter().find(|m| m.scatterers.len() < 3) {
        return Err(DataError::TooFewScatterers(m.scatterers.len()));
    }

    let mut chips = Vec::with_capacity(templates.len() * cfg.per_class);
    let mut chip_index = 0u64;
    for model in templates {
        let jitters: Vec<InstanceJitter> = (0..cfg.instances_per_class)
            .map(|inst| {
                let mut rng = jitter_rng(cfg.seed, model.class_id, inst as u32);
                InstanceJitter::sample(model.scatterers.len(), &mut rng)
            })
            .collect();
        for i in 0..cfg.per_class {
            let instance = i % cfg.instances_per_class;
            let mut rng = chip_rng(cfg.seed, chip_index);
            let theta =
                (cfg.interval.start_deg + rng.random_range(0.0..1.0) * cfg.interval.width_deg)
                    .rem_euclid(360.0);
            chips.push(render_chip(
                model,
                &jitters[instance],
                instance as u32,
                theta,
                &mut rng,
            ));
            chip_index += 1;
        }
    }

    let ds = Dataset { chips };
    let manifest = DatasetManifest {
        role: cfg.role,
        seed: cfg.seed,
        interval: cfg.interval,
        instances_per_class: cfg.instances_per_class,
        class_counts: ds.class_counts(),
    };
    Ok((ds, manifest))
}

/// Convenience wrapper for tests and demos: render at a fixed azimuth with a
/// chip-index-derived rng.
pub fn render_at(
    model: &ScattererModel,
    jitter: &InstanceJitter,
    theta_deg: f64,
    seed: u64,
    chip_index: u64,
) -> Chip {
    let mut rng = chip_rng(seed, chip_index);
    render_chip(model, jitter, 0, theta_deg, &mut rng)
}
