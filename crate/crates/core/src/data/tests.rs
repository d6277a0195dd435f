use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

use super::*;

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn templates_are_seeded_and_distinct() {
    let a = make_class_templates(10, &mut ChaCha8Rng::seed_from_u64(5));
    let b = make_class_templates(10, &mut ChaCha8Rng::seed_from_u64(5));
    assert_eq!(a.len(), 10);
    let ids: Vec<u32> = a.iter().map(|m| m.class_id).collect();
    assert_eq!(ids, (0..10).collect::<Vec<u32>>());
    for (ma, mb) in a.iter().zip(&b) {
        assert_eq!(ma.scatterers.len(), mb.scatterers.len());
        for (sa, sb) in ma.scatterers.iter().zip(&mb.scatterers) {
            assert_eq!(sa.x_m.to_bits(), sb.x_m.to_bits());
            assert_eq!(sa.amplitude.to_bits(), sb.amplitude.to_bits());
        }
    }
    for m in &a {
        assert!(m.scatterers.len() >= 3);
        assert!(m.scatterers.iter().all(|s| s.amplitude > 0.0));
        assert!(m
            .scatterers
            .iter()
            .all(|s| (s.x_m * s.x_m + s.y_m * s.y_m).sqrt() <= m.footprint_m + 1e-9));
    }
}

#[test]
fn inter_class_distance_exceeds_intra_class() {
    let templates = make_class_templates(5, &mut ChaCha8Rng::seed_from_u64(7));
    let instances_per_class = 20;
    // render every instance at theta = 0
    let mut chips: Vec<Vec<Chip>> = Vec::new();
    for model in &templates {
        let mut class_chips = Vec::new();
        for inst in 0..instances_per_class {
            let mut jr = ChaCha8Rng::seed_from_u64(900 + inst as u64);
            let jitter = InstanceJitter::sample(model.scatterers.len(), &mut jr);
            class_chips.push(render_at(
                model,
                &jitter,
                0.0,
                31,
                (model.class_id as u64) * 1000 + inst as u64,
            ));
        }
        chips.push(class_chips);
    }

    let mut intra = Vec::new();
    let mut inter = Vec::new();
    for c in 0..chips.len() {
        for i in 0..instances_per_class {
            for j in (i + 1)..instances_per_class {
                intra.push(l2(&chips[c][i].pixels, &chips[c][j].pixels));
            }
            for c2 in (c + 1)..chips.len() {
                for j in 0..instances_per_class {
                    inter.push(l2(&chips[c][i].pixels, &chips[c2][j].pixels));
                }
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(
        mean(&inter) > mean(&intra),
        "inter {} <= intra {}",
        mean(&inter),
        mean(&intra)
    );
}

#[test]
fn render_is_deterministic_and_periodic() {
    let templates = make_class_templates(2, &mut ChaCha8Rng::seed_from_u64(3));
    let jitter = InstanceJitter::none(templates[0].scatterers.len());

    let a = render_at(&templates[0], &jitter, 123.4, 42, 0);
    let b = render_at(&templates[0], &jitter, 123.4, 42, 0);
    assert_eq!(a, b);

    // same rng stream, azimuth wrapped by a hair below a full turn
    let c = render_at(&templates[0], &jitter, 0.0, 42, 7);
    let d = render_at(&templates[0], &jitter, 360.0 - 1e-9, 42, 7);
    for (pc, pd) in c.pixels.iter().zip(&d.pixels) {
        assert!((pc - pd).abs() < 1e-9);
    }
}

#[test]
fn zero_amplitude_model_renders_black() {
    let model = ScattererModel {
        class_id: 0,
        scatterers: (0..3)
            .map(|i| Scatterer {
                x_m: i as f64,
                y_m: 0.0,
                amplitude: 0.0,
                vis_center_deg: 0.0,
                vis_width_deg: 90.0,
            })
            .collect(),
        footprint_m: 4.0,
    };
    let chip = render_at(&model, &InstanceJitter::none(3), 12.0, 1, 0);
    assert!(chip.pixels.iter().all(|&p| p == 0.0));
}

#[test]
fn generated_chips_satisfy_invariants_across_configs() {
    let templates = make_class_templates(3, &mut ChaCha8Rng::seed_from_u64(9));
    for (per_class, instances, interval) in [
        (4, 1, AzimuthInterval::full()),
        (7, 3, AzimuthInterval::from_min_max(-45.0, 45.0)),
        (5, 2, AzimuthInterval::from_min_max(135.0, 225.0)),
    ] {
        let cfg = GeneratorConfig {
            role: DatasetRole::RlsTrain,
            per_class,
            instances_per_class: instances,
            interval,
            seed: 17,
        };
        let (ds, manifest) = generate_dataset(&templates, &cfg).unwrap();
        assert_eq!(ds.len(), per_class * templates.len());
        for chip in &ds.chips {
            chip.assert_valid();
            assert!(interval.contains(chip.azimuth_deg));
            assert!((chip.instance_id as usize) < instances);
        }
        assert_eq!(manifest.class_counts.len(), templates.len());
        assert!(manifest.class_counts.values().all(|&c| c == per_class));
    }
}

#[test]
fn generation_is_reproducible() {
    let templates = make_class_templates(2, &mut ChaCha8Rng::seed_from_u64(9));
    let cfg = GeneratorConfig {
        role: DatasetRole::ClsTrain,
        per_class: 6,
        instances_per_class: 2,
        interval: AzimuthInterval::from_min_max(-45.0, 45.0),
        seed: 123,
    };
    let (a, _) = generate_dataset(&templates, &cfg).unwrap();
    let (b, _) = generate_dataset(&templates, &cfg).unwrap();
    for (ca, cb) in a.chips.iter().zip(&b.chips) {
        assert_eq!(ca, cb);
    }
}

#[test]
fn generator_rejects_bad_configs() {
    let templates = make_class_templates(1, &mut ChaCha8Rng::seed_from_u64(2));
    let base = GeneratorConfig {
        role: DatasetRole::RlsTrain,
        per_class: 2,
        instances_per_class: 1,
        interval: AzimuthInterval::full(),
        seed: 0,
    };

    let mut cfg = base.clone();
    cfg.interval = AzimuthInterval {
        start_deg: 10.0,
        width_deg: 0.0,
    };
    assert!(matches!(
        generate_dataset(&templates, &cfg),
        Err(DataError::EmptyInterval)
    ));

    let mut cfg = base.clone();
    cfg.per_class = 0;
    assert!(matches!(
        generate_dataset(&templates, &cfg),
        Err(DataError::EmptyDataset)
    ));

    let thin = vec![ScattererModel {
        class_id: 0,
        scatterers: vec![
            Scatterer {
                x_m: 0.0,
                y_m: 0.0,
                amplitude: 1.0,
                vis_center_deg: 0.0,
                vis_width_deg: 90.0,
            };
            2
        ],
        footprint_m: 3.0,
    }];
    assert!(matches!(
        generate_dataset(&thin, &base),
        Err(DataError::TooFewScatterers(2))
    ));
}

#[test]
fn interval_geometry() {
    let front = AzimuthInterval::from_min_max(-45.0, 45.0);
    assert_eq!(front.start_deg, 315.0);
    assert_eq!(front.width_deg, 90.0);
    assert!(front.contains(0.0));
    assert!(front.contains(359.0));
    assert!(front.contains(44.9));
    assert!(!front.contains(90.0));
    assert!(!front.contains(180.0));

    let back = AzimuthInterval::from_min_max(135.0, 225.0);
    assert!(!front.intersects(&back));
    assert!(!back.intersects(&front));

    let wide = AzimuthInterval::from_min_max(-60.0, 140.0);
    assert!(front.intersects(&wide));
    assert!(wide.intersects(&back));

    let full = AzimuthInterval::full();
    assert!(full.contains(0.0) && full.contains(359.999));
    assert!(full.intersects(&front));
}

#[test]
fn chip_file_round_trip_bitwise() {
    let dir = tempdir().unwrap();
    let templates = make_class_templates(2, &mut ChaCha8Rng::seed_from_u64(4));
    let cfg = GeneratorConfig {
        role: DatasetRole::ClsTest,
        per_class: 3,
        instances_per_class: 1,
        interval: AzimuthInterval::from_min_max(135.0, 225.0),
        seed: 5,
    };
    let (ds, manifest) = generate_dataset(&templates, &cfg).unwrap();

    let path = dir.path().join("chips.rlsc");
    write_chips(&path, &ds).unwrap();
    let back = read_chips(&path).unwrap();
    assert_eq!(back.chips.len(), ds.chips.len());
    for (a, b) in ds.chips.iter().zip(&back.chips) {
        assert_eq!(a.class_id, b.class_id);
        assert_eq!(a.instance_id, b.instance_id);
        assert_eq!(a.azimuth_deg.to_bits(), b.azimuth_deg.to_bits());
        for (pa, pb) in a.pixels.iter().zip(&b.pixels) {
            assert_eq!(pa.to_bits(), pb.to_bits());
        }
    }

    let mpath = dir.path().join("chips.manifest");
    write_manifest(&mpath, &manifest).unwrap();
    let m2 = read_manifest(&mpath).unwrap();
    assert_eq!(m2, manifest);
}

#[test]
fn empty_dataset_round_trips() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("empty.rlsc");
    write_chips(&path, &Dataset::default()).unwrap();
    let back = read_chips(&path).unwrap();
    assert!(back.is_empty());
}

#[test]
fn chip_file_error_codes_are_distinct() {
    let dir = tempdir().unwrap();
    let templates = make_class_templates(1, &mut ChaCha8Rng::seed_from_u64(6));
    let cfg = GeneratorConfig {
        role: DatasetRole::RlsTrain,
        per_class: 2,
        instances_per_class: 1,
        interval: AzimuthInterval::full(),
        seed: 6,
    };
    let (ds, _) = generate_dataset(&templates, &cfg).unwrap();
    let path = dir.path().join("chips.rlsc");
    write_chips(&path, &ds).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let trunc = dir.path().join("trunc.rlsc");
    std::fs::write(&trunc, &bytes[..bytes.len() - 100]).unwrap();
    assert!(matches!(read_chips(&trunc), Err(ChipFileError::Truncated)));

    let magic = dir.path().join("magic.rlsc");
    let mut corrupted = bytes.clone();
    corrupted[0] = b'Z';
    std::fs::write(&magic, &corrupted).unwrap();
    assert!(matches!(read_chips(&magic), Err(ChipFileError::BadMagic)));

    let ver = dir.path().join("ver.rlsc");
    let mut corrupted = bytes.clone();
    corrupted[4] = 3;
    std::fs::write(&ver, &corrupted).unwrap();
    assert!(matches!(
        read_chips(&ver),
        Err(ChipFileError::VersionMismatch(3))
    ));
}

#[test]
fn instance_views_differ_less_than_classes() {
    // two instances of one class at the same azimuth differ only through
    // jitter and speckle; on average that is closer than another class
    let templates = make_class_templates(4, &mut ChaCha8Rng::seed_from_u64(13));
    let theta = 42.0;
    let mut per_class: Vec<Vec<Chip>> = Vec::new();
    for model in &templates {
        let chips = (0..8)
            .map(|inst| {
                let mut jr = ChaCha8Rng::seed_from_u64(500 + inst);
                let jitter = InstanceJitter::sample(model.scatterers.len(), &mut jr);
                render_at(model, &jitter, theta, 77, model.class_id as u64 * 100 + inst)
            })
            .collect();
        per_class.push(chips);
    }
    let mut intra = Vec::new();
    let mut inter = Vec::new();
    for c in 0..per_class.len() {
        for i in 0..per_class[c].len() {
            for j in (i + 1)..per_class[c].len() {
                intra.push(l2(&per_class[c][i].pixels, &per_class[c][j].pixels));
            }
            for c2 in (c + 1)..per_class.len() {
                inter.push(l2(&per_class[c][i].pixels, &per_class[c2][0].pixels));
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&inter) > mean(&intra));
}
