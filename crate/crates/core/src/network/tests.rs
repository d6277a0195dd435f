use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

use super::*;
use crate::autodiff::grad_check;
use crate::latent::LatentCode;

fn tiny_spec() -> NetworkSpec {
    NetworkSpec {
        subvectors: 2,
        bins: 4,
        c1: 2,
        c2: 3,
        c3: 4,
        decoder_hidden: 8,
        classifier_hidden: 6,
        classes: 5,
    }
}

fn chip_batch(batch: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..batch * CHIP_SIZE * CHIP_SIZE)
        .map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0))
        .collect();
    Tensor::from_vec(vec![batch, 1, CHIP_SIZE, CHIP_SIZE], data).unwrap()
}

#[test]
fn encode_shape_contract_and_determinism() {
    let spec = NetworkSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let enc = EncoderWeights::<f64>::init(spec, &mut rng);
    let chips = chip_batch(2, 9);
    let p = encode(&enc, &chips).unwrap();
    assert_eq!(p.mean.shape(), &[2, 288]);
    assert_eq!(p.logvar.shape(), &[2, 288]);

    let p2 = encode(&enc, &chips).unwrap();
    assert!(p.mean.value_eq(&p2.mean) && p.logvar.value_eq(&p2.logvar));

    // identical chips in one batch produce identical posterior rows
    let one = chip_batch(1, 9);
    let mut twice = one.data().to_vec();
    twice.extend_from_slice(one.data());
    let dup = Tensor::from_vec(vec![2, 1, CHIP_SIZE, CHIP_SIZE], twice).unwrap();
    let pd = encode(&enc, &dup).unwrap();
    assert_eq!(pd.mean_row(0), pd.mean_row(1));
}

#[test]
fn encode_rejects_wrong_chip_size() {
    let spec = tiny_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let enc = EncoderWeights::<f64>::init(spec, &mut rng);
    let bad = Tensor::zeros(vec![1, 1, 32, 32]);
    assert!(matches!(
        encode(&enc, &bad),
        Err(NetworkError::ChipShape { .. })
    ));
}

#[test]
fn decode_shape_and_open_interval_range() {
    let spec = tiny_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dec = DecoderWeights::<f64>::init(spec, &mut rng);
    let z = LatentCode::new(2, 4, vec![0.3; 8]).unwrap();
    let out = decode(&dec, &z).unwrap();
    assert_eq!(out.shape(), &[1, 1, 64, 64]);
    assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));

    let wrong = Tensor::zeros(vec![1, 9]);
    assert!(matches!(
        decode_batch(&dec, &wrong),
        Err(NetworkError::LatentExtent { expected: 8, got: 9 })
    ));
}

#[test]
fn classifier_logits_and_zero_weight_ties() {
    let spec = tiny_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cls = ClassifierWeights::<f64>::init(spec, &mut rng);
    let z = LatentCode::new(2, 4, (0..8).map(|i| i as f64 * 0.1).collect()).unwrap();
    let logits = classify(&cls, &z).unwrap();
    assert_eq!(logits.len(), 5);

    let probs = softmax(&logits);
    let total: f64 = probs.iter().sum();
    assert!((total - 1.0).abs() < 1e-12);

    // roll by zero propagates bitwise
    let rolled = classify(&cls, &z.roll_integer(0)).unwrap();
    assert_eq!(logits, rolled);

    // zero weights: uniform logits, argmax tie broken toward lowest index
    for p in cls.params_mut() {
        p.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let logits = classify(&cls, &z).unwrap();
    assert!(logits.iter().all(|&v| v == 0.0));
    assert_eq!(argmax(&logits), 0);
}

#[test]
fn baseline_contract() {
    let spec = tiny_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = BaselineCnnWeights::<f64>::init(spec, &mut rng);
    let chips = chip_batch(3, 6);
    let logits = baseline_forward(&net, &chips).unwrap();
    assert_eq!(logits.shape(), &[3, 5]);
    let again = baseline_forward(&net, &chips).unwrap();
    assert!(logits.value_eq(&again));

    let bad = Tensor::zeros(vec![1, 1, 16, 16]);
    assert!(baseline_forward(&net, &bad).is_err());
}

#[test]
fn init_is_seeded_fan_in_bounded_with_zero_biases() {
    let spec = tiny_spec();
    let a = EncoderWeights::<f64>::init(spec, &mut ChaCha8Rng::seed_from_u64(7));
    let b = EncoderWeights::<f64>::init(spec, &mut ChaCha8Rng::seed_from_u64(7));
    for (ta, tb) in a.params().iter().zip(b.params().iter()) {
        assert!(ta.value_eq(tb));
    }
    let c = EncoderWeights::<f64>::init(spec, &mut ChaCha8Rng::seed_from_u64(8));
    assert!(!a.fc_mean.weight.value_eq(&c.fc_mean.weight));

    assert!(a.conv1.bias.data().iter().all(|&v| v == 0.0));
    assert!(a.fc_mean.bias.data().iter().all(|&v| v == 0.0));

    let bound1 = (6.0 / (1.0 * KERNEL as f64 * KERNEL as f64)).sqrt();
    assert!(a.conv1.kernel.data().iter().all(|&v| v.abs() <= bound1));
    let bound_fc = (6.0 / spec.trunk_dim() as f64).sqrt();
    assert!(a.fc_mean.weight.data().iter().all(|&v| v.abs() <= bound_fc));
}

#[test]
fn reparameterize_limits_and_monte_carlo_mean() {
    // vanishing noise: logvar -> -inf limit collapses to the mean
    let mean = Tensor::<f64>::from_vec(vec![1, 4], vec![0.3, -0.7, 1.1, 0.0]).unwrap();
    let logvar = Tensor::from_vec(vec![1, 4], vec![-60.0; 4]).unwrap();
    let p = Posterior { mean: mean.clone(), logvar };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z = &reparameterize(&p, 2, 2, &mut rng).unwrap()[0];
    for (&zv, &mv) in z.values().iter().zip(mean.data()) {
        assert!((zv - mv).abs() < 1e-12);
    }

    // fixed seed reproduces the draw
    let mut r1 = ChaCha8Rng::seed_from_u64(12);
    let mut r2 = ChaCha8Rng::seed_from_u64(12);
    let lv = Tensor::from_vec(vec![1, 4], vec![0.4; 4]).unwrap();
    let p = Posterior { mean: mean.clone(), logvar: lv };
    let a = reparameterize(&p, 2, 2, &mut r1).unwrap();
    let b = reparameterize(&p, 2, 2, &mut r2).unwrap();
    assert_eq!(a[0].values(), b[0].values());

    // Monte-Carlo: sample mean of 1e5 draws within 5*sigma/sqrt(1e5)
    let draws = 100_000;
    let mu = 0.25;
    let logvar_val = 0.2f64;
    let sigma = (0.5 * logvar_val).exp();
    let p = Posterior {
        mean: Tensor::from_vec(vec![draws, 1], vec![mu; draws]).unwrap(),
        logvar: Tensor::from_vec(vec![draws, 1], vec![logvar_val; draws]).unwrap(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let zs = reparameterize(&p, 1, 2, &mut rng);
    // dim 1 cannot form a latent (N >= 2), so sample through the batch axis instead
    assert!(zs.is_err());
    let p = Posterior {
        mean: Tensor::from_vec(vec![draws / 2, 2], vec![mu; draws]).unwrap(),
        logvar: Tensor::from_vec(vec![draws / 2, 2], vec![logvar_val; draws]).unwrap(),
    };
    let zs = reparameterize(&p, 1, 2, &mut rng).unwrap();
    let total: f64 = zs.iter().flat_map(|z| z.values().iter().copied()).sum();
    let sample_mean = total / draws as f64;
    let tol = 5.0 * sigma / (draws as f64).sqrt();
    assert!(
        (sample_mean - mu).abs() < tol,
        "sample mean {} outside {} +/- {}",
        sample_mean,
        mu,
        tol
    );
}

#[test]
fn cross_view_training_graph_passes_grad_check() {
    // encode -> reparameterize -> roll -> decode -> mse, differentiated wrt
    // an encoder head bias and a decoder bias
    let spec = tiny_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let enc = EncoderWeights::<f64>::init(spec, &mut rng);
    let dec = DecoderWeights::<f64>::init(spec, &mut rng);
    let chips = chip_batch(1, 21);
    let target = chip_batch(1, 22);
    let eps: Vec<f64> = (0..spec.latent_dim())
        .map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0))
        .collect();

    let build = |point_role: &'static str| {
        let enc = enc.clone();
        let dec = dec.clone();
        let chips = chips.clone();
        let target = target.clone();
        let eps = eps.clone();
        move |g: &mut Graph<f64>, point: crate::autodiff::Var| {
            let mut ev = enc.insert(g, false);
            let mut dv = dec.insert(g, false);
            match point_role {
                "enc_logvar_bias" => ev.fc_logvar_b = point,
                "dec_fc1_bias" => dv.fc1_b = point,
                other => unreachable!("unknown role {other}"),
            }
            let x = g.constant_from(&chips);
            let (mean, logvar) = encoder_forward(g, &ev, &spec, x).unwrap();
            let half_lv = g.scale(logvar, 0.5);
            let sd = g.exp(half_lv);
            let eps_t = g.constant(Tensor::from_vec(vec![1, eps.len()], eps.clone()).unwrap());
            let noise = g.mul(sd, eps_t)?;
            let z = g.add(mean, noise)?;
            let rolled = g.roll_blocks(z, spec.bins, &[3])?;
            let recon = decoder_forward(g, &dv, &spec, rolled).unwrap();
            let tv = g.constant_from(&target);
            let diff = g.sub(recon, tv)?;
            let sq = g.mul(diff, diff)?;
            Ok(g.mean(sq))
        }
    };

    let report = grad_check(
        build("enc_logvar_bias"),
        &enc.fc_logvar.bias,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.pass, "encoder head grad err {}", report.max_rel_error);

    let report = grad_check(build("dec_fc1_bias"), &dec.fc1.bias, 1e-5, 1e-4).unwrap();
    assert!(report.pass, "decoder grad err {}", report.max_rel_error);
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let dir = tempdir().unwrap();
    let spec = tiny_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let enc = EncoderWeights::<f64>::init(spec, &mut rng);
    let dec = DecoderWeights::<f64>::init(spec, &mut rng);
    let cls = ClassifierWeights::<f64>::init(spec, &mut rng);
    let base = BaselineCnnWeights::<f64>::init(spec, &mut rng);

    let model_path = dir.path().join("model.rlsw");
    save_rls_model(&model_path, &enc, &dec).unwrap();
    let (enc2, dec2) = load_rls_model::<f64>(&model_path).unwrap();
    assert_eq!(enc2.spec, spec);
    for (a, b) in enc.params().iter().zip(enc2.params().iter()) {
        assert!(a.value_eq(b));
    }
    for (a, b) in dec.params().iter().zip(dec2.params().iter()) {
        assert!(a.value_eq(b));
    }

    let cls_path = dir.path().join("cls.rlsw");
    save_classifier(&cls_path, &cls).unwrap();
    let cls2 = load_classifier::<f64>(&cls_path).unwrap();
    for (a, b) in cls.params().iter().zip(cls2.params().iter()) {
        assert!(a.value_eq(b));
    }

    let base_path = dir.path().join("base.rlsw");
    save_baseline(&base_path, &base).unwrap();
    let base2 = load_baseline::<f64>(&base_path).unwrap();
    for (a, b) in base.params().iter().zip(base2.params().iter()) {
        assert!(a.value_eq(b));
    }

    assert_eq!(read_header(&model_path).unwrap(), spec);

    // wrong-kind checkpoint: classifier file has no encoder sections
    assert!(matches!(
        load_rls_model::<f64>(&cls_path),
        Err(CheckpointError::MissingSection(_))
    ));

    // corrupted magic
    let bad_magic = dir.path().join("bad.rlsw");
    let mut bytes = std::fs::read(&model_path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&bad_magic, &bytes).unwrap();
    assert!(matches!(
        load_rls_model::<f64>(&bad_magic),
        Err(CheckpointError::BadMagic)
    ));

    // unsupported version
    let bad_ver = dir.path().join("ver.rlsw");
    let mut bytes = std::fs::read(&model_path).unwrap();
    bytes[4] = 9;
    std::fs::write(&bad_ver, &bytes).unwrap();
    assert!(matches!(
        load_rls_model::<f64>(&bad_ver),
        Err(CheckpointError::UnsupportedVersion(9))
    ));

    // truncated payload
    let trunc = dir.path().join("trunc.rlsw");
    let bytes = std::fs::read(&model_path).unwrap();
    std::fs::write(&trunc, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(
        load_rls_model::<f64>(&trunc),
        Err(CheckpointError::Truncated)
    ));
}
