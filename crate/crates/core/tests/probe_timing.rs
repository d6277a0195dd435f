// Scratch probe: wall time of one full-scale training step.
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rls_core::data::{
    generate_dataset, make_class_templates, AzimuthInterval, DatasetRole, GeneratorConfig,
};
use rls_core::network::{DecoderWeights, EncoderWeights, NetworkSpec};
use rls_core::train::{rls_train_step, Adam, AdamParams, PairSampler, TrainConfig};

#[test]
fn probe() {
    let spec = NetworkSpec::default();
    let templates = make_class_templates(5, &mut ChaCha8Rng::seed_from_u64(7));
    let gen_start = Instant::now();
    let (dataset, _) = generate_dataset(
        &templates,
        &GeneratorConfig {
            role: DatasetRole::RlsTrain,
            per_class: 96,
            instances_per_class: 3,
            interval: AzimuthInterval::full(),
            seed: 11,
        },
    )
    .unwrap();
    println!("generate 480 chips: {:?}", gen_start.elapsed());

    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 16,
        learning_rate: 1e-3,
        kl_weight: 1.0,
        seed: 1,
        subvectors: 8,
        bins: 36,
        augmentation: false,
    };
    let mut enc = EncoderWeights::<f64>::init(spec, &mut ChaCha8Rng::seed_from_u64(1));
    let mut dec = DecoderWeights::<f64>::init(spec, &mut ChaCha8Rng::seed_from_u64(2));
    let sampler = PairSampler::new(&dataset, 36).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut opt = Adam::new(AdamParams::default());

    // warm-up step then timed steps
    let batch = sampler.sample(16, &mut rng);
    rls_train_step(&mut enc, &mut dec, &dataset, &batch, &mut opt, 1.0, &cfg, &mut rng).unwrap();
    let start = Instant::now();
    let n = 5;
    for _ in 0..n {
        let batch = sampler.sample(16, &mut rng);
        rls_train_step(&mut enc, &mut dec, &dataset, &batch, &mut opt, 1.0, &cfg, &mut rng)
            .unwrap();
    }
    println!("rls step (batch 16): {:?}", start.elapsed() / n);

    // featurize probe
    let start = Instant::now();
    let feats = rls_core::train::featurize(&enc, &dataset).unwrap();
    println!("featurize {} chips: {:?}", feats.len(), start.elapsed());
}
