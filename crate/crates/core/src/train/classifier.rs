use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor};
use crate::data::Dataset;
use crate::latent::LatentCode;
use crate::network::{
    argmax, baseline_forward_graph, classifier_forward, encode, BaselineCnnWeights,
    ClassifierWeights, EncoderWeights,
};
use crate::scalar::{as_f64, Scalar};

use super::{chips_to_tensor, Adam, AdamParams, TrainConfig, TrainError};

const STREAM_CLS_SHUFFLE: u64 = 4 << 32;
const STREAM_CLS_AUGMENT: u64 = 5 << 32;
const STREAM_BASELINE: u64 = 6 << 32;

const ENCODE_BATCH: usize = 32;

/// Posterior means for every chip, computed with the encoder frozen. These
/// are the classifier's input features.
pub fn featurize<F: Scalar>(
    enc: &EncoderWeights<F>,
    dataset: &Dataset,
) -> Result<Vec<Vec<F>>, TrainError> {
    let mut features = Vec::with_capacity(dataset.len());
    for chunk in dataset.chips.chunks(ENCODE_BATCH) {
        let refs: Vec<&crate::data::Chip> = chunk.iter().collect();
        let posterior = encode(enc, &chips_to_tensor::<F>(&refs))?;
        for i in 0..chunk.len() {
            features.push(posterior.mean_row(i).to_vec());
        }
    }
    Ok(features)
}

fn validate_labels(labels: &[usize], classes: usize) -> Result<(), TrainError> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(TrainError::LabelOutOfRange {
            label: bad,
            classes,
        });
    }
    Ok(())
}

fn roll_feature<F: Scalar>(feature: &[F], subvectors: usize, bins: usize, shift: i64) -> Vec<F> {
    if shift.rem_euclid(bins as i64) == 0 {
        // identity roll; also covers the degenerate N = 1 layout
        return feature.to_vec();
    }
    LatentCode::new(subvectors, bins, feature.to_vec())
        .expect("feature extent matches K*N")
        .roll_integer(shift)
        .values()
        .to_vec()
}

/// One cross-entropy step of the classifier head on a batch of latent
/// features. With augmentation on, every feature is rolled by a fresh
/// uniform shift from `aug_rng` before entering the head. Only the head is
/// updated; features are constants.
#[allow(clippy::too_many_arguments)]
pub fn classifier_train_step<F: Scalar, R: Rng>(
    cls: &mut ClassifierWeights<F>,
    features: &[Vec<F>],
    labels: &[usize],
    batch_indices: &[usize],
    opt: &mut Adam<F>,
    cfg: &TrainConfig,
    aug_rng: &mut R,
) -> Result<f64, TrainError> {
    let spec = cls.spec;
    validate_labels(labels, spec.classes)?;
    let dim = spec.latent_dim();

    let mut z = Vec::with_capacity(batch_indices.len() * dim);
    let mut batch_labels = Vec::with_capacity(batch_indices.len());
    for &i in batch_indices {
        if cfg.augmentation {
            let shift = aug_rng.random_range(0..cfg.bins) as i64;
            z.extend(roll_feature(&features[i], cfg.subvectors, cfg.bins, shift));
        } else {
            z.extend_from_slice(&features[i]);
        }
        batch_labels.push(labels[i]);
    }

    let mut g = Graph::new();
    let zv = g.constant(Tensor::from_vec(vec![batch_indices.len(), dim], z).expect("z layout"));
    let vars = cls.insert(&mut g, true);
    let logits = classifier_forward(&mut g, &vars, &spec, zv)?;
    let loss = g.softmax_cross_entropy(logits, &batch_labels)?;
    let loss_value = as_f64(g.value(loss).item());
    if !loss_value.is_finite() {
        return Err(TrainError::NonFinite {
            step: opt.step_count() as usize,
            seed: cfg.seed,
        });
    }
    g.backward(loss)?;

    let grads: Vec<Vec<F>> = vars
        .var_list()
        .iter()
        .map(|&v| g.grad(v).expect("classifier gradient").to_vec())
        .collect();
    opt.update(&mut cls.params_mut(), &grads);
    Ok(loss_value)
}

/// Trains the classifier head on precomputed latent features. Returns the
/// mean cross-entropy per epoch.
pub fn train_classifier_on_features<F: Scalar>(
    cls: &mut ClassifierWeights<F>,
    features: &[Vec<F>],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<f64>, TrainError> {
    cfg.validate()?;
    assert_eq!(features.len(), labels.len(), "one label per feature");
    validate_labels(labels, cls.spec.classes)?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(STREAM_CLS_SHUFFLE);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    aug_rng.set_stream(STREAM_CLS_AUGMENT);

    let mut opt = Adam::new(AdamParams::with_learning_rate(cfg.learning_rate));
    let mut indices: Vec<usize> = (0..features.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in indices.chunks(cfg.batch_size) {
            sum += classifier_train_step(cls, features, labels, chunk, &mut opt, cfg, &mut aug_rng)?;
            steps += 1;
        }
        history.push(sum / steps.max(1) as f64);
    }
    Ok(history)
}

/// Phase-2 classifier training: featurize with the frozen encoder, then
/// train the head. The encoder is borrowed immutably, so its weights cannot
/// change.
pub fn train_classifier<F: Scalar>(
    enc: &EncoderWeights<F>,
    cls: &mut ClassifierWeights<F>,
    dataset: &Dataset,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<f64>, TrainError> {
    let features = featurize(enc, dataset)?;
    train_classifier_on_features(cls, &features, labels, cfg)
}

/// Predicted classes for latent features: deterministic posterior means, no
/// roll at inference.
pub fn predict_on_features<F: Scalar>(
    cls: &ClassifierWeights<F>,
    features: &[Vec<F>],
) -> Result<Vec<usize>, TrainError> {
    let spec = cls.spec;
    let dim = spec.latent_dim();
    let mut predictions = Vec::with_capacity(features.len());
    for chunk in features.chunks(ENCODE_BATCH) {
        let mut z = Vec::with_capacity(chunk.len() * dim);
        for f in chunk {
            z.extend_from_slice(f);
        }
        let zt = Tensor::from_vec(vec![chunk.len(), dim], z).expect("z layout");
        let logits = crate::network::classify_batch(cls, &zt)?;
        for i in 0..chunk.len() {
            predictions.push(argmax(&logits.data()[i * spec.classes..(i + 1) * spec.classes]));
        }
    }
    Ok(predictions)
}

/// Trains the pixel-space baseline CNN with cross-entropy. Returns the mean
/// loss per epoch.
pub fn train_baseline<F: Scalar>(
    net: &mut BaselineCnnWeights<F>,
    dataset: &Dataset,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<f64>, TrainError> {
    cfg.validate()?;
    assert_eq!(dataset.len(), labels.len(), "one label per chip");
    let spec = net.spec;
    validate_labels(labels, spec.classes)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_BASELINE);
    let mut opt = Adam::new(AdamParams::with_learning_rate(cfg.learning_rate));
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in indices.chunks(cfg.batch_size) {
            let chips: Vec<&crate::data::Chip> =
                chunk.iter().map(|&i| &dataset.chips[i]).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();

            let mut g = Graph::new();
            let x = g.constant(chips_to_tensor::<F>(&chips));
            let vars = net.insert(&mut g, true);
            let logits = baseline_forward_graph(&mut g, &vars, &spec, x)?;
            let loss = g.softmax_cross_entropy(logits, &batch_labels)?;
            let loss_value = as_f64(g.value(loss).item());
            if !loss_value.is_finite() {
                return Err(TrainError::NonFinite {
                    step,
                    seed: cfg.seed,
                });
            }
            g.backward(loss)?;
            let grads: Vec<Vec<F>> = vars
                .var_list()
                .iter()
                .map(|&v| g.grad(v).expect("baseline gradient").to_vec())
                .collect();
            opt.update(&mut net.params_mut(), &grads);
            sum += loss_value;
            steps += 1;
            step += 1;
        }
        history.push(sum / steps.max(1) as f64);
    }
    Ok(history)
}

/// Predicted classes of the baseline CNN on a dataset.
pub fn predict_baseline<F: Scalar>(
    net: &BaselineCnnWeights<F>,
    dataset: &Dataset,
) -> Result<Vec<usize>, TrainError> {
    let spec = net.spec;
    let mut predictions = Vec::with_capacity(dataset.len());
    for chunk in dataset.chips.chunks(ENCODE_BATCH) {
        let refs: Vec<&crate::data::Chip> = chunk.iter().collect();
        let logits = crate::network::baseline_forward(net, &chips_to_tensor::<F>(&refs))?;
        for i in 0..chunk.len() {
            predictions.push(argmax(&logits.data()[i * spec.classes..(i + 1) * spec.classes]));
        }
    }
    Ok(predictions)
}
