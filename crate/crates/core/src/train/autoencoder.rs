use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, Tensor};
use crate::data::Dataset;
use crate::network::{decoder_forward, encoder_forward, DecoderWeights, EncoderWeights};
use crate::scalar::{as_f64, real, Scalar};

use super::{
    beta_at_step, chips_to_tensor, Adam, AdamParams, LossBreakdown, PairBatch, PairSampler,
    TrainConfig, TrainError,
};

// Stream ids for the phase-1 training rng.
const STREAM_RLS_TRAIN: u64 = 3 << 32;

/// Per-epoch loss averages of an autoencoder run.
#[derive(Clone, Copy, Debug)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

/// One cross-view step: reconstruct the target view from the rolled sampled
/// latent of the source view, plus the weighted KL of the unrolled
/// posterior. Returns the losses evaluated before the parameter update.
pub fn rls_train_step<F: Scalar, R: Rng>(
    enc: &mut EncoderWeights<F>,
    dec: &mut DecoderWeights<F>,
    dataset: &Dataset,
    batch: &PairBatch,
    opt: &mut Adam<F>,
    beta_eff: f64,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<LossBreakdown, TrainError> {
    let spec = enc.spec;
    let batch_len = batch.len();
    let latent_dim = spec.latent_dim();

    let sources: Vec<&crate::data::Chip> =
        batch.source.iter().map(|&i| &dataset.chips[i]).collect();
    let targets: Vec<&crate::data::Chip> =
        batch.target.iter().map(|&i| &dataset.chips[i]).collect();

    let mut g = Graph::new();
    let enc_vars = enc.insert(&mut g, true);
    let dec_vars = dec.insert(&mut g, true);
    let x = g.constant(chips_to_tensor::<F>(&sources));
    let target = g.constant(chips_to_tensor::<F>(&targets));

    let (mean, logvar) = encoder_forward(&mut g, &enc_vars, &spec, x)?;

    // KL of the unrolled posterior, averaged per chip
    let kl_sum = g.gaussian_kl(mean, logvar)?;
    let kl_mean = g.scale(kl_sum, real::<F>(1.0 / batch_len as f64));

    // reparameterize: z = mean + exp(0.5 logvar) * eps
    let eps: Vec<F> = (0..batch_len * latent_dim)
        .map(|_| real::<F>(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let eps = g.constant(Tensor::from_vec(vec![batch_len, latent_dim], eps).expect("eps layout"));
    let half_logvar = g.scale(logvar, real::<F>(0.5));
    let sd = g.exp(half_logvar);
    let noise = g.mul(sd, eps)?;
    let z = g.add(mean, noise)?;

    let rolled = g.roll_blocks(z, spec.bins, &batch.shifts)?;
    let recon = decoder_forward(&mut g, &dec_vars, &spec, rolled)?;

    let diff = g.sub(recon, target)?;
    let sq = g.mul(diff, diff)?;
    let mse = g.mean(sq);

    let weighted_kl = g.scale(kl_mean, real::<F>(beta_eff));
    let total = g.add(mse, weighted_kl)?;

    let breakdown = LossBreakdown {
        reconstruction: as_f64(g.value(mse).item()),
        kl: as_f64(g.value(kl_mean).item()),
        beta: beta_eff,
        total: as_f64(g.value(total).item()),
    };
    if !breakdown.total.is_finite() || !breakdown.kl.is_finite() {
        return Err(TrainError::NonFinite {
            step: opt.step_count() as usize,
            seed: cfg.seed,
        });
    }

    g.backward(total)?;

    let vars: Vec<_> = enc_vars
        .var_list()
        .into_iter()
        .chain(dec_vars.var_list())
        .collect();
    let grads: Vec<Vec<F>> = vars
        .iter()
        .map(|&v| g.grad(v).expect("trainable parameter gradient").to_vec())
        .collect();
    let mut params: Vec<&mut Tensor<F>> = enc.params_mut();
    params.extend(dec.params_mut());
    opt.update(&mut params, &grads);

    Ok(breakdown)
}

/// Full phase-1 run over `cfg.epochs` epochs of cross-view pair batches.
/// Returns per-epoch mean losses; weights end up trained in place.
pub fn train_rls_autoencoder<F: Scalar>(
    enc: &mut EncoderWeights<F>,
    dec: &mut DecoderWeights<F>,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLoss>, TrainError> {
    cfg.validate()?;
    if cfg.bins < 2 {
        return Err(TrainError::BadConfig(
            "autoencoder training needs at least 2 azimuth bins".to_string(),
        ));
    }
    let sampler = PairSampler::new(dataset, cfg.bins)?;
    let steps_per_epoch = dataset.len().div_ceil(cfg.batch_size).max(1);
    let total_steps = steps_per_epoch * cfg.epochs;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_RLS_TRAIN);
    let mut opt = Adam::new(AdamParams::with_learning_rate(cfg.learning_rate));

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut sums = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for _ in 0..steps_per_epoch {
            let batch = sampler.sample(cfg.batch_size, &mut rng);
            let beta_eff = beta_at_step(cfg.kl_weight, step, total_steps);
            let loss =
                rls_train_step(enc, dec, dataset, &batch, &mut opt, beta_eff, cfg, &mut rng)?;
            sums.0 += loss.reconstruction;
            sums.1 += loss.kl;
            sums.2 += loss.beta;
            sums.3 += loss.total;
            step += 1;
        }
        let n = steps_per_epoch as f64;
        history.push(EpochLoss {
            epoch,
            loss: LossBreakdown {
                reconstruction: sums.0 / n,
                kl: sums.1 / n,
                beta: sums.2 / n,
                total: sums.3 / n,
            },
        });
    }
    Ok(history)
}
