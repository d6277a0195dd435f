//! Concrete networks: the VAE encoder, its mirrored decoder, the latent
//! classifier head, and the pixel-space baseline CNN.
//!
//! The encoder trunk is three 5x5 convolutions with stride 2 and 2-pixel
//! padding (64 -> 32 -> 16 -> 8 spatially) followed by two affine heads that
//! produce the posterior mean and log-variance, each of extent `K*N`. The
//! decoder mirrors the stage count: two affine layers back to `c3 x 8 x 8`,
//! then three stages of nearest-neighbor upsampling plus stride-1 5x5
//! convolution (channel ladder `c3 -> c2 -> c1 -> 1`), squashed by a final
//! sigmoid. The baseline CNN reuses the encoder trunk geometry so both
//! models see identical receptive-field budgets and differ only in the
//! latent mechanism.

mod checkpoint;

pub use checkpoint::{
    load_baseline, load_classifier, load_rls_model, read_header, save_baseline, save_classifier,
    save_rls_model, CheckpointError,
};

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::latent::{LatentCode, LatentError};
use crate::scalar::{real, Scalar};

/// Side length of one target chip in pixels.
pub const CHIP_SIZE: usize = 64;
/// Spatial extent after the three stride-2 stages (64 / 2 / 2 / 2).
pub const TRUNK_OUT: usize = 8;
/// Kernel side of every convolution layer.
pub const KERNEL: usize = 5;
/// Zero padding of every convolution layer.
pub const PADDING: usize = 2;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error("expected chips of shape [batch, 1, {CHIP_SIZE}, {CHIP_SIZE}], got {got:?}")]
    ChipShape { got: Vec<usize> },
    #[error("latent extent {got} does not match K*N = {expected}")]
    LatentExtent { expected: usize, got: usize },
}

/// Layer geometry shared by every network in one experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    /// Number of structural sub-vectors K.
    pub subvectors: usize,
    /// Number of azimuth bins N.
    pub bins: usize,
    /// Convolution channel ladder.
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    /// Hidden width of the first decoder affine layer.
    pub decoder_hidden: usize,
    /// Hidden width of the classifier and baseline heads.
    pub classifier_hidden: usize,
    /// Number of target classes.
    pub classes: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            subvectors: 8,
            bins: 36,
            c1: 16,
            c2: 32,
            c3: 64,
            decoder_hidden: 512,
            classifier_hidden: 120,
            classes: 5,
        }
    }
}

impl NetworkSpec {
    pub fn latent_dim(&self) -> usize {
        self.subvectors * self.bins
    }

    /// Flattened feature extent after the conv trunk.
    pub fn trunk_dim(&self) -> usize {
        self.c3 * TRUNK_OUT * TRUNK_OUT
    }
}

#[derive(Clone, Debug)]
pub struct ConvLayer<F: Scalar> {
    pub kernel: Tensor<F>,
    pub bias: Tensor<F>,
}

#[derive(Clone, Debug)]
pub struct AffineLayer<F: Scalar> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

/// Fan-in-scaled uniform initialization: weights uniform in
/// `[-sqrt(6/fan_in), sqrt(6/fan_in)]`, biases zero.
fn init_conv<F: Scalar, R: Rng>(c_out: usize, c_in: usize, rng: &mut R) -> ConvLayer<F> {
    let fan_in = c_in * KERNEL * KERNEL;
    let bound = (6.0 / fan_in as f64).sqrt();
    let data: Vec<F> = (0..c_out * fan_in)
        .map(|_| real::<F>((rng.random::<f64>() * 2.0 - 1.0) * bound))
        .collect();
    ConvLayer {
        kernel: Tensor::from_vec(vec![c_out, c_in, KERNEL, KERNEL], data).expect("conv layout"),
        bias: Tensor::zeros(vec![c_out]),
    }
}

fn init_affine<F: Scalar, R: Rng>(d_in: usize, d_out: usize, rng: &mut R) -> AffineLayer<F> {
    let bound = (6.0 / d_in as f64).sqrt();
    let data: Vec<F> = (0..d_in * d_out)
        .map(|_| real::<F>((rng.random::<f64>() * 2.0 - 1.0) * bound))
        .collect();
    AffineLayer {
        weight: Tensor::from_vec(vec![d_in, d_out], data).expect("affine layout"),
        bias: Tensor::zeros(vec![d_out]),
    }
}

// ── Encoder ─────────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct EncoderWeights<F: Scalar> {
    pub spec: NetworkSpec,
    pub conv1: ConvLayer<F>,
    pub conv2: ConvLayer<F>,
    pub conv3: ConvLayer<F>,
    pub fc_mean: AffineLayer<F>,
    pub fc_logvar: AffineLayer<F>,
}

pub struct EncoderVars {
    pub conv1_k: Var,
    pub conv1_b: Var,
    pub conv2_k: Var,
    pub conv2_b: Var,
    pub conv3_k: Var,
    pub conv3_b: Var,
    pub fc_mean_w: Var,
    pub fc_mean_b: Var,
    pub fc_logvar_w: Var,
    pub fc_logvar_b: Var,
}

impl<F: Scalar> EncoderWeights<F> {
    pub fn init<R: Rng>(spec: NetworkSpec, rng: &mut R) -> Self {
        EncoderWeights {
            spec,
            conv1: init_conv(spec.c1, 1, rng),
            conv2: init_conv(spec.c2, spec.c1, rng),
            conv3: init_conv(spec.c3, spec.c2, rng),
            fc_mean: init_affine(spec.trunk_dim(), spec.latent_dim(), rng),
            fc_logvar: init_affine(spec.trunk_dim(), spec.latent_dim(), rng),
        }
    }

    /// Records the weights on a graph; `trainable` decides whether gradients
    /// flow into them.
    pub fn insert(&self, g: &mut Graph<F>, trainable: bool) -> EncoderVars {
        let mut put = |t: &Tensor<F>| {
            if trainable {
                g.param_from(t)
            } else {
                g.constant_from(t)
            }
        };
        EncoderVars {
            conv1_k: put(&self.conv1.kernel),
            conv1_b: put(&self.conv1.bias),
            conv2_k: put(&self.conv2.kernel),
            conv2_b: put(&self.conv2.bias),
            conv3_k: put(&self.conv3.kernel),
            conv3_b: put(&self.conv3.bias),
            fc_mean_w: put(&self.fc_mean.weight),
            fc_mean_b: put(&self.fc_mean.bias),
            fc_logvar_w: put(&self.fc_logvar.weight),
            fc_logvar_b: put(&self.fc_logvar.bias),
        }
    }

    /// Parameter tensors in the fixed order used by the optimizer and by
    /// [`EncoderVars::var_list`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        vec![
            &mut self.conv1.kernel,
            &mut self.conv1.bias,
            &mut self.conv2.kernel,
            &mut self.conv2.bias,
            &mut self.conv3.kernel,
            &mut self.conv3.bias,
            &mut self.fc_mean.weight,
            &mut self.fc_mean.bias,
            &mut self.fc_logvar.weight,
            &mut self.fc_logvar.bias,
        ]
    }

    pub fn params(&self) -> Vec<&Tensor<F>> {
        vec![
            &self.conv1.kernel,
            &self.conv1.bias,
            &self.conv2.kernel,
            &self.conv2.bias,
            &self.conv3.kernel,
            &self.conv3.bias,
            &self.fc_mean.weight,
            &self.fc_mean.bias,
            &self.fc_logvar.weight,
            &self.fc_logvar.bias,
        ]
    }
}

impl EncoderVars {
    pub fn var_list(&self) -> Vec<Var> {
        vec![
            self.conv1_k,
            self.conv1_b,
            self.conv2_k,
            self.conv2_b,
            self.conv3_k,
            self.conv3_b,
            self.fc_mean_w,
            self.fc_mean_b,
            self.fc_logvar_w,
            self.fc_logvar_b,
        ]
    }
}

fn check_chip_batch<F: Scalar>(x: &Tensor<F>) -> Result<usize, NetworkError> {
    let s = x.shape();
    if s.len() != 4 || s[1] != 1 || s[2] != CHIP_SIZE || s[3] != CHIP_SIZE {
        return Err(NetworkError::ChipShape { got: s.to_vec() });
    }
    Ok(s[0])
}

/// Conv trunk shared by the encoder and the baseline CNN:
/// three stride-2 convolutions with ReLU, flattened to `[B, c3*8*8]`.
fn trunk_forward<F: Scalar>(
    g: &mut Graph<F>,
    x: Var,
    convs: [(Var, Var); 3],
    spec: &NetworkSpec,
) -> Result<Var, NetworkError> {
    let batch = {
        let s = g.value(x).shape();
        if s.len() != 4 || s[1] != 1 || s[2] != CHIP_SIZE || s[3] != CHIP_SIZE {
            return Err(NetworkError::ChipShape { got: s.to_vec() });
        }
        s[0]
    };
    let mut h = x;
    for (k, b) in convs {
        let c = g.conv2d(h, k, b, 2, PADDING)?;
        h = g.relu(c);
    }
    Ok(g.reshape(h, vec![batch, spec.trunk_dim()])?)
}

/// Posterior heads on the trunk features. Returns `(mean, logvar)`, each of
/// shape `[B, K*N]`.
pub fn encoder_forward<F: Scalar>(
    g: &mut Graph<F>,
    vars: &EncoderVars,
    spec: &NetworkSpec,
    x: Var,
) -> Result<(Var, Var), NetworkError> {
    let feat = trunk_forward(
        g,
        x,
        [
            (vars.conv1_k, vars.conv1_b),
            (vars.conv2_k, vars.conv2_b),
            (vars.conv3_k, vars.conv3_b),
        ],
        spec,
    )?;
    let mean = g.affine(feat, vars.fc_mean_w, vars.fc_mean_b)?;
    let logvar = g.affine(feat, vars.fc_logvar_w, vars.fc_logvar_b)?;
    Ok((mean, logvar))
}

// ── Decoder ─────────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct DecoderWeights<F: Scalar> {
    pub spec: NetworkSpec,
    pub fc1: AffineLayer<F>,
    pub fc2: AffineLayer<F>,
    pub conv1: ConvLayer<F>,
    pub conv2: ConvLayer<F>,
    pub conv3: ConvLayer<F>,
}

pub struct DecoderVars {
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
    pub conv1_k: Var,
    pub conv1_b: Var,
    pub conv2_k: Var,
    pub conv2_b: Var,
    pub conv3_k: Var,
    pub conv3_b: Var,
}

impl<F: Scalar> DecoderWeights<F> {
    pub fn init<R: Rng>(spec: NetworkSpec, rng: &mut R) -> Self {
        DecoderWeights {
            spec,
            fc1: init_affine(spec.latent_dim(), spec.decoder_hidden, rng),
            fc2: init_affine(spec.decoder_hidden, spec.trunk_dim(), rng),
            conv1: init_conv(spec.c2, spec.c3, rng),
            conv2: init_conv(spec.c1, spec.c2, rng),
            conv3: init_conv(1, spec.c1, rng),
        }
    }

    pub fn insert(&self, g: &mut Graph<F>, trainable: bool) -> DecoderVars {
        let mut put = |t: &Tensor<F>| {
            if trainable {
                g.param_from(t)
            } else {
                g.constant_from(t)
            }
        };
        DecoderVars {
            fc1_w: put(&self.fc1.weight),
            fc1_b: put(&self.fc1.bias),
            fc2_w: put(&self.fc2.weight),
            fc2_b: put(&self.fc2.bias),
            conv1_k: put(&self.conv1.kernel),
            conv1_b: put(&self.conv1.bias),
            conv2_k: put(&self.conv2.kernel),
            conv2_b: put(&self.conv2.bias),
            conv3_k: put(&self.conv3.kernel),
            conv3_b: put(&self.conv3.bias),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        vec![
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
            &mut self.conv1.kernel,
            &mut self.conv1.bias,
            &mut self.conv2.kernel,
            &mut self.conv2.bias,
            &mut self.conv3.kernel,
            &mut self.conv3.bias,
        ]
    }

    pub fn params(&self) -> Vec<&Tensor<F>> {
        vec![
            &self.fc1.weight,
            &self.fc1.bias,
            &self.fc2.weight,
            &self.fc2.bias,
            &self.conv1.kernel,
            &self.conv1.bias,
            &self.conv2.kernel,
            &self.conv2.bias,
            &self.conv3.kernel,
            &self.conv3.bias,
        ]
    }
}

impl DecoderVars {
    pub fn var_list(&self) -> Vec<Var> {
        vec![
            self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b, self.conv1_k, self.conv1_b,
            self.conv2_k, self.conv2_b, self.conv3_k, self.conv3_b,
        ]
    }
}

/// Maps latents `[B, K*N]` back to chips `[B, 1, 64, 64]` in `(0, 1)`.
pub fn decoder_forward<F: Scalar>(
    g: &mut Graph<F>,
    vars: &DecoderVars,
    spec: &NetworkSpec,
    z: Var,
) -> Result<Var, NetworkError> {
    let zs = g.value(z).shape().to_vec();
    if zs.len() != 2 || zs[1] != spec.latent_dim() {
        return Err(NetworkError::LatentExtent {
            expected: spec.latent_dim(),
            got: if zs.len() == 2 { zs[1] } else { 0 },
        });
    }
    let batch = zs[0];
    let h1 = g.affine(z, vars.fc1_w, vars.fc1_b)?;
    let h1 = g.relu(h1);
    let h2 = g.affine(h1, vars.fc2_w, vars.fc2_b)?;
    let h2 = g.relu(h2);
    let mut h = g.reshape(h2, vec![batch, spec.c3, TRUNK_OUT, TRUNK_OUT])?;
    for (i, (k, b)) in [
        (vars.conv1_k, vars.conv1_b),
        (vars.conv2_k, vars.conv2_b),
        (vars.conv3_k, vars.conv3_b),
    ]
    .into_iter()
    .enumerate()
    {
        let up = g.upsample2x(h)?;
        let c = g.conv2d(up, k, b, 1, PADDING)?;
        h = if i < 2 { g.relu(c) } else { g.sigmoid(c) };
    }
    Ok(h)
}

// ── Classifier head ─────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct ClassifierWeights<F: Scalar> {
    pub spec: NetworkSpec,
    pub fc1: AffineLayer<F>,
    pub fc2: AffineLayer<F>,
}

pub struct ClassifierVars {
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
}

impl<F: Scalar> ClassifierWeights<F> {
    pub fn init<R: Rng>(spec: NetworkSpec, rng: &mut R) -> Self {
        ClassifierWeights {
            spec,
            fc1: init_affine(spec.latent_dim(), spec.classifier_hidden, rng),
            fc2: init_affine(spec.classifier_hidden, spec.classes, rng),
        }
    }

    pub fn insert(&self, g: &mut Graph<F>, trainable: bool) -> ClassifierVars {
        let mut put = |t: &Tensor<F>| {
            if trainable {
                g.param_from(t)
            } else {
                g.constant_from(t)
            }
        };
        ClassifierVars {
            fc1_w: put(&self.fc1.weight),
            fc1_b: put(&self.fc1.bias),
            fc2_w: put(&self.fc2.weight),
            fc2_b: put(&self.fc2.bias),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        vec![
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
        ]
    }

    pub fn params(&self) -> Vec<&Tensor<F>> {
        vec![&self.fc1.weight, &self.fc1.bias, &self.fc2.weight, &self.fc2.bias]
    }
}

impl ClassifierVars {
    pub fn var_list(&self) -> Vec<Var> {
        vec![self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b]
    }
}

/// Two affine layers over a latent batch `[B, K*N]`; returns logits `[B, classes]`.
pub fn classifier_forward<F: Scalar>(
    g: &mut Graph<F>,
    vars: &ClassifierVars,
    spec: &NetworkSpec,
    z: Var,
) -> Result<Var, NetworkError> {
    let zs = g.value(z).shape().to_vec();
    if zs.len() != 2 || zs[1] != spec.latent_dim() {
        return Err(NetworkError::LatentExtent {
            expected: spec.latent_dim(),
            got: if zs.len() == 2 { zs[1] } else { 0 },
        });
    }
    let h = g.affine(z, vars.fc1_w, vars.fc1_b)?;
    let h = g.relu(h);
    Ok(g.affine(h, vars.fc2_w, vars.fc2_b)?)
}

// ── Baseline CNN ────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct BaselineCnnWeights<F: Scalar> {
    pub spec: NetworkSpec,
    pub conv1: ConvLayer<F>,
    pub conv2: ConvLayer<F>,
    pub conv3: ConvLayer<F>,
    pub fc1: AffineLayer<F>,
    pub fc2: AffineLayer<F>,
}

pub struct BaselineVars {
    pub conv1_k: Var,
    pub conv1_b: Var,
    pub conv2_k: Var,
    pub conv2_b: Var,
    pub conv3_k: Var,
    pub conv3_b: Var,
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
}

impl<F: Scalar> BaselineCnnWeights<F> {
    pub fn init<R: Rng>(spec: NetworkSpec, rng: &mut R) -> Self {
        BaselineCnnWeights {
            spec,
            conv1: init_conv(spec.c1, 1, rng),
            conv2: init_conv(spec.c2, spec.c1, rng),
            conv3: init_conv(spec.c3, spec.c2, rng),
            fc1: init_affine(spec.trunk_dim(), spec.classifier_hidden, rng),
            fc2: init_affine(spec.classifier_hidden, spec.classes, rng),
        }
    }

    pub fn insert(&self, g: &mut Graph<F>, trainable: bool) -> BaselineVars {
        let mut put = |t: &Tensor<F>| {
            if trainable {
                g.param_from(t)
            } else {
                g.constant_from(t)
            }
        };
        BaselineVars {
            conv1_k: put(&self.conv1.kernel),
            conv1_b: put(&self.conv1.bias),
            conv2_k: put(&self.conv2.kernel),
            conv2_b: put(&self.conv2.bias),
            conv3_k: put(&self.conv3.kernel),
            conv3_b: put(&self.conv3.bias),
            fc1_w: put(&self.fc1.weight),
            fc1_b: put(&self.fc1.bias),
            fc2_w: put(&self.fc2.weight),
            fc2_b: put(&self.fc2.bias),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        vec![
            &mut self.conv1.kernel,
            &mut self.conv1.bias,
            &mut self.conv2.kernel,
            &mut self.conv2.bias,
            &mut self.conv3.kernel,
            &mut self.conv3.bias,
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
        ]
    }

    pub fn params(&self) -> Vec<&Tensor<F>> {
        vec![
            &self.conv1.kernel,
            &self.conv1.bias,
            &self.conv2.kernel,
            &self.conv2.bias,
            &self.conv3.kernel,
            &self.conv3.bias,
            &self.fc1.weight,
            &self.fc1.bias,
            &self.fc2.weight,
            &self.fc2.bias,
        ]
    }
}

impl BaselineVars {
    pub fn var_list(&self) -> Vec<Var> {
        vec![
            self.conv1_k, self.conv1_b, self.conv2_k, self.conv2_b, self.conv3_k, self.conv3_b,
            self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b,
        ]
    }
}

/// Pixels straight to logits, no latent stage and no roll.
pub fn baseline_forward_graph<F: Scalar>(
    g: &mut Graph<F>,
    vars: &BaselineVars,
    spec: &NetworkSpec,
    x: Var,
) -> Result<Var, NetworkError> {
    let feat = trunk_forward(
        g,
        x,
        [
            (vars.conv1_k, vars.conv1_b),
            (vars.conv2_k, vars.conv2_b),
            (vars.conv3_k, vars.conv3_b),
        ],
        spec,
    )?;
    let h = g.affine(feat, vars.fc1_w, vars.fc1_b)?;
    let h = g.relu(h);
    Ok(g.affine(h, vars.fc2_w, vars.fc2_b)?)
}

// ── Posterior and evaluation-path entry points ──────────────────────────

/// Batched diagonal-Gaussian posterior: `mean` and `logvar` of shape `[B, K*N]`.
#[derive(Clone, Debug)]
pub struct Posterior<F: Scalar> {
    pub mean: Tensor<F>,
    pub logvar: Tensor<F>,
}

impl<F: Scalar> Posterior<F> {
    pub fn batch(&self) -> usize {
        self.mean.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.mean.shape()[1]
    }

    pub fn mean_row(&self, i: usize) -> &[F] {
        let d = self.dim();
        &self.mean.data()[i * d..(i + 1) * d]
    }

    pub fn logvar_row(&self, i: usize) -> &[F] {
        let d = self.dim();
        &self.logvar.data()[i * d..(i + 1) * d]
    }
}

/// Deterministic encoding of a chip batch `[B, 1, 64, 64]`.
pub fn encode<F: Scalar>(
    w: &EncoderWeights<F>,
    chips: &Tensor<F>,
) -> Result<Posterior<F>, NetworkError> {
    check_chip_batch(chips)?;
    let mut g = Graph::new();
    let x = g.constant_from(chips);
    let vars = w.insert(&mut g, false);
    let (mean, logvar) = encoder_forward(&mut g, &vars, &w.spec, x)?;
    Ok(Posterior {
        mean: g.value(mean).clone(),
        logvar: g.value(logvar).clone(),
    })
}

/// Draws `z = mean + exp(0.5*logvar) * eps` per chip and reshapes each row
/// into a latent code. All stochasticity in the pipeline lives here.
pub fn reparameterize<F: Scalar, R: Rng>(
    p: &Posterior<F>,
    subvectors: usize,
    bins: usize,
    rng: &mut R,
) -> Result<Vec<LatentCode<F>>, NetworkError> {
    if p.dim() != subvectors * bins {
        return Err(NetworkError::LatentExtent {
            expected: subvectors * bins,
            got: p.dim(),
        });
    }
    let half = real::<F>(0.5);
    (0..p.batch())
        .map(|i| {
            let z: Vec<F> = p
                .mean_row(i)
                .iter()
                .zip(p.logvar_row(i))
                .map(|(&m, &lv)| {
                    let eps: f64 = rng.sample(StandardNormal);
                    m + (half * lv).exp() * real::<F>(eps)
                })
                .collect();
            LatentCode::new(subvectors, bins, z).map_err(NetworkError::from)
        })
        .collect()
}

/// Decodes one latent code to a `[1, 1, 64, 64]` chip in `(0, 1)`.
pub fn decode<F: Scalar>(
    w: &DecoderWeights<F>,
    z: &LatentCode<F>,
) -> Result<Tensor<F>, NetworkError> {
    let flat = z.flatten();
    let batched = Tensor::from_vec(vec![1, flat.numel()], flat.into_data())
        .expect("row vector");
    decode_batch(w, &batched)
}

/// Decodes a latent batch `[B, K*N]` to chips `[B, 1, 64, 64]`.
pub fn decode_batch<F: Scalar>(
    w: &DecoderWeights<F>,
    z: &Tensor<F>,
) -> Result<Tensor<F>, NetworkError> {
    let mut g = Graph::new();
    let zv = g.constant_from(z);
    let vars = w.insert(&mut g, false);
    let out = decoder_forward(&mut g, &vars, &w.spec, zv)?;
    Ok(g.value(out).clone())
}

/// Logits for one latent code; predicted class is the argmax (ties broken
/// toward the lowest index).
pub fn classify<F: Scalar>(
    w: &ClassifierWeights<F>,
    z: &LatentCode<F>,
) -> Result<Vec<F>, NetworkError> {
    let flat = z.flatten();
    let batched = Tensor::from_vec(vec![1, flat.numel()], flat.into_data()).expect("row vector");
    let logits = classify_batch(w, &batched)?;
    Ok(logits.into_data())
}

/// Logits `[B, classes]` for a latent batch `[B, K*N]`.
pub fn classify_batch<F: Scalar>(
    w: &ClassifierWeights<F>,
    z: &Tensor<F>,
) -> Result<Tensor<F>, NetworkError> {
    let mut g = Graph::new();
    let zv = g.constant_from(z);
    let vars = w.insert(&mut g, false);
    let logits = classifier_forward(&mut g, &vars, &w.spec, zv)?;
    Ok(g.value(logits).clone())
}

/// Logits `[B, classes]` straight from pixels.
pub fn baseline_forward<F: Scalar>(
    w: &BaselineCnnWeights<F>,
    chips: &Tensor<F>,
) -> Result<Tensor<F>, NetworkError> {
    check_chip_batch(chips)?;
    let mut g = Graph::new();
    let x = g.constant_from(chips);
    let vars = w.insert(&mut g, false);
    let logits = baseline_forward_graph(&mut g, &vars, &w.spec, x)?;
    Ok(g.value(logits).clone())
}

/// Index of the strictly largest value; ties resolve to the lowest index.
pub fn argmax<F: Scalar>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax of one logit row.
pub fn softmax<F: Scalar>(row: &[F]) -> Vec<F> {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = row.iter().map(|&v| (v - max).exp()).collect();
    let denom: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

#[cfg(test)]
mod tests;
