//! Variational auto-encoder over recurrence-plot images.
//!
//! Encoder: two hidden layers (strided 3×3 convolutions by default, dense as
//! an alternative) followed by two linear heads producing the mean and log
//! variance of a diagonal Gaussian posterior. Decoder: one ReLU hidden layer
//! and a sigmoid output layer the size of the image.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Tensor, Var};
use super::NnError;
use crate::recurrence::GrayscaleImage;
use crate::seed::{mix, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderArch {
    Conv {
        channels: [usize; 2],
        kernel: usize,
        stride: usize,
    },
    Dense {
        hidden: [usize; 2],
    },
}

impl Default for EncoderArch {
    fn default() -> Self {
        EncoderArch::Conv {
            channels: [8, 16],
            kernel: 3,
            stride: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeArch {
    pub height: usize,
    pub width: usize,
    pub latent_dim: usize,
    pub encoder: EncoderArch,
    pub decoder_hidden: usize,
}

impl VaeArch {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    fn conv_out(size: usize, kernel: usize, stride: usize) -> Option<usize> {
        (size >= kernel && stride > 0).then(|| (size - kernel) / stride + 1)
    }

    /// Spatial sizes after each convolution, if the geometry is valid.
    pub fn conv_sizes(&self) -> Option<[(usize, usize); 2]> {
        match self.encoder {
            EncoderArch::Conv { kernel, stride, .. } => {
                let h1 = Self::conv_out(self.height, kernel, stride)?;
                let w1 = Self::conv_out(self.width, kernel, stride)?;
                let h2 = Self::conv_out(h1, kernel, stride)?;
                let w2 = Self::conv_out(w1, kernel, stride)?;
                Some([(h1, w1), (h2, w2)])
            }
            EncoderArch::Dense { .. } => None,
        }
    }

    /// Width of the feature vector fed to the latent heads.
    pub fn feature_len(&self) -> usize {
        match self.encoder {
            EncoderArch::Conv { channels, .. } => {
                let [_, (h2, w2)] = self.conv_sizes().unwrap_or([(0, 0); 2]);
                channels[1] * h2 * w2
            }
            EncoderArch::Dense { hidden } => hidden[1],
        }
    }

    /// Parameter shapes in declaration order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let l = self.latent_dim;
        let mut shapes = match self.encoder {
            EncoderArch::Conv {
                channels: [c1, c2],
                kernel: k,
                ..
            } => vec![vec![c1, 1, k, k], vec![c1], vec![c2, c1, k, k], vec![c2]],
            EncoderArch::Dense { hidden: [h1, h2] } => {
                vec![vec![self.pixels(), h1], vec![h1], vec![h1, h2], vec![h2]]
            }
        };
        let f = self.feature_len();
        let h = self.decoder_hidden;
        shapes.extend([
            vec![f, l],
            vec![l],
            vec![f, l],
            vec![l],
            vec![l, h],
            vec![h],
            vec![h, self.pixels()],
            vec![self.pixels()],
        ]);
        shapes
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.height == 0 || self.width == 0 {
            return Err(NnError::Config("image must be nonempty".into()));
        }
        if self.latent_dim == 0 || self.decoder_hidden == 0 {
            return Err(NnError::Config("latent_dim and decoder_hidden must be positive".into()));
        }
        match self.encoder {
            EncoderArch::Conv { channels, .. } => {
                if channels.contains(&0) {
                    return Err(NnError::Config("conv channel widths must be positive".into()));
                }
                if self.conv_sizes().is_none() {
                    return Err(NnError::Config(format!(
                        "{}x{} image too small for the convolution stack",
                        self.height, self.width
                    )));
                }
            }
            EncoderArch::Dense { hidden } => {
                if hidden.contains(&0) {
                    return Err(NnError::Config("dense hidden widths must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub recon: f64,
    pub kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { recon: 1.0, kl: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentPoint {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub z: Vec<f64>,
}

/// Closed-form KL(N(mu, diag(exp(logvar))) || N(0, I)).
pub fn gaussian_kl(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
        .sum()
}

/// Draws `z = mu + exp(logvar / 2) ⊙ eps`, returning `(z, eps)`.
pub fn reparameterize<R: Rng + ?Sized>(mu: &[f64], logvar: &[f64], rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let eps: Vec<f64> = mu.iter().map(|_| rng.sample(StandardNormal)).collect();
    let z = mu
        .iter()
        .zip(logvar)
        .zip(&eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect();
    (z, eps)
}

/// Weighted reconstruction + KL loss for a single image.
pub fn vae_loss(
    x: &GrayscaleImage,
    x_hat: &GrayscaleImage,
    mu: &[f64],
    logvar: &[f64],
    weights: LossWeights,
) -> Result<LossBreakdown, NnError> {
    if x.pixels.len() != x_hat.pixels.len() || mu.len() != logvar.len() {
        return Err(NnError::Shape(format!(
            "loss on {} vs {} pixels, {} vs {} latents",
            x.pixels.len(),
            x_hat.pixels.len(),
            mu.len(),
            logvar.len()
        )));
    }
    let recon = x
        .pixels
        .iter()
        .zip(&x_hat.pixels)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.pixels.len() as f64;
    let kl = gaussian_kl(mu, logvar);
    Ok(LossBreakdown {
        total: weights.recon * recon + weights.kl * kl,
        recon,
        kl,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    arch: VaeArch,
    weights: LossWeights,
    params: Vec<Tensor>,
}

/// Loss nodes of one recorded mini-batch.
pub(crate) struct BatchGraph {
    pub params: Vec<Var>,
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
}

impl VaeModel {
    /// Uniform He-style fan-in initialization from `seed`; biases start at zero.
    pub fn new(arch: VaeArch, weights: LossWeights, seed: u64) -> Result<Self, NnError> {
        Self::check(&arch, weights)?;
        let mut rng = rng_from(seed);
        let params = arch
            .param_shapes()
            .into_iter()
            .map(|shape| {
                let n: usize = shape.iter().product();
                let data = if shape.len() == 1 {
                    vec![0.0; n]
                } else {
                    let fan_in: usize = if shape.len() == 4 {
                        shape[1..].iter().product()
                    } else {
                        shape[0]
                    };
                    let limit = (6.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
                };
                Tensor { shape, data }
            })
            .collect();
        Ok(VaeModel { arch, weights, params })
    }

    pub fn from_params(arch: VaeArch, weights: LossWeights, params: Vec<Tensor>) -> Result<Self, NnError> {
        Self::check(&arch, weights)?;
        let shapes = arch.param_shapes();
        if shapes.len() != params.len() || shapes.iter().zip(&params).any(|(s, p)| *s != p.shape) {
            return Err(NnError::Shape("parameter shapes do not match architecture".into()));
        }
        Ok(VaeModel { arch, weights, params })
    }

    fn check(arch: &VaeArch, weights: LossWeights) -> Result<(), NnError> {
        arch.validate()?;
        if !(weights.recon > 0.0 && weights.recon.is_finite()) {
            return Err(NnError::Config(format!("recon weight {} must be positive", weights.recon)));
        }
        if !(weights.kl >= 0.0 && weights.kl < weights.recon * arch.pixels() as f64) {
            return Err(NnError::Config(format!(
                "kl weight {} must lie in [0, recon weight x pixels)",
                weights.kl
            )));
        }
        Ok(())
    }

    pub fn arch(&self) -> &VaeArch {
        &self.arch
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub(crate) fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p)).collect()
    }

    fn input(&self, tape: &mut Tape, images: &[&GrayscaleImage]) -> Result<Var, NnError> {
        let (h, w) = (self.arch.height, self.arch.width);
        let mut data = Vec::with_capacity(images.len() * h * w);
        for img in images {
            if img.height != h || img.width != w || img.pixels.len() != h * w {
                return Err(NnError::Shape(format!(
                    "image {}x{} does not match model input {h}x{w}",
                    img.height, img.width
                )));
            }
            data.extend_from_slice(&img.pixels);
        }
        let shape = match self.arch.encoder {
            EncoderArch::Conv { .. } => vec![images.len(), 1, h, w],
            EncoderArch::Dense { .. } => vec![images.len(), h * w],
        };
        tape.constant(shape, data)
    }

    fn dense(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }

    /// Records the encoder on `tape`; returns `(mu, logvar)`, each `[batch, latent]`.
    pub(crate) fn encode(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<(Var, Var), NnError> {
        let batch = tape.shape(x)[0];
        let features = match self.arch.encoder {
            EncoderArch::Conv { stride, .. } => {
                let h = tape.conv2d(x, p[0], p[1], stride)?;
                let h = tape.relu(h);
                let h = tape.conv2d(h, p[2], p[3], stride)?;
                let h = tape.relu(h);
                tape.reshape(h, vec![batch, self.arch.feature_len()])?
            }
            EncoderArch::Dense { .. } => {
                let h = Self::dense(tape, x, p[0], p[1])?;
                let h = tape.relu(h);
                let h = Self::dense(tape, h, p[2], p[3])?;
                tape.relu(h)
            }
        };
        let mu = Self::dense(tape, features, p[4], p[5])?;
        let logvar = Self::dense(tape, features, p[6], p[7])?;
        Ok((mu, logvar))
    }

    /// Records the decoder on `tape`; returns `[batch, pixels]` in (0, 1).
    pub(crate) fn decode(&self, tape: &mut Tape, p: &[Var], z: Var) -> Result<Var, NnError> {
        let s = tape.shape(z);
        if s.len() != 2 || s[1] != self.arch.latent_dim {
            return Err(NnError::Shape(format!(
                "latent {:?} does not match latent_dim {}",
                s, self.arch.latent_dim
            )));
        }
        let h = Self::dense(tape, z, p[8], p[9])?;
        let h = tape.relu(h);
        let out = Self::dense(tape, h, p[10], p[11])?;
        Ok(tape.sigmoid(out))
    }

    /// Records the full training objective for one mini-batch.
    pub(crate) fn record_batch(
        &self,
        tape: &mut Tape,
        images: &[&GrayscaleImage],
        eps: Vec<f64>,
    ) -> Result<BatchGraph, NnError> {
        let params = self.bind(tape);
        let x = self.input(tape, images)?;
        let (mu, logvar) = self.encode(tape, &params, x)?;
        let z = tape.reparameterize(mu, logvar, eps)?;
        let x_hat = self.decode(tape, &params, z)?;
        let target: Vec<f64> = images.iter().flat_map(|img| img.pixels.iter().copied()).collect();
        let recon = tape.mse(x_hat, target)?;
        let kl = tape.gaussian_kl(mu, logvar)?;
        let wr = tape.scale(recon, self.weights.recon);
        let wk = tape.scale(kl, self.weights.kl);
        let total = tape.add(wr, wk)?;
        Ok(BatchGraph {
            params,
            total,
            recon,
            kl,
        })
    }

    fn encode_images(&self, images: &[&GrayscaleImage]) -> Result<(Vec<f64>, Vec<f64>), NnError> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let x = self.input(&mut tape, images)?;
        let (mu, logvar) = self.encode(&mut tape, &params, x)?;
        let (mu, logvar) = (tape.value(mu).to_vec(), tape.value(logvar).to_vec());
        if mu.iter().chain(&logvar).any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite {
                what: "encoder output",
                epoch: 0,
                batch: 0,
            });
        }
        Ok((mu, logvar))
    }

    /// Posterior parameters `(mu, logvar)` for one image.
    pub fn forward_encoder(&self, image: &GrayscaleImage) -> Result<(Vec<f64>, Vec<f64>), NnError> {
        self.encode_images(&[image])
    }

    /// Reconstruction of the image encoded by latent `z`.
    pub fn forward_decoder(&self, z: &[f64]) -> Result<GrayscaleImage, NnError> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let zv = tape.constant(vec![1, z.len()], z.to_vec())?;
        let out = self.decode(&mut tape, &params, zv)?;
        Ok(GrayscaleImage {
            height: self.arch.height,
            width: self.arch.width,
            pixels: tape.value(out).to_vec(),
        })
    }

    /// Maps images to latent points. The noise for image `i` is drawn from a
    /// stream keyed by `(seed, i)`, so results do not depend on batching.
    pub fn project(&self, images: &[GrayscaleImage], seed: u64) -> Result<Vec<LatentPoint>, NnError> {
        const CHUNK: usize = 100;
        let l = self.arch.latent_dim;
        let mut points = Vec::with_capacity(images.len());
        for (c, chunk) in images.chunks(CHUNK).enumerate() {
            let refs: Vec<&GrayscaleImage> = chunk.iter().collect();
            let (mu, logvar) = self.encode_images(&refs)?;
            for i in 0..chunk.len() {
                let idx = (c * CHUNK + i) as u64;
                let (m, lv) = (&mu[i * l..(i + 1) * l], &logvar[i * l..(i + 1) * l]);
                let mut rng = rng_from(mix(seed, idx));
                let (z, _) = reparameterize(m, lv, &mut rng);
                points.push(LatentPoint {
                    mu: m.to_vec(),
                    logvar: lv.to_vec(),
                    z,
                });
            }
        }
        Ok(points)
    }
}
