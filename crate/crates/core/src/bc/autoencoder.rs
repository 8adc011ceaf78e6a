use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{axpy, matvec, matvec_t, outer_acc};

/// Dense two-layer autoencoder with tanh hidden layers.
///
/// `x = tanh(W2 tanh(W1 o + b1) + b2)`, `ô = V2 tanh(V1 x + c1) + c2`.
/// Encoder parameters are laid out `[W1, b1, W2, b2]`, decoder parameters
/// `[V1, c1, V2, c2]`, all matrices row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    obs_dim: usize,
    hidden_dim: usize,
    latent_dim: usize,
    encoder: Vec<f64>,
    decoder: Vec<f64>,
}

/// Intermediate activations of one encoder pass.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodeCache {
    pub hidden: Vec<f64>,
    pub latent: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeCache {
    pub hidden: Vec<f64>,
    pub recon: Vec<f64>,
}

impl Autoencoder {
    pub fn encoder_len(obs_dim: usize, hidden_dim: usize, latent_dim: usize) -> usize {
        hidden_dim * obs_dim + hidden_dim + latent_dim * hidden_dim + latent_dim
    }

    pub fn decoder_len(obs_dim: usize, hidden_dim: usize, latent_dim: usize) -> usize {
        hidden_dim * latent_dim + hidden_dim + obs_dim * hidden_dim + obs_dim
    }

    pub fn from_parts(
        obs_dim: usize,
        hidden_dim: usize,
        latent_dim: usize,
        encoder: Vec<f64>,
        decoder: Vec<f64>,
    ) -> Option<Self> {
        (encoder.len() == Self::encoder_len(obs_dim, hidden_dim, latent_dim)
            && decoder.len() == Self::decoder_len(obs_dim, hidden_dim, latent_dim))
        .then_some(Self {
            obs_dim,
            hidden_dim,
            latent_dim,
            encoder,
            decoder,
        })
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init<R: Rng>(obs_dim: usize, hidden_dim: usize, latent_dim: usize, rng: &mut R) -> Self {
        let mut encoder = Vec::with_capacity(Self::encoder_len(obs_dim, hidden_dim, latent_dim));
        let mut decoder = Vec::with_capacity(Self::decoder_len(obs_dim, hidden_dim, latent_dim));
        let mut dense = |out: &mut Vec<f64>, rows: usize, cols: usize| {
            let b = 1.0 / (cols as f64).sqrt();
            out.extend((0..rows * cols).map(|_| rng.random_range(-b..b)));
            out.extend(std::iter::repeat_n(0.0, rows));
        };
        dense(&mut encoder, hidden_dim, obs_dim);
        dense(&mut encoder, latent_dim, hidden_dim);
        dense(&mut decoder, hidden_dim, latent_dim);
        dense(&mut decoder, obs_dim, hidden_dim);
        Self {
            obs_dim,
            hidden_dim,
            latent_dim,
            encoder,
            decoder,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn encoder_params(&self) -> &[f64] {
        &self.encoder
    }

    pub fn encoder_params_mut(&mut self) -> &mut [f64] {
        &mut self.encoder
    }

    pub fn decoder_params(&self) -> &[f64] {
        &self.decoder
    }

    pub fn decoder_params_mut(&mut self) -> &mut [f64] {
        &mut self.decoder
    }

    fn enc_split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let (o, h, l) = (self.obs_dim, self.hidden_dim, self.latent_dim);
        let (w1, rest) = self.encoder.split_at(h * o);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(l * h);
        (w1, b1, w2, b2)
    }

    fn dec_split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let (o, h, l) = (self.obs_dim, self.hidden_dim, self.latent_dim);
        let (v1, rest) = self.decoder.split_at(h * l);
        let (c1, rest) = rest.split_at(h);
        let (v2, c2) = rest.split_at(o * h);
        (v1, c1, v2, c2)
    }

    pub fn encode_cached(&self, obs: &[f64]) -> EncodeCache {
        let (w1, b1, w2, b2) = self.enc_split();
        let mut hidden = matvec(w1, self.hidden_dim, self.obs_dim, obs);
        hidden
            .iter_mut()
            .zip(b1)
            .for_each(|(v, b)| *v = (*v + b).tanh());
        let mut latent = matvec(w2, self.latent_dim, self.hidden_dim, &hidden);
        latent
            .iter_mut()
            .zip(b2)
            .for_each(|(v, b)| *v = (*v + b).tanh());
        EncodeCache { hidden, latent }
    }

    pub fn encode(&self, obs: &[f64]) -> Vec<f64> {
        self.encode_cached(obs).latent
    }

    pub fn decode_cached(&self, x: &[f64]) -> DecodeCache {
        let (v1, c1, v2, c2) = self.dec_split();
        let mut hidden = matvec(v1, self.hidden_dim, self.latent_dim, x);
        hidden
            .iter_mut()
            .zip(c1)
            .for_each(|(v, c)| *v = (*v + c).tanh());
        let mut recon = matvec(v2, self.obs_dim, self.hidden_dim, &hidden);
        recon.iter_mut().zip(c2).for_each(|(v, c)| *v += c);
        DecodeCache { hidden, recon }
    }

    pub fn decode(&self, x: &[f64]) -> Vec<f64> {
        self.decode_cached(x).recon
    }

    /// Forward-mode Jacobian `∂x/∂θ_enc`, row-major `latent × encoder_len`.
    pub fn encoder_jacobian(&self, obs: &[f64], cache: &EncodeCache) -> Vec<f64> {
        let (o, h, l) = (self.obs_dim, self.hidden_dim, self.latent_dim);
        let p = self.encoder.len();
        let (_, _, w2, _) = self.enc_split();
        let mut jac = vec![0.0; l * p];
        let off_b1 = h * o;
        let off_w2 = off_b1 + h;
        let off_b2 = off_w2 + l * h;
        for r in 0..l {
            let gr = 1.0 - cache.latent[r] * cache.latent[r];
            let row = &mut jac[r * p..(r + 1) * p];
            for k in 0..h {
                let gk = gr * w2[r * h + k] * (1.0 - cache.hidden[k] * cache.hidden[k]);
                for j in 0..o {
                    row[k * o + j] = gk * obs[j];
                }
                row[off_b1 + k] = gk;
                row[off_w2 + r * h + k] = gr * cache.hidden[k];
            }
            row[off_b2 + r] = gr;
        }
        jac
    }

    /// Reverse pass of the encoder: `out += (∂x/∂θ_enc)ᵀ g`.
    pub fn encoder_vjp(&self, obs: &[f64], cache: &EncodeCache, g: &[f64], out: &mut [f64]) {
        let (o, h, l) = (self.obs_dim, self.hidden_dim, self.latent_dim);
        let (_, _, w2, _) = self.enc_split();
        let gz2: Vec<f64> = (0..l)
            .map(|r| g[r] * (1.0 - cache.latent[r] * cache.latent[r]))
            .collect();
        let mut gh = matvec_t(w2, l, h, &gz2);
        gh.iter_mut()
            .zip(&cache.hidden)
            .for_each(|(v, a)| *v *= 1.0 - a * a);
        let off_b1 = h * o;
        let off_w2 = off_b1 + h;
        let off_b2 = off_w2 + l * h;
        outer_acc(&gh, obs, &mut out[..off_b1]);
        axpy(1.0, &gh, &mut out[off_b1..off_w2]);
        outer_acc(&gz2, &cache.hidden, &mut out[off_w2..off_b2]);
        axpy(1.0, &gz2, &mut out[off_b2..]);
    }

    /// Reverse pass of the decoder for an output gradient `g_recon`:
    /// accumulates decoder gradients and returns `∂L/∂x`.
    pub fn decoder_vjp(
        &self,
        x: &[f64],
        cache: &DecodeCache,
        g_recon: &[f64],
        out: &mut [f64],
    ) -> Vec<f64> {
        let (o, h, l) = (self.obs_dim, self.hidden_dim, self.latent_dim);
        let (v1, _, v2, _) = self.dec_split();
        let mut gh = matvec_t(v2, o, h, g_recon);
        gh.iter_mut()
            .zip(&cache.hidden)
            .for_each(|(v, a)| *v *= 1.0 - a * a);
        let off_c1 = h * l;
        let off_v2 = off_c1 + h;
        let off_c2 = off_v2 + o * h;
        outer_acc(&gh, x, &mut out[..off_c1]);
        axpy(1.0, &gh, &mut out[off_c1..off_v2]);
        outer_acc(g_recon, &cache.hidden, &mut out[off_v2..off_c2]);
        axpy(1.0, g_recon, &mut out[off_c2..]);
        matvec_t(v1, h, l, &gh)
    }
}
