use log::warn;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Autoencoder, DemoDataset, DemoEpisode};
use crate::cells::{CellError, CellParams, CellSpec, HiddenState, StepJacobians};
use crate::heads::{ActorHead, HeadError};
use crate::math::{matvec_t, norm2};
use crate::online_grad::{CellRuntime, GradError, StateJacobian, TraceScalar};
use crate::policy::PretrainedPolicy;
use crate::seeds::{derive_seed, rng_for, tag};

/// Demonstration actions are pulled this far (relative to the bound) inside
/// the open action interval before their log-likelihood is taken.
pub const DEMO_ACTION_MARGIN: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BcError {
    #[error("dataset has no usable steps")]
    EmptyDataset,
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("invalid BC config: {0}")]
    InvalidConfig(String),
    #[error("pretraining diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f64,
    },
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Head(#[from] HeadError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    /// Reconstruction weight `η_rec`.
    pub eta_rec: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Fraction of episodes held out for validation, in `(0, 0.5]`.
    pub val_fraction: f64,
    pub seed: u64,
    /// Steps of gradient accumulation between parameter updates.
    pub window: usize,
    /// Global gradient-norm clip applied to each update.
    pub clip_norm: f64,
    /// Width of the autoencoder's hidden layers.
    pub encoder_hidden: usize,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            eta_rec: 0.1,
            epochs: 40,
            learning_rate: 3e-3,
            val_fraction: 0.34,
            seed: 0,
            window: 50,
            clip_norm: 5.0,
            encoder_hidden: 32,
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<(), BcError> {
        let bad = |m: &str| Err(BcError::InvalidConfig(m.to_string()));
        if !(self.eta_rec >= 0.0 && self.eta_rec.is_finite()) {
            return bad("eta_rec must be finite and non-negative");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction <= 0.5) {
            return bad("val_fraction must lie in (0, 0.5]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if self.encoder_hidden == 0 {
            return bad("encoder_hidden must be at least 1");
        }
        Ok(())
    }
}

/// Gradients of the behavioral-cloning loss, one block per component.
#[derive(Clone, Debug, PartialEq)]
pub struct BcGrads {
    pub encoder: Vec<f64>,
    pub decoder: Vec<f64>,
    /// All trainable cell parameters in [`CellParams::trainable_vec`] order.
    pub cell: Vec<f64>,
    pub head: Vec<f64>,
}

impl BcGrads {
    pub fn zeros(policy: &PretrainedPolicy) -> Self {
        Self {
            encoder: vec![0.0; policy.autoencoder.encoder_params().len()],
            decoder: vec![0.0; policy.autoencoder.decoder_params().len()],
            cell: vec![0.0; policy.cell.trainable_len()],
            head: vec![0.0; policy.head.param_len()],
        }
    }

    /// Concatenation `[encoder, decoder, cell, head]`.
    pub fn flatten(&self) -> Vec<f64> {
        [&self.encoder[..], &self.decoder, &self.cell, &self.head].concat()
    }

    fn blocks_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [
            &mut self.encoder,
            &mut self.decoder,
            &mut self.cell,
            &mut self.head,
        ]
    }

    pub fn scale(&mut self, s: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn fill_zero(&mut self) {
        self.scale(0.0);
    }
}

/// All BC-trained parameters of a policy as one flat vector, in
/// [`BcGrads::flatten`] order.
pub fn flatten_params(policy: &PretrainedPolicy) -> Vec<f64> {
    [
        policy.autoencoder.encoder_params(),
        policy.autoencoder.decoder_params(),
        &policy.cell.trainable_vec(),
        policy.head.w_out(),
    ]
    .concat()
}

/// Inverse of [`flatten_params`]; re-projects the cell afterwards.
pub fn write_params(policy: &mut PretrainedPolicy, flat: &[f64]) {
    let ne = policy.autoencoder.encoder_params().len();
    let nd = policy.autoencoder.decoder_params().len();
    let nc = policy.cell.trainable_len();
    let (enc, rest) = flat.split_at(ne);
    let (dec, rest) = rest.split_at(nd);
    let (cell, head) = rest.split_at(nc);
    policy.autoencoder.encoder_params_mut().copy_from_slice(enc);
    policy.autoencoder.decoder_params_mut().copy_from_slice(dec);
    policy.cell.set_trainable(cell);
    policy.cell.project();
    policy.head.w_out_mut().copy_from_slice(head);
}

/// Forward-mode sensitivity `∂h/∂θ_enc` of the hidden state to the encoder
/// parameters, row-major `n × P_enc`.
#[derive(Clone, Debug, PartialEq)]
enum EncoderTrace {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

fn advance_encoder_trace<T: TraceScalar>(
    e: &mut [T],
    scratch: &mut Vec<T>,
    state: &StateJacobian<T>,
    input: &[T],
    jx: &[f64],
    latent: usize,
) {
    let n = state.dim();
    let p = e.len() / n.max(1);
    match state {
        StateJacobian::Diagonal(d) => {
            for (i, &di) in d.iter().enumerate() {
                e[i * p..(i + 1) * p].iter_mut().for_each(|v| *v *= di);
            }
        }
        StateJacobian::Dense { data, .. } => {
            scratch.clear();
            scratch.resize(n * p, T::zero());
            for i in 0..n {
                for j in 0..n {
                    let s = data[i * n + j];
                    if s == T::zero() {
                        continue;
                    }
                    for (o, &v) in scratch[i * p..(i + 1) * p]
                        .iter_mut()
                        .zip(&e[j * p..(j + 1) * p])
                    {
                        *o += s * v;
                    }
                }
            }
            e.copy_from_slice(scratch);
        }
    }
    for i in 0..n {
        for l in 0..latent {
            let b = input[i * latent + l];
            if b == T::zero() {
                continue;
            }
            for (o, &j) in e[i * p..(i + 1) * p]
                .iter_mut()
                .zip(&jx[l * p..(l + 1) * p])
            {
                *o += b * T::from_f64(j);
            }
        }
    }
}

fn contract_encoder_trace<T: TraceScalar>(e: &[T], covector: &[T], out: &mut [f64]) {
    let p = out.len();
    for (i, &c) in covector.iter().enumerate() {
        for (o, &v) in out.iter_mut().zip(&e[i * p..(i + 1) * p]) {
            *o += (c * v).re();
        }
    }
}

/// Running state of one demonstration sequence under forward-mode
/// differentiation.
#[derive(Clone, Debug)]
pub struct BcSequence {
    runtime: CellRuntime,
    enc: EncoderTrace,
    scratch_r: Vec<f64>,
    scratch_c: Vec<Complex64>,
}

/// Per-step loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub nll: f64,
    /// `‖o − ô‖₂`, unweighted.
    pub rec: f64,
}

impl StepLoss {
    pub fn total(&self, eta_rec: f64) -> f64 {
        self.nll + eta_rec * self.rec
    }
}

impl BcSequence {
    pub fn new(policy: &PretrainedPolicy) -> Result<Self, BcError> {
        let runtime = CellRuntime::with_default_engine(&policy.cell)?;
        let size = policy.cell.hidden_dim() * policy.autoencoder.encoder_params().len();
        let enc = match runtime.hidden() {
            HiddenState::Real(_) => EncoderTrace::Real(vec![0.0; size]),
            HiddenState::Complex(_) => EncoderTrace::Complex(vec![Complex64::new(0.0, 0.0); size]),
        };
        Ok(Self {
            runtime,
            enc,
            scratch_r: Vec::new(),
            scratch_c: Vec::new(),
        })
    }

    pub fn reset(&mut self) {
        self.runtime.reset();
        match &mut self.enc {
            EncoderTrace::Real(e) => e.iter_mut().for_each(|v| *v = 0.0),
            EncoderTrace::Complex(e) => e.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0)),
        }
    }

    /// Advances on `(obs, action)` and accumulates the gradient of
    /// `−log π(action) + η_rec ‖obs − ô‖₂` into `grads`.
    pub fn step(
        &mut self,
        policy: &PretrainedPolicy,
        obs: &[f64],
        action: &[f64],
        eta_rec: f64,
        grads: &mut BcGrads,
    ) -> Result<StepLoss, BcError> {
        let ae = &policy.autoencoder;
        let latent = ae.latent_dim();
        let enc = ae.encode_cached(obs);
        let x = &enc.latent;
        let jx = ae.encoder_jacobian(obs, &enc);
        let jac = self.runtime.advance(&policy.cell, x, policy.dt)?;
        match (&mut self.enc, &jac) {
            (EncoderTrace::Real(e), StepJacobians::Real(j)) => {
                advance_encoder_trace(e, &mut self.scratch_r, &j.state, &j.input, &jx, latent)
            }
            (EncoderTrace::Complex(e), StepJacobians::Complex(j)) => {
                advance_encoder_trace(e, &mut self.scratch_c, &j.state, &j.input, &jx, latent)
            }
            _ => return Err(CellError::StateKind.into()),
        }

        let y = self.runtime.features(&policy.cell);
        let lp = policy.head.forward(&y).grad_log_prob(action)?;
        let neg: Vec<f64> = lp.output_grad.iter().map(|g| -g).collect();
        policy.head.param_grad_into(&neg, &y, &mut grads.head);
        let gy = policy.head.feature_grad(&neg);
        self.runtime
            .accumulate_grad(&policy.cell, &gy, &mut grads.cell);
        match (&self.enc, &policy.cell) {
            (EncoderTrace::Complex(e), CellParams::Lru(p)) => {
                contract_encoder_trace(e, &p.readout_covector(&gy), &mut grads.encoder);
                let gx = matvec_t(p.d_skip(), p.output_dim(), p.input_dim(), &gy);
                let pe = grads.encoder.len();
                for (l, &g) in gx.iter().enumerate() {
                    for (o, &j) in grads.encoder.iter_mut().zip(&jx[l * pe..(l + 1) * pe]) {
                        *o += g * j;
                    }
                }
            }
            (EncoderTrace::Real(e), _) => contract_encoder_trace(e, &gy, &mut grads.encoder),
            _ => return Err(CellError::StateKind.into()),
        }

        let dec = ae.decode_cached(x);
        let diff: Vec<f64> = dec.recon.iter().zip(obs).map(|(r, o)| r - o).collect();
        let rec = norm2(&diff);
        if eta_rec > 0.0 && rec > 0.0 {
            let g: Vec<f64> = diff.iter().map(|d| eta_rec * d / rec).collect();
            let gx = ae.decoder_vjp(x, &dec, &g, &mut grads.decoder);
            ae.encoder_vjp(obs, &enc, &gx, &mut grads.encoder);
        }
        Ok(StepLoss {
            nll: -lp.log_prob,
            rec,
        })
    }
}

/// Mean loss over a window started from the zero state, and its gradient
/// with all parameters held fixed.
pub fn bc_loss(
    policy: &PretrainedPolicy,
    episode: &DemoEpisode,
    eta_rec: f64,
) -> Result<(f64, BcGrads), BcError> {
    if episode.is_empty() {
        return Err(BcError::EmptyDataset);
    }
    let mut seq = BcSequence::new(policy)?;
    let mut grads = BcGrads::zeros(policy);
    let mut total = 0.0;
    for (o, a) in episode.observations.iter().zip(&episode.actions) {
        total += seq.step(policy, o, a, eta_rec, &mut grads)?.total(eta_rec);
    }
    let inv = 1.0 / episode.len() as f64;
    grads.scale(inv);
    Ok((total * inv, grads))
}

/// Pulls each action component into `(−s(1 − m), s(1 − m))`. Returns the
/// number of components moved.
pub fn clamp_demo_actions(episode: &mut DemoEpisode, action_scale: &[f64]) -> usize {
    let mut moved = 0;
    for a in &mut episode.actions {
        for (v, &s) in a.iter_mut().zip(action_scale) {
            let b = s * (1.0 - DEMO_ACTION_MARGIN);
            let c = v.clamp(-b, b);
            if c != *v {
                *v = c;
                moved += 1;
            }
        }
    }
    moved
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Per-epoch loss record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_nll: f64,
    pub val_rec: f64,
}

/// Aggregate imitation metrics over a set of episodes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BcMetrics {
    /// Mean over episodes of the per-step negative log-likelihood.
    pub mean_nll: f64,
    /// Mean over episodes of the per-step squared error of the mode action.
    pub mode_mse: f64,
    pub mean_rec: f64,
    pub per_episode: Vec<(f64, f64)>,
}

/// Rolls the policy over each episode without touching its parameters.
pub fn evaluate_bc(
    policy: &PretrainedPolicy,
    episodes: &[DemoEpisode],
) -> Result<BcMetrics, BcError> {
    let mut per_episode = Vec::with_capacity(episodes.len());
    let mut rec_sum = 0.0;
    for ep in episodes.iter().filter(|e| !e.is_empty()) {
        let mut ep = ep.clone();
        clamp_demo_actions(&mut ep, policy.head.action_scale());
        let mut h = HiddenState::zeros(policy.cell.kind(), policy.cell.hidden_dim());
        let (mut nll, mut mse, mut rec) = (0.0, 0.0, 0.0);
        for (o, a) in ep.observations.iter().zip(&ep.actions) {
            let dist = policy.act(&mut h, o)?;
            nll -= dist.log_prob(a)?;
            mse += dist
                .mode()
                .iter()
                .zip(a)
                .map(|(m, a)| (m - a) * (m - a))
                .sum::<f64>()
                / a.len() as f64;
            let x = policy.autoencoder.encode(o);
            let r = policy.autoencoder.decode(&x);
            rec += r
                .iter()
                .zip(o)
                .map(|(r, o)| (r - o) * (r - o))
                .sum::<f64>()
                .sqrt();
        }
        let t = ep.len() as f64;
        per_episode.push((nll / t, mse / t));
        rec_sum += rec / t;
    }
    if per_episode.is_empty() {
        return Err(BcError::EmptyDataset);
    }
    let k = per_episode.len() as f64;
    Ok(BcMetrics {
        mean_nll: per_episode.iter().map(|p| p.0).sum::<f64>() / k,
        mode_mse: per_episode.iter().map(|p| p.1).sum::<f64>() / k,
        mean_rec: rec_sum / k,
        per_episode,
    })
}

/// Deterministic train/validation split. Whole episodes are held out when
/// there are at least two; a single episode is cut in time instead.
pub fn split_dataset(
    dataset: &DemoDataset,
    val_fraction: f64,
    seed: u64,
) -> (Vec<DemoEpisode>, Vec<DemoEpisode>) {
    let eps: Vec<&DemoEpisode> = dataset.episodes.iter().filter(|e| !e.is_empty()).collect();
    if eps.len() == 1 {
        let ep = eps[0];
        let cut = ((ep.len() as f64) * (1.0 - val_fraction)).round() as usize;
        let cut = cut.clamp(1, ep.len().saturating_sub(1).max(1));
        let val = if cut < ep.len() {
            vec![ep.slice(cut, ep.len())]
        } else {
            Vec::new()
        };
        return (vec![ep.slice(0, cut)], val);
    }
    let mut idx: Vec<usize> = (0..eps.len()).collect();
    idx.shuffle(&mut rng_for(seed, &[tag("split")]));
    let n_val = ((eps.len() as f64) * val_fraction)
        .round()
        .clamp(1.0, (eps.len() - 1) as f64) as usize;
    let (val, train) = idx.split_at(n_val);
    let mut train = train.to_vec();
    let mut val = val.to_vec();
    train.sort_unstable();
    val.sort_unstable();
    (
        train.iter().map(|&i| eps[i].clone()).collect(),
        val.iter().map(|&i| eps[i].clone()).collect(),
    )
}

/// Fresh policy for `spec`: `spec.input_dim` is the latent width.
pub fn init_policy(
    spec: &CellSpec,
    obs_dim: usize,
    action_scale: Vec<f64>,
    config: &BcConfig,
) -> Result<PretrainedPolicy, BcError> {
    spec.validate()?;
    let autoencoder = Autoencoder::init(
        obs_dim,
        config.encoder_hidden,
        spec.input_dim,
        &mut rng_for(config.seed, &[tag("encoder")]),
    );
    let cell = CellParams::init(spec, derive_seed(config.seed, &[tag("cell")]));
    let head = ActorHead::init(
        spec.feature_dim(),
        action_scale,
        &mut rng_for(config.seed, &[tag("actor_head")]),
    );
    let policy = PretrainedPolicy {
        autoencoder,
        cell,
        dt: spec.dt,
        head,
    };
    policy.validate()?;
    Ok(policy)
}

/// Epoch-by-epoch behavioral cloning.
#[derive(Clone, Debug)]
pub struct Pretrainer {
    config: BcConfig,
    policy: PretrainedPolicy,
    train: Vec<DemoEpisode>,
    val: Vec<DemoEpisode>,
    adam: Adam,
    curve: Vec<EpochLoss>,
}

impl Pretrainer {
    pub fn new(dataset: &DemoDataset, spec: &CellSpec, config: &BcConfig) -> Result<Self, BcError> {
        config.validate()?;
        dataset.validate().map_err(BcError::Dataset)?;
        if dataset.total_steps() == 0 {
            return Err(BcError::EmptyDataset);
        }
        let policy = init_policy(
            spec,
            dataset.meta.obs_dim,
            dataset.meta.action_scale.clone(),
            config,
        )?;
        let (mut train, mut val) = split_dataset(dataset, config.val_fraction, config.seed);
        let moved: usize = train
            .iter_mut()
            .chain(val.iter_mut())
            .map(|e| clamp_demo_actions(e, &dataset.meta.action_scale))
            .sum();
        if moved > 0 {
            warn!("{moved} demonstration action components at the bound were pulled inside the open interval");
        }
        let adam = Adam::new(flatten_params(&policy).len(), config.learning_rate);
        Ok(Self {
            config: config.clone(),
            policy,
            train,
            val,
            adam,
            curve: Vec::new(),
        })
    }

    pub fn policy(&self) -> &PretrainedPolicy {
        &self.policy
    }

    pub fn curve(&self) -> &[EpochLoss] {
        &self.curve
    }

    pub fn train_split(&self) -> &[DemoEpisode] {
        &self.train
    }

    pub fn val_split(&self) -> &[DemoEpisode] {
        &self.val
    }

    pub fn epochs_done(&self) -> usize {
        self.curve.len()
    }

    fn apply(&mut self, grads: &mut BcGrads, count: usize) {
        grads.scale(1.0 / count as f64);
        let mut flat = grads.flatten();
        let n = norm2(&flat);
        if n > self.config.clip_norm {
            let s = self.config.clip_norm / n;
            flat.iter_mut().for_each(|g| *g *= s);
        }
        let mut params = flatten_params(&self.policy);
        self.adam.step(&mut params, &flat);
        write_params(&mut self.policy, &params);
        grads.fill_zero();
    }

    /// One pass over the training split followed by validation.
    pub fn run_epoch(&mut self) -> Result<EpochLoss, BcError> {
        let epoch = self.curve.len();
        let eta = self.config.eta_rec;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng_for(
            self.config.seed,
            &[tag("epoch"), epoch as u64],
        ));
        let mut seq = BcSequence::new(&self.policy)?;
        let mut grads = BcGrads::zeros(&self.policy);
        let (mut total, mut steps) = (0.0, 0usize);
        for &e in &order {
            seq.reset();
            let mut pending = 0;
            for t in 0..self.train[e].len() {
                let ep = &self.train[e];
                let loss = seq
                    .step(
                        &self.policy,
                        &ep.observations[t],
                        &ep.actions[t],
                        eta,
                        &mut grads,
                    )?
                    .total(eta);
                if !loss.is_finite() {
                    return Err(BcError::Diverged {
                        epoch,
                        step: steps,
                        loss,
                    });
                }
                total += loss;
                steps += 1;
                pending += 1;
                if pending == self.config.window {
                    self.apply(&mut grads, pending);
                    pending = 0;
                }
            }
            if pending > 0 {
                self.apply(&mut grads, pending);
            }
        }
        let train_loss = total / steps.max(1) as f64;
        let (val_nll, val_rec) = if self.val.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let m = evaluate_bc(&self.policy, &self.val)?;
            (m.mean_nll, m.mean_rec)
        };
        let val_loss = val_nll + eta * val_rec;
        if !train_loss.is_finite() || !(self.val.is_empty() || val_loss.is_finite()) {
            return Err(BcError::Diverged {
                epoch,
                step: steps,
                loss: train_loss,
            });
        }
        let rec = EpochLoss {
            epoch,
            train_loss,
            val_loss,
            val_nll,
            val_rec,
        };
        self.curve.push(rec);
        Ok(rec)
    }

    pub fn into_parts(self) -> (PretrainedPolicy, Vec<EpochLoss>) {
        (self.policy, self.curve)
    }
}

/// Runs all configured epochs.
pub fn pretrain(
    dataset: &DemoDataset,
    spec: &CellSpec,
    config: &BcConfig,
) -> Result<(PretrainedPolicy, Vec<EpochLoss>), BcError> {
    let mut trainer = Pretrainer::new(dataset, spec, config)?;
    for _ in 0..config.epochs {
        trainer.run_epoch()?;
    }
    Ok(trainer.into_parts())
}
