use serde::{Deserialize, Serialize};

use super::{epoch_batches, gather, standard_normal, tensor_to_matrix, OversampleError, TrainTrace};
use crate::data::Matrix;
use crate::nn::{AdamConfig, AdamState, Bound, Init, Linear, Mlp, NnError, ParamStore};
use crate::rng;
use crate::tensor::{Activation, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TvaeConfig {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub beta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub min_rows_per_epoch: usize,
}

impl Default for TvaeConfig {
    fn default() -> Self {
        TvaeConfig {
            latent_dim: 16,
            hidden_dim: 64,
            beta: 1.0,
            lr: 1e-3,
            batch_size: 64,
            epochs: 300,
            min_rows_per_epoch: 1024,
        }
    }
}

/// `0.5 * sum(mu^2 + sigma^2 - 1 - ln sigma^2)` for one latent vector.
pub fn kl_standard_normal(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu.iter().zip(logvar).map(|(m, lv)| m * m + lv.exp() - 1.0 - lv).sum::<f64>()
}

/// Encoder `F -> hidden -> (mu, logvar)` and decoder `latent -> hidden -> F`.
#[derive(Debug, Clone)]
pub struct TvaeModel {
    pub config: TvaeConfig,
    pub n_features: usize,
    pub params: ParamStore,
    encoder: Linear,
    mu_head: Linear,
    logvar_head: Linear,
    decoder: Mlp,
}

impl TvaeModel {
    pub fn new(config: &TvaeConfig, n_features: usize, seed: u64) -> Result<Self, OversampleError> {
        if n_features == 0 || config.latent_dim == 0 || config.hidden_dim == 0 || config.batch_size == 0 {
            return Err(OversampleError::Config("TVAE widths and batch size must be positive".into()));
        }
        let mut init = Init::new(seed);
        let mut s = ParamStore::new();
        let (h, l) = (config.hidden_dim, config.latent_dim);
        Ok(TvaeModel {
            encoder: Linear::new(&mut s, "vae.encoder", n_features, h, &mut init),
            mu_head: Linear::new(&mut s, "vae.mu", h, l, &mut init),
            logvar_head: Linear::new(&mut s, "vae.logvar", h, l, &mut init),
            decoder: Mlp::new(&mut s, "vae.decoder", &[l, h, n_features], Activation::Relu, &mut init),
            config: config.clone(),
            n_features,
            params: s,
        })
    }

    fn encode(&self, tape: &mut Tape<f32>, p: &Bound, x: Var) -> Result<(Var, Var), NnError> {
        let h = self.encoder.forward(tape, p, x)?;
        let h = tape.relu(h);
        Ok((self.mu_head.forward(tape, p, h)?, self.logvar_head.forward(tape, p, h)?))
    }

    /// Batch mean of the closed-form KL term.
    fn kl(&self, tape: &mut Tape<f32>, mu: Var, logvar: Var) -> Result<Var, NnError> {
        let b = tape.shape(mu)[0] as f64;
        let mu2 = tape.mul(mu, mu)?;
        let var = tape.exp(logvar);
        let s = tape.add(mu2, var)?;
        let s = tape.sub(s, logvar)?;
        let total = tape.sum(s);
        let kl = tape.scale(total, 0.5 / b);
        Ok(tape.add_scalar(kl, -0.5 * self.config.latent_dim as f64))
    }

    /// `(loss, reconstruction, kl)` where reconstruction is the per-row
    /// sum of squared errors averaged over the batch.
    fn step(&mut self, adam: &mut AdamState, x: Tensor, eps: Tensor) -> Result<[f64; 3], NnError> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, true);
        let xv = tape.constant(x);
        let (mu, logvar) = self.encode(&mut tape, &p, xv)?;
        let half = tape.scale(logvar, 0.5);
        let sigma = tape.exp(half);
        let e = tape.constant(eps);
        let noise = tape.mul(sigma, e)?;
        let z = tape.add(mu, noise)?;
        let rec = self.decoder.forward(&mut tape, &p, z)?;
        let mse = tape.mse(rec, xv)?;
        let recon = tape.scale(mse, self.n_features as f64);
        let kl = self.kl(&mut tape, mu, logvar)?;
        let weighted = tape.scale(kl, self.config.beta);
        let loss = tape.add(recon, weighted)?;
        tape.backward(loss)?;
        let out = [loss, recon, kl].map(|v| tape.value(v).item() as f64);
        let grads = p.take_grads(&mut tape);
        adam.step(&mut self.params, grads)?;
        Ok(out)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor, OversampleError> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let out = self.decoder.forward(&mut tape, &p, zv)?;
        Ok(tape.value(out).clone())
    }
}

/// Minimizes `reconstruction + beta * KL` (the negative ELBO) with the
/// reparameterization trick.
pub fn tvae_train(x: &Matrix, cfg: &TvaeConfig, seed: u64) -> Result<(TvaeModel, TrainTrace), OversampleError> {
    if x.rows() == 0 {
        return Err(OversampleError::EmptyMinority);
    }
    let mut model = TvaeModel::new(cfg, x.cols(), rng::derive_seed_str(seed, "tvae.init"))?;
    let mut adam = AdamState::new(
        &model.params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut r = rng::seeded(rng::derive_seed_str(seed, "tvae.train"));
    let mut trace = TrainTrace::new(&["loss", "recon_loss", "kl"]);
    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(x.rows(), cfg.batch_size, cfg.min_rows_per_epoch, &mut r);
        let mut sums = [0.0f64; 3];
        for rows in &batches {
            let eps = standard_normal(&[rows.len(), cfg.latent_dim], &mut r);
            let step = model.step(&mut adam, gather(x, rows), eps)?;
            if step.iter().any(|v| !v.is_finite()) {
                return Err(OversampleError::DivergenceDetected { epoch, trace });
            }
            for (s, v) in sums.iter_mut().zip(step) {
                *s += v;
            }
        }
        let n = batches.len() as f64;
        trace.epochs.push(sums.iter().map(|s| s / n).collect());
    }
    Ok((model, trace))
}

pub fn tvae_sample(model: &TvaeModel, n: usize, seed: u64) -> Result<Matrix, OversampleError> {
    let mut r = rng::seeded(seed);
    let mut out = Matrix::empty(model.n_features);
    let mut left = n;
    while left > 0 {
        let b = left.min(256);
        let z = standard_normal(&[b, model.config.latent_dim], &mut r);
        tensor_to_matrix(&model.decode(&z)?, &mut out);
        left -= b;
    }
    Ok(out)
}
