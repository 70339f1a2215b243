use serde::{Deserialize, Serialize};

use super::{epoch_batches, gather, standard_normal, tensor_to_matrix, OversampleError, TrainTrace};
use crate::data::Matrix;
use crate::nn::{AdamConfig, AdamState, Bound, Init, Linear, Mlp, NnError, ParamId, ParamStore, SeBlock, TransformerEncoderBlock};
use crate::rng::{self, Rng};
use crate::tensor::{Activation, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub num_blocks: usize,
    pub ffn_dim: usize,
    pub se_reduction: usize,
    pub disc_hidden: Vec<usize>,
    pub decoder_hidden: usize,
    pub lambda_rec: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Lower bound on rows drawn per epoch; small minorities are cycled.
    pub min_rows_per_epoch: usize,
    /// Squash generator outputs into `[0, 1]` for min-max scaled data.
    /// Otherwise the networks work on per-feature standardized rows.
    pub sigmoid_output: bool,
    /// Decay of the running average of generator weights that replaces
    /// the raw weights after training; 0 keeps the last iterate.
    pub ema_decay: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            latent_dim: 32,
            model_dim: 16,
            num_heads: 2,
            num_blocks: 2,
            ffn_dim: 32,
            se_reduction: 4,
            disc_hidden: vec![128, 64],
            decoder_hidden: 64,
            lambda_rec: 0.1,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 64,
            epochs: 300,
            min_rows_per_epoch: 512,
            sigmoid_output: false,
            ema_decay: 0.998,
        }
    }
}

#[derive(Debug, Clone)]
struct Generator {
    noise_proj: Linear,
    feature_embeddings: ParamId,
    blocks: Vec<TransformerEncoderBlock>,
    se: SeBlock,
    output_head: Linear,
}

#[derive(Debug, Clone)]
struct Discriminator {
    body: Mlp,
    decoder: Mlp,
}

/// Generator, discriminator and reconstruction decoder with their
/// parameters. The layer layout is a pure function of `(config,
/// n_features)`, so a checkpoint only has to carry the two stores.
#[derive(Debug, Clone)]
pub struct GanTransformerModel {
    pub config: GanConfig,
    pub n_features: usize,
    /// Per-feature mean and standard deviation the networks see data
    /// through; identity when the sigmoid head is on.
    pub data_mean: Vec<f32>,
    pub data_std: Vec<f32>,
    pub generator_params: ParamStore,
    pub discriminator_params: ParamStore,
    generator: Generator,
    discriminator: Discriminator,
}

impl GanTransformerModel {
    pub fn new(config: &GanConfig, n_features: usize, seed: u64) -> Result<Self, OversampleError> {
        if n_features == 0 || config.latent_dim == 0 || config.batch_size == 0 || config.disc_hidden.is_empty() {
            return Err(OversampleError::Config(
                "features, latent_dim, batch_size and disc_hidden must be non-empty".into(),
            ));
        }
        let (t, d) = (n_features, config.model_dim);
        let mut init = Init::new(seed);
        let mut gs = ParamStore::new();
        let noise_proj = Linear::new(&mut gs, "g.noise_proj", config.latent_dim, t * d, &mut init);
        let emb = init.glorot(&[t, d], t, d);
        let feature_embeddings = gs.add("g.feature_embeddings", emb);
        let blocks = (0..config.num_blocks)
            .map(|i| TransformerEncoderBlock::new(&mut gs, &format!("g.block{i}"), d, config.num_heads, config.ffn_dim, &mut init))
            .collect::<Result<Vec<_>, NnError>>()?;
        let se = SeBlock::new(&mut gs, "g.se", d, config.se_reduction, &mut init)?;
        let output_head = Linear::new(&mut gs, "g.output_head", t * d, n_features, &mut init);

        let mut ds = ParamStore::new();
        let mut dims = vec![n_features];
        dims.extend(&config.disc_hidden);
        dims.push(1);
        let body = Mlp::new(&mut ds, "d.body", &dims, Activation::LeakyRelu, &mut init);
        let penultimate = *config.disc_hidden.last().expect("checked non-empty");
        let decoder = Mlp::new(&mut ds, "d.decoder", &[penultimate, config.decoder_hidden, n_features], Activation::Relu, &mut init);
        Ok(GanTransformerModel {
            config: config.clone(),
            n_features,
            data_mean: vec![0.0; n_features],
            data_std: vec![1.0; n_features],
            generator_params: gs,
            discriminator_params: ds,
            generator: Generator {
                noise_proj,
                feature_embeddings,
                blocks,
                se,
                output_head,
            },
            discriminator: Discriminator { body, decoder },
        })
    }

    /// `z: [B, latent]` to rows `[B, n_features]`.
    fn generate(&self, tape: &mut Tape<f32>, p: &Bound, z: Var) -> Result<Var, NnError> {
        let g = &self.generator;
        let b = tape.shape(z)[0];
        let (t, d) = (self.n_features, self.config.model_dim);
        let h = g.noise_proj.forward(tape, p, z)?;
        let h = tape.reshape(h, &[b, t, d])?;
        let mut h = tape.add(h, p.var(g.feature_embeddings))?;
        for block in &g.blocks {
            h = block.forward(tape, p, h)?;
        }
        let h = g.se.forward(tape, p, h)?;
        let h = tape.reshape(h, &[b, t * d])?;
        let out = g.output_head.forward(tape, p, h)?;
        Ok(if self.config.sigmoid_output { tape.sigmoid(out) } else { out })
    }

    /// Returns `(logits [B, 1], penultimate features)`.
    fn discriminate(&self, tape: &mut Tape<f32>, p: &Bound, x: Var) -> Result<(Var, Var), NnError> {
        self.discriminator.body.forward_with_features(tape, p, x)
    }

    /// Fits the data standardization on the minority rows.
    fn fit_scaling(&mut self, x: &Matrix) {
        if self.config.sigmoid_output {
            return;
        }
        let mean = x.column_means();
        let n = x.rows() as f64;
        for c in 0..x.cols() {
            let var = x.iter_rows().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n;
            self.data_mean[c] = mean[c] as f32;
            self.data_std[c] = if var > 1e-12 { var.sqrt() as f32 } else { 1.0 };
        }
    }

    /// Raw rows to the scale the networks work in.
    pub fn to_model_space(&self, t: &Tensor) -> Tensor {
        let mut out = t.clone();
        for row in out.data_mut().chunks_exact_mut(self.n_features) {
            for ((v, m), s) in row.iter_mut().zip(&self.data_mean).zip(&self.data_std) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    fn to_data_space(&self, mut t: Tensor) -> Tensor {
        for row in t.data_mut().chunks_exact_mut(self.n_features) {
            for ((v, m), s) in row.iter_mut().zip(&self.data_mean).zip(&self.data_std) {
                *v = *v * s + m;
            }
        }
        t
    }

    /// Generator output in model space, computed without gradients.
    fn generate_model_space(&self, z: &Tensor) -> Result<Tensor, OversampleError> {
        let mut tape = Tape::new();
        let p = self.generator_params.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let out = self.generate(&mut tape, &p, zv)?;
        Ok(tape.value(out).clone())
    }

    /// Generator rows in data space for the given noise.
    pub fn generate_from(&self, z: &Tensor) -> Result<Tensor, OversampleError> {
        Ok(self.to_data_space(self.generate_model_space(z)?))
    }

    /// Logits for rows given in data space.
    pub fn discriminator_logits(&self, x: &Tensor) -> Result<Tensor, OversampleError> {
        let mut tape = Tape::new();
        let p = self.discriminator_params.bind(&mut tape, false);
        let xv = tape.constant(self.to_model_space(x));
        let (logits, _) = self.discriminate(&mut tape, &p, xv)?;
        Ok(tape.value(logits).clone())
    }

    /// Mean BCE of real rows against 1 and fake rows against 0, which is
    /// ln 2 when every logit is 0. Rows are in data space.
    pub fn discriminator_loss(&self, real: &Tensor, fake: &Tensor) -> Result<f64, OversampleError> {
        let mut tape = Tape::new();
        let p = self.discriminator_params.bind(&mut tape, false);
        let r = tape.constant(self.to_model_space(real));
        let f = tape.constant(self.to_model_space(fake));
        let loss = self.adversarial_d_loss(&mut tape, &p, r, f)?.0;
        Ok(tape.value(loss).item() as f64)
    }

    /// Share of rows the discriminator classifies correctly at logit 0.
    pub fn discriminator_accuracy(&self, real: &Matrix, fake: &Matrix) -> Result<f64, OversampleError> {
        let all_r: Vec<usize> = (0..real.rows()).collect();
        let all_f: Vec<usize> = (0..fake.rows()).collect();
        let lr = self.discriminator_logits(&gather(real, &all_r))?;
        let lf = self.discriminator_logits(&gather(fake, &all_f))?;
        let hits = lr.data().iter().filter(|&&l| l >= 0.0).count() + lf.data().iter().filter(|&&l| l < 0.0).count();
        Ok(hits as f64 / (real.rows() + fake.rows()).max(1) as f64)
    }

    /// `(adversarial loss, features of the fake rows)`.
    fn adversarial_d_loss(&self, tape: &mut Tape<f32>, p: &Bound, real: Var, fake: Var) -> Result<(Var, Var), NnError> {
        let (lr, _) = self.discriminate(tape, p, real)?;
        let (lf, feat) = self.discriminate(tape, p, fake)?;
        let ones = tape.constant(Tensor::ones(tape.shape(lr)));
        let zeros = tape.constant(Tensor::zeros(tape.shape(lf)));
        let a = tape.bce_with_logits(lr, ones)?;
        let b = tape.bce_with_logits(lf, zeros)?;
        let s = tape.add(a, b)?;
        Ok((tape.scale(s, 0.5), feat))
    }

    fn reconstruction(&self, tape: &mut Tape<f32>, p: &Bound, features: Var, target: Var) -> Result<Var, NnError> {
        let rec = self.discriminator.decoder.forward(tape, p, features)?;
        Ok(tape.mse(rec, target)?)
    }

    /// One discriminator update. Returns `(adversarial, reconstruction)`.
    fn d_step(&mut self, adam: &mut AdamState, real: Tensor, fake: Tensor) -> Result<(f64, f64), NnError> {
        let mut tape = Tape::new();
        let p = self.discriminator_params.bind(&mut tape, true);
        let r = tape.constant(real);
        let f = tape.constant(fake);
        let (adv, feat) = self.adversarial_d_loss(&mut tape, &p, r, f)?;
        let rec = self.reconstruction(&mut tape, &p, feat, f)?;
        let weighted = tape.scale(rec, self.config.lambda_rec);
        let loss = tape.add(adv, weighted)?;
        tape.backward(loss)?;
        let out = (tape.value(adv).item() as f64, tape.value(rec).item() as f64);
        let grads = p.take_grads(&mut tape);
        adam.step(&mut self.discriminator_params, grads)?;
        Ok(out)
    }

    /// One generator update with the non-saturating loss. Returns
    /// `(adversarial, reconstruction)`.
    fn g_step(&mut self, adam: &mut AdamState, z: Tensor) -> Result<(f64, f64), NnError> {
        let mut tape = Tape::new();
        let gp = self.generator_params.bind(&mut tape, true);
        let dp = self.discriminator_params.bind(&mut tape, false);
        let zv = tape.constant(z);
        let fake = self.generate(&mut tape, &gp, zv)?;
        let (logits, feat) = self.discriminate(&mut tape, &dp, fake)?;
        let ones = tape.constant(Tensor::ones(tape.shape(logits)));
        let adv = tape.bce_with_logits(logits, ones)?;
        let rec = self.reconstruction(&mut tape, &dp, feat, fake)?;
        let weighted = tape.scale(rec, self.config.lambda_rec);
        let loss = tape.add(adv, weighted)?;
        tape.backward(loss)?;
        let out = (tape.value(adv).item() as f64, tape.value(rec).item() as f64);
        let grads = gp.take_grads(&mut tape);
        adam.step(&mut self.generator_params, grads)?;
        Ok(out)
    }
}

/// Alternating one-D-step, one-G-step training on the minority rows.
pub fn gan_train(x: &Matrix, cfg: &GanConfig, seed: u64) -> Result<(GanTransformerModel, TrainTrace), OversampleError> {
    if x.rows() == 0 {
        return Err(OversampleError::EmptyMinority);
    }
    let mut model = GanTransformerModel::new(cfg, x.cols(), rng::derive_seed_str(seed, "gan.init"))?;
    model.fit_scaling(x);
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        ..AdamConfig::default()
    };
    let mut adam_g = AdamState::new(&model.generator_params, adam_cfg);
    let mut adam_d = AdamState::new(&model.discriminator_params, adam_cfg);
    let mut r = rng::seeded(rng::derive_seed_str(seed, "gan.train"));
    if !(0.0..1.0).contains(&cfg.ema_decay) {
        return Err(OversampleError::Config(format!("ema_decay must lie in [0, 1), got {}", cfg.ema_decay)));
    }
    let mut ema = model.generator_params.clone();
    let mut trace = TrainTrace::new(&["g_loss", "d_loss", "recon_loss"]);
    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(x.rows(), cfg.batch_size, cfg.min_rows_per_epoch, &mut r);
        let mut sums = [0.0f64; 3];
        for rows in &batches {
            let b = rows.len();
            let real = model.to_model_space(&gather(x, rows));
            let fake = model.generate_model_space(&standard_normal(&[b, cfg.latent_dim], &mut r))?;
            let (d_adv, d_rec) = model.d_step(&mut adam_d, real, fake)?;
            let (g_adv, g_rec) = model.g_step(&mut adam_g, standard_normal(&[b, cfg.latent_dim], &mut r))?;
            let (keep, take) = (cfg.ema_decay as f32, 1.0 - cfg.ema_decay as f32);
            for (e, w) in ema.tensors_mut().iter_mut().zip(model.generator_params.tensors()) {
                for (a, v) in e.data_mut().iter_mut().zip(w.data()) {
                    *a = keep * *a + take * v;
                }
            }
            let step = [g_adv, d_adv, 0.5 * (d_rec + g_rec)];
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
    model.generator_params = ema;
    Ok((model, trace))
}

const SAMPLE_BATCH: usize = 256;

/// `n` generator rows from `z ~ N(0, I)`.
pub fn gan_sample(model: &GanTransformerModel, n: usize, seed: u64) -> Result<Matrix, OversampleError> {
    let mut r: Rng = rng::seeded(seed);
    let mut out = Matrix::empty(model.n_features);
    let mut left = n;
    while left > 0 {
        let b = left.min(SAMPLE_BATCH);
        let z = standard_normal(&[b, model.config.latent_dim], &mut r);
        tensor_to_matrix(&model.generate_from(&z)?, &mut out);
        left -= b;
    }
    Ok(out)
}
