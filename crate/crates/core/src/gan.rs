//! WGAN-GP on encoded tabular rows: generator/critic initialization, the
//! gradient-penalty term (computed with exact input-gradients and
//! differentiable with respect to the critic weights), the local training
//! loop, and synthetic-row sampling.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::metadata::{decode, EncodedMatrix, EncodingLayout, GlobalMetadata};
use crate::nn::{self, Head};
use crate::seeding;
use crate::tabular::Dataset;
use crate::weights::WeightSet;

/// Hyperparameters of one WGAN-GP generator/critic pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub noise_dim: usize,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub lambda_gp: f64,
    pub n_critic: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            noise_dim: 64,
            gen_hidden: vec![128, 128],
            disc_hidden: vec![128, 128],
            lambda_gp: 10.0,
            n_critic: 5,
            batch_size: 64,
            learning_rate: 1e-4,
            adam_beta1: 0.0,
            adam_beta2: 0.9,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.noise_dim == 0 || self.batch_size == 0 || self.n_critic == 0 {
            return Err(Error::Config(
                "noise_dim, batch_size, and n_critic must be positive".into(),
            ));
        }
        if self.gen_hidden.iter().chain(&self.disc_hidden).any(|&w| w == 0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if !(self.lambda_gp > 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::Config(
                "lambda_gp and learning_rate must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Generator and critic weights for one class label.
#[derive(Debug, Clone, PartialEq)]
pub struct GanPair {
    pub generator: WeightSet,
    pub discriminator: WeightSet,
}

impl GanPair {
    /// Pack both networks into one weight set for federated exchange.
    pub fn to_weightset(&self) -> WeightSet {
        self.generator
            .with_prefix("generator.")
            .concat(self.discriminator.with_prefix("discriminator."))
    }

    pub fn from_weightset(ws: &WeightSet) -> GanPair {
        GanPair {
            generator: ws.strip_prefix("generator."),
            discriminator: ws.strip_prefix("discriminator."),
        }
    }
}

/// Losses and step counts of one local training call.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrainStats {
    pub critic_loss: f64,
    pub generator_loss: f64,
    pub critic_steps: usize,
    pub generator_steps: usize,
}

/// Initialize a generator/critic pair for the given feature layout. The
/// generator maps noise to the encoded feature width and carries the encoded
/// output head; the critic maps features to one unbounded score.
pub fn init_gan(cfg: &GanConfig, layout: &EncodingLayout, seed: u64) -> Result<GanPair> {
    cfg.validate()?;
    if layout.width() == 0 {
        return Err(Error::Contract("feature width must be positive".into()));
    }
    let mut gen_dims = vec![cfg.noise_dim];
    gen_dims.extend(&cfg.gen_hidden);
    gen_dims.push(layout.width());
    let mut disc_dims = vec![layout.width()];
    disc_dims.extend(&cfg.disc_hidden);
    disc_dims.push(1);
    Ok(GanPair {
        generator: nn::init_mlp(&gen_dims, seeding::derive_seed(seed, &[0])),
        discriminator: nn::init_mlp(&disc_dims, seeding::derive_seed(seed, &[1])),
    })
}

/// Generator forward pass (encoded head applied).
pub fn generator_forward(gen: &WeightSet, noise: &Array2<f64>, layout: &EncodingLayout) -> Array2<f64> {
    nn::forward_array(gen, noise, Head::Encoded(layout))
}

/// Critic forward pass: one score per row.
pub fn critic_forward(disc: &WeightSet, x: &Array2<f64>) -> Array2<f64> {
    nn::forward_array(disc, x, Head::Linear)
}

/// Exact gradient of the critic score with respect to its input, one row per
/// input row. Exposed for the finite-difference checks.
pub fn critic_input_gradient(disc: &WeightSet, x: &Array2<f64>) -> Array2<f64> {
    let mut tape = Tape::new();
    let params = nn::params_on_tape(&mut tape, disc);
    let xn = tape.leaf(x.clone());
    let scores = nn::forward_tape(&mut tape, xn, &params, Head::Linear);
    // Rows are independent, so the gradient of the summed scores stacks the
    // per-row input gradients.
    let s = tape.sum_all(scores);
    let g = tape.backward(s, &[xn])[0];
    tape.value(g).clone()
}

/// Build the penalty node on `tape`: mean over rows of
/// `(||d D(x_hat) / d x_hat||_2 - 1)^2` with `x_hat` already materialized.
fn penalty_on_tape(
    tape: &mut Tape,
    disc_params: &[crate::autodiff::NodeId],
    xhat: crate::autodiff::NodeId,
) -> crate::autodiff::NodeId {
    let scores = nn::forward_tape(tape, xhat, disc_params, Head::Linear);
    let s = tape.sum_all(scores);
    let gx = tape.backward(s, &[xhat])[0];
    let sq = tape.mul(gx, gx);
    let row_sq = tape.sum_cols(sq);
    let norm = tape.sqrt(row_sq);
    let centered = tape.add_scalar(norm, -1.0);
    let pen = tape.mul(centered, centered);
    tape.mean_all(pen)
}

fn mix_batches(real: &Array2<f64>, fake: &Array2<f64>, mix: &[f64]) -> Array2<f64> {
    let mut xhat = Array2::zeros(real.raw_dim());
    for i in 0..real.nrows() {
        let e = mix[i];
        for j in 0..real.ncols() {
            xhat[[i, j]] = e * real[[i, j]] + (1.0 - e) * fake[[i, j]];
        }
    }
    xhat
}

/// Gradient penalty value for a batch of real/fake rows and per-row mixing
/// coefficients.
pub fn gradient_penalty(
    disc: &WeightSet,
    real: &Array2<f64>,
    fake: &Array2<f64>,
    mix: &[f64],
) -> Result<f64> {
    if real.dim() != fake.dim() {
        return Err(Error::Contract(format!(
            "real batch {:?} and fake batch {:?} differ in shape",
            real.dim(),
            fake.dim()
        )));
    }
    if mix.len() != real.nrows() {
        return Err(Error::Contract(format!(
            "need one mix coefficient per row: {} != {}",
            mix.len(),
            real.nrows()
        )));
    }
    if mix.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::Contract("mix coefficients must lie in [0, 1]".into()));
    }
    if nn::input_width(disc) != real.ncols() {
        return Err(Error::Contract(format!(
            "critic input width {} does not match batch width {}",
            nn::input_width(disc),
            real.ncols()
        )));
    }

    let xhat = mix_batches(real, fake, mix);
    let mut tape = Tape::new();
    let params = nn::params_on_tape(&mut tape, disc);
    let xn = tape.leaf(xhat);
    let pen = penalty_on_tape(&mut tape, &params, xn);
    Ok(tape.value(pen)[[0, 0]])
}

/// One Adam update of the critic on a real batch. Returns the critic loss.
fn critic_step(
    disc: &mut WeightSet,
    adam: &mut nn::Adam,
    gen: &WeightSet,
    real: &Array2<f64>,
    layout: &EncodingLayout,
    cfg: &GanConfig,
    rng: &mut impl Rng,
) -> f64 {
    let m = real.nrows();
    let noise = sample_noise(m, cfg.noise_dim, rng);
    let fake = generator_forward(gen, &noise, layout);
    let mix: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..=1.0)).collect();
    let xhat = mix_batches(real, &fake, &mix);

    let mut tape = Tape::new();
    let params = nn::params_on_tape(&mut tape, disc);
    let real_n = tape.leaf(real.clone());
    let fake_n = tape.leaf(fake);
    let xhat_n = tape.leaf(xhat);

    let d_real = nn::forward_tape(&mut tape, real_n, &params, Head::Linear);
    let d_fake = nn::forward_tape(&mut tape, fake_n, &params, Head::Linear);
    let mean_real = tape.mean_all(d_real);
    let mean_fake = tape.mean_all(d_fake);
    let gp = penalty_on_tape(&mut tape, &params, xhat_n);

    let wdist = tape.sub(mean_fake, mean_real);
    let gp_term = tape.scale(gp, cfg.lambda_gp);
    let loss = tape.add(wdist, gp_term);

    let grads = tape.backward(loss, &params);
    let grad_arrays: Vec<Array2<f64>> = grads.iter().map(|&g| tape.value(g).clone()).collect();
    adam.step(disc, &grad_arrays);
    tape.value(loss)[[0, 0]]
}

/// One Adam update of the generator. Returns the generator loss.
fn generator_step(
    gen: &mut WeightSet,
    adam: &mut nn::Adam,
    disc: &WeightSet,
    batch_rows: usize,
    layout: &EncodingLayout,
    cfg: &GanConfig,
    rng: &mut impl Rng,
) -> f64 {
    let noise = sample_noise(batch_rows, cfg.noise_dim, rng);
    let mut tape = Tape::new();
    let gen_params = nn::params_on_tape(&mut tape, gen);
    let disc_params = nn::params_on_tape(&mut tape, disc);
    let noise_n = tape.leaf(noise);
    let fake = nn::forward_tape(&mut tape, noise_n, &gen_params, Head::Encoded(layout));
    let scores = nn::forward_tape(&mut tape, fake, &disc_params, Head::Linear);
    let mean_fake = tape.mean_all(scores);
    let loss = tape.scale(mean_fake, -1.0);
    let grads = tape.backward(loss, &gen_params);
    let grad_arrays: Vec<Array2<f64>> = grads.iter().map(|&g| tape.value(g).clone()).collect();
    adam.step(gen, &grad_arrays);
    tape.value(loss)[[0, 0]]
}

fn sample_noise(rows: usize, dim: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, dim), |_| StandardNormal.sample(rng))
}

/// Train the pair on one node's rows of a single label. Each epoch shuffles
/// the rows and walks them in batches of `min(batch_size, n)`; every batch
/// position runs `n_critic` critic updates followed by one generator update.
pub fn train_local(
    pair: &GanPair,
    rows: &EncodedMatrix,
    epochs: usize,
    cfg: &GanConfig,
    seed: u64,
) -> Result<(GanPair, TrainStats)> {
    cfg.validate()?;
    let n = rows.n_rows();
    if n == 0 {
        return Err(Error::Contract(
            "train_local requires a non-empty row set; zero-count nodes must be excluded by grouping".into(),
        ));
    }
    let layout = &rows.layout;
    if nn::output_width(&pair.generator) != layout.width()
        || nn::input_width(&pair.discriminator) != layout.width()
    {
        return Err(Error::Contract(format!(
            "pair width (gen out {}, disc in {}) does not match encoded width {}",
            nn::output_width(&pair.generator),
            nn::input_width(&pair.discriminator),
            layout.width()
        )));
    }

    let mut gen = pair.generator.clone();
    let mut disc = pair.discriminator.clone();
    if epochs == 0 {
        return Ok((GanPair { generator: gen, discriminator: disc }, TrainStats::default()));
    }

    let mut adam_g = nn::Adam::new(&gen, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
    let mut adam_d = nn::Adam::new(&disc, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
    let mut rng = seeding::rng_from(seed, &[seeding::stage::GAN_LOCAL]);

    let batch = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = TrainStats::default();

    for _ in 0..epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        for chunk in order.chunks(batch) {
            let real = rows.features.select(Axis(0), chunk);
            for _ in 0..cfg.n_critic {
                stats.critic_loss =
                    critic_step(&mut disc, &mut adam_d, &gen, &real, layout, cfg, &mut rng);
                stats.critic_steps += 1;
            }
            stats.generator_loss = generator_step(
                &mut gen,
                &mut adam_g,
                &disc,
                chunk.len(),
                layout,
                cfg,
                &mut rng,
            );
            stats.generator_steps += 1;
        }
    }

    Ok((GanPair { generator: gen, discriminator: disc }, stats))
}

/// Draw `n` synthetic rows from a per-label generator and decode them back to
/// schema rows, attaching `label` as the target value.
pub fn sample(
    gen: &WeightSet,
    n: usize,
    label: &str,
    gm: &GlobalMetadata,
    seed: u64,
) -> Result<Dataset> {
    let label_idx = gm.class_index(label).ok_or_else(|| {
        Error::Contract(format!("label '{label}' is not in the federation's class labels"))
    })?;
    let layout = gm.layout();
    if nn::output_width(gen) != layout.width() {
        return Err(Error::Contract(format!(
            "generator output width {} does not match encoded width {}",
            nn::output_width(gen),
            layout.width()
        )));
    }
    if n == 0 {
        return Ok(Dataset::empty(gm.schema().clone()));
    }
    let noise_dim = nn::input_width(gen);
    let mut rng = seeding::rng_from(seed, &[seeding::stage::SAMPLE]);
    let noise = sample_noise(n, noise_dim, &mut rng);
    let features = generator_forward(gen, &noise, &layout);
    let encoded = EncodedMatrix {
        features,
        labels: vec![label_idx; n],
        layout,
    };
    decode(&encoded, gm)
}
