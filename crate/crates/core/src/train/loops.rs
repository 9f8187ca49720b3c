use rand::seq::index::sample;

use crate::arch::{Discriminator, GanModel, Generator};
use crate::autodiff::{Graph, Var};
use crate::data::{batch_indices, SegmentationSample};
use crate::error::{Error, Result};
use crate::nn::{Bound, DEFAULT_DROPOUT};
use crate::rng::{stream, SeededRng, Stream};
use crate::tensor::Tensor;

use super::rmsprop::{RmspropConfig, RmspropState, RmspropVariant};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Discriminator forepart dropout rate.
    pub dropout: f64,
    /// Weight of the adversarial term in the generator loss.
    pub lambda_adv: f64,
    /// Discriminator optimizer steps per epoch.
    pub d_steps: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 50,
            batch_size: 2,
            dropout: DEFAULT_DROPOUT,
            lambda_adv: 0.1,
            d_steps: 1,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must be in (0, 1), got {v}"));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lambda_adv >= 0.0 && self.lambda_adv.is_finite()) {
            return bad(format!("lambda_adv must be >= 0, got {}", self.lambda_adv));
        }
        crate::autodiff::check_dropout_rate(self.dropout)
    }

    pub fn rmsprop(&self) -> RmspropConfig {
        RmspropConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            variant: RmspropVariant::Standard,
        }
    }
}

/// Per-epoch losses, each the mean over the samples seen in that epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    /// Segmentation BCE plus the weighted adversarial term, if any.
    pub generator_loss: f64,
    pub discriminator_loss: Option<f64>,
    pub segmentation_bce: f64,
    pub adversarial_bce: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Discriminator,
    Generator,
}

/// Parameter fingerprints around one phase of one adversarial epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseEvent {
    pub epoch: usize,
    pub phase: Phase,
    pub optimizer_steps: usize,
    pub trained_before: u64,
    pub trained_after: u64,
    pub frozen_before: u64,
    pub frozen_after: u64,
}

#[derive(Debug, Clone)]
pub struct AdversarialRun {
    pub records: Vec<LossRecord>,
    pub trace: Vec<PhaseEvent>,
}

fn check_dataset(data: &[SegmentationSample], size: Option<(usize, usize)>) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for s in data {
        s.validate()?;
        if let Some(hw) = size {
            if s.size() != hw {
                return Err(Error::mismatch("dataset", &[1, hw.0, hw.1], s.image.shape()));
            }
        }
    }
    Ok(())
}

fn finite_or(loss: f64, epoch: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFiniteLoss { epoch })
    }
}

/// Adversarial term used by the generator phase.
struct Critic<'a> {
    disc: &'a Discriminator<f32>,
    lambda: f64,
    rng: &'a mut SeededRng,
}

struct SampleLoss {
    segmentation: f64,
    adversarial: Option<f64>,
}

/// Forward and backward for one training sample. The returned graph holds
/// the generator gradients for the caller to accumulate.
fn generator_sample(
    gen: &Generator<f32>,
    critic: Option<&mut Critic<'_>>,
    sample: &SegmentationSample,
    scale: f32,
) -> Result<(SampleLoss, Graph<f32>, Bound)> {
    let mut g = Graph::new();
    let p = gen.params().bind(&mut g, true);
    let x = g.constant(sample.image.clone());
    let z = g.constant(sample.mask.clone());
    let logits = gen.forward(&mut g, &p, x)?.logits;
    let seg = g.bce_with_logits(logits, z, None)?;
    let mut total = seg;
    let mut adversarial = None;
    if let Some(c) = critic {
        let pd = c.disc.params().bind(&mut g, false);
        let fake = GanModel::<f32>::pair_from_logits(&mut g, z, logits)?;
        let score = c.disc.forward_logit(&mut g, &pd, fake, c.rng, true)?;
        let one = g.constant(Tensor::ones(&[1])?);
        let adv = g.bce_with_logits(score, one, None)?;
        let weighted = g.mul_scalar(adv, c.lambda as f32)?;
        total = g.add(seg, weighted)?;
        adversarial = Some(g.value(adv).item()? as f64);
    }
    let root = g.mul_scalar(total, scale)?;
    g.backward(root)?;
    let loss = SampleLoss {
        segmentation: g.value(seg).item()? as f64,
        adversarial,
    };
    Ok((loss, g, p))
}

/// Runs one generator epoch over shuffled batches. Returns the epoch means
/// of the total, segmentation and adversarial losses.
fn generator_epoch(
    gen: &mut Generator<f32>,
    opt: &mut RmspropState<f32>,
    mut critic: Option<Critic<'_>>,
    data: &[SegmentationSample],
    cfg: &TrainConfig,
    shuffle: &mut SeededRng,
    epoch: usize,
) -> Result<(f64, f64, Option<f64>)> {
    let batches = batch_indices(data.len(), cfg.batch_size, cfg.shuffle.then_some(shuffle))?;
    let (mut seg_sum, mut adv_sum, mut total_sum) = (0.0, 0.0, 0.0);
    for batch in batches {
        gen.params_mut().zero_grads();
        let scale = 1.0 / batch.len() as f32;
        for i in batch {
            let (l, g, p) = generator_sample(gen, critic.as_mut(), &data[i], scale)?;
            gen.params_mut().accumulate_grads(&g, &p);
            seg_sum += finite_or(l.segmentation, epoch)?;
            total_sum += match (l.adversarial, &critic) {
                (Some(a), Some(c)) => {
                    adv_sum += finite_or(a, epoch)?;
                    l.segmentation + c.lambda * a
                }
                _ => l.segmentation,
            };
        }
        opt.step(gen.params_mut())?;
    }
    gen.params_mut().zero_grads();
    let n = data.len() as f64;
    Ok((total_sum / n, seg_sum / n, critic.is_some().then(|| adv_sum / n)))
}

/// Supervised training with BCE on the masks.
pub fn train_supervised(
    gen: &mut Generator<f32>,
    data: &[SegmentationSample],
    cfg: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    train_supervised_observed(gen, data, cfg, &mut |_| {})
}

/// As [`train_supervised`], calling `observer` after every epoch. On a
/// non-finite loss or gradient the generator is restored to its state after
/// the last finite epoch and the error is returned.
pub fn train_supervised_observed(
    gen: &mut Generator<f32>,
    data: &[SegmentationSample],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&LossRecord),
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    check_dataset(data, None)?;
    let mut opt = RmspropState::new(cfg.rmsprop(), gen.params());
    let mut shuffle = stream(cfg.seed, Stream::Shuffle);
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let snapshot = gen.params().clone();
        match generator_epoch(gen, &mut opt, None, data, cfg, &mut shuffle, epoch) {
            Ok((total, seg, _)) => {
                let rec = LossRecord {
                    epoch,
                    generator_loss: total,
                    discriminator_loss: None,
                    segmentation_bce: seg,
                    adversarial_bce: None,
                };
                observer(&rec);
                records.push(rec);
            }
            Err(e) => {
                *gen.params_mut() = snapshot;
                return Err(e);
            }
        }
    }
    Ok(records)
}

fn discriminator_phase(
    gan: &mut GanModel<f32>,
    opt: &mut RmspropState<f32>,
    data: &[SegmentationSample],
    cfg: &TrainConfig,
    picker: &mut SeededRng,
    dropout: &mut SeededRng,
    epoch: usize,
) -> Result<Option<f64>> {
    if cfg.d_steps == 0 {
        return Ok(None);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    let k = cfg.batch_size.min(data.len());
    for _ in 0..cfg.d_steps {
        gan.discriminator.params_mut().zero_grads();
        let scale = 1.0 / k as f32;
        for i in sample(picker, data.len(), k).into_vec() {
            let s = &data[i];
            let mut g = Graph::new();
            let pg = gan.generator.params().bind(&mut g, false);
            let pd = gan.discriminator.params().bind(&mut g, true);
            let x = g.constant(s.image.clone());
            let z = g.constant(s.mask.clone());
            let logits = gan.generator.forward(&mut g, &pg, x)?.logits;
            let real = GanModel::<f32>::pair(&mut g, z, z)?;
            let fake = GanModel::<f32>::pair_from_logits(&mut g, z, logits)?;
            let d_real = gan.discriminator.forward_logit(&mut g, &pd, real, dropout, true)?;
            let d_fake = gan.discriminator.forward_logit(&mut g, &pd, fake, dropout, true)?;
            let label = |g: &mut Graph<f32>, v: f32| -> Result<Var> { Ok(g.constant(Tensor::full(&[1], v)?)) };
            let (one, zero) = (label(&mut g, 1.0)?, label(&mut g, 0.0)?);
            let l_real = g.bce_with_logits(d_real, one, None)?;
            let l_fake = g.bce_with_logits(d_fake, zero, None)?;
            let both = g.add(l_real, l_fake)?;
            let loss = g.mul_scalar(both, 0.5)?;
            let root = g.mul_scalar(loss, scale)?;
            let value = finite_or(g.value(loss).item()? as f64, epoch)?;
            g.backward(root)?;
            gan.discriminator.params_mut().accumulate_grads(&g, &pd);
            sum += value;
            count += 1;
        }
        opt.step(gan.discriminator.params_mut())?;
    }
    gan.discriminator.params_mut().zero_grads();
    Ok(Some(sum / count as f64))
}

/// Two-phase adversarial training. Each epoch first trains the
/// discriminator on real `(z, z)` versus fake `(z, G(x))` pairs with the
/// generator frozen, then the generator on `BCE(G(x), z) + lambda *
/// BCE(D(z, G(x)), 1)` with the discriminator frozen.
pub fn train_adversarial(gan: &mut GanModel<f32>, data: &[SegmentationSample], cfg: &TrainConfig) -> Result<AdversarialRun> {
    train_adversarial_observed(gan, data, cfg, &mut |_| {})
}

pub fn train_adversarial_observed(
    gan: &mut GanModel<f32>,
    data: &[SegmentationSample],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&LossRecord),
) -> Result<AdversarialRun> {
    cfg.validate()?;
    check_dataset(data, Some(gan.image_size()))?;
    let mut g_opt = RmspropState::new(cfg.rmsprop(), gan.generator.params());
    let mut d_opt = RmspropState::new(cfg.rmsprop(), gan.discriminator.params());
    // Separate streams keep the generator's shuffle order independent of
    // how much randomness the discriminator consumes.
    let mut shuffle = stream(cfg.seed, Stream::Shuffle);
    let mut picker = stream(cfg.seed, Stream::DiscriminatorBatch);
    let mut dropout = stream(cfg.seed, Stream::Dropout);
    let mut run = AdversarialRun {
        records: Vec::with_capacity(cfg.epochs),
        trace: Vec::with_capacity(2 * cfg.epochs),
    };
    for epoch in 0..cfg.epochs {
        let snapshot = (gan.generator.params().clone(), gan.discriminator.params().clone());
        let mut streams = (&mut shuffle, &mut picker, &mut dropout);
        match adversarial_epoch(gan, (&mut g_opt, &mut d_opt), &mut streams, data, cfg, epoch, &mut run.trace) {
            Ok(rec) => {
                observer(&rec);
                run.records.push(rec);
            }
            Err(e) => {
                *gan.generator.params_mut() = snapshot.0;
                *gan.discriminator.params_mut() = snapshot.1;
                return Err(e);
            }
        }
    }
    Ok(run)
}

type Streams<'a> = (&'a mut SeededRng, &'a mut SeededRng, &'a mut SeededRng);

fn adversarial_epoch(
    gan: &mut GanModel<f32>,
    (g_opt, d_opt): (&mut RmspropState<f32>, &mut RmspropState<f32>),
    (shuffle, picker, dropout): &mut Streams<'_>,
    data: &[SegmentationSample],
    cfg: &TrainConfig,
    epoch: usize,
    trace: &mut Vec<PhaseEvent>,
) -> Result<LossRecord> {
    let checksums = |gan: &GanModel<f32>| (gan.generator.params().checksum(), gan.discriminator.params().checksum());
    let (g0, d0) = checksums(gan);
    let d_loss = discriminator_phase(gan, d_opt, data, cfg, picker, dropout, epoch)?;
    let (g1, d1) = checksums(gan);
    trace.push(PhaseEvent {
        epoch,
        phase: Phase::Discriminator,
        optimizer_steps: cfg.d_steps,
        trained_before: d0,
        trained_after: d1,
        frozen_before: g0,
        frozen_after: g1,
    });
    let critic = (cfg.lambda_adv > 0.0).then_some(Critic {
        disc: &gan.discriminator,
        lambda: cfg.lambda_adv,
        rng: dropout,
    });
    let (total, seg, adv) = generator_epoch(&mut gan.generator, g_opt, critic, data, cfg, shuffle, epoch)?;
    let (g2, d2) = checksums(gan);
    trace.push(PhaseEvent {
        epoch,
        phase: Phase::Generator,
        optimizer_steps: data.len().div_ceil(cfg.batch_size),
        trained_before: g1,
        trained_after: g2,
        frozen_before: d1,
        frozen_after: d2,
    });
    Ok(LossRecord {
        epoch,
        generator_loss: total,
        discriminator_loss: d_loss,
        segmentation_bce: seg,
        adversarial_bce: adv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{DiscriminatorDesign, GeneratorSpec, Topology};
    use crate::data::{generate_synthetic, SyntheticStyle};

    fn data(n: usize) -> Vec<SegmentationSample> {
        generate_synthetic(n, 16, 16, 3, SyntheticStyle::Blobs).unwrap()
    }

    fn small_gen(seed: u64) -> Generator<f32> {
        Generator::build(GeneratorSpec::new(Topology::AttentionUnet, 2), seed).unwrap()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            learning_rate: 1e-3,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let mut gen = small_gen(1);
        let before = gen.params().checksum();
        let recs = train_supervised(&mut gen, &data(3), &TrainConfig { learning_rate: 0.0, ..cfg(3) }).unwrap();
        assert_eq!(gen.params().checksum(), before);
        assert!(recs.windows(2).all(|w| w[0].generator_loss == w[1].generator_loss));
    }

    #[test]
    fn supervised_loss_decreases() {
        let mut gen = small_gen(1);
        let recs = train_supervised(&mut gen, &data(4), &cfg(15)).unwrap();
        assert_eq!(recs.len(), 15);
        assert!(recs[14].generator_loss < recs[0].generator_loss);
        assert!(recs.iter().all(|r| r.discriminator_loss.is_none() && r.adversarial_bce.is_none()));
    }

    #[test]
    fn empty_dataset_and_bad_config_are_rejected() {
        let mut gen = small_gen(0);
        assert!(matches!(train_supervised(&mut gen, &[], &cfg(1)), Err(Error::EmptyDataset)));
        let bad = TrainConfig { batch_size: 0, ..cfg(1) };
        assert!(matches!(train_supervised(&mut gen, &data(1), &bad), Err(Error::Config(_))));
    }

    #[test]
    fn repeatable_under_seed() {
        let run = || {
            let mut gen = small_gen(2);
            let recs = train_supervised(&mut gen, &data(3), &cfg(3)).unwrap();
            (recs, gen.params().checksum())
        };
        assert_eq!(run(), run());
    }

    fn gan(seed: u64) -> GanModel<f32> {
        GanModel::build(GeneratorSpec::new(Topology::AttentionUnet, 2), DiscriminatorDesign::D4V, 16, 16, seed).unwrap()
    }

    #[test]
    fn adversarial_without_critic_matches_supervised() {
        let c = TrainConfig {
            lambda_adv: 0.0,
            d_steps: 0,
            ..cfg(4)
        };
        let mut g = gan(7);
        let mut plain = g.generator.clone();
        let adv = train_adversarial(&mut g, &data(3), &c).unwrap();
        let sup = train_supervised(&mut plain, &data(3), &c).unwrap();
        let bits = |r: &[LossRecord]| r.iter().map(|x| x.generator_loss.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&adv.records), bits(&sup));
        assert_eq!(g.generator.params().checksum(), plain.params().checksum());
    }

    #[test]
    fn phases_alternate_and_freeze() {
        let mut g = gan(8);
        let run = train_adversarial(&mut g, &data(3), &TrainConfig { d_steps: 2, ..cfg(3) }).unwrap();
        assert_eq!(run.trace.len(), 6);
        for (i, ev) in run.trace.iter().enumerate() {
            let expected = if i % 2 == 0 { Phase::Discriminator } else { Phase::Generator };
            assert_eq!((ev.epoch, ev.phase), (i / 2, expected));
            assert_eq!(ev.frozen_before, ev.frozen_after, "{ev:?}");
            assert_ne!(ev.trained_before, ev.trained_after, "{ev:?}");
        }
        for w in run.trace.windows(2) {
            assert_eq!(w[0].trained_after, w[1].frozen_before);
        }
        assert!(run.records.iter().all(|r| r.discriminator_loss.is_some() && r.adversarial_bce.is_some()));
    }

    #[test]
    fn gan_rejects_wrong_image_size() {
        let mut g = gan(0);
        let big = generate_synthetic(1, 32, 32, 0, SyntheticStyle::Cells).unwrap();
        assert!(train_adversarial(&mut g, &big, &cfg(1)).is_err());
    }
}
