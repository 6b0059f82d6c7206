//! Loss, optimizer and the training regimes: base training, decoder-only
//! and full fine-tuning, and the ego decoder of the two-decoder model.

mod gradcheck;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{AugmentConfig, Origin, Sample};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, ProbMask};
use crate::metrics::{mean_iou, DEFAULT_THRESHOLD};
use crate::model::{self, Decoders, WeightBundle, EGO_PREFIX, ENCODER_PREFIX, EXO_PREFIX};
use crate::tensor::{BnMode, GradTape, ImageTensor, Tensor};

pub use gradcheck::{analytic_gradients, gradcheck, GradcheckConfig, GradcheckReport};

pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps_adam: f32,
    pub epochs: usize,
    /// Parameter-name prefixes excluded from updates.
    pub freeze: Vec<String>,
    pub seed: u64,
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 12,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            epochs: 1,
            freeze: Vec::new(),
            seed: 0,
            augment: Some(AugmentConfig::default()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if !(self.eps_adam >= 0.0) {
            return Err(Error::Config("eps_adam must be non-negative".into()));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.freeze.iter().any(|p| name.starts_with(p.as_str()))
    }
}

/// Mean pixelwise binary cross-entropy and its gradient with respect to the
/// pre-sigmoid logits, `(p − t) / N`.
pub fn bce_loss(pred: &ProbMask, target: &BinaryMask) -> Result<(f64, Vec<f32>)> {
    if pred.dims() != target.dims() {
        return Err(Error::shape(
            "bce_loss",
            format!("prediction {:?} vs target {:?}", pred.dims(), target.dims()),
        ));
    }
    let n = pred.data().len();
    let (loss, grad) = bce_terms(pred.data(), target.data(), n);
    Ok((loss, grad))
}

fn bce_terms(p: &[f32], t: &[u8], n: usize) -> (f64, Vec<f32>) {
    let mut sum = 0.0f64;
    let mut grad = Vec::with_capacity(p.len());
    for (&p, &t) in p.iter().zip(t) {
        let pc = (p as f64).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let t = t as f64;
        sum -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        grad.push(((p as f64 - t) / n as f64) as f32);
    }
    (sum / n as f64, grad)
}

/// Adam moments and step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: IndexMap<String, Tensor>,
    pub v: IndexMap<String, Tensor>,
}

/// Bias-corrected Adam update of every non-frozen parameter that has a
/// gradient. Frozen parameters keep their values and moments.
pub fn adam_step(
    bundle: &mut WeightBundle,
    grads: &IndexMap<String, Tensor>,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1 as f64, cfg.beta2 as f64);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = cfg.learning_rate as f64;
    let eps = cfg.eps_adam as f64;
    for (name, g) in grads {
        if cfg.is_frozen(name) || model::is_buffer(name) {
            continue;
        }
        let p = bundle.get_mut(name)?;
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("{name}: parameter {:?} vs gradient {:?}", p.shape(), g.shape()),
            ));
        }
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
        for (((pv, mv), vv), &gv) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            let gv = gv as f64;
            let mn = b1 * *mv as f64 + (1.0 - b1) * gv;
            let vn = b2 * *vv as f64 + (1.0 - b2) * gv * gv;
            *mv = mn as f32;
            *vv = vn as f32;
            let update = lr * (mn / c1) / ((vn / c2).sqrt() + eps);
            *pv = (*pv as f64 - update) as f32;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FinetuneMode {
    /// Decoder and head only, encoder frozen.
    F1,
    /// Everything.
    F2,
}

/// Which bundle layout is trained, which decoder the loss sees, and what
/// is frozen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Base,
    Finetune(FinetuneMode),
    EgoDecoder,
}

impl Regime {
    pub fn tag(self) -> &'static str {
        match self {
            Regime::Base => "SSTU_coco",
            Regime::Finetune(FinetuneMode::F1) => "SSTU_f1",
            Regime::Finetune(FinetuneMode::F2) => "SSTU_f2",
            Regime::EgoDecoder => "SSTU",
        }
    }

    fn decoders(self) -> Decoders {
        match self {
            Regime::EgoDecoder => Decoders::Two,
            _ => Decoders::One,
        }
    }

    pub fn decoder_prefix(self) -> &'static str {
        match self {
            Regime::EgoDecoder => EGO_PREFIX,
            _ => "",
        }
    }

    fn freeze(self, user: &[String]) -> Vec<String> {
        match self {
            Regime::Base => user.to_vec(),
            Regime::Finetune(FinetuneMode::F1) => vec![ENCODER_PREFIX.to_string()],
            Regime::Finetune(FinetuneMode::F2) => Vec::new(),
            Regime::EgoDecoder => vec![ENCODER_PREFIX.to_string(), EXO_PREFIX.to_string()],
        }
    }

    /// Target for the trained decoder: exo samples count as background for
    /// the ego decoder.
    pub fn target(self, sample: &Sample) -> BinaryMask {
        match (self, sample.origin) {
            (Regime::EgoDecoder, Origin::Exo) => BinaryMask::zeros(sample.mask.height(), sample.mask.width()),
            _ => sample.mask.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_miou: f64,
}

impl EpochLog {
    pub fn line(&self) -> String {
        format!(
            "epoch {} loss {:.6} val_miou {:.4}",
            self.epoch, self.loss, self.val_miou
        )
    }
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub bundle: WeightBundle,
    pub log: Vec<EpochLog>,
}

/// Optimizer state plus the regime that decides freezing, batch-norm modes
/// and targets.
#[derive(Clone, Debug)]
pub struct Trainer {
    cfg: TrainConfig,
    regime: Regime,
    state: AdamState,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, regime: Regime) -> Result<Self> {
        cfg.validate()?;
        let cfg = TrainConfig {
            freeze: regime.freeze(&cfg.freeze),
            ..cfg.clone()
        };
        Ok(Self {
            cfg,
            regime,
            state: AdamState::default(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    fn check_bundle(&self, bundle: &WeightBundle) -> Result<()> {
        if bundle.arch().decoders != self.regime.decoders() {
            return Err(Error::Config(format!(
                "{:?} training needs a {}-decoder bundle",
                self.regime,
                self.regime.decoders().count()
            )));
        }
        Ok(())
    }

    fn bn_mode(&self, probe: &str) -> BnMode {
        if self.cfg.is_frozen(probe) {
            BnMode::Infer
        } else {
            BnMode::Train
        }
    }

    fn encoder_frozen(&self, bundle: &WeightBundle) -> bool {
        bundle
            .with_prefix(ENCODER_PREFIX)
            .all(|(name, _)| self.cfg.is_frozen(name))
    }

    /// One forward/backward/update on a batch; returns the batch loss.
    pub fn step(&mut self, bundle: &mut WeightBundle, images: &[ImageTensor], targets: &[BinaryMask]) -> Result<f64> {
        self.check_bundle(bundle)?;
        if images.is_empty() || images.len() != targets.len() {
            return Err(Error::Invalid(format!(
                "{} images for {} targets",
                images.len(),
                targets.len()
            )));
        }
        let prefix = self.regime.decoder_prefix();
        let enc_mode = self.bn_mode(&format!("{ENCODER_PREFIX}1.bn1.gamma"));
        let dec_mode = self.bn_mode(&format!("{prefix}dec1.bn1.gamma"));
        let (loss, grads, running) = {
            let mut tape = GradTape::new();
            let enc = if self.encoder_frozen(bundle) {
                detached_encoder(&mut tape, bundle, images)?
            } else {
                let x = tape.input(images.to_vec())?;
                model::encode(&mut tape, bundle, x, enc_mode)?
            };
            let dec = model::decode(&mut tape, bundle, &enc, prefix, dec_mode)?;
            let probs = tape.value(dec.prob);
            let n_total = probs.len() * probs[0].plane_len();
            let mut loss = 0.0;
            let mut seed = Vec::with_capacity(probs.len());
            for (p, t) in probs.iter().zip(targets) {
                if (p.height(), p.width()) != t.dims() {
                    return Err(Error::shape("step", "target does not match image size"));
                }
                let (l, g) = bce_terms(p.data(), t.data(), n_total);
                loss += l * p.plane_len() as f64;
                seed.push(ImageTensor::new(1, p.height(), p.width(), g)?);
            }
            let grads = tape.backward(dec.logits, seed)?;
            (
                loss / n_total as f64,
                grads.into_params(),
                tape.running_updates().to_vec(),
            )
        };
        adam_step(bundle, &grads, &mut self.state, &self.cfg)?;
        for u in running {
            if self.cfg.is_frozen(&u.mean_name) {
                continue;
            }
            bundle.get_mut(&u.mean_name)?.data_mut().copy_from_slice(&u.mean);
            bundle.get_mut(&u.var_name)?.data_mut().copy_from_slice(&u.var);
        }
        Ok(loss)
    }

    /// Per-image mean IoU of the trained decoder against the regime's targets.
    pub fn validate(&self, bundle: &WeightBundle, val: &[Sample]) -> Result<f64> {
        if val.is_empty() {
            return Ok(f64::NAN);
        }
        let prefix = self.regime.decoder_prefix();
        let mut preds = Vec::with_capacity(val.len());
        for chunk in val.chunks(16) {
            let images: Vec<ImageTensor> = chunk.iter().map(|s| s.image.clone()).collect();
            preds.extend(model::infer_path_batch(bundle, &images, prefix)?);
        }
        let targets: Vec<BinaryMask> = val.iter().map(|s| self.regime.target(s)).collect();
        mean_iou(&preds, &targets, DEFAULT_THRESHOLD)
    }

    /// Seeded epochs of shuffled minibatches with per-sample augmentation.
    pub fn fit(mut self, mut bundle: WeightBundle, train: &[Sample], val: &[Sample]) -> Result<Trained> {
        self.check_bundle(&bundle)?;
        if train.is_empty() {
            return Err(Error::Empty("training set has no samples".into()));
        }
        let size = bundle.arch().input_size;
        let train: Vec<Sample> = train.par_iter().map(|s| s.resized(size)).collect();
        let val: Vec<Sample> = val.par_iter().map(|s| s.resized(size)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut log = Vec::with_capacity(self.cfg.epochs);
        for epoch in 1..=self.cfg.epochs {
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for batch in order.chunks(self.cfg.batch_size) {
                let draws: Vec<_> = match &self.cfg.augment {
                    Some(a) => batch.iter().map(|_| Some(a.sample_params(&mut rng))).collect(),
                    None => vec![None; batch.len()],
                };
                let samples: Vec<Sample> = batch
                    .par_iter()
                    .zip(draws.par_iter())
                    .map(|(&i, d)| match d {
                        Some(p) => p.apply(&train[i]),
                        None => train[i].clone(),
                    })
                    .collect();
                let images: Vec<ImageTensor> = samples.iter().map(|s| s.image.clone()).collect();
                let targets: Vec<BinaryMask> = samples.iter().map(|s| self.regime.target(s)).collect();
                loss_sum += self.step(&mut bundle, &images, &targets)? * batch.len() as f64;
            }
            let entry = EpochLog {
                epoch,
                loss: loss_sum / train.len() as f64,
                val_miou: self.validate(&bundle, &val)?,
            };
            log::info!("{}", entry.line());
            log.push(entry);
        }
        bundle.set_tag(self.regime.tag())?;
        Ok(Trained { bundle, log })
    }
}

/// Runs a frozen encoder on its own tape and feeds its activations to
/// `tape` as inputs, so the reverse pass stops at the encoder outputs.
fn detached_encoder<'a>(
    tape: &mut GradTape<'a, f32>,
    bundle: &'a WeightBundle,
    images: &[ImageTensor],
) -> Result<model::Encoded> {
    let (skips, bottleneck) = {
        let mut enc_tape = GradTape::new();
        let x = enc_tape.input(images.to_vec())?;
        let enc = model::encode(&mut enc_tape, bundle, x, BnMode::Infer)?;
        let skips: Vec<Vec<ImageTensor>> = enc.skips.iter().map(|&v| enc_tape.value(v).to_vec()).collect();
        (skips, enc_tape.value(enc.bottleneck).to_vec())
    };
    let skips = skips.into_iter().map(|s| tape.input(s)).collect::<Result<Vec<_>>>()?;
    let bottleneck = tape.input(bottleneck)?;
    Ok(model::Encoded { skips, bottleneck })
}

/// Trains a one-decoder bundle from scratch on exo-style data.
pub fn train_base(bundle: WeightBundle, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<Trained> {
    Trainer::new(cfg, Regime::Base)?.fit(bundle, train, val)
}

pub fn finetune(
    bundle: WeightBundle,
    train: &[Sample],
    val: &[Sample],
    mode: FinetuneMode,
    cfg: &TrainConfig,
) -> Result<Trained> {
    Trainer::new(cfg, Regime::Finetune(mode))?.fit(bundle, train, val)
}

/// Trains `ego.*` of a two-decoder bundle with the encoder and `exo.*`
/// frozen; exo samples are all-background targets.
pub fn train_ego_decoder(bundle: WeightBundle, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<Trained> {
    Trainer::new(cfg, Regime::EgoDecoder)?.fit(bundle, train, val)
}
