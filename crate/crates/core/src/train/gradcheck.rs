use indexmap::IndexMap;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::model::{self, Decoders, WeightBundle};
use crate::tensor::{BnMode, Element, GradTape, ImageTensor, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub step: f64,
    /// Fraction of trainable scalars that are perturbed.
    pub fraction: f64,
    pub seed: u64,
    pub bn_mode: BnMode,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            fraction: 0.01,
            seed: 0,
            bn_mode: BnMode::Infer,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// Parameter and flat index where `max_rel_error` occurred.
    pub worst: (String, usize),
    pub checked: usize,
    /// Draws replaced because `θ ± step` crossed a ReLU or max-pool switch,
    /// where a central difference does not estimate the derivative.
    pub skipped_kinks: usize,
}

/// Relative error with a small floor so that two vanishing gradients agree.
fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
}

fn forward_loss(
    bundle: &WeightBundle<f64>,
    image: &ImageTensor<f64>,
    target: &BinaryMask,
    mode: BnMode,
) -> Result<(f64, u64)> {
    let mut tape = GradTape::new();
    let x = tape.input(vec![image.clone()])?;
    let enc = model::encode(&mut tape, bundle, x, mode)?;
    let dec = model::decode(&mut tape, bundle, &enc, "", mode)?;
    let p = tape.value(dec.prob)[0].data();
    let n = p.len() as f64;
    let mut sum = 0.0;
    for (&p, &t) in p.iter().zip(target.data()) {
        let pc = p.clamp(super::BCE_CLAMP, 1.0 - super::BCE_CLAMP);
        let t = t as f64;
        sum -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
    }
    Ok((sum / n, tape.kink_signature()))
}

/// Parameter gradients of a one-decoder bundle for an arbitrary upstream
/// gradient at the logits.
pub fn analytic_gradients<T: Element>(
    bundle: &WeightBundle<T>,
    image: &ImageTensor<T>,
    upstream: ImageTensor<T>,
    mode: BnMode,
) -> Result<IndexMap<String, Tensor<T>>> {
    let mut tape = GradTape::new();
    let x = tape.input(vec![image.clone()])?;
    let enc = model::encode(&mut tape, bundle, x, mode)?;
    let dec = model::decode(&mut tape, bundle, &enc, "", mode)?;
    Ok(tape.backward(dec.logits, vec![upstream])?.into_params())
}

/// Compares analytic BCE gradients against central finite differences on a
/// random sample of trainable scalars, in double precision. Draws whose
/// perturbation changes the ReLU/max-pool pattern are replaced by fresh
/// draws and counted in `skipped_kinks`.
pub fn gradcheck(
    bundle: &WeightBundle,
    image: &ImageTensor,
    target: &BinaryMask,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport> {
    let arch = bundle.arch();
    if arch.decoders != Decoders::One || arch.input_size > 32 || arch.base_channels > 4 {
        return Err(Error::Config(
            "gradcheck needs a one-decoder bundle with input ≤ 32 and base_channels ≤ 4".into(),
        ));
    }
    if cfg.step == 0.0 || !cfg.step.is_finite() || !(cfg.fraction > 0.0 && cfg.fraction <= 1.0) {
        return Err(Error::Config(
            "gradcheck step must be nonzero and fraction in (0, 1]".into(),
        ));
    }
    let mut b64: WeightBundle<f64> = bundle.cast();
    let img64: ImageTensor<f64> = image.cast();

    let upstream = {
        let mut tape = GradTape::new();
        let x = tape.input(vec![img64.clone()])?;
        let enc = model::encode(&mut tape, &b64, x, cfg.bn_mode)?;
        let dec = model::decode(&mut tape, &b64, &enc, "", cfg.bn_mode)?;
        let p = &tape.value(dec.prob)[0];
        let n = p.plane_len() as f64;
        let g = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t as f64) / n)
            .collect();
        ImageTensor::new(1, p.height(), p.width(), g)?
    };
    let grads = analytic_gradients(&b64, &img64, upstream, cfg.bn_mode)?;

    let slots: Vec<(String, usize)> = b64.trainable().map(|(n, t)| (n.clone(), t.len())).collect();
    let total: usize = slots.iter().map(|(_, l)| l).sum();
    let k = ((total as f64 * cfg.fraction).ceil() as usize).clamp(1, total);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let order = index::sample(&mut rng, total, total).into_vec();
    let offsets: Vec<usize> = slots
        .iter()
        .scan(0, |acc, (_, l)| {
            let o = *acc;
            *acc += l;
            Some(o)
        })
        .collect();
    let (_, base_sig) = forward_loss(&b64, &img64, target, cfg.bn_mode)?;

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        checked: 0,
        skipped_kinks: 0,
    };
    for flat in order {
        if report.checked == k {
            break;
        }
        let slot = offsets.partition_point(|&o| o <= flat) - 1;
        let name = &slots[slot].0;
        let i = flat - offsets[slot];
        let orig = b64.get(name)?.data()[i];
        b64.get_mut(name)?.data_mut()[i] = orig + cfg.step;
        let (plus, sig_plus) = forward_loss(&b64, &img64, target, cfg.bn_mode)?;
        b64.get_mut(name)?.data_mut()[i] = orig - cfg.step;
        let (minus, sig_minus) = forward_loss(&b64, &img64, target, cfg.bn_mode)?;
        b64.get_mut(name)?.data_mut()[i] = orig;
        if sig_plus != base_sig || sig_minus != base_sig {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let analytic = grads.get(name).map_or(0.0, |g| g.data()[i]);
        let e = rel_error(analytic, numeric);
        if e > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = e;
            report.worst = (name.clone(), i);
        }
        report.checked += 1;
    }
    Ok(report)
}
