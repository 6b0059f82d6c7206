//! SSTU-net (one decoder) and SSTU-net-2 (shared encoder, exo and ego
//! decoders merged by a pointwise maximum).
//!
//! Parameter names follow the layer plan:
//!
//! ```text
//! enc{i}.conv{1,2}.{weight,bias}  enc{i}.bn{1,2}.{gamma,beta,running_mean,running_var}
//! [exo.|ego.]dec{j}.up.{weight,bias}  [exo.|ego.]dec{j}.conv{1,2}.*  [exo.|ego.]dec{j}.bn{1,2}.*
//! [exo.|ego.]head.{weight,bias}
//! ```

mod io;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mask::ProbMask;
use crate::tensor::{BnMode, Element, GradTape, ImageTensor, Param, Scalar, Tensor, Var};

pub use io::{from_bytes, load_weights, save_weights, to_bytes};

pub const DEPTH: usize = 5;
pub const ENCODER_PREFIX: &str = "enc";
pub const EXO_PREFIX: &str = "exo.";
pub const EGO_PREFIX: &str = "ego.";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decoders {
    One,
    Two,
}

impl Decoders {
    pub fn count(self) -> usize {
        match self {
            Decoders::One => 1,
            Decoders::Two => 2,
        }
    }
}

/// Final projection before the sigmoid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Conv1x1,
    Conv3x3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    pub input_size: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub decoders: Decoders,
    pub head: Head,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_size: 256,
            base_channels: 16,
            depth: DEPTH,
            decoders: Decoders::One,
            head: Head::Conv1x1,
        }
    }
}

impl ArchConfig {
    /// Classic U-net widths, 64 → 1024.
    pub fn full_width() -> Self {
        Self {
            base_channels: 64,
            ..Self::default()
        }
    }

    pub fn small(input_size: usize, base_channels: usize) -> Self {
        Self {
            input_size,
            base_channels,
            ..Self::default()
        }
    }

    pub fn with_decoders(self, decoders: Decoders) -> Self {
        Self { decoders, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth != DEPTH {
            return Err(Error::Config(format!("depth must be {DEPTH}, got {}", self.depth)));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be at least 1".into()));
        }
        let div = 1usize << self.depth;
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(Error::Config(format!(
                "input_size {} must be a positive multiple of {div}",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Channel width of encoder layer `i` (1-based): `base · 2^(i−1)`.
    pub fn width(&self, layer: usize) -> usize {
        self.base_channels << (layer - 1)
    }

    pub fn bottleneck_size(&self) -> usize {
        self.input_size >> self.depth
    }

    pub fn decoder_prefixes(&self) -> &'static [&'static str] {
        match self.decoders {
            Decoders::One => &[""],
            Decoders::Two => &[EXO_PREFIX, EGO_PREFIX],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// Normal with std `sqrt(gain / fan_in)`.
    Kaiming {
        fan_in: usize,
        gain: f64,
    },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

fn push_conv(specs: &mut Vec<ParamSpec>, name: &str, cout: usize, cin: usize, k: usize, gain: f64) {
    specs.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: vec![cout, cin, k, k],
        init: Init::Kaiming {
            fan_in: cin * k * k,
            gain,
        },
    });
    specs.push(ParamSpec {
        name: format!("{name}.bias"),
        shape: vec![cout],
        init: Init::Zeros,
    });
}

fn push_bn(specs: &mut Vec<ParamSpec>, name: &str, c: usize) {
    for (field, init) in [
        ("gamma", Init::Ones),
        ("beta", Init::Zeros),
        ("running_mean", Init::Zeros),
        ("running_var", Init::Ones),
    ] {
        specs.push(ParamSpec {
            name: format!("{name}.{field}"),
            shape: vec![c],
            init,
        });
    }
}

fn push_double_conv(specs: &mut Vec<ParamSpec>, prefix: &str, cin: usize, cout: usize) {
    push_conv(specs, &format!("{prefix}.conv1"), cout, cin, 3, 2.0);
    push_bn(specs, &format!("{prefix}.bn1"), cout);
    push_conv(specs, &format!("{prefix}.conv2"), cout, cout, 3, 2.0);
    push_bn(specs, &format!("{prefix}.bn2"), cout);
}

/// Ordered list of every tensor a bundle with this architecture holds.
pub fn parameter_specs(arch: &ArchConfig) -> Result<Vec<ParamSpec>> {
    arch.validate()?;
    let mut specs = Vec::new();
    for i in 1..=arch.depth {
        let cin = if i == 1 { 3 } else { arch.width(i - 1) };
        push_double_conv(&mut specs, &format!("{ENCODER_PREFIX}{i}"), cin, arch.width(i));
    }
    for prefix in arch.decoder_prefixes() {
        for j in (1..=arch.depth).rev() {
            let w = arch.width(j);
            let up_in = if j == arch.depth { w } else { arch.width(j + 1) };
            let layer = format!("{prefix}dec{j}");
            specs.push(ParamSpec {
                name: format!("{layer}.up.weight"),
                shape: vec![up_in, w, 2, 2],
                init: Init::Kaiming {
                    fan_in: up_in,
                    gain: 1.0,
                },
            });
            specs.push(ParamSpec {
                name: format!("{layer}.up.bias"),
                shape: vec![w],
                init: Init::Zeros,
            });
            push_double_conv(&mut specs, &layer, 2 * w, w);
        }
        let k = match arch.head {
            Head::Conv1x1 => 1,
            Head::Conv3x3 => 3,
        };
        push_conv(&mut specs, &format!("{prefix}head"), 1, arch.width(1), k, 1.0);
    }
    Ok(specs)
}

/// Batch-norm running statistics are state, not trainable parameters.
pub fn is_buffer(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

/// Trained weights plus the architecture and a provenance tag
/// (`SSTU_coco`, `SSTU_f1`, `SSTU_f2`, `SSTU` …).
#[derive(Clone, Debug, PartialEq)]
pub struct WeightBundle<T = f32> {
    arch: ArchConfig,
    tag: String,
    params: IndexMap<String, Tensor<T>>,
}

/// Fresh bundle with fan-in scaled normal kernels, zero biases and
/// identity batch norms.
pub fn build(arch: &ArchConfig, seed: u64) -> Result<WeightBundle> {
    let specs = parameter_specs(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = IndexMap::with_capacity(specs.len());
    for spec in specs {
        let n: usize = spec.shape.iter().product();
        let data: Vec<f32> = match spec.init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Kaiming { fan_in, gain } => {
                let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
                (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
            }
        };
        params.insert(spec.name, Tensor::new(spec.shape, data)?);
    }
    Ok(WeightBundle {
        arch: *arch,
        tag: "untrained".into(),
        params,
    })
}

impl<T: Scalar> WeightBundle<T> {
    /// Assembles a bundle, checking names, order and shapes against the
    /// architecture's layer plan.
    pub fn from_parts(arch: ArchConfig, tag: impl Into<String>, params: IndexMap<String, Tensor<T>>) -> Result<Self> {
        let specs = parameter_specs(&arch)?;
        if specs.len() != params.len() {
            return Err(Error::Config(format!(
                "architecture needs {} tensors, bundle has {}",
                specs.len(),
                params.len()
            )));
        }
        for (spec, (name, t)) in specs.iter().zip(&params) {
            if &spec.name != name {
                return Err(Error::Config(format!("expected tensor {}, found {name}", spec.name)));
            }
            if spec.shape != t.shape() {
                return Err(Error::Config(format!(
                    "tensor {name} has shape {:?}, architecture needs {:?}",
                    t.shape(),
                    spec.shape
                )));
            }
        }
        let tag = tag.into();
        validate_tag(&tag)?;
        Ok(Self { arch, tag, params })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn set_tag(&mut self, tag: impl Into<String>) -> Result<()> {
        let tag = tag.into();
        validate_tag(&tag)?;
        self.tag = tag;
        Ok(())
    }

    pub fn params(&self) -> &IndexMap<String, Tensor<T>> {
        &self.params
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Config(format!("bundle has no tensor {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("bundle has no tensor {name}")))
    }

    pub fn param(&self, name: &str) -> Result<Param<'_, T>> {
        let (k, v) = self
            .params
            .get_key_value(name)
            .ok_or_else(|| Error::Config(format!("bundle has no tensor {name}")))?;
        Ok(Param::new(k.as_str(), v))
    }

    /// Trainable tensors (everything except running statistics).
    pub fn trainable(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter().filter(|(n, _)| !is_buffer(n))
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable().map(|(_, t)| t.len()).sum()
    }

    pub fn value_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> WeightBundle<U> {
        WeightBundle {
            arch: self.arch,
            tag: self.tag.clone(),
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Sets every tensor whose name starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, t) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                t.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    /// Tensors whose names start with `prefix`, in bundle order.
    pub fn with_prefix<'s>(&'s self, prefix: &'s str) -> impl Iterator<Item = (&'s String, &'s Tensor<T>)> + 's {
        self.params.iter().filter(move |(n, _)| n.starts_with(prefix))
    }

    /// Copies every `exo.*` tensor onto its `ego.*` twin.
    pub fn copy_exo_to_ego(&mut self) -> Result<()> {
        self.require(Decoders::Two)?;
        let exo: Vec<(String, Tensor<T>)> = self
            .with_prefix(EXO_PREFIX)
            .map(|(n, t)| (format!("{EGO_PREFIX}{}", &n[EXO_PREFIX.len()..]), t.clone()))
            .collect();
        for (name, t) in exo {
            *self.get_mut(&name)? = t;
        }
        Ok(())
    }

    fn require(&self, decoders: Decoders) -> Result<()> {
        if self.arch.decoders != decoders {
            return Err(Error::Config(format!(
                "operation needs a {}-decoder bundle, this one has {}",
                decoders.count(),
                self.arch.decoders.count()
            )));
        }
        Ok(())
    }
}

fn validate_tag(tag: &str) -> Result<()> {
    if tag.is_empty() || tag.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return Err(Error::Config(format!("invalid provenance tag {tag:?}")));
    }
    Ok(())
}

impl WeightBundle<f32> {
    /// SSTU-net-2 bundle whose encoder and both decoders start from a
    /// one-decoder bundle (typically `SSTU_coco`).
    pub fn to_two_decoder(&self) -> Result<WeightBundle> {
        self.require(Decoders::One)?;
        let arch = self.arch.with_decoders(Decoders::Two);
        let mut params = IndexMap::new();
        for (name, t) in self.with_prefix(ENCODER_PREFIX) {
            params.insert(name.clone(), t.clone());
        }
        for prefix in [EXO_PREFIX, EGO_PREFIX] {
            for (name, t) in self.params.iter().filter(|(n, _)| !n.starts_with(ENCODER_PREFIX)) {
                params.insert(format!("{prefix}{name}"), t.clone());
            }
        }
        WeightBundle::from_parts(arch, "SSTU", params)
    }

    /// The exo path of a two-decoder bundle as a standalone one-decoder bundle.
    pub fn decoder_path(&self, prefix: &str) -> Result<WeightBundle> {
        self.require(Decoders::Two)?;
        let mut params = IndexMap::new();
        for (name, t) in self.with_prefix(ENCODER_PREFIX) {
            params.insert(name.clone(), t.clone());
        }
        for (name, t) in self.with_prefix(prefix) {
            params.insert(name[prefix.len()..].to_string(), t.clone());
        }
        let tag = match prefix {
            EXO_PREFIX => "SSTU_exo",
            EGO_PREFIX => "SSTU_ego",
            _ => return Err(Error::Config(format!("unknown decoder prefix {prefix:?}"))),
        };
        WeightBundle::from_parts(self.arch.with_decoders(Decoders::One), tag, params)
    }
}

/// Encoder activations reused by every decoder.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// Pre-pool activations of encoder layers 1..=5.
    pub skips: Vec<Var>,
    pub bottleneck: Var,
}

#[derive(Clone, Debug)]
pub struct Decoded {
    pub logits: Var,
    pub prob: Var,
    /// Checksums of the skip activations this decoder consumed, layer 5 → 1.
    pub skip_checksums: Vec<u64>,
}

fn conv_bn_relu<'a, T: Element>(
    tape: &mut GradTape<'a, T>,
    bundle: &'a WeightBundle<T>,
    x: Var,
    layer: &str,
    idx: usize,
    mode: BnMode,
) -> Result<Var> {
    let c = tape.conv3x3(
        x,
        bundle.param(&format!("{layer}.conv{idx}.weight"))?,
        bundle.param(&format!("{layer}.conv{idx}.bias"))?,
    )?;
    let bn = format!("{layer}.bn{idx}");
    let n = tape.batch_norm(
        c,
        bundle.param(&format!("{bn}.gamma"))?,
        bundle.param(&format!("{bn}.beta"))?,
        bundle.param(&format!("{bn}.running_mean"))?,
        bundle.param(&format!("{bn}.running_var"))?,
        mode,
    )?;
    tape.relu(n)
}

/// Records the encoder on `tape`.
pub fn encode<'a, T: Element>(
    tape: &mut GradTape<'a, T>,
    bundle: &'a WeightBundle<T>,
    input: Var,
    mode: BnMode,
) -> Result<Encoded> {
    let arch = bundle.arch();
    let (c, h, w) = tape.value(input)[0].shape();
    if c != 3 || h != arch.input_size || w != arch.input_size {
        return Err(Error::shape(
            "encode",
            format!("input is {c}x{h}x{w}, model expects 3x{0}x{0}", arch.input_size),
        ));
    }
    let mut x = input;
    let mut skips = Vec::with_capacity(arch.depth);
    for i in 1..=arch.depth {
        let layer = format!("{ENCODER_PREFIX}{i}");
        x = conv_bn_relu(tape, bundle, x, &layer, 1, mode)?;
        x = conv_bn_relu(tape, bundle, x, &layer, 2, mode)?;
        skips.push(x);
        x = tape.maxpool2(x)?;
    }
    Ok(Encoded { skips, bottleneck: x })
}

/// Records one decoder path (`prefix` is `""`, `"exo."` or `"ego."`).
pub fn decode<'a, T: Element>(
    tape: &mut GradTape<'a, T>,
    bundle: &'a WeightBundle<T>,
    encoded: &Encoded,
    prefix: &str,
    mode: BnMode,
) -> Result<Decoded> {
    let arch = bundle.arch();
    let mut x = encoded.bottleneck;
    let mut skip_checksums = Vec::with_capacity(arch.depth);
    for j in (1..=arch.depth).rev() {
        let layer = format!("{prefix}dec{j}");
        let up = tape.upsample_tconv2(
            x,
            bundle.param(&format!("{layer}.up.weight"))?,
            bundle.param(&format!("{layer}.up.bias"))?,
        )?;
        let skip = encoded.skips[j - 1];
        skip_checksums.push(
            tape.value(skip)
                .iter()
                .fold(0u64, |h, t| h.rotate_left(7) ^ t.checksum()),
        );
        let cat = tape.concat(up, skip)?;
        x = conv_bn_relu(tape, bundle, cat, &layer, 1, mode)?;
        x = conv_bn_relu(tape, bundle, x, &layer, 2, mode)?;
    }
    let w = bundle.param(&format!("{prefix}head.weight"))?;
    let b = bundle.param(&format!("{prefix}head.bias"))?;
    let logits = match arch.head {
        Head::Conv1x1 => tape.conv1x1(x, w, b)?,
        Head::Conv3x3 => tape.conv3x3(x, w, b)?,
    };
    let prob = tape.sigmoid(logits)?;
    Ok(Decoded {
        logits,
        prob,
        skip_checksums,
    })
}

fn check_image(bundle: &WeightBundle, image: &ImageTensor) -> Result<()> {
    let s = bundle.arch().input_size;
    if image.shape() != (3, s, s) {
        return Err(Error::shape(
            "infer",
            format!("image is {:?}, model expects (3, {s}, {s})", image.shape()),
        ));
    }
    Ok(())
}

fn to_masks(tape: &GradTape<'_, f32>, v: Var) -> Result<Vec<ProbMask>> {
    tape.value(v).iter().map(ProbMask::from_tensor).collect()
}

/// Full forward pass of a one-decoder bundle.
pub fn infer_single(bundle: &WeightBundle, image: &ImageTensor) -> Result<ProbMask> {
    Ok(infer_single_batch(bundle, std::slice::from_ref(image))?.remove(0))
}

pub fn infer_single_batch(bundle: &WeightBundle, images: &[ImageTensor]) -> Result<Vec<ProbMask>> {
    bundle.require(Decoders::One)?;
    infer_path_batch(bundle, images, "")
}

/// Forward pass through the decoder named by `prefix` for a batch of images.
pub fn infer_path_batch(bundle: &WeightBundle, images: &[ImageTensor], prefix: &str) -> Result<Vec<ProbMask>> {
    if !bundle.arch().decoder_prefixes().contains(&prefix) {
        return Err(Error::Config(format!("bundle has no decoder path {prefix:?}")));
    }
    if images.is_empty() {
        return Ok(Vec::new());
    }
    for im in images {
        check_image(bundle, im)?;
    }
    let mut tape = GradTape::new();
    let x = tape.input(images.to_vec())?;
    let enc = encode(&mut tape, bundle, x, BnMode::Infer)?;
    let dec = decode(&mut tape, bundle, &enc, prefix, BnMode::Infer)?;
    to_masks(&tape, dec.prob)
}

/// Both decoder outputs of a two-decoder bundle, from one encoder pass.
#[derive(Clone, Debug)]
pub struct DualOutput {
    pub exo: ProbMask,
    pub ego: ProbMask,
    pub exo_skip_checksums: Vec<u64>,
    pub ego_skip_checksums: Vec<u64>,
}

pub fn infer_dual_traced(bundle: &WeightBundle, image: &ImageTensor) -> Result<DualOutput> {
    bundle.require(Decoders::Two)?;
    check_image(bundle, image)?;
    let mut tape = GradTape::new();
    let x = tape.input(vec![image.clone()])?;
    let enc = encode(&mut tape, bundle, x, BnMode::Infer)?;
    let exo = decode(&mut tape, bundle, &enc, EXO_PREFIX, BnMode::Infer)?;
    let ego = decode(&mut tape, bundle, &enc, EGO_PREFIX, BnMode::Infer)?;
    Ok(DualOutput {
        exo: to_masks(&tape, exo.prob)?.remove(0),
        ego: to_masks(&tape, ego.prob)?.remove(0),
        exo_skip_checksums: exo.skip_checksums,
        ego_skip_checksums: ego.skip_checksums,
    })
}

/// `(p_exo, p_ego)` of a two-decoder bundle.
pub fn infer_dual(bundle: &WeightBundle, image: &ImageTensor) -> Result<(ProbMask, ProbMask)> {
    let out = infer_dual_traced(bundle, image)?;
    Ok((out.exo, out.ego))
}

/// Pointwise maximum of two probability maps.
pub fn aggregate_max(exo: &ProbMask, ego: &ProbMask) -> Result<ProbMask> {
    if exo.dims() != ego.dims() {
        return Err(Error::shape(
            "aggregate_max",
            format!("{:?} vs {:?}", exo.dims(), ego.dims()),
        ));
    }
    let data = exo.data().iter().zip(ego.data()).map(|(&a, &b)| a.max(b)).collect();
    ProbMask::new(exo.height(), exo.width(), data)
}

/// Person probability from either architecture: the single decoder, or
/// the maximum of the exo and ego decoders.
pub fn predict(bundle: &WeightBundle, image: &ImageTensor) -> Result<ProbMask> {
    match bundle.arch().decoders {
        Decoders::One => infer_single(bundle, image),
        Decoders::Two => {
            let (exo, ego) = infer_dual(bundle, image)?;
            aggregate_max(&exo, &ego)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ArchConfig {
        ArchConfig::small(32, 2)
    }

    #[test]
    fn config_validation() {
        assert!(ArchConfig::default().validate().is_ok());
        assert!(ArchConfig::small(48, 4).validate().is_err());
        assert!(ArchConfig::small(64, 0).validate().is_err());
        let bad = ArchConfig {
            depth: 4,
            ..ArchConfig::default()
        };
        assert!(build(&bad, 0).is_err());
        assert_eq!(ArchConfig::default().bottleneck_size(), 8);
    }

    #[test]
    fn build_is_deterministic() {
        let a = build(&tiny(), 7).unwrap();
        let b = build(&tiny(), 7).unwrap();
        let c = build(&tiny(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn two_decoder_bundle_mirrors_paths() {
        let b = build(&tiny().with_decoders(Decoders::Two), 1).unwrap();
        let exo: Vec<_> = b.with_prefix(EXO_PREFIX).collect();
        let ego: Vec<_> = b.with_prefix(EGO_PREFIX).collect();
        assert_eq!(exo.len(), ego.len());
        for ((ne, te), (ng, tg)) in exo.iter().zip(&ego) {
            assert_eq!(&ne[4..], &ng[4..]);
            assert_eq!(te.shape(), tg.shape());
        }
        let enc = b.with_prefix(ENCODER_PREFIX).count();
        assert_eq!(enc + exo.len() + ego.len(), b.params().len());
    }

    #[test]
    fn infer_rejects_wrong_size_and_arch() {
        let b = build(&tiny(), 0).unwrap();
        assert!(infer_single(&b, &ImageTensor::zeros(3, 16, 16)).is_err());
        assert!(infer_dual(&b, &ImageTensor::zeros(3, 32, 32)).is_err());
        let m = infer_single(&b, &ImageTensor::filled(3, 32, 32, 0.5)).unwrap();
        assert_eq!(m.dims(), (32, 32));
        assert!(m.data().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn zero_bundle_gives_one_half() {
        let mut b = build(&tiny(), 0).unwrap();
        b.zero_prefix("");
        let img = ImageTensor::from_fn(3, 32, 32, |c, y, x| ((c + y * x) % 7) as f32 / 7.0);
        let m = infer_single(&b, &img).unwrap();
        assert!(m.data().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn aggregate_max_cases() {
        let a = ProbMask::new(1, 2, vec![0.2, 0.9]).unwrap();
        let b = ProbMask::new(1, 2, vec![0.6, 0.1]).unwrap();
        assert_eq!(aggregate_max(&a, &b).unwrap().data(), &[0.6, 0.9]);
        assert_eq!(aggregate_max(&a, &a).unwrap(), a);
        assert_eq!(aggregate_max(&a, &ProbMask::filled(1, 2, 0.0)).unwrap(), a);
        assert!(aggregate_max(&a, &ProbMask::filled(2, 1, 0.0)).is_err());
    }

    #[test]
    fn decoder_path_round_trips_through_two_decoder() {
        let one = build(&tiny(), 3).unwrap();
        let two = one.to_two_decoder().unwrap();
        let exo = two.decoder_path(EXO_PREFIX).unwrap();
        assert_eq!(exo.params(), one.params());
        assert_eq!(exo.tag(), "SSTU_exo");
    }
}
