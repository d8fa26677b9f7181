//! Desk-scale U-Nets with pluggable encoder families and excitation sites.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::excitation::{self, DownscaleMode, ExcitationConfig, GradientMode};
use crate::metrics::MaskImage;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum EncoderKind {
    /// One conv per stage; 5×5 at the first stage, 3×3 after.
    AlexLike,
    /// Two 3×3 convs per stage.
    #[default]
    VggLike,
    /// A 3×3 conv followed by an identity-residual 3×3 conv.
    ResLike,
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alex_like" => Ok(EncoderKind::AlexLike),
            "vgg_like" => Ok(EncoderKind::VggLike),
            "res_like" => Ok(EncoderKind::ResLike),
            _ => Err(Error::Config(format!(
                "encoder_kind must be alex_like, vgg_like or res_like, got `{s}`"
            ))),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::AlexLike => "alex_like",
            EncoderKind::VggLike => "vgg_like",
            EncoderKind::ResLike => "res_like",
        })
    }
}

/// A tensor in the network that may host excitation. Stages are 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Site {
    /// Output of encoder stage `s` (before pooling; also the skip source).
    Encoder(usize),
    /// Concatenation of the upsampled decoder path with the stage-`s` skip.
    Concat(usize),
}

impl Site {
    pub fn stage(self) -> usize {
        match self {
            Site::Encoder(s) | Site::Concat(s) => s,
        }
    }

    /// `enc_1, enc_2, cat_1, cat_2`.
    pub fn default_sites() -> Vec<Site> {
        vec![Site::Encoder(1), Site::Encoder(2), Site::Concat(1), Site::Concat(2)]
    }

    /// Parses a comma-separated list such as `enc_1,cat_2`. Empty means none.
    pub fn parse_list(s: &str) -> Result<Vec<Site>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let site: Site = part.parse()?;
            if !out.contains(&site) {
                out.push(site);
            }
        }
        Ok(out)
    }

    pub fn format_list(sites: &[Site]) -> String {
        sites.iter().map(Site::to_string).collect::<Vec<_>>().join(",")
    }
}

impl FromStr for Site {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad excitation site `{s}` (expected enc_N or cat_N)"));
        let (kind, stage) = s.split_once('_').ok_or_else(bad)?;
        let stage: usize = stage.parse().map_err(|_| bad())?;
        if stage == 0 {
            return Err(bad());
        }
        match kind {
            "enc" => Ok(Site::Encoder(stage)),
            "cat" => Ok(Site::Concat(stage)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Site::Encoder(s) => write!(f, "enc_{s}"),
            Site::Concat(s) => write!(f, "cat_{s}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub encoder_kind: EncoderKind,
    pub stages: usize,
    pub base_width: usize,
    pub in_channels: usize,
    pub ae_sites: Vec<Site>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            encoder_kind: EncoderKind::VggLike,
            stages: 3,
            base_width: 8,
            in_channels: 1,
            ae_sites: Site::default_sites(),
        }
    }
}

/// One convolution in the topology table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvDef {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvDef {
    fn new(name: String, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvDef {
            name,
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.stages > 8 {
            return Err(Error::InvalidSpec(format!(
                "stages must be in 1..=8, got {}",
                self.stages
            )));
        }
        if self.base_width == 0 {
            return Err(Error::InvalidSpec("base_width must be positive".into()));
        }
        if !matches!(self.in_channels, 1 | 3) {
            return Err(Error::InvalidSpec(format!(
                "in_channels must be 1 or 3, got {}",
                self.in_channels
            )));
        }
        if let Some(site) = self.ae_sites.iter().find(|s| s.stage() > self.stages) {
            return Err(Error::InvalidSpec(format!(
                "excitation site {site} refers to a missing stage (network has {})",
                self.stages
            )));
        }
        Ok(())
    }

    /// Channels produced by stage `s` (1-based).
    pub fn width(&self, s: usize) -> usize {
        self.base_width << (s - 1)
    }

    /// Required divisor of input height and width.
    pub fn divisor(&self) -> usize {
        1 << self.stages
    }

    /// Every convolution in definition order.
    pub fn layer_table(&self) -> Vec<ConvDef> {
        let mut t = Vec::new();
        let mut c = self.in_channels;
        for s in 1..=self.stages {
            let w = self.width(s);
            let enc = |l: &str| format!("enc_{s}.{l}");
            match self.encoder_kind {
                EncoderKind::AlexLike => {
                    t.push(ConvDef::new(enc("conv_1"), c, w, if s == 1 { 5 } else { 3 }));
                }
                EncoderKind::VggLike => {
                    t.push(ConvDef::new(enc("conv_1"), c, w, 3));
                    t.push(ConvDef::new(enc("conv_2"), w, w, 3));
                }
                EncoderKind::ResLike => {
                    t.push(ConvDef::new(enc("conv_1"), c, w, 3));
                    t.push(ConvDef::new(enc("res_1"), w, w, 3));
                }
            }
            c = w;
        }
        t.push(ConvDef::new("bottleneck.conv_1".into(), c, c, 3));
        for s in (1..=self.stages).rev() {
            let w = self.width(s);
            t.push(ConvDef::new(format!("dec_{s}.conv_1"), c + w, w, 3));
            t.push(ConvDef::new(format!("dec_{s}.conv_2"), w, w, 3));
            c = w;
        }
        t.push(ConvDef::new("head.conv_1".into(), c, 1, 1));
        t
    }

    /// Recovers the topology from parameter names and shapes. Excitation
    /// sites are not stored in checkpoints and come back empty.
    pub fn infer_from(store: &ParameterStore) -> Result<Self> {
        let bad = |d: &str| Error::InvalidSpec(format!("cannot infer network from parameters: {d}"));
        let first = store
            .get("enc_1.conv_1.kernels")
            .ok_or_else(|| bad("no enc_1.conv_1"))?;
        let [base_width, in_channels, k, _] = first.shape()[..] else {
            return Err(bad("enc_1.conv_1.kernels is not rank 4"));
        };
        let stages = (1..)
            .take_while(|s| store.get(&format!("enc_{s}.conv_1.kernels")).is_some())
            .count();
        let encoder_kind = if k == 5 {
            EncoderKind::AlexLike
        } else if store.get("enc_1.res_1.kernels").is_some() {
            EncoderKind::ResLike
        } else if store.get("enc_1.conv_2.kernels").is_some() {
            EncoderKind::VggLike
        } else {
            return Err(bad("unrecognised encoder layout"));
        };
        let spec = NetworkSpec {
            encoder_kind,
            stages,
            base_width,
            in_channels,
            ae_sites: Vec::new(),
        };
        spec.validate()?;
        spec.check_store(store)?;
        Ok(spec)
    }

    /// Verifies that `store` holds exactly this topology's parameters.
    pub fn check_store(&self, store: &ParameterStore) -> Result<()> {
        let table = self.layer_table();
        if store.len() != 2 * table.len() {
            return Err(Error::InvalidSpec(format!(
                "expected {} parameter tensors, store has {}",
                2 * table.len(),
                store.len()
            )));
        }
        for (i, def) in table.iter().enumerate() {
            let want = [
                (
                    format!("{}.kernels", def.name),
                    vec![def.out_channels, def.in_channels, def.kernel, def.kernel],
                ),
                (format!("{}.bias", def.name), vec![def.out_channels]),
            ];
            for (j, (name, shape)) in want.into_iter().enumerate() {
                let (have_name, t) = store.entry(2 * i + j);
                if have_name != name || t.shape() != shape.as_slice() {
                    return Err(Error::InvalidSpec(format!(
                        "parameter {} is `{have_name}` {:?}, expected `{name}` {shape:?}",
                        2 * i + j,
                        t.shape()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Named parameter tensors in definition order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn entry(&self, i: usize) -> (&str, &Tensor) {
        let (n, t) = &self.entries[i];
        (n, t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Mutable access to parameter values, in order.
    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.entries.iter_mut().map(|(_, t)| t.data_mut())
    }
}

/// Total number of scalar parameters.
pub fn count_params(store: &ParameterStore) -> usize {
    store.iter().map(|(_, t)| t.len()).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNet {
    spec: NetworkSpec,
    excitation: ExcitationConfig,
    layers: Vec<ConvDef>,
}

/// A site with its tensor before and after excitation.
pub type SiteRecord = (Site, Var, Var);

/// Recorded forward pass, ready for a loss and backward.
pub struct ForwardPass {
    pub tape: Tape,
    pub output: Var,
    /// One leaf per parameter tensor, in store order.
    pub params: Vec<Var>,
    /// Every site with its tensor before and after excitation (equal when
    /// the site is not excited).
    pub sites: Vec<SiteRecord>,
}

/// Builds the network with default excitation modes and seeded parameters.
pub fn build_unet(spec: NetworkSpec, seed: u64) -> Result<(UNet, ParameterStore)> {
    let net = UNet::new(spec, DownscaleMode::default(), GradientMode::default())?;
    let store = net.init_params(seed);
    Ok((net, store))
}

impl UNet {
    pub fn new(spec: NetworkSpec, downscale_mode: DownscaleMode, gradient_mode: GradientMode) -> Result<Self> {
        spec.validate()?;
        let excitation = ExcitationConfig {
            placements: spec.ae_sites.clone(),
            downscale_mode,
            gradient_mode,
        };
        let layers = spec.layer_table();
        Ok(UNet {
            spec,
            excitation,
            layers,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn excitation(&self) -> &ExcitationConfig {
        &self.excitation
    }

    /// He-uniform kernels `U(±√(6/fan_in))`, zero biases.
    pub fn init_params(&self, seed: u64) -> ParameterStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        for def in &self.layers {
            let fan_in = (def.in_channels * def.kernel * def.kernel) as f64;
            let bound = (6.0 / fan_in).sqrt();
            let shape = [def.out_channels, def.in_channels, def.kernel, def.kernel];
            let kernels = Tensor::from_fn(shape, |_| rng.random_range(-bound..bound));
            store
                .insert(format!("{}.kernels", def.name), kernels)
                .expect("unique layer names");
            store
                .insert(format!("{}.bias", def.name), Tensor::zeros([def.out_channels]))
                .expect("unique layer names");
        }
        store
    }

    fn check_image(&self, image: &Tensor) -> Result<(usize, usize)> {
        let (c, h, w) = image.chw()?;
        if c != self.spec.in_channels {
            return Err(Error::shape(
                "forward",
                format!("image has {c} channels, network expects {}", self.spec.in_channels),
            ));
        }
        let d = self.spec.divisor();
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(Error::shape(
                "forward",
                format!(
                    "image is {h}×{w}; height and width must be positive multiples of {d} (2^{} stages)",
                    self.spec.stages
                ),
            ));
        }
        Ok((h, w))
    }

    /// Training pass with excitation at every configured site.
    pub fn forward_train(
        &self,
        store: &ParameterStore,
        image: &Tensor,
        mask: &MaskImage,
        alpha: f64,
    ) -> Result<ForwardPass> {
        let (h, w) = self.check_image(image)?;
        if (mask.height(), mask.width()) != (h, w) {
            return Err(Error::shape(
                "forward_train",
                format!("mask is {}×{}, image is {h}×{w}", mask.height(), mask.width()),
            ));
        }
        self.run(store, image, Some((mask, alpha)), true)
    }

    /// Inference pass: no excitation, no mask, no gradients.
    pub fn forward_infer(&self, store: &ParameterStore, image: &Tensor) -> Result<Tensor> {
        self.check_image(image)?;
        let pass = self.run(store, image, None, false)?;
        Ok(pass.tape.into_value(pass.output))
    }

    fn run(
        &self,
        store: &ParameterStore,
        image: &Tensor,
        excite: Option<(&MaskImage, f64)>,
        train: bool,
    ) -> Result<ForwardPass> {
        self.spec.check_store(store)?;
        let mut tape = Tape::new();
        let params: Vec<Var> = store
            .iter()
            .map(|(_, t)| {
                if train {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        let x = tape.constant(image.clone());
        let (output, sites) = self.record(&mut tape, &params, x, excite)?;
        Ok(ForwardPass {
            tape,
            output,
            params,
            sites,
        })
    }

    /// Records the network on an existing tape. `params` holds one tensor
    /// per parameter in store order; `excite` carries the full-resolution
    /// mask and factor, or `None` for the plain network.
    pub fn record(
        &self,
        tape: &mut Tape,
        params: &[Var],
        image: Var,
        excite: Option<(&MaskImage, f64)>,
    ) -> Result<(Var, Vec<SiteRecord>)> {
        if params.len() != 2 * self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "network needs {} parameter tensors, got {}",
                2 * self.layers.len(),
                params.len()
            )));
        }
        let mut sites = Vec::new();
        let mut layer = 0usize;
        let mut conv = |tape: &mut Tape, x: Var| -> Result<Var> {
            let def = &self.layers[layer];
            let (k, b) = (params[2 * layer], params[2 * layer + 1]);
            layer += 1;
            tape.conv2d(x, k, b, 1, def.kernel / 2)
        };
        let mut site = |tape: &mut Tape, s: Site, x: Var| -> Result<Var> {
            let y = match excite {
                Some((mask, alpha)) if self.excitation.placements.contains(&s) => excitation::assisted_excitation(
                    tape,
                    x,
                    mask,
                    alpha,
                    self.excitation.downscale_mode,
                    self.excitation.gradient_mode,
                )?,
                _ => x,
            };
            sites.push((s, x, y));
            Ok(y)
        };

        let mut x = image;
        let mut skips = Vec::with_capacity(self.spec.stages);
        for s in 1..=self.spec.stages {
            let c1 = conv(tape, x)?;
            let mut hcur = tape.relu(c1);
            match self.spec.encoder_kind {
                EncoderKind::AlexLike => {}
                EncoderKind::VggLike => {
                    let c2 = conv(tape, hcur)?;
                    hcur = tape.relu(c2);
                }
                EncoderKind::ResLike => {
                    let r = conv(tape, hcur)?;
                    let sum = tape.add(hcur, r)?;
                    hcur = tape.relu(sum);
                }
            }
            let e = site(tape, Site::Encoder(s), hcur)?;
            skips.push(e);
            x = tape.maxpool2(e)?;
        }
        let b = conv(tape, x)?;
        x = tape.relu(b);
        for s in (1..=self.spec.stages).rev() {
            let up = tape.upsample2(x)?;
            let cat = tape.concat_channels(up, skips[s - 1])?;
            let cat = site(tape, Site::Concat(s), cat)?;
            let c1 = conv(tape, cat)?;
            let r1 = tape.relu(c1);
            let c2 = conv(tape, r1)?;
            x = tape.relu(c2);
        }
        let logits = conv(tape, x)?;
        let output = tape.sigmoid(logits);
        Ok((output, sites))
    }
}
