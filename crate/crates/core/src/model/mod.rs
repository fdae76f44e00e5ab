//! Shared encoder with a skip-connected segmentation decoder and a skip-free
//! reconstruction decoder.

mod checkpoint;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointError};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::{Graph, TensorError, TensorId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("input shape {got:?} does not match expected {expected:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Network topology and layer constants.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    /// 2 for attention-masked reconstruction (background, foreground), 1 for plain.
    pub recon_channels: usize,
    pub leaky_slope: f64,
    pub norm_eps: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_channels: 8,
            max_channels: 256,
            height: 64,
            width: 64,
            in_channels: 1,
            recon_channels: 2,
            leaky_slope: 0.01,
            norm_eps: 1e-5,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.levels < 2 {
            return fail(format!("levels must be >= 2, got {}", self.levels));
        }
        if self.base_channels == 0 || self.max_channels < self.base_channels {
            return fail("need 0 < base_channels <= max_channels".into());
        }
        if self.in_channels == 0 {
            return fail("in_channels must be positive".into());
        }
        if !(1..=2).contains(&self.recon_channels) {
            return fail(format!("recon_channels must be 1 or 2, got {}", self.recon_channels));
        }
        let factor = 1usize << (self.levels - 1);
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(factor)
            || !self.width.is_multiple_of(factor)
        {
            return fail(format!(
                "input extents {}x{} must be positive multiples of {factor}",
                self.height, self.width
            ));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return fail(format!("leaky_slope must lie in [0, 1), got {}", self.leaky_slope));
        }
        if !(self.norm_eps > 0.0) {
            return fail(format!("norm_eps must be positive, got {}", self.norm_eps));
        }
        Ok(())
    }

    /// Feature channels at encoder level `level` (0 = full resolution).
    pub fn channels(&self, level: usize) -> usize {
        (self.base_channels << level).min(self.max_channels)
    }

    pub fn input_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.in_channels, self.height, self.width]
    }
}

/// Which optimizer path owns a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Encoder,
    SegDecoder,
    ReconDecoder,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::Encoder, ParamGroup::SegDecoder, ParamGroup::ReconDecoder];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::SegDecoder => "seg_decoder",
            ParamGroup::ReconDecoder => "recon_decoder",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ParamGroup::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| format!("unknown parameter group `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    group: ParamGroup,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
}

impl<T> Parameter<T> {
    pub fn group(&self) -> ParamGroup {
        self.group
    }
}

/// Parameter indices of one conv + instance norm block.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ConvBlock {
    weight: usize,
    bias: usize,
    scale: usize,
    shift: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Head {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    encoder: Vec<[ConvBlock; 2]>,
    /// Indexed by level; the deepest level has no decoder blocks.
    seg: Vec<[ConvBlock; 2]>,
    seg_head: Head,
    recon: Vec<[ConvBlock; 2]>,
    recon_head: Head,
}

/// Parameter declaration with its initializer.
struct Decl {
    group: ParamGroup,
    name: String,
    shape: Vec<usize>,
    init: Init,
}

enum Init {
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Default)]
struct Declarer {
    decls: Vec<Decl>,
}

impl Declarer {
    fn add(&mut self, group: ParamGroup, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.decls.push(Decl {
            group,
            name,
            shape,
            init,
        });
        self.decls.len() - 1
    }

    fn block(&mut self, group: ParamGroup, prefix: &str, cin: usize, cout: usize) -> ConvBlock {
        ConvBlock {
            weight: self.add(
                group,
                format!("{prefix}.conv.weight"),
                vec![cout, cin, 3, 3],
                Init::FanIn(cin * 9),
            ),
            bias: self.add(group, format!("{prefix}.conv.bias"), vec![cout], Init::Zeros),
            scale: self.add(group, format!("{prefix}.norm.scale"), vec![cout], Init::Ones),
            shift: self.add(group, format!("{prefix}.norm.shift"), vec![cout], Init::Zeros),
        }
    }

    fn head(&mut self, group: ParamGroup, prefix: &str, cin: usize, cout: usize) -> Head {
        Head {
            weight: self.add(
                group,
                format!("{prefix}.head.weight"),
                vec![cout, cin, 1, 1],
                Init::FanIn(cin),
            ),
            bias: self.add(group, format!("{prefix}.head.bias"), vec![cout], Init::Zeros),
        }
    }

    /// Decoder blocks indexed by level, declared deepest first.
    fn decoder(&mut self, cfg: &NetworkConfig, group: ParamGroup, tag: &str, skips: bool) -> Vec<[ConvBlock; 2]> {
        let mut blocks = Vec::with_capacity(cfg.levels - 1);
        for l in (0..cfg.levels - 1).rev() {
            let c = cfg.channels(l);
            let cin = cfg.channels(l + 1) + if skips { c } else { 0 };
            blocks.push([
                self.block(group, &format!("{tag}{l}.0"), cin, c),
                self.block(group, &format!("{tag}{l}.1"), c, c),
            ]);
        }
        blocks.reverse();
        blocks
    }
}

fn declare(cfg: &NetworkConfig) -> (Vec<Decl>, Layout) {
    let mut d = Declarer::default();
    let encoder = (0..cfg.levels)
        .map(|l| {
            let cin = if l == 0 { cfg.in_channels } else { cfg.channels(l - 1) };
            let c = cfg.channels(l);
            [
                d.block(ParamGroup::Encoder, &format!("enc{l}.0"), cin, c),
                d.block(ParamGroup::Encoder, &format!("enc{l}.1"), c, c),
            ]
        })
        .collect();
    let seg = d.decoder(cfg, ParamGroup::SegDecoder, "seg", true);
    let seg_head = d.head(ParamGroup::SegDecoder, "seg", cfg.channels(0), 1);
    let recon = d.decoder(cfg, ParamGroup::ReconDecoder, "rec", false);
    let recon_head = d.head(ParamGroup::ReconDecoder, "rec", cfg.channels(0), cfg.recon_channels);
    let layout = Layout {
        encoder,
        seg,
        seg_head,
        recon,
        recon_head,
    };
    (d.decls, layout)
}

/// Shared-encoder, dual-decoder segmentation network.
#[derive(Debug, Clone, PartialEq)]
pub struct MasslModel<T> {
    config: NetworkConfig,
    params: Vec<Parameter<T>>,
    layout: Layout,
}

/// Parameters of a model registered as leaves of one graph.
#[derive(Debug, Clone)]
pub struct BoundParams {
    ids: Vec<TensorId>,
}

impl BoundParams {
    pub fn id(&self, index: usize) -> TensorId {
        self.ids[index]
    }

    pub fn ids(&self) -> &[TensorId] {
        &self.ids
    }

    /// Per-parameter gradients; `None` where the parameter was bound without
    /// `requires_grad` or no backward pass reached it.
    pub fn gradients<T: Scalar>(&self, graph: &Graph<T>) -> Vec<Option<Vec<T>>> {
        self.ids
            .iter()
            .map(|&id| {
                if graph.requires_grad(id) {
                    Some(
                        graph
                            .grad(id)
                            .map_or_else(|| vec![T::zero(); graph.value(id).len()], <[T]>::to_vec),
                    )
                } else {
                    None
                }
            })
            .collect()
    }
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Soft foreground prediction, `[N, 1, H, W]`.
    pub segmentation: TensorId,
    /// `[N, recon_channels, H, W]`; channel 0 is background, 1 foreground.
    pub reconstruction: TensorId,
    /// Last activation of each encoder level, full resolution first.
    pub features: Vec<TensorId>,
}

impl<T: Scalar> MasslModel<T> {
    /// Builds a freshly initialized model; deterministic in `seed`.
    ///
    /// Conv weights are drawn uniformly from `±sqrt(6 / fan_in)`, biases and norm
    /// shifts start at zero, norm scales at one.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let (decls, layout) = declare(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = decls
            .into_iter()
            .map(|d| {
                let n = d.shape.iter().product();
                let values = match d.init {
                    Init::Zeros => vec![T::zero(); n],
                    Init::Ones => vec![T::one(); n],
                    Init::FanIn(fan_in) => {
                        let bound = (6.0 / fan_in as f64).sqrt();
                        (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect()
                    }
                };
                Parameter {
                    name: d.name,
                    group: d.group,
                    shape: d.shape,
                    values,
                }
            })
            .collect();
        Ok(Self { config, params, layout })
    }

    pub(crate) fn from_parts(config: NetworkConfig, params: Vec<Parameter<T>>) -> Result<Self, ModelError> {
        config.validate()?;
        let (decls, layout) = declare(&config);
        if decls.len() != params.len()
            || decls
                .iter()
                .zip(&params)
                .any(|(d, p)| d.name != p.name || d.group != p.group || d.shape != p.shape)
        {
            return Err(ModelError::Config(
                "parameter list does not match the network config".into(),
            ));
        }
        Ok(Self { config, params, layout })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    /// Concatenated values of every parameter in `group`, in declaration order.
    pub fn group_values(&self, group: ParamGroup) -> Vec<T> {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .flat_map(|p| p.values.iter().copied())
            .collect()
    }

    /// Converts to another scalar precision.
    pub fn cast<U: Scalar>(&self) -> MasslModel<U> {
        MasslModel {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    group: p.group,
                    shape: p.shape.clone(),
                    values: p.values.iter().map(|v| U::of(v.as_f64())).collect(),
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }

    /// Registers every parameter as a graph leaf; `trainable` decides `requires_grad`.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: impl Fn(ParamGroup) -> bool) -> BoundParams {
        let ids = self
            .params
            .iter()
            .map(|p| {
                graph
                    .leaf(&p.shape, p.values.clone(), trainable(p.group))
                    .expect("parameter shapes are validated at construction")
            })
            .collect();
        BoundParams { ids }
    }

    fn conv_block(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        x: TensorId,
        block: &ConvBlock,
    ) -> Result<TensorId, ModelError> {
        let y = g.conv2d(x, p.id(block.weight), p.id(block.bias))?;
        let y = g.instance_norm(y, p.id(block.scale), p.id(block.shift), T::of(self.config.norm_eps))?;
        Ok(g.leaky_relu(y, T::of(self.config.leaky_slope)))
    }

    fn head(&self, g: &mut Graph<T>, p: &BoundParams, x: TensorId, head: &Head) -> Result<TensorId, ModelError> {
        let y = g.conv2d(x, p.id(head.weight), p.id(head.bias))?;
        Ok(g.sigmoid(y))
    }

    /// Encoder pass; returns the last activation of every level.
    pub fn encode(&self, g: &mut Graph<T>, p: &BoundParams, x: TensorId) -> Result<Vec<TensorId>, ModelError> {
        let shape = g.shape(x);
        let expected = self.config.input_shape(shape.first().copied().unwrap_or(0));
        if shape != expected || expected[0] == 0 {
            return Err(ModelError::InputShape {
                expected: expected.to_vec(),
                got: shape.to_vec(),
            });
        }
        let mut features = Vec::with_capacity(self.config.levels);
        let mut h = x;
        for (level, blocks) in self.layout.encoder.iter().enumerate() {
            if level > 0 {
                h = g.avg_pool2(h)?;
            }
            for block in blocks {
                h = self.conv_block(g, p, h, block)?;
            }
            features.push(h);
        }
        Ok(features)
    }

    /// Segmentation decoder with skip connections: upsample, concatenate, two blocks.
    pub fn segment(&self, g: &mut Graph<T>, p: &BoundParams, features: &[TensorId]) -> Result<TensorId, ModelError> {
        let mut h = *features.last().expect("encoder produces every level");
        for level in (0..self.config.levels - 1).rev() {
            let up = g.upsample2(h)?;
            h = g.concat_channels(up, features[level])?;
            for block in &self.layout.seg[level] {
                h = self.conv_block(g, p, h, block)?;
            }
        }
        self.head(g, p, h, &self.layout.seg_head)
    }

    /// Reconstruction decoder; sees only the deepest features.
    pub fn reconstruct(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        features: &[TensorId],
    ) -> Result<TensorId, ModelError> {
        let mut h = *features.last().expect("encoder produces every level");
        for level in (0..self.config.levels - 1).rev() {
            h = g.upsample2(h)?;
            for block in &self.layout.recon[level] {
                h = self.conv_block(g, p, h, block)?;
            }
        }
        self.head(g, p, h, &self.layout.recon_head)
    }

    pub fn forward(&self, g: &mut Graph<T>, p: &BoundParams, x: TensorId) -> Result<ForwardOutput, ModelError> {
        let features = self.encode(g, p, x)?;
        let segmentation = self.segment(g, p, &features)?;
        let reconstruction = self.reconstruct(g, p, &features)?;
        Ok(ForwardOutput {
            segmentation,
            reconstruction,
            features,
        })
    }

    /// Segmentation probabilities for a batch of images, outside any training graph.
    pub fn predict(&self, images: &[T], batch: usize) -> Result<Vec<T>, ModelError> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, |_| false);
        let x = g.constant(&self.config.input_shape(batch), images.to_vec())?;
        let features = self.encode(&mut g, &p, x)?;
        let seg = self.segment(&mut g, &p, &features)?;
        Ok(g.value(seg).to_vec())
    }
}
