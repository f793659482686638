//! U-shape generator and patch discriminator built on [`Graph`].

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Bound, ConvGeometry, Graph, NodeId};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

const KERNEL: usize = 4;
const DOWN: ConvGeometry = ConvGeometry { stride: 2, pad: 1 };
const FLAT: ConvGeometry = ConvGeometry { stride: 1, pad: 1 };
const LEAK: f64 = 0.2;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Generator,
    Discriminator,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Generator => "generator",
            Role::Discriminator => "discriminator",
        }
    }
}

/// Named parameter tensors of one network.
#[derive(Clone, PartialEq)]
pub struct ParamSet<T> {
    role: Role,
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> std::fmt::Debug for ParamSet<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamSet").field("role", &self.role).field("tensors", &self.tensors.len()).finish()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new(role: Role) -> Self {
        Self { role, tensors: BTreeMap::new() }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::InvalidParameter(format!("duplicate parameter {name}")));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Same names and shapes, every value replaced by `f(value)`.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { role: self.role, tensors: self.tensors.iter().map(|(k, t)| (k.clone(), t.map(&f))).collect() }
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet { role: self.role, tensors: self.tensors.iter().map(|(k, t)| (k.clone(), t.cast())).collect() }
    }

    /// Errors unless every layer of `layout` is present with its shapes.
    fn check_layout(&self, layout: &Layout) -> Result<()> {
        for layer in layout {
            let name = &layer.name;
            let per_channel = Some([1, layer.out, 1, 1]);
            let w = self.get(&format!("{name}.weight")).map(Tensor::shape);
            let b = self.get(&format!("{name}.bias")).map(Tensor::shape);
            if w != Some(layer.weight) || b != per_channel {
                return Err(Error::Shape(format!("{name}: parameters {w:?}/{b:?} do not match weights {:?}", layer.weight)));
            }
            if layer.norm {
                for suffix in ["norm_scale", "norm_shift"] {
                    let t = self.get(&format!("{name}.{suffix}")).map(Tensor::shape);
                    if t != per_channel {
                        return Err(Error::Shape(format!("{name}.{suffix}: shape {t:?}, expected {per_channel:?}")));
                    }
                }
            }
        }
        Ok(())
    }

    fn require(&self, bound: &Bound, name: &str) -> Result<NodeId> {
        bound.get(name).copied().ok_or_else(|| Error::Shape(format!("missing parameter {name}")))
    }
}

/// One convolution: weight shape, output channels and whether its output is
/// instance-normalised. Biases and norm parameters are `(1, out, 1, 1)`.
struct LayerSpec {
    name: String,
    weight: [usize; 4],
    out: usize,
    norm: bool,
}

type Layout = Vec<LayerSpec>;

fn init_params<T: Real>(role: Role, layout: &Layout, std: f64, rng: &mut impl Rng) -> ParamSet<T> {
    let normal = Normal::new(0.0, std).expect("positive std");
    let mut set = ParamSet::new(role);
    for layer in layout {
        let (name, out) = (&layer.name, layer.out);
        let n: usize = layer.weight.iter().product();
        let w = (0..n).map(|_| T::of(normal.sample(rng))).collect();
        set.insert(format!("{name}.weight"), Tensor::from_vec(layer.weight, w).unwrap()).unwrap();
        set.insert(format!("{name}.bias"), Tensor::zeros([1, out, 1, 1])).unwrap();
        if layer.norm {
            let scale = (0..out).map(|_| T::of(1.0 + normal.sample(rng))).collect();
            set.insert(format!("{name}.norm_scale"), Tensor::from_vec([1, out, 1, 1], scale).unwrap()).unwrap();
            set.insert(format!("{name}.norm_shift"), Tensor::zeros([1, out, 1, 1])).unwrap();
        }
    }
    set
}

fn maybe_norm<T: Real>(g: &mut Graph<T>, params: &ParamSet<T>, bound: &Bound, name: &str, norm: bool, h: NodeId) -> Result<NodeId> {
    if !norm {
        return Ok(h);
    }
    let scale = params.require(bound, &format!("{name}.norm_scale"))?;
    let shift = params.require(bound, &format!("{name}.norm_shift"))?;
    g.instance_norm(h, scale, shift)
}

/// Encoder-decoder with mirrored skip connections.
///
/// Level `i` (1-based) of the encoder is a stride-2 convolution to
/// `base * 2^(i-1)` channels (capped at `8 * base`), preceded by a leaky ReLU
/// except at the first level. The decoder mirrors it with ReLU + stride-2
/// transposed convolutions, concatenating the encoder output of the same
/// level; the outermost level emits one channel through `tanh`. Every
/// convolution except the outermost ones and the innermost encoder level is
/// instance-normalised. Dropout (the noise source) acts on the
/// `dropout_levels` innermost decoder outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub dropout_levels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self { depth: 4, base_channels: 16, dropout_levels: 2 }
    }
}

impl UNetConfig {
    fn channels(&self, level: usize) -> usize {
        self.base_channels * (1 << (level - 1).min(3))
    }

    fn down_norm(&self, level: usize) -> bool {
        level > 1 && level < self.depth
    }

    fn up_norm(&self, level: usize) -> bool {
        level > 1
    }

    fn layout(&self) -> Layout {
        let mut layout = Vec::new();
        for i in 1..=self.depth {
            let c_in = if i == 1 { 1 } else { self.channels(i - 1) };
            let out = self.channels(i);
            layout.push(LayerSpec { name: format!("down{i}"), weight: [out, c_in, KERNEL, KERNEL], out, norm: self.down_norm(i) });
        }
        for i in 1..=self.depth {
            let c_in = if i == self.depth { self.channels(i) } else { 2 * self.channels(i) };
            let c_out = if i == 1 { 1 } else { self.channels(i - 1) };
            layout.push(LayerSpec { name: format!("up{i}"), weight: [c_in, c_out, KERNEL, KERNEL], out: c_out, norm: self.up_norm(i) });
        }
        layout
    }

    pub fn init<T: Real>(&self, rng: &mut impl Rng) -> ParamSet<T> {
        init_params(Role::Generator, &self.layout(), INIT_STD, rng)
    }

    pub fn init_with_std<T: Real>(&self, std: f64, rng: &mut impl Rng) -> ParamSet<T> {
        init_params(Role::Generator, &self.layout(), std, rng)
    }

    /// Spatial sizes must be divisible by this.
    pub fn granularity(&self) -> usize {
        1 << self.depth
    }

    fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 {
            return Err(Error::InvalidParameter(format!("invalid generator config {self:?}")));
        }
        Ok(())
    }

    /// Records the forward pass on `g`. `dropout` is `Some((rate, rng))`
    /// in training mode.
    pub fn forward<T: Real, R: Rng>(
        &self,
        g: &mut Graph<T>,
        params: &ParamSet<T>,
        bound: &Bound,
        x: NodeId,
        mut dropout: Option<(f64, &mut R)>,
    ) -> Result<NodeId> {
        self.validate()?;
        params.check_layout(&self.layout())?;
        let shape = g.value(x).shape();
        if shape[1] != 1 {
            return Err(Error::Shape(format!("generator expects 1 input channel, got {}", shape[1])));
        }
        let gran = self.granularity();
        if !shape[2].is_multiple_of(gran) || !shape[3].is_multiple_of(gran) {
            return Err(Error::Shape(format!(
                "input {}x{} not divisible by {gran} for a depth-{} generator",
                shape[2], shape[3], self.depth
            )));
        }
        let layer = |name: &str| -> Result<(NodeId, NodeId)> {
            Ok((params.require(bound, &format!("{name}.weight"))?, params.require(bound, &format!("{name}.bias"))?))
        };
        let mut skips = Vec::with_capacity(self.depth);
        let mut h = x;
        for i in 1..=self.depth {
            if i > 1 {
                h = g.leaky_relu(h, LEAK);
            }
            let name = format!("down{i}");
            let (w, b) = layer(&name)?;
            h = g.conv2d(h, w, b, DOWN)?;
            h = maybe_norm(g, params, bound, &name, self.down_norm(i), h)?;
            skips.push(h);
        }
        let mut u = skips[self.depth - 1];
        for i in (1..=self.depth).rev() {
            let input = if i == self.depth { u } else { g.concat(u, skips[i - 1])? };
            let act = g.relu(input);
            let name = format!("up{i}");
            let (w, b) = layer(&name)?;
            u = g.conv_transpose2d(act, w, b, DOWN)?;
            u = maybe_norm(g, params, bound, &name, self.up_norm(i), u)?;
            let innermost = self.depth - i < self.dropout_levels;
            if i > 1 && innermost {
                if let Some((rate, rng)) = dropout.as_mut() {
                    if *rate > 0.0 {
                        u = g.dropout(u, *rate, *rng);
                    }
                }
            }
        }
        Ok(g.tanh(u))
    }
}

/// Patch discriminator over the channel-concatenated (condition, image) pair:
/// `stride2_layers` stride-2 convolutions followed by `stride1_layers` stride-1
/// convolutions, the last producing a raw one-channel score map. Every layer
/// but the first and the last is instance-normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscConfig {
    pub base_channels: usize,
    pub stride2_layers: usize,
    pub stride1_layers: usize,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self { base_channels: 16, stride2_layers: 3, stride1_layers: 2 }
    }
}

impl DiscConfig {
    fn layers(&self) -> Vec<(usize, usize, ConvGeometry)> {
        let total = self.stride2_layers + self.stride1_layers;
        let mut c_in = 2;
        let mut out = Vec::with_capacity(total);
        for j in 0..total {
            let c_out = if j + 1 == total { 1 } else { self.base_channels * (1 << j.min(3)) };
            let geo = if j < self.stride2_layers { DOWN } else { FLAT };
            out.push((c_in, c_out, geo));
            c_in = c_out;
        }
        out
    }

    fn normed(j: usize, total: usize) -> bool {
        j > 0 && j + 1 < total
    }

    fn layout(&self) -> Layout {
        let total = self.stride2_layers + self.stride1_layers;
        self.layers()
            .into_iter()
            .enumerate()
            .map(|(j, (c_in, c_out, _))| LayerSpec {
                name: format!("layer{}", j + 1),
                weight: [c_out, c_in, KERNEL, KERNEL],
                out: c_out,
                norm: Self::normed(j, total),
            })
            .collect()
    }

    pub fn init<T: Real>(&self, rng: &mut impl Rng) -> ParamSet<T> {
        init_params(Role::Discriminator, &self.layout(), INIT_STD, rng)
    }

    pub fn init_with_std<T: Real>(&self, std: f64, rng: &mut impl Rng) -> ParamSet<T> {
        init_params(Role::Discriminator, &self.layout(), std, rng)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, params: &ParamSet<T>, bound: &Bound, x: NodeId, y: NodeId) -> Result<NodeId> {
        let (xs, ys) = (g.value(x).shape(), g.value(y).shape());
        if xs != ys || xs[1] != 1 {
            return Err(Error::Shape(format!("discriminator inputs {xs:?} and {ys:?}")));
        }
        params.check_layout(&self.layout())?;
        let mut h = g.concat(x, y)?;
        let layers = self.layers();
        for (j, (_, _, geo)) in layers.iter().enumerate() {
            let w = params.require(bound, &format!("layer{}.weight", j + 1))?;
            let b = params.require(bound, &format!("layer{}.bias", j + 1))?;
            h = g.conv2d(h, w, b, *geo)?;
            h = maybe_norm(g, params, bound, &format!("layer{}", j + 1), Self::normed(j, layers.len()), h)?;
            if j + 1 < layers.len() {
                h = g.leaky_relu(h, LEAK);
            }
        }
        Ok(h)
    }
}

/// Convenience forward pass returning the generator output.
pub fn generator_forward<T: Real, R: Rng>(
    config: &UNetConfig,
    params: &ParamSet<T>,
    x: &Tensor<T>,
    dropout: Option<(f64, &mut R)>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let bound = g.bind(params.iter(), false);
    let xi = g.input(x.clone());
    let out = config.forward(&mut g, params, &bound, xi, dropout)?;
    Ok(g.value(out).clone())
}

/// Convenience forward pass returning the patch score map.
pub fn discriminator_forward<T: Real>(config: &DiscConfig, params: &ParamSet<T>, x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let bound = g.bind(params.iter(), false);
    let (xi, yi) = (g.input(x.clone()), g.input(y.clone()));
    let out = config.forward(&mut g, params, &bound, xi, yi)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    type NoRng = rand_chacha::ChaCha8Rng;

    fn input(shape: [usize; 4], seed: u64) -> Tensor<f32> {
        let mut rng = seed::rng(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn generator_preserves_shape() {
        let cfg = UNetConfig::default();
        let params: ParamSet<f32> = cfg.init(&mut seed::rng(1));
        let out = generator_forward::<f32, NoRng>(&cfg, &params, &input([1, 1, 64, 64], 2), None).unwrap();
        assert_eq!(out.shape(), [1, 1, 64, 64]);
        assert!(out.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn zero_generator_outputs_zero() {
        let cfg = UNetConfig::default();
        let params: ParamSet<f32> = cfg.init::<f32>(&mut seed::rng(1)).map(|_| 0.0);
        let out = generator_forward::<f32, NoRng>(&cfg, &params, &input([2, 1, 32, 32], 3), None).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inference_is_deterministic_and_training_is_not() {
        let cfg = UNetConfig::default();
        let params: ParamSet<f32> = cfg.init(&mut seed::rng(4));
        let x = input([1, 1, 32, 32], 5);
        let a = generator_forward::<f32, NoRng>(&cfg, &params, &x, None).unwrap();
        let b = generator_forward::<f32, NoRng>(&cfg, &params, &x, None).unwrap();
        assert_eq!(a, b);
        let mut rng = seed::rng(6);
        let t1 = generator_forward(&cfg, &params, &x, Some((0.5, &mut rng))).unwrap();
        let t2 = generator_forward(&cfg, &params, &x, Some((0.5, &mut rng))).unwrap();
        assert_ne!(t1, t2);
    }

    #[test]
    fn generator_rejects_bad_shapes() {
        let cfg = UNetConfig::default();
        let params: ParamSet<f32> = cfg.init(&mut seed::rng(1));
        assert!(generator_forward::<f32, NoRng>(&cfg, &params, &input([1, 1, 40, 40], 1), None).is_err());
        assert!(generator_forward::<f32, NoRng>(&cfg, &params, &input([1, 2, 64, 64], 1), None).is_err());
        let small: ParamSet<f32> = UNetConfig { base_channels: 8, ..cfg }.init(&mut seed::rng(1));
        assert!(generator_forward::<f32, NoRng>(&cfg, &small, &input([1, 1, 64, 64], 1), None).is_err());
    }

    #[test]
    fn patch_map_shape() {
        let cfg = DiscConfig::default();
        let params: ParamSet<f32> = cfg.init(&mut seed::rng(2));
        let out = discriminator_forward(&cfg, &params, &input([1, 1, 64, 64], 1), &input([1, 1, 64, 64], 2)).unwrap();
        // oracle: s' = floor((s + 2p - k) / stride) + 1 per layer
        let mut s = 64usize;
        for (stride, pad) in [(2, 1), (2, 1), (2, 1), (1, 1), (1, 1)] {
            s = (s + 2 * pad - 4) / stride + 1;
        }
        assert_eq!(out.shape(), [1, 1, s, s]);
        assert_eq!(s, 6);
    }

    #[test]
    fn zero_discriminator_outputs_zero() {
        let cfg = DiscConfig::default();
        let params: ParamSet<f32> = cfg.init::<f32>(&mut seed::rng(2)).map(|_| 0.0);
        let out = discriminator_forward(&cfg, &params, &input([1, 1, 32, 32], 1), &input([1, 1, 32, 32], 2)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn discriminator_is_batch_independent() {
        let cfg = DiscConfig::default();
        let params: ParamSet<f32> = cfg.init(&mut seed::rng(3));
        let x = input([3, 1, 32, 32], 1);
        let y = input([3, 1, 32, 32], 2);
        let out = discriminator_forward(&cfg, &params, &x, &y).unwrap();
        let perm = [2usize, 0, 1];
        let px = Tensor::stack(&perm.iter().map(|&i| Tensor::from_vec([1, 1, 32, 32], x.item(i).to_vec()).unwrap()).collect::<Vec<_>>().iter().collect::<Vec<_>>()).unwrap();
        let py = Tensor::stack(&perm.iter().map(|&i| Tensor::from_vec([1, 1, 32, 32], y.item(i).to_vec()).unwrap()).collect::<Vec<_>>().iter().collect::<Vec<_>>()).unwrap();
        let pout = discriminator_forward(&cfg, &params, &px, &py).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(pout.item(j), out.item(i));
        }
    }

    #[test]
    fn discriminator_rejects_mismatch() {
        let cfg = DiscConfig::default();
        let params: ParamSet<f32> = cfg.init(&mut seed::rng(3));
        assert!(discriminator_forward(&cfg, &params, &input([1, 1, 32, 32], 1), &input([1, 1, 16, 16], 2)).is_err());
    }

    #[test]
    fn norm_sits_on_inner_layers_only() {
        let g: ParamSet<f32> = UNetConfig::default().init(&mut seed::rng(1));
        let normed: Vec<&str> = g.iter().filter_map(|(k, _)| k.strip_suffix(".norm_scale")).collect();
        assert_eq!(normed, ["down2", "down3", "up2", "up3", "up4"]);
        let d: ParamSet<f32> = DiscConfig::default().init(&mut seed::rng(1));
        let normed: Vec<&str> = d.iter().filter_map(|(k, _)| k.strip_suffix(".norm_scale")).collect();
        assert_eq!(normed, ["layer2", "layer3", "layer4"]);
    }

    #[test]
    fn missing_norm_parameters_are_rejected() {
        let cfg = UNetConfig::default();
        let full: ParamSet<f32> = cfg.init(&mut seed::rng(1));
        let mut partial = ParamSet::new(Role::Generator);
        for (k, t) in full.iter().filter(|(k, _)| k.as_str() != "up3.norm_shift") {
            partial.insert(k.clone(), t.clone()).unwrap();
        }
        let err = generator_forward::<f32, NoRng>(&cfg, &partial, &input([1, 1, 32, 32], 1), None).unwrap_err();
        assert!(err.to_string().contains("up3.norm_shift"), "{err}");
    }

    #[test]
    fn generator_is_batch_independent() {
        let cfg = UNetConfig::default();
        let params: ParamSet<f32> = cfg.init(&mut seed::rng(7));
        let x = input([2, 1, 32, 32], 8);
        let both = generator_forward::<f32, NoRng>(&cfg, &params, &x, None).unwrap();
        for n in 0..2 {
            let one = Tensor::from_vec([1, 1, 32, 32], x.item(n).to_vec()).unwrap();
            let alone = generator_forward::<f32, NoRng>(&cfg, &params, &one, None).unwrap();
            assert_eq!(alone.item(0), both.item(n));
        }
    }
}
