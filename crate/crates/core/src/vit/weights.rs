use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::container::NamedTensorContainer;
use crate::error::{param, shape, Error, Result};

/// Standard deviation of the seeded Gaussian initialization.
pub const INIT_STD: f32 = 0.02;

/// Parameters of one pre-norm transformer layer.
///
/// Projection matrices are stored input-major (`in x out`, row-major), so a
/// token row vector `x` maps to `x * W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub channels: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub ln1_scale: Vec<f32>,
    pub ln1_bias: Vec<f32>,
    pub wq: Vec<f32>,
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    pub wo: Vec<f32>,
    pub bq: Vec<f32>,
    pub bk: Vec<f32>,
    pub bv: Vec<f32>,
    pub bo: Vec<f32>,
    pub ln2_scale: Vec<f32>,
    pub ln2_bias: Vec<f32>,
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

impl LayerWeights {
    /// Unit LN scales, zero biases and zero projections.
    pub fn zeros(channels: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        if channels == 0 || heads == 0 || mlp_ratio == 0 {
            return param("channels, heads and mlp ratio must be positive");
        }
        if !channels.is_multiple_of(heads) {
            return param(format!("{channels} channels are not divisible by {heads} heads"));
        }
        let (c, hidden) = (channels, channels * mlp_ratio);
        Ok(Self {
            channels,
            heads,
            mlp_ratio,
            ln1_scale: vec![1.0; c],
            ln1_bias: vec![0.0; c],
            wq: vec![0.0; c * c],
            wk: vec![0.0; c * c],
            wv: vec![0.0; c * c],
            wo: vec![0.0; c * c],
            bq: vec![0.0; c],
            bk: vec![0.0; c],
            bv: vec![0.0; c],
            bo: vec![0.0; c],
            ln2_scale: vec![1.0; c],
            ln2_bias: vec![0.0; c],
            w1: vec![0.0; c * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * c],
            b2: vec![0.0; c],
        })
    }

    /// Gaussian(0, `std`) projections, zero biases, unit LN scales.
    pub fn random(
        channels: usize,
        heads: usize,
        mlp_ratio: usize,
        std: f32,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        let mut w = Self::zeros(channels, heads, mlp_ratio)?;
        let normal = Normal::new(0.0f32, std).map_err(|e| Error::Parameter(e.to_string()))?;
        for m in [&mut w.wq, &mut w.wk, &mut w.wv, &mut w.wo, &mut w.w1, &mut w.w2] {
            m.iter_mut().for_each(|v| *v = normal.sample(rng));
        }
        Ok(w)
    }

    pub fn hidden(&self) -> usize {
        self.channels * self.mlp_ratio
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let (c, hid) = (self.channels, self.hidden());
        if self.heads == 0 || c % self.heads != 0 {
            return param(format!("{c} channels are not divisible by {} heads", self.heads));
        }
        let expect = [
            ("ln1.scale", self.ln1_scale.len(), c),
            ("ln1.bias", self.ln1_bias.len(), c),
            ("attn.wq", self.wq.len(), c * c),
            ("attn.wk", self.wk.len(), c * c),
            ("attn.wv", self.wv.len(), c * c),
            ("attn.wo", self.wo.len(), c * c),
            ("attn.bq", self.bq.len(), c),
            ("attn.bk", self.bk.len(), c),
            ("attn.bv", self.bv.len(), c),
            ("attn.bo", self.bo.len(), c),
            ("ln2.scale", self.ln2_scale.len(), c),
            ("ln2.bias", self.ln2_bias.len(), c),
            ("ffn.w1", self.w1.len(), c * hid),
            ("ffn.b1", self.b1.len(), hid),
            ("ffn.w2", self.w2.len(), hid * c),
            ("ffn.b2", self.b2.len(), c),
        ];
        for (name, got, want) in expect {
            if got != want {
                return shape(format!("{name} has {got} values, expected {want}"));
            }
        }
        if self.tensors().iter().any(|(_, _, v)| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("layer weights".into()));
        }
        Ok(())
    }

    fn tensors(&self) -> [(&'static str, Vec<usize>, &Vec<f32>); 16] {
        let (c, hid) = (self.channels, self.hidden());
        [
            ("ln1.scale", vec![c], &self.ln1_scale),
            ("ln1.bias", vec![c], &self.ln1_bias),
            ("attn.wq", vec![c, c], &self.wq),
            ("attn.wk", vec![c, c], &self.wk),
            ("attn.wv", vec![c, c], &self.wv),
            ("attn.wo", vec![c, c], &self.wo),
            ("attn.bq", vec![c], &self.bq),
            ("attn.bk", vec![c], &self.bk),
            ("attn.bv", vec![c], &self.bv),
            ("attn.bo", vec![c], &self.bo),
            ("ln2.scale", vec![c], &self.ln2_scale),
            ("ln2.bias", vec![c], &self.ln2_bias),
            ("ffn.w1", vec![c, hid], &self.w1),
            ("ffn.b1", vec![hid], &self.b1),
            ("ffn.w2", vec![hid, c], &self.w2),
            ("ffn.b2", vec![c], &self.b2),
        ]
    }
}

/// `layers` seeded random layers; the same seed always yields the same weights.
pub fn init_weights(
    seed: u64,
    layers: usize,
    channels: usize,
    heads: usize,
    mlp_ratio: usize,
) -> Result<Vec<LayerWeights>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..layers)
        .map(|_| LayerWeights::random(channels, heads, mlp_ratio, INIT_STD, &mut rng))
        .collect()
}

/// Stores layers as `layer{i}.{ln1,ln2}.{scale,bias}`,
/// `layer{i}.attn.{wq,wk,wv,wo,bq,bk,bv,bo}` and `layer{i}.ffn.{w1,b1,w2,b2}`.
pub fn weights_to_container(layers: &[LayerWeights]) -> Result<NamedTensorContainer> {
    let mut out = NamedTensorContainer::new();
    for (i, layer) in layers.iter().enumerate() {
        for (name, dims, data) in layer.tensors() {
            out.push(format!("layer{i}.{name}"), dims, data.clone())?;
        }
    }
    Ok(out)
}

/// Reads layers written by [`weights_to_container`].
///
/// Layer count comes from the `layer{i}.attn.wq` entries present, channels
/// from `wq`'s shape and the MLP ratio from `ffn.w1`. Head count is not
/// stored and must be supplied.
pub fn weights_from_container(
    container: &NamedTensorContainer,
    heads: usize,
) -> Result<Vec<LayerWeights>> {
    let mut layers = vec![];
    while let Some(wq) = container.get(&format!("layer{}.attn.wq", layers.len())) {
        let i = layers.len();
        let c = match wq.shape.as_slice() {
            [a, b] if a == b => *a,
            other => return shape(format!("layer{i}.attn.wq has shape {other:?}")),
        };
        let w1 = container.require(&format!("layer{i}.ffn.w1"))?;
        let hidden = match w1.shape.as_slice() {
            [a, h] if *a == c && h % c == 0 => *h,
            other => return shape(format!("layer{i}.ffn.w1 has shape {other:?}")),
        };
        let mut w = LayerWeights::zeros(c, heads, hidden / c)?;
        let get = |name: &str| -> Result<Vec<f32>> {
            Ok(container.require(&format!("layer{i}.{name}"))?.data.clone())
        };
        w.ln1_scale = get("ln1.scale")?;
        w.ln1_bias = get("ln1.bias")?;
        w.wq = get("attn.wq")?;
        w.wk = get("attn.wk")?;
        w.wv = get("attn.wv")?;
        w.wo = get("attn.wo")?;
        w.bq = get("attn.bq")?;
        w.bk = get("attn.bk")?;
        w.bv = get("attn.bv")?;
        w.bo = get("attn.bo")?;
        w.ln2_scale = get("ln2.scale")?;
        w.ln2_bias = get("ln2.bias")?;
        w.w1 = get("ffn.w1")?;
        w.b1 = get("ffn.b1")?;
        w.w2 = get("ffn.w2")?;
        w.b2 = get("ffn.b2")?;
        w.validate()?;
        layers.push(w);
    }
    if layers.is_empty() {
        return Err(Error::Missing("layer0.attn.wq".into()));
    }
    Ok(layers)
}
