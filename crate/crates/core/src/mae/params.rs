//! Named parameter store and its canonical layout.

use std::collections::BTreeMap;

use rand::Rng;

use super::{MaeError, ModelConfig};
use crate::rng::stream;
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
    /// Uniform in `±0.02`.
    Small,
    /// Fixed sinusoidal table (not trained).
    Sinusoid,
}

struct Spec {
    name: String,
    dims: [usize; 2],
    init: Init,
}

fn push_block(out: &mut Vec<Spec>, prefix: &str, d: usize, hidden: usize) {
    let mut add = |n: &str, dims: [usize; 2], init: Init| out.push(Spec { name: format!("{prefix}.{n}"), dims, init });
    add("norm1.gamma", [1, d], Init::Ones);
    add("norm1.beta", [1, d], Init::Zeros);
    add("attn.qkv.weight", [d, 3 * d], Init::FanIn(d));
    add("attn.qkv.bias", [1, 3 * d], Init::Zeros);
    add("attn.proj.weight", [d, d], Init::FanIn(d));
    add("attn.proj.bias", [1, d], Init::Zeros);
    add("norm2.gamma", [1, d], Init::Ones);
    add("norm2.beta", [1, d], Init::Zeros);
    add("mlp.fc1.weight", [d, hidden], Init::FanIn(d));
    add("mlp.fc1.bias", [1, hidden], Init::Zeros);
    add("mlp.fc2.weight", [hidden, d], Init::FanIn(hidden));
    add("mlp.fc2.bias", [1, d], Init::Zeros);
}

fn specs(cfg: &ModelConfig) -> Vec<Spec> {
    let (d, dd, pl, n) = (cfg.enc_dim, cfg.dec_dim, cfg.patch_len(), cfg.n_tokens());
    let mut out = Vec::new();
    let add =
        |out: &mut Vec<Spec>, n: &str, dims: [usize; 2], init: Init| out.push(Spec { name: n.to_string(), dims, init });
    add(&mut out, "patch_embed.weight", [pl, d], Init::FanIn(pl));
    add(&mut out, "patch_embed.bias", [1, d], Init::Zeros);
    add(&mut out, "enc.pos", [n, d], Init::Sinusoid);
    add(&mut out, "reg_token", [1, d], Init::Zeros);
    for b in 0..cfg.enc_blocks {
        push_block(&mut out, &format!("enc.blocks.{b}"), d, d * cfg.mlp_ratio);
    }
    add(&mut out, "enc.norm.gamma", [1, d], Init::Ones);
    add(&mut out, "enc.norm.beta", [1, d], Init::Zeros);
    add(&mut out, "reg_head.weight", [d, 1], Init::FanIn(d));
    add(&mut out, "reg_head.bias", [1, 1], Init::Zeros);
    add(&mut out, "dec.embed.weight", [d, dd], Init::FanIn(d));
    add(&mut out, "dec.embed.bias", [1, dd], Init::Zeros);
    add(&mut out, "mask_token", [1, dd], Init::Small);
    add(&mut out, "dec.pos", [n, dd], Init::Sinusoid);
    for b in 0..cfg.dec_blocks {
        push_block(&mut out, &format!("dec.blocks.{b}"), dd, dd * cfg.mlp_ratio);
    }
    add(&mut out, "dec.norm.gamma", [1, dd], Init::Ones);
    add(&mut out, "dec.norm.beta", [1, dd], Init::Zeros);
    add(&mut out, "dec.head.weight", [dd, pl], Init::FanIn(dd));
    add(&mut out, "dec.head.bias", [1, pl], Init::Zeros);
    out
}

/// `(name, dims)` of every parameter, in storage order.
pub fn canonical_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    specs(cfg).into_iter().map(|s| (s.name, s.dims.to_vec())).collect()
}

/// Positional tables are fixed; everything else is optimized.
fn is_trainable(name: &str) -> bool {
    !name.ends_with(".pos")
}

/// Decoupled weight decay applies to projection matrices only; biases,
/// normalization parameters and the learned tokens are not decayed.
fn is_decayed(name: &str) -> bool {
    name.ends_with(".weight")
}

fn sinusoid(n: usize, d: usize) -> Vec<f64> {
    let mut v = vec![0.0; n * d];
    for t in 0..n {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = t as f64 * freq;
            v[t * d + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: DenseTensor<f64>,
    pub trainable: bool,
    pub decay: bool,
}

/// Name → tensor map in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
}

impl ModelParams {
    /// Deterministic initialization; each tensor draws from its own stream.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, MaeError> {
        cfg.validate()?;
        let mut entries = Vec::new();
        for s in specs(cfg) {
            let len = s.dims[0] * s.dims[1];
            let mut rng = stream(seed, &s.name, "init");
            let data = match s.init {
                Init::FanIn(f) => {
                    let b = 1.0 / (f as f64).sqrt();
                    (0..len).map(|_| rng.gen_range(-b..b)).collect()
                }
                Init::Small => (0..len).map(|_| rng.gen_range(-0.02..0.02)).collect(),
                Init::Zeros => vec![0.0; len],
                Init::Ones => vec![1.0; len],
                Init::Sinusoid => sinusoid(s.dims[0], s.dims[1]),
            };
            entries.push(ParamEntry {
                trainable: is_trainable(&s.name),
                decay: is_decayed(&s.name),
                tensor: DenseTensor::new(s.dims.to_vec(), data)?,
                name: s.name,
            });
        }
        Ok(Self::from_entries(entries))
    }

    fn from_entries(entries: Vec<ParamEntry>) -> Self {
        let index = entries.iter().enumerate().map(|(i, e)| (e.name.clone(), i)).collect();
        Self { entries, index }
    }

    /// Builds a store from `(name, tensor)` pairs, checking them against the
    /// canonical layout of `cfg` (every name exactly once, shapes equal).
    pub fn from_named(cfg: &ModelConfig, named: Vec<(String, DenseTensor<f64>)>) -> Result<Self, MaeError> {
        let layout = canonical_layout(cfg);
        let mut by_name: BTreeMap<String, DenseTensor<f64>> = BTreeMap::new();
        for (n, t) in named {
            if by_name.insert(n.clone(), t).is_some() {
                return Err(MaeError::Layout(format!("duplicate entry {n:?}")));
            }
        }
        let mut entries = Vec::with_capacity(layout.len());
        for (name, dims) in layout {
            let t = by_name.remove(&name).ok_or_else(|| MaeError::Layout(format!("missing entry {name:?}")))?;
            if t.dims() != dims.as_slice() {
                return Err(MaeError::ShapeMismatch { name, got: t.dims().to_vec(), expected: dims });
            }
            entries.push(ParamEntry { trainable: is_trainable(&name), decay: is_decayed(&name), tensor: t, name });
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(MaeError::Layout(format!("unexpected entry {extra:?}")));
        }
        Ok(Self::from_entries(entries))
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&DenseTensor<f64>> {
        self.index_of(name).map(|i| &self.entries[i].tensor)
    }

    /// Same layout with every tensor zeroed.
    pub fn zeros_like(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|e| ParamEntry {
                tensor: DenseTensor::zeros(e.tensor.dims().to_vec()).expect("dims already valid"),
                ..e.clone()
            })
            .collect();
        Self::from_entries(entries)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.tensor.len()).sum()
    }

    /// Name of the first entry holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries.iter().find(|e| !e.tensor.is_finite()).map(|e| e.name.as_str())
    }

    pub(crate) fn data_mut(&mut self, i: usize) -> &mut [f64] {
        self.entries[i].tensor.data_mut()
    }
}
