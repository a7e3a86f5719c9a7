use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal, Uniform};

use super::{Aggregation, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

const INIT_STD: f64 = 0.02;

/// Named trainable arrays plus the fixed positional tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    params: BTreeMap<String, Tensor>,
    enc_pos: Tensor,
    dec_pos: Tensor,
}

/// Gradients keyed by parameter name.
pub type ParamGrads = BTreeMap<String, Tensor>;

/// 1-D sin-cos table: first half `sin(pos·ω_k)`, second half `cos(pos·ω_k)`,
/// with `ω_k = 10000^(-k / (dim/2))`.
fn sincos_1d(dim: usize, pos: f64) -> Vec<f64> {
    let half = dim / 2;
    let omega = |k: usize| 1.0 / 10000f64.powf(k as f64 / half as f64);
    (0..half)
        .map(|k| (pos * omega(k)).sin())
        .chain((0..half).map(|k| (pos * omega(k)).cos()))
        .collect()
}

/// Fixed 2-D sin-cos positional table, `N × dim`: the first half of each
/// row encodes the token's row, the second half its column.
pub fn sincos_2d(rows: usize, cols: usize, dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * cols * dim);
    for r in 0..rows {
        for c in 0..cols {
            data.extend(sincos_1d(dim / 2, r as f64));
            data.extend(sincos_1d(dim / 2, c as f64));
        }
    }
    Tensor::new([rows * cols, dim], data).expect("positional table shape")
}

struct Init {
    rng: rng::Rng,
    normal: Normal<f64>,
}

impl Init {
    /// Normal(0, 0.02²) truncated to two standard deviations.
    fn trunc_normal(&mut self, shape: &[usize]) -> Tensor {
        let (rng, normal) = (&mut self.rng, self.normal);
        Tensor::from_fn(shape.to_vec(), |_| loop {
            let v = normal.sample(rng);
            if v.abs() <= 2.0 * INIT_STD {
                break v;
            }
        })
    }

    fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let rng = &mut self.rng;
        Tensor::from_fn(shape.to_vec(), |_| dist.sample(rng))
    }
}

type Named = BTreeMap<String, Tensor>;

fn linear(p: &mut Named, init: &mut Init, name: &str, fan_in: usize, fan_out: usize) {
    p.insert(format!("{name}.weight"), init.trunc_normal(&[fan_in, fan_out]));
    p.insert(format!("{name}.bias"), Tensor::zeros([fan_out]));
}

fn norm(p: &mut Named, name: &str, dim: usize) {
    p.insert(format!("{name}.weight"), Tensor::ones([dim]));
    p.insert(format!("{name}.bias"), Tensor::zeros([dim]));
}

fn block(p: &mut Named, init: &mut Init, name: &str, dim: usize, hidden: usize) {
    norm(p, &format!("{name}.norm1"), dim);
    linear(p, init, &format!("{name}.attn.qkv"), dim, 3 * dim);
    linear(p, init, &format!("{name}.attn.proj"), dim, dim);
    norm(p, &format!("{name}.norm2"), dim);
    linear(p, init, &format!("{name}.mlp.fc1"), dim, hidden);
    linear(p, init, &format!("{name}.mlp.fc2"), hidden, dim);
}

impl ParameterSet {
    /// Seeded initialisation: truncated normals for projections and the
    /// [MASK] token, zero biases, unit norm gains. Depthwise kernels use
    /// the usual fan-in uniform bound `1/k`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            rng: rng::rng(seed),
            normal: Normal::new(0.0, INIT_STD).expect("valid std"),
        };
        let mut p = BTreeMap::new();
        let (e, d, c_pix) = (config.enc_dim, config.dec_dim, config.patch_dim());

        linear(&mut p, &mut init, "patch_embed", c_pix, e);
        for i in 0..config.enc_depth {
            block(&mut p, &mut init, &format!("enc.{i}"), e, config.enc_hidden());
        }
        norm(&mut p, "enc_norm", e);

        linear(&mut p, &mut init, "dec_embed", e, d);
        p.insert("mask_token".into(), init.trunc_normal(&[d]));
        for i in 0..config.dec_depth {
            block(&mut p, &mut init, &format!("dec.{i}"), d, config.dec_hidden());
        }

        let k = config.kernel_size;
        match config.aggregation {
            Aggregation::DepthwiseConv => {
                p.insert("agg.weight".into(), init.uniform(&[d, k, k], 1.0 / k as f64));
                p.insert("agg.bias".into(), Tensor::zeros([d]));
            }
            Aggregation::TransformerBlock => block(&mut p, &mut init, "agg.block", d, config.dec_hidden()),
            Aggregation::ConvnextBlock => {
                p.insert("agg.dw.weight".into(), init.uniform(&[d, k, k], 1.0 / k as f64));
                p.insert("agg.dw.bias".into(), Tensor::zeros([d]));
                norm(&mut p, "agg.norm", d);
                linear(&mut p, &mut init, "agg.fc1", d, config.dec_hidden());
                linear(&mut p, &mut init, "agg.fc2", config.dec_hidden(), d);
            }
            Aggregation::AveragePool => {}
        }

        norm(&mut p, "head.norm", d);
        linear(&mut p, &mut init, "head.proj", d, c_pix);

        Ok(ParameterSet {
            params: p,
            enc_pos: sincos_2d(config.grid.rows, config.grid.cols, e),
            dec_pos: sincos_2d(config.grid.rows, config.grid.cols, d),
        })
    }

    /// Rebuilds a set from named tensors, checking names and shapes against
    /// a fresh initialisation of `config`.
    pub fn from_named(config: &ModelConfig, named: BTreeMap<String, Tensor>) -> Result<Self> {
        let mut reference = Self::init(config, 0)?;
        for (name, t) in &reference.params {
            match named.get(name) {
                None => return Err(Error::Format(format!("missing parameter {name:?}"))),
                Some(v) if v.shape() != t.shape() => {
                    return Err(Error::Format(format!(
                        "parameter {name:?} has shape {:?}, expected {:?}",
                        v.shape(),
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = named.keys().find(|k| !reference.params.contains_key(*k)) {
            return Err(Error::Format(format!("unexpected parameter {extra:?}")));
        }
        reference.params = named;
        Ok(reference)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    /// Trainable parameters in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn encoder_positions(&self) -> &Tensor {
        &self.enc_pos
    }

    pub fn decoder_positions(&self) -> &Tensor {
        &self.dec_pos
    }
}

/// True for parameters that only the aggregation module uses.
pub fn is_aggregation_param(name: &str) -> bool {
    name.starts_with("agg.")
}
