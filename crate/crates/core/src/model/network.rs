use std::collections::BTreeMap;

use super::{Aggregation, Mode, ModelConfig, ParamGrads, ParameterSet};
use crate::error::{Error, Result};
use crate::geometry::MaskPlan;
use crate::numerics::{Gradients, Tape, Tensor, Var, LN_EPS};

/// Splits a `C×H×W` image into `N × (p·p·C)` patches in row-major patch
/// order; each patch is flattened as (row in patch, column in patch, channel).
pub fn patchify(image: &Tensor, patch: usize) -> Result<Tensor> {
    let (c, h, w) = match image.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::shape("patchify", s, &[0, 0, 0])),
    };
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Param(format!("image {h}x{w} is not divisible into {patch}x{patch} patches")));
    }
    let (gh, gw) = (h / patch, w / patch);
    let mut out = Vec::with_capacity(c * h * w);
    for gy in 0..gh {
        for gx in 0..gw {
            for py in 0..patch {
                for px in 0..patch {
                    for ch in 0..c {
                        out.push(image.data()[(ch * h + gy * patch + py) * w + gx * patch + px]);
                    }
                }
            }
        }
    }
    Tensor::new([gh * gw, patch * patch * c], out)
}

/// Inverse of [`patchify`] for a `rows × cols` patch grid.
pub fn unpatchify(patches: &Tensor, rows: usize, cols: usize, patch: usize, channels: usize) -> Result<Tensor> {
    if patches.shape() != [rows * cols, patch * patch * channels] {
        return Err(Error::shape("unpatchify", patches.shape(), &[rows * cols, patch * patch * channels]));
    }
    let (h, w) = (rows * patch, cols * patch);
    let mut img = vec![0.0; channels * h * w];
    let mut it = patches.data().iter();
    for gy in 0..rows {
        for gx in 0..cols {
            for py in 0..patch {
                for px in 0..patch {
                    for ch in 0..channels {
                        img[(ch * h + gy * patch + py) * w + gx * patch + px] = *it.next().expect("sized");
                    }
                }
            }
        }
    }
    Tensor::new([channels, h, w], img)
}

/// Standardises every patch to zero mean and unit population variance.
pub fn normalize_targets(patches: &Tensor, eps: f64) -> Result<Tensor> {
    if eps <= 0.0 {
        return Err(Error::Param(format!("eps must be positive, got {eps}")));
    }
    let c = patches.last_dim().max(1);
    let mut out = Vec::with_capacity(patches.numel());
    for row in patches.data().chunks(c) {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let s = (var + eps).sqrt();
        out.extend(row.iter().map(|v| (v - mean) / s));
    }
    Tensor::new(patches.shape().to_vec(), out)
}

/// Result of one forward pass.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// One row of pixel predictions per entry of `loss_positions`.
    pub predictions: Var,
    /// Supervised token indices: retained tokens ascending, then thrown
    /// tokens ascending when they are reconstructed.
    pub loss_positions: Vec<usize>,
    /// Decoder output over `decoder_tokens`.
    pub decoder_features: Var,
    /// Token indices of the decoder sequence, ascending.
    pub decoder_tokens: Vec<usize>,
    /// How many leading rows of `predictions` come from the decoder; the
    /// rest come from the aggregation module.
    pub n_decoded: usize,
}

/// One forward/backward evaluation of the network.
///
/// A session owns a fresh [`Tape`] with every parameter recorded as a
/// trainable leaf; the positional tables are recorded as constants.
pub struct Session<'a> {
    pub tape: Tape,
    config: &'a ModelConfig,
    vars: BTreeMap<String, Var>,
    enc_pos: Var,
    dec_pos: Var,
}

impl<'a> Session<'a> {
    pub fn new(config: &'a ModelConfig, params: &ParameterSet) -> Self {
        let mut tape = Tape::new();
        let vars = params
            .iter()
            .map(|(name, t)| (name.clone(), tape.leaf(t.clone())))
            .collect();
        let enc_pos = tape.constant(params.encoder_positions().clone());
        let dec_pos = tape.constant(params.decoder_positions().clone());
        Session {
            tape,
            config,
            vars,
            enc_pos,
            dec_pos,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        self.config
    }

    /// Leaf for parameter `name`.
    pub fn param(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Param(format!("no parameter named {name:?}")))
    }

    fn linear(&mut self, x: Var, name: &str) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"))?;
        let b = self.param(&format!("{name}.bias"))?;
        let y = self.tape.matmul(x, w)?;
        self.tape.add_row(y, b)
    }

    fn norm(&mut self, x: Var, name: &str) -> Result<Var> {
        let g = self.param(&format!("{name}.weight"))?;
        let b = self.param(&format!("{name}.bias"))?;
        self.tape.layer_norm(x, g, b, LN_EPS)
    }

    fn attention(&mut self, x: Var, name: &str, heads: usize) -> Result<Var> {
        let dim = self.tape.value(x).last_dim();
        let hd = dim / heads;
        let qkv = self.linear(x, &format!("{name}.qkv"))?;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let q = self.tape.slice_cols(qkv, h * hd, (h + 1) * hd)?;
            let k = self.tape.slice_cols(qkv, dim + h * hd, dim + (h + 1) * hd)?;
            let v = self.tape.slice_cols(qkv, 2 * dim + h * hd, 2 * dim + (h + 1) * hd)?;
            let kt = self.tape.transpose(k)?;
            let scores = self.tape.matmul(q, kt)?;
            let scores = self.tape.scale(scores, scale);
            let attn = self.tape.softmax(scores);
            outs.push(self.tape.matmul(attn, v)?);
        }
        let joined = self.tape.concat_cols(&outs)?;
        self.linear(joined, &format!("{name}.proj"))
    }

    /// Pre-norm transformer block.
    fn block(&mut self, x: Var, name: &str, heads: usize) -> Result<Var> {
        let h = self.norm(x, &format!("{name}.norm1"))?;
        let a = self.attention(h, &format!("{name}.attn"), heads)?;
        let x = self.tape.add(x, a)?;
        let h = self.norm(x, &format!("{name}.norm2"))?;
        let h = self.linear(h, &format!("{name}.mlp.fc1"))?;
        let h = self.tape.gelu(h);
        let h = self.linear(h, &format!("{name}.mlp.fc2"))?;
        self.tape.add(x, h)
    }

    /// Encodes the patches listed in `tokens`, in that order.
    pub fn encode_tokens(&mut self, patches: Var, tokens: &[usize]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::Param("encoder needs at least one unmasked token".into()));
        }
        let x = self.tape.gather_rows(patches, tokens)?;
        let x = self.linear(x, "patch_embed")?;
        let pos = self.tape.gather_rows(self.enc_pos, tokens)?;
        let mut x = self.tape.add(x, pos)?;
        for i in 0..self.config.enc_depth {
            x = self.block(x, &format!("enc.{i}"), self.config.enc_heads)?;
        }
        self.norm(x, "enc_norm")
    }

    /// Encodes the unmasked tokens `x_u`; output rows follow ascending
    /// token order.
    pub fn encode(&mut self, patches: Var, plan: &MaskPlan) -> Result<Var> {
        self.check_plan(plan)?;
        self.encode_tokens(patches, &plan.unmasked())
    }

    /// Runs the decoder over `x_u ∪ x_d` in ascending token order. Thrown
    /// tokens are absent from the sequence.
    pub fn decode(&mut self, encoded: Var, plan: &MaskPlan) -> Result<Var> {
        self.check_plan(plan)?;
        let seq = plan.kept();
        let pos_of = |tokens: Vec<usize>| -> Vec<usize> {
            tokens
                .iter()
                .map(|t| seq.binary_search(t).expect("kept token"))
                .collect()
        };
        let vis = pos_of(plan.unmasked());
        let ret = pos_of(plan.retained());
        let len = seq.len();

        let x = self.linear(encoded, "dec_embed")?;
        let mut x = self.tape.scatter_rows(x, &vis, len)?;
        if !ret.is_empty() {
            let mask = self.param("mask_token")?;
            let m = self.tape.repeat_row(mask, ret.len())?;
            let m = self.tape.scatter_rows(m, &ret, len)?;
            x = self.tape.add(x, m)?;
        }
        let pos = self.tape.gather_rows(self.dec_pos, &seq)?;
        let mut x = self.tape.add(x, pos)?;
        for i in 0..self.config.dec_depth {
            x = self.block(x, &format!("dec.{i}"), self.config.dec_heads)?;
        }
        Ok(x)
    }

    /// `N×D` sequence to `D×rows×cols` spatial layout.
    fn to_spatial(&mut self, seq: Var) -> Result<Var> {
        let d = self.tape.value(seq).last_dim();
        let t = self.tape.transpose(seq)?;
        self.tape.reshape(t, &[d, self.config.grid.rows, self.config.grid.cols])
    }

    fn to_sequence(&mut self, spatial: Var) -> Result<Var> {
        let d = self.tape.shape(spatial)[0];
        let flat = self.tape.reshape(spatial, &[d, self.config.grid.n_tokens()])?;
        self.tape.transpose(flat)
    }

    /// Reconstructs features for the thrown tokens `x_t`.
    ///
    /// Decoder features are scattered onto the token grid with zeros at
    /// thrown positions, passed through the aggregation module, and read
    /// back at the thrown positions (ascending). Returns `|x_t| × D`.
    pub fn spatial_aggregate(&mut self, decoded: Var, plan: &MaskPlan) -> Result<Var> {
        self.check_plan(plan)?;
        let thrown = plan.thrown();
        let d = self.tape.value(decoded).last_dim();
        if thrown.is_empty() {
            return Ok(self.tape.constant(Tensor::zeros([0, d])));
        }
        let n = self.config.grid.n_tokens();
        let grid = self.tape.scatter_rows(decoded, &plan.kept(), n)?;
        let k = self.config.kernel_size;
        let out = match self.config.aggregation {
            Aggregation::DepthwiseConv => {
                let s = self.to_spatial(grid)?;
                let (w, b) = (self.param("agg.weight")?, self.param("agg.bias")?);
                let y = self.tape.depthwise_conv2d(s, w, b)?;
                self.to_sequence(y)?
            }
            Aggregation::AveragePool => {
                let s = self.to_spatial(grid)?;
                let w = self.tape.constant(Tensor::full([d, k, k], 1.0 / (k * k) as f64));
                let b = self.tape.constant(Tensor::zeros([d]));
                let y = self.tape.depthwise_conv2d(s, w, b)?;
                self.to_sequence(y)?
            }
            Aggregation::TransformerBlock => {
                let x = self.tape.add(grid, self.dec_pos)?;
                self.block(x, "agg.block", self.config.dec_heads)?
            }
            Aggregation::ConvnextBlock => {
                let s = self.to_spatial(grid)?;
                let (w, b) = (self.param("agg.dw.weight")?, self.param("agg.dw.bias")?);
                let y = self.tape.depthwise_conv2d(s, w, b)?;
                let y = self.to_sequence(y)?;
                let y = self.norm(y, "agg.norm")?;
                let y = self.linear(y, "agg.fc1")?;
                let y = self.tape.gelu(y);
                let y = self.linear(y, "agg.fc2")?;
                self.tape.add(grid, y)?
            }
        };
        self.tape.gather_rows(out, &thrown)
    }

    /// Shared norm + linear head, `M×D → M×C_pix`.
    pub fn predict_pixels(&mut self, features: Var) -> Result<Var> {
        let h = self.norm(features, "head.norm")?;
        self.linear(h, "head.proj")
    }

    fn check_plan(&self, plan: &MaskPlan) -> Result<()> {
        if plan.grid() != self.config.grid {
            return Err(Error::Param(format!(
                "mask plan grid {:?} does not match model grid {:?}",
                plan.grid(),
                self.config.grid
            )));
        }
        Ok(())
    }

    /// Full pipeline from a `C×H×W` image.
    pub fn forward(&mut self, image: &Tensor, plan: &MaskPlan, mode: Mode) -> Result<PipelineOutput> {
        let patches = patchify(image, self.config.patch_size)?;
        self.forward_patches(&patches, plan, mode)
    }

    /// Full pipeline from precomputed `N×C_pix` patches.
    ///
    /// `Full` decodes every masked token (thrown tokens are treated as
    /// retained), `Partial` supervises only `x_d`, and `Progressive`
    /// supervises `x_d` through the decoder and `x_t` through the
    /// aggregation module.
    pub fn forward_patches(&mut self, patches: &Tensor, plan: &MaskPlan, mode: Mode) -> Result<PipelineOutput> {
        self.check_plan(plan)?;
        if patches.shape() != [self.config.n_tokens(), self.config.patch_dim()] {
            return Err(Error::shape(
                "forward",
                patches.shape(),
                &[self.config.n_tokens(), self.config.patch_dim()],
            ));
        }
        let effective = match mode {
            Mode::Full => plan.without_throwing(),
            Mode::Partial | Mode::Progressive => plan.clone(),
        };
        let retained = effective.retained();
        if retained.is_empty() && (mode == Mode::Partial || effective.thrown().is_empty()) {
            return Err(Error::Param(format!(
                "{} mode has no supervised tokens for this plan",
                mode.name()
            )));
        }

        let pv = self.tape.constant(patches.clone());
        let encoded = self.encode(pv, &effective)?;
        let decoded = self.decode(encoded, &effective)?;
        let seq = effective.kept();
        let rows: Vec<usize> = retained
            .iter()
            .map(|t| seq.binary_search(t).expect("retained token in sequence"))
            .collect();

        let mut feats = Vec::with_capacity(2);
        if !rows.is_empty() {
            feats.push(self.tape.gather_rows(decoded, &rows)?);
        }
        let mut loss_positions = retained.clone();
        let thrown = effective.thrown();
        if mode == Mode::Progressive && !thrown.is_empty() {
            feats.push(self.spatial_aggregate(decoded, &effective)?);
            loss_positions.extend(thrown);
        }
        let features = if feats.len() == 1 { feats[0] } else { self.tape.concat_rows(&feats)? };
        let predictions = self.predict_pixels(features)?;
        Ok(PipelineOutput {
            predictions,
            loss_positions,
            decoder_features: decoded,
            decoder_tokens: seq,
            n_decoded: retained.len(),
        })
    }

    /// Reconstruction targets for `patches`, per-patch normalised when the
    /// configuration asks for it.
    pub fn targets(&self, patches: &Tensor) -> Result<Tensor> {
        if self.config.norm_pix {
            normalize_targets(patches, LN_EPS)
        } else {
            Ok(patches.clone())
        }
    }

    /// Mean squared error over the supervised positions of `output`.
    pub fn masked_loss(&mut self, output: &PipelineOutput, targets: &Tensor) -> Result<Var> {
        if output.loss_positions.is_empty() {
            return Err(Error::Usage("masked loss over an empty position set".into()));
        }
        let t = self.tape.constant(targets.clone());
        let t = self.tape.gather_rows(t, &output.loss_positions)?;
        self.tape.mse(output.predictions, t)
    }

    /// Backward pass from `loss`, returned per parameter name.
    pub fn gradients(&self, loss: Var) -> Result<ParamGrads> {
        let grads: Gradients = self.tape.backward(loss)?;
        Ok(self
            .vars
            .iter()
            .map(|(name, &v)| (name.clone(), grads.wrt(v)))
            .collect())
    }
}

/// Loss and parameter gradients for one image.
pub fn loss_and_gradients(
    config: &ModelConfig,
    params: &ParameterSet,
    patches: &Tensor,
    plan: &MaskPlan,
    mode: Mode,
) -> Result<(f64, ParamGrads)> {
    let mut s = Session::new(config, params);
    let out = s.forward_patches(patches, plan, mode)?;
    let targets = s.targets(patches)?;
    let loss = s.masked_loss(&out, &targets)?;
    let grads = s.gradients(loss)?;
    Ok((s.tape.value(loss).item(), grads))
}
