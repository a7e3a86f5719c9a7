//! Optimisation, the toy pre-training loop and the gradient-deviation
//! experiment.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{pairwise_sum, Exec};
use crate::geometry::{generate_mask, throw_with, MaskPlan, Strategy};
use crate::model::{is_aggregation_param, loss_and_gradients, patchify, Mode, ModelConfig, ParamGrads, ParameterSet};
use crate::numerics::Tensor;
use crate::rng;

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 2.4e-3,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// Moment accumulators for every parameter plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub hyper: AdamW,
    pub step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl OptimState {
    pub fn new(hyper: AdamW) -> Self {
        OptimState {
            hyper,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.m.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.v.get(name)
    }

    /// One AdamW update at learning rate `lr` with decoupled weight decay
    /// and bias-corrected moments. Every parameter needs a gradient.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = (&'a String, &'a mut Tensor)>,
        grads: &ParamGrads,
        lr: f64,
    ) -> Result<()> {
        let h = self.hyper;
        let params: Vec<_> = params.into_iter().collect();
        for (name, p) in &params {
            match grads.get(*name) {
                None => return Err(Error::Usage(format!("no gradient for parameter {name:?}"))),
                Some(g) if g.shape() != p.shape() => return Err(Error::shape("adamw", p.shape(), g.shape())),
                Some(_) => {}
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - h.beta1.powi(t);
        let bc2 = 1.0 - h.beta2.powi(t);
        for (name, p) in params {
            let g = &grads[name];
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            for (((w, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = h.beta1 * *m + (1.0 - h.beta1) * g;
                *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + h.eps);
                *w -= lr * (update + h.weight_decay * *w);
            }
        }
        Ok(())
    }
}

/// Learning rate at `step` (0-based) of `total`: linear warmup over the
/// first `warmup_fraction` of the run, then half-cosine decay to zero.
pub fn lr_at(base: f64, step: usize, total: usize, warmup_fraction: f64) -> f64 {
    let warmup = (total as f64 * warmup_fraction).round() as usize;
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1) as f64;
    let progress = (step - warmup) as f64 / span;
    base * 0.5 * (1.0 + (PI * progress).cos())
}

/// Element-wise mean of per-image gradients, summed in index order.
pub fn mean_gradients(per_image: &[ParamGrads]) -> Result<ParamGrads> {
    let first = per_image
        .first()
        .ok_or_else(|| Error::Usage("cannot average an empty gradient list".into()))?;
    let n = per_image.len() as f64;
    let mut out = ParamGrads::new();
    for (name, t) in first {
        let mut acc = Tensor::zeros(t.shape().to_vec());
        let mut column = vec![0.0; per_image.len()];
        for (i, a) in acc.data_mut().iter_mut().enumerate() {
            for (c, g) in column.iter_mut().zip(per_image) {
                *c = g[name].data()[i];
            }
            *a = pairwise_sum(&column) / n;
        }
        out.insert(name.clone(), acc);
    }
    Ok(out)
}

/// Settings for [`train_toy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub rho_e: f64,
    pub rho_d: f64,
    pub strategy: Strategy,
    pub optim: AdamW,
    pub warmup_fraction: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: 200,
            batch_size: 8,
            rho_e: 0.75,
            rho_d: 0.5,
            strategy: Strategy::Furthest,
            optim: AdamW::default(),
            warmup_fraction: 0.05,
        }
    }
}

/// Per-step losses and the final parameters of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub losses: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub params: ParameterSet,
}

/// Mask plan for one image under `mode`; FULL never throws.
fn training_plan(model: &ModelConfig, opts: &TrainOptions, mode: Mode, seed: u64) -> Result<MaskPlan> {
    let mask = generate_mask(model.grid, opts.rho_e, rng::derive(seed, &[0]))?;
    let rho_d = if mode == Mode::Full { 0.0 } else { opts.rho_d };
    throw_with(opts.strategy, &mask, rho_d, rng::derive(seed, &[1]))
}

/// Masked pre-training on a fixed pool of `C×H×W` images.
///
/// Parameters start from `derive(seed, [0])`. At step `s`, batch item `b`
/// draws its image index, mask and throw from `derive(seed, [1, s, b])`, so
/// the loss curve is identical for every thread count. Recorded losses are
/// batch means before the update of that step.
pub fn train_toy(model: &ModelConfig, images: &[Tensor], opts: &TrainOptions, seed: u64, exec: Exec) -> Result<TrainOutcome> {
    if opts.steps == 0 || opts.batch_size == 0 {
        return Err(Error::Param("steps and batch_size must be at least 1".into()));
    }
    if images.is_empty() {
        return Err(Error::Param("training needs at least one image".into()));
    }
    let patches = images
        .iter()
        .map(|img| patchify(img, model.patch_size))
        .collect::<Result<Vec<_>>>()?;
    let mut params = ParameterSet::init(model, rng::derive(seed, &[0]))?;
    let mut state = OptimState::new(opts.optim);
    let mut losses = Vec::with_capacity(opts.steps);
    let mut learning_rates = Vec::with_capacity(opts.steps);

    for step in 0..opts.steps {
        let shared = &params;
        let per_image = exec.try_map(opts.batch_size, |b| {
            let item = rng::derive(seed, &[1, step as u64, b as u64]);
            let idx = (rng::derive(item, &[2]) % patches.len() as u64) as usize;
            let plan = training_plan(model, opts, model.mode, item)?;
            loss_and_gradients(model, shared, &patches[idx], &plan, model.mode)
        })?;
        let batch_losses: Vec<f64> = per_image.iter().map(|(l, _)| *l).collect();
        losses.push(pairwise_sum(&batch_losses) / opts.batch_size as f64);
        let grads: Vec<ParamGrads> = per_image.into_iter().map(|(_, g)| g).collect();
        let grads = mean_gradients(&grads)?;
        let lr = lr_at(opts.optim.lr, step, opts.steps, opts.warmup_fraction);
        learning_rates.push(lr);
        state.step(params.iter_mut(), &grads, lr)?;
    }
    Ok(TrainOutcome {
        losses,
        learning_rates,
        params,
    })
}

/// Trailing moving averages with window `w` (shorter at the start).
pub fn moving_average(values: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            pairwise_sum(&values[lo..=i]) / (i + 1 - lo) as f64
        })
        .collect()
}

/// Deviation statistics for one `(mode, rho_d)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationRow {
    pub mode: Mode,
    pub rho_d: f64,
    pub samples: usize,
    pub mean: f64,
    pub std: f64,
    pub mean_relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationReport {
    pub seed: u64,
    pub rho_e: f64,
    pub strategy: Strategy,
    pub batch_size: usize,
    pub reference_norm: f64,
    /// Parameters left out of the comparison because the reference
    /// pipeline never uses them.
    pub excluded: Vec<String>,
    pub rows: Vec<DeviationRow>,
}

impl DeviationReport {
    pub fn row(&self, mode: Mode, rho_d: f64) -> Option<&DeviationRow> {
        self.rows.iter().find(|r| r.mode == mode && r.rho_d == rho_d)
    }
}

/// Settings for [`gradient_deviation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviationOptions {
    pub rho_e: f64,
    pub ratios: Vec<f64>,
    pub modes: Vec<Mode>,
    pub n_throws: usize,
    pub strategy: Strategy,
}

impl Default for DeviationOptions {
    fn default() -> Self {
        DeviationOptions {
            rho_e: 0.75,
            ratios: vec![0.25, 0.5, 0.65],
            modes: vec![Mode::Full, Mode::Partial, Mode::Progressive],
            n_throws: 32,
            strategy: Strategy::Random,
        }
    }
}

fn flatten_shared(grads: &ParamGrads) -> Vec<f64> {
    grads
        .iter()
        .filter(|(name, _)| !is_aggregation_param(name))
        .flat_map(|(_, t)| t.data().iter().copied())
        .collect()
}

fn l2(values: &[f64]) -> f64 {
    let squares: Vec<f64> = values.iter().map(|v| v * v).collect();
    pairwise_sum(&squares).sqrt()
}

/// Batch-mean gradient of `patches` under `plans`, flattened over the
/// shared parameters in name order.
fn batch_gradient(
    model: &ModelConfig,
    params: &ParameterSet,
    patches: &[Tensor],
    plans: &[MaskPlan],
    mode: Mode,
) -> Result<Vec<f64>> {
    let grads = patches
        .iter()
        .zip(plans)
        .map(|(p, plan)| loss_and_gradients(model, params, p, plan, mode).map(|(_, g)| g))
        .collect::<Result<Vec<_>>>()?;
    Ok(flatten_shared(&mean_gradients(&grads)?))
}

/// How far partial-reconstruction gradients stray from full
/// reconstruction.
///
/// Each image gets one fixed mask from `derive(seed, [0, b])`. The
/// reference `g0` is the batch gradient with every masked token decoded.
/// For each ratio index `r` and sample `s`, image `b` is thrown with seed
/// `derive(seed, [1, r, s, b])`; the same throws are shared by every mode.
/// Each sample contributes `‖g − g0‖₂` over the parameters both pipelines
/// share.
pub fn gradient_deviation(
    model: &ModelConfig,
    params: &ParameterSet,
    images: &[Tensor],
    opts: &DeviationOptions,
    seed: u64,
    exec: Exec,
) -> Result<DeviationReport> {
    if opts.n_throws < 1 {
        return Err(Error::Param("n_throws must be at least 1".into()));
    }
    if images.is_empty() {
        return Err(Error::Param("gradient deviation needs a non-empty batch".into()));
    }
    let patches = images
        .iter()
        .map(|img| patchify(img, model.patch_size))
        .collect::<Result<Vec<_>>>()?;
    let masks = (0..images.len())
        .map(|b| generate_mask(model.grid, opts.rho_e, rng::derive(seed, &[0, b as u64])))
        .collect::<Result<Vec<_>>>()?;
    let g0 = batch_gradient(model, params, &patches, &masks, Mode::Full)?;
    let g0_norm = l2(&g0);

    let cells: Vec<(Mode, usize)> = opts
        .modes
        .iter()
        .flat_map(|&m| (0..opts.ratios.len()).map(move |r| (m, r)))
        .collect();
    let n = opts.n_throws;
    let deviations = exec.try_map(cells.len() * n, |k| -> Result<f64> {
        let (mode, r) = cells[k / n];
        let s = (k % n) as u64;
        let plans = masks
            .iter()
            .enumerate()
            .map(|(b, m)| throw_with(opts.strategy, m, opts.ratios[r], rng::derive(seed, &[1, r as u64, s, b as u64])))
            .collect::<Result<Vec<_>>>()?;
        let g = batch_gradient(model, params, &patches, &plans, mode)?;
        let diff: Vec<f64> = g.iter().zip(&g0).map(|(a, b)| a - b).collect();
        Ok(l2(&diff))
    })?;

    let rows = cells
        .iter()
        .zip(deviations.chunks(n))
        .map(|(&(mode, r), devs)| {
            let mean = pairwise_sum(devs) / n as f64;
            let sq: Vec<f64> = devs.iter().map(|d| (d - mean) * (d - mean)).collect();
            DeviationRow {
                mode,
                rho_d: opts.ratios[r],
                samples: n,
                mean,
                std: (pairwise_sum(&sq) / n as f64).sqrt(),
                mean_relative: if g0_norm > 0.0 { mean / g0_norm } else { 0.0 },
            }
        })
        .collect();
    Ok(DeviationReport {
        seed,
        rho_e: opts.rho_e,
        strategy: opts.strategy,
        batch_size: images.len(),
        reference_norm: g0_norm,
        excluded: params.names().filter(|n| is_aggregation_param(n)).cloned().collect(),
        rows,
    })
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mean) * (b - mean)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mean).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - mean).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::throw_random;
    use crate::model::Session;
    use rand::Rng as _;

    fn scalar_problem(w: f64) -> (BTreeMap<String, Tensor>, String) {
        let name = "w".to_string();
        (BTreeMap::from([(name.clone(), Tensor::scalar(w))]), name)
    }

    #[test]
    fn single_step_on_square_loss() {
        let (mut p, name) = scalar_problem(1.0);
        let hyper = AdamW {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamW::default()
        };
        let mut st = OptimState::new(hyper);
        let g = BTreeMap::from([(name.clone(), Tensor::scalar(2.0))]);
        st.step(p.iter_mut(), &g, 0.1).unwrap();
        // m̂ = 2, v̂ = 4, step = 2 / (2 + 1e-8)
        let expect = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((p[&name].item() - expect).abs() < 1e-15);
        assert!((p[&name].item() - 0.9).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_behaviour() {
        let (mut p, name) = scalar_problem(3.0);
        let g = BTreeMap::from([(name.clone(), Tensor::scalar(0.0))]);
        let mut st = OptimState::new(AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        });
        st.step(p.iter_mut(), &g, 0.01).unwrap();
        assert_eq!(p[&name].item(), 3.0);

        let mut st = OptimState::new(AdamW {
            weight_decay: 0.05,
            ..AdamW::default()
        });
        st.step(p.iter_mut(), &g, 0.01).unwrap();
        assert!((p[&name].item() - 3.0 * (1.0 - 0.01 * 0.05)).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_usage_error() {
        let (mut p, _) = scalar_problem(1.0);
        let mut st = OptimState::new(AdamW::default());
        assert!(matches!(st.step(p.iter_mut(), &BTreeMap::new(), 0.1), Err(Error::Usage(_))));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn matches_scalar_oracle_for_100_random_steps() {
        let hyper = AdamW {
            lr: 0.03,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
        };
        let (mut p, name) = scalar_problem(0.5);
        let mut st = OptimState::new(hyper);
        let (mut w, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        let mut r = rng::rng(77);
        for t in 1..=100 {
            let g: f64 = r.random_range(-2.0..2.0);
            let lr = hyper.lr * r.random_range(0.1..1.0);
            st.step(p.iter_mut(), &BTreeMap::from([(name.clone(), Tensor::scalar(g))]), lr)
                .unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.95 * v + 0.05 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.95f64.powi(t));
            w -= lr * (mh / (vh.sqrt() + 1e-8) + 0.1 * w);
            assert!((p[&name].item() - w).abs() <= 1e-12);
        }
        assert_eq!(st.step, 100);
    }

    #[test]
    fn schedule_shape() {
        let lrs: Vec<f64> = (0..100).map(|s| lr_at(1.0, s, 100, 0.05)).collect();
        assert!((lrs[0] - 0.2).abs() < 1e-15);
        assert_eq!(lrs[4], 1.0);
        assert_eq!(lrs[5], 1.0);
        assert!(lrs[5..].windows(2).all(|w| w[1] <= w[0]));
        assert!(lrs[99] < 1e-3);
        assert_eq!(lr_at(1.0, 0, 10, 0.0), 1.0);
    }

    fn toy_images(n: usize, seed: u64) -> Vec<Tensor> {
        let mut r = rng::rng(seed);
        (0..n)
            .map(|_| Tensor::from_fn([3, 32, 32], |_| r.random_range(0.0..1.0)))
            .collect()
    }

    #[test]
    fn masked_loss_cases() {
        let c = ModelConfig::toy();
        let params = ParameterSet::init(&c, 0).unwrap();
        let patches = patchify(&toy_images(1, 1)[0], 4).unwrap();
        let plan = throw_random(&generate_mask(c.grid, 0.75, 2).unwrap(), 0.5, 3).unwrap();
        let mut s = Session::new(&c, &params);
        let out = s.forward_patches(&patches, &plan, Mode::Progressive).unwrap();
        let preds = s.tape.value(out.predictions).clone();

        let mut exact = Tensor::zeros([64, 48]);
        let mut shifted = Tensor::zeros([64, 48]);
        for (row, &t) in out.loss_positions.iter().enumerate() {
            for (j, v) in preds.row(row).iter().enumerate() {
                exact.data_mut()[t * 48 + j] = *v;
                shifted.data_mut()[t * 48 + j] = *v + 2.0;
            }
        }
        let l = s.masked_loss(&out, &exact).unwrap();
        assert_eq!(s.tape.value(l).item(), 0.0);
        let l = s.masked_loss(&out, &shifted).unwrap();
        assert!((s.tape.value(l).item() - 4.0).abs() < 1e-12);

        let mut empty = out.clone();
        empty.loss_positions.clear();
        assert!(matches!(s.masked_loss(&empty, &exact), Err(Error::Usage(_))));
    }

    #[test]
    fn progressive_loss_decomposes_over_position_subsets() {
        let c = ModelConfig::toy();
        for seed in 0..5 {
            let params = ParameterSet::init(&c, seed).unwrap();
            let patches = patchify(&toy_images(1, seed)[0], 4).unwrap();
            let plan = throw_random(&generate_mask(c.grid, 0.75, seed).unwrap(), 0.5, seed).unwrap();
            let mut s = Session::new(&c, &params);
            let out = s.forward_patches(&patches, &plan, Mode::Progressive).unwrap();
            let targets = s.targets(&patches).unwrap();
            let loss = s.masked_loss(&out, &targets).unwrap();
            let loss = s.tape.value(loss).item();
            let preds = s.tape.value(out.predictions);
            let row_err = |row: usize, t: usize| -> f64 {
                preds.row(row).iter().zip(targets.row(t)).map(|(p, y)| (p - y).powi(2)).sum()
            };
            let (mut partial, mut thrown) = (0.0, 0.0);
            for (row, &t) in out.loss_positions.iter().enumerate() {
                if row < out.n_decoded {
                    partial += row_err(row, t);
                } else {
                    thrown += row_err(row, t);
                }
            }
            let total = loss * (out.loss_positions.len() * 48) as f64;
            assert!((total - (partial + thrown)).abs() <= 1e-12 * total.max(1.0));

            let mut s2 = Session::new(&c, &params);
            let out2 = s2.forward_patches(&patches, &plan, Mode::Partial).unwrap();
            let l2 = s2.masked_loss(&out2, &targets).unwrap();
            let l2 = s2.tape.value(l2).item() * (out2.loss_positions.len() * 48) as f64;
            assert!((l2 - partial).abs() <= 1e-12 * l2.max(1.0));
        }
    }

    #[test]
    fn mean_gradients_averages() {
        let a = ParamGrads::from([("x".to_string(), Tensor::new([2], vec![1.0, 2.0]).unwrap())]);
        let b = ParamGrads::from([("x".to_string(), Tensor::new([2], vec![3.0, -2.0]).unwrap())]);
        assert_eq!(mean_gradients(&[a, b]).unwrap()["x"].data(), &[2.0, 0.0]);
        assert!(mean_gradients(&[]).is_err());
    }

    #[test]
    fn training_is_deterministic_across_exec() {
        let c = ModelConfig::toy();
        let images = toy_images(4, 5);
        let opts = TrainOptions {
            steps: 3,
            batch_size: 3,
            ..TrainOptions::default()
        };
        let a = train_toy(&c, &images, &opts, 9, Exec::Sequential).unwrap();
        let b = train_toy(&c, &images, &opts, 9, Exec::Parallel).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.params, b.params);
        let d = train_toy(&c, &images, &opts, 10, Exec::Parallel).unwrap();
        assert_ne!(a.losses, d.losses);
        assert!(train_toy(&c, &images, &TrainOptions { steps: 0, ..opts }, 9, Exec::Sequential).is_err());
    }

    #[test]
    fn constant_images_drive_loss_to_zero() {
        let c = ModelConfig::toy();
        let images = vec![Tensor::full([3, 32, 32], 0.4)];
        let opts = TrainOptions {
            steps: 60,
            batch_size: 2,
            ..TrainOptions::default()
        };
        let out = train_toy(&c, &images, &opts, 1, Exec::Parallel).unwrap();
        assert!(out.losses.last().unwrap() < &(0.05 * out.losses[0]));
    }

    #[test]
    fn moving_average_window() {
        assert_eq!(moving_average(&[2.0, 4.0, 6.0, 8.0], 2), vec![2.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn deviation_identities() {
        let c = ModelConfig::toy();
        let params = ParameterSet::init(&c, 3).unwrap();
        let images = toy_images(2, 4);
        let opts = DeviationOptions {
            ratios: vec![0.0, 0.5],
            n_throws: 3,
            ..DeviationOptions::default()
        };
        let rep = gradient_deviation(&c, &params, &images, &opts, 11, Exec::Parallel).unwrap();
        assert_eq!(rep.rows.len(), 6);
        for row in &rep.rows {
            assert!(row.mean >= 0.0 && row.std >= 0.0);
            if row.mode == Mode::Full || row.rho_d == 0.0 {
                assert_eq!(row.mean, 0.0, "{row:?}");
                assert_eq!(row.std, 0.0);
            } else {
                assert!(row.mean > 0.0);
            }
        }
        assert_eq!(rep.excluded, vec!["agg.bias".to_string(), "agg.weight".to_string()]);
        let seq = gradient_deviation(&c, &params, &images, &opts, 11, Exec::Sequential).unwrap();
        assert_eq!(rep, seq);
        let bad = DeviationOptions { n_throws: 0, ..opts };
        assert!(matches!(gradient_deviation(&c, &params, &images, &bad, 11, Exec::Sequential), Err(Error::Param(_))));
    }

    #[test]
    fn spearman_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0], &[1.0]), None);
    }
}
