use crate::error::Result;
use crate::geometry::MaskPlan;
use crate::model::{patchify, unpatchify, Mode, ModelConfig, ParameterSet, Session};
use crate::numerics::{Tensor, LN_EPS};

/// Images produced by [`reconstruct`].
#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Visible patches as given, supervised patches as predicted.
    pub composite: Tensor,
    /// Visible patches as given, every masked patch flat grey.
    pub masked: Tensor,
    pub loss: f64,
}

/// Runs the network on one image and pastes its predictions back.
///
/// With per-patch normalised targets the predictions are mapped back to
/// pixel space using each original patch's own mean and spread. Masked
/// patches without a prediction (thrown tokens in partial mode) stay grey.
pub fn reconstruct(config: &ModelConfig, params: &ParameterSet, image: &Tensor, plan: &MaskPlan, mode: Mode) -> Result<Reconstruction> {
    let patches = patchify(image, config.patch_size)?;
    let mut s = Session::new(config, params);
    let out = s.forward_patches(&patches, plan, mode)?;
    let targets = s.targets(&patches)?;
    let loss = s.masked_loss(&out, &targets)?;
    let loss = s.tape.value(loss).item();
    let preds = s.tape.value(out.predictions);

    let c = config.patch_dim();
    let mut masked = patches.clone();
    for t in plan.masked() {
        masked.data_mut()[t * c..(t + 1) * c].fill(0.5);
    }
    let mut composite = masked.clone();
    for (row, &t) in out.loss_positions.iter().enumerate() {
        let orig = patches.row(t);
        let (mean, std) = if config.norm_pix {
            let mean = orig.iter().sum::<f64>() / c as f64;
            let var = orig.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            (mean, (var + LN_EPS).sqrt())
        } else {
            (0.0, 1.0)
        };
        for (dst, p) in composite.data_mut()[t * c..(t + 1) * c].iter_mut().zip(preds.row(row)) {
            *dst = p * std + mean;
        }
    }
    let (r, cols, p, ch) = (config.grid.rows, config.grid.cols, config.patch_size, config.in_channels);
    Ok(Reconstruction {
        composite: unpatchify(&composite, r, cols, p, ch)?,
        masked: unpatchify(&masked, r, cols, p, ch)?,
        loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_mask, throw_random};

    #[test]
    fn visible_patches_pass_through() {
        let c = ModelConfig::toy();
        let params = ParameterSet::init(&c, 0).unwrap();
        let img = crate::harness::synth::synth_image(crate::harness::synth::SynthKind::GaussianBlobs, 32, 32, 3, 1);
        let plan = throw_random(&generate_mask(c.grid, 0.75, 2).unwrap(), 0.5, 3).unwrap();
        for mode in [Mode::Partial, Mode::Progressive] {
            let r = reconstruct(&c, &params, &img, &plan, mode).unwrap();
            let (a, b) = (patchify(&r.composite, 4).unwrap(), patchify(&img, 4).unwrap());
            for t in plan.unmasked() {
                assert_eq!(a.row(t), b.row(t));
            }
            let m = patchify(&r.masked, 4).unwrap();
            assert!(plan.masked().iter().all(|&t| m.row(t).iter().all(|v| *v == 0.5)));
            assert!(r.loss.is_finite());
        }
    }
}
