//! Probabilistic inpainting models `p(x_i | x_M)`.
//!
//! Every model predicts a univariate Gaussian per target pixel. Two analytic
//! models are provided: [`LocalStatsModel`], a kernel-smoothing predictor that
//! can be fitted self-supervised from unlabeled images, and
//! [`OracleBlobModel`], the exact conditional law of the synthetic generator.

mod file;
mod local_stats;
mod oracle;

use std::f64::consts::PI;
use std::fmt;

pub use file::{load_model, parse_model, save_model, format_model, ModelFile};
pub use local_stats::{
    fit_local_stats, FitReport, FitRow, HoldoutSampler, LocalStatsModel,
};
pub use oracle::{BlobParams, OracleBlobModel};

use crate::error::{Error, Result};
use crate::grid::{Image, PixelMask, Rect};
use crate::numeric::CompensatedSum;

/// Lower bound on every predicted variance (intensity²).
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Gaussian predictive distribution for one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelDistribution {
    pub mean: f64,
    pub variance: f64,
}

impl PixelDistribution {
    /// Builds a distribution, raising the variance to [`VARIANCE_FLOOR`].
    pub fn new(mean: f64, variance: f64) -> Self {
        Self {
            mean,
            variance: variance.max(VARIANCE_FLOOR),
        }
    }

    /// Negative log-density of `x`.
    pub fn nll(&self, x: f64) -> f64 {
        let r = x - self.mean;
        0.5 * (2.0 * PI * self.variance).ln() + r * r / (2.0 * self.variance)
    }
}

/// A conditional intensity model with a bounded field of view.
///
/// `predict` conditions every target on `observed` with *all* targets
/// removed, so a joint call never lets one target inform another.
pub trait InpaintModel: Send + Sync + fmt::Debug {
    /// Observed pixels farther than this from a target never influence it.
    fn fov_radius(&self) -> f64;

    fn predict(
        &self,
        image: &Image,
        observed: &PixelMask,
        targets: &[usize],
    ) -> Result<Vec<PixelDistribution>>;

    /// The same model restricted to a window of the image it describes.
    fn crop(&self, rect: Rect) -> Result<Box<dyn InpaintModel>>;
}

/// Validates a predict call and returns `observed \ targets`.
pub(crate) fn conditioning_set(
    image: &Image,
    observed: &PixelMask,
    targets: &[usize],
) -> Result<PixelMask> {
    if !observed.same_shape(image.height(), image.width()) {
        return Err(Error::Shape(format!(
            "observed mask {}x{} vs image {}x{}",
            observed.height(),
            observed.width(),
            image.height(),
            image.width()
        )));
    }
    let mut cond = observed.clone();
    for &t in targets {
        if t >= image.len() {
            return Err(Error::invalid(format!("target index {t} outside image")));
        }
        cond.set(t, false);
    }
    Ok(cond)
}

/// Inpainting loss: summed negative log-likelihood of every unobserved pixel.
pub fn inpaint_nll(model: &dyn InpaintModel, image: &Image, observed: &PixelMask) -> Result<f64> {
    if observed.all() {
        return Err(Error::invalid("inpainting loss needs at least one unobserved pixel"));
    }
    let targets: Vec<usize> = observed.complement().ones().collect();
    let preds = model.predict(image, observed, &targets)?;
    let mut acc = CompensatedSum::new();
    for (&t, p) in targets.iter().zip(&preds) {
        acc.add(p.nll(image.data()[t]));
    }
    Ok(acc.value())
}
