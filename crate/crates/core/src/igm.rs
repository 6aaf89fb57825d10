//! Information-gain quantities over pixel masks.
//!
//! `rig(i)` follows the "positive means `M` explains `x_i` better" convention:
//! it is the reconstruction error of `x_i` from the complement minus the
//! error from `M`, both sides conditioned with the whole band hidden. The
//! banded measure is `Σ_{M̄∩N} rig − Σ_{M∩N} rig`. Swapping `M ↔ M̄` negates
//! every rig value and exchanges the two sums, so the measure is symmetric
//! under complement. The sign-based band update never increases it for a
//! fixed band and fixed rig values.

use crate::error::{Error, Result};
use crate::grid::{mask_boundary_band, Image, PixelMask};
use crate::model::{InpaintModel, PixelDistribution, VARIANCE_FLOOR};
use crate::numeric::CompensatedSum;

/// `KL(p ‖ q)` for univariate Gaussians.
pub fn kl_gaussian(p: PixelDistribution, q: PixelDistribution) -> Result<f64> {
    for (name, d) in [("p", p), ("q", q)] {
        if !(d.mean.is_finite() && d.variance.is_finite()) {
            return Err(Error::NonFinite(format!("distribution {name}")));
        }
        if d.variance < VARIANCE_FLOOR {
            return Err(Error::invalid(format!(
                "distribution {name} has variance {} below the floor",
                d.variance
            )));
        }
    }
    let diff = p.mean - q.mean;
    let kl = 0.5 * (q.variance / p.variance).ln() + (p.variance + diff * diff) / (2.0 * q.variance)
        - 0.5;
    Ok(kl.max(0.0))
}

/// Information gained about `x_i` by observing the whole image instead of `M`.
pub fn ig_exact(
    model: &dyn InpaintModel,
    image: &Image,
    pixel: usize,
    mask: &PixelMask,
) -> Result<f64> {
    let full = PixelMask::full(image.height(), image.width());
    let given_all = model.predict(image, &full, &[pixel])?[0];
    let given_mask = model.predict(image, mask, &[pixel])?[0];
    kl_gaussian(given_all, given_mask)
}

/// Relative information gain on a set of band pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct RigMap {
    pub band: Vec<usize>,
    pub values: Vec<f64>,
}

/// Per-band-pixel reconstruction errors (negative log-likelihoods) from each side.
#[derive(Clone, Debug, PartialEq)]
pub struct SideErrors {
    pub band: Vec<usize>,
    pub from_mask: Vec<f64>,
    pub from_complement: Vec<f64>,
}

impl SideErrors {
    /// Predicts every band pixel twice, from `obs_mask` and `obs_complement`;
    /// band pixels are hidden from both conditioning sets.
    pub fn compute(
        model: &dyn InpaintModel,
        image: &Image,
        band: Vec<usize>,
        obs_mask: &PixelMask,
        obs_complement: &PixelMask,
    ) -> Result<Self> {
        let data = image.data();
        let from = |obs: &PixelMask| -> Result<Vec<f64>> {
            Ok(model
                .predict(image, obs, &band)?
                .iter()
                .zip(&band)
                .map(|(p, &i)| p.nll(data[i]))
                .collect())
        };
        let from_mask = from(obs_mask)?;
        let from_complement = from(obs_complement)?;
        Ok(Self {
            band,
            from_mask,
            from_complement,
        })
    }

    pub fn rig(&self) -> RigMap {
        RigMap {
            band: self.band.clone(),
            values: self
                .from_complement
                .iter()
                .zip(&self.from_mask)
                .map(|(c, m)| c - m)
                .collect(),
        }
    }
}

/// Surrogate relative information gain for every target, with all targets hidden.
pub fn rig_surrogate(
    model: &dyn InpaintModel,
    image: &Image,
    targets: &[usize],
    mask: &PixelMask,
) -> Result<RigMap> {
    if !mask.same_shape(image.height(), image.width()) {
        return Err(Error::Shape("mask and image differ in shape".into()));
    }
    let errors = SideErrors::compute(model, image, targets.to_vec(), mask, &mask.complement())?;
    Ok(errors.rig())
}

/// `Σ_{M̄∩N} rig − Σ_{M∩N} rig`, summed in band order with compensation.
pub fn igm_from_rig(rig: &RigMap, mask: &PixelMask) -> f64 {
    let mut acc = CompensatedSum::new();
    for (&i, &v) in rig.band.iter().zip(&rig.values) {
        acc.add(if mask.get(i) { -v } else { v });
    }
    acc.value()
}

/// Banded information-gain measure of a mask.
pub fn igm_banded(model: &dyn InpaintModel, image: &Image, mask: &PixelMask, d: f64) -> Result<f64> {
    let band: Vec<usize> = mask_boundary_band(mask, d)?.ones().collect();
    if band.is_empty() {
        return Ok(0.0);
    }
    let rig = rig_surrogate(model, image, &band, mask)?;
    Ok(igm_from_rig(&rig, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LocalStatsModel;

    fn n(mean: f64, variance: f64) -> PixelDistribution {
        PixelDistribution { mean, variance }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_gaussian(n(0.3, 0.2), n(0.3, 0.2)).unwrap(), 0.0);
        assert!((kl_gaussian(n(1.0, 1.0), n(0.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        let expect = 2f64.ln() + 1.0 / 8.0 - 0.5;
        assert!((kl_gaussian(n(0.0, 1.0), n(0.0, 4.0)).unwrap() - expect).abs() < 1e-15);
        assert!((expect - 0.318147).abs() < 1e-6);
    }

    #[test]
    fn kl_rejects_bad_inputs() {
        assert!(kl_gaussian(n(f64::NAN, 1.0), n(0.0, 1.0)).is_err());
        assert!(kl_gaussian(n(0.0, 1.0), n(0.0, f64::INFINITY)).is_err());
        assert!(kl_gaussian(n(0.0, 0.0), n(0.0, 1.0)).is_err());
    }

    #[test]
    fn ig_of_full_mask_is_zero() {
        let img = Image::from_fn(7, 7, |r, c| ((r * 7 + c) % 5) as f64 / 5.0).unwrap();
        let m = LocalStatsModel::new(1.0, 0.4, 0.1, 0.01).unwrap();
        assert_eq!(ig_exact(&m, &img, 24, &PixelMask::full(7, 7)).unwrap(), 0.0);
    }

    #[test]
    fn constant_image_rig_vanishes() {
        let img = Image::filled(8, 8, 0.6).unwrap();
        // residual variance 0 is what fitting on a constant corpus produces
        let model = LocalStatsModel::new(2.0, 0.6, 0.1, 0.0).unwrap();
        let mask = PixelMask::from_fn(8, 8, |r, c| c < 4 || (r < 2 && c < 6));
        let band: Vec<usize> = mask_boundary_band(&mask, 2.0).unwrap().ones().collect();
        let rig = rig_surrogate(&model, &img, &band, &mask).unwrap();
        for v in &rig.values {
            assert!(v.abs() < 1e-12, "rig {v}");
        }
        let vertical = PixelMask::from_fn(8, 8, |_, c| c < 4);
        assert!(igm_banded(&model, &img, &vertical, 1.0).unwrap().abs() < 1e-10);
    }

    #[test]
    fn mirror_symmetric_split_has_zero_rig_on_axis() {
        // symmetric about the vertical axis between columns; the middle column 4 of 9 is the axis
        let img = Image::from_fn(9, 9, |r, c| {
            let m = (c as i64 - 4).unsigned_abs() as f64;
            0.2 + 0.05 * m + 0.01 * r as f64
        })
        .unwrap();
        let model = LocalStatsModel::new(1.0, 0.3, 0.1, 0.01).unwrap();
        let mask = PixelMask::from_fn(9, 9, |_, c| c < 4);
        // target on the axis; the complement side is columns 4.. but the target is hidden
        let target = 4 * 9 + 4;
        let mut obs_m = mask.clone();
        let mut obs_c = PixelMask::from_fn(9, 9, |_, c| c > 4);
        obs_m.set(target, false);
        obs_c.set(target, false);
        let e = SideErrors::compute(&model, &img, vec![target], &obs_m, &obs_c).unwrap();
        assert!(e.rig().values[0].abs() < 1e-12);
    }

    #[test]
    fn full_mask_has_zero_measure() {
        let img = Image::filled(5, 5, 0.1).unwrap();
        let model = LocalStatsModel::new(1.0, 0.1, 0.1, 0.01).unwrap();
        assert_eq!(igm_banded(&model, &img, &PixelMask::full(5, 5), 2.0).unwrap(), 0.0);
    }

    #[test]
    fn complement_leaves_measure_unchanged() {
        let img = Image::from_fn(10, 10, |r, c| ((r * 31 + c * 17) % 11) as f64 / 11.0).unwrap();
        let model = LocalStatsModel::new(1.0, 0.5, 0.1, 0.02).unwrap();
        let mask = PixelMask::from_fn(10, 10, |r, c| r + c < 9);
        let a = igm_banded(&model, &img, &mask, 2.0).unwrap();
        let b = igm_banded(&model, &img, &mask.complement(), 2.0).unwrap();
        assert_eq!(a, b);
    }
}
