use rand::Rng;

use super::{conditioning_set, inpaint_nll, InpaintModel, PixelDistribution, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::grid::{disc_offsets, Image, PixelMask, Rect};
use crate::numeric::{rng_from_seed, CompensatedSum};

/// Kernel-weighted local mean predictor.
///
/// The mean is the Gaussian-weighted average of observed pixels within the
/// field of view `ceil(3 · bandwidth)`. The variance is
/// `residual_variance / f + floor`, where `f` is the observed fraction of the
/// kernel mass. With nothing observed in view the prior is returned.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalStatsModel {
    pub bandwidth: f64,
    pub prior_mean: f64,
    pub prior_variance: f64,
    pub residual_variance: f64,
}

struct Kernel {
    offsets: Vec<(i64, i64, f64)>,
    mass: f64,
}

impl LocalStatsModel {
    pub fn new(
        bandwidth: f64,
        prior_mean: f64,
        prior_variance: f64,
        residual_variance: f64,
    ) -> Result<Self> {
        let ok = |v: f64| v.is_finite();
        if !(ok(bandwidth) && bandwidth > 0.0) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
        }
        if !(ok(prior_mean) && ok(prior_variance) && ok(residual_variance)) {
            return Err(Error::NonFinite("local-stats parameters".into()));
        }
        if prior_variance < 0.0 || residual_variance < 0.0 {
            return Err(Error::invalid("variances must be non-negative"));
        }
        Ok(Self {
            bandwidth,
            prior_mean,
            prior_variance,
            residual_variance,
        })
    }

    /// Integer field-of-view radius, `ceil(3 · bandwidth)`.
    pub fn fov(&self) -> usize {
        (3.0 * self.bandwidth).ceil() as usize
    }

    fn kernel(&self) -> Kernel {
        let two_s2 = 2.0 * self.bandwidth * self.bandwidth;
        let offsets: Vec<(i64, i64, f64)> = disc_offsets(self.fov() as f64)
            .into_iter()
            .filter(|&(dy, dx)| (dy, dx) != (0, 0))
            .map(|(dy, dx)| (dy, dx, (-((dy * dy + dx * dx) as f64) / two_s2).exp()))
            .collect();
        let mass = offsets.iter().map(|o| o.2).sum();
        Kernel { offsets, mass }
    }

    /// Weighted mean and observed kernel fraction; `None` when nothing is in view.
    fn local_estimate(
        kernel: &Kernel,
        image: &Image,
        cond: &PixelMask,
        target: usize,
    ) -> Option<(f64, f64)> {
        let (h, w) = (image.height() as i64, image.width() as i64);
        let (r, c) = ((target as i64) / w, (target as i64) % w);
        let data = image.data();
        let mut wsum = 0.0;
        let mut xsum = 0.0;
        for &(dy, dx, k) in &kernel.offsets {
            let (rr, cc) = (r + dy, c + dx);
            if rr < 0 || cc < 0 || rr >= h || cc >= w {
                continue;
            }
            let j = (rr * w + cc) as usize;
            if cond.get(j) {
                wsum += k;
                xsum += k * data[j];
            }
        }
        (wsum > 0.0).then(|| (xsum / wsum, wsum / kernel.mass))
    }

    fn prior(&self) -> PixelDistribution {
        PixelDistribution::new(self.prior_mean, self.prior_variance)
    }
}

impl InpaintModel for LocalStatsModel {
    fn fov_radius(&self) -> f64 {
        self.fov() as f64
    }

    fn predict(
        &self,
        image: &Image,
        observed: &PixelMask,
        targets: &[usize],
    ) -> Result<Vec<PixelDistribution>> {
        let cond = conditioning_set(image, observed, targets)?;
        let kernel = self.kernel();
        Ok(targets
            .iter()
            .map(|&t| match Self::local_estimate(&kernel, image, &cond, t) {
                Some((mean, frac)) => {
                    PixelDistribution::new(mean, self.residual_variance / frac + VARIANCE_FLOOR)
                }
                None => self.prior(),
            })
            .collect())
    }

    fn crop(&self, _rect: Rect) -> Result<Box<dyn InpaintModel>> {
        Ok(Box::new(self.clone()))
    }
}

/// Random rectangular holdout regions covering a fraction of each image.
#[derive(Clone, Debug, PartialEq)]
pub struct HoldoutSampler {
    pub masks_per_image: usize,
    pub min_fraction: f64,
    pub max_fraction: f64,
}

impl Default for HoldoutSampler {
    fn default() -> Self {
        Self {
            masks_per_image: 8,
            min_fraction: 0.1,
            max_fraction: 0.5,
        }
    }
}

impl HoldoutSampler {
    /// Observed mask: everything except one rectangle.
    pub fn sample(&self, height: usize, width: usize, rng: &mut impl Rng) -> PixelMask {
        let total = (height * width) as f64;
        let frac = rng.random_range(self.min_fraction..=self.max_fraction);
        let area = (frac * total).round().max(1.0);
        let min_h = ((area / width as f64).ceil() as usize).clamp(1, height);
        let max_h = (area as usize).clamp(min_h, height);
        let rh = rng.random_range(min_h..=max_h);
        let rw = ((area / rh as f64).round() as usize).clamp(1, width);
        let top = rng.random_range(0..=height - rh);
        let left = rng.random_range(0..=width - rw);
        PixelMask::from_fn(height, width, |r, c| {
            !(r >= top && r < top + rh && c >= left && c < left + rw)
        })
    }

    /// The masks used for a corpus, drawn in image order from one seeded stream.
    pub fn sample_corpus(&self, images: &[Image], seed: u64) -> Vec<Vec<PixelMask>> {
        let mut rng = rng_from_seed(seed);
        images
            .iter()
            .map(|img| {
                (0..self.masks_per_image)
                    .map(|_| self.sample(img.height(), img.width(), &mut rng))
                    .collect()
            })
            .collect()
    }
}

/// One row of the bandwidth selection table.
#[derive(Clone, Debug, PartialEq)]
pub struct FitRow {
    pub bandwidth: f64,
    pub residual_variance: f64,
    pub mean_nll: f64,
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub model: LocalStatsModel,
    pub table: Vec<FitRow>,
    pub warnings: Vec<String>,
}

/// Fits a [`LocalStatsModel`] by minimizing the mean holdout inpainting loss.
///
/// For every candidate bandwidth the residual variance is set to its
/// closed-form optimum `mean(f_i · e_i²)` over holdout pixels that have
/// observed context; ties between bandwidths go to the smallest.
pub fn fit_local_stats(
    images: &[Image],
    bandwidth_grid: &[f64],
    sampler: &HoldoutSampler,
    seed: u64,
) -> Result<FitReport> {
    if images.is_empty() {
        return Err(Error::invalid("fitting needs at least one image"));
    }
    if bandwidth_grid.is_empty() {
        return Err(Error::invalid("bandwidth grid is empty"));
    }
    if sampler.masks_per_image == 0 {
        return Err(Error::invalid("holdout sampler draws no masks"));
    }
    let mut warnings = Vec::new();

    let mut sum = CompensatedSum::new();
    let mut count = 0usize;
    for img in images {
        sum.extend(img.data().iter().copied());
        count += img.len();
    }
    let prior_mean = sum.value() / count as f64;
    let mut sq = CompensatedSum::new();
    for img in images {
        sq.extend(img.data().iter().map(|&x| (x - prior_mean) * (x - prior_mean)));
    }
    let mut prior_variance = sq.value() / count as f64;
    if prior_variance < VARIANCE_FLOOR {
        let msg = format!(
            "corpus intensity variance {prior_variance:e} is degenerate; prior variance set to the floor"
        );
        log::warn!("{msg}");
        warnings.push(msg);
        prior_variance = VARIANCE_FLOOR;
    }

    let masks = sampler.sample_corpus(images, seed);
    let mut table = Vec::with_capacity(bandwidth_grid.len());
    for &bandwidth in bandwidth_grid {
        let probe = LocalStatsModel::new(bandwidth, prior_mean, prior_variance, 0.0)?;
        let kernel = probe.kernel();
        let mut weighted = CompensatedSum::new();
        let mut informative = 0usize;
        for (img, img_masks) in images.iter().zip(&masks) {
            for observed in img_masks {
                for t in observed.complement().ones() {
                    if let Some((mean, frac)) =
                        LocalStatsModel::local_estimate(&kernel, img, observed, t)
                    {
                        let e = img.data()[t] - mean;
                        weighted.add(frac * e * e);
                        informative += 1;
                    }
                }
            }
        }
        let residual_variance = if informative > 0 {
            weighted.value() / informative as f64
        } else {
            0.0
        };
        let model = LocalStatsModel {
            residual_variance,
            ..probe
        };
        let mut nll = CompensatedSum::new();
        let mut n = 0usize;
        for (img, img_masks) in images.iter().zip(&masks) {
            for observed in img_masks {
                nll.add(inpaint_nll(&model, img, observed)?);
                n += 1;
            }
        }
        table.push(FitRow {
            bandwidth,
            residual_variance,
            mean_nll: nll.value() / n as f64,
        });
    }

    let mut best = 0;
    for (i, row) in table.iter().enumerate() {
        let current = &table[best];
        if row.mean_nll < current.mean_nll
            || (row.mean_nll == current.mean_nll && row.bandwidth < current.bandwidth)
        {
            best = i;
        }
    }
    let chosen = &table[best];
    let model = LocalStatsModel::new(
        chosen.bandwidth,
        prior_mean,
        prior_variance,
        chosen.residual_variance,
    )?;
    Ok(FitReport {
        model,
        table,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn model(bw: f64) -> LocalStatsModel {
        LocalStatsModel::new(bw, 0.4, 0.05, 0.002).unwrap()
    }

    #[test]
    fn fov_is_three_bandwidths_rounded_up() {
        assert_eq!(model(1.0).fov(), 3);
        assert_eq!(model(1.2).fov(), 4);
        assert_eq!(model(0.5).fov_radius(), 2.0);
    }

    #[test]
    fn constant_context_predicts_constant() {
        let img = Image::filled(9, 9, 0.7).unwrap();
        let observed = PixelMask::from_fn(9, 9, |r, c| !(r == 4 && c == 4) && (r + c) % 3 != 0);
        let targets: Vec<usize> = observed.complement().ones().collect();
        for p in model(1.5).predict(&img, &observed, &targets).unwrap() {
            assert!((p.mean - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn nothing_in_view_returns_prior() {
        let img = Image::filled(20, 20, 0.9).unwrap();
        let observed = PixelMask::from_fn(20, 20, |r, _| r >= 15);
        let m = model(1.0);
        let p = m.predict(&img, &observed, &[0]).unwrap()[0];
        assert_eq!(p, PixelDistribution::new(0.4, 0.05));
    }

    #[test]
    fn full_context_variance_is_residual_plus_floor() {
        let img = Image::filled(15, 15, 0.2).unwrap();
        let observed = PixelMask::full(15, 15);
        let m = model(1.0);
        let p = m.predict(&img, &observed, &[7 * 15 + 7]).unwrap()[0];
        assert!((p.variance - (0.002 + VARIANCE_FLOOR)).abs() < 1e-15);
    }

    #[test]
    fn constant_image_nll_is_normalizer_sum() {
        let img = Image::filled(8, 8, 0.5).unwrap();
        let m = LocalStatsModel::new(1.0, 0.5, 0.01, 0.003).unwrap();
        let observed = PixelMask::from_fn(8, 8, |r, c| r < 4 || c < 2);
        let targets: Vec<usize> = observed.complement().ones().collect();
        let preds = m.predict(&img, &observed, &targets).unwrap();
        let expect: f64 = preds
            .iter()
            .map(|p| {
                assert_eq!(p.mean, 0.5);
                0.5 * (2.0 * PI * p.variance).ln()
            })
            .sum();
        let nll = inpaint_nll(&m, &img, &observed).unwrap();
        assert!((nll - expect).abs() < 1e-10);
    }

    #[test]
    fn single_unobserved_pixel_is_one_term() {
        let img = Image::from_fn(6, 6, |r, c| (r * 6 + c) as f64 / 36.0).unwrap();
        let m = model(1.0);
        let mut observed = PixelMask::full(6, 6);
        observed.set(14, false);
        let p = m.predict(&img, &observed, &[14]).unwrap()[0];
        assert_eq!(inpaint_nll(&m, &img, &observed).unwrap(), p.nll(img.data()[14]));
        assert!(inpaint_nll(&m, &img, &PixelMask::full(6, 6)).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(LocalStatsModel::new(0.0, 0.0, 1.0, 1.0).is_err());
        assert!(LocalStatsModel::new(1.0, f64::NAN, 1.0, 1.0).is_err());
        assert!(LocalStatsModel::new(1.0, 0.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn holdout_rectangles_cover_requested_fraction() {
        let sampler = HoldoutSampler::default();
        let mut rng = rng_from_seed(3);
        for _ in 0..200 {
            let m = sampler.sample(40, 30, &mut rng);
            let hidden = m.complement().count() as f64 / 1200.0;
            // rounding of the rectangle sides can shift the area slightly
            assert!(hidden > 0.07 && hidden < 0.55, "hidden fraction {hidden}");
        }
    }

    #[test]
    fn constant_corpus_ties_to_smallest_bandwidth() {
        let images = vec![Image::filled(16, 16, 0.3).unwrap(); 2];
        let report =
            fit_local_stats(&images, &[4.0, 1.0, 2.0], &HoldoutSampler::default(), 1).unwrap();
        assert_eq!(report.model.bandwidth, 1.0);
        assert_eq!(report.model.prior_variance, VARIANCE_FLOOR);
        assert_eq!(report.warnings.len(), 1);
        let first = report.table[0].mean_nll;
        assert!(report.table.iter().all(|r| r.mean_nll == first));
    }

    #[test]
    fn fit_rejects_empty_inputs() {
        let img = Image::filled(4, 4, 0.1).unwrap();
        assert!(fit_local_stats(&[], &[1.0], &HoldoutSampler::default(), 0).is_err());
        assert!(fit_local_stats(&[img], &[], &HoldoutSampler::default(), 0).is_err());
    }
}
