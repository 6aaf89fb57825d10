use std::collections::BTreeMap;
use std::f64::consts::PI;

use super::{conditioning_set, InpaintModel, PixelDistribution, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::grid::{disc_offsets, Image, LabelMap, PixelMask, Rect};

/// Generative law shared by the synthetic generator and the oracle.
///
/// A foreground pixel of instance `k` at absolute position `(y, x)` is
/// `b_k + Σ_j (c_kj cos(ω u_j) + s_kj sin(ω u_j)) + ε`, with `u = (y, x)`,
/// `ω = π / (2 · correlation_length)`, `b_k ~ N(base_mean, base_variance)`,
/// every field coefficient `~ N(0, field_variance / 2)` and
/// `ε ~ N(0, noise_variance)`. Background pixels are `b_0 + ε` with
/// `b_0 ~ N(background_mean, background_variance)`. All coefficients are
/// independent across instances.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobParams {
    pub base_mean: f64,
    pub base_variance: f64,
    pub field_variance: f64,
    pub correlation_length: f64,
    pub noise_variance: f64,
    pub background_mean: f64,
    pub background_variance: f64,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self {
            base_mean: 0.55,
            base_variance: 0.02,
            field_variance: 0.004,
            correlation_length: 8.0,
            noise_variance: 1e-4,
            background_mean: 0.1,
            background_variance: 1e-3,
        }
    }
}

pub(crate) const MAX_DIM: usize = 5;

impl BlobParams {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.base_mean,
            self.base_variance,
            self.field_variance,
            self.correlation_length,
            self.noise_variance,
            self.background_mean,
            self.background_variance,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("generative parameters".into()));
        }
        if self.base_variance <= 0.0 || self.background_variance <= 0.0 {
            return Err(Error::invalid("base and background variances must be positive"));
        }
        if self.field_variance < 0.0 || self.noise_variance < 0.0 {
            return Err(Error::invalid("field and noise variances must be non-negative"));
        }
        if self.correlation_length <= 0.0 {
            return Err(Error::invalid("correlation length must be positive"));
        }
        Ok(())
    }

    fn omega(&self) -> f64 {
        PI / (2.0 * self.correlation_length)
    }

    /// Regression features of a pixel; background uses only the intercept.
    pub(crate) fn features(&self, label: u32, y: usize, x: usize) -> ([f64; MAX_DIM], usize) {
        if label == 0 {
            return ([1.0, 0.0, 0.0, 0.0, 0.0], 1);
        }
        let w = self.omega();
        let (ay, ax) = (w * y as f64, w * x as f64);
        ([1.0, ay.cos(), ay.sin(), ax.cos(), ax.sin()], MAX_DIM)
    }

    /// Prior mean and variance of the regression coefficients.
    pub(crate) fn coefficient_prior(&self, label: u32) -> ([f64; MAX_DIM], [f64; MAX_DIM]) {
        if label == 0 {
            return (
                [self.background_mean, 0.0, 0.0, 0.0, 0.0],
                [self.background_variance, 1.0, 1.0, 1.0, 1.0],
            );
        }
        // Degenerate field: keep the precision finite, the coefficients stay ~0.
        let fv = (self.field_variance / 2.0).max(1e-12);
        ([self.base_mean, 0.0, 0.0, 0.0, 0.0], [self.base_variance, fv, fv, fv, fv])
    }

    fn conditioning_noise(&self) -> f64 {
        self.noise_variance.max(VARIANCE_FLOOR)
    }
}

/// Sufficient statistics of the Gaussian posterior over one segment's coefficients.
#[derive(Clone, Debug)]
struct Posterior {
    dim: usize,
    precision: [[f64; MAX_DIM]; MAX_DIM],
    shift: [f64; MAX_DIM],
}

impl Posterior {
    fn prior(params: &BlobParams, label: u32) -> Self {
        let (mean, var) = params.coefficient_prior(label);
        let dim = if label == 0 { 1 } else { MAX_DIM };
        let mut precision = [[0.0; MAX_DIM]; MAX_DIM];
        let mut shift = [0.0; MAX_DIM];
        for k in 0..dim {
            precision[k][k] = 1.0 / var[k];
            shift[k] = mean[k] / var[k];
        }
        Self {
            dim,
            precision,
            shift,
        }
    }

    fn observe(&mut self, phi: &[f64; MAX_DIM], x: f64, inv_noise: f64) {
        for a in 0..self.dim {
            let pa = phi[a] * inv_noise;
            self.shift[a] += pa * x;
            for b in a..self.dim {
                self.precision[a][b] += pa * phi[b];
            }
        }
    }

    /// Lower Cholesky factor of the (upper-stored) precision.
    fn cholesky(&self) -> [[f64; MAX_DIM]; MAX_DIM] {
        let n = self.dim;
        let mut l = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..n {
            for j in 0..=i {
                let mut s = self.precision[j][i];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    l[i][i] = s.max(1e-300).sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        l
    }

    fn predictive(&self, phi: &[f64; MAX_DIM], noise: f64) -> PixelDistribution {
        let n = self.dim;
        let l = self.cholesky();
        // forward solves: L a = shift, L z = phi
        let mut a = [0.0; MAX_DIM];
        let mut z = [0.0; MAX_DIM];
        for i in 0..n {
            let mut sa = self.shift[i];
            let mut sz = phi[i];
            for k in 0..i {
                sa -= l[i][k] * a[k];
                sz -= l[i][k] * z[k];
            }
            a[i] = sa / l[i][i];
            z[i] = sz / l[i][i];
        }
        // mean = phiᵀ Λ⁻¹ η = zᵀ a ; var = zᵀ z
        let mean: f64 = (0..n).map(|i| z[i] * a[i]).sum();
        let var: f64 = (0..n).map(|i| z[i] * z[i]).sum();
        PixelDistribution::new(mean, var + noise)
    }
}

/// Exact conditional law of the synthetic generator.
///
/// A target is conditioned only on observed pixels of its own true segment,
/// so the model satisfies the cross-instance independence assumption exactly.
/// With `window = None` every observed pixel of the segment is used; with
/// `Some(r)` only those within Euclidean distance `r` of the target.
#[derive(Clone, Debug)]
pub struct OracleBlobModel {
    params: BlobParams,
    labels: LabelMap,
    origin: (usize, usize),
    window: Option<f64>,
}

impl OracleBlobModel {
    pub fn new(params: BlobParams, labels: LabelMap) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            labels,
            origin: (0, 0),
            window: None,
        })
    }

    /// Restrict conditioning to a disc of the given radius.
    pub fn with_window(mut self, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius >= 1.0) {
            return Err(Error::invalid(format!("oracle window must be >= 1, got {radius}")));
        }
        self.window = Some(radius);
        Ok(self)
    }

    pub fn params(&self) -> &BlobParams {
        &self.params
    }

    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    pub fn window(&self) -> Option<f64> {
        self.window
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        if image.height() != self.labels.height() || image.width() != self.labels.width() {
            return Err(Error::Shape(format!(
                "oracle built for {}x{} but image is {}x{}",
                self.labels.height(),
                self.labels.width(),
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    fn features_at(&self, idx: usize) -> ([f64; MAX_DIM], u32) {
        let w = self.labels.width();
        let label = self.labels.get(idx);
        let (y, x) = (self.origin.0 + idx / w, self.origin.1 + idx % w);
        (self.params.features(label, y, x).0, label)
    }

    /// Predictive for a target given an explicit set of segment-mates.
    fn predict_from(
        &self,
        target: usize,
        observed: impl Iterator<Item = usize>,
        image: &Image,
    ) -> PixelDistribution {
        let (phi_t, label) = self.features_at(target);
        let noise = self.params.conditioning_noise();
        let mut post = Posterior::prior(&self.params, label);
        for j in observed {
            let (phi, _) = self.features_at(j);
            post.observe(&phi, image.data()[j], 1.0 / noise);
        }
        post.predictive(&phi_t, noise)
    }
}

impl InpaintModel for OracleBlobModel {
    fn fov_radius(&self) -> f64 {
        self.window.unwrap_or(f64::INFINITY)
    }

    fn predict(
        &self,
        image: &Image,
        observed: &PixelMask,
        targets: &[usize],
    ) -> Result<Vec<PixelDistribution>> {
        self.check_image(image)?;
        let cond = conditioning_set(image, observed, targets)?;
        let noise = self.params.conditioning_noise();
        match self.window {
            None => {
                let mut posts: BTreeMap<u32, Posterior> = BTreeMap::new();
                for j in cond.ones() {
                    let (phi, label) = self.features_at(j);
                    posts
                        .entry(label)
                        .or_insert_with(|| Posterior::prior(&self.params, label))
                        .observe(&phi, image.data()[j], 1.0 / noise);
                }
                Ok(targets
                    .iter()
                    .map(|&t| {
                        let (phi, label) = self.features_at(t);
                        match posts.get(&label) {
                            Some(p) => p.predictive(&phi, noise),
                            None => Posterior::prior(&self.params, label).predictive(&phi, noise),
                        }
                    })
                    .collect())
            }
            Some(radius) => {
                let disc = disc_offsets(radius);
                let (h, w) = (image.height() as i64, image.width() as i64);
                Ok(targets
                    .iter()
                    .map(|&t| {
                        let label = self.labels.get(t);
                        let (r, c) = (t as i64 / w, t as i64 % w);
                        let mates = disc.iter().filter_map(|&(dy, dx)| {
                            let (rr, cc) = (r + dy, c + dx);
                            if rr < 0 || cc < 0 || rr >= h || cc >= w {
                                return None;
                            }
                            let j = (rr * w + cc) as usize;
                            (cond.get(j) && self.labels.get(j) == label).then_some(j)
                        });
                        self.predict_from(t, mates, image)
                    })
                    .collect())
            }
        }
    }

    fn crop(&self, rect: Rect) -> Result<Box<dyn InpaintModel>> {
        if rect.top + rect.height > self.labels.height()
            || rect.left + rect.width > self.labels.width()
        {
            return Err(Error::Shape(format!("crop {rect:?} exceeds oracle labels")));
        }
        Ok(Box::new(OracleBlobModel {
            params: self.params.clone(),
            labels: self.labels.crop(rect),
            origin: (self.origin.0 + rect.top, self.origin.1 + rect.left),
            window: self.window,
        }))
    }
}
