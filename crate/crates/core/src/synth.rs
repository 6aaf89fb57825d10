//! Synthetic instance images drawn from the oracle's generative law.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{Image, LabelMap, PixelMask};
use crate::model::{BlobParams, OracleBlobModel};
use crate::numeric::{derive_seed, rng_from_seed};

const PLACEMENT_ATTEMPTS: usize = 200;
const MIN_CONTACT: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub height: usize,
    pub width: usize,
    /// Inclusive range of instances per image.
    pub instances: (usize, usize),
    /// Inclusive range of blob semi-axes in pixels.
    pub radius: (f64, f64),
    pub params: BlobParams,
    /// Probability that an instance is placed against an existing one.
    pub touch_prob: f64,
    /// Images written by a batch run.
    pub count: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            height: 96,
            width: 96,
            instances: (3, 5),
            radius: (10.0, 16.0),
            params: BlobParams::default(),
            touch_prob: 1.0,
            count: 20,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 4 || self.width < 4 {
            return Err(Error::invalid(format!(
                "image size {}x{} is too small",
                self.height, self.width
            )));
        }
        let (lo, hi) = self.instances;
        if lo > hi || hi > u16::MAX as usize {
            return Err(Error::invalid(format!("bad instance range [{lo}, {hi}]")));
        }
        let (rlo, rhi) = self.radius;
        if !(rlo.is_finite() && rhi.is_finite() && rlo >= 1.0 && rlo <= rhi) {
            return Err(Error::invalid(format!("bad radius range [{rlo}, {rhi}]")));
        }
        if !(0.0..=1.0).contains(&self.touch_prob) {
            return Err(Error::invalid(format!("touch probability {} outside [0, 1]", self.touch_prob)));
        }
        self.params.validate()
    }
}

/// One generated image with its ground truth and matching oracle.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Image,
    pub labels: LabelMap,
    pub oracle: OracleBlobModel,
    pub requested: usize,
    pub placed: usize,
}

/// Randomized superellipse with a low-order boundary wobble.
#[derive(Clone, Debug)]
struct Blob {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    theta: f64,
    power: f64,
    wobble: f64,
    wobble_phase: f64,
}

impl Blob {
    fn random(cfg: &GenConfig, rng: &mut impl Rng) -> Self {
        let (lo, hi) = cfg.radius;
        let r = |rng: &mut dyn rand::RngCore| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        Self {
            cy: 0.0,
            cx: 0.0,
            a: r(rng),
            b: r(rng),
            theta: rng.random_range(0.0..PI),
            power: rng.random_range(1.6..3.0),
            wobble: rng.random_range(0.0..0.12),
            wobble_phase: rng.random_range(0.0..2.0 * PI),
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.theta.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let phi = v.atan2(u);
        let scale = 1.0 + self.wobble * (3.0 * phi + self.wobble_phase).cos();
        let t = (u / (self.a * scale)).abs().powf(self.power) + (v / (self.b * scale)).abs().powf(self.power);
        t <= 1.0
    }

    fn reach(&self) -> f64 {
        self.a.max(self.b) * (1.0 + self.wobble) * 2f64.sqrt()
    }

    fn rasterize(&self, height: usize, width: usize) -> Vec<usize> {
        let reach = self.reach().ceil() as i64;
        let (cy, cx) = (self.cy.round() as i64, self.cx.round() as i64);
        let mut out = Vec::new();
        for y in (cy - reach).max(0)..=(cy + reach).min(height as i64 - 1) {
            for x in (cx - reach).max(0)..=(cx + reach).min(width as i64 - 1) {
                if self.contains(y as f64, x as f64) {
                    out.push(y as usize * width + x as usize);
                }
            }
        }
        out
    }

    fn full_area(&self) -> f64 {
        // area of a superellipse with exponent p is 4ab Γ(1+1/p)² / Γ(1+2/p); a disc bound suffices here
        PI * self.a * self.b * 0.8
    }
}

fn neighbours4(i: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (i / w, i % w);
    let mut out = [None; 4];
    if r > 0 {
        out[0] = Some(i - w);
    }
    if r + 1 < h {
        out[1] = Some(i + w);
    }
    if c > 0 {
        out[2] = Some(i - 1);
    }
    if c + 1 < w {
        out[3] = Some(i + 1);
    }
    out.into_iter().flatten()
}

fn is_connected(pixels: &[usize], h: usize, w: usize) -> bool {
    let mut mask = PixelMask::empty(h, w);
    for &p in pixels {
        mask.set(p, true);
    }
    LabelMap::connected_components(&mask).segment_count() == 1
}

/// Number of pixels of `pixels` that are 4-adjacent to label `other`.
fn contact(pixels: &[usize], labels: &LabelMap, other: u32) -> usize {
    let (h, w) = (labels.height(), labels.width());
    pixels
        .iter()
        .filter(|&&p| neighbours4(p, h, w).any(|q| labels.get(q) == other))
        .count()
}

/// Tries to place one more instance; returns its pixels.
fn place(
    cfg: &GenConfig,
    labels: &LabelMap,
    placed: u32,
    touch: bool,
    rng: &mut impl Rng,
) -> Option<Vec<usize>> {
    let (h, w) = (cfg.height, cfg.width);
    for _ in 0..PLACEMENT_ATTEMPTS {
        let mut blob = Blob::random(cfg, rng);
        let min_area = (blob.full_area() * 0.5).max(12.0) as usize;
        let pixels = if touch && placed > 0 {
            let target = rng.random_range(1..=placed);
            let members: Vec<usize> = labels.labels().iter().enumerate().filter(|(_, &l)| l == target).map(|(i, _)| i).collect();
            let (sy, sx) = members.iter().fold((0.0, 0.0), |(y, x), &i| (y + (i / w) as f64, x + (i % w) as f64));
            let (ty, tx) = (sy / members.len() as f64, sx / members.len() as f64);
            let dir = rng.random_range(0.0..2.0 * PI);
            let (dy, dx) = (dir.sin(), dir.cos());
            // march outwards until the blob stops overlapping the target, then carve the last overlap
            let mut last_overlap: Option<Vec<usize>> = None;
            let mut step = 0.0;
            let limit = (h + w) as f64;
            loop {
                blob.cy = ty + dy * step;
                blob.cx = tx + dx * step;
                let px = blob.rasterize(h, w);
                if px.iter().any(|&p| labels.get(p) == target) {
                    last_overlap = Some(px);
                } else {
                    break;
                }
                step += 1.0;
                if step > limit {
                    break;
                }
            }
            let Some(px) = last_overlap else {
                continue;
            };
            let carved: Vec<usize> = px.into_iter().filter(|&p| labels.get(p) == 0).collect();
            if carved.iter().any(|&p| neighbours4(p, h, w).any(|q| {
                let l = labels.get(q);
                l != 0 && l != target
            })) {
                continue;
            }
            if contact(&carved, labels, target) < MIN_CONTACT {
                continue;
            }
            carved
        } else {
            blob.cy = rng.random_range(0.0..h as f64);
            blob.cx = rng.random_range(0.0..w as f64);
            let px = blob.rasterize(h, w);
            // keep a one-pixel gap (8-neighbourhood) to every other instance
            let clear = px.iter().all(|&p| {
                let (r, c) = ((p / w) as i64, (p % w) as i64);
                (-1..=1).all(|a| {
                    (-1..=1).all(|b| {
                        let (rr, cc) = (r + a, c + b);
                        rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 || labels.at(rr as usize, cc as usize) == 0
                    })
                })
            });
            if !clear {
                continue;
            }
            px
        };
        if pixels.len() >= min_area && is_connected(&pixels, h, w) {
            return Some(pixels);
        }
    }
    None
}

fn sample_instances(cfg: &GenConfig, rng: &mut impl Rng) -> (LabelMap, usize) {
    let (lo, hi) = cfg.instances;
    let requested = rng.random_range(lo..=hi);
    let mut labels = LabelMap::zeros(cfg.height, cfg.width);
    let mut placed = 0u32;
    for _ in 0..requested {
        let touch = rng.random_bool(cfg.touch_prob);
        if let Some(pixels) = place(cfg, &labels, placed, touch, rng) {
            placed += 1;
            for p in pixels {
                labels.set(p, placed);
            }
        }
    }
    (labels, requested)
}

/// Draws intensities for a fixed label map from the exact generative law.
pub fn sample_intensities(params: &BlobParams, labels: &LabelMap, rng: &mut impl Rng) -> Result<Image> {
    params.validate()?;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let segments = labels.max_label() as usize + 1;
    let coefficients: Vec<[f64; 5]> = (0..segments as u32)
        .map(|l| {
            let (mean, var) = params.coefficient_prior(l);
            let dim = if l == 0 { 1 } else { 5 };
            let mut c = [0.0; 5];
            for k in 0..dim {
                let sd = if k > 0 { (params.field_variance / 2.0).sqrt() } else { var[k].sqrt() };
                c[k] = mean[k] + sd * std_normal.sample(rng);
            }
            c
        })
        .collect();
    let noise_sd = params.noise_variance.sqrt();
    let w = labels.width();
    let data = labels
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let (phi, dim) = params.features(l, i / w, i % w);
            let coef = &coefficients[l as usize];
            let signal: f64 = (0..dim).map(|k| phi[k] * coef[k]).sum();
            signal + noise_sd * std_normal.sample(rng)
        })
        .collect();
    Image::new(labels.height(), labels.width(), data)
}

/// One image from `cfg.seed`; fewer instances than requested when placement fails.
pub fn generate(cfg: &GenConfig) -> Result<Sample> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let (labels, requested) = sample_instances(cfg, &mut rng);
    let placed = labels.segment_count();
    if placed < requested {
        log::warn!("placed {placed} of {requested} instances (seed {})", cfg.seed);
    }
    let image = sample_intensities(&cfg.params, &labels, &mut rng)?;
    let oracle = OracleBlobModel::new(cfg.params.clone(), labels.clone())?;
    Ok(Sample {
        image,
        labels,
        oracle,
        requested,
        placed,
    })
}

/// `cfg.count` images; image `k` uses seed `derive_seed(cfg.seed, [k])`.
pub fn generate_batch(cfg: &GenConfig) -> Result<Vec<Sample>> {
    (0..cfg.count)
        .map(|k| {
            generate(&GenConfig {
                seed: derive_seed(cfg.seed, &[k as u64]),
                ..cfg.clone()
            })
        })
        .collect()
}
