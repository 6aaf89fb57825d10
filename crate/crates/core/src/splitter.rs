//! Greedy boundary evolution of a two-way split and its recursive application.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{band_within, Image, LabelMap, PixelMask, Rect};
use crate::igm::{igm_from_rig, SideErrors};
use crate::model::InpaintModel;
use crate::numeric::{derive_seed, gaussian_blur, rng_from_seed};

/// How the band radius evolves over the iterations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BandSchedule {
    /// `d0` at every iteration.
    Fixed,
    /// `d0` for the first half, then linear decrease to 1; every second
    /// iteration uses radius 1.
    Annealed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitConfig {
    pub iterations: usize,
    pub d0: f64,
    /// Empty disables smoothing of the reconstruction errors.
    pub smoothing_sigmas: Vec<f64>,
    pub schedule: BandSchedule,
    pub min_region: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            iterations: 16,
            d0: 4.0,
            smoothing_sigmas: vec![0.1, 1.0, 5.0, 10.0],
            schedule: BandSchedule::Annealed,
            min_region: 16,
            max_depth: 8,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("split iterations must be >= 1"));
        }
        if !(self.d0.is_finite() && self.d0 >= 1.0) {
            return Err(Error::invalid(format!("d0 must be >= 1, got {}", self.d0)));
        }
        if self.smoothing_sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("smoothing sigmas must be positive"));
        }
        Ok(())
    }

    /// Band radius used at iteration `t` (0-based).
    pub fn band_radius(&self, t: usize) -> f64 {
        match self.schedule {
            BandSchedule::Fixed => self.d0,
            BandSchedule::Annealed => {
                if t % 2 == 1 {
                    return 1.0;
                }
                let half = self.iterations / 2;
                if t < half || self.iterations <= half + 1 {
                    self.d0
                } else {
                    let span = (self.iterations - 1 - half) as f64;
                    let frac = ((t - half) as f64 / span).min(1.0);
                    self.d0 + (1.0 - self.d0) * frac
                }
            }
        }
    }

    /// The configuration under which the greedy update is a pure descent step.
    pub fn is_exact_descent(&self) -> bool {
        self.smoothing_sigmas.is_empty() && self.schedule == BandSchedule::Fixed
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    /// Split line runs vertically; `M` is the left part.
    Vertical,
    /// Split line runs horizontally; `M` is the top part.
    Horizontal,
}

impl Orientation {
    fn random(rng: &mut impl Rng) -> Self {
        if rng.random_bool(0.5) {
            Orientation::Vertical
        } else {
            Orientation::Horizontal
        }
    }

    fn flipped(self) -> Self {
        match self {
            Orientation::Vertical => Orientation::Horizontal,
            Orientation::Horizontal => Orientation::Vertical,
        }
    }
}

/// Half-plane split of a `height × width` patch; `M` gets the larger half
/// when the side length is odd. `orientation = None` draws it from `seed`.
pub fn initial_split(
    height: usize,
    width: usize,
    orientation: Option<Orientation>,
    seed: u64,
) -> Result<PixelMask> {
    if height < 2 || width < 2 {
        return Err(Error::Shape(format!("cannot split a {height}x{width} patch")));
    }
    let orientation = orientation.unwrap_or_else(|| Orientation::random(&mut rng_from_seed(seed)));
    Ok(match orientation {
        Orientation::Vertical => PixelMask::from_fn(height, width, |_, c| c < width.div_ceil(2)),
        Orientation::Horizontal => PixelMask::from_fn(height, width, |r, _| r < height.div_ceil(2)),
    })
}

/// Median split of an arbitrary region along rows or columns.
fn region_split(region: &PixelMask, orientation: Orientation) -> Option<PixelMask> {
    let (h, w) = (region.height(), region.width());
    let n = region.count();
    let key = |i: usize| match orientation {
        Orientation::Vertical => i % w,
        Orientation::Horizontal => i / w,
    };
    let mut hist = vec![0usize; if orientation == Orientation::Vertical { w } else { h }];
    for i in region.ones() {
        hist[key(i)] += 1;
    }
    let mut cum = 0;
    let mut cut = hist.len();
    for (k, &c) in hist.iter().enumerate() {
        cum += c;
        if 2 * cum >= n {
            cut = k;
            break;
        }
    }
    let mut mask = PixelMask::empty(h, w);
    for i in region.ones() {
        if key(i) <= cut {
            mask.set(i, true);
        }
    }
    let m = mask.count();
    (m > 0 && m < n).then_some(mask)
}

/// Result of one boundary evolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Evolution {
    pub mask: PixelMask,
    /// Banded measure of each accepted iterate, starting with `M0`.
    pub trace: Vec<f64>,
    /// `false` when one side was drained.
    pub split_found: bool,
}

/// Evolves `m0` over the whole image.
pub fn evolve_mask(
    model: &dyn InpaintModel,
    image: &Image,
    m0: &PixelMask,
    cfg: &SplitConfig,
) -> Result<Evolution> {
    let region = PixelMask::full(image.height(), image.width());
    evolve_in_region(model, image, &region, m0, cfg)
}

/// Smoothed score: per-side error maps plus their Gaussian blurs, differenced.
fn smoothed_scores(errors: &SideErrors, height: usize, width: usize, sigmas: &[f64]) -> Vec<f64> {
    let side = |values: &[f64]| {
        let mut grid = vec![0.0; height * width];
        for (&i, &v) in errors.band.iter().zip(values) {
            grid[i] = v;
        }
        let mut total = grid.clone();
        for &s in sigmas {
            for (t, b) in total.iter_mut().zip(gaussian_blur(&grid, height, width, s)) {
                *t += b;
            }
        }
        total
    };
    let m = side(&errors.from_mask);
    let c = side(&errors.from_complement);
    errors.band.iter().map(|&i| c[i] - m[i]).collect()
}

/// Evolves a split of `region`; pixels outside the region are observed by both sides.
///
/// Each step reassigns the band pixels to the side that reconstructs them
/// better (strict `> 0`, ties go to the complement). In the exact-descent
/// configuration (no smoothing, fixed radius) a step is only accepted when
/// the recomputed banded measure does not increase; otherwise the previous
/// iterate is returned as converged.
pub fn evolve_in_region(
    model: &dyn InpaintModel,
    image: &Image,
    region: &PixelMask,
    m0: &PixelMask,
    cfg: &SplitConfig,
) -> Result<Evolution> {
    cfg.validate()?;
    let (h, w) = (image.height(), image.width());
    if !region.same_shape(h, w) || !m0.same_shape(h, w) {
        return Err(Error::Shape("region, mask and image differ in shape".into()));
    }
    let region_size = region.count();
    let mut mask = m0.and(region);
    let m_size = mask.count();
    if m_size == 0 || m_size == region_size {
        return Err(Error::invalid("initial mask must be a non-empty proper subset of the region"));
    }
    let context = region.complement();
    let guard = cfg.is_exact_descent();
    let mut trace: Vec<f64> = Vec::with_capacity(cfg.iterations + 1);
    let mut previous: Option<PixelMask> = None;

    for t in 0..=cfg.iterations {
        let d = cfg.band_radius(t.min(cfg.iterations - 1));
        let band: Vec<usize> = band_within(region, &mask, d)?.ones().collect();
        let obs_mask = mask.or(&context);
        let obs_complement = region.minus(&mask).or(&context);
        let errors = SideErrors::compute(model, image, band, &obs_mask, &obs_complement)?;
        let rig = errors.rig();
        let value = igm_from_rig(&rig, &mask);
        if guard && trace.last().is_some_and(|&last| value > last) {
            if let Some(prev) = previous.take() {
                mask = prev;
            }
            break;
        }
        trace.push(value);
        if t == cfg.iterations {
            break;
        }

        let scores = if cfg.smoothing_sigmas.is_empty() {
            rig.values
        } else {
            smoothed_scores(&errors, h, w, &cfg.smoothing_sigmas)
        };
        let mut next = mask.clone();
        for (&i, &s) in errors.band.iter().zip(&scores) {
            next.set(i, s > 0.0);
        }
        let size = next.count();
        if size == 0 || size == region_size {
            return Ok(Evolution {
                mask: next,
                trace,
                split_found: false,
            });
        }
        if guard && next == mask {
            break;
        }
        previous = Some(std::mem::replace(&mut mask, next));
    }
    Ok(Evolution {
        mask,
        trace,
        split_found: true,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentNode {
    pub mask: PixelMask,
    pub depth: usize,
    pub children: Option<[usize; 2]>,
}

/// Binary hierarchy of regions of one patch; node 0 is the whole patch.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentTree {
    pub bounds: Rect,
    nodes: Vec<SegmentNode>,
}

impl SegmentTree {
    pub fn single_leaf(bounds: Rect) -> Self {
        Self {
            bounds,
            nodes: vec![SegmentNode {
                mask: PixelMask::full(bounds.height, bounds.width),
                depth: 0,
                children: None,
            }],
        }
    }

    /// Builds a tree from explicit nodes, checking that children partition parents.
    pub fn from_nodes(bounds: Rect, nodes: Vec<SegmentNode>) -> Result<Self> {
        let tree = Self { bounds, nodes };
        tree.check()?;
        Ok(tree)
    }

    fn check(&self) -> Result<()> {
        let root = self
            .nodes
            .first()
            .ok_or_else(|| Error::invalid("segment tree has no root"))?;
        if !root.mask.same_shape(self.bounds.height, self.bounds.width) || !root.mask.all() {
            return Err(Error::invalid("root must cover the whole patch"));
        }
        for node in &self.nodes {
            if let Some([a, b]) = node.children {
                let (ma, mb) = match (self.nodes.get(a), self.nodes.get(b)) {
                    (Some(x), Some(y)) => (&x.mask, &y.mask),
                    _ => return Err(Error::invalid("child index out of range")),
                };
                if !ma.and(mb).none() || ma.or(mb) != node.mask {
                    return Err(Error::invalid("children do not partition their parent"));
                }
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[SegmentNode] {
        &self.nodes
    }

    pub fn leaves(&self) -> impl Iterator<Item = &SegmentNode> {
        self.nodes.iter().filter(|n| n.children.is_none())
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().count()
    }

    /// Leaves flattened into labels `1..=K` in node order.
    pub fn leaf_labels(&self) -> LabelMap {
        let mut labels = LabelMap::zeros(self.bounds.height, self.bounds.width);
        for (k, leaf) in self.leaves().enumerate() {
            for i in leaf.mask.ones() {
                labels.set(i, k as u32 + 1);
            }
        }
        labels
    }
}

/// Recursively splits a patch until every region is stable, small, or deep.
pub fn hierarchical_split(
    model: &dyn InpaintModel,
    image: &Image,
    cfg: &SplitConfig,
) -> Result<SegmentTree> {
    cfg.validate()?;
    let (h, w) = (image.height(), image.width());
    let mut tree = SegmentTree::single_leaf(Rect::new(0, 0, h, w));
    let mut next = 0;
    while next < tree.nodes.len() {
        let id = next;
        next += 1;
        let node = &tree.nodes[id];
        if node.depth >= cfg.max_depth || node.mask.count() < cfg.min_region.max(2) {
            continue;
        }
        let region = node.mask.clone();
        let depth = node.depth;
        let seed = derive_seed(cfg.seed, &[id as u64]);
        let first = Orientation::random(&mut rng_from_seed(seed));
        let Some(m0) = region_split(&region, first).or_else(|| region_split(&region, first.flipped()))
        else {
            continue;
        };
        let evo = evolve_in_region(model, image, &region, &m0, cfg)?;
        if !evo.split_found {
            continue;
        }
        let a = evo.mask.and(&region);
        let b = region.minus(&a);
        let base = tree.nodes.len();
        tree.nodes[id].children = Some([base, base + 1]);
        for mask in [a, b] {
            tree.nodes.push(SegmentNode {
                mask,
                depth: depth + 1,
                children: None,
            });
        }
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LocalStatsModel;

    #[test]
    fn initial_split_examples() {
        let m = initial_split(4, 4, Some(Orientation::Vertical), 0).unwrap();
        assert_eq!(m, PixelMask::from_fn(4, 4, |_, c| c < 2));
        let m = initial_split(5, 4, Some(Orientation::Horizontal), 0).unwrap();
        assert_eq!(m, PixelMask::from_fn(5, 4, |r, _| r < 3));
        assert_eq!(
            initial_split(6, 7, None, 99).unwrap(),
            initial_split(6, 7, None, 99).unwrap()
        );
        assert!(initial_split(1, 5, None, 0).is_err());
    }

    #[test]
    fn both_orientations_occur() {
        let masks: std::collections::HashSet<_> =
            (0..32).map(|s| initial_split(4, 6, None, s).unwrap()).collect();
        assert_eq!(masks.len(), 2);
    }

    #[test]
    fn region_split_matches_rectangle_split() {
        let full = PixelMask::full(5, 7);
        assert_eq!(
            region_split(&full, Orientation::Vertical).unwrap(),
            initial_split(5, 7, Some(Orientation::Vertical), 0).unwrap()
        );
        assert_eq!(
            region_split(&full, Orientation::Horizontal).unwrap(),
            initial_split(5, 7, Some(Orientation::Horizontal), 0).unwrap()
        );
        let column = PixelMask::from_fn(5, 7, |_, c| c == 3);
        assert!(region_split(&column, Orientation::Vertical).is_none());
        assert!(region_split(&column, Orientation::Horizontal).is_some());
    }

    #[test]
    fn annealed_schedule_shape() {
        let cfg = SplitConfig {
            iterations: 10,
            d0: 5.0,
            ..SplitConfig::default()
        };
        let d: Vec<f64> = (0..10).map(|t| cfg.band_radius(t)).collect();
        assert_eq!(&d[..5], &[5.0, 1.0, 5.0, 1.0, 5.0]);
        assert_eq!(d[9], 1.0);
        assert!(d[6] < 5.0 && d[6] > 1.0 && d[8] < d[6]);
        let fixed = SplitConfig {
            schedule: BandSchedule::Fixed,
            ..cfg
        };
        assert!((0..10).all(|t| fixed.band_radius(t) == 5.0));
    }

    #[test]
    fn constant_image_is_not_split() {
        let img = Image::filled(16, 16, 0.4).unwrap();
        // the field of view must reach past the widest band into both sides
        let model = LocalStatsModel::new(3.0, 0.4, 0.05, 0.0).unwrap();
        let m0 = initial_split(16, 16, Some(Orientation::Vertical), 0).unwrap();
        let evo = evolve_mask(&model, &img, &m0, &SplitConfig::default()).unwrap();
        assert!(evo.trace[0].abs() < 1e-10);
        // all scores tie at zero, so the band keeps flowing to the complement
        assert!(!evo.split_found);
    }

    #[test]
    fn rejects_degenerate_initial_masks() {
        let img = Image::filled(6, 6, 0.4).unwrap();
        let model = LocalStatsModel::new(1.0, 0.4, 0.05, 0.0).unwrap();
        let cfg = SplitConfig::default();
        assert!(evolve_mask(&model, &img, &PixelMask::full(6, 6), &cfg).is_err());
        assert!(evolve_mask(&model, &img, &PixelMask::empty(6, 6), &cfg).is_err());
    }

    #[test]
    fn zero_depth_gives_single_leaf() {
        let img = Image::from_fn(12, 12, |r, c| if c < 6 { 0.2 } else { 0.8 } + 0.001 * r as f64).unwrap();
        let model = LocalStatsModel::new(1.0, 0.5, 0.1, 0.001).unwrap();
        let cfg = SplitConfig {
            max_depth: 0,
            ..SplitConfig::default()
        };
        let tree = hierarchical_split(&model, &img, &cfg).unwrap();
        assert_eq!(tree.leaf_count(), 1);
        assert!(tree.leaf_labels().labels().iter().all(|&l| l == 1));
    }

    #[test]
    fn tree_validation_catches_overlap() {
        let bounds = Rect::new(0, 0, 2, 2);
        let root = SegmentNode {
            mask: PixelMask::full(2, 2),
            depth: 0,
            children: Some([1, 2]),
        };
        let left = SegmentNode {
            mask: PixelMask::from_fn(2, 2, |_, c| c == 0),
            depth: 1,
            children: None,
        };
        let overlapping = SegmentNode {
            mask: PixelMask::full(2, 2),
            depth: 1,
            children: None,
        };
        assert!(SegmentTree::from_nodes(bounds, vec![root.clone(), left.clone(), overlapping]).is_err());
        let right = SegmentNode {
            mask: PixelMask::from_fn(2, 2, |_, c| c == 1),
            depth: 1,
            children: None,
        };
        let tree = SegmentTree::from_nodes(bounds, vec![root, left, right]).unwrap();
        assert_eq!(tree.leaf_labels().labels(), &[1, 2, 1, 2]);
    }
}
