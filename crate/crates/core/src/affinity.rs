//! Affinities from segment trees, averaged over sliding patches.
//!
//! ## IAF1 file layout (little-endian)
//!
//! ```text
//! b"IAF1" | u32 height | u32 width | u32 n_offsets
//! n_offsets × (i32 dy, i32 dx)
//! n_offsets × (height·width f32 weights, row-major, NaN = undefined)
//! n_offsets × (height·width u32 counts, row-major)
//! ```

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Image, LabelMap, Offset, Rect};
use crate::model::InpaintModel;
use crate::numeric::derive_seed;
use crate::splitter::{hierarchical_split, SegmentTree, SplitConfig};

const MAGIC: &[u8; 4] = b"IAF1";

/// Attractive and repulsive edge offsets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AffinityNeighborhood {
    pub attractive: Vec<Offset>,
    pub repulsive: Vec<Offset>,
}

impl Default for AffinityNeighborhood {
    fn default() -> Self {
        let off = |dy, dx| Offset::new(dy, dx).expect("non-zero offset");
        Self {
            attractive: vec![off(-1, 0), off(0, -1)],
            repulsive: vec![
                off(-9, 0),
                off(0, -9),
                off(-9, -9),
                off(9, -9),
                off(-9, -4),
                off(-4, -9),
                off(4, -9),
                off(9, -4),
                off(-27, 0),
                off(0, -27),
            ],
        }
    }
}

impl AffinityNeighborhood {
    /// All offsets, attractive first.
    pub fn offsets(&self) -> Vec<Offset> {
        self.attractive.iter().chain(&self.repulsive).copied().collect()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.offsets()
            .iter()
            .map(Offset::magnitude)
            .fold(0.0, f64::max)
    }

    pub fn is_attractive(&self, offset: &Offset) -> bool {
        self.attractive.contains(offset)
    }
}

/// Binary same-leaf indicators for one patch, per offset.
///
/// Entry `p` of offset `k` describes the edge `p → p + offset_k`; `None` when
/// the target lies outside the patch.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchAffinities {
    pub bounds: Rect,
    pub offsets: Vec<Offset>,
    pub grids: Vec<Vec<Option<bool>>>,
}

pub fn patch_affinities(tree: &SegmentTree, nbhd: &AffinityNeighborhood) -> PatchAffinities {
    labels_affinities(&tree.leaf_labels(), tree.bounds, nbhd)
}

fn labels_affinities(labels: &LabelMap, bounds: Rect, nbhd: &AffinityNeighborhood) -> PatchAffinities {
    let (h, w) = (labels.height(), labels.width());
    let offsets = nbhd.offsets();
    let grids = offsets
        .iter()
        .map(|off| {
            let mut grid = Vec::with_capacity(h * w);
            for r in 0..h {
                for c in 0..w {
                    grid.push(
                        off.apply(r, c, h, w)
                            .map(|(rr, cc)| labels.at(r, c) == labels.at(rr, cc)),
                    );
                }
            }
            grid
        })
        .collect();
    PatchAffinities {
        bounds,
        offsets,
        grids,
    }
}

/// Averaged affinities over a full image.
///
/// Stores integer numerators and contribution counts, so weights are exact
/// quotients regardless of accumulation order.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityField {
    height: usize,
    width: usize,
    offsets: Vec<Offset>,
    sums: Vec<Vec<u32>>,
    counts: Vec<Vec<u32>>,
}

impl AffinityField {
    pub fn new(height: usize, width: usize, offsets: Vec<Offset>) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            sums: vec![vec![0; n]; offsets.len()],
            counts: vec![vec![0; n]; offsets.len()],
            offsets,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn offsets(&self) -> &[Offset] {
        &self.offsets
    }

    pub fn count(&self, k: usize, idx: usize) -> u32 {
        self.counts[k][idx]
    }

    pub fn sum(&self, k: usize, idx: usize) -> u32 {
        self.sums[k][idx]
    }

    /// Mean affinity of edge `idx → idx + offset_k`, if any patch covered it.
    pub fn weight(&self, k: usize, idx: usize) -> Option<f64> {
        let c = self.counts[k][idx];
        (c > 0).then(|| f64::from(self.sums[k][idx]) / f64::from(c))
    }

    pub fn accumulate(&mut self, patch: &PatchAffinities) -> Result<()> {
        if patch.offsets != self.offsets {
            return Err(Error::invalid("patch offsets differ from the field"));
        }
        let b = patch.bounds;
        if b.top + b.height > self.height || b.left + b.width > self.width {
            return Err(Error::Shape(format!("patch {b:?} outside field")));
        }
        for (k, grid) in patch.grids.iter().enumerate() {
            for r in 0..b.height {
                for c in 0..b.width {
                    if let Some(same) = grid[r * b.width + c] {
                        let idx = (b.top + r) * self.width + b.left + c;
                        self.counts[k][idx] += 1;
                        self.sums[k][idx] += u32::from(same);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.height * self.width;
        let k = self.offsets.len();
        let mut out = Vec::with_capacity(16 + 8 * k + 8 * k * n);
        out.extend_from_slice(MAGIC);
        for v in [self.height as u32, self.width as u32, k as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for off in &self.offsets {
            out.extend_from_slice(&off.dy().to_le_bytes());
            out.extend_from_slice(&off.dx().to_le_bytes());
        }
        for kk in 0..k {
            for idx in 0..n {
                let w = self.weight(kk, idx).map_or(f32::NAN, |v| v as f32);
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        for counts in &self.counts {
            for &c in counts {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::format("IAF1", m);
        if data.len() < 16 || &data[..4] != MAGIC {
            return Err(bad("missing IAF1 magic"));
        }
        let word = |pos: usize| -> [u8; 4] { data[pos..pos + 4].try_into().expect("4 bytes") };
        let height = u32::from_le_bytes(word(4)) as usize;
        let width = u32::from_le_bytes(word(8)) as usize;
        let k = u32::from_le_bytes(word(12)) as usize;
        let n = height
            .checked_mul(width)
            .ok_or_else(|| bad("dimensions overflow"))?;
        let expected = 16 + 8 * k + 8 * k * n;
        if height == 0 || width == 0 || data.len() != expected {
            return Err(bad(&format!(
                "expected {expected} bytes for {height}x{width}x{k}, got {}",
                data.len()
            )));
        }
        let mut pos = 16;
        let mut offsets = Vec::with_capacity(k);
        for _ in 0..k {
            let dy = i32::from_le_bytes(word(pos));
            let dx = i32::from_le_bytes(word(pos + 4));
            offsets.push(Offset::new(dy, dx)?);
            pos += 8;
        }
        let mut weights = vec![vec![0f32; n]; k];
        for grid in weights.iter_mut() {
            for w in grid.iter_mut() {
                *w = f32::from_le_bytes(word(pos));
                pos += 4;
            }
        }
        let mut counts = vec![vec![0u32; n]; k];
        for grid in counts.iter_mut() {
            for c in grid.iter_mut() {
                *c = u32::from_le_bytes(word(pos));
                pos += 4;
            }
        }
        let mut sums = vec![vec![0u32; n]; k];
        for kk in 0..k {
            for idx in 0..n {
                let (w, c) = (weights[kk][idx], counts[kk][idx]);
                if c == 0 {
                    if !w.is_nan() {
                        return Err(bad("defined weight with zero count"));
                    }
                    continue;
                }
                if !(0.0..=1.0).contains(&w) {
                    return Err(bad("weight outside [0, 1]"));
                }
                sums[kk][idx] = (f64::from(w) * f64::from(c)).round() as u32;
            }
        }
        Ok(Self {
            height,
            width,
            offsets,
            sums,
            counts,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::with_path(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::with_path(path, e))?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub patch_size: usize,
    pub stride: usize,
    pub split: SplitConfig,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            patch_size: 48,
            stride: 24,
            split: SplitConfig::default(),
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self, nbhd: &AffinityNeighborhood) -> Result<()> {
        if self.stride == 0 || self.stride > self.patch_size {
            return Err(Error::invalid(format!(
                "stride {} must be in 1..={}",
                self.stride, self.patch_size
            )));
        }
        if (self.patch_size as f64) <= nbhd.max_magnitude() {
            return Err(Error::invalid(format!(
                "offset exceeds patch: patch_size {} must exceed the largest offset {}",
                self.patch_size,
                nbhd.max_magnitude()
            )));
        }
        self.split.validate()
    }
}

/// Patch origins along one axis; the last patch is clamped to the edge.
pub fn patch_starts(length: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..=length - patch).step_by(stride).collect();
    if starts.last() != Some(&(length - patch)) {
        starts.push(length - patch);
    }
    starts
}

/// Patch rectangles in row-major order with their grid coordinates.
pub fn patch_grid(height: usize, width: usize, cfg: &SweepConfig) -> Vec<(usize, usize, Rect)> {
    let rows = patch_starts(height, cfg.patch_size, cfg.stride);
    let cols = patch_starts(width, cfg.patch_size, cfg.stride);
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for (pr, &top) in rows.iter().enumerate() {
        for (pc, &left) in cols.iter().enumerate() {
            out.push((pr, pc, Rect::new(top, left, cfg.patch_size, cfg.patch_size)));
        }
    }
    out
}

/// Segment one patch with its coordinate-derived seed.
pub fn patch_tree(
    image: &Image,
    model: &dyn InpaintModel,
    cfg: &SweepConfig,
    pr: usize,
    pc: usize,
    rect: Rect,
) -> Result<SegmentTree> {
    let patch = image.crop(rect)?;
    let local = model.crop(rect)?;
    let split = SplitConfig {
        seed: derive_seed(cfg.seed, &[pr as u64, pc as u64]),
        ..cfg.split.clone()
    };
    let mut tree = hierarchical_split(local.as_ref(), &patch, &split)?;
    tree.bounds = rect;
    Ok(tree)
}

/// Sliding-window affinity estimation.
///
/// Patches are independent and may run on `workers` threads; each patch's
/// seed depends only on the global seed and the patch coordinates, and
/// accumulation is order-independent, so the field is identical for any
/// worker count.
pub fn sweep(
    image: &Image,
    model: &dyn InpaintModel,
    cfg: &SweepConfig,
    nbhd: &AffinityNeighborhood,
    workers: usize,
) -> Result<AffinityField> {
    cfg.validate(nbhd)?;
    if image.height() < cfg.patch_size || image.width() < cfg.patch_size {
        return Err(Error::Shape(format!(
            "{}x{} image is smaller than patch size {}",
            image.height(),
            image.width(),
            cfg.patch_size
        )));
    }
    let patches = patch_grid(image.height(), image.width(), cfg);
    let run = || -> Result<Vec<PatchAffinities>> {
        patches
            .par_iter()
            .map(|&(pr, pc, rect)| {
                let tree = patch_tree(image, model, cfg, pr, pc, rect)?;
                Ok(patch_affinities(&tree, nbhd))
            })
            .collect()
    };
    let results = if workers <= 1 {
        patches
            .iter()
            .map(|&(pr, pc, rect)| {
                let tree = patch_tree(image, model, cfg, pr, pc, rect)?;
                Ok(patch_affinities(&tree, nbhd))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(run)?
    };
    let mut field = AffinityField::new(image.height(), image.width(), nbhd.offsets());
    for patch in &results {
        field.accumulate(patch)?;
    }
    Ok(field)
}
