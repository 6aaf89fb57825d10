//! Spatial primitives shared by every stage of the pipeline.
//!
//! All grids are stored row-major with `(row, col)` coordinates.

use crate::error::{Error, Result};

/// Row-major linear index of `(row, col)` in a grid of the given shape.
pub fn pixel_index(row: usize, col: usize, height: usize, width: usize) -> Result<usize> {
    if row >= height || col >= width {
        return Err(Error::OutOfBounds {
            row,
            col,
            height,
            width,
        });
    }
    Ok(row * width + col)
}

fn check_shape(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Shape(format!("{height}x{width} grid is empty")));
    }
    Ok(())
}

/// Axis-aligned rectangle inside an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        Self {
            top,
            left,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Grayscale intensity image with nominal range `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_shape(height, width)?;
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} intensities for a {height}x{width} image",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("intensity at index {pos}")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn crop(&self, rect: Rect) -> Result<Image> {
        if rect.top + rect.height > self.height || rect.left + rect.width > self.width {
            return Err(Error::Shape(format!(
                "crop {rect:?} exceeds {}x{} image",
                self.height, self.width
            )));
        }
        Image::from_fn(rect.height, rect.width, |r, c| {
            self.get(rect.top + r, rect.left + c)
        })
    }
}

/// Subset `M` of the pixel domain; the complement is the pointwise negation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PixelMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        check_shape(height, width)?;
        if bits.len() != height * width {
            return Err(Error::Shape(format!(
                "{} mask entries for a {height}x{width} grid",
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, idx: usize) -> bool {
        self.bits[idx]
    }

    pub fn at(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, idx: usize, value: bool) {
        self.bits[idx] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn none(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn all(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    pub fn same_shape(&self, height: usize, width: usize) -> bool {
        self.height == height && self.width == width
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn complement(&self) -> PixelMask {
        self.map(|b| !b)
    }

    pub fn and(&self, other: &PixelMask) -> PixelMask {
        self.zip(other, |a, b| a && b)
    }

    pub fn or(&self, other: &PixelMask) -> PixelMask {
        self.zip(other, |a, b| a || b)
    }

    /// Pixels in `self` but not in `other`.
    pub fn minus(&self, other: &PixelMask) -> PixelMask {
        self.zip(other, |a, b| a && !b)
    }

    fn map(&self, f: impl Fn(bool) -> bool) -> PixelMask {
        PixelMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|&b| f(b)).collect(),
        }
    }

    fn zip(&self, other: &PixelMask, f: impl Fn(bool, bool) -> bool) -> PixelMask {
        assert_eq!(
            (self.height, self.width),
            (other.height, other.width),
            "mask shapes differ"
        );
        PixelMask {
            height: self.height,
            width: self.width,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn crop(&self, rect: Rect) -> PixelMask {
        PixelMask::from_fn(rect.height, rect.width, |r, c| {
            self.at(rect.top + r, rect.left + c)
        })
    }
}

/// Flat instance labeling; 0 is background, equal positive labels form one segment.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        check_shape(height, width)?;
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "{} labels for a {height}x{width} grid",
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, idx: usize) -> u32 {
        self.labels[idx]
    }

    pub fn at(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, idx: usize, label: u32) {
        self.labels[idx] = label;
    }

    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Distinct positive labels in ascending order.
    pub fn segment_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.labels.iter().copied().filter(|&l| l > 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn segment_count(&self) -> usize {
        self.segment_ids().len()
    }

    pub fn foreground(&self) -> PixelMask {
        PixelMask {
            height: self.height,
            width: self.width,
            bits: self.labels.iter().map(|&l| l > 0).collect(),
        }
    }

    pub fn segment_mask(&self, label: u32) -> PixelMask {
        PixelMask {
            height: self.height,
            width: self.width,
            bits: self.labels.iter().map(|&l| l == label).collect(),
        }
    }

    /// Relabel positive segments to `1..=K` in first-occurrence scan order.
    pub fn densified(&self) -> LabelMap {
        let mut remap = std::collections::HashMap::new();
        let labels = self
            .labels
            .iter()
            .map(|&l| {
                if l == 0 {
                    0
                } else {
                    let next = remap.len() as u32 + 1;
                    *remap.entry(l).or_insert(next)
                }
            })
            .collect();
        LabelMap {
            height: self.height,
            width: self.width,
            labels,
        }
    }

    pub fn crop(&self, rect: Rect) -> LabelMap {
        let mut labels = Vec::with_capacity(rect.len());
        for r in 0..rect.height {
            for c in 0..rect.width {
                labels.push(self.at(rect.top + r, rect.left + c));
            }
        }
        LabelMap {
            height: rect.height,
            width: rect.width,
            labels,
        }
    }

    /// 4-connected components of a mask, labeled in scan order.
    pub fn connected_components(mask: &PixelMask) -> LabelMap {
        let (h, w) = (mask.height(), mask.width());
        let mut labels = vec![0u32; h * w];
        let mut next = 0u32;
        let mut stack = Vec::new();
        for start in 0..h * w {
            if !mask.get(start) || labels[start] != 0 {
                continue;
            }
            next += 1;
            labels[start] = next;
            stack.push(start);
            while let Some(p) = stack.pop() {
                let (r, c) = (p / w, p % w);
                let mut visit = |q: usize| {
                    if mask.get(q) && labels[q] == 0 {
                        labels[q] = next;
                        stack.push(q);
                    }
                };
                if r > 0 {
                    visit(p - w);
                }
                if r + 1 < h {
                    visit(p + w);
                }
                if c > 0 {
                    visit(p - 1);
                }
                if c + 1 < w {
                    visit(p + 1);
                }
            }
        }
        LabelMap {
            height: h,
            width: w,
            labels,
        }
    }
}

/// Edge direction between pixel `p` and `p + (dy, dx)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Offset {
    dy: i32,
    dx: i32,
}

impl Offset {
    pub fn new(dy: i32, dx: i32) -> Result<Self> {
        if dy == 0 && dx == 0 {
            return Err(Error::invalid("offset (0, 0) is not an edge"));
        }
        Ok(Self { dy, dx })
    }

    pub fn dy(&self) -> i32 {
        self.dy
    }

    pub fn dx(&self) -> i32 {
        self.dx
    }

    pub fn magnitude(&self) -> f64 {
        f64::from(self.dy).hypot(f64::from(self.dx))
    }

    /// Target pixel of the edge starting at `(row, col)`, if inside the grid.
    pub fn apply(&self, row: usize, col: usize, height: usize, width: usize) -> Option<(usize, usize)> {
        let r = row as i64 + i64::from(self.dy);
        let c = col as i64 + i64::from(self.dx);
        (r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width)
            .then_some((r as usize, c as usize))
    }
}

/// Offsets `(dy, dx)` with `dy² + dx² ≤ radius²`, including the origin.
pub fn disc_offsets(radius: f64) -> Vec<(i64, i64)> {
    let reach = radius.floor() as i64;
    let r2 = radius * radius;
    let mut out = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            if ((dy * dy + dx * dx) as f64) <= r2 {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Pixels whose radius-`d` disc contains pixels of both `mask` and its complement.
pub fn mask_boundary_band(mask: &PixelMask, d: f64) -> Result<PixelMask> {
    let domain = PixelMask::full(mask.height(), mask.width());
    band_within(&domain, mask, d)
}

/// Boundary band restricted to `domain`: the two sides are `mask ∩ domain` and
/// `domain \ mask`; pixels outside `domain` belong to neither side.
pub fn band_within(domain: &PixelMask, mask: &PixelMask, d: f64) -> Result<PixelMask> {
    if !d.is_finite() || d < 1.0 {
        return Err(Error::invalid(format!("band radius must be >= 1, got {d}")));
    }
    let (h, w) = (mask.height(), mask.width());
    if !domain.same_shape(h, w) {
        return Err(Error::Shape("band domain and mask differ in shape".into()));
    }
    let disc = disc_offsets(d);
    let mut band = PixelMask::empty(h, w);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !domain.get(i) {
                continue;
            }
            // The pixel itself covers its own side; look for the opposite one.
            let side = mask.get(i);
            let hit = disc.iter().any(|&(dy, dx)| {
                let rr = r as i64 + dy;
                let cc = c as i64 + dx;
                if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                    return false;
                }
                let j = rr as usize * w + cc as usize;
                domain.get(j) && mask.get(j) != side
            });
            band.set(i, hit);
        }
    }
    Ok(band)
}
