//! Mutex Watershed clustering of an affinity field.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use crate::affinity::{AffinityField, AffinityNeighborhood};
use crate::error::{Error, Result};
use crate::grid::{LabelMap, PixelMask};

#[derive(Clone, Debug, PartialEq)]
pub struct MwsConfig {
    pub alpha: f64,
    pub foreground: Option<PixelMask>,
    /// Segments smaller than this are merged into a neighbour (0 disables).
    pub min_segment: usize,
}

impl Default for MwsConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            foreground: None,
            min_segment: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    Attractive,
    Mutex,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
    pub kind: EdgeKind,
}

/// Processing order: weight descending, then attractive before mutex, then `(u, v)`.
pub fn edge_order(a: &Edge, b: &Edge) -> Ordering {
    b.weight
        .total_cmp(&a.weight)
        .then(a.kind.cmp(&b.kind))
        .then((a.u, a.v).cmp(&(b.u, b.v)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeList {
    pub height: usize,
    pub width: usize,
    pub foreground: Option<PixelMask>,
    pub edges: Vec<Edge>,
}

/// Graph edges of an affinity field: attractive weight `aff`, mutex weight `α(1 − aff)`.
///
/// Undefined entries are skipped, and with a foreground mask so is every
/// edge with an endpoint outside it.
pub fn build_edges(
    field: &AffinityField,
    cfg: &MwsConfig,
    nbhd: &AffinityNeighborhood,
) -> Result<EdgeList> {
    if field.offsets() != nbhd.offsets().as_slice() {
        return Err(Error::invalid("affinity offsets do not match the neighbourhood"));
    }
    if !(cfg.alpha.is_finite() && cfg.alpha >= 0.0) {
        return Err(Error::invalid(format!("alpha must be finite and >= 0, got {}", cfg.alpha)));
    }
    let (h, w) = (field.height(), field.width());
    if let Some(fg) = &cfg.foreground {
        if !fg.same_shape(h, w) {
            return Err(Error::Shape(format!(
                "foreground {}x{} vs affinity field {h}x{w}",
                fg.height(),
                fg.width()
            )));
        }
    }
    let inside = |i: usize| cfg.foreground.as_ref().is_none_or(|fg| fg.get(i));
    let mut edges = Vec::new();
    for (k, off) in field.offsets().iter().enumerate() {
        let attractive = nbhd.is_attractive(off);
        for r in 0..h {
            for c in 0..w {
                let p = r * w + c;
                let Some(aff) = field.weight(k, p) else {
                    continue;
                };
                let Some((rr, cc)) = off.apply(r, c, h, w) else {
                    continue;
                };
                let q = rr * w + cc;
                if !(inside(p) && inside(q)) {
                    continue;
                }
                let (weight, kind) = if attractive {
                    (aff, EdgeKind::Attractive)
                } else {
                    (cfg.alpha * (1.0 - aff), EdgeKind::Mutex)
                };
                edges.push(Edge {
                    u: p.min(q),
                    v: p.max(q),
                    weight,
                    kind,
                });
            }
        }
    }
    Ok(EdgeList {
        height: h,
        width: w,
        foreground: cfg.foreground.clone(),
        edges,
    })
}

/// Union-find whose roots carry the set of roots they must never join.
struct MutexForest {
    parent: Vec<usize>,
    size: Vec<usize>,
    mutexes: Vec<HashSet<usize>>,
}

impl MutexForest {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
            mutexes: vec![HashSet::new(); n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn constrained(&self, a: usize, b: usize) -> bool {
        let (small, other) = if self.mutexes[a].len() <= self.mutexes[b].len() {
            (a, b)
        } else {
            (b, a)
        };
        self.mutexes[small].contains(&other)
    }

    fn add_mutex(&mut self, a: usize, b: usize) {
        self.mutexes[a].insert(b);
        self.mutexes[b].insert(a);
    }

    fn merge(&mut self, a: usize, b: usize) {
        let (big, small) = if self.size[a] >= self.size[b] { (a, b) } else { (b, a) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        let moved = std::mem::take(&mut self.mutexes[small]);
        for m in moved {
            self.mutexes[m].remove(&small);
            self.mutexes[m].insert(big);
            self.mutexes[big].insert(m);
        }
    }
}

/// Clusters `n_nodes` nodes; returns labels `1..=K` in first-occurrence node order.
pub fn mutex_watershed_clusters(n_nodes: usize, edges: &[Edge]) -> Result<Vec<u32>> {
    if let Some(e) = edges.iter().find(|e| !e.weight.is_finite()) {
        return Err(Error::NonFinite(format!("edge ({}, {}) weight", e.u, e.v)));
    }
    if let Some(e) = edges.iter().find(|e| e.u >= n_nodes || e.v >= n_nodes) {
        return Err(Error::invalid(format!("edge ({}, {}) outside {n_nodes} nodes", e.u, e.v)));
    }
    let mut order: Vec<&Edge> = edges.iter().collect();
    order.sort_by(|a, b| edge_order(a, b));
    let mut forest = MutexForest::new(n_nodes);
    for e in order {
        if e.weight <= 0.0 {
            break;
        }
        let (a, b) = (forest.find(e.u), forest.find(e.v));
        if a == b {
            continue;
        }
        match e.kind {
            EdgeKind::Attractive => {
                if !forest.constrained(a, b) {
                    forest.merge(a, b);
                }
            }
            EdgeKind::Mutex => forest.add_mutex(a, b),
        }
    }
    let mut remap = BTreeMap::new();
    Ok((0..n_nodes)
        .map(|i| {
            let root = forest.find(i);
            let next = remap.len() as u32 + 1;
            *remap.entry(root).or_insert(next)
        })
        .collect())
}

/// Segments the pixel graph; pixels outside the foreground get label 0.
pub fn mutex_watershed(edges: &EdgeList) -> Result<LabelMap> {
    let clusters = mutex_watershed_clusters(edges.height * edges.width, &edges.edges)?;
    let mut labels = LabelMap::new(edges.height, edges.width, clusters)?;
    if let Some(fg) = &edges.foreground {
        labels = apply_foreground(&labels, fg)?;
    }
    Ok(labels.densified())
}

/// Zeroes labels outside `fg` and re-densifies the rest to `1..=K`.
pub fn apply_foreground(labels: &LabelMap, fg: &PixelMask) -> Result<LabelMap> {
    if !fg.same_shape(labels.height(), labels.width()) {
        return Err(Error::Shape("foreground and label map differ in shape".into()));
    }
    let mut out = labels.clone();
    for i in 0..out.len() {
        if !fg.get(i) {
            out.set(i, 0);
        }
    }
    Ok(out.densified())
}

/// Merges segments below `min_size` pixels into the adjacent segment with the
/// highest mean attractive affinity, smallest segments first.
pub fn merge_small_segments(
    labels: &LabelMap,
    field: &AffinityField,
    nbhd: &AffinityNeighborhood,
    min_size: usize,
) -> Result<LabelMap> {
    if min_size == 0 {
        return Ok(labels.clone());
    }
    if labels.height() != field.height() || labels.width() != field.width() {
        return Err(Error::Shape("label map and affinity field differ in shape".into()));
    }
    let (h, w) = (labels.height(), labels.width());
    let mut out = labels.clone();
    let attractive: Vec<usize> = field
        .offsets()
        .iter()
        .enumerate()
        .filter_map(|(k, o)| nbhd.is_attractive(o).then_some(k))
        .collect();
    let mut stuck: HashSet<u32> = HashSet::new();
    loop {
        let mut sizes: BTreeMap<u32, usize> = BTreeMap::new();
        for &l in out.labels() {
            if l > 0 {
                *sizes.entry(l).or_default() += 1;
            }
        }
        let Some((&small, _)) = sizes
            .iter()
            .filter(|(l, &s)| s < min_size && !stuck.contains(l))
            .min_by_key(|(&l, &s)| (s, l))
        else {
            break;
        };
        // (sum, count) of attractive affinities to each neighbouring segment
        let mut contact: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
        for &k in &attractive {
            let off = field.offsets()[k];
            for r in 0..h {
                for c in 0..w {
                    let p = r * w + c;
                    let Some((rr, cc)) = off.apply(r, c, h, w) else {
                        continue;
                    };
                    let q = rr * w + cc;
                    let (lp, lq) = (out.get(p), out.get(q));
                    let other = if lp == small && lq != small && lq > 0 {
                        lq
                    } else if lq == small && lp != small && lp > 0 {
                        lp
                    } else {
                        continue;
                    };
                    if let Some(a) = field.weight(k, p) {
                        let entry = contact.entry(other).or_default();
                        entry.0 += a;
                        entry.1 += 1;
                    }
                }
            }
        }
        let best = contact
            .iter()
            .map(|(&l, &(s, n))| (l, s / n as f64))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        match best {
            Some((target, _)) => {
                for i in 0..out.len() {
                    if out.get(i) == small {
                        out.set(i, target);
                    }
                }
            }
            None => {
                stuck.insert(small);
            }
        }
    }
    Ok(out.densified())
}

/// Full segmentation of a field: edges, Mutex Watershed, optional size filter.
pub fn segment(field: &AffinityField, cfg: &MwsConfig, nbhd: &AffinityNeighborhood) -> Result<LabelMap> {
    let edges = build_edges(field, cfg, nbhd)?;
    let labels = mutex_watershed(&edges)?;
    let labels = merge_small_segments(&labels, field, nbhd, cfg.min_segment)?;
    match &cfg.foreground {
        Some(fg) => apply_foreground(&labels, fg),
        None => Ok(labels),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affinity::PatchAffinities;
    use crate::grid::Rect;

    fn edge(u: usize, v: usize, weight: f64, kind: EdgeKind) -> Edge {
        Edge { u, v, weight, kind }
    }

    #[test]
    fn chain_with_strong_mutex_splits() {
        let edges = [
            edge(0, 1, 0.9, EdgeKind::Attractive),
            edge(1, 2, 0.8, EdgeKind::Attractive),
            edge(0, 2, 0.95, EdgeKind::Mutex),
        ];
        assert_eq!(mutex_watershed_clusters(3, &edges).unwrap(), vec![1, 1, 2]);
    }

    #[test]
    fn without_mutexes_components_merge() {
        let edges = [
            edge(0, 1, 0.3, EdgeKind::Attractive),
            edge(2, 3, 0.1, EdgeKind::Attractive),
            edge(3, 4, 0.0, EdgeKind::Attractive),
        ];
        assert_eq!(mutex_watershed_clusters(5, &edges).unwrap(), vec![1, 1, 2, 2, 3]);
    }

    #[test]
    fn ties_put_attractive_first() {
        let edges = [
            edge(0, 1, 0.5, EdgeKind::Mutex),
            edge(0, 1, 0.5, EdgeKind::Attractive),
        ];
        assert_eq!(mutex_watershed_clusters(2, &edges).unwrap(), vec![1, 1]);
    }

    #[test]
    fn rejects_non_finite_weights() {
        let edges = [edge(0, 1, f64::NAN, EdgeKind::Attractive)];
        assert!(mutex_watershed_clusters(2, &edges).is_err());
    }

    fn uniform_field(h: usize, w: usize, value: bool) -> AffinityField {
        let n = AffinityNeighborhood::default();
        let mut field = AffinityField::new(h, w, n.offsets());
        let offsets = n.offsets();
        let grids = offsets
            .iter()
            .map(|o| {
                (0..h * w)
                    .map(|i| o.apply(i / w, i % w, h, w).map(|_| value))
                    .collect()
            })
            .collect();
        field
            .accumulate(&PatchAffinities {
                bounds: Rect::new(0, 0, h, w),
                offsets,
                grids,
            })
            .unwrap();
        field
    }

    #[test]
    fn two_by_two_field_has_four_attractive_edges() {
        let field = uniform_field(2, 2, true);
        let edges = build_edges(&field, &MwsConfig::default(), &AffinityNeighborhood::default()).unwrap();
        assert_eq!(edges.edges.len(), 4);
        assert!(edges.edges.iter().all(|e| e.kind == EdgeKind::Attractive && e.weight == 1.0));
        let labels = mutex_watershed(&edges).unwrap();
        assert_eq!(labels.labels(), &[1, 1, 1, 1]);
    }

    #[test]
    fn zero_alpha_zeroes_mutex_weights() {
        let field = uniform_field(12, 12, false);
        let cfg = MwsConfig {
            alpha: 0.0,
            ..MwsConfig::default()
        };
        let edges = build_edges(&field, &cfg, &AffinityNeighborhood::default()).unwrap();
        let mutex: Vec<_> = edges.edges.iter().filter(|e| e.kind == EdgeKind::Mutex).collect();
        assert!(!mutex.is_empty());
        assert!(mutex.iter().all(|e| e.weight == 0.0));
    }

    #[test]
    fn foreground_drops_outside_edges() {
        let field = uniform_field(10, 10, true);
        let fg = PixelMask::from_fn(10, 10, |_, c| c < 5);
        let cfg = MwsConfig {
            foreground: Some(fg.clone()),
            ..MwsConfig::default()
        };
        let nbhd = AffinityNeighborhood::default();
        let edges = build_edges(&field, &cfg, &nbhd).unwrap();
        let mut expect = 0;
        for o in nbhd.offsets() {
            for r in 0..10 {
                for c in 0..10 {
                    if let Some((rr, cc)) = o.apply(r, c, 10, 10) {
                        if fg.at(r, c) && fg.at(rr, cc) {
                            expect += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(edges.edges.len(), expect);
        let labels = mutex_watershed(&edges).unwrap();
        assert!((0..100).all(|i| (labels.get(i) == 0) == !fg.get(i)));
    }

    #[test]
    fn offset_mismatch_is_rejected() {
        let field = AffinityField::new(3, 3, vec![crate::grid::Offset::new(0, 1).unwrap()]);
        assert!(build_edges(&field, &MwsConfig::default(), &AffinityNeighborhood::default()).is_err());
    }

    #[test]
    fn foreground_examples() {
        let labels = LabelMap::new(2, 3, vec![4, 4, 9, 4, 9, 9]).unwrap();
        let all = apply_foreground(&labels, &PixelMask::full(2, 3)).unwrap();
        assert_eq!(all.labels(), &[1, 1, 2, 1, 2, 2]);
        let none = apply_foreground(&labels, &PixelMask::empty(2, 3)).unwrap();
        assert!(none.labels().iter().all(|&l| l == 0));
        let half = apply_foreground(&labels, &PixelMask::from_fn(2, 3, |_, c| c >= 1)).unwrap();
        assert_eq!(half.labels(), &[0, 1, 2, 0, 2, 2]);
    }

    #[test]
    fn small_segments_join_best_neighbour() {
        let field = uniform_field(1, 6, true);
        let labels = LabelMap::new(1, 6, vec![1, 1, 1, 2, 3, 3]).unwrap();
        let merged = merge_small_segments(&labels, &field, &AffinityNeighborhood::default(), 2).unwrap();
        // segment 2 touches 1 and 3 with equal affinity; the lower label wins
        assert_eq!(merged.labels(), &[1, 1, 1, 1, 2, 2]);
    }
}
