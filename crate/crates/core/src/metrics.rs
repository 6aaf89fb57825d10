//! SEG score and detection accuracy.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::LabelMap;

/// Default IoU thresholds for detection accuracy: 0.5 to 0.9 in steps of 0.1.
pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MetricOptions {
    /// Ground truth is only partially labelled: predicted pixels on GT
    /// background do not count towards IoU denominators.
    pub sparse_gt: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentMatch {
    pub gt_label: u32,
    pub gt_size: usize,
    pub pred_label: Option<u32>,
    pub overlap: usize,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchTable {
    pub matches: Vec<SegmentMatch>,
}

impl MatchTable {
    /// A GT segment `R` is matched by the predicted `S` with `|R ∩ S| > |R| / 2`.
    pub fn compute(gt: &LabelMap, pred: &LabelMap, opts: MetricOptions) -> Result<Self> {
        if gt.height() != pred.height() || gt.width() != pred.width() {
            return Err(Error::Shape(format!(
                "ground truth {}x{} vs prediction {}x{}",
                gt.height(),
                gt.width(),
                pred.height(),
                pred.width()
            )));
        }
        let mut gt_size: BTreeMap<u32, usize> = BTreeMap::new();
        let mut pred_size: HashMap<u32, usize> = HashMap::new();
        let mut overlap: HashMap<(u32, u32), usize> = HashMap::new();
        for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
            if g > 0 {
                *gt_size.entry(g).or_default() += 1;
            }
            if p > 0 && (g > 0 || !opts.sparse_gt) {
                *pred_size.entry(p).or_default() += 1;
            }
            if g > 0 && p > 0 {
                *overlap.entry((g, p)).or_default() += 1;
            }
        }
        if gt_size.is_empty() {
            return Err(Error::invalid("ground truth has no segments"));
        }
        let mut best: HashMap<u32, (u32, usize)> = HashMap::new();
        for (&(g, p), &n) in &overlap {
            if 2 * n > gt_size[&g] {
                let prev = best.insert(g, (p, n));
                debug_assert!(prev.is_none(), "two majority covers of one segment");
            }
        }
        let matches = gt_size
            .iter()
            .map(|(&g, &size)| match best.get(&g) {
                Some(&(p, n)) => SegmentMatch {
                    gt_label: g,
                    gt_size: size,
                    pred_label: Some(p),
                    overlap: n,
                    iou: n as f64 / (size + pred_size[&p] - n) as f64,
                },
                None => SegmentMatch {
                    gt_label: g,
                    gt_size: size,
                    pred_label: None,
                    overlap: 0,
                    iou: 0.0,
                },
            })
            .collect();
        Ok(Self { matches })
    }

    pub fn seg(&self) -> f64 {
        self.matches.iter().map(|m| m.iou).sum::<f64>() / self.matches.len() as f64
    }

    pub fn detection(&self, thresholds: &[f64]) -> Result<Vec<f64>> {
        check_thresholds(thresholds)?;
        let n = self.matches.len() as f64;
        Ok(thresholds
            .iter()
            .map(|&t| {
                self.matches
                    .iter()
                    .filter(|m| m.pred_label.is_some() && m.iou >= t)
                    .count() as f64
                    / n
            })
            .collect())
    }
}

fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    match thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        Some(t) => Err(Error::invalid(format!("IoU threshold {t} outside (0, 1]"))),
        None => Ok(()),
    }
}

pub fn seg_score(gt: &LabelMap, pred: &LabelMap) -> Result<f64> {
    Ok(MatchTable::compute(gt, pred, MetricOptions::default())?.seg())
}

pub fn detection_accuracy(gt: &LabelMap, pred: &LabelMap, thresholds: &[f64]) -> Result<Vec<f64>> {
    MatchTable::compute(gt, pred, MetricOptions::default())?.detection(thresholds)
}

/// One line of a metric report.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub alpha: Option<f64>,
    pub seg: f64,
    pub detection: Vec<f64>,
}

impl MetricRow {
    /// Averages SEG and detection over image pairs.
    pub fn from_tables(
        method: impl Into<String>,
        alpha: Option<f64>,
        tables: &[MatchTable],
        thresholds: &[f64],
    ) -> Result<Self> {
        if tables.is_empty() {
            return Err(Error::invalid("no images to evaluate"));
        }
        let n = tables.len() as f64;
        let mut detection = vec![0.0; thresholds.len()];
        let mut seg = 0.0;
        for t in tables {
            seg += t.seg();
            for (acc, d) in detection.iter_mut().zip(t.detection(thresholds)?) {
                *acc += d;
            }
        }
        detection.iter_mut().for_each(|d| *d /= n);
        Ok(Self {
            method: method.into(),
            alpha,
            seg: seg / n,
            detection,
        })
    }
}

fn alpha_text(alpha: Option<f64>) -> String {
    alpha.map_or_else(String::new, |a| format!("{a}"))
}

/// Machine-readable report: `method,alpha,seg_score,det@τ...`.
pub fn csv_report(thresholds: &[f64], rows: &[MetricRow]) -> String {
    let mut out = String::from("method,alpha,seg_score");
    for t in thresholds {
        let _ = write!(out, ",det@{t}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{:.6}", r.method, alpha_text(r.alpha), r.seg);
        for d in &r.detection {
            let _ = write!(out, ",{d:.6}");
        }
        out.push('\n');
    }
    out
}

/// Human-readable fixed-width table of the same data.
pub fn table_report(thresholds: &[f64], rows: &[MetricRow]) -> String {
    let mut out = format!("{:<24} {:>8} {:>9}", "method", "alpha", "SEG");
    for t in thresholds {
        let _ = write!(out, " {:>8}", format!("det@{t}"));
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{:<24} {:>8} {:>9.4}", r.method, alpha_text(r.alpha), r.seg);
        for d in &r.detection {
            let _ = write!(out, " {d:>8.4}");
        }
        out.push('\n');
    }
    out
}
