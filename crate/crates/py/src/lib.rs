//! Python bindings: images, label maps, inpainting models, the affinity
//! sweep, Mutex Watershed segmentation and the evaluation metrics.

use std::sync::Arc;

use igmseg_core::affinity::{self, AffinityNeighborhood, SweepConfig};
use igmseg_core::model::{self, InpaintModel, PixelDistribution};
use igmseg_core::mws::{self, MwsConfig};
use igmseg_core::{igm, metrics, pgm, synth};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: igmseg_core::Error) -> PyErr {
    match e {
        igmseg_core::Error::File { .. } | igmseg_core::Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn flatten<T: Copy>(rows: Vec<Vec<T>>) -> PyResult<(usize, usize, Vec<T>)> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("rows must have equal length"));
    }
    Ok((h, w, rows.into_iter().flatten().collect()))
}

fn nest<T: Copy>(data: &[T], width: usize) -> Vec<Vec<T>> {
    data.chunks(width.max(1)).map(<[T]>::to_vec).collect()
}

#[pyclass(name = "Image", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyImage(igmseg_core::Image);

#[pymethods]
impl PyImage {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let (h, w, data) = flatten(rows)?;
        igmseg_core::Image::new(h, w, data).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        pgm::read_image(path).map(Self).map_err(to_py)
    }

    fn write(&self, path: &str) -> PyResult<()> {
        pgm::write_image(path, &self.0).map_err(to_py)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.height(), self.0.width())
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        nest(self.0.data(), self.0.width())
    }
}

#[pyclass(name = "LabelMap", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyLabelMap(igmseg_core::LabelMap);

#[pymethods]
impl PyLabelMap {
    #[new]
    fn new(rows: Vec<Vec<u32>>) -> PyResult<Self> {
        let (h, w, data) = flatten(rows)?;
        igmseg_core::LabelMap::new(h, w, data).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        pgm::read_labels(path).map(Self).map_err(to_py)
    }

    fn write(&self, path: &str) -> PyResult<()> {
        pgm::write_labels(path, &self.0).map_err(to_py)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.height(), self.0.width())
    }

    fn segment_count(&self) -> usize {
        self.0.segment_count()
    }

    fn to_list(&self) -> Vec<Vec<u32>> {
        nest(self.0.labels(), self.0.width())
    }
}

/// Any inpainting model: local statistics or the synthetic oracle.
#[pyclass(name = "Model", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModel(Arc<dyn InpaintModel>);

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        model::load_model(path).map(|m| Self(Arc::from(m))).map_err(to_py)
    }

    #[staticmethod]
    fn local_stats(bandwidth: f64, prior_mean: f64, prior_variance: f64, residual_variance: f64) -> PyResult<Self> {
        model::LocalStatsModel::new(bandwidth, prior_mean, prior_variance, residual_variance)
            .map(|m| Self(Arc::new(m)))
            .map_err(to_py)
    }

    #[getter]
    fn fov_radius(&self) -> f64 {
        self.0.fov_radius()
    }

    /// `(mean, variance)` for each target `(row, col)` given the observed mask.
    fn predict(&self, image: &PyImage, observed: Vec<Vec<bool>>, targets: Vec<(usize, usize)>) -> PyResult<Vec<(f64, f64)>> {
        let mask = mask_from_rows(observed)?;
        let w = image.0.width();
        let idx: Vec<usize> = targets.iter().map(|&(r, c)| r * w + c).collect();
        let preds = self.0.predict(&image.0, &mask, &idx).map_err(to_py)?;
        Ok(preds.iter().map(|p| (p.mean, p.variance)).collect())
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

fn mask_from_rows(rows: Vec<Vec<bool>>) -> PyResult<igmseg_core::PixelMask> {
    let (h, w, bits) = flatten(rows)?;
    igmseg_core::PixelMask::new(h, w, bits).map_err(to_py)
}

#[pyclass(name = "AffinityField", frozen)]
struct PyAffinityField(affinity::AffinityField);

#[pymethods]
impl PyAffinityField {
    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        affinity::AffinityField::read(path).map(Self).map_err(to_py)
    }

    fn write(&self, path: &str) -> PyResult<()> {
        self.0.write(path).map_err(to_py)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.height(), self.0.width())
    }

    #[getter]
    fn offsets(&self) -> Vec<(i32, i32)> {
        self.0.offsets().iter().map(|o| (o.dy(), o.dx())).collect()
    }

    /// Mean affinity for offset `k` at `(row, col)`, or `None` where undefined.
    fn weight(&self, k: usize, row: usize, col: usize) -> PyResult<Option<f64>> {
        if k >= self.0.offsets().len() || row >= self.0.height() || col >= self.0.width() {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.0.weight(k, row * self.0.width() + col))
    }
}

/// Synthetic image, ground truth and the matching oracle model.
#[pyfunction]
#[pyo3(signature = (seed=0, height=96, width=96, min_instances=3, max_instances=5, touch_prob=1.0))]
fn generate(
    seed: u64,
    height: usize,
    width: usize,
    min_instances: usize,
    max_instances: usize,
    touch_prob: f64,
) -> PyResult<(PyImage, PyLabelMap, PyModel)> {
    let cfg = synth::GenConfig {
        height,
        width,
        instances: (min_instances, max_instances),
        touch_prob,
        seed,
        ..synth::GenConfig::default()
    };
    let s = synth::generate(&cfg).map_err(to_py)?;
    Ok((PyImage(s.image), PyLabelMap(s.labels), PyModel(Arc::new(s.oracle))))
}

#[pyfunction]
fn kl_gaussian(mean_p: f64, var_p: f64, mean_q: f64, var_q: f64) -> PyResult<f64> {
    igm::kl_gaussian(
        PixelDistribution { mean: mean_p, variance: var_p },
        PixelDistribution { mean: mean_q, variance: var_q },
    )
    .map_err(to_py)
}

#[pyfunction]
fn igm_banded(model: &PyModel, image: &PyImage, mask: Vec<Vec<bool>>, d: f64) -> PyResult<f64> {
    igm::igm_banded(model.0.as_ref(), &image.0, &mask_from_rows(mask)?, d).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (image, model, patch_size=48, stride=24, seed=0, workers=1))]
fn sweep(
    py: Python<'_>,
    image: &PyImage,
    model: &PyModel,
    patch_size: usize,
    stride: usize,
    seed: u64,
    workers: usize,
) -> PyResult<PyAffinityField> {
    let cfg = SweepConfig {
        patch_size,
        stride,
        seed,
        ..SweepConfig::default()
    };
    let (img, m) = (image.0.clone(), model.0.clone());
    py.detach(move || affinity::sweep(&img, m.as_ref(), &cfg, &AffinityNeighborhood::default(), workers))
        .map(PyAffinityField)
        .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (field, alpha, foreground=None, min_segment=0))]
fn segment(field: &PyAffinityField, alpha: f64, foreground: Option<&PyLabelMap>, min_segment: usize) -> PyResult<PyLabelMap> {
    let cfg = MwsConfig {
        alpha,
        foreground: foreground.map(|f| f.0.foreground()),
        min_segment,
    };
    mws::segment(&field.0, &cfg, &AffinityNeighborhood::default())
        .map(PyLabelMap)
        .map_err(to_py)
}

#[pyfunction]
fn seg_score(gt: &PyLabelMap, pred: &PyLabelMap) -> PyResult<f64> {
    metrics::seg_score(&gt.0, &pred.0).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (gt, pred, thresholds=metrics::DEFAULT_THRESHOLDS.to_vec()))]
fn detection_accuracy(gt: &PyLabelMap, pred: &PyLabelMap, thresholds: Vec<f64>) -> PyResult<Vec<f64>> {
    metrics::detection_accuracy(&gt.0, &pred.0, &thresholds).map_err(to_py)
}

#[pyfunction]
fn connected_components(labels: &PyLabelMap) -> PyLabelMap {
    PyLabelMap(igmseg_core::LabelMap::connected_components(&labels.0.foreground()))
}

#[pymodule]
fn igmseg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyLabelMap>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyAffinityField>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(kl_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(igm_banded, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(seg_score, m)?)?;
    m.add_function(wrap_pyfunction!(detection_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(connected_components, m)?)?;
    Ok(())
}
