//! Python bindings for the `topoot` segmentation pipeline.

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use topoot::chaining::Aggregate;
use topoot::filtration::{build_complex, FiltrationTag};
use topoot::grid_io::{self, BinaryMask, GridFormat, ScoreGrid};
use topoot::persistence::{compute_h0, compute_h1, diagram_at, PersistenceDiagram};
use topoot::pipeline::{segment_grid, PipelineConfig};
use topoot::transport::{self, SinkhornConfig};
use topoot::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_tag(tag: &str) -> PyResult<FiltrationTag> {
    FiltrationTag::parse(tag).ok_or_else(|| PyValueError::new_err(format!("unknown tag {tag:?}")))
}

/// Score grid with values in [0, 1], stored row-major.
#[pyclass(name = "Grid", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGrid {
    inner: ScoreGrid,
}

#[pymethods]
impl PyGrid {
    #[new]
    fn new(height: usize, width: usize, values: Vec<f32>) -> PyResult<Self> {
        Ok(Self {
            inner: ScoreGrid::new(height, width, values).map_err(to_py)?,
        })
    }

    /// Min-max rescale arbitrary finite values into [0, 1].
    #[staticmethod]
    fn from_unscaled(height: usize, width: usize, values: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: ScoreGrid::from_unscaled(height, width, &values).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let p = std::path::Path::new(path);
        Ok(Self {
            inner: grid_io::load_grid(p, GridFormat::from_path(p)).map_err(to_py)?,
        })
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    fn values(&self) -> Vec<f32> {
        self.inner.values().to_vec()
    }

    fn get(&self, row: usize, col: usize) -> PyResult<f64> {
        if row >= self.inner.height() || col >= self.inner.width() {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.inner.get(row, col))
    }

    fn __repr__(&self) -> String {
        format!("Grid({}x{})", self.inner.height(), self.inner.width())
    }
}

#[pyclass(name = "Mask", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMask {
    inner: BinaryMask,
}

#[pymethods]
impl PyMask {
    #[new]
    fn new(height: usize, width: usize, bits: Vec<bool>) -> PyResult<Self> {
        Ok(Self {
            inner: BinaryMask::new(height, width, bits).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: grid_io::load_mask(std::path::Path::new(path)).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        grid_io::save_mask(&self.inner, std::path::Path::new(path)).map_err(to_py)
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    fn bits(&self) -> Vec<bool> {
        self.inner.bits().to_vec()
    }

    fn count(&self) -> usize {
        self.inner.count()
    }

    fn __repr__(&self) -> String {
        format!(
            "Mask({}x{}, {} set)",
            self.inner.height(),
            self.inner.width(),
            self.inner.count()
        )
    }
}

/// Persistence diagram of one filtration and homology dimension.
#[pyclass(name = "Diagram", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDiagram {
    inner: PersistenceDiagram,
}

#[pymethods]
impl PyDiagram {
    #[getter]
    fn tag(&self) -> &'static str {
        self.inner.tag.as_str()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    /// `(birth, death, birth_row, birth_col)`; essential deaths are `inf`.
    fn points(&self) -> Vec<(f64, f64, usize, usize)> {
        self.inner
            .points
            .iter()
            .map(|p| (p.birth, p.death, p.birth_cell.0, p.birth_cell.1))
            .collect()
    }

    /// Diagram observed up to `tau`, with deaths truncated there.
    fn at(&self, tau: f64) -> Self {
        Self {
            inner: diagram_at(&self.inner, tau),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Diagram(tag={}, dim={}, {} points)",
            self.inner.tag,
            self.inner.dim,
            self.inner.len()
        )
    }
}

/// Diagrams of `grid` for `tag` in `{"sub", "sup"}` and `dim` in `{0, 1}`.
#[pyfunction]
#[pyo3(signature = (grid, tag = "sub", dim = 0))]
fn persistence(grid: &PyGrid, tag: &str, dim: usize) -> PyResult<PyDiagram> {
    let complex = build_complex(&grid.inner, parse_tag(tag)?);
    let mut inner = match dim {
        0 => compute_h0(&complex),
        1 => compute_h1(&complex),
        _ => return Err(PyValueError::new_err("dim must be 0 or 1")),
    };
    inner.sort();
    Ok(PyDiagram { inner })
}

#[pyfunction]
fn bottleneck(a: &PyDiagram, b: &PyDiagram) -> f64 {
    topoot::persistence::bottleneck(&a.inner, &b.inner)
}

/// Entropic transport between two point lists after diagonal augmentation.
/// Returns a dict with `plan` (list of rows), `cost`, `converged`, `iterations`.
#[pyfunction]
#[pyo3(signature = (p, q, epsilon = 0.05, max_iter = 200, tol = 1e-9))]
fn sinkhorn<'py>(
    py: Python<'py>,
    p: Vec<(f64, f64)>,
    q: Vec<(f64, f64)>,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = SinkhornConfig {
        epsilon,
        max_iter,
        tol,
    };
    let plan = transport::sinkhorn_diagrams(&p, &q, &cfg).map_err(to_py)?;
    let rows: Vec<Vec<f64>> = (0..plan.rows).map(|i| plan.row(i).to_vec()).collect();
    let out = PyDict::new(py);
    out.set_item("plan", rows)?;
    out.set_item("cost", plan.transport_cost())?;
    out.set_item("converged", plan.converged)?;
    out.set_item("iterations", plan.iterations)?;
    out.set_item("marginal_error", plan.marginal_error)?;
    Ok(out)
}

/// Unregularized optimum for small instances.
#[pyfunction]
fn exact_ot(p: Vec<(f64, f64)>, q: Vec<(f64, f64)>) -> PyResult<f64> {
    let (a, b) = transport::augment(&p, &q).map_err(to_py)?;
    Ok(transport::exact_ot(&a, &b).map_err(to_py)?.0)
}

/// Run the full pipeline on one grid.
///
/// Returns a dict with `mask`, `pseudo` (both `Mask`), `candidates` (list of
/// dicts) and `loss_trace`.
#[pyfunction]
#[pyo3(signature = (
    grid, *, seed = 0, thresholds = 10, top_k = 1, top_m = 8, alpha = 0.5,
    delta_sub = 0.2, delta_sup = 0.2, aggregate = "sum", restrict_component = false,
    epsilon = 0.05, lambda_ = 0.5, margin = 0.4, epochs = 5, lr = 1e-3, pairs = 256,
    batch_pixels = 32, skip_ttt = false
))]
#[allow(clippy::too_many_arguments)]
fn segment<'py>(
    py: Python<'py>,
    grid: &PyGrid,
    seed: u64,
    thresholds: usize,
    top_k: usize,
    top_m: usize,
    alpha: f64,
    delta_sub: f64,
    delta_sup: f64,
    aggregate: &str,
    restrict_component: bool,
    epsilon: f64,
    lambda_: f64,
    margin: f64,
    epochs: usize,
    lr: f64,
    pairs: usize,
    batch_pixels: usize,
    skip_ttt: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = PipelineConfig {
        thresholds,
        skip_ttt,
        ..Default::default()
    };
    cfg.chain.top_k = top_k;
    cfg.chain.top_m = top_m;
    cfg.chain.alpha = alpha;
    cfg.chain.delta_sub = delta_sub;
    cfg.chain.delta_sup = delta_sup;
    cfg.chain.restrict_component = restrict_component;
    cfg.chain.aggregate = match aggregate {
        "sum" => Aggregate::Sum,
        "mean" => Aggregate::Mean,
        other => return Err(PyValueError::new_err(format!("unknown aggregate {other:?}"))),
    };
    cfg.sinkhorn.epsilon = epsilon;
    cfg.ttt.lambda = lambda_;
    cfg.ttt.margin = margin;
    cfg.ttt.epochs = epochs;
    cfg.ttt.lr = lr;
    cfg.ttt.pairs = pairs;
    cfg.ttt.batch_pixels = batch_pixels;

    let seg = py
        .detach(|| segment_grid(&grid.inner, None, &cfg, seed))
        .map_err(to_py)?;
    let candidates = seg
        .candidates
        .iter()
        .map(|c| {
            let d = PyDict::new(py);
            d.set_item("tag", c.tag.as_str())?;
            d.set_item("dim", c.dim)?;
            d.set_item("birth", c.birth)?;
            d.set_item("death", c.death)?;
            d.set_item("score", c.score)?;
            d.set_item("tau_bp", c.tau_bp)?;
            d.set_item("birth_cell", c.birth_cell)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let out = PyDict::new(py);
    out.set_item("mask", PyMask { inner: seg.mask })?;
    out.set_item("pseudo", PyMask { inner: seg.pseudo })?;
    out.set_item("candidates", candidates)?;
    out.set_item("loss_trace", seg.loss_trace)?;
    Ok(out)
}

/// Precision, recall, F1 and IoU of `pred` against `gt`.
#[pyfunction]
fn score<'py>(py: Python<'py>, pred: &PyMask, gt: &PyMask) -> PyResult<Bound<'py, PyDict>> {
    let s = topoot::metrics::score(&pred.inner, &gt.inner).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("tp", s.tp)?;
    out.set_item("fp", s.fp)?;
    out.set_item("fn", s.fn_)?;
    out.set_item("tn", s.tn)?;
    out.set_item("precision", s.precision)?;
    out.set_item("recall", s.recall)?;
    out.set_item("f1", s.f1)?;
    out.set_item("iou", s.iou)?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (grid, c = 3.0))]
fn threshold_baseline(grid: &PyGrid, c: f64) -> PyMask {
    PyMask {
        inner: topoot::metrics::threshold_baseline(&grid.inner, c),
    }
}

/// Seeded synthetic blob corpus as a list of `(Grid, Mask)` pairs.
#[pyfunction]
#[pyo3(signature = (count, size = 48, seed = 0))]
fn synth_blobs(count: usize, size: usize, seed: u64) -> PyResult<Vec<(PyGrid, PyMask)>> {
    grid_io::blob_corpus(count, size, seed)
        .iter()
        .map(|spec| {
            let (g, m) = grid_io::synth(spec).map_err(to_py)?;
            Ok((PyGrid { inner: g }, PyMask { inner: m }))
        })
        .collect()
}

#[pymodule]
fn topoot_rs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyMask>()?;
    m.add_class::<PyDiagram>()?;
    m.add_function(wrap_pyfunction!(persistence, m)?)?;
    m.add_function(wrap_pyfunction!(bottleneck, m)?)?;
    m.add_function(wrap_pyfunction!(sinkhorn, m)?)?;
    m.add_function(wrap_pyfunction!(exact_ot, m)?)?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(synth_blobs, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
