//! Python bindings for the panlab core: rasters, simulation, metrics and
//! both training stages.

use std::collections::HashMap;

use panlab::encoder::{encode_image, EncoderConfig, EncoderParams, ImageKind, Projection, PromptVariant};
use panlab::metrics::evaluate;
use panlab::protocol::{bdsd_fuse, exp_upsample, make_triplet, reduce_inputs, SceneTriplet, SensorModel};
use panlab::rasters::{read_raster, synth_scene, write_raster, Raster};
use panlab::stage1::{modality_accuracy, same_type_cosines, train_stage1, Stage1Config};
use panlab::stage2::{
    backbone_forward, fuse_reduced, pretrain_backbone_reduced, train_stage2, BackboneParams, LossGroups,
    PretrainConfig, Stage2Config,
};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(panlab_py, PanlabError, PyException);

fn err(e: panlab::Error) -> PyErr {
    PanlabError::new_err(e.to_string())
}

fn kind(name: &str) -> PyResult<ImageKind> {
    match name.to_ascii_lowercase().as_str() {
        "ms" => Ok(ImageKind::Ms),
        "pan" => Ok(ImageKind::Pan),
        "hrms" => Ok(ImageKind::Hrms),
        _ => Err(PanlabError::new_err(format!("unknown image kind '{name}' (ms, pan or hrms)"))),
    }
}

/// Band-major `f32` image.
#[pyclass(name = "Raster", module = "panlab_py", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyRaster(Raster);

#[pymethods]
impl PyRaster {
    /// `data` holds `bands * height * width` values, band-major.
    #[new]
    fn new(width: usize, height: usize, bands: usize, data: Vec<f32>) -> PyResult<Self> {
        Raster::new(width, height, bands, data).map(PyRaster).map_err(err)
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        read_raster(path).map(PyRaster).map_err(err)
    }

    fn write(&self, path: &str) -> PyResult<()> {
        write_raster(&self.0, path).map_err(err)
    }

    /// `(width, height, bands)`
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.0.shape()
    }

    fn band(&self, b: usize) -> PyResult<Vec<f32>> {
        if b >= self.0.bands() {
            return Err(PanlabError::new_err(format!("band {b} out of range")));
        }
        Ok(self.0.band(b).to_vec())
    }

    fn to_list(&self) -> Vec<f32> {
        self.0.data().to_vec()
    }

    fn __repr__(&self) -> String {
        let (w, h, b) = self.0.shape();
        format!("Raster({w}x{h}, {b} bands)")
    }
}

/// LRMS, PAN and optional pseudo-HRMS of one simulated scene.
#[pyclass(name = "Triplet", module = "panlab_py", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyTriplet(SceneTriplet);

#[pymethods]
impl PyTriplet {
    #[getter]
    fn scene_id(&self) -> u64 {
        self.0.scene_id
    }

    #[getter]
    fn lrms(&self) -> PyRaster {
        PyRaster(self.0.lrms.clone())
    }

    #[getter]
    fn pan(&self) -> PyRaster {
        PyRaster(self.0.pan.clone())
    }

    #[getter]
    fn pseudo_hrms(&self) -> Option<PyRaster> {
        self.0.pseudo_hrms.clone().map(PyRaster)
    }
}

/// Simulates one scene and returns `(hr_ms, triplet)`.
#[pyfunction]
#[pyo3(signature = (seed, size = 64, bands = 4, with_pseudo = true))]
fn simulate(seed: u64, size: usize, bands: usize, with_pseudo: bool) -> PyResult<(PyRaster, PyTriplet)> {
    let scene = synth_scene(seed, size, bands).map_err(err)?;
    let t = make_triplet(&scene, &SensorModel::new(bands), with_pseudo).map_err(err)?;
    Ok((PyRaster(scene.hr_ms), PyTriplet(t)))
}

/// Reduced-resolution inputs `(lrms, pan)` of a triplet.
#[pyfunction]
fn reduce(triplet: PyRef<'_, PyTriplet>) -> PyResult<(PyRaster, PyRaster)> {
    let model = SensorModel::new(triplet.0.lrms.bands());
    let (l, p) = reduce_inputs(&triplet.0, &model).map_err(err)?;
    Ok((PyRaster(l), PyRaster(p)))
}

#[pyfunction]
fn exp_baseline(lrms: PyRef<'_, PyRaster>) -> PyResult<PyRaster> {
    exp_upsample(&lrms.0).map(PyRaster).map_err(err)
}

#[pyfunction]
fn bdsd(lrms: PyRef<'_, PyRaster>, pan: PyRef<'_, PyRaster>) -> PyResult<PyRaster> {
    bdsd_fuse(&lrms.0, &pan.0, &SensorModel::new(lrms.0.bands())).map(PyRaster).map_err(err)
}

/// Quality indices as a dict; reference-based keys appear only when a
/// reference is given.
#[pyfunction]
#[pyo3(signature = (fused, lrms, pan, reference = None))]
fn metrics(
    fused: PyRef<'_, PyRaster>,
    lrms: PyRef<'_, PyRaster>,
    pan: PyRef<'_, PyRaster>,
    reference: Option<PyRef<'_, PyRaster>>,
) -> PyResult<HashMap<&'static str, f64>> {
    let model = SensorModel::new(lrms.0.bands());
    let r = evaluate(&fused.0, &lrms.0, &pan.0, reference.as_ref().map(|r| &r.0), &model).map_err(err)?;
    let names = ["mpsnr", "ergas", "sam", "q2n", "d_lambda", "d_s", "qnr"];
    Ok(names
        .into_iter()
        .zip(r.values())
        .filter_map(|(n, v)| v.map(|v| (n, v)))
        .collect())
}

/// Image/text encoder with adapters.
#[pyclass(name = "Encoder", module = "panlab_py", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyEncoder(EncoderParams);

#[pymethods]
impl PyEncoder {
    #[new]
    #[pyo3(signature = (bands = 4, seed = 0, prompt = "Wald", projection = "Conv"))]
    fn new(bands: usize, seed: u64, prompt: &str, projection: &str) -> PyResult<Self> {
        let mut cfg = EncoderConfig::new(bands);
        cfg.variant = prompt.parse::<PromptVariant>().map_err(err)?;
        cfg.projection = projection.parse::<Projection>().map_err(err)?;
        EncoderParams::init(cfg, seed).map(PyEncoder).map_err(err)
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        EncoderParams::read(path).map(PyEncoder).map_err(err)
    }

    fn write(&self, path: &str) -> PyResult<()> {
        self.0.write(path).map_err(err)
    }

    /// Unit-norm embedding of an image of the given kind.
    fn embed(&self, image: PyRef<'_, PyRaster>, kind_name: &str) -> PyResult<Vec<f32>> {
        encode_image(&image.0, &self.0, kind(kind_name)?).map_err(err)
    }

    fn modality_accuracy(&self, triplets: Vec<PyRef<'_, PyTriplet>>) -> PyResult<f64> {
        modality_accuracy(&self.0, &collect(&triplets)).map_err(err)
    }

    /// Mean cosine between distinct scenes for MS, PAN and HRMS.
    fn same_type_cosines(&self, triplets: Vec<PyRef<'_, PyTriplet>>) -> PyResult<(f64, f64, f64)> {
        let [a, b, c] = same_type_cosines(&self.0, &collect(&triplets)).map_err(err)?;
        Ok((a, b, c))
    }
}

/// Fusion backbone weights.
#[pyclass(name = "Backbone", module = "panlab_py", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyBackbone(BackboneParams);

#[pymethods]
impl PyBackbone {
    #[new]
    #[pyo3(signature = (bands = 4, seed = 0))]
    fn new(bands: usize, seed: u64) -> PyResult<Self> {
        BackboneParams::init(bands, seed).map(PyBackbone).map_err(err)
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        BackboneParams::read(path).map(PyBackbone).map_err(err)
    }

    fn write(&self, path: &str) -> PyResult<()> {
        self.0.write(path).map_err(err)
    }

    fn fuse(&self, lrms: PyRef<'_, PyRaster>, pan: PyRef<'_, PyRaster>) -> PyResult<PyRaster> {
        backbone_forward(&lrms.0, &pan.0, &self.0).map(PyRaster).map_err(err)
    }

    /// Fuses the reduced-resolution inputs of a triplet.
    fn fuse_reduced(&self, triplet: PyRef<'_, PyTriplet>) -> PyResult<PyRaster> {
        let model = SensorModel::new(self.0.bands);
        fuse_reduced(&triplet.0, &self.0, &model).map(PyRaster).map_err(err)
    }
}

fn collect(ts: &[PyRef<'_, PyTriplet>]) -> Vec<SceneTriplet> {
    ts.iter().map(|t| t.0.clone()).collect()
}

/// Stage I. Returns the aligned encoder and the per-iteration total loss.
#[pyfunction]
#[pyo3(signature = (triplets, encoder, iterations = 1000, batch_size = 32, lr = 0.003, seed = 0))]
fn align(
    py: Python<'_>,
    triplets: Vec<PyRef<'_, PyTriplet>>,
    encoder: PyRef<'_, PyEncoder>,
    iterations: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> PyResult<(PyEncoder, Vec<f64>)> {
    let data = collect(&triplets);
    let init = encoder.0.clone();
    let cfg = Stage1Config {
        iterations,
        batch_size,
        lr,
        seed,
        ..Stage1Config::default()
    };
    let (p, log) = py.detach(|| train_stage1(&data, &init, &cfg)).map_err(err)?;
    Ok((PyEncoder(p), log.rows.iter().map(|r| r.total).collect()))
}

/// Reduced-resolution pretraining of the pseudo-supervisor.
#[pyfunction]
#[pyo3(signature = (triplets, init, iterations = 1000, batch_size = 32, lr = 0.003, seed = 0))]
fn pretrain(
    py: Python<'_>,
    triplets: Vec<PyRef<'_, PyTriplet>>,
    init: PyRef<'_, PyBackbone>,
    iterations: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> PyResult<(PyBackbone, Vec<f64>)> {
    let data = collect(&triplets);
    let start = init.0.clone();
    let model = SensorModel::new(start.bands);
    let cfg = PretrainConfig {
        iterations,
        batch_size,
        lr,
        seed,
    };
    let (p, log) = py
        .detach(|| pretrain_backbone_reduced(&data, &start, &model, &cfg))
        .map_err(err)?;
    Ok((PyBackbone(p), log))
}

/// Stage II with the loss groups named by `losses` (for example
/// `"L_unsup+L_ship+L_d"`). Returns the backbone and the per-iteration
/// total loss.
#[pyfunction]
#[pyo3(signature = (triplets, init, encoder = None, pseudo = None, losses = "L_unsup+L_ship+L_d",
                    iterations = 1000, batch_size = 32, lr = 0.003, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    triplets: Vec<PyRef<'_, PyTriplet>>,
    init: PyRef<'_, PyBackbone>,
    encoder: Option<PyRef<'_, PyEncoder>>,
    pseudo: Option<PyRef<'_, PyBackbone>>,
    losses: &str,
    iterations: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> PyResult<(PyBackbone, Vec<f64>)> {
    let data = collect(&triplets);
    let start = init.0.clone();
    let enc = encoder.map(|e| e.0.clone());
    let sup = pseudo.map(|p| p.0.clone());
    let model = SensorModel::new(start.bands);
    let cfg = Stage2Config {
        iterations,
        batch_size,
        lr,
        seed,
        groups: losses.parse::<LossGroups>().map_err(err)?,
        ..Stage2Config::default()
    };
    let (p, log) = py
        .detach(|| train_stage2(&data, &start, enc.as_ref(), sup.as_ref(), &model, &cfg))
        .map_err(err)?;
    Ok((PyBackbone(p), log.rows.iter().map(|r| r.total).collect()))
}

#[pymodule]
fn panlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PanlabError", m.py().get_type::<PanlabError>())?;
    m.add_class::<PyRaster>()?;
    m.add_class::<PyTriplet>()?;
    m.add_class::<PyEncoder>()?;
    m.add_class::<PyBackbone>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(reduce, m)?)?;
    m.add_function(wrap_pyfunction!(exp_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(bdsd, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(align, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
