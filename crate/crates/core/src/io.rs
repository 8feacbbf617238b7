//! On-disk formats.
//!
//! Arrays are stored as a JSON header (`{order, dims, dtype, layout}`) next
//! to a raw little-endian `f64` file with the same stem and a `.bin`
//! extension. Every file is written to a temporary sibling and renamed into
//! place, so readers never observe a partial file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, SkpdError};
use crate::fit::{compose_c, HyperParams, SkpdModel};
use crate::selection::BicReport;
use crate::simgen::{GroundTruth, SimConfig};
use crate::tensor::{BlockShape, DenseTensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayHeader {
    pub order: usize,
    pub dims: Vec<usize>,
    pub dtype: String,
    pub layout: String,
}

impl ArrayHeader {
    fn new(dims: &[usize]) -> Self {
        Self {
            order: dims.len(),
            dims: dims.to_vec(),
            dtype: "f64".into(),
            layout: "row-major".into(),
        }
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| SkpdError::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read(path)?;
    Ok(serde_json::from_slice(&text)?)
}

fn bin_path(json: &Path) -> PathBuf {
    json.with_extension("bin")
}

fn json_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes an array of any order. `path` may name either file of the pair.
pub fn write_array(path: &Path, dims: &[usize], data: &[f64]) -> Result<()> {
    if dims.iter().product::<usize>() != data.len() {
        return Err(SkpdError::dim(format!(
            "dims {:?} do not match {} values",
            dims,
            data.len()
        )));
    }
    let mut bytes = Vec::with_capacity(8 * data.len());
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&bin_path(path), &bytes)?;
    write_json(&json_path(path), &ArrayHeader::new(dims))
}

pub fn read_array(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let header: ArrayHeader = read_json(&json_path(path))?;
    if header.dtype != "f64" || header.layout != "row-major" || header.order != header.dims.len() {
        return Err(SkpdError::InvalidInput(format!(
            "{}: unsupported array header {:?}",
            path.display(),
            header
        )));
    }
    let bytes = fs::read(bin_path(path))?;
    let len: usize = header.dims.iter().product();
    if bytes.len() != 8 * len {
        return Err(SkpdError::dim(format!(
            "{}: expected {} bytes, found {}",
            bin_path(path).display(),
            8 * len,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((header.dims, data))
}

pub fn write_tensor(path: &Path, t: &DenseTensor) -> Result<()> {
    write_array(path, t.dims(), t.data())
}

pub fn read_tensor(path: &Path) -> Result<DenseTensor> {
    let (dims, data) = read_array(path)?;
    DenseTensor::new(dims, data)
}

pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    write_array(path, &[v.len()], v)
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let (dims, data) = read_array(path)?;
    if dims.len() != 1 {
        return Err(SkpdError::dim(format!(
            "{}: expected a vector, got dims {:?}",
            path.display(),
            dims
        )));
    }
    Ok(data)
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| SkpdError::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

fn read_csv_matrix(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| SkpdError::InvalidInput(format!("{}: '{}' is not a number", path.display(), s)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFiles {
    pub mask: String,
    pub c_true: String,
    pub theta_unit: String,
    pub theta_true: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n: usize,
    pub image_dims: Vec<usize>,
    pub q: usize,
    pub images: String,
    pub genetics: String,
    pub outcome: String,
    pub preset: Option<String>,
    pub config: Option<SimConfig>,
    pub truth: Option<TruthFiles>,
}

pub const MANIFEST: &str = "manifest.json";

/// Writes a dataset directory. The manifest is written last.
pub fn write_dataset(
    dir: &Path,
    data: &Dataset,
    config: Option<&SimConfig>,
    truth: Option<&GroundTruth>,
    preset: Option<&str>,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::with_capacity(8 * data.images().len());
    for row in data.images().row_iter() {
        for v in row.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(&dir.join("images.bin"), &bytes)?;

    let g = data.genetics();
    let header: Vec<String> = (1..=g.ncols()).map(|j| format!("g{j}")).collect();
    write_csv(
        &dir.join("genetics.csv"),
        &header,
        g.row_iter().map(|r| r.iter().map(|v| v.to_string()).collect()),
    )?;
    write_csv(
        &dir.join("outcome.csv"),
        &["y".to_string()],
        data.outcome().iter().map(|v| vec![v.to_string()]),
    )?;

    let truth = match truth {
        Some(t) => {
            let files = TruthFiles {
                mask: "truth/mask.json".into(),
                c_true: "truth/c_true.json".into(),
                theta_unit: "truth/theta_unit.json".into(),
                theta_true: "truth/theta_true.json".into(),
            };
            write_tensor(&dir.join(&files.mask), &t.mask)?;
            write_tensor(&dir.join(&files.c_true), &t.c_true)?;
            write_vector(&dir.join(&files.theta_unit), &t.theta_unit)?;
            write_vector(&dir.join(&files.theta_true), &t.theta_true)?;
            Some(files)
        }
        None => None,
    };
    let manifest = Manifest {
        n: data.n(),
        image_dims: data.image_dims().to_vec(),
        q: data.q(),
        images: "images.bin".into(),
        genetics: "genetics.csv".into(),
        outcome: "outcome.csv".into(),
        preset: preset.map(str::to_string),
        config: config.cloned(),
        truth,
    };
    let path = dir.join(MANIFEST);
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    read_json(&dir.join(MANIFEST))
}

/// Reads the raw (unpreprocessed) dataset of a directory.
pub fn read_dataset(dir: &Path) -> Result<(Manifest, Dataset)> {
    let m = read_manifest(dir)?;
    let vol: usize = m.image_dims.iter().product();
    let bytes = fs::read(dir.join(&m.images))?;
    if bytes.len() != 8 * m.n * vol {
        return Err(SkpdError::dim(format!(
            "{}: expected {} bytes for {} x {} images, found {}",
            m.images,
            8 * m.n * vol,
            m.n,
            vol,
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let images = DMatrix::from_row_slice(m.n, vol, &values);

    let (_, g) = read_csv_matrix(&dir.join(&m.genetics))?;
    if g.len() != m.n || g.iter().any(|r| r.len() != m.q) {
        return Err(SkpdError::dim(format!("{} is not {} x {}", m.genetics, m.n, m.q)));
    }
    let flat: Vec<f64> = g.into_iter().flatten().collect();
    let genetics = DMatrix::from_row_slice(m.n, m.q, &flat);

    let (_, y) = read_csv_matrix(&dir.join(&m.outcome))?;
    if y.len() != m.n || y.iter().any(|r| r.len() != 1) {
        return Err(SkpdError::dim(format!(
            "{} must hold one column of {} values",
            m.outcome, m.n
        )));
    }
    let outcome = DVector::from_iterator(m.n, y.into_iter().map(|r| r[0]));
    let data = Dataset::new(m.image_dims.clone(), images, genetics, outcome)?;
    Ok((m, data))
}

pub fn read_truth(dir: &Path, manifest: &Manifest) -> Result<GroundTruth> {
    let files = manifest
        .truth
        .as_ref()
        .ok_or_else(|| SkpdError::InvalidInput(format!("{} has no ground truth", dir.display())))?;
    let mask = read_tensor(&dir.join(&files.mask))?;
    let c_true = read_tensor(&dir.join(&files.c_true))?;
    let theta_unit = read_vector(&dir.join(&files.theta_unit))?;
    let theta_true = read_vector(&dir.join(&files.theta_true))?;
    let c_support = (0..mask.len()).filter(|&v| mask.data()[v] != 0.0).collect();
    let theta_support = (0..theta_unit.len()).filter(|&j| theta_unit[j] != 0.0).collect();
    Ok(GroundTruth {
        mask,
        c_true,
        theta_unit,
        theta_true,
        c_support,
        theta_support,
    })
}

/// Model metadata. Coefficients live in the array files it names; run
/// timing is kept out so reruns give identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub image_dims: Vec<usize>,
    pub block_shape: BlockShape,
    pub hyper: HyperParams,
    pub rank: usize,
    pub converged: bool,
    pub iterations: usize,
    pub degenerate: bool,
    pub ridged_orthogonalization: bool,
    pub lasso_nonconverged: usize,
    pub objective_trace: Vec<f64>,
    pub warning: Option<String>,
    pub theta: String,
    pub alphas: String,
    pub betas: String,
    pub c_hat: String,
}

fn columns(vs: &[Vec<f64>]) -> (usize, Vec<f64>) {
    let len = vs.first().map_or(0, Vec::len);
    (len, vs.iter().flatten().copied().collect())
}

/// Writes `model.json` plus `theta`, `alphas` (R x p), `betas` (R x d) and
/// `c_hat` arrays into `dir`.
pub fn write_model(dir: &Path, model: &SkpdModel) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    write_vector(&dir.join("theta.json"), &model.theta)?;
    let (p, a) = columns(&model.alphas);
    write_array(&dir.join("alphas.json"), &[model.rank(), p], &a)?;
    let (d, b) = columns(&model.betas);
    write_array(&dir.join("betas.json"), &[model.rank(), d], &b)?;
    write_tensor(&dir.join("c_hat.json"), &compose_c(model)?)?;
    let manifest = ModelManifest {
        image_dims: model.image_dims.clone(),
        block_shape: model.block_shape,
        hyper: model.hyper.clone(),
        rank: model.rank(),
        converged: model.converged,
        iterations: model.iterations,
        degenerate: model.degenerate,
        ridged_orthogonalization: model.ridged_orthogonalization,
        lasso_nonconverged: model.lasso_nonconverged,
        objective_trace: model.objective_trace.clone(),
        warning: model
            .degenerate
            .then(|| "degenerate fit: theta and the location indicators are all zero".to_string()),
        theta: "theta.json".into(),
        alphas: "alphas.json".into(),
        betas: "betas.json".into(),
        c_hat: "c_hat.json".into(),
    };
    let path = dir.join("model.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn read_model(dir: &Path) -> Result<SkpdModel> {
    let m: ModelManifest = read_json(&dir.join("model.json"))?;
    let theta = read_vector(&dir.join(&m.theta))?;
    let split = |file: &str| -> Result<Vec<Vec<f64>>> {
        let (dims, data) = read_array(&dir.join(file))?;
        if dims.len() != 2 || dims[0] != m.rank {
            return Err(SkpdError::dim(format!(
                "{file}: expected {} rows, got dims {:?}",
                m.rank, dims
            )));
        }
        if dims[1] == 0 {
            return Ok(vec![Vec::new(); dims[0]]);
        }
        Ok(data.chunks(dims[1]).map(<[f64]>::to_vec).collect())
    };
    Ok(SkpdModel {
        image_dims: m.image_dims,
        block_shape: m.block_shape,
        hyper: m.hyper,
        theta,
        alphas: split(&m.alphas)?,
        betas: split(&m.betas)?,
        objective_trace: m.objective_trace,
        converged: m.converged,
        iterations: m.iterations,
        degenerate: m.degenerate,
        ridged_orthogonalization: m.ridged_orthogonalization,
        lasso_nonconverged: m.lasso_nonconverged,
        wall_time_seconds: 0.0,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per grid cell.
pub fn write_bic_csv(path: &Path, report: &BicReport) -> Result<()> {
    let header = [
        "index",
        "rank",
        "lambda1",
        "lambda2",
        "bic",
        "objective",
        "converged",
        "degenerate",
        "iterations",
        "active_blocks",
        "theta_nonzeros",
        "warm_started",
        "best",
        "error",
    ]
    .map(String::from);
    write_csv(
        path,
        &header,
        report.cells.iter().enumerate().map(|(i, c)| {
            vec![
                i.to_string(),
                c.rank.to_string(),
                c.lambda1.to_string(),
                c.lambda2.to_string(),
                opt(c.bic),
                opt(c.objective),
                c.converged.to_string(),
                c.degenerate.to_string(),
                c.iterations.to_string(),
                c.active_blocks.to_string(),
                c.theta_nonzeros.to_string(),
                c.warm_started.to_string(),
                (i == report.best_index).to_string(),
                c.error.clone().unwrap_or_default(),
            ]
        }),
    )
}

/// Writes CSV rows built from serializable records; the header comes from
/// the first record's field names.
pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| SkpdError::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}
