//! Portable on-disk formats.
//!
//! Tensors are stored as a single-line JSON header followed by the raw
//! little-endian payload:
//!
//! ```text
//! {"shape":[16,512,2],"dtype":"f64","order":"row-major","endianness":"little"}\n
//! <payload bytes>
//! ```
//!
//! Supported dtypes: `f32`, `f64`, `c64` (complex, 2×f32 interleaved
//! re,im), `c128` (2×f64 interleaved). Run configuration is a flat
//! `key = value` text file; unknown keys are a hard error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{HardwareConfig, TrajectorySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
    C64,
    C128,
}

impl Dtype {
    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::C64 => 8,
            Dtype::C128 => 16,
        }
    }
}

/// In-memory payload of a tensor file.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    C64(Vec<Complex32>),
    C128(Vec<Complex64>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
            TensorData::C64(_) => Dtype::C64,
            TensorData::C128(_) => Dtype::C128,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::C64(v) => v.len(),
            TensorData::C128(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    shape: Vec<usize>,
    dtype: Dtype,
    order: String,
    endianness: String,
}

/// A parsed tensor: payload plus shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub data: TensorData,
    pub shape: Vec<usize>,
}

impl Tensor {
    pub fn new(data: TensorData, shape: Vec<usize>) -> Result<Self> {
        let count: usize = shape.iter().product();
        if shape.is_empty() {
            return Err(Error::Format("tensor shape must be nonempty".into()));
        }
        if count != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} implies {} elements, payload has {}",
                shape,
                count,
                data.len()
            )));
        }
        Ok(Tensor { data, shape })
    }
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    let header = Header {
        shape: tensor.shape.clone(),
        dtype: tensor.data.dtype(),
        order: "row-major".into(),
        endianness: "little".into(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(b"\n")?;
    match &tensor.data {
        TensorData::F32(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        TensorData::F64(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        TensorData::C64(v) => {
            for x in v {
                w.write_all(&x.re.to_le_bytes())?;
                w.write_all(&x.im.to_le_bytes())?;
            }
        }
        TensorData::C128(v) => {
            for x in v {
                w.write_all(&x.re.to_le_bytes())?;
                w.write_all(&x.im.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let got = r.read(&mut byte)?;
        if got == 0 {
            return Err(Error::Format("missing newline after tensor header".into()));
        }
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
        if header_bytes.len() > 1 << 16 {
            return Err(Error::Format("tensor header exceeds 64 KiB".into()));
        }
    }
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Format(format!("bad tensor header: {e}")))?;
    if header.order != "row-major" {
        return Err(Error::Format(format!("unsupported order {:?}", header.order)));
    }
    if header.endianness != "little" {
        return Err(Error::Format(format!(
            "unsupported endianness {:?}",
            header.endianness
        )));
    }
    let count: usize = header.shape.iter().product();
    if header.shape.is_empty() {
        return Err(Error::Format("tensor shape must be nonempty".into()));
    }
    let expected = count * header.dtype.size_bytes();
    let mut payload = Vec::with_capacity(expected);
    r.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(Error::CorruptFile(format!(
            "payload is {} bytes, header implies {}",
            payload.len(),
            expected
        )));
    }
    let data = match header.dtype {
        Dtype::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        ),
        Dtype::F64 => TensorData::F64(
            payload
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        ),
        Dtype::C64 => TensorData::C64(
            payload
                .chunks_exact(8)
                .map(|b| {
                    Complex32::new(
                        f32::from_le_bytes(b[0..4].try_into().unwrap()),
                        f32::from_le_bytes(b[4..8].try_into().unwrap()),
                    )
                })
                .collect(),
        ),
        Dtype::C128 => TensorData::C128(
            payload
                .chunks_exact(16)
                .map(|b| {
                    Complex64::new(
                        f64::from_le_bytes(b[0..8].try_into().unwrap()),
                        f64::from_le_bytes(b[8..16].try_into().unwrap()),
                    )
                })
                .collect(),
        ),
    };
    Tensor::new(data, header.shape)
}

/// Convenience: write a real f64 tensor.
pub fn write_f64(path: &Path, values: &[f64], shape: &[usize]) -> Result<()> {
    write_tensor(path, &Tensor::new(TensorData::F64(values.to_vec()), shape.to_vec())?)
}

/// Convenience: read an f64 tensor, failing on any other dtype.
pub fn read_f64(path: &Path) -> Result<(Vec<f64>, Vec<usize>)> {
    let t = read_tensor(path)?;
    match t.data {
        TensorData::F64(v) => Ok((v, t.shape)),
        other => Err(Error::Format(format!(
            "expected f64 tensor, found {:?}",
            other.dtype()
        ))),
    }
}

/// Convenience: write a complex c128 tensor.
pub fn write_c128(path: &Path, values: &[Complex64], shape: &[usize]) -> Result<()> {
    write_tensor(path, &Tensor::new(TensorData::C128(values.to_vec()), shape.to_vec())?)
}

pub fn read_c128(path: &Path) -> Result<(Vec<Complex64>, Vec<usize>)> {
    let t = read_tensor(path)?;
    match t.data {
        TensorData::C128(v) => Ok((v, t.shape)),
        other => Err(Error::Format(format!(
            "expected c128 tensor, found {:?}",
            other.dtype()
        ))),
    }
}

/// Trajectory-optimizer parameters carried by the run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SparklingParams {
    pub n_levels: usize,
    pub iters_per_level: usize,
    pub step_factor: f64,
    pub step_decay: f64,
    pub init: String,
    pub seed: u64,
    pub proj_tol: f64,
    pub proj_max_iter: usize,
}

impl Default for SparklingParams {
    fn default() -> Self {
        SparklingParams {
            n_levels: 4,
            iters_per_level: 60,
            step_factor: 0.1,
            step_decay: 0.0,
            init: "golden".into(),
            seed: 0,
            proj_tol: 1e-8,
            proj_max_iter: 5000,
        }
    }
}

/// Reconstruction parameters carried by the run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconParams {
    pub lambda: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub wavelet_scales: usize,
    pub dc_precondition: bool,
    pub center_fraction: f64,
}

impl Default for ReconParams {
    fn default() -> Self {
        ReconParams {
            lambda: 1e-3,
            max_iter: 200,
            tol: 1e-6,
            wavelet_scales: 4,
            dc_precondition: true,
            center_fraction: 0.20,
        }
    }
}

/// Full pipeline configuration with paper defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub hardware: HardwareConfig,
    pub n_shots: usize,
    pub n_samples: usize,
    pub sparkling: SparklingParams,
    pub recon: ReconParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hardware: HardwareConfig::default_scanner(),
            n_shots: 16,
            n_samples: 512,
            sparkling: SparklingParams::default(),
            recon: ReconParams::default(),
        }
    }
}

impl RunConfig {
    pub fn trajectory_spec(&self) -> Result<TrajectorySpec> {
        TrajectorySpec::new(self.n_shots, self.n_samples, self.hardware.clone())
    }

    pub fn validate(&self) -> Result<()> {
        self.trajectory_spec()?;
        if self.sparkling.n_levels < 1 {
            return Err(Error::Config("n_levels must be >= 1".into()));
        }
        if self.sparkling.iters_per_level < 1 {
            return Err(Error::Config("iters_per_level must be >= 1".into()));
        }
        if self.recon.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if !(self.recon.center_fraction > 0.0 && self.recon.center_fraction <= 1.0) {
            return Err(Error::Config("center_fraction must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Documented configuration keys (also the manifest key list minus `slice`).
pub const CONFIG_KEYS: &[&str] = &[
    "n",
    "fov",
    "g_max",
    "s_max",
    "raster_dt",
    "dwell_dt",
    "gamma",
    "n_shots",
    "n_samples",
    "n_levels",
    "iters_per_level",
    "step_factor",
    "step_decay",
    "init",
    "seed",
    "proj_tol",
    "proj_max_iter",
    "lambda",
    "recon_max_iter",
    "recon_tol",
    "wavelet_scales",
    "dc_precondition",
    "center_fraction",
];

/// Parse one `key = value` line; empty lines and `#` comments are skipped.
fn parse_line(line: &str) -> Result<Option<(String, String)>> {
    let stripped = match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
    .trim();
    if stripped.is_empty() {
        return Ok(None);
    }
    let (k, v) = stripped
        .split_once('=')
        .ok_or_else(|| Error::Format(format!("expected `key = value`, got {line:?}")))?;
    Ok(Some((k.trim().to_string(), v.trim().to_string())))
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("key {key}: cannot parse value {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("key {key}: expected boolean, got {v:?}"))),
    }
}

/// Apply a single configuration key to `cfg`. Shared with the study
/// manifest parser in the CLI.
pub fn apply_config_key(cfg: &mut RunConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "n" => cfg.hardware.n = parse_num(key, value)?,
        "fov" => cfg.hardware.fov = parse_num(key, value)?,
        "g_max" => cfg.hardware.g_max = parse_num(key, value)?,
        "s_max" => cfg.hardware.s_max = parse_num(key, value)?,
        "raster_dt" => cfg.hardware.raster_dt = parse_num(key, value)?,
        "dwell_dt" => cfg.hardware.dwell_dt = parse_num(key, value)?,
        "gamma" => cfg.hardware.gamma = parse_num(key, value)?,
        "n_shots" => cfg.n_shots = parse_num(key, value)?,
        "n_samples" => cfg.n_samples = parse_num(key, value)?,
        "n_levels" => cfg.sparkling.n_levels = parse_num(key, value)?,
        "iters_per_level" => cfg.sparkling.iters_per_level = parse_num(key, value)?,
        "step_factor" => cfg.sparkling.step_factor = parse_num(key, value)?,
        "step_decay" => cfg.sparkling.step_decay = parse_num(key, value)?,
        "init" => cfg.sparkling.init = value.to_string(),
        "seed" => cfg.sparkling.seed = parse_num(key, value)?,
        "proj_tol" => cfg.sparkling.proj_tol = parse_num(key, value)?,
        "proj_max_iter" => cfg.sparkling.proj_max_iter = parse_num(key, value)?,
        "lambda" => cfg.recon.lambda = parse_num(key, value)?,
        "recon_max_iter" => cfg.recon.max_iter = parse_num(key, value)?,
        "recon_tol" => cfg.recon.tol = parse_num(key, value)?,
        "wavelet_scales" => cfg.recon.wavelet_scales = parse_num(key, value)?,
        "dc_precondition" => cfg.recon.dc_precondition = parse_bool(key, value)?,
        "center_fraction" => cfg.recon.center_fraction = parse_num(key, value)?,
        _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
    }
    Ok(())
}

/// Load a run configuration, filling unset keys with paper defaults.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_run_config(&text)
}

pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for line in text.lines() {
        if let Some((k, v)) = parse_line(line)? {
            apply_config_key(&mut cfg, &k, &v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
