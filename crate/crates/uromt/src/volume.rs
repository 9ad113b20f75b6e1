//! Volume files: a text header (`.hdr`) next to a raw binary payload (`.raw`).
//!
//! ```text
//! format = uromt-volume 1
//! dims = 24 24 24
//! spacing = 2.0833333333333335 2.0833333333333335 2.0833333333333335
//! dtype = float64
//! components = 1
//! axis_order = xyz
//! endianness = little
//! data_file = image_00.raw
//! ```
//!
//! The payload holds `components · n1 · n2 · n3` values, x fastest, then y,
//! then z, with vector components stored one after another.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use uromt_core::{Grid, IndicatorField, ScalarField, VectorField};

use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "uromt-volume 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    Float64,
    Float32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::Float64 => 8,
            Dtype::Float32 => 4,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Dtype::Float64 => "float64",
            Dtype::Float32 => "float32",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endianness {
    Little,
    Big,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: Dtype,
    pub components: usize,
    pub endianness: Endianness,
    /// Payload path relative to the header's directory.
    pub data_file: String,
}

impl VolumeHeader {
    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn payload_len(&self) -> usize {
        self.voxels() * self.components * self.dtype.size()
    }

    fn render(&self) -> String {
        let [n1, n2, n3] = self.dims;
        let [dx, dy, dz] = self.spacing;
        let endian = match self.endianness {
            Endianness::Little => "little",
            Endianness::Big => "big",
        };
        format!(
            "format = {FORMAT_TAG}\ndims = {n1} {n2} {n3}\nspacing = {dx:?} {dy:?} {dz:?}\ndtype = {}\ncomponents = {}\naxis_order = xyz\nendianness = {endian}\ndata_file = {}\n",
            self.dtype.name(),
            self.components,
            self.data_file
        )
    }

    fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut entries = std::collections::BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format(path, format!("line {}", lineno + 1), "expected `key = value`"))?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::format(path, key, "duplicate key"));
            }
        }
        let mut take = |key: &str| entries.remove(key).ok_or_else(|| Error::format(path, key, "missing"));

        let format = take("format")?;
        if format != FORMAT_TAG {
            return Err(Error::format(path, "format", format!("expected `{FORMAT_TAG}`, found `{format}`")));
        }
        let dims = parse_triple::<usize>(path, "dims", &take("dims")?)?;
        if dims.contains(&0) {
            return Err(Error::format(path, "dims", "every dimension must be positive"));
        }
        let spacing = parse_triple::<f64>(path, "spacing", &take("spacing")?)?;
        if spacing.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(Error::format(path, "spacing", "spacings must be positive and finite"));
        }
        let dtype = match take("dtype")?.as_str() {
            "float64" => Dtype::Float64,
            "float32" => Dtype::Float32,
            other => return Err(Error::format(path, "dtype", format!("unknown dtype `{other}`"))),
        };
        let components = match take("components")?.as_str() {
            "1" => 1,
            "3" => 3,
            other => return Err(Error::format(path, "components", format!("expected 1 or 3, found `{other}`"))),
        };
        let axis_order = take("axis_order")?;
        if axis_order != "xyz" {
            return Err(Error::format(path, "axis_order", format!("only `xyz` is supported, found `{axis_order}`")));
        }
        let endianness = match take("endianness")?.as_str() {
            "little" => Endianness::Little,
            "big" => Endianness::Big,
            other => return Err(Error::format(path, "endianness", format!("unknown endianness `{other}`"))),
        };
        let data_file = take("data_file")?;
        if data_file.is_empty() {
            return Err(Error::format(path, "data_file", "empty"));
        }
        if let Some(key) = entries.keys().next() {
            return Err(Error::format(path, key.clone(), "unknown key"));
        }
        Ok(Self {
            dims,
            spacing,
            dtype,
            components,
            endianness,
            data_file,
        })
    }
}

fn parse_triple<T: std::str::FromStr>(path: &Path, key: &str, value: &str) -> Result<[T; 3]> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::format(path, key, format!("expected 3 values, found {}", parts.len())));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(
            p.parse::<T>()
                .map_err(|_| Error::format(path, key, format!("cannot parse `{p}`")))?,
        );
    }
    Ok(out.try_into().ok().expect("three parsed values"))
}

/// A decoded volume: header plus values in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub header: VolumeHeader,
    pub values: Vec<f64>,
}

impl Volume {
    pub fn grid(&self) -> Result<Grid> {
        Ok(Grid::new(self.header.dims, self.header.spacing)?)
    }

    fn expect_components(&self, path: &Path, components: usize) -> Result<()> {
        if self.header.components != components {
            return Err(Error::format(
                path,
                "components",
                format!("expected {components}, found {}", self.header.components),
            ));
        }
        Ok(())
    }
}

/// Payload path for a header path: same stem, `.raw` extension.
pub fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

pub fn read_header(path: &Path) -> Result<VolumeHeader> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    VolumeHeader::parse(path, &text)
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let header = read_header(path)?;
    let data_path = path.parent().unwrap_or(Path::new(".")).join(&header.data_file);
    let bytes = fs::read(&data_path).map_err(Error::io(&data_path))?;
    let expected = header.payload_len();
    if bytes.len() < expected {
        return Err(Error::format(
            &data_path,
            "payload",
            format!("truncated: {} bytes, header requires {expected}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(
            &data_path,
            "payload",
            format!("{} bytes of trailing data beyond the {expected} the header requires", bytes.len() - expected),
        ));
    }
    let values = decode(&bytes, header.dtype, header.endianness);
    Ok(Volume { header, values })
}

fn decode(bytes: &[u8], dtype: Dtype, endianness: Endianness) -> Vec<f64> {
    match (dtype, endianness) {
        (Dtype::Float64, Endianness::Little) => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        (Dtype::Float64, Endianness::Big) => bytes
            .chunks_exact(8)
            .map(|c| f64::from_be_bytes(c.try_into().unwrap()))
            .collect(),
        (Dtype::Float32, Endianness::Little) => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        (Dtype::Float32, Endianness::Big) => bytes
            .chunks_exact(4)
            .map(|c| f32::from_be_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    }
}

fn encode(values: &[f64], dtype: Dtype, endianness: Endianness) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.size());
    for &v in values {
        match (dtype, endianness) {
            (Dtype::Float64, Endianness::Little) => out.extend_from_slice(&v.to_le_bytes()),
            (Dtype::Float64, Endianness::Big) => out.extend_from_slice(&v.to_be_bytes()),
            (Dtype::Float32, Endianness::Little) => out.extend_from_slice(&(v as f32).to_le_bytes()),
            (Dtype::Float32, Endianness::Big) => out.extend_from_slice(&(v as f32).to_be_bytes()),
        }
    }
    out
}

/// Writes `bytes` to a temporary sibling of `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::format(path, "path", "no file name"))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(Error::io(path))
}

/// Writes header and payload. `path` is the header path; the payload goes to
/// [`payload_path`]. Returns the payload path.
pub fn write_raw(path: &Path, grid: &Grid, components: usize, values: &[f64], dtype: Dtype) -> Result<PathBuf> {
    debug_assert_eq!(values.len(), components * grid.len());
    let data_path = payload_path(path);
    let header = VolumeHeader {
        dims: grid.dims(),
        spacing: grid.spacing(),
        dtype,
        components,
        endianness: Endianness::Little,
        data_file: data_path
            .file_name()
            .expect("header path has a file name")
            .to_string_lossy()
            .into_owned(),
    };
    write_atomic(&data_path, &encode(values, dtype, Endianness::Little))?;
    write_atomic(path, header.render().as_bytes())?;
    Ok(data_path)
}

pub fn write_scalar(path: &Path, field: &ScalarField) -> Result<PathBuf> {
    write_raw(path, field.grid(), 1, field.values(), Dtype::Float64)
}

pub fn write_vector(path: &Path, field: &VectorField) -> Result<PathBuf> {
    write_raw(path, field.grid(), 3, field.values(), Dtype::Float64)
}

pub fn write_indicator(path: &Path, field: &IndicatorField) -> Result<PathBuf> {
    write_raw(path, field.grid(), 1, field.values(), Dtype::Float64)
}

pub fn read_scalar(path: &Path) -> Result<ScalarField> {
    let vol = read_volume(path)?;
    vol.expect_components(path, 1)?;
    Ok(ScalarField::new(vol.grid()?, vol.values)?)
}

pub fn read_vector(path: &Path) -> Result<VectorField> {
    let vol = read_volume(path)?;
    vol.expect_components(path, 3)?;
    Ok(VectorField::new(vol.grid()?, vol.values)?)
}

pub fn read_indicator(path: &Path) -> Result<IndicatorField> {
    let vol = read_volume(path)?;
    vol.expect_components(path, 1)?;
    IndicatorField::new(vol.grid()?, vol.values).map_err(|e| Error::format(path, "payload", e.to_string()))
}
