//! Self-describing hierarchical array container (`.nc4` product files).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "GSRCNT01"
//! header_len u64
//! header     JSON: dimensions, attributes, variables (name, dtype, dims,
//!            attributes, byte offset, byte length) and nested groups
//! payload    concatenated variable data, row-major
//! checksum   32 bytes SHA-256 over everything above
//! ```
//!
//! The model is the netCDF-4 data model restricted to what the products use:
//! named dimensions, typed attributes, typed n-d variables and groups.
//! [`to_cdl`] renders a dataset as netCDF CDL text, which `ncgen -k nc4`
//! converts to a genuine netCDF-4 file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const MAGIC: &[u8; 8] = b"GSRCNT01";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("not a container file (bad magic)")]
    BadMagic,
    #[error("container checksum mismatch")]
    Checksum,
    #[error("truncated container")]
    Truncated,
    #[error("malformed container header: {0}")]
    Header(String),
    #[error("variable {name}: {msg}")]
    Variable { name: String, msg: String },
    #[error("missing variable {0}")]
    MissingVariable(String),
    #[error("missing attribute {0}")]
    MissingAttribute(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrValue {
    Str(String),
    F64(f64),
    I64(i64),
}

impl From<&str> for AttrValue {
    fn from(s: &str) -> Self {
        AttrValue::Str(s.to_string())
    }
}

impl From<String> for AttrValue {
    fn from(s: String) -> Self {
        AttrValue::Str(s)
    }
}

impl From<f64> for AttrValue {
    fn from(v: f64) -> Self {
        AttrValue::F64(v)
    }
}

impl From<i64> for AttrValue {
    fn from(v: i64) -> Self {
        AttrValue::I64(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    I64(Vec<i64>),
    U32(Vec<u32>),
    U8(Vec<u8>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::F32(v) => v.len(),
            ArrayData::I64(v) => v.len(),
            ArrayData::U32(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F64(_) => "f64",
            ArrayData::F32(_) => "f32",
            ArrayData::I64(_) => "i64",
            ArrayData::U32(_) => "u32",
            ArrayData::U8(_) => "u8",
        }
    }

    fn write(&self, out: &mut Vec<u8>) {
        match self {
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::U8(v) => out.extend_from_slice(v),
        }
    }

    fn read(dtype: &str, bytes: &[u8]) -> Option<Self> {
        fn chunks<const N: usize, T>(b: &[u8], f: impl Fn([u8; N]) -> T) -> Option<Vec<T>> {
            if b.len() % N != 0 {
                return None;
            }
            Some(b.chunks_exact(N).map(|c| f(c.try_into().unwrap())).collect())
        }
        Some(match dtype {
            "f64" => ArrayData::F64(chunks(bytes, f64::from_le_bytes)?),
            "f32" => ArrayData::F32(chunks(bytes, f32::from_le_bytes)?),
            "i64" => ArrayData::I64(chunks(bytes, i64::from_le_bytes)?),
            "u32" => ArrayData::U32(chunks(bytes, u32::from_le_bytes)?),
            "u8" => ArrayData::U8(bytes.to_vec()),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub dims: Vec<String>,
    pub attrs: BTreeMap<String, AttrValue>,
    pub data: ArrayData,
}

impl Variable {
    pub fn new(name: impl Into<String>, dims: &[&str], data: ArrayData) -> Self {
        Self {
            name: name.into(),
            dims: dims.iter().map(|d| d.to_string()).collect(),
            attrs: BTreeMap::new(),
            data,
        }
    }

    pub fn with_attr(mut self, key: &str, value: impl Into<AttrValue>) -> Self {
        self.attrs.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    /// Dimension names and lengths in declaration order.
    pub dims: Vec<(String, usize)>,
    pub attrs: BTreeMap<String, AttrValue>,
    pub vars: Vec<Variable>,
    pub groups: Vec<(String, Dataset)>,
}

#[derive(Serialize, Deserialize)]
struct VarHeader {
    name: String,
    dtype: String,
    dims: Vec<String>,
    attrs: BTreeMap<String, AttrValue>,
    offset: u64,
    length: u64,
}

#[derive(Serialize, Deserialize)]
struct GroupHeader {
    dims: Vec<(String, usize)>,
    attrs: BTreeMap<String, AttrValue>,
    vars: Vec<VarHeader>,
    groups: Vec<(String, GroupHeader)>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_dim(&mut self, name: &str, len: usize) -> &mut Self {
        if let Some(slot) = self.dims.iter_mut().find(|(n, _)| n == name) {
            slot.1 = len;
        } else {
            self.dims.push((name.to_string(), len));
        }
        self
    }

    pub fn set_attr(&mut self, key: &str, value: impl Into<AttrValue>) -> &mut Self {
        self.attrs.insert(key.to_string(), value.into());
        self
    }

    pub fn add_var(&mut self, var: Variable) -> &mut Self {
        self.vars.push(var);
        self
    }

    pub fn dim(&self, name: &str) -> Option<usize> {
        self.dims.iter().find(|(n, _)| n == name).map(|(_, l)| *l)
    }

    pub fn var(&self, name: &str) -> Result<&Variable, ContainerError> {
        self.vars
            .iter()
            .find(|v| v.name == name)
            .ok_or_else(|| ContainerError::MissingVariable(name.to_string()))
    }

    pub fn group(&self, name: &str) -> Option<&Dataset> {
        self.groups.iter().find(|(n, _)| n == name).map(|(_, g)| g)
    }

    pub fn attr_str(&self, key: &str) -> Result<&str, ContainerError> {
        match self.attrs.get(key) {
            Some(AttrValue::Str(s)) => Ok(s),
            _ => Err(ContainerError::MissingAttribute(key.to_string())),
        }
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64], ContainerError> {
        match &self.var(name)?.data {
            ArrayData::F64(v) => Ok(v),
            other => Err(type_err(name, "f64", other)),
        }
    }

    pub fn f32s(&self, name: &str) -> Result<&[f32], ContainerError> {
        match &self.var(name)?.data {
            ArrayData::F32(v) => Ok(v),
            other => Err(type_err(name, "f32", other)),
        }
    }

    pub fn i64s(&self, name: &str) -> Result<&[i64], ContainerError> {
        match &self.var(name)?.data {
            ArrayData::I64(v) => Ok(v),
            other => Err(type_err(name, "i64", other)),
        }
    }

    pub fn u32s(&self, name: &str) -> Result<&[u32], ContainerError> {
        match &self.var(name)?.data {
            ArrayData::U32(v) => Ok(v),
            other => Err(type_err(name, "u32", other)),
        }
    }

    pub fn u8s(&self, name: &str) -> Result<&[u8], ContainerError> {
        match &self.var(name)?.data {
            ArrayData::U8(v) => Ok(v),
            other => Err(type_err(name, "u8", other)),
        }
    }

    fn check_shapes(&self) -> Result<(), ContainerError> {
        for v in &self.vars {
            let mut expected = 1usize;
            for d in &v.dims {
                let len = self.dim(d).ok_or_else(|| ContainerError::Variable {
                    name: v.name.clone(),
                    msg: format!("undeclared dimension {d}"),
                })?;
                expected *= len;
            }
            if expected != v.data.len() {
                return Err(ContainerError::Variable {
                    name: v.name.clone(),
                    msg: format!("expected {expected} values, found {}", v.data.len()),
                });
            }
        }
        self.groups.iter().try_for_each(|(_, g)| g.check_shapes())
    }

    fn header(&self, payload: &mut Vec<u8>) -> GroupHeader {
        let vars = self
            .vars
            .iter()
            .map(|v| {
                let offset = payload.len() as u64;
                v.data.write(payload);
                VarHeader {
                    name: v.name.clone(),
                    dtype: v.data.dtype().to_string(),
                    dims: v.dims.clone(),
                    attrs: v.attrs.clone(),
                    offset,
                    length: payload.len() as u64 - offset,
                }
            })
            .collect();
        GroupHeader {
            dims: self.dims.clone(),
            attrs: self.attrs.clone(),
            vars,
            groups: self.groups.iter().map(|(n, g)| (n.clone(), g.header(payload))).collect(),
        }
    }

    fn from_header(h: GroupHeader, payload: &[u8]) -> Result<Self, ContainerError> {
        let mut vars = Vec::with_capacity(h.vars.len());
        for v in h.vars {
            let (start, end) = (v.offset as usize, (v.offset + v.length) as usize);
            let bytes = payload.get(start..end).ok_or(ContainerError::Truncated)?;
            let data = ArrayData::read(&v.dtype, bytes).ok_or_else(|| ContainerError::Variable {
                name: v.name.clone(),
                msg: format!("bad dtype {} or length", v.dtype),
            })?;
            vars.push(Variable { name: v.name, dims: v.dims, attrs: v.attrs, data });
        }
        let mut groups = Vec::new();
        for (n, g) in h.groups {
            groups.push((n, Dataset::from_header(g, payload)?));
        }
        let ds = Dataset { dims: h.dims, attrs: h.attrs, vars, groups };
        ds.check_shapes()?;
        Ok(ds)
    }

    /// Serializes to the container byte layout; output is a pure function of `self`.
    pub fn to_bytes(&self) -> Result<Vec<u8>, ContainerError> {
        self.check_shapes()?;
        let mut payload = Vec::new();
        let header = self.header(&mut payload);
        let header = serde_json::to_vec(&header).map_err(|e| ContainerError::Header(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + header.len() + payload.len() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        if bytes.len() < 16 + 32 {
            return Err(ContainerError::Truncated);
        }
        if &bytes[..8] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(ContainerError::Checksum);
        }
        let hlen = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
        let header = body.get(16..16 + hlen).ok_or(ContainerError::Truncated)?;
        let header: GroupHeader =
            serde_json::from_slice(header).map_err(|e| ContainerError::Header(e.to_string()))?;
        Dataset::from_header(header, &body[16 + hlen..])
    }

    pub fn read(path: &Path) -> Result<Self, ContainerError> {
        let bytes = fs::read(path).map_err(|source| ContainerError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }
}

fn type_err(name: &str, want: &str, got: &ArrayData) -> ContainerError {
    ContainerError::Variable { name: name.to_string(), msg: format!("expected {want}, stored as {}", got.dtype()) }
}

/// Renders `ds` as netCDF CDL (input for `ncgen -k nc4`).
pub fn to_cdl(ds: &Dataset, name: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "netcdf {} {{", cdl_name(name));
    write_group(&mut out, ds, 0);
    out.push_str("}\n");
    out
}

fn cdl_name(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect()
}

fn cdl_attr(v: &AttrValue) -> String {
    match v {
        AttrValue::Str(s) => format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\"")),
        AttrValue::F64(x) => format!("{}", cdl_f64(*x)),
        AttrValue::I64(x) => format!("{x}LL"),
    }
}

fn cdl_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{x:.1}")
    } else {
        format!("{x:e}")
    }
}

fn write_group(out: &mut String, ds: &Dataset, depth: usize) {
    let ind = "\t".repeat(depth);
    if !ds.dims.is_empty() {
        let _ = writeln!(out, "{ind}dimensions:");
        for (n, l) in &ds.dims {
            let _ = writeln!(out, "{ind}\t{} = {l} ;", cdl_name(n));
        }
    }
    if !ds.vars.is_empty() {
        let _ = writeln!(out, "{ind}variables:");
        for v in &ds.vars {
            let ty = match v.data {
                ArrayData::F64(_) => "double",
                ArrayData::F32(_) => "float",
                ArrayData::I64(_) => "int64",
                ArrayData::U32(_) => "uint",
                ArrayData::U8(_) => "ubyte",
            };
            let dims: Vec<String> = v.dims.iter().map(|d| cdl_name(d)).collect();
            let _ = writeln!(out, "{ind}\t{ty} {}({}) ;", cdl_name(&v.name), dims.join(", "));
            for (k, a) in &v.attrs {
                let _ = writeln!(out, "{ind}\t\t{}:{} = {} ;", cdl_name(&v.name), k, cdl_attr(a));
            }
        }
    }
    if !ds.attrs.is_empty() {
        let _ = writeln!(out, "\n{ind}// global attributes:");
        for (k, a) in &ds.attrs {
            let _ = writeln!(out, "{ind}\t\t:{k} = {} ;", cdl_attr(a));
        }
    }
    if ds.vars.iter().any(|v| !v.data.is_empty()) {
        let _ = writeln!(out, "{ind}data:");
        for v in ds.vars.iter().filter(|v| !v.data.is_empty()) {
            let vals: Vec<String> = match &v.data {
                ArrayData::F64(d) => d.iter().map(|x| cdl_f64(*x)).collect(),
                ArrayData::F32(d) => d.iter().map(|x| cdl_f64(*x as f64)).collect(),
                ArrayData::I64(d) => d.iter().map(|x| x.to_string()).collect(),
                ArrayData::U32(d) => d.iter().map(|x| x.to_string()).collect(),
                ArrayData::U8(d) => d.iter().map(|x| x.to_string()).collect(),
            };
            let _ = writeln!(out, "{ind} {} = {} ;", cdl_name(&v.name), vals.join(", "));
        }
    }
    for (n, g) in &ds.groups {
        let _ = writeln!(out, "{ind}group: {} {{", cdl_name(n));
        write_group(out, g, depth + 1);
        let _ = writeln!(out, "{ind}}} // group {}", cdl_name(n));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        let mut ds = Dataset::new();
        ds.add_dim("obs", 3).set_attr("time_start", "2022-05-18T00:00:00Z");
        ds.add_var(
            Variable::new("soil_moisture", &["obs"], ArrayData::F64(vec![0.1, -9999.0, 0.3]))
                .with_attr("_FillValue", -9999.0),
        );
        ds.add_var(Variable::new("prn", &["obs"], ArrayData::U8(vec![1, 2, 3])));
        let mut g = Dataset::new();
        g.add_dim("x", 2).add_var(Variable::new("v", &["x"], ArrayData::U32(vec![7, 8])));
        ds.groups.push(("meta".into(), g));
        ds
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let ds = sample();
        let bytes = ds.to_bytes().unwrap();
        let back = Dataset::from_bytes(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.f64s("soil_moisture").unwrap()[1], -9999.0);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().to_bytes().unwrap();
        let n = bytes.len();
        bytes[n / 2] ^= 0xff;
        assert!(matches!(Dataset::from_bytes(&bytes), Err(ContainerError::Checksum)));
        bytes[0] = b'X';
        assert!(matches!(Dataset::from_bytes(&bytes), Err(ContainerError::BadMagic)));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut ds = Dataset::new();
        ds.add_dim("obs", 2);
        ds.add_var(Variable::new("a", &["obs"], ArrayData::F64(vec![1.0])));
        assert!(ds.to_bytes().is_err());
    }

    #[test]
    fn cdl_rendering() {
        let cdl = to_cdl(&sample(), "aggregateSoilMoisture_muon_CY003_20220518_v1.0");
        assert!(cdl.starts_with("netcdf aggregateSoilMoisture_muon_CY003_20220518_v1_0 {"));
        assert!(cdl.contains("double soil_moisture(obs) ;"));
        assert!(cdl.contains("soil_moisture:_FillValue = -9999.0 ;"));
        assert!(cdl.contains(":time_start = \"2022-05-18T00:00:00Z\" ;"));
        assert!(cdl.contains("group: meta {"));
    }
}

/// Result of writing a file that may already exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteOutcome {
    Created,
    Rewritten,
    Unchanged,
}

/// Writes through a temporary sibling and rename, skipping the write when the
/// existing bytes are identical.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<WriteOutcome> {
    let existed = path.exists();
    if existed && fs::read(path)? == bytes {
        return Ok(WriteOutcome::Unchanged);
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(if existed { WriteOutcome::Rewritten } else { WriteOutcome::Created })
}
