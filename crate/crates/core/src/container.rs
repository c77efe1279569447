//! On-disk formats.
//!
//! NTB ("NTB1") holds uncompressed named f32 tensors. HCMP holds encoded
//! layers. Both are little-endian throughout; layouts are documented on the
//! writer functions.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{decode_layer, encode_layer, EncodeParams, EncodedLayer};
use crate::ergodic::{CodebookConfig, DirectionMode};
use crate::error::{Error, Result};

pub const NTB_MAGIC: &[u8; 4] = b"NTB1";
pub const HCMP_MAGIC: &[u8; 4] = b"HCMP";
pub const HCMP_VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<u64>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<u64>, data: Vec<f32>) -> Result<Self> {
        let t = Tensor {
            name: name.into(),
            shape,
            data,
        };
        t.check()?;
        Ok(t)
    }

    fn check(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::domain("tensor name must be non-empty"));
        }
        let n = element_count(&self.shape)
            .ok_or_else(|| Error::domain(format!("shape of {} overflows", self.name)))?;
        if n != self.data.len() as u64 {
            return Err(Error::Dimension(format!(
                "tensor {}: shape holds {n} elements, data has {}",
                self.name,
                self.data.len()
            )));
        }
        Ok(())
    }
}

fn element_count(shape: &[u64]) -> Option<u64> {
    shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d))
}

/// Ordered collection of uniquely named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorBundle {
    pub tensors: Vec<Tensor>,
}

impl TensorBundle {
    pub fn new(tensors: Vec<Tensor>) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &tensors {
            t.check()?;
            if !seen.insert(t.name.as_str()) {
                return Err(Error::domain(format!("duplicate tensor name {}", t.name)));
            }
        }
        Ok(TensorBundle { tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }
}

/// A set of encoded layers.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedModel {
    pub version: u16,
    pub layers: Vec<EncodedLayer>,
}

impl Default for CompressedModel {
    fn default() -> Self {
        CompressedModel {
            version: HCMP_VERSION,
            layers: Vec::new(),
        }
    }
}

impl CompressedModel {
    pub fn new(layers: Vec<EncodedLayer>) -> Result<Self> {
        let mut seen = HashSet::new();
        for l in &layers {
            if !seen.insert(l.name()) {
                return Err(Error::domain(format!("duplicate layer name {}", l.name())));
            }
        }
        Ok(CompressedModel {
            version: HCMP_VERSION,
            layers,
        })
    }

    pub fn layer(&self, name: &str) -> Option<&EncodedLayer> {
        self.layers.iter().find(|l| l.name() == name)
    }
}

/// Optional per-field overrides of [`EncodeParams`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerOverride {
    pub l: Option<f64>,
    pub u: Option<u32>,
    pub max_class: Option<u16>,
    pub direction: Option<DirectionMode>,
}

impl LayerOverride {
    fn apply(&self, base: EncodeParams) -> EncodeParams {
        EncodeParams {
            l: self.l.unwrap_or(base.l),
            u: self.u.unwrap_or(base.u),
            max_class: self.max_class.unwrap_or(base.max_class),
            direction: self.direction.unwrap_or(base.direction),
        }
    }
}

/// Encoder parameters for a whole bundle, with per-layer overrides.
///
/// JSON form: `{"default": {"l": .., "u": .., "max_class": ..}, "layers": {"<name>": {..}}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionPlan {
    #[serde(default)]
    pub default: LayerOverride,
    #[serde(default)]
    pub layers: BTreeMap<String, LayerOverride>,
}

impl CompressionPlan {
    pub fn params_for(&self, base: EncodeParams, name: &str) -> EncodeParams {
        let p = self.default.apply(base);
        match self.layers.get(name) {
            Some(o) => o.apply(p),
            None => p,
        }
    }
}

/// Encodes every tensor of `bundle` on up to `jobs` worker threads.
/// Layer order and bytes are independent of `jobs`.
pub fn compress_bundle(
    bundle: &TensorBundle,
    base: EncodeParams,
    plan: &CompressionPlan,
    jobs: usize,
) -> Result<CompressedModel> {
    let encode = || -> Result<Vec<EncodedLayer>> {
        bundle
            .tensors
            .par_iter()
            .map(|t| encode_layer(&t.data, &t.name, &t.shape, &plan.params_for(base, &t.name)))
            .collect()
    };
    let layers = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::domain(format!("thread pool: {e}")))?
        .install(encode)?;
    CompressedModel::new(layers)
}

pub fn decompress_model(model: &CompressedModel) -> Result<TensorBundle> {
    let tensors = model
        .layers
        .iter()
        .map(|l| {
            Tensor::new(l.name(), l.shape().to_vec(), decode_layer(l)?)
        })
        .collect::<Result<Vec<_>>>()?;
    TensorBundle::new(tensors)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn name(&mut self) -> Result<String> {
        let at = self.pos;
        let len = self.u16("name length")? as usize;
        let raw = self.take(len, "name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| Error::format(at, "name is not valid UTF-8"))?;
        if name.is_empty() {
            return Err(Error::format(at, "empty name"));
        }
        Ok(name.to_string())
    }

    fn shape(&mut self) -> Result<Vec<u64>> {
        let rank = self.u8("rank")? as usize;
        (0..rank).map(|_| self.u64("dimension")).collect()
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(Error::format(
                0,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(magic)),
            ));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.pos, "trailing bytes after last record"));
        }
        Ok(())
    }
}

fn put_name(out: &mut Vec<u8>, name: &str) -> Result<()> {
    let len = u16::try_from(name.len())
        .map_err(|_| Error::domain(format!("name too long: {} bytes", name.len())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    Ok(())
}

fn put_shape(out: &mut Vec<u8>, shape: &[u64]) -> Result<()> {
    let rank = u8::try_from(shape.len())
        .map_err(|_| Error::domain(format!("rank {} exceeds 255", shape.len())))?;
    out.push(rank);
    for d in shape {
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(())
}

/// Serialises a bundle.
///
/// ```text
/// "NTB1" | u32 count | count × (u16 name_len | name | u8 rank | rank × u64 dim | u8 dtype=0 | f32 × n)
/// ```
pub fn encode_ntb(bundle: &TensorBundle) -> Result<Vec<u8>> {
    let count = u32::try_from(bundle.tensors.len())
        .map_err(|_| Error::domain("too many tensors"))?;
    let mut out = Vec::with_capacity(8 + bundle.total_elements() * 4);
    out.extend_from_slice(NTB_MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    for t in &bundle.tensors {
        put_name(&mut out, &t.name)?;
        put_shape(&mut out, &t.shape)?;
        out.push(DTYPE_F32);
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_ntb(buf: &[u8]) -> Result<TensorBundle> {
    let mut r = Reader::new(buf);
    r.magic(NTB_MAGIC)?;
    let count = r.u32("tensor count")?;
    let mut seen = HashSet::new();
    let mut tensors = Vec::new();
    for _ in 0..count {
        let at = r.pos;
        let name = r.name()?;
        if !seen.insert(name.clone()) {
            return Err(Error::format(at, format!("duplicate tensor name {name}")));
        }
        let shape = r.shape()?;
        let dtype_at = r.pos;
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(Error::format(dtype_at, format!("unsupported dtype tag {dtype}")));
        }
        let n = element_count(&shape)
            .and_then(|n| usize::try_from(n).ok())
            .and_then(|n| n.checked_mul(4).map(|_| n))
            .ok_or_else(|| Error::format(at, "shape overflows"))?;
        let raw = r.take(n * 4, "tensor payload")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor { name, shape, data });
    }
    r.finish()?;
    Ok(TensorBundle { tensors })
}

/// Serialises a compressed model.
///
/// ```text
/// "HCMP" | u16 version | u32 layer_count | per layer:
///   u16 name_len | name | u8 rank | rank × u64 dim | u64 element_count | u8 padded
///   | f64 l | u32 U | u16 M | u8 direction | f64 cx | f64 cy | f64 l_f | f64 pad_value
///   | u8 bit_width | u64 payload_len | payload
/// ```
pub fn encode_hcmp(model: &CompressedModel) -> Result<Vec<u8>> {
    let count = u32::try_from(model.layers.len())
        .map_err(|_| Error::domain("too many layers"))?;
    let mut out = Vec::new();
    out.extend_from_slice(HCMP_MAGIC);
    out.extend_from_slice(&model.version.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for layer in &model.layers {
        let c = layer.config();
        put_name(&mut out, layer.name())?;
        put_shape(&mut out, layer.shape())?;
        out.extend_from_slice(&layer.element_count().to_le_bytes());
        out.push(layer.padded() as u8);
        out.extend_from_slice(&c.l.to_le_bytes());
        out.extend_from_slice(&c.u.to_le_bytes());
        out.extend_from_slice(&c.max_class.to_le_bytes());
        out.push(c.direction.tag());
        out.extend_from_slice(&c.centroid[0].to_le_bytes());
        out.extend_from_slice(&c.centroid[1].to_le_bytes());
        out.extend_from_slice(&c.l_f.to_le_bytes());
        out.extend_from_slice(&layer.pad_value().to_le_bytes());
        out.push(layer.bit_width());
        out.extend_from_slice(&(layer.payload().len() as u64).to_le_bytes());
        out.extend_from_slice(layer.payload());
    }
    Ok(out)
}

pub fn decode_hcmp(buf: &[u8]) -> Result<CompressedModel> {
    let mut r = Reader::new(buf);
    r.magic(HCMP_MAGIC)?;
    let version_at = r.pos;
    let version = r.u16("version")?;
    if version != HCMP_VERSION {
        return Err(Error::format(
            version_at,
            format!("unsupported version {version}, expected {HCMP_VERSION}"),
        ));
    }
    let count = r.u32("layer count")?;
    let mut seen = HashSet::new();
    let mut layers = Vec::new();
    for _ in 0..count {
        let at = r.pos;
        let name = r.name()?;
        if !seen.insert(name.clone()) {
            return Err(Error::format(at, format!("duplicate layer name {name}")));
        }
        let shape = r.shape()?;
        let element_count = r.u64("element count")?;
        if element_count_matches(&shape, element_count).is_none() {
            return Err(Error::format(at, "shape does not match element count"));
        }
        let padded = match r.u8("padded flag")? {
            0 => false,
            1 => true,
            v => return Err(Error::format(r.pos - 1, format!("padded flag {v}"))),
        };
        let l = r.f64("l")?;
        let u = r.u32("U")?;
        let max_class = r.u16("M")?;
        let dir_at = r.pos;
        let direction = DirectionMode::from_tag(r.u8("direction")?)
            .ok_or_else(|| Error::format(dir_at, "unknown direction mode"))?;
        let cx = r.f64("centroid x")?;
        let cy = r.f64("centroid y")?;
        let l_f = r.f64("l_f")?;
        let pad_value = r.f64("pad value")?;
        let bit_width = r.u8("bit width")?;
        let len_at = r.pos;
        let payload_len = usize::try_from(r.u64("payload length")?)
            .map_err(|_| Error::format(len_at, "payload length overflows"))?;
        let payload_at = r.pos;
        let payload = r.take(payload_len, "payload")?.to_vec();
        let config = CodebookConfig {
            l,
            u,
            max_class,
            direction,
            centroid: [cx, cy],
            l_f,
        };
        let layer = EncodedLayer::from_parts(
            name, shape, element_count, padded, config, pad_value, bit_width, payload,
        )
        .map_err(|e| match e {
            Error::Format { msg, .. } => Error::format(payload_at, msg),
            Error::Domain(msg) => Error::format(at, msg),
            other => other,
        })?;
        layers.push(layer);
    }
    r.finish()?;
    Ok(CompressedModel { version, layers })
}

fn element_count_matches(shape: &[u64], n: u64) -> Option<()> {
    (element_count(shape)? == n).then_some(())
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::domain(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| -> Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn write_ntb(path: impl AsRef<Path>, bundle: &TensorBundle) -> Result<()> {
    write_atomic(path.as_ref(), &encode_ntb(bundle)?)
}

pub fn read_ntb(path: impl AsRef<Path>) -> Result<TensorBundle> {
    decode_ntb(&fs::read(path)?)
}

pub fn write_hcmp(path: impl AsRef<Path>, model: &CompressedModel) -> Result<()> {
    write_atomic(path.as_ref(), &encode_hcmp(model)?)
}

pub fn read_hcmp(path: impl AsRef<Path>) -> Result<CompressedModel> {
    decode_hcmp(&fs::read(path)?)
}
