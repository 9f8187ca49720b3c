//! Flat binary parameter format.
//!
//! All integers are little-endian `u32`; strings are a `u32` byte length
//! followed by UTF-8 bytes.
//!
//! ```text
//! magic      4 bytes  "SGAT"
//! version    u32      1
//! arch tag   string   e.g. "unet" or "advanced_attention_unet+d6"
//! n_fields   u32
//!   key      string
//!   value    string   (repeated n_fields times)
//! n_params   u32
//!   name     string
//!   rank     u32
//!   dims     u32 x rank
//!   values   f32 x product(dims)   (repeated n_params times)
//! ```
//!
//! Generator parameters are prefixed `gen.`, discriminator parameters `disc.`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::arch::discriminator::{Discriminator, DiscriminatorDesign, DiscriminatorSpec};
use crate::arch::generator::{Generator, GeneratorSpec, Topology};
use crate::error::{Error, Result};
use crate::nn::{ParamStore, UpsampleMode};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SGAT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch_tag: String,
    pub fields: BTreeMap<String, String>,
    pub params: Vec<(String, Tensor<f32>)>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(format!("bad UTF-8 in checkpoint: {e}")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION as usize);
        put_str(&mut out, &self.arch_tag);
        put_u32(&mut out, self.fields.len());
        for (k, v) in &self.fields {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        put_u32(&mut out, self.params.len());
        for (name, t) in &self.params {
            put_str(&mut out, name);
            put_u32(&mut out, t.rank());
            for &d in t.shape() {
                put_u32(&mut out, d);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let arch_tag = r.string()?;
        let mut fields = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            fields.insert(k, r.string()?);
        }
        let n = r.u32()?;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u32()?;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let count: usize = dims.iter().product();
            let raw = r.take(count * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.push((name, Tensor::from_vec(&dims, data)?));
        }
        if r.pos != buf.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self {
            arch_tag,
            fields,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    fn field(&self, key: &str) -> Result<&str> {
        self.fields
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks field `{key}`")))
    }

    fn field_usize(&self, key: &str) -> Result<usize> {
        self.field(key)?
            .parse()
            .map_err(|_| Error::Format(format!("field `{key}` is not an integer")))
    }
}

/// A generator and, for adversarial runs, its discriminator.
#[derive(Debug, Clone)]
pub struct SavedModel {
    pub generator: Generator<f32>,
    pub discriminator: Option<Discriminator<f32>>,
    pub height: usize,
    pub width: usize,
}

fn upsample_tag(mode: UpsampleMode) -> &'static str {
    match mode {
        UpsampleMode::Nearest => "nearest",
        UpsampleMode::Transposed => "transposed",
    }
}

fn store_params(prefix: &str, store: &ParamStore<f32>, out: &mut Vec<(String, Tensor<f32>)>) {
    out.extend(store.iter().map(|p| (format!("{prefix}{}", p.name), p.value.clone())));
}

fn load_params(prefix: &str, store: &mut ParamStore<f32>, ckpt: &Checkpoint) -> Result<()> {
    let mut expected = 0;
    for (name, t) in &ckpt.params {
        if let Some(local) = name.strip_prefix(prefix) {
            store.set_by_name(local, t.clone())?;
            expected += 1;
        }
    }
    if expected != store.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {expected} `{prefix}` parameters, model has {}",
            store.len()
        )));
    }
    Ok(())
}

impl SavedModel {
    pub fn arch_tag(&self) -> String {
        match &self.discriminator {
            Some(d) => format!("{}+{}", self.generator.spec().topology, d.spec().design),
            None => self.generator.spec().topology.to_string(),
        }
    }

    /// Checkpoint with the given extra fields recorded next to the spec.
    pub fn to_checkpoint(&self, extra: &BTreeMap<String, String>) -> Checkpoint {
        let spec = self.generator.spec();
        let mut fields = extra.clone();
        fields.insert("topology".into(), spec.topology.to_string());
        fields.insert("base_channels".into(), spec.base_channels.to_string());
        fields.insert("in_channels".into(), spec.in_channels.to_string());
        fields.insert("out_channels".into(), spec.out_channels.to_string());
        fields.insert("upsample".into(), upsample_tag(spec.upsample).into());
        fields.insert("height".into(), self.height.to_string());
        fields.insert("width".into(), self.width.to_string());
        let mut params = Vec::new();
        store_params("gen.", self.generator.params(), &mut params);
        if let Some(d) = &self.discriminator {
            fields.insert("discriminator".into(), d.spec().design.to_string());
            fields.insert("disc_input_width".into(), d.spec().input_width.to_string());
            fields.insert("dropout".into(), d.spec().dropout.to_string());
            store_params("disc.", d.params(), &mut params);
        }
        Checkpoint {
            arch_tag: self.arch_tag(),
            fields,
            params,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let topology: Topology = ckpt.field("topology")?.parse()?;
        let mut spec = GeneratorSpec::new(topology, ckpt.field_usize("base_channels")?);
        spec.in_channels = ckpt.field_usize("in_channels")?;
        spec.out_channels = ckpt.field_usize("out_channels")?;
        spec.upsample = match ckpt.field("upsample")? {
            "nearest" => UpsampleMode::Nearest,
            "transposed" => UpsampleMode::Transposed,
            other => return Err(Error::Format(format!("unknown upsample mode `{other}`"))),
        };
        let mut generator = Generator::build(spec, 0)?;
        load_params("gen.", generator.params_mut(), ckpt)?;
        let discriminator = match ckpt.fields.get("discriminator") {
            None => None,
            Some(tag) => {
                let design: DiscriminatorDesign = tag.parse()?;
                let mut dspec = DiscriminatorSpec::new(design, ckpt.field_usize("disc_input_width")?);
                dspec.dropout = ckpt
                    .field("dropout")?
                    .parse()
                    .map_err(|_| Error::Format("field `dropout` is not a number".into()))?;
                let mut d = Discriminator::build(dspec, 0)?;
                load_params("disc.", d.params_mut(), ckpt)?;
                Some(d)
            }
        };
        Ok(Self {
            generator,
            discriminator,
            height: ckpt.field_usize("height")?,
            width: ckpt.field_usize("width")?,
        })
    }
}
