//! Best-weights snapshot and its on-disk form: a text header of `key=value`
//! lines closed by `end_header`, then length-prefixed little-endian records
//! `(name, dims, f32 values)`.

use std::fs;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use super::nets::{ParamSet, Role, UNetConfig};
use super::tensor::Tensor;
use super::train::Mode;
use crate::error::{Error, Result};

const MAGIC: &str = "STRAIGHTKIT-CHECKPOINT v1";
const END: &str = "end_header";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub generator: ParamSet<f32>,
    pub unet: UNetConfig,
    /// `(height, width)` of the training images.
    pub canvas: (usize, usize),
    pub best_val_l1: f64,
    pub check_idx: usize,
    pub epoch: usize,
    /// Learning rate in effect when the weights were saved.
    pub lr: f64,
    pub mode: Mode,
    pub config: Vec<(String, String)>,
}

impl Checkpoint {
    /// Freshly initialised weights without any training metadata.
    pub fn untrained(unet: UNetConfig, canvas: (usize, usize), generator: ParamSet<f32>) -> Self {
        Self {
            generator,
            unet,
            canvas,
            best_val_l1: f64::INFINITY,
            check_idx: 0,
            epoch: 0,
            lr: 0.0,
            mode: Mode::UNetOnly,
            config: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut header = format!("{MAGIC}\n");
        let fields = [
            ("best_val_l1", format!("{:e}", self.best_val_l1)),
            ("check_idx", self.check_idx.to_string()),
            ("epoch", self.epoch.to_string()),
            ("lr", format!("{:e}", self.lr)),
            ("canvas_height", self.canvas.0.to_string()),
            ("canvas_width", self.canvas.1.to_string()),
            ("depth", self.unet.depth.to_string()),
            ("base_channels", self.unet.base_channels.to_string()),
            ("dropout_levels", self.unet.dropout_levels.to_string()),
            ("mode", self.mode.to_string()),
        ];
        for (k, v) in fields {
            header.push_str(&format!("{k}={v}\n"));
        }
        for (k, v) in &self.config {
            header.push_str(&format!("config.{k}={v}\n"));
        }
        header.push_str(END);
        header.push('\n');
        out.extend_from_slice(header.as_bytes());

        out.extend_from_slice(&(self.generator.len() as u32).to_le_bytes());
        for (name, t) in self.generator.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&4u32.to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |detail: String| Error::format("checkpoint", detail);
        let mut cursor = std::io::Cursor::new(bytes);
        let mut line = String::new();
        cursor.read_line(&mut line).map_err(|e| bad(e.to_string()))?;
        if line.trim_end() != MAGIC {
            return Err(bad(format!("unrecognised header {:?}", line.trim_end())));
        }
        let mut fields = std::collections::BTreeMap::new();
        let mut config = Vec::new();
        loop {
            line.clear();
            if cursor.read_line(&mut line).map_err(|e| bad(e.to_string()))? == 0 {
                return Err(bad("header is not terminated".into()));
            }
            let l = line.trim_end_matches('\n');
            if l == END {
                break;
            }
            let (k, v) = l.split_once('=').ok_or_else(|| bad(format!("malformed header line {l:?}")))?;
            match k.strip_prefix("config.") {
                Some(key) => config.push((key.to_string(), v.to_string())),
                None => {
                    fields.insert(k.to_string(), v.to_string());
                }
            }
        }
        let field = |k: &str| fields.get(k).ok_or_else(|| bad(format!("missing header field {k}")));
        let num = |k: &str| -> Result<usize> { field(k)?.parse().map_err(|_| bad(format!("bad {k}"))) };
        let real = |k: &str| -> Result<f64> { field(k)?.parse().map_err(|_| bad(format!("bad {k}"))) };

        let u32_at = |cursor: &mut std::io::Cursor<&[u8]>| -> Result<u32> {
            let mut b = [0u8; 4];
            cursor.read_exact(&mut b).map_err(|_| bad("truncated record".into()))?;
            Ok(u32::from_le_bytes(b))
        };
        let count = u32_at(&mut cursor)?;
        let mut generator = ParamSet::new(Role::Generator);
        for _ in 0..count {
            let len = u32_at(&mut cursor)? as usize;
            let mut name = vec![0u8; len];
            cursor.read_exact(&mut name).map_err(|_| bad("truncated name".into()))?;
            let name = String::from_utf8(name).map_err(|_| bad("non-UTF-8 tensor name".into()))?;
            let ndim = u32_at(&mut cursor)? as usize;
            if ndim != 4 {
                return Err(bad(format!("tensor {name} has {ndim} dims")));
            }
            let mut shape = [0usize; 4];
            for d in &mut shape {
                *d = u32_at(&mut cursor)? as usize;
            }
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            cursor.read_exact(&mut raw).map_err(|_| bad(format!("truncated values of {name}")))?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            generator.insert(name, Tensor::from_vec(shape, values)?)?;
        }
        if (cursor.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes after the last record".into()));
        }
        Ok(Self {
            generator,
            unet: UNetConfig {
                depth: num("depth")?,
                base_channels: num("base_channels")?,
                dropout_levels: num("dropout_levels")?,
            },
            canvas: (num("canvas_height")?, num("canvas_width")?),
            best_val_l1: real("best_val_l1")?,
            check_idx: num("check_idx")?,
            epoch: num("epoch")?,
            lr: real("lr")?,
            mode: field("mode")?.parse()?,
            config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { what, detail } => Error::Format { what, detail: format!("{}: {detail}", path.display()) },
            other => other,
        })
    }
}
