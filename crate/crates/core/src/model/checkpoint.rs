//! Checkpoint directory: `manifest.txt` (key = value lines) and
//! `tensors.bin` (raw little-endian tensor data in manifest order).
//!
//! ```text
//! format_version = 1
//! dtype = f32
//! config.d_model = 256
//! ...
//! meta.step = 1200
//! tensor.encoder.norm.gain = 256 f32 0
//! ```
//!
//! A tensor line is `<dims joined by x, or "scalar"> <dtype> <byte offset>`.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{Precision, Scalar, Tensor};

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.txt";
const BLOB: &str = "tensors.bin";

/// Optional payload stored next to the model parameters: free-form
/// metadata and named auxiliary tensors (optimizer moments, for instance).
#[derive(Debug, Clone)]
pub struct CheckpointExtras<T> {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T> Default for CheckpointExtras<T> {
    fn default() -> Self {
        CheckpointExtras {
            meta: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T> CheckpointExtras<T> {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn shape_str(shape: &[usize]) -> String {
    if shape.is_empty() {
        "scalar".to_string()
    } else {
        shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
    }
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, dir: &Path) -> Result<()> {
    save_checkpoint_with(model, dir, &CheckpointExtras::default())
}

pub fn save_checkpoint_with<T: Scalar>(
    model: &Model<T>,
    dir: &Path,
    extras: &CheckpointExtras<T>,
) -> Result<()> {
    for (k, _) in &extras.meta {
        if k.contains(['=', '\n']) {
            return Err(Error::validation(format!("invalid metadata key `{k}`")));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dtype = T::PRECISION.name();
    let mut manifest = format!("format_version = {FORMAT_VERSION}\ndtype = {dtype}\n");
    for (k, v) in model.config.pairs() {
        manifest.push_str(&format!("config.{k} = {v}\n"));
    }
    for (k, v) in &extras.meta {
        manifest.push_str(&format!("meta.{k} = {}\n", v.replace('\n', " ")));
    }
    let mut blob = Vec::new();
    let params = model.store.iter().map(|(_, p)| (p.name.as_str(), &p.value));
    let aux = extras.tensors.iter().map(|(n, t)| (n.as_str(), t));
    for (name, t) in params.chain(aux) {
        manifest.push_str(&format!(
            "tensor.{name} = {} {dtype} {}\n",
            shape_str(t.shape()),
            blob.len()
        ));
        for &v in t.data() {
            v.write_le(&mut blob);
        }
    }
    write_atomic(&dir.join(BLOB), &blob)?;
    write_atomic(&dir.join(MANIFEST), manifest.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: Precision,
    offset: usize,
    line_offset: u64,
}

struct Manifest {
    path: PathBuf,
    version: Option<(u32, u64)>,
    dtype: Option<Precision>,
    config: Vec<(String, String, u64)>,
    meta: Vec<(String, String)>,
    tensors: Vec<TensorEntry>,
}

fn parse_manifest(path: &Path, text: &str) -> Result<Manifest> {
    let mut m = Manifest {
        path: path.to_path_buf(),
        version: None,
        dtype: None,
        config: Vec::new(),
        meta: Vec::new(),
        tensors: Vec::new(),
    };
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len() as u64;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| Error::Parse {
            file: path.to_path_buf(),
            offset: at,
            msg,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("expected `key = value`, got `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if k == "format_version" {
            let n = v.parse().map_err(|_| bad(format!("bad format_version `{v}`")))?;
            m.version = Some((n, at));
        } else if k == "dtype" {
            m.dtype = Some(v.parse().map_err(|e: Error| bad(e.to_string()))?);
        } else if let Some(key) = k.strip_prefix("config.") {
            m.config.push((key.to_string(), v.to_string(), at));
        } else if let Some(key) = k.strip_prefix("meta.") {
            m.meta.push((key.to_string(), v.to_string()));
        } else if let Some(name) = k.strip_prefix("tensor.") {
            let fields: Vec<&str> = v.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(bad(format!("tensor entry needs `shape dtype offset`, got `{v}`")));
            }
            let shape = if fields[0] == "scalar" {
                Vec::new()
            } else {
                fields[0]
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(format!("bad shape `{}`", fields[0])))?
            };
            m.tensors.push(TensorEntry {
                name: name.to_string(),
                shape,
                dtype: fields[1].parse().map_err(|e: Error| bad(e.to_string()))?,
                offset: fields[2]
                    .parse()
                    .map_err(|_| bad(format!("bad offset `{}`", fields[2])))?,
                line_offset: at,
            });
        } else {
            return Err(bad(format!("unknown manifest key `{k}`")));
        }
    }
    Ok(m)
}

fn read_tensor<T: Scalar>(e: &TensorEntry, blob: &[u8], blob_path: &Path) -> Result<Tensor<T>> {
    let n: usize = e.shape.iter().product();
    let width = e.dtype.byte_width();
    let end = e.offset.checked_add(n * width).filter(|&end| end <= blob.len());
    let Some(end) = end else {
        return Err(Error::Parse {
            file: blob_path.to_path_buf(),
            offset: e.offset as u64,
            msg: format!("tensor `{}` runs past the end of the data file", e.name),
        });
    };
    let bytes = &blob[e.offset..end];
    let data: Vec<T> = match e.dtype {
        Precision::F32 => bytes.chunks_exact(4).map(|c| T::from_f64_lossy(f32::read_le(c) as f64)).collect(),
        Precision::F64 => bytes.chunks_exact(8).map(|c| T::from_f64_lossy(f64::read_le(c))).collect(),
    };
    Tensor::new(e.shape.clone(), data)
}

pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<Model<T>> {
    Ok(load_checkpoint_with(dir)?.0)
}

/// Loads a model and any extras. Values stored at a different precision
/// are converted to `T`.
pub fn load_checkpoint_with<T: Scalar>(dir: &Path) -> Result<(Model<T>, CheckpointExtras<T>)> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let m = parse_manifest(&mpath, &text)?;
    match m.version {
        None => {
            return Err(Error::Parse {
                file: m.path.clone(),
                offset: 0,
                msg: "missing format_version".into(),
            })
        }
        Some((v, _)) if v != FORMAT_VERSION => {
            return Err(Error::Version {
                found: v,
                expected: FORMAT_VERSION,
            })
        }
        _ => {}
    }
    if m.dtype.is_none() {
        return Err(Error::Parse {
            file: m.path.clone(),
            offset: 0,
            msg: "missing dtype".into(),
        });
    }
    let mut config = ModelConfig::default();
    for (k, v, at) in &m.config {
        config.set(k, v).map_err(|e| Error::Parse {
            file: m.path.clone(),
            offset: *at,
            msg: e.to_string(),
        })?;
    }
    let mut model = Model::<T>::new(config, 0)?;
    let bpath = dir.join(BLOB);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    let mut extras = CheckpointExtras {
        meta: m.meta.clone(),
        tensors: Vec::new(),
    };
    let mut seen = vec![false; model.store.len()];
    for e in &m.tensors {
        match model.store.id(&e.name) {
            Some(id) => {
                let expected = model.store.value(id).shape().to_vec();
                if expected != e.shape {
                    return Err(Error::ShapeMismatch {
                        name: e.name.clone(),
                        expected,
                        found: e.shape.clone(),
                    });
                }
                let t = read_tensor(e, &blob, &bpath)?;
                model.store.set_value(id, t)?;
                seen[id.index()] = true;
            }
            None if e.name.starts_with("optim.") || e.name.starts_with("aux.") => {
                extras.tensors.push((e.name.clone(), read_tensor(e, &blob, &bpath)?));
            }
            None => {
                return Err(Error::Parse {
                    file: m.path.clone(),
                    offset: e.line_offset,
                    msg: format!("tensor `{}` does not belong to a {} model", e.name, model.variant()),
                })
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        let name = model.store.iter().nth(i).map(|(_, p)| p.name.clone()).unwrap_or_default();
        return Err(Error::Parse {
            file: m.path.clone(),
            offset: text.len() as u64,
            msg: format!("parameter `{name}` missing from checkpoint"),
        });
    }
    Ok((model, extras))
}
