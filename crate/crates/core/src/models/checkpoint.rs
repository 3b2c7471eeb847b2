//! Model checkpoints: `params.bin` holds length-prefixed little-endian
//! records `name, trainable, shape, data`; `manifest.json` names the
//! architecture, options, seed and the input schema with vocabulary hashes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{build_model, InputSchema, MceTables, Model, ModelOptions};
use super::spec::ArchitectureSpec;
use crate::compute::Value;
use crate::error::{Error, Result};

pub const PARAMS_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
const MAGIC: &[u8; 8] = b"RDMTPRM1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: ArchitectureSpec,
    pub seed: u64,
    pub options: ModelOptions,
    pub schema: InputSchema,
    pub n_parameters: usize,
    pub param_names: Vec<String>,
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> std::io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

/// Serializes named arrays to the flat binary archive format.
pub fn write_archive<'a, W: Write>(w: W, entries: impl IntoIterator<Item = (&'a str, bool, &'a Value)>) -> Result<()> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut w = BufWriter::new(w);
    let io = |e| Error::io("<archive>", e);
    w.write_all(MAGIC).map_err(io)?;
    write_u64(&mut w, entries.len() as u64).map_err(io)?;
    for (name, trainable, v) in entries {
        write_u32(&mut w, name.len() as u32).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_all(&[u8::from(trainable)]).map_err(io)?;
        write_u32(&mut w, v.shape.len() as u32).map_err(io)?;
        for d in &v.shape {
            write_u64(&mut w, *d as u64).map_err(io)?;
        }
        for x in &v.data {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Reads an archive written by [`write_archive`].
pub fn read_archive<R: Read>(r: R) -> Result<Vec<(String, bool, Value)>> {
    let mut r = BufReader::new(r);
    let io = |e| Error::io("<archive>", e);
    let magic: [u8; 8] = read_array(&mut r).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Data("not a parameter archive".into()));
    }
    let n = u64::from_le_bytes(read_array(&mut r).map_err(io)?) as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = u32::from_le_bytes(read_array(&mut r).map_err(io)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(io)?;
        let name = String::from_utf8(name).map_err(|e| Error::Data(format!("archive name: {e}")))?;
        let [trainable] = read_array::<1, _>(&mut r).map_err(io)?;
        let ndim = u32::from_le_bytes(read_array(&mut r).map_err(io)?) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(read_array(&mut r).map_err(io)?) as usize);
        }
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(f64::from_le_bytes(read_array(&mut r).map_err(io)?));
        }
        out.push((name, trainable != 0, Value::new(data, shape)?));
    }
    Ok(out)
}

impl Model {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            spec: self.network.spec,
            seed: self.seed,
            options: self.network.options,
            schema: self.network.schema.clone(),
            n_parameters: self.n_parameters(),
            param_names: self.params.iter().map(|(_, n, _)| n.to_string()).collect(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(PARAMS_FILE);
        let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
        write_archive(
            f,
            self.params
                .iter()
                .map(|(id, name, v)| (name, self.params.is_trainable(id), v)),
        )?;
        let m = dir.join(MANIFEST_FILE);
        let f = File::create(&m).map_err(|e| Error::io(&m, e))?;
        serde_json::to_writer_pretty(f, &self.manifest())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Model> {
        let m = dir.join(MANIFEST_FILE);
        let manifest: Manifest =
            serde_json::from_reader(BufReader::new(File::open(&m).map_err(|e| Error::io(&m, e))?))?;
        let p = dir.join(PARAMS_FILE);
        let records = read_archive(File::open(&p).map_err(|e| Error::io(&p, e))?)?;
        let placeholder = manifest.spec.needs_mce().then(|| {
            let s = &manifest.schema;
            MceTables {
                dp: Value::zeros(&[s.dp_vocab_size, s.embed_dim(crate::data::Stream::Dp)]),
                mv: Value::zeros(&[s.mv_vocab_size, s.embed_dim(crate::data::Stream::Mv)]),
            }
        });
        let mut model = build_model(
            manifest.spec,
            &manifest.schema,
            &manifest.options,
            manifest.seed,
            placeholder.as_ref(),
        )?;
        if records.len() != model.params.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} arrays, architecture expects {}",
                records.len(),
                model.params.len()
            )));
        }
        for (name, _, value) in records {
            let id = model
                .params
                .id(&name)
                .ok_or_else(|| Error::Data(format!("checkpoint array {name:?} is not part of {}", manifest.spec)))?;
            let slot = model.params.get_mut(id);
            if slot.shape != value.shape {
                return Err(Error::Shape {
                    context: "checkpoint array",
                    expected: slot.shape.clone(),
                    actual: value.shape,
                });
            }
            *slot = value;
        }
        Ok(model)
    }
}
