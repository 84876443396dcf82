//! Self-describing binary checkpoints: little-endian, magic + version +
//! tensor table (name, shape, offset). Embeds the full experiment config
//! and the environment graph so a checkpoint alone reconstructs a runnable
//! trainer. Save -> load -> save is byte-identical.

use super::config::{ConfigError, ExperimentConfig};
use crate::graph::EnvGraph;
use crate::trainer::{Family, Trainer};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"BGCK";
const VERSION: u32 = 1;
const FAMILY_NAMES: [&str; 3] = ["theta", "omega", "phi"];

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    Version(u32),
    #[error("checkpoint/config mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

pub fn config_hash(toml_text: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in toml_text.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct TableEntry {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Canonical tensor table: per agent, parameter tensors in flat order,
/// then per-family optimizer step counters and Adam moments.
fn tensor_table(trainer: &Trainer) -> Vec<TableEntry> {
    let mut table = Vec::new();
    for slot in &trainer.slots {
        let names = slot.params.names();
        for (name, t) in names.iter().zip(slot.params.flat()) {
            table.push(TableEntry {
                name: format!("agent{}/{}", slot.id, name),
                shape: t.shape().to_vec(),
                values: t.data().to_vec(),
            });
        }
        for (f, fname) in FAMILY_NAMES.iter().enumerate() {
            let opt = &slot.opts[f];
            table.push(TableEntry {
                name: format!("agent{}/opt/{}/step", slot.id, fname),
                shape: vec![1],
                values: vec![opt.step as f64],
            });
            for (k, st) in opt.states.iter().enumerate() {
                table.push(TableEntry {
                    name: format!("agent{}/opt/{}/{}.m", slot.id, fname, k),
                    shape: vec![st.m.len()],
                    values: st.m.clone(),
                });
                table.push(TableEntry {
                    name: format!("agent{}/opt/{}/{}.v", slot.id, fname, k),
                    shape: vec![st.v.len()],
                    values: st.v.clone(),
                });
            }
        }
    }
    table
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(buf: &mut Vec<u8>, b: &[u8]) {
    put_u64(buf, b.len() as u64);
    buf.extend_from_slice(b);
}

pub fn save_checkpoint(
    path: &Path,
    trainer: &Trainer,
    config: &ExperimentConfig,
) -> Result<(), CheckpointError> {
    let toml_text = config.to_toml();
    let (update_count, global_step) = trainer.counters();
    let table = tensor_table(trainer);

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    put_u64(&mut buf, config_hash(&toml_text));
    put_u64(&mut buf, global_step);
    put_u64(&mut buf, update_count);
    put_u64(&mut buf, trainer.seed);
    put_bytes(&mut buf, toml_text.as_bytes());

    let graph = &trainer.env.config.graph;
    put_u64(&mut buf, graph.node_count() as u64);
    put_u64(&mut buf, graph.edges().len() as u64);
    for &(u, v) in graph.edges() {
        put_u64(&mut buf, u as u64);
        put_u64(&mut buf, v as u64);
    }

    put_u64(&mut buf, table.len() as u64);
    let mut offset = 0u64;
    for e in &table {
        put_bytes(&mut buf, e.name.as_bytes());
        put_u64(&mut buf, e.shape.len() as u64);
        for &d in &e.shape {
            put_u64(&mut buf, d as u64);
        }
        put_u64(&mut buf, offset);
        put_u64(&mut buf, e.values.len() as u64);
        offset += e.values.len() as u64;
    }
    for e in &table {
        for v in &e.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)?.write_all(&buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Format("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u64()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|e| CheckpointError::Format(format!("bad utf8: {e}")))
    }
}

pub struct LoadedCheckpoint {
    pub config: ExperimentConfig,
    pub trainer: Trainer,
    pub global_step: u64,
    pub update_count: u64,
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { buf: &bytes, pos: 0 };

    if r.take(4)? != MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let stored_hash = r.u64()?;
    let global_step = r.u64()?;
    let update_count = r.u64()?;
    let seed = r.u64()?;
    let toml_text = r.string()?;
    if config_hash(&toml_text) != stored_hash {
        return Err(CheckpointError::Format("config hash mismatch".into()));
    }
    let config = ExperimentConfig::parse_str(&toml_text)?;

    let node_count = r.u64()? as usize;
    let edge_count = r.u64()? as usize;
    let mut edges = Vec::with_capacity(edge_count);
    for _ in 0..edge_count {
        let u = r.u64()? as usize;
        let v = r.u64()? as usize;
        edges.push((u, v));
    }
    let graph = EnvGraph::new(node_count, &edges)
        .map_err(|e| CheckpointError::Format(format!("embedded graph: {e}")))?;

    let entry_count = r.u64()? as usize;
    let mut entries = Vec::with_capacity(entry_count);
    for _ in 0..entry_count {
        let name = r.string()?;
        let ndim = r.u64()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let offset = r.u64()?;
        let len = r.u64()? as usize;
        entries.push((name, shape, offset, len));
    }
    let data_start = r.pos;
    let mut value_of = std::collections::HashMap::new();
    for (name, shape, offset, len) in entries {
        let start = data_start + offset as usize * 8;
        let mut vals = Vec::with_capacity(len);
        let raw = &bytes
            .get(start..start + len * 8)
            .ok_or_else(|| CheckpointError::Format("data section truncated".into()))?;
        for chunk in raw.chunks_exact(8) {
            vals.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        value_of.insert(name, (shape, vals));
    }

    // rebuild the trainer, then overwrite every tensor by name
    let env_config = config.env_config_with(graph);
    let mut trainer = Trainer::new(config.train_config(), env_config, seed);
    for slot in &mut trainer.slots {
        let names = slot.params.names();
        for (name, t) in names.iter().zip(slot.params.flat_mut()) {
            let key = format!("agent{}/{}", slot.id, name);
            let (shape, vals) = value_of
                .get(&key)
                .ok_or_else(|| CheckpointError::Mismatch(format!("missing tensor '{key}'")))?;
            if shape != t.shape() {
                return Err(CheckpointError::Mismatch(format!(
                    "tensor '{key}' shape {:?} != expected {:?}",
                    shape,
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(vals);
        }
        let fam_counts = {
            let fams = slot.params.families();
            [Family::Theta, Family::Omega, Family::Phi]
                .map(|f| fams.iter().filter(|&&x| x == f).count())
        };
        for (f, fname) in FAMILY_NAMES.iter().enumerate() {
            let key = format!("agent{}/opt/{}/step", slot.id, fname);
            let (_, vals) = value_of
                .get(&key)
                .ok_or_else(|| CheckpointError::Mismatch(format!("missing '{key}'")))?;
            slot.opts[f].step = vals[0] as u64;
            for k in 0..fam_counts[f] {
                let mkey = format!("agent{}/opt/{}/{}.m", slot.id, fname, k);
                let vkey = format!("agent{}/opt/{}/{}.v", slot.id, fname, k);
                let m = &value_of
                    .get(&mkey)
                    .ok_or_else(|| CheckpointError::Mismatch(format!("missing '{mkey}'")))?
                    .1;
                let v = &value_of
                    .get(&vkey)
                    .ok_or_else(|| CheckpointError::Mismatch(format!("missing '{vkey}'")))?
                    .1;
                slot.opts[f].states[k].m = m.clone();
                slot.opts[f].states[k].v = v.clone();
            }
        }
    }
    trainer.set_counters(update_count, global_step);
    Ok(LoadedCheckpoint { config, trainer, global_step, update_count })
}
