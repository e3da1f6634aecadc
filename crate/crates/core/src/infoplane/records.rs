//! Binary activation records.
//!
//! Every file starts with an 8-byte magic, followed by little-endian `u32`
//! header fields and the payload:
//!
//! * `probe.bin`: magic `DSPROBE1`, then `n, T, D`, then `n*T*D` `f64`
//!   inputs (sample, timestep, feature order) and `n*T` `u32` labels.
//! * `phase{p}_epoch{eee}_layer{l}.bin`: magic `DSACTV01`, then
//!   `phase, layer, epoch, n, T, units`, then `n*T*units` `f64` states
//!   (sample, timestep, unit order).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::SequenceWindow;
use crate::error::{Error, Result};
use crate::nn::LayerActivations;

const PROBE_MAGIC: &[u8; 8] = b"DSPROBE1";
const ACT_MAGIC: &[u8; 8] = b"DSACTV01";

/// Inputs and labels of the fixed probe batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeData {
    pub samples: usize,
    pub timesteps: usize,
    pub features: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<usize>,
}

impl ProbeData {
    pub fn from_windows(windows: &[SequenceWindow]) -> Result<Self> {
        let first = windows.first().ok_or_else(|| Error::Contract("empty probe batch".into()))?;
        Ok(ProbeData {
            samples: windows.len(),
            timesteps: first.timesteps(),
            features: first.features(),
            inputs: windows.iter().flat_map(|w| w.inputs.iter().copied()).collect(),
            targets: windows.iter().flat_map(|w| w.targets.iter().copied()).collect(),
        })
    }

    /// Label of every sample at 1-based timestep `t`.
    pub fn labels_at(&self, t: usize) -> Vec<usize> {
        (0..self.samples).map(|i| self.targets[i * self.timesteps + t - 1]).collect()
    }

    /// `[n, t * D]` inputs of timesteps `1..=t`.
    pub fn input_prefix(&self, t: usize) -> Vec<f64> {
        let row = self.timesteps * self.features;
        let mut v = Vec::with_capacity(self.samples * t * self.features);
        for i in 0..self.samples {
            v.extend_from_slice(&self.inputs[i * row..i * row + t * self.features]);
        }
        v
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::serde(self.path, "truncated record file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn magic(&mut self, m: &[u8; 8]) -> Result<()> {
        if self.take(8)? != m {
            return Err(Error::serde(self.path, "bad magic"));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::serde(self.path, "trailing bytes in record file"));
        }
        Ok(())
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_probe(path: &Path, probe: &ProbeData) -> Result<()> {
    let mut out = Vec::with_capacity(20 + probe.inputs.len() * 8 + probe.targets.len() * 4);
    out.extend_from_slice(PROBE_MAGIC);
    for v in [probe.samples, probe.timesteps, probe.features] {
        push_u32(&mut out, v);
    }
    probe.inputs.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    probe.targets.iter().for_each(|&v| push_u32(&mut out, v));
    write_file(path, &out)
}

pub fn read_probe(path: &Path) -> Result<ProbeData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    r.magic(PROBE_MAGIC)?;
    let (n, t, d) = (r.u32()?, r.u32()?, r.u32()?);
    let inputs = r.f64s(n * t * d)?;
    let targets = (0..n * t).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(ProbeData {
        samples: n,
        timesteps: t,
        features: d,
        inputs,
        targets,
    })
}

pub fn write_activations(path: &Path, phase: u8, rec: &LayerActivations) -> Result<()> {
    let mut out = Vec::with_capacity(32 + rec.values.len() * 8);
    out.extend_from_slice(ACT_MAGIC);
    for v in [usize::from(phase), rec.layer, rec.epoch, rec.samples, rec.timesteps, rec.units] {
        push_u32(&mut out, v);
    }
    rec.values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    write_file(path, &out)
}

pub fn read_activations(path: &Path) -> Result<(u8, LayerActivations)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    r.magic(ACT_MAGIC)?;
    let phase = r.u32()? as u8;
    let (layer, epoch, samples, timesteps, units) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let values = r.f64s(samples * timesteps * units)?;
    r.finish()?;
    Ok((
        phase,
        LayerActivations {
            layer,
            epoch,
            samples,
            timesteps,
            units,
            values,
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordKey {
    pub phase: u8,
    pub epoch: usize,
    pub layer: usize,
}

/// A directory of activation records plus the probe batch.
#[derive(Clone, Debug)]
pub struct RecordStore {
    dir: PathBuf,
    index: BTreeMap<RecordKey, PathBuf>,
}

impl RecordStore {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(RecordStore {
            dir: dir.to_path_buf(),
            index: BTreeMap::new(),
        })
    }

    pub fn file_name(key: RecordKey) -> String {
        format!("phase{}_epoch{:03}_layer{}.bin", key.phase, key.epoch, key.layer)
    }

    pub fn probe_path(&self) -> PathBuf {
        self.dir.join("probe.bin")
    }

    pub fn save_probe(&self, probe: &ProbeData) -> Result<()> {
        write_probe(&self.probe_path(), probe)
    }

    pub fn probe(&self) -> Result<ProbeData> {
        read_probe(&self.probe_path())
    }

    pub fn save(&mut self, phase: u8, rec: &LayerActivations) -> Result<()> {
        let key = RecordKey {
            phase,
            epoch: rec.epoch,
            layer: rec.layer,
        };
        let path = self.dir.join(Self::file_name(key));
        write_activations(&path, phase, rec)?;
        self.index.insert(key, path);
        Ok(())
    }

    /// Indexes an existing record directory.
    pub fn open(dir: &Path) -> Result<Self> {
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut index = BTreeMap::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            if let Some(key) = parse_name(name) {
                index.insert(key, path);
            }
        }
        let store = RecordStore {
            dir: dir.to_path_buf(),
            index,
        };
        if store.index.is_empty() || !store.probe_path().exists() {
            return Err(Error::Config(format!(
                "no activation records (probe.bin and phase*_epoch*_layer*.bin) in {}",
                dir.display()
            )));
        }
        Ok(store)
    }

    pub fn keys(&self) -> impl Iterator<Item = &RecordKey> {
        self.index.keys()
    }

    pub fn epochs(&self, phase: u8, layer: usize) -> Vec<usize> {
        self.index
            .keys()
            .filter(|k| k.phase == phase && k.layer == layer)
            .map(|k| k.epoch)
            .collect()
    }

    pub fn layers(&self, phase: u8) -> Vec<usize> {
        let mut v: Vec<usize> = self.index.keys().filter(|k| k.phase == phase).map(|k| k.layer).collect();
        v.dedup();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn load(&self, key: RecordKey) -> Result<LayerActivations> {
        let path = self
            .index
            .get(&key)
            .ok_or_else(|| Error::Contract(format!("missing record {}", Self::file_name(key))))?;
        let (phase, rec) = read_activations(path)?;
        if phase != key.phase || rec.epoch != key.epoch || rec.layer != key.layer {
            return Err(Error::serde(path, "record header does not match its file name"));
        }
        Ok(rec)
    }
}

fn parse_name(name: &str) -> Option<RecordKey> {
    let rest = name.strip_prefix("phase")?.strip_suffix(".bin")?;
    let (phase, rest) = rest.split_once("_epoch")?;
    let (epoch, layer) = rest.split_once("_layer")?;
    Some(RecordKey {
        phase: phase.parse().ok()?,
        epoch: epoch.parse().ok()?,
        layer: layer.parse().ok()?,
    })
}
