//! Named f64 array store and its binary container format.
//!
//! Container layout (see docs/formats.md): an ASCII header of
//! `GATORW1`, a count line, one `name ndims dims... offset` line per array
//! (offset in bytes into the payload), an `end` line, then the raw
//! little-endian f64 payload.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array4, ArrayD, IxDyn};
use rand::Rng;

use super::{LayerKind, NetworkGraph};
use crate::{GatorError, Result};

const MAGIC: &str = "GATORW1";

/// Map from array name to tensor. Conv weights are `[c_out, c_in, k_h, k_w]`
/// under `{id}.weight`; fully-connected `[out, in]`; batchnorm contributes
/// `.gamma`, `.beta`, `.running_mean`, `.running_var` per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore {
    arrays: BTreeMap<String, ArrayD<f64>>,
}

impl Default for WeightStore {
    fn default() -> Self {
        Self::new()
    }
}

impl WeightStore {
    pub fn new() -> Self {
        WeightStore {
            arrays: BTreeMap::new(),
        }
    }

    /// Kaiming-style random init for a graph, deterministic under `seed`.
    /// Batchnorm starts at identity (gamma 1, beta 0, mean 0, var 1).
    pub fn init_random(g: &NetworkGraph, seed: u64) -> Self {
        let mut rng = crate::rng::stream(seed, "weight-init");
        let mut store = WeightStore::new();
        for l in g.layers() {
            match &l.kind {
                LayerKind::Conv {
                    kernel,
                    in_channels,
                    out_channels,
                    ..
                } => {
                    let fan_in = (kernel.0 * kernel.1 * in_channels) as f64;
                    let std = (2.0 / fan_in.max(1.0)).sqrt();
                    let dim = IxDyn(&[*out_channels, *in_channels, kernel.0, kernel.1]);
                    let w = ArrayD::from_shape_simple_fn(dim, || gaussian(&mut rng) * std);
                    store.insert(format!("{}.weight", l.id), w);
                }
                LayerKind::FullyConnected {
                    in_features,
                    out_features,
                } => {
                    let std = (2.0 / (*in_features).max(1) as f64).sqrt();
                    let dim = IxDyn(&[*out_features, *in_features]);
                    let w = ArrayD::from_shape_simple_fn(dim, || gaussian(&mut rng) * std);
                    store.insert(format!("{}.weight", l.id), w);
                }
                LayerKind::BatchNorm { channels } => {
                    let c = *channels;
                    store.insert(format!("{}.gamma", l.id), ArrayD::from_elem(IxDyn(&[c]), 1.0));
                    store.insert(format!("{}.beta", l.id), ArrayD::zeros(IxDyn(&[c])));
                    store.insert(format!("{}.running_mean", l.id), ArrayD::zeros(IxDyn(&[c])));
                    store.insert(format!("{}.running_var", l.id), ArrayD::from_elem(IxDyn(&[c]), 1.0));
                }
                _ => {}
            }
        }
        store
    }

    /// All-zero store with shapes matching the graph.
    pub fn zeros(g: &NetworkGraph) -> Self {
        let mut store = Self::init_random(g, 0);
        for a in store.arrays.values_mut() {
            a.fill(0.0);
        }
        store
    }

    pub fn insert(&mut self, name: String, array: ArrayD<f64>) {
        self.arrays.insert(name, array);
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.arrays
            .get(name)
            .ok_or_else(|| GatorError::WeightStore(format!("missing array `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ArrayD<f64>> {
        self.arrays
            .get_mut(name)
            .ok_or_else(|| GatorError::WeightStore(format!("missing array `{name}`")))
    }

    pub fn conv_weight(&self, id: &str) -> Result<Array4<f64>> {
        let a = self.get(&format!("{id}.weight"))?;
        a.view()
            .into_dimensionality()
            .map(|v| v.to_owned())
            .map_err(|_| GatorError::WeightStore(format!("`{id}.weight` is not 4-D")))
    }

    pub fn fc_weight(&self, id: &str) -> Result<Array2<f64>> {
        let a = self.get(&format!("{id}.weight"))?;
        a.view()
            .into_dimensionality()
            .map(|v| v.to_owned())
            .map_err(|_| GatorError::WeightStore(format!("`{id}.weight` is not 2-D")))
    }

    pub fn bn_param(&self, id: &str, field: &str) -> Result<Array1<f64>> {
        let a = self.get(&format!("{id}.{field}"))?;
        a.view()
            .into_dimensionality()
            .map(|v| v.to_owned())
            .map_err(|_| GatorError::WeightStore(format!("`{id}.{field}` is not 1-D")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.arrays.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<f64>)> {
        self.arrays.iter_mut()
    }

    /// Check that every layer's arrays exist with the exact shapes the graph
    /// declares.
    pub fn validate_against(&self, g: &NetworkGraph) -> Result<()> {
        for l in g.layers() {
            let expect: Vec<(String, Vec<usize>)> = match &l.kind {
                LayerKind::Conv {
                    kernel,
                    in_channels,
                    out_channels,
                    ..
                } => vec![(
                    format!("{}.weight", l.id),
                    vec![*out_channels, *in_channels, kernel.0, kernel.1],
                )],
                LayerKind::FullyConnected {
                    in_features,
                    out_features,
                } => vec![(format!("{}.weight", l.id), vec![*out_features, *in_features])],
                LayerKind::BatchNorm { channels } => ["gamma", "beta", "running_mean", "running_var"]
                    .iter()
                    .map(|f| (format!("{}.{f}", l.id), vec![*channels]))
                    .collect(),
                _ => vec![],
            };
            for (name, shape) in expect {
                let a = self.get(&name)?;
                if a.shape() != shape.as_slice() {
                    return Err(GatorError::WeightStore(format!(
                        "`{name}` has shape {:?}, expected {:?}",
                        a.shape(),
                        shape
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        header.push_str(&format!("{}\n", self.arrays.len()));
        let mut offset = 0usize;
        for (name, a) in &self.arrays {
            header.push_str(&format!("{name} {}", a.ndim()));
            for d in a.shape() {
                header.push_str(&format!(" {d}"));
            }
            header.push_str(&format!(" {offset}\n"));
            offset += a.len() * 8;
        }
        header.push_str("end\n");
        file.write_all(header.as_bytes())?;
        for a in self.arrays.values() {
            let c = a.as_standard_layout();
            for &v in c.iter() {
                file.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut reader = BufReader::new(file);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        if line.trim_end() != MAGIC {
            return Err(GatorError::WeightStore(format!(
                "bad magic `{}`",
                line.trim_end()
            )));
        }
        line.clear();
        reader.read_line(&mut line)?;
        let count: usize = line
            .trim()
            .parse()
            .map_err(|_| GatorError::WeightStore("bad array count".into()))?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            line.clear();
            reader.read_line(&mut line)?;
            let mut parts = line.split_whitespace();
            let name = parts
                .next()
                .ok_or_else(|| GatorError::WeightStore("truncated header".into()))?
                .to_string();
            let ndim: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| GatorError::WeightStore("bad ndim".into()))?;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(
                    parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| GatorError::WeightStore("bad dims".into()))?,
                );
            }
            let offset: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| GatorError::WeightStore("bad offset".into()))?;
            entries.push((name, dims, offset));
        }
        line.clear();
        reader.read_line(&mut line)?;
        if line.trim_end() != "end" {
            return Err(GatorError::WeightStore("missing `end` marker".into()));
        }
        let mut payload = Vec::new();
        reader.read_to_end(&mut payload)?;
        let mut arrays = BTreeMap::new();
        for (name, dims, offset) in entries {
            let len: usize = dims.iter().product();
            let bytes = len * 8;
            if offset + bytes > payload.len() {
                return Err(GatorError::WeightStore(format!(
                    "array `{name}` overruns payload (offset {offset}, {bytes} bytes, payload {})",
                    payload.len()
                )));
            }
            let mut data = Vec::with_capacity(len);
            for i in 0..len {
                let b: [u8; 8] = payload[offset + i * 8..offset + (i + 1) * 8]
                    .try_into()
                    .expect("slice length checked");
                data.push(f64::from_le_bytes(b));
            }
            let a = ArrayD::from_shape_vec(IxDyn(&dims), data)
                .map_err(|e| GatorError::WeightStore(e.to_string()))?;
            arrays.insert(name, a);
        }
        Ok(WeightStore { arrays })
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
