//! Model files.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! magic       4 bytes  "SKNY"
//! version     u32      1
//! num_trees   u64
//! depth       u64
//! features    u64      p
//! outputs     u64      c
//! theta       f64
//! use_bias    u8
//! mask        p bytes  1 = selected
//! n_selected  u64
//! groups      n_selected × (u64 feature index, m·|I| f64 weights)
//! biases      m·|I| f64, only when use_bias
//! leaves      m·c·|L| f64
//! ```
//!
//! Weight groups of unselected features are not stored; they are zero by
//! definition of the mask.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EnsembleConfig, EnsembleModel, SupportMask};

pub const MAGIC: &[u8; 4] = b"SKNY";
pub const FORMAT_VERSION: u32 = 1;

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(model: &EnsembleModel) -> Vec<u8> {
    let c = &model.config;
    let mask = model.support_mask();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u64(&mut buf, c.num_trees as u64);
    put_u64(&mut buf, c.depth as u64);
    put_u64(&mut buf, c.num_features as u64);
    put_u64(&mut buf, c.num_outputs as u64);
    buf.extend_from_slice(&c.activation_threshold.to_le_bytes());
    buf.push(c.use_bias as u8);
    buf.extend(mask.selected.iter().map(|&s| s as u8));
    let selected = mask.indices();
    put_u64(&mut buf, selected.len() as u64);
    for k in selected {
        put_u64(&mut buf, k as u64);
        put_f64s(&mut buf, model.hyperplanes.group(k));
    }
    if let Some(b) = &model.hyperplanes.biases {
        put_f64s(&mut buf, b.as_slice().expect("standard layout"));
    }
    put_f64s(&mut buf, model.leaves.flat());
    buf
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::Format(format!("truncated file at byte {}", self.pos)))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format(format!("{what} {v} too large")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode(data: &[u8]) -> Result<EnsembleModel> {
    let mut cur = Cursor { data, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let config = EnsembleConfig {
        num_trees: cur.usize("num_trees")?,
        depth: cur.usize("depth")?,
        num_features: cur.usize("num_features")?,
        num_outputs: cur.usize("num_outputs")?,
        activation_threshold: cur.f64()?,
        use_bias: match cur.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("bad use_bias byte {b}"))),
        },
    };
    config.validate().map_err(|e| Error::Format(e.to_string()))?;
    let (p, g) = (config.num_features, config.group_len());
    let mask: Vec<bool> = cur
        .take(p)?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::Format(format!("bad mask byte {b}"))),
        })
        .collect::<Result<_>>()?;
    let n_selected = cur.usize("selected count")?;
    if n_selected != mask.iter().filter(|&&s| s).count() {
        return Err(Error::Format("selected count disagrees with mask".into()));
    }
    let mut weights = Array3::zeros((p, config.num_trees, config.internal_nodes()));
    let flat = weights.as_slice_mut().expect("standard layout");
    let mut last: Option<usize> = None;
    for _ in 0..n_selected {
        let k = cur.usize("feature index")?;
        if k >= p || !mask[k] || last.is_some_and(|l| l >= k) {
            return Err(Error::Format(format!("unexpected weight group for feature {k}")));
        }
        last = Some(k);
        let block = cur.f64s(g)?;
        if block.iter().all(|&v| v == 0.0) {
            return Err(Error::Format(format!("selected feature {k} has an all-zero group")));
        }
        flat[k * g..(k + 1) * g].copy_from_slice(&block);
    }
    let biases = if config.use_bias {
        let b = cur.f64s(g)?;
        Some(Array2::from_shape_vec((config.num_trees, config.internal_nodes()), b).expect("sized"))
    } else {
        None
    };
    let leaves = cur.f64s(config.num_trees * config.num_outputs * config.leaves())?;
    let leaves = Array3::from_shape_vec(
        (config.num_trees, config.num_outputs, config.leaves()),
        leaves,
    )
    .expect("sized");
    if cur.pos != data.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes",
            data.len() - cur.pos
        )));
    }
    EnsembleModel::from_parts(config, weights, biases, leaves)
}

pub fn write_model<W: Write>(model: &EnsembleModel, mut out: W) -> Result<()> {
    out.write_all(&encode(model))?;
    Ok(())
}

pub fn read_model<R: Read>(mut input: R) -> Result<EnsembleModel> {
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    decode(&data)
}

pub fn save(model: &EnsembleModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<EnsembleModel> {
    decode(&std::fs::read(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightGroup {
    pub feature: usize,
    /// Row-major `(m, |I|)`.
    pub weights: Vec<f64>,
}

/// Debugging export carrying the same content as the binary file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelJson {
    pub format_version: u32,
    pub config: EnsembleConfig,
    pub support_mask: SupportMask,
    pub hyperplanes: Vec<WeightGroup>,
    pub biases: Option<Vec<f64>>,
    /// Row-major `(m, c, |L|)`.
    pub leaves: Vec<f64>,
}

impl ModelJson {
    pub fn from_model(model: &EnsembleModel) -> Self {
        let mask = model.support_mask();
        Self {
            format_version: FORMAT_VERSION,
            config: model.config.clone(),
            hyperplanes: mask
                .indices()
                .into_iter()
                .map(|k| WeightGroup {
                    feature: k,
                    weights: model.hyperplanes.group(k).to_vec(),
                })
                .collect(),
            support_mask: mask,
            biases: model.hyperplanes.biases.as_ref().map(|b| b.iter().copied().collect()),
            leaves: model.leaves.flat().to_vec(),
        }
    }

    pub fn into_model(self) -> Result<EnsembleModel> {
        let c = &self.config;
        c.validate()?;
        let (p, m, ni) = (c.num_features, c.num_trees, c.internal_nodes());
        let mut weights = Array3::zeros((p, m, ni));
        for grp in &self.hyperplanes {
            if grp.feature >= p || grp.weights.len() != m * ni {
                return Err(Error::Format(format!("bad weight group for feature {}", grp.feature)));
            }
            let flat = weights.as_slice_mut().expect("standard layout");
            flat[grp.feature * m * ni..(grp.feature + 1) * m * ni].copy_from_slice(&grp.weights);
        }
        let biases = self
            .biases
            .map(|b| Array2::from_shape_vec((m, ni), b))
            .transpose()
            .map_err(|e| Error::Format(e.to_string()))?;
        let leaves = Array3::from_shape_vec((m, c.num_outputs, c.leaves()), self.leaves)
            .map_err(|e| Error::Format(e.to_string()))?;
        let model = EnsembleModel::from_parts(self.config, weights, biases, leaves)?;
        if model.support_mask() != self.support_mask {
            return Err(Error::Format("support mask disagrees with weights".into()));
        }
        Ok(model)
    }
}
