use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{bytes_to_f64s, f64s_to_bytes, read_preamble, write_preamble, PersistError};
use crate::bc::Autoencoder;
use crate::cells::{CellKind, CellParams, CtrnnParams, LrcssmParams, LruParams};
use crate::env::ObservationSpec;
use crate::heads::{ActorHead, CriticHead};
use crate::policy::PretrainedPolicy;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RTRRLCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where a checkpoint's randomness came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lineage {
    pub master_seed: u64,
    /// `pretrain` or `finetune`.
    pub stage: String,
    /// Seed index of the cell within its model kind.
    pub index: u64,
    /// Seed derived for this stage of the cell.
    pub seed: u64,
}

/// Critic networks saved alongside a fine-tuned policy.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticBundle {
    pub cell: CellParams,
    pub head: CriticHead,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub policy: PretrainedPolicy,
    pub critic: Option<CriticBundle>,
    pub observation: ObservationSpec,
    pub lineage: Lineage,
}

/// A float array with its logical shape. Complex arrays store interleaved
/// `(re, im)` pairs, so `data.len() = 2 · Π shape`.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub complex: bool,
    pub data: Vec<f64>,
}

impl NamedArray {
    fn real(name: &str, shape: &[usize], data: &[f64]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            complex: false,
            data: data.to_vec(),
        }
    }

    fn complex(name: &str, shape: &[usize], data: &[Complex64]) -> Self {
        let data = data.iter().flat_map(|c| [c.re, c.im]).collect();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            complex: true,
            data,
        }
    }

    pub fn value_count(shape: &[usize], complex: bool) -> usize {
        shape.iter().product::<usize>() * if complex { 2 } else { 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub complex: bool,
    /// CRC-32 (IEEE) of the array's little-endian bytes.
    pub crc32: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub cell_kind: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub obs_dim: usize,
    pub encoder_hidden: usize,
    pub latent_dim: usize,
    pub action_dim: usize,
    pub head_output_dim: usize,
    pub observation: ObservationSpec,
    pub frozen: Vec<String>,
    pub lineage: Lineage,
    pub has_critic: bool,
    pub arrays: Vec<ArrayEntry>,
}

fn cell_arrays(prefix: &str, cell: &CellParams, out: &mut Vec<NamedArray>) {
    let p = |s: &str| format!("{prefix}.{s}");
    match cell {
        CellParams::Ctrnn(c) => {
            out.push(NamedArray::real(
                &p("w"),
                &[c.hidden_dim(), c.xi_dim()],
                c.w(),
            ));
            out.push(NamedArray::real(&p("tau"), &[c.hidden_dim()], c.tau()));
        }
        CellParams::Lru(c) => {
            let (n, i, o) = (c.hidden_dim(), c.input_dim(), c.output_dim());
            out.push(NamedArray::complex(&p("a"), &[n], c.a_diag()));
            out.push(NamedArray::complex(&p("b"), &[n, i], c.b_in()));
            out.push(NamedArray::complex(&p("c"), &[o, n], c.c_out()));
            out.push(NamedArray::real(&p("d"), &[o, i], c.d_skip()));
        }
        CellParams::Lrcssm(c) => {
            let shape = [c.hidden_dim(), c.gate_cols()];
            out.push(NamedArray::real(&p("w_a"), &shape, c.w_a()));
            out.push(NamedArray::real(&p("w_g"), &shape, c.w_g()));
            out.push(NamedArray::real(&p("w_b"), &shape, c.w_b()));
            out.push(NamedArray::real(&p("tau_max"), &[1], &[c.tau_max()]));
            out.push(NamedArray::real(&p("a_min"), &[1], &[c.a_min()]));
        }
    }
}

struct ArrayMap(HashMap<String, NamedArray>);

impl ArrayMap {
    fn take(
        &mut self,
        name: &str,
        shape: &[usize],
        complex: bool,
    ) -> Result<Vec<f64>, PersistError> {
        let a = self
            .0
            .remove(name)
            .ok_or_else(|| PersistError::MissingArray(name.into()))?;
        let expected = NamedArray::value_count(shape, complex);
        if a.complex != complex || a.data.len() != expected || a.shape != shape {
            return Err(PersistError::Shape {
                name: name.into(),
                expected,
                got: a.data.len(),
            });
        }
        Ok(a.data)
    }

    fn take_complex(
        &mut self,
        name: &str,
        shape: &[usize],
    ) -> Result<Vec<Complex64>, PersistError> {
        Ok(self
            .take(name, shape, true)?
            .chunks_exact(2)
            .map(|c| Complex64::new(c[0], c[1]))
            .collect())
    }

    fn take_scalar(&mut self, name: &str) -> Result<f64, PersistError> {
        Ok(self.take(name, &[1], false)?[0])
    }
}

fn cell_from_arrays(
    prefix: &str,
    kind: CellKind,
    input_dim: usize,
    hidden_dim: usize,
    map: &mut ArrayMap,
) -> Result<CellParams, PersistError> {
    let p = |s: &str| format!("{prefix}.{s}");
    let (n, i) = (hidden_dim, input_dim);
    let invalid = |e: crate::cells::CellError| PersistError::Invalid(e.to_string());
    Ok(match kind {
        CellKind::Ctrnn => {
            let w = map.take(&p("w"), &[n, i + n + 1], false)?;
            let tau = map.take(&p("tau"), &[n], false)?;
            CellParams::Ctrnn(CtrnnParams::new(i, n, w, tau).map_err(invalid)?)
        }
        CellKind::Lru => {
            let a = map.take_complex(&p("a"), &[n])?;
            let b = map.take_complex(&p("b"), &[n, i])?;
            let c = map.take_complex(&p("c"), &[n, n])?;
            let d = map.take(&p("d"), &[n, i], false)?;
            CellParams::Lru(LruParams::new(i, n, n, a, b, c, d).map_err(invalid)?)
        }
        CellKind::Lrcssm => {
            let shape = [n, i + 2];
            let w_a = map.take(&p("w_a"), &shape, false)?;
            let w_g = map.take(&p("w_g"), &shape, false)?;
            let w_b = map.take(&p("w_b"), &shape, false)?;
            let tau_max = map.take_scalar(&p("tau_max"))?;
            let a_min = map.take_scalar(&p("a_min"))?;
            CellParams::Lrcssm(
                LrcssmParams::new(i, n, w_a, w_g, w_b, tau_max, a_min).map_err(invalid)?,
            )
        }
    })
}

impl Checkpoint {
    /// All parameters as named arrays, in file order.
    pub fn arrays(&self) -> Vec<NamedArray> {
        let p = &self.policy;
        let ae = &p.autoencoder;
        let mut out = vec![
            NamedArray::real("encoder", &[ae.encoder_params().len()], ae.encoder_params()),
            NamedArray::real("decoder", &[ae.decoder_params().len()], ae.decoder_params()),
            NamedArray::real("policy.dt", &[1], &[p.dt]),
        ];
        cell_arrays("cell", &p.cell, &mut out);
        out.push(NamedArray::real(
            "head.w_out",
            &[p.head.output_dim(), p.head.feature_dim()],
            p.head.w_out(),
        ));
        out.push(NamedArray::real(
            "head.action_scale",
            &[p.head.action_dim()],
            p.head.action_scale(),
        ));
        if let Some(c) = &self.critic {
            cell_arrays("critic.cell", &c.cell, &mut out);
            out.push(NamedArray::real("critic.w", &[c.head.w.len()], &c.head.w));
            out.push(NamedArray::real("critic.b", &[1], &[c.head.b]));
        }
        out
    }

    /// CRC-32 over every parameter array; changes whenever any parameter bit
    /// changes.
    pub fn param_checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        let mut buf = Vec::new();
        for a in self.arrays() {
            buf.clear();
            f64s_to_bytes(&a.data, &mut buf);
            h.update(a.name.as_bytes());
            h.update(&buf);
        }
        h.finalize()
    }

    fn header(&self, arrays: &[NamedArray]) -> CheckpointHeader {
        let p = &self.policy;
        let entries = arrays
            .iter()
            .map(|a| {
                let mut buf = Vec::new();
                f64s_to_bytes(&a.data, &mut buf);
                ArrayEntry {
                    name: a.name.clone(),
                    shape: a.shape.clone(),
                    complex: a.complex,
                    crc32: crc32fast::hash(&buf),
                }
            })
            .collect();
        CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            cell_kind: p.cell.kind(),
            input_dim: p.cell.input_dim(),
            hidden_dim: p.cell.hidden_dim(),
            feature_dim: p.cell.feature_dim(),
            obs_dim: p.autoencoder.obs_dim(),
            encoder_hidden: p.autoencoder.hidden_dim(),
            latent_dim: p.autoencoder.latent_dim(),
            action_dim: p.head.action_dim(),
            head_output_dim: p.head.output_dim(),
            observation: self.observation.clone(),
            frozen: p
                .cell
                .frozen_names()
                .into_iter()
                .map(String::from)
                .collect(),
            lineage: self.lineage.clone(),
            has_critic: self.critic.is_some(),
            arrays: entries,
        }
    }
}

pub fn write_checkpoint<W: Write>(w: &mut W, ckpt: &Checkpoint) -> Result<(), PersistError> {
    let arrays = ckpt.arrays();
    write_preamble(
        w,
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        &ckpt.header(&arrays),
    )?;
    let mut buf = Vec::new();
    for a in &arrays {
        buf.clear();
        f64s_to_bytes(&a.data, &mut buf);
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<(), PersistError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

/// Reads only the header; the payload is never touched.
pub fn inspect_checkpoint(path: impl AsRef<Path>) -> Result<CheckpointHeader, PersistError> {
    let mut r = BufReader::new(File::open(path)?);
    read_preamble(&mut r, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint, PersistError> {
    let h: CheckpointHeader = read_preamble(r, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")?;
    let mut map = HashMap::new();
    for e in &h.arrays {
        let count = NamedArray::value_count(&e.shape, e.complex);
        let mut buf = vec![0u8; count * 8];
        r.read_exact(&mut buf)?;
        if crc32fast::hash(&buf) != e.crc32 {
            return Err(PersistError::Checksum {
                name: e.name.clone(),
            });
        }
        let a = NamedArray {
            name: e.name.clone(),
            shape: e.shape.clone(),
            complex: e.complex,
            data: bytes_to_f64s(&buf),
        };
        map.insert(e.name.clone(), a);
    }
    let mut map = ArrayMap(map);
    let enc_len = Autoencoder::encoder_len(h.obs_dim, h.encoder_hidden, h.latent_dim);
    let dec_len = Autoencoder::decoder_len(h.obs_dim, h.encoder_hidden, h.latent_dim);
    let encoder = map.take("encoder", &[enc_len], false)?;
    let decoder = map.take("decoder", &[dec_len], false)?;
    let autoencoder =
        Autoencoder::from_parts(h.obs_dim, h.encoder_hidden, h.latent_dim, encoder, decoder)
            .ok_or_else(|| PersistError::Invalid("autoencoder dimensions".into()))?;
    let dt = map.take_scalar("policy.dt")?;
    let cell = cell_from_arrays("cell", h.cell_kind, h.input_dim, h.hidden_dim, &mut map)?;
    let w_out = map.take("head.w_out", &[h.head_output_dim, h.feature_dim], false)?;
    let action_scale = map.take("head.action_scale", &[h.action_dim], false)?;
    let head = ActorHead::new(h.feature_dim, w_out, action_scale)
        .map_err(|e| PersistError::Invalid(e.to_string()))?;
    let policy = PretrainedPolicy {
        autoencoder,
        cell,
        dt,
        head,
    };
    policy
        .validate()
        .map_err(|e| PersistError::Invalid(e.to_string()))?;
    let critic = if h.has_critic {
        let cell = cell_from_arrays(
            "critic.cell",
            h.cell_kind,
            h.input_dim,
            h.hidden_dim,
            &mut map,
        )?;
        let w = map.take("critic.w", &[h.feature_dim], false)?;
        let b = map.take_scalar("critic.b")?;
        Some(CriticBundle {
            cell,
            head: CriticHead { w, b },
        })
    } else {
        None
    };
    if let Some(extra) = map.0.keys().min() {
        return Err(PersistError::Invalid(format!("unexpected array `{extra}`")));
    }
    Ok(Checkpoint {
        policy,
        critic,
        observation: h.observation,
        lineage: h.lineage,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, PersistError> {
    let mut r = BufReader::new(File::open(path)?);
    read_checkpoint(&mut r)
}
