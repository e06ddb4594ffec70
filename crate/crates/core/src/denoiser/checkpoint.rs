//! `SDM1` checkpoints.
//!
//! Layout: `b"SDM1"`, a `u32` LE header length `n`, `n` bytes of JSON
//! header, then every blob listed in the header as little-endian `f32` in
//! header order. Blobs are the network tensors, optionally followed by the
//! Adam moments (`adam.m.*`, `adam.v.*`) so that training can resume.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, DenoiserConfig, DenoiserParams, SkipMode, Weights};
use crate::diffusion::{make_schedule, DataMap, ReverseVariance, VarianceSchedule};
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState};

const MAGIC: [u8; 4] = *b"SDM1";

/// The linear schedule a model was trained with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub t_steps: usize,
    pub beta_1: f64,
    pub beta_t: f64,
    pub reverse_variance: ReverseVariance,
}

impl ScheduleSpec {
    pub fn reference() -> Self {
        Self {
            t_steps: 1000,
            beta_1: 1e-4,
            beta_t: 0.02,
            reverse_variance: ReverseVariance::Beta,
        }
    }

    pub fn build(&self) -> Result<VarianceSchedule> {
        Ok(make_schedule(self.t_steps, self.beta_1, self.beta_t)?
            .with_reverse_variance(self.reverse_variance))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: DenoiserParams,
    pub schedule: ScheduleSpec,
    /// Global training step reached.
    pub step: u64,
    pub adam: Option<AdamState>,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_count: u64,
}

#[derive(Serialize, Deserialize)]
struct Blob {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    n_bands: usize,
    layers: usize,
    hidden: usize,
    embed_dim: usize,
    activation: Activation,
    skip: SkipMode,
    dropout: f64,
    data_map: DataMap,
    t_steps: usize,
    beta_1: f64,
    beta_t: f64,
    reverse_variance: ReverseVariance,
    step: u64,
    adam: Option<AdamHeader>,
    blobs: Vec<Blob>,
}

pub(crate) fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let cfg = ck.params.config();
    let w = ck.params.weights();
    let names = w.names();
    let shapes = w.shapes();
    let mut blobs: Vec<Blob> = names
        .iter()
        .zip(&shapes)
        .map(|(n, s)| Blob {
            name: n.clone(),
            shape: s.clone(),
        })
        .collect();
    let mut payload: Vec<&[f64]> = w.tensors();
    if let Some(adam) = &ck.adam {
        if adam.lens() != payload.iter().map(|t| t.len()).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument("optimizer state does not match parameters".into()));
        }
        for (prefix, moments) in [("adam.m.", &adam.first_moment), ("adam.v.", &adam.second_moment)] {
            for ((n, s), m) in names.iter().zip(&shapes).zip(moments) {
                blobs.push(Blob {
                    name: format!("{prefix}{n}"),
                    shape: s.clone(),
                });
                payload.push(m);
            }
        }
    }
    let header = Header {
        n_bands: cfg.n_bands,
        layers: cfg.layers,
        hidden: cfg.hidden,
        embed_dim: cfg.embed_dim,
        activation: cfg.activation,
        skip: cfg.skip,
        dropout: cfg.dropout,
        data_map: cfg.data_map,
        t_steps: ck.schedule.t_steps,
        beta_1: ck.schedule.beta_1,
        beta_t: ck.schedule.beta_t,
        reverse_variance: ck.schedule.reverse_variance,
        step: ck.step,
        adam: ck.adam.as_ref().map(|a| AdamHeader {
            beta1: a.config.beta1,
            beta2: a.config.beta2,
            epsilon: a.config.epsilon,
            step_count: a.step_count,
        }),
        blobs,
    };
    let text = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + text.len() + 4 * payload.iter().map(|p| p.len()).sum::<usize>());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(&text);
    for blob in payload {
        for v in blob {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 {
        return Err(Error::TruncatedPayload {
            expected: 8,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + n {
        return Err(Error::TruncatedPayload {
            expected: 8 + n,
            found: bytes.len(),
        });
    }
    let header: Header = serde_json::from_slice(&bytes[8..8 + n])?;
    let cfg = DenoiserConfig {
        n_bands: header.n_bands,
        layers: header.layers,
        hidden: header.hidden,
        embed_dim: header.embed_dim,
        activation: header.activation,
        skip: header.skip,
        dropout: header.dropout,
        data_map: header.data_map,
    };
    cfg.validate()?;
    let mut weights = Weights::zeros_for(&cfg);
    let names = weights.names();
    let shapes = weights.shapes();
    let n_param = names.len();
    let expected_blobs = if header.adam.is_some() { 3 * n_param } else { n_param };
    if header.blobs.len() != expected_blobs {
        return Err(Error::Malformed(format!(
            "header lists {} blobs, expected {expected_blobs}",
            header.blobs.len()
        )));
    }
    let mut pos = 8 + n;
    let mut read_blob = |blob: &Blob, want_name: &str, want_shape: &[usize]| -> Result<Vec<f64>> {
        if blob.name != want_name || blob.shape != want_shape {
            return Err(Error::Malformed(format!(
                "blob {:?} {:?}, expected {want_name:?} {want_shape:?}",
                blob.name, blob.shape
            )));
        }
        let count: usize = want_shape.iter().product();
        let len = count
            .checked_mul(4)
            .ok_or_else(|| Error::DimensionOverflow(format!("blob {want_name}")))?;
        if bytes.len() < pos + len {
            return Err(Error::TruncatedPayload {
                expected: pos + len,
                found: bytes.len(),
            });
        }
        let vals = bytes[pos..pos + len]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        pos += len;
        Ok(vals)
    };

    let mut params_flat = Vec::with_capacity(n_param);
    for i in 0..n_param {
        params_flat.push(read_blob(&header.blobs[i], &names[i], &shapes[i])?);
    }
    let adam = match &header.adam {
        None => None,
        Some(ah) => {
            let mut m = Vec::with_capacity(n_param);
            let mut v = Vec::with_capacity(n_param);
            for i in 0..n_param {
                m.push(read_blob(&header.blobs[n_param + i], &format!("adam.m.{}", names[i]), &shapes[i])?);
            }
            for i in 0..n_param {
                v.push(read_blob(&header.blobs[2 * n_param + i], &format!("adam.v.{}", names[i]), &shapes[i])?);
            }
            let mut st = AdamState::new(
                AdamConfig {
                    beta1: ah.beta1,
                    beta2: ah.beta2,
                    epsilon: ah.epsilon,
                },
                &[],
            )?;
            st.first_moment = m;
            st.second_moment = v;
            st.step_count = ah.step_count;
            Some(st)
        }
    };
    if pos != bytes.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - pos)));
    }
    for (dst, src) in weights.tensors_mut().into_iter().zip(params_flat) {
        dst.copy_from_slice(&src);
    }
    let schedule = ScheduleSpec {
        t_steps: header.t_steps,
        beta_1: header.beta_1,
        beta_t: header.beta_t,
        reverse_variance: header.reverse_variance,
    };
    schedule.build()?;
    Ok(Checkpoint {
        params: DenoiserParams::from_weights(cfg, weights)?,
        schedule,
        step: header.step,
        adam,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}
