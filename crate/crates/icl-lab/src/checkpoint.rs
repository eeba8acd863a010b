//! On-disk training checkpoints.
//!
//! Layout (all little-endian): 8-byte magic, format version, FNV-1a digest
//! of the embedded config text, the config text itself, curriculum state,
//! Adam scalars, loss history, then every parameter (name, trainable flag,
//! shape, value, first moment, second moment) in registration order.
//! Save -> load is bit-exact; magic/version/digest mismatches are rejected.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{IclModel, ParamStore};
use crate::tensor::Tensor;
use crate::train::{build_model, fnv1a, AdamState, LossRecord, TrainConfig};

const MAGIC: &[u8; 8] = b"ICLCKPT1";
const VERSION: u32 = 1;

pub struct SavedParam {
    pub name: String,
    pub trainable: bool,
    pub value: Tensor<f32>,
    pub m: Tensor<f32>,
    pub v: Tensor<f32>,
}

pub struct Checkpoint {
    pub config: TrainConfig,
    /// Completed optimizer steps; resuming starts here.
    pub step: usize,
    /// Curriculum block size / prompt length for the resume step.
    pub d: usize,
    pub n: usize,
    pub adam_t: u64,
    pub params: Vec<SavedParam>,
    pub loss_history: Vec<LossRecord>,
}

impl Checkpoint {
    pub fn capture(
        cfg: &TrainConfig,
        store: &ParamStore<f32>,
        adam: &AdamState<f32>,
        step: usize,
        history: &[LossRecord],
    ) -> Self {
        let state = cfg.curriculum.at(step);
        let params = store
            .ids()
            .map(|id| {
                let p = store.get(id);
                SavedParam {
                    name: p.name.clone(),
                    trainable: p.trainable,
                    value: p.value.clone(),
                    m: adam.m[id.index()].clone(),
                    v: adam.v[id.index()].clone(),
                }
            })
            .collect();
        Checkpoint {
            config: cfg.clone(),
            step,
            d: state.d,
            n: state.n,
            adam_t: adam.t,
            params,
            loss_history: history.to_vec(),
        }
    }

    pub fn config_digest(&self) -> u64 {
        self.config.digest()
    }

    /// Rebuild the model and optimizer exactly as they stood at capture.
    pub fn restore_model(&self) -> Result<(IclModel, ParamStore<f32>, AdamState<f32>)> {
        let (model, mut store) = build_model(&self.config);
        if store.len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameters but the config builds {}",
                self.params.len(),
                store.len()
            )));
        }
        let mut adam = AdamState::new(&store, self.config.lr);
        adam.t = self.adam_t;
        for (id, saved) in store.ids().collect::<Vec<_>>().into_iter().zip(&self.params) {
            let p = store.get_mut(id);
            if p.name != saved.name || p.value.shape() != saved.value.shape() {
                return Err(Error::Format(format!(
                    "checkpoint parameter '{}' {:?} does not match model parameter '{}' {:?}",
                    saved.name,
                    saved.value.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = saved.value.clone();
            adam.m[id.index()] = saved.m.clone();
            adam.v[id.index()] = saved.v.clone();
        }
        Ok((model, store, adam))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        let cfg_text = self.config.to_kv();
        put_u64(&mut out, fnv1a(cfg_text.as_bytes()));
        put_u32(&mut out, cfg_text.len() as u32);
        out.extend_from_slice(cfg_text.as_bytes());

        put_u64(&mut out, self.step as u64);
        put_u32(&mut out, self.d as u32);
        put_u32(&mut out, self.n as u32);
        put_u64(&mut out, self.adam_t);

        put_u64(&mut out, self.loss_history.len() as u64);
        for r in &self.loss_history {
            put_u64(&mut out, r.step);
            put_u32(&mut out, r.d);
            put_u32(&mut out, r.n);
            put_u32(&mut out, r.loss.to_bits());
        }

        put_u64(&mut out, self.params.len() as u64);
        for p in &self.params {
            put_u32(&mut out, p.name.len() as u32);
            out.extend_from_slice(p.name.as_bytes());
            out.push(p.trainable as u8);
            put_u32(&mut out, p.value.shape().len() as u32);
            for &d in p.value.shape() {
                put_u64(&mut out, d as u64);
            }
            for t in [&p.value, &p.m, &p.v] {
                for &x in t.data() {
                    put_u32(&mut out, x.to_bits());
                }
            }
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let mut r = Reader { buf: &bytes, pos: 0 };

        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::Format("not an icl-lab checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let digest = r.u64()?;
        let cfg_len = r.u32()? as usize;
        let cfg_bytes = r.take(cfg_len)?;
        if fnv1a(cfg_bytes) != digest {
            return Err(Error::Format("checkpoint config digest mismatch (corrupt file?)".into()));
        }
        let cfg_text = std::str::from_utf8(cfg_bytes)
            .map_err(|_| Error::Format("checkpoint config is not utf-8".into()))?;
        let config = TrainConfig::from_kv(cfg_text)?;

        let step = r.u64()? as usize;
        let d = r.u32()? as usize;
        let n = r.u32()? as usize;
        let adam_t = r.u64()?;

        let losses = r.u64()? as usize;
        let mut loss_history = Vec::with_capacity(losses);
        for _ in 0..losses {
            loss_history.push(LossRecord {
                step: r.u64()?,
                d: r.u32()?,
                n: r.u32()?,
                loss: f32::from_bits(r.u32()?),
            });
        }

        let n_params = r.u64()? as usize;
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("parameter name is not utf-8".into()))?
                .to_string();
            let trainable = r.take(1)?[0] != 0;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut tensors = Vec::with_capacity(3);
            for _ in 0..3 {
                let mut data = Vec::with_capacity(numel);
                for _ in 0..numel {
                    data.push(f32::from_bits(r.u32()?));
                }
                tensors.push(Tensor::new(&shape, data));
            }
            let v = tensors.pop().unwrap();
            let m = tensors.pop().unwrap();
            let value = tensors.pop().unwrap();
            params.push(SavedParam { name, trainable, value, m, v });
        }

        Ok(Checkpoint { config, step, d, n, adam_t, params, loss_history })
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "checkpoint file is truncated",
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
