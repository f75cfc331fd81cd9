//! `SDPC` checkpoint format.
//!
//! ```text
//! "SDPC" | version u32 | config digest [32 bytes] | epoch u32 | adam step u64
//! n_blobs u32 | n_blobs × ( name | rank u32 | dims u32[rank] | f32[prod(dims)] )
//! config text
//! ```
//!
//! Strings are a `u32` byte length followed by UTF-8. Blob names are
//! `param/<name>`, `adam.m/<name>`, `adam.v/<name>` and `norm/<field>`.

use std::path::Path;

use crate::env::NormStats;
use crate::error::{Error, Result};
use crate::io::{put_f32s, read_file, put_string, put_u32, put_u64, write_atomic, ByteReader};
use crate::lif::m_for_theta;
use crate::tensor::Tensor;
use crate::unet::SpikingUNet;

use super::config::{Lcmt, RunConfig};
use super::optim::Adam;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SDPC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// Number of completed epochs.
    pub epoch: u32,
    pub net: SpikingUNet,
    pub adam: Adam,
    pub norm: NormStats,
}

/// Fresh network for `config`, with thresholds frozen at `fixed_theta`
/// when LCMT is off.
pub fn init_network(config: &RunConfig) -> Result<SpikingUNet> {
    let mut net = SpikingUNet::new(&config.model.unet(), config.train.seed)?;
    if config.model.lcmt == Lcmt::Off {
        let m = m_for_theta(config.model.fixed_theta) as f32;
        net.for_each_param_mut(|name, t| {
            if name.ends_with(".m") {
                t.fill(m);
            }
        });
    }
    Ok(net)
}

pub fn new_optimizer(config: &RunConfig, net: &SpikingUNet) -> Adam {
    let t = &config.train;
    Adam::new(net, t.lr, t.beta1, t.beta2, t.eps, config.model.lcmt == Lcmt::On)
}

fn put_blob(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_string(out, name);
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    put_f32s(out, t.data());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        out.extend_from_slice(&self.config.digest());
        put_u32(&mut out, self.epoch);
        put_u64(&mut out, self.adam.step);
        let params = self.net.named_params();
        let norm = [
            ("action_min", &self.norm.action_min[..]),
            ("action_max", &self.norm.action_max[..]),
            ("state_min", &self.norm.state_min[..]),
            ("state_max", &self.norm.state_max[..]),
        ];
        put_u32(&mut out, (3 * params.len() + norm.len()) as u32);
        for (name, t) in &params {
            put_blob(&mut out, &format!("param/{name}"), t);
        }
        for (prefix, moments) in [("adam.m", &self.adam.m), ("adam.v", &self.adam.v)] {
            for ((name, _), t) in params.iter().zip(moments) {
                put_blob(&mut out, &format!("{prefix}/{name}"), t);
            }
        }
        for (field, vals) in norm {
            put_blob(&mut out, &format!("norm/{field}"), &Tensor::new(vec![vals.len()], vals.to_vec()).unwrap());
        }
        put_string(&mut out, &self.config.to_toml());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not an SDPC checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        let epoch = r.u32()?;
        let step = r.u64()?;
        let n = r.u32()? as usize;
        let mut blobs = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let data = r.f32_vec(shape.iter().product())?;
            blobs.push((name, Tensor::new(shape, data)?));
        }
        let text = r.string()?;
        r.finish()?;

        let config = RunConfig::from_parts(Some(&text), &[])?;
        if config.digest() != digest {
            return Err(Error::Format("checkpoint digest does not match its embedded config".into()));
        }
        let mut take = |name: String| -> Result<Tensor> {
            let i = blobs
                .iter()
                .position(|(n, _)| *n == name)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing blob {name}")))?;
            Ok(blobs.swap_remove(i).1)
        };

        let mut net = SpikingUNet::zeros(&config.model.unet())?;
        let names: Vec<String> = net.named_params().into_iter().map(|(n, _)| n).collect();
        let mut params = Vec::with_capacity(names.len());
        for name in &names {
            params.push(take(format!("param/{name}"))?);
        }
        let mut failure = None;
        let mut it = params.into_iter();
        net.for_each_param_mut(|name, t| {
            let loaded = it.next().unwrap();
            if loaded.shape() != t.shape() {
                failure.get_or_insert_with(|| format!("{name}: stored {:?}, expected {:?}", loaded.shape(), t.shape()));
            } else {
                *t = loaded;
            }
        });
        if let Some(f) = failure {
            return Err(Error::Format(format!("checkpoint shape mismatch at {f}")));
        }
        let mut adam = new_optimizer(&config, &net);
        adam.step = step;
        for (i, name) in names.iter().enumerate() {
            adam.m[i] = take(format!("adam.m/{name}"))?;
            adam.v[i] = take(format!("adam.v/{name}"))?;
        }
        let mut arr = |field: &str| -> Result<Vec<f32>> { Ok(take(format!("norm/{field}"))?.into_data()) };
        let norm = NormStats {
            action_min: vec_to_array(arr("action_min")?)?,
            action_max: vec_to_array(arr("action_max")?)?,
            state_min: vec_to_array(arr("state_min")?)?,
            state_max: vec_to_array(arr("state_max")?)?,
        };
        if let Some((name, _)) = blobs.first() {
            return Err(Error::Format(format!("unexpected checkpoint blob {name}")));
        }
        Ok(Self {
            config,
            epoch,
            net,
            adam,
            norm,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

fn vec_to_array<const N: usize>(v: Vec<f32>) -> Result<[f32; N]> {
    let len = v.len();
    v.try_into()
        .map_err(|_| Error::Format(format!("normalisation blob has {len} entries, expected {N}")))
}

/// Index of the best evaluation: highest success rate, earliest epoch on ties.
pub fn select_best(evals: &[(u32, f64)]) -> Option<u32> {
    evals
        .iter()
        .copied()
        .fold(None, |best: Option<(u32, f64)>, (e, s)| match best {
            Some((be, bs)) if bs > s || (bs == s && be <= e) => Some((be, bs)),
            _ => Some((e, s)),
        })
        .map(|(e, _)| e)
}
