//! `WFMC` checkpoints, all little-endian:
//!
//! ```text
//! "WFMC" u32 version
//! u32 config_len, config (u32 fields, see `write_config`)
//! u32 tensor_count
//!   per tensor: u32 name_len, name, u32 rank, rank × u32 extents, f32 data
//! u8 has_optimizer
//!   if 1: u64 step, 5 × f64 (lr, β₁, β₂, ε, wd), then m and v per tensor
//! ```

use std::fs;
use std::path::Path;

use super::{ModelConfig, UNet};
use crate::error::{Error, Result};
use crate::tensorad::{AdamWConfig, AdamWState};

pub const MAGIC: [u8; 4] = *b"WFMC";
pub const VERSION: u32 = 1;

pub struct Checkpoint {
    pub model: UNet<f32>,
    pub optimizer: Option<AdamWState>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&u32::try_from(v).expect("fits u32").to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        self.0.reserve(4 * v.len());
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            Error::CheckpointTruncated(format!("{what}: need {n} bytes at offset {}, file has {}", self.at, self.bytes.len()))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn usize(&mut self, what: &str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::CheckpointMismatch(format!("{what}: size overflow")))?, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn write_config(w: &mut Writer, c: &ModelConfig) {
    let mut body = Writer(Vec::new());
    body.u32(c.base_channels);
    body.u32(c.channel_mult.len());
    c.channel_mult.iter().for_each(|&m| body.u32(m));
    body.u32(c.res_blocks);
    body.u32(c.max_groups);
    body.u32(c.embed_dim);
    body.u32(c.in_channels);
    body.u32(c.out_channels);
    w.u32(body.0.len());
    w.0.extend_from_slice(&body.0);
}

fn read_config(r: &mut Reader) -> Result<ModelConfig> {
    let len = r.usize("config length")?;
    let mut body = Reader {
        bytes: r.take(len, "config block")?,
        at: 0,
    };
    let base_channels = body.usize("base_channels")?;
    let n = body.usize("channel_mult length")?;
    if n > 64 {
        return Err(Error::CheckpointMismatch(format!("{n} channel multipliers")));
    }
    let channel_mult = (0..n).map(|_| body.usize("channel_mult")).collect::<Result<_>>()?;
    let cfg = ModelConfig {
        base_channels,
        channel_mult,
        res_blocks: body.usize("res_blocks")?,
        max_groups: body.usize("max_groups")?,
        embed_dim: body.usize("embed_dim")?,
        in_channels: body.usize("in_channels")?,
        out_channels: body.usize("out_channels")?,
    };
    cfg.validate()
        .map_err(|e| Error::CheckpointMismatch(format!("stored config invalid: {e}")))?;
    Ok(cfg)
}

pub fn encode_checkpoint(model: &UNet<f32>, optimizer: Option<&AdamWState>) -> Result<Vec<u8>> {
    let params = model.named_params();
    let mut w = Writer(Vec::with_capacity(64 + 4 * model.param_count()));
    w.0.extend_from_slice(&MAGIC);
    w.u32(VERSION as usize);
    write_config(&mut w, model.config());
    w.u32(params.len());
    for p in params {
        w.u32(p.name.len());
        w.0.extend_from_slice(p.name.as_bytes());
        w.u32(p.tensor.shape().len());
        p.tensor.shape().iter().for_each(|&d| w.u32(d));
        w.f32s(&p.tensor.values());
    }
    match optimizer {
        None => w.u8(0),
        Some(st) => {
            if st.m.len() != params.len() || st.v.len() != params.len() {
                return Err(Error::CheckpointMismatch(format!(
                    "optimizer holds {} buffers for {} tensors",
                    st.m.len(),
                    params.len()
                )));
            }
            w.u8(1);
            w.u64(st.step);
            let c = st.config;
            [c.lr, c.beta1, c.beta2, c.eps, c.weight_decay].iter().for_each(|&x| w.f64(x));
            for (m, v) in st.m.iter().zip(&st.v) {
                w.f32s(m);
                w.f32s(v);
            }
        }
    }
    Ok(w.0)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, at: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let cfg = read_config(&mut r)?;
    let model = UNet::<f32>::new(&cfg, 0)?;
    let params = model.named_params();
    let count = r.usize("tensor count")?;
    if count != params.len() {
        return Err(Error::CheckpointMismatch(format!(
            "{count} tensors stored, layout has {}",
            params.len()
        )));
    }
    for p in params {
        let name_len = r.usize("name length")?;
        let name = r.take(name_len, "name")?;
        if name != p.name.as_bytes() {
            return Err(Error::CheckpointMismatch(format!(
                "expected tensor {}, found {}",
                p.name,
                String::from_utf8_lossy(name)
            )));
        }
        let rank = r.usize("rank")?;
        let shape = (0..rank).map(|_| r.usize("extent")).collect::<Result<Vec<_>>>()?;
        if shape != p.tensor.shape() {
            return Err(Error::CheckpointMismatch(format!(
                "{}: stored shape {shape:?}, layout {:?}",
                p.name,
                p.tensor.shape()
            )));
        }
        p.tensor.set_values(r.f32s(p.tensor.numel(), &p.name)?)?;
    }
    let optimizer = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let step = r.u64("optimizer step")?;
            let mut f = [0f64; 5];
            for x in &mut f {
                *x = r.f64("optimizer config")?;
            }
            let mut st = AdamWState::new(AdamWConfig {
                lr: f[0],
                beta1: f[1],
                beta2: f[2],
                eps: f[3],
                weight_decay: f[4],
            });
            st.step = step;
            for p in params {
                st.m.push(r.f32s(p.tensor.numel(), "first moment")?);
                st.v.push(r.f32s(p.tensor.numel(), "second moment")?);
            }
            Some(st)
        }
        f => return Err(Error::CheckpointMismatch(format!("optimizer flag {f}"))),
    };
    if r.at != bytes.len() {
        return Err(Error::CheckpointMismatch(format!(
            "{} trailing bytes",
            bytes.len() - r.at
        )));
    }
    Ok(Checkpoint { model, optimizer })
}

pub fn save_checkpoint(model: &UNet<f32>, optimizer: Option<&AdamWState>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model, optimizer)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::Rng;
    use crate::tensorad::{adamw_step, Tensor};
    use crate::volume::ModalityId;

    fn trained_ish() -> (UNet<f32>, AdamWState) {
        let net = UNet::<f32>::new(&ModelConfig::desk(), 1).unwrap();
        let mut rng = Rng::new(2);
        for p in net.named_params() {
            p.tensor.set_grad(Some((0..p.tensor.numel()).map(|_| rng.normal() as f32).collect())).unwrap();
        }
        let mut st = AdamWState::new(AdamWConfig {
            lr: 1e-3,
            ..Default::default()
        });
        adamw_step(&net.parameters(), &mut st).unwrap();
        adamw_step(&net.parameters(), &mut st).unwrap();
        (net, st)
    }

    fn forward(net: &UNet<f32>) -> Vec<f32> {
        let mut rng = Rng::new(3);
        let x = Tensor::from_vec(&[1, 8, 4, 4, 4], (0..512).map(|_| rng.normal() as f32).collect()).unwrap();
        let c = Tensor::from_vec(&[1, 24, 4, 4, 4], (0..1536).map(|_| rng.normal() as f32).collect()).unwrap();
        net.forward(&x, &c, &[0.25], &[ModalityId::T1C]).unwrap().to_vec()
    }

    #[test]
    fn round_trip_bit_exact() {
        let (net, st) = trained_ish();
        let bytes = encode_checkpoint(&net, Some(&st)).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        for (a, b) in net.named_params().iter().zip(back.model.named_params()) {
            assert_eq!(a.name, b.name);
            let (va, vb) = (a.tensor.to_vec(), b.tensor.to_vec());
            assert!(va.iter().zip(&vb).all(|(x, y)| x.to_bits() == y.to_bits()), "{}", a.name);
        }
        assert_eq!(back.optimizer.as_ref(), Some(&st));
        let (fa, fb) = (forward(&net), forward(&back.model));
        assert!(fa.iter().zip(&fb).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(encode_checkpoint(&back.model, back.optimizer.as_ref()).unwrap(), bytes);
    }

    #[test]
    fn without_optimizer() {
        let (net, _) = trained_ish();
        let back = decode_checkpoint(&encode_checkpoint(&net, None).unwrap()).unwrap();
        assert!(back.optimizer.is_none());
    }

    #[test]
    fn truncation_detected_everywhere() {
        let (net, st) = trained_ish();
        let bytes = encode_checkpoint(&net, Some(&st)).unwrap();
        for cut in [0, 3, 7, 20, 100, bytes.len() / 2, bytes.len() - 1] {
            let err = decode_checkpoint(&bytes[..cut]).err().unwrap();
            assert!(matches!(err, Error::CheckpointTruncated(_)), "cut {cut}: {err}");
            assert!(err.to_string().starts_with("checkpoint-truncated"));
        }
    }

    #[test]
    fn version_and_magic_checked() {
        let (net, _) = trained_ish();
        let mut bytes = encode_checkpoint(&net, None).unwrap();
        bytes[4] = 9;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::CheckpointVersion { found: 9, expected: 1 })));
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::BadMagic(_))));
    }

    #[test]
    fn tensor_count_mismatch() {
        let (net, _) = trained_ish();
        let mut bytes = encode_checkpoint(&net, None).unwrap();
        let cfg_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let at = 12 + cfg_len;
        let n = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        bytes[at..at + 4].copy_from_slice(&(n + 1).to_le_bytes());
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::CheckpointMismatch(_))));
    }

    #[test]
    fn file_round_trip() {
        let (net, st) = trained_ish();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.wfmc");
        save_checkpoint(&net, Some(&st), &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back.optimizer.unwrap().step, 2);
        assert_eq!(forward(&net), forward(&back.model));
    }
}
