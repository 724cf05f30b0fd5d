//! Versioned binary checkpoints.
//!
//! All integers and floats are little-endian; strings are a `u32` byte
//! length followed by UTF-8.
//!
//! ```text
//! magic        8 bytes  "DCLCKPT\0"
//! version      u32      1
//! kind         u8       1 = online + target, 2 = single encoder
//! step         u64      optimizer steps taken
//! tau_ema      f64
//! config       string   `key=value` lines echoing the encoder config
//! networks     1 or 2 × network (online first)
//! checksum     u64      FNV-1a 64 of every preceding byte
//!
//! network:
//!   n_params   u32
//!   n_params × { name string, rank u32, rank × dim u64, data f64... }
//!   n_stats    u32
//!   n_stats  × { dim u32, momentum f64, step u64, warmup u64,
//!                clamped u64, psi2 dim × f64 }
//! ```
//!
//! Loading rebuilds the encoder from the config echo and then requires the
//! stored parameter names, order and shapes to match it exactly.

use std::path::Path;

use dcl_core::model::{EncoderConfig, EncoderState, NormKind, PowerNormStats};
use dcl_core::objectives::DualNetworks;

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"DCLCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Dual(DualNetworks),
    Single(EncoderState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub payload: Payload,
}

impl Checkpoint {
    /// The online network (or the single encoder).
    pub fn online(&self) -> &EncoderState {
        match &self.payload {
            Payload::Dual(n) => &n.online,
            Payload::Single(e) => e,
        }
    }

    pub fn into_online(self) -> EncoderState {
        match self.payload {
            Payload::Dual(n) => n.online,
            Payload::Single(e) => e,
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn config_echo(c: &EncoderConfig) -> String {
    format!(
        "vocab_size={}\nhidden={}\nlayers={}\nheads={}\nff={}\nmax_len={}\nnorm={}\nprojection_dim={}\n\
         projection_layers={}\nprojection_batch_norm={}\nnum_classes={}\npowernorm_momentum={}\n\
         powernorm_warmup={}\nnorm_eps={}\ninit_seed={}\n",
        c.vocab_size,
        c.hidden,
        c.layers,
        c.heads,
        c.ff,
        c.max_len,
        c.norm.as_str(),
        c.projection_dim,
        c.projection_layers,
        c.projection_batch_norm,
        c.num_classes,
        c.powernorm_momentum,
        c.powernorm_warmup,
        c.norm_eps,
        c.init_seed
    )
}

fn parse_echo(text: &str) -> std::result::Result<EncoderConfig, String> {
    let mut c = EncoderConfig::small(0);
    let mut seen = 0;
    for line in text.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| format!("bad config line {line:?}"))?;
        let bad = |_| format!("bad value for {k}: {v:?}");
        match k {
            "vocab_size" => c.vocab_size = v.parse().map_err(bad)?,
            "hidden" => c.hidden = v.parse().map_err(bad)?,
            "layers" => c.layers = v.parse().map_err(bad)?,
            "heads" => c.heads = v.parse().map_err(bad)?,
            "ff" => c.ff = v.parse().map_err(bad)?,
            "max_len" => c.max_len = v.parse().map_err(bad)?,
            "norm" => c.norm = NormKind::parse(v).ok_or_else(|| format!("bad norm {v:?}"))?,
            "projection_dim" => c.projection_dim = v.parse().map_err(bad)?,
            "projection_layers" => c.projection_layers = v.parse().map_err(bad)?,
            "projection_batch_norm" => c.projection_batch_norm = v.parse().map_err(|_| format!("bad value for {k}"))?,
            "num_classes" => c.num_classes = v.parse().map_err(bad)?,
            "powernorm_momentum" => c.powernorm_momentum = v.parse().map_err(|_| format!("bad value for {k}"))?,
            "powernorm_warmup" => c.powernorm_warmup = v.parse().map_err(bad)?,
            "norm_eps" => c.norm_eps = v.parse().map_err(|_| format!("bad value for {k}"))?,
            "init_seed" => c.init_seed = v.parse().map_err(bad)?,
            _ => return Err(format!("unknown config key {k:?}")),
        }
        seen += 1;
    }
    if seen != 15 {
        return Err(format!("config echo has {seen} keys, expected 15"));
    }
    Ok(c)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn network(&mut self, e: &EncoderState) {
        self.u32(e.names().len() as u32);
        for (name, t) in e.names().iter().zip(e.params()) {
            self.str(name);
            self.u32(t.shape().len() as u32);
            t.shape().iter().for_each(|&d| self.u64(d as u64));
            t.data().iter().for_each(|&x| self.f64(x));
        }
        self.u32(e.stats().len() as u32);
        for s in e.stats() {
            self.u32(s.psi2.len() as u32);
            self.f64(s.momentum);
            self.u64(s.step);
            self.u64(s.warmup);
            self.u64(s.clamped);
            s.psi2.iter().for_each(|&x| self.f64(x));
        }
    }
}

/// Serializes a checkpoint to bytes.
pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    let (kind, tau, nets): (u8, f64, Vec<&EncoderState>) = match &ck.payload {
        Payload::Dual(n) => (1, n.tau_ema, vec![&n.online, &n.target]),
        Payload::Single(e) => (2, 1.0, vec![e]),
    };
    w.u8(kind);
    w.u64(ck.step);
    w.f64(tau);
    w.str(&config_echo(nets[0].config()));
    for n in nets {
        w.network(n);
    }
    let sum = fnv1a(&w.0);
    w.u64(sum);
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

type R<T> = std::result::Result<T, String>;

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> R<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("truncated file")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> R<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> R<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> R<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> R<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> R<&'a str> {
        let n = self.u32()? as usize;
        std::str::from_utf8(self.take(n)?).map_err(|_| "invalid UTF-8 string".into())
    }

    fn network(&mut self, cfg: &EncoderConfig) -> R<EncoderState> {
        let mut e = EncoderState::new(cfg.clone()).map_err(|e| e.to_string())?;
        let n = self.u32()? as usize;
        if n != e.names().len() {
            return Err(format!("{n} parameters stored, config implies {}", e.names().len()));
        }
        for i in 0..n {
            let name = self.str()?;
            if name != e.names()[i] {
                return Err(format!("parameter {i} is {name:?}, expected {:?}", e.names()[i]));
            }
            let rank = self.u32()? as usize;
            let shape = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<R<Vec<_>>>()?;
            let slot = &mut e.params_mut()[i];
            if shape != slot.shape() {
                return Err(format!("parameter {name} has shape {shape:?}, expected {:?}", slot.shape()));
            }
            for x in slot.data_mut() {
                *x = self.f64()?;
            }
        }
        let ns = self.u32()? as usize;
        if ns != e.stats().len() {
            return Err(format!("{ns} normalization sites stored, config implies {}", e.stats().len()));
        }
        for i in 0..ns {
            let dim = self.u32()? as usize;
            if dim != e.stats()[i].dim() {
                return Err(format!("normalization site {i} has width {dim}, expected {}", e.stats()[i].dim()));
            }
            let mut s = PowerNormStats::new(dim, self.f64()?, 0);
            s.step = self.u64()?;
            s.warmup = self.u64()?;
            s.clamped = self.u64()?;
            for p in s.psi2.iter_mut() {
                *p = self.f64()?;
            }
            e.stats_mut()[i] = s;
        }
        if !e.params().iter().all(|t| t.all_finite()) {
            return Err("non-finite parameter values".into());
        }
        Ok(e)
    }
}

/// Parses checkpoint bytes; any inconsistency is an error and nothing is
/// partially returned.
pub fn decode(bytes: &[u8]) -> R<Checkpoint> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err("not a dcl checkpoint (bad magic)".into());
    }
    let mut r = Reader { buf: bytes, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version} (this build reads {VERSION})"));
    }
    if bytes.len() < r.pos + 8 {
        return Err("truncated file".into());
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let kind = r.u8()?;
    let step = r.u64()?;
    let tau = r.f64()?;
    let cfg = parse_echo(r.str()?)?;
    cfg.validate().map_err(|e| e.to_string())?;
    let payload = match kind {
        1 => {
            let online = r.network(&cfg)?;
            let target = r.network(&cfg)?;
            if !(0.0..=1.0).contains(&tau) {
                return Err(format!("tau_ema {tau} outside [0, 1]"));
            }
            Payload::Dual(DualNetworks { online, target, tau_ema: tau })
        }
        2 => Payload::Single(r.network(&cfg)?),
        k => return Err(format!("unknown checkpoint kind {k}")),
    };
    if r.pos != body.len() {
        return Err(if r.pos > body.len() { "truncated file".into() } else { "trailing bytes after networks".into() });
    }
    if fnv1a(body) != stored {
        return Err("checksum mismatch (file corrupted or truncated)".into());
    }
    Ok(Checkpoint { step, payload })
}

/// Writes a checkpoint; an existing file is never replaced.
pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    crate::io::write_new(path, &encode(ck))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|msg| CliError::Checkpoint {
        path: path.to_path_buf(),
        msg,
    })
}
