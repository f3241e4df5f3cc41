//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes  "RHNCKPT1"
//! version   u32
//! body_len  u64      bytes between this field and the CRC
//! family    u8       0 rnn, 1 rhn, 2 dt, 3 dts
//! config    u32 length + UTF-8 key = value lines
//! tensors   u32 count, then per tensor:
//!             u32 name length, name, u32 rank, u64 dims..., f64 values
//! crc       u32      CRC-32 of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rhn_core::cells::Activation;
use rhn_core::numerics::RngStream;
use rhn_core::{Cell, CellSpec, Family, InitScheme, InputKind, Network, NetworkSpec};
use thiserror::Error;

use crate::config::{Flag, KeyValues};

pub const MAGIC: &[u8; 8] = b"RHNCKPT1";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (this build reads {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("checkpoint CRC mismatch: stored {stored:08x}, computed {computed:08x}")]
    Crc { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type CkptResult<T> = Result<T, CheckpointError>;

fn format_err(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Format(msg.into())
}

fn family_tag(f: Family) -> u8 {
    match f {
        Family::Rnn => 0,
        Family::Rhn => 1,
        Family::Dt => 2,
        Family::Dts => 3,
    }
}

fn family_from_tag(t: u8) -> CkptResult<Family> {
    Ok(match t {
        0 => Family::Rnn,
        1 => Family::Rhn,
        2 => Family::Dt,
        3 => Family::Dts,
        other => return Err(format_err(format!("unknown family tag {other}"))),
    })
}

/// Everything needed to rebuild an empty network of the right shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub family: Family,
    pub input: InputKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub depth: usize,
    pub coupled: bool,
    pub input_first_layer_only: bool,
    pub tied: bool,
    pub activation: Activation,
    /// Initial transform-gate bias; recorded so a reloaded RHN compares equal.
    pub transform_bias_init: f64,
}

impl Architecture {
    pub fn of(net: &Network) -> Self {
        let (coupled, first_only, activation, bias) = match &net.cell {
            Cell::Rhn(p) => (
                p.config.coupled_gates,
                p.config.input_first_layer_only,
                Activation::Tanh,
                p.config.transform_bias_init,
            ),
            Cell::Rnn(p) => (true, true, p.activation, 0.0),
            Cell::Dt(_) => (true, true, Activation::Tanh, 0.0),
        };
        Self {
            family: net.cell.family(),
            input: net.input,
            input_dim: net.cell.input_dim(),
            hidden_dim: net.cell.hidden_dim(),
            depth: net.cell.depth(),
            coupled,
            input_first_layer_only: first_only,
            tied: net.heads.tied(),
            activation,
            transform_bias_init: bias,
        }
    }

    pub fn network_spec(&self) -> NetworkSpec {
        let mut cell = CellSpec::rhn(self.input_dim, self.hidden_dim, self.depth).with_family(self.family);
        cell.coupled_gates = self.coupled;
        cell.input_first_layer_only = self.input_first_layer_only;
        cell.transform_bias_init = self.transform_bias_init;
        NetworkSpec {
            cell,
            input: self.input,
            tied: self.tied,
        }
    }

    /// All-zero network of this shape.
    pub fn zero_network(&self) -> rhn_core::Result<Network> {
        let mut net = self
            .network_spec()
            .init(InitScheme::Uniform { scale: 0.0 }, &mut RngStream::new(0))?;
        if let Cell::Rnn(p) = &mut net.cell {
            p.activation = self.activation;
        }
        Ok(net)
    }

    fn to_text(&self) -> String {
        let (kind, size) = match self.input {
            InputKind::Symbols { vocab } => ("symbols", vocab),
            InputKind::Frames { dim } => ("frames", dim),
        };
        format!(
            "family = {}\ninput = {kind}\noutput_dim = {size}\ninput_dim = {}\nhidden_dim = {}\ndepth = {}\n\
             coupled = {}\ninput_first_layer_only = {}\ntied = {}\nactivation = {}\ntransform_bias_init = {:?}\n",
            self.family,
            self.input_dim,
            self.hidden_dim,
            self.depth,
            self.coupled,
            self.input_first_layer_only,
            self.tied,
            self.activation.as_str(),
            self.transform_bias_init
        )
    }

    fn take_from(kv: &mut KeyValues) -> CkptResult<Self> {
        let bad = |e: crate::config::ConfigError| format_err(format!("config block: {e}"));
        let family: String = kv.take_required("family").map_err(bad)?;
        let family: Family = family.parse().map_err(|e: rhn_core::Error| format_err(e.to_string()))?;
        let kind: String = kv.take_required("input").map_err(bad)?;
        let size: usize = kv.take_required("output_dim").map_err(bad)?;
        let input = match kind.as_str() {
            "symbols" => InputKind::Symbols { vocab: size },
            "frames" => InputKind::Frames { dim: size },
            other => return Err(format_err(format!("unknown input kind {other:?}"))),
        };
        let activation: String = kv.take_required("activation").map_err(bad)?;
        Ok(Self {
            family,
            input,
            input_dim: kv.take_required("input_dim").map_err(bad)?,
            hidden_dim: kv.take_required("hidden_dim").map_err(bad)?,
            depth: kv.take_required("depth").map_err(bad)?,
            coupled: kv.take_required::<Flag>("coupled").map_err(bad)?.0,
            input_first_layer_only: kv.take_required::<Flag>("input_first_layer_only").map_err(bad)?.0,
            tied: kv.take_required::<Flag>("tied").map_err(bad)?.0,
            activation: activation.parse().map_err(|e: rhn_core::Error| format_err(e.to_string()))?,
            transform_bias_init: kv.take_required("transform_bias_init").map_err(bad)?,
        })
    }
}

/// A network plus free-form metadata (run id, epoch, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(network: Network) -> Self {
        Self {
            network,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::of(&self.network)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = Vec::new();
        body.push(family_tag(self.network.cell.family()));
        let mut config = self.architecture().to_text();
        for (k, v) in &self.meta {
            config.push_str(&format!("meta.{k} = {v}\n"));
        }
        put_bytes(&mut body, config.as_bytes());
        let tensors = self.network.tensors();
        body.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in &tensors {
            put_bytes(&mut body, t.name.as_bytes());
            body.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                body.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(body.len() + 24);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(&body);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CkptResult<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let header = MAGIC.len() + 4 + 8;
        if bytes.len() < header {
            return Err(CheckpointError::Truncated {
                expected: header as u64,
                found: bytes.len() as u64,
            });
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: VERSION,
            });
        }
        let body_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let expected = (header as u64).saturating_add(body_len).saturating_add(4);
        if (bytes.len() as u64) < expected {
            return Err(CheckpointError::Truncated {
                expected,
                found: bytes.len() as u64,
            });
        }
        if (bytes.len() as u64) > expected {
            return Err(format_err(format!("{} trailing bytes", bytes.len() as u64 - expected)));
        }
        let split = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[split..].try_into().unwrap());
        let computed = crc32fast::hash(&bytes[..split]);
        if stored != computed {
            return Err(CheckpointError::Crc { stored, computed });
        }
        let mut r = Reader {
            buf: &bytes[header..split],
            pos: 0,
        };
        let family = family_from_tag(r.u8()?)?;
        let config = std::str::from_utf8(r.bytes()?).map_err(|_| format_err("config block is not UTF-8"))?;
        let mut kv = KeyValues::parse(config).map_err(|e| format_err(format!("config block: {e}")))?;
        let arch = Architecture::take_from(&mut kv)?;
        if arch.family != family {
            return Err(format_err(format!("family tag {family} disagrees with config {}", arch.family)));
        }
        let mut meta = BTreeMap::new();
        for key in kv_keys(config) {
            if let Some(name) = key.strip_prefix("meta.") {
                let v: String = kv.take(&key).map_err(|e| format_err(e.to_string()))?.unwrap_or_default();
                meta.insert(name.to_string(), v);
            }
        }
        kv.finish().map_err(|e| format_err(format!("config block: {e}")))?;

        let mut network = arch.zero_network().map_err(|e| format_err(e.to_string()))?;
        let count = r.u32()? as usize;
        let mut slots = network.tensors_mut();
        if count != slots.len() {
            return Err(format_err(format!("{count} tensors stored, architecture has {}", slots.len())));
        }
        for slot in slots.iter_mut() {
            let name = std::str::from_utf8(r.bytes()?).map_err(|_| format_err("tensor name is not UTF-8"))?;
            if name != slot.name {
                return Err(format_err(format!("expected tensor {}, found {name}", slot.name)));
            }
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<CkptResult<Vec<_>>>()?;
            if dims != slot.dims {
                return Err(format_err(format!("tensor {name}: dims {dims:?}, expected {:?}", slot.dims)));
            }
            for v in slot.data.iter_mut() {
                *v = r.f64()?;
            }
        }
        drop(slots);
        if r.pos != r.buf.len() {
            return Err(format_err("bytes left after the last tensor"));
        }
        Ok(Self { network, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> CkptResult<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> CkptResult<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn kv_keys(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, _)| k.trim().to_string())
        .collect()
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> CkptResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format_err("record runs past the end of the body"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> CkptResult<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> CkptResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> CkptResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> CkptResult<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> CkptResult<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}
