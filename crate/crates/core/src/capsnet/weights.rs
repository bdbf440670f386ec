//! Parameter storage, seeded initialization and the binary weight file.
//!
//! File layout, all integers little-endian `u32`:
//! magic `GKCAPSW1`, tensor count, then per tensor: name length, UTF-8 name,
//! rank, dims, and `prod(dims)` little-endian `f32` values.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Dense, RouteWeights};
use super::{CapsNetConfig, CapsNetError};

const MAGIC: &[u8; 8] = b"GKCAPSW1";

pub const HEAD_NAMES: [&str; 4] = ["recon", "rotation", "quality", "width"];

/// Three dense layers: two hidden with leaky ReLU, one linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub layers: [Dense; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapsNetWeights {
    pub edge: Vec<Dense>,
    pub point_mlp: Dense,
    pub fc: Dense,
    pub primary: Dense,
    pub route: RouteWeights,
    /// In [`HEAD_NAMES`] order.
    pub heads: [Head; 4],
}

/// Name, dims and fan-in of one stored tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub dims: Vec<usize>,
    pub fan_in: usize,
}

fn dense_info(name: &str, d: &Dense, out: &mut Vec<TensorInfo>) {
    out.push(TensorInfo {
        name: format!("{name}.w"),
        dims: vec![d.outputs, d.inputs],
        fan_in: d.inputs,
    });
    out.push(TensorInfo {
        name: format!("{name}.b"),
        dims: vec![d.outputs],
        fan_in: d.inputs,
    });
}

impl CapsNetWeights {
    /// All-zero parameters shaped for `config`.
    pub fn zeros(config: &CapsNetConfig) -> Self {
        let mut edge = Vec::with_capacity(config.edge_channels.len());
        let mut prev = 3;
        for &c in &config.edge_channels {
            edge.push(Dense::zeros(2 * prev, c));
            prev = c;
        }
        let concat: usize = config.edge_channels.iter().sum();
        let head = |per_point: usize| Head {
            layers: [
                Dense::zeros(config.secondary_dim, config.head_hidden[0]),
                Dense::zeros(config.head_hidden[0], config.head_hidden[1]),
                Dense::zeros(config.head_hidden[1], config.num_points * per_point),
            ],
        };
        Self {
            edge,
            point_mlp: Dense::zeros(concat, config.feature_dim),
            fc: Dense::zeros(config.feature_dim, config.fc_dim),
            primary: Dense::zeros(config.fc_dim, config.primary_count * config.primary_dim),
            route: RouteWeights::zeros(
                config.primary_count,
                config.secondary_count,
                config.primary_dim,
                config.secondary_dim,
            ),
            heads: [head(3), head(4), head(1), head(1)],
        }
    }

    /// Tensor descriptors in file order; [`Self::data`] and
    /// [`Self::data_mut`] follow the same order.
    pub fn layout(&self) -> Vec<TensorInfo> {
        let mut out = Vec::new();
        for (l, d) in self.edge.iter().enumerate() {
            dense_info(&format!("edge{l}"), d, &mut out);
        }
        dense_info("point_mlp", &self.point_mlp, &mut out);
        dense_info("fc", &self.fc, &mut out);
        dense_info("primary", &self.primary, &mut out);
        let r = &self.route;
        out.push(TensorInfo {
            name: "route.w".into(),
            dims: vec![r.inputs, r.outputs, r.out_dim, r.in_dim],
            fan_in: r.in_dim,
        });
        for (name, head) in HEAD_NAMES.iter().zip(&self.heads) {
            for (l, d) in head.layers.iter().enumerate() {
                dense_info(&format!("{name}{l}"), d, &mut out);
            }
        }
        out
    }

    fn dense_list(&self) -> Vec<&Dense> {
        let mut v: Vec<&Dense> = self.edge.iter().collect();
        v.extend([&self.point_mlp, &self.fc, &self.primary]);
        v
    }

    pub fn data(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for d in self.dense_list() {
            out.push(&d.w);
            out.push(&d.b);
        }
        out.push(&self.route.w);
        for d in self.heads.iter().flat_map(|h| &h.layers) {
            out.push(&d.w);
            out.push(&d.b);
        }
        out
    }

    pub fn data_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for d in self
            .edge
            .iter_mut()
            .chain([&mut self.point_mlp, &mut self.fc, &mut self.primary])
        {
            out.push(&mut d.w);
            out.push(&mut d.b);
        }
        out.push(&mut self.route.w);
        for d in self.heads.iter_mut().flat_map(|h| &mut h.layers) {
            out.push(&mut d.w);
            out.push(&mut d.b);
        }
        out
    }

    /// Uniform in `±1/sqrt(fan_in)`, rounded to `f32` so that a save/load
    /// round trip is exact.
    pub fn init(config: &CapsNetConfig) -> Self {
        let mut w = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.weights_seed);
        let layout = w.layout();
        for (info, data) in layout.iter().zip(w.data_mut()) {
            let a = 1.0 / (info.fan_in as f64).sqrt();
            for x in data.iter_mut() {
                *x = rng.random_range(-a..a) as f32 as f64;
            }
        }
        w
    }

    pub fn parameter_count(&self) -> usize {
        self.data().iter().map(|d| d.len()).sum()
    }

    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        let layout = self.layout();
        out.write_all(MAGIC)?;
        out.write_all(&(layout.len() as u32).to_le_bytes())?;
        for (t, data) in layout.iter().zip(self.data()) {
            out.write_all(&(t.name.len() as u32).to_le_bytes())?;
            out.write_all(t.name.as_bytes())?;
            out.write_all(&(t.dims.len() as u32).to_le_bytes())?;
            for &d in &t.dims {
                out.write_all(&(d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(4 * data.len());
            for &x in data {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CapsNetError> {
        let path = path.as_ref();
        let io = |e| CapsNetError::Io(format!("{}: {e}", path.display()));
        let file = std::fs::File::create(path).map_err(io)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(io)?;
        w.flush().map_err(io)
    }

    /// Reads a weight file and checks every tensor against `config`.
    pub fn read_from(config: &CapsNetConfig, mut input: impl Read) -> Result<Self, CapsNetError> {
        let bad = |m: String| CapsNetError::BadWeights(m);
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| CapsNetError::Io(e.to_string()))?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let mut w = Self::zeros(config);
        let layout = w.layout();
        let count = cur.u32()? as usize;
        if count != layout.len() {
            return Err(bad(format!("expected {} tensors, found {count}", layout.len())));
        }
        for (t, data) in layout.iter().zip(w.data_mut()) {
            let len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| bad("tensor name is not UTF-8".into()))?;
            if name != t.name {
                return Err(bad(format!("expected tensor {}, found {name}", t.name)));
            }
            let rank = cur.u32()? as usize;
            let dims = (0..rank)
                .map(|_| cur.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            if dims != t.dims {
                return Err(bad(format!("tensor {}: dims {dims:?}, expected {:?}", t.name, t.dims)));
            }
            let raw = cur.take(4 * data.len())?;
            for (x, chunk) in data.iter_mut().zip(raw.chunks_exact(4)) {
                *x = f32::from_le_bytes(chunk.try_into().expect("chunk of 4")) as f64;
            }
        }
        if cur.pos != bytes.len() {
            return Err(bad("trailing bytes".into()));
        }
        Ok(w)
    }

    pub fn load(config: &CapsNetConfig, path: impl AsRef<Path>) -> Result<Self, CapsNetError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| CapsNetError::Io(format!("{}: {e}", path.display())))?;
        Self::read_from(config, std::io::BufReader::new(file))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CapsNetError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CapsNetError::BadWeights("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CapsNetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
