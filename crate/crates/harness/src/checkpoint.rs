//! Deterministic binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "VSODCKPT" u32 version
//! u64 len, config as JSON
//! u64 step
//! [u8; 32] rng seed, u64 rng stream, u128 rng word position
//! f64 lr, f64 beta1, f64 beta2, f64 eps, u64 adam t
//! u64 param count, then per parameter:
//!     u32 len, name, 4 x u64 shape, values, adam m, adam v
//! ```

use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use vsod_core::{ParamStore, Shape, Tensor};

use crate::config::TrainConfig;
use crate::error::{HarnessError, Result};
use crate::optim::Adam;

const MAGIC: &[u8; 8] = b"VSODCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub rng: RngState,
    pub params: ParamStore,
    pub adam: Adam,
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| "truncated checkpoint".to_string())?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self, shape: Shape) -> std::result::Result<Tensor, String> {
        let raw = self.take(8 * shape.numel())?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::from_vec(shape, data).map_err(|e| e.to_string())
    }
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        let a = &self.adam;
        for v in [a.learning_rate, a.beta1, a.beta2, a.eps] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&a.t.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (id, name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let s = t.shape();
            for d in [s.n, s.c, s.h, s.w] {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_tensor(&mut out, t);
            put_tensor(&mut out, &a.m[id.index()]);
            put_tensor(&mut out, &a.v[id.index()]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err("not a checkpoint file".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let len = r.u64()? as usize;
        let config: TrainConfig = serde_json::from_slice(r.take(len)?).map_err(|e| e.to_string())?;
        let step = r.u64()?;
        let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
        let (learning_rate, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let t = r.u64()?;
        let count = r.u64()? as usize;
        let mut params = ParamStore::new();
        let (mut m, mut v) = (Vec::with_capacity(count), Vec::with_capacity(count));
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| e.to_string())?;
            let dims = [r.u64()?, r.u64()?, r.u64()?, r.u64()?].map(|d| d as usize);
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            params.add(name, r.tensor(shape)?);
            m.push(r.tensor(shape)?);
            v.push(r.tensor(shape)?);
        }
        if r.at != bytes.len() {
            return Err("trailing bytes after checkpoint".into());
        }
        Ok(Checkpoint {
            config,
            step,
            rng: RngState { seed, stream, word_pos },
            params,
            adam: Adam {
                learning_rate,
                beta1,
                beta2,
                eps,
                t,
                m,
                v,
            },
        })
    }

    /// Writes to a temporary file in the target directory and renames it into
    /// place, so the target never holds a partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| HarnessError::io(dir, e))?;
        tmp.write_all(&self.to_bytes()).map_err(|e| HarnessError::io(tmp.path(), e))?;
        tmp.as_file().sync_all().map_err(|e| HarnessError::io(tmp.path(), e))?;
        tmp.persist(path).map_err(|e| HarnessError::io(path, e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|message| HarnessError::Checkpoint {
            path: path.to_path_buf(),
            message,
        })
    }
}
