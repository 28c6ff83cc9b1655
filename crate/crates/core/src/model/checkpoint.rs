//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic u32 ("JEMB"), version u32
//! dim, image_dim, word_dim, user_dim, max_sentence_len, bias, block_count  (u32 each)
//! (width u32, filters u32) per conv block
//! user_count u32
//! param_block_count u32
//!   per block: name_len u32, name bytes, value_count u32, values f32...
//! sections u32 (bit 0: optimizer state, bit 1: metadata)
//! [optimizer] step u64, beta1 f64, beta2 f64, epsilon f64,
//!             then per param block: first moments f32..., second moments f32...
//! [metadata]  epoch u32, per task (text-to-user, image-to-text, image-to-user):
//!             present u8, mean median rank f64, gallery u64, queries u64;
//!             score f64
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{RetrievalReport, TaskResult};
use crate::optim::{AdamConfig, AdamState, CheckpointMeta};

use super::{ConvBlockConfig, Model, ModelConfig, ModelParameters};

pub const CHECKPOINT_MAGIC: u32 = u32::from_le_bytes(*b"JEMB");
pub const CHECKPOINT_VERSION: u32 = 1;

const SECTION_ADAM: u32 = 1;
const SECTION_META: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub adam: Option<AdamState>,
    pub meta: Option<CheckpointMeta>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend((v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend(v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend(v.to_le_bytes());
    }
    fn f32s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.0.extend((v as f32).to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s(&mut self, out: &mut [f64]) -> Result<()> {
        let raw = self.take(out.len() * 4)?;
        for (o, c) in out.iter_mut().zip(raw.chunks_exact(4)) {
            *o = f32::from_le_bytes(c.try_into().unwrap()) as f64;
        }
        Ok(())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend(CHECKPOINT_MAGIC.to_le_bytes());
        w.u32(CHECKPOINT_VERSION as usize);
        let c = &self.model.config;
        for v in [c.dim, c.image_dim, c.word_dim, c.user_dim, c.max_sentence_len] {
            w.u32(v);
        }
        w.u32(c.bias as usize);
        w.u32(c.conv_blocks.len());
        for b in &c.conv_blocks {
            w.u32(b.width);
            w.u32(b.filters);
        }
        w.u32(self.model.user_count());
        let blocks = self.model.params.blocks();
        w.u32(blocks.len());
        for b in &blocks {
            w.u32(b.name.len());
            w.0.extend(b.name.as_bytes());
            w.u32(b.values.len());
            w.f32s(b.values);
        }
        let mut sections = 0;
        if self.adam.is_some() {
            sections |= SECTION_ADAM;
        }
        if self.meta.is_some() {
            sections |= SECTION_META;
        }
        w.u32(sections as usize);
        if let Some(a) = &self.adam {
            w.u64(a.step);
            w.f64(a.config.beta1);
            w.f64(a.config.beta2);
            w.f64(a.config.epsilon);
            for (m, v) in a.first.iter().zip(&a.second) {
                w.f32s(m);
                w.f32s(v);
            }
        }
        if let Some(meta) = &self.meta {
            w.u32(meta.epoch);
            for t in meta.validation.tasks() {
                match t {
                    Some(t) => {
                        w.u8(1);
                        w.f64(t.mean_median_rank);
                        w.u64(t.gallery_size as u64);
                        w.u64(t.queries as u64);
                    }
                    None => {
                        w.u8(0);
                        w.f64(0.0);
                        w.u64(0);
                        w.u64(0);
                    }
                }
            }
            w.f64(meta.score);
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.u32()? as u32 != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()? as u32;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let dim = r.u32()?;
        let image_dim = r.u32()?;
        let word_dim = r.u32()?;
        let user_dim = r.u32()?;
        let max_sentence_len = r.u32()?;
        let bias = r.u32()? != 0;
        let n_blocks = r.u32()?;
        let mut conv_blocks = Vec::with_capacity(n_blocks.min(1024));
        for _ in 0..n_blocks {
            conv_blocks.push(ConvBlockConfig {
                width: r.u32()?,
                filters: r.u32()?,
            });
        }
        let user_count = r.u32()?;
        let config = ModelConfig {
            dim,
            image_dim,
            word_dim,
            user_dim,
            conv_blocks,
            max_sentence_len,
            bias,
        };
        config.validate()?;
        let mut params = ModelParameters::init(
            &config,
            user_count,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        );
        let n_param_blocks = r.u32()?;
        let mut sizes = Vec::new();
        {
            let mut blocks = params.blocks_mut();
            if blocks.len() != n_param_blocks {
                return Err(Error::Checkpoint(format!(
                    "expected {} parameter blocks, found {n_param_blocks}",
                    blocks.len()
                )));
            }
            for b in blocks.iter_mut() {
                let name_len = r.u32()?;
                let name = std::str::from_utf8(r.take(name_len)?)
                    .map_err(|_| Error::Checkpoint("block name is not utf-8".into()))?;
                if name != b.name {
                    return Err(Error::Checkpoint(format!(
                        "expected block {}, found {name}",
                        b.name
                    )));
                }
                let n = r.u32()?;
                if n != b.values.len() {
                    return Err(Error::Checkpoint(format!(
                        "block {name} has {n} values, expected {}",
                        b.values.len()
                    )));
                }
                r.f32s(b.values)?;
                sizes.push(n);
            }
        }
        let sections = r.u32()? as u32;
        let adam = if sections & SECTION_ADAM != 0 {
            let step = r.u64()?;
            let config = AdamConfig {
                beta1: r.f64()?,
                beta2: r.f64()?,
                epsilon: r.f64()?,
            };
            let mut first = Vec::with_capacity(sizes.len());
            let mut second = Vec::with_capacity(sizes.len());
            for &n in &sizes {
                let mut m = vec![0.0; n];
                let mut v = vec![0.0; n];
                r.f32s(&mut m)?;
                r.f32s(&mut v)?;
                first.push(m);
                second.push(v);
            }
            Some(AdamState {
                config,
                step,
                first,
                second,
            })
        } else {
            None
        };
        let meta = if sections & SECTION_META != 0 {
            let epoch = r.u32()?;
            let mut tasks = [None, None, None];
            for t in tasks.iter_mut() {
                let present = r.u8()? != 0;
                let mmr = r.f64()?;
                let gallery = r.u64()? as usize;
                let queries = r.u64()? as usize;
                if present {
                    *t = Some(TaskResult {
                        mean_median_rank: mmr,
                        gallery_size: gallery,
                        queries,
                    });
                }
            }
            let score = r.f64()?;
            let [text_to_user, image_to_text, image_to_user] = tasks;
            Some(CheckpointMeta {
                epoch,
                validation: RetrievalReport {
                    text_to_user,
                    image_to_text,
                    image_to_user,
                },
                score,
            })
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            model: Model { config, params },
            adam,
            meta,
        })
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
