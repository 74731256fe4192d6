//! `SILR` binary layout (all integers little-endian):
//!
//! ```text
//! "SILR" | u32 version | u32 count | u32 C | u32 H | u32 W | u8 dtype
//! count * C * H * W f32 values, feature-major
//! u32 metadata length | metadata JSON
//! ```

use std::path::Path;

use super::{IlluminationRepository, RepoMeta};
use crate::error::{Error, Result};
use crate::model::FeatureGrid;

pub const MAGIC: &[u8; 4] = b"SILR";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

pub(super) fn encode(repo: &IlluminationRepository) -> Result<Vec<u8>> {
    let (c, h, w) = repo.shape();
    let dims = [repo.len(), c, h, w].map(|v| {
        u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} exceeds u32")))
    });
    let meta = serde_json::to_vec(&repo.meta)?;
    let mut out = Vec::with_capacity(25 + 4 * repo.len() * c * h * w + 4 + meta.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for d in dims {
        out.extend_from_slice(&d?.to_le_bytes());
    }
    out.push(DTYPE_F32);
    for f in &repo.features {
        for v in &f.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format {
                offset: self.pos as u64,
                reason: format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub(super) fn decode(bytes: &[u8]) -> Result<IlluminationRepository> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: "bad magic, expected SILR".into(),
        });
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let count = cur.u32("count")? as usize;
    let c = cur.u32("channel count")? as usize;
    let h = cur.u32("height")? as usize;
    let w = cur.u32("width")? as usize;
    let dtype_at = cur.pos;
    let dtype = cur.take(1, "dtype")?[0];
    if dtype != DTYPE_F32 {
        return Err(Error::Format {
            offset: dtype_at as u64,
            reason: format!("unknown dtype code {dtype}"),
        });
    }
    let per = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::Format {
            offset: 8,
            reason: "feature size overflows".into(),
        })?;
    let body_len = per
        .checked_mul(count)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Format {
            offset: 8,
            reason: "feature block size overflows".into(),
        })?;
    let body = cur.take(body_len, "feature block")?;
    let features = (0..count)
        .map(|n| {
            let values = body[4 * n * per..4 * (n + 1) * per]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            FeatureGrid::new(c, h, w, values)
        })
        .collect::<Result<Vec<_>>>()?;
    let meta_len = cur.u32("metadata length")? as usize;
    let meta_at = cur.pos;
    let meta: RepoMeta =
        serde_json::from_slice(cur.take(meta_len, "metadata")?).map_err(|e| Error::Format {
            offset: meta_at as u64,
            reason: format!("metadata: {e}"),
        })?;
    if cur.pos != bytes.len() {
        return Err(Error::Format {
            offset: cur.pos as u64,
            reason: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    if (meta.channels, meta.height, meta.width) != (c, h, w) {
        return Err(Error::Format {
            offset: meta_at as u64,
            reason: "metadata shape disagrees with header".into(),
        });
    }
    IlluminationRepository::from_parts(features, meta)
}

pub(super) fn save(repo: &IlluminationRepository, path: &Path) -> Result<()> {
    let bytes = encode(repo)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(super) fn load(path: &Path) -> Result<IlluminationRepository> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
