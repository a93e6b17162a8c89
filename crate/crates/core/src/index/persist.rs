//! `CBIX` index files, little-endian:
//!
//! ```text
//! magic "CBIX" | version u16 = 1 | kind u8 (0 flat, 1 hnsw) | metric u8 (0 l2, 1 cosine)
//! dim u32 | count u64 | count × (id u64, dim × f32)
//! hnsw only: per node, level u8 then for each level 0..=level: u32 count + count × u64 id
//! crc32 u32 over every preceding byte
//! ```
//!
//! HNSW build parameters are not stored; a loaded graph searches with the
//! default parameters until [`HnswIndex::set_ef_search`] says otherwise.

use std::collections::HashMap;
use std::io::{Read, Write};

use super::hnsw::MAX_LEVEL;
use super::{FlatIndex, HnswIndex, HnswParams, IndexError, Metric, SealedIndex, VectorStore};

const MAGIC: &[u8; 4] = b"CBIX";
const VERSION: u16 = 1;

pub(crate) fn write_index<W: Write>(index: &SealedIndex, mut out: W) -> Result<(), IndexError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let (store, kind) = match index {
        SealedIndex::Flat(f) => (&f.store, 0u8),
        SealedIndex::Hnsw(h) => (&h.store, 1u8),
    };
    buf.push(kind);
    buf.push(match index.metric() {
        Metric::L2 => 0,
        Metric::CosineViaDot => 1,
    });
    buf.extend_from_slice(&(store.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (i, id) in store.ids.iter().enumerate() {
        buf.extend_from_slice(&id.to_le_bytes());
        for x in store.vector(i) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    if let SealedIndex::Hnsw(h) = index {
        for (node, layers) in h.links.iter().enumerate() {
            buf.push(h.levels[node]);
            for list in layers {
                buf.extend_from_slice(&(list.len() as u32).to_le_bytes());
                for &nb in list {
                    buf.extend_from_slice(&store.ids[nb as usize].to_le_bytes());
                }
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| IndexError::Format("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, IndexError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, IndexError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub(crate) fn read_index<R: Read>(mut input: R) -> Result<SealedIndex, IndexError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(IndexError::Format("bad magic".into()));
    }
    if bytes.len() < 6 + 4 {
        return Err(IndexError::Format("truncated file".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(IndexError::Format(format!("unsupported version {version}")));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(IndexError::Format(format!(
            "crc mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }

    let mut cur = Cursor { bytes: body, pos: 6 };
    let kind = cur.u8()?;
    let metric = match cur.u8()? {
        0 => Metric::L2,
        1 => Metric::CosineViaDot,
        m => return Err(IndexError::Format(format!("unknown metric tag {m}"))),
    };
    let dim = cur.u32()? as usize;
    if dim == 0 {
        return Err(IndexError::Format("zero dimension".into()));
    }
    let count = usize::try_from(cur.u64()?)
        .map_err(|_| IndexError::Format("record count overflows".into()))?;
    let record_bytes = dim
        .checked_mul(4)
        .and_then(|b| b.checked_add(8))
        .and_then(|b| b.checked_mul(count))
        .ok_or_else(|| IndexError::Format("record section overflows".into()))?;
    if record_bytes > body.len() {
        return Err(IndexError::Format("truncated file".into()));
    }
    let mut store = VectorStore {
        dim,
        ids: Vec::with_capacity(count),
        data: Vec::with_capacity(count * dim),
    };
    for _ in 0..count {
        store.ids.push(cur.u64()?);
        for _ in 0..dim {
            store.data.push(cur.f32()?);
        }
    }

    let index = match kind {
        0 => SealedIndex::Flat(FlatIndex::new(store, metric)),
        1 => {
            let positions: HashMap<u64, u32> = store
                .ids
                .iter()
                .enumerate()
                .map(|(i, &id)| (id, i as u32))
                .collect();
            if positions.len() != count {
                return Err(IndexError::Format("duplicate record ids".into()));
            }
            let mut levels = Vec::with_capacity(count);
            let mut links = Vec::with_capacity(count);
            for _ in 0..count {
                let level = cur.u8()?;
                if level > MAX_LEVEL {
                    return Err(IndexError::Format(format!("node level {level} too high")));
                }
                let mut layers = Vec::with_capacity(level as usize + 1);
                for _ in 0..=level {
                    let n = cur.u32()? as usize;
                    let mut list = Vec::with_capacity(n.min(1024));
                    for _ in 0..n {
                        let id = cur.u64()?;
                        let pos = *positions.get(&id).ok_or_else(|| {
                            IndexError::Format(format!("link to unknown record {id}"))
                        })?;
                        list.push(pos);
                    }
                    layers.push(list);
                }
                levels.push(level);
                links.push(layers);
            }
            SealedIndex::Hnsw(HnswIndex::from_parts(
                store,
                metric,
                HnswParams::default(),
                levels,
                links,
            ))
        }
        k => return Err(IndexError::Format(format!("unknown index kind {k}"))),
    };
    if cur.pos != body.len() {
        return Err(IndexError::Format("trailing bytes before checksum".into()));
    }
    Ok(index)
}
