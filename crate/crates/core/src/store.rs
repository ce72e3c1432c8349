//! Embedding file formats and the embedding cache.
//!
//! Binary records are concatenated, each laid out as
//! `id_len:u32 | id:utf8 | kind:u8 | dim:u32 | dim × f32`, all little-endian.
//! The text form has one `id,kind,v0,v1,…` record per line; blank lines and
//! lines starting with `#` are ignored.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use serde::Serialize;
use tracing::warn;

use crate::embedding::{EmbeddingKind, EmbeddingVector};
use crate::error::{GeoError, Result};

/// Appends one binary record to `out`.
pub fn encode_record(out: &mut Vec<u8>, id: &str, vector: &EmbeddingVector) {
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id.as_bytes());
    out.push(vector.kind().as_u8());
    out.extend_from_slice(&(vector.len() as u32).to_le_bytes());
    for v in vector.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_records<'a>(
    records: impl IntoIterator<Item = (&'a str, &'a EmbeddingVector)>,
) -> Vec<u8> {
    let mut out = Vec::new();
    for (id, v) in records {
        encode_record(&mut out, id, v);
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    record: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(GeoError::parse(
                self.record,
                format!("truncated record at byte {}", self.pos),
            ));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Decodes concatenated binary records. Errors carry the 1-based record index
/// in the `line` field.
pub fn decode_records(buf: &[u8]) -> Result<Vec<(String, EmbeddingVector)>> {
    let mut cur = Cursor {
        buf,
        pos: 0,
        record: 0,
    };
    let mut out = Vec::new();
    while cur.pos < buf.len() {
        cur.record += 1;
        let id_len = cur.u32()? as usize;
        let id = std::str::from_utf8(cur.take(id_len)?)
            .map_err(|_| GeoError::parse(cur.record, "id is not utf-8"))?
            .to_string();
        if id.is_empty() {
            return Err(GeoError::parse(cur.record, "empty id"));
        }
        let tag = cur.take(1)?[0];
        let kind = EmbeddingKind::from_u8(tag)
            .ok_or_else(|| GeoError::parse(cur.record, format!("unknown kind tag {tag}")))?;
        let dim = cur.u32()? as usize;
        let raw = cur.take(dim.checked_mul(4).ok_or_else(|| {
            GeoError::parse(cur.record, format!("dimension {dim} overflows"))
        })?)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let vector = EmbeddingVector::unchecked_len(kind, values)
            .map_err(|e| GeoError::parse(cur.record, e.to_string()))?;
        out.push((id, vector));
    }
    Ok(out)
}

/// Parses the line-oriented text format.
pub fn parse_text(text: &str) -> Result<Vec<(String, EmbeddingVector)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let id = fields.next().unwrap_or_default();
        if id.is_empty() {
            return Err(GeoError::parse(line_no, "empty id"));
        }
        let kind: EmbeddingKind = fields
            .next()
            .ok_or_else(|| GeoError::parse(line_no, "missing kind"))?
            .parse()
            .map_err(|e: GeoError| GeoError::parse(line_no, e.to_string()))?;
        let values = fields
            .map(|f| {
                f.parse::<f32>()
                    .map_err(|_| GeoError::parse(line_no, format!("bad value `{f}`")))
            })
            .collect::<Result<Vec<f32>>>()?;
        let vector = EmbeddingVector::unchecked_len(kind, values)
            .map_err(|e| GeoError::parse(line_no, e.to_string()))?;
        out.push((id.to_string(), vector));
    }
    Ok(out)
}

pub fn format_text<'a>(records: impl IntoIterator<Item = (&'a str, &'a EmbeddingVector)>) -> String {
    let mut out = String::new();
    for (id, v) in records {
        out.push_str(id);
        out.push(',');
        out.push_str(v.kind().name());
        for x in v.values() {
            out.push(',');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    out
}

/// Loads either format, choosing text for `.txt`/`.csv` extensions.
pub fn load_file(path: impl AsRef<Path>) -> Result<Vec<(String, EmbeddingVector)>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("txt" | "csv") => {
            let text = String::from_utf8(bytes)
                .map_err(|_| GeoError::parse(1, "embedding text file is not utf-8"))?;
            parse_text(&text)
        }
        _ => decode_records(&bytes),
    }
}

type Key = (String, EmbeddingKind);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub entries: usize,
    pub hits: u64,
    pub misses: u64,
}

/// Embeddings keyed by `(entity id, kind)`.
///
/// Reads take a shared lock; writes are serialized through a single writer
/// lock which also owns the optional append-only backing file.
pub struct EmbeddingCache {
    entries: RwLock<HashMap<Key, EmbeddingVector>>,
    writer: Mutex<Option<File>>,
    path: Option<PathBuf>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl Default for EmbeddingCache {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self {
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
            path: None,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Opens a persistent cache. A missing file starts empty; a corrupt file is
    /// discarded with a warning and the cache starts empty.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut map = HashMap::new();
        let mut truncate = false;
        match std::fs::read(&path) {
            Ok(bytes) => match decode_records(&bytes) {
                Ok(records) => {
                    for (id, v) in records {
                        map.insert((id, v.kind()), v);
                    }
                }
                Err(e) => {
                    warn!(path = %path.display(), error = %e, "embedding cache is corrupt; starting empty");
                    truncate = true;
                }
            },
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        let file = OpenOptions::new()
            .create(true)
            .append(!truncate)
            .write(true)
            .truncate(truncate)
            .open(&path)?;
        Ok(Self {
            entries: RwLock::new(map),
            writer: Mutex::new(Some(file)),
            path: Some(path),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    /// Merges records from a read-only seed file without persisting them.
    pub fn preload(&self, path: impl AsRef<Path>) -> Result<usize> {
        let records = load_file(path)?;
        let n = records.len();
        let mut map = self.entries.write().expect("cache lock poisoned");
        for (id, v) in records {
            map.insert((id, v.kind()), v);
        }
        Ok(n)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, entity_id: &str, kind: EmbeddingKind) -> Option<EmbeddingVector> {
        let found = self
            .entries
            .read()
            .expect("cache lock poisoned")
            .get(&(entity_id.to_string(), kind))
            .cloned();
        let counter = if found.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        found
    }

    pub fn put(&self, entity_id: &str, vector: EmbeddingVector) -> Result<()> {
        if entity_id.is_empty() {
            return Err(GeoError::validation("cache key needs a non-empty entity id"));
        }
        let mut writer = self.writer.lock().expect("cache writer poisoned");
        if let Some(file) = writer.as_mut() {
            let mut buf = Vec::new();
            encode_record(&mut buf, entity_id, &vector);
            file.write_all(&buf)?;
            file.flush()?;
        }
        self.entries
            .write()
            .expect("cache lock poisoned")
            .insert((entity_id.to_string(), vector.kind()), vector);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            entries: self.len(),
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    /// Ordered copy of every entry.
    pub fn snapshot(&self) -> BTreeMap<(String, EmbeddingKind), EmbeddingVector> {
        self.entries
            .read()
            .expect("cache lock poisoned")
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec3(kind: EmbeddingKind, v: [f32; 3]) -> EmbeddingVector {
        EmbeddingVector::with_base_dim(kind, v.to_vec(), 3).unwrap()
    }

    #[test]
    fn binary_layout() {
        let v = vec3(EmbeddingKind::Place, [1.0, -2.5, 0.0]);
        let buf = encode_records([("Q1", &v)]);
        assert_eq!(&buf[..4], &2u32.to_le_bytes());
        assert_eq!(&buf[4..6], b"Q1");
        assert_eq!(buf[6], 1);
        assert_eq!(&buf[7..11], &3u32.to_le_bytes());
        assert_eq!(&buf[11..15], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 4 + 2 + 1 + 4 + 12);
        assert_eq!(decode_records(&buf).unwrap(), vec![("Q1".to_string(), v)]);
    }

    #[test]
    fn truncated_and_bad_kind() {
        let v = vec3(EmbeddingKind::Place, [1.0, 2.0, 3.0]);
        let mut buf = encode_records([("Q1", &v), ("Q2", &v)]);
        buf.pop();
        assert!(matches!(decode_records(&buf), Err(GeoError::Parse { line: 2, .. })));
        let mut buf = encode_records([("Q1", &v)]);
        buf[6] = 9;
        assert!(decode_records(&buf).is_err());
    }

    #[test]
    fn text_format() {
        let parsed = parse_text("# comment\nQ1,geolocation,1,2,2\n\nQ2,place,0.5,0,-1\n").unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].1.values(), &[1.0, 2.0, 2.0]);
        assert_eq!(parsed[1].1.kind(), EmbeddingKind::Place);
        let text = format_text(parsed.iter().map(|(i, v)| (i.as_str(), v)));
        assert_eq!(parse_text(&text).unwrap(), parsed);
        assert!(matches!(
            parse_text("Q1,geolocation,1,x\n"),
            Err(GeoError::Parse { line: 1, .. })
        ));
        assert!(parse_text("Q1,colour,1\n").is_err());
    }

    #[test]
    fn empty_cache_get() {
        let c = EmbeddingCache::in_memory();
        assert!(c.get("Q1", EmbeddingKind::Geolocation).is_none());
        assert_eq!(c.stats().misses, 1);
        assert!(c.put("", vec3(EmbeddingKind::Place, [1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.bin");
        let v = vec3(EmbeddingKind::Object, [0.1, 0.2, f32::MIN_POSITIVE]);
        {
            let c = EmbeddingCache::open(&path).unwrap();
            c.put("Q7", v.clone()).unwrap();
            c.put("Q7", vec3(EmbeddingKind::Place, [1.0, 0.0, 0.0])).unwrap();
        }
        let c = EmbeddingCache::open(&path).unwrap();
        let got = c.get("Q7", EmbeddingKind::Object).unwrap();
        assert_eq!(
            got.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            v.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn corrupt_file_rebuilds_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.bin");
        std::fs::write(&path, [0xff, 0xff, 0xff, 0x7f, 1, 2]).unwrap();
        let c = EmbeddingCache::open(&path).unwrap();
        assert!(c.is_empty());
        c.put("Q1", vec3(EmbeddingKind::Place, [1.0, 2.0, 3.0])).unwrap();
        drop(c);
        let c = EmbeddingCache::open(&path).unwrap();
        assert_eq!(c.len(), 1);
    }
}
