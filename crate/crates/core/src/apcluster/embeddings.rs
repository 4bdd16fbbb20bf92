//! Embeddings files.
//!
//! Binary layout: the magic `EMB1`, then `n: u32` and `d: u32` (little
//! endian), then `n` records of `u16` id length, UTF-8 photo id, and `d`
//! little-endian `f32` values. CSV fallback: header `photo_id,v0,...,v{d-1}`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ApError, FeatureVector};

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRejection {
    pub photo_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Embeddings {
    pub dim: usize,
    pub vectors: Vec<FeatureVector>,
    /// Records with non-finite values or repeated ids; the first occurrence
    /// of an id wins.
    pub rejected: Vec<EmbeddingRejection>,
}

impl Embeddings {
    fn push(&mut self, seen: &mut HashSet<String>, v: FeatureVector) {
        let reason = if v.values.iter().any(|x| !x.is_finite()) {
            Some("non-finite value")
        } else if seen.contains(&v.photo_id) {
            Some("duplicate photo_id")
        } else {
            None
        };
        match reason {
            Some(r) => self.rejected.push(EmbeddingRejection { photo_id: v.photo_id, reason: r.into() }),
            None => {
                seen.insert(v.photo_id.clone());
                self.vectors.push(v);
            }
        }
    }
}

/// Reads either format, choosing by the leading magic bytes.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Embeddings, ApError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.starts_with(EMB_MAGIC) {
        read_embeddings_bin(bytes.as_slice())
    } else {
        read_embeddings_csv(bytes.as_slice())
    }
}

fn read_exact<R: Read, const N: usize>(r: &mut R, what: &str) -> Result<[u8; N], ApError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| ApError::Format(format!("truncated file while reading {what}")))?;
    Ok(buf)
}

pub fn read_embeddings_bin<R: Read>(reader: R) -> Result<Embeddings, ApError> {
    let mut r = BufReader::new(reader);
    if &read_exact::<_, 4>(&mut r, "magic")? != EMB_MAGIC {
        return Err(ApError::Format("bad magic bytes".into()));
    }
    let n = u32::from_le_bytes(read_exact(&mut r, "count")?) as usize;
    let d = u32::from_le_bytes(read_exact(&mut r, "dimension")?) as usize;
    let mut out = Embeddings { dim: d, ..Default::default() };
    let mut seen = HashSet::new();
    for rec in 0..n {
        let len = u16::from_le_bytes(read_exact(&mut r, "id length")?) as usize;
        let mut id = vec![0u8; len];
        r.read_exact(&mut id)
            .map_err(|_| ApError::Format(format!("truncated file in record {rec}")))?;
        let photo_id =
            String::from_utf8(id).map_err(|_| ApError::Format(format!("record {rec}: photo id is not UTF-8")))?;
        let mut values = Vec::with_capacity(d);
        for _ in 0..d {
            values.push(f32::from_le_bytes(read_exact(&mut r, "values")?) as f64);
        }
        out.push(&mut seen, FeatureVector { photo_id, values });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(ApError::Format("trailing bytes after last record".into()));
    }
    Ok(out)
}

/// Values are narrowed to `f32` on write.
pub fn write_embeddings_bin<W: Write>(vectors: &[FeatureVector], writer: W) -> Result<(), ApError> {
    let d = vectors.first().map_or(0, |v| v.values.len());
    let mut w = BufWriter::new(writer);
    w.write_all(EMB_MAGIC)?;
    let n = u32::try_from(vectors.len()).map_err(|_| ApError::Format("too many vectors".into()))?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&(d as u32).to_le_bytes())?;
    for v in vectors {
        if v.values.len() != d {
            return Err(ApError::DimensionMismatch { photo_id: v.photo_id.clone(), expected: d, found: v.values.len() });
        }
        let id = v.photo_id.as_bytes();
        let len = u16::try_from(id.len()).map_err(|_| ApError::Format(format!("photo id too long: {}", v.photo_id)))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(id)?;
        for &x in &v.values {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings_csv<R: Read>(reader: R) -> Result<Embeddings, ApError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0).map(str::trim) != Some("photo_id") {
        return Err(ApError::Format("csv embeddings need a photo_id first column".into()));
    }
    let d = header.len() - 1;
    let mut out = Embeddings { dim: d, ..Default::default() };
    let mut seen = HashSet::new();
    for row in rdr.records() {
        let row = row?;
        let photo_id = row.get(0).unwrap_or_default().trim().to_owned();
        let values = row
            .iter()
            .skip(1)
            .map(|x| x.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ApError::Format(format!("{photo_id}: {e}")))?;
        if values.len() != d {
            return Err(ApError::DimensionMismatch { photo_id, expected: d, found: values.len() });
        }
        out.push(&mut seen, FeatureVector { photo_id, values });
    }
    Ok(out)
}

pub fn write_embeddings_csv<W: Write>(vectors: &[FeatureVector], writer: W) -> Result<(), ApError> {
    let d = vectors.first().map_or(0, |v| v.values.len());
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<String> = std::iter::once("photo_id".to_string()).chain((0..d).map(|i| format!("v{i}"))).collect();
    w.write_record(&header)?;
    for v in vectors {
        let row: Vec<String> = std::iter::once(v.photo_id.clone()).chain(v.values.iter().map(|x| x.to_string())).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
