//! Columnar binary cache of a cleaned dataset.
//!
//! All integers and floats are little-endian. Counts are u64, strings are a
//! u32 byte length followed by UTF-8.
//!
//! ```text
//! magic    8 bytes  "IOTFLOWS"
//! version  u32      1
//! names    u64 count, then strings           active features in order
//! dropped  u64 count, then (string, u8 reason) 0 named, 1 zero-variance,
//!                                            2 high-correlation, 3 identifier
//! labels   u64 count, then strings           class names by index
//! rows     u64
//! columns  names.len() blocks of rows f64 values
//! targets  rows u32 class indices
//! ```

use std::path::Path;

use crate::codec::{LeReader, LeWriter};

use super::{DataError, Dataset, DropReason, FeatureSchema, LabelMap};

pub const CACHE_MAGIC: &[u8; 8] = b"IOTFLOWS";
pub const CACHE_VERSION: u32 = 1;

pub fn encode_cache(data: &Dataset) -> Vec<u8> {
    let mut w = LeWriter::default();
    w.raw(CACHE_MAGIC);
    w.u32(CACHE_VERSION);
    w.u64(data.schema.names.len() as u64);
    for n in &data.schema.names {
        w.str(n);
    }
    w.u64(data.schema.dropped.len() as u64);
    for (n, r) in &data.schema.dropped {
        w.str(n);
        w.u8(r.tag());
    }
    w.u64(data.labels.len() as u64);
    for c in data.labels.classes() {
        w.str(c);
    }
    w.u64(data.len() as u64);
    for j in 0..data.n_features() {
        for v in data.column(j) {
            w.f64(v);
        }
    }
    for &t in data.targets() {
        w.u32(t as u32);
    }
    w.buf
}

fn strings(r: &mut LeReader<'_>) -> Result<Vec<String>, crate::codec::Truncated> {
    let n = r.count(4)?;
    (0..n).map(|_| r.str()).collect()
}

pub fn decode_cache(bytes: &[u8]) -> Result<Dataset, DataError> {
    let bad = |m: &str| DataError::Cache(m.to_string());
    let trunc = |e: crate::codec::Truncated| DataError::Cache(e.to_string());
    let mut r = LeReader::new(bytes);
    if r.take(8).map_err(trunc)? != CACHE_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u32().map_err(trunc)?;
    if version != CACHE_VERSION {
        return Err(DataError::Cache(format!("unsupported version {version}")));
    }
    let names = strings(&mut r).map_err(trunc)?;
    let n_dropped = r.count(5).map_err(trunc)?;
    let mut dropped = Vec::with_capacity(n_dropped);
    for _ in 0..n_dropped {
        let name = r.str().map_err(trunc)?;
        let reason = DropReason::from_tag(r.u8().map_err(trunc)?).ok_or_else(|| bad("bad drop reason"))?;
        dropped.push((name, reason));
    }
    let labels = LabelMap::new(strings(&mut r).map_err(trunc)?);
    let rows = r.count(4 + 8 * names.len()).map_err(trunc)?;
    let d = names.len();
    let mut values = vec![0.0; rows * d];
    for j in 0..d {
        for i in 0..rows {
            values[i * d + j] = r.f64().map_err(trunc)?;
        }
    }
    let mut targets = Vec::with_capacity(rows);
    for _ in 0..rows {
        let t = r.u32().map_err(trunc)? as usize;
        if t >= labels.len() {
            return Err(bad("class index out of range"));
        }
        targets.push(t);
    }
    if !r.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(Dataset::new(FeatureSchema { names, dropped }, labels, values, targets))
}

pub fn write_cache(path: &Path, data: &Dataset) -> Result<(), DataError> {
    std::fs::write(path, encode_cache(data))?;
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<Dataset, DataError> {
    let bytes = std::fs::read(path).map_err(|source| DataError::MissingFile {
        path: path.display().to_string(),
        source,
    })?;
    decode_cache(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        let mut schema = FeatureSchema::new(vec!["a".into(), "b".into()]);
        schema.dropped.push(("Flow ID".into(), DropReason::NamedColumn));
        Dataset::from_rows(
            schema,
            LabelMap::standard(),
            &[(vec![1.5, -2.0], 3), (vec![0.0, 1e300], 14)],
        )
    }

    #[test]
    fn round_trip() {
        let d = sample();
        assert_eq!(decode_cache(&encode_cache(&d)).unwrap(), d);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        write_cache(&p, &d).unwrap();
        assert_eq!(read_cache(&p).unwrap(), d);
    }

    #[test]
    fn rejects_damage() {
        let bytes = encode_cache(&sample());
        for cut in 0..bytes.len() {
            assert!(decode_cache(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(decode_cache(&b).is_err());
        let mut b = bytes;
        b[8] = 2;
        assert!(decode_cache(&b).is_err());
    }
}
