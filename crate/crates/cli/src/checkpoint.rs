//! Checkpoint file format.
//!
//! Layout: magic bytes "GPLC", format version u32, entry count u32, then
//! per entry: name length u16 + UTF-8 name, dtype tag u8 (0 = f32), rank
//! u8, dims as u32 each, raw little-endian scalar payload. Model
//! parameters, batch-norm running statistics and the optimizer moments
//! all serialize as named entries.

use crate::{Error, Result};
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"GPLC";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

pub type Entry = (String, Vec<usize>, Vec<f32>);

pub fn write(path: &Path, entries: &[Entry]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, dims, data) in entries {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::Data(format!("entry name too long: {name}")));
        }
        if dims.len() > u8::MAX as usize {
            return Err(Error::Data(format!("entry rank too large: {name}")));
        }
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(Error::Data(format!(
                "entry {name}: dims {dims:?} disagree with {} values",
                data.len()
            )));
        }
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(DTYPE_F32);
        buf.push(dims.len() as u8);
        for d in dims {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(e, path))?;
    f.write_all(&buf).map_err(|e| Error::io(e, path))
}

pub fn read(path: &Path) -> Result<Vec<Entry>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(e, path))?;
    let bad = |m: String| Error::Data(format!("{}: {m}", path.display()));
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if at + n > bytes.len() {
            return Err(bad(format!("truncated at byte {at}")));
        }
        let s = &bytes[at..at + n];
        at += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(bad("bad magic, not a checkpoint".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|_| bad("entry name is not UTF-8".into()))?;
        let dtype = take(1)?[0];
        if dtype != DTYPE_F32 {
            return Err(bad(format!("entry {name}: unsupported dtype {dtype}")));
        }
        let rank = take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
        }
        let numel: usize = dims.iter().product();
        let raw = take(numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, dims, data));
    }
    if at != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - at)));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = std::env::temp_dir().join("gplac_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.gplc");
        let entries: Vec<Entry> = vec![
            ("trunk/conv1/weight".into(), vec![2, 3], vec![0.5, -1.25, 3.0, f32::MIN_POSITIVE, 1e30, -0.0]),
            ("adam/step".into(), vec![1], vec![41.0]),
            ("scalar".into(), vec![], vec![7.5]),
        ];
        write(&path, &entries).unwrap();
        let back = read(&path).unwrap();
        assert_eq!(entries.len(), back.len());
        for ((n1, d1, v1), (n2, d2, v2)) in entries.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(d1, d2);
            for (a, b) in v1.iter().zip(v2.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn header_layout_is_as_documented() {
        let dir = std::env::temp_dir().join("gplac_ckpt_hdr");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("h.gplc");
        write(&path, &[("ab".into(), vec![1], vec![1.0])]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"GPLC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 2);
        assert_eq!(&bytes[14..16], b"ab");
        assert_eq!(bytes[16], 0); // dtype f32
        assert_eq!(bytes[17], 1); // rank
    }

    #[test]
    fn corrupt_files_are_data_errors() {
        let dir = std::env::temp_dir().join("gplac_ckpt_bad");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.gplc");
        std::fs::write(&path, b"NOPE").unwrap();
        let err = read(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
