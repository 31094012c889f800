//! The DGFM tensor file format and the named-tensor container used for
//! checkpoints.
//!
//! Tensor: `"DGFM" | version u8 = 1 | dtype u8 (0 = f32 LE) | rank u16 LE |
//! rank x u64 LE dims | row-major payload`.
//!
//! Container: `"DGFM" | version u8 = 1 | 0xFF | u32 LE entry count |` then per
//! entry `u32 LE name length | UTF-8 name | tensor`.
//!
//! Files are written to a temporary sibling with a zeroed header, synced,
//! stamped with the real header and renamed into place, so an interrupted
//! write never leaves a readable file at the destination.

use std::fs::{self, File};
use std::io::{Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"DGFM";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;
pub const DTYPE_CONTAINER: u8 = 0xFF;

const HEADER_LEN: usize = 6;

fn header(kind: u8) -> [u8; HEADER_LEN] {
    [MAGIC[0], MAGIC[1], MAGIC[2], MAGIC[3], VERSION, kind]
}

/// Serializes a tensor record, header included.
pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    let rank = u16::try_from(t.rank()).map_err(|_| Error::Format("rank exceeds u16".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 2 + 8 * t.rank() + 4 * t.len());
    out.extend_from_slice(&header(DTYPE_F32));
    out.extend_from_slice(&rank.to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated: need {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn header(&mut self, kind: u8) -> Result<()> {
        let h = self.take(HEADER_LEN)?;
        if &h[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        if h[4] != VERSION {
            return Err(Error::Format(format!("unsupported version {}", h[4])));
        }
        if h[5] != kind {
            return Err(Error::Format(format!("unexpected dtype {:#04x}", h[5])));
        }
        Ok(())
    }

    fn tensor(&mut self) -> Result<Tensor> {
        self.header(DTYPE_F32)?;
        let rank = self.u16()? as usize;
        if rank == 0 {
            return Err(Error::Format("rank 0 tensor".into()));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count: usize = 1;
        for _ in 0..rank {
            let d = usize::try_from(self.u64()?).map_err(|_| Error::Format("dimension overflow".into()))?;
            if d == 0 {
                return Err(Error::Format("zero-sized dimension".into()));
            }
            count = count
                .checked_mul(d)
                .ok_or_else(|| Error::Format("element count overflow".into()))?;
            shape.push(d);
        }
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| Error::Format("payload size overflow".into()))?;
        let payload = self.take(bytes)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Tensor::new(shape, data)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let t = r.tensor()?;
    r.finish()?;
    Ok(t)
}

pub fn encode_container(entries: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let count = u32::try_from(entries.len()).map_err(|_| Error::Format("too many entries".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(&header(DTYPE_CONTAINER));
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in entries {
        let len = u32::try_from(name.len()).map_err(|_| Error::Format("name too long".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&encode_tensor(t)?);
    }
    Ok(out)
}

pub fn decode_container(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(DTYPE_CONTAINER)?;
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
            .to_string();
        entries.push((name, r.tensor()?));
    }
    r.finish()?;
    Ok(entries)
}

/// Writes `bytes` (which begin with a 6-byte header) so that the header is the
/// last thing to reach disk, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("record shorter than its header".into()));
    }
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Validation(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| -> Result<()> {
        let mut f = File::create(&tmp)?;
        f.write_all(&[0u8; HEADER_LEN])?;
        f.write_all(&bytes[HEADER_LEN..])?;
        f.sync_data()?;
        f.seek(SeekFrom::Start(0))?;
        f.write_all(&bytes[..HEADER_LEN])?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write_atomic(path, &encode_tensor(t)?)
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    decode_tensor(&fs::read(path)?).map_err(|e| with_path(e, path))
}

pub fn save_container(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    write_atomic(path, &encode_container(entries)?)
}

pub fn load_container(path: &Path) -> Result<Vec<(String, Tensor)>> {
    decode_container(&fs::read(path)?).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_exact() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap();
        let b = encode_tensor(&t).unwrap();
        let mut expect = b"DGFM".to_vec();
        expect.extend_from_slice(&[1, 0, 2, 0]);
        expect.extend_from_slice(&1u64.to_le_bytes());
        expect.extend_from_slice(&2u64.to_le_bytes());
        expect.extend_from_slice(&1f32.to_le_bytes());
        expect.extend_from_slice(&(-2f32).to_le_bytes());
        assert_eq!(b, expect);
    }

    #[test]
    fn rejects_bad_headers_and_truncation() {
        let t = Tensor::zeros(&[3, 4]);
        let b = encode_tensor(&t).unwrap();
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(decode_tensor(&bad), Err(Error::Format(_))));
        let mut bad = b.clone();
        bad[4] = 2;
        assert!(matches!(decode_tensor(&bad), Err(Error::Format(_))));
        assert!(matches!(decode_tensor(&b[..b.len() - 1]), Err(Error::Format(_))));
        let mut long = b.clone();
        long.push(0);
        assert!(matches!(decode_tensor(&long), Err(Error::Format(_))));
        assert!(matches!(decode_tensor(&[0u8; 6]), Err(Error::Format(_))));
    }

    #[test]
    fn container_round_trip_and_truncation() {
        let entries = vec![
            ("a".to_string(), Tensor::scalar(3.0)),
            ("b.c".to_string(), Tensor::new(vec![2, 1], vec![0.5, 0.25]).unwrap()),
        ];
        let bytes = encode_container(&entries).unwrap();
        assert_eq!(decode_container(&bytes).unwrap(), entries);
        for cut in 0..bytes.len() {
            assert!(decode_container(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.dgfm");
        save_tensor(&p, &Tensor::scalar(1.0)).unwrap();
        save_tensor(&p, &Tensor::scalar(2.0)).unwrap();
        assert_eq!(load_tensor(&p).unwrap(), Tensor::scalar(2.0));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    proptest! {
        #[test]
        fn f32_values_round_trip_bit_exactly(
            rows in 1usize..6,
            cols in 1usize..6,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::from_fn(&[rows, cols], |_| (r.gen::<f32>() * 100.0 - 50.0) as f64);
            let back = decode_tensor(&encode_tensor(&t).unwrap()).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(encode_tensor(&back).unwrap(), encode_tensor(&t).unwrap());
        }
    }
}
