//! Binary checkpoint format.
//!
//! ```text
//! "AFMT" | u32 version | u32 entry count
//! per entry: u16 name length | UTF-8 name | u8 ndim | u32 dims[ndim] | f64 values (LE)
//! ```
//! All integers are little-endian.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"AFMT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("entry name is not UTF-8")]
    BadName,
    #[error("entry {0:?} is too large for the format")]
    TooLarge(String),
}

pub fn write_checkpoint<W: Write>(params: &ParamSet, mut w: W) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        let name_len = u16::try_from(name.len()).map_err(|_| CheckpointError::TooLarge(name.to_string()))?;
        let ndim = u8::try_from(t.shape().len()).map_err(|_| CheckpointError::TooLarge(name.to_string()))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[ndim])?;
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| CheckpointError::TooLarge(name.to_string()))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamSet, CheckpointError> {
    let magic = read_array::<4, _>(&mut r)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = u32::from_le_bytes(read_array(&mut r)?);
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(read_array(&mut r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::BadName)?;
        let [ndim] = read_array::<1, _>(&mut r)?;
        let mut shape = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(read_array(&mut r)?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(read_array(&mut r)?));
        }
        let t = Tensor::new(shape, data).expect("length derived from shape");
        params.push(name, t);
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParamSet, path: &Path) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    write_checkpoint(params, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet, CheckpointError> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut p = ParamSet::new();
        p.push("w", Tensor::matrix(1, 2, vec![1.0, -0.5]));
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert_eq!(&buf[0..4], b"AFMT");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..14], &1u16.to_le_bytes());
        assert_eq!(buf[14], b'w');
        assert_eq!(buf[15], 2);
        assert_eq!(buf.len(), 16 + 8 + 16);
        assert_eq!(&buf[32..40], &(-0.5f64).to_le_bytes());
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(matches!(
            read_checkpoint(&b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00"[..]),
            Err(CheckpointError::BadMagic(_))
        ));
        assert!(read_checkpoint(&b"AFMT"[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_bit_exact(entries in prop::collection::vec(
            ("[a-z.0-9]{1,12}", prop::collection::vec(1usize..4, 0..3), any::<u64>()), 0..6)
        ) {
            let mut p = ParamSet::new();
            for (name, shape, seed) in entries {
                let n: usize = shape.iter().product();
                // arbitrary bit patterns, including NaN payloads and subnormals
                let data = (0..n as u64).map(|i| f64::from_bits(seed.wrapping_mul(i + 1).rotate_left(7))).collect();
                p.push(name, Tensor::new(shape, data).unwrap());
            }
            let mut a = Vec::new();
            write_checkpoint(&p, &mut a).unwrap();
            let back = read_checkpoint(a.as_slice()).unwrap();
            let mut b = Vec::new();
            write_checkpoint(&back, &mut b).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
