//! LTF1, the on-disk tensor format.
//!
//! Layout: magic bytes `LTF1`, one u8 rank, `rank` little-endian u32
//! extents, then the row-major f32 payload in little-endian order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"LTF1";

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[t.rank() as u8])?;
    for &d in t.dims() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &x in t.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated LTF1 header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank)
        .map_err(|_| Error::Format("truncated LTF1 rank".into()))?;
    let rank = rank[0] as usize;
    if !(1..=3).contains(&rank) {
        return Err(Error::Format(format!("unsupported rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)
            .map_err(|_| Error::Format("truncated LTF1 extents".into()))?;
        dims.push(u32::from_le_bytes(b) as usize);
    }
    let numel: usize = dims.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut b = [0u8; 4];
    for _ in 0..numel {
        r.read_exact(&mut b)
            .map_err(|_| Error::Format("truncated LTF1 payload".into()))?;
        data.push(f32::from_le_bytes(b));
    }
    // Trailing bytes are rejected so corrupted writes cannot pass silently.
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after LTF1 payload".into()));
    }
    Tensor::new(&dims, data)
}

pub fn write_tensor_file<P: AsRef<Path>>(path: P, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor_file<P: AsRef<Path>>(path: P) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    read_tensor(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xoshiro256StarStar;

    fn roundtrip(t: &Tensor) -> Tensor {
        let mut buf = Vec::new();
        write_tensor(&mut buf, t).unwrap();
        read_tensor(&mut buf.as_slice()).unwrap()
    }

    #[test]
    fn roundtrip_preserves_bits() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(5);
        for dims in [vec![7], vec![3, 4], vec![2, 3, 4]] {
            let numel: usize = dims.iter().product();
            let t = Tensor::new(&dims, (0..numel).map(|_| rng.next_f32_centered()).collect())
                .unwrap();
            let back = roundtrip(&t);
            assert_eq!(back.dims(), t.dims());
            for (a, b) in t.data().iter().zip(back.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn header_layout_is_stable() {
        let t = Tensor::new(&[1, 2], vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[0..4], b"LTF1");
        assert_eq!(buf[4], 2);
        assert_eq!(&buf[5..9], &1u32.to_le_bytes());
        assert_eq!(&buf[9..13], &2u32.to_le_bytes());
        assert_eq!(&buf[13..17], &1.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();

        let mut corrupt = buf.clone();
        corrupt[0] = b'X';
        assert!(matches!(
            read_tensor(&mut corrupt.as_slice()),
            Err(Error::Format(_))
        ));

        let truncated = &buf[..buf.len() - 2];
        assert!(matches!(
            read_tensor(&mut &truncated[..]),
            Err(Error::Format(_))
        ));

        let mut padded = buf.clone();
        padded.push(0);
        assert!(matches!(
            read_tensor(&mut padded.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ltf");
        let t = Tensor::new(&[2, 2], vec![0.5, -0.5, 1.5, -1.5]).unwrap();
        write_tensor_file(&path, &t).unwrap();
        let back = read_tensor_file(&path).unwrap();
        assert_eq!(back, t);
    }
}
