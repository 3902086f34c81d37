//! Binary checkpoint format (little-endian).
//!
//! ```text
//! "FMNO"  u32 version = 1
//! u32 grid_h, grid_w, modes_x, modes_y, width, num_blocks, projection_hidden
//! per tensor, in parameter order:
//!   u16 name_len, name bytes, u8 rank, rank × u32 dims, f64 values
//! ```
//! Complex tensors carry a trailing dimension of 2 (`[re, im]`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{MnoModel, ModelConfig};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FMNO";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(model: &MnoModel, mut w: W) -> Result<()> {
    let cfg = model.config();
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [
        cfg.grid_h,
        cfg.grid_w,
        cfg.modes_x,
        cfg.modes_y,
        cfg.width,
        cfg.num_blocks,
        cfg.projection_hidden,
    ] {
        w.write_all(&to_u32(v)?.to_le_bytes())?;
    }
    for info in model.param_info() {
        let name = info.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[info.shape.len() as u8])?;
        for d in &info.shape {
            w.write_all(&to_u32(*d)?.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(info.range.len() * 8);
        for v in &model.params()[info.range.clone()] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint(model: &MnoModel, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    write_checkpoint(model, BufWriter::new(file))
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<MnoModel> {
    let mut rd = Reader { inner: r };
    let magic: [u8; 4] = rd.array("magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = rd.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let mut header = [0usize; 7];
    for h in header.iter_mut() {
        *h = rd.u32("header")? as usize;
    }
    let [grid_h, grid_w, modes_x, modes_y, width, num_blocks, projection_hidden] = header;
    let config = ModelConfig {
        grid_h,
        grid_w,
        modes_x,
        modes_y,
        width,
        num_blocks,
        projection_hidden,
        seed: 0,
    };
    let mut model = MnoModel::zeros(config)?;
    for info in model.param_info() {
        let name_len = u16::from_le_bytes(rd.array("tensor name length")?) as usize;
        let name = String::from_utf8_lossy(&rd.bytes(name_len, "tensor name")?).into_owned();
        let rank = rd.array::<1>("tensor rank")?[0] as usize;
        let shape = (0..rank)
            .map(|_| rd.u32("tensor dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if name != info.name || shape != info.shape {
            return Err(Error::ShapeMismatch {
                name: if name == info.name { name } else { format!("{name} (expected {})", info.name) },
                expected: info.shape,
                found: shape,
            });
        }
        let raw = rd.bytes(info.range.len() * 8, &info.name)?;
        for (dst, chunk) in model.params_mut()[info.range.clone()].iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    let mut probe = [0u8; 1];
    if rd.inner.read(&mut probe)? != 0 {
        return Err(Error::Parse {
            line: 0,
            msg: "trailing bytes after last tensor".into(),
        });
    }
    Ok(model)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MnoModel> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidParameter(format!("{v} does not fit in u32")))
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Truncated(format!("while reading {what}")),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.bytes(N, what)?.try_into().expect("exact length"))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{FlowField, Vec2};

    fn model() -> MnoModel {
        MnoModel::new(ModelConfig {
            grid_h: 8,
            grid_w: 8,
            modes_x: 2,
            modes_y: 3,
            width: 4,
            num_blocks: 2,
            projection_hidden: 6,
            seed: 11,
        })
        .unwrap()
    }

    fn bytes(m: &MnoModel) -> Vec<u8> {
        let mut out = Vec::new();
        write_checkpoint(m, &mut out).unwrap();
        out
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let back = read_checkpoint(&bytes(&m)[..]).unwrap();
        assert_eq!(back.params(), m.params());
        let f = FlowField::from_fn(8, 8, |x, y| Vec2::new(x as f64 * 0.1, -(y as f64) * 0.2));
        assert_eq!(back.forward(&f).unwrap(), m.forward(&f).unwrap());
    }

    #[test]
    fn header_layout() {
        let b = bytes(&model());
        assert_eq!(&b[..4], b"FMNO");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(b[20..24].try_into().unwrap()), 3);
        let name_len = u16::from_le_bytes(b[36..38].try_into().unwrap()) as usize;
        assert_eq!(&b[38..38 + name_len], b"lifting.weight");
    }

    #[test]
    fn corrupted_inputs() {
        let good = bytes(&model());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::BadMagic { .. })));
        let mut bad = good.clone();
        bad[4..8].copy_from_slice(&999u32.to_le_bytes());
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::UnsupportedVersion(999))));
        assert!(matches!(read_checkpoint(&good[..good.len() - 3]), Err(Error::Truncated(_))));
        let mut bad = good.clone();
        // Declare a wider model than the tensors actually stored.
        bad[24..28].copy_from_slice(&5u32.to_le_bytes());
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::ShapeMismatch { .. })));
        let mut bad = good;
        bad.push(0);
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Parse { .. })));
    }
}
