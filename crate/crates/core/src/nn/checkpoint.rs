//! Flat binary tensor files.
//!
//! Layout (all integers little-endian `u32` unless noted):
//!
//! ```text
//! magic "CFAM" | version | d_x | d_h | heads | d_ff | blocks | gamma: f32 | domain: u8
//! repeated until EOF:
//!     name_len | name (utf-8) | rank | dims[rank] | data: f32[prod(dims)]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{AttentionConfig, Matrix, Parameters};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"CFAM";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub input_dim: usize,
    pub attention: AttentionConfig,
    pub gamma: f64,
    pub domain_tag: u8,
}

/// A header plus an ordered list of named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<(String, Matrix)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| bad(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated file: {e}")))?;
    Ok(u32::from_le_bytes(b) as usize)
}

impl Checkpoint {
    pub fn new(header: CheckpointHeader) -> Checkpoint {
        Checkpoint { header, tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Matrix) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Removes and returns the tensor called `name`, checking its shape.
    pub fn take(&mut self, name: &str, shape: (usize, usize)) -> Result<Matrix> {
        let pos = self
            .tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| bad(format!("missing tensor {name}")))?;
        let (_, t) = self.tensors.remove(pos);
        if t.shape() != shape {
            return Err(bad(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape())));
        }
        Ok(t)
    }

    /// Appends every tensor of `p`, with names prefixed by `prefix`.
    pub fn push_all<P: Parameters>(&mut self, prefix: &str, p: &P) {
        for (name, t) in p.tensors() {
            self.tensors.push((format!("{prefix}{name}"), t.clone()));
        }
    }

    /// Overwrites every tensor of `p` with the matching `prefix`ed entry.
    pub fn take_all<P: Parameters>(&mut self, prefix: &str, p: &mut P) -> Result<()> {
        let wanted: Vec<(String, (usize, usize))> =
            p.tensors().into_iter().map(|(name, t)| (format!("{prefix}{name}"), t.shape())).collect();
        for ((name, shape), slot) in wanted.into_iter().zip(p.tensors_mut()) {
            *slot = self.take(&name, shape)?;
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let h = &self.header;
        w.write_all(&MAGIC)?;
        put_u32(w, VERSION as usize)?;
        for v in [h.input_dim, h.attention.d_h, h.attention.heads, h.attention.d_ff, h.attention.blocks] {
            put_u32(w, v)?;
        }
        w.write_all(&(h.gamma as f32).to_le_bytes())?;
        w.write_all(&[h.domain_tag])?;
        for (name, t) in &self.tensors {
            put_u32(w, name.len())?;
            w.write_all(name.as_bytes())?;
            put_u32(w, 2)?;
            put_u32(w, t.rows())?;
            put_u32(w, t.cols())?;
            for &x in t.data() {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Checkpoint> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
        if magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = get_u32(r)?;
        if version != VERSION as usize {
            return Err(bad(format!("unsupported version {version}")));
        }
        let input_dim = get_u32(r)?;
        let attention =
            AttentionConfig { d_h: get_u32(r)?, heads: get_u32(r)?, d_ff: get_u32(r)?, blocks: get_u32(r)? };
        let mut g = [0u8; 4];
        r.read_exact(&mut g).map_err(|_| bad("truncated header"))?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag).map_err(|_| bad("truncated header"))?;
        let header =
            CheckpointHeader { input_dim, attention, gamma: f32::from_le_bytes(g) as f64, domain_tag: tag[0] };

        let mut tensors = Vec::new();
        loop {
            let mut b = [0u8; 4];
            match r.read_exact(&mut b) {
                Ok(()) => {}
                Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
            let len = u32::from_le_bytes(b) as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|_| bad("truncated tensor name"))?;
            let name = String::from_utf8(name).map_err(|_| bad("tensor name is not utf-8"))?;
            let rank = get_u32(r)?;
            let dims = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
            let (rows, cols) = match dims[..] {
                [] => (1, 1),
                [c] => (1, c),
                [rows, cols] => (rows, cols),
                _ => return Err(bad(format!("tensor {name} has rank {rank}"))),
            };
            let mut raw = vec![0u8; rows * cols * 4];
            r.read_exact(&mut raw).map_err(|_| bad(format!("truncated data for {name}")))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
            tensors.push((name, Matrix::from_vec(rows, cols, data)?));
        }
        Ok(Checkpoint { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = File::open(path).map_err(|e| bad(format!("cannot open {}: {e}", path.display())))?;
        Checkpoint::read_from(&mut BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let header = CheckpointHeader {
            input_dim: 4,
            attention: AttentionConfig { d_h: 8, heads: 2, d_ff: 16, blocks: 1 },
            gamma: 10.0,
            domain_tag: 1,
        };
        let mut c = Checkpoint::new(header);
        c.push("a.weight", Matrix::from_rows(&[vec![1.0, -2.5], vec![0.125, 3.0]]).unwrap());
        c.push("b", Matrix::row_vector(vec![0.5, 0.25, -1.0]));
        c
    }

    #[test]
    fn round_trip_is_exact_for_f32_values() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"CFAM");
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn values_are_rounded_to_f32() {
        let mut c = sample();
        c.tensors[1].1 = Matrix::row_vector(vec![0.1]);
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.tensors[1].1.data()[0], 0.1f32 as f64);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(matches!(Checkpoint::read_from(&mut wrong.as_slice()), Err(Error::Checkpoint(_))));
        let truncated = &buf[..buf.len() - 3];
        assert!(Checkpoint::read_from(&mut &truncated[..]).is_err());
        assert!(Checkpoint::read_from(&mut &buf[..10]).is_err());
    }

    #[test]
    fn take_checks_shapes() {
        let mut c = sample();
        assert!(c.take("a.weight", (3, 2)).is_err());
        let mut c2 = sample();
        assert_eq!(c2.take("b", (1, 3)).unwrap().data(), &[0.5, 0.25, -1.0]);
        assert!(c2.take("b", (1, 3)).is_err());
        assert!(c.get("missing").is_none());
    }
}
