//! "PGC1" tensor checkpoints.
//!
//! Layout: magic `PGC1`, u32 tensor count, then per tensor a u16 name
//! length, the UTF-8 name, u32 rank, `rank` u32 dims, and the f32 payload.
//! Everything is little-endian. Values are narrowed to f32 on write.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_f32, read_u16, read_u32, write_f32, write_u16, write_u32};

const MAGIC: &[u8; 4] = b"PGC1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                context: "tensor payload",
                expected: n,
                got: data.len(),
            });
        }
        Ok(Self {
            name: name.into(),
            shape,
            data,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Tensors whose name starts with `prefix`, in file order.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a Tensor> + 'a {
        self.tensors.iter().filter(move |t| t.name.starts_with(prefix))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        write_u32(w, self.tensors.len())?;
        for t in &self.tensors {
            write_u16(w, t.name.len())?;
            w.write_all(t.name.as_bytes())?;
            write_u32(w, t.shape.len())?;
            for &d in &t.shape {
                write_u32(w, d)?;
            }
            for &v in &t.data {
                write_f32(w, v)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format("PGC1 header", "file too short"))?;
        if &magic != MAGIC {
            return Err(Error::format("PGC1 header", format!("bad magic {magic:?}")));
        }
        let count = read_u32(r)?;
        let mut tensors = Vec::new();
        for i in 0..count {
            let chunk = || format!("PGC1 tensor {i}");
            let name_len = read_u16(r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::format(chunk(), "name is not UTF-8"))?;
            let rank = read_u32(r)? as usize;
            if rank > 8 {
                return Err(Error::format(chunk(), format!("implausible rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| read_u32(r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::format(chunk(), "shape overflows"))?;
            let mut data = Vec::with_capacity(n.min(1 << 24));
            for _ in 0..n {
                data.push(read_f32(r)?);
            }
            tensors.push(Tensor { name, shape, data });
        }
        Ok(Self { tensors })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
