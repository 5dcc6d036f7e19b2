use std::io::{Read, Write};

use super::Tensor;
use crate::codec;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MSTN";
const VERSION: u16 = 1;
const FORMAT: &str = "tensor";

impl Tensor {
    /// Writes the `MSTN` encoding: magic, version u16, rank u8, dims as u32,
    /// then the raw little-endian `f32` payload.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        codec::write_magic(w, MAGIC, VERSION)?;
        w.write_all(&[self.rank() as u8])?;
        for &d in self.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        codec::write_f32_slice(w, self.data())?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Tensor> {
        codec::read_magic(r, MAGIC, FORMAT, VERSION)?;
        let rank = codec::read_u8(r, FORMAT)? as usize;
        if rank == 0 {
            return Err(Error::format(FORMAT, "rank 0"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(codec::read_u32(r, FORMAT)? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format(FORMAT, "dimension product overflows"))?;
        let data = codec::read_f32_vec(r, n, FORMAT)?;
        Tensor::from_parts(shape, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.rank() + 4 * self.len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }
}
