//! Little-endian helpers shared by the binary artifact formats.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

pub(crate) fn write_magic<W: Write>(w: &mut W, magic: &[u8; 4], version: u16) -> io::Result<()> {
    w.write_all(magic)?;
    w.write_all(&version.to_le_bytes())
}

/// Reads and checks a four-byte magic, returning the format version.
pub(crate) fn read_magic<R: Read>(
    r: &mut R,
    magic: &[u8; 4],
    format: &'static str,
    max_version: u16,
) -> Result<u16> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got).map_err(|e| eof(e, format))?;
    if &got != magic {
        return Err(Error::format(
            format,
            format!("bad magic {:?}, expected {:?}", got, magic),
        ));
    }
    let version = read_u16(r, format)?;
    if version == 0 || version > max_version {
        return Err(Error::format(
            format,
            format!("unsupported version {version}"),
        ));
    }
    Ok(version)
}

fn eof(e: io::Error, format: &'static str) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::format(format, "truncated file")
    } else {
        Error::Io(e)
    }
}

macro_rules! read_le {
    ($name:ident, $ty:ty) => {
        pub(crate) fn $name<R: Read>(r: &mut R, format: &'static str) -> Result<$ty> {
            let mut buf = [0u8; std::mem::size_of::<$ty>()];
            r.read_exact(&mut buf).map_err(|e| eof(e, format))?;
            Ok(<$ty>::from_le_bytes(buf))
        }
    };
}

read_le!(read_u8, u8);
read_le!(read_u16, u16);
read_le!(read_u32, u32);
read_le!(read_u64, u64);
read_le!(read_f64, f64);

pub(crate) fn read_f32_vec<R: Read>(r: &mut R, len: usize, format: &'static str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; len * 4];
    r.read_exact(&mut bytes).map_err(|e| eof(e, format))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn write_f32_slice<W: Write>(w: &mut W, values: &[f32]) -> io::Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

pub(crate) fn read_str<R: Read>(r: &mut R, format: &'static str) -> Result<String> {
    let len = read_u32(r, format)? as usize;
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes).map_err(|e| eof(e, format))?;
    String::from_utf8(bytes).map_err(|_| Error::format(format, "string is not valid UTF-8"))
}

/// Length-prefixed (u32) JSON block.
pub(crate) fn write_json_block<W: Write, T: serde::Serialize>(w: &mut W, value: &T) -> Result<()> {
    let json = serde_json::to_vec(value)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(())
}

pub(crate) fn read_json_block<R: Read, T: serde::de::DeserializeOwned>(
    r: &mut R,
    format: &'static str,
) -> Result<T> {
    let len = read_u32(r, format)? as usize;
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes).map_err(|e| eof(e, format))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub(crate) fn expect_eof<R: Read>(r: &mut R, format: &'static str) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::format(format, "trailing bytes after payload")),
    }
}
