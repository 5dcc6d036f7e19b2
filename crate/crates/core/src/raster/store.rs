use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use super::image::{packed_len, RasterImage};
use crate::codec;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MSIM";
const VERSION: u16 = 1;
const FORMAT: &str = "packed image";

/// A corpus of equally sized images. The ordinal of an image is its position.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedImages {
    size: usize,
    images: Vec<RasterImage>,
}

impl PackedImages {
    pub fn new(size: usize, images: Vec<RasterImage>) -> Result<Self> {
        if size == 0 || size > u16::MAX as usize {
            return Err(Error::Argument(format!("image size {size} not representable")));
        }
        let mut seen = HashSet::new();
        for img in &images {
            if img.size() != size {
                return Err(Error::Shape(format!(
                    "image '{}' is {}px, corpus is {size}px",
                    img.place_id,
                    img.size()
                )));
            }
            if !seen.insert(img.place_id.as_str()) {
                return Err(Error::Argument(format!("duplicate place_id '{}'", img.place_id)));
            }
        }
        Ok(Self { size, images })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn images(&self) -> &[RasterImage] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn position(&self, place_id: &str) -> Option<usize> {
        self.images.iter().position(|i| i.place_id == place_id)
    }

    /// `MSIM` body: magic, version u16, size u16, count u64, then each image
    /// as `ceil(size^2 / 8)` bytes packed LSB-first.
    pub fn write_body<W: Write>(&self, w: &mut W) -> Result<()> {
        codec::write_magic(w, MAGIC, VERSION)?;
        w.write_all(&(self.size as u16).to_le_bytes())?;
        w.write_all(&(self.images.len() as u64).to_le_bytes())?;
        for img in &self.images {
            w.write_all(img.packed())?;
        }
        Ok(())
    }

    /// JSON object mapping `place_id` to ordinal.
    pub fn index_json(&self) -> Result<Vec<u8>> {
        let map: BTreeMap<&str, usize> = self
            .images
            .iter()
            .enumerate()
            .map(|(i, img)| (img.place_id.as_str(), i))
            .collect();
        let mut out = serde_json::to_vec_pretty(&map)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn read<R: Read>(body: &mut R, index_json: &[u8]) -> Result<Self> {
        codec::read_magic(body, MAGIC, FORMAT, VERSION)?;
        let size = codec::read_u16(body, FORMAT)? as usize;
        let count = codec::read_u64(body, FORMAT)? as usize;
        let index: BTreeMap<String, usize> = serde_json::from_slice(index_json)?;
        if index.len() != count {
            return Err(Error::format(
                FORMAT,
                format!("index lists {} places, body holds {count}", index.len()),
            ));
        }
        let mut ids: Vec<Option<String>> = vec![None; count];
        for (id, ord) in index {
            match ids.get_mut(ord) {
                Some(slot @ None) => *slot = Some(id),
                _ => return Err(Error::format(FORMAT, format!("bad ordinal {ord} for '{id}'"))),
            }
        }
        let n = packed_len(size);
        let mut images = Vec::with_capacity(count);
        for id in ids {
            let mut bits = vec![0u8; n];
            body.read_exact(&mut bits)
                .map_err(|_| Error::format(FORMAT, "truncated file"))?;
            images.push(RasterImage::from_packed(id.expect("every ordinal filled"), size, bits)?);
        }
        codec::expect_eof(body, FORMAT)?;
        Self::new(size, images)
    }
}
