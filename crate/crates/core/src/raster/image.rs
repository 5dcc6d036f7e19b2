use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Square binary image, row-major, 1 = road. Bits are packed
/// least-significant-bit first, the same layout as the packed corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RasterImage {
    pub place_id: String,
    size: usize,
    bits: Vec<u8>,
}

pub(crate) fn packed_len(size: usize) -> usize {
    (size * size).div_ceil(8)
}

impl RasterImage {
    pub fn blank(place_id: impl Into<String>, size: usize) -> Self {
        Self {
            place_id: place_id.into(),
            size,
            bits: vec![0; packed_len(size)],
        }
    }

    pub fn from_packed(place_id: impl Into<String>, size: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != packed_len(size) {
            return Err(Error::Shape(format!(
                "{size}x{size} image needs {} packed bytes, got {}",
                packed_len(size),
                bits.len()
            )));
        }
        Ok(Self {
            place_id: place_id.into(),
            size,
            bits,
        })
    }

    /// From one byte per pixel; any nonzero byte is a set pixel.
    pub fn from_pixels(place_id: impl Into<String>, size: usize, pixels: &[u8]) -> Result<Self> {
        if pixels.len() != size * size {
            return Err(Error::Shape(format!(
                "{size}x{size} image needs {} pixels, got {}",
                size * size,
                pixels.len()
            )));
        }
        let mut img = Self::blank(place_id, size);
        for (i, &p) in pixels.iter().enumerate() {
            if p != 0 {
                img.bits[i / 8] |= 1 << (i % 8);
            }
        }
        Ok(img)
    }

    pub fn width(&self) -> usize {
        self.size
    }

    pub fn height(&self) -> usize {
        self.size
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn packed(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        let i = y * self.size + x;
        self.bits[i / 8] >> (i % 8) & 1 == 1
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        let i = y * self.size + x;
        if on {
            self.bits[i / 8] |= 1 << (i % 8);
        } else {
            self.bits[i / 8] &= !(1 << (i % 8));
        }
    }

    pub fn count_set(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn set_fraction(&self) -> f64 {
        self.count_set() as f64 / (self.size * self.size) as f64
    }

    pub fn hamming(&self, other: &RasterImage) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    /// Pixels as 0/1 bytes, row-major.
    pub fn pixels(&self) -> Vec<u8> {
        (0..self.size * self.size)
            .map(|i| self.bits[i / 8] >> (i % 8) & 1)
            .collect()
    }

    /// `[1, size, size, 1]` tensor of 0.0 / 1.0.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.pixels().into_iter().map(f32::from).collect();
        Tensor::from_parts(vec![1, self.size, self.size, 1], data).expect("shape matches pixels")
    }

    /// Area-weighted box filter to `target` pixels per side, keeping pixels
    /// with coverage of at least one half. Works for non-integer ratios.
    pub fn downsample(&self, target: usize) -> RasterImage {
        assert!(target > 0 && target <= self.size, "can only shrink");
        let scale = self.size as f64 / target as f64;
        // per output index, the source pixels it overlaps and the overlap widths
        let spans: Vec<Vec<(usize, f64)>> = (0..target)
            .map(|o| {
                let lo = o as f64 * scale;
                let hi = (o + 1) as f64 * scale;
                let first = lo.floor() as usize;
                let last = (hi.ceil() as usize).min(self.size);
                (first..last)
                    .filter_map(|s| {
                        let w = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                        (w > 0.0).then_some((s, w))
                    })
                    .collect()
            })
            .collect();
        let pixels = self.pixels();
        let area = scale * scale;
        let mut out = RasterImage::blank(self.place_id.clone(), target);
        for (oy, ys) in spans.iter().enumerate() {
            for (ox, xs) in spans.iter().enumerate() {
                let mut cover = 0.0;
                for &(sy, wy) in ys {
                    let row = &pixels[sy * self.size..];
                    for &(sx, wx) in xs {
                        if row[sx] != 0 {
                            cover += wy * wx;
                        }
                    }
                }
                if cover / area >= 0.5 {
                    out.set(ox, oy, true);
                }
            }
        }
        out
    }

    /// Binary PBM (`P4`): rows packed most-significant-bit first and padded
    /// to whole bytes, 1 = road.
    pub fn to_pbm(&self) -> Vec<u8> {
        let mut out = format!("P4\n{} {}\n", self.size, self.size).into_bytes();
        let row_bytes = self.size.div_ceil(8);
        for y in 0..self.size {
            let mut row = vec![0u8; row_bytes];
            for x in 0..self.size {
                if self.get(x, y) {
                    row[x / 8] |= 0x80 >> (x % 8);
                }
            }
            out.extend_from_slice(&row);
        }
        out
    }

    pub fn from_pbm(place_id: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::format("PBM", m.to_string());
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 3 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
        }
        pos += 1;
        if fields[0] != "P4" {
            return Err(bad("not a P4 bitmap"));
        }
        let w: usize = fields[1].parse().map_err(|_| bad("width"))?;
        let h: usize = fields[2].parse().map_err(|_| bad("height"))?;
        if w != h {
            return Err(bad("image is not square"));
        }
        let row_bytes = w.div_ceil(8);
        let body = bytes.get(pos..).ok_or_else(|| bad("missing pixel data"))?;
        if body.len() != row_bytes * h {
            return Err(bad("pixel data has the wrong length"));
        }
        let mut img = RasterImage::blank(place_id, w);
        for y in 0..h {
            for x in 0..w {
                if body[y * row_bytes + x / 8] & (0x80 >> (x % 8)) != 0 {
                    img.set(x, y, true);
                }
            }
        }
        Ok(img)
    }

    /// 8-bit grayscale PNG, roads black on white.
    pub fn to_png(&self) -> Vec<u8> {
        let gray: Vec<u8> = self
            .pixels()
            .into_iter()
            .map(|p| if p != 0 { 0 } else { 255 })
            .collect();
        encode_gray_png(self.size as u32, self.size as u32, &gray)
    }
}

pub(crate) fn encode_gray_png(width: u32, height: u32, gray: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("in-memory PNG header");
        writer.write_image_data(gray).expect("in-memory PNG body");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_access() {
        let mut img = RasterImage::blank("p", 5);
        assert_eq!(img.packed().len(), 4);
        img.set(4, 4, true);
        img.set(0, 1, true);
        assert!(img.get(4, 4) && img.get(0, 1) && !img.get(1, 0));
        assert_eq!(img.count_set(), 2);
        img.set(4, 4, false);
        assert_eq!(img.count_set(), 1);
    }

    #[test]
    fn pbm_round_trip() {
        let mut img = RasterImage::blank("p", 11);
        for i in 0..11 {
            img.set(i, (i * 3) % 11, true);
        }
        let pbm = img.to_pbm();
        assert!(pbm.starts_with(b"P4\n11 11\n"));
        assert_eq!(pbm.len(), 9 + 2 * 11);
        assert_eq!(RasterImage::from_pbm("p", &pbm).unwrap(), img);
    }

    #[test]
    fn integer_downsample_is_box_vote() {
        let mut img = RasterImage::blank("p", 4);
        // top-left block: 2 of 4 set -> kept; top-right block: 1 of 4 -> dropped
        img.set(0, 0, true);
        img.set(1, 1, true);
        img.set(3, 0, true);
        let d = img.downsample(2);
        assert!(d.get(0, 0));
        assert!(!d.get(1, 0));
        assert_eq!(d.count_set(), 1);
    }

    #[test]
    fn tensor_view() {
        let mut img = RasterImage::blank("p", 4);
        img.set(2, 1, true);
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[1, 4, 4, 1]);
        assert_eq!(t.data()[4 + 2], 1.0);
        assert_eq!(t.data().iter().sum::<f32>(), 1.0);
    }

    #[test]
    fn png_decodes() {
        let mut img = RasterImage::blank("p", 8);
        img.set(3, 3, true);
        let bytes = img.to_png();
        let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (8, 8));
        assert_eq!(buf[3 * 8 + 3], 0);
        assert_eq!(buf[0], 255);
    }
}
