//! Dense H x W grids (images, depth maps, uncertainty maps) and the shared
//! binary file format.
//!
//! Layout is row-major and channel-interleaved: index = (y*w + x)*c + ch.
//! Files carry the magic "SFLD", then width/height/channels as 32-bit
//! little-endian unsigned integers, then the data as 32-bit little-endian
//! floats in the same layout.

use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

use crate::autodiff::Real;

pub const SFLD_MAGIC: &[u8; 4] = b"SFLD";

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("data length {got} does not match {width}x{height}x{channels}")]
    LengthMismatch { width: usize, height: usize, channels: usize, got: usize },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("bad magic (expected SFLD)")]
    BadMagic,
    #[error("zero dimension in header ({width}x{height}x{channels})")]
    ZeroDimension { width: u32, height: u32, channels: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Generic dense grid. `ScalarField` is the f64 instantiation used on public
/// surfaces; dual-number grids appear as intermediates of the differentiable
/// pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

pub type ScalarField = Field<f64>;

impl<T> Field<T> {
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    pub fn same_dims<U>(&self, other: &Field<U>) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels == other.channels
    }

    pub fn same_size<U>(&self, other: &Field<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl<T: Copy> Field<T> {
    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        Field { width, height, channels, data: vec![value; width * height * channels] }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Field { width, height, channels, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[self.idx(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        let i = self.idx(x, y, c);
        self.data[i] = v;
    }

    /// Single-channel accessor.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> T {
        debug_assert_eq!(self.channels, 1);
        self.data[y * self.width + x]
    }
}

impl ScalarField {
    /// Validating constructor: length must match and all values be finite.
    pub fn from_vec(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, FieldError> {
        if data.len() != width * height * channels {
            return Err(FieldError::LengthMismatch {
                width,
                height,
                channels,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite(i));
        }
        Ok(Field { width, height, channels, data })
    }

    /// Lift to another scalar type as constants.
    pub fn lift<T: Real>(&self) -> Field<T> {
        Field {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| T::from_f64(v)).collect(),
        }
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_sfld<W: Write>(&self, mut w: W) -> Result<(), FieldError> {
        w.write_all(SFLD_MAGIC)?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&(self.channels as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_sfld<R: Read>(mut r: R) -> Result<Self, FieldError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SFLD_MAGIC {
            return Err(FieldError::BadMagic);
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let width = u32::from_le_bytes(word);
        r.read_exact(&mut word)?;
        let height = u32::from_le_bytes(word);
        r.read_exact(&mut word)?;
        let channels = u32::from_le_bytes(word);
        if width == 0 || height == 0 || channels == 0 {
            return Err(FieldError::ZeroDimension { width, height, channels });
        }
        let n = width as usize * height as usize * channels as usize;
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf)?;
        let data: Vec<f64> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::from_vec(width as usize, height as usize, channels as usize, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FieldError> {
        let f = std::fs::File::create(path)?;
        self.write_sfld(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FieldError> {
        let f = std::fs::File::open(path)?;
        Self::read_sfld(std::io::BufReader::new(f))
    }
}

/// One boolean per pixel: the set of pixels that survived projection and
/// sampling, and the auto-mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl ValidityMask {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        ValidityMask { width, height, bits: vec![value; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_size<U>(&self, field: &Field<U>) -> bool {
        self.width == field.width() && self.height == field.height()
    }

    /// Pixel-wise conjunction. Panics on size mismatch.
    pub fn and(&self, other: &ValidityMask) -> ValidityMask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        ValidityMask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }

    /// 0/1 single-channel field, for dumping masks through the file format.
    pub fn to_field(&self) -> ScalarField {
        Field {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn from_vec_validates_length_and_finiteness() {
        assert!(ScalarField::from_vec(2, 2, 1, vec![0.0; 3]).is_err());
        let err = ScalarField::from_vec(2, 1, 1, vec![0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, FieldError::NonFinite(1)));
        assert!(ScalarField::from_vec(2, 2, 1, vec![0.5; 4]).is_ok());
    }

    #[test]
    fn sfld_round_trip_is_exact_at_f32_precision() {
        let field = ScalarField::from_fn(5, 3, 2, |x, y, c| {
            (x as f64 * 0.13 + y as f64 * 1.7 - c as f64 * 0.001) as f32 as f64
        });
        let mut buf = Vec::new();
        field.write_sfld(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"SFLD");
        let back = ScalarField::read_sfld(buf.as_slice()).unwrap();
        assert_eq!(field, back);
    }

    #[test]
    fn sfld_rejects_bad_magic() {
        let mut buf = Vec::new();
        ScalarField::filled(2, 2, 1, 0.0).write_sfld(&mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(
            ScalarField::read_sfld(buf.as_slice()),
            Err(FieldError::BadMagic)
        ));
    }

    proptest! {
        #[test]
        fn sfld_round_trip_random(w in 1usize..8, h in 1usize..8, c in 1usize..4, seed in 0u64..1000) {
            // Values representable in f32 survive the round trip bit-exactly.
            let mut state = seed;
            let field = ScalarField::from_fn(w, h, c, |_, _, _| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 40) as f32 / 1000.0) as f64
            });
            let mut buf = Vec::new();
            field.write_sfld(&mut buf).unwrap();
            let back = ScalarField::read_sfld(buf.as_slice()).unwrap();
            prop_assert_eq!(field, back);
        }
    }
}
