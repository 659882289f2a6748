//! Georeferenced multi-channel rasters and the GFR1 file format.
//!
//! Samples are 32-bit floats, channel-planar, row-major within each plane.
//! The georeference is the `(origin, pixel_size)` mapping from grid indices
//! to map coordinates; exact equality of georeferences across modalities is
//! the fusion alignment criterion.

use std::fs;
use std::path::Path;

use crate::bytes::ByteReader;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GFR1_MAGIC: &[u8; 4] = b"GFR1";

/// Sensor (or fusion product) a raster came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Lidar,
    Sar,
    Optical,
    Fused,
}

impl Modality {
    pub fn to_u8(self) -> u8 {
        match self {
            Modality::Lidar => 0,
            Modality::Sar => 1,
            Modality::Optical => 2,
            Modality::Fused => 3,
        }
    }

    pub fn from_u8(v: u8) -> Option<Modality> {
        match v {
            0 => Some(Modality::Lidar),
            1 => Some(Modality::Sar),
            2 => Some(Modality::Optical),
            3 => Some(Modality::Fused),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Lidar => "lidar",
            Modality::Sar => "sar",
            Modality::Optical => "optical",
            Modality::Fused => "fused",
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Modality> {
        match s {
            "lidar" => Ok(Modality::Lidar),
            "sar" => Ok(Modality::Sar),
            "optical" => Ok(Modality::Optical),
            "fused" => Ok(Modality::Fused),
            other => Err(Error::InvalidArgument(format!("unknown modality '{other}'"))),
        }
    }
}

/// Georeferenced grid of f32 samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
    samples: Vec<f32>,
    pub modality: Modality,
}

impl Raster {
    pub fn zeros(
        width: usize,
        height: usize,
        channels: usize,
        origin_x: f64,
        origin_y: f64,
        pixel_size: f64,
        modality: Modality,
    ) -> Result<Raster> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "raster extents must be positive, got {width}x{height}x{channels}"
            )));
        }
        if !(pixel_size > 0.0) || !pixel_size.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "pixel_size must be positive and finite, got {pixel_size}"
            )));
        }
        Ok(Raster {
            width,
            height,
            channels,
            origin_x,
            origin_y,
            pixel_size,
            samples: vec![0.0; width * height * channels],
            modality,
        })
    }

    pub fn from_samples(
        width: usize,
        height: usize,
        channels: usize,
        origin_x: f64,
        origin_y: f64,
        pixel_size: f64,
        modality: Modality,
        samples: Vec<f32>,
    ) -> Result<Raster> {
        let mut r = Raster::zeros(width, height, channels, origin_x, origin_y, pixel_size, modality)?;
        if samples.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "raster {width}x{height}x{channels} needs {} samples, got {}",
                width * height * channels,
                samples.len()
            )));
        }
        r.samples = samples;
        Ok(r)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f32] {
        &mut self.samples
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let hw = self.width * self.height;
        &self.samples[c * hw..(c + 1) * hw]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let hw = self.width * self.height;
        &mut self.samples[c * hw..(c + 1) * hw]
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.samples[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        self.samples[(c * self.height + y) * self.width + x] = v;
    }

    /// Same `(width, height, origin, pixel_size)`, compared exactly.
    pub fn same_georef(&self, other: &Raster) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.origin_x == other.origin_x
            && self.origin_y == other.origin_y
            && self.pixel_size == other.pixel_size
    }

    /// Copy of channels `[start, start+count)` as a new raster.
    pub fn extract_channels(&self, start: usize, count: usize, modality: Modality) -> Result<Raster> {
        if start + count > self.channels || count == 0 {
            return Err(Error::InvalidArgument(format!(
                "channel range {start}..{} out of 0..{}",
                start + count,
                self.channels
            )));
        }
        let hw = self.width * self.height;
        Raster::from_samples(
            self.width,
            self.height,
            count,
            self.origin_x,
            self.origin_y,
            self.pixel_size,
            modality,
            self.samples[start * hw..(start + count) * hw].to_vec(),
        )
    }

    /// Widen samples to a rank-3 f64 tensor `[channels, height, width]`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.samples.iter().map(|&v| v as f64).collect();
        Tensor::from_vec(&[self.channels, self.height, self.width], data)
            .expect("raster invariant guarantees the shape")
    }

    /// Per-pixel mean across channels, row-major.
    pub fn channel_mean(&self) -> Vec<f64> {
        let hw = self.width * self.height;
        let mut mean = vec![0.0f64; hw];
        for c in 0..self.channels {
            for (m, &v) in mean.iter_mut().zip(self.plane(c)) {
                *m += v as f64;
            }
        }
        let inv = 1.0 / self.channels as f64;
        for m in &mut mean {
            *m *= inv;
        }
        mean
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(41 + 4 * self.samples.len());
        out.extend_from_slice(GFR1_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        out.push(self.modality.to_u8());
        out.extend_from_slice(&self.origin_x.to_le_bytes());
        out.extend_from_slice(&self.origin_y.to_le_bytes());
        out.extend_from_slice(&self.pixel_size.to_le_bytes());
        for v in &self.samples {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Raster> {
        let mut r = ByteReader::new(buf);
        r.expect_magic(GFR1_MAGIC)?;
        let w_off = r.pos();
        let width = r.u32("width")? as usize;
        let h_off = r.pos();
        let height = r.u32("height")? as usize;
        let c_off = r.pos();
        let channels = r.u32("channels")? as usize;
        let m_off = r.pos();
        let modality_byte = r.u8("modality")?;
        let origin_x = r.f64("origin_x")?;
        let origin_y = r.f64("origin_y")?;
        let p_off = r.pos();
        let pixel_size = r.f64("pixel_size")?;

        if width == 0 {
            return Err(Error::InvalidField { offset: w_off, what: "zero width".into() });
        }
        if height == 0 {
            return Err(Error::InvalidField { offset: h_off, what: "zero height".into() });
        }
        if channels == 0 {
            return Err(Error::InvalidField { offset: c_off, what: "zero channels".into() });
        }
        let modality = Modality::from_u8(modality_byte).ok_or(Error::InvalidField {
            offset: m_off,
            what: format!("modality byte {modality_byte} not in 0..=3"),
        })?;
        if !(pixel_size > 0.0) || !pixel_size.is_finite() {
            return Err(Error::InvalidField {
                offset: p_off,
                what: format!("pixel_size {pixel_size} must be positive and finite"),
            });
        }

        let n = width * height * channels;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            samples.push(r.f32("sample")?);
        }
        r.finish()?;
        Raster::from_samples(width, height, channels, origin_x, origin_y, pixel_size, modality, samples)
    }

    pub fn write_file<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_file<P: AsRef<Path>>(path: P) -> Result<Raster> {
        let buf = fs::read(path)?;
        Raster::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    pub(crate) fn random_raster(seed: u64, w: usize, h: usize, c: usize, modality: Modality) -> Raster {
        let mut rng = substream(seed, &[0xa5]);
        let samples = (0..w * h * c).map(|_| rng.gen_range(-10.0f32..10.0)).collect();
        Raster::from_samples(w, h, c, 100.0, -50.0, 0.5, modality, samples).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let r = random_raster(1, 16, 16, 3, Modality::Optical);
        let back = Raster::from_bytes(&r.to_bytes()).unwrap();
        assert_eq!(r, back);
        assert_eq!(r.to_bytes(), back.to_bytes());
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut bytes = random_raster(2, 2, 2, 1, Modality::Lidar).to_bytes();
        bytes[..4].copy_from_slice(b"GFRX");
        match Raster::from_bytes(&bytes) {
            Err(Error::BadMagic { offset, found, .. }) => {
                assert_eq!(offset, 0);
                assert_eq!(found, "GFRX");
            }
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn single_sample_file_layout() {
        // header: 4 magic + 3*u32 + u8 + 3*f64 = 41 bytes, plus one f32
        let r = Raster::from_samples(1, 1, 1, 0.0, 0.0, 1.0, Modality::Lidar, vec![7.5]).unwrap();
        let bytes = r.to_bytes();
        assert_eq!(bytes.len(), 45);
        let payload = f32::from_le_bytes(bytes[41..45].try_into().unwrap());
        assert_eq!(payload, 7.5);
    }

    #[test]
    fn truncated_payload_reports_position() {
        let bytes = random_raster(3, 4, 4, 2, Modality::Sar).to_bytes();
        match Raster::from_bytes(&bytes[..bytes.len() - 2]) {
            Err(Error::Truncated { offset, .. }) => {
                // last full f32 starts 4 bytes before the cut
                assert_eq!(offset, bytes.len() - 2 - 2);
            }
            other => panic!("expected Truncated, got {other:?}"),
        }
    }

    #[test]
    fn zero_dimension_rejected() {
        let mut bytes = random_raster(4, 2, 2, 1, Modality::Lidar).to_bytes();
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes()); // height = 0
        assert!(matches!(
            Raster::from_bytes(&bytes),
            Err(Error::InvalidField { offset: 8, .. })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = random_raster(5, 2, 2, 1, Modality::Lidar).to_bytes();
        bytes.push(0);
        assert!(matches!(
            Raster::from_bytes(&bytes),
            Err(Error::InvalidField { .. })
        ));
    }

    #[test]
    fn extract_channels_slices_back() {
        let r = random_raster(6, 5, 3, 4, Modality::Fused);
        let sub = r.extract_channels(1, 2, Modality::Sar).unwrap();
        assert_eq!(sub.channels(), 2);
        assert_eq!(sub.plane(0), r.plane(1));
        assert_eq!(sub.plane(1), r.plane(2));
    }
}
