//! Per-pixel class maps and the GFL1 label file format.

use std::fs;
use std::path::Path;

use crate::bytes::ByteReader;
use crate::error::{Error, Result};

pub const GFL1_MAGIC: &[u8; 4] = b"GFL1";

/// Dense map of small integer class ids, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    num_classes: usize,
    ids: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, num_classes: usize) -> Result<LabelMap> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "label map extents must be positive, got {width}x{height}"
            )));
        }
        if num_classes == 0 || num_classes > 256 {
            return Err(Error::InvalidArgument(format!(
                "num_classes must be in 1..=256, got {num_classes}"
            )));
        }
        Ok(LabelMap {
            width,
            height,
            num_classes,
            ids: vec![0; width * height],
        })
    }

    pub fn from_ids(width: usize, height: usize, num_classes: usize, ids: Vec<u8>) -> Result<LabelMap> {
        let mut map = LabelMap::new(width, height, num_classes)?;
        if ids.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "label map {width}x{height} needs {} ids, got {}",
                width * height,
                ids.len()
            )));
        }
        if let Some(bad) = ids.iter().position(|&id| id as usize >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label id {} at pixel {bad} exceeds num_classes {num_classes}",
                ids[bad]
            )));
        }
        map.ids = ids;
        Ok(map)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ids(&self) -> &[u8] {
        &self.ids
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.ids[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, id: u8) {
        debug_assert!((id as usize) < self.num_classes);
        self.ids[y * self.width + x] = id;
    }

    /// Pixel count per class id.
    pub fn class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.num_classes];
        for &id in &self.ids {
            counts[id as usize] += 1;
        }
        counts
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + self.ids.len());
        out.extend_from_slice(GFL1_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        // 256 classes are stored as 0; LabelMap::new caps the range.
        out.push(if self.num_classes == 256 { 0 } else { self.num_classes as u8 });
        out.extend_from_slice(&self.ids);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<LabelMap> {
        let mut r = ByteReader::new(buf);
        r.expect_magic(GFL1_MAGIC)?;
        let w_off = r.pos();
        let width = r.u32("width")? as usize;
        let h_off = r.pos();
        let height = r.u32("height")? as usize;
        let c_off = r.pos();
        let num_classes = match r.u8("num_classes")? {
            0 => 256,
            c => c as usize,
        };
        if width == 0 {
            return Err(Error::InvalidField {
                offset: w_off,
                what: "zero width".into(),
            });
        }
        if height == 0 {
            return Err(Error::InvalidField {
                offset: h_off,
                what: "zero height".into(),
            });
        }
        let payload_off = r.pos();
        let ids = r.bytes(width * height, "label ids")?.to_vec();
        r.finish()?;
        if let Some(bad) = ids.iter().position(|&id| id as usize >= num_classes) {
            return Err(Error::InvalidField {
                offset: payload_off + bad,
                what: format!(
                    "label id {} exceeds num_classes {num_classes} (declared at offset {c_off})",
                    ids[bad]
                ),
            });
        }
        LabelMap::from_ids(width, height, num_classes, ids)
    }

    pub fn write_file<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_file<P: AsRef<Path>>(path: P) -> Result<LabelMap> {
        let buf = fs::read(path)?;
        LabelMap::from_bytes(&buf)
    }
}
