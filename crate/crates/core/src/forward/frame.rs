use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GeometryHash;

/// Bytes before the channel values: u32 protocol version + u64 geometry hash.
pub const FRAME_HEADER_BYTES: usize = 12;

/// One set of boundary voltages in canonical protocol order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFrame {
    pub values: Vec<f64>,
    pub protocol_version: u32,
    pub geometry_hash: GeometryHash,
}

impl MeasurementFrame {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_compatible(&self, other: &MeasurementFrame) -> Result<()> {
        other.geometry_hash.ensure(self.geometry_hash)?;
        if self.protocol_version != other.protocol_version || self.len() != other.len() {
            return Err(Error::Shape(format!(
                "frame v{} x{} vs v{} x{}",
                self.protocol_version,
                self.len(),
                other.protocol_version,
                other.len()
            )));
        }
        Ok(())
    }

    /// `self - reference`, channel by channel.
    pub fn delta(&self, reference: &MeasurementFrame) -> Result<Vec<f64>> {
        self.check_compatible(reference)?;
        Ok(self
            .values
            .iter()
            .zip(&reference.values)
            .map(|(a, b)| a - b)
            .collect())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.protocol_version.to_le_bytes())?;
        w.write_all(&self.geometry_hash.0.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads one frame of `channels` values; `Ok(None)` at a clean end of stream.
    pub fn read_from<R: Read>(r: &mut R, channels: usize) -> Result<Option<Self>> {
        let mut header = [0u8; FRAME_HEADER_BYTES];
        match r.read_exact(&mut header) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        let protocol_version = u32::from_le_bytes(header[..4].try_into().unwrap());
        let geometry_hash = GeometryHash(u64::from_le_bytes(header[4..].try_into().unwrap()));
        let mut buf = vec![0u8; 8 * channels];
        r.read_exact(&mut buf).map_err(|e| Error::Format {
            what: "measurement frame",
            detail: format!("truncated frame: {e}"),
        })?;
        let values = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Some(Self {
            values,
            protocol_version,
            geometry_hash,
        }))
    }
}

pub fn write_frames(path: &Path, frames: &[MeasurementFrame]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for f in frames {
        f.write_to(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_frames(path: &Path, channels: usize) -> Result<Vec<MeasurementFrame>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    while let Some(f) = MeasurementFrame::read_from(&mut r, channels)? {
        out.push(f);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn binary_roundtrip(values in prop::collection::vec(-1e3f64..1e3, 0..120), v in any::<u32>(), h in any::<u64>()) {
            let f = MeasurementFrame { values: values.clone(), protocol_version: v, geometry_hash: GeometryHash(h) };
            let mut buf = Vec::new();
            f.write_to(&mut buf).unwrap();
            prop_assert_eq!(buf.len(), FRAME_HEADER_BYTES + 8 * values.len());
            let back = MeasurementFrame::read_from(&mut buf.as_slice(), values.len()).unwrap().unwrap();
            prop_assert_eq!(back, f);
        }
    }

    #[test]
    fn layout_is_little_endian() {
        let f = MeasurementFrame {
            values: vec![1.0],
            protocol_version: 1,
            geometry_hash: GeometryHash(0x0102030405060708),
        };
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], &[1, 0, 0, 0]);
        assert_eq!(&buf[4..12], &[8, 7, 6, 5, 4, 3, 2, 1]);
        assert_eq!(&buf[12..], &1.0f64.to_le_bytes());
    }

    #[test]
    fn truncated_frame_is_an_error() {
        let f = MeasurementFrame {
            values: vec![1.0, 2.0],
            protocol_version: 1,
            geometry_hash: GeometryHash(3),
        };
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        buf.pop();
        assert!(MeasurementFrame::read_from(&mut buf.as_slice(), 2).is_err());
    }

    #[test]
    fn delta_rejects_foreign_geometry() {
        let a = MeasurementFrame {
            values: vec![1.0],
            protocol_version: 1,
            geometry_hash: GeometryHash(1),
        };
        let mut b = a.clone();
        b.geometry_hash = GeometryHash(2);
        assert!(matches!(a.delta(&b), Err(Error::HashMismatch { .. })));
        assert_eq!(a.delta(&a).unwrap(), vec![0.0]);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.bin");
        let frames: Vec<_> = (0..3)
            .map(|i| MeasurementFrame {
                values: vec![i as f64; 4],
                protocol_version: 1,
                geometry_hash: GeometryHash(9),
            })
            .collect();
        write_frames(&path, &frames).unwrap();
        assert_eq!(read_frames(&path, 4).unwrap(), frames);
    }
}
