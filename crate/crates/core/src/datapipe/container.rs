//! Raw clip container: a 24-byte header followed by planar RGB8 frames.
//!
//! Header: magic `VCLP`, then `T, H, W, C` as little-endian u32 and `fps` as
//! little-endian f32. Pixels are laid out `[T][C][H][W]`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VCLP";
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub fps: f32,
    pub data: Vec<u8>,
}

impl Clip {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        fps: f32,
        data: Vec<u8>,
    ) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::Corrupt(format!(
                "bad clip geometry {frames}x{channels}x{height}x{width}"
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Corrupt(format!("bad fps {fps}")));
        }
        if data.len() != frames * channels * height * width {
            return Err(Error::Corrupt(format!(
                "{} bytes for {frames}x{channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            frames,
            height,
            width,
            channels,
            fps,
            data,
        })
    }

    pub fn duration(&self) -> f64 {
        self.frames as f64 / self.fps as f64
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    /// ITU-R 601 luma of frame `t` in `[0, 255]`, row-major `[H][W]`.
    pub fn luma(&self, t: usize) -> Vec<f64> {
        let f = self.frame(t);
        let plane = self.height * self.width;
        if self.channels == 1 {
            return f.iter().map(|&v| v as f64).collect();
        }
        (0..plane)
            .map(|i| {
                0.299 * f[i] as f64 + 0.587 * f[plane + i] as f64 + 0.114 * f[2 * plane + i] as f64
            })
            .collect()
    }

    /// Frames `start..end` as a new clip.
    pub fn slice(&self, start: usize, end: usize) -> Result<Clip> {
        if start >= end || end > self.frames {
            return Err(Error::OutOfRange(format!(
                "frames {start}..{end} of {}",
                self.frames
            )));
        }
        let n = self.frame_len();
        Clip::new(
            end - start,
            self.height,
            self.width,
            self.channels,
            self.fps,
            self.data[start * n..end * n].to_vec(),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len());
        out.extend_from_slice(MAGIC);
        for v in [self.frames, self.height, self.width, self.channels] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.fps.to_le_bytes());
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::Corrupt("missing clip header".into()));
        }
        let u =
            |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
        let fps = f32::from_le_bytes(bytes[20..24].try_into().expect("4 bytes"));
        Clip::new(u(4), u(8), u(12), u(16), fps, bytes[HEADER_LEN..].to_vec())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bytes() {
        let c = Clip::new(2, 2, 3, 3, 24.0, (0..36).collect()).unwrap();
        let b = c.to_bytes();
        assert_eq!(b.len(), HEADER_LEN + 36);
        assert_eq!(Clip::from_bytes(&b).unwrap(), c);
    }

    #[test]
    fn round_trip_file() {
        let dir = tempfile::tempdir().unwrap();
        let c = Clip::new(1, 1, 1, 1, 16.0, vec![7]).unwrap();
        let p = dir.path().join("a.clip");
        c.write(&p).unwrap();
        assert_eq!(Clip::read(&p).unwrap(), c);
    }

    #[test]
    fn corrupt_inputs() {
        assert!(Clip::from_bytes(b"nope").is_err());
        let mut b = Clip::new(1, 1, 1, 1, 16.0, vec![7]).unwrap().to_bytes();
        b.push(0);
        assert!(Clip::from_bytes(&b).is_err());
        assert!(Clip::new(1, 1, 1, 2, 16.0, vec![0, 0]).is_err());
        assert!(Clip::new(1, 1, 1, 1, 0.0, vec![0]).is_err());
    }

    #[test]
    fn luma_weights() {
        let c = Clip::new(1, 1, 1, 3, 16.0, vec![100, 200, 50]).unwrap();
        assert!((c.luma(0)[0] - (29.9 + 117.4 + 5.7)).abs() < 1e-9);
    }

    #[test]
    fn slicing() {
        let c = Clip::new(4, 1, 1, 1, 2.0, vec![1, 2, 3, 4]).unwrap();
        assert_eq!(c.slice(1, 3).unwrap().data, vec![2, 3]);
        assert!(c.slice(3, 3).is_err());
        assert_eq!(c.duration(), 2.0);
    }
}
