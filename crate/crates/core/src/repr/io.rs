//! Frame container: `FRM1`, u32 N, u32 H, u32 W, u32 C, u64 t0, u64 dt,
//! u64 t_m, then `N*H*W*C` little-endian `f32` in row-major order with
//! channels last. Undefined cells are quiet NaN unless filled on export.
//! Gray frames from an external reconstruction use the same container with
//! `C = 1`.

use std::path::Path;

use super::{fill_undefined, DenseFrame, EventFrame, ReprError, VoxelGrid};
use crate::fsutil::{write_atomic, Reader};

pub const FRAME_MAGIC: &[u8; 4] = b"FRM1";
const HEADER_LEN: usize = 4 + 4 * 4 + 8 * 3;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameFile {
    pub t0: u64,
    pub dt: u64,
    pub t_m: u64,
    pub frames: Vec<DenseFrame>,
}

impl FrameFile {
    /// Packs event frames, optionally replacing undefined cells with `fill`.
    pub fn from_event_frames(frames: &[EventFrame], t0: u64, dt: u64, fill: Option<f32>) -> Result<Self, ReprError> {
        let t_m = frames.first().map_or(0, |f| f.t_m);
        let frames = frames
            .iter()
            .map(|f| match fill {
                Some(v) => fill_undefined(f, v),
                None => Ok(f.values.clone()),
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { t0, dt, t_m, frames })
    }

    /// A voxel grid as a single `H x W x B` frame; `dt` spans the stream.
    pub fn from_voxel_grid(grid: &VoxelGrid) -> Self {
        let data = grid.data.iter().map(|&v| v as f32).collect();
        Self {
            t0: grid.t0,
            dt: grid.tn - grid.t0,
            t_m: 0,
            frames: vec![DenseFrame {
                height: grid.height,
                width: grid.width,
                channels: grid.bins,
                data,
            }],
        }
    }

    pub fn shape(&self) -> Option<(usize, usize, usize)> {
        self.frames.first().map(DenseFrame::shape)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ReprError> {
        let (h, w, c) = self.shape().unwrap_or((0, 0, 0));
        if self.frames.iter().any(|f| f.shape() != (h, w, c)) {
            return Err(ReprError::Shape("all frames in a file must share one shape".into()));
        }
        let to_u32 = |v: usize| u32::try_from(v).map_err(|_| ReprError::Shape(format!("dimension {v} too large")));
        let mut out = Vec::with_capacity(HEADER_LEN + self.frames.len() * h * w * c * 4);
        out.extend_from_slice(FRAME_MAGIC);
        for v in [self.frames.len(), h, w, c] {
            out.extend_from_slice(&to_u32(v)?.to_le_bytes());
        }
        for v in [self.t0, self.dt, self.t_m] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for f in &self.frames {
            for &v in &f.data {
                let v = if v.is_nan() { f32::NAN } else { v };
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ReprError> {
        let err = |offset: usize, reason: &str| ReprError::Format {
            offset,
            reason: reason.to_string(),
        };
        let mut r = Reader::new(bytes);
        if r.take(4) != Some(FRAME_MAGIC.as_slice()) {
            return Err(err(0, "bad magic, expected FRM1"));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32().ok_or_else(|| err(r.pos(), "truncated header"))? as usize;
        }
        let mut times = [0u64; 3];
        for t in &mut times {
            *t = r.u64().ok_or_else(|| err(r.pos(), "truncated header"))?;
        }
        let [n, h, w, c] = dims;
        let per_frame = h * w * c;
        let expected = (n as u128) * (per_frame as u128) * 4;
        if expected != r.remaining() as u128 {
            return Err(err(
                HEADER_LEN,
                &format!("header declares {expected} payload bytes, found {}", r.remaining()),
            ));
        }
        let frames = (0..n)
            .map(|_| {
                let data = (0..per_frame).map(|_| r.f32().unwrap()).collect();
                DenseFrame {
                    height: h,
                    width: w,
                    channels: c,
                    data,
                }
            })
            .collect();
        Ok(Self {
            t0: times[0],
            dt: times[1],
            t_m: times[2],
            frames,
        })
    }
}

pub fn write_frame_file(path: &Path, file: &FrameFile) -> Result<(), ReprError> {
    write_atomic(path, &file.to_bytes()?)?;
    Ok(())
}

pub fn read_frame_file(path: &Path) -> Result<FrameFile, ReprError> {
    FrameFile::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_nan() {
        let f = DenseFrame::from_vec(1, 2, 2, vec![0.5, f32::NAN, 1.0, 0.0]).unwrap();
        let file = FrameFile {
            t0: 7,
            dt: 150_000,
            t_m: 512_000,
            frames: vec![f.clone(), f],
        };
        let bytes = file.to_bytes().unwrap();
        let back = FrameFile::from_bytes(&bytes).unwrap();
        assert_eq!(back.t0, 7);
        assert_eq!(back.frames.len(), 2);
        assert!(back.frames[1].data[1].is_nan());
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert!(FrameFile::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn fill_on_export() {
        let ef = EventFrame {
            values: DenseFrame::from_vec(1, 1, 2, vec![f32::NAN, 0.3]).unwrap(),
            t_k: 10,
            t_m: 5,
        };
        let file = FrameFile::from_event_frames(&[ef], 0, 10, Some(0.0)).unwrap();
        assert_eq!(file.frames[0].data, vec![0.0, 0.3]);
        assert_eq!(file.t_m, 5);
    }

    #[test]
    fn mixed_shapes_rejected() {
        let file = FrameFile {
            t0: 0,
            dt: 1,
            t_m: 1,
            frames: vec![DenseFrame::filled(1, 1, 2, 0.0), DenseFrame::filled(1, 2, 2, 0.0)],
        };
        assert!(file.to_bytes().is_err());
    }
}
