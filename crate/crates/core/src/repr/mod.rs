//! Dense representations built from event streams: normalized FIFO event
//! frames, bilinear voxel grids, gray-channel stacking and spatial pooling.

mod frames;
mod io;
mod voxel;

pub use frames::{build_frames, EventFrame, FrameBuilder};
pub use io::{read_frame_file, write_frame_file, FrameFile, FRAME_MAGIC};
pub use voxel::{build_voxel_grid, VoxelGrid};

use thiserror::Error;
use serde::{Deserialize, Serialize};

/// Default frame period: 0.15 s.
pub const DEFAULT_DT_US: u64 = 150_000;
/// Default memory window: 0.512 s.
pub const DEFAULT_T_M_US: u64 = 512_000;
/// Default voxel-grid bin count.
pub const DEFAULT_BINS: usize = 5;

#[derive(Debug, Error)]
pub enum ReprError {
    #[error("no events")]
    NoEvents,
    #[error("degenerate duration: all events share timestamp {0}")]
    DegenerateDuration(u64),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("frame file error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `height x width x channels` array of `f32`, row-major with channels
/// interleaved last: element `(y, x, c)` lives at `(y * width + x) * channels + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFrame {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl DenseFrame {
    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self, ReprError> {
        if data.len() != height * width * channels {
            return Err(ReprError::Shape(format!(
                "{} values for a {height}x{width}x{channels} frame",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(y, x, c)]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }
}

/// Spatial pooling rule for [`downsample`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Keeps the most recent activity in each block.
    #[default]
    Max,
    Mean,
}

/// Replaces undefined (NaN) cells of an event frame with `fill`.
pub fn fill_undefined(frame: &EventFrame, fill: f32) -> Result<DenseFrame, ReprError> {
    if !(0.0..=1.0).contains(&fill) {
        return Err(ReprError::Argument(format!("fill value {fill} outside [0, 1]")));
    }
    let mut out = frame.values.clone();
    for v in &mut out.data {
        if v.is_nan() {
            *v = fill;
        }
    }
    Ok(out)
}

/// Pools each `factor x factor` block per channel. Border blocks that run
/// past the edge pool over the cells they have.
pub fn downsample(frame: &DenseFrame, factor: usize, pooling: Pooling) -> Result<DenseFrame, ReprError> {
    if factor == 0 {
        return Err(ReprError::Argument("downsample factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(frame.clone());
    }
    let (h, w, c) = frame.shape();
    let (oh, ow) = (h.div_ceil(factor), w.div_ceil(factor));
    let init = match pooling {
        Pooling::Max => f32::NEG_INFINITY,
        Pooling::Mean => 0.0,
    };
    let mut out = DenseFrame::filled(oh, ow, c, init);

    for y in 0..h {
        let oy = y / factor;
        for x in 0..w {
            let ox = x / factor;
            let src = frame.index(y, x, 0);
            let dst = out.index(oy, ox, 0);
            for ch in 0..c {
                let v = frame.data[src + ch];
                let o = &mut out.data[dst + ch];
                match pooling {
                    Pooling::Max => *o = o.max(v),
                    Pooling::Mean => *o += v,
                }
            }
        }
    }
    if pooling == Pooling::Mean {
        for oy in 0..oh {
            let bh = (h - oy * factor).min(factor);
            for ox in 0..ow {
                let bw = (w - ox * factor).min(factor);
                let n = (bh * bw) as f32;
                let dst = out.index(oy, ox, 0);
                for v in &mut out.data[dst..dst + c] {
                    *v /= n;
                }
            }
        }
    } else {
        // A block of NaNs only (unfilled frame) stays undefined.
        for v in &mut out.data {
            if *v == f32::NEG_INFINITY {
                *v = f32::NAN;
            }
        }
    }
    Ok(out)
}

/// Index of the gray frame paired with event frame `k` (0-based) when `n`
/// event frames are synchronized with `n_gray` gray frames: `floor(r * k)`
/// with `r = n_gray / n`, in exact integer arithmetic.
pub fn gray_index(k: usize, n: usize, n_gray: usize) -> usize {
    ((k as u128 * n_gray as u128) / n as u128) as usize
}

/// Pairs each event frame (undefined cells filled) with its synchronized
/// gray frame, producing three-channel frames.
pub fn stack_channels(frames: &[EventFrame], gray: &[DenseFrame], fill: f32) -> Result<Vec<DenseFrame>, ReprError> {
    if frames.is_empty() || gray.is_empty() {
        return Err(ReprError::Argument("stacking needs at least one event frame and one gray frame".into()));
    }
    let (h, w) = (frames[0].values.height, frames[0].values.width);
    for g in gray {
        if g.height != h || g.width != w || g.channels != 1 {
            return Err(ReprError::Shape(format!(
                "gray frame {}x{}x{} does not match event frames {h}x{w}x1",
                g.height, g.width, g.channels
            )));
        }
        if g.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ReprError::Argument("gray values must lie in [0, 1]".into()));
        }
    }

    let n = frames.len();
    frames
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let events = fill_undefined(f, fill)?;
            let g = &gray[gray_index(k, n, gray.len())];
            let mut data = Vec::with_capacity(h * w * 3);
            for (pair, &gv) in events.data.chunks_exact(2).zip(&g.data) {
                data.extend_from_slice(pair);
                data.push(gv);
            }
            DenseFrame::from_vec(h, w, 3, data)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame_from(values: Vec<f32>, h: usize, w: usize) -> EventFrame {
        EventFrame {
            values: DenseFrame::from_vec(h, w, 2, values).unwrap(),
            t_k: 0,
            t_m: 1,
        }
    }

    #[test]
    fn fill_all_undefined() {
        let f = frame_from(vec![f32::NAN; 8], 2, 2);
        assert!(fill_undefined(&f, 0.0).unwrap().data.iter().all(|&v| v == 0.0));
        assert!(fill_undefined(&f, 0.5).unwrap().data.iter().all(|&v| v == 0.5));
        assert!(fill_undefined(&f, 1.5).is_err());
    }

    #[test]
    fn fill_keeps_defined() {
        let mut v = vec![f32::NAN; 8];
        v[5] = 0.7;
        let out = fill_undefined(&frame_from(v, 2, 2), 0.0).unwrap();
        for (i, &x) in out.data.iter().enumerate() {
            assert_eq!(x, if i == 5 { 0.7 } else { 0.0 });
        }
    }

    #[test]
    fn downsample_half_resolution_shape() {
        let f = DenseFrame::filled(360, 500, 2, 0.25);
        let out = downsample(&f, 2, Pooling::Max).unwrap();
        assert_eq!(out.shape(), (180, 250, 2));
        assert!(out.data.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn downsample_block_max_and_mean() {
        let f = DenseFrame::from_vec(2, 2, 1, vec![0.1, 0.9, 0.0, 0.3]).unwrap();
        assert_eq!(downsample(&f, 2, Pooling::Max).unwrap().data, vec![0.9]);
        let mean = downsample(&f, 2, Pooling::Mean).unwrap().data[0];
        assert!((mean - 0.325).abs() < 1e-6);
    }

    #[test]
    fn downsample_ragged_border() {
        let f = DenseFrame::from_vec(1, 3, 1, vec![0.2, 0.4, 0.6]).unwrap();
        let out = downsample(&f, 2, Pooling::Mean).unwrap();
        assert_eq!(out.shape(), (1, 2, 1));
        assert!((out.data[0] - 0.3).abs() < 1e-6);
        assert!((out.data[1] - 0.6).abs() < 1e-6);
        assert!(downsample(&f, 0, Pooling::Max).is_err());
    }

    #[test]
    fn gray_pairing_rule() {
        assert_eq!(gray_index(4, 7, 7), 4);
        assert_eq!(gray_index(8, 10, 5), 4);
        assert!((0..10).all(|k| gray_index(k, 10, 1) == 0));
        assert!((0..10).all(|k| gray_index(k, 10, 3) < 3));
    }

    #[test]
    fn stack_interleaves_gray() {
        let mut v = vec![f32::NAN; 8];
        v[0] = 0.5;
        let frames = vec![frame_from(v.clone(), 2, 2), frame_from(v, 2, 2)];
        let gray = vec![DenseFrame::filled(2, 2, 1, 0.25)];
        let out = stack_channels(&frames, &gray, 0.0).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].shape(), (2, 2, 3));
        assert_eq!(&out[0].data[..6], &[0.5, 0.0, 0.25, 0.0, 0.0, 0.25]);
        let bad = vec![DenseFrame::filled(3, 2, 1, 0.0)];
        assert!(stack_channels(&frames, &bad, 0.0).is_err());
        assert!(stack_channels(&frames, &[], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn downsample_composes(a in 1usize..4, b in 1usize..4, mh in 1usize..4, mw in 1usize..4, seed in any::<u64>()) {
            let (h, w) = (a * b * mh, a * b * mw);
            let mut x = seed;
            let data: Vec<f32> = (0..h * w * 2).map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (x >> 40) as f32 / (1u64 << 24) as f32
            }).collect();
            let f = DenseFrame::from_vec(h, w, 2, data).unwrap();
            let two_step = downsample(&downsample(&f, a, Pooling::Max).unwrap(), b, Pooling::Max).unwrap();
            let one_step = downsample(&f, a * b, Pooling::Max).unwrap();
            prop_assert_eq!(two_step, one_step);
        }
    }
}
