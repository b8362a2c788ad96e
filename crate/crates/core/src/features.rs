//! Per-frame feature sequences, the built-in pooled-pixel extractor, and
//! the `FTR1` interchange file that lets any external backbone feed the
//! classifier.
//!
//! `FTR1` layout (little-endian): magic, u32 dim, u32 count, u8 has_label,
//! u32 label, u32 clip-id byte length, clip-id UTF-8, then `count * dim`
//! `f32` values, one vector after another.

use std::path::Path;

use thiserror::Error;

use crate::fsutil::{write_atomic, Reader};
use crate::repr::{downsample, DenseFrame, Pooling, ReprError};

pub const FEATURE_MAGIC: &[u8; 4] = b"FTR1";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("bad magic, expected FTR1")]
    BadMagic,
    #[error("truncated payload: {0}")]
    Truncated(String),
    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(usize),
    #[error("non-finite feature at vector {vector}, component {component}")]
    NonFinite { vector: usize, component: usize },
    #[error("clip id is not valid UTF-8")]
    ClipId,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Repr(#[from] ReprError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `count x dim` feature vectors for one clip, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub dim: usize,
    pub vectors: Vec<f32>,
    pub clip_id: String,
    pub label: Option<usize>,
}

impl FeatureSequence {
    pub fn new(dim: usize, vectors: Vec<f32>, clip_id: impl Into<String>, label: Option<usize>) -> Result<Self, FeatureError> {
        if dim == 0 || !vectors.len().is_multiple_of(dim) {
            return Err(FeatureError::Shape(format!("{} values do not split into rows of {dim}", vectors.len())));
        }
        let seq = Self {
            dim,
            vectors,
            clip_id: clip_id.into(),
            label,
        };
        seq.check_finite()?;
        Ok(seq)
    }

    pub fn count(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f32] {
        &self.vectors[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.vectors.chunks_exact(self.dim)
    }

    fn check_finite(&self) -> Result<(), FeatureError> {
        match self.vectors.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(FeatureError::NonFinite {
                vector: i / self.dim,
                component: i % self.dim,
            }),
            None => Ok(()),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, FeatureError> {
        self.check_finite()?;
        let too_big = |what: &str| FeatureError::Shape(format!("{what} exceeds u32"));
        let dim = u32::try_from(self.dim).map_err(|_| too_big("dim"))?;
        let count = u32::try_from(self.count()).map_err(|_| too_big("count"))?;
        let label = u32::try_from(self.label.unwrap_or(0)).map_err(|_| too_big("label"))?;
        let id = self.clip_id.as_bytes();
        let id_len = u32::try_from(id.len()).map_err(|_| too_big("clip id"))?;

        let mut out = Vec::with_capacity(21 + id.len() + self.vectors.len() * 4);
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&dim.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        out.push(self.label.is_some() as u8);
        out.extend_from_slice(&label.to_le_bytes());
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        for v in &self.vectors {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FeatureError> {
        let mut r = Reader::new(bytes);
        let truncated = |what: &str| FeatureError::Truncated(what.to_string());
        if r.take(4).ok_or_else(|| truncated("magic"))? != FEATURE_MAGIC {
            return Err(FeatureError::BadMagic);
        }
        let dim = r.u32().ok_or_else(|| truncated("header"))? as usize;
        let count = r.u32().ok_or_else(|| truncated("header"))? as usize;
        let has_label = r.u8().ok_or_else(|| truncated("header"))?;
        let label = r.u32().ok_or_else(|| truncated("header"))? as usize;
        let id_len = r.u32().ok_or_else(|| truncated("header"))? as usize;
        let id = r.take(id_len).ok_or_else(|| truncated("clip id"))?;
        let clip_id = std::str::from_utf8(id).map_err(|_| FeatureError::ClipId)?.to_string();
        if dim == 0 {
            return Err(FeatureError::Shape("dim must be positive".into()));
        }

        let expected = count as u128 * dim as u128 * 4;
        let have = r.remaining() as u128;
        if have < expected {
            return Err(FeatureError::Truncated(format!("expected {expected} payload bytes, found {have}")));
        }
        if have > expected {
            return Err(FeatureError::TrailingBytes((have - expected) as usize));
        }
        let vectors: Vec<f32> = (0..count * dim).map(|_| r.f32().unwrap()).collect();
        let seq = Self {
            dim,
            vectors,
            clip_id,
            label: (has_label != 0).then_some(label),
        };
        seq.check_finite()?;
        Ok(seq)
    }
}

pub fn write_features(path: &Path, seq: &FeatureSequence) -> Result<(), FeatureError> {
    write_atomic(path, &seq.to_bytes()?)?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureSequence, FeatureError> {
    FeatureSequence::from_bytes(&std::fs::read(path)?)
}

/// Built-in extractor: max-pools every frame by `pool_factor` and flattens
/// it row-major with channels last.
pub fn frames_to_features(frames: &[DenseFrame], pool_factor: usize) -> Result<FeatureSequence, FeatureError> {
    let Some(first) = frames.first() else {
        return Err(FeatureError::Shape("no frames".into()));
    };
    let shape = first.shape();
    let (h, w, c) = shape;
    let dim = h.div_ceil(pool_factor.max(1)) * w.div_ceil(pool_factor.max(1)) * c;
    let mut vectors = Vec::with_capacity(frames.len() * dim);
    for (k, f) in frames.iter().enumerate() {
        if f.shape() != shape {
            return Err(FeatureError::Shape(format!("frame {k} is {:?}, expected {shape:?}", f.shape())));
        }
        vectors.extend_from_slice(&downsample(f, pool_factor, Pooling::Max)?.data);
    }
    FeatureSequence::new(dim, vectors, "", None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pooled_dimension() {
        let frames = vec![DenseFrame::filled(180, 250, 2, 0.0); 2];
        let seq = frames_to_features(&frames, 10).unwrap();
        assert_eq!(seq.dim, 900);
        assert_eq!(seq.count(), 2);
        assert!(seq.vectors.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pool_one_flattens() {
        let f = DenseFrame::from_vec(2, 2, 2, (0..8).map(|i| i as f32 / 8.0).collect()).unwrap();
        let seq = frames_to_features(std::slice::from_ref(&f), 1).unwrap();
        assert_eq!(seq.dim, 8);
        assert_eq!(seq.row(0), f.data.as_slice());
    }

    #[test]
    fn inconsistent_shapes() {
        let frames = vec![DenseFrame::filled(4, 4, 2, 0.0), DenseFrame::filled(4, 5, 2, 0.0)];
        assert!(matches!(frames_to_features(&frames, 2), Err(FeatureError::Shape(_))));
        assert!(frames_to_features(&[], 2).is_err());
    }

    #[test]
    fn truncated_payload() {
        let seq = FeatureSequence::new(3, vec![1.0; 6], "clip", Some(2)).unwrap();
        let bytes = seq.to_bytes().unwrap();
        assert!(matches!(FeatureSequence::from_bytes(&bytes[..bytes.len() - 1]), Err(FeatureError::Truncated(_))));
        assert!(matches!(FeatureSequence::from_bytes(&bytes[..10]), Err(FeatureError::Truncated(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(FeatureSequence::from_bytes(&long), Err(FeatureError::TrailingBytes(1))));
        let mut bad = bytes;
        bad[3] = b'2';
        assert!(matches!(FeatureSequence::from_bytes(&bad), Err(FeatureError::BadMagic)));
    }

    #[test]
    fn nan_payload() {
        let seq = FeatureSequence::new(2, vec![1.0, 2.0], "c", None).unwrap();
        let mut bytes = seq.to_bytes().unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            FeatureSequence::from_bytes(&bytes),
            Err(FeatureError::NonFinite { vector: 0, component: 1 })
        ));
        assert!(FeatureSequence::new(1, vec![f32::INFINITY], "c", None).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ftr");
        let seq = FeatureSequence::new(2, vec![0.5, -1.0, 3.0, 4.0], "clip_é", Some(7)).unwrap();
        write_features(&path, &seq).unwrap();
        assert_eq!(read_features(&path).unwrap(), seq);
    }

    proptest! {
        #[test]
        fn round_trip_bit_exact(dim in 1usize..16, count in 0usize..8, label in proptest::option::of(0usize..100),
                                id in "[a-z0-9_]{0,12}", seed in any::<u32>()) {
            let vectors: Vec<f32> = (0..dim * count).map(|i| f32::from_bits((seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 40503)) & 0x3fff_ffff)).collect();
            let seq = FeatureSequence::new(dim, vectors, id, label).unwrap();
            let back = FeatureSequence::from_bytes(&seq.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(back.vectors.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            seq.vectors.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back, seq);
        }

        #[test]
        fn extractor_permutation_equivariant(n in 1usize..5, seed in any::<u64>()) {
            let mut x = seed;
            let frames: Vec<DenseFrame> = (0..n).map(|_| {
                let data = (0..6 * 5 * 2).map(|_| {
                    x = x.wrapping_mul(6364136223846793005).wrapping_add(1);
                    (x >> 41) as f32 / (1u64 << 23) as f32
                }).collect();
                DenseFrame::from_vec(6, 5, 2, data).unwrap()
            }).collect();
            let fwd = frames_to_features(&frames, 2).unwrap();
            let rev: Vec<DenseFrame> = frames.iter().rev().cloned().collect();
            let bwd = frames_to_features(&rev, 2).unwrap();
            for k in 0..n {
                prop_assert_eq!(fwd.row(k), bwd.row(n - 1 - k));
            }
        }
    }
}
