use super::ReprError;
use crate::event::EventStream;

/// `H x W x B` spatio-temporal histogram; element `(y, x, b)` lives at
/// `(y * width + x) * bins + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub height: usize,
    pub width: usize,
    pub bins: usize,
    pub t0: u64,
    pub tn: u64,
    pub data: Vec<f64>,
}

impl VoxelGrid {
    pub fn get(&self, y: usize, x: usize, b: usize) -> f64 {
        self.data[(y * self.width + x) * self.bins + b]
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Spreads each event over the temporal bins with the bilinear kernel
/// `max(0, 1 - |b - t*|)`, where `t* = (B - 1)(t - t0)/(tn - t0)` and `b` is
/// the bin index. Negative events deposit negative mass.
pub fn build_voxel_grid(stream: &EventStream, bins: usize) -> Result<VoxelGrid, ReprError> {
    if bins < 2 {
        return Err(ReprError::Argument("voxel grid needs at least 2 bins".into()));
    }
    let (t0, tn) = match (stream.first_t(), stream.last_t()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(ReprError::NoEvents),
    };
    if tn == t0 {
        return Err(ReprError::DegenerateDuration(t0));
    }
    let g = stream.geometry();
    let (h, w) = (g.height as usize, g.width as usize);
    let mut data = vec![0.0f64; h * w * bins];
    let scale = (bins - 1) as f64 / (tn - t0) as f64;

    for e in stream.events() {
        let t_star = (e.t - t0) as f64 * scale;
        let lower = (t_star.floor() as usize).min(bins - 1);
        let frac = t_star - lower as f64;
        let s = e.polarity.sign();
        let base = (e.y as usize * w + e.x as usize) * bins;
        data[base + lower] += s * (1.0 - frac);
        if frac > 0.0 && lower + 1 < bins {
            data[base + lower + 1] += s * frac;
        }
    }

    Ok(VoxelGrid {
        height: h,
        width: w,
        bins,
        t0,
        tn,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Event, Geometry, Polarity};

    fn stream(evs: &[(u64, u16, u8)]) -> EventStream {
        let events = evs
            .iter()
            .map(|&(t, x, p)| Event::new(t, x, 0, Polarity::from_bit(p).unwrap()))
            .collect();
        EventStream::new(Geometry::new(1, 4).unwrap(), events).unwrap()
    }

    #[test]
    fn event_at_start_lands_in_bin_zero() {
        let g = build_voxel_grid(&stream(&[(0, 0, 1), (400, 1, 0)]), 5).unwrap();
        assert_eq!(g.get(0, 0, 0), 1.0);
        assert_eq!((1..5).map(|b| g.get(0, 0, b)).sum::<f64>(), 0.0);
        // The last event sits exactly on the last node.
        assert_eq!(g.get(0, 1, 4), -1.0);
    }

    #[test]
    fn fractional_split() {
        // t* = 4 * 225 / 400 = 2.25
        let g = build_voxel_grid(&stream(&[(0, 0, 0), (225, 2, 1), (400, 1, 0)]), 5).unwrap();
        assert_eq!(g.get(0, 2, 2), 0.75);
        assert_eq!(g.get(0, 2, 3), 0.25);
    }

    #[test]
    fn total_is_signed_count() {
        let g = build_voxel_grid(&stream(&[(0, 0, 1), (13, 1, 1), (77, 2, 0), (100, 3, 1)]), 16).unwrap();
        assert!((g.total() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(build_voxel_grid(&stream(&[(5, 0, 1), (5, 1, 1)]), 5), Err(ReprError::DegenerateDuration(5))));
        assert!(matches!(build_voxel_grid(&stream(&[]), 5), Err(ReprError::NoEvents)));
        assert!(build_voxel_grid(&stream(&[(0, 0, 1), (1, 0, 1)]), 1).is_err());
    }
}
