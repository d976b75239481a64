//! Region features: a fixed-length description of the raster under a window.

use crate::geometry::Window;
use crate::scene::{pixel_span, Raster};

/// Fixed-length feature vector with entries in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Maps a raster region to a feature vector of constant length [`Featurizer::dim`].
pub trait Featurizer: Send + Sync {
    fn dim(&self) -> usize;

    fn extract(&self, raster: &Raster, window: &Window) -> FeatureVector;

    fn extract_global(&self, raster: &Raster) -> FeatureVector {
        self.extract(raster, &Window::full(raster.extent()))
    }
}

/// Splits the window into a `grid`×`grid` lattice and emits (mean, max) per cell,
/// cells in row-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridFeaturizer {
    grid: usize,
}

impl Default for GridFeaturizer {
    fn default() -> Self {
        Self { grid: 8 }
    }
}

impl GridFeaturizer {
    pub fn new(grid: usize) -> Self {
        assert!(grid > 0, "grid must be positive");
        Self { grid }
    }

    pub fn grid(&self) -> usize {
        self.grid
    }
}

/// Pixel spans per cell along one axis. Cells that contain no pixel center
/// borrow the span of the nearest non-empty cell (lower index on ties).
fn cell_spans(lo: f64, hi: f64, cells: usize, limit: u32) -> Vec<(u32, u32)> {
    let step = (hi - lo) / cells as f64;
    let raw: Vec<(u32, u32)> = (0..cells)
        .map(|k| {
            let a = lo + step * k as f64;
            let b = if k + 1 == cells { hi } else { lo + step * (k + 1) as f64 };
            pixel_span(a, b, limit)
        })
        .collect();
    let non_empty: Vec<usize> = (0..cells).filter(|&k| raw[k].0 < raw[k].1).collect();
    if non_empty.is_empty() {
        // Thinner than one pixel center: use the pixel holding the midpoint.
        let c = (0.5 * (lo + hi)).floor().clamp(0.0, (limit - 1) as f64) as u32;
        return vec![(c, c + 1); cells];
    }
    (0..cells)
        .map(|k| {
            let nearest = non_empty
                .iter()
                .min_by_key(|&&j| (j as isize - k as isize).unsigned_abs())
                .copied()
                .unwrap();
            raw[nearest]
        })
        .collect()
}

impl Featurizer for GridFeaturizer {
    fn dim(&self) -> usize {
        2 * self.grid * self.grid
    }

    fn extract(&self, raster: &Raster, window: &Window) -> FeatureVector {
        let g = self.grid;
        let cols = cell_spans(window.x0(), window.x1(), g, raster.width());
        let rows = cell_spans(window.y0(), window.y1(), g, raster.height());
        let mut out = Vec::with_capacity(self.dim());
        for &(ya, yb) in &rows {
            for &(xa, xb) in &cols {
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                for y in ya..yb {
                    for &v in &raster.row(y)[xa as usize..xb as usize] {
                        min = min.min(v);
                        max = max.max(v);
                    }
                }
                // Accumulating offsets from the minimum keeps constant cells exact.
                let mut excess = 0.0;
                for y in ya..yb {
                    for &v in &raster.row(y)[xa as usize..xb as usize] {
                        excess += v - min;
                    }
                }
                let count = ((yb - ya) * (xb - xa)) as f64;
                out.push((min + excess / count).clamp(min, max));
                out.push(max);
            }
        }
        FeatureVector(out)
    }
}
