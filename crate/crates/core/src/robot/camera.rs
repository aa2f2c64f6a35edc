//! Occupancy grid camera.
//!
//! The view is a square of half-size `reach + CAMERA_MARGIN` centered on the
//! robot base, y up. Cell `(col, row)` has its center at
//! `x = -E + (col + 0.5)·2E/w`, `y = E - (row + 0.5)·2E/h` and is stored at
//! `row·w + col`. A cell is 1.0 when a link segment (half-width
//! [`LINK_HALF_WIDTH`]) covers its center, `(color_index + 1) / PALETTE_SIZE`
//! when a disc covers it, 0 otherwise; overlapping primitives take the max.

use crate::geom::{segment_dist_sq, Vec2};
use crate::sim::PALETTE_SIZE;

pub const CAMERA_MARGIN: f64 = 0.1;
pub const LINK_HALF_WIDTH: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraView {
    pub width: usize,
    pub height: usize,
    pub half_extent: f64,
}

/// A disc as seen by the camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscShape {
    pub center: Vec2<f64>,
    pub radius: f64,
    pub color_index: u8,
}

pub fn disc_shade(color_index: u8) -> f64 {
    f64::from(color_index % PALETTE_SIZE + 1) / f64::from(PALETTE_SIZE)
}

impl CameraView {
    pub fn new(width: usize, height: usize, reach: f64) -> Self {
        Self { width, height, half_extent: reach + CAMERA_MARGIN }
    }

    fn cell_w(&self) -> f64 {
        2.0 * self.half_extent / self.width as f64
    }

    fn cell_h(&self) -> f64 {
        2.0 * self.half_extent / self.height as f64
    }

    pub fn cell_center(&self, col: usize, row: usize) -> Vec2<f64> {
        Vec2::new(
            -self.half_extent + (col as f64 + 0.5) * self.cell_w(),
            self.half_extent - (row as f64 + 0.5) * self.cell_h(),
        )
    }

    /// Column/row index ranges whose centers may fall inside the box
    /// `[min, max]`, padded by one cell.
    fn cell_range(&self, min: Vec2<f64>, max: Vec2<f64>) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let col = |x: f64| ((x + self.half_extent) / self.cell_w() - 0.5).floor();
        let row = |y: f64| ((self.half_extent - y) / self.cell_h() - 0.5).floor();
        let clamp = |v: f64, n: usize| v.max(0.0).min(n as f64) as usize;
        let c0 = clamp(col(min.x) - 1.0, self.width);
        let c1 = clamp(col(max.x) + 2.0, self.width);
        let r0 = clamp(row(max.y) - 1.0, self.height);
        let r1 = clamp(row(min.y) + 2.0, self.height);
        (c0..c1, r0..r1)
    }

    /// Rasterizes link segments (consecutive `frames`) and discs into `out`.
    pub fn render_into(&self, frames: &[Vec2<f64>], discs: &[DiscShape], out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.width * self.height, 0.0);
        let hw2 = LINK_HALF_WIDTH * LINK_HALF_WIDTH;
        for seg in frames.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let pad = Vec2::new(LINK_HALF_WIDTH, LINK_HALF_WIDTH);
            let min = Vec2::new(a.x.min(b.x), a.y.min(b.y)) - pad;
            let max = Vec2::new(a.x.max(b.x), a.y.max(b.y)) + pad;
            let (cols, rows) = self.cell_range(min, max);
            for row in rows {
                for col in cols.clone() {
                    if segment_dist_sq(self.cell_center(col, row), a, b) <= hw2 {
                        out[row * self.width + col] = 1.0;
                    }
                }
            }
        }
        for d in discs {
            let shade = disc_shade(d.color_index);
            let r = Vec2::new(d.radius, d.radius);
            let (cols, rows) = self.cell_range(d.center - r, d.center + r);
            let r2 = d.radius * d.radius;
            for row in rows {
                for col in cols.clone() {
                    if (self.cell_center(col, row) - d.center).norm_sq() <= r2 {
                        let cell = &mut out[row * self.width + col];
                        *cell = cell.max(shade);
                    }
                }
            }
        }
    }

    pub fn render(&self, frames: &[Vec2<f64>], discs: &[DiscShape]) -> Vec<f64> {
        let mut out = Vec::new();
        self.render_into(frames, discs, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disc_near_edge_does_not_overflow() {
        let cam = CameraView::new(16, 8, 1.0);
        let disc = DiscShape { center: Vec2::new(1.09, -1.09), radius: 0.3, color_index: 7 };
        let img = cam.render(&[], &[disc]);
        assert_eq!(img.len(), 128);
        assert!(img.contains(&1.0));
        assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn link_drawn_at_full_intensity() {
        let cam = CameraView::new(84, 84, 1.0);
        let frames = [Vec2::zero(), Vec2::new(1.0, 0.0)];
        let img = cam.render(&frames, &[]);
        let lit = img.iter().filter(|&&v| v == 1.0).count();
        assert!(lit > 0);
        assert_eq!(img.iter().filter(|&&v| v > 0.0).count(), lit);
    }
}
