//! Binary portable pixmap (P6) heatmaps.
//!
//! Colormap: a value t in [0, 1] (counts divided by the map maximum) maps
//! linearly from white (255, 255, 255) at t = 0 to cyan (0, 160, 200) at
//! t = 1, each channel rounded to the nearest integer. Trajectories are drawn
//! in black. Row 0 is the top of the image, i.e. the largest z. Each grid row
//! is repeated `z_upscale` times so that anisotropic steps look square.

use crate::grid::ScanGrid;

const LOW: [f64; 3] = [255.0, 255.0, 255.0];
const HIGH: [f64; 3] = [0.0, 160.0, 200.0];
const INK: [u8; 3] = [0, 0, 0];

pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let mut px = [0u8; 3];
    for c in 0..3 {
        px[c] = (LOW[c] + (HIGH[c] - LOW[c]) * t).round() as u8;
    }
    px
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl Image {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(3 * self.pixels.len());
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }

    fn put(&mut self, col: i64, row: i64) {
        if col >= 0 && row >= 0 && (col as usize) < self.width && (row as usize) < self.height {
            self.pixels[row as usize * self.width + col as usize] = INK;
        }
    }

    fn line(&mut self, a: (i64, i64), b: (i64, i64)) {
        // Bresenham
        let (mut x, mut y) = a;
        let dx = (b.0 - a.0).abs();
        let dy = -(b.1 - a.1).abs();
        let sx = if a.0 < b.0 { 1 } else { -1 };
        let sy = if a.1 < b.1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.put(x, y);
            if (x, y) == b {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }
}

pub fn heatmap(grid: &ScanGrid, values: &[f64], z_upscale: usize) -> Image {
    let up = z_upscale.max(1);
    let max = values.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let (width, height) = (grid.nx, grid.nz * up);
    let mut pixels = Vec::with_capacity(width * height);
    for row in 0..height {
        let j = grid.nz - 1 - row / up;
        for i in 0..grid.nx {
            let v = values[grid.index(i, j)];
            pixels.push(colormap(if max > 0.0 { v / max } else { 0.0 }));
        }
    }
    Image { width, height, pixels }
}

/// Pixel holding the point (x, z).
fn pixel(grid: &ScanGrid, z_upscale: usize, p: (f64, f64)) -> (i64, i64) {
    let up = z_upscale.max(1) as f64;
    let col = ((p.0 - grid.x0) / grid.dx).round() as i64;
    let row = (((grid.z_max() - p.1) / grid.dz) * up + 0.5 * (up - 1.0)).round() as i64;
    (col, row)
}

pub fn draw_polyline(img: &mut Image, grid: &ScanGrid, z_upscale: usize, points: &[(f64, f64)]) {
    let px: Vec<(i64, i64)> = points.iter().map(|&p| pixel(grid, z_upscale, p)).collect();
    if px.len() == 1 {
        img.put(px[0].0, px[0].1);
    }
    for w in px.windows(2) {
        img.line(w[0], w[1]);
    }
}
