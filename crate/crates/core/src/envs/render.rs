//! Deterministic grayscale rasterization for the pixel families.
//!
//! Shapes are splatted with a one-pixel anti-aliasing ramp so sub-pixel
//! motion stays visible at small image sizes. Composition takes the max of
//! contributions, keeping every value in [0, 1] by construction. No RNG:
//! a pose renders to the same bytes every time.

/// Square grayscale canvas; values in [0, 1].
pub struct Canvas {
    pub size: usize,
    data: Vec<f64>,
}

impl Canvas {
    pub fn new(size: usize) -> Self {
        Canvas {
            size,
            data: vec![0.0; size * size],
        }
    }

    /// Map world coordinates in [−1, 1]² to pixel coordinates
    /// (x right, y up; pixel row 0 is the top).
    fn to_px(&self, x: f64, y: f64) -> (f64, f64) {
        let n = (self.size - 1) as f64;
        let px = (x + 1.0) / 2.0 * n;
        let py = (1.0 - (y + 1.0) / 2.0) * n;
        (px, py)
    }

    /// Splat an anti-aliased disk at world position (x, y) with radius in
    /// world units and the given intensity.
    pub fn disk(&mut self, x: f64, y: f64, world_radius: f64, intensity: f64) {
        let (cx, cy) = self.to_px(x, y);
        let r = world_radius * (self.size - 1) as f64 / 2.0;
        let lo_x = ((cx - r - 1.0).floor().max(0.0)) as usize;
        let hi_x = ((cx + r + 1.0).ceil().min((self.size - 1) as f64)) as usize;
        let lo_y = ((cy - r - 1.0).floor().max(0.0)) as usize;
        let hi_y = ((cy + r + 1.0).ceil().min((self.size - 1) as f64)) as usize;
        for py in lo_y..=hi_y {
            for px in lo_x..=hi_x {
                let dx = px as f64 - cx;
                let dy = py as f64 - cy;
                let d = (dx * dx + dy * dy).sqrt();
                // Linear 1-px coverage ramp across the disk boundary.
                let cov = (r + 0.5 - d).clamp(0.0, 1.0);
                let v = intensity * cov;
                let idx = py * self.size + px;
                if v > self.data[idx] {
                    self.data[idx] = v;
                }
            }
        }
    }

    /// One-pixel border frame at the given intensity (spatial reference).
    pub fn frame(&mut self, intensity: f64) {
        let n = self.size;
        for i in 0..n {
            for idx in [i, (n - 1) * n + i, i * n, i * n + n - 1] {
                if intensity > self.data[idx] {
                    self.data[idx] = intensity;
                }
            }
        }
    }

    /// Flattened channels-last observation (single channel).
    pub fn into_obs(self) -> Vec<f64> {
        self.data
    }
}
