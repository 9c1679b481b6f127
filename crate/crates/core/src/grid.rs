//! Dense 2-D float grid used for images, masks, and image channels.

use crate::error::{Error, Result};

/// Row-major 2-D matrix of f64 intensities.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Grid {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::ShapeMismatch(format!(
                "grid {}x{} needs {} values, got {}",
                h,
                w,
                h * w,
                data.len()
            )));
        }
        Ok(Grid { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Grid {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn filled(h: usize, w: usize, v: f64) -> Self {
        Grid {
            h,
            w,
            data: vec![v; h * w],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.w + x] = v;
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.h == other.h && self.w == other.w
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Clamped get used by resamplers: coordinates outside the grid read the
    /// nearest edge pixel.
    #[inline]
    pub fn get_clamped(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.get(y, x)
    }

    /// Bilinear sample at fractional coordinates with edge clamping.
    pub fn sample_bilinear(&self, y: f64, x: f64) -> f64 {
        let y0 = y.floor();
        let x0 = x.floor();
        let fy = y - y0;
        let fx = x - x0;
        let y0 = y0 as isize;
        let x0 = x0 as isize;
        let v00 = self.get_clamped(y0, x0);
        let v01 = self.get_clamped(y0, x0 + 1);
        let v10 = self.get_clamped(y0 + 1, x0);
        let v11 = self.get_clamped(y0 + 1, x0 + 1);
        v00 * (1.0 - fy) * (1.0 - fx)
            + v01 * (1.0 - fy) * fx
            + v10 * fy * (1.0 - fx)
            + v11 * fy * fx
    }
}
