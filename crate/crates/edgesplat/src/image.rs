//! Image buffers.
//!
//! [`EdgeImage`] is the supervision/render target: a monochrome f64 image
//! whose values are guaranteed finite and within `[0, 1]`. [`ScalarField`]
//! is an unconstrained f64 grid (depth maps, Sobel magnitudes), and
//! [`NormalMap`] stores per-pixel 3-vectors.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Monochrome edge image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeImage {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl EdgeImage {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; (width as usize) * (height as usize)],
        }
    }

    /// Wraps row-major data, validating the `[0, 1]` range invariant.
    pub fn from_data(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if data.len() != (width as usize) * (height as usize) {
            return Err(Error::contract(format!(
                "image data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!(
                "edge image value {bad} outside [0,1] or non-finite"
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn idx(&self, x: u32, y: u32) -> usize {
        (y as usize) * (self.width as usize) + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[self.idx(x, y)]
    }

    #[inline]
    pub fn get_flat(&self, i: usize) -> f64 {
        self.data[i]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        debug_assert!((0.0..=1.0).contains(&v), "edge image value {v} outside [0,1]");
        let i = self.idx(x, y);
        self.data[i] = v;
    }

    #[inline]
    pub fn set_flat(&mut self, i: usize, v: f64) {
        debug_assert!((0.0..=1.0).contains(&v), "edge image value {v} outside [0,1]");
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Largest absolute per-pixel difference between two same-sized images.
    pub fn max_abs_diff(&self, other: &EdgeImage) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "image size mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Unconstrained scalar grid (depth maps, filter responses).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; (width as usize) * (height as usize)],
        }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if data.len() != (width as usize) * (height as usize) {
            return Err(Error::contract(format!(
                "field data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("scalar field contains non-finite values"));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[(y as usize) * (self.width as usize) + x as usize]
    }

    /// Read with replicate (clamp-to-edge) padding; `x`/`y` may be negative
    /// or past the border.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> f64 {
        let xc = x.clamp(0, self.width as i64 - 1) as usize;
        let yc = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[yc * self.width as usize + xc]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        self.data[(y as usize) * (self.width as usize) + x as usize] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Converts to an [`EdgeImage`], verifying the `[0,1]` invariant.
    pub fn into_edge_image(self) -> Result<EdgeImage> {
        EdgeImage::from_data(self.width, self.height, self.data)
    }
}

/// Per-pixel 3-vector grid (normal maps; components conventionally in [-1,1]).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    width: u32,
    height: u32,
    data: Vec<Vector3<f64>>,
}

impl NormalMap {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![Vector3::zeros(); (width as usize) * (height as usize)],
        }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<Vector3<f64>>) -> Result<Self> {
        if data.len() != (width as usize) * (height as usize) {
            return Err(Error::contract(format!(
                "normal map length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::contract("normal map contains non-finite values"));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Vector3<f64> {
        self.data[(y as usize) * (self.width as usize) + x as usize]
    }

    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> Vector3<f64> {
        let xc = x.clamp(0, self.width as i64 - 1) as usize;
        let yc = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[yc * self.width as usize + xc]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: Vector3<f64>) {
        self.data[(y as usize) * (self.width as usize) + x as usize] = v;
    }
}
