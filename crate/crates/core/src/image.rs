//! Grayscale image container and the row-major pixel indexing used everywhere.

use crate::error::{Error, Result};

/// A grayscale image stored row-major. Intensities are nominally in `[0, 1]`
/// but are not clamped here; clamping only happens on export.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Input(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::shape(
                format!("{} pixels ({height}x{width})", height * width),
                format!("{} pixels", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite intensity at pixel {i}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    /// Builds an image from a vector produced by an operator. Non-finite
    /// values are rejected like in [`Image::new`].
    pub fn from_vec_like(like: &Image, data: Vec<f64>) -> Result<Self> {
        Self::new(like.height, like.width, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn index_map(&self) -> PixelIndexMap {
        PixelIndexMap::new(self.height, self.width)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Copy with every intensity clamped to `[0, 1]`.
    pub fn clamped(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// Rectangular sub-image. Panics if the window leaves the image.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Image {
        assert!(row + height <= self.height && col + width <= self.width);
        Image::from_fn(height, width, |r, c| self.get(row + r, col + c))
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        Ok(())
    }
}

/// Bijection between linear indices `0..n` and `(row, col)` pixel
/// coordinates, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelIndexMap {
    height: usize,
    width: usize,
}

impl PixelIndexMap {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        debug_assert!(index < self.len());
        (index / self.width, index % self.width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_construction() {
        assert!(Image::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Image::new(0, 2, vec![]).is_err());
        assert!(Image::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(Image::new(1, 2, vec![0.0, 2.5]).is_ok());
    }

    #[test]
    fn clamp_only_on_request() {
        let img = Image::new(1, 3, vec![-0.5, 0.5, 1.5]).unwrap();
        assert_eq!(img.data(), &[-0.5, 0.5, 1.5]);
        assert_eq!(img.clamped().data(), &[0.0, 0.5, 1.0]);
    }

    proptest! {
        #[test]
        fn index_map_round_trips(h in 1usize..40, w in 1usize..40, seed in 0usize..10_000) {
            let map = PixelIndexMap::new(h, w);
            let i = seed % map.len();
            let (r, c) = map.coords(i);
            prop_assert!(r < h && c < w);
            prop_assert_eq!(map.index(r, c), i);
        }
    }
}
