//! Single-channel image batches stored contiguously in `[image][row][col]` order.

use serde::{Deserialize, Serialize};

use crate::loss::LossError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageBatch {
    len: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageBatch {
    pub fn new(len: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self, LossError> {
        if data.len() != len * height * width {
            return Err(LossError::Dimension {
                expected: len * height * width,
                found: data.len(),
            });
        }
        Ok(Self {
            len,
            height,
            width,
            data,
        })
    }

    pub fn zeros(len: usize, height: usize, width: usize) -> Self {
        Self {
            len,
            height,
            width,
            data: vec![0.0; len * height * width],
        }
    }

    pub fn filled(len: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            len,
            height,
            width,
            data: vec![value; len * height * width],
        }
    }

    /// Builds a batch from equally sized images.
    pub fn from_images(height: usize, width: usize, images: &[Vec<f64>]) -> Result<Self, LossError> {
        let mut data = Vec::with_capacity(images.len() * height * width);
        for img in images {
            if img.len() != height * width {
                return Err(LossError::Dimension {
                    expected: height * width,
                    found: img.len(),
                });
            }
            data.extend_from_slice(img);
        }
        Self::new(images.len(), height, width, data)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels_per_image(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.len, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn image(&self, index: usize) -> &[f64] {
        let n = self.pixels_per_image();
        &self.data[index * n..(index + 1) * n]
    }

    pub fn image_mut(&mut self, index: usize) -> &mut [f64] {
        let n = self.pixels_per_image();
        &mut self.data[index * n..(index + 1) * n]
    }

    pub fn images(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on 0, which only happens for 0-pixel images
        let n = self.pixels_per_image().max(1);
        self.data.chunks_exact(n).take(self.len)
    }

    /// New batch holding the images at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.pixels_per_image());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Self {
            len: indices.len(),
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            len: self.len,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_shape(&self, other: &ImageBatch) -> Result<(), LossError> {
        if self.shape() != other.shape() {
            return Err(LossError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }
}

/// Discrete 4-neighbour Laplacian over the interior of an `h`×`w` image.
/// Images smaller than 3×3 have no interior and yield an empty vector.
pub fn laplacian_interior(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    if h < 3 || w < 3 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity((h - 2) * (w - 2));
    for i in 1..h - 1 {
        for j in 1..w - 1 {
            let c = img[i * w + j];
            out.push(
                img[(i - 1) * w + j] + img[(i + 1) * w + j] + img[i * w + j - 1] + img[i * w + j + 1]
                    - 4.0 * c,
            );
        }
    }
    out
}

/// Population variance; 0 for an empty slice.
pub fn variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Sum of absolute horizontal and vertical first differences.
pub fn total_variation_sum(img: &[f64], h: usize, w: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..h {
        for j in 0..w {
            let v = img[i * w + j];
            if j + 1 < w {
                acc += (img[i * w + j + 1] - v).abs();
            }
            if i + 1 < h {
                acc += (img[(i + 1) * w + j] - v).abs();
            }
        }
    }
    acc
}
