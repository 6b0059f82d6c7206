//! Per-pixel probability and label maps.

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Height × width map of person probabilities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMask {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ProbMask {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(
                "ProbMask::new",
                format!("{} values for {height}x{width}", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invalid(format!(
                "probability {} at index {i} is outside [0, 1]",
                data[i]
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("value in [0, 1]")
    }

    /// Takes channel 0 of a single-channel tensor.
    pub fn from_tensor(t: &ImageTensor<f32>) -> Result<Self> {
        if t.channels() != 1 {
            return Err(Error::shape(
                "ProbMask::from_tensor",
                format!("expected 1 channel, got {}", t.channels()),
            ));
        }
        Self::new(t.height(), t.width(), t.plane(0).to_vec())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn to_tensor(&self) -> ImageTensor<f32> {
        ImageTensor::new(1, self.height, self.width, self.data.clone()).expect("dims match")
    }

    pub fn flip_horizontal(&self) -> Self {
        let t = self.to_tensor().flip_horizontal();
        Self::from_tensor(&t).expect("flip keeps range")
    }
}

/// Height × width map of `{0, 1}` labels; 1 is the person class.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(
                "BinaryMask::new",
                format!("{} values for {height}x{width}", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::Invalid(format!("label {} at index {i} is not 0 or 1", data[i])));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x) as u8);
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn invert(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        let w = self.width;
        Self::from_fn(self.height, w, |y, x| self.get(y, w - 1 - x))
    }

    /// Labels as a single-channel `0.0 / 1.0` tensor (training targets).
    pub fn to_tensor(&self) -> ImageTensor<f32> {
        ImageTensor::new(
            1,
            self.height,
            self.width,
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("dims match")
    }
}
