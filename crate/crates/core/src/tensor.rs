//! Dense float containers: a rank-N [`Tensor`] for persistence, and the
//! [`Frame`] / [`Clip`] views the rest of the crate computes with.
//!
//! Frames are stored row-major as `[H, W, C]`; clips stack frames along a
//! leading time axis, giving the `[T+1, H, W, C]` layout used on disk.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, RfdmError};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(RfdmError::Shape(format!(
                "dims {:?} imply {} elements, got {}",
                dims,
                n,
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// One video frame, `[H, W, C]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Frame {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(RfdmError::Shape(format!(
                "frame {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn randn<R: Rng + ?Sized>(height: usize, width: usize, channels: usize, rng: &mut R) -> Self {
        let data = (0..height * width * channels)
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect();
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn zeros_like(other: &Frame) -> Self {
        Self::zeros(other.height, other.width, other.channels)
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize, c: usize) -> &mut f32 {
        &mut self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn check_same_dims(&self, other: &Frame, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(RfdmError::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `a * self + b * other`, elementwise.
    pub fn lincomb(&self, a: f32, other: &Frame, b: f32) -> Frame {
        debug_assert_eq!(self.dims(), other.dims());
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&x, &y)| a * x + b * y)
            .collect();
        self.with_data(data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Frame {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    /// A frame with this frame's dims and the given values.
    pub fn with_data(&self, data: Vec<f32>) -> Frame {
        debug_assert_eq!(data.len(), self.data.len());
        Frame {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }

    pub fn scale(&self, a: f32) -> Frame {
        self.map(|v| a * v)
    }

    pub fn add(&self, other: &Frame) -> Frame {
        self.lincomb(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &Frame) -> Frame {
        self.lincomb(1.0, other, -1.0)
    }

    pub fn max_abs_diff(&self, other: &Frame) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn mean_sq_diff(&self, other: &Frame) -> f64 {
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = f64::from(a) - f64::from(b);
                d * d
            })
            .sum();
        s / self.data.len().max(1) as f64
    }
}

/// Frames `0..=T` of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub frames: Vec<Frame>,
}

impl Clip {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        if let Some(first) = frames.first() {
            for (t, f) in frames.iter().enumerate() {
                if f.dims() != first.dims() {
                    return Err(RfdmError::Shape(format!(
                        "frame {t} has dims {:?}, frame 0 has {:?}",
                        f.dims(),
                        first.dims()
                    )));
                }
            }
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `[H, W, C]` of every frame; `None` for an empty clip.
    pub fn frame_dims(&self) -> Option<[usize; 3]> {
        self.frames.first().map(Frame::dims)
    }

    pub fn to_tensor(&self) -> Tensor {
        let [h, w, c] = self.frame_dims().unwrap_or([0, 0, 0]);
        let mut data = Vec::with_capacity(self.frames.len() * h * w * c);
        for f in &self.frames {
            data.extend_from_slice(&f.data);
        }
        Tensor {
            dims: vec![self.frames.len(), h, w, c],
            data,
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.dims.len() != 4 {
            return Err(RfdmError::Shape(format!(
                "clip tensor must be rank 4 [T+1,H,W,C], got {:?}",
                t.dims
            )));
        }
        let (n, h, w, c) = (t.dims[0], t.dims[1], t.dims[2], t.dims[3]);
        let per = h * w * c;
        let frames = (0..n)
            .map(|i| Frame {
                height: h,
                width: w,
                channels: c,
                data: t.data[i * per..(i + 1) * per].to_vec(),
            })
            .collect();
        Ok(Self { frames })
    }

    pub fn prefix(&self, len: usize) -> Clip {
        Clip {
            frames: self.frames[..len.min(self.frames.len())].to_vec(),
        }
    }
}
