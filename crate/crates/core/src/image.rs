use crate::autodiff::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Interleaved `height x width x channels` image with samples nominally in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::contract(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::contract(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::contract(format!(
                "{height}x{width}x{channels} image needs {} samples, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from `f(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn clamped(mut self) -> Self {
        for v in &mut self.data {
            *v = v.max(T::zero()).min(T::one());
        }
        self
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::contract(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        Self::from_fn(height, width, self.channels, |y, x, c| {
            self.get(top + y, left + x, c)
        })
    }

    /// Single-item `(1, channels, height, width)` tensor view of the samples.
    pub fn to_tensor(&self) -> Tensor<T> {
        let shape = Shape::new(1, self.channels, self.height, self.width);
        let mut data = vec![T::zero(); shape.numel()];
        let plane = self.height * self.width;
        for (p, px) in self.data.chunks(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                data[c * plane + p] = v;
            }
        }
        Tensor::from_vec(shape, data).expect("sizes agree")
    }

    /// Image from batch item `b` of a tensor, clamped to [0, 1].
    pub fn from_tensor(t: &Tensor<T>, b: usize) -> Result<Self> {
        let s = t.shape();
        if b >= s.batch {
            return Err(Error::contract(format!("batch index {b} out of range for {s}")));
        }
        let item = &t.data()[b * s.item()..(b + 1) * s.item()];
        let plane = s.plane();
        Ok(Self::from_fn(s.height, s.width, s.channels, |y, x, c| {
            item[c * plane + y * s.width + x]
        })?
        .clamped())
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
        }
    }

    /// Counter-clockwise quarter turn.
    fn rot90(&self) -> Self {
        let (h, w) = (self.height, self.width);
        Self::from_fn(w, h, self.channels, |y, x, c| self.get(x, w - 1 - y, c)).expect("valid dims")
    }

    fn flip_horizontal(&self) -> Self {
        let w = self.width;
        Self::from_fn(self.height, w, self.channels, |y, x, c| self.get(y, w - 1 - x, c))
            .expect("valid dims")
    }

    pub fn transformed(&self, d: Dihedral) -> Self {
        let mut out = if d.flip { self.flip_horizontal() } else { self.clone() };
        for _ in 0..d.quarter_turns % 4 {
            out = out.rot90();
        }
        out
    }

    pub fn untransformed(&self, d: Dihedral) -> Self {
        let mut out = self.clone();
        for _ in 0..(4 - d.quarter_turns % 4) % 4 {
            out = out.rot90();
        }
        if d.flip {
            out = out.flip_horizontal();
        }
        out
    }
}

/// Element of the dihedral group of the square: optional horizontal flip
/// followed by counter-clockwise quarter turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dihedral {
    pub flip: bool,
    pub quarter_turns: u8,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        flip: false,
        quarter_turns: 0,
    };

    pub fn all() -> [Dihedral; 8] {
        let mut out = [Dihedral::IDENTITY; 8];
        for (i, d) in out.iter_mut().enumerate() {
            d.flip = i >= 4;
            d.quarter_turns = (i % 4) as u8;
        }
        out
    }
}
