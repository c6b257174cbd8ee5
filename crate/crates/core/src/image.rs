//! Image containers: two-channel event-count images and intensity images.

use crate::error::{Error, Result};
use crate::event::Polarity;

/// Unit tag for an intensity image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageUnit {
    /// Mean photon count lambda per sampling interval.
    PhotonCount,
    /// Display gray levels (integral values, 8- or 16-bit range).
    GrayLevel,
}

/// Per-pixel non-negative real image with an explicit unit tag.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage {
    width: usize,
    height: usize,
    unit: ImageUnit,
    values: Vec<f64>,
}

impl IntensityImage {
    pub fn new(width: usize, height: usize, unit: ImageUnit, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation("image dimensions must be positive"));
        }
        if values.len() != width * height {
            return Err(Error::validation(format!(
                "value buffer has {} entries for a {width}x{height} image",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::validation(format!(
                "image values must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self {
            width,
            height,
            unit,
            values,
        })
    }

    pub fn constant(width: usize, height: usize, unit: ImageUnit, value: f64) -> Result<Self> {
        Self::new(width, height, unit, vec![value; width * height])
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn unit(&self) -> ImageUnit {
        self.unit
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Two-channel per-pixel event counts over an aggregation window.
///
/// An optional validity mask supports masked aggregation: pixels marked
/// invalid carry no usable counts and are skipped by reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct CountImage {
    width: usize,
    height: usize,
    window: f64,
    pos: Vec<u32>,
    neg: Vec<u32>,
    invalid: Option<Vec<bool>>,
}

impl CountImage {
    pub fn zeros(width: usize, height: usize, window: f64) -> Result<Self> {
        Self::new(width, height, window, vec![0; width * height], vec![0; width * height])
    }

    pub fn new(
        width: usize,
        height: usize,
        window: f64,
        pos: Vec<u32>,
        neg: Vec<u32>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation("count image dimensions must be positive"));
        }
        if !(window > 0.0) || !window.is_finite() {
            return Err(Error::validation(format!(
                "count window must be positive, got {window}"
            )));
        }
        if pos.len() != width * height || neg.len() != width * height {
            return Err(Error::validation(
                "count channels must both match the image dimensions",
            ));
        }
        Ok(Self {
            width,
            height,
            window,
            pos,
            neg,
            invalid: None,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn window(&self) -> f64 {
        self.window
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn channel(&self, polarity: Polarity) -> &[u32] {
        match polarity {
            Polarity::Pos => &self.pos,
            Polarity::Neg => &self.neg,
        }
    }

    #[inline]
    pub fn channel_mut(&mut self, polarity: Polarity) -> &mut [u32] {
        match polarity {
            Polarity::Pos => &mut self.pos,
            Polarity::Neg => &mut self.neg,
        }
    }

    /// Marks the given pixels invalid and zeroes their counts.
    pub fn set_invalid(&mut self, mask: &[bool]) -> Result<()> {
        if mask.len() != self.width * self.height {
            return Err(Error::validation("invalid-mask size mismatch"));
        }
        for (i, &m) in mask.iter().enumerate() {
            if m {
                self.pos[i] = 0;
                self.neg[i] = 0;
            }
        }
        self.invalid = Some(mask.to_vec());
        Ok(())
    }

    #[inline]
    pub fn is_valid(&self, idx: usize) -> bool {
        match &self.invalid {
            Some(m) => !m[idx],
            None => true,
        }
    }

    pub fn invalid_mask(&self) -> Option<&[bool]> {
        self.invalid.as_deref()
    }

    pub fn total(&self, polarity: Polarity) -> u64 {
        self.channel(polarity).iter().map(|&c| c as u64).sum()
    }

    /// One count channel viewed as a gray-level image (for 16-bit graymap output).
    pub fn channel_as_gray(&self, polarity: Polarity) -> Result<IntensityImage> {
        let ch = self.channel(polarity);
        if let Some(&c) = ch.iter().find(|&&c| c > u16::MAX as u32) {
            return Err(Error::validation(format!(
                "count {c} exceeds the 16-bit graymap range"
            )));
        }
        IntensityImage::new(
            self.width,
            self.height,
            ImageUnit::GrayLevel,
            ch.iter().map(|&c| c as f64).collect(),
        )
    }
}
