//! Rectangular pixel grid, vector-valued fields, forward differences and the
//! matching divergence.
//!
//! Layout: pixel `(x, y)` has linear index `y * width + x`; channel `c` of an
//! image lives at `pixel * channels + c`. A gradient stores `2 * channels`
//! entries per pixel ordered `[∂x u_0, ∂y u_0, ∂x u_1, ∂y u_1, ...]`, which is
//! the per-pixel `2 × N` matrix `Z` flattened channel-major.

use serde::Serialize;

use crate::densities::DataTermProfile;
use crate::error::{Error, Result};
use crate::scalar::{norm, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GridShape {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl GridShape {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidConfig(format!(
                "grid dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        Ok(Self { width, height, channels })
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn len(&self) -> usize {
        self.pixels() * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries per pixel of a gradient field.
    pub fn grad_stride(&self) -> usize {
        2 * self.channels
    }
}

fn check_spacing<T: Scalar>(spacing: T) -> Result<()> {
    if spacing.is_finite() && spacing > T::zero() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("grid spacing must be positive, got {spacing}")))
    }
}

/// Vector-valued image `u: Ω → R^N` sampled on the pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageField<T> {
    shape: GridShape,
    spacing: T,
    values: Vec<T>,
}

impl<T: Scalar> ImageField<T> {
    pub fn new(width: usize, height: usize, channels: usize, spacing: T, values: Vec<T>) -> Result<Self> {
        let shape = GridShape::new(width, height, channels)?;
        check_spacing(spacing)?;
        if values.len() != shape.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for {width}x{height}x{channels}, got {}",
                shape.len(),
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite value at index {bad}")));
        }
        Ok(Self { shape, spacing, values })
    }

    pub fn zeros(width: usize, height: usize, channels: usize, spacing: T) -> Result<Self> {
        Self::new(width, height, channels, spacing, vec![T::zero(); width * height * channels])
    }

    /// Every pixel set to `color` (one value per channel).
    pub fn constant(width: usize, height: usize, spacing: T, color: &[T]) -> Result<Self> {
        let values = color.iter().copied().cycle().take(width * height * color.len()).collect();
        Self::new(width, height, color.len(), spacing, values)
    }

    /// Same grid, new values.
    pub fn with_values(&self, values: Vec<T>) -> Result<Self> {
        Self::new(self.shape.width, self.shape.height, self.shape.channels, self.spacing, values)
    }

    pub(crate) fn from_parts_unchecked(shape: GridShape, spacing: T, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), shape.len());
        Self { shape, spacing, values }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn spacing(&self) -> T {
        self.spacing
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn pixel(&self, index: usize) -> &[T] {
        let c = self.shape.channels;
        &self.values[index * c..(index + 1) * c]
    }

    pub fn get(&self, x: usize, y: usize, channel: usize) -> T {
        self.values[(y * self.shape.width + x) * self.shape.channels + channel]
    }

    /// Area element `h²` of one pixel.
    pub fn cell_area(&self) -> T {
        self.spacing * self.spacing
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.shape == other.shape && self.spacing == other.spacing
    }

    pub(crate) fn require_same_grid(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{what}: {:?} h={} vs {:?} h={}",
                self.shape, self.spacing, other.shape, other.spacing
            )))
        }
    }

    /// Sum of `a * self + b * other`, checked for matching grids.
    pub fn lin_comb(&self, a: T, other: &Self, b: T) -> Result<Self> {
        self.require_same_grid(other, "linear combination")?;
        let values = self.values.iter().zip(&other.values).map(|(&x, &y)| a * x + b * y).collect();
        Ok(Self::from_parts_unchecked(self.shape, self.spacing, values))
    }

    /// Euclidean inner product of the raw value vectors.
    pub fn inner(&self, other: &Self) -> T {
        self.values.iter().zip(&other.values).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
    }
}

/// Forward differences of an image: `2N` entries per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField<T> {
    shape: GridShape,
    spacing: T,
    values: Vec<T>,
}

impl<T: Scalar> GradientField<T> {
    pub fn new(width: usize, height: usize, channels: usize, spacing: T, values: Vec<T>) -> Result<Self> {
        let shape = GridShape::new(width, height, channels)?;
        check_spacing(spacing)?;
        if values.len() != shape.pixels() * shape.grad_stride() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} gradient entries, got {}",
                shape.pixels() * shape.grad_stride(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite gradient entry".into()));
        }
        Ok(Self { shape, spacing, values })
    }

    pub(crate) fn from_parts_unchecked(shape: GridShape, spacing: T, values: Vec<T>) -> Self {
        Self { shape, spacing, values }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn spacing(&self) -> T {
        self.spacing
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// The flattened `2 × N` matrix at pixel `index`.
    pub fn pixel(&self, index: usize) -> &[T] {
        let s = self.shape.grad_stride();
        &self.values[index * s..(index + 1) * s]
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[T]> {
        self.values.chunks_exact(self.shape.grad_stride())
    }

    /// Largest per-pixel Frobenius norm.
    pub fn max_pixel_norm(&self) -> T {
        self.pixels().fold(T::zero(), |acc, z| acc.max(norm(z)))
    }

    pub fn inner(&self, other: &Self) -> T {
        self.values.iter().zip(&other.values).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
    }
}

/// Inpainting region `D`: `true` marks a pixel whose data is missing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    missing: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, missing: Vec<bool>) -> Result<Self> {
        if missing.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} entries for a {width}x{height} grid",
                missing.len()
            )));
        }
        if missing.iter().all(|&m| m) {
            return Err(Error::Domain("mask covers every pixel; at least one pixel must be observed".into()));
        }
        Ok(Self { width, height, missing })
    }

    /// `D = ∅`: pure denoising.
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, missing: vec![false; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn is_missing(&self, index: usize) -> bool {
        self.missing[index]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.missing
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn observed(&self) -> impl Iterator<Item = usize> + '_ {
        self.missing.iter().enumerate().filter(|(_, &m)| !m).map(|(i, _)| i)
    }

    pub fn fits(&self, shape: GridShape) -> bool {
        self.width == shape.width && self.height == shape.height
    }
}

/// Forward differences with homogeneous Neumann boundary into `out`.
pub(crate) fn gradient_into<T: Scalar>(values: &[T], shape: GridShape, spacing: T, out: &mut [T]) {
    let GridShape { width, height, channels } = shape;
    let inv_h = T::one() / spacing;
    let stride = shape.grad_stride();
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            let base = p * channels;
            let g = &mut out[p * stride..(p + 1) * stride];
            for c in 0..channels {
                let here = values[base + c];
                g[2 * c] = if x + 1 < width { (values[base + channels + c] - here) * inv_h } else { T::zero() };
                g[2 * c + 1] =
                    if y + 1 < height { (values[base + width * channels + c] - here) * inv_h } else { T::zero() };
            }
        }
    }
}

/// `out = div q`, the negative adjoint of [`gradient_into`].
pub(crate) fn divergence_into<T: Scalar>(q: &[T], shape: GridShape, spacing: T, out: &mut [T]) {
    let GridShape { width, height, channels } = shape;
    let inv_h = T::one() / spacing;
    let stride = shape.grad_stride();
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            for c in 0..channels {
                let mut acc = T::zero();
                if x + 1 < width {
                    acc += q[p * stride + 2 * c];
                }
                if x > 0 {
                    acc -= q[(p - 1) * stride + 2 * c];
                }
                if y + 1 < height {
                    acc += q[p * stride + 2 * c + 1];
                }
                if y > 0 {
                    acc -= q[(p - width) * stride + 2 * c + 1];
                }
                out[p * channels + c] = acc * inv_h;
            }
        }
    }
}

pub fn gradient<T: Scalar>(u: &ImageField<T>) -> GradientField<T> {
    let shape = u.shape();
    let mut out = vec![T::zero(); shape.pixels() * shape.grad_stride()];
    gradient_into(u.values(), shape, u.spacing(), &mut out);
    GradientField::from_parts_unchecked(shape, u.spacing(), out)
}

/// Discrete divergence satisfying `<gradient(u), q> = -<u, divergence(q)>`.
pub fn divergence<T: Scalar>(q: &GradientField<T>) -> ImageField<T> {
    let shape = q.shape();
    let mut out = vec![T::zero(); shape.len()];
    divergence_into(q.values(), shape, q.spacing(), &mut out);
    ImageField::from_parts_unchecked(shape, q.spacing(), out)
}

/// `Σ_{x ∉ D} h² ω(|u(x) - u0(x)|)`.
pub fn masked_reduce<T: Scalar>(
    u: &ImageField<T>,
    u0: &ImageField<T>,
    mask: &Mask,
    profile: &DataTermProfile<T>,
) -> Result<T> {
    u.require_same_grid(u0, "masked_reduce")?;
    if !mask.fits(u.shape()) {
        return Err(Error::DimensionMismatch("mask does not match the image grid".into()));
    }
    Ok(masked_reduce_unchecked(u.values(), u0.values(), u.shape(), mask, profile) * u.cell_area())
}

// Unweighted sum; callers multiply by h².
pub(crate) fn masked_reduce_unchecked<T: Scalar>(
    u: &[T],
    u0: &[T],
    shape: GridShape,
    mask: &Mask,
    profile: &DataTermProfile<T>,
) -> T {
    let c = shape.channels;
    let mut acc = T::zero();
    for p in mask.observed() {
        let mut r2 = T::zero();
        for k in p * c..(p + 1) * c {
            let d = u[k] - u0[k];
            r2 += d * d;
        }
        acc += profile.value(r2.sqrt());
    }
    acc
}
