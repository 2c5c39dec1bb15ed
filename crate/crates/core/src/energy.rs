//! Discrete energies
//!
//! `K_δ[u] = Σ h² F(∇u) + Σ_{x∉D} h² ω(|u - u0|) + (δ/2) Σ h² |∇u|²`.
//!
//! With `δ = 0` this is the linear-growth functional for an `ω` fidelity, or the
//! quadratic-fidelity functional when the profile is `(λ/2) t²`. All sums are
//! midpoint sums over pixels, evaluated in a fixed sequential order.

use serde::Serialize;

use crate::densities::{DataTermProfile, Density};
use crate::error::{Error, Result};
use crate::grid::{self, GradientField, GridShape, ImageField, Mask};
use crate::scalar::{dot, norm, Scalar};

/// Density, data term, observations and inpainting region.
#[derive(Debug, Clone)]
pub struct Problem<T> {
    pub density: Density<T>,
    pub data: DataTermProfile<T>,
    pub u0: ImageField<T>,
    pub mask: Mask,
}

impl<T: Scalar> Problem<T> {
    pub fn new(density: Density<T>, data: DataTermProfile<T>, u0: ImageField<T>, mask: Mask) -> Result<Self> {
        if !mask.fits(u0.shape()) {
            return Err(Error::DimensionMismatch(format!(
                "mask is {}x{}, data is {}x{}",
                mask.width(),
                mask.height(),
                u0.width(),
                u0.height()
            )));
        }
        Ok(Self { density, data, u0, mask })
    }

    /// Pure denoising problem (`D = ∅`).
    pub fn denoising(density: Density<T>, data: DataTermProfile<T>, u0: ImageField<T>) -> Self {
        let mask = Mask::empty(u0.width(), u0.height());
        Self { density, data, u0, mask }
    }

    pub fn shape(&self) -> GridShape {
        self.u0.shape()
    }

    pub fn spacing(&self) -> T {
        self.u0.spacing()
    }

    fn check_field(&self, u: &ImageField<T>) -> Result<()> {
        u.require_same_grid(&self.u0, "iterate vs data")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown<T> {
    pub regularizer: T,
    pub fidelity: T,
    pub tikhonov: T,
    pub total: T,
}

impl<T: Scalar> EnergyBreakdown<T> {
    fn from_parts(regularizer: T, fidelity: T, tikhonov: T) -> Self {
        Self { regularizer, fidelity, tikhonov, total: regularizer + fidelity + tikhonov }
    }
}

fn check_delta<T: Scalar>(delta: T) -> Result<()> {
    if delta.is_finite() && delta >= T::zero() {
        Ok(())
    } else {
        Err(Error::Domain(format!("delta must be finite and >= 0, got {delta}")))
    }
}

/// Evaluates `K_δ`, its gradient and Hessian products with reusable scratch
/// buffers. One evaluator belongs to one solve.
pub(crate) struct Evaluator<'a, T> {
    problem: &'a Problem<T>,
    delta: T,
    grad_buf: Vec<T>,
    flux_buf: Vec<T>,
    dir_buf: Vec<T>,
}

/// Energy, gradient of the energy and the largest dual-variable norm.
pub(crate) struct Evaluation<T> {
    pub energy: EnergyBreakdown<T>,
    pub max_sigma: T,
}

impl<'a, T: Scalar> Evaluator<'a, T> {
    pub fn new(problem: &'a Problem<T>, delta: T) -> Self {
        let shape = problem.shape();
        let glen = shape.pixels() * shape.grad_stride();
        Self { problem, delta, grad_buf: vec![T::zero(); glen], flux_buf: vec![T::zero(); glen], dir_buf: vec![T::zero(); glen] }
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    /// Energy only. Leaves the cached `∇u` of the last gradient evaluation intact.
    pub fn energy(&mut self, u: &[T]) -> EnergyBreakdown<T> {
        let p = self.problem;
        let shape = p.shape();
        let area = p.spacing() * p.spacing();
        grid::gradient_into(u, shape, p.spacing(), &mut self.dir_buf);
        let mut reg = T::zero();
        let mut sq = T::zero();
        for z in self.dir_buf.chunks_exact(shape.grad_stride()) {
            let t2 = dot(z, z);
            reg += p.density.profile(t2.sqrt());
            sq += t2;
        }
        let fid = grid::masked_reduce_unchecked(u, p.u0.values(), shape, &p.mask, &p.data);
        EnergyBreakdown::from_parts(reg * area, fid * area, self.delta / T::lit(2.0) * sq * area)
    }

    /// Energy and its gradient (written to `out`) in one sweep.
    pub fn value_and_gradient(&mut self, u: &[T], out: &mut [T]) -> Evaluation<T> {
        let p = self.problem;
        let shape = p.shape();
        let h = p.spacing();
        let area = h * h;
        let stride = shape.grad_stride();
        grid::gradient_into(u, shape, h, &mut self.grad_buf);
        let mut reg = T::zero();
        let mut sq = T::zero();
        let mut max_sigma = T::zero();
        for (z, flux) in self.grad_buf.chunks_exact(stride).zip(self.flux_buf.chunks_exact_mut(stride)) {
            let t2 = dot(z, z);
            let t = t2.sqrt();
            reg += p.density.profile(t);
            sq += t2;
            max_sigma = max_sigma.max(p.density.profile_deriv(t));
            let scale = p.density.profile_ratio(t) + self.delta;
            for (f, &zi) in flux.iter_mut().zip(z) {
                *f = scale * zi;
            }
        }
        grid::divergence_into(&self.flux_buf, shape, h, out);
        for o in out.iter_mut() {
            *o = -*o * area;
        }
        let fid = self.add_fidelity_gradient(u, out);
        Evaluation {
            energy: EnergyBreakdown::from_parts(reg * area, fid * area, self.delta / T::lit(2.0) * sq * area),
            max_sigma,
        }
    }

    // Adds h² ω'(t) (u - u0)/t on observed pixels; returns the unweighted fidelity.
    fn add_fidelity_gradient(&self, u: &[T], out: &mut [T]) -> T {
        let p = self.problem;
        let c = p.shape().channels;
        let area = p.spacing() * p.spacing();
        let u0 = p.u0.values();
        let mut fid = T::zero();
        for px in p.mask.observed() {
            let range = px * c..(px + 1) * c;
            let t = residual_norm(u, u0, range.clone());
            fid += p.data.value(t);
            let ratio = p.data.ratio(t) * area;
            for k in range {
                out[k] += ratio * (u[k] - u0[k]);
            }
        }
        fid
    }

    /// Hessian-vector product `out = ∇²K_δ[u] v`.
    ///
    /// Expects `grad_buf` to hold `∇u` from the last gradient evaluation at `u`.
    pub fn hessian_apply(&mut self, u: &[T], v: &[T], out: &mut [T]) {
        let p = self.problem;
        let shape = p.shape();
        let h = p.spacing();
        let area = h * h;
        let stride = shape.grad_stride();
        grid::gradient_into(v, shape, h, &mut self.dir_buf);
        for ((z, x), f) in self
            .grad_buf
            .chunks_exact(stride)
            .zip(self.dir_buf.chunks_exact(stride))
            .zip(self.flux_buf.chunks_exact_mut(stride))
        {
            p.density.hessian_apply_into(z, x, f);
            for (fi, &xi) in f.iter_mut().zip(x) {
                *fi += self.delta * xi;
            }
        }
        grid::divergence_into(&self.flux_buf, shape, h, out);
        for o in out.iter_mut() {
            *o = -*o * area;
        }
        let c = shape.channels;
        let u0 = p.u0.values();
        for px in p.mask.observed() {
            let range = px * c..(px + 1) * c;
            let t = residual_norm(u, u0, range.clone());
            let ratio = p.data.ratio(t);
            let second = p.data.second(t);
            let along = if t > T::zero() {
                range.clone().fold(T::zero(), |acc, k| acc + (u[k] - u0[k]) * v[k]) / (t * t)
            } else {
                T::zero()
            };
            for k in range {
                out[k] += area * (ratio * v[k] + (second - ratio) * along * (u[k] - u0[k]));
            }
        }
    }

    /// Diagonal of the Hessian at the `u` last passed to `value_and_gradient`.
    pub fn hessian_diagonal(&self, u: &[T], out: &mut [T]) {
        let p = self.problem;
        let GridShape { width, height, channels } = p.shape();
        let stride = 2 * channels;
        let delta = self.delta;
        let density = &p.density;
        // Entry (i, j) of D²F(Z) + δI.
        let entry = |z: &[T], i: usize, j: usize| -> T {
            let t = norm(z);
            let tan = density.profile_ratio(t);
            let mut a = if i == j { tan + delta } else { T::zero() };
            if t > T::zero() {
                a += (density.profile_second(t) - tan) * z[i] * z[j] / (t * t);
            }
            a
        };
        for y in 0..height {
            for x in 0..width {
                let px = y * width + x;
                let here = &self.grad_buf[px * stride..(px + 1) * stride];
                for c in 0..channels {
                    let (ix, iy) = (2 * c, 2 * c + 1);
                    let has_x = x + 1 < width;
                    let has_y = y + 1 < height;
                    let mut d = T::zero();
                    if has_x {
                        d += entry(here, ix, ix);
                    }
                    if has_y {
                        d += entry(here, iy, iy);
                    }
                    if has_x && has_y {
                        d += T::lit(2.0) * entry(here, ix, iy);
                    }
                    if x > 0 {
                        let left = &self.grad_buf[(px - 1) * stride..px * stride];
                        d += entry(left, ix, ix);
                    }
                    if y > 0 {
                        let up = &self.grad_buf[(px - width) * stride..(px - width + 1) * stride];
                        d += entry(up, iy, iy);
                    }
                    // h² from the quadrature cancels 1/h² from the stencil.
                    out[px * channels + c] = d;
                }
            }
        }
        let area = p.spacing() * p.spacing();
        let u0 = p.u0.values();
        for px in p.mask.observed() {
            let range = px * channels..(px + 1) * channels;
            let t = residual_norm(u, u0, range.clone());
            let ratio = p.data.ratio(t);
            let second = p.data.second(t);
            for k in range {
                let ri = u[k] - u0[k];
                let along = if t > T::zero() { ri * ri / (t * t) } else { T::zero() };
                out[k] += area * (ratio + (second - ratio) * along);
            }
        }
    }
}

fn residual_norm<T: Scalar>(u: &[T], u0: &[T], range: std::ops::Range<usize>) -> T {
    range.fold(T::zero(), |acc, k| {
        let d = u[k] - u0[k];
        acc + d * d
    })
    .sqrt()
}

pub fn energy<T: Scalar>(p: &Problem<T>, u: &ImageField<T>, delta: T) -> Result<EnergyBreakdown<T>> {
    p.check_field(u)?;
    check_delta(delta)?;
    Ok(Evaluator::new(p, delta).energy(u.values()))
}

/// Gradient of [`energy`] with respect to the pixel values:
/// `-h² div(DF(∇u) + δ∇u) + h² ω'(|u-u0|) (u-u0)/|u-u0|` on observed pixels.
pub fn energy_gradient<T: Scalar>(p: &Problem<T>, u: &ImageField<T>, delta: T) -> Result<ImageField<T>> {
    p.check_field(u)?;
    check_delta(delta)?;
    let mut out = vec![T::zero(); u.values().len()];
    Evaluator::new(p, delta).value_and_gradient(u.values(), &mut out);
    Ok(ImageField::from_parts_unchecked(u.shape(), u.spacing(), out))
}

#[derive(Debug, Clone)]
pub struct DualVariable<T> {
    pub sigma: GradientField<T>,
    pub max_norm: T,
}

/// `σ = DF(∇u)` per pixel.
pub fn dual_variable<T: Scalar>(p: &Problem<T>, u: &ImageField<T>) -> Result<DualVariable<T>> {
    p.check_field(u)?;
    let g = grid::gradient(u);
    let stride = g.shape().grad_stride();
    let mut sigma = vec![T::zero(); g.values().len()];
    let mut max_norm = T::zero();
    for (z, s) in g.pixels().zip(sigma.chunks_exact_mut(stride)) {
        p.density.gradient_into(z, s);
        max_norm = max_norm.max(norm(s));
    }
    Ok(DualVariable { sigma: GradientField::from_parts_unchecked(g.shape(), g.spacing(), sigma), max_norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_problem(u0: [f64; 2]) -> Problem<f64> {
        let density = Density::mu_family(1.5).unwrap();
        let data = DataTermProfile::quadratic(1.0).unwrap();
        Problem::denoising(density, data, ImageField::new(2, 1, 1, 1.0, u0.to_vec()).unwrap())
    }

    #[test]
    fn constant_data_has_zero_energy_and_gradient() {
        let u0 = ImageField::constant(3, 3, 1.0, &[0.4, 0.1]).unwrap();
        let p = Problem::denoising(Density::minimal_surface(), DataTermProfile::linear_growth(0.5).unwrap(), u0.clone());
        let e = energy(&p, &u0, 0.1).unwrap();
        assert_eq!(e.total, 0.0);
        assert!(energy_gradient(&p, &u0, 0.1).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn line_problem_values() {
        let p = line_problem([0.0, 2.0]);
        let u = ImageField::new(2, 1, 1, 1.0, vec![0.0, 0.0]).unwrap();
        let e = energy(&p, &u, 0.0).unwrap();
        assert_eq!(e.regularizer, 0.0);
        assert!((e.total - 2.0).abs() < 1e-15);

        let u = u.with_values(vec![0.0, 3.0]).unwrap();
        let e = energy(&p, &u, 0.0).unwrap();
        assert!((e.regularizer - 2.0).abs() < 1e-14);
        assert!((e.fidelity - 0.5).abs() < 1e-15);
        assert!((e.total - 2.5).abs() < 1e-14);
        let e = energy(&p, &u, 0.5).unwrap();
        assert!((e.tikhonov - 0.25 * 9.0).abs() < 1e-14);
        assert!((e.total - (e.regularizer + e.fidelity + e.tikhonov)).abs() <= 1e-12 * e.total);
    }

    #[test]
    fn line_problem_gradient_at_zero() {
        let p = line_problem([0.0, 2.0]);
        let u = ImageField::new(2, 1, 1, 1.0, vec![0.0, 0.0]).unwrap();
        let g = energy_gradient(&p, &u, 0.0).unwrap();
        assert_eq!(g.values(), &[0.0, -2.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = line_problem([0.0, 2.0]);
        let u = ImageField::zeros(1, 2, 1, 1.0).unwrap();
        assert!(matches!(energy(&p, &u, 0.0), Err(Error::DimensionMismatch(_))));
        let u = ImageField::zeros(2, 1, 1, 1.0).unwrap();
        assert!(matches!(energy(&p, &u, -1.0), Err(Error::Domain(_))));
        assert!(energy_gradient(&p, &u, f64::NAN).is_err());
        let bad_mask = Mask::empty(3, 1);
        assert!(Problem::new(p.density, p.data, p.u0.clone(), bad_mask).is_err());
    }

    #[test]
    fn dual_variable_examples() {
        let p = line_problem([0.0, 2.0]);
        let c = ImageField::new(2, 1, 1, 1.0, vec![0.7, 0.7]).unwrap();
        assert_eq!(dual_variable(&p, &c).unwrap().max_norm, 0.0);
        let u = c.with_values(vec![0.0, 3.0]).unwrap();
        let s = dual_variable(&p, &u).unwrap();
        assert!((s.max_norm - 1.0).abs() < 1e-14);
        assert!((s.sigma.pixel(0)[0] - 1.0).abs() < 1e-14);
    }

    fn random_problem(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize, linear: bool, masked: bool) -> Problem<f64> {
        let u0 = ImageField::new(w, h, c, 0.5, (0..w * h * c).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let density = if rng.gen() { Density::minimal_surface() } else { Density::mu_family(rng.gen_range(1.1..2.5)).unwrap() };
        let data = if linear {
            DataTermProfile::linear_growth(rng.gen_range(0.1..1.0)).unwrap()
        } else {
            DataTermProfile::quadratic(rng.gen_range(0.5..10.0)).unwrap()
        };
        let mut missing: Vec<bool> = (0..w * h).map(|_| masked && rng.gen()).collect();
        missing[0] = false;
        Problem::new(density, data, u0, Mask::new(w, h, missing).unwrap()).unwrap()
    }

    #[test]
    fn hessian_products_match_gradient_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..8 {
            let p = random_problem(&mut rng, 5, 4, 2, case % 2 == 0, case % 4 < 2);
            let n = p.shape().len();
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..2.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let delta = 1e-2;
            let mut ev = Evaluator::new(&p, delta);
            let mut g = vec![0.0; n];
            ev.value_and_gradient(&u, &mut g);
            let mut hv = vec![0.0; n];
            ev.hessian_apply(&u, &v, &mut hv);
            let mut diag = vec![0.0; n];
            ev.hessian_diagonal(&u, &mut diag);

            let eps = 1e-6;
            let shifted = |s: f64| -> Vec<f64> {
                let w: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + s * b).collect();
                let mut out = vec![0.0; n];
                Evaluator::new(&p, delta).value_and_gradient(&w, &mut out);
                out
            };
            let (gp, gm) = (shifted(eps), shifted(-eps));
            for k in 0..n {
                let fd = (gp[k] - gm[k]) / (2.0 * eps);
                assert!((fd - hv[k]).abs() < 1e-6 * (1.0 + hv[k].abs()), "case {case} k {k}: {fd} vs {}", hv[k]);
            }
            // diagonal via unit vectors
            for k in 0..n {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                let mut col = vec![0.0; n];
                ev.hessian_apply(&u, &e, &mut col);
                assert!((col[k] - diag[k]).abs() < 1e-12 * (1.0 + diag[k].abs()), "diag {k}");
            }
        }
    }
}
