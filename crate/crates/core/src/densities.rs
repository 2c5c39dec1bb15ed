//! Radial energy densities with linear growth and the data-term profiles.
//!
//! Every density here has the form `F(Z) = Φ(|Z|)` with `|Z|` the Frobenius
//! norm of the per-pixel gradient matrix. The `MuFamily` profile is the double
//! antiderivative of `(1 + r)^(-μ)`, so its second radial derivative is that
//! weight exactly and the Hessian lower bound `(1 + |Z|)^(-μ)` is attained along
//! the radial direction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityKind {
    MuFamily,
    MinimalSurface,
}

/// A convex, radial, linear-growth density with declared ellipticity exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Density<T> {
    kind: DensityKind,
    mu: T,
}

/// Analytic constants of the density: gradient bound `nu1` and the linear
/// lower bound `F(Z) >= nu2 |Z| - nu3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityConstants<T> {
    pub nu1: T,
    pub nu2: T,
    pub nu3: T,
}

const SERIES_CUTOFF: f64 = 1e-4;
const TANGENTIAL_CUTOFF: f64 = 1e-6;

fn check_mu<T: Scalar>(mu: T) -> Result<()> {
    if !(mu.is_finite() && mu > T::one()) {
        return Err(Error::Domain(format!("ellipticity exponent must exceed 1, got {mu}")));
    }
    Ok(())
}

fn check_radius<T: Scalar>(t: T) -> Result<()> {
    if !(t.is_finite() && t >= T::zero()) {
        return Err(Error::Domain(format!("radial argument must be finite and >= 0, got {t}")));
    }
    Ok(())
}

fn check_finite<T: Scalar>(z: &[T]) -> Result<()> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain("matrix has non-finite entries".into()))
    }
}

// Unchecked radial profile of the mu-family. Callers guarantee mu > 1, t >= 0.
fn mu_phi<T: Scalar>(mu: T, t: T) -> T {
    let one = T::one();
    if t < T::lit(SERIES_CUTOFF) {
        let t2 = t * t;
        return t2 * (T::lit(0.5) - mu * t / T::lit(6.0) + mu * (mu + one) * t2 / T::lit(24.0));
    }
    let log1p = t.ln_1p();
    if mu == T::lit(2.0) {
        return t - log1p;
    }
    let a = T::lit(2.0) - mu;
    let m1 = mu - one;
    t / m1 - (a * log1p).exp_m1() / (m1 * a)
}

fn mu_phi_deriv<T: Scalar>(mu: T, t: T) -> T {
    let m1 = mu - T::one();
    -((-m1) * t.ln_1p()).exp_m1() / m1
}

fn mu_phi_second<T: Scalar>(mu: T, t: T) -> T {
    (-mu * t.ln_1p()).exp()
}

// Phi'(t) / t, continuous at t = 0 where it equals Phi''(0) = 1.
fn mu_phi_ratio<T: Scalar>(mu: T, t: T) -> T {
    if t < T::lit(TANGENTIAL_CUTOFF) {
        T::one() - mu * t / T::lit(2.0)
    } else {
        mu_phi_deriv(mu, t) / t
    }
}

/// `Φ_μ(t) = ∫₀ᵗ∫₀ˢ (1 + r)^(-μ) dr ds`.
pub fn phi_value<T: Scalar>(mu: T, t: T) -> Result<T> {
    check_mu(mu)?;
    check_radius(t)?;
    Ok(mu_phi(mu, t))
}

/// `Φ'_μ(t) = (1 - (1 + t)^(1-μ)) / (μ - 1)`.
pub fn phi_deriv<T: Scalar>(mu: T, t: T) -> Result<T> {
    check_mu(mu)?;
    check_radius(t)?;
    Ok(mu_phi_deriv(mu, t))
}

/// `Φ''_μ(t) = (1 + t)^(-μ)`.
pub fn phi_second<T: Scalar>(mu: T, t: T) -> Result<T> {
    check_mu(mu)?;
    check_radius(t)?;
    Ok(mu_phi_second(mu, t))
}

impl<T: Scalar> Density<T> {
    pub fn mu_family(mu: T) -> Result<Self> {
        check_mu(mu)?;
        Ok(Self { kind: DensityKind::MuFamily, mu })
    }

    /// `F(Z) = sqrt(1 + |Z|²) - 1`, which is μ-elliptic with μ = 3.
    pub fn minimal_surface() -> Self {
        Self { kind: DensityKind::MinimalSurface, mu: T::lit(3.0) }
    }

    pub fn new(kind: DensityKind, mu: T) -> Result<Self> {
        match kind {
            DensityKind::MuFamily => Self::mu_family(mu),
            DensityKind::MinimalSurface => Ok(Self::minimal_surface()),
        }
    }

    pub fn kind(&self) -> DensityKind {
        self.kind
    }

    pub fn mu(&self) -> T {
        self.mu
    }

    pub fn constants(&self) -> DensityConstants<T> {
        match self.kind {
            DensityKind::MuFamily => {
                let nu1 = T::one() / (self.mu - T::one());
                let nu2 = nu1 / T::lit(2.0);
                // Tangent line at the point where the slope equals nu1 / 2.
                let t0 = T::lit(2.0).powf(nu1) - T::one();
                let nu3 = nu2 * t0 - mu_phi(self.mu, t0);
                DensityConstants { nu1, nu2, nu3 }
            }
            DensityKind::MinimalSurface => {
                DensityConstants { nu1: T::one(), nu2: T::one(), nu3: T::one() }
            }
        }
    }

    /// Radial profile `Φ(t)`.
    pub fn profile(&self, t: T) -> T {
        match self.kind {
            DensityKind::MuFamily => mu_phi(self.mu, t),
            DensityKind::MinimalSurface => {
                let s = (T::one() + t * t).sqrt();
                t * t / (s + T::one())
            }
        }
    }

    pub fn profile_deriv(&self, t: T) -> T {
        match self.kind {
            DensityKind::MuFamily => mu_phi_deriv(self.mu, t),
            DensityKind::MinimalSurface => t / (T::one() + t * t).sqrt(),
        }
    }

    pub fn profile_second(&self, t: T) -> T {
        match self.kind {
            DensityKind::MuFamily => mu_phi_second(self.mu, t),
            DensityKind::MinimalSurface => {
                let s = T::one() + t * t;
                T::one() / (s * s.sqrt())
            }
        }
    }

    /// `Φ'(t)/t`: the Hessian eigenvalue on directions orthogonal to `Z`.
    pub fn profile_ratio(&self, t: T) -> T {
        match self.kind {
            DensityKind::MuFamily => mu_phi_ratio(self.mu, t),
            DensityKind::MinimalSurface => T::one() / (T::one() + t * t).sqrt(),
        }
    }

    #[inline]
    pub fn value(&self, z: &[T]) -> T {
        self.profile(norm(z))
    }

    /// Writes `DF(Z) = Φ'(|Z|) Z/|Z|` into `out`.
    #[inline]
    pub fn gradient_into(&self, z: &[T], out: &mut [T]) {
        let scale = self.profile_ratio(norm(z));
        for (o, &zi) in out.iter_mut().zip(z) {
            *o = scale * zi;
        }
    }

    pub fn gradient(&self, z: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); z.len()];
        self.gradient_into(z, &mut out);
        out
    }

    /// Writes `D²F(Z) X` into `out`.
    pub fn hessian_apply_into(&self, z: &[T], x: &[T], out: &mut [T]) {
        let t = norm(z);
        let radial = self.profile_second(t);
        let tangential = self.profile_ratio(t);
        if t == T::zero() {
            for (o, &xi) in out.iter_mut().zip(x) {
                *o = radial * xi;
            }
            return;
        }
        let proj = dot(z, x) / (t * t);
        let diff = radial - tangential;
        for ((o, &xi), &zi) in out.iter_mut().zip(x).zip(z) {
            *o = tangential * xi + diff * proj * zi;
        }
    }

    /// Quadratic form `D²F(Z)(X, X)`.
    pub fn hessian_form(&self, z: &[T], x: &[T]) -> T {
        let t = norm(z);
        let xx = dot(x, x);
        if t == T::zero() {
            return self.profile_second(t) * xx;
        }
        let along = dot(z, x) / t;
        let along2 = along * along;
        let across2 = (xx - along2).max(T::zero());
        self.profile_second(t) * along2 + self.profile_ratio(t) * across2
    }
}

pub fn density_value<T: Scalar>(d: &Density<T>, z: &[T]) -> Result<T> {
    check_finite(z)?;
    Ok(d.value(z))
}

pub fn density_gradient<T: Scalar>(d: &Density<T>, z: &[T]) -> Result<Vec<T>> {
    check_finite(z)?;
    Ok(d.gradient(z))
}

pub fn density_hessian_form<T: Scalar>(d: &Density<T>, z: &[T], x: &[T]) -> Result<T> {
    check_finite(z)?;
    check_finite(x)?;
    if z.len() != x.len() {
        return Err(Error::DimensionMismatch(format!("Z has {} entries, X has {}", z.len(), x.len())));
    }
    Ok(d.hessian_form(z, x))
}

/// Fidelity profile applied to the pointwise residual norm `|u - u0|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataTermProfile<T> {
    /// `(λ/2) t²`
    Quadratic { lambda: T },
    /// `sqrt(β² + t²) - β`
    LinearGrowth { beta: T },
}

impl<T: Scalar> DataTermProfile<T> {
    pub fn quadratic(lambda: T) -> Result<Self> {
        if !(lambda.is_finite() && lambda > T::zero()) {
            return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self::Quadratic { lambda })
    }

    pub fn linear_growth(beta: T) -> Result<Self> {
        if !(beta.is_finite() && beta > T::zero()) {
            return Err(Error::Domain(format!("beta must be positive, got {beta}")));
        }
        Ok(Self::LinearGrowth { beta })
    }

    #[inline]
    pub fn value(&self, t: T) -> T {
        match *self {
            Self::Quadratic { lambda } => lambda * t * t / T::lit(2.0),
            Self::LinearGrowth { beta } => t * t / ((beta * beta + t * t).sqrt() + beta),
        }
    }

    #[inline]
    pub fn deriv(&self, t: T) -> T {
        match *self {
            Self::Quadratic { lambda } => lambda * t,
            Self::LinearGrowth { beta } => t / (beta * beta + t * t).sqrt(),
        }
    }

    #[inline]
    pub fn second(&self, t: T) -> T {
        match *self {
            Self::Quadratic { lambda } => lambda,
            Self::LinearGrowth { beta } => {
                let s = beta * beta + t * t;
                beta * beta / (s * s.sqrt())
            }
        }
    }

    /// `ω'(t)/t`, finite at `t = 0`.
    #[inline]
    pub fn ratio(&self, t: T) -> T {
        match *self {
            Self::Quadratic { lambda } => lambda,
            Self::LinearGrowth { beta } => T::one() / (beta * beta + t * t).sqrt(),
        }
    }
}

pub fn data_term_value<T: Scalar>(p: &DataTermProfile<T>, t: T) -> Result<T> {
    check_radius(t)?;
    Ok(p.value(t))
}

pub fn data_term_deriv<T: Scalar>(p: &DataTermProfile<T>, t: T) -> Result<T> {
    check_radius(t)?;
    Ok(p.deriv(t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditConfig<T> {
    pub sample_count: usize,
    /// Largest sampled `|Z|` in the base run. The comparison run doubles it.
    pub max_radius: T,
    /// Number of entries of `Z` (2 × channels for planar images).
    pub matrix_len: usize,
    pub seed: u64,
}

impl<T: Scalar> Default for AuditConfig<T> {
    fn default() -> Self {
        Self { sample_count: 10_000, max_radius: T::lit(1e3), matrix_len: 4, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditReport<T> {
    pub audited_mu: T,
    pub sample_count: usize,
    pub max_radius: T,
    pub nu4_hat: T,
    pub nu5_hat: T,
    pub nu4_hat_doubled: T,
    pub nu5_hat_doubled: T,
    pub nu4_drift: T,
    pub nu5_drift: T,
    pub pass: bool,
}

/// Maximum relative change of the audited constants between the base run and
/// the doubled run for the audit to pass.
pub const AUDIT_DRIFT_LIMIT: f64 = 0.05;

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

// Box-Muller standard normal draw.
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn audit_extremes<T: Scalar>(d: &Density<T>, audited_mu: T, count: usize, radius: T, len: usize, seed: u64) -> (T, T) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_span = radius.ln_1p();
    let mut lo = T::infinity();
    let mut hi = T::zero();
    let mut z = vec![T::zero(); len];
    let mut tangent = vec![T::zero(); len];
    let mut random = vec![T::zero(); len];
    for j in 0..count {
        let u = T::lit(radical_inverse(j as u64 + 1, 2));
        let t = (u * log_span).exp_m1();
        for zi in z.iter_mut() {
            *zi = T::lit(standard_normal(&mut rng));
        }
        let zn = norm(&z);
        for zi in z.iter_mut() {
            *zi = *zi / zn * t;
        }
        for (ti, ri) in tangent.iter_mut().zip(random.iter_mut()) {
            *ti = T::lit(standard_normal(&mut rng));
            *ri = T::lit(standard_normal(&mut rng));
        }
        if len > 1 && t > T::zero() {
            let proj = dot(&tangent, &z) / (t * t);
            for (ti, &zi) in tangent.iter_mut().zip(&z) {
                *ti -= proj * zi;
            }
        }
        let probes: [&[T]; 3] = [&z, &tangent, &random];
        for x in probes {
            let xx = dot(x, x);
            if xx == T::zero() {
                continue;
            }
            let r = d.hessian_form(&z, x) / xx;
            lo = lo.min(r * (T::one() + t).powf(audited_mu));
            hi = hi.max(r * (T::one() + t));
        }
    }
    (lo, hi)
}

/// Empirical μ-ellipticity constants of `d` measured against the exponent
/// `audited_mu`.
///
/// Samples `Z` with log-uniform radius in `[0, max_radius]` and probes the
/// Hessian along `Z`, orthogonal to `Z`, and in a random direction. The run is
/// repeated with twice the samples over twice the radius; the audit passes when
/// both constants are positive, finite and move by less than
/// [`AUDIT_DRIFT_LIMIT`] relative.
pub fn ellipticity_audit<T: Scalar>(d: &Density<T>, audited_mu: T, cfg: &AuditConfig<T>) -> Result<AuditReport<T>> {
    if cfg.sample_count == 0 {
        return Err(Error::InvalidConfig("sample_count must be >= 1".into()));
    }
    if cfg.matrix_len == 0 {
        return Err(Error::InvalidConfig("matrix_len must be >= 1".into()));
    }
    check_radius(cfg.max_radius)?;
    let (nu4, nu5) = audit_extremes(d, audited_mu, cfg.sample_count, cfg.max_radius, cfg.matrix_len, cfg.seed);
    let (nu4_d, nu5_d) = audit_extremes(
        d,
        audited_mu,
        2 * cfg.sample_count,
        T::lit(2.0) * cfg.max_radius,
        cfg.matrix_len,
        cfg.seed.wrapping_add(1),
    );
    let drift = |a: T, b: T| ((b - a) / a).abs();
    let nu4_drift = drift(nu4, nu4_d);
    let nu5_drift = drift(nu5, nu5_d);
    let limit = T::lit(AUDIT_DRIFT_LIMIT);
    let pass = nu4 > T::zero()
        && nu4_d > T::zero()
        && nu5.is_finite()
        && nu5_d.is_finite()
        && nu4_drift < limit
        && nu5_drift < limit;
    Ok(AuditReport {
        audited_mu,
        sample_count: cfg.sample_count,
        max_radius: cfg.max_radius,
        nu4_hat: nu4,
        nu5_hat: nu5,
        nu4_hat_doubled: nu4_d,
        nu5_hat_doubled: nu5_d,
        nu4_drift,
        nu5_drift,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn phi_closed_forms() {
        assert_eq!(phi_value(1.5, 0.0).unwrap(), 0.0);
        // 6 - (4^0.5 - 1) / 0.25
        assert!(close(phi_value(1.5, 3.0).unwrap(), 2.0, 1e-14));
        assert!(close(phi_value(2.0, 1.0).unwrap(), 1.0 - 2f64.ln(), 1e-14));
        assert_eq!(phi_deriv(1.5, 0.0).unwrap(), 0.0);
        assert!(close(phi_deriv(1.5, 3.0).unwrap(), 1.0, 1e-14));
        assert!(close(phi_deriv(2.0, 1.0).unwrap(), 0.5, 1e-14));
        assert_eq!(phi_second(1.5, 0.0).unwrap(), 1.0);
        assert!(close(phi_second(1.5, 3.0).unwrap(), 0.125, 1e-14));
        assert!(close(phi_second(3.0, 1.0).unwrap(), 0.125, 1e-14));
    }

    #[test]
    fn phi_domain_errors() {
        assert!(matches!(phi_value(1.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(phi_deriv(0.5, 1.0), Err(Error::Domain(_))));
        assert!(matches!(phi_second(1.5, -1.0), Err(Error::Domain(_))));
        assert!(phi_value(1.5, f64::NAN).is_err());
        assert!(Density::mu_family(1.0).is_err());
    }

    #[test]
    fn mu_two_branch_is_continuous() {
        for &t in &[1e-3, 0.3, 1.0, 7.0, 250.0, 1e3] {
            let at = phi_value(2.0f64, t).unwrap();
            for &eps in &[1e-9, 1e-7, 1e-5] {
                let mid = 0.5 * (phi_value(2.0 + eps, t).unwrap() + phi_value(2.0 - eps, t).unwrap());
                assert!((mid - at).abs() < 1e-8 * (1.0 + at), "t={t} eps={eps}: {mid} vs {at}");
            }
        }
    }

    #[test]
    fn series_branch_matches_closed_form_at_cutoff() {
        for &mu in &[1.2, 1.5, 2.0, 3.7] {
            let below = mu_phi(mu, SERIES_CUTOFF * (1.0 - 1e-12));
            let above = mu_phi(mu, SERIES_CUTOFF * (1.0 + 1e-12));
            assert!((below - above).abs() < 1e-9 * above, "mu={mu}: {below} {above}");
        }
    }

    #[test]
    fn density_examples() {
        let ms = Density::<f64>::minimal_surface();
        assert_eq!(density_value(&ms, &[0.0; 4]).unwrap(), 0.0);
        let z = [1.0, 1.0, 1.0, 0.0];
        assert!(close(density_value(&ms, &z).unwrap(), 1.0, 1e-15));
        let g = density_gradient(&ms, &z).unwrap();
        assert!(close(norm(&g), 3f64.sqrt() / 2.0, 1e-15));
        let perp = [1.0, -1.0, 0.0, 0.0];
        let perp_unit: Vec<f64> = perp.iter().map(|v| v / 2f64.sqrt()).collect();
        assert!(close(density_hessian_form(&ms, &z, &perp_unit).unwrap(), 0.5, 1e-15));

        let mf = Density::mu_family(1.5).unwrap();
        let z3 = [3.0, 0.0, 0.0, 0.0];
        assert!(close(density_value(&mf, &z3).unwrap(), 2.0, 1e-14));
        let g3 = density_gradient(&mf, &z3).unwrap();
        assert!(close(g3[0], 1.0, 1e-14));
        assert_eq!(&g3[1..], &[0.0, 0.0, 0.0]);
        assert!(close(density_hessian_form(&mf, &z3, &[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.125, 1e-14));
        let x = [0.3, -1.2, 0.5, 2.0];
        assert!(close(density_hessian_form(&mf, &[0.0; 4], &x).unwrap(), dot(&x, &x), 1e-15));
        assert_eq!(density_gradient(&mf, &[0.0; 4]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn non_finite_matrix_rejected() {
        let mf = Density::mu_family(1.5).unwrap();
        assert!(density_value(&mf, &[f64::INFINITY, 0.0]).is_err());
        assert!(density_gradient(&mf, &[f64::NAN, 0.0]).is_err());
        assert!(density_hessian_form(&mf, &[0.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn hessian_apply_agrees_with_form() {
        let d = Density::mu_family(1.7).unwrap();
        let z = [0.4, -2.0, 1.1, 0.3];
        let x = [1.0, 0.5, -0.2, 0.8];
        let mut hx = [0.0; 4];
        d.hessian_apply_into(&z, &x, &mut hx);
        assert!(close(dot(&hx, &x), d.hessian_form(&z, &x), 1e-14));
    }

    #[test]
    fn tangential_expansion_is_continuous() {
        let d = Density::mu_family(1.5).unwrap();
        let below = d.profile_ratio(TANGENTIAL_CUTOFF * (1.0 - 1e-9));
        let above = d.profile_ratio(TANGENTIAL_CUTOFF * (1.0 + 1e-9));
        assert!((below - above).abs() < 1e-10);
    }

    #[test]
    fn data_term_examples() {
        let lg = DataTermProfile::linear_growth(3.0).unwrap();
        assert!(close(data_term_value(&lg, 4.0).unwrap(), 2.0, 1e-15));
        assert!(close(data_term_deriv(&lg, 4.0).unwrap(), 0.8, 1e-15));
        let lg1 = DataTermProfile::linear_growth(1.0).unwrap();
        assert_eq!(data_term_value(&lg1, 0.0).unwrap(), 0.0);
        assert_eq!(data_term_deriv(&lg1, 0.0).unwrap(), 0.0);
        let q = DataTermProfile::quadratic(2.0).unwrap();
        assert_eq!(data_term_value(&q, 3.0).unwrap(), 9.0);
        assert_eq!(data_term_deriv(&q, 3.0).unwrap(), 6.0);
        assert!(data_term_value(&q, -1.0).is_err());
        assert!(DataTermProfile::quadratic(0.0).is_err());
        assert!(DataTermProfile::linear_growth(-1.0).is_err());
    }

    #[test]
    fn constants_give_linear_lower_bound() {
        for d in [Density::mu_family(1.2).unwrap(), Density::mu_family(2.0).unwrap(), Density::mu_family(4.0).unwrap(), Density::minimal_surface()] {
            let c = d.constants();
            assert!(c.nu2 > 0.0 && c.nu3 >= 0.0);
            for k in 0..2000 {
                let t = 1e-3 * 1.01f64.powi(k);
                assert!(d.profile(t) >= c.nu2 * t - c.nu3 - 1e-12 * (1.0 + t), "{d:?} t={t}");
                assert!(d.profile_deriv(t) <= c.nu1);
            }
        }
    }

    #[test]
    fn audit_rejects_empty_sample() {
        let d = Density::<f64>::minimal_surface();
        let cfg = AuditConfig { sample_count: 0, ..Default::default() };
        assert!(ellipticity_audit(&d, 3.0, &cfg).is_err());
    }

    #[test]
    fn audit_detects_wrong_exponent() {
        let d = Density::mu_family(1.5).unwrap();
        let cfg = AuditConfig::default();
        let right = ellipticity_audit(&d, 1.5, &cfg).unwrap();
        assert!(right.pass, "{right:?}");
        assert!(right.nu4_hat > 0.0 && right.nu4_hat <= 1.0 + 1e-12);
        assert!(right.nu5_hat >= 1.0);
        let wrong = ellipticity_audit(&d, 1.1, &cfg).unwrap();
        assert!(!wrong.pass, "{wrong:?}");
        assert!(wrong.nu4_hat_doubled < wrong.nu4_hat);
    }

    #[test]
    fn minimal_surface_audits_at_three() {
        let d = Density::<f64>::minimal_surface();
        let r = ellipticity_audit(&d, 3.0, &AuditConfig::default()).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn f32_profiles_track_f64() {
        let d32 = Density::<f32>::mu_family(1.5).unwrap();
        let d64 = Density::<f64>::mu_family(1.5).unwrap();
        for &t in &[0.0, 1e-5, 0.2, 3.0, 900.0] {
            let a = d32.profile(t as f32) as f64;
            let b = d64.profile(t);
            assert!((a - b).abs() <= 1e-5 * (1.0 + b));
        }
    }
}
