//! Regularity exponents and numerical checks of the qualitative properties of
//! minimizers: maximum principle, boundedness of the dual variable and
//! uniqueness on the observed region.

use std::fmt::Debug;

use num_traits::{FromPrimitive, Num};
use serde::Serialize;

use crate::energy::{dual_variable, Problem};
use crate::error::{Error, Result};
use crate::grid::{gradient, ImageField, Mask};
use crate::scalar::{norm, Scalar};
use crate::solver::{continuation_from, random_init, SolverConfig};

/// Absolute slack of the maximum-principle check.
pub const MAX_PRINCIPLE_SLACK: f64 = 1e-6;
/// Absolute slack of the dual-bound check.
pub const DUAL_BOUND_SLACK: f64 = 1e-12;
/// Uniqueness tolerance as a multiple of the solver's stationarity tolerance.
pub const UNIQUENESS_FACTOR: f64 = 10.0;

/// Regularity statements whose exponents and `μ` ranges are tabulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Theorem {
    /// `n = 2`, quadratic fidelity, arbitrary inpainting region: `μ < 3/2`.
    PlanarInpainting,
    /// `n = 2`, quadratic fidelity, pure denoising: `μ < 2`.
    PlanarDenoising,
    /// `n ≥ 3`, quadratic fidelity, pure denoising: `μ < 2`,
    /// `u ∈ W^{1,2} ∩ W^{2, 4/(2+μ)}`.
    HigherDimDenoising,
    /// `n ≥ 3`, linear-growth fidelity with inpainting: `μ < 3n/(3n-2)`,
    /// `p = (1 - μ/2) 2n/(n-2)`, `s = (2-μ) n/(n-μ)`.
    HigherDimLinearData,
    /// Any `n ≥ 2`, general data term, via δ-regularization: `μ < 2`,
    /// `u ∈ W^{1,p}` for every `p < 4 - μ`.
    RegularizedSolvability,
}

impl Theorem {
    pub const ALL: [Theorem; 5] = [
        Theorem::PlanarInpainting,
        Theorem::PlanarDenoising,
        Theorem::HigherDimDenoising,
        Theorem::HigherDimLinearData,
        Theorem::RegularizedSolvability,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Theorem::PlanarInpainting => "planar-inpainting",
            Theorem::PlanarDenoising => "planar-denoising",
            Theorem::HigherDimDenoising => "higher-dim-denoising",
            Theorem::HigherDimLinearData => "higher-dim-linear-data",
            Theorem::RegularizedSolvability => "regularized-solvability",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }
}

/// Integrability order guaranteed by a theorem.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ExponentRange<T> {
    Exactly(T),
    /// Every order strictly below the value.
    Below(T),
    /// Every finite order.
    AnyFinite,
}

/// Field in which exponents are computed: `f64`, or `Ratio<i64>` for exact
/// arithmetic.
pub trait ExponentField: Clone + PartialOrd + Num + FromPrimitive + Debug {}
impl<T: Clone + PartialOrd + Num + FromPrimitive + Debug> ExponentField for T {}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentReport<T> {
    pub n: u32,
    pub mu: T,
    pub theorem: Theorem,
    pub admissible: bool,
    pub p: Option<ExponentRange<T>>,
    pub s: Option<ExponentRange<T>>,
    pub mu_bound: T,
}

fn int<T: ExponentField>(k: u32) -> T {
    T::from_u32(k).expect("small integers are representable")
}

/// Upper bound on `μ` for `theorem` in dimension `n`. Evaluates the formula at
/// any `n`, including dimensions the theorem does not cover.
pub fn mu_bound<T: ExponentField>(theorem: Theorem, n: u32) -> T {
    match theorem {
        Theorem::PlanarInpainting => int::<T>(3) / int(2),
        Theorem::PlanarDenoising | Theorem::HigherDimDenoising | Theorem::RegularizedSolvability => int(2),
        Theorem::HigherDimLinearData => int::<T>(3 * n) / int(3 * n - 2),
    }
}

pub fn sobolev_exponents<T: ExponentField>(n: u32, mu: T, theorem: Theorem) -> Result<ExponentReport<T>> {
    if n < 2 {
        return Err(Error::Domain(format!("dimension must be >= 2, got {n}")));
    }
    if !(mu > T::one()) {
        return Err(Error::Domain(format!("ellipticity exponent must exceed 1, got {mu:?}")));
    }
    let planar = matches!(theorem, Theorem::PlanarInpainting | Theorem::PlanarDenoising);
    let higher = matches!(theorem, Theorem::HigherDimDenoising | Theorem::HigherDimLinearData);
    if planar && n != 2 {
        return Err(Error::Unsupported(format!("{} requires n = 2, got n = {n}", theorem.name())));
    }
    if higher && n < 3 {
        return Err(Error::Unsupported(format!("{} requires n >= 3, got n = {n}", theorem.name())));
    }
    let bound = mu_bound::<T>(theorem, n);
    let two = int::<T>(2);
    let nn = int::<T>(n);
    let (p, s) = match theorem {
        Theorem::PlanarInpainting | Theorem::PlanarDenoising => {
            (Some(ExponentRange::AnyFinite), Some(ExponentRange::Below(two.clone())))
        }
        Theorem::HigherDimDenoising => (
            Some(ExponentRange::Exactly(two.clone())),
            Some(ExponentRange::Exactly(int::<T>(4) / (two.clone() + mu.clone()))),
        ),
        Theorem::HigherDimLinearData => {
            let p = (T::one() - mu.clone() / two.clone()) * (two.clone() * nn.clone()) / (nn.clone() - two.clone());
            let s = (two.clone() - mu.clone()) * nn.clone() / (nn - mu.clone());
            (Some(ExponentRange::Exactly(p)), Some(ExponentRange::Exactly(s)))
        }
        Theorem::RegularizedSolvability => (Some(ExponentRange::Below(int::<T>(4) - mu.clone())), None),
    };
    Ok(ExponentReport { n, admissible: mu < bound, mu, theorem, p, s, mu_bound: bound })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaxPrincipleCheck<T> {
    pub sup_u: T,
    pub sup_u0: T,
    pub pass: bool,
}

/// `sup_Ω |u| ≤ sup_{Ω-D} |u0| + 1e-6`, with `|·|` the Euclidean norm across
/// channels.
pub fn max_principle_check<T: Scalar>(u: &ImageField<T>, u0: &ImageField<T>, mask: &Mask) -> Result<MaxPrincipleCheck<T>> {
    u.require_same_grid(u0, "max_principle_check")?;
    if !mask.fits(u.shape()) {
        return Err(Error::DimensionMismatch("mask does not match the image grid".into()));
    }
    let pixels = u.shape().pixels();
    let sup_u = (0..pixels).fold(T::zero(), |m, px| m.max(norm(u.pixel(px))));
    let sup_u0 = mask.observed().fold(T::zero(), |m, px| m.max(norm(u0.pixel(px))));
    Ok(MaxPrincipleCheck { sup_u, sup_u0, pass: sup_u <= sup_u0 + T::lit(MAX_PRINCIPLE_SLACK) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualBoundCheck<T> {
    pub max_sigma: T,
    pub nu1: T,
    pub pass: bool,
}

pub fn dual_bound_check<T: Scalar>(p: &Problem<T>, u: &ImageField<T>) -> Result<DualBoundCheck<T>> {
    let sigma = dual_variable(p, u)?;
    let nu1 = p.density.constants().nu1;
    Ok(DualBoundCheck { max_sigma: sigma.max_norm, nu1, pass: sigma.max_norm <= nu1 + T::lit(DUAL_BOUND_SLACK) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniquenessCheck<T> {
    pub trials: usize,
    pub max_dev_off_d: T,
    pub max_dev_all: T,
    pub tolerance: T,
    pub pass: bool,
}

/// Solves from `trials` seeded random starts and compares the results pairwise.
/// Passes when they agree off `D`; the deviation over all of `Ω` is reported
/// alongside.
pub fn uniqueness_check<T: Scalar>(p: &Problem<T>, cfg: &SolverConfig<T>, trials: usize) -> Result<UniquenessCheck<T>> {
    if trials < 2 {
        return Err(Error::InvalidConfig("uniqueness check needs at least 2 trials".into()));
    }
    let mut solutions = Vec::with_capacity(trials);
    for k in 0..trials {
        let init = random_init(p, cfg.seed.wrapping_add(1 + k as u64));
        solutions.push(continuation_from(p, &init, cfg)?.0);
    }
    let c = p.shape().channels;
    let mut off_d = T::zero();
    let mut all = T::zero();
    for (i, a) in solutions.iter().enumerate() {
        for b in &solutions[i + 1..] {
            for (k, (&x, &y)) in a.values().iter().zip(b.values()).enumerate() {
                let dev = (x - y).abs();
                all = all.max(dev);
                if !p.mask.is_missing(k / c) {
                    off_d = off_d.max(dev);
                }
            }
        }
    }
    let tolerance = T::lit(UNIQUENESS_FACTOR) * cfg.grad_tol_for(p.shape());
    Ok(UniquenessCheck { trials, max_dev_off_d: off_d, max_dev_all: all, tolerance, pass: off_d < tolerance })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegrabilityStat<T> {
    pub p: T,
    pub norm: T,
}

/// `(Σ h² (1 + |∇u|)^p)^(1/p)` for each requested `p ≥ 1`.
pub fn grad_integrability_stats<T: Scalar>(u: &ImageField<T>, p_list: &[T]) -> Result<Vec<IntegrabilityStat<T>>> {
    if let Some(bad) = p_list.iter().find(|&&p| !(p >= T::one() && p.is_finite())) {
        return Err(Error::Domain(format!("integrability order must be >= 1, got {bad}")));
    }
    let g = gradient(u);
    let area = u.cell_area();
    Ok(p_list
        .iter()
        .map(|&p| {
            let sum = g.pixels().fold(T::zero(), |acc, z| acc + (T::one() + norm(z)).powf(p));
            IntegrabilityStat { p, norm: (sum * area).powf(T::one() / p) }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport<T> {
    pub max_principle: MaxPrincipleCheck<T>,
    pub dual_bound: DualBoundCheck<T>,
    pub uniqueness: UniquenessCheck<T>,
    pub grad_integrability: Vec<IntegrabilityStat<T>>,
}

impl<T> DiagnosticsReport<T> {
    pub fn all_pass(&self) -> bool {
        self.max_principle.pass && self.dual_bound.pass && self.uniqueness.pass
    }
}

pub fn run_diagnostics<T: Scalar>(
    p: &Problem<T>,
    u: &ImageField<T>,
    cfg: &SolverConfig<T>,
    trials: usize,
    p_list: &[T],
) -> Result<DiagnosticsReport<T>> {
    Ok(DiagnosticsReport {
        max_principle: max_principle_check(u, &p.u0, &p.mask)?,
        dual_bound: dual_bound_check(p, u)?,
        uniqueness: uniqueness_check(p, cfg, trials)?,
        grad_integrability: grad_integrability_stats(u, p_list)?,
    })
}
