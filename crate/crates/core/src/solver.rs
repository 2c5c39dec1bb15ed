//! Minimization of `K_δ` for fixed `δ`, and the continuation `δ → 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::energy::{energy, EnergyBreakdown, Evaluator, Problem};
use crate::error::{Error, Result};
use crate::grid::{GridShape, ImageField};
use crate::scalar::{dot, max_abs, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DescentMethod {
    /// Inexact Newton steps from Jacobi-preconditioned conjugate gradients.
    NewtonCg,
    /// Negative gradient scaled by the inverse Hessian diagonal.
    PreconditionedGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig<T> {
    /// Iteration cap per δ stage.
    pub max_iters: usize,
    /// Max-norm stationarity tolerance. `None` selects `1e-7 · sqrt(#pixels)`.
    pub grad_tol: Option<T>,
    pub sufficient_decrease: T,
    pub backtrack_factor: T,
    pub max_backtracks: usize,
    pub delta_start: T,
    pub delta_factor: T,
    pub delta_steps: usize,
    pub deterministic: bool,
    pub seed: u64,
    pub method: DescentMethod,
    pub cg_max_iters: usize,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            max_iters: 500,
            grad_tol: None,
            sufficient_decrease: T::lit(1e-4),
            backtrack_factor: T::lit(0.5),
            max_backtracks: 60,
            delta_start: T::lit(1e-1),
            delta_factor: T::lit(1e-1),
            delta_steps: 4,
            deterministic: false,
            seed: 0,
            method: DescentMethod::NewtonCg,
            cg_max_iters: 400,
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.delta_start.is_finite() && self.delta_start > T::zero()) {
            return bad("delta_start must be positive");
        }
        if !(self.delta_factor > T::zero() && self.delta_factor < T::one()) {
            return bad("delta_factor must lie in (0, 1)");
        }
        if self.delta_steps == 0 {
            return bad("delta_steps must be >= 1");
        }
        if let Some(tol) = self.grad_tol {
            if !(tol.is_finite() && tol > T::zero()) {
                return bad("grad_tol must be positive");
            }
        }
        if !(self.sufficient_decrease > T::zero() && self.sufficient_decrease < T::one()) {
            return bad("sufficient_decrease must lie in (0, 1)");
        }
        if !(self.backtrack_factor > T::zero() && self.backtrack_factor < T::one()) {
            return bad("backtrack_factor must lie in (0, 1)");
        }
        if self.max_backtracks == 0 || self.cg_max_iters == 0 {
            return bad("max_backtracks and cg_max_iters must be >= 1");
        }
        Ok(())
    }

    pub fn grad_tol_for(&self, shape: GridShape) -> T {
        self.grad_tol.unwrap_or_else(|| T::lit(1e-7) * T::from_usize_lossy(shape.pixels()).sqrt())
    }

    /// `δ_k = delta_start · delta_factor^k` for `k < delta_steps`.
    pub fn schedule(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.delta_steps);
        let mut delta = self.delta_start;
        for _ in 0..self.delta_steps {
            out.push(delta);
            delta *= self.delta_factor;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Stationary,
    MaxIters,
    /// No step satisfied sufficient decrease before the backtracking budget
    /// ran out; the gradient was still above tolerance.
    LineSearchStalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord<T> {
    pub stage: usize,
    pub iteration: usize,
    pub delta: T,
    pub energy: EnergyBreakdown<T>,
    pub grad_max_norm: T,
    /// Step length that produced this iterate; zero for a stage's starting point.
    pub step: T,
    pub max_sigma: T,
    pub inner_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageRecord<T> {
    pub stage: usize,
    pub delta: T,
    /// `K[u_δ]`, the energy with the Tikhonov term removed.
    pub k_value: T,
    /// `K_δ[u_δ]`.
    pub k_delta_value: T,
    pub iterations: usize,
    pub grad_max_norm: T,
    pub grad_tol: T,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverTrace<T> {
    pub iterations: Vec<IterationRecord<T>>,
    pub stages: Vec<StageRecord<T>>,
    pub termination: Termination,
}

impl<T: Scalar> SolverTrace<T> {
    fn new() -> Self {
        Self { iterations: Vec::new(), stages: Vec::new(), termination: Termination::Stationary }
    }

    /// Total energy never increases between consecutive iterates of a stage.
    pub fn monotone_within_stages(&self) -> bool {
        self.iterations
            .windows(2)
            .all(|w| w[0].stage != w[1].stage || w[1].energy.total <= w[0].energy.total)
    }

    /// `K[u_{δ_k}]` is non-increasing in `k` up to `rel_tol · (1 + |K|)`.
    pub fn k_values_non_increasing(&self, rel_tol: T) -> bool {
        self.stages
            .windows(2)
            .all(|w| w[1].k_value <= w[0].k_value + rel_tol * (T::one() + w[0].k_value.abs()))
    }

    pub fn k_delta_values_non_increasing(&self) -> bool {
        self.stages.windows(2).all(|w| w[1].k_delta_value <= w[0].k_delta_value)
    }

    pub fn max_sigma(&self) -> T {
        self.iterations.iter().fold(T::zero(), |acc, r| acc.max(r.max_sigma))
    }

    pub fn converged(&self) -> bool {
        self.stages.iter().all(|s| s.termination == Termination::Stationary)
    }
}

/// `u0` on observed pixels, the per-channel observed mean on `D`.
pub fn default_init<T: Scalar>(p: &Problem<T>) -> ImageField<T> {
    let c = p.shape().channels;
    let u0 = p.u0.values();
    let mut mean = vec![T::zero(); c];
    let mut count = 0usize;
    for px in p.mask.observed() {
        for (m, &v) in mean.iter_mut().zip(&u0[px * c..(px + 1) * c]) {
            *m += v;
        }
        count += 1;
    }
    let n = T::from_usize_lossy(count);
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut values = u0.to_vec();
    for px in 0..p.shape().pixels() {
        if p.mask.is_missing(px) {
            values[px * c..(px + 1) * c].copy_from_slice(&mean);
        }
    }
    ImageField::from_parts_unchecked(p.shape(), p.spacing(), values)
}

/// Uniform `[0, 1)` values from a seeded stream.
pub fn random_init<T: Scalar>(p: &Problem<T>, seed: u64) -> ImageField<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..p.shape().len()).map(|_| T::lit(rng.gen::<f64>())).collect();
    ImageField::from_parts_unchecked(p.shape(), p.spacing(), values)
}

// Returns the constant minimizer when all observed pixels carry the same value.
fn constant_solution<T: Scalar>(p: &Problem<T>) -> Option<ImageField<T>> {
    let c = p.shape().channels;
    let u0 = p.u0.values();
    let mut observed = p.mask.observed();
    let first = observed.next()?;
    let color = &u0[first * c..(first + 1) * c];
    if observed.all(|px| &u0[px * c..(px + 1) * c] == color) {
        ImageField::constant(p.u0.width(), p.u0.height(), p.spacing(), color).ok()
    } else {
        None
    }
}

fn check_init<T: Scalar>(p: &Problem<T>, init: &ImageField<T>) -> Result<()> {
    if init.same_grid(&p.u0) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch("initial guess does not match the data grid".into()))
    }
}

struct Stage<'a, T> {
    eval: Evaluator<'a, T>,
    cfg: &'a SolverConfig<T>,
    tol: T,
    index: usize,
}

impl<T: Scalar> Stage<'_, T> {
    fn run(&mut self, u: &mut [T], trace: &mut SolverTrace<T>) -> Result<StageRecord<T>> {
        let n = u.len();
        let delta = self.eval.delta();
        let mut g = vec![T::zero(); n];
        let mut diag = vec![T::zero(); n];
        let mut dir = vec![T::zero(); n];
        let mut trial = vec![T::zero(); n];
        let mut cg = CgScratch::new(n);
        let mut step = T::zero();
        let mut inner = 0;
        let mut prev_step = T::one();
        let mut iteration = 0;
        let termination = loop {
            let ev = self.eval.value_and_gradient(u, &mut g);
            let total = ev.energy.total;
            if !total.is_finite() {
                return Err(Error::NonFiniteEnergy { iteration, delta: delta.to_f64_lossy() });
            }
            let gmax = max_abs(&g);
            trace.iterations.push(IterationRecord {
                stage: self.index,
                iteration,
                delta,
                energy: ev.energy,
                grad_max_norm: gmax,
                step,
                max_sigma: ev.max_sigma,
                inner_iterations: inner,
            });
            if gmax <= self.tol {
                break Termination::Stationary;
            }
            if iteration >= self.cfg.max_iters {
                break Termination::MaxIters;
            }
            self.eval.hessian_diagonal(u, &mut diag);
            inner = 0;
            let mut alpha = match self.cfg.method {
                DescentMethod::NewtonCg => {
                    inner = self.newton_direction(u, &g, &diag, &mut dir, &mut cg);
                    T::one()
                }
                DescentMethod::PreconditionedGradient => {
                    scaled_gradient(&g, &diag, &mut dir);
                    (prev_step * T::lit(2.0)).min(T::one())
                }
            };
            let mut slope = dot(&g, &dir);
            if !(slope < T::zero()) {
                scaled_gradient(&g, &diag, &mut dir);
                slope = dot(&g, &dir);
            }
            let mut accepted = false;
            for _ in 0..self.cfg.max_backtracks {
                for ((t, &ui), &di) in trial.iter_mut().zip(u.iter()).zip(&dir) {
                    *t = ui + alpha * di;
                }
                let e = self.eval.energy(&trial).total;
                if !e.is_finite() {
                    return Err(Error::NonFiniteEnergy { iteration, delta: delta.to_f64_lossy() });
                }
                if e <= total + self.cfg.sufficient_decrease * alpha * slope && e <= total {
                    accepted = true;
                    break;
                }
                alpha *= self.cfg.backtrack_factor;
            }
            if !accepted {
                break Termination::LineSearchStalled;
            }
            u.copy_from_slice(&trial);
            step = alpha;
            prev_step = alpha;
            iteration += 1;
        };
        let last = trace.iterations.last().copied().expect("stage recorded at least one iterate");
        Ok(StageRecord {
            stage: self.index,
            delta,
            k_value: last.energy.regularizer + last.energy.fidelity,
            k_delta_value: last.energy.total,
            iterations: iteration,
            grad_max_norm: last.grad_max_norm,
            grad_tol: self.tol,
            termination,
        })
    }

    // Approximately solves H d = -g; returns the number of CG iterations.
    fn newton_direction(&mut self, u: &[T], g: &[T], diag: &[T], d: &mut [T], s: &mut CgScratch<T>) -> usize {
        let gnorm = dot(g, g).sqrt();
        let forcing = T::lit(0.5).min(gnorm.sqrt());
        let target = forcing * gnorm;
        d.iter_mut().for_each(|v| *v = T::zero());
        for ((r, &gi), (z, &di)) in s.r.iter_mut().zip(g).zip(s.z.iter_mut().zip(diag)) {
            *r = -gi;
            *z = *r / di;
        }
        s.p.copy_from_slice(&s.z);
        let mut rz = dot(&s.r, &s.z);
        for k in 0..self.cfg.cg_max_iters {
            self.eval.hessian_apply(u, &s.p, &mut s.hp);
            let curv = dot(&s.p, &s.hp);
            if !(curv > T::zero()) {
                if k == 0 {
                    scaled_gradient(g, diag, d);
                }
                return k;
            }
            let a = rz / curv;
            for ((di, &pi), (ri, &hpi)) in d.iter_mut().zip(&s.p).zip(s.r.iter_mut().zip(&s.hp)) {
                *di += a * pi;
                *ri -= a * hpi;
            }
            if dot(&s.r, &s.r).sqrt() <= target {
                return k + 1;
            }
            for ((z, &r), &di) in s.z.iter_mut().zip(&s.r).zip(diag) {
                *z = r / di;
            }
            let rz_next = dot(&s.r, &s.z);
            let beta = rz_next / rz;
            rz = rz_next;
            for (pi, &zi) in s.p.iter_mut().zip(&s.z) {
                *pi = zi + beta * *pi;
            }
        }
        self.cfg.cg_max_iters
    }
}

struct CgScratch<T> {
    r: Vec<T>,
    z: Vec<T>,
    p: Vec<T>,
    hp: Vec<T>,
}

impl<T: Scalar> CgScratch<T> {
    fn new(n: usize) -> Self {
        Self { r: vec![T::zero(); n], z: vec![T::zero(); n], p: vec![T::zero(); n], hp: vec![T::zero(); n] }
    }
}

fn scaled_gradient<T: Scalar>(g: &[T], diag: &[T], out: &mut [T]) {
    for ((o, &gi), &di) in out.iter_mut().zip(g).zip(diag) {
        *o = -gi / di;
    }
}

fn run_stage<T: Scalar>(
    p: &Problem<T>,
    delta: T,
    u: &mut ImageField<T>,
    cfg: &SolverConfig<T>,
    index: usize,
    trace: &mut SolverTrace<T>,
) -> Result<()> {
    let mut stage = Stage { eval: Evaluator::new(p, delta), cfg, tol: cfg.grad_tol_for(p.shape()), index };
    let record = stage.run(u.values_mut(), trace)?;
    trace.termination = record.termination;
    trace.stages.push(record);
    Ok(())
}

/// Minimizes `K_δ` from `init`.
pub fn minimize_fixed_delta<T: Scalar>(
    p: &Problem<T>,
    delta: T,
    init: &ImageField<T>,
    cfg: &SolverConfig<T>,
) -> Result<(ImageField<T>, SolverTrace<T>)> {
    cfg.validate()?;
    if !(delta.is_finite() && delta > T::zero()) {
        return Err(Error::Domain(format!("delta must be positive, got {delta}")));
    }
    check_init(p, init)?;
    let mut u = constant_solution(p).unwrap_or_else(|| init.clone());
    let mut trace = SolverTrace::new();
    run_stage(p, delta, &mut u, cfg, 0, &mut trace)?;
    Ok((u, trace))
}

/// Runs the δ schedule from [`default_init`], warm-starting each stage.
pub fn continuation<T: Scalar>(p: &Problem<T>, cfg: &SolverConfig<T>) -> Result<(ImageField<T>, SolverTrace<T>)> {
    continuation_from(p, &default_init(p), cfg)
}

pub fn continuation_from<T: Scalar>(
    p: &Problem<T>,
    init: &ImageField<T>,
    cfg: &SolverConfig<T>,
) -> Result<(ImageField<T>, SolverTrace<T>)> {
    cfg.validate()?;
    check_init(p, init)?;
    let mut u = constant_solution(p).unwrap_or_else(|| init.clone());
    let mut trace = SolverTrace::new();
    for (k, delta) in cfg.schedule().into_iter().enumerate() {
        run_stage(p, delta, &mut u, cfg, k, &mut trace)?;
    }
    Ok((u, trace))
}

/// `K[u]`: the energy with `δ = 0`.
pub fn k_energy<T: Scalar>(p: &Problem<T>, u: &ImageField<T>) -> Result<T> {
    Ok(energy(p, u, T::zero())?.total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::{DataTermProfile, Density};
    use crate::grid::Mask;

    fn checker(w: usize, h: usize) -> ImageField<f64> {
        let v = (0..w * h).map(|i| ((i % w + i / w) % 2) as f64).collect();
        ImageField::new(w, h, 1, 1.0, v).unwrap()
    }

    #[test]
    fn config_validation() {
        let ok = SolverConfig::<f64>::default();
        assert!(ok.validate().is_ok());
        assert!(SolverConfig { delta_start: 0.0, ..ok }.validate().is_err());
        assert!(SolverConfig { delta_factor: 1.0, ..ok }.validate().is_err());
        assert!(SolverConfig { grad_tol: Some(-1.0), ..ok }.validate().is_err());
        assert!(SolverConfig { delta_steps: 0, ..ok }.validate().is_err());
        let s = ok.schedule();
        assert_eq!(s.len(), 4);
        assert!((s[3] - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn default_tolerance_scales_with_pixels() {
        let cfg = SolverConfig::<f64>::default();
        let shape = GridShape::new(10, 10, 3).unwrap();
        assert!((cfg.grad_tol_for(shape) - 1e-6).abs() < 1e-20);
    }

    #[test]
    fn default_init_examples() {
        let d = Density::mu_family(1.5).unwrap();
        let q = DataTermProfile::quadratic(10.0).unwrap();
        let u0 = checker(4, 2);
        let p = Problem::denoising(d, q, u0.clone());
        assert_eq!(default_init(&p), u0);

        let c = ImageField::constant(4, 2, 1.0, &[0.3]).unwrap();
        let half = Mask::new(4, 2, vec![true, true, false, false, true, true, false, false]).unwrap();
        let p = Problem::new(d, q, c.clone(), half.clone()).unwrap();
        assert_eq!(default_init(&p), c);

        let p = Problem::new(d, q, u0.clone(), half).unwrap();
        let init = default_init(&p);
        // observed pixels 2, 3, 6, 7 carry 0, 1, 1, 0.
        for px in [0, 1, 4, 5] {
            assert_eq!(init.values()[px], 0.5);
        }
        for px in [2, 3, 6, 7] {
            assert_eq!(init.values()[px], u0.values()[px]);
        }
    }

    #[test]
    fn constant_data_short_circuits() {
        let d = Density::minimal_surface();
        let q = DataTermProfile::linear_growth(0.2).unwrap();
        let c = ImageField::constant(3, 3, 1.0, &[0.25, 0.75]).unwrap();
        let mask = Mask::new(3, 3, vec![true, false, true, false, false, true, true, true, true]).unwrap();
        let p = Problem::new(d, q, c.clone(), mask).unwrap();
        let init = random_init(&p, 9);
        let (u, trace) = minimize_fixed_delta(&p, 1e-2, &init, &SolverConfig::default()).unwrap();
        assert_eq!(u, c);
        assert_eq!(trace.stages[0].iterations, 0);
        assert_eq!(trace.iterations[0].energy.total, 0.0);
        let (u, trace) = continuation(&p, &SolverConfig::default()).unwrap();
        assert_eq!(u, c);
        assert!(trace.stages.iter().all(|s| s.k_value == 0.0));
    }

    #[test]
    fn both_methods_reach_the_same_minimizer() {
        let d = Density::mu_family(1.5).unwrap();
        let q = DataTermProfile::quadratic(4.0).unwrap();
        let p = Problem::denoising(d, q, checker(4, 4));
        let newton = SolverConfig::<f64>::default();
        let gradient = SolverConfig { method: DescentMethod::PreconditionedGradient, max_iters: 20_000, ..newton };
        let (a, ta) = minimize_fixed_delta(&p, 1e-2, &default_init(&p), &newton).unwrap();
        let (b, tb) = minimize_fixed_delta(&p, 1e-2, &default_init(&p), &gradient).unwrap();
        assert_eq!(ta.termination, Termination::Stationary);
        assert_eq!(tb.termination, Termination::Stationary);
        assert!(ta.monotone_within_stages() && tb.monotone_within_stages());
        let dev = a.values().iter().zip(b.values()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(dev < 1e-4, "{dev}");
    }

    #[test]
    fn rejects_bad_arguments() {
        let d = Density::mu_family(1.5).unwrap();
        let q = DataTermProfile::quadratic(1.0).unwrap();
        let p = Problem::denoising(d, q, checker(3, 3));
        let cfg = SolverConfig::default();
        assert!(minimize_fixed_delta(&p, 0.0, &p.u0, &cfg).is_err());
        let wrong = checker(3, 2);
        assert!(matches!(minimize_fixed_delta(&p, 0.1, &wrong, &cfg), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn max_iters_is_reported() {
        let d = Density::mu_family(1.5).unwrap();
        let q = DataTermProfile::quadratic(1.0).unwrap();
        let p = Problem::denoising(d, q, checker(5, 5));
        let cfg = SolverConfig { max_iters: 1, method: DescentMethod::PreconditionedGradient, ..SolverConfig::default() };
        let (_, trace) = minimize_fixed_delta(&p, 1e-3, &p.u0, &cfg).unwrap();
        assert_eq!(trace.termination, Termination::MaxIters);
        assert_eq!(trace.iterations.len(), 2);
    }

    #[test]
    fn single_precision_solves() {
        let d = Density::<f32>::mu_family(1.5).unwrap();
        let q = DataTermProfile::quadratic(4.0f32).unwrap();
        let v = (0..9).map(|i| (i % 2) as f32).collect();
        let p = Problem::denoising(d, q, ImageField::new(3, 3, 1, 1.0f32, v).unwrap());
        let cfg = SolverConfig { grad_tol: Some(1e-4f32), ..SolverConfig::default() };
        let (u, trace) = continuation(&p, &cfg).unwrap();
        assert!(trace.monotone_within_stages());
        assert!(u.values().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
}
