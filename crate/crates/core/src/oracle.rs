//! Brute-force reference minimizers and quadrature for tiny instances.
//!
//! Nothing here calls the solver, the analytic energy gradient or the Hessian
//! code. The energy is re-evaluated from explicit neighbour differences and
//! minimized by exhaustive grid search and derivative-free coordinate descent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::densities::{DataTermProfile, Density, DensityKind};
use crate::energy::{energy, Problem};
use crate::error::{Error, Result};
use crate::grid::{ImageField, Mask};
use crate::solver::{continuation, SolverConfig};

pub const MAX_TINY_PIXELS: usize = 16;
pub const MAX_TINY_CHANNELS: usize = 2;
/// Largest number of unknowns searched exhaustively.
pub const MAX_GRID_UNKNOWNS: usize = 3;

const SEARCH_LO: f64 = -1.0;
const SEARCH_HI: f64 = 2.0;
const COARSE_STEP: f64 = 1e-2;
const STATIONARITY: f64 = 1e-8;
const AGREEMENT: f64 = 1e-6;
const MAX_SWEEPS: usize = 200_000;

/// A problem small enough for exhaustive minimization.
#[derive(Debug, Clone)]
pub struct TinyProblem {
    problem: Problem<f64>,
}

impl TinyProblem {
    pub fn new(problem: Problem<f64>) -> Result<Self> {
        let shape = problem.shape();
        if shape.pixels() > MAX_TINY_PIXELS || shape.channels > MAX_TINY_CHANNELS {
            return Err(Error::InstanceTooLarge(format!(
                "{}x{} grid with {} channels (limit {MAX_TINY_PIXELS} pixels, {MAX_TINY_CHANNELS} channels)",
                shape.width, shape.height, shape.channels
            )));
        }
        Ok(Self { problem })
    }

    pub fn problem(&self) -> &Problem<f64> {
        &self.problem
    }

    pub fn unknowns(&self) -> usize {
        self.problem.shape().len()
    }
}

struct ReferenceEnergy<'a> {
    p: &'a Problem<f64>,
    delta: f64,
}

impl ReferenceEnergy<'_> {
    fn dims(&self) -> (usize, usize, usize) {
        let s = self.p.shape();
        (s.width, s.height, s.channels)
    }

    // Regularizer plus Tikhonov term of the forward-difference matrix at (x, y).
    fn cell(&self, u: &[f64], x: usize, y: usize) -> f64 {
        let (w, h, c) = self.dims();
        let step = self.p.spacing();
        let at = |xx: usize, yy: usize, ch: usize| u[(yy * w + xx) * c + ch];
        let mut z = [0.0; 2 * MAX_TINY_CHANNELS];
        for ch in 0..c {
            if x + 1 < w {
                z[2 * ch] = (at(x + 1, y, ch) - at(x, y, ch)) / step;
            }
            if y + 1 < h {
                z[2 * ch + 1] = (at(x, y + 1, ch) - at(x, y, ch)) / step;
            }
        }
        let z = &z[..2 * c];
        let sq: f64 = z.iter().map(|v| v * v).sum();
        self.p.density.value(z) + 0.5 * self.delta * sq
    }

    fn fidelity(&self, u: &[f64], px: usize) -> f64 {
        if self.p.mask.is_missing(px) {
            return 0.0;
        }
        let c = self.p.shape().channels;
        let u0 = self.p.u0.values();
        let r: f64 = (0..c).map(|ch| (u[px * c + ch] - u0[px * c + ch]).powi(2)).sum();
        self.p.data.value(r.sqrt())
    }

    fn total(&self, u: &[f64]) -> f64 {
        let (w, h, _) = self.dims();
        let mut acc = 0.0;
        for y in 0..h {
            for x in 0..w {
                acc += self.cell(u, x, y) + self.fidelity(u, y * w + x);
            }
        }
        acc * self.p.spacing().powi(2)
    }

    // Every term that depends on the values of pixel `px`.
    fn local(&self, u: &[f64], px: usize) -> f64 {
        let (w, _, _) = self.dims();
        let (x, y) = (px % w, px / w);
        let mut acc = self.cell(u, x, y) + self.fidelity(u, px);
        if x > 0 {
            acc += self.cell(u, x - 1, y);
        }
        if y > 0 {
            acc += self.cell(u, x, y - 1);
        }
        acc * self.p.spacing().powi(2)
    }

    fn coordinate_slope(&self, u: &mut [f64], k: usize) -> f64 {
        let px = k / self.p.shape().channels;
        let e = 1e-6 * (1.0 + u[k].abs());
        let keep = u[k];
        u[k] = keep + e;
        let fp = self.local(u, px);
        u[k] = keep - e;
        let fm = self.local(u, px);
        u[k] = keep;
        (fp - fm) / (2.0 * e)
    }

    // Minimizes the strictly convex local energy along coordinate k by
    // bracketing a sign change of its slope, then regula falsi (Illinois).
    fn minimize_coordinate(&self, u: &mut [f64], k: usize) {
        let start = u[k];
        let slope_at = |v: f64, u: &mut [f64]| {
            u[k] = v;
            self.coordinate_slope(u, k)
        };
        let s0 = slope_at(start, u);
        if s0 == 0.0 {
            u[k] = start;
            return;
        }
        let dir = -s0.signum();
        let mut width = 1e-3;
        let (mut a, mut fa) = (start, s0);
        let (mut b, mut fb);
        loop {
            b = start + dir * width;
            fb = slope_at(b, u);
            if fb.signum() != fa.signum() || fb == 0.0 {
                break;
            }
            a = b;
            fa = fb;
            width *= 2.0;
            if width > 1e6 {
                u[k] = b;
                return;
            }
        }
        let mut side = 0i8;
        for _ in 0..100 {
            if fb == 0.0 || (b - a).abs() <= 1e-14 * (1.0 + b.abs()) {
                break;
            }
            let m = (a * fb - b * fa) / (fb - fa);
            let fm = slope_at(m, u);
            if fm.signum() == fb.signum() {
                b = m;
                fb = fm;
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            } else {
                a = m;
                fa = fm;
                if side == -1 {
                    fb *= 0.5;
                }
                side = -1;
            }
            if fm.abs() < 1e-12 {
                b = m;
                break;
            }
        }
        u[k] = if fa.abs() < fb.abs() { a } else { b };
    }

    fn max_slope(&self, u: &mut [f64]) -> f64 {
        (0..u.len()).fold(0.0f64, |m, k| m.max(self.coordinate_slope(u, k).abs()))
    }

    fn coordinate_descent(&self, u: &mut [f64]) -> f64 {
        for sweep in 0..MAX_SWEEPS {
            for k in 0..u.len() {
                self.minimize_coordinate(u, k);
            }
            if sweep % 4 == 3 || sweep + 1 == MAX_SWEEPS {
                let s = self.max_slope(u);
                if s <= STATIONARITY {
                    return s;
                }
            }
        }
        self.max_slope(u)
    }

    fn grid_search(&self, n: usize) -> Vec<f64> {
        let mut best = vec![0.0; n];
        let mut best_val = f64::INFINITY;
        let mut visit = |lo: &[f64], hi: &[f64], step: f64, best: &mut Vec<f64>| {
            let counts: Vec<usize> = lo.iter().zip(hi).map(|(l, h)| ((h - l) / step).round() as usize + 1).collect();
            let total: usize = counts.iter().product();
            let mut u = vec![0.0; n];
            let mut found = best.clone();
            for idx in 0..total {
                let mut rem = idx;
                for (d, &cnt) in counts.iter().enumerate() {
                    u[d] = lo[d] + step * (rem % cnt) as f64;
                    rem /= cnt;
                }
                let v = self.total(&u);
                if v < best_val {
                    best_val = v;
                    found.copy_from_slice(&u);
                }
            }
            *best = found;
        };
        visit(&vec![SEARCH_LO; n], &vec![SEARCH_HI; n], COARSE_STEP, &mut best);
        let mut step = COARSE_STEP;
        for _ in 0..2 {
            let lo: Vec<f64> = best.iter().map(|b| b - step).collect();
            let hi: Vec<f64> = best.iter().map(|b| b + step).collect();
            step /= 10.0;
            visit(&lo, &hi, step, &mut best);
        }
        best
    }
}

/// Details of a reference minimization.
#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub minimizer: ImageField<f64>,
    pub value: f64,
    /// Largest coordinate slope at the returned point.
    pub stationarity: f64,
    /// Difference of the values reached by the two independent routes.
    pub route_gap: f64,
    pub grid_searched: bool,
}

/// Reference minimizer of `K_δ` (δ ≥ 0) and its value.
pub fn brute_force_min(tp: &TinyProblem, delta: f64) -> Result<(ImageField<f64>, f64)> {
    let out = brute_force_detailed(tp, delta)?;
    Ok((out.minimizer, out.value))
}

pub fn brute_force_detailed(tp: &TinyProblem, delta: f64) -> Result<OracleOutcome> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::Domain(format!("delta must be >= 0, got {delta}")));
    }
    let p = &tp.problem;
    let ref_energy = ReferenceEnergy { p, delta };
    let n = tp.unknowns();
    let grid_searched = n <= MAX_GRID_UNKNOWNS;

    // Route A: exhaustive search then polishing, or a cold start from the midpoint of the box.
    let mut a = if grid_searched { ref_energy.grid_search(n) } else { vec![0.5 * (SEARCH_LO + SEARCH_HI); n] };
    let sa = ref_energy.coordinate_descent(&mut a);
    // Route B: coordinate descent from the observed data.
    let mut b = p.u0.values().to_vec();
    let sb = ref_energy.coordinate_descent(&mut b);

    let (va, vb) = (ref_energy.total(&a), ref_energy.total(&b));
    let gap = (va - vb).abs();
    if gap > AGREEMENT * (1.0 + va.abs().max(vb.abs())) {
        return Err(Error::OracleDisagreement(format!("values {va} and {vb} differ by {gap}")));
    }
    let (u, value, stationarity) = if va <= vb { (a, va, sa) } else { (b, vb, sb) };
    Ok(OracleOutcome {
        minimizer: p.u0.with_values(u)?,
        value,
        stationarity,
        route_gap: gap,
        grid_searched,
    })
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 32)
}

/// `∫₀ᵗ ∫₀ˢ (1 + r)^(-μ) dr ds` by nested adaptive Simpson quadrature.
pub fn numeric_phi(mu: f64, t: f64) -> Result<f64> {
    if !(mu.is_finite() && mu > 1.0) {
        return Err(Error::Domain(format!("ellipticity exponent must exceed 1, got {mu}")));
    }
    if !(t.is_finite() && (0.0..=1e3).contains(&t)) {
        return Err(Error::Domain(format!("quadrature supports t in [0, 1000], got {t}")));
    }
    let weight = |r: f64| (1.0 + r).powf(-mu);
    let inner_tol = 1e-12;
    let inner = |s: f64| adaptive_simpson(&weight, 0.0, s, inner_tol);
    Ok(adaptive_simpson(&inner, 0.0, t, 1e-10 * (1.0 + t)))
}

/// One cell of the solver-versus-oracle matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OracleConfiguration {
    pub density: DensityKind,
    pub linear_data: bool,
    pub masked: bool,
}

impl OracleConfiguration {
    pub fn all() -> Vec<Self> {
        let mut out = Vec::new();
        for density in [DensityKind::MuFamily, DensityKind::MinimalSurface] {
            for linear_data in [false, true] {
                for masked in [false, true] {
                    out.push(Self { density, linear_data, masked });
                }
            }
        }
        out
    }
}

/// Absolute floor of the relative value error; some instances have minimum 0.
pub const VALUE_FLOOR: f64 = 1e-12;

const TINY_SHAPES: [(usize, usize, usize); 6] = [(2, 1, 1), (2, 2, 1), (3, 2, 1), (2, 2, 2), (3, 3, 1), (4, 4, 1)];

/// Random instance of `config` with data in `[0, 1]`.
pub fn random_tiny_problem<R: Rng>(rng: &mut R, config: OracleConfiguration) -> Result<TinyProblem> {
    let (w, h, c) = TINY_SHAPES[rng.gen_range(0..TINY_SHAPES.len())];
    let u0 = ImageField::new(w, h, c, 1.0, (0..w * h * c).map(|_| rng.gen::<f64>()).collect())?;
    let density = match config.density {
        DensityKind::MuFamily => Density::mu_family(rng.gen_range(1.2..1.9))?,
        DensityKind::MinimalSurface => Density::minimal_surface(),
    };
    let data = if config.linear_data {
        DataTermProfile::linear_growth(rng.gen_range(0.2..1.0))?
    } else {
        DataTermProfile::quadratic(rng.gen_range(1.0..10.0))?
    };
    let pixels = w * h;
    let mut missing = vec![false; pixels];
    if config.masked {
        // Half of the pixels, chosen at random, never all of them.
        let mut order: Vec<usize> = (0..pixels).collect();
        for i in (1..pixels).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        for &px in order.iter().take(pixels / 2) {
            missing[px] = true;
        }
    }
    TinyProblem::new(Problem::new(density, data, u0, Mask::new(w, h, missing)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleComparison {
    pub config: OracleConfiguration,
    pub instances: usize,
    pub delta: f64,
    pub max_value_rel_err: f64,
    pub max_arg_err: f64,
    pub max_route_gap: f64,
}

/// Continuation output versus the reference minimizer at the final δ of the
/// schedule, over `instances` random problems of `config`.
pub fn compare_solver(config: OracleConfiguration, instances: usize, seed: u64, cfg: &SolverConfig<f64>) -> Result<OracleComparison> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delta = *cfg.schedule().last().expect("schedule has at least one stage");
    let mut out = OracleComparison { config, instances, delta, max_value_rel_err: 0.0, max_arg_err: 0.0, max_route_gap: 0.0 };
    for _ in 0..instances {
        let tp = random_tiny_problem(&mut rng, config)?;
        let (u, _) = continuation(tp.problem(), cfg)?;
        let reference = brute_force_detailed(&tp, delta)?;
        let value = energy(tp.problem(), &u, delta)?.total;
        let rel = (value - reference.value).abs() / (reference.value.abs() + VALUE_FLOOR);
        let arg = u.values().iter().zip(reference.minimizer.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        out.max_value_rel_err = out.max_value_rel_err.max(rel);
        out.max_arg_err = out.max_arg_err.max(arg);
        out.max_route_gap = out.max_route_gap.max(reference.route_gap);
    }
    Ok(out)
}
