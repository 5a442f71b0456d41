//! Level sets, fractional moments and tails of Green-function observables.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::correlators::{Interval, SpectralData};
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::model::{Distribution, Mode, Model, Site};
use crate::quadrature::gl_panel;
use crate::resolvent::{EnergyPoint, Resolvent};
use crate::rng;
use crate::stats::{self, line_fit, Estimator, MOM_GROUPS};

/// Threshold profile of a level-set measure or exceedance probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailProfile {
    /// Thresholds in increasing order.
    pub t_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub slope: f64,
    pub slope_se: f64,
    /// `C` in `value ≈ C / t^{-slope}`, from the fit intercept.
    pub constant: f64,
    /// `2 Σ c_n` for Boole profiles.
    pub reference: Option<f64>,
    /// Indicator exceedance counts for Monte-Carlo profiles.
    pub exceedances: Vec<usize>,
    /// Factor applied to the requested grid to reach enough exceedances.
    pub rescaled: f64,
}

pub(crate) fn fit_profile(t: &[f64], v: &[f64]) -> (f64, f64, f64) {
    let (x, y): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(v)
        .filter(|(_, v)| **v > 0.0)
        .map(|(t, v)| (t.ln(), v.ln()))
        .unzip();
    match line_fit(&x, &y, None) {
        Ok(f) => (f.slope, f.slope_se, f.intercept.exp()),
        Err(_) => (f64::NAN, f64::NAN, f64::NAN),
    }
}

/// Rational function `f(E) = Σ c_n / (E_n - E)` with positive weights.
#[derive(Debug, Clone)]
pub struct PoleSum {
    /// Distinct poles, ascending, with merged weights.
    pub poles: Vec<f64>,
    pub weights: Vec<f64>,
}

impl PoleSum {
    pub fn new(poles: &[f64], weights: &[f64]) -> Self {
        let mut pairs: Vec<(f64, f64)> = poles
            .iter()
            .zip(weights)
            .filter(|(_, &c)| c > 0.0)
            .map(|(&e, &c)| (e, c))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut p: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut w: Vec<f64> = Vec::with_capacity(pairs.len());
        for (e, c) in pairs {
            if p.last() == Some(&e) {
                *w.last_mut().unwrap() += c;
            } else {
                p.push(e);
                w.push(c);
            }
        }
        PoleSum { poles: p, weights: w }
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `f(E_k + u)` evaluated with pole-relative differences.
    fn at_offset(&self, k: usize, u: f64) -> f64 {
        let base = self.poles[k];
        self.poles
            .iter()
            .zip(&self.weights)
            .enumerate()
            .map(|(n, (&e, &c))| if n == k { -c / u } else { c / ((e - base) - u) })
            .sum()
    }

    pub fn eval(&self, e: f64) -> f64 {
        self.poles.iter().zip(&self.weights).map(|(&p, &c)| c / (p - e)).sum()
    }

    /// Intervals making up `{E : |f(E)| ≥ t}`, each as (pole index, signed
    /// offset range) so widths are exact.
    fn level_pieces(&self, t: f64) -> Vec<(f64, f64)> {
        let n = self.poles.len();
        let mut out = Vec::with_capacity(2 * n);
        for k in 0..n {
            // left of pole k: f ≥ t on [E_k - δ, E_k)
            let gap = if k == 0 { f64::INFINITY } else { self.poles[k] - self.poles[k - 1] };
            let d = bisect_offset(|u| self.at_offset(k, -u) - t, gap, self.weights[k] / t);
            out.push((self.poles[k] - d, d));
            // right of pole k: f ≤ -t on (E_k, E_k + δ]
            let gap = if k + 1 == n { f64::INFINITY } else { self.poles[k + 1] - self.poles[k] };
            let d = bisect_offset(|u| -self.at_offset(k, u) - t, gap, self.weights[k] / t);
            out.push((self.poles[k], d));
        }
        out
    }

    /// Lebesgue measure of `{E ∈ window : |f(E)| ≥ t}`.
    pub fn level_measure(&self, t: f64, window: Option<Interval>) -> f64 {
        if self.poles.is_empty() || !(t > 0.0) {
            return if self.poles.is_empty() { 0.0 } else { f64::INFINITY };
        }
        let pieces = self.level_pieces(t);
        match window {
            None => pieces.iter().map(|p| p.1).sum(),
            Some(w) => pieces
                .iter()
                .map(|&(lo, d)| ((lo + d).min(w.hi) - lo.max(w.lo)).max(0.0))
                .sum(),
        }
    }
}

/// Root of a function decreasing from +∞ at `u → 0⁺` on `(0, gap)`.
fn bisect_offset(g: impl Fn(f64) -> f64, gap: f64, guess: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, gap);
    if !gap.is_finite() {
        let mut u = guess.max(f64::MIN_POSITIVE);
        while g(u) > 0.0 {
            lo = u;
            u *= 2.0;
        }
        hi = u;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Level-set measures of `f(E) = Σ_{E_n ∈ J} c_n/(E_n - E)`,
/// `c_n = |⟨ψ_n, χ_x φ⟩|²`, at each threshold.
pub fn boole_tail(s: &SpectralData, j: Interval, x: Site, phi: &[Complex64], t_grid: &[f64]) -> Result<TailProfile> {
    let g = s
        .geometry
        .as_ref()
        .ok_or_else(|| Error::invalid("spectral data", "no geometry attached"))?;
    if phi.len() != s.dim() {
        return Err(Error::invalid("phi", format!("length {} for a grid of {}", phi.len(), s.dim())));
    }
    let norm: f64 = phi.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::invalid("phi", format!("norm {norm} is not 1")));
    }
    let chi = g.chi(x);
    let range = s.window(j);
    let poles: Vec<f64> = s.eigenvalues[range.clone()].to_vec();
    let weights: Vec<f64> = range
        .map(|n| {
            chi.iter()
                .map(|&q| s.vectors[(q, n)].conj() * phi[q])
                .sum::<Complex64>()
                .norm_sqr()
        })
        .collect();
    let f = PoleSum::new(&poles, &weights);
    Ok(pole_sum_profile(&f, t_grid))
}

/// Level-set profile of a pole sum; thresholds below the resolvable range use
/// Boole's closed form `2 Σ c / t`.
pub fn pole_sum_profile(f: &PoleSum, t_grid: &[f64]) -> TailProfile {
    let mut t: Vec<f64> = t_grid.to_vec();
    t.sort_by(f64::total_cmp);
    let total = f.total();
    let spread = f.poles.last().zip(f.poles.first()).map_or(0.0, |(a, b)| a - b).max(1e-300);
    let values: Vec<f64> = t
        .iter()
        .map(|&t| {
            if f.poles.is_empty() {
                0.0
            } else if t * spread < 1e-12 * total {
                2.0 * total / t
            } else {
                f.level_measure(t, None)
            }
        })
        .collect();
    let (slope, slope_se, constant) = fit_profile(&t, &values);
    TailProfile {
        t_grid: t,
        values,
        slope,
        slope_se,
        constant,
        reference: Some(2.0 * total),
        exceedances: Vec::new(),
        rescaled: 1.0,
    }
}

/// Result of a mesh-refined energy integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyIntegral {
    pub value: f64,
    pub previous: f64,
    pub relative_change: f64,
    /// Gauss panels per half-gap at the final level.
    pub panels: usize,
}

/// Default relative tolerance of the mesh refinement.
pub const ENERGY_TOLERANCE: f64 = 1e-4;
const MAX_REFINEMENTS: usize = 16;

/// Spectral representation of `χ_x G χ_y` for energy integration.
struct BlockSpectrum {
    eigen: Vec<f64>,
    left: CMatrix,
    right: CMatrix,
    scalar: Option<Vec<Complex64>>,
    eps: f64,
}

impl BlockSpectrum {
    fn new(s: &SpectralData, rows: &[usize], cols: &[usize], eps: f64) -> Self {
        let all = 0..s.dim();
        let left = s.restricted(rows, all.clone());
        let right = s.restricted(cols, all);
        let scalar = (rows.len() == 1 && cols.len() == 1)
            .then(|| (0..s.dim()).map(|n| left[(0, n)] * right[(0, n)].conj()).collect());
        BlockSpectrum {
            eigen: s.eigenvalues.clone(),
            left,
            right,
            scalar,
            eps,
        }
    }

    /// `‖χ_x G(E + iε) χ_y‖` at `E = base + u`, where `base` is an eigenvalue
    /// index or an absolute energy.
    fn norm(&self, base: Base, u: f64) -> f64 {
        let (b, centre) = match base {
            Base::Pole(k) => (self.eigen[k], Some(k)),
            Base::Abs(e) => (e, None),
        };
        let d = |n: usize| {
            let re = if Some(n) == centre { -u } else { (self.eigen[n] - b) - u };
            Complex64::new(re, -self.eps)
        };
        if let Some(c) = &self.scalar {
            return c.iter().enumerate().map(|(n, c)| c / d(n)).sum::<Complex64>().norm();
        }
        let mut l = self.left.clone();
        for n in 0..l.ncols() {
            let f = 1.0 / d(n);
            for i in 0..l.nrows() {
                l[(i, n)] *= f;
            }
        }
        linalg::op_norm(&(l * self.right.adjoint()))
    }
}

#[derive(Debug, Clone, Copy)]
enum Base {
    Pole(usize),
    Abs(f64),
}

/// One half-gap: offsets `u ∈ [u0, u1]` (in the substituted variable) around
/// a base; `sign` is the direction of increasing energy.
#[derive(Debug, Clone, Copy)]
struct HalfGap {
    base: Base,
    sign: f64,
    lo: f64,
    hi: f64,
}

/// `∫_J ‖χ_x G_{E+iε} χ_y‖^s dE` with pole-adjacent substitutions.
pub fn fm_energy_integral(s: &SpectralData, x: Site, y: Site, power: f64, j: Interval, eps: f64) -> Result<EnergyIntegral> {
    let g = s
        .geometry
        .as_ref()
        .ok_or_else(|| Error::invalid("spectral data", "no geometry attached"))?;
    fm_energy_integral_sets(s, &g.chi(x), &g.chi(y), power, j, eps, ENERGY_TOLERANCE)
}

pub fn fm_energy_integral_sets(
    s: &SpectralData,
    rows: &[usize],
    cols: &[usize],
    power: f64,
    j: Interval,
    eps: f64,
    tol: f64,
) -> Result<EnergyIntegral> {
    if !(power > 0.0 && power <= 1.0) {
        return Err(Error::invalid("s", format!("{power} not in (0, 1]")));
    }
    if !(eps >= 0.0) {
        return Err(Error::invalid("eps", "must be >= 0"));
    }
    if power == 1.0 && eps == 0.0 {
        return Err(Error::invalid("s", "s = 1 diverges without regularization"));
    }
    if !(j.width() > 0.0) || !j.width().is_finite() {
        return Err(Error::invalid("J", "needs a bounded interval of positive width"));
    }
    let bs = BlockSpectrum::new(s, rows, cols, eps);
    let eig = &s.eigenvalues;
    // substitution u ↦ offset
    let map = |u: f64| -> (f64, f64) {
        if eps > 0.0 {
            (eps * u.sinh(), eps * u.cosh())
        } else {
            let p = 1.0 / (1.0 - power);
            (u.powf(p), p * u.powf(p - 1.0))
        }
    };
    let inv = |d: f64| -> f64 {
        if eps > 0.0 {
            (d / eps).asinh()
        } else {
            d.powf(1.0 - power)
        }
    };
    let inside: Vec<usize> = (0..eig.len()).filter(|&n| eig[n] > j.lo && eig[n] < j.hi).collect();
    let mut cuts: Vec<f64> = vec![j.lo];
    cuts.extend(inside.iter().map(|&n| eig[n]));
    cuts.push(j.hi);
    let mut halves = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        // nearest pole at or below a, and at or above b
        let below = eig.partition_point(|&e| e <= a).checked_sub(1);
        let above = {
            let i = eig.partition_point(|&e| e < b);
            (i < eig.len()).then_some(i)
        };
        match below {
            Some(k) => halves.push(HalfGap {
                base: Base::Pole(k),
                sign: 1.0,
                lo: inv(a - eig[k]),
                hi: inv(mid - eig[k]),
            }),
            None => halves.push(HalfGap {
                base: Base::Abs(a),
                sign: 1.0,
                lo: f64::NAN,
                hi: mid - a,
            }),
        }
        match above {
            Some(k) => halves.push(HalfGap {
                base: Base::Pole(k),
                sign: -1.0,
                lo: inv(eig[k] - b),
                hi: inv(eig[k] - mid),
            }),
            None => halves.push(HalfGap {
                base: Base::Abs(b),
                sign: -1.0,
                lo: f64::NAN,
                hi: b - mid,
            }),
        }
    }
    let integrate = |panels: usize| -> f64 {
        halves
            .iter()
            .map(|h| {
                if h.lo.is_nan() {
                    // plain panel in the energy offset, no pole next to it
                    let step = h.hi / panels as f64;
                    (0..panels)
                        .map(|k| gl_panel(k as f64 * step, (k + 1) as f64 * step, |d| bs.norm(h.base, h.sign * d).powf(power)))
                        .sum::<f64>()
                } else {
                    let step = (h.hi - h.lo) / panels as f64;
                    (0..panels)
                        .map(|k| {
                            let (a, b) = (h.lo + k as f64 * step, h.lo + (k + 1) as f64 * step);
                            gl_panel(a, b, |u| {
                                let (d, jac) = map(u);
                                bs.norm(h.base, h.sign * d).powf(power) * jac
                            })
                        })
                        .sum::<f64>()
                }
            })
            .sum()
    };
    let mut panels = 1;
    let mut prev = integrate(panels);
    for _ in 0..MAX_REFINEMENTS {
        panels *= 2;
        let cur = integrate(panels);
        let change = (cur - prev).abs() / cur.abs().max(f64::MIN_POSITIVE);
        if change < tol {
            return Ok(EnergyIntegral {
                value: cur,
                previous: prev,
                relative_change: change,
                panels,
            });
        }
        prev = cur;
    }
    let last = integrate(panels * 2);
    Err(Error::NonConvergence { last, previous: prev })
}

/// `∫_J ‖χ_x G_E χ_y‖^s dE` as `∫₀^∞ |{E ∈ J : |G| ≥ t}| d(t^s)` for a
/// diagonal scalar observable, via level-set measures.
pub fn layer_cake_integral(f: &PoleSum, j: Interval, power: f64) -> f64 {
    let c_in: f64 = f
        .poles
        .iter()
        .zip(&f.weights)
        .filter(|(p, _)| j.contains(**p))
        .map(|(_, c)| c)
        .sum();
    let scale = f.total().max(1e-300) / j.width();
    let (t_lo, t_hi) = (1e-10 * scale, 1e7 * scale);
    let mut breaks = vec![t_lo.ln(), t_hi.ln()];
    for e in [j.lo, j.hi] {
        let v = f.eval(e).abs();
        if v > t_lo && v < t_hi {
            breaks.push(v.ln());
        }
    }
    breaks.sort_by(f64::total_cmp);
    let panels = 96;
    let mut total = j.width() * t_lo.powf(power);
    for w in breaks.windows(2) {
        let step = (w[1] - w[0]) / panels as f64;
        for k in 0..panels {
            let a = w[0] + k as f64 * step;
            total += gl_panel(a, a + step, |v| {
                let t = v.exp();
                f.level_measure(t, Some(j)) * power * t.powf(power)
            });
        }
    }
    total + 2.0 * c_in * power * t_hi.powf(power - 1.0) / (1.0 - power)
}

/// Observable whose norm is averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Proxy {
    /// `χ_x G χ_y`.
    #[default]
    Chi,
    /// `U_x G U_y` with the bump weights.
    Bump,
}

/// Monte-Carlo fractional moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub s: f64,
    pub z: EnergyPoint,
    pub n: usize,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub estimator: Estimator,
}

/// Disorder-average request shared by the Monte-Carlo operations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisorderQuery {
    pub z: EnergyPoint,
    pub x: Site,
    pub y: Site,
    pub proxy: Proxy,
    pub seed: u64,
}

/// Rows, columns and diagonal weights of the observable.
fn observable_sets(model: &Model, x: Site, y: Site, proxy: Proxy) -> Result<(Vec<(usize, f64)>, Vec<(usize, f64)>)> {
    let pick = |s: Site| -> Vec<(usize, f64)> {
        match proxy {
            Proxy::Chi => model.chi(s).into_iter().map(|i| (i, 1.0)).collect(),
            Proxy::Bump => model.bump(s),
        }
    };
    let (r, c) = (pick(x), pick(y));
    if r.is_empty() || c.is_empty() {
        return Err(Error::invalid("site", format!("{x:?} or {y:?} has no support in the box")));
    }
    Ok((r, c))
}

/// `‖W_x G(z) W_y‖` for one realization.
pub fn observable_norm(model: &Model, eta: &[f64], q: &DisorderQuery) -> Result<f64> {
    let (r, c) = observable_sets(model, q.x, q.y, q.proxy)?;
    let h = model.hamiltonian_with(eta);
    let res = Resolvent::new(&h, q.z)?;
    let rows: Vec<usize> = r.iter().map(|p| p.0).collect();
    let cols: Vec<usize> = c.iter().map(|p| p.0).collect();
    let mut b = res.block_of(&rows, &cols)?;
    for (i, &(_, u)) in r.iter().enumerate() {
        for (k, &(_, w)) in c.iter().enumerate() {
            b[(i, k)] *= u * w;
        }
    }
    Ok(linalg::op_norm(&b))
}

/// Per-realization observable norms for `n` child seeds of `q.seed`.
pub fn sample_norms(model: &Model, q: &DisorderQuery, n: usize) -> Result<Vec<f64>> {
    rng::par_samples(q.seed, n, |seed| observable_norm(model, &model.sample(seed).eta, q))
        .into_iter()
        .collect()
}

/// `E ‖W_x G(z) W_y‖^s` over `n` fresh realizations.
pub fn fm_disorder(model: &Model, q: &DisorderQuery, power: f64, n: usize, estimator: Estimator) -> Result<MomentEstimate> {
    let norms = sample_norms(model, q, n)?;
    moment_from_norms(&norms, q, power, estimator)
}

/// Moment estimate from precomputed norms (common random numbers across s).
pub fn moment_from_norms(norms: &[f64], q: &DisorderQuery, power: f64, estimator: Estimator) -> Result<MomentEstimate> {
    if !(0.0..=1.0).contains(&power) {
        return Err(Error::invalid("s", format!("{power} not in [0, 1]")));
    }
    let n = norms.len();
    if estimator == Estimator::MedianOfMeans && n < MOM_GROUPS {
        return Err(Error::invalid("N", format!("median-of-means needs >= {MOM_GROUPS} samples, got {n}")));
    }
    if n == 0 {
        return Err(Error::Insufficient("no samples".into()));
    }
    let values: Vec<f64> = norms.iter().map(|v| if power == 0.0 { 1.0 } else { v.powf(power) }).collect();
    let mean = estimator.apply(&values);
    let (ci_lo, ci_hi) = stats::bootstrap_ci(&values, |v| estimator.apply(v), rng::child_seed(q.seed, u64::MAX));
    Ok(MomentEstimate {
        s: power,
        z: q.z,
        n,
        mean,
        ci_lo,
        ci_hi,
        estimator,
    })
}

/// Tail estimator for [`weak_l1_tail`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailEstimator {
    /// Fraction of realizations with `‖·‖ > t`.
    Indicator,
    /// Average of the exact conditional probability given all couplings but
    /// `η_x` (rank-one lattice couplings only).
    #[default]
    Conditional,
}

/// Minimum number of raw exceedances required at the largest threshold.
pub const MIN_EXCEEDANCES: usize = 20;
/// Minimum sample count for tail profiles.
pub const MIN_TAIL_SAMPLES: usize = 1000;

/// Probability that `|1 + λ η g| < ρ` for η drawn from `law`.
fn disk_probability(law: &Distribution, lambda: f64, g: Complex64, rho: f64) -> f64 {
    let a = lambda * lambda * g.norm_sqr();
    let b = 2.0 * lambda * g.re;
    let c = 1.0 - rho * rho;
    if a == 0.0 {
        return if c < 0.0 { 1.0 } else { 0.0 };
    }
    let disc = b * b - 4.0 * a * c;
    if disc <= 0.0 {
        return 0.0;
    }
    let sq = disc.sqrt();
    // stable roots of a η² + b η + c
    let qv = -0.5 * (b + b.signum() * sq);
    let (r1, r2) = if qv == 0.0 { (-sq / (2.0 * a), sq / (2.0 * a)) } else { (qv / a, c / qv) };
    let (lo, hi) = (r1.min(r2).clamp(0.0, 1.0), r1.max(r2).clamp(0.0, 1.0));
    (law.cdf(hi) - law.cdf(lo)).max(0.0)
}

/// Empirical `P(‖W_x G W_y‖ > t)` over `n` realizations; slope fitted on
/// the upper decade of the (possibly rescaled) grid.
pub fn weak_l1_tail(model: &Model, q: &DisorderQuery, n: usize, t_grid: &[f64], estimator: TailEstimator) -> Result<TailProfile> {
    if n < MIN_TAIL_SAMPLES {
        return Err(Error::invalid("N", format!("tail profiles need >= {MIN_TAIL_SAMPLES} samples, got {n}")));
    }
    if t_grid.iter().any(|&t| !(t > 0.0)) || t_grid.len() < 2 {
        return Err(Error::invalid("t_grid", "needs >= 2 positive thresholds"));
    }
    let conditional = estimator == TailEstimator::Conditional;
    if conditional && (model.spec().mode != Mode::Lattice || model.spec().lambda == 0.0) {
        return Err(Error::invalid("estimator", "conditional tails need rank-one lattice couplings with λ > 0"));
    }
    let ix = model.coupling_index(q.x).ok_or_else(|| Error::invalid("x", "not a coupling site"))?;
    let gx = model.geometry().site_index(q.x).ok_or_else(|| Error::invalid("x", "outside the box"))?;
    let gy = model.geometry().site_index(q.y).ok_or_else(|| Error::invalid("y", "outside the box"))?;
    let lambda = model.spec().lambda;
    // per realization: the observable, and (g = G⁰_xx, G⁰_xy) with η_x removed
    let samples: Vec<(f64, Complex64, Complex64)> = rng::par_samples(q.seed, n, |seed| -> Result<_> {
        let mut eta = model.sample(seed).eta;
        if !conditional {
            return Ok((observable_norm(model, &eta, q)?, Complex64::default(), Complex64::default()));
        }
        let ex = eta[ix];
        eta[ix] = 0.0;
        let h = model.hamiltonian_with(&eta);
        let res = Resolvent::new(&h, q.z)?;
        let col = res.columns(&[gx])?;
        let (gxx, gxy) = if gx == gy {
            (col[(gx, 0)], col[(gx, 0)])
        } else {
            // G⁰_xy = row x, column y
            let cy = res.columns(&[gy])?;
            (col[(gx, 0)], cy[(gx, 0)])
        };
        let v = (gxy / (1.0 + lambda * ex * gxx)).norm();
        Ok((v, gxx, gxy))
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut t: Vec<f64> = t_grid.to_vec();
    t.sort_by(f64::total_cmp);
    let mut sorted: Vec<f64> = samples.iter().map(|s| s.0).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let t_max = *t.last().unwrap();
    let mut rescaled = 1.0;
    let exceed_top = sorted.iter().filter(|&&v| v > t_max).count();
    if exceed_top < MIN_EXCEEDANCES {
        let anchor = sorted.get(MIN_EXCEEDANCES).copied().unwrap_or(0.0);
        if !(anchor > 0.0) {
            return Err(Error::Insufficient(format!(
                "fewer than {MIN_EXCEEDANCES} positive observations; the grid cannot be widened"
            )));
        }
        rescaled = anchor / t_max;
        t.iter_mut().for_each(|v| *v *= rescaled);
    }
    let exceedances: Vec<usize> = t.iter().map(|&tt| sorted.iter().filter(|&&v| v > tt).count()).collect();
    let law = &model.spec().distribution;
    let values: Vec<f64> = t
        .iter()
        .zip(&exceedances)
        .map(|(&tt, &k)| {
            if conditional {
                samples
                    .iter()
                    .map(|&(_, g, gxy)| disk_probability(law, lambda, g, gxy.norm() / tt))
                    .sum::<f64>()
                    / n as f64
            } else {
                k as f64 / n as f64
            }
        })
        .collect();
    let top = *t.last().unwrap();
    let (ut, uv): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(&values)
        .filter(|(tt, _)| **tt >= top / 10.0 * (1.0 - 1e-12))
        .map(|(a, b)| (*a, *b))
        .unzip();
    if ut.len() < 2 {
        return Err(Error::Insufficient("upper decade of the threshold grid holds < 2 points".into()));
    }
    let (slope, slope_se, constant) = fit_profile(&ut, &uv);
    Ok(TailProfile {
        t_grid: t,
        values,
        slope,
        slope_se,
        constant,
        reference: None,
        exceedances,
        rescaled,
    })
}

/// One `(z, w)` pair of a Hölder scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderRow {
    pub z: EnergyPoint,
    pub w: EnergyPoint,
    pub distance: f64,
    pub difference: f64,
    /// `difference / distance^s`, zero when `z = w`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderScan {
    pub s: f64,
    pub rows: Vec<HolderRow>,
    /// Largest ratio with `n` samples.
    pub c_hat: f64,
    /// Largest ratio with `2n` samples (the first `n` shared).
    pub c_hat_doubled: f64,
    pub stable: bool,
}

/// Relative tolerance of the doubling stability check.
pub const HOLDER_STABILITY: f64 = 0.2;

/// Hölder ratios of `z ↦ E ‖W_x G(z) W_y‖^s` over a grid of pairs, with
/// common random numbers across energies.
pub fn holder_scan(model: &Model, power: f64, z_grid: &[EnergyPoint], w_grid: &[EnergyPoint], q: &DisorderQuery, n: usize) -> Result<HolderScan> {
    if !(power > 0.0 && power <= 0.5) {
        return Err(Error::invalid("s", format!("{power} not in (0, 1/2]")));
    }
    if n == 0 {
        return Err(Error::Insufficient("no samples".into()));
    }
    let mut energies: Vec<EnergyPoint> = z_grid.iter().chain(w_grid).copied().collect();
    energies.sort_by(|a, b| a.e.total_cmp(&b.e).then(a.eps.total_cmp(&b.eps)));
    energies.dedup();
    let per_sample: Vec<Vec<f64>> = rng::par_samples(q.seed, 2 * n, |seed| -> Result<Vec<f64>> {
        let eta = model.sample(seed).eta;
        energies
            .iter()
            .map(|&z| observable_norm(model, &eta, &DisorderQuery { z, ..*q }).map(|v| v.powf(power)))
            .collect()
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let mean_over = |k: usize, m: usize| per_sample[..m].iter().map(|r| r[k]).sum::<f64>() / m as f64;
    let idx = |z: &EnergyPoint| energies.iter().position(|e| e == z).expect("energy present");
    let scan = |m: usize| -> Vec<HolderRow> {
        let means: Vec<f64> = (0..energies.len()).map(|k| mean_over(k, m)).collect();
        z_grid
            .iter()
            .flat_map(|z| w_grid.iter().map(move |w| (z, w)))
            .map(|(z, w)| {
                let distance = (z.z() - w.z()).norm();
                let difference = (means[idx(z)] - means[idx(w)]).abs();
                let ratio = if distance == 0.0 { 0.0 } else { difference / distance.powf(power) };
                HolderRow {
                    z: *z,
                    w: *w,
                    distance,
                    difference,
                    ratio,
                }
            })
            .collect()
    };
    let rows = scan(n);
    let doubled = scan(2 * n);
    let c_hat = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let c_hat_doubled = doubled.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let stable = c_hat.is_finite() && c_hat_doubled.is_finite() && (c_hat_doubled - c_hat).abs() <= HOLDER_STABILITY * c_hat.max(c_hat_doubled);
    Ok(HolderScan {
        s: power,
        rows,
        c_hat,
        c_hat_doubled,
        stable,
    })
}
