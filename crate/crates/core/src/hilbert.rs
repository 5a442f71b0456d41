//! Boundary values of `M₁(A - v + iδ')⁻¹M₂` for dissipative `A`: profiles,
//! the trace identity, conjugacy of real and imaginary parts, and weak-L¹
//! tails of the Hilbert-Schmidt norm.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::moments::{fit_profile, TailProfile};

/// Minimum grid size of a profile.
pub const MIN_GRID: usize = 64;
/// Allowed truncation of the principal-value integral, relative to `max ‖T‖_HS`.
pub const TRUNCATION_TOLERANCE: f64 = 1e-4;
/// Share of each grid half used to fit the tail model.
const TAIL_SHARE: f64 = 0.2;
const BISECTION_STEPS: usize = 60;

/// `A = B + iC` with `B`, `C` Hermitian and `C ≥ δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DissipativeOperator {
    pub b: CMatrix,
    pub c: CMatrix,
    /// Lowest eigenvalue of `C`; 0 for the self-adjoint case.
    pub delta: f64,
}

fn hermitian_defect(m: &CMatrix) -> f64 {
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn check_hermitian(m: &CMatrix, field: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::invalid(field, "must be square"));
    }
    let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if hermitian_defect(m) > 1e-12 * scale {
        return Err(Error::invalid(field, "must be Hermitian"));
    }
    Ok(())
}

impl DissipativeOperator {
    pub fn new(b: CMatrix, c: CMatrix) -> Result<Self> {
        check_hermitian(&b, "B")?;
        check_hermitian(&c, "C")?;
        if b.shape() != c.shape() {
            return Err(Error::invalid("C", "shape differs from B"));
        }
        let delta = c.clone().symmetric_eigenvalues().min();
        if !(delta > 0.0) {
            return Err(Error::invalid("C", format!("lowest eigenvalue {delta} is not positive")));
        }
        Ok(DissipativeOperator { b, c, delta })
    }

    /// `A = B`.
    pub fn self_adjoint(b: CMatrix) -> Result<Self> {
        check_hermitian(&b, "B")?;
        let n = b.nrows();
        Ok(DissipativeOperator {
            b,
            c: CMatrix::zeros(n, n),
            delta: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn is_self_adjoint(&self) -> bool {
        self.c.iter().all(|z| *z == Complex64::new(0.0, 0.0))
    }

    pub fn matrix(&self) -> CMatrix {
        &self.b + &self.c * Complex64::i()
    }

    /// `(A - v + iδ')⁻¹`.
    pub fn resolvent(&self, v: f64, delta_prime: f64) -> Result<CMatrix> {
        let n = self.dim();
        let shifted = self.matrix() - CMatrix::identity(n, n) * Complex64::new(v, -delta_prime);
        shifted
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::IllConditioned {
                what: "A - v + iδ'".into(),
                condition: f64::INFINITY,
            })
    }
}

/// `T(v) = M₁(A - v + iδ')⁻¹M₂` on a uniform grid.
#[derive(Debug, Clone)]
pub struct SandwichProfile {
    pub op: DissipativeOperator,
    pub m1: CMatrix,
    pub m2: CMatrix,
    pub v: Vec<f64>,
    pub dv: f64,
    pub delta_prime: f64,
    pub t: Vec<CMatrix>,
    pub hs: Vec<f64>,
    /// `‖Im T(v)‖₁`.
    pub im_trace: Vec<f64>,
    /// Largest eigenvalue of `Im T(v)`.
    pub im_max: Vec<f64>,
    pub m1_hs: f64,
    pub m2_hs: f64,
    /// `max ‖T(v) + M₁M₂/(v - c)‖_HS / (‖M₁‖_HS‖M₂‖_HS/|v - c|)` at the two
    /// grid ends, `c` the grid centre.
    pub tail_defect: f64,
}

impl SandwichProfile {
    /// `(v, hs_norm, im_trace_norm)` rows.
    pub fn rows(&self) -> Vec<(f64, f64, f64)> {
        self.v.iter().zip(&self.hs).zip(&self.im_trace).map(|((&v, &h), &i)| (v, h, i)).collect()
    }

    pub fn centre(&self) -> f64 {
        0.5 * (self.v[0] + self.v[self.v.len() - 1])
    }

    pub fn max_hs(&self) -> f64 {
        self.hs.iter().copied().fold(0.0, f64::max)
    }

    /// `‖T(v)‖_HS` at an arbitrary point.
    pub fn hs_at(&self, v: f64) -> Result<f64> {
        Ok(linalg::frobenius(&(&self.m1 * self.op.resolvent(v, self.delta_prime)? * &self.m2)))
    }
}

fn uniform_spacing(v: &[f64]) -> Result<f64> {
    if v.len() < MIN_GRID {
        return Err(Error::invalid("v_grid", format!("{} points, need at least {MIN_GRID}", v.len())));
    }
    let dv = (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64;
    if !(dv > 0.0) || v.windows(2).any(|w| ((w[1] - w[0]) - dv).abs() > 1e-9 * dv.max(1.0)) {
        return Err(Error::invalid("v_grid", "must be uniform and increasing"));
    }
    Ok(dv)
}

/// Uniform grid of `points` values over `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64).collect()
}

pub fn sandwich_profile(op: &DissipativeOperator, m1: &CMatrix, m2: &CMatrix, v_grid: &[f64], delta_prime: f64) -> Result<SandwichProfile> {
    let dv = uniform_spacing(v_grid)?;
    if !(delta_prime >= 0.0) || !(delta_prime + op.delta > 0.0) {
        return Err(Error::invalid("delta", "need δ' ≥ 0 and δ' + δ > 0"));
    }
    let n = op.dim();
    if m1.ncols() != n || m2.nrows() != n {
        return Err(Error::invalid("M", format!("M₁ must have {n} columns and M₂ {n} rows")));
    }
    let a = op.matrix();
    let t: Vec<CMatrix> = v_grid
        .par_iter()
        .map(|&v| -> Result<CMatrix> {
            let shifted = &a - CMatrix::identity(n, n) * Complex64::new(v, -delta_prime);
            let x = shifted.lu().solve(m2).ok_or_else(|| Error::IllConditioned {
                what: "A - v + iδ'".into(),
                condition: f64::INFINITY,
            })?;
            Ok(m1 * x)
        })
        .collect::<Result<_>>()?;
    let hs: Vec<f64> = t.iter().map(linalg::frobenius).collect();
    let (im_trace, im_max): (Vec<f64>, Vec<f64>) = t
        .par_iter()
        .map(|m| {
            if !m.is_square() {
                return (f64::NAN, f64::NAN);
            }
            let ev = linalg::imaginary_part(m).symmetric_eigenvalues();
            (ev.iter().map(|x| x.abs()).sum(), ev.max())
        })
        .unzip();
    let (m1_hs, m2_hs) = (linalg::frobenius(m1), linalg::frobenius(m2));
    let centre = 0.5 * (v_grid[0] + v_grid[v_grid.len() - 1]);
    let lead = m1 * m2;
    let tail_defect = [0, v_grid.len() - 1]
        .iter()
        .map(|&k| {
            let x = v_grid[k] - centre;
            let scale = m1_hs * m2_hs / x.abs();
            if scale == 0.0 {
                0.0
            } else {
                linalg::frobenius(&(&t[k] + &lead * Complex64::new(1.0 / x, 0.0))) / scale
            }
        })
        .fold(0.0, f64::max);
    Ok(SandwichProfile {
        op: op.clone(),
        m1: m1.clone(),
        m2: m2.clone(),
        v: v_grid.to_vec(),
        dv,
        delta_prime,
        t,
        hs,
        im_trace,
        im_max,
        m1_hs,
        m2_hs,
        tail_defect,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceIdentity {
    /// `π Σ_n ‖P_n M‖²_HS` over the eigenprojections of `B`.
    pub pole_sum: f64,
    /// Trapezoid over the grid plus exact Poisson tails.
    pub quadrature: f64,
    /// `π ‖M‖²_HS`.
    pub target: f64,
    pub pole_error: f64,
    pub quadrature_error: f64,
}

/// `∫ ‖Im T(v)‖₁ dv = π‖M‖²_HS` for `A = B` and `M₁ = M*`, `M₂ = M`.
pub fn trace_identity_check(p: &SandwichProfile) -> Result<TraceIdentity> {
    if !p.op.is_self_adjoint() {
        return Err(Error::invalid("C", "trace identity is checked for C = 0 only"));
    }
    if !(p.delta_prime > 0.0) {
        return Err(Error::invalid("delta", "needs δ' > 0"));
    }
    let scale = p.m2.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if p.m1.shape() != (p.m2.ncols(), p.m2.nrows()) || (&p.m1 - p.m2.adjoint()).iter().any(|z| z.norm() > 1e-14 * scale) {
        return Err(Error::invalid("M", "needs M₁ = M₂*"));
    }
    let (energies, u) = linalg::dense_hermitian_eigen(p.op.b.clone());
    let proj = u.adjoint() * &p.m2;
    let weights: Vec<f64> = (0..energies.len()).map(|k| proj.row(k).iter().map(|z| z.norm_sqr()).sum()).collect();
    let pole_sum = PI * weights.iter().sum::<f64>();
    let target = PI * p.m2_hs * p.m2_hs;
    let inner = p.dv * (p.im_trace.iter().sum::<f64>() - 0.5 * (p.im_trace[0] + p.im_trace[p.im_trace.len() - 1]));
    let (lo, hi) = (p.v[0], p.v[p.v.len() - 1]);
    let d = p.delta_prime;
    let tails: f64 = energies
        .iter()
        .zip(&weights)
        .map(|(&b, &w)| w * ((1.0f64).atan2((hi - b) / d) + (1.0f64).atan2((b - lo) / d)))
        .sum();
    let quadrature = inner + tails;
    Ok(TraceIdentity {
        pole_sum,
        quadrature,
        target,
        pole_error: (pole_sum - target).abs() / target,
        quadrature_error: (quadrature - target).abs() / target,
    })
}

/// `∫_V^∞ du / (u (v - u))` with `V > |v|`.
fn tail_first(v: f64, edge: f64) -> f64 {
    let a = v / edge;
    if a == 0.0 {
        -1.0 / edge
    } else {
        (-a).ln_1p() / (a * edge)
    }
}

/// `∫_V^∞ du / (u² (v - u))` with `V > |v|`.
fn tail_second(v: f64, edge: f64) -> f64 {
    let a = v / edge;
    let r = if a.abs() < 1e-2 {
        -(0.5 + a * (1.0 / 3.0 + a * (0.25 + a * (0.2 + a / 6.0))))
    } else {
        ((-a).ln_1p() + a) / (a * a)
    };
    r / (edge * edge)
}

/// Least-squares `g(x) ≈ c₁/x + c₂/x²` over the given points.
fn fit_tail(x: &[f64], g: &[Complex64]) -> (Complex64, Complex64) {
    let (mut s11, mut s12, mut s22) = (0.0, 0.0, 0.0);
    let (mut r1, mut r2) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    for (&x, &g) in x.iter().zip(g) {
        let (p, q) = (1.0 / x, 1.0 / (x * x));
        s11 += p * p;
        s12 += p * q;
        s22 += q * q;
        r1 += g * p;
        r2 += g * q;
    }
    let det = s11 * s22 - s12 * s12;
    if det.abs() <= 1e-300 {
        return (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    }
    ((r1 * s22 - r2 * s12) / det, (r2 * s11 - r1 * s12) / det)
}

/// Discrete Hilbert transform `(1/π) PV ∫ g(u) / (v - u) du` at the grid
/// points: odd-offset midpoint sums on the grid, with a fitted
/// `c₁/(u - c) + c₂/(u - c)²` tail integrated exactly beyond it. Returned at
/// the interior points `v[1..p-1]`; at the two ends the grid edge coincides
/// with the evaluation point.
pub fn hilbert_transform(v: &[f64], g: &[Complex64]) -> Result<Vec<Complex64>> {
    let dv = uniform_spacing(v)?;
    if g.len() != v.len() {
        return Err(Error::invalid("values", "length differs from the grid"));
    }
    let p = v.len();
    let centre = 0.5 * (v[0] + v[p - 1]);
    let half = 0.5 * (v[p - 1] - v[0]);
    let side = |right: bool| -> (Complex64, Complex64) {
        let (x, y): (Vec<f64>, Vec<Complex64>) = (0..p)
            .filter(|&k| {
                let x = v[k] - centre;
                (if right { x } else { -x }) >= (1.0 - TAIL_SHARE) * half
            })
            .map(|k| (v[k] - centre, g[k]))
            .unzip();
        fit_tail(&x, &y)
    };
    let (right, left) = (side(true), side(false));
    Ok((1..p - 1)
        .into_par_iter()
        .map(|i| {
            let mut acc = Complex64::new(0.0, 0.0);
            let start = if i % 2 == 0 { 1 } else { 0 };
            let mut j = start;
            while j < p {
                acc += g[j] / (v[i] - v[j]);
                j += 2;
            }
            let last = if (p - 1 - i) % 2 == 1 { p - 1 } else { p - 2 };
            let x = v[i] - centre;
            let hi = v[last] + dv - centre;
            let lo = centre - (v[start] - dv);
            let tail = right.0 * tail_first(x, hi) + right.1 * tail_second(x, hi) + left.0 * tail_first(-x, lo) - left.1 * tail_second(-x, lo);
            (acc * (2.0 * dv) + tail) / PI
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugacyReport {
    /// `‖Re T(v) - H(Im T)(v)‖_HS` per interior grid point.
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
    pub max_hs: f64,
    /// `max_deviation / max_hs`.
    pub relative: f64,
    /// Estimated principal-value truncation without tail completion.
    pub truncation: f64,
}

/// Truncation of the principal-value integral from a `1/v²` decay of
/// `‖Im T‖_HS` beyond the grid.
fn truncation_estimate(p: &SandwichProfile) -> f64 {
    let last = p.t.len() - 1;
    let edge = |k: usize| linalg::frobenius(&linalg::imaginary_part(&p.t[k]));
    (edge(0) + edge(last)) / (2.0 * PI)
}

pub fn conjugacy_check(p: &SandwichProfile) -> Result<ConjugacyReport> {
    if !p.t[0].is_square() {
        return Err(Error::invalid("M", "conjugacy needs square T"));
    }
    let max_hs = p.max_hs();
    let truncation = truncation_estimate(p);
    let allowed = TRUNCATION_TOLERANCE * max_hs;
    if truncation > allowed {
        let half = 0.5 * (p.v[p.v.len() - 1] - p.v[0]);
        let required = half * (truncation / allowed).sqrt();
        return Err(Error::invalid(
            "v_grid",
            format!("half-width {half} too small, need about {required:.3}"),
        ));
    }
    let (r, c) = p.t[0].shape();
    let mut deviation = vec![CMatrix::zeros(r, c); p.v.len() - 2];
    for i in 0..r {
        for j in 0..c {
            let im: Vec<Complex64> = p.t.iter().map(|m| (m[(i, j)] - m[(j, i)].conj()) * Complex64::new(0.0, -0.5)).collect();
            let h = hilbert_transform(&p.v, &im)?;
            for (k, m) in p.t[1..p.t.len() - 1].iter().enumerate() {
                deviation[k][(i, j)] = 0.5 * (m[(i, j)] + m[(j, i)].conj()) - h[k];
            }
        }
    }
    let deviations: Vec<f64> = deviation.iter().map(linalg::frobenius).collect();
    let max_deviation = deviations.iter().copied().fold(0.0, f64::max);
    Ok(ConjugacyReport {
        deviations,
        max_deviation,
        max_hs,
        relative: if max_hs > 0.0 { max_deviation / max_hs } else { 0.0 },
        truncation,
    })
}

/// Lebesgue measure of `{v : ‖T(v)‖_HS > t}`. Crossings inside the grid are
/// refined by bisection on the exact norm; beyond the grid the norm is
/// continued as `‖T(V)‖_HS |V - c| / |v - c|`.
pub fn sandwich_level_measure(p: &SandwichProfile, t: f64) -> Result<f64> {
    let k = p.v.len();
    let crossing = |a: f64, b: f64, above_a: bool| -> Result<f64> {
        let (mut lo, mut hi) = (a, b);
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if (p.hs_at(mid)? > t) == above_a {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    };
    let mut measure = 0.0;
    let mut start = if p.hs[0] > t { Some(p.v[0]) } else { None };
    for w in 0..k - 1 {
        let (a, b) = (p.hs[w] > t, p.hs[w + 1] > t);
        if a != b {
            let x = crossing(p.v[w], p.v[w + 1], a)?;
            match start.take() {
                Some(s) => measure += x - s,
                None => start = Some(x),
            }
        }
    }
    if let Some(s) = start {
        measure += p.v[k - 1] - s;
    }
    let c = p.centre();
    for end in [0, k - 1] {
        if p.hs[end] > t {
            let x = (p.v[end] - c).abs();
            measure += p.hs[end] * x / t - x;
        }
    }
    Ok(measure)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichTail {
    pub profile: TailProfile,
    /// `‖M₁‖_HS ‖M₂‖_HS`.
    pub norm_product: f64,
    /// `max_t measure · t / (‖M₁‖_HS ‖M₂‖_HS)` over the grid.
    pub constant: f64,
}

/// Thresholds spanning the upper two decades of the profile.
pub fn upper_decades(p: &SandwichProfile, points: usize) -> Vec<f64> {
    let top = p.max_hs();
    (0..points).map(|k| top * 10f64.powf(-2.0 + 2.0 * k as f64 / (points - 1) as f64)).collect()
}

pub fn weak_l1_sandwich(p: &SandwichProfile, t_grid: &[f64]) -> Result<SandwichTail> {
    let values: Vec<f64> = t_grid.par_iter().map(|&t| sandwich_level_measure(p, t)).collect::<Result<_>>()?;
    let (slope, slope_se, constant) = fit_profile(t_grid, &values);
    let norm_product = p.m1_hs * p.m2_hs;
    let c = t_grid
        .iter()
        .zip(&values)
        .map(|(t, m)| if norm_product > 0.0 { t * m / norm_product } else { 0.0 })
        .fold(0.0, f64::max);
    Ok(SandwichTail {
        profile: TailProfile {
            t_grid: t_grid.to_vec(),
            values,
            slope,
            slope_se,
            constant,
            reference: None,
            exceedances: Vec::new(),
            rescaled: 1.0,
        },
        norm_product,
        constant: c,
    })
}

/// `Y*RX` directly and from four diagonal instances
/// `¼ Σ_k i^k (X + i^k Y)* R (X + i^k Y)` with `Y* = M₁`, `X = M₂`.
pub fn polarization_check(op: &DissipativeOperator, m1: &CMatrix, m2: &CMatrix, v: f64, delta_prime: f64) -> Result<(CMatrix, CMatrix)> {
    if m1.shape() != (m2.ncols(), m2.nrows()) {
        return Err(Error::invalid("M", "M₁* and M₂ must have equal shape"));
    }
    let r = op.resolvent(v, delta_prime)?;
    let direct = m1 * &r * m2;
    let y = m1.adjoint();
    let mut assembled = CMatrix::zeros(direct.nrows(), direct.ncols());
    let mut phase = Complex64::new(1.0, 0.0);
    for _ in 0..4 {
        let n = m2 + &y * phase;
        assembled += n.adjoint() * &r * n * phase;
        phase *= Complex64::i();
    }
    Ok((direct, assembled * Complex64::new(0.25, 0.0)))
}
