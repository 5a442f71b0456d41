//! Birman–Schwinger operators, eigenvalue curves and spectral-shift counts.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::model::{Model, OperatorHandle, Site};
use crate::resolvent::{check_off_spectrum, EnergyPoint, Resolvent};

/// `K = V^{1/2} (H - z)⁻¹ V^{1/2}` on the support of `V`.
#[derive(Debug, Clone)]
pub struct BsOperator {
    pub base: OperatorHandle,
    /// Grid indices with `V > 0`.
    pub mask: Vec<usize>,
    pub sqrt_v: Vec<f64>,
    /// Full potential, for re-solves.
    pub v: Vec<f64>,
    pub k: CMatrix,
    pub z: EnergyPoint,
}

pub fn bs_build(h: &OperatorHandle, v: &[f64], z: EnergyPoint) -> Result<BsOperator> {
    if v.len() != h.dim() {
        return Err(Error::invalid("V", format!("length {} for a grid of {}", v.len(), h.dim())));
    }
    if v.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::invalid("V", "must be finite and non-negative"));
    }
    let mask: Vec<usize> = (0..v.len()).filter(|&i| v[i] > 0.0).collect();
    if mask.is_empty() {
        return Err(Error::invalid("V", "identically zero"));
    }
    let sqrt_v: Vec<f64> = mask.iter().map(|&i| v[i].sqrt()).collect();
    let k = sandwich(&h.matrix, &mask, &sqrt_v, z)?;
    Ok(BsOperator {
        base: h.clone(),
        mask,
        sqrt_v,
        v: v.to_vec(),
        k,
        z,
    })
}

fn sandwich(m: &linalg::SparseMatrix, mask: &[usize], sqrt_v: &[f64], z: EnergyPoint) -> Result<CMatrix> {
    let res = Resolvent::of_matrix(m, z)?;
    let g = res.block_of(mask, mask)?;
    Ok(CMatrix::from_fn(mask.len(), mask.len(), |i, j| g[(i, j)] * sqrt_v[i] * sqrt_v[j]))
}

impl BsOperator {
    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    /// `max |K - K*|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let d = &self.k - self.k.adjoint();
        d.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Extreme eigenvalues of the Hermitian part of `-iK`, i.e. of `Im K`.
    pub fn dissipative_range(&self) -> (f64, f64) {
        let e = linalg::dense_hermitian_eigen(linalg::imaginary_part(&self.k)).0;
        (e[0], e[e.len() - 1])
    }

    /// Eigenvalues of `K` for real `z` (ascending).
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        if self.z.eps != 0.0 {
            return Err(Error::invalid("z", "K is Hermitian only at real energies"));
        }
        Ok(linalg::dense_hermitian_eigen(linalg::real_part(&self.k)).0)
    }

    /// Couplings `ξ` with `z ∈ σ(H - ξV)`: the eigenvalues of `K⁻¹`.
    pub fn critical_couplings(&self) -> Result<Vec<f64>> {
        let mut g: Vec<f64> = self.eigenvalues()?.into_iter().filter(|&m| m != 0.0).map(|m| 1.0 / m).collect();
        g.sort_by(f64::total_cmp);
        Ok(g)
    }
}

/// `‖(K₀⁻¹ - ξ)⁻¹ - V^{1/2}(H - ξV - z)⁻¹V^{1/2}‖ / ‖rhs‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsResidual {
    pub residual: f64,
    pub relative: f64,
    pub rhs_norm: f64,
}

pub fn bs_relation_residual(k0: &BsOperator, xi: f64) -> Result<BsResidual> {
    let lhs = if xi == 0.0 {
        k0.k.clone()
    } else {
        let inv = linalg::invert(&k0.k, "K on the support of V")?;
        let shifted = inv - CMatrix::identity(k0.dim(), k0.dim()) * Complex64::new(xi, 0.0);
        linalg::invert(&shifted, "K⁻¹ - ξ")?
    };
    let delta: Vec<f64> = k0.v.iter().map(|v| -xi * v).collect();
    let h_xi = k0.base.matrix.add_diagonal(&delta);
    let rhs = sandwich(&h_xi, &k0.mask, &k0.sqrt_v, k0.z)?;
    let rhs_norm = linalg::op_norm(&rhs);
    let residual = linalg::op_norm(&(lhs - &rhs));
    Ok(BsResidual {
        residual,
        relative: residual / rhs_norm,
        rhs_norm,
    })
}

/// Eigenvalue curves `E_n(ξ)` of `H₀ - ξV`, labeled by continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenCurveSet {
    /// Refined coupling grid, ascending.
    pub xi: Vec<f64>,
    /// `energies[n][k] = E_n(xi[k])`.
    pub energies: Vec<Vec<f64>>,
    /// Feynman–Hellmann slopes `-⟨Vψ_n, ψ_n⟩`.
    pub slopes: Vec<Vec<f64>>,
    /// Segments `[xi[k], xi[k+1]]` whose continuation stayed ambiguous.
    pub flagged: Vec<bool>,
}

impl EigenCurveSet {
    pub fn curves(&self) -> usize {
        self.energies.len()
    }

    /// `(ξ, curve, E)` rows.
    pub fn rows(&self) -> Vec<(f64, usize, f64)> {
        let mut out = Vec::with_capacity(self.xi.len() * self.curves());
        for (k, &x) in self.xi.iter().enumerate() {
            for (n, c) in self.energies.iter().enumerate() {
                out.push((x, n, c[k]));
            }
        }
        out
    }
}

/// Segment refinements before a segment is flagged.
pub const MAX_CURVE_REFINEMENT: usize = 12;

struct Slice {
    energies: Vec<f64>,
    slopes: Vec<f64>,
}

fn slice(h0: &OperatorHandle, v: &[f64], xi: f64) -> Slice {
    let delta: Vec<f64> = v.iter().map(|v| -xi * v).collect();
    let m = h0.matrix.add_diagonal(&delta);
    let (energies, vecs) = linalg::hermitian_eigen(&m);
    let slopes = (0..energies.len())
        .map(|n| -(0..v.len()).map(|q| v[q] * vecs[(q, n)].norm_sqr()).sum::<f64>())
        .collect();
    Slice { energies, slopes }
}

fn min_gap(e: &[f64]) -> f64 {
    e.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// Adjacent slices match when no eigenvalue moved by more than half the
/// smaller minimal gap.
fn matched(a: &Slice, b: &Slice) -> bool {
    let gap = min_gap(&a.energies).min(min_gap(&b.energies));
    let moved = a.energies.iter().zip(&b.energies).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    moved <= 0.5 * gap
}

pub fn eigencurves(h0: &OperatorHandle, v: &[f64], xi_grid: &[f64]) -> Result<EigenCurveSet> {
    if v.len() != h0.dim() {
        return Err(Error::invalid("V", format!("length {} for a grid of {}", v.len(), h0.dim())));
    }
    if v.iter().any(|&x| x < 0.0) {
        return Err(Error::invalid("V", "must be non-negative"));
    }
    let mut grid: Vec<f64> = xi_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.len() < 2 {
        return Err(Error::invalid("xi_grid", "needs >= 2 distinct couplings"));
    }
    let slices: Vec<Slice> = grid.par_iter().map(|&x| slice(h0, v, x)).collect();
    let mut xi = vec![grid[0]];
    let mut data = vec![];
    let mut flagged = vec![];
    let mut it = slices.into_iter();
    let mut prev = it.next().unwrap();
    for (k, next) in it.enumerate() {
        let (a, b) = (grid[k], grid[k + 1]);
        // refine [a, b] depth-first until every piece matches
        let mut stack = vec![(a, b, 0usize)];
        let mut right_cache: Vec<(f64, Slice)> = vec![(b, next)];
        let mut left = (a, prev);
        while let Some((lo, hi, depth)) = stack.pop() {
            let pos = right_cache.iter().position(|(x, _)| *x == hi).expect("cached slice");
            let ok = matched(&left.1, &right_cache[pos].1);
            if ok || depth >= MAX_CURVE_REFINEMENT {
                flagged.push(!ok);
                let (x, s) = right_cache.remove(pos);
                data.push(std::mem::replace(&mut left, (x, s)));
                xi.push(hi);
            } else {
                let mid = 0.5 * (lo + hi);
                right_cache.push((mid, slice(h0, v, mid)));
                stack.push((mid, hi, depth + 1));
                stack.push((lo, mid, depth + 1));
            }
        }
        prev = left.1;
    }
    data.push((*xi.last().unwrap(), prev));
    let n = h0.dim();
    let energies = (0..n).map(|c| data.iter().map(|(_, s)| s.energies[c]).collect()).collect();
    let slopes = (0..n).map(|c| data.iter().map(|(_, s)| s.slopes[c]).collect()).collect();
    Ok(EigenCurveSet {
        xi,
        energies,
        slopes,
        flagged,
    })
}

/// Comparison of Feynman–Hellmann slopes with central differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Points skipped as flagged or below the round-off floor.
    pub skipped: usize,
    /// Largest analytic slope among checked points.
    pub max_slope: f64,
}

/// Difference step relative to the curve's own gap, over `‖V‖∞`.
const FD_STEP: f64 = 1e-2;
/// A point is checked only when the estimated round-off of the difference
/// quotient is below this fraction of the slope.
pub const ROUNDOFF_SHARE: f64 = 1e-7;

pub fn feynman_hellmann_check(h0: &OperatorHandle, v: &[f64], curves: &EigenCurveSet) -> SlopeCheck {
    let v_max = v.iter().cloned().fold(0.0, f64::max);
    let scale = h0.matrix.norm_inf() + curves.xi.iter().fold(0.0f64, |m, x| m.max(x.abs())) * v_max;
    let k_max = curves.xi.len();
    let per_point: Vec<(f64, usize, usize, f64)> = (0..k_max)
        .into_par_iter()
        .map(|k| {
            let near_flag = (k > 0 && curves.flagged[k - 1]) || (k < k_max - 1 && curves.flagged[k]);
            let n = curves.curves();
            if near_flag {
                return (0.0, 0, n, f64::NEG_INFINITY);
            }
            let x = curves.xi[k];
            let e: Vec<f64> = (0..n).map(|c| curves.energies[c][k]).collect();
            let at = |t: f64| slice(h0, v, t).energies;
            let (mut worst, mut checked, mut skipped, mut max_slope) = (0.0f64, 0, 0, f64::NEG_INFINITY);
            for c in 0..n {
                let an = curves.slopes[c][k];
                let below = if c > 0 { e[c] - e[c - 1] } else { f64::INFINITY };
                let above = if c + 1 < n { e[c + 1] - e[c] } else { f64::INFINITY };
                let gap = below.min(above).min(1.0);
                let d = FD_STEP * gap / v_max.max(1e-300);
                let roundoff = 8.0 * f64::EPSILON * scale * n as f64 / d;
                if roundoff > ROUNDOFF_SHARE * an.abs() {
                    skipped += 1;
                    continue;
                }
                let coarse = (at(x + d)[c] - at(x - d)[c]) / (2.0 * d);
                let fine = (at(x + 0.5 * d)[c] - at(x - 0.5 * d)[c]) / d;
                let fd = (4.0 * fine - coarse) / 3.0;
                worst = worst.max((fd - an).abs() / an.abs());
                checked += 1;
                max_slope = max_slope.max(an);
            }
            (worst, checked, skipped, max_slope)
        })
        .collect();
    SlopeCheck {
        max_relative_error: per_point.iter().map(|p| p.0).fold(0.0, f64::max),
        checked: per_point.iter().map(|p| p.1).sum(),
        skipped: per_point.iter().map(|p| p.2).sum(),
        max_slope: per_point.iter().map(|p| p.3).fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Eigenvalue counts pushed past `E` when `η_α` moves from `a` to `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossingCount {
    /// `tr P_{≤E}(H_a) - tr P_{≤E}(H_b)`.
    pub eigen: i64,
    /// Eigenvalues of `K` at `η_α = a` whose curves cross `E` inside `(a, b)`.
    pub curves: i64,
}

pub fn crossing_count(model: &Model, eta: &[f64], alpha: Site, e: f64, a: f64, b: f64) -> Result<CrossingCount> {
    let ia = model.coupling_index(alpha).ok_or_else(|| Error::invalid("alpha", "not a coupling site"))?;
    let lambda = model.spec().lambda;
    if lambda < 0.0 {
        return Err(Error::invalid("lambda", "crossing counts need λ >= 0"));
    }
    let with = |t: f64| {
        let mut eta = eta.to_vec();
        eta[ia] = t;
        model.hamiltonian_with(&eta)
    };
    let (ha, hb) = (with(a), with(b));
    for (h, which) in [(&ha, "a"), (&hb, "b")] {
        check_off_spectrum(&h.matrix, e).map_err(|_| {
            Error::invalid("E", format!("{e} is an eigenvalue of the operator at coupling {which}; perturb E"))
        })?;
    }
    let eigen = linalg::count_below(&ha.matrix, e) as i64 - linalg::count_below(&hb.matrix, e) as i64;
    if a == b || lambda == 0.0 {
        return Ok(CrossingCount { eigen, curves: 0 });
    }
    let mut v = vec![0.0; model.geometry().n_points()];
    for (q, u) in model.bump(alpha) {
        v[q] = lambda * u;
    }
    // H_η = H_a + (η - a) V, so E ∈ σ(H_η) iff 1/(a - η) is an eigenvalue of K
    let k = bs_build(&ha, &v, EnergyPoint::real(e))?;
    let mu = k.eigenvalues()?;
    let width = (b - a).abs();
    let curves = if b > a {
        mu.iter().filter(|&&m| m < -1.0 / width).count() as i64
    } else {
        -(mu.iter().filter(|&&m| m > 1.0 / width).count() as i64)
    };
    Ok(CrossingCount { eigen, curves })
}

/// Integer profile `ξ(t, E) = tr[P(H_t < E) - P(H_t + U < E)]` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub s: f64,
    pub energy: f64,
    /// Every evaluated `t`, ascending.
    pub t_grid: Vec<f64>,
    pub xi: Vec<i64>,
    /// Localized jump positions.
    pub breakpoints: Vec<f64>,
    /// `∫₀¹ |ξ(t, E)|^s dt`.
    pub integral: f64,
}

impl ShiftReport {
    pub fn rows(&self) -> Vec<(f64, i64)> {
        self.t_grid.iter().copied().zip(self.xi.iter().copied()).collect()
    }
}

/// Jump localization width in `t`.
pub const JUMP_RESOLUTION: f64 = 1e-6;

/// Spectral shift of `U` along `H_t = Ĥ + tV`, `t ∈ [0, 1]`.
pub fn spectral_shift(h_hat: &OperatorHandle, v: &[f64], u: &[f64], e: f64, s: f64, t_grid: &[f64]) -> Result<ShiftReport> {
    let n = h_hat.dim();
    if v.len() != n || u.len() != n {
        return Err(Error::invalid("potential", "V and U must match the grid"));
    }
    if v.iter().chain(u).any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::invalid("potential", "V and U must be bounded and non-negative"));
    }
    let d = h_hat.geometry.dim as f64;
    let s_max = (2.0 / d).min(0.5);
    if !(s > 0.0 && s < s_max) {
        return Err(Error::invalid("s", format!("{s} not in (0, {s_max})")));
    }
    let xi_at = |t: f64| -> i64 {
        let ht: Vec<f64> = v.iter().map(|v| t * v).collect();
        let hu: Vec<f64> = v.iter().zip(u).map(|(v, u)| t * v + u).collect();
        linalg::count_below(&h_hat.matrix.add_diagonal(&ht), e) as i64
            - linalg::count_below(&h_hat.matrix.add_diagonal(&hu), e) as i64
    };
    let mut grid: Vec<f64> = t_grid.iter().copied().filter(|t| (0.0..=1.0).contains(t)).collect();
    grid.extend([0.0, 1.0]);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let counts: Vec<i64> = grid.par_iter().map(|&t| xi_at(t)).collect();
    let mut pts: Vec<(f64, i64)> = grid.iter().copied().zip(counts).collect();
    let mut k = 0;
    while k + 1 < pts.len() {
        let ((a, ca), (b, cb)) = (pts[k], pts[k + 1]);
        if ca != cb && b - a > JUMP_RESOLUTION {
            let m = 0.5 * (a + b);
            pts.insert(k + 1, (m, xi_at(m)));
        } else {
            k += 1;
        }
    }
    let mut integral = 0.0;
    let mut breakpoints = Vec::new();
    for w in pts.windows(2) {
        let ((a, ca), (b, cb)) = (w[0], w[1]);
        let mag = |c: i64| (c.unsigned_abs() as f64).powf(s);
        if ca == cb {
            integral += mag(ca) * (b - a);
        } else {
            let m = 0.5 * (a + b);
            breakpoints.push(m);
            integral += mag(ca) * (m - a) + mag(cb) * (b - m);
        }
    }
    Ok(ShiftReport {
        s,
        energy: e,
        t_grid: pts.iter().map(|p| p.0).collect(),
        xi: pts.iter().map(|p| p.1).collect(),
        breakpoints,
        integral,
    })
}

/// `∫_{E_min}^{E₊} S(E)^p dE` for the shift of `η_α: 0 → 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftNorm {
    pub value: f64,
    pub e_min: f64,
    pub max_shift: i64,
}

pub fn shift_lp_norm(model: &Model, eta: &[f64], alpha: Site, e_plus: f64, p: f64) -> Result<ShiftNorm> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::invalid("p", format!("{p} must be >= 1")));
    }
    let ia = model.coupling_index(alpha).ok_or_else(|| Error::invalid("alpha", "not a coupling site"))?;
    let spectrum = |t: f64| {
        let mut eta = eta.to_vec();
        eta[ia] = t;
        linalg::hermitian_eigenvalues(&model.hamiltonian_with(&eta).matrix)
    };
    let (e0, e1) = (spectrum(0.0), spectrum(1.0));
    let e_min = e0[0].min(e1[0]);
    let mut events: Vec<(f64, i64)> = e0.iter().map(|&e| (e, 1)).chain(e1.iter().map(|&e| (e, -1))).collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut value, mut shift, mut max_shift) = (0.0, 0i64, 0i64);
    for (k, &(e, step)) in events.iter().enumerate() {
        if e >= e_plus {
            break;
        }
        shift += step;
        max_shift = max_shift.max(shift);
        let next = events.get(k + 1).map_or(e_plus, |n| n.0.min(e_plus));
        value += (shift.unsigned_abs() as f64).powf(p) * (next - e);
    }
    Ok(ShiftNorm { value, e_min, max_shift })
}
