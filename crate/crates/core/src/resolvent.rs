//! Green-function blocks `χ_x (H - z)⁻¹ χ_y`, the geometric resolvent
//! identity and Combes-Thomas decay below the spectrum.
//!
//! Blocks are raw sub-blocks of the grid resolvent matrix. With a uniform grid
//! weight `h^d` the weighted operator and Hilbert-Schmidt norms of a block
//! coincide with the matrix spectral and Frobenius norms, so no rescaling is
//! needed to compare lattice and continuum-grid numbers.

use std::collections::HashSet;
use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, Factorization, SparseMatrix};
use crate::model::{OperatorHandle, Site};
use crate::stats::{line_fit, LineFit};

/// Largest tolerated normwise backward error of a back-solve.
pub const SOLVE_RESIDUAL: f64 = 1e-10;
/// Minimal distance to the spectrum for real-energy solves.
pub const SPECTRAL_GAP_FLOOR: f64 = 1e-9;

/// `z = E + iε` with `ε ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyPoint {
    pub e: f64,
    #[serde(default)]
    pub eps: f64,
}

impl EnergyPoint {
    pub fn new(e: f64, eps: f64) -> Result<Self> {
        if !e.is_finite() {
            return Err(Error::invalid("energy", "not finite"));
        }
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::invalid("eps", format!("{eps} must be finite and >= 0")));
        }
        Ok(EnergyPoint { e, eps })
    }

    pub fn real(e: f64) -> Self {
        EnergyPoint { e, eps: 0.0 }
    }

    pub fn z(&self) -> Complex64 {
        Complex64::new(self.e, self.eps)
    }

    pub fn conj_z(&self) -> Complex64 {
        Complex64::new(self.e, -self.eps)
    }
}

/// A resolvent block restricted to two index sets.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenBlock {
    pub x: Site,
    pub y: Site,
    pub z: EnergyPoint,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub block: CMatrix,
    pub op_norm: f64,
    pub hs_norm: f64,
}

/// Nearest eigenvalue of `m` to `e`.
pub fn nearest_eigenvalue(m: &SparseMatrix, e: f64) -> f64 {
    linalg::hermitian_eigenvalues(m)
        .into_iter()
        .min_by(|a, b| (a - e).abs().total_cmp(&(b - e).abs()))
        .unwrap_or(f64::NAN)
}

/// Reject real energies within [`SPECTRAL_GAP_FLOOR`] of the spectrum.
pub fn check_off_spectrum(m: &SparseMatrix, e: f64) -> Result<()> {
    let lo = linalg::count_below(m, e - SPECTRAL_GAP_FLOOR);
    let hi = linalg::count_below(m, e + SPECTRAL_GAP_FLOOR);
    if lo != hi {
        return Err(Error::SingularSolve {
            energy: e,
            nearest: nearest_eigenvalue(m, e),
        });
    }
    Ok(())
}

fn factor_checked(m: &SparseMatrix, z: EnergyPoint) -> Result<Factorization> {
    if z.eps == 0.0 {
        check_off_spectrum(m, z.e)?;
    }
    let f = Factorization::new(m, z.z());
    if !(f.min_pivot() > 0.0) {
        return Err(Error::SingularSolve {
            energy: z.e,
            nearest: nearest_eigenvalue(m, z.e),
        });
    }
    Ok(f)
}

/// One factorization of `H - z` shared by every block request.
#[derive(Debug)]
pub struct Resolvent<'a> {
    matrix: &'a SparseMatrix,
    handle: Option<&'a OperatorHandle>,
    z: EnergyPoint,
    fact: Factorization,
    conj: OnceLock<Factorization>,
}

impl<'a> Resolvent<'a> {
    pub fn new(h: &'a OperatorHandle, z: EnergyPoint) -> Result<Self> {
        let mut r = Resolvent::of_matrix(&h.matrix, z)?;
        r.handle = Some(h);
        Ok(r)
    }

    pub fn of_matrix(m: &'a SparseMatrix, z: EnergyPoint) -> Result<Self> {
        Ok(Resolvent {
            matrix: m,
            handle: None,
            z,
            fact: factor_checked(m, z)?,
            conj: OnceLock::new(),
        })
    }

    pub fn z(&self) -> EnergyPoint {
        self.z
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    fn conj_factorization(&self) -> &Factorization {
        self.conj.get_or_init(|| Factorization::new(self.matrix, self.z.conj_z()))
    }

    fn checked_columns(&self, fact: &Factorization, shift: Complex64, cols: &[usize]) -> Result<CMatrix> {
        let g = fact.solve_unit_columns(cols);
        let n = self.dim();
        let mut rhs = vec![Complex64::new(0.0, 0.0); n];
        for (k, &j) in cols.iter().enumerate() {
            rhs[j] = Complex64::new(1.0, 0.0);
            let col: Vec<Complex64> = g.column(k).iter().copied().collect();
            let be = linalg::backward_error(self.matrix, shift, &col, &rhs);
            rhs[j] = Complex64::new(0.0, 0.0);
            if !(be <= SOLVE_RESIDUAL) {
                return Err(Error::Inaccurate {
                    what: "resolvent solve".into(),
                    residual: be,
                });
            }
        }
        Ok(g)
    }

    /// Columns `G(z) e_j` for `j ∈ cols` (an `n × |cols|` matrix).
    pub fn columns(&self, cols: &[usize]) -> Result<CMatrix> {
        self.checked_columns(&self.fact, self.z.z(), cols)
    }

    /// Rows `e_iᵀ G(z)` for `i ∈ rows` (a `|rows| × n` matrix).
    pub fn rows(&self, rows: &[usize]) -> Result<CMatrix> {
        if self.matrix.is_real() {
            // G(z) is complex symmetric for real symmetric H
            return Ok(self.columns(rows)?.transpose());
        }
        let fact = self.conj_factorization();
        Ok(self.checked_columns(fact, self.z.conj_z(), rows)?.adjoint())
    }

    /// `1_rows G(z) 1_cols`, solving against whichever side is smaller.
    pub fn block_of(&self, rows: &[usize], cols: &[usize]) -> Result<CMatrix> {
        if cols.len() <= rows.len() {
            let g = self.columns(cols)?;
            Ok(CMatrix::from_fn(rows.len(), cols.len(), |i, j| g[(rows[i], j)]))
        } else {
            let g = self.rows(rows)?;
            Ok(CMatrix::from_fn(rows.len(), cols.len(), |i, j| g[(i, cols[j])]))
        }
    }

    /// `χ_x G(z) χ_y` with norms.
    pub fn block(&self, x: Site, y: Site) -> Result<GreenBlock> {
        let h = self
            .handle
            .ok_or_else(|| Error::invalid("resolvent", "site blocks need an operator with geometry"))?;
        let rows = h.geometry.chi(x);
        let cols = h.geometry.chi(y);
        if rows.is_empty() || cols.is_empty() {
            return Err(Error::invalid("site", format!("{x:?} or {y:?} lies outside the box")));
        }
        let block = self.block_of(&rows, &cols)?;
        Ok(GreenBlock {
            x,
            y,
            z: self.z,
            op_norm: linalg::op_norm(&block),
            hs_norm: linalg::frobenius(&block),
            rows,
            cols,
            block,
        })
    }
}

/// `χ_x (H - z)⁻¹ χ_y`.
pub fn green_block(h: &OperatorHandle, z: EnergyPoint, x: Site, y: Site) -> Result<GreenBlock> {
    Resolvent::new(h, z)?.block(x, y)
}

/// A restriction `H^{(Λ)}` together with its embedding into the grid of `H^{(Ω)}`.
#[derive(Debug, Clone)]
pub struct Restriction {
    pub matrix: SparseMatrix,
    /// `embedding[k]` is the Ω-grid index of the k-th Λ point.
    pub embedding: Vec<usize>,
}

impl Restriction {
    /// Principal sub-matrix (simple boundary conditions on ∂Λ).
    pub fn principal(h: &OperatorHandle, mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Restriction {
            matrix: h.matrix.principal_submatrix(&indices),
            embedding: indices,
        }
    }

    fn local_index(&self) -> Vec<Option<usize>> {
        let n = self.embedding.iter().copied().max().map_or(0, |m| m + 1);
        let mut loc = vec![None; n];
        for (k, &i) in self.embedding.iter().enumerate() {
            loc[i] = Some(k);
        }
        loc
    }
}

/// Cutoff data `Λ₀ ⊂ Λ` and `Θ` on the Ω grid.
#[derive(Debug, Clone)]
pub struct Cutoff {
    pub inner: Vec<usize>,
    pub theta: Vec<f64>,
}

/// Outcome of an identity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityResidual {
    /// Operator norm of `LHS - RHS`.
    pub residual: f64,
    /// Largest operator norm of the resolvent blocks entering the identity.
    pub scale: f64,
    /// Sup-norm of the discrete gradient of Θ (largest jump across a bond).
    pub theta_gradient: f64,
}

impl IdentityResidual {
    pub fn relative(&self) -> f64 {
        if self.residual == 0.0 {
            0.0
        } else {
            self.residual / self.scale
        }
    }
}

/// Check that Θ and Λ₀ fit the restriction: Θ = 1 on Λ₀, Θ = 0 off Λ and on
/// every Λ point whose row in `H^{(Λ)}` differs from `H^{(Ω)}`.
fn check_support(h: &SparseMatrix, restr: &Restriction, cut: &Cutoff, chi: &[usize]) -> Result<f64> {
    let n = h.dim();
    if cut.theta.len() != n {
        return Err(Error::invalid("theta", format!("length {} for a grid of {n}", cut.theta.len())));
    }
    let loc = {
        let mut l = restr.local_index();
        l.resize(n.max(l.len()), None);
        l
    };
    if restr.embedding.iter().any(|&i| i >= n) || restr.matrix.dim() != restr.embedding.len() {
        return Err(Error::invalid("restriction", "embedding does not fit the outer grid"));
    }
    for p in 0..n {
        if loc[p].is_none() && cut.theta[p] != 0.0 {
            return Err(Error::invalid("theta", format!("nonzero at grid point {p} outside Λ")));
        }
    }
    for &p in &cut.inner {
        if cut.theta.get(p) != Some(&1.0) {
            return Err(Error::invalid("theta", format!("not 1 at grid point {p} of Λ₀")));
        }
    }
    let inner: HashSet<usize> = cut.inner.iter().copied().collect();
    if let Some(p) = chi.iter().find(|p| !inner.contains(p)) {
        return Err(Error::invalid("site", format!("unit ball point {p} lies outside Λ₀")));
    }
    for (k, &p) in restr.embedding.iter().enumerate() {
        if cut.theta[p] == 0.0 {
            continue;
        }
        // every stencil entry of row p must survive the restriction unchanged
        let mut inside = 0usize;
        for (q, v) in h.row(p) {
            match loc[q] {
                Some(kq) => {
                    if restr.matrix.get(k, kq) != v {
                        return Err(Error::invalid(
                            "theta",
                            format!("nonzero at stencil site {p} where H^(Λ) differs from H^(Ω)"),
                        ));
                    }
                    inside += 1;
                }
                None => {
                    return Err(Error::invalid(
                        "theta",
                        format!("nonzero at stencil site {p} whose stencil leaves Λ (neighbour {q})"),
                    ))
                }
            }
        }
        if restr.matrix.row(k).count() != inside {
            return Err(Error::invalid("theta", format!("nonzero at stencil site {p} with extra couplings in H^(Λ)")));
        }
    }
    let mut grad: f64 = 0.0;
    for p in 0..n {
        for (q, _) in h.row(p) {
            grad = grad.max((cut.theta[q] - cut.theta[p]).abs());
        }
    }
    Ok(grad)
}

/// Commutator `[H, Θ]` restricted to rows in Λ, as a `|Λ| × n` dense-able sparse map.
fn commutator_rows(h: &SparseMatrix, theta: &[f64], rows: &[usize]) -> Vec<Vec<(usize, Complex64)>> {
    rows.iter()
        .map(|&p| {
            h.row(p)
                .filter_map(|(q, v)| {
                    let c = v * (theta[q] - theta[p]);
                    (c != Complex64::new(0.0, 0.0)).then_some((q, c))
                })
                .collect()
        })
        .collect()
}

fn apply_rows(rows: &[Vec<(usize, Complex64)>], b: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(rows.len(), b.ncols());
    for (i, r) in rows.iter().enumerate() {
        for &(q, v) in r {
            for k in 0..b.ncols() {
                out[(i, k)] += v * b[(q, k)];
            }
        }
    }
    out
}

/// `‖1_x G_Ω 1_y − (1_x G_Λ Θ 1_y + 1_x G_Λ [H,Θ] G_Ω 1_y)‖` with x ∈ Λ₀.
pub fn geometric_identity_residual(
    h: &OperatorHandle,
    restr: &Restriction,
    cut: &Cutoff,
    z: EnergyPoint,
    x: Site,
    y: Site,
) -> Result<IdentityResidual> {
    let rows = h.geometry.chi(x);
    let cols = h.geometry.chi(y);
    identity_on_sets(&h.matrix, restr, cut, z, &rows, &cols)
}

/// Index-set form of [`geometric_identity_residual`].
pub fn identity_on_sets(
    h: &SparseMatrix,
    restr: &Restriction,
    cut: &Cutoff,
    z: EnergyPoint,
    rows: &[usize],
    cols: &[usize],
) -> Result<IdentityResidual> {
    let theta_gradient = check_support(h, restr, cut, rows)?;
    let loc = restr.local_index();
    let local_rows: Vec<usize> = rows.iter().map(|&p| loc[p].expect("rows lie in Λ₀")).collect();
    let g_omega = Resolvent::of_matrix(h, z)?;
    let g_lambda = Resolvent::of_matrix(&restr.matrix, z)?;

    let lhs_full = g_omega.columns(cols)?;
    let lhs_rows = g_omega.rows(rows)?;
    let lhs = CMatrix::from_fn(rows.len(), cols.len(), |i, j| lhs_rows[(i, cols[j])]);
    // 1_x G_Λ : |rows| × |Λ|
    let gl = g_lambda.rows(&local_rows)?;
    let theta_cols = CMatrix::from_fn(restr.embedding.len(), cols.len(), |k, j| {
        let p = restr.embedding[k];
        if p == cols[j] {
            Complex64::new(cut.theta[p], 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let comm = commutator_rows(h, &cut.theta, &restr.embedding);
    let rhs = &gl * (theta_cols + apply_rows(&comm, &lhs_full));
    let residual = linalg::op_norm(&(lhs - rhs));
    let scale = linalg::op_norm(&gl).max(linalg::op_norm(&lhs_full));
    Ok(IdentityResidual {
        residual,
        scale,
        theta_gradient,
    })
}

/// Two-sided identity `1_x G_Ω 1_y = −1_x G_Λ [H,Θ] G_Ω [H,Θ'] G_Λ' 1_y`
/// for separated Λ, Λ' with x ∈ Λ₀ and y ∈ Λ'₀.
#[allow(clippy::too_many_arguments)]
pub fn two_sided_identity_residual(
    h: &OperatorHandle,
    restr: &Restriction,
    cut: &Cutoff,
    restr2: &Restriction,
    cut2: &Cutoff,
    z: EnergyPoint,
    x: Site,
    y: Site,
) -> Result<IdentityResidual> {
    let m = &h.matrix;
    let rows = h.geometry.chi(x);
    let cols = h.geometry.chi(y);
    let grad1 = check_support(m, restr, cut, &rows)?;
    let grad2 = check_support(m, restr2, cut2, &cols)?;
    let in1: HashSet<usize> = restr.embedding.iter().copied().collect();
    for &p in &restr2.embedding {
        if in1.contains(&p) {
            return Err(Error::invalid("restriction", format!("Λ and Λ' share grid point {p}")));
        }
        if let Some((q, _)) = m.row(p).find(|(q, _)| in1.contains(q)) {
            return Err(Error::invalid("restriction", format!("Λ and Λ' are adjacent across bond ({p}, {q})")));
        }
    }
    let loc1 = restr.local_index();
    let loc2 = restr2.local_index();
    let lrows: Vec<usize> = rows.iter().map(|&p| loc1[p].expect("rows lie in Λ₀")).collect();
    let lcols: Vec<usize> = cols.iter().map(|&p| loc2[p].expect("cols lie in Λ'₀")).collect();

    let g_omega = Resolvent::of_matrix(m, z)?;
    let g1 = Resolvent::of_matrix(&restr.matrix, z)?;
    let g2 = Resolvent::of_matrix(&restr2.matrix, z)?;

    let lhs = g_omega.block_of(&rows, &cols)?;
    // G_Λ' 1_y embedded in Ω, then [H,Θ'] on all Ω rows
    let g2c = g2.columns(&lcols)?;
    let mut emb = CMatrix::zeros(m.dim(), cols.len());
    for (k, &p) in restr2.embedding.iter().enumerate() {
        for j in 0..cols.len() {
            emb[(p, j)] = g2c[(k, j)];
        }
    }
    let all: Vec<usize> = (0..m.dim()).collect();
    let c2 = apply_rows(&commutator_rows(m, &cut2.theta, &all), &emb);
    let mid = g_omega.fact.solve_matrix(&c2);
    let c1 = apply_rows(&commutator_rows(m, &cut.theta, &restr.embedding), &mid);
    let gl = g1.rows(&lrows)?;
    let rhs = -(&gl * c1);
    let residual = linalg::op_norm(&(&lhs - rhs));
    let scale = linalg::op_norm(&gl)
        .max(linalg::op_norm(&g2c))
        .max(linalg::op_norm(&lhs));
    Ok(IdentityResidual {
        residual,
        scale,
        theta_gradient: grad1.max(grad2),
    })
}

/// Least-squares fit of `ln ‖χ_x G(E) χ_y‖` against `|x - y|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombesThomasFit {
    /// Fitted decay rate η̂ (negative slope).
    pub rate: f64,
    pub intercept: f64,
    pub r2: f64,
    pub fit: LineFit,
}

pub fn combes_thomas_probe(h: &OperatorHandle, e: f64, pairs: &[(Site, Site)]) -> Result<CombesThomasFit> {
    if pairs.len() < 2 {
        return Err(Error::Insufficient("Combes-Thomas fit needs >= 2 pairs".into()));
    }
    let m = &h.matrix;
    if linalg::count_below(m, e - SPECTRAL_GAP_FLOOR) != linalg::count_below(m, e + SPECTRAL_GAP_FLOOR) {
        return Err(Error::invalid("energy", format!("{e} lies in the spectrum")));
    }
    let r = Resolvent::new(h, EnergyPoint::real(e))?;
    let mut dist = Vec::with_capacity(pairs.len());
    let mut logs = Vec::with_capacity(pairs.len());
    for &(x, y) in pairs {
        let b = r.block(x, y)?;
        dist.push(x.dist(&y) as f64);
        logs.push(b.op_norm.ln());
    }
    let fit = line_fit(&dist, &logs, None)?;
    Ok(CombesThomasFit {
        rate: -fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelSpec};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn scalar_block() {
        let h = OperatorHandle::from_matrix(SparseMatrix::from_triplets(1, &[(0, 0, c(0.3, 0.0))]));
        let z = EnergyPoint::new(0.1, 0.2).unwrap();
        let b = green_block(&h, z, Site::d1(0), Site::d1(0)).unwrap();
        assert!((b.block[(0, 0)] - 1.0 / (c(0.3, 0.0) - z.z())).norm() < 1e-15);
    }

    #[test]
    fn tridiagonal_block_matches_dense_inverse() {
        let m = Model::new(ModelSpec::lattice(1, 5, 2.0)).unwrap();
        let h = m.hamiltonian(&m.sample(4)).unwrap();
        let z = EnergyPoint::new(0.0, 1.0).unwrap();
        let mut d = h.matrix.to_dense();
        for i in 0..5 {
            d[(i, i)] -= z.z();
        }
        let inv = d.try_inverse().unwrap();
        let r = Resolvent::new(&h, z).unwrap();
        for x in 0..5 {
            for y in 0..5 {
                let b = r.block(Site::d1(x), Site::d1(y)).unwrap();
                assert!((b.block[(0, 0)] - inv[(x as usize, y as usize)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_energy_is_reported() {
        let h = Model::new(ModelSpec::lattice(1, 3, 0.0)).unwrap().free_hamiltonian();
        match green_block(&h, EnergyPoint::real(2.0), Site::d1(0), Site::d1(1)) {
            Err(Error::SingularSolve { nearest, .. }) => assert!((nearest - 2.0).abs() < 1e-12),
            other => panic!("expected singular solve, got {other:?}"),
        }
    }

    #[test]
    fn complex_hamiltonian_rows_use_conjugate_solve() {
        let mut spec = ModelSpec::lattice(2, 6, 3.0);
        spec.flux = 0.17;
        let m = Model::new(spec).unwrap();
        let h = m.hamiltonian(&m.sample(2)).unwrap();
        let r = Resolvent::new(&h, EnergyPoint::new(1.0, 0.3).unwrap()).unwrap();
        let rows = [0usize, 7, 20];
        let cols = [3usize, 4, 5, 11, 30];
        let a = r.block_of(&rows, &cols).unwrap();
        let full = r.columns(&cols).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                assert!((a[(i, j)] - full[(rows[i], j)]).norm() < 1e-12);
            }
        }
        let b = r.block_of(&cols, &rows).unwrap();
        let full = r.columns(&rows).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                assert!((b[(i, j)] - full[(cols[i], j)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn continuum_blocks_have_many_points() {
        let m = Model::new(ModelSpec::continuum(2, 6, 0.5, 2.0)).unwrap();
        let h = m.hamiltonian(&m.sample(8)).unwrap();
        let b = green_block(&h, EnergyPoint::new(3.0, 0.1).unwrap(), Site::d2(2, 2), Site::d2(4, 3)).unwrap();
        assert_eq!(b.block.shape(), (25, 25));
        assert!(b.op_norm <= b.hs_norm + 1e-12);
        assert!(b.op_norm <= 10.0 + 1e-9);
    }

    fn half_box_setup(seed: u64) -> (OperatorHandle, Restriction, Cutoff) {
        let m = Model::new(ModelSpec::lattice(1, 40, 3.0)).unwrap();
        let h = m.hamiltonian(&m.sample(seed)).unwrap();
        let restr = Restriction::principal(&h, (0..20).collect());
        let mut theta = vec![0.0; 40];
        for (i, t) in theta.iter_mut().enumerate().take(19) {
            *t = if i <= 14 { 1.0 } else { (18 - i) as f64 / 4.0 };
        }
        let cut = Cutoff {
            inner: (0..=14).collect(),
            theta,
        };
        (h, restr, cut)
    }

    #[test]
    fn geometric_identity_on_half_box() {
        for seed in 0..5 {
            let (h, restr, cut) = half_box_setup(seed);
            let z = EnergyPoint::new(1.5, 0.5).unwrap();
            let r = geometric_identity_residual(&h, &restr, &cut, z, Site::d1(7), Site::d1(31)).unwrap();
            assert!(r.relative() <= 1e-10, "{r:?}");
            assert!((r.theta_gradient - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_with_full_cutoff_is_exact() {
        let m = Model::new(ModelSpec::lattice(1, 12, 3.0)).unwrap();
        let h = m.hamiltonian(&m.sample(1)).unwrap();
        let restr = Restriction::principal(&h, (0..12).collect());
        let cut = Cutoff {
            inner: (0..12).collect(),
            theta: vec![1.0; 12],
        };
        let r = geometric_identity_residual(&h, &restr, &cut, EnergyPoint::new(0.5, 0.2).unwrap(), Site::d1(3), Site::d1(9))
            .unwrap();
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn support_violation_names_the_site() {
        let (h, restr, mut cut) = half_box_setup(0);
        cut.theta[19] = 0.5;
        let err = geometric_identity_residual(&h, &restr, &cut, EnergyPoint::new(1.0, 0.5).unwrap(), Site::d1(3), Site::d1(30))
            .unwrap_err();
        assert!(err.to_string().contains("stencil site 19"), "{err}");
    }

    #[test]
    fn two_sided_identity_on_separated_regions() {
        for seed in 0..5 {
            let (h, restr, cut) = half_box_setup(seed);
            let restr2 = Restriction::principal(&h, (22..40).collect());
            let mut theta2 = vec![0.0; 40];
            for (i, t) in theta2.iter_mut().enumerate().skip(23) {
                *t = if i >= 27 { 1.0 } else { (i - 23) as f64 / 4.0 };
            }
            let cut2 = Cutoff {
                inner: (27..40).collect(),
                theta: theta2,
            };
            let z = EnergyPoint::new(2.5, 0.5).unwrap();
            let r = two_sided_identity_residual(&h, &restr, &cut, &restr2, &cut2, z, Site::d1(5), Site::d1(33)).unwrap();
            assert!(r.relative() <= 1e-10, "{r:?}");
        }
    }

    #[test]
    fn combes_thomas_matches_free_lattice_rate() {
        let h = Model::new(ModelSpec::lattice(1, 200, 0.0)).unwrap().free_hamiltonian();
        let pairs: Vec<(Site, Site)> = (0..20).map(|k| (Site::d1(90), Site::d1(90 + k))).collect();
        let fit = combes_thomas_probe(&h, -1.0, &pairs).unwrap();
        let exact = (1.5f64).acosh();
        assert!((fit.rate - exact).abs() < 0.05 * exact, "{fit:?}");
        let wider = combes_thomas_probe(&h, -2.0, &pairs).unwrap();
        assert!(wider.rate > fit.rate);
        assert!(combes_thomas_probe(&h, 1.0, &pairs).is_err());
    }

    #[test]
    fn combes_thomas_fit_is_clean_in_two_dimensions() {
        let h = Model::new(ModelSpec::lattice(2, 24, 0.0)).unwrap().free_hamiltonian();
        let pairs: Vec<(Site, Site)> = (0..10).map(|k| (Site::d2(6, 12), Site::d2(6 + k, 12))).collect();
        let fit = combes_thomas_probe(&h, -1.0, &pairs).unwrap();
        assert!(fit.rate > 0.0 && fit.r2 >= 0.99, "{fit:?}");
    }

    #[test]
    fn regularization_limit_is_cauchy() {
        let m = Model::new(ModelSpec::lattice(1, 30, 3.0)).unwrap();
        let h = m.hamiltonian(&m.sample(6)).unwrap();
        let e = 1.2345;
        let norms: Vec<f64> = (0..=20)
            .map(|k| {
                let eps = 1e-6 * 2f64.powi(-k);
                green_block(&h, EnergyPoint::new(e, eps).unwrap(), Site::d1(4), Site::d1(20)).unwrap().op_norm
            })
            .collect();
        let limit = green_block(&h, EnergyPoint::real(e), Site::d1(4), Site::d1(20)).unwrap().op_norm;
        assert!((norms[0] - limit).abs() < 1e-8 * limit.max(1.0));
        assert!(norms.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-8 * limit.max(1.0)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn regularized_block_norm_bounded_by_inverse_eps(seed in any::<u64>(), e in -1.0f64..6.0, eps in 0.01f64..1.0) {
            let m = Model::new(ModelSpec::lattice(1, 16, 4.0)).unwrap();
            let h = m.hamiltonian(&m.sample(seed)).unwrap();
            let b = green_block(&h, EnergyPoint::new(e, eps).unwrap(), Site::d1(3), Site::d1(3)).unwrap();
            prop_assert!(b.op_norm <= 1.0 / eps * (1.0 + 1e-12));
            prop_assert!(b.op_norm <= b.hs_norm * (1.0 + 1e-12));
        }

        #[test]
        fn block_norm_symmetric_under_conjugation(seed in any::<u64>(), e in -1.0f64..9.0, eps in 0.01f64..1.0) {
            let mut spec = ModelSpec::continuum(2, 4, 0.5, 3.0);
            spec.flux = 0.2;
            let m = Model::new(spec).unwrap();
            let h = m.hamiltonian(&m.sample(seed)).unwrap();
            let (x, y) = (Site::d2(0, 1), Site::d2(3, 2));
            let z = EnergyPoint::new(e, eps).unwrap();
            let a = green_block(&h, z, x, y).unwrap();
            let mut d = h.matrix.to_dense();
            for i in 0..h.dim() {
                d[(i, i)] -= z.conj_z();
            }
            let inv = d.try_inverse().unwrap();
            let (ry, cx) = (h.geometry.chi(y), h.geometry.chi(x));
            let b = CMatrix::from_fn(ry.len(), cx.len(), |i, j| inv[(ry[i], cx[j])]);
            prop_assert!((a.op_norm - linalg::op_norm(&b)).abs() < 1e-12 * a.op_norm.max(1.0));
        }

        #[test]
        fn first_resolvent_identity(seed in any::<u64>(), e1 in 0.0f64..4.0, e2 in 0.0f64..4.0) {
            let m = Model::new(ModelSpec::lattice(1, 14, 2.0)).unwrap();
            let h = m.hamiltonian(&m.sample(seed)).unwrap();
            let (z, w) = (EnergyPoint::new(e1, 0.3).unwrap(), EnergyPoint::new(e2, 0.7).unwrap());
            let all: Vec<usize> = (0..14).collect();
            let gz = Resolvent::new(&h, z).unwrap().columns(&all).unwrap();
            let gw = Resolvent::new(&h, w).unwrap().columns(&all).unwrap();
            let lhs = &gz - &gw;
            let rhs = (&gz * &gw) * (z.z() - w.z());
            prop_assert!(linalg::op_norm(&(lhs - &rhs)) <= 1e-10 * linalg::op_norm(&gz).max(linalg::op_norm(&gw)));
        }
    }
}
