//! Sparse Hermitian storage, complex factorizations and small dense helpers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Compressed-row complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
}

impl SparseMatrix {
    /// Assemble from `(row, col, value)` triplets; duplicates are summed and
    /// explicit zeros are kept so the stencil pattern survives `λ = 0`.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, Complex64)]) -> Self {
        let mut rows: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            assert!(i < n && j < n, "triplet ({i},{j}) outside {n}x{n}");
            rows[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for (j, v) in row {
                if last == Some(j) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(j);
                    vals.push(v);
                    last = Some(j);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseMatrix {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => ZERO,
        }
    }

    pub fn is_real(&self) -> bool {
        self.vals.iter().all(|v| v.im == 0.0)
    }

    /// Largest |i - j| over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Infinity norm, an upper bound for the spectral radius.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// max |H_ij - conj(H_ji)| relative to max |H_ij|.
    pub fn hermiticity_defect(&self) -> f64 {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i).conj()).norm());
            }
        }
        worst / scale
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `self · b` for a dense right-hand side.
    pub fn mul_dense(&self, b: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.n, b.ncols());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                for k in 0..b.ncols() {
                    out[(i, k)] += v * b[(j, k)];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    pub fn to_dense_real(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] += v.re;
            }
        }
        m
    }

    /// `self + diag(d)`.
    pub fn add_diagonal(&self, d: &[f64]) -> SparseMatrix {
        assert_eq!(d.len(), self.n);
        let mut trip = self.triplets();
        trip.extend(d.iter().enumerate().map(|(i, &v)| (i, i, Complex64::new(v, 0.0))));
        SparseMatrix::from_triplets(self.n, &trip)
    }

    pub fn triplets(&self) -> Vec<(usize, usize, Complex64)> {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    /// Principal submatrix on `indices` (Dirichlet restriction).
    pub fn principal_submatrix(&self, indices: &[usize]) -> SparseMatrix {
        let mut pos = vec![usize::MAX; self.n];
        for (k, &i) in indices.iter().enumerate() {
            pos[i] = k;
        }
        let mut trip = Vec::new();
        for (k, &i) in indices.iter().enumerate() {
            for (j, v) in self.row(i) {
                if pos[j] != usize::MAX {
                    trip.push((k, pos[j], v));
                }
            }
        }
        SparseMatrix::from_triplets(indices.len(), &trip)
    }

    /// The commutator `[H, Θ]` for a diagonal multiplication operator Θ:
    /// entries `H_pq (θ_q - θ_p)`.
    pub fn commutator_with_diagonal(&self, theta: &[f64]) -> SparseMatrix {
        let trip: Vec<_> = self
            .triplets()
            .into_iter()
            .filter_map(|(i, j, v)| {
                let c = v * (theta[j] - theta[i]);
                (c != ZERO).then_some((i, j, c))
            })
            .collect();
        SparseMatrix::from_triplets(self.n, &trip)
    }
}

/// Banded LU with partial pivoting (LAPACK `gbtrf` layout, row-major band).
#[derive(Debug, Clone)]
struct BandLu {
    n: usize,
    kl: usize,
    width: usize,
    a: Vec<Complex64>,
    piv: Vec<usize>,
}

impl BandLu {
    fn offset(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    fn at(&self, i: usize, j: usize) -> Complex64 {
        self.a[self.offset(i, j)]
    }

    fn factor(m: &SparseMatrix, shift: Complex64, kl: usize) -> Self {
        let n = m.dim();
        let ku = kl;
        let width = 2 * kl + ku + 1;
        let mut lu = BandLu {
            n,
            kl,
            width,
            a: vec![ZERO; n * width],
            piv: vec![0; n],
        };
        for i in 0..n {
            for (j, v) in m.row(i) {
                let o = lu.offset(i, j);
                lu.a[o] += v;
            }
            let o = lu.offset(i, i);
            lu.a[o] -= shift;
        }
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu.at(k, k).norm();
            for i in k + 1..=last {
                let v = lu.at(i, k).norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            lu.piv[k] = p;
            let jmax = (k + ku + kl).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let (ok, op) = (lu.offset(k, j), lu.offset(p, j));
                    lu.a.swap(ok, op);
                }
            }
            let pivot = lu.at(k, k);
            if pivot == ZERO {
                continue;
            }
            for i in k + 1..=last {
                let oik = lu.offset(i, k);
                let l = lu.a[oik] / pivot;
                lu.a[oik] = l;
                if l == ZERO {
                    continue;
                }
                for j in k + 1..=jmax {
                    let akj = lu.at(k, j);
                    let o = lu.offset(i, j);
                    lu.a[o] -= l * akj;
                }
            }
        }
        lu
    }

    fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = self.n;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != ZERO {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    b[i] -= self.at(i, k) * bk;
                }
            }
        }
        let reach = self.width - self.kl - 1;
        for i in (0..n).rev() {
            let mut acc = b[i];
            for j in i + 1..=(i + reach).min(n - 1) {
                acc -= self.at(i, j) * b[j];
            }
            b[i] = acc / self.at(i, i);
        }
    }

    fn min_pivot(&self) -> f64 {
        (0..self.n).map(|i| self.at(i, i).norm()).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone)]
enum Lu {
    Band(BandLu),
    Dense(nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>),
}

/// LU factorization of `H - z` for a sparse Hermitian `H`; banded when the
/// stencil ordering is narrow, dense otherwise.
#[derive(Debug, Clone)]
pub struct Factorization {
    lu: Lu,
    n: usize,
}

impl Factorization {
    pub fn new(m: &SparseMatrix, shift: Complex64) -> Self {
        let n = m.dim();
        let bw = m.bandwidth();
        let lu = if n > 8 && 4 * bw < n {
            Lu::Band(BandLu::factor(m, shift, bw))
        } else {
            let mut d = m.to_dense();
            for i in 0..n {
                d[(i, i)] -= shift;
            }
            Lu::Dense(d.lu())
        };
        Factorization { lu, n }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn is_banded(&self) -> bool {
        matches!(self.lu, Lu::Band(_))
    }

    /// Smallest |U_ii|; zero means the shifted matrix is exactly singular.
    pub fn min_pivot(&self) -> f64 {
        match &self.lu {
            Lu::Band(b) => b.min_pivot(),
            Lu::Dense(d) => {
                let u = d.u();
                (0..self.n).map(|i| u[(i, i)].norm()).fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn solve_vec(&self, b: &[Complex64]) -> Vec<Complex64> {
        match &self.lu {
            Lu::Band(lu) => {
                let mut x = b.to_vec();
                lu.solve_in_place(&mut x);
                x
            }
            Lu::Dense(lu) => {
                let rhs = CVector::from_column_slice(b);
                lu.solve(&rhs)
                    .map(|x| x.as_slice().to_vec())
                    .unwrap_or_else(|| vec![Complex64::new(f64::NAN, f64::NAN); self.n])
            }
        }
    }

    /// Solve for the unit vectors `e_j`, `j ∈ cols`; returns an `n × |cols|` matrix.
    pub fn solve_unit_columns(&self, cols: &[usize]) -> CMatrix {
        let mut out = CMatrix::zeros(self.n, cols.len());
        let mut rhs = vec![ZERO; self.n];
        for (k, &j) in cols.iter().enumerate() {
            rhs.iter_mut().for_each(|v| *v = ZERO);
            rhs[j] = ONE;
            let x = self.solve_vec(&rhs);
            out.set_column(k, &CVector::from_vec(x));
        }
        out
    }

    pub fn solve_matrix(&self, b: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.n, b.ncols());
        for k in 0..b.ncols() {
            let col: Vec<Complex64> = b.column(k).iter().copied().collect();
            out.set_column(k, &CVector::from_vec(self.solve_vec(&col)));
        }
        out
    }
}

/// Normwise backward error of `(H - z) x = b`.
pub fn backward_error(m: &SparseMatrix, shift: Complex64, x: &[Complex64], b: &[Complex64]) -> f64 {
    let hx = m.mul_vec(x);
    let r: f64 = hx
        .iter()
        .zip(x)
        .zip(b)
        .map(|((h, xi), bi)| (h - shift * xi - bi).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let xn: f64 = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let bn: f64 = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let an = m.norm_inf() + shift.norm();
    r / (an * xn + bn).max(f64::MIN_POSITIVE)
}

/// Eigen-decomposition of a Hermitian matrix with ascending eigenvalues.
pub fn hermitian_eigen(m: &SparseMatrix) -> (Vec<f64>, CMatrix) {
    if m.is_real() {
        real_symmetric_eigen(m.to_dense_real())
    } else {
        dense_hermitian_eigen(m.to_dense())
    }
}

pub fn real_symmetric_eigen(a: DMatrix<f64>) -> (Vec<f64>, CMatrix) {
    let eig = a.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = CMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        for r in 0..n {
            vecs[(r, k)] = Complex64::new(eig.eigenvectors[(r, i)], 0.0);
        }
    }
    (vals, vecs)
}

pub fn dense_hermitian_eigen(a: CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = a.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMatrix::from_fn(n, n, |r, k| eig.eigenvectors[(r, order[k])]);
    (vals, vecs)
}

/// Eigenvalues only.
pub fn hermitian_eigenvalues(m: &SparseMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = if m.is_real() {
        m.to_dense_real().symmetric_eigenvalues().iter().copied().collect()
    } else {
        m.to_dense().symmetric_eigenvalues().iter().copied().collect()
    };
    v.sort_by(f64::total_cmp);
    v
}

/// Number of eigenvalues strictly below `e`.
///
/// Real tridiagonal matrices use a Sturm sequence, narrow-banded ones a banded
/// LDLᴴ inertia count; everything else falls back to a full eigenvalue
/// computation.
pub fn count_below(m: &SparseMatrix, e: f64) -> usize {
    let n = m.dim();
    let bw = m.bandwidth();
    if m.is_real() && bw <= 1 {
        let diag: Vec<f64> = (0..n).map(|i| m.get(i, i).re).collect();
        let off: Vec<f64> = (1..n).map(|i| m.get(i, i - 1).re).collect();
        sturm_count(&diag, &off, e)
    } else if n > 8 && 4 * bw < n {
        banded_inertia(m, e)
    } else {
        hermitian_eigenvalues(m).iter().filter(|&&v| v < e).count()
    }
}

/// Negative pivots of the banded LDLᴴ factorization of `H - e` (Sylvester).
fn banded_inertia(m: &SparseMatrix, e: f64) -> usize {
    let n = m.dim();
    let b = m.bandwidth();
    let w = b + 1;
    let guard = f64::EPSILON * (m.norm_inf() + e.abs()).max(f64::MIN_POSITIVE);
    let mut l = vec![ZERO; n * w];
    let mut d = vec![0.0; n];
    let at = |i: usize, j: usize| i * w + (j + b - i);
    let mut count = 0;
    for i in 0..n {
        let j0 = i.saturating_sub(b);
        for j in j0..i {
            let mut s = m.get(i, j);
            for k in j0.max(j.saturating_sub(b))..j {
                s -= l[at(i, k)] * d[k] * l[at(j, k)].conj();
            }
            l[at(i, j)] = s / d[j];
        }
        let mut s = m.get(i, i).re - e;
        for k in j0..i {
            s -= l[at(i, k)].norm_sqr() * d[k];
        }
        if s.abs() < guard {
            s = guard.copysign(s);
        }
        if s < 0.0 {
            count += 1;
        }
        d[i] = s;
    }
    count
}

/// Negative pivots of the LDLᵀ factorization of `T - e`.
pub fn sturm_count(diag: &[f64], off: &[f64], e: f64) -> usize {
    let guard = f64::EPSILON * (diag.iter().chain(off).fold(0.0f64, |a, v| a.max(v.abs())) + e.abs()).max(f64::MIN_POSITIVE);
    let mut count = 0;
    let mut q = 0.0;
    for i in 0..diag.len() {
        q = if i == 0 {
            diag[0] - e
        } else {
            let prev = if q.abs() < guard { guard.copysign(q) } else { q };
            diag[i] - e - off[i - 1] * off[i - 1] / prev
        };
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Whether `H - e` is positive definite (banded Cholesky attempt).
pub fn is_positive_definite_shift(m: &SparseMatrix, e: f64) -> bool {
    let n = m.dim();
    let b = m.bandwidth();
    let w = b + 1;
    // l[i * w + (j + b - i)] holds L(i, j) for i - b <= j <= i
    let mut l = vec![ZERO; n * w];
    let at = |i: usize, j: usize| i * w + (j + b - i);
    for i in 0..n {
        let j0 = i.saturating_sub(b);
        for j in j0..=i {
            let mut s = m.get(i, j);
            if i == j {
                s -= Complex64::new(e, 0.0);
            }
            for k in j0.max(j.saturating_sub(b))..j {
                s -= l[at(i, k)] * l[at(j, k)].conj();
            }
            if i == j {
                if !(s.re > 0.0) {
                    return false;
                }
                l[at(i, i)] = Complex64::new(s.re.sqrt(), 0.0);
            } else {
                l[at(i, j)] = s / l[at(j, j)];
            }
        }
    }
    true
}

/// Smallest eigenvalue by bisection on positive definiteness of `H - e`.
pub fn lowest_eigenvalue(m: &SparseMatrix) -> f64 {
    let r = m.norm_inf() + 1.0;
    let (mut lo, mut hi) = (-r, r);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 4.0 * f64::EPSILON * r {
            break;
        }
        if is_positive_definite_shift(m, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Largest singular value.
pub fn op_norm(m: &CMatrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return frobenius(m);
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Singular values, descending.
pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Sum of absolute eigenvalues of a Hermitian matrix.
pub fn hermitian_trace_norm(m: &CMatrix) -> f64 {
    m.clone().symmetric_eigenvalues().iter().map(|v| v.abs()).sum()
}

/// `(M - M*) / 2i`
pub fn imaginary_part(m: &CMatrix) -> CMatrix {
    (m - m.adjoint()) * Complex64::new(0.0, -0.5)
}

/// `(M + M*) / 2`
pub fn real_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

pub fn invert(m: &CMatrix, what: &str) -> Result<CMatrix> {
    let s = singular_values(m);
    let cond = s.first().copied().unwrap_or(0.0) / s.last().copied().unwrap_or(0.0);
    if !cond.is_finite() || cond > 1e13 {
        return Err(Error::IllConditioned {
            what: what.to_string(),
            condition: cond,
        });
    }
    m.clone().try_inverse().ok_or_else(|| Error::IllConditioned {
        what: what.to_string(),
        condition: cond,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize, periodic: bool) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, Complex64::new(2.0 + 0.1 * i as f64, 0.0)));
            if i + 1 < n {
                t.push((i, i + 1, Complex64::new(-1.0, 0.0)));
                t.push((i + 1, i, Complex64::new(-1.0, 0.0)));
            }
        }
        if periodic {
            t.push((0, n - 1, Complex64::new(-1.0, 0.0)));
            t.push((n - 1, 0, Complex64::new(-1.0, 0.0)));
        }
        SparseMatrix::from_triplets(n, &t)
    }

    #[test]
    fn banded_and_dense_solves_agree() {
        let m = chain(40, false);
        let z = Complex64::new(1.3, 0.2);
        let band = Factorization::new(&m, z);
        assert!(band.is_banded());
        let dense = (m.to_dense() - CMatrix::identity(40, 40) * z).try_inverse().unwrap();
        let cols = band.solve_unit_columns(&[0, 17, 39]);
        for (k, &j) in [0usize, 17, 39].iter().enumerate() {
            for i in 0..40 {
                assert!((cols[(i, k)] - dense[(i, j)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn band_lu_pivots_when_needed() {
        // zero leading diagonal forces a row swap
        let t = vec![
            (0, 0, Complex64::new(0.0, 0.0)),
            (0, 1, Complex64::new(1.0, 0.0)),
            (1, 0, Complex64::new(1.0, 0.0)),
            (1, 1, Complex64::new(0.0, 0.0)),
            (1, 2, Complex64::new(2.0, 0.0)),
            (2, 1, Complex64::new(2.0, 0.0)),
            (2, 2, Complex64::new(1.0, 0.0)),
        ];
        let mut trip = t.clone();
        for i in 3..20 {
            trip.push((i, i, Complex64::new(3.0, 0.0)));
            trip.push((i, i - 1, Complex64::new(1.0, 0.0)));
            trip.push((i - 1, i, Complex64::new(1.0, 0.0)));
        }
        let m = SparseMatrix::from_triplets(20, &trip);
        let f = Factorization::new(&m, ZERO);
        assert!(f.is_banded());
        let b: Vec<Complex64> = (0..20).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let x = f.solve_vec(&b);
        assert!(backward_error(&m, ZERO, &x, &b) < 1e-14);
    }

    #[test]
    fn periodic_chain_uses_dense_path() {
        let m = chain(30, true);
        let f = Factorization::new(&m, Complex64::new(0.5, 0.1));
        assert!(!f.is_banded());
    }

    #[test]
    fn sturm_matches_eigenvalues() {
        let m = chain(25, false);
        let ev = hermitian_eigenvalues(&m);
        for e in [-1.0, 0.3, 1.7, 2.5, 3.9, 10.0] {
            assert_eq!(count_below(&m, e), ev.iter().filter(|&&v| v < e).count());
        }
    }

    #[test]
    fn banded_inertia_matches_eigenvalues() {
        let n = 36;
        let side = 6;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, Complex64::new(4.0 + (i as f64 * 0.37).sin(), 0.0)));
            if i % side + 1 < side {
                t.push((i, i + 1, Complex64::from_polar(-1.0, 0.3 * i as f64)));
                t.push((i + 1, i, Complex64::from_polar(-1.0, -0.3 * i as f64)));
            }
            if i + side < n {
                t.push((i, i + side, Complex64::new(-1.0, 0.0)));
                t.push((i + side, i, Complex64::new(-1.0, 0.0)));
            }
        }
        let m = SparseMatrix::from_triplets(n, &t);
        let ev = hermitian_eigenvalues(&m);
        for e in [-1.0, 1.3, 2.2, 3.9, 4.4, 6.1, 9.0] {
            assert_eq!(count_below(&m, e), ev.iter().filter(|&&v| v < e).count(), "e = {e}");
        }
    }

    #[test]
    fn lowest_eigenvalue_by_bisection() {
        let m = chain(30, true);
        let ev = hermitian_eigenvalues(&m);
        assert!((lowest_eigenvalue(&m) - ev[0]).abs() < 1e-12);
    }

    #[test]
    fn commutator_vanishes_for_constant_theta() {
        let m = chain(10, true);
        assert_eq!(m.commutator_with_diagonal(&[1.0; 10]).nnz(), 0);
    }
}
