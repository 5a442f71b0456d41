//! Full eigen-decompositions of finite-volume operators.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, SparseMatrix};
use crate::model::{Geometry, OperatorHandle};

/// Closed energy window `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid("interval", format!("[{lo}, {hi}] is not a bounded interval")));
        }
        Ok(Interval { lo, hi })
    }

    /// Everything, for projectors onto the full spectrum.
    pub fn all() -> Self {
        Interval {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn contains(&self, e: f64) -> bool {
        self.lo <= e && e <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Eigenvalues (ascending) and orthonormal eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub eigenvalues: Vec<f64>,
    pub vectors: CMatrix,
    pub geometry: Option<Arc<Geometry>>,
    /// `‖H‖_∞`, the scale of the residual check.
    pub norm: f64,
}

/// Eigenpair residual tolerance relative to `‖H‖`.
pub const EIGEN_RESIDUAL: f64 = 1e-10;

impl SpectralData {
    pub fn new(h: &OperatorHandle) -> Result<Self> {
        let mut s = SpectralData::from_matrix(&h.matrix)?;
        s.geometry = Some(Arc::clone(&h.geometry));
        Ok(s)
    }

    pub fn from_matrix(m: &SparseMatrix) -> Result<Self> {
        let (eigenvalues, vectors) = linalg::hermitian_eigen(m);
        let s = SpectralData {
            eigenvalues,
            vectors,
            geometry: None,
            norm: m.norm_inf(),
        };
        s.verify(m)?;
        Ok(s)
    }

    /// Residual and orthonormality checks.
    pub fn verify(&self, m: &SparseMatrix) -> Result<()> {
        let scale = self.norm.max(1.0);
        let n = self.dim();
        for k in 0..n {
            let v: Vec<Complex64> = self.vectors.column(k).iter().copied().collect();
            let hv = m.mul_vec(&v);
            let r: f64 = hv
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b * self.eigenvalues[k]).norm_sqr())
                .sum::<f64>()
                .sqrt();
            if r > EIGEN_RESIDUAL * scale {
                return Err(Error::Inaccurate {
                    what: format!("eigenpair {k}"),
                    residual: r / scale,
                });
            }
        }
        let gram = self.vectors.adjoint() * &self.vectors;
        let defect = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (gram[(i, j)] - if i == j { 1.0 } else { 0.0 }).norm())
            .fold(0.0, f64::max);
        if defect > EIGEN_RESIDUAL {
            return Err(Error::Inaccurate {
                what: "eigenvector orthonormality".into(),
                residual: defect,
            });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Indices n with `E_n ∈ J`.
    pub fn window(&self, j: Interval) -> std::ops::Range<usize> {
        let lo = self.eigenvalues.partition_point(|&e| e < j.lo);
        let hi = self.eigenvalues.partition_point(|&e| e <= j.hi);
        lo..hi.max(lo)
    }

    /// Number of eigenvalues strictly below `e`.
    pub fn count_below(&self, e: f64) -> usize {
        self.eigenvalues.partition_point(|&v| v < e)
    }

    /// `‖1_set ψ_n‖²`.
    pub fn mass(&self, n: usize, set: &[usize]) -> f64 {
        set.iter().map(|&q| self.vectors[(q, n)].norm_sqr()).sum()
    }

    /// `⟨U ψ_n, ψ_n⟩` for a diagonal weight.
    pub fn weighted_mass(&self, n: usize, w: &[(usize, f64)]) -> f64 {
        w.iter().map(|&(q, u)| u * self.vectors[(q, n)].norm_sqr()).sum()
    }

    /// Rows `set` of the eigenvector matrix restricted to the columns `range`.
    pub fn restricted(&self, set: &[usize], range: std::ops::Range<usize>) -> CMatrix {
        let start = range.start;
        CMatrix::from_fn(set.len(), range.len(), |i, k| self.vectors[(set[i], start + k)])
    }

    /// `1_rows g(H) 1_cols` for a spectral multiplier over the eigenvalues in `J`.
    pub fn function_block(&self, j: Interval, rows: &[usize], cols: &[usize], g: impl Fn(f64) -> Complex64) -> CMatrix {
        let range = self.window(j);
        let a = self.restricted(rows, range.clone());
        let b = self.restricted(cols, range.clone());
        let mut scaled = a;
        for (k, n) in range.enumerate() {
            let f = g(self.eigenvalues[n]);
            for i in 0..scaled.nrows() {
                scaled[(i, k)] *= f;
            }
        }
        scaled * b.adjoint()
    }

    /// `1_rows P_J 1_cols`.
    pub fn projector_block(&self, j: Interval, rows: &[usize], cols: &[usize]) -> CMatrix {
        self.function_block(j, rows, cols, |_| Complex64::new(1.0, 0.0))
    }

    /// `1_rows (H - z)⁻¹ 1_cols` from the eigen-decomposition.
    pub fn green_block(&self, z: Complex64, rows: &[usize], cols: &[usize]) -> CMatrix {
        self.function_block(Interval::all(), rows, cols, |e| 1.0 / (e - z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelSpec};
    use crate::resolvent::{EnergyPoint, Resolvent};

    #[test]
    fn spectral_green_matches_factorized_solve() {
        let m = Model::new(ModelSpec::continuum(2, 4, 0.5, 3.0)).unwrap();
        let h = m.hamiltonian(&m.sample(7)).unwrap();
        let s = SpectralData::new(&h).unwrap();
        let z = EnergyPoint::new(4.0, 0.2).unwrap();
        let rows = [0usize, 5, 12];
        let cols = [3usize, 24];
        let a = s.green_block(z.z(), &rows, &cols);
        let b = Resolvent::new(&h, z).unwrap().block_of(&rows, &cols).unwrap();
        assert!(linalg::op_norm(&(a - b)) < 1e-10);
    }

    #[test]
    fn full_projector_is_identity() {
        let m = Model::new(ModelSpec::lattice(1, 9, 2.0)).unwrap();
        let s = SpectralData::new(&m.hamiltonian(&m.sample(0)).unwrap()).unwrap();
        let all: Vec<usize> = (0..9).collect();
        let p = s.projector_block(Interval::all(), &all, &all);
        assert!(linalg::op_norm(&(p - CMatrix::identity(9, 9))) < 1e-12);
        assert_eq!(s.window(Interval::new(100.0, 200.0).unwrap()).len(), 0);
        assert_eq!(s.count_below(1e9), 9);
    }
}
