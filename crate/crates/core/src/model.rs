//! Random operator families `H = H₀ + λ Σ η_α U_α` on finite boxes.
//!
//! Two discretization modes are supported. In lattice mode the grid is `ℤ^d`
//! itself (h = 1) and each coupling acts on a single site. In continuum-grid
//! mode the box is sampled with spacing `h = 1/m`, the kinetic term is the
//! 3-point (d = 1) or 5-point (d = 2) finite-difference Laplacian and each
//! coupling multiplies a bump of radius `r` centred on a lattice site.
//!
//! Grid points are indexed row-major with the first axis fastest. Lattice
//! sites sit on the grid at integer coordinates `0..cells`.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SparseMatrix};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Lattice,
    ContinuumGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BumpProfile {
    /// Indicator of the closed sup-norm ball of radius r.
    #[default]
    IndicatorBall,
    /// `max(0, 1 - |q - α|∞ / r)`.
    Tent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Background {
    Constant(f64),
    /// Values on a period cell measured in grid points, first axis fastest.
    Periodic { period: Vec<usize>, values: Vec<f64> },
}

impl Default for Background {
    fn default() -> Self {
        Background::Constant(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distribution {
    #[default]
    Uniform,
    /// Piecewise-linear density sampled at equally spaced nodes of [0, 1].
    Table { density: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    #[default]
    Dirichlet,
    Neumann,
    Periodic,
    /// Periodic wrap with phase `e^{i k_j}` across axis j.
    QuasiPeriodic { k: Vec<f64> },
}

impl Boundary {
    pub fn wraps(&self) -> bool {
        matches!(self, Boundary::Periodic | Boundary::QuasiPeriodic { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gauge {
    /// Phases on second-axis hops only.
    #[default]
    Landau,
    /// Phases split symmetrically between the axes.
    Symmetric,
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

/// Declarative description of a random operator family on a finite box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// 1 or 2.
    pub dimension: usize,
    #[serde(default)]
    pub mode: Mode,
    /// Lattice sites per side; the box is `[0, cells - 1]^d` in length units.
    pub cells: usize,
    /// Grid spacing, 1 in lattice mode.
    #[serde(default = "one")]
    pub h: f64,
    #[serde(default = "one")]
    pub bump_radius: f64,
    #[serde(default)]
    pub bump_profile: BumpProfile,
    #[serde(default)]
    pub background: Background,
    /// Magnetic flux per grid plaquette in units of the flux quantum.
    #[serde(default)]
    pub flux: f64,
    #[serde(default)]
    pub gauge: Gauge,
    /// Disorder strength λ ≥ 0.
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub distribution: Distribution,
    /// Independence radius r₀ ≥ 2r.
    #[serde(default = "two")]
    pub r0: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

impl ModelSpec {
    /// Lattice Anderson model on `cells^d` sites with uniform couplings.
    pub fn lattice(dimension: usize, cells: usize, lambda: f64) -> Self {
        ModelSpec {
            dimension,
            mode: Mode::Lattice,
            cells,
            h: 1.0,
            bump_radius: 1.0,
            bump_profile: BumpProfile::IndicatorBall,
            background: Background::Constant(0.0),
            flux: 0.0,
            gauge: Gauge::Landau,
            lambda,
            distribution: Distribution::Uniform,
            r0: 2.0,
            boundary: Boundary::Dirichlet,
        }
    }

    /// Finite-difference continuum model with spacing `h`.
    pub fn continuum(dimension: usize, cells: usize, h: f64, lambda: f64) -> Self {
        ModelSpec {
            mode: Mode::ContinuumGrid,
            h,
            ..ModelSpec::lattice(dimension, cells, lambda)
        }
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_cells(mut self, cells: usize) -> Self {
        self.cells = cells;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model spec serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// A lattice site `α ∈ ℤ^d` (second coordinate unused for d = 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site(pub [i64; 2]);

impl Site {
    pub fn d1(x: i64) -> Self {
        Site([x, 0])
    }

    pub fn d2(x: i64, y: i64) -> Self {
        Site([x, y])
    }

    /// Sup-norm distance in lattice units.
    pub fn dist(&self, other: &Site) -> i64 {
        (self.0[0] - other.0[0]).abs().max((self.0[1] - other.0[1]).abs())
    }
}

/// Grid layout of a box plus the local shapes (bumps, unit balls) on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub dim: usize,
    pub cells: usize,
    pub mode: Mode,
    /// Grid points per unit length (1/h).
    pub sub: usize,
    /// Grid points per side.
    pub side: usize,
    pub h: f64,
    pub radius: f64,
    pub profile: BumpProfile,
    pub wraps: bool,
}

impl Geometry {
    pub fn n_points(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    pub fn index(&self, k: [usize; 2]) -> usize {
        k[0] + if self.dim == 2 { self.side * k[1] } else { 0 }
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        if self.dim == 2 {
            [idx % self.side, idx / self.side]
        } else {
            [idx, 0]
        }
    }

    /// Coordinates of a grid point in length units.
    pub fn coord(&self, idx: usize) -> [f64; 2] {
        let k = self.multi_index(idx);
        [k[0] as f64 * self.h, k[1] as f64 * self.h]
    }

    /// Grid index of a lattice site, if it lies in the box.
    pub fn site_index(&self, s: Site) -> Option<usize> {
        let mut k = [0usize; 2];
        for a in 0..self.dim {
            let c = s.0[a];
            if c < 0 || c as usize >= self.cells {
                return None;
            }
            k[a] = c as usize * self.sub;
        }
        if self.dim == 1 && s.0[1] != 0 {
            return None;
        }
        Some(self.index(k))
    }

    /// Lattice sites inside the box.
    pub fn sites(&self) -> Vec<Site> {
        let c = self.cells as i64;
        if self.dim == 1 {
            (0..c).map(Site::d1).collect()
        } else {
            (0..c).flat_map(|y| (0..c).map(move |x| Site::d2(x, y))).collect()
        }
    }

    /// Sup-norm distance between grid coordinates, minimum image when the box wraps.
    pub fn coord_dist(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let period = self.side as f64 * self.h;
        (0..self.dim)
            .map(|j| {
                let d = (a[j] - b[j]).abs();
                if self.wraps {
                    d.min(period - d)
                } else {
                    d
                }
            })
            .fold(0.0, f64::max)
    }

    fn site_coord(s: Site) -> [f64; 2] {
        [s.0[0] as f64, s.0[1] as f64]
    }

    /// Grid points with `|q - x|∞ ≤ radius` (plus a 1e-9 tolerance).
    pub fn ball(&self, centre: [f64; 2], radius: f64) -> Vec<usize> {
        (0..self.n_points())
            .filter(|&i| self.coord_dist(self.coord(i), centre) <= radius + 1e-9)
            .collect()
    }

    /// Grid points of the unit ball `χ_x`: the site itself in lattice mode,
    /// the closed sup-ball of radius r on the grid otherwise.
    pub fn chi(&self, x: Site) -> Vec<usize> {
        match self.mode {
            Mode::Lattice => self.site_index(x).into_iter().collect(),
            Mode::ContinuumGrid => self.ball(Self::site_coord(x), self.radius),
        }
    }

    /// The bump `U_α` sampled on the grid as `(index, value)` pairs.
    pub fn bump(&self, alpha: Site) -> Vec<(usize, f64)> {
        match self.mode {
            Mode::Lattice => self.site_index(alpha).map(|i| (i, 1.0)).into_iter().collect(),
            Mode::ContinuumGrid => {
                let c = Self::site_coord(alpha);
                (0..self.n_points())
                    .filter_map(|i| {
                        let d = self.coord_dist(self.coord(i), c);
                        let v = match self.profile {
                            BumpProfile::IndicatorBall => {
                                if d <= self.radius + 1e-9 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            BumpProfile::Tent => (1.0 - d / self.radius).max(0.0),
                        };
                        (v > 0.0).then_some((i, v))
                    })
                    .collect()
            }
        }
    }

    /// Distance from a grid point to the complement of the box, measured to
    /// the first grid layer outside it. Infinite when the box wraps.
    pub fn dist_to_complement(&self, idx: usize) -> f64 {
        if self.wraps {
            return f64::INFINITY;
        }
        let k = self.multi_index(idx);
        (0..self.dim)
            .map(|j| {
                let lo = (k[j] + 1) as f64 * self.h;
                let hi = (self.side - k[j]) as f64 * self.h;
                lo.min(hi)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// One disorder draw: couplings indexed like [`Model::coupling_sites`].
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub eta: Vec<f64>,
    pub seed: u64,
    pub spec: Arc<ModelSpec>,
}

/// Inverse-CDF sampler for the single-site law.
#[derive(Debug, Clone)]
enum Sampler {
    Uniform,
    Table { density: Vec<f64>, cdf: Vec<f64> },
}

impl Sampler {
    fn new(dist: &Distribution) -> Result<Self> {
        match dist {
            Distribution::Uniform => Ok(Sampler::Uniform),
            Distribution::Table { density } => {
                let n = density.len();
                if n < 2 {
                    return Err(Error::invalid("distribution", "density table needs >= 2 nodes"));
                }
                if density.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                    return Err(Error::invalid("distribution", "density must be positive and finite (Lipschitz log)"));
                }
                let dx = 1.0 / (n - 1) as f64;
                let mut cdf = vec![0.0; n];
                for i in 1..n {
                    cdf[i] = cdf[i - 1] + 0.5 * dx * (density[i - 1] + density[i]);
                }
                let total = cdf[n - 1];
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid("distribution", format!("density integrates to {total}, not 1")));
                }
                let dmax = density.iter().copied().fold(0.0, f64::max);
                if dmax < 1.0 {
                    return Err(Error::invalid("distribution", "density bound D must be >= 1"));
                }
                Ok(Sampler::Table {
                    density: density.clone(),
                    cdf,
                })
            }
        }
    }

    fn inverse_cdf(&self, u: f64) -> f64 {
        match self {
            Sampler::Uniform => u,
            Sampler::Table { density, cdf } => {
                let n = density.len();
                let dx = 1.0 / (n - 1) as f64;
                let i = match cdf.binary_search_by(|c| c.total_cmp(&u)) {
                    Ok(i) => return (i as f64 * dx).min(1.0),
                    Err(i) => i.clamp(1, n - 1) - 1,
                };
                let (r0, r1) = (density[i], density[i + 1]);
                let a = 0.5 * (r1 - r0) * dx;
                let b = r0 * dx;
                let c = u - cdf[i];
                let disc = (b * b + 4.0 * a * c).max(0.0);
                let tau = (2.0 * c / (b + disc.sqrt())).clamp(0.0, 1.0);
                ((i as f64 + tau) * dx).min(1.0)
            }
        }
    }
}

impl Distribution {
    /// Cumulative distribution function on [0, 1].
    pub fn cdf(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        match self {
            Distribution::Uniform => x,
            Distribution::Table { density } => {
                let n = density.len();
                let dx = 1.0 / (n - 1) as f64;
                let i = ((x / dx) as usize).min(n - 2);
                let mut acc = 0.0;
                for k in 0..i {
                    acc += 0.5 * dx * (density[k] + density[k + 1]);
                }
                let tau = (x - i as f64 * dx) / dx;
                acc + dx * (density[i] * tau + 0.5 * (density[i + 1] - density[i]) * tau * tau)
            }
        }
    }

    /// Density at x.
    pub fn density(&self, x: f64) -> f64 {
        match self {
            Distribution::Uniform => 1.0,
            Distribution::Table { density } => {
                let n = density.len();
                let t = x.clamp(0.0, 1.0) * (n - 1) as f64;
                let i = (t as usize).min(n - 2);
                let f = t - i as f64;
                density[i] * (1.0 - f) + density[i + 1] * f
            }
        }
    }

    /// Density bound D.
    pub fn bound(&self) -> f64 {
        match self {
            Distribution::Uniform => 1.0,
            Distribution::Table { density } => density.iter().copied().fold(0.0, f64::max),
        }
    }
}

/// Decomposition `n x = Y + X` with integer `Y` and `X ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlowUpDecomposition {
    pub n: u32,
    pub integer_part: f64,
    pub fractional_part: f64,
    /// Supremum of the conditional density of X given Y.
    pub conditional_density_bound: f64,
}

/// Split `n x` into integer and fractional parts. Exact multiples keep
/// `X = 1` (so `x = 1, n = 5` gives `Y = 4, X = 1`); `x = 0` gives `Y = X = 0`.
pub fn blow_up_decompose(x: f64, n: u32, law: &Distribution) -> Result<BlowUpDecomposition> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::invalid("x", format!("{x} not in [0, 1]")));
    }
    if n == 0 {
        return Err(Error::invalid("n", "must be >= 1"));
    }
    let nx = n as f64 * x;
    let y = if nx == 0.0 { 0.0 } else { nx.ceil() - 1.0 };
    Ok(BlowUpDecomposition {
        n,
        integer_part: y,
        fractional_part: nx - y,
        conditional_density_bound: conditional_density_bound(law, n),
    })
}

/// `sup_k sup_X ρ((k + X)/n) / (n P(Y = k))` for the given law.
pub fn conditional_density_bound(law: &Distribution, n: u32) -> f64 {
    match law {
        Distribution::Uniform => 1.0,
        Distribution::Table { density } => {
            let nodes = density.len();
            let mut worst: f64 = 0.0;
            for k in 0..n {
                let (a, b) = (k as f64 / n as f64, (k + 1) as f64 / n as f64);
                let mass = law.cdf(b) - law.cdf(a);
                let mut rho_max = law.density(a).max(law.density(b));
                for i in 0..nodes {
                    let x = i as f64 / (nodes - 1) as f64;
                    if x > a && x < b {
                        rho_max = rho_max.max(density[i]);
                    }
                }
                worst = worst.max(rho_max / (n as f64 * mass));
            }
            worst
        }
    }
}

/// `H₀` plus its lazily computed ground energy.
#[derive(Debug)]
pub struct FreePart {
    pub matrix: SparseMatrix,
    e0: OnceLock<f64>,
}

impl FreePart {
    /// Smallest eigenvalue of `H₀` on the box.
    pub fn ground_energy(&self) -> f64 {
        *self.e0.get_or_init(|| linalg::lowest_eigenvalue(&self.matrix))
    }
}

/// Assembled finite-volume Hamiltonian.
#[derive(Debug, Clone)]
pub struct OperatorHandle {
    pub matrix: SparseMatrix,
    pub geometry: Arc<Geometry>,
    pub boundary: Boundary,
    /// `λ Σ η_α U_α` on the grid.
    pub potential: Vec<f64>,
    pub free: Arc<FreePart>,
    pub realization: Option<Realization>,
}

impl OperatorHandle {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// E₀ = inf σ(H₀) on the box.
    pub fn ground_energy(&self) -> f64 {
        self.free.ground_energy()
    }

    /// Same geometry, different potential.
    pub fn with_potential(&self, potential: Vec<f64>) -> OperatorHandle {
        OperatorHandle {
            matrix: self.free.matrix.add_diagonal(&potential),
            potential,
            realization: None,
            ..self.clone()
        }
    }

    /// `H + Σ_q w_q |q⟩⟨q|` for a sparse diagonal perturbation.
    pub fn perturbed(&self, delta: &[(usize, f64)]) -> OperatorHandle {
        let mut p = self.potential.clone();
        for &(i, v) in delta {
            p[i] += v;
        }
        self.with_potential(p)
    }

    /// Operator with only a user-supplied matrix (no model behind it).
    pub fn from_matrix(matrix: SparseMatrix) -> OperatorHandle {
        let n = matrix.dim();
        let geometry = Geometry {
            dim: 1,
            cells: n,
            mode: Mode::Lattice,
            sub: 1,
            side: n,
            h: 1.0,
            radius: 1.0,
            profile: BumpProfile::IndicatorBall,
            wraps: false,
        };
        let potential: Vec<f64> = (0..n).map(|i| matrix.get(i, i).re).collect();
        let free = SparseMatrix::from_triplets(
            n,
            &matrix
                .triplets()
                .into_iter()
                .map(|(i, j, v)| if i == j { (i, j, Complex64::new(0.0, v.im)) } else { (i, j, v) })
                .collect::<Vec<_>>(),
        );
        OperatorHandle {
            matrix,
            geometry: Arc::new(geometry),
            boundary: Boundary::Dirichlet,
            potential,
            free: Arc::new(FreePart {
                matrix: free,
                e0: OnceLock::new(),
            }),
            realization: None,
        }
    }
}

/// Validated model with precomputed geometry, bumps and free operator.
#[derive(Debug, Clone)]
pub struct Model {
    spec: Arc<ModelSpec>,
    geometry: Arc<Geometry>,
    sites: Vec<Site>,
    bumps: Vec<Vec<(usize, f64)>>,
    free: Arc<FreePart>,
    sampler: Sampler,
    covering: (f64, f64),
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let geometry = Arc::new(validate_geometry(&spec)?);
        let sampler = Sampler::new(&spec.distribution)?;
        if spec.r0 < 2.0 * spec.bump_radius {
            return Err(Error::invalid("r0", format!("{} < 2r = {}", spec.r0, 2.0 * spec.bump_radius)));
        }
        if !(spec.lambda >= 0.0) {
            return Err(Error::invalid("lambda", "must be >= 0"));
        }
        let halo = match spec.mode {
            Mode::Lattice => 0,
            Mode::ContinuumGrid => spec.bump_radius.ceil() as i64,
        };
        let c = spec.cells as i64;
        let range: Vec<i64> = if geometry.wraps { (0..c).collect() } else { (-halo..c + halo).collect() };
        let candidates: Vec<Site> = if spec.dimension == 1 {
            range.iter().map(|&x| Site::d1(x)).collect()
        } else {
            range.iter().flat_map(|&y| range.iter().map(move |&x| Site::d2(x, y))).collect()
        };
        let mut sites = Vec::new();
        let mut bumps = Vec::new();
        for s in candidates {
            let b = bump_on_grid(&geometry, s);
            if !b.is_empty() {
                sites.push(s);
                bumps.push(b);
            }
        }
        let mut cover = vec![0.0; geometry.n_points()];
        for b in &bumps {
            for &(i, v) in b {
                cover[i] += v;
            }
        }
        let fmin = cover.iter().copied().fold(f64::INFINITY, f64::min);
        let fmax = cover.iter().copied().fold(0.0, f64::max);
        if fmin < 1.0 - 1e-12 {
            let worst = cover.iter().position(|&v| v == fmin).unwrap_or(0);
            return Err(Error::invalid(
                "bump_radius",
                format!("covering fails: F = {fmin} at grid point {:?}", geometry.coord(worst)),
            ));
        }
        let free = free_operator(&spec, &geometry)?;
        Ok(Model {
            spec: Arc::new(spec),
            geometry,
            sites,
            bumps,
            free: Arc::new(FreePart {
                matrix: free,
                e0: OnceLock::new(),
            }),
            sampler,
            covering: (fmin, fmax),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn geometry(&self) -> &Arc<Geometry> {
        &self.geometry
    }

    /// Sites carrying a coupling (box sites plus any halo whose bump reaches in).
    pub fn coupling_sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn coupling_index(&self, s: Site) -> Option<usize> {
        self.sites.binary_search_by(|t| (t.0[1], t.0[0]).cmp(&(s.0[1], s.0[0]))).ok()
    }

    pub fn bump(&self, s: Site) -> Vec<(usize, f64)> {
        self.coupling_index(s).map(|k| self.bumps[k].clone()).unwrap_or_default()
    }

    pub fn chi(&self, s: Site) -> Vec<usize> {
        self.geometry.chi(s)
    }

    /// (min, max) of F(q) = Σ_α U_α(q) over the grid; the max is b₊.
    pub fn covering_bounds(&self) -> (f64, f64) {
        self.covering
    }

    pub fn free(&self) -> &Arc<FreePart> {
        &self.free
    }

    /// i.i.d. couplings from the single-site law, deterministic in `seed`.
    pub fn sample(&self, seed: u64) -> Realization {
        let mut r = rng::stream(seed);
        let eta = (0..self.sites.len())
            .map(|_| self.sampler.inverse_cdf(r.random::<f64>()))
            .collect();
        Realization {
            eta,
            seed,
            spec: Arc::clone(&self.spec),
        }
    }

    /// `λ Σ η_α U_α` on the grid.
    pub fn potential(&self, eta: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.geometry.n_points()];
        if self.spec.lambda != 0.0 {
            for (b, &e) in self.bumps.iter().zip(eta) {
                for &(i, u) in b {
                    v[i] += self.spec.lambda * e * u;
                }
            }
        }
        v
    }

    pub fn hamiltonian(&self, real: &Realization) -> Result<OperatorHandle> {
        if real.eta.len() != self.sites.len() {
            return Err(Error::invalid(
                "realization",
                format!("{} couplings for {} sites", real.eta.len(), self.sites.len()),
            ));
        }
        if *real.spec != *self.spec {
            return Err(Error::invalid("realization", "drawn for a different model"));
        }
        let mut h = self.hamiltonian_with(&real.eta);
        h.realization = Some(real.clone());
        Ok(h)
    }

    pub fn hamiltonian_with(&self, eta: &[f64]) -> OperatorHandle {
        let potential = self.potential(eta);
        OperatorHandle {
            matrix: self.free.matrix.add_diagonal(&potential),
            geometry: Arc::clone(&self.geometry),
            boundary: self.spec.boundary.clone(),
            potential,
            free: Arc::clone(&self.free),
            realization: None,
        }
    }

    /// Free operator (λ = 0 part) as a handle.
    pub fn free_hamiltonian(&self) -> OperatorHandle {
        self.hamiltonian_with(&vec![0.0; self.sites.len()])
    }
}

fn bump_on_grid(g: &Geometry, s: Site) -> Vec<(usize, f64)> {
    match g.mode {
        Mode::Lattice => g.bump(s),
        Mode::ContinuumGrid => {
            // `Geometry::bump` measures distances on the grid; halo sites lie off it
            let c = [s.0[0] as f64, s.0[1] as f64];
            let period = g.side as f64 * g.h;
            (0..g.n_points())
                .filter_map(|i| {
                    let q = g.coord(i);
                    let d = (0..g.dim)
                        .map(|j| {
                            let d = (q[j] - c[j]).abs();
                            if g.wraps {
                                d.min(period - d)
                            } else {
                                d
                            }
                        })
                        .fold(0.0, f64::max);
                    let v = match g.profile {
                        BumpProfile::IndicatorBall => {
                            if d <= g.radius + 1e-9 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        BumpProfile::Tent => (1.0 - d / g.radius).max(0.0),
                    };
                    (v > 0.0).then_some((i, v))
                })
                .collect()
        }
    }
}

fn validate_geometry(spec: &ModelSpec) -> Result<Geometry> {
    if !(1..=2).contains(&spec.dimension) {
        return Err(Error::invalid("dimension", format!("{} not in {{1, 2}}", spec.dimension)));
    }
    if spec.cells == 0 {
        return Err(Error::invalid("cells", "box is empty"));
    }
    let sub = match spec.mode {
        Mode::Lattice => {
            if spec.h != 1.0 {
                return Err(Error::invalid("h", "lattice mode requires h = 1"));
            }
            1
        }
        Mode::ContinuumGrid => {
            let m = (1.0 / spec.h).round();
            if !(spec.h > 0.0) || m < 1.0 || ((1.0 / spec.h) - m).abs() > 1e-9 {
                return Err(Error::invalid("h", format!("{} does not divide 1", spec.h)));
            }
            m as usize
        }
    };
    if !(spec.bump_radius > 0.0) {
        return Err(Error::invalid("bump_radius", "must be positive"));
    }
    let wraps = spec.boundary.wraps();
    let side = if wraps { spec.cells * sub } else { (spec.cells - 1) * sub + 1 };
    if spec.mode == Mode::ContinuumGrid && ((side - 1) as f64) * spec.h < 2.0 * spec.bump_radius {
        return Err(Error::invalid("cells", "box too small to contain one bump"));
    }
    if let Boundary::QuasiPeriodic { k } = &spec.boundary {
        if k.len() != spec.dimension {
            return Err(Error::invalid("boundary", "quasi-momentum must have one entry per axis"));
        }
    }
    if wraps && side < 3 {
        return Err(Error::invalid("cells", "periodic boxes need at least 3 grid points per side"));
    }
    if spec.flux != 0.0 {
        if spec.dimension != 2 {
            return Err(Error::invalid("flux", "magnetic flux requires d = 2"));
        }
        if wraps {
            return Err(Error::invalid("flux", "flux is supported with dirichlet or neumann boundaries only"));
        }
    }
    Ok(Geometry {
        dim: spec.dimension,
        cells: spec.cells,
        mode: spec.mode,
        sub,
        side,
        h: spec.h,
        radius: spec.bump_radius,
        profile: spec.bump_profile,
        wraps,
    })
}

/// Peierls phase picked up hopping from `k` one step along `axis`.
fn peierls_phase(spec: &ModelSpec, k: [usize; 2], axis: usize) -> f64 {
    if spec.flux == 0.0 {
        return 0.0;
    }
    let (x, y) = (k[0] as f64, k[1] as f64);
    let phi = spec.flux;
    match (spec.gauge, axis) {
        (Gauge::Landau, 0) => 0.0,
        (Gauge::Landau, _) => 2.0 * PI * phi * x,
        (Gauge::Symmetric, 0) => -PI * phi * y,
        (Gauge::Symmetric, _) => PI * phi * x,
    }
}

fn free_operator(spec: &ModelSpec, g: &Geometry) -> Result<SparseMatrix> {
    let n = g.n_points();
    let t = 1.0 / (g.h * g.h);
    let mut trip = Vec::with_capacity(n * (2 * g.dim + 1));
    let background: Vec<f64> = match &spec.background {
        Background::Constant(c) => vec![*c; n],
        Background::Periodic { period, values } => {
            if period.len() != g.dim || period.contains(&0) || period.iter().product::<usize>() != values.len() {
                return Err(Error::invalid("background", "period shape does not match the value table"));
            }
            (0..n)
                .map(|i| {
                    let k = g.multi_index(i);
                    let a = k[0] % period[0];
                    let b = if g.dim == 2 { k[1] % period[1] } else { 0 };
                    values[a + period[0] * b]
                })
                .collect()
        }
    };
    let qk: Vec<f64> = match &spec.boundary {
        Boundary::QuasiPeriodic { k } => k.clone(),
        _ => vec![0.0; g.dim],
    };
    for i in 0..n {
        let k = g.multi_index(i);
        let mut diag = 2.0 * g.dim as f64 * t + background[i];
        for axis in 0..g.dim {
            for dir in [-1i64, 1] {
                let c = k[axis] as i64 + dir;
                let inside = c >= 0 && (c as usize) < g.side;
                if !inside && !g.wraps {
                    if spec.boundary == Boundary::Neumann {
                        diag -= t;
                    }
                    continue;
                }
                if dir == -1 {
                    // each bond is emitted once, from its lower end
                    continue;
                }
                let mut kk = k;
                kk[axis] = if inside { c as usize } else { 0 };
                let j = g.index(kk);
                let mut theta = peierls_phase(spec, k, axis);
                if !inside {
                    theta += qk[axis];
                }
                let hop = Complex64::from_polar(-t, theta);
                trip.push((j, i, hop));
                trip.push((i, j, hop.conj()));
            }
        }
        trip.push((i, i, Complex64::new(diag, 0.0)));
    }
    Ok(SparseMatrix::from_triplets(n, &trip))
}

/// Draw one realization.
pub fn sample_disorder(spec: &ModelSpec, seed: u64) -> Result<Realization> {
    Ok(Model::new(spec.clone())?.sample(seed))
}

/// Assemble `H = H₀ + λ V_ω` for a realization.
pub fn build_hamiltonian(spec: &ModelSpec, real: &Realization) -> Result<OperatorHandle> {
    Model::new(spec.clone())?.hamiltonian(real)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hermitian_eigenvalues;
    use crate::stats::{ks_distance, pearson};
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn dirichlet_chain_spectrum() {
        let h = Model::new(ModelSpec::lattice(1, 3, 0.0)).unwrap().free_hamiltonian();
        let ev = hermitian_eigenvalues(&h.matrix);
        let s = 2f64.sqrt();
        assert!(close(&ev, &[2.0 - s, 2.0, 2.0 + s], 1e-13));
    }

    #[test]
    fn periodic_ring_spectrum() {
        let spec = ModelSpec::lattice(1, 4, 0.0).with_boundary(Boundary::Periodic);
        let h = Model::new(spec).unwrap().free_hamiltonian();
        assert!(close(&hermitian_eigenvalues(&h.matrix), &[0.0, 2.0, 2.0, 4.0], 1e-13));
    }

    #[test]
    fn quasi_periodic_ring_spectrum() {
        let k = 0.7;
        let spec = ModelSpec::lattice(1, 6, 0.0).with_boundary(Boundary::QuasiPeriodic { k: vec![k] });
        let h = Model::new(spec).unwrap().free_hamiltonian();
        let mut want: Vec<f64> = (0..6).map(|j| 2.0 - 2.0 * ((2.0 * PI * j as f64 + k) / 6.0).cos()).collect();
        want.sort_by(f64::total_cmp);
        assert!(close(&hermitian_eigenvalues(&h.matrix), &want, 1e-12));
    }

    #[test]
    fn neumann_chain_has_zero_mode() {
        let spec = ModelSpec::lattice(1, 7, 0.0).with_boundary(Boundary::Neumann);
        let h = Model::new(spec).unwrap().free_hamiltonian();
        assert!(hermitian_eigenvalues(&h.matrix)[0].abs() < 1e-13);
    }

    #[test]
    fn continuum_covering_scan_matches_direct_sum() {
        let spec = ModelSpec::continuum(2, 5, 0.25, 1.0);
        let m = Model::new(spec).unwrap();
        let g = m.geometry();
        // oracle: sum indicator bumps of every integer site in a wide window
        let mut fmin = f64::INFINITY;
        for i in 0..g.n_points() {
            let q = g.coord(i);
            let mut f = 0.0;
            for x in -3..9 {
                for y in -3..9 {
                    if (q[0] - x as f64).abs().max((q[1] - y as f64).abs()) <= 1.0 + 1e-9 {
                        f += 1.0;
                    }
                }
            }
            fmin = fmin.min(f);
        }
        assert!(fmin >= 1.0);
        let (lo, hi) = m.covering_bounds();
        assert!(lo >= 1.0);
        assert_eq!(hi, 9.0);
    }

    #[test]
    fn tent_profile_with_short_radius_fails_covering() {
        let mut spec = ModelSpec::continuum(1, 6, 0.25, 1.0);
        spec.bump_profile = BumpProfile::Tent;
        spec.bump_radius = 0.5;
        spec.r0 = 1.0;
        assert!(matches!(Model::new(spec), Err(Error::Invalid { .. })));
    }

    #[test]
    fn lambda_zero_reduces_to_free_matrix() {
        let m = Model::new(ModelSpec::continuum(2, 4, 0.5, 0.0)).unwrap();
        let h = m.hamiltonian(&m.sample(3)).unwrap();
        assert_eq!(h.matrix, m.free().matrix.add_diagonal(&vec![0.0; h.dim()]));
    }

    #[test]
    fn operator_is_hermitian_with_flux_and_quasi_momentum() {
        let mut spec = ModelSpec::continuum(2, 4, 0.5, 3.0);
        spec.flux = 0.13;
        let m = Model::new(spec).unwrap();
        assert!(m.hamiltonian(&m.sample(1)).unwrap().matrix.hermiticity_defect() < 1e-14);
        let spec = ModelSpec::lattice(2, 5, 2.0).with_boundary(Boundary::QuasiPeriodic { k: vec![0.3, 1.1] });
        let m = Model::new(spec).unwrap();
        assert!(m.hamiltonian(&m.sample(1)).unwrap().matrix.hermiticity_defect() < 1e-14);
    }

    #[test]
    fn gauge_choice_leaves_spectrum_invariant() {
        let mut a = ModelSpec::lattice(2, 6, 2.0);
        a.flux = 0.21;
        let mut b = a.clone();
        b.gauge = Gauge::Symmetric;
        let (ma, mb) = (Model::new(a).unwrap(), Model::new(b).unwrap());
        let r = ma.sample(5);
        let ea = hermitian_eigenvalues(&ma.hamiltonian_with(&r.eta).matrix);
        let eb = hermitian_eigenvalues(&mb.hamiltonian_with(&r.eta).matrix);
        assert!(close(&ea, &eb, 1e-10));
        // and the flux is physical: it moves the spectrum
        let e0 = hermitian_eigenvalues(&Model::new(ModelSpec::lattice(2, 6, 2.0)).unwrap().hamiltonian_with(&r.eta).matrix);
        assert!(!close(&ea, &e0, 1e-3));
    }

    #[test]
    fn rejects_bad_specs() {
        let bad_h = ModelSpec { h: 0.3, ..ModelSpec::continuum(1, 6, 0.3, 1.0) };
        assert!(Model::new(bad_h).is_err());
        let tiny = ModelSpec::continuum(1, 2, 0.25, 1.0);
        assert!(Model::new(tiny).is_err());
        let qp_mismatch = ModelSpec::lattice(2, 4, 1.0).with_boundary(Boundary::QuasiPeriodic { k: vec![0.1] });
        assert!(Model::new(qp_mismatch).is_err());
        let r0 = ModelSpec { r0: 1.5, ..ModelSpec::lattice(1, 4, 1.0) };
        assert!(Model::new(r0).is_err());
        let unnormalized = ModelSpec {
            distribution: Distribution::Table { density: vec![2.0; 1024] },
            ..ModelSpec::lattice(1, 4, 1.0)
        };
        assert!(Model::new(unnormalized).is_err());
    }

    #[test]
    fn uniform_draws_pass_ks() {
        let m = Model::new(ModelSpec::lattice(1, 1000, 1.0)).unwrap();
        let draws: Vec<f64> = (0..100).flat_map(|s| m.sample(rng::child_seed(11, s)).eta).collect();
        assert_eq!(draws.len(), 100_000);
        assert!(draws.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(ks_distance(&draws, |x| x) < 0.01);
    }

    #[test]
    fn table_law_inverse_cdf_passes_ks() {
        let nodes = 1024;
        // ρ(x) = 0.5 + x, integrates to 1
        let density: Vec<f64> = (0..nodes).map(|i| 0.5 + i as f64 / (nodes - 1) as f64).collect();
        let dist = Distribution::Table { density };
        let spec = ModelSpec {
            distribution: dist.clone(),
            ..ModelSpec::lattice(1, 1000, 1.0)
        };
        let m = Model::new(spec).unwrap();
        let draws: Vec<f64> = (0..100).flat_map(|s| m.sample(s).eta).collect();
        assert!(ks_distance(&draws, |x| 0.5 * x + 0.5 * x * x) < 0.01);
        assert!((dist.cdf(0.3) - (0.15 + 0.045)).abs() < 1e-12);
    }

    #[test]
    fn distant_couplings_are_uncorrelated() {
        let m = Model::new(ModelSpec::lattice(1, 10, 1.0)).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for s in 0..10_000 {
            let r = m.sample(rng::child_seed(99, s));
            a.push(r.eta[0]);
            b.push(r.eta[9]);
        }
        assert!(pearson(&a, &b).abs() < 0.03);
    }

    #[test]
    fn blow_up_examples() {
        let d = blow_up_decompose(0.37, 10, &Distribution::Uniform).unwrap();
        assert_eq!(d.integer_part, 3.0);
        assert!((d.fractional_part - 0.7).abs() < 1e-12);
        let d = blow_up_decompose(1.0, 5, &Distribution::Uniform).unwrap();
        assert_eq!((d.integer_part, d.fractional_part), (4.0, 1.0));
        assert_eq!(d.conditional_density_bound, 1.0);
        assert!(blow_up_decompose(1.2, 5, &Distribution::Uniform).is_err());
    }

    #[test]
    fn blow_up_fractional_part_is_uniform() {
        let m = Model::new(ModelSpec::lattice(1, 1000, 1.0)).unwrap();
        let xs: Vec<f64> = (0..100)
            .flat_map(|s| m.sample(s + 500).eta)
            .map(|x| blow_up_decompose(x, 7, &Distribution::Uniform).unwrap().fractional_part)
            .collect();
        assert!(ks_distance(&xs, |x| x) < 0.01);
    }

    #[test]
    fn table_law_conditional_bound_exceeds_one() {
        let density: Vec<f64> = (0..1024).map(|i| 0.5 + i as f64 / 1023.0).collect();
        let b = conditional_density_bound(&Distribution::Table { density }, 3);
        assert!(b > 1.0 && b < 1.5);
    }

    #[test]
    fn spec_json_round_trip() {
        let mut spec = ModelSpec::continuum(2, 5, 0.5, 3.0).with_boundary(Boundary::QuasiPeriodic { k: vec![0.5, 1.0] });
        spec.background = Background::Periodic { period: vec![2, 1], values: vec![0.0, 1.0] };
        let json = spec.to_json();
        let back = ModelSpec::from_json(&json).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.to_json(), json);
        assert!(ModelSpec::from_json(r#"{"dimension":1,"cells":3,"bogus":1}"#).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn same_seed_same_realization(seed in any::<u64>()) {
            let m = Model::new(ModelSpec::continuum(1, 8, 0.5, 2.0)).unwrap();
            prop_assert_eq!(m.sample(seed).eta, m.sample(seed).eta);
        }

        #[test]
        fn raising_a_coupling_raises_every_eigenvalue(seed in any::<u64>(), site in 0usize..12, bump in 0.01f64..1.0) {
            let m = Model::new(ModelSpec::lattice(1, 12, 3.0)).unwrap();
            let r = m.sample(seed);
            let mut eta = r.eta.clone();
            let before = hermitian_eigenvalues(&m.hamiltonian_with(&eta).matrix);
            eta[site] = (eta[site] + bump).min(1.0);
            let after = hermitian_eigenvalues(&m.hamiltonian_with(&eta).matrix);
            prop_assert!(before.iter().zip(&after).all(|(a, b)| b >= &(a - 1e-12)));
        }

        #[test]
        fn blow_up_identity_is_exact(x in 0.0f64..=1.0, n in 1u32..50) {
            let d = blow_up_decompose(x, n, &Distribution::Uniform).unwrap();
            prop_assert_eq!(d.integer_part + d.fractional_part, n as f64 * x);
            prop_assert!((0.0..=1.0).contains(&d.fractional_part));
        }
    }
}
