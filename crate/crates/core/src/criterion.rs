//! Finite-volume localization criterion, shell kernels and decay fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SparseMatrix};
use crate::model::{Geometry, Model, ModelSpec, Site};
use crate::resolvent::{EnergyPoint, Resolvent};
use crate::rng;
use crate::stats::{self, line_fit};

/// `min{|x - y|, dist(x, Λᶜ) + dist(y, Λᶜ)}` with the sup norm.
pub fn dist_modified(x: Site, y: Site, g: &Geometry) -> Result<f64> {
    let ix = g.site_index(x).ok_or_else(|| Error::invalid("x", format!("{x:?} outside the box")))?;
    let iy = g.site_index(y).ok_or_else(|| Error::invalid("y", format!("{y:?} outside the box")))?;
    let direct = g.coord_dist(g.coord(ix), g.coord(iy));
    Ok(direct.min(g.dist_to_complement(ix) + g.dist_to_complement(iy)))
}

fn site_coord(s: Site) -> [f64; 2] {
    [s.0[0] as f64, s.0[1] as f64]
}

/// The ball `B_α^L` cut out of the model box, with local indexing.
struct Ball {
    indices: Vec<usize>,
    local: Vec<Option<usize>>,
    /// Distance of each local point to the complement of the ball.
    depth: Vec<f64>,
}

impl Ball {
    fn new(g: &Geometry, centre: Site, l: f64) -> Result<Self> {
        let c = site_coord(centre);
        let fits = if g.wraps {
            2.0 * l + 1.0 <= g.cells as f64
        } else {
            (0..g.dim).all(|a| c[a] - l >= 0.0 && c[a] + l <= (g.cells - 1) as f64)
        };
        if !fits {
            return Err(Error::invalid("L", format!("the box cannot host a ball of radius {l} around {centre:?}")));
        }
        let indices = g.ball(c, l);
        let mut local = vec![None; g.n_points()];
        for (k, &i) in indices.iter().enumerate() {
            local[i] = Some(k);
        }
        let depth = indices.iter().map(|&i| l + g.h - g.coord_dist(g.coord(i), c)).collect();
        Ok(Ball { indices, local, depth })
    }

    fn map(&self, set: &[usize]) -> Result<Vec<usize>> {
        set.iter()
            .map(|&i| self.local[i].ok_or_else(|| Error::invalid("site", "unit ball leaves the box B")))
            .collect()
    }

    fn restrict(&self, m: &SparseMatrix) -> SparseMatrix {
        m.principal_submatrix(&self.indices)
    }
}

/// Box length of a criterion run and where its centre sits.
fn centre_of(g: &Geometry) -> Site {
    let c = ((g.cells - 1) / 2) as i64;
    if g.dim == 1 {
        Site::d1(c)
    } else {
        Site::d2(c, c)
    }
}

/// Boundary-layer depth multiplier.
pub const LAYER_DEPTH: f64 = 23.0;
/// Minimum sample count of criterion runs.
pub const MIN_CRITERION_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionOptions {
    pub n: usize,
    pub m: f64,
    pub seed: u64,
}

impl Default for CriterionOptions {
    fn default() -> Self {
        CriterionOptions { n: 200, m: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub l: f64,
    pub e: f64,
    pub eps: f64,
    pub s: f64,
    pub n: usize,
    /// `(1 + L)^{2(d-1)} E‖χ_α G^{(B)} 1_{δB}‖^s`.
    pub b: f64,
    pub b_ci_lo: f64,
    pub b_ci_hi: f64,
    pub m: f64,
    /// `-ln(M b)`.
    pub gamma: f64,
    /// `2L/γ` when the criterion passes.
    pub loc_length: Option<f64>,
    pub pass: bool,
    /// Measured on-site level `E‖χ_α G^{(B)} χ_α‖^s`.
    pub a_priori: f64,
}

impl CriterionReport {
    /// Row `(L, E, eps, s, N, b, b_ci_lo, b_ci_hi, M, gamma, loc_length, pass)`.
    pub fn row(&self) -> Vec<String> {
        vec![
            self.l.to_string(),
            self.e.to_string(),
            self.eps.to_string(),
            self.s.to_string(),
            self.n.to_string(),
            self.b.to_string(),
            self.b_ci_lo.to_string(),
            self.b_ci_hi.to_string(),
            self.m.to_string(),
            self.gamma.to_string(),
            self.loc_length.map_or_else(|| "NA".into(), |v| v.to_string()),
            self.pass.to_string(),
        ]
    }

    pub const HEADER: [&'static str; 12] = ["L", "E", "eps", "s", "N", "b", "b_ci_lo", "b_ci_hi", "M", "gamma", "loc_length", "pass"];
}

fn check_s_third(s: f64) -> Result<()> {
    if !(s > 0.0 && s < 1.0 / 3.0) {
        return Err(Error::invalid("s", format!("{s} not in (0, 1/3)")));
    }
    Ok(())
}

/// Grid points `q` of the ball with `r < dist(q, Bᶜ) < 23r`.
fn layer(ball: &Ball, r: f64) -> Vec<usize> {
    (0..ball.indices.len())
        .filter(|&k| ball.depth[k] > r + 1e-9 && ball.depth[k] < LAYER_DEPTH * r - 1e-9)
        .collect()
}

/// Per-realization `(‖χ_α G^{(B)} 1_{δB}‖, ‖χ_α G^{(B)} χ_α‖)` for the ball of
/// radius `L` around the box centre.
pub fn boundary_norms(model: &Model, l: f64, z: EnergyPoint, n: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    let g = model.geometry();
    let alpha = centre_of(g);
    let ball = Ball::new(g, alpha, l)?;
    let shell = layer(&ball, model.spec().bump_radius);
    let chi = ball.map(&model.chi(alpha))?;
    if shell.is_empty() {
        return Err(Error::invalid("L", "boundary layer is empty"));
    }
    rng::par_samples(seed, n, |seed| -> Result<(f64, f64)> {
        let h = model.hamiltonian(&model.sample(seed))?;
        let m = ball.restrict(&h.matrix);
        let res = Resolvent::of_matrix(&m, z)?;
        let rows = res.rows(&chi)?;
        let pick = |cols: &[usize]| {
            linalg::op_norm(&linalg::CMatrix::from_fn(chi.len(), cols.len(), |i, j| rows[(i, cols[j])]))
        };
        Ok((pick(&shell), pick(&chi)))
    })
    .into_iter()
    .collect()
}

pub fn criterion_eval(spec: &ModelSpec, l: f64, z: EnergyPoint, s: f64, opts: CriterionOptions) -> Result<CriterionReport> {
    check_s_third(s)?;
    let r = spec.bump_radius;
    if !(l > spec.r0 + LAYER_DEPTH * r) {
        return Err(Error::invalid("L", format!("{l} must exceed r0 + 23r = {}", spec.r0 + LAYER_DEPTH * r)));
    }
    if opts.n < MIN_CRITERION_SAMPLES {
        return Err(Error::invalid("N", format!("{} < {MIN_CRITERION_SAMPLES}", opts.n)));
    }
    if !(opts.m > 0.0) {
        return Err(Error::invalid("M", "must be positive"));
    }
    let model = Model::new(spec.clone())?;
    let g = model.geometry();
    let norms = boundary_norms(&model, l, z, opts.n, opts.seed)?;
    let pairs: Vec<(f64, f64)> = norms.iter().map(|p| (p.0.powf(s), p.1.powf(s))).collect();
    let factor = (1.0 + l).powi(2 * (g.dim as i32 - 1));
    let vals: Vec<f64> = pairs.iter().map(|p| factor * p.0).collect();
    let b = stats::mean(&vals);
    let (lo, hi) = stats::bootstrap_ci(&vals, stats::mean, rng::child_seed(opts.seed, u64::MAX));
    let a_priori = stats::mean(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    Ok(report(l, z, s, opts, b, (lo, hi), a_priori))
}

fn report(l: f64, z: EnergyPoint, s: f64, opts: CriterionOptions, b: f64, ci: (f64, f64), a_priori: f64) -> CriterionReport {
    let gamma = -(opts.m * b).ln();
    let pass = opts.m * b < 1.0;
    CriterionReport {
        l,
        e: z.e,
        eps: z.eps,
        s,
        n: opts.n,
        b,
        b_ci_lo: ci.0,
        b_ci_hi: ci.1,
        m: opts.m,
        gamma,
        loc_length: pass.then(|| 2.0 * l / gamma),
        pass,
        a_priori,
    }
}

/// Simon–Lieb shell sums `a(x; L)` per centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellKernel {
    pub l: f64,
    pub s: f64,
    pub centres: Vec<Site>,
    pub a: Vec<f64>,
    pub a_ci: Vec<(f64, f64)>,
    /// `S_{x,L}` per centre.
    pub inner: Vec<Vec<Site>>,
    /// `S'_{x,L}` per centre (sites of the model box only).
    pub outer: Vec<Vec<Site>>,
}

impl ShellKernel {
    pub fn sup(&self) -> f64 {
        self.a.iter().copied().fold(0.0, f64::max)
    }
}

fn shell_sites(model: &Model, x: Site, lo: f64, hi: f64) -> Vec<Site> {
    let g = model.geometry();
    let c = site_coord(x);
    g.sites()
        .into_iter()
        .filter(|&z| {
            let d = g.coord_dist(site_coord(z), c);
            d > lo + 1e-9 && d < hi - 1e-9
        })
        .collect()
}

pub fn shell_kernel(model: &Model, l: f64, z: EnergyPoint, s: f64, centres: &[Site], n: usize, seed: u64) -> Result<ShellKernel> {
    check_s_third(s)?;
    let spec = model.spec();
    let r = spec.bump_radius;
    if !(l > LAYER_DEPTH * r) {
        return Err(Error::invalid("L", format!("{l} must exceed 23r = {}", LAYER_DEPTH * r)));
    }
    if n == 0 || centres.is_empty() {
        return Err(Error::Insufficient("no samples or centres".into()));
    }
    let g = model.geometry();
    let dim = g.dim as i32;
    let mut a = Vec::new();
    let mut a_ci = Vec::new();
    let mut inner = Vec::new();
    let mut outer = Vec::new();
    for (ci, &x) in centres.iter().enumerate() {
        let ball = Ball::new(g, x, l)?;
        let sx = shell_sites(model, x, l - LAYER_DEPTH * r, l - 3.0 * r);
        if sx.is_empty() {
            return Err(Error::invalid("L", format!("empty shell around {x:?}")));
        }
        let chi = ball.map(&model.chi(x))?;
        let targets: Vec<Vec<usize>> = sx.iter().map(|&z| ball.map(&model.chi(z))).collect::<Result<_>>()?;
        let sums: Vec<f64> = rng::par_samples(rng::child_seed(seed, ci as u64), n, |sd| -> Result<f64> {
            let h = model.hamiltonian(&model.sample(sd))?;
            let m = ball.restrict(&h.matrix);
            let res = Resolvent::of_matrix(&m, z)?;
            let rows = res.rows(&chi)?;
            Ok(targets
                .iter()
                .map(|t| linalg::op_norm(&linalg::CMatrix::from_fn(chi.len(), t.len(), |i, j| rows[(i, t[j])])).powf(s))
                .sum::<f64>()
                * l.powi(dim - 1))
        })
        .into_iter()
        .collect::<Result<_>>()?;
        a.push(stats::mean(&sums));
        a_ci.push(stats::bootstrap_ci(&sums, stats::mean, rng::child_seed(seed, u64::MAX - ci as u64)));
        outer.push(shell_sites(model, x, l + spec.r0 - 13.0 * r, l + spec.r0 + LAYER_DEPTH * r));
        inner.push(sx);
    }
    Ok(ShellKernel {
        l,
        s,
        centres: centres.to_vec(),
        a,
        a_ci,
        inner,
        outer,
    })
}

/// Geometric iteration of the shell inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayIteration {
    /// `C̃ · sup_x a(x; L)`.
    pub product: f64,
    pub step: f64,
    pub steps: u32,
    pub bound: f64,
    /// `-ln(product) / step`, per unit length.
    pub rate: f64,
}

/// Iterates `G(D) ≤ (C̃ a)^{D/step} · base`; `C̃` absorbs `|S'|`.
pub fn decay_iterate(kernel: &ShellKernel, c_tilde: f64, distance: f64, step: f64, base: f64) -> Result<DecayIteration> {
    decay_iterate_product(c_tilde * kernel.sup(), distance, step, base)
}

pub fn decay_iterate_product(product: f64, distance: f64, step: f64, base: f64) -> Result<DecayIteration> {
    if !(step > 0.0) {
        return Err(Error::invalid("step", "must be positive"));
    }
    let k = distance / step;
    if !(k >= 0.0) || (k - k.round()).abs() > 1e-9 {
        return Err(Error::invalid("D", format!("{distance} is not a multiple of the step {step}")));
    }
    if !(product < 1.0) || product < 0.0 {
        return Err(Error::NotContractive { product });
    }
    let steps = k.round() as u32;
    Ok(DecayIteration {
        product,
        step,
        steps,
        bound: product.powi(steps as i32) * base,
        rate: -product.ln() / step,
    })
}

/// Weighted exponential fit of moments against the modified distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Fitted decay rate μ̂ of `E‖χ_x G χ_y‖^s` per unit length.
    pub mu: f64,
    pub mu_se: f64,
    /// Prefactor `Â`.
    pub a: f64,
    pub r2: f64,
    /// μ̂ > 0 at one-sided 95%.
    pub positive: bool,
    pub distances: Vec<f64>,
    pub moments: Vec<f64>,
    /// Pairs dropped for vanishing moments.
    pub rejected: usize,
}

/// One-sided 95% normal quantile.
pub const Z95: f64 = 1.6448536269514722;
pub const MIN_DISTANCES: usize = 6;

/// Fit `ln m = ln A - μ d` with inverse-variance weights.
pub fn fit_decay(distances: &[f64], moments: &[f64], variances: &[f64]) -> Result<DecayFit> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    let mut rejected = 0;
    for ((&d, &m), &v) in distances.iter().zip(moments).zip(variances) {
        if m > 0.0 && m.is_finite() {
            x.push(d);
            y.push(m.ln());
            let rel = v / (m * m);
            w.push(if rel > 0.0 { 1.0 / rel } else { 1.0 });
        } else {
            rejected += 1;
        }
    }
    let mut distinct = x.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < MIN_DISTANCES {
        return Err(Error::Insufficient(format!(
            "{} distinct distances with positive moments, need {MIN_DISTANCES}",
            distinct.len()
        )));
    }
    // uniform weights when every variance vanishes (deterministic operators)
    if w.iter().all(|&v| v == 1.0) || w.iter().any(|v| !v.is_finite()) {
        w.iter_mut().for_each(|v| *v = 1.0);
    }
    let f = line_fit(&x, &y, Some(&w))?;
    Ok(DecayFit {
        mu: -f.slope,
        mu_se: f.slope_se,
        a: f.intercept.exp(),
        r2: f.r2,
        positive: -f.slope - Z95 * f.slope_se > 0.0,
        distances: distances.to_vec(),
        moments: moments.to_vec(),
        rejected,
    })
}

/// `E‖χ_x G(z) χ_y‖^s` over pairs, common realizations, fitted against
/// `dist_Λ(x, y)`.
pub fn decay_fit(model: &Model, z: EnergyPoint, s: f64, pairs: &[(Site, Site)], n: usize, seed: u64) -> Result<DecayFit> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::invalid("s", format!("{s} not in (0, 1)")));
    }
    if n < 2 {
        return Err(Error::Insufficient("need >= 2 realizations".into()));
    }
    let g = model.geometry();
    let dist: Vec<f64> = pairs.iter().map(|&(x, y)| dist_modified(x, y, g)).collect::<Result<_>>()?;
    let sets: Vec<(Vec<usize>, Vec<usize>)> = pairs.iter().map(|&(x, y)| (model.chi(x), model.chi(y))).collect();
    let mut cols: Vec<usize> = sets.iter().flat_map(|p| p.1.iter().copied()).collect();
    cols.sort_unstable();
    cols.dedup();
    let pos = |i: usize| cols.binary_search(&i).unwrap();
    let samples: Vec<Vec<f64>> = rng::par_samples(seed, n, |sd| -> Result<Vec<f64>> {
        let h = model.hamiltonian(&model.sample(sd))?;
        let res = Resolvent::new(&h, z)?;
        let gcols = res.columns(&cols)?;
        Ok(sets
            .iter()
            .map(|(r, c)| {
                let b = linalg::CMatrix::from_fn(r.len(), c.len(), |i, j| gcols[(r[i], pos(c[j]))]);
                linalg::op_norm(&b).powf(s)
            })
            .collect())
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let per_pair: Vec<Vec<f64>> = (0..pairs.len()).map(|k| samples.iter().map(|v| v[k]).collect()).collect();
    let moments: Vec<f64> = per_pair.iter().map(|v| stats::mean(v)).collect();
    let variances: Vec<f64> = per_pair.iter().map(|v| stats::variance(v) / n as f64).collect();
    fit_decay(&dist, &moments, &variances)
}

/// Outcome of the necessity loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NecessityReport {
    pub first_pass: Option<f64>,
    /// Contiguous passing `E'` range around `E` at the first passing `L`.
    pub interval: Option<(f64, f64)>,
    /// `(L, M b)` with the smallest `M b` when nothing passes.
    pub best: (f64, f64),
    pub scan: Vec<CriterionReport>,
    pub energy_scan: Vec<CriterionReport>,
}

/// Number of `E'` points in the neighbourhood scan.
pub const ENERGY_POINTS: usize = 9;
/// Cap on the `E'` half-width.
pub const MAX_HALF_WIDTH: f64 = 0.5;

/// First passing `L` over `l_grid`, then the passing `E'` neighbourhood with
/// half-width `((1/M - b)/Ĉ)^{1/s}` from the Hölder constant `Ĉ`.
pub fn necessity_check(
    spec: &ModelSpec,
    z: EnergyPoint,
    s: f64,
    l_grid: &[f64],
    fit: &DecayFit,
    holder_c: f64,
    opts: CriterionOptions,
) -> Result<NecessityReport> {
    if !(fit.mu > 0.0) {
        return Err(Error::invalid("decay fit", "needs a positive fitted rate"));
    }
    let mut scan = Vec::new();
    for &l in l_grid {
        let need = 2 * l.ceil() as usize + 1;
        let sp = spec.clone().with_cells(spec.cells.max(need));
        let rep = criterion_eval(&sp, l, z, s, opts)?;
        let pass = rep.pass;
        scan.push(rep);
        if pass {
            break;
        }
    }
    let best = scan
        .iter()
        .map(|r| (r.l, r.m * r.b))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((f64::NAN, f64::NAN));
    let Some(hit) = scan.iter().find(|r| r.pass).copied() else {
        return Ok(NecessityReport {
            first_pass: None,
            interval: None,
            best,
            scan,
            energy_scan: Vec::new(),
        });
    };
    let slack = 1.0 / opts.m - hit.b;
    let half = if holder_c > 0.0 { (slack / holder_c).powf(1.0 / s).min(MAX_HALF_WIDTH) } else { MAX_HALF_WIDTH };
    let need = 2 * hit.l.ceil() as usize + 1;
    let sp = spec.clone().with_cells(spec.cells.max(need));
    let mut energy_scan = Vec::new();
    for k in 0..ENERGY_POINTS {
        let e = z.e - half + 2.0 * half * k as f64 / (ENERGY_POINTS - 1) as f64;
        let zp = EnergyPoint::new(e, z.eps)?;
        energy_scan.push(criterion_eval(&sp, hit.l, zp, s, opts)?);
    }
    let mid = ENERGY_POINTS / 2;
    let interval = energy_scan[mid].pass.then(|| {
        let mut lo = mid;
        while lo > 0 && energy_scan[lo - 1].pass {
            lo -= 1;
        }
        let mut hi = mid;
        while hi + 1 < ENERGY_POINTS && energy_scan[hi + 1].pass {
            hi += 1;
        }
        (energy_scan[lo].e, energy_scan[hi].e)
    });
    Ok(NecessityReport {
        first_pass: Some(hit.l),
        interval,
        best,
        scan,
        energy_scan,
    })
}

/// Lattice sites `(x, x + k)` for `k` in `range`, clipped to the box.
pub fn ray_pairs(model: &Model, x: Site, distances: impl IntoIterator<Item = i64>) -> Vec<(Site, Site)> {
    let g = model.geometry();
    distances
        .into_iter()
        .map(|k| (x, Site([x.0[0] + k, x.0[1]])))
        .filter(|(_, y)| g.site_index(*y).is_some())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Boundary;
    use proptest::prelude::*;

    fn free_chain_green(e: f64, k: i64) -> f64 {
        // infinite chain, diagonal 2, hopping -1, E below the band
        let kappa = ((2.0 - e) / 2.0).acosh();
        (-kappa * k.abs() as f64).exp() / (2.0 * kappa.sinh())
    }

    #[test]
    fn modified_distance_cases() {
        let m = Model::new(ModelSpec::lattice(1, 101, 1.0)).unwrap();
        let g = m.geometry();
        assert_eq!(dist_modified(Site::d1(48), Site::d1(52), g).unwrap(), 4.0);
        assert_eq!(dist_modified(Site::d1(0), Site::d1(100), g).unwrap(), 2.0);
        assert!(dist_modified(Site::d1(0), Site::d1(101), g).is_err());
    }

    #[test]
    fn synthetic_iteration() {
        let it = decay_iterate_product((-1.0f64).exp(), 600.0, 60.0, 1.0).unwrap();
        assert!((it.rate - 1.0 / 60.0).abs() < 1e-15);
        assert_eq!(it.steps, 10);
        let zero = decay_iterate_product(0.0, 120.0, 60.0, 1.0).unwrap();
        assert_eq!(zero.bound, 0.0);
        assert!(matches!(decay_iterate_product(1.2, 60.0, 60.0, 1.0), Err(Error::NotContractive { .. })));
        assert!(decay_iterate_product(0.5, 50.0, 60.0, 1.0).is_err());
    }

    #[test]
    fn gap_regime_passes_with_large_gamma() {
        let spec = ModelSpec::lattice(1, 61, 1.0);
        let r = criterion_eval(&spec, 30.0, EnergyPoint::real(-3.0), 0.2, CriterionOptions::default()).unwrap();
        // below the spectrum G is entrywise positive and decreasing in the potential
        let free = criterion_eval(&ModelSpec::lattice(1, 61, 0.0), 30.0, EnergyPoint::real(-3.0), 0.2, CriterionOptions::default()).unwrap();
        assert!(r.pass && r.b <= free.b && free.gamma > 2.0, "{r:?} {free:?}");
        assert_eq!(r.gamma, -(r.m * r.b).ln());
        assert_eq!(r.loc_length, Some(2.0 * r.l / r.gamma));
    }

    #[test]
    fn large_m_fails_without_length() {
        let spec = ModelSpec::lattice(1, 61, 1.0);
        let opts = CriterionOptions { m: 1e12, ..Default::default() };
        let r = criterion_eval(&spec, 30.0, EnergyPoint::real(-1.0), 0.2, opts).unwrap();
        assert!(!r.pass && r.gamma <= 0.0 && r.loc_length.is_none());
    }

    #[test]
    fn criterion_rejects_bad_inputs() {
        let spec = ModelSpec::lattice(1, 61, 1.0);
        let z = EnergyPoint::real(-1.0);
        let o = CriterionOptions::default();
        assert!(criterion_eval(&spec, 20.0, z, 0.2, o).is_err());
        assert!(criterion_eval(&spec, 30.0, z, 0.4, o).is_err());
        assert!(criterion_eval(&spec, 40.0, z, 0.2, o).is_err());
        assert!(criterion_eval(&spec, 30.0, z, 0.2, CriterionOptions { n: 10, ..o }).is_err());
    }

    #[test]
    fn shell_kernel_matches_free_green_function() {
        let m = Model::new(ModelSpec::lattice(1, 81, 0.0)).unwrap();
        let (e, s, l) = (-1.0, 0.25, 30.0);
        let k = shell_kernel(&m, l, EnergyPoint::real(e), s, &[Site::d1(40)], 1, 3).unwrap();
        let oracle: f64 = (8..27).map(|d| 2.0 * free_chain_green(e, d).powf(s)).sum();
        let ratio = k.a[0] / oracle;
        assert!((0.5..=2.0).contains(&ratio), "{} vs {oracle}", k.a[0]);
        assert!(k.a.iter().all(|&a| a >= 0.0));
        assert_eq!(k.inner[0].len(), 2 * 19);
    }

    #[test]
    fn periodic_shell_kernel_is_translation_invariant() {
        let spec = ModelSpec::lattice(1, 64, 4.0).with_boundary(Boundary::Periodic);
        let m = Model::new(spec).unwrap();
        let centres = [Site::d1(0), Site::d1(16), Site::d1(40)];
        let k = shell_kernel(&m, 25.0, EnergyPoint::new(3.0, 0.05).unwrap(), 0.2, &centres, 200, 5).unwrap();
        let spread = k.a.iter().cloned().fold(f64::MIN, f64::max) - k.a.iter().cloned().fold(f64::MAX, f64::min);
        let width = k.a_ci.iter().map(|c| c.1 - c.0).fold(0.0, f64::max);
        assert!(spread <= 2.0 * width, "{k:?}");
    }

    #[test]
    fn gap_decay_matches_combes_thomas_rate() {
        let m = Model::new(ModelSpec::lattice(1, 121, 0.0)).unwrap();
        let e = -1.0;
        let s = 0.5;
        let pairs = ray_pairs(&m, Site::d1(40), 1..=12);
        let fit = decay_fit(&m, EnergyPoint::real(e), s, &pairs, 4, 1).unwrap();
        let kappa = ((2.0 - e) / 2.0f64).acosh();
        assert!((fit.mu - s * kappa).abs() <= 0.1 * s * kappa, "{fit:?}");
        assert!(fit.r2 > 0.99);
    }

    #[test]
    fn shuffled_distances_show_no_decay() {
        let m = Model::new(ModelSpec::lattice(1, 121, 8.0)).unwrap();
        let pairs = ray_pairs(&m, Site::d1(40), 1..=16);
        let fit = decay_fit(&m, EnergyPoint::new(4.0, 0.01).unwrap(), 0.25, &pairs, 200, 2).unwrap();
        assert!(fit.positive, "{fit:?}");
        // reverse-interleaved permutation of the distances
        let mut d = fit.distances.clone();
        let n = d.len();
        let perm: Vec<usize> = (0..n).map(|k| (k * 7 + 3) % n).collect();
        d = perm.iter().map(|&k| d[k]).collect();
        let var: Vec<f64> = fit.moments.iter().map(|m| (0.05 * m) * (0.05 * m)).collect();
        let control = fit_decay(&d, &fit.moments, &var).unwrap();
        assert!(control.mu.abs() < 3.0 * control.mu_se.max(1e-12) || control.mu.abs() < 0.2 * fit.mu, "{control:?}");
    }

    #[test]
    fn delocalized_control_never_passes() {
        let spec = ModelSpec::lattice(1, 61, 0.0);
        let fit = DecayFit {
            mu: 1.0,
            mu_se: 0.1,
            a: 1.0,
            r2: 1.0,
            positive: true,
            distances: vec![],
            moments: vec![],
            rejected: 0,
        };
        let opts = CriterionOptions { n: 100, ..Default::default() };
        let r = necessity_check(&spec, EnergyPoint::new(2.0, 1e-3).unwrap(), 0.2, &[26.0, 28.0, 30.0], &fit, 1.0, opts).unwrap();
        assert!(r.first_pass.is_none() && r.scan.iter().all(|c| !c.pass), "{r:?}");
    }

    #[test]
    fn gap_regime_necessity_passes_at_smallest_l() {
        let spec = ModelSpec::lattice(1, 61, 1.0);
        let fit = DecayFit {
            mu: 1.0,
            mu_se: 0.1,
            a: 1.0,
            r2: 1.0,
            positive: true,
            distances: vec![],
            moments: vec![],
            rejected: 0,
        };
        let opts = CriterionOptions { n: 100, ..Default::default() };
        let r = necessity_check(&spec, EnergyPoint::real(-2.0), 0.2, &[26.0, 28.0], &fit, 1.0, opts).unwrap();
        assert_eq!(r.first_pass, Some(26.0));
        let (lo, hi) = r.interval.unwrap();
        assert!(lo < -2.0 && hi > -2.0);
    }

    #[test]
    fn continuum_criterion_runs() {
        let spec = ModelSpec::continuum(1, 61, 0.5, 12.0);
        let opts = CriterionOptions { n: 100, ..Default::default() };
        let r = criterion_eval(&spec, 26.0, EnergyPoint::new(6.0, 0.01).unwrap(), 0.2, opts).unwrap();
        assert!(r.b.is_finite() && r.b >= 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn modified_distance_properties(x in 0i64..40, y in 0i64..40, a in 0i64..40, b in 0i64..40) {
            let m2 = Model::new(ModelSpec::lattice(2, 40, 1.0)).unwrap();
            let (p, q) = (Site::d2(x, a), Site::d2(y, b));
            let g = m2.geometry();
            let d = dist_modified(p, q, g).unwrap();
            prop_assert_eq!(d, dist_modified(q, p, g).unwrap());
            prop_assert!(d <= p.dist(&q) as f64);
        }
    }
}
