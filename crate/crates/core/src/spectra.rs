//! Density-of-states estimators, band-edge and Wegner probes, disorder scans
//! and the good/bad decomposition.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criterion::{self, CriterionOptions};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Boundary, Model, ModelSpec, Site};
use crate::moments::{self, DisorderQuery, Proxy};
use crate::resolvent::EnergyPoint;
use crate::rng;
use crate::stats::{self, line_fit, Estimator};

/// Minimum realizations for a DOS estimate.
pub const MIN_DOS_SAMPLES: usize = 20;
/// Default quasi-momenta per axis.
pub const DEFAULT_K_POINTS: usize = 16;

/// Eigenvalue histogram per unit volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DosReport {
    pub cells: usize,
    pub edges: Vec<f64>,
    /// Mass per bin, per unit volume.
    pub mass: Vec<f64>,
    /// Mass below the first and above the last edge.
    pub below: f64,
    pub above: f64,
    pub volume: f64,
    /// Eigenvalues per operator.
    pub dim: usize,
    pub samples: usize,
    /// Quasi-momenta per axis for k-averaged estimates.
    pub k_points: Option<usize>,
}

impl DosReport {
    /// Integrated density at each edge.
    pub fn integrated(&self) -> Vec<f64> {
        let mut acc = self.below;
        let mut out = vec![acc];
        for m in &self.mass {
            acc += m;
            out.push(acc);
        }
        out
    }

    pub fn total(&self) -> f64 {
        self.below + self.above + self.mass.iter().sum::<f64>()
    }

    /// `(L, bin_lo, bin_hi, mass)` rows.
    pub fn rows(&self) -> Vec<(usize, f64, f64, f64)> {
        self.edges.windows(2).zip(&self.mass).map(|(w, &m)| (self.cells, w[0], w[1], m)).collect()
    }
}

fn volume(model: &Model) -> f64 {
    let g = model.geometry();
    g.n_points() as f64 * g.h.powi(g.dim as i32)
}

fn histogram(eigs: &[f64], edges: &[f64], counts: &mut [f64], below: &mut f64, above: &mut f64, w: f64) {
    for &e in eigs {
        if e < edges[0] {
            *below += w;
        } else if e >= edges[edges.len() - 1] {
            *above += w;
        } else {
            let k = edges.partition_point(|&x| x <= e) - 1;
            counts[k] += w;
        }
    }
}

/// Uniform midpoint grid of quasi-momenta in `[0, 2π)^d`.
pub fn k_grid(dim: usize, points: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..points).map(|j| 2.0 * PI * (j as f64 + 0.5) / points as f64).collect();
    if dim == 1 {
        axis.iter().map(|&k| vec![k]).collect()
    } else {
        axis.iter().flat_map(|&b| axis.iter().map(move |&a| vec![a, b])).collect()
    }
}

/// Averaged eigenvalue histogram of `H^{(Λ_L)}`; with `k_points`, averaged
/// also over quasi-periodic boundary phases.
pub fn dos_estimate(spec: &ModelSpec, edges: &[f64], n: usize, seed: u64, k_points: Option<usize>) -> Result<DosReport> {
    if n < MIN_DOS_SAMPLES {
        return Err(Error::invalid("N", format!("{n} < {MIN_DOS_SAMPLES}")));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("bins", "edges must be strictly increasing"));
    }
    let models: Vec<Model> = match k_points {
        None => vec![Model::new(spec.clone())?],
        Some(p) => {
            if p == 0 {
                return Err(Error::invalid("k_points", "must be positive"));
            }
            k_grid(spec.dimension, p)
                .into_iter()
                .map(|k| Model::new(spec.clone().with_boundary(Boundary::QuasiPeriodic { k })))
                .collect::<Result<_>>()?
        }
    };
    let vol = volume(&models[0]);
    let dim = models[0].geometry().n_points();
    let weight = 1.0 / (n as f64 * models.len() as f64 * vol);
    let per_sample: Vec<(Vec<f64>, f64, f64)> = rng::par_samples(seed, n, |sd| {
        let mut counts = vec![0.0; edges.len() - 1];
        let (mut below, mut above) = (0.0, 0.0);
        for m in &models {
            let eigs = linalg::hermitian_eigenvalues(&m.hamiltonian_with(&m.sample(sd).eta).matrix);
            histogram(&eigs, edges, &mut counts, &mut below, &mut above, weight);
        }
        (counts, below, above)
    });
    let mut mass = vec![0.0; edges.len() - 1];
    let (mut below, mut above) = (0.0, 0.0);
    for (c, b, a) in &per_sample {
        mass.iter_mut().zip(c).for_each(|(m, v)| *m += v);
        below += b;
        above += a;
    }
    Ok(DosReport {
        cells: spec.cells,
        edges: edges.to_vec(),
        mass,
        below,
        above,
        volume: vol,
        dim,
        samples: n,
        k_points,
    })
}

/// Free lattice integrated density `(1/π) arccos(1 - E/2)` in d = 1.
pub fn free_lattice_ids(e: f64) -> f64 {
    if e <= 0.0 {
        0.0
    } else if e >= 4.0 {
        1.0
    } else {
        (1.0 - e / 2.0).acos() / PI
    }
}

/// Integrated density of the free lattice in d = 1 or 2 by midpoint
/// quadrature over the Brillouin zone.
pub fn bz_ids(dim: usize, e: f64, points: usize) -> f64 {
    let p: Vec<f64> = (0..points).map(|j| 2.0 * PI * (j as f64 + 0.5) / points as f64).collect();
    let band = |q: f64| 2.0 - 2.0 * q.cos();
    if dim == 1 {
        p.iter().filter(|&&q| band(q) < e).count() as f64 / points as f64
    } else {
        let inner: Vec<f64> = p.iter().map(|&q| band(q)).collect();
        let hits: usize = inner
            .par_iter()
            .map(|&a| inner.iter().filter(|&&b| a + b < e).count())
            .sum();
        hits as f64 / (points * points) as f64
    }
}

/// Band-edge masses `κ_L([E₀', E₀' + C₁ L^{-β}])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifshitzTable {
    pub e0: f64,
    pub beta: f64,
    pub c1: f64,
    /// `(L, width, mass, ci_lo, ci_hi)`.
    pub rows: Vec<(usize, f64, f64, f64, f64)>,
    /// Power-law exponent of mass against `L` (None with < 2 positive masses).
    pub exponent: Option<f64>,
}

pub fn lifshitz_probe(spec: &ModelSpec, l_grid: &[usize], beta: f64, c1: f64, n: usize, seed: u64) -> Result<LifshitzTable> {
    if !(beta > 0.0 && beta < 2.0) {
        return Err(Error::invalid("beta", format!("{beta} not in (0, 2)")));
    }
    if !(c1 >= 0.0) || n == 0 {
        return Err(Error::invalid("probe", "needs C1 >= 0 and N > 0"));
    }
    let spectra: Vec<(f64, Vec<Vec<f64>>)> = l_grid
        .iter()
        .map(|&l| -> Result<_> {
            let m = Model::new(spec.clone().with_cells(l))?;
            let eig: Vec<Vec<f64>> = rng::par_samples(seed, n, |sd| linalg::hermitian_eigenvalues(&m.hamiltonian_with(&m.sample(sd).eta).matrix));
            Ok((volume(&m), eig))
        })
        .collect::<Result<_>>()?;
    let e0 = spectra
        .iter()
        .flat_map(|(_, e)| e.iter().map(|v| v[0]))
        .fold(f64::INFINITY, f64::min);
    let mut rows = Vec::new();
    for (&l, (vol, eig)) in l_grid.iter().zip(&spectra) {
        let width = c1 * (l as f64).powf(-beta);
        let per: Vec<f64> = eig
            .iter()
            .map(|v| v.iter().filter(|&&e| e >= e0 && e <= e0 + width).count() as f64 / vol)
            .collect();
        let mass = stats::mean(&per);
        let (lo, hi) = if per.iter().all(|&x| x == per[0]) {
            (mass, mass)
        } else {
            stats::bootstrap_ci(&per, stats::mean, rng::child_seed(seed, l as u64))
        };
        rows.push((l, width, mass, lo, hi));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.2 > 0.0)
        .map(|r| ((r.0 as f64).ln(), r.2.ln()))
        .unzip();
    let exponent = if x.len() >= 2 { line_fit(&x, &y, None).ok().map(|f| f.slope) } else { None };
    Ok(LifshitzTable {
        e0,
        beta,
        c1,
        rows,
        exponent,
    })
}

/// Empirical density bound `max_E κ_L([E - δ, E + δ]) / 2δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WegnerReport {
    pub delta: f64,
    /// `(E, density, ci_lo, ci_hi)` at δ.
    pub rows: Vec<(f64, f64, f64, f64)>,
    pub max: f64,
    /// Same maximum with δ/2.
    pub max_halved: f64,
    /// `|max_halved / max - 1| ≤ 0.25`.
    pub stable: bool,
}

pub const WEGNER_STABILITY: f64 = 0.25;

pub fn wegner_probe(spec: &ModelSpec, e_grid: &[f64], delta: f64, n: usize, seed: u64) -> Result<WegnerReport> {
    if !(delta > 0.0) {
        return Err(Error::invalid("delta", "must be positive"));
    }
    if e_grid.is_empty() {
        return Ok(WegnerReport {
            delta,
            rows: Vec::new(),
            max: 0.0,
            max_halved: 0.0,
            stable: true,
        });
    }
    if n == 0 {
        return Err(Error::Insufficient("no samples".into()));
    }
    let m = Model::new(spec.clone())?;
    let vol = volume(&m);
    let eig: Vec<Vec<f64>> = rng::par_samples(seed, n, |sd| linalg::hermitian_eigenvalues(&m.hamiltonian_with(&m.sample(sd).eta).matrix));
    let density = |e: f64, d: f64| -> Vec<f64> {
        eig.iter()
            .map(|v| {
                let lo = v.partition_point(|&x| x < e - d);
                let hi = v.partition_point(|&x| x <= e + d);
                (hi - lo) as f64 / (vol * 2.0 * d)
            })
            .collect()
    };
    let mut rows = Vec::new();
    let mut max_halved: f64 = 0.0;
    for (k, &e) in e_grid.iter().enumerate() {
        let per = density(e, delta);
        let mean = stats::mean(&per);
        let (lo, hi) = stats::bootstrap_ci(&per, stats::mean, rng::child_seed(seed, k as u64));
        rows.push((e, mean, lo, hi));
        max_halved = max_halved.max(stats::mean(&density(e, 0.5 * delta)));
    }
    let max = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let stable = max > 0.0 && (max_halved / max - 1.0).abs() <= WEGNER_STABILITY;
    Ok(WegnerReport {
        delta,
        rows,
        max,
        max_halved,
        stable,
    })
}

/// Moments and criterion outcomes across disorder strengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderScan {
    /// `(λ, E, moment, ci_lo, ci_hi, pass)`; `pass` is None when `L` is too
    /// small for the criterion.
    pub rows: Vec<(f64, f64, f64, f64, f64, Option<bool>)>,
    /// First passing λ per energy.
    pub first_pass: Vec<(f64, Option<f64>)>,
    /// Spearman ρ and one-sided p-value of a decreasing trend per energy.
    pub trend: Vec<(f64, f64, f64)>,
}

/// `E‖U_β G^{(B^L)} U_ζ‖^s` with `β` the centre of a box of `2L + 1` cells and
/// `|ζ - β| = ⌊L/2⌋` along the first axis; common random numbers across λ.
pub fn large_disorder_scan(
    template: &ModelSpec,
    lambdas: &[f64],
    l: usize,
    e_grid: &[EnergyPoint],
    s: f64,
    n: usize,
    seed: u64,
) -> Result<DisorderScan> {
    if lambdas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("lambda_grid", "must be increasing"));
    }
    let cells = 2 * l + 1;
    let beta = l as i64;
    let pick = |c: i64| if template.dimension == 1 { Site::d1(c) } else { Site::d2(c, beta) };
    let (x, y) = (pick(beta), pick(beta + (l / 2) as i64));
    let mut rows = Vec::new();
    for &lambda in lambdas {
        let sp = template.clone().with_cells(cells).with_lambda(lambda);
        let model = Model::new(sp.clone())?;
        for &z in e_grid {
            let q = DisorderQuery {
                z,
                x,
                y,
                proxy: Proxy::Bump,
                seed,
            };
            let est = moments::fm_disorder(&model, &q, s, n, Estimator::PlainMean)?;
            let crit_l = l as f64;
            let pass = if crit_l > sp.r0 + criterion::LAYER_DEPTH * sp.bump_radius && s < 1.0 / 3.0 {
                let opts = CriterionOptions { n: n.max(criterion::MIN_CRITERION_SAMPLES), m: 1.0, seed };
                Some(criterion::criterion_eval(&sp, crit_l, z, s, opts)?.pass)
            } else {
                None
            };
            rows.push((lambda, z.e, est.mean, est.ci_lo, est.ci_hi, pass));
        }
    }
    let mut first_pass = Vec::new();
    let mut trend = Vec::new();
    for z in e_grid {
        let sel: Vec<_> = rows.iter().filter(|r| r.1 == z.e).collect();
        first_pass.push((z.e, sel.iter().find(|r| r.5 == Some(true)).map(|r| r.0)));
        let lam: Vec<f64> = sel.iter().map(|r| r.0).collect();
        let mom: Vec<f64> = sel.iter().map(|r| r.2).collect();
        let (rho, p) = if lam.len() >= 3 { stats::spearman_decreasing(&lam, &mom) } else { (f64::NAN, 1.0) };
        trend.push((z.e, rho, p));
    }
    Ok(DisorderScan { rows, first_pass, trend })
}

/// Good/bad decomposition per scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoodBadRow {
    pub l: f64,
    pub n: usize,
    pub bad: usize,
    pub p_bad: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Direct `E‖·‖^s`.
    pub moment_s: f64,
    /// Measured `E‖·‖^t`.
    pub moment_t: f64,
    /// `A^s e^{-sμL} + moment_t^{s/t} p_bad^{1 - s/t}`.
    pub combined: f64,
    pub beats_direct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodBadReport {
    pub a: f64,
    pub mu: f64,
    pub s: f64,
    pub t: f64,
    pub rows: Vec<GoodBadRow>,
    /// `ξ̂` from `P(bad) ~ L^{-ξ}` over scales with observed bad events.
    pub xi_hat: Option<f64>,
    /// `ξ̂ > 2(d - 1)`.
    pub admissible: Option<bool>,
}

impl GoodBadReport {
    pub fn combined(&self, row: &GoodBadRow) -> f64 {
        combined_bound(self.a, self.mu, self.s, self.t, row.l, row.moment_t, row.p_bad)
    }
}

pub fn combined_bound(a: f64, mu: f64, s: f64, t: f64, l: f64, moment_t: f64, p_bad: f64) -> f64 {
    a.powf(s) * (-s * mu * l).exp() + moment_t.powf(s / t) * p_bad.powf(1.0 - s / t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsaParams {
    pub a: f64,
    pub mu: f64,
    pub s: f64,
    pub t: f64,
}

pub fn msa_bridge(spec: &ModelSpec, l_grid: &[f64], z: EnergyPoint, p: MsaParams, n: usize, seed: u64) -> Result<GoodBadReport> {
    let MsaParams { a, mu, s, t } = p;
    if !(s > 0.0 && s < t && t < 1.0) {
        return Err(Error::invalid("s, t", format!("need 0 < s < t < 1, got s = {s}, t = {t}")));
    }
    if l_grid.len() < 3 {
        return Err(Error::invalid("L_grid", "ξ̂ needs >= 3 scales"));
    }
    if n == 0 {
        return Err(Error::Insufficient("no samples".into()));
    }
    let mut rows = Vec::new();
    for &l in l_grid {
        let cells = 2 * l.ceil() as usize + 1;
        let model = Model::new(spec.clone().with_cells(spec.cells.max(cells)))?;
        let norms: Vec<f64> = criterion::boundary_norms(&model, l, z, n, seed)?.into_iter().map(|p| p.0).collect();
        let threshold = a * (-mu * l).exp();
        let bad = norms.iter().filter(|&&v| v > threshold).count();
        let p_bad = bad as f64 / n as f64;
        let (ci_lo, ci_hi) = stats::proportion_ci(bad, n);
        let moment_s = stats::mean(&norms.iter().map(|v| v.powf(s)).collect::<Vec<_>>());
        let moment_t = stats::mean(&norms.iter().map(|v| v.powf(t)).collect::<Vec<_>>());
        let combined = combined_bound(a, mu, s, t, l, moment_t, p_bad);
        rows.push(GoodBadRow {
            l,
            n,
            bad,
            p_bad,
            ci_lo,
            ci_hi,
            moment_s,
            moment_t,
            combined,
            beats_direct: combined < moment_s,
        });
    }
    let (x, y): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.bad > 0).map(|r| (r.l.ln(), r.p_bad.ln())).unzip();
    let xi_hat = if x.len() >= 2 { line_fit(&x, &y, None).ok().map(|f| -f.slope) } else { None };
    let d = spec.dimension as f64;
    Ok(GoodBadReport {
        a,
        mu,
        s,
        t,
        rows,
        xi_hat,
        admissible: xi_hat.map(|x| x > 2.0 * (d - 1.0)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resolvent::Resolvent;

    fn edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
        (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect()
    }

    #[test]
    fn free_integrated_dos_matches_arccos() {
        let spec = ModelSpec::lattice(1, 400, 0.0);
        let r = dos_estimate(&spec, &edges(0.0, 4.0, 40), 20, 1, None).unwrap();
        for (e, ids) in r.edges.iter().zip(r.integrated()) {
            assert!((ids - free_lattice_ids(*e)).abs() <= 0.02, "E = {e}");
        }
        assert!((r.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mass_per_volume_counts_eigenvalues() {
        let spec = ModelSpec::continuum(1, 6, 0.25, 3.0);
        let r = dos_estimate(&spec, &edges(0.0, 10.0, 7), 20, 2, None).unwrap();
        assert!((r.total() - r.dim as f64 / r.volume).abs() < 1e-12);
        assert!(r.mass.iter().all(|&m| m >= 0.0));
    }

    #[test]
    fn k_averaged_free_dos_matches_brillouin_zone() {
        let spec = ModelSpec::lattice(1, 16, 0.0);
        let ed = edges(0.0, 4.0, 20);
        let r = dos_estimate(&spec, &ed, 20, 3, Some(32)).unwrap();
        let sup = r
            .edges
            .iter()
            .zip(r.integrated())
            .map(|(&e, ids)| (ids - bz_ids(1, e, 1 << 16)).abs())
            .fold(0.0, f64::max);
        assert!(sup <= 0.02, "{sup}");
    }

    #[test]
    fn dirichlet_neumann_differ_by_boundary_share() {
        for l in [10, 20, 40] {
            let ed = edges(-0.5, 6.5, 14);
            let d = dos_estimate(&ModelSpec::lattice(1, l, 2.0), &ed, 20, 4, None).unwrap();
            let n = dos_estimate(&ModelSpec::lattice(1, l, 2.0).with_boundary(Boundary::Neumann), &ed, 20, 4, None).unwrap();
            let sup = d.integrated().iter().zip(n.integrated()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(sup <= 2.0 / l as f64 + 1e-12, "L = {l}: {sup}");
        }
    }

    #[test]
    fn lifshitz_free_control_and_zero_width() {
        let spec = ModelSpec::lattice(1, 10, 0.0);
        let t = lifshitz_probe(&spec, &[20, 40, 80, 160], 1.0, 4.0, 20, 5).unwrap();
        // free Dirichlet eigenvalues 2 - 2cos(πj/(L+1))
        let level = |l: usize, j: usize| 2.0 - 2.0 * (PI * j as f64 / (l as f64 + 1.0)).cos();
        assert!((t.e0 - level(160, 1)).abs() < 1e-12);
        for &(l, w, m, _, _) in &t.rows {
            let count = (1..=l).filter(|&j| level(l, j) >= t.e0 - 1e-12 && level(l, j) <= t.e0 + w).count();
            assert!((m - count as f64 / l as f64).abs() < 1e-12, "L = {l}");
        }
        // Weyl rate −β/2
        assert!((t.exponent.unwrap() + 0.5).abs() < 0.15, "{t:?}");
        let z = lifshitz_probe(&spec, &[20, 40], 1.0, 0.0, 20, 5).unwrap();
        assert_eq!(z.rows[0].2, 0.0);
        assert!((z.rows[1].2 - 1.0 / 40.0).abs() < 1e-15);
    }

    #[test]
    fn disorder_suppresses_band_edge_mass() {
        let spec = ModelSpec::lattice(1, 10, 4.0);
        let t = lifshitz_probe(&spec, &[20, 40, 80, 160], 1.0, 4.0, 100, 6).unwrap();
        let masses: Vec<f64> = t.rows.iter().map(|r| r.2).collect();
        assert!(masses.windows(2).all(|w| w[1] <= w[0]), "{t:?}");
        assert!(t.exponent.unwrap() < -0.5, "{t:?}");
    }

    #[test]
    fn wegner_bound_stable_with_disorder() {
        let spec = ModelSpec::lattice(1, 200, 4.0);
        let grid: Vec<f64> = (0..9).map(|k| 0.5 + 0.75 * k as f64).collect();
        let r = wegner_probe(&spec, &grid, 0.2, 100, 7).unwrap();
        assert!(r.stable, "{r:?}");
        let free = wegner_probe(&ModelSpec::lattice(1, 200, 0.0), &[0.01, 3.99], 0.02, 1, 7).unwrap();
        let finer = wegner_probe(&ModelSpec::lattice(1, 200, 0.0), &[0.005, 3.995], 0.005, 1, 7).unwrap();
        assert!(finer.max > free.max, "van Hove growth: {} vs {}", finer.max, free.max);
        assert!(wegner_probe(&spec, &[], 0.1, 10, 0).unwrap().rows.is_empty());
    }

    #[test]
    fn zero_disorder_entry_is_the_free_value() {
        let template = ModelSpec::lattice(1, 3, 0.0);
        let z = EnergyPoint::new(2.0, 0.05).unwrap();
        let scan = large_disorder_scan(&template, &[0.0, 4.0], 10, &[z], 0.5, 20, 1).unwrap();
        let m = Model::new(template.with_cells(21)).unwrap();
        let h = m.free_hamiltonian();
        let res = Resolvent::new(&h, z).unwrap();
        let exact = res.block(Site::d1(10), Site::d1(15)).unwrap().op_norm.powf(0.5);
        assert!((scan.rows[0].2 - exact).abs() < 1e-12);
        assert!(scan.rows[0].5.is_none());
    }

    #[test]
    fn large_disorder_lowers_moments() {
        let template = ModelSpec::lattice(1, 3, 0.0);
        let z = EnergyPoint::new(2.0, 1e-3).unwrap();
        let scan = large_disorder_scan(&template, &[2.0, 4.0, 8.0, 16.0], 20, &[z], 0.25, 400, 2).unwrap();
        let lo = scan.rows.first().unwrap();
        let hi = scan.rows.last().unwrap();
        assert!(hi.4 < lo.3, "{scan:?}");
        assert!(scan.trend[0].1 < 0.0);
    }

    #[test]
    fn msa_bridge_trivial_threshold_and_identity() {
        let spec = ModelSpec::lattice(1, 3, 12.0);
        let z = EnergyPoint::new(8.0, 0.0).unwrap();
        let p = MsaParams { a: 1e30, mu: 0.1, s: 0.2, t: 0.6 };
        let r = msa_bridge(&spec, &[24.0, 28.0, 32.0], z, p, 50, 3).unwrap();
        for row in &r.rows {
            assert_eq!(row.p_bad, 0.0);
            assert_eq!(row.combined, 1e30f64.powf(0.2) * (-0.2 * 0.1 * row.l).exp());
            assert_eq!(row.combined, r.combined(row));
            assert!((row.ci_hi - 3.0 / 50.0).abs() < 1e-15);
        }
    }

    #[test]
    fn combined_bound_dominates_direct_moment() {
        let spec = ModelSpec::lattice(1, 3, 12.0);
        let z = EnergyPoint::new(8.0, 0.0).unwrap();
        let p = MsaParams { a: 1.0, mu: 0.4, s: 0.2, t: 0.6 };
        let r = msa_bridge(&spec, &[10.0, 14.0, 18.0, 22.0], z, p, 400, 4).unwrap();
        for row in &r.rows {
            assert!(row.combined >= row.moment_s * (1.0 - 1e-12), "{row:?}");
            assert!((0.0..=1.0).contains(&row.p_bad));
            assert_eq!(row.combined, r.combined(row));
        }
    }
}
