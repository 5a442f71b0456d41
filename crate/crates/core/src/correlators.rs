//! Eigenfunction correlators `Q_v`, dynamical and Fermi kernels, and the
//! time-averaged escape probe.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Model, Site};
use crate::stats::{self, line_fit, LineFit};

pub use crate::spectral::{Interval, SpectralData};

/// Correlators at one `(J, x, α)` for a chosen interpolation exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorReport {
    pub v: f64,
    pub q_v: f64,
    pub q0: f64,
    pub q1: f64,
    pub q2: f64,
    /// `Σ_{E_n ∈ J} ‖χ_x ψ_n‖ ‖χ_α ψ_n‖`.
    pub y_bound: f64,
}

/// Per-eigenvalue weights `a_n = ‖χ_x ψ_n‖²` and `b_n = ⟨U_α ψ_n, ψ_n⟩` over J.
pub fn correlator_weights(s: &SpectralData, model: &Model, j: Interval, x: Site, alpha: Site) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let chi_x = model.chi(x);
    let chi_a = model.chi(alpha);
    let u = model.bump(alpha);
    let range = s.window(j);
    let a = range.clone().map(|n| s.mass(n, &chi_x)).collect();
    let b = range.clone().map(|n| s.weighted_mass(n, &u)).collect();
    let c = range.map(|n| s.mass(n, &chi_a)).collect();
    (a, b, c)
}

/// `Σ a_n^{v/2} b_n^{1 - v/2}` with `0⁰ = 1`.
pub fn q_from_weights(a: &[f64], b: &[f64], v: f64) -> f64 {
    a.iter().zip(b).map(|(&a, &b)| a.powf(v / 2.0) * b.powf(1.0 - v / 2.0)).sum()
}

pub fn q_correlator(s: &SpectralData, model: &Model, j: Interval, x: Site, alpha: Site, v: f64) -> Result<CorrelatorReport> {
    if !(0.0..=2.0).contains(&v) {
        return Err(Error::invalid("v", format!("{v} not in [0, 2]")));
    }
    let (a, b, c) = correlator_weights(s, model, j, x, alpha);
    Ok(CorrelatorReport {
        v,
        q_v: q_from_weights(&a, &b, v),
        q0: q_from_weights(&a, &b, 0.0),
        q1: q_from_weights(&a, &b, 1.0),
        q2: q_from_weights(&a, &b, 2.0),
        y_bound: a.iter().zip(&c).map(|(a, c)| (a * c).sqrt()).sum(),
    })
}

/// Pointwise interpolation check `Q₁ ≤ Q_v^{1/(2-v)} Q₂^{(1-v)/(2-v)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationCheck {
    pub holds: bool,
    /// Right side minus left side.
    pub slack: f64,
    /// Q_v or Q₂ vanished, so the bound holds trivially.
    pub trivial: bool,
}

pub fn interpolation_check(r: &CorrelatorReport) -> Result<InterpolationCheck> {
    if !(0.0..1.0).contains(&r.v) {
        return Err(Error::invalid("v", format!("{} not in [0, 1)", r.v)));
    }
    let rhs = interpolation_bound(r.q_v, r.q2, r.v);
    let trivial = r.q_v == 0.0 || r.q2 == 0.0;
    let slack = rhs - r.q1;
    // rounding in the three sums
    let tol = 1e-13 * rhs.max(r.q1);
    Ok(InterpolationCheck {
        holds: slack >= -tol,
        slack,
        trivial,
    })
}

pub fn interpolation_bound(q_v: f64, q2: f64, v: f64) -> f64 {
    q_v.powf(1.0 / (2.0 - v)) * q2.powf((1.0 - v) / (2.0 - v))
}

/// Smallest second difference of `ln Q_v` over an equally spaced v-grid.
pub fn log_convexity_defect(s: &SpectralData, model: &Model, j: Interval, x: Site, alpha: Site, v_grid: &[f64]) -> f64 {
    let (a, b, _) = correlator_weights(s, model, j, x, alpha);
    let logs: Vec<f64> = v_grid.iter().map(|&v| q_from_weights(&a, &b, v).ln()).collect();
    logs.windows(3)
        .map(|w| w[0] - 2.0 * w[1] + w[2])
        .fold(f64::INFINITY, f64::min)
}

/// Averaged interpolation `E Q₁ ≤ (E Q_v)^{1/(2-v)} (E Q₂)^{(1-v)/(2-v)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragedInterpolation {
    pub mean_q1: f64,
    pub bound: f64,
    /// Bootstrap interval of `bound - E Q₁`.
    pub slack_ci: (f64, f64),
    pub holds: bool,
}

pub fn averaged_interpolation(reports: &[CorrelatorReport], seed: u64) -> Result<AveragedInterpolation> {
    if reports.len() < 2 {
        return Err(Error::Insufficient("averaged interpolation needs >= 2 realizations".into()));
    }
    let v = reports[0].v;
    let n = reports.len();
    let slack_of = |idx: &[f64]| {
        // idx carries row numbers as floats so the bootstrap can resample rows
        let m = idx.len() as f64;
        let (mut q1, mut qv, mut q2) = (0.0, 0.0, 0.0);
        for &i in idx {
            let r = &reports[i as usize];
            q1 += r.q1;
            qv += r.q_v;
            q2 += r.q2;
        }
        interpolation_bound(qv / m, q2 / m, v) - q1 / m
    };
    let rows: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let mean_q1 = reports.iter().map(|r| r.q1).sum::<f64>() / n as f64;
    let bound = slack_of(&rows) + mean_q1;
    let slack_ci = stats::bootstrap_ci(&rows, slack_of, seed);
    Ok(AveragedInterpolation {
        mean_q1,
        bound,
        slack_ci,
        holds: slack_ci.1 >= 0.0,
    })
}

/// t-grid supremum of `‖χ_x e^{-itH} P_J χ_y‖` and the correlator bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicalKernel {
    pub sup: f64,
    pub bound: f64,
}

fn chi_sets(s: &SpectralData, x: Site, y: Site) -> Result<(Vec<usize>, Vec<usize>)> {
    let g = s
        .geometry
        .as_ref()
        .ok_or_else(|| Error::invalid("spectral data", "no geometry attached"))?;
    let (a, b) = (g.chi(x), g.chi(y));
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("site", format!("{x:?} or {y:?} lies outside the box")));
    }
    Ok((a, b))
}

pub fn dynamical_kernel(s: &SpectralData, j: Interval, x: Site, y: Site, t_grid: &[f64]) -> Result<DynamicalKernel> {
    let (rx, ry) = chi_sets(s, x, y)?;
    let bound = s
        .window(j)
        .map(|n| (s.mass(n, &rx) * s.mass(n, &ry)).sqrt())
        .sum();
    let sup = t_grid
        .iter()
        .map(|&t| linalg::op_norm(&s.function_block(j, &rx, &ry, |e| Complex64::from_polar(1.0, -t * e))))
        .fold(0.0, f64::max);
    Ok(DynamicalKernel { sup, bound })
}

/// Largest `‖χ_x g(H) P_J χ_y‖` over a family of test functions with `|g| ≤ 1`.
pub fn test_function_sup(s: &SpectralData, j: Interval, x: Site, y: Site, family: &[&dyn Fn(f64) -> Complex64]) -> Result<f64> {
    let (rx, ry) = chi_sets(s, x, y)?;
    Ok(family
        .iter()
        .map(|g| linalg::op_norm(&s.function_block(j, &rx, &ry, g)))
        .fold(0.0, f64::max))
}

/// `‖χ_x δ_{E_n}(H) χ_y‖ = ‖χ_x ψ_n‖ ‖χ_y ψ_n‖`.
pub fn eigenprojection_kernel(s: &SpectralData, n: usize, x: Site, y: Site) -> Result<f64> {
    let (rx, ry) = chi_sets(s, x, y)?;
    Ok((s.mass(n, &rx) * s.mass(n, &ry)).sqrt())
}

/// `‖χ_x P_{(-∞, E_F)} χ_y‖`.
pub fn fermi_kernel(s: &SpectralData, e_f: f64, x: Site, y: Site) -> Result<f64> {
    let (rx, ry) = chi_sets(s, x, y)?;
    let j = Interval {
        lo: f64::NEG_INFINITY,
        hi: e_f.next_down(),
    };
    Ok(linalg::op_norm(&s.projector_block(j, &rx, &ry)))
}

/// Number of time samples in the escape average.
pub const RAGE_SAMPLES: usize = 32;

/// Time-averaged escaped mass `(1/32) Σ_k ‖χ_{|q - x₀| ≥ R} e^{-i t_k H} P_J χ_{x₀}‖²`
/// with `t_k = (k + 1/2) T / 32`.
pub fn rage_probe(s: &SpectralData, j: Interval, x0: Site, r_grid: &[f64], horizon: f64) -> Result<Vec<f64>> {
    if !(horizon > 0.0) {
        return Err(Error::invalid("T", "horizon must be positive"));
    }
    let (r0, _) = chi_sets(s, x0, x0)?;
    let g = s.geometry.as_ref().expect("checked by chi_sets");
    let centre = [x0.0[0] as f64, x0.0[1] as f64];
    let dist: Vec<f64> = (0..s.dim()).map(|q| g.coord_dist(g.coord(q), centre)).collect();
    let all: Vec<usize> = (0..s.dim()).collect();
    let evolved: Vec<_> = (0..RAGE_SAMPLES)
        .map(|k| {
            let t = (k as f64 + 0.5) * horizon / RAGE_SAMPLES as f64;
            s.function_block(j, &all, &r0, |e| Complex64::from_polar(1.0, -t * e))
        })
        .collect();
    Ok(r_grid
        .iter()
        .map(|&r| {
            let far: Vec<usize> = all.iter().copied().filter(|&q| dist[q] >= r - 1e-9).collect();
            if far.is_empty() {
                return 0.0;
            }
            evolved
                .iter()
                .map(|m| {
                    let sub = crate::linalg::CMatrix::from_fn(far.len(), m.ncols(), |i, c| m[(far[i], c)]);
                    linalg::op_norm(&sub).powi(2)
                })
                .sum::<f64>()
                / RAGE_SAMPLES as f64
        })
        .collect())
}

/// Exponential fit `ln value ≈ intercept - rate · distance` over positive values.
pub fn decay_fit(distance: &[f64], value: &[f64]) -> Result<LineFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = distance
        .iter()
        .zip(value)
        .filter(|(_, v)| **v > 0.0)
        .map(|(d, v)| (*d, v.ln()))
        .unzip();
    line_fit(&x, &y, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use proptest::prelude::*;

    fn setup(n: usize, lambda: f64, seed: u64) -> (Model, SpectralData) {
        let m = Model::new(ModelSpec::lattice(1, n, lambda)).unwrap();
        let s = SpectralData::new(&m.hamiltonian(&m.sample(seed)).unwrap()).unwrap();
        (m, s)
    }

    #[test]
    fn empty_window_gives_zero() {
        let (m, s) = setup(10, 2.0, 0);
        let r = q_correlator(&s, &m, Interval::new(50.0, 60.0).unwrap(), Site::d1(2), Site::d1(5), 0.5).unwrap();
        assert_eq!((r.q_v, r.q0, r.q1, r.q2), (0.0, 0.0, 0.0, 0.0));
        assert!(interpolation_check(&r).unwrap().trivial);
    }

    #[test]
    fn endpoint_correlators_are_projector_traces() {
        let m = Model::new(ModelSpec::continuum(1, 8, 0.25, 3.0)).unwrap();
        let s = SpectralData::new(&m.hamiltonian(&m.sample(3)).unwrap()).unwrap();
        let j = Interval::new(2.0, 30.0).unwrap();
        let (x, a) = (Site::d1(3), Site::d1(4));
        let r = q_correlator(&s, &m, j, x, a, 0.5).unwrap();
        let chi = m.chi(x);
        let p = s.projector_block(j, &chi, &chi);
        let tr_chi: f64 = (0..chi.len()).map(|i| p[(i, i)].re).sum();
        let u = m.bump(a);
        let idx: Vec<usize> = u.iter().map(|&(i, _)| i).collect();
        let p = s.projector_block(j, &idx, &idx);
        let tr_u: f64 = u.iter().enumerate().map(|(k, &(_, w))| w * p[(k, k)].re).sum();
        assert!((r.q2 - tr_chi).abs() < 1e-12);
        assert!((r.q0 - tr_u).abs() < 1e-12);
    }

    #[test]
    fn single_eigenvalue_makes_interpolation_tight() {
        let (m, s) = setup(12, 2.0, 5);
        let e = s.eigenvalues[6];
        let j = Interval::new(e - 1e-12, e + 1e-12).unwrap();
        let r = q_correlator(&s, &m, j, Site::d1(2), Site::d1(8), 0.5).unwrap();
        let c = interpolation_check(&r).unwrap();
        assert!(c.holds && c.slack.abs() < 1e-14 * r.q1.max(1e-300), "{c:?} {r:?}");
    }

    #[test]
    fn averaged_interpolation_holds() {
        let m = Model::new(ModelSpec::lattice(1, 30, 4.0)).unwrap();
        let reports: Vec<CorrelatorReport> = (0..200)
            .map(|k| {
                let s = SpectralData::new(&m.hamiltonian(&m.sample(k)).unwrap()).unwrap();
                q_correlator(&s, &m, Interval::new(1.0, 4.0).unwrap(), Site::d1(10), Site::d1(14), 0.5).unwrap()
            })
            .collect();
        let avg = averaged_interpolation(&reports, 1).unwrap();
        assert!(avg.holds && avg.bound >= avg.mean_q1, "{avg:?}");
    }

    #[test]
    fn dynamical_kernel_basic_cases() {
        let (_, s) = setup(20, 3.0, 2);
        let k = dynamical_kernel(&s, Interval::new(0.0, 3.0).unwrap(), Site::d1(4), Site::d1(9), &[0.0]).unwrap();
        let p = s.projector_block(Interval::new(0.0, 3.0).unwrap(), &[4], &[9]);
        assert!((k.sup - p[(0, 0)].norm()).abs() < 1e-14);
        let k = dynamical_kernel(&s, Interval::all(), Site::d1(7), Site::d1(7), &[0.3, 1.0, 17.0]).unwrap();
        assert!(k.sup <= 1.0 + 1e-12 && k.sup <= k.bound + 1e-12);
    }

    #[test]
    fn fermi_kernel_limits() {
        let (_, s) = setup(15, 2.0, 9);
        assert_eq!(fermi_kernel(&s, -10.0, Site::d1(3), Site::d1(3)).unwrap(), 0.0);
        assert!((fermi_kernel(&s, 100.0, Site::d1(3), Site::d1(3)).unwrap() - 1.0).abs() < 1e-12);
        assert!(fermi_kernel(&s, 100.0, Site::d1(3), Site::d1(4)).unwrap() < 1e-12);
    }

    #[test]
    fn fermi_kernel_decays_at_strong_disorder() {
        // typical decay: log values averaged over realizations
        let d: Vec<f64> = (1..12).map(f64::from).collect();
        let mut logs = vec![0.0; d.len()];
        for seed in 0..8 {
            let (_, s) = setup(40, 10.0, seed);
            let e_f = 0.5 * (s.eigenvalues[19] + s.eigenvalues[20]);
            for (k, l) in logs.iter_mut().enumerate() {
                *l += fermi_kernel(&s, e_f, Site::d1(14), Site::d1(15 + k as i64)).unwrap().ln() / 8.0;
            }
        }
        let fit = line_fit(&d, &logs, None).unwrap();
        assert!(fit.slope < 0.0 && fit.r2 >= 0.9, "{fit:?}");
    }

    #[test]
    fn eigenprojections_decay_at_strong_disorder() {
        let (_, s) = setup(60, 10.0, 8);
        let d: Vec<f64> = (1..10).map(f64::from).collect();
        let mut logs = vec![0.0; d.len()];
        let mid = 20..40;
        for n in mid.clone() {
            let peak = (0..60).max_by(|&a, &b| s.vectors[(a, n)].norm().total_cmp(&s.vectors[(b, n)].norm())).unwrap();
            let dir: i64 = if peak < 30 { 1 } else { -1 };
            for (k, l) in logs.iter_mut().enumerate() {
                let y = Site::d1(peak as i64 + dir * (k as i64 + 1));
                *l += eigenprojection_kernel(&s, n, Site::d1(peak as i64), y).unwrap().ln() / mid.len() as f64;
            }
        }
        let fit = line_fit(&d, &logs, None).unwrap();
        assert!(fit.slope < 0.0 && fit.r2 >= 0.9, "{fit:?}");
    }

    #[test]
    fn correlator_bound_decays_at_strong_disorder() {
        let (_, s) = setup(40, 10.0, 1);
        let d: Vec<f64> = (1..15).map(f64::from).collect();
        let v: Vec<f64> = (1..15)
            .map(|k| dynamical_kernel(&s, Interval::all(), Site::d1(12), Site::d1(12 + k), &[0.0]).unwrap().bound)
            .collect();
        let fit = decay_fit(&d, &v).unwrap();
        assert!(fit.slope < 0.0, "{fit:?}");
    }

    #[test]
    fn rage_escape_behaviour() {
        let (_, s) = setup(40, 0.0, 0);
        let far = rage_probe(&s, Interval::all(), Site::d1(20), &[100.0], 5.0).unwrap();
        assert_eq!(far, vec![0.0]);
        let g: Vec<f64> = [1.0, 4.0, 16.0]
            .iter()
            .map(|&t| rage_probe(&s, Interval::all(), Site::d1(20), &[6.0], t).unwrap()[0])
            .collect();
        assert!(g[0] < g[1] && g[1] < g[2], "{g:?}");
        let (_, s) = setup(40, 10.0, 3);
        let r: Vec<f64> = (1..8).map(f64::from).collect();
        let g = rage_probe(&s, Interval::all(), Site::d1(20), &r, 50.0).unwrap();
        let fit = decay_fit(&r, &g).unwrap();
        assert!(fit.slope < 0.0, "{fit:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn interpolation_holds_pointwise(seed in any::<u64>(), vi in 0usize..3, x in 0i64..30, a in 0i64..30) {
            let v = [0.25, 0.5, 0.75][vi];
            let (m, s) = setup(30, 4.0, seed);
            let r = q_correlator(&s, &m, Interval::new(0.5, 5.0).unwrap(), Site::d1(x), Site::d1(a), v).unwrap();
            let c = interpolation_check(&r).unwrap();
            prop_assert!(c.holds, "{:?} {:?}", c, r);
            prop_assert!(r.q2 <= r.q2 + 1e-15 && r.q_v >= 0.0 && r.q1 >= 0.0);
        }

        #[test]
        fn log_q_is_convex_in_v(seed in any::<u64>(), x in 0i64..20, a in 0i64..20) {
            let m = Model::new(ModelSpec::continuum(1, 20, 0.5, 4.0)).unwrap();
            let s = SpectralData::new(&m.hamiltonian(&m.sample(seed)).unwrap()).unwrap();
            let grid: Vec<f64> = (0..=8).map(|k| 0.25 * k as f64).collect();
            let d = log_convexity_defect(&s, &m, Interval::new(0.0, 8.0).unwrap(), Site::d1(x), Site::d1(a), &grid);
            prop_assert!(d >= -1e-10, "{}", d);
        }

        #[test]
        fn evolution_is_unitary_and_below_bound(seed in any::<u64>(), t in 0.0f64..50.0, x in 0i64..25, y in 0i64..25) {
            let (_, s) = setup(25, 5.0, seed);
            let all: Vec<usize> = (0..25).collect();
            let u = s.function_block(Interval::all(), &all, &[x as usize], |e| Complex64::from_polar(1.0, -t * e));
            prop_assert!((linalg::frobenius(&u) - 1.0).abs() < 1e-12);
            let j = Interval::new(1.0, 6.0).unwrap();
            let k = dynamical_kernel(&s, j, Site::d1(x), Site::d1(y), &[t, 2.0 * t]).unwrap();
            prop_assert!(k.sup <= k.bound + 1e-12);
            let sign = |e: f64| Complex64::new(if e > 3.0 { 1.0 } else { -1.0 }, 0.0);
            let phase = |e: f64| Complex64::from_polar(1.0, e * e);
            let fam: [&dyn Fn(f64) -> Complex64; 2] = [&sign, &phase];
            prop_assert!(test_function_sup(&s, j, Site::d1(x), Site::d1(y), &fam).unwrap() <= k.bound + 1e-12);
        }
    }
}
