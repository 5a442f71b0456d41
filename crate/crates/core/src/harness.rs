//! Declarative experiment runner: JSON configs, dispatch to the numerical
//! modules, sweeps, and CSV/JSON output with an embedded, hashed config.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::birman_schwinger as bs;
use crate::correlators;
use crate::criterion::{self, CriterionOptions, CriterionReport};
use crate::error::{Error, Result};
use crate::hilbert::{self, DissipativeOperator};
use crate::linalg::CMatrix;
use crate::model::{Model, ModelSpec, Site};
use crate::moments::{self, DisorderQuery, Proxy, TailEstimator};
use crate::resolvent::EnergyPoint;
use crate::rng;
use crate::spectra::{self, MsaParams};
use crate::spectral::{Interval, SpectralData};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub model: ModelSpec,
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn one() -> f64 {
    1.0
}

fn default_thresholds() -> usize {
    21
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase", deny_unknown_fields)]
pub enum Experiment {
    Criterion(CriterionParams),
    Decay(DecayParams),
    Tails(TailParams),
    Boole(BooleParams),
    Bs(BsParams),
    Shift(ShiftParams),
    Dos(DosParams),
    Dynamics(DynamicsParams),
    Hilbert(HilbertParams),
    Largedisorder(LargeDisorderParams),
    Msa(MsaRunParams),
    Holder(HolderParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionParams {
    pub l_grid: Vec<f64>,
    pub z: EnergyPoint,
    pub s: f64,
    pub n: usize,
    #[serde(default = "one")]
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayParams {
    pub z: EnergyPoint,
    pub s: f64,
    pub n: usize,
    pub distances: Vec<i64>,
    /// Defaults to a point left of the centre by half the largest distance.
    #[serde(default)]
    pub origin: Option<Site>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailParams {
    pub z: EnergyPoint,
    pub x: Site,
    pub y: Site,
    #[serde(default)]
    pub proxy: Proxy,
    pub t_grid: Vec<f64>,
    pub n: usize,
    #[serde(default)]
    pub estimator: TailEstimator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BooleParams {
    pub window: [f64; 2],
    pub x: Site,
    pub t_grid: Vec<f64>,
    /// Realizations.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsParams {
    pub alpha: Site,
    pub xi_grid: Vec<f64>,
    pub e: f64,
    /// Coupling change `a → b` for the crossing count.
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftParams {
    /// `V = λ U_alpha`.
    pub alpha: Site,
    /// `U = λ U_beta`.
    pub beta: Site,
    pub e: f64,
    pub s: f64,
    pub t_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DosParams {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
    pub n: usize,
    #[serde(default)]
    pub k_points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsParams {
    pub window: [f64; 2],
    pub x: Site,
    pub distances: Vec<i64>,
    pub t_grid: Vec<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HilbertParams {
    pub dim: usize,
    /// `C = delta · 1`; 0 for the self-adjoint case.
    #[serde(default)]
    pub delta: f64,
    pub delta_prime: f64,
    pub v_lo: f64,
    pub v_hi: f64,
    pub points: usize,
    #[serde(default = "default_thresholds")]
    pub thresholds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LargeDisorderParams {
    pub lambda_grid: Vec<f64>,
    pub l: usize,
    pub e_grid: Vec<f64>,
    #[serde(default)]
    pub eps: f64,
    pub s: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MsaRunParams {
    pub l_grid: Vec<f64>,
    pub z: EnergyPoint,
    pub a: f64,
    pub mu: f64,
    pub s: f64,
    pub t: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolderParams {
    pub s: f64,
    pub x: Site,
    pub y: Site,
    #[serde(default)]
    pub proxy: Proxy,
    pub z_grid: Vec<EnergyPoint>,
    pub w_grid: Vec<EnergyPoint>,
    pub n: usize,
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Criterion(_) => "criterion",
            Experiment::Decay(_) => "decay",
            Experiment::Tails(_) => "tails",
            Experiment::Boole(_) => "boole",
            Experiment::Bs(_) => "bs",
            Experiment::Shift(_) => "shift",
            Experiment::Dos(_) => "dos",
            Experiment::Dynamics(_) => "dynamics",
            Experiment::Hilbert(_) => "hilbert",
            Experiment::Largedisorder(_) => "largedisorder",
            Experiment::Msa(_) => "msa",
            Experiment::Holder(_) => "holder",
        }
    }
}

pub const KINDS: [&str; 12] = [
    "criterion", "decay", "tails", "boole", "bs", "shift", "dos", "dynamics", "hilbert", "largedisorder", "msa", "holder",
];

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Canonical single-line JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        config_hash(&self.to_json())
    }

    pub fn kind(&self) -> &'static str {
        self.experiment.kind()
    }
}

pub fn config_hash(json: &str) -> String {
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// One CSV cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Bool(bool),
    Empty,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Float(v) if v.is_finite() => write!(f, "{v:.16e}"),
            Cell::Float(v) => write!(f, "{v}"),
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Bool(v) => write!(f, "{v}"),
            Cell::Empty => Ok(()),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

macro_rules! row {
    ($($x:expr),* $(,)?) => { vec![$(Cell::from($x)),*] };
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        ResultTable {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len(), "row width in table {}", self.name);
        self.rows.push(row);
    }

    pub fn check_schema(&self) -> Result<()> {
        match self.rows.iter().position(|r| r.len() != self.columns.len()) {
            Some(k) => Err(Error::invalid("table", format!("{}: row {k} does not match the schema", self.name))),
            None => Ok(()),
        }
    }

    /// RFC-4180 body: column header and rows.
    pub fn body(&self) -> Result<String> {
        self.check_schema()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|c| c.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// `#` header block followed by the body.
    pub fn to_csv(&self, config: &ExperimentConfig) -> Result<String> {
        let json = config.to_json();
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let mut out = String::new();
        out.push_str(&format!("# locmoment {CODE_VERSION}\n"));
        out.push_str(&format!("# table: {}\n", self.name));
        out.push_str(&format!("# config_hash: {}\n", config_hash(&json)));
        out.push_str(&format!("# timestamp: {stamp}\n"));
        out.push_str(&format!("# config: {json}\n"));
        out.push_str(&self.body()?);
        Ok(out)
    }
}

/// Tables plus a JSON summary of the run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub tables: Vec<ResultTable>,
    pub summary: Value,
}

fn energy(z: EnergyPoint) -> Result<EnergyPoint> {
    EnergyPoint::new(z.e, z.eps)
}

fn interval(w: [f64; 2]) -> Result<Interval> {
    Interval::new(w[0], w[1])
}

fn summary<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("summary serializes")
}

fn dense_potential(model: &Model, site: Site, scale: f64) -> Result<Vec<f64>> {
    let bump = model.bump(site);
    if bump.is_empty() {
        return Err(Error::invalid("site", format!("{site:?} has no bump in the box")));
    }
    let mut v = vec![0.0; model.geometry().n_points()];
    for (q, w) in bump {
        v[q] += scale * w;
    }
    Ok(v)
}

fn with_couplings_zeroed(model: &Model, eta: &[f64], sites: &[Site]) -> Result<Vec<f64>> {
    let mut eta = eta.to_vec();
    for &s in sites {
        let k = model.coupling_index(s).ok_or_else(|| Error::invalid("site", format!("{s:?} is not a coupling site")))?;
        eta[k] = 0.0;
    }
    Ok(eta)
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> CMatrix {
    use rand::Rng;
    let mut r = rng::stream(seed);
    CMatrix::from_fn(rows, cols, |_, _| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
}

/// Dispatch one experiment on the current thread pool.
pub fn execute(config: &ExperimentConfig) -> Result<RunOutput> {
    let spec = &config.model;
    let seed = config.seed;
    match &config.experiment {
        Experiment::Criterion(p) => {
            let z = energy(p.z)?;
            let mut t = ResultTable::new("criterion", &CriterionReport::HEADER);
            let mut reports = Vec::new();
            for &l in &p.l_grid {
                let opts = CriterionOptions { n: p.n, m: p.m, seed };
                let r = criterion::criterion_eval(spec, l, z, p.s, opts)?;
                t.push(row![r.l, r.e, r.eps, r.s, r.n, r.b, r.b_ci_lo, r.b_ci_hi, r.m, r.gamma, r.loc_length, r.pass]);
                reports.push(r);
            }
            Ok(RunOutput { tables: vec![t], summary: summary(&reports) })
        }
        Experiment::Decay(p) => {
            let z = energy(p.z)?;
            let model = Model::new(spec.clone())?;
            let far = p.distances.iter().copied().max().unwrap_or(0);
            let mid = (spec.cells as i64 - 1) / 2;
            let origin = p.origin.unwrap_or(Site([(mid - far / 2).max(0), if spec.dimension == 2 { mid } else { 0 }]));
            let pairs = criterion::ray_pairs(&model, origin, p.distances.iter().copied());
            let fit = criterion::decay_fit(&model, z, p.s, &pairs, p.n, seed)?;
            let mut t = ResultTable::new("decay", &["distance", "moment"]);
            for (d, m) in fit.distances.iter().zip(&fit.moments) {
                t.push(row![*d, *m]);
            }
            Ok(RunOutput { tables: vec![t], summary: summary(&fit) })
        }
        Experiment::Tails(p) => {
            let model = Model::new(spec.clone())?;
            let q = DisorderQuery {
                z: energy(p.z)?,
                x: p.x,
                y: p.y,
                proxy: p.proxy,
                seed,
            };
            let r = moments::weak_l1_tail(&model, &q, p.n, &p.t_grid, p.estimator)?;
            let mut t = ResultTable::new("tails", &["t", "value", "exceedances"]);
            for (k, (&tt, &v)) in r.t_grid.iter().zip(&r.values).enumerate() {
                t.push(row![tt, v, r.exceedances.get(k).copied()]);
            }
            Ok(RunOutput { tables: vec![t], summary: summary(&r) })
        }
        Experiment::Boole(p) => {
            let model = Model::new(spec.clone())?;
            let j = interval(p.window)?;
            let chi = model.chi(p.x);
            if chi.is_empty() {
                return Err(Error::invalid("x", "outside the box"));
            }
            let profiles: Vec<moments::TailProfile> = rng::par_samples(seed, p.n, |sd| -> Result<_> {
                let h = model.hamiltonian(&model.sample(sd))?;
                let s = SpectralData::new(&h)?;
                let mut r = rng::stream(sd ^ 0x9e37_79b9_7f4a_7c15);
                let mut phi = vec![Complex64::new(0.0, 0.0); s.dim()];
                for &q in &chi {
                    use rand::Rng;
                    phi[q] = Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
                }
                let norm = phi.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                phi.iter_mut().for_each(|v| *v /= norm);
                moments::boole_tail(&s, j, p.x, &phi, &p.t_grid)
            })
            .into_iter()
            .collect::<Result<_>>()?;
            let mut t = ResultTable::new("boole", &["sample", "t", "measure", "measure_t", "reference", "relative_error"]);
            let mut worst: f64 = 0.0;
            for (k, r) in profiles.iter().enumerate() {
                let reference = r.reference.unwrap_or(f64::NAN);
                for (&tt, &m) in r.t_grid.iter().zip(&r.values) {
                    let rel = if reference > 0.0 { (m * tt - reference).abs() / reference } else { 0.0 };
                    worst = worst.max(rel);
                    t.push(row![k, tt, m, m * tt, reference, rel]);
                }
            }
            Ok(RunOutput {
                tables: vec![t],
                summary: serde_json::json!({ "max_relative_error": worst, "samples": p.n }),
            })
        }
        Experiment::Bs(p) => {
            let model = Model::new(spec.clone())?;
            let eta = model.sample(seed).eta;
            let h0 = model.hamiltonian_with(&with_couplings_zeroed(&model, &eta, &[p.alpha])?);
            let v = dense_potential(&model, p.alpha, 1.0)?;
            let curves = bs::eigencurves(&h0, &v, &p.xi_grid)?;
            let fh = bs::feynman_hellmann_check(&h0, &v, &curves);
            let crossing = bs::crossing_count(&model, &eta, p.alpha, p.e, p.a, p.b)?;
            let k0 = bs::bs_build(&h0, &v, EnergyPoint::real(p.e))?;
            let mut residual: f64 = 0.0;
            for &xi in &p.xi_grid {
                if let Ok(r) = bs::bs_relation_residual(&k0, xi) {
                    residual = residual.max(r.relative);
                }
            }
            let mut t = ResultTable::new("bs", &["xi", "curve", "energy", "slope"]);
            for (k, &xi) in curves.xi.iter().enumerate() {
                for n in 0..curves.curves() {
                    t.push(row![xi, n, curves.energies[n][k], curves.slopes[n][k]]);
                }
            }
            Ok(RunOutput {
                tables: vec![t],
                summary: serde_json::json!({
                    "feynman_hellmann": summary(&fh),
                    "crossing": summary(&crossing),
                    "relation_residual": residual,
                    "flagged_segments": curves.flagged.iter().filter(|f| **f).count(),
                }),
            })
        }
        Experiment::Shift(p) => {
            let model = Model::new(spec.clone())?;
            let eta = model.sample(seed).eta;
            let h_hat = model.hamiltonian_with(&with_couplings_zeroed(&model, &eta, &[p.alpha, p.beta])?);
            let v = dense_potential(&model, p.alpha, spec.lambda)?;
            let u = dense_potential(&model, p.beta, spec.lambda)?;
            let r = bs::spectral_shift(&h_hat, &v, &u, p.e, p.s, &p.t_grid)?;
            let mut t = ResultTable::new("shift", &["t", "xi"]);
            for (tt, x) in r.rows() {
                t.push(row![tt, x]);
            }
            Ok(RunOutput {
                tables: vec![t],
                summary: serde_json::json!({ "integral": r.integral, "breakpoints": r.breakpoints }),
            })
        }
        Experiment::Dos(p) => {
            if p.bins == 0 || !(p.hi > p.lo) {
                return Err(Error::invalid("bins", "need bins > 0 and hi > lo"));
            }
            let edges: Vec<f64> = (0..=p.bins).map(|k| p.lo + (p.hi - p.lo) * k as f64 / p.bins as f64).collect();
            let r = spectra::dos_estimate(spec, &edges, p.n, seed, p.k_points)?;
            let mut t = ResultTable::new("dos", &["L", "bin_lo", "bin_hi", "mass", "integrated"]);
            let ids = r.integrated();
            for (k, (l, lo, hi, m)) in r.rows().into_iter().enumerate() {
                t.push(row![l, lo, hi, m, ids[k + 1]]);
            }
            Ok(RunOutput {
                tables: vec![t],
                summary: serde_json::json!({ "below": r.below, "above": r.above, "volume": r.volume, "total": r.total() }),
            })
        }
        Experiment::Dynamics(p) => {
            let model = Model::new(spec.clone())?;
            let j = interval(p.window)?;
            let ys: Vec<Site> = p.distances.iter().map(|&d| Site([p.x.0[0] + d, p.x.0[1]])).collect();
            let per: Vec<Vec<correlators::DynamicalKernel>> = rng::par_samples(seed, p.n, |sd| -> Result<_> {
                let s = SpectralData::new(&model.hamiltonian(&model.sample(sd))?)?;
                ys.iter().map(|&y| correlators::dynamical_kernel(&s, j, p.x, y, &p.t_grid)).collect()
            })
            .into_iter()
            .collect::<Result<_>>()?;
            if per.is_empty() {
                return Err(Error::Insufficient("no samples".into()));
            }
            let mut t = ResultTable::new("dynamics", &["distance", "mean_sup", "mean_bound", "max_excess"]);
            let mut bounds = Vec::new();
            for (k, &d) in p.distances.iter().enumerate() {
                let sup = per.iter().map(|r| r[k].sup).sum::<f64>() / per.len() as f64;
                let bound = per.iter().map(|r| r[k].bound).sum::<f64>() / per.len() as f64;
                let excess = per.iter().map(|r| r[k].sup - r[k].bound).fold(f64::NEG_INFINITY, f64::max);
                bounds.push(bound);
                t.push(row![d, sup, bound, excess]);
            }
            let dist: Vec<f64> = p.distances.iter().map(|&d| d as f64).collect();
            let fit = correlators::decay_fit(&dist, &bounds).ok();
            Ok(RunOutput {
                tables: vec![t],
                summary: serde_json::json!({ "bound_rate": fit.map(|f| -f.slope), "fit": fit.map(|f| summary(&f)) }),
            })
        }
        Experiment::Hilbert(p) => {
            if p.dim == 0 || p.points < 2 {
                return Err(Error::invalid("hilbert", "need dim > 0 and at least two points"));
            }
            let b = random_matrix(p.dim, p.dim, rng::child_seed(seed, 0));
            let b = (&b + b.adjoint()) * Complex64::new(0.5, 0.0);
            let op = if p.delta > 0.0 {
                DissipativeOperator::new(b, CMatrix::identity(p.dim, p.dim) * Complex64::new(p.delta, 0.0))?
            } else {
                DissipativeOperator::self_adjoint(b)?
            };
            let m = random_matrix(p.dim, p.dim, rng::child_seed(seed, 1));
            let grid = hilbert::uniform_grid(p.v_lo, p.v_hi, p.points);
            let prof = hilbert::sandwich_profile(&op, &m.adjoint(), &m, &grid, p.delta_prime)?;
            let trace = if op.is_self_adjoint() { Some(hilbert::trace_identity_check(&prof)?) } else { None };
            let conj = hilbert::conjugacy_check(&prof)?;
            let tail = hilbert::weak_l1_sandwich(&prof, &hilbert::upper_decades(&prof, p.thresholds.max(2)))?;
            let mut a = ResultTable::new("hilbert_profile", &["v", "hs_norm", "im_trace_norm"]);
            for (v, h, i) in prof.rows() {
                a.push(row![v, h, i]);
            }
            let mut b = ResultTable::new("hilbert_tail", &["t", "level_measure"]);
            for (&tt, &m) in tail.profile.t_grid.iter().zip(&tail.profile.values) {
                b.push(row![tt, m]);
            }
            Ok(RunOutput {
                tables: vec![a, b],
                summary: serde_json::json!({
                    "trace_identity": trace.map(|t| summary(&t)),
                    "conjugacy_relative": conj.relative,
                    "conjugacy_max": conj.max_deviation,
                    "weak_constant": tail.constant,
                    "tail_slope": tail.profile.slope,
                }),
            })
        }
        Experiment::Largedisorder(p) => {
            let zs: Vec<EnergyPoint> = p.e_grid.iter().map(|&e| EnergyPoint::new(e, p.eps)).collect::<Result<_>>()?;
            let r = spectra::large_disorder_scan(spec, &p.lambda_grid, p.l, &zs, p.s, p.n, seed)?;
            let mut t = ResultTable::new("largedisorder", &["lambda", "E", "moment", "ci_lo", "ci_hi", "pass"]);
            for &(l, e, m, lo, hi, pass) in &r.rows {
                t.push(row![l, e, m, lo, hi, pass]);
            }
            Ok(RunOutput {
                tables: vec![t],
                summary: serde_json::json!({ "first_pass": r.first_pass, "trend": r.trend }),
            })
        }
        Experiment::Msa(p) => {
            let params = MsaParams { a: p.a, mu: p.mu, s: p.s, t: p.t };
            let r = spectra::msa_bridge(spec, &p.l_grid, energy(p.z)?, params, p.n, seed)?;
            let mut t = ResultTable::new(
                "msa",
                &["L", "N", "bad", "p_bad", "ci_lo", "ci_hi", "moment_s", "moment_t", "combined", "beats_direct"],
            );
            for r in &r.rows {
                t.push(row![r.l, r.n, r.bad, r.p_bad, r.ci_lo, r.ci_hi, r.moment_s, r.moment_t, r.combined, r.beats_direct]);
            }
            Ok(RunOutput {
                tables: vec![t],
                summary: serde_json::json!({ "xi_hat": r.xi_hat, "admissible": r.admissible }),
            })
        }
        Experiment::Holder(p) => {
            let model = Model::new(spec.clone())?;
            let check = |g: &[EnergyPoint]| g.iter().map(|&z| energy(z)).collect::<Result<Vec<_>>>();
            let (zs, ws) = (check(&p.z_grid)?, check(&p.w_grid)?);
            let q = DisorderQuery {
                z: zs.first().copied().ok_or_else(|| Error::invalid("z_grid", "empty"))?,
                x: p.x,
                y: p.y,
                proxy: p.proxy,
                seed,
            };
            let r = moments::holder_scan(&model, p.s, &zs, &ws, &q, p.n)?;
            let mut t = ResultTable::new("holder", &["E_z", "eps_z", "E_w", "eps_w", "distance", "difference", "ratio"]);
            for h in &r.rows {
                t.push(row![h.z.e, h.z.eps, h.w.e, h.w.eps, h.distance, h.difference, h.ratio]);
            }
            Ok(RunOutput {
                tables: vec![t],
                summary: serde_json::json!({ "c_hat": r.c_hat, "c_hat_doubled": r.c_hat_doubled, "stable": r.stable }),
            })
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))
}

/// Execute on a pool of `config.workers` threads.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    pool(config.workers)?.install(|| execute(config))
}

/// Run and write `<table>.csv` per table plus `<kind>.json` into the output
/// directory.
pub fn run_and_write(config: &ExperimentConfig) -> Result<(RunOutput, Vec<PathBuf>)> {
    let out = run(config)?;
    let files = write_output(config, &out, &config.output)?;
    Ok((out, files))
}

pub fn write_output(config: &ExperimentConfig, out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for t in &out.tables {
        let path = dir.join(format!("{}.csv", t.name));
        fs::write(&path, t.to_csv(config)?)?;
        files.push(path);
    }
    let doc = serde_json::json!({
        "config": serde_json::to_value(config)?,
        "config_hash": config.hash(),
        "code_version": CODE_VERSION,
        "summary": out.summary,
    });
    let path = dir.join(format!("{}.json", config.kind()));
    fs::write(&path, serde_json::to_string_pretty(&doc)?)?;
    files.push(path);
    Ok(files)
}

/// Leaf at a dotted path of the config's JSON form.
fn leaf<'a>(v: &'a mut Value, axis: &str) -> Result<&'a mut Value> {
    let mut cur = v;
    for key in axis.split('.') {
        cur = match cur {
            Value::Object(map) => map.get_mut(key),
            Value::Array(items) => key.parse::<usize>().ok().and_then(move |k| items.get_mut(k)),
            _ => None,
        }
        .ok_or_else(|| Error::invalid("axis", format!("{axis}: no field {key}")))?;
    }
    Ok(cur)
}

/// Config with the numeric leaf `axis` set to `value`.
pub fn with_axis(config: &ExperimentConfig, axis: &str, value: f64) -> Result<ExperimentConfig> {
    let mut v = serde_json::to_value(config)?;
    let slot = leaf(&mut v, axis)?;
    *slot = match &*slot {
        Value::Number(n) if n.is_u64() && value >= 0.0 && value.fract() == 0.0 => Value::from(value as u64),
        Value::Number(n) if n.is_i64() && value.fract() == 0.0 => Value::from(value as i64),
        Value::Number(n) if n.is_f64() => Value::from(value),
        Value::Number(_) => return Err(Error::invalid("axis", format!("{axis} takes integers, got {value}"))),
        _ => return Err(Error::invalid("axis", format!("{axis} is not a numeric leaf"))),
    };
    Ok(serde_json::from_value(v)?)
}

/// One run per value with seed `child_seed(seed, index)`; rows tagged with the
/// axis value in a leading column.
pub fn sweep(base: &ExperimentConfig, axis: &str, values: &[f64]) -> Result<Vec<ResultTable>> {
    let mut probe = serde_json::to_value(base)?;
    if !leaf(&mut probe, axis)?.is_number() {
        return Err(Error::invalid("axis", format!("{axis} is not a numeric leaf")));
    }
    let mut merged: Vec<ResultTable> = Vec::new();
    for (k, &value) in values.iter().enumerate() {
        let mut cfg = with_axis(base, axis, value)?;
        cfg.seed = rng::child_seed(base.seed, k as u64);
        let out = run(&cfg)?;
        for t in out.tables {
            let slot = match merged.iter().position(|m| m.name == t.name) {
                Some(i) => i,
                None => {
                    let mut cols = vec![axis.to_string()];
                    cols.extend(t.columns.iter().cloned());
                    merged.push(ResultTable {
                        name: t.name.clone(),
                        columns: cols,
                        rows: Vec::new(),
                    });
                    merged.len() - 1
                }
            };
            for r in t.rows {
                let mut row = vec![Cell::Float(value)];
                row.extend(r);
                merged[slot].rows.push(row);
            }
        }
    }
    if merged.is_empty() {
        merged.push(ResultTable::new(base.kind(), &[axis]));
    }
    Ok(merged)
}

/// Per-file outcome of [`verify_dir`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub path: PathBuf,
    pub ok: bool,
    pub message: String,
}

fn verify_csv(text: &str) -> std::result::Result<(), String> {
    let mut hash = None;
    let mut config = None;
    let mut body = String::new();
    for line in text.split_inclusive('\n') {
        if let Some(h) = line.strip_prefix("# config_hash: ") {
            hash = Some(h.trim().to_string());
        } else if let Some(c) = line.strip_prefix("# config: ") {
            config = Some(c.trim_end_matches('\n').to_string());
        } else if !line.starts_with('#') {
            body.push_str(line);
        }
    }
    let (hash, config) = match (hash, config) {
        (Some(h), Some(c)) => (h, c),
        _ => return Err("missing config header".into()),
    };
    if config_hash(&config) != hash {
        return Err("config hash mismatch".into());
    }
    let parsed = ExperimentConfig::from_json(&config).map_err(|e| format!("embedded config: {e}"))?;
    if parsed.to_json() != config {
        return Err("embedded config is not canonical".into());
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(body.as_bytes());
    let width = rdr.headers().map_err(|e| e.to_string())?.len();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        if rec.len() != width {
            return Err(format!("row {k} has {} fields, schema has {width}", rec.len()));
        }
    }
    Ok(())
}

fn verify_json(text: &str) -> std::result::Result<(), String> {
    let doc: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let config: ExperimentConfig = serde_json::from_value(doc["config"].clone()).map_err(|e| e.to_string())?;
    if doc["config_hash"].as_str() != Some(config.hash().as_str()) {
        return Err("config hash mismatch".into());
    }
    Ok(())
}

/// Re-hash the embedded config of every CSV and JSON file in `dir`.
pub fn verify_dir(dir: &Path) -> Result<Vec<Verification>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "json")))
        .collect();
    entries.sort();
    let mut out = Vec::new();
    for path in entries {
        let text = fs::read_to_string(&path)?;
        let res = if path.extension().and_then(|e| e.to_str()) == Some("csv") { verify_csv(&text) } else { verify_json(&text) };
        out.push(Verification {
            path,
            ok: res.is_ok(),
            message: res.err().unwrap_or_else(|| "ok".into()),
        });
    }
    Ok(out)
}

/// Body of a CSV file: everything but the `#` header lines.
pub fn csv_body(text: &str) -> String {
    text.split_inclusive('\n').filter(|l| !l.starts_with('#')).collect()
}
