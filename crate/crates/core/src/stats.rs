//! Estimators and regression helpers shared by the Monte-Carlo modules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Number of groups used by the median-of-means estimator.
pub const MOM_GROUPS: usize = 16;
/// Bootstrap resamples for percentile intervals.
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    PlainMean,
    MedianOfMeans,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::PlainMean => "plain-mean",
            Estimator::MedianOfMeans => "median-of-means",
        }
    }

    pub fn apply(self, values: &[f64]) -> f64 {
        match self {
            Estimator::PlainMean => mean(values),
            Estimator::MedianOfMeans => median_of_means(values, MOM_GROUPS),
        }
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Median of the means of `groups` contiguous blocks (canonical order).
pub fn median_of_means(v: &[f64], groups: usize) -> f64 {
    let n = v.len();
    let g = groups.min(n).max(1);
    let means: Vec<f64> = (0..g)
        .map(|k| mean(&v[k * n / g..(k + 1) * n / g]))
        .collect();
    median(&means)
}

/// Percentile bootstrap 95% interval of `stat`, widened to contain the point
/// estimate.
pub fn bootstrap_ci(values: &[f64], stat: impl Fn(&[f64]) -> f64, seed: u64) -> (f64, f64) {
    let n = values.len();
    let point = stat(values);
    if n < 2 {
        return (point, point);
    }
    let mut r = rng::stream(seed);
    let mut buf = vec![0.0; n];
    let mut reps: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = values[r.random_range(0..n)];
            }
            stat(&buf)
        })
        .collect();
    reps.sort_by(f64::total_cmp);
    let lo = reps[(0.025 * BOOTSTRAP_RESAMPLES as f64) as usize];
    let hi = reps[(0.975 * BOOTSTRAP_RESAMPLES as f64) as usize - 1];
    (lo.min(point), hi.max(point))
}

/// Kolmogorov-Smirnov distance between the empirical CDF and `cdf`.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation and the one-sided p-value for a decreasing
/// trend (exact permutation for n ≤ 8, t approximation beyond).
pub fn spearman_decreasing(x: &[f64], y: &[f64]) -> (f64, f64) {
    let rx = ranks(x);
    let ry = ranks(y);
    let rho = pearson(&rx, &ry);
    let n = x.len();
    if n < 3 {
        return (rho, 1.0);
    }
    let p = if n <= 8 {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut total = 0usize;
        let mut hits = 0usize;
        permute(&mut perm, 0, &mut |p| {
            let ryp: Vec<f64> = p.iter().map(|&i| ry[i]).collect();
            total += 1;
            if pearson(&rx, &ryp) <= rho + 1e-12 {
                hits += 1;
            }
        });
        hits as f64 / total as f64
    } else {
        let t = rho * ((n as f64 - 2.0) / (1.0 - rho * rho).max(1e-300)).sqrt();
        normal_cdf(t)
    };
    (rho, p)
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

// Numerical Recipes erfc (relative error < 1.2e-7).
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// Weighted least-squares line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub r2: f64,
}

/// Fit `y = intercept + slope x` with optional weights (inverse variances).
pub fn line_fit(x: &[f64], y: &[f64], w: Option<&[f64]>) -> Result<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::Insufficient(format!("line fit needs >= 2 points, got {n}")));
    }
    let ones = vec![1.0; n];
    let w = w.unwrap_or(&ones);
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, w)| a * w).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, w)| a * w).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * dy;
        syy += w[i] * dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::Insufficient("line fit with a single distinct abscissa".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = (0..n)
        .map(|i| w[i] * (y[i] - intercept - slope * x[i]).powi(2))
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ssr / syy } else { 1.0 };
    let dof = (n as f64 - 2.0).max(1.0);
    // weights are relative: scale by the residual variance
    let sigma2 = ssr / dof;
    let slope_se = (sigma2 / sxx).sqrt();
    let intercept_se = (sigma2 * (1.0 / sw + mx * mx / sxx)).sqrt();
    Ok(LineFit {
        slope,
        intercept,
        slope_se,
        intercept_se,
        r2,
    })
}

/// Two-sided 95% interval for a binomial proportion; the rule of three is
/// used when no events were observed.
pub fn proportion_ci(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    if k == 0 {
        return (0.0, (3.0 / n as f64).min(1.0));
    }
    let z = 1.959963984540054;
    let nf = n as f64;
    let p = k as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let centre = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}
