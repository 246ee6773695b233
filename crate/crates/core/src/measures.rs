//! Bernoulli measures on the shift: entropy, Monte-Carlo Lyapunov
//! functionals, Lyapunov dimension and local dimensions of the push-forward.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::EvalError;
use crate::ifs::IfsSpec;
use crate::pressure::{bisect_decreasing, entropy_bound, DimensionEstimate, PressureError};
use crate::sampling;
use crate::smallmat::{log_svf, singular_values};
use crate::symbolic::Word;

/// Precision of Π(σⁿi) when sampling base points.
const BASE_POINT_PRECISION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("probabilities must be non-negative and sum to 1 (sum = {0})")]
    BadProbabilities(f64),
    #[error("measure has {got} probabilities, system has {expected} maps")]
    AlphabetMismatch { expected: usize, got: usize },
    #[error("orbit length and sample count must be at least 1")]
    EmptySample,
    #[error("singular Jacobian in sample {0}")]
    Singular(usize),
    #[error("radii must be strictly decreasing, positive, with at least 3 values")]
    BadRadii,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Pressure(#[from] PressureError),
}

/// Product measure on Σ from a probability vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BernoulliMeasure {
    probabilities: Vec<f64>,
}

impl BernoulliMeasure {
    pub fn new(probabilities: Vec<f64>) -> Result<Self, MeasureError> {
        let sum: f64 = probabilities.iter().sum();
        if probabilities.len() < 2 || probabilities.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) || (sum - 1.0).abs() > 1e-12 {
            return Err(MeasureError::BadProbabilities(sum));
        }
        Ok(BernoulliMeasure { probabilities })
    }

    pub fn uniform(alphabet: usize) -> Self {
        BernoulliMeasure {
            probabilities: vec![1.0 / alphabet as f64; alphabet],
        }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn alphabet_size(&self) -> usize {
        self.probabilities.len()
    }

    fn sampler(&self) -> WeightedIndex<f64> {
        WeightedIndex::new(&self.probabilities).expect("validated weights")
    }

    fn check_alphabet(&self, f: &IfsSpec) -> Result<(), MeasureError> {
        if self.alphabet_size() != f.alphabet_size() {
            return Err(MeasureError::AlphabetMismatch {
                expected: f.alphabet_size(),
                got: self.alphabet_size(),
            });
        }
        Ok(())
    }
}

/// h_μ(σ) = −Σ pᵢ log pᵢ in nats, with 0·log 0 = 0.
pub fn entropy(mu: &BernoulliMeasure) -> f64 {
    -mu.probabilities.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

fn random_word(rng: &mut ChaCha8Rng, sampler: &WeightedIndex<f64>, len: usize) -> Word {
    Word::new((0..len).map(|_| sampler.sample(rng) as u8 + 1).collect())
}

/// Monte-Carlo estimate of 𝒢ˢ*(μ).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovEstimate {
    pub s: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub n_samples: usize,
    pub seed: u64,
}

/// Log singular values of D_{Π(σⁿi)} f_{i|n} for a fixed set of μ-random
/// sequences. Reusing the same draws for every s keeps the estimate
/// monotone in s.
#[derive(Debug, Clone)]
pub struct LyapunovSamples {
    n: usize,
    dim: usize,
    seed: u64,
    log_spectra: Vec<f64>,
}

impl LyapunovSamples {
    pub fn draw(f: &IfsSpec, mu: &BernoulliMeasure, n: usize, n_samples: usize, seed: u64) -> Result<Self, MeasureError> {
        mu.check_alphabet(f)?;
        if n == 0 || n_samples == 0 {
            return Err(MeasureError::EmptySample);
        }
        let sampler = mu.sampler();
        let affine = f.is_affine();
        let tail = if affine {
            0
        } else {
            f.depth_for_precision(BASE_POINT_PRECISION)
        };
        let center = f.domain().center();
        let per_sample: Vec<Vec<f64>> = (0..n_samples)
            .into_par_iter()
            .map(|idx| -> Result<Vec<f64>, MeasureError> {
                let mut rng = sampling::stream(seed, idx as u64);
                let head = random_word(&mut rng, &sampler, n);
                let base = if affine {
                    center.clone()
                } else {
                    f.apply_word(&random_word(&mut rng, &sampler, tail), &center)?
                };
                let sv = singular_values(&f.compose_jacobian(&head, &base)?);
                if sv.values().last().is_some_and(|v| !(*v > 0.0)) {
                    return Err(MeasureError::Singular(idx));
                }
                Ok(sv.log_values())
            })
            .collect::<Result<_, _>>()?;
        Ok(LyapunovSamples {
            n,
            dim: f.dim(),
            seed,
            log_spectra: per_sample.into_iter().flatten().collect(),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.log_spectra.len() / self.dim
    }

    /// Mean and standard error of (1/n) log φˢ over the stored draws.
    pub fn functional(&self, s: f64) -> LyapunovEstimate {
        assert!(s >= 0.0, "s must be non-negative");
        let values: Vec<f64> = self
            .log_spectra
            .chunks(self.dim)
            .map(|lsv| log_svf(lsv, s) / self.n as f64)
            .collect();
        let count = values.len();
        let (mean, stderr) = if values.iter().all(|v| v.to_bits() == values[0].to_bits()) {
            (values[0], 0.0)
        } else {
            let mean = values.iter().sum::<f64>() / count as f64;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count as f64 - 1.0);
            (mean, (var / count as f64).sqrt())
        };
        LyapunovEstimate {
            s,
            mean,
            stderr,
            n: self.n,
            n_samples: count,
            seed: self.seed,
        }
    }
}

pub fn lyapunov_functional(
    f: &IfsSpec,
    mu: &BernoulliMeasure,
    s: f64,
    n: usize,
    n_samples: usize,
    seed: u64,
) -> Result<LyapunovEstimate, MeasureError> {
    Ok(LyapunovSamples::draw(f, mu, n, n_samples, seed)?.functional(s))
}

/// The s solving h_μ + 𝒢ˢ*(μ) = 0, by bisection on common random numbers.
pub fn lyapunov_dimension(
    f: &IfsSpec,
    mu: &BernoulliMeasure,
    n: usize,
    n_samples: usize,
    seed: u64,
    tol: f64,
) -> Result<DimensionEstimate, MeasureError> {
    let samples = LyapunovSamples::draw(f, mu, n, n_samples, seed)?;
    lyapunov_dimension_from(f, mu, &samples, tol)
}

pub fn lyapunov_dimension_from(
    f: &IfsSpec,
    mu: &BernoulliMeasure,
    samples: &LyapunovSamples,
    tol: f64,
) -> Result<DimensionEstimate, MeasureError> {
    let h = entropy(mu);
    let certified = f.is_affine();
    if h == 0.0 {
        return Ok(DimensionEstimate {
            s_star: 0.0,
            bracket: (0.0, 0.0),
            n: samples.n,
            tolerance: tol,
            certified,
        });
    }
    let upper = f.dim() as f64 + entropy_bound(f);
    let (lo, hi, _) = bisect_decreasing(|s| Ok(h + samples.functional(s).mean), 0.0, upper, tol)?;
    Ok(DimensionEstimate {
        s_star: 0.5 * (lo + hi),
        bracket: (lo, hi),
        n: samples.n,
        tolerance: tol,
        certified,
    })
}

/// n_points draws from Π*μ.
pub fn sample_pushforward(f: &IfsSpec, mu: &BernoulliMeasure, n_points: usize, seed: u64) -> Result<Vec<Vec<f64>>, MeasureError> {
    mu.check_alphabet(f)?;
    let sampler = mu.sampler();
    let depth = f.depth_for_precision(BASE_POINT_PRECISION);
    let center = f.domain().center();
    (0..n_points)
        .into_par_iter()
        .map(|idx| {
            let mut rng = sampling::stream(seed, idx as u64);
            Ok(f.apply_word(&random_word(&mut rng, &sampler, depth), &center)?)
        })
        .collect()
}

/// Radii 2^{-4}, …, 2^{-10}.
pub fn default_radii() -> Vec<f64> {
    (4..=10).map(|k| 2f64.powi(-k)).collect()
}

/// Least-squares slope and intercept of y against x.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    (slope, my - slope * mx)
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalDimensionSummary {
    pub radii: Vec<f64>,
    pub n_points: usize,
    pub n_centres: usize,
    pub slopes: Vec<f64>,
    pub q10: f64,
    pub median: f64,
    pub q90: f64,
    /// Every sampled point coincides (atomic measure).
    pub degenerate: bool,
}

/// Number of sample points used as ball centres.
pub const LOCAL_DIM_CENTRES: usize = 1000;

/// Slopes of log μ(B(x, r)) against log r over `radii`, estimated from
/// empirical ball masses of a Π*μ sample.
pub fn pushforward_local_dimension(
    f: &IfsSpec,
    mu: &BernoulliMeasure,
    n_points: usize,
    radii: &[f64],
    seed: u64,
) -> Result<LocalDimensionSummary, MeasureError> {
    if radii.len() < 3 || radii.iter().any(|r| !(*r > 0.0)) || radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(MeasureError::BadRadii);
    }
    if n_points == 0 {
        return Err(MeasureError::EmptySample);
    }
    let mut points = sample_pushforward(f, mu, n_points, seed)?;
    let degenerate = points.iter().all(|p| p == &points[0]);
    let centres: Vec<Vec<f64>> = points.iter().take(LOCAL_DIM_CENTRES).cloned().collect();
    points.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let firsts: Vec<f64> = points.iter().map(|p| p[0]).collect();
    let r_max = radii[0];
    let log_r: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let total = n_points as f64;
    let mut slopes: Vec<f64> = centres
        .par_iter()
        .map(|c| {
            let start = firsts.partition_point(|x| *x < c[0] - r_max);
            let end = firsts.partition_point(|x| *x <= c[0] + r_max);
            let mut counts = vec![0usize; radii.len()];
            for p in &points[start..end] {
                let dist = p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                for (k, r) in radii.iter().enumerate() {
                    if dist <= *r {
                        counts[k] += 1;
                    } else {
                        break;
                    }
                }
            }
            let log_mass: Vec<f64> = counts.iter().map(|&c| (c as f64 / total).ln()).collect();
            fit_line(&log_r, &log_mass).0
        })
        .collect();
    let mut sorted = slopes.clone();
    sorted.sort_by(f64::total_cmp);
    if degenerate {
        slopes.iter_mut().for_each(|s| *s = 0.0);
        sorted.iter_mut().for_each(|s| *s = 0.0);
    }
    Ok(LocalDimensionSummary {
        radii: radii.to_vec(),
        n_points,
        n_centres: centres.len(),
        q10: quantile(&sorted, 0.1),
        median: quantile(&sorted, 0.5),
        q90: quantile(&sorted, 0.9),
        slopes,
        degenerate,
    })
}
