//! Truncated sub-additive pressure Pₙ(s) and the level-n singularity
//! dimension, with closed-form oracles for self-similar and diagonal affine
//! systems.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::EvalError;
use crate::ifs::IfsSpec;
use crate::smallmat::{log_svf, singular_values, Mat};
use crate::symbolic::{checked_word_count, sample_codings, SymbolicError, Word, DEFAULT_WORD_BUDGET};

/// Default number of cylinder representatives for non-affine systems.
pub const DEFAULT_SUP_SAMPLES: usize = 8;
/// Default bisection tolerance in s.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Cap on ℓⁿ·k when picking a default level.
pub const DEFAULT_LEVEL_CAP: u64 = 1 << 20;

/// Suffix subtrees of at least this many words form the parallel chunks.
const CHUNK_WORDS: u64 = 256;
/// Precision of the coding-map points used as cylinder representatives.
const REPRESENTATIVE_PRECISION: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PressureError {
    #[error(transparent)]
    Budget(#[from] SymbolicError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("singular Jacobian along word {0}")]
    Singular(String),
    #[error("s must be non-negative, got {0}")]
    NegativeExponent(f64),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("level must be at least 1")]
    ZeroLevel,
    #[error("P_n(0) = {0} < 0; pressure evaluation is corrupted")]
    NegativeAtZero(f64),
    #[error("pressure is not decreasing: P({s1}) = {p1}, P({s2}) = {p2}")]
    NonMonotone { s1: f64, p1: f64, s2: f64, p2: f64 },
    #[error("dimension estimate {s_star} exceeds the bound log(l)/log(1/theta) = {bound}")]
    BoundViolated { s_star: f64, bound: f64 },
    #[error("no sign change of the target function on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },
}

/// How cylinder suprema were evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupStrategy {
    AffineExact,
    SampleKPoints,
}

/// Pₙ on a grid of s values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PressureCurve {
    pub n: usize,
    pub s_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub sup_strategy: SupStrategy,
    pub certified: bool,
}

impl PressureCurve {
    /// CSV with columns s, P_n, certified.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,P_n,certified\n");
        for (s, p) in self.s_values.iter().zip(&self.p_values) {
            out.push_str(&format!("{s},{p},{}\n", self.certified));
        }
        out
    }
}

/// Root of a decreasing function located by bisection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionEstimate {
    pub s_star: f64,
    pub bracket: (f64, f64),
    pub n: usize,
    pub tolerance: f64,
    pub certified: bool,
}

/// Bisection for the zero of a decreasing `g` on [lo, hi] with g(lo) > 0.
/// Every evaluation is returned so callers can audit monotonicity.
pub fn bisect_decreasing<F>(mut g: F, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64, Vec<(f64, f64)>), PressureError>
where
    F: FnMut(f64) -> Result<f64, PressureError>,
{
    if !(tol > 0.0) {
        return Err(PressureError::BadTolerance(tol));
    }
    let (mut lo, mut hi) = (lo, hi);
    let g_lo = g(lo)?;
    let g_hi = g(hi)?;
    let mut evals = vec![(lo, g_lo), (hi, g_hi)];
    if !(g_lo > 0.0) || g_hi > 0.0 {
        return Err(PressureError::NoSignChange { lo, hi });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let v = g(mid)?;
        evals.push((mid, v));
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo, hi, evals))
}

fn check_monotone(mut evals: Vec<(f64, f64)>) -> Result<(), PressureError> {
    evals.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in evals.windows(2) {
        let ((s1, p1), (s2, p2)) = (w[0], w[1]);
        if s2 > s1 && p2 > p1 + 1e-12 * p1.abs().max(1.0) {
            return Err(PressureError::NonMonotone { s1, p1, s2, p2 });
        }
    }
    Ok(())
}

/// Log singular values of D_y f_I for every I ∈ Σₙ and every sampled base
/// point y, computed once so Pₙ(s) is cheap for many s.
#[derive(Debug, Clone)]
pub struct LevelSpectra {
    n: usize,
    dim: usize,
    samples: usize,
    /// chunk → words × samples × dim log singular values
    chunks: Vec<Vec<f64>>,
    strategy: SupStrategy,
}

struct Walker<'a> {
    f: &'a IfsSpec,
    affine: bool,
    dim: usize,
}

impl Walker<'_> {
    /// Prepends every symbol to the suffix state until depth `remaining`
    /// is exhausted, pushing log-spectra of the finished words.
    fn descend(
        &self,
        remaining: usize,
        points: &[Vec<f64>],
        mats: &[Mat],
        word: &mut Vec<u8>,
        out: &mut Vec<f64>,
    ) -> Result<(), PressureError> {
        if remaining == 0 {
            for m in mats {
                let sv = singular_values(m);
                if sv.values().last().is_some_and(|v| !(*v > 0.0) || !v.is_finite()) {
                    let w: Vec<u8> = word.iter().rev().copied().collect();
                    return Err(PressureError::Singular(Word::new(w).to_string()));
                }
                out.extend(sv.log_values());
            }
            return Ok(());
        }
        for j in 0..self.f.alphabet_size() {
            let (next_points, next_mats) = self.step(j, points, mats)?;
            word.push(j as u8 + 1);
            self.descend(remaining - 1, &next_points, &next_mats, word, out)?;
            word.pop();
        }
        Ok(())
    }

    fn step(&self, j: usize, points: &[Vec<f64>], mats: &[Mat]) -> Result<(Vec<Vec<f64>>, Vec<Mat>), PressureError> {
        let mut next_points = Vec::with_capacity(points.len());
        let mut next_mats = Vec::with_capacity(mats.len());
        for (p, m) in points.iter().zip(mats) {
            let jac = self.f.jacobian(j, p)?;
            next_mats.push(&jac * m);
            if self.affine {
                next_points.push(p.clone());
            } else {
                let mut q = vec![0.0; self.dim];
                self.f.apply_into(j, p, &mut q)?;
                next_points.push(q);
            }
        }
        Ok((next_points, next_mats))
    }
}

impl LevelSpectra {
    /// Builds the table. Affine systems use one representative (exact);
    /// others use `samples` attractor points Π(i) for eventually periodic i.
    pub fn build(f: &IfsSpec, n: usize, samples: usize, budget: u64) -> Result<Self, PressureError> {
        if n == 0 {
            return Err(PressureError::ZeroLevel);
        }
        let ell = f.alphabet_size();
        let affine = f.is_affine();
        let k = if affine { 1 } else { samples.max(1) };
        checked_word_count(n, ell, budget)?;
        let base: Vec<Vec<f64>> = if affine {
            vec![f.domain().center()]
        } else {
            sample_codings(ell, k)
                .iter()
                .map(|c| f.code_point_precise(c, REPRESENTATIVE_PRECISION).map(|p| p.point))
                .collect::<Result<_, _>>()?
        };
        let k = base.len();
        // fixed suffix depth, independent of the worker count
        let mut m = 0;
        while m < n && (ell as u64).pow(m as u32) < CHUNK_WORDS {
            m += 1;
        }
        let walker = Walker { f, affine, dim: f.dim() };
        let n_chunks = (ell as u64).pow(m as u32);
        let chunks = (0..n_chunks)
            .into_par_iter()
            .map(|c| -> Result<Vec<f64>, PressureError> {
                // innermost symbols first: the suffix word read right to left
                let suffix = Word::from_index(c, m, ell);
                let mut points = base.clone();
                let mut mats = vec![Mat::identity(f.dim()); k];
                let mut word = Vec::with_capacity(n);
                for &s in suffix.symbols().iter().rev() {
                    let (p, q) = walker.step(s as usize - 1, &points, &mats)?;
                    points = p;
                    mats = q;
                    word.push(s);
                }
                let leaves = (ell as u64).pow((n - m) as u32) as usize;
                let mut out = Vec::with_capacity(leaves * k * f.dim());
                walker.descend(n - m, &points, &mats, &mut word, &mut out)?;
                Ok(out)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(LevelSpectra {
            n,
            dim: f.dim(),
            samples: k,
            chunks,
            strategy: if affine {
                SupStrategy::AffineExact
            } else {
                SupStrategy::SampleKPoints
            },
        })
    }

    pub fn level(&self) -> usize {
        self.n
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn strategy(&self) -> SupStrategy {
        self.strategy
    }

    pub fn certified(&self) -> bool {
        self.strategy == SupStrategy::AffineExact
    }

    /// Pₙ(s), summed with a max-shifted log-sum-exp per chunk and a fixed
    /// pairwise combination of chunks.
    pub fn pressure(&self, s: f64) -> Result<f64, PressureError> {
        if !(s >= 0.0) {
            return Err(PressureError::NegativeExponent(s));
        }
        let per_word = self.samples * self.dim;
        let partials: Vec<(f64, f64)> = self
            .chunks
            .par_iter()
            .map(|chunk| {
                let sups: Vec<f64> = chunk
                    .chunks(per_word)
                    .map(|word| {
                        word.chunks(self.dim)
                            .map(|lsv| log_svf(lsv, s))
                            .fold(f64::NEG_INFINITY, f64::max)
                    })
                    .collect();
                let max = sups.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = sups.iter().map(|v| (v - max).exp()).sum();
                (max, sum)
            })
            .collect();
        let (max, sum) = pairwise(&partials);
        Ok((max + sum.ln()) / self.n as f64)
    }

    pub fn curve(&self, s_values: &[f64]) -> Result<PressureCurve, PressureError> {
        let p_values = s_values.iter().map(|&s| self.pressure(s)).collect::<Result<_, _>>()?;
        Ok(PressureCurve {
            n: self.n,
            s_values: s_values.to_vec(),
            p_values,
            sup_strategy: self.strategy,
            certified: self.certified(),
        })
    }
}

fn combine(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    if a.0 == f64::NEG_INFINITY {
        return b;
    }
    if b.0 == f64::NEG_INFINITY {
        return a;
    }
    let m = a.0.max(b.0);
    (m, a.1 * (a.0 - m).exp() + b.1 * (b.0 - m).exp())
}

fn pairwise(xs: &[(f64, f64)]) -> (f64, f64) {
    match xs.len() {
        0 => (f64::NEG_INFINITY, 0.0),
        1 => xs[0],
        len => {
            let (l, r) = xs.split_at(len / 2);
            combine(pairwise(l), pairwise(r))
        }
    }
}

/// Pₙ(s) with `sup_samples` representatives per cylinder.
pub fn pressure_n(f: &IfsSpec, s: f64, n: usize, sup_samples: usize) -> Result<f64, PressureError> {
    LevelSpectra::build(f, n, sup_samples, DEFAULT_WORD_BUDGET)?.pressure(s)
}

/// Largest n with ℓⁿ·k ≤ 2²⁰ (k = 1 for affine systems).
pub fn default_level(f: &IfsSpec, sup_samples: usize) -> usize {
    let k = if f.is_affine() { 1 } else { sup_samples.max(1) as u64 };
    let ell = f.alphabet_size() as u64;
    let mut n = 1;
    while ell.pow(n as u32 + 1) * k <= DEFAULT_LEVEL_CAP {
        n += 1;
    }
    n
}

/// The bound log ℓ / log(1/θ) on the singularity dimension.
pub fn entropy_bound(f: &IfsSpec) -> f64 {
    (f.alphabet_size() as f64).ln() / (1.0 / f.contraction().theta_upper).ln()
}

/// Level-n singularity dimension sₙ with default sampling.
pub fn singularity_dimension(f: &IfsSpec, n: usize, tol: f64) -> Result<DimensionEstimate, PressureError> {
    singularity_dimension_with(f, n, tol, DEFAULT_SUP_SAMPLES)
}

pub fn singularity_dimension_with(
    f: &IfsSpec,
    n: usize,
    tol: f64,
    sup_samples: usize,
) -> Result<DimensionEstimate, PressureError> {
    let table = LevelSpectra::build(f, n, sup_samples, DEFAULT_WORD_BUDGET)?;
    singularity_dimension_from(f, &table, tol)
}

/// Bisection on a precomputed table.
pub fn singularity_dimension_from(f: &IfsSpec, table: &LevelSpectra, tol: f64) -> Result<DimensionEstimate, PressureError> {
    if !(tol > 0.0) {
        return Err(PressureError::BadTolerance(tol));
    }
    let p0 = table.pressure(0.0)?;
    if p0 < 0.0 {
        return Err(PressureError::NegativeAtZero(p0));
    }
    let bound = entropy_bound(f);
    let upper = f.dim() as f64 + bound;
    let (lo, hi, evals) = bisect_decreasing(|s| table.pressure(s), 0.0, upper, tol)?;
    check_monotone(evals)?;
    let s_star = 0.5 * (lo + hi);
    if s_star > bound + tol {
        return Err(PressureError::BoundViolated { s_star, bound });
    }
    Ok(DimensionEstimate {
        s_star,
        bracket: (lo, hi),
        n: table.level(),
        tolerance: tol,
        certified: table.certified(),
    })
}

/// Solves Σ rᵢˢ = 1 by bisection to 1e-12.
pub fn moran_oracle(ratios: &[f64]) -> f64 {
    assert!(
        ratios.len() >= 2 && ratios.iter().all(|r| *r > 0.0 && *r < 1.0),
        "need at least two ratios in (0, 1)"
    );
    let g = |s: f64| ratios.iter().map(|r| r.powf(s)).sum::<f64>() - 1.0;
    let (mut lo, mut hi) = (0.0, 1.0);
    while g(hi) > 0.0 {
        hi *= 2.0;
    }
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Zero of s ↦ log Σᵢ φˢ(diag(entriesᵢ)) for constant diagonal Jacobians.
pub fn affinity_oracle(diag_entries: &[Vec<f64>]) -> f64 {
    assert!(!diag_entries.is_empty());
    let d = diag_entries[0].len();
    for e in diag_entries {
        assert!(
            e.len() == d && e.iter().all(|v| *v > 0.0 && *v < 1.0),
            "entries must lie in (0, 1)"
        );
        assert!(e.windows(2).all(|w| w[0] >= w[1]), "entries must be non-increasing");
    }
    let logs: Vec<Vec<f64>> = diag_entries.iter().map(|e| e.iter().map(|v| v.ln()).collect()).collect();
    let g = |s: f64| logs.iter().map(|l| log_svf(l, s).exp()).sum::<f64>().ln();
    // locate the integer band containing the root
    let mut lo = 0.0;
    while g(lo + 1.0) > 0.0 {
        lo += 1.0;
    }
    let mut hi = lo + 1.0;
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ifs::{DeclaredClass, DomainBox, SmoothMap};

    fn system(dim: usize, maps: &[&[&str]]) -> IfsSpec {
        let maps = maps.iter().map(|c| SmoothMap::parse(dim, c, None).unwrap()).collect();
        IfsSpec::new(maps, DomainBox::unit(dim), vec![DeclaredClass::Affine]).unwrap()
    }

    fn cantor() -> IfsSpec {
        system(1, &[&["x1/3"], &["x1/3 + 2/3"]])
    }

    fn diag() -> IfsSpec {
        system(2, &[&["0.6*x1", "0.2*x2"], &["0.6*x1 + 0.4", "0.2*x2 + 0.8"]])
    }

    #[test]
    fn cantor_pressure_closed_form() {
        let f = cantor();
        for n in [1, 3, 7] {
            let t = LevelSpectra::build(&f, n, 8, DEFAULT_WORD_BUDGET).unwrap();
            for s in [0.0, 0.25, 1.0, 1.7] {
                let expected = 2f64.ln() - s * 3f64.ln();
                assert!((t.pressure(s).unwrap() - expected).abs() < 1e-12);
            }
            let s0 = 2f64.ln() / 3f64.ln();
            assert!(t.pressure(s0).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_pressure_closed_form() {
        let s = 1.0 + 1.2f64.ln() / 5f64.ln();
        let p = pressure_n(&diag(), s, 1, 8).unwrap();
        assert!(p.abs() < 1e-12);
        let p = pressure_n(&diag(), 1.5, 1, 8).unwrap();
        let expected = (2.0 * 0.6 * 0.2f64.powf(0.5)).ln();
        assert!((p - expected).abs() < 1e-14);
    }

    #[test]
    fn oracles() {
        assert!((moran_oracle(&[1.0 / 3.0, 1.0 / 3.0]) - 0.6309297536).abs() < 1e-10);
        assert!((moran_oracle(&[0.5, 0.5]) - 1.0).abs() < 1e-12);
        assert!((moran_oracle(&[0.25; 4]) - 1.0).abs() < 1e-12);
        let a = affinity_oracle(&[vec![0.6, 0.2], vec![0.6, 0.2]]);
        assert!((a - (1.0 + 1.2f64.ln() / 5f64.ln())).abs() < 1e-12);
        let a = affinity_oracle(&[vec![1.0 / 3.0, 1.0 / 3.0], vec![1.0 / 3.0, 1.0 / 3.0]]);
        assert!((a - 2f64.ln() / 3f64.ln()).abs() < 1e-12);
        let a = affinity_oracle(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert!((a - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_examples() {
        let tol = 1e-8;
        let s = singularity_dimension(&cantor(), 6, tol).unwrap();
        assert!((s.s_star - moran_oracle(&[1.0 / 3.0; 2])).abs() <= tol);
        assert!(s.bracket.1 - s.bracket.0 <= tol && s.certified);

        let s = singularity_dimension(&diag(), 1, tol).unwrap();
        assert!((s.s_star - affinity_oracle(&[vec![0.6, 0.2], vec![0.6, 0.2]])).abs() <= tol);

        let half = system(1, &[&["x1/2"], &["x1/2 + 1/2"]]);
        let s = singularity_dimension(&half, 4, tol).unwrap();
        assert!((s.s_star - 1.0).abs() <= tol);
    }

    #[test]
    fn nonlinear_uses_samples() {
        let maps = vec![
            SmoothMap::parse(1, &["x1/3 + 0.05*x1^2"], None).unwrap(),
            SmoothMap::parse(1, &["x1/3 + 0.6"], None).unwrap(),
        ];
        let f = IfsSpec::new(maps, DomainBox::unit(1), vec![]).unwrap();
        let t = LevelSpectra::build(&f, 6, 8, DEFAULT_WORD_BUDGET).unwrap();
        assert_eq!(t.strategy(), SupStrategy::SampleKPoints);
        assert!(!t.certified());
        assert!((t.pressure(0.0).unwrap() - 2f64.ln()).abs() < 1e-14);
        let s = singularity_dimension_from(&f, &t, 1e-6).unwrap();
        // derivatives lie in [1/3, 1/3 + 0.1] so the dimension sits between
        assert!(s.s_star < moran_oracle(&[1.0 / 3.0 + 0.1, 1.0 / 3.0]) + 1e-6);
        assert!(s.s_star > moran_oracle(&[1.0 / 3.0; 2]) - 1e-6);
    }

    #[test]
    fn budget_is_enforced() {
        let err = LevelSpectra::build(&cantor(), 30, 1, 1 << 10).unwrap_err();
        assert!(matches!(err, PressureError::Budget(SymbolicError::BudgetExceeded { .. })));
    }

    #[test]
    fn curve_csv() {
        let t = LevelSpectra::build(&cantor(), 2, 1, DEFAULT_WORD_BUDGET).unwrap();
        let c = t.curve(&[0.0, 1.0]).unwrap();
        let csv = c.to_csv();
        assert!(csv.starts_with("s,P_n,certified\n0,"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn default_level_respects_cap() {
        assert_eq!(default_level(&cantor(), 8), 20);
        let ell = 2u64;
        assert!(ell.pow(default_level(&cantor(), 8) as u32) <= DEFAULT_LEVEL_CAP);
    }
}
