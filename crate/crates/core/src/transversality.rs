//! Hypothesis checks for the transversality theorem, the Z-function,
//! the k* selection, distortion constants and a Monte-Carlo audit of the
//! generalised transversality inequality.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::ifs::{IfsError, IfsSpec, ParamShape, TranslationalFamily};
use crate::measures::fit_line;
use crate::sampling;
use crate::smallmat::{singular_values, z_min, Mat, MatError};
use crate::symbolic::{checked_word_count, common_prefix, enumerate_words, sample_codings, InfiniteWord, SymbolicError, Word};

/// Entries below this count as zero in grid checks.
const ZERO_TOL: f64 = 1e-12;
/// Relative tolerance of the conformality test.
const CONFORMAL_TOL: f64 = 1e-9;
/// Precision of coding-map evaluations in the audit.
const CODING_PRECISION: f64 = 1e-12;
/// Default number of codings used for the infimum in Z.
pub const DEFAULT_Z_SAMPLES: usize = 8;
/// Word budget for distortion sweeps.
pub const DISTORTION_WORD_BUDGET: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransversalityError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Matrix(#[from] MatError),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
    #[error(transparent)]
    Ifs(#[from] IfsError),
    #[error("r must be positive, got {0}")]
    BadRadius(f64),
    #[error("sequence a must start with 1 and b with 2")]
    BadStartSymbols,
    #[error("need max(rho_i + rho_j) < 1, got {0}")]
    RatioTooLarge(f64),
    #[error("neither lambda_1 nor lambda_2 is certified below rho with truncation {0}; increase truncation")]
    IncreaseTruncation(usize),
    #[error("vanishing diagonal entry ({index}) of the Jacobian of word {word}")]
    VanishingDiagonal { word: String, index: usize },
    #[error("delta = {delta} must not exceed the family radius {radius}")]
    DeltaTooLarge { delta: f64, radius: f64 },
    #[error("delta must be positive")]
    BadDelta,
    #[error("t0 lies outside the parameter region")]
    CentreOutside,
    #[error("audit pairs must consist of distinct sequences")]
    IdenticalPair,
    #[error("translation vector has length {got}, expected {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("sample count must be at least 1")]
    NoSamples,
}

/// Why a hypothesis fails.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    Ratio { i: usize, j: usize, value: f64 },
    NotTriangular { map: usize, row: usize, col: usize, value: f64 },
    NotDominated { map: usize, index: usize, point: Vec<f64> },
    NotConformal { map: usize, point: Vec<f64>, defect: f64 },
    NotProduct,
    Component { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseI {
    pub triangular_ok: bool,
    pub domination_ok: bool,
    pub ratio_value: f64,
    pub ratio_ok: bool,
    pub convex_ok: bool,
    pub pass: bool,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseII {
    pub conformal_ok: bool,
    pub ratio_ok: bool,
    pub connected_ok: bool,
    pub pass: bool,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseIII {
    pub applicable: bool,
    pub components: Vec<ConditionReport>,
    pub pass: bool,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub case_i: CaseI,
    pub case_ii: CaseII,
    pub case_iii: CaseIII,
    /// max over i ≠ j of ρᵢ + ρⱼ and the maximising pair (1-based).
    pub ratio_value: f64,
    pub ratio_pair: (usize, usize),
    /// Sup norms are exact (affine) rather than grid estimates.
    pub certified: bool,
    pub overall: bool,
    pub failing_witness: Option<Witness>,
}

/// max over i ≠ j of ρᵢ + ρⱼ with the 1-based maximising pair.
pub fn pair_ratio(rho: &[f64]) -> (f64, (usize, usize)) {
    let mut best = (f64::NEG_INFINITY, (1, 2));
    for i in 0..rho.len() {
        for j in i + 1..rho.len() {
            let v = rho[i] + rho[j];
            if v > best.0 {
                best = (v, (i + 1, j + 1));
            }
        }
    }
    best
}

fn identically_zero(components: &[Expr], jac: &Expr, row: usize, col: usize) -> bool {
    !components[row].depends_on(col + 1) || matches!(jac, Expr::Const(v) if *v == 0.0)
}

fn triangular_witness(f: &IfsSpec, grid: usize) -> Result<Option<Witness>, TransversalityError> {
    let domain = f.domain();
    for (m, map) in f.maps().iter().enumerate() {
        for row in 0..f.dim() {
            for col in row + 1..f.dim() {
                let jac = map.jacobian_entry(row, col);
                if identically_zero(map.components(), jac, row, col) {
                    continue;
                }
                for idx in 0..domain.grid_len(grid) {
                    let v = jac.eval(&domain.grid_point(idx, grid))?;
                    if v.abs() >= ZERO_TOL {
                        return Ok(Some(Witness::NotTriangular {
                            map: m + 1,
                            row: row + 1,
                            col: col + 1,
                            value: v,
                        }));
                    }
                }
            }
        }
    }
    Ok(None)
}

fn domination_witness(f: &IfsSpec, grid: usize) -> Result<Option<Witness>, TransversalityError> {
    let domain = f.domain();
    for idx in 0..domain.grid_len(grid) {
        let x = domain.grid_point(idx, grid);
        for m in 0..f.alphabet_size() {
            let j = f.jacobian(m, &x)?;
            for k in 0..f.dim().saturating_sub(1) {
                if j[(k, k)].abs() + ZERO_TOL < j[(k + 1, k + 1)].abs() {
                    return Ok(Some(Witness::NotDominated {
                        map: m + 1,
                        index: k + 1,
                        point: x,
                    }));
                }
            }
        }
    }
    Ok(None)
}

fn conformal_witness(f: &IfsSpec, grid: usize) -> Result<Option<Witness>, TransversalityError> {
    let domain = f.domain();
    let d = f.dim();
    for m in 0..f.alphabet_size() {
        let points = if f.maps()[m].has_constant_jacobian() {
            1
        } else {
            domain.grid_len(grid)
        };
        for idx in 0..points {
            let x = domain.grid_point(idx, grid);
            let j = f.jacobian(m, &x)?;
            let gram = &j.transpose() * &j;
            let c2 = (0..d).map(|k| gram[(k, k)]).sum::<f64>() / d as f64;
            let defect = gram.sub(&Mat::identity(d).scale(c2)).norm();
            if defect > CONFORMAL_TOL * c2 {
                return Ok(Some(Witness::NotConformal {
                    map: m + 1,
                    point: x,
                    defect,
                }));
            }
        }
    }
    Ok(None)
}

/// Checks the three alternative hypotheses on a grid with `grid` points
/// per axis. Failures are reported, not raised.
pub fn check_theorem_conditions(f: &IfsSpec, grid: usize) -> Result<ConditionReport, TransversalityError> {
    let contraction = f.contraction();
    let (ratio_value, ratio_pair) = pair_ratio(&contraction.rho);
    let ratio_ok = ratio_value < 1.0;
    let ratio_witness = (!ratio_ok).then(|| Witness::Ratio {
        i: ratio_pair.0,
        j: ratio_pair.1,
        value: ratio_value,
    });

    let tri = triangular_witness(f, grid)?;
    let dom = if tri.is_none() { domination_witness(f, grid)? } else { None };
    let convex_ok = f.domain().is_convex();
    let triangular_ok = tri.is_none();
    let domination_ok = triangular_ok && dom.is_none();
    let case_i = CaseI {
        triangular_ok,
        domination_ok,
        ratio_value,
        ratio_ok,
        convex_ok,
        pass: triangular_ok && domination_ok && ratio_ok && convex_ok,
        witness: tri.or(dom).or_else(|| ratio_witness.clone()),
    };

    let conf = conformal_witness(f, grid)?;
    let connected_ok = f.domain().is_connected();
    let case_ii = CaseII {
        conformal_ok: conf.is_none(),
        ratio_ok,
        connected_ok,
        pass: conf.is_none() && ratio_ok && connected_ok,
        witness: conf.or_else(|| ratio_witness.clone()),
    };

    let components = f
        .factors()
        .iter()
        .map(|c| check_theorem_conditions(c, grid))
        .collect::<Result<Vec<_>, _>>()?;
    let applicable = !components.is_empty();
    let bad = components.iter().position(|c| !c.overall);
    let case_iii = CaseIII {
        applicable,
        pass: applicable && bad.is_none(),
        witness: if !applicable {
            Some(Witness::NotProduct)
        } else {
            bad.map(|index| Witness::Component { index: index + 1 })
        },
        components,
    };

    let overall = case_i.pass || case_ii.pass || case_iii.pass;
    let failing_witness = if overall {
        None
    } else {
        ratio_witness
            .or_else(|| case_i.witness.clone())
            .or_else(|| case_ii.witness.clone())
    };
    Ok(ConditionReport {
        case_i,
        case_ii,
        case_iii,
        ratio_value,
        ratio_pair,
        certified: contraction.certified,
        overall,
        failing_witness,
    })
}

fn z_function_shifted(f: &IfsSpec, w: &Word, r: f64, x_samples: usize, extra: &[f64]) -> Result<f64, TransversalityError> {
    if !(r > 0.0) {
        return Err(TransversalityError::BadRadius(r));
    }
    if w.is_empty() {
        return Ok(r.min(1.0).powi(f.dim() as i32));
    }
    let mut best = f64::INFINITY;
    for coding in sample_codings(f.alphabet_size(), x_samples.max(1)) {
        let x = f.code_point_shifted(&coding, CODING_PRECISION, extra)?;
        let sv = singular_values(&f.compose_jacobian_shifted(w, &x, extra)?);
        best = best.min(z_min(&sv, r)?);
    }
    Ok(best)
}

/// Z_w(r): the minimum over sampled codings x of min_k rᵏ/φᵏ(D_{Π(x)} f_w).
pub fn z_function(f: &IfsSpec, w: &Word, r: f64, x_samples: usize) -> Result<f64, TransversalityError> {
    let zeros = vec![0.0; f.alphabet_size() * f.dim()];
    z_function_shifted(f, w, r, x_samples, &zeros)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KStar {
    pub k_star: usize,
    pub lambda: [f64; 2],
    /// Bound on the omitted terms, already added to each λ.
    pub tail: f64,
    pub rho_bar: f64,
}

/// Picks k ∈ {1, 2} with λₖ + tail < ρ̄, where
/// λₖ = Σ_{n≥1, a_{n+1}=k} ρ_{a₁}⋯ρ_{aₙ} + Σ_{n≥1, b_{n+1}=k} ρ_{b₁}⋯ρ_{bₙ}.
pub fn kstar_select(rho: &[f64], a: &InfiniteWord, b: &InfiniteWord, truncation: usize) -> Result<KStar, TransversalityError> {
    if a.symbol_at(0) != 1 || b.symbol_at(0) != 2 {
        return Err(TransversalityError::BadStartSymbols);
    }
    let (rho_bar, _) = pair_ratio(rho);
    if !(rho_bar < 1.0) {
        return Err(TransversalityError::RatioTooLarge(rho_bar));
    }
    let theta = rho.iter().copied().fold(0.0, f64::max);
    let mut lambda = [0.0; 2];
    for seq in [a, b] {
        let mut prod = 1.0;
        for n in 1..=truncation {
            prod *= rho[seq.symbol_at(n - 1) as usize - 1];
            let next = seq.symbol_at(n) as usize;
            if next <= 2 {
                lambda[next - 1] += prod;
            }
        }
    }
    // one geometric tail per sequence
    let tail = 2.0 * theta.powi(truncation as i32 + 1) / (1.0 - theta);
    let k_star = if lambda[0] + tail < rho_bar {
        1
    } else if lambda[1] + tail < rho_bar {
        2
    } else {
        return Err(TransversalityError::IncreaseTruncation(truncation));
    };
    Ok(KStar {
        k_star,
        lambda,
        tail,
        rho_bar,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistortionEstimate {
    pub n: usize,
    pub c_n: f64,
    /// (1/n) log Cₙ.
    pub log_rate: f64,
    pub words: u64,
    pub t_samples: usize,
    pub certified: bool,
}

/// Translations sampled for distortion sweeps when δₜ > 0.
const DISTORTION_T_SAMPLES: usize = 4;

/// Cₙ: the largest ratio |(D_y f_ω)ᵢᵢ / (D_z f_ω)ᵢᵢ| over grid points y, z,
/// words ω ∈ Σₙ, axes i and translations with |tₖ| ≤ δₜ (t = 0 included).
pub fn distortion_constant(
    f: &IfsSpec,
    n: usize,
    grid: usize,
    delta_t: f64,
    seed: u64,
) -> Result<DistortionEstimate, TransversalityError> {
    let words = checked_word_count(n, f.alphabet_size(), DISTORTION_WORD_BUDGET)?;
    let m = f.alphabet_size() * f.dim();
    let mut ts = vec![vec![0.0; m]];
    if delta_t > 0.0 {
        let mut rng = sampling::stream(seed, 0);
        ts.extend((0..DISTORTION_T_SAMPLES).map(|_| sampling::uniform_in_cube(&mut rng, m, delta_t)));
    }
    let domain = f.domain();
    let points: Vec<Vec<f64>> = if f.is_affine() {
        vec![domain.center()]
    } else {
        (0..domain.grid_len(grid)).map(|i| domain.grid_point(i, grid)).collect()
    };
    let all: Vec<Word> = enumerate_words(n, f.alphabet_size(), DISTORTION_WORD_BUDGET)?.collect();
    let d = f.dim();
    let worst = all
        .par_iter()
        .map(|w| -> Result<f64, TransversalityError> {
            let mut worst: f64 = 1.0;
            for t in &ts {
                let mut lo = vec![f64::INFINITY; d];
                let mut hi = vec![0.0f64; d];
                for y in &points {
                    let j = f.compose_jacobian_shifted(w, y, t)?;
                    for i in 0..d {
                        let v = j[(i, i)].abs();
                        if !(v > 0.0) {
                            return Err(TransversalityError::VanishingDiagonal {
                                word: w.to_string(),
                                index: i + 1,
                            });
                        }
                        lo[i] = lo[i].min(v);
                        hi[i] = hi[i].max(v);
                    }
                }
                for i in 0..d {
                    worst = worst.max(hi[i] / lo[i]);
                }
            }
            Ok(worst)
        })
        .try_reduce(|| 1.0, |a, b| Ok(a.max(b)))?;
    Ok(DistortionEstimate {
        n,
        c_n: worst,
        log_rate: worst.ln() / n as f64,
        words,
        t_samples: ts.len(),
        certified: f.is_affine(),
    })
}

/// Settings of a transversality audit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditConfig {
    pub t0: Vec<f64>,
    pub delta: f64,
    pub pairs: Vec<(InfiniteWord, InfiniteWord)>,
    pub r_grid: Vec<f64>,
    pub n_mc: usize,
    pub seed: u64,
    pub z_samples: usize,
    /// Largest acceptable fitted ψ̂.
    pub psi_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditCell {
    pub pair: usize,
    pub i: String,
    pub j: String,
    pub n_prefix: usize,
    pub r: f64,
    pub measure: f64,
    pub stderr: f64,
    pub z: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GtcAuditReport {
    pub t0: Vec<f64>,
    pub delta: f64,
    pub n_mc: usize,
    pub seed: u64,
    /// Lebesgue measure of B(t0, δ) ∩ Δ (sup-norm ball).
    pub region_volume: f64,
    pub cells: Vec<AuditCell>,
    pub psi_hat: f64,
    pub psi_bound: f64,
    pub fit_note: String,
    pub c_hat: f64,
    pub verdict: bool,
}

impl GtcAuditReport {
    /// CSV with columns pair, n_prefix, r, measure, stderr, Z, ratio.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair,n_prefix,r,measure,stderr,Z,ratio\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{}/{},{},{},{},{},{},{}\n",
                c.i, c.j, c.n_prefix, c.r, c.measure, c.stderr, c.z, c.ratio
            ));
        }
        out
    }
}

/// Monte-Carlo audit of η{t ∈ B(t0, δ) : |Πᵗ(i) − Πᵗ(j)| < r} against
/// Z_{i∧j}(r) at t0, fitting C and ψ from the observed ratios.
///
/// B(t0, δ) is the sup-norm ball; the same parameter draws serve every r
/// of a pair.
pub fn audit_gtc(fam: &TranslationalFamily, config: &AuditConfig) -> Result<GtcAuditReport, TransversalityError> {
    let m = fam.param_dim();
    if config.t0.len() != m {
        return Err(TransversalityError::ParamLength {
            expected: m,
            got: config.t0.len(),
        });
    }
    if !(config.delta > 0.0) {
        return Err(TransversalityError::BadDelta);
    }
    if config.delta > fam.radius() {
        return Err(TransversalityError::DeltaTooLarge {
            delta: config.delta,
            radius: fam.radius(),
        });
    }
    if !fam.contains(&config.t0) {
        return Err(TransversalityError::CentreOutside);
    }
    if config.n_mc == 0 {
        return Err(TransversalityError::NoSamples);
    }
    if let Some(r) = config.r_grid.iter().find(|r| !(**r > 0.0)) {
        return Err(TransversalityError::BadRadius(*r));
    }
    let base = fam.base();
    let r0 = fam.radius();
    let lo: Vec<f64> = config.t0.iter().map(|t| (t - config.delta).max(-r0)).collect();
    let hi: Vec<f64> = config.t0.iter().map(|t| (t + config.delta).min(r0)).collect();
    let box_volume: f64 = lo.iter().zip(&hi).map(|(l, h)| h - l).product();
    // the cube case is the whole box; the ball case is estimated from the draws
    let mut cells = Vec::new();
    let mut region_volume = box_volume;
    for (p, (a, b)) in config.pairs.iter().enumerate() {
        let prefix = common_prefix(a, b).map_err(|_| TransversalityError::IdenticalPair)?;
        let mut rng = sampling::stream(config.seed, p as u64);
        let draws: Vec<Vec<f64>> = (0..config.n_mc)
            .map(|_| lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..*h)).collect())
            .collect();
        let dists: Vec<f64> = draws
            .par_iter()
            .map(|t| -> Result<f64, TransversalityError> {
                if fam.shape() == ParamShape::Ball && !fam.contains(t) {
                    return Ok(f64::INFINITY);
                }
                let x = base.code_point_shifted(a, CODING_PRECISION, t)?;
                let y = base.code_point_shifted(b, CODING_PRECISION, t)?;
                Ok(x.iter().zip(&y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt())
            })
            .collect::<Result<_, _>>()?;
        if fam.shape() == ParamShape::Ball {
            let inside = dists.iter().filter(|d| d.is_finite()).count();
            region_volume = box_volume * inside as f64 / config.n_mc as f64;
        }
        for &r in &config.r_grid {
            let hits = dists.iter().filter(|d| **d < r).count();
            let frac = hits as f64 / config.n_mc as f64;
            let measure = box_volume * frac;
            let stderr = box_volume * (frac * (1.0 - frac) / config.n_mc as f64).sqrt();
            let z = z_function_shifted(base, &prefix, r, config.z_samples, &config.t0)?;
            cells.push(AuditCell {
                pair: p + 1,
                i: a.to_string(),
                j: b.to_string(),
                n_prefix: prefix.len(),
                r,
                measure,
                stderr,
                z,
                ratio: measure / z,
            });
        }
    }
    // ψ̂: slope of log(max ratio) against the common-prefix length
    let mut lengths: Vec<usize> = cells.iter().map(|c| c.n_prefix).collect();
    lengths.sort_unstable();
    lengths.dedup();
    let (psi_hat, fit_note) = if lengths.len() >= 2 {
        let xs: Vec<f64> = lengths.iter().map(|&n| n as f64).collect();
        let ys: Vec<f64> = lengths
            .iter()
            .map(|&n| {
                cells
                    .iter()
                    .filter(|c| c.n_prefix == n)
                    .map(|c| c.ratio)
                    .fold(f64::MIN_POSITIVE, f64::max)
                    .ln()
            })
            .collect();
        let slope = fit_line(&xs, &ys).0;
        (
            slope.max(0.0),
            format!("least-squares slope over prefix lengths {lengths:?}, clamped at 0"),
        )
    } else {
        (0.0, "single prefix length; psi fixed at 0".to_string())
    };
    let c_hat = cells
        .iter()
        .map(|c| c.ratio / (c.n_prefix as f64 * psi_hat).exp())
        .fold(0.0, f64::max);
    Ok(GtcAuditReport {
        t0: config.t0.clone(),
        delta: config.delta,
        n_mc: config.n_mc,
        seed: config.seed,
        region_volume,
        cells,
        psi_hat,
        psi_bound: config.psi_bound,
        fit_note,
        c_hat,
        verdict: c_hat.is_finite() && psi_hat <= config.psi_bound,
    })
}

/// Volume of the Euclidean ball of radius r in ℝᵈ.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    // V_d = V_{d-2} · 2π/d
    let mut v = if d % 2 == 0 { 1.0 } else { 2.0 };
    let mut k = if d % 2 == 0 { 2 } else { 3 };
    while k <= d {
        v *= 2.0 * std::f64::consts::PI / k as f64;
        k += 2;
    }
    v * r.powi(d as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeomCheck {
    pub volume: f64,
    pub stderr: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Monte-Carlo volume of A⁻¹B(0, r₁) ∩ B(0, r₂) against
/// 2ᵈ·min_k r₁ᵏ r₂^{d−k}/φᵏ(A), accepted within 3 standard errors.
pub fn geom_volume_check<R: Rng + ?Sized>(a: &Mat, r1: f64, r2: f64, n_mc: usize, rng: &mut R) -> GeomCheck {
    let d = a.dim();
    let sv = singular_values(a);
    let bound = 2f64.powi(d as i32)
        * (0..=d)
            .map(|k| r1.powi(k as i32) * r2.powi((d - k) as i32) / sv.svf(k as f64))
            .fold(f64::INFINITY, f64::min);
    let hits = (0..n_mc)
        .filter(|_| {
            let x = sampling::uniform_in_ball(rng, d, r2);
            a.apply(&x).iter().map(|v| v * v).sum::<f64>().sqrt() < r1
        })
        .count();
    let vol = ball_volume(d, r2);
    let p = hits as f64 / n_mc as f64;
    let volume = vol * p;
    let stderr = vol * (p * (1.0 - p) / n_mc as f64).sqrt();
    GeomCheck {
        volume,
        stderr,
        bound,
        holds: volume <= bound + 3.0 * stderr,
    }
}

/// The largest sampled log ‖D_y f_ω^s · (D*_{z₁…z_d} f_ω^t)⁻¹‖ over random
/// ω ∈ Σₙ, points y, z₁, …, z_d and parameters with |s − t| < δ.
pub fn mixed_jacobian_log_sup(
    fam: &TranslationalFamily,
    n: usize,
    delta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<f64, TransversalityError> {
    let f = fam.base();
    let d = f.dim();
    let ell = f.alphabet_size();
    let m = fam.param_dim();
    let values = (0..n_samples)
        .into_par_iter()
        .map(|k| -> Result<f64, TransversalityError> {
            let mut rng = sampling::stream(seed, k as u64);
            let w = Word::new((0..n).map(|_| rng.random_range(1..=ell as u8)).collect());
            let s = fam.sample(&mut rng);
            let t = loop {
                let v = sampling::uniform_in_ball(&mut rng, m, delta);
                let t: Vec<f64> = s.iter().zip(&v).map(|(a, b)| a + b).collect();
                if fam.contains(&t) {
                    break t;
                }
            };
            let y = f.domain().uniform_point(&mut rng);
            let dy = f.compose_jacobian_shifted(&w, &y, &s)?;
            let mut star = Mat::zeros(d);
            for row in 0..d {
                let z = f.domain().uniform_point(&mut rng);
                let dz = f.compose_jacobian_shifted(&w, &z, &t)?;
                for col in 0..d {
                    star[(row, col)] = dz[(row, col)];
                }
            }
            Ok((&dy * &star.inverse()?).norm().ln())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(values.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ifs::{DeclaredClass, DomainBox, SmoothMap};

    fn iw(s: &str) -> InfiniteWord {
        s.parse().unwrap()
    }

    fn one_dim(ratios: &[f64]) -> IfsSpec {
        let maps = ratios
            .iter()
            .enumerate()
            .map(|(k, r)| {
                SmoothMap::parse(
                    1,
                    &[&format!("{r}*x1 + {}", k as f64 * (1.0 - r) / (ratios.len() - 1) as f64)],
                    None,
                )
                .unwrap()
            })
            .collect();
        IfsSpec::new(maps, DomainBox::unit(1), vec![DeclaredClass::Affine]).unwrap()
    }

    fn triangular_pair() -> IfsSpec {
        IfsSpec::new(
            vec![
                SmoothMap::affine(&Mat::from_rows(&[[0.3, 0.0], [0.2, 0.25]]), &[0.05, 0.05]),
                SmoothMap::affine(&Mat::from_rows(&[[0.35, 0.0], [0.0, 0.3]]), &[0.6, 0.6]),
            ],
            DomainBox::unit(2),
            vec![DeclaredClass::Affine, DeclaredClass::LowerTriangular],
        )
        .unwrap()
    }

    #[test]
    fn theorem_condition_examples() {
        let r = check_theorem_conditions(&triangular_pair(), 11).unwrap();
        assert!(r.case_i.pass && r.overall);
        assert!((r.ratio_value - 0.745695).abs() < 1e-6);
        assert!(!r.case_ii.conformal_ok);

        let r = check_theorem_conditions(&one_dim(&[0.4, 0.5]), 11).unwrap();
        assert!(r.case_ii.pass);
        assert!((r.ratio_value - 0.9).abs() < 1e-12);

        let r = check_theorem_conditions(&one_dim(&[0.6, 0.5]), 11).unwrap();
        assert!(!r.overall);
        assert!((r.ratio_value - 1.1).abs() < 1e-12);
        assert_eq!(
            r.failing_witness,
            Some(Witness::Ratio {
                i: 1,
                j: 2,
                value: r.ratio_value
            })
        );
    }

    #[test]
    fn non_triangular_and_undominated() {
        let f = IfsSpec::new(
            vec![
                SmoothMap::affine(&Mat::from_rows(&[[0.3, 0.1], [0.0, 0.25]]), &[0.05, 0.05]),
                SmoothMap::affine(&Mat::from_rows(&[[0.35, 0.0], [0.0, 0.3]]), &[0.5, 0.5]),
            ],
            DomainBox::unit(2),
            vec![],
        )
        .unwrap();
        let r = check_theorem_conditions(&f, 5).unwrap();
        assert!(matches!(
            r.case_i.witness,
            Some(Witness::NotTriangular {
                map: 1,
                row: 1,
                col: 2,
                ..
            })
        ));
        let g = IfsSpec::new(
            vec![
                SmoothMap::affine(&Mat::from_rows(&[[0.2, 0.0], [0.1, 0.3]]), &[0.05, 0.05]),
                SmoothMap::affine(&Mat::from_rows(&[[0.35, 0.0], [0.0, 0.3]]), &[0.5, 0.5]),
            ],
            DomainBox::unit(2),
            vec![],
        )
        .unwrap();
        let r = check_theorem_conditions(&g, 5).unwrap();
        assert!(r.case_i.triangular_ok && !r.case_i.domination_ok);
        assert!(matches!(
            r.case_i.witness,
            Some(Witness::NotDominated { map: 1, index: 1, .. })
        ));
    }

    #[test]
    fn z_function_examples() {
        let f = one_dim(&[1.0 / 3.0, 1.0 / 3.0]);
        assert!((z_function(&f, &Word::empty(), 0.3, 8).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(z_function(&f, &Word::empty(), 2.0, 8).unwrap(), 1.0);
        let w: Word = "11".parse().unwrap();
        assert!((z_function(&f, &w, 0.05, 8).unwrap() - 0.45).abs() < 1e-12);
        let diag = IfsSpec::new(
            vec![
                SmoothMap::affine(&Mat::diag(&[0.5, 0.2]), &[0.0, 0.0]),
                SmoothMap::affine(&Mat::diag(&[0.5, 0.2]), &[0.5, 0.8]),
            ],
            DomainBox::unit(2),
            vec![],
        )
        .unwrap();
        let w: Word = "1".parse().unwrap();
        assert!((z_function(&diag, &w, 0.3, 8).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn kstar_examples() {
        let k = kstar_select(&[0.4, 0.4], &iw("pre:|per:1"), &iw("pre:|per:2"), 60).unwrap();
        assert_eq!(k.k_star, 1);
        assert!((k.lambda[0] - 2.0 / 3.0).abs() < 1e-12 && (k.lambda[1] - 2.0 / 3.0).abs() < 1e-12);
        let k = kstar_select(&[0.3, 0.4], &iw("pre:|per:1"), &iw("pre:|per:2"), 60).unwrap();
        assert!((k.lambda[0] - 3.0 / 7.0).abs() < 1e-12 && (k.lambda[1] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(k.k_star, 1);
        let k = kstar_select(&[0.1, 0.6], &iw("pre:1|per:2"), &iw("pre:|per:2"), 80).unwrap();
        assert_eq!(k.lambda[0], 0.0);
        assert!((k.lambda[1] - 1.75).abs() < 1e-9);
        assert_eq!(k.k_star, 1);
        assert!(k.lambda[k.k_star - 1] + k.tail < k.rho_bar);
        assert!(matches!(
            kstar_select(&[0.4, 0.4], &iw("pre:|per:1"), &iw("pre:|per:2"), 1),
            Err(TransversalityError::IncreaseTruncation(1))
        ));
        assert!(kstar_select(&[0.4, 0.4], &iw("pre:|per:2"), &iw("pre:|per:1"), 10).is_err());
    }

    #[test]
    fn distortion_examples() {
        let c = distortion_constant(&triangular_pair(), 4, 5, 0.0, 0).unwrap();
        assert_eq!(c.c_n, 1.0);
        let maps = vec![
            SmoothMap::parse(1, &["x1/3 + 0.05*x1^2"], None).unwrap(),
            SmoothMap::parse(1, &["x1/3 + 0.6"], None).unwrap(),
        ];
        let q = IfsSpec::new(maps, DomainBox::unit(1), vec![]).unwrap();
        let c1 = distortion_constant(&q, 1, 257, 0.0, 0).unwrap();
        assert!((c1.c_n - 1.3).abs() < 1e-12);
        let rates: Vec<f64> = (1..=8)
            .map(|n| distortion_constant(&q, n, 257, 0.0, 0).unwrap().log_rate)
            .collect();
        assert!(rates.windows(2).all(|w| w[1] < w[0]), "{rates:?}");
    }

    fn slab_family() -> TranslationalFamily {
        let base = IfsSpec::new(
            vec![
                SmoothMap::parse(1, &["x1/3"], None).unwrap(),
                SmoothMap::parse(1, &["x1/3"], None).unwrap(),
            ],
            DomainBox::new(vec![-1.0], vec![1.0]).unwrap(),
            vec![DeclaredClass::Affine],
        )
        .unwrap();
        TranslationalFamily::new(base, 0.5, ParamShape::Cube).unwrap()
    }

    fn slab_config(r_grid: Vec<f64>) -> AuditConfig {
        AuditConfig {
            t0: vec![0.0, 0.0],
            delta: 0.5,
            pairs: vec![(iw("pre:|per:1"), iw("pre:|per:2"))],
            r_grid,
            n_mc: 100_000,
            seed: 11,
            z_samples: DEFAULT_Z_SAMPLES,
            psi_bound: 0.1,
        }
    }

    #[test]
    fn slab_audit() {
        let report = audit_gtc(&slab_family(), &slab_config(vec![0.3])).unwrap();
        let cell = &report.cells[0];
        assert!((cell.measure - 0.36).abs() <= 3.0 * cell.stderr, "{cell:?}");
        assert!((cell.z - 0.3).abs() < 1e-15);
        assert!((cell.ratio - 1.2).abs() <= 3.0 * cell.stderr / 0.3);

        let report = audit_gtc(&slab_family(), &slab_config(vec![0.3, 0.1, 0.03, 0.01])).unwrap();
        assert!(report.c_hat >= 1.2 && report.c_hat <= 1.5, "{}", report.c_hat);
        assert!(report.verdict);

        let report = audit_gtc(&slab_family(), &slab_config(vec![10.0])).unwrap();
        assert_eq!(report.cells[0].measure, 1.0);
        assert_eq!(report.cells[0].z, 1.0);

        let mut bad = slab_config(vec![0.3]);
        bad.delta = 0.6;
        assert!(matches!(
            audit_gtc(&slab_family(), &bad),
            Err(TransversalityError::DeltaTooLarge { .. })
        ));
    }

    #[test]
    fn geom_example() {
        let mut rng = sampling::stream(1, 0);
        let g = geom_volume_check(&Mat::diag(&[2.0, 1.0]), 1.0, 1.0, 200_000, &mut rng);
        assert!((g.bound - 2.0).abs() < 1e-12);
        assert!((g.volume - std::f64::consts::FRAC_PI_2).abs() < 4.0 * g.stderr);
        assert!(g.holds);
        assert!((ball_volume(3, 1.0) - 4.0 / 3.0 * std::f64::consts::PI).abs() < 1e-12);
        assert!((ball_volume(2, 2.0) - 4.0 * std::f64::consts::PI).abs() < 1e-12);
    }
}
