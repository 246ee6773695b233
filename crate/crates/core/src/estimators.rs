//! Attractor point clouds, box counting and translation surveys.

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::EvalError;
use crate::ifs::{DomainBox, IfsError, IfsSpec, TranslationalFamily};
use crate::measures::fit_line;
use crate::pressure::{singularity_dimension_with, PressureError};
use crate::sampling;
use crate::symbolic::{checked_word_count, SymbolicError, DEFAULT_WORD_BUDGET};

/// Chaos-game iterations discarded before recording.
pub const BURN_IN: usize = 100;
const INSIDE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("cloud size must be at least 1")]
    EmptyCloud,
    #[error(transparent)]
    Budget(#[from] SymbolicError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("sampled point {0:?} lies outside the domain box")]
    Escaped(Vec<f64>),
    #[error("need at least 3 scales with 0 < smallest < largest")]
    BadScales,
    #[error(transparent)]
    Ifs(#[from] IfsError),
    #[error(transparent)]
    Pressure(#[from] PressureError),
}

/// How a cloud was generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum Provenance {
    ChaosGame { seed: u64, burn_in: usize },
    Deterministic { depth: usize },
    Uniform { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMethod {
    ChaosGame,
    Deterministic { depth: usize },
}

/// Points in ℝᵈ stored contiguously, with the box they were drawn in.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
    origin: Vec<f64>,
    provenance: Provenance,
}

impl PointCloud {
    pub fn new(dim: usize, coords: Vec<f64>, origin: Vec<f64>, provenance: Provenance) -> Self {
        assert!(dim > 0 && coords.len() % dim == 0 && origin.len() == dim);
        PointCloud {
            dim,
            coords,
            origin,
            provenance,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.dim)
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Lower corner of the grid used for box counting.
    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// The same points in another order.
    pub fn permuted(&self, order: &[usize]) -> PointCloud {
        let coords = order.iter().flat_map(|&i| self.point(i).iter().copied()).collect();
        PointCloud::new(self.dim, coords, self.origin.clone(), self.provenance)
    }
}

/// Points on the attractor of `f`.
pub fn sample_attractor(f: &IfsSpec, method: SampleMethod, size: usize, seed: u64) -> Result<PointCloud, EstimatorError> {
    let dim = f.dim();
    let domain = f.domain();
    let (coords, provenance) = match method {
        SampleMethod::ChaosGame => {
            if size == 0 {
                return Err(EstimatorError::EmptyCloud);
            }
            let mut rng = sampling::stream(seed, 0);
            let ell = f.alphabet_size();
            let mut x = domain.center();
            let mut y = vec![0.0; dim];
            let mut coords = Vec::with_capacity(size * dim);
            for step in 0..BURN_IN + size {
                f.apply_into(rng.random_range(0..ell), &x, &mut y)?;
                std::mem::swap(&mut x, &mut y);
                if step >= BURN_IN {
                    coords.extend_from_slice(&x);
                }
            }
            (coords, Provenance::ChaosGame { seed, burn_in: BURN_IN })
        }
        SampleMethod::Deterministic { depth } => {
            checked_word_count(depth, f.alphabet_size(), DEFAULT_WORD_BUDGET)?;
            let mut level = domain.center();
            let mut y = vec![0.0; dim];
            for _ in 0..depth {
                let mut next = Vec::with_capacity(level.len() * f.alphabet_size());
                for p in level.chunks(dim) {
                    for j in 0..f.alphabet_size() {
                        f.apply_into(j, p, &mut y)?;
                        next.extend_from_slice(&y);
                    }
                }
                level = next;
            }
            (level, Provenance::Deterministic { depth })
        }
    };
    if let Some(p) = coords.chunks(dim).find(|p| !domain.contains(p, INSIDE_SLACK)) {
        return Err(EstimatorError::Escaped(p.to_vec()));
    }
    Ok(PointCloud::new(dim, coords, domain.lower().to_vec(), provenance))
}

/// Uniform points in a box (a space-filling reference cloud).
pub fn uniform_cloud(domain: &DomainBox, size: usize, seed: u64) -> PointCloud {
    let mut rng = sampling::stream(seed, 0);
    let coords = (0..size).flat_map(|_| domain.uniform_point(&mut rng)).collect();
    PointCloud::new(domain.dim(), coords, domain.lower().to_vec(), Provenance::Uniform { seed })
}

/// Geometric scales from `largest` down to `smallest`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleRange {
    pub largest: f64,
    pub smallest: f64,
    pub n_scales: usize,
}

impl ScaleRange {
    /// 3^{-from}, …, 3^{-to}.
    pub fn ternary(from: i32, to: i32) -> Self {
        ScaleRange {
            largest: 3f64.powi(-from),
            smallest: 3f64.powi(-to),
            n_scales: (to - from + 1) as usize,
        }
    }

    pub fn values(&self) -> Result<Vec<f64>, EstimatorError> {
        if self.n_scales < 3 || !(self.smallest > 0.0) || !(self.smallest < self.largest) {
            return Err(EstimatorError::BadScales);
        }
        let ratio = (self.smallest / self.largest).powf(1.0 / (self.n_scales - 1) as f64);
        Ok((0..self.n_scales)
            .map(|k| match k {
                0 => self.largest,
                k if k == self.n_scales - 1 => self.smallest,
                k => self.largest * ratio.powi(k as i32),
            })
            .collect())
    }
}

impl Default for ScaleRange {
    fn default() -> Self {
        ScaleRange::ternary(2, 8)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxCountResult {
    pub scales: Vec<f64>,
    pub counts: Vec<usize>,
    /// Least-squares slope clamped to [0, d].
    pub slope: f64,
    pub raw_slope: f64,
    pub r_squared: f64,
    pub window: ScaleRange,
    pub degenerate: bool,
}

fn occupied_cells(cloud: &PointCloud, delta: f64) -> usize {
    let dim = cloud.dim();
    let origin = cloud.origin();
    let cell = |p: &[f64], k: usize| ((p[k] - origin[k]) / delta).floor() as i64;
    // mixed-radix u64 keys when the bounding grid is small enough
    let mut lo = vec![i64::MAX; dim];
    let mut hi = vec![i64::MIN; dim];
    for p in cloud.points() {
        for k in 0..dim {
            let c = cell(p, k);
            lo[k] = lo[k].min(c);
            hi[k] = hi[k].max(c);
        }
    }
    let extents: Vec<u128> = lo.iter().zip(&hi).map(|(l, h)| (h - l + 1) as u128).collect();
    if extents.iter().product::<u128>() <= u64::MAX as u128 {
        let mut keys: Vec<u64> = cloud
            .points()
            .map(|p| {
                let mut key = 0u64;
                for k in (0..dim).rev() {
                    key = key * extents[k] as u64 + (cell(p, k) - lo[k]) as u64;
                }
                key
            })
            .collect();
        keys.par_sort_unstable();
        keys.dedup();
        keys.len()
    } else {
        let set: HashSet<Vec<i64>> = cloud.points().map(|p| (0..dim).map(|k| cell(p, k)).collect()).collect();
        set.len()
    }
}

/// Slope of log N(δ) against log(1/δ), cells anchored at the cloud origin.
pub fn box_counting_dimension(cloud: &PointCloud, window: ScaleRange) -> Result<BoxCountResult, EstimatorError> {
    if cloud.is_empty() {
        return Err(EstimatorError::EmptyCloud);
    }
    let scales = window.values()?;
    let first = cloud.point(0);
    let degenerate = cloud.points().all(|p| p == first);
    let counts: Vec<usize> = scales.par_iter().map(|&d| occupied_cells(cloud, d)).collect();
    let x: Vec<f64> = scales.iter().map(|d| -d.ln()).collect();
    let y: Vec<f64> = counts.iter().map(|&c| (c as f64).ln()).collect();
    let (raw_slope, intercept) = if degenerate { (0.0, 0.0) } else { fit_line(&x, &y) };
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let ss_res: f64 = x.iter().zip(&y).map(|(a, b)| (b - raw_slope * a - intercept).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(BoxCountResult {
        scales,
        counts,
        slope: raw_slope.clamp(0.0, cloud.dim() as f64),
        raw_slope,
        r_squared,
        window,
        degenerate,
    })
}

/// Settings shared by every draw of a survey.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurveyConfig {
    pub level: usize,
    pub tol: f64,
    pub sup_samples: usize,
    pub cloud_size: usize,
    pub window: ScaleRange,
    pub agreement_tol: f64,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        SurveyConfig {
            level: 12,
            tol: 1e-6,
            sup_samples: 8,
            cloud_size: 1_000_000,
            window: ScaleRange::default(),
            agreement_tol: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurveyRow {
    pub draw: usize,
    pub t: Vec<f64>,
    pub s_n: f64,
    pub box_dim: f64,
    pub abs_gap: f64,
    pub within_tol: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurveyTable {
    /// A finite survey reports agreement frequency only; it cannot verify
    /// an almost-every-parameter statement.
    pub note: String,
    pub config: SurveyConfig,
    pub seed: u64,
    pub rows: Vec<SurveyRow>,
    pub agreement_fraction: Option<f64>,
}

impl SurveyTable {
    /// CSV with columns draw, t1..t_m, s_n, box_dim, abs_gap, within_tol.
    pub fn to_csv(&self, param_dim: usize) -> String {
        let mut out = String::from("draw");
        for k in 1..=param_dim {
            out.push_str(&format!(",t{k}"));
        }
        out.push_str(",s_n,box_dim,abs_gap,within_tol\n");
        for r in &self.rows {
            out.push_str(&r.draw.to_string());
            for t in &r.t {
                out.push_str(&format!(",{t}"));
            }
            out.push_str(&format!(",{},{},{},{}\n", r.s_n, r.box_dim, r.abs_gap, r.within_tol));
        }
        out
    }
}

/// Compares sₙ with box-counting estimates over random translations.
pub fn survey_translations(
    fam: &TranslationalFamily,
    n_draws: usize,
    config: &SurveyConfig,
    seed: u64,
) -> Result<SurveyTable, EstimatorError> {
    let d = fam.base().dim() as f64;
    let rows = (0..n_draws)
        .into_par_iter()
        .map(|draw| -> Result<SurveyRow, EstimatorError> {
            let mut rng = sampling::stream(seed, draw as u64);
            let t = fam.sample(&mut rng);
            let member = fam.member(&t)?;
            let s_n = singularity_dimension_with(&member, config.level, config.tol, config.sup_samples)?.s_star;
            let cloud = sample_attractor(
                &member,
                SampleMethod::ChaosGame,
                config.cloud_size,
                sampling::derive_seed(seed, draw as u64),
            )?;
            let box_dim = box_counting_dimension(&cloud, config.window)?.slope;
            let abs_gap = (box_dim - d.min(s_n)).abs();
            Ok(SurveyRow {
                draw,
                t,
                s_n,
                box_dim,
                abs_gap,
                within_tol: abs_gap <= config.agreement_tol,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let agreement_fraction = if rows.is_empty() {
        None
    } else {
        Some(rows.iter().filter(|r| r.within_tol).count() as f64 / rows.len() as f64)
    };
    Ok(SurveyTable {
        note: "statistical consistency check over random translations; agreement frequency is not a proof of an almost-everywhere statement".into(),
        config: config.clone(),
        seed,
        rows,
        agreement_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ifs::{DeclaredClass, SmoothMap};

    fn cantor() -> IfsSpec {
        let maps = vec![
            SmoothMap::parse(1, &["x1/3"], None).unwrap(),
            SmoothMap::parse(1, &["x1/3 + 2/3"], None).unwrap(),
        ];
        IfsSpec::new(maps, DomainBox::unit(1), vec![DeclaredClass::Affine]).unwrap()
    }

    #[test]
    fn chaos_game_stays_in_domain() {
        let c = sample_attractor(&cantor(), SampleMethod::ChaosGame, 10_000, 4).unwrap();
        assert_eq!(c.len(), 10_000);
        assert!(c.points().all(|p| (0.0..=1.0).contains(&p[0])));
        let again = sample_attractor(&cantor(), SampleMethod::ChaosGame, 10_000, 4).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn deterministic_cloud_size() {
        let c = sample_attractor(&cantor(), SampleMethod::Deterministic { depth: 10 }, 0, 0).unwrap();
        assert_eq!(c.len(), 1024);
        assert!(matches!(
            sample_attractor(&cantor(), SampleMethod::Deterministic { depth: 30 }, 0, 0),
            Err(EstimatorError::Budget(_))
        ));
    }

    #[test]
    fn box_count_examples() {
        let c = sample_attractor(&cantor(), SampleMethod::ChaosGame, 200_000, 1).unwrap();
        let r = box_counting_dimension(&c, ScaleRange::ternary(2, 8)).unwrap();
        assert!((r.slope - 2f64.ln() / 3f64.ln()).abs() < 0.05, "slope {}", r.slope);
        assert!(r.counts.windows(2).all(|w| w[0] <= w[1]));

        let single = PointCloud::new(1, vec![0.3], vec![0.0], Provenance::Uniform { seed: 0 });
        let r = box_counting_dimension(&single, ScaleRange::ternary(2, 8)).unwrap();
        assert_eq!(r.slope, 0.0);
        assert!(r.degenerate);

        let sq = uniform_cloud(&DomainBox::unit(2), 200_000, 2);
        let r = box_counting_dimension(&sq, ScaleRange::ternary(1, 4)).unwrap();
        assert!((r.slope - 2.0).abs() < 0.1, "slope {}", r.slope);
    }

    #[test]
    fn scale_range_values() {
        let v = ScaleRange::ternary(2, 4).values().unwrap();
        assert_eq!(v, vec![1.0 / 9.0, 3f64.powi(-3), 1.0 / 81.0]);
        assert!(ScaleRange {
            largest: 0.1,
            smallest: 0.2,
            n_scales: 3
        }
        .values()
        .is_err());
    }

    #[test]
    fn empty_survey() {
        let base = IfsSpec::new(
            vec![
                SmoothMap::parse(1, &["x1/3"], None).unwrap(),
                SmoothMap::parse(1, &["x1/3 + 2/3"], None).unwrap(),
            ],
            DomainBox::new(vec![-0.5], vec![1.5]).unwrap(),
            vec![DeclaredClass::Affine],
        )
        .unwrap();
        let fam = TranslationalFamily::new(base, 0.1, crate::ifs::ParamShape::Ball).unwrap();
        let t = survey_translations(&fam, 0, &SurveyConfig::default(), 1).unwrap();
        assert!(t.rows.is_empty() && t.agreement_fraction.is_none());
        assert_eq!(t.to_csv(2), "draw,t1,t2,s_n,box_dim,abs_gap,within_tol\n");
    }
}
