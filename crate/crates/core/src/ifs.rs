//! C¹ iterated function systems on boxes: maps, chained Jacobians, the
//! coding map, contraction metadata, direct products and translational
//! families.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{differentiate, parse_expr, EvalError, Expr, ParseError};
use crate::sampling;
use crate::smallmat::{singular_values, Mat, MAX_DIM};
use crate::symbolic::{InfiniteWord, Word, MAX_ALPHABET};

/// Tolerance for "inside the closed domain" checks.
const DOMAIN_SLACK: f64 = 1e-12;
/// Inflation below which a grid supremum counts as certified.
const CERTIFY_INFLATION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IfsError {
    #[error("{context}: {source}")]
    Parse {
        context: String,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("dimension must be in 1..=8, got {0}")]
    BadDimension(usize),
    #[error("alphabet must have at least 2 symbols")]
    AlphabetTooSmall,
    #[error("alphabet of {0} symbols exceeds the supported maximum of 16")]
    AlphabetTooLarge(usize),
    #[error("map {map}: expected {expected} {what}, got {got}")]
    Shape {
        map: usize,
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("domain box needs lower < upper in every coordinate")]
    BadDomain,
    #[error("map {map} Jacobian entry ({row}, {col}) disagrees with finite differences ({symbolic} vs {numeric})")]
    JacobianMismatch {
        map: usize,
        row: usize,
        col: usize,
        symbolic: f64,
        numeric: f64,
    },
    #[error("map {map} sends {point:?} outside the domain")]
    MapLeavesDomain { map: usize, point: Vec<f64> },
    #[error("not a contraction system: theta = {theta}")]
    NotContraction { theta: f64 },
    #[error("translation leaves domain (map {map})")]
    TranslationLeavesDomain { map: usize },
    #[error("translation vector has length {got}, expected {expected}")]
    TranslationLength { expected: usize, got: usize },
    #[error("direct product factors have different alphabet sizes ({0} vs {1})")]
    MismatchedAlphabet(usize, usize),
    #[error("direct product needs at least one factor")]
    EmptyProduct,
    #[error("family radius must be positive and keep every translated map inside the domain (radius {radius}, margin {margin})")]
    BadFamilyRadius { radius: f64, margin: f64 },
    #[error("grid needs at least 2 points per axis")]
    BadGrid,
}

/// A C¹ map given by component expressions and Jacobian expressions.
#[derive(Debug, Clone)]
pub struct SmoothMap {
    dim: usize,
    components: Vec<Expr>,
    /// Row-major: entry (r, c) is ∂component_r/∂x_c.
    jacobian: Vec<Expr>,
    constant_jacobian: Option<Mat>,
}

impl SmoothMap {
    /// Builds a map; the Jacobian is differentiated symbolically when absent.
    pub fn new(components: Vec<Expr>, jacobian: Option<Vec<Expr>>) -> Result<Self, IfsError> {
        let dim = components.len();
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(IfsError::BadDimension(dim));
        }
        let jacobian = match jacobian {
            Some(j) => {
                if j.len() != dim * dim {
                    return Err(IfsError::Shape {
                        map: 0,
                        what: "Jacobian entries",
                        expected: dim * dim,
                        got: j.len(),
                    });
                }
                j
            }
            None => components
                .iter()
                .flat_map(|c| (1..=dim).map(move |k| differentiate(c, k)))
                .collect(),
        };
        let constant_jacobian = if jacobian.iter().all(Expr::is_constant) {
            let values: Result<Vec<f64>, _> = jacobian.iter().map(|e| e.eval(&[])).collect();
            Some(Mat::from_row_major(dim, &values?).expect("dimension checked"))
        } else {
            None
        };
        Ok(SmoothMap {
            dim,
            components,
            jacobian,
            constant_jacobian,
        })
    }

    /// Parses component (and optional Jacobian) strings.
    pub fn parse(dim: usize, components: &[&str], jacobian: Option<&[&str]>) -> Result<Self, IfsError> {
        let parse = |src: &str, what: String| parse_expr(src, dim).map_err(|source| IfsError::Parse { context: what, source });
        let comps = components
            .iter()
            .enumerate()
            .map(|(k, s)| parse(s, format!("component {}", k + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        if comps.len() != dim {
            return Err(IfsError::Shape {
                map: 0,
                what: "components",
                expected: dim,
                got: comps.len(),
            });
        }
        let jac = jacobian
            .map(|entries| {
                entries
                    .iter()
                    .enumerate()
                    .map(|(k, s)| parse(s, format!("jacobian entry {}", k + 1)))
                    .collect::<Result<Vec<_>, _>>()
            })
            .transpose()?;
        SmoothMap::new(comps, jac)
    }

    /// x ↦ A x + b.
    pub fn affine(a: &Mat, b: &[f64]) -> Self {
        let dim = a.dim();
        assert_eq!(b.len(), dim, "offset length");
        let components = (0..dim)
            .map(|r| {
                let mut e = Expr::Const(b[r]);
                for c in 0..dim {
                    let coef = a[(r, c)];
                    if coef != 0.0 {
                        let term = Expr::Binary(
                            crate::expr::BinaryOp::Mul,
                            Box::new(Expr::Const(coef)),
                            Box::new(Expr::Var(c + 1)),
                        );
                        e = Expr::Binary(crate::expr::BinaryOp::Add, Box::new(e), Box::new(term));
                    }
                }
                e
            })
            .collect();
        SmoothMap::new(components, None).expect("affine map is well formed")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn jacobian_exprs(&self) -> &[Expr] {
        &self.jacobian
    }

    pub fn jacobian_entry(&self, row: usize, col: usize) -> &Expr {
        &self.jacobian[row * self.dim + col]
    }

    pub fn has_constant_jacobian(&self) -> bool {
        self.constant_jacobian.is_some()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (slot, c) in out.iter_mut().zip(&self.components) {
            *slot = c.eval(x)?;
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    /// D_x f.
    pub fn jacobian_at(&self, x: &[f64]) -> Result<Mat, EvalError> {
        if let Some(m) = self.constant_jacobian {
            return Ok(m);
        }
        let mut m = Mat::zeros(self.dim);
        for r in 0..self.dim {
            for c in 0..self.dim {
                m[(r, c)] = self.jacobian[r * self.dim + c].eval(x)?;
            }
        }
        Ok(m)
    }

    /// Central finite-difference Jacobian with step `h` (scaled by |x|).
    pub fn finite_difference_jacobian(&self, x: &[f64], h: f64) -> Result<Mat, EvalError> {
        let mut m = Mat::zeros(self.dim);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        for c in 0..self.dim {
            let step = h * x[c].abs().max(1.0);
            xp[c] = x[c] + step;
            xm[c] = x[c] - step;
            let fp = self.eval(&xp)?;
            let fm = self.eval(&xm)?;
            for r in 0..self.dim {
                m[(r, c)] = (fp[r] - fm[r]) / (2.0 * step);
            }
            xp[c] = x[c];
            xm[c] = x[c];
        }
        Ok(m)
    }

    fn shifted(&self, offset: usize, total_dim: usize) -> (Vec<Expr>, Vec<Vec<Expr>>) {
        let comps = self.components.iter().map(|e| e.shift_vars(offset)).collect();
        let rows = (0..self.dim)
            .map(|r| {
                let mut row = vec![Expr::Const(0.0); total_dim];
                for c in 0..self.dim {
                    row[offset + c] = self.jacobian[r * self.dim + c].shift_vars(offset);
                }
                row
            })
            .collect();
        (comps, rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainFlag {
    Convex,
    Connected,
}

/// Axis-aligned box Z = ∏ [lowerₖ, upperₖ].
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
    flags: Vec<DomainFlag>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, IfsError> {
        if lower.len() != upper.len() || lower.is_empty() || lower.len() > MAX_DIM {
            return Err(IfsError::BadDimension(lower.len()));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite())
        {
            return Err(IfsError::BadDomain);
        }
        Ok(DomainBox {
            lower,
            upper,
            flags: vec![DomainFlag::Convex, DomainFlag::Connected],
        })
    }

    pub fn unit(dim: usize) -> Self {
        DomainBox::new(vec![0.0; dim], vec![1.0; dim]).expect("unit box")
    }

    pub fn with_flags(mut self, mut flags: Vec<DomainFlag>) -> Self {
        flags.sort();
        flags.dedup();
        self.flags = flags;
        self
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn flags(&self) -> &[DomainFlag] {
        &self.flags
    }

    /// Boxes are convex and connected whatever flags were declared.
    pub fn is_convex(&self) -> bool {
        true
    }

    pub fn is_connected(&self) -> bool {
        true
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn diam(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l) * (u - l))
            .sum::<f64>()
            .sqrt()
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    /// Closed-box membership with absolute slack.
    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= l - slack && *v <= u + slack)
    }

    /// Membership in the box shrunk by `margin` on every side.
    pub fn contains_with_margin(&self, x: &[f64], margin: f64) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= l + margin && *v <= u - margin)
    }

    pub fn grid_len(&self, per_axis: usize) -> usize {
        per_axis.pow(self.dim() as u32)
    }

    /// Grid point `index` of the uniform grid with `per_axis` points per
    /// axis (endpoints included), axis 1 varying fastest.
    pub fn grid_point(&self, mut index: usize, per_axis: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|k| {
                let i = index % per_axis;
                index /= per_axis;
                self.lower[k] + (self.upper[k] - self.lower[k]) * i as f64 / (per_axis - 1) as f64
            })
            .collect()
    }

    /// Quasi-random interior point number `index`.
    pub fn halton_point(&self, index: u64) -> Vec<f64> {
        sampling::halton(index, self.dim())
            .into_iter()
            .enumerate()
            .map(|(k, u)| self.lower[k] + (self.upper[k] - self.lower[k]) * u)
            .collect()
    }

    pub fn uniform_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim())
            .map(|k| rng.random_range(self.lower[k]..=self.upper[k]))
            .collect()
    }

    fn product(boxes: &[&DomainBox]) -> DomainBox {
        let lower = boxes.iter().flat_map(|b| b.lower.iter().copied()).collect();
        let upper = boxes.iter().flat_map(|b| b.upper.iter().copied()).collect();
        let mut flags: Vec<DomainFlag> = vec![DomainFlag::Convex, DomainFlag::Connected];
        flags.retain(|f| boxes.iter().all(|b| b.flags.contains(f)));
        DomainBox { lower, upper, flags }
    }
}

/// Structural classes a system may declare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeclaredClass {
    Affine,
    Conformal,
    LowerTriangular,
    Product,
}

/// Lipschitz metadata from a grid sweep over the domain.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ContractionData {
    /// max over the grid of ‖D fᵢ‖.
    pub rho: Vec<f64>,
    /// Largest change of D fᵢ between neighbouring grid points.
    pub inflation: Vec<f64>,
    /// max ρᵢ.
    pub theta: f64,
    /// max (ρᵢ + inflationᵢ), used where a guaranteed bound is needed.
    pub theta_upper: f64,
    pub certified: bool,
    pub grid_per_axis: usize,
    pub grid_spacing: Vec<f64>,
}

/// A C¹ IFS on a box with optional translations fᵢ + tᵢ.
#[derive(Debug, Clone)]
pub struct IfsSpec {
    dim: usize,
    maps: Vec<SmoothMap>,
    domain: DomainBox,
    declared: Vec<DeclaredClass>,
    translations: Vec<Vec<f64>>,
    factors: Vec<IfsSpec>,
    contraction: ContractionData,
    interior: bool,
}

/// Grid density used when a caller does not pick one.
pub fn default_grid_per_axis(dim: usize) -> usize {
    match dim {
        1 => 257,
        2 => 41,
        3 => 13,
        _ => ((4096f64).powf(1.0 / dim as f64).floor() as usize).max(2),
    }
}

impl IfsSpec {
    pub fn new(maps: Vec<SmoothMap>, domain: DomainBox, declared: Vec<DeclaredClass>) -> Result<Self, IfsError> {
        Self::with_translations(maps, domain, declared, None)
    }

    pub fn with_translations(
        maps: Vec<SmoothMap>,
        domain: DomainBox,
        mut declared: Vec<DeclaredClass>,
        translations: Option<Vec<Vec<f64>>>,
    ) -> Result<Self, IfsError> {
        let dim = domain.dim();
        if maps.len() < 2 {
            return Err(IfsError::AlphabetTooSmall);
        }
        if maps.len() > MAX_ALPHABET {
            return Err(IfsError::AlphabetTooLarge(maps.len()));
        }
        for (k, m) in maps.iter().enumerate() {
            if m.dim() != dim {
                return Err(IfsError::Shape {
                    map: k + 1,
                    what: "components",
                    expected: dim,
                    got: m.dim(),
                });
            }
        }
        let translations = match translations {
            Some(t) => {
                if t.len() != maps.len() || t.iter().any(|v| v.len() != dim) {
                    return Err(IfsError::TranslationLength {
                        expected: maps.len() * dim,
                        got: t.iter().map(Vec::len).sum(),
                    });
                }
                t
            }
            None => vec![vec![0.0; dim]; maps.len()],
        };
        declared.sort();
        declared.dedup();
        let grid = default_grid_per_axis(dim);
        check_jacobians(&maps, &domain)?;
        let mut spec = IfsSpec {
            dim,
            maps,
            domain,
            declared,
            translations,
            factors: Vec::new(),
            contraction: ContractionData {
                rho: Vec::new(),
                inflation: Vec::new(),
                theta: 0.0,
                theta_upper: 0.0,
                certified: false,
                grid_per_axis: grid,
                grid_spacing: Vec::new(),
            },
            interior: false,
        };
        spec.contraction = contraction_data(&spec, grid)?;
        spec.interior = spec.check_inclusion(grid)?;
        Ok(spec)
    }

    /// Checks fᵢ(grid) ⊂ Z (closed) and reports whether the inclusion is
    /// strict (into the interior).
    fn check_inclusion(&self, grid: usize) -> Result<bool, IfsError> {
        let mut strict = true;
        let mut image = vec![0.0; self.dim];
        for idx in 0..self.domain.grid_len(grid) {
            let x = self.domain.grid_point(idx, grid);
            for i in 0..self.maps.len() {
                self.apply_into(i, &x, &mut image)?;
                if !self.domain.contains(&image, DOMAIN_SLACK) {
                    return Err(IfsError::MapLeavesDomain { map: i + 1, point: x });
                }
                if !self.domain.contains_with_margin(&image, DOMAIN_SLACK) {
                    strict = false;
                }
            }
        }
        Ok(strict)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alphabet_size(&self) -> usize {
        self.maps.len()
    }

    pub fn maps(&self) -> &[SmoothMap] {
        &self.maps
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn declared_class(&self) -> &[DeclaredClass] {
        &self.declared
    }

    pub fn translations(&self) -> &[Vec<f64>] {
        &self.translations
    }

    /// Factors when the system was built as a direct product.
    pub fn factors(&self) -> &[IfsSpec] {
        &self.factors
    }

    pub fn contraction(&self) -> &ContractionData {
        &self.contraction
    }

    pub fn theta(&self) -> f64 {
        self.contraction.theta
    }

    /// Whether every fᵢ maps the grid strictly inside the domain.
    pub fn maps_into_interior(&self) -> bool {
        self.interior
    }

    /// All Jacobians are constant, so cylinder suprema are exact.
    pub fn is_affine(&self) -> bool {
        self.maps.iter().all(SmoothMap::has_constant_jacobian)
    }

    /// fᵢ(x) + tᵢ with a 0-based map index.
    pub fn apply_into(&self, i: usize, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        self.maps[i].eval_into(x, out)?;
        for (o, t) in out.iter_mut().zip(&self.translations[i]) {
            *o += t;
        }
        Ok(())
    }

    /// Map for symbol `s` (1-based).
    pub fn apply_symbol(&self, s: u8, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.dim];
        self.apply_into(s as usize - 1, x, &mut out)?;
        Ok(out)
    }

    /// f_w(x) = f_{w₁}∘…∘f_{wₙ}(x).
    pub fn apply_word(&self, w: &Word, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut p = x.to_vec();
        let mut q = vec![0.0; self.dim];
        for &s in w.symbols().iter().rev() {
            self.apply_into(s as usize - 1, &p, &mut q)?;
            std::mem::swap(&mut p, &mut q);
        }
        Ok(p)
    }

    /// D_x fᵢ for a 0-based map index.
    pub fn jacobian(&self, i: usize, x: &[f64]) -> Result<Mat, EvalError> {
        self.maps[i].jacobian_at(x)
    }

    /// Jacobian of f_{w₁}∘…∘f_{wₙ} at x by the chain rule:
    /// D_{p₁}f_{w₁} · D_{p₂}f_{w₂} ⋯ D_{pₙ}f_{wₙ} with pₙ = x and
    /// pₖ = f_{wₖ₊₁…wₙ}(x).
    pub fn compose_jacobian(&self, w: &Word, x: &[f64]) -> Result<Mat, EvalError> {
        let mut m = Mat::identity(self.dim);
        let mut p = x.to_vec();
        let mut q = vec![0.0; self.dim];
        for &s in w.symbols().iter().rev() {
            let i = s as usize - 1;
            m = &self.maps[i].jacobian_at(&p)? * &m;
            self.apply_into(i, &p, &mut q)?;
            std::mem::swap(&mut p, &mut q);
        }
        Ok(m)
    }

    fn apply_shifted_into(&self, i: usize, x: &[f64], extra: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        self.apply_into(i, x, out)?;
        for (o, t) in out.iter_mut().zip(&extra[i * self.dim..(i + 1) * self.dim]) {
            *o += t;
        }
        Ok(())
    }

    /// f_w of the system with maps fᵢ + tᵢ + extraᵢ, without building the
    /// translated system (`extra` has length ℓd).
    pub fn apply_word_shifted(&self, w: &Word, x: &[f64], extra: &[f64]) -> Result<Vec<f64>, EvalError> {
        assert_eq!(extra.len(), self.alphabet_size() * self.dim, "translation length");
        let mut p = x.to_vec();
        let mut q = vec![0.0; self.dim];
        for &s in w.symbols().iter().rev() {
            self.apply_shifted_into(s as usize - 1, &p, extra, &mut q)?;
            std::mem::swap(&mut p, &mut q);
        }
        Ok(p)
    }

    /// [`IfsSpec::compose_jacobian`] along the orbit of the shifted system.
    pub fn compose_jacobian_shifted(&self, w: &Word, x: &[f64], extra: &[f64]) -> Result<Mat, EvalError> {
        assert_eq!(extra.len(), self.alphabet_size() * self.dim, "translation length");
        let mut m = Mat::identity(self.dim);
        let mut p = x.to_vec();
        let mut q = vec![0.0; self.dim];
        for &s in w.symbols().iter().rev() {
            let i = s as usize - 1;
            m = &self.maps[i].jacobian_at(&p)? * &m;
            self.apply_shifted_into(i, &p, extra, &mut q)?;
            std::mem::swap(&mut p, &mut q);
        }
        Ok(m)
    }

    /// Π(i) of the shifted system to absolute precision `tol`.
    pub fn code_point_shifted(&self, i: &InfiniteWord, tol: f64, extra: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.apply_word_shifted(&i.prefix(self.depth_for_precision(tol)), &self.domain.center(), extra)
    }

    /// Truncated coding map f_{i|n}(center) with the a-priori error bound
    /// θⁿ·diam(Z).
    pub fn code_point(&self, i: &InfiniteWord, n: usize) -> Result<CodedPoint, EvalError> {
        let point = self.apply_word(&i.prefix(n), &self.domain.center())?;
        Ok(CodedPoint {
            point,
            error_bound: self.contraction.theta_upper.powi(n as i32) * self.domain.diam(),
        })
    }

    /// Depth at which the coding-map error bound drops below `tol`.
    pub fn depth_for_precision(&self, tol: f64) -> usize {
        let theta = self.contraction.theta_upper;
        let diam = self.domain.diam();
        if diam <= tol || theta <= 0.0 {
            return 1;
        }
        ((tol / diam).ln() / theta.ln()).ceil().max(1.0) as usize
    }

    /// Π(i) to absolute precision `tol`.
    pub fn code_point_precise(&self, i: &InfiniteWord, tol: f64) -> Result<CodedPoint, EvalError> {
        self.code_point(i, self.depth_for_precision(tol))
    }

    /// The same system with translations tᵢ added (`t` has length ℓd).
    pub fn translate(&self, t: &[f64]) -> Result<IfsSpec, IfsError> {
        let expected = self.alphabet_size() * self.dim;
        if t.len() != expected {
            return Err(IfsError::TranslationLength { expected, got: t.len() });
        }
        let mut out = self.clone();
        for (i, chunk) in t.chunks(self.dim).enumerate() {
            for (slot, v) in out.translations[i].iter_mut().zip(chunk) {
                *slot += v;
            }
        }
        match out.check_inclusion(self.contraction.grid_per_axis) {
            Ok(strict) => out.interior = strict,
            Err(IfsError::MapLeavesDomain { map, .. }) => return Err(IfsError::TranslationLeavesDomain { map }),
            Err(e) => return Err(e),
        }
        for f in &mut out.factors {
            f.translations = vec![vec![0.0; f.dim]; f.alphabet_size()];
        }
        Ok(out)
    }

    /// Flattened translation vector in ℝ^{ℓd}.
    pub fn translation_vector(&self) -> Vec<f64> {
        self.translations.iter().flatten().copied().collect()
    }
}

/// Truncated coding-map value.
#[derive(Debug, Clone, PartialEq)]
pub struct CodedPoint {
    pub point: Vec<f64>,
    pub error_bound: f64,
}

fn check_jacobians(maps: &[SmoothMap], domain: &DomainBox) -> Result<(), IfsError> {
    for (k, m) in maps.iter().enumerate() {
        for idx in 0..8 {
            let x = domain.halton_point(idx);
            let sym = m.jacobian_at(&x)?;
            let fd = m.finite_difference_jacobian(&x, 1e-6)?;
            for r in 0..m.dim() {
                for c in 0..m.dim() {
                    let (a, b) = (sym[(r, c)], fd[(r, c)]);
                    if (a - b).abs() > 1e-5 * b.abs().max(1.0) {
                        return Err(IfsError::JacobianMismatch {
                            map: k + 1,
                            row: r + 1,
                            col: c + 1,
                            symbolic: a,
                            numeric: b,
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

/// Grid estimate of ρᵢ = sup_Z ‖D fᵢ‖ with a neighbour-variation inflation.
///
/// Affine maps are exact. Otherwise `certified` is set only when the
/// largest Jacobian change between neighbouring grid points is below 1e-6.
pub fn contraction_data(f: &IfsSpec, grid_per_axis: usize) -> Result<ContractionData, IfsError> {
    if grid_per_axis < 2 {
        return Err(IfsError::BadGrid);
    }
    let domain = f.domain();
    let dim = f.dim();
    let n_points = domain.grid_len(grid_per_axis);
    let mut rho = Vec::with_capacity(f.alphabet_size());
    let mut inflation = Vec::with_capacity(f.alphabet_size());
    for map in f.maps() {
        if map.has_constant_jacobian() {
            rho.push(map.jacobian_at(&domain.center())?.norm());
            inflation.push(0.0);
            continue;
        }
        // (max norm, max neighbour variation); max is order independent
        let (r, v) = (0..n_points)
            .into_par_iter()
            .map(|idx| -> Result<(f64, f64), IfsError> {
                let x = domain.grid_point(idx, grid_per_axis);
                let j = map.jacobian_at(&x)?;
                let mut var: f64 = 0.0;
                let mut stride = 1;
                for _ in 0..dim {
                    let coord = (idx / stride) % grid_per_axis;
                    if coord + 1 < grid_per_axis {
                        let y = domain.grid_point(idx + stride, grid_per_axis);
                        let jy = map.jacobian_at(&y)?;
                        var = var.max(jy.sub(&j).norm());
                    }
                    stride *= grid_per_axis;
                }
                Ok((j.norm(), var))
            })
            .try_reduce(|| (0.0, 0.0), |a, b| Ok((a.0.max(b.0), a.1.max(b.1))))?;
        rho.push(r);
        inflation.push(v);
    }
    let theta = rho.iter().copied().fold(0.0, f64::max);
    let theta_upper = rho.iter().zip(&inflation).map(|(r, i)| r + i).fold(0.0, f64::max);
    if theta >= 1.0 {
        return Err(IfsError::NotContraction { theta });
    }
    let certified = f.is_affine() || inflation.iter().all(|v| *v < CERTIFY_INFLATION);
    Ok(ContractionData {
        rho,
        inflation,
        theta,
        theta_upper: theta_upper.min(1.0 - f64::EPSILON).max(theta),
        certified,
        grid_per_axis,
        grid_spacing: domain
            .lower()
            .iter()
            .zip(domain.upper())
            .map(|(l, u)| (u - l) / (grid_per_axis - 1) as f64)
            .collect(),
    })
}

/// fᵢ(x₁,…,xₙ) = (f_{i,1}(x₁),…,f_{i,n}(xₙ)) on the product box.
pub fn direct_product(components: &[IfsSpec]) -> Result<IfsSpec, IfsError> {
    let first = components.first().ok_or(IfsError::EmptyProduct)?;
    let ell = first.alphabet_size();
    for c in components {
        if c.alphabet_size() != ell {
            return Err(IfsError::MismatchedAlphabet(ell, c.alphabet_size()));
        }
    }
    let total: usize = components.iter().map(IfsSpec::dim).sum();
    if total > MAX_DIM {
        return Err(IfsError::BadDimension(total));
    }
    let mut maps = Vec::with_capacity(ell);
    let mut translations = Vec::with_capacity(ell);
    for i in 0..ell {
        let mut comps = Vec::with_capacity(total);
        let mut rows = Vec::with_capacity(total);
        let mut t = Vec::with_capacity(total);
        let mut offset = 0;
        for c in components {
            let (cs, rs) = c.maps[i].shifted(offset, total);
            comps.extend(cs);
            rows.extend(rs);
            t.extend(c.translations[i].iter().copied());
            offset += c.dim();
        }
        maps.push(SmoothMap::new(comps, Some(rows.into_iter().flatten().collect()))?);
        translations.push(t);
    }
    let boxes: Vec<&DomainBox> = components.iter().map(|c| &c.domain).collect();
    let domain = DomainBox::product(&boxes);
    let mut declared = vec![DeclaredClass::Product];
    if components.iter().all(|c| c.declared.contains(&DeclaredClass::Affine)) {
        declared.push(DeclaredClass::Affine);
    }
    let mut spec = IfsSpec::with_translations(maps, domain, declared, Some(translations))?;
    spec.factors = components.to_vec();
    Ok(spec)
}

/// Shape of the parameter region Δ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamShape {
    /// Euclidean ball |𝔱| < r₀.
    #[default]
    Ball,
    /// Cube max |𝔱ₖ| < r₀.
    Cube,
}

/// The systems {fᵢ + tᵢ} for 𝔱 in Δ.
#[derive(Debug, Clone)]
pub struct TranslationalFamily {
    base: IfsSpec,
    radius: f64,
    shape: ParamShape,
}

impl TranslationalFamily {
    /// Validates that every translate with |tᵢ|∞ < r₀ keeps the grid images
    /// inside the domain: fᵢ(grid) must lie r₀ away from the boundary.
    pub fn new(base: IfsSpec, radius: f64, shape: ParamShape) -> Result<Self, IfsError> {
        let grid = base.contraction.grid_per_axis;
        let mut margin = f64::INFINITY;
        let mut image = vec![0.0; base.dim];
        for idx in 0..base.domain.grid_len(grid) {
            let x = base.domain.grid_point(idx, grid);
            for i in 0..base.alphabet_size() {
                base.apply_into(i, &x, &mut image)?;
                for k in 0..base.dim {
                    margin = margin
                        .min(image[k] - base.domain.lower[k])
                        .min(base.domain.upper[k] - image[k]);
                }
            }
        }
        if !(radius > 0.0) || radius > margin + DOMAIN_SLACK {
            return Err(IfsError::BadFamilyRadius { radius, margin });
        }
        Ok(TranslationalFamily { base, radius, shape })
    }

    pub fn base(&self) -> &IfsSpec {
        &self.base
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn shape(&self) -> ParamShape {
        self.shape
    }

    /// Dimension ℓd of the parameter space.
    pub fn param_dim(&self) -> usize {
        self.base.alphabet_size() * self.base.dim()
    }

    pub fn contains(&self, t: &[f64]) -> bool {
        match self.shape {
            ParamShape::Ball => t.iter().map(|x| x * x).sum::<f64>().sqrt() < self.radius,
            ParamShape::Cube => t.iter().all(|x| x.abs() < self.radius),
        }
    }

    /// Uniform draw from Δ.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self.shape {
            ParamShape::Ball => {
                // strict interior
                let mut t = sampling::uniform_in_ball(rng, self.param_dim(), self.radius);
                while !self.contains(&t) {
                    t = sampling::uniform_in_ball(rng, self.param_dim(), self.radius);
                }
                t
            }
            ParamShape::Cube => sampling::uniform_in_cube(rng, self.param_dim(), self.radius),
        }
    }

    /// The member of the family at parameter `t`.
    pub fn member(&self, t: &[f64]) -> Result<IfsSpec, IfsError> {
        self.base.translate(t)
    }
}

/// Singular values of every map's Jacobian at the domain center.
pub fn center_spectra(f: &IfsSpec) -> Result<Vec<Vec<f64>>, EvalError> {
    let c = f.domain().center();
    (0..f.alphabet_size())
        .map(|i| Ok(singular_values(&f.jacobian(i, &c)?).values().to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smallmat::z_min;

    fn cantor() -> IfsSpec {
        let maps = vec![
            SmoothMap::parse(1, &["x1/3"], None).unwrap(),
            SmoothMap::parse(1, &["x1/3 + 2/3"], None).unwrap(),
        ];
        IfsSpec::new(maps, DomainBox::unit(1), vec![DeclaredClass::Affine]).unwrap()
    }

    fn quadratic() -> IfsSpec {
        let maps = vec![
            SmoothMap::parse(1, &["x1/3 + 0.05*x1^2"], None).unwrap(),
            SmoothMap::parse(1, &["x1/3 + 0.6"], None).unwrap(),
        ];
        IfsSpec::new(maps, DomainBox::unit(1), vec![]).unwrap()
    }

    fn iw(s: &str) -> InfiniteWord {
        s.parse().unwrap()
    }

    #[test]
    fn affine_jacobian_is_constant() {
        let m = SmoothMap::affine(&Mat::identity(2).scale(0.3), &[0.1, 0.2]);
        assert!(m.has_constant_jacobian());
        let j = m.jacobian_at(&[0.7, 0.1]).unwrap();
        assert_eq!(j, Mat::identity(2).scale(0.3));
    }

    #[test]
    fn jacobian_examples() {
        let q = SmoothMap::parse(1, &["x1/3 + 0.05*x1^2"], None).unwrap();
        let j = q.jacobian_at(&[1.0]).unwrap();
        assert!((j[(0, 0)] - (1.0 / 3.0 + 0.1)).abs() < 1e-15);
        let fd = q.finite_difference_jacobian(&[1.0], 1e-6).unwrap();
        assert!((fd[(0, 0)] - j[(0, 0)]).abs() < 1e-8);

        let t = SmoothMap::parse(2, &["0.3*x1", "0.2*x1 + 0.25*x2 + 0.01*sin(x1)"], None).unwrap();
        let j = t.jacobian_at(&[0.0, 0.0]).unwrap();
        let expected = [0.3, 0.0, 0.21, 0.25];
        for (a, b) in j.to_row_major().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn compose_jacobian_examples() {
        let f = quadratic();
        let w: Word = "11".parse().unwrap();
        let j = f.compose_jacobian(&w, &[0.0]).unwrap();
        assert!((j[(0, 0)] - 1.0 / 9.0).abs() < 1e-15);
        let j = f.compose_jacobian(&w, &[1.0]).unwrap();
        let inner = 1.0 / 3.0 + 0.05;
        let expected = (1.0 / 3.0 + 0.1 * inner) * (1.0 / 3.0 + 0.1);
        assert!((j[(0, 0)] - expected).abs() < 1e-15);
        assert!((j[(0, 0)] - 0.1610556).abs() < 1e-7);
        // composed map derivative by central differences
        let h = 1e-6;
        let fd = (f.apply_word(&w, &[1.0 + h]).unwrap()[0] - f.apply_word(&w, &[1.0 - h]).unwrap()[0]) / (2.0 * h);
        assert!((fd - j[(0, 0)]).abs() < 1e-8);
    }

    #[test]
    fn compose_affine_is_matrix_product() {
        let a = Mat::from_rows(&[[0.3, 0.0], [0.2, 0.25]]);
        let b = Mat::from_rows(&[[0.35, 0.0], [0.0, 0.3]]);
        let f = IfsSpec::new(
            vec![SmoothMap::affine(&a, &[0.05, 0.05]), SmoothMap::affine(&b, &[0.6, 0.6])],
            DomainBox::unit(2),
            vec![DeclaredClass::Affine],
        )
        .unwrap();
        let w: Word = "121".parse().unwrap();
        let expected = &(&a * &b) * &a;
        let got = f.compose_jacobian(&w, &[0.4, 0.4]).unwrap();
        assert!(got.sub(&expected).max_abs() < 1e-16);
    }

    #[test]
    fn coding_map_examples() {
        let f = cantor();
        let p = f.code_point(&iw("pre:|per:1"), 30).unwrap();
        assert!(p.point[0].abs() <= p.error_bound);
        assert!((p.error_bound - 3f64.powi(-30)).abs() < 1e-25);
        let p = f.code_point_precise(&iw("pre:|per:2"), 1e-12).unwrap();
        assert!((p.point[0] - 1.0).abs() < 1e-12);
        let p = f.code_point_precise(&iw("pre:1|per:2"), 1e-12).unwrap();
        assert!((p.point[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn contraction_examples() {
        let c = cantor().contraction().clone();
        assert!((c.theta - 1.0 / 3.0).abs() < 1e-15 && c.certified);

        let q = quadratic();
        let c = contraction_data(&q, 257).unwrap();
        assert!((c.rho[0] - (1.0 / 3.0 + 0.1)).abs() < 1e-12);
        assert!(!c.certified);
        assert!(c.inflation[0] > 0.0 && c.inflation[0] < 1e-3);

        let a = Mat::from_rows(&[[0.3, 0.0], [0.2, 0.25]]);
        let b = Mat::from_rows(&[[0.35, 0.0], [0.0, 0.3]]);
        let f = IfsSpec::new(
            vec![SmoothMap::affine(&a, &[0.05, 0.05]), SmoothMap::affine(&b, &[0.6, 0.6])],
            DomainBox::unit(2),
            vec![],
        )
        .unwrap();
        let c = f.contraction();
        assert!((c.rho[0] - 0.395695).abs() < 1e-6);
        assert!((c.rho[1] - 0.35).abs() < 1e-15);
        assert!(c.certified);
    }

    #[test]
    fn non_contraction_is_rejected() {
        let maps = vec![
            SmoothMap::parse(1, &["x1"], None).unwrap(),
            SmoothMap::parse(1, &["x1/2"], None).unwrap(),
        ];
        assert!(matches!(
            IfsSpec::new(maps, DomainBox::unit(1), vec![]),
            Err(IfsError::NotContraction { .. })
        ));
    }

    #[test]
    fn escaping_map_is_rejected() {
        let maps = vec![
            SmoothMap::parse(1, &["x1/3"], None).unwrap(),
            SmoothMap::parse(1, &["x1/3 + 0.9"], None).unwrap(),
        ];
        assert!(matches!(
            IfsSpec::new(maps, DomainBox::unit(1), vec![]),
            Err(IfsError::MapLeavesDomain { map: 2, .. })
        ));
    }

    #[test]
    fn wrong_user_jacobian_is_rejected() {
        let m = SmoothMap::parse(1, &["x1^2/4"], Some(&["x1/4"])).unwrap();
        let maps = vec![m, SmoothMap::parse(1, &["x1/3"], None).unwrap()];
        assert!(matches!(
            IfsSpec::new(maps, DomainBox::unit(1), vec![]),
            Err(IfsError::JacobianMismatch { map: 1, .. })
        ));
    }

    #[test]
    fn single_map_is_rejected() {
        let maps = vec![SmoothMap::parse(1, &["x1/3"], None).unwrap()];
        assert_eq!(
            IfsSpec::new(maps, DomainBox::unit(1), vec![]).unwrap_err(),
            IfsError::AlphabetTooSmall
        );
    }

    #[test]
    fn direct_product_examples() {
        let p = direct_product(&[cantor(), cantor()]).unwrap();
        assert_eq!(p.dim(), 2);
        assert_eq!(p.alphabet_size(), 2);
        let j = p.jacobian(0, &[0.2, 0.9]).unwrap();
        assert_eq!(j, Mat::diag(&[1.0 / 3.0, 1.0 / 3.0]));
        assert!(p.declared_class().contains(&DeclaredClass::Product));
        assert_eq!(p.factors().len(), 2);

        let three = IfsSpec::new(
            vec![
                SmoothMap::parse(1, &["x1/4"], None).unwrap(),
                SmoothMap::parse(1, &["x1/4 + 0.3"], None).unwrap(),
                SmoothMap::parse(1, &["x1/4 + 0.6"], None).unwrap(),
            ],
            DomainBox::unit(1),
            vec![],
        )
        .unwrap();
        assert_eq!(
            direct_product(&[cantor(), three]).unwrap_err(),
            IfsError::MismatchedAlphabet(2, 3)
        );
    }

    #[test]
    fn product_z_min_factorises() {
        let f1 = quadratic();
        let tri = IfsSpec::new(
            vec![
                SmoothMap::parse(2, &["0.3*x1 + 0.05", "0.2*x1 + 0.25*x2 + 0.01*sin(x1) + 0.05"], None).unwrap(),
                SmoothMap::parse(2, &["0.35*x1 + 0.6", "0.3*x2 + 0.6"], None).unwrap(),
            ],
            DomainBox::unit(2),
            vec![],
        )
        .unwrap();
        let p = direct_product(&[f1.clone(), tri.clone()]).unwrap();
        let w: Word = "1211".parse().unwrap();
        let x = [0.3, 0.6, 0.2];
        let jp = singular_values(&p.compose_jacobian(&w, &x).unwrap());
        let j1 = singular_values(&f1.compose_jacobian(&w, &x[..1]).unwrap());
        let j2 = singular_values(&tri.compose_jacobian(&w, &x[1..]).unwrap());
        for r in [1e-4, 3e-3, 0.01, 0.05, 0.2, 1.0] {
            let lhs = z_min(&jp, r).unwrap();
            let rhs = z_min(&j1, r).unwrap() * z_min(&j2, r).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(rhs), "r={r}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn translation_examples() {
        let base = IfsSpec::new(
            vec![
                SmoothMap::parse(1, &["x1/3 + 0.05"], None).unwrap(),
                SmoothMap::parse(1, &["x1/3 + 0.6"], None).unwrap(),
            ],
            DomainBox::unit(1),
            vec![DeclaredClass::Affine],
        )
        .unwrap();
        let same = base.translate(&[0.0, 0.0]).unwrap();
        assert_eq!(same.translation_vector(), vec![0.0, 0.0]);
        let moved = base.translate(&[0.01, -0.02]).unwrap();
        let p = moved.code_point_precise(&iw("pre:|per:1"), 1e-13).unwrap();
        assert!((p.point[0] - 1.5 * 0.06).abs() < 1e-12);
        assert_eq!(moved.jacobian(0, &[0.5]).unwrap(), base.jacobian(0, &[0.5]).unwrap());
        assert!(matches!(
            base.translate(&[5.0, 0.0]),
            Err(IfsError::TranslationLeavesDomain { map: 1 })
        ));
        assert!(matches!(base.translate(&[0.0]), Err(IfsError::TranslationLength { .. })));
    }

    #[test]
    fn cantor_translation_fixed_point() {
        let base = IfsSpec::new(
            vec![
                SmoothMap::parse(1, &["x1/3"], None).unwrap(),
                SmoothMap::parse(1, &["x1/3 + 2/3"], None).unwrap(),
            ],
            DomainBox::new(vec![-0.5], vec![1.5]).unwrap(),
            vec![],
        )
        .unwrap();
        let moved = base.translate(&[0.01, -0.02]).unwrap();
        let p = moved.code_point_precise(&iw("pre:|per:1"), 1e-13).unwrap();
        assert!((p.point[0] - 0.015).abs() < 1e-12);
        let q = base.code_point_shifted(&iw("pre:|per:1"), 1e-13, &[0.01, -0.02]).unwrap();
        assert_eq!(p.point, q);
        let w: Word = "1221".parse().unwrap();
        assert_eq!(
            moved.compose_jacobian(&w, &[0.3]).unwrap(),
            base.compose_jacobian_shifted(&w, &[0.3], &[0.01, -0.02]).unwrap()
        );
    }

    #[test]
    fn family_radius_is_checked() {
        let base = IfsSpec::new(
            vec![
                SmoothMap::parse(1, &["x1/3"], None).unwrap(),
                SmoothMap::parse(1, &["x1/3"], None).unwrap(),
            ],
            DomainBox::new(vec![-1.0], vec![1.0]).unwrap(),
            vec![],
        )
        .unwrap();
        let fam = TranslationalFamily::new(base.clone(), 0.5, ParamShape::Cube).unwrap();
        assert!(fam.contains(&[0.49, -0.49]));
        assert!(!fam.contains(&[0.5, 0.0]));
        assert!(TranslationalFamily::new(base, 0.7, ParamShape::Ball).is_err());
    }
}
