//! GL(d)-valued cocycles over a toral automorphism.

use std::fmt;

use rayon::prelude::*;

use crate::base::{HyperbolicToralMap, RateData, TorusPoint};
use crate::error::{LabError, Result};
use crate::field::{MatPair, MatrixField};
use crate::operator::{identity, invert, spectral_norm, Mat, Operator};
use crate::regression::{decades, fit_line, fit_log_log};

/// Declared Hölder data `‖A(x) − A(y)‖ ≤ constant·dist(x,y)^beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderMeta {
    pub beta: f64,
    pub constant: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    Constant,
    ClosedForm,
    GridSampled,
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeneratorKind::Constant => "constant",
            GeneratorKind::ClosedForm => "closed_form",
            GeneratorKind::GridSampled => "grid_sampled",
        })
    }
}

/// Side of the grid used to validate interpolated generators.
pub const GRID_VALIDATION: usize = 512;

/// The generator `x ↦ A(x)` of a cocycle.
#[derive(Debug, Clone)]
pub struct CocycleGenerator {
    dim: usize,
    field: MatrixField,
    holder: Option<HolderMeta>,
}

impl CocycleGenerator {
    /// Grid-sampled fields are checked for invertibility on a 512² grid.
    pub fn new(field: MatrixField) -> Result<Self> {
        let dim = field.dim();
        if dim == 0 {
            return Err(LabError::InvalidArgument("generator of dimension 0".into()));
        }
        let probe = field.eval(TorusPoint::origin());
        if probe.shape() != (dim, dim) {
            return Err(LabError::DimensionMismatch {
                left: dim,
                right: probe.nrows(),
            });
        }
        if matches!(field, MatrixField::Grid(_)) {
            field.validate_invertible(GRID_VALIDATION)?;
        } else {
            invert(&probe)?;
        }
        Ok(Self {
            dim,
            field,
            holder: None,
        })
    }

    pub fn constant(m: Mat) -> Result<Self> {
        Self::new(MatrixField::Constant(m))
    }

    pub fn identity(d: usize) -> Self {
        Self {
            dim: d,
            field: MatrixField::Constant(identity(d)),
            holder: None,
        }
    }

    pub fn with_holder(mut self, beta: f64, constant: f64) -> Self {
        self.holder = Some(HolderMeta { beta, constant });
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn field(&self) -> &MatrixField {
        &self.field
    }

    pub fn holder(&self) -> Option<HolderMeta> {
        self.holder
    }

    pub fn kind(&self) -> GeneratorKind {
        if matches!(self.field, MatrixField::Grid(_)) {
            GeneratorKind::GridSampled
        } else if self.field.is_constant() {
            GeneratorKind::Constant
        } else {
            GeneratorKind::ClosedForm
        }
    }

    pub fn is_constant(&self) -> bool {
        self.kind() == GeneratorKind::Constant
    }

    pub fn eval_mat(&self, p: TorusPoint) -> Mat {
        self.field.eval(p)
    }

    pub fn eval(&self, p: TorusPoint) -> Result<Operator> {
        Operator::new(self.field.eval(p))
    }

    /// `(A(p), A(p + δ) − A(p))`.
    pub fn eval_pair(&self, p: TorusPoint, delta: [f64; 2]) -> Result<MatPair> {
        self.field.eval_pair(p, delta)
    }
}

/// Running product `A(x_{n-1})⋯A(x_0)` with its inverse, multiplied factor by factor.
fn forward_pair(a: &CocycleGenerator, f: &HyperbolicToralMap, x: TorusPoint, n: usize) -> Result<(Mat, Mat)> {
    let mut p = identity(a.dim);
    let mut pinv = identity(a.dim);
    for (k, xk) in f.forward_orbit(x).take(n).enumerate() {
        let m = a.eval_mat(xk);
        let minv = invert(&m).map_err(|_| LabError::SingularProduct { step: k })?;
        p = m * p;
        pinv *= minv;
    }
    Ok((p, pinv))
}

/// `𝔸ⁿ_x` for any integer `n`; `𝔸⁻ⁿ_x = (𝔸ⁿ_{f⁻ⁿx})⁻¹`.
pub fn iterate(a: &CocycleGenerator, f: &HyperbolicToralMap, x: TorusPoint, n: i64) -> Result<Operator> {
    if n >= 0 {
        let (p, pinv) = forward_pair(a, f, x, n as usize)?;
        return Operator::from_pair(p, pinv);
    }
    // R = A(x₋₁)⋯A(x₋ₙ) along the exact backward orbit of x
    let mut r = identity(a.dim);
    let mut rinv = identity(a.dim);
    for (k, xk) in f.backward_orbit(x).skip(1).take(n.unsigned_abs() as usize).enumerate() {
        let m = a.eval_mat(xk);
        let minv = invert(&m).map_err(|_| LabError::SingularProduct { step: k })?;
        r *= m;
        rinv = minv * rinv;
    }
    Operator::from_pair(rinv, r)
}

/// `K(x, n) = ‖𝔸ⁿ_x‖·‖(𝔸ⁿ_x)⁻¹‖`.
pub fn quasiconformal_distortion(
    a: &CocycleGenerator,
    f: &HyperbolicToralMap,
    x: TorusPoint,
    n: i64,
) -> Result<f64> {
    Ok(iterate(a, f, x, n)?.distortion())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BunchingReport {
    pub pointwise_ok: bool,
    pub worst_product: f64,
    pub theta_hat: f64,
    pub l_hat: f64,
    pub n_used: usize,
}

/// Pointwise check of `‖A(x)‖·‖A(x)⁻¹‖·ν(x)^β < 1` (and with ν̂).
pub fn check_fiber_bunching(
    a: &CocycleGenerator,
    rates: &RateData,
    beta: f64,
    grid: &[TorusPoint],
) -> Result<BunchingReport> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(LabError::InvalidArgument(format!("beta must lie in (0,1], got {beta}")));
    }
    let worst = grid
        .par_iter()
        .map(|&p| {
            let k = a.eval(p)?.distortion();
            let r = rates.at(p);
            Ok(k * r.nu.max(r.nu_hat).powf(beta))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(BunchingReport {
        pointwise_ok: worst < 1.0,
        worst_product: worst,
        theta_hat: worst,
        l_hat: 1.0,
        n_used: 1,
    })
}

/// Margin required between the fitted rate and 1.
pub const WEAK_BUNCHING_MARGIN: f64 = 0.02;

/// Fits `sup_x K(x, ±n)·(ν_n)^β ≈ L̂·θ̂ⁿ` for `1 ≤ n ≤ n_max`.
///
/// The forward side uses `ν_n(x) = ν(x_{n−1})⋯ν(x_0)` and the backward side
/// `ν̂(x_{−1})⋯ν̂(x_{−n})`. `worst_product` is the per-step rate at the last
/// horizon, `(sup_x ⋯)^{1/n_max}`.
pub fn check_weak_fiber_bunching(
    a: &CocycleGenerator,
    f: &HyperbolicToralMap,
    rates: &RateData,
    beta: f64,
    n_max: usize,
    grid: &[TorusPoint],
) -> Result<BunchingReport> {
    if n_max < 8 {
        return Err(LabError::InvalidArgument(format!("n_max must be at least 8, got {n_max}")));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(LabError::InvalidArgument(format!("beta must lie in (0,1], got {beta}")));
    }
    let per_point = grid
        .par_iter()
        .map(|&x| {
            let mut out = vec![0.0f64; n_max];
            for backward in [false, true] {
                let mut p = identity(a.dim);
                let mut pinv = identity(a.dim);
                let mut log_rate = 0.0;
                let orbit: Box<dyn Iterator<Item = TorusPoint>> = if backward {
                    Box::new(f.backward_orbit(x).skip(1))
                } else {
                    Box::new(f.forward_orbit(x))
                };
                for (k, xk) in orbit.take(n_max).enumerate() {
                    let m = a.eval_mat(xk);
                    let minv = invert(&m).map_err(|_| LabError::SingularProduct { step: k })?;
                    let r = rates.at(xk);
                    if backward {
                        p *= m;
                        pinv = minv * pinv;
                        log_rate += r.nu_hat.ln();
                    } else {
                        p = m * p;
                        pinv *= minv;
                        log_rate += r.nu.ln();
                    }
                    let v = spectral_norm(&p) * spectral_norm(&pinv) * (beta * log_rate).exp();
                    out[k] = out[k].max(v);
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let mut sup = vec![0.0f64; n_max];
    for row in per_point {
        for (s, v) in sup.iter_mut().zip(row) {
            *s = s.max(v);
        }
    }
    let ns: Vec<f64> = (1..=n_max).map(|n| n as f64).collect();
    let logs: Vec<f64> = sup.iter().map(|s| s.ln()).collect();
    let fit = fit_line(&ns, &logs)
        .ok_or_else(|| LabError::DegenerateSample("bunching fit has no spread".into()))?;
    let theta_hat = fit.slope.exp();
    let worst_product = sup[n_max - 1].powf(1.0 / n_max as f64);
    Ok(BunchingReport {
        pointwise_ok: theta_hat + WEAK_BUNCHING_MARGIN < 1.0 && worst_product < 1.0,
        worst_product,
        theta_hat,
        l_hat: fit.intercept.exp(),
        n_used: n_max,
    })
}

/// Result of a Hölder regression. `degenerate` marks a sample in which every
/// difference vanished; `beta_hat` is then `+∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderFit {
    pub beta_hat: f64,
    pub const_hat: f64,
    pub n_pairs: usize,
    pub degenerate: bool,
}

impl HolderFit {
    pub fn degenerate(n_pairs: usize) -> Self {
        Self {
            beta_hat: f64::INFINITY,
            const_hat: 0.0,
            n_pairs,
            degenerate: true,
        }
    }
}

/// Differences below this are treated as zero by the regressions.
pub const DIFFERENCE_FLOOR: f64 = 1e-14;

/// Minimum pairs and decades of distance for a Hölder regression.
pub const MIN_PAIRS: usize = 100;
pub const MIN_DECADES: f64 = 3.0;

/// Log-log regression of `‖A(x) − A(y)‖` against `dist(x, y)`.
pub fn estimate_holder(a: &CocycleGenerator, pairs: &[(TorusPoint, TorusPoint)]) -> Result<HolderFit> {
    if pairs.len() < MIN_PAIRS {
        return Err(LabError::InvalidArgument(format!(
            "need at least {MIN_PAIRS} pairs, got {}",
            pairs.len()
        )));
    }
    let span = decades(pairs.iter().map(|(x, y)| x.dist(y)));
    if span < MIN_DECADES {
        return Err(LabError::InvalidArgument(format!(
            "pair distances span {span:.2} decades, need {MIN_DECADES}"
        )));
    }
    let pts: Vec<(f64, f64)> = pairs
        .iter()
        .map(|(x, y)| (x.dist(y), spectral_norm(&(a.eval_mat(*x) - a.eval_mat(*y)))))
        .collect();
    holder_from_points(&pts)
}

pub(crate) fn holder_from_points(pts: &[(f64, f64)]) -> Result<HolderFit> {
    let used = pts.iter().filter(|(d, v)| *d > 0.0 && *v >= DIFFERENCE_FLOOR).count();
    if used == 0 {
        return Ok(HolderFit::degenerate(0));
    }
    match fit_log_log(pts, DIFFERENCE_FLOOR * (1.0 - f64::EPSILON)) {
        Some(fit) => Ok(HolderFit {
            beta_hat: fit.slope,
            const_hat: fit.intercept.exp(),
            n_pairs: fit.n,
            degenerate: false,
        }),
        None => Err(LabError::DegenerateSample(format!(
            "only {used} usable differences with no spread in distance"
        ))),
    }
}
