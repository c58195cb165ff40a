//! Standard stable and unstable holonomies as limits of cocycle products, the
//! axiom checks (H2)–(H4), and the Hölder-regularity machinery.
//!
//! A holonomy between two points of one leaf is computed through the leaf's
//! anchor: the orbit of the anchor is exact and the two endpoints are tracked as
//! `fⁿ(anchor) + t·eⁿ·v`. Partial products are advanced in increment form,
//!
//! ```text
//! stable:   Q_{n+1} = Q_n (Id + P_n⁻¹ F_n P_n),   P_n = 𝔸ⁿ_x,  F_n = A(y_n)⁻¹(A(x_n) − A(y_n))
//! unstable: Q_n = Q_{n−1} (Id + R_{n−1} E_n R_{n−1}⁻¹),  R_n = 𝔸ⁿ_{f⁻ⁿx},  E_n = (A(y_{−n}) − A(x_{−n})) A(x_{−n})⁻¹
//! ```
//!
//! which is algebraically the same product `(𝔸ⁿ_y)⁻¹𝔸ⁿ_x` but never subtracts two
//! large nearly equal matrices.

use rand::Rng;
use rayon::prelude::*;

use crate::base::{HyperbolicToralMap, LegType, RateData, SuLeg, TorusPoint};
use crate::cocycle::{check_fiber_bunching, iterate, CocycleGenerator, HolderFit, DIFFERENCE_FLOOR};
use crate::error::{LabError, Result};
use crate::operator::{identity, invert, op_distance, spectral_norm, Mat, Operator};
use crate::regression::{decades, fit_log_log};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolonomyOptions {
    pub tol: f64,
    pub n_max: usize,
}

impl Default for HolonomyOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            n_max: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolonomyResult {
    pub h: Operator,
    pub n_used: usize,
    pub cauchy_residual: f64,
    pub converged: bool,
}

/// Residuals below tolerance on this many consecutive steps stop the iteration.
const CONFIRM_STEPS: usize = 3;
/// Window and threshold of the geometric-decay sanity check.
const RATIO_WINDOW: usize = 5;
const DECAY_RATIO: f64 = 0.999;
/// Consecutive growing windows that count as divergence.
const GROWTH_STEPS: usize = 10;

/// Produces the increments `K_n` with `Q_n = Q_{n−1}(Id + K_n)`.
struct Increments<'a> {
    a: &'a CocycleGenerator,
    f: &'a HyperbolicToralMap,
    leg: LegType,
    t_from: f64,
    dt: f64,
    orbit: crate::base::Orbit,
    step: i32,
    // P_n for stable legs, R_n for unstable ones, with inverses
    prod: Mat,
    prod_inv: Mat,
}

impl<'a> Increments<'a> {
    fn new(
        a: &'a CocycleGenerator,
        f: &'a HyperbolicToralMap,
        anchor: TorusPoint,
        leg: LegType,
        t_from: f64,
        t_to: f64,
    ) -> Self {
        let mut orbit = match leg {
            LegType::Stable => f.forward_orbit(anchor),
            LegType::Unstable => f.backward_orbit(anchor),
        };
        if leg == LegType::Unstable {
            orbit.next();
        }
        Self {
            a,
            f,
            leg,
            t_from,
            dt: t_to - t_from,
            orbit,
            step: 0,
            prod: identity(a.dim()),
            prod_inv: identity(a.dim()),
        }
    }

    fn next_increment(&mut self) -> Result<Mat> {
        let xk = self.orbit.next().expect("orbits are infinite");
        self.step += 1;
        let power = match self.leg {
            LegType::Stable => self.step - 1,
            LegType::Unstable => -self.step,
        };
        let base = if self.t_from == 0.0 {
            xk
        } else {
            xk.translate(self.f.leaf_offset(self.leg, self.t_from, power))
        };
        let delta = self.f.leaf_offset(self.leg, self.dt, power);
        let singular = |_| LabError::SingularProduct {
            step: self.step as usize - 1,
        };
        let pair = self.a.eval_pair(base, delta)?;
        let ax_inv = invert(&pair.value).map_err(singular)?;
        match self.leg {
            LegType::Stable => {
                let ay_inv = invert(&pair.shifted()).map_err(singular)?;
                let fk = -(&ay_inv * &pair.diff);
                let k = &self.prod_inv * fk * &self.prod;
                self.prod = &pair.value * &self.prod;
                self.prod_inv = &self.prod_inv * ax_inv;
                Ok(k)
            }
            LegType::Unstable => {
                let e = &pair.diff * &ax_inv;
                let k = &self.prod * e * &self.prod_inv;
                self.prod = &self.prod * &pair.value;
                self.prod_inv = ax_inv * &self.prod_inv;
                Ok(k)
            }
        }
    }
}

fn geometric_ratio(res: &[f64]) -> f64 {
    let n = res.len();
    if n < 2 {
        return 0.0;
    }
    let (now, then, span) = if n > RATIO_WINDOW {
        (res[n - 1], res[n - 1 - RATIO_WINDOW], RATIO_WINDOW)
    } else {
        (res[n - 1], res[0], n - 1)
    };
    if now == 0.0 {
        0.0
    } else if then == 0.0 {
        f64::INFINITY
    } else {
        (now / then).powf(1.0 / span as f64)
    }
}

struct RawHolonomy {
    q: Mat,
    factors: Vec<Mat>,
    n_used: usize,
    residual: f64,
    converged: bool,
}

fn run_holonomy(
    a: &CocycleGenerator,
    f: &HyperbolicToralMap,
    anchor: TorusPoint,
    leg: LegType,
    t_from: f64,
    t_to: f64,
    opts: &HolonomyOptions,
    keep_factors: bool,
) -> Result<RawHolonomy> {
    if !(opts.tol > 0.0) || opts.n_max == 0 {
        return Err(LabError::InvalidArgument(format!(
            "holonomy needs tol > 0 and n_max >= 1, got {} and {}",
            opts.tol, opts.n_max
        )));
    }
    let d = a.dim();
    let mut q = identity(d);
    let mut factors = Vec::new();
    let trivial = t_from == t_to || a.is_constant();
    let mut inc = Increments::new(a, f, anchor, leg, t_from, t_to);
    let mut residuals: Vec<f64> = Vec::new();
    let mut below = 0usize;
    let mut growing = 0usize;
    for n in 1..=opts.n_max {
        let k = inc.next_increment()?;
        let g = &q * &k;
        let r = spectral_norm(&g);
        q += g;
        if keep_factors {
            factors.push(identity(d) + &k);
        }
        if !r.is_finite() || q.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Diverged {
                leg_type: leg,
                leg: None,
                steps: n,
                residual: r,
            });
        }
        residuals.push(r);
        if n == 1 && r == 0.0 && trivial {
            return Ok(RawHolonomy {
                q,
                factors,
                n_used: 1,
                residual: 0.0,
                converged: true,
            });
        }
        below = if r < opts.tol { below + 1 } else { 0 };
        let ratio = geometric_ratio(&residuals);
        if below >= CONFIRM_STEPS && ratio < DECAY_RATIO {
            return Ok(RawHolonomy {
                q,
                factors,
                n_used: n,
                residual: r,
                converged: true,
            });
        }
        growing = if n > RATIO_WINDOW && ratio > 1.0 { growing + 1 } else { 0 };
        if growing >= GROWTH_STEPS {
            return Err(LabError::Diverged {
                leg_type: leg,
                leg: None,
                steps: n,
                residual: r,
            });
        }
    }
    Ok(RawHolonomy {
        q,
        factors,
        n_used: opts.n_max,
        residual: *residuals.last().unwrap_or(&0.0),
        converged: false,
    })
}

/// Holonomy along the leaf of `anchor` from the point with leaf parameter
/// `t_from` to the point with parameter `t_to`.
pub fn leaf_holonomy(
    a: &CocycleGenerator,
    f: &HyperbolicToralMap,
    anchor: TorusPoint,
    leg: LegType,
    t_from: f64,
    t_to: f64,
    opts: &HolonomyOptions,
) -> Result<HolonomyResult> {
    let raw = run_holonomy(a, f, anchor, leg, t_from, t_to, opts, false)?;
    let inv = invert(&raw.q)?;
    Ok(HolonomyResult {
        h: Operator::from_pair(raw.q, inv)?,
        n_used: raw.n_used,
        cauchy_residual: raw.residual,
        converged: raw.converged,
    })
}

/// `H^s_{x,y}` with `y = leaf_point(x, stable, t)`.
pub fn stable_holonomy(
    a: &CocycleGenerator,
    f: &HyperbolicToralMap,
    x: TorusPoint,
    t: f64,
    opts: &HolonomyOptions,
) -> Result<HolonomyResult> {
    leaf_holonomy(a, f, x, LegType::Stable, 0.0, t, opts)
}

/// `H^u_{x,y}` with `y = leaf_point(x, unstable, t)`.
pub fn unstable_holonomy(
    a: &CocycleGenerator,
    f: &HyperbolicToralMap,
    x: TorusPoint,
    t: f64,
    opts: &HolonomyOptions,
) -> Result<HolonomyResult> {
    leaf_holonomy(a, f, x, LegType::Unstable, 0.0, t, opts)
}

pub fn leg_holonomy(
    a: &CocycleGenerator,
    f: &HyperbolicToralMap,
    leg: &SuLeg,
    opts: &HolonomyOptions,
) -> Result<HolonomyResult> {
    let (t0, t1) = leg.leaf_range();
    leaf_holonomy(a, f, leg.anchor(), leg.leg_type, t0, t1, opts)
}

fn tree_product(factors: &[Mat]) -> Mat {
    match factors.len() {
        0 => unreachable!("tree product of no factors"),
        1 => factors[0].clone(),
        n => tree_product(&factors[..n / 2]) * tree_product(&factors[n / 2..]),
    }
}

/// The same holonomy with the partial product regrouped as a balanced binary
/// tree instead of left to right.
pub fn leaf_holonomy_tree(
    a: &CocycleGenerator,
    f: &HyperbolicToralMap,
    anchor: TorusPoint,
    leg: LegType,
    t_from: f64,
    t_to: f64,
    opts: &HolonomyOptions,
) -> Result<Operator> {
    let raw = run_holonomy(a, f, anchor, leg, t_from, t_to, opts, true)?;
    Operator::new(tree_product(&raw.factors))
}

/// `𝔸ⁿ_y` for `y` the point with parameter `t` on the leaf of `anchor`, evaluated
/// at the tracked points `fᵏ(anchor) + t·eᵏ·v`.
pub fn leaf_iterate(
    a: &CocycleGenerator,
    f: &HyperbolicToralMap,
    anchor: TorusPoint,
    leg: LegType,
    t: f64,
    n: i64,
) -> Result<Operator> {
    let d = a.dim();
    let mut p = identity(d);
    let mut pinv = identity(d);
    let track = |k: i64, xk: TorusPoint| {
        if t == 0.0 {
            xk
        } else {
            xk.translate(f.leaf_offset(leg, t, k as i32))
        }
    };
    if n >= 0 {
        for (k, xk) in f.forward_orbit(anchor).take(n as usize).enumerate() {
            let m = a.eval_mat(track(k as i64, xk));
            let minv = invert(&m).map_err(|_| LabError::SingularProduct { step: k })?;
            p = m * p;
            pinv *= minv;
        }
        Operator::from_pair(p, pinv)
    } else {
        for (k, xk) in f.backward_orbit(anchor).skip(1).take(n.unsigned_abs() as usize).enumerate() {
            let m = a.eval_mat(track(-(k as i64) - 1, xk));
            let minv = invert(&m).map_err(|_| LabError::SingularProduct { step: k })?;
            p *= m;
            pinv = minv * pinv;
        }
        Operator::from_pair(pinv, p)
    }
}

/// A leaf segment starting at `x` with parameter `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegSample {
    pub x: TorusPoint,
    pub leg_type: LegType,
    pub t: f64,
}

impl LegSample {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, leg_type: LegType, t_max: f64) -> Self {
        Self {
            x: TorusPoint::random(rng),
            leg_type,
            t: rng.gen_range(-t_max..=t_max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct H4Fit {
    pub k: f64,
    pub exponent: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxiomReport {
    pub h2_residual: f64,
    pub h3_residual: f64,
    pub h4_fit: H4Fit,
    pub max_n_used: usize,
}

/// Halvings of the leg used for the (H4) regression.
const H4_HALVINGS: i32 = 12;

fn require_converged(r: HolonomyResult, leg: LegType) -> Result<HolonomyResult> {
    if r.converged {
        Ok(r)
    } else {
        Err(LabError::NotConverged {
            leg_type: leg,
            leg: None,
            steps: r.n_used,
            residual: r.cauchy_residual,
        })
    }
}

/// Residuals of (H2), of (H3) for stable legs and (H3′) for unstable ones for
/// `1 ≤ n ≤ n_check`, and a log-log fit of `‖H − Id‖` against leaf distance.
pub fn verify_axioms(
    a: &CocycleGenerator,
    f: &HyperbolicToralMap,
    legs: &[LegSample],
    n_check: usize,
    opts: &HolonomyOptions,
) -> Result<AxiomReport> {
    let per_leg = legs
        .par_iter()
        .map(|s| {
            let hol = |from: f64, to: f64| {
                leaf_holonomy(a, f, s.x, s.leg_type, from, to, opts)
                    .and_then(|r| require_converged(r, s.leg_type))
            };
            let mut max_n = 0;
            let full = hol(0.0, s.t)?;
            max_n = max_n.max(full.n_used);
            let mid = 0.4 * s.t;
            let h_xy = hol(0.0, mid)?;
            let h_yz = hol(mid, s.t)?;
            let id = hol(0.0, 0.0)?;
            let h2 = spectral_norm(&(h_yz.h.mat() * h_xy.h.mat() - full.h.mat()))
                .max(id.h.dist_to_identity());

            let mut h3 = 0.0f64;
            let sign: i64 = match s.leg_type {
                LegType::Stable => 1,
                LegType::Unstable => -1,
            };
            for n in 1..=n_check as i64 {
                let m = sign * n;
                let ax = iterate(a, f, s.x, m)?;
                let ay = leaf_iterate(a, f, s.x, s.leg_type, s.t, m)?;
                let xn = f.apply(s.x, m);
                let tn = s.t * f.eigenvalue(s.leg_type).powi(m as i32);
                let inner = leaf_holonomy(a, f, xn, s.leg_type, 0.0, tn, opts)
                    .and_then(|r| require_converged(r, s.leg_type))?;
                max_n = max_n.max(inner.n_used);
                let rhs = ay.inv() * inner.h.mat() * ax.mat();
                h3 = h3.max(spectral_norm(&(rhs - full.h.mat())));
            }

            let mut pts = Vec::new();
            for j in 0..=H4_HALVINGS {
                let tj = s.t * 2f64.powi(-j);
                let r = hol(0.0, tj)?;
                pts.push((tj.abs(), r.h.dist_to_identity()));
            }
            Ok((h2, h3, pts, max_n))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = AxiomReport {
        h2_residual: 0.0,
        h3_residual: 0.0,
        h4_fit: H4Fit {
            k: 0.0,
            exponent: f64::NAN,
            degenerate: true,
        },
        max_n_used: 0,
    };
    let mut pts = Vec::new();
    for (h2, h3, p, n) in per_leg {
        report.h2_residual = report.h2_residual.max(h2);
        report.h3_residual = report.h3_residual.max(h3);
        report.max_n_used = report.max_n_used.max(n);
        pts.extend(p);
    }
    if let Some(fit) = fit_log_log(&pts, DIFFERENCE_FLOOR) {
        report.h4_fit = H4Fit {
            k: fit.intercept.exp(),
            exponent: fit.slope,
            degenerate: false,
        };
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaRecipe {
    pub theta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub safety: f64,
}

pub const ALPHA_SAFETY: f64 = 0.99;

/// θ is the grid maximum of `‖A‖‖A⁻¹‖ν^β`, `‖A‖‖A⁻¹‖ν̂^β` and `(ν/γ)^β`;
/// `α = safety·min(β, ln θ / ln(μ̂ν))` with `μ̂ν` taken at its smallest grid value,
/// so that `θ < (μ̂ν)^α` holds at every grid point.
pub fn compute_alpha(
    a: &CocycleGenerator,
    rates: &RateData,
    beta: f64,
    grid: &[TorusPoint],
    safety: f64,
) -> Result<AlphaRecipe> {
    if !(safety > 0.0 && safety < 1.0) {
        return Err(LabError::InvalidArgument(format!("safety must lie in (0,1), got {safety}")));
    }
    let bunching = check_fiber_bunching(a, rates, beta, grid)?;
    let mut theta = bunching.worst_product;
    let mut min_mn = f64::INFINITY;
    for &p in grid {
        let r = rates.at(p);
        theta = theta.max((r.nu / r.gamma).powf(beta));
        min_mn = min_mn.min(r.mu_hat * r.nu);
    }
    if !(theta < 1.0) {
        return Err(LabError::NotBunched { theta });
    }
    let alpha = safety * beta.min(theta.ln() / min_mn.ln());
    Ok(AlphaRecipe {
        theta,
        alpha,
        beta,
        safety,
    })
}

/// `x″` displaced from `x` along the unstable leaf by `s`; `y`, `y″` lie on the
/// stable leaves of `x`, `x″` at parameter `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadruple {
    pub x: TorusPoint,
    pub x2: TorusPoint,
    pub s: f64,
    pub t: f64,
}

impl Quadruple {
    pub fn y(&self, f: &HyperbolicToralMap) -> TorusPoint {
        f.leaf_point(self.x, LegType::Stable, self.t)
    }

    pub fn y2(&self, f: &HyperbolicToralMap) -> TorusPoint {
        f.leaf_point(self.x2, LegType::Stable, self.t)
    }
}

/// Displacements `s` are log-uniform in `[delta·10^{-decades}, delta]` with a
/// random sign, and `t` is uniform in `[-r, r]`.
pub fn sample_quadruples<R: Rng + ?Sized>(
    f: &HyperbolicToralMap,
    rng: &mut R,
    count: usize,
    delta: f64,
    r: f64,
    span_decades: f64,
) -> Vec<Quadruple> {
    (0..count)
        .map(|_| {
            let x = TorusPoint::random(rng);
            let e: f64 = rng.gen_range(0.0..=span_decades);
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let s = sign * delta * 10f64.powf(-e);
            let t = rng.gen_range(-r..=r);
            Quadruple {
                x,
                x2: f.leaf_point(x, LegType::Unstable, s),
                s,
                t,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalHolderReport {
    pub slope: f64,
    pub c_fit: f64,
    pub n_used: usize,
    pub span_decades: f64,
    pub degenerate: bool,
}

pub const MIN_QUADRUPLES: usize = 200;

/// Regression of `log d(H_{x,y}, H_{x″,y″})` against
/// `log max(dist(x,x″), dist(y,y″))`. `c_fit` is the envelope
/// `max d / dist^slope` over the used samples.
pub fn estimate_global_holder(
    a: &CocycleGenerator,
    f: &HyperbolicToralMap,
    quads: &[Quadruple],
    opts: &HolonomyOptions,
) -> Result<GlobalHolderReport> {
    if quads.len() < MIN_QUADRUPLES {
        return Err(LabError::InvalidArgument(format!(
            "need at least {MIN_QUADRUPLES} quadruples, got {}",
            quads.len()
        )));
    }
    let pts = quads
        .par_iter()
        .map(|q| {
            let h = stable_holonomy(a, f, q.x, q.t, opts)?;
            let h2 = stable_holonomy(a, f, q.x2, q.t, opts)?;
            let m = q.x.dist(&q.x2).max(q.y(f).dist(&q.y2(f)));
            Ok((m, op_distance(&h.h, &h2.h)?))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let used: Vec<(f64, f64)> = pts
        .iter()
        .copied()
        .filter(|(m, d)| *m > 0.0 && *d >= DIFFERENCE_FLOOR)
        .collect();
    let span = decades(used.iter().map(|p| p.0));
    let fit: HolderFit = crate::cocycle::holder_from_points(&used)?;
    if fit.degenerate {
        return Ok(GlobalHolderReport {
            slope: f64::NAN,
            c_fit: 0.0,
            n_used: 0,
            span_decades: span,
            degenerate: true,
        });
    }
    let c_fit = used
        .iter()
        .map(|(m, d)| d / m.powf(fit.beta_hat))
        .fold(0.0, f64::max);
    Ok(GlobalHolderReport {
        slope: fit.beta_hat,
        c_fit,
        n_used: used.len(),
        span_decades: span,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormComparison {
    pub max_ratio: f64,
    pub max_norm_ratio: f64,
    pub max_inv_ratio: f64,
}

/// Largest `‖𝔸ᵏ_w‖/‖𝔸ᵏ_z‖` and `‖(𝔸ᵏ_w)⁻¹‖/‖(𝔸ᵏ_z)⁻¹‖` over `1 ≤ k ≤ k_max`,
/// `w = leaf_point(z, stable, t)`.
pub fn norm_comparison_along_leaf(
    a: &CocycleGenerator,
    f: &HyperbolicToralMap,
    z: TorusPoint,
    t: f64,
    k_max: usize,
) -> Result<NormComparison> {
    let d = a.dim();
    let (mut pz, mut pz_inv) = (identity(d), identity(d));
    let (mut pw, mut pw_inv) = (identity(d), identity(d));
    let mut out = NormComparison {
        max_ratio: 1.0,
        max_norm_ratio: 1.0,
        max_inv_ratio: 1.0,
    };
    for (k, zk) in f.forward_orbit(z).take(k_max).enumerate() {
        let wk = if t == 0.0 {
            zk
        } else {
            zk.translate(f.leaf_offset(LegType::Stable, t, k as i32))
        };
        let (mz, mw) = (a.eval_mat(zk), a.eval_mat(wk));
        let singular = |_| LabError::SingularProduct { step: k };
        pz_inv *= invert(&mz).map_err(singular)?;
        pw_inv *= invert(&mw).map_err(singular)?;
        pz = mz * pz;
        pw = mw * pw;
        let nr = spectral_norm(&pw) / spectral_norm(&pz);
        let ir = spectral_norm(&pw_inv) / spectral_norm(&pz_inv);
        out.max_norm_ratio = out.max_norm_ratio.max(nr);
        out.max_inv_ratio = out.max_inv_ratio.max(ir);
    }
    out.max_ratio = out.max_norm_ratio.max(out.max_inv_ratio);
    Ok(out)
}
