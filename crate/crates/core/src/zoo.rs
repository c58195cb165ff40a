//! Example families with closed-form oracles.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::base::{HyperbolicToralMap, LegType, SuLeg, TorusPoint};
use crate::cocycle::{holder_from_points, CocycleGenerator, HolderFit};
use crate::conjugacy::ConjugacyField;
use crate::error::{LabError, Result};
use crate::field::{rotation_field, MatrixField};
use crate::operator::{invert, Mat, Operator};
use crate::regression::{decades, fit_log_log, median};
use crate::trig::TrigPolynomial;

/// Truncation orders of the series oracles.
pub const DEFAULT_N_C: usize = 60;
pub const DEFAULT_N_U: usize = 80;

/// `A = [[μ, φ],[0, 1]]` and `B = diag(μ, 1)` with `μ = λ^r`.
#[derive(Debug, Clone)]
pub struct TriangularPair {
    pub f: HyperbolicToralMap,
    pub r: f64,
    pub mu: f64,
    pub phi: TrigPolynomial,
    pub a: CocycleGenerator,
    pub b: CocycleGenerator,
    pub n_c: usize,
    pub n_u: usize,
}

/// The default coupling `0.1·cos 2πx₁`.
pub fn default_phi() -> TrigPolynomial {
    TrigPolynomial::cos([1, 0], 0.1)
}

pub fn triangular_family(f: &HyperbolicToralMap, r: f64, phi: TrigPolynomial, n_trunc: usize) -> Result<TriangularPair> {
    if !(r > 0.0 && r < 1.0) {
        return Err(LabError::InvalidArgument(format!("r must lie in (0,1), got {r}")));
    }
    if phi.sup_bound() > 1.0 {
        return Err(LabError::InvalidArgument(format!(
            "coupling sup bound {} exceeds 1",
            phi.sup_bound()
        )));
    }
    let mu = f.lambda().powf(r);
    let a = CocycleGenerator::new(MatrixField::trig(
        2,
        vec![
            TrigPolynomial::constant(mu),
            phi.clone(),
            TrigPolynomial::zero(),
            TrigPolynomial::constant(1.0),
        ],
    )?)?;
    let b = CocycleGenerator::constant(Mat::from_row_slice(2, 2, &[mu, 0.0, 0.0, 1.0]))?;
    Ok(TriangularPair {
        f: f.clone(),
        r,
        mu,
        phi,
        a,
        b,
        n_c: n_trunc,
        n_u: DEFAULT_N_U.max(n_trunc),
    })
}

fn unipotent(h: f64) -> Operator {
    Operator::from_pair(
        Mat::from_row_slice(2, 2, &[1.0, h, 0.0, 1.0]),
        Mat::from_row_slice(2, 2, &[1.0, -h, 0.0, 1.0]),
    )
    .expect("unipotent matrices are invertible")
}

impl TriangularPair {
    /// `c(x) = −Σ_{k=0}^{N} μ^{−k−1} φ(fᵏx)`.
    pub fn c(&self, x: TorusPoint) -> f64 {
        let mut s = 0.0;
        let mut w = 1.0 / self.mu;
        for xk in self.f.forward_orbit(x).take(self.n_c + 1) {
            s -= w * self.phi.eval(xk);
            w /= self.mu;
        }
        s
    }

    /// Bound on `|c − c_∞|`.
    pub fn c_tail(&self) -> f64 {
        self.phi.sup_bound() * self.mu.powi(-(self.n_c as i32)) / (self.mu - 1.0)
    }

    /// `|c(fx) − μ c(x) − φ(x)|`.
    pub fn twisted_residual(&self, x: TorusPoint) -> f64 {
        (self.c(self.f.apply(x, 1)) - self.mu * self.c(x) - self.phi.eval(x)).abs()
    }

    /// `c(p(t1)) − c(p(t0))` for the points with parameters `t0, t1` on the
    /// `leg`-leaf of `anchor`, computed along the tracked orbits.
    pub fn c_difference(&self, anchor: TorusPoint, leg: LegType, t0: f64, t1: f64) -> f64 {
        let mut s = 0.0;
        let mut w = 1.0 / self.mu;
        for (k, xk) in self.f.forward_orbit(anchor).take(self.n_c + 1).enumerate() {
            let (_, d) = self.pair_at(xk, leg, t0, t1, k as i32);
            s -= w * d;
            w /= self.mu;
        }
        s
    }

    fn pair_at(&self, xk: TorusPoint, leg: LegType, t0: f64, t1: f64, n: i32) -> (f64, f64) {
        let base = if t0 == 0.0 {
            xk
        } else {
            xk.translate(self.f.leaf_offset(leg, t0, n))
        };
        self.phi.eval_pair(base.coords(), self.f.leaf_offset(leg, t1 - t0, n))
    }

    /// `h^s = Σ_{k=0}^{N} μ^{−k−1}(φ(x_k) − φ(y_k))` between the stable-leaf
    /// points with parameters `t0` (x) and `t1` (y).
    pub fn h_s(&self, anchor: TorusPoint, t0: f64, t1: f64) -> f64 {
        let mut s = 0.0;
        let mut w = 1.0 / self.mu;
        for (k, xk) in self.f.forward_orbit(anchor).take(self.n_c + 1).enumerate() {
            let (_, d) = self.pair_at(xk, LegType::Stable, t0, t1, k as i32);
            s -= w * d;
            w /= self.mu;
        }
        s
    }

    /// `h^u = Σ_{j=1}^{N} μ^{j−1}(φ(y_{−j}) − φ(x_{−j}))` between the unstable-leaf
    /// points with parameters `t0` (x) and `t1` (y).
    pub fn h_u(&self, anchor: TorusPoint, t0: f64, t1: f64) -> f64 {
        let mut s = 0.0;
        let mut w = 1.0;
        for (j, xj) in self.f.backward_orbit(anchor).skip(1).take(self.n_u).enumerate() {
            let (_, d) = self.pair_at(xj, LegType::Unstable, t0, t1, -(j as i32) - 1);
            s += w * d;
            w *= self.mu;
        }
        s
    }

    pub fn h_s_tail(&self, dt: f64) -> f64 {
        let q = 1.0 / (self.mu * self.f.lambda());
        self.phi.lipschitz_bound() * dt.abs() * q.powi(self.n_c as i32 + 1) / (self.mu * (1.0 - q))
    }

    pub fn h_u_tail(&self, dt: f64) -> f64 {
        let q = self.mu / self.f.lambda();
        self.phi.lipschitz_bound() * dt.abs() * q.powi(self.n_u as i32 + 1) / (self.mu * (1.0 - q))
    }

    /// Closed-form holonomy `[[1, h],[0, 1]]` of `A` along a leg.
    pub fn leg_oracle(&self, leg: &SuLeg) -> Operator {
        let (t0, t1) = leg.leaf_range();
        let h = match leg.leg_type {
            LegType::Stable => self.h_s(leg.anchor(), t0, t1),
            LegType::Unstable => self.h_u(leg.anchor(), t0, t1),
        };
        unipotent(h)
    }

    /// `C(x) = [[1, c(x)],[0, 1]]`.
    pub fn conjugacy(&self) -> ConjugacyField {
        let pair = self.clone();
        ConjugacyField::closed_form(MatrixField::custom(2, move |p| {
            Mat::from_row_slice(2, 2, &[1.0, pair.c(p), 0.0, 1.0])
        }))
        .expect("unipotent matrices are invertible")
    }
}

/// Slope of `log|c(leaf_point(x, leg, t)) − c(x)|` against `log t`, median over `xs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafRegularity {
    pub r_hat: f64,
    pub n_fits: usize,
    pub degenerate: bool,
}

pub fn unstable_holder_of_c(
    pair: &TriangularPair,
    xs: &[TorusPoint],
    ts: &[f64],
    leg: LegType,
) -> Result<LeafRegularity> {
    if ts.iter().any(|t| !(*t >= 1e-6 && *t <= 1e-1)) {
        return Err(LabError::InvalidArgument("t values must lie in [1e-6, 1e-1]".into()));
    }
    if decades(ts.iter().copied()) < 3.0 - 1e-9 {
        return Err(LabError::InvalidArgument("t range must span at least 3 decades".into()));
    }
    let mut slopes: Vec<f64> = xs
        .par_iter()
        .filter_map(|&x| {
            let pts: Vec<(f64, f64)> = ts
                .iter()
                .map(|&t| (t, pair.c_difference(x, leg, 0.0, t).abs()))
                .collect();
            fit_log_log(&pts, 0.0).map(|fit| fit.slope)
        })
        .collect();
    match median(&mut slopes) {
        Some(r_hat) => Ok(LeafRegularity {
            r_hat,
            n_fits: slopes.len(),
            degenerate: false,
        }),
        None => Ok(LeafRegularity {
            r_hat: f64::INFINITY,
            n_fits: 0,
            degenerate: true,
        }),
    }
}

/// Side of the grid on which smooth conjugacies are checked for invertibility.
pub const CONJUGACY_CHECK_GRID: usize = 64;

/// `A(x) = C(fx)∘B(x)∘C(x)⁻¹` together with the closed-form `C`.
pub fn smooth_conjugate_pair(
    b: &CocycleGenerator,
    c: MatrixField,
    f: &HyperbolicToralMap,
) -> Result<(CocycleGenerator, ConjugacyField)> {
    if c.dim() != b.dim() {
        return Err(LabError::DimensionMismatch {
            left: b.dim(),
            right: c.dim(),
        });
    }
    let n = CONJUGACY_CHECK_GRID;
    let bad = (0..n * n).into_par_iter().find_first(|idx| {
        let p = TorusPoint::new((idx / n) as f64 / n as f64, (idx % n) as f64 / n as f64);
        invert(&c.eval(p)).is_err()
    });
    if let Some(idx) = bad {
        return Err(LabError::SingularConjugacy {
            x1: (idx / n) as f64 / n as f64,
            x2: (idx % n) as f64 / n as f64,
        });
    }
    let a = CocycleGenerator::new(MatrixField::conjugated(c.clone(), b.field().clone(), f.clone()))?;
    let conj = ConjugacyField::closed_form(c).map_err(|_| LabError::SingularConjugacy { x1: 0.0, x2: 0.0 })?;
    Ok((a, conj))
}

/// The shipped smooth pair: `B = diag(λ^{1/2}, 1)` and `C` the rotation by `0.3·sin 2πx₁`.
pub fn rotation_pair(f: &HyperbolicToralMap) -> Result<(CocycleGenerator, CocycleGenerator, ConjugacyField)> {
    let b = CocycleGenerator::constant(Mat::from_row_slice(2, 2, &[f.lambda().sqrt(), 0.0, 0.0, 1.0]))?;
    let (a, c) = smooth_conjugate_pair(&b, rotation_field(TrigPolynomial::sin([1, 0], 0.3)), f)?;
    Ok((a, b, c))
}

/// The coupling `[[λ², 0],[0.1·cos 2πx₁, 1]]`, whose stable holonomy series diverges.
pub fn divergent_example(f: &HyperbolicToralMap) -> Result<CocycleGenerator> {
    let l2 = f.lambda() * f.lambda();
    CocycleGenerator::new(MatrixField::trig(
        2,
        vec![
            TrigPolynomial::constant(l2),
            TrigPolynomial::zero(),
            default_phi(),
            TrigPolynomial::constant(1.0),
        ],
    )?)
}

/// Tolerance and step cap of the projective power iteration.
pub const SPLITTING_TOL: f64 = 1e-10;
pub const SPLITTING_N_MAX: usize = 200;
const GENERIC_LINE: [f64; 2] = [0.6, 0.8];

/// Side of the grid on which the domination gap is measured.
pub const GAP_GRID: usize = 32;

#[derive(Debug)]
struct SplittingInner {
    b: CocycleGenerator,
    f: HyperbolicToralMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bundle {
    Fast,
    Slow,
}

/// An invariant splitting `E_fast ⊕ E_slow` of a 2-dimensional cocycle.
#[derive(Debug, Clone)]
pub struct Splitting2D {
    inner: Arc<SplittingInner>,
    pub gap: f64,
}

fn normalize(v: [f64; 2]) -> [f64; 2] {
    let n = v[0].hypot(v[1]);
    let mut u = [v[0] / n, v[1] / n];
    if u[0] < 0.0 || (u[0] == 0.0 && u[1] < 0.0) {
        u = [-u[0], -u[1]];
    }
    u
}

/// `|sin|` of the angle between two unit vectors.
fn line_angle(u: [f64; 2], v: [f64; 2]) -> f64 {
    (u[0] * v[1] - u[1] * v[0]).abs()
}

fn apply(m: &Mat, v: [f64; 2]) -> [f64; 2] {
    [m[(0, 0)] * v[0] + m[(0, 1)] * v[1], m[(1, 0)] * v[0] + m[(1, 1)] * v[1]]
}

impl SplittingInner {
    /// Fast line: images `B(x_{−1})⋯B(x_{−n})·ℓ`. Slow line: preimages
    /// `B(x_0)⁻¹⋯B(x_{n−1})⁻¹·ℓ`. Iterates until two consecutive changes fall
    /// below the tolerance.
    fn line(&self, x: TorusPoint, bundle: Bundle) -> Result<[f64; 2]> {
        let orbit: Box<dyn Iterator<Item = TorusPoint>> = match bundle {
            Bundle::Fast => Box::new(self.f.backward_orbit(x).skip(1)),
            Bundle::Slow => Box::new(self.f.forward_orbit(x)),
        };
        let mut m = crate::operator::identity(2);
        let mut prev = normalize(GENERIC_LINE);
        let mut quiet = 0;
        for (k, xk) in orbit.take(SPLITTING_N_MAX).enumerate() {
            let step = match bundle {
                Bundle::Fast => self.b.eval_mat(xk),
                Bundle::Slow => invert(&self.b.eval_mat(xk)).map_err(|_| LabError::SingularProduct { step: k })?,
            };
            m *= step;
            let scale = m.amax();
            if !(scale.is_finite() && scale > 0.0) {
                break;
            }
            m /= scale;
            let v = normalize(apply(&m, GENERIC_LINE));
            if !(v[0].is_finite() && v[1].is_finite()) {
                break;
            }
            if line_angle(v, prev) < SPLITTING_TOL {
                quiet += 1;
                if quiet >= 2 {
                    return Ok(v);
                }
            } else {
                quiet = 0;
            }
            prev = v;
        }
        Err(LabError::NoDominatedSplitting { steps: SPLITTING_N_MAX })
    }
}

impl Splitting2D {
    pub fn e_fast(&self, x: TorusPoint) -> Result<[f64; 2]> {
        self.inner.line(x, Bundle::Fast)
    }

    pub fn e_slow(&self, x: TorusPoint) -> Result<[f64; 2]> {
        self.inner.line(x, Bundle::Slow)
    }

    pub fn line(&self, x: TorusPoint, bundle: Bundle) -> Result<[f64; 2]> {
        self.inner.line(x, bundle)
    }

    /// Per-step expansion ratio `‖B e_fast‖ / ‖B e_slow‖` at `x`.
    pub fn expansion_ratio(&self, x: TorusPoint) -> Result<f64> {
        let m = self.inner.b.eval_mat(x);
        let ef = apply(&m, self.e_fast(x)?);
        let es = apply(&m, self.e_slow(x)?);
        Ok(ef[0].hypot(ef[1]) / es[0].hypot(es[1]))
    }

    /// `max |sin ∠(B(x)E_i(x), E_i(fx))|` over the grid and both bundles.
    pub fn invariance_residual(&self, grid: &[TorusPoint]) -> Result<f64> {
        let r = grid
            .par_iter()
            .map(|&x| {
                let m = self.inner.b.eval_mat(x);
                let fx = self.inner.f.apply(x, 1);
                let mut worst = 0.0f64;
                for bundle in [Bundle::Fast, Bundle::Slow] {
                    let image = normalize(apply(&m, self.line(x, bundle)?));
                    worst = worst.max(line_angle(image, self.line(fx, bundle)?));
                }
                Ok(worst)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(r.into_iter().fold(0.0, f64::max))
    }

    /// The 1×1 cocycle `x ↦ ⟨B(x) e(x), e(fx)⟩` on the chosen bundle.
    pub fn restriction(&self, bundle: Bundle) -> Result<CocycleGenerator> {
        let inner = Arc::clone(&self.inner);
        CocycleGenerator::new(MatrixField::custom(1, move |x| {
            let v = match (inner.line(x, bundle), inner.line(inner.f.apply(x, 1), bundle)) {
                (Ok(e), Ok(e_next)) => {
                    let image = apply(&inner.b.eval_mat(x), e);
                    image[0] * e_next[0] + image[1] * e_next[1]
                }
                _ => f64::NAN,
            };
            Mat::from_element(1, 1, v)
        }))
    }

    /// Hölder regression of `x ↦ E(x)` from pairs at log-spaced distances.
    pub fn holder_fit<R: Rng + ?Sized>(&self, bundle: Bundle, n_pairs: usize, rng: &mut R) -> Result<HolderFit> {
        let pairs: Vec<(TorusPoint, TorusPoint)> = (0..n_pairs)
            .map(|i| {
                let x = TorusPoint::random(rng);
                let h = 10f64.powf(-1.0 - 5.0 * i as f64 / (n_pairs.max(2) - 1) as f64);
                let ang = rng.gen::<f64>() * std::f64::consts::TAU;
                (x, x.translate([h * ang.cos(), h * ang.sin()]))
            })
            .collect();
        let pts = pairs
            .par_iter()
            .map(|(x, y)| Ok((x.dist(y), line_angle(self.line(*x, bundle)?, self.line(*y, bundle)?))))
            .collect::<Result<Vec<_>>>()?;
        holder_from_points(&pts)
    }
}

fn distinct_moduli(a0: &Operator) -> bool {
    let m = a0.mat();
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m.determinant();
    let disc = tr * tr - 4.0 * det;
    if disc <= 0.0 {
        return false;
    }
    let s = disc.sqrt();
    ((tr + s).abs() - (tr - s).abs()).abs() > 1e-12 * (tr.abs() + s)
}

/// `B(x) = A0 + eps·P(x)` and its dominated splitting.
pub fn perturbed_constant(
    a0: &Operator,
    p: MatrixField,
    eps: f64,
    f: &HyperbolicToralMap,
) -> Result<(CocycleGenerator, Splitting2D)> {
    if a0.dim() != 2 || p.dim() != 2 {
        return Err(LabError::DimensionMismatch {
            left: 2,
            right: if a0.dim() != 2 { a0.dim() } else { p.dim() },
        });
    }
    if !distinct_moduli(a0) {
        return Err(LabError::InvalidArgument("A0 needs eigenvalues of distinct moduli".into()));
    }
    let b = CocycleGenerator::new(MatrixField::Affine {
        base: a0.mat().clone(),
        scale: eps,
        field: Arc::new(p),
    })?;
    let mut split = Splitting2D {
        inner: Arc::new(SplittingInner { b: b.clone(), f: f.clone() }),
        gap: 0.0,
    };
    let grid = crate::base::uniform_grid(GAP_GRID);
    let gap = grid
        .par_iter()
        .map(|&x| split.expansion_ratio(x))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if !(gap > 1.0) {
        return Err(LabError::NoDominatedSplitting { steps: SPLITTING_N_MAX });
    }
    split.gap = gap;
    Ok((b, split))
}

/// The shipped perturbation `P(x) = [[0, cos 2πx₁],[sin 2πx₂, 0]]`.
pub fn default_perturbation() -> MatrixField {
    MatrixField::Trig {
        dim: 2,
        entries: vec![
            TrigPolynomial::zero(),
            TrigPolynomial::cos([1, 0], 1.0),
            TrigPolynomial::sin([0, 1], 1.0),
            TrigPolynomial::zero(),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::{uniform_grid, RateData};
    use crate::cocycle::{check_fiber_bunching, check_weak_fiber_bunching};
    use crate::conjugacy::cohomology_residual;
    use crate::holonomy::{leg_holonomy, HolonomyOptions};
    use crate::operator::spectral_norm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair() -> TriangularPair {
        triangular_family(&HyperbolicToralMap::cat(), 0.5, default_phi(), DEFAULT_N_C).unwrap()
    }

    /// Direct evaluation of the c series at two points, without leaf tracking.
    fn c_direct(p: &TriangularPair, x: TorusPoint) -> f64 {
        (0..=p.n_c)
            .map(|k| -p.mu.powi(-(k as i32) - 1) * p.phi.eval(p.f.apply(x, k as i64)))
            .sum()
    }

    #[test]
    fn family_constants() {
        let p = pair();
        assert!((p.mu - 1.618_033_988_7).abs() < 1e-10);
        assert!(triangular_family(&p.f, 1.0, default_phi(), 60).is_err());
        assert!(triangular_family(&p.f, 0.5, TrigPolynomial::cos([1, 0], 2.0), 60).is_err());
        let rates = RateData::toral(&p.f, 0.4);
        let grid = uniform_grid(16);
        assert!(check_fiber_bunching(&p.a, &rates, 1.0, &grid).unwrap().pointwise_ok);
        assert!(check_fiber_bunching(&p.b, &rates, 1.0, &grid).unwrap().pointwise_ok);
    }

    #[test]
    fn zero_coupling_is_trivial() {
        let p = triangular_family(&HyperbolicToralMap::cat(), 0.5, TrigPolynomial::zero(), 60).unwrap();
        let x = TorusPoint::new(0.3, 0.6);
        assert_eq!(p.a.eval_mat(x), p.b.eval_mat(x));
        assert_eq!(p.c(x), 0.0);
        assert_eq!(p.h_s(x, 0.0, 0.2), 0.0);
        assert_eq!(p.h_u(x, 0.0, 0.2), 0.0);
        let r = unstable_holder_of_c(&p, &[x], &[1e-5, 1e-4, 1e-3, 1e-2], LegType::Unstable).unwrap();
        assert!(r.degenerate);
    }

    #[test]
    fn twisted_identity() {
        let p = pair();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let x = TorusPoint::random(&mut rng);
            assert!(p.twisted_residual(x) <= p.c_tail() + 1e-12);
        }
        let c = p.conjugacy();
        assert!(cohomology_residual(&p.a, &p.b, &c, &p.f, &uniform_grid(16)).unwrap() < 1e-12);
    }

    #[test]
    fn stable_oracle_is_a_c_difference() {
        let p = pair();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let x = TorusPoint::random(&mut rng);
            let t: f64 = rng.gen_range(-0.5..0.5);
            let d = p.c_difference(x, LegType::Stable, 0.0, t);
            assert!((p.h_s(x, 0.0, t) - d).abs() < 1e-14);
            // direct evaluation at the rounded endpoint agrees up to rounding amplification
            let y = p.f.leaf_point(x, LegType::Stable, t);
            assert!((c_direct(&p, y) - c_direct(&p, x) - d).abs() < 1e-7);
        }
    }

    #[test]
    fn oracles_match_numeric_holonomy() {
        let p = pair();
        let opts = HolonomyOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for i in 0..20 {
            let ty = if i % 2 == 0 { LegType::Stable } else { LegType::Unstable };
            let leg = SuLeg::new(&p.f, TorusPoint::random(&mut rng), ty, rng.gen_range(-0.5..0.5));
            let h = leg_holonomy(&p.a, &p.f, &leg, &opts).unwrap();
            let d = spectral_norm(&(h.h.mat() - p.leg_oracle(&leg).mat()));
            assert!(d < 1e-10, "{ty}: {d}");
        }
    }

    #[test]
    fn leaf_regularity_of_c() {
        let p = pair();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let xs: Vec<TorusPoint> = (0..20).map(|_| TorusPoint::random(&mut rng)).collect();
        let ts: Vec<f64> = (0..=20).map(|i| 10f64.powf(-6.0 + 5.0 * i as f64 / 20.0)).collect();
        let u = unstable_holder_of_c(&p, &xs, &ts, LegType::Unstable).unwrap();
        assert!(u.r_hat > 0.4 && u.r_hat < 0.6, "{u:?}");
        let s = unstable_holder_of_c(&p, &xs, &ts, LegType::Stable).unwrap();
        assert!(s.r_hat >= 0.9, "{s:?}");
        assert!(unstable_holder_of_c(&p, &xs, &[1e-3, 1e-2], LegType::Unstable).is_err());
    }

    #[test]
    fn smooth_pair_construction() {
        let f = HyperbolicToralMap::cat();
        let (a, b, c) = rotation_pair(&f).unwrap();
        assert!(cohomology_residual(&a, &b, &c, &f, &uniform_grid(64)).unwrap() < 1e-12);
        let rates = RateData::toral(&f, 0.4);
        assert!(check_fiber_bunching(&a, &rates, 1.0, &uniform_grid(16)).unwrap().pointwise_ok);
        let (a_id, _) = smooth_conjugate_pair(&b, MatrixField::Constant(crate::operator::identity(2)), &f).unwrap();
        assert_eq!(a_id.eval_mat(TorusPoint::new(0.2, 0.9)), b.eval_mat(TorusPoint::new(0.2, 0.9)));
        let shear = MatrixField::trig(
            2,
            vec![
                TrigPolynomial::constant(1.0),
                TrigPolynomial::cos([0, 1], 0.2),
                TrigPolynomial::zero(),
                TrigPolynomial::constant(1.0),
            ],
        )
        .unwrap();
        let (a2, c2) = smooth_conjugate_pair(&b, shear, &f).unwrap();
        assert!(cohomology_residual(&a2, &b, &c2, &f, &uniform_grid(64)).unwrap() < 1e-12);
        let singular = MatrixField::trig(
            2,
            vec![
                TrigPolynomial::cos([1, 0], 1.0),
                TrigPolynomial::zero(),
                TrigPolynomial::zero(),
                TrigPolynomial::constant(1.0),
            ],
        )
        .unwrap();
        assert!(matches!(
            smooth_conjugate_pair(&b, singular, &f),
            Err(LabError::SingularConjugacy { .. })
        ));
    }

    #[test]
    fn unperturbed_splitting_is_the_eigenbasis() {
        let f = HyperbolicToralMap::cat();
        let a0 = Operator::diag(&[2.0, 0.5]).unwrap();
        let (_, s) = perturbed_constant(&a0, default_perturbation(), 0.0, &f).unwrap();
        let x = TorusPoint::new(0.4, 0.1);
        assert!(line_angle(s.e_fast(x).unwrap(), [1.0, 0.0]) < 1e-10);
        assert!(line_angle(s.e_slow(x).unwrap(), [0.0, 1.0]) < 1e-10);
        assert!((s.gap - 4.0).abs() < 1e-9);
    }

    #[test]
    fn perturbed_splitting() {
        let f = HyperbolicToralMap::cat();
        let a0 = Operator::diag(&[2.0, 0.5]).unwrap();
        let (_, s) = perturbed_constant(&a0, default_perturbation(), 0.05, &f).unwrap();
        assert!(s.gap > 3.0, "{}", s.gap);
        assert!(s.invariance_residual(&uniform_grid(8)).unwrap() < 1e-8);
        let rates = RateData::toral(&f, 0.4);
        for bundle in [Bundle::Fast, Bundle::Slow] {
            let r = s.restriction(bundle).unwrap();
            let w = check_weak_fiber_bunching(&r, &f, &rates, 1.0, 12, &uniform_grid(4)).unwrap();
            assert!(w.theta_hat < 1.0);
        }
        let fit = s.holder_fit(Bundle::Fast, 100, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(!fit.degenerate && fit.beta_hat > 0.0, "{fit:?}");
    }

    #[test]
    fn equal_moduli_are_rejected() {
        let f = HyperbolicToralMap::cat();
        let rot = Operator::from_rows(2, &[0.0, -1.0, 1.0, 0.0]).unwrap();
        assert!(perturbed_constant(&rot, default_perturbation(), 0.0, &f).is_err());
        let huge = perturbed_constant(&Operator::diag(&[2.0, 0.5]).unwrap(), default_perturbation(), 5.0, &f);
        assert!(huge.is_err());
    }
}
