//! Base dynamics: hyperbolic automorphisms of the 2-torus, their straight-line
//! stable/unstable leaves, su-paths, and the pointwise rate-inequality checks.
//!
//! Orbits are computed exactly. A point of `[0,1)²` is quantized to a 64-bit
//! fixed-point fraction and the integer matrix acts on `(Z / 2^64)²` with
//! wrapping arithmetic, which is the exact action of the automorphism on the
//! dyadic point. Forward and backward iterates therefore never drift apart, no
//! matter how many steps are taken.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{LabError, Result};

const TWO_POW_64: f64 = 18_446_744_073_709_551_616.0;

/// Canonical representative of a real number modulo 1, in `[0, 1)`.
#[inline]
pub fn reduce_unit(v: f64) -> f64 {
    let r = v - v.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// A point of the torus `R² / Z²`, stored as its representative in `[0,1)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusPoint {
    coords: [f64; 2],
}

impl TorusPoint {
    pub fn new(x1: f64, x2: f64) -> Self {
        Self {
            coords: [reduce_unit(x1), reduce_unit(x2)],
        }
    }

    pub const fn origin() -> Self {
        Self { coords: [0.0, 0.0] }
    }

    pub fn x1(&self) -> f64 {
        self.coords[0]
    }

    pub fn x2(&self) -> f64 {
        self.coords[1]
    }

    pub fn coords(&self) -> [f64; 2] {
        self.coords
    }

    /// `reduce(self + v)`.
    pub fn translate(&self, v: [f64; 2]) -> Self {
        Self::new(self.coords[0] + v[0], self.coords[1] + v[1])
    }

    /// Flat distance on the torus: the minimum over lifts of the Euclidean distance.
    pub fn dist(&self, other: &TorusPoint) -> f64 {
        let wrap = |a: f64, b: f64| {
            let d = (a - b).abs();
            d.min(1.0 - d)
        };
        wrap(self.coords[0], other.coords[0]).hypot(wrap(self.coords[1], other.coords[1]))
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::new(rng.gen::<f64>(), rng.gen::<f64>())
    }

    fn to_fixed(self) -> [u64; 2] {
        // coords < 1, so the scaled value is < 2^64 and the cast truncates.
        [
            (self.coords[0] * TWO_POW_64) as u64,
            (self.coords[1] * TWO_POW_64) as u64,
        ]
    }

    fn from_fixed(u: [u64; 2]) -> Self {
        Self::new(u[0] as f64 / TWO_POW_64, u[1] as f64 / TWO_POW_64)
    }
}

impl fmt::Display for TorusPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.coords[0], self.coords[1])
    }
}

/// Regular `n × n` node grid `{(i/n, j/n)}`.
pub fn uniform_grid(n: usize) -> Vec<TorusPoint> {
    let mut pts = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            pts.push(TorusPoint::new(i as f64 / n as f64, j as f64 / n as f64));
        }
    }
    pts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LegType {
    Stable,
    Unstable,
}

impl fmt::Display for LegType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LegType::Stable => f.write_str("stable"),
            LegType::Unstable => f.write_str("unstable"),
        }
    }
}

type FixedMatrix = [[u64; 2]; 2];

fn fixed_mul(a: &FixedMatrix, b: &FixedMatrix) -> FixedMatrix {
    let mut out = [[0u64; 2]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0]
                .wrapping_mul(b[0][j])
                .wrapping_add(a[i][1].wrapping_mul(b[1][j]));
        }
    }
    out
}

fn fixed_apply(m: &FixedMatrix, u: [u64; 2]) -> [u64; 2] {
    [
        m[0][0].wrapping_mul(u[0]).wrapping_add(m[0][1].wrapping_mul(u[1])),
        m[1][0].wrapping_mul(u[0]).wrapping_add(m[1][1].wrapping_mul(u[1])),
    ]
}

fn to_fixed_matrix(m: &[[i64; 2]; 2]) -> FixedMatrix {
    [
        [m[0][0] as u64, m[0][1] as u64],
        [m[1][0] as u64, m[1][1] as u64],
    ]
}

/// A hyperbolic linear automorphism of the 2-torus with its eigen-structure.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperbolicToralMap {
    matrix: [[i64; 2]; 2],
    inverse: [[i64; 2]; 2],
    det: i64,
    lambda: f64,
    eig_u: f64,
    eig_s: f64,
    v_u: [f64; 2],
    v_s: [f64; 2],
}

fn eigenvector(m: &[[i64; 2]; 2], ev: f64) -> [f64; 2] {
    let (a, b, c, d) = (
        m[0][0] as f64,
        m[0][1] as f64,
        m[1][0] as f64,
        m[1][1] as f64,
    );
    let first = [b, ev - a];
    let second = [ev - d, c];
    let pick = if first[0].hypot(first[1]) >= second[0].hypot(second[1]) {
        first
    } else {
        second
    };
    let norm = pick[0].hypot(pick[1]);
    let mut v = [pick[0] / norm, pick[1] / norm];
    if v[0] < 0.0 || (v[0] == 0.0 && v[1] < 0.0) {
        v = [-v[0], -v[1]];
    }
    v
}

impl HyperbolicToralMap {
    pub fn new(matrix: [[i64; 2]; 2]) -> Result<Self> {
        let det = matrix[0][0] * matrix[1][1] - matrix[0][1] * matrix[1][0];
        if det.abs() != 1 {
            return Err(LabError::NotUnimodular { det });
        }
        let trace = matrix[0][0] + matrix[1][1];
        // det = 1 needs |tr| > 2; det = -1 only excludes tr = 0.
        let hyperbolic = if det == 1 { trace.abs() > 2 } else { trace != 0 };
        if !hyperbolic {
            return Err(LabError::NotHyperbolic { trace });
        }
        let tr = trace as f64;
        let disc = (tr * tr - 4.0 * det as f64).sqrt();
        let eig_u = 0.5 * (tr + tr.signum() * disc);
        let eig_s = det as f64 / eig_u;
        let inverse = [
            [det * matrix[1][1], -det * matrix[0][1]],
            [-det * matrix[1][0], det * matrix[0][0]],
        ];
        Ok(Self {
            matrix,
            inverse,
            det,
            lambda: eig_u.abs(),
            eig_u,
            eig_s,
            v_u: eigenvector(&matrix, eig_u),
            v_s: eigenvector(&matrix, eig_s),
        })
    }

    /// The cat map `[[2,1],[1,1]]`.
    pub fn cat() -> Self {
        Self::new([[2, 1], [1, 1]]).expect("cat map is hyperbolic")
    }

    pub fn matrix(&self) -> [[i64; 2]; 2] {
        self.matrix
    }

    pub fn det(&self) -> i64 {
        self.det
    }

    /// Modulus of the unstable eigenvalue, `> 1`.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Signed eigenvalue along the given leaf direction.
    pub fn eigenvalue(&self, leg: LegType) -> f64 {
        match leg {
            LegType::Stable => self.eig_s,
            LegType::Unstable => self.eig_u,
        }
    }

    /// Unit eigenvector spanning the given leaf direction.
    pub fn direction(&self, leg: LegType) -> [f64; 2] {
        match leg {
            LegType::Stable => self.v_s,
            LegType::Unstable => self.v_u,
        }
    }

    pub fn v_u(&self) -> [f64; 2] {
        self.v_u
    }

    pub fn v_s(&self) -> [f64; 2] {
        self.v_s
    }

    /// Linear action of the matrix on a tangent vector (no reduction).
    pub fn push_vector(&self, v: [f64; 2]) -> [f64; 2] {
        let m = &self.matrix;
        [
            m[0][0] as f64 * v[0] + m[0][1] as f64 * v[1],
            m[1][0] as f64 * v[0] + m[1][1] as f64 * v[1],
        ]
    }

    fn fixed_power(&self, n: i64) -> FixedMatrix {
        let base = if n >= 0 { &self.matrix } else { &self.inverse };
        let mut base = to_fixed_matrix(base);
        let mut acc: FixedMatrix = [[1, 0], [0, 1]];
        let mut e = n.unsigned_abs();
        while e > 0 {
            if e & 1 == 1 {
                acc = fixed_mul(&acc, &base);
            }
            base = fixed_mul(&base, &base);
            e >>= 1;
        }
        acc
    }

    /// `fⁿ(p)` for any integer `n`; an exact group action on quantized points.
    pub fn apply(&self, p: TorusPoint, n: i64) -> TorusPoint {
        if n == 0 {
            return p;
        }
        TorusPoint::from_fixed(fixed_apply(&self.fixed_power(n), p.to_fixed()))
    }

    /// Iterator over `p, f(p), f²(p), …`.
    pub fn forward_orbit(&self, p: TorusPoint) -> Orbit {
        Orbit {
            state: p.to_fixed(),
            step: to_fixed_matrix(&self.matrix),
            start: Some(p),
        }
    }

    /// Iterator over `p, f⁻¹(p), f⁻²(p), …`.
    pub fn backward_orbit(&self, p: TorusPoint) -> Orbit {
        Orbit {
            state: p.to_fixed(),
            step: to_fixed_matrix(&self.inverse),
            start: Some(p),
        }
    }

    /// `reduce(x + t·v)` where `v` spans the chosen leaf.
    pub fn leaf_point(&self, x: TorusPoint, leg: LegType, t: f64) -> TorusPoint {
        if t == 0.0 {
            return x;
        }
        let v = self.direction(leg);
        x.translate([t * v[0], t * v[1]])
    }

    /// Displacement `t·λⁿ·v` of the n-th iterate of a leaf point relative to the
    /// n-th iterate of its anchor (`n` may be negative).
    pub fn leaf_offset(&self, leg: LegType, t: f64, n: i32) -> [f64; 2] {
        let scale = t * self.eigenvalue(leg).powi(n);
        let v = self.direction(leg);
        [scale * v[0], scale * v[1]]
    }
}

/// Exact orbit iterator; the first item is the starting point itself.
#[derive(Debug, Clone)]
pub struct Orbit {
    state: [u64; 2],
    step: FixedMatrix,
    start: Option<TorusPoint>,
}

impl Iterator for Orbit {
    type Item = TorusPoint;

    fn next(&mut self) -> Option<TorusPoint> {
        if let Some(p) = self.start.take() {
            return Some(p);
        }
        self.state = fixed_apply(&self.step, self.state);
        Some(TorusPoint::from_fixed(self.state))
    }
}

/// A straight segment of a stable or unstable leaf.
///
/// Besides its endpoints every leg remembers the anchor point it was measured
/// from, so that holonomies of a leg and of its reversal are evaluated along
/// the same leaf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuLeg {
    pub start: TorusPoint,
    pub leg_type: LegType,
    pub t: f64,
    pub end: TorusPoint,
    anchor: TorusPoint,
    offset: f64,
}

impl SuLeg {
    pub fn new(map: &HyperbolicToralMap, start: TorusPoint, leg_type: LegType, t: f64) -> Self {
        Self {
            start,
            leg_type,
            t,
            end: map.leaf_point(start, leg_type, t),
            anchor: start,
            offset: 0.0,
        }
    }

    pub fn anchor(&self) -> TorusPoint {
        self.anchor
    }

    /// Leaf parameters of `start` and `end` measured from the anchor.
    pub fn leaf_range(&self) -> (f64, f64) {
        (self.offset, self.offset + self.t)
    }

    /// Leaf distance between the endpoints.
    pub fn length(&self) -> f64 {
        self.t.abs()
    }

    pub fn reversed(&self) -> Self {
        Self {
            start: self.end,
            leg_type: self.leg_type,
            t: -self.t,
            end: self.start,
            anchor: self.anchor,
            offset: self.offset + self.t,
        }
    }

    fn with_end(mut self, end: TorusPoint) -> Self {
        self.end = end;
        self
    }
}

/// A concatenation of leaf segments; the empty path sits at `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuPath {
    origin: TorusPoint,
    legs: Vec<SuLeg>,
}

impl SuPath {
    pub fn trivial(p: TorusPoint) -> Self {
        Self {
            origin: p,
            legs: Vec::new(),
        }
    }

    /// Builds a path, checking that consecutive legs share endpoints exactly.
    pub fn new(origin: TorusPoint, legs: Vec<SuLeg>) -> Result<Self> {
        let mut at = origin;
        for (i, leg) in legs.iter().enumerate() {
            if leg.start != at {
                return Err(LabError::InvalidArgument(format!(
                    "leg {i} starts at {} but previous endpoint is {at}",
                    leg.start
                )));
            }
            at = leg.end;
        }
        Ok(Self { origin, legs })
    }

    pub fn legs(&self) -> &[SuLeg] {
        &self.legs
    }

    pub fn start(&self) -> TorusPoint {
        self.origin
    }

    pub fn end(&self) -> TorusPoint {
        self.legs.last().map_or(self.origin, |l| l.end)
    }

    pub fn is_trivial(&self) -> bool {
        self.legs.is_empty()
    }

    pub fn reverse(&self) -> Self {
        Self {
            origin: self.end(),
            legs: self.legs.iter().rev().map(SuLeg::reversed).collect(),
        }
    }

    pub fn concat(&self, other: &SuPath) -> Result<Self> {
        if self.end() != other.start() {
            return Err(LabError::InvalidArgument(format!(
                "cannot concatenate: {} != {}",
                self.end(),
                other.start()
            )));
        }
        let mut legs = self.legs.clone();
        legs.extend_from_slice(&other.legs);
        Ok(Self {
            origin: self.origin,
            legs,
        })
    }

    pub fn is_cycle(&self) -> bool {
        self.start() == self.end()
    }

    /// Image of the path under `fⁿ`: every leaf parameter is scaled by the eigenvalue.
    pub fn push_forward(&self, map: &HyperbolicToralMap, n: i32) -> Self {
        let origin = map.apply(self.origin, n as i64);
        let mut legs = Vec::with_capacity(self.legs.len());
        let mut at = origin;
        for leg in &self.legs {
            let t = leg.t * map.eigenvalue(leg.leg_type).powi(n);
            let l = SuLeg::new(map, at, leg.leg_type, t);
            at = l.end;
            legs.push(l);
        }
        Self { origin, legs }
    }
}

#[derive(Debug, Clone, Copy)]
struct LiftCandidate {
    cost: f64,
    k: [i64; 2],
    s: f64,
    t: f64,
}

/// All unstable-then-stable connections from `x` to `y` within `max_leg`,
/// ordered by `max(|s|,|t|)` and then lexicographically by the lift `k`.
fn su_connections(
    map: &HyperbolicToralMap,
    x: TorusPoint,
    y: TorusPoint,
    max_leg: f64,
) -> (Vec<LiftCandidate>, f64) {
    let vu = map.v_u();
    let vs = map.v_s();
    let det = vu[0] * vs[1] - vu[1] * vs[0];
    // |s v_u + t v_s| <= 2 max(|s|,|t|), so lifts beyond this radius cannot qualify.
    let radius = 3i64.max((2.0 * max_leg).ceil() as i64 + 2);
    let mut out = Vec::new();
    let mut best = f64::INFINITY;
    for k1 in -radius..=radius {
        for k2 in -radius..=radius {
            let d = [
                y.x1() + k1 as f64 - x.x1(),
                y.x2() + k2 as f64 - x.x2(),
            ];
            let s = (d[0] * vs[1] - d[1] * vs[0]) / det;
            let t = (vu[0] * d[1] - vu[1] * d[0]) / det;
            let cost = s.abs().max(t.abs());
            best = best.min(cost);
            if cost <= max_leg {
                out.push(LiftCandidate {
                    cost,
                    k: [k1, k2],
                    s,
                    t,
                });
            }
        }
    }
    // costs equal up to rounding count as ties, broken by the lexicographic lift
    let key = |c: &LiftCandidate| (c.cost * 1e12).round() as i64;
    out.sort_by(|a, b| key(a).cmp(&key(b)).then(a.k.cmp(&b.k)));
    (out, best)
}

/// Two-leg su-path (unstable leg, then stable leg) from `x` to `y`, using the
/// lift of `y` that minimizes the longer leg.
pub fn connect_su(
    map: &HyperbolicToralMap,
    x: TorusPoint,
    y: TorusPoint,
    max_leg: f64,
) -> Result<SuPath> {
    connect_su_ranked(map, x, y, max_leg, 0)
}

/// Like [`connect_su`] but uses the `rank`-th best lift; rank 1 gives a second,
/// distinct route between the same points.
pub fn connect_su_ranked(
    map: &HyperbolicToralMap,
    x: TorusPoint,
    y: TorusPoint,
    max_leg: f64,
    rank: usize,
) -> Result<SuPath> {
    if !(max_leg > 0.0) {
        return Err(LabError::InvalidArgument(format!(
            "max_leg must be positive, got {max_leg}"
        )));
    }
    if x == y && rank == 0 {
        return Ok(SuPath::trivial(x));
    }
    let (cands, best) = su_connections(map, x, y, max_leg);
    let Some(c) = cands.get(rank) else {
        return Err(LabError::NoPathWithinBound { max_leg, best });
    };
    let first = SuLeg::new(map, x, LegType::Unstable, c.s);
    let mut second = SuLeg::new(map, first.end, LegType::Stable, c.t);
    debug_assert!(second.end.dist(&y) < 1e-12, "su connection misses target");
    if second.end.dist(&y) < 1e-12 {
        second = second.with_end(y);
    }
    SuPath::new(x, vec![first, second])
}

/// A pointwise rate function on the torus.
#[derive(Clone)]
pub enum Rate {
    Constant(f64),
    Field(Arc<dyn Fn(TorusPoint) -> f64 + Send + Sync>),
}

impl Rate {
    pub fn at(&self, p: TorusPoint) -> f64 {
        match self {
            Rate::Constant(c) => *c,
            Rate::Field(f) => f(p),
        }
    }
}

impl fmt::Debug for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rate::Constant(c) => write!(f, "Constant({c})"),
            Rate::Field(_) => f.write_str("Field(..)"),
        }
    }
}

/// The rate functions ν, ν̂, γ, γ̂, μ, μ̂ bounding the base derivative.
#[derive(Debug, Clone)]
pub struct RateData {
    pub nu: Rate,
    pub nu_hat: Rate,
    pub gamma: Rate,
    pub gamma_hat: Rate,
    pub mu: Rate,
    pub mu_hat: Rate,
}

/// Rates evaluated at a single point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSample {
    pub nu: f64,
    pub nu_hat: f64,
    pub gamma: f64,
    pub gamma_hat: f64,
    pub mu: f64,
    pub mu_hat: f64,
}

impl RateData {
    /// Constant rates for a toral automorphism: ν = ν̂ = μ = μ̂ = 1/λ and
    /// γ = γ̂ = λ^(-gamma_exponent).
    pub fn toral(map: &HyperbolicToralMap, gamma_exponent: f64) -> Self {
        let inv = 1.0 / map.lambda();
        let g = map.lambda().powf(-gamma_exponent);
        Self {
            nu: Rate::Constant(inv),
            nu_hat: Rate::Constant(inv),
            gamma: Rate::Constant(g),
            gamma_hat: Rate::Constant(g),
            mu: Rate::Constant(inv),
            mu_hat: Rate::Constant(inv),
        }
    }

    pub fn constant(nu: f64, nu_hat: f64, gamma: f64, gamma_hat: f64, mu: f64, mu_hat: f64) -> Self {
        Self {
            nu: Rate::Constant(nu),
            nu_hat: Rate::Constant(nu_hat),
            gamma: Rate::Constant(gamma),
            gamma_hat: Rate::Constant(gamma_hat),
            mu: Rate::Constant(mu),
            mu_hat: Rate::Constant(mu_hat),
        }
    }

    pub fn at(&self, p: TorusPoint) -> RateSample {
        RateSample {
            nu: self.nu.at(p),
            nu_hat: self.nu_hat.at(p),
            gamma: self.gamma.at(p),
            gamma_hat: self.gamma_hat.at(p),
            mu: self.mu.at(p),
            mu_hat: self.mu_hat.at(p),
        }
    }

    /// μ ≤ ν < γ < γ̂⁻¹ < ν̂⁻¹ ≤ μ̂⁻¹ at every grid point.
    pub fn chain_holds(&self, grid: &[TorusPoint]) -> bool {
        grid.iter().all(|&p| {
            let r = self.at(p);
            r.mu <= r.nu
                && r.nu < r.gamma
                && r.gamma < 1.0 / r.gamma_hat
                && 1.0 / r.gamma_hat < 1.0 / r.nu_hat
                && 1.0 / r.nu_hat <= 1.0 / r.mu_hat
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterBunchingReport {
    pub holds: bool,
    pub worst_margin: f64,
}

/// ν < γγ̂ and ν̂ < γγ̂ on the grid; the margin is `γγ̂ − max(ν, ν̂)`.
pub fn check_center_bunching(rates: &RateData, grid: &[TorusPoint]) -> CenterBunchingReport {
    let worst_margin = grid
        .iter()
        .map(|&p| {
            let r = rates.at(p);
            r.gamma * r.gamma_hat - r.nu.max(r.nu_hat)
        })
        .fold(f64::INFINITY, f64::min);
    CenterBunchingReport {
        holds: worst_margin > 0.0,
        worst_margin,
    }
}

/// ν^θ < γγ̂, ν̂^θ < γγ̂, νγ⁻¹ < μ^θ and ν̂γ̂⁻¹ < μ̂^θ on the grid.
/// The margin is the smallest `rhs − lhs` over the four inequalities.
pub fn check_strong_center_bunching(
    rates: &RateData,
    theta: f64,
    eps: f64,
    grid: &[TorusPoint],
) -> Result<CenterBunchingReport> {
    if !(theta > 0.0 && theta < eps && eps < 1.0) {
        return Err(LabError::InvalidTheta { theta, eps });
    }
    let worst_margin = grid
        .iter()
        .map(|&p| {
            let r = rates.at(p);
            let gg = r.gamma * r.gamma_hat;
            [
                gg - r.nu.powf(theta),
                gg - r.nu_hat.powf(theta),
                r.mu.powf(theta) - r.nu / r.gamma,
                r.mu_hat.powf(theta) - r.nu_hat / r.gamma_hat,
            ]
            .into_iter()
            .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min);
    Ok(CenterBunchingReport {
        holds: worst_margin > 0.0,
        worst_margin,
    })
}
