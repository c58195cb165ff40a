//! Matrix-valued functions on the torus.
//!
//! Besides plain evaluation every field can return the pair
//! `(M(x), M(x + δ) − M(x))` with the difference computed directly, which keeps
//! holonomy products accurate when `δ` is far below the rounding level of `x`.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::base::{HyperbolicToralMap, TorusPoint};
use crate::error::{LabError, Result};
use crate::operator::{invert, Mat};
use crate::trig::TrigPolynomial;

/// A value together with its increment.
#[derive(Debug, Clone)]
pub struct MatPair {
    pub value: Mat,
    pub diff: Mat,
}

impl MatPair {
    pub fn constant(value: Mat) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            diff: Mat::zeros(r, c),
        }
    }

    pub fn shifted(&self) -> Mat {
        &self.value + &self.diff
    }

    pub fn mul(&self, rhs: &MatPair) -> MatPair {
        MatPair {
            value: &self.value * &rhs.value,
            diff: &self.diff * &rhs.value + &self.value * &rhs.diff + &self.diff * &rhs.diff,
        }
    }

    pub fn inverse(&self) -> Result<MatPair> {
        let vinv = invert(&self.value)?;
        let winv = invert(&self.shifted())?;
        let diff = -(&winv * &self.diff * &vinv);
        Ok(MatPair { value: vinv, diff })
    }
}

/// Samples on a regular `n1 × n2` grid; node `(i, j)` sits at `(i/n1, j/n2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    dim: usize,
    n1: usize,
    n2: usize,
    nodes: Vec<Mat>,
}

impl GridField {
    pub fn new(dim: usize, n1: usize, n2: usize, nodes: Vec<Mat>) -> Result<Self> {
        if dim == 0 || n1 == 0 || n2 == 0 || nodes.len() != n1 * n2 {
            return Err(LabError::InvalidArgument(format!(
                "grid of {n1}x{n2} nodes of dimension {dim} needs {} matrices, got {}",
                n1 * n2,
                nodes.len()
            )));
        }
        if let Some(m) = nodes.iter().find(|m| m.shape() != (dim, dim)) {
            return Err(LabError::DimensionMismatch {
                left: dim,
                right: m.nrows(),
            });
        }
        Ok(Self { dim, n1, n2, nodes })
    }

    /// Plain text: a header `d n1 n2`, then `n1·n2` rows of `d·d` row-major entries.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| LabError::InvalidArgument(format!("grid file: {msg}"));
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| bad("empty".into()))?;
        let h: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad(format!("bad header '{header}'"))))
            .collect::<Result<_>>()?;
        let [d, n1, n2] = h[..] else {
            return Err(bad(format!("header needs 'd n1 n2', got '{header}'")));
        };
        let mut nodes = Vec::with_capacity(n1 * n2);
        for (row, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| bad(format!("row {row}: bad number '{s}'"))))
                .collect::<Result<_>>()?;
            if vals.len() != d * d {
                return Err(bad(format!("row {row}: expected {} entries, got {}", d * d, vals.len())));
            }
            nodes.push(Mat::from_row_slice(d, d, &vals));
        }
        Self::new(d, n1, n2, nodes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            LabError::InvalidArgument(format!("cannot read grid file {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.dim, self.n1, self.n2);
        for m in &self.nodes {
            let row: Vec<String> = m.transpose().iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.dim, self.n1, self.n2)
    }

    fn node(&self, i: usize, j: usize) -> &Mat {
        &self.nodes[(i % self.n1) * self.n2 + (j % self.n2)]
    }

    /// Bilinear interpolation with wraparound.
    pub fn eval(&self, p: TorusPoint) -> Mat {
        let u = p.x1() * self.n1 as f64;
        let v = p.x2() * self.n2 as f64;
        let (i, j) = (u.floor() as usize, v.floor() as usize);
        let (fu, fv) = (u - u.floor(), v - v.floor());
        self.node(i, j) * ((1.0 - fu) * (1.0 - fv))
            + self.node(i + 1, j) * (fu * (1.0 - fv))
            + self.node(i, j + 1) * ((1.0 - fu) * fv)
            + self.node(i + 1, j + 1) * (fu * fv)
    }
}

pub type CustomFn = Arc<dyn Fn(TorusPoint) -> Mat + Send + Sync>;

/// A matrix-valued function `x ↦ M(x)`.
#[derive(Clone)]
pub enum MatrixField {
    Constant(Mat),
    /// Row-major entries, each a trigonometric polynomial.
    Trig { dim: usize, entries: Vec<TrigPolynomial> },
    /// `scale · R(θ(x))` with `θ` in radians.
    Rotation { angle: TrigPolynomial, scale: f64 },
    /// `M₁(x) M₂(x) ⋯`.
    Product(Vec<MatrixField>),
    /// `base + scale·P(x)`.
    Affine {
        base: Mat,
        scale: f64,
        field: Arc<MatrixField>,
    },
    /// `C(f x) B(x) C(x)⁻¹`.
    Conjugated {
        outer: Arc<MatrixField>,
        inner: Arc<MatrixField>,
        map: HyperbolicToralMap,
    },
    Grid(Arc<GridField>),
    Custom { dim: usize, f: CustomFn },
}

impl fmt::Debug for MatrixField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixField::Constant(m) => write!(f, "Constant({m:?})"),
            MatrixField::Trig { dim, entries } => {
                let e: Vec<String> = entries.iter().map(|p| p.to_string()).collect();
                write!(f, "Trig {{ dim: {dim}, entries: {e:?} }}")
            }
            MatrixField::Rotation { angle, scale } => {
                write!(f, "Rotation {{ angle: {angle}, scale: {scale} }}")
            }
            MatrixField::Product(v) => f.debug_tuple("Product").field(v).finish(),
            MatrixField::Affine { base, scale, field } => f
                .debug_struct("Affine")
                .field("base", base)
                .field("scale", scale)
                .field("field", field)
                .finish(),
            MatrixField::Conjugated { outer, inner, .. } => f
                .debug_struct("Conjugated")
                .field("outer", outer)
                .field("inner", inner)
                .finish_non_exhaustive(),
            MatrixField::Grid(g) => {
                let (d, n1, n2) = g.dims();
                write!(f, "Grid({d}, {n1}x{n2})")
            }
            MatrixField::Custom { dim, .. } => write!(f, "Custom({dim})"),
        }
    }
}

fn rotation(theta: f64, scale: f64) -> Mat {
    let (s, c) = theta.sin_cos();
    Mat::from_row_slice(2, 2, &[scale * c, -scale * s, scale * s, scale * c])
}

impl MatrixField {
    pub fn trig(dim: usize, entries: Vec<TrigPolynomial>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(LabError::InvalidArgument(format!(
                "{dim}x{dim} field needs {} entries, got {}",
                dim * dim,
                entries.len()
            )));
        }
        Ok(MatrixField::Trig { dim, entries })
    }

    pub fn custom(dim: usize, f: impl Fn(TorusPoint) -> Mat + Send + Sync + 'static) -> Self {
        MatrixField::Custom { dim, f: Arc::new(f) }
    }

    pub fn conjugated(outer: MatrixField, inner: MatrixField, map: HyperbolicToralMap) -> Self {
        MatrixField::Conjugated {
            outer: Arc::new(outer),
            inner: Arc::new(inner),
            map,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            MatrixField::Constant(m) => m.nrows(),
            MatrixField::Trig { dim, .. } | MatrixField::Custom { dim, .. } => *dim,
            MatrixField::Rotation { .. } => 2,
            MatrixField::Product(v) => v.first().map_or(0, MatrixField::dim),
            MatrixField::Affine { base, .. } => base.nrows(),
            MatrixField::Conjugated { inner, .. } => inner.dim(),
            MatrixField::Grid(g) => g.dims().0,
        }
    }

    /// True when the field does not depend on the point.
    pub fn is_constant(&self) -> bool {
        match self {
            MatrixField::Constant(_) => true,
            MatrixField::Trig { entries, .. } => entries.iter().all(TrigPolynomial::is_constant),
            MatrixField::Rotation { angle, .. } => angle.is_constant(),
            MatrixField::Product(v) => v.iter().all(MatrixField::is_constant),
            MatrixField::Affine { scale, field, .. } => *scale == 0.0 || field.is_constant(),
            MatrixField::Conjugated { outer, inner, .. } => outer.is_constant() && inner.is_constant(),
            MatrixField::Grid(_) | MatrixField::Custom { .. } => false,
        }
    }

    pub fn eval(&self, p: TorusPoint) -> Mat {
        match self {
            MatrixField::Constant(m) => m.clone(),
            MatrixField::Trig { dim, entries } => {
                Mat::from_iterator(*dim, *dim, entries.iter().map(|e| e.eval(p))).transpose()
            }
            MatrixField::Rotation { angle, scale } => rotation(angle.eval(p), *scale),
            MatrixField::Product(v) => {
                let mut it = v.iter();
                let first = it.next().map(|m| m.eval(p)).unwrap_or_else(|| Mat::zeros(0, 0));
                it.fold(first, |acc, m| acc * m.eval(p))
            }
            MatrixField::Affine { base, scale, field } => base + field.eval(p) * *scale,
            MatrixField::Conjugated { outer, inner, map } => {
                let c_next = outer.eval(map.apply(p, 1));
                let c_inv = invert(&outer.eval(p)).unwrap_or_else(|_| Mat::from_element(inner.dim(), inner.dim(), f64::NAN));
                c_next * inner.eval(p) * c_inv
            }
            MatrixField::Grid(g) => g.eval(p),
            MatrixField::Custom { f, .. } => f(p),
        }
    }

    /// `(M(p), M(p + δ) − M(p))`.
    pub fn eval_pair(&self, p: TorusPoint, delta: [f64; 2]) -> Result<MatPair> {
        if delta == [0.0, 0.0] {
            return Ok(MatPair::constant(self.eval(p)));
        }
        Ok(match self {
            MatrixField::Constant(m) => MatPair::constant(m.clone()),
            MatrixField::Trig { dim, entries } => {
                let mut value = Mat::zeros(*dim, *dim);
                let mut diff = Mat::zeros(*dim, *dim);
                for (idx, e) in entries.iter().enumerate() {
                    let (v, d) = e.eval_pair(p.coords(), delta);
                    value[(idx / dim, idx % dim)] = v;
                    diff[(idx / dim, idx % dim)] = d;
                }
                MatPair { value, diff }
            }
            MatrixField::Rotation { angle, scale } => {
                let (th, dth) = angle.eval_pair(p.coords(), delta);
                let (sm, cm) = (th + 0.5 * dth).sin_cos();
                let sh = (0.5 * dth).sin();
                let dc = -2.0 * sm * sh;
                let ds = 2.0 * cm * sh;
                MatPair {
                    value: rotation(th, *scale),
                    diff: Mat::from_row_slice(2, 2, &[scale * dc, -scale * ds, scale * ds, scale * dc]),
                }
            }
            MatrixField::Product(v) => {
                let mut acc: Option<MatPair> = None;
                for m in v {
                    let next = m.eval_pair(p, delta)?;
                    acc = Some(match acc {
                        None => next,
                        Some(a) => a.mul(&next),
                    });
                }
                acc.unwrap_or_else(|| MatPair::constant(Mat::zeros(0, 0)))
            }
            MatrixField::Affine { base, scale, field } => {
                let inner = field.eval_pair(p, delta)?;
                MatPair {
                    value: base + inner.value * *scale,
                    diff: inner.diff * *scale,
                }
            }
            MatrixField::Conjugated { outer, inner, map } => {
                let c_next = outer.eval_pair(map.apply(p, 1), map.push_vector(delta))?;
                let c_inv = outer.eval_pair(p, delta)?.inverse()?;
                c_next.mul(&inner.eval_pair(p, delta)?).mul(&c_inv)
            }
            MatrixField::Grid(_) | MatrixField::Custom { .. } => {
                let value = self.eval(p);
                let diff = self.eval(p.translate(delta)) - &value;
                MatPair { value, diff }
            }
        })
    }

    /// Checks invertibility of every value on an `n × n` grid.
    pub fn validate_invertible(&self, n: usize) -> Result<()> {
        (0..n * n).into_par_iter().try_for_each(|idx| {
            let p = TorusPoint::new((idx / n) as f64 / n as f64, (idx % n) as f64 / n as f64);
            invert(&self.eval(p)).map(|_| ())
        })
    }
}

/// Rotation by the angle `θ(x)` (radians).
pub fn rotation_field(angle: TrigPolynomial) -> MatrixField {
    MatrixField::Rotation { angle, scale: 1.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trig::TrigTerm;
    use proptest::prelude::*;

    fn cat() -> HyperbolicToralMap {
        HyperbolicToralMap::cat()
    }

    fn sample_fields() -> Vec<MatrixField> {
        let phi = TrigPolynomial::cos([1, 0], 0.1);
        let tri = MatrixField::trig(
            2,
            vec![
                TrigPolynomial::constant(1.6),
                phi.clone(),
                TrigPolynomial::zero(),
                TrigPolynomial::constant(1.0),
            ],
        )
        .unwrap();
        let rot = rotation_field(TrigPolynomial::sin([1, 0], 0.3));
        let skew = MatrixField::trig(
            2,
            vec![
                TrigPolynomial::constant(1.0),
                TrigPolynomial::cos([0, 1], 0.2),
                TrigPolynomial::zero(),
                TrigPolynomial::constant(1.0),
            ],
        )
        .unwrap();
        let b = MatrixField::Constant(Mat::from_row_slice(2, 2, &[1.6, 0.0, 0.0, 1.0]));
        vec![
            tri.clone(),
            rot.clone(),
            MatrixField::Product(vec![rot.clone(), tri.clone()]),
            MatrixField::conjugated(rot, b.clone(), cat()),
            MatrixField::conjugated(skew, tri.clone(), cat()),
            MatrixField::Affine {
                base: Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]),
                scale: 0.05,
                field: Arc::new(tri),
            },
        ]
    }

    #[test]
    fn trig_field_layout_is_row_major() {
        let f = MatrixField::trig(
            2,
            vec![
                TrigPolynomial::constant(1.0),
                TrigPolynomial::constant(2.0),
                TrigPolynomial::constant(3.0),
                TrigPolynomial::constant(4.0),
            ],
        )
        .unwrap();
        let m = f.eval(TorusPoint::origin());
        assert_eq!(m, Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert!(f.is_constant());
    }

    #[test]
    fn rotation_is_orthogonal() {
        let f = rotation_field(TrigPolynomial::new(vec![TrigTerm { k: [1, 1], a: 0.4, b: 0.7 }]));
        for p in crate::base::uniform_grid(8) {
            let m = f.eval(p);
            assert!((m.transpose() * &m - Mat::identity(2, 2)).norm() < 1e-15);
        }
    }

    #[test]
    fn conjugated_field_satisfies_equation() {
        let f = cat();
        let c = rotation_field(TrigPolynomial::sin([1, 0], 0.3));
        let b = Mat::from_row_slice(2, 2, &[1.6, 0.0, 0.0, 1.0]);
        let a = MatrixField::conjugated(c.clone(), MatrixField::Constant(b.clone()), f.clone());
        for p in crate::base::uniform_grid(16) {
            let lhs = a.eval(p) * c.eval(p);
            let rhs = c.eval(f.apply(p, 1)) * &b;
            assert!((lhs - rhs).norm() < 1e-14);
        }
    }

    #[test]
    fn grid_round_trip_and_interpolation() {
        let nodes = (0..6)
            .map(|k| Mat::from_row_slice(2, 2, &[2.0 + k as f64, 0.5, 0.0, 1.0]))
            .collect();
        let g = GridField::new(2, 2, 3, nodes).unwrap();
        let back = GridField::parse(&g.to_text()).unwrap();
        assert_eq!(g, back);
        assert_eq!(g.eval(TorusPoint::new(0.5, 1.0 / 3.0))[(0, 0)], 2.0 + 4.0);
        // midway between node (0,0) and the wrapped node (2,0) = (0,0)
        let v = g.eval(TorusPoint::new(0.75, 0.0))[(0, 0)];
        assert!((v - 0.5 * (2.0 + 5.0)).abs() < 1e-15);
        assert!(GridField::parse("2 1 1\n1 2 3").is_err());
    }

    proptest! {
        #[test]
        fn pair_difference_agrees_with_subtraction(x1 in 0.0f64..1.0, x2 in 0.0f64..1.0, d1 in -0.2f64..0.2, d2 in -0.2f64..0.2) {
            let p = TorusPoint::new(x1, x2);
            for field in sample_fields() {
                let pair = field.eval_pair(p, [d1, d2]).unwrap();
                prop_assert!((&pair.value - field.eval(p)).norm() < 1e-14);
                let direct = field.eval(TorusPoint::new(x1 + d1, x2 + d2)) - field.eval(p);
                prop_assert!((&pair.diff - direct).norm() < 1e-12, "{:?}", field);
            }
        }

        #[test]
        fn pair_difference_scales_linearly(x1 in 0.0f64..1.0, x2 in 0.0f64..1.0, e in -13.0f64..-7.0) {
            let p = TorusPoint::new(x1, x2);
            let h = 10f64.powf(e);
            for field in sample_fields() {
                let d1 = field.eval_pair(p, [h, 0.5 * h]).unwrap().diff;
                let d2 = field.eval_pair(p, [2.0 * h, h]).unwrap().diff;
                // d2 − 2 d1 is the second-order term; plain subtraction would leave ~1e-16 noise
                prop_assert!((&d2 - &d1 * 2.0).norm() <= 500.0 * h * h + 1e-13 * d1.norm());
            }
        }
    }
}
