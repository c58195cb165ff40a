//! Real trigonometric polynomials on the torus.

use std::f64::consts::TAU;
use std::fmt;

use crate::base::TorusPoint;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrigTerm {
    pub k: [i64; 2],
    pub a: f64,
    pub b: f64,
}

/// `Σ a_k cos(2π k·x) + b_k sin(2π k·x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigPolynomial {
    terms: Vec<TrigTerm>,
    lipschitz: f64,
}

#[inline]
fn frac(v: f64) -> f64 {
    v - v.floor()
}

#[inline]
fn phase(k: [i64; 2], x: [f64; 2]) -> f64 {
    frac(frac(k[0] as f64 * x[0]) + frac(k[1] as f64 * x[1]))
}

impl TrigPolynomial {
    pub fn new(terms: Vec<TrigTerm>) -> Self {
        let lipschitz = TAU
            * terms
                .iter()
                .map(|t| (t.k[0] as f64).hypot(t.k[1] as f64) * (t.a.abs() + t.b.abs()))
                .sum::<f64>();
        Self { terms, lipschitz }
    }

    pub fn zero() -> Self {
        Self::new(Vec::new())
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![TrigTerm { k: [0, 0], a: c, b: 0.0 }])
    }

    pub fn cos(k: [i64; 2], a: f64) -> Self {
        Self::new(vec![TrigTerm { k, a, b: 0.0 }])
    }

    pub fn sin(k: [i64; 2], b: f64) -> Self {
        Self::new(vec![TrigTerm { k, a: 0.0, b }])
    }

    pub fn terms(&self) -> &[TrigTerm] {
        &self.terms
    }

    pub fn plus(&self, other: &TrigPolynomial) -> Self {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        Self::new(terms)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(
            self.terms
                .iter()
                .map(|t| TrigTerm { k: t.k, a: s * t.a, b: s * t.b })
                .collect(),
        )
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.a == 0.0 && t.b == 0.0)
    }

    /// Nonzero terms all have `k = 0`.
    pub fn is_constant(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.k == [0, 0] || (t.a == 0.0 && t.b == 0.0))
    }

    /// `2π Σ ‖k‖₂ (|a_k| + |b_k|)`.
    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz
    }

    /// `Σ sqrt(a_k² + b_k²)`, an upper bound for the sup norm.
    pub fn sup_bound(&self) -> f64 {
        self.terms.iter().map(|t| t.a.hypot(t.b)).sum()
    }

    pub fn eval(&self, p: TorusPoint) -> f64 {
        self.eval_coords(p.coords())
    }

    pub fn eval_coords(&self, x: [f64; 2]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                if t.k == [0, 0] {
                    return t.a;
                }
                let (s, c) = (TAU * phase(t.k, x)).sin_cos();
                t.a * c + t.b * s
            })
            .sum()
    }

    /// `(φ(x), φ(x + δ) − φ(x))`, with the difference computed without
    /// cancellation so that it stays accurate for tiny `δ`.
    pub fn eval_pair(&self, x: [f64; 2], delta: [f64; 2]) -> (f64, f64) {
        let mut value = 0.0;
        let mut diff = 0.0;
        for t in &self.terms {
            if t.k == [0, 0] {
                value += t.a;
                continue;
            }
            let th = TAU * phase(t.k, x);
            let kd = t.k[0] as f64 * delta[0] + t.k[1] as f64 * delta[1];
            let half = 0.5 * TAU * (kd - kd.round());
            let (s, c) = th.sin_cos();
            let (sm, cm) = (th + half).sin_cos();
            let sh = half.sin();
            value += t.a * c + t.b * s;
            diff += -2.0 * sh * (t.a * sm - t.b * cm);
        }
        (value, diff)
    }
}

fn write_num(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    write!(f, "{v:?}")
}

impl fmt::Display for TrigPolynomial {
    /// `c + a*cos(k1,k2) + b*sin(k1,k2) + …`; zero coefficients are skipped.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        let mut sep = |f: &mut fmt::Formatter<'_>| -> fmt::Result {
            if !std::mem::take(&mut first) {
                f.write_str(" + ")?;
            }
            Ok(())
        };
        for t in &self.terms {
            if t.k == [0, 0] {
                if t.a != 0.0 {
                    sep(f)?;
                    write_num(f, t.a)?;
                }
                continue;
            }
            if t.a != 0.0 {
                sep(f)?;
                write_num(f, t.a)?;
                write!(f, "*cos({},{})", t.k[0], t.k[1])?;
            }
            if t.b != 0.0 {
                sep(f)?;
                write_num(f, t.b)?;
                write!(f, "*sin({},{})", t.k[0], t.k[1])?;
            }
        }
        if first {
            f.write_str("0.0")?;
        }
        Ok(())
    }
}
