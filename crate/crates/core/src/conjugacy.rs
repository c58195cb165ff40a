//! Conjugacies between cocycles: residual certificates, intertwining of
//! holonomies, and the extension of a conjugacy from a single base value along
//! su-paths.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use rand::Rng;
use rayon::prelude::*;

use crate::base::{connect_su_ranked, HyperbolicToralMap, LegType, SuLeg, TorusPoint};
use crate::cocycle::CocycleGenerator;
use crate::error::{LabError, Result};
use crate::field::MatrixField;
use crate::holonomy::{leg_holonomy, HolonomyOptions};
use crate::operator::{spectral_norm, Operator};
use crate::su::{path_weight, seeded_cycles};

/// Leg bound of the canonical su-routes used for propagation.
pub const DEFAULT_MAX_LEG: f64 = 2.0;
/// Exponent of the Hölder-envelope continuity surrogate.
pub const ENVELOPE_EXPONENT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    ClosedForm,
    ExtendedFromBase,
    Grid,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::ClosedForm => "closed_form",
            Provenance::ExtendedFromBase => "extended_from_base",
            Provenance::Grid => "grid",
        })
    }
}

struct Extension {
    a: CocycleGenerator,
    b: CocycleGenerator,
    f: HyperbolicToralMap,
    max_leg: f64,
    opts: HolonomyOptions,
    cache: RwLock<HashMap<[u64; 2], Operator>>,
}

#[derive(Clone)]
enum Source {
    Field(MatrixField),
    Extension(Arc<Extension>),
}

/// A field `x ↦ C(x)` of invertible operators.
#[derive(Clone)]
pub struct ConjugacyField {
    base_point: TorusPoint,
    base_value: Operator,
    provenance: Provenance,
    source: Source,
}

impl fmt::Debug for ConjugacyField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConjugacyField")
            .field("base_point", &self.base_point)
            .field("base_value", &self.base_value)
            .field("provenance", &self.provenance)
            .finish_non_exhaustive()
    }
}

fn key(p: TorusPoint) -> [u64; 2] {
    [p.x1().to_bits(), p.x2().to_bits()]
}

impl ConjugacyField {
    /// A closed-form (or grid-sampled) field; the base point is the origin.
    pub fn closed_form(field: MatrixField) -> Result<Self> {
        let provenance = if matches!(field, MatrixField::Grid(_)) {
            Provenance::Grid
        } else {
            Provenance::ClosedForm
        };
        let base_point = TorusPoint::origin();
        let base_value = Operator::new(field.eval(base_point))?;
        Ok(Self {
            base_point,
            base_value,
            provenance,
            source: Source::Field(field),
        })
    }

    pub fn identity(d: usize) -> Self {
        Self::closed_form(MatrixField::Constant(crate::operator::identity(d)))
            .expect("identity is invertible")
    }

    pub fn base_point(&self) -> TorusPoint {
        self.base_point
    }

    pub fn base_value(&self) -> &Operator {
        &self.base_value
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn dim(&self) -> usize {
        self.base_value.dim()
    }

    pub fn eval(&self, p: TorusPoint) -> Result<Operator> {
        self.eval_via(p, 0)
    }

    /// Evaluates an extended field along the `rank`-th su-route from the base
    /// point; only rank 0 is cached. Closed-form fields ignore `rank`.
    pub fn eval_via(&self, p: TorusPoint, rank: usize) -> Result<Operator> {
        match &self.source {
            Source::Field(field) => Operator::new(field.eval(p)),
            Source::Extension(ext) => {
                if rank == 0 {
                    if let Some(c) = ext.cache.read().expect("cache lock").get(&key(p)) {
                        return Ok(c.clone());
                    }
                }
                let path = connect_su_ranked(&ext.f, self.base_point, p, ext.max_leg, rank)?;
                let wa = path_weight(&ext.a, &ext.f, &path, &ext.opts)?.w;
                let wb = path_weight(&ext.b, &ext.f, &path, &ext.opts)?.w;
                let c = wa.compose(&self.base_value)?.compose(&wb.inverse())?;
                if rank == 0 {
                    ext.cache.write().expect("cache lock").insert(key(p), c.clone());
                }
                Ok(c)
            }
        }
    }

    /// `x ↦ C(x)·D` for a constant `D`.
    pub fn gauged(&self, d: &Operator) -> Result<Self> {
        let base_value = self.base_value.compose(d)?;
        let source = match &self.source {
            Source::Field(field) => Source::Field(MatrixField::Product(vec![
                field.clone(),
                MatrixField::Constant(d.mat().clone()),
            ])),
            Source::Extension(ext) => Source::Extension(Arc::new(Extension {
                a: ext.a.clone(),
                b: ext.b.clone(),
                f: ext.f.clone(),
                max_leg: ext.max_leg,
                opts: ext.opts,
                cache: RwLock::new(HashMap::new()),
            })),
        };
        Ok(Self {
            base_point: self.base_point,
            base_value,
            provenance: self.provenance,
            source,
        })
    }
}

/// `sup_x ‖A(x) − C(fx)∘B(x)∘C(x)⁻¹‖` over the grid.
pub fn cohomology_residual(
    a: &CocycleGenerator,
    b: &CocycleGenerator,
    c: &ConjugacyField,
    f: &HyperbolicToralMap,
    grid: &[TorusPoint],
) -> Result<f64> {
    let r = grid
        .par_iter()
        .map(|&x| {
            let cx = c.eval(x)?;
            let cfx = c.eval(f.apply(x, 1))?;
            Ok(spectral_norm(&(a.eval_mat(x) - cfx.mat() * b.eval_mat(x) * cx.inv())))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(r.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntertwiningReport {
    pub stable: f64,
    pub unstable: f64,
}

/// `‖H^A_{x,y} − C(y)∘H^B_{x,y}∘C(x)⁻¹‖` for one leg.
pub fn leg_intertwining_residual(
    a: &CocycleGenerator,
    b: &CocycleGenerator,
    c: &ConjugacyField,
    f: &HyperbolicToralMap,
    leg: &SuLeg,
    opts: &HolonomyOptions,
) -> Result<f64> {
    let ha = leg_holonomy(a, f, leg, opts)?;
    let hb = leg_holonomy(b, f, leg, opts)?;
    for h in [&ha, &hb] {
        if !h.converged {
            return Err(LabError::NotConverged {
                leg_type: leg.leg_type,
                leg: None,
                steps: h.n_used,
                residual: h.cauchy_residual,
            });
        }
    }
    let cx = c.eval(leg.start)?;
    let cy = c.eval(leg.end)?;
    Ok(spectral_norm(&(ha.h.mat() - cy.mat() * hb.h.mat() * cx.inv())))
}

/// Sup of the intertwining residual over the stable and over the unstable legs.
pub fn intertwining_residual(
    a: &CocycleGenerator,
    b: &CocycleGenerator,
    c: &ConjugacyField,
    f: &HyperbolicToralMap,
    legs: &[SuLeg],
    opts: &HolonomyOptions,
) -> Result<IntertwiningReport> {
    let r = legs
        .par_iter()
        .map(|leg| Ok((leg.leg_type, leg_intertwining_residual(a, b, c, f, leg, opts)?)))
        .collect::<Result<Vec<_>>>()?;
    let sup = |ty: LegType| {
        r.iter()
            .filter(|(t, _)| *t == ty)
            .fold(0.0, |m: f64, (_, v)| m.max(*v))
    };
    Ok(IntertwiningReport {
        stable: sup(LegType::Stable),
        unstable: sup(LegType::Unstable),
    })
}

/// Settings shared by the extension operations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtensionOptions {
    pub tol: f64,
    pub max_leg: f64,
    pub holonomy: HolonomyOptions,
}

impl Default for ExtensionOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_leg: DEFAULT_MAX_LEG,
            holonomy: HolonomyOptions::default(),
        }
    }
}

fn extension(
    a: &CocycleGenerator,
    b: &CocycleGenerator,
    f: &HyperbolicToralMap,
    x0: TorusPoint,
    c0: &Operator,
    opts: &ExtensionOptions,
) -> Result<ConjugacyField> {
    if a.dim() != b.dim() || c0.dim() != a.dim() {
        return Err(LabError::DimensionMismatch {
            left: a.dim(),
            right: if a.dim() != b.dim() { b.dim() } else { c0.dim() },
        });
    }
    let ext = Extension {
        a: a.clone(),
        b: b.clone(),
        f: f.clone(),
        max_leg: opts.max_leg,
        opts: opts.holonomy,
        cache: RwLock::new(HashMap::new()),
    };
    ext.cache.write().expect("cache lock").insert(key(x0), c0.clone());
    Ok(ConjugacyField {
        base_point: x0,
        base_value: c0.clone(),
        provenance: Provenance::ExtendedFromBase,
        source: Source::Extension(Arc::new(ext)),
    })
}

/// `‖A(x0) − C(fx0)∘B(x0)∘C0⁻¹‖` with `C(fx0)` propagated along the canonical route.
pub fn base_premise_residual(
    a: &CocycleGenerator,
    b: &CocycleGenerator,
    c: &ConjugacyField,
    f: &HyperbolicToralMap,
) -> Result<f64> {
    let x0 = c.base_point();
    let cfx = c.eval(f.apply(x0, 1))?;
    Ok(spectral_norm(
        &(a.eval_mat(x0) - cfx.mat() * b.eval_mat(x0) * c.base_value().inv()),
    ))
}

/// The field `C(y) = 𝓗^{A,P}_{x0,y}∘C0∘(𝓗^{B,P}_{x0,y})⁻¹`, `P` the canonical
/// route from `x0` to `y`.
pub fn extend_from_base(
    a: &CocycleGenerator,
    b: &CocycleGenerator,
    f: &HyperbolicToralMap,
    x0: TorusPoint,
    c0: &Operator,
    opts: &ExtensionOptions,
) -> Result<ConjugacyField> {
    let c = extension(a, b, f, x0, c0, opts)?;
    let residual = base_premise_residual(a, b, &c, f)?;
    if !(residual < opts.tol) {
        return Err(LabError::PremiseViolated {
            residual,
            tol: opts.tol,
        });
    }
    Ok(c)
}

/// `max_y ‖C_{P₁}(y) − C_{P₂}(y)‖` over `n_targets` random `y`, for the two
/// best su-routes `P₁, P₂` from `x0`.
#[allow(clippy::too_many_arguments)]
pub fn path_independence_residual<R: Rng + ?Sized>(
    a: &CocycleGenerator,
    b: &CocycleGenerator,
    f: &HyperbolicToralMap,
    x0: TorusPoint,
    c0: &Operator,
    n_targets: usize,
    opts: &ExtensionOptions,
    rng: &mut R,
) -> Result<f64> {
    let c = extension(a, b, f, x0, c0, opts)?;
    path_independence_of(&c, n_targets, rng)
}

/// [`path_independence_residual`] for an already extended field.
pub fn path_independence_of<R: Rng + ?Sized>(
    c: &ConjugacyField,
    n_targets: usize,
    rng: &mut R,
) -> Result<f64> {
    if c.provenance() != Provenance::ExtendedFromBase {
        return Ok(0.0);
    }
    let targets: Vec<TorusPoint> = (0..n_targets).map(|_| TorusPoint::random(rng)).collect();
    let r = targets
        .par_iter()
        .map(|&y| {
            let c1 = c.eval_via(y, 0)?;
            let c2 = c.eval_via(y, 1)?;
            Ok(spectral_norm(&(c1.mat() - c2.mat())))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(r.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone)]
pub struct ConstantTarget {
    pub b: CocycleGenerator,
    pub conjugacy: ConjugacyField,
    pub cycle_defect: f64,
    pub cohomology_residual: f64,
}

/// The constant cocycle `B = C0⁻¹∘(𝓗^{A,P}_{x0,fx0})⁻¹∘A(x0)∘C0` together with
/// the extended conjugacy from `A` to `B` and its residual on `grid`.
#[allow(clippy::too_many_arguments)]
pub fn constant_target_from_holonomy<R: Rng + ?Sized>(
    a: &CocycleGenerator,
    f: &HyperbolicToralMap,
    x0: TorusPoint,
    c0: &Operator,
    n_cycles: usize,
    grid: &[TorusPoint],
    opts: &ExtensionOptions,
    rng: &mut R,
) -> Result<ConstantTarget> {
    if n_cycles == 0 {
        return Err(LabError::InvalidArgument("n_cycles must be at least 1".into()));
    }
    let cycles = seeded_cycles(f, x0, n_cycles, opts.max_leg, rng)?;
    let cycle_defect = crate::su::cycle_triviality(a, f, &cycles, &opts.holonomy)?.max_defect;
    if !(cycle_defect < opts.tol) {
        return Err(LabError::CycleObstruction {
            defect: cycle_defect,
            tol: opts.tol,
        });
    }
    let path = connect_su_ranked(f, x0, f.apply(x0, 1), opts.max_leg, 0)?;
    let h = path_weight(a, f, &path, &opts.holonomy)?.w;
    let ax0 = a.eval(x0)?;
    let bm = c0.inverse().compose(&h.inverse())?.compose(&ax0)?.compose(c0)?;
    let b = CocycleGenerator::constant(bm.mat().clone())?;
    let conjugacy = extension(a, &b, f, x0, c0, opts)?;
    let cohomology_residual = cohomology_residual(a, &b, &conjugacy, f, grid)?;
    Ok(ConstantTarget {
        b,
        conjugacy,
        cycle_defect,
        cohomology_residual,
    })
}

/// `max ‖C(p) − C(q)‖ / dist(p,q)^exponent` over horizontally and vertically
/// adjacent nodes of the `n × n` grid.
pub fn holder_envelope(c: &ConjugacyField, n: usize, exponent: f64) -> Result<f64> {
    if n < 2 {
        return Err(LabError::InvalidArgument("envelope grid needs n >= 2".into()));
    }
    let node = |i: usize, j: usize| TorusPoint::new((i % n) as f64 / n as f64, (j % n) as f64 / n as f64);
    let values = (0..n * n)
        .into_par_iter()
        .map(|idx| c.eval(node(idx / n, idx % n)).map(|o| o.mat().clone()))
        .collect::<Result<Vec<_>>>()?;
    let h = (1.0 / n as f64).powf(exponent);
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let v = &values[i * n + j];
            for w in [&values[((i + 1) % n) * n + j], &values[i * n + (j + 1) % n]] {
                worst = worst.max(spectral_norm(&(v - w)) / h);
            }
        }
    }
    Ok(worst)
}
