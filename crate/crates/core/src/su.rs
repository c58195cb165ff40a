//! Weights of su-paths and su-cycles.

use rand::Rng;
use rayon::prelude::*;

use crate::base::{connect_su_ranked, HyperbolicToralMap, SuLeg, SuPath, TorusPoint};
use crate::cocycle::CocycleGenerator;
use crate::conjugacy::ConjugacyField;
use crate::error::{LabError, Result};
use crate::holonomy::{leg_holonomy, HolonomyOptions, HolonomyResult};
use crate::operator::{spectral_norm, Operator};

/// The ordered product of leg holonomies; the last leg is the left-most factor.
#[derive(Debug, Clone)]
pub struct PathWeight {
    pub path: SuPath,
    pub w: Operator,
    pub per_leg: Vec<(SuLeg, HolonomyResult)>,
}

pub fn path_weight(
    a: &CocycleGenerator,
    f: &HyperbolicToralMap,
    path: &SuPath,
    opts: &HolonomyOptions,
) -> Result<PathWeight> {
    let mut w = Operator::identity(a.dim());
    let mut per_leg = Vec::with_capacity(path.legs().len());
    for (i, leg) in path.legs().iter().enumerate() {
        let r = leg_holonomy(a, f, leg, opts).map_err(|e| e.with_leg(i))?;
        if !r.converged {
            return Err(LabError::NotConverged {
                leg_type: leg.leg_type,
                leg: Some(i),
                steps: r.n_used,
                residual: r.cauchy_residual,
            });
        }
        w = r.h.compose(&w)?;
        per_leg.push((*leg, r));
    }
    Ok(PathWeight {
        path: path.clone(),
        w,
        per_leg,
    })
}

pub fn cycle_weight(
    a: &CocycleGenerator,
    f: &HyperbolicToralMap,
    cycle: &SuPath,
    opts: &HolonomyOptions,
) -> Result<Operator> {
    if !cycle.is_cycle() {
        return Err(LabError::NotACycle {
            gap: cycle.start().dist(&cycle.end()),
        });
    }
    Ok(path_weight(a, f, cycle, opts)?.w)
}

/// A 4-leg cycle at `x0`: the best su-route to `y` followed by the reverse of
/// the second-best route.
pub fn two_route_cycle(
    f: &HyperbolicToralMap,
    x0: TorusPoint,
    y: TorusPoint,
    max_leg: f64,
) -> Result<SuPath> {
    let first = connect_su_ranked(f, x0, y, max_leg, 0)?;
    let second = connect_su_ranked(f, x0, y, max_leg, 1)?;
    first.concat(&second.reverse())
}

/// `n` cycles at `x0` through pseudo-random intermediate points drawn from `rng`.
pub fn seeded_cycles<R: Rng + ?Sized>(
    f: &HyperbolicToralMap,
    x0: TorusPoint,
    n: usize,
    max_leg: f64,
    rng: &mut R,
) -> Result<Vec<SuPath>> {
    (0..n)
        .map(|_| two_route_cycle(f, x0, TorusPoint::random(rng), max_leg))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleReport {
    pub max_defect: f64,
    pub n_cycles: usize,
}

/// `max ‖W − Id‖` over the given cycles.
pub fn cycle_triviality(
    a: &CocycleGenerator,
    f: &HyperbolicToralMap,
    cycles: &[SuPath],
    opts: &HolonomyOptions,
) -> Result<CycleReport> {
    let defects = cycles
        .par_iter()
        .map(|c| Ok(cycle_weight(a, f, c, opts)?.dist_to_identity()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(CycleReport {
        max_defect: defects.into_iter().fold(0.0, f64::max),
        n_cycles: cycles.len(),
    })
}

/// [`cycle_triviality`] over `n_cycles` seeded cycles at `x0`.
pub fn cycle_triviality_test<R: Rng + ?Sized>(
    a: &CocycleGenerator,
    f: &HyperbolicToralMap,
    x0: TorusPoint,
    n_cycles: usize,
    max_leg: f64,
    opts: &HolonomyOptions,
    rng: &mut R,
) -> Result<CycleReport> {
    if n_cycles == 0 {
        return Err(LabError::InvalidArgument("n_cycles must be at least 1".into()));
    }
    let cycles = seeded_cycles(f, x0, n_cycles, max_leg, rng)?;
    cycle_triviality(a, f, &cycles, opts)
}

/// `‖𝓗^{A,P} − C(y)∘𝓗^{B,P}∘C(x)⁻¹‖` for a path from `x` to `y`.
pub fn conjugated_weight_residual(
    a: &CocycleGenerator,
    b: &CocycleGenerator,
    c: &ConjugacyField,
    f: &HyperbolicToralMap,
    path: &SuPath,
    opts: &HolonomyOptions,
) -> Result<f64> {
    let wa = path_weight(a, f, path, opts)?.w;
    let wb = path_weight(b, f, path, opts)?.w;
    let cx = c.eval(path.start())?;
    let cy = c.eval(path.end())?;
    Ok(spectral_norm(&(wa.mat() - cy.mat() * wb.mat() * cx.inv())))
}

/// `max ‖𝓗^{A,P}_x − C(x)𝓗^{B,P}_x C(x)⁻¹‖` over cycles.
pub fn conjugated_cycle_defect(
    a: &CocycleGenerator,
    b: &CocycleGenerator,
    c: &ConjugacyField,
    f: &HyperbolicToralMap,
    cycles: &[SuPath],
    opts: &HolonomyOptions,
) -> Result<f64> {
    let defects = cycles
        .par_iter()
        .map(|cyc| {
            if !cyc.is_cycle() {
                return Err(LabError::NotACycle {
                    gap: cyc.start().dist(&cyc.end()),
                });
            }
            conjugated_weight_residual(a, b, c, f, cyc, opts)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(defects.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::{connect_su, LegType};
    use crate::field::MatrixField;
    use crate::operator::{identity, Mat};
    use crate::trig::TrigPolynomial;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cat() -> HyperbolicToralMap {
        HyperbolicToralMap::cat()
    }

    fn generic() -> CocycleGenerator {
        CocycleGenerator::new(
            MatrixField::trig(
                2,
                vec![
                    TrigPolynomial::constant(1.5).plus(&TrigPolynomial::sin([0, 1], 0.1)),
                    TrigPolynomial::cos([1, 0], 0.1),
                    TrigPolynomial::sin([1, 1], 0.05),
                    TrigPolynomial::constant(1.0).plus(&TrigPolynomial::cos([1, -1], 0.05)),
                ],
            )
            .unwrap(),
        )
        .unwrap()
    }

    fn rel(a: &Operator, b: &Operator) -> f64 {
        spectral_norm(&(a.mat() - b.mat())) / b.norm()
    }

    #[test]
    fn trivial_and_constant_paths() {
        let f = cat();
        let opts = HolonomyOptions::default();
        let x = TorusPoint::new(0.3, 0.3);
        let w = path_weight(&generic(), &f, &SuPath::trivial(x), &opts).unwrap();
        assert_eq!(w.w.mat(), &identity(2));
        let c = CocycleGenerator::constant(Mat::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0])).unwrap();
        let p = connect_su(&f, x, TorusPoint::new(0.9, 0.1), 2.0).unwrap();
        assert!(path_weight(&c, &f, &p, &opts).unwrap().w.dist_to_identity() < 1e-10);
    }

    #[test]
    fn open_path_is_not_a_cycle() {
        let f = cat();
        let p = connect_su(&f, TorusPoint::new(0.1, 0.1), TorusPoint::new(0.6, 0.2), 2.0).unwrap();
        let err = cycle_weight(&generic(), &f, &p, &HolonomyOptions::default()).unwrap_err();
        assert!(matches!(err, LabError::NotACycle { gap } if gap > 0.1));
    }

    #[test]
    fn leg_and_reverse_cancel() {
        let f = cat();
        let leg = SuLeg::new(&f, TorusPoint::new(0.25, 0.65), LegType::Unstable, 0.4);
        let cyc = SuPath::new(leg.start, vec![leg, leg.reversed()]).unwrap();
        let w = cycle_weight(&generic(), &f, &cyc, &HolonomyOptions::default()).unwrap();
        assert!(w.dist_to_identity() < 1e-9);
    }

    #[test]
    fn divergent_leg_index_is_reported() {
        let f = cat();
        let lam = f.lambda();
        let a = CocycleGenerator::new(
            MatrixField::trig(
                2,
                vec![
                    TrigPolynomial::constant(lam * lam),
                    TrigPolynomial::zero(),
                    TrigPolynomial::cos([1, 0], 0.1),
                    TrigPolynomial::constant(1.0),
                ],
            )
            .unwrap(),
        )
        .unwrap();
        let p = connect_su(&f, TorusPoint::new(0.1, 0.7), TorusPoint::new(0.6, 0.2), 2.0).unwrap();
        let opts = HolonomyOptions { tol: 1e-12, n_max: 60 };
        // the unstable leg converges for this cocycle, the stable one does not
        let err = path_weight(&a, &f, &p, &opts).unwrap_err();
        assert!(matches!(err, LabError::Diverged { leg: Some(1), leg_type: LegType::Stable, .. }), "{err:?}");
    }

    #[test]
    fn concatenation_and_reversal() {
        let f = cat();
        let a = generic();
        let opts = HolonomyOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x = TorusPoint::random(&mut rng);
            let y = TorusPoint::random(&mut rng);
            let z = TorusPoint::random(&mut rng);
            let p1 = connect_su(&f, x, y, 2.0).unwrap();
            let p2 = connect_su(&f, y, z, 2.0).unwrap();
            let w1 = path_weight(&a, &f, &p1, &opts).unwrap().w;
            let w2 = path_weight(&a, &f, &p2, &opts).unwrap().w;
            let w12 = path_weight(&a, &f, &p1.concat(&p2).unwrap(), &opts).unwrap().w;
            assert!(rel(&w12, &w2.compose(&w1).unwrap()) < 1e-9);
            let back = path_weight(&a, &f, &p1.reverse(), &opts).unwrap().w;
            assert!(rel(&back, &w1.inverse()) < 1e-9);
        }
    }

    #[test]
    fn seeded_cycles_are_closed_and_reproducible() {
        let f = cat();
        let x0 = TorusPoint::origin();
        let c1 = seeded_cycles(&f, x0, 5, 2.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let c2 = seeded_cycles(&f, x0, 5, 2.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(c1, c2);
        for c in &c1 {
            assert!(c.is_cycle() && c.legs().len() == 4);
        }
    }
}
