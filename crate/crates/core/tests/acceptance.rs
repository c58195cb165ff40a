//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

use std::f64::consts::TAU;
use std::process::ExitCode;
use std::time::Instant;

use cocycle_core::base::{uniform_grid, LegType, RateData, SuLeg, TorusPoint};
use cocycle_core::cocycle::{check_fiber_bunching, check_weak_fiber_bunching, CocycleGenerator};
use cocycle_core::conjugacy::{
    cohomology_residual, extend_from_base, intertwining_residual, path_independence_of,
    ExtensionOptions,
};
use cocycle_core::holonomy::{
    compute_alpha, estimate_global_holder, leg_holonomy, sample_quadruples, stable_holonomy,
    verify_axioms, HolonomyOptions, LegSample, ALPHA_SAFETY,
};
use cocycle_core::operator::{spectral_norm, Mat, Operator};
use cocycle_core::su::{conjugated_cycle_defect, cycle_triviality_test, seeded_cycles};
use cocycle_core::zoo::{
    default_perturbation, default_phi, perturbed_constant, rotation_pair, triangular_family,
    unstable_holder_of_c, Bundle, TriangularPair, DEFAULT_N_C,
};
use cocycle_core::{HyperbolicToralMap, LabError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn cat() -> HyperbolicToralMap {
    HyperbolicToralMap::cat()
}

fn pair() -> TriangularPair {
    triangular_family(&cat(), 0.5, default_phi(), DEFAULT_N_C).unwrap()
}

/// `0.1 cos 2π(x₁+d₁) − 0.1 cos 2πx₁` by the product formula.
fn dphi(x1: f64, d1: f64) -> f64 {
    -0.2 * (TAU * (x1 + 0.5 * d1)).sin() * (0.5 * TAU * d1).sin()
}

/// Top-right entry of the holonomy from `x` to the leaf point at parameter `t`,
/// summed independently of the library oracles.
fn series(f: &HyperbolicToralMap, mu: f64, x: TorusPoint, leg: LegType, t: f64) -> f64 {
    let v = f.direction(leg);
    let e = f.eigenvalue(leg);
    match leg {
        LegType::Stable => (0..=60)
            .map(|k| {
                let xk = f.apply(x, k);
                -mu.powi(-(k as i32) - 1) * dphi(xk.x1(), t * e.powi(k as i32) * v[0])
            })
            .sum(),
        LegType::Unstable => (1..=80)
            .map(|j| {
                let xj = f.apply(x, -j);
                mu.powi(j as i32 - 1) * dphi(xj.x1(), t * e.powi(-(j as i32)) * v[0])
            })
            .sum(),
    }
}

fn random_legs(f: &HyperbolicToralMap, rng: &mut ChaCha8Rng, n: usize, t_max: f64) -> Vec<SuLeg> {
    (0..n)
        .map(|i| {
            let ty = if i % 2 == 0 { LegType::Stable } else { LegType::Unstable };
            let x = TorusPoint::random(rng);
            SuLeg::new(f, x, ty, rng.gen_range(-t_max..=t_max))
        })
        .collect()
}

fn fixed_length_legs(f: &HyperbolicToralMap, rng: &mut ChaCha8Rng, n: usize, len: f64) -> Vec<SuLeg> {
    (0..n)
        .map(|i| {
            let ty = if i % 2 == 0 { LegType::Stable } else { LegType::Unstable };
            let x = TorusPoint::random(rng);
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            SuLeg::new(f, x, ty, sign * len)
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let p = pair();
    let opts = HolonomyOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = [0.0f64; 2];
    for _ in 0..100 {
        for (i, ty) in [LegType::Stable, LegType::Unstable].into_iter().enumerate() {
            let x = TorusPoint::random(&mut rng);
            let t = rng.gen_range(-0.5..=0.5);
            let leg = SuLeg::new(&p.f, x, ty, t);
            let h = leg_holonomy(&p.a, &p.f, &leg, &opts).unwrap();
            let want = Mat::from_row_slice(2, 2, &[1.0, series(&p.f, p.mu, x, ty, t), 0.0, 1.0]);
            worst[i] = worst[i].max(spectral_norm(&(h.h.mat() - want)));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst[0] < 1e-8 && worst[1] < 1e-8 && secs < 10.0,
        format!("stable err {:.2e}, unstable err {:.2e} (< 1e-8), {secs:.2} s (< 10 s)", worst[0], worst[1]),
    )
}

fn samples(rng: &mut ChaCha8Rng, n: usize) -> Vec<LegSample> {
    (0..n)
        .map(|i| {
            let ty = if i % 2 == 0 { LegType::Stable } else { LegType::Unstable };
            LegSample::random(rng, ty, 0.5)
        })
        .collect()
}

fn criterion_2() -> Outcome {
    let f = cat();
    let opts = HolonomyOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let tri = verify_axioms(&pair().a, &f, &samples(&mut rng, 100), 3, &opts).unwrap();
    let (a, _, _) = rotation_pair(&f).unwrap();
    let smooth = verify_axioms(&a, &f, &samples(&mut rng, 100), 3, &opts).unwrap();
    let e = tri.h4_fit.exponent;
    let pass = tri.h2_residual < 1e-8
        && tri.h3_residual < 1e-8
        && smooth.h2_residual < 1e-8
        && smooth.h3_residual < 1e-8
        && (0.9..=1.1).contains(&e);
    outcome(
        pass,
        format!(
            "triangular H2 {:.2e} H3 {:.2e}, smooth H2 {:.2e} H3 {:.2e} (< 1e-8), H4 exponent {e:.3} in [0.9, 1.1]",
            tri.h2_residual, tri.h3_residual, smooth.h2_residual, smooth.h3_residual
        ),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let f = cat();
    let rates = RateData::toral(&f, 0.4);
    let grid = uniform_grid(16);
    let id = compute_alpha(&CocycleGenerator::identity(2), &rates, 1.0, &grid, ALPHA_SAFETY).unwrap();
    // θ = λ^{-0.6}, μ̂ν = λ^{-2}
    let expected = ALPHA_SAFETY * 0.3;
    let p = pair();
    let recipe = compute_alpha(&p.a, &rates, 1.0, &grid, ALPHA_SAFETY).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let quads = sample_quadruples(&f, &mut rng, 240, 0.1, 0.5, 3.5);
    let g = estimate_global_holder(&p.a, &f, &quads, &HolonomyOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = (id.alpha - expected).abs() < 1e-12
        && g.n_used >= 200
        && g.span_decades >= 3.0 - 1e-9
        && g.slope >= recipe.alpha - 0.05
        && secs < 60.0;
    outcome(
        pass,
        format!(
            "identity alpha {:.4} (expect {expected:.4}); triangular alpha {:.4}, measured slope {:.3} over {} quadruples spanning {:.2} decades, {secs:.2} s (< 60 s)",
            id.alpha, recipe.alpha, g.slope, g.n_used, g.span_decades
        ),
    )
}

fn criterion_4() -> Outcome {
    let p = pair();
    let r = cohomology_residual(&p.a, &p.b, &p.conjugacy(), &p.f, &uniform_grid(64)).unwrap();
    outcome(r < 1e-9, format!("sup residual {r:.2e} on 64x64 grid (< 1e-9)"))
}

fn criterion_5() -> Outcome {
    let p = pair();
    let opts = HolonomyOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let legs = fixed_length_legs(&p.f, &mut rng, 100, 0.3);
    let c = p.conjugacy();
    let r = intertwining_residual(&p.a, &p.b, &c, &p.f, &legs, &opts).unwrap();
    let cycles = cycle_triviality_test(&p.a, &p.f, TorusPoint::origin(), 50, 2.0, &opts, &mut rng).unwrap();
    let gauged = c.gauged(&Operator::diag(&[2.0, 0.5]).unwrap()).unwrap();
    let rg = intertwining_residual(&p.a, &p.b, &gauged, &p.f, &legs, &opts).unwrap();
    let grid = uniform_grid(32);
    let h0 = cohomology_residual(&p.a, &p.b, &c, &p.f, &grid).unwrap();
    let h1 = cohomology_residual(&p.a, &p.b, &gauged, &p.f, &grid).unwrap();
    let gauge = (r.stable - rg.stable)
        .abs()
        .max((r.unstable - rg.unstable).abs())
        .max((h0 - h1).abs());
    let pass = r.stable < 1e-7 && r.unstable > 1e-3 && cycles.max_defect > 1e-3 && gauge < 1e-10;
    outcome(
        pass,
        format!(
            "stable {:.2e} (< 1e-7), unstable {:.2e} (> 1e-3), cycle defect {:.2e} (> 1e-3), gauge change {gauge:.2e} (< 1e-10)",
            r.stable, r.unstable, cycles.max_defect
        ),
    )
}

fn criterion_6() -> Outcome {
    let f = cat();
    let (a, b, c) = rotation_pair(&f).unwrap();
    let opts = HolonomyOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let legs = random_legs(&f, &mut rng, 100, 0.5);
    let r = intertwining_residual(&a, &b, &c, &f, &legs, &opts).unwrap();
    let cycles = seeded_cycles(&f, TorusPoint::origin(), 50, 2.0, &mut rng).unwrap();
    let d = conjugated_cycle_defect(&a, &b, &c, &f, &cycles, &opts).unwrap();
    outcome(
        r.stable < 1e-6 && r.unstable < 1e-6 && d < 1e-6,
        format!(
            "stable {:.2e}, unstable {:.2e}, conjugated cycle defect {d:.2e} (all < 1e-6)",
            r.stable, r.unstable
        ),
    )
}

fn criterion_7() -> Outcome {
    let f = cat();
    let (a, b, c) = rotation_pair(&f).unwrap();
    let x0 = TorusPoint::origin();
    let opts = ExtensionOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let ext = extend_from_base(&a, &b, &f, x0, &c.eval(x0).unwrap(), &opts).unwrap();
    let mut worst = 0.0f64;
    for p in uniform_grid(32) {
        worst = worst.max(spectral_norm(&(ext.eval(p).unwrap().mat() - c.eval(p).unwrap().mat())));
    }
    let pi = path_independence_of(&ext, 50, &mut rng).unwrap();
    let tri = pair();
    let c0 = tri.conjugacy().eval(x0).unwrap();
    let tri_defect = match extend_from_base(&tri.a, &tri.b, &f, x0, &c0, &opts) {
        Ok(e) => path_independence_of(&e, 50, &mut rng).unwrap(),
        Err(LabError::PremiseViolated { residual, .. }) => residual,
        Err(e) => panic!("unexpected error {e}"),
    };
    outcome(
        worst < 1e-5 && pi < 1e-5 && tri_defect > 1e-3,
        format!(
            "smooth pair recovery {worst:.2e} (< 1e-5), path independence {pi:.2e} (< 1e-5); triangular defect {tri_defect:.2e} (> 1e-3)"
        ),
    )
}

fn criterion_8() -> Outcome {
    let f = cat();
    let a0 = Operator::diag(&[2.0, 0.5]).unwrap();
    let (_, s) = perturbed_constant(&a0, default_perturbation(), 0.05, &f).unwrap();
    let inv = s.invariance_residual(&uniform_grid(16)).unwrap();
    let rates = RateData::toral(&f, 0.4);
    let mut thetas = Vec::new();
    for bundle in [Bundle::Fast, Bundle::Slow] {
        let r = s.restriction(bundle).unwrap();
        thetas.push(check_weak_fiber_bunching(&r, &f, &rates, 1.0, 16, &uniform_grid(8)).unwrap().theta_hat);
    }
    outcome(
        inv < 1e-8 && s.gap > 3.0 && thetas.iter().all(|t| *t < 1.0),
        format!(
            "invariance {inv:.2e} (< 1e-8), gap {:.3} (> 3), theta_hat fast {:.3} slow {:.3} (< 1)",
            s.gap, thetas[0], thetas[1]
        ),
    )
}

fn criterion_9() -> Outcome {
    let p = pair();
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let xs: Vec<TorusPoint> = (0..40).map(|_| TorusPoint::random(&mut rng)).collect();
    let ts: Vec<f64> = (0..=25).map(|i| 10f64.powf(-6.0 + 5.0 * i as f64 / 25.0)).collect();
    let u = unstable_holder_of_c(&p, &xs, &ts, LegType::Unstable).unwrap();
    let s = unstable_holder_of_c(&p, &xs, &ts, LegType::Stable).unwrap();
    outcome(
        (0.4..=0.6).contains(&u.r_hat) && s.r_hat >= 0.9,
        format!("unstable r_hat {:.3} in [0.4, 0.6], stable slope {:.3} (>= 0.9)", u.r_hat, s.r_hat),
    )
}

fn criterion_10() -> Outcome {
    let f = cat();
    let lam = f.lambda();
    let witness = cocycle_core::zoo::divergent_example(&f).unwrap();
    let opts = HolonomyOptions { tol: 1e-12, n_max: 60 };
    let err = stable_holonomy(&witness, &f, TorusPoint::new(0.3, 0.2), 0.4, &opts);
    let diverged = match &err {
        Err(LabError::Diverged { steps, .. }) => Some(*steps),
        _ => None,
    };
    let diag = CocycleGenerator::constant(Mat::from_row_slice(2, 2, &[lam * lam, 0.0, 0.0, 1.0])).unwrap();
    let b = check_fiber_bunching(&diag, &RateData::toral(&f, 0.4), 1.0, &uniform_grid(8)).unwrap();
    outcome(
        diverged.is_some_and(|n| n <= 60) && (b.worst_product - lam).abs() < 1e-12 && b.worst_product > 1.0,
        format!(
            "stable holonomy: {}; worst_product {:.10} (lambda {lam:.10})",
            match diverged {
                Some(n) => format!("Diverged after {n} steps"),
                None => format!("{err:?}"),
            },
            b.worst_product
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("holonomy oracle equivalence", criterion_1),
        ("holonomy axioms", criterion_2),
        ("alpha recipe and global Holder slope", criterion_3),
        ("cohomology residual of the series conjugacy", criterion_4),
        ("stable/unstable intertwining dichotomy", criterion_5),
        ("smooth conjugacy intertwines", criterion_6),
        ("extension from a base value", criterion_7),
        ("dominated splitting of a perturbed constant", criterion_8),
        ("leafwise regularity of the conjugacy", criterion_9),
        ("divergence detection", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !o.pass {
            failed += 1;
        }
        println!("[{}] criterion {:>2}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
