//! Subcommands. Each one fills a [`Report`] and optionally a sample table.
//!
//! Every run draws from a single ChaCha8 stream seeded with `run.seed`; the
//! order of the draws is fixed per subcommand and listed in the README.

use std::path::Path;
use std::sync::Arc;

use cocycle_core::base::{check_center_bunching, uniform_grid, LegType, RateData, SuLeg, TorusPoint};
use cocycle_core::cocycle::{check_fiber_bunching, check_weak_fiber_bunching, estimate_holder, CocycleGenerator};
use cocycle_core::conjugacy::{
    base_premise_residual, cohomology_residual, constant_target_from_holonomy, extend_from_base, holder_envelope,
    intertwining_residual, path_independence_of, ConjugacyField, ExtensionOptions, ENVELOPE_EXPONENT,
};
use cocycle_core::field::{rotation_field, GridField, MatrixField};
use cocycle_core::holonomy::{
    compute_alpha, estimate_global_holder, leaf_holonomy, leg_holonomy, sample_quadruples, verify_axioms,
    HolonomyOptions, LegSample, ALPHA_SAFETY,
};
use cocycle_core::operator::{spectral_norm, Mat, Operator};
use cocycle_core::su::{conjugated_cycle_defect, cycle_triviality, seeded_cycles};
use cocycle_core::zoo::{
    default_perturbation, default_phi, perturbed_constant, smooth_conjugate_pair, triangular_family,
    unstable_holder_of_c, Bundle, Splitting2D, TriangularPair, DEFAULT_N_C,
};
use cocycle_core::{HyperbolicToralMap, LabError};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_expression, CocycleKind, ConfigError, ExperimentConfig};
use crate::report::{Report, SampleTable};

pub const SUBCOMMANDS: [&str; 8] = [
    "check-bunching",
    "holonomy",
    "holder-estimate",
    "cycle-weights",
    "conjugacy-extend",
    "certify-conjugacy",
    "demo-triangular",
    "demo-perturbed",
];

/// Premise tolerance of the extension from a base value.
pub const PREMISE_TOL: f64 = 1e-8;
/// Longest horizon of the weak fiber-bunching fit.
pub const WEAK_HORIZON: usize = 40;
/// Leg length of the intertwining checks in the triangular demo.
pub const DEMO_LEG: f64 = 0.3;

/// Everything built from a configuration before any sampling.
pub struct Setup {
    pub f: HyperbolicToralMap,
    pub rates: RateData,
    pub a: CocycleGenerator,
    /// Target cocycle and closed-form conjugacy from `a` to it, for paired families.
    pub pair: Option<(CocycleGenerator, ConjugacyField)>,
    pub triangular: Option<TriangularPair>,
    pub splitting: Option<Splitting2D>,
    pub opts: HolonomyOptions,
}

fn cfg_err(key: &str, e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Value {
        section: "cocycle".into(),
        key: key.into(),
        msg: e.to_string(),
    }
}

fn a0_matrix(cfg: &ExperimentConfig) -> Result<Operator, ConfigError> {
    let text = cfg.cocycle.params.get("a0").map_or("2 0 0 0.5", String::as_str);
    let e: Vec<f64> = text
        .split_whitespace()
        .map(|s| s.parse::<f64>().map_err(|e| cfg_err("a0", e)))
        .collect::<Result<_, _>>()?;
    Operator::from_rows(2, &e).map_err(|e| cfg_err("a0", e))
}

impl Setup {
    /// `base_dir` resolves relative grid-file paths.
    pub fn build(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Self, ConfigError> {
        let f = cfg.map()?;
        let rates = cfg.rates()?;
        let lambda = f.lambda();
        let opts = HolonomyOptions {
            tol: cfg.run.tol,
            n_max: cfg.run.n_max,
        };
        let p = &cfg.cocycle.params;
        let mut pair = None;
        let mut triangular = None;
        let mut splitting = None;
        let a = match cfg.cocycle.kind {
            CocycleKind::Constant | CocycleKind::ClosedForm => {
                let d = cfg.dim()?;
                let mut entries = Vec::with_capacity(d * d);
                for i in 0..d {
                    for j in 0..d {
                        let key = format!("entry_{i}_{j}");
                        entries.push(parse_expression(&p[&key], lambda).map_err(|e| cfg_err(&key, e))?);
                    }
                }
                let field = MatrixField::trig(d, entries).map_err(|e| cfg_err("dim", e))?;
                let field = if field.is_constant() {
                    MatrixField::Constant(field.eval(TorusPoint::origin()))
                } else {
                    field
                };
                CocycleGenerator::new(field).map_err(|e| cfg_err("entries", e))?
            }
            CocycleKind::Grid => {
                let path = base_dir.join(&p["file"]);
                let g = GridField::load(&path).map_err(|e| cfg_err("file", format!("{}: {e}", path.display())))?;
                CocycleGenerator::new(MatrixField::Grid(Arc::new(g))).map_err(|e| cfg_err("file", e))?
            }
            CocycleKind::Triangular => {
                let phi = cfg.param_expr("phi").unwrap_or_else(default_phi);
                let n = cfg.param_f64("n_trunc", DEFAULT_N_C as f64) as usize;
                let t = triangular_family(&f, cfg.param_f64("r", 0.5), phi, n).map_err(|e| cfg_err("r", e))?;
                pair = Some((t.b.clone(), t.conjugacy()));
                let a = t.a.clone();
                triangular = Some(t);
                a
            }
            CocycleKind::SmoothPair => {
                let mu = lambda.powf(cfg.param_f64("mu_exponent", 0.5));
                let b = CocycleGenerator::constant(Mat::from_row_slice(2, 2, &[mu, 0.0, 0.0, 1.0]))
                    .map_err(|e| cfg_err("mu_exponent", e))?;
                let angle = cfg
                    .param_expr("angle")
                    .unwrap_or_else(|| cocycle_core::TrigPolynomial::sin([1, 0], 0.3));
                let (a, c) = smooth_conjugate_pair(&b, rotation_field(angle), &f).map_err(|e| cfg_err("angle", e))?;
                pair = Some((b, c));
                a
            }
            CocycleKind::PerturbedConstant => {
                let a0 = a0_matrix(cfg)?;
                let (b, s) = perturbed_constant(&a0, default_perturbation(), cfg.param_f64("eps", 0.05), &f)
                    .map_err(|e| cfg_err("eps", e))?;
                splitting = Some(s);
                b
            }
            CocycleKind::Divergent => cocycle_core::zoo::divergent_example(&f).map_err(|e| cfg_err("kind", e))?,
        };
        Ok(Self {
            f,
            rates,
            a,
            pair,
            triangular,
            splitting,
            opts,
        })
    }
}

pub struct Outcome {
    pub samples: Option<SampleTable>,
}

type CmdResult = Result<Outcome, LabError>;

pub fn run(
    name: &str,
    cfg: &ExperimentConfig,
    setup: &Setup,
    rng: &mut ChaCha8Rng,
    report: &mut Report,
) -> CmdResult {
    report.tolerance("tol", cfg.run.tol);
    report.tolerance("n_max", cfg.run.n_max as f64);
    match name {
        "check-bunching" => check_bunching(cfg, setup, report),
        "holonomy" => holonomy(cfg, setup, rng, report),
        "holder-estimate" => holder_estimate(cfg, setup, rng, report),
        "cycle-weights" => cycle_weights(cfg, setup, rng, report),
        "conjugacy-extend" => conjugacy_extend(cfg, setup, rng, report),
        "certify-conjugacy" => certify_conjugacy(cfg, setup, rng, report),
        "demo-triangular" => demo_triangular(cfg, setup, rng, report),
        "demo-perturbed" => demo_perturbed(cfg, setup, rng, report),
        other => unreachable!("unknown subcommand {other}"),
    }
}

fn none() -> CmdResult {
    Ok(Outcome { samples: None })
}

fn check_bunching(cfg: &ExperimentConfig, s: &Setup, report: &mut Report) -> CmdResult {
    let grid = uniform_grid(cfg.run.grid);
    let beta = cfg.run.beta;
    let fb = check_fiber_bunching(&s.a, &s.rates, beta, &grid)?;
    report.put("worst_product", fb.worst_product);
    report.put_bool("pointwise_ok", fb.pointwise_ok);
    let horizon = cfg.run.n_max.clamp(8, WEAK_HORIZON);
    let weak = check_weak_fiber_bunching(&s.a, &s.f, &s.rates, beta, horizon, &grid)?;
    report.put("weak_theta_hat", weak.theta_hat);
    report.put("weak_l_hat", weak.l_hat);
    report.put("weak_worst_product", weak.worst_product);
    report.put_bool("weak_ok", weak.pointwise_ok);
    report.put_int("weak_horizon", horizon);
    let cb = check_center_bunching(&s.rates, &grid);
    report.put_bool("center_bunching", cb.holds);
    report.put("center_margin", cb.worst_margin);
    report.put_bool("rate_chain", s.rates.chain_holds(&grid));
    none()
}

fn leg_type_name(t: LegType) -> String {
    t.to_string()
}

fn alternating(i: usize) -> LegType {
    if i % 2 == 0 {
        LegType::Stable
    } else {
        LegType::Unstable
    }
}

fn holonomy(cfg: &ExperimentConfig, s: &Setup, rng: &mut ChaCha8Rng, report: &mut Report) -> CmdResult {
    let legs: Vec<LegSample> = (0..cfg.run.samples)
        .map(|i| LegSample::random(rng, alternating(i), cfg.run.t_max))
        .collect();
    let mut table = SampleTable::new(&["leg_type", "x1", "x2", "t", "n_used", "residual"]);
    let mut converged = 0;
    let mut max_residual = 0.0f64;
    for l in &legs {
        let r = leaf_holonomy(&s.a, &s.f, l.x, l.leg_type, 0.0, l.t, &s.opts)?;
        converged += r.converged as usize;
        max_residual = max_residual.max(r.cauchy_residual);
        table.push(vec![
            leg_type_name(l.leg_type),
            l.x.x1().to_string(),
            l.x.x2().to_string(),
            l.t.to_string(),
            r.n_used.to_string(),
            r.cauchy_residual.to_string(),
        ]);
    }
    report.put_int("legs", legs.len());
    report.put_int("converged", converged);
    report.put("max_cauchy_residual", max_residual);
    let ax = verify_axioms(&s.a, &s.f, &legs, cfg.run.n_check, &s.opts)?;
    report.put("max_h2_residual", ax.h2_residual);
    report.put("max_h3_residual", ax.h3_residual);
    report.put("h4_exponent", ax.h4_fit.exponent);
    report.put("h4_constant", ax.h4_fit.k);
    report.put_bool("h4_degenerate", ax.h4_fit.degenerate);
    report.put_int("max_n_used", ax.max_n_used);
    Ok(Outcome { samples: Some(table) })
}

fn holder_estimate(cfg: &ExperimentConfig, s: &Setup, rng: &mut ChaCha8Rng, report: &mut Report) -> CmdResult {
    let n = cfg.run.samples.max(100);
    let pairs: Vec<(TorusPoint, TorusPoint)> = (0..n)
        .map(|i| {
            let x = TorusPoint::random(rng);
            let h = 10f64.powf(-1.0 - 4.0 * i as f64 / (n - 1) as f64);
            let ang = rng.gen::<f64>() * std::f64::consts::TAU;
            (x, x.translate([h * ang.cos(), h * ang.sin()]))
        })
        .collect();
    let fit = estimate_holder(&s.a, &pairs)?;
    report.put("beta_hat", fit.beta_hat);
    report.put("holder_constant", fit.const_hat);
    report.put_bool("generator_degenerate", fit.degenerate);
    let grid = uniform_grid(cfg.run.grid);
    let recipe = compute_alpha(&s.a, &s.rates, cfg.run.beta, &grid, ALPHA_SAFETY)?;
    report.put("theta", recipe.theta);
    report.put("alpha", recipe.alpha);
    let quads = sample_quadruples(&s.f, rng, cfg.run.samples.max(200), 0.1, cfg.run.t_max, 3.5);
    let g = estimate_global_holder(&s.a, &s.f, &quads, &s.opts)?;
    report.put("global_slope", g.slope);
    report.put("global_constant", g.c_fit);
    report.put("global_span_decades", g.span_decades);
    report.put_int("global_samples", g.n_used);
    report.put_bool("global_degenerate", g.degenerate);
    report.put("slope_minus_alpha", g.slope - recipe.alpha);
    none()
}

fn cycle_weights(cfg: &ExperimentConfig, s: &Setup, rng: &mut ChaCha8Rng, report: &mut Report) -> CmdResult {
    let cycles = seeded_cycles(&s.f, TorusPoint::origin(), cfg.run.samples, cfg.run.max_leg, rng)?;
    let r = cycle_triviality(&s.a, &s.f, &cycles, &s.opts)?;
    report.put("max_defect", r.max_defect);
    report.put_int("n_cycles", r.n_cycles);
    if let Some((b, c)) = &s.pair {
        report.put("conjugated_defect", conjugated_cycle_defect(&s.a, b, c, &s.f, &cycles, &s.opts)?);
    }
    none()
}

fn extension_opts(cfg: &ExperimentConfig, s: &Setup) -> ExtensionOptions {
    ExtensionOptions {
        tol: PREMISE_TOL,
        max_leg: cfg.run.max_leg,
        holonomy: s.opts,
    }
}

fn conjugacy_extend(cfg: &ExperimentConfig, s: &Setup, rng: &mut ChaCha8Rng, report: &mut Report) -> CmdResult {
    report.tolerance("premise_tol", PREMISE_TOL);
    let x0 = TorusPoint::origin();
    let (b, c0, closed) = match &s.pair {
        Some((b, c)) => (b.clone(), c.eval(x0)?, Some(c)),
        None => (s.a.clone(), Operator::identity(s.a.dim()), None),
    };
    let opts = extension_opts(cfg, s);
    let ext = extend_from_base(&s.a, &b, &s.f, x0, &c0, &opts)?;
    report.put("premise_residual", base_premise_residual(&s.a, &b, &ext, &s.f)?);
    report.put("path_independence", path_independence_of(&ext, cfg.run.samples, rng)?);
    let grid = uniform_grid(cfg.run.grid);
    report.put("cohomology_residual", cohomology_residual(&s.a, &b, &ext, &s.f, &grid)?);
    report.put("holder_envelope", holder_envelope(&ext, cfg.run.grid, ENVELOPE_EXPONENT)?);
    if let Some(c) = closed {
        let mut worst = 0.0f64;
        for &p in &grid {
            worst = worst.max(spectral_norm(&(ext.eval(p)?.mat() - c.eval(p)?.mat())));
        }
        report.put("closed_form_distance", worst);
    }
    none()
}

fn random_legs(rng: &mut ChaCha8Rng, f: &HyperbolicToralMap, n: usize, t_max: f64) -> Vec<SuLeg> {
    (0..n)
        .map(|i| {
            let x = TorusPoint::random(rng);
            SuLeg::new(f, x, alternating(i), rng.gen_range(-t_max..=t_max))
        })
        .collect()
}

fn certify_conjugacy(cfg: &ExperimentConfig, s: &Setup, rng: &mut ChaCha8Rng, report: &mut Report) -> CmdResult {
    let grid = uniform_grid(cfg.run.grid);
    match &s.pair {
        Some((b, c)) => {
            report.put("cohomology_residual", cohomology_residual(&s.a, b, c, &s.f, &grid)?);
            let legs = random_legs(rng, &s.f, cfg.run.samples, cfg.run.t_max);
            let r = intertwining_residual(&s.a, b, c, &s.f, &legs, &s.opts)?;
            report.put("stable_intertwine", r.stable);
            report.put("unstable_intertwine", r.unstable);
            let cycles = seeded_cycles(&s.f, TorusPoint::origin(), cfg.run.samples.min(50), cfg.run.max_leg, rng)?;
            report.put("conjugated_cycle_defect", conjugated_cycle_defect(&s.a, b, c, &s.f, &cycles, &s.opts)?);
        }
        None => {
            report.tolerance("cycle_tol", PREMISE_TOL);
            let t = constant_target_from_holonomy(
                &s.a,
                &s.f,
                TorusPoint::origin(),
                &Operator::identity(s.a.dim()),
                cfg.run.samples.min(50),
                &grid,
                &extension_opts(cfg, s),
                rng,
            )?;
            report.put("cycle_defect", t.cycle_defect);
            report.put("cohomology_residual", t.cohomology_residual);
            let m = t.b.eval_mat(TorusPoint::origin());
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    report.put(&format!("target_{i}_{j}"), m[(i, j)]);
                }
            }
        }
    }
    none()
}

fn demo_triangular(cfg: &ExperimentConfig, s: &Setup, rng: &mut ChaCha8Rng, report: &mut Report) -> CmdResult {
    let p = match &s.triangular {
        Some(p) => p.clone(),
        None => triangular_family(&s.f, 0.5, default_phi(), DEFAULT_N_C)?,
    };
    let c = p.conjugacy();
    let grid = uniform_grid(cfg.run.grid);
    report.put("mu", p.mu);
    report.put("cohomology_residual", cohomology_residual(&p.a, &p.b, &c, &p.f, &grid)?);
    report.put("cohomology_tail_bound", p.c_tail());

    let legs: Vec<SuLeg> = (0..cfg.run.samples)
        .map(|i| {
            let x = TorusPoint::random(rng);
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            SuLeg::new(&p.f, x, alternating(i), sign * DEMO_LEG)
        })
        .collect();
    let r = intertwining_residual(&p.a, &p.b, &c, &p.f, &legs, &s.opts)?;
    report.put("stable_intertwine", r.stable);
    report.put("unstable_intertwine", r.unstable);
    let gauged = c.gauged(&Operator::diag(&[2.0, 0.5])?)?;
    let rg = intertwining_residual(&p.a, &p.b, &gauged, &p.f, &legs, &s.opts)?;
    let hg = cohomology_residual(&p.a, &p.b, &gauged, &p.f, &grid)?;
    let h0 = cohomology_residual(&p.a, &p.b, &c, &p.f, &grid)?;
    report.put(
        "gauge_change",
        (r.stable - rg.stable).abs().max((r.unstable - rg.unstable).abs()).max((h0 - hg).abs()),
    );

    let mut table = SampleTable::new(&["leg_type", "x1", "x2", "t", "numeric_h", "oracle_h", "c_difference"]);
    let mut oracle_err = 0.0f64;
    for leg in &legs {
        let h = leg_holonomy(&p.a, &p.f, leg, &s.opts)?;
        let o = p.leg_oracle(leg);
        oracle_err = oracle_err.max(spectral_norm(&(h.h.mat() - o.mat())));
        table.push(vec![
            leg_type_name(leg.leg_type),
            leg.start.x1().to_string(),
            leg.start.x2().to_string(),
            leg.t.to_string(),
            h.h.mat()[(0, 1)].to_string(),
            o.mat()[(0, 1)].to_string(),
            p.c_difference(leg.anchor(), leg.leg_type, 0.0, leg.t).to_string(),
        ]);
    }
    report.put("oracle_max_error", oracle_err);

    let cycles = seeded_cycles(&p.f, TorusPoint::origin(), cfg.run.samples.min(50), cfg.run.max_leg, rng)?;
    report.put("cycle_defect", cycle_triviality(&p.a, &p.f, &cycles, &s.opts)?.max_defect);
    let x0 = TorusPoint::origin();
    let ext = extend_from_base(&p.a, &p.b, &p.f, x0, &c.eval(x0)?, &extension_opts(cfg, s))?;
    report.put("path_independence", path_independence_of(&ext, cfg.run.samples.min(50), rng)?);

    let xs: Vec<TorusPoint> = (0..cfg.run.samples.min(40)).map(|_| TorusPoint::random(rng)).collect();
    let ts: Vec<f64> = (0..=20).map(|i| 10f64.powf(-6.0 + 5.0 * i as f64 / 20.0)).collect();
    report.put("r_hat_unstable", unstable_holder_of_c(&p, &xs, &ts, LegType::Unstable)?.r_hat);
    report.put("r_hat_stable", unstable_holder_of_c(&p, &xs, &ts, LegType::Stable)?.r_hat);
    Ok(Outcome { samples: Some(table) })
}

fn demo_perturbed(cfg: &ExperimentConfig, s: &Setup, rng: &mut ChaCha8Rng, report: &mut Report) -> CmdResult {
    let split = match &s.splitting {
        Some(sp) => sp.clone(),
        None => {
            let a0 = Operator::diag(&[2.0, 0.5])?;
            perturbed_constant(&a0, default_perturbation(), 0.05, &s.f)?.1
        }
    };
    report.put("gap", split.gap);
    let grid = uniform_grid(cfg.run.grid.min(16));
    report.put("invariance_residual", split.invariance_residual(&grid)?);
    let small = uniform_grid(cfg.run.grid.min(8));
    for (name, bundle) in [("fast", Bundle::Fast), ("slow", Bundle::Slow)] {
        let r = split.restriction(bundle)?;
        let w = check_weak_fiber_bunching(&r, &s.f, &s.rates, cfg.run.beta, 16, &small)?;
        report.put(&format!("theta_hat_{name}"), w.theta_hat);
        report.put_bool(&format!("weak_ok_{name}"), w.pointwise_ok);
    }
    let fit = split.holder_fit(Bundle::Fast, cfg.run.samples.max(100), rng)?;
    report.put("splitting_holder_exponent", fit.beta_hat);
    none()
}
