mod commands;
mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::commands::Setup;
use crate::config::{ExperimentConfig, Format};
use crate::report::{ErrorInfo, Report};

#[derive(Parser)]
#[command(name = "cocycle-lab", version, about = "Numerical experiments on linear cocycles over toral automorphisms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `[output] dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true, value_parser = ["json", "csv"])]
    format: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Pointwise and weak fiber bunching, center bunching.
    CheckBunching,
    /// Holonomies along sampled legs and their axioms.
    Holonomy,
    /// Hölder exponent of the generator and of the holonomy.
    HolderEstimate,
    /// Weights of seeded su-cycles.
    CycleWeights,
    /// Extend a conjugacy from its value at the origin.
    ConjugacyExtend,
    /// Residuals of a conjugacy, or a constant target from holonomy.
    CertifyConjugacy,
    /// Triangular family: stable but not unstable intertwining.
    DemoTriangular,
    /// Dominated splitting of a perturbed constant cocycle.
    DemoPerturbed,
}

impl Command {
    fn name(self) -> &'static str {
        use Command::*;
        let i = match self {
            CheckBunching => 0,
            Holonomy => 1,
            HolderEstimate => 2,
            CycleWeights => 3,
            ConjugacyExtend => 4,
            CertifyConjugacy => 5,
            DemoTriangular => 6,
            DemoPerturbed => 7,
        };
        commands::SUBCOMMANDS[i]
    }

    /// Cocycle section used when no configuration file is given.
    fn default_cocycle(self) -> &'static str {
        match self {
            Command::DemoTriangular => "kind = triangular\n",
            Command::DemoPerturbed => "kind = perturbed_constant\n",
            _ => "kind = constant\nentry_0_0 = lambda^0.5\nentry_0_1 = 0\nentry_1_0 = 0\nentry_1_1 = 1\n",
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
    let (mut cfg, dir) = match &cli.config {
        Some(p) => (
            ExperimentConfig::load(p)?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => {
            let text = format!("[cocycle]\n{}", cli.command.default_cocycle());
            (ExperimentConfig::parse(&text)?, PathBuf::from("."))
        }
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(t) = cli.tol {
        cfg.run.tol = t;
    }
    if let Some(f) = &cli.format {
        cfg.output.format = if f == "csv" { Format::Csv } else { Format::Json };
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.display().to_string();
    }
    cfg.validate()?;
    Ok((cfg, dir))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let (cfg, base_dir) = match load_config(&cli) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let setup = match Setup::build(&cfg, &base_dir) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    let name = cli.command.name();
    let mut report = Report::new(name, cfg.digest(), cfg.run.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let out_dir = PathBuf::from(&cfg.output.dir);
    let mut code = ExitCode::SUCCESS;
    match commands::run(name, &cfg, &setup, &mut rng, &mut report) {
        Ok(outcome) => {
            if let Some(table) = outcome.samples {
                let file = format!("{name}_samples.csv");
                if let Err(e) = std::fs::create_dir_all(&out_dir).map_err(anyhow::Error::from).and_then(|_| table.write(&out_dir.join(&file))) {
                    eprintln!("error: {e:#}");
                    return ExitCode::from(2);
                }
                report.samples = Some(file);
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            report.error = Some(ErrorInfo::from(&e));
            code = ExitCode::from(3);
        }
    }
    match report.emit(&out_dir, cfg.output.format) {
        Ok(path) => println!("{}", path.display()),
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    }
    code
}
