use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lodbs_core::coefficients::make_random_coefficient;
use lodbs_core::errors::infsup_constant;
use lodbs_core::experiments::{run_experiment, write_bundle, ExperimentConfig, ExperimentKind, ExperimentOutcome, ErrorField};
use lodbs_core::lod::{corrector_decay_profile, CorrectorForm};
use lodbs_core::mesh::{build_bulk_mesh_with, restrict_to_boundary, BoundaryMesh, BoundarySelector};
use lodbs_core::Execution;

#[derive(Parser)]
#[command(name = "lodbs", version, about = "Bulk-surface heat equation with multiscale dynamic boundary conditions")]
struct Cli {
    /// Run without the thread pool.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment described by a TOML or JSON file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run one of the built-in convergence studies.
    Convergence {
        #[arg(long, default_value = "exp1-smooth")]
        experiment: ExperimentKind,
        /// Use the long-mode parameters (long running).
        #[arg(long)]
        paper_scale: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the effective configuration as TOML and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Corrector decay profile for a random boundary coefficient.
    Correctors {
        #[arg(long)]
        epsilon: f64,
        #[arg(long = "H")]
        h: f64,
        #[arg(long, default_value_t = 6)]
        max_m: usize,
        #[arg(long, default_value_t = 4)]
        fine_levels: u32,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Discrete inf-sup estimates on n = 4, 8, ... (levels meshes).
    Infsup {
        #[arg(long, default_value_t = 5)]
        levels: u32,
    },
}

fn print_outcome(o: &ExperimentOutcome) {
    println!("reference: {:.1}s, total: {:.1}s", o.reference_seconds, o.total_seconds);
    for s in &o.series {
        println!("[{}]", s.label);
        println!(
            "  {:>10} {:>10} {:>4} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
            "H_Omega", "H_Gamma", "m", "u_L2", "p_L2", "u_H1", "p_H1", "p_full_H1", "p_L2_proj"
        );
        for r in &s.rows {
            let m = r.m.map(|m| m.to_string()).unwrap_or_else(|| "-".into());
            println!(
                "  {:>10.3e} {:>10.3e} {:>4} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
                r.h_omega,
                r.h_gamma,
                m,
                r.err_u_l2,
                r.err_p_l2,
                r.err_u_h1,
                r.err_p_h1,
                r.err_p_full_h1,
                r.err_p_l2_projected
            );
        }
        let fmt = |x: Option<f64>| x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into());
        let orders: Vec<String> = ErrorField::ALL.iter().map(|&f| format!("{}={}", f.name(), fmt(s.order_last3(f)))).collect();
        println!("  order (last 3 halvings): {}", orders.join(" "));
        for f in &s.failures {
            println!("  FAILED H=2^-{} level {}: {}", f.h_exponent, f.boundary_level, f.message);
        }
    }
}

fn finish(o: &ExperimentOutcome, out: Option<&PathBuf>) -> Result<ExitCode, lodbs_core::Error> {
    print_outcome(o);
    if let Some(dir) = out {
        write_bundle(o, dir)?;
        println!("wrote {}", dir.display());
    }
    Ok(if o.has_failures() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn run(cli: Cli) -> Result<ExitCode, lodbs_core::Error> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };
    match cli.cmd {
        Cmd::Run { config, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if cli.sequential {
                cfg.execution = exec;
            }
            finish(&run_experiment(&cfg)?, Some(&out))
        }
        Cmd::Convergence { experiment, paper_scale, out, print_config } => {
            let mut cfg = if paper_scale {
                ExperimentConfig::paper_scale(experiment)
            } else {
                ExperimentConfig::defaults(experiment)
            };
            cfg.execution = exec;
            if print_config {
                print!("{}", cfg.to_toml()?);
                return Ok(ExitCode::SUCCESS);
            }
            finish(&run_experiment(&cfg)?, out.as_ref())
        }
        Cmd::Correctors { epsilon, h, max_m, fine_levels, seed } => {
            let n = (1.0 / h).round() as usize;
            let coarse = BoundaryMesh::bottom_edge(n, [true, true])?;
            let fine = BoundaryMesh::bottom_edge(n << fine_levels, [true, true])?;
            let c = make_random_coefficient(epsilon, seed, 1.0)?;
            let rows = corrector_decay_profile(&fine, &coarse, &c, CorrectorForm::Shifted, max_m, exec)?;
            println!("{:>3} {:>14}", "m", "rel_H1_error");
            for r in rows {
                println!("{:>3} {:>14.6e}", r.m, r.relative_energy_error);
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Infsup { levels } => {
            println!("{:>5} {:>12}", "n", "beta");
            for l in 0..levels {
                let n = 4usize << l;
                let mesh = build_bulk_mesh_with(n, BoundarySelector::FullBoundary)?;
                let q = restrict_to_boundary(&mesh, BoundarySelector::FullBoundary);
                let b = infsup_constant(&mesh, &q, exec)?;
                println!("{:>5} {:>12.6}{}", n, b.beta, if b.degenerate { " (degenerate)" } else { "" });
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
