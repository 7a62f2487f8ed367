//! Command-line driver: `chdbc run|verify|convergence --config <path>
//! [--override key=value ...]`.
//!
//! Exit codes: 0 success, 2 config error, 3 solver error, 4 verification
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chdbc::config::RunConfig;
use chdbc::error::{ChdbcError, Result};
use chdbc::io::{write_bulk_field, EnergyRow, EnergyWriter};
use chdbc::scheme::{SchemeKind, WallDerivatives};
use chdbc::verify::{
    elliptic_inverse_suite, operator_identity_suite, run_structure_suite,
    temporal_order_study, verify_correction_identities, ConvergenceReport,
};
use chdbc::{Mesh, State, Stepper};

#[derive(Parser)]
#[command(name = "chdbc", about = "Cahn-Hilliard solver with dynamical boundary conditions")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to a key=value config file.
    #[arg(long)]
    config: PathBuf,
    /// key=value pairs overriding config entries (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate and write snapshots plus the energy series.
    Run(CommonArgs),
    /// Run the operator, elliptic, correction and structure suites.
    Verify(CommonArgs),
    /// Run the temporal self-refinement order study.
    Convergence(CommonArgs),
}

fn exit_for(e: &ChdbcError) -> u8 {
    match e {
        ChdbcError::Config(_) | ChdbcError::Io(_) => 2,
        _ => 3,
    }
}

fn require_output_dir(cfg: &RunConfig) -> Result<()> {
    if !cfg.output_dir.is_dir() {
        return Err(ChdbcError::Config(format!(
            "output_dir '{}' does not exist or is not a directory",
            cfg.output_dir.display()
        )));
    }
    Ok(())
}

fn cmd_run(cfg: &RunConfig) -> Result<()> {
    require_output_dir(cfg)?;
    let mesh = Mesh::new(cfg.n);
    let stepper = Stepper::new(&mesh, cfg.model(), cfg.scheme_params());
    let steps = cfg.steps();
    let mut energy = EnergyWriter::create(&cfg.output_dir.join("energy.csv"))?;
    let snapshot = |k: usize, s: &State| -> Result<()> {
        write_bulk_field(&cfg.output_dir.join(format!("phi_{k}.csv")), &s.phi)
    };

    let mut cur = cfg.initial_state()?;
    snapshot(0, &cur)?;
    let mut prev: Option<State> = None;
    let mut walls = WallDerivatives::zero(&mesh);
    for k in 1..=steps {
        let (next, diag) = match (cfg.scheme, &prev) {
            (SchemeKind::Cs1, _) | (SchemeKind::Bdf2, None) => {
                stepper.step_cs1(&cur).map_err(|e| reindex(e, k))?
            }
            (SchemeKind::Bdf2, Some(p)) => {
                stepper.step_bdf2(&cur, p, &walls).map_err(|e| reindex(e, k))?
            }
        };
        let e_h_modified = stepper.modified_energy(&next, &cur)?;
        energy.write_row(EnergyRow {
            step: k,
            t: k as f64 * cfg.dt,
            e_h: diag.energy,
            e_h_modified,
            bulk_mass: diag.masses.0,
            bottom_mass: diag.masses.1,
            top_mass: diag.masses.2,
            dissipation_residual: diag.dissipation_residual,
            positivity_margin: next.positivity_margin(),
            newton_iters: diag.newton_iters,
        })?;
        if k % cfg.output_every == 0 || k == steps {
            snapshot(k, &next)?;
        }
        walls = diag.wall_derivatives();
        prev = Some(cur);
        cur = next;
    }
    energy.finish()?;
    Ok(())
}

fn reindex(e: ChdbcError, step: usize) -> ChdbcError {
    match e {
        ChdbcError::StructureViolation { what, .. } => {
            ChdbcError::StructureViolation { step, what }
        }
        other => other,
    }
}

struct CheckTable {
    all_pass: bool,
}

impl CheckTable {
    fn new() -> CheckTable {
        CheckTable { all_pass: true }
    }

    fn record(&mut self, name: &str, pass: bool, detail: String) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {name}: {detail}");
        self.all_pass &= pass;
    }
}

fn cmd_verify(cfg: &RunConfig) -> Result<bool> {
    let mut table = CheckTable::new();

    let mut worst_op = 0.0f64;
    for n in [8usize, 16, 32] {
        worst_op = worst_op.max(operator_identity_suite(n, 20, 2024 + n as u64));
    }
    table.record(
        "operator identities",
        worst_op <= 1e-12,
        format!("worst relative violation {worst_op:.2e} (tolerance 1e-12)"),
    );

    let mut worst_ell = 0.0f64;
    for n in [8usize, 16, 32] {
        worst_ell = worst_ell.max(elliptic_inverse_suite(n, 4040 + n as u64)?);
    }
    table.record(
        "elliptic inverses",
        worst_ell <= 1e-10,
        format!("worst violation {worst_ell:.2e} (tolerance 1e-10)"),
    );

    let mut corr_ok = true;
    let mut corr_detail = String::from("identities hold at N in {4, 8, 16, 64}");
    for n in [4usize, 8, 16, 64] {
        if let Err(e) = verify_correction_identities(&Mesh::new(n)) {
            corr_ok = false;
            corr_detail = format!("N={n}: {e}");
            break;
        }
    }
    table.record("correction identities", corr_ok, corr_detail);

    let initial = cfg.initial_state()?;
    let report = run_structure_suite(
        &initial,
        cfg.model(),
        cfg.scheme_params(),
        cfg.scheme,
        cfg.steps(),
    )?;
    table.record(
        "structure suite",
        report.ok,
        format!(
            "{} steps, max mass drift {:.2e}, max dissipation residual {:.2e}, min margin {:.3}",
            report.masses.len(),
            report.max_mass_drift,
            report.max_dissipation_residual,
            report.min_positivity_margin
        ),
    );

    // One more step from the suite's final state: its output must be a
    // stationary point of the per-step functional, which fails when the
    // Newton tolerance is too loose to actually solve the nonlinear system.
    let mesh = Mesh::new(cfg.n);
    let stepper = Stepper::new(&mesh, cfg.model(), cfg.scheme_params());
    let (next, diag) = stepper.step_cs1(&report.final_state)?;
    let grad = stepper.functional_fhn_gradcheck(&next, &report.final_state)?;
    table.record(
        "step stationarity",
        grad <= 1e-6 && diag.final_residual <= 1e-9,
        format!(
            "directional-derivative mismatch {grad:.2e} (tolerance 1e-6), \
             accepted nonlinear residual {:.2e} (tolerance 1e-9)",
            diag.final_residual
        ),
    );

    Ok(table.all_pass)
}

fn write_convergence_csv(path: &Path, r: &ConvergenceReport) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# {}", r.note)?;
    writeln!(f, "level,dt,h,error,order")?;
    for (k, &(dt, h)) in r.ladder.iter().enumerate() {
        let err = r.errors.get(k).map_or(String::new(), |e| format!("{e:.17e}"));
        let ord = if k > 0 {
            r.orders.get(k - 1).map_or(String::new(), |o| format!("{o:.4}"))
        } else {
            String::new()
        };
        writeln!(f, "{k},{dt:.17e},{h:.17e},{err},{ord}")?;
    }
    Ok(())
}

fn cmd_convergence(cfg: &RunConfig) -> Result<bool> {
    require_output_dir(cfg)?;
    let initial = cfg.initial_state()?;
    let report = temporal_order_study(
        &initial,
        cfg.model(),
        cfg.scheme_params(),
        cfg.scheme,
        4,
        cfg.t_final,
    )?;
    println!("# {}", report.note);
    println!(
        "scheme {} target order {} degenerate {}",
        cfg.scheme, report.target_order, report.degenerate
    );
    for (k, &(dt, h)) in report.ladder.iter().enumerate() {
        let err = report.errors.get(k).map_or("-".to_string(), |e| format!("{e:.6e}"));
        let ord = if k > 0 {
            report.orders.get(k - 1).map_or("-".to_string(), |o| format!("{o:.3}"))
        } else {
            "-".to_string()
        };
        println!("level {k}: dt {dt:.3e} h {h:.3e} error {err} order {ord}");
    }
    write_convergence_csv(&cfg.output_dir.join("convergence.csv"), &report)?;
    let tag = if report.pass { "PASS" } else { "FAIL" };
    println!("[{tag}] observed order vs target {}", report.target_order);
    Ok(report.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, which) = match &cli.cmd {
        Cmd::Run(a) => (a, 0u8),
        Cmd::Verify(a) => (a, 1),
        Cmd::Convergence(a) => (a, 2),
    };
    let cfg = match RunConfig::load(&args.config, &args.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let outcome = match which {
        0 => cmd_run(&cfg).map(|()| true),
        1 => cmd_verify(&cfg),
        _ => cmd_convergence(&cfg),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
