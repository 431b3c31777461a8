use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stochpe::config::RunConfig;
use stochpe::verify::{self, Suite, VerifyContext};
use stochpe::{checkpoint, ensemble, integrator, report, Error};

/// Stochastic primitive equations: simulation, ensembles and checks.
#[derive(Parser)]
#[command(name = "stochpe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory and write observables, stopping times and the final field.
    Simulate {
        /// Run configuration file.
        config: PathBuf,
    },
    /// Run a Monte Carlo ensemble and write its statistics.
    Ensemble {
        config: PathBuf,
        /// Continue from a checkpoint written by an earlier run of the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run invariant checks at the configured grid.
    Verify {
        config: PathBuf,
        #[arg(long, default_value = "all", value_parser = clap::builder::PossibleValuesParser::new(Suite::NAMES))]
        suite: String,
    },
    /// Turn the tables of a run directory into x,y plot data.
    Report {
        /// Output directory of a simulate or ensemble run.
        run_dir: PathBuf,
    },
}

const CHECKPOINT_FILE: &str = "checkpoint.peck";

fn root_cause(e: &Error) -> &Error {
    match e {
        Error::MemberFailed { source, .. } => root_cause(source),
        other => other,
    }
}

fn exit_code(e: &Error) -> u8 {
    match root_cause(e) {
        Error::NonFinite { .. } | Error::ConstraintViolation { .. } => 2,
        _ => 1,
    }
}

/// Reports a failed run, recording non-finite states in the output directory.
fn fail(e: Error, out: Option<&Path>) -> ExitCode {
    eprintln!("error: {e}");
    if let (Error::NonFinite { time }, Some(dir)) = (root_cause(&e), out) {
        eprintln!("failure time: {time:e}");
        if let Err(w) = report::write_failure(dir, *time, &e.to_string()) {
            eprintln!("error: {w}");
        }
    }
    ExitCode::from(exit_code(&e))
}

fn simulate(path: &Path) -> ExitCode {
    let cfg = match RunConfig::load(path) {
        Ok(c) => c,
        Err(e) => return fail(e, None),
    };
    let run = || -> Result<_, Error> {
        let v0 = cfg.initial_state()?;
        let model = cfg.noise_model()?;
        if let Some(w) = cfg.stopping.gamma_warning(&v0) {
            eprintln!("warning: {w}");
        }
        integrator::integrate(&v0, &cfg.solver(), &model, Some(cfg.stopping), &mut [])
    };
    match run().and_then(|tr| report::write_simulation(&cfg.output_dir, &cfg, &tr)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e, Some(&cfg.output_dir)),
    }
}

fn run_ensemble(path: &Path, resume: Option<&Path>) -> ExitCode {
    let cfg = match RunConfig::load(path) {
        Ok(c) => c,
        Err(e) => return fail(e, None),
    };
    let run = || -> Result<_, Error> {
        let v0 = cfg.initial_state()?;
        let ck_path = (cfg.checkpoint_every > 0).then(|| cfg.output_dir.join(CHECKPOINT_FILE));
        if ck_path.is_some() {
            std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
        }
        let ens_cfg = cfg.ensemble(ck_path)?;
        match resume {
            Some(p) => ensemble::resume_ensemble(&ens_cfg, &v0, checkpoint::load(p)?),
            None => ensemble::run_ensemble(&ens_cfg, &v0),
        }
    };
    match run().and_then(|ens| report::write_ensemble(&cfg.output_dir, &cfg, &ens)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e, Some(&cfg.output_dir)),
    }
}

fn run_verify(path: &Path, suite: &str) -> ExitCode {
    let run = || -> Result<_, Error> {
        let cfg = RunConfig::load(path)?;
        let suite: Suite = suite.parse().map_err(Error::InvalidConfig)?;
        let ctx = VerifyContext {
            grid: cfg.grid()?,
            rule: cfg.solver().dealias,
            dt: cfg.dt,
            model: cfg.noise_model()?,
            seed: cfg.seed,
        };
        verify::run(suite, &ctx)
    };
    match run() {
        Ok(checks) => {
            for c in &checks {
                println!("{c}");
            }
            if verify::all_pass(&checks) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
        Err(e) => fail(e, None),
    }
}

fn run_report(dir: &Path) -> ExitCode {
    match report::build_plots(dir) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(e, None),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::Simulate { config } => simulate(&config),
        Command::Ensemble { config, resume } => run_ensemble(&config, resume.as_deref()),
        Command::Verify { config, suite } => run_verify(&config, &suite),
        Command::Report { run_dir } => run_report(&run_dir),
    }
}
