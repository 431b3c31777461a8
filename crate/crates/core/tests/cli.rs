use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_stochpe");

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(cwd).output().unwrap()
}

fn small_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    fs::write(
        &path,
        format!(
            "grid.nx = 8\ngrid.ny = 8\ngrid.nz = 8\nsolver.dt = 0.001\nsolver.t_end = 0.02\n\
             solver.observer_stride = 5\nnoise.lowest = 6\nnoise.amplitude = 0.5\n\
             ensemble.members = 3\nensemble.radii = 1, 10\noutput.dir = out\n\
             initial.kind = random\ninitial.seed = 4\ninitial.norm = 0.5\n{extra}"
        ),
    )
    .unwrap();
    path
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .count()
        - 1
}

#[test]
fn help_for_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    for sub in [vec!["--help"], vec!["simulate", "--help"], vec!["ensemble", "--help"], vec![
        "verify", "--help",
    ], vec!["report", "--help"]] {
        let out = run(&sub, dir.path());
        assert_eq!(out.status.code(), Some(0), "{sub:?}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["simulate", "ensemble", "verify"] {
        let out = run(&[sub, "nowhere.cfg"], dir.path());
        assert_eq!(out.status.code(), Some(1));
        assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.cfg"));
    }
    let out = run(&["report", "no_such_dir"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_dir"));
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["frobnicate"], dir.path()).status.code(), Some(1));
    let cfg = small_config(dir.path(), "grid.depth = 3\n");
    let out = run(&["simulate", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 15") && err.contains("column 1"), "{err}");
    let cfg = small_config(dir.path(), "");
    let out = run(&["verify", cfg.to_str().unwrap(), "--suite", "everything"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn zero_length_run_writes_header_only_tables() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("min.cfg"), "solver.t_end = 0\ngrid.nx = 8\ngrid.ny = 8\ngrid.nz = 8\n").unwrap();
    let out = run(&["simulate", "min.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["observables.csv", "stopping.csv", "energy.csv", "exceedance.csv", "kb_profile.csv"] {
        let p = dir.path().join("out").join(f);
        assert_eq!(data_rows(&p), 0, "{f}");
    }
    assert!(dir.path().join("out/final.pesf").exists());
    let out = run(&["ensemble", "min.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(data_rows(&dir.path().join("out/summary.csv")), 0);
}

#[test]
fn simulate_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = run(&["simulate", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let obs = fs::read_to_string(dir.path().join("out/observables.csv")).unwrap();
    let mut lines = obs.lines();
    assert_eq!(lines.next(), Some("# stochpe observables v1"));
    assert_eq!(lines.next(), Some("t,E,Ebar,J,K,L,Lbar,L_eps,Y,X,Xbar,phiX"));
    assert_eq!(lines.count(), 5);
    let out = run(&["report", "out"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    for f in ["plot_energy_residual.csv", "plot_log1p_x.csv", "plot_tau_exceedance.csv", "plot_kb_profile.csv"] {
        let text = fs::read_to_string(dir.path().join("out").join(f)).unwrap();
        assert!(text.starts_with("x,y\n"), "{f}");
    }
}

#[test]
fn ensemble_outputs_are_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "ensemble.checkpoint_every = 10\n");
    let cfg = cfg.to_str().unwrap();
    let files = ["summary.csv", "stopping.csv", "exceedance.csv", "kb_profile.csv", "members/observables_0002.csv"];
    let read = |d: &str| -> Vec<Vec<u8>> {
        files.iter().map(|f| fs::read(dir.path().join(d).join(f)).unwrap()).collect()
    };
    assert_eq!(run(&["ensemble", cfg], dir.path()).status.code(), Some(0));
    let first = read("out");
    fs::rename(dir.path().join("out"), dir.path().join("first")).unwrap();
    assert_eq!(run(&["ensemble", cfg], dir.path()).status.code(), Some(0));
    assert_eq!(read("out"), first);

    let out = run(&["ensemble", cfg, "--resume", "first/checkpoint.peck"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read("out"), first);

    let out = run(&["ensemble", cfg, "--resume", "first/summary.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_structure_on_reference_grid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ref.cfg");
    fs::write(&path, "grid.nx = 16\ngrid.ny = 16\ngrid.nz = 16\nnoise.lowest = 8\n").unwrap();
    let out = run(&["verify", "ref.cfg", "--suite", "structure"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().any(|l| l == "structure.advection_cancellation=pass"));
    assert!(text.lines().all(|l| l.contains('=') && !l.ends_with("=fail")));
}

#[test]
fn blow_up_exits_two_with_failure_time() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("hot.cfg"),
        "grid.nx = 8\ngrid.ny = 8\ngrid.nz = 8\nsolver.dt = 0.01\nsolver.t_end = 10\n\
         noise.modes = 1,0,0,perp,1e5; 0,1,1,x,1e5; 1,1,1,y,1e5\n",
    )
    .unwrap();
    let out = run(&["simulate", "hot.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("failure time"));
    let report = fs::read_to_string(dir.path().join("out/failure.txt")).unwrap();
    assert!(report.starts_with("status=nonfinite\ntime="));
}

#[test]
fn initial_state_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    assert_eq!(run(&["simulate", cfg.to_str().unwrap()], dir.path()).status.code(), Some(0));
    fs::write(
        dir.path().join("from_file.cfg"),
        "grid.nx = 8\ngrid.ny = 8\ngrid.nz = 8\nsolver.t_end = 0.005\ninitial.kind = file\n\
         initial.path = out/final.pesf\noutput.dir = second\n",
    )
    .unwrap();
    let out = run(&["simulate", "from_file.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    fs::write(
        dir.path().join("wrong_grid.cfg"),
        "grid.nx = 16\ngrid.ny = 16\ngrid.nz = 16\ninitial.kind = file\ninitial.path = out/final.pesf\n",
    )
    .unwrap();
    assert_eq!(run(&["simulate", "wrong_grid.cfg"], dir.path()).status.code(), Some(1));
}
