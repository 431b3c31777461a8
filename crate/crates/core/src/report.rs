//! CSV artifacts of `simulate` and `ensemble` runs, and the plot-data files
//! assembled from them by `report`.
//!
//! Every table starts with a `# stochpe <table> v<version>` line. Floats are
//! written in shortest round-trip exponent form, so identical runs give
//! identical bytes. A run with zero steps writes header-only tables.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::ensemble::{self, Ensemble, KbPoint, OBSERVABLES};
use crate::error::{Error, Result};
use crate::grid;
use crate::integrator::Trajectory;
use crate::stats::MeanSe;
use crate::stopping::{self, StoppingConfig};

pub const FORMAT_VERSION: u32 = 1;

pub const OBSERVABLES_CSV: &str = "observables.csv";
pub const ENERGY_CSV: &str = "energy.csv";
pub const STOPPING_CSV: &str = "stopping.csv";
pub const EXCEEDANCE_CSV: &str = "exceedance.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const KB_CSV: &str = "kb_profile.csv";
pub const CONFIG_SNAPSHOT: &str = "config.snapshot";
pub const FINAL_FIELD: &str = "final.pesf";
pub const FAILURE_FILE: &str = "failure.txt";
pub const MEMBERS_DIR: &str = "members";

/// Threshold multipliers of the exceedance sweep around the configured value.
const SWEEP: [f64; 5] = [1e-2, 1e-1, 1.0, 1e1, 1e2];

fn num(x: f64) -> String {
    format!("{x:e}")
}

struct Table {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl Table {
    fn create(path: PathBuf, name: &str, header: &[&str]) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "# stochpe {name} v{FORMAT_VERSION}").map_err(|e| Error::io(&path, e))?;
        let mut inner = csv::Writer::from_writer(w);
        inner.write_record(header).map_err(|e| Error::io(&path, e.into()))?;
        Ok(Table { path, inner })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        self.inner
            .write_record(fields)
            .map_err(|e| Error::io(&self.path, e.into()))
    }

    fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn observables_header() -> Vec<&'static str> {
    let mut h = vec!["t"];
    h.extend(OBSERVABLES);
    h
}

fn write_observables(path: PathBuf, tr: &Trajectory, rows: bool) -> Result<()> {
    let mut t = Table::create(path, "observables", &observables_header())?;
    if rows {
        for (time, f) in tr.times.iter().zip(&tr.functionals) {
            let mut r = vec![num(*time)];
            r.extend(ensemble::observable_row(f).iter().map(|x| num(*x)));
            t.row(&r)?;
        }
    }
    t.finish()
}

fn write_energy(path: PathBuf, tr: &Trajectory, rows: bool) -> Result<()> {
    let mut t = Table::create(
        path,
        "energy",
        &["t", "e2", "ebar2", "lbar2", "grad_int", "hs_int", "martingale", "energy_residual"],
    )?;
    if rows {
        let e0 = tr.initial_energy();
        for s in &tr.samples {
            t.row(&[
                num(s.t),
                num(s.e2),
                num(s.ebar2),
                num(s.lbar2),
                num(s.grad_int),
                num(s.hs_int),
                num(s.martingale),
                num(s.energy_residual(e0)),
            ])?;
        }
    }
    t.finish()
}

fn write_stopping(path: PathBuf, seeds: &[u64], members: &[Trajectory], cfg: StoppingConfig, rows: bool) -> Result<()> {
    let mut t = Table::create(
        path,
        "stopping",
        &["seed", "hit_sigma", "hit_tau", "hit_rho", "gamma", "kappa", "lambda"],
    )?;
    if rows {
        for (seed, m) in seeds.iter().zip(members) {
            let Some(r) = &m.stopping else { continue };
            t.row(&[
                seed.to_string(),
                num(r.hits.sigma),
                num(r.hits.tau),
                num(r.hits.rho),
                num(cfg.gamma),
                num(cfg.kappa),
                num(cfg.lambda),
            ])?;
        }
    }
    t.finish()
}

/// Exceedance probabilities at the final time for thresholds swept around
/// the configured ones, recomputed from the stored paths.
fn write_exceedance(path: PathBuf, members: &[Trajectory], cfg: StoppingConfig, t_end: f64, rows: bool) -> Result<()> {
    let mut t = Table::create(
        path,
        "exceedance",
        &["kind", "threshold", "t", "hits", "trials", "p", "lo", "hi"],
    )?;
    let records: Vec<_> = members.iter().filter_map(|m| m.stopping.as_ref()).collect();
    if rows && !records.is_empty() {
        for kind in ["sigma", "tau", "rho"] {
            for s in SWEEP {
                let mut c = cfg;
                let threshold = match kind {
                    "sigma" => {
                        c.gamma *= s;
                        c.gamma
                    }
                    "tau" => {
                        c.kappa *= s;
                        c.kappa
                    }
                    _ => {
                        c.lambda *= s;
                        c.lambda
                    }
                };
                let hits: Vec<_> = records.iter().map(|r| r.recompute(c)).collect();
                let e = stopping::exceedance_of(&hits, t_end)?;
                let p = match kind {
                    "sigma" => e.sigma,
                    "tau" => e.tau,
                    _ => e.rho,
                };
                t.row(&[
                    kind.to_string(),
                    num(threshold),
                    num(t_end),
                    p.hits.to_string(),
                    p.trials.to_string(),
                    num(p.p),
                    num(p.lo),
                    num(p.hi),
                ])?;
            }
        }
    }
    t.finish()
}

fn write_kb(path: PathBuf, kb: &[KbPoint], rows: bool) -> Result<()> {
    let mut t = Table::create(path, "kb_profile", &["R", "fraction", "se"])?;
    if rows {
        for p in kb {
            t.row(&[num(p.radius), num(p.fraction), num(p.se.unwrap_or(f64::NAN))])?;
        }
    }
    t.finish()
}

fn write_snapshot_files(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(CONFIG_SNAPSHOT);
    fs::write(&path, cfg.snapshot()).map_err(|e| Error::io(&path, e))
}

fn write_field(path: PathBuf, v: &crate::SpectralField) -> Result<()> {
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    grid::write_snapshot(v, &mut w).map_err(|e| Error::io(&path, e))?;
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Artifacts of a single trajectory.
pub fn write_simulation(dir: &Path, cfg: &RunConfig, tr: &Trajectory) -> Result<()> {
    write_snapshot_files(dir, cfg)?;
    let rows = cfg.solver().steps() > 0;
    write_observables(dir.join(OBSERVABLES_CSV), tr, rows)?;
    write_energy(dir.join(ENERGY_CSV), tr, rows)?;
    let members = std::slice::from_ref(tr);
    write_stopping(dir.join(STOPPING_CSV), &[cfg.seed], members, cfg.stopping, rows)?;
    write_exceedance(dir.join(EXCEEDANCE_CSV), members, cfg.stopping, cfg.t_end, rows)?;
    write_kb(dir.join(KB_CSV), &ensemble::kb_profile(members, &cfg.radii, f64::INFINITY), rows)?;
    write_field(dir.join(FINAL_FIELD), &tr.final_state)
}

fn summary_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    let mut names: Vec<&str> = vec!["e2", "ebar2", "h2", "energy_residual", "martingale", "log1p_xbar"];
    names.extend(OBSERVABLES);
    for n in names {
        h.push(format!("{n}_mean"));
        h.push(format!("{n}_se"));
    }
    h
}

/// Artifacts of an ensemble run.
pub fn write_ensemble(dir: &Path, cfg: &RunConfig, ens: &Ensemble) -> Result<()> {
    write_snapshot_files(dir, cfg)?;
    let rows = cfg.solver().steps() > 0;
    let members_dir = dir.join(MEMBERS_DIR);
    fs::create_dir_all(&members_dir).map_err(|e| Error::io(&members_dir, e))?;
    for (k, m) in ens.members.iter().enumerate() {
        write_observables(members_dir.join(format!("observables_{k:04}.csv")), m, rows)?;
    }

    let header = summary_header();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::create(dir.join(SUMMARY_CSV), "summary", &header_refs)?;
    if rows {
        let s = &ens.stats;
        let missing = MeanSe {
            mean: f64::NAN,
            se: None,
            n: 0,
        };
        for (i, time) in s.times.iter().enumerate() {
            let mut r = vec![num(*time)];
            let mut cols = vec![s.e2[i], s.ebar2[i], s.h2[i], s.energy_residual[i], s.martingale[i]];
            cols.push(s.log1p_xbar.get(i).copied().unwrap_or(missing));
            match s.observables.get(i) {
                Some(o) => cols.extend(o.iter().copied()),
                None => cols.extend(std::iter::repeat_n(missing, OBSERVABLES.len())),
            }
            for c in cols {
                r.push(num(c.mean));
                r.push(num(c.se.unwrap_or(f64::NAN)));
            }
            t.row(&r)?;
        }
    }
    t.finish()?;

    let seeds: Vec<u64> = (0..ens.members.len())
        .map(|k| crate::rng::member_seed(cfg.base_seed, k))
        .collect();
    write_stopping(dir.join(STOPPING_CSV), &seeds, &ens.members, cfg.stopping, rows)?;
    write_exceedance(dir.join(EXCEEDANCE_CSV), &ens.members, cfg.stopping, cfg.t_end, rows)?;
    write_kb(dir.join(KB_CSV), &ens.stats.kb_profile, rows)
}

/// Records a numerical failure next to the other artifacts.
pub fn write_failure(dir: &Path, time: f64, message: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(FAILURE_FILE);
    fs::write(&path, format!("status=nonfinite\ntime={time:e}\nmessage={message}\n"))
        .map_err(|e| Error::io(&path, e))
}

/// Reads columns `x` and `y` of a CSV table, optionally keeping only rows
/// whose `filter.0` column equals `filter.1`.
fn read_columns(path: &Path, x: &str, y: &str, filter: Option<(&str, &str)>) -> Result<Vec<(String, String)>> {
    let corrupt = |m: String| Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, m));
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::io(path, e.into()))?;
    let headers = r.headers().map_err(|e| Error::io(path, e.into()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| corrupt(format!("missing column {name:?}")))
    };
    let (ix, iy) = (col(x)?, col(y)?);
    let f = filter.map(|(c, v)| col(c).map(|i| (i, v))).transpose()?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::io(path, e.into()))?;
        if let Some((i, v)) = f {
            if rec.get(i) != Some(v) {
                continue;
            }
        }
        out.push((rec[ix].to_string(), rec[iy].to_string()));
    }
    Ok(out)
}

pub const PLOT_ENERGY: &str = "plot_energy_residual.csv";
pub const PLOT_LOG1P_X: &str = "plot_log1p_x.csv";
pub const PLOT_TAU: &str = "plot_tau_exceedance.csv";
pub const PLOT_KB: &str = "plot_kb_profile.csv";

/// Writes the `x,y` plot-data files derivable from the tables in `dir`
/// and returns their paths. Ensemble tables take precedence over
/// single-trajectory ones.
pub fn build_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "run directory not found"),
        ));
    }
    let summary = dir.join(SUMMARY_CSV);
    let sources: [(&str, PathBuf, &str, &str, Option<(&str, &str)>); 4] = if summary.exists() {
        [
            (PLOT_ENERGY, summary.clone(), "t", "energy_residual_mean", None),
            (PLOT_LOG1P_X, summary, "t", "phiX_mean", None),
            (PLOT_TAU, dir.join(EXCEEDANCE_CSV), "threshold", "p", Some(("kind", "tau"))),
            (PLOT_KB, dir.join(KB_CSV), "R", "fraction", None),
        ]
    } else {
        [
            (PLOT_ENERGY, dir.join(ENERGY_CSV), "t", "energy_residual", None),
            (PLOT_LOG1P_X, dir.join(OBSERVABLES_CSV), "t", "phiX", None),
            (PLOT_TAU, dir.join(EXCEEDANCE_CSV), "threshold", "p", Some(("kind", "tau"))),
            (PLOT_KB, dir.join(KB_CSV), "R", "fraction", None),
        ]
    };
    let mut written = Vec::new();
    for (name, src, x, y, filter) in sources {
        if !src.exists() {
            continue;
        }
        let rows = read_columns(&src, x, y, filter)?;
        let out = dir.join(name);
        let file = File::create(&out).map_err(|e| Error::io(&out, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let io = |e: csv::Error| Error::io(&out, e.into());
        w.write_record(["x", "y"]).map_err(io)?;
        for (a, b) in rows {
            w.write_record([a, b]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(&out, e))?;
        written.push(out);
    }
    if written.is_empty() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no run tables found"),
        ));
    }
    Ok(written)
}
