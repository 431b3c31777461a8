//! Flat `key = value` run configuration.
//!
//! One setting per line; `#` starts a comment; blank lines are ignored.
//! Unknown keys, duplicates and malformed values are errors that carry the
//! line and column of the offending text.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::grid::{self, Grid, SpectralField};
use crate::integrator::SolverConfig;
use crate::noise::{Gain, ModeSpec, NoiseModel, Polarization};
use crate::spectral_ops::DealiasRule;
use crate::stopping::StoppingConfig;

#[derive(Clone, Debug, PartialEq)]
pub enum InitialKind {
    Zero,
    /// Random field in `H` rescaled to the given `L^2` norm.
    Random { seed: u64, norm: f64, decay: f64 },
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum NoiseSpec {
    Modes(Vec<ModeSpec>),
    /// The `count` lowest cosine modes with `alpha ~ amplitude / |k|^2`.
    Lowest { count: usize, amplitude: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub grid: [usize; 3],
    pub dt: f64,
    pub t_end: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub observer_stride: usize,
    pub nonlinear: bool,
    pub dealias_fraction: f64,
    pub gain: Gain,
    pub noise: NoiseSpec,
    pub stopping: StoppingConfig,
    pub members: usize,
    pub base_seed: u64,
    pub radii: Vec<f64>,
    pub checkpoint_every: usize,
    pub output_dir: PathBuf,
    pub initial: InitialKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: [16, 16, 16],
            dt: 1e-3,
            t_end: 1.0,
            epsilon: 0.0,
            seed: 0,
            observer_stride: 10,
            nonlinear: true,
            dealias_fraction: 2.0 / 3.0,
            gain: Gain::Additive,
            noise: NoiseSpec::Modes(Vec::new()),
            stopping: StoppingConfig {
                gamma: 10.0,
                kappa: 10.0,
                lambda: 10.0,
            },
            members: 1,
            base_seed: 0,
            radii: Vec::new(),
            checkpoint_every: 0,
            output_dir: PathBuf::from("out"),
            initial: InitialKind::Zero,
        }
    }
}

pub const KEYS: &[&str] = &[
    "grid.nx",
    "grid.ny",
    "grid.nz",
    "solver.dt",
    "solver.t_end",
    "solver.epsilon",
    "solver.seed",
    "solver.observer_stride",
    "solver.nonlinear",
    "dealias.fraction",
    "noise.gain",
    "noise.modes",
    "noise.lowest",
    "noise.amplitude",
    "stopping.gamma",
    "stopping.kappa",
    "stopping.lambda",
    "ensemble.members",
    "ensemble.base_seed",
    "ensemble.radii",
    "ensemble.checkpoint_every",
    "output.dir",
    "initial.kind",
    "initial.seed",
    "initial.path",
    "initial.norm",
    "initial.decay",
];

struct Entry<'a> {
    value: &'a str,
    line: usize,
    column: usize,
}

fn err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        column,
        message: message.into(),
    }
}

fn parse_num<T: FromStr>(e: &Entry, key: &str) -> Result<T> {
    e.value
        .parse()
        .map_err(|_| err(e.line, e.column, format!("{key}: cannot parse {:?}", e.value)))
}

fn parse_modes(e: &Entry) -> Result<Vec<ModeSpec>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for item in e.value.split(';') {
        let column = e.column + offset;
        offset += item.len() + 1;
        if item.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = item.split(',').map(str::trim).collect();
        if parts.len() != 5 {
            return Err(err(
                e.line,
                column,
                format!("noise.modes entry {item:?} needs n1,n2,m,pol,alpha"),
            ));
        }
        let int = |s: &str| {
            s.parse::<i64>()
                .map_err(|_| err(e.line, column, format!("bad mode number {s:?}")))
        };
        let pol = parts[3]
            .parse::<Polarization>()
            .map_err(|m| err(e.line, column, m))?;
        let alpha = parts[4]
            .parse::<f64>()
            .map_err(|_| err(e.line, column, format!("bad amplitude {:?}", parts[4])))?;
        out.push(ModeSpec {
            n1: int(parts[0])?,
            n2: int(parts[1])?,
            m: int(parts[2])?,
            pol,
            alpha,
        });
    }
    Ok(out)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(&str, Entry)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("");
            if content.trim().is_empty() {
                continue;
            }
            let Some(eq) = content.find('=') else {
                let col = content.len() - content.trim_start().len() + 1;
                return Err(err(line, col, "expected key = value"));
            };
            let key = content[..eq].trim();
            let key_col = content.len() - content.trim_start().len() + 1;
            if !KEYS.contains(&key) {
                return Err(err(line, key_col, format!("unknown key {key:?}")));
            }
            if entries.iter().any(|(k, _)| *k == key) {
                return Err(err(line, key_col, format!("duplicate key {key:?}")));
            }
            let after = &content[eq + 1..];
            let value = after.trim();
            let column = eq + 2 + (after.len() - after.trim_start().len());
            entries.push((key, Entry { value, line, column }));
        }
        let get = |k: &str| entries.iter().find(|(key, _)| *key == k).map(|(_, e)| e);

        let mut c = RunConfig::default();
        for (i, k) in ["grid.nx", "grid.ny", "grid.nz"].iter().enumerate() {
            if let Some(e) = get(k) {
                c.grid[i] = parse_num(e, k)?;
            }
        }
        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(e) = get($key) {
                    $field = parse_num(e, $key)?;
                }
            };
        }
        set!("solver.dt", c.dt);
        set!("solver.t_end", c.t_end);
        set!("solver.epsilon", c.epsilon);
        set!("solver.seed", c.seed);
        set!("solver.observer_stride", c.observer_stride);
        set!("solver.nonlinear", c.nonlinear);
        set!("dealias.fraction", c.dealias_fraction);
        set!("stopping.gamma", c.stopping.gamma);
        set!("stopping.kappa", c.stopping.kappa);
        set!("stopping.lambda", c.stopping.lambda);
        set!("ensemble.members", c.members);
        set!("ensemble.base_seed", c.base_seed);
        set!("ensemble.checkpoint_every", c.checkpoint_every);
        if let Some(e) = get("noise.gain") {
            c.gain = e.value.parse().map_err(|m: String| err(e.line, e.column, m))?;
        }
        match (get("noise.modes"), get("noise.lowest")) {
            (Some(_), Some(e)) => {
                return Err(err(e.line, 1, "noise.modes and noise.lowest are exclusive"));
            }
            (Some(e), None) => c.noise = NoiseSpec::Modes(parse_modes(e)?),
            (None, Some(e)) => {
                let amplitude = match get("noise.amplitude") {
                    Some(a) => parse_num(a, "noise.amplitude")?,
                    None => 1.0,
                };
                c.noise = NoiseSpec::Lowest {
                    count: parse_num(e, "noise.lowest")?,
                    amplitude,
                };
            }
            (None, None) => {
                if let Some(e) = get("noise.amplitude") {
                    return Err(err(e.line, 1, "noise.amplitude needs noise.lowest"));
                }
            }
        }
        if let Some(e) = get("ensemble.radii") {
            c.radii = e
                .value
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| err(e.line, e.column, format!("bad radius {s:?}")))
                })
                .collect::<Result<_>>()?;
        }
        if let Some(e) = get("output.dir") {
            c.output_dir = PathBuf::from(e.value);
        }
        let kind = get("initial.kind");
        c.initial = match kind.map(|e| e.value) {
            None | Some("zero") => InitialKind::Zero,
            Some("random") => {
                let mut seed = 0u64;
                let mut norm = 1.0;
                let mut decay = 2.0;
                set!("initial.seed", seed);
                set!("initial.norm", norm);
                set!("initial.decay", decay);
                InitialKind::Random { seed, norm, decay }
            }
            Some("file") => match get("initial.path") {
                Some(p) => InitialKind::File(PathBuf::from(p.value)),
                None => {
                    let e = kind.unwrap();
                    return Err(err(e.line, e.column, "initial.kind = file needs initial.path"));
                }
            },
            Some(other) => {
                let e = kind.unwrap();
                return Err(err(
                    e.line,
                    e.column,
                    format!("initial.kind {other:?} is not zero, random or file"),
                ));
            }
        };
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Range checks that do not depend on a particular line.
    pub fn validate(&self) -> Result<()> {
        Grid::new(self.grid[0], self.grid[1], self.grid[2])?;
        DealiasRule::new(self.dealias_fraction)?;
        self.solver().validate()?;
        StoppingConfig::new(self.stopping.gamma, self.stopping.kappa, self.stopping.lambda)?;
        if self.members == 0 {
            return Err(Error::InvalidConfig("ensemble.members must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid[0], self.grid[1], self.grid[2])
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            dt: self.dt,
            t_end: self.t_end,
            dealias: DealiasRule {
                fraction: self.dealias_fraction,
            },
            epsilon: self.epsilon,
            observer_stride: self.observer_stride,
            seed: self.seed,
            nonlinear: self.nonlinear,
            record_functionals: true,
            record_snapshots: false,
        }
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        let g = self.grid()?;
        match &self.noise {
            NoiseSpec::Modes(specs) => NoiseModel::from_specs(g, specs, self.gain),
            NoiseSpec::Lowest { count, amplitude } => {
                NoiseModel::default_spectrum(g, *count, *amplitude, self.gain)
            }
        }
    }

    pub fn initial_state(&self) -> Result<SpectralField> {
        let g = self.grid()?;
        match &self.initial {
            InitialKind::Zero => Ok(SpectralField::zeros(g)),
            InitialKind::Random { seed, norm, decay } => {
                let mut v = grid::random_field_in_h(g, *seed, *decay)?;
                let n = v.norm();
                if n > 0.0 {
                    v.scale(norm / n);
                }
                Ok(v)
            }
            InitialKind::File(path) => {
                let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
                let v = grid::read_snapshot(std::io::BufReader::new(f))?;
                if v.grid != g {
                    return Err(Error::GridMismatch(format!(
                        "{} holds a {:?} field, config asks for {:?}",
                        path.display(),
                        v.grid.dims(),
                        g.dims()
                    )));
                }
                grid::check_in_h(&v)?;
                Ok(v)
            }
        }
    }

    pub fn ensemble(&self, checkpoint_path: Option<PathBuf>) -> Result<EnsembleConfig> {
        let mut e = EnsembleConfig::new(self.members, self.base_seed, self.solver(), self.noise_model()?);
        e.stopping = Some(self.stopping);
        e.radii = self.radii.clone();
        e.checkpoint_every = self.checkpoint_every;
        e.checkpoint_path = checkpoint_path;
        Ok(e)
    }

    /// The fully resolved configuration in the input syntax, every key
    /// spelled out.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("grid.nx", self.grid[0].to_string());
        kv("grid.ny", self.grid[1].to_string());
        kv("grid.nz", self.grid[2].to_string());
        kv("solver.dt", self.dt.to_string());
        kv("solver.t_end", self.t_end.to_string());
        kv("solver.epsilon", self.epsilon.to_string());
        kv("solver.seed", self.seed.to_string());
        kv("solver.observer_stride", self.observer_stride.to_string());
        kv("solver.nonlinear", self.nonlinear.to_string());
        kv("dealias.fraction", self.dealias_fraction.to_string());
        kv("noise.gain", self.gain.to_string());
        match &self.noise {
            NoiseSpec::Modes(specs) => {
                let list: Vec<String> = specs
                    .iter()
                    .map(|m| format!("{},{},{},{},{}", m.n1, m.n2, m.m, m.pol, m.alpha))
                    .collect();
                kv("noise.modes", list.join(";"));
            }
            NoiseSpec::Lowest { count, amplitude } => {
                kv("noise.lowest", count.to_string());
                kv("noise.amplitude", amplitude.to_string());
            }
        }
        kv("stopping.gamma", self.stopping.gamma.to_string());
        kv("stopping.kappa", self.stopping.kappa.to_string());
        kv("stopping.lambda", self.stopping.lambda.to_string());
        kv("ensemble.members", self.members.to_string());
        kv("ensemble.base_seed", self.base_seed.to_string());
        let radii: Vec<String> = self.radii.iter().map(|r| r.to_string()).collect();
        kv("ensemble.radii", radii.join(","));
        kv("ensemble.checkpoint_every", self.checkpoint_every.to_string());
        kv("output.dir", self.output_dir.display().to_string());
        match &self.initial {
            InitialKind::Zero => kv("initial.kind", "zero".into()),
            InitialKind::Random { seed, norm, decay } => {
                kv("initial.kind", "random".into());
                kv("initial.seed", seed.to_string());
                kv("initial.norm", norm.to_string());
                kv("initial.decay", decay.to_string());
            }
            InitialKind::File(p) => {
                kv("initial.kind", "file".into());
                kv("initial.path", p.display().to_string());
            }
        }
        s
    }
}
