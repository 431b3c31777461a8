//! Binary ensemble checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "PECK" | version u32 | config sha256 [32] | members u64
//! per member:
//!   step u64 | rng name (u32 len + bytes) | key 4 x u64 | stream u64 | word_pos u128
//!   state (field snapshot, u64 len + bytes) | grad_int f64 | hs_int f64 | martingale f64
//!   times (u64 n + n f64) | samples (u64 n + 7n f64) | functionals (u64 n + 19n f64)
//!   snapshots (u64 n + n length-prefixed field snapshots)
//!   stopping flag u8 [gamma kappa lambda f64 | path (u64 n + 5n f64)]
//! sha256 of everything above [32]
//! ```
//!
//! The stopping record is rebuilt by replaying its path, which reproduces
//! the running sums bit for bit.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::functionals::StateFunctionals;
use crate::grid::{self, SpectralField};
use crate::integrator::{RunState, Sample, Trajectory};
use crate::rng::{RngState, StreamRng, RNG_ALGORITHM};
use crate::stopping::{PathPoint, StoppingConfig, StoppingRecord};

const MAGIC: &[u8; 4] = b"PECK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub members: Vec<RunState>,
}

/// Digest of everything that determines an ensemble run.
pub fn config_hash(cfg: &EnsembleConfig, v0: &SpectralField) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(format!(
        "members={} base_seed={} solver={:?} stopping={:?} radii={:?} gain={:?}",
        cfg.members, cfg.base_seed, cfg.solver, cfg.stopping, cfg.radii, cfg.noise.gain
    ));
    for m in &cfg.noise.modes {
        h.update(m.amplitude.to_le_bytes());
        for c in &m.shape.coeffs {
            h.update(c.re.to_le_bytes());
            h.update(c.im.to_le_bytes());
        }
    }
    let mut snap = Vec::new();
    grid::write_snapshot(v0, &mut snap).expect("writing to memory");
    h.update(&snap);
    h.finalize().into()
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u64(n as u64);
    }
    fn field(&mut self, v: &SpectralField) {
        let mut buf = Vec::new();
        grid::write_snapshot(v, &mut buf).expect("writing to memory");
        self.len(buf.len());
        self.0.extend_from_slice(&buf);
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::CorruptCheckpoint("unexpected end of file".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    /// A count whose items need at least `item_bytes` each.
    fn len(&mut self, item_bytes: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(item_bytes) > self.data.len() - self.pos {
            return Err(Error::CorruptCheckpoint(format!("implausible length {n}")));
        }
        Ok(n)
    }
    fn field(&mut self) -> Result<SpectralField> {
        let n = self.len(1)?;
        grid::read_snapshot(self.take(n)?).map_err(|e| match e {
            Error::VersionMismatch { .. } => e,
            other => Error::CorruptCheckpoint(other.to_string()),
        })
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.0.extend_from_slice(&ck.config_hash);
    w.len(ck.members.len());
    for m in &ck.members {
        w.u64(m.step as u64);
        w.u32(RNG_ALGORITHM.len() as u32);
        w.0.extend_from_slice(RNG_ALGORITHM.as_bytes());
        let st = m.rng.state();
        for k in st.key {
            w.u64(k);
        }
        w.u64(st.stream);
        w.0.extend_from_slice(&st.word_pos.to_le_bytes());
        w.field(&m.v);
        w.f64(m.grad_int);
        w.f64(m.hs_int);
        w.f64(m.martingale);
        let tr = &m.trajectory;
        w.len(tr.times.len());
        tr.times.iter().for_each(|&t| w.f64(t));
        w.len(tr.samples.len());
        for s in &tr.samples {
            for x in [s.t, s.e2, s.ebar2, s.lbar2, s.grad_int, s.hs_int, s.martingale] {
                w.f64(x);
            }
        }
        w.len(tr.functionals.len());
        for f in &tr.functionals {
            f.to_array().iter().for_each(|&x| w.f64(x));
        }
        w.len(tr.snapshots.len());
        tr.snapshots.iter().for_each(|s| w.field(s));
        match &tr.stopping {
            None => w.u8(0),
            Some(r) => {
                w.u8(1);
                for x in [r.config.gamma, r.config.kappa, r.config.lambda] {
                    w.f64(x);
                }
                w.len(r.path.len());
                for p in &r.path {
                    for x in [p.t, p.l6_4, p.sigma_rate, p.tau_rate, p.h2_sq] {
                        w.f64(x);
                    }
                }
            }
        }
    }
    let digest: [u8; 32] = Sha256::digest(&w.0).into();
    w.0.extend_from_slice(&digest);
    w.0
}

pub fn decode(data: &[u8]) -> Result<Checkpoint> {
    if data.len() < MAGIC.len() + 4 + 32 {
        return Err(Error::CorruptCheckpoint("file too short".into()));
    }
    if &data[..4] != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(data[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, digest) = data.split_at(data.len() - 32);
    let actual: [u8; 32] = Sha256::digest(body).into();
    if actual != digest {
        return Err(Error::CorruptCheckpoint("checksum mismatch".into()));
    }
    let mut r = Reader { data: body, pos: 8 };
    let config_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    let n = r.len(8)?;
    let mut members = Vec::with_capacity(n);
    for _ in 0..n {
        let step = r.u64()? as usize;
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::CorruptCheckpoint("rng name is not utf-8".into()))?;
        let mut key = [0u64; 4];
        for k in &mut key {
            *k = r.u64()?;
        }
        let stream = r.u64()?;
        let word_pos = r.u128()?;
        let rng = StreamRng::restore(&name, &RngState { key, stream, word_pos })?;
        let v = r.field()?;
        let (grad_int, hs_int, martingale) = (r.f64()?, r.f64()?, r.f64()?);
        let times = (0..r.len(8)?).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let samples = (0..r.len(56)?)
            .map(|_| {
                Ok(Sample {
                    t: r.f64()?,
                    e2: r.f64()?,
                    ebar2: r.f64()?,
                    lbar2: r.f64()?,
                    grad_int: r.f64()?,
                    hs_int: r.f64()?,
                    martingale: r.f64()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let functionals = (0..r.len(8 * StateFunctionals::FIELDS)?)
            .map(|_| {
                let mut a = [0.0; StateFunctionals::FIELDS];
                for x in &mut a {
                    *x = r.f64()?;
                }
                Ok(StateFunctionals::from_array(a))
            })
            .collect::<Result<Vec<_>>>()?;
        let snapshots = (0..r.len(8)?).map(|_| r.field()).collect::<Result<Vec<_>>>()?;
        let stopping = match r.u8()? {
            0 => None,
            1 => {
                let config = StoppingConfig::new(r.f64()?, r.f64()?, r.f64()?)
                    .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
                let path = (0..r.len(40)?)
                    .map(|_| {
                        Ok(PathPoint {
                            t: r.f64()?,
                            l6_4: r.f64()?,
                            sigma_rate: r.f64()?,
                            tau_rate: r.f64()?,
                            h2_sq: r.f64()?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(
                    StoppingRecord::replay(config, &path)
                        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?,
                )
            }
            other => return Err(Error::CorruptCheckpoint(format!("bad stopping flag {other}"))),
        };
        members.push(RunState {
            step,
            trajectory: Trajectory {
                times,
                samples,
                functionals,
                snapshots,
                final_state: v.clone(),
                stopping,
            },
            v,
            rng,
            grad_int,
            hs_int,
            martingale,
        });
    }
    if r.pos != body.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    Ok(Checkpoint { config_hash, members })
}

/// Writes through a temporary file so an interrupted save never leaves a
/// half-written checkpoint behind.
pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(ck)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{advance_members, initial_states, resume_ensemble, run_ensemble};
    use crate::grid::{random_field_in_h, Grid};
    use crate::integrator::SolverConfig;
    use crate::noise::{Gain, NoiseModel};

    fn setup(dir: &Path) -> (EnsembleConfig, SpectralField) {
        let g = Grid::cube(8).unwrap();
        let mut solver = SolverConfig::new(1e-3, 0.02);
        solver.observer_stride = 3;
        solver.record_functionals = true;
        let noise = NoiseModel::default_spectrum(g, 6, 0.5, Gain::Bounded).unwrap();
        let mut cfg = EnsembleConfig::new(3, 7, solver, noise);
        cfg.stopping = Some(StoppingConfig::new(2.0, 0.5, 0.5).unwrap());
        cfg.radii = vec![0.5, 1.0];
        cfg.checkpoint_every = 8;
        cfg.checkpoint_path = Some(dir.join("run.ck"));
        let mut v0 = random_field_in_h(g, 1, 2.0).unwrap();
        v0.scale(0.4 / v0.norm());
        (cfg, v0)
    }

    #[test]
    fn round_trip_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, v0) = setup(dir.path());
        let full = run_ensemble(&cfg, &v0).unwrap();

        // the file left behind is the final epoch
        let last = load(cfg.checkpoint_path.as_ref().unwrap()).unwrap();
        assert!(last.members.iter().all(|m| m.step == 20));

        let mut states = initial_states(&cfg, &v0).unwrap();
        advance_members(&cfg, &v0, &mut states, 8).unwrap();
        let ck = Checkpoint {
            config_hash: config_hash(&cfg, &v0),
            members: states,
        };
        let bytes = encode(&ck);
        let back = decode(&bytes).unwrap();
        assert_eq!(encode(&back), bytes);
        assert_eq!(back.members[0].step, 8);
        let resumed = resume_ensemble(&cfg, &v0, back).unwrap();
        assert_eq!(resumed, full);

        let mut other = cfg.clone();
        other.base_seed += 1;
        assert!(resume_ensemble(&other, &v0, decode(&bytes).unwrap()).is_err());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, v0) = setup(dir.path());
        run_ensemble(&cfg, &v0).unwrap();
        let bytes = fs::read(cfg.checkpoint_path.unwrap()).unwrap();
        assert!(matches!(
            decode(&bytes[..bytes.len() - 10]),
            Err(Error::CorruptCheckpoint(_))
        ));
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(matches!(decode(&flipped), Err(Error::CorruptCheckpoint(_))));
        let mut old = bytes.clone();
        old[4] = 0;
        assert!(matches!(decode(&old), Err(Error::VersionMismatch { found: 0, .. })));
        assert!(matches!(decode(b"PE"), Err(Error::CorruptCheckpoint(_))));
    }
}
