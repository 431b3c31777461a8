//! Three-dimensional complex FFTs with zero padding and band pruning.
//!
//! Coefficients follow the convention `u(x) = sum_k c_k exp(i k.x)` with
//! `c_k = N^-1 sum_x u(x) exp(-i k.x)`. Only wavenumbers inside a [`Band`]
//! are ever read or written, so lines of the transform that are known to be
//! zero are skipped.

use std::cell::RefCell;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    let planner = PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()));
    let mut guard = planner.lock().unwrap_or_else(|e| e.into_inner());
    guard.plan_fft(len, direction)
}

/// Retained wavenumbers per axis: `|n| <= kmax[axis]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Band {
    pub kmax: [usize; 3],
}

impl Band {
    /// All representable modes of `dims` except the Nyquist modes.
    pub fn full(dims: [usize; 3]) -> Self {
        Band {
            kmax: [dims[0] / 2 - 1, dims[1] / 2 - 1, dims[2] / 2 - 1],
        }
    }

    pub fn union(self, other: Band) -> Band {
        Band {
            kmax: [0, 1, 2].map(|a| self.kmax[a].max(other.kmax[a])),
        }
    }

    pub fn contains(&self, n: [i64; 3]) -> bool {
        (0..3).all(|a| n[a].unsigned_abs() as usize <= self.kmax[a])
    }
}

/// Signed wavenumber stored at FFT index `i` of an axis of length `len`.
#[inline]
pub fn wavenumber(i: usize, len: usize) -> i64 {
    if i < len / 2 {
        i as i64
    } else {
        i as i64 - len as i64
    }
}

/// FFT index of signed wavenumber `n` on an axis of length `len`.
#[inline]
pub fn index_of(n: i64, len: usize) -> usize {
    n.rem_euclid(len as i64) as usize
}

fn kept_indices(kmax: usize, len: usize) -> Vec<usize> {
    let k = kmax as i64;
    (-k..=k).map(|n| index_of(n, len)).collect()
}

thread_local! {
    static BUFFERS: RefCell<(Vec<Complex64>, Vec<Complex64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

/// Transforms the lines along `axis` of a row-major 3D buffer that start
/// at the listed pairs of other-axis indices.
fn transform_axis(
    data: &mut [Complex64],
    dims: [usize; 3],
    axis: usize,
    direction: FftDirection,
    lines: &[(usize, usize)],
) {
    let len = dims[axis];
    let fft = plan(len, direction);
    BUFFERS.with(|cell| {
        let (buf, scratch) = &mut *cell.borrow_mut();
        let need = fft.get_inplace_scratch_len();
        if scratch.len() < need {
            scratch.resize(need, Complex64::default());
        }
        if axis == 2 {
            for &(a, b) in lines {
                let start = (a * dims[1] + b) * dims[2];
                fft.process_with_scratch(&mut data[start..start + len], &mut scratch[..need]);
            }
            return;
        }
        let stride = if axis == 0 { dims[1] * dims[2] } else { dims[2] };
        let offset = |a: usize, b: usize| {
            if axis == 0 {
                a * dims[2] + b
            } else {
                a * dims[1] * dims[2] + b
            }
        };
        const BATCH: usize = 64;
        if buf.len() < BATCH * len {
            buf.resize(BATCH * len, Complex64::default());
        }
        for chunk in lines.chunks(BATCH) {
            for (line, &(a, b)) in buf.chunks_exact_mut(len).zip(chunk) {
                let src = data[offset(a, b)..].iter().step_by(stride);
                for (d, s) in line.iter_mut().zip(src) {
                    *d = *s;
                }
            }
            let used = chunk.len() * len;
            fft.process_with_scratch(&mut buf[..used], &mut scratch[..need]);
            for (line, &(a, b)) in buf.chunks_exact(len).zip(chunk) {
                let dst = data[offset(a, b)..].iter_mut().step_by(stride);
                for (d, s) in dst.zip(line) {
                    *d = *s;
                }
            }
        }
    })
}

/// Evaluates band-limited coefficients (laid out on `spec` dims) on a
/// uniform physical grid of `phys` dims, `phys >= spec` per axis.
pub fn to_physical(
    coeffs: &[Complex64],
    spec: [usize; 3],
    phys: [usize; 3],
    band: Band,
) -> Vec<Complex64> {
    debug_assert_eq!(coeffs.len(), spec[0] * spec[1] * spec[2]);
    let mut data = vec![Complex64::default(); phys[0] * phys[1] * phys[2]];
    let ks: Vec<Vec<(usize, usize)>> = (0..3)
        .map(|a| {
            let k = band.kmax[a] as i64;
            (-k..=k)
                .map(|n| (index_of(n, spec[a]), index_of(n, phys[a])))
                .collect()
        })
        .collect();
    for &(s0, p0) in &ks[0] {
        for &(s1, p1) in &ks[1] {
            let sbase = (s0 * spec[1] + s1) * spec[2];
            let pbase = (p0 * phys[1] + p1) * phys[2];
            for &(s2, p2) in &ks[2] {
                data[pbase + p2] = coeffs[sbase + s2];
            }
        }
    }
    let k0 = kept_indices(band.kmax[0], phys[0]);
    let k1 = kept_indices(band.kmax[1], phys[1]);

    let lines: Vec<(usize, usize)> = k0
        .iter()
        .flat_map(|&a| k1.iter().map(move |&b| (a, b)))
        .collect();
    transform_axis(&mut data, phys, 2, FftDirection::Inverse, &lines);
    let lines: Vec<(usize, usize)> = k0
        .iter()
        .flat_map(|&a| (0..phys[2]).map(move |b| (a, b)))
        .collect();
    transform_axis(&mut data, phys, 1, FftDirection::Inverse, &lines);
    let lines: Vec<(usize, usize)> = (0..phys[1])
        .flat_map(|a| (0..phys[2]).map(move |b| (a, b)))
        .collect();
    transform_axis(&mut data, phys, 0, FftDirection::Inverse, &lines);
    data
}

/// Inverse of [`to_physical`]: forward transform of physical values on
/// `phys` dims, keeping only the modes inside `band` and laying them out on
/// `spec` dims. Modes outside the band are zero in the output.
pub fn to_spectral(
    mut data: Vec<Complex64>,
    phys: [usize; 3],
    spec: [usize; 3],
    band: Band,
) -> Vec<Complex64> {
    debug_assert_eq!(data.len(), phys[0] * phys[1] * phys[2]);
    let k0 = kept_indices(band.kmax[0], phys[0]);
    let k1 = kept_indices(band.kmax[1], phys[1]);

    let lines: Vec<(usize, usize)> = (0..phys[1])
        .flat_map(|a| (0..phys[2]).map(move |b| (a, b)))
        .collect();
    transform_axis(&mut data, phys, 0, FftDirection::Forward, &lines);
    let lines: Vec<(usize, usize)> = k0
        .iter()
        .flat_map(|&a| (0..phys[2]).map(move |b| (a, b)))
        .collect();
    transform_axis(&mut data, phys, 1, FftDirection::Forward, &lines);
    let lines: Vec<(usize, usize)> = k0
        .iter()
        .flat_map(|&a| k1.iter().map(move |&b| (a, b)))
        .collect();
    transform_axis(&mut data, phys, 2, FftDirection::Forward, &lines);

    let scale = 1.0 / (phys[0] * phys[1] * phys[2]) as f64;
    let mut out = vec![Complex64::default(); spec[0] * spec[1] * spec[2]];
    for n0 in -(band.kmax[0] as i64)..=band.kmax[0] as i64 {
        let (s0, p0) = (index_of(n0, spec[0]), index_of(n0, phys[0]));
        for n1 in -(band.kmax[1] as i64)..=band.kmax[1] as i64 {
            let (s1, p1) = (index_of(n1, spec[1]), index_of(n1, phys[1]));
            let sbase = (s0 * spec[1] + s1) * spec[2];
            let pbase = (p0 * phys[1] + p1) * phys[2];
            for n2 in -(band.kmax[2] as i64)..=band.kmax[2] as i64 {
                out[sbase + index_of(n2, spec[2])] = data[pbase + index_of(n2, phys[2])] * scale;
            }
        }
    }
    out
}

/// Packs two real fields' Hermitian spectra into one complex spectrum so a
/// single inverse transform yields `a` in the real part and `b` in the
/// imaginary part.
pub fn pack_pair(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let i = Complex64::new(0.0, 1.0);
    a.iter().zip(b).map(|(&x, &y)| x + i * y).collect()
}

/// Splits the forward transform of `a + i b` (both real) into the spectra of
/// `a` and `b`.
pub fn unpack_pair(c: &[Complex64], spec: [usize; 3], band: Band) -> (Vec<Complex64>, Vec<Complex64>) {
    let mut a = vec![Complex64::default(); c.len()];
    let mut b = vec![Complex64::default(); c.len()];
    let k = band.kmax.map(|v| v as i64);
    for n0 in -k[0]..=k[0] {
        for n1 in -k[1]..=k[1] {
            for n2 in -k[2]..=k[2] {
                let idx = (index_of(n0, spec[0]) * spec[1] + index_of(n1, spec[1])) * spec[2]
                    + index_of(n2, spec[2]);
                let neg = (index_of(-n0, spec[0]) * spec[1] + index_of(-n1, spec[1])) * spec[2]
                    + index_of(-n2, spec[2]);
                let (p, q) = (c[idx], c[neg].conj());
                a[idx] = (p + q) * 0.5;
                b[idx] = Complex64::new(0.0, -0.5) * (p - q);
            }
        }
    }
    (a, b)
}
