//! Subsampling sets and channel sounding with circulant shifts of a base matrix.

use std::fmt::Write as _;

use rand::Rng;

use crate::channel::{complex_normal, WidebandChannel};
use crate::error::{FalpError, Result};
use crate::grid::{ComplexGrid, C64};
use crate::perfect_arrays::BaseMatrix;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsamplingSet {
    n: usize,
    coords: Vec<(usize, usize)>,
}

impl SubsamplingSet {
    pub fn new(n: usize, coords: Vec<(usize, usize)>) -> Result<Self> {
        if coords.is_empty() || coords.len() > n * n {
            return Err(FalpError::MeasurementCount { m: coords.len(), max: n * n });
        }
        let mut seen = vec![false; n * n];
        for &(r, c) in &coords {
            if r >= n || c >= n {
                return Err(FalpError::InvalidSize(format!("coordinate ({r}, {c}) outside {n}x{n}")));
            }
            if std::mem::replace(&mut seen[r * n + c], true) {
                return Err(FalpError::InvalidSize(format!("duplicate coordinate ({r}, {c})")));
            }
        }
        Ok(SubsamplingSet { n, coords })
    }

    /// Every coordinate, row-major.
    pub fn full(n: usize) -> Self {
        SubsamplingSet { n, coords: (0..n * n).map(|i| (i / n, i % n)).collect() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.coords.len()
    }

    pub fn rho(&self) -> f64 {
        self.m() as f64 / (self.n * self.n) as f64
    }

    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    pub fn gather(&self, g: &ComplexGrid) -> Vec<C64> {
        self.coords.iter().map(|&(r, c)| g.get(r, c)).collect()
    }

    /// Zero grid with `v[m]` placed at coordinate m.
    pub fn scatter(&self, v: &[C64]) -> ComplexGrid {
        let mut g = ComplexGrid::zeros(self.n);
        let n = self.n;
        let d = g.data_mut();
        for (&(r, c), &x) in self.coords.iter().zip(v) {
            d[r * n + c] = x;
        }
        g
    }

    /// Binary indicator of the sampled coordinates.
    pub fn indicator(&self) -> ComplexGrid {
        self.scatter(&vec![C64::new(1.0, 0.0); self.m()])
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (m, (r, c)) in self.coords.iter().enumerate() {
            writeln!(s, "{m} {r} {c}").unwrap();
        }
        s
    }

    pub fn from_text(n: usize, text: &str) -> Result<Self> {
        let mut coords = Vec::new();
        for (k, line) in text.lines().map(str::trim).filter(|l| !l.is_empty()).enumerate() {
            let f: Vec<usize> = line
                .split_whitespace()
                .map(|s| s.parse().map_err(|e| FalpError::Parse(format!("{s}: {e}"))))
                .collect::<Result<_>>()?;
            if f.len() != 3 || f[0] != k {
                return Err(FalpError::Parse(format!("bad subsampling line '{line}'")));
            }
            coords.push((f[1], f[2]));
        }
        SubsamplingSet::new(n, coords)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementVector {
    pub values: Vec<C64>,
    pub sigma: f64,
    pub ns: usize,
}

/// M × L measurements after Golay correlation, row-major in m.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementBlock {
    pub m: usize,
    pub l: usize,
    pub values: Vec<C64>,
    pub sigma: f64,
    pub ns: usize,
}

impl MeasurementBlock {
    pub fn get(&self, m: usize, l: usize) -> C64 {
        self.values[m * self.l + l]
    }

    pub fn column(&self, l: usize) -> Vec<C64> {
        (0..self.m).map(|m| self.get(m, l)).collect()
    }

    /// Dump: header "N M L sigma ns seed", then "m l re im" lines.
    pub fn to_text(&self, n: usize, seed: u64) -> String {
        let mut s = format!("{n} {} {} {} {} {seed}\n", self.m, self.l, self.sigma, self.ns);
        for m in 0..self.m {
            for l in 0..self.l {
                let z = self.get(m, l);
                writeln!(s, "{m} {l} {} {}", z.re, z.im).unwrap();
            }
        }
        s
    }

    /// Inverse of [`to_text`](Self::to_text); returns (block, N, seed).
    pub fn from_text(text: &str) -> Result<(Self, usize, u64)> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let head: Vec<&str> = lines.next().ok_or_else(|| FalpError::Parse("empty dump".into()))?.split_whitespace().collect();
        if head.len() != 6 {
            return Err(FalpError::Parse("dump header needs 'N M L sigma ns seed'".into()));
        }
        let pu = |s: &str| s.parse::<usize>().map_err(|e| FalpError::Parse(format!("{s}: {e}")));
        let pf = |s: &str| s.parse::<f64>().map_err(|e| FalpError::Parse(format!("{s}: {e}")));
        let (n, m, l) = (pu(head[0])?, pu(head[1])?, pu(head[2])?);
        let sigma = pf(head[3])?;
        let ns = pu(head[4])?;
        let seed = head[5].parse::<u64>().map_err(|e| FalpError::Parse(format!("seed: {e}")))?;
        let mut values = vec![C64::new(0.0, 0.0); m * l];
        let mut count = 0;
        for line in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(FalpError::Parse(format!("bad measurement line '{line}'")));
            }
            let (mi, li) = (pu(f[0])?, pu(f[1])?);
            if mi >= m || li >= l {
                return Err(FalpError::Parse(format!("index out of range in '{line}'")));
            }
            values[mi * l + li] = C64::new(pf(f[2])?, pf(f[3])?);
            count += 1;
        }
        if count != m * l {
            return Err(FalpError::Parse(format!("expected {} measurements, found {count}", m * l)));
        }
        Ok((MeasurementBlock { m, l, values, sigma, ns }, n, seed))
    }
}

/// M distinct coordinates drawn uniformly without replacement.
pub fn sample_omega<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<SubsamplingSet> {
    if m == 0 || m > n * n {
        return Err(FalpError::MeasurementCount { m, max: n * n });
    }
    let coords = rand::seq::index::sample(rng, n * n, m).into_iter().map(|i| (i / n, i % n)).collect();
    Ok(SubsamplingSet { n, coords })
}

fn check_dims(h: &ComplexGrid, p: &BaseMatrix, omega: &SubsamplingSet) -> Result<()> {
    if h.n() != p.n() {
        return Err(FalpError::DimensionMismatch(h.n(), p.n()));
    }
    if h.n() != omega.n() {
        return Err(FalpError::DimensionMismatch(h.n(), omega.n()));
    }
    Ok(())
}

fn add_noise<R: Rng + ?Sized>(values: &mut [C64], variance: f64, rng: &mut R) {
    if variance > 0.0 {
        for v in values.iter_mut() {
            *v += complex_normal(rng, variance);
        }
    }
}

/// y[m] = ⟨H, shift(P, r[m], c[m])⟩ + v[m], one inner product per measurement.
pub fn acquire<R: Rng + ?Sized>(
    h: &ComplexGrid,
    p: &BaseMatrix,
    omega: &SubsamplingSet,
    sigma: f64,
    rng: &mut R,
) -> Result<MeasurementVector> {
    check_dims(h, p, omega)?;
    let mut values: Vec<C64> = omega
        .coords()
        .iter()
        .map(|&(r, c)| h.inner(&p.grid().circ_shift(r as i64, c as i64)).expect("checked"))
        .collect();
    add_noise(&mut values, sigma * sigma, rng);
    Ok(MeasurementVector { values, sigma, ns: 1 })
}

/// Same measurements computed as the subsampled convolution H ⊛ P_FC.
pub fn acquire_conv<R: Rng + ?Sized>(
    h: &ComplexGrid,
    p: &BaseMatrix,
    omega: &SubsamplingSet,
    sigma: f64,
    rng: &mut R,
) -> Result<MeasurementVector> {
    check_dims(h, p, omega)?;
    let mut values = omega.gather(&h.circ_conv2(&p.grid().flip_conj())?);
    add_noise(&mut values, sigma * sigma, rng);
    Ok(MeasurementVector { values, sigma, ns: 1 })
}

/// Complementary ±1 pair of length ns (a power of two): a' = a|b, b' = a|−b.
pub fn golay_pair(ns: usize) -> Result<(Vec<i8>, Vec<i8>)> {
    if ns == 0 || !ns.is_power_of_two() {
        return Err(FalpError::GolayLength(ns));
    }
    let mut a = vec![1i8];
    let mut b = vec![1i8];
    while a.len() < ns {
        let na: Vec<i8> = a.iter().chain(&b).copied().collect();
        let nb: Vec<i8> = a.iter().copied().chain(b.iter().map(|x| -x)).collect();
        a = na;
        b = nb;
    }
    Ok((a, b))
}

/// Aperiodic autocorrelation at lags −(len−1)..=(len−1).
pub fn aperiodic_autocorr(x: &[i8]) -> Vec<i64> {
    let n = x.len() as i64;
    (-(n - 1)..n)
        .map(|k| {
            (0..n)
                .filter(|&i| (0..n).contains(&(i + k)))
                .map(|i| x[i as usize] as i64 * x[(i + k) as usize] as i64)
                .sum()
        })
        .collect()
}

/// Post-correlator wideband model: Y(m, ℓ) = ⟨H[ℓ], shift(P, Ω_m)⟩ + 𝒩_c(0, σ²/(2·ns)).
pub fn acquire_wideband<R: Rng + ?Sized>(
    ch: &WidebandChannel,
    p: &BaseMatrix,
    omega: &SubsamplingSet,
    sigma: f64,
    ns: usize,
    rng: &mut R,
) -> Result<MeasurementBlock> {
    if ns == 0 {
        return Err(FalpError::GolayLength(ns));
    }
    let (m, l) = (omega.m(), ch.len());
    let pfc = p.grid().flip_conj();
    let mut values = vec![C64::new(0.0, 0.0); m * l];
    for (li, tap) in ch.taps.iter().enumerate() {
        check_dims(tap, p, omega)?;
        if tap.frob_norm() == 0.0 {
            continue;
        }
        let col = omega.gather(&tap.circ_conv2(&pfc)?);
        for (mi, v) in col.into_iter().enumerate() {
            values[mi * l + li] = v;
        }
    }
    add_noise(&mut values, sigma * sigma / (2.0 * ns as f64), rng);
    Ok(MeasurementBlock { m, l, values, sigma, ns })
}

/// Full waveform path for one scalar L-tap channel: send a, then b (with
/// guard intervals), add 𝒩_c(0, σ²) per sample, correlate each half with its
/// sequence and average. Returns one estimate per tap.
pub fn golay_waveform_estimate<R: Rng + ?Sized>(taps: &[C64], ns: usize, sigma: f64, rng: &mut R) -> Result<Vec<C64>> {
    let (a, b) = golay_pair(ns)?;
    let l = taps.len();
    let receive = |seq: &[i8], rng: &mut R| -> Vec<C64> {
        let mut rx = vec![C64::new(0.0, 0.0); ns + l - 1];
        for (i, &s) in seq.iter().enumerate() {
            for (t, &h) in taps.iter().enumerate() {
                rx[i + t] += h * s as f64;
            }
        }
        add_noise(&mut rx, sigma * sigma, rng);
        rx
    };
    let rx_a = receive(&a, rng);
    let rx_b = receive(&b, rng);
    let scale = 1.0 / (2 * ns) as f64;
    Ok((0..l)
        .map(|t| {
            let ca: C64 = a.iter().enumerate().map(|(i, &s)| rx_a[i + t] * s as f64).sum();
            let cb: C64 = b.iter().enumerate().map(|(i, &s)| rx_b[i + t] * s as f64).sum();
            (ca + cb) * scale
        })
        .collect())
}

/// Column with the largest ℓ2 norm (first on ties).
pub fn select_tap(y: &MeasurementBlock) -> usize {
    let mut best = 0;
    let mut best_e = f64::NEG_INFINITY;
    for l in 0..y.l {
        let e: f64 = (0..y.m).map(|m| y.get(m, l).norm_sqr()).sum();
        if e > best_e {
            best_e = e;
            best = l;
        }
    }
    best
}
