//! Square complex grids and the unitary 2D transform algebra everything else
//! is built on.

use std::cell::RefCell;
use std::fmt::Write as _;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{FalpError, Result};

pub type C64 = Complex64;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Raw (unnormalised) in-place 2D FFT of a row-major `n`×`n` buffer.
/// `inverse` selects the e^{+j} kernel.
pub(crate) fn fft2_raw(buf: &mut [C64], n: usize, inverse: bool) {
    fft2_raw_transposed(buf, n, inverse);
    transpose_in_place(buf, n);
}

/// As `fft2_raw` but leaves the spectrum transposed: entry (k, l) ends up at
/// index l·n + k. Saves one pass when only a few entries are read.
pub(crate) fn fft2_raw_transposed(buf: &mut [C64], n: usize, inverse: bool) {
    debug_assert_eq!(buf.len(), n * n);
    let fft = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    });
    let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(buf, &mut scratch);
    transpose_in_place(buf, n);
    fft.process_with_scratch(buf, &mut scratch);
}

const TILE: usize = 8;

fn transpose_in_place(buf: &mut [C64], n: usize) {
    for rb in (0..n).step_by(TILE) {
        for cb in (rb..n).step_by(TILE) {
            for r in rb..(rb + TILE).min(n) {
                let c0 = if cb == rb { r + 1 } else { cb };
                for c in c0..(cb + TILE).min(n) {
                    buf.swap(r * n + c, c * n + r);
                }
            }
        }
    }
}

#[inline]
pub(crate) fn wrap(i: i64, n: usize) -> usize {
    i.rem_euclid(n as i64) as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    n: usize,
    data: Vec<C64>,
}

impl ComplexGrid {
    pub fn zeros(n: usize) -> Self {
        assert!(n > 0, "grid side must be positive");
        ComplexGrid { n, data: vec![C64::new(0.0, 0.0); n * n] }
    }

    pub fn from_vec(n: usize, data: Vec<C64>) -> Result<Self> {
        if n == 0 || data.len() != n * n {
            return Err(FalpError::InvalidSize(format!(
                "{} values cannot fill a {n}x{n} grid",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(FalpError::InvalidSize("non-finite grid entry".into()));
        }
        Ok(ComplexGrid { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        assert!(n > 0, "grid side must be positive");
        let mut data = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                data.push(f(r, c));
            }
        }
        ComplexGrid { n, data }
    }

    /// e_r e_cᵀ
    pub fn impulse(n: usize, r: usize, c: usize) -> Self {
        let mut g = Self::zeros(n);
        g.data[(r % n) * n + c % n] = C64::new(1.0, 0.0);
        g
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.n + c]
    }

    /// Entry at indices reduced modulo n.
    pub fn at(&self, r: i64, c: i64) -> C64 {
        self.get(wrap(r, self.n), wrap(c, self.n))
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        ComplexGrid { n: self.n, data: self.data.iter().map(|&z| f(z)).collect() }
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.n != other.n {
            return Err(FalpError::DimensionMismatch(self.n, other.n));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        self.check(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(ComplexGrid { n: self.n, data })
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: C64) -> Self {
        self.map(|z| z * s)
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.map(|z| z * s)
    }

    /// ⟨A, B⟩ = Σ A·conj(B)
    pub fn inner(&self, other: &Self) -> Result<C64> {
        self.check(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b.conj()).sum())
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Coordinate of the largest magnitude; ties go to the first in row-major order.
    pub fn argmax_abs(&self) -> (usize, usize) {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, z) in self.data.iter().enumerate() {
            let v = z.norm_sqr();
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        (best / self.n, best % self.n)
    }

    /// U_N g U_N with the unitary DFT matrix.
    pub fn dft2(&self) -> Self {
        let mut out = self.clone();
        fft2_raw(&mut out.data, self.n, false);
        let s = 1.0 / self.n as f64;
        out.data.iter_mut().for_each(|z| *z *= s);
        out
    }

    /// U*_N g U*_N, the exact inverse of [`dft2`](Self::dft2).
    pub fn idft2(&self) -> Self {
        let mut out = self.clone();
        fft2_raw(&mut out.data, self.n, true);
        let s = 1.0 / self.n as f64;
        out.data.iter_mut().for_each(|z| *z *= s);
        out
    }

    /// out(k, l) = g(k − r, l − c), indices mod n.
    pub fn circ_shift(&self, r: i64, c: i64) -> Self {
        let n = self.n;
        let (r, c) = (wrap(r, n), wrap(c, n));
        let mut data = vec![C64::new(0.0, 0.0); n * n];
        for k in 0..n {
            let src = (k + n - r) % n;
            for l in 0..n {
                data[k * n + l] = self.data[src * n + (l + n - c) % n];
            }
        }
        ComplexGrid { n, data }
    }

    /// 2D circular convolution. dft2(a ⊛ b) = N · dft2(a) ⊙ dft2(b).
    pub fn circ_conv2(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let n = self.n;
        let mut fa = self.data.clone();
        let mut fb = other.data.clone();
        fft2_raw(&mut fa, n, false);
        fft2_raw(&mut fb, n, false);
        fa.iter_mut().zip(&fb).for_each(|(a, b)| *a *= b);
        fft2_raw(&mut fa, n, true);
        let s = 1.0 / (n * n) as f64;
        fa.iter_mut().for_each(|z| *z *= s);
        Ok(ComplexGrid { n, data: fa })
    }

    /// out(k, l) = conj(p(−k, −l)).
    pub fn flip_conj(&self) -> Self {
        let n = self.n;
        ComplexGrid::from_fn(n, |k, l| self.get((n - k) % n, (n - l) % n).conj())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.n);
        for r in 0..self.n {
            for c in 0..self.n {
                let z = self.get(r, c);
                writeln!(s, "{r} {c} {} {}", z.re, z.im).unwrap();
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let n: usize = lines
            .next()
            .ok_or_else(|| FalpError::Parse("empty grid file".into()))?
            .parse()
            .map_err(|e| FalpError::Parse(format!("grid header: {e}")))?;
        if n == 0 {
            return Err(FalpError::Parse("grid side must be positive".into()));
        }
        let mut data = vec![C64::new(0.0, 0.0); n * n];
        let mut seen = vec![false; n * n];
        for line in lines {
            if line.contains('=') {
                // sidecar lines such as "q=1" are handled by the caller
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(FalpError::Parse(format!("bad grid line '{line}'")));
            }
            let p = |s: &str| s.parse::<f64>().map_err(|e| FalpError::Parse(format!("{s}: {e}")));
            let r = p(f[0])? as usize;
            let c = p(f[1])? as usize;
            if r >= n || c >= n {
                return Err(FalpError::Parse(format!("index out of range in '{line}'")));
            }
            data[r * n + c] = C64::new(p(f[2])?, p(f[3])?);
            seen[r * n + c] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(FalpError::Parse("grid file is missing entries".into()));
        }
        ComplexGrid::from_vec(n, data)
    }
}
