//! Sparse recovery from subsampled measurements: FFT-backed sensing operators,
//! orthogonal matching pursuit, demasking and the zero-filling estimator.

use std::f64::consts::PI;

use crate::error::{FalpError, Result};
use crate::grid::{fft2_raw, fft2_raw_transposed, ComplexGrid, C64};
use crate::perfect_arrays::{mask_extremes, BaseMatrix};
use crate::sounding::{MeasurementVector, SubsamplingSet};

const UNIMODULAR_TOL: f64 = 1e-6;
const GRAM_COND_LIMIT: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoveryConfig {
    pub max_iters: usize,
    pub stop_threshold: f64,
    pub oversample: usize,
}

impl RecoveryConfig {
    /// Threshold σ√(M / 2Ns) and at most 50 atoms.
    pub fn for_noise(sigma: f64, m: usize, ns: usize) -> Self {
        RecoveryConfig { max_iters: 50, stop_threshold: sigma * (m as f64 / (2.0 * ns as f64)).sqrt(), oversample: 1 }
    }
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig { max_iters: 50, stop_threshold: 0.0, oversample: 1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseEstimate {
    pub support: Vec<(usize, usize)>,
    pub coefficients: Vec<C64>,
    pub grid: ComplexGrid,
    /// Residual ℓ2 norm before the first and after every iteration.
    pub residuals: Vec<f64>,
}

impl SparseEstimate {
    pub fn empty(n: usize) -> Self {
        SparseEstimate { support: vec![], coefficients: vec![], grid: ComplexGrid::zeros(n), residuals: vec![] }
    }

    /// "k" then k lines "row col re im".
    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.support.len());
        for (&(r, c), z) in self.support.iter().zip(&self.coefficients) {
            s.push_str(&format!("{r} {c} {} {}\n", z.re, z.im));
        }
        s
    }

    pub fn from_text(n: usize, text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let k: usize = lines
            .next()
            .ok_or_else(|| FalpError::Parse("empty estimate".into()))?
            .parse()
            .map_err(|e| FalpError::Parse(format!("k: {e}")))?;
        let mut est = SparseEstimate::empty(n);
        for line in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(FalpError::Parse(format!("bad estimate line '{line}'")));
            }
            let p = |s: &str| s.parse::<f64>().map_err(|e| FalpError::Parse(format!("{s}: {e}")));
            let (r, c) = (p(f[0])? as usize, p(f[1])? as usize);
            if r >= n || c >= n {
                return Err(FalpError::Parse(format!("index out of range in '{line}'")));
            }
            let z = C64::new(p(f[2])?, p(f[3])?);
            est.support.push((r, c));
            est.coefficients.push(z);
            est.grid.data_mut()[r * n + c] = z;
        }
        if est.support.len() != k {
            return Err(FalpError::Parse(format!("expected {k} entries, found {}", est.support.len())));
        }
        Ok(est)
    }
}

/// Linear map from a dim×dim coefficient grid to M measurements.
pub trait SensingOperator: Sync {
    fn dim(&self) -> usize;
    fn m(&self) -> usize;
    fn apply(&self, w: &ComplexGrid) -> Vec<C64>;
    fn adjoint(&self, v: &[C64]) -> ComplexGrid;
    fn atom(&self, r: usize, c: usize) -> Vec<C64> {
        self.apply(&ComplexGrid::impulse(self.dim(), r, c))
    }
}

/// crop(F_{rN} w)/N: beamspace synthesis on an r-times finer angle grid.
fn synth(w: &ComplexGrid, n: usize) -> ComplexGrid {
    let big = w.n();
    if big == n {
        return w.dft2();
    }
    let mut buf = w.as_slice().to_vec();
    fft2_raw(&mut buf, big, false);
    let s = 1.0 / n as f64;
    ComplexGrid::from_fn(n, |r, c| buf[r * big + c] * s)
}

fn synth_adjoint(h: &ComplexGrid, big: usize) -> ComplexGrid {
    let n = h.n();
    if big == n {
        return h.idft2();
    }
    let mut buf = vec![C64::new(0.0, 0.0); big * big];
    for r in 0..n {
        for c in 0..n {
            buf[r * big + c] = h.get(r, c);
        }
    }
    fft2_raw(&mut buf, big, true);
    let s = 1.0 / n as f64;
    buf.iter_mut().for_each(|z| *z *= s);
    ComplexGrid::from_vec(big, buf).expect("finite")
}

/// w ↦ 𝒫_Ω(U W U), optionally with an oversampled dictionary.
#[derive(Clone, Debug)]
pub struct PartialFourier {
    omega: SubsamplingSet,
    oversample: usize,
}

impl PartialFourier {
    pub fn new(omega: SubsamplingSet) -> Self {
        PartialFourier { omega, oversample: 1 }
    }

    pub fn oversampled(omega: SubsamplingSet, oversample: usize) -> Self {
        assert!(oversample >= 1);
        PartialFourier { omega, oversample }
    }
}

impl SensingOperator for PartialFourier {
    fn dim(&self) -> usize {
        self.omega.n() * self.oversample
    }

    fn m(&self) -> usize {
        self.omega.m()
    }

    fn apply(&self, w: &ComplexGrid) -> Vec<C64> {
        let n = self.omega.n();
        let big = w.n();
        let mut buf = w.as_slice().to_vec();
        fft2_raw_transposed(&mut buf, big, false);
        let s = 1.0 / n as f64;
        self.omega.coords().iter().map(|&(k, l)| buf[l * big + k] * s).collect()
    }

    fn adjoint(&self, v: &[C64]) -> ComplexGrid {
        synth_adjoint(&self.omega.scatter(v), self.dim())
    }

    fn atom(&self, r: usize, c: usize) -> Vec<C64> {
        let n = self.omega.n() as f64;
        let big = self.dim() as f64;
        self.omega
            .coords()
            .iter()
            .map(|&(k, l)| C64::from_polar(1.0 / n, -2.0 * PI * ((k * r) as f64 + (l * c) as f64) / big))
            .collect()
    }
}

/// Beamspace X ↦ 𝒫_Ω(synth(X) ⊛ P_FC): the measurement map of a general base.
#[derive(Clone, Debug)]
pub struct ConvOperator {
    omega: SubsamplingSet,
    oversample: usize,
    pfc_hat: Vec<C64>,
    p_hat: Vec<C64>,
}

impl ConvOperator {
    pub fn new(p: &BaseMatrix, omega: SubsamplingSet, oversample: usize) -> Result<Self> {
        let n = p.n();
        if n != omega.n() {
            return Err(FalpError::DimensionMismatch(n, omega.n()));
        }
        let mut pfc_hat = p.grid().flip_conj().into_vec();
        fft2_raw(&mut pfc_hat, n, false);
        let mut p_hat = p.grid().as_slice().to_vec();
        fft2_raw(&mut p_hat, n, false);
        Ok(ConvOperator { omega, oversample: oversample.max(1), pfc_hat, p_hat })
    }

    fn conv_with(&self, g: &ComplexGrid, kernel_hat: &[C64]) -> ComplexGrid {
        let n = g.n();
        let mut buf = g.as_slice().to_vec();
        fft2_raw(&mut buf, n, false);
        buf.iter_mut().zip(kernel_hat).for_each(|(a, b)| *a *= b);
        fft2_raw(&mut buf, n, true);
        let s = 1.0 / (n * n) as f64;
        buf.iter_mut().for_each(|z| *z *= s);
        ComplexGrid::from_vec(n, buf).expect("finite")
    }

    /// Antenna-domain channel represented by coefficients w.
    pub fn synthesize(&self, w: &ComplexGrid) -> ComplexGrid {
        synth(w, self.omega.n())
    }
}

impl SensingOperator for ConvOperator {
    fn dim(&self) -> usize {
        self.omega.n() * self.oversample
    }

    fn m(&self) -> usize {
        self.omega.m()
    }

    fn apply(&self, w: &ComplexGrid) -> Vec<C64> {
        let h = synth(w, self.omega.n());
        self.omega.gather(&self.conv_with(&h, &self.pfc_hat))
    }

    fn adjoint(&self, v: &[C64]) -> ComplexGrid {
        // adjoint of (· ⊛ P_FC) is (· ⊛ P)
        let g = self.conv_with(&self.omega.scatter(v), &self.p_hat);
        synth_adjoint(&g, self.dim())
    }
}

/// Explicit M × dim² matrix, row-major in the measurement index.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    dim: usize,
    m: usize,
    a: Vec<C64>,
}

impl DenseOperator {
    pub fn from_fn(m: usize, dim: usize, f: impl Fn(usize, usize, usize) -> C64) -> Self {
        let mut a = Vec::with_capacity(m * dim * dim);
        for row in 0..m {
            for r in 0..dim {
                for c in 0..dim {
                    a.push(f(row, r, c));
                }
            }
        }
        DenseOperator { dim, m, a }
    }

    /// Rows of the subsampled unitary 2D DFT written out entry by entry.
    pub fn partial_fourier(omega: &SubsamplingSet) -> Self {
        let n = omega.n();
        let coords = omega.coords().to_vec();
        DenseOperator::from_fn(coords.len(), n, |m, r, c| {
            let (k, l) = coords[m];
            C64::from_polar(1.0 / n as f64, -2.0 * PI * ((k * r + l * c) % n) as f64 / n as f64)
        })
    }
}

impl SensingOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn m(&self) -> usize {
        self.m
    }

    fn apply(&self, w: &ComplexGrid) -> Vec<C64> {
        let d2 = self.dim * self.dim;
        let x = w.as_slice();
        (0..self.m).map(|m| self.a[m * d2..(m + 1) * d2].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    fn adjoint(&self, v: &[C64]) -> ComplexGrid {
        let d2 = self.dim * self.dim;
        let mut out = vec![C64::new(0.0, 0.0); d2];
        for (m, &vm) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(&self.a[m * d2..(m + 1) * d2]) {
                *o += a.conj() * vm;
            }
        }
        ComplexGrid::from_vec(self.dim, out).expect("finite")
    }
}

/// Subsampled unitary 2D DFT evaluated as M explicit N²-term sums, without
/// storing the matrix. This is the direct-evaluation reference for timing.
pub fn dense_forward(w: &ComplexGrid, omega: &SubsamplingSet) -> Vec<C64> {
    let n = w.n();
    let tw: Vec<C64> = (0..n).map(|t| C64::from_polar(1.0 / n as f64, -2.0 * PI * t as f64 / n as f64)).collect();
    let x = w.as_slice();
    omega
        .coords()
        .iter()
        .map(|&(k, l)| {
            let mut acc = C64::new(0.0, 0.0);
            for r in 0..n {
                let base = (k * r) % n;
                let row = &x[r * n..(r + 1) * n];
                let mut idx = base;
                for z in row {
                    acc += z * tw[idx];
                    idx += l;
                    if idx >= n {
                        idx %= n;
                    }
                }
            }
            acc
        })
        .collect()
}

pub fn forward_op(w: &ComplexGrid, omega: &SubsamplingSet) -> Result<Vec<C64>> {
    if w.n() != omega.n() {
        return Err(FalpError::DimensionMismatch(w.n(), omega.n()));
    }
    Ok(PartialFourier::new(omega.clone()).apply(w))
}

pub fn adjoint_op(v: &[C64], omega: &SubsamplingSet) -> Result<ComplexGrid> {
    if v.len() != omega.m() {
        return Err(FalpError::DimensionMismatch(v.len(), omega.m()));
    }
    Ok(PartialFourier::new(omega.clone()).adjoint(v))
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    // Σ conj(a)·b
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Lower-triangular Cholesky factor of a Hermitian matrix (row-major k×k).
fn cholesky(g: &[C64], k: usize) -> Option<Vec<C64>> {
    let mut l = vec![C64::new(0.0, 0.0); k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = g[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p].conj();
            }
            if i == j {
                if s.re <= 0.0 || !s.re.is_finite() {
                    return None;
                }
                l[i * k + i] = C64::new(s.re.sqrt(), 0.0);
            } else {
                l[i * k + j] = s / l[j * k + j].re;
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[C64], k: usize, b: &[C64]) -> Vec<C64> {
    let mut y = vec![C64::new(0.0, 0.0); k];
    for i in 0..k {
        let mut s = b[i];
        for p in 0..i {
            s -= l[i * k + p] * y[p];
        }
        y[i] = s / l[i * k + i].re;
    }
    let mut x = vec![C64::new(0.0, 0.0); k];
    for i in (0..k).rev() {
        let mut s = y[i];
        for p in (i + 1)..k {
            s -= l[p * k + i].conj() * x[p];
        }
        x[i] = s / l[i * k + i].re;
    }
    x
}

/// Least squares through modified Gram–Schmidt with re-orthogonalisation;
/// numerically dependent columns get a zero coefficient.
fn qr_least_squares(cols: &[Vec<C64>], y: &[C64]) -> Vec<C64> {
    let k = cols.len();
    let scale = cols.iter().map(|c| norm(c)).fold(0.0, f64::max);
    let mut q: Vec<Vec<C64>> = Vec::with_capacity(k);
    let mut r = vec![C64::new(0.0, 0.0); k * k];
    let mut keep = vec![false; k];
    for (j, col) in cols.iter().enumerate() {
        let mut v = col.clone();
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                if qi.is_empty() {
                    continue;
                }
                let h = dot(qi, &v);
                r[i * k + j] += h;
                v.iter_mut().zip(qi).for_each(|(a, b)| *a -= h * b);
            }
        }
        let nv = norm(&v);
        if nv > 1e-10 * scale {
            r[j * k + j] = C64::new(nv, 0.0);
            v.iter_mut().for_each(|z| *z /= nv);
            keep[j] = true;
            q.push(v);
        } else {
            q.push(Vec::new());
        }
    }
    let qty: Vec<C64> = q.iter().map(|qi| if qi.is_empty() { C64::new(0.0, 0.0) } else { dot(qi, y) }).collect();
    let mut x = vec![C64::new(0.0, 0.0); k];
    for i in (0..k).rev() {
        if !keep[i] {
            continue;
        }
        let mut s = qty[i];
        for p in (i + 1)..k {
            s -= r[i * k + p] * x[p];
        }
        x[i] = s / r[i * k + i].re;
    }
    x
}

/// Coefficients minimising ‖y − Σ x_i col_i‖ given the Gram matrix and Aᴴy.
fn refit(cols: &[Vec<C64>], gram: &[C64], rhs: &[C64], y: &[C64]) -> Vec<C64> {
    let k = cols.len();
    if let Some(l) = cholesky(gram, k) {
        let diag: Vec<f64> = (0..k).map(|i| l[i * k + i].re).collect();
        let hi = diag.iter().cloned().fold(0.0, f64::max);
        let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if (hi / lo).powi(2) <= GRAM_COND_LIMIT {
            return cholesky_solve(&l, k, rhs);
        }
    }
    qr_least_squares(cols, y)
}

/// Orthogonal matching pursuit over any sensing operator.
pub fn omp<O: SensingOperator + ?Sized>(op: &O, y: &[C64], cfg: &RecoveryConfig) -> SparseEstimate {
    let dim = op.dim();
    let mut est = SparseEstimate::empty(dim);
    let y_norm = norm(y);
    let floor = cfg.stop_threshold.max(1e-12 * y_norm);
    let mut residual = y.to_vec();
    let mut res_norm = y_norm;
    est.residuals.push(res_norm);
    let mut cols: Vec<Vec<C64>> = Vec::new();
    let mut gram: Vec<C64> = Vec::new();
    let mut rhs: Vec<C64> = Vec::new();
    let mut in_support = vec![false; dim * dim];
    let mut coef: Vec<C64> = Vec::new();

    for _ in 0..cfg.max_iters {
        if res_norm <= floor || cols.len() >= op.m() {
            break;
        }
        let corr = op.adjoint(&residual);
        let mut best = None;
        let mut best_v = 0.0;
        for (i, z) in corr.as_slice().iter().enumerate() {
            if in_support[i] {
                continue;
            }
            let v = z.norm_sqr();
            if v > best_v {
                best_v = v;
                best = Some(i);
            }
        }
        let Some(idx) = best else { break };
        in_support[idx] = true;
        let (r, c) = (idx / dim, idx % dim);
        let atom = op.atom(r, c);

        let k = cols.len() + 1;
        let mut g = vec![C64::new(0.0, 0.0); k * k];
        for i in 0..k - 1 {
            for j in 0..k - 1 {
                g[i * k + j] = gram[i * (k - 1) + j];
            }
        }
        for (i, col) in cols.iter().enumerate() {
            let v = dot(col, &atom);
            g[i * k + k - 1] = v;
            g[(k - 1) * k + i] = v.conj();
        }
        g[(k - 1) * k + k - 1] = C64::new(norm(&atom).powi(2), 0.0);
        gram = g;
        rhs.push(dot(&atom, y));
        cols.push(atom);
        est.support.push((r, c));

        coef = refit(&cols, &gram, &rhs, y);
        residual = y.to_vec();
        for (col, x) in cols.iter().zip(&coef) {
            residual.iter_mut().zip(col).for_each(|(a, b)| *a -= x * b);
        }
        res_norm = norm(&residual);
        est.residuals.push(res_norm);
    }
    for (&(r, c), &x) in est.support.iter().zip(&coef) {
        est.grid.data_mut()[r * dim + c] = x;
    }
    est.coefficients = coef;
    est
}

/// OMP on the subsampled 2D DFT; with oversample = 2 the dictionary lives on
/// the 2N × 2N angle grid.
pub fn omp_recover(y: &MeasurementVector, omega: &SubsamplingSet, cfg: &RecoveryConfig) -> Result<SparseEstimate> {
    if y.values.len() != omega.m() {
        return Err(FalpError::DimensionMismatch(y.values.len(), omega.m()));
    }
    let op = PartialFourier::oversampled(omega.clone(), cfg.oversample.max(1));
    Ok(omp(&op, &y.values, cfg))
}

fn check_unimodular(z: &ComplexGrid) -> Result<()> {
    let (min, max) = mask_extremes(z);
    if (min - 1.0).abs() > UNIMODULAR_TOL || (max - 1.0).abs() > UNIMODULAR_TOL {
        return Err(FalpError::NonUnimodularMask { min, max });
    }
    Ok(())
}

/// X̂ = Ŝ ⊙ conj(Z).
pub fn demask(s_hat: &ComplexGrid, z: &ComplexGrid) -> Result<ComplexGrid> {
    check_unimodular(z)?;
    s_hat.zip_map(z, |s, m| s * m.conj())
}

/// K_bl = (N / M) · idft2(N_Ω).
pub fn psf(omega: &SubsamplingSet) -> ComplexGrid {
    omega.indicator().idft2().scale_re(omega.n() as f64 / omega.m() as f64)
}

/// Zero filling: S_bl = U* G_Ω U*, X_bl = S_bl ⊙ conj(Z).
pub fn zero_fill_estimate(
    y: &MeasurementVector,
    omega: &SubsamplingSet,
    z: &ComplexGrid,
) -> Result<(ComplexGrid, ComplexGrid)> {
    if y.values.len() != omega.m() {
        return Err(FalpError::DimensionMismatch(y.values.len(), omega.m()));
    }
    if z.n() != omega.n() {
        return Err(FalpError::DimensionMismatch(z.n(), omega.n()));
    }
    check_unimodular(z)?;
    let s_bl = omega.scatter(&y.values).idft2();
    let x_bl = s_bl.zip_map(z, |s, m| s * m.conj())?;
    Ok((s_bl, x_bl))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::complex_normal;
    use crate::perfect_arrays::{construct_pba, random_base, spectral_mask};
    use crate::sounding::{acquire_conv, sample_omega};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_grid(n: usize, r: &mut ChaCha8Rng) -> ComplexGrid {
        ComplexGrid::from_fn(n, |_, _| complex_normal(r, 1.0))
    }

    fn vdist(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
    }

    fn random_vec(m: usize, r: &mut ChaCha8Rng) -> Vec<C64> {
        (0..m).map(|_| complex_normal(r, 1.0)).collect()
    }

    #[test]
    fn forward_matches_dense_matrix() {
        let mut r = rng(1);
        let o = sample_omega(8, 20, &mut r).unwrap();
        let dense = DenseOperator::partial_fourier(&o);
        for _ in 0..5 {
            let w = random_grid(8, &mut r);
            assert!(vdist(&forward_op(&w, &o).unwrap(), &dense.apply(&w)) < 1e-10);
            assert!(vdist(&dense_forward(&w, &o), &dense.apply(&w)) < 1e-10);
            let v = random_vec(20, &mut r);
            assert!(adjoint_op(&v, &o).unwrap().sub(&dense.adjoint(&v)).unwrap().frob_norm() < 1e-10);
        }
        assert!(forward_op(&ComplexGrid::zeros(8), &o).unwrap().iter().all(|z| z.norm() == 0.0));
    }

    fn adjoint_gap<O: SensingOperator>(op: &O, r: &mut ChaCha8Rng) -> f64 {
        let w = random_grid(op.dim(), r);
        let v = random_vec(op.m(), r);
        let lhs = dot(&v, &op.apply(&w)); // ⟨Aw, v⟩ conj-ordered
        let rhs = w.inner(&op.adjoint(&v)).unwrap();
        (lhs.conj() - rhs.conj()).norm() / lhs.norm().max(1e-300)
    }

    #[test]
    fn operators_are_adjoint_pairs() {
        let mut r = rng(2);
        for n in [4, 8] {
            let o = sample_omega(n, n * n / 3, &mut r).unwrap();
            for os in [1, 2] {
                assert!(adjoint_gap(&PartialFourier::oversampled(o.clone(), os), &mut r) < 1e-10);
                let p = random_base(n, 1, &mut r);
                assert!(adjoint_gap(&ConvOperator::new(&p, o.clone(), os).unwrap(), &mut r) < 1e-10);
            }
        }
    }

    #[test]
    fn atoms_match_impulse_responses() {
        let mut r = rng(3);
        let o = sample_omega(8, 15, &mut r).unwrap();
        for os in [1, 2] {
            let op = PartialFourier::oversampled(o.clone(), os);
            for (a, b) in [(0, 0), (3, 5), (15, 1)] {
                if a >= op.dim() || b >= op.dim() {
                    continue;
                }
                let imp = op.apply(&ComplexGrid::impulse(op.dim(), a, b));
                assert!(vdist(&op.atom(a, b), &imp) < 1e-12);
            }
        }
    }

    #[test]
    fn conv_operator_matches_acquisition() {
        let mut r = rng(4);
        let p = random_base(8, 2, &mut r);
        let o = sample_omega(8, 25, &mut r).unwrap();
        let x = random_grid(8, &mut r);
        let op = ConvOperator::new(&p, o.clone(), 1).unwrap();
        let y = acquire_conv(&x.dft2(), &p, &o, 0.0, &mut r).unwrap();
        assert!(vdist(&op.apply(&x), &y.values) < 1e-10);
        // every other fine-grid point reproduces the coarse dictionary
        let op2 = ConvOperator::new(&p, o, 2).unwrap();
        let fine = ComplexGrid::from_fn(16, |a, b| if a % 2 == 0 && b % 2 == 0 { x.get(a / 2, b / 2) } else { C64::new(0.0, 0.0) });
        assert!(vdist(&op2.apply(&fine), &y.values) < 1e-10);
    }

    fn sparse_grid(n: usize, k: usize, r: &mut ChaCha8Rng) -> ComplexGrid {
        let idx = rand::seq::index::sample(r, n * n, k).into_vec();
        let mut g = ComplexGrid::zeros(n);
        for i in idx {
            let mag = r.random_range(0.5..1.0);
            let ph = r.random_range(0.0..2.0 * PI);
            g.data_mut()[i] = C64::from_polar(mag, ph);
        }
        g
    }

    #[test]
    fn full_sampling_one_sparse_is_exact() {
        let mut r = rng(5);
        let o = SubsamplingSet::full(8);
        let s = sparse_grid(8, 1, &mut r);
        let y = MeasurementVector { values: forward_op(&s, &o).unwrap(), sigma: 0.0, ns: 1 };
        let est = omp_recover(&y, &o, &RecoveryConfig::default()).unwrap();
        assert_eq!(est.support.len(), 1);
        assert!(est.grid.sub(&s).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn zero_measurements_give_empty_estimate() {
        let o = sample_omega(8, 10, &mut rng(6)).unwrap();
        let y = MeasurementVector { values: vec![C64::new(0.0, 0.0); 10], sigma: 0.0, ns: 1 };
        let est = omp_recover(&y, &o, &RecoveryConfig::default()).unwrap();
        assert!(est.support.is_empty());
        assert_eq!(est.grid, ComplexGrid::zeros(8));
        assert_eq!(est.residuals.len(), 1);
    }

    // Least squares via the normal equations on the dense matrix, solved
    // by Gaussian elimination with partial pivoting.
    fn dense_lstsq(a: &DenseOperator, support: &[(usize, usize)], y: &[C64]) -> Vec<C64> {
        let k = support.len();
        let cols: Vec<Vec<C64>> = support
            .iter()
            .map(|&(r, c)| a.apply(&ComplexGrid::impulse(a.dim(), r, c)))
            .collect();
        let mut m = vec![vec![C64::new(0.0, 0.0); k + 1]; k];
        for i in 0..k {
            for j in 0..k {
                m[i][j] = dot(&cols[i], &cols[j]);
            }
            m[i][k] = dot(&cols[i], y);
        }
        for p in 0..k {
            let piv = (p..k).max_by(|&a, &b| m[a][p].norm().partial_cmp(&m[b][p].norm()).unwrap()).unwrap();
            m.swap(p, piv);
            for i in 0..k {
                if i != p {
                    let f = m[i][p] / m[p][p];
                    let pivot_row = m[p].clone();
                    for (v, t) in m[i].iter_mut().zip(pivot_row).skip(p) {
                        *v -= f * t;
                    }
                }
            }
        }
        (0..k).map(|i| m[i][k] / m[i][i]).collect()
    }

    #[test]
    fn three_sparse_recovery_and_refits_match_dense_solver() {
        let n = 16;
        let m = (0.3 * (n * n) as f64).round() as usize;
        let mut exact = 0;
        for seed in 0..100 {
            let mut r = rng(1000 + seed);
            let s = sparse_grid(n, 3, &mut r);
            let o = sample_omega(n, m, &mut r).unwrap();
            let y = MeasurementVector { values: forward_op(&s, &o).unwrap(), sigma: 0.0, ns: 1 };
            let est = omp_recover(&y, &o, &RecoveryConfig::default()).unwrap();
            let mut got = est.support.clone();
            got.sort();
            let mut want: Vec<(usize, usize)> =
                (0..n * n).filter(|&i| s.as_slice()[i].norm() > 0.0).map(|i| (i / n, i % n)).collect();
            want.sort();
            if got == want {
                exact += 1;
            }
            if seed < 10 {
                let dense = DenseOperator::partial_fourier(&o);
                let want_coef = dense_lstsq(&dense, &est.support, &y.values);
                assert!(vdist(&want_coef, &est.coefficients) < 1e-9);
            }
        }
        assert!(exact >= 95, "{exact}");
    }

    #[test]
    fn residual_never_increases() {
        let mut r = rng(7);
        let o = sample_omega(16, 60, &mut r).unwrap();
        let x = random_grid(16, &mut r);
        let y = MeasurementVector { values: forward_op(&x, &o).unwrap(), sigma: 0.0, ns: 1 };
        let est = omp_recover(&y, &o, &RecoveryConfig { max_iters: 40, ..Default::default() }).unwrap();
        assert_eq!(est.residuals.len(), 41);
        for w in est.residuals.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn ill_conditioned_refit_falls_back() {
        let a = vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
        let b = vec![C64::new(1.0, 0.0), C64::new(1e-9, 0.0)];
        let cols = vec![a.clone(), b.clone()];
        let y = vec![C64::new(2.0, 0.0), C64::new(1e-9, 0.0)];
        let gram: Vec<C64> = vec![dot(&a, &a), dot(&a, &b), dot(&b, &a), dot(&b, &b)];
        let x = refit(&cols, &gram, &[dot(&a, &y), dot(&b, &y)], &y);
        let fit: Vec<C64> = (0..2).map(|i| x[0] * a[i] + x[1] * b[i]).collect();
        assert!(vdist(&fit, &y) < 1e-12);
        // exactly dependent columns: still a least-squares fit
        let cols = vec![a.clone(), a.clone()];
        let x = qr_least_squares(&cols, &y);
        assert!(((x[0] + x[1]) - C64::new(2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn demask_examples() {
        let mut r = rng(8);
        let z = spectral_mask(&construct_pba(8).unwrap());
        let x = random_grid(8, &mut r);
        let s = x.hadamard(&z).unwrap();
        assert!(demask(&s, &z).unwrap().sub(&x).unwrap().frob_norm() < 1e-12);
        assert_eq!(demask(&ComplexGrid::zeros(8), &z).unwrap(), ComplexGrid::zeros(8));
        let bad = spectral_mask(&random_base(8, 1, &mut r));
        assert!(matches!(demask(&s, &bad), Err(FalpError::NonUnimodularMask { .. })));
    }

    #[test]
    fn psf_examples() {
        let k = psf(&SubsamplingSet::full(8));
        assert!(k.sub(&ComplexGrid::impulse(8, 0, 0)).unwrap().max_abs() < 1e-12);
        let mut r = rng(9);
        for m in [1, 5, 30, 64] {
            let o = sample_omega(8, m, &mut r).unwrap();
            assert!((psf(&o).get(0, 0) - C64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_fill_identities() {
        let n = 16;
        let mut r = rng(10);
        let p = construct_pba(n).unwrap();
        let z = spectral_mask(&p);
        let x = random_grid(n, &mut r);
        let full = SubsamplingSet::full(n);
        let y = acquire_conv(&x.dft2(), &p, &full, 0.0, &mut r).unwrap();
        let (_, x_bl) = zero_fill_estimate(&y, &full, &z).unwrap();
        assert!(x_bl.sub(&x).unwrap().max_abs() < 1e-10);

        let s = sparse_grid(n, 2, &mut r);
        let o = sample_omega(n, 40, &mut r).unwrap();
        let y = MeasurementVector { values: forward_op(&s, &o).unwrap(), sigma: 0.0, ns: 1 };
        let (s_bl, _) = zero_fill_estimate(&y, &o, &z).unwrap();
        let want = s.circ_conv2(&psf(&o)).unwrap().scale_re(40.0 / (n * n) as f64);
        assert!(s_bl.sub(&want).unwrap().max_abs() < 1e-10);

        let y0 = MeasurementVector { values: vec![C64::new(0.0, 0.0); 40], sigma: 0.0, ns: 1 };
        let (a, b) = zero_fill_estimate(&y0, &o, &z).unwrap();
        assert_eq!(a.frob_norm() + b.frob_norm(), 0.0);
    }

    #[test]
    fn estimate_dump_round_trip() {
        let mut r = rng(11);
        let o = sample_omega(8, 30, &mut r).unwrap();
        let s = sparse_grid(8, 3, &mut r);
        let y = MeasurementVector { values: forward_op(&s, &o).unwrap(), sigma: 0.0, ns: 1 };
        let est = omp_recover(&y, &o, &RecoveryConfig::default()).unwrap();
        let back = SparseEstimate::from_text(8, &est.to_text()).unwrap();
        assert_eq!(back.support, est.support);
        assert_eq!(back.grid, est.grid);
    }
}
