//! Perfect binary arrays: construction, certification and spectral masks.
//!
//! The construction carries four "twisted" flavours of flat arrays through a
//! size-doubling recursion. An s×t ±1 array A is flat of type (z1, z2) when
//!
//!   |Σ A(i,j) e^{-j2π((k + z1/2) i / s + (l + z2/2) j / t)}|² = s·t   for all k, l,
//!
//! i.e. type (0,0) is an ordinary perfect array and a twist of 1 makes the
//! corresponding axis negaperiodic. Three identities drive the recursion:
//!
//! * interleave: even rows `[A A]`, odd rows `[B −B]` turns A of type (z,0) and
//!   B of type (z,1) into an array of type (z,0) with twice the rows and columns;
//! * transposition swaps the two twist bits;
//! * the shear A(i,j) = P(i, i+j), read with the negaperiodic column extension
//!   of P, maps type (0,1) to type (1,1).
//!
//! Starting from the 1×1 array (flat of every type) this reaches every power of
//! two; starting from a 6×6 perfect/row-negaperiodic pair it reaches 3·2^k.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{FalpError, Result};
use crate::grid::{ComplexGrid, C64};

const TOL: f64 = 1e-9;

/// Phase-shift matrix with entries of magnitude 1/N and phases on the 2^q grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseMatrix {
    grid: ComplexGrid,
    q: u32,
}

impl BaseMatrix {
    pub fn new(grid: ComplexGrid, q: u32) -> Result<Self> {
        let n = grid.n() as f64;
        let step = 2.0 * std::f64::consts::PI / (1u64 << q) as f64;
        for z in grid.as_slice() {
            if (z.norm() - 1.0 / n).abs() > 1e-12 {
                return Err(FalpError::InvalidSize(format!("entry magnitude {} is not 1/{n}", z.norm())));
            }
            let k = z.arg() / step;
            if (k - k.round()).abs() * step > 1e-12 {
                return Err(FalpError::InvalidSize(format!("phase {} is off the 2^{q} grid", z.arg())));
            }
        }
        Ok(BaseMatrix { grid, q })
    }

    /// q = 1 base from a row-major ±1 pattern.
    pub fn from_signs(n: usize, signs: &[i8]) -> Result<Self> {
        if signs.len() != n * n || signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(FalpError::InvalidSize("sign pattern must hold n² entries of ±1".into()));
        }
        let v = signs.iter().map(|&s| C64::new(s as f64 / n as f64, 0.0)).collect();
        Ok(BaseMatrix { grid: ComplexGrid::from_vec(n, v)?, q: 1 })
    }

    pub fn grid(&self) -> &ComplexGrid {
        &self.grid
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn to_text(&self) -> String {
        format!("{}q={}\n", self.grid.to_text(), self.q)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let q = text
            .lines()
            .find_map(|l| l.trim().strip_prefix("q="))
            .ok_or_else(|| FalpError::Parse("missing q= line".into()))?
            .parse()
            .map_err(|e| FalpError::Parse(format!("q: {e}")))?;
        BaseMatrix::new(ComplexGrid::from_text(text)?, q)
    }
}

/// Random base with uniform phases on the 2^q grid.
pub fn random_base<R: Rng + ?Sized>(n: usize, q: u32, rng: &mut R) -> BaseMatrix {
    let levels = 1u64 << q;
    let step = 2.0 * std::f64::consts::PI / levels as f64;
    let grid = ComplexGrid::from_fn(n, |_, _| {
        let k = rng.random_range(0..levels);
        snap(C64::from_polar(1.0 / n as f64, k as f64 * step))
    });
    BaseMatrix { grid, q }
}

// Keep exact zeros exact so that ±1/N bases stay real.
fn snap(z: C64) -> C64 {
    let clean = |x: f64| if x.abs() < 1e-15 { 0.0 } else { x };
    C64::new(clean(z.re), clean(z.im))
}

/// Sizes for which a perfect binary array exists: 2^k and 3·2^k, except 1 and 3.
pub fn is_admissible(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    let odd = n >> n.trailing_zeros();
    odd == 1 || (odd == 3 && n >= 6)
}

#[derive(Clone, Debug, PartialEq)]
struct Signs {
    rows: usize,
    cols: usize,
    v: Vec<i8>,
}

impl Signs {
    fn get(&self, r: usize, c: usize) -> i8 {
        self.v[r * self.cols + c]
    }

    fn transpose(&self) -> Signs {
        let mut v = Vec::with_capacity(self.v.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                v.push(self.get(r, c));
            }
        }
        Signs { rows: self.cols, cols: self.rows, v }
    }

    /// Even rows [A A], odd rows [B −B].
    fn interleave(a: &Signs, b: &Signs) -> Signs {
        let (s, t) = (a.rows, a.cols);
        let mut v = Vec::with_capacity(4 * s * t);
        for r in 0..2 * s {
            let (src, sign) = if r % 2 == 0 { (a, 1) } else { (b, -1) };
            for c in 0..2 * t {
                let x = src.get(r / 2, c % t);
                v.push(if c >= t { sign * x } else { x });
            }
        }
        Signs { rows: 2 * s, cols: 2 * t, v }
    }

    /// Square only: A(i, j) = P(i, i + j) with P(i, j + n) = −P(i, j).
    fn shear(&self) -> Signs {
        let n = self.rows;
        let mut v = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let m = i + j;
                let x = self.get(i, m % n);
                v.push(if (m / n) % 2 == 1 { -x } else { x });
            }
        }
        Signs { rows: n, cols: n, v }
    }
}

// Perfect / row-negaperiodic pair of size 6 that seeds the 3·2^k family.
const SEED6_PERFECT: [[i8; 6]; 6] = [
    [-1, -1, -1, 1, 1, -1],
    [1, -1, 1, -1, -1, -1],
    [-1, -1, 1, -1, -1, 1],
    [1, 1, 1, 1, -1, 1],
    [1, 1, -1, -1, -1, -1],
    [1, -1, 1, -1, -1, -1],
];
const SEED6_ROW_NEGA: [[i8; 6]; 6] = [
    [-1, -1, -1, 1, -1, 1],
    [-1, -1, 1, 1, -1, 1],
    [-1, -1, -1, -1, -1, 1],
    [1, 1, 1, -1, -1, -1],
    [1, 1, 1, -1, 1, 1],
    [1, -1, -1, 1, -1, 1],
];

fn seed6(rows: &[[i8; 6]; 6]) -> Signs {
    Signs { rows: 6, cols: 6, v: rows.iter().flatten().copied().collect() }
}

/// (perfect, type-(1,0) flat) pair of side n.
fn pba_pair(n: usize) -> (Signs, Signs) {
    let (mut pp, mut np) = if n.is_multiple_of(3) {
        (seed6(&SEED6_PERFECT), seed6(&SEED6_ROW_NEGA))
    } else {
        let one = Signs { rows: 1, cols: 1, v: vec![1] };
        (one.clone(), one)
    };
    while pp.rows < n {
        let pn = np.transpose();
        let nn = pn.shear();
        pp = Signs::interleave(&pp, &pn);
        np = Signs::interleave(&np, &nn);
    }
    (pp, np)
}

/// ±1 pattern (row-major) of the constructed perfect array.
pub fn pba_signs(n: usize) -> Result<Vec<i8>> {
    if !is_admissible(n) {
        return Err(FalpError::UnsupportedSize(n));
    }
    Ok(pba_pair(n).0.v)
}

/// Deterministic perfect binary array of side n, certified before it is returned.
pub fn construct_pba(n: usize) -> Result<BaseMatrix> {
    let p = BaseMatrix::from_signs(n, &pba_signs(n)?)?;
    if !verify_perfect(&p) {
        return Err(FalpError::InvalidSize(format!("constructed array of size {n} failed certification")));
    }
    Ok(p)
}

/// True iff every nonzero circulant shift of P is orthogonal to P.
pub fn verify_perfect(p: &BaseMatrix) -> bool {
    let g = p.grid();
    let n = g.n() as i64;
    for x in 0..n {
        for y in 0..n {
            if (x, y) == (0, 0) {
                continue;
            }
            let corr = g.inner(&g.circ_shift(x, y)).expect("same size");
            if corr.norm() >= TOL {
                return false;
            }
        }
    }
    true
}

/// Z = N · idft2(P_FC).
pub fn spectral_mask(p: &BaseMatrix) -> ComplexGrid {
    p.grid().flip_conj().idft2().scale_re(p.n() as f64)
}

/// (min |Z|, max |Z|).
pub fn mask_extremes(z: &ComplexGrid) -> (f64, f64) {
    z.as_slice()
        .iter()
        .map(|v| v.norm())
        .fold((f64::INFINITY, 0.0), |(lo, hi), a| (lo.min(a), hi.max(a)))
}

pub fn is_unimodular(z: &ComplexGrid, tol: f64) -> bool {
    let (lo, hi) = mask_extremes(z);
    (lo - 1.0).abs() <= tol && (hi - 1.0).abs() <= tol
}

/// All perfect ±1 patterns of side n ≤ 4, by brute force over sign patterns.
pub fn exhaustive_pbas(n: usize) -> Vec<Vec<i8>> {
    assert!((1..=4).contains(&n), "exhaustive search is limited to n <= 4");
    let cells = n * n;
    let mut out = Vec::new();
    for bits in 0u32..(1u32 << cells) {
        let a: Vec<i64> = (0..cells).map(|b| if bits >> b & 1 == 1 { -1 } else { 1 }).collect();
        let perfect = (0..n).all(|x| {
            (0..n).all(|y| {
                if (x, y) == (0, 0) {
                    return true;
                }
                let mut s = 0;
                for i in 0..n {
                    for j in 0..n {
                        s += a[i * n + j] * a[((i + x) % n) * n + (j + y) % n];
                    }
                }
                s == 0
            })
        });
        if perfect {
            out.push(a.iter().map(|&v| v as i8).collect());
        }
    }
    out
}

/// Equal up to a 2D circulant shift and a global sign.
pub fn equivalent(a: &ComplexGrid, b: &ComplexGrid, tol: f64) -> bool {
    if a.n() != b.n() {
        return false;
    }
    let n = a.n() as i64;
    for r in 0..n {
        for c in 0..n {
            let s = a.circ_shift(r, c);
            for sign in [1.0, -1.0] {
                let d = s.sub(&b.scale(Complex64::new(sign, 0.0))).unwrap().max_abs();
                if d <= tol {
                    return true;
                }
            }
        }
    }
    false
}
