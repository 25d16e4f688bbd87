//! Analytical results for zero-filling beam alignment and the CS error bound,
//! plus the Monte Carlo phase-transition experiment.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::complex_normal;
use crate::error::{FalpError, Result};
use crate::grid::{ComplexGrid, C64};
use crate::perfect_arrays::{construct_pba, mask_extremes, spectral_mask};
use crate::recovery::{psf, zero_fill_estimate};
use crate::sounding::{acquire, sample_omega};

/// ln of the Poisson pmf at k for mean λ.
fn ln_poisson(k: usize, lambda: f64, ln_fact: f64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -lambda + k as f64 * lambda.ln() - ln_fact
}

/// First-order Marcum Q function,
/// Q₁(α, β) = Σ_k Pois(k; α²/2) · Pr[Pois(β²/2) ≤ k].
pub fn marcum_q1(alpha: f64, beta: f64) -> f64 {
    if beta <= 0.0 {
        return 1.0;
    }
    let la = alpha * alpha / 2.0;
    let lb = beta * beta / 2.0;
    let k_max = (la + 12.0 * la.sqrt() + 60.0).ceil() as usize;
    let mut total = 0.0;
    let mut cdf_b = 0.0;
    let mut ln_fact = 0.0;
    for k in 0..=k_max {
        if k > 0 {
            ln_fact += (k as f64).ln();
        }
        cdf_b += ln_poisson(k, lb, ln_fact).exp();
        total += ln_poisson(k, la, ln_fact).exp() * cdf_b.min(1.0);
    }
    total.clamp(0.0, 1.0)
}

/// ξ² = (1 − ρ) / (ρ N²).
pub fn xi_squared(n: usize, rho: f64) -> f64 {
    (1.0 - rho) / (rho * (n * n) as f64)
}

/// Two-path masked beamspace S(0,0) = 1, S(r_o, c_o) = a.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZfbScenario {
    pub n: usize,
    pub rho: f64,
    pub a: C64,
    pub r_o: usize,
    pub c_o: usize,
}

impl ZfbScenario {
    pub fn new(n: usize, rho: f64, a: C64, r_o: usize, c_o: usize) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(FalpError::InvalidSize(format!("rho={rho} outside (0, 1]")));
        }
        if a.norm() >= 1.0 {
            return Err(FalpError::InvalidSize(format!("|a|={} must be < 1", a.norm())));
        }
        if (r_o, c_o) == (0, 0) || r_o >= n || c_o >= n {
            return Err(FalpError::InvalidSize(format!("second path at ({r_o}, {c_o})")));
        }
        Ok(ZfbScenario { n, rho, a, r_o, c_o })
    }

    pub fn xi_squared(&self) -> f64 {
        xi_squared(self.n, self.rho)
    }

    /// λ_NC = 2 / (|a|² ξ²).
    pub fn noncentrality(&self) -> f64 {
        2.0 / (self.a.norm_sqr() * self.xi_squared())
    }
}

/// Lower bound on the probability that zero filling picks (0, 0).
pub fn zfb_success_bound(sc: &ZfbScenario) -> f64 {
    if sc.rho >= 1.0 {
        return 1.0;
    }
    let n2 = (sc.n * sc.n) as f64;
    let a2 = sc.a.norm_sqr();
    let q = marcum_q1(0.0, sc.n as f64 * (2.0 * sc.rho / (1.0 - sc.rho)).sqrt());
    let tail = (1.0 + a2) * (n2 - 2.0) / (1.0 + 2.0 * a2) * (-n2 * sc.rho / ((1.0 + 2.0 * a2) * (1.0 - sc.rho))).exp();
    (1.0 - q - tail).max(0.0)
}

/// p₁ = Q₁(0, √2/ξ) = exp(−1/ξ²).
pub fn p1_closed_form(sc: &ZfbScenario) -> f64 {
    let xi2 = sc.xi_squared();
    if xi2 == 0.0 {
        return 0.0;
    }
    marcum_q1(0.0, (2.0 / xi2).sqrt())
}

/// p₂ = (1+|a|²)/(1+2|a|²) · exp(−1/((1+2|a|²) ξ²)).
pub fn p2_closed_form(sc: &ZfbScenario) -> f64 {
    let xi2 = sc.xi_squared();
    if xi2 == 0.0 {
        return 0.0;
    }
    let a2 = sc.a.norm_sqr();
    (1.0 + a2) / (1.0 + 2.0 * a2) * (-1.0 / ((1.0 + 2.0 * a2) * xi2)).exp()
}

/// Monte Carlo frequency of |1 + a·x*| ≤ |a + x|, x ~ 𝒩_c(0, ξ²).
pub fn p1_monte_carlo<R: Rng + ?Sized>(sc: &ZfbScenario, draws: usize, rng: &mut R) -> f64 {
    let xi2 = sc.xi_squared();
    let a = sc.a;
    let hits = (0..draws)
        .filter(|_| {
            let x = complex_normal(rng, xi2);
            (C64::new(1.0, 0.0) + a * x.conj()).norm() <= (a + x).norm()
        })
        .count();
    hits as f64 / draws as f64
}

/// Monte Carlo frequency of |1 + a·x*| ≤ |b + a·w| with x, b, w IID 𝒩_c(0, ξ²).
pub fn p2_monte_carlo<R: Rng + ?Sized>(sc: &ZfbScenario, draws: usize, rng: &mut R) -> f64 {
    let xi2 = sc.xi_squared();
    let a = sc.a;
    let hits = (0..draws)
        .filter(|_| {
            let x = complex_normal(rng, xi2);
            let b = complex_normal(rng, xi2);
            let w = complex_normal(rng, xi2);
            (C64::new(1.0, 0.0) + a * x.conj()).norm() <= (b + a * w).norm()
        })
        .count();
    hits as f64 / draws as f64
}

/// Terms of the CS reconstruction bound for a mask Z, with user constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoveryBoundIngredients {
    pub z_min: f64,
    pub z_max: f64,
    /// ‖X − (X)_k‖₁
    pub tail_l1: f64,
    /// C₁ Z_max ‖X − (X)_k‖₁ / (√k Z_min)
    pub approx_term: f64,
    /// C₂ N σ / Z_min
    pub noise_term: f64,
}

/// Sum of all but the k largest magnitudes.
pub fn l1_tail(x: &ComplexGrid, k: usize) -> f64 {
    let mut mags: Vec<f64> = x.as_slice().iter().map(|z| z.norm()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    mags.iter().skip(k).sum()
}

pub fn recovery_bound_ingredients(x: &ComplexGrid, z: &ComplexGrid, k: usize, sigma: f64, c1: f64, c2: f64) -> RecoveryBoundIngredients {
    let (z_min, z_max) = mask_extremes(z);
    let tail_l1 = l1_tail(x, k);
    RecoveryBoundIngredients {
        z_min,
        z_max,
        tail_l1,
        approx_term: c1 * z_max * tail_l1 / ((k.max(1) as f64).sqrt() * z_min),
        noise_term: c2 * x.n() as f64 * sigma / z_min,
    }
}

/// Off-origin second moment of K_bl pooled over `draws` random Ω of size m.
pub fn psf_variance_mc<R: Rng + ?Sized>(n: usize, m: usize, draws: usize, rng: &mut R) -> Result<f64> {
    let mut acc = 0.0;
    for _ in 0..draws {
        let k = psf(&sample_omega(n, m, rng)?);
        acc += k.as_slice().iter().skip(1).map(|z| z.norm_sqr()).sum::<f64>();
    }
    Ok(acc / (draws * (n * n - 1)) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseTransitionCell {
    pub rho: f64,
    pub a_db: f64,
    pub m: usize,
    pub trials: usize,
    pub successes: usize,
    pub bound: f64,
}

impl PhaseTransitionCell {
    pub fn empirical(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }

    pub fn stderr(&self) -> f64 {
        let p = self.empirical();
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

/// M = round(ρ N²), at least 1.
pub fn measurements_for(n: usize, rho: f64) -> usize {
    ((rho * (n * n) as f64).round() as usize).clamp(1, n * n)
}

/// One noiseless two-path trial: true when zero filling peaks at (0, 0).
fn zfb_trial(n: usize, m: usize, a_mag: f64, z: &ComplexGrid, p: &crate::perfect_arrays::BaseMatrix, rng: &mut ChaCha8Rng) -> Result<bool> {
    let idx = rng.random_range(1..n * n);
    let a = C64::from_polar(a_mag, rng.random_range(0.0..2.0 * PI));
    let mut s = ComplexGrid::zeros(n);
    s.data_mut()[0] = C64::new(1.0, 0.0);
    s.data_mut()[idx] = a;
    let x = s.zip_map(z, |s, m| s * m.conj())?;
    let omega = sample_omega(n, m, rng)?;
    let y = acquire(&x.dft2(), p, &omega, 0.0, rng)?;
    let (s_bl, _) = zero_fill_estimate(&y, &omega, z)?;
    Ok(s_bl.argmax_abs() == (0, 0))
}

/// Success frequencies over ρ × second-path strength (dB), row-major in ρ.
/// Each cell draws from its own ChaCha stream so results do not depend on
/// scheduling.
pub fn phase_transition_mc(n: usize, rho_grid: &[f64], a_db_grid: &[f64], trials: usize, seed: u64) -> Result<Vec<PhaseTransitionCell>> {
    if trials == 0 {
        return Err(FalpError::InvalidSize("trials must be ≥ 1".into()));
    }
    let p = construct_pba(n)?;
    let z = spectral_mask(&p);
    let cells: Vec<(usize, f64, f64)> = rho_grid
        .iter()
        .flat_map(|&r| a_db_grid.iter().map(move |&a| (r, a)))
        .enumerate()
        .map(|(i, (r, a))| (i, r, a))
        .collect();
    cells
        .par_iter()
        .map(|&(i, rho, a_db)| {
            let m = measurements_for(n, rho);
            let a_mag = 10f64.powf(a_db / 20.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut successes = 0;
            for _ in 0..trials {
                if zfb_trial(n, m, a_mag, &z, &p, &mut rng)? {
                    successes += 1;
                }
            }
            let rho_eff = m as f64 / (n * n) as f64;
            let bound = ZfbScenario::new(n, rho_eff, C64::new(a_mag.min(1.0 - 1e-12), 0.0), 0, 1)
                .map(|sc| zfb_success_bound(&sc))
                .unwrap_or(0.0);
            Ok(PhaseTransitionCell { rho, a_db, m, trials, successes, bound })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perfect_arrays::random_base;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn bessel_i0(x: f64) -> f64 {
        let mut term = 1.0;
        let mut sum = 1.0;
        let q = x * x / 4.0;
        for k in 1..500 {
            term *= q / (k * k) as f64;
            sum += term;
            if term < 1e-18 * sum {
                break;
            }
        }
        sum
    }

    // ∫_β^∞ x exp(−(x² + α²)/2) I₀(αx) dx by composite Simpson.
    fn marcum_quadrature(alpha: f64, beta: f64) -> f64 {
        let hi = beta + alpha + 40.0;
        let steps = 200_000;
        let h = (hi - beta) / steps as f64;
        let f = |x: f64| x * (-(x * x + alpha * alpha) / 2.0).exp() * bessel_i0(alpha * x);
        let mut s = f(beta) + f(hi);
        for i in 1..steps {
            let x = beta + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn marcum_examples() {
        for b in [0.0, 0.3, 1.0, 2.5, 5.0, 9.0] {
            assert!((marcum_q1(0.0, b) - (-b * b / 2.0f64).exp()).abs() < 1e-12);
        }
        assert_eq!(marcum_q1(3.0, 0.0), 1.0);
        for (a, b) in [(1.0, 1.0), (2.0, 1.5), (0.5, 3.0), (4.0, 5.0)] {
            let want = marcum_quadrature(a, b);
            assert!((marcum_q1(a, b) - want).abs() < 1e-11, "{a} {b}: {} vs {want}", marcum_q1(a, b));
        }
    }

    #[test]
    fn marcum_monotonicity() {
        let grid: Vec<f64> = (0..30).map(|i| i as f64 * 0.25).collect();
        for &a in &grid {
            for w in grid.windows(2) {
                assert!(marcum_q1(a, w[1]) <= marcum_q1(a, w[0]) + 1e-14);
                assert!(marcum_q1(w[1], a) >= marcum_q1(w[0], a) - 1e-14);
            }
        }
    }

    #[test]
    fn xi_examples() {
        assert_eq!(xi_squared(32, 1.0), 0.0);
        assert!((xi_squared(32, 1.0 / 16.0) - 15.0 / 1024.0).abs() < 1e-15);
        let v = psf_variance_mc(32, 64, 1000, &mut rng(1)).unwrap();
        assert!((v / xi_squared(32, 1.0 / 16.0) - 1.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn bound_examples() {
        let sc = |n, rho, a: f64| ZfbScenario::new(n, rho, C64::new(a, 0.0), 1, 2).unwrap();
        assert_eq!(zfb_success_bound(&sc(32, 1.0, 0.5)), 1.0);
        for rho in [0.02, 0.05, 0.2] {
            let n2: f64 = 1024.0;
            let e = (-n2 * rho / (1.0 - rho)).exp();
            let want = (1.0 - e - (n2 - 2.0) * e).max(0.0);
            assert!((zfb_success_bound(&sc(32, rho, 0.0)) - want).abs() < 1e-12);
        }
        for i in 0..=8 {
            let a = 0.1 + 0.1 * i as f64;
            for rho in [0.03, 0.05, 0.1] {
                assert!(zfb_success_bound(&sc(32, rho, a)) >= 0.9);
            }
        }
        assert!(ZfbScenario::new(8, 0.5, C64::new(1.0, 0.0), 1, 1).is_err());
        assert!(ZfbScenario::new(8, 0.5, C64::new(0.5, 0.0), 0, 0).is_err());
        assert!(ZfbScenario::new(8, 0.0, C64::new(0.5, 0.0), 1, 0).is_err());
    }

    fn within_3se(mc: f64, p: f64, draws: usize) -> bool {
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        (mc - p).abs() <= 3.0 * se + 1e-15
    }

    #[test]
    fn closed_forms_match_monte_carlo() {
        let draws = 100_000;
        // (N, ρ) with ξ large enough for the events to be observable, and the
        // reference point N = 32, ρ = 1/16 where both are ≈ e^(−68)
        for (n, rho) in [(4, 0.25), (2, 0.5), (32, 1.0 / 16.0)] {
            for a in [0.2, 0.5, 0.8] {
                let sc = ZfbScenario::new(n, rho, C64::from_polar(a, 0.9), 1, 1).unwrap();
                let mut r = rng(100 * n as u64 + (a * 10.0) as u64);
                let p1 = p1_closed_form(&sc);
                assert!(within_3se(p1_monte_carlo(&sc, draws, &mut r), p1, draws));
                let p2 = p2_closed_form(&sc);
                assert!(within_3se(p2_monte_carlo(&sc, draws, &mut r), p2, draws));
            }
        }
    }

    #[test]
    fn p_examples() {
        let sc = |a: f64, rho| ZfbScenario::new(16, rho, C64::new(a, 0.0), 2, 3).unwrap();
        assert_eq!(p1_closed_form(&sc(0.1, 0.1)), p1_closed_form(&sc(0.9, 0.1)));
        assert!(p1_closed_form(&sc(0.5, 0.999)) < 1e-100);
        assert!((p2_closed_form(&sc(0.0, 0.05)) - p1_closed_form(&sc(0.0, 0.05))).abs() < 1e-15);
        let mut prev = 1.0;
        for rho in [0.001, 0.005, 0.01, 0.05, 0.2] {
            let v = p2_closed_form(&sc(0.6, rho));
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn recovery_bound_examples() {
        let mut r = rng(3);
        let mut x = ComplexGrid::zeros(8);
        for i in [3, 17, 40] {
            x.data_mut()[i] = complex_normal(&mut r, 1.0);
        }
        let z = spectral_mask(&construct_pba(8).unwrap());
        let t = recovery_bound_ingredients(&x, &z, 3, 0.1, 1.0, 1.0);
        assert_eq!(t.tail_l1, 0.0);
        assert_eq!(t.approx_term, 0.0);
        assert!((t.z_max / t.z_min - 1.0).abs() < 1e-9);
        assert!((t.noise_term - 0.8).abs() < 1e-9);

        for seed in 0..20 {
            let mut r = rng(100 + seed);
            let x = ComplexGrid::from_fn(8, |_, _| complex_normal(&mut r, 1.0));
            let zr = spectral_mask(&random_base(8, 2, &mut r));
            let s = x.hadamard(&zr).unwrap();
            for k in [1, 5, 20] {
                let t = recovery_bound_ingredients(&x, &zr, k, 0.0, 1.0, 1.0);
                assert!(l1_tail(&s, k) <= t.z_max * t.tail_l1 + 1e-9);
            }
        }
    }

    #[test]
    fn phase_transition_small() {
        let cells = phase_transition_mc(8, &[1.0, 0.3], &[-6.0, -1.0], 30, 5).unwrap();
        assert_eq!(cells.len(), 4);
        for c in &cells[..2] {
            assert_eq!(c.successes, c.trials);
            assert_eq!(c.bound, 1.0);
        }
        for c in &cells {
            assert!(c.empirical() + 3.0 * c.stderr() >= c.bound - 1e-12);
        }
        let again = phase_transition_mc(8, &[1.0, 0.3], &[-6.0, -1.0], 30, 5).unwrap();
        assert_eq!(cells, again);
    }
}
